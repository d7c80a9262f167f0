use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::loss::{eval_loss, sentence_loss, BatchSize};
use super::optim::{clip_grad_norm, Adam, PlateauScheduler};
use crate::datakit::Example;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::nncore::graph::child_seed;
use crate::nncore::{Graph, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr";

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut out = String::new();
    writeln!(out, "{LOG_HEADER}").unwrap();
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr).unwrap();
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Runs one epoch of minibatch Adam; returns the mean batch loss.
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    examples: &[Example],
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let mut losses = Vec::new();
    for chunk in order.chunks(cfg.batch_size) {
        let batch = BatchSize::of(chunk.iter().map(|&i| &examples[i]));
        model.params.zero_grad();
        let mut batch_loss = 0.0;
        for &i in chunk {
            let mut g = Graph::train(child_seed(rng));
            let l = sentence_loss(model, &mut g, &examples[i], batch, cfg)?;
            batch_loss += g.value(l.total).data()[0].to_f64_lossy();
            g.backward(l.total)
                .map_err(|e| Error::Train(format!("sentence {}: {e}", examples[i].id)))?;
            g.accumulate_param_grads(&mut model.params)?;
        }
        if !model.params.grads_finite() {
            return Err(Error::Train("non-finite gradient, aborting epoch".into()));
        }
        clip_grad_norm(&mut model.params, cfg.clip_norm);
        adam.step(&mut model.params, lr)?;
        losses.push(batch_loss);
    }
    Ok(crate::evalkit::mean(&losses))
}

/// Trains `model` and leaves it holding the parameters with the lowest
/// validation loss. The untrained parameters (epoch 0) are a candidate too.
pub fn fit<T: Scalar>(
    model: &mut Model<T>,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Train(format!(
            "need training and validation sentences, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.scheduler_patience, cfg.scheduler_factor)?;

    let val0 = eval_loss(model, val, cfg)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: eval_loss(model, train, cfg)?,
        val_loss: val0,
        lr: cfg.lr,
    }];
    let mut best: (usize, f64, ParamStore<T>) = (0, val0, model.params.clone());
    sched.observe(val0);
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        let train_loss = train_epoch(model, &mut adam, train, cfg, lr, &mut rng)?;
        let val_loss = eval_loss(model, val, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Train(format!(
                "validation loss became {val_loss} at epoch {epoch}"
            )));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e}");
        if val_loss < best.1 {
            best = (epoch, val_loss, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if sched.observe(val_loss) {
            log::info!("learning rate reduced to {:e}", sched.lr());
        }
        if since_best >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    model.params = best.2;
    Ok(TrainOutcome {
        best_epoch: best.0,
        best_val_loss: best.1,
        log,
        stopped_early,
    })
}
