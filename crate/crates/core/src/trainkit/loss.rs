//! Training losses.
//!
//! Sentences are processed one graph at a time at their true length. A
//! batch loss equals the masked MSE of the zero-padded batch: the squared
//! error summed over real frames (and real phonemes for durations) divided
//! by the number of real entries. Each sentence therefore contributes its
//! own MSE weighted by its share of the batch's frames.

use crate::datakit::Example;
use crate::error::Result;
use crate::models::nets::to_tensor;
use crate::models::{Model, Task};
use crate::nncore::{Graph, Scalar, Tensor, Var};

use super::config::TrainConfig;

/// Frame and phoneme totals of a batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchSize {
    pub frames: usize,
    pub phonemes: usize,
}

impl BatchSize {
    pub fn of<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut s = Self {
            frames: 0,
            phonemes: 0,
        };
        for e in examples {
            s.frames += e.frames();
            s.phonemes += e.phonemes.len();
        }
        s
    }
}

/// Scalar losses of one sentence graph, already weighted for the batch.
pub struct SentenceLoss {
    pub total: Var,
    pub trajectory: Var,
    pub duration: Option<Var>,
}

/// Builds the weighted loss of `ex` inside `g`.
pub fn sentence_loss<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    ex: &Example,
    batch: BatchSize,
    cfg: &TrainConfig,
) -> Result<SentenceLoss> {
    let target = to_tensor::<T>(&ex.target)?;
    let full = vec![true; ex.frames()];
    let frame_share = T::from_f64_lossy(cfg.traj_weight * ex.frames() as f64 / batch.frames as f64);
    match model.task() {
        Task::Aai => {
            let x = g.constant(to_tensor(&ex.acoustics)?);
            let y = model.aai_forward(g, x)?;
            let mse = g.mse(y, &target, &full)?;
            let total = g.scale(mse, frame_share);
            Ok(SentenceLoss {
                total,
                trajectory: mse,
                duration: None,
            })
        }
        Task::Pta => {
            let out = model.pta_forward_train(g, &ex.phonemes, &ex.durations)?;
            let mse = g.mse(out.trajectory, &target, &full)?;
            let dur_target = Tensor::new(
                vec![ex.durations.len(), 1],
                ex.durations
                    .iter()
                    .map(|&d| T::from_f64_lossy(d as f64))
                    .collect(),
            )?;
            let dmse = g.mse(out.durations, &dur_target, &vec![true; ex.durations.len()])?;
            let phone_share = T::from_f64_lossy(
                cfg.dur_weight * ex.durations.len() as f64 / batch.phonemes as f64,
            );
            let a = g.scale(mse, frame_share);
            let b = g.scale(dmse, phone_share);
            let total = g.add(a, b)?;
            Ok(SentenceLoss {
                total,
                trajectory: mse,
                duration: Some(dmse),
            })
        }
    }
}

/// Batch loss of `examples` with dropout disabled.
pub fn eval_loss<T: Scalar>(
    model: &Model<T>,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<f64> {
    let batch = BatchSize::of(examples);
    let mut total = 0.0;
    for ex in examples {
        let mut g = Graph::eval();
        let l = sentence_loss(model, &mut g, ex, batch, cfg)?;
        total += g.value(l.total).data()[0].to_f64_lossy();
    }
    Ok(total)
}
