//! The inversion (AAI) and phoneme-to-articulatory (PTA) networks.

pub mod config;
pub mod nets;
pub mod types;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, Task};
pub use nets::{length_regulator, round_durations, AaiNet, DurationPredictor, PtaNet, PtaOutput};
pub use types::{
    pad_rows, unpad_rows, AcousticFeatures, ArticulatoryTrajectory, DurationVector,
    PhonemeSequence, ARTICULATOR_NAMES, MAX_FRAMES, MAX_PHONEMES, N_ARTICULATORS, N_FEATURES,
    PAD_ID,
};

use crate::error::{Error, Result};
use crate::nncore::{Checkpoint, Graph, ParamStore, Scalar, Var};
use nets::{to_array, to_tensor};

#[derive(Clone, Debug)]
pub enum Net {
    Aai(AaiNet),
    Pta(PtaNet),
}

/// A network together with its configuration and parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub net: Net,
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model; `seed` drives weight init.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = match config.task {
            Task::Aai => Net::Aai(AaiNet::new(&mut params, &config, &mut rng)?),
            Task::Pta => Net::Pta(PtaNet::new(&mut params, &config, &mut rng)?),
        };
        Ok(Self {
            config,
            params,
            net,
        })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    fn aai(&self) -> Result<&AaiNet> {
        match &self.net {
            Net::Aai(n) => Ok(n),
            Net::Pta(_) => Err(Error::config(
                "this is a PTA model; an AAI model is required",
            )),
        }
    }

    fn pta(&self) -> Result<&PtaNet> {
        match &self.net {
            Net::Pta(n) => Ok(n),
            Net::Aai(_) => Err(Error::config(
                "this is an AAI model; a PTA model is required",
            )),
        }
    }

    /// `x` is `[n, 13]`; returns `[n, 12]`.
    pub fn aai_forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.aai()?.forward(g, &self.params, &self.config, x)
    }

    /// Teacher-forced PTA pass.
    pub fn pta_forward_train(
        &self,
        g: &mut Graph<T>,
        ids: &[usize],
        gt_durations: &[usize],
    ) -> Result<PtaOutput> {
        self.pta()?
            .forward_train(g, &self.params, &self.config, ids, gt_durations)
    }

    /// Phoneme features `[m, width]` and raw durations `[m, 1]`.
    pub fn pta_encode(&self, g: &mut Graph<T>, ids: &[usize]) -> Result<(Var, Var)> {
        self.pta()?.encode(g, &self.params, &self.config, ids)
    }

    pub fn infer_aai(&self, x: &AcousticFeatures) -> Result<ArticulatoryTrajectory> {
        let mut g = Graph::eval();
        let xv = g.constant(to_tensor(x.frames())?);
        let y = self.aai_forward(&mut g, xv)?;
        ArticulatoryTrajectory::new(to_array(g.value(y)))
    }

    /// Predicts durations, rounds them and decodes.
    pub fn infer_pta(
        &self,
        p: &PhonemeSequence,
    ) -> Result<(ArticulatoryTrajectory, DurationVector)> {
        let net = self.pta()?;
        let mut g = Graph::eval();
        let (h, d) = net.encode(&mut g, &self.params, &self.config, p.ids())?;
        let raw: Vec<f64> = g.value(d).data().iter().map(|v| v.to_f64_lossy()).collect();
        let durations = round_durations(&raw, MAX_FRAMES)?;
        let y = net.decode(&mut g, &self.params, &self.config, h, &durations)?;
        Ok((
            ArticulatoryTrajectory::new(to_array(g.value(y)))?,
            DurationVector(durations),
        ))
    }

    /// Raw (unrounded) duration predictions.
    pub fn predict_durations(&self, p: &PhonemeSequence) -> Result<Vec<f64>> {
        let mut g = Graph::eval();
        let (_, d) = self.pta_encode(&mut g, p.ids())?;
        Ok(g.value(d).data().iter().map(|v| v.to_f64_lossy()).collect())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(self.config.to_pairs(), &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_pairs(&ck.config)
            .map_err(|e| Error::Checkpoint(format!("bad config echo: {e}")))?;
        let mut model = Self::new(config, 0)?;
        ck.load_into(&mut model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::PeMode;
    use ndarray::Array2;

    fn small(task: Task, mode: PeMode) -> ModelConfig {
        let mut c = ModelConfig::new(task);
        c.d_model = 8;
        c.enc_layers = 1;
        c.dec_layers = 1;
        c.dur_channels = 8;
        c.vocab_size = 5;
        c.pe_mode = mode;
        c.pe_dim = Some(4);
        c.clip_k = 2;
        c
    }

    #[test]
    fn aai_shapes_for_every_mode() {
        for mode in PeMode::ALL {
            let m = Model::<f32>::new(small(Task::Aai, mode), 3).unwrap();
            for n in [1, 5] {
                let x = AcousticFeatures::new(Array2::from_elem((n, 13), 0.1)).unwrap();
                let y = m.infer_aai(&x).unwrap();
                assert_eq!(y.frames().dim(), (n, 12));
            }
        }
    }

    #[test]
    fn pta_train_length_is_duration_sum() {
        for mode in PeMode::ALL {
            let m = Model::<f32>::new(small(Task::Pta, mode), 3).unwrap();
            let mut g = Graph::eval();
            let out = m.pta_forward_train(&mut g, &[1, 2, 5], &[2, 0, 4]).unwrap();
            assert_eq!(g.value(out.trajectory).shape(), &[6, 12]);
            assert_eq!(g.value(out.durations).shape(), &[3, 1]);
        }
    }

    #[test]
    fn pta_inference_is_nonempty() {
        let m = Model::<f32>::new(small(Task::Pta, PeMode::Relative), 1).unwrap();
        let p = PhonemeSequence::new(vec![1, 4, 2], 5).unwrap();
        let (y, d) = m.infer_pta(&p).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.as_slice().iter().all(|&v| v >= 1));
        assert_eq!(y.true_len(), d.total());
    }

    #[test]
    fn wrong_task_is_an_error() {
        let m = Model::<f32>::new(small(Task::Aai, PeMode::None), 1).unwrap();
        let p = PhonemeSequence::new(vec![1], 5).unwrap();
        assert!(m.infer_pta(&p).is_err());
    }

    #[test]
    fn checkpoint_reproduces_outputs_bitwise() {
        let m = Model::<f32>::new(small(Task::Aai, PeMode::Concatenative), 9).unwrap();
        let back = Model::<f32>::from_checkpoint(
            &Checkpoint::from_bytes(&m.checkpoint().to_bytes()).unwrap(),
        )
        .unwrap();
        let x = AcousticFeatures::new(Array2::from_shape_fn((7, 13), |(i, j)| {
            (i * j) as f64 * 0.1 - 0.3
        }))
        .unwrap();
        assert_eq!(m.infer_aai(&x).unwrap(), back.infer_aai(&x).unwrap());
    }
}
