use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Optimization settings; keys of the same names are read from config files.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub traj_weight: f64,
    /// Weight of the duration loss relative to the trajectory loss.
    pub dur_weight: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            lr: 1e-4,
            scheduler_patience: 7,
            scheduler_factor: 0.5,
            max_epochs: 100,
            early_stop_patience: 20,
            seed: 0,
            traj_weight: 1.0,
            dur_weight: 1.0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("scheduler_patience", self.scheduler_patience),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{k} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(Error::config(format!(
                "scheduler_factor must lie in (0, 1), got {}",
                self.scheduler_factor
            )));
        }
        for (k, v) in [
            ("traj_weight", self.traj_weight),
            ("dur_weight", self.dur_weight),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{k} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig, seed: u64) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            lr: kv.get_or("lr", d.lr)?,
            scheduler_patience: kv.get_or("scheduler_patience", d.scheduler_patience)?,
            scheduler_factor: kv.get_or("scheduler_factor", d.scheduler_factor)?,
            max_epochs: kv.get_or("max_epochs", d.max_epochs)?,
            early_stop_patience: kv.get_or("early_stop_patience", d.early_stop_patience)?,
            seed,
            traj_weight: kv.get_or("traj_weight", d.traj_weight)?,
            dur_weight: kv.get_or("dur_weight", d.dur_weight)?,
            clip_norm: kv.get_or("clip_norm", d.clip_norm)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn reads_keys() {
        let kv = KvConfig::parse(Path::new("t"), "lr=0.001\nmax_epochs=3").unwrap();
        let c = TrainConfig::from_kv(&kv, 9).unwrap();
        assert_eq!((c.lr, c.max_epochs, c.seed, c.batch_size), (0.001, 3, 9, 4));
        kv.finish().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let kv = KvConfig::parse(Path::new("t"), "scheduler_factor=1.5").unwrap();
        assert!(TrainConfig::from_kv(&kv, 0).is_err());
        let kv = KvConfig::parse(Path::new("t"), "batch_size=0").unwrap();
        assert!(TrainConfig::from_kv(&kv, 0).is_err());
    }
}
