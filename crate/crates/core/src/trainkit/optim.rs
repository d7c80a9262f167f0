//! Adam, gradient clipping and the plateau learning-rate schedule.

use crate::error::{Error, Result};
use crate::nncore::{ParamStore, Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::with_betas(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if !store.grads_finite() {
            return Err(Error::Train("non-finite gradient, aborting epoch".into()));
        }
        if self.m.len() != store.len() {
            return Err(Error::Train(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one, eps) = (T::one(), T::from_f64_lossy(self.eps));
        let step_size = T::from_f64_lossy(lr / c1);
        let c2_sqrt = T::from_f64_lossy(c2.sqrt());
        for (k, p) in store.iter_mut().enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let grad = p.grad.data();
            for (((x, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * *g;
                *vi = b2 * *vi + (one - b2) * *g * *g;
                let update = step_size * *mi / ((*vi).sqrt() / c2_sqrt + eps);
                if update != T::zero() {
                    *x = *x - update;
                }
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm.is_finite() {
        let s = T::from_f64_lossy(max_norm / norm);
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = *g * s);
        }
    }
    norm
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// gone `patience` consecutive epochs without a new minimum.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Result<Self> {
        if patience == 0 || !(factor > 0.0 && factor < 1.0) || !(lr >= 0.0) {
            return Err(Error::config(format!(
                "scheduler needs patience >= 1 and factor in (0, 1), got {patience} and {factor}"
            )));
        }
        Ok(Self {
            patience,
            factor,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's loss; returns true when the rate was reduced.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (i, &v) in vals.iter().enumerate() {
            s.add(format!("p{i}"), Tensor::new(vec![1], vec![v]).unwrap())
                .unwrap();
        }
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[0.5, -2.0]);
        s.iter_mut().next().unwrap().grad = Tensor::new(vec![1], vec![3.7]).unwrap();
        s.iter_mut().nth(1).unwrap().grad = Tensor::new(vec![1], vec![-0.5]).unwrap();
        let mut adam = Adam::new(&s);
        adam.step(&mut s, 1e-3).unwrap();
        let v: Vec<f64> = s.iter().map(|p| p.value.data()[0]).collect();
        assert!((v[0] - (0.5 - 1e-3)).abs() < 1e-9);
        assert!((v[1] - (-2.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_and_zero_lr_leave_values() {
        let mut s = store(&[0.25, -0.0]);
        let mut adam = Adam::new(&s);
        adam.step(&mut s, 1e-2).unwrap();
        assert_eq!(
            s.iter()
                .map(|p| p.value.data()[0].to_bits())
                .collect::<Vec<_>>(),
            store(&[0.25, -0.0])
                .iter()
                .map(|p| p.value.data()[0].to_bits())
                .collect::<Vec<_>>()
        );
        s.iter_mut()
            .for_each(|p| p.grad = Tensor::new(vec![1], vec![1.5]).unwrap());
        adam.step(&mut s, 0.0).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.25);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = store(&[1.0]);
        s.iter_mut()
            .for_each(|p| p.grad = Tensor::new(vec![1], vec![f64::NAN]).unwrap());
        assert!(Adam::new(&s).step(&mut s, 1e-3).is_err());
    }

    #[test]
    fn clipping() {
        let mut s = store(&[0.0, 0.0]);
        s.iter_mut().next().unwrap().grad = Tensor::new(vec![1], vec![6.0]).unwrap();
        s.iter_mut().nth(1).unwrap().grad = Tensor::new(vec![1], vec![8.0]).unwrap();
        assert_eq!(clip_grad_norm(&mut s, 5.0), 10.0);
        assert!((s.grad_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_schedule() {
        let mut p = PlateauScheduler::new(1.0, 7, 0.5).unwrap();
        let events: Vec<bool> = (0..8).map(|_| p.observe(1.0)).collect();
        assert_eq!(events.iter().filter(|&&e| e).count(), 1);
        assert!(events[7]);
        assert_eq!(p.lr(), 0.5);

        let mut p = PlateauScheduler::new(1.0, 7, 0.5).unwrap();
        for i in 0..30 {
            assert!(!p.observe(10.0 - i as f64 * 0.1));
        }
    }
}
