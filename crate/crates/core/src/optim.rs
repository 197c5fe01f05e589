//! Adam with bias correction, plus global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// An element whose gradient is exactly zero keeps its value; its
    /// moments still decay.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[Option<Tensor>],
    ) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Contract("adam: parameter set changed".into()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("adam: missing gradient for parameter {i}")))?;
            if g.shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i].as_ref().expect("checked above").data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                let gk = g[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                if gk == 0.0 {
                    continue;
                }
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut adam = AdamState::new(0.1);
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        adam.step([&mut p], &[Some(Tensor::vector(vec![1.0, 1.0]))])
            .unwrap();
        let after_first = p.clone();
        let m_before = adam.first_moments()[0].clone();
        adam.step([&mut p], &[Some(Tensor::zeros(&[2]))]).unwrap();
        assert_eq!(p, after_first);
        for (a, b) in adam.first_moments()[0].data().iter().zip(m_before.data()) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut adam = AdamState::new(0.1);
        let mut p = Tensor::scalar(0.0);
        adam.step([&mut p], &[Some(Tensor::scalar(1.0))]).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut adam = AdamState::new(0.1);
        let mut x = Tensor::scalar(1.0);
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * x.item());
            adam.step([&mut x], &[Some(g)]).unwrap();
        }
        assert!(x.item().abs() < 0.05, "x = {}", x.item());
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut adam = AdamState::new(0.1);
        let mut p = Tensor::scalar(0.0);
        let err = adam.step([&mut p], &[None]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        let after: f64 = g.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
