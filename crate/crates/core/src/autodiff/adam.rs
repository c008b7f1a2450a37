use std::collections::BTreeMap;

use super::{ParamGrads, ParameterStore, Tensor};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moments are created lazily (as zeros) the
/// first time a parameter is updated.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            t: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first.get(name).map(Vec::as_slice)
    }

    /// One update of every parameter in `params`. The gradient set must be
    /// keyed exactly like the store.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &ParamGrads) -> Result<()> {
        for name in params.names() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
            let p = params.get(name)?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param `{name}` {:?} and gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if let Some((name, _)) = grads.iter().find(|(n, _)| !params.contains(n)) {
            return Err(Error::UnexpectedGradient(name.to_string()));
        }

        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g: &Tensor = grads.get(name).expect("checked above");
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; p.numel()]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; p.numel()]);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::scalar(v));
        s
    }

    fn grads(v: f64) -> ParamGrads {
        let mut g = ParamGrads::new();
        g.insert("w", Tensor::scalar(v));
        g
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = store(1.25);
        let mut adam = Adam::new(0.1);
        adam.step(&mut p, &grads(0.0)).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.25);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 at t=1, so the step is lr / (1 + eps).
        let mut p = store(0.0);
        let mut adam = Adam::new(0.1);
        adam.step(&mut p, &grads(1.0)).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = store(0.0);
        let mut adam = Adam::new(0.1);
        let err = adam.step(&mut p, &ParamGrads::new()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "w"));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut p = store(0.3);
            let mut adam = Adam::new(0.01);
            adam.step(&mut p, &grads(0.7)).unwrap();
            adam.step(&mut p, &grads(-0.2)).unwrap();
            p.get("w").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
