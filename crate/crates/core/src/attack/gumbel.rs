use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Uniform draws are kept this far from 0 and 1 so the noise stays finite.
pub const UNIFORM_CLAMP: f64 = 1e-12;
/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-20;

/// Relaxation settings: temperature, inserted piece length and the weight of
/// the null-symbol regularizer in the generator loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelConfig {
    pub temp: f64,
    pub insert_len: usize,
    pub gamma: f64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            temp: 10.0,
            insert_len: 1,
            gamma: 0.01,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temp > 0.0 && self.temp.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temp)));
        }
        if self.insert_len == 0 {
            return Err(Error::Config("insert length must be at least 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `z_i = -ln(-ln u_i)` with `u_i` uniform on (0, 1).
pub fn sample_gumbel_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| gumbel_from_uniform(rng.gen::<f64>())).collect()
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

fn check_temp(temp: f64) -> Result<()> {
    if temp > 0.0 {
        Ok(())
    } else {
        Err(Error::domain("gumbel_softmax", format!("temperature must be positive, got {temp}")))
    }
}

/// `softmax((ln pi + z) / temp)` with max subtraction.
pub fn gumbel_softmax(pi: &[f64], z: &[f64], temp: f64) -> Result<Vec<f64>> {
    check_temp(temp)?;
    if pi.len() != z.len() || pi.is_empty() {
        return Err(Error::shape("gumbel_softmax", format!("pi [{}] and noise [{}]", pi.len(), z.len())));
    }
    let y: Vec<f64> = pi
        .iter()
        .zip(z)
        .map(|(&p, &zi)| (p.max(PROB_FLOOR).ln() + zi) / temp)
        .collect();
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

/// In-graph relaxation from log-probabilities. Flooring `ln pi` at
/// `ln PROB_FLOOR` is the same as flooring `pi`.
pub fn gumbel_softmax_graph(g: &mut Graph, log_pi: Var, z: &[f64], temp: f64) -> Result<Var> {
    check_temp(temp)?;
    let floored = g.clamp(log_pi, PROB_FLOOR.ln(), 0.0);
    let noise = g.constant(Tensor::vector(z.to_vec()));
    let perturbed = g.add(floored, noise)?;
    let scaled = g.scale(perturbed, 1.0 / temp);
    g.softmax(scaled)
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Hard categorical sample `argmax(ln pi + z)`, using the same noise as the
/// relaxed sample so both agree.
pub fn sample_api(pi: &[f64], z: &[f64]) -> usize {
    let perturbed: Vec<f64> = pi.iter().zip(z).map(|(&p, &zi)| p.max(PROB_FLOOR).ln() + zi).collect();
    argmax(&perturbed)
}
