use rand::Rng;

use crate::autodiff::{Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};

/// Parameter layout of one LSTM layer stored under `prefix`:
///
/// * `{prefix}.wx`: `[4H, input]`
/// * `{prefix}.wh`: `[4H, H]`
/// * `{prefix}.b`: `[4H]`
///
/// Gate blocks along the `4H` axis are input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Graph handles of an [`LstmParams`] bound into one graph.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            prefix: prefix.into(),
            input_dim,
            hidden,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Uniform `±1/sqrt(H)` weights, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) {
        let h = self.hidden;
        let scale = 1.0 / (h as f64).sqrt();
        store.insert_uniform(self.name("wx"), &[4 * h, self.input_dim], scale, rng);
        store.insert_uniform(self.name("wh"), &[4 * h, h], scale, rng);
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].fill(1.0);
        store.insert(self.name("b"), Tensor::vector(b));
    }

    pub fn init_zeros(&self, store: &mut ParameterStore) {
        let h = self.hidden;
        store.insert(self.name("wx"), Tensor::zeros(&[4 * h, self.input_dim]));
        store.insert(self.name("wh"), Tensor::zeros(&[4 * h, h]));
        store.insert(self.name("b"), Tensor::zeros(&[4 * h]));
    }

    pub fn bind(&self, g: &mut Graph, store: &ParameterStore) -> Result<LstmVars> {
        let vars = LstmVars {
            wx: g.param(store, &self.name("wx"))?,
            wh: g.param(store, &self.name("wh"))?,
            b: g.param(store, &self.name("b"))?,
            hidden: self.hidden,
        };
        let expected = [
            (vars.wx, vec![4 * self.hidden, self.input_dim]),
            (vars.wh, vec![4 * self.hidden, self.hidden]),
            (vars.b, vec![4 * self.hidden]),
        ];
        for (v, shape) in expected {
            if g.value(v).shape() != shape.as_slice() {
                return Err(Error::shape(
                    "lstm",
                    format!("{} is {:?}, expected {shape:?}", self.prefix, g.value(v).shape()),
                ));
            }
        }
        Ok(vars)
    }
}

/// Zero vector of the LSTM's hidden size.
pub fn zero_state(g: &mut Graph, hidden: usize) -> Var {
    g.constant(Tensor::zeros(&[hidden]))
}

/// One LSTM update: returns `(h, c)`.
pub fn lstm_step(g: &mut Graph, p: &LstmVars, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let h = p.hidden;
    let from_x = g.matmul(p.wx, x)?;
    let from_h = g.matmul(p.wh, h_prev)?;
    let pre = g.add(from_x, from_h)?;
    let gates = g.add(pre, p.b)?;
    let cell = g.lstm_cell(gates, c_prev)?;
    let h_new = g.slice(cell, 0, h)?;
    let c = g.slice(cell, h, h)?;
    Ok((h_new, c))
}

/// Runs the LSTM over `rows` from a zero state, returning every hidden state.
pub fn run_lstm(g: &mut Graph, p: &LstmVars, rows: &[Var]) -> Result<Vec<Var>> {
    if rows.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut h = zero_state(g, p.hidden);
    let mut c = zero_state(g, p.hidden);
    let mut states = Vec::with_capacity(rows.len());
    for &x in rows {
        (h, c) = lstm_step(g, p, x, h, c)?;
        states.push(h);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{grad_check, DEFAULT_STEP};

    #[test]
    fn zero_weights_give_zero_state() {
        let p = LstmParams::new("l", 3, 4);
        let mut store = ParameterStore::new();
        p.init_zeros(&mut store);
        let mut g = Graph::new();
        let vars = p.bind(&mut g, &store).unwrap();
        let x = g.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let (h0, c0) = (zero_state(&mut g, 4), zero_state(&mut g, 4));
        let (h, c) = lstm_step(&mut g, &vars, x, h0, c0).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::new("l", 3, 5);
        let mut store = ParameterStore::new();
        p.init(&mut store, &mut rng);
        for t in store.iter_mut().map(|(_, t)| t) {
            for v in t.data_mut() {
                *v *= 8.0;
            }
        }
        let mut g = Graph::new();
        let vars = p.bind(&mut g, &store).unwrap();
        let rows: Vec<Var> = (0..10)
            .map(|k| g.constant(Tensor::vector(vec![k as f64, 1.0, -3.0])))
            .collect();
        for s in run_lstm(&mut g, &vars, &rows).unwrap() {
            assert!(g.value(s).data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = LstmParams::new("l", 3, 2);
        let mut store = ParameterStore::new();
        p.init_zeros(&mut store);
        let mut g = Graph::new();
        let vars = p.bind(&mut g, &store).unwrap();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let (h0, c0) = (zero_state(&mut g, 2), zero_state(&mut g, 2));
        assert!(lstm_step(&mut g, &vars, x, h0, c0).is_err());
        assert!(matches!(run_lstm(&mut g, &vars, &[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn five_steps_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LstmParams::new("l", 3, 4);
        let mut store = ParameterStore::new();
        p.init(&mut store, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let f = |g: &mut Graph, s: &ParameterStore| {
            let vars = p.bind(g, s)?;
            let rows: Vec<Var> = inputs.iter().map(|x| g.constant(Tensor::vector(x.clone()))).collect();
            let states = run_lstm(g, &vars, &rows)?;
            let last = *states.last().unwrap();
            let sq = g.mul(last, last)?;
            Ok(g.sum(sq))
        };
        let report = grad_check(f, &store, DEFAULT_STEP, 1e-4).unwrap();
        assert!(report.passed(), "max error {} at {:?}", report.max_error, report.worst);
    }
}
