//! Recurrent sequence classifiers: a (bi)directional LSTM encoder, one of
//! three pooling heads, and a two-way softmax output.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::lstm::{run_lstm, LstmParams};
use super::SequenceInput;
use crate::autodiff::{Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    LastState,
    Average,
    Attention,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Bidirectional => "bidirectional",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "bidirectional" => Ok(Direction::Bidirectional),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::LastState => "last-state",
            Head::Average => "average",
            Head::Attention => "attention",
        })
    }
}

impl FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last-state" => Ok(Head::LastState),
            "average" => Ok(Head::Average),
            "attention" => Ok(Head::Attention),
            other => Err(Error::Config(format!("unknown head `{other}`"))),
        }
    }
}

/// The six named victim architectures.
pub const VICTIM_NAMES: [&str; 6] = [
    "LSTM",
    "BiLSTM",
    "LSTM-Average",
    "BiLSTM-Average",
    "LSTM-Attention",
    "BiLSTM-Attention",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VictimConfig {
    pub direction: Direction,
    pub head: Head,
    pub hidden: usize,
    pub attn_hidden: usize,
    pub input_dim: usize,
}

impl VictimConfig {
    pub fn new(direction: Direction, head: Head, input_dim: usize) -> Self {
        VictimConfig {
            direction,
            head,
            hidden: 128,
            attn_hidden: 128,
            input_dim,
        }
    }

    /// Parses one of [`VICTIM_NAMES`].
    pub fn from_name(name: &str, input_dim: usize) -> Result<Self> {
        let (direction, head) = match name {
            "LSTM" => (Direction::Forward, Head::LastState),
            "BiLSTM" => (Direction::Bidirectional, Head::LastState),
            "LSTM-Average" => (Direction::Forward, Head::Average),
            "BiLSTM-Average" => (Direction::Bidirectional, Head::Average),
            "LSTM-Attention" => (Direction::Forward, Head::Attention),
            "BiLSTM-Attention" => (Direction::Bidirectional, Head::Attention),
            other => {
                return Err(Error::Config(format!(
                    "unknown victim `{other}`; valid names: {}",
                    VICTIM_NAMES.join(", ")
                )))
            }
        };
        Ok(VictimConfig::new(direction, head, input_dim))
    }

    pub fn name(&self) -> &'static str {
        match (self.direction, self.head) {
            (Direction::Forward, Head::LastState) => "LSTM",
            (Direction::Bidirectional, Head::LastState) => "BiLSTM",
            (Direction::Forward, Head::Average) => "LSTM-Average",
            (Direction::Bidirectional, Head::Average) => "BiLSTM-Average",
            (Direction::Forward, Head::Attention) => "LSTM-Attention",
            (Direction::Bidirectional, Head::Attention) => "BiLSTM-Attention",
        }
    }

    pub fn with_hidden(mut self, hidden: usize, attn_hidden: usize) -> Self {
        self.hidden = hidden;
        self.attn_hidden = attn_hidden;
        self
    }

    /// Width of the pooled representation.
    pub fn repr_dim(&self) -> usize {
        match self.direction {
            Direction::Forward => self.hidden,
            Direction::Bidirectional => 2 * self.hidden,
        }
    }
}

/// Graph nodes produced by one classifier forward pass.
#[derive(Clone, Debug)]
pub struct ClassifierOutput {
    pub states: Vec<Var>,
    /// Attention weights over time steps (attention head only).
    pub attention: Option<Var>,
    pub representation: Var,
    pub logits: Var,
    /// `[p_benign, p_malware]`.
    pub probs: Var,
}

/// A [`VictimConfig`] whose parameters live under a name prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceClassifier {
    pub config: VictimConfig,
    pub prefix: String,
}

/// Concatenated bidirectional states: `states[t] = [fwd_t ; bwd_t]`, where
/// `bwd_t` has consumed `x_T .. x_t`. `last` is `[fwd_T ; bwd_1]`, the final
/// state of each direction.
pub struct RnnStates {
    pub states: Vec<Var>,
    pub last: Var,
}

impl SequenceClassifier {
    pub fn new(config: VictimConfig, prefix: impl Into<String>) -> Self {
        SequenceClassifier {
            config,
            prefix: prefix.into(),
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn forward_lstm(&self) -> LstmParams {
        LstmParams::new(self.name("fwd"), self.config.input_dim, self.config.hidden)
    }

    pub fn backward_lstm(&self) -> Option<LstmParams> {
        (self.config.direction == Direction::Bidirectional)
            .then(|| LstmParams::new(self.name("bwd"), self.config.input_dim, self.config.hidden))
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterStore {
        let mut store = ParameterStore::new();
        self.forward_lstm().init(&mut store, rng);
        if let Some(b) = self.backward_lstm() {
            b.init(&mut store, rng);
        }
        let d = self.config.repr_dim();
        let scale = 1.0 / (d as f64).sqrt();
        if self.config.head == Head::Attention {
            let a = self.config.attn_hidden;
            store.insert_uniform(self.name("attn.w1"), &[d, a], scale, rng);
            store.insert(self.name("attn.b1"), Tensor::zeros(&[a]));
            store.insert_uniform(self.name("attn.w2"), &[a], 1.0 / (a as f64).sqrt(), rng);
        }
        store.insert_uniform(self.name("out.w"), &[2, d], scale, rng);
        store.insert(self.name("out.b"), Tensor::zeros(&[2]));
        store
    }

    /// Same layout as [`init`](Self::init) with every entry zero.
    pub fn init_zeros(&self) -> ParameterStore {
        let mut store = self.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        store.zero_all();
        store
    }

    pub fn run_rnn(&self, g: &mut Graph, store: &ParameterStore, rows: &[Var]) -> Result<RnnStates> {
        if rows.is_empty() {
            return Err(Error::EmptySequence);
        }
        for &r in rows {
            if g.value(r).shape() != [self.config.input_dim] {
                return Err(Error::shape(
                    "sequence classifier",
                    format!("input row {:?}, expected [{}]", g.value(r).shape(), self.config.input_dim),
                ));
            }
        }
        let fwd = self.forward_lstm().bind(g, store)?;
        let forward = run_lstm(g, &fwd, rows)?;
        let Some(bwd_params) = self.backward_lstm() else {
            let last = *forward.last().expect("non-empty");
            return Ok(RnnStates {
                states: forward,
                last,
            });
        };
        let bwd = bwd_params.bind(g, store)?;
        let reversed: Vec<Var> = rows.iter().rev().copied().collect();
        let mut backward = run_lstm(g, &bwd, &reversed)?;
        backward.reverse();
        let states = forward
            .iter()
            .zip(&backward)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        let last = g.concat(&[*forward.last().unwrap(), backward[0]])?;
        Ok(RnnStates { states, last })
    }

    /// Pools the states into a single representation vector. Returns the
    /// representation and, for the attention head, the weight vector.
    pub fn pool(&self, g: &mut Graph, store: &ParameterStore, rnn: &RnnStates) -> Result<(Var, Option<Var>)> {
        let t = rnn.states.len();
        let d = self.config.repr_dim();
        match self.config.head {
            Head::LastState => Ok((rnn.last, None)),
            Head::Average => {
                let stacked = g.stack(&rnn.states)?;
                let weights = g.constant(Tensor::filled(&[1, t], 1.0 / t as f64));
                let pooled = g.matmul(weights, stacked)?;
                Ok((g.reshape(pooled, &[d])?, None))
            }
            Head::Attention => {
                let stacked = g.stack(&rnn.states)?;
                let alpha = self.attention_weights(g, store, stacked)?;
                let row = g.reshape(alpha, &[1, t])?;
                let pooled = g.matmul(row, stacked)?;
                Ok((g.reshape(pooled, &[d])?, Some(alpha)))
            }
        }
    }

    /// `alpha_t = softmax_t(A(h_t))` with `A(h) = w2 . tanh(W1^T h + b1)`.
    fn attention_weights(&self, g: &mut Graph, store: &ParameterStore, stacked: Var) -> Result<Var> {
        let w1 = g.param(store, &self.name("attn.w1"))?;
        let b1 = g.param(store, &self.name("attn.b1"))?;
        let w2 = g.param(store, &self.name("attn.w2"))?;
        let hidden = g.matmul(stacked, w1)?;
        let hidden = g.add_row(hidden, b1)?;
        let hidden = g.tanh(hidden);
        let scores = g.matmul(hidden, w2)?;
        g.softmax(scores)
    }

    /// Affine map to two logits.
    pub fn logits(&self, g: &mut Graph, store: &ParameterStore, repr: Var) -> Result<Var> {
        let w = g.param(store, &self.name("out.w"))?;
        let b = g.param(store, &self.name("out.b"))?;
        let z = g.matmul(w, repr)?;
        g.add(z, b)
    }

    pub fn forward_rows(&self, g: &mut Graph, store: &ParameterStore, rows: &[Var]) -> Result<ClassifierOutput> {
        let rnn = self.run_rnn(g, store, rows)?;
        let (representation, attention) = self.pool(g, store, &rnn)?;
        let logits = self.logits(g, store, representation)?;
        let probs = g.softmax(logits)?;
        Ok(ClassifierOutput {
            states: rnn.states,
            attention,
            representation,
            logits,
            probs,
        })
    }

    /// Malware probability of one sequence.
    pub fn p_malware<S: SequenceInput + ?Sized>(&self, store: &ParameterStore, seq: &S) -> Result<f64> {
        let mut g = Graph::new();
        let rows: Vec<Var> = seq
            .input_rows(self.config.input_dim)?
            .into_iter()
            .map(|t| g.constant(t))
            .collect();
        let out = self.forward_rows(&mut g, store, &rows)?;
        Ok(g.value(out.probs).data()[1])
    }

    /// Malware probabilities for a padded batch. Padded steps are masked out,
    /// so each entry equals the unbatched result for that sequence.
    pub fn p_malware_batch(&self, store: &ParameterStore, batch: &PaddedBatch) -> Result<Vec<f64>> {
        if batch.width != self.config.input_dim {
            return Err(Error::shape(
                "sequence classifier",
                format!("batch width {}, expected {}", batch.width, self.config.input_dim),
            ));
        }
        (0..batch.len())
            .into_par_iter()
            .map(|b| {
                let mut g = Graph::new();
                let rows: Vec<Var> = batch.valid_rows(b).map(|r| g.constant(r)).collect();
                let out = self.forward_rows(&mut g, store, &rows)?;
                Ok(g.value(out.probs).data()[1])
            })
            .collect()
    }

    /// Cross-entropy `-log p(label)` computed from the logits.
    pub fn cross_entropy(&self, g: &mut Graph, out: &ClassifierOutput, label: u8) -> Result<Var> {
        let logp = g.log_softmax(out.logits)?;
        let picked = g.slice(logp, label as usize, 1)?;
        Ok(g.scale(picked, -1.0))
    }
}

/// Variable-length sequences padded to a common length, with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    width: usize,
    max_len: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl PaddedBatch {
    pub fn from_sequences<S: SequenceInput>(seqs: &[S], width: usize) -> Result<Self> {
        let rows: Vec<Vec<Tensor>> = seqs.iter().map(|s| s.input_rows(width)).collect::<Result<_>>()?;
        if rows.iter().any(Vec::is_empty) {
            return Err(Error::EmptySequence);
        }
        let max_len = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut data = vec![0.0; seqs.len() * max_len * width];
        let mut mask = vec![false; seqs.len() * max_len];
        for (b, seq_rows) in rows.iter().enumerate() {
            for (t, r) in seq_rows.iter().enumerate() {
                let at = (b * max_len + t) * width;
                data[at..at + width].copy_from_slice(r.data());
                mask[b * max_len + t] = true;
            }
        }
        Ok(PaddedBatch {
            width,
            max_len,
            data,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.mask.len().checked_div(self.max_len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn is_valid(&self, b: usize, t: usize) -> bool {
        self.mask[b * self.max_len + t]
    }

    pub fn valid_rows(&self, b: usize) -> impl Iterator<Item = Tensor> + '_ {
        (0..self.max_len).filter(move |&t| self.is_valid(b, t)).map(move |t| {
            let at = (b * self.max_len + t) * self.width;
            Tensor::vector(self.data[at..at + self.width].to_vec())
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::seqnets::OneHotSequence;

    fn rows(g: &mut Graph, xs: &[Vec<f64>]) -> Vec<Var> {
        xs.iter().map(|x| g.constant(Tensor::vector(x.clone()))).collect()
    }

    #[test]
    fn names_roundtrip() {
        for name in VICTIM_NAMES {
            assert_eq!(VictimConfig::from_name(name, 4).unwrap().name(), name);
        }
        let err = VictimConfig::from_name("GRU", 4).unwrap_err().to_string();
        assert!(err.contains("BiLSTM-Attention"));
    }

    #[test]
    fn single_step_heads_agree() {
        let x = vec![vec![0.3, -0.2, 1.0]];
        for dir in [Direction::Forward, Direction::Bidirectional] {
            let mut reprs = Vec::new();
            for head in [Head::LastState, Head::Average, Head::Attention] {
                let c = SequenceClassifier::new(VictimConfig::new(dir, head, 3).with_hidden(4, 3), "v");
                // Same LSTM weights for all heads.
                let store = c.init(&mut ChaCha8Rng::seed_from_u64(9));
                let mut g = Graph::new();
                let r = rows(&mut g, &x);
                let out = c.forward_rows(&mut g, &store, &r).unwrap();
                reprs.push(g.value(out.representation).clone());
            }
            assert_eq!(reprs[0], reprs[1]);
            assert_eq!(reprs[0], reprs[2]);
        }
    }

    #[test]
    fn attention_with_constant_scorer_is_average() {
        let c_att = SequenceClassifier::new(
            VictimConfig::new(Direction::Forward, Head::Attention, 3).with_hidden(4, 3),
            "v",
        );
        let c_avg = SequenceClassifier::new(
            VictimConfig::new(Direction::Forward, Head::Average, 3).with_hidden(4, 3),
            "v",
        );
        let mut store = c_att.init(&mut ChaCha8Rng::seed_from_u64(1));
        store.get_mut("v.attn.w1").unwrap().data_mut().fill(0.0);
        store.get_mut("v.attn.w2").unwrap().data_mut().fill(0.0);
        let xs: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64 * 0.1, 1.0, -0.5]).collect();
        let mut g = Graph::new();
        let r = rows(&mut g, &xs);
        let att = c_att.forward_rows(&mut g, &store, &r).unwrap();
        let avg = c_avg.forward_rows(&mut g, &store, &r).unwrap();
        assert_eq!(g.value(att.representation), g.value(avg.representation));
        for &a in g.value(att.attention.unwrap()).data() {
            assert_eq!(a, 0.2);
        }
    }

    #[test]
    fn zero_weights_give_even_odds() {
        for name in VICTIM_NAMES {
            let c = SequenceClassifier::new(VictimConfig::from_name(name, 4).unwrap().with_hidden(3, 2), "v");
            let store = c.init_zeros();
            let seq = OneHotSequence::new(vec![0, 3, 1], 4).unwrap();
            assert_eq!(c.p_malware(&store, &seq).unwrap(), 0.5);
        }
    }

    #[test]
    fn wrong_input_width_rejected() {
        let c = SequenceClassifier::new(VictimConfig::from_name("LSTM", 4).unwrap().with_hidden(3, 2), "v");
        let store = c.init_zeros();
        let mut g = Graph::new();
        let r = rows(&mut g, &[vec![1.0, 0.0, 0.0]]);
        assert!(c.forward_rows(&mut g, &store, &r).is_err());
    }
}
