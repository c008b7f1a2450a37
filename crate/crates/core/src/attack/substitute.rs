use rand::Rng;

use super::generator::SoftSequence;
use crate::autodiff::{Graph, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::seqnets::{
    ClassifierOutput, Direction, Head, OneHotSequence, SequenceClassifier, SequenceInput, Victim,
    VictimConfig, MALWARE_THRESHOLD,
};

pub const SUB_PREFIX: &str = "sub";
/// Probabilities entering either loss are clamped to `[P_CLAMP, 1 - P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-12;

/// Bidirectional LSTM with attention pooling over rows of width `M + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Substitute {
    pub classifier: SequenceClassifier,
    pub params: ParameterStore,
}

impl Substitute {
    pub fn config(vocab_size: usize, hidden: usize, attn_hidden: usize) -> VictimConfig {
        VictimConfig::new(Direction::Bidirectional, Head::Attention, vocab_size + 1).with_hidden(hidden, attn_hidden)
    }

    pub fn new<R: Rng + ?Sized>(vocab_size: usize, hidden: usize, attn_hidden: usize, rng: &mut R) -> Self {
        let classifier = SequenceClassifier::new(Self::config(vocab_size, hidden, attn_hidden), SUB_PREFIX);
        let params = classifier.init(rng);
        Substitute { classifier, params }
    }

    pub fn zeros(vocab_size: usize, hidden: usize, attn_hidden: usize) -> Self {
        let classifier = SequenceClassifier::new(Self::config(vocab_size, hidden, attn_hidden), SUB_PREFIX);
        let params = classifier.init_zeros();
        Substitute { classifier, params }
    }

    /// Replaces the parameters after checking names and shapes.
    pub fn with_params(mut self, params: ParameterStore) -> Result<Self> {
        let shapes = |s: &ParameterStore| -> Vec<(String, Vec<usize>)> {
            s.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect()
        };
        if shapes(&self.params) != shapes(&params) {
            return Err(Error::Config("substitute parameters do not match its configuration".into()));
        }
        self.params = params;
        Ok(self)
    }

    /// Width of input rows, `M + 1`.
    pub fn width(&self) -> usize {
        self.classifier.config.input_dim
    }

    pub fn forward(&self, g: &mut Graph, rows: &[Var]) -> Result<ClassifierOutput> {
        self.classifier.forward_rows(g, &self.params, rows)
    }

    /// `p_S` for a relaxed or plain sequence; plain one-hot rows get a zero
    /// null coordinate.
    pub fn p_malware<S: SequenceInput + ?Sized>(&self, seq: &S) -> Result<f64> {
        self.classifier.p_malware(&self.params, seq)
    }

    pub fn p_soft(&self, seq: &SoftSequence) -> Result<f64> {
        self.p_malware(seq)
    }

    pub fn p_plain(&self, seq: &OneHotSequence) -> Result<f64> {
        seq.check_range(self.width() - 1)?;
        self.p_malware(seq)
    }
}

/// The malware probability as a one-element node, clamped away from 0 and 1.
pub fn clamped_p(g: &mut Graph, out: &ClassifierOutput) -> Result<Var> {
    let p = g.slice(out.probs, 1, 1)?;
    Ok(g.clamp(p, P_CLAMP, 1.0 - P_CLAMP))
}

/// `-v ln p - (1 - v) ln(1 - p)` on a clamped probability node.
pub fn loss_substitute(g: &mut Graph, p: Var, v: u8) -> Result<Var> {
    let p = g.clamp(p, P_CLAMP, 1.0 - P_CLAMP);
    let target = if v == 1 {
        p
    } else {
        let neg = g.scale(p, -1.0);
        g.shift(neg, 1.0)
    };
    let ln = g.log(target)?;
    Ok(g.scale(ln, -1.0))
}

/// `ln p - gamma * mean(pi[null])` over every decode step.
pub fn loss_generator(g: &mut Graph, p: Var, pis: &[Var], null: usize, gamma: f64) -> Result<Var> {
    let p = g.clamp(p, P_CLAMP, 1.0 - P_CLAMP);
    let ln = g.log(p)?;
    if gamma == 0.0 || pis.is_empty() {
        return Ok(ln);
    }
    let nulls = pis.iter().map(|&pi| g.slice(pi, null, 1)).collect::<Result<Vec<_>>>()?;
    let total = g.add_all(&nulls)?;
    let reg = g.scale(total, -gamma / pis.len() as f64);
    g.add(ln, reg)
}

/// Plain-number version of [`loss_substitute`].
pub fn substitute_loss_value(p: f64, v: u8) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if v == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Plain-number version of [`loss_generator`].
pub fn generator_loss_value(p: f64, pi_null: &[f64], gamma: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    let mean = if pi_null.is_empty() {
        0.0
    } else {
        pi_null.iter().sum::<f64>() / pi_null.len() as f64
    };
    p.ln() - gamma * mean
}

/// The only view of a victim the attack is given: whole-sequence hard labels.
pub trait HardLabelOracle: Sync {
    /// `1` for malware, `0` for benign.
    fn query(&self, seq: &OneHotSequence) -> Result<u8>;

    /// Vocabulary the oracle accepts.
    fn vocab_size(&self) -> usize;
}

/// `1` iff the victim's malware probability is at least 0.5.
pub fn victim_label(victim: &Victim, seq: &OneHotSequence) -> Result<u8> {
    let p = victim.p_malware(seq)?;
    Ok(u8::from(p >= MALWARE_THRESHOLD))
}

impl HardLabelOracle for Victim {
    fn query(&self, seq: &OneHotSequence) -> Result<u8> {
        victim_label(self, seq)
    }

    fn vocab_size(&self) -> usize {
        Victim::vocab_size(self)
    }
}
