use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gumbel::{argmax, gumbel_softmax_graph, sample_gumbel_noise, GumbelConfig, PROB_FLOOR};
use crate::autodiff::{Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::seqnets::{lstm_step, run_lstm, zero_state, LstmParams, LstmVars, OneHotSequence, SequenceInput};

pub const GEN_PREFIX: &str = "gen";

/// Encoder/decoder insertion generator.
///
/// Parameters (all under `gen.`):
///
/// * `gen.enc.*`: encoder LSTM, one-hot input of width `M`, hidden `H`
/// * `gen.dec.*`: decoder LSTM, input width `H`, hidden `H`
/// * `gen.ws.w` `[M+1, H]`, `gen.ws.b` `[M+1]`: decoder state to symbol logits
/// * `gen.wg.w` `[H, M+1]`: relaxed sample back to decoder input
///
/// Symbol `M` is the null symbol; sampling it inserts nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorBundle {
    pub vocab_size: usize,
    pub hidden: usize,
    pub gumbel: GumbelConfig,
    pub params: ParameterStore,
}

/// Graph handles for one forward pass of the generator.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorVars {
    pub enc: LstmVars,
    pub dec: LstmVars,
    pub ws_w: Var,
    pub ws_b: Var,
    pub wg_w: Var,
}

/// Input to one decoder step.
#[derive(Clone, Copy, Debug)]
pub enum DecodeInput {
    /// First step of a piece: the encoder state, decoder state reset to zero.
    First(Var),
    /// Later steps: the previous relaxed sample, mapped through `W_g`.
    Previous(Var),
}

#[derive(Clone, Copy, Debug)]
pub struct DecodeStep {
    /// Symbol distribution over `M + 1` entries.
    pub pi: Var,
    pub log_pi: Var,
    pub h: Var,
    pub c: Var,
}

/// Everything one generator pass leaves in the graph.
#[derive(Clone, Debug)]
pub struct GeneratorTrace {
    /// Relaxed sequence rows: each original one-hot followed by its `L`
    /// relaxed samples.
    pub rows: Vec<Var>,
    /// One distribution per decode step, in order.
    pub pis: Vec<Var>,
    /// Hard samples, one per decode step.
    pub samples: Vec<usize>,
}

/// Rows of width `M + 1`, each a probability vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SoftSequence {
    pub rows: Vec<Vec<f64>>,
}

impl SoftSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

impl SequenceInput for SoftSequence {
    fn input_rows(&self, width: usize) -> Result<Vec<Tensor>> {
        if self.width() != width {
            return Err(Error::shape(
                "soft sequence",
                format!("rows of width {}, expected {width}", self.width()),
            ));
        }
        Ok(self.rows.iter().map(|r| Tensor::vector(r.clone())).collect())
    }
}

/// One generated adversarial example.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub original: OneHotSequence,
    /// Original interleaved with the non-null samples, over `[0, M)`.
    pub adversarial: OneHotSequence,
    pub soft: SoftSequence,
    /// Positions in `adversarial` holding inserted symbols.
    pub insertion_positions: Vec<usize>,
    /// Hard samples per decode step, including nulls.
    pub samples: Vec<usize>,
    /// Victim hard label, once queried.
    pub victim_label: Option<u8>,
    /// Substitute malware probability, once scored.
    pub substitute_p: Option<f64>,
}

impl AttackResult {
    pub fn null_count(&self, null: usize) -> usize {
        self.samples.iter().filter(|&&a| a == null).count()
    }
}

/// Interleaves `original` with `L` samples per position and drops nulls.
/// Returns the sequence and the positions of inserted symbols.
pub fn remove_null(original: &[usize], samples: &[usize], insert_len: usize, null: usize) -> (Vec<usize>, Vec<usize>) {
    let mut out = Vec::with_capacity(original.len() * (1 + insert_len));
    let mut positions = Vec::new();
    for (t, &x) in original.iter().enumerate() {
        out.push(x);
        for &a in &samples[t * insert_len..(t + 1) * insert_len] {
            if a != null {
                positions.push(out.len());
                out.push(a);
            }
        }
    }
    (out, positions)
}

/// Draws Gumbel noise for every decode step of a sequence of length `t`.
pub fn draw_noise<R: Rng + ?Sized>(t: usize, insert_len: usize, width: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..t * insert_len).map(|_| sample_gumbel_noise(width, rng)).collect()
}

impl GeneratorBundle {
    fn name(part: &str) -> String {
        format!("{GEN_PREFIX}.{part}")
    }

    pub fn encoder(&self) -> LstmParams {
        LstmParams::new(Self::name("enc"), self.vocab_size, self.hidden)
    }

    pub fn decoder(&self) -> LstmParams {
        LstmParams::new(Self::name("dec"), self.hidden, self.hidden)
    }

    pub fn null_index(&self) -> usize {
        self.vocab_size
    }

    /// Width of relaxed rows, `M + 1`.
    pub fn width(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn new<R: Rng + ?Sized>(vocab_size: usize, hidden: usize, gumbel: GumbelConfig, rng: &mut R) -> Result<Self> {
        gumbel.validate()?;
        if vocab_size < 2 || hidden == 0 {
            return Err(Error::Config(format!(
                "generator needs vocabulary >= 2 and hidden > 0, got {vocab_size} and {hidden}"
            )));
        }
        let mut b = GeneratorBundle {
            vocab_size,
            hidden,
            gumbel,
            params: ParameterStore::new(),
        };
        let mut store = ParameterStore::new();
        b.encoder().init(&mut store, rng);
        b.decoder().init(&mut store, rng);
        let m1 = vocab_size + 1;
        store.insert_uniform(Self::name("ws.w"), &[m1, hidden], 1.0 / (hidden as f64).sqrt(), rng);
        store.insert(Self::name("ws.b"), Tensor::zeros(&[m1]));
        store.insert_uniform(Self::name("wg.w"), &[hidden, m1], 1.0 / (m1 as f64).sqrt(), rng);
        b.params = store;
        Ok(b)
    }

    /// Same layout with every parameter zero.
    pub fn zeros(vocab_size: usize, hidden: usize, gumbel: GumbelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Self::new(vocab_size, hidden, gumbel, &mut rng)?;
        b.params.zero_all();
        Ok(b)
    }

    /// Replaces the parameters after checking names and shapes.
    pub fn with_params(mut self, params: ParameterStore) -> Result<Self> {
        let expected: Vec<(String, Vec<usize>)> =
            self.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        let got: Vec<(String, Vec<usize>)> =
            params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        if expected != got {
            return Err(Error::Config(format!(
                "generator parameters do not match vocabulary {} and hidden {}",
                self.vocab_size, self.hidden
            )));
        }
        self.params = params;
        Ok(self)
    }

    pub fn bind(&self, g: &mut Graph) -> Result<GeneratorVars> {
        Ok(GeneratorVars {
            enc: self.encoder().bind(g, &self.params)?,
            dec: self.decoder().bind(g, &self.params)?,
            ws_w: g.param(&self.params, &Self::name("ws.w"))?,
            ws_b: g.param(&self.params, &Self::name("ws.b"))?,
            wg_w: g.param(&self.params, &Self::name("wg.w"))?,
        })
    }

    /// Encoder states `h_1 .. h_T` from a zero initial state.
    pub fn encode(&self, g: &mut Graph, vars: &GeneratorVars, seq: &OneHotSequence) -> Result<Vec<Var>> {
        seq.check_range(self.vocab_size)?;
        let rows: Vec<Var> = seq
            .input_rows(self.vocab_size)?
            .into_iter()
            .map(|t| g.constant(t))
            .collect();
        run_lstm(g, &vars.enc, &rows)
    }

    /// One decoder step. `state` must be `None` exactly for [`DecodeInput::First`].
    pub fn decode_step(
        &self,
        g: &mut Graph,
        vars: &GeneratorVars,
        input: DecodeInput,
        state: Option<(Var, Var)>,
    ) -> Result<DecodeStep> {
        let (x, (h0, c0)) = match (input, state) {
            (DecodeInput::First(h_t), None) => {
                let h0 = zero_state(g, self.hidden);
                let c0 = zero_state(g, self.hidden);
                (h_t, (h0, c0))
            }
            (DecodeInput::Previous(g_prev), Some(s)) => (g.matmul(vars.wg_w, g_prev)?, s),
            _ => {
                return Err(Error::Config(
                    "decode_step: the first step takes no decoder state and later steps require one".into(),
                ))
            }
        };
        let (h, c) = lstm_step(g, &vars.dec, x, h0, c0)?;
        let z = g.matmul(vars.ws_w, h)?;
        let logits = g.add(z, vars.ws_b)?;
        let pi = g.softmax(logits)?;
        let log_pi = g.log_softmax(logits)?;
        Ok(DecodeStep { pi, log_pi, h, c })
    }

    /// Full generator pass with pre-drawn noise (`T * L` rows of width `M + 1`).
    pub fn forward(&self, g: &mut Graph, seq: &OneHotSequence, noise: &[Vec<f64>]) -> Result<GeneratorTrace> {
        let l = self.gumbel.insert_len;
        if noise.len() != seq.len() * l || noise.iter().any(|z| z.len() != self.width()) {
            return Err(Error::shape(
                "generator noise",
                format!("{} rows for {} decode steps of width {}", noise.len(), seq.len() * l, self.width()),
            ));
        }
        let vars = self.bind(g)?;
        let states = self.encode(g, &vars, seq)?;
        let mut rows = Vec::with_capacity(seq.len() * (1 + l));
        let mut pis = Vec::with_capacity(seq.len() * l);
        let mut samples = Vec::with_capacity(seq.len() * l);
        let mut z = noise.iter();
        for (&x, &h_t) in seq.indices().iter().zip(&states) {
            rows.push(g.constant(Tensor::one_hot(x, self.width())?));
            let mut input = DecodeInput::First(h_t);
            let mut state = None;
            for _ in 0..l {
                let step = self.decode_step(g, &vars, input, state)?;
                let zi = z.next().expect("noise length checked");
                let relaxed = gumbel_softmax_graph(g, step.log_pi, zi, self.gumbel.temp)?;
                let perturbed: Vec<f64> = g
                    .value(step.log_pi)
                    .data()
                    .iter()
                    .zip(zi)
                    .map(|(&lp, &zz)| lp.max(PROB_FLOOR.ln()) + zz)
                    .collect();
                samples.push(argmax(&perturbed));
                rows.push(relaxed);
                pis.push(step.pi);
                input = DecodeInput::Previous(relaxed);
                state = Some((step.h, step.c));
            }
        }
        Ok(GeneratorTrace { rows, pis, samples })
    }

    /// Builds the adversarial example for `seq` from explicit noise.
    pub fn generate_with_noise(&self, seq: &OneHotSequence, noise: &[Vec<f64>]) -> Result<AttackResult> {
        let mut g = Graph::new();
        let trace = self.forward(&mut g, seq, noise)?;
        Ok(self.result_from_trace(&g, seq, &trace))
    }

    /// Builds the adversarial example for `seq`, drawing noise from `rng`.
    pub fn generate<R: Rng + ?Sized>(&self, seq: &OneHotSequence, rng: &mut R) -> Result<AttackResult> {
        let noise = draw_noise(seq.len(), self.gumbel.insert_len, self.width(), rng);
        self.generate_with_noise(seq, &noise)
    }

    pub(crate) fn result_from_trace(&self, g: &Graph, seq: &OneHotSequence, trace: &GeneratorTrace) -> AttackResult {
        let (adv, insertion_positions) = remove_null(
            seq.indices(),
            &trace.samples,
            self.gumbel.insert_len,
            self.null_index(),
        );
        let soft = SoftSequence {
            rows: trace.rows.iter().map(|&r| g.value(r).data().to_vec()).collect(),
        };
        AttackResult {
            original: seq.clone(),
            adversarial: OneHotSequence::new(adv, self.vocab_size).expect("samples below null are in range"),
            soft,
            insertion_positions,
            samples: trace.samples.clone(),
            victim_label: None,
            substitute_p: None,
        }
    }
}
