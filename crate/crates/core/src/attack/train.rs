use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::generator::{draw_noise, AttackResult, GeneratorBundle};
use super::substitute::{clamped_p, loss_generator, loss_substitute, HardLabelOracle, Substitute};
use crate::autodiff::{backward, Adam, Graph, ParamGrads, ParameterStore, Tensor, Var};
use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::seqnets::{clip_global_norm, OneHotSequence};

#[derive(Clone, Debug)]
pub struct AttackTrainOptions {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub gen_lr: f64,
    pub sub_lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for AttackTrainOptions {
    fn default() -> Self {
        AttackTrainOptions {
            max_epochs: 100,
            batch_size: 16,
            gen_lr: 0.001,
            sub_lr: 0.001,
            patience: 10,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackEpochLog {
    pub epoch: usize,
    pub mean_substitute_loss: f64,
    pub mean_generator_loss: f64,
    /// Fraction of validation malware whose adversarial version the victim
    /// labels benign.
    pub val_success: f64,
    /// Victim queries issued during the epoch, validation included.
    pub queries: usize,
    /// Set when a victim query failed and the epoch was cut short.
    pub aborted: Option<String>,
}

#[derive(Clone, Debug)]
pub struct AttackTraining {
    /// Parameters from the epoch with the best validation success.
    pub generator: GeneratorBundle,
    pub substitute: Substitute,
    pub log: Vec<AttackEpochLog>,
    pub best_epoch: usize,
}

/// Counts queries and tags oracle failures so they can be told apart from
/// internal errors.
struct CountingOracle<'a, O: ?Sized> {
    inner: &'a O,
    count: AtomicUsize,
}

impl<O: HardLabelOracle + ?Sized> CountingOracle<'_, O> {
    fn query(&self, seq: &OneHotSequence) -> Result<u8> {
        self.count.fetch_add(1, Ordering::Relaxed);
        match self.inner.query(seq) {
            Ok(v) if v <= 1 => Ok(v),
            Ok(v) => Err(Error::Victim(format!("oracle returned label {v}"))),
            Err(Error::Victim(m)) => Err(Error::Victim(m)),
            Err(e) => Err(Error::Victim(e.to_string())),
        }
    }

    fn take(&self) -> usize {
        self.count.swap(0, Ordering::Relaxed)
    }
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Noise stream for example `id` at a given training step.
pub(crate) fn noise_rng(seed: u64, round: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(round)));
    rng.set_stream(id as u64 + 1);
    rng
}

/// Round used for validation and evaluation noise; fixed across epochs.
pub(crate) const EVAL_ROUND: u64 = u64::MAX;

fn plain_rows(g: &mut Graph, seq: &OneHotSequence, width: usize) -> Result<Vec<Var>> {
    let rows = seq
        .indices()
        .iter()
        .map(|&i| Tensor::one_hot(i, width))
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().map(|t| g.constant(t)).collect())
}

/// Malware example prepared for the generator step.
struct MalwareItem {
    index: usize,
    noise: Vec<Vec<f64>>,
}

struct StepOutcome {
    loss: f64,
    grads: ParamGrads,
    malware: Option<MalwareItem>,
}

fn substitute_step<O: HardLabelOracle + ?Sized>(
    gen: &GeneratorBundle,
    sub: &Substitute,
    oracle: &CountingOracle<O>,
    ex: &LabeledExample,
    index: usize,
    noise_round: u64,
    seed: u64,
) -> Result<StepOutcome> {
    let mut g = Graph::new();
    let (rows, v, malware) = if ex.is_malware() {
        let noise = draw_noise(
            ex.sequence.len(),
            gen.gumbel.insert_len,
            gen.width(),
            &mut noise_rng(seed, noise_round, ex.id),
        );
        let trace = gen.forward(&mut g, &ex.sequence, &noise)?;
        let result = gen.result_from_trace(&g, &ex.sequence, &trace);
        let v = oracle.query(&result.adversarial)?;
        (trace.rows, v, Some(MalwareItem { index, noise }))
    } else {
        let v = oracle.query(&ex.sequence)?;
        (plain_rows(&mut g, &ex.sequence, sub.width())?, v, None)
    };
    let out = sub.forward(&mut g, &rows)?;
    let p = clamped_p(&mut g, &out)?;
    let loss = loss_substitute(&mut g, p, v)?;
    let grads = backward(&g, loss)?.into_params().restricted_to(&sub.params);
    Ok(StepOutcome {
        loss: g.scalar_value(loss),
        grads,
        malware,
    })
}

fn generator_step(
    gen: &GeneratorBundle,
    sub: &Substitute,
    ex: &LabeledExample,
    noise: &[Vec<f64>],
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::new();
    let trace = gen.forward(&mut g, &ex.sequence, noise)?;
    let out = sub.forward(&mut g, &trace.rows)?;
    let p = clamped_p(&mut g, &out)?;
    let loss = loss_generator(&mut g, p, &trace.pis, gen.null_index(), gen.gumbel.gamma)?;
    let grads = backward(&g, loss)?.into_params().restricted_to(&gen.params);
    Ok((g.scalar_value(loss), grads))
}

fn mean_grads(parts: impl Iterator<Item = ParamGrads>, like: &ParameterStore, n: usize, clip: Option<f64>) -> ParamGrads {
    let mut total = ParamGrads::zeros_like(like);
    for p in parts {
        total.accumulate(&p);
    }
    total.scale(1.0 / n.max(1) as f64);
    if let Some(max) = clip {
        clip_global_norm(&mut total, max);
    }
    total
}

/// Splits a shuffled order into minibatches; a batch missing either class is
/// replaced by a fresh random draw until it has both.
fn minibatches<R: Rng>(train: &[LabeledExample], batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let size = batch_size.clamp(2, train.len());
    let has_both = |b: &[usize]| {
        let mal = b.iter().filter(|&&i| train[i].is_malware()).count();
        mal > 0 && mal < b.len()
    };
    let mut out = Vec::new();
    for chunk in order.chunks(size) {
        let mut batch = chunk.to_vec();
        let mut tries = 0;
        while !has_both(&batch) {
            tries += 1;
            if tries > 1000 {
                return Err(Error::Config("could not draw a minibatch containing both classes".into()));
            }
            batch = rand::seq::index::sample(rng, train.len(), size.max(2)).into_vec();
        }
        out.push(batch);
    }
    Ok(out)
}

/// Adversarial versions of every malware example in `examples`, generated
/// with evaluation noise (fixed per example id).
pub fn attack_examples(gen: &GeneratorBundle, examples: &[LabeledExample], seed: u64) -> Result<Vec<AttackResult>> {
    examples
        .par_iter()
        .filter(|e| e.is_malware())
        .map(|e| gen.generate(&e.sequence, &mut noise_rng(seed, EVAL_ROUND, e.id)))
        .collect()
}

fn validation_success<O: HardLabelOracle + ?Sized>(
    gen: &GeneratorBundle,
    oracle: &CountingOracle<O>,
    val: &[LabeledExample],
    seed: u64,
) -> Result<f64> {
    let results = attack_examples(gen, val, seed)?;
    let labels = results
        .par_iter()
        .map(|r| oracle.query(&r.adversarial))
        .collect::<Result<Vec<u8>>>()?;
    Ok(labels.iter().filter(|&&v| v == 0).count() as f64 / labels.len().max(1) as f64)
}

fn check_inputs<O: HardLabelOracle + ?Sized>(
    train: &[LabeledExample],
    val: &[LabeledExample],
    oracle: &O,
    gen: &GeneratorBundle,
    sub: &Substitute,
) -> Result<()> {
    if oracle.vocab_size() != gen.vocab_size {
        return Err(Error::Config(format!(
            "victim vocabulary {} differs from generator vocabulary {}",
            oracle.vocab_size(),
            gen.vocab_size
        )));
    }
    if sub.width() != gen.width() {
        return Err(Error::Config(format!(
            "substitute input width {} must be generator vocabulary + 1 = {}",
            sub.width(),
            gen.width()
        )));
    }
    let mal = train.iter().filter(|e| e.is_malware()).count();
    if mal == 0 || mal == train.len() {
        return Err(Error::Config("attack training set needs both malware and benign examples".into()));
    }
    if !val.iter().any(LabeledExample::is_malware) {
        return Err(Error::Config("attack validation set has no malware".into()));
    }
    Ok(())
}

/// Result of the substitute half of a training step.
pub struct SubstitutePhase {
    pub losses: Vec<f64>,
    malware: Vec<MalwareItem>,
}

/// One alternating optimisation run. Each step first updates only the
/// substitute on the victim's hard labels, then only the generator against
/// the updated substitute. The victim is reached only through the oracle.
pub struct AttackTrainer<'a, O: HardLabelOracle + ?Sized> {
    train: &'a [LabeledExample],
    oracle: CountingOracle<'a, O>,
    generator: GeneratorBundle,
    substitute: Substitute,
    gen_adam: Adam,
    sub_adam: Adam,
    opts: AttackTrainOptions,
    steps: u64,
}

impl<'a, O: HardLabelOracle + ?Sized> AttackTrainer<'a, O> {
    pub fn new(
        train: &'a [LabeledExample],
        oracle: &'a O,
        generator: GeneratorBundle,
        substitute: Substitute,
        opts: &AttackTrainOptions,
    ) -> Self {
        AttackTrainer {
            train,
            oracle: CountingOracle {
                inner: oracle,
                count: AtomicUsize::new(0),
            },
            generator,
            substitute,
            gen_adam: Adam::new(opts.gen_lr),
            sub_adam: Adam::new(opts.sub_lr),
            opts: opts.clone(),
            steps: 0,
        }
    }

    pub fn generator(&self) -> &GeneratorBundle {
        &self.generator
    }

    pub fn substitute(&self) -> &Substitute {
        &self.substitute
    }

    /// Generates adversarial versions of the batch malware, labels them and the
    /// batch benign examples through the oracle, and takes one Adam step on
    /// the mean substitute loss.
    pub fn substitute_phase(&mut self, batch: &[usize]) -> Result<SubstitutePhase> {
        self.steps += 1;
        let (gen, sub, oracle) = (&self.generator, &self.substitute, &self.oracle);
        let outcomes: Vec<StepOutcome> = batch
            .par_iter()
            .map(|&i| substitute_step(gen, sub, oracle, &self.train[i], i, self.steps, self.opts.seed))
            .collect::<Result<_>>()?;
        let grads = mean_grads(
            outcomes.iter().map(|o| o.grads.clone()),
            &self.substitute.params,
            outcomes.len(),
            self.opts.clip_norm,
        );
        self.sub_adam.step(&mut self.substitute.params, &grads)?;
        let losses = outcomes.iter().map(|o| o.loss).collect();
        let malware = outcomes.into_iter().filter_map(|o| o.malware).collect();
        Ok(SubstitutePhase { losses, malware })
    }

    /// One Adam step on the mean generator loss over the malware of a batch,
    /// reusing the noise from the substitute phase. Returns per-example losses.
    pub fn generator_phase(&mut self, phase: &SubstitutePhase) -> Result<Vec<f64>> {
        if phase.malware.is_empty() {
            return Ok(Vec::new());
        }
        let (gen, sub) = (&self.generator, &self.substitute);
        let results: Vec<(f64, ParamGrads)> = phase
            .malware
            .par_iter()
            .map(|m| generator_step(gen, sub, &self.train[m.index], &m.noise))
            .collect::<Result<_>>()?;
        let losses = results.iter().map(|r| r.0).collect();
        let grads = mean_grads(
            results.into_iter().map(|r| r.1),
            &self.generator.params,
            phase.malware.len(),
            self.opts.clip_norm,
        );
        self.gen_adam.step(&mut self.generator.params, &grads)?;
        Ok(losses)
    }

    /// Fraction of validation malware whose adversarial version the victim
    /// labels benign.
    pub fn validation_success(&self, val: &[LabeledExample]) -> Result<f64> {
        validation_success(&self.generator, &self.oracle, val, self.opts.seed)
    }

    /// Victim queries since the last call.
    pub fn take_query_count(&self) -> usize {
        self.oracle.take()
    }
}

/// Runs [`AttackTrainer`] epochs with early stopping on validation success and
/// returns the best parameters seen.
pub fn train_attack<O: HardLabelOracle + ?Sized>(
    train: &[LabeledExample],
    val: &[LabeledExample],
    oracle: &O,
    generator: GeneratorBundle,
    substitute: Substitute,
    opts: &AttackTrainOptions,
) -> Result<AttackTraining> {
    check_inputs(train, val, oracle, &generator, &substitute)?;
    let mut trainer = AttackTrainer::new(train, oracle, generator, substitute, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, usize, ParameterStore, ParameterStore)> = None;
    let mut log = Vec::new();

    for epoch in 1..=opts.max_epochs {
        let batches = minibatches(train, opts.batch_size, &mut rng)?;
        let (mut ls, mut lg) = (Vec::new(), Vec::new());
        let mut aborted = None;

        for batch in &batches {
            let phase = match trainer.substitute_phase(batch) {
                Ok(p) => p,
                Err(Error::Victim(m)) => {
                    aborted = Some(m);
                    break;
                }
                Err(e) => return Err(e),
            };
            lg.extend(trainer.generator_phase(&phase)?);
            ls.extend(phase.losses);
        }

        let val_success = match aborted {
            Some(_) => f64::NAN,
            None => match trainer.validation_success(val) {
                Ok(s) => s,
                Err(Error::Victim(m)) => {
                    aborted = Some(m);
                    f64::NAN
                }
                Err(e) => return Err(e),
            },
        };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        log.push(AttackEpochLog {
            epoch,
            mean_substitute_loss: mean(&ls),
            mean_generator_loss: mean(&lg),
            val_success,
            queries: trainer.take_query_count(),
            aborted: aborted.clone(),
        });
        if aborted.is_some() {
            continue;
        }
        if best.as_ref().is_none_or(|b| val_success > b.0) {
            best = Some((
                val_success,
                epoch,
                trainer.generator.params.clone(),
                trainer.substitute.params.clone(),
            ));
        } else if epoch - best.as_ref().map_or(0, |b| b.1) >= opts.patience {
            break;
        }
    }

    let Some((_, best_epoch, gen_params, sub_params)) = best else {
        let reason = log
            .iter()
            .rev()
            .find_map(|l| l.aborted.clone())
            .unwrap_or_else(|| "no epochs were run".into());
        return Err(Error::Victim(format!("attack training completed no epoch: {reason}")));
    };
    let mut generator = trainer.generator;
    let mut substitute = trainer.substitute;
    generator.params = gen_params;
    substitute.params = sub_params;
    Ok(AttackTraining {
        generator,
        substitute,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::GumbelConfig;
    use crate::corpus::{generate_corpus, CorpusSpec};

    fn tiny() -> (Vec<LabeledExample>, GeneratorBundle, Substitute) {
        let corpus = generate_corpus(&CorpusSpec {
            vocab_size: 6,
            motif_count: 2,
            motif_len: (3, 3),
            min_len: 5,
            max_len: 8,
            size: 24,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = GeneratorBundle::new(6, 4, GumbelConfig::default(), &mut rng).unwrap();
        let sub = Substitute::new(6, 4, 3, &mut rng);
        (corpus, gen, sub)
    }

    struct Failing;

    impl HardLabelOracle for Failing {
        fn query(&self, _: &OneHotSequence) -> Result<u8> {
            Err(Error::Victim("offline".into()))
        }

        fn vocab_size(&self) -> usize {
            6
        }
    }

    struct Constant(u8);

    impl HardLabelOracle for Constant {
        fn query(&self, _: &OneHotSequence) -> Result<u8> {
            Ok(self.0)
        }

        fn vocab_size(&self) -> usize {
            6
        }
    }

    #[test]
    fn failing_victim_aborts_every_epoch() {
        let (corpus, gen, sub) = tiny();
        let opts = AttackTrainOptions {
            max_epochs: 2,
            ..Default::default()
        };
        let err = train_attack(&corpus, &corpus, &Failing, gen, sub, &opts).unwrap_err();
        assert!(err.to_string().contains("offline"), "{err}");
    }

    #[test]
    fn vocabulary_mismatch_rejected() {
        let (corpus, _, _) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gen = GeneratorBundle::new(5, 4, GumbelConfig::default(), &mut rng).unwrap();
        let sub = Substitute::new(5, 4, 3, &mut rng);
        let opts = AttackTrainOptions::default();
        assert!(train_attack(&corpus, &corpus, &Constant(1), gen, sub, &opts).is_err());
    }

    #[test]
    fn log_has_one_row_per_epoch_and_is_deterministic() {
        let (corpus, gen, sub) = tiny();
        let opts = AttackTrainOptions {
            max_epochs: 3,
            patience: 100,
            batch_size: 8,
            ..Default::default()
        };
        let a = train_attack(&corpus, &corpus, &Constant(1), gen.clone(), sub.clone(), &opts).unwrap();
        let b = train_attack(&corpus, &corpus, &Constant(1), gen, sub, &opts).unwrap();
        assert_eq!(a.log.len(), 3);
        assert_eq!(a.log, b.log);
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.substitute, b.substitute);
    }

    #[test]
    fn phases_touch_only_their_own_parameters() {
        let (corpus, gen, sub) = tiny();
        let opts = AttackTrainOptions::default();
        let mut t = AttackTrainer::new(&corpus, &Constant(1), gen, sub, &opts);
        let batch: Vec<usize> = (0..8).collect();
        let (g0, s0) = (t.generator().clone(), t.substitute().clone());
        let phase = t.substitute_phase(&batch).unwrap();
        assert_eq!(t.generator(), &g0);
        assert_ne!(t.substitute(), &s0);
        let s1 = t.substitute().clone();
        t.generator_phase(&phase).unwrap();
        assert_eq!(t.substitute(), &s1);
        assert_ne!(t.generator(), &g0);
        assert_eq!(t.take_query_count(), 8);
    }

    #[test]
    fn minibatches_contain_both_classes() {
        let (corpus, _, _) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in minibatches(&corpus, 3, &mut rng).unwrap() {
            assert!(b.iter().any(|&i| corpus[i].is_malware()));
            assert!(b.iter().any(|&i| !corpus[i].is_malware()));
        }
    }
}
