//! Adversarial training: alternate critic minimization and generator
//! maximization of the Wasserstein objective with gradient penalty, with
//! deterministic seeded batching, metrics logging, and checkpointing.

pub mod checkpoint;

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::dataset::SplitIndices;
use crate::discriminator::{
    bind_soft, gradient_penalty_on_tape, score_on_tape, DiscriminatorDims, DiscriminatorParams,
};
use crate::eval::{critic_scorer, rank_triples, recall_at_k, EvalError};
use crate::features::{FeatureGrid, Standardizer};
use crate::generator::{generate_vars, sample_triples, GeneratorDims, GeneratorParams};
use crate::nets::{bind_features, FeatureVars};
use crate::numerics::{adam_step, AdamConfig, AdamState, NumericsError, SeededRng, Tape, Var};
use crate::vocab::{one_hot, Triple};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },
    #[error("no training images with ground-truth triples")]
    EmptyBatchSource,
    #[error("bad train config: {0}")]
    BadConfig(String),
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint was trained against a different vocabulary (hash {checkpoint:#x}, got {provided:#x})")]
    VocabHashMismatch { checkpoint: u64, provided: u64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Gradient penalty coefficient.
    pub lambda: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub batch_size: usize,
    /// Total generator steps.
    pub gen_steps: u64,
    pub noise_dim: usize,
    pub hidden: usize,
    pub disc_hidden: usize,
    pub embed_dim: usize,
    pub attn_hidden: usize,
    pub seed: u64,
    /// Validation recall every this many generator steps (0 disables).
    pub eval_cadence: u64,
    /// How many validation images the periodic recall uses.
    pub eval_slice: usize,
    pub eval_samples: usize,
    pub eval_k: usize,
    /// Checkpoint every this many generator steps (0 = only at the end).
    pub checkpoint_cadence: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            lambda: 10.0,
            n_critic: 5,
            batch_size: 32,
            gen_steps: 3000,
            noise_dim: 16,
            hidden: 64,
            disc_hidden: 64,
            embed_dim: 32,
            attn_hidden: 32,
            seed: 17,
            eval_cadence: 500,
            eval_slice: 16,
            eval_samples: 200,
            eval_k: 20,
            checkpoint_cadence: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(TrainError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(TrainError::BadConfig("lambda must be non-negative".into()));
        }
        for (name, v) in [
            ("n_critic", self.n_critic),
            ("batch_size", self.batch_size),
            ("noise_dim", self.noise_dim),
            ("hidden", self.hidden),
            ("disc_hidden", self.disc_hidden),
            ("embed_dim", self.embed_dim),
            ("attn_hidden", self.attn_hidden),
        ] {
            if v == 0 {
                return Err(TrainError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }

    pub fn generator_dims(&self, feature_dim: usize, cells: usize, vocab: usize) -> GeneratorDims {
        GeneratorDims {
            feature_dim,
            cells,
            hidden: self.hidden,
            noise: self.noise_dim,
            attn_hidden: self.attn_hidden,
            vocab,
        }
    }

    pub fn discriminator_dims(
        &self,
        feature_dim: usize,
        cells: usize,
        vocab: usize,
    ) -> DiscriminatorDims {
        DiscriminatorDims {
            feature_dim,
            cells,
            hidden: self.disc_hidden,
            embed: self.embed_dim,
            attn_hidden: self.attn_hidden,
            vocab,
        }
    }
}

/// Standardized grids plus ground truth, restricted to a split.
pub struct TrainData<'a> {
    pub grids: &'a [FeatureGrid],
    pub truths: &'a [Vec<Triple>],
    /// Train-split indices with at least one ground-truth triple.
    sampleable: Vec<usize>,
    pub val: Vec<usize>,
}

impl<'a> TrainData<'a> {
    pub fn new(grids: &'a [FeatureGrid], truths: &'a [Vec<Triple>], split: &SplitIndices) -> Self {
        let sampleable = split
            .train
            .iter()
            .copied()
            .filter(|&i| !truths[i].is_empty())
            .collect();
        TrainData {
            grids,
            truths,
            sampleable,
            val: split.val.clone(),
        }
    }

    pub fn sampleable(&self) -> &[usize] {
        &self.sampleable
    }
}

/// One sampled critic-batch element, kept so the loss can be recomputed
/// independently of the update path.
#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub image: usize,
    pub real: Triple,
    pub fake_soft: [Vec<f64>; 3],
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct CriticOutcome {
    /// Mean over the batch of score(fake) - score(real) + penalty, before
    /// the Adam step.
    pub loss: f64,
    /// Mean score(real) - mean score(fake).
    pub wasserstein: f64,
    pub records: Vec<BatchRecord>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub gen: GeneratorParams,
    pub disc: DiscriminatorParams,
    pub adam_gen: AdamState,
    pub adam_disc: AdamState,
    pub standardizer: Standardizer,
    pub vocab_hash: u64,
    pub rng: SeededRng,
    pub step: u64,
}

const GEN_INIT_STREAM: u64 = 0x47;
const DISC_INIT_STREAM: u64 = 0x44;
const TRAIN_STREAM: u64 = 0x54;
const EVAL_STREAM: u64 = 0x45;

impl Trainer {
    pub fn new(
        config: TrainConfig,
        feature_dim: usize,
        cells: usize,
        vocab_size: usize,
        standardizer: Standardizer,
        vocab_hash: u64,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let root = SeededRng::new(config.seed);
        let gen = GeneratorParams::init(
            config.generator_dims(feature_dim, cells, vocab_size),
            &mut root.derive(&[GEN_INIT_STREAM]),
        );
        let disc = DiscriminatorParams::init(
            config.discriminator_dims(feature_dim, cells, vocab_size),
            &mut root.derive(&[DISC_INIT_STREAM]),
        );
        let adam_gen = AdamState::for_store(&gen.store);
        let adam_disc = AdamState::for_store(&disc.store);
        let rng = root.derive(&[TRAIN_STREAM]);
        Ok(Trainer {
            config,
            gen,
            disc,
            adam_gen,
            adam_disc,
            standardizer,
            vocab_hash,
            rng,
            step: 0,
        })
    }

    /// Minimize mean[score(fake) - score(real) + penalty] over one sampled
    /// batch with an Adam step on the critic parameters only. Per batch
    /// element the draw order is: image, ground-truth triple, generator
    /// noise, start cell, interpolation ε.
    pub fn critic_update(&mut self, data: &TrainData) -> Result<CriticOutcome, TrainError> {
        if data.sampleable.is_empty() {
            return Err(TrainError::EmptyBatchSource);
        }
        let batch = self.config.batch_size;
        let scale = 1.0 / batch as f64;
        let vocab = self.gen.dims.vocab;
        let mut loss_sum = 0.0;
        let mut w_sum = 0.0;
        let mut records = Vec::with_capacity(batch);
        for _ in 0..batch {
            let image = data.sampleable[self.rng.range(data.sampleable.len())];
            let truth = &data.truths[image];
            let real = truth[self.rng.range(truth.len())];

            let mut tape = Tape::new();
            let gen_bound = self.gen.bind(&mut tape, false);
            let features = bind_features(&mut tape, &data.grids[image]);
            let (gvars, _noise) = generate_vars(&mut tape, &gen_bound, &features, &mut self.rng)?;
            // Detach the generated soft vectors: the critic update must not
            // propagate into generator parameters.
            let fake_soft: [Vec<f64>; 3] = [
                tape.value(gvars.soft[0]).data().to_vec(),
                tape.value(gvars.soft[1]).data().to_vec(),
                tape.value(gvars.soft[2]).data().to_vec(),
            ];
            let eps = self.rng.uniform01();

            let disc_bound = self.disc.bind(&mut tape, true);
            let fake_vars = bind_soft(
                &mut tape,
                vocab,
                [&fake_soft[0], &fake_soft[1], &fake_soft[2]],
            )?;
            let real_hots = [
                one_hot(real.subject, vocab).map_err(|_| TrainError::BadConfig("vocab".into()))?,
                one_hot(real.predicate, vocab)
                    .map_err(|_| TrainError::BadConfig("vocab".into()))?,
                one_hot(real.object, vocab).map_err(|_| TrainError::BadConfig("vocab".into()))?,
            ];
            let real_vars = bind_soft(
                &mut tape,
                vocab,
                [&real_hots[0], &real_hots[1], &real_hots[2]],
            )?;

            let s_fake = score_on_tape(&mut tape, &disc_bound, &features, &fake_vars)?;
            let s_real = score_on_tape(&mut tape, &disc_bound, &features, &real_vars)?;
            let penalty = gradient_penalty_on_tape(
                &mut tape,
                &disc_bound,
                &features,
                [&real_hots[0], &real_hots[1], &real_hots[2]],
                [&fake_soft[0], &fake_soft[1], &fake_soft[2]],
                eps,
                self.config.lambda,
            )?;
            let gap = tape.sub(s_fake, s_real)?;
            let loss = tape.add(gap, penalty)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "critic loss",
                    step: self.step,
                });
            }
            loss_sum += loss_value;
            w_sum += tape.value(s_real).item() - tape.value(s_fake).item();
            tape.backward_scaled_into(loss, &mut self.disc.store, scale)?;
            records.push(BatchRecord {
                image,
                real,
                fake_soft,
                eps,
            });
        }
        adam_step(
            &mut self.disc.store,
            &mut self.adam_disc,
            &self.config.adam(),
        );
        Ok(CriticOutcome {
            loss: loss_sum * scale,
            wasserstein: w_sum * scale,
            records,
        })
    }

    /// Maximize the mean critic score of generated triples (as Adam
    /// minimization of its negation) with a step on the generator
    /// parameters only; gradients flow through the frozen critic.
    pub fn generator_update(&mut self, data: &TrainData) -> Result<f64, TrainError> {
        let Trainer {
            config,
            gen,
            disc,
            adam_gen,
            rng,
            step,
            ..
        } = self;
        generator_update_with(
            gen,
            adam_gen,
            &config.adam(),
            config.batch_size,
            data,
            rng,
            *step,
            |tape, features, soft| {
                let bound = disc.bind(tape, false);
                score_on_tape(tape, &bound, features, soft)
            },
        )
    }

    /// Run the two-phase loop: n_critic critic updates then one generator
    /// update, per generator step. Returns the metrics log (one line per
    /// step) and the periodic validation recall log.
    pub fn train(
        &mut self,
        data: &TrainData,
        out_dir: Option<&Path>,
    ) -> Result<TrainOutputs, TrainError> {
        self.config.validate()?;
        if data.sampleable.is_empty() {
            return Err(TrainError::EmptyBatchSource);
        }
        let mut outputs = TrainOutputs::default();
        while self.step < self.config.gen_steps {
            let mut critic_loss = 0.0;
            let mut wasserstein = 0.0;
            for _ in 0..self.config.n_critic {
                let outcome = match self.critic_update(data) {
                    Ok(o) => o,
                    Err(e) => {
                        self.flush(&outputs, out_dir)?;
                        return Err(e);
                    }
                };
                critic_loss += outcome.loss;
                wasserstein += outcome.wasserstein;
            }
            critic_loss /= self.config.n_critic as f64;
            wasserstein /= self.config.n_critic as f64;
            let gen_loss = match self.generator_update(data) {
                Ok(l) => l,
                Err(e) => {
                    self.flush(&outputs, out_dir)?;
                    return Err(e);
                }
            };
            self.step += 1;
            outputs.metrics_lines.push(format!(
                "{}\t{:.6}\t{:.6}\t{:.6}",
                self.step, critic_loss, gen_loss, wasserstein
            ));
            if self.config.eval_cadence > 0 && self.step.is_multiple_of(self.config.eval_cadence) {
                let recall = self.validation_recall(data)?;
                outputs.recall_lines.push(format!(
                    "{}\t{}\t{:.4}",
                    self.step, self.config.eval_k, recall
                ));
            }
            if self.config.checkpoint_cadence > 0
                && self.step.is_multiple_of(self.config.checkpoint_cadence)
            {
                if let Some(dir) = out_dir {
                    save_checkpoint(&dir.join("checkpoint.bin"), &self.to_checkpoint())?;
                    self.flush(&outputs, out_dir)?;
                    outputs.checkpoints_written += 1;
                }
            }
        }
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("checkpoint.bin"), &self.to_checkpoint())?;
            self.flush(&outputs, out_dir)?;
            outputs.checkpoints_written += 1;
        }
        Ok(outputs)
    }

    /// Mean recall@k over the head of the validation split, using an rng
    /// stream derived from (seed, step) so training randomness is untouched.
    fn validation_recall(&self, data: &TrainData) -> Result<f64, TrainError> {
        let mut rng = SeededRng::new(self.config.seed).derive(&[EVAL_STREAM, self.step]);
        let mut total = 0.0;
        let mut count = 0usize;
        for &image in data.val.iter().take(self.config.eval_slice) {
            if data.truths[image].is_empty() {
                continue;
            }
            let samples = sample_triples(
                &self.gen,
                &data.grids[image],
                self.config.eval_samples,
                &mut rng,
            )?;
            let ranked = rank_triples(&samples, critic_scorer(&self.disc, &data.grids[image]))?;
            let truth: BTreeSet<Triple> = data.truths[image].iter().copied().collect();
            total += recall_at_k(&ranked, &truth, self.config.eval_k)?;
            count += 1;
        }
        Ok(if count == 0 {
            0.0
        } else {
            total / count as f64
        })
    }

    fn flush(&self, outputs: &TrainOutputs, out_dir: Option<&Path>) -> Result<(), TrainError> {
        if let Some(dir) = out_dir {
            std::fs::write(
                dir.join("metrics.tsv"),
                outputs.metrics_lines.join("\n") + "\n",
            )?;
            let recall_text = if outputs.recall_lines.is_empty() {
                String::new()
            } else {
                outputs.recall_lines.join("\n") + "\n"
            };
            std::fs::write(dir.join("val_recall.tsv"), recall_text)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            gen: self.gen.clone(),
            disc: self.disc.clone(),
            adam_gen: self.adam_gen.clone(),
            adam_disc: self.adam_disc.clone(),
            standardizer: self.standardizer.clone(),
            vocab_hash: self.vocab_hash,
            rng_state: self.rng.state(),
            step: self.step,
        }
    }

    pub fn from_checkpoint(cp: Checkpoint) -> Trainer {
        Trainer {
            config: cp.config,
            gen: cp.gen,
            disc: cp.disc,
            adam_gen: cp.adam_gen,
            adam_disc: cp.adam_disc,
            standardizer: cp.standardizer,
            vocab_hash: cp.vocab_hash,
            rng: SeededRng::restore(cp.rng_state.0, cp.rng_state.1),
            step: cp.step,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct TrainOutputs {
    /// `step<TAB>critic_loss<TAB>gen_loss<TAB>wasserstein_estimate` rows.
    pub metrics_lines: Vec<String>,
    /// `step<TAB>k<TAB>recall` rows.
    pub recall_lines: Vec<String>,
    pub checkpoints_written: usize,
}

/// Generator update against an arbitrary differentiable scorer of the three
/// soft outputs; the training loop passes the frozen critic, tests may pass
/// a fixed linear scorer.
#[allow(clippy::too_many_arguments)]
pub fn generator_update_with<S>(
    gen: &mut GeneratorParams,
    adam_gen: &mut AdamState,
    adam_cfg: &AdamConfig,
    batch_size: usize,
    data: &TrainData,
    rng: &mut SeededRng,
    step: u64,
    mut score_fn: S,
) -> Result<f64, TrainError>
where
    S: FnMut(&mut Tape, &FeatureVars, &[Var; 3]) -> Result<Var, NumericsError>,
{
    if data.sampleable.is_empty() {
        return Err(TrainError::EmptyBatchSource);
    }
    let scale = 1.0 / batch_size as f64;
    let mut loss_sum = 0.0;
    for _ in 0..batch_size {
        let image = data.sampleable[rng.range(data.sampleable.len())];
        let mut tape = Tape::new();
        let bound = gen.bind(&mut tape, true);
        let features = bind_features(&mut tape, &data.grids[image]);
        let (gvars, _noise) = generate_vars(&mut tape, &bound, &features, rng)?;
        let score = score_fn(&mut tape, &features, &gvars.soft)?;
        let loss = tape.neg(score);
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(TrainError::NonFinite {
                what: "generator loss",
                step,
            });
        }
        loss_sum += loss_value;
        tape.backward_scaled_into(loss, &mut gen.store, scale)?;
    }
    adam_step(&mut gen.store, adam_gen, adam_cfg);
    Ok(loss_sum * scale)
}
