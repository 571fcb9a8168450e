//! Adversarial-learning smoke machinery: tiny tasks where one side is
//! frozen and the other must make measurable progress.

use sggen_core::dataset::SplitIndices;
use sggen_core::discriminator::score;
use sggen_core::features::{FeatureGrid, Standardizer};
use sggen_core::generator::sample_triples;
use sggen_core::numerics::{SeededRng, Tensor};
use sggen_core::training::{generator_update_with, TrainConfig, TrainData, Trainer};
use sggen_core::vocab::{one_hot, Triple};

pub const SMOKE_VOCAB: usize = 6;
const FEATURE_DIM: usize = 5;
const CELLS: usize = 4;

pub fn smoke_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 8,
        n_critic: 1,
        gen_steps: 0,
        noise_dim: 4,
        hidden: 8,
        disc_hidden: 8,
        embed_dim: 4,
        attn_hidden: 6,
        eval_cadence: 0,
        checkpoint_cadence: 0,
        seed,
        ..TrainConfig::default()
    }
}

pub fn smoke_trainer(seed: u64) -> Trainer {
    let std = Standardizer {
        mean: vec![0.0; FEATURE_DIM],
        std: vec![1.0; FEATURE_DIM],
    };
    Trainer::new(smoke_config(seed), FEATURE_DIM, CELLS, SMOKE_VOCAB, std, 0).unwrap()
}

/// One random image with two fixed ground-truth triples; everything else in
/// the split is empty so only this image is sampled.
pub fn toy_world(seed: u64) -> (Vec<FeatureGrid>, Vec<Vec<Triple>>, SplitIndices) {
    let mut rng = SeededRng::new(seed);
    let grid = FeatureGrid::new(
        CELLS,
        FEATURE_DIM,
        (0..CELLS * FEATURE_DIM).map(|_| rng.gaussian()).collect(),
    );
    let truths = vec![vec![Triple::new(0, 1, 2), Triple::new(3, 4, 5)]];
    let split = SplitIndices {
        train: vec![0],
        val: vec![],
        test: vec![],
    };
    (vec![grid], truths, split)
}

/// mean critic score of the real triples minus mean critic score of fake
/// samples drawn with a fixed rng stream (paired across measurements).
pub fn real_fake_gap(
    trainer: &Trainer,
    grid: &FeatureGrid,
    truths: &[Triple],
    eval_seed: u64,
) -> f64 {
    let vocab = trainer.gen.dims.vocab;
    let mut real_sum = 0.0;
    for t in truths {
        let hots: Vec<Vec<f64>> = [t.subject, t.predicate, t.object]
            .iter()
            .map(|&id| one_hot(id, vocab).unwrap())
            .collect();
        real_sum += score(&trainer.disc, [&hots[0], &hots[1], &hots[2]], grid).unwrap();
    }
    let real_mean = real_sum / truths.len() as f64;

    let mut rng = SeededRng::new(eval_seed);
    let samples = sample_triples(&trainer.gen, grid, 64, &mut rng).unwrap();
    let fake_mean = samples
        .iter()
        .map(|s| score(&trainer.disc, [&s.soft[0], &s.soft[1], &s.soft[2]], grid).unwrap())
        .sum::<f64>()
        / samples.len() as f64;
    real_mean - fake_mean
}

/// Smoke (a): with the generator frozen, critic updates must widen the
/// real-versus-fake score gap. Returns (gap at step 0, gap after `updates`).
pub fn critic_separation_run(seed: u64, updates: usize) -> (f64, f64) {
    let (grids, truths, split) = toy_world(1000 + seed);
    let data = TrainData::new(&grids, &truths, &split);
    let mut trainer = smoke_trainer(seed);
    let before = real_fake_gap(&trainer, &grids[0], &truths[0], 555);
    for _ in 0..updates {
        trainer.critic_update(&data).unwrap();
    }
    let after = real_fake_gap(&trainer, &grids[0], &truths[0], 555);
    (before, after)
}

/// Fixed linear critic preferring one target triple:
/// score(v) = v1[s] + v2[p] + v3[o].
pub fn linear_target_score(
    trainer: &Trainer,
    grid: &FeatureGrid,
    target: Triple,
    eval_seed: u64,
) -> f64 {
    let mut rng = SeededRng::new(eval_seed);
    let samples = sample_triples(&trainer.gen, grid, 128, &mut rng).unwrap();
    samples
        .iter()
        .map(|s| s.soft[0][target.subject] + s.soft[1][target.predicate] + s.soft[2][target.object])
        .sum::<f64>()
        / samples.len() as f64
}

/// Smoke (b): against the frozen linear critic, generator updates must raise
/// the mean sample score. Returns (score at step 0, score after `updates`).
pub fn generator_progress_run(seed: u64, updates: usize) -> (f64, f64) {
    let (grids, truths, split) = toy_world(2000 + seed);
    let data = TrainData::new(&grids, &truths, &split);
    let mut trainer = smoke_trainer(seed);
    let target = Triple::new(0, 1, 2);
    let vocab = trainer.gen.dims.vocab;
    let before = linear_target_score(&trainer, &grids[0], target, 777);
    let adam_cfg = trainer.config.adam();
    let batch = trainer.config.batch_size;
    for step in 0..updates {
        generator_update_with(
            &mut trainer.gen,
            &mut trainer.adam_gen,
            &adam_cfg,
            batch,
            &data,
            &mut trainer.rng,
            step as u64,
            |tape, _features, soft| {
                let mut total = None;
                for (t, id) in soft
                    .iter()
                    .zip([target.subject, target.predicate, target.object])
                {
                    let w = tape.constant(Tensor::vector(one_hot(id, vocab).unwrap()));
                    let d = tape.dot(w, *t)?;
                    total = Some(match total {
                        Some(acc) => tape.add(acc, d)?,
                        None => d,
                    });
                }
                Ok(total.expect("three positions"))
            },
        )
        .unwrap();
    }
    let after = linear_target_score(&trainer, &grids[0], target, 777);
    (before, after)
}
