//! Critic-ranked top-k selection, recall@k, the random-triple chance floor,
//! the category-pattern diagnostic, and the evaluation report format.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::discriminator::{score, DiscriminatorParams};
use crate::features::FeatureGrid;
use crate::generator::{sample_triples, GeneratorParams, TripleSample};
use crate::numerics::{NumericsError, SeededRng};
use crate::vocab::{Category, Triple, Vocabulary};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to rank")]
    NoSamples,
    #[error("recall is undefined for empty ground truth")]
    EmptyGroundTruth,
    #[error("k must be at least 1")]
    BadK,
    #[error("trials must be at least 1")]
    BadTrials,
    #[error("report line {line}: {what}")]
    BadReportLine { line: usize, what: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Vocab(#[from] crate::vocab::VocabError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedTriple {
    pub triple: Triple,
    pub score: f64,
}

/// Score every sample's soft vectors with the critic, deduplicate identical
/// decoded triples keeping the maximum score, and sort by descending score
/// with ascending triple order breaking ties.
pub fn rank_triples<F>(
    samples: &[TripleSample],
    mut critic: F,
) -> Result<Vec<RankedTriple>, EvalError>
where
    F: FnMut(&TripleSample) -> Result<f64, EvalError>,
{
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    let mut best: Vec<RankedTriple> = Vec::new();
    for sample in samples {
        let s = critic(sample)?;
        match best.iter_mut().find(|r| r.triple == sample.triple) {
            Some(r) => r.score = r.score.max(s),
            None => best.push(RankedTriple {
                triple: sample.triple,
                score: s,
            }),
        }
    }
    best.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite critic scores")
            .then(a.triple.cmp(&b.triple))
    });
    Ok(best)
}

/// Critic adapter for ranking generated samples.
pub fn critic_scorer<'a>(
    disc: &'a DiscriminatorParams,
    grid: &'a FeatureGrid,
) -> impl FnMut(&TripleSample) -> Result<f64, EvalError> + 'a {
    move |sample: &TripleSample| {
        Ok(score(
            disc,
            [&sample.soft[0], &sample.soft[1], &sample.soft[2]],
            grid,
        )?)
    }
}

/// 100 · |top-k ∩ ground truth| / |ground truth| with top-k the first
/// min(k, len) ranked triples.
pub fn recall_at_k(
    ranked: &[RankedTriple],
    ground_truth: &BTreeSet<Triple>,
    k: usize,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::BadK);
    }
    if ground_truth.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|r| ground_truth.contains(&r.triple))
        .count();
    Ok(100.0 * hits as f64 / ground_truth.len() as f64)
}

/// Mean recall@k of k uniformly random triples over the given number of
/// trials: the chance floor a trained ranking must clear. Each of the k
/// draws counts on its own, so a ground truth covering the whole triple
/// space scores exactly 100 at k = |ground truth| regardless of the draw.
pub fn random_baseline(
    vocabulary: &Vocabulary,
    ground_truth: &BTreeSet<Triple>,
    k: usize,
    rng: &mut SeededRng,
    trials: usize,
) -> Result<f64, EvalError> {
    if trials == 0 {
        return Err(EvalError::BadTrials);
    }
    if ground_truth.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let size = vocabulary.size();
    let mut total = 0.0;
    for _ in 0..trials {
        let hits = (0..k)
            .filter(|_| {
                let draw = Triple::new(rng.range(size), rng.range(size), rng.range(size));
                ground_truth.contains(&draw)
            })
            .count();
        total += 100.0 * hits as f64 / ground_truth.len() as f64;
    }
    Ok(total / trials as f64)
}

/// Fraction of triples matching neither (object, relation, object) nor
/// (object, "is", attribute). Generation is unconstrained, so this is a
/// diagnostic, not a filter.
pub fn category_violation_rate(triples: &[Triple], vocabulary: &Vocabulary) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let is_id = vocabulary.id("is").ok();
    let well_formed = |t: &Triple| -> bool {
        let cat = |id: usize| vocabulary.category(id);
        match (cat(t.subject), cat(t.predicate), cat(t.object)) {
            (Ok(Category::Object), Ok(pc), Ok(oc)) => {
                if Some(t.predicate) == is_id {
                    oc == Category::Attribute
                } else {
                    pc == Category::Relation && oc == Category::Object
                }
            }
            _ => false,
        }
    };
    let violations = triples.iter().filter(|t| !well_formed(t)).count();
    violations as f64 / triples.len() as f64
}

// ── per-image evaluation and the report format ──────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    pub k: usize,
    pub recall: f64,
    pub baseline: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub samples_per_image: usize,
    pub baseline_trials: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            samples_per_image: 500,
            baseline_trials: 200,
        }
    }
}

/// Evaluate one image: draw samples, rank them with the critic, and compute
/// recall@k, the random baseline, and the violation rate of the top k.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_image(
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    vocabulary: &Vocabulary,
    image_id: &str,
    grid: &FeatureGrid,
    ground_truth: &BTreeSet<Triple>,
    ks: &[usize],
    settings: &EvalSettings,
    rng: &mut SeededRng,
) -> Result<Vec<EvalRow>, EvalError> {
    let samples = sample_triples(gen, grid, settings.samples_per_image, rng)?;
    let ranked = rank_triples(&samples, critic_scorer(disc, grid))?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let recall = recall_at_k(&ranked, ground_truth, k)?;
        let baseline = random_baseline(vocabulary, ground_truth, k, rng, settings.baseline_trials)?;
        let top: Vec<Triple> = ranked.iter().take(k).map(|r| r.triple).collect();
        rows.push(EvalRow {
            image_id: image_id.to_string(),
            k,
            recall,
            baseline,
            violation_rate: category_violation_rate(&top, vocabulary),
        });
    }
    Ok(rows)
}

/// Append one MEAN row per k, averaging over images.
pub fn with_mean_rows(mut rows: Vec<EvalRow>) -> Vec<EvalRow> {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut means = Vec::with_capacity(ks.len());
    for k in ks {
        let of_k: Vec<&EvalRow> = rows.iter().filter(|r| r.k == k).collect();
        let n = of_k.len() as f64;
        means.push(EvalRow {
            image_id: "MEAN".to_string(),
            k,
            recall: of_k.iter().map(|r| r.recall).sum::<f64>() / n,
            baseline: of_k.iter().map(|r| r.baseline).sum::<f64>() / n,
            violation_rate: of_k.iter().map(|r| r.violation_rate).sum::<f64>() / n,
        });
    }
    rows.extend(means);
    rows
}

/// `image-id<TAB>k<TAB>recall<TAB>baseline<TAB>violation-rate` per row.
pub fn serialize_report(rows: &[EvalRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
            r.image_id, r.k, r.recall, r.baseline, r.violation_rate
        ));
    }
    out
}

pub fn parse_report(text: &str) -> Result<Vec<EvalRow>, EvalError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| EvalError::BadReportLine {
            line: i + 1,
            what: what.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        rows.push(EvalRow {
            image_id: fields[0].to_string(),
            k: fields[1].parse().map_err(|_| bad("bad k"))?,
            recall: fields[2].parse().map_err(|_| bad("bad recall"))?,
            baseline: fields[3].parse().map_err(|_| bad("bad baseline"))?,
            violation_rate: fields[4].parse().map_err(|_| bad("bad violation rate"))?,
        });
    }
    Ok(rows)
}
