//! Corpus loading for training and evaluation: manifest, vocabulary,
//! per-image triples as vocabulary ids, raw features (from the cache when
//! present), the 70/15/15 split, and standardization over the training
//! split only.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::features::{extract_raw, read_cache, FeatureGrid, FeaturesError, Standardizer};
use crate::scenes::{parse_manifest, read_ppm, ManifestEntry, ScenesError};
use crate::vocab::{parse_triples, Triple, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus has no images")]
    EmptyCorpus,
    #[error("feature cache holds {got} images, manifest lists {expected}")]
    CacheCount { got: usize, expected: usize },
    #[error(transparent)]
    Scenes(#[from] ScenesError),
    #[error(transparent)]
    Features(#[from] FeaturesError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Contiguous 70/15/15 split; images are i.i.d. by construction so no
/// shuffle is needed and the split is trivially reproducible.
pub fn split_70_15_15(n: usize) -> SplitIndices {
    let train_end = n * 70 / 100;
    let val_end = train_end + n * 15 / 100;
    SplitIndices {
        train: (0..train_end).collect(),
        val: (train_end..val_end).collect(),
        test: (val_end..n).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocabulary: Vocabulary,
    pub manifest: Vec<ManifestEntry>,
    /// Unstandardized feature grids in manifest order.
    pub raw_grids: Vec<FeatureGrid>,
    /// Per image: deduplicated ground-truth triples as vocabulary ids.
    /// Triples containing out-of-vocabulary lexemes are dropped.
    pub truths: Vec<Vec<Triple>>,
    pub split: SplitIndices,
}

impl Dataset {
    pub fn truth_set(&self, image: usize) -> BTreeSet<Triple> {
        self.truths[image].iter().copied().collect()
    }
}

/// Load a corpus directory produced by the corpus generator. Features come
/// from `features.bin` when present (and consistent), otherwise they are
/// extracted from the images; both paths yield identical values.
pub fn load_corpus(
    dir: &Path,
    grid_rows: usize,
    grid_cols: usize,
) -> Result<Dataset, DatasetError> {
    let manifest = parse_manifest(&std::fs::read_to_string(dir.join("manifest"))?)?;
    if manifest.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let vocabulary = Vocabulary::read_file(&dir.join("vocab.tsv"))?;

    let cache_path = dir.join("features.bin");
    let raw_grids = if cache_path.exists() {
        let grids = read_cache(&cache_path)?;
        if grids.len() != manifest.len() {
            return Err(DatasetError::CacheCount {
                got: grids.len(),
                expected: manifest.len(),
            });
        }
        grids
    } else {
        manifest
            .iter()
            .map(|entry| {
                let image = read_ppm(&dir.join("images").join(format!("{}.ppm", entry.image_id)))?;
                Ok(extract_raw(&image, grid_rows, grid_cols)?)
            })
            .collect::<Result<Vec<_>, DatasetError>>()?
    };

    let mut truths = Vec::with_capacity(manifest.len());
    for entry in &manifest {
        let text =
            std::fs::read_to_string(dir.join("triples").join(format!("{}.tsv", entry.image_id)))?;
        let mut ids: Vec<Triple> = parse_triples(&text)?
            .iter()
            .filter_map(|(s, p, o)| vocabulary.triple_from_strs(s, p, o).ok())
            .collect();
        ids.sort();
        ids.dedup();
        truths.push(ids);
    }

    let split = split_70_15_15(manifest.len());
    Ok(Dataset {
        vocabulary,
        manifest,
        raw_grids,
        truths,
        split,
    })
}

/// Standardizer fitted on the training split only, then applied everywhere.
pub fn standardize(dataset: &Dataset) -> Result<(Standardizer, Vec<FeatureGrid>), DatasetError> {
    let train_grids: Vec<FeatureGrid> = dataset
        .split
        .train
        .iter()
        .map(|&i| dataset.raw_grids[i].clone())
        .collect();
    let standardizer = Standardizer::fit(&train_grids)?;
    let grids = dataset
        .raw_grids
        .iter()
        .map(|g| standardizer.apply(g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((standardizer, grids))
}
