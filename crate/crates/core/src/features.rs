//! Frozen feature extraction: a deterministic per-cell descriptor mapping an
//! image to L spatial feature vectors of dimension D, plus the corpus-level
//! standardizer and an optional binary feature cache.

use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::scenes::{RenderedImage, BACKGROUND};

/// Descriptor width: mean RGB (3), RGB std (3), horizontal and vertical
/// gradient-magnitude means (2), foreground fraction (1), normalized cell
/// center row/col (2).
pub const FEATURE_DIM: usize = 11;

/// Color distance from the background beyond which a pixel counts as
/// foreground.
pub const FOREGROUND_THRESHOLD: f64 = 0.1;

const CACHE_MAGIC: &[u8; 4] = b"SGFC";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeaturesError {
    #[error("image {h}x{w} not divisible by grid {rows}x{cols}")]
    IndivisibleImage {
        h: usize,
        w: usize,
        rows: usize,
        cols: usize,
    },
    #[error("standardizer needs at least 2 grids, got {0}")]
    InsufficientFit(usize),
    #[error("feature dimension mismatch: grid has {got}, expected {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error("feature cache: {0}")]
    BadCache(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// L feature vectors of dimension D in row-major cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    cells: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(cells: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), cells * dim);
        FeatureGrid { cells, dim, data }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-cell descriptors of the raw image. Deterministic; the spatial cell
/// layout matches the scene grid so attention vectors remain comparable to
/// ground-truth region masks.
pub fn extract_raw(
    image: &RenderedImage,
    grid_rows: usize,
    grid_cols: usize,
) -> Result<FeatureGrid, FeaturesError> {
    if grid_rows == 0
        || grid_cols == 0
        || !image.height.is_multiple_of(grid_rows)
        || !image.width.is_multiple_of(grid_cols)
    {
        return Err(FeaturesError::IndivisibleImage {
            h: image.height,
            w: image.width,
            rows: grid_rows,
            cols: grid_cols,
        });
    }
    let cell_h = image.height / grid_rows;
    let cell_w = image.width / grid_cols;

    // Luminance and clamped-edge gradient magnitudes over the whole image.
    let lum: Vec<f64> = (0..image.height * image.width)
        .map(|i| {
            let base = i * 3;
            (image.data[base] + image.data[base + 1] + image.data[base + 2]) / 3.0
        })
        .collect();
    let grad = |y: usize, x: usize| -> (f64, f64) {
        let here = lum[y * image.width + x];
        let gh = if x + 1 < image.width {
            (lum[y * image.width + x + 1] - here).abs()
        } else {
            0.0
        };
        let gv = if y + 1 < image.height {
            (lum[(y + 1) * image.width + x] - here).abs()
        } else {
            0.0
        };
        (gh, gv)
    };

    let mut data = Vec::with_capacity(grid_rows * grid_cols * FEATURE_DIM);
    for row in 0..grid_rows {
        for col in 0..grid_cols {
            let mut sum = [0.0f64; 3];
            let mut sum_sq = [0.0f64; 3];
            let mut gh_sum = 0.0;
            let mut gv_sum = 0.0;
            let mut fg = 0usize;
            let n = (cell_h * cell_w) as f64;
            for y in row * cell_h..(row + 1) * cell_h {
                for x in col * cell_w..(col + 1) * cell_w {
                    let px = image.pixel(y, x);
                    for c in 0..3 {
                        sum[c] += px[c];
                        sum_sq[c] += px[c] * px[c];
                    }
                    let (gh, gv) = grad(y, x);
                    gh_sum += gh;
                    gv_sum += gv;
                    let dist = px
                        .iter()
                        .zip(&BACKGROUND)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    if dist > FOREGROUND_THRESHOLD {
                        fg += 1;
                    }
                }
            }
            data.extend(sum.iter().map(|s| s / n));
            for (s, sq) in sum.iter().zip(&sum_sq) {
                let mean = s / n;
                data.push((sq / n - mean * mean).max(0.0).sqrt());
            }
            data.push(gh_sum / n);
            data.push(gv_sum / n);
            data.push(fg as f64 / n);
            data.push((row as f64 + 0.5) / grid_rows as f64);
            data.push((col as f64 + 0.5) / grid_cols as f64);
        }
    }
    Ok(FeatureGrid::new(grid_rows * grid_cols, FEATURE_DIM, data))
}

/// Per-dimension mean and standard deviation over the training split,
/// frozen after fitting and stored in every checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl Standardizer {
    /// Pooled over every cell of every training grid; population standard
    /// deviation, floored at `STD_FLOOR`.
    pub fn fit(grids: &[FeatureGrid]) -> Result<Self, FeaturesError> {
        if grids.len() < 2 {
            return Err(FeaturesError::InsufficientFit(grids.len()));
        }
        let dim = grids[0].dim();
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for g in grids {
            if g.dim() != dim {
                return Err(FeaturesError::DimMismatch {
                    got: g.dim(),
                    expected: dim,
                });
            }
            for i in 0..g.cells() {
                for (m, v) in mean.iter_mut().zip(g.cell(i)) {
                    *m += v;
                }
            }
            count += g.cells();
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; dim];
        for g in grids {
            for i in 0..g.cells() {
                for (d, (v, m)) in g.cell(i).iter().zip(&mean).enumerate() {
                    var[d] += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, grid: &FeatureGrid) -> Result<FeatureGrid, FeaturesError> {
        if grid.dim() != self.mean.len() {
            return Err(FeaturesError::DimMismatch {
                got: grid.dim(),
                expected: self.mean.len(),
            });
        }
        let data = grid
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = i % grid.dim();
                (v - self.mean[d]) / self.std[d]
            })
            .collect();
        Ok(FeatureGrid::new(grid.cells(), grid.dim(), data))
    }
}

// ── feature cache ───────────────────────────────────────────────────────

/// Write grids in manifest order: magic, version, L, D header then L x D
/// little-endian f64 per image.
pub fn write_cache(path: &Path, grids: &[FeatureGrid]) -> Result<(), FeaturesError> {
    let (cells, dim) = match grids.first() {
        Some(g) => (g.cells(), g.dim()),
        None => return Err(FeaturesError::BadCache("no grids to write".into())),
    };
    let mut bytes = Vec::with_capacity(16 + grids.len() * cells * dim * 8);
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(cells as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for g in grids {
        if g.cells() != cells || g.dim() != dim {
            return Err(FeaturesError::BadCache("inconsistent grid shapes".into()));
        }
        for v in g.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(std::fs::write(path, bytes)?)
}

pub fn read_cache(path: &Path) -> Result<Vec<FeatureGrid>, FeaturesError> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..4] != CACHE_MAGIC {
        return Err(FeaturesError::BadCache("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(FeaturesError::BadCache(format!(
            "version {version}, expected {CACHE_VERSION}"
        )));
    }
    let cells = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    let per_grid = cells * dim * 8;
    if per_grid == 0 || body.len() % per_grid != 0 {
        return Err(FeaturesError::BadCache("payload length mismatch".into()));
    }
    let mut grids = Vec::with_capacity(body.len() / per_grid);
    for chunk in body.chunks_exact(per_grid) {
        let data = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        grids.push(FeatureGrid::new(cells, dim, data));
    }
    Ok(grids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use crate::scenes::{
        render, sample_scene, Entity, EntityColor, SceneConfig, SceneSpec, ShapeKind,
    };

    fn scene_with(entities: Vec<Entity>) -> SceneSpec {
        SceneSpec {
            grid_rows: 4,
            grid_cols: 4,
            entities,
        }
    }

    fn red_square(row: usize, col: usize, size: usize) -> Entity {
        Entity {
            shape: ShapeKind::Square,
            color: EntityColor::Red,
            row,
            col,
            size,
        }
    }

    #[test]
    fn uniform_background_gives_identical_cells_up_to_coords() {
        let image = render(&scene_with(vec![]), 64, 64).unwrap();
        let grid = extract_raw(&image, 4, 4).unwrap();
        let first = grid.cell(0);
        for i in 1..grid.cells() {
            let c = grid.cell(i);
            assert_eq!(&c[..9], &first[..9], "cell {i}");
            assert!(c[9] != first[9] || c[10] != first[10] || i == 0);
        }
    }

    #[test]
    fn entity_cell_dominates_mean_red() {
        let image = render(&scene_with(vec![red_square(0, 0, 12)]), 64, 64).unwrap();
        let grid = extract_raw(&image, 4, 4).unwrap();
        let red0 = grid.cell(0)[0];
        for i in 1..grid.cells() {
            assert!(red0 > grid.cell(i)[0], "cell {i}");
        }
    }

    #[test]
    fn foreground_fraction_full_and_empty() {
        // size 16 fills the 16px cell exactly
        let image = render(&scene_with(vec![red_square(1, 1, 16)]), 64, 64).unwrap();
        let grid = extract_raw(&image, 4, 4).unwrap();
        assert_eq!(grid.cell(5)[8], 1.0);
        assert_eq!(grid.cell(0)[8], 0.0);
    }

    #[test]
    fn indivisible_grid_rejected() {
        let image = render(&scene_with(vec![]), 64, 64).unwrap();
        assert!(matches!(
            extract_raw(&image, 5, 4),
            Err(FeaturesError::IndivisibleImage { .. })
        ));
    }

    // Moving an entity one grid cell right permutes the non-coordinate
    // features of exactly the two affected cells.
    #[test]
    fn translation_consistency() {
        let a = render(&scene_with(vec![red_square(2, 1, 10)]), 64, 64).unwrap();
        let b = render(&scene_with(vec![red_square(2, 2, 10)]), 64, 64).unwrap();
        let ga = extract_raw(&a, 4, 4).unwrap();
        let gb = extract_raw(&b, 4, 4).unwrap();
        let (from, to) = (2 * 4 + 1, 2 * 4 + 2);
        for i in 0..16 {
            if i == from {
                assert_eq!(&ga.cell(from)[..9], &gb.cell(to)[..9]);
            } else if i == to {
                assert_eq!(&ga.cell(to)[..9], &gb.cell(from)[..9]);
            } else {
                assert_eq!(&ga.cell(i)[..9], &gb.cell(i)[..9], "cell {i}");
            }
        }
    }

    #[test]
    fn standardizer_two_sample_hand_check() {
        // One-cell grids with single values 1 and 3 in dimension 0:
        // mean 2, population std 1.
        let g1 = FeatureGrid::new(1, 2, vec![1.0, 5.0]);
        let g2 = FeatureGrid::new(1, 2, vec![3.0, 5.0]);
        let s = Standardizer::fit(&[g1.clone(), g2]).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std[0], 1.0);
        // constant dimension floored
        assert_eq!(s.std[1], STD_FLOOR);
        let applied = s.apply(&g1).unwrap();
        assert_eq!(applied.cell(0)[0], -1.0);
        assert_eq!(applied.cell(0)[1], 0.0);
    }

    #[test]
    fn fit_requires_two_grids() {
        let g = FeatureGrid::new(1, 1, vec![0.5]);
        assert!(matches!(
            Standardizer::fit(&[g]),
            Err(FeaturesError::InsufficientFit(1))
        ));
        assert!(matches!(
            Standardizer::fit(&[]),
            Err(FeaturesError::InsufficientFit(0))
        ));
    }

    #[test]
    fn fit_then_apply_centers_the_pool() {
        let base = SeededRng::new(23);
        let cfg = SceneConfig::default();
        let grids: Vec<FeatureGrid> = (0..20)
            .map(|i| {
                let mut rng = base.derive(&[2, i]);
                let scene = sample_scene(&mut rng, &cfg).unwrap();
                let image = render(&scene, 64, 64).unwrap();
                extract_raw(&image, 4, 4).unwrap()
            })
            .collect();
        let s = Standardizer::fit(&grids).unwrap();
        let mut pooled = [0.0; FEATURE_DIM];
        let mut count = 0usize;
        for g in &grids {
            let a = s.apply(g).unwrap();
            for i in 0..a.cells() {
                for (p, v) in pooled.iter_mut().zip(a.cell(i)) {
                    *p += v;
                }
            }
            count += g.cells();
        }
        for (d, p) in pooled.iter().enumerate() {
            assert!((p / count as f64).abs() < 1e-9, "dim {d}: {p}");
        }
    }

    #[test]
    fn cache_roundtrip_is_bit_identical() {
        let base = SeededRng::new(3);
        let cfg = SceneConfig::default();
        let grids: Vec<FeatureGrid> = (0..5)
            .map(|i| {
                let mut rng = base.derive(&[4, i]);
                let scene = sample_scene(&mut rng, &cfg).unwrap();
                let image = render(&scene, 64, 64).unwrap();
                extract_raw(&image, 4, 4).unwrap()
            })
            .collect();
        let dir = std::env::temp_dir().join(format!("sggen-feat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("features.bin");
        write_cache(&path, &grids).unwrap();
        let back = read_cache(&path).unwrap();
        assert_eq!(grids, back);
        let _ = std::fs::remove_dir_all(dir);
    }
}
