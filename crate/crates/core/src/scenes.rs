//! Synthetic scene corpus: colored shapes on a grid, rendered to raster
//! images with exact ground-truth triples and per-entity region masks.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::numerics::SeededRng;
use crate::vocab::build_vocabulary;
use crate::vocab::Vocabulary;

pub const SHAPE_LEXEMES: [&str; 3] = ["square", "circle", "triangle"];
pub const COLOR_LEXEMES: [&str; 6] = ["red", "green", "blue", "yellow", "white", "gray"];
pub const RELATION_LEXEMES: [&str; 3] = ["left-of", "above", "near"];
pub const IS_LEXEME: &str = "is";

/// Background color; every entity color sits far from it.
pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];

#[derive(Debug, Error)]
pub enum ScenesError {
    #[error("impossible scene config: {0}")]
    ImpossibleConfig(String),
    #[error("canvas {h}x{w} not divisible by grid {rows}x{cols}")]
    IndivisibleCanvas {
        h: usize,
        w: usize,
        rows: usize,
        cols: usize,
    },
    #[error("mask length {given} does not match grid cell count {expected}")]
    MaskLength { given: usize, expected: usize },
    #[error("entity index {0} out of range")]
    EntityIndex(usize),
    #[error("{file}: line {line}: {what}")]
    BadRecord {
        file: &'static str,
        line: usize,
        what: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vocab(#[from] crate::vocab::VocabError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub fn lexeme(&self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }

    fn from_index(i: usize) -> Self {
        match i {
            0 => ShapeKind::Square,
            1 => ShapeKind::Circle,
            _ => ShapeKind::Triangle,
        }
    }

    /// Ideal pixel area for a drawn size `s`.
    pub fn area(&self, s: f64) -> f64 {
        match self {
            ShapeKind::Square => s * s,
            ShapeKind::Circle => std::f64::consts::PI * (s / 2.0) * (s / 2.0),
            ShapeKind::Triangle => 0.5 * s * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityColor {
    Red,
    Green,
    Blue,
    Yellow,
    White,
    Gray,
}

impl EntityColor {
    pub fn lexeme(&self) -> &'static str {
        match self {
            EntityColor::Red => "red",
            EntityColor::Green => "green",
            EntityColor::Blue => "blue",
            EntityColor::Yellow => "yellow",
            EntityColor::White => "white",
            EntityColor::Gray => "gray",
        }
    }

    pub fn rgb(&self) -> [f64; 3] {
        match self {
            EntityColor::Red => [1.0, 0.0, 0.0],
            EntityColor::Green => [0.0, 1.0, 0.0],
            EntityColor::Blue => [0.0, 0.0, 1.0],
            EntityColor::Yellow => [1.0, 1.0, 0.0],
            EntityColor::White => [1.0, 1.0, 1.0],
            EntityColor::Gray => [0.5, 0.5, 0.5],
        }
    }

    fn from_index(i: usize) -> Self {
        match i {
            0 => EntityColor::Red,
            1 => EntityColor::Green,
            2 => EntityColor::Blue,
            3 => EntityColor::Yellow,
            4 => EntityColor::White,
            _ => EntityColor::Gray,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entity {
    pub shape: ShapeKind,
    pub color: EntityColor,
    pub row: usize,
    pub col: usize,
    /// Drawn size in pixels (side length / diameter / base width).
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub entities: Vec<Entity>,
}

impl SceneSpec {
    pub fn cell_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Candidate entity sizes in pixels; must leave a margin inside a cell.
    pub sizes: Vec<usize>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid_rows: 4,
            grid_cols: 4,
            min_entities: 2,
            max_entities: 4,
            image_height: 64,
            image_width: 64,
            sizes: vec![8, 10, 12],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), ScenesError> {
        let cells = self.grid_rows * self.grid_cols;
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(ScenesError::ImpossibleConfig("empty grid".into()));
        }
        if self.min_entities == 0 || self.min_entities > self.max_entities {
            return Err(ScenesError::ImpossibleConfig(format!(
                "entity range {}..={} invalid",
                self.min_entities, self.max_entities
            )));
        }
        if self.max_entities > cells {
            return Err(ScenesError::ImpossibleConfig(format!(
                "{} entities cannot fit {} cells",
                self.max_entities, cells
            )));
        }
        if !self.image_height.is_multiple_of(self.grid_rows)
            || !self.image_width.is_multiple_of(self.grid_cols)
        {
            return Err(ScenesError::IndivisibleCanvas {
                h: self.image_height,
                w: self.image_width,
                rows: self.grid_rows,
                cols: self.grid_cols,
            });
        }
        if self.sizes.is_empty() {
            return Err(ScenesError::ImpossibleConfig("no sizes".into()));
        }
        let cell = (self.image_height / self.grid_rows).min(self.image_width / self.grid_cols);
        if self.sizes.iter().any(|s| s + 4 > cell) {
            return Err(ScenesError::ImpossibleConfig(format!(
                "sizes {:?} leave no margin in {cell}px cells",
                self.sizes
            )));
        }
        Ok(())
    }
}

/// Entity count uniform in [min, max]; cells via a partial Fisher-Yates
/// shuffle (uniform, collision-free); shape, color, size uniform per entity.
pub fn sample_scene(rng: &mut SeededRng, config: &SceneConfig) -> Result<SceneSpec, ScenesError> {
    config.validate()?;
    let span = config.max_entities - config.min_entities + 1;
    let count = config.min_entities + rng.range(span);
    let mut cells: Vec<(usize, usize)> = (0..config.grid_rows)
        .flat_map(|r| (0..config.grid_cols).map(move |c| (r, c)))
        .collect();
    for i in 0..count {
        let j = i + rng.range(cells.len() - i);
        cells.swap(i, j);
    }
    let entities = (0..count)
        .map(|i| {
            let shape = ShapeKind::from_index(rng.range(SHAPE_LEXEMES.len()));
            let color = EntityColor::from_index(rng.range(COLOR_LEXEMES.len()));
            let size = config.sizes[rng.range(config.sizes.len())];
            Entity {
                shape,
                color,
                row: cells[i].0,
                col: cells[i].1,
                size,
            }
        })
        .collect();
    Ok(SceneSpec {
        grid_rows: config.grid_rows,
        grid_cols: config.grid_cols,
        entities,
    })
}

/// A relation between two entities of a scene, by entity index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationTriple {
    pub subject: usize,
    pub predicate: &'static str,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub relation_triples: Vec<RelationTriple>,
    /// One per entity: (entity index, color lexeme).
    pub attribute_triples: Vec<(usize, &'static str)>,
    /// Per entity, {0,1} over the L grid cells.
    pub masks: Vec<Vec<u8>>,
}

impl GroundTruth {
    /// Deduplicated lexeme-level triples, sorted; entity identity is
    /// dropped, which is exactly the granularity of the triple files and
    /// of recall evaluation.
    pub fn lexeme_triples(&self, scene: &SceneSpec) -> Vec<(String, String, String)> {
        let mut set: BTreeSet<(String, String, String)> = BTreeSet::new();
        for r in &self.relation_triples {
            set.insert((
                scene.entities[r.subject].shape.lexeme().to_string(),
                r.predicate.to_string(),
                scene.entities[r.object].shape.lexeme().to_string(),
            ));
        }
        for (e, color) in &self.attribute_triples {
            set.insert((
                scene.entities[*e].shape.lexeme().to_string(),
                IS_LEXEME.to_string(),
                color.to_string(),
            ));
        }
        set.into_iter().collect()
    }
}

fn chebyshev(a: &Entity, b: &Entity) -> usize {
    a.row.abs_diff(b.row).max(a.col.abs_diff(b.col))
}

/// Predicate for the ordered pair (a, b): left-of when a is in the same row
/// strictly left of b, above when in the same column strictly above, else
/// near when the cells are Chebyshev-adjacent.
pub fn relation_between(a: &Entity, b: &Entity) -> Option<&'static str> {
    if a.row == b.row && a.col < b.col {
        Some("left-of")
    } else if a.col == b.col && a.row < b.row {
        Some("above")
    } else if chebyshev(a, b) == 1 {
        Some("near")
    } else {
        None
    }
}

/// Exact ground truth for a scene: one attribute triple per entity, relation
/// triples over every ordered entity pair, and per-entity region masks.
/// Pure: identical scenes yield identical output.
pub fn ground_truth_triples(scene: &SceneSpec) -> GroundTruth {
    let mut relation_triples = Vec::new();
    for (i, a) in scene.entities.iter().enumerate() {
        for (j, b) in scene.entities.iter().enumerate() {
            if i == j {
                continue;
            }
            if let Some(predicate) = relation_between(a, b) {
                relation_triples.push(RelationTriple {
                    subject: i,
                    predicate,
                    object: j,
                });
            }
        }
    }
    let attribute_triples = scene
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e.color.lexeme()))
        .collect();
    let masks = (0..scene.entities.len())
        .map(|i| region_mask(scene, i, scene.cell_count()).expect("own geometry"))
        .collect();
    GroundTruth {
        relation_triples,
        attribute_triples,
        masks,
    }
}

/// {0,1} vector over the L feature cells, 1 exactly on the cells overlapping
/// the entity's grid cell. The feature grid must match the scene grid.
pub fn region_mask(scene: &SceneSpec, entity: usize, l: usize) -> Result<Vec<u8>, ScenesError> {
    if l != scene.cell_count() {
        return Err(ScenesError::MaskLength {
            given: l,
            expected: scene.cell_count(),
        });
    }
    let e = scene
        .entities
        .get(entity)
        .ok_or(ScenesError::EntityIndex(entity))?;
    let mut mask = vec![0u8; l];
    mask[e.row * scene.grid_cols + e.col] = 1;
    Ok(mask)
}

/// 8-bit-quantized RGB raster; values are exact multiples of 1/255 so a
/// write/read cycle through the image file reproduces them bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub height: usize,
    pub width: usize,
    /// Row-major, 3 channels per pixel, values in [0, 1].
    pub data: Vec<f64>,
}

impl RenderedImage {
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let base = (y * self.width + x) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }
}

fn quantize(v: f64) -> f64 {
    (v * 255.0).round() / 255.0
}

fn inside(shape: ShapeKind, dx: f64, dy: f64, s: f64) -> bool {
    match shape {
        ShapeKind::Square => dx.abs() <= s / 2.0 && dy.abs() <= s / 2.0,
        ShapeKind::Circle => dx * dx + dy * dy <= (s / 2.0) * (s / 2.0),
        ShapeKind::Triangle => {
            // apex (0, -s/2), base corners (±s/2, +s/2)
            if dy < -s / 2.0 || dy > s / 2.0 {
                return false;
            }
            let half_width = (dy + s / 2.0) / 2.0;
            dx.abs() <= half_width
        }
    }
}

/// Deterministic rasterization of a scene onto a d1 x d2 canvas; each entity
/// is drawn centered in its grid cell over the constant background.
pub fn render(scene: &SceneSpec, d1: usize, d2: usize) -> Result<RenderedImage, ScenesError> {
    if !d1.is_multiple_of(scene.grid_rows) || !d2.is_multiple_of(scene.grid_cols) {
        return Err(ScenesError::IndivisibleCanvas {
            h: d1,
            w: d2,
            rows: scene.grid_rows,
            cols: scene.grid_cols,
        });
    }
    let cell_h = d1 / scene.grid_rows;
    let cell_w = d2 / scene.grid_cols;
    let mut data = Vec::with_capacity(d1 * d2 * 3);
    for _ in 0..d1 * d2 {
        data.extend_from_slice(&BACKGROUND);
    }
    let mut image = RenderedImage {
        height: d1,
        width: d2,
        data,
    };
    for e in &scene.entities {
        let cy = (e.row * cell_h) as f64 + cell_h as f64 / 2.0;
        let cx = (e.col * cell_w) as f64 + cell_w as f64 / 2.0;
        let rgb = e.color.rgb().map(quantize);
        let y0 = e.row * cell_h;
        let x0 = e.col * cell_w;
        for y in y0..y0 + cell_h {
            for x in x0..x0 + cell_w {
                let dy = (y as f64 + 0.5) - cy;
                let dx = (x as f64 + 0.5) - cx;
                if inside(e.shape, dx, dy, e.size as f64) {
                    let base = (y * d2 + x) * 3;
                    image.data[base..base + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    Ok(image)
}

// ── corpus on disk ──────────────────────────────────────────────────────

/// Binary PPM (P6), 8-bit RGB.
pub fn write_ppm(path: &Path, image: &RenderedImage) -> Result<(), ScenesError> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend(image.data.iter().map(|v| (v * 255.0).round() as u8));
    Ok(std::fs::write(path, bytes)?)
}

pub fn read_ppm(path: &Path) -> Result<RenderedImage, ScenesError> {
    let bytes = std::fs::read(path)?;
    let bad = |what: &str| ScenesError::BadRecord {
        file: "ppm",
        line: 0,
        what: what.to_string(),
    };
    let header_end = bytes
        .windows(1)
        .enumerate()
        .scan(0usize, |fields, (i, w)| {
            if w[0].is_ascii_whitespace() {
                if i > 0 && !bytes[i - 1].is_ascii_whitespace() {
                    *fields += 1;
                }
                if *fields == 4 {
                    return Some(Some(i + 1));
                }
            }
            Some(None)
        })
        .flatten()
        .next()
        .ok_or_else(|| bad("truncated header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("non-utf8 header"))?;
    let mut tokens = header.split_ascii_whitespace();
    if tokens.next() != Some("P6") {
        return Err(bad("not a P6 file"));
    }
    let width: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad width"))?;
    let height: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad height"))?;
    if tokens.next() != Some("255") {
        return Err(bad("expected 8-bit maxval"));
    }
    let body = &bytes[header_end..];
    if body.len() != width * height * 3 {
        return Err(bad("pixel payload length mismatch"));
    }
    Ok(RenderedImage {
        height,
        width,
        data: body.iter().map(|b| *b as f64 / 255.0).collect(),
    })
}

/// One mask line per entity: `entity-index<TAB>L space-separated bits`.
pub fn serialize_masks(masks: &[Vec<u8>]) -> String {
    let mut out = String::new();
    for (i, mask) in masks.iter().enumerate() {
        out.push_str(&i.to_string());
        out.push('\t');
        let bits: Vec<String> = mask.iter().map(|b| b.to_string()).collect();
        out.push_str(&bits.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_masks(text: &str) -> Result<Vec<Vec<u8>>, ScenesError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| ScenesError::BadRecord {
            file: "masks",
            line: i + 1,
            what: what.to_string(),
        };
        let (index, bits) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let index: usize = index.parse().map_err(|_| bad("bad entity index"))?;
        if index != out.len() {
            return Err(bad("entity indices must be consecutive"));
        }
        let mask: Result<Vec<u8>, _> = bits
            .split(' ')
            .map(|b| match b {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                _ => Err(bad("mask bits must be 0 or 1")),
            })
            .collect();
        out.push(mask?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub entity_count: usize,
    pub seed: u64,
}

pub fn serialize_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.image_id, e.entity_count, e.seed));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ScenesError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| ScenesError::BadRecord {
            file: "manifest",
            line: i + 1,
            what: what.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        out.push(ManifestEntry {
            image_id: fields[0].to_string(),
            entity_count: fields[1].parse().map_err(|_| bad("bad entity count"))?,
            seed: fields[2].parse().map_err(|_| bad("bad seed"))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub images: usize,
    pub scene: SceneConfig,
    pub seed: u64,
    pub top_objects: usize,
    pub top_relations: usize,
    pub top_attributes: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            images: 2000,
            scene: SceneConfig::default(),
            seed: 17,
            top_objects: 150,
            top_relations: 50,
            top_attributes: 150,
        }
    }
}

pub const CORPUS_STREAM: u64 = 0x5345;

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

/// Generate `images/`, `triples/`, `masks/`, `manifest`, and `vocab.tsv`
/// under `dir`. Fully determined by (seed, config): per-image randomness is
/// derived from the seed and image index, so output files are byte-identical
/// across runs.
pub fn generate_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<Vocabulary, ScenesError> {
    cfg.scene.validate()?;
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("triples"))?;
    std::fs::create_dir_all(dir.join("masks"))?;

    let base = SeededRng::new(cfg.seed);
    let mut manifest = Vec::with_capacity(cfg.images);
    let mut all_triples: Vec<(String, String, String)> = Vec::new();
    for index in 0..cfg.images {
        let mut rng = base.derive(&[CORPUS_STREAM, index as u64]);
        let (scene_seed, _) = rng.state();
        let scene = sample_scene(&mut rng, &cfg.scene)?;
        let truth = ground_truth_triples(&scene);
        let image = render(&scene, cfg.scene.image_height, cfg.scene.image_width)?;
        let id = image_id(index);
        write_ppm(&dir.join("images").join(format!("{id}.ppm")), &image)?;
        let triples = truth.lexeme_triples(&scene);
        std::fs::write(
            dir.join("triples").join(format!("{id}.tsv")),
            crate::vocab::serialize_triples(&triples),
        )?;
        std::fs::write(
            dir.join("masks").join(format!("{id}.tsv")),
            serialize_masks(&truth.masks),
        )?;
        manifest.push(ManifestEntry {
            image_id: id,
            entity_count: scene.entities.len(),
            seed: scene_seed,
        });
        all_triples.extend(triples);
    }
    std::fs::write(dir.join("manifest"), serialize_manifest(&manifest))?;
    let vocab = build_vocabulary(
        &all_triples,
        cfg.top_objects,
        cfg.top_relations,
        cfg.top_attributes,
    )?;
    vocab.write_file(&dir.join("vocab.tsv"))?;
    Ok(vocab)
}

/// Rebuild the scene of a manifest entry from its recorded seed.
pub fn scene_from_manifest(
    entry: &ManifestEntry,
    scene_cfg: &SceneConfig,
) -> Result<SceneSpec, ScenesError> {
    let mut rng = SeededRng::restore(entry.seed, 0);
    sample_scene(&mut rng, scene_cfg)
}
