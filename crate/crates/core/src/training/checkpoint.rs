//! Versioned binary checkpoint: magic bytes, format version, then
//! length-prefixed named sections holding the config as key-value text,
//! every parameter tensor (name + shape + little-endian f64 data), both
//! Adam states, the standardizer, the vocabulary hash, the rng state, and
//! the step counter. Save → load → save is byte-identical.

use std::path::Path;

use super::{TrainConfig, TrainError};
use crate::discriminator::{DiscriminatorDims, DiscriminatorParams};
use crate::features::Standardizer;
use crate::generator::{GeneratorDims, GeneratorParams};
use crate::numerics::{AdamState, ParamId, ParamStore, SeededRng};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub gen: GeneratorParams,
    pub disc: DiscriminatorParams,
    pub adam_gen: AdamState,
    pub adam_disc: AdamState,
    pub standardizer: Standardizer,
    pub vocab_hash: u64,
    pub rng_state: (u64, u64),
    pub step: u64,
}

impl Checkpoint {
    /// Refuse to pair this checkpoint with a vocabulary other than the one
    /// it was trained against.
    pub fn verify_vocab_hash(&self, provided: u64) -> Result<(), TrainError> {
        if self.vocab_hash != provided {
            return Err(TrainError::VocabHashMismatch {
                checkpoint: self.vocab_hash,
                provided,
            });
        }
        Ok(())
    }
}

// ── config text form ────────────────────────────────────────────────────

pub fn config_to_kv(c: &TrainConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    };
    kv("attn_hidden", c.attn_hidden.to_string());
    kv("batch_size", c.batch_size.to_string());
    kv("beta1", c.beta1.to_string());
    kv("beta2", c.beta2.to_string());
    kv("checkpoint_cadence", c.checkpoint_cadence.to_string());
    kv("disc_hidden", c.disc_hidden.to_string());
    kv("embed_dim", c.embed_dim.to_string());
    kv("eval_cadence", c.eval_cadence.to_string());
    kv("eval_k", c.eval_k.to_string());
    kv("eval_samples", c.eval_samples.to_string());
    kv("eval_slice", c.eval_slice.to_string());
    kv("gen_steps", c.gen_steps.to_string());
    kv("hidden", c.hidden.to_string());
    kv("lambda", c.lambda.to_string());
    kv("lr", c.lr.to_string());
    kv("n_critic", c.n_critic.to_string());
    kv("noise_dim", c.noise_dim.to_string());
    kv("seed", c.seed.to_string());
    out
}

pub fn config_from_kv(text: &str) -> Result<TrainConfig, TrainError> {
    let mut c = TrainConfig::default();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| TrainError::BadCheckpoint(format!("config line {} lacks '='", i + 1)))?;
        let bad = || TrainError::BadCheckpoint(format!("bad config value for {key}"));
        match key {
            "attn_hidden" => c.attn_hidden = value.parse().map_err(|_| bad())?,
            "batch_size" => c.batch_size = value.parse().map_err(|_| bad())?,
            "beta1" => c.beta1 = value.parse().map_err(|_| bad())?,
            "beta2" => c.beta2 = value.parse().map_err(|_| bad())?,
            "checkpoint_cadence" => c.checkpoint_cadence = value.parse().map_err(|_| bad())?,
            "disc_hidden" => c.disc_hidden = value.parse().map_err(|_| bad())?,
            "embed_dim" => c.embed_dim = value.parse().map_err(|_| bad())?,
            "eval_cadence" => c.eval_cadence = value.parse().map_err(|_| bad())?,
            "eval_k" => c.eval_k = value.parse().map_err(|_| bad())?,
            "eval_samples" => c.eval_samples = value.parse().map_err(|_| bad())?,
            "eval_slice" => c.eval_slice = value.parse().map_err(|_| bad())?,
            "gen_steps" => c.gen_steps = value.parse().map_err(|_| bad())?,
            "hidden" => c.hidden = value.parse().map_err(|_| bad())?,
            "lambda" => c.lambda = value.parse().map_err(|_| bad())?,
            "lr" => c.lr = value.parse().map_err(|_| bad())?,
            "n_critic" => c.n_critic = value.parse().map_err(|_| bad())?,
            "noise_dim" => c.noise_dim = value.parse().map_err(|_| bad())?,
            "seed" => c.seed = value.parse().map_err(|_| bad())?,
            other => {
                return Err(TrainError::BadCheckpoint(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
    }
    Ok(c)
}

// ── binary encoding ─────────────────────────────────────────────────────

fn push_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn encode_store(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.shape().len() as u8);
        for extent in p.value.shape() {
            out.extend_from_slice(&(*extent as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(state.first_moment.len() as u32).to_le_bytes());
    for (m, v) in state.first_moment.iter().zip(&state.second_moment) {
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for x in v.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn encode_gen_dims(d: &GeneratorDims) -> Vec<u8> {
    [
        d.feature_dim,
        d.cells,
        d.hidden,
        d.noise,
        d.attn_hidden,
        d.vocab,
    ]
    .iter()
    .flat_map(|v| (*v as u64).to_le_bytes())
    .collect()
}

fn encode_disc_dims(d: &DiscriminatorDims) -> Vec<u8> {
    [
        d.feature_dim,
        d.cells,
        d.hidden,
        d.embed,
        d.attn_hidden,
        d.vocab,
    ]
    .iter()
    .flat_map(|v| (*v as u64).to_le_bytes())
    .collect()
}

pub fn checkpoint_to_bytes(cp: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    push_section(&mut out, "config", config_to_kv(&cp.config).as_bytes());
    push_section(&mut out, "gen_dims", &encode_gen_dims(&cp.gen.dims));
    push_section(&mut out, "disc_dims", &encode_disc_dims(&cp.disc.dims));
    push_section(&mut out, "gen_params", &encode_store(&cp.gen.store));
    push_section(&mut out, "disc_params", &encode_store(&cp.disc.store));
    push_section(&mut out, "adam_gen", &encode_adam(&cp.adam_gen));
    push_section(&mut out, "adam_disc", &encode_adam(&cp.adam_disc));
    let mut std_payload = Vec::new();
    std_payload.extend_from_slice(&(cp.standardizer.mean.len() as u32).to_le_bytes());
    for v in cp.standardizer.mean.iter().chain(&cp.standardizer.std) {
        std_payload.extend_from_slice(&v.to_le_bytes());
    }
    push_section(&mut out, "standardizer", &std_payload);
    push_section(&mut out, "vocab_hash", &cp.vocab_hash.to_le_bytes());
    let mut rng_payload = Vec::new();
    rng_payload.extend_from_slice(&cp.rng_state.0.to_le_bytes());
    rng_payload.extend_from_slice(&cp.rng_state.1.to_le_bytes());
    push_section(&mut out, "rng", &rng_payload);
    push_section(&mut out, "step", &cp.step.to_le_bytes());
    out
}

// ── binary decoding ─────────────────────────────────────────────────────

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.bytes.len() {
            return Err(TrainError::BadCheckpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String, TrainError> {
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| TrainError::BadCheckpoint("non-utf8 name".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn expect_section<'a>(cursor: &mut Cursor<'a>, name: &str) -> Result<Cursor<'a>, TrainError> {
    let name_len = cursor.u16()? as usize;
    let found = cursor.string(name_len)?;
    if found != name {
        return Err(TrainError::BadCheckpoint(format!(
            "expected section `{name}`, found `{found}`"
        )));
    }
    let payload_len = cursor.u64()? as usize;
    let payload = cursor.take(payload_len)?;
    Ok(Cursor {
        bytes: payload,
        pos: 0,
    })
}

fn decode_six(cursor: &mut Cursor) -> Result<[usize; 6], TrainError> {
    let mut out = [0usize; 6];
    for v in &mut out {
        *v = cursor.u64()? as usize;
    }
    Ok(out)
}

/// Copy stored tensors into a freshly initialized store, by registration
/// order, verifying names and shapes.
fn decode_into_store(cursor: &mut Cursor, store: &mut ParamStore) -> Result<(), TrainError> {
    let count = cursor.u32()? as usize;
    if count != store.len() {
        return Err(TrainError::BadCheckpoint(format!(
            "parameter count {count}, expected {}",
            store.len()
        )));
    }
    for i in 0..count {
        let name_len = cursor.u16()? as usize;
        let name = cursor.string(name_len)?;
        let rank = cursor.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.u64()? as usize);
        }
        let param = store.get_mut(ParamId(i));
        if param.name != name || param.value.shape() != shape.as_slice() {
            return Err(TrainError::BadCheckpoint(format!(
                "parameter {i}: stored `{name}` {shape:?}, expected `{}` {:?}",
                param.name,
                param.value.shape()
            )));
        }
        for v in param.value.data_mut() {
            *v = cursor.f64()?;
        }
        param.grad.fill(0.0);
    }
    Ok(())
}

fn decode_adam(cursor: &mut Cursor, store: &ParamStore) -> Result<AdamState, TrainError> {
    let step = cursor.u64()?;
    let count = cursor.u32()? as usize;
    if count != store.len() {
        return Err(TrainError::BadCheckpoint(
            "adam state count mismatch".into(),
        ));
    }
    let mut state = AdamState::for_store(store);
    state.step = step;
    for i in 0..count {
        let len = cursor.u64()? as usize;
        if len != state.first_moment[i].len() {
            return Err(TrainError::BadCheckpoint(
                "adam tensor length mismatch".into(),
            ));
        }
        for v in state.first_moment[i].data_mut() {
            *v = cursor.f64()?;
        }
        for v in state.second_moment[i].data_mut() {
            *v = cursor.f64()?;
        }
    }
    Ok(state)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    if cursor.take(4)? != CHECKPOINT_MAGIC {
        return Err(TrainError::BadCheckpoint("bad magic".into()));
    }
    let version = cursor.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut config_section = expect_section(&mut cursor, "config")?;
    let config_text = config_section.string(config_section.bytes.len())?;
    let config = config_from_kv(&config_text)?;

    let mut dims_section = expect_section(&mut cursor, "gen_dims")?;
    let [feature_dim, cells, hidden, noise, attn_hidden, vocab] = decode_six(&mut dims_section)?;
    let gen_dims = GeneratorDims {
        feature_dim,
        cells,
        hidden,
        noise,
        attn_hidden,
        vocab,
    };
    let mut dims_section = expect_section(&mut cursor, "disc_dims")?;
    let [feature_dim, cells, hidden, embed, attn_hidden, vocab] = decode_six(&mut dims_section)?;
    let disc_dims = DiscriminatorDims {
        feature_dim,
        cells,
        hidden,
        embed,
        attn_hidden,
        vocab,
    };

    let mut gen = GeneratorParams::init(gen_dims, &mut SeededRng::new(0));
    let mut section = expect_section(&mut cursor, "gen_params")?;
    decode_into_store(&mut section, &mut gen.store)?;
    let mut disc = DiscriminatorParams::init(disc_dims, &mut SeededRng::new(0));
    let mut section = expect_section(&mut cursor, "disc_params")?;
    decode_into_store(&mut section, &mut disc.store)?;

    let mut section = expect_section(&mut cursor, "adam_gen")?;
    let adam_gen = decode_adam(&mut section, &gen.store)?;
    let mut section = expect_section(&mut cursor, "adam_disc")?;
    let adam_disc = decode_adam(&mut section, &disc.store)?;

    let mut section = expect_section(&mut cursor, "standardizer")?;
    let dim = section.u32()? as usize;
    let mut mean = Vec::with_capacity(dim);
    for _ in 0..dim {
        mean.push(section.f64()?);
    }
    let mut std = Vec::with_capacity(dim);
    for _ in 0..dim {
        std.push(section.f64()?);
    }
    let standardizer = Standardizer { mean, std };

    let mut section = expect_section(&mut cursor, "vocab_hash")?;
    let vocab_hash = section.u64()?;
    let mut section = expect_section(&mut cursor, "rng")?;
    let rng_state = (section.u64()?, section.u64()?);
    let mut section = expect_section(&mut cursor, "step")?;
    let step = section.u64()?;
    if !cursor.done() {
        return Err(TrainError::BadCheckpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        config,
        gen,
        disc,
        adam_gen,
        adam_disc,
        standardizer,
        vocab_hash,
        rng_state,
        step,
    })
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), TrainError> {
    Ok(std::fs::write(path, checkpoint_to_bytes(cp))?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Human-readable header dump for inspection.
pub fn describe(cp: &Checkpoint) -> String {
    let store_stats = |store: &ParamStore| -> (usize, usize) {
        (store.len(), store.iter().map(|p| p.value.len()).sum())
    };
    let (gen_tensors, gen_values) = store_stats(&cp.gen.store);
    let (disc_tensors, disc_values) = store_stats(&cp.disc.store);
    let mut out = String::new();
    out.push_str(&format!("format version\t{CHECKPOINT_VERSION}\n"));
    out.push_str(&format!("step\t{}\n", cp.step));
    out.push_str(&format!(
        "generator\t{gen_tensors} tensors, {gen_values} values, dims {:?}\n",
        cp.gen.dims
    ));
    out.push_str(&format!(
        "discriminator\t{disc_tensors} tensors, {disc_values} values, dims {:?}\n",
        cp.disc.dims
    ));
    out.push_str(&format!(
        "adam steps\tgen {} disc {}\n",
        cp.adam_gen.step, cp.adam_disc.step
    ));
    out.push_str(&format!(
        "standardizer\t{} dims\n",
        cp.standardizer.mean.len()
    ));
    out.push_str(&format!("vocab hash\t{:#018x}\n", cp.vocab_hash));
    out.push_str(&format!(
        "rng state\tseed {} counter {}\n",
        cp.rng_state.0, cp.rng_state.1
    ));
    out.push_str("config:\n");
    for line in config_to_kv(&cp.config).lines() {
        out.push_str(&format!("  {line}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Trainer;

    fn sample_trainer() -> Trainer {
        let cfg = TrainConfig {
            batch_size: 2,
            n_critic: 1,
            gen_steps: 1,
            noise_dim: 3,
            hidden: 4,
            disc_hidden: 4,
            embed_dim: 3,
            attn_hidden: 5,
            seed: 5,
            ..TrainConfig::default()
        };
        let std = Standardizer {
            mean: vec![0.5; 5],
            std: vec![2.0; 5],
        };
        Trainer::new(cfg, 5, 4, 6, std, 0xfeed).unwrap()
    }

    #[test]
    fn config_kv_roundtrips() {
        let c = TrainConfig::default();
        let text = config_to_kv(&c);
        let back = config_from_kv(&text).unwrap();
        assert_eq!(c, back);
        assert!(matches!(
            config_from_kv("nonsense=1\n"),
            Err(TrainError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let trainer = sample_trainer();
        let cp = trainer.to_checkpoint();
        let bytes = checkpoint_to_bytes(&cp);
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        let bytes2 = checkpoint_to_bytes(&loaded);
        assert_eq!(bytes, bytes2);
        assert_eq!(loaded.step, cp.step);
        assert_eq!(loaded.gen.store, cp.gen.store);
        assert_eq!(loaded.disc.store, cp.disc.store);
        assert_eq!(loaded.adam_gen, cp.adam_gen);
        assert_eq!(loaded.standardizer, cp.standardizer);
        assert_eq!(loaded.rng_state, cp.rng_state);

        // a reloaded standardizer reproduces apply() bit for bit
        let mut rng = crate::numerics::SeededRng::new(9);
        let grid =
            crate::features::FeatureGrid::new(4, 5, (0..20).map(|_| rng.gaussian()).collect());
        let a = cp.standardizer.apply(&grid).unwrap();
        let b = loaded.standardizer.apply(&grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn version_mismatch_is_its_own_error() {
        let trainer = sample_trainer();
        let mut bytes = checkpoint_to_bytes(&trainer.to_checkpoint());
        bytes[4] = 99;
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(TrainError::Version { found: 99, .. })
        ));
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let trainer = sample_trainer();
        let bytes = checkpoint_to_bytes(&trainer.to_checkpoint());
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(checkpoint_from_bytes(b"NOPE").is_err());
    }

    #[test]
    fn vocab_hash_guard() {
        let trainer = sample_trainer();
        let cp = trainer.to_checkpoint();
        assert!(cp.verify_vocab_hash(0xfeed).is_ok());
        assert!(matches!(
            cp.verify_vocab_hash(0xbad),
            Err(TrainError::VocabHashMismatch { .. })
        ));
    }

    #[test]
    fn describe_mentions_the_essentials() {
        let trainer = sample_trainer();
        let text = describe(&trainer.to_checkpoint());
        assert!(text.contains("format version"));
        assert!(text.contains("vocab hash"));
        assert!(text.contains("lr=0.0001"));
    }
}
