//! Run configuration: every field has a default, values come from an
//! optional key=value file, and command-line flags win over the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use sggen_core::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // corpus generation
    pub images: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    pub top_objects: usize,
    pub top_relations: usize,
    pub top_attributes: usize,
    // training
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    pub gen_steps: u64,
    pub noise_dim: usize,
    pub hidden: usize,
    pub disc_hidden: usize,
    pub embed_dim: usize,
    pub attn_hidden: usize,
    pub eval_cadence: u64,
    pub eval_slice: usize,
    pub eval_samples: usize,
    pub eval_k: usize,
    pub checkpoint_cadence: u64,
    // graph building and evaluation
    pub merge_threshold: f64,
    pub sample_count: usize,
    pub baseline_trials: usize,
    pub eval_ks: Vec<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            images: 2000,
            grid_rows: 4,
            grid_cols: 4,
            image_height: 64,
            image_width: 64,
            min_entities: 2,
            max_entities: 4,
            top_objects: 150,
            top_relations: 50,
            top_attributes: 150,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            lambda: t.lambda,
            n_critic: t.n_critic,
            batch_size: t.batch_size,
            gen_steps: t.gen_steps,
            noise_dim: t.noise_dim,
            hidden: t.hidden,
            disc_hidden: t.disc_hidden,
            embed_dim: t.embed_dim,
            attn_hidden: t.attn_hidden,
            eval_cadence: t.eval_cadence,
            eval_slice: t.eval_slice,
            eval_samples: t.eval_samples,
            eval_k: t.eval_k,
            checkpoint_cadence: t.checkpoint_cadence,
            merge_threshold: 0.8,
            sample_count: 500,
            baseline_trials: 200,
            eval_ks: vec![20, 50, 100],
            seed: t.seed,
        }
    }
}

impl RunConfig {
    pub fn apply_line(&mut self, key: &str, value: &str, where_: &str) -> Result<()> {
        macro_rules! set {
            ($field:ident) => {
                self.$field = value
                    .parse()
                    .with_context(|| format!("{where_}: bad value for `{key}`"))?
            };
        }
        match key {
            "images" => set!(images),
            "grid_rows" => set!(grid_rows),
            "grid_cols" => set!(grid_cols),
            "image_height" => set!(image_height),
            "image_width" => set!(image_width),
            "min_entities" => set!(min_entities),
            "max_entities" => set!(max_entities),
            "top_objects" => set!(top_objects),
            "top_relations" => set!(top_relations),
            "top_attributes" => set!(top_attributes),
            "lr" => set!(lr),
            "beta1" => set!(beta1),
            "beta2" => set!(beta2),
            "lambda" => set!(lambda),
            "n_critic" => set!(n_critic),
            "batch_size" => set!(batch_size),
            "gen_steps" => set!(gen_steps),
            "noise_dim" => set!(noise_dim),
            "hidden" => set!(hidden),
            "disc_hidden" => set!(disc_hidden),
            "embed_dim" => set!(embed_dim),
            "attn_hidden" => set!(attn_hidden),
            "eval_cadence" => set!(eval_cadence),
            "eval_slice" => set!(eval_slice),
            "eval_samples" => set!(eval_samples),
            "eval_k" => set!(eval_k),
            "checkpoint_cadence" => set!(checkpoint_cadence),
            "merge_threshold" => set!(merge_threshold),
            "sample_count" => set!(sample_count),
            "baseline_trials" => set!(baseline_trials),
            "eval_ks" => {
                self.eval_ks = value
                    .split(',')
                    .map(|k| k.trim().parse())
                    .collect::<std::result::Result<Vec<usize>, _>>()
                    .with_context(|| format!("{where_}: bad value for `eval_ks`"))?
            }
            "seed" => set!(seed),
            other => bail!("{where_}: unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Parse a `key=value` file; `#` starts a comment line.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let where_ = format!("{}:{}", path.display(), i + 1);
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{where_}: expected key=value"))?;
            self.apply_line(key.trim(), value.trim(), &where_)?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            lambda: self.lambda,
            n_critic: self.n_critic,
            batch_size: self.batch_size,
            gen_steps: self.gen_steps,
            noise_dim: self.noise_dim,
            hidden: self.hidden,
            disc_hidden: self.disc_hidden,
            embed_dim: self.embed_dim,
            attn_hidden: self.attn_hidden,
            seed: self.seed,
            eval_cadence: self.eval_cadence,
            eval_slice: self.eval_slice,
            eval_samples: self.eval_samples,
            eval_k: self.eval_k,
            checkpoint_cadence: self.checkpoint_cadence,
        }
    }

    /// The effective configuration, echoed to the log before every command.
    pub fn echo(&self) -> String {
        let ks: Vec<String> = self.eval_ks.iter().map(|k| k.to_string()).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("attn_hidden", self.attn_hidden.to_string()),
            ("baseline_trials", self.baseline_trials.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("checkpoint_cadence", self.checkpoint_cadence.to_string()),
            ("disc_hidden", self.disc_hidden.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("eval_cadence", self.eval_cadence.to_string()),
            ("eval_k", self.eval_k.to_string()),
            ("eval_ks", ks.join(",")),
            ("eval_samples", self.eval_samples.to_string()),
            ("eval_slice", self.eval_slice.to_string()),
            ("gen_steps", self.gen_steps.to_string()),
            ("grid_cols", self.grid_cols.to_string()),
            ("grid_rows", self.grid_rows.to_string()),
            ("hidden", self.hidden.to_string()),
            ("image_height", self.image_height.to_string()),
            ("image_width", self.image_width.to_string()),
            ("images", self.images.to_string()),
            ("lambda", self.lambda.to_string()),
            ("lr", self.lr.to_string()),
            ("max_entities", self.max_entities.to_string()),
            ("merge_threshold", self.merge_threshold.to_string()),
            ("min_entities", self.min_entities.to_string()),
            ("n_critic", self.n_critic.to_string()),
            ("noise_dim", self.noise_dim.to_string()),
            ("sample_count", self.sample_count.to_string()),
            ("seed", self.seed.to_string()),
            ("top_attributes", self.top_attributes.to_string()),
            ("top_objects", self.top_objects.to_string()),
            ("top_relations", self.top_relations.to_string()),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| format!("config\t{k}={v}\n"))
            .collect()
    }
}
