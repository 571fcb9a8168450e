//! Command-line surface for the scene-graph generation pipeline: corpus
//! generation, adversarial training, triple sampling, graph building,
//! evaluation, and checkpoint inspection.

mod config;
mod samples;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::RunConfig;
use samples::{parse_samples, serialize_samples, to_graph_inputs, SampleLine};
use sggen_core::dataset::{load_corpus, standardize, Dataset};
use sggen_core::eval::{evaluate_image, serialize_report, with_mean_rows, EvalSettings};
use sggen_core::features::{write_cache, FeatureGrid};
use sggen_core::generator::sample_triples;
use sggen_core::graphbuild::{build_graph, export_dot, graph_summary, MergeConfig};
use sggen_core::numerics::SeededRng;
use sggen_core::scenes::{generate_corpus, CorpusConfig, SceneConfig};
use sggen_core::training::{
    checkpoint::describe, load_checkpoint, Checkpoint, TrainData, TrainError, Trainer,
};
use sggen_core::vocab::Vocabulary;

const SAMPLE_STREAM: u64 = 0x534d;
const EVAL_CMD_STREAM: u64 = 0x4556;

#[derive(Parser)]
#[command(
    name = "sggen",
    about = "Adversarial triple generation and scene-graph construction on a synthetic corpus",
    version
)]
struct Cli {
    /// key=value configuration file; flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random choice
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for this command's outputs
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (images, triples, masks, manifest,
    /// vocabulary, feature cache) into --out-dir
    GenData {
        /// Number of images (default from config: 2000)
        #[arg(long)]
        images: Option<usize>,
    },
    /// Train the adversarial model on a corpus; writes checkpoint.bin,
    /// metrics.tsv and val_recall.tsv into --out-dir
    Train {
        /// Corpus directory produced by gen-data
        #[arg(long)]
        corpus: PathBuf,
        /// Total generator steps (default from config: 3000)
        #[arg(long)]
        steps: Option<u64>,
        /// Resume from an existing checkpoint file
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample triples with attention traces and critic scores for one image
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Image id from the corpus manifest, e.g. img_00012
        #[arg(long)]
        image: String,
        /// Number of samples (default from config: 500)
        #[arg(long)]
        count: Option<usize>,
        /// Output file (default: <out-dir>/samples.tsv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge a samples file into a scene graph; writes graph.dot and
    /// graph.tsv into --out-dir
    BuildGraph {
        #[arg(long)]
        samples: PathBuf,
        /// IoU merge threshold in [0,1] (default from config: 0.8)
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Evaluate recall@k on a corpus split; writes eval_report.tsv into
    /// --out-dir
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Which split to evaluate: train, val or test
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated k values (default from config: 20,50,100)
        #[arg(long)]
        ks: Option<String>,
    },
    /// Print a human-readable checkpoint header
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Marker for configuration failures so they map to their own exit code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigFailure(#[source] anyhow::Error);

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigFailure>().is_some() {
            return 4;
        }
        if let Some(TrainError::Version { .. } | TrainError::VocabHashMismatch { .. }) =
            cause.downcast_ref::<TrainError>()
        {
            return 3;
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn error_kind_label(code: u8) -> &'static str {
    match code {
        2 => "missing-file",
        3 => "version-mismatch",
        4 => "config",
        _ => "runtime",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprintln!(
                        "error\tconfig\t{}",
                        e.to_string().lines().next().unwrap_or("")
                    );
                    ExitCode::from(4)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code_for(&e);
            let message: String = format!("{e:#}").replace(['\n', '\t'], " ");
            eprintln!("error\t{}\t{}", error_kind_label(code), message);
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut rc = RunConfig::default();
    if let Some(path) = &cli.config {
        rc.load_file(path).map_err(|e| classify_config(e, path))?;
    }
    if let Some(seed) = cli.seed {
        rc.seed = seed;
    }
    match cli.command {
        Command::GenData { images } => {
            if let Some(n) = images {
                rc.images = n;
            }
            print!("{}", rc.echo());
            cmd_gen_data(&rc, &cli.out_dir)
        }
        Command::Train {
            corpus,
            steps,
            resume,
        } => {
            if let Some(s) = steps {
                rc.gen_steps = s;
            }
            print!("{}", rc.echo());
            cmd_train(&rc, &corpus, resume.as_deref(), &cli.out_dir)
        }
        Command::Sample {
            checkpoint,
            corpus,
            image,
            count,
            out,
        } => {
            if let Some(c) = count {
                rc.sample_count = c;
            }
            print!("{}", rc.echo());
            let out = out.unwrap_or_else(|| cli.out_dir.join("samples.tsv"));
            cmd_sample(&rc, &checkpoint, &corpus, &image, &out)
        }
        Command::BuildGraph { samples, threshold } => {
            if let Some(t) = threshold {
                rc.merge_threshold = t;
            }
            print!("{}", rc.echo());
            cmd_build_graph(&rc, &samples, &cli.out_dir)
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
            ks,
        } => {
            if let Some(ks) = ks {
                rc.apply_line("eval_ks", &ks, "--ks")
                    .map_err(|e| anyhow!(ConfigFailure(e)))?;
            }
            print!("{}", rc.echo());
            cmd_eval(&rc, &checkpoint, &corpus, &split, &cli.out_dir)
        }
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    }
}

fn classify_config(e: anyhow::Error, path: &Path) -> anyhow::Error {
    // a missing config file is a missing file; a malformed one is a config error
    let missing = e.chain().any(|c| {
        matches!(c.downcast_ref::<std::io::Error>(),
                 Some(io) if io.kind() == std::io::ErrorKind::NotFound)
    });
    if missing {
        e.context(format!("config file {}", path.display()))
    } else {
        anyhow!(ConfigFailure(e))
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} not found: {}", path.display()),
        ));
    }
    Ok(())
}

fn scene_config(rc: &RunConfig) -> SceneConfig {
    SceneConfig {
        grid_rows: rc.grid_rows,
        grid_cols: rc.grid_cols,
        min_entities: rc.min_entities,
        max_entities: rc.max_entities,
        image_height: rc.image_height,
        image_width: rc.image_width,
        sizes: SceneConfig::default().sizes,
    }
}

fn cmd_gen_data(rc: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let cfg = CorpusConfig {
        images: rc.images,
        scene: scene_config(rc),
        seed: rc.seed,
        top_objects: rc.top_objects,
        top_relations: rc.top_relations,
        top_attributes: rc.top_attributes,
    };
    let vocab = generate_corpus(out_dir, &cfg).context("generating corpus")?;
    let dataset = load_corpus(out_dir, rc.grid_rows, rc.grid_cols)?;
    write_cache(&out_dir.join("features.bin"), &dataset.raw_grids)?;
    println!(
        "gen-data\t{} images, vocabulary {} lexemes, corpus at {}",
        rc.images,
        vocab.size(),
        out_dir.display()
    );
    Ok(())
}

fn load_prepared(corpus: &Path, rc: &RunConfig) -> Result<(Dataset, Vocabulary)> {
    require_file(&corpus.join("manifest"), "corpus manifest")?;
    let dataset = load_corpus(corpus, rc.grid_rows, rc.grid_cols)?;
    let vocabulary = dataset.vocabulary.clone();
    Ok((dataset, vocabulary))
}

fn cmd_train(rc: &RunConfig, corpus: &Path, resume: Option<&Path>, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (dataset, vocabulary) = load_prepared(corpus, rc)?;
    let mut trainer = match resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let cp = load_checkpoint(path)?;
            cp.verify_vocab_hash(vocabulary.content_hash())?;
            let mut t = Trainer::from_checkpoint(cp);
            t.config.gen_steps = rc.gen_steps;
            t
        }
        None => {
            let (standardizer, _) = standardize(&dataset)?;
            Trainer::new(
                rc.train_config(),
                sggen_core::features::FEATURE_DIM,
                rc.grid_rows * rc.grid_cols,
                vocabulary.size(),
                standardizer,
                vocabulary.content_hash(),
            )?
        }
    };
    let grids: Vec<FeatureGrid> = dataset
        .raw_grids
        .iter()
        .map(|g| trainer.standardizer.apply(g))
        .collect::<std::result::Result<_, _>>()?;
    let data = TrainData::new(&grids, &dataset.truths, &dataset.split);
    let started = std::time::Instant::now();
    let outputs = trainer.train(&data, Some(out_dir))?;
    println!(
        "train\t{} steps in {:.1}s, {} checkpoint writes, outputs in {}",
        trainer.step,
        started.elapsed().as_secs_f64(),
        outputs.checkpoints_written,
        out_dir.display()
    );
    if let Some(last) = outputs.metrics_lines.last() {
        println!("train\tlast metrics: {last}");
    }
    Ok(())
}

fn load_checkpoint_against(checkpoint: &Path, vocabulary: &Vocabulary) -> Result<Checkpoint> {
    require_file(checkpoint, "checkpoint")?;
    let cp = load_checkpoint(checkpoint)?;
    cp.verify_vocab_hash(vocabulary.content_hash())?;
    Ok(cp)
}

fn cmd_sample(
    rc: &RunConfig,
    checkpoint: &Path,
    corpus: &Path,
    image: &str,
    out: &PathBuf,
) -> Result<()> {
    let (dataset, vocabulary) = load_prepared(corpus, rc)?;
    let cp = load_checkpoint_against(checkpoint, &vocabulary)?;
    let index = dataset
        .manifest
        .iter()
        .position(|e| e.image_id == image)
        .ok_or_else(|| anyhow!("image id `{image}` not in manifest"))?;
    let grid = cp.standardizer.apply(&dataset.raw_grids[index])?;
    let mut rng = SeededRng::new(cp.config.seed).derive(&[SAMPLE_STREAM, index as u64]);
    let samples = sample_triples(&cp.gen, &grid, rc.sample_count, &mut rng)?;
    let mut lines = Vec::with_capacity(samples.len());
    for s in &samples {
        let score = sggen_core::discriminator::score(
            &cp.disc,
            [&s.soft[0], &s.soft[1], &s.soft[2]],
            &grid,
        )?;
        let (subject, predicate, object) = vocabulary.triple_to_strs(s.triple)?;
        lines.push(SampleLine {
            score,
            subject,
            predicate,
            object,
            alphas: s.alphas.clone(),
        });
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, serialize_samples(&lines))?;
    println!(
        "sample\t{} samples for {image} written to {}",
        lines.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build_graph(rc: &RunConfig, samples: &Path, out_dir: &Path) -> Result<()> {
    require_file(samples, "samples file")?;
    std::fs::create_dir_all(out_dir)?;
    let lines = parse_samples(&std::fs::read_to_string(samples)?)?;
    let (inputs, labels) = to_graph_inputs(&lines);
    let graph = build_graph(
        &inputs,
        &MergeConfig {
            threshold: rc.merge_threshold,
        },
    )?;
    std::fs::write(out_dir.join("graph.dot"), export_dot(&graph, &labels))?;
    std::fs::write(out_dir.join("graph.tsv"), graph_summary(&graph, &labels))?;
    println!(
        "build-graph\t{} triples -> {} nodes, {} edges, {} dropped self-loops",
        inputs.len(),
        graph.nodes.len(),
        graph.edges.len(),
        graph.dropped_self_loops.len()
    );
    Ok(())
}

fn cmd_eval(
    rc: &RunConfig,
    checkpoint: &Path,
    corpus: &Path,
    split: &str,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (dataset, vocabulary) = load_prepared(corpus, rc)?;
    let cp = load_checkpoint_against(checkpoint, &vocabulary)?;
    let indices = match split {
        "train" => &dataset.split.train,
        "val" => &dataset.split.val,
        "test" => &dataset.split.test,
        other => bail!("unknown split `{other}` (expected train, val or test)"),
    };
    let settings = EvalSettings {
        samples_per_image: rc.sample_count,
        baseline_trials: rc.baseline_trials,
    };
    let mut rows = Vec::new();
    for &index in indices {
        let truth = dataset.truth_set(index);
        if truth.is_empty() {
            continue;
        }
        let grid = cp.standardizer.apply(&dataset.raw_grids[index])?;
        let mut rng = SeededRng::new(cp.config.seed).derive(&[EVAL_CMD_STREAM, index as u64]);
        rows.extend(evaluate_image(
            &cp.gen,
            &cp.disc,
            &vocabulary,
            &dataset.manifest[index].image_id,
            &grid,
            &truth,
            &rc.eval_ks,
            &settings,
            &mut rng,
        )?);
    }
    let rows = with_mean_rows(rows);
    std::fs::write(out_dir.join("eval_report.tsv"), serialize_report(&rows))?;
    for row in rows.iter().filter(|r| r.image_id == "MEAN") {
        println!(
            "eval\tMEAN k={}\trecall {:.4}\tbaseline {:.4}\tviolation {:.4}",
            row.k, row.recall, row.baseline, row.violation_rate
        );
    }
    println!(
        "eval\treport written to {}",
        out_dir.join("eval_report.tsv").display()
    );
    Ok(())
}

fn cmd_inspect(checkpoint: &Path) -> Result<()> {
    require_file(checkpoint, "checkpoint")?;
    let cp = load_checkpoint(checkpoint)?;
    print!("{}", describe(&cp));
    Ok(())
}
