//! Subcommands: `train`, `eval`, `embed`, `tsne` and `report`.
//!
//! Exit status is 0 on success, 2 for invalid input of any kind (config,
//! files, mismatched checkpoint) and 3 when training aborts on a non-finite
//! loss or gradient.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::embeddings::{load_embeddings, save_embeddings, Embeddings};
use crate::formats::{checkpoint, cifar, idx, raw, read_file, write_file};
use crate::metrics;
use clap::{Args, Parser, Subcommand};
use ossl::bilevel::{train, EpochRecord, TrainHooks, TrainMode, TrainRunRecord};
use ossl::data::{preprocess, LabeledImageSet, PreprocessSpec};
use ossl::eval::{embeddings, evaluate, report_table, tsne, EvalResult, TsneConfig};
use ossl::nn::{HeadKind, MultiHeadModel};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const SUMMARY_FILE: &str = "run.toml";

#[derive(Debug, Parser)]
#[command(
    name = "ossl",
    version,
    about = "Multi-head rotation self-supervision trainer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model as described by a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory. Defaults to the config's `output_dir`, else
        /// `$OSSL_OUTPUT_ROOT/<name>`, else `runs/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print `dataset,head,accuracy,n` for one checkpoint on one dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// semantic, auxiliary or rotation.
        #[arg(long, default_value = "semantic")]
        head: String,
    },
    /// Write backbone features of a dataset as an OSSLEMB1 file.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project an OSSLEMB1 file to 2-D with exact t-SNE; writes CSV.
    Tsne {
        /// OSSLEMB1 file.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 200.0)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use only the first N rows.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compare runs: one row per training mode, one column per test set.
    Report {
        /// Run directories or their metrics.csv files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// A test-set name from `--config`, or data files: one OSSLRAW1 file,
    /// an IDX image/label pair, or CIFAR batch files.
    #[arg(long, required = true, num_args = 1..)]
    pub dataset: Vec<String>,
    /// Resolved run config supplying named sets and normalization.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the process exit status.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return status;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code() as u8
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let stdout = |e| Error::io("<stdout>", e);
    match cli.command {
        Command::Train { config, out: dir } => {
            let outcome = cmd_train(&config, dir.as_deref())?;
            writeln!(out, "{}", outcome.output_dir.display()).map_err(stdout)
        }
        Command::Eval {
            checkpoint,
            data,
            head,
        } => {
            let r = cmd_eval(&checkpoint, &data, &head)?;
            writeln!(out, "{}", r.csv_row()).map_err(stdout)
        }
        Command::Embed {
            checkpoint,
            data,
            out: path,
        } => cmd_embed(&checkpoint, &data, &path).map(|_| ()),
        Command::Tsne {
            dataset,
            out: path,
            perplexity,
            iterations,
            learning_rate,
            seed,
            limit,
        } => {
            let cfg = TsneConfig {
                perplexity,
                iterations,
                learning_rate,
                seed,
                ..TsneConfig::default()
            };
            cmd_tsne(&dataset, &path, &cfg, limit)
        }
        Command::Report { runs, out: csv } => {
            let table = cmd_report(&runs)?;
            out.write_all(table.to_text().as_bytes()).map_err(stdout)?;
            match csv {
                Some(path) => write_file(&path, table.to_csv().as_bytes()),
                None => write!(out, "\n{}", table.to_csv()).map_err(stdout),
            }
        }
    }
}

/// Short description of a finished run, stored as `run.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub mode: String,
    pub config_hash: String,
    pub model_seed: u64,
    pub shuffle_seed: u64,
    pub checkpoint: PathBuf,
    pub test_sets: Vec<String>,
}

pub struct TrainOutcome {
    pub output_dir: PathBuf,
    pub record: TrainRunRecord,
}

struct CsvHooks {
    path: PathBuf,
    text: String,
    clock: Option<Instant>,
}

impl TrainHooks<f32> for CsvHooks {
    fn now_ms(&mut self) -> Option<u64> {
        self.clock.map(|c| c.elapsed().as_millis() as u64)
    }

    fn on_epoch(&mut self, record: &EpochRecord, _: &MultiHeadModel<f32>) -> ossl::Result<()> {
        self.text.push_str(&metrics::row(record));
        self.text.push('\n');
        // A failure to persist metrics should not lose the run; the final
        // write below reports it.
        let _ = std::fs::write(&self.path, &self.text);
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_train(config: &Path, out: Option<&Path>) -> Result<TrainOutcome> {
    let prepared = RunConfig::load(config)?.resolve(out)?;
    let dir = &prepared.output_dir;
    create_dir(dir)?;
    let resolved = prepared.resolved.to_toml();
    write_file(&dir.join(RESOLVED_CONFIG_FILE), resolved.as_bytes())?;

    let mut model = ossl::nn::build_model::<f32>(&prepared.model)?;
    let names: Vec<String> = prepared
        .tests
        .iter()
        .map(|t| t.name().to_string())
        .collect();
    let metrics_path = dir.join(METRICS_FILE);
    let mut hooks = CsvHooks {
        path: metrics_path.clone(),
        text: format!("{}\n", metrics::header(&names)),
        clock: prepared.resolved.record_wall_time.then(Instant::now),
    };
    write_file(&metrics_path, hooks.text.as_bytes())?;
    let mut record = train(
        &mut model,
        &prepared.train,
        &prepared.tests,
        &prepared.sgd,
        &mut hooks,
    )?;
    write_file(&metrics_path, hooks.text.as_bytes())?;

    let ckpt = dir.join(CHECKPOINT_FILE);
    checkpoint::save_checkpoint(&model, &ckpt)?;
    let hash = prepared.resolved.hash();
    record.config_hash = Some(hash.clone());
    record.checkpoint_path = Some(ckpt.display().to_string());
    let summary = RunSummary {
        mode: record.mode.name().into(),
        config_hash: hash,
        model_seed: record.model_seed,
        shuffle_seed: record.shuffle_seed,
        checkpoint: ckpt,
        test_sets: names,
    };
    let text = toml::to_string(&summary).expect("summary serializes");
    write_file(&dir.join(SUMMARY_FILE), text.as_bytes())?;
    Ok(TrainOutcome {
        output_dir: dir.clone(),
        record,
    })
}

/// Guesses the container from the files' leading bytes.
pub fn load_dataset_files(files: &[PathBuf]) -> Result<LabeledImageSet> {
    let first = files
        .first()
        .ok_or_else(|| Error::config("dataset", "no files given"))?;
    let name = first
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let head = read_file(first)?;
    if head.starts_with(raw::MAGIC) {
        if files.len() != 1 {
            return Err(Error::config(
                "dataset",
                "an OSSLRAW1 dataset is a single file",
            ));
        }
        return raw::decode(&name, &head).map_err(|e| e.in_file(first));
    }
    if head.starts_with(&idx::IMAGES_MAGIC.to_be_bytes()) {
        let [_, labels] = files else {
            return Err(Error::config(
                "dataset",
                "IDX images need a label file: --dataset IMAGES LABELS",
            ));
        };
        return idx::load_idx(&name, first, labels);
    }
    if head.len() % cifar::RECORD == 0 {
        return cifar::load_cifar_bin(&name, files);
    }
    Err(Error::config(
        "dataset",
        format!("{}: not OSSLRAW1, IDX or CIFAR binary", first.display()),
    ))
}

/// Resolves `--dataset` for commands that feed a model.
fn dataset_for(model: &MultiHeadModel<f32>, data: &DataArgs) -> Result<LabeledImageSet> {
    let config = match &data.config {
        Some(path) => Some(RunConfig::load(path)?),
        None => None,
    };
    if let (Some(cfg), [name]) = (&config, data.dataset.as_slice()) {
        if cfg.train_set.name == *name || cfg.test_sets.iter().any(|t| t.name == *name) {
            let scratch = std::env::temp_dir();
            let prepared = cfg.resolve(Some(&scratch))?;
            return Ok(if prepared.train.name() == name {
                prepared.train
            } else {
                prepared
                    .tests
                    .into_iter()
                    .find(|t| t.name() == name)
                    .expect("name checked")
            });
        }
    }
    let files: Vec<PathBuf> = data.dataset.iter().map(PathBuf::from).collect();
    let set = load_dataset_files(&files)?;
    match config.and_then(|c| c.normalize) {
        Some(pairs) => {
            let spec = PreprocessSpec {
                normalize: pairs.iter().map(|p| (p[0], p[1])).collect(),
                ..PreprocessSpec::identity(model.input_spec())
            };
            Ok(preprocess(&set, &spec).map_err(|e| Error::config("dataset", e.to_string()))?)
        }
        None => Ok(set),
    }
}

pub fn cmd_eval(checkpoint: &Path, data: &DataArgs, head: &str) -> Result<EvalResult> {
    let head: HeadKind = head
        .parse()
        .map_err(|e: ossl::Error| Error::config("head", e.to_string()))?;
    let model = checkpoint::load_checkpoint(checkpoint)?;
    let set = dataset_for(&model, data)?;
    Ok(evaluate(&model, &set, head, 256)?)
}

pub fn cmd_embed(checkpoint: &Path, data: &DataArgs, out: &Path) -> Result<Embeddings> {
    let model = checkpoint::load_checkpoint(checkpoint)?;
    let set = dataset_for(&model, data)?;
    let (dim, rows) = embeddings(&model, &set, 256)?;
    let e = Embeddings {
        dim,
        rows,
        labels: set.labels().to_vec(),
    };
    save_embeddings(&e, out)?;
    Ok(e)
}

pub fn cmd_tsne(input: &Path, out: &Path, cfg: &TsneConfig, limit: Option<usize>) -> Result<()> {
    let mut e = load_embeddings(input)?;
    if let Some(n) = limit {
        e.truncate(n);
    }
    let data: Vec<f64> = e.rows.iter().map(|&v| f64::from(v)).collect();
    let result = tsne(&data, e.dim, cfg)?;
    let mut csv = format!(
        "# perplexity={} iterations={} learning_rate={} early_exaggeration={} exaggeration_iters={} \
         momentum={}->{} init_sigma={} seed={} final_kl={}\n",
        cfg.perplexity,
        cfg.iterations,
        cfg.learning_rate,
        cfg.early_exaggeration,
        cfg.exaggeration_iters,
        cfg.initial_momentum,
        cfg.final_momentum,
        cfg.init_sigma,
        cfg.seed,
        result.kl.last().copied().unwrap_or(f64::NAN),
    );
    csv.push_str("point_index,x,y,label\n");
    for (i, ([x, y], label)) in result.coords.iter().zip(&e.labels).enumerate() {
        csv.push_str(&format!("{i},{x},{y},{label}\n"));
    }
    write_file(out, csv.as_bytes())
}

/// Loads a run directory (or its `metrics.csv`) back into a record.
pub fn load_run(path: &Path) -> Result<TrainRunRecord> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let metrics_path = if path.is_dir() {
        dir.join(METRICS_FILE)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let (test_names, epochs) = metrics::parse(&text).map_err(|e| e.in_file(&metrics_path))?;
    let summary_path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let summary: RunSummary = toml::from_str(&text)
        .map_err(|e| Error::ConfigSyntax(format!("{}: {e}", summary_path.display())))?;
    let mode = TrainMode::from_name(&summary.mode).ok_or_else(|| {
        Error::config(
            "mode",
            format!(
                "{}: unknown mode `{}`",
                summary_path.display(),
                summary.mode
            ),
        )
    })?;
    Ok(TrainRunRecord {
        mode,
        config_hash: Some(summary.config_hash),
        model_seed: summary.model_seed,
        shuffle_seed: summary.shuffle_seed,
        test_names,
        epochs,
        checkpoint_path: Some(summary.checkpoint.display().to_string()),
    })
}

pub fn cmd_report(runs: &[PathBuf]) -> Result<ossl::eval::ReportTable> {
    let records = runs
        .iter()
        .map(|p| load_run(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_table(&records)?)
}
