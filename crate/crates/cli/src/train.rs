//! `train`: run the trainer from a single TOML configuration.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stainsep_core::io::ManifestRecord;
use stainsep_core::{LossReport, Sample, TrainConfig};
use stainsep_model::{train, DType, ModelError, SampleSource, StainSeparator, TrainOptions};

use crate::common::{create_dir, manifest_records, sha256_hex, write_json, write_provenance, SplitChoice};
use crate::failure::{io, usage, CliResult, Context};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// TOML file with `manifest`, `output_dir`, optional `precision` and a `[train]` table
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this checkpoint; its configuration must match exactly
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many iterations are complete
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Paths are resolved against the configuration file's directory.
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.train.validate().context(format!("{}", path.display()))?;
        Ok(cfg)
    }

    /// Every setting, defaults included, as TOML.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

struct ManifestSource {
    base: PathBuf,
    records: Vec<ManifestRecord>,
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn get(&self, index: usize) -> stainsep_model::Result<Sample> {
        self.records[index].load(&self.base).map_err(ModelError::from)
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    iterations_completed: usize,
    total_iterations: usize,
    final_checkpoint: Option<String>,
    last: Option<&'a LossReport>,
    /// Mean per-source L1 over the last tenth of the iterations run.
    recent_l1: Vec<f64>,
}

pub fn run(args: &Args) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let resolved = cfg.resolved();
    let hash = sha256_hex(resolved.as_bytes());
    let (base, records) = manifest_records(&cfg.manifest, SplitChoice::Train)?;
    if records.is_empty() {
        return Err(crate::failure::data(format!("{} has no training records", cfg.manifest.display())));
    }
    let n = records[0].sources.len();
    if n != cfg.train.n_sources {
        return Err(usage(format!(
            "manifest samples have {n} sources but train.n_sources is {}",
            cfg.train.n_sources
        )));
    }
    let out = &cfg.output_dir;
    create_dir(out)?;
    fs::write(out.join("config.toml"), &resolved).map_err(io(&out.join("config.toml")))?;

    let mut model = match &args.resume {
        Some(path) => {
            let m = StainSeparator::resume(path, &cfg.train)?;
            if m.dtype() != cfg.precision.dtype() {
                return Err(usage(format!("checkpoint precision {:?} differs from configured {:?}", m.dtype(), cfg.precision)));
            }
            log::info!("resuming from {} at iteration {}", path.display(), m.iteration());
            m
        }
        None => StainSeparator::new(&cfg.train, cfg.precision.dtype())?,
    };

    let log_path = out.join("train_log.jsonl");
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume.is_some())
        .truncate(args.resume.is_none())
        .open(&log_path)
        .map_err(io(&log_path))?;
    let mut log_file = BufWriter::new(file);
    let mut write_error = None;
    let total = cfg.train.total_iterations;
    let every = (total / 10).max(1);
    let mut on_iteration = |r: &LossReport| {
        let line = serde_json::to_string(r).expect("report serializes");
        if let Err(e) = writeln!(log_file, "{line}") {
            write_error.get_or_insert(e);
        }
        if (r.iteration + 1) % every == 0 {
            log::info!("iteration {}/{total}: l1 {:?}", r.iteration + 1, r.l1_per_source);
        }
    };
    let source = ManifestSource { base, records };
    let outcome = train(
        &mut model,
        &source,
        TrainOptions {
            stop_after: args.stop_after,
            checkpoint_dir: Some(out.join("checkpoints")),
            on_iteration: Some(&mut on_iteration),
        },
    );
    log_file.flush().map_err(io(&log_path))?;
    drop(log_file);
    if let Some(e) = write_error {
        return Err(io(&log_path)(e));
    }
    let outcome = outcome?;

    let tail = &outcome.reports[outcome.reports.len() - outcome.reports.len().div_ceil(10).min(outcome.reports.len())..];
    let recent_l1 = (0..cfg.train.n_sources)
        .map(|i| tail.iter().map(|r| r.l1_per_source[i]).sum::<f64>() / tail.len().max(1) as f64)
        .collect();
    let final_checkpoint = outcome.checkpoints.last().map(|p| p.display().to_string());
    let summary = Summary {
        config_hash: &hash,
        iterations_completed: model.iteration(),
        total_iterations: total,
        final_checkpoint: final_checkpoint.clone(),
        last: outcome.reports.last(),
        recent_l1,
    };
    write_json(&out.join("summary.json"), &summary)?;
    #[derive(Serialize)]
    struct Params<'a> {
        config: &'a RunConfig,
        resume: &'a Option<PathBuf>,
        stop_after: Option<usize>,
    }
    write_provenance(
        out,
        "train",
        &Params {
            config: &cfg,
            resume: &args.resume,
            stop_after: args.stop_after,
        },
        Some(&hash),
    )?;
    println!(
        "trained to iteration {}/{total}; checkpoint {}",
        model.iteration(),
        final_checkpoint.as_deref().unwrap_or("none")
    );
    Ok(())
}
