//! `evaluate`: score predicted source sets against ground truth.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use stainsep_core::io::{read_source_set, scan_source_sets};
use stainsep_core::metrics::{evaluate, mse, summary_text, ReportMeta};
use stainsep_core::SourceSet;

use crate::common::{create_dir, manifest_records, write_json, write_provenance, SplitChoice};
use crate::failure::{data, io, CliResult};

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Directory of predicted `x_src<i>` images
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth `x_src<i>` images
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Method label in the report
    #[arg(long, default_value = "model")]
    pub method: String,
    /// Restrict ground truth to one split of this manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test", requires = "manifest")]
    pub split: SplitChoice,
    /// Match predicted to true stains by the permutation with least total MSE,
    /// for blind methods whose output order is arbitrary
    #[arg(long)]
    pub best_permutation: bool,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub config_hash: Option<String>,
}

fn load_sets(dir: &Path, keep: Option<&BTreeSet<String>>) -> CliResult<Vec<(String, SourceSet)>> {
    let (sets, broken) = scan_source_sets(dir)?;
    for stem in broken {
        log::warn!("{}: incomplete source set {stem}", dir.display());
    }
    sets.into_iter()
        .filter(|(id, _)| keep.is_none_or(|k| k.contains(id)))
        .map(|(id, paths)| Ok((id, read_source_set(&paths, None)?)))
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn best_order(pred: &SourceSet, truth: &SourceSet) -> CliResult<SourceSet> {
    if pred.len() != truth.len() {
        return Ok(pred.clone());
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for order in permutations(pred.len()) {
        let mut total = 0.0;
        for (k, &j) in order.iter().enumerate() {
            total += mse(pred.source(j), truth.source(k))?;
        }
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, order));
        }
    }
    let order = best.expect("at least one permutation").1;
    Ok(pred.permuted(&order)?)
}

fn warn_missing(what: &str, ids: &[String]) {
    if ids.is_empty() {
        return;
    }
    let shown: Vec<&str> = ids.iter().take(5).map(String::as_str).collect();
    let more = if ids.len() > 5 { ", ..." } else { "" };
    log::warn!("{} {what}: {}{more}", ids.len(), shown.join(", "));
}

pub fn run(args: &Args) -> CliResult<()> {
    let keep = match &args.manifest {
        Some(m) => Some(manifest_records(m, args.split)?.1.into_iter().map(|r| r.id).collect::<BTreeSet<_>>()),
        None => None,
    };
    let truths = load_sets(&args.truth, keep.as_ref())?;
    let mut preds = load_sets(&args.pred, keep.as_ref())?;
    if preds.is_empty() {
        return Err(data(format!("no predicted source sets in {}", args.pred.display())));
    }
    if args.best_permutation {
        for (id, p) in &mut preds {
            if let Some((_, t)) = truths.iter().find(|(tid, _)| tid == id) {
                *p = best_order(p, t)?;
            }
        }
    }
    let meta = ReportMeta {
        dataset: args.dataset.clone(),
        checkpoint: args.checkpoint.clone(),
        config_hash: args.config_hash.clone(),
    };
    let report = evaluate(&args.method, &preds, &truths, meta)?;
    if report.samples.is_empty() {
        return Err(data("no sample ids in common between predictions and truth"));
    }
    warn_missing("predictions without ground truth", &report.missing_truth);
    warn_missing("ground truth without predictions", &report.missing_predictions);
    create_dir(&args.out)?;
    let lines = args.out.join("report.jsonl");
    let mut w = BufWriter::new(File::create(&lines).map_err(io(&lines))?);
    for s in &report.samples {
        writeln!(w, "{}", serde_json::to_string(s).expect("scores serialize")).map_err(io(&lines))?;
    }
    w.flush().map_err(io(&lines))?;
    write_json(&args.out.join("report.json"), &report)?;
    let summary = summary_text(&report);
    let path = args.out.join("summary.txt");
    std::fs::write(&path, &summary).map_err(io(&path))?;
    write_provenance(&args.out, "evaluate", args, args.config_hash.as_deref())?;
    print!("{summary}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_permutations() {
        let mut p = permutations(3);
        p.sort();
        assert_eq!(p.len(), 6);
        p.dedup();
        assert_eq!(p.len(), 6);
    }
}
