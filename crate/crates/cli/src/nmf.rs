//! `nmf`: the matrix factorization baseline on individual images.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;
use stainsep_core::io::{read_image, write_source_set};
use stainsep_core::nmf::{nmf_unmix, NmfOptions};
use stainsep_core::types::default_stain_names;
use stainsep_core::SourceSet;

use crate::common::{collect_inputs, create_dir, write_provenance};
use crate::failure::{io, usage, CliResult, Context};

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Image files or directories of them
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub n_stains: usize,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    /// Stop when the relative objective decrease falls below this
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated stain names
    #[arg(long, value_delimiter = ',')]
    pub stains: Option<Vec<String>>,
}

#[derive(Serialize)]
struct Record<'a> {
    id: &'a str,
    spectra: &'a [[f64; 3]],
    iterations: usize,
    final_objective: f64,
    rms_residual: f64,
}

pub fn run(args: &Args) -> CliResult<()> {
    let names = args.stains.clone().unwrap_or_else(|| default_stain_names(args.n_stains));
    if names.len() != args.n_stains {
        return Err(usage(format!("{} stain names given for {} stains", names.len(), args.n_stains)));
    }
    let opts = NmfOptions {
        max_iters: args.iters,
        tol: args.tol,
        seed: args.seed,
        ..NmfOptions::new(args.n_stains)
    };
    let inputs = collect_inputs(&args.input)?;
    create_dir(&args.out)?;
    let path = args.out.join("nmf_report.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    for (stem, file) in &inputs {
        let img = read_image(file)?;
        let (sources, fit) = nmf_unmix(&img, &opts).context(format!("{}", file.display()))?;
        let sources = SourceSet::new(sources.into_sources(), names.clone())?;
        write_source_set(&args.out, stem, &sources, "png")?;
        let rec = Record {
            id: stem,
            spectra: fit.spectra.columns(),
            iterations: fit.iterations,
            final_objective: fit.final_objective(),
            rms_residual: fit.rms_residual(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(io(&path))?;
        println!("{stem}: {} iterations, rms residual {:.6}", fit.iterations, fit.rms_residual());
    }
    w.flush().map_err(io(&path))?;
    write_provenance(&args.out, "nmf", args, None)?;
    Ok(())
}
