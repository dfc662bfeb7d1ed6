//! `separate`: apply trained generators to mixed images.

use std::path::PathBuf;

use serde::Serialize;
use stainsep_core::io::{read_image, write_source_set};
use stainsep_core::SourceSet;
use stainsep_model::StainSeparator;

use crate::common::{collect_inputs, create_dir, manifest_records, sha256_hex, write_provenance, SplitChoice};
use crate::failure::{usage, CliResult, Context};

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Mixed image files or directories of them
    #[arg(long, num_args = 1.., required_unless_present = "manifest")]
    pub input: Vec<PathBuf>,
    /// Take the inputs from a manifest instead
    #[arg(long, conflicts_with = "input")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test", requires = "manifest")]
    pub split: SplitChoice,
    /// Output directory; each input `x` yields `x_src0.png`, `x_src1.png`, ...
    #[arg(long)]
    pub out: PathBuf,
    /// Expected stain names, comma-separated; must match the checkpoint's stain count
    #[arg(long, value_delimiter = ',')]
    pub stains: Option<Vec<String>>,
}

pub fn run(args: &Args) -> CliResult<()> {
    let bytes = std::fs::read(&args.checkpoint).map_err(crate::failure::io(&args.checkpoint))?;
    let model = StainSeparator::from_bytes(&bytes).context(format!("{}", args.checkpoint.display()))?;
    let cfg = model.config();
    if let Some(names) = &args.stains {
        if names.len() != cfg.n_sources {
            return Err(usage(format!(
                "{} stain names given but the checkpoint separates {} stains ({})",
                names.len(),
                cfg.n_sources,
                cfg.stain_names.join(", ")
            )));
        }
    }
    let names = args.stains.clone().unwrap_or_else(|| cfg.stain_names.clone());
    let inputs = match &args.manifest {
        Some(m) => {
            let (base, records) = manifest_records(m, args.split)?;
            records.into_iter().map(|r| (r.id, base.join(r.mixed))).collect()
        }
        None => collect_inputs(&args.input)?,
    };
    if inputs.is_empty() {
        return Err(crate::failure::data("no input images found"));
    }
    create_dir(&args.out)?;
    for (stem, path) in &inputs {
        let mixed = read_image(path)?;
        let out = model.separate(&mixed).context(format!("{}", path.display()))?;
        let out = SourceSet::new(out.into_sources(), names.clone())?;
        write_source_set(&args.out, stem, &out, "png")?;
        log::debug!("separated {}", path.display());
    }
    #[derive(Serialize)]
    struct Params<'a> {
        args: &'a Args,
        checkpoint_sha256: String,
        checkpoint_iteration: usize,
        stain_names: &'a [String],
        inputs: usize,
    }
    let params = Params {
        args,
        checkpoint_sha256: sha256_hex(&bytes),
        checkpoint_iteration: model.iteration(),
        stain_names: &names,
        inputs: inputs.len(),
    };
    write_provenance(&args.out, "separate", &params, None)?;
    println!("separated {} images into {}", inputs.len(), args.out.display());
    Ok(())
}
