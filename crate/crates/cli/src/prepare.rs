//! `prepare`: turn a dataset folder or synthetic generator output into
//! patch files, a split manifest and a provenance record.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use stainsep_core::data::{
    extract_patches, make_split, synth_generate, two_stain_spectra, BlobLayout, SampleKey, SplitMode, SynthOptions,
};
use stainsep_core::io::{read_image, read_source_set, scan_folder, write_image, write_manifest, write_source_set, ManifestRecord, NamingConvention};
use stainsep_core::types::default_stain_names;
use stainsep_core::{Sample, SampleKind, SpectrumMatrix};

use crate::common::{create_dir, write_provenance};
use crate::failure::{data, io, usage, CliResult, Context};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Naming {
    /// `x.png` with `x_src0.png`, `x_src1.png`, ...
    Indexed,
    /// Merged `_(c1+c5)`, `_c1` and `_c5` files per image
    Bbbc020,
    /// Custom suffixes given by --mixed-suffix and --source-suffix
    Suffixes,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Free,
    Disjoint,
    Colocalized,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitBy {
    /// Each sample (patch) is assigned independently
    Sample,
    /// All patches of one source image share a split
    Parent,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Output directory for patches, manifest.jsonl and provenance.json
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset root to scan recursively
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub root: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "indexed")]
    pub naming: Naming,
    #[arg(long, requires = "source_suffix")]
    pub mixed_suffix: Option<String>,
    #[arg(long, num_args = 1..)]
    pub source_suffix: Vec<String>,
    /// Generate this many synthetic samples instead of reading a dataset
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side length of synthetic images
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Number of stains of synthetic images (1 to 3)
    #[arg(long, default_value_t = 2)]
    pub n_stains: usize,
    #[arg(long, value_enum, default_value = "free")]
    pub layout: Layout,
    /// Comma-separated stain names
    #[arg(long, value_delimiter = ',')]
    pub stains: Option<Vec<String>>,
    /// Cut each image into square patches of this side
    #[arg(long)]
    pub patch: Option<usize>,
    /// Patches per image, on a uniform overlapping grid
    #[arg(long, default_value_t = 30, requires = "patch")]
    pub count: usize,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "sample")]
    pub split_by: SplitBy,
}

const PATCH_DIR: &str = "patches";

fn palette(n: usize) -> CliResult<SpectrumMatrix> {
    let blue = [0.05, 0.15, 1.0];
    let yellow = [1.0, 0.85, 0.05];
    let magenta = [0.9, 0.05, 0.7];
    Ok(match n {
        1 => SpectrumMatrix::new(vec![blue])?,
        2 => two_stain_spectra(),
        3 => SpectrumMatrix::new(vec![blue, yellow, magenta])?,
        _ => return Err(usage(format!("--n-stains must be 1, 2 or 3 for synthetic data, got {n}"))),
    })
}

fn convention(args: &Args) -> CliResult<NamingConvention> {
    Ok(match args.naming {
        Naming::Indexed => NamingConvention::Indexed {
            n_sources: args.stains.as_ref().map(Vec::len),
        },
        Naming::Bbbc020 => NamingConvention::bbbc020(),
        Naming::Suffixes => {
            let mixed_suffix = args
                .mixed_suffix
                .clone()
                .ok_or_else(|| usage("--naming suffixes needs --mixed-suffix and --source-suffix"))?;
            NamingConvention::Suffixes {
                mixed_suffix,
                source_suffixes: args.source_suffix.clone(),
            }
        }
    })
}

struct Writer<'a> {
    out: &'a Path,
    records: Vec<ManifestRecord>,
    keys: Vec<SampleKey>,
}

impl Writer<'_> {
    fn add(&mut self, sample: &Sample, patch: Option<(usize, usize)>) -> CliResult<()> {
        let pieces = match patch {
            Some((size, count)) => extract_patches(sample, size, count).context(format!("cutting {}", sample.id))?,
            None => vec![sample.clone()],
        };
        let dir = self.out.join(PATCH_DIR);
        for p in pieces {
            let mixed = PathBuf::from(PATCH_DIR).join(format!("{}.png", p.id));
            write_image(&self.out.join(&mixed), &p.mixed)?;
            let sources = write_source_set(&dir, &p.id, &p.truth, "png")?
                .into_iter()
                .map(|f| PathBuf::from(PATCH_DIR).join(f.file_name().expect("written file has a name")))
                .collect();
            self.keys.push(SampleKey::from(&p));
            self.records.push(ManifestRecord {
                id: p.id.clone(),
                split: stainsep_core::data::SplitRole::Train,
                mixed,
                sources,
                stain_names: p.truth.stain_names().to_vec(),
                kind: p.kind,
                parent: p.parent.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Counts {
    samples: usize,
    train: usize,
    test: usize,
    unmatched_files: usize,
}

pub fn run(args: &Args) -> CliResult<()> {
    if !(args.test_fraction > 0.0 && args.test_fraction < 1.0) {
        return Err(usage(format!("--test-fraction must lie in (0, 1), got {}", args.test_fraction)));
    }
    create_dir(&args.out.join(PATCH_DIR))?;
    let patch = args.patch.map(|p| (p, args.count));
    let mut writer = Writer {
        out: &args.out,
        records: Vec::new(),
        keys: Vec::new(),
    };
    let mut unmatched = Vec::new();
    if let Some(n) = args.synthetic {
        let spectra = palette(args.n_stains)?;
        let layout = match args.layout {
            Layout::Free => BlobLayout::Free,
            Layout::Disjoint => BlobLayout::Disjoint,
            Layout::Colocalized => BlobLayout::Colocalized,
        };
        let opts = SynthOptions {
            layout,
            ..SynthOptions::default()
        };
        let names = args.stains.clone().unwrap_or_else(|| default_stain_names(args.n_stains));
        if names.len() != args.n_stains {
            return Err(usage(format!("{} stain names given for {} stains", names.len(), args.n_stains)));
        }
        for mut s in synth_generate(n, args.size, args.seed, &spectra, &opts)? {
            s.truth = stainsep_core::SourceSet::new(s.truth.into_sources(), names.clone())?;
            writer.add(&s, patch)?;
        }
    } else {
        let root = args.root.as_ref().expect("clap requires --root without --synthetic");
        let scan = scan_folder(root, &convention(args)?)?;
        unmatched = scan.unmatched;
        for path in &unmatched {
            log::warn!("unmatched file {}", path.display());
        }
        if scan.triples.is_empty() {
            return Err(data(format!(
                "no mixed/source triples found under {} ({} unmatched files)",
                root.display(),
                unmatched.len()
            )));
        }
        // one image at a time keeps memory bounded by a single full-resolution triple
        for (id, mixed, sources) in &scan.triples {
            let sample = Sample::new(
                id.clone(),
                read_image(mixed)?,
                read_source_set(sources, args.stains.as_deref())?,
                SampleKind::Observed,
            );
            writer.add(&sample, patch)?;
        }
    }
    let mode = match args.split_by {
        SplitBy::Sample => SplitMode::Sample,
        SplitBy::Parent => SplitMode::Parent,
    };
    let split = make_split(&writer.keys, args.test_fraction, args.seed, mode)?;
    if split.test_ids().is_empty() {
        log::warn!("test split is empty; raise --test-fraction or add samples");
    }
    for r in &mut writer.records {
        r.split = split.role(&r.id).expect("every id is split");
    }
    write_manifest(&args.out.join("manifest.jsonl"), &writer.records)?;
    let counts = Counts {
        samples: writer.records.len(),
        train: split.train_ids().len(),
        test: split.test_ids().len(),
        unmatched_files: unmatched.len(),
    };
    if !unmatched.is_empty() {
        let list: String = unmatched.iter().map(|p| format!("{}\n", p.display())).collect();
        let path = args.out.join("unmatched.txt");
        std::fs::write(&path, list).map_err(io(&path))?;
    }
    #[derive(Serialize)]
    struct Params<'a> {
        args: &'a Args,
        counts: &'a Counts,
    }
    write_provenance(&args.out, "prepare", &Params { args, counts: &counts }, None)?;
    println!(
        "{} samples ({} train, {} test) written to {}",
        counts.samples,
        counts.train,
        counts.test,
        args.out.display()
    );
    Ok(())
}
