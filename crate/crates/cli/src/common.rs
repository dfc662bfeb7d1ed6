use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use stainsep_core::data::SplitRole;
use stainsep_core::io::{is_source_stem, list_image_files, read_manifest, ManifestRecord};

use crate::failure::{data, io, usage, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| data(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(io(path))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(io(path))
}

/// Record of how an output directory was produced.
#[derive(Debug, Serialize)]
pub struct Provenance<'a, P: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub parameters: &'a P,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<&'a str>,
}

pub fn write_provenance<P: Serialize>(dir: &Path, command: &str, parameters: &P, config_hash: Option<&str>) -> CliResult<()> {
    let p = Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        parameters,
        config_hash,
    };
    write_json(&dir.join("provenance.json"), &p)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Mixed images named by files or directories. Directory members that are
/// themselves source-set files (`<stem>_src<i>`) are skipped.
pub fn collect_inputs(paths: &[PathBuf]) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for f in list_image_files(p)? {
                let stem = file_stem(&f);
                if !is_source_stem(&stem) {
                    out.push((stem, f));
                }
            }
        } else if p.is_file() {
            out.push((file_stem(p), p.clone()));
        } else {
            return Err(data(format!("{}: no such file or directory", p.display())));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for (stem, path) in &out {
        if !seen.insert(stem.clone()) {
            return Err(usage(format!("two inputs share the name {stem} ({})", path.display())));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

impl SplitChoice {
    pub fn admits(self, role: SplitRole) -> bool {
        match self {
            SplitChoice::All => true,
            SplitChoice::Train => role == SplitRole::Train,
            SplitChoice::Test => role == SplitRole::Test,
        }
    }
}

/// Manifest records of the chosen split, with the directory their paths are relative to.
pub fn manifest_records(path: &Path, split: SplitChoice) -> CliResult<(PathBuf, Vec<ManifestRecord>)> {
    let records = read_manifest(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((base, records.into_iter().filter(|r| split.admits(r.split)).collect()))
}
