//! Image files, source-set sibling files, folder scanning and manifests.
//!
//! Images are 8-bit RGB PNG or TIFF. The members of a source set live next
//! to each other as `<stem>_src<i>.<ext>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::data::SplitRole;
use crate::error::{Error, Result};
use crate::types::{Image, Sample, SampleKind, SourceSet};

const EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| format_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Image::from_rgb8(h as usize, w as usize, img.as_raw())
}

/// Writes an 8-bit RGB file; the format follows the extension.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| format_err(path, e))
}

pub fn source_path(dir: &Path, stem: &str, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_src{index}.{ext}"))
}

pub fn write_source_set(dir: &Path, stem: &str, set: &SourceSet, ext: &str) -> Result<Vec<PathBuf>> {
    set.sources()
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = source_path(dir, stem, i, ext);
            write_image(&p, img).map(|_| p)
        })
        .collect()
}

pub fn read_source_set(paths: &[PathBuf], stain_names: Option<&[String]>) -> Result<SourceSet> {
    let images = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    match stain_names {
        Some(names) => SourceSet::new(images, names.to_vec()),
        None => SourceSet::unnamed(images),
    }
}

/// How mixed images and their single-stain counterparts are named.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NamingConvention {
    /// `x.png` with `x_src0.png .. x_src{N-1}.png`; `n_sources` pins N when set.
    Indexed { n_sources: Option<usize> },
    /// `<id><mixed_suffix>.<ext>` with `<id><source_suffix>.<ext>` in the same directory.
    Suffixes {
        mixed_suffix: String,
        source_suffixes: Vec<String>,
    },
}

impl Default for NamingConvention {
    fn default() -> Self {
        NamingConvention::Indexed { n_sources: None }
    }
}

impl NamingConvention {
    /// Layout of the two-stain macrophage set: merged `_(c1+c5)`, DAPI `_c1`
    /// and CD11b/APC `_c5` in per-image subfolders.
    pub fn bbbc020() -> Self {
        NamingConvention::Suffixes {
            mixed_suffix: "_(c1+c5)".into(),
            source_suffixes: vec!["_c1".into(), "_c5".into()],
        }
    }
}

/// File-level result of matching a folder against a naming convention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FolderScan {
    /// `(id, mixed path, source paths)` sorted by id.
    pub triples: Vec<(String, PathBuf, Vec<PathBuf>)>,
    pub unmatched: Vec<PathBuf>,
}

fn split_indexed_stem(stem: &str) -> Option<(&str, usize)> {
    let pos = stem.rfind("_src")?;
    let digits = &stem[pos + 4..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((&stem[..pos], digits.parse().ok()?))
}

fn list_images(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(io_err(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| format_err(root, e))?;
        if entry.file_type().is_file() && is_image_file(entry.path()) {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn stem_of(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Matches image files under `root` (recursively) into mixed/source triples.
pub fn scan_folder(root: &Path, convention: &NamingConvention) -> Result<FolderScan> {
    let files = list_images(root)?;
    let mut scan = FolderScan::default();
    match convention {
        NamingConvention::Indexed { n_sources } => {
            let mut mixed: BTreeMap<(PathBuf, String), Vec<PathBuf>> = BTreeMap::new();
            let mut sources: BTreeMap<(PathBuf, String), BTreeMap<usize, PathBuf>> = BTreeMap::new();
            for f in files {
                let dir = f.parent().unwrap_or(root).to_path_buf();
                let stem = stem_of(&f);
                match split_indexed_stem(&stem) {
                    Some((base, idx)) => {
                        let slot = sources.entry((dir, base.to_string())).or_default();
                        if let Some(dup) = slot.insert(idx, f) {
                            scan.unmatched.push(dup);
                        }
                    }
                    None => mixed.entry((dir, stem)).or_default().push(f),
                }
            }
            let mut seen_ids = BTreeSet::new();
            for (key, mut paths) in mixed {
                let mixed_path = paths.remove(0);
                scan.unmatched.extend(paths);
                let srcs = sources.remove(&key).unwrap_or_default();
                let contiguous = !srcs.is_empty() && srcs.keys().copied().eq(0..srcs.len());
                let count_ok = n_sources.is_none_or(|n| n == srcs.len());
                if contiguous && count_ok && seen_ids.insert(key.1.clone()) {
                    scan.triples.push((key.1, mixed_path, srcs.into_values().collect()));
                } else {
                    scan.unmatched.push(mixed_path);
                    scan.unmatched.extend(srcs.into_values());
                }
            }
            for (_, srcs) in sources {
                scan.unmatched.extend(srcs.into_values());
            }
        }
        NamingConvention::Suffixes {
            mixed_suffix,
            source_suffixes,
        } => {
            let by_dir_stem: BTreeMap<(PathBuf, String), PathBuf> = files
                .iter()
                .map(|f| ((f.parent().unwrap_or(root).to_path_buf(), stem_of(f)), f.clone()))
                .collect();
            let mut used = BTreeSet::new();
            let mut seen_ids = BTreeSet::new();
            for ((dir, stem), path) in &by_dir_stem {
                let Some(id) = stem.strip_suffix(mixed_suffix.as_str()) else {
                    continue;
                };
                if mixed_suffix.is_empty() && source_suffixes.iter().any(|s| stem.ends_with(s.as_str())) {
                    continue;
                }
                let srcs: Option<Vec<PathBuf>> = source_suffixes
                    .iter()
                    .map(|s| by_dir_stem.get(&(dir.clone(), format!("{id}{s}"))).cloned())
                    .collect();
                match srcs {
                    Some(srcs) if seen_ids.insert(id.to_string()) => {
                        used.insert(path.clone());
                        used.extend(srcs.iter().cloned());
                        scan.triples.push((id.to_string(), path.clone(), srcs));
                    }
                    _ => {}
                }
            }
            scan.unmatched.extend(files.into_iter().filter(|f| !used.contains(f)));
        }
    }
    scan.triples.sort_by(|a, b| a.0.cmp(&b.0));
    scan.unmatched.sort();
    Ok(scan)
}

/// Groups `<stem>_src<i>` files under `root` into source sets keyed by stem,
/// ignoring every other file. Stems whose indices are not `0..N` are
/// returned in the second list.
pub fn scan_source_sets(root: &Path) -> Result<(Vec<(String, Vec<PathBuf>)>, Vec<String>)> {
    let mut groups: BTreeMap<String, BTreeMap<usize, PathBuf>> = BTreeMap::new();
    let mut broken = BTreeSet::new();
    for f in list_images(root)? {
        let stem = stem_of(&f);
        if let Some((base, idx)) = split_indexed_stem(&stem) {
            if groups.entry(base.to_string()).or_default().insert(idx, f).is_some() {
                broken.insert(base.to_string());
            }
        }
    }
    let mut sets = Vec::new();
    for (stem, srcs) in groups {
        if broken.contains(&stem) || !srcs.keys().copied().eq(0..srcs.len()) {
            broken.insert(stem);
        } else {
            sets.push((stem, srcs.into_values().collect()));
        }
    }
    Ok((sets, broken.into_iter().collect()))
}

/// Whether a file stem names a member of a source set (`<stem>_src<i>`).
pub fn is_source_stem(stem: &str) -> bool {
    split_indexed_stem(stem).is_some()
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_file() && is_image_file(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loaded triples plus the files that could not be matched.
#[derive(Debug, Clone)]
pub struct LoadedFolder {
    pub samples: Vec<Sample>,
    pub unmatched: Vec<PathBuf>,
}

pub fn load_folder(root: &Path, convention: &NamingConvention, stain_names: Option<&[String]>) -> Result<LoadedFolder> {
    let scan = scan_folder(root, convention)?;
    let samples = scan
        .triples
        .iter()
        .map(|(id, mixed, srcs)| {
            Ok(Sample::new(
                id.clone(),
                read_image(mixed)?,
                read_source_set(srcs, stain_names)?,
                SampleKind::Observed,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedFolder {
        samples,
        unmatched: scan.unmatched,
    })
}

/// One manifest line; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: SplitRole,
    pub mixed: PathBuf,
    pub sources: Vec<PathBuf>,
    pub stain_names: Vec<String>,
    pub kind: SampleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

/// JSON lines, one record per sample.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| format_err(path, e))?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

impl ManifestRecord {
    /// Reads the referenced files, resolving paths against `base`.
    pub fn load(&self, base: &Path) -> Result<Sample> {
        let mixed = read_image(&base.join(&self.mixed))?;
        let paths: Vec<PathBuf> = self.sources.iter().map(|p| base.join(p)).collect();
        let truth = read_source_set(&paths, Some(&self.stain_names))?;
        let mut sample = Sample::new(self.id.clone(), mixed, truth, self.kind);
        sample.parent = self.parent.clone();
        Ok(sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch_image(path: &Path, v: f64) {
        write_image(path, &Image::filled(4, 4, [v; 3])).unwrap();
    }

    #[test]
    fn source_sets_are_grouped_by_stem() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        for name in ["a.png", "a_src0.png", "a_src1.png", "b_src0.png", "b_src1.png", "c_src1.png", "notes.txt"] {
            if name.ends_with(".png") {
                touch_image(&d.join(name), 0.5);
            } else {
                fs::write(d.join(name), "x").unwrap();
            }
        }
        let (sets, broken) = scan_source_sets(d).unwrap();
        let stems: Vec<_> = sets.iter().map(|(s, p)| (s.as_str(), p.len())).collect();
        assert_eq!(stems, vec![("a", 2), ("b", 2)]);
        assert_eq!(broken, vec!["c".to_string()]);
        assert!(is_source_stem("a_src12") && !is_source_stem("a_srcx") && !is_source_stem("a"));
        assert_eq!(list_image_files(d).unwrap().len(), 6);
    }

    #[test]
    fn image_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 6, |y, x| [y as f64 / 5.0, x as f64 / 6.0, 0.123]);
        for ext in ["png", "tif"] {
            let p = dir.path().join(format!("a.{ext}"));
            write_image(&p, &img).unwrap();
            let back = read_image(&p).unwrap();
            assert_eq!(back.dims(), (5, 6));
            assert!(img.max_abs_diff(&back) <= 1.0 / 255.0);
        }
    }

    #[test]
    fn indexed_triple_is_found() {
        let dir = tempfile::tempdir().unwrap();
        touch_image(&dir.path().join("x.png"), 0.5);
        touch_image(&dir.path().join("x_src0.png"), 0.2);
        touch_image(&dir.path().join("x_src1.png"), 0.3);
        let scan = scan_folder(dir.path(), &NamingConvention::default()).unwrap();
        assert_eq!(scan.triples.len(), 1);
        assert_eq!(scan.triples[0].0, "x");
        assert_eq!(scan.triples[0].2.len(), 2);
        assert!(scan.unmatched.is_empty());
        let loaded = load_folder(dir.path(), &NamingConvention::default(), None).unwrap();
        assert_eq!(loaded.samples[0].truth.len(), 2);
    }

    #[test]
    fn lone_mixed_image_is_unmatched() {
        let dir = tempfile::tempdir().unwrap();
        touch_image(&dir.path().join("y.png"), 0.5);
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let scan = scan_folder(dir.path(), &NamingConvention::default()).unwrap();
        assert!(scan.triples.is_empty());
        assert_eq!(scan.unmatched, vec![dir.path().join("y.png")]);
    }

    #[test]
    fn suffix_convention_walks_subfolders() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["jw-1h 1", "jw-1h 2"] {
            let sub = dir.path().join(name);
            touch_image(&sub.join(format!("{name}_(c1+c5).TIF")), 0.5);
            touch_image(&sub.join(format!("{name}_c1.TIF")), 0.2);
            touch_image(&sub.join(format!("{name}_c5.TIF")), 0.3);
        }
        touch_image(&dir.path().join("jw-1h 2").join("extra_c1.TIF"), 0.1);
        let scan = scan_folder(dir.path(), &NamingConvention::bbbc020()).unwrap();
        assert_eq!(scan.triples.len(), 2);
        assert_eq!(scan.triples[1].0, "jw-1h 2");
        assert_eq!(scan.unmatched.len(), 1);
    }

    #[test]
    fn missing_root_is_an_error() {
        assert!(scan_folder(Path::new("/nonexistent/for/sure"), &NamingConvention::default()).is_err());
    }

    #[test]
    fn manifest_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let set = SourceSet::new(
            vec![Image::filled(4, 4, [0.2; 3]), Image::filled(4, 4, [0.6; 3])],
            vec!["DAPI".into(), "CD11b".into()],
        )
        .unwrap();
        touch_image(&dir.path().join("s.png"), 0.8);
        let srcs = write_source_set(dir.path(), "s", &set, "png").unwrap();
        let rec = ManifestRecord {
            id: "s".into(),
            split: SplitRole::Test,
            mixed: "s.png".into(),
            sources: srcs.iter().map(|p| p.file_name().unwrap().into()).collect(),
            stain_names: set.stain_names().to_vec(),
            kind: SampleKind::Observed,
            parent: None,
        };
        let mpath = dir.path().join("manifest.jsonl");
        write_manifest(&mpath, std::slice::from_ref(&rec)).unwrap();
        let back = read_manifest(&mpath).unwrap();
        assert_eq!(back, vec![rec]);
        let sample = back[0].load(dir.path()).unwrap();
        assert_eq!(sample.truth.stain_names(), ["DAPI", "CD11b"]);
        assert!(sample.truth.source(0).max_abs_diff(set.source(0)) <= 1.0 / 255.0);
        assert!(sample.truth.source(1).max_abs_diff(set.source(1)) <= 1.0 / 255.0);
    }
}
