//! Patch extraction, train/test splitting and synthetic ground-truthed data.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{render_component, synthesize};
use crate::types::{DensityMaps, Image, Sample, SampleKind, SourceSet, SpectrumMatrix};

/// A uniform `rows x cols` grid of square patches with equal strides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub rows: usize,
    pub cols: usize,
    pub stride_y: usize,
    pub stride_x: usize,
}

impl PatchGrid {
    /// Top-left corners in row-major order.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r * self.stride_y, c * self.stride_x)))
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }
}

fn axis_fits(extent: usize, patch: usize, n: usize) -> bool {
    // n > 1 patches along an axis need distinct offsets
    extent >= patch && (n == 1 || extent - patch >= n - 1)
}

fn stride(extent: usize, patch: usize, n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (extent - patch) / (n - 1)
    }
}

fn feasible_grid(height: usize, width: usize, patch: usize, count: usize) -> Option<(usize, usize)> {
    let aspect = (height as f64 / width as f64).ln();
    (1..=count)
        .filter(|r| count.is_multiple_of(*r))
        .map(|r| (r, count / r))
        .filter(|&(r, c)| axis_fits(height, patch, r) && axis_fits(width, patch, c))
        .min_by(|a, b| {
            let da = ((a.0 as f64 / a.1 as f64).ln() - aspect).abs();
            let db = ((b.0 as f64 / b.1 as f64).ln() - aspect).abs();
            da.total_cmp(&db)
        })
}

/// Chooses the factorization `rows * cols = count` whose shape best matches
/// the image aspect ratio among those that fit.
pub fn patch_grid(height: usize, width: usize, patch: usize, count: usize) -> Result<PatchGrid> {
    if patch == 0 || count == 0 {
        return Err(Error::param("patch size and count must be positive"));
    }
    if patch > height.min(width) {
        return Err(Error::param(format!(
            "patch size {patch} exceeds the smaller image side of {height}x{width}"
        )));
    }
    match feasible_grid(height, width, patch, count) {
        Some((rows, cols)) => Ok(PatchGrid {
            patch,
            rows,
            cols,
            stride_y: stride(height, patch, rows),
            stride_x: stride(width, patch, cols),
        }),
        None => {
            let max = (height - patch + 1) * (width - patch + 1);
            let nearest = (1..=count.max(max))
                .flat_map(|d| [count.checked_sub(d), Some(count + d)])
                .flatten()
                .find(|&n| n >= 1 && feasible_grid(height, width, patch, n).is_some())
                .unwrap_or(1);
            Err(Error::param(format!(
                "{count} patches of {patch}px cannot tile a {height}x{width} image as a grid; nearest feasible count is {nearest}"
            )))
        }
    }
}

/// Cuts `count` aligned patches from the mixed image and every source at
/// identical coordinates. Patch ids are `<parent id>_p<k>`.
pub fn extract_patches(sample: &Sample, patch: usize, count: usize) -> Result<Vec<Sample>> {
    sample.mixed.check_same_dims(sample.truth.source(0))?;
    let (h, w) = sample.mixed.dims();
    let grid = patch_grid(h, w, patch, count)?;
    let width = count.to_string().len().max(2);
    grid.origins()
        .enumerate()
        .map(|(k, (y, x))| {
            Ok(Sample {
                id: format!("{}_p{k:0width$}", sample.id),
                mixed: sample.mixed.crop(y, x, patch, patch)?,
                truth: sample.truth.crop(y, x, patch, patch)?,
                kind: sample.kind,
                parent: Some(sample.group().to_string()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Test,
}

/// Unit over which the test fraction is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Individual patch pairs.
    #[default]
    Sample,
    /// Whole parent images, so no parent contributes to both sides.
    Parent,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleKey {
    pub id: String,
    pub group: String,
}

impl From<&Sample> for SampleKey {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.id.clone(),
            group: s.group().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub mode: SplitMode,
    pub patch_size: Option<usize>,
    pub split: BTreeMap<String, SplitRole>,
}

impl DatasetManifest {
    pub fn ids(&self, role: SplitRole) -> Vec<&str> {
        self.split
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn train_ids(&self) -> Vec<&str> {
        self.ids(SplitRole::Train)
    }

    pub fn test_ids(&self) -> Vec<&str> {
        self.ids(SplitRole::Test)
    }

    pub fn role(&self, id: &str) -> Option<SplitRole> {
        self.split.get(id).copied()
    }
}

/// Seeded random train/test split. The result depends only on the set of
/// keys, not on their order.
pub fn make_split(keys: &[SampleKey], test_fraction: f64, seed: u64, mode: SplitMode) -> Result<DatasetManifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let ids: BTreeSet<&str> = keys.iter().map(|k| k.id.as_str()).collect();
    if ids.len() != keys.len() {
        return Err(Error::param("sample ids must be unique"));
    }
    if ids.len() < 2 {
        return Err(Error::param(format!("need at least 2 samples to split, got {}", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test: BTreeSet<String> = match mode {
        SplitMode::Sample => {
            let mut order: Vec<&str> = ids.iter().copied().collect();
            order.shuffle(&mut rng);
            let n_test = (test_fraction * order.len() as f64).round() as usize;
            order[..n_test].iter().map(|s| s.to_string()).collect()
        }
        SplitMode::Parent => {
            let groups: BTreeSet<&str> = keys.iter().map(|k| k.group.as_str()).collect();
            if groups.len() < 2 {
                return Err(Error::param("parent-level split needs at least 2 parent images"));
            }
            let mut order: Vec<&str> = groups.into_iter().collect();
            order.shuffle(&mut rng);
            let n_test = (test_fraction * order.len() as f64).round() as usize;
            let test_groups: BTreeSet<&str> = order[..n_test].iter().copied().collect();
            keys.iter()
                .filter(|k| test_groups.contains(k.group.as_str()))
                .map(|k| k.id.clone())
                .collect()
        }
    };
    let split = ids
        .into_iter()
        .map(|id| {
            let role = if test.contains(id) { SplitRole::Test } else { SplitRole::Train };
            (id.to_string(), role)
        })
        .collect();
    Ok(DatasetManifest {
        seed,
        test_fraction,
        mode,
        patch_size: None,
        split,
    })
}

/// Spatial arrangement of synthetic density blobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobLayout {
    /// Independent blob positions per stain; supports overlap freely.
    #[default]
    Free,
    /// Each stain confined to its own vertical band with a gap between bands.
    Disjoint,
    /// Every stain shares one density map (full co-localization).
    Colocalized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthOptions {
    pub blobs_min: usize,
    pub blobs_max: usize,
    /// Blob standard deviation range as fractions of the image side.
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Peak density range of a single blob.
    pub amp_min: f64,
    pub amp_max: f64,
    pub layout: BlobLayout,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            blobs_min: 3,
            blobs_max: 7,
            sigma_min: 0.04,
            sigma_max: 0.12,
            amp_min: 0.4,
            amp_max: 0.9,
            layout: BlobLayout::Free,
        }
    }
}

struct Band {
    x0: usize,
    x1: usize,
}

fn blob_plane(rng: &mut ChaCha8Rng, size: usize, opts: &SynthOptions, band: Option<&Band>) -> Vec<f64> {
    let n_blobs = rng.random_range(opts.blobs_min..=opts.blobs_max.max(opts.blobs_min));
    let s = size as f64;
    let (bx0, bx1) = band.map_or((0.0, s), |b| (b.x0 as f64, b.x1 as f64));
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let cy = rng.random_range(0.0..s);
            let cx = rng.random_range(bx0..bx1);
            let sigma = rng.random_range(opts.sigma_min..=opts.sigma_max) * s;
            let amp = rng.random_range(opts.amp_min..=opts.amp_max);
            (cy, cx, sigma, amp)
        })
        .collect();
    let mut plane = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            if let Some(b) = band {
                if x < b.x0 || x >= b.x1 {
                    continue;
                }
            }
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let v: f64 = blobs
                .iter()
                .map(|&(cy, cx, sigma, amp)| {
                    let r2 = (fy - cy).powi(2) + (fx - cx).powi(2);
                    amp * (-r2 / (2.0 * sigma * sigma)).exp()
                })
                .sum();
            plane[y * size + x] = v.min(1.0);
        }
    }
    plane
}

/// Synthetic sample together with the factors it was rendered from.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub sample: Sample,
    pub densities: DensityMaps,
}

/// Generates samples whose sources are `V_i * D_i` for random soft-blob
/// density maps and whose mixture is `clamp(sum_i I_i)`.
pub fn synth_generate_with_densities(
    n_samples: usize,
    image_size: usize,
    seed: u64,
    spectra: &SpectrumMatrix,
    opts: &SynthOptions,
) -> Result<Vec<SyntheticSample>> {
    if image_size < 32 {
        return Err(Error::param(format!("synthetic image size must be at least 32, got {image_size}")));
    }
    if opts.blobs_min == 0 || opts.sigma_min <= 0.0 || opts.sigma_min > opts.sigma_max || opts.amp_min > opts.amp_max {
        return Err(Error::param("invalid synthetic blob options"));
    }
    let n = spectra.n_stains();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = image_size / 16;
    let bands: Vec<Band> = (0..n)
        .map(|k| Band {
            x0: k * image_size / n + if k == 0 { 0 } else { gap / 2 },
            x1: (k + 1) * image_size / n - if k + 1 == n { 0 } else { gap - gap / 2 },
        })
        .collect();
    let digits = n_samples.to_string().len().max(3);
    let mut out = Vec::with_capacity(n_samples);
    for idx in 0..n_samples {
        let planes: Vec<Vec<f64>> = match opts.layout {
            BlobLayout::Free => (0..n).map(|_| blob_plane(&mut rng, image_size, opts, None)).collect(),
            BlobLayout::Disjoint => bands.iter().map(|b| blob_plane(&mut rng, image_size, opts, Some(b))).collect(),
            BlobLayout::Colocalized => {
                let shared = blob_plane(&mut rng, image_size, opts, None);
                vec![shared; n]
            }
        };
        let densities = DensityMaps::new(image_size, image_size, planes)?;
        let sources = spectra
            .columns()
            .iter()
            .zip(densities.planes())
            .map(|(col, plane)| render_component(*col, plane, image_size, image_size).map(|i| i.clamped()))
            .collect::<Result<Vec<Image>>>()?;
        let truth = SourceSet::unnamed(sources)?;
        let mixed = synthesize(&truth);
        out.push(SyntheticSample {
            sample: Sample::new(format!("synth{idx:0digits$}"), mixed, truth, SampleKind::Synthetic),
            densities,
        });
    }
    Ok(out)
}

pub fn synth_generate(
    n_samples: usize,
    image_size: usize,
    seed: u64,
    spectra: &SpectrumMatrix,
    opts: &SynthOptions,
) -> Result<Vec<Sample>> {
    Ok(synth_generate_with_densities(n_samples, image_size, seed, spectra, opts)?
        .into_iter()
        .map(|s| s.sample)
        .collect())
}

/// Blue nuclear stain and yellow membrane stain, resembling the two-color
/// fluorescence images used for benchmarking.
pub fn two_stain_spectra() -> SpectrumMatrix {
    SpectrumMatrix::new(vec![[0.05, 0.15, 1.0], [1.0, 0.85, 0.05]]).expect("valid constant spectra")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_sample;

    fn sample_of(h: usize, w: usize) -> Sample {
        let mixed = Image::from_fn(h, w, |y, x| [(y % 7) as f64 / 7.0, (x % 5) as f64 / 5.0, 0.0]);
        let a = mixed.map(|v| v * 0.5);
        let truth = SourceSet::unnamed(vec![a.clone(), a]).unwrap();
        Sample::new("img", mixed, truth, SampleKind::Observed)
    }

    #[test]
    fn full_size_patch_is_the_image() {
        let s = sample_of(256, 256);
        let patches = extract_patches(&s, 256, 1).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].mixed, s.mixed);
        assert_eq!(patches[0].truth, s.truth);
        assert_eq!(patches[0].parent.as_deref(), Some("img"));
    }

    #[test]
    fn microscopy_frame_grid() {
        let g = patch_grid(1040, 1388, 256, 30).unwrap();
        assert_eq!((g.rows, g.cols), (5, 6));
        assert_eq!((g.stride_y, g.stride_x), (196, 226));
        let last = g.origins().last().unwrap();
        assert!(last.0 + 256 <= 1040 && last.1 + 256 <= 1388);
    }

    #[test]
    fn overlapping_grid() {
        let g = patch_grid(300, 300, 256, 4).unwrap();
        assert_eq!((g.rows, g.cols, g.stride_y, g.stride_x), (2, 2, 44, 44));
        let s = sample_of(300, 300);
        let patches = extract_patches(&s, 256, 4).unwrap();
        assert_eq!(patches[3].mixed, s.mixed.crop(44, 44, 256, 256).unwrap());
        assert_eq!(patches[3].truth.source(1), &s.truth.source(1).crop(44, 44, 256, 256).unwrap());
    }

    #[test]
    fn infeasible_count_suggests_alternative() {
        // 13 is prime and neither 1x13 nor 13x1 fits a 300x300 image with 290px patches
        let err = patch_grid(300, 300, 290, 13).unwrap_err().to_string();
        assert!(err.contains("nearest feasible count is"), "{err}");
        assert!(patch_grid(100, 300, 128, 1).is_err());
    }

    fn keys(n: usize) -> Vec<SampleKey> {
        (0..n)
            .map(|i| SampleKey {
                id: format!("s{i:04}"),
                group: format!("g{}", i / 30),
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        let m = make_split(&keys(750), 0.10, 42, SplitMode::Sample).unwrap();
        assert_eq!(m.test_ids().len(), 75);
        assert_eq!(m.train_ids().len(), 675);
    }

    #[test]
    fn split_is_seeded_and_order_free() {
        let k = keys(10);
        let a = make_split(&k, 0.1, 1, SplitMode::Sample).unwrap();
        let mut rev = k.clone();
        rev.reverse();
        assert_eq!(a, make_split(&rev, 0.1, 1, SplitMode::Sample).unwrap());
        let differing = (0..20u64)
            .filter(|s| make_split(&k, 0.1, *s, SplitMode::Sample).unwrap().test_ids() != a.test_ids())
            .count();
        assert!(differing > 0);
        for s in 0..20 {
            assert_eq!(make_split(&k, 0.1, s, SplitMode::Sample).unwrap().test_ids().len(), 1);
        }
    }

    #[test]
    fn parent_split_keeps_groups_together() {
        let m = make_split(&keys(750), 0.1, 3, SplitMode::Parent).unwrap();
        let k = keys(750);
        let test_groups: BTreeSet<&str> = k.iter().filter(|k| m.role(&k.id) == Some(SplitRole::Test)).map(|k| k.group.as_str()).collect();
        let train_groups: BTreeSet<&str> = k.iter().filter(|k| m.role(&k.id) == Some(SplitRole::Train)).map(|k| k.group.as_str()).collect();
        assert!(test_groups.is_disjoint(&train_groups));
        // 25 parents -> round(2.5) = 3 test parents of 30 patches each
        assert_eq!(test_groups.len(), 3);
        assert_eq!(m.test_ids().len(), 90);
    }

    #[test]
    fn split_errors() {
        assert!(make_split(&keys(1), 0.1, 0, SplitMode::Sample).is_err());
        assert!(make_split(&keys(5), 0.0, 0, SplitMode::Sample).is_err());
        assert!(make_split(&keys(5), 1.0, 0, SplitMode::Sample).is_err());
    }

    #[test]
    fn synthetic_samples_are_consistent() {
        let v = two_stain_spectra();
        let samples = synth_generate(3, 64, 9, &v, &SynthOptions::default()).unwrap();
        for s in &samples {
            assert!(validate_sample(s).is_empty());
            assert_eq!(s.mixed, synthesize(&s.truth));
        }
        let again = synth_generate(3, 64, 9, &v, &SynthOptions::default()).unwrap();
        assert_eq!(samples, again);
        assert!(synth_generate(1, 16, 9, &v, &SynthOptions::default()).is_err());
    }

    #[test]
    fn disjoint_layout_has_disjoint_support() {
        let v = two_stain_spectra();
        let opts = SynthOptions {
            layout: BlobLayout::Disjoint,
            ..Default::default()
        };
        for s in synth_generate(4, 64, 5, &v, &opts).unwrap() {
            let a = s.truth.source(0).data();
            let b = s.truth.source(1).data();
            assert!(a.iter().zip(b).all(|(x, y)| *x == 0.0 || *y == 0.0));
            assert!(a.iter().any(|v| *v > 0.0) && b.iter().any(|v| *v > 0.0));
        }
    }

    #[test]
    fn synthetic_patches_stay_aligned() {
        let v = two_stain_spectra();
        let s = synth_generate(1, 96, 2, &v, &SynthOptions::default()).unwrap().remove(0);
        for p in extract_patches(&s, 64, 4).unwrap() {
            assert!(validate_sample(&p).is_empty());
            assert_eq!(p.mixed, synthesize(&p.truth));
        }
    }
}
