//! Domain values shared by every pipeline: images, source sets, samples,
//! spectra and density maps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of color channels carried by every [`Image`].
pub const CHANNELS: usize = 3;

/// An `H x W x 3` intensity array stored row-major with interleaved channels.
///
/// The canonical range is `[0, 1]`. Construction only checks the buffer
/// length so that out-of-range data (an unclamped synthesis, a corrupted
/// sample) can still be represented and reported by [`Image::violations`].
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {height}x{width}")));
        }
        let expected = height * width * CHANNELS;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "buffer of {} values does not match {height}x{width}x{CHANNELS} = {expected}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; CHANNELS])
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; CHANNELS]) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    /// Builds an image by evaluating `f(y, x)` for every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; CHANNELS]) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; CHANNELS] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; CHANNELS]> + '_ {
        self.data.chunks_exact(CHANNELS).map(|p| [p[0], p[1], p[2]])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy with every intensity clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Extracts the `size x size` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Result<Self> {
        if y + height > self.height || x + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({y},{x}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for row in y..y + height {
            let start = (row * self.width + x) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + width * CHANNELS]);
        }
        Image::new(height, width, data)
    }

    pub fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    /// Invariant violations of the canonical form, empty when the image is valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let non_finite = self.data.iter().filter(|v| !v.is_finite()).count();
        if non_finite > 0 {
            out.push(Violation::NonFinite { count: non_finite });
        }
        let negative = self.data.iter().filter(|v| **v < 0.0).count();
        if negative > 0 {
            out.push(Violation::Negative { count: negative });
        }
        let above = self.data.iter().filter(|v| **v > 1.0).count();
        if above > 0 {
            out.push(Violation::AboveOne { count: above });
        }
        out
    }

    pub fn is_canonical(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// Quantizes to 8-bit RGB, rounding to nearest after clamping.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(height, width, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Ordered collection of single-stain images with matching dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSet {
    sources: Vec<Image>,
    stain_names: Vec<String>,
}

impl SourceSet {
    pub fn new(sources: Vec<Image>, stain_names: Vec<String>) -> Result<Self> {
        let first = sources.first().ok_or(Error::EmptySourceSet)?;
        for img in &sources[1..] {
            first.check_same_dims(img)?;
        }
        if stain_names.len() != sources.len() {
            return Err(Error::Shape(format!(
                "{} stain names for {} sources",
                stain_names.len(),
                sources.len()
            )));
        }
        Ok(Self { sources, stain_names })
    }

    /// Source set labelled `stain0 .. stain{N-1}`.
    pub fn unnamed(sources: Vec<Image>) -> Result<Self> {
        let names = default_stain_names(sources.len());
        Self::new(sources, names)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.sources[0].dims()
    }

    pub fn sources(&self) -> &[Image] {
        &self.sources
    }

    pub fn source(&self, i: usize) -> &Image {
        &self.sources[i]
    }

    pub fn stain_names(&self) -> &[String] {
        &self.stain_names
    }

    pub fn into_sources(self) -> Vec<Image> {
        self.sources
    }

    /// Reorders members so that output slot `k` holds input member `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Shape(format!("{order:?} is not a permutation of 0..{}", self.len())));
        }
        Ok(Self {
            sources: order.iter().map(|&i| self.sources[i].clone()).collect(),
            stain_names: order.iter().map(|&i| self.stain_names[i].clone()).collect(),
        })
    }

    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Result<Self> {
        let sources = self
            .sources
            .iter()
            .map(|s| s.crop(y, x, height, width))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sources,
            stain_names: self.stain_names.clone(),
        })
    }
}

pub fn default_stain_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("stain{i}")).collect()
}

/// Whether a sample's mixture is known to be an exact synthesis of its truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Synthetic,
    Observed,
}

/// One supervised pair: a mixed image and its ground-truth decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub mixed: Image,
    pub truth: SourceSet,
    pub kind: SampleKind,
    /// Identifier of the full-resolution image a patch was cut from.
    pub parent: Option<String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, mixed: Image, truth: SourceSet, kind: SampleKind) -> Self {
        Self {
            id: id.into(),
            mixed,
            truth,
            kind,
            parent: None,
        }
    }

    /// Parent id when the sample is a patch, else its own id.
    pub fn group(&self) -> &str {
        self.parent.as_deref().unwrap_or(&self.id)
    }
}

/// Tolerance of the `mixed == clamp(sum(truth))` check for synthetic samples.
pub const SYNTHETIC_CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite { count: usize },
    Negative { count: usize },
    AboveOne { count: usize },
    DimensionMismatch { mixed: (usize, usize), truth: (usize, usize) },
    SyntheticInconsistent { max_abs_error: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { count } => write!(f, "finiteness: {count} non-finite intensities"),
            Violation::Negative { count } => write!(f, "non-negativity: {count} negative intensities"),
            Violation::AboveOne { count } => write!(f, "canonical range: {count} intensities above 1"),
            Violation::DimensionMismatch { mixed, truth } => write!(
                f,
                "dimension: mixed is {}x{} but truth is {}x{}",
                mixed.0, mixed.1, truth.0, truth.1
            ),
            Violation::SyntheticInconsistent { max_abs_error } => write!(
                f,
                "synthetic consistency: mixed deviates from clamp(sum of truth) by {max_abs_error:e}"
            ),
        }
    }
}

/// Checks every sample invariant, returning one entry per failed invariant.
///
/// Intensity violations are merged across the mixed image and all truth
/// members so that each invariant is reported at most once.
pub fn validate_sample(s: &Sample) -> Vec<Violation> {
    let mut non_finite = 0;
    let mut negative = 0;
    let mut above = 0;
    for img in std::iter::once(&s.mixed).chain(s.truth.sources()) {
        for v in img.violations() {
            match v {
                Violation::NonFinite { count } => non_finite += count,
                Violation::Negative { count } => negative += count,
                Violation::AboveOne { count } => above += count,
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    if non_finite > 0 {
        out.push(Violation::NonFinite { count: non_finite });
    }
    if negative > 0 {
        out.push(Violation::Negative { count: negative });
    }
    if above > 0 {
        out.push(Violation::AboveOne { count: above });
    }
    if s.mixed.dims() != s.truth.dims() {
        out.push(Violation::DimensionMismatch {
            mixed: s.mixed.dims(),
            truth: s.truth.dims(),
        });
        return out;
    }
    if s.kind == SampleKind::Synthetic {
        let mut max_err: f64 = 0.0;
        for (p, mixed) in s.mixed.data().iter().enumerate() {
            let sum: f64 = s.truth.sources().iter().map(|img| img.data()[p]).sum();
            max_err = max_err.max((sum.clamp(0.0, 1.0) - mixed).abs());
        }
        if max_err.is_nan() || max_err > SYNTHETIC_CONSISTENCY_TOL {
            out.push(Violation::SyntheticInconsistent { max_abs_error: max_err });
        }
    }
    out
}

/// Column `i` is the unit-norm RGB spectrum of stain `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMatrix {
    columns: Vec<[f64; CHANNELS]>,
}

impl SpectrumMatrix {
    /// Normalizes each column to unit Euclidean norm.
    pub fn new(columns: Vec<[f64; CHANNELS]>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidSpectrum("no spectra given".into()));
        }
        let mut out = Vec::with_capacity(columns.len());
        for (i, col) in columns.iter().enumerate() {
            if col.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidSpectrum(format!("column {i} has negative or non-finite entries: {col:?}")));
            }
            let norm = norm3(col);
            if norm == 0.0 {
                return Err(Error::InvalidSpectrum(format!("column {i} is zero")));
            }
            out.push(col.map(|v| v / norm));
        }
        Ok(Self { columns: out })
    }

    pub fn n_stains(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> [f64; CHANNELS] {
        self.columns[i]
    }

    pub fn columns(&self) -> &[[f64; CHANNELS]] {
        &self.columns
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            columns: order.iter().map(|&i| self.columns[i]).collect(),
        }
    }
}

pub(crate) fn norm3(v: &[f64; CHANNELS]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `N` planes of per-pixel stain proportions, each `height x width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMaps {
    height: usize,
    width: usize,
    maps: Vec<Vec<f64>>,
}

impl DensityMaps {
    pub fn new(height: usize, width: usize, maps: Vec<Vec<f64>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::Shape("no density planes".into()));
        }
        for (i, m) in maps.iter().enumerate() {
            if m.len() != height * width {
                return Err(Error::Shape(format!(
                    "density plane {i} has {} entries, expected {}",
                    m.len(),
                    height * width
                )));
            }
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Shape(format!("density plane {i} has negative or non-finite entries")));
            }
        }
        Ok(Self { height, width, maps })
    }

    pub fn zeros(n: usize, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            maps: vec![vec![0.0; height * width]; n],
        }
    }

    pub fn n_stains(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn plane(&self, i: usize) -> &[f64] {
        &self.maps[i]
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.maps
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            height: self.height,
            width: self.width,
            maps: order.iter().map(|&i| self.maps[i].clone()).collect(),
        }
    }
}

/// Per-patch discriminator outputs, each in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != height * width || scores.is_empty() {
            return Err(Error::Shape(format!(
                "{} scores for a {height}x{width} map",
                scores.len()
            )));
        }
        Ok(Self { height, width, scores })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            scores: vec![value; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_set(values: &[f64], h: usize, w: usize) -> SourceSet {
        SourceSet::unnamed(values.iter().map(|&v| Image::filled(h, w, [v; 3])).collect()).unwrap()
    }

    #[test]
    fn consistent_synthetic_sample_has_no_violations() {
        let truth = const_set(&[0.3, 0.5], 8, 8);
        let mixed = Image::filled(8, 8, [0.8; 3]);
        let s = Sample::new("a", mixed, truth, SampleKind::Synthetic);
        assert!(validate_sample(&s).is_empty());

        // sum saturates: clamp(0.7 + 0.6) = 1
        let truth = const_set(&[0.7, 0.6], 8, 8);
        let s = Sample::new("b", Image::filled(8, 8, [1.0; 3]), truth, SampleKind::Synthetic);
        assert!(validate_sample(&s).is_empty());
    }

    #[test]
    fn dimension_mismatch_is_one_violation() {
        let truth = const_set(&[0.1, 0.2], 128, 128);
        let s = Sample::new("m", Image::zeros(256, 256), truth, SampleKind::Observed);
        let v = validate_sample(&s);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::DimensionMismatch { .. }));
        assert!(v[0].to_string().starts_with("dimension"));
    }

    #[test]
    fn negative_intensity_is_one_violation() {
        let truth = const_set(&[0.1, 0.2], 4, 4);
        let mut mixed = Image::filled(4, 4, [0.3; 3]);
        mixed.data_mut()[5] = -0.01;
        let s = Sample::new("n", mixed, truth, SampleKind::Observed);
        let v = validate_sample(&s);
        assert_eq!(v, vec![Violation::Negative { count: 1 }]);
        assert!(v[0].to_string().contains("non-negativity"));
    }

    #[test]
    fn inconsistent_synthetic_sample_is_flagged() {
        let truth = const_set(&[0.1, 0.2], 4, 4);
        let s = Sample::new("x", Image::filled(4, 4, [0.5; 3]), truth.clone(), SampleKind::Synthetic);
        assert!(matches!(validate_sample(&s)[..], [Violation::SyntheticInconsistent { .. }]));
        // observed samples carry no such guarantee
        let s = Sample::new("x", Image::filled(4, 4, [0.5; 3]), truth, SampleKind::Observed);
        assert!(validate_sample(&s).is_empty());
    }

    #[test]
    fn source_set_rejects_mixed_dims() {
        let err = SourceSet::unnamed(vec![Image::zeros(4, 4), Image::zeros(4, 5)]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        assert!(matches!(SourceSet::unnamed(vec![]), Err(Error::EmptySourceSet)));
    }

    #[test]
    fn spectra_are_unit_norm() {
        let v = SpectrumMatrix::new(vec![[3.0, 4.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(v.column(0), [0.6, 0.8, 0.0]);
        assert_eq!(v.column(1), [0.0, 0.0, 1.0]);
        assert!(SpectrumMatrix::new(vec![[0.0; 3]]).is_err());
        assert!(SpectrumMatrix::new(vec![[-0.1, 1.0, 0.0]]).is_err());
    }

    #[test]
    fn rgb8_quantization_bound() {
        let img = Image::from_fn(5, 7, |y, x| [y as f64 / 4.0, x as f64 / 6.0, 0.3337]);
        let back = Image::from_rgb8(5, 7, &img.to_rgb8()).unwrap();
        assert!(img.max_abs_diff(&back) <= 1.0 / 255.0);
    }

    #[test]
    fn crop_reads_the_right_window() {
        let img = Image::from_fn(6, 6, |y, x| [y as f64, x as f64, 0.0]);
        let c = img.crop(2, 3, 2, 3).unwrap();
        assert_eq!(c.pixel(0, 0), [2.0, 3.0, 0.0]);
        assert_eq!(c.pixel(1, 2), [3.0, 5.0, 0.0]);
        assert!(img.crop(5, 0, 2, 2).is_err());
    }
}
