//! Linear fluorescence imaging model.
//!
//! A mixed image is the pixel-wise sum of its single-stain images, and each
//! single-stain image is a spectrum vector scaled by a density map:
//! `I = sum_i V_i * D_i`. Synthesis clamps into the canonical range; the
//! `*_linear` variants keep the raw sum.

use crate::error::{Error, Result};
use crate::types::{DensityMaps, Image, SourceSet, SpectrumMatrix, CHANNELS};

/// Pixel-wise sum of `images` without clamping.
pub fn synthesize_linear(images: &[Image]) -> Result<Image> {
    let first = images.first().ok_or(Error::EmptySourceSet)?;
    for img in &images[1..] {
        first.check_same_dims(img)?;
    }
    let mut out = first.clone();
    for img in &images[1..] {
        for (o, v) in out.data_mut().iter_mut().zip(img.data()) {
            *o += v;
        }
    }
    Ok(out)
}

/// The synthesis module: sum of all sources clamped into `[0, 1]`.
pub fn synthesize(sources: &SourceSet) -> Image {
    // SourceSet guarantees matching dims and at least one member.
    synthesize_linear(sources.sources())
        .expect("source set invariants")
        .clamped()
}

fn check_render_args(spectra: &SpectrumMatrix, densities: &DensityMaps) -> Result<()> {
    if spectra.n_stains() != densities.n_stains() {
        return Err(Error::StainCount {
            spectra: spectra.n_stains(),
            densities: densities.n_stains(),
        });
    }
    Ok(())
}

/// Single-stain image `V_i * D_i`, unclamped.
pub fn render_component(spectrum: [f64; CHANNELS], density: &[f64], height: usize, width: usize) -> Result<Image> {
    if density.len() != height * width {
        return Err(Error::Shape(format!("density plane has {} entries for {height}x{width}", density.len())));
    }
    let mut data = Vec::with_capacity(density.len() * CHANNELS);
    for &d in density {
        data.extend(spectrum.iter().map(|s| s * d));
    }
    Image::new(height, width, data)
}

/// `V x D` without clamping.
pub fn render_linear(spectra: &SpectrumMatrix, densities: &DensityMaps) -> Result<Image> {
    check_render_args(spectra, densities)?;
    let (h, w) = densities.dims();
    let mut data = vec![0.0; h * w * CHANNELS];
    for (col, plane) in spectra.columns().iter().zip(densities.planes()) {
        for (px, &d) in data.chunks_exact_mut(CHANNELS).zip(plane) {
            for c in 0..CHANNELS {
                px[c] += col[c] * d;
            }
        }
    }
    Image::new(h, w, data)
}

pub fn render(spectra: &SpectrumMatrix, densities: &DensityMaps) -> Result<Image> {
    Ok(render_linear(spectra, densities)?.clamped())
}

/// Per-stain images `V_i * D_i`, clamped into the canonical range.
pub fn render_sources(spectra: &SpectrumMatrix, densities: &DensityMaps) -> Result<SourceSet> {
    check_render_args(spectra, densities)?;
    let (h, w) = densities.dims();
    let sources = spectra
        .columns()
        .iter()
        .zip(densities.planes())
        .map(|(col, plane)| render_component(*col, plane, h, w).map(|img| img.clamped()))
        .collect::<Result<Vec<_>>>()?;
    SourceSet::unnamed(sources)
}

/// Least-squares pseudo-inverse of a spectrum matrix with at most three
/// linearly independent columns, from a Gram-Schmidt QR factorization.
#[derive(Debug, Clone)]
pub struct SpectralInverse {
    /// Row `i` maps an RGB pixel to the density of stain `i`.
    rows: Vec<[f64; CHANNELS]>,
}

/// Relative residual below which a column counts as dependent on earlier ones.
const RANK_TOL: f64 = 1e-8;

impl SpectralInverse {
    pub fn new(spectra: &SpectrumMatrix) -> Result<Self> {
        let n = spectra.n_stains();
        if n > CHANNELS {
            return Err(Error::Singular {
                columns: (0..n).collect(),
            });
        }
        // V = Q R with orthonormal Q (3 x n) and upper-triangular R (n x n).
        let mut q: Vec<[f64; CHANNELS]> = Vec::with_capacity(n);
        let mut r = vec![vec![0.0; n]; n];
        for j in 0..n {
            let v = spectra.column(j);
            let mut u = v;
            for (k, qk) in q.iter().enumerate() {
                let proj = dot(qk, &v);
                r[k][j] = proj;
                for c in 0..CHANNELS {
                    u[c] -= proj * qk[c];
                }
            }
            let norm = dot(&u, &u).sqrt();
            if norm < RANK_TOL * dot(&v, &v).sqrt().max(f64::MIN_POSITIVE) {
                let mut columns: Vec<usize> = (0..j).filter(|&k| r[k][j].abs() > RANK_TOL).collect();
                if columns.is_empty() {
                    columns = (0..j).collect();
                }
                columns.push(j);
                return Err(Error::Singular { columns });
            }
            r[j][j] = norm;
            q.push(u.map(|x| x / norm));
        }
        // pinv = R^-1 Q^T; invert R by back substitution column by column.
        let mut rinv = vec![vec![0.0; n]; n];
        for col in 0..n {
            for row in (0..n).rev() {
                let mut acc = if row == col { 1.0 } else { 0.0 };
                for k in row + 1..n {
                    acc -= r[row][k] * rinv[k][col];
                }
                rinv[row][col] = acc / r[row][row];
            }
        }
        let rows = (0..n)
            .map(|i| {
                let mut row = [0.0; CHANNELS];
                for (k, qk) in q.iter().enumerate() {
                    for c in 0..CHANNELS {
                        row[c] += rinv[i][k] * qk[c];
                    }
                }
                row
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn n_stains(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn densities_at(&self, pixel: &[f64; CHANNELS]) -> impl Iterator<Item = f64> + '_ {
        let p = *pixel;
        self.rows.iter().map(move |row| dot(row, &p))
    }
}

fn dot(a: &[f64; CHANNELS], b: &[f64; CHANNELS]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Per-pixel least-squares densities with negatives clipped to zero.
pub fn solve_densities(image: &Image, spectra: &SpectrumMatrix) -> Result<DensityMaps> {
    let inverse = SpectralInverse::new(spectra)?;
    let n = inverse.n_stains();
    let mut maps = vec![Vec::with_capacity(image.pixel_count()); n];
    for px in image.pixels() {
        for (plane, d) in maps.iter_mut().zip(inverse.densities_at(&px)) {
            plane.push(d.max(0.0));
        }
    }
    DensityMaps::new(image.height(), image.width(), maps)
}

/// Model-based unmixing with known spectra: solve for densities, then
/// render each stain on its own.
pub fn unmix_with_spectra(image: &Image, spectra: &SpectrumMatrix) -> Result<SourceSet> {
    let densities = solve_densities(image, spectra)?;
    render_sources(spectra, &densities)
}
