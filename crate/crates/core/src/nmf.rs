//! Non-negative matrix factorization baseline.
//!
//! The image is flattened to a `3 x P` matrix `X` and factored as `X ~ V D`
//! with `V` (`3 x N`) and `D` (`N x P`) non-negative, minimizing
//! `||X - V D||_F^2` by Lee-Seung multiplicative updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::render_sources;
use crate::types::{norm3, DensityMaps, Image, SourceSet, SpectrumMatrix, CHANNELS};

/// Keeps multiplicative updates defined when a denominator vanishes.
const DENOM_EPS: f64 = 1e-300;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmfOptions {
    pub n_components: usize,
    pub max_iters: usize,
    /// Stop once the relative objective improvement falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl NmfOptions {
    pub fn new(n_components: usize) -> Self {
        Self {
            n_components,
            max_iters: 2000,
            tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NmfResult {
    pub spectra: SpectrumMatrix,
    pub densities: DensityMaps,
    /// Squared Frobenius reconstruction error, initial value first.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

impl NmfResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("objective trace starts with the initial value")
    }

    /// Root-mean-square residual per matrix entry.
    pub fn rms_residual(&self) -> f64 {
        let (h, w) = self.densities.dims();
        (self.final_objective() / (h * w * CHANNELS) as f64).sqrt()
    }

    /// Reorders components to best match `reference` by total cosine similarity.
    pub fn aligned_to(&self, reference: &SpectrumMatrix) -> Self {
        let order = best_assignment(self.spectra.columns(), reference.columns());
        Self {
            spectra: self.spectra.permuted(&order),
            densities: self.densities.permuted(&order),
            objective: self.objective.clone(),
            iterations: self.iterations,
        }
    }
}

pub fn cosine(a: &[f64; CHANNELS], b: &[f64; CHANNELS]) -> f64 {
    let d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    d / (norm3(a) * norm3(b)).max(f64::MIN_POSITIVE)
}

/// Permutation `order` maximizing `sum_k cos(found[order[k]], reference[k])`,
/// by exhaustive search.
pub fn best_assignment(found: &[[f64; CHANNELS]], reference: &[[f64; CHANNELS]]) -> Vec<usize> {
    fn recurse(
        k: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<usize>,
        score: f64,
        sim: &[Vec<f64>],
        best: &mut (f64, Vec<usize>),
    ) {
        if k == sim.len() {
            if score > best.0 {
                *best = (score, current.clone());
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                current.push(j);
                recurse(k + 1, used, current, score + sim[k][j], sim, best);
                current.pop();
                used[j] = false;
            }
        }
    }
    let sim: Vec<Vec<f64>> = reference
        .iter()
        .map(|r| found.iter().map(|f| cosine(f, r)).collect())
        .collect();
    let mut best = (f64::NEG_INFINITY, (0..found.len()).collect());
    recurse(0, &mut vec![false; found.len()], &mut Vec::new(), 0.0, &sim, &mut best);
    best.1
}

struct Factors {
    n: usize,
    p: usize,
    /// Row-major `3 x n`.
    v: Vec<f64>,
    /// Row-major `n x p`.
    d: Vec<f64>,
}

impl Factors {
    fn objective(&self, x: &[f64]) -> f64 {
        let mut err = 0.0;
        for j in 0..self.p {
            for c in 0..CHANNELS {
                let mut approx = 0.0;
                for k in 0..self.n {
                    approx += self.v[c * self.n + k] * self.d[k * self.p + j];
                }
                let r = x[j * CHANNELS + c] - approx;
                err += r * r;
            }
        }
        err
    }

    fn update_d(&mut self, x: &[f64]) {
        let (n, p) = (self.n, self.p);
        // V^T V (n x n)
        let mut vtv = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                vtv[a * n + b] = (0..CHANNELS).map(|c| self.v[c * n + a] * self.v[c * n + b]).sum();
            }
        }
        let mut next = vec![0.0; n * p];
        for j in 0..p {
            for k in 0..n {
                let numer: f64 = (0..CHANNELS).map(|c| self.v[c * n + k] * x[j * CHANNELS + c]).sum();
                let denom: f64 = (0..n).map(|b| vtv[k * n + b] * self.d[b * p + j]).sum();
                next[k * p + j] = self.d[k * p + j] * numer / (denom + DENOM_EPS);
            }
        }
        self.d = next;
    }

    fn update_v(&mut self, x: &[f64]) {
        let (n, p) = (self.n, self.p);
        let mut xdt = vec![0.0; CHANNELS * n];
        let mut ddt = vec![0.0; n * n];
        for j in 0..p {
            for k in 0..n {
                let dk = self.d[k * p + j];
                for c in 0..CHANNELS {
                    xdt[c * n + k] += x[j * CHANNELS + c] * dk;
                }
                for b in 0..n {
                    ddt[k * n + b] += dk * self.d[b * p + j];
                }
            }
        }
        let mut next = vec![0.0; CHANNELS * n];
        for c in 0..CHANNELS {
            for k in 0..n {
                let denom: f64 = (0..n).map(|b| self.v[c * n + b] * ddt[b * n + k]).sum();
                next[c * n + k] = self.v[c * n + k] * xdt[c * n + k] / (denom + DENOM_EPS);
            }
        }
        self.v = next;
    }

    /// Rescales `V` columns to unit norm, moving the magnitude into `D`.
    fn normalize(&mut self) {
        for k in 0..self.n {
            let norm = (0..CHANNELS).map(|c| self.v[c * self.n + k].powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for c in 0..CHANNELS {
                    self.v[c * self.n + k] /= norm;
                }
                for j in 0..self.p {
                    self.d[k * self.p + j] *= norm;
                }
            }
        }
    }
}

/// Factors `image` into `n_components` spectra and density maps.
pub fn nmf_fit(image: &Image, opts: &NmfOptions) -> Result<NmfResult> {
    let n = opts.n_components;
    if n == 0 {
        return Err(Error::param("NMF needs at least one component"));
    }
    if image.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::param("NMF input must be finite and non-negative"));
    }
    let x = image.data();
    let p = image.pixel_count();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    if mean == 0.0 {
        return Err(Error::Degenerate("image is all zeros".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let v: Vec<f64> = (0..CHANNELS * n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let d: Vec<f64> = (0..n * p).map(|_| rng.random::<f64>() + 1e-3).collect();
    let mut f = Factors { n, p, v, d };
    // match the mean intensity of V D to the image
    let approx_mean = {
        let mut total = 0.0;
        for j in 0..p {
            for c in 0..CHANNELS {
                total += (0..n).map(|k| f.v[c * n + k] * f.d[k * p + j]).sum::<f64>();
            }
        }
        total / x.len() as f64
    };
    let scale = (mean / approx_mean).sqrt();
    f.v.iter_mut().chain(f.d.iter_mut()).for_each(|e| *e *= scale);
    f.normalize();

    let mut objective = vec![f.objective(x)];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        f.update_d(x);
        f.update_v(x);
        f.normalize();
        iterations += 1;
        let prev = *objective.last().unwrap();
        let cur = f.objective(x);
        objective.push(cur);
        if prev <= 0.0 || (prev - cur) / prev < opts.tol {
            break;
        }
    }

    let columns = (0..n).map(|k| [f.v[k], f.v[n + k], f.v[2 * n + k]]).collect::<Vec<_>>();
    // a component that collapsed to zero has no direction; give it a neutral one
    let columns = columns
        .into_iter()
        .map(|c| if norm3(&c) > 0.0 { c } else { [1.0, 1.0, 1.0] })
        .collect();
    let spectra = SpectrumMatrix::new(columns)?;
    let planes = (0..n).map(|k| f.d[k * p..(k + 1) * p].to_vec()).collect();
    let densities = DensityMaps::new(image.height(), image.width(), planes)?;
    Ok(NmfResult {
        spectra,
        densities,
        objective,
        iterations,
    })
}

/// Factors the image and renders each component as a single-stain image.
pub fn nmf_unmix(image: &Image, opts: &NmfOptions) -> Result<(SourceSet, NmfResult)> {
    let fit = nmf_fit(image, opts)?;
    let sources = render_sources(&fit.spectra, &fit.densities)?;
    Ok((sources, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate_with_densities, BlobLayout, SynthOptions};
    use crate::mixing::synthesize;

    /// Leading eigenvector of `X X^T` by power iteration.
    fn dominant_direction(img: &Image) -> [f64; 3] {
        let mut g = [[0.0; 3]; 3];
        for px in img.pixels() {
            for a in 0..3 {
                for b in 0..3 {
                    g[a][b] += px[a] * px[b];
                }
            }
        }
        let mut v = [1.0, 1.0, 1.0];
        for _ in 0..500 {
            let mut next = [0.0; 3];
            for a in 0..3 {
                for b in 0..3 {
                    next[a] += g[a][b] * v[b];
                }
            }
            let n = norm3(&next);
            v = next.map(|x| x / n);
        }
        v
    }

    #[test]
    fn single_stain_aligns_with_dominant_direction() {
        let v = SpectrumMatrix::new(vec![[0.9, 0.7, 0.1]]).unwrap();
        let data = synth_generate_with_densities(1, 48, 4, &v, &SynthOptions::default()).unwrap();
        let img = &data[0].sample.mixed;
        let fit = nmf_fit(img, &NmfOptions::new(1)).unwrap();
        assert!(cosine(&fit.spectra.column(0), &dominant_direction(img)) > 0.999);
        let (sources, _) = nmf_unmix(img, &NmfOptions::new(1)).unwrap();
        let l1 = sources.source(0).data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / img.data().len() as f64;
        assert!(l1 < 0.01, "l1 = {l1}");
    }

    #[test]
    fn zero_image_is_degenerate() {
        assert!(matches!(nmf_fit(&Image::zeros(8, 8), &NmfOptions::new(2)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn objective_is_monotone_and_factors_non_negative() {
        let v = SpectrumMatrix::new(vec![[0.2, 0.3, 1.0], [1.0, 0.6, 0.1]]).unwrap();
        let data = synth_generate_with_densities(1, 32, 11, &v, &SynthOptions::default()).unwrap();
        let opts = NmfOptions {
            max_iters: 300,
            tol: 0.0,
            ..NmfOptions::new(2)
        };
        let fit = nmf_fit(&data[0].sample.mixed, &opts).unwrap();
        assert_eq!(fit.iterations, 300);
        for w in fit.objective.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
        assert!(fit.densities.planes().iter().flatten().all(|d| *d >= 0.0));
        assert!(fit.spectra.columns().iter().flatten().all(|d| *d >= 0.0));
    }

    #[test]
    fn co_localized_mixture_reconstructs() {
        // Identical density maps make the per-stain split unidentifiable; only
        // the reconstruction is checked here.
        let v = SpectrumMatrix::new(vec![[0.0, 0.2, 1.0], [1.0, 0.8, 0.0]]).unwrap();
        let opts = SynthOptions {
            layout: BlobLayout::Colocalized,
            amp_max: 0.5,
            amp_min: 0.3,
            ..Default::default()
        };
        let data = synth_generate_with_densities(1, 32, 1, &v, &opts).unwrap();
        let img = &data[0].sample.mixed;
        let (sources, fit) = nmf_unmix(img, &NmfOptions::new(2)).unwrap();
        assert!(synthesize(&sources).max_abs_diff(img) < 0.01, "rms {}", fit.rms_residual());
    }

    #[test]
    fn assignment_finds_permutation() {
        let found = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let reference = [[0.9, 0.1, 0.0], [0.0, 0.9, 0.1], [0.1, 0.0, 0.9]];
        assert_eq!(best_assignment(&found, &reference), vec![1, 2, 0]);
    }
}
