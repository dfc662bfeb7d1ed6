//! WebAssembly bindings for a single-page demo of the linear mixing model,
//! NMF unmixing and the quality metrics.

use stainsep_core::data::{synth_generate_with_densities, BlobLayout, SynthOptions};
use stainsep_core::metrics::Scores;
use stainsep_core::mixing::unmix_with_spectra;
use stainsep_core::nmf::{best_assignment, nmf_unmix, NmfOptions};
use stainsep_core::{Image, Sample, SourceSet, SpectrumMatrix};
use wasm_bindgen::prelude::*;

const STAINS: usize = 2;

/// A synthetic two-stain scene plus the latest unmixing estimate.
#[wasm_bindgen]
pub struct Scene {
    spectra: SpectrumMatrix,
    sample: Sample,
    estimate: Option<Estimate>,
}

struct Estimate {
    sources: SourceSet,
    spectra: SpectrumMatrix,
    iterations: usize,
}

fn parse_layout(name: &str) -> Result<BlobLayout, String> {
    match name {
        "free" => Ok(BlobLayout::Free),
        "disjoint" => Ok(BlobLayout::Disjoint),
        "colocalized" => Ok(BlobLayout::Colocalized),
        other => Err(format!("unknown layout `{other}`")),
    }
}

fn rgba(img: &Image) -> Vec<u8> {
    img.to_rgb8()
        .chunks_exact(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect()
}

impl Scene {
    pub fn generate(size: usize, seed: u64, colors: [[f64; 3]; STAINS], layout: &str) -> Result<Self, String> {
        let spectra = SpectrumMatrix::new(colors.to_vec()).map_err(|e| e.to_string())?;
        let opts = SynthOptions {
            layout: parse_layout(layout)?,
            ..SynthOptions::default()
        };
        let sample = synth_generate_with_densities(1, size, seed, &spectra, &opts)
            .map_err(|e| e.to_string())?
            .remove(0)
            .sample;
        Ok(Self {
            spectra,
            sample,
            estimate: None,
        })
    }

    /// Blind NMF (`method = "nmf"`) or inversion with the true spectra
    /// (`method = "known"`). Components are reordered to match the true stains.
    pub fn unmix_with(&mut self, method: &str, iterations: usize, seed: u64) -> Result<(), String> {
        let mixed = &self.sample.mixed;
        let (sources, spectra, iterations) = match method {
            "nmf" => {
                let opts = NmfOptions {
                    max_iters: iterations,
                    seed,
                    ..NmfOptions::new(STAINS)
                };
                let (sources, fit) = nmf_unmix(mixed, &opts).map_err(|e| e.to_string())?;
                let order = best_assignment(fit.spectra.columns(), self.spectra.columns());
                let sources = sources.permuted(&order).map_err(|e| e.to_string())?;
                (sources, fit.spectra.permuted(&order), fit.iterations)
            }
            "known" => {
                let sources = unmix_with_spectra(mixed, &self.spectra).map_err(|e| e.to_string())?;
                (sources, self.spectra.clone(), 0)
            }
            other => return Err(format!("unknown method `{other}`")),
        };
        self.estimate = Some(Estimate {
            sources,
            spectra,
            iterations,
        });
        Ok(())
    }

    /// MSE, PSNR and SSIM for each stain, flattened stain by stain.
    pub fn score_values(&self) -> Result<Vec<f64>, String> {
        let est = self.estimate.as_ref().ok_or("nothing unmixed yet")?;
        let mut out = Vec::new();
        for (pred, truth) in est.sources.sources().iter().zip(self.sample.truth.sources()) {
            let s = Scores::between(pred, truth).map_err(|e| e.to_string())?;
            out.extend([s.mse, s.psnr, s.ssim]);
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl Scene {
    /// Renders a random mixture of two stains with the given RGB colors in `[0, 1]`.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(size: usize, seed: u64, r1: f64, g1: f64, b1: f64, r2: f64, g2: f64, b2: f64, layout: &str) -> Result<Scene, JsError> {
        Self::generate(size, seed, [[r1, g1, b1], [r2, g2, b2]], layout).map_err(|e| JsError::new(&e))
    }

    pub fn size(&self) -> usize {
        self.sample.mixed.width()
    }

    pub fn mixed_rgba(&self) -> Vec<u8> {
        rgba(&self.sample.mixed)
    }

    pub fn truth_rgba(&self, stain: usize) -> Vec<u8> {
        rgba(self.sample.truth.source(stain.min(STAINS - 1)))
    }

    pub fn estimate_rgba(&self, stain: usize) -> Option<Vec<u8>> {
        self.estimate.as_ref().map(|e| rgba(e.sources.source(stain.min(STAINS - 1))))
    }

    pub fn unmix(&mut self, method: &str, iterations: usize, seed: u64) -> Result<(), JsError> {
        self.unmix_with(method, iterations, seed).map_err(|e| JsError::new(&e))
    }

    /// Estimated spectra, column by column.
    pub fn estimated_spectra(&self) -> Vec<f64> {
        self.estimate
            .as_ref()
            .map(|e| e.spectra.columns().iter().flatten().copied().collect())
            .unwrap_or_default()
    }

    pub fn iterations(&self) -> usize {
        self.estimate.as_ref().map_or(0, |e| e.iterations)
    }

    pub fn scores(&self) -> Result<Vec<f64>, JsError> {
        self.score_values().map_err(|e| JsError::new(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COLORS: [[f64; 3]; 2] = [[0.0, 0.3, 1.0], [1.0, 0.8, 0.0]];

    #[test]
    fn known_spectra_recover_disjoint_scene() {
        let mut scene = Scene::generate(32, 1, COLORS, "disjoint").unwrap();
        assert_eq!(scene.mixed_rgba().len(), 32 * 32 * 4);
        assert!(scene.estimate_rgba(0).is_none());
        scene.unmix_with("known", 0, 0).unwrap();
        let s = scene.score_values().unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!((s[1], s[4]), (100.0, 100.0));
    }

    #[test]
    fn nmf_estimate_is_aligned_to_true_stains() {
        let mut scene = Scene::generate(32, 2, COLORS, "disjoint").unwrap();
        scene.unmix_with("nmf", 2000, 0).unwrap();
        let v = scene.estimated_spectra();
        // First estimated column should be the blue-dominant one.
        assert!(v[2] > v[0] && v[3] > v[5]);
        assert!(scene.score_values().unwrap()[2] > 0.9);
    }

    #[test]
    fn bad_arguments_are_reported() {
        assert!(Scene::generate(32, 1, COLORS, "spiral").is_err());
        assert!(Scene::generate(8, 1, COLORS, "free").is_err());
        let mut scene = Scene::generate(32, 1, COLORS, "free").unwrap();
        assert!(scene.score_values().is_err());
        assert!(scene.unmix_with("magic", 1, 0).is_err());
    }
}
