//! Encoder-decoder generator with skip connections and a conditional
//! patch discriminator.
//!
//! Convolutions use 4x4 kernels with padding 1. Normalization is
//! per-sample instance normalization without affine parameters, paired
//! with bias-free convolutions.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stainsep_core::NetworkConfig;

use crate::error::{ModelError, Result};

const KERNEL: usize = 4;
const NORM_EPS: f64 = 1e-5;
const LEAK: f64 = 0.2;
const DROPOUT_P: f64 = 0.5;

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
}

#[derive(Debug)]
struct Conv {
    weight: Var,
    bias: Option<Var>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

impl Conv {
    /// `shape` is `(out, in, k, k)` for convolutions and `(in, out, k, k)` for
    /// transposed convolutions; `bias_len` is the output channel count.
    fn new(rng: &mut ChaCha8Rng, shape: (usize, usize), bias: Option<usize>, std: f64, dtype: DType) -> Result<Self> {
        let n = shape.0 * shape.1 * KERNEL * KERNEL;
        let w = Tensor::from_vec(gaussian(rng, n, std), (shape.0, shape.1, KERNEL, KERNEL), &Device::Cpu)?.to_dtype(dtype)?;
        let bias = bias
            .map(|len| -> Result<Var> { Ok(Var::from_tensor(&Tensor::zeros(len, dtype, &Device::Cpu)?)?) })
            .transpose()?;
        Ok(Self {
            weight: Var::from_tensor(&w)?,
            bias,
        })
    }

    fn add_bias(&self, x: Tensor) -> Result<Tensor> {
        Ok(match &self.bias {
            Some(b) => x.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?,
            None => x,
        })
    }

    fn forward(&self, x: &Tensor, stride: usize) -> Result<Tensor> {
        self.add_bias(x.conv2d(self.weight.as_tensor(), 1, stride, 1, 1)?)
    }

    fn forward_transposed(&self, x: &Tensor) -> Result<Tensor> {
        self.add_bias(x.conv_transpose2d(self.weight.as_tensor(), 1, 0, 2, 1)?)
    }

    fn params(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param {
            name: format!("{prefix}.weight"),
            var: self.weight.clone(),
        });
        if let Some(b) = &self.bias {
            out.push(Param {
                name: format!("{prefix}.bias"),
                var: b.clone(),
            });
        }
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(LEAK, 0.0)?)?)
}

pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(3)?.mean_keepdim(2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
    Ok(centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?)
}

/// Logistic function written through `tanh`, whose gradient stays finite
/// for large activations.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x.affine(0.5, 0.0)?.tanh()? + 1.0)? * 0.5)?)
}

/// Source of inverted-dropout masks; `None` disables dropout (inference).
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

fn dropout(x: Tensor, rng: &mut DropoutRng<'_>) -> Result<Tensor> {
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x);
    };
    let keep = 1.0 / (1.0 - DROPOUT_P);
    let mask: Vec<f64> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < DROPOUT_P { 0.0 } else { keep })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), &Device::Cpu)?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

/// Encoder-decoder generator mapping a mixed image to one single-stain image.
///
/// Encoder stage `l` halves the resolution and has `min(base * 2^l, max)`
/// channels. Decoder stage `l` upsamples and concatenates encoder stage `l`'s
/// features before the next stage; the final stage maps back to RGB through
/// `(tanh + 1) / 2`.
#[derive(Debug)]
pub struct Generator {
    levels: usize,
    dropout: bool,
    down: Vec<Conv>,
    up: Vec<Conv>,
}

impl Generator {
    pub fn new(cfg: &NetworkConfig, rng: &mut ChaCha8Rng, dtype: DType) -> Result<Self> {
        let levels = cfg.gen_levels;
        let widths: Vec<usize> = (0..levels)
            .map(|l| (cfg.gen_base_width << l.min(30)).min(cfg.gen_max_width))
            .collect();
        let std = cfg.init_std;
        let mut down = Vec::with_capacity(levels);
        for l in 0..levels {
            let c_in = if l == 0 { 3 } else { widths[l - 1] };
            let normed = l > 0 && l + 1 < levels;
            down.push(Conv::new(rng, (widths[l], c_in), (!normed).then_some(widths[l]), std, dtype)?);
        }
        let mut up = Vec::with_capacity(levels);
        for l in 0..levels {
            let c_in = if l + 1 == levels { widths[l] } else { 2 * widths[l] };
            let c_out = if l == 0 { 3 } else { widths[l - 1] };
            let normed = l > 0;
            up.push(Conv::new(rng, (c_in, c_out), (!normed).then_some(c_out), std, dtype)?);
        }
        Ok(Self {
            levels,
            dropout: cfg.gen_dropout,
            down,
            up,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Inputs must have both sides divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.levels
    }

    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(ModelError::UnsupportedSize { height, width, multiple: m });
        }
        Ok(())
    }

    fn has_dropout(&self, l: usize) -> bool {
        self.dropout && l >= 1 && l + 4 >= self.levels && l + 2 <= self.levels
    }

    /// `x` is `B x 3 x H x W` in `[0, 1]`; the output has the same shape and range.
    pub fn forward(&self, x: &Tensor, mut rng: DropoutRng<'_>) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        self.check_size(h, w)?;
        let l_max = self.levels - 1;
        let mut skips = Vec::with_capacity(self.levels);
        let mut h = self.down[0].forward(&x.affine(2.0, -1.0)?, 2)?;
        for l in 1..self.levels {
            skips.push(h.clone());
            h = self.down[l].forward(&leaky_relu(&h)?, 2)?;
            if l < l_max {
                h = instance_norm(&h)?;
            }
        }
        // h is now the innermost encoder output
        for l in (0..self.levels).rev() {
            let input = if l == l_max { h } else { Tensor::cat(&[&h, &skips[l]], 1)? };
            h = self.up[l].forward_transposed(&input.relu()?)?;
            if l > 0 {
                h = instance_norm(&h)?;
                if self.has_dropout(l) {
                    h = dropout(h, &mut rng)?;
                }
            }
        }
        Ok(((h.tanh()? + 1.0)? * 0.5)?)
    }

    pub fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for (l, c) in self.down.iter().enumerate() {
            c.params(&format!("down{l}"), &mut out);
        }
        for (l, c) in self.up.iter().enumerate() {
            c.params(&format!("up{l}"), &mut out);
        }
        out
    }
}

/// Conditional patch discriminator over the channel concatenation of a
/// conditioning image and a candidate image.
///
/// With three stride-2 stages after the first convolution, each score sees
/// a 70x70 input window and a 256x256 pair yields a 30x30 score map.
#[derive(Debug)]
pub struct Discriminator {
    layers: Vec<Conv>,
    head: Conv,
}

impl Discriminator {
    pub fn new(cfg: &NetworkConfig, rng: &mut ChaCha8Rng, dtype: DType) -> Result<Self> {
        let base = cfg.disc_base_width;
        let n = cfg.disc_layers;
        let std = cfg.init_std;
        let width = |k: usize| base * (1usize << k.min(3));
        let mut layers = vec![Conv::new(rng, (base, 6), Some(base), std, dtype)?];
        for k in 1..=n {
            layers.push(Conv::new(rng, (width(k), width(k - 1)), None, std, dtype)?);
        }
        let head = Conv::new(rng, (1, width(n)), Some(1), std, dtype)?;
        Ok(Self { layers, head })
    }

    fn stride(&self, k: usize) -> usize {
        if k + 1 < self.layers.len() || k == 0 {
            2
        } else {
            1
        }
    }

    /// Spatial size of the score map for a square input of side `size`.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        let mut s = size as isize;
        for k in 0..self.layers.len() {
            s = (s + 2 - KERNEL as isize) / self.stride(k) as isize + 1;
        }
        s = s + 2 - KERNEL as isize + 1;
        (s > 0).then_some(s as usize)
    }

    /// Returns `B x 1 x h x w` scores in `(0, 1)`.
    pub fn forward(&self, conditioning: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        if conditioning.dims() != candidate.dims() {
            return Err(ModelError::Data(format!(
                "discriminator inputs differ in shape: {:?} vs {:?}",
                conditioning.dims(),
                candidate.dims()
            )));
        }
        let x = Tensor::cat(&[conditioning, candidate], 1)?.affine(2.0, -1.0)?;
        let mut h = leaky_relu(&self.layers[0].forward(&x, 2)?)?;
        for k in 1..self.layers.len() {
            h = self.layers[k].forward(&h, self.stride(k))?;
            h = leaky_relu(&instance_norm(&h)?)?;
        }
        sigmoid(&self.head.forward(&h, 1)?)
    }

    pub fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for (k, c) in self.layers.iter().enumerate() {
            c.params(&format!("conv{k}"), &mut out);
        }
        self.head.params("head", &mut out);
        out
    }
}

pub fn param_count(params: &[Param]) -> usize {
    params.iter().map(|p| p.var.elem_count()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            gen_levels: 3,
            gen_base_width: 4,
            gen_max_width: 8,
            gen_dropout: true,
            disc_base_width: 4,
            disc_layers: 3,
            init_std: 0.02,
        }
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        let g = Generator::new(&tiny(), &mut rng(0), DType::F32).unwrap();
        for (h, w) in [(8, 8), (16, 24), (32, 8)] {
            let x = Tensor::rand(0f32, 1f32, (2, 3, h, w), &Device::Cpu).unwrap();
            let y = g.forward(&x, None).unwrap();
            assert_eq!(y.dims4().unwrap(), (2, 3, h, w));
            let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
            assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
            let mean = v.iter().sum::<f32>() / v.len() as f32;
            let var = v.iter().map(|p| (p - mean).powi(2)).sum::<f32>() / v.len() as f32;
            assert!(var > 0.0);
        }
        assert!(matches!(
            g.forward(&Tensor::zeros((1, 3, 12, 8), DType::F32, &Device::Cpu).unwrap(), None),
            Err(ModelError::UnsupportedSize { multiple: 8, .. })
        ));
    }

    #[test]
    fn dropout_is_placed_on_inner_decoder_stages() {
        let cfg = NetworkConfig::default();
        let g = Generator::new(
            &NetworkConfig {
                gen_base_width: 1,
                gen_max_width: 1,
                ..cfg
            },
            &mut rng(0),
            DType::F32,
        )
        .unwrap();
        let stages: Vec<usize> = (0..8).filter(|&l| g.has_dropout(l)).collect();
        assert_eq!(stages, vec![4, 5, 6]);
    }

    #[test]
    fn inference_is_deterministic_and_dropout_is_not() {
        let g = Generator::new(&tiny(), &mut rng(1), DType::F32).unwrap();
        let x = Tensor::rand(0f32, 1f32, (1, 3, 16, 16), &Device::Cpu).unwrap();
        let a: Vec<f32> = g.forward(&x, None).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = g.forward(&x, None).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        let c: Vec<f32> = g.forward(&x, Some(&mut rng(5))).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn patch_discriminator_map_size() {
        // 256 -> 128 -> 64 -> 32 -> 31 -> 30
        let cfg = NetworkConfig {
            disc_base_width: 2,
            ..NetworkConfig::default()
        };
        let d = Discriminator::new(&cfg, &mut rng(0), DType::F32).unwrap();
        assert_eq!(d.output_size(256), Some(30));
        assert_eq!(d.output_size(64), Some(6));
        let a = Tensor::rand(0f32, 1f32, (1, 3, 256, 256), &Device::Cpu).unwrap();
        let b = Tensor::rand(0f32, 1f32, (1, 3, 256, 256), &Device::Cpu).unwrap();
        let s = d.forward(&a, &b).unwrap();
        assert_eq!(s.dims4().unwrap(), (1, 1, 30, 30));
        let v: Vec<f32> = s.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|p| *p > 0.0 && *p < 1.0));
        let s2: Vec<f32> = d.forward(&a, &a).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_ne!(v, s2);
        assert!(d.forward(&a, &Tensor::zeros((1, 3, 128, 128), DType::F32, &Device::Cpu).unwrap()).is_err());
    }

    #[test]
    fn full_size_widths() {
        let cfg = NetworkConfig::default();
        let d = Discriminator::new(&cfg, &mut rng(0), DType::F32).unwrap();
        let widths: Vec<usize> = d.params().iter().filter(|p| p.name.ends_with("weight")).map(|p| p.var.dims()[0]).collect();
        assert_eq!(widths, vec![64, 128, 256, 512, 1]);
    }

    #[test]
    fn initialization_is_seeded() {
        let a = Generator::new(&tiny(), &mut rng(3), DType::F32).unwrap();
        let b = Generator::new(&tiny(), &mut rng(3), DType::F32).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            let x: Vec<f32> = p.var.flatten_all().unwrap().to_vec1().unwrap();
            let y: Vec<f32> = q.var.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(x, y);
        }
    }
}
