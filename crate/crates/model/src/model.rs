//! The trainable state of a separation run: generators, discriminators and
//! their optimizers.

use candle_core::{DType, Tensor};
use stainsep_core::{CouplingMode, Image, SourceSet, TrainConfig};

use crate::error::{ModelError, Result};
use crate::networks::{Discriminator, Generator, Param};
use crate::optim::{Adam, AdamConfig};
use crate::seed::{rng_for, Stream};
use crate::tensor::{images_to_tensor, tensor_to_images};

#[derive(Debug)]
pub struct StainSeparator {
    pub(crate) config: TrainConfig,
    pub(crate) dtype: DType,
    pub(crate) generators: Vec<Generator>,
    pub(crate) discriminators: Vec<Discriminator>,
    pub(crate) gen_opts: Vec<Adam>,
    pub(crate) disc_opts: Vec<Adam>,
    /// Number of completed training iterations.
    pub(crate) iteration: usize,
}

pub fn discriminator_count(config: &TrainConfig) -> usize {
    match config.coupling_mode {
        CouplingMode::Coupled => 1,
        CouplingMode::IndependentGans => config.n_sources,
        CouplingMode::L1Only => 0,
    }
}

fn adam_config(config: &TrainConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: config.learning_rate,
        beta1: config.momentum1,
        beta2: config.momentum2,
        eps: config.adam_eps,
    }
}

impl StainSeparator {
    /// Freshly initialized networks; all randomness derives from `config.seed`.
    pub fn new(config: &TrainConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        if !matches!(dtype, DType::F32 | DType::F64) {
            return Err(ModelError::Data(format!("unsupported dtype {dtype:?}")));
        }
        let generators = (0..config.n_sources)
            .map(|i| Generator::new(&config.network, &mut rng_for(config.seed, Stream::GeneratorInit, i as u64, 0), dtype))
            .collect::<Result<Vec<_>>>()?;
        let discriminators = (0..discriminator_count(config))
            .map(|j| Discriminator::new(&config.network, &mut rng_for(config.seed, Stream::DiscriminatorInit, j as u64, 0), dtype))
            .collect::<Result<Vec<_>>>()?;
        let adam = adam_config(config);
        let gen_opts = generators
            .iter()
            .map(|g| Adam::new(g.params(), adam))
            .collect::<Result<Vec<_>>>()?;
        let disc_opts = discriminators
            .iter()
            .map(|d| Adam::new(d.params(), adam))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            dtype,
            generators,
            discriminators,
            gen_opts,
            disc_opts,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn discriminators(&self) -> &[Discriminator] {
        &self.discriminators
    }

    /// Every parameter under a stable, unique name.
    pub fn named_params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for (i, g) in self.generators.iter().enumerate() {
            out.extend(g.params().into_iter().map(|p| Param {
                name: format!("g{i}.{}", p.name),
                var: p.var,
            }));
        }
        for (j, d) in self.discriminators.iter().enumerate() {
            out.extend(d.params().into_iter().map(|p| Param {
                name: format!("d{j}.{}", p.name),
                var: p.var,
            }));
        }
        out
    }

    pub(crate) fn named_optimizers(&self) -> Vec<(String, &Adam)> {
        let g = self.gen_opts.iter().enumerate().map(|(i, o)| (format!("g{i}"), o));
        let d = self.disc_opts.iter().enumerate().map(|(j, o)| (format!("d{j}"), o));
        g.chain(d).collect()
    }

    pub(crate) fn named_optimizers_mut(&mut self) -> Vec<(String, &mut Adam)> {
        let g = self.gen_opts.iter_mut().enumerate().map(|(i, o)| (format!("g{i}"), o));
        let d = self.disc_opts.iter_mut().enumerate().map(|(j, o)| (format!("d{j}"), o));
        g.chain(d).collect()
    }

    /// Generator outputs for a `B x 3 x H x W` batch without dropout.
    pub fn forward_inference(&self, mixed: &Tensor) -> Result<Vec<Tensor>> {
        self.generators.iter().map(|g| g.forward(mixed, None)).collect()
    }

    /// Splits one mixed image into its estimated single-stain images.
    pub fn separate(&self, mixed: &Image) -> Result<SourceSet> {
        let (h, w) = mixed.dims();
        self.generators[0].check_size(h, w)?;
        let x = images_to_tensor(&[mixed], self.dtype)?;
        let sources = self
            .forward_inference(&x)?
            .iter()
            .map(|t| Ok(tensor_to_images(t)?.remove(0).clamped()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SourceSet::new(sources, self.config.stain_names.clone())?)
    }
}

/// Top-level or nested field paths whose values differ between two configurations.
pub fn config_differences(a: &TrainConfig, b: &TrainConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        match (a, b) {
            (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
                for (k, va) in x {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    match y.get(k) {
                        Some(vb) => walk(&path, va, vb, out),
                        None => out.push(path),
                    }
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    let va = serde_json::to_value(a).expect("config serializes");
    let vb = serde_json::to_value(b).expect("config serializes");
    walk("", &va, &vb, &mut out);
    out
}
