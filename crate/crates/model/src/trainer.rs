//! Alternating discriminator/generator optimization with a warm-up phase.
//!
//! Iterations before the phase boundary train each generator on its own L1
//! term; afterwards the adversarial term is switched on with weight
//! `lambda_adv`. The discriminator is updated every iteration in both phases.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::Rng;
use stainsep_core::{CouplingMode, LossReport, Phase, Sample, TrainConfig};

use crate::error::{ModelError, Result};
use crate::losses::{discriminator_loss, generator_adversarial, l1};
use crate::model::StainSeparator;
use crate::seed::{rng_for, Stream};
use crate::tensor::{images_to_tensor, scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSchedule {
    pub total_iterations: usize,
    pub alpha: f64,
    /// First iteration of the coupled phase.
    pub boundary: usize,
}

impl PhaseSchedule {
    pub fn new(total_iterations: usize, alpha: f64) -> Self {
        let boundary = ((100.0 - alpha) * total_iterations as f64 / 100.0).floor() as usize;
        Self {
            total_iterations,
            alpha,
            boundary: boundary.min(total_iterations),
        }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        Self::new(config.total_iterations, config.alpha)
    }

    pub fn phase_of(&self, iteration: usize) -> Phase {
        if iteration < self.boundary {
            Phase::Warmup
        } else {
            Phase::Coupled
        }
    }

    pub fn lambda_at(&self, iteration: usize, lambda_adv: f64) -> f64 {
        match self.phase_of(iteration) {
            Phase::Warmup => 0.0,
            Phase::Coupled => lambda_adv,
        }
    }
}

/// Indexed access to training samples, so large datasets can stay on disk.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn get(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Sample> {
        Ok(self[index].clone())
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        Ok(self[index].clone())
    }
}

/// A minibatch as tensors: mixed images and one target tensor per source.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub mixed: Tensor,
    pub sources: Vec<Tensor>,
}

impl Batch {
    pub fn from_samples(samples: &[Sample], n_sources: usize, dtype: candle_core::DType) -> Result<Self> {
        for s in samples {
            if s.truth.len() != n_sources {
                return Err(ModelError::Data(format!(
                    "sample {} has {} sources, expected {n_sources}",
                    s.id,
                    s.truth.len()
                )));
            }
        }
        let mixed: Vec<_> = samples.iter().map(|s| &s.mixed).collect();
        let mixed = images_to_tensor(&mixed, dtype)?;
        let sources = (0..n_sources)
            .map(|i| {
                let imgs: Vec<_> = samples.iter().map(|s| s.truth.source(i)).collect();
                images_to_tensor(&imgs, dtype)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            mixed,
            sources,
        })
    }
}

/// Indices drawn with replacement for the given stream and iteration.
pub fn batch_indices(config: &TrainConfig, stream: Stream, iteration: usize, n: usize) -> Vec<usize> {
    let mut rng = rng_for(config.seed, stream, iteration as u64, 0);
    (0..config.batch_size).map(|_| rng.random_range(0..n)).collect()
}

fn load_batch<S: SampleSource + ?Sized>(source: &S, indices: &[usize], model: &StainSeparator) -> Result<Batch> {
    let samples = indices.iter().map(|&i| source.get(i)).collect::<Result<Vec<_>>>()?;
    Batch::from_samples(&samples, model.config.n_sources, model.dtype)
}

fn check_finite(value: f64, what: &'static str, iteration: usize, batch: &Batch) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::NonFinite {
            what,
            iteration,
            batch: batch.ids.clone(),
        })
    }
}

/// Clamped sum of per-source outputs.
pub fn synthesize(outputs: &[Tensor]) -> Result<Tensor> {
    let mut sum = outputs[0].clone();
    for o in &outputs[1..] {
        sum = (sum + o)?;
    }
    Ok(sum.clamp(0.0, 1.0)?)
}

/// Generator losses of one batch as differentiable tensors.
pub struct GeneratorObjective {
    pub outputs: Vec<Tensor>,
    pub l1: Vec<Tensor>,
    /// Coupled mode: one term on the synthesized image. Independent mode: one term per source.
    pub adversarial: Vec<Tensor>,
}

/// Gradients for every generator, aligned with each generator's parameters.
pub struct GeneratorUpdate {
    pub l1: Vec<f64>,
    pub adversarial: f64,
    pub grads: Vec<Vec<Option<Tensor>>>,
}

impl GeneratorObjective {
    pub fn adversarial_sum(&self) -> Result<f64> {
        self.adversarial.iter().map(scalar).sum()
    }
}

impl StainSeparator {
    fn generator_outputs(&self, mixed: &Tensor, stream: Option<(Stream, usize)>) -> Result<Vec<Tensor>> {
        self.generators
            .iter()
            .enumerate()
            .map(|(i, g)| match stream {
                Some((s, it)) => g.forward(mixed, Some(&mut rng_for(self.config.seed, s, it as u64, i as u64))),
                None => g.forward(mixed, None),
            })
            .collect()
    }

    /// Builds every generator loss term for `batch`. Dropout, when enabled,
    /// draws from the generator stream of `dropout_iteration`.
    pub fn generator_objective(&self, batch: &Batch, dropout_iteration: Option<usize>) -> Result<GeneratorObjective> {
        let outputs = self.generator_outputs(&batch.mixed, dropout_iteration.map(|it| (Stream::GeneratorDropout, it)))?;
        let l1 = outputs
            .iter()
            .zip(&batch.sources)
            .map(|(o, t)| l1(o, t))
            .collect::<Result<Vec<_>>>()?;
        let form = self.config.generator_loss;
        let adversarial = match self.config.coupling_mode {
            CouplingMode::Coupled => {
                let score = self.discriminators[0].forward(&batch.mixed, &synthesize(&outputs)?)?;
                vec![generator_adversarial(&score, form)?]
            }
            CouplingMode::IndependentGans => outputs
                .iter()
                .zip(&self.discriminators)
                .map(|(o, d)| generator_adversarial(&d.forward(&batch.mixed, o)?, form))
                .collect::<Result<Vec<_>>>()?,
            CouplingMode::L1Only => Vec::new(),
        };
        Ok(GeneratorObjective { outputs, l1, adversarial })
    }

    /// Scalar objective whose gradient the coupled-phase generator update follows.
    pub fn generator_total(&self, objective: &GeneratorObjective, lambda: f64) -> Result<Tensor> {
        let mut total = objective.l1[0].clone();
        for t in &objective.l1[1..] {
            total = (total + t)?;
        }
        for a in &objective.adversarial {
            total = (total + (a * lambda)?)?;
        }
        Ok(total)
    }

    /// Updates the discriminator(s) on `batch`; returns the (summed) loss.
    pub fn discriminator_step(&mut self, batch: &Batch, iteration: usize) -> Result<f64> {
        if self.discriminators.is_empty() {
            return Ok(0.0);
        }
        let fakes: Vec<Tensor> = self
            .generator_outputs(&batch.mixed, Some((Stream::DiscriminatorDropout, iteration)))?
            .into_iter()
            .map(|t| t.detach())
            .collect();
        let pairs: Vec<(Tensor, Tensor)> = match self.config.coupling_mode {
            CouplingMode::Coupled => vec![(batch.mixed.clone(), synthesize(&fakes)?)],
            _ => batch.sources.iter().cloned().zip(fakes).collect(),
        };
        let mut losses = Vec::with_capacity(pairs.len());
        for (d, (real, fake)) in self.discriminators.iter().zip(&pairs) {
            let loss = discriminator_loss(&d.forward(&batch.mixed, real)?, &d.forward(&batch.mixed, fake)?)?;
            check_finite(scalar(&loss)?, "discriminator", iteration, batch)?;
            losses.push(loss);
        }
        let mut total = 0.0;
        for (opt, loss) in self.disc_opts.iter_mut().zip(&losses) {
            total += scalar(loss)?;
            opt.step_from(&loss.backward()?)?;
        }
        Ok(total)
    }

    /// Computes every generator's gradient on `batch` without applying it.
    pub fn generator_gradients(&self, batch: &Batch, iteration: usize, lambda: f64) -> Result<GeneratorUpdate> {
        let objective = self.generator_objective(batch, Some(iteration))?;
        let l1_values = objective
            .l1
            .iter()
            .map(|t| check_finite(scalar(t)?, "generator L1", iteration, batch))
            .collect::<Result<Vec<_>>>()?;
        let adversarial = check_finite(objective.adversarial_sum()?, "generator adversarial", iteration, batch)?;
        let coupled = lambda > 0.0 && !objective.adversarial.is_empty();
        let grads = match self.config.coupling_mode {
            CouplingMode::Coupled if coupled => {
                let store = self.generator_total(&objective, lambda)?.backward()?;
                self.gen_opts.iter().map(|o| o.gradients(&store)).collect()
            }
            CouplingMode::IndependentGans if coupled => self
                .gen_opts
                .iter()
                .enumerate()
                .map(|(i, o)| {
                    let total = (&objective.l1[i] + (&objective.adversarial[i] * lambda)?)?;
                    Ok(o.gradients(&total.backward()?))
                })
                .collect::<Result<Vec<_>>>()?,
            _ => self
                .gen_opts
                .iter()
                .zip(&objective.l1)
                .map(|(o, loss)| Ok(o.gradients(&loss.backward()?)))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(GeneratorUpdate {
            l1: l1_values,
            adversarial,
            grads,
        })
    }

    pub fn apply_generator_update(&mut self, update: &GeneratorUpdate) -> Result<()> {
        for (opt, g) in self.gen_opts.iter_mut().zip(&update.grads) {
            opt.step(g)?;
        }
        Ok(())
    }

    /// Updates every generator on `batch`; returns per-source L1 values and
    /// the (summed) adversarial value.
    pub fn generator_step(&mut self, batch: &Batch, iteration: usize, lambda: f64) -> Result<(Vec<f64>, f64)> {
        let update = self.generator_gradients(batch, iteration, lambda)?;
        self.apply_generator_update(&update)?;
        Ok((update.l1, update.adversarial))
    }

    /// One full iteration: discriminator update, then generator update.
    pub fn train_iteration<S: SampleSource + ?Sized>(&mut self, source: &S) -> Result<LossReport> {
        let it = self.iteration;
        let cfg = self.config.clone();
        let cfg = &cfg;
        let schedule = PhaseSchedule::from_config(cfg);
        let n = source.len();
        let d_indices = batch_indices(cfg, Stream::DiscriminatorBatch, it, n);
        let g_indices = if cfg.fresh_batches {
            batch_indices(cfg, Stream::GeneratorBatch, it, n)
        } else {
            d_indices.clone()
        };
        let lambda = match cfg.coupling_mode {
            CouplingMode::L1Only => 0.0,
            _ => schedule.lambda_at(it, cfg.lambda_adv),
        };
        let d_batch = load_batch(source, &d_indices, self)?;
        let adversarial_d = self.discriminator_step(&d_batch, it)?;
        let g_batch = if cfg.fresh_batches {
            load_batch(source, &g_indices, self)?
        } else {
            d_batch
        };
        let (l1_values, adversarial_g) = self.generator_step(&g_batch, it, lambda)?;
        self.iteration += 1;
        Ok(LossReport::new(it, schedule.phase_of(it), l1_values, adversarial_g, adversarial_d, lambda))
    }
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("ckpt_{iteration:06}.bin"))
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Stop once this many iterations are complete (for interrupting a run).
    pub stop_after: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub on_iteration: Option<&'a mut dyn FnMut(&LossReport)>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub reports: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs from the model's current iteration to the end of the schedule.
///
/// With a checkpoint directory, saves every `checkpoint_every` iterations
/// and always at the point where training stops.
pub fn train<S: SampleSource + ?Sized>(model: &mut StainSeparator, source: &S, mut options: TrainOptions<'_>) -> Result<TrainOutcome> {
    if source.is_empty() {
        return Err(ModelError::Data("training set is empty".into()));
    }
    let first = source.get(0)?;
    let (h, w) = first.mixed.dims();
    model.generators[0].check_size(h, w)?;
    let end = options
        .stop_after
        .unwrap_or(usize::MAX)
        .min(model.config.total_iterations);
    let every = model.config.checkpoint_every;
    let mut outcome = TrainOutcome::default();
    while model.iteration < end {
        let report = model.train_iteration(source)?;
        log::debug!(
            "iteration {} phase {:?} l1 {:?} adv_g {:.5} adv_d {:.5}",
            report.iteration,
            report.phase,
            report.l1_per_source,
            report.adversarial_g,
            report.adversarial_d
        );
        if let Some(cb) = options.on_iteration.as_mut() {
            cb(&report);
        }
        outcome.reports.push(report);
        if let Some(dir) = &options.checkpoint_dir {
            let done = model.iteration;
            if (every > 0 && done % every == 0) || done == end {
                let path = checkpoint_path(dir, done);
                model.save(&path)?;
                outcome.checkpoints.push(path);
            }
        }
    }
    Ok(outcome)
}
