use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainsep_core::data::{synth_generate, two_stain_spectra, SynthOptions};
use stainsep_core::{CouplingMode, Image, NetworkConfig, Phase, Sample, SampleKind, SourceSet, TrainConfig};
use stainsep_model::losses::discriminator_loss;
use stainsep_model::networks::Param;
use stainsep_model::tensor::scalar;
use stainsep_model::trainer::synthesize;
use stainsep_model::{train, Batch, ModelError, StainSeparator, TrainOptions};

fn tiny_net() -> NetworkConfig {
    NetworkConfig {
        gen_levels: 2,
        gen_base_width: 4,
        gen_max_width: 8,
        gen_dropout: false,
        disc_base_width: 4,
        disc_layers: 1,
        init_std: 0.1,
    }
}

fn config(mode: CouplingMode, iterations: usize) -> TrainConfig {
    TrainConfig {
        coupling_mode: mode,
        total_iterations: iterations,
        network: tiny_net(),
        batch_size: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn crop(s: &Sample, size: usize) -> Sample {
    Sample::new(
        s.id.clone(),
        s.mixed.crop(8, 8, size, size).unwrap(),
        s.truth.crop(8, 8, size, size).unwrap(),
        s.kind,
    )
}

fn data(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    synth_generate(n, 32, seed, &two_stain_spectra(), &SynthOptions::default())
        .unwrap()
        .iter()
        .map(|s| crop(s, size))
        .collect()
}

fn set_entry(p: &Param, k: usize, value: f64) {
    let t = p.var.as_tensor();
    let mut v: Vec<f64> = t.flatten_all().unwrap().to_vec1().unwrap();
    v[k] = value;
    p.var.set(&Tensor::from_vec(v, t.dims(), &Device::Cpu).unwrap()).unwrap();
}

fn entry(p: &Param, k: usize) -> f64 {
    p.var.as_tensor().flatten_all().unwrap().get(k).unwrap().to_scalar().unwrap()
}

/// Compares autograd against central differences on sampled entries of
/// every parameter tensor; returns the worst relative error.
fn worst_gradient_error(params: &[Param], f: &dyn Fn() -> Tensor) -> f64 {
    let grads = f().backward().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for p in params {
        let g: Vec<f64> = grads.get(p.var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for _ in 0..4 {
            let k = rng.random_range(0..g.len());
            let x = entry(p, k);
            let h = 1e-6;
            set_entry(p, k, x + h);
            let up = scalar(&f()).unwrap();
            set_entry(p, k, x - h);
            let down = scalar(&f()).unwrap();
            set_entry(p, k, x);
            let numeric = (up - down) / (2.0 * h);
            let scale = g[k].abs().max(numeric.abs());
            if scale < 1e-8 {
                continue;
            }
            checked += 1;
            worst = worst.max((g[k] - numeric).abs() / scale);
        }
    }
    assert!(checked > params.len(), "too few non-trivial entries checked: {checked}");
    worst
}

#[test]
fn gradients_match_central_differences() {
    let mut cfg = config(CouplingMode::Coupled, 10);
    cfg.lambda_adv = 0.5;
    let model = StainSeparator::new(&cfg, DType::F64).unwrap();
    let batch = Batch::from_samples(&data(2, 8, 3), 2, DType::F64).unwrap();

    let g_params: Vec<Param> = model.generators().iter().flat_map(|g| g.params()).collect();
    let g_err = worst_gradient_error(&g_params, &|| {
        let obj = model.generator_objective(&batch, None).unwrap();
        model.generator_total(&obj, cfg.lambda_adv).unwrap()
    });
    assert!(g_err <= 1e-3, "generator gradient error {g_err}");

    let fake = synthesize(&model.forward_inference(&batch.mixed).unwrap()).unwrap().detach();
    let d = &model.discriminators()[0];
    let d_err = worst_gradient_error(&d.params(), &|| {
        discriminator_loss(&d.forward(&batch.mixed, &batch.mixed).unwrap(), &d.forward(&batch.mixed, &fake).unwrap()).unwrap()
    });
    assert!(d_err <= 1e-3, "discriminator gradient error {d_err}");
}

#[test]
fn schedule_is_logged() {
    let cfg = config(CouplingMode::Coupled, 40);
    let mut model = StainSeparator::new(&cfg, DType::F32).unwrap();
    let out = train(&mut model, &data(4, 8, 1), TrainOptions::default()).unwrap();
    assert_eq!(out.reports.len(), 40);
    for r in &out.reports {
        let warm = r.iteration < 10;
        assert_eq!(r.phase == Phase::Warmup, warm);
        assert_eq!(r.lambda_used, if warm { 0.0 } else { 0.01 });
        assert_eq!(r.total_g, r.l1_per_source.iter().sum::<f64>() + r.lambda_used * r.adversarial_g);
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let cfg = TrainConfig {
        network: NetworkConfig {
            gen_dropout: true,
            gen_levels: 3,
            ..tiny_net()
        },
        ..config(CouplingMode::Coupled, 12)
    };
    let samples = data(5, 8, 2);
    let run = || {
        let mut m = StainSeparator::new(&cfg, DType::F32).unwrap();
        let out = train(&mut m, &samples, TrainOptions::default()).unwrap();
        (out.reports, m.to_bytes().unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);

    let other = TrainConfig { seed: 12, ..cfg.clone() };
    let mut m = StainSeparator::new(&other, DType::F32).unwrap();
    train(&mut m, &samples, TrainOptions::default()).unwrap();
    assert_ne!(m.to_bytes().unwrap(), a.1);
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(CouplingMode::IndependentGans, 20);
    cfg.checkpoint_every = 5;
    cfg.network.gen_dropout = true;
    let samples = data(5, 8, 4);

    let mut full = StainSeparator::new(&cfg, DType::F32).unwrap();
    let full_out = train(&mut full, &samples, TrainOptions::default()).unwrap();

    let mut first = StainSeparator::new(&cfg, DType::F32).unwrap();
    let part = train(
        &mut first,
        &samples,
        TrainOptions {
            stop_after: Some(8),
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let names: Vec<_> = part.checkpoints.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
    assert_eq!(names, vec!["ckpt_000005.bin", "ckpt_000008.bin"]);

    let mut resumed = StainSeparator::resume(&part.checkpoints[1], &cfg).unwrap();
    assert_eq!(resumed.iteration(), 8);
    let rest = train(&mut resumed, &samples, TrainOptions::default()).unwrap();
    let joined: Vec<_> = part.reports.into_iter().chain(rest.reports).collect();
    assert_eq!(joined, full_out.reports);
    assert_eq!(resumed.to_bytes().unwrap(), full.to_bytes().unwrap());

    let mut changed = cfg.clone();
    changed.lambda_adv = 0.02;
    changed.network.disc_layers = 2;
    match StainSeparator::resume(&part.checkpoints[1], &changed) {
        Err(ModelError::ConfigMismatch(msg)) => {
            assert!(msg.contains("lambda_adv") && msg.contains("network.disc_layers"), "{msg}");
        }
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let cfg = config(CouplingMode::Coupled, 3);
    let mut m = StainSeparator::new(&cfg, DType::F64).unwrap();
    train(&mut m, &data(3, 8, 5), TrainOptions::default()).unwrap();
    let bytes = m.to_bytes().unwrap();
    let back = StainSeparator::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.dtype(), DType::F64);
    assert!(matches!(StainSeparator::from_bytes(&bytes[..bytes.len() - 3]), Err(ModelError::Checkpoint(_))));
    assert!(matches!(StainSeparator::from_bytes(b"garbage!"), Err(ModelError::Checkpoint(_))));
    let img = Image::filled(8, 8, [0.4, 0.4, 0.6]);
    assert_eq!(back.separate(&img).unwrap(), m.separate(&img).unwrap());
}

fn generator_bytes(m: &StainSeparator, i: usize) -> Vec<Vec<f32>> {
    m.generators()[i]
        .params()
        .iter()
        .map(|p| p.var.as_tensor().flatten_all().unwrap().to_vec1().unwrap())
        .collect()
}

#[test]
fn warmup_updates_are_decoupled() {
    let mut cfg = config(CouplingMode::Coupled, 40);
    cfg.lambda_adv = 1.0;
    cfg.network.gen_dropout = true;
    cfg.network.gen_levels = 3;
    let samples = data(6, 8, 6);
    // Same data, but the second stain's targets are replaced by noise.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let perturbed: Vec<Sample> = samples
        .iter()
        .map(|s| {
            let noise = Image::from_fn(8, 8, |_, _| [rng.random(), rng.random(), rng.random()]);
            let truth = SourceSet::new(vec![s.truth.source(0).clone(), noise], s.truth.stain_names().to_vec()).unwrap();
            Sample::new(s.id.clone(), s.mixed.clone(), truth, SampleKind::Synthetic)
        })
        .collect();
    let run = |set: &Vec<Sample>, stop| {
        let mut m = StainSeparator::new(&cfg, DType::F32).unwrap();
        train(
            &mut m,
            set,
            TrainOptions {
                stop_after: Some(stop),
                ..TrainOptions::default()
            },
        )
        .unwrap();
        m
    };
    let (a, b) = (run(&samples, 10), run(&perturbed, 10));
    assert_eq!(generator_bytes(&a, 0), generator_bytes(&b, 0));
    assert_ne!(generator_bytes(&a, 1), generator_bytes(&b, 1));
    // Once coupled, the first generator sees the second through the discriminator.
    let (a, b) = (run(&samples, 20), run(&perturbed, 20));
    assert_ne!(generator_bytes(&a, 0), generator_bytes(&b, 0));
}

#[test]
fn adversarial_weight_changes_coupled_updates() {
    let samples = data(4, 8, 7);
    let run = |lambda| {
        let cfg = TrainConfig {
            lambda_adv: lambda,
            alpha: 100.0,
            ..config(CouplingMode::Coupled, 3)
        };
        let mut m = StainSeparator::new(&cfg, DType::F32).unwrap();
        train(&mut m, &samples, TrainOptions::default()).unwrap();
        (generator_bytes(&m, 0), generator_bytes(&m, 1))
    };
    let zero = run(0.0);
    assert_ne!(run(0.01), zero);
    assert_eq!(run(0.0), zero);
}

#[test]
fn discriminators_update_only_where_used() {
    let samples = data(4, 8, 8);
    for (mode, n) in [(CouplingMode::Coupled, 1), (CouplingMode::IndependentGans, 2), (CouplingMode::L1Only, 0)] {
        let cfg = config(mode, 5);
        let mut m = StainSeparator::new(&cfg, DType::F32).unwrap();
        let before = m.to_bytes().unwrap();
        let out = train(&mut m, &samples, TrainOptions::default()).unwrap();
        assert_eq!(m.discriminators().len(), n);
        assert_ne!(m.to_bytes().unwrap(), before);
        for r in &out.reports {
            if mode == CouplingMode::L1Only {
                assert_eq!((r.adversarial_d, r.adversarial_g, r.lambda_used), (0.0, 0.0, 0.0));
            } else {
                assert!(r.adversarial_d > 0.0);
            }
        }
    }
}

#[test]
fn discriminator_learns_to_separate_real_from_fake() {
    let cfg = config(CouplingMode::Coupled, 100);
    let mut m = StainSeparator::new(&cfg, DType::F32).unwrap();
    let batch = Batch::from_samples(&data(2, 8, 9), 2, DType::F32).unwrap();
    let losses: Vec<f64> = (0..50).map(|it| m.discriminator_step(&batch, it).unwrap()).collect();
    assert!(losses[49] < losses[0] * 0.8, "{} -> {}", losses[0], losses[49]);
}

#[test]
fn non_finite_input_is_reported() {
    let cfg = config(CouplingMode::Coupled, 5);
    let mut m = StainSeparator::new(&cfg, DType::F32).unwrap();
    let mut samples = data(1, 8, 10);
    samples[0].mixed.data_mut()[0] = f64::NAN;
    match train(&mut m, &samples, TrainOptions::default()) {
        Err(ModelError::NonFinite { iteration, batch, .. }) => {
            assert_eq!(iteration, 0);
            assert_eq!(batch, vec![samples[0].id.clone(); 2]);
        }
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn training_improves_held_out_reconstruction() {
    let net = NetworkConfig {
        gen_levels: 3,
        gen_base_width: 8,
        gen_max_width: 16,
        ..tiny_net()
    };
    let cfg = TrainConfig {
        network: net,
        learning_rate: 2e-3,
        ..config(CouplingMode::Coupled, 150)
    };
    let train_set = data(20, 16, 20);
    let test_set = data(5, 16, 21);
    let untrained = StainSeparator::new(&cfg, DType::F32).unwrap();
    let mut model = StainSeparator::new(&cfg, DType::F32).unwrap();
    train(&mut model, &train_set, TrainOptions::default()).unwrap();
    let err = |m: &StainSeparator| -> f64 {
        test_set
            .iter()
            .map(|s| {
                let out = m.separate(&s.mixed).unwrap();
                (0..2).map(|i| stainsep_core::losses::l1_loss(out.source(i), s.truth.source(i)).unwrap()).sum::<f64>()
            })
            .sum()
    };
    let (before, after) = (err(&untrained), err(&model));
    assert!(after < 0.6 * before, "held-out L1 {before} -> {after}");
}
