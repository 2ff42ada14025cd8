//! Sanity runs of the two branches and of fusion on small synthetic problems.

mod support;

use std::sync::OnceLock;

use astrodiff::diffusion::{
    ancestral_sample, eps_to_score, q_sample, train_eps_model, train_prior, DenoiserModel, ImageSample,
    ModelSpec, NoiseSchedule, ScheduleKind, TrainConfig, TrainOutputs,
};
use astrodiff::fusion::{fuse, fuse_batch, EtaSchedule, FusionConfig};
use astrodiff::nn::{MlpConfig, MlpDenoiser, NoisePredictor};
use astrodiff::restoration::{likelihood_score, restore_batch, restore_one_branch, train_restoration, ConditionalDenoiser, PairedSample};
use astrodiff::rng;
use astrodiff::tensorgrad::Tensor;
use astrodiff::turbsim::{generate_planet_image, Bucket, SceneSpec};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn spec(timesteps: usize) -> ModelSpec {
    ModelSpec { widths: vec![8, 16], time_dim: 16, schedule: "cosine".into(), timesteps }
}

fn config(steps: usize, lr: f64) -> TrainConfig {
    TrainConfig { steps, batch_size: 4, learning_rate: lr, weight_decay: 0.0, warmup_fraction: 0.05, seed: 9 }
}

fn zeros_image() -> ImageSample {
    ImageSample::new(Tensor::zeros(&[1, 32, 32]), "zero", 0).unwrap()
}

fn planet(seed: u64) -> ImageSample {
    generate_planet_image(&SceneSpec::sample(32, 1, seed)).unwrap()
}

/// Prior trained on a dataset of identical all-zero images, shared by several tests.
fn constant_prior() -> &'static (DenoiserModel, f64) {
    static MODEL: OnceLock<(DenoiserModel, f64)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = vec![zeros_image(); 4];
        let (model, log) = train_prior(&data, &spec(10), &config(2000, 2e-3), &TrainOutputs::default(), |_, _| Ok(())).unwrap();
        let tail = log[log.len() - 100..].iter().map(|r| r.loss).sum::<f64>() / 100.0;
        (model, tail)
    })
}

#[test]
fn degenerate_dataset_is_learned() {
    let (model, tail) = constant_prior();
    assert!(*tail < 0.05, "final loss {tail}");
    // Fresh evaluation of the eps error on the dataset.
    let mut r = rng::substream(1, "eval", 0);
    let x0 = zeros_image().to_model();
    let mut errs = Vec::new();
    for t in 1..=10 {
        let eps = Tensor::randn(&[1, 32, 32], 1.0, &mut r);
        let xt = q_sample(&model.schedule, &x0, t, &eps).unwrap();
        let xt = xt.reshape(&[1, 1, 32, 32]).unwrap();
        let pred = model.predict_eps(&xt, &[t]).unwrap();
        errs.push(pred.data().iter().zip(eps.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / 1024.0);
    }
    assert!(support::mean(&errs) < 0.05, "{errs:?}");
}

#[test]
fn samples_collapse_to_the_training_image() {
    // The image offset is a tiny share of the loss, so the net only learns to correct it well after the
    // per-pixel noise; a sampling chain amplifies any residual offset by 1/sqrt(alpha_bar[T]).
    let data = vec![zeros_image(); 4];
    let (model, _) = train_prior(&data, &spec(5), &config(8000, 2e-3), &TrainOutputs::default(), |_, _| Ok(())).unwrap();
    let a = ancestral_sample(&model, [1, 32, 32], 5).unwrap();
    let b = ancestral_sample(&model, [1, 32, 32], 5).unwrap();
    assert_eq!(a, b);
    let near = a.pixels().data().iter().filter(|&&v| v.abs() <= 0.1).count();
    let mx = a.pixels().data().iter().cloned().fold(0.0f32, f32::max);
    let mn = a.pixels().data().iter().cloned().fold(1.0f32, f32::min);
    assert!(near as f64 >= 0.9 * 1024.0, "{near} of 1024 pixels near zero ({mn}..{mx})");
    assert!(a.pixels().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn empty_datasets_are_rejected() {
    assert!(train_prior(&[], &spec(10), &config(10, 1e-3), &TrainOutputs::default(), |_, _| Ok(())).is_err());
    assert!(train_restoration(&[], &spec(10), &config(10, 1e-3), &TrainOutputs::default(), |_, _| Ok(())).is_err());
}

#[test]
fn score_is_linear_in_the_noise_estimate() {
    let sched = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
    let mut r = rng::substream(2, "lin", 0);
    let eps = Tensor::randn(&[2, 1, 4, 4], 1.0, &mut r);
    let s1 = eps_to_score(&sched, &eps, 500).unwrap();
    let s3 = eps_to_score(&sched, &eps.map(|v| 3.0 * v), 500).unwrap();
    for (a, b) in s1.data().iter().zip(s3.data()) {
        assert!((3.0 * a - b).abs() <= 1e-5 * b.abs().max(1.0));
    }
    // Standard normal data at alpha_bar ~ 0: the ideal eps is y itself and the score is -y.
    let t = 1000;
    assert!(sched.alpha_bar(t) < 1e-4);
    let y = Tensor::randn(&[1, 1, 4, 4], 1.0, &mut r);
    let s = eps_to_score(&sched, &y.map(|v| v * sched.sigma(t) as f32), t).unwrap();
    for (a, b) in s.data().iter().zip(y.data()) {
        assert!((a + b).abs() < 1e-5);
    }
}

#[test]
fn learned_gaussian_score_matches_analytic() {
    let (mu, std) = ([0.5, -0.3], 0.4);
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, 50).unwrap();
    let mut init = rng::substream(3, "init", 0);
    let mut net = MlpDenoiser::<f32>::new(MlpConfig { dim: 2, hidden: 64, depth: 2, time_dim: 16 }, &mut init).unwrap();
    let cfg = TrainConfig { steps: 2500, batch_size: 128, learning_rate: 2e-3, weight_decay: 0.0, warmup_fraction: 0.05, seed: 3 };
    train_eps_model(
        &mut net,
        &sched,
        &cfg,
        |r, b| {
            let d: Vec<f32> = (0..b)
                .flat_map(|_| {
                    let z: [f64; 2] = [StandardNormal.sample(r), StandardNormal.sample(r)];
                    [(mu[0] + std * z[0]) as f32, (mu[1] + std * z[1]) as f32]
                })
                .collect();
            Ok((Tensor::from_vec(&[b, 2], d)?, None))
        },
        |_, _| Ok(()),
    )
    .unwrap();
    let t = 5;
    let ab = support::cosine_alpha_bar(50, t);
    let var = ab * std * std + 1.0 - ab;
    let grid: Vec<[f64; 2]> = (0..10).flat_map(|i| (0..10).map(move |j| [-1.5 + i as f64 / 3.0, -1.5 + j as f64 / 3.0])).collect();
    let x = Tensor::from_vec(&[100, 2], grid.iter().flat_map(|p| [p[0] as f32, p[1] as f32]).collect()).unwrap();
    let eps = net.predict(&x, &[t; 100]).unwrap();
    let sigma = (1.0 - ab).sqrt();
    let cos: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let learned = [-eps.data()[2 * k] as f64 / sigma, -eps.data()[2 * k + 1] as f64 / sigma];
            let exact = [-(p[0] - ab.sqrt() * mu[0]) / var, -(p[1] - ab.sqrt() * mu[1]) / var];
            support::cosine_similarity(&learned, &exact)
        })
        .collect();
    assert!(support::mean(&cos) > 0.95, "mean cosine {}", support::mean(&cos));
}

#[test]
fn untrained_restorer_has_zero_score() {
    let model = ConditionalDenoiser::untrained(&spec(10), 1, 4).unwrap();
    let mut r = rng::substream(4, "z", 0);
    let y = Tensor::randn(&[2, 1, 32, 32], 1.0, &mut r);
    let x = Tensor::randn(&[2, 1, 32, 32], 1.0, &mut r);
    let s = likelihood_score(&model, &y, &x, 3).unwrap();
    assert!(s.data().iter().all(|&v| v == 0.0));
    assert!(likelihood_score(&model, &y, &x, 0).is_err());
    let wrong = Tensor::zeros(&[2, 1, 16, 16]);
    assert!(likelihood_score(&model, &y, &wrong, 3).is_err());
}

/// Restorer trained with identity degradation on a handful of planets.
fn identity_restorer() -> &'static ConditionalDenoiser {
    static MODEL: OnceLock<ConditionalDenoiser> = OnceLock::new();
    MODEL.get_or_init(|| {
        let pairs: Vec<PairedSample> = (0..12).map(|s| PairedSample::new(planet(s), planet(s), 5e-16).unwrap()).collect();
        assert!(pairs.iter().all(|p| p.bucket == Bucket::Low));
        train_restoration(&pairs, &spec(20), &config(1500, 2e-3), &TrainOutputs::default(), |_, _| Ok(())).unwrap().0
    })
}

#[test]
fn identity_restoration_beats_half_noised_input() {
    let model = identity_restorer();
    let held_out: Vec<ImageSample> = (100..104).map(planet).collect();
    let seeds: Vec<u64> = (0..4).collect();
    let restored = restore_batch(&held_out, model, &seeds).unwrap();
    let sched = &model.inner.schedule;
    let mut r = rng::substream(5, "half", 0);
    for (clean, out) in held_out.iter().zip(&restored) {
        let eps = Tensor::randn(&[1, 32, 32], 1.0, &mut r);
        let noised = q_sample(sched, &clean.to_model(), sched.steps() / 2, &eps).unwrap();
        let noised = ImageSample::from_model(&noised, "n", 0).unwrap();
        let p_restored = support::psnr_db(clean.pixels().data(), out.pixels().data());
        let p_noised = support::psnr_db(clean.pixels().data(), noised.pixels().data());
        assert!(p_restored > p_noised, "{p_restored} vs {p_noised}");
    }
    // Batched and single-image paths agree.
    assert_eq!(restore_one_branch(&held_out[1], model, 1).unwrap(), restored[1]);
}

#[test]
fn conditioning_changes_the_noise_estimate() {
    let model = identity_restorer();
    let mut r = rng::substream(6, "cond", 0);
    let mut total = 0.0;
    for k in 0..4 {
        let y = Tensor::randn(&[1, 1, 32, 32], 1.0, &mut r);
        let x1 = planet(200 + k).to_model().reshape(&[1, 1, 32, 32]).unwrap();
        let x2 = planet(300 + k).to_model().reshape(&[1, 1, 32, 32]).unwrap();
        let t = r.random_range(1..=20);
        let a = model.predict_eps(&y, &x1, &[t]).unwrap();
        let b = model.predict_eps(&y, &x2, &[t]).unwrap();
        total += a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs() as f64).sum::<f64>() / 1024.0;
    }
    assert!(total > 0.0);
}

fn histogram(img: &ImageSample) -> Vec<f64> {
    let mut h = vec![0.0; 16];
    for &v in img.pixels().data() {
        h[((v * 16.0) as usize).min(15)] += 1.0 / img.pixels().numel() as f64;
    }
    h
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn without_likelihood_fusion_follows_the_prior() {
    let (prior, _) = constant_prior();
    let restorer = ConditionalDenoiser::untrained(&spec(10), 1, 1).unwrap();
    let x = planet(42);
    let cfg = FusionConfig {
        lambda_lik: 0.0,
        eta_schedule: EtaSchedule::NoiseScaled,
        eta_start: 0.8,
        iterations: 200,
        seed: 3,
        ..FusionConfig::default()
    };
    let fused = fuse(&x, prior, &restorer, &cfg).unwrap();
    let prior_hist = histogram(&ancestral_sample(prior, [1, 32, 32], 8).unwrap());
    let f = histogram(&fused);
    assert!(l1(&f, &prior_hist) < l1(&f, &histogram(&x)), "{f:?}");
    // Same seed and config: identical output, and the batched path agrees.
    assert_eq!(fuse(&x, prior, &restorer, &cfg).unwrap(), fused);
    let (batch, diags) = fuse_batch(&[x.clone(), planet(43)], prior, &restorer, &cfg, &[3, 4]).unwrap();
    assert_eq!(batch[0], fused);
    assert_eq!(diags.len(), 200);
}

#[test]
fn mismatched_schedules_are_rejected_by_fusion() {
    let (prior, _) = constant_prior();
    let restorer = ConditionalDenoiser::untrained(&spec(12), 1, 1).unwrap();
    assert!(fuse(&planet(1), prior, &restorer, &FusionConfig::default()).is_err());
}

#[test]
fn checkpoints_roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (prior, _) = constant_prior();
    let p = dir.path().join("prior.adck");
    prior.save(&p, "prior").unwrap();
    let (back, branch) = DenoiserModel::load(&p).unwrap();
    assert_eq!(branch, "prior");
    assert_eq!(ancestral_sample(&back, [1, 32, 32], 2).unwrap(), ancestral_sample(prior, [1, 32, 32], 2).unwrap());
    assert!(ConditionalDenoiser::load(&p).is_err());
}
