mod common;

use common::{ddim_invert_oracle, dual_oracle, quadrature_posterior_noise, random_latent};
use dualsched::{
    ddim_invert_full, ddim_sample_full, dual_invert, dual_sample, make_dual_grid, mixture_posterior_noise, Condition,
    DiffusionSchedule, DualTimeGrid, GaussianMixture, GuidanceSpec, Latent, NoisePredictor, ProceduralPredictor,
    TimeGrid,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ddim_inversion_matches_loop_oracle() {
    let s = DiffusionSchedule::default();
    let grid = TimeGrid::new(1, 20, 50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z0 = random_latent(&mut rng, &[16], 1.0);
    for w in [1.0, 4.0] {
        let g = GuidanceSpec::new(w, Condition::Label(1)).unwrap();
        let traj = ddim_invert_full(&s, &grid, &ProceduralPredictor, &g, &z0).unwrap();
        let oracle = ddim_invert_oracle(s.alpha_bars(), &grid.times(), &ProceduralPredictor, &g, &z0);
        assert_eq!(traj.len(), oracle.len());
        for (entry, want) in traj.entries().iter().zip(&oracle) {
            assert_eq!(entry.latent.values(), want.as_slice(), "t = {}", entry.t);
        }
    }
}

#[test]
fn dual_passes_match_loop_oracle() {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (delta, w) in [(9, 1.0), (10, 7.5), (3, 4.0)] {
        let grid = DualTimeGrid::new(1, 20, 50, delta).unwrap();
        let z0 = random_latent(&mut rng, &[8], 1.0);
        let g = GuidanceSpec::new(w, Condition::Label(0)).unwrap();
        let (top, inv) = dual_invert(&s, &grid, &ProceduralPredictor, &g, &z0).unwrap();
        let (z0_hat, smp) = dual_sample(&s, &grid, &ProceduralPredictor, &g, &top).unwrap();
        let o = dual_oracle(
            s.alpha_bars(),
            &grid.primary_times(),
            delta,
            &ProceduralPredictor,
            &g,
            &z0,
        );
        for (e, want) in inv.primary.entries().iter().zip(&o.inv_primary) {
            assert_eq!(e.latent.values(), want.as_slice());
        }
        for (e, want) in inv.auxiliary.entries().iter().zip(&o.inv_aux) {
            assert_eq!(e.latent.values(), want.as_slice());
        }
        for (e, want) in smp.primary.entries().iter().zip(o.smp_primary.iter().rev()) {
            assert_eq!(e.latent.values(), want.as_slice());
        }
        for (e, want) in smp.auxiliary.entries().iter().zip(o.smp_aux.iter().rev()) {
            assert_eq!(e.latent.values(), want.as_slice());
        }
        assert_eq!(z0_hat.values(), o.z0_hat.as_slice());
    }
}

#[test]
fn mixture_noise_matches_quadrature() {
    let s = DiffusionSchedule::default();
    let means = [-0.8, 0.1, 0.9];
    let variances = [0.05, 0.02, 0.1];
    let weights = [0.3, 0.5, 0.2];
    let gmm = GaussianMixture::new(
        means
            .iter()
            .zip(&variances)
            .zip(&weights)
            .map(|((&m, &v), &w)| dualsched::MixtureComponent {
                mean: Latent::from_vec(vec![m]).unwrap(),
                variance: v,
                weight: w,
            })
            .collect(),
    )
    .unwrap();
    for t in [1, 100, 500, 999] {
        let ab = s.alpha_bar(t).unwrap();
        for z in [-1.3, -0.4, 0.0, 0.35, 1.1] {
            let got = mixture_posterior_noise(
                &gmm,
                &s,
                &Latent::from_vec(vec![z]).unwrap(),
                t,
                Condition::Unconditional,
            )
            .unwrap()
            .values()[0];
            let want = quadrature_posterior_noise(&means, &variances, &weights, ab, z);
            assert!((got - want).abs() < 1e-6, "t = {t}, z = {z}: {got} vs {want}");
        }
    }
}

#[test]
fn mixture_sampling_recovers_mean() {
    // Start from the exact noisy marginal at the grid top and check the
    // empirical mean of DDIM samples against the data mean.
    let s = DiffusionSchedule::default();
    let gmm = GaussianMixture::uniform(
        vec![
            Latent::from_vec(vec![-0.6, 0.4]).unwrap(),
            Latent::from_vec(vec![0.5, 0.2]).unwrap(),
        ],
        0.04,
    )
    .unwrap();
    let p = dualsched::MixturePredictor::new(gmm.clone(), s.clone());
    let grid = TimeGrid::new(1, 20, 50).unwrap();
    let root = s.alpha_bar(grid.top()).unwrap().sqrt();
    let sd = (1.0 - s.alpha_bar(grid.top()).unwrap()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let g = GuidanceSpec::unguided(Condition::Unconditional);
    let runs = 1000;
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let x = gmm.sample(&mut rng, Condition::Unconditional).unwrap();
        let z_top = x
            .map_indexed(|_, v| {
                let n: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                root * v + sd * n
            })
            .unwrap();
        let (z0, _) = ddim_sample_full(&s, &grid, &p, &g, &z_top).unwrap();
        samples.push(z0);
    }
    let target = gmm.mean(Condition::Unconditional).unwrap();
    for d in 0..2 {
        let xs: Vec<f64> = samples.iter().map(|z| z.values()[d]).collect();
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!(
            (mean - target.values()[d]).abs() < 3.0 * se,
            "dim {d}: mean {mean}, target {}, se {se}",
            target.values()[d]
        );
    }
}

#[test]
fn unit_guidance_equals_conditional_predictor() {
    struct CondOnly;
    impl NoisePredictor for CondOnly {
        fn predict(&self, z: &Latent, t: usize, _c: Condition) -> dualsched::Result<Latent> {
            ProceduralPredictor.predict(z, t, Condition::Label(3))
        }
    }
    let s = DiffusionSchedule::default();
    let grid = make_dual_grid(1, 20, 30, 0.5).unwrap();
    let z0 = Latent::from_vec(vec![0.2, -0.4, 0.6]).unwrap();
    let a = dual_invert(
        &s,
        &grid,
        &ProceduralPredictor,
        &GuidanceSpec::unguided(Condition::Label(3)),
        &z0,
    )
    .unwrap();
    let b = dual_invert(
        &s,
        &grid,
        &CondOnly,
        &GuidanceSpec::unguided(Condition::Unconditional),
        &z0,
    )
    .unwrap();
    assert_eq!(a, b);
    let tg = TimeGrid::new(1, 20, 30).unwrap();
    let a = ddim_invert_full(
        &s,
        &tg,
        &ProceduralPredictor,
        &GuidanceSpec::unguided(Condition::Label(3)),
        &z0,
    )
    .unwrap();
    let b = ddim_invert_full(
        &s,
        &tg,
        &CondOnly,
        &GuidanceSpec::unguided(Condition::Unconditional),
        &z0,
    )
    .unwrap();
    assert_eq!(a, b);
}
