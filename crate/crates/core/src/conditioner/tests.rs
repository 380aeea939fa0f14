use super::*;
use crate::data::GaussianMixture;
use crate::layers::init_parameters;

fn tiny_generator(seed: u64) -> GeneratorNet<f32> {
    let mut g = GeneratorNet::<f32>::new(8, 32, 4).unwrap();
    init_parameters(&mut g, seed);
    g
}

#[test]
fn observations_validate_and_parse() {
    assert!(Observations::new(vec![(70, 0, 1.0)], 64, 64).is_err());
    assert!(Observations::new(vec![(0, 0, 0.5)], 64, 64).is_err());
    assert!(Observations::new(vec![(1, 1, 1.0), (1, 1, -1.0)], 64, 64).is_err());

    let text = "# comment\n12 12 0\n12 25 0  # trailing\n\n12 38 1\n";
    let obs = Observations::parse(text, 64, 64).unwrap();
    assert_eq!(obs.len(), 3);
    assert_eq!(obs.points()[0], (12, 12, -1.0));
    assert_eq!(obs.points()[2], (12, 38, 1.0));

    match Observations::parse("12 12 2\n", 64, 64) {
        Err(crate::Error::Config { line: 1, .. }) => {}
        other => panic!("expected config error on line 1, got {other:?}"),
    }
    match Observations::parse("0 0 1\n99 0 1\n", 64, 64) {
        Err(crate::Error::Config { line: 2, .. }) => {}
        other => panic!("expected config error on line 2, got {other:?}"),
    }
}

#[test]
fn example_a_fixture_matches_published_layout() {
    let obs = Observations::example_a();
    assert_eq!(obs.len(), 16);
    assert_eq!(obs.grid(), (64, 64));
    assert_eq!(obs.points()[0], (12, 12, -1.0));
    assert_eq!(obs.points()[1], (12, 25, -1.0));
    assert_eq!(obs.points()[2], (12, 38, 1.0));
    // channel fraction of example A is 7/16
    let ones = obs.points().iter().filter(|&&(_, _, v)| v > 0.0).count();
    assert_eq!(ones, 7);

    let scaled = obs.scaled_to(32, 32).unwrap();
    assert_eq!(scaled.len(), 16);
    assert_eq!(scaled.grid(), (32, 32));
    assert_eq!(scaled.points()[0].0, 6);
}

#[test]
fn observation_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.txt");
    let obs = Observations::example_a();
    obs.write(&path).unwrap();
    let back = Observations::read(&path, 64, 64).unwrap();
    assert_eq!(obs, back);
}

#[test]
fn neg_log_posterior_prior_term_only() {
    // no observations, λ = 1, z = (3, 4, 0, ...) -> 25
    let mut gen = tiny_generator(1);
    let spec = PosteriorSpec::new(Observations::new(vec![], 32, 32).unwrap(), 1.0).unwrap();
    let mut tape = Tape::new();
    let mut z = vec![0.0f32; 8];
    z[0] = 3.0;
    z[1] = 4.0;
    let zid = tape.leaf_const(vec![1, 8], z).unwrap();
    let l = neg_log_posterior(&mut tape, zid, &mut gen, &spec).unwrap();
    assert!((tape.value(l)[0] - 25.0).abs() < 1e-5);
}

#[test]
fn neg_log_posterior_zero_on_exact_match() {
    // λ = 0 and observations read off the generator's own output
    let mut gen = tiny_generator(2);
    let z = crate::gan::latents(&mut rng::stream(3, "z"), 1, 8);
    let mut tape = Tape::new();
    let zid = tape.leaf_const(vec![1, 8], z.clone()).unwrap();
    let (img, _) = gen.forward(&mut tape, zid, Mode::Eval, false).unwrap();
    let px = tape.value(img).to_vec();

    // binary observations cannot match a tanh output exactly, so validate
    // with the fit term dropped to zero via exact-match targets instead:
    // pick cells whose values we round to ±1 and verify the residual equals
    // the rounding error, then λ‖z‖² alone for the empty case.
    let spec = PosteriorSpec::new(Observations::new(vec![], 32, 32).unwrap(), 0.0).unwrap();
    let mut tape2 = Tape::new();
    let zid2 = tape2.leaf_const(vec![1, 8], z).unwrap();
    let l = neg_log_posterior(&mut tape2, zid2, &mut gen, &spec).unwrap();
    assert!(tape2.value(l)[0].abs() < 1e-12);

    // and the fit term alone reproduces the hand-computed residual
    let cells = [(3usize, 5usize), (17, 20)];
    let obs = Observations::new(
        cells.iter().map(|&(r, c)| (r, c, 1.0)).collect(),
        32,
        32,
    )
    .unwrap();
    let spec = PosteriorSpec::new(obs, 0.0).unwrap();
    let mut tape3 = Tape::new();
    let z3 = crate::gan::latents(&mut rng::stream(3, "z"), 1, 8);
    let zid3 = tape3.leaf_const(vec![1, 8], z3).unwrap();
    let l = neg_log_posterior(&mut tape3, zid3, &mut gen, &spec).unwrap();
    let want: f64 = cells
        .iter()
        .map(|&(r, c)| {
            let v = px[r * 32 + c] as f64;
            (v - 1.0) * (v - 1.0)
        })
        .sum();
    assert!((tape3.value(l)[0] as f64 - want).abs() < 1e-5);
}

#[test]
fn neg_log_posterior_is_permutation_invariant() {
    let mut gen = tiny_generator(4);
    let pts = vec![(1, 2, 1.0), (5, 9, -1.0), (20, 30, 1.0), (31, 0, -1.0)];
    let mut rev = pts.clone();
    rev.reverse();
    let z = crate::gan::latents(&mut rng::stream(5, "z"), 3, 8);

    let eval = |points: Vec<(usize, usize, f32)>, gen: &mut GeneratorNet<f32>| -> Vec<f32> {
        let spec =
            PosteriorSpec::new(Observations::new(points, 32, 32).unwrap(), 0.1).unwrap();
        let mut tape = Tape::new();
        let zid = tape.leaf_const(vec![3, 8], z.clone()).unwrap();
        let l = neg_log_posterior(&mut tape, zid, gen, &spec).unwrap();
        tape.value(l).to_vec()
    };
    let a = eval(pts, &mut gen);
    let b = eval(rev, &mut gen);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn kl_objective_is_compositional() {
    let gm = GaussianMixture::toy_2d();
    let mut target = MixtureTarget { gm: &gm };
    let mut inet = InferenceNet::<f32>::new(2, 2, 16, 1);
    init_parameters(&mut inet, 7);
    let w = crate::gan::latents(&mut rng::stream(8, "w"), 32, 2);
    let mut tape = Tape::new();
    let wid = tape.leaf_const(vec![32, 2], w).unwrap();
    let graph = kl_objective(&mut tape, wid, &inet, &mut target, 5, false).unwrap();
    let obj = tape.scalar_value(graph.objective).unwrap();
    let ml = tape.scalar_value(graph.mean_loss).unwrap();
    let h = tape.scalar_value(graph.entropy).unwrap();
    assert!((obj - (ml - h)).abs() < 1e-6, "{obj} vs {ml} - {h}");

    // entropy node value equals the standalone estimator on the z batch
    let est = entropy_estimate(tape.value(graph.z), 32, 2, 5).unwrap();
    assert!((h - est.value).abs() < 1e-4, "{h} vs {est:?}");
}

#[test]
fn objective_reduces_to_negative_entropy_without_loss_terms() {
    // λ = 0 and no observations: the posterior term is identically zero, so
    // the KL objective is −Ĥ of the mapped batch; with an identity network
    // that batch is the standard-normal source itself.
    let mut gen = tiny_generator(9);
    let spec = PosteriorSpec::new(Observations::new(vec![], 32, 32).unwrap(), 0.0).unwrap();

    let mut inet = InferenceNet::<f32>::with_activation(8, 8, 8, 0, crate::autodiff::ElemKind::Identity);
    for (name, p) in inet.param_names().into_iter().zip(inet.params_mut()) {
        if name.ends_with(".weight") {
            let dims = p.dims().to_vec();
            let d = p.data_mut();
            d.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..dims[0].min(dims[1]) {
                d[i * dims[1] + i] = 1.0;
            }
        }
    }

    let w = crate::gan::latents(&mut rng::stream(10, "w"), 64, 8);
    let mut tape = Tape::new();
    let wid = tape.leaf_const(vec![64, 8], w.clone()).unwrap();
    let mut target = PosteriorTarget { gen: &mut gen, spec };
    let graph = kl_objective(&mut tape, wid, &inet, &mut target, 8, false).unwrap();
    let obj = tape.scalar_value(graph.objective).unwrap();
    let est = entropy_estimate(&w, 64, 8, 8).unwrap();
    assert!((obj + est.value).abs() < 1e-4, "{obj} vs -{}", est.value);
}

#[test]
fn update_direction_decomposes_into_two_backward_passes() {
    let gm = GaussianMixture::toy_1d();
    let mut target = MixtureTarget { gm: &gm };
    let mut inet = InferenceNet::<f64>::new(1, 1, 12, 1);
    init_parameters(&mut inet, 11);
    let m = 48usize;
    let k = 6usize;
    let w: Vec<f64> = crate::gan::latents(&mut rng::stream(12, "w"), m, 1)
        .into_iter()
        .map(|v| v as f64)
        .collect();

    // combined objective backward
    let mut tape = Tape::<f64>::new();
    let wid = tape.leaf_const(vec![m, 1], w.clone()).unwrap();
    let graph = kl_objective(&mut tape, wid, &inet, &mut target, k, true).unwrap();
    tape.backward(graph.objective).unwrap();
    let combined: Vec<Vec<f64>> = graph
        .inet_ids
        .iter()
        .map(|&id| tape.grad_or_zeros(id))
        .collect();

    // mean-loss backward alone
    let mut t1 = Tape::<f64>::new();
    let w1 = t1.leaf_const(vec![m, 1], w.clone()).unwrap();
    let g1 = kl_objective(&mut t1, w1, &inet, &mut target, k, true).unwrap();
    t1.backward(g1.mean_loss).unwrap();
    let loss_grads: Vec<Vec<f64>> =
        g1.inet_ids.iter().map(|&id| t1.grad_or_zeros(id)).collect();

    // entropy backward alone
    let mut t2 = Tape::<f64>::new();
    let w2 = t2.leaf_const(vec![m, 1], w).unwrap();
    let g2 = kl_objective(&mut t2, w2, &inet, &mut target, k, true).unwrap();
    t2.backward(g2.entropy).unwrap();
    let ent_grads: Vec<Vec<f64>> =
        g2.inet_ids.iter().map(|&id| t2.grad_or_zeros(id)).collect();

    for ((c, l), e) in combined.iter().zip(&loss_grads).zip(&ent_grads) {
        let scale = c.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-12);
        for i in 0..c.len() {
            let want = l[i] - e[i];
            assert!(
                (c[i] - want).abs() / scale < 1e-6,
                "component {i}: {} vs {want}",
                c[i]
            );
        }
    }
}

#[test]
fn sampler_with_zero_iterations_is_initialization() {
    let gm = GaussianMixture::toy_1d();
    let mut target = MixtureTarget { gm: &gm };
    let cfg = SamplerConfig {
        batch: 16,
        k: None,
        lr: 1e-3,
        beta1: 0.9,
        max_iters: 0,
        seed: 13,
        n_w: 1,
        hidden: 8,
        intermediate: 1,
        use_entropy: true,
        early_stop_window: 0,
        early_stop_rel: 0.0,
    };
    let (inet, trace) = train_sampler(&mut target, &cfg).unwrap();
    assert!(trace.is_empty());
    let mut fresh = InferenceNet::<f32>::new(1, 1, 8, 1);
    init_parameters(&mut fresh, rng::derive(13, "init.i"));
    for (a, b) in inet.params().iter().zip(fresh.params()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn sampler_aborts_on_non_finite_objective() {
    struct NanTarget;
    impl TargetDensity for NanTarget {
        fn dim(&self) -> usize {
            1
        }
        fn neg_log_density(&mut self, tape: &mut Tape<f32>, z: Id) -> Result<Id> {
            tape.add_scalar(z, f32::NAN)
        }
    }
    let cfg = SamplerConfig {
        batch: 8,
        k: Some(2),
        lr: 1e-3,
        beta1: 0.9,
        max_iters: 3,
        seed: 1,
        n_w: 1,
        hidden: 4,
        intermediate: 0,
        use_entropy: true,
        early_stop_window: 0,
        early_stop_rel: 0.0,
    };
    match train_sampler(&mut NanTarget, &cfg) {
        Err(crate::Error::Diverged { iter: 0, .. }) => {}
        Err(other) => panic!("expected divergence abort, got {other:?}"),
        Ok(_) => panic!("expected divergence abort, got success"),
    }
}

#[test]
fn sample_conditional_shape_and_determinism() {
    let mut gen = tiny_generator(14);
    let mut inet = InferenceNet::<f32>::new(8, 8, 16, 1);
    init_parameters(&mut inet, 15);
    let a = sample_conditional(&mut gen, &inet, 3, 4).unwrap();
    let b = sample_conditional(&mut gen, &inet, 3, 4).unwrap();
    assert_eq!(a.len(), 3 * 32 * 32);
    assert_eq!(a, b);
    assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn optimizer_converges_on_pure_prior() {
    // no observations, λ = 1: the loss is ‖z‖², minimized at the origin
    let mut gen = tiny_generator(16);
    let spec = PosteriorSpec::new(Observations::new(vec![], 32, 32).unwrap(), 1.0).unwrap();
    let mins =
        optimize_conditional(&mut gen, None, &spec, CondLoss::GaussianPrior, 2, 500, 0.05, 17)
            .unwrap();
    for m in &mins {
        let norm: f64 = m.z.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        assert!(norm < 0.1, "‖z*‖ = {norm}");
        assert!(m.loss <= m.initial_loss + 1e-9);
    }
}

#[test]
fn optimizer_restarts_explore_distinct_minimizers() {
    let mut gen = tiny_generator(18);
    let obs = Observations::new(vec![(8, 8, 1.0), (24, 24, -1.0)], 32, 32).unwrap();
    let spec = PosteriorSpec::new(obs, 0.1).unwrap();
    let mins =
        optimize_conditional(&mut gen, None, &spec, CondLoss::GaussianPrior, 4, 60, 0.05, 19)
            .unwrap();
    assert_eq!(mins.len(), 4);
    for m in &mins {
        assert!(m.loss <= m.initial_loss + 1e-9, "{} > {}", m.loss, m.initial_loss);
    }
    let mut distinct = 0;
    for i in 0..mins.len() {
        for j in i + 1..mins.len() {
            let d: f64 = mins[i]
                .z
                .iter()
                .zip(&mins[j].z)
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if d > 0.1 {
                distinct += 1;
            }
        }
    }
    assert!(distinct >= 2, "only {distinct} distinct pairs");
}

#[test]
fn perceptual_loss_requires_classifier_scores() {
    let mut gen = tiny_generator(20);
    let obs = Observations::new(vec![(4, 4, 1.0)], 32, 32).unwrap();
    let spec = PosteriorSpec::new(obs, 0.1).unwrap();
    // no discriminator
    assert!(matches!(
        optimize_conditional(&mut gen, None, &spec, CondLoss::Perceptual, 1, 5, 0.05, 1),
        Err(Error::Usage(_))
    ));
    // wgan-mode critic
    let mut critic = DiscriminatorNet::<f32>::new(32, 4, DiscKind::Critic).unwrap();
    init_parameters(&mut critic, 21);
    assert!(matches!(
        optimize_conditional(&mut gen, Some(&mut critic), &spec, CondLoss::Perceptual, 1, 5, 0.05, 1),
        Err(Error::Usage(_))
    ));
    // classifier works and descends
    let mut clf = DiscriminatorNet::<f32>::new(32, 4, DiscKind::Classifier).unwrap();
    init_parameters(&mut clf, 22);
    let mins =
        optimize_conditional(&mut gen, Some(&mut clf), &spec, CondLoss::Perceptual, 1, 30, 0.05, 2)
            .unwrap();
    assert!(mins[0].loss <= mins[0].initial_loss + 1e-9);
}

#[test]
fn map_collapse_without_entropy_term() {
    // Training against a unimodal target with the entropy term removed
    // collapses the batch toward the MAP point; with the term kept the
    // spread survives. Measured as the trace of the sample covariance.
    let gm = GaussianMixture::univariate(vec![1.0], &[(2.0, 0.6)]).unwrap();

    let spread = |use_entropy: bool| -> (f64, f64) {
        let mut target = MixtureTarget { gm: &gm };
        let cfg = SamplerConfig {
            batch: 64,
            k: None,
            lr: 5e-3,
            beta1: 0.9,
            max_iters: 400,
            seed: 23,
            n_w: 1,
            hidden: 32,
            intermediate: 1,
            use_entropy,
            early_stop_window: 0,
            early_stop_rel: 0.0,
        };
        let (inet, _) = train_sampler(&mut target, &cfg).unwrap();
        let z0 = sample_latents(&inet, 256, 29).unwrap();
        let var = |v: &[f32]| {
            let m = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
            v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        // initial variance: fresh init maps near-zero everywhere; use the
        // target variance as the reference scale instead
        (var(&z0), 0.36)
    };

    let (with_h, target_var) = spread(true);
    let (without_h, _) = spread(false);
    assert!(
        without_h < 0.1 * with_h.max(1e-9),
        "no-entropy spread {without_h} vs full {with_h}"
    );
    assert!(with_h > 0.25 * target_var, "entropy kept spread too small: {with_h}");
}
