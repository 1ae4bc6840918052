mod common;

use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use transgp::data::{generate_swiss_roll, sample_training_split};
use transgp::gp::log_marginal_likelihood;
use transgp::hyperopt::*;
use transgp::kernels::*;

fn softplus_spec() -> KernelSpec {
    KernelSpec::transductive(BaseKernel::Rbf, Regularizer::SoftplusPolynomial { degree: 2 })
}

/// Six-node problem on a kNN graph with smooth targets.
fn six_node_problem(spec: KernelSpec, hp: &HyperParams) -> TrainingProblem {
    let mut rng = common::rng(6);
    let inst = common::knn_instance(&mut rng, 6, 2);
    let train = vec![0, 2, 3, 5];
    let y = DMatrix::from_fn(train.len(), 1, |i, _| inst.x[(train[i], 0)] - 0.5);
    let layout = Arc::new(ParamLayout::new(&spec, hp.clone()));
    TrainingProblem::new(spec, layout, inst.x, Some(Arc::new(inst.spectrum)), train, y).unwrap()
}

fn dense_lml(problem: &mut TrainingProblem, hp: &HyperParams) -> f64 {
    let full = problem.full_kernel(hp).unwrap();
    let train = problem.train_idx().to_vec();
    let k = kernel_submatrix(&full, &train, &train).unwrap();
    log_marginal_likelihood(&k, problem.targets(), hp.noise_sq()).unwrap()
}

fn test_hyperparams() -> HyperParams {
    HyperParams::default()
        .with_sigma1_sq(1.4)
        .with_lengthscale(0.4)
        .with_sigma2_sq(0.8)
        .with_noise_sq(0.05)
        .with_betas(vec![0.3, -0.6, 0.2])
}

#[test]
fn reparameterization_is_consistent() {
    let spec = softplus_spec();
    let direct = test_hyperparams();
    let mut problem = six_node_problem(spec, &direct);
    let packed = ParamVector::pack(problem.layout().clone(), &direct);
    let via_vector = problem.evaluate(&packed.values);
    let via_struct = problem.lml(&direct).unwrap();
    assert!((via_vector - via_struct).abs() < 1e-12);
    assert!((via_vector - dense_lml(&mut problem, &direct)).abs() < 1e-9);
}

#[test]
fn objective_is_deterministic() {
    let spec = softplus_spec();
    let hp = test_hyperparams();
    let mut problem = six_node_problem(spec, &hp);
    let x = ParamVector::pack(problem.layout().clone(), &hp).values;
    assert_eq!(problem.evaluate(&x).to_bits(), problem.evaluate(&x).to_bits());
}

#[test]
fn joint_variance_scaling_follows_closed_form() {
    // Scaling σ₁², σ₂² and σ_n² by c scales K + σ_n²I by c, so
    // lml(c) = lml(1) + ½q(1 - 1/c) - (s·cols/2) ln c with q = yᵀ(K + σ_n²I)⁻¹y.
    let spec = softplus_spec();
    let hp = test_hyperparams();
    let mut problem = six_node_problem(spec, &hp);
    let k = problem.training_kernel(&hp).unwrap();
    let s = k.nrows();
    let ky = &k + DMatrix::identity(s, s) * hp.noise_sq();
    let y = problem.targets().clone();
    let q = (y.transpose() * ky.try_inverse().unwrap() * &y).trace();
    let base = problem.lml(&hp).unwrap();
    for c in [0.1, 3.0, 250.0] {
        let scaled = hp
            .clone()
            .with_sigma1_sq(hp.sigma1_sq() * c)
            .with_sigma2_sq(hp.sigma2_sq() * c)
            .with_noise_sq(hp.noise_sq() * c);
        let expected = base + 0.5 * q * (1.0 - 1.0 / c) - 0.5 * (s * y.ncols()) as f64 * c.ln();
        let got = problem.lml(&scaled).unwrap();
        assert!((got - expected).abs() < 1e-8 * expected.abs().max(1.0), "c={c}: {got} vs {expected}");
    }
}

#[test]
fn gradient_matches_richardson_oracle() {
    let spec = softplus_spec();
    let hp = test_hyperparams();
    let mut problem = six_node_problem(spec, &hp);
    let x = ParamVector::pack(problem.layout().clone(), &hp).values;
    let h = 1e-3;
    let mut f = |p: &[f64]| problem.evaluate(p);
    let coarse = numerical_gradient(&mut f, &x, h);
    let fine = numerical_gradient(&mut f, &x, h / 2.0);
    let grad = numerical_gradient(&mut f, &x, FD_STEP);
    for i in 0..x.len() {
        let oracle = (4.0 * fine.values[i] - coarse.values[i]) / 3.0;
        let rel = (grad.values[i] - oracle).abs() / oracle.abs().max(1e-6);
        assert!(rel < 1e-4, "coordinate {i}: {} vs {oracle}", grad.values[i]);
    }
    let (_, exact) = problem.value_and_gradient(&x).unwrap();
    for (i, (e, g)) in exact.iter().zip(&grad.values).enumerate() {
        let rel = (e - g).abs() / g.abs().max(1e-6);
        assert!(rel < 1e-5, "coordinate {i}: exact {e} vs {g}");
    }
}

#[test]
fn singular_parameters_give_negative_infinity() {
    let spec = KernelSpec::graph_only(Regularizer::PStepRandomWalk);
    let hp = HyperParams::default().with_alpha(2.5);
    let mut problem = six_node_problem(spec, &hp);
    let mut x = ParamVector::pack(problem.layout().clone(), &hp).values;
    let pos = problem.layout().position(ParamName::LogAlpha).unwrap();
    x[pos] = 1.5f64.ln();
    assert_eq!(problem.evaluate(&x), f64::NEG_INFINITY);
    // the optimizer still runs from a feasible start
    let cfg = OptConfig {
        restarts: 1,
        max_iters: 10,
        ..Default::default()
    };
    assert!(optimize_problem(&mut problem, &hp, &cfg).is_ok());
}

fn small_roll_problem() -> (TrainingProblem, HyperParams) {
    let ds = generate_swiss_roll(60, 4, 0.0, 2).unwrap();
    let ds = sample_training_split(&ds, 8, 2).unwrap();
    let spec = softplus_spec();
    let base = default_hyperparams(&spec, &ds.features);
    let layout = Arc::new(ParamLayout::new(&spec, base.clone()));
    let train = ds.splits.train.clone();
    (TrainingProblem::for_dataset(spec, layout, &ds, None, &train).unwrap(), base)
}

#[test]
fn fixed_seed_restarts_are_reproducible() {
    let cfg = OptConfig {
        restarts: 3,
        max_iters: 15,
        seed: 42,
        ..Default::default()
    };
    let (mut a, base) = small_roll_problem();
    let (mut b, _) = small_roll_problem();
    let first = optimize_problem(&mut a, &base, &cfg).unwrap();
    let second = optimize_problem(&mut b, &base, &cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.restarts_run, 3);
}

#[test]
fn every_restart_ends_at_least_where_it_started() {
    let cfg = OptConfig {
        restarts: 3,
        max_iters: 25,
        seed: 7,
        ..Default::default()
    };
    let (mut problem, base) = small_roll_problem();
    let result = optimize_problem(&mut problem, &base, &cfg).unwrap();
    for trace in &result.traces {
        let (first, last) = (trace.first().unwrap().1, trace.last().unwrap().1);
        assert!(last >= first);
        for w in trace.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }
    let best_seen = result
        .traces
        .iter()
        .flatten()
        .map(|p| p.1)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(result.best_lml, best_seen);
}

#[test]
fn finite_difference_mode_also_improves() {
    let mut cfg = OptConfig {
        restarts: 1,
        max_iters: 10,
        ..Default::default()
    };
    cfg.step_rule.gradient = GradientMode::FiniteDifference;
    let (mut problem, base) = small_roll_problem();
    let result = optimize_problem(&mut problem, &base, &cfg).unwrap();
    assert!(result.trace.last().unwrap().1 > result.trace[0].1);
}

proptest! {
    #![proptest_config(common::fixed_cases(256))]

    #[test]
    fn pack_unpack_round_trips(values in prop::collection::vec(-5.0f64..5.0, 7)) {
        let spec = softplus_spec();
        let layout = Arc::new(ParamLayout::new(&spec, test_hyperparams()));
        prop_assert_eq!(layout.len(), 7);
        let pv = ParamVector::from_values(layout.clone(), values.clone()).unwrap();
        let hp = pv.unpack();
        prop_assert_eq!(ParamVector::pack(layout, &hp).values, values);
        prop_assert!(hp.sigma1_sq() > 0.0 && hp.sigma2_sq() > 0.0 && hp.noise_sq() > 0.0 && hp.lengthscale() > 0.0);
    }

    #[test]
    fn identical_seeds_give_identical_inits(seed in any::<u64>(), restart in 0usize..5) {
        let spec = softplus_spec();
        let layout = Arc::new(ParamLayout::new(&spec, test_hyperparams()));
        let a = default_init(&layout, &test_hyperparams(), restart, seed);
        let b = default_init(&layout, &test_hyperparams(), restart, seed);
        prop_assert_eq!(a, b);
    }
}
