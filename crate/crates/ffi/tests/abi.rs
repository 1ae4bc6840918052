use std::ffi::{CStr, CString};
use std::fs;
use std::ptr;

use nalgebra::DMatrix;

use transgp::graph::{build_knn_graph, normalized_laplacian, spectral_decompose};
use transgp::kernels::{full_kernel, BaseKernel, HyperParams, KernelSpec, Regularizer};
use transgp_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tg_last_error()) }.to_string_lossy().into_owned()
}

fn points() -> (Vec<f64>, usize, usize) {
    let n = 12;
    let x: Vec<f64> = (0..n)
        .flat_map(|i| {
            let t = i as f64 * 0.5;
            [t.cos(), t.sin()]
        })
        .collect();
    (x, n, 2)
}

fn hyperparams(betas: &[f64]) -> TgHyperParams {
    TgHyperParams {
        sigma1_sq: 1.3,
        lengthscale: 0.7,
        sigma2_sq: 0.9,
        noise_sq: 0.05,
        alpha: 2.0,
        sigma_diff: 1.0,
        p_steps: 2,
        nu: 1.5,
        kappa: 1.0,
        betas: betas.as_ptr(),
        beta_count: betas.len(),
    }
}

#[test]
fn graph_handles_round_trip() {
    let adjacency = [0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0, 0.0];
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(tg_graph_from_adjacency(adjacency.as_ptr(), 3, &mut g), TgStatus::Ok);
        assert_eq!(tg_graph_node_count(g), 3);
        assert_eq!(tg_graph_edge_count(g), 2);
        let mut back = [0.0; 9];
        assert_eq!(tg_graph_adjacency(g, back.as_mut_ptr(), 9), TgStatus::Ok);
        assert_eq!(back, adjacency);

        let labels = [0usize, 0, 1];
        let mut h = 0.0;
        assert_eq!(tg_graph_homophily(g, labels.as_ptr(), 3, &mut h), TgStatus::Ok);
        assert_eq!(h, 0.5);
        tg_graph_free(g);
    }
}

#[test]
fn spectrum_and_kernel_match_the_library() {
    let (x, n, m) = points();
    let betas = [0.2, -0.4, 0.1];
    let mut g = ptr::null_mut();
    let mut sd = ptr::null_mut();
    let mut eig = vec![0.0; n];
    let mut k = vec![0.0; n * n];
    let spec = TgKernelSpec {
        base: TgBaseKernel::Rbf,
        regularizer: TgRegularizer::SoftplusPolynomial,
        degree: 2,
    };
    let hp = hyperparams(&betas);
    unsafe {
        assert_eq!(tg_graph_knn(x.as_ptr(), n, m, 3, &mut g), TgStatus::Ok);
        assert_eq!(tg_spectrum_new(g, &mut sd), TgStatus::Ok);
        assert_eq!(tg_spectrum_eigenvalues(sd, eig.as_mut_ptr(), n), TgStatus::Ok);
        assert_eq!(tg_kernel_matrix(&spec, &hp, x.as_ptr(), n, m, sd, k.as_mut_ptr()), TgStatus::Ok);
        tg_spectrum_free(sd);
        tg_graph_free(g);
    }

    let features = DMatrix::from_row_slice(n, m, &x);
    let expected_sd = spectral_decompose(&normalized_laplacian(&build_knn_graph(&features, 3).unwrap())).unwrap();
    assert_eq!(eig.as_slice(), expected_sd.eigenvalues.as_slice());
    let spec = KernelSpec::transductive(BaseKernel::Rbf, Regularizer::SoftplusPolynomial { degree: 2 });
    let hp = HyperParams::default()
        .with_sigma1_sq(1.3)
        .with_lengthscale(0.7)
        .with_sigma2_sq(0.9)
        .with_noise_sq(0.05)
        .with_alpha(2.0)
        .with_sigma_diff(1.0)
        .with_p_steps(2)
        .with_nu(1.5)
        .with_kappa(1.0)
        .with_betas(betas.to_vec());
    let expected = full_kernel(&spec, &hp, &features, &expected_sd).unwrap();
    // row-major on the C side; the kernel is symmetric either way
    assert_eq!(k.as_slice(), expected.transpose().as_slice());
}

#[test]
fn posterior_matches_hand_computed_values() {
    let k = [2.0, 1.0, 0.5, 1.0, 2.0, 1.0, 0.5, 1.0, 2.0];
    let train = [0usize, 2];
    let test = [1usize];
    let y = [1.0, -1.0];
    let (mut mean, mut var, mut lml) = ([0.0; 1], [0.0; 1], 0.0);
    let status = unsafe {
        tg_gp_posterior(
            k.as_ptr(),
            3,
            train.as_ptr(),
            2,
            test.as_ptr(),
            1,
            y.as_ptr(),
            1,
            0.0,
            mean.as_mut_ptr(),
            var.as_mut_ptr(),
            &mut lml,
        )
    };
    assert_eq!(status, TgStatus::Ok);
    // node 1 sees both training nodes equally, so the ±1 targets cancel;
    // its variance is 2 - [1 1] [[2, .5], [.5, 2]]⁻¹ [1 1]ᵀ = 2 - 2/2.5
    assert!(mean[0].abs() < 1e-12);
    assert!((var[0] - 1.2).abs() < 1e-12);
    assert!(lml.is_finite());
}

#[test]
fn errors_map_to_status_codes() {
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(tg_graph_from_adjacency(ptr::null(), 3, &mut g), TgStatus::NullPointer);
        assert!(last_error().contains("null"));

        let asymmetric = [0.0, 1.0, 0.0, 0.0];
        assert_eq!(tg_graph_from_adjacency(asymmetric.as_ptr(), 2, &mut g), TgStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        let missing = CString::new("/nonexistent/transgp-data").unwrap();
        let mut ds = ptr::null_mut();
        assert_eq!(tg_dataset_load(missing.as_ptr(), &mut ds), TgStatus::Data);
        assert!(ds.is_null());

        // p-step needs alpha > 2
        let (x, n, m) = points();
        let mut sd = ptr::null_mut();
        assert_eq!(tg_graph_knn(x.as_ptr(), n, m, 3, &mut g), TgStatus::Ok);
        assert_eq!(last_error(), "", "a success clears the message");
        assert_eq!(tg_spectrum_new(g, &mut sd), TgStatus::Ok);
        let spec = TgKernelSpec {
            base: TgBaseKernel::None,
            regularizer: TgRegularizer::PStepRandomWalk,
            degree: 0,
        };
        let mut hp = hyperparams(&[]);
        hp.alpha = 1.5;
        let mut k = vec![0.0; n * n];
        assert_eq!(tg_kernel_matrix(&spec, &hp, ptr::null(), n, m, sd, k.as_mut_ptr()), TgStatus::Numerical);
        assert!(last_error().contains("alpha"));
        tg_spectrum_free(sd);
        tg_graph_free(g);

        // freeing null is a no-op
        tg_graph_free(ptr::null_mut());
        tg_spectrum_free(ptr::null_mut());
        tg_dataset_free(ptr::null_mut());
        tg_string_free(ptr::null_mut());
    }
}

#[test]
fn dataset_and_experiment_calls() {
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(tg_dataset_swiss_roll(50, 4, 0.0, 3, &mut ds), TgStatus::Ok);
        assert_eq!(tg_dataset_node_count(ds), 50);
        assert_eq!(tg_dataset_feature_count(ds), 3);
        let mut x = vec![0.0; 150];
        assert_eq!(tg_dataset_features(ds, x.as_mut_ptr(), 150), TgStatus::Ok);
        assert_eq!(tg_dataset_features(ds, x.as_mut_ptr(), 10), TgStatus::InvalidArgument);
        let mut g = ptr::null_mut();
        assert_eq!(tg_dataset_graph(ds, &mut g), TgStatus::Ok);
        assert_eq!(tg_graph_node_count(g), 50);
        tg_graph_free(g);
        tg_dataset_free(ds);
    }

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "[dataset]\nkind = \"swiss_roll\"\nn = 40\n[model]\nname = \"gp\"\n[train]\nn_train = 6\n[opt]\nrestarts = 1\nmax_iters = 5\n",
    )
    .unwrap();
    let path = CString::new(config.to_str().unwrap()).unwrap();
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(tg_run_experiment(path.as_ptr(), &mut json), TgStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        tg_string_free(json);
        let report: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(report["metric_name"], "mae");
        assert_eq!(report["seeds"].as_array().unwrap().len(), 1);
    }

    fs::write(&config, "[train]\n").unwrap();
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(tg_run_experiment(path.as_ptr(), &mut json), TgStatus::Config);
    }
    assert!(json.is_null());
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/transgp.h")).unwrap();
    let source = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["TgStatus", "TgKernelSpec", "TgHyperParams", "TgGraph", "TgSpectrum", "TgDataset"] {
        assert!(header.contains(ty), "{ty} missing from header");
    }
}
