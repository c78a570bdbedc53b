//! Cross-module pipeline tests: simulated data through kernels, variance
//! components, and predictors.

use ndarray::Array1;
use ntkrisk::genodata::{
    simulate_genotypes, standardize, CovariateDesign, PhenotypeVector, StandardizeMode,
};
use ntkrisk::kernels::{grm_kernel, ntk_analytic, BaseScaling, NtkArchitecture};
use ntkrisk::minque::{minque_fit, MinqueSpec};
use ntkrisk::ntk::{empirical_ntk, NtkBuildConfig};
use ntkrisk::predict::{blup_fit_predict, check_lmm_krr_equivalence, krr_fit, krr_predict, CvPlan};
use ntkrisk::simlab::{apply_model, gen_signal, pearson, ScenarioModel, ScenarioSpec};
use ntkrisk::util::derive_seed;

fn scenario(model: ScenarioModel, n: usize, p: usize, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        model,
        alpha: 2.0,
        sigma_g2: 2.0,
        sigma_e2: 0.25,
        n,
        p,
        replicates: 1,
        train_fraction: 0.8,
        seed,
        maf_range: (0.1, 0.5),
        ld_decay: 1.0,
    }
}

#[test]
fn grm_blup_recovers_linear_signal() {
    // Strong linear signal: the GRM mixed model should reach a clearly
    // positive held-out correlation.
    let spec = scenario(ScenarioModel::Linear, 200, 10, 42);
    let raw = simulate_genotypes(spec.n, spec.p, spec.maf_range, spec.ld_decay, 1).unwrap();
    let (centered, _) = standardize(&raw, StandardizeMode::CenterOnly).unwrap();
    let g = gen_signal(&centered, spec.sigma_g2, 2).unwrap();
    let y = apply_model(g.view(), &spec, 3).unwrap();

    let kernel = grm_kernel(&centered).unwrap();
    let train: Vec<usize> = (0..160).collect();
    let test: Vec<usize> = (160..200).collect();
    let k_train = kernel.principal_submatrix(&train).unwrap();
    let cross = kernel.block(&test, &train);
    let y_train =
        PhenotypeVector::new(Array1::from_iter(train.iter().map(|&i| y.values()[i]))).unwrap();
    let z = CovariateDesign::intercept(train.len()).unwrap();
    let fit = minque_fit(&y_train, &[k_train.clone()], Some(&z), &MinqueSpec::default()).unwrap();
    assert!(
        fit.components.theta[1] > 0.0,
        "genetic variance should be detected: {:?}",
        fit.components.theta
    );
    let z_test = ndarray::Array2::from_elem((test.len(), 1), 1.0);
    let blup = blup_fit_predict(
        y_train.values().view(),
        &k_train,
        cross.view(),
        Some(z.values().view()),
        Some(z_test.view()),
        &fit.components,
    )
    .unwrap();
    let y_test = Array1::from_iter(test.iter().map(|&i| y.values()[i]));
    let r = pearson(blup.predictions.view(), y_test.view()).unwrap();
    assert!(r > 0.5, "held-out correlation {r}");
}

#[test]
fn ntk_krr_beats_chance_on_even_nonlinearity() {
    // Power-model truth (even in g) carries no linear component; the NTK
    // kernel still finds signal.
    let mut spec = scenario(ScenarioModel::Power, 200, 8, 7);
    spec.sigma_e2 = 0.5;
    let raw = simulate_genotypes(spec.n, spec.p, spec.maf_range, spec.ld_decay, 11).unwrap();
    let (centered, _) = standardize(&raw, StandardizeMode::CenterOnly).unwrap();
    let g = gen_signal(&centered, spec.sigma_g2, 12).unwrap();
    let y = apply_model(g.view(), &spec, 13).unwrap();

    let cfg = NtkBuildConfig {
        width: 512,
        depth: 2,
        chunk_size: 64,
        num_inits: 1,
        seed: 99,
        normalize: true,
    };
    let kernel = empirical_ntk(&centered, &cfg).unwrap();
    let train: Vec<usize> = (0..160).collect();
    let test: Vec<usize> = (160..200).collect();
    let k_train = kernel.principal_submatrix(&train).unwrap();
    let y_train = Array1::from_iter(train.iter().map(|&i| y.values()[i]));
    let (fit, report) = krr_fit(y_train.view(), &k_train, &CvPlan::default()).unwrap();
    assert!(report.entries.len() == 5);
    let cross = kernel.block(&test, &train);
    let pred = krr_predict(&fit, cross.view()).unwrap();
    let y_test = Array1::from_iter(test.iter().map(|&i| y.values()[i]));
    let r = pearson(pred.view(), y_test.view()).unwrap();
    assert!(r > 0.2, "held-out correlation {r}");
}

#[test]
fn equivalence_holds_for_both_kernel_families() {
    for seed in 0..5u64 {
        let raw = simulate_genotypes(30, 6, (0.1, 0.5), 1.0, 500 + seed).unwrap();
        let (centered, _) = standardize(&raw, StandardizeMode::CenterOnly).unwrap();
        let mut y = Array1::<f64>::zeros(30);
        let mut state = seed;
        for v in y.iter_mut() {
            state = derive_seed(state, 3);
            *v = (state % 1000) as f64 / 250.0 - 2.0;
        }
        let grm = grm_kernel(&centered).unwrap();
        let ntk = empirical_ntk(
            &centered,
            &NtkBuildConfig {
                width: 128,
                depth: 3,
                chunk_size: 8,
                num_inits: 1,
                seed: 900 + seed,
                normalize: true,
            },
        )
        .unwrap();
        let bound = 1e-8 * (1.0 + y.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
        for kernel in [&grm, &ntk] {
            let gap = check_lmm_krr_equivalence(y.view(), kernel, 1.5, 0.75).unwrap();
            assert!(gap < bound, "seed {seed}: gap {gap} vs bound {bound}");
        }
    }
}

#[test]
fn analytic_and_empirical_ntk_agree_on_shared_pipeline_scale() {
    // The normalized kernels live on the same 1/p scale, so downstream fits
    // accept either interchangeably.
    let raw = simulate_genotypes(16, 8, (0.1, 0.5), 1.0, 77).unwrap();
    let (centered, _) = standardize(&raw, StandardizeMode::CenterOnly).unwrap();
    let arch = NtkArchitecture::with_depth(3).unwrap();
    let analytic = ntk_analytic(&centered, &arch, BaseScaling::InnerProduct, true).unwrap();
    let empirical = empirical_ntk(
        &centered,
        &NtkBuildConfig {
            width: 2048,
            depth: 3,
            chunk_size: 16,
            num_inits: 1,
            seed: 5,
            normalize: true,
        },
    )
    .unwrap();
    let expected_diag = 1.0 / 8.0;
    for i in 0..16 {
        assert_eq!(analytic.values()[[i, i]], expected_diag);
        assert_eq!(empirical.values()[[i, i]], expected_diag);
    }
    let max_dev = analytic
        .values()
        .iter()
        .zip(empirical.values().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_dev < 0.02, "width-2048 deviation {max_dev}");
}
