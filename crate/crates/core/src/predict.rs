//! Prediction under the fitted models: mixed-model BLUP, kernel ridge
//! regression with cross-validated regularization, their equivalence check,
//! and the gradient-flow training-dynamics predictor.
//!
//! BLUP and KRR coincide when the ridge value equals the noise-to-signal
//! ratio sigma_e^2 / sigma_g^2; [`check_lmm_krr_equivalence`] measures the
//! gap by running both code paths on a shared train/test split.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg;
use crate::minque::VarianceComponents;

/// Predictor family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    LmmBlup,
    Krr,
}

/// A fitted dual-weight predictor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedPredictor {
    pub kind: PredictorKind,
    /// Dual weights over the training samples.
    pub alpha: Vec<f64>,
    /// Ridge value: lambda* for KRR, theta_0/theta_1 for the mixed model.
    pub lambda: f64,
    /// Fixed-effect coefficients (mixed model only).
    pub beta: Option<Vec<f64>>,
    /// Identifiers of the training samples behind `alpha`.
    pub train_index: Vec<usize>,
}

/// Cross-validation plan for the ridge grid search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            k: 5,
            grid: vec![0.001, 0.01, 0.1, 1.0, 10.0],
            seed: 0,
        }
    }
}

impl CvPlan {
    fn validate(&self, n: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Parameter(format!("need at least 2 folds, got {}", self.k)));
        }
        if self.k > n {
            return Err(Error::Parameter(format!(
                "{} folds but only {n} training samples",
                self.k
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::Parameter("lambda grid is empty".into()));
        }
        if self.grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Parameter("lambda grid must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Per-candidate cross-validation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvEntry {
    pub lambda: f64,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

/// Full cross-validation table plus the selected candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub entries: Vec<CvEntry>,
    pub lambda_star: f64,
}

/// BLUP predictions plus the degenerate-fit flag.
#[derive(Debug, Clone)]
pub struct BlupPrediction {
    pub predictions: Array1<f64>,
    /// Set when theta_1 = 0: the genetic component vanished and only fixed
    /// effects contribute.
    pub fixed_effects_only: bool,
}

/// Mixed-model BLUP prediction.
///
/// Solves (theta_1 K_train + theta_0 I) alpha = y - Z beta and predicts
/// Z_test beta + theta_1 K_test_train alpha. Requires a two-component fit
/// (residual plus one kernel). When theta_1 = 0 the predictions fall back to
/// the fixed effects alone and the result is flagged.
pub fn blup_fit_predict(
    y_train: ArrayView1<'_, f64>,
    k_train: &KernelMatrix,
    k_test_train: ArrayView2<'_, f64>,
    z_train: Option<ArrayView2<'_, f64>>,
    z_test: Option<ArrayView2<'_, f64>>,
    vc: &VarianceComponents,
) -> Result<BlupPrediction> {
    let n = y_train.len();
    if k_train.n() != n {
        return Err(Error::Dimension(format!(
            "training kernel is {}x{} but y has length {n}",
            k_train.n(),
            k_train.n()
        )));
    }
    if k_test_train.ncols() != n {
        return Err(Error::Dimension(format!(
            "cross kernel has {} columns but there are {n} training samples",
            k_test_train.ncols()
        )));
    }
    if vc.theta.len() != 2 {
        return Err(Error::Parameter(format!(
            "BLUP prediction expects exactly [residual, kernel] components, got {}",
            vc.theta.len()
        )));
    }
    match (&z_train, &z_test) {
        (Some(zt), Some(zs)) => {
            if zt.nrows() != n {
                return Err(Error::Dimension(format!(
                    "Z_train has {} rows but y has length {n}",
                    zt.nrows()
                )));
            }
            if zs.nrows() != k_test_train.nrows() {
                return Err(Error::Dimension(format!(
                    "Z_test has {} rows but the cross kernel has {}",
                    zs.nrows(),
                    k_test_train.nrows()
                )));
            }
            if zt.ncols() != zs.ncols() || zt.ncols() != vc.beta.len() {
                return Err(Error::Dimension(
                    "covariate column counts disagree between train, test, and beta".into(),
                ));
            }
        }
        (None, None) => {}
        _ => {
            return Err(Error::Parameter(
                "covariates must be provided for both train and test or neither".into(),
            ))
        }
    }

    let theta_e = vc.theta[0];
    let theta_g = vc.theta[1];
    if !(theta_g >= 0.0) || !(theta_e >= 0.0) {
        return Err(Error::Parameter(format!(
            "variance components must be nonnegative, got ({theta_e}, {theta_g})"
        )));
    }

    let residuals = match z_train {
        Some(zt) => {
            let beta = Array1::from(vc.beta.clone());
            &y_train.to_owned() - &zt.dot(&beta)
        }
        None => y_train.to_owned(),
    };
    let fixed_part = match z_test {
        Some(zs) => zs.dot(&Array1::from(vc.beta.clone())),
        None => Array1::zeros(k_test_train.nrows()),
    };

    if theta_g == 0.0 {
        return Ok(BlupPrediction {
            predictions: fixed_part,
            fixed_effects_only: true,
        });
    }

    // C = theta_1 K + theta_0 I.
    let mut c = k_train.values() * theta_g;
    for i in 0..n {
        c[[i, i]] += theta_e;
    }
    let alpha = linalg::solve_spd(c.view(), residuals.view())?;
    let predictions = fixed_part + k_test_train.dot(&alpha).mapv(|v| theta_g * v);
    Ok(BlupPrediction {
        predictions,
        fixed_effects_only: false,
    })
}

/// Deterministic fold assignment: a seeded shuffle split into k contiguous
/// blocks (the first `n % k` folds take one extra sample).
pub fn cv_folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0usize;
    for fold in 0..k {
        let len = base + usize::from(fold < extra);
        folds.push(order[at..at + len].to_vec());
        at += len;
    }
    folds
}

/// Kernel ridge regression with k-fold cross-validated ridge selection.
///
/// For each candidate the fold systems (K_ff + lambda I) alpha = y_f are
/// solved and validation MSE recorded; the smallest candidate wins ties.
/// The final dual weights solve (K + lambda* I) alpha = y by a symmetric
/// positive definite factorization.
pub fn krr_fit(
    y_train: ArrayView1<'_, f64>,
    k_train: &KernelMatrix,
    plan: &CvPlan,
) -> Result<(FittedPredictor, CvReport)> {
    let n = y_train.len();
    if k_train.n() != n {
        return Err(Error::Dimension(format!(
            "training kernel is {}x{} but y has length {n}",
            k_train.n(),
            k_train.n()
        )));
    }
    plan.validate(n)?;

    let mut grid = plan.grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let folds = cv_folds(n, plan.k, plan.seed);
    let mut entries = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None; // (lambda, mean_mse)
    for &lambda in &grid {
        let mut fold_mse = Vec::with_capacity(plan.k);
        for fold in &folds {
            let mut train_idx: Vec<usize> = (0..n).filter(|i| !fold.contains(i)).collect();
            train_idx.sort_unstable();
            let mse = match ridge_fold_mse(y_train, k_train, &train_idx, fold, lambda) {
                Ok(v) => v,
                Err(_) => f64::INFINITY,
            };
            fold_mse.push(mse);
        }
        let mean_mse = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
        entries.push(CvEntry {
            lambda,
            fold_mse,
            mean_mse,
        });
        if mean_mse.is_finite() {
            let improves = match best {
                None => true,
                Some((_, best_mse)) => mean_mse < best_mse,
            };
            if improves {
                best = Some((lambda, mean_mse));
            }
        }
    }
    let (lambda_star, _) = best.ok_or_else(|| {
        Error::Numeric("K + lambda I was numerically singular for every candidate lambda".into())
    })?;

    let mut system = k_train.values().clone();
    for i in 0..n {
        system[[i, i]] += lambda_star;
    }
    let alpha = linalg::solve_spd(system.view(), y_train)?;
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("final ridge solve produced non-finite weights".into()));
    }
    Ok((
        FittedPredictor {
            kind: PredictorKind::Krr,
            alpha: alpha.to_vec(),
            lambda: lambda_star,
            beta: None,
            train_index: (0..n).collect(),
        },
        CvReport {
            entries,
            lambda_star,
        },
    ))
}

fn ridge_fold_mse(
    y: ArrayView1<'_, f64>,
    kernel: &KernelMatrix,
    train_idx: &[usize],
    val_idx: &[usize],
    lambda: f64,
) -> Result<f64> {
    let mut system = kernel.block(train_idx, train_idx);
    for i in 0..train_idx.len() {
        system[[i, i]] += lambda;
    }
    let y_fold = Array1::from_iter(train_idx.iter().map(|&i| y[i]));
    let alpha = linalg::solve_spd(system.view(), y_fold.view())?;
    let cross = kernel.block(val_idx, train_idx);
    let pred = cross.dot(&alpha);
    let mse = val_idx
        .iter()
        .zip(pred.iter())
        .map(|(&i, &p)| (y[i] - p) * (y[i] - p))
        .sum::<f64>()
        / val_idx.len() as f64;
    if mse.is_finite() {
        Ok(mse)
    } else {
        Err(Error::Numeric("non-finite validation MSE".into()))
    }
}

/// Prediction from a fitted KRR model: y_hat = K_test_train alpha.
pub fn krr_predict(
    fit: &FittedPredictor,
    k_test_train: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    if fit.kind != PredictorKind::Krr {
        return Err(Error::Parameter("predictor is not a KRR fit".into()));
    }
    if k_test_train.ncols() != fit.alpha.len() {
        return Err(Error::Dimension(format!(
            "cross kernel has {} columns but the fit has {} training samples",
            k_test_train.ncols(),
            fit.alpha.len()
        )));
    }
    let alpha = Array1::from(fit.alpha.clone());
    Ok(k_test_train.dot(&alpha))
}

/// Maximum absolute prediction gap between the mixed-model and ridge
/// predictors at lambda = sigma_e^2 / sigma_g^2.
///
/// The samples are split 80/20 by index order (at least one test sample) and
/// both predictors are evaluated on the held-out block without fixed effects.
pub fn check_lmm_krr_equivalence(
    y: ArrayView1<'_, f64>,
    kernel: &KernelMatrix,
    sigma_g2: f64,
    sigma_e2: f64,
) -> Result<f64> {
    let n = y.len();
    if kernel.n() != n {
        return Err(Error::Dimension(format!(
            "kernel is {}x{} but y has length {n}",
            kernel.n(),
            kernel.n()
        )));
    }
    if !(sigma_g2 > 0.0) {
        return Err(Error::Parameter(format!(
            "sigma_g^2 must be positive, got {sigma_g2}"
        )));
    }
    if !(sigma_e2 >= 0.0) {
        return Err(Error::Parameter(format!(
            "sigma_e^2 must be nonnegative, got {sigma_e2}"
        )));
    }
    let n_test = (n / 5).max(1);
    let n_train = n - n_test;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n).collect();
    let k_train = kernel.principal_submatrix(&train_idx)?;
    let k_cross = kernel.block(&test_idx, &train_idx);
    let y_train = Array1::from_iter(train_idx.iter().map(|&i| y[i]));

    // Mixed-model path.
    let vc = VarianceComponents {
        theta: vec![sigma_e2, sigma_g2],
        beta: Vec::new(),
        constrained: false,
    };
    let blup = blup_fit_predict(y_train.view(), &k_train, k_cross.view(), None, None, &vc)?;

    // Ridge path at lambda = sigma_e^2 / sigma_g^2.
    let lambda = sigma_e2 / sigma_g2;
    let mut system = k_train.values().clone();
    for i in 0..n_train {
        system[[i, i]] += lambda;
    }
    let alpha = linalg::solve_spd(system.view(), y_train.view())?;
    let krr = k_cross.dot(&alpha);

    let gap = blup
        .predictions
        .iter()
        .zip(krr.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(gap)
}

/// Gradient-flow prediction of a kernel regressor trained for time `t` at
/// learning rate `eta`, from a zero initial function:
/// y_hat(t) = K_test_train K_train^{-1} y (1 - exp(-eta t)).
///
/// `allow_pseudo` permits an eigenvalue-floored pseudo-solve when the
/// training kernel is numerically singular.
pub fn ntk_dynamics_predict(
    k_train: &KernelMatrix,
    k_test_train: ArrayView2<'_, f64>,
    y_train: ArrayView1<'_, f64>,
    eta: f64,
    t: f64,
    allow_pseudo: bool,
) -> Result<Array1<f64>> {
    let n = y_train.len();
    if k_train.n() != n {
        return Err(Error::Dimension(format!(
            "training kernel is {}x{} but y has length {n}",
            k_train.n(),
            k_train.n()
        )));
    }
    if k_test_train.ncols() != n {
        return Err(Error::Dimension(format!(
            "cross kernel has {} columns but there are {n} training samples",
            k_test_train.ncols()
        )));
    }
    if !(eta > 0.0) {
        return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
    }
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("t must be nonnegative, got {t}")));
    }
    let weights = match linalg::cholesky(k_train.values().view()) {
        Some(l) => linalg::cholesky_solve(&l, y_train),
        None if allow_pseudo => linalg::solve_spd(k_train.values().view(), y_train)?,
        None => {
            return Err(Error::Numeric(
                "training kernel is singular; enable the pseudo-inverse to proceed".into(),
            ))
        }
    };
    // 1 - exp(-eta t), exactly 0 at t = 0.
    let factor = -(-eta * t).exp_m1();
    Ok(k_test_train.dot(&weights).mapv(|v| v * factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genodata::simulate_genotypes;
    use crate::kernels::{grm_kernel, KernelKind};
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand::SeedableRng;

    fn random_pd_kernel(n: usize, seed: u64) -> KernelMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Array2::<f64>::zeros((n, n + 3));
        for v in b.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut k = b.dot(&b.t());
        for i in 0..n {
            k[[i, i]] += 0.5;
        }
        crate::linalg::symmetrize(&mut k);
        KernelMatrix::new(k, KernelKind::Grm).unwrap()
    }

    #[test]
    fn blup_interpolates_at_zero_ridge() {
        // theta_0 = 0, test = train, invertible kernel, no covariates.
        let k = random_pd_kernel(6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Array1::from_iter((0..6).map(|_| rng.gen_range(-2.0..2.0f64)));
        let idx: Vec<usize> = (0..6).collect();
        let cross = k.block(&idx, &idx);
        let vc = VarianceComponents {
            theta: vec![0.0, 1.5],
            beta: vec![],
            constrained: true,
        };
        let out = blup_fit_predict(y.view(), &k, cross.view(), None, None, &vc).unwrap();
        for (p, t) in out.predictions.iter().zip(y.iter()) {
            assert!((p - t).abs() < 1e-8, "prediction {p} vs target {t}");
        }
        assert!(!out.fixed_effects_only);
    }

    #[test]
    fn blup_zero_genetic_variance_returns_fixed_effects() {
        let k = random_pd_kernel(5, 3);
        let y = array![1.0, 2.0, 3.0, 4.0, 5.0];
        let z_train = Array2::from_elem((5, 1), 1.0);
        let z_test = Array2::from_elem((2, 1), 1.0);
        let cross = k.block(&[0, 1], &[0, 1, 2, 3, 4]);
        let vc = VarianceComponents {
            theta: vec![1.0, 0.0],
            beta: vec![3.0], // intercept = mean(y)
            constrained: true,
        };
        let out = blup_fit_predict(
            y.view(),
            &k,
            cross.view(),
            Some(z_train.view()),
            Some(z_test.view()),
            &vc,
        )
        .unwrap();
        assert!(out.fixed_effects_only);
        for p in out.predictions.iter() {
            assert!((p - 3.0).abs() < 1e-12);
        }
    }

    // Dense oracle: direct solve of the lambda-form system, predictions
    // assembled by explicit loops.
    fn blup_oracle(
        y: &Array1<f64>,
        k_train: &Array2<f64>,
        k_cross: &Array2<f64>,
        theta_e: f64,
        theta_g: f64,
    ) -> Array1<f64> {
        let n = y.len();
        let lambda = theta_e / theta_g;
        let mut system = k_train.clone();
        for i in 0..n {
            system[[i, i]] += lambda;
        }
        let alpha = crate::linalg::solve_dense(system.view(), y.view()).unwrap();
        let mut out = Array1::<f64>::zeros(k_cross.nrows());
        for r in 0..k_cross.nrows() {
            let mut acc = 0.0;
            for c in 0..n {
                acc += k_cross[[r, c]] * alpha[c];
            }
            out[r] = acc;
        }
        out
    }

    #[test]
    fn blup_matches_dense_lambda_form_oracle() {
        // Five-sample GRM system; the theta-form and lambda-form solves are
        // algebraically equal and must agree numerically.
        let g = simulate_genotypes(8, 3, (0.2, 0.5), 1.0, 42).unwrap();
        let k = grm_kernel(&g).unwrap();
        let train: Vec<usize> = (0..5).collect();
        let test: Vec<usize> = (5..8).collect();
        let k_train = k.principal_submatrix(&train).unwrap();
        let k_cross = k.block(&test, &train);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = Array1::from_iter((0..5).map(|_| rng.gen_range(-2.0..2.0f64)));
        let (theta_e, theta_g) = (0.7, 1.3);
        let vc = VarianceComponents {
            theta: vec![theta_e, theta_g],
            beta: vec![],
            constrained: false,
        };
        let fast = blup_fit_predict(y.view(), &k_train, k_cross.view(), None, None, &vc)
            .unwrap()
            .predictions;
        let oracle = blup_oracle(&y, k_train.values(), &k_cross, theta_e, theta_g);
        for (a, b) in fast.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs oracle {b}");
        }
    }

    #[test]
    fn blup_shifts_with_intercept() {
        // Adding a constant to y with an intercept design shifts predictions
        // by exactly that constant.
        let g = simulate_genotypes(12, 4, (0.2, 0.5), 1.0, 11).unwrap();
        let k = grm_kernel(&g).unwrap();
        let train: Vec<usize> = (0..9).collect();
        let test: Vec<usize> = (9..12).collect();
        let k_train = k.principal_submatrix(&train).unwrap();
        let k_cross = k.block(&test, &train);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = Array1::from_iter((0..9).map(|_| rng.gen_range(-1.0..1.0f64)));
        let y_mean = y.sum() / 9.0;
        let shift = 4.25;
        let z_train = Array2::from_elem((9, 1), 1.0);
        let z_test = Array2::from_elem((3, 1), 1.0);
        let vc_a = VarianceComponents {
            theta: vec![0.5, 1.0],
            beta: vec![y_mean],
            constrained: true,
        };
        let vc_b = VarianceComponents {
            theta: vec![0.5, 1.0],
            beta: vec![y_mean + shift],
            constrained: true,
        };
        let shifted_y = y.mapv(|v| v + shift);
        let a = blup_fit_predict(
            y.view(),
            &k_train,
            k_cross.view(),
            Some(z_train.view()),
            Some(z_test.view()),
            &vc_a,
        )
        .unwrap()
        .predictions;
        let b = blup_fit_predict(
            shifted_y.view(),
            &k_train,
            k_cross.view(),
            Some(z_train.view()),
            Some(z_test.view()),
            &vc_b,
        )
        .unwrap()
        .predictions;
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((y - x - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn cv_folds_partition_and_are_deterministic() {
        let folds = cv_folds(11, 3, 7);
        assert_eq!(folds.len(), 3);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(folds[0].len(), 4);
        assert_eq!(folds[1].len(), 4);
        assert_eq!(folds[2].len(), 3);
        assert_eq!(cv_folds(11, 3, 7), folds);
        assert_ne!(cv_folds(11, 3, 8), folds);
    }

    #[test]
    fn krr_identity_kernel_closed_form() {
        // On K = I all candidates tie (validation blocks are zero), so the
        // smallest lambda wins and alpha = y / (1 + lambda*).
        let n = 10;
        let k = KernelMatrix::new(Array2::eye(n), KernelKind::Grm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = Array1::from_iter((0..n).map(|_| rng.gen_range(-2.0..2.0f64)));
        let (fit, report) = krr_fit(y.view(), &k, &CvPlan::default()).unwrap();
        assert_eq!(fit.lambda, 0.001);
        assert_eq!(report.lambda_star, 0.001);
        for (a, t) in fit.alpha.iter().zip(y.iter()) {
            assert!((a - t / 1.001).abs() < 1e-12);
        }
        // Direct-formula check of the in-sample ridge MSE monotonicity that
        // justifies preferring small lambda on the identity kernel:
        // residual = y * lambda/(1+lambda), so MSE grows with lambda.
        let mse = |lambda: f64| {
            let shrink = lambda / (1.0 + lambda);
            y.iter().map(|v| (v * shrink).powi(2)).sum::<f64>() / n as f64
        };
        assert!(mse(0.001) < mse(0.01));
        assert!(mse(0.01) < mse(10.0));
    }

    #[test]
    fn krr_cv_mse_matches_from_scratch_recomputation() {
        let g = simulate_genotypes(20, 6, (0.2, 0.5), 1.0, 9).unwrap();
        let k = grm_kernel(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = Array1::from_iter((0..20).map(|_| rng.gen_range(-2.0..2.0f64)));
        let plan = CvPlan {
            k: 4,
            grid: vec![0.01, 0.1, 1.0],
            seed: 3,
        };
        let (_, report) = krr_fit(y.view(), &k, &plan).unwrap();
        // Recompute each fold MSE independently on the same fold assignment.
        let folds = cv_folds(20, 4, 3);
        for entry in &report.entries {
            for (f, fold) in folds.iter().enumerate() {
                let train_idx: Vec<usize> = (0..20).filter(|i| !fold.contains(i)).collect();
                let mut system = k.block(&train_idx, &train_idx);
                for i in 0..train_idx.len() {
                    system[[i, i]] += entry.lambda;
                }
                let y_tr = Array1::from_iter(train_idx.iter().map(|&i| y[i]));
                let alpha = crate::linalg::solve_dense(system.view(), y_tr.view()).unwrap();
                let cross = k.block(fold, &train_idx);
                let pred = cross.dot(&alpha);
                let mse = fold
                    .iter()
                    .zip(pred.iter())
                    .map(|(&i, &p)| (y[i] - p) * (y[i] - p))
                    .sum::<f64>()
                    / fold.len() as f64;
                assert!(
                    (mse - entry.fold_mse[f]).abs() < 1e-12,
                    "lambda {} fold {f}: {mse} vs {}",
                    entry.lambda,
                    entry.fold_mse[f]
                );
            }
        }
    }

    #[test]
    fn krr_single_candidate_grid_is_selected() {
        let k = random_pd_kernel(8, 12);
        let y = Array1::from_iter((0..8).map(|i| i as f64 / 4.0 - 1.0));
        let plan = CvPlan {
            k: 2,
            grid: vec![0.37],
            seed: 0,
        };
        let (fit, report) = krr_fit(y.view(), &k, &plan).unwrap();
        assert_eq!(fit.lambda, 0.37);
        assert_eq!(report.entries.len(), 1);
    }

    #[test]
    fn krr_huge_lambda_shrinks_predictions() {
        let k = random_pd_kernel(10, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y = Array1::from_iter((0..10).map(|_| rng.gen_range(-2.0..2.0f64)));
        let plan = CvPlan {
            k: 2,
            grid: vec![1e6],
            seed: 1,
        };
        let (fit, _) = krr_fit(y.view(), &k, &plan).unwrap();
        let cross = k.block(&[0, 1, 2], &(0..10).collect::<Vec<_>>());
        let pred = krr_predict(&fit, cross.view()).unwrap();
        let cross_norm = cross.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pred_norm = pred.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(pred_norm <= cross_norm * y_norm / 1e6 + 1e-12);
    }

    #[test]
    fn krr_predict_zero_cross_kernel_gives_zero() {
        let k = random_pd_kernel(6, 30);
        let y = Array1::from_elem(6, 1.0);
        let plan = CvPlan {
            k: 2,
            grid: vec![0.5],
            seed: 0,
        };
        let (fit, _) = krr_fit(y.view(), &k, &plan).unwrap();
        let zero = Array2::<f64>::zeros((4, 6));
        let pred = krr_predict(&fit, zero.view()).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn krr_predict_checks_shapes_and_kind() {
        let k = random_pd_kernel(5, 31);
        let y = Array1::from_elem(5, 1.0);
        let (fit, _) = krr_fit(
            y.view(),
            &k,
            &CvPlan {
                k: 2,
                grid: vec![1.0],
                seed: 0,
            },
        )
        .unwrap();
        let wrong = Array2::<f64>::zeros((2, 4));
        assert!(krr_predict(&fit, wrong.view()).is_err());
        let mut lmm_fit = fit;
        lmm_fit.kind = PredictorKind::LmmBlup;
        assert!(krr_predict(&lmm_fit, Array2::<f64>::zeros((2, 5)).view()).is_err());
    }

    #[test]
    fn equivalence_gap_identity_kernel_is_zero() {
        let k = KernelMatrix::new(Array2::eye(10), KernelKind::Grm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let y = Array1::from_iter((0..10).map(|_| rng.gen_range(-2.0..2.0f64)));
        let gap = check_lmm_krr_equivalence(y.view(), &k, 2.0, 1.0).unwrap();
        assert!(gap < 1e-14);
    }

    #[test]
    fn equivalence_gap_zero_noise() {
        let k = random_pd_kernel(15, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let y = Array1::from_iter((0..15).map(|_| rng.gen_range(-2.0..2.0f64)));
        let gap = check_lmm_krr_equivalence(y.view(), &k, 1.5, 0.0).unwrap();
        assert!(gap < 1e-9, "gap {gap}");
    }

    #[test]
    fn equivalence_gap_random_grm_instance() {
        let g = simulate_genotypes(20, 8, (0.1, 0.5), 1.0, 71).unwrap();
        let k = grm_kernel(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y = Array1::from_iter((0..20).map(|_| rng.gen_range(-2.0..2.0f64)));
        let gap = check_lmm_krr_equivalence(y.view(), &k, 2.0, 1.0).unwrap();
        let bound = 1e-9 * (1.0 + y.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
        assert!(gap < bound, "gap {gap} vs bound {bound}");
    }

    #[test]
    fn dynamics_zero_time_gives_zero() {
        let k = random_pd_kernel(6, 60);
        let y = Array1::from_elem(6, 2.0);
        let cross = k.block(&[0, 1], &(0..6).collect::<Vec<_>>());
        let pred = ntk_dynamics_predict(&k, cross.view(), y.view(), 0.5, 0.0, false).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dynamics_long_time_matches_interpolating_krr() {
        let k = random_pd_kernel(8, 61);
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let y = Array1::from_iter((0..8).map(|_| rng.gen_range(-2.0..2.0f64)));
        let test_idx: Vec<usize> = vec![0, 3, 5];
        let train_idx: Vec<usize> = (0..8).collect();
        let cross = k.block(&test_idx, &train_idx);
        let limit = ntk_dynamics_predict(&k, cross.view(), y.view(), 1.0, 1e9, false).unwrap();
        // lambda = 0 ridge: K_cross K^{-1} y.
        let l = crate::linalg::cholesky(k.values().view()).unwrap();
        let alpha = crate::linalg::cholesky_solve(&l, y.view());
        let krr0 = cross.dot(&alpha);
        for (a, b) in limit.iter().zip(krr0.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dynamics_is_monotone_toward_the_limit() {
        let k = random_pd_kernel(7, 63);
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let y = Array1::from_iter((0..7).map(|_| rng.gen_range(-2.0..2.0f64)));
        let cross = k.block(&[1, 4], &(0..7).collect::<Vec<_>>());
        let limit = ntk_dynamics_predict(&k, cross.view(), y.view(), 0.7, 1e9, false).unwrap();
        let mut previous_progress = vec![0.0; limit.len()];
        for step in 1..=20 {
            let t = step as f64 * 0.4;
            let pred = ntk_dynamics_predict(&k, cross.view(), y.view(), 0.7, t, false).unwrap();
            for (i, (p, lim)) in pred.iter().zip(limit.iter()).enumerate() {
                // Progress toward the limit, as a signed fraction.
                let progress = if lim.abs() > 1e-12 { p / lim } else { 0.0 };
                assert!(progress >= previous_progress[i] - 1e-12);
                assert!(progress <= 1.0 + 1e-12);
                previous_progress[i] = progress;
            }
        }
    }

    #[test]
    fn dynamics_singular_kernel_requires_pseudo_flag() {
        let rank1 = KernelMatrix::new(Array2::from_elem((4, 4), 1.0), KernelKind::Grm).unwrap();
        let y = array![1.0, 1.0, 1.0, 1.0];
        let cross = Array2::from_elem((2, 4), 1.0);
        assert!(ntk_dynamics_predict(&rank1, cross.view(), y.view(), 1.0, 1.0, false).is_err());
        let pred = ntk_dynamics_predict(&rank1, cross.view(), y.view(), 1.0, 1e9, true).unwrap();
        // Consistent system: predictions approach K_cross K^+ y = 1.
        for p in pred.iter() {
            assert!((p - 1.0).abs() < 1e-6, "prediction {p}");
        }
    }
}
