//! MINQUE estimation of variance components for linear mixed models.
//!
//! The model is y = Z beta + u + e with u ~ N(0, sum_k theta_k K_k) and
//! e ~ N(0, theta_0 I). Estimation solves the trace system
//! C theta = u with C_ij = tr(P V_i P V_j) and u_i = r' P V_i P r, where
//! V_0 = I, V_i are the kernels, P projects out the fixed effects through
//! the working covariance V, and r are the fixed-effect residuals. MINQUE0
//! performs a single solve under prior weights; MINQUE1 re-solves with the
//! estimated weights. Fixed effects default to ordinary least squares with a
//! generalized-least-squares option.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genodata::{CovariateDesign, PhenotypeVector};
use crate::kernels::KernelMatrix;
use crate::linalg;

/// Estimated variance components and fixed-effect coefficients.
///
/// `theta[0]` is always the residual component; `theta[k]` for k >= 1 pairs
/// with the k-th kernel passed to [`minque_fit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    /// Whether the nonnegativity clamp was applied to `theta`.
    pub constrained: bool,
}

impl VarianceComponents {
    pub fn residual(&self) -> f64 {
        self.theta[0]
    }

    /// Ridge value theta_0 / theta_1 for single-kernel fits.
    pub fn lambda_hat(&self) -> Option<f64> {
        if self.theta.len() == 2 && self.theta[1] > 0.0 {
            Some(self.theta[0] / self.theta[1])
        } else {
            None
        }
    }
}

/// MINQUE flavor: fixed prior weights or iterative re-weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinqueVariant {
    Minque0,
    Minque1,
}

/// Estimation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinqueSpec {
    pub variant: MinqueVariant,
    /// Re-weighted passes after the initial solve (MINQUE1 only).
    pub max_iter: usize,
    /// Clamp negative components to zero.
    pub constrain: bool,
    /// Prior weights on [I, K_1, ..., K_R]; defaults to all ones.
    pub prior_weights: Option<Vec<f64>>,
    /// Estimate beta by GLS instead of OLS.
    pub gls_beta: bool,
}

impl Default for MinqueSpec {
    fn default() -> Self {
        Self {
            variant: MinqueVariant::Minque0,
            max_iter: 1,
            constrain: true,
            prior_weights: None,
            gls_beta: false,
        }
    }
}

impl MinqueSpec {
    pub fn minque1() -> Self {
        Self {
            variant: MinqueVariant::Minque1,
            ..Self::default()
        }
    }
}

/// Full fit output: final components, unclamped estimates, and the
/// conditioning of the trace system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinqueFit {
    pub components: VarianceComponents,
    /// Unclamped estimates from the final pass.
    pub raw_theta: Vec<f64>,
    /// Condition number of the final trace matrix C.
    pub condition_number: f64,
}

impl MinqueFit {
    pub fn report(&self) -> MinqueReport {
        MinqueReport {
            theta: self.components.theta.clone(),
            raw_theta: self.raw_theta.clone(),
            beta: self.components.beta.clone(),
            lambda_hat: self.components.lambda_hat(),
            condition_number: self.condition_number,
            constrained: self.components.constrained,
        }
    }
}

/// JSON-friendly fit report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinqueReport {
    pub theta: Vec<f64>,
    pub raw_theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda_hat: Option<f64>,
    pub condition_number: f64,
    pub constrained: bool,
}

/// Default relative eigenvalue floor for the positive-definite repair.
pub const NEAR_PD_FLOOR: f64 = 1e-10;

/// Estimates variance components by MINQUE.
pub fn minque_fit(
    y: &PhenotypeVector,
    kernels: &[KernelMatrix],
    covariates: Option<&CovariateDesign>,
    spec: &MinqueSpec,
) -> Result<MinqueFit> {
    let n = y.len();
    if n < 2 {
        return Err(Error::Dimension("need at least two samples".into()));
    }
    for (k, kernel) in kernels.iter().enumerate() {
        if kernel.n() != n {
            return Err(Error::Dimension(format!(
                "kernel {k} is {}x{} but y has length {n}",
                kernel.n(),
                kernel.n()
            )));
        }
    }
    if let Some(z) = covariates {
        if z.n_samples() != n {
            return Err(Error::Dimension(format!(
                "covariate design has {} rows but y has length {n}",
                z.n_samples()
            )));
        }
    }
    if spec.max_iter < 1 {
        return Err(Error::Parameter("max_iter must be at least 1".into()));
    }
    let n_components = 1 + kernels.len();
    let mut weights = match &spec.prior_weights {
        Some(w) => {
            if w.len() != n_components {
                return Err(Error::Parameter(format!(
                    "prior_weights has length {}, expected {n_components}",
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter("prior_weights must be finite".into()));
            }
            w.clone()
        }
        None => vec![1.0; n_components],
    };

    let passes = match spec.variant {
        MinqueVariant::Minque0 => 1,
        MinqueVariant::Minque1 => 1 + spec.max_iter,
    };

    let yv = y.values();
    let mut raw_theta = vec![0.0; n_components];
    let mut theta = vec![0.0; n_components];
    let mut beta = Vec::new();
    let mut condition = f64::INFINITY;
    for _pass in 0..passes {
        // Working covariance under the current weights, repaired to positive
        // definite only when a Cholesky factorization fails.
        let mut v = Array2::<f64>::eye(n) * weights[0];
        for (k, kernel) in kernels.iter().enumerate() {
            v.scaled_add(weights[k + 1], kernel.values());
        }
        let v = if linalg::cholesky(v.view()).is_some() {
            v
        } else {
            near_pd(v.view(), NEAR_PD_FLOOR)?
        };
        let l = linalg::cholesky(v.view()).ok_or_else(|| {
            Error::Numeric("working covariance not positive definite after repair".into())
        })?;
        let vinv = linalg::cholesky_inverse(&l);

        let projection = projection_matrix(&vinv, covariates)?;
        beta = match covariates {
            Some(z) => {
                if spec.gls_beta {
                    gls_beta(&vinv, z, yv)?
                } else {
                    ols_beta(z, yv)?
                }
            }
            None => Vec::new(),
        };
        let residuals = match covariates {
            Some(z) => yv - &z.values().dot(&Array1::from(beta.clone())),
            None => yv.clone(),
        };

        // Projected residuals and the quadratic forms u_i = q' V_i q.
        let q = projection.dot(&residuals);
        let mut u = Array1::<f64>::zeros(n_components);
        u[0] = q.dot(&q);
        for (k, kernel) in kernels.iter().enumerate() {
            u[k + 1] = q.dot(&kernel.values().dot(&q));
        }

        // Trace matrix over M_i = P V_i; tr(M_i M_j) via elementwise sums.
        let mut m_mats: Vec<Array2<f64>> = Vec::with_capacity(n_components);
        m_mats.push(projection.clone());
        for kernel in kernels {
            m_mats.push(projection.dot(kernel.values()));
        }
        let mut c = Array2::<f64>::zeros((n_components, n_components));
        for i in 0..n_components {
            for j in i..n_components {
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        acc += m_mats[i][[a, b]] * m_mats[j][[b, a]];
                    }
                }
                c[[i, j]] = acc;
                c[[j, i]] = acc;
            }
        }

        let solved = linalg::solve_dense(c.view(), u.view()).map_err(|e| {
            Error::IllPosed(format!("trace system C theta = u could not be solved ({e})"))
        })?;
        raw_theta = solved.to_vec();
        theta = if spec.constrain {
            raw_theta.iter().map(|&t| t.max(0.0)).collect()
        } else {
            raw_theta.clone()
        };
        weights = theta.clone();
        condition = linalg::sym_condition_number(c.view())?;
    }

    Ok(MinqueFit {
        components: VarianceComponents {
            theta,
            beta,
            constrained: spec.constrain,
        },
        raw_theta,
        condition_number: condition,
    })
}

/// P = V^{-1} - V^{-1} Z (Z' V^{-1} Z)^{-1} Z' V^{-1} when covariates are
/// present, else V^{-1}. Exactly symmetric.
pub(crate) fn projection_matrix(
    vinv: &Array2<f64>,
    covariates: Option<&CovariateDesign>,
) -> Result<Array2<f64>> {
    let Some(z) = covariates else {
        return Ok(vinv.clone());
    };
    let zt_vinv = z.values().t().dot(vinv); // q x n
    let small = zt_vinv.dot(z.values()); // q x q, symmetric PD for full-rank Z
    let small_inv = invert_small(small.view()).map_err(|_| {
        Error::RankDeficient("Z' V^{-1} Z is singular; covariates are collinear".into())
    })?;
    let mut p = vinv - &zt_vinv.t().dot(&small_inv).dot(&zt_vinv);
    linalg::symmetrize(&mut p);
    Ok(p)
}

fn invert_small(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let q = a.nrows();
    let mut inv = Array2::<f64>::zeros((q, q));
    let mut unit = Array1::<f64>::zeros(q);
    for j in 0..q {
        unit.fill(0.0);
        unit[j] = 1.0;
        let col = linalg::solve_dense(a, unit.view())?;
        inv.column_mut(j).assign(&col);
    }
    linalg::symmetrize(&mut inv);
    Ok(inv)
}

fn ols_beta(z: &CovariateDesign, y: &Array1<f64>) -> Result<Vec<f64>> {
    let gram = z.values().t().dot(z.values());
    let rhs = z.values().t().dot(y);
    let l = linalg::cholesky(gram.view())
        .ok_or_else(|| Error::RankDeficient("Z' Z is singular".into()))?;
    Ok(linalg::cholesky_solve(&l, rhs.view()).to_vec())
}

fn gls_beta(vinv: &Array2<f64>, z: &CovariateDesign, y: &Array1<f64>) -> Result<Vec<f64>> {
    let zt_vinv = z.values().t().dot(vinv);
    let gram = zt_vinv.dot(z.values());
    let rhs = zt_vinv.dot(y);
    let sol = linalg::solve_dense(gram.view(), rhs.view()).map_err(|_| {
        Error::RankDeficient("Z' V^{-1} Z is singular; covariates are collinear".into())
    })?;
    Ok(sol.to_vec())
}

/// Repairs a symmetric matrix to positive definite by eigenvalue flooring.
///
/// Eigenvalues are clamped to at least `floor * lambda_max` (or `floor`
/// itself when no eigenvalue is positive) and the matrix is reconstructed in
/// the same eigenbasis.
pub fn near_pd(a: ArrayView2<'_, f64>, floor: f64) -> Result<Array2<f64>> {
    if !(floor > 0.0) {
        return Err(Error::Parameter(format!("floor must be positive, got {floor}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("near_pd input has non-finite entries".into()));
    }
    let (w, v) = linalg::sym_eigen(a)?;
    let lam_max = w.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
    let threshold = if lam_max > 0.0 { floor * lam_max } else { floor };
    let clamped = Array1::from_iter(w.iter().map(|&lam| lam.max(threshold)));
    // Reconstruct V diag(w) V'.
    let mut scaled = v.clone();
    for (mut col, &lam) in scaled.columns_mut().into_iter().zip(clamped.iter()) {
        col.mapv_inplace(|x| x * lam);
    }
    let mut out = scaled.dot(&v.t());
    linalg::symmetrize(&mut out);
    Ok(out)
}
