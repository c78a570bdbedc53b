//! Closed-form kernels: the genomic relationship matrix and the analytic
//! infinite-width ReLU NTK.
//!
//! The analytic NTK follows the layerwise arc-cosine recursion. With the
//! network scaling used by [`crate::ntk`] (a `sqrt(2/m)` factor after each
//! hidden ReLU), the matching normalization constant is `c_sigma = 2`, which
//! also keeps the kernel diagonal stable across depth. Setting `c_sigma = 1`
//! reproduces the unscaled closed forms.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genodata::GenotypeMatrix;
use crate::linalg;

/// Provenance of a kernel matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Grm,
    NtkAnalytic,
    NtkEmpirical,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KernelKind::Grm => "grm",
            KernelKind::NtkAnalytic => "ntk_analytic",
            KernelKind::NtkEmpirical => "ntk_empirical",
        };
        f.write_str(s)
    }
}

/// Symmetric similarity matrix with provenance tag.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: Array2<f64>,
    kind: KernelKind,
}

impl KernelMatrix {
    /// Validates squareness, finiteness, and symmetry
    /// (|K_ij - K_ji| <= 1e-12 * max(1, |K_ij|)).
    pub fn new(values: Array2<f64>, kind: KernelKind) -> Result<Self> {
        let (n, m) = values.dim();
        if n != m {
            return Err(Error::Dimension(format!(
                "kernel matrix must be square, got {n}x{m}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("kernel matrix has non-finite entries".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let a = values[[i, j]];
                let b = values[[j, i]];
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::Numeric(format!(
                        "kernel matrix is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Principal submatrix on the given sample indices.
    pub fn principal_submatrix(&self, idx: &[usize]) -> Result<KernelMatrix> {
        let sel = self.values.select(Axis(0), idx).select(Axis(1), idx);
        KernelMatrix::new(sel, self.kind)
    }

    /// Rectangular block K[rows, cols].
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        self.values.select(Axis(0), rows).select(Axis(1), cols)
    }

    /// Smallest and largest eigenvalues, for PSD checks.
    pub fn eigen_range(&self) -> Result<(f64, f64)> {
        linalg::eigen_range(self.values.view())
    }
}

/// Architecture of the infinite-width network behind the analytic NTK.
///
/// `depth` counts layers the way the empirical network does: depth 2 is one
/// hidden ReLU layer plus the linear output.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NtkArchitecture {
    pub depth: usize,
    pub c_sigma: f64,
}

impl NtkArchitecture {
    pub fn new(depth: usize, c_sigma: f64) -> Result<Self> {
        if depth < 2 {
            return Err(Error::Parameter(format!(
                "NTK depth must be at least 2, got {depth}"
            )));
        }
        if !(c_sigma > 0.0) {
            return Err(Error::Parameter(format!(
                "c_sigma must be positive, got {c_sigma}"
            )));
        }
        Ok(Self { depth, c_sigma })
    }

    /// ReLU normalization matching the empirical network scaling.
    pub fn with_depth(depth: usize) -> Result<Self> {
        Self::new(depth, 2.0)
    }
}

/// Base-case scaling of the NTK recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseScaling {
    /// Sigma^(0)(x, x') = <x, x'> (matches the empirical pipeline).
    InnerProduct,
    /// Sigma^(0)(x, x') = <x, x'> / p.
    InnerProductOverP,
}

/// Genomic relationship matrix: K_ij = (1/p) sum_k (X_ik-mu_k)(X_jk-mu_k)/sigma_k^2.
///
/// Monomorphic columns contribute zero; the divisor stays the full variant
/// count. Errors if every column is monomorphic.
pub fn grm_kernel(geno: &GenotypeMatrix) -> Result<KernelMatrix> {
    let x = geno.values();
    let (n, p) = x.dim();
    let means = geno.col_means();
    let sds = geno.col_sds();
    if sds.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateKernel(
            "all genotype columns are monomorphic; the GRM would be identically zero".into(),
        ));
    }
    let mut scaled = Array2::<f64>::zeros((n, p));
    for k in 0..p {
        let sd = sds[k];
        if sd == 0.0 {
            continue; // centered monomorphic column is zero anyway
        }
        let mean = means[k];
        for i in 0..n {
            scaled[[i, k]] = (x[[i, k]] - mean) / sd;
        }
    }
    let mut k = scaled.dot(&scaled.t());
    k.mapv_inplace(|v| v / p as f64);
    linalg::symmetrize(&mut k);
    KernelMatrix::new(k, KernelKind::Grm)
}

/// Analytic infinite-width ReLU NTK via the arc-cosine recursion.
///
/// Runs the layer recursion up to `arch.depth - 1` and returns the
/// accumulated tangent kernel. With `normalize` the result is rescaled to a
/// unit diagonal and divided by the variant count, mirroring the empirical
/// pipeline's post-processing.
pub fn ntk_analytic(
    geno: &GenotypeMatrix,
    arch: &NtkArchitecture,
    base: BaseScaling,
    normalize: bool,
) -> Result<KernelMatrix> {
    let x = geno.values();
    let (n, p) = x.dim();
    let c_sigma = arch.c_sigma;
    let layers = arch.depth - 1;

    let base_div = match base {
        BaseScaling::InnerProduct => 1.0,
        BaseScaling::InnerProductOverP => p as f64,
    };
    let mut gram = x.dot(&x.t());
    gram.mapv_inplace(|v| v / base_div);
    linalg::symmetrize(&mut gram);

    // Zero-norm rows make the layer-1 angle undefined.
    for i in 0..n {
        if gram[[i, i]] <= 0.0 {
            return Err(Error::UndefinedAngle { row: i });
        }
    }

    // Diagonal covariance per level: d^(l) = (c_sigma/2) * d^(l-1).
    let mut diag_levels = Vec::with_capacity(layers);
    let mut d0 = Array1::from_iter((0..n).map(|i| gram[[i, i]]));
    diag_levels.push(d0.clone());
    for _ in 1..layers {
        d0.mapv_inplace(|v| 0.5 * c_sigma * v);
        diag_levels.push(d0.clone());
    }

    let mut theta = Array2::<f64>::zeros((n, n));
    // Diagonal entries: angle is exactly zero at every layer.
    for i in 0..n {
        let mut t = diag_levels[0][i];
        for level in diag_levels.iter().take(layers) {
            let sigma_new = 0.5 * c_sigma * level[i];
            t = t * (0.5 * c_sigma) + sigma_new;
        }
        theta[[i, i]] = t;
    }
    // Off-diagonal entries.
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sigma = gram[[i, j]];
            let mut t = sigma;
            for level in diag_levels.iter().take(layers) {
                let dii = level[i];
                let djj = level[j];
                let denom = (dii * djj).sqrt();
                let raw_cos = sigma / denom;
                if raw_cos.abs() > 1.0 + 1e-12 {
                    return Err(Error::Numeric(format!(
                        "cosine overshoot {raw_cos} at pair ({i},{j}) exceeds tolerance"
                    )));
                }
                let cos = raw_cos.clamp(-1.0, 1.0);
                let angle = cos.acos();
                let sigma_new = c_sigma / (2.0 * std::f64::consts::PI)
                    * denom
                    * (angle.sin() + (std::f64::consts::PI - angle) * cos);
                let sigma_dot =
                    c_sigma * (std::f64::consts::PI - angle) / (2.0 * std::f64::consts::PI);
                t = t * sigma_dot + sigma_new;
                sigma = sigma_new;
            }
            theta[[i, j]] = t;
            theta[[j, i]] = t;
        }
    }

    if normalize {
        unit_diagonal_over_p(&mut theta, p);
    }
    KernelMatrix::new(theta, KernelKind::NtkAnalytic)
}

/// Rescales a symmetric kernel to unit diagonal, then divides by the variant
/// count. Diagonal entries are set to exactly 1/p.
pub(crate) fn unit_diagonal_over_p(k: &mut Array2<f64>, p: usize) {
    let n = k.nrows();
    let d: Vec<f64> = (0..n).map(|i| k[[i, i]].sqrt().max(1e-10)).collect();
    let pf = p as f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                k[[i, j]] = 1.0 / pf;
            } else {
                k[[i, j]] = k[[i, j]] / (d[i] * d[j]) / pf;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Naive triple-loop GRM oracle with its own statistics code.
    fn grm_oracle(x: &Array2<f64>) -> Array2<f64> {
        let (n, p) = x.dim();
        let mut means = vec![0.0; p];
        let mut vars = vec![0.0; p];
        for k in 0..p {
            for i in 0..n {
                means[k] += x[[i, k]];
            }
            means[k] /= n as f64;
            for i in 0..n {
                vars[k] += (x[[i, k]] - means[k]).powi(2);
            }
            vars[k] /= n as f64;
        }
        let mut out = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..p {
                    if vars[k] > 0.0 {
                        acc += (x[[i, k]] - means[k]) * (x[[j, k]] - means[k]) / vars[k];
                    }
                }
                out[[i, j]] = acc / p as f64;
            }
        }
        out
    }

    #[test]
    fn grm_two_point_single_snp() {
        let g = GenotypeMatrix::new(array![[0.0], [2.0]]).unwrap();
        let k = grm_kernel(&g).unwrap();
        let expect = array![[1.0, -1.0], [-1.0, 1.0]];
        for (a, b) in k.values().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn grm_rejects_all_monomorphic() {
        let g = GenotypeMatrix::new(array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        match grm_kernel(&g) {
            Err(Error::DegenerateKernel(_)) => {}
            other => panic!("expected degenerate-kernel error, got {other:?}"),
        }
    }

    #[test]
    fn grm_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Array2::<f64>::zeros((6, 4));
        for v in x.iter_mut() {
            *v = rng.gen_range(0..3u8) as f64;
        }
        // Avoid the fully monomorphic corner in this fixture.
        x[[0, 0]] = 0.0;
        x[[1, 0]] = 2.0;
        let g = GenotypeMatrix::new(x.clone()).unwrap();
        let k = grm_kernel(&g).unwrap();
        let oracle = grm_oracle(&x);
        for (a, b) in k.values().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grm_trace_over_n_is_one_for_polymorphic() {
        let g = crate::genodata::simulate_genotypes(30, 10, (0.2, 0.5), 1.0, 77).unwrap();
        let k = grm_kernel(&g).unwrap();
        let trace: f64 = (0..k.n()).map(|i| k.values()[[i, i]]).sum();
        assert!((trace / k.n() as f64 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn grm_is_psd_and_bitwise_symmetric() {
        let g = crate::genodata::simulate_genotypes(20, 6, (0.1, 0.5), 0.7, 21).unwrap();
        let k = grm_kernel(&g).unwrap();
        for i in 0..k.n() {
            for j in 0..k.n() {
                assert_eq!(
                    k.values()[[i, j]].to_bits(),
                    k.values()[[j, i]].to_bits()
                );
            }
        }
        let (lo, hi) = k.eigen_range().unwrap();
        assert!(lo >= -1e-8 * hi.max(1e-300), "lambda_min {lo}, lambda_max {hi}");
    }

    #[test]
    fn ntk_identical_unit_vectors_depth_two() {
        // Hand evaluation at angle 0: Sigma^(1) = 1, Sigma_dot^(1) = 1,
        // Theta = 1*1 + 1 = 2.
        let g = GenotypeMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let arch = NtkArchitecture::with_depth(2).unwrap();
        let k = ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false).unwrap();
        for v in k.values().iter() {
            assert!((v - 2.0).abs() < 1e-12, "entry {v}");
        }
    }

    #[test]
    fn ntk_orthogonal_unit_vectors_depth_two() {
        // Hand evaluation at angle pi/2: Theta = 1/pi.
        let g = GenotypeMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let arch = NtkArchitecture::with_depth(2).unwrap();
        let k = ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false).unwrap();
        let expect = 1.0 / std::f64::consts::PI;
        assert!((k.values()[[0, 1]] - expect).abs() < 1e-12);
        assert!((k.values()[[0, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ntk_antipodal_unit_vectors_vanish() {
        let g = GenotypeMatrix::new(array![[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let arch = NtkArchitecture::with_depth(2).unwrap();
        let k = ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false).unwrap();
        assert!(k.values()[[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn ntk_monotone_in_angle() {
        // Off-diagonal Theta is non-increasing in the angle over [0, 3pi/4].
        // (Near pi the exact recursion turns back up for depth >= 3: the
        // layer-2 angle arccos(Sigma^(1)) approaches pi/2, so the Sigma term
        // re-enters; the global maximum at angle 0 still holds and is checked
        // over the full interval below.)
        for depth in [2usize, 3, 4] {
            let arch = NtkArchitecture::with_depth(depth).unwrap();
            let mut last = f64::INFINITY;
            for step in 0..=18 {
                let angle = 0.75 * std::f64::consts::PI * step as f64 / 18.0;
                let g =
                    GenotypeMatrix::new(array![[1.0, 0.0], [angle.cos(), angle.sin()]]).unwrap();
                let k = ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false).unwrap();
                let v = k.values()[[0, 1]];
                assert!(
                    v <= last + 1e-12,
                    "depth {depth}: Theta increased from {last} to {v} at angle {angle}"
                );
                last = v;
            }
            // Full-interval sanity: aligned inputs maximize the kernel.
            let at_zero = {
                let g = GenotypeMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
                ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false).unwrap().values()[[0, 1]]
            };
            for step in 0..=24 {
                let angle = std::f64::consts::PI * step as f64 / 24.0;
                let g =
                    GenotypeMatrix::new(array![[1.0, 0.0], [angle.cos(), angle.sin()]]).unwrap();
                let k = ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false).unwrap();
                assert!(k.values()[[0, 1]] <= at_zero + 1e-12);
            }
        }
    }

    #[test]
    fn ntk_near_collinear_rows_are_clamped_not_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // Second row differs by a relative perturbation near roundoff.
            let b: Vec<f64> = a.iter().map(|v| v * (1.0 + 1e-15)).collect();
            let mut x = Array2::<f64>::zeros((2, 5));
            for k in 0..5 {
                x[[0, k]] = a[k];
                x[[1, k]] = b[k];
            }
            let g = GenotypeMatrix::new(x).unwrap();
            let arch = NtkArchitecture::with_depth(3).unwrap();
            let k = ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false).unwrap();
            assert!(k.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn ntk_zero_norm_row_is_an_error() {
        let g = GenotypeMatrix::new(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let arch = NtkArchitecture::with_depth(2).unwrap();
        match ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false) {
            Err(Error::UndefinedAngle { row }) => assert_eq!(row, 1),
            other => panic!("expected undefined-angle error, got {other:?}"),
        }
    }

    #[test]
    fn ntk_base_scaling_over_p_matches_unit_norm_case() {
        // Rows of ones have <x,x>/p = 1, reproducing the unit-norm diagonal.
        let g = GenotypeMatrix::new(array![[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0]]).unwrap();
        let arch = NtkArchitecture::with_depth(2).unwrap();
        let k = ntk_analytic(&g, &arch, BaseScaling::InnerProductOverP, false).unwrap();
        assert!((k.values()[[0, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ntk_c_sigma_one_reproduces_unscaled_forms() {
        // With c_sigma = 1 and unit inputs: Sigma^(1) = 1/2, Sigma_dot = 1/2,
        // Theta = 1 * 1/2 + 1/2 = 1 on the diagonal.
        let g = GenotypeMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let arch = NtkArchitecture::new(2, 1.0).unwrap();
        let k = ntk_analytic(&g, &arch, BaseScaling::InnerProduct, false).unwrap();
        assert!((k.values()[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ntk_normalized_diagonal_is_one_over_p() {
        let g = crate::genodata::simulate_genotypes(8, 5, (0.1, 0.5), 1.0, 3).unwrap();
        let (g, _) = crate::genodata::standardize(&g, crate::genodata::StandardizeMode::CenterOnly)
            .unwrap();
        let arch = NtkArchitecture::with_depth(3).unwrap();
        let k = ntk_analytic(&g, &arch, BaseScaling::InnerProduct, true).unwrap();
        let expect: f64 = 1.0 / 5.0;
        for i in 0..k.n() {
            assert_eq!(k.values()[[i, i]].to_bits(), expect.to_bits());
        }
    }

    #[test]
    fn kernel_matrix_rejects_asymmetry() {
        let bad = array![[1.0, 0.5], [0.4, 1.0]];
        assert!(KernelMatrix::new(bad, KernelKind::Grm).is_err());
    }

    #[test]
    fn kernel_blocks_select_expected_entries() {
        let k = KernelMatrix::new(
            array![[1.0, 0.2, 0.3], [0.2, 1.0, 0.4], [0.3, 0.4, 1.0]],
            KernelKind::Grm,
        )
        .unwrap();
        let sub = k.principal_submatrix(&[0, 2]).unwrap();
        assert_eq!(sub.values(), &array![[1.0, 0.3], [0.3, 1.0]]);
        let blk = k.block(&[1], &[0, 2]);
        assert_eq!(blk, array![[0.2, 0.4]]);
    }
}
