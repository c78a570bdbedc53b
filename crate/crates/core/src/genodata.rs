//! Genotype, phenotype, and covariate containers plus synthetic genotype
//! generation.
//!
//! Genotypes are dosage matrices (n individuals x p variants) holding raw
//! counts in {0,1,2} or real values after centering/scaling. Column summary
//! statistics use the population convention (divide by n, not n-1) so that
//! the standardized-genotype product kernel has unit average diagonal.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dosage matrix with per-column summary statistics.
#[derive(Debug, Clone)]
pub struct GenotypeMatrix {
    values: Array2<f64>,
    col_means: Array1<f64>,
    col_sds: Array1<f64>,
    standardized: bool,
}

impl GenotypeMatrix {
    /// Wraps a raw dosage matrix, computing column means and population SDs.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        Self::with_standardized_flag(values, false)
    }

    fn with_standardized_flag(values: Array2<f64>, standardized: bool) -> Result<Self> {
        let (n, p) = values.dim();
        if n < 2 || p < 1 {
            return Err(Error::Dimension(format!(
                "genotype matrix must be at least 2x1, got {n}x{p}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("genotype matrix has non-finite entries".into()));
        }
        let (col_means, col_sds) = column_stats(&values);
        Ok(Self {
            values,
            col_means,
            col_sds,
            standardized,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_variants(&self) -> usize {
        self.values.ncols()
    }

    /// Column means of the current values.
    pub fn col_means(&self) -> &Array1<f64> {
        &self.col_means
    }

    /// Column population standard deviations of the current values.
    pub fn col_sds(&self) -> &Array1<f64> {
        &self.col_sds
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Returns the sub-matrix with the given rows, as a raw genotype matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Result<GenotypeMatrix> {
        let sel = self.values.select(Axis(0), rows);
        GenotypeMatrix::with_standardized_flag(sel, self.standardized)
    }
}

/// Trait values for n individuals.
#[derive(Debug, Clone)]
pub struct PhenotypeVector {
    values: Array1<f64>,
}

impl PhenotypeVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("phenotype vector has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fixed-effect design matrix (n x q), full column rank with q < n.
#[derive(Debug, Clone)]
pub struct CovariateDesign {
    values: Array2<f64>,
}

impl CovariateDesign {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, q) = values.dim();
        if q == 0 || q >= n {
            return Err(Error::Dimension(format!(
                "covariate design must have 0 < q < n, got n={n}, q={q}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("covariate design has non-finite entries".into()));
        }
        // Full-rank check through the Gram matrix: Z has rank q iff ZᵀZ is
        // positive definite.
        let gram = values.t().dot(&values);
        if crate::linalg::cholesky(gram.view()).is_none() {
            return Err(Error::RankDeficient(
                "covariate design columns are linearly dependent".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Intercept-only design: a single column of ones.
    pub fn intercept(n: usize) -> Result<Self> {
        Self::new(Array2::from_elem((n, 1), 1.0))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Array2<f64> {
        self.values.select(Axis(0), rows)
    }
}

/// Column standardization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    /// Subtract the column mean.
    CenterOnly,
    /// Subtract the column mean and divide by the population SD.
    CenterScale,
}

/// Centers (and optionally scales) genotype columns.
///
/// Monomorphic columns (zero variance) are centered, left unscaled, and their
/// indices returned alongside the standardized matrix.
pub fn standardize(
    geno: &GenotypeMatrix,
    mode: StandardizeMode,
) -> Result<(GenotypeMatrix, Vec<usize>)> {
    if geno.is_standardized() {
        return Err(Error::Parameter(
            "genotype matrix is already standardized".into(),
        ));
    }
    let mut out = geno.values.clone();
    let mut monomorphic = Vec::new();
    for (k, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let mean = geno.col_means[k];
        let sd = geno.col_sds[k];
        if sd > 0.0 && mode == StandardizeMode::CenterScale {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.mapv_inplace(|v| v - mean);
            if sd == 0.0 {
                monomorphic.push(k);
            }
        }
    }
    let result = GenotypeMatrix::with_standardized_flag(out, true)?;
    Ok((result, monomorphic))
}

/// Column means and population standard deviations.
pub fn column_stats(values: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = values.nrows() as f64;
    let means = values.mean_axis(Axis(0)).expect("non-empty matrix");
    let mut sds = Array1::<f64>::zeros(values.ncols());
    for (k, col) in values.axis_iter(Axis(1)).enumerate() {
        let m = means[k];
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        sds[k] = var.sqrt();
    }
    (means, sds)
}

/// Synthetic genotypes with Gaussian-copula linkage disequilibrium.
///
/// Per-SNP allele frequencies are drawn uniformly from `maf_range`. Two
/// latent haplotype series follow an AR(1) Gaussian process with adjacent
/// correlation `exp(-ld_decay)`; thresholding each series at the normal
/// quantile of the SNP frequency yields alleles, and the dosage is their sum.
/// Fully deterministic given the seed.
pub fn simulate_genotypes(
    n: usize,
    p: usize,
    maf_range: (f64, f64),
    ld_decay: f64,
    seed: u64,
) -> Result<GenotypeMatrix> {
    simulate_genotypes_with_freqs(n, p, maf_range, ld_decay, seed).map(|(g, _)| g)
}

/// Same as [`simulate_genotypes`], additionally returning the drawn per-SNP
/// allele frequencies.
pub fn simulate_genotypes_with_freqs(
    n: usize,
    p: usize,
    maf_range: (f64, f64),
    ld_decay: f64,
    seed: u64,
) -> Result<(GenotypeMatrix, Vec<f64>)> {
    let (low, high) = maf_range;
    if !(low < high) || !(0.0 < low) || !(high <= 0.5) {
        return Err(Error::Parameter(format!(
            "maf_range must satisfy 0 < low < high <= 0.5, got ({low}, {high})"
        )));
    }
    if !(ld_decay >= 0.0) {
        return Err(Error::Parameter(format!(
            "ld_decay must be nonnegative, got {ld_decay}"
        )));
    }
    if n < 2 || p < 1 {
        return Err(Error::Dimension(format!(
            "requested genotype matrix must be at least 2x1, got {n}x{p}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freqs: Vec<f64> = (0..p).map(|_| rng.gen_range(low..high)).collect();
    let thresholds: Vec<f64> = freqs.iter().map(|&f| normal_quantile(f)).collect();
    let rho = (-ld_decay).exp();
    let innovation = (1.0 - rho * rho).max(0.0).sqrt();

    let mut values = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for _hap in 0..2 {
            let mut z: f64 = rng.sample(StandardNormal);
            for k in 0..p {
                if k > 0 {
                    let e: f64 = rng.sample(StandardNormal);
                    z = rho * z + innovation * e;
                }
                if z < thresholds[k] {
                    values[[i, k]] += 1.0;
                }
            }
        }
    }
    let geno = GenotypeMatrix::new(values)?;
    Ok((geno, freqs))
}

/// Standard normal quantile function (inverse CDF), Wichura's AS 241.
///
/// Absolute error is below 1e-13 over the full open unit interval.
pub fn normal_quantile(prob: f64) -> f64 {
    assert!(
        prob > 0.0 && prob < 1.0,
        "normal_quantile requires 0 < p < 1, got {prob}"
    );
    let q = prob - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail_p = if q < 0.0 { prob } else { 1.0 - prob };
    let r = (-tail_p.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        let r = r - 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_3e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}
