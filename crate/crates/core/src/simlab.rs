//! Synthetic phenotype scenarios and the replicate campaign harness.
//!
//! Genetic signals are drawn as g = X w / sqrt(p) with w ~ N(0, sigma_g^2 I)
//! over centered genotypes, so g ~ N(0, (sigma_g^2/p) X X'). Five phenotype
//! families map the signal to traits (linear, saturating, amplifying,
//! symmetric, and unimodal responses) before adding Gaussian noise. The
//! campaign runner regenerates genotypes per replicate, splits train/test,
//! fits each requested method, and records test correlation and wall time.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genodata::{
    simulate_genotypes, standardize, CovariateDesign, GenotypeMatrix, PhenotypeVector,
    StandardizeMode,
};
use crate::kernels::{grm_kernel, KernelMatrix};
use crate::minque::{minque_fit, MinqueSpec};
use crate::nn::{predict_mlp, train_mlp, TrainConfig};
use crate::ntk::{empirical_ntk, NtkBuildConfig};
use crate::predict::{blup_fit_predict, krr_fit, krr_predict, CvPlan};
use crate::util::{derive_seed, mean, median, sample_sd};

/// Phenotype-generation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioModel {
    Linear,
    Hyperbolic,
    Power,
    Cosh,
    Ricker,
}

impl std::fmt::Display for ScenarioModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScenarioModel::Linear => "linear",
            ScenarioModel::Hyperbolic => "hyperbolic",
            ScenarioModel::Power => "power",
            ScenarioModel::Cosh => "cosh",
            ScenarioModel::Ricker => "ricker",
        };
        f.write_str(s)
    }
}

/// Full recipe for one simulated scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model: ScenarioModel,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_unit")]
    pub sigma_g2: f64,
    #[serde(default = "default_unit")]
    pub sigma_e2: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub seed: u64,
    /// Allele-frequency band for the synthetic genotypes.
    #[serde(default = "default_maf_range")]
    pub maf_range: (f64, f64),
    /// Copula LD decay; adjacent-SNP latent correlation is exp(-ld_decay).
    #[serde(default = "default_ld_decay")]
    pub ld_decay: f64,
}

fn default_alpha() -> f64 {
    2.0
}
fn default_unit() -> f64 {
    1.0
}
fn default_n() -> usize {
    1000
}
fn default_replicates() -> usize {
    100
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_maf_range() -> (f64, f64) {
    (0.05, 0.5)
}
fn default_ld_decay() -> f64 {
    1.0
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::Parameter(format!(
                "alpha must be at least 1, got {}",
                self.alpha
            )));
        }
        if !(self.sigma_g2 > 0.0) || !(self.sigma_e2 > 0.0) {
            return Err(Error::Parameter(
                "sigma_g2 and sigma_e2 must be positive".into(),
            ));
        }
        if self.n < 4 || self.p < 1 {
            return Err(Error::Parameter(format!(
                "need n >= 4 and p >= 1, got n={}, p={}",
                self.n, self.p
            )));
        }
        if self.replicates < 1 {
            return Err(Error::Parameter("replicates must be at least 1".into()));
        }
        Ok(())
    }
}

/// Genetic signal g = X w / sqrt(p), w ~ N(0, sigma_g2 I), so that
/// g ~ N(0, (sigma_g2/p) X X'). Requires centered genotypes.
pub fn gen_signal(geno: &GenotypeMatrix, sigma_g2: f64, seed: u64) -> Result<Array1<f64>> {
    if !(sigma_g2 >= 0.0) {
        return Err(Error::Parameter(format!(
            "sigma_g2 must be nonnegative, got {sigma_g2}"
        )));
    }
    let scale = geno.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if geno.col_means().iter().any(|m| m.abs() > 1e-8 * scale.max(1.0)) {
        return Err(Error::Parameter(
            "genetic signals require centered genotypes (column means near zero)".into(),
        ));
    }
    let p = geno.n_variants();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let sigma = sigma_g2.sqrt();
    let w = Array1::from_iter((0..p).map(|_| {
        let z: f64 = normal.sample(&mut rng);
        z * sigma
    }));
    Ok(geno.values().dot(&w) / (p as f64).sqrt())
}

/// Overflow-safe softplus log(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn elementwise_power(g: ArrayView1<'_, f64>, alpha: f64) -> Result<Array1<f64>> {
    if alpha == 1.0 {
        return Ok(g.to_owned());
    }
    if alpha.fract() == 0.0 {
        let k = alpha as i32;
        return Ok(g.mapv(|v| v.powi(k)));
    }
    if g.iter().any(|&v| v < 0.0) {
        return Err(Error::Parameter(format!(
            "non-integer alpha = {alpha} is undefined for negative signal values"
        )));
    }
    Ok(g.mapv(|v| v.powf(alpha)))
}

/// Noiseless scenario mean m(g).
pub fn model_mean(
    g: ArrayView1<'_, f64>,
    model: ScenarioModel,
    alpha: f64,
) -> Result<Array1<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("signal has non-finite entries".into()));
    }
    let out = match model {
        ScenarioModel::Linear => g.to_owned(),
        ScenarioModel::Hyperbolic => {
            let powered = elementwise_power(g, alpha)?;
            powered.mapv(|v| {
                let r = softplus(v);
                r / (1.0 + r)
            })
        }
        ScenarioModel::Power => elementwise_power(g, alpha)?,
        ScenarioModel::Cosh => g.mapv(f64::cosh),
        ScenarioModel::Ricker => {
            let powered = elementwise_power(g, alpha)?;
            powered.mapv(|v| {
                let r = softplus(v);
                r * (-r).exp()
            })
        }
    };
    Ok(out)
}

/// Phenotype y = m(g) + eps with eps ~ N(0, sigma_e2 I), deterministic in
/// the seed.
pub fn apply_model(
    g: ArrayView1<'_, f64>,
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<PhenotypeVector> {
    let mean_part = model_mean(g, spec.model, spec.alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let sigma = spec.sigma_e2.sqrt();
    let noisy = Array1::from_iter(mean_part.iter().map(|m| {
        let z: f64 = normal.sample(&mut rng);
        m + sigma * z
    }));
    PhenotypeVector::new(noisy)
}

/// Pearson correlation; errors when either input has zero variance.
pub fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "correlation inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Dimension("correlation needs at least 2 points".into()));
    }
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::ZeroVariance(
            "correlation is undefined for constant inputs".into(),
        ));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Prediction methods available to campaigns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NtkLmm,
    NtkKrr,
    ProductLmm,
    BaselineNn,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::NtkLmm => "ntk_lmm",
            Method::NtkKrr => "ntk_krr",
            Method::ProductLmm => "product_lmm",
            Method::BaselineNn => "baseline_nn",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntk_lmm" => Ok(Method::NtkLmm),
            "ntk_krr" => Ok(Method::NtkKrr),
            "product_lmm" => Ok(Method::ProductLmm),
            "baseline_nn" => Ok(Method::BaselineNn),
            other => Err(Error::Parameter(format!("unknown method '{other}'"))),
        }
    }
}

/// One method's outcome on one replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub p: usize,
    pub method: Method,
    pub replicate: usize,
    /// Test-set Pearson correlation; absent when the method failed.
    pub correlation: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Signal/noise bookkeeping per replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateDiagnostics {
    pub replicate: usize,
    pub var_signal: f64,
    pub var_noise: f64,
    /// var(m(g)) / (var(m(g)) + sigma_e2).
    pub heritability_proxy: f64,
}

/// Campaign output: long-format rows plus per-replicate diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignResult {
    pub rows: Vec<ReplicateRecord>,
    pub diagnostics: Vec<ReplicateDiagnostics>,
}

/// Runs every requested method on every replicate.
///
/// Replicate seeds derive from (campaign seed, replicate id), so serial and
/// parallel execution produce identical tables (wall times excepted). A
/// method failure is recorded as a row and never aborts the campaign.
pub fn run_campaign(
    spec: &ScenarioSpec,
    methods: &[Method],
    threads: usize,
) -> Result<CampaignResult> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(Error::Parameter("no methods requested".into()));
    }
    let replicate_ids: Vec<usize> = (0..spec.replicates).collect();
    let outcomes: Vec<(Vec<ReplicateRecord>, ReplicateDiagnostics)> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            replicate_ids
                .par_iter()
                .map(|&r| run_replicate(spec, methods, r))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        replicate_ids
            .iter()
            .map(|&r| run_replicate(spec, methods, r))
            .collect::<Result<Vec<_>>>()?
    };
    let mut rows = Vec::with_capacity(spec.replicates * methods.len());
    let mut diagnostics = Vec::with_capacity(spec.replicates);
    for (mut rep_rows, diag) in outcomes {
        rows.append(&mut rep_rows);
        diagnostics.push(diag);
    }
    Ok(CampaignResult { rows, diagnostics })
}

fn run_replicate(
    spec: &ScenarioSpec,
    methods: &[Method],
    replicate: usize,
) -> Result<(Vec<ReplicateRecord>, ReplicateDiagnostics)> {
    let rep_seed = derive_seed(spec.seed, replicate as u64);
    let raw = simulate_genotypes(
        spec.n,
        spec.p,
        spec.maf_range,
        spec.ld_decay,
        derive_seed(rep_seed, 1),
    )?;
    let (centered, _) = standardize(&raw, StandardizeMode::CenterOnly)?;
    let signal = gen_signal(&centered, spec.sigma_g2, derive_seed(rep_seed, 2))?;
    let mean_part = model_mean(signal.view(), spec.model, spec.alpha)?;
    let y = apply_model(signal.view(), spec, derive_seed(rep_seed, 3))?;

    // Seeded 80/20 split.
    let mut order: Vec<usize> = (0..spec.n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 4));
    order.shuffle(&mut rng);
    let n_train = ((spec.n as f64 * spec.train_fraction).round() as usize).clamp(2, spec.n - 1);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let noise = &y.values().view() - &mean_part;
    let var_signal = population_variance(mean_part.view());
    let diag = ReplicateDiagnostics {
        replicate,
        var_signal,
        var_noise: population_variance(noise.view()),
        heritability_proxy: var_signal / (var_signal + spec.sigma_e2),
    };

    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let outcome = run_method(method, spec, rep_seed, &centered, &y, &train_idx, &test_idx);
        let seconds = start.elapsed().as_secs_f64();
        let row = match outcome {
            Ok(correlation) => ReplicateRecord {
                scenario: spec.model.to_string(),
                p: spec.p,
                method,
                replicate,
                correlation: Some(correlation),
                seconds,
                error: None,
            },
            Err(e) => ReplicateRecord {
                scenario: spec.model.to_string(),
                p: spec.p,
                method,
                replicate,
                correlation: None,
                seconds,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok((rows, diag))
}

fn population_variance(v: ArrayView1<'_, f64>) -> f64 {
    let n = v.len() as f64;
    let m = v.sum() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Fits one method on the training split and returns its test correlation.
/// Timing of callers covers this whole call: kernel construction is part of
/// the method cost, data generation is not.
fn run_method(
    method: Method,
    spec: &ScenarioSpec,
    rep_seed: u64,
    centered: &GenotypeMatrix,
    y: &PhenotypeVector,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<f64> {
    let y_train = Array1::from_iter(train_idx.iter().map(|&i| y.values()[i]));
    let y_test = Array1::from_iter(test_idx.iter().map(|&i| y.values()[i]));
    let predictions = match method {
        Method::ProductLmm => {
            let kernel = grm_kernel(centered)?;
            lmm_predictions(&kernel, y_train.view(), train_idx, test_idx)?
        }
        Method::NtkLmm => {
            let cfg =
                NtkBuildConfig::default_for_features(spec.p, derive_seed(rep_seed, 5));
            let kernel = empirical_ntk(centered, &cfg)?;
            lmm_predictions(&kernel, y_train.view(), train_idx, test_idx)?
        }
        Method::NtkKrr => {
            let cfg =
                NtkBuildConfig::default_for_features(spec.p, derive_seed(rep_seed, 5));
            let kernel = empirical_ntk(centered, &cfg)?;
            let k_train = kernel.principal_submatrix(train_idx)?;
            let plan = CvPlan {
                seed: derive_seed(rep_seed, 6),
                ..CvPlan::default()
            };
            let (fit, _) = krr_fit(y_train.view(), &k_train, &plan)?;
            let cross = kernel.block(test_idx, train_idx);
            krr_predict(&fit, cross.view())?
        }
        Method::BaselineNn => {
            let x_train = centered.values().select(ndarray::Axis(0), train_idx);
            let x_test = centered.values().select(ndarray::Axis(0), test_idx);
            let cfg = TrainConfig {
                seed: derive_seed(rep_seed, 7),
                ..TrainConfig::default()
            };
            let (model, _) = train_mlp(x_train.view(), y_train.view(), &cfg)?;
            predict_mlp(&model, x_test.view())?
        }
    };
    pearson(predictions.view(), y_test.view())
}

/// Mixed-model pipeline shared by the kernel methods: MINQUE with an
/// intercept, then BLUP on the held-out block.
fn lmm_predictions(
    kernel: &KernelMatrix,
    y_train: ArrayView1<'_, f64>,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<Array1<f64>> {
    let k_train = kernel.principal_submatrix(train_idx)?;
    let cross = kernel.block(test_idx, train_idx);
    let y_vec = PhenotypeVector::new(y_train.to_owned())?;
    let z_train = CovariateDesign::intercept(train_idx.len())?;
    let fit = minque_fit(&y_vec, &[k_train.clone()], Some(&z_train), &MinqueSpec::default())?;
    let z_test = Array2::from_elem((test_idx.len(), 1), 1.0);
    let blup = blup_fit_predict(
        y_train,
        &k_train,
        cross.view(),
        Some(z_train.values().view()),
        Some(z_test.view()),
        &fit.components,
    )?;
    Ok(blup.predictions)
}

/// Aggregated statistics per (scenario, p, method), in first-appearance
/// order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub p: usize,
    pub method: Method,
    pub mean_correlation: f64,
    pub median_correlation: f64,
    pub sd_correlation: f64,
    pub mean_seconds: f64,
    pub successes: usize,
    pub failures: usize,
}

/// Mean/median/sd of test correlation per method, counting failures
/// separately. Statistics cover successful replicates only.
pub fn summarize(rows: &[ReplicateRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize, Method)> = Vec::new();
    for row in rows {
        let key = (row.scenario.clone(), row.p, row.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(scenario, p, method)| {
            let group: Vec<&ReplicateRecord> = rows
                .iter()
                .filter(|r| r.scenario == scenario && r.p == p && r.method == method)
                .collect();
            let corrs: Vec<f64> = group.iter().filter_map(|r| r.correlation).collect();
            let times: Vec<f64> = group.iter().map(|r| r.seconds).collect();
            let failures = group.len() - corrs.len();
            SummaryRow {
                scenario,
                p,
                method,
                mean_correlation: if corrs.is_empty() { f64::NAN } else { mean(&corrs) },
                median_correlation: if corrs.is_empty() { f64::NAN } else { median(&corrs) },
                sd_correlation: if corrs.is_empty() { f64::NAN } else { sample_sd(&corrs) },
                mean_seconds: mean(&times),
                successes: corrs.len(),
                failures,
            }
        })
        .collect()
}

/// Long-format results CSV: scenario,p,method,replicate,correlation,seconds,status.
pub fn results_to_csv(rows: &[ReplicateRecord]) -> String {
    let mut out = String::from("scenario,p,method,replicate,correlation,seconds,status\n");
    for row in rows {
        let corr = row
            .correlation
            .map(|c| format!("{c:.16e}"))
            .unwrap_or_default();
        let status = match &row.error {
            None => "ok".to_string(),
            Some(msg) => format!("error: {}", msg.replace(',', ";")),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{:.6e},{}\n",
            row.scenario, row.p, row.method, row.replicate, corr, row.seconds, status
        ));
    }
    out
}

/// Parses the long-format results CSV written by [`results_to_csv`].
pub fn parse_results_csv(text: &str) -> Result<Vec<ReplicateRecord>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.splitn(7, ',').collect();
        if cells.len() != 7 {
            return Err(Error::Parse {
                row: idx + 1,
                col: cells.len(),
                message: "expected 7 columns".into(),
            });
        }
        let parse_err = |col: usize, what: &str| Error::Parse {
            row: idx + 1,
            col,
            message: format!("bad {what} value '{}'", cells[col - 1]),
        };
        let correlation = if cells[4].is_empty() {
            None
        } else {
            Some(cells[4].parse::<f64>().map_err(|_| parse_err(5, "correlation"))?)
        };
        rows.push(ReplicateRecord {
            scenario: cells[0].to_string(),
            p: cells[1].parse().map_err(|_| parse_err(2, "p"))?,
            method: cells[2].parse()?,
            replicate: cells[3].parse().map_err(|_| parse_err(4, "replicate"))?,
            correlation,
            seconds: cells[5].parse().map_err(|_| parse_err(6, "seconds"))?,
            error: match cells[6] {
                "ok" => None,
                other => Some(other.trim_start_matches("error: ").to_string()),
            },
        });
    }
    Ok(rows)
}

/// Summary CSV emitted by the `summary` command.
pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "scenario,p,method,mean_correlation,median_correlation,sd_correlation,mean_seconds,successes,failures\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6e},{},{}\n",
            row.scenario,
            row.p,
            row.method,
            row.mean_correlation,
            row.median_correlation,
            row.sd_correlation,
            row.mean_seconds,
            row.successes,
            row.failures
        ));
    }
    out
}

/// Per-replicate diagnostics CSV.
pub fn diagnostics_to_csv(diags: &[ReplicateDiagnostics]) -> String {
    let mut out = String::from("replicate,var_signal,var_noise,heritability_proxy\n");
    for d in diags {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            d.replicate, d.var_signal, d.var_noise, d.heritability_proxy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_spec(model: ScenarioModel, n: usize, p: usize, replicates: usize) -> ScenarioSpec {
        ScenarioSpec {
            model,
            alpha: 2.0,
            sigma_g2: 1.0,
            sigma_e2: 1.0,
            n,
            p,
            replicates,
            train_fraction: 0.8,
            seed: 77,
            maf_range: (0.1, 0.5),
            ld_decay: 1.0,
        }
    }

    #[test]
    fn pearson_perfect_and_anti_correlation() {
        let a = array![1.0, 2.0, 3.0];
        let b = a.mapv(|v| -v);
        assert_eq!(pearson(a.view(), a.view()).unwrap(), 1.0);
        assert_eq!(pearson(a.view(), b.view()).unwrap(), -1.0);
    }

    #[test]
    fn pearson_matches_hand_computed_value() {
        // a=[1,2,3], b=[2,4,7]: r = 5 sqrt(3) / (2 sqrt(19)), derived by hand
        // from the covariance/variance sums.
        let a = array![1.0, 2.0, 3.0];
        let b = array![2.0, 4.0, 7.0];
        let expect = 5.0 * 3.0f64.sqrt() / (2.0 * 19.0f64.sqrt());
        assert!((pearson(a.view(), b.view()).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_zero_variance_and_bad_lengths() {
        let a = array![1.0, 1.0, 1.0];
        let b = array![1.0, 2.0, 3.0];
        assert!(matches!(
            pearson(a.view(), b.view()),
            Err(Error::ZeroVariance(_))
        ));
        let short = array![1.0, 2.0];
        assert!(pearson(short.view(), b.view()).is_err());
    }

    #[test]
    fn gen_signal_zero_variance_gives_zero() {
        let geno = centered_fixture(6, 3, 5);
        let g = gen_signal(&geno, 0.0, 9).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gen_signal_zero_design_gives_zero() {
        let geno = GenotypeMatrix::new(Array2::<f64>::zeros((5, 3))).unwrap();
        let g = gen_signal(&geno, 3.0, 9).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gen_signal_requires_centered_genotypes() {
        let raw = simulate_genotypes(10, 3, (0.2, 0.5), 1.0, 4).unwrap();
        assert!(gen_signal(&raw, 1.0, 1).is_err());
    }

    fn centered_fixture(n: usize, p: usize, seed: u64) -> GenotypeMatrix {
        let raw = simulate_genotypes(n, p, (0.2, 0.5), 1.0, seed).unwrap();
        standardize(&raw, StandardizeMode::CenterOnly).unwrap().0
    }

    #[test]
    fn gen_signal_covariance_matches_kernel_monte_carlo() {
        // Sample covariance over many draws approaches (sigma_g2/p) X X'.
        let geno = centered_fixture(5, 4, 11);
        let sigma_g2 = 1.5;
        let draws = 2000;
        let n = 5;
        let mut acc = Array2::<f64>::zeros((n, n));
        for d in 0..draws {
            let g = gen_signal(&geno, sigma_g2, 100_000 + d as u64).unwrap();
            for i in 0..n {
                for j in 0..n {
                    acc[[i, j]] += g[i] * g[j];
                }
            }
        }
        acc.mapv_inplace(|v| v / draws as f64);
        let expect = geno.values().dot(&geno.values().t()) * (sigma_g2 / 4.0);
        for i in 0..n {
            for j in 0..n {
                // Monte Carlo standard error of a covariance entry.
                let se = ((expect[[i, i]] * expect[[j, j]] + expect[[i, j]].powi(2))
                    / draws as f64)
                    .sqrt();
                let diff = (acc[[i, j]] - expect[[i, j]]).abs();
                assert!(
                    diff < 3.0 * se + 1e-12,
                    "entry ({i},{j}): diff {diff}, se {se}"
                );
            }
        }
    }

    #[test]
    fn model_mean_fixed_points() {
        let g = array![0.0];
        let cosh_val = model_mean(g.view(), ScenarioModel::Cosh, 2.0).unwrap();
        assert_eq!(cosh_val[0], 1.0);
        // Ricker at g = 0: r(0) = ln 2, value = ln2 * exp(-ln2) = ln2 / 2.
        let ricker = model_mean(g.view(), ScenarioModel::Ricker, 2.0).unwrap();
        assert!((ricker[0] - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
        assert!((ricker[0] - 0.34657359027997264).abs() < 1e-15);
        // Power alpha=2 squares elementwise.
        let g2 = array![1.0, -2.0];
        let sq = model_mean(g2.view(), ScenarioModel::Power, 2.0).unwrap();
        assert_eq!(sq[0], 1.0);
        assert_eq!(sq[1], 4.0);
    }

    #[test]
    fn hyperbolic_mean_is_bounded() {
        let g = array![-5.0, -1.0, 0.0, 1.0, 5.0, 50.0];
        let m = model_mean(g.view(), ScenarioModel::Hyperbolic, 2.0).unwrap();
        for v in m.iter() {
            assert!(*v > 0.0 && *v < 1.0, "value {v}");
        }
    }

    #[test]
    fn non_integer_alpha_with_negative_signal_is_rejected() {
        let g = array![0.5, -0.5];
        assert!(model_mean(g.view(), ScenarioModel::Power, 1.5).is_err());
        assert!(model_mean(g.view(), ScenarioModel::Ricker, 2.5).is_err());
        // Nonnegative signal is fine.
        let g_pos = array![0.5, 1.5];
        assert!(model_mean(g_pos.view(), ScenarioModel::Power, 1.5).is_ok());
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
    }

    #[test]
    fn linear_noiseless_reproduces_signal() {
        let geno = centered_fixture(8, 3, 21);
        let g = gen_signal(&geno, 1.0, 3).unwrap();
        let mut spec = tiny_spec(ScenarioModel::Linear, 8, 3, 1);
        spec.sigma_e2 = 1e-300; // validate() requires > 0; noise is negligible
        let y = apply_model(g.view(), &spec, 5).unwrap();
        for (a, b) in y.values().iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-140);
        }
    }

    #[test]
    fn campaign_row_cardinality_and_determinism() {
        let spec = tiny_spec(ScenarioModel::Linear, 40, 4, 2);
        let methods = [Method::ProductLmm];
        let a = run_campaign(&spec, &methods, 1).unwrap();
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.diagnostics.len(), 2);
        let b = run_campaign(&spec, &methods, 1).unwrap();
        for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
            assert_eq!(ra.correlation.map(f64::to_bits), rb.correlation.map(f64::to_bits));
            assert_eq!(ra.replicate, rb.replicate);
        }
    }

    #[test]
    fn campaign_single_replicate_has_one_row_per_method() {
        let spec = tiny_spec(ScenarioModel::Linear, 48, 4, 1);
        let methods = [Method::ProductLmm, Method::NtkKrr];
        // Keep the NTK cheap by relying on the small p selector (p < 50).
        let out = run_campaign(&spec, &methods, 1).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].method, Method::ProductLmm);
        assert_eq!(out.rows[1].method, Method::NtkKrr);
    }

    #[test]
    fn campaign_parallel_matches_serial() {
        let spec = tiny_spec(ScenarioModel::Cosh, 40, 4, 3);
        let methods = [Method::ProductLmm];
        let serial = run_campaign(&spec, &methods, 1).unwrap();
        let parallel = run_campaign(&spec, &methods, 2).unwrap();
        for (a, b) in serial.rows.iter().zip(parallel.rows.iter()) {
            assert_eq!(a.replicate, b.replicate);
            assert_eq!(a.correlation.map(f64::to_bits), b.correlation.map(f64::to_bits));
        }
    }

    #[test]
    fn campaign_records_method_failures_without_aborting() {
        // n = 40 leaves 32 training samples, not more than one batch of 32,
        // so the baseline network fails while product LMM succeeds (the
        // strong genetic signal keeps its variance component away from the
        // zero clamp on this small replicate).
        let mut spec = tiny_spec(ScenarioModel::Linear, 40, 4, 1);
        spec.sigma_g2 = 4.0;
        let methods = [Method::BaselineNn, Method::ProductLmm];
        let out = run_campaign(&spec, &methods, 1).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.rows[0].correlation.is_none());
        assert!(out.rows[0].error.is_some());
        assert!(out.rows[1].correlation.is_some());
    }

    #[test]
    fn summary_counts_and_statistics() {
        let rows = vec![
            ReplicateRecord {
                scenario: "linear".into(),
                p: 4,
                method: Method::ProductLmm,
                replicate: 0,
                correlation: Some(0.5),
                seconds: 1.0,
                error: None,
            },
            ReplicateRecord {
                scenario: "linear".into(),
                p: 4,
                method: Method::ProductLmm,
                replicate: 1,
                correlation: Some(0.7),
                seconds: 3.0,
                error: None,
            },
            ReplicateRecord {
                scenario: "linear".into(),
                p: 4,
                method: Method::ProductLmm,
                replicate: 2,
                correlation: None,
                seconds: 0.5,
                error: Some("boom".into()),
            },
        ];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        let s = &summary[0];
        assert_eq!(s.successes, 2);
        assert_eq!(s.failures, 1);
        assert!((s.mean_correlation - 0.6).abs() < 1e-15);
        assert!((s.median_correlation - 0.6).abs() < 1e-15);
        assert!((s.mean_seconds - 1.5).abs() < 1e-15);
    }

    #[test]
    fn results_csv_roundtrip() {
        let spec = tiny_spec(ScenarioModel::Linear, 40, 4, 2);
        let out = run_campaign(&spec, &[Method::ProductLmm, Method::BaselineNn], 1).unwrap();
        let csv = results_to_csv(&out.rows);
        let parsed = parse_results_csv(&csv).unwrap();
        assert_eq!(parsed.len(), out.rows.len());
        for (a, b) in out.rows.iter().zip(parsed.iter()) {
            assert_eq!(a.scenario, b.scenario);
            assert_eq!(a.method, b.method);
            assert_eq!(a.replicate, b.replicate);
            match (a.correlation, b.correlation) {
                (Some(x), Some(y)) => assert_eq!(x.to_bits(), y.to_bits()),
                (None, None) => {}
                other => panic!("correlation mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn scenario_spec_validation() {
        let mut spec = tiny_spec(ScenarioModel::Linear, 40, 4, 1);
        spec.alpha = 0.5;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec(ScenarioModel::Linear, 40, 4, 1);
        spec.train_fraction = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec(ScenarioModel::Linear, 40, 4, 1);
        spec.replicates = 0;
        assert!(spec.validate().is_err());
    }
}
