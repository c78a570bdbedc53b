//! Command configuration files (TOML or JSON) and manifest reuse.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ntkrisk::genodata::StandardizeMode;
use ntkrisk::kernels::{BaseScaling, KernelKind};
use ntkrisk::minque::MinqueSpec;
use ntkrisk::simlab::{Method, ScenarioModel};

/// Loads a config, accepting TOML, JSON, or a manifest produced by an
/// earlier run (its resolved parameters are reused verbatim).
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    // A manifest embeds the resolved config under `resolved_config`.
    if let Ok(manifest) = serde_json::from_str::<serde_json::Value>(&text) {
        if let Some(resolved) = manifest.get("resolved_config") {
            return serde_json::from_value(resolved.clone())
                .with_context(|| format!("manifest {} has an incompatible resolved_config", path.display()));
        }
        if manifest.is_object() {
            return serde_json::from_value(manifest)
                .with_context(|| format!("invalid JSON config {}", path.display()));
        }
    }
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn default_out_dir() -> PathBuf {
    PathBuf::from(".")
}

/// Genotype preprocessing applied before kernel construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    Raw,
    Center,
    Standardize,
}

impl Preprocess {
    pub fn mode(self) -> Option<StandardizeMode> {
        match self {
            Preprocess::Raw => None,
            Preprocess::Center => Some(StandardizeMode::CenterOnly),
            Preprocess::Standardize => Some(StandardizeMode::CenterScale),
        }
    }
}

fn default_preprocess() -> Preprocess {
    Preprocess::Center
}

/// `simulate`: one synthetic dataset (genotypes, latent signal, phenotype).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ScenarioModel,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default = "crate::config::default_alpha")]
    pub alpha: f64,
    #[serde(default = "crate::config::default_unit")]
    pub sigma_g2: f64,
    #[serde(default = "crate::config::default_unit")]
    pub sigma_e2: f64,
    #[serde(default = "crate::config::default_maf_range")]
    pub maf_range: (f64, f64),
    #[serde(default = "crate::config::default_ld_decay")]
    pub ld_decay: f64,
    #[serde(default = "default_out_dir")]
    pub out: PathBuf,
}

pub(crate) fn default_alpha() -> f64 {
    2.0
}
pub(crate) fn default_unit() -> f64 {
    1.0
}
pub(crate) fn default_maf_range() -> (f64, f64) {
    (0.05, 0.5)
}
pub(crate) fn default_ld_decay() -> f64 {
    1.0
}

/// `kernel`: build a kernel matrix from a genotype table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub input: PathBuf,
    pub output: PathBuf,
    #[serde(default = "default_preprocess")]
    pub preprocess: Preprocess,
    /// Empirical-NTK width; defaults to the feature-count selector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    /// Network depth for both NTK kinds; same selector default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_inits: Option<usize>,
    #[serde(default = "crate::config::default_true")]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_sigma: Option<f64>,
    #[serde(default = "default_base_scaling")]
    pub base_scaling: BaseScaling,
    #[serde(default)]
    pub seed: u64,
}

pub(crate) fn default_true() -> bool {
    true
}
fn default_base_scaling() -> BaseScaling {
    BaseScaling::InnerProduct
}

/// Fitting method selector for `fit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Minque,
    Krr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrrOptions {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    5
}
fn default_grid() -> Vec<f64> {
    vec![0.001, 0.01, 0.1, 1.0, 10.0]
}

impl Default for KrrOptions {
    fn default() -> Self {
        Self {
            folds: default_folds(),
            grid: default_grid(),
            seed: 0,
        }
    }
}

/// `fit`: estimate variance components (MINQUE) or fit KRR.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub method: FitMethod,
    pub phenotypes: PathBuf,
    pub kernels: Vec<PathBuf>,
    /// Fixed-effect design file; mutually exclusive with `intercept`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
    /// Intercept-only fixed effects.
    #[serde(default)]
    pub intercept: bool,
    #[serde(default)]
    pub minque: Option<MinqueSpec>,
    #[serde(default)]
    pub krr: Option<KrrOptions>,
    #[serde(default = "default_fit_out")]
    pub out: PathBuf,
}

fn default_fit_out() -> PathBuf {
    PathBuf::from("fit.json")
}

/// `predict`: apply a fit artifact to held-out kernel blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub fit: PathBuf,
    /// Test-by-train kernel block.
    pub kernel_cross: PathBuf,
    /// Training kernel (mixed-model fits only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_train: Option<PathBuf>,
    /// Training phenotypes (mixed-model fits only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phenotypes_train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates_train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates_test: Option<PathBuf>,
    /// Intercept-only fixed effects for both splits.
    #[serde(default)]
    pub intercept: bool,
    #[serde(default = "default_predictions_out")]
    pub out: PathBuf,
}

fn default_predictions_out() -> PathBuf {
    PathBuf::from("predictions.csv")
}

/// `campaign`: replicate study over one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(flatten)]
    pub scenario: ntkrisk::simlab::ScenarioSpec,
    pub methods: Vec<Method>,
    #[serde(default = "default_out_dir")]
    pub out: PathBuf,
}

/// `verify`: property suites with measured gaps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_equiv_instances")]
    pub equivalence_instances: usize,
    #[serde(default = "default_equiv_max_n")]
    pub equivalence_max_n: usize,
    #[serde(default = "default_conv_widths")]
    pub convergence_widths: Vec<usize>,
    #[serde(default = "default_conv_seeds")]
    pub convergence_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_verify_out")]
    pub out: PathBuf,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            equivalence_instances: default_equiv_instances(),
            equivalence_max_n: default_equiv_max_n(),
            convergence_widths: default_conv_widths(),
            convergence_seeds: default_conv_seeds(),
            seed: 0,
            out: default_verify_out(),
        }
    }
}

fn default_equiv_instances() -> usize {
    50
}
fn default_equiv_max_n() -> usize {
    50
}
fn default_conv_widths() -> Vec<usize> {
    vec![64, 256]
}
fn default_conv_seeds() -> usize {
    3
}
fn default_verify_out() -> PathBuf {
    PathBuf::from("verify_report.json")
}

/// `summary`: aggregate a campaign results table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryConfig {
    pub results: PathBuf,
    #[serde(default = "default_summary_out")]
    pub out: PathBuf,
}

fn default_summary_out() -> PathBuf {
    PathBuf::from("summary.csv")
}

/// Applies the --seed/--out command-line overrides onto a config value.
pub trait Overridable {
    fn override_seed(&mut self, seed: u64);
    fn override_out(&mut self, out: &Path);
}

impl Overridable for SimulateConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn override_out(&mut self, out: &Path) {
        self.out = out.to_path_buf();
    }
}

impl Overridable for KernelConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn override_out(&mut self, out: &Path) {
        self.output = out.to_path_buf();
    }
}

impl Overridable for FitConfig {
    fn override_seed(&mut self, seed: u64) {
        if let Some(krr) = &mut self.krr {
            krr.seed = seed;
        } else {
            self.krr = Some(KrrOptions {
                seed,
                ..KrrOptions::default()
            });
        }
    }
    fn override_out(&mut self, out: &Path) {
        self.out = out.to_path_buf();
    }
}

impl Overridable for PredictConfig {
    fn override_seed(&mut self, _seed: u64) {}
    fn override_out(&mut self, out: &Path) {
        self.out = out.to_path_buf();
    }
}

impl Overridable for CampaignConfig {
    fn override_seed(&mut self, seed: u64) {
        self.scenario.seed = seed;
    }
    fn override_out(&mut self, out: &Path) {
        self.out = out.to_path_buf();
    }
}

impl Overridable for VerifyConfig {
    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn override_out(&mut self, out: &Path) {
        self.out = out.to_path_buf();
    }
}

impl Overridable for SummaryConfig {
    fn override_seed(&mut self, _seed: u64) {}
    fn override_out(&mut self, out: &Path) {
        self.out = out.to_path_buf();
    }
}

/// Reads a config and applies overrides.
pub fn load_with_overrides<T: DeserializeOwned + Overridable>(
    path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<T> {
    let mut cfg: T = load_config(path)?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    if let Some(o) = out {
        cfg.override_out(o);
    }
    Ok(cfg)
}

pub fn ensure_absent_or_force(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "output {} already exists; pass --force to overwrite",
            path.display()
        );
    }
    Ok(())
}
