//! Command implementations.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use ntkrisk::genodata::{
    simulate_genotypes, standardize, CovariateDesign, GenotypeMatrix, StandardizeMode,
};
use ntkrisk::io::{
    self, load_covariates, load_genotypes, load_phenotypes, read_kernel, read_matrix,
    write_kernel, write_matrix, write_vector, TableFormat,
};
use ntkrisk::kernels::{grm_kernel, ntk_analytic, KernelKind, KernelMatrix, NtkArchitecture};
use ntkrisk::minque::{minque_fit, MinqueReport, VarianceComponents};
use ntkrisk::ntk::{
    empirical_ntk, median_deviation_by_width, width_convergence_report, ConvergenceSweep,
    NtkBuildConfig,
};
use ntkrisk::predict::{
    blup_fit_predict, check_lmm_krr_equivalence, krr_fit, krr_predict, CvPlan, CvReport,
    FittedPredictor,
};
use ntkrisk::simlab::{self, apply_model, gen_signal, run_campaign, summarize, ScenarioSpec};
use ntkrisk::util::derive_seed;

use crate::config::*;
use crate::manifest::RunManifest;

fn fmt(path: &Path) -> TableFormat {
    TableFormat::from_path(path)
}

/// `simulate`: X.csv (raw dosages), g.csv (latent signal), y.csv, manifest.
pub fn cmd_simulate(cfg: &SimulateConfig, config_path: &Path) -> Result<()> {
    let scenario = ScenarioSpec {
        model: cfg.model,
        alpha: cfg.alpha,
        sigma_g2: cfg.sigma_g2,
        sigma_e2: cfg.sigma_e2,
        n: cfg.n,
        p: cfg.p,
        replicates: 1,
        train_fraction: 0.8,
        seed: cfg.seed,
        maf_range: cfg.maf_range,
        ld_decay: cfg.ld_decay,
    };
    scenario.validate()?;
    let mut manifest = RunManifest::begin("simulate", config_path);

    let raw = simulate_genotypes(
        cfg.n,
        cfg.p,
        cfg.maf_range,
        cfg.ld_decay,
        derive_seed(cfg.seed, 1),
    )?;
    let (centered, _) = standardize(&raw, StandardizeMode::CenterOnly)?;
    let signal = gen_signal(&centered, cfg.sigma_g2, derive_seed(cfg.seed, 2))?;
    let y = apply_model(signal.view(), &scenario, derive_seed(cfg.seed, 3))?;

    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output dir {}", cfg.out.display()))?;
    let x_path = cfg.out.join("X.csv");
    let g_path = cfg.out.join("g.csv");
    let y_path = cfg.out.join("y.csv");
    write_matrix(&x_path, raw.values(), TableFormat::Csv)?;
    write_vector(&g_path, &signal, TableFormat::Csv)?;
    write_vector(&y_path, y.values(), TableFormat::Csv)?;
    manifest.record_output(&x_path);
    manifest.record_output(&g_path);
    manifest.record_output(&y_path);
    manifest.finish(&cfg.out, cfg, cfg.seed)?;
    println!(
        "simulate: wrote {} ({}x{}), {}, {}",
        x_path.display(),
        cfg.n,
        cfg.p,
        g_path.display(),
        y_path.display()
    );
    Ok(())
}

fn preprocessed(geno: GenotypeMatrix, preprocess: Preprocess) -> Result<GenotypeMatrix> {
    match preprocess.mode() {
        None => Ok(geno),
        Some(mode) => Ok(standardize(&geno, mode)?.0),
    }
}

/// `kernel`: kernel CSV plus metadata sidecar.
pub fn cmd_kernel(cfg: &KernelConfig, config_path: &Path, force: bool) -> Result<()> {
    ensure_absent_or_force(&cfg.output, force)?;
    let mut manifest = RunManifest::begin("kernel", config_path);
    let geno = load_genotypes(&cfg.input, fmt(&cfg.input))
        .with_context(|| format!("loading genotypes {}", cfg.input.display()))?;
    let geno = preprocessed(geno, cfg.preprocess)?;
    let p = geno.n_variants();

    let selector = NtkBuildConfig::default_for_features(p, cfg.seed);
    let mut params = serde_json::Map::new();
    params.insert("preprocess".into(), serde_json::to_value(cfg.preprocess)?);
    let kernel = match cfg.kind {
        KernelKind::Grm => grm_kernel(&geno)?,
        KernelKind::NtkAnalytic => {
            let depth = cfg.depth.unwrap_or(selector.depth);
            let arch = NtkArchitecture::new(depth, cfg.c_sigma.unwrap_or(2.0))?;
            params.insert("depth".into(), depth.into());
            params.insert("c_sigma".into(), arch.c_sigma.into());
            params.insert("base_scaling".into(), serde_json::to_value(cfg.base_scaling)?);
            params.insert("normalize".into(), cfg.normalize.into());
            ntk_analytic(&geno, &arch, cfg.base_scaling, cfg.normalize)?
        }
        KernelKind::NtkEmpirical => {
            let build = NtkBuildConfig {
                width: cfg.width.unwrap_or(selector.width),
                depth: cfg.depth.unwrap_or(selector.depth),
                chunk_size: cfg.chunk_size.unwrap_or(selector.chunk_size),
                num_inits: cfg.num_inits.unwrap_or(selector.num_inits),
                seed: cfg.seed,
                normalize: cfg.normalize,
            };
            params.insert("width".into(), build.width.into());
            params.insert("depth".into(), build.depth.into());
            params.insert("chunk_size".into(), build.chunk_size.into());
            params.insert("num_inits".into(), build.num_inits.into());
            params.insert("seed".into(), build.seed.into());
            params.insert("normalize".into(), build.normalize.into());
            empirical_ntk(&geno, &build)?
        }
    };
    write_kernel(&cfg.output, &kernel, params, fmt(&cfg.output))?;
    manifest.record_output(&cfg.output);
    manifest.record_output(&io::kernel_metadata_path(&cfg.output));
    manifest.finish_for_output(&cfg.output, cfg, cfg.seed)?;
    println!(
        "kernel: wrote {} ({} {}x{})",
        cfg.output.display(),
        kernel.kind(),
        kernel.n(),
        kernel.n()
    );
    Ok(())
}

/// Fit artifact: tagged union covering both fitting methods.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitArtifact {
    Minque {
        report: MinqueReport,
        n: usize,
        kernels: Vec<String>,
    },
    Krr {
        predictor: FittedPredictor,
        cv: CvReport,
    },
}

fn load_fixed_effects(
    covariates: &Option<PathBuf>,
    intercept: bool,
    n: usize,
) -> Result<Option<CovariateDesign>> {
    match (covariates, intercept) {
        (Some(_), true) => bail!("set either covariates or intercept, not both"),
        (Some(path), false) => Ok(Some(
            load_covariates(path, fmt(path))
                .with_context(|| format!("loading covariates {}", path.display()))?,
        )),
        (None, true) => Ok(Some(CovariateDesign::intercept(n)?)),
        (None, false) => Ok(None),
    }
}

/// `fit`: MINQUE variance components or cross-validated KRR.
pub fn cmd_fit(cfg: &FitConfig, config_path: &Path) -> Result<()> {
    if cfg.kernels.is_empty() {
        bail!("fit needs at least one kernel file");
    }
    let mut manifest = RunManifest::begin("fit", config_path);
    let y = load_phenotypes(&cfg.phenotypes, fmt(&cfg.phenotypes))
        .with_context(|| format!("loading phenotypes {}", cfg.phenotypes.display()))?;
    let kernels: Vec<KernelMatrix> = cfg
        .kernels
        .iter()
        .map(|p| read_kernel(p, fmt(p)).with_context(|| format!("loading kernel {}", p.display())))
        .collect::<Result<_>>()?;

    let artifact = match cfg.method {
        FitMethod::Minque => {
            let z = load_fixed_effects(&cfg.covariates, cfg.intercept, y.len())?;
            let spec = cfg.minque.clone().unwrap_or_default();
            let fit = minque_fit(&y, &kernels, z.as_ref(), &spec)?;
            FitArtifact::Minque {
                report: fit.report(),
                n: y.len(),
                kernels: cfg.kernels.iter().map(|p| p.display().to_string()).collect(),
            }
        }
        FitMethod::Krr => {
            if kernels.len() != 1 {
                bail!("KRR fitting uses exactly one kernel, got {}", kernels.len());
            }
            let opts = cfg.krr.clone().unwrap_or_default();
            let plan = CvPlan {
                k: opts.folds,
                grid: opts.grid.clone(),
                seed: opts.seed,
            };
            let (predictor, cv) = krr_fit(y.values().view(), &kernels[0], &plan)?;
            // Dual weights as CSV next to the JSON artifact.
            let alpha_path = cfg.out.with_extension("alpha.csv");
            write_vector(
                &alpha_path,
                &Array1::from(predictor.alpha.clone()),
                TableFormat::Csv,
            )?;
            manifest.record_output(&alpha_path);
            FitArtifact::Krr { predictor, cv }
        }
    };
    let text = serde_json::to_string_pretty(&artifact)?;
    io::write_atomic(&cfg.out, text.as_bytes())?;
    manifest.record_output(&cfg.out);
    let seed = cfg.krr.as_ref().map(|k| k.seed).unwrap_or(0);
    manifest.finish_for_output(&cfg.out, cfg, seed)?;
    match &artifact {
        FitArtifact::Minque { report, .. } => println!(
            "fit: minque theta = {:?}, lambda_hat = {:?} -> {}",
            report.theta,
            report.lambda_hat,
            cfg.out.display()
        ),
        FitArtifact::Krr { predictor, .. } => println!(
            "fit: krr lambda* = {} over {} training samples -> {}",
            predictor.lambda,
            predictor.alpha.len(),
            cfg.out.display()
        ),
    }
    Ok(())
}

/// `predict`: apply a fit artifact to kernel blocks.
pub fn cmd_predict(cfg: &PredictConfig, config_path: &Path) -> Result<()> {
    let mut manifest = RunManifest::begin("predict", config_path);
    let text = std::fs::read_to_string(&cfg.fit)
        .with_context(|| format!("cannot read fit artifact {}", cfg.fit.display()))?;
    let artifact: FitArtifact = serde_json::from_str(&text)
        .with_context(|| format!("invalid fit artifact {}", cfg.fit.display()))?;
    let cross = read_matrix(&cfg.kernel_cross, fmt(&cfg.kernel_cross))
        .with_context(|| format!("loading cross kernel {}", cfg.kernel_cross.display()))?;

    let predictions = match artifact {
        FitArtifact::Krr { predictor, .. } => krr_predict(&predictor, cross.view())
            .map_err(|e| {
                anyhow!(
                    "{e} (fit {}, cross kernel {})",
                    cfg.fit.display(),
                    cfg.kernel_cross.display()
                )
            })?,
        FitArtifact::Minque { report, n, .. } => {
            let y_path = cfg.phenotypes_train.as_ref().ok_or_else(|| {
                anyhow!("mixed-model prediction needs phenotypes_train")
            })?;
            let k_path = cfg.kernel_train.as_ref().ok_or_else(|| {
                anyhow!("mixed-model prediction needs kernel_train")
            })?;
            let y_train = load_phenotypes(y_path, fmt(y_path))?;
            let k_train = read_kernel(k_path, fmt(k_path))
                .with_context(|| format!("loading training kernel {}", k_path.display()))?;
            if y_train.len() != n {
                bail!(
                    "fit {} was estimated on {n} samples but {} has {}",
                    cfg.fit.display(),
                    y_path.display(),
                    y_train.len()
                );
            }
            let vc = VarianceComponents {
                theta: report.theta.clone(),
                beta: report.beta.clone(),
                constrained: report.constrained,
            };
            let (z_train, z_test) = match (&cfg.covariates_train, &cfg.covariates_test) {
                (Some(zt), Some(zs)) => (
                    Some(read_matrix(zt, fmt(zt))?),
                    Some(read_matrix(zs, fmt(zs))?),
                ),
                (None, None) if cfg.intercept => (
                    Some(Array2::from_elem((y_train.len(), 1), 1.0)),
                    Some(Array2::from_elem((cross.nrows(), 1), 1.0)),
                ),
                (None, None) => (None, None),
                _ => bail!("covariates_train and covariates_test must be given together"),
            };
            blup_fit_predict(
                y_train.values().view(),
                &k_train,
                cross.view(),
                z_train.as_ref().map(|z| z.view()),
                z_test.as_ref().map(|z| z.view()),
                &vc,
            )
            .map_err(|e| {
                anyhow!(
                    "{e} (train kernel {}, cross kernel {})",
                    k_path.display(),
                    cfg.kernel_cross.display()
                )
            })?
            .predictions
        }
    };
    write_vector(&cfg.out, &predictions, fmt(&cfg.out))?;
    manifest.record_output(&cfg.out);
    manifest.finish_for_output(&cfg.out, cfg, 0)?;
    println!(
        "predict: wrote {} predictions -> {}",
        predictions.len(),
        cfg.out.display()
    );
    Ok(())
}

/// `campaign`: results, summary, and diagnostics tables.
pub fn cmd_campaign(cfg: &CampaignConfig, config_path: &Path, threads: usize) -> Result<()> {
    let mut manifest = RunManifest::begin("campaign", config_path);
    let outcome = run_campaign(&cfg.scenario, &cfg.methods, threads)?;
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output dir {}", cfg.out.display()))?;
    let results_path = cfg.out.join("results.csv");
    let summary_path = cfg.out.join("summary.csv");
    let diagnostics_path = cfg.out.join("diagnostics.csv");
    io::write_atomic(
        &results_path,
        simlab::results_to_csv(&outcome.rows).as_bytes(),
    )?;
    let summary = summarize(&outcome.rows);
    io::write_atomic(&summary_path, simlab::summary_to_csv(&summary).as_bytes())?;
    io::write_atomic(
        &diagnostics_path,
        simlab::diagnostics_to_csv(&outcome.diagnostics).as_bytes(),
    )?;
    manifest.record_output(&results_path);
    manifest.record_output(&summary_path);
    manifest.record_output(&diagnostics_path);
    manifest.finish(&cfg.out, cfg, cfg.scenario.seed)?;
    println!("campaign: {} rows -> {}", outcome.rows.len(), results_path.display());
    for row in &summary {
        println!(
            "  {:<12} median r = {:+.3} ({} ok, {} failed, {:.2}s/rep)",
            row.method.to_string(),
            row.median_correlation,
            row.successes,
            row.failures,
            row.mean_seconds
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub equivalence_instances: usize,
    pub equivalence_max_gap: f64,
    pub equivalence_bound: f64,
    pub equivalence_pass: bool,
    pub convergence_medians: Vec<(usize, f64)>,
    pub convergence_pass: bool,
    pub pass: bool,
}

/// `verify`: mixed-model/ridge equivalence gaps and NTK width convergence.
pub fn cmd_verify(cfg: &VerifyConfig, config_path: &Path) -> Result<VerifyReport> {
    let mut manifest = RunManifest::begin("verify", config_path);

    // Equivalence of the BLUP and ridge predictors at matched regularization.
    let sigma_grid = [0.5, 1.0, 2.0];
    let mut max_gap = 0.0f64;
    let mut max_bound = 0.0f64;
    let mut equivalence_pass = true;
    for i in 0..cfg.equivalence_instances {
        let inst_seed = derive_seed(cfg.seed, 1000 + i as u64);
        let n = 10 + (inst_seed as usize % cfg.equivalence_max_n.saturating_sub(9).max(1));
        let p = 4 + (inst_seed as usize % 7);
        let geno = simulate_genotypes(n, p, (0.1, 0.5), 1.0, inst_seed)?;
        let kernel = if i % 2 == 0 {
            grm_kernel(&geno)?
        } else {
            let (centered, _) = standardize(&geno, StandardizeMode::CenterOnly)?;
            empirical_ntk(
                &centered,
                &NtkBuildConfig {
                    width: 128,
                    depth: 3,
                    chunk_size: 16,
                    num_inits: 1,
                    seed: inst_seed,
                    normalize: true,
                },
            )?
        };
        let mut y = Array1::<f64>::zeros(n);
        let mut state = inst_seed;
        for v in y.iter_mut() {
            state = derive_seed(state, 17);
            *v = (state % 10_000) as f64 / 2_500.0 - 2.0;
        }
        let sigma_g2 = sigma_grid[i % 3];
        let sigma_e2 = sigma_grid[(i / 3) % 3];
        let gap = check_lmm_krr_equivalence(y.view(), &kernel, sigma_g2, sigma_e2)?;
        let y_inf = y.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let bound = 1e-8 * (1.0 + y_inf);
        if gap > bound {
            equivalence_pass = false;
        }
        max_gap = max_gap.max(gap);
        max_bound = max_bound.max(bound);
    }
    println!(
        "verify: equivalence max gap {max_gap:.3e} over {} instances (bound {max_bound:.3e}) -> {}",
        cfg.equivalence_instances,
        if equivalence_pass { "pass" } else { "FAIL" }
    );

    // Width convergence of the empirical NTK toward the analytic kernel.
    let geno = simulate_genotypes(10, 5, (0.1, 0.5), 1.0, derive_seed(cfg.seed, 2))?;
    let sweep = ConvergenceSweep::new(
        vec![3],
        cfg.convergence_widths.clone(),
        (0..cfg.convergence_seeds as u64).collect(),
    );
    let rows = width_convergence_report(&geno, &sweep)?;
    let medians = median_deviation_by_width(&rows, 3);
    let convergence_pass = medians.windows(2).all(|w| w[1].1 < w[0].1);
    for (w, d) in &medians {
        println!("verify: convergence width {w:>5} median max deviation {d:.4e}");
    }
    println!(
        "verify: deviation decreases with width -> {}",
        if convergence_pass { "pass" } else { "FAIL" }
    );

    let report = VerifyReport {
        equivalence_instances: cfg.equivalence_instances,
        equivalence_max_gap: max_gap,
        equivalence_bound: max_bound,
        equivalence_pass,
        convergence_medians: medians,
        convergence_pass,
        pass: equivalence_pass && convergence_pass,
    };
    let text = serde_json::to_string_pretty(&report)?;
    io::write_atomic(&cfg.out, text.as_bytes())?;
    manifest.record_output(&cfg.out);
    manifest.finish_for_output(&cfg.out, cfg, cfg.seed)?;
    Ok(report)
}

/// `summary`: aggregate an existing results table.
pub fn cmd_summary(cfg: &SummaryConfig, config_path: &Path) -> Result<()> {
    let mut manifest = RunManifest::begin("summary", config_path);
    let text = std::fs::read_to_string(&cfg.results)
        .with_context(|| format!("cannot read results {}", cfg.results.display()))?;
    let rows = simlab::parse_results_csv(&text)?;
    let summary = summarize(&rows);
    let csv = simlab::summary_to_csv(&summary);
    io::write_atomic(&cfg.out, csv.as_bytes())?;
    manifest.record_output(&cfg.out);
    manifest.finish_for_output(&cfg.out, cfg, 0)?;
    print!("{csv}");
    Ok(())
}
