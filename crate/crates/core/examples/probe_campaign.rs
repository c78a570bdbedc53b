use ntkrisk::simlab::*;
use std::time::Instant;

fn main() {
    let model = match std::env::args().nth(1).as_deref() {
        Some("linear") => ScenarioModel::Linear,
        _ => ScenarioModel::Ricker,
    };
    let reps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let sg2: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let se2: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let spec = ScenarioSpec {
        model,
        alpha: 2.0,
        sigma_g2: sg2,
        sigma_e2: se2,
        n: 500,
        p: 20,
        replicates: reps,
        train_fraction: 0.8,
        seed: 20240810,
        maf_range: (0.05, 0.5),
        ld_decay: 1.0,
    };
    let methods = [Method::NtkKrr, Method::NtkLmm, Method::ProductLmm];
    let t0 = Instant::now();
    let out = run_campaign(&spec, &methods, 2).unwrap();
    let h2: Vec<f64> = out.diagnostics.iter().map(|d| d.heritability_proxy).collect();
    let vm: Vec<f64> = out.diagnostics.iter().map(|d| d.var_signal).collect();
    println!(
        "campaign elapsed {:.1}s  mean var_m={:.4e} mean h2={:.3}",
        t0.elapsed().as_secs_f64(),
        vm.iter().sum::<f64>() / vm.len() as f64,
        h2.iter().sum::<f64>() / h2.len() as f64
    );
    for s in summarize(&out.rows) {
        println!(
            "{:<12} median={:+.3} mean={:+.3} sd={:.3} ok={} fail={} {:.2}s/rep",
            s.method.to_string(),
            s.median_correlation,
            s.mean_correlation,
            s.sd_correlation,
            s.successes,
            s.failures,
            s.mean_seconds
        );
    }
}
