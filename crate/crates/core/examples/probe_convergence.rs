use ntkrisk::genodata::simulate_genotypes;
use ntkrisk::ntk::{median_deviation_by_width, width_convergence_report, ConvergenceSweep};
use std::time::Instant;

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let top: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(4096);
    let geno = simulate_genotypes(20, 10, (0.05, 0.5), 1.0, 12345).unwrap();
    let widths: Vec<usize> = vec![256, 1024, 4096].into_iter().filter(|&w| w <= top).collect();
    let sweep = ConvergenceSweep::new(vec![3], widths, (0..seeds).collect());
    let t0 = Instant::now();
    let rows = width_convergence_report(&geno, &sweep).unwrap();
    let medians = median_deviation_by_width(&rows, 3);
    println!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
    for (w, d) in &medians {
        println!("m={w:>5}  median max dev = {d:.6e}");
    }
    for pair in medians.windows(2) {
        println!(
            "ratio dev({})/dev({}) = {:.3}",
            pair[0].0,
            pair[1].0,
            pair[0].1 / pair[1].1
        );
    }
}
