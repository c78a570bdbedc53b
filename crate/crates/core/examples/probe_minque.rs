use ndarray::Array1;
use ntkrisk::genodata::{simulate_genotypes, standardize, PhenotypeVector, StandardizeMode};
use ntkrisk::kernels::grm_kernel;
use ntkrisk::minque::{minque_fit, MinqueSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

fn main() {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let n = 500;
    let p = 50;
    let mut sum_g = 0.0;
    let mut sum_e = 0.0;
    let t0 = Instant::now();
    for r in 0..reps {
        let geno = simulate_genotypes(n, p, (0.05, 0.5), 1.0, 9000 + r as u64).unwrap();
        let (std_geno, _) = standardize(&geno, StandardizeMode::CenterScale).unwrap();
        let k = grm_kernel(&std_geno).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(777 + r as u64);
        let normal = StandardNormal;
        // g = X w / sqrt(p), w ~ N(0, I); eps ~ N(0, I)
        let w: Array1<f64> = Array1::from_iter((0..p).map(|_| normal.sample(&mut rng)));
        let g = std_geno.values().dot(&w) / (p as f64).sqrt();
        let eps: Array1<f64> = Array1::from_iter((0..n).map(|_| {
            let e: f64 = normal.sample(&mut rng);
            e
        }));
        let y = PhenotypeVector::new(&g + &eps).unwrap();
        let fit = minque_fit(&y, &[k], None, &MinqueSpec::default()).unwrap();
        sum_g += fit.components.theta[1];
        sum_e += fit.components.theta[0];
    }
    println!(
        "reps={reps} mean theta_g={:.4} mean theta_e={:.4} elapsed={:.1}s ({:.2}s/rep)",
        sum_g / reps as f64,
        sum_e / reps as f64,
        t0.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64() / reps as f64
    );
}
