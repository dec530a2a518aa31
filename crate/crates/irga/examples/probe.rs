use irga::*;
use irga::exact_posterior::gprior_log_marginal;
use irga::synthetic::{generate, Scenario};
fn main() {
    let beta0 = [2.0, -2.0, 2.0, 0.0];
    let gamma0: u32 = 0b0111;
    let ns = [100usize, 200, 400, 800, 1600];
    let mut medians = Vec::new();
    for &n in &ns {
        let mut probs = Vec::new();
        for seed in 0..20u64 {
            let (data, _) = generate(&Scenario::Consistency { n, beta0, sigma2: 1.0, seed: 40 + seed }).unwrap();
            let g_n = n as f64;
            let mut lms = Vec::new();
            for mask in 0u32..16 {
                let idx: Vec<usize> = (0..4).filter(|j| mask >> j & 1 == 1).collect();
                let xg = data.x.select_columns(idx.iter());
                lms.push(gprior_log_marginal(&data.y, &xg, g_n, 1.0).unwrap());
            }
            let lse = linalg::log_sum_exp(&lms);
            probs.push((lms[gamma0 as usize] - lse).exp());
        }
        probs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = 0.5 * (probs[9] + probs[10]);
        medians.push(med);
        println!("n={n}: median pr(gamma0|y) = {med:.4}  (min {:.3} max {:.3})", probs[0], probs[19]);
    }
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    println!("monotone: {monotone}; final > 0.95: {}", medians[4] > 0.95);
}
