//! A 64x64 grid of 128-dimensional features at eta = 1e-4.
//! Pass a thread count as the first argument.
use std::time::Instant;
use uft::measures::{compute_masses, cosine_cost_matrix};
use uft::sinkhorn::{solve_unbalanced, SolverOptions};
use uft::synth::{gen_clustered_pair, SynthSpec};

fn main() -> uft::Result<()> {
    let threads = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let spec = SynthSpec { n: 4096, d: 128, k: 8, outlier_frac: 0.1, spread: 0.5, seed: 7 };
    let pair = gen_clustered_pair(&spec)?;
    let cost = cosine_cost_matrix(&pair.x, &pair.z)?;
    let (alpha, beta) = compute_masses(&pair.x, &pair.z)?;
    let start = Instant::now();
    let sol = solve_unbalanced(&cost, &alpha, &beta, &SolverOptions::default().with_eta(1e-4).with_threads(threads))?;
    println!(
        "{threads} threads: {} sweeps in {:.2?}, converged {}, transported mass {:.4} of {:.4}",
        sol.iters,
        start.elapsed(),
        sol.converged,
        sol.total_mass(),
        alpha.total()
    );
    Ok(())
}
