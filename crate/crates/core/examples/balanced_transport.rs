//! Balanced entropic transport between two random measures of equal mass.
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uft::measures::{CostMatrix, MassVector};
use uft::sinkhorn::{solve_balanced, SolverOptions};

fn main() -> uft::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cost = CostMatrix::new(Array2::from_shape_fn((5, 7), |_| rng.random_range(0.0..2.0)))?;
    let alpha = MassVector::uniform(5, 1.0)?;
    let beta = MassVector::new(Array1::from_elem(7, 1.0 / 7.0))?;
    let sol = solve_balanced(&cost, &alpha, &beta, &SolverOptions::default().with_eta(1e-2))?;
    println!("{} sweeps, converged {}", sol.iters, sol.converged);
    println!("plan\n{:.4}", sol.plan);
    println!("row sums {:.6}", sol.row_marginal());
    println!("col sums {:.6}", sol.col_marginal());
    println!("transport cost {:.6}, primal {:.6}, dual {:.6}", sol.transport_cost(&cost), sol.primal, sol.dual);
    Ok(())
}
