//! Marginal relaxation: how the transported mass responds to tau.
use ndarray::array;
use uft::measures::{CostMatrix, MassVector};
use uft::sinkhorn::{solve_balanced, solve_unbalanced, SolverOptions};

fn main() -> uft::Result<()> {
    // The last exemplar point is far from everything.
    let cost = CostMatrix::new(array![[0.0, 0.4, 2.0], [0.4, 0.0, 2.0]])?;
    let alpha = MassVector::new(array![0.5, 0.5])?;
    let beta = MassVector::new(array![0.4, 0.4, 0.2])?;
    let bal = solve_balanced(&cost, &alpha, &beta, &SolverOptions::default().with_eta(1e-2))?;
    println!("balanced: mass on far point {:.4}", bal.col_marginal()[2]);
    for tau in [0.01, 0.1, 1.0, 10.0, 1000.0] {
        let sol = solve_unbalanced(&cost, &alpha, &beta, &SolverOptions::default().with_eta(1e-2).with_tau(tau))?;
        println!(
            "tau {tau:>7}: total {:.4}, mass on far point {:.2e}, sweeps {}",
            sol.total_mass(),
            sol.col_marginal()[2],
            sol.iters
        );
    }
    Ok(())
}
