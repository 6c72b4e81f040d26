//! Solvers against brute-force assignment and projected gradient descent.
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uft::measures::{CostMatrix, MassVector};
use uft::metrics::argmax_match_plan;
use uft::oracle::{brute_force_assignment, uot_projected_gradient, DEFAULT_STEP_SIZE};
use uft::sinkhorn::{primal_objective, solve_balanced, solve_unbalanced, SolverOptions};

fn main() -> uft::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let cost = CostMatrix::new(Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..2.0)))?;
    let uniform = MassVector::uniform(n, 1.0)?;
    let exact = brute_force_assignment(&cost)?;
    let sol = solve_balanced(&cost, &uniform, &uniform, &SolverOptions::default().with_eta(1e-3))?;
    println!("assignment {:?} cost {:.5}", exact.permutation, exact.cost / n as f64);
    println!("sinkhorn   {:?} cost {:.5}", argmax_match_plan(sol.plan.view())?, sol.transport_cost(&cost));

    let alpha = MassVector::new(Array1::from_shape_fn(n, |_| rng.random_range(0.1..1.0)))?;
    let beta = MassVector::new(Array1::from_shape_fn(n, |_| rng.random_range(0.1..1.0)))?;
    let (eta, tau) = (1e-2, 1.0);
    let sol = solve_unbalanced(&cost, &alpha, &beta, &SolverOptions::default().with_eta(eta).with_tau(tau))?;
    let descent = uot_projected_gradient(&cost, &alpha, &beta, eta, tau, 20_000, DEFAULT_STEP_SIZE)?;
    let reference = primal_objective(descent.view(), &cost, &alpha, &beta, eta, tau)?;
    println!("unbalanced primal: sinkhorn {:.8}, gradient descent {:.8}", sol.primal, reference);
    Ok(())
}
