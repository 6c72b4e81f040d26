mod common;

use common::{naive_primal, random_cost, random_mass, rng};
use ndarray::{array, Array2};
use rand::Rng;
use uft::measures::{CostMatrix, MassVector};
use uft::oracle::*;
use uft::sinkhorn::{solve_balanced, solve_unbalanced, SolverOptions};

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(41);
    let h = 1e-5;
    for _ in 0..10 {
        let cost = random_cost(&mut r, 4, 4);
        let (a, b) = (random_mass(&mut r, 4), random_mass(&mut r, 4));
        let (eta, tau) = (1e-2, r.random_range(0.1..10.0));
        let plan = Array2::from_shape_fn((4, 4), |_| r.random_range(0.05..1.0));
        let grad = uot_gradient(&plan, &cost, &a, &b, eta, tau);
        for i in 0..4 {
            for j in 0..4 {
                let mut up = plan.clone();
                let mut down = plan.clone();
                up[[i, j]] += h;
                down[[i, j]] -= h;
                let fd = (naive_primal(&up, &cost, &a, &b, eta, tau) - naive_primal(&down, &cost, &a, &b, eta, tau)) / (2.0 * h);
                let g = grad[[i, j]];
                assert!((g - fd).abs() <= 1e-4 * g.abs().max(1e-3), "({i},{j}): {g} vs {fd}");
            }
        }
    }
}

#[test]
fn single_cell_agrees_with_solver() {
    let one = MassVector::from_vec(vec![1.0]).unwrap();
    let cost = CostMatrix::new(array![[0.9]]).unwrap();
    let (eta, tau) = (1e-2, 0.5);
    let oracle = uot_projected_gradient(&cost, &one, &one, eta, tau, 2000, DEFAULT_STEP_SIZE).unwrap();
    let sol = solve_unbalanced(&cost, &one, &one, &SolverOptions::default().with_eta(eta).with_tau(tau)).unwrap();
    assert!((oracle[[0, 0]] - sol.plan[[0, 0]]).abs() < 1e-4);
}

#[test]
fn large_tau_concentrates_on_assignment() {
    let mut r = rng(43);
    let uniform = MassVector::uniform(4, 1.0).unwrap();
    for _ in 0..3 {
        let cost = random_cost(&mut r, 4, 4);
        let perm = brute_force_assignment(&cost).unwrap().permutation;
        let plan = uot_projected_gradient(&cost, &uniform, &uniform, 1e-3, 1e3, 200_000, DEFAULT_STEP_SIZE).unwrap();
        let off: f64 = plan
            .indexed_iter()
            .filter(|((i, j), _)| perm[*i] != *j)
            .map(|(_, t)| t)
            .sum();
        assert!(off < 1e-2, "off-support mass {off}");
    }
}

#[test]
fn primal_matches_solver_on_small_instances() {
    let mut r = rng(47);
    for k in 0..6 {
        let (nx, nz) = (r.random_range(2..=8), r.random_range(2..=8));
        let cost = random_cost(&mut r, nx, nz);
        let (a, b) = (random_mass(&mut r, nx), random_mass(&mut r, nz));
        let eta = [1e-2, 1e-3][k % 2];
        let tau = [0.1, 1.0, 10.0][k % 3];
        let oracle = uot_projected_gradient(&cost, &a, &b, eta, tau, 5000, DEFAULT_STEP_SIZE).unwrap();
        assert!(oracle.iter().all(|&t| t >= 1e-30));
        let sol = solve_unbalanced(&cost, &a, &b, &SolverOptions::default().with_eta(eta).with_tau(tau)).unwrap();
        let want = naive_primal(&oracle, &cost, &a, &b, eta, tau);
        assert!((sol.primal - want).abs() <= 5e-3 * want.abs(), "{} vs {want}", sol.primal);
    }
}

#[test]
fn assignment_bounds_balanced_transport_cost() {
    let mut r = rng(53);
    let n = 5;
    let uniform = MassVector::uniform(n, 1.0).unwrap();
    let eta = 1e-3;
    // Entropic bias bound: eta ln(n!) / n.
    let bias = eta * (1..=n).map(|k| (k as f64).ln()).sum::<f64>() / n as f64;
    for _ in 0..10 {
        let cost = random_cost(&mut r, n, n);
        let oracle = brute_force_assignment(&cost).unwrap();
        let sol = solve_balanced(&cost, &uniform, &uniform, &SolverOptions::default().with_eta(eta)).unwrap();
        assert!(oracle.cost / n as f64 <= sol.transport_cost(&cost) / sol.total_mass() + bias);
    }
}

#[test]
fn permutations_are_bijections() {
    let mut r = rng(59);
    for n in 1..=7 {
        let cost = random_cost(&mut r, n, n);
        let result = brute_force_assignment(&cost).unwrap();
        let mut seen = result.permutation.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let total: f64 = result.permutation.iter().enumerate().map(|(i, &j)| cost.as_array()[[i, j]]).sum();
        assert!((total - result.cost).abs() < 1e-12);
    }
}
