//! Slow reference solvers for validating the Sinkhorn solvers on small
//! instances.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, MassVector};
use crate::sinkhorn::{primal_objective, Plan};

/// Largest side accepted by [`brute_force_assignment`].
pub const MAX_ASSIGNMENT_SIZE: usize = 8;
/// Largest number of plan entries accepted by [`uot_projected_gradient`].
pub const MAX_GRADIENT_ENTRIES: usize = 1024;
/// Entries of oracle plans never drop below this.
pub const PLAN_FLOOR: f64 = 1e-30;
pub const DEFAULT_STEP_SIZE: f64 = 0.1;
/// Consecutive rejected steps after which the descent is declared diverged.
pub const MAX_REJECTED_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// Row `i` is matched to column `permutation[i]`.
    pub permutation: Vec<usize>,
    pub cost: f64,
}

/// Rearranges `p` into the next permutation in lexicographic order; false
/// once `p` is the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = p.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = p.iter().rposition(|&x| x > p[i]).expect("a larger element exists past the pivot");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// Exact linear assignment by enumerating all `n!` permutations in
/// lexicographic order. Only strict improvements replace the incumbent, so ties
/// resolve to the lexicographically smallest permutation.
pub fn brute_force_assignment(cost: &CostMatrix) -> Result<AssignmentResult> {
    let (n, m) = cost.shape();
    if n != m {
        return Err(Error::ShapeMismatch {
            context: "assignment needs a square cost matrix",
            expected: (n, n),
            found: (n, m),
        });
    }
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::TooLarge {
            n,
            limit: MAX_ASSIGNMENT_SIZE,
        });
    }
    let c = cost.as_array();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = AssignmentResult {
        cost: total(&perm),
        permutation: perm.clone(),
    };
    while next_permutation(&mut perm) {
        let value = total(&perm);
        if value < best.cost {
            best = AssignmentResult {
                cost: value,
                permutation: perm.clone(),
            };
        }
    }
    Ok(best)
}

/// Gradient of [`primal_objective`] with respect to the plan:
/// `C_ij + tau ln(r_i / alpha_i) + tau ln(c_j / beta_j) + eta ln(T_ij / (alpha_i beta_j))`,
/// where `r` and `c` are the row and column sums of `T`. Requires `T > 0`.
pub fn uot_gradient(plan: &Plan, cost: &CostMatrix, alpha: &MassVector, beta: &MassVector, eta: f64, tau: f64) -> Plan {
    let rows = plan.sum_axis(ndarray::Axis(1));
    let cols = plan.sum_axis(ndarray::Axis(0));
    let (a, b, c) = (alpha.as_array(), beta.as_array(), cost.as_array());
    Array2::from_shape_fn(plan.dim(), |(i, j)| {
        c[[i, j]]
            + tau * (rows[i] / a[i]).ln()
            + tau * (cols[j] / b[j]).ln()
            + eta * (plan[[i, j]] / (a[i] * b[j])).ln()
    })
}

/// Minimizes the entropic unbalanced objective by exponentiated gradient
/// descent, `T <- max(T exp(-s grad), 1e-30)`, starting from
/// `alpha_i beta_j / sqrt(|alpha| |beta|)`.
///
/// A step that raises the objective is undone and `s` halved; an accepted step
/// lets `s` double back up to `step_size`. Runs exactly `steps` iterations
/// unless [`MAX_REJECTED_STEPS`] rejections happen in a row.
pub fn uot_projected_gradient(
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    eta: f64,
    tau: f64,
    steps: usize,
    step_size: f64,
) -> Result<Plan> {
    let (nx, nz) = cost.shape();
    if nx * nz > MAX_GRADIENT_ENTRIES {
        return Err(Error::TooLarge {
            n: nx * nz,
            limit: MAX_GRADIENT_ENTRIES,
        });
    }
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::InvalidOptions(format!("step_size must be positive, got {step_size}")));
    }
    if !(eta > 0.0) || !(tau > 0.0) || !eta.is_finite() || !tau.is_finite() {
        return Err(Error::InvalidOptions(format!("eta and tau must be positive, got {eta} and {tau}")));
    }
    let (a, b) = (alpha.as_array(), beta.as_array());
    if a.len() != nx || b.len() != nz {
        return Err(Error::ShapeMismatch {
            context: "masses vs cost",
            expected: (nx, nz),
            found: (a.len(), b.len()),
        });
    }

    let scale = (alpha.total() * beta.total()).sqrt();
    let mut plan = Array2::from_shape_fn((nx, nz), |(i, j)| (a[i] * b[j] / scale).max(PLAN_FLOOR));
    let mut value = primal_objective(plan.view(), cost, alpha, beta, eta, tau)?;
    let mut s = step_size;
    let mut rejected = 0;
    for step in 0..steps {
        let grad = uot_gradient(&plan, cost, alpha, beta, eta, tau);
        let trial = Array2::from_shape_fn((nx, nz), |ij| (plan[ij] * (-s * grad[ij]).exp()).max(PLAN_FLOOR));
        let trial_value = primal_objective(trial.view(), cost, alpha, beta, eta, tau)?;
        if trial_value <= value {
            plan = trial;
            value = trial_value;
            s = (2.0 * s).min(step_size);
            rejected = 0;
        } else {
            s *= 0.5;
            rejected += 1;
            if rejected >= MAX_REJECTED_STEPS {
                return Err(Error::Diverged { step });
            }
        }
    }
    Ok(plan)
}
