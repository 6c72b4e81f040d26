//! Primal and dual objectives of entropic (unbalanced) transport.
//!
//! The entropic term is taken relative to the product measure `alpha (x) beta`,
//! i.e. `eta * sum_ij T_ij (ln(T_ij / (alpha_i beta_j)) - 1)`. With that choice
//! the mass-weighted dual below is the exact Fenchel dual of the primal, the
//! recovered plan has the form `alpha_i beta_j exp((u_i + v_j - C_ij) / eta)`,
//! and primal and dual values coincide at the optimum.

use ndarray::{Array1, ArrayView1, ArrayView2};

use super::kernel::log_sum_exp;
use crate::error::{Error, Result};
use crate::measures::{CostMatrix, MassVector};

/// Generalized Kullback-Leibler divergence `sum a ln(a/b) - a + b`, with `0 ln 0 = 0`.
pub fn kl_divergence(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&ai, &bi)| {
            if ai == 0.0 {
                bi
            } else {
                ai * (ai / bi).ln() - ai + bi
            }
        })
        .sum()
}

/// Shannon entropy `-sum T ln T` of a nonnegative plan, with `0 ln 0 = 0`.
pub fn entropy(plan: ArrayView2<'_, f64>) -> f64 {
    -plan
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| t * t.ln())
        .sum::<f64>()
}

fn check_plan(plan: ArrayView2<'_, f64>, cost: &CostMatrix, alpha: &MassVector, beta: &MassVector) -> Result<()> {
    let shape = cost.shape();
    if plan.dim() != shape {
        return Err(Error::ShapeMismatch {
            context: "plan vs cost",
            expected: shape,
            found: plan.dim(),
        });
    }
    check_masses(cost, alpha, beta)?;
    for ((row, col), &value) in plan.indexed_iter() {
        if value < 0.0 {
            return Err(Error::NegativePlanEntry { row, col, value });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("transport plan"));
        }
    }
    Ok(())
}

pub(crate) fn check_masses(cost: &CostMatrix, alpha: &MassVector, beta: &MassVector) -> Result<()> {
    let (nx, nz) = cost.shape();
    if alpha.len() != nx {
        return Err(Error::LengthMismatch {
            context: "alpha vs cost rows",
            expected: nx,
            found: alpha.len(),
        });
    }
    if beta.len() != nz {
        return Err(Error::LengthMismatch {
            context: "beta vs cost columns",
            expected: nz,
            found: beta.len(),
        });
    }
    Ok(())
}

fn check_duals(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, cost: &CostMatrix) -> Result<()> {
    let (nx, nz) = cost.shape();
    if u.len() != nx {
        return Err(Error::LengthMismatch {
            context: "u vs cost rows",
            expected: nx,
            found: u.len(),
        });
    }
    if v.len() != nz {
        return Err(Error::LengthMismatch {
            context: "v vs cost columns",
            expected: nz,
            found: v.len(),
        });
    }
    if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("dual potentials"));
    }
    Ok(())
}

/// `<C, T> + eta * sum T (ln(T / (alpha beta)) - 1)`; the part shared by
/// balanced and unbalanced objectives.
fn entropic_cost(plan: ArrayView2<'_, f64>, cost: &CostMatrix, alpha: &MassVector, beta: &MassVector, eta: f64) -> f64 {
    let a = alpha.as_array();
    let b = beta.as_array();
    let mut transport = 0.0;
    let mut ent = 0.0;
    for ((i, j), &t) in plan.indexed_iter() {
        if t > 0.0 {
            transport += cost.as_array()[[i, j]] * t;
            ent += t * ((t / (a[i] * b[j])).ln() - 1.0);
        }
    }
    transport + eta * ent
}

/// Entropic unbalanced objective
/// `<C,T> + tau KL(T1 | alpha) + tau KL(T^T 1 | beta) + eta sum T (ln(T/(alpha beta)) - 1)`.
pub fn primal_objective(
    plan: ArrayView2<'_, f64>,
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    eta: f64,
    tau: f64,
) -> Result<f64> {
    check_plan(plan, cost, alpha, beta)?;
    let rows: Array1<f64> = plan.sum_axis(ndarray::Axis(1));
    let cols: Array1<f64> = plan.sum_axis(ndarray::Axis(0));
    let marginal = kl_divergence(rows.view(), alpha.as_array().view())
        + kl_divergence(cols.view(), beta.as_array().view());
    Ok(entropic_cost(plan, cost, alpha, beta, eta) + tau * marginal)
}

/// Objective of the balanced entropic problem; marginal constraints are
/// assumed to hold and are not penalized.
pub fn balanced_primal_objective(
    plan: ArrayView2<'_, f64>,
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    eta: f64,
) -> Result<f64> {
    check_plan(plan, cost, alpha, beta)?;
    Ok(entropic_cost(plan, cost, alpha, beta, eta))
}

/// `eta * sum_ij alpha_i beta_j exp((u_i + v_j - C_ij) / eta)`, accumulated in the log domain.
fn weighted_exp_term(
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    eta: f64,
) -> Result<f64> {
    let la = alpha.log();
    let lb = beta.log();
    let c = cost.as_array();
    let row_lse: Vec<f64> = (0..u.len())
        .map(|i| {
            log_sum_exp(
                (0..v.len()).map(|j| la[i] + lb[j] + (u[i] + v[j] - c[[i, j]]) / eta),
            )
        })
        .collect();
    let total = eta * log_sum_exp(row_lse.into_iter()).exp();
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFinite("dual exponential term"))
    }
}

/// Conjugate of `tau KL(. | mass)` evaluated at `-potential`:
/// `tau * sum mass (exp(-potential / tau) - 1)`.
fn kl_conjugate_at_negative(potential: ArrayView1<'_, f64>, mass: &MassVector, tau: f64) -> f64 {
    potential
        .iter()
        .zip(mass.as_array().iter())
        .map(|(&p, &m)| tau * m * (-p / tau).exp_m1())
        .sum()
}

/// Dual of entropic unbalanced transport,
/// `-F*(-u) - G*(-v) - eta sum alpha_i beta_j exp((u_i + v_j - C_ij)/eta)`.
pub fn dual_objective(
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    eta: f64,
    tau: f64,
) -> Result<f64> {
    check_masses(cost, alpha, beta)?;
    check_duals(u, v, cost)?;
    let value = -kl_conjugate_at_negative(u, alpha, tau) - kl_conjugate_at_negative(v, beta, tau)
        - weighted_exp_term(u, v, cost, alpha, beta, eta)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("dual objective"))
    }
}

/// Dual of balanced entropic transport, the `tau -> infinity` limit of
/// [`dual_objective`]: `<u, alpha> + <v, beta> - eta sum alpha_i beta_j exp(...)`.
pub fn balanced_dual_objective(
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    eta: f64,
) -> Result<f64> {
    check_masses(cost, alpha, beta)?;
    check_duals(u, v, cost)?;
    let value = u.dot(alpha.as_array()) + v.dot(beta.as_array())
        - weighted_exp_term(u, v, cost, alpha, beta, eta)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("dual objective"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn one() -> MassVector {
        MassVector::from_vec(vec![1.0]).unwrap()
    }

    #[test]
    fn dual_at_zero_single_cell() {
        let c = CostMatrix::new(array![[0.0]]).unwrap();
        let u = array![0.0];
        let v = array![0.0];
        let d = dual_objective(u.view(), v.view(), &c, &one(), &one(), 1.0, 1.0).unwrap();
        assert!((d + 1.0).abs() < 1e-15, "{d}");
    }

    #[test]
    fn primal_of_empty_plan_is_twice_tau() {
        let c = CostMatrix::new(array![[0.7]]).unwrap();
        let t = Array2::zeros((1, 1));
        for tau in [0.1, 1.0, 10.0] {
            let p = primal_objective(t.view(), &c, &one(), &one(), 0.3, tau).unwrap();
            assert!((p - 2.0 * tau).abs() < 1e-15);
        }
    }

    #[test]
    fn marginal_terms_vanish_on_feasible_plans() {
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.5]]).unwrap();
        let alpha = MassVector::from_vec(vec![0.3, 0.7]).unwrap();
        let beta = MassVector::from_vec(vec![0.4, 0.6]).unwrap();
        let t = array![[0.2, 0.1], [0.2, 0.5]];
        let eta = 0.05;
        let full = primal_objective(t.view(), &c, &alpha, &beta, eta, 3.0).unwrap();
        let balanced = balanced_primal_objective(t.view(), &c, &alpha, &beta, eta).unwrap();
        assert!((full - balanced).abs() < 1e-15);
    }

    #[test]
    fn entropic_term_relates_to_shannon_entropy() {
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.5]]).unwrap();
        let alpha = MassVector::from_vec(vec![0.3, 0.7]).unwrap();
        let beta = MassVector::from_vec(vec![0.4, 0.6]).unwrap();
        let t = array![[0.2, 0.0], [0.25, 0.5]];
        let eta = 0.1;
        let got = balanced_primal_objective(t.view(), &c, &alpha, &beta, eta).unwrap();
        let mut expected = -eta * entropy(t.view());
        for ((i, j), &x) in t.indexed_iter() {
            expected += x * c.as_array()[[i, j]]
                - eta * x * (alpha.as_array()[i] * beta.as_array()[j]).ln()
                - eta * x;
        }
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn negative_plan_entries_are_rejected() {
        let c = CostMatrix::new(array![[0.0, 1.0]]).unwrap();
        let beta = MassVector::from_vec(vec![0.5, 0.5]).unwrap();
        let t = array![[0.5, -1e-9]];
        assert!(matches!(
            primal_objective(t.view(), &c, &one(), &beta, 0.1, 1.0),
            Err(Error::NegativePlanEntry { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn kl_of_equal_vectors_is_zero() {
        let a = array![0.1, 2.0, 3.5];
        assert_eq!(kl_divergence(a.view(), a.view()), 0.0);
        assert_eq!(kl_divergence(array![0.0].view(), array![1.0].view()), 1.0);
    }

    #[test]
    fn dual_overflow_is_reported() {
        let c = CostMatrix::new(array![[0.0]]).unwrap();
        let u = array![1.0];
        let v = array![0.0];
        assert!(matches!(
            dual_objective(u.view(), v.view(), &c, &one(), &one(), 1e-4, 1.0),
            Err(Error::NonFinite(_))
        ));
    }
}
