//! Entropic balanced and unbalanced transport solvers in the log domain.
//!
//! Both solvers alternate exact block maximization of the mass-weighted dual:
//!
//! ```text
//! u_i <- -k * eta * ln sum_j beta_j  exp((v_j - C_ij) / eta)
//! v_j <- -k * eta * ln sum_i alpha_i exp((u_i - C_ij) / eta)
//! ```
//!
//! with `k = tau / (tau + eta)` for the unbalanced problem and `k = 1` for the
//! balanced one. The unbalanced solver follows each sweep with the exact
//! maximization along the translation `(u + c, v - c)`, which leaves the plan
//! untouched but removes the slowly decaying common mode when `tau >> eta`.
//! Every few sweeps a damped Newton step on the dual, restricted to entries
//! that are not negligible, handles the remaining slow modes; plain sweeps
//! need on the order of `1/eta` iterations for those.
//! The plan is recovered as `T_ij = alpha_i beta_j exp((u_i + v_j - C_ij) / eta)`.

mod kernel;
mod newton;
mod objective;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::ThreadPool;

pub use kernel::log_sum_exp;
pub use objective::{
    balanced_dual_objective, balanced_primal_objective, dual_objective, entropy, kl_divergence,
    primal_objective,
};

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, MassVector};

/// Transport plan matrix, `n_x x n_z`.
pub type Plan = Array2<f64>;

/// Relative tolerance on total masses accepted by [`solve_balanced`].
pub const BALANCED_TOTAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Entropic coefficient.
    pub eta: f64,
    /// Marginal relaxation strength; ignored by the balanced solver.
    pub tau: f64,
    pub max_iters: usize,
    /// Stop once no potential moves by more than this over a full sweep.
    pub tol: f64,
    /// Worker threads for the row reductions; `1` runs inline.
    pub threads: usize,
    /// Evaluate the full dual objective after every sweep.
    pub record_dual: bool,
    /// Interleave damped Newton steps on the dual with the sweeps.
    pub newton: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            tau: 1.0,
            max_iters: 5000,
            tol: 1e-9,
            threads: 1,
            record_dual: false,
            newton: true,
        }
    }
}

impl SolverOptions {
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn with_newton(mut self, newton: bool) -> Self {
        self.newton = newton;
        self
    }

    pub fn recording_dual(mut self) -> Self {
        self.record_dual = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.eta) {
            return Err(Error::InvalidOptions(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.tau > 0.0) || self.tau.is_nan() {
            return Err(Error::InvalidOptions(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidOptions("max_iters must be at least 1".into()));
        }
        if !positive(self.tol) {
            return Err(Error::InvalidOptions(format!("tol must be positive, got {}", self.tol)));
        }
        if self.threads == 0 {
            return Err(Error::InvalidOptions("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of a solve. `converged == false` means `max_iters` was exhausted;
/// the plan is still the one encoded by the last potentials.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub plan: Plan,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub iters: usize,
    pub converged: bool,
    /// Primal objective of `plan` (balanced or unbalanced, matching the solver).
    pub primal: f64,
    /// Dual objective at `(u, v)`.
    pub dual: f64,
    /// Dual objective after each sweep, when requested.
    pub dual_trace: Vec<f64>,
}

impl TransportSolution {
    pub fn row_marginal(&self) -> Array1<f64> {
        self.plan.sum_axis(Axis(1))
    }

    pub fn col_marginal(&self) -> Array1<f64> {
        self.plan.sum_axis(Axis(0))
    }

    pub fn total_mass(&self) -> f64 {
        self.plan.sum()
    }

    /// `<C, T>`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        (&self.plan * cost.as_array()).sum()
    }
}

/// `T_ij = alpha_i beta_j exp((u_i + v_j - C_ij) / eta)`, exponentiated from the log domain.
pub fn plan_from_duals(
    u: ArrayView1<'_, f64>,
    v: ArrayView1<'_, f64>,
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    eta: f64,
) -> Result<Plan> {
    objective::check_masses(cost, alpha, beta)?;
    let (nx, nz) = cost.shape();
    if u.len() != nx || v.len() != nz {
        return Err(Error::ShapeMismatch {
            context: "duals vs cost",
            expected: (nx, nz),
            found: (u.len(), v.len()),
        });
    }
    let la = alpha.log();
    let lb = beta.log();
    let c = cost.as_array();
    let inv_eta = 1.0 / eta;
    Ok(Array2::from_shape_fn((nx, nz), |(i, j)| {
        (la[i] + lb[j] + (u[i] + v[j] - c[[i, j]]) * inv_eta).exp()
    }))
}

fn check_inputs(cost: &CostMatrix, alpha: &MassVector, beta: &MassVector, opts: &SolverOptions) -> Result<()> {
    opts.validate()?;
    objective::check_masses(cost, alpha, beta)
}

fn thread_pool(threads: usize) -> Result<Option<ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::InvalidOptions(format!("cannot start {threads} worker threads: {e}")))
}

fn run_in<R: Send>(pool: &Option<ThreadPool>, body: impl FnOnce(bool) -> R + Send) -> R {
    match pool {
        Some(pool) => pool.install(|| body(true)),
        None => body(false),
    }
}

/// Sweeps between Newton attempts; doubled after each rejected attempt.
const NEWTON_PERIOD: usize = 10;
const NEWTON_MAX_PERIOD: usize = 640;

/// Per-solve data shared by the sweeps and the Newton steps. `tau == None`
/// selects hard marginals.
struct Prepared<'a> {
    cost: &'a CostMatrix,
    cost_t: Array2<f64>,
    log_alpha: Vec<f64>,
    log_beta: Vec<f64>,
    eta_log_alpha: Vec<f64>,
    eta_log_beta: Vec<f64>,
    eta: f64,
    tau: Option<f64>,
    /// `tau / (tau + eta)`, or 1 for hard marginals.
    relax: f64,
}

impl<'a> Prepared<'a> {
    fn new(cost: &'a CostMatrix, alpha: &MassVector, beta: &MassVector, eta: f64, tau: Option<f64>) -> Self {
        let log_alpha = alpha.log().to_vec();
        let log_beta = beta.log().to_vec();
        Self {
            cost,
            cost_t: cost.as_array().t().as_standard_layout().into_owned(),
            eta_log_alpha: log_alpha.iter().map(|l| eta * l).collect(),
            eta_log_beta: log_beta.iter().map(|l| eta * l).collect(),
            log_alpha,
            log_beta,
            eta,
            tau,
            relax: tau.map_or(1.0, |tau| tau / (tau + eta)),
        }
    }

    fn newton_problem(&self) -> newton::Problem<'_> {
        newton::Problem {
            cost: self.cost.view(),
            cost_t: self.cost_t.view(),
            log_alpha: &self.log_alpha,
            log_beta: &self.log_beta,
            eta: self.eta,
            tau: self.tau,
        }
    }
}

/// Scratch space and screening state of the sweeps.
struct Sweeper {
    offset_z: Vec<f64>,
    offset_x: Vec<f64>,
    scratch_x: Vec<f64>,
    scratch_z: Vec<f64>,
    rows: kernel::ScreenedRows,
    cols: kernel::ScreenedRows,
}

impl Sweeper {
    fn new(nx: usize, nz: usize) -> Self {
        Self {
            offset_z: vec![0.0; nz],
            offset_x: vec![0.0; nx],
            scratch_x: vec![0.0; nx],
            scratch_z: vec![0.0; nz],
            rows: kernel::ScreenedRows::new(nx),
            cols: kernel::ScreenedRows::new(nz),
        }
    }

    /// One `u` then `v` update, followed by the translation step when the
    /// marginals are relaxed. Returns the largest absolute potential change,
    /// or NaN once a potential stops being finite.
    fn sweep(&mut self, p: &Prepared<'_>, u: &mut [f64], v: &mut [f64], parallel: bool) -> f64 {
        for (o, (&lb, &vj)) in self.offset_z.iter_mut().zip(p.eta_log_beta.iter().zip(v.iter())) {
            *o = lb + vj;
        }
        self.rows.reduce(p.cost.view(), &self.offset_z, p.eta, &mut self.scratch_x, parallel);
        let mut delta = 0.0f64;
        for (ui, &s) in u.iter_mut().zip(&self.scratch_x) {
            let next = -p.relax * s;
            delta = delta.max((next - *ui).abs());
            *ui = next;
        }

        for (o, (&la, &ui)) in self.offset_x.iter_mut().zip(p.eta_log_alpha.iter().zip(u.iter())) {
            *o = la + ui;
        }
        self.cols.reduce(p.cost_t.view(), &self.offset_x, p.eta, &mut self.scratch_z, parallel);
        for (vj, &s) in v.iter_mut().zip(&self.scratch_z) {
            let next = -p.relax * s;
            delta = delta.max((next - *vj).abs());
            *vj = next;
        }
        if let Some(tau) = p.tau {
            delta = delta.max(translation_step(u, v, &p.log_alpha, &p.log_beta, tau));
        }
        if delta.is_finite() && u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            delta
        } else {
            f64::NAN
        }
    }
}

/// Exact dual maximization along `(u + c, v - c)` for relaxed marginals.
fn translation_step(u: &mut [f64], v: &mut [f64], log_alpha: &[f64], log_beta: &[f64], tau: f64) -> f64 {
    let lhs = log_sum_exp(log_alpha.iter().zip(u.iter()).map(|(la, ui)| la - ui / tau));
    let rhs = log_sum_exp(log_beta.iter().zip(v.iter()).map(|(lb, vj)| lb - vj / tau));
    let shift = 0.5 * tau * (lhs - rhs);
    if !shift.is_finite() {
        return f64::NAN;
    }
    u.iter_mut().for_each(|x| *x += shift);
    v.iter_mut().for_each(|x| *x -= shift);
    shift.abs()
}

struct Potentials {
    u: Vec<f64>,
    v: Vec<f64>,
    iters: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Hard marginals are met to this relative accuracy at convergence: the
/// stopping threshold on the potentials is at most this fraction of `eta`.
const BALANCED_MARGINAL_ACCURACY: f64 = 1e-7;

/// Sweeps from zero potentials until no potential moves by more than
/// `opts.tol`, with periodic Newton steps when enabled.
fn iterate(
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    opts: &SolverOptions,
    tau: Option<f64>,
) -> Result<Potentials> {
    let (nx, nz) = cost.shape();
    let pool = thread_pool(opts.threads)?;
    let prep = Prepared::new(cost, alpha, beta, opts.eta, tau);
    let mut sweeper = Sweeper::new(nx, nz);
    let mut u = vec![0.0; nx];
    let mut v = vec![0.0; nz];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    let mut period = NEWTON_PERIOD;
    let mut since_newton = 0;
    let mut newton_step = newton::StepControl::new(opts.eta);
    let tol = match tau {
        Some(_) => opts.tol,
        None => opts.tol.min(BALANCED_MARGINAL_ACCURACY * opts.eta),
    };
    while iters < opts.max_iters {
        iters += 1;
        let delta = run_in(&pool, |par| sweeper.sweep(&prep, &mut u, &mut v, par));
        if delta.is_nan() {
            return Err(Error::NonFiniteDual { iters });
        }
        if opts.record_dual {
            let (uv, vv) = (ArrayView1::from(&u[..]), ArrayView1::from(&v[..]));
            trace.push(match tau {
                Some(tau) => dual_objective(uv, vv, cost, alpha, beta, opts.eta, tau)?,
                None => balanced_dual_objective(uv, vv, cost, alpha, beta, opts.eta)?,
            });
        }
        if delta < tol {
            converged = true;
            break;
        }
        since_newton += 1;
        if opts.newton && since_newton >= period {
            since_newton = 0;
            let problem = prep.newton_problem();
            let screens = newton::Screens {
                rows: &mut sweeper.rows,
                cols: &mut sweeper.cols,
            };
            let moved = run_in(&pool, |par| newton::refine(&problem, screens, &mut newton_step, &mut u, &mut v, par));
            period = if moved { NEWTON_PERIOD } else { (2 * period).min(NEWTON_MAX_PERIOD) };
        }
    }
    Ok(Potentials {
        u,
        v,
        iters,
        converged,
        trace,
    })
}

/// Entropic transport with hard marginals `T 1 = alpha`, `T^T 1 = beta`.
///
/// Totals must agree to [`BALANCED_TOTAL_TOLERANCE`]; rescale beforehand if not.
/// Reported potentials are shifted so that `u` has zero mean.
pub fn solve_balanced(
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    opts: &SolverOptions,
) -> Result<TransportSolution> {
    check_inputs(cost, alpha, beta, opts)?;
    let (ta, tb) = (alpha.total(), beta.total());
    if (ta - tb).abs() > BALANCED_TOTAL_TOLERANCE * ta.max(tb) {
        return Err(Error::UnbalancedInput { alpha: ta, beta: tb });
    }
    let p = iterate(cost, alpha, beta, opts, None)?;
    let mean = p.u.iter().sum::<f64>() / p.u.len() as f64;
    let u = Array1::from_iter(p.u.into_iter().map(|x| x - mean));
    let v = Array1::from_iter(p.v.into_iter().map(|x| x + mean));
    let plan = plan_from_duals(u.view(), v.view(), cost, alpha, beta, opts.eta)?;
    let primal = balanced_primal_objective(plan.view(), cost, alpha, beta, opts.eta)?;
    let dual = balanced_dual_objective(u.view(), v.view(), cost, alpha, beta, opts.eta)?;
    Ok(TransportSolution {
        plan,
        u,
        v,
        iters: p.iters,
        converged: p.converged,
        primal,
        dual,
        dual_trace: p.trace,
    })
}

/// Entropic transport with KL-relaxed marginals of strength `opts.tau`.
pub fn solve_unbalanced(
    cost: &CostMatrix,
    alpha: &MassVector,
    beta: &MassVector,
    opts: &SolverOptions,
) -> Result<TransportSolution> {
    check_inputs(cost, alpha, beta, opts)?;
    let p = iterate(cost, alpha, beta, opts, Some(opts.tau))?;
    let u = Array1::from(p.u);
    let v = Array1::from(p.v);
    let plan = plan_from_duals(u.view(), v.view(), cost, alpha, beta, opts.eta)?;
    let primal = primal_objective(plan.view(), cost, alpha, beta, opts.eta, opts.tau)?;
    let dual = dual_objective(u.view(), v.view(), cost, alpha, beta, opts.eta, opts.tau)?;
    Ok(TransportSolution {
        plan,
        u,
        v,
        iters: p.iters,
        converged: p.converged,
        primal,
        dual,
        dual_trace: p.trace,
    })
}
