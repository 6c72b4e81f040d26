//! Newton refinement of the dual potentials on the screened support.
//!
//! At small `eta` the sweeps contract slowly along directions that shift whole
//! groups of potentials against each other. A Newton step on the dual resolves
//! those directions at once. Only entries within the screening window enter
//! the Hessian; step acceptance uses the exact dual.

use ndarray::ArrayView2;

use super::kernel::{screen, ScreenedRows};

const MAX_HALVINGS: usize = 30;
/// Bounds on the relative residual at which the inner solve stops; inside
/// them it tracks the relative gradient norm.
const CG_TOLERANCE: f64 = 1e-12;
const CG_FORCING_CAP: f64 = 1e-2;
/// Initial and smallest trust radius on `max |du_i|`, in units of `eta`.
/// Directions along nearly flat modes of the screened Hessian (weakly coupled
/// blocks of the support) are shortened to the radius.
const TRUST_NATS: f64 = 30.0;
const TRUST_GROWTH: f64 = 4.0;
/// Lower bound on the marginal curvature `eta / tau`. Without it, mass
/// imbalances between disconnected blocks of the support sit in the null space
/// of the Hessian and the step never moves them.
const MIN_MARGINAL_CURVATURE: f64 = 1e-6;

/// Line search and trust region memory carried between steps.
pub(crate) struct StepControl {
    step: f64,
    radius: f64,
}

impl StepControl {
    pub(crate) fn new(eta: f64) -> Self {
        Self {
            step: 1.0,
            radius: TRUST_NATS * eta,
        }
    }
}

pub(crate) struct Problem<'a> {
    pub cost: ArrayView2<'a, f64>,
    pub cost_t: ArrayView2<'a, f64>,
    pub log_alpha: &'a [f64],
    pub log_beta: &'a [f64],
    pub eta: f64,
    /// `None` for hard marginals.
    pub tau: Option<f64>,
}

/// Screening state of the sweeps, reused to find the support and to
/// evaluate trial points.
pub(crate) struct Screens<'a> {
    pub rows: &'a mut ScreenedRows,
    pub cols: &'a mut ScreenedRows,
}

fn offsets(log_mass: &[f64], pot: &[f64], eta: f64) -> Vec<f64> {
    log_mass.iter().zip(pot).map(|(&l, &x)| eta * l + x).collect()
}

/// Sparse rows `(j, C_ij)` of the plan support.
struct Support {
    indptr: Vec<usize>,
    cols: Vec<usize>,
    cost: Vec<f64>,
}

impl Support {
    fn build(p: &Problem<'_>, screens: &Screens<'_>, u: &[f64], v: &[f64], parallel: bool) -> Self {
        let offset_z = offsets(p.log_beta, v, p.eta);
        let offset_x = offsets(p.log_alpha, u, p.eta);
        let mut rows = match screens.rows.active(&offset_z, p.eta) {
            Some(sets) => sets.map(<[u32]>::to_vec).collect(),
            None => screen(p.cost, &offset_z, p.eta, parallel),
        };
        let mut add = |j: usize, col: &[u32]| {
            for &i in col {
                rows[i as usize].push(j as u32);
            }
        };
        match screens.cols.active(&offset_x, p.eta) {
            Some(sets) => sets.enumerate().for_each(|(j, col)| add(j, col)),
            None => screen(p.cost_t, &offset_x, p.eta, parallel)
                .iter()
                .enumerate()
                .for_each(|(j, col)| add(j, col)),
        }
        let mut indptr = vec![0];
        let mut cols = Vec::new();
        let mut cost = Vec::new();
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            for j in row {
                cols.push(j as usize);
                cost.push(p.cost[[i, j as usize]]);
            }
            indptr.push(cols.len());
        }
        Self { indptr, cols, cost }
    }
}

struct Evaluation {
    plan: Vec<f64>,
    rows: Vec<f64>,
    cols: Vec<f64>,
    /// `alpha e^{-u/tau}` (or `alpha`) and the same for `beta`: the marginals
    /// the dual is stationary at.
    target_x: Vec<f64>,
    target_z: Vec<f64>,
}

impl Evaluation {
    fn new(p: &Problem<'_>, s: &Support, u: &[f64], v: &[f64]) -> Self {
        let inv_eta = 1.0 / p.eta;
        let mut plan = Vec::with_capacity(s.cols.len());
        let mut rows = vec![0.0; u.len()];
        let mut cols = vec![0.0; v.len()];
        for (i, (&ui, &la)) in u.iter().zip(p.log_alpha).enumerate() {
            for k in s.indptr[i]..s.indptr[i + 1] {
                let j = s.cols[k];
                let t = (la + p.log_beta[j] + (ui + v[j] - s.cost[k]) * inv_eta).exp();
                plan.push(t);
                rows[i] += t;
                cols[j] += t;
            }
        }
        let target = |pot: &[f64], logm: &[f64]| -> Vec<f64> {
            match p.tau {
                Some(tau) => pot.iter().zip(logm).map(|(&x, &l)| (l - x / tau).exp()).collect(),
                None => logm.iter().map(|l| l.exp()).collect(),
            }
        };
        Self {
            plan,
            rows,
            cols,
            target_x: target(u, p.log_alpha),
            target_z: target(v, p.log_beta),
        }
    }

    fn gradient_norm(&self) -> f64 {
        let gx = self.target_x.iter().zip(&self.rows).map(|(a, r)| (a - r).powi(2));
        let gz = self.target_z.iter().zip(&self.cols).map(|(b, c)| (b - c).powi(2));
        gx.chain(gz).sum::<f64>().sqrt()
    }
}

/// `eta` times the negated dual Hessian, in block form.
struct Hessian<'a> {
    support: &'a Support,
    plan: &'a [f64],
    diag: Vec<f64>,
    nx: usize,
}

impl Hessian<'_> {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (xu, xv) = x.split_at(self.nx);
        for ((yi, d), xi) in y.iter_mut().zip(&self.diag).zip(x) {
            *yi = d * xi;
        }
        let (yu, yv) = y.split_at_mut(self.nx);
        for i in 0..self.nx {
            let mut acc = 0.0;
            for k in self.support.indptr[i]..self.support.indptr[i + 1] {
                let j = self.support.cols[k];
                acc += self.plan[k] * xv[j];
                yv[j] += self.plan[k] * xu[i];
            }
            yu[i] += acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients from zero. Stops early on loss
/// of positive curvature.
fn conjugate_gradient(h: &Hessian<'_>, b: &[f64], tolerance: f64, max_iters: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let precondition = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .zip(&h.diag)
            .map(|(ri, &d)| if d > 0.0 { ri / d } else { *ri })
            .collect()
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let stop = tolerance * dot(b, b).sqrt();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iters {
        h.apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            break;
        }
        let step = rz / curvature;
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * ap[k];
        }
        if dot(&r, &r).sqrt() <= stop {
            break;
        }
        z = precondition(&r);
        let next = dot(&r, &z);
        let beta = next / rz;
        rz = next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    x
}

/// Sets `v` to its exact maximizer given `u` and returns the dual value
/// there. Needs one pass over the cost matrix.
fn eliminate_v(p: &Problem<'_>, cols: &mut ScreenedRows, u: &[f64], v: &mut [f64], parallel: bool) -> f64 {
    let offset = offsets(p.log_alpha, u, p.eta);
    let mut soft = vec![0.0; v.len()];
    cols.reduce(p.cost_t, &offset, p.eta, &mut soft, parallel);
    let relax = p.tau.map_or(1.0, |tau| tau / (tau + p.eta));
    let mut coupling = 0.0;
    for ((vj, &s), &lb) in v.iter_mut().zip(&soft).zip(p.log_beta) {
        *vj = -relax * s;
        coupling += (lb + (*vj + s) / p.eta).exp();
    }
    let marginal = |pot: &[f64], logm: &[f64]| -> f64 {
        match p.tau {
            Some(tau) => pot.iter().zip(logm).map(|(&x, &l)| -tau * l.exp() * (-x / tau).exp_m1()).sum(),
            None => pot.iter().zip(logm).map(|(&x, &l)| l.exp() * x).sum(),
        }
    };
    marginal(u, p.log_alpha) + marginal(v, p.log_beta) - p.eta * coupling
}

/// Attempts one damped Newton step in `u`, with `v` re-maximized exactly at
/// every trial point. The line search starts from the remembered step and
/// radius, which are updated for the next call. Returns whether the
/// potentials moved; they only move if the dual does not decrease.
pub(crate) fn refine(
    p: &Problem<'_>,
    screens: Screens<'_>,
    control: &mut StepControl,
    u: &mut [f64],
    v: &mut [f64],
    parallel: bool,
) -> bool {
    let (nx, nz) = (u.len(), v.len());
    let mut trial_v = vec![0.0; nz];
    let value = eliminate_v(p, screens.cols, u, &mut trial_v, parallel);
    if !value.is_finite() {
        return false;
    }
    v.copy_from_slice(&trial_v);
    let support = Support::build(p, &screens, u, v, parallel);
    let current = Evaluation::new(p, &support, u, v);

    let scale = p.tau.map_or(0.0, |tau| p.eta / tau).max(MIN_MARGINAL_CURVATURE);
    let pairs = || {
        current
            .target_x
            .iter()
            .zip(&current.rows)
            .chain(current.target_z.iter().zip(&current.cols))
    };
    let diag: Vec<f64> = pairs().map(|(t, m)| scale * t + m).collect();
    let rhs: Vec<f64> = pairs().map(|(t, m)| p.eta * (t - m)).collect();
    let mass: f64 = pairs().map(|(t, _)| t).sum();
    let forcing = (current.gradient_norm() / mass).clamp(CG_TOLERANCE, CG_FORCING_CAP);
    let hessian = Hessian {
        support: &support,
        plan: &current.plan,
        diag,
        nx,
    };
    let mut direction = conjugate_gradient(&hessian, &rhs, forcing, 4 * (nx + nz));
    if !direction.iter().all(|d| d.is_finite()) {
        return false;
    }
    let longest = direction[..nx].iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let capped = longest > control.radius;
    if capped {
        let shrink = control.radius / longest;
        direction.iter_mut().for_each(|d| *d *= shrink);
    }

    let mut t = control.step;
    let mut trial_u = vec![0.0; nx];
    for _ in 0..MAX_HALVINGS {
        for (k, (o, &x)) in trial_u.iter_mut().zip(u.iter()).enumerate() {
            *o = x + t * direction[k];
        }
        if eliminate_v(p, screens.cols, &trial_u, &mut trial_v, parallel) >= value {
            u.copy_from_slice(&trial_u);
            v.copy_from_slice(&trial_v);
            control.step = (2.0 * t).min(1.0);
            if capped {
                let floor = TRUST_NATS * p.eta;
                control.radius = if t == 1.0 { TRUST_GROWTH * control.radius } else { (t * control.radius).max(floor) };
            }
            return true;
        }
        t *= 0.5;
    }
    false
}
