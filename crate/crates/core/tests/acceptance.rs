mod common;

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{frobenius, naive_primal, random_cost, random_mass, rng};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use uft::alignment::{barycentric_warp, cycle_loss};
use uft::cli::{compare_pair, RunConfig};
use uft::measures::{compute_masses, cosine_cost_matrix, FeatureSet, MassVector};
use uft::metrics::argmax_match_plan;
use uft::oracle::{brute_force_assignment, uot_gradient, uot_projected_gradient, DEFAULT_STEP_SIZE};
use uft::seace::{aggregate_modulation, semantic_activation_matrix, seace_denormalize, ActivationMap, Attention, ModulationPair};
use uft::sinkhorn::{solve_balanced, solve_unbalanced, SolverOptions, TransportSolution};
use uft::synth::{gen_clustered_pair, SynthSpec};

const DUAL_SLACK: f64 = 1e-10;
const ORACLE_STEPS: usize = 50_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Dual traces gathered by the solver criteria.
#[derive(Default)]
struct DualLog {
    solves: usize,
    violations: usize,
}

impl DualLog {
    fn record(&mut self, sol: &TransportSolution) {
        self.solves += 1;
        let bad = sol
            .dual_trace
            .windows(2)
            .any(|w| w[1] < w[0] - DUAL_SLACK * w[0].abs().max(1.0));
        self.violations += usize::from(bad || sol.dual_trace.is_empty());
    }
}

fn uniform(n: usize) -> MassVector {
    MassVector::uniform(n, 1.0).unwrap()
}

fn balanced_oracle(log: &mut DualLog) -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let n = 6;
    let opts = SolverOptions::default().with_eta(1e-3).recording_dual();
    let (mut within, mut agree, mut worst) = (0, 0, 0.0f64);
    for _ in 0..100 {
        let cost = random_cost(&mut r, n, n);
        let oracle = brute_force_assignment(&cost).unwrap();
        let sol = solve_balanced(&cost, &uniform(n), &uniform(n), &opts).unwrap();
        log.record(&sol);
        let want = oracle.cost / n as f64;
        let gap = (sol.transport_cost(&cost) - want).abs() / want;
        worst = worst.max(gap);
        within += usize::from(gap <= 1e-2);
        agree += usize::from(argmax_match_plan(sol.plan.view()).unwrap() == oracle.permutation);
    }
    let elapsed = start.elapsed();
    outcome(
        within == 100 && agree >= 95 && elapsed < Duration::from_secs(10),
        format!("cost within 1%: {within}/100 (worst {worst:.2e}), permutation recovered {agree}/100, {elapsed:.2?}"),
    )
}

fn marginals(log: &mut DualLog) -> Outcome {
    let mut r = rng(1002);
    let opts = SolverOptions::default().recording_dual();
    let (mut converged, mut ok, mut worst) = (0, 0, 0.0f64);
    for _ in 0..50 {
        let (nx, nz) = (r.random_range(1..=64), r.random_range(1..=64));
        let cost = random_cost(&mut r, nx, nz);
        let alpha = random_mass(&mut r, nx);
        let raw = random_mass(&mut r, nz);
        let beta = MassVector::new(raw.as_array() * (alpha.total() / raw.total())).unwrap();
        let sol = solve_balanced(&cost, &alpha, &beta, &opts).unwrap();
        log.record(&sol);
        if !sol.converged {
            continue;
        }
        converged += 1;
        let total = alpha.total();
        let gap = |got: Array1<f64>, want: &MassVector| {
            got.iter().zip(want.as_array()).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max) / total
        };
        let g = gap(sol.row_marginal(), &alpha).max(gap(sol.col_marginal(), &beta));
        worst = worst.max(g);
        ok += usize::from(g < 1e-6);
    }
    outcome(
        converged == 50 && ok == converged,
        format!("converged {converged}/50, marginals below 1e-6 of mass {ok}/{converged} (worst {worst:.2e}), eta 1e-4"),
    )
}

fn unbalanced_oracle(log: &mut DualLog) -> Outcome {
    let start = Instant::now();
    let mut r = rng(1003);
    let (mut ok, mut worst) = (0, 0.0f64);
    for k in 0..50 {
        let (nx, nz) = (r.random_range(1..=16), r.random_range(1..=16));
        let cost = random_cost(&mut r, nx, nz);
        let (a, b) = (random_mass(&mut r, nx), random_mass(&mut r, nz));
        let eta = [1e-2, 1e-3][k % 2];
        let tau = [0.1, 1.0, 10.0][k % 3];
        let sol = solve_unbalanced(&cost, &a, &b, &SolverOptions::default().with_eta(eta).with_tau(tau).recording_dual()).unwrap();
        log.record(&sol);
        let plan = uot_projected_gradient(&cost, &a, &b, eta, tau, ORACLE_STEPS, DEFAULT_STEP_SIZE).unwrap();
        let want = naive_primal(&plan, &cost, &a, &b, eta, tau);
        let gap = (sol.primal - want).abs() / want.abs();
        worst = worst.max(gap);
        ok += usize::from(sol.converged && gap <= 5e-3);
    }
    let elapsed = start.elapsed();
    outcome(
        ok == 50 && elapsed < Duration::from_secs(60),
        format!("primal within 0.5%: {ok}/50 (worst {worst:.2e}), {elapsed:.2?}"),
    )
}

fn balanced_limit(log: &mut DualLog) -> Outcome {
    let mut r = rng(1004);
    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..10 {
        let n = r.random_range(2..=16);
        let cost = random_cost(&mut r, n, n);
        let opts = SolverOptions::default().with_eta(1e-2).recording_dual();
        let bal = solve_balanced(&cost, &uniform(n), &uniform(n), &opts).unwrap();
        let uot = solve_unbalanced(&cost, &uniform(n), &uniform(n), &opts.clone().with_tau(1e3)).unwrap();
        log.record(&bal);
        log.record(&uot);
        let f = frobenius(&bal.plan, &uot.plan);
        worst = worst.max(f);
        ok += usize::from(f < 1e-3);
    }
    outcome(ok == 10, format!("Frobenius below 1e-3: {ok}/10 (worst {worst:.2e}), eta 1e-2, tau 1e3"))
}

fn fixture_sweep() -> (Outcome, Outcome) {
    let mut cfg = RunConfig::default();
    let (mut below, mut ratios, mut fewer) = (0, Vec::new(), 0);
    for seed in 0..20 {
        cfg.seed = seed;
        let spec = SynthSpec { n: 60, k: 3, outlier_frac: 0.1, seed, ..cfg.fixture.clone() };
        let pair = gen_clustered_pair(&spec).unwrap();
        let cmp = compare_pair(&cfg, &pair).unwrap();
        below += usize::from(cmp.unbalanced.outlier_leakage < cmp.balanced.outlier_leakage);
        ratios.push(cmp.unbalanced.outlier_leakage / cmp.balanced.outlier_leakage);
        fewer += usize::from(cmp.cosine.many_to_one_rate >= cmp.unbalanced.many_to_one_rate);
    }
    ratios.sort_by(f64::total_cmp);
    let median = 0.5 * (ratios[9] + ratios[10]);
    (
        outcome(
            below == 20 && median < 0.5,
            format!("unbalanced leakage below balanced {below}/20, median ratio {median:.3e}"),
        ),
        outcome(fewer >= 18, format!("cosine many-to-one at least unbalanced {fewer}/20")),
    )
}

fn dual_monotone(log: &DualLog) -> Outcome {
    outcome(
        log.violations == 0 && log.solves > 0,
        format!("{} traces, {} with a decrease beyond 1e-10", log.solves, log.violations),
    )
}

fn gradient_check() -> Outcome {
    let mut r = rng(1008);
    let h = 1e-5;
    let (mut worst, mut ok) = (0.0f64, 0);
    for _ in 0..10 {
        let cost = random_cost(&mut r, 4, 4);
        let (a, b) = (random_mass(&mut r, 4), random_mass(&mut r, 4));
        let eta = [1e-2, 1e-3][r.random_range(0..2)];
        let tau = [0.1, 1.0, 10.0][r.random_range(0..3)];
        let plan = Array2::from_shape_fn((4, 4), |_| r.random_range(0.05..1.0));
        let grad = uot_gradient(&plan, &cost, &a, &b, eta, tau);
        let mut pass = true;
        for ((i, j), &g) in grad.indexed_iter() {
            let (mut up, mut down) = (plan.clone(), plan.clone());
            up[[i, j]] += h;
            down[[i, j]] -= h;
            let fd = (naive_primal(&up, &cost, &a, &b, eta, tau) - naive_primal(&down, &cost, &a, &b, eta, tau)) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
            pass &= rel <= 1e-4;
        }
        ok += usize::from(pass);
    }
    outcome(ok == 10, format!("instances within 1e-4: {ok}/10 (worst relative {worst:.2e})"))
}

fn seace_invariants() -> Outcome {
    let mut r = rng(1009);
    let mut x = Array2::from_shape_fn((8, 6), |_| r.random_range(-1.0..1.0));
    let dups = [(5, 0), (6, 2), (7, 2)];
    for (dup, src) in dups {
        let row = x.row(src).to_owned();
        x.row_mut(dup).assign(&row);
    }
    let gamma = Array2::from_shape_fn((8, 4), |_| r.random_range(0.5..1.5));
    let mu = Array2::from_shape_fn((8, 4), |_| r.random_range(-1.0..1.0));
    let m = semantic_activation_matrix(&FeatureSet::new(x).unwrap(), Attention::Softmax);
    let agg = aggregate_modulation(m.view(), &ModulationPair::new(gamma, mu).unwrap()).unwrap();
    let bitwise = dups.iter().all(|&(d, s)| agg.gamma.row(d) == agg.gamma.row(s) && agg.mu.row(d) == agg.mu.row(s));

    let l = ActivationMap::new(Array2::from_shape_fn((64, 32), |_| r.random_range(-3.0..5.0))).unwrap();
    let unit = ModulationPair::new(Array2::ones((64, 32)), Array2::zeros((64, 32))).unwrap();
    let normed = seace_denormalize(&l, &unit).unwrap();
    let mean = normed.as_array().mean_axis(Axis(1)).unwrap().iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let std = normed.as_array().std_axis(Axis(1), 0.0).iter().fold(0.0f64, |a, s| a.max((s - 1.0).abs()));
    outcome(
        bitwise && mean < 1e-6 && std < 1e-3,
        format!("duplicate rows bitwise equal: {bitwise}, max |mean| {mean:.2e}, max |std - 1| {std:.2e}"),
    )
}

fn cycle_and_warp() -> Outcome {
    let mut r = rng(1010);
    let mut zero = 0;
    for n in 1..=20 {
        let z = FeatureSet::new(Array2::from_shape_fn((n, 5), |_| r.random_range(-1.0..1.0))).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let mut plan = Array2::zeros((n, n));
        for (i, &j) in perm.iter().enumerate() {
            plan[[i, j]] = r.random_range(0.1..1.0);
        }
        zero += usize::from(cycle_loss(plan.view(), &z).unwrap() == 0.0);
    }
    let (mut hull, mut hull_uot) = (0, 0);
    for seed in 0..20 {
        let pair = gen_clustered_pair(&SynthSpec { n: 24, d: 8, seed, ..Default::default() }).unwrap();
        let cost = cosine_cost_matrix(&pair.x, &pair.z).unwrap();
        let opts = SolverOptions::default().with_eta(1e-3);
        let bal = solve_balanced(&cost, &uniform(24), &uniform(24), &opts).unwrap();
        let (a, b) = compute_masses(&pair.x, &pair.z).unwrap();
        let uot = solve_unbalanced(&cost, &a, &b, &opts).unwrap();
        hull += usize::from(bal.converged && inside_hull(&bal.plan, &pair.z));
        hull_uot += usize::from(inside_hull(&uot.plan, &pair.z));
    }
    outcome(
        zero == 20 && hull == 20,
        format!(
            "permutation plans with zero cycle loss {zero}/20, balanced warps inside the hull {hull}/20 \
             (unbalanced, not gated: {hull_uot}/20)"
        ),
    )
}

fn inside_hull(plan: &Array2<f64>, z: &FeatureSet) -> bool {
    let warped = barycentric_warp(plan.view(), z).unwrap();
    let zs = z.as_array();
    let lo = zs.fold_axis(Axis(0), f64::INFINITY, |p, &q| p.min(q));
    let hi = zs.fold_axis(Axis(0), f64::NEG_INFINITY, |p, &q| p.max(q));
    warped
        .as_array()
        .rows()
        .into_iter()
        .all(|row| row.iter().enumerate().all(|(c, &v)| v >= lo[c] - 1e-12 && v <= hi[c] + 1e-12))
}

fn full_scale() -> Outcome {
    let spec = SynthSpec { n: 4096, d: 128, k: 8, outlier_frac: 0.1, spread: 0.5, seed: 7 };
    let pair = gen_clustered_pair(&spec).unwrap();
    let cost = cosine_cost_matrix(&pair.x, &pair.z).unwrap();
    let (a, b) = compute_masses(&pair.x, &pair.z).unwrap();
    let run = |threads| {
        let start = Instant::now();
        let sol = solve_unbalanced(&cost, &a, &b, &SolverOptions::default().with_eta(1e-4).with_threads(threads)).unwrap();
        (sol, start.elapsed())
    };
    let (single, t1) = run(1);
    let (multi, t8) = run(8);
    let diff = single
        .plan
        .iter()
        .zip(&multi.plan)
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    outcome(
        single.converged && multi.converged && t1 < Duration::from_secs(120) && t8 < Duration::from_secs(40) && diff <= 1e-8,
        format!(
            "n 4096, d 128, eta 1e-4: 1 thread {t1:.2?} ({} sweeps), 8 threads {t8:.2?}, max plan difference {diff:.1e}, {} available cores",
            single.iters,
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    )
}

fn determinism() -> Outcome {
    let run = || Command::new(env!("CARGO_BIN_EXE_uft")).args(["compare", "--seed", "7"]).env_remove("UFT_SEED").output().unwrap();
    let (first, second) = (run(), run());
    let same = first.stdout == second.stdout && !first.stdout.is_empty();
    outcome(
        same && first.status.success() && second.status.success(),
        format!("{} report bytes, identical: {same}, exit {:?}", first.stdout.len(), first.status.code()),
    )
}

#[test]
fn acceptance() {
    let mut log = DualLog::default();
    let mut results: Vec<(&str, Outcome, Duration)> = Vec::new();
    let mut timed = |name, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        results.push((name, o, start.elapsed()));
    };
    timed("1 balanced oracle equivalence", &mut || balanced_oracle(&mut log));
    timed("2 marginal satisfaction", &mut || marginals(&mut log));
    timed("3 unbalanced oracle equivalence", &mut || unbalanced_oracle(&mut log));
    timed("4 balanced limit", &mut || balanced_limit(&mut log));
    let (leak, many) = fixture_sweep();
    results.push(("5 outlier suppression", leak, Duration::ZERO));
    results.push(("6 many-to-one suppression", many, Duration::ZERO));
    results.push(("7 dual monotonicity", dual_monotone(&log), Duration::ZERO));
    let mut timed = |name, f: fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        results.push((name, o, start.elapsed()));
    };
    timed("8 oracle gradient check", gradient_check);
    timed("9 seace invariants", seace_invariants);
    timed("10 cycle and warp properties", cycle_and_warp);
    timed("11 full-scale performance", full_scale);
    timed("12 determinism", determinism);

    // Written to the handle directly so the lines survive output capture.
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (name, o, elapsed) in &results {
        let mark = if o.pass { "PASS" } else { "FAIL" };
        writeln!(out, "[{mark}] {name}: {} ({elapsed:.2?})", o.detail).unwrap();
        if !o.pass {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
