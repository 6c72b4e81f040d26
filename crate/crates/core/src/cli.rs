//! The `uft` command line.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence, 3 verification
//! failure. Settings come from `--config` (a `key = value` file), then the
//! `UFT_SEED` environment variable for the seed, then flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::alignment::{cycle_loss, multi_stage_transport, FeaturePyramid, GridShape};
use crate::error::Error;
use crate::measures::{compute_masses_with_floor, cosine_cost_matrix, CostMatrix, MassVector, DEFAULT_MASS_FLOOR};
use crate::metrics::{argmax_match_cosine, argmax_match_plan, matching_report, MatchingReport};
use crate::oracle::{brute_force_assignment, uot_projected_gradient, DEFAULT_STEP_SIZE};
use crate::seace::{ActivationMap, Attention, ModulationPair, SeaceBlock};
use crate::sinkhorn::{solve_balanced, solve_unbalanced, SolverOptions, TransportSolution};
use crate::synth::{gen_clustered_pair, gen_pyramid_from_image_grid, ClusteredPair, SynthSpec};
use crate::tensor_io::{
    format_sidecar, read_features, read_matrix, read_pyramid, read_sidecar, read_vector, write_matrix, write_pyramid,
    write_sidecar,
};

pub const SEED_ENV: &str = "UFT_SEED";

#[derive(Debug)]
pub enum Failure {
    Input(String),
    NotConverged(String),
    Verification(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::NotConverged(_) => 2,
            Failure::Verification(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::NotConverged(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "uft", version, about = "Unbalanced entropic optimal transport for feature alignment")]
pub struct Cli {
    /// `key = value` settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for row reductions.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Tuning {
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Lower clamp on relevance masses.
    #[arg(long)]
    pub mass_floor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable the Newton refinement of the sweeps.
    #[arg(long)]
    pub no_newton: bool,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Fixture {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub outlier_frac: Option<f64>,
    #[arg(long)]
    pub spread: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled clustered pair, optionally with an exemplar pyramid.
    Gen {
        #[command(flatten)]
        fixture: Fixture,
        #[command(flatten)]
        tuning: Tuning,
        /// Pyramid levels for the exemplar; needs a square `n`.
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Unbalanced solve on a cost matrix and two mass vectors.
    Solve(SolveArgs),
    /// Balanced solve; the masses must have equal totals.
    SolveBalanced(SolveArgs),
    /// Masses, unbalanced plan and multi-stage warp of the exemplar.
    Align {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        z: PathBuf,
        /// Directory with an exemplar pyramid manifest; defaults to `z` alone.
        #[arg(long)]
        pyramid: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Cosine matching vs balanced OT vs unbalanced OT on a labeled pair.
    Compare {
        /// Directory written by `gen`; generated in-line when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        fixture: Fixture,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Aggregate exemplar modulation and denormalize an activation.
    Seace {
        /// Conditional features driving the attention.
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        gamma: PathBuf,
        #[arg(long)]
        mu: PathBuf,
        /// Conditional activation to modulate.
        #[arg(long)]
        x_act: PathBuf,
        /// Activation to denormalize; defaults to `x_act`.
        #[arg(long)]
        l_act: Option<PathBuf>,
        /// Use raw dot products instead of the scaled softmax.
        #[arg(long)]
        raw: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Seeded oracle cross-checks of the solvers.
    Verify {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[command(flatten)]
        tuning: Tuning,
        /// Perturb every plan before checking it.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long)]
    pub alpha: PathBuf,
    #[arg(long)]
    pub beta: PathBuf,
    #[command(flatten)]
    pub tuning: Tuning,
    #[arg(short, long)]
    pub out: PathBuf,
}

/// Resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: SolverOptions,
    pub mass_floor: f64,
    pub softmax: bool,
    pub seed: u64,
    pub fixture: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            mass_floor: DEFAULT_MASS_FLOOR,
            softmax: true,
            seed: 7,
            fixture: SynthSpec::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> CmdResult<T> {
    value
        .parse()
        .map_err(|_| Failure::Input(format!("config key `{key}`: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> CmdResult<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Failure::Input(format!("config key `{key}`: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> CmdResult {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Failure::Input(format!("config line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "eta" => self.solver.eta = parse_value(key, value)?,
                "tau" => self.solver.tau = parse_value(key, value)?,
                "max_iters" => self.solver.max_iters = parse_value(key, value)?,
                "tol" => self.solver.tol = parse_value(key, value)?,
                "threads" => self.solver.threads = parse_value(key, value)?,
                "newton" => self.solver.newton = parse_bool(key, value)?,
                "mass_floor" => self.mass_floor = parse_value(key, value)?,
                "softmax" => self.softmax = parse_bool(key, value)?,
                "seed" => self.seed = parse_value(key, value)?,
                "n" => self.fixture.n = parse_value(key, value)?,
                "d" => self.fixture.d = parse_value(key, value)?,
                "k" => self.fixture.k = parse_value(key, value)?,
                "outlier_frac" => self.fixture.outlier_frac = parse_value(key, value)?,
                "spread" => self.fixture.spread = parse_value(key, value)?,
                _ => return Err(Failure::Input(format!("config line {}: unknown key `{key}`", lineno + 1))),
            }
        }
        Ok(())
    }

    fn apply_tuning(&mut self, t: &Tuning) {
        if let Some(v) = t.eta {
            self.solver.eta = v;
        }
        if let Some(v) = t.tau {
            self.solver.tau = v;
        }
        if let Some(v) = t.max_iters {
            self.solver.max_iters = v;
        }
        if let Some(v) = t.tol {
            self.solver.tol = v;
        }
        if let Some(v) = t.mass_floor {
            self.mass_floor = v;
        }
        if let Some(v) = t.seed {
            self.seed = v;
        }
        if t.no_newton {
            self.solver.newton = false;
        }
    }

    fn apply_fixture(&mut self, f: &Fixture) {
        let s = &mut self.fixture;
        s.n = f.n.unwrap_or(s.n);
        s.d = f.d.unwrap_or(s.d);
        s.k = f.k.unwrap_or(s.k);
        s.outlier_frac = f.outlier_frac.unwrap_or(s.outlier_frac);
        s.spread = f.spread.unwrap_or(s.spread);
    }

    fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..self.fixture.clone()
        }
    }
}

/// Config file, then `UFT_SEED`, then flags.
pub fn resolve_config(cli: &Cli, seed_env: Option<&str>) -> CmdResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        cfg.apply_file_text(&text)?;
    }
    if let Some(seed) = seed_env {
        cfg.seed = seed
            .trim()
            .parse()
            .map_err(|_| Failure::Input(format!("{SEED_ENV}={seed:?} is not a 64-bit unsigned integer")))?;
    }
    match &cli.command {
        Command::Gen { fixture, tuning, .. } | Command::Compare { fixture, tuning, .. } => {
            cfg.apply_fixture(fixture);
            cfg.apply_tuning(tuning);
        }
        Command::Solve(a) | Command::SolveBalanced(a) => cfg.apply_tuning(&a.tuning),
        Command::Align { tuning, .. } | Command::Verify { tuning, .. } => cfg.apply_tuning(tuning),
        Command::Seace { raw, .. } => {
            if *raw {
                cfg.softmax = false;
            }
        }
    }
    if let Some(t) = cli.threads {
        cfg.solver.threads = t;
    }
    cfg.solver.validate()?;
    Ok(cfg)
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let seed_env = std::env::var(SEED_ENV).ok();
    match execute(&cli, seed_env.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("uft: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

pub fn execute(cli: &Cli, seed_env: Option<&str>) -> CmdResult {
    let cfg = resolve_config(cli, seed_env)?;
    match &cli.command {
        Command::Gen { levels, out, .. } => cmd_gen(&cfg, *levels, out),
        Command::Solve(a) => cmd_solve(&cfg, a, false),
        Command::SolveBalanced(a) => cmd_solve(&cfg, a, true),
        Command::Align { x, z, pyramid, out, .. } => cmd_align(&cfg, x, z, pyramid.as_deref(), out),
        Command::Compare { input, out, .. } => {
            let text = cmd_compare(&cfg, input.as_deref())?;
            print!("{}", text.report);
            if let Some(path) = out {
                fs::write(path, &text.report).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            }
            match text.failed {
                Some(check) => Err(Failure::Verification(format!("comparison check `{check}` failed"))),
                None => Ok(()),
            }
        }
        Command::Seace {
            x,
            gamma,
            mu,
            x_act,
            l_act,
            out,
            ..
        } => cmd_seace(&cfg, x, gamma, mu, x_act, l_act.as_deref().unwrap_or(x_act), out),
        Command::Verify { n, trials, corrupt, .. } => {
            let summary = cmd_verify(&cfg, *n, *trials, *corrupt)?;
            print!("{summary}");
            Ok(())
        }
    }
}

fn join_numbers<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_numbers<T: std::str::FromStr>(text: &str, what: &str) -> CmdResult<Vec<T>> {
    text.split_whitespace()
        .map(|t| t.parse().map_err(|_| Failure::Input(format!("{what}: bad entry {t:?}"))))
        .collect()
}

const LABELS_FILE: &str = "labels.txt";

fn cmd_gen(cfg: &RunConfig, levels: usize, out: &Path) -> CmdResult {
    let spec = cfg.synth_spec();
    let pair = gen_clustered_pair(&spec)?;
    fs::create_dir_all(out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    write_matrix(&out.join("x.uft"), pair.x.as_array())?;
    write_matrix(&out.join("z.uft"), pair.z.as_array())?;
    let mask = pair.outlier_mask_z.iter().map(|&m| u8::from(m));
    write_sidecar(
        &out.join(LABELS_FILE),
        &[
            ("seed", spec.seed.to_string()),
            ("k", spec.k.to_string()),
            ("labels_x", join_numbers(&pair.labels_x)),
            ("labels_z", join_numbers(&pair.labels_z)),
            ("outlier_mask_z", join_numbers(mask)),
        ],
    )?;
    if levels > 1 {
        let pyramid = gen_pyramid_from_image_grid(&pair.z, levels, spec.spread, spec.seed)?;
        write_pyramid(&out.join("z_pyramid"), &pyramid)?;
    }
    Ok(())
}

fn read_pair(dir: &Path) -> CmdResult<ClusteredPair> {
    let x = read_features(&dir.join("x.uft"))?;
    let z = read_features(&dir.join("z.uft"))?;
    let labels = read_sidecar(&dir.join(LABELS_FILE))?;
    let get = |key: &str| {
        labels
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Failure::Input(format!("{}: missing `{key}`", dir.join(LABELS_FILE).display())))
    };
    let labels_x: Vec<usize> = parse_numbers(get("labels_x")?, "labels_x")?;
    let labels_z: Vec<usize> = parse_numbers(get("labels_z")?, "labels_z")?;
    let mask: Vec<u8> = parse_numbers(get("outlier_mask_z")?, "outlier_mask_z")?;
    Ok(ClusteredPair {
        x,
        z,
        labels_x,
        labels_z,
        outlier_mask_z: mask.into_iter().map(|m| m != 0).collect(),
    })
}

fn marginal_gap(actual: &Array1<f64>, target: &MassVector) -> f64 {
    actual
        .iter()
        .zip(target.as_array())
        .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
}

fn solution_sidecar(sol: &TransportSolution, alpha: &MassVector, beta: &MassVector) -> Vec<(String, String)> {
    [
        ("iters", sol.iters.to_string()),
        ("converged", sol.converged.to_string()),
        ("primal", format!("{:.12e}", sol.primal)),
        ("dual", format!("{:.12e}", sol.dual)),
        ("total_mass", format!("{:.12e}", sol.total_mass())),
        ("row_marginal_gap", format!("{:.6e}", marginal_gap(&sol.row_marginal(), alpha))),
        ("col_marginal_gap", format!("{:.6e}", marginal_gap(&sol.col_marginal(), beta))),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("txt")
}

fn cmd_solve(cfg: &RunConfig, a: &SolveArgs, balanced: bool) -> CmdResult {
    let cost = CostMatrix::new(read_matrix(&a.cost)?)?;
    let alpha = MassVector::new(read_vector(&a.alpha)?)?;
    let beta = MassVector::new(read_vector(&a.beta)?)?;
    let sol = if balanced {
        solve_balanced(&cost, &alpha, &beta, &cfg.solver)?
    } else {
        solve_unbalanced(&cost, &alpha, &beta, &cfg.solver)?
    };
    write_matrix(&a.out, &sol.plan)?;
    let report = solution_sidecar(&sol, &alpha, &beta);
    write_sidecar(&sidecar_path(&a.out), &report)?;
    print!("{}", format_sidecar(&report));
    if sol.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "no convergence within {} iterations; last plan written to {}",
            sol.iters,
            a.out.display()
        )))
    }
}

fn default_grid(n: usize) -> GridShape {
    GridShape::square(n).unwrap_or(GridShape::new(1, n))
}

fn pyramid_digest(p: &FeaturePyramid) -> String {
    let mut h = Sha256::new();
    for level in p.levels() {
        for v in level.as_array() {
            h.update((*v as f32).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn cmd_align(cfg: &RunConfig, x: &Path, z: &Path, pyramid: Option<&Path>, out: &Path) -> CmdResult {
    let x = read_features(x)?;
    let z = read_features(z)?;
    let cost = cosine_cost_matrix(&x, &z)?;
    let (alpha, beta) = compute_masses_with_floor(&x, &z, cfg.mass_floor)?;
    let sol = solve_unbalanced(&cost, &alpha, &beta, &cfg.solver)?;
    let levels = match pyramid {
        Some(dir) => read_pyramid(dir)?,
        None => FeaturePyramid::new(vec![z.clone()], default_grid(z.n()))?,
    };
    let warped = multi_stage_transport(sol.plan.view(), &levels)?;
    let cycle = cycle_loss(sol.plan.view(), &z)?;
    write_pyramid(out, &warped)?;
    write_matrix(&out.join("plan.uft"), &sol.plan)?;
    let mut report = solution_sidecar(&sol, &alpha, &beta);
    report.push(("cycle_loss".into(), format!("{cycle:.12e}")));
    report.push(("warped_sha256".into(), pyramid_digest(&warped)));
    write_sidecar(&out.join("align.txt"), &report)?;
    print!("{}", format_sidecar(&report));
    if sol.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!("no convergence within {} iterations", sol.iters)))
    }
}

/// Rendered comparison and the first failed inequality, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub cosine: MatchingReport,
    pub balanced: MatchingReport,
    pub unbalanced: MatchingReport,
    pub report: String,
    pub failed: Option<&'static str>,
}

/// Balanced OT uses uniform masses of total one; unbalanced OT uses the
/// relevance masses. The cosine matcher is scored against a plan that puts
/// `1/n` on each matched pair.
pub fn compare_pair(cfg: &RunConfig, pair: &ClusteredPair) -> CmdResult<Comparison> {
    let cost = cosine_cost_matrix(&pair.x, &pair.z)?;
    let (nx, nz) = cost.shape();
    let ua = MassVector::uniform(nx, 1.0)?;
    let ub = MassVector::uniform(nz, 1.0)?;
    let balanced = solve_balanced(&cost, &ua, &ub, &cfg.solver)?;
    let (alpha, beta) = compute_masses_with_floor(&pair.x, &pair.z, cfg.mass_floor)?;
    let unbalanced = solve_unbalanced(&cost, &alpha, &beta, &cfg.solver)?;
    for (name, sol) in [("balanced", &balanced), ("unbalanced", &unbalanced)] {
        if !sol.converged {
            return Err(Failure::NotConverged(format!("{name} solve did not converge in {} iterations", sol.iters)));
        }
    }

    let cos_match = argmax_match_cosine(&pair.x, &pair.z)?;
    let mut cos_plan = Array2::zeros((nx, nz));
    for (i, &j) in cos_match.iter().enumerate() {
        cos_plan[[i, j]] = 1.0 / nx as f64;
    }
    let report_for = |matching: &[usize], plan: &Array2<f64>| {
        matching_report(matching, &pair.labels_x, &pair.labels_z, plan.view(), &pair.outlier_mask_z)
    };
    let cosine = report_for(&cos_match, &cos_plan)?;
    let bal = report_for(&argmax_match_plan(balanced.plan.view())?, &balanced.plan)?;
    let uot = report_for(&argmax_match_plan(unbalanced.plan.view())?, &unbalanced.plan)?;

    let mut text = String::new();
    for (name, r) in [("cosine", &cosine), ("balanced", &bal), ("unbalanced", &uot)] {
        for line in r.to_string().lines() {
            let _ = writeln!(text, "{name}.{line}");
        }
    }
    let mut failed = None;
    let mut check = |name: &'static str, ok: Option<bool>| {
        let verdict = match ok {
            Some(true) => "pass",
            Some(false) => {
                failed.get_or_insert(name);
                "fail"
            }
            None => "skip",
        };
        let _ = writeln!(text, "check.{name}: {verdict}");
    };
    let has_outliers = pair.outlier_mask_z.iter().any(|&m| m);
    check(
        "outlier_leakage_unbalanced_below_balanced",
        has_outliers.then_some(uot.outlier_leakage < bal.outlier_leakage),
    );
    check(
        "many_to_one_cosine_at_least_unbalanced",
        Some(cosine.many_to_one_rate >= uot.many_to_one_rate),
    );
    Ok(Comparison {
        cosine,
        balanced: bal,
        unbalanced: uot,
        report: text,
        failed,
    })
}

pub fn cmd_compare(cfg: &RunConfig, input: Option<&Path>) -> CmdResult<Comparison> {
    let pair = match input {
        Some(dir) => read_pair(dir)?,
        None => gen_clustered_pair(&cfg.synth_spec())?,
    };
    compare_pair(cfg, &pair)
}

fn cmd_seace(cfg: &RunConfig, x: &Path, gamma: &Path, mu: &Path, x_act: &Path, l_act: &Path, out: &Path) -> CmdResult {
    let x = read_features(x)?;
    let exemplar = ModulationPair::new(read_matrix(gamma)?, read_matrix(mu)?)?;
    let x_act = ActivationMap::new(read_matrix(x_act)?)?;
    let l_act = ActivationMap::new(read_matrix(l_act)?)?;
    let mut block = SeaceBlock::identity(x_act.shape().1);
    if !cfg.softmax {
        block.attention = Attention::Raw;
    }
    let result = block.apply(&x, &exemplar, &x_act, &l_act)?;
    write_matrix(out, result.as_array())?;
    let data = result.as_array();
    let report = [
        ("positions", data.nrows().to_string()),
        ("channels", data.ncols().to_string()),
        ("attention", if cfg.softmax { "softmax" } else { "raw" }.to_string()),
        ("mean", format!("{:.12e}", data.mean().unwrap_or(0.0))),
    ];
    write_sidecar(&sidecar_path(out), &report)?;
    print!("{}", format_sidecar(&report));
    Ok(())
}

/// Relative primal gap tolerated against the gradient oracle.
const VERIFY_PRIMAL_GAP: f64 = 5e-3;
const VERIFY_COST_GAP: f64 = 1e-2;
const VERIFY_AGREEMENT: f64 = 0.95;
const VERIFY_MARGINAL_GAP: f64 = 1e-6;
const VERIFY_DUAL_SLACK: f64 = 1e-10;
const VERIFY_UOT_TRIALS: usize = 6;
const VERIFY_ORACLE_STEPS: usize = 20_000;

fn random_cost(rng: &mut ChaCha8Rng, nx: usize, nz: usize) -> CmdResult<CostMatrix> {
    Ok(CostMatrix::new(Array2::from_shape_fn((nx, nz), |_| rng.random_range(0.0..2.0)))?)
}

fn dual_monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - VERIFY_DUAL_SLACK * w[0].abs().max(1.0))
}

/// Swaps the first two columns; the marginal and assignment checks must see it.
fn corrupt_plan(plan: &mut Array2<f64>) {
    if plan.ncols() > 1 {
        let (mut a, mut b) = plan.multi_slice_mut((ndarray::s![.., 0], ndarray::s![.., 1]));
        ndarray::Zip::from(&mut a).and(&mut b).for_each(std::mem::swap);
    }
    plan.mapv_inplace(|t| 1.1 * t);
}

pub fn cmd_verify(cfg: &RunConfig, n: usize, trials: usize, corrupt: bool) -> CmdResult<String> {
    if trials == 0 {
        return Err(Failure::Input("verify needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eta = 1e-3;
    let opts = cfg.solver.clone().with_eta(eta).recording_dual();
    let uniform = MassVector::uniform(n, 1.0)?;
    let mut agree = 0usize;
    let mut out = String::new();
    for trial in 0..trials {
        let cost = random_cost(&mut rng, n, n)?;
        let oracle = brute_force_assignment(&cost)?;
        let mut sol = solve_balanced(&cost, &uniform, &uniform, &opts)?;
        if !sol.converged {
            return Err(Failure::Verification(format!("balanced trial {trial}: no convergence")));
        }
        if corrupt {
            corrupt_plan(&mut sol.plan);
        }
        let rows = marginal_gap(&sol.row_marginal(), &uniform);
        let cols = marginal_gap(&sol.col_marginal(), &uniform);
        if rows.max(cols) > VERIFY_MARGINAL_GAP {
            return Err(Failure::Verification(format!(
                "marginals: trial {trial} misses by {:.3e}",
                rows.max(cols)
            )));
        }
        if !dual_monotone(&sol.dual_trace) {
            return Err(Failure::Verification(format!("dual_monotone: balanced trial {trial}")));
        }
        let oracle_cost = oracle.cost / n as f64;
        let gap = (sol.transport_cost(&cost) - oracle_cost).abs() / oracle_cost.max(f64::MIN_POSITIVE);
        if gap > VERIFY_COST_GAP {
            return Err(Failure::Verification(format!("assignment_cost: trial {trial} off by {gap:.3e}")));
        }
        if argmax_match_plan(sol.plan.view())? == oracle.permutation {
            agree += 1;
        }
    }
    let rate = agree as f64 / trials as f64;
    let _ = writeln!(out, "assignment_agreement: {:.1}%", 100.0 * rate);
    if rate < VERIFY_AGREEMENT {
        return Err(Failure::Verification(format!(
            "assignment_agreement: {:.1}% below {:.0}%",
            100.0 * rate,
            100.0 * VERIFY_AGREEMENT
        )));
    }

    let mut worst = 0.0f64;
    for trial in 0..VERIFY_UOT_TRIALS {
        let (nx, nz) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let cost = random_cost(&mut rng, nx, nz)?;
        let mut draw = |len| MassVector::new(Array1::from_shape_fn(len, |_| rng.random_range(0.1..1.0)));
        let (alpha, beta) = (draw(nx)?, draw(nz)?);
        let uot_eta = 1e-2;
        let tau = [0.1, 1.0, 10.0][trial % 3];
        let mut sol = solve_unbalanced(&cost, &alpha, &beta, &opts.clone().with_eta(uot_eta).with_tau(tau))?;
        if !sol.converged {
            return Err(Failure::Verification(format!("unbalanced trial {trial}: no convergence")));
        }
        if !dual_monotone(&sol.dual_trace) {
            return Err(Failure::Verification(format!("dual_monotone: unbalanced trial {trial}")));
        }
        if corrupt {
            corrupt_plan(&mut sol.plan);
        }
        let primal = crate::sinkhorn::primal_objective(sol.plan.view(), &cost, &alpha, &beta, uot_eta, tau)?;
        let reference = uot_projected_gradient(&cost, &alpha, &beta, uot_eta, tau, VERIFY_ORACLE_STEPS, DEFAULT_STEP_SIZE)?;
        let oracle = crate::sinkhorn::primal_objective(reference.view(), &cost, &alpha, &beta, uot_eta, tau)?;
        let gap = (primal - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(gap);
        if gap > VERIFY_PRIMAL_GAP {
            return Err(Failure::Verification(format!("unbalanced_primal: trial {trial} off by {gap:.3e}")));
        }
    }
    let _ = writeln!(out, "unbalanced_primal_worst_gap: {worst:.3e}");
    let _ = writeln!(out, "status: pass");
    Ok(out)
}
