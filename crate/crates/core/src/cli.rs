//! Batch front-end: one TOML experiment config in, CSV tables and JSON
//! summaries out.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 certification or
//! verification failure, 3 non-convergence.

use crate::bellman::{control_grid, ControlGridSpec, ControlSet, EquivalenceVerifier};
use crate::complexlift::{complex_residuals, lift, ComplexProblem};
use crate::geometry::{build_barrier, check_strict_gamma_convexity, BarrierCertificate, BarrierSpec, DomainGeometry, ShapeSpec};
use crate::matcore::random_symmetric;
use crate::operators::{HessianOperator, OperatorSpec, Realm};
use crate::solver::{
    build_grid, control_spec_for_h, identity_control, max_error, mc_value, policy_iteration, regularity_probe,
    DirichletProblem, Expr, Grid, GridSolution, McEstimate, McPolicy, McSpec, ProbeMode, SolverSpec,
};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CERTIFICATION: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "hessbell", version, about = "Degenerate Hessian equations in Bellman form")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Certify strict convexity of the domain and build a global barrier.
    CheckDomain(CommonArgs),
    /// Solve on one grid and write the solution table and a summary.
    Solve(CommonArgs),
    /// Compare the Bellman residual with the level-shift oracle on random pairs.
    Verify(CommonArgs),
    /// Monte Carlo estimates of the value function at configured points.
    Mc(CommonArgs),
    /// Solve on a ladder of grid spacings and tabulate errors and probes.
    Converge(CommonArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's output.dir, then "out".
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Solve even when certification fails.
    #[arg(long)]
    pub force: bool,
}

// ---------------------------------------------------------------------------
// Config schema.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub realm: Realm,
    pub operator: OperatorSpec,
    pub domain: ShapeSpec,
    /// Source f ≥ 0, in realified coordinates.
    pub f: Expr,
    /// Boundary data φ.
    pub phi: Expr,
    /// Known solution, if any; enables error columns.
    #[serde(default)]
    pub exact: Option<Expr>,
    #[serde(default)]
    pub quasi_convexity_k: Option<f64>,
    #[serde(default)]
    pub controls: ControlGridSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub certification: CertificationConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    /// Spacings for `converge`.
    pub ladder: Vec<f64>,
    /// Add boundary control levels as h shrinks.
    pub refine_controls: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { h: 1.0 / 16.0, ladder: vec![1.0 / 16.0, 1.0 / 32.0], refine_controls: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificationConfig {
    pub boundary_samples: usize,
    pub t_max: f64,
    pub seed: u64,
    pub barrier: BarrierSpec,
}

impl Default for CertificationConfig {
    fn default() -> Self {
        CertificationConfig { boundary_samples: 2048, t_max: 1048576.0, seed: 0, barrier: BarrierSpec::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McPolicyChoice {
    /// Feedback policy of the grid solution.
    Grid,
    /// The constant identity control.
    Identity,
    /// Each of the constant controls listed in `controls`.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub max_steps: usize,
    pub points: Vec<Vec<f64>>,
    pub policy: McPolicyChoice,
    /// Control indices for the constant policy.
    pub controls: Vec<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        let s = McSpec::default();
        McConfig {
            n_paths: s.n_paths,
            dt: s.dt,
            seed: s.seed,
            max_steps: s.max_steps,
            points: Vec::new(),
            policy: McPolicyChoice::Grid,
            controls: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub samples: usize,
    pub density: usize,
    pub tol: f64,
    pub seed: u64,
    /// Entries of γ are N(0, scale²).
    pub scale: f64,
    /// c is uniform on [0, c_max).
    pub c_max: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { samples: 500, density: 10_000, tol: 2e-3, seed: 0, scale: 1.0, c_max: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("grid.h", self.grid.h)?;
        for &h in &self.grid.ladder {
            pos("grid.ladder entries", h)?;
        }
        pos("solver.tol", self.solver.tol)?;
        pos("mc.dt", self.mc.dt)?;
        pos("verify.tol", self.verify.tol)?;
        pos("certification.t_max", self.certification.t_max)?;
        if self.mc.n_paths < 100 {
            return Err(Error::Config("mc.n_paths must be at least 100".into()));
        }
        if self.solver.max_outer == 0 || self.mc.max_steps == 0 || self.certification.boundary_samples == 0 {
            return Err(Error::Config("iteration and sample counts must be positive".into()));
        }
        Ok(())
    }

    fn apply_seed(&mut self, seed: u64) {
        self.controls.seed = seed;
        self.mc.seed = seed;
        self.verify.seed = seed;
        self.certification.seed = seed;
        self.certification.barrier.seed = seed;
    }
}

/// Lowercase hex SHA-256 of the raw config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

// ---------------------------------------------------------------------------
// Entry point.

/// Parse arguments, run one command and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Certification(_) => EXIT_CERTIFICATION,
        Error::LinearSolve { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_USAGE,
    }
}

/// Everything a command needs, loaded from the config.
struct Context {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
    force: bool,
}

fn load(args: &CommonArgs) -> Result<Context> {
    let bytes = std::fs::read(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Config("config is not UTF-8".into()))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = args.seed {
        cfg.apply_seed(s);
    }
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // a second build in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = args.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    Ok(Context { cfg, hash: config_hash(&bytes), out, force: args.force })
}

fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::CheckDomain(a) => cmd_check_domain(&load(a)?),
        Command::Solve(a) => cmd_solve(&load(a)?),
        Command::Verify(a) => cmd_verify(&load(a)?),
        Command::Mc(a) => cmd_mc(&load(a)?),
        Command::Converge(a) => cmd_converge(&load(a)?),
    }
}

// ---------------------------------------------------------------------------
// Problem assembly.

struct Setup {
    op: HessianOperator,
    dom: DomainGeometry,
    problem: DirichletProblem,
    complex: Option<ComplexProblem>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let op = cfg.operator.build(cfg.realm)?;
    let dom = DomainGeometry::new(cfg.domain.clone(), cfg.realm)?;
    let (problem, complex) = match cfg.realm {
        Realm::Real => (DirichletProblem::new(op.clone(), dom.clone(), cfg.f.clone(), cfg.phi.clone())?, None),
        Realm::Complex => {
            let cp = ComplexProblem::new(op.clone(), dom.clone(), cfg.f.clone(), cfg.phi.clone())?;
            (lift(&cp)?.problem, Some(cp))
        }
    };
    let problem = DirichletProblem { quasi_convexity_k: cfg.quasi_convexity_k, ..problem };
    Ok(Setup { op, dom, problem, complex })
}

fn controls_at(cfg: &ExperimentConfig, op: &HessianOperator, h: f64) -> Result<(ControlGridSpec, ControlSet)> {
    let spec = if cfg.grid.refine_controls { control_spec_for_h(&cfg.controls, h) } else { cfg.controls.clone() };
    let set = control_grid(op, &spec)?;
    Ok((spec, set))
}

#[derive(Clone, Debug, Serialize)]
struct ConvexitySummary {
    pass: bool,
    samples: usize,
    failures: usize,
    worst_point: Vec<f64>,
    worst_t: Option<f64>,
    shortcut_agreement: Option<usize>,
    shortcut_agrees: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
struct Certification {
    certified: bool,
    convexity: ConvexitySummary,
    barrier: Option<BarrierCertificate>,
    barrier_error: Option<String>,
}

fn certify(cfg: &ExperimentConfig, s: &Setup, controls: &ControlSet) -> Result<(Certification, Vec<Vec<String>>)> {
    let c = &cfg.certification;
    let rep = check_strict_gamma_convexity(&s.dom, &s.op, c.boundary_samples, c.t_max, c.seed)?;
    let rows = rep
        .details
        .iter()
        .map(|d| {
            let mut r: Vec<String> = d.point.iter().map(|v| num(*v)).collect();
            r.push(d.witness_t.map(num).unwrap_or_default());
            r.push(d.shortcut.map(|b| b.to_string()).unwrap_or_default());
            r.push(d.shortcut_value.map(num).unwrap_or_default());
            r
        })
        .collect();
    let (barrier, barrier_error) = match build_barrier(&s.dom, controls, &c.barrier) {
        Ok(b) => (Some(b), None),
        Err(Error::Certification(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };
    let convexity = ConvexitySummary {
        pass: rep.pass,
        samples: rep.samples,
        failures: rep.failures,
        worst_point: rep.worst_point.clone(),
        worst_t: rep.worst_t,
        shortcut_agreement: rep.shortcut_agreement,
        shortcut_agrees: rep.shortcut_agrees(),
    };
    Ok((Certification { certified: rep.pass && barrier.is_some(), convexity, barrier, barrier_error }, rows))
}

// ---------------------------------------------------------------------------
// Output helpers.

fn num(v: f64) -> String {
    format!("{v}")
}

/// Coordinate column names; complex problems use (Re z, Im z) names.
fn coord_names(realm: Realm, n: usize) -> Vec<String> {
    match realm {
        Realm::Real => (1..=n).map(|i| format!("x{i}")).collect(),
        Realm::Complex => {
            let d = n / 2;
            (1..=d).map(|i| format!("re_z{i}")).chain((1..=d).map(|i| format!("im_z{i}"))).collect()
        }
    }
}

/// A comment line with the command and config hash, a header row of
/// `name [unit]` columns, then the rows.
fn write_csv(path: &Path, ctx: &Context, command: &str, header: &[(String, &str)], rows: &[Vec<String>]) -> Result<()> {
    let mut s = format!("# hessbell {command}; config_sha256={}\n", ctx.hash);
    let head: Vec<String> = header.iter().map(|(n, u)| format!("{n} [{u}]")).collect();
    s.push_str(&head.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands.

fn cmd_check_domain(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let s = setup(cfg)?;
    let (_, controls) = controls_at(cfg, &s.op, cfg.grid.h)?;
    let (cert, rows) = certify(cfg, &s, &controls)?;
    let mut header: Vec<(String, &str)> = coord_names(cfg.realm, s.dom.dim()).into_iter().map(|n| (n, "length")).collect();
    header.push(("witness_t".into(), "curvature"));
    header.push(("shortcut".into(), "bool"));
    header.push(("shortcut_value".into(), "curvature"));
    write_csv(&ctx.out.join("convexity.csv"), ctx, "check-domain", &header, &rows)?;
    #[derive(Serialize)]
    struct Out<'a> {
        name: &'a str,
        config_sha256: &'a str,
        certification: &'a Certification,
    }
    write_json(&ctx.out.join("certificate.json"), &Out { name: &cfg.name, config_sha256: &ctx.hash, certification: &cert })?;
    println!("{}: certified = {}", cfg.name, cert.certified);
    Ok(if cert.certified { EXIT_OK } else { EXIT_CERTIFICATION })
}

/// Probe values of a converged solve.
#[derive(Clone, Debug, Serialize)]
struct Probes {
    bound0_pass: bool,
    bound0_slack: f64,
    n1: f64,
    n2: f64,
}

fn probes(problem: &DirichletProblem, grid: &Grid, sol: &GridSolution, cert: &BarrierCertificate) -> Result<Probes> {
    let b0 = regularity_probe(problem, grid, sol, cert, ProbeMode::Bound0)?;
    let n1 = regularity_probe(problem, grid, sol, cert, ProbeMode::Gradient)?;
    let n2 = regularity_probe(problem, grid, sol, cert, ProbeMode::Second)?;
    Ok(Probes { bound0_pass: b0.pass.unwrap_or(false), bound0_slack: b0.value, n1: n1.value, n2: n2.value })
}

struct Solved {
    grid: Grid,
    controls: ControlSet,
    spec: ControlGridSpec,
    sol: GridSolution,
    cert: Certification,
}

/// Certify (unless forced), then solve on spacing h.
fn solve_at(ctx: &Context, s: &Setup, h: f64) -> Result<Solved> {
    let cfg = &ctx.cfg;
    let (spec, controls) = controls_at(cfg, &s.op, h)?;
    let (cert, _) = certify(cfg, s, &controls)?;
    if !cert.certified && !ctx.force {
        let why = cert.barrier_error.clone().unwrap_or_else(|| {
            format!("{} of {} boundary samples fail strict convexity", cert.convexity.failures, cert.convexity.samples)
        });
        return Err(Error::Certification(format!("{why} (use --force to solve anyway)")));
    }
    let grid = build_grid(&s.problem.dom, h)?;
    let sol = policy_iteration(&s.problem, &grid, &controls, &cfg.solver)?;
    Ok(Solved { grid, controls, spec, sol, cert })
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    name: &'a str,
    config_sha256: &'a str,
    realm: Realm,
    h: f64,
    interior_nodes: usize,
    controls: usize,
    boundary_levels: usize,
    converged: bool,
    partial: bool,
    iterations: usize,
    residual_inf_norm: f64,
    residual_monotone: bool,
    residual_history: &'a [f64],
    max_error: Option<f64>,
    complex_residual_max: Option<f64>,
    probes: Option<Probes>,
    certified: bool,
    forced: bool,
    barrier: Option<BarrierCertificate>,
    quasi_convexity_k: Option<f64>,
}

fn cmd_solve(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let s = setup(cfg)?;
    let r = solve_at(ctx, &s, cfg.grid.h)?;
    let n = r.grid.dim;
    let mut header: Vec<(String, &str)> = coord_names(cfg.realm, n).into_iter().map(|c| (c, "length")).collect();
    header.push(("u".into(), "solution"));
    header.push(("policy".into(), "control index"));
    if cfg.exact.is_some() {
        header.push(("exact".into(), "solution"));
    }
    let rows: Vec<Vec<String>> = (0..r.grid.len())
        .map(|i| {
            let x = r.grid.position(i);
            let mut row: Vec<String> = x.iter().map(|v| num(*v)).collect();
            row.push(num(r.sol.values[i]));
            row.push(r.sol.policy[i].to_string());
            if let Some(e) = &cfg.exact {
                row.push(num(e.eval(&x)));
            }
            row
        })
        .collect();
    write_csv(&ctx.out.join("solution.csv"), ctx, "solve", &header, &rows)?;
    let probes = match (&r.cert.barrier, r.sol.converged) {
        (Some(b), true) => Some(probes(&s.problem, &r.grid, &r.sol, b)?),
        _ => None,
    };
    let complex_residual_max = s.complex.as_ref().map(|cp| {
        let lifted = lift(cp).expect("lift succeeded during setup");
        complex_residuals(&lifted, &r.grid, &r.sol, &r.controls, &cp.f)
            .iter()
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
    });
    let summary = SolveSummary {
        name: &cfg.name,
        config_sha256: &ctx.hash,
        realm: cfg.realm,
        h: cfg.grid.h,
        interior_nodes: r.grid.len(),
        controls: r.controls.len(),
        boundary_levels: r.spec.boundary_levels,
        converged: r.sol.converged,
        partial: !r.sol.converged,
        iterations: r.sol.iterations,
        residual_inf_norm: r.sol.residual_inf_norm,
        residual_monotone: r.sol.residual_monotone(),
        residual_history: &r.sol.residual_history,
        max_error: cfg.exact.as_ref().map(|e| max_error(&r.grid, &r.sol, e)),
        complex_residual_max,
        probes,
        certified: r.cert.certified,
        forced: ctx.force,
        barrier: r.cert.barrier.clone(),
        quasi_convexity_k: cfg.quasi_convexity_k,
    };
    write_json(&ctx.out.join("summary.json"), &summary)?;
    println!(
        "{}: converged = {}, iterations = {}, residual = {:e}{}",
        cfg.name,
        r.sol.converged,
        r.sol.iterations,
        r.sol.residual_inf_norm,
        summary.max_error.map(|e| format!(", max error = {e:e}")).unwrap_or_default()
    );
    Ok(if r.sol.converged { EXIT_OK } else { EXIT_NONCONVERGENCE })
}

fn cmd_verify(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let v = &cfg.verify;
    let op = cfg.operator.build(cfg.realm)?;
    let n = crate::bellman::working_dim(&op);
    let verifier = EquivalenceVerifier::new(&op, v.density)?;
    let mut rng = ChaCha8Rng::seed_from_u64(v.seed);
    let mut rows = Vec::with_capacity(v.samples);
    let mut passed = 0;
    let mut worst = 0.0f64;
    for k in 0..v.samples {
        let gamma = random_symmetric(n, v.scale, &mut rng);
        let c = rng.random_range(0.0..v.c_max);
        let rep = verifier.verify(&gamma, c, v.tol)?;
        let defect = (rep.residual + rep.t1).abs();
        worst = worst.max(defect);
        passed += rep.pass as usize;
        rows.push(vec![k.to_string(), num(c), num(rep.residual), num(rep.t1), num(defect), rep.pass.to_string()]);
    }
    let header = [
        ("sample".to_string(), "index"),
        ("c".to_string(), "source"),
        ("residual".to_string(), "source"),
        ("t1".to_string(), "shift"),
        ("defect".to_string(), "source"),
        ("pass".to_string(), "bool"),
    ];
    write_csv(&ctx.out.join("verify.csv"), ctx, "verify", &header, &rows)?;
    #[derive(Serialize)]
    struct Out<'a> {
        name: &'a str,
        config_sha256: &'a str,
        controls: usize,
        samples: usize,
        passed: usize,
        failed: usize,
        tol: f64,
        worst_defect: f64,
    }
    let out = Out {
        name: &cfg.name,
        config_sha256: &ctx.hash,
        controls: verifier.len(),
        samples: v.samples,
        passed,
        failed: v.samples - passed,
        tol: v.tol,
        worst_defect: worst,
    };
    write_json(&ctx.out.join("verify.json"), &out)?;
    println!("{}: {passed}/{} pass, worst defect {worst:e}", cfg.name, v.samples);
    Ok(if passed == v.samples { EXIT_OK } else { EXIT_CERTIFICATION })
}

#[derive(Serialize)]
struct McPoint {
    point: Vec<f64>,
    /// (Re, Im) pairs for complex problems.
    z: Option<Vec<[f64; 2]>>,
    control: Option<usize>,
    estimate: McEstimate,
    grid_value: Option<f64>,
}

fn cmd_mc(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    let s = setup(cfg)?;
    let m = &cfg.mc;
    let spec = McSpec { n_paths: m.n_paths, dt: m.dt, seed: m.seed, max_steps: m.max_steps };
    let points = if m.points.is_empty() { vec![s.dom.center().to_vec()] } else { m.points.clone() };
    for p in &points {
        if p.len() != s.dom.dim() || !s.dom.contains(p) {
            return Err(Error::Config(format!("mc point {p:?} is not an interior point")));
        }
    }
    let solved = match m.policy {
        McPolicyChoice::Grid => {
            let r = solve_at(ctx, &s, cfg.grid.h)?;
            if !r.sol.converged {
                eprintln!("grid solve did not converge; estimates use its last policy");
            }
            Some(r)
        }
        _ => None,
    };
    let controls = match &solved {
        Some(r) => r.controls.clone(),
        None => controls_at(cfg, &s.op, cfg.grid.h)?.1,
    };
    let z_of = |x: &[f64]| {
        s.complex.as_ref().map(|_| {
            let d = x.len() / 2;
            (0..d).map(|i| [x[i], x[d + i]]).collect()
        })
    };
    let grid_value = |x: &[f64]| solved.as_ref().and_then(|r| r.sol.value_at(&s.problem, &r.grid, x));
    let mut out = Vec::new();
    for x in &points {
        match m.policy {
            McPolicyChoice::Grid => {
                let r = solved.as_ref().expect("grid policy solves first");
                let pol = McPolicy::Grid { solution: &r.sol, grid: &r.grid, controls: &controls };
                let estimate = mc_value(&s.problem, x, &pol, &spec)?;
                out.push(McPoint { point: x.clone(), z: z_of(x), control: None, estimate, grid_value: grid_value(x) });
            }
            McPolicyChoice::Identity => {
                let c = identity_control(&controls)
                    .ok_or_else(|| Error::Config("operator has no identity control".into()))?;
                let estimate = mc_value(&s.problem, x, &McPolicy::Constant(c), &spec)?;
                out.push(McPoint { point: x.clone(), z: z_of(x), control: Some(0), estimate, grid_value: None });
            }
            McPolicyChoice::Constant => {
                for &k in &m.controls {
                    let c = controls
                        .coeffs
                        .get(k)
                        .ok_or_else(|| Error::Config(format!("control index {k} out of range ({})", controls.len())))?;
                    let estimate = mc_value(&s.problem, x, &McPolicy::Constant(c), &spec)?;
                    out.push(McPoint { point: x.clone(), z: z_of(x), control: Some(k), estimate, grid_value: None });
                }
            }
        }
    }
    #[derive(Serialize)]
    struct Out<'a> {
        name: &'a str,
        config_sha256: &'a str,
        policy: McPolicyChoice,
        estimates: Vec<McPoint>,
    }
    let censored: usize = out.iter().map(|p| p.estimate.censored).sum();
    write_json(&ctx.out.join("mc.json"), &Out { name: &cfg.name, config_sha256: &ctx.hash, policy: m.policy, estimates: out })?;
    println!("{}: {} estimates written, {censored} censored paths", cfg.name, points.len());
    Ok(match &solved {
        Some(r) if !r.sol.converged => EXIT_NONCONVERGENCE,
        _ => EXIT_OK,
    })
}

#[derive(Clone, Debug, Serialize)]
struct LadderRow {
    h: f64,
    interior_nodes: usize,
    boundary_levels: usize,
    error: Option<f64>,
    n1: Option<f64>,
    n2: Option<f64>,
    bound0_pass: Option<bool>,
    iterations: usize,
    converged: bool,
    runtime_s: f64,
}

fn cmd_converge(ctx: &Context) -> Result<i32> {
    let cfg = &ctx.cfg;
    if cfg.grid.ladder.is_empty() {
        return Err(Error::Config("converge needs grid.ladder".into()));
    }
    let s = setup(cfg)?;
    let mut table = Vec::new();
    for &h in &cfg.grid.ladder {
        let t = Instant::now();
        let r = solve_at(ctx, &s, h)?;
        let p = match (&r.cert.barrier, r.sol.converged) {
            (Some(b), true) => Some(probes(&s.problem, &r.grid, &r.sol, b)?),
            _ => None,
        };
        table.push(LadderRow {
            h,
            interior_nodes: r.grid.len(),
            boundary_levels: r.spec.boundary_levels,
            error: cfg.exact.as_ref().map(|e| max_error(&r.grid, &r.sol, e)),
            n1: p.as_ref().map(|p| p.n1),
            n2: p.as_ref().map(|p| p.n2),
            bound0_pass: p.as_ref().map(|p| p.bound0_pass),
            iterations: r.sol.iterations,
            converged: r.sol.converged,
            runtime_s: t.elapsed().as_secs_f64(),
        });
        eprintln!("h = {h}: done in {:.1} s", t.elapsed().as_secs_f64());
    }
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| {
            vec![
                num(r.h),
                r.interior_nodes.to_string(),
                r.boundary_levels.to_string(),
                opt(r.error),
                opt(r.n1),
                opt(r.n2),
                r.bound0_pass.map(|b| b.to_string()).unwrap_or_default(),
                r.iterations.to_string(),
                r.converged.to_string(),
                format!("{:.3}", r.runtime_s),
            ]
        })
        .collect();
    let header = [
        ("h".to_string(), "length"),
        ("interior_nodes".to_string(), "count"),
        ("boundary_levels".to_string(), "count"),
        ("error".to_string(), "solution"),
        ("n1".to_string(), "dimensionless"),
        ("n2".to_string(), "dimensionless"),
        ("bound0_pass".to_string(), "bool"),
        ("iterations".to_string(), "count"),
        ("converged".to_string(), "bool"),
        ("runtime".to_string(), "s"),
    ];
    write_csv(&ctx.out.join("converge.csv"), ctx, "converge", &header, &rows)?;
    let ratios = |f: fn(&LadderRow) -> Option<f64>| -> Vec<Option<f64>> {
        table.windows(2).map(|w| Some(f(&w[1])? / f(&w[0])?)).collect()
    };
    #[derive(Serialize)]
    struct Out<'a> {
        name: &'a str,
        config_sha256: &'a str,
        rows: &'a [LadderRow],
        error_ratios: Vec<Option<f64>>,
        n2_ratios: Vec<Option<f64>>,
    }
    let out = Out {
        name: &cfg.name,
        config_sha256: &ctx.hash,
        rows: &table,
        error_ratios: ratios(|r| r.error),
        n2_ratios: ratios(|r| r.n2),
    };
    write_json(&ctx.out.join("converge.json"), &out)?;
    println!("{}: {} ladder steps written", cfg.name, table.len());
    Ok(if table.iter().all(|r| r.converged) { EXIT_OK } else { EXIT_NONCONVERGENCE })
}
