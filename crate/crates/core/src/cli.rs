//! Command-line front end: argument parsing, experiment drivers and artifacts.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::config::{
    self, Command, GradCheckParams, InitPolicy, KPolicy, Overrides, QslSweepParams, RunConfig, SlepianParams,
    SynthesizeParams,
};
use crate::error::{GrafsError, Result};
use crate::gradient::{fidelity_gradient, fidelity_of_coefficients, grafs_gradient, grafs_gradient_direct,
    pulse_from_coefficients};
use crate::models::{pe_random_target, resolve_system, resolve_target, GateTarget};
use crate::operator::phase_invariant_fidelity;
use crate::optimizer::{ascend, AscentResult, CoefficientMatrix, OptimizerConfig};
use crate::output::{fmt_f64, CsvTable, Header, OutputDir};
use crate::propagation::{total_propagator, ControlPulse, ControlSystem, PulseGrid};
use crate::qsl::{self, BasisPolicy, FitResult, QslConfig, Status, SweepRecord};
use crate::rng::SeedTree;
use crate::slepian::{effective_dimension, endpoint_filter, endpoint_ratio, generate_dpss, SlepianBasis};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "grafs", version, about = "Band-limited gate synthesis on a Slepian basis")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $GRAFS_OUT_DIR, then ./grafs-out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Generate Slepian sequences.
    Slepian {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        w: Option<f64>,
        /// Number of sequences (default round(2NW)).
        #[arg(long)]
        k: Option<usize>,
        /// Apply the endpoint filter.
        #[arg(long)]
        filter: bool,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Optimize Slepian coefficients for a target gate.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        problem: Problem,
        /// filtered | full | fraction:<f> | count:<k>
        #[arg(long)]
        k_policy: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        alpha_bound: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        grad_tol: Option<f64>,
        #[arg(long)]
        fid_target: Option<f64>,
        /// zero | uniform
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        init_spread: Option<f64>,
        #[arg(long)]
        memory: Option<usize>,
        /// lbfgs | steepest-ascent
        #[arg(long)]
        direction: Option<String>,
    },
    /// Compare analytic gradients with finite differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        coeff_scale: Option<f64>,
    },
    /// Minimal-time sweep over targets, bandwidths and fidelity thresholds.
    QslSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        system: Option<String>,
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<String>>,
        #[arg(long)]
        n_targets: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        w_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        f_stars: Option<Vec<f64>>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        dt_ref: Option<f64>,
        #[arg(long)]
        rel_tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        alpha_bound: Option<f64>,
    },
}

#[derive(Args, Debug, Default)]
struct Problem {
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

impl Problem {
    fn apply(self, o: &mut Overrides) -> Result<()> {
        o.set("system", self.system)?;
        o.set("target", self.target)?;
        o.set("n", self.n)?;
        o.set("w", self.w)?;
        o.set("tau", self.tau)
    }
}

impl Common {
    fn apply(&self, o: &mut Overrides) -> Result<()> {
        o.set("seed", self.seed)?;
        o.set("out_dir", self.out_dir.as_ref().map(|p| p.to_string_lossy().into_owned()))?;
        o.set("workers", self.workers)
    }
}

/// Parses `argv` (including the program name) into a resolved configuration.
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| GrafsError::Config(e.render().to_string()))?;
    let env_out = std::env::var_os(config::OUT_DIR_ENV).map(PathBuf::from);
    let mut o = Overrides::default();
    let (name, common) = match cli.command {
        Sub::Slepian {
            common,
            n,
            w,
            k,
            filter,
            threshold,
        } => {
            o.set("n", n)?;
            o.set("w", w)?;
            o.set("k", k)?;
            o.set("filter", filter.then_some(true))?;
            o.set("threshold", threshold)?;
            ("slepian", common)
        }
        Sub::Synthesize {
            common,
            problem,
            k_policy,
            threshold,
            alpha_bound,
            max_iters,
            grad_tol,
            fid_target,
            init,
            init_spread,
            memory,
            direction,
        } => {
            problem.apply(&mut o)?;
            o.set("k_policy", k_policy)?;
            o.set("threshold", threshold)?;
            o.set("alpha_bound", alpha_bound)?;
            o.set("max_iters", max_iters)?;
            o.set("grad_tol", grad_tol)?;
            o.set("fid_target", fid_target)?;
            o.set("init", init)?;
            o.set("init_spread", init_spread)?;
            o.set("memory", memory)?;
            o.set("direction", direction)?;
            ("synthesize", common)
        }
        Sub::GradCheck {
            common,
            problem,
            samples,
            h,
            tol,
            coeff_scale,
        } => {
            problem.apply(&mut o)?;
            o.set("samples", samples)?;
            o.set("h", h)?;
            o.set("tol", tol)?;
            o.set("coeff_scale", coeff_scale)?;
            ("grad-check", common)
        }
        Sub::QslSweep {
            common,
            system,
            targets,
            n_targets,
            w_grid,
            f_stars,
            n,
            dt_ref,
            rel_tol,
            max_iters,
            restarts,
            alpha_bound,
        } => {
            o.set("system", system)?;
            o.set("targets", targets)?;
            o.set("n_targets", n_targets)?;
            o.set("w_grid", w_grid)?;
            o.set("f_stars", f_stars)?;
            o.set("n", n)?;
            o.set("dt_ref", dt_ref)?;
            o.set("rel_tol", rel_tol)?;
            o.set("max_iters", max_iters)?;
            o.set("restarts", restarts)?;
            o.set("alpha_bound", alpha_bound)?;
            ("qsl-sweep", common)
        }
    };
    common.apply(&mut o)?;
    let file = common.config.as_deref().map(config::read_table).transpose()?;
    config::resolve(name, file, o, env_out)
}

/// Basis for `(n, w)` under a sequence-count policy.
pub fn build_basis(n: usize, w: f64, policy: KPolicy, threshold: f64) -> Result<SlepianBasis> {
    let k2nw = effective_dimension(n, w).clamp(1, n);
    match policy {
        KPolicy::Filtered => endpoint_filter(&generate_dpss(n, w, k2nw)?, threshold),
        KPolicy::Full => generate_dpss(n, w, k2nw),
        KPolicy::Fraction(f) => generate_dpss(n, w, ((f * k2nw as f64).ceil() as usize).clamp(1, n)),
        KPolicy::Count(k) => generate_dpss(n, w, k),
    }
}

/// Everything a synthesis run produces.
pub struct Synthesis {
    pub system: ControlSystem,
    pub target: GateTarget,
    pub basis: SlepianBasis,
    pub grid: PulseGrid,
    pub result: AscentResult,
    pub pulse: ControlPulse,
}

pub fn optimizer_config(p: &SynthesizeParams, seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        max_iters: p.max_iters,
        grad_tol: p.grad_tol,
        fid_target: p.fid_target,
        coeff_bound: p.alpha_bound,
        memory: p.memory,
        direction: p.direction,
        seed,
        ..OptimizerConfig::default()
    }
}

/// Resolves the named system and target, builds the basis and runs the ascent.
pub fn synthesize(p: &SynthesizeParams, seed: u64) -> Result<Synthesis> {
    let system = resolve_system(&p.system)?;
    let target = resolve_target(&p.target)?;
    if target.unitary.dim() != system.dim() {
        return Err(GrafsError::Config(format!(
            "target `{}` has dimension {} but system `{}` has {}",
            p.target,
            target.unitary.dim(),
            p.system,
            system.dim()
        )));
    }
    let basis = build_basis(p.n, p.w, p.k_policy, p.threshold)?;
    let grid = PulseGrid::from_duration(p.n, p.tau)?;
    let cfg = optimizer_config(p, seed);
    let (k, m) = (basis.n_sequences(), system.n_controls());
    let a0 = match p.init {
        InitPolicy::Zero => CoefficientMatrix::zeros(k, m, p.alpha_bound)?,
        InitPolicy::Uniform => {
            let mut rng = SeedTree::new(seed).stream("init");
            CoefficientMatrix::random(k, m, p.alpha_bound, p.init_spread, &mut rng)?
        }
    };
    let result = ascend(&system, &basis, &target.unitary, grid, &cfg, &a0)?;
    let pulse = pulse_from_coefficients(&basis, result.coeffs.values(), grid)?;
    Ok(Synthesis {
        system,
        target,
        basis,
        grid,
        result,
        pulse,
    })
}

#[derive(Serialize)]
struct SlepianSummary<'a> {
    n: usize,
    w: f64,
    k: usize,
    two_nw: usize,
    filtered: bool,
    orders: &'a [usize],
    eigenvalues: &'a [f64],
    endpoint_ratios: Vec<f64>,
}

fn run_slepian(p: &SlepianParams, out: &OutputDir) -> Result<Vec<PathBuf>> {
    let k = p.k.unwrap_or_else(|| effective_dimension(p.n, p.w).clamp(1, p.n));
    let mut basis = generate_dpss(p.n, p.w, k)?;
    if p.filter {
        basis = endpoint_filter(&basis, p.threshold)?;
    }
    let mut cols = vec!["ell".to_string()];
    cols.extend(basis.orders().iter().map(|o| format!("v{o}")));
    let mut table = CsvTable::new(cols);
    for l in 0..basis.n() {
        let mut row = vec![l.to_string()];
        row.extend(basis.matrix().row(l).iter().map(|v| fmt_f64(*v)));
        table.push(row);
    }
    let summary = SlepianSummary {
        n: p.n,
        w: p.w,
        k: basis.n_sequences(),
        two_nw: effective_dimension(p.n, p.w),
        filtered: p.filter,
        orders: basis.orders(),
        eigenvalues: basis.eigenvalues(),
        endpoint_ratios: (0..basis.n_sequences()).map(|k| endpoint_ratio(&basis.column(k))).collect(),
    };
    Ok(vec![out.write_csv("basis.csv", &table)?, out.write_json("basis.json", &summary)?])
}

#[derive(Serialize)]
struct SynthesisSummary {
    system: String,
    target: String,
    termination: crate::optimizer::Termination,
    phi: f64,
    infidelity: f64,
    iterations: usize,
    evaluations: usize,
    grad_norm: f64,
    k: usize,
    orders: Vec<usize>,
    min_concentration: f64,
    tau: f64,
    dt: f64,
    config: toml::Value,
}

fn run_synthesize(cfg: &RunConfig, p: &SynthesizeParams, out: &OutputDir) -> Result<Vec<PathBuf>> {
    let s = synthesize(p, cfg.seed)?;
    let m = s.system.n_controls();
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=m).map(|j| format!("omega_{j}")));
    let mut pulse = CsvTable::new(cols);
    for l in 0..s.grid.n_steps() {
        let mut row = vec![s.grid.step_time(l + 1)];
        row.extend(s.pulse.values().row(l).iter());
        pulse.push_numbers(&row);
    }
    let mut trace = CsvTable::new(["iter", "phi", "grad_norm", "eps"]);
    for r in &s.result.trace.records {
        trace.push(vec![r.iter.to_string(), fmt_f64(r.phi), fmt_f64(r.grad_norm), fmt_f64(r.step)]);
    }
    let k = s.basis.n_sequences();
    let mut cols = vec!["order".to_string()];
    cols.extend((1..=m).map(|j| format!("alpha_{j}")));
    let mut coeffs = CsvTable::new(cols);
    for (row, order) in s.basis.orders().iter().enumerate() {
        let mut r = vec![order.to_string()];
        r.extend(s.result.coeffs.values().row(row).iter().map(|v| fmt_f64(*v)));
        coeffs.push(r);
    }
    let mut cols = vec!["iter".to_string()];
    for order in s.basis.orders() {
        for j in 1..=m {
            cols.push(format!("a_{order}_{j}"));
        }
    }
    let mut snapshots = CsvTable::new(cols);
    for r in &s.result.trace.records {
        if let Some(a) = &r.coeffs {
            let mut row = vec![r.iter.to_string()];
            for kk in 0..k {
                for j in 0..m {
                    row.push(fmt_f64(a[(kk, j)]));
                }
            }
            snapshots.push(row);
        }
    }
    let config: toml::Value = cfg.to_toml().parse::<toml::Table>().map(toml::Value::Table).expect("resolved TOML");
    let summary = SynthesisSummary {
        system: p.system.clone(),
        target: s.target.id.clone(),
        termination: s.result.termination,
        phi: s.result.phi,
        infidelity: 1.0 - s.result.phi,
        iterations: s.result.iterations,
        evaluations: s.result.evaluations,
        grad_norm: s.result.grad_norm,
        k,
        orders: s.basis.orders().to_vec(),
        min_concentration: s.basis.min_concentration(),
        tau: s.grid.tau(),
        dt: s.grid.dt(),
        config,
    };
    Ok(vec![
        out.write_csv("pulse.csv", &pulse)?,
        out.write_csv("trace.csv", &trace)?,
        out.write_csv("coeffs.csv", &coeffs)?,
        out.write_csv("coeff_trace.csv", &snapshots)?,
        out.write_json("result.json", &summary)?,
    ])
}

/// One finite-difference comparison.
#[derive(Clone, Debug, Serialize)]
pub struct GradSample {
    pub kind: &'static str,
    pub row: usize,
    pub control: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub pass: bool,
    pub worst_rel_error: f64,
    /// Max deviation between the contracted and direct coefficient gradients.
    pub contraction_vs_direct: f64,
    pub samples: Vec<GradSample>,
}

fn rel_error(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / fd.abs().max(a.abs()).max(1e-8)
}

/// Central differences of `Φ` against the pulse-entry and coefficient gradients.
pub fn grad_check(p: &GradCheckParams, seed: u64) -> Result<GradCheckReport> {
    let system = resolve_system(&p.system)?;
    let target = resolve_target(&p.target)?;
    if target.unitary.dim() != system.dim() {
        return Err(GrafsError::Config(format!("target `{}` does not match system `{}`", p.target, p.system)));
    }
    let basis = build_basis(p.n, p.w, KPolicy::Full, crate::slepian::DEFAULT_ENDPOINT_THRESHOLD)?;
    let grid = PulseGrid::from_duration(p.n, p.tau)?;
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream("coefficients");
    let (k, m) = (basis.n_sequences(), system.n_controls());
    let coeffs = DMatrix::from_fn(k, m, |_, _| rng.random_range(-p.coeff_scale..=p.coeff_scale));
    let pulse = pulse_from_coefficients(&basis, &coeffs, grid)?;
    let fg = fidelity_gradient(&system, &pulse, &target.unitary)?;
    let contracted = grafs_gradient(&fg.grape, &basis)?;
    let (direct, _) = grafs_gradient_direct(&system, &basis, &coeffs, &target.unitary, grid)?;
    let contraction_vs_direct = (&contracted - &direct).amax();

    let phi_of_pulse = |values: &DMatrix<f64>| -> Result<f64> {
        let u = total_propagator(&system, &ControlPulse::new(values.clone(), grid)?)?;
        phase_invariant_fidelity(&target.unitary, &u)
    };
    let mut samples = Vec::new();
    let mut pick = tree.stream("entries");
    for _ in 0..p.samples {
        let (l, j) = (pick.random_range(0..p.n), pick.random_range(0..m));
        let mut plus = pulse.values().clone();
        plus[(l, j)] += p.h;
        let mut minus = pulse.values().clone();
        minus[(l, j)] -= p.h;
        let fd = (phi_of_pulse(&plus)? - phi_of_pulse(&minus)?) / (2.0 * p.h);
        let a = fg.grape[(l, j)];
        samples.push(GradSample {
            kind: "pulse",
            row: l,
            control: j,
            analytic: a,
            finite_difference: fd,
            rel_error: rel_error(a, fd),
        });
    }
    for _ in 0..p.samples {
        let (kk, j) = (pick.random_range(0..k), pick.random_range(0..m));
        let mut plus = coeffs.clone();
        plus[(kk, j)] += p.h;
        let mut minus = coeffs.clone();
        minus[(kk, j)] -= p.h;
        let fd = (fidelity_of_coefficients(&system, &basis, &plus, &target.unitary, grid)?
            - fidelity_of_coefficients(&system, &basis, &minus, &target.unitary, grid)?)
            / (2.0 * p.h);
        let a = contracted[(kk, j)];
        samples.push(GradSample {
            kind: "coefficient",
            row: kk,
            control: j,
            analytic: a,
            finite_difference: fd,
            rel_error: rel_error(a, fd),
        });
    }
    let worst = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        pass: worst < p.tol && contraction_vs_direct < 1e-12,
        worst_rel_error: worst,
        contraction_vs_direct,
        samples,
    })
}

pub fn qsl_config(p: &QslSweepParams) -> QslConfig {
    QslConfig {
        n: p.n,
        basis: BasisPolicy::Slepian { dt_ref: p.dt_ref },
        rel_tol: p.rel_tol,
        max_iters: p.max_iters,
        restarts: p.restarts,
        coeff_bound: p.alpha_bound,
        ..QslConfig::default()
    }
}

/// Target list for a sweep: explicit names, or seeded random perfect entanglers.
pub fn sweep_targets(p: &QslSweepParams, seed: u64) -> Result<Vec<GateTarget>> {
    if p.targets.is_empty() {
        let tree = SeedTree::new(seed);
        Ok((0..p.n_targets)
            .map(|i| pe_random_target(tree.derive("targets", i as u64) >> 32))
            .collect())
    } else {
        p.targets.iter().map(|t| resolve_target(t)).collect()
    }
}

pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub fits: BTreeMap<String, std::result::Result<FitResult, String>>,
}

pub fn run_sweep_records<F: Fn(&SweepRecord) + Sync>(
    p: &QslSweepParams,
    seed: u64,
    on_record: F,
) -> Result<SweepOutcome> {
    let system = resolve_system(&p.system)?;
    let targets = sweep_targets(p, seed)?;
    for t in &targets {
        if t.unitary.dim() != system.dim() {
            return Err(GrafsError::Config(format!("target `{}` does not match system `{}`", t.id, p.system)));
        }
    }
    let cfg = qsl_config(p);
    let records = qsl::sweep(&system, &targets, &p.w_grid, &p.f_stars, &cfg, &SeedTree::new(seed), on_record);
    let mut fits = BTreeMap::new();
    for &f in &p.f_stars {
        fits.insert(
            fmt_f64(f),
            qsl::fit_inverse_bandwidth(&records, f).map_err(|e| e.to_string()),
        );
    }
    Ok(SweepOutcome { records, fits })
}

fn run_qsl_sweep(cfg: &RunConfig, p: &QslSweepParams, out: &OutputDir) -> Result<(Vec<PathBuf>, bool)> {
    let progress = Mutex::new(Vec::<String>::new());
    let progress_path = out.path("progress.jsonl");
    std::fs::write(&progress_path, b"")?;
    let outcome = run_sweep_records(p, cfg.seed, |r| {
        let line = serde_json::to_string(&serde_json::json!({
            "target_id": r.target_id, "w": r.w, "f_star": r.f_star,
            "tau_min": r.tau_min, "status": r.status.label(),
        }))
        .unwrap_or_default();
        let mut guard = progress.lock().expect("progress writer");
        guard.push(line);
        let mut text = guard.join("\n");
        text.push('\n');
        let _ = std::fs::write(&progress_path, text);
    })?;

    let mut sweep = CsvTable::new(["target_id", "seed", "w", "f_star", "tau_min", "iters", "status"]);
    for r in &outcome.records {
        sweep.push(vec![
            r.target_id.clone(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            fmt_f64(r.w),
            fmt_f64(r.f_star),
            fmt_f64(r.tau_min),
            r.iterations.to_string(),
            r.status.label(),
        ]);
    }
    let mut fig5 = CsvTable::new(["w", "mean_tau", "std_tau", "f_star", "count"]);
    for &f in &p.f_stars {
        for pt in qsl::per_w_stats(&outcome.records, f) {
            fig5.push(vec![fmt_f64(pt.w), fmt_f64(pt.mean_tau), fmt_f64(pt.std_tau), fmt_f64(f), pt.count.to_string()]);
        }
    }
    let mut fit_json = serde_json::Map::new();
    for (k, v) in &outcome.fits {
        let entry = match v {
            Ok(fit) => serde_json::json!({"a": fit.a, "b": fit.b, "residual": fit.residual}),
            Err(e) => serde_json::json!({"error": e}),
        };
        fit_json.insert(k.clone(), entry);
    }
    let partial = outcome.records.iter().any(|r| r.status != Status::Ok);
    let files = vec![
        out.write_csv("sweep.csv", &sweep)?,
        out.write_json("fit.json", &serde_json::Value::Object(fit_json))?,
        out.write_csv("fig5.csv", &fig5)?,
        out.write_json("records.json", &serde_json::json!({ "records": outcome.records }))?,
    ];
    Ok((files, partial))
}

pub fn exit_code(e: &GrafsError) -> i32 {
    match e {
        GrafsError::Config(_) | GrafsError::InvalidParameter { .. } | GrafsError::UnknownName(_) => EXIT_CONFIG,
        GrafsError::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Runs a resolved configuration, writing artifacts; returns the exit code.
pub fn execute(cfg: &RunConfig) -> Result<i32> {
    let out = OutputDir::prepare(
        &cfg.out_dir,
        Header {
            config_hash: cfg.hash(),
            seed: cfg.seed,
        },
    )?;
    out.write_text("config.resolved", &cfg.to_toml())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        builder = builder.num_threads(cfg.workers);
    }
    let pool = builder.build().map_err(|e| GrafsError::Config(format!("worker pool: {e}")))?;
    pool.install(|| match &cfg.command {
        Command::Slepian(p) => run_slepian(p, &out).map(|_| EXIT_OK),
        Command::Synthesize(p) => run_synthesize(cfg, p, &out).map(|_| EXIT_OK),
        Command::GradCheck(p) => {
            let report = grad_check(p, cfg.seed)?;
            out.write_json("grad_check.json", &report)?;
            Ok(if report.pass { EXIT_OK } else { EXIT_NUMERICAL })
        }
        Command::QslSweep(p) => {
            let (_, partial) = run_qsl_sweep(cfg, p, &out)?;
            Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
        }
    })
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&argv) {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            print!("{e}");
            return EXIT_OK;
        }
    }
    let result = parse_config(argv).and_then(|cfg| execute(&cfg));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("grafs: {e}");
            exit_code(&e)
        }
    }
}
