//! Minimal-time estimation: golden-ratio bracketing over the pulse duration,
//! bandwidth sweeps and `a/W + b` fits.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GrafsError, Result};
use crate::models::GateTarget;
use crate::optimizer::{ascend, CoefficientMatrix, OptimizerConfig};
use crate::propagation::{ControlSystem, PulseGrid};
use crate::rng::SeedTree;
use crate::slepian::{generate_dpss, SlepianBasis};

pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

/// Reference step for the Slepian policy: `W_eff = W` when `Δt = DEFAULT_DT_REF`.
/// Sets the physical band edge at `W / DEFAULT_DT_REF` in units of the exchange coupling.
pub const DEFAULT_DT_REF: f64 = 0.1;

/// Analytic lower bound `δ / (2 √N W)` on the evolution time.
pub fn qsl_bound(delta: f64, n: usize, w: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(invalid("delta", format!("must lie in [0, 1], got {delta}")));
    }
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(invalid("w", format!("must be positive, got {w}")));
    }
    Ok(delta / (2.0 * (n as f64).sqrt() * w))
}

/// How the pulse basis is built at each candidate duration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BasisPolicy {
    /// `K = round(2 N W_eff)` Slepians with `W_eff = W τ / (N dt_ref)`, so the
    /// physical bandwidth `W_eff / Δt = W / dt_ref` is the same at every τ.
    Slepian { dt_ref: f64 },
    /// Every sample is an independent coefficient (no band limit).
    FullBand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QslConfig {
    pub n: usize,
    pub basis: BasisPolicy,
    /// First candidate τ; defaults to `10 dt_ref / W` for Slepian bases.
    pub start_tau: Option<f64>,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub coeff_bound: f64,
    pub init_spread: f64,
    pub grad_tol: f64,
    /// Growth cap for the doubling phase (ignored once `W_eff` would reach 0.5).
    pub max_doublings: usize,
    /// Safety cap on bisection steps.
    pub max_bisections: usize,
}

impl Default for QslConfig {
    fn default() -> Self {
        QslConfig {
            n: 200,
            basis: BasisPolicy::Slepian { dt_ref: DEFAULT_DT_REF },
            start_tau: None,
            rel_tol: 0.02,
            max_iters: 300,
            restarts: 3,
            coeff_bound: 1.0,
            init_spread: 0.1,
            grad_tol: 1e-9,
            max_doublings: 12,
            max_bisections: 60,
        }
    }
}

impl QslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid("n", format!("must be at least 2, got {}", self.n)));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(invalid("rel_tol", format!("must lie in (0, 1), got {}", self.rel_tol)));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts", "must be at least 1"));
        }
        if !(self.coeff_bound > 0.0) {
            return Err(invalid("coeff_bound", format!("must be positive, got {}", self.coeff_bound)));
        }
        if let BasisPolicy::Slepian { dt_ref } = self.basis {
            if !(dt_ref > 0.0 && dt_ref.is_finite()) {
                return Err(invalid("dt_ref", format!("must be positive, got {dt_ref}")));
            }
        }
        if let Some(t) = self.start_tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("start_tau", format!("must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Half bandwidth handed to the basis at duration `tau`.
    pub fn effective_w(&self, w_nominal: f64, tau: f64) -> f64 {
        match self.basis {
            BasisPolicy::Slepian { dt_ref } => w_nominal * tau / (self.n as f64 * dt_ref),
            BasisPolicy::FullBand => 0.5,
        }
    }

    fn start(&self, w_nominal: f64) -> f64 {
        match (self.start_tau, self.basis) {
            (Some(t), _) => t,
            (None, BasisPolicy::Slepian { dt_ref }) => 10.0 * dt_ref / w_nominal,
            (None, BasisPolicy::FullBand) => 1.0,
        }
    }

    fn basis_at(&self, w_nominal: f64, tau: f64) -> Result<Option<SlepianBasis>> {
        match self.basis {
            BasisPolicy::FullBand => Ok(Some(SlepianBasis::full_band(self.n))),
            BasisPolicy::Slepian { .. } => {
                let w = self.effective_w(w_nominal, tau);
                if w >= 0.5 {
                    return Ok(None);
                }
                let k = ((2.0 * self.n as f64 * w).round() as usize).clamp(1, self.n);
                generate_dpss(self.n, w, k).map(Some)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Candidate carried over from a run at a stricter threshold.
    Reused,
    Expand,
    Bisect,
}

/// One evaluated candidate duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub phase: Phase,
    pub tau: f64,
    pub w_eff: f64,
    pub success: bool,
    pub best_phi: f64,
    pub iterations: usize,
    pub restarts_used: usize,
}

/// Three candidates `lo < mid < hi` with `(hi - mid)/(mid - lo) = φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketState {
    pub lo: f64,
    pub mid: f64,
    pub hi: f64,
}

impl BracketState {
    /// `lo` is known (or assumed) to fail, `hi` to succeed.
    pub fn new(lo: f64, hi: f64) -> Self {
        BracketState {
            lo,
            mid: lo + (hi - lo) / (1.0 + GOLDEN_RATIO),
            hi,
        }
    }

    /// Success at `mid` moves the bracket down, failure moves it up.
    pub fn update(&self, success: bool) -> Self {
        if success {
            BracketState::new(self.lo, self.mid)
        } else {
            BracketState::new(self.mid, self.hi)
        }
    }

    pub fn ratio(&self) -> f64 {
        (self.hi - self.mid) / (self.mid - self.lo)
    }

    pub fn converged(&self, rel_tol: f64) -> bool {
        self.hi - self.lo < rel_tol * self.mid
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    BoundInfeasible,
    Error(String),
}

impl Status {
    pub fn label(&self) -> String {
        match self {
            Status::Ok => "ok".into(),
            Status::BoundInfeasible => "bound-infeasible".into(),
            Status::Error(e) => format!("error: {e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub target_id: String,
    pub seed: Option<u64>,
    pub w: f64,
    pub n: usize,
    pub f_star: f64,
    /// Smallest successful duration (NaN unless `status` is ok).
    pub tau_min: f64,
    pub w_eff_at_min: f64,
    pub iterations: usize,
    pub status: Status,
    /// Lower end of the starting bracket (assumed to fail when never evaluated).
    pub lo_start: f64,
    pub audit: Vec<AuditEntry>,
}

impl SweepRecord {
    pub fn key(&self) -> (String, u64, u64) {
        (self.target_id.clone(), self.w.to_bits(), self.f_star.to_bits())
    }

    /// Candidates the bisection phase would place given the recorded outcomes.
    pub fn replay_bisection(&self) -> Vec<f64> {
        let bisect: Vec<&AuditEntry> = self.audit.iter().filter(|e| e.phase == Phase::Bisect).collect();
        let Some(hi) = self.bisection_start_hi() else {
            return Vec::new();
        };
        let mut b = BracketState::new(self.lo_start, hi);
        let mut out = Vec::with_capacity(bisect.len());
        for e in bisect {
            out.push(b.mid);
            b = b.update(e.success);
        }
        out
    }

    fn bisection_start_hi(&self) -> Option<f64> {
        self.audit
            .iter()
            .filter(|e| e.phase != Phase::Bisect && e.success)
            .map(|e| e.tau)
            .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))))
    }

    /// Bound check with `δ = 1 - F*`.
    pub fn bound(&self) -> Result<f64> {
        qsl_bound(1.0 - self.f_star, self.n, self.w_eff_at_min)
    }
}

struct CandidateOutcome {
    success: bool,
    best_phi: f64,
    iterations: usize,
    restarts_used: usize,
}

fn run_candidate(
    sys: &ControlSystem,
    target: &GateTarget,
    w_nominal: f64,
    f_star: f64,
    tau: f64,
    cfg: &QslConfig,
    seeds: &SeedTree,
) -> Result<Option<CandidateOutcome>> {
    let Some(basis) = cfg.basis_at(w_nominal, tau)? else {
        return Ok(None);
    };
    let grid = PulseGrid::from_duration(cfg.n, tau)?;
    let opt = OptimizerConfig {
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        fid_target: f_star,
        coeff_bound: cfg.coeff_bound,
        ..OptimizerConfig::default()
    };
    let label = format!("init/{}/w={:e}/tau={:e}", target.id, w_nominal, tau);
    let mut best_phi = 0.0_f64;
    let mut iterations = 0;
    for r in 0..cfg.restarts {
        let mut rng = seeds.indexed(&label, r as u64);
        let a0 = CoefficientMatrix::random(
            basis.n_sequences(),
            sys.n_controls(),
            cfg.coeff_bound,
            cfg.init_spread,
            &mut rng,
        )?;
        let res = ascend(sys, &basis, &target.unitary, grid, &opt, &a0)?;
        iterations += res.iterations;
        best_phi = best_phi.max(res.phi);
        if res.phi >= f_star {
            return Ok(Some(CandidateOutcome {
                success: true,
                best_phi,
                iterations,
                restarts_used: r + 1,
            }));
        }
    }
    Ok(Some(CandidateOutcome {
        success: false,
        best_phi,
        iterations,
        restarts_used: cfg.restarts,
    }))
}

/// Estimates the minimal duration reaching `Φ ≥ f_star`.
///
/// `prior` is a record for the same target and `W` at a stricter threshold;
/// its candidates that already reached `f_star` seed the upper end.
pub fn min_time_bracket(
    sys: &ControlSystem,
    target: &GateTarget,
    w_nominal: f64,
    f_star: f64,
    cfg: &QslConfig,
    seeds: &SeedTree,
    prior: Option<&SweepRecord>,
) -> Result<SweepRecord> {
    cfg.validate()?;
    if !(f_star > 0.0 && f_star < 1.0) {
        return Err(invalid("f_star", format!("must lie in (0, 1), got {f_star}")));
    }
    if !(w_nominal > 0.0 && w_nominal < 0.5) {
        return Err(invalid("w", format!("must lie in (0, 0.5), got {w_nominal}")));
    }
    let mut audit = Vec::new();
    let mut iterations = 0;
    let record = |audit: &mut Vec<AuditEntry>, phase, tau, out: &CandidateOutcome| {
        audit.push(AuditEntry {
            phase,
            tau,
            w_eff: cfg.effective_w(w_nominal, tau),
            success: out.success,
            best_phi: out.best_phi,
            iterations: out.iterations,
            restarts_used: out.restarts_used,
        });
    };

    if let Some(p) = prior {
        for e in p.audit.iter().filter(|e| e.best_phi >= f_star) {
            audit.push(AuditEntry {
                phase: Phase::Reused,
                success: true,
                iterations: 0,
                ..e.clone()
            });
        }
    }

    // Failures below the smallest success tighten the lower end.
    let mut hi = audit.iter().map(|e| e.tau).fold(f64::INFINITY, f64::min);
    let mut failed_below: f64 = 0.0;
    if !hi.is_finite() {
        let mut tau = cfg.start(w_nominal);
        let mut found = false;
        for _ in 0..=cfg.max_doublings {
            let Some(out) = run_candidate(sys, target, w_nominal, f_star, tau, cfg, seeds)? else {
                break;
            };
            iterations += out.iterations;
            record(&mut audit, Phase::Expand, tau, &out);
            if out.success {
                found = true;
                break;
            }
            failed_below = tau;
            tau *= 2.0;
        }
        if !found {
            let record = SweepRecord {
                target_id: target.id.clone(),
                seed: target.seed,
                w: w_nominal,
                n: cfg.n,
                f_star,
                tau_min: f64::NAN,
                w_eff_at_min: f64::NAN,
                iterations,
                status: Status::BoundInfeasible,
                lo_start: failed_below,
                audit,
            };
            return Ok(record);
        }
        hi = tau;
    }

    let lo_start = if failed_below > 0.0 {
        failed_below
    } else {
        let w_lo = cfg.effective_w(w_nominal, hi);
        // Half the analytic bound at hi's bandwidth: below it nothing can succeed.
        qsl_bound(1.0 - f_star, cfg.n, w_lo)? / 2.0
    };
    let mut bracket = BracketState::new(lo_start, hi);
    let mut steps = 0;
    while !bracket.converged(cfg.rel_tol) && steps < cfg.max_bisections {
        let tau = bracket.mid;
        let out = run_candidate(sys, target, w_nominal, f_star, tau, cfg, seeds)?.unwrap_or(CandidateOutcome {
            success: false,
            best_phi: 0.0,
            iterations: 0,
            restarts_used: 0,
        });
        iterations += out.iterations;
        record(&mut audit, Phase::Bisect, tau, &out);
        bracket = bracket.update(out.success);
        steps += 1;
    }
    let tau_min = bracket.hi;
    Ok(SweepRecord {
        target_id: target.id.clone(),
        seed: target.seed,
        w: w_nominal,
        n: cfg.n,
        f_star,
        tau_min,
        w_eff_at_min: cfg.effective_w(w_nominal, tau_min),
        iterations,
        status: Status::Ok,
        lo_start,
        audit,
    })
}

/// Append-only record store keyed by cell; ordering is restored on drain.
#[derive(Default)]
pub struct ResultStore {
    records: Mutex<Vec<SweepRecord>>,
}

impl ResultStore {
    pub fn push(&self, r: SweepRecord) {
        self.records.lock().expect("store poisoned").push(r);
    }

    pub fn into_sorted(self) -> Vec<SweepRecord> {
        let mut v = self.records.into_inner().expect("store poisoned");
        v.sort_by(|a, b| {
            a.target_id
                .cmp(&b.target_id)
                .then(a.w.total_cmp(&b.w))
                .then(a.f_star.total_cmp(&b.f_star))
        });
        v
    }
}

/// Full factorial sweep. Cells `(target, W)` run concurrently; within a cell
/// the thresholds run from strictest to loosest so evidence carries over.
/// `on_record` sees each record as it completes.
pub fn sweep<F>(
    sys: &ControlSystem,
    targets: &[GateTarget],
    w_grid: &[f64],
    f_stars: &[f64],
    cfg: &QslConfig,
    seeds: &SeedTree,
    on_record: F,
) -> Vec<SweepRecord>
where
    F: Fn(&SweepRecord) + Sync,
{
    let mut thresholds = f_stars.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    let cells: Vec<(&GateTarget, f64)> = targets
        .iter()
        .flat_map(|t| w_grid.iter().map(move |w| (t, *w)))
        .collect();
    let store = ResultStore::default();
    cells.par_iter().for_each(|(target, w)| {
        let mut prior: Option<SweepRecord> = None;
        for &f in &thresholds {
            let rec = match min_time_bracket(sys, target, *w, f, cfg, seeds, prior.as_ref()) {
                Ok(r) => r,
                Err(e) => SweepRecord {
                    target_id: target.id.clone(),
                    seed: target.seed,
                    w: *w,
                    n: cfg.n,
                    f_star: f,
                    tau_min: f64::NAN,
                    w_eff_at_min: f64::NAN,
                    iterations: 0,
                    status: Status::Error(e.to_string()),
                    lo_start: f64::NAN,
                    audit: Vec::new(),
                },
            };
            on_record(&rec);
            if rec.status == Status::Ok {
                prior = Some(rec.clone());
            }
            store.push(rec);
        }
    });
    store.into_sorted()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub w: f64,
    pub mean_tau: f64,
    pub std_tau: f64,
    pub count: usize,
}

/// `τ(W) = a/W + b` fitted to per-W means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    /// Root-mean-square residual over the fitted means.
    pub residual: f64,
    pub points: Vec<FitPoint>,
}

/// Per-W mean and sample standard deviation of successful `τ_min` values.
pub fn per_w_stats(records: &[SweepRecord], f_star: f64) -> Vec<FitPoint> {
    let mut ws: Vec<f64> = records
        .iter()
        .filter(|r| r.f_star == f_star && r.status == Status::Ok)
        .map(|r| r.w)
        .collect();
    ws.sort_by(f64::total_cmp);
    ws.dedup();
    ws.into_iter()
        .map(|w| {
            let taus: Vec<f64> = records
                .iter()
                .filter(|r| r.f_star == f_star && r.w == w && r.status == Status::Ok)
                .map(|r| r.tau_min)
                .collect();
            let n = taus.len() as f64;
            let mean = taus.iter().sum::<f64>() / n;
            let var = if taus.len() > 1 {
                taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            FitPoint {
                w,
                mean_tau: mean,
                std_tau: var.sqrt(),
                count: taus.len(),
            }
        })
        .collect()
}

/// Unweighted least squares of `mean_tau` against `(1/W, 1)`.
pub fn fit_points(points: Vec<FitPoint>) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(GrafsError::DegenerateFit(format!(
            "need at least 3 distinct W values, got {}",
            points.len()
        )));
    }
    let x = DMatrix::from_fn(points.len(), 2, |i, j| if j == 0 { 1.0 / points[i].w } else { 1.0 });
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.mean_tau));
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(GrafsError::DegenerateFit("non-finite inputs".into()));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax {
        return Err(GrafsError::DegenerateFit("design matrix is rank deficient".into()));
    }
    let coef = svd
        .solve(&y, 0.0)
        .map_err(|e| GrafsError::DegenerateFit(e.to_string()))?;
    let resid = &y - &x * &coef;
    let residual = (resid.norm_squared() / points.len() as f64).sqrt();
    Ok(FitResult {
        a: coef[0],
        b: coef[1],
        residual,
        points,
    })
}

pub fn fit_inverse_bandwidth(records: &[SweepRecord], f_star: f64) -> Result<FitResult> {
    fit_points(per_w_stats(records, f_star))
}
