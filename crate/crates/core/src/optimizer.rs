//! Box-constrained ascent on basis coefficients.
//!
//! The default direction is a limited-memory BFGS step restricted to the free
//! variables (coordinates pinned at the box with the gradient pushing outward
//! are frozen), followed by projection onto `|α| ≤ α_max` and a backtracking
//! line search with a sufficient-increase test on `Φ`.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GrafsError, Result};
use crate::gradient::{evaluate_coefficients, FidelityGradient};
use crate::operator::Operator;
use crate::propagation::{ControlSystem, PulseGrid};
use crate::slepian::SlepianBasis;

/// `K x M` coefficients with an optional symmetric box bound (`0` = none).
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrix {
    values: DMatrix<f64>,
    bound: f64,
}

impl CoefficientMatrix {
    pub fn new(values: DMatrix<f64>, bound: f64) -> Result<Self> {
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(invalid("coeff_bound", format!("must be finite and >= 0, got {bound}")));
        }
        if bound > 0.0 {
            if let Some(v) = values.iter().find(|v| v.abs() > bound) {
                return Err(invalid("a0", format!("coefficient {v} violates bound {bound}")));
            }
        }
        Ok(CoefficientMatrix { values, bound })
    }

    pub fn zeros(k: usize, m: usize, bound: f64) -> Result<Self> {
        CoefficientMatrix::new(DMatrix::zeros(k, m), bound)
    }

    /// Uniform entries in `[-spread, spread]` (clipped to the bound).
    pub fn random<R: Rng + ?Sized>(k: usize, m: usize, bound: f64, spread: f64, rng: &mut R) -> Result<Self> {
        let cap = if bound > 0.0 { spread.min(bound) } else { spread };
        let values = DMatrix::from_fn(k, m, |_, _| rng.random_range(-cap..=cap));
        CoefficientMatrix::new(values, bound)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn is_bounded(&self) -> bool {
        self.bound > 0.0
    }

    fn flat(&self) -> Vec<f64> {
        flatten(&self.values)
    }
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let (k, c) = m.shape();
    let mut out = Vec::with_capacity(k * c);
    for r in 0..k {
        for j in 0..c {
            out.push(m[(r, j)]);
        }
    }
    out
}

fn unflatten(x: &[f64], k: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, m, |r, j| x[r * m + j])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionRule {
    /// Limited-memory quasi-Newton on the free variables.
    Lbfgs,
    /// Plain projected gradient ascent.
    SteepestAscent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Threshold on the ∞-norm of the projected gradient.
    pub grad_tol: f64,
    /// Stop as soon as `Φ` reaches this value.
    pub fid_target: f64,
    /// Box bound `α_max` (0 = unbounded); inclusive.
    pub coeff_bound: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_increase: f64,
    pub max_backtracks: usize,
    pub memory: usize,
    pub direction: DirectionRule,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 200,
            grad_tol: 1e-9,
            fid_target: 1.0,
            coeff_bound: 5.0,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_increase: 1e-4,
            max_backtracks: 40,
            memory: 72,
            direction: DirectionRule::Lbfgs,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol", format!("must be positive, got {}", self.grad_tol)));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid("shrink", format!("must lie in (0, 1), got {}", self.shrink)));
        }
        if !(self.initial_step > 0.0) {
            return Err(invalid("initial_step", format!("must be positive, got {}", self.initial_step)));
        }
        if !(self.sufficient_increase > 0.0 && self.sufficient_increase < 1.0) {
            return Err(invalid(
                "sufficient_increase",
                format!("must lie in (0, 1), got {}", self.sufficient_increase),
            ));
        }
        if !(self.coeff_bound >= 0.0 && self.coeff_bound.is_finite()) {
            return Err(invalid("coeff_bound", format!("must be finite and >= 0, got {}", self.coeff_bound)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    FidelityTarget,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub phi: f64,
    pub abs_trace: f64,
    pub phase: f64,
    pub grad_norm: f64,
    /// Step length that produced this iterate (0 for the starting point).
    pub step: f64,
    pub coeffs: Option<DMatrix<f64>>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
}

/// Snapshots are kept every iteration while `K·M` is at most this many entries.
pub const SNAPSHOT_FULL_LIMIT: usize = 10_000;

impl OptimizationTrace {
    fn keep_snapshot(iter: usize, entries: usize) -> bool {
        entries <= SNAPSHOT_FULL_LIMIT || iter % 10 == 0
    }

    pub fn phis(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.phi).collect()
    }
}

#[derive(Clone, Debug)]
pub struct AscentResult {
    pub coeffs: CoefficientMatrix,
    pub phi: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub trace: OptimizationTrace,
}

struct Objective<'a> {
    sys: &'a ControlSystem,
    basis: &'a SlepianBasis,
    u_targ: &'a Operator,
    grid: PulseGrid,
    k: usize,
    m: usize,
    evaluations: usize,
}

impl Objective<'_> {
    fn eval(&mut self, x: &[f64], iteration: usize) -> Result<(FidelityGradient, Vec<f64>)> {
        self.evaluations += 1;
        let coeffs = unflatten(x, self.k, self.m);
        let fg = evaluate_coefficients(self.sys, self.basis, &coeffs, self.u_targ, self.grid).map_err(|e| {
            GrafsError::Numerical {
                iteration,
                reason: e.to_string(),
                iterate: x.to_vec(),
            }
        })?;
        let g = flatten(fg.grafs.as_ref().expect("contracted"));
        if !fg.phi.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(GrafsError::Numerical {
                iteration,
                reason: "non-finite fidelity or gradient".into(),
                iterate: x.to_vec(),
            });
        }
        Ok((fg, g))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn project(x: &mut [f64], bound: f64) {
    if bound > 0.0 {
        x.iter_mut().for_each(|v| *v = v.clamp(-bound, bound));
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bound: f64) -> f64 {
    let mut p: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
    project(&mut p, bound);
    p.iter().zip(x).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Compact limited-memory representation `B = θI − W M Wᵀ` of the Hessian
/// of `1 − Φ`, with `W = [Y θS]`.
struct Memory {
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    capacity: usize,
    theta: f64,
    middle: Option<DMatrix<f64>>,
}

impl Memory {
    fn new(capacity: usize) -> Self {
        Memory {
            s: VecDeque::new(),
            y: VecDeque::new(),
            capacity,
            theta: 1.0,
            middle: None,
        }
    }

    fn len(&self) -> usize {
        self.s.len()
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.theta = 1.0;
        self.middle = None;
    }

    /// Stores `(s, y)` for the minimization problem when the curvature is positive.
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if !(sy > f64::EPSILON * yy) {
            return;
        }
        if self.s.len() == self.capacity {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        self.theta = yy / sy;
        self.rebuild();
    }

    fn rebuild(&mut self) {
        let m = self.len();
        let mut inv = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            inv[(i, i)] = -dot(&self.s[i], &self.y[i]);
            for j in 0..m {
                if i > j {
                    let l = dot(&self.s[i], &self.y[j]);
                    inv[(m + i, j)] = l;
                    inv[(j, m + i)] = l;
                }
                inv[(m + i, m + j)] = self.theta * dot(&self.s[i], &self.s[j]);
            }
        }
        self.middle = inv.try_inverse();
        if self.middle.is_none() {
            self.clear();
        }
    }

    /// Row `i` of `W`.
    fn w_row(&self, i: usize) -> DVector<f64> {
        let m = self.len();
        DVector::from_fn(2 * m, |r, _| if r < m { self.y[r][i] } else { self.theta * self.s[r - m][i] })
    }

    /// `Wᵀ v` restricted to the index set `idx` (all indices when `None`).
    fn wt(&self, v: &[f64], idx: Option<&[usize]>) -> DVector<f64> {
        let m = self.len();
        let sum = |a: &[f64]| -> f64 {
            match idx {
                Some(ix) => ix.iter().map(|&i| a[i] * v[i]).sum(),
                None => dot(a, v),
            }
        };
        DVector::from_fn(2 * m, |r, _| if r < m { sum(&self.y[r]) } else { self.theta * sum(&self.s[r - m]) })
    }

    fn m_times(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.middle {
            Some(mm) if self.len() > 0 => mm * v,
            _ => DVector::zeros(v.len()),
        }
    }
}

/// Bound-aware quasi-Newton target point: generalized Cauchy point along the
/// projected steepest-descent path, then minimization of the model over the
/// variables left free there, truncated to stay inside the box.
fn bounded_quasi_newton_point(x: &[f64], grad: &[f64], bound: f64, mem: &Memory) -> Vec<f64> {
    let n = x.len();
    let (lo, hi) = if bound > 0.0 {
        (-bound, bound)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    let theta = mem.theta;
    let mut breaks = vec![f64::INFINITY; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        if grad[i] < 0.0 {
            breaks[i] = (x[i] - hi) / grad[i];
        } else if grad[i] > 0.0 {
            breaks[i] = (x[i] - lo) / grad[i];
        }
        if breaks[i] > 0.0 {
            d[i] = -grad[i];
        } else {
            breaks[i] = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| breaks[i] > 0.0 && breaks[i].is_finite()).collect();
    order.sort_by(|&a, &b| breaks[a].total_cmp(&breaks[b]).then(a.cmp(&b)));

    let mut xc = x.to_vec();
    let mut p = mem.wt(&d, None);
    let mut c = DVector::zeros(p.len());
    let mut f1 = -dot(&d, &d);
    let mut f2 = -theta * f1 - p.dot(&mem.m_times(&p));
    let f2_floor = f64::EPSILON * f2.abs().max(1.0);
    f2 = f2.max(f2_floor);
    let mut dt_min = -f1 / f2;
    let mut t_old = 0.0;
    let mut fixed = vec![false; n];
    let mut cursor = 0;
    while cursor < order.len() {
        let b = order[cursor];
        let dt = breaks[b] - t_old;
        if dt_min < dt {
            break;
        }
        xc[b] = if d[b] > 0.0 { hi } else { lo };
        fixed[b] = true;
        let zb = xc[b] - x[b];
        c += &p * dt;
        let gb = grad[b];
        let wb = mem.w_row(b);
        let mwb = mem.m_times(&wb);
        f1 += dt * f2 + gb * gb + theta * gb * zb - gb * mwb.dot(&c);
        f2 += -theta * gb * gb - 2.0 * gb * mwb.dot(&p) - gb * gb * wb.dot(&mwb);
        f2 = f2.max(f2_floor);
        p += &wb * gb;
        d[b] = 0.0;
        dt_min = -f1 / f2;
        t_old = breaks[b];
        cursor += 1;
    }
    // Variables sitting on the box from the start are fixed as well.
    for i in 0..n {
        if breaks[i] == 0.0 {
            fixed[i] = true;
        }
    }
    let dt_min = dt_min.max(0.0);
    let t_c = t_old + dt_min;
    for i in 0..n {
        if !fixed[i] {
            xc[i] = x[i] + t_c * d[i];
        }
    }
    c += &p * dt_min;

    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    if free.is_empty() {
        return xc;
    }
    // Reduced gradient of the model at the Cauchy point.
    let wmc = {
        let mc = mem.m_times(&c);
        (0..n)
            .map(|i| if mem.len() > 0 { mem.w_row(i).dot(&mc) } else { 0.0 })
            .collect::<Vec<f64>>()
    };
    let rc: Vec<f64> = (0..n).map(|i| grad[i] + theta * (xc[i] - x[i]) - wmc[i]).collect();
    let mut du = vec![0.0; n];
    if mem.len() == 0 {
        for &i in &free {
            du[i] = -rc[i] / theta;
        }
    } else {
        let m2 = 2 * mem.len();
        let v = mem.m_times(&mem.wt(&rc, Some(&free)));
        let mut wzw = DMatrix::zeros(m2, m2);
        for &i in &free {
            let w = mem.w_row(i);
            wzw += &w * w.transpose();
        }
        let nmat = DMatrix::identity(m2, m2) - mem.middle.as_ref().expect("memory") * wzw / theta;
        let v = nmat.lu().solve(&v).unwrap_or_else(|| DVector::zeros(m2));
        for &i in &free {
            du[i] = -rc[i] / theta - mem.w_row(i).dot(&v) / (theta * theta);
        }
    }
    let mut alpha = 1.0_f64;
    for &i in &free {
        if du[i] > 0.0 {
            alpha = alpha.min((hi - xc[i]) / du[i]);
        } else if du[i] < 0.0 {
            alpha = alpha.min((lo - xc[i]) / du[i]);
        }
    }
    let alpha = alpha.max(0.0);
    for &i in &free {
        xc[i] += alpha * du[i];
    }
    project(&mut xc, bound);
    xc
}

/// Maximizes `Φ` over the coefficients of `basis`, starting from `a0`.
pub fn ascend(
    sys: &ControlSystem,
    basis: &SlepianBasis,
    u_targ: &Operator,
    grid: PulseGrid,
    cfg: &OptimizerConfig,
    a0: &CoefficientMatrix,
) -> Result<AscentResult> {
    cfg.validate()?;
    let k = basis.n_sequences();
    let m = sys.n_controls();
    if a0.values().shape() != (k, m) {
        return Err(GrafsError::Dimension(format!(
            "initial coefficients are {:?} but basis/system need ({k}, {m})",
            a0.values().shape()
        )));
    }
    let bound = cfg.coeff_bound;
    if bound > 0.0 && a0.values().iter().any(|v| v.abs() > bound) {
        return Err(invalid("a0", format!("initial coefficients exceed the bound {bound}")));
    }
    let started = Instant::now();
    let mut obj = Objective {
        sys,
        basis,
        u_targ,
        grid,
        k,
        m,
        evaluations: 0,
    };
    let mut x = a0.flat();
    let (mut fg, mut g) = obj.eval(&x, 0)?;
    let mut memory = Memory::new(cfg.memory.max(1));
    let mut trace = OptimizationTrace::default();
    let mut last_step = cfg.initial_step;
    let mut step_taken = 0.0;
    let mut iter = 0;

    let termination = loop {
        let grad_norm = projected_gradient_norm(&x, &g, bound);
        trace.records.push(TraceRecord {
            iter,
            phi: fg.phi,
            abs_trace: fg.trace.norm(),
            phase: fg.phase,
            grad_norm,
            step: step_taken,
            coeffs: OptimizationTrace::keep_snapshot(iter, k * m).then(|| unflatten(&x, k, m)),
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if fg.phi >= cfg.fid_target {
            break Termination::FidelityTarget;
        }
        if grad_norm < cfg.grad_tol {
            break Termination::GradientTolerance;
        }
        if iter >= cfg.max_iters {
            break Termination::MaxIterations;
        }

        // Projected-gradient direction with unit ∞-norm.
        let steepest = || {
            let mut t: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
            project(&mut t, bound);
            let d: Vec<f64> = t.iter().zip(&x).map(|(a, b)| a - b).collect();
            let n = inf_norm(&d);
            d.into_iter().map(|v| v / n).collect::<Vec<f64>>()
        };
        let mut attempts: Vec<(Vec<f64>, f64)> = Vec::new();
        match cfg.direction {
            DirectionRule::Lbfgs => {
                let grad_min: Vec<f64> = g.iter().map(|v| -v).collect();
                let target = bounded_quasi_newton_point(&x, &grad_min, bound, &memory);
                let d: Vec<f64> = target.iter().zip(&x).map(|(a, b)| a - b).collect();
                if dot(&d, &g) > 0.0 && d.iter().all(|v| v.is_finite()) {
                    let eps0 = if memory.len() == 0 {
                        cfg.initial_step / dot(&d, &d).sqrt()
                    } else {
                        cfg.initial_step
                    };
                    attempts.push((d, eps0));
                }
                attempts.push((steepest(), cfg.initial_step));
            }
            DirectionRule::SteepestAscent => {
                attempts.push((steepest(), (2.0 * last_step).min(cfg.initial_step * 1e3)));
            }
        }

        let mut accepted = None;
        'directions: for (attempt_idx, (d, eps0)) in attempts.iter().enumerate() {
            let mut eps = *eps0;
            for _ in 0..cfg.max_backtracks {
                let mut trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + eps * di).collect();
                project(&mut trial, bound);
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let predicted = dot(&g, &moved);
                if predicted <= 0.0 || inf_norm(&moved) == 0.0 {
                    break;
                }
                let (fg_t, g_t) = obj.eval(&trial, iter + 1)?;
                if fg_t.phi >= fg.phi + cfg.sufficient_increase * predicted {
                    accepted = Some((trial, fg_t, g_t, eps));
                    break 'directions;
                }
                eps *= cfg.shrink;
            }
            if attempt_idx == 0 && attempts.len() > 1 {
                memory.clear();
            }
        }

        let Some((x_new, fg_new, g_new, eps)) = accepted else {
            break Termination::LineSearchFailure;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        x = x_new;
        fg = fg_new;
        g = g_new;
        last_step = eps;
        step_taken = eps;
        iter += 1;
    };

    let grad_norm = trace.records.last().map(|r| r.grad_norm).unwrap_or(f64::NAN);
    Ok(AscentResult {
        coeffs: CoefficientMatrix {
            values: unflatten(&x, k, m),
            bound,
        },
        phi: fg.phi,
        grad_norm,
        iterations: iter,
        evaluations: obj.evaluations,
        termination,
        trace,
    })
}
