//! Control systems and piecewise-constant propagation on SU(d).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GrafsError, Result};
use crate::operator::{step_propagator, Operator, StepPropagator};

/// Drift plus `M` control Hamiltonians: `H(t) = H_d + Σ_j Ω_j(t) H_j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlSystem {
    drift: Operator,
    controls: Vec<Operator>,
}

impl ControlSystem {
    pub fn new(drift: Operator, controls: Vec<Operator>) -> Result<Self> {
        if controls.is_empty() {
            return Err(invalid("controls", "a control system needs at least one control"));
        }
        let d = drift.dim();
        drift.ensure_hermitian()?;
        for (j, h) in controls.iter().enumerate() {
            if h.dim() != d {
                return Err(GrafsError::Dimension(format!(
                    "control {j} has dim {} but drift has dim {d}",
                    h.dim()
                )));
            }
            h.ensure_hermitian()?;
        }
        Ok(ControlSystem { drift, controls })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn drift(&self) -> &Operator {
        &self.drift
    }

    pub fn controls(&self) -> &[Operator] {
        &self.controls
    }

    /// `H_d + Σ_j amplitudes[j] H_j`.
    pub fn hamiltonian(&self, amplitudes: &[f64]) -> Operator {
        debug_assert_eq!(amplitudes.len(), self.controls.len());
        let mut h = self.drift.matrix().clone();
        for (a, hj) in amplitudes.iter().zip(&self.controls) {
            if *a != 0.0 {
                h += hj.matrix() * num_complex::Complex64::new(*a, 0.0);
            }
        }
        Operator::from_matrix(h).expect("square")
    }
}

/// `N` equal steps of length `dt`; the total duration is always `N * dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseGrid {
    n_steps: usize,
    dt: f64,
}

impl PulseGrid {
    pub fn new(n_steps: usize, dt: f64) -> Result<Self> {
        if n_steps < 2 {
            return Err(invalid("n_steps", format!("need at least 2 steps, got {n_steps}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("step must be positive and finite, got {dt}")));
        }
        Ok(PulseGrid { n_steps, dt })
    }

    pub fn from_duration(n_steps: usize, tau: f64) -> Result<Self> {
        PulseGrid::new(n_steps, tau / n_steps as f64)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tau(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// End time `ℓ·dt` of step `ℓ` (1-based).
    pub fn step_time(&self, ell: usize) -> f64 {
        ell as f64 * self.dt
    }
}

/// Piecewise-constant control amplitudes; row `ℓ` holds `Ω_j` on step `ℓ+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPulse {
    values: DMatrix<f64>,
    grid: PulseGrid,
}

impl ControlPulse {
    pub fn new(values: DMatrix<f64>, grid: PulseGrid) -> Result<Self> {
        if values.nrows() != grid.n_steps() {
            return Err(GrafsError::Dimension(format!(
                "pulse has {} rows but grid has {} steps",
                values.nrows(),
                grid.n_steps()
            )));
        }
        if values.ncols() == 0 {
            return Err(GrafsError::Dimension("pulse has no control columns".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(GrafsError::NonFinite(format!("pulse entry {bad}")));
        }
        Ok(ControlPulse { values, grid })
    }

    pub fn constant(grid: PulseGrid, amplitudes: &[f64]) -> Result<Self> {
        let values = DMatrix::from_fn(grid.n_steps(), amplitudes.len(), |_, j| amplitudes[j]);
        ControlPulse::new(values, grid)
    }

    pub fn zeros(grid: PulseGrid, n_controls: usize) -> Result<Self> {
        ControlPulse::new(DMatrix::zeros(grid.n_steps(), n_controls), grid)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn grid(&self) -> PulseGrid {
        self.grid
    }

    pub fn n_controls(&self) -> usize {
        self.values.ncols()
    }

    pub fn amplitudes_at(&self, step: usize) -> Vec<f64> {
        self.values.row(step).iter().copied().collect()
    }

    /// The sub-pulse covering steps `range` (0-based, half open).
    pub fn slice(&self, start: usize, end: usize) -> Result<ControlPulse> {
        let rows = self.values.rows(start, end - start).into_owned();
        ControlPulse::new(rows, PulseGrid::new(end - start, self.grid.dt())?)
    }
}

/// Per-step propagators plus forward and backward partial products.
///
/// `forward[i] = U_i ... U_1` (with `forward[0] = 1`) and
/// `backward[i] = U_N ... U_{i+1}` (with `backward[N] = 1`).
#[derive(Clone, Debug)]
pub struct PropagatorCache {
    pub steps: Vec<StepPropagator>,
    pub forward: Vec<Operator>,
    pub backward: Vec<Operator>,
}

impl PropagatorCache {
    pub fn total(&self) -> &Operator {
        self.forward.last().expect("forward products are never empty")
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn dt(&self) -> f64 {
        self.steps[0].dt
    }
}

fn check_pulse(sys: &ControlSystem, pulse: &ControlPulse) -> Result<()> {
    if pulse.n_controls() != sys.n_controls() {
        return Err(GrafsError::Dimension(format!(
            "pulse has {} controls but system has {}",
            pulse.n_controls(),
            sys.n_controls()
        )));
    }
    Ok(())
}

/// Exponentiates every step and builds the cumulative products.
pub fn propagate(sys: &ControlSystem, pulse: &ControlPulse) -> Result<PropagatorCache> {
    check_pulse(sys, pulse)?;
    let dt = pulse.grid().dt();
    let n = pulse.grid().n_steps();
    let steps = (0..n)
        .into_par_iter()
        .map(|s| step_propagator(&sys.hamiltonian(&pulse.amplitudes_at(s)), dt))
        .collect::<Result<Vec<_>>>()?;

    let d = sys.dim();
    let mut forward = Vec::with_capacity(n + 1);
    forward.push(Operator::identity(d));
    for step in &steps {
        let next = &step.unitary * forward.last().unwrap();
        forward.push(next);
    }
    let mut backward = vec![Operator::identity(d); n + 1];
    for s in (0..n).rev() {
        backward[s] = &backward[s + 1] * &steps[s].unitary;
    }
    Ok(PropagatorCache {
        steps,
        forward,
        backward,
    })
}

/// `U(t_N) ... U(t_1)`, latest step leftmost.
pub fn total_propagator(sys: &ControlSystem, pulse: &ControlPulse) -> Result<Operator> {
    Ok(propagate(sys, pulse)?.total().clone())
}
