//! Exact gradients of the phase-invariant fidelity.
//!
//! Per-step derivatives use the eigensystem of each step Hamiltonian, so they
//! are exact for the piecewise-constant propagator (no first-order `‖H‖Δt`
//! truncation). Coefficient gradients are the time contraction of the
//! per-step gradients with the basis matrix.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{GrafsError, Result};
use crate::operator::{trace_fidelity, HermitianEigen, Operator};
use crate::propagation::{propagate, ControlPulse, ControlSystem, PropagatorCache, PulseGrid};
use crate::slepian::SlepianBasis;

/// Relative eigenvalue gap below which a pair is treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// `(e^{-i dt a} - e^{-i dt b}) / (a - b)`, with its limit `-i dt e^{-i dt a}` at `a = b`.
///
/// Evaluated as `-i dt e^{-i dt (a+b)/2} sinc(dt (a-b)/2)`, which has no
/// cancellation for close eigenvalues.
pub fn divided_difference(a: f64, b: f64, dt: f64) -> C64 {
    let minus_i_dt = C64::new(0.0, -dt);
    if (a - b).abs() < DEGENERACY_TOL * a.abs().max(1.0) {
        return minus_i_dt * C64::from_polar(1.0, -dt * a);
    }
    let theta = 0.5 * dt * (a - b);
    let sinc = if theta.abs() < 1e-4 {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    };
    minus_i_dt * C64::from_polar(sinc, -dt * 0.5 * (a + b))
}

/// Kernel `G[ν, μ]` of the exact exponential derivative for one eigensystem.
fn derivative_kernel(eigen: &HermitianEigen, dt: f64) -> DMatrix<C64> {
    let d = eigen.dim();
    DMatrix::from_fn(d, d, |nu, mu| divided_difference(eigen.values[nu], eigen.values[mu], dt))
}

/// `d/ds exp(-i dt (A + s B))` at the point whose eigensystem is `eigen`.
///
/// Eigenbasis elements are `⟨ν|B|μ⟩ (e^{-i dt λ_ν} - e^{-i dt λ_μ}) / (λ_ν - λ_μ)`
/// off the diagonal and `-i dt ⟨ν|B|ν⟩ e^{-i dt λ_ν}` on it.
pub fn exp_derivative(eigen: &HermitianEigen, b: &Operator, dt: f64) -> Operator {
    let kernel = derivative_kernel(eigen, dt);
    let bt = eigen.to_eigenbasis(b);
    eigen.from_eigenbasis(&bt.component_mul(&kernel))
}

/// Propagator-valued gradients, laid out as `[index][control]` with the
/// leading index running over time steps (or basis orders).
#[derive(Clone, Debug)]
pub struct PropagatorGradient {
    pub n_controls: usize,
    /// `grape[ℓ * M + j] = ∂U_τ/∂Ω_j(t_ℓ)`.
    pub grape: Vec<Operator>,
    /// `grafs[k * M + j] = ∂U_τ/∂α_kj`, once contracted.
    pub grafs: Option<Vec<Operator>>,
}

impl PropagatorGradient {
    pub fn grape_at(&self, step: usize, control: usize) -> &Operator {
        &self.grape[step * self.n_controls + control]
    }

    pub fn grafs_at(&self, order: usize, control: usize) -> Option<&Operator> {
        self.grafs.as_ref().map(|g| &g[order * self.n_controls + control])
    }

    pub fn n_steps(&self) -> usize {
        self.grape.len() / self.n_controls
    }
}

/// Gradient of `Φ = |F|/d` together with the evaluation point's `F`.
#[derive(Clone, Debug)]
pub struct FidelityGradient {
    pub phi: f64,
    pub trace: C64,
    /// `arg(F)`; zero where `F = 0`.
    pub phase: f64,
    /// `N x M`, entry `(ℓ, j) = ∂Φ/∂Ω_j(t_ℓ)`.
    pub grape: DMatrix<f64>,
    /// `K x M`, entry `(k, j) = ∂Φ/∂α_kj`, once contracted.
    pub grafs: Option<DMatrix<f64>>,
}

fn phase_of(f: C64) -> f64 {
    if f.norm() == 0.0 {
        0.0
    } else {
        f.arg()
    }
}

fn check_target(sys: &ControlSystem, u_targ: &Operator) -> Result<()> {
    if u_targ.dim() != sys.dim() {
        return Err(GrafsError::Dimension(format!(
            "target has dim {} but system has dim {}",
            u_targ.dim(),
            sys.dim()
        )));
    }
    Ok(())
}

/// `(1/d) Re[e^{-i arg F} tr(U_targ^† dU)]`.
pub fn chain_rule(u_targ_adj: &Operator, d_u: &Operator, phase: f64) -> f64 {
    let t = u_targ_adj.trace_product(d_u);
    (C64::from_polar(1.0, -phase) * t).re / u_targ_adj.dim() as f64
}

/// Scalar GRAPE gradient from an existing propagator cache.
///
/// Uses `tr(U_targ^† U_{N:ℓ+1} dU_ℓ U_{ℓ-1:1}) = tr(X_ℓ dU_ℓ)` with
/// `X_ℓ = U_{ℓ-1:1} U_targ^† U_{N:ℓ+1}`, evaluated in the step eigenbasis.
pub fn fidelity_gradient_from_cache(
    sys: &ControlSystem,
    cache: &PropagatorCache,
    u_targ: &Operator,
) -> Result<FidelityGradient> {
    check_target(sys, u_targ)?;
    let d = sys.dim() as f64;
    let m = sys.n_controls();
    let n = cache.n_steps();
    let dt = cache.dt();
    let f = trace_fidelity(u_targ, cache.total())?;
    let phase = phase_of(f);
    let rot = C64::from_polar(1.0, -phase);
    let targ_adj = u_targ.adjoint();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let eigen = &cache.steps[s].eigen;
            let x = &cache.forward[s] * &(&targ_adj * &cache.backward[s + 1]);
            let y = eigen.to_eigenbasis(&x);
            let kernel = derivative_kernel(eigen, dt);
            sys.controls()
                .iter()
                .map(|hj| {
                    let hjt = eigen.to_eigenbasis(hj);
                    let dim = hjt.nrows();
                    let mut acc = C64::new(0.0, 0.0);
                    for nu in 0..dim {
                        for mu in 0..dim {
                            acc += y[(mu, nu)] * hjt[(nu, mu)] * kernel[(nu, mu)];
                        }
                    }
                    (rot * acc).re / d
                })
                .collect()
        })
        .collect();
    let grape = DMatrix::from_fn(n, m, |s, j| rows[s][j]);
    if grape.iter().any(|v| !v.is_finite()) {
        return Err(GrafsError::NonFinite("GRAPE gradient".into()));
    }
    Ok(FidelityGradient {
        phi: f.norm() / d,
        trace: f,
        phase,
        grape,
        grafs: None,
    })
}

/// Scalar GRAPE gradient `∂Φ/∂Ω_j(t_ℓ)`.
pub fn fidelity_gradient(sys: &ControlSystem, pulse: &ControlPulse, u_targ: &Operator) -> Result<FidelityGradient> {
    let cache = propagate(sys, pulse)?;
    fidelity_gradient_from_cache(sys, &cache, u_targ)
}

/// Full GRAPE gradient: every `∂U_τ/∂Ω_j(t_ℓ)` plus the scalar chain rule.
pub fn grape_gradient(
    sys: &ControlSystem,
    pulse: &ControlPulse,
    u_targ: &Operator,
) -> Result<(FidelityGradient, PropagatorGradient)> {
    check_target(sys, u_targ)?;
    let cache = propagate(sys, pulse)?;
    let m = sys.n_controls();
    let n = cache.n_steps();
    let dt = cache.dt();
    let f = trace_fidelity(u_targ, cache.total())?;
    let phase = phase_of(f);
    let targ_adj = u_targ.adjoint();

    let per_step: Vec<Vec<Operator>> = (0..n)
        .into_par_iter()
        .map(|s| {
            sys.controls()
                .iter()
                .map(|hj| {
                    let du = exp_derivative(&cache.steps[s].eigen, hj, dt);
                    &(&cache.backward[s + 1] * &du) * &cache.forward[s]
                })
                .collect()
        })
        .collect();
    let grape_ops: Vec<Operator> = per_step.into_iter().flatten().collect();
    let grape = DMatrix::from_fn(n, m, |s, j| chain_rule(&targ_adj, &grape_ops[s * m + j], phase));
    Ok((
        FidelityGradient {
            phi: f.norm() / sys.dim() as f64,
            trace: f,
            phase,
            grape,
            grafs: None,
        },
        PropagatorGradient {
            n_controls: m,
            grape: grape_ops,
            grafs: None,
        },
    ))
}

fn check_basis_rows(basis: &SlepianBasis, n_steps: usize) -> Result<()> {
    if basis.n() != n_steps {
        return Err(GrafsError::Dimension(format!(
            "basis has length {} but gradient has {} steps",
            basis.n(),
            n_steps
        )));
    }
    Ok(())
}

/// `∇_𝒜 Φ = 𝒱ᵀ ∇_Ω Φ`, summed over steps in increasing order.
pub fn grafs_gradient(grape: &DMatrix<f64>, basis: &SlepianBasis) -> Result<DMatrix<f64>> {
    check_basis_rows(basis, grape.nrows())?;
    let v = basis.matrix();
    let (n, k, m) = (grape.nrows(), basis.n_sequences(), grape.ncols());
    let mut out = DMatrix::zeros(k, m);
    for kk in 0..k {
        for j in 0..m {
            let mut acc = 0.0;
            for l in 0..n {
                acc += v[(l, kk)] * grape[(l, j)];
            }
            out[(kk, j)] = acc;
        }
    }
    Ok(out)
}

/// Time-index contraction of the propagator-valued GRAPE gradient.
pub fn grafs_propagator_gradient(pg: &PropagatorGradient, basis: &SlepianBasis) -> Result<Vec<Operator>> {
    let n = pg.n_steps();
    check_basis_rows(basis, n)?;
    let m = pg.n_controls;
    let v = basis.matrix();
    let d = pg.grape[0].dim();
    let mut out = Vec::with_capacity(basis.n_sequences() * m);
    for kk in 0..basis.n_sequences() {
        for j in 0..m {
            let mut acc = DMatrix::<C64>::zeros(d, d);
            for l in 0..n {
                let w = v[(l, kk)];
                if w != 0.0 {
                    acc += pg.grape_at(l, j).matrix() * C64::new(w, 0.0);
                }
            }
            out.push(Operator::from_matrix(acc).expect("square"));
        }
    }
    Ok(out)
}

impl FidelityGradient {
    pub fn with_basis(mut self, basis: &SlepianBasis) -> Result<Self> {
        self.grafs = Some(grafs_gradient(&self.grape, basis)?);
        Ok(self)
    }
}

impl PropagatorGradient {
    pub fn with_basis(mut self, basis: &SlepianBasis) -> Result<Self> {
        self.grafs = Some(grafs_propagator_gradient(&self, basis)?);
        Ok(self)
    }
}

/// Pulse `Ω = 𝒱 𝒜` on a grid of the basis length.
pub fn pulse_from_coefficients(basis: &SlepianBasis, coeffs: &DMatrix<f64>, grid: PulseGrid) -> Result<ControlPulse> {
    if coeffs.nrows() != basis.n_sequences() {
        return Err(GrafsError::Dimension(format!(
            "coefficient matrix has {} rows but basis has {} sequences",
            coeffs.nrows(),
            basis.n_sequences()
        )));
    }
    if grid.n_steps() != basis.n() {
        return Err(GrafsError::Dimension(format!(
            "grid has {} steps but basis has length {}",
            grid.n_steps(),
            basis.n()
        )));
    }
    ControlPulse::new(basis.matrix() * coeffs, grid)
}

/// Direct product-rule evaluation of `∂U_τ/∂α_kj` and `∂Φ/∂α_kj`, with each
/// per-step derivative taken with generator `B = v_k(t_ℓ) H_j`.
///
/// `O(N K M)` exponential derivatives; intended as a cross-check of the
/// contraction route.
pub fn grafs_gradient_direct(
    sys: &ControlSystem,
    basis: &SlepianBasis,
    coeffs: &DMatrix<f64>,
    u_targ: &Operator,
    grid: PulseGrid,
) -> Result<(DMatrix<f64>, Vec<Operator>)> {
    check_target(sys, u_targ)?;
    let pulse = pulse_from_coefficients(basis, coeffs, grid)?;
    let cache = propagate(sys, &pulse)?;
    let f = trace_fidelity(u_targ, cache.total())?;
    let phase = phase_of(f);
    let targ_adj = u_targ.adjoint();
    let (n, k, m) = (basis.n(), basis.n_sequences(), sys.n_controls());
    let d = sys.dim();
    let v = basis.matrix();
    let mut ops = Vec::with_capacity(k * m);
    for kk in 0..k {
        for hj in sys.controls() {
            let mut acc = Operator::zeros(d);
            for l in 0..n {
                let b = hj.scale_real(v[(l, kk)]);
                let du = exp_derivative(&cache.steps[l].eigen, &b, grid.dt());
                let term = &(&cache.backward[l + 1] * &du) * &cache.forward[l];
                acc = &acc + &term;
            }
            ops.push(acc);
        }
    }
    let grad = DMatrix::from_fn(k, m, |kk, j| chain_rule(&targ_adj, &ops[kk * m + j], phase));
    Ok((grad, ops))
}

/// `Φ` and `∇_𝒜 Φ` for coefficients `𝒜`; the optimizer's objective.
pub fn evaluate_coefficients(
    sys: &ControlSystem,
    basis: &SlepianBasis,
    coeffs: &DMatrix<f64>,
    u_targ: &Operator,
    grid: PulseGrid,
) -> Result<FidelityGradient> {
    let pulse = pulse_from_coefficients(basis, coeffs, grid)?;
    fidelity_gradient(sys, &pulse, u_targ)?.with_basis(basis)
}

/// Phase-invariant fidelity only.
pub fn fidelity_of_coefficients(
    sys: &ControlSystem,
    basis: &SlepianBasis,
    coeffs: &DMatrix<f64>,
    u_targ: &Operator,
    grid: PulseGrid,
) -> Result<f64> {
    let pulse = pulse_from_coefficients(basis, coeffs, grid)?;
    let u = crate::propagation::total_propagator(sys, &pulse)?;
    crate::operator::phase_invariant_fidelity(u_targ, &u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{pauli, toffoli_system, two_qubit_system, Axis};
    use crate::operator::{phase_invariant_fidelity, step_propagator};
    use crate::propagation::total_propagator;
    use crate::rng::random_hermitian;
    use crate::slepian::generate_dpss;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_exp(a: &Operator, b: &Operator, dt: f64, h: f64) -> Operator {
        let plus = step_propagator(&(a + &b.scale_real(h)), dt).unwrap().unitary;
        let minus = step_propagator(&(a - &b.scale_real(h)), dt).unwrap().unitary;
        (&plus - &minus).scale_real(0.5 / h)
    }

    #[test]
    fn divided_difference_is_continuous_at_degeneracy() {
        let dt = 0.7;
        let limit = divided_difference(1.3, 1.3, dt);
        let near = divided_difference(1.3 + 1e-7, 1.3, dt);
        assert!((limit - near).norm() < 1e-7);
        let direct = (C64::from_polar(1.0, -dt * 2.0) - C64::from_polar(1.0, -dt * 0.5)) / 1.5;
        assert!((divided_difference(2.0, 0.5, dt) - direct).norm() < 1e-15);
    }

    #[test]
    fn zero_generator_derivative() {
        let eigen = HermitianEigen::new(&Operator::zeros(2)).unwrap();
        let d = exp_derivative(&eigen, &pauli(Axis::Z), 1.0);
        let expected = pauli(Axis::Z).scale(C64::new(0.0, -1.0));
        assert!(d.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn commuting_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_hermitian(3, &mut rng);
        let dt = 0.4;
        let eigen = HermitianEigen::new(&a).unwrap();
        let d = exp_derivative(&eigen, &a, dt);
        let expected = (&a * &eigen.exp_neg_i(dt)).scale(C64::new(0.0, -dt));
        assert!(d.max_abs_diff(&expected) < 1e-13);
    }

    #[test]
    fn random_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_hermitian(4, &mut rng);
        let b = random_hermitian(4, &mut rng);
        let dt = 0.3;
        let eigen = HermitianEigen::new(&a).unwrap();
        let d = exp_derivative(&eigen, &b, dt);
        let fd = fd_exp(&a, &b, dt, 1e-6);
        assert!(d.max_abs_diff(&fd) <= 1e-6 * d.max_abs());
    }

    #[test]
    fn degenerate_spectrum_derivative() {
        // A with a doubly degenerate eigenvalue.
        let a = Operator::from_real_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, -2.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random_hermitian(3, &mut rng);
        let eigen = HermitianEigen::new(&a).unwrap();
        let d = exp_derivative(&eigen, &b, 0.5);
        let fd = fd_exp(&a, &b, 0.5, 1e-6);
        assert!(d.max_abs_diff(&fd) < 1e-8);
    }

    fn phi_of(sys: &ControlSystem, pulse: &ControlPulse, targ: &Operator) -> f64 {
        phase_invariant_fidelity(targ, &total_propagator(sys, pulse).unwrap()).unwrap()
    }

    #[test]
    fn commuting_problem_gradient_is_uniform() {
        let sys = ControlSystem::new(Operator::zeros(2), vec![pauli(Axis::X)]).unwrap();
        let targ = step_propagator(&pauli(Axis::X), 0.9).unwrap().unitary;
        let pulse = ControlPulse::constant(PulseGrid::new(25, 0.04).unwrap(), &[0.3]).unwrap();
        let g = fidelity_gradient(&sys, &pulse, &targ).unwrap();
        let first = g.grape[(0, 0)];
        assert!(first.abs() > 1e-6);
        assert!(g.grape.iter().all(|v| (v - first).abs() < 1e-14));
    }

    #[test]
    fn toffoli_gradient_matches_finite_differences() {
        let sys = toffoli_system();
        let targ = crate::models::toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let grid = PulseGrid::new(60, 0.05).unwrap();
        let values = DMatrix::from_fn(60, 2, |_, _| rng.random_range(-1.0..1.0));
        let pulse = ControlPulse::new(values.clone(), grid).unwrap();
        let g = fidelity_gradient(&sys, &pulse, &targ).unwrap();
        let (g_full, _) = grape_gradient(&sys, &pulse, &targ).unwrap();
        for _ in 0..8 {
            let l = rng.random_range(0..60);
            let j = rng.random_range(0..2);
            let h = 1e-7;
            let mut vp = values.clone();
            vp[(l, j)] += h;
            let mut vm = values.clone();
            vm[(l, j)] -= h;
            let fd = (phi_of(&sys, &ControlPulse::new(vp, grid).unwrap(), &targ)
                - phi_of(&sys, &ControlPulse::new(vm, grid).unwrap(), &targ))
                / (2.0 * h);
            let a = g.grape[(l, j)];
            assert!((a - fd).abs() <= 1e-5 * a.abs().max(1e-3), "({l},{j}) {a} vs {fd}");
            assert!((g_full.grape[(l, j)] - a).abs() < 1e-13);
        }
    }

    #[test]
    fn contraction_with_identity_and_constant_column() {
        let sys = two_qubit_system();
        let targ = crate::models::cnot();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 30;
        let grid = PulseGrid::new(n, 0.05).unwrap();
        let pulse = ControlPulse::new(DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0)), grid).unwrap();
        let g = fidelity_gradient(&sys, &pulse, &targ).unwrap();

        let ident = SlepianBasis::full_band(n);
        assert_eq!(grafs_gradient(&g.grape, &ident).unwrap(), g.grape);

        let s = 1.0 / (n as f64).sqrt();
        let flat = SlepianBasis::from_orthonormal_columns(DMatrix::from_element(n, 1, s), 0.1).unwrap();
        let c = grafs_gradient(&g.grape, &flat).unwrap();
        for j in 0..4 {
            let sum: f64 = (0..n).map(|l| g.grape[(l, j)]).sum();
            assert!((c[(0, j)] - s * sum).abs() < 1e-14);
        }
        let short = SlepianBasis::full_band(n - 1);
        assert!(grafs_gradient(&g.grape, &short).is_err());
    }

    #[test]
    fn contraction_matches_direct_product_rule() {
        let sys = toffoli_system();
        let targ = crate::models::toffoli();
        let basis = generate_dpss(100, 0.1, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let coeffs = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-0.5..0.5));
        let grid = PulseGrid::new(100, 0.04).unwrap();
        let pulse = pulse_from_coefficients(&basis, &coeffs, grid).unwrap();
        let (fg, pg) = grape_gradient(&sys, &pulse, &targ).unwrap();
        let fg = fg.with_basis(&basis).unwrap();
        let pg = pg.with_basis(&basis).unwrap();
        let (direct, direct_ops) = grafs_gradient_direct(&sys, &basis, &coeffs, &targ, grid).unwrap();
        let contracted = fg.grafs.as_ref().unwrap();
        for kk in 0..20 {
            for j in 0..2 {
                assert!((contracted[(kk, j)] - direct[(kk, j)]).abs() < 1e-12);
                let a = pg.grafs_at(kk, j).unwrap();
                assert!(a.max_abs_diff(&direct_ops[kk * 2 + j]) < 1e-12);
            }
        }
        let fast = evaluate_coefficients(&sys, &basis, &coeffs, &targ, grid).unwrap();
        let fast = fast.grafs.unwrap();
        assert!((fast - contracted).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn per_step_coefficient_derivative_factorizes() {
        // ∂U(t_ℓ)/∂α_kj = v_k(t_ℓ) ∂U(t_ℓ)/∂Ω_j(t_ℓ)
        let sys = toffoli_system();
        let basis = generate_dpss(40, 0.1, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let coeffs = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
        let grid = PulseGrid::new(40, 0.05).unwrap();
        let pulse = pulse_from_coefficients(&basis, &coeffs, grid).unwrap();
        let cache = propagate(&sys, &pulse).unwrap();
        for l in 0..40 {
            let eigen = &cache.steps[l].eigen;
            for hj in sys.controls() {
                let d_omega = exp_derivative(eigen, hj, grid.dt());
                for kk in 0..8 {
                    let vk = basis.matrix()[(l, kk)];
                    let d_alpha = exp_derivative(eigen, &hj.scale_real(vk), grid.dt());
                    assert!(d_alpha.max_abs_diff(&d_omega.scale_real(vk)) < 1e-13);
                }
            }
        }
    }

    #[test]
    fn target_phase_does_not_change_gradient() {
        let sys = two_qubit_system();
        let targ = crate::models::cnot();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let grid = PulseGrid::new(40, 0.05).unwrap();
        let pulse = ControlPulse::new(DMatrix::from_fn(40, 4, |_, _| rng.random_range(-1.0..1.0)), grid).unwrap();
        let g0 = fidelity_gradient(&sys, &pulse, &targ).unwrap();
        let g1 = fidelity_gradient(&sys, &pulse, &targ.scale(C64::from_polar(1.0, 1.234))).unwrap();
        assert!((g0.grape - g1.grape).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn zero_overlap_uses_zero_phase() {
        // σ_z target vs identity evolution: F = 0.
        let sys = ControlSystem::new(Operator::zeros(2), vec![pauli(Axis::X)]).unwrap();
        let pulse = ControlPulse::zeros(PulseGrid::new(4, 0.1).unwrap(), 1).unwrap();
        let g = fidelity_gradient(&sys, &pulse, &pauli(Axis::Z)).unwrap();
        assert_eq!(g.phase, 0.0);
        assert!(g.grape.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let sys = toffoli_system();
        let targ = crate::models::toffoli();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let grid = PulseGrid::new(50, 0.05).unwrap();
        let pulse = ControlPulse::new(DMatrix::from_fn(50, 2, |_, _| rng.random_range(-1.0..1.0)), grid).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fidelity_gradient(&sys, &pulse, &targ).unwrap().grape)
        };
        assert_eq!(run(1), run(3));
    }
}
