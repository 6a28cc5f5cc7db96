//! Hamiltonians, target gates and two-qubit local-equivalence tools.
//!
//! Qubit indices are 0-based and qubit 0 is the leftmost tensor factor, so
//! `|q0 q1 q2⟩` maps to basis index `4 q0 + 2 q1 + q2`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GrafsError, Result};
use crate::operator::{step_propagator, HermitianEigen, Operator, UNITARY_TOL};
use crate::propagation::ControlSystem;
use crate::rng::complex_normal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn pauli(axis: Axis) -> Operator {
    match axis {
        Axis::X => Operator::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]),
        Axis::Y => Operator::from_rows(&[vec![ZERO, -I], vec![I, ZERO]]),
        Axis::Z => Operator::from_rows(&[vec![ONE, ZERO], vec![ZERO, -ONE]]),
    }
}

fn embed(ops: &[(usize, Operator)], n_qubits: usize) -> Operator {
    let mut out = Operator::identity(1);
    for q in 0..n_qubits {
        let factor = ops
            .iter()
            .find(|(idx, _)| *idx == q)
            .map(|(_, op)| op.clone())
            .unwrap_or_else(|| Operator::identity(2));
        out = out.kron(&factor);
    }
    out
}

fn check_qubit(name: &'static str, q: usize, n_qubits: usize) -> Result<()> {
    if q >= n_qubits {
        return Err(invalid(name, format!("qubit {q} out of range for {n_qubits} qubits")));
    }
    Ok(())
}

/// Single-qubit Pauli on `qubit`, identity elsewhere.
pub fn pauli_control(axis: Axis, qubit: usize, n_qubits: usize) -> Result<Operator> {
    check_qubit("qubit", qubit, n_qubits)?;
    Ok(embed(&[(qubit, pauli(axis))], n_qubits))
}

/// `σx σx + σy σy + σz σz` on qubits `i` and `j` with unit coupling.
pub fn heisenberg_exchange(i: usize, j: usize, n_qubits: usize) -> Result<Operator> {
    check_qubit("i", i, n_qubits)?;
    check_qubit("j", j, n_qubits)?;
    if i == j {
        return Err(invalid("j", "exchange needs two distinct qubits"));
    }
    let mut h = Operator::zeros(1 << n_qubits);
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        h = &h + &embed(&[(i, pauli(axis)), (j, pauli(axis))], n_qubits);
    }
    Ok(h)
}

/// Three qubits on a line with exchange between neighbours, `σx` on the
/// first qubit and `σy` on the last.
pub fn toffoli_system() -> ControlSystem {
    let drift = &heisenberg_exchange(0, 1, 3).unwrap() + &heisenberg_exchange(1, 2, 3).unwrap();
    let controls = vec![
        pauli_control(Axis::X, 0, 3).unwrap(),
        pauli_control(Axis::Y, 2, 3).unwrap(),
    ];
    ControlSystem::new(drift, controls).expect("valid by construction")
}

/// Two exchange-coupled qubits with `σx` and `σy` controls on each qubit.
pub fn two_qubit_system() -> ControlSystem {
    let drift = heisenberg_exchange(0, 1, 2).unwrap();
    let mut controls = Vec::new();
    for q in 0..2 {
        controls.push(pauli_control(Axis::X, q, 2).unwrap());
        controls.push(pauli_control(Axis::Y, q, 2).unwrap());
    }
    ControlSystem::new(drift, controls).expect("valid by construction")
}

/// One qubit, no drift, control `σx / 2`: a constant unit amplitude rotates
/// the Bloch vector at unit angular rate.
pub fn single_axis_system() -> ControlSystem {
    ControlSystem::new(Operator::zeros(2), vec![pauli(Axis::X).scale_real(0.5)]).expect("valid")
}

fn permutation(perm: &[usize]) -> Operator {
    let d = perm.len();
    Operator::from_matrix(DMatrix::from_fn(d, d, |r, c| if perm[c] == r { ONE } else { ZERO })).unwrap()
}

/// Controlled-controlled-NOT: swaps `|110⟩` and `|111⟩`.
pub fn toffoli() -> Operator {
    permutation(&[0, 1, 2, 3, 4, 5, 7, 6])
}

/// CNOT with qubit 0 as control.
pub fn cnot() -> Operator {
    permutation(&[0, 1, 3, 2])
}

pub fn swap() -> Operator {
    permutation(&[0, 2, 1, 3])
}

pub fn sqrt_swap() -> Operator {
    let a = C64::new(0.5, 0.5);
    let b = C64::new(0.5, -0.5);
    Operator::from_rows(&[
        vec![ONE, ZERO, ZERO, ZERO],
        vec![ZERO, a, b, ZERO],
        vec![ZERO, b, a, ZERO],
        vec![ZERO, ZERO, ZERO, ONE],
    ])
}

/// Single-qubit rotation `exp(-i θ σ_axis / 2)`.
pub fn rotation(axis: Axis, theta: f64) -> Operator {
    step_propagator(&pauli(axis), theta / 2.0).unwrap().unitary
}

/// Dimension of the real Lie algebra generated by `{-i H}`.
pub fn lie_closure_dimension(generators: &[Operator]) -> usize {
    fn to_vec(op: &Operator) -> Vec<f64> {
        op.matrix().iter().flat_map(|z| [z.re, z.im]).collect()
    }
    fn reduce(basis: &[Vec<f64>], mut v: Vec<f64>) -> Option<Vec<f64>> {
        for _ in 0..2 {
            for b in basis {
                let dot: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            None
        } else {
            Some(v.into_iter().map(|x| x / norm).collect())
        }
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut elements: Vec<Operator> = Vec::new();
    let mut queue: Vec<Operator> = Vec::new();
    for g in generators {
        let x = g.scale(-I);
        if let Some(v) = reduce(&basis, to_vec(&x)) {
            basis.push(v);
            let norm = x.max_abs();
            elements.push(x.scale_real(1.0 / norm));
            queue.push(elements.last().unwrap().clone());
        }
    }
    while let Some(x) = queue.pop() {
        let snapshot = elements.clone();
        for y in &snapshot {
            let z = x.commutator(y);
            let scale = z.max_abs();
            if scale < 1e-12 {
                continue;
            }
            let z = z.scale_real(1.0 / scale);
            if let Some(v) = reduce(&basis, to_vec(&z)) {
                basis.push(v);
                elements.push(z.clone());
                queue.push(z);
            }
        }
    }
    basis.len()
}

/// Haar-random `d x d` unitary (QR of a complex Ginibre matrix with the
/// diagonal phase correction).
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Operator {
    let z = DMatrix::from_fn(d, d, |_, _| complex_normal(rng));
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for (j, mut col) in q.column_iter_mut().enumerate() {
        let rjj = r[(j, j)];
        col *= rjj / rjj.norm();
    }
    Operator::from_matrix(q).unwrap()
}

/// Haar-random element of SU(2).
pub fn haar_su2<R: Rng + ?Sized>(rng: &mut R) -> Operator {
    let u = haar_unitary(2, rng);
    let det = u.determinant();
    u.scale(det.sqrt().inv())
}

/// Random local gate `k1 ⊗ k2` with Haar `k1, k2 ∈ SU(2)`.
pub fn haar_local<R: Rng + ?Sized>(rng: &mut R) -> Operator {
    let a = haar_su2(rng);
    let b = haar_su2(rng);
    a.kron(&b)
}

/// Eigenphases in `(-π, π]` of a unitary.
///
/// The Hermitian combinations `(U + U†)/2` and `(U - U†)/2i` commute, so a
/// generic real mix of them shares `U`'s eigenvectors.
pub fn unitary_eigenphases(u: &Operator) -> Vec<f64> {
    let d = u.dim();
    let re = (u.matrix() + u.matrix().adjoint()) * C64::new(0.5, 0.0);
    let im = (u.matrix() - u.matrix().adjoint()) * C64::new(0.0, -0.5);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mix in [0.739_085_133_215_160_6, -1.324_717_957_244_746, 2.718_281_828_459_045] {
        let h = Operator::from_matrix(&re + &im * C64::new(mix, 0.0)).unwrap();
        let eigen = HermitianEigen::new(&h).expect("Hermitian by construction");
        let mut residual = 0.0_f64;
        let mut phases = Vec::with_capacity(d);
        for k in 0..d {
            let v = eigen.vectors.column(k);
            let uv = u.matrix() * v;
            let mu = v.adjoint() * &uv;
            let mu = mu[(0, 0)];
            residual = residual.max((uv - v * mu).norm());
            phases.push(mu.arg());
        }
        if residual < 1e-10 {
            return phases;
        }
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, phases));
        }
    }
    best.expect("at least one attempt").1
}

/// Bell ("magic") basis as columns.
fn magic_basis() -> Operator {
    let s = FRAC_1_SQRT_2;
    let a = C64::new(s, 0.0);
    let b = C64::new(0.0, s);
    Operator::from_rows(&[
        vec![a, ZERO, ZERO, b],
        vec![ZERO, b, a, ZERO],
        vec![ZERO, b, -a, ZERO],
        vec![a, ZERO, ZERO, -b],
    ])
}

fn check_two_qubit_unitary(u: &Operator) -> Result<()> {
    if u.dim() != 4 {
        return Err(GrafsError::Dimension(format!("expected a 4x4 two-qubit gate, got dim {}", u.dim())));
    }
    u.ensure_unitary(UNITARY_TOL)
}

/// `m = U_Bᵀ U_B` for `U` rescaled into SU(4), `U_B` its magic-basis form.
fn gamma_matrix(u: &Operator) -> Operator {
    let det = u.determinant();
    let su = u.scale(det.powf(-0.25));
    let q = magic_basis();
    let ub = &(&q.adjoint() * &su) * &q;
    &ub.transpose() * &ub
}

/// Makhlin local invariants `(G1, G2)`.
pub fn local_invariants(u: &Operator) -> Result<(C64, f64)> {
    check_two_qubit_unitary(u)?;
    let q = magic_basis();
    let ub = &(&q.adjoint() * u) * &q;
    let m = &ub.transpose() * &ub;
    let det = u.determinant();
    let tr = m.trace();
    let tr2 = (&m * &m).trace();
    let g1 = tr * tr / (det * 16.0);
    let g2 = (tr * tr - tr2) / (det * 4.0);
    Ok((g1, g2.re))
}

/// Chamber coordinates `(c_x, c_y, c_z)` of the nonlocal part of a two-qubit gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylPoint {
    pub c: [f64; 3],
}

impl WeylPoint {
    pub fn new(cx: f64, cy: f64, cz: f64) -> Self {
        WeylPoint { c: [cx, cy, cz] }
    }

    /// Representative in the chamber `π - c_y ≥ c_x ≥ c_y ≥ c_z ≥ 0`.
    ///
    /// Uses the local symmetries: shifts of any coordinate by π, permutations,
    /// and simultaneous sign flips of two coordinates.
    pub fn canonical(&self) -> WeylPoint {
        let mut c = self.c.map(|x| {
            let mut y = x.rem_euclid(PI);
            if y >= PI - 1e-13 {
                y = 0.0;
            }
            if y > FRAC_PI_2 {
                y -= PI;
            }
            y
        });
        c.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).unwrap());
        if c[0] < 0.0 {
            c[0] = -c[0];
            c[2] = -c[2];
        }
        if c[1] < 0.0 {
            c[1] = -c[1];
            c[2] = -c[2];
        }
        if c[2] < 0.0 {
            c = [PI - c[0], c[1], -c[2]];
        }
        WeylPoint { c }
    }

    pub fn in_chamber(&self) -> bool {
        let [x, y, z] = self.c;
        x >= y && y >= z && z >= 0.0 && x + y <= PI
    }

    pub fn max_abs_diff(&self, other: &WeylPoint) -> f64 {
        (0..3).map(|i| (self.c[i] - other.c[i]).abs()).fold(0.0, f64::max)
    }
}

/// `exp((i/2)(c_x σxσx + c_y σyσy + c_z σzσz))`.
pub fn cartan_core(w: &WeylPoint) -> Operator {
    let mut h = Operator::zeros(4);
    for (axis, c) in [Axis::X, Axis::Y, Axis::Z].into_iter().zip(w.c) {
        h = &h + &embed(&[(0, pauli(axis)), (1, pauli(axis))], 2).scale_real(c);
    }
    step_propagator(&h.scale_real(-0.5), 1.0).unwrap().unitary
}

/// Chamber coordinates of `u`'s local-equivalence class.
pub fn weyl_coordinates(u: &Operator) -> Result<WeylPoint> {
    check_two_qubit_unitary(u)?;
    let m = gamma_matrix(u);
    let mut theta = unitary_eigenphases(&m);
    theta.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let turns = (theta.iter().sum::<f64>() / (2.0 * PI)).round() as i64;
    if turns > 0 {
        for t in theta.iter_mut().rev().take(turns as usize) {
            *t -= 2.0 * PI;
        }
    } else if turns < 0 {
        for t in theta.iter_mut().take((-turns) as usize) {
            *t += 2.0 * PI;
        }
    }
    let (a, b, c) = (theta[0], theta[1], theta[2]);
    Ok(WeylPoint::new((a + c) / 2.0, (b + c) / 2.0, (a + b) / 2.0).canonical())
}

/// Signed distance (in eigenphase angle) from the perfect-entangler boundary:
/// `π` minus the widest angular gap between eigenvalues of `m(U)`. Zero lies
/// in their convex hull exactly when this is non-negative.
pub fn perfect_entangler_margin(u: &Operator) -> Result<f64> {
    check_two_qubit_unitary(u)?;
    let mut theta = unitary_eigenphases(&gamma_matrix(u));
    theta.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut widest = theta[0] + 2.0 * PI - theta[3];
    for w in theta.windows(2) {
        widest = widest.max(w[1] - w[0]);
    }
    Ok(PI - widest)
}

/// Tolerance on [`perfect_entangler_margin`]; CNOT and √SWAP sit on the boundary.
pub const PE_BOUNDARY_TOL: f64 = 1e-9;

/// Whether `u` can map some product state to a maximally entangled state.
pub fn is_perfect_entangler(u: &Operator) -> Result<bool> {
    Ok(perfect_entangler_margin(u)? >= -PE_BOUNDARY_TOL)
}

/// Uniform sample from the perfect-entangler region of the chamber, by
/// rejection from the bounding box.
pub fn sample_pe_weyl<R: Rng + ?Sized>(rng: &mut R) -> WeylPoint {
    loop {
        let w = WeylPoint::new(rng.random_range(0.0..PI), rng.random_range(0.0..FRAC_PI_2), rng.random_range(0.0..FRAC_PI_2));
        if !w.in_chamber() {
            continue;
        }
        if is_perfect_entangler(&cartan_core(&w)).unwrap_or(false) {
            return w;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Named(String),
    Cartan { point: WeylPoint, seed: Option<u64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GateTarget {
    pub id: String,
    pub unitary: Operator,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

/// `K1 · core(w) · K2` with Haar-random local gates drawn from `rng`.
pub fn cartan_target<R: Rng + ?Sized>(w: &WeylPoint, rng: &mut R) -> GateTarget {
    let k1 = haar_local(rng);
    let k2 = haar_local(rng);
    let unitary = &(&k1 * &cartan_core(w)) * &k2;
    GateTarget {
        id: format!("cartan:{},{},{}", w.c[0], w.c[1], w.c[2]),
        unitary,
        provenance: Provenance::Cartan { point: *w, seed: None },
        seed: None,
    }
}

/// Concurrence `2|ψ00 ψ11 - ψ01 ψ10|` of a two-qubit pure state.
pub fn concurrence(psi: &[C64]) -> f64 {
    2.0 * (psi[0] * psi[3] - psi[1] * psi[2]).norm()
}

fn product_output(u: &Operator, p: &[f64]) -> Vec<C64> {
    let a = [C64::new(p[0].cos(), 0.0), C64::from_polar(p[0].sin(), p[1])];
    let b = [C64::new(p[2].cos(), 0.0), C64::from_polar(p[2].sin(), p[3])];
    let input = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]];
    (0..4)
        .map(|r| (0..4).map(|c| u.get(r, c) * input[c]).sum())
        .collect()
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], step: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    for _ in 0..iters {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() < 1e-15 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|p| p[d]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|d| centroid[d] + t * (simplex[n][d] - centroid[d])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let xc = if fr < vals[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = (0..n).map(|d| best[d] + 0.5 * (simplex[i][d] - best[d])).collect();
                    vals[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
    (simplex[best].clone(), vals[best])
}

/// Largest output concurrence over product inputs, by multi-start simplex search.
///
/// Independent of the invariant-based test; a gate is a perfect entangler
/// exactly when this reaches 1.
pub fn max_product_concurrence<R: Rng + ?Sized>(u: &Operator, starts: usize, rng: &mut R) -> f64 {
    let objective = |p: &[f64]| 1.0 - concurrence(&product_output(u, p));
    let mut best = 0.0_f64;
    for _ in 0..starts {
        let start: Vec<f64> = (0..4).map(|i| if i % 2 == 0 { rng.random_range(0.0..FRAC_PI_2) } else { rng.random_range(0.0..2.0 * PI) }).collect();
        let (mut p, mut v) = nelder_mead(objective, &start, 0.4, 4000);
        for _ in 0..3 {
            let (p2, v2) = nelder_mead(objective, &p, 0.01, 4000);
            if v2 >= v - 1e-16 {
                break;
            }
            p = p2;
            v = v2;
        }
        best = best.max(1.0 - v);
        if best > 1.0 - 1e-12 {
            break;
        }
    }
    best
}

/// Systems by CLI name.
pub fn resolve_system(name: &str) -> Result<ControlSystem> {
    match name {
        "toffoli" | "three-qubit" => Ok(toffoli_system()),
        "two-qubit" => Ok(two_qubit_system()),
        "single-axis" => Ok(single_axis_system()),
        _ => Err(GrafsError::UnknownName(name.to_string())),
    }
}

fn parse_seed(s: &str) -> Result<u64> {
    s.parse::<u64>().map_err(|_| GrafsError::UnknownName(format!("bad seed `{s}`")))
}

/// Targets by CLI name: `toffoli`, `cnot`, `sqrt-swap`, `identity:<d>`, `x-pi`,
/// `cartan:<cx>,<cy>,<cz>:<seed>` and `pe-random:<seed>`.
pub fn resolve_target(name: &str) -> Result<GateTarget> {
    let named = |u: Operator| GateTarget {
        id: name.to_string(),
        unitary: u,
        provenance: Provenance::Named(name.to_string()),
        seed: None,
    };
    match name {
        "toffoli" => return Ok(named(toffoli())),
        "cnot" => return Ok(named(cnot())),
        "sqrt-swap" => return Ok(named(sqrt_swap())),
        "swap" => return Ok(named(swap())),
        "x-pi" => return Ok(named(rotation(Axis::X, PI))),
        _ => {}
    }
    if let Some(d) = name.strip_prefix("identity:") {
        let d: usize = d.parse().map_err(|_| GrafsError::UnknownName(name.to_string()))?;
        return Ok(named(Operator::identity(d)));
    }
    if let Some(rest) = name.strip_prefix("cartan:") {
        let (coords, seed) = rest.split_once(':').ok_or_else(|| GrafsError::UnknownName(name.to_string()))?;
        let c: Vec<f64> = coords
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| GrafsError::UnknownName(name.to_string()))?;
        if c.len() != 3 {
            return Err(GrafsError::UnknownName(name.to_string()));
        }
        let seed = parse_seed(seed)?;
        let point = WeylPoint::new(c[0], c[1], c[2]);
        let mut rng = crate::rng::SeedTree::new(seed).stream("locals");
        let mut t = cartan_target(&point, &mut rng);
        t.id = name.to_string();
        t.provenance = Provenance::Cartan { point, seed: Some(seed) };
        t.seed = Some(seed);
        return Ok(t);
    }
    if let Some(seed) = name.strip_prefix("pe-random:") {
        let seed = parse_seed(seed)?;
        return Ok(pe_random_target(seed));
    }
    Err(GrafsError::UnknownName(name.to_string()))
}

/// Perfect-entangler target with chamber point and locals drawn from `seed`.
pub fn pe_random_target(seed: u64) -> GateTarget {
    let tree = crate::rng::SeedTree::new(seed);
    let point = sample_pe_weyl(&mut tree.stream("weyl"));
    let mut t = cartan_target(&point, &mut tree.stream("locals"));
    t.id = format!("pe-random:{seed}");
    t.provenance = Provenance::Cartan { point, seed: Some(seed) };
    t.seed = Some(seed);
    t
}
