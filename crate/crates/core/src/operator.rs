//! Dense complex operators, Hermitian eigensystems and trace fidelities.
//!
//! Everything is expressed with ħ = 1, so Hamiltonian entries are angular
//! frequencies and `exp(-i dt H)` is the propagator for a step of length `dt`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{linalg::SymmetricEigen, DMatrix};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{GrafsError, Result};

/// Entrywise tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Tolerance for accepting a matrix as unitary.
pub const UNITARY_TOL: f64 = 1e-10;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// A dense `d x d` complex matrix.
#[derive(Clone, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(GrafsError::Dimension(format!(
                "operator must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Operator(m))
    }

    /// Builds an operator from row slices; panics on ragged input.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let d = rows.len();
        assert!(d > 0 && rows.iter().all(|r| r.len() == d), "rows must form a square matrix");
        Operator(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.len();
        assert!(d > 0 && rows.iter().all(|r| r.len() == d), "rows must form a square matrix");
        Operator(DMatrix::from_fn(d, d, |i, j| C64::new(rows[i][j], 0.0)))
    }

    pub fn zeros(dim: usize) -> Self {
        Operator(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Operator(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let d = diag.len();
        Operator(DMatrix::from_fn(d, d, |i, j| if i == j { diag[i] } else { C64::new(0.0, 0.0) }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Operator {
        Operator(self.0.adjoint())
    }

    pub fn transpose(&self) -> Operator {
        Operator(self.0.transpose())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn determinant(&self) -> C64 {
        self.0.clone().determinant()
    }

    pub fn scale(&self, s: C64) -> Operator {
        Operator(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> Operator {
        Operator(self.0.map(|z| z * s))
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Operator) -> Operator {
        Operator(self.0.kronecker(&other.0))
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        Operator(&self.0 * &other.0 - &other.0 * &self.0)
    }

    /// `tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Operator) -> C64 {
        let d = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..d {
            for k in 0..d {
                acc += self.0[(i, k)] * other.0[(k, i)];
            }
        }
        acc
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Spectral norm (largest singular value).
    pub fn spectral_norm(&self) -> f64 {
        let gram = Operator(self.0.adjoint() * &self.0);
        match HermitianEigen::new(&gram) {
            Ok(e) => e.values.iter().fold(0.0_f64, |m, v| m.max(*v)).max(0.0).sqrt(),
            Err(_) => f64::NAN,
        }
    }

    pub fn hermitian_asymmetry(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_asymmetry() <= tol
    }

    /// `max |U^dagger U - 1|` entrywise.
    pub fn unitarity_deviation(&self) -> f64 {
        let prod = Operator(self.0.adjoint() * &self.0);
        prod.max_abs_diff(&Operator::identity(self.dim()))
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_deviation() <= tol
    }

    pub fn ensure_hermitian(&self) -> Result<()> {
        let asym = self.hermitian_asymmetry();
        if asym > HERMITIAN_TOL {
            return Err(GrafsError::NotHermitian { max_asymmetry: asym });
        }
        Ok(())
    }

    pub fn ensure_unitary(&self, tol: f64) -> Result<()> {
        let dev = self.unitarity_deviation();
        if dev > tol {
            return Err(GrafsError::NotUnitary { deviation: dev });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Operator({}x{}) ", self.dim(), self.dim())?;
        f.debug_list()
            .entries((0..self.dim()).map(|i| {
                (0..self.dim())
                    .map(|j| {
                        let z = self.0[(i, j)];
                        format!("{:.6}{:+.6}i", z.re, z.im)
                    })
                    .collect::<Vec<_>>()
            }))
            .finish()
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl Mul for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        Operator(self.0 * rhs.0)
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorRepr {
    dim: usize,
    entries: Vec<[f64; 2]>,
}

impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let z = self.0[(i, j)];
                entries.push([z.re, z.im]);
            }
        }
        OperatorRepr { dim: d, entries }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = OperatorRepr::deserialize(de)?;
        let d = repr.dim;
        if d == 0 || repr.entries.len() != d * d {
            return Err(serde::de::Error::custom(format!(
                "operator of dim {d} needs {} entries, got {}",
                d * d,
                repr.entries.len()
            )));
        }
        Ok(Operator(DMatrix::from_fn(d, d, |i, j| {
            let [re, im] = repr.entries[i * d + j];
            C64::new(re, im)
        })))
    }
}

/// Eigensystem `H = V diag(values) V^dagger` of a Hermitian operator.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Unitary whose columns are the eigenvectors.
    pub vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn new(h: &Operator) -> Result<Self> {
        h.ensure_hermitian()?;
        // Symmetrize so roundoff-level asymmetry never reaches the solver.
        let sym = (h.matrix() + h.matrix().adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::try_new(sym, EIGEN_EPS, EIGEN_MAX_ITER)
            .ok_or_else(|| GrafsError::NonFinite("Hermitian eigensolver did not converge".into()))?;
        Ok(HermitianEigen {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `exp(-i dt H)` assembled from the eigensystem.
    pub fn exp_neg_i(&self, dt: f64) -> Operator {
        let phases: Vec<C64> = self.values.iter().map(|&l| C64::from_polar(1.0, -dt * l)).collect();
        self.assemble_diagonal(&phases)
    }

    /// `V diag(diag) V^dagger`.
    pub fn assemble_diagonal(&self, diag: &[C64]) -> Operator {
        let v = &self.vectors;
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= diag[j];
        }
        Operator(scaled * v.adjoint())
    }

    /// `V^dagger A V`: the matrix elements of `a` in the eigenbasis.
    pub fn to_eigenbasis(&self, a: &Operator) -> DMatrix<C64> {
        self.vectors.adjoint() * a.matrix() * &self.vectors
    }

    /// `V A V^dagger`: maps eigenbasis matrix elements back to the computational basis.
    pub fn from_eigenbasis(&self, a: &DMatrix<C64>) -> Operator {
        Operator(&self.vectors * a * self.vectors.adjoint())
    }
}

/// One exponentiated step together with the eigensystem that produced it.
#[derive(Clone, Debug)]
pub struct StepPropagator {
    pub unitary: Operator,
    pub eigen: HermitianEigen,
    pub dt: f64,
}

/// `exp(-i dt h)` via Hermitian eigendecomposition. The eigensystem is kept
/// for the exact derivative formula.
pub fn step_propagator(h: &Operator, dt: f64) -> Result<StepPropagator> {
    if !dt.is_finite() {
        return Err(GrafsError::NonFinite(format!("step duration {dt}")));
    }
    let eigen = HermitianEigen::new(h)?;
    Ok(StepPropagator {
        unitary: eigen.exp_neg_i(dt),
        eigen,
        dt,
    })
}

fn check_same_dim(a: &Operator, b: &Operator) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(GrafsError::Dimension(format!(
            "target has dim {} but final unitary has dim {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Complex trace overlap `tr(U_targ^dagger U_final)`.
pub fn trace_fidelity(u_targ: &Operator, u_final: &Operator) -> Result<C64> {
    check_same_dim(u_targ, u_final)?;
    Ok(u_targ.adjoint().trace_product(u_final))
}

/// Global-phase invariant fidelity `|tr(U_targ^dagger U_final)| / d`.
pub fn phase_invariant_fidelity(u_targ: &Operator, u_final: &Operator) -> Result<f64> {
    let f = trace_fidelity(u_targ, u_final)?;
    Ok(f.norm() / u_targ.dim() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{pauli, Axis};
    use crate::rng::random_hermitian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn taylor_exp(h: &Operator, dt: f64, terms: usize) -> Operator {
        let gen = h.scale(c(0.0, -dt));
        let mut term = Operator::identity(h.dim());
        let mut sum = term.clone();
        for k in 1..terms {
            term = (&term * &gen).scale_real(1.0 / k as f64);
            sum = &sum + &term;
        }
        sum
    }

    #[test]
    fn zero_generator_gives_identity() {
        let p = step_propagator(&Operator::zeros(2), 1.0).unwrap();
        assert!(p.unitary.max_abs_diff(&Operator::identity(2)) < 1e-15);
    }

    #[test]
    fn pauli_x_quarter_turn() {
        let p = step_propagator(&pauli(Axis::X), FRAC_PI_2).unwrap();
        let expected = Operator::from_rows(&[vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, -1.0), c(0.0, 0.0)]]);
        assert!(p.unitary.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn random_hermitian_matches_taylor_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_hermitian(4, &mut rng);
        let p = step_propagator(&h, 0.1).unwrap();
        let oracle = taylor_exp(&h, 0.1, 20);
        assert!(p.unitary.max_abs_diff(&oracle) < 1e-12);
        assert!(p.unitary.unitarity_deviation() < 1e-12);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = Operator::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        match step_propagator(&m, 1.0) {
            Err(GrafsError::NotHermitian { max_asymmetry }) => assert!((max_asymmetry - 1.0).abs() < 1e-15),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn trace_fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = crate::models::haar_unitary(8, &mut rng);
        let f = trace_fidelity(&u, &u).unwrap();
        assert!((f - c(8.0, 0.0)).norm() < 1e-12);

        let f = trace_fidelity(&Operator::identity(2), &Operator::identity(2).scale_real(-1.0)).unwrap();
        assert!((f - c(-2.0, 0.0)).norm() < 1e-15);

        let cnot = crate::models::cnot();
        let phase = C64::from_polar(1.0, FRAC_PI_4);
        let f = trace_fidelity(&cnot, &cnot.scale(phase)).unwrap();
        assert!((f - phase * 4.0).norm() < 1e-14);
    }

    #[test]
    fn phase_invariant_examples() {
        let z = pauli(Axis::Z);
        let x = pauli(Axis::X);
        assert!((phase_invariant_fidelity(&z, &z).unwrap() - 1.0).abs() < 1e-15);
        assert!(phase_invariant_fidelity(&z, &x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn phase_invariant_matches_eigenphase_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = crate::models::haar_unitary(4, &mut rng);
        let b = crate::models::haar_unitary(4, &mut rng);
        let w = &a.adjoint() * &b;
        let phases = crate::models::unitary_eigenphases(&w);
        let oracle = phases.iter().map(|&t| C64::from_polar(1.0, t)).sum::<C64>().norm() / 4.0;
        let phi = phase_invariant_fidelity(&a, &b).unwrap();
        assert!((phi - oracle).abs() < 1e-12, "{phi} vs {oracle}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(trace_fidelity(&Operator::identity(2), &Operator::identity(4)).is_err());
    }

    #[test]
    fn serde_layout_is_row_major() {
        let m = Operator::from_rows(&[vec![c(1.0, 0.0), c(2.0, 0.5)], vec![c(3.0, 0.0), c(4.0, -1.0)]]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"dim":2,"entries":[[1.0,0.0],[2.0,0.5],[3.0,0.0],[4.0,-1.0]]}"#);
        let back: Operator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Operator>(r#"{"dim":2,"entries":[[1.0,0.0]]}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn global_phase_invariance(seed in 0u64..10_000, theta in -10.0f64..10.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = crate::models::haar_unitary(4, &mut rng);
                let b = crate::models::haar_unitary(4, &mut rng);
                let p0 = phase_invariant_fidelity(&a, &b).unwrap();
                let p1 = phase_invariant_fidelity(&a, &b.scale(C64::from_polar(1.0, theta))).unwrap();
                prop_assert!((p0 - p1).abs() < 1e-14);
            }
        }
    }
}
