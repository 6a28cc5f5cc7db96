//! Discrete prolate spheroidal (Slepian) sequences.
//!
//! Eigenvectors come from the symmetric tridiagonal matrix that commutes with
//! the sinc kernel `K[n,m] = sin(2πW(n-m)) / (π(n-m))`; that matrix has well
//! separated eigenvalues even where the kernel's own spectrum piles up at 1.
//! Concentrations are then read off the kernel itself as `vᵀKv`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, GrafsError, Result};

/// Default relative endpoint threshold for [`endpoint_filter`].
pub const DEFAULT_ENDPOINT_THRESHOLD: f64 = 0.15;

/// Entries below this fraction of a column's peak are treated as zero when
/// fixing polarity and counting sign changes.
const NEGLIGIBLE: f64 = 1e-10;

/// Orthonormal `N x K` pulse-shaping basis with per-column concentrations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlepianBasis {
    n: usize,
    half_bandwidth: f64,
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    orders: Vec<usize>,
}

impl SlepianBasis {
    /// The `W = 1/2` limit: the kernel is the identity and so is the basis.
    pub fn full_band(n: usize) -> Self {
        SlepianBasis {
            n,
            half_bandwidth: 0.5,
            matrix: DMatrix::identity(n, n),
            eigenvalues: vec![1.0; n],
            orders: (0..n).collect(),
        }
    }

    /// Wraps caller-supplied orthonormal columns, e.g. a single constant column.
    pub fn from_orthonormal_columns(matrix: DMatrix<f64>, half_bandwidth: f64) -> Result<Self> {
        let gram = matrix.transpose() * &matrix;
        let dev = (gram - DMatrix::identity(matrix.ncols(), matrix.ncols()))
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if dev > 1e-10 {
            return Err(invalid("matrix", format!("columns are not orthonormal (deviation {dev:e})")));
        }
        let n = matrix.nrows();
        let eigenvalues = if half_bandwidth >= 0.5 {
            vec![1.0; matrix.ncols()]
        } else {
            let kernel = SincKernel::new(n, half_bandwidth);
            matrix.column_iter().map(|c| kernel.quadratic_form(c.as_slice())).collect()
        };
        Ok(SlepianBasis {
            n,
            half_bandwidth,
            orders: (0..matrix.ncols()).collect(),
            matrix,
            eigenvalues,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> f64 {
        self.half_bandwidth
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_sequences(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.matrix.column(k).iter().copied().collect()
    }

    /// Keeps the first `k` columns.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n_sequences() {
            return Err(invalid("k", format!("cannot keep {k} of {} sequences", self.n_sequences())));
        }
        Ok(SlepianBasis {
            n: self.n,
            half_bandwidth: self.half_bandwidth,
            matrix: self.matrix.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            orders: self.orders[..k].to_vec(),
        })
    }

    fn select(&self, keep: &[usize]) -> Self {
        let matrix = DMatrix::from_fn(self.n, keep.len(), |r, c| self.matrix[(r, keep[c])]);
        SlepianBasis {
            n: self.n,
            half_bandwidth: self.half_bandwidth,
            matrix,
            eigenvalues: keep.iter().map(|&k| self.eigenvalues[k]).collect(),
            orders: keep.iter().map(|&k| self.orders[k]).collect(),
        }
    }

    /// Smallest retained concentration.
    pub fn min_concentration(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// The Toeplitz sinc kernel of the concentration problem.
#[derive(Clone, Debug)]
pub struct SincKernel {
    w: f64,
    lags: Vec<f64>,
}

impl SincKernel {
    pub fn new(n: usize, w: f64) -> Self {
        let lags = (0..n)
            .map(|m| {
                if m == 0 {
                    2.0 * w
                } else {
                    let x = m as f64;
                    (2.0 * PI * w * x).sin() / (PI * x)
                }
            })
            .collect();
        SincKernel { w, lags }
    }

    pub fn half_bandwidth(&self) -> f64 {
        self.w
    }

    pub fn n(&self) -> usize {
        self.lags.len()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.lags[row.abs_diff(col)]
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |r, c| self.entry(r, c))
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|r| (0..n).map(|c| self.lags[r.abs_diff(c)] * v[c]).sum())
            .collect()
    }

    /// `vᵀKv`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = self.lags[0] * v.iter().map(|x| x * x).sum::<f64>();
        for lag in 1..n {
            let k = self.lags[lag];
            let s: f64 = (0..n - lag).map(|i| v[i] * v[i + lag]).sum();
            acc += 2.0 * k * s;
        }
        acc
    }
}

fn check_band(n: usize, w: f64) -> Result<()> {
    if n < 2 {
        return Err(invalid("n", format!("sequence length must be at least 2, got {n}")));
    }
    if !(w > 0.0 && w < 0.5) {
        return Err(invalid("w", format!("half bandwidth must lie in (0, 0.5), got {w}")));
    }
    Ok(())
}

/// Approximate dimension `round(2NW)` of the band-limited subspace.
pub fn effective_dimension(n: usize, w: f64) -> usize {
    (2.0 * n as f64 * w).round() as usize
}

/// Fraction of a unit-norm sequence's energy inside `[-W, W]`.
pub fn concentration(v: &[f64], w: f64) -> Result<f64> {
    check_band(v.len(), w)?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(GrafsError::NotNormalized { norm });
    }
    Ok(SincKernel::new(v.len(), w).quadratic_form(v))
}

/// Symmetric tridiagonal matrix commuting with the sinc kernel.
struct CommutingTridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl CommutingTridiagonal {
    fn new(n: usize, w: f64) -> Self {
        let cw = (2.0 * PI * w).cos();
        let nf = n as f64;
        let diag = (0..n)
            .map(|l| {
                let x = (nf - 1.0 - 2.0 * l as f64) / 2.0;
                x * x * cw
            })
            .collect();
        let off = (1..n).map(|l| l as f64 * (nf - l as f64) / 2.0).collect();
        CommutingTridiagonal { diag, off }
    }

    fn n(&self) -> usize {
        self.diag.len()
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.n() {
            let prev = if q == 0.0 { f64::EPSILON * (1.0 + x.abs()) } else { q };
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / prev;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The eigenvalue with ascending index `idx`, by bisection.
    fn eigenvalue(&self, idx: usize, bounds: (f64, f64)) -> f64 {
        let (mut lo, mut hi) = bounds;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > idx {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(T - shift) x = rhs` by Gaussian elimination with partial pivoting.
    fn shifted_solve(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.n();
        let tiny = f64::EPSILON * self.diag.iter().chain(&self.off).fold(1.0_f64, |m, v| m.max(v.abs()));
        // Row i holds entries at columns i, i+1, i+2 after elimination.
        let mut a: Vec<f64> = self.diag.iter().map(|d| d - shift).collect();
        let mut b: Vec<f64> = self.off.clone(); // super-diagonal (i, i+1)
        let mut c = vec![0.0; n]; // second super-diagonal (i, i+2)
        let mut lower: Vec<f64> = self.off.clone(); // sub-diagonal (i+1, i)
        let mut x = rhs.to_vec();
        b.push(0.0);
        lower.push(0.0);
        for i in 0..n.saturating_sub(1) {
            if lower[i].abs() > a[i].abs() {
                // swap rows i and i+1
                let (ai, bi, ci) = (a[i], b[i], c[i]);
                a[i] = lower[i];
                b[i] = a[i + 1];
                c[i] = b[i + 1];
                let next_a = bi;
                let next_b = ci;
                x.swap(i, i + 1);
                let m = ai / a[i];
                a[i + 1] = next_a - m * b[i];
                b[i + 1] = next_b - m * c[i];
                x[i + 1] -= m * x[i];
            } else {
                if a[i] == 0.0 {
                    a[i] = tiny;
                }
                let m = lower[i] / a[i];
                a[i + 1] -= m * b[i];
                b[i + 1] -= m * c[i];
                x[i + 1] -= m * x[i];
            }
        }
        if a[n - 1] == 0.0 {
            a[n - 1] = tiny;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            if i + 1 < n {
                s -= b[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= c[i] * x[i + 2];
            }
            x[i] = s / a[i];
        }
        x
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

fn peak(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Number of sign changes, ignoring negligible entries.
pub fn sign_changes(v: &[f64]) -> usize {
    let floor = NEGLIGIBLE * peak(v);
    let mut last = 0.0_f64;
    let mut changes = 0;
    for &x in v.iter().filter(|x| x.abs() > floor) {
        if last != 0.0 && x.signum() != last.signum() {
            changes += 1;
        }
        last = x;
    }
    changes
}

/// Top `k_max` Slepian sequences of length `n` and half bandwidth `w`.
///
/// Columns are unit norm, ordered by decreasing concentration, and scaled so
/// the first non-negligible entry is positive.
pub fn generate_dpss(n: usize, w: f64, k_max: usize) -> Result<SlepianBasis> {
    check_band(n, w)?;
    if k_max == 0 || k_max > n {
        return Err(invalid("k_max", format!("need 1 <= k_max <= n = {n}, got {k_max}")));
    }
    let tri = CommutingTridiagonal::new(n, w);
    let bounds = tri.gershgorin();
    let scale = bounds.0.abs().max(bounds.1.abs()).max(1.0);
    let kernel = SincKernel::new(n, w);

    let mut matrix = DMatrix::<f64>::zeros(n, k_max);
    let mut eigenvalues = Vec::with_capacity(k_max);
    let mut shifts: Vec<f64> = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let shift = tri.eigenvalue(n - 1 - k, bounds);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7 + k * 13) % 17) as f64 / 17.0).collect();
        normalize(&mut v);
        for _ in 0..4 {
            v = tri.shifted_solve(shift, &v);
            // Re-orthogonalize against neighbours with nearby eigenvalues.
            for (j, &sj) in shifts.iter().enumerate() {
                if (sj - shift).abs() < 1e-6 * scale {
                    let col = matrix.column(j);
                    let dot: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(col.iter()).for_each(|(x, c)| *x -= dot * c);
                }
            }
            normalize(&mut v);
        }
        let floor = NEGLIGIBLE * peak(&v);
        if let Some(first) = v.iter().find(|x| x.abs() > floor) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }

        let lambda = kernel.quadratic_form(&v);
        let kv = kernel.apply(&v);
        let lambda_check = kv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (lambda - lambda_check).abs() > 1e-8 * lambda.abs() + 1e-14 {
            return Err(GrafsError::NonFinite(format!(
                "concentration of order {k} failed verification: {lambda} vs {lambda_check}"
            )));
        }
        matrix.set_column(k, &nalgebra::DVector::from_vec(v));
        eigenvalues.push(lambda);
        shifts.push(shift);
    }
    Ok(SlepianBasis {
        n,
        half_bandwidth: w,
        matrix,
        eigenvalues,
        orders: (0..k_max).collect(),
    })
}

/// `generate_dpss(n, w, round(2NW))`, at least one sequence.
pub fn generate_default(n: usize, w: f64) -> Result<SlepianBasis> {
    generate_dpss(n, w, effective_dimension(n, w).clamp(1, n))
}

/// Ratio of the larger endpoint magnitude to the column's peak.
pub fn endpoint_ratio(v: &[f64]) -> f64 {
    let ends = v[0].abs().max(v[v.len() - 1].abs());
    ends / peak(v)
}

/// Drops columns whose endpoints exceed `rel_threshold` times their peak.
pub fn endpoint_filter(basis: &SlepianBasis, rel_threshold: f64) -> Result<SlepianBasis> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(invalid("rel_threshold", format!("must lie in (0, 1), got {rel_threshold}")));
    }
    let ratios: Vec<f64> = (0..basis.n_sequences())
        .map(|k| endpoint_ratio(basis.matrix.column(k).as_slice()))
        .collect();
    let keep: Vec<usize> = ratios
        .iter()
        .enumerate()
        .filter(|(_, r)| **r <= rel_threshold)
        .map(|(k, _)| k)
        .collect();
    if keep.is_empty() {
        let smallest_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(GrafsError::EmptyFilter { smallest_ratio });
    }
    Ok(basis.select(&keep))
}
