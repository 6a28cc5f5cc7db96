//! Deterministic random streams derived from one root seed.
//!
//! Each consumer asks for a stream by label (and optional index). The stream
//! seed is a hash of `(root, label, index)`, so adding a consumer never shifts
//! the numbers another consumer sees.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::operator::Operator;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn derive(&self, label: &str, index: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update(index.to_le_bytes());
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    pub fn stream(&self, label: &str) -> StreamRng {
        self.indexed(label, 0)
    }

    pub fn indexed(&self, label: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(self.derive(label, index))
    }
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Random Hermitian matrix `(G + G^dagger)/2` with complex Gaussian `G`.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    let g = DMatrix::from_fn(dim, dim, |_, _| complex_normal(rng));
    let h = (&g + g.adjoint()) * C64::new(0.5, 0.0);
    Operator::from_matrix(h).expect("square by construction")
}
