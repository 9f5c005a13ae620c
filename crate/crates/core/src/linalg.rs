//! Small dense helpers that the estimators share.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::dot;

/// Lower-triangular Cholesky factor stored row by row (row `i` holds `i + 1` entries).
///
/// Grows one row at a time by bordering: appending a point to a regularized
/// Gram matrix costs one forward substitution instead of a full refactorization.
#[derive(Debug, Clone, Default)]
pub struct PackedCholesky {
    data: Vec<f64>,
    n: usize,
}

impl PackedCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }

    /// Solves `L x = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let mut x = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let acc = dot(&row[..i], &x);
            x.push((b[i] - acc) / row[i]);
        }
        x
    }

    /// Appends the factor row for a new symmetric-matrix column.
    ///
    /// `off_diag` is the new column restricted to existing rows and `diag`
    /// is the new diagonal entry. Fails when the bordered matrix is not
    /// positive definite.
    pub fn push(&mut self, off_diag: &[f64], diag: f64) -> Result<Vec<f64>> {
        if off_diag.len() != self.n {
            return Err(Error::Internal(format!(
                "cholesky border of length {} for a factor of size {}",
                off_diag.len(),
                self.n
            )));
        }
        let mut l = self.forward_solve(off_diag);
        let pivot = diag - dot(&l, &l);
        if !(pivot > 0.0 && pivot.is_finite()) {
            return Err(Error::Internal(format!(
                "matrix lost positive definiteness (pivot {pivot:e})"
            )));
        }
        l.push(pivot.sqrt());
        self.data.extend_from_slice(&l);
        self.n += 1;
        Ok(l)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit norm in place. Returns `false` for a zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Uniform draw from the unit sphere `S^{d-1}`.
pub fn random_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if normalize(&mut v) {
            return v;
        }
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
