use alloc::vec;
use alloc::vec::Vec;

use super::arith::{add_mod, mul_mod, neg_mod, sub_mod};

/// An element of `Z_Q[X]/(X^N + 1)` in residue form over chain primes `0..=level`.
///
/// Residues are kept in evaluation (NTT) form unless `ntt` is false.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingPoly {
    pub level: usize,
    pub residues: Vec<Vec<u64>>,
    pub ntt: bool,
}

impl RingPoly {
    pub fn zero(n: usize, level: usize, ntt: bool) -> Self {
        RingPoly { level, residues: vec![vec![0u64; n]; level + 1], ntt }
    }

    pub fn n(&self) -> usize {
        self.residues[0].len()
    }

    pub fn add_assign(&mut self, o: &RingPoly, primes: &[u64]) {
        debug_assert_eq!(self.ntt, o.ntt);
        for (i, (a, b)) in self.residues.iter_mut().zip(&o.residues).enumerate() {
            let p = primes[i];
            for (x, y) in a.iter_mut().zip(b) {
                *x = add_mod(*x, *y, p);
            }
        }
    }

    pub fn sub_assign(&mut self, o: &RingPoly, primes: &[u64]) {
        debug_assert_eq!(self.ntt, o.ntt);
        for (i, (a, b)) in self.residues.iter_mut().zip(&o.residues).enumerate() {
            let p = primes[i];
            for (x, y) in a.iter_mut().zip(b) {
                *x = sub_mod(*x, *y, p);
            }
        }
    }

    pub fn neg_assign(&mut self, primes: &[u64]) {
        for (i, a) in self.residues.iter_mut().enumerate() {
            let p = primes[i];
            for x in a.iter_mut() {
                *x = neg_mod(*x, p);
            }
        }
    }

    /// Pointwise product; both operands must be in NTT form.
    pub fn mul(&self, o: &RingPoly, primes: &[u64]) -> RingPoly {
        debug_assert!(self.ntt && o.ntt);
        let residues = self
            .residues
            .iter()
            .zip(&o.residues)
            .enumerate()
            .map(|(i, (a, b))| {
                let p = primes[i];
                a.iter().zip(b).map(|(x, y)| mul_mod(*x, *y, p)).collect()
            })
            .collect();
        RingPoly { level: self.level.min(o.level), residues, ntt: true }
    }

    pub fn mul_scalar_assign(&mut self, c: &[u64], primes: &[u64]) {
        for (i, a) in self.residues.iter_mut().enumerate() {
            let p = primes[i];
            for x in a.iter_mut() {
                *x = mul_mod(*x, c[i], p);
            }
        }
    }

    /// Keep only the residues of primes `0..=level`.
    pub fn drop_to(&mut self, level: usize) {
        self.residues.truncate(level + 1);
        self.level = level;
    }
}
