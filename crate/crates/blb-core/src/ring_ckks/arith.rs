//! Word-sized modular arithmetic, prime search and the negacyclic NTT.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[inline(always)]
pub fn add_mod(a: u64, b: u64, p: u64) -> u64 {
    let s = a + b;
    if s >= p {
        s - p
    } else {
        s
    }
}

#[inline(always)]
pub fn sub_mod(a: u64, b: u64, p: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + p - b
    }
}

#[inline(always)]
pub fn neg_mod(a: u64, p: u64) -> u64 {
    if a == 0 {
        0
    } else {
        p - a
    }
}

#[inline(always)]
pub fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

/// Precomputed `floor(w * 2^64 / p)` for multiplications by a fixed `w`.
#[inline(always)]
pub fn shoup(w: u64, p: u64) -> u64 {
    (((w as u128) << 64) / p as u128) as u64
}

#[inline(always)]
pub fn mul_shoup(a: u64, w: u64, w_shoup: u64, p: u64) -> u64 {
    let q = ((a as u128 * w_shoup as u128) >> 64) as u64;
    let r = a.wrapping_mul(w).wrapping_sub(q.wrapping_mul(p));
    if r >= p {
        r - p
    } else {
        r
    }
}

pub fn pow_mod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1 % p;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, p);
        }
        b = mul_mod(b, b, p);
        e >>= 1;
    }
    r
}

/// Inverse modulo a prime.
pub fn inv_mod(a: u64, p: u64) -> u64 {
    pow_mod(a, p - 2, p)
}

/// Reduce a signed value into `[0, p)`.
#[inline]
pub fn reduce_i128(x: i128, p: u64) -> u64 {
    let r = x % p as i128;
    if r < 0 {
        (r + p as i128) as u64
    } else {
        r as u64
    }
}

/// Centered representative of `x mod p` in `(-p/2, p/2]`.
#[inline]
pub fn center(x: u64, p: u64) -> i64 {
    if x > p / 2 {
        x as i64 - p as i64
    } else {
        x as i64
    }
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &b in &BASES {
        if n % b == 0 {
            return n == b;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    'outer: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

pub fn bit_width(p: u64) -> u32 {
    64 - p.leading_zeros()
}

/// Smallest primes `p ≡ 1 (mod 2n)` with exactly `bits` bits, skipping `exclude`.
///
/// Searching upward from `2^(bits-1)` keeps every scaling prime just above a
/// power of two, so rescaling by it changes the scale by a factor within
/// `2^-20` of a power of two at the ring degrees used here.
pub fn ntt_primes_ascending(bits: u32, n: usize, count: usize, exclude: &[u64]) -> Result<Vec<u64>> {
    if !(20..=62).contains(&bits) {
        return Err(Error::Param(alloc::format!("prime width {bits} outside 20..=62")));
    }
    let m = 2 * n as u64;
    let lo = 1u64 << (bits - 1);
    let hi = 1u64 << bits;
    let mut p = (lo / m + 1) * m + 1;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if p >= hi {
            return Err(Error::Param(alloc::format!("ran out of {bits}-bit primes = 1 mod {m}")));
        }
        if is_prime(p) && !exclude.contains(&p) && !out.contains(&p) {
            out.push(p);
        }
        p += m;
    }
    Ok(out)
}

/// Largest primes `p ≡ 1 (mod 2n)` below `2^bits`, skipping `exclude`.
pub fn ntt_primes_descending(bits: u32, n: usize, count: usize, exclude: &[u64]) -> Result<Vec<u64>> {
    if !(20..=62).contains(&bits) {
        return Err(Error::Param(alloc::format!("prime width {bits} outside 20..=62")));
    }
    let m = 2 * n as u64;
    let hi = 1u64 << bits;
    let lo = 1u64 << (bits - 1);
    let mut p = ((hi - 1) / m) * m + 1;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if p < lo {
            return Err(Error::Param(alloc::format!("ran out of {bits}-bit primes = 1 mod {m}")));
        }
        if is_prime(p) && !exclude.contains(&p) && !out.contains(&p) {
            out.push(p);
        }
        p -= m;
    }
    Ok(out)
}

/// A primitive `2n`-th root of unity modulo `p`.
pub fn primitive_root_2n(n: usize, p: u64) -> Result<u64> {
    let m = 2 * n as u64;
    if (p - 1) % m != 0 {
        return Err(Error::Param(alloc::format!("prime {p} is not 1 mod {m}")));
    }
    let e = (p - 1) / m;
    for x in 2..p {
        let g = pow_mod(x, e, p);
        // order divides 2n; it is exactly 2n iff g^n = -1
        if pow_mod(g, n as u64, p) == p - 1 {
            return Ok(g);
        }
    }
    Err(Error::Param(alloc::format!("no primitive root for {p}")))
}

#[inline]
pub fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

/// Tables for the negacyclic NTT over one prime.
///
/// The forward transform maps coefficients to evaluations at the odd powers of
/// `psi`, output in bit-reversed order: slot `k` holds `a(psi^(2·brv(k)+1))`.
#[derive(Debug, Clone)]
pub struct NttTable {
    pub p: u64,
    pub n: usize,
    pub psi: u64,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

impl NttTable {
    pub fn new(n: usize, p: u64) -> Result<Self> {
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::Param(alloc::format!("ring degree {n} is not a power of two")));
        }
        if !is_prime(p) {
            return Err(Error::Param(alloc::format!("{p} is not prime")));
        }
        let psi = primitive_root_2n(n, p)?;
        let psi_inv = inv_mod(psi, p);
        let bits = n.trailing_zeros();
        let mut psi_rev = vec![0u64; n];
        let mut psi_inv_rev = vec![0u64; n];
        let mut pw = 1u64;
        let mut pw_inv = 1u64;
        for i in 0..n {
            let r = bit_reverse(i, bits);
            psi_rev[r] = pw;
            psi_inv_rev[r] = pw_inv;
            pw = mul_mod(pw, psi, p);
            pw_inv = mul_mod(pw_inv, psi_inv, p);
        }
        let psi_rev_shoup = psi_rev.iter().map(|&w| shoup(w, p)).collect();
        let psi_inv_rev_shoup = psi_inv_rev.iter().map(|&w| shoup(w, p)).collect();
        let n_inv = inv_mod(n as u64, p);
        Ok(NttTable {
            p,
            n,
            psi,
            psi_rev,
            psi_rev_shoup,
            psi_inv_rev,
            psi_inv_rev_shoup,
            n_inv,
            n_inv_shoup: shoup(n_inv, p),
        })
    }

    pub fn forward(&self, a: &mut [u64]) {
        let p = self.p;
        let n = self.n;
        let mut t = n;
        let mut m = 1;
        while m < n {
            t >>= 1;
            for i in 0..m {
                let j1 = 2 * i * t;
                let w = self.psi_rev[m + i];
                let ws = self.psi_rev_shoup[m + i];
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = mul_shoup(a[j + t], w, ws, p);
                    a[j] = add_mod(u, v, p);
                    a[j + t] = sub_mod(u, v, p);
                }
            }
            m <<= 1;
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        let p = self.p;
        let n = self.n;
        let mut t = 1;
        let mut m = n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let w = self.psi_inv_rev[h + i];
                let ws = self.psi_inv_rev_shoup[h + i];
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = add_mod(u, v, p);
                    a[j + t] = mul_shoup(sub_mod(u, v, p), w, ws, p);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_shoup(*x, self.n_inv, self.n_inv_shoup, p);
        }
    }

    /// Permutation `perm` with `ntt(a(X^g))[k] = ntt(a)[perm[k]]`.
    pub fn automorphism_permutation(&self, g: usize) -> Vec<usize> {
        let n = self.n;
        let bits = n.trailing_zeros();
        let m = 2 * n;
        (0..n)
            .map(|k| {
                let e = 2 * bit_reverse(k, bits) + 1;
                let e2 = (e * g) % m;
                bit_reverse((e2 - 1) / 2, bits)
            })
            .collect()
    }
}

/// Schoolbook product in `Z_p[X]/(X^n + 1)`; the reference for NTT tests.
pub fn negacyclic_schoolbook(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            let prod = mul_mod(a[i], b[j], p);
            let k = i + j;
            if k < n {
                out[k] = add_mod(out[k], prod, p);
            } else {
                out[k - n] = sub_mod(out[k - n], prod, p);
            }
        }
    }
    out
}
