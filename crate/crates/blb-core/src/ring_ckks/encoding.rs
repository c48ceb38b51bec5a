//! Canonical-embedding encoder over the power-of-5 slot ordering.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::arith::{bit_reverse, center, inv_mod, mul_mod, reduce_i128, sub_mod};
use super::context::CkksContext;
use super::poly::RingPoly;
use crate::{Error, Result};

/// Powers of `ζ = exp(2πi/2N)` and the slot index group `5^j mod 2N`.
#[derive(Debug, Clone)]
pub struct EmbeddingTables {
    pub n: usize,
    pub rot_group: Vec<usize>,
    pub ksi: Vec<Complex64>,
}

impl EmbeddingTables {
    pub fn new(n: usize) -> Self {
        let m = 2 * n;
        let slots = n / 2;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            rot_group.push(g);
            g = (g * 5) % m;
        }
        let ksi = (0..=m)
            .map(|k| {
                let a = 2.0 * core::f64::consts::PI * k as f64 / m as f64;
                Complex64::new(libm::cos(a), libm::sin(a))
            })
            .collect();
        EmbeddingTables { n, rot_group, ksi }
    }

    /// Twiddle index used by the butterflies at stage `len`, position `j`.
    #[inline]
    pub fn twiddle_index(&self, len: usize, j: usize, inverse: bool) -> usize {
        let m = 2 * self.n;
        let lenq = len << 2;
        let r = self.rot_group[j] % lenq;
        if inverse {
            (lenq - r) * m / lenq
        } else {
            r * m / lenq
        }
    }

    /// Coefficient-side values to slots (in place, length `N/2`).
    pub fn special_fft(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        bit_reverse_permute(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len >> 1;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let w = self.ksi[self.twiddle_index(len, j, false)];
                    let u = vals[i + j];
                    let v = vals[i + j + lenh] * w;
                    vals[i + j] = u + v;
                    vals[i + j + lenh] = u - v;
                }
            }
            len <<= 1;
        }
    }

    /// Slots to coefficient-side values (in place, length `N/2`).
    pub fn special_ifft(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let mut len = size;
        while len >= 2 {
            let lenh = len >> 1;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let w = self.ksi[self.twiddle_index(len, j, true)];
                    let u = vals[i + j] + vals[i + j + lenh];
                    let v = (vals[i + j] - vals[i + j + lenh]) * w;
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            len >>= 1;
        }
        bit_reverse_permute(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }
}

pub fn bit_reverse_permute<T>(vals: &mut [T]) {
    let n = vals.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let r = bit_reverse(i, bits);
        if i < r {
            vals.swap(i, r);
        }
    }
}

/// Real slot vector to integer coefficients `⌊Δ·π⁻¹(m)⌉`.
pub fn encode_coeffs(tables: &EmbeddingTables, m: &[f64], scale: f64) -> Result<Vec<i128>> {
    let slots = tables.n / 2;
    if m.len() > slots {
        return Err(Error::Capacity(format!("{} values exceed {} slots", m.len(), slots)));
    }
    let mut u: Vec<Complex64> = (0..slots).map(|i| Complex64::new(m.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    tables.special_ifft(&mut u);
    let mut coeffs = vec![0i128; tables.n];
    for (i, v) in u.iter().enumerate() {
        coeffs[i] = to_int(v.re * scale)?;
        coeffs[i + slots] = to_int(v.im * scale)?;
    }
    Ok(coeffs)
}

fn to_int(x: f64) -> Result<i128> {
    // round half to even, matching the decode convention
    let r = libm::rint(x);
    if !r.is_finite() || libm::fabs(r) >= 1.7e38 {
        return Err(Error::EncodingOverflow(format!("coefficient {x:e} out of range")));
    }
    Ok(r as i128)
}

/// Integer coefficients back to real slots, dividing by `scale`.
pub fn decode_coeffs(tables: &EmbeddingTables, coeffs: &[f64], scale: f64) -> Vec<f64> {
    let slots = tables.n / 2;
    let mut u: Vec<Complex64> =
        (0..slots).map(|i| Complex64::new(coeffs[i] / scale, coeffs[i + slots] / scale)).collect();
    tables.special_fft(&mut u);
    u.into_iter().map(|c| c.re).collect()
}

impl CkksContext {
    pub fn embedding(&self) -> EmbeddingTables {
        EmbeddingTables::new(self.n())
    }

    /// Encode real slots at `scale` into a plaintext polynomial at `level`.
    pub fn encode_at(&self, tables: &EmbeddingTables, m: &[f64], scale: f64, level: usize) -> Result<RingPoly> {
        let coeffs = encode_coeffs(tables, m, scale)?;
        let bound = libm::exp2(self.active_bits(level) as f64 - 2.0);
        if let Some(c) = coeffs.iter().find(|c| (c.unsigned_abs() as f64) >= bound) {
            return Err(Error::EncodingOverflow(format!("coefficient {c} exceeds the level-{level} modulus")));
        }
        Ok(self.poly_from_signed(&coeffs, level))
    }

    /// Encode at the top level with scale `2^scale_bits`.
    pub fn encode(&self, m: &[f64], scale_bits: u32) -> Result<RingPoly> {
        self.encode_at(&self.embedding(), m, libm::exp2(scale_bits as f64), self.max_level())
    }

    /// Centered integer value of every coefficient, as `f64`.
    pub fn centered_coeffs(&self, p: &RingPoly) -> Vec<f64> {
        let mut c = p.clone();
        self.to_coeff(&mut c);
        let primes = self.primes(c.level);
        let n = self.n();
        if c.level == 0 {
            return c.residues[0].iter().map(|&v| center(v, primes[0]) as f64).collect();
        }
        // balanced mixed-radix (Garner) digits give the centered representative
        let l = c.level;
        let mut radix_f = vec![1.0f64; l + 1];
        for i in 1..=l {
            radix_f[i] = radix_f[i - 1] * primes[i - 1] as f64;
        }
        // inv[i][j] = q_j^-1 mod q_i for j < i
        let inv: Vec<Vec<u64>> = (0..=l).map(|i| (0..i).map(|j| inv_mod(primes[j] % primes[i], primes[i])).collect()).collect();
        let mut out = Vec::with_capacity(n);
        let mut digits = vec![0i64; l + 1];
        for x in 0..n {
            for i in 0..=l {
                let qi = primes[i];
                let mut v = c.residues[i][x];
                for j in 0..i {
                    v = sub_mod(v, reduce_i128(digits[j] as i128, qi), qi);
                    v = mul_mod(v, inv[i][j], qi);
                }
                digits[i] = center(v, qi);
            }
            let mut val = 0.0;
            for i in (0..=l).rev() {
                val += digits[i] as f64 * radix_f[i];
            }
            out.push(val);
        }
        out
    }

    /// Decode a plaintext polynomial at `scale`.
    pub fn decode_at(&self, tables: &EmbeddingTables, p: &RingPoly, scale: f64) -> Vec<f64> {
        decode_coeffs(tables, &self.centered_coeffs(p), scale)
    }

    pub fn decode(&self, p: &RingPoly, scale_bits: u32) -> Vec<f64> {
        self.decode_at(&self.embedding(), p, libm::exp2(scale_bits as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring_ckks::params::CkksParams;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fft_pair_inverts() {
        let t = EmbeddingTables::new(64);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let orig: Vec<Complex64> = (0..32).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let mut v = orig.clone();
        t.special_ifft(&mut v);
        t.special_fft(&mut v);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn special_fft_is_the_embedding_on_powers_of_five() {
        let n = 32;
        let t = EmbeddingTables::new(n);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
        let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let got = decode_coeffs(&t, &coeffs, 1.0);
        for j in 0..n / 2 {
            let e = t.rot_group[j];
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, c) in coeffs.iter().enumerate() {
                acc += t.ksi[(k * e) % (2 * n)] * *c;
            }
            assert!((acc.re - got[j]).abs() < 1e-9, "slot {j}");
        }
    }

    #[test]
    fn constants_encode_to_constant_polynomials() {
        let params = CkksParams::from_widths(16, &[50], 20, 3.2).unwrap();
        let ctx = CkksContext::new(params).unwrap();
        let zero = ctx.encode(&[0.0; 8], 20).unwrap();
        assert!(zero.residues.iter().all(|r| r.iter().all(|&x| x == 0)));
        let mut ones = ctx.encode(&[1.0; 8], 20).unwrap();
        ctx.to_coeff(&mut ones);
        assert_eq!(ones.residues[0][0], 1 << 20);
        assert!(ones.residues[0][1..].iter().all(|&x| x == 0));
        assert_eq!(ctx.decode(&ones, 20), vec![1.0; 8]);
        assert_eq!(ctx.decode(&zero, 20), vec![0.0; 8]);
    }

    #[test]
    fn oversized_message_is_an_encoding_overflow() {
        let params = CkksParams::from_widths(16, &[30], 20, 3.2).unwrap();
        let ctx = CkksContext::new(params).unwrap();
        assert!(matches!(ctx.encode(&[1e6; 8], 20), Err(Error::EncodingOverflow(_))));
    }

    #[test]
    fn multi_prime_centering_recovers_negative_values() {
        let params = CkksParams::from_widths(16, &[40, 40, 40], 20, 3.2).unwrap();
        let ctx = CkksContext::new(params).unwrap();
        let vals: Vec<i128> = (0..16).map(|i| (i as i128 - 8) * 123_456_789_012_345).collect();
        let p = ctx.poly_from_signed(&vals, 2);
        let got = ctx.centered_coeffs(&p);
        for (g, v) in got.iter().zip(&vals) {
            assert_eq!(*g, *v as f64);
        }
    }

    #[test]
    fn decode_encode_roundtrip_on_many_vectors() {
        // at N = 8 each slot error is at most the sum of 8 roundings of 1/2
        let n = 8;
        let t = EmbeddingTables::new(n);
        let scale = libm::exp2(30.0);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let m: Vec<f64> = (0..n / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = encode_coeffs(&t, &m, scale).unwrap().into_iter().map(|x| x as f64).collect();
            let back = decode_coeffs(&t, &c, scale);
            for (a, b) in back.iter().zip(&m) {
                assert!((a - b).abs() < 4.0 / scale);
            }
        }
    }

    mod wide {
        //! Fixed-point reference embedding with 160 fractional bits.
        use num_bigint::BigInt;

        pub const FRAC: u32 = 160;

        fn one() -> BigInt {
            BigInt::from(1) << FRAC
        }

        fn atan_inv(k: u32) -> BigInt {
            // atan(1/k) = sum (-1)^i / ((2i+1) k^(2i+1))
            let k = BigInt::from(k);
            let k2 = &k * &k;
            let mut pow = one() / &k;
            let mut acc = BigInt::from(0);
            let mut i = 0u32;
            while pow != BigInt::from(0) {
                let term = &pow / BigInt::from(2 * i + 1);
                if i % 2 == 0 {
                    acc += term;
                } else {
                    acc -= term;
                }
                pow /= &k2;
                i += 1;
            }
            acc
        }

        pub fn pi() -> BigInt {
            atan_inv(5) * 16 - atan_inv(239) * 4
        }

        /// cos(2π r / m) in fixed point.
        pub fn cos_frac(r: u64, m: u64) -> BigInt {
            let x = pi() * BigInt::from(2 * r) / BigInt::from(m);
            let x2 = (&x * &x) >> FRAC;
            let mut term = one();
            let mut acc = one();
            let mut i = 1u64;
            loop {
                term = -((&term * &x2) >> FRAC) / BigInt::from((2 * i - 1) * (2 * i));
                if term == BigInt::from(0) {
                    break;
                }
                acc += &term;
                i += 1;
            }
            acc
        }
    }

    #[test]
    fn encoding_matches_a_wide_precision_embedding() {
        use num_bigint::BigInt;
        let n = 32usize;
        let s = 30u32;
        let scale = libm::exp2(s as f64);
        let t = EmbeddingTables::new(n);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let m: Vec<f64> = (0..n / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coeffs = encode_coeffs(&t, &m, scale).unwrap();
        let cos: Vec<BigInt> = (0..2 * n as u64).map(|r| wide::cos_frac(r, 2 * n as u64)).collect();
        let ours = decode_coeffs(&t, &coeffs.iter().map(|&c| c as f64).collect::<Vec<_>>(), scale);
        for j in 0..n / 2 {
            let e = t.rot_group[j];
            let mut acc = BigInt::from(0);
            for (k, &c) in coeffs.iter().enumerate() {
                acc += &cos[(k * e) % (2 * n)] * BigInt::from(c);
            }
            // keep 60 fractional bits, then divide by the scale
            let v: i128 = (acc >> (wide::FRAC - 60)).try_into().unwrap();
            let slot = v as f64 / libm::exp2(60.0) / scale;
            assert!((slot - m[j]).abs() < libm::exp2(-(s as f64) + 2.0), "slot {j}");
            assert!((slot - ours[j]).abs() < 1e-12, "slot {j}");
        }
    }
}
