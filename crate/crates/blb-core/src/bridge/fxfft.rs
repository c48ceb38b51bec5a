//! The slot transform run locally by each party on its shares over
//! `Z_{2^128}`. Public real constants are split into three 20-bit digits;
//! every digit product is followed by a local truncation.

use alloc::vec::Vec;

use crate::ring_ckks::encoding::{bit_reverse_permute, EmbeddingTables};

pub const DIGIT_BITS: u32 = 20;
const DIGITS: usize = 3;
const MASK: i128 = (1 << DIGIT_BITS) - 1;

/// A real constant with `|c| ≤ 1` at `60` fractional bits, in digits.
#[derive(Debug, Clone, Copy)]
pub struct FxConst {
    d: [i128; DIGITS],
}

impl FxConst {
    pub fn new(c: f64) -> Self {
        let v = libm::rint(c * libm::exp2((DIGIT_BITS * DIGITS as u32) as f64)) as i128;
        FxConst { d: [v >> (2 * DIGIT_BITS), (v >> DIGIT_BITS) & MASK, v & MASK] }
    }
}

/// Local probabilistic truncation inside the same ring.
#[inline]
pub fn trunc(v: u128, k: u32, party: u8) -> u128 {
    if party == 0 {
        v >> k
    } else {
        (v.wrapping_neg() >> k).wrapping_neg()
    }
}

/// `Σ_t v_t·c_t` in fixed point; one truncation per digit.
#[inline]
pub fn lin(party: u8, terms: &[(u128, FxConst)]) -> u128 {
    let mut out = 0u128;
    for d in 0..DIGITS {
        let mut acc = 0u128;
        for (v, c) in terms {
            acc = acc.wrapping_add(v.wrapping_mul(c.d[d] as u128));
        }
        out = out.wrapping_add(trunc(acc, DIGIT_BITS * (d as u32 + 1), party));
    }
    out
}

/// Multiply by any real constant: digits for the mantissa, an exact shift
/// for the exponent.
pub fn mul_real(party: u8, v: &mut [u128], c: f64) {
    let e = if libm::fabs(c) > 1.0 { libm::ceil(libm::log2(libm::fabs(c))) as u32 } else { 0 };
    let fc = FxConst::new(c / libm::exp2(e as f64));
    for x in v.iter_mut() {
        *x = lin(party, &[(*x, fc)]).wrapping_shl(e);
    }
}

/// Twiddle constants `(cos, sin)` for every entry of the root table.
pub struct FxTables<'a> {
    emb: &'a EmbeddingTables,
    ksi: Vec<(FxConst, FxConst)>,
}

impl<'a> FxTables<'a> {
    pub fn new(emb: &'a EmbeddingTables) -> Self {
        FxTables { emb, ksi: emb.ksi.iter().map(|z| (FxConst::new(z.re), FxConst::new(z.im))).collect() }
    }

    /// `(a + ib)·(wr + i·wi)` on shares.
    #[inline]
    fn cmul(&self, party: u8, a: u128, b: u128, k: usize) -> (u128, u128) {
        let (wr, wi) = self.ksi[k];
        (lin(party, &[(a, wr), (b.wrapping_neg(), wi)]), lin(party, &[(a, wi), (b, wr)]))
    }

    /// Coefficient side to slots, mirroring the floating-point decoder.
    pub fn fft(&self, party: u8, re: &mut [u128], im: &mut [u128]) {
        let size = re.len();
        bit_reverse_permute(re);
        bit_reverse_permute(im);
        let mut len = 2;
        while len <= size {
            let h = len >> 1;
            for i in (0..size).step_by(len) {
                for j in 0..h {
                    let k = self.emb.twiddle_index(len, j, false);
                    let (vr, vi) = self.cmul(party, re[i + j + h], im[i + j + h], k);
                    let (ur, ui) = (re[i + j], im[i + j]);
                    re[i + j] = ur.wrapping_add(vr);
                    im[i + j] = ui.wrapping_add(vi);
                    re[i + j + h] = ur.wrapping_sub(vr);
                    im[i + j + h] = ui.wrapping_sub(vi);
                }
            }
            len <<= 1;
        }
    }

    /// Slots to coefficient side without the `1/size` normalization.
    pub fn ifft_unscaled(&self, party: u8, re: &mut [u128], im: &mut [u128]) {
        let size = re.len();
        let mut len = size;
        while len >= 2 {
            let h = len >> 1;
            for i in (0..size).step_by(len) {
                for j in 0..h {
                    let k = self.emb.twiddle_index(len, j, true);
                    let (xr, xi) = (re[i + j], im[i + j]);
                    let (yr, yi) = (re[i + j + h], im[i + j + h]);
                    re[i + j] = xr.wrapping_add(yr);
                    im[i + j] = xi.wrapping_add(yi);
                    let (vr, vi) = self.cmul(party, xr.wrapping_sub(yr), xi.wrapping_sub(yi), k);
                    re[i + j + h] = vr;
                    im[i + j + h] = vi;
                }
            }
            len >>= 1;
        }
        bit_reverse_permute(re);
        bit_reverse_permute(im);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring_ckks::encoding::{decode_coeffs, encode_coeffs};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn split(v: &[i128], rng: &mut ChaCha20Rng) -> (Vec<u128>, Vec<u128>) {
        let a: Vec<u128> = v.iter().map(|_| rng.random()).collect();
        let b = v.iter().zip(&a).map(|(&x, &r)| (x as u128).wrapping_sub(r)).collect();
        (a, b)
    }

    fn join(a: &[u128], b: &[u128]) -> Vec<i128> {
        a.iter().zip(b).map(|(&x, &y)| x.wrapping_add(y) as i128).collect()
    }

    #[test]
    fn constants_reassemble() {
        for c in [0.0, 1.0, -1.0, 0.7071067811865476, -0.3, 1e-9] {
            let f = FxConst::new(c);
            let v = (f.d[0] << 40) + (f.d[1] << 20) + f.d[2];
            assert_eq!(v, libm::rint(c * libm::exp2(60.0)) as i128);
        }
    }

    #[test]
    fn shared_transform_matches_the_float_decoder() {
        let n = 64;
        let emb = EmbeddingTables::new(n);
        let fx = FxTables::new(&emb);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let delta = libm::exp2(40.0);
        let x: Vec<f64> = (0..n / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coeffs = encode_coeffs(&emb, &x, delta).unwrap();
        let want = decode_coeffs(&emb, &coeffs.iter().map(|&c| c as f64).collect::<Vec<_>>(), delta);
        let (a, b) = split(&coeffs, &mut rng);
        let s = 30u32;
        let mut out = [Vec::new(), Vec::new()];
        for (p, sh) in [(0u8, &a), (1u8, &b)] {
            let mut re = sh[..n / 2].to_vec();
            let mut im = sh[n / 2..].to_vec();
            fx.fft(p, &mut re, &mut im);
            mul_real(p, &mut re, libm::exp2(s as f64) / delta);
            out[p as usize] = re;
        }
        for (g, w) in join(&out[0], &out[1]).iter().zip(&want) {
            assert!((*g as f64 / libm::exp2(s as f64) - w).abs() < libm::exp2(-(s as f64) + 3.0), "{g} {w}");
        }
    }

    #[test]
    fn shared_inverse_matches_the_float_encoder() {
        let n = 64;
        let emb = EmbeddingTables::new(n);
        let fx = FxTables::new(&emb);
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let s = 30u32;
        let x: Vec<f64> = (0..n / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fixed: Vec<i128> = x.iter().map(|&v| libm::rint(v * libm::exp2(s as f64)) as i128).collect();
        let mut u: Vec<Complex64> = fixed.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        emb.special_ifft(&mut u);
        let (a, b) = split(&fixed, &mut rng);
        let mut out = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
        for (p, sh) in [(0u8, &a), (1u8, &b)] {
            let mut re = sh.clone();
            let mut im = alloc::vec![0u128; n / 2];
            fx.ifft_unscaled(p, &mut re, &mut im);
            mul_real(p, &mut re, 1.0 / (n / 2) as f64);
            mul_real(p, &mut im, 1.0 / (n / 2) as f64);
            out[p as usize] = (re, im);
        }
        let re = join(&out[0].0, &out[1].0);
        let im = join(&out[0].1, &out[1].1);
        for i in 0..n / 2 {
            assert!((re[i] as f64 - u[i].re).abs() < 4.0 && (im[i] as f64 - u[i].im).abs() < 4.0);
        }
    }
}
