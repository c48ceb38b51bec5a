//! Moving values between CKKS ciphertexts and two-party ring shares.
//!
//! Party 0 holds the secret key; party 1 holds ciphertexts and evaluation
//! keys. Both conversions run the slot transform locally on shares, so no
//! party ever sees a decoded value.

pub mod fxfft;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mpc::{Modulus, Mpc, ShareVec, Shared};
use crate::ring_ckks::arith::{center, reduce_i128};
use crate::ring_ckks::{CkksCipher, CkksContext, EmbeddingTables, Encryptor, Evaluator, Plaintext, RingPoly};
use crate::{Error, Result};
use fxfft::{mul_real, FxTables};

/// Width of the ring in which the local transforms run.
pub const WORK_BITS: u32 = 128;

/// How the evaluator masks a ciphertext before handing it over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Coefficients uniform over `Z_q`.
    SecureUniform,
    /// `Encode(Δ⁻¹·r)` for uniform slot values `r`; analysis only.
    Mp2mlEncoded,
}

/// Ring width `l` and fixed-point scale `s` of the shares on the MPC side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub ring_bits: u32,
    pub frac_bits: u32,
}

/// A mask polynomial (coefficient form) at `level`.
pub fn sample_mask<R: Rng>(ctx: &CkksContext, emb: &EmbeddingTables, level: usize, mode: MaskMode, rng: &mut R) -> RingPoly {
    let primes = ctx.primes(level);
    let n = ctx.n();
    match mode {
        MaskMode::SecureUniform => RingPoly {
            level,
            residues: primes.iter().map(|&p| (0..n).map(|_| rng.random_range(0..p)).collect()).collect(),
            ntt: false,
        },
        MaskMode::Mp2mlEncoded => {
            // r is drawn over the level's first prime, centered
            let q = primes[0] as i128;
            let mut u: Vec<Complex64> =
                (0..n / 2).map(|_| Complex64::new((rng.random_range(0..q) - q / 2) as f64, 0.0)).collect();
            emb.special_ifft(&mut u);
            let mut coeffs = vec![0i128; n];
            for (i, v) in u.iter().enumerate() {
                coeffs[i] = libm::rint(v.re) as i128;
                coeffs[i + n / 2] = libm::rint(v.im) as i128;
            }
            RingPoly {
                level,
                residues: primes.iter().map(|&p| coeffs.iter().map(|&c| reduce_i128(c, p)).collect()).collect(),
                ntt: false,
            }
        }
    }
}

fn add_mask(ctx: &CkksContext, ct: &CkksCipher, mask: &RingPoly) -> CkksCipher {
    let mut m = mask.clone();
    ctx.to_ntt(&mut m);
    let mut out = ct.clone();
    out.c0.add_assign(&m, ctx.primes(ct.level()));
    out
}

fn decrypt_coeffs(p0: &Encryptor, ct: &CkksCipher) -> RingPoly {
    let mut m = p0.decrypt(ct);
    p0.ctx.to_coeff(&mut m);
    m
}

/// Steps 1–3 of the CKKS-to-MPC direction: party 1 drops `ct` to level 0,
/// masks it and sends it; party 0 decrypts. Returns field shares of the
/// integer coefficients `Δ·π⁻¹(x)` over `Z_{q0}`.
pub fn masked_decryption<R: Rng>(
    mpc: &mut Mpc,
    p1: &mut Evaluator,
    p0: &Encryptor,
    ct: &CkksCipher,
    rng: &mut R,
) -> Result<Shared> {
    let ctx = p1.ctx.clone();
    let low = p1.drop_to_level(ct, 0)?;
    let mask = sample_mask(&ctx, &p1.emb, 0, MaskMode::SecureUniform, rng);
    let masked = add_mask(&ctx, &low, &mask);
    let bytes = p1.record_send(&masked);
    mpc.channel.transfer(1, bytes);
    mpc.channel.add_rounds(1);
    let dec = decrypt_coeffs(p0, &masked);
    let q = ctx.chain[0];
    let f = Modulus::field(q as u128)?;
    let a = dec.residues[0].iter().map(|&v| v as u128).collect();
    let b = mask.residues[0].iter().map(|&r| f.neg(r as u128)).collect();
    Ok((ShareVec { values: a, modulus: f, scale: 0, party: 0 }, ShareVec { values: b, modulus: f, scale: 0, party: 1 }))
}

/// Ciphertext held by party 1 to shares of its `N/2` slots over `Z_{2^l}`
/// at scale `s`.
pub fn ckks_to_mpc<R: Rng>(
    mpc: &mut Mpc,
    p1: &mut Evaluator,
    p0: &Encryptor,
    ct: &CkksCipher,
    cfg: &BridgeConfig,
    rng: &mut R,
) -> Result<Shared> {
    let field = masked_decryption(mpc, p1, p0, ct, rng)?;
    let wide = mpc.field_to_ring(&field, WORK_BITS)?;
    let n = p1.ctx.n();
    let fx = FxTables::new(&p1.emb);
    let c = libm::exp2(cfg.frac_bits as f64) / ct.scale;
    let mut out: [Vec<u128>; 2] = [Vec::new(), Vec::new()];
    for (party, sh) in [(0u8, &wide.0), (1u8, &wide.1)] {
        let mut re = sh.values[..n / 2].to_vec();
        let mut im = sh.values[n / 2..].to_vec();
        fx.fft(party, &mut re, &mut im);
        mul_real(party, &mut re, c);
        out[party as usize] = re;
    }
    if mpc.test_mode {
        let half = 1u128 << (cfg.ring_bits - 1);
        for (a, b) in out[0].iter().zip(&out[1]) {
            let v = a.wrapping_add(*b) as i128;
            if v.unsigned_abs() >= half {
                return Err(Error::Range(format!("decoded value {v} exceeds 2^{}", cfg.ring_bits - 1)));
            }
        }
    }
    let r = Modulus::ring(cfg.ring_bits)?;
    let [a, b] = out;
    let mk = |v: Vec<u128>, party| ShareVec {
        values: v.into_iter().map(|x| r.reduce(x)).collect(),
        modulus: r,
        scale: cfg.frac_bits,
        party,
    };
    Ok((mk(a, 0), mk(b, 1)))
}

/// Shares of up to `N/2` slot values to a ciphertext held by party 1 at
/// `level`, with that level's canonical scale.
pub fn mpc_to_ckks(
    mpc: &mut Mpc,
    p1: &mut Evaluator,
    p0: &mut Encryptor,
    x: &Shared,
    level: usize,
) -> Result<CkksCipher> {
    let ctx = p1.ctx.clone();
    let n = ctx.n();
    let slots = n / 2;
    if x.0.len() > slots {
        return Err(Error::Capacity(format!("{} values exceed {slots} slots", x.0.len())));
    }
    if level > ctx.max_level() {
        return Err(Error::Level(format!("level {level} above {}", ctx.max_level())));
    }
    let s = x.0.scale;
    let delta = ctx.level_scale(level);
    // pre-shift so the transform runs a few bits finer than one coefficient unit
    let pre = (libm::ceil(libm::log2(delta / (libm::exp2(s as f64) * slots as f64))) as i32 + 8).max(0) as u32;
    let c = delta / (libm::exp2((s + pre) as f64) * slots as f64);
    let wide = mpc.extend(x, WORK_BITS)?;
    let fx = FxTables::new(&p1.emb);
    let mut coeffs: [Vec<u128>; 2] = [Vec::new(), Vec::new()];
    for (party, sh) in [(0u8, &wide.0), (1u8, &wide.1)] {
        let mut re = vec![0u128; slots];
        for (d, v) in re.iter_mut().zip(&sh.values) {
            *d = v.wrapping_shl(pre);
        }
        let mut im = vec![0u128; slots];
        fx.ifft_unscaled(party, &mut re, &mut im);
        mul_real(party, &mut re, c);
        mul_real(party, &mut im, c);
        re.extend_from_slice(&im);
        coeffs[party as usize] = re;
    }
    let [a, b] = coeffs;
    let wide = (
        ShareVec { values: a, modulus: Modulus::Ring(WORK_BITS), scale: 0, party: 0 },
        ShareVec { values: b, modulus: Modulus::Ring(WORK_BITS), scale: 0, party: 1 },
    );
    // a coefficient that is zero in both transforms would not wrap
    let wide = mpc.rerandomize(&wide);
    let primes = ctx.primes(level);
    let mut r0 = RingPoly::zero(n, level, false);
    let mut r1 = RingPoly::zero(n, level, false);
    for (i, &q) in primes.iter().enumerate() {
        let f = crate::mpc::ring_to_field_local(&wide, q as u128)?;
        r0.residues[i] = f.0.values.iter().map(|&v| v as u64).collect();
        r1.residues[i] = f.1.values.iter().map(|&v| v as u64).collect();
    }
    ctx.to_ntt(&mut r0);
    ctx.to_ntt(&mut r1);
    let ct0 = p0.encrypt(&Plaintext { poly: r0, scale: delta })?;
    mpc.channel.transfer(0, ct0.byte_size(&ctx));
    mpc.channel.add_rounds(1);
    p1.add_plain(&ct0, &Plaintext { poly: r1, scale: delta })
}

/// Outputs of the insecure masking demonstration.
#[derive(Debug, Clone)]
pub struct MaskDemo {
    pub mask: RingPoly,
    pub masked: RingPoly,
}

/// Mask `ct` the way MP2ML does and decrypt it, returning both the mask
/// and what party 0 would see. Refused unless `analysis` is set.
pub fn mp2ml_mask_demo<R: Rng>(p0: &Encryptor, ct: &CkksCipher, emb: &EmbeddingTables, analysis: bool, rng: &mut R) -> Result<MaskDemo> {
    if !analysis {
        return Err(Error::MaskMode(String::from("MP2ML masking is only available in analysis mode")));
    }
    let ctx = &p0.ctx;
    let mask = sample_mask(ctx, emb, ct.level(), MaskMode::Mp2mlEncoded, rng);
    let masked = decrypt_coeffs(p0, &add_mask(ctx, ct, &mask));
    Ok(MaskDemo { mask, masked })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: i64,
    pub hi: i64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHistogram {
    pub bins: Vec<HistBin>,
    pub inside_fraction: f64,
    pub n: usize,
    pub logq: f64,
    pub mode: String,
}

/// Histogram of centered coefficients (first residue) over `[−q/2, q/2)`,
/// plus the fraction inside `[−q/(8√N), q/(8√N)]`.
pub fn mask_histogram(polys: &[RingPoly], q: u64, bins: usize) -> MaskHistogram {
    let n = polys.first().map_or(0, |p| p.n());
    let logq = libm::log2(q as f64);
    if polys.is_empty() || bins == 0 {
        return MaskHistogram { bins: Vec::new(), inside_fraction: 0.0, n, logq, mode: String::new() };
    }
    let lo0 = -((q / 2) as i64);
    let width = q.div_ceil(bins as u64) as i64;
    let mut counts = vec![0u64; bins];
    let bound = q as f64 / (8.0 * libm::sqrt(n as f64));
    let mut inside = 0u64;
    let mut total = 0u64;
    for p in polys {
        for &v in &p.residues[0] {
            let c = center(v, q);
            let b = (((c - lo0) / width) as usize).min(bins - 1);
            counts[b] += 1;
            inside += (libm::fabs(c as f64) <= bound) as u64;
            total += 1;
        }
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin { lo: lo0 + i as i64 * width, hi: lo0 + (i as i64 + 1) * width, count })
        .collect();
    MaskHistogram { bins, inside_fraction: inside as f64 / total as f64, n, logq, mode: String::new() }
}

/// `z`-score of the sample mean against a zero-mean distribution with
/// standard deviation `sigma`.
pub fn mean_shift_z(samples: &[f64], sigma: f64) -> f64 {
    let m = samples.iter().sum::<f64>() / samples.len() as f64;
    m / (sigma / libm::sqrt(samples.len() as f64))
}
