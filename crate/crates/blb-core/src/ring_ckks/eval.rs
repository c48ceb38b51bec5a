use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::context::{sample_gaussian, sample_ternary, CkksContext, EvalKeys, SecretKey};
use super::encoding::EmbeddingTables;
use super::poly::RingPoly;
use crate::{Error, Result};

/// A ciphertext `(c0, c1)` with `c0 + c1·s ≈ Δ·m`; `scale` is `Δ` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CkksCipher {
    pub c0: RingPoly,
    pub c1: RingPoly,
    pub scale: f64,
}

impl CkksCipher {
    pub fn level(&self) -> usize {
        self.c0.level
    }

    pub fn scale_bits(&self) -> f64 {
        libm::log2(self.scale)
    }

    /// Serialized size: two polynomials over the active primes.
    pub fn byte_size(&self, ctx: &CkksContext) -> u64 {
        2 * ctx.n() as u64 * ctx.active_bits(self.level()) as u64 / 8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plaintext {
    pub poly: RingPoly,
    pub scale: f64,
}

/// Operation tallies of one party.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub rotations: u64,
    pub ct_ct_mults: u64,
    pub ct_pt_mults: u64,
    pub rescales: u64,
    #[serde(rename = "bytes")]
    pub ciphertext_bytes_sent: u64,
}

impl OpCounters {
    pub fn since(&self, earlier: &OpCounters) -> OpCounters {
        OpCounters {
            rotations: self.rotations - earlier.rotations,
            ct_ct_mults: self.ct_ct_mults - earlier.ct_ct_mults,
            ct_pt_mults: self.ct_pt_mults - earlier.ct_pt_mults,
            rescales: self.rescales - earlier.rescales,
            ciphertext_bytes_sent: self.ciphertext_bytes_sent - earlier.ciphertext_bytes_sent,
        }
    }

    pub fn merge(&mut self, o: &OpCounters) {
        self.rotations += o.rotations;
        self.ct_ct_mults += o.ct_ct_mults;
        self.ct_pt_mults += o.ct_pt_mults;
        self.rescales += o.rescales;
        self.ciphertext_bytes_sent += o.ciphertext_bytes_sent;
    }
}

/// Scales within a factor of two of each other may be added.
pub fn scales_compatible(a: f64, b: f64) -> bool {
    libm::fabs(libm::log2(a) - libm::log2(b)) <= 1.0
}

/// Secret-key holder: encryption and decryption.
pub struct Encryptor {
    pub ctx: Arc<CkksContext>,
    sk: SecretKey,
    rng: ChaCha20Rng,
}

impl Encryptor {
    pub fn new(ctx: Arc<CkksContext>, sk: SecretKey, rng: ChaCha20Rng) -> Self {
        Encryptor { ctx, sk, rng }
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.sk
    }

    /// Symmetric RLWE encryption: `(−a·s + e + m, a)`.
    pub fn encrypt(&mut self, pt: &Plaintext) -> Result<CkksCipher> {
        let ctx = &self.ctx;
        let level = pt.poly.level;
        if level > ctx.max_level() || pt.poly.n() != ctx.n() {
            return Err(Error::Level(format!("plaintext level {level} outside the context")));
        }
        let primes = ctx.primes(level);
        let a = RingPoly {
            level,
            residues: primes.iter().map(|&p| (0..ctx.n()).map(|_| self.rng.random_range(0..p)).collect()).collect(),
            ntt: true,
        };
        let e = ctx.poly_from_signed(&sample_gaussian(ctx.n(), ctx.params.noise_stddev, &mut self.rng), level);
        let mut c0 = a.mul(&self.sk.at_level(level), primes);
        c0.neg_assign(primes);
        c0.add_assign(&e, primes);
        let mut m = pt.poly.clone();
        ctx.to_ntt(&mut m);
        c0.add_assign(&m, primes);
        Ok(CkksCipher { c0, c1: a, scale: pt.scale })
    }

    /// Public-key encryption `(v·b + e0 + m, v·a + e1)`.
    pub fn encrypt_public(&mut self, keys: &EvalKeys, pt: &Plaintext) -> Result<CkksCipher> {
        encrypt_public(&self.ctx, keys, pt, &mut self.rng)
    }

    pub fn decrypt(&self, ct: &CkksCipher) -> RingPoly {
        let primes = self.ctx.primes(ct.level());
        let mut m = ct.c1.mul(&self.sk.at_level(ct.level()), primes);
        m.add_assign(&ct.c0, primes);
        m
    }

    pub fn decrypt_decode(&self, emb: &EmbeddingTables, ct: &CkksCipher) -> Vec<f64> {
        self.ctx.decode_at(emb, &self.decrypt(ct), ct.scale)
    }
}

pub fn encrypt_public(ctx: &CkksContext, keys: &EvalKeys, pt: &Plaintext, rng: &mut ChaCha20Rng) -> Result<CkksCipher> {
    let level = pt.poly.level;
    if level > ctx.max_level() {
        return Err(Error::Level(format!("plaintext level {level} outside the context")));
    }
    let primes = ctx.primes(level);
    let n = ctx.n();
    let v: Vec<i128> = sample_ternary(n, rng).into_iter().map(|x| x as i128).collect();
    let v = ctx.poly_from_signed(&v, level);
    let e0 = ctx.poly_from_signed(&sample_gaussian(n, ctx.params.noise_stddev, rng), level);
    let e1 = ctx.poly_from_signed(&sample_gaussian(n, ctx.params.noise_stddev, rng), level);
    let mut b = keys.public.b.clone();
    b.drop_to(level);
    let mut a = keys.public.a.clone();
    a.drop_to(level);
    let mut c0 = v.mul(&b, primes);
    c0.add_assign(&e0, primes);
    let mut m = pt.poly.clone();
    ctx.to_ntt(&mut m);
    c0.add_assign(&m, primes);
    let mut c1 = v.mul(&a, primes);
    c1.add_assign(&e1, primes);
    Ok(CkksCipher { c0, c1, scale: pt.scale })
}

/// Homomorphic evaluation with evaluation keys only; tallies its own work.
#[derive(Clone)]
pub struct Evaluator {
    pub ctx: Arc<CkksContext>,
    pub keys: Arc<EvalKeys>,
    pub emb: Arc<EmbeddingTables>,
    pub counters: OpCounters,
}

impl Evaluator {
    pub fn new(ctx: Arc<CkksContext>, keys: Arc<EvalKeys>) -> Self {
        let emb = Arc::new(ctx.embedding());
        Evaluator { ctx, keys, emb, counters: OpCounters::default() }
    }

    pub fn encode(&self, values: &[f64], scale: f64, level: usize) -> Result<Plaintext> {
        Ok(Plaintext { poly: self.ctx.encode_at(&self.emb, values, scale, level)?, scale })
    }

    fn check_add(&self, a: &CkksCipher, level: usize, scale: f64) -> Result<()> {
        if a.level() != level {
            return Err(Error::Level(format!("operand levels differ: {} vs {}", a.level(), level)));
        }
        if !scales_compatible(a.scale, scale) {
            return Err(Error::Scale(a.scale_bits(), libm::log2(scale)));
        }
        Ok(())
    }

    pub fn add(&self, a: &CkksCipher, b: &CkksCipher) -> Result<CkksCipher> {
        self.check_add(a, b.level(), b.scale)?;
        let primes = self.ctx.primes(a.level());
        let mut r = a.clone();
        r.c0.add_assign(&b.c0, primes);
        r.c1.add_assign(&b.c1, primes);
        Ok(r)
    }

    pub fn sub(&self, a: &CkksCipher, b: &CkksCipher) -> Result<CkksCipher> {
        self.check_add(a, b.level(), b.scale)?;
        let primes = self.ctx.primes(a.level());
        let mut r = a.clone();
        r.c0.sub_assign(&b.c0, primes);
        r.c1.sub_assign(&b.c1, primes);
        Ok(r)
    }

    pub fn neg(&self, a: &CkksCipher) -> CkksCipher {
        let primes = self.ctx.primes(a.level());
        let mut r = a.clone();
        r.c0.neg_assign(primes);
        r.c1.neg_assign(primes);
        r
    }

    pub fn add_plain(&self, a: &CkksCipher, pt: &Plaintext) -> Result<CkksCipher> {
        if pt.poly.level < a.level() {
            return Err(Error::Level(format!("plaintext level {} below ciphertext level {}", pt.poly.level, a.level())));
        }
        if !scales_compatible(a.scale, pt.scale) {
            return Err(Error::Scale(a.scale_bits(), libm::log2(pt.scale)));
        }
        let primes = self.ctx.primes(a.level());
        let mut p = pt.poly.clone();
        p.drop_to(a.level());
        let mut r = a.clone();
        r.c0.add_assign(&p, primes);
        Ok(r)
    }

    /// Add `x` to every slot, encoding it exactly at the ciphertext's scale.
    pub fn add_const(&self, a: &CkksCipher, x: f64) -> Result<CkksCipher> {
        let c = libm::rint(x * a.scale);
        let primes = self.ctx.primes(a.level());
        let mut r = a.clone();
        for (i, res) in r.c0.residues.iter_mut().enumerate() {
            let v = super::arith::reduce_i128(c as i128, primes[i]);
            // a constant polynomial is constant in every NTT slot
            for y in res.iter_mut() {
                *y = super::arith::add_mod(*y, v, primes[i]);
            }
        }
        Ok(r)
    }

    /// Multiply by a public integer without consuming a level.
    pub fn mul_int(&self, a: &CkksCipher, k: i64) -> CkksCipher {
        let primes = self.ctx.primes(a.level());
        let c: Vec<u64> = primes.iter().map(|&p| super::arith::reduce_i128(k as i128, p)).collect();
        let mut r = a.clone();
        r.c0.mul_scalar_assign(&c, primes);
        r.c1.mul_scalar_assign(&c, primes);
        r
    }

    fn check_mul_level(&self, level: usize, scale: f64) -> Result<()> {
        if level == 0 {
            return Err(Error::Level("depth budget exhausted at level 0".into()));
        }
        if libm::log2(scale) > self.ctx.active_bits(level) as f64 - 2.0 {
            return Err(Error::Level(format!("scale 2^{:.1} exceeds the level-{level} modulus", libm::log2(scale))));
        }
        Ok(())
    }

    /// Ciphertext product, relinearized; scale multiplies.
    pub fn mul(&mut self, a: &CkksCipher, b: &CkksCipher) -> Result<CkksCipher> {
        if a.level() != b.level() {
            return Err(Error::Level(format!("operand levels differ: {} vs {}", a.level(), b.level())));
        }
        self.check_mul_level(a.level(), a.scale * b.scale)?;
        let ctx = &self.ctx;
        let primes = ctx.primes(a.level());
        let mut d0 = a.c0.mul(&b.c0, primes);
        let mut d1 = a.c0.mul(&b.c1, primes);
        d1.add_assign(&a.c1.mul(&b.c0, primes), primes);
        let d2 = a.c1.mul(&b.c1, primes);
        let (u0, u1) = ctx.key_switch(&d2, &self.keys.relin);
        d0.add_assign(&u0, primes);
        d1.add_assign(&u1, primes);
        self.counters.ct_ct_mults += 1;
        Ok(CkksCipher { c0: d0, c1: d1, scale: a.scale * b.scale })
    }

    pub fn square(&mut self, a: &CkksCipher) -> Result<CkksCipher> {
        self.mul(a, a)
    }

    pub fn mul_plain(&mut self, a: &CkksCipher, pt: &Plaintext) -> Result<CkksCipher> {
        if pt.poly.level < a.level() {
            return Err(Error::Level(format!("plaintext level {} below ciphertext level {}", pt.poly.level, a.level())));
        }
        self.check_mul_level(a.level(), a.scale * pt.scale)?;
        let primes = self.ctx.primes(a.level());
        let mut p = pt.poly.clone();
        p.drop_to(a.level());
        self.ctx.to_ntt(&mut p);
        self.counters.ct_pt_mults += 1;
        Ok(CkksCipher { c0: a.c0.mul(&p, primes), c1: a.c1.mul(&p, primes), scale: a.scale * pt.scale })
    }

    pub fn rescale(&mut self, a: &CkksCipher) -> Result<CkksCipher> {
        let l = a.level();
        if l == 0 {
            return Err(Error::Level("cannot rescale at level 0".into()));
        }
        let q = self.ctx.chain[l] as f64;
        self.counters.rescales += 1;
        Ok(CkksCipher { c0: self.ctx.rescale_poly(&a.c0), c1: self.ctx.rescale_poly(&a.c1), scale: a.scale / q })
    }

    /// Drop primes without dividing; the scale is unchanged.
    pub fn drop_to_level(&self, a: &CkksCipher, level: usize) -> Result<CkksCipher> {
        if level > a.level() {
            return Err(Error::Level(format!("cannot raise level {} to {}", a.level(), level)));
        }
        let mut r = a.clone();
        r.c0.drop_to(level);
        r.c1.drop_to(level);
        Ok(r)
    }

    /// Left rotation of the slot vector by `t` (negative: right).
    pub fn rotate(&mut self, a: &CkksCipher, t: i64) -> Result<CkksCipher> {
        self.counters.rotations += 1;
        let slots = self.ctx.slots() as i64;
        if t.rem_euclid(slots) == 0 {
            return Ok(a.clone());
        }
        let g = self.ctx.galois_element(t);
        let key = self.keys.rotations.get(&g).ok_or(Error::MissingKey(t))?;
        let c0 = self.ctx.automorphism(&a.c0, g);
        let c1 = self.ctx.automorphism(&a.c1, g);
        let (u0, u1) = self.ctx.key_switch(&c1, key);
        let primes = self.ctx.primes(a.level());
        let mut r0 = c0;
        r0.add_assign(&u0, primes);
        Ok(CkksCipher { c0: r0, c1: u1, scale: a.scale })
    }

    /// Tally a ciphertext leaving this party.
    pub fn record_send(&mut self, ct: &CkksCipher) -> u64 {
        let b = ct.byte_size(&self.ctx);
        self.counters.ciphertext_bytes_sent += b;
        b
    }

    pub fn decode_plain(&self, pt: &RingPoly, scale: f64) -> Vec<f64> {
        self.ctx.decode_at(&self.emb, pt, scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring_ckks::context::setup_context;
    use crate::ring_ckks::params::CkksParams;
    use crate::rng::SeedTree;
    use rand::{Rng, SeedableRng};

    const N: usize = 1024;

    fn setup(widths: &[u32], scale_bits: u32, steps: &[i64]) -> (Encryptor, Evaluator) {
        let params = CkksParams::from_widths(N, widths, scale_bits, 3.2).unwrap();
        let (ctx, sk, keys) = setup_context(params, 11, steps).unwrap();
        let enc = Encryptor::new(ctx.clone(), sk, SeedTree::new(11).stream("test/enc"));
        (enc, Evaluator::new(ctx, Arc::new(keys)))
    }

    fn random_slots(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    // error budget per slot for a few noise terms of size σ·√N, at scale Δ
    fn noise_tol(scale: f64) -> f64 {
        64.0 * 3.2 * libm::sqrt(N as f64) / scale
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).fold(0.0, f64::max)
    }

    #[test]
    fn fresh_encryption_decrypts_within_noise() {
        let (mut enc, ev) = setup(&[60, 41], 40, &[]);
        let m = random_slots(N / 2, 1);
        let pt = ev.encode(&m, ev.ctx.default_scale(), 1).unwrap();
        let ct = enc.encrypt(&pt).unwrap();
        assert!(max_err(&enc.decrypt_decode(&ev.emb, &ct), &m) < noise_tol(ct.scale));
        let ct = enc.encrypt_public(&ev.keys, &pt).unwrap();
        assert!(max_err(&enc.decrypt_decode(&ev.emb, &ct), &m) < 4.0 * noise_tol(ct.scale));
    }

    #[test]
    fn four_multiply_rescale_rounds_track_the_product() {
        let (mut enc, mut ev) = setup(&[60, 41, 41, 41, 41], 40, &[]);
        let x = random_slots(N / 2, 2);
        let y = random_slots(N / 2, 3);
        let scale = ev.ctx.default_scale();
        let top = ev.ctx.max_level();
        let mut acc = enc.encrypt(&ev.encode(&x, scale, top).unwrap()).unwrap();
        let cy = enc.encrypt(&ev.encode(&y, scale, top).unwrap()).unwrap();
        let mut want = x.clone();
        for round in 0..4 {
            let b = ev.drop_to_level(&cy, acc.level()).unwrap();
            acc = ev.mul(&acc, &b).unwrap();
            acc = ev.rescale(&acc).unwrap();
            for (w, v) in want.iter_mut().zip(&y) {
                *w *= v;
            }
            let err = max_err(&enc.decrypt_decode(&ev.emb, &acc), &want);
            assert!(err < 1e-7, "round {round}: {err}");
        }
        assert_eq!(acc.level(), 0);
        assert!(matches!(ev.mul(&acc, &acc), Err(Error::Level(_))));
        assert!(matches!(ev.rescale(&acc), Err(Error::Level(_))));
        assert_eq!(ev.counters.ct_ct_mults, 4);
        assert_eq!(ev.counters.rescales, 4);
    }

    #[test]
    fn plaintext_multiply_and_add() {
        let (mut enc, mut ev) = setup(&[60, 41], 40, &[]);
        let x = random_slots(N / 2, 4);
        let w = random_slots(N / 2, 5);
        let s = ev.ctx.default_scale();
        let ct = enc.encrypt(&ev.encode(&x, s, 1).unwrap()).unwrap();
        let pw = ev.encode(&w, s, 1).unwrap();
        let prod = ev.mul_plain(&ct, &pw).unwrap();
        let prod = ev.rescale(&prod).unwrap();
        let want: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        assert!(max_err(&enc.decrypt_decode(&ev.emb, &prod), &want) < 1e-8);
        let sum = ev.add_plain(&ct, &pw).unwrap();
        let want: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a + b).collect();
        assert!(max_err(&enc.decrypt_decode(&ev.emb, &sum), &want) < noise_tol(s));
        let shifted = ev.add_const(&ct, 0.25).unwrap();
        let want: Vec<f64> = x.iter().map(|a| a + 0.25).collect();
        assert!(max_err(&enc.decrypt_decode(&ev.emb, &shifted), &want) < noise_tol(s));
        assert_eq!(ev.counters.ct_pt_mults, 1);
    }

    #[test]
    fn mismatched_scales_are_rejected() {
        let (mut enc, ev) = setup(&[60, 41], 40, &[]);
        let a = enc.encrypt(&ev.encode(&[1.0], libm::exp2(40.0), 1).unwrap()).unwrap();
        let b = enc.encrypt(&ev.encode(&[1.0], libm::exp2(30.0), 1).unwrap()).unwrap();
        assert!(matches!(ev.add(&a, &b), Err(Error::Scale(..))));
        let c = ev.drop_to_level(&a, 0).unwrap();
        assert!(matches!(ev.add(&a, &c), Err(Error::Level(_))));
    }

    #[test]
    fn rotation_moves_slots_and_counts() {
        let (mut enc, mut ev) = setup(&[60, 41], 40, &[1, -3, 5]);
        let x = random_slots(N / 2, 6);
        let ct = enc.encrypt(&ev.encode(&x, ev.ctx.default_scale(), 1).unwrap()).unwrap();
        for t in [1i64, -3, 5] {
            let r = ev.rotate(&ct, t).unwrap();
            let got = enc.decrypt_decode(&ev.emb, &r);
            let slots = N as i64 / 2;
            let want: Vec<f64> = (0..slots).map(|i| x[(i + t).rem_euclid(slots) as usize]).collect();
            assert!(max_err(&got, &want) < noise_tol(ct.scale), "step {t}");
        }
        let same = ev.rotate(&ct, 0).unwrap();
        assert_eq!(same, ct);
        assert!(matches!(ev.rotate(&ct, 2), Err(Error::MissingKey(2))));
        assert_eq!(ev.counters.rotations, 5);
    }

    #[test]
    fn rotation_at_a_lower_level() {
        let (mut enc, mut ev) = setup(&[60, 41, 41], 40, &[7]);
        let x = random_slots(N / 2, 8);
        let ct = enc.encrypt(&ev.encode(&x, ev.ctx.default_scale(), 2).unwrap()).unwrap();
        let low = ev.drop_to_level(&ct, 0).unwrap();
        let r = ev.rotate(&low, 7).unwrap();
        let got = enc.decrypt_decode(&ev.emb, &r);
        let want: Vec<f64> = (0..N / 2).map(|i| x[(i + 7) % (N / 2)]).collect();
        assert!(max_err(&got, &want) < noise_tol(ct.scale));
    }

    #[test]
    fn rescale_divides_by_the_dropped_prime() {
        let (mut enc, mut ev) = setup(&[60, 41], 40, &[]);
        let x = random_slots(N / 2, 9);
        let s = ev.ctx.default_scale();
        let ct = enc.encrypt(&ev.encode(&x, s, 1).unwrap()).unwrap();
        let r = ev.rescale(&ct).unwrap();
        let q = ev.ctx.chain[1] as f64;
        assert_eq!(r.scale, s / q);
        // read at the old scale the slots shrink by the prime
        let got = ev.decode_plain(&enc.decrypt(&r), s);
        for (g, v) in got.iter().zip(&x) {
            assert!(libm::fabs(g - v / q) < 1e-9);
        }
    }

    #[test]
    fn sending_is_tallied_by_active_width() {
        let (mut enc, mut ev) = setup(&[60, 41, 41], 40, &[]);
        let ct = enc.encrypt(&ev.encode(&[0.5], ev.ctx.default_scale(), 2).unwrap()).unwrap();
        assert_eq!(ev.record_send(&ct), 2 * N as u64 * 142 / 8);
        let low = ev.drop_to_level(&ct, 0).unwrap();
        assert_eq!(ev.record_send(&low), 2 * N as u64 * 60 / 8);
        assert_eq!(ev.counters.ciphertext_bytes_sent, 2 * N as u64 * 202 / 8);
    }

    #[test]
    fn setup_is_deterministic_in_the_seed() {
        let params = CkksParams::from_widths(64, &[50, 30], 25, 3.2).unwrap();
        let (_, a, ka) = setup_context(params.clone(), 5, &[1]).unwrap();
        let (_, b, kb) = setup_context(params.clone(), 5, &[1]).unwrap();
        let (_, c, _) = setup_context(params, 6, &[1]).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
        assert_ne!(a.coeffs(), c.coeffs());
        assert_eq!(ka.public.b, kb.public.b);
        assert_eq!(ka.rotations.keys().collect::<Vec<_>>(), kb.rotations.keys().collect::<Vec<_>>());
    }

    #[test]
    fn counter_differences() {
        let c = OpCounters { rotations: 1, ct_ct_mults: 2, ct_pt_mults: 3, rescales: 4, ciphertext_bytes_sent: 5 };
        let d = c.since(&OpCounters { rotations: 1, ..Default::default() });
        assert_eq!(d.rotations, 0);
        assert_eq!(d.ciphertext_bytes_sent, 5);
    }
}
