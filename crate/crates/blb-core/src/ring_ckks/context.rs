use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::arith::{
    bit_width, inv_mod, mul_mod, ntt_primes_descending, pow_mod, reduce_i128, NttTable,
};
use super::params::CkksParams;
use super::poly::RingPoly;
use crate::rng::SeedTree;
use crate::Result;

const SPECIAL_PRIME_BITS: u32 = 61;
// extra bits of the special modulus above the top chain modulus
const SPECIAL_HEADROOM_BITS: u32 = 16;

/// Parameters plus every table derived from them. Shared read-only.
#[derive(Debug)]
pub struct CkksContext {
    pub params: CkksParams,
    pub chain: Vec<u64>,
    pub special: Vec<u64>,
    pub tables: Vec<NttTable>,
    pub special_tables: Vec<NttTable>,
    // modup: per level l, (Q_l/q_i)^-1 mod q_i and (Q_l/q_i) mod p_j
    qhat_inv: Vec<Vec<u64>>,
    qhat_mod_p: Vec<Vec<Vec<u64>>>,
    // moddown: (P/p_j)^-1 mod p_j, (P/p_j) mod q_i, P^-1 mod q_i
    phat_inv: Vec<u64>,
    phat_mod_q: Vec<Vec<u64>>,
    p_inv_mod_q: Vec<u64>,
    p_mod_q: Vec<u64>,
    // floor(P/2) mod p_j and mod q_i, for rounding instead of flooring
    half_p_mod_p: Vec<u64>,
    half_p_mod_q: Vec<u64>,
    // rescale: q_l^-1 mod q_i for i < l
    q_last_inv: Vec<Vec<u64>>,
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Arc<Self>> {
        params.validate()?;
        let n = params.n;
        let chain = params.modulus_chain.clone();
        let q_bits: u32 = chain.iter().map(|&p| bit_width(p)).sum();
        let k = ((q_bits + SPECIAL_HEADROOM_BITS) as usize).div_ceil(SPECIAL_PRIME_BITS as usize - 1);
        let special = ntt_primes_descending(SPECIAL_PRIME_BITS, n, k, &chain)?;
        let tables = chain.iter().map(|&p| NttTable::new(n, p)).collect::<Result<Vec<_>>>()?;
        let special_tables = special.iter().map(|&p| NttTable::new(n, p)).collect::<Result<Vec<_>>>()?;

        let levels = chain.len();
        let mut qhat_inv = Vec::with_capacity(levels);
        let mut qhat_mod_p = Vec::with_capacity(levels);
        for l in 0..levels {
            let mut inv_l = Vec::with_capacity(l + 1);
            let mut modp_l = Vec::with_capacity(l + 1);
            for i in 0..=l {
                let qi = chain[i];
                let mut prod = 1u64;
                for (j, &qj) in chain[..=l].iter().enumerate() {
                    if j != i {
                        prod = mul_mod(prod, qj % qi, qi);
                    }
                }
                inv_l.push(inv_mod(prod, qi));
                modp_l.push(
                    special
                        .iter()
                        .map(|&pj| {
                            chain[..=l]
                                .iter()
                                .enumerate()
                                .filter(|(j, _)| *j != i)
                                .fold(1u64, |acc, (_, &qj)| mul_mod(acc, qj % pj, pj))
                        })
                        .collect::<Vec<u64>>(),
                );
            }
            qhat_inv.push(inv_l);
            qhat_mod_p.push(modp_l);
        }
        let mut phat_inv = Vec::with_capacity(k);
        let mut phat_mod_q = Vec::with_capacity(k);
        for (j, &pj) in special.iter().enumerate() {
            let prod = special
                .iter()
                .enumerate()
                .filter(|(t, _)| *t != j)
                .fold(1u64, |acc, (_, &pt)| mul_mod(acc, pt % pj, pj));
            phat_inv.push(inv_mod(prod, pj));
            phat_mod_q.push(
                chain
                    .iter()
                    .map(|&qi| {
                        special
                            .iter()
                            .enumerate()
                            .filter(|(t, _)| *t != j)
                            .fold(1u64, |acc, (_, &pt)| mul_mod(acc, pt % qi, qi))
                    })
                    .collect(),
            );
        }
        let p_mod_q: Vec<u64> = chain
            .iter()
            .map(|&qi| special.iter().fold(1u64, |acc, &pj| mul_mod(acc, pj % qi, qi)))
            .collect();
        let p_inv_mod_q = chain.iter().zip(&p_mod_q).map(|(&qi, &pm)| inv_mod(pm, qi)).collect();
        let half = |m: u64| -> u64 {
            let pm = special.iter().fold(1u64, |acc, &pj| mul_mod(acc, pj % m, m));
            mul_mod(super::arith::sub_mod(pm, 1, m), inv_mod(2, m), m)
        };
        let half_p_mod_p = special.iter().map(|&pj| half(pj)).collect();
        let half_p_mod_q = chain.iter().map(|&qi| half(qi)).collect();
        let q_last_inv = (0..levels)
            .map(|l| (0..l).map(|i| inv_mod(chain[l] % chain[i], chain[i])).collect())
            .collect();

        Ok(Arc::new(CkksContext {
            params,
            chain,
            special,
            tables,
            special_tables,
            qhat_inv,
            qhat_mod_p,
            phat_inv,
            phat_mod_q,
            p_inv_mod_q,
            p_mod_q,
            half_p_mod_p,
            half_p_mod_q,
            q_last_inv,
        }))
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn slots(&self) -> usize {
        self.params.n / 2
    }

    pub fn max_level(&self) -> usize {
        self.chain.len() - 1
    }

    pub fn default_scale(&self) -> f64 {
        libm::exp2(self.params.scale_bits as f64)
    }

    /// Canonical scale at `level`: `2^s` at the top, then `Δ_{l-1} = Δ_l^2 / q_l`,
    /// so a product of two canonical ciphertexts rescales onto the next one.
    pub fn level_scale(&self, level: usize) -> f64 {
        let mut d = self.default_scale();
        for l in (level + 1..=self.max_level()).rev() {
            d = d * d / self.chain[l] as f64;
        }
        d
    }

    pub fn primes(&self, level: usize) -> &[u64] {
        &self.chain[..=level]
    }

    /// Sum of bit widths of the primes active at `level`.
    pub fn active_bits(&self, level: usize) -> u32 {
        self.chain[..=level].iter().map(|&p| bit_width(p)).sum()
    }

    pub fn to_ntt(&self, p: &mut RingPoly) {
        if !p.ntt {
            for (i, r) in p.residues.iter_mut().enumerate() {
                self.tables[i].forward(r);
            }
            p.ntt = true;
        }
    }

    pub fn to_coeff(&self, p: &mut RingPoly) {
        if p.ntt {
            for (i, r) in p.residues.iter_mut().enumerate() {
                self.tables[i].inverse(r);
            }
            p.ntt = false;
        }
    }

    /// Lift small signed coefficients into every residue at `level` (NTT form).
    pub fn poly_from_signed(&self, coeffs: &[i128], level: usize) -> RingPoly {
        let residues = self.chain[..=level]
            .iter()
            .map(|&p| coeffs.iter().map(|&c| reduce_i128(c, p)).collect())
            .collect();
        let mut poly = RingPoly { level, residues, ntt: false };
        self.to_ntt(&mut poly);
        poly
    }

    /// Galois element `5^step mod 2N` for a left rotation by `step` slots.
    pub fn galois_element(&self, step: i64) -> usize {
        let slots = self.slots() as i64;
        let s = step.rem_euclid(slots) as u64;
        pow_mod(5, s, 2 * self.n() as u64) as usize
    }

    fn permutation(&self, g: usize) -> Vec<usize> {
        self.tables[0].automorphism_permutation(g)
    }

    /// Apply `X -> X^g` to a polynomial in NTT form.
    pub fn automorphism(&self, p: &RingPoly, g: usize) -> RingPoly {
        debug_assert!(p.ntt);
        let perm = self.permutation(g);
        let residues = p.residues.iter().map(|r| perm.iter().map(|&k| r[k]).collect()).collect();
        RingPoly { level: p.level, residues, ntt: true }
    }

    /// Hybrid key switching of `d` (NTT form, level `l`) with a single digit and
    /// special modulus `P`. Returns `(u0, u1)` with `u0 + u1·s ≈ d·s'`.
    pub(crate) fn key_switch(&self, d: &RingPoly, key: &KeySwitchKey) -> (RingPoly, RingPoly) {
        let l = d.level;
        let n = self.n();
        let k = self.special.len();
        let mut dc = d.clone();
        self.to_coeff(&mut dc);

        // mod up: d + αQ_l in every special prime
        let mut ext = vec![vec![0u64; n]; k];
        let qhat_inv = &self.qhat_inv[l];
        let qhat_mod_p = &self.qhat_mod_p[l];
        let mut y = vec![0u64; l + 1];
        for x in 0..n {
            for i in 0..=l {
                y[i] = mul_mod(dc.residues[i][x], qhat_inv[i], self.chain[i]);
            }
            for j in 0..k {
                let pj = self.special[j];
                let mut acc: u128 = 0;
                for i in 0..=l {
                    acc += y[i] as u128 * qhat_mod_p[i][j] as u128;
                }
                ext[j][x] = (acc % pj as u128) as u64;
            }
        }
        for (j, r) in ext.iter_mut().enumerate() {
            self.special_tables[j].forward(r);
        }

        let top = self.max_level();
        let mut out = [Vec::new(), Vec::new()];
        for (w, key_part) in [&key.b, &key.a].into_iter().enumerate() {
            let mut tq: Vec<Vec<u64>> = (0..=l)
                .map(|i| {
                    let q = self.chain[i];
                    d.residues[i].iter().zip(&key_part[i]).map(|(a, b)| mul_mod(*a, *b, q)).collect()
                })
                .collect();
            let mut tp: Vec<Vec<u64>> = (0..k)
                .map(|j| {
                    let p = self.special[j];
                    ext[j].iter().zip(&key_part[top + 1 + j]).map(|(a, b)| mul_mod(*a, *b, p)).collect()
                })
                .collect();
            // mod down by P, rounding: x' = x + floor(P/2), then exact x' mod P
            let mut beta = vec![0u64; n];
            for (j, r) in tp.iter_mut().enumerate() {
                self.special_tables[j].inverse(r);
                let pj = self.special[j];
                for v in r.iter_mut() {
                    *v = mul_mod(super::arith::add_mod(*v, self.half_p_mod_p[j], pj), self.phat_inv[j], pj);
                }
            }
            let mut frac = vec![0f64; n];
            for (j, r) in tp.iter().enumerate() {
                let pj = self.special[j] as f64;
                for (f, &v) in frac.iter_mut().zip(r) {
                    *f += v as f64 / pj;
                }
            }
            for (b, f) in beta.iter_mut().zip(&frac) {
                *b = libm::floor(*f) as u64;
            }
            for i in 0..=l {
                let q = self.chain[i];
                let h = self.half_p_mod_q[i];
                let mut conv = vec![0u64; n];
                for x in 0..n {
                    let mut acc: u128 = 0;
                    for j in 0..k {
                        acc += tp[j][x] as u128 * self.phat_mod_q[j][i] as u128;
                    }
                    let c = (acc % q as u128) as u64;
                    // subtracting (x' mod P) - floor(P/2) leaves x' - (x' mod P)
                    let c = super::arith::sub_mod(c, mul_mod(beta[x] % q, self.p_mod_q[i], q), q);
                    conv[x] = super::arith::sub_mod(c, h, q);
                }
                self.tables[i].forward(&mut conv);
                let pinv = self.p_inv_mod_q[i];
                for (t, c) in tq[i].iter_mut().zip(&conv) {
                    *t = mul_mod(super::arith::sub_mod(*t, *c, q), pinv, q);
                }
            }
            out[w] = tq;
        }
        let [u0, u1] = out;
        (RingPoly { level: l, residues: u0, ntt: true }, RingPoly { level: l, residues: u1, ntt: true })
    }

    /// Divide by the last active prime with rounding; `p` in NTT form.
    pub(crate) fn rescale_poly(&self, p: &RingPoly) -> RingPoly {
        let l = p.level;
        let ql = self.chain[l];
        let mut last = p.residues[l].clone();
        self.tables[l].inverse(&mut last);
        let half = ql / 2;
        let residues = (0..l)
            .map(|i| {
                let qi = self.chain[i];
                // centered lift of the dropped residue, then into q_i
                let mut r: Vec<u64> = last
                    .iter()
                    .map(|&v| if v > half { reduce_i128(v as i128 - ql as i128, qi) } else { v % qi })
                    .collect();
                self.tables[i].forward(&mut r);
                let inv = self.q_last_inv[l][i];
                p.residues[i]
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| mul_mod(super::arith::sub_mod(*a, *b, qi), inv, qi))
                    .collect()
            })
            .collect();
        RingPoly { level: l - 1, residues, ntt: true }
    }
}

/// Ternary secret in NTT form over the chain followed by the special primes.
#[derive(Debug, Clone)]
pub struct SecretKey {
    pub(crate) chain: Vec<Vec<u64>>,
    pub(crate) special: Vec<Vec<u64>>,
    pub(crate) coeffs: Vec<i8>,
}

impl SecretKey {
    /// Ternary coefficients in `{-1, 0, 1}`.
    pub fn coeffs(&self) -> &[i8] {
        &self.coeffs
    }

    pub fn at_level(&self, level: usize) -> RingPoly {
        RingPoly { level, residues: self.chain[..=level].to_vec(), ntt: true }
    }
}

#[derive(Debug, Clone)]
pub struct PublicKey {
    pub b: RingPoly,
    pub a: RingPoly,
}

/// Key-switching key over the chain and special primes (chain first).
#[derive(Debug, Clone)]
pub struct KeySwitchKey {
    pub(crate) b: Vec<Vec<u64>>,
    pub(crate) a: Vec<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct EvalKeys {
    pub public: PublicKey,
    pub relin: KeySwitchKey,
    pub rotations: BTreeMap<usize, KeySwitchKey>,
}

impl EvalKeys {
    pub fn has_rotation(&self, ctx: &CkksContext, step: i64) -> bool {
        step.rem_euclid(ctx.slots() as i64) == 0 || self.rotations.contains_key(&ctx.galois_element(step))
    }
}

pub fn sample_gaussian(n: usize, sigma: f64, rng: &mut ChaCha20Rng) -> Vec<i128> {
    if sigma == 0.0 {
        return vec![0; n];
    }
    let d = Normal::new(0.0, sigma).expect("valid sigma");
    (0..n).map(|_| libm::round(d.sample(rng)) as i128).collect()
}

pub fn sample_ternary(n: usize, rng: &mut ChaCha20Rng) -> Vec<i8> {
    (0..n).map(|_| rng.random_range(-1i8..=1)).collect()
}

fn uniform_residues(primes: &[u64], n: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<u64>> {
    primes.iter().map(|&p| (0..n).map(|_| rng.random_range(0..p)).collect()).collect()
}

fn signed_to_ntt(table: &NttTable, coeffs: &[i128]) -> Vec<u64> {
    let mut r: Vec<u64> = coeffs.iter().map(|&c| reduce_i128(c, table.p)).collect();
    table.forward(&mut r);
    r
}

/// Key generation: secret key, public key, relinearization key and rotation keys
/// for every requested step. Deterministic in `seed`.
pub fn setup_context(
    params: CkksParams,
    seed: u64,
    rotation_steps: &[i64],
) -> Result<(Arc<CkksContext>, SecretKey, EvalKeys)> {
    let ctx = CkksContext::new(params)?;
    let tree = SeedTree::new(seed);
    let n = ctx.n();
    let mut rng = tree.stream("ckks/secret");
    let s_coeffs = sample_ternary(n, &mut rng);
    let s_wide: Vec<i128> = s_coeffs.iter().map(|&c| c as i128).collect();
    let sk = SecretKey {
        chain: ctx.tables.iter().map(|t| signed_to_ntt(t, &s_wide)).collect(),
        special: ctx.special_tables.iter().map(|t| signed_to_ntt(t, &s_wide)).collect(),
        coeffs: s_coeffs,
    };

    let mut rng = tree.stream("ckks/public");
    let top = ctx.max_level();
    let a = RingPoly { level: top, residues: uniform_residues(&ctx.chain, n, &mut rng), ntt: true };
    let e = ctx.poly_from_signed(&sample_gaussian(n, ctx.params.noise_stddev, &mut rng), top);
    let mut b = a.mul(&sk.at_level(top), &ctx.chain);
    b.neg_assign(&ctx.chain);
    b.add_assign(&e, &ctx.chain);
    let public = PublicKey { b, a };

    let mut rng = tree.stream("ckks/relin");
    let s2: Vec<Vec<u64>> = sk
        .chain
        .iter()
        .zip(&ctx.chain)
        .map(|(r, &p)| r.iter().map(|&x| mul_mod(x, x, p)).collect())
        .collect();
    let relin = gen_switch_key(&ctx, &sk, &s2, &mut rng);

    let mut keys = EvalKeys { public, relin, rotations: BTreeMap::new() };
    add_rotation_keys(&ctx, &sk, &mut keys, rotation_steps, seed);
    Ok((ctx, sk, keys))
}

/// Add rotation keys for `steps`; keys already present are left alone.
/// Each key depends only on the seed and its Galois element.
pub fn add_rotation_keys(ctx: &CkksContext, sk: &SecretKey, keys: &mut EvalKeys, steps: &[i64], seed: u64) {
    let tree = SeedTree::new(seed);
    for &t in steps {
        if t.rem_euclid(ctx.slots() as i64) == 0 {
            continue;
        }
        let g = ctx.galois_element(t);
        if keys.rotations.contains_key(&g) {
            continue;
        }
        let mut rng = tree.stream(&format!("ckks/rot/{g}"));
        let perm = ctx.permutation(g);
        let target: Vec<Vec<u64>> = sk.chain.iter().map(|r| perm.iter().map(|&k| r[k]).collect()).collect();
        keys.rotations.insert(g, gen_switch_key(ctx, sk, &target, &mut rng));
    }
}

fn gen_switch_key(ctx: &CkksContext, sk: &SecretKey, target: &[Vec<u64>], rng: &mut ChaCha20Rng) -> KeySwitchKey {
    let n = ctx.n();
    let all: Vec<u64> = ctx.chain.iter().chain(&ctx.special).copied().collect();
    let a = uniform_residues(&all, n, rng);
    let e = sample_gaussian(n, ctx.params.noise_stddev, rng);
    let mut b = Vec::with_capacity(all.len());
    for (idx, &p) in all.iter().enumerate() {
        let (table, s) = if idx < ctx.chain.len() {
            (&ctx.tables[idx], &sk.chain[idx])
        } else {
            let j = idx - ctx.chain.len();
            (&ctx.special_tables[j], &sk.special[j])
        };
        let e_ntt = signed_to_ntt(table, &e);
        let row: Vec<u64> = (0..n)
            .map(|x| {
                let mut v = super::arith::sub_mod(e_ntt[x], mul_mod(a[idx][x], s[x], p), p);
                if idx < ctx.chain.len() {
                    v = super::arith::add_mod(v, mul_mod(ctx.p_mod_q[idx], target[idx][x], p), p);
                }
                v
            })
            .collect();
        b.push(row);
    }
    KeySwitchKey { b, a }
}
