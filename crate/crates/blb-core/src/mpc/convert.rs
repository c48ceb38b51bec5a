use alloc::format;
use alloc::vec::Vec;

use super::share::{reconstruct_int, Modulus, ShareVec};
use super::{Mpc, Shared};
use crate::{Error, Result};

fn ring_bits(x: &ShareVec) -> Result<u32> {
    match x.modulus {
        Modulus::Ring(l) => Ok(l),
        m => Err(Error::ShareAlgebra(format!("expected ring shares, got {m:?}"))),
    }
}

/// `2^k mod q` for `k ≤ 128`.
fn pow2_mod(k: u32, q: u128) -> u128 {
    let mut r = 1u128 % q;
    for _ in 0..k {
        r = (r << 1) % q;
    }
    r
}

/// Map shares of `m` over `Z_{2^L}` to shares over `Z_q` without talking.
/// Correct unless the two shares fail to wrap, which for uniformly
/// distributed shares has probability about `|m| / 2^L`.
pub fn ring_to_field_local(x: &Shared, q: u128) -> Result<Shared> {
    let big = ring_bits(&x.0)?;
    let f = Modulus::field(q)?;
    let wrap = pow2_mod(big, q);
    let a = x.0.values.iter().map(|&v| v % q).collect();
    let b = x.1.values.iter().map(|&v| f.sub(v % q, wrap)).collect();
    Ok((
        ShareVec { values: a, modulus: f, scale: x.0.scale, party: 0 },
        ShareVec { values: b, modulus: f, scale: x.1.scale, party: 1 },
    ))
}

impl Mpc {
    /// Sign-preserving extension from `Z_{2^l1}` to `Z_{2^l2}`.
    pub fn extend(&mut self, x: &Shared, l2: u32) -> Result<Shared> {
        self.extend_as("extend", x, l2)
    }

    fn extend_as(&mut self, kind: &str, x: &Shared, l2: u32) -> Result<Shared> {
        let l1 = ring_bits(&x.0)?;
        if l2 < l1 || l2 > 128 {
            return Err(Error::ShareAlgebra(format!("cannot extend {l1} bits to {l2}")));
        }
        let v = reconstruct_int(&x.0, &x.1)?;
        Ok(self.deal(kind, l2, &v, Modulus::Ring(l2), x.0.scale))
    }

    /// Field shares to ring shares: extension to `2^⌈log2 q⌉` (or straight
    /// to `2^l` when that is wider), then local reduction mod `2^l`. The
    /// caller guarantees the value fits in `l` bits.
    pub fn field_to_ring(&mut self, x: &Shared, l: u32) -> Result<Shared> {
        let Modulus::Field(_) = x.0.modulus else {
            return Err(Error::ShareAlgebra(format!("expected field shares, got {:?}", x.0.modulus)));
        };
        let big = x.0.modulus.bits().max(l);
        let v = reconstruct_int(&x.0, &x.1)?;
        let ext = self.deal("field_to_ring", big, &v, Modulus::Ring(big), x.0.scale);
        let r = Modulus::ring(l)?;
        let red = |s: &ShareVec| ShareVec { values: s.values.iter().map(|&v| r.reduce(v)).collect(), modulus: r, ..s.clone_meta() };
        Ok((red(&ext.0), red(&ext.1)))
    }

    /// Ring shares to field shares: extend by `headroom` bits, then map locally.
    pub fn ring_to_field(&mut self, x: &Shared, q: u128) -> Result<Shared> {
        let l = ring_bits(&x.0)?;
        let ext = self.extend(x, (l + self.headroom).min(128))?;
        ring_to_field_local(&ext, q)
    }

    /// Ring shares to one field sharing per prime, with a single extension.
    pub fn ring_to_rns(&mut self, x: &Shared, primes: &[u64]) -> Result<Vec<Shared>> {
        let l = ring_bits(&x.0)?;
        let ext = self.extend(x, (l + self.headroom).min(128))?;
        primes.iter().map(|&q| ring_to_field_local(&ext, q as u128)).collect()
    }

    /// Probabilistic truncation by `shift` bits: `⌊m/2^shift⌋ + u` with
    /// `Pr(u = 1) = (m mod 2^shift)/2^shift`.
    pub fn trunc_pr(&mut self, x: &Shared, shift: u32) -> Result<Shared> {
        let l = ring_bits(&x.0)?;
        if shift > self.headroom {
            return Err(Error::ShareAlgebra(format!("shift {shift} exceeds headroom {}", self.headroom)));
        }
        if l + self.headroom > 128 {
            return Err(Error::ShareAlgebra(format!("ring of {l} bits leaves no room for extension")));
        }
        let ext = self.extend_as("trunc", x, l + self.headroom)?;
        Ok(trunc_local(&ext, shift, l))
    }
}

/// Local truncation of shares over a wide ring, reduced to `2^l`.
/// Party 1 shifts the negation of its share so that an exact multiple of
/// `2^shift` truncates without error.
pub fn trunc_local(x: &Shared, shift: u32, l: u32) -> Shared {
    let big = x.0.modulus;
    let r = Modulus::Ring(l);
    let scale = x.0.scale.saturating_sub(shift);
    let a = x.0.values.iter().map(|&v| r.reduce(v >> shift)).collect();
    let b = x.1.values.iter().map(|&v| r.neg(r.reduce(big.neg(v) >> shift))).collect();
    (
        ShareVec { values: a, modulus: r, scale, party: 0 },
        ShareVec { values: b, modulus: r, scale, party: 1 },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::share::share_int;
    use crate::rng::SeedTree;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const Q: u128 = 1_152_921_504_606_830_593; // 60-bit NTT prime

    fn session() -> Mpc {
        Mpc::new(&SeedTree::new(11))
    }

    #[test]
    fn field_to_ring_small_values() {
        let mut mpc = session();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let x = share_int(&[5, -5], Modulus::Field(Q), 0, &mut rng).unwrap();
        let y = mpc.field_to_ring(&x, 43).unwrap();
        let raw: Vec<u128> = y.0.values.iter().zip(&y.1.values).map(|(&a, &b)| Modulus::Ring(43).add(a, b)).collect();
        assert_eq!(raw, [5, (1u128 << 43) - 5]);
        assert_eq!(mpc.dealer.calls("field_to_ring"), 1);
        mpc.channel.check_balance().unwrap();
    }

    #[test]
    fn ring_to_field_follows_the_wrap_identity() {
        let f = Modulus::Field(Q);
        let a = 123_456_789u128;
        let big = 48;
        let b = (7 + (1u128 << big) - a) & ((1u128 << big) - 1);
        let x = (
            ShareVec { values: alloc::vec![a], modulus: Modulus::Ring(big), scale: 0, party: 0 },
            ShareVec { values: alloc::vec![b], modulus: Modulus::Ring(big), scale: 0, party: 1 },
        );
        let y = ring_to_field_local(&x, Q).unwrap();
        assert_eq!(f.add(y.0.values[0], y.1.values[0]), 7);
        let mut mpc = session();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let z = share_int(&[0], Modulus::Ring(8), 0, &mut rng).unwrap();
        let w = mpc.ring_to_field(&z, Q).unwrap();
        assert_eq!(reconstruct_int(&w.0, &w.1).unwrap(), [0]);
    }

    #[test]
    fn extension_preserves_sign() {
        let mut mpc = session();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = share_int(&[-1, 127, -128], Modulus::Ring(8), 0, &mut rng).unwrap();
        let y = mpc.extend(&x, 16).unwrap();
        assert_eq!(Modulus::Ring(16).add(y.0.values[0], y.1.values[0]), (1 << 16) - 1);
        assert_eq!(reconstruct_int(&y.0, &y.1).unwrap(), [-1, 127, -128]);
        let c = mpc.channel.stats();
        assert_eq!(c.total_bytes(), (3 * (128 + 16) as u64).div_ceil(8));
        assert_eq!(c.rounds, 1);
    }

    #[test]
    fn ring_field_roundtrip_on_random_values() {
        let mut mpc = session();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let v: Vec<i128> = (0..10_000).map(|_| rng.random_range(-(1i128 << 42)..(1i128 << 42))).collect();
        let x = share_int(&v, Modulus::Ring(43), 13, &mut rng).unwrap();
        let f = mpc.ring_to_field(&x, Q).unwrap();
        assert_eq!(reconstruct_int(&f.0, &f.1).unwrap(), v);
        let back = mpc.field_to_ring(&f, 43).unwrap();
        assert_eq!(reconstruct_int(&back.0, &back.1).unwrap(), v);
    }

    #[test]
    fn exact_multiples_truncate_exactly() {
        let mut mpc = session();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let v: Vec<i128> = (-50..50).map(|k| k * 8192).collect();
        for _ in 0..20 {
            let x = share_int(&v, Modulus::Ring(43), 26, &mut rng).unwrap();
            let y = mpc.trunc_pr(&x, 13).unwrap();
            assert_eq!(y.0.scale, 13);
            let want: Vec<i128> = (-50..50).collect();
            assert_eq!(reconstruct_int(&y.0, &y.1).unwrap(), want);
        }
    }

    #[test]
    fn truncation_of_negatives_is_sign_preserving() {
        let mut mpc = session();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let v = [-1i128, -8191, -8193, -(5 << 13) - 17];
        for _ in 0..200 {
            let x = share_int(&v, Modulus::Ring(43), 0, &mut rng).unwrap();
            let y = mpc.trunc_pr(&x, 13).unwrap();
            for (r, m) in reconstruct_int(&y.0, &y.1).unwrap().into_iter().zip(v) {
                let fl = m >> 13;
                assert!(r == fl || r == fl + 1, "{m} -> {r}");
            }
        }
    }
}
