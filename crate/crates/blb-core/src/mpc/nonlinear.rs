use alloc::format;
use alloc::vec::Vec;

use super::share::{reconstruct_int, Modulus, ShareVec};
use super::{Mpc, RecipMode, Shared};
use crate::{Error, Result};

/// Boolean shares live in `Z_2`.
pub const BOOL: Modulus = Modulus::Ring(1);

fn floor_shift(v: i128, k: i32) -> i128 {
    if k >= 0 {
        v >> k
    } else {
        v << (-k)
    }
}

fn fx_mul(a: i128, b: i128, s: u32) -> i128 {
    (a * b) >> s
}

/// Fixed-point reciprocal: normalize into `[0.5, 1)` by exponent
/// extraction, linear seed, then Goldschmidt refinement with truncation
/// after every product.
pub fn rec_goldschmidt(v: i128, s: u32, iters: u32) -> Option<i128> {
    if v == 0 {
        return None;
    }
    let sign = v.signum();
    let v = v.abs();
    let msb = 127 - v.leading_zeros() as i32;
    let e = msb + 1 - s as i32;
    let xn = floor_shift(v, e);
    let one = 1i128 << s;
    let mut w = libm::rint(2.9142 * one as f64) as i128 - 2 * xn;
    let mut err = one - fx_mul(xn, w, s);
    for _ in 0..iters {
        w = fx_mul(w, one + err, s);
        err = fx_mul(err, err, s);
    }
    Some(sign * floor_shift(w, e))
}

/// Fixed-point inverse square root: normalize into `[0.25, 1)` with an
/// even exponent, linear seed, then Newton steps `y(3 − x·y²)/2`.
pub fn rsqrt_newton(v: i128, s: u32, iters: u32) -> Option<i128> {
    if v <= 0 {
        return None;
    }
    let msb = 127 - v.leading_zeros() as i32;
    let mut e = msb + 1 - s as i32;
    if e.rem_euclid(2) == 1 {
        e += 1;
    }
    let xn = floor_shift(v, e);
    let one = 1i128 << s;
    let mut y = libm::rint(2.2 * one as f64) as i128 - fx_mul(libm::rint(1.25 * one as f64) as i128, xn, s);
    for _ in 0..iters {
        let t = 3 * one - fx_mul(xn, fx_mul(y, y, s), s);
        y = fx_mul(y, t, s) >> 1;
    }
    Some(floor_shift(y, e / 2))
}

fn exact_rec(v: i128, s: u32) -> Option<i128> {
    (v != 0).then(|| libm::rint(libm::exp2(2.0 * s as f64) / v as f64) as i128)
}

fn exact_rsqrt(v: i128, s: u32) -> Option<i128> {
    (v > 0).then(|| libm::rint(libm::exp2(1.5 * s as f64) / libm::sqrt(v as f64)) as i128)
}

fn same_shape(x: &Shared, y: &Shared) -> Result<()> {
    if x.0.modulus != y.0.modulus || x.0.scale != y.0.scale || x.0.len() != y.0.len() {
        return Err(Error::ShareAlgebra(format!(
            "operands disagree: {:?}/{} x{} vs {:?}/{} x{}",
            x.0.modulus,
            x.0.scale,
            x.0.len(),
            y.0.modulus,
            y.0.scale,
            y.0.len()
        )));
    }
    Ok(())
}

impl Mpc {
    /// Boolean shares of `1{x < y}`.
    pub fn cmp(&mut self, x: &Shared, y: &Shared) -> Result<Shared> {
        same_shape(x, y)?;
        let a = reconstruct_int(&x.0, &x.1)?;
        let b = reconstruct_int(&y.0, &y.1)?;
        let v: Vec<i128> = a.iter().zip(&b).map(|(p, q)| (p < q) as i128).collect();
        Ok(self.deal("cmp", x.0.modulus.bits(), &v, BOOL, 0))
    }

    /// Shares of `b·x` from boolean `b`.
    pub fn mux(&mut self, b: &Shared, x: &Shared) -> Result<Shared> {
        if b.0.modulus != BOOL {
            return Err(Error::ShareAlgebra(format!("selector must be boolean, got {:?}", b.0.modulus)));
        }
        if b.0.len() != x.0.len() {
            return Err(Error::ShareAlgebra(format!("selector length {} vs {}", b.0.len(), x.0.len())));
        }
        let bits = reconstruct_int(&b.0, &b.1)?;
        let v = reconstruct_int(&x.0, &x.1)?;
        let out: Vec<i128> = bits.iter().zip(&v).map(|(&c, &x)| if c != 0 { x } else { 0 }).collect();
        Ok(self.deal("mux", x.0.modulus.bits(), &out, x.0.modulus, x.0.scale))
    }

    /// Element-wise product; the result carries the sum of the scales.
    pub fn mul(&mut self, x: &Shared, y: &Shared) -> Result<Shared> {
        if x.0.modulus != y.0.modulus || x.0.len() != y.0.len() {
            return Err(Error::ShareAlgebra(format!("operands disagree: {:?} vs {:?}", x.0.modulus, y.0.modulus)));
        }
        let m = x.0.modulus;
        let a = reconstruct_int(&x.0, &x.1)?;
        let b = reconstruct_int(&y.0, &y.1)?;
        let v: Vec<i128> = a.iter().zip(&b).map(|(&p, &q)| m.center(m.mul(m.from_signed(p), m.from_signed(q)))).collect();
        Ok(self.deal("mul", m.bits(), &v, m, x.0.scale + y.0.scale))
    }

    /// `max(x, y) = x + 1{x<y}·(y − x)`.
    pub fn max(&mut self, x: &Shared, y: &Shared) -> Result<Shared> {
        let b = self.cmp(x, y)?;
        let d = super::sub_shared(y, x)?;
        let sel = self.mux(&b, &d)?;
        super::add_shared(x, &sel)
    }

    pub fn rec(&mut self, x: &Shared) -> Result<Shared> {
        self.recip_op("rec", x)
    }

    pub fn rsqrt(&mut self, x: &Shared) -> Result<Shared> {
        self.recip_op("rsqrt", x)
    }

    fn recip_op(&mut self, kind: &str, x: &Shared) -> Result<Shared> {
        let s = x.0.scale;
        let m = x.0.modulus;
        let v = reconstruct_int(&x.0, &x.1)?;
        let mut out = Vec::with_capacity(v.len());
        for &a in &v {
            let r = match (kind, self.recip) {
                ("rec", RecipMode::Exact) => exact_rec(a, s),
                ("rec", RecipMode::Goldschmidt) => rec_goldschmidt(a, s, self.cost.rec_iters as u32),
                (_, RecipMode::Exact) => exact_rsqrt(a, s),
                (_, RecipMode::Goldschmidt) => rsqrt_newton(a, s, self.cost.rsqrt_iters as u32),
            };
            match r {
                Some(r) => out.push(r),
                None if self.test_mode => {
                    return Err(Error::Domain(format!("{kind} of {}", a as f64 / libm::exp2(s as f64))))
                }
                None => out.push(self.dealer.garbage(m)),
            }
        }
        Ok(self.deal(kind, m.bits(), &out, m, s))
    }
}

/// Local XOR of boolean sharings.
pub fn xor(x: &Shared, y: &Shared) -> Result<Shared> {
    super::add_shared(x, y)
}

/// Local NOT: party 0 flips its bit.
pub fn not(x: &Shared) -> Shared {
    let flip = |s: &ShareVec| s.with_values(s.values.iter().map(|&v| if s.party == 0 { v ^ 1 } else { v }).collect());
    (flip(&x.0), flip(&x.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::reveal;
    use crate::rng::SeedTree;

    fn session() -> Mpc {
        Mpc::new(&SeedTree::new(3))
    }

    const R: Modulus = Modulus::Ring(43);

    #[test]
    fn comparison_and_selection() {
        let mut mpc = session();
        let x = mpc.input(0, &[3.0, 5.0, -1.0], R, 13).unwrap();
        let y = mpc.input(1, &[5.0, 3.0, -1.0], R, 13).unwrap();
        let b = mpc.cmp(&x, &y).unwrap();
        assert_eq!(reconstruct_int(&b.0, &b.1).unwrap(), [1, 0, 0]);
        let z = mpc.constant_int(&[0, 0, 0], BOOL, 0);
        assert_eq!(reveal(&mpc.mux(&z, &x).unwrap()).unwrap(), [0.0; 3]);
        assert_eq!(reveal(&mpc.mux(&b, &x).unwrap()).unwrap(), [3.0, 0.0, 0.0]);
        assert_eq!(reveal(&mpc.max(&x, &y).unwrap()).unwrap(), [5.0, 5.0, -1.0]);
        let nb = not(&b);
        assert_eq!(reconstruct_int(&nb.0, &nb.1).unwrap(), [0, 1, 1]);
        assert_eq!(reconstruct_int(&xor(&b, &nb).unwrap().0, &xor(&b, &nb).unwrap().1).unwrap(), [1, 1, 1]);
        mpc.channel.check_balance().unwrap();
        let cmp = mpc.cost.cost("cmp", 43);
        assert_eq!(mpc.dealer.tally()["cmp"].bits, 2 * 3 * cmp.bits_per_element);
    }

    #[test]
    fn reciprocal_square_root_of_four() {
        let mut mpc = session();
        let x = mpc.input(0, &[4.0, 0.25, 100.0], R, 13).unwrap();
        let y = reveal(&mpc.rsqrt(&x).unwrap()).unwrap();
        for (g, w) in y.iter().zip([0.5, 2.0, 0.1]) {
            assert!((g - w).abs() <= libm::exp2(-11.0), "{g} vs {w}");
        }
    }

    #[test]
    fn domain_errors_only_in_test_mode() {
        let mut mpc = session();
        let x = mpc.input(0, &[-1.0], R, 13).unwrap();
        assert!(matches!(mpc.rsqrt(&x), Err(Error::Domain(_))));
        let z = mpc.input(0, &[0.0], R, 13).unwrap();
        assert!(matches!(mpc.rec(&z), Err(Error::Domain(_))));
        mpc.test_mode = false;
        assert_eq!(mpc.rsqrt(&x).unwrap().0.len(), 1);
    }

    #[test]
    fn iterative_modes_track_the_exact_result() {
        for s in [13u32, 20, 38] {
            let ulp = libm::exp2(-(s as f64));
            for x in [0.01, 0.3, 1.0, 1.7, 5.0, 123.0, 4000.0] {
                let v = libm::rint(x * libm::exp2(s as f64)) as i128;
                let r = rec_goldschmidt(v, s, 3).unwrap() as f64 * ulp;
                assert!((r - 1.0 / x).abs() <= 1e-6 + 32.0 * ulp / x.min(1.0), "rec {x} at s={s}: {r}");
                let r = rsqrt_newton(v, s, 3).unwrap() as f64 * ulp;
                let want = 1.0 / libm::sqrt(x);
                assert!((r - want).abs() <= 1e-5 * want + 32.0 * ulp / x.min(1.0), "rsqrt {x} at s={s}: {r}");
            }
        }
    }

    #[test]
    fn products_carry_both_scales() {
        let mut mpc = session();
        let x = mpc.input(0, &[1.5, -2.0], R, 13).unwrap();
        let y = mpc.input(1, &[2.0, 0.25], R, 13).unwrap();
        let p = mpc.mul(&x, &y).unwrap();
        assert_eq!(p.0.scale, 26);
        let t = mpc.trunc_pr(&p, 13).unwrap();
        assert_eq!(reveal(&t).unwrap(), [3.0, -0.5]);
    }
}
