//! Two-party additive sharing over a byte-counting channel, with dealer-backed
//! ideal functionalities for the sub-protocols that would otherwise need OT.

mod channel;
mod convert;
mod dealer;
mod nonlinear;
pub mod share;

pub use channel::{Channel, ChannelStats};
pub use dealer::{CostModel, DealerTape, KindTally, OpCost};
pub use convert::{ring_to_field_local, trunc_local};
pub use nonlinear::{not, rec_goldschmidt, rsqrt_newton, xor, BOOL};
pub use share::{
    add, add_public_int, mul_public_int, mul_public_ints, neg, reconstruct, reconstruct_int, share, share_int, sub,
    to_fixed, Modulus, ShareVec,
};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng::SeedTree;
use crate::Result;

/// Both parties' shares of one vector, party 0 first.
pub type Shared = (ShareVec, ShareVec);

/// How `rec` and `rsqrt` compute their result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipMode {
    #[default]
    Exact,
    Goldschmidt,
}

/// A two-party session: the link, the dealer and the cost table.
#[derive(Debug, Clone)]
pub struct Mpc {
    pub channel: Channel,
    pub dealer: DealerTape,
    pub cost: CostModel,
    /// Surface domain errors instead of returning garbage shares.
    pub test_mode: bool,
    pub recip: RecipMode,
    /// Extra ring bits used by extension-based conversions and truncation.
    pub headroom: u32,
    input_rng: rand_chacha::ChaCha20Rng,
    pair_rng: rand_chacha::ChaCha20Rng,
}

impl Mpc {
    pub fn new(seeds: &SeedTree) -> Self {
        Mpc {
            channel: Channel::default(),
            dealer: DealerTape::new(seeds.stream("mpc/dealer")),
            cost: CostModel::default(),
            test_mode: true,
            recip: RecipMode::Exact,
            headroom: 40,
            input_rng: seeds.stream("mpc/inputs"),
            pair_rng: seeds.stream("mpc/pair"),
        }
    }

    pub fn with_channel(mut self, channel: Channel) -> Self {
        self.channel = channel;
        self
    }

    /// Secret-share a plaintext input owned by one party. The owner's
    /// message to the other party is booked on the channel.
    pub fn input(&mut self, owner: usize, x: &[f64], modulus: Modulus, scale: u32) -> Result<Shared> {
        let (a, b) = share(x, modulus, scale, &mut self.input_rng)?;
        self.channel.transfer(owner, (a.len() * modulus.element_bytes()) as u64);
        self.channel.add_rounds(1);
        Ok((a, b))
    }

    /// Public values as a trivial sharing (party 0 holds them); no traffic.
    pub fn constant(&self, x: &[f64], modulus: Modulus, scale: u32) -> Shared {
        let v: Vec<i128> = x.iter().map(|&x| to_fixed(x, scale)).collect();
        self.constant_int(&v, modulus, scale)
    }

    pub fn constant_int(&self, v: &[i128], modulus: Modulus, scale: u32) -> Shared {
        let a = ShareVec { values: v.iter().map(|&x| modulus.from_signed(x)).collect(), modulus, scale, party: 0 };
        let b = ShareVec { values: alloc::vec![0; v.len()], modulus, scale, party: 1 };
        (a, b)
    }

    /// Fresh uniform shares of the same value from a seed both parties
    /// hold: party 0 adds a common mask and party 1 subtracts it.
    pub fn rerandomize(&mut self, x: &Shared) -> Shared {
        let m = x.0.modulus;
        let mut a = x.0.clone();
        let mut b = x.1.clone();
        for (u, v) in a.values.iter_mut().zip(b.values.iter_mut()) {
            let r = m.sample(&mut self.pair_rng);
            *u = m.add(*u, r);
            *v = m.sub(*v, r);
        }
        (a, b)
    }

    /// Both parties send their shares in one flight; returns the centered values.
    pub fn open(&mut self, x: &Shared) -> Result<Vec<i128>> {
        let (a, b) = self.channel.exchange(&x.0, &x.1)?;
        reconstruct_int(&a, &b)
    }

    /// Book a dealer-backed call on `n` elements.
    fn charge(&mut self, cost: OpCost, n: usize) {
        let bytes = (cost.bits_per_element * n as u64).div_ceil(8);
        self.channel.transfer(0, bytes.div_ceil(2));
        self.channel.transfer(1, bytes / 2);
        self.channel.add_rounds(cost.rounds);
    }

    /// Book a dealer-backed call of `kind` on `n` ring elements without
    /// computing it, for simulated protocol steps.
    pub fn book(&mut self, kind: &str, bits: u32, n: usize) -> Result<()> {
        let cost = self.cost.cost(kind, bits);
        self.dealer.draw(kind, Modulus::ring(bits)?, n, cost);
        self.charge(cost, n);
        Ok(())
    }

    /// Reshare plaintext results with dealer masks and charge `kind`.
    fn deal(&mut self, kind: &str, cost_bits: u32, v: &[i128], modulus: Modulus, scale: u32) -> Shared {
        let cost = self.cost.cost(kind, cost_bits);
        let (_, masks) = self.dealer.draw(kind, modulus, v.len(), cost);
        self.charge(cost, v.len());
        let b: Vec<u128> = v.iter().zip(&masks).map(|(&x, &r)| modulus.sub(modulus.from_signed(x), r)).collect();
        (
            ShareVec { values: masks, modulus, scale, party: 0 },
            ShareVec { values: b, modulus, scale, party: 1 },
        )
    }
}

/// Local addition of two sharings.
pub fn add_shared(x: &Shared, y: &Shared) -> Result<Shared> {
    Ok((add(&x.0, &y.0)?, add(&x.1, &y.1)?))
}

pub fn sub_shared(x: &Shared, y: &Shared) -> Result<Shared> {
    Ok((sub(&x.0, &y.0)?, sub(&x.1, &y.1)?))
}

pub fn reveal(x: &Shared) -> Result<Vec<f64>> {
    reconstruct(&x.0, &x.1)
}
