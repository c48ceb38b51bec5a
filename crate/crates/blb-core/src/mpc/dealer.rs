use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::share::Modulus;

/// Communication charged per element for one dealer-backed call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCost {
    pub bits_per_element: u64,
    pub rounds: u64,
}

/// Per-element cost table for the ideal functionalities. Entries in
/// `overrides` replace the formula for that kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub lambda: u64,
    pub rec_iters: u64,
    pub rsqrt_iters: u64,
    pub overrides: BTreeMap<String, OpCost>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { lambda: 128, rec_iters: 3, rsqrt_iters: 3, overrides: BTreeMap::new() }
    }
}

fn log2_ceil(x: u64) -> u64 {
    64 - (x.max(1) - 1).leading_zeros() as u64
}

impl CostModel {
    /// `bits` is the output ring width for extend, the source width for
    /// field_to_ring, and the operand width otherwise.
    pub fn cost(&self, kind: &str, bits: u32) -> OpCost {
        if let Some(c) = self.overrides.get(kind) {
            return *c;
        }
        let l = bits as u64;
        let lam = self.lambda;
        let mul = l * (lam + l) + 4 * l;
        let cmp = OpCost { bits_per_element: lam * l, rounds: log2_ceil(l) };
        match kind {
            "extend" | "field_to_ring" | "trunc" => OpCost { bits_per_element: lam + l, rounds: 1 },
            "cmp" => cmp,
            "mux" => OpCost { bits_per_element: 2 * (lam + l), rounds: 1 },
            "mul" => OpCost { bits_per_element: mul, rounds: 2 },
            "rec" => OpCost {
                bits_per_element: cmp.bits_per_element + 2 * self.rec_iters * mul,
                rounds: cmp.rounds + 2 * self.rec_iters,
            },
            "rsqrt" => OpCost {
                bits_per_element: cmp.bits_per_element + 3 * self.rsqrt_iters * mul,
                rounds: cmp.rounds + 3 * self.rsqrt_iters,
            },
            _ => OpCost { bits_per_element: lam * l, rounds: 1 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KindTally {
    pub calls: u64,
    pub elements: u64,
    pub bits: u64,
}

/// Correlated randomness for the ideal functionalities. Records are drawn
/// from a seeded stream and numbered; each number is handed out once.
#[derive(Debug, Clone)]
pub struct DealerTape {
    rng: ChaCha20Rng,
    next_record: u64,
    tally: BTreeMap<String, KindTally>,
}

impl DealerTape {
    pub fn new(rng: ChaCha20Rng) -> Self {
        DealerTape { rng, next_record: 0, tally: BTreeMap::new() }
    }

    /// Fresh masks for `n` elements under `modulus`; returns the record id.
    pub fn draw(&mut self, kind: &str, modulus: Modulus, n: usize, cost: OpCost) -> (u64, Vec<u128>) {
        let id = self.next_record;
        self.next_record += 1;
        let t = self.tally.entry(kind.to_string()).or_default();
        t.calls += 1;
        t.elements += n as u64;
        t.bits += cost.bits_per_element * n as u64;
        let masks = (0..n).map(|_| modulus.sample(&mut self.rng)).collect();
        (id, masks)
    }

    /// A uniformly random element, standing in for an undefined output.
    pub fn garbage(&mut self, modulus: Modulus) -> i128 {
        modulus.center(modulus.sample(&mut self.rng))
    }

    pub fn records_consumed(&self) -> u64 {
        self.next_record
    }

    pub fn tally(&self) -> &BTreeMap<String, KindTally> {
        &self.tally
    }

    pub fn calls(&self, kind: &str) -> u64 {
        self.tally.get(kind).map_or(0, |t| t.calls)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_costs_follow_the_formulas() {
        let c = CostModel::default();
        assert_eq!(c.cost("extend", 83), OpCost { bits_per_element: 211, rounds: 1 });
        assert_eq!(c.cost("cmp", 43).bits_per_element, 128 * 43);
        assert_eq!(c.cost("mux", 43).bits_per_element, 2 * (128 + 43));
        let mut o = CostModel::default();
        o.overrides.insert("cmp".into(), OpCost { bits_per_element: 7, rounds: 2 });
        assert_eq!(o.cost("cmp", 43).bits_per_element, 7);
    }

    #[test]
    fn records_are_numbered_once() {
        let mut d = DealerTape::new(ChaCha20Rng::seed_from_u64(0));
        let cost = OpCost { bits_per_element: 10, rounds: 1 };
        let (a, _) = d.draw("cmp", Modulus::Ring(8), 3, cost);
        let (b, _) = d.draw("cmp", Modulus::Ring(8), 2, cost);
        assert_ne!(a, b);
        assert_eq!(d.records_consumed(), 2);
        assert_eq!(d.tally()["cmp"], KindTally { calls: 2, elements: 5, bits: 50 });
    }
}
