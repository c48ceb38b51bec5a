use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::arith::{bit_width, is_prime, ntt_primes_ascending};
use crate::{Error, Result};

/// Ring degree, modulus chain and scale of a CKKS instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkksParams {
    /// Ring degree `N`; there are `N/2` slots.
    pub n: usize,
    /// Chain primes, level 0 first. Rescaling drops the last active one.
    pub modulus_chain: Vec<u64>,
    pub scale_bits: u32,
    pub noise_stddev: f64,
}

impl CkksParams {
    /// Build a chain from bit widths (level 0 first).
    pub fn from_widths(n: usize, widths: &[u32], scale_bits: u32, noise_stddev: f64) -> Result<Self> {
        if !n.is_power_of_two() || n < 4 {
            return Err(Error::Param(format!("ring degree {n} must be a power of two >= 4")));
        }
        let mut primes: Vec<u64> = Vec::with_capacity(widths.len());
        for &w in widths {
            let p = ntt_primes_ascending(w, n, 1, &primes)?[0];
            primes.push(p);
        }
        let p = CkksParams { n, modulus_chain: primes, scale_bits, noise_stddev };
        p.validate()?;
        Ok(p)
    }

    pub fn slots(&self) -> usize {
        self.n / 2
    }

    /// Number of rescales the chain supports.
    pub fn depth_budget(&self) -> usize {
        self.modulus_chain.len().saturating_sub(1)
    }

    pub fn max_level(&self) -> usize {
        self.modulus_chain.len() - 1
    }

    pub fn widths(&self) -> Vec<u32> {
        self.modulus_chain.iter().map(|&p| bit_width(p)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() || self.n < 4 {
            return Err(Error::Param(format!("ring degree {} must be a power of two >= 4", self.n)));
        }
        if self.modulus_chain.is_empty() {
            return Err(Error::Param("empty modulus chain".to_string()));
        }
        let m = 2 * self.n as u64;
        for (i, &p) in self.modulus_chain.iter().enumerate() {
            if bit_width(p) > 62 || !is_prime(p) {
                return Err(Error::Param(format!("chain entry {p} is not a prime below 2^62")));
            }
            if p % m != 1 {
                return Err(Error::Param(format!("chain prime {p} is not 1 mod 2N = {m}")));
            }
            if self.modulus_chain[..i].contains(&p) {
                return Err(Error::Param(format!("chain prime {p} repeated")));
            }
            if self.scale_bits >= bit_width(p) {
                return Err(Error::Param(format!(
                    "scale of {} bits does not fit below the {}-bit prime {p}",
                    self.scale_bits,
                    bit_width(p)
                )));
            }
        }
        if !(self.noise_stddev >= 0.0) {
            return Err(Error::Param("noise_stddev must be non-negative".to_string()));
        }
        Ok(())
    }
}

/// A named parameter set together with the multiplicative depth it is meant to serve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HePreset {
    pub name: String,
    pub depth: usize,
    pub n: usize,
    pub widths: Vec<u32>,
    pub scale_bits: u32,
}

impl HePreset {
    pub fn params(&self, noise_stddev: f64) -> Result<CkksParams> {
        CkksParams::from_widths(self.n, &self.widths, self.scale_bits, noise_stddev)
            .map_err(|e| e.context(format!("preset {}", self.name)))
    }
}

/// The five per-block parameter shapes used at full scale.
///
/// These are recorded as published; several chains carry a prime narrower than
/// the scale and one has fewer primes than its depth needs, so only the first
/// instantiates as a working context.
pub fn full_scale_presets() -> Vec<HePreset> {
    let mk = |name: &str, depth: usize, n: usize, widths: &[u32], scale_bits: u32| HePreset {
        name: name.to_string(),
        depth,
        n,
        widths: widths.to_vec(),
        scale_bits,
    };
    alloc::vec![
        mk("block1", 4, 16384, &[60, 60, 60, 60, 60], 38),
        mk("block2", 7, 32768, &[60, 35, 60, 60, 60, 60, 60, 60], 44),
        mk("block3", 7, 32768, &[60, 40, 40, 40, 40, 40, 40, 40, 60], 40),
        mk("block4", 7, 32768, &[60, 60, 60, 60, 60, 60, 60], 43),
        mk("block5", 6, 32768, &[60, 32, 60, 60, 60, 60, 60, 60], 46),
    ]
}

/// Desk-scale presets with the same depths as the full-scale table.
///
/// Each chain is a 60-bit base prime plus `depth` primes one bit wider than
/// the scale, so every rescale returns the scale to within `2^-20` of itself.
pub fn desk_presets(n: usize, scale_bits: u32) -> Vec<HePreset> {
    full_scale_presets()
        .into_iter()
        .map(|p| {
            let mut widths = alloc::vec![60u32];
            widths.extend(core::iter::repeat(scale_bits + 1).take(p.depth));
            HePreset { name: p.name, depth: p.depth, n, widths, scale_bits }
        })
        .collect()
}
