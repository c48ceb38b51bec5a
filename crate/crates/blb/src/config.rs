//! Run configuration: plain `key = value` text with sections.
//!
//! ```text
//! seed = 7
//! engine = ckks
//!
//! [model]
//! m = 16
//! d = 32
//! heads = 4
//!
//! [he]
//! n = 8192
//!
//! [he.block2]
//! widths = 60,41,41,41,41,41,41,41
//!
//! [mpc]
//! ring_bits = 43
//! frac_bits = 13
//!
//! [network]
//! wan3.rtt_s = 0.08
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use blb_core::ring_ckks::desk_presets;
use blb_core::runtime::{BlockConfig, GeluCoeffs, Network, NETWORKS};
use ini::Ini;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    /// Real CKKS ciphertexts.
    Ckks,
    /// Slot vectors in the clear with the same traffic booked.
    Plain,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub engine: EngineKind,
    pub block: BlockConfig,
    pub networks: [Network; 4],
    /// BLBW weight file; random weights when absent.
    pub weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { seed: 0, engine: EngineKind::Ckks, block: BlockConfig::desk(16, 32, 4, 8192), networks: NETWORKS, weights: None }
    }
}

fn num<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e| anyhow!("[{section}] {key} = {v}: {e}"))
}

fn list(section: &str, key: &str, v: &str) -> Result<Vec<u32>> {
    v.split(',').map(|w| num(section, key, w)).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(w) = &cfg.weights {
            if w.is_relative() {
                cfg.weights = Some(path.parent().unwrap_or(Path::new(".")).join(w));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text)?;
        let mut cfg = RunConfig::default();
        let get = |s: Option<&str>, k: &str| ini.section(s).and_then(|p| p.get(k));

        // ring degree and scale first, since they regenerate every preset
        let n: usize = get(Some("he"), "n").map(|v| num("he", "n", v)).transpose()?.unwrap_or(8192);
        let scale: u32 = get(Some("he"), "scale_bits").map(|v| num("he", "scale_bits", v)).transpose()?.unwrap_or(40);
        cfg.block.presets = desk_presets(n, scale);

        let b = &mut cfg.block;
        let mut gelu = GeluCoeffs::FIT;
        for (section, props) in ini.iter() {
            let sec = section.unwrap_or("");
            for (k, v) in props.iter() {
                match (sec, k) {
                    ("", "seed") => cfg.seed = num(sec, k, v)?,
                    ("", "engine") => {
                        cfg.engine = <EngineKind as clap::ValueEnum>::from_str(v.trim(), true)
                            .map_err(|_| anyhow!("engine = {v}: expected ckks or plain"))?
                    }
                    ("model", "m") => b.m = num(sec, k, v)?,
                    ("model", "d") => b.d = num(sec, k, v)?,
                    ("model", "heads") => b.heads = num(sec, k, v)?,
                    ("model", "weights") => cfg.weights = Some(PathBuf::from(v.trim())),
                    ("model", "gelu_cutoff") => b.gelu_cutoff = num(sec, k, v)?,
                    ("model", "gelu_a") => gelu.a = num(sec, k, v)?,
                    ("model", "gelu_b") => gelu.b = num(sec, k, v)?,
                    ("model", "gelu_c") => gelu.c = num(sec, k, v)?,
                    ("model", "gelu_d") => gelu.d = num(sec, k, v)?,
                    ("model", "gelu_e") => gelu.e = num(sec, k, v)?,
                    ("model", "softmax_t") => b.softmax.t = num(sec, k, v)?,
                    ("model", "softmax_t_exp") => b.softmax.t_exp = num(sec, k, v)?,
                    ("he", "n" | "scale_bits") => {}
                    ("he", "noise_stddev") => b.noise_stddev = num(sec, k, v)?,
                    ("mpc", "ring_bits") => b.ring_bits = num(sec, k, v)?,
                    ("mpc", "frac_bits") => b.frac_bits = num(sec, k, v)?,
                    ("network", key) => {
                        let (name, field) = key.split_once('.').ok_or_else(|| anyhow!("[network] {key}: expected <net>.bandwidth_bps or <net>.rtt_s"))?;
                        let net = cfg.networks.iter_mut().find(|n| n.name == name).ok_or_else(|| anyhow!("[network] unknown network `{name}`"))?;
                        match field {
                            "bandwidth_bps" => net.bandwidth_bps = num(sec, k, v)?,
                            "rtt_s" => net.rtt_s = num(sec, k, v)?,
                            _ => bail!("[network] unknown field `{field}`"),
                        }
                    }
                    (s, key) if s.starts_with("he.") => {
                        let name = &s[3..];
                        let p = b.presets.iter_mut().find(|p| p.name == name).ok_or_else(|| anyhow!("[{s}] no such preset"))?;
                        match key {
                            "depth" => p.depth = num(s, key, v)?,
                            "widths" => p.widths = list(s, key, v)?,
                            "scale_bits" => p.scale_bits = num(s, key, v)?,
                            _ => bail!("[{s}] unknown key `{key}`"),
                        }
                    }
                    (s, key) => bail!("unknown key `{key}` in [{s}]"),
                }
            }
        }
        b.gelu = gelu;
        b.seed = cfg.seed;
        for p in &b.presets {
            if p.widths.len() != p.depth + 1 {
                bail!("[he.{}] {} primes for depth {}", p.name, p.widths.len(), p.depth);
            }
        }
        b.validate()?;
        for n in &cfg.networks {
            if n.bandwidth_bps <= 0.0 || n.rtt_s < 0.0 {
                bail!("[network] {} needs positive bandwidth and non-negative rtt", n.name);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_desk_layer() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.block, BlockConfig::desk(16, 32, 4, 8192));
        assert_eq!(c.engine, EngineKind::Ckks);
    }

    #[test]
    fn sections_override_their_fields() {
        let c = RunConfig::parse(
            "seed = 9\nengine = plain\n[model]\nm = 8\nd = 16\nheads = 2\n[he]\nn = 4096\n[he.block1]\nwidths = 60,45,45,45,45\nscale_bits = 44\n[mpc]\nfrac_bits = 12\n[network]\nwan3.rtt_s = 0.1\n",
        )
        .unwrap();
        assert_eq!((c.seed, c.engine, c.block.seed), (9, EngineKind::Plain, 9));
        assert_eq!((c.block.m, c.block.d, c.block.heads, c.block.frac_bits), (8, 16, 2, 12));
        assert!(c.block.presets.iter().all(|p| p.n == 4096));
        assert_eq!(c.block.presets[0].widths, [60, 45, 45, 45, 45]);
        assert_eq!(c.block.presets[0].scale_bits, 44);
        assert_eq!(c.networks[3].rtt_s, 0.1);
    }

    #[test]
    fn mistakes_are_rejected() {
        for text in [
            "[model]\nsize = 3\n",
            "[model]\nm = many\n",
            "[he.block9]\ndepth = 3\n",
            "[he.block1]\ndepth = 5\n",
            "[model]\nd = 30\nheads = 4\n",
            "[network]\nmoon.rtt_s = 2\n",
            "engine = gpu\n",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text:?}");
        }
    }
}
