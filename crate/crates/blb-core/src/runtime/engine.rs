use alloc::collections::BTreeSet;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;

use crate::bridge::{ckks_to_mpc, mpc_to_ckks, BridgeConfig, WORK_BITS};
use crate::mpc::{reveal, share_int, to_fixed, Modulus, Mpc, Shared};
use crate::packing::{HeBackend, PlainBackend, SlotBackend};
use crate::ring_ckks::{add_rotation_keys, setup_context, Encryptor, Evaluator, HePreset};
use crate::rng::SeedTree;
use crate::{Error, Result};

pub type Ct<E> = <<E as Engine>::Backend as SlotBackend>::Ct;

/// Where fused blocks run, and how slot vectors cross into and out of them.
/// `preset` indexes [`Engine::presets`].
pub trait Engine {
    type Backend: SlotBackend;

    fn name(&self) -> &'static str;
    fn presets(&self) -> &[HePreset];
    fn backend(&mut self, preset: usize) -> &mut Self::Backend;

    /// Whether rotation keys must exist before a run.
    fn needs_keys(&self) -> bool {
        false
    }

    fn prepare(&mut self, _steps: &[BTreeSet<i64>]) -> Result<()> {
        Ok(())
    }

    /// Shares of a full slot vector to a ciphertext at `level`.
    fn to_he(&mut self, mpc: &mut Mpc, preset: usize, x: &Shared, level: usize) -> Result<Ct<Self>>;

    /// A ciphertext to shares of `fold` times its slots at `cfg.frac_bits`.
    fn to_mpc(&mut self, mpc: &mut Mpc, preset: usize, ct: &Ct<Self>, fold: f64, cfg: &BridgeConfig) -> Result<Shared>;
}

fn ct_bytes(p: &HePreset, level: usize) -> u64 {
    let bits: u64 = p.widths[..=level.min(p.widths.len() - 1)].iter().map(|&w| w as u64).sum();
    2 * p.n as u64 * bits / 8
}

/// Slot vectors in the clear. Conversions book exactly the traffic the
/// real bridge would send and reshare the values with fresh randomness.
pub struct PlainEngine {
    presets: Vec<HePreset>,
    backends: Vec<PlainBackend>,
    rng: ChaCha20Rng,
}

impl PlainEngine {
    pub fn new(presets: Vec<HePreset>, seeds: &SeedTree) -> Self {
        let backends = presets.iter().map(|p| PlainBackend::new(p.n / 2, p.depth)).collect();
        PlainEngine { presets, backends, rng: seeds.stream("plain/reshare") }
    }

    /// Rotation amounts used so far, per preset.
    pub fn steps(&self) -> Vec<BTreeSet<i64>> {
        self.backends.iter().map(|b| b.steps.clone()).collect()
    }
}

impl Engine for PlainEngine {
    type Backend = PlainBackend;

    fn name(&self) -> &'static str {
        "plain"
    }

    fn presets(&self) -> &[HePreset] {
        &self.presets
    }

    fn backend(&mut self, preset: usize) -> &mut PlainBackend {
        &mut self.backends[preset]
    }

    fn to_he(&mut self, mpc: &mut Mpc, preset: usize, x: &Shared, level: usize) -> Result<Ct<Self>> {
        mpc.extend(x, WORK_BITS)?;
        let ct = self.backends[preset].fresh(&reveal(x)?, level)?;
        mpc.channel.transfer(0, ct_bytes(&self.presets[preset], level));
        mpc.channel.add_rounds(1);
        Ok(ct)
    }

    fn to_mpc(&mut self, mpc: &mut Mpc, preset: usize, ct: &Ct<Self>, fold: f64, cfg: &BridgeConfig) -> Result<Shared> {
        let p = &self.presets[preset];
        mpc.channel.transfer(1, ct_bytes(p, 0));
        mpc.channel.add_rounds(1);
        mpc.book("field_to_ring", WORK_BITS.max(p.widths[0]), p.n)?;
        let r = Modulus::ring(cfg.ring_bits)?;
        let half = 1i128 << (cfg.ring_bits - 1);
        let mut v = Vec::with_capacity(ct.vals.len());
        for &x in &ct.vals {
            let f = to_fixed(x * fold, cfg.frac_bits);
            if mpc.test_mode && f.unsigned_abs() >= half as u128 {
                return Err(Error::Range(format!("decoded value {f} exceeds 2^{}", cfg.ring_bits - 1)));
            }
            v.push(r.center(r.from_signed(f)));
        }
        share_int(&v, r, cfg.frac_bits, &mut self.rng)
    }
}

/// CKKS contexts, one per preset, each with its own keys.
pub struct HeEngine {
    presets: Vec<HePreset>,
    backends: Vec<HeBackend>,
    key_seeds: Vec<u64>,
    rng: ChaCha20Rng,
}

impl HeEngine {
    pub fn new(presets: Vec<HePreset>, noise_stddev: f64, seeds: &SeedTree) -> Result<Self> {
        let mut backends = Vec::with_capacity(presets.len());
        let mut key_seeds = Vec::with_capacity(presets.len());
        for p in &presets {
            let tree = seeds.child(&p.name);
            let (ctx, sk, keys) = setup_context(p.params(noise_stddev)?, tree.seed(), &[])?;
            let enc = Encryptor::new(ctx.clone(), sk, tree.stream("encrypt"));
            backends.push(HeBackend::new(Evaluator::new(ctx, Arc::new(keys)), Some(enc)));
            key_seeds.push(tree.child("rotations").seed());
        }
        Ok(HeEngine { presets, backends, key_seeds, rng: seeds.stream("he/masks") })
    }
}

impl Engine for HeEngine {
    type Backend = HeBackend;

    fn name(&self) -> &'static str {
        "ckks"
    }

    fn presets(&self) -> &[HePreset] {
        &self.presets
    }

    fn backend(&mut self, preset: usize) -> &mut HeBackend {
        &mut self.backends[preset]
    }

    fn needs_keys(&self) -> bool {
        true
    }

    fn prepare(&mut self, steps: &[BTreeSet<i64>]) -> Result<()> {
        for ((be, s), &seed) in self.backends.iter_mut().zip(steps).zip(&self.key_seeds) {
            let HeBackend { ev, enc } = be;
            let enc = enc.as_ref().ok_or_else(|| Error::Param("no secret key for rotation keys".into()))?;
            let steps: Vec<i64> = s.iter().copied().collect();
            add_rotation_keys(&ev.ctx.clone(), enc.secret_key(), Arc::make_mut(&mut ev.keys), &steps, seed);
        }
        Ok(())
    }

    fn to_he(&mut self, mpc: &mut Mpc, preset: usize, x: &Shared, level: usize) -> Result<Ct<Self>> {
        let HeBackend { ev, enc } = &mut self.backends[preset];
        let enc = enc.as_mut().ok_or_else(|| Error::Param("party 0 holds no encryption key".into()))?;
        mpc_to_ckks(mpc, ev, enc, x, level)
    }

    fn to_mpc(&mut self, mpc: &mut Mpc, preset: usize, ct: &Ct<Self>, fold: f64, cfg: &BridgeConfig) -> Result<Shared> {
        let HeBackend { ev, enc } = &mut self.backends[preset];
        let enc = enc.as_ref().ok_or_else(|| Error::Param("party 0 holds no decryption key".into()))?;
        let mut ct = ct.clone();
        ct.scale /= fold;
        ckks_to_mpc(mpc, ev, enc, &ct, cfg, &mut self.rng)
    }
}
