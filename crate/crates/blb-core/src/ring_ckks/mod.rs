//! RNS-CKKS over `Z_Q[X]/(X^N + 1)`: parameters, encoding, keys and evaluation.

pub mod arith;
pub mod context;
pub mod encoding;
pub mod eval;
pub mod params;
pub mod poly;

pub use context::{add_rotation_keys, setup_context, CkksContext, EvalKeys, KeySwitchKey, PublicKey, SecretKey};
pub use encoding::EmbeddingTables;
pub use eval::{CkksCipher, Encryptor, Evaluator, OpCounters, Plaintext};
pub use params::{desk_presets, full_scale_presets, CkksParams, HePreset};
pub use poly::RingPoly;
