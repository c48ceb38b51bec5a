//! The matmul protocols on real CKKS ciphertexts at N = 4096.

use std::sync::Arc;

use blb_core::matmul::{operand_shapes, predict_cost, reference_product, run_protocol, Dims, MatmulCost, MatmulPlan, Protocol};
use blb_core::matrix::Matrix;
use blb_core::packing::{HeBackend, PlainBackend};
use blb_core::ring_ckks::{setup_context, CkksParams, Encryptor, Evaluator};
use blb_core::rng::SeedTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const N: usize = 4096;
const SCALE_BITS: u32 = 38;

fn random(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Max error, plus the plaintext-backend cost for comparison.
fn run(protocol: Protocol, dims: Dims, seed: u64) -> (f64, MatmulCost, MatmulCost) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (ls, rs) = operand_shapes(protocol, dims);
    let a = random(ls.0, ls.1, &mut rng);
    let b = random(rs.0, rs.1, &mut rng);
    let plan = MatmulPlan::default_for(protocol, dims, N / 2).unwrap();

    let mut plain = PlainBackend::new(N / 2, 4);
    let (_, plain_cost) = run_protocol(&mut plain, protocol, dims.heads, &a, &b, &plan, 4).unwrap();
    let steps: Vec<i64> = plain.steps.iter().copied().collect();

    let mut widths = vec![60];
    widths.extend([SCALE_BITS + 1; 4]);
    let params = CkksParams::from_widths(N, &widths, SCALE_BITS, 3.2).unwrap();
    let (ctx, sk, keys) = setup_context(params, seed, &steps).unwrap();
    let enc = Encryptor::new(ctx.clone(), sk, SeedTree::new(seed).stream("enc"));
    let mut be = HeBackend::new(Evaluator::new(ctx, Arc::new(keys)), Some(enc));
    let (got, cost) = run_protocol(&mut be, protocol, dims.heads, &a, &b, &plan, 4).unwrap();
    let want = reference_product(protocol, dims.heads, &a, &b).unwrap();
    (got.max_abs_diff(&want), cost, plain_cost)
}

/// One rescale or key switch at N = 4096 leaves about 2^12 units of error;
/// products of width `D/H` and up to four levels stack on top.
fn tolerance(dims: Dims) -> f64 {
    (dims.d / dims.heads) as f64 * libm::exp2(-(SCALE_BITS as f64) + 14.0)
}

#[test]
fn every_protocol_decrypts_to_the_plaintext_product() {
    let cases = [
        (Protocol::Cc, Dims { l: 8, d: 4, heads: 2 }),
        (Protocol::Cc, Dims { l: 16, d: 16, heads: 4 }),
        (Protocol::Cp, Dims { l: 16, d: 16, heads: 2 }),
        (Protocol::CpDiag, Dims { l: 8, d: 8, heads: 2 }),
        (Protocol::BoltCc, Dims { l: 8, d: 8, heads: 2 }),
    ];
    for (n, (protocol, dims)) in cases.into_iter().enumerate() {
        let (err, cost, plain_cost) = run(protocol, dims, 40 + n as u64);
        assert!(err < tolerance(dims), "{protocol:?} {dims:?}: error 2^{:.1}", err.log2());
        assert_eq!(cost, plain_cost, "{protocol:?} {dims:?}");
        assert_eq!(cost, predict_cost(protocol, dims, N / 2, &MatmulPlan::default_for(protocol, dims, N / 2).unwrap()).unwrap());
    }
}
