//! Plans executed on real CKKS ciphertexts at N = 8192.

use blb_core::fuser::Shape;
use blb_core::matrix::Matrix;
use blb_core::mpc::reveal;
use blb_core::runtime::{eval_graph, BlockConfig, HeEngine, PlainEngine, Session, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random(rows: usize, cols: usize, sd: f64, rng: &mut ChaCha20Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| sd * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn layer(seed: u64) -> (BlockConfig, Matrix, Weights) {
    let mut cfg = BlockConfig::desk(16, 32, 4, 8192);
    cfg.seed = seed;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w = Weights::random(&cfg.graph().unwrap(), &cfg.gelu, &mut rng).unwrap();
    let x = random(16, 32, 1.0, &mut rng);
    (cfg, x, w)
}

#[test]
fn encoder_layer_under_ckks() {
    let (cfg, x, w) = layer(11);
    let mut he: Session<HeEngine> = Session::he(cfg.clone()).unwrap();
    let (y, r) = he.run_block(&x, &w).unwrap();
    assert_eq!(r.engine, "ckks");
    assert!(r.totals.output_mse < 1e-4, "{}", r.totals.output_mse);
    assert_eq!(r.totals.truncations, 0);
    for b in &r.blocks {
        assert!(b.mse < 1e-6, "{}: {}", b.name, b.mse);
        assert!(b.rotations > 0 || b.mults > 0, "{b:?}");
    }
    he.mpc.channel.check_balance().unwrap();

    // the simulated engine books the same traffic and lands on the same values
    let mut plain: Session<PlainEngine> = Session::plain(cfg).unwrap();
    let (z, p) = plain.run_block(&x, &w).unwrap();
    assert_eq!(p.totals.bytes, r.totals.bytes);
    assert_eq!(p.totals.rounds, r.totals.rounds);
    assert_eq!(p.totals.rotations, r.totals.rotations);
    let (a, b) = (reveal(&y).unwrap(), reveal(&z).unwrap());
    let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-2, "{diff}");
}

#[test]
fn nonlinear_layers_under_ckks() {
    let cfg = BlockConfig::desk(16, 32, 4, 8192);
    let mut s = Session::he(cfg).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let m = s.cfg.modulus().unwrap();

    let shape = Shape::with_heads(8, 32, 4);
    let xm = random(8, 32, 4.0, &mut rng);
    let x = s.mpc.input(0, &xm.data, m, 13).unwrap();
    let y = reveal(&s.eval_softmax(&x, shape).unwrap()).unwrap();
    let g = blb_core::fuser::softmax_graph(shape, &s.cfg.approx()).unwrap();
    let want = eval_graph(&g, &Weights::default(), &[xm], s.cfg.eps()).unwrap();
    for (a, b) in y.iter().zip(&want[&g.outputs[0]].data) {
        assert!((a - b).abs() < 1e-2, "softmax {a} vs {b}");
    }

    let xm = random(4, 32, 3.0, &mut rng);
    let x = s.mpc.input(0, &xm.data, m, 13).unwrap();
    let y = reveal(&s.eval_gelu(&x, Shape::new(4, 32)).unwrap()).unwrap();
    for (a, t) in y.iter().zip(&xm.data) {
        let exact = 0.5 * t * (1.0 + libm::erf(t / std::f64::consts::SQRT_2));
        assert!((a - exact).abs() < 1e-2, "gelu({t}) = {a}");
    }

    let xm = random(4, 32, 2.0, &mut rng);
    let x = s.mpc.input(0, &xm.data, m, 13).unwrap();
    let y = reveal(&s.eval_layernorm(&x, 4, 32, &[1.0; 32], &[0.0; 32]).unwrap()).unwrap();
    for r in 0..4 {
        let row = &y[r * 32..(r + 1) * 32];
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-2 && (var - 1.0).abs() < 2e-2, "row {r}: mean {mean} var {var}");
    }
}
