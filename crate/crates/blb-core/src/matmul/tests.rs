use super::*;
use crate::matrix::Matrix;
use crate::packing::{level_of, pack, unpack, PackedTensor, PlainBackend, PlainCt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `[A_0·B_0 | A_1·B_1 | …]`
fn per_head_product(a: &Matrix, b: &Matrix, heads: usize) -> Matrix {
    let dh = a.cols / heads;
    let l = a.rows;
    let mut out = Matrix::zeros(l, heads * b.cols);
    for h in 0..heads {
        let c = a.col_block(h * dh, dh).matmul(&b.row_block(h * dh, dh)).unwrap();
        for i in 0..l {
            for j in 0..b.cols {
                out.set(i, h * b.cols + j, c.get(i, j));
            }
        }
    }
    out
}

struct CcRun {
    out: PackedTensor<PlainCt>,
    measured: MatmulCost,
    want: Matrix,
}

fn run_cc(dims: Dims, slots: usize, plan: &MatmulPlan, seed: u64) -> CcRun {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let a = random(dims.l, dims.d, &mut rng);
    let b = random(dims.d, dims.l, &mut rng);
    let mut be = PlainBackend::new(slots, 6);
    let (la, lb, _) = cc_layouts(dims, slots).unwrap();
    let pa = pack(&mut be, &a, la, 6).unwrap();
    let pb = pack(&mut be, &b, lb, 6).unwrap();
    let before = be.counters;
    let out = matmul_cc(&mut be, &pa, &pb, plan).unwrap();
    let depth = 6 - level_of(&be, &out);
    CcRun { measured: MatmulCost::measured(&be.counters.since(&before), depth), want: per_head_product(&a, &b, dims.heads), out }
}

fn cc_configs() -> Vec<(Dims, usize)> {
    let mut v = Vec::new();
    for l in [4, 8, 16, 32] {
        for d in [4, 8, 16, 32] {
            for heads in [1, 2, 4] {
                if d / heads > l {
                    continue;
                }
                for slots in [256, 2048] {
                    if slots / l >= heads && l <= slots {
                        v.push((Dims { l, d, heads }, slots));
                    }
                }
            }
        }
    }
    v
}

#[test]
fn cc_matches_the_plaintext_product_and_its_prediction() {
    for (n, (dims, slots)) in cc_configs().into_iter().enumerate() {
        for plan in [MatmulPlan::default_for(Protocol::Cc, dims, slots).unwrap(), MatmulPlan::trivial_for(Protocol::Cc, dims, slots).unwrap()] {
            let r = run_cc(dims, slots, &plan, n as u64);
            let be = PlainBackend::new(slots, 6);
            let got = unpack(&be, &r.out).unwrap();
            assert!(got.max_abs_diff(&r.want) < 1e-12, "{dims:?} in {slots} slots");
            assert_eq!(r.measured, predict_cost(Protocol::Cc, dims, slots, &plan).unwrap(), "{dims:?} {slots} {plan:?}");
            assert_eq!(r.measured.depth, 4);
        }
    }
}

#[test]
fn identity_left_operand_reproduces_the_right_operand() {
    let l = 8;
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let b = random(l, l, &mut rng);
    let dims = Dims { l, d: l, heads: 1 };
    let mut be = PlainBackend::new(128, 5);
    let (la, lb, _) = cc_layouts(dims, 128).unwrap();
    let pa = pack(&mut be, &Matrix::identity(l), la, 5).unwrap();
    let pb = pack(&mut be, &b, lb, 5).unwrap();
    let out = matmul_cc(&mut be, &pa, &pb, &MatmulPlan::default_for(Protocol::Cc, dims, 128).unwrap()).unwrap();
    assert!(unpack(&be, &out).unwrap().max_abs_diff(&b) < 1e-12);
    // diagonal d, lane i holds b[i][i+d]
    assert_eq!(out.cts[0].vals[l + 2], b.get(2, 3));
}

#[test]
fn toy_product_places_partial_sums_on_diagonals() {
    // L = 4, D = 2: column 0 of A against row 0 of B feeds the main diagonal,
    // row 1 rotated one step feeds diagonal 1.
    let a = Matrix::from_fn(4, 2, |i, k| if k == 0 { (i + 1) as f64 } else { 0.0 });
    let b = Matrix::from_fn(2, 4, |k, j| if k == 0 { 10.0 + j as f64 } else { 0.0 });
    let dims = Dims { l: 4, d: 2, heads: 1 };
    let mut be = PlainBackend::new(32, 4);
    let (la, lb, _) = cc_layouts(dims, 32).unwrap();
    let pa = pack(&mut be, &a, la, 4).unwrap();
    let pb = pack(&mut be, &b, lb, 4).unwrap();
    let out = matmul_cc(&mut be, &pa, &pb, &MatmulPlan::trivial_for(Protocol::Cc, dims, 32).unwrap()).unwrap();
    let s = &out.cts[0].vals;
    assert_eq!(&s[..4], &[10.0, 22.0, 36.0, 52.0]);
    let a1 = Matrix::from_fn(4, 2, |i, k| if k == 1 { (i + 1) as f64 } else { 0.0 });
    let b1 = Matrix::from_fn(2, 4, |k, j| if k == 1 { 10.0 + j as f64 } else { 0.0 });
    let pa = pack(&mut be, &a1, la, 4).unwrap();
    let pb = pack(&mut be, &b1, lb, 4).unwrap();
    let out = matmul_cc(&mut be, &pa, &pb, &MatmulPlan::trivial_for(Protocol::Cc, dims, 32).unwrap()).unwrap();
    assert_eq!(&out.cts[0].vals[4..8], &[11.0, 24.0, 39.0, 40.0]);
}

#[test]
fn hand_count_of_the_step_inventory() {
    // step 1: D-1 inner rotations, step 2: L-1, step 3: L-1 alignments
    let dims = Dims { l: 4, d: 2, heads: 1 };
    let plan = MatmulPlan::trivial_for(Protocol::Cc, dims, 32).unwrap();
    let r = run_cc(dims, 32, &plan, 3);
    assert_eq!(r.measured.rotations, 2 + 2 * 3 + 3);
    assert_eq!(r.measured.ct_ct_mults, 4);
    assert_eq!(r.measured.ct_pt_mults, 3 + 2 * 3 + 4);
}

#[test]
fn one_column_per_head_skips_step_one() {
    let dims = Dims { l: 4, d: 2, heads: 2 };
    let plan = MatmulPlan::trivial_for(Protocol::Cc, dims, 32).unwrap();
    let c = predict_cost(Protocol::Cc, dims, 32, &plan).unwrap();
    assert_eq!(c.rotations, 2 * 3 + 3);
    assert_eq!(c.ct_pt_mults, 2 * 3 + 4);
    assert_eq!(run_cc(dims, 32, &plan, 4).measured, c);
}

#[test]
fn bsgs_beats_the_plain_loop_past_nine() {
    for r in [10usize, 16, 64, 128, 1000] {
        let p = BsgsPlan::square(r, BsgsTarget::CcStep1);
        assert!(p.b * p.g >= r);
        assert!(p.b - 1 + p.g - 1 < r - 1, "{r}");
    }
    assert!(BsgsPlan { b: 2, g: 2, target: BsgsTarget::Cp }.check(5).is_err());
    assert_eq!(BsgsPlan::split(128, BsgsTarget::CcStep2), BsgsPlan { b: 16, g: 8, target: BsgsTarget::CcStep2 });
}

#[test]
fn multi_head_packing_saves_rotations() {
    for (l, d) in [(16, 16), (32, 32), (16, 32), (8, 32)] {
        let rot = |heads| {
            let dims = Dims { l, d, heads };
            if d / heads > l {
                return u64::MAX;
            }
            let plan = MatmulPlan::default_for(Protocol::Cc, dims, 2048).unwrap();
            run_cc(dims, 2048, &plan, 5).measured.rotations
        };
        assert!(rot(4) < rot(1), "L={l} D={d}");
    }
}

fn run_bolt(dims: Dims, slots: usize, seed: u64) -> (Vec<Matrix>, Matrix, MatmulCost) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let a = random(dims.l, dims.d, &mut rng);
    let b = random(dims.d, dims.l, &mut rng);
    let dh = dims.d / dims.heads;
    let mut be = PlainBackend::new(slots, 6);
    let (la, lb, _) = bolt_layouts(dims, slots).unwrap();
    let pa: Vec<_> = (0..dims.heads).map(|h| pack(&mut be, &a.col_block(h * dh, dh), la, 6).unwrap()).collect();
    let pb: Vec<_> = (0..dims.heads).map(|h| pack(&mut be, &b.row_block(h * dh, dh), lb, 6).unwrap()).collect();
    let before = be.counters;
    let outs = bolt_matmul_cc(&mut be, &pa, &pb).unwrap();
    let depth = 6 - level_of(&be, &outs[0]);
    let cost = MatmulCost::measured(&be.counters.since(&before), depth);
    (outs.iter().map(|o| unpack(&be, o).unwrap()).collect(), per_head_product(&a, &b, dims.heads), cost)
}

#[test]
fn baseline_is_correct_and_needs_four_times_the_rotations() {
    for d in [4, 8, 16, 32] {
        let dims = Dims { l: 16, d, heads: 2 };
        let (heads, want, cost) = run_bolt(dims, 2048, d as u64);
        for (h, m) in heads.iter().enumerate() {
            assert!(m.max_abs_diff(&want.col_block(h * 16, 16)) < 1e-12);
        }
        assert_eq!(cost, predict_cost(Protocol::BoltCc, dims, 2048, &MatmulPlan::default_for(Protocol::BoltCc, dims, 2048).unwrap()).unwrap());
        let ours = run_cc(dims, 2048, &MatmulPlan::default_for(Protocol::Cc, dims, 2048).unwrap(), 0).measured;
        assert!(cost.rotations >= 4 * ours.rotations, "D={d}: {} vs {}", cost.rotations, ours.rotations);
    }
    let (heads, want, _) = run_bolt(Dims { l: 32, d: 8, heads: 1 }, 256, 9);
    assert!(heads[0].max_abs_diff(&want) < 1e-12);
}

#[test]
fn full_scale_prediction_lands_near_the_published_count() {
    let dims = Dims { l: 128, d: 1024, heads: 16 };
    let plan = MatmulPlan::default_for(Protocol::Cc, dims, 16384).unwrap();
    let ours = predict_cost(Protocol::Cc, dims, 16384, &plan).unwrap();
    assert!((320..=1280).contains(&ours.rotations), "{}", ours.rotations);
    assert_eq!(ours.ct_ct_mults, 1024);
    let bolt = predict_cost(Protocol::BoltCc, dims, 16384, &plan).unwrap();
    assert!(bolt.rotations > 10 * ours.rotations);
}

fn run_cp(x: &Matrix, w: &Matrix, slots: usize, heads: Option<usize>) -> (Matrix, MatmulCost, PackedTensor<PlainCt>) {
    let dims = Dims { l: x.rows, d: x.cols, heads: heads.unwrap_or(1) };
    let (lx, _) = cp_layouts(dims, slots).unwrap();
    let mut be = PlainBackend::new(slots, 2);
    let px = pack(&mut be, x, lx, 2).unwrap();
    let plan = MatmulPlan::default_for(Protocol::Cp, dims, slots).unwrap();
    let before = be.counters;
    let out = matmul_cp_spatial(&mut be, &px, w, heads, &plan.cp).unwrap();
    let cost = MatmulCost::measured(&be.counters.since(&before), 2 - level_of(&be, &out));
    if w.rows == w.cols {
        assert_eq!(cost, predict_cost(Protocol::Cp, dims, slots, &plan).unwrap());
    }
    (unpack(&be, &out).unwrap(), cost, out)
}

#[test]
fn cp_identity_keeps_the_slots() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let x = random(8, 4, &mut rng);
    let dims = Dims { l: 8, d: 4, heads: 1 };
    let (lx, _) = cp_layouts(dims, 64).unwrap();
    let (got, cost, out) = run_cp(&x, &Matrix::identity(4), 64, None);
    assert_eq!(got, x);
    assert_eq!(out.cts[0].vals, lx.pack(&x).unwrap()[0]);
    assert_eq!(cost.depth, 1);
}

#[test]
fn cp_matches_the_plaintext_product() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for (l, d, dout, slots) in [(8, 4, 4, 64), (8, 4, 4, 2048), (32, 32, 32, 256), (16, 8, 32, 128), (4, 32, 8, 64)] {
        let x = random(l, d, &mut rng);
        let w = random(d, dout, &mut rng);
        let (got, _, _) = run_cp(&x, &w, slots, None);
        assert!(got.max_abs_diff(&x.matmul(&w).unwrap()) < 1e-12, "{l}x{d}x{dout} in {slots}");
    }
}

#[test]
fn head_reorder_emits_multi_head_order() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let x = random(4, 4, &mut rng);
    let w = random(4, 4, &mut rng);
    let (got, _, out) = run_cp(&x, &w, 32, Some(2));
    let want = x.matmul(&w).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-12);
    // group order (h, c): columns 0, 2, 1, 3
    let s = &out.cts[0].vals;
    for (g, col) in [0, 2, 1, 3].into_iter().enumerate() {
        for i in 0..4 {
            assert!((s[4 * g + i] - want.get(i, col)).abs() < 1e-12);
        }
    }
}

fn run_cpdiag(c: &Matrix, w: &Matrix, heads: usize, slots: usize) -> (Matrix, MatmulCost) {
    let dims = Dims { l: c.rows, d: c.cols, heads };
    let (lc, _) = cpdiag_layouts(dims, slots).unwrap();
    let mut be = PlainBackend::new(slots, 2);
    let pc = pack(&mut be, c, lc, 2).unwrap();
    let plan = MatmulPlan::default_for(Protocol::CpDiag, dims, slots).unwrap();
    let before = be.counters;
    let out = matmul_cp_diagonal(&mut be, &pc, w, &plan.cp).unwrap();
    let cost = MatmulCost::measured(&be.counters.since(&before), 2 - level_of(&be, &out));
    assert_eq!(cost, predict_cost(Protocol::CpDiag, dims, slots, &plan).unwrap());
    (unpack(&be, &out).unwrap(), cost)
}

#[test]
fn cp_diagonal_matches_the_plaintext_product() {
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    for (l, d, heads, slots) in [(4, 2, 1, 32), (8, 8, 2, 64), (16, 32, 4, 256), (32, 32, 2, 2048), (8, 16, 4, 32)] {
        let c = random(l, d, &mut rng);
        let (got, _) = run_cpdiag(&c, &Matrix::identity(d), heads, slots);
        assert!(got.max_abs_diff(&c) < 1e-12);
        let w = random(d, d, &mut rng);
        let (got, _) = run_cpdiag(&c, &w, heads, slots);
        assert!(got.max_abs_diff(&c.matmul(&w).unwrap()) < 1e-12, "{l} {d} {heads} {slots}");
    }
}

#[test]
fn diagonal_and_spatial_cp_cost_the_same() {
    for (l, d, slots) in [(8, 8, 64), (16, 32, 256), (32, 16, 2048)] {
        let dims = Dims { l, d, heads: 1 };
        let p = |proto| predict_cost(proto, dims, slots, &MatmulPlan::default_for(proto, dims, slots).unwrap()).unwrap();
        assert_eq!(p(Protocol::Cp), p(Protocol::CpDiag));
    }
}

#[test]
fn padded_product_collapses_to_a_dense_diagonal() {
    // Softmax(·)·V_h with V_h of width L/2 padded to L
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    for (l, heads, slots) in [(8, 2, 256), (8, 4, 64), (16, 2, 128)] {
        let dh = l / 2;
        let s = random(l, heads * l, &mut rng);
        let v = random(heads * l, dh, &mut rng);
        let v_pad = Matrix::from_fn(heads * l, l, |k, j| if j < dh { v.get(k, j) } else { 0.0 });
        let dims = Dims { l, d: heads * l, heads };
        let (la, lb, _) = cc_layouts(dims, slots).unwrap();
        let mut be = PlainBackend::new(slots, 6);
        // V_h stacked by head: rows h·L..(h+1)·L
        let pa = pack(&mut be, &s, la, 6).unwrap();
        let pb = pack(&mut be, &v_pad, lb, 6).unwrap();
        let c = matmul_cc(&mut be, &pa, &pb, &MatmulPlan::default_for(Protocol::Cc, dims, slots).unwrap()).unwrap();
        let before = be.counters.rotations;
        let dense = collapse_padding(&mut be, &c, dh).unwrap();
        assert_eq!(be.counters.rotations - before, collapse_rotations(&c.layout, dh));
        let want = per_head_product(&s, &v, heads);
        assert!(unpack(&be, &dense).unwrap().max_abs_diff(&want) < 1e-12);
        let w = random(heads * dh, 8, &mut rng);
        let out = matmul_cp_diagonal(&mut be, &dense, &w, &BsgsPlan::square(dense.layout.groups_per_ct(), BsgsTarget::Cp)).unwrap();
        assert!(unpack(&be, &out).unwrap().max_abs_diff(&want.matmul(&w).unwrap()) < 1e-12);
    }
}

#[test]
fn bad_shapes_are_rejected() {
    let mut be = PlainBackend::new(64, 6);
    assert!(matches!(cc_layouts(Dims { l: 6, d: 4, heads: 1 }, 64), Err(crate::Error::Shape(_))));
    assert!(matches!(cc_layouts(Dims { l: 4, d: 6, heads: 4 }, 64), Err(crate::Error::Shape(_))));
    let x = pack(&mut be, &Matrix::zeros(4, 4), crate::packing::Layout::spatial(4, 4, 4, 64).unwrap(), 2).unwrap();
    let plan = BsgsPlan::square(4, BsgsTarget::Cp);
    assert!(matches!(matmul_cp_spatial(&mut be, &x, &Matrix::zeros(3, 4), None, &plan), Err(crate::Error::Shape(_))));
    assert!(matches!(matmul_cp_diagonal(&mut be, &x, &Matrix::zeros(4, 4), &plan), Err(crate::Error::Layout(_))));
    let dims = Dims { l: 4, d: 4, heads: 1 };
    let (la, lb, _) = cc_layouts(dims, 64).unwrap();
    let a = pack(&mut be, &Matrix::zeros(4, 4), la, 6).unwrap();
    let b = pack(&mut be, &Matrix::zeros(4, 4), lb, 3).unwrap();
    let plan = MatmulPlan::default_for(Protocol::Cc, dims, 64).unwrap();
    assert!(matches!(matmul_cc(&mut be, &a, &b, &plan), Err(crate::Error::Level(_))));
    assert!(matches!(matmul_cc(&mut be, &b, &a, &plan), Err(crate::Error::Layout(_))));
}
