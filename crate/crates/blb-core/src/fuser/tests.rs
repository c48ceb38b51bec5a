use alloc::string::ToString;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::ring_ckks::desk_presets;

fn bert() -> Graph {
    decompose_block(BlockDims { m: 16, d: 32, heads: 4 }).unwrap()
}

fn presets() -> Vec<crate::ring_ckks::HePreset> {
    desk_presets(8192, 40)
}

fn names(g: &Graph, nodes: &[usize]) -> Vec<String> {
    nodes.iter().map(|&i| g.nodes[i].name.clone()).collect()
}

#[test]
fn legality_table() {
    use Category::*;
    let lin = [Identity, Expansion, Reduction, Transformation];
    let legal = |r, np| Legality::Legal { result: r, new_packing: np };
    let red = Legality::Illegal(IllegalReason::AbsentFromTransformers);
    #[rustfmt::skip]
    let want = [
        [legal(Identity, false), legal(Expansion, false), legal(Reduction, false), legal(Transformation, false)],
        [legal(Expansion, false), red, legal(Identity, true), legal(Expansion, true)],
        [legal(Reduction, false), legal(Identity, true), red, red],
        [legal(Transformation, false), red, legal(Reduction, true), legal(Transformation, true)],
    ];
    for (i, &a) in lin.iter().enumerate() {
        for (j, &b) in lin.iter().enumerate() {
            assert_eq!(fuse_legality(a, b).unwrap(), want[i][j], "{a:?} then {b:?}");
        }
    }
}

#[test]
fn nonlinear_operands_cannot_be_fused() {
    assert!(matches!(fuse_legality(Category::Nonlinear, Category::Identity), Err(Error::Domain(_))));
    assert!(matches!(fuse_legality(Category::Reduction, Category::Nonlinear), Err(Error::Domain(_))));
}

#[test]
fn categories_follow_the_operator_table() {
    assert_eq!(categorize("smul_cc").unwrap(), Category::Expansion);
    assert_eq!(categorize("sum").unwrap(), Category::Reduction);
    assert_eq!(categorize("mux").unwrap(), Category::Nonlinear);
    assert_eq!(categorize("ewadd_cp").unwrap(), Category::Identity);
    assert_eq!(categorize("matmul_cc").unwrap(), Category::Transformation);
    assert_eq!(categorize("softmax"), Err(Error::UnknownOp("softmax".into())));
    for k in OpKind::ALL {
        assert_eq!(OpKind::parse(k.name()).unwrap(), k);
    }
}

#[test]
fn softmax_exponent_is_one_add_and_six_squarings() {
    let g = bert();
    assert_eq!(g.count(OpKind::EwaddCp, "softmax"), 1);
    assert_eq!(g.count(OpKind::EwmulCc, "softmax"), 6);
}

#[test]
fn gelu_has_three_comparisons_and_three_selections() {
    let g = bert();
    assert_eq!(g.count(OpKind::Cmp, "gelu"), 3);
    assert_eq!(g.count(OpKind::Mux, "gelu"), 3);
}

#[test]
fn each_layernorm_has_a_single_nonlinear_node() {
    let g = bert();
    for group in ["layernorm1", "layernorm2"] {
        let nl: Vec<_> = g.nodes.iter().filter(|n| n.group == group && !n.category().is_linear()).collect();
        assert_eq!(nl.len(), 1);
        assert_eq!(nl[0].op, OpKind::Rsqrt);
    }
}

#[test]
fn bert_block_fuses_into_five_blocks() {
    let g = bert();
    let p = plan_blocks(&g, &presets()).unwrap();
    p.validate(&g).unwrap();
    assert_eq!(p.blocks.len(), 5);
    let mut depths: Vec<usize> = p.blocks.iter().map(|b| b.depth).collect();
    depths.sort_unstable();
    let mut budget: Vec<usize> = presets().iter().map(|p| p.depth).collect();
    budget.sort_unstable();
    assert!(depths.iter().zip(&budget).all(|(d, b)| d <= b), "{depths:?} vs {budget:?}");
    assert_eq!(depths, [3, 6, 7, 7, 7]);
}

#[test]
fn layernorm_tail_fc_and_gelu_head_share_a_block() {
    let g = bert();
    let p = plan_blocks(&g, &presets()).unwrap();
    let want = ["ln1_gamma", "ln1_out", "fc1", "fc1_out", "gelu_x2", "gelu_x3", "gelu_x4"];
    let b = p.block_of(g.nodes.iter().position(|n| n.name == "fc1").unwrap()).unwrap();
    let got = names(&g, &p.blocks[b].nodes);
    for w in want {
        assert!(got.iter().any(|n| n == w), "{w} missing from {got:?}");
    }
}

#[test]
fn residual_adds_sit_inside_blocks() {
    let g = bert();
    let p = plan_blocks(&g, &presets()).unwrap();
    for name in ["residual1", "residual2"] {
        let i = g.nodes.iter().position(|n| n.name == name).unwrap();
        assert!(p.block_of(i).is_some(), "{name}");
    }
}

#[test]
fn output_layernorm_tail_is_carried_into_the_first_block() {
    let g = bert();
    let p = plan_blocks(&g, &presets()).unwrap();
    assert_eq!(names(&g, &p.blocks[0].carried), ["ln2_norm", "ln2_gamma", "ln2_out"]);
    assert_eq!(p.blocks[0].depth, 7);
}

#[test]
fn single_nonlinear_node_gives_no_blocks() {
    let g = parse_graph("input x 4x4\ny rsqrt x\n").unwrap();
    let p = plan_blocks(&g, &presets()).unwrap();
    assert!(p.blocks.is_empty());
    assert_eq!(p.segments, [Segment::Mpc(MpcSegment { nodes: alloc::vec![0] })]);
    assert!(p.conversions.is_empty());
}

#[test]
fn planning_is_deterministic() {
    let g = bert();
    assert_eq!(plan_blocks(&g, &presets()).unwrap(), plan_blocks(&g, &presets()).unwrap());
}

#[test]
fn shallow_presets_are_reported_with_the_block() {
    let g = bert();
    let shallow: Vec<_> = presets().into_iter().map(|mut p| {
        p.depth = 3;
        p
    }).collect();
    match plan_blocks(&g, &shallow) {
        Err(Error::Planning(msg)) => assert!(msg.contains("scores"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn fusion_removes_truncations_and_conversions() {
    let g = bert();
    let cfg = CostConfig::new(presets());
    let c = compare_estimates(&g, &cfg).unwrap();
    assert_eq!(c.fused.truncations, 0);
    assert_eq!(c.fused.truncations_between_linear, 0);
    assert!(c.unfused.truncations_between_linear > 0);
    assert!(c.fused.to_he.count < c.unfused.to_he.count);
    assert!(c.fused.to_mpc.count < c.unfused.to_mpc.count);
    assert!(c.byte_ratio <= 1.0 / 1.5, "{}", c.byte_ratio);
}

#[test]
fn every_boundary_has_one_conversion_per_direction() {
    let g = bert();
    let p = plan_blocks(&g, &presets()).unwrap();
    let mut seen = alloc::collections::BTreeSet::new();
    for c in &p.conversions {
        assert!(seen.insert((c.value, c.block, c.direction == Direction::ToHe)), "{c:?}");
    }
    for (i, n) in g.nodes.iter().enumerate() {
        if let Some(b) = p.block_of(i) {
            for &v in &n.inputs {
                let inside = matches!(v, Value::Node(j) if p.block_of(j) == Some(b));
                let conv = p.conversions.iter().any(|c| c.value == v && c.block == b && c.direction == Direction::ToHe);
                assert_eq!(conv, !inside, "{} input {}", n.name, g.value_name(v));
            }
        }
    }
}

#[test]
fn text_form_round_trips() {
    let g = bert();
    assert_eq!(parse_graph(&g.to_text()).unwrap(), g);
}

#[test]
fn text_errors_name_the_line() {
    let e = parse_graph("input x 4x4\ny frobnicate x\n").unwrap_err();
    assert!(e.to_string().contains("line 2"), "{e}");
    assert!(parse_graph("input x 4x4\ny ewadd_cc x z\n").is_err());
    assert!(parse_graph("input x 4x4\ny ewmul_cp x\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plans_stay_legal_and_within_presets(m in 1usize..40, dh in 1usize..12, heads in 1usize..5) {
        let g = decompose_block(BlockDims { m, d: dh * heads, heads }).unwrap();
        let p = plan_blocks(&g, &presets()).unwrap();
        p.validate(&g).unwrap();
        prop_assert_eq!(p.blocks.len(), 5);
        prop_assert_eq!(&p, &plan_blocks(&g, &presets()).unwrap());
        for b in &p.blocks {
            prop_assert!(b.depth <= b.preset_depth);
        }
    }
}
