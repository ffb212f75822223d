use std::f64::consts::PI;

use nwformer::construction::{
    build_interaction_head, build_kernel_transformer, clipped_heads, diagnose, interaction_constant,
    lemmas, verify_equivalence, InteractionRequest, KernelTransformer,
};
use nwformer::kernel::{bandwidth_for, nw_estimate, Bandwidth};
use nwformer::manifold::{
    generate_task, make_holder_function, IsometricEmbedding, Manifold, ManifoldKind, Prompt,
};
use nwformer::sparse::SparseMatrix;
use nwformer::transformer::{
    attention_apply, attention_apply_dense, forward, forward_traced, Activation, TransformerSpec,
};

fn prompt_for(m: &Manifold, dim: usize, n: usize, seed: u64) -> Prompt {
    let f = make_holder_function(m, 1.0, 1.0, 1.0, 8, seed).unwrap();
    let e = IsometricEmbedding::random(m.base_ambient_dim(), dim, seed + 1).unwrap();
    generate_task(m, &e, &f, n, seed + 2).unwrap()
}

fn build(m: &Manifold, n: usize, dim: usize, h: f64) -> KernelTransformer {
    build_kernel_transformer(n, dim, Bandwidth::new(h).unwrap(), m.coord_bound(), 1.0, 2.0).unwrap()
}

#[test]
fn matches_direct_estimator_on_every_manifold() {
    for kind in ManifoldKind::ALL {
        let m = Manifold::new(kind, 1.0).unwrap();
        for (n, dim) in [(1, 5), (4, 5), (16, 10), (64, 30)] {
            let h = bandwidth_for(n, 1.0, m.intrinsic_dim()).unwrap().get().min(0.9);
            let kt = build(&m, n, dim, h);
            for s in 0..4 {
                let p = prompt_for(&m, dim, n, 100 * s + n as u64);
                let eq = verify_equivalence(&kt.spec, &p, Bandwidth::new(h).unwrap()).unwrap();
                assert!(eq.rel_diff <= 1e-9, "{kind:?} n={n} D={dim}: {eq:?}");
            }
        }
    }
}

#[test]
fn single_point_prompt_returns_its_label() {
    let m = Manifold::sphere(1.0);
    let kt = build(&m, 1, 6, 0.3);
    let p = prompt_for(&m, 6, 1, 3);
    let y = p.labels()[0];
    assert!((forward(&kt.spec, &p).unwrap() - y).abs() <= 1e-9 * y.abs().max(1.0));
}

#[test]
fn pruned_attention_is_bit_identical_to_dense() {
    let m = Manifold::circle(1.0);
    let (n, dim) = (6, 4);
    let kt = build(&m, n, dim, 0.4);
    let p = prompt_for(&m, dim, n, 9);
    let trace = forward_traced(&kt.spec, &p).unwrap();
    for (b, block) in kt.spec.blocks.iter().enumerate() {
        for head in block.heads.iter().filter(|h| h.activation == Activation::Relu) {
            let fast = attention_apply(head, &trace.stages[b]).unwrap();
            let dense = attention_apply_dense(head, &trace.stages[b]).unwrap();
            assert_eq!(fast, dense, "block {}", b + 1);
        }
    }
}

/// Intermediate matrices recomputed from the prompt alone.
#[test]
fn stage_contract() {
    let m = Manifold::clifford_torus(1.0);
    let (n, dim, h) = (12, 7, 0.35);
    let kt = build(&m, n, dim, h);
    let (m1, m2) = (kt.constants.m_copy, kt.constants.m_offset);
    for s in 0..100 {
        let p = prompt_for(&m, dim, n, 7000 + s);
        let t = forward_traced(&kt.spec, &p).unwrap();
        let xq = p.query();
        for j in 0..n {
            let c = n + 1 + j;
            let xj = &p.points()[j];
            let sq: f64 = (0..dim).map(|i| (xq[i] - xj[i]).powi(2)).sum();
            for i in 0..dim {
                assert!((t.stages[1].get(i, c) - xq[i]).abs() <= 1e-9);
                assert!((t.stages[2].get(i, c) - (xq[i] - xj[i])).abs() <= 1e-9);
            }
            assert!((t.stages[3].get(dim, c) - (m2 - sq / (h * h))).abs() <= 1e-9);
            assert!((t.stages[4].get(dim, c) + sq / (h * h)).abs() <= 1e-9);
            assert!((t.stages[4].get(dim + 1, c) - p.labels()[j]).abs() <= 1e-9);
        }
        // Static rows never move and the non-scratch columns are untouched
        // until the readout.
        for k in 1..=5 {
            for c in 0..2 * n + 1 {
                for r in dim + 2..dim + 5 {
                    assert_eq!(t.stages[k].get(r, c), t.stages[0].get(r, c));
                }
                if c < n || (c == n && k < 5) {
                    for r in 0..dim + 2 {
                        assert_eq!(t.stages[k].get(r, c), t.stages[0].get(r, c));
                    }
                }
            }
        }
        assert!(m1 > m.coord_bound());
    }
}

#[test]
fn intended_relu_inputs_are_never_clipped() {
    let m = Manifold::sphere(1.0);
    let kt = build(&m, 10, 6, 0.3);
    for s in 0..5 {
        assert!(clipped_heads(&kt, &prompt_for(&m, 6, 10, s)).unwrap().is_empty());
    }
}

#[test]
fn builds_are_universal_and_serialise_exactly() {
    let m = Manifold::circle(1.0);
    let a = build(&m, 8, 5, 0.25);
    let b = build(&m, 8, 5, 0.25);
    let ja = a.spec.to_json().unwrap();
    assert_eq!(ja, b.spec.to_json().unwrap());
    let back = TransformerSpec::from_json(&ja).unwrap();
    assert_eq!(back, a.spec);
    let p = prompt_for(&m, 5, 8, 1);
    assert_eq!(
        forward(&back, &p).unwrap().to_bits(),
        forward(&a.spec, &p).unwrap().to_bits()
    );
}

#[test]
fn forward_ignores_hidden_label_and_is_deterministic() {
    let m = Manifold::circle(1.0);
    let kt = build(&m, 5, 5, 0.3);
    let p = prompt_for(&m, 5, 5, 4);
    let a = forward(&kt.spec, &p).unwrap();
    assert_eq!(a.to_bits(), forward(&kt.spec, &p).unwrap().to_bits());
    let q = p.clone().with_hidden_label(123.0);
    assert_eq!(a.to_bits(), forward(&kt.spec, &q).unwrap().to_bits());
}

#[test]
fn perturbed_weight_is_detected() {
    let m = Manifold::circle(1.0);
    let (n, dim, h) = (6, 5, 0.4);
    let kt = build(&m, n, dim, h);
    let mut spec = kt.spec.clone();
    // Scale of the squared-distance logit of the first scratch column.
    let head = &mut spec.blocks[2].heads[0];
    let e = head.q.entries_mut().iter_mut().find(|e| e.0 == 0 && e.1 == 0).unwrap();
    e.2 += 1e-3;
    let worst = (0..20)
        .map(|s| {
            let p = prompt_for(&m, dim, n, s);
            verify_equivalence(&spec, &p, Bandwidth::new(h).unwrap()).unwrap().rel_diff
        })
        .fold(0.0, f64::max);
    assert!(worst > 1e-9, "mutation went unnoticed: {worst}");
}

#[test]
fn kappa_grows_as_bandwidth_shrinks() {
    let m = Manifold::circle(1.0);
    let a = build(&m, 8, 5, 0.4);
    let b = build(&m, 8, 5, 0.2);
    assert!(b.spec.arch.kappa > a.spec.arch.kappa);
    assert_eq!(a.spec.arch.num_blocks, 5);
    assert_eq!(a.spec.arch.ffn_depth, 6);
}

#[test]
fn unsafe_constants_are_diagnosed() {
    let m = Manifold::circle(1.0);
    let (n, dim, h) = (16, 5, 0.3);
    let kt = build_kernel_transformer(n, dim, Bandwidth::new(h).unwrap(), 1.0, 1.0, 0.1).unwrap();
    let p = prompt_for(&m, dim, n, 2);
    let failure = diagnose(&kt, &p, 1e-9).unwrap().expect("unsafe build must break a stage");
    assert_eq!(failure.block, 1);
    assert!(failure.lemma.contains("decrementing"), "{failure}");

    let safe = build(&m, n, dim, h);
    assert!(diagnose(&safe, &p, 1e-9).unwrap().is_none());
}

/// Oracle: the two proof cases enumerated over the token grid.
fn enumerated_constant(d: usize, len: usize, kappa: f64, u: f64, safety: f64) -> f64 {
    let step = PI / (2.0 * len as f64);
    let num = (d as f64).powi(4) * kappa * kappa * u * u;
    let mut best = 0.0f64;
    for t2 in 1..=len {
        for k in 1..=len {
            if k != t2 {
                let proj = ((k as f64 - t2 as f64) * step).cos().abs();
                best = best.max(num / (1.0 - proj));
            }
        }
    }
    for t1 in 1..=len {
        for t in 1..=len {
            if t != t1 {
                let theta = (t as f64 - t1 as f64) * step;
                best = best.max(num / (1.0 - theta.cos()));
            }
        }
    }
    safety * best
}

fn request(d: usize, len: usize, kappa: f64, u: f64) -> InteractionRequest {
    InteractionRequest {
        t1: 0,
        t2: len - 1,
        value_row: 0,
        q_data: SparseMatrix::zeros(d - 3, d),
        k_data: SparseMatrix::zeros(d - 3, d),
        len,
        u_bound: u,
        kappa_data: kappa,
        safety_factor: 2.0,
    }
}

#[test]
fn interaction_constant_matches_enumeration() {
    let c = interaction_constant(&request(7, 3, 1.0, 1.0));
    // 2 · 7⁴ / (1 − cos(π/6))
    assert!((c - 35_842.615_956).abs() < 1e-4, "{c}");
    for (d, len, kappa, u) in [(7, 3, 1.0, 1.0), (9, 17, 2.5, 3.0), (15, 129, 4.0, 8.0)] {
        let want = enumerated_constant(d, len, kappa, u, 2.0);
        let got = interaction_constant(&request(d, len, kappa, u));
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
    let base = interaction_constant(&request(9, 40, 2.0, 1.5));
    assert!((interaction_constant(&request(9, 40, 2.0, 3.0)) / base - 4.0).abs() < 1e-12);
    let ratio = interaction_constant(&request(9, 80, 2.0, 1.5)) / base;
    assert!((ratio - 4.0).abs() < 0.01, "{ratio}");
}

#[test]
fn copy_head_carries_offset_value() {
    let m = Manifold::circle(1.0);
    let p = prompt_for(&m, 5, 3, 8);
    let h0 = nwformer::transformer::embed_prompt(&p);
    let (d, n, mm) = (10, 3, 2.0);
    let req = InteractionRequest {
        t1: n + 1,
        t2: n,
        value_row: 2,
        q_data: SparseMatrix::from_triplets(d - 3, d, vec![(2, d - 1, 1.0)]).unwrap(),
        k_data: SparseMatrix::from_triplets(d - 3, d, vec![(2, 2, 1.0), (2, d - 1, mm)]).unwrap(),
        len: 2 * n + 1,
        u_bound: 1.0,
        kappa_data: mm,
        safety_factor: 2.0,
    };
    let out = attention_apply(&build_interaction_head(&req).unwrap(), &h0).unwrap();
    assert_eq!(out.get(2, n + 1), p.query()[2] + mm);
    let zero = InteractionRequest {
        q_data: SparseMatrix::zeros(d - 3, d),
        ..req
    };
    let out = attention_apply(&build_interaction_head(&zero).unwrap(), &h0).unwrap();
    assert_eq!(out, nwformer::transformer::TokenMatrix::zeros(d, 2 * n + 1));
}

#[test]
fn lemma_suites_pass_and_catch_faults() {
    for o in lemmas::run_all(200, 5, None) {
        assert!(o.passed(), "{o:?}");
    }
    let broken = lemmas::gating_suite(50, 5, Some(lemmas::Fault::GatingOffByOne));
    assert!(!broken.passed());
}

#[test]
fn direct_estimator_sanity() {
    let m = Manifold::circle(1.0);
    let p = prompt_for(&m, 3, 30, 1);
    let v = nw_estimate(&p, Bandwidth::new(0.2).unwrap());
    let (lo, hi) = p
        .labels()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    assert!(lo <= v && v <= hi);
}

#[test]
fn encoding_is_bit_stable_across_call_sites() {
    for len in [3usize, 129, 1401, 2049, 4097] {
        let h = nwformer::transformer::TokenMatrix::with_static_rows(6, len).unwrap();
        for c in 0..len {
            let (cs, sn) = nwformer::transformer::positional_encoding(c + 1, len).unwrap();
            assert_eq!((cs.to_bits(), sn.to_bits()), (h.get(3, c).to_bits(), h.get(4, c).to_bits()));
        }
    }
}

#[test]
fn huge_constants_still_cancel() {
    let m = Manifold::sphere(1.0);
    for n in [700, 1024] {
        let h = bandwidth_for(n, 1.0, 2).unwrap();
        let kt = build_kernel_transformer(n, 5, h, m.coord_bound(), 1.0, 2.0).unwrap();
        let p = prompt_for(&m, 5, n, 3);
        let eq = verify_equivalence(&kt.spec, &p, h).unwrap();
        assert!(eq.rel_diff <= 1e-9, "n={n}: {eq:?}");
    }
}
