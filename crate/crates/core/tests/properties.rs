use proptest::prelude::*;

use nwformer::construction::build_kernel_transformer;
use nwformer::experiments::fit_loglog_slope;
use nwformer::kernel::{nw_estimate, Bandwidth};
use nwformer::manifold::{
    generate_task, make_holder_function, sample_uniform, squared_distance, IsometricEmbedding,
    Manifold, ManifoldKind, Prompt,
};
use nwformer::sparse::SparseMatrix;
use nwformer::transformer::{
    attention_apply, attention_apply_dense, attention_softmax_masked, embed_prompt, forward,
    forward_traced, Activation, AttentionHead, TokenMatrix, TransformerSpec,
};

fn kind() -> impl Strategy<Value = ManifoldKind> {
    prop_oneof![
        Just(ManifoldKind::Circle),
        Just(ManifoldKind::Sphere2),
        Just(ManifoldKind::CliffordTorus2),
    ]
}

fn prompt(k: ManifoldKind, dim_extra: usize, n: usize, seed: u64) -> (Manifold, Prompt) {
    let m = Manifold::new(k, 1.0).unwrap();
    let f = make_holder_function(&m, 1.0, 1.0, 1.0, 6, seed).unwrap();
    let e = IsometricEmbedding::random(m.base_ambient_dim(), m.base_ambient_dim() + dim_extra, seed + 1).unwrap();
    (m, generate_task(&m, &e, &f, n, seed + 2).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn geodesic_is_a_metric(k in kind(), seed in 0u64..10_000) {
        let m = Manifold::new(k, 1.3).unwrap();
        let p = sample_uniform(&m, 3, seed).unwrap();
        let d = |a: &[f64], b: &[f64]| m.geodesic_distance(a, b).unwrap();
        prop_assert!(d(&p[0], &p[0]).abs() < 1e-7);
        prop_assert!((d(&p[0], &p[1]) - d(&p[1], &p[0])).abs() < 1e-12);
        prop_assert!(d(&p[0], &p[2]) <= d(&p[0], &p[1]) + d(&p[1], &p[2]) + 1e-12);
        prop_assert!(squared_distance(&p[0], &p[1]).sqrt() <= d(&p[0], &p[1]) + 1e-12);
    }

    #[test]
    fn targets_are_holder(k in kind(), alpha in 0.2f64..=1.0, seed in 0u64..10_000) {
        let m = Manifold::new(k, 1.0).unwrap();
        let f = make_holder_function(&m, 1.5, alpha, 1.0, 5, seed).unwrap();
        let p = sample_uniform(&m, 2, seed + 7).unwrap();
        let gap = (f.eval(&p[0]).unwrap() - f.eval(&p[1]).unwrap()).abs();
        let dist = m.geodesic_distance(&p[0], &p[1]).unwrap();
        prop_assert!(gap <= 1.5 * dist.powf(alpha) + 1e-12);
        prop_assert!(f.eval(&p[0]).unwrap().abs() <= 1.0);
    }

    #[test]
    fn embedding_is_isometric(k in kind(), extra in 0usize..40, seed in 0u64..10_000) {
        let m = Manifold::new(k, 1.0).unwrap();
        let e = IsometricEmbedding::random(m.base_ambient_dim(), m.base_ambient_dim() + extra, seed).unwrap();
        let p = sample_uniform(&m, 2, seed).unwrap();
        let (a, b) = (e.embed(&p[0]).unwrap(), e.embed(&p[1]).unwrap());
        prop_assert!((squared_distance(&a, &b) - squared_distance(&p[0], &p[1])).abs() < 1e-12);
    }

    #[test]
    fn estimate_stays_in_label_hull(k in kind(), n in 1usize..60, h in 0.02f64..0.9, seed in 0u64..10_000) {
        let (_, p) = prompt(k, 2, n, seed);
        let v = nw_estimate(&p, Bandwidth::new(h).unwrap());
        let lo = p.labels().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.labels().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= v && v <= hi);
    }

    #[test]
    fn estimate_is_frame_and_shift_equivariant(k in kind(), n in 2usize..40, shift in -5.0f64..5.0, seed in 0u64..10_000) {
        let m = Manifold::new(k, 1.0).unwrap();
        let f = make_holder_function(&m, 1.0, 1.0, 1.0, 6, seed).unwrap();
        let base = sample_uniform(&m, n + 1, seed).unwrap();
        let h = Bandwidth::new(0.3).unwrap();
        let embed = |s: u64| {
            let e = IsometricEmbedding::random(m.base_ambient_dim(), 9, s).unwrap();
            nwformer::manifold::ManifoldTask::new(e, f.clone()).unwrap().prompt_from_base(&base).unwrap()
        };
        let (a, b) = (embed(seed), embed(seed + 99));
        prop_assert!((nw_estimate(&a, h) - nw_estimate(&b, h)).abs() <= 1e-10);
        let ys: Vec<f64> = a.labels().iter().map(|y| y + shift).collect();
        let shifted = Prompt::new(a.all_points().to_vec(), ys, 0.0).unwrap();
        prop_assert!((nw_estimate(&shifted, h) - nw_estimate(&a, h) - shift).abs() <= 1e-12);
    }

    #[test]
    fn relu_attention_is_linear_in_v(seed in 0u64..10_000, scale in -3.0f64..3.0) {
        let (_, p) = prompt(ManifoldKind::Circle, 2, 5, seed);
        let h = embed_prompt(&p);
        let d = h.rows();
        let q = SparseMatrix::from_triplets(d, d, vec![(0, 0, 1.0), (1, 1, 0.5), (d - 1, d - 1, 0.2)]).unwrap();
        let k = SparseMatrix::from_triplets(d, d, vec![(0, 0, 1.0), (1, 1, 1.0), (d - 1, d - 1, 1.0)]).unwrap();
        let v = SparseMatrix::from_triplets(d, d, vec![(2, 0, 1.0), (3, d - 1, -0.5)]).unwrap();
        let base = attention_apply(&AttentionHead::relu(q.clone(), k.clone(), v.clone()), &h).unwrap();
        let scaled = attention_apply(&AttentionHead::relu(q, k, v.scaled(scale)), &h).unwrap();
        for c in 0..h.cols() {
            for r in 0..d {
                prop_assert!((scaled.get(r, c) - scale * base.get(r, c)).abs() <= 1e-12 * (1.0 + base.get(r, c).abs()));
            }
        }
    }

    #[test]
    fn softmax_weights_sum_to_one(seed in 0u64..10_000, n in 1usize..12) {
        let (_, p) = prompt(ManifoldKind::Sphere2, 1, n, seed);
        let h = embed_prompt(&p);
        let d = h.rows();
        let q = SparseMatrix::from_triplets(d, d, vec![(0, 0, 3.0), (1, 1, -2.0)]).unwrap();
        let k = SparseMatrix::from_triplets(d, d, vec![(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        // Value reads the ones row, so the output is the sum of the weights.
        let v = SparseMatrix::from_triplets(d, d, vec![(0, d - 1, 1.0)]).unwrap();
        let mask: Vec<usize> = (0..n).collect();
        let head = AttentionHead {
            q, k, v,
            activation: Activation::SoftmaxMasked { query: n, mask },
            interaction: None,
        };
        let out = attention_softmax_masked(&head, &h, n).unwrap();
        prop_assert!((out.get(0, n) - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn sparse_matches_dense(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| if (i as u64 + seed) % 3 == 0 { 0.0 } else { ((i as u64 * 7919 + seed) % 13) as f64 - 6.0 })
            .collect();
        let m = SparseMatrix::from_dense(rows, cols, &data).unwrap();
        prop_assert_eq!(m.to_dense(), data.clone());
        let x: Vec<f64> = (0..cols).map(|c| c as f64 - 1.5).collect();
        let y = m.mul_vec(&x);
        for r in 0..rows {
            let want: f64 = (0..cols).map(|c| data[r * cols + c] * x[c]).sum();
            prop_assert!((y[r] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn loglog_fit_recovers_power(expo in -3.0f64..3.0, c in 0.1f64..10.0) {
        let pts: Vec<_> = (1..=6).map(|i| {
            let x = 1.7f64.powi(i);
            (x, c * x.powf(expo))
        }).collect();
        prop_assert!((fit_loglog_slope(&pts).unwrap().slope - expo).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn compiled_network_computes_the_estimator(
        k in kind(),
        n in 1usize..48,
        extra in 0usize..8,
        h in 0.15f64..0.9,
        seed in 0u64..10_000,
    ) {
        let (m, p) = prompt(k, extra, n, seed);
        let dim = p.ambient_dim();
        let bw = Bandwidth::new(h).unwrap();
        let kt = build_kernel_transformer(n, dim, bw, m.coord_bound(), 1.0, 2.0).unwrap();
        let y = forward(&kt.spec, &p).unwrap();
        let want = nw_estimate(&p, bw);
        prop_assert!((y - want).abs() <= 1e-9 * want.abs().max(1e-300) || (y - want).abs() <= 1e-12,
            "transformer {y} vs direct {want}");
        // The hidden label never reaches the output.
        let q = p.clone().with_hidden_label(1e6);
        prop_assert_eq!(forward(&kt.spec, &q).unwrap().to_bits(), y.to_bits());
    }

    #[test]
    fn static_rows_survive_every_block(k in kind(), n in 1usize..24, seed in 0u64..10_000) {
        let (m, p) = prompt(k, 1, n, seed);
        let kt = build_kernel_transformer(n, p.ambient_dim(), Bandwidth::new(0.4).unwrap(), m.coord_bound(), 1.0, 2.0).unwrap();
        let t = forward_traced(&kt.spec, &p).unwrap();
        for st in &t.stages {
            prop_assert!(st.has_canonical_static_rows());
        }
    }

    #[test]
    fn pruning_never_changes_a_head(n in 1usize..16, seed in 0u64..10_000) {
        let (m, p) = prompt(ManifoldKind::CliffordTorus2, 0, n, seed);
        let kt = build_kernel_transformer(n, p.ambient_dim(), Bandwidth::new(0.5).unwrap(), m.coord_bound(), 1.0, 2.0).unwrap();
        let t = forward_traced(&kt.spec, &p).unwrap();
        for (b, block) in kt.spec.blocks.iter().enumerate() {
            for head in block.heads.iter().filter(|h| h.activation == Activation::Relu) {
                prop_assert_eq!(
                    attention_apply(head, &t.stages[b]).unwrap(),
                    attention_apply_dense(head, &t.stages[b]).unwrap()
                );
            }
        }
    }

    #[test]
    fn spec_json_round_trips(n in 1usize..10, dim in 2usize..6, h in 0.1f64..0.9) {
        let kt = build_kernel_transformer(n, dim, Bandwidth::new(h).unwrap(), 1.0, 1.0, 2.0).unwrap();
        let back = TransformerSpec::from_json(&kt.spec.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, kt.spec);
    }
}

#[test]
fn zero_block_network_reads_the_decoder_cell() {
    let (_, p) = prompt(ManifoldKind::Circle, 1, 3, 5);
    let d = p.ambient_dim() + 5;
    let spec = TransformerSpec::new(Vec::new(), (0, 1), d, 2 * 3 + 1, 1.0).unwrap();
    assert_eq!(forward(&spec, &p).unwrap(), p.points()[1][0]);
    let h: TokenMatrix = embed_prompt(&p);
    assert_eq!(h.get(d - 1, 6), 1.0);
}
