use super::*;
use crate::geometry::FrameId;
use crate::numerics::{grad_check, LayerSpec};
use approx::assert_relative_eq;
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> MatcherConfig {
    MatcherConfig {
        capacity: 4,
        appearance_dim: 3,
        embedding_dim: 2,
        scorer_hidden: vec![6, 6, 5, 5, 4],
        pose_hidden: vec![5],
        seed: 11,
        ..MatcherConfig::default()
    }
}

fn random_descriptor(rng: &mut ChaCha8Rng, cfg: &MatcherConfig) -> ObjectDescriptor {
    let pose = Pose5D::new(
        Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(1.0..30.0)),
        Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)),
        FrameId::Reference,
    )
    .unwrap();
    let app: Vec<f64> = (0..cfg.appearance_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..cfg.embedding_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    build_descriptor(&app, &pose, &g).unwrap()
}

fn matrix(capacity: usize, n1: usize, n2: usize, pairs: &[(usize, usize)]) -> MatchMatrix {
    let mut m = MatchMatrix::zeros(capacity, n1, n2);
    for &(i, j) in pairs {
        m.set(i, j, 1);
    }
    for i in 0..n1 {
        if !pairs.iter().any(|p| p.0 == i) {
            m.set(i, capacity, 1);
        }
    }
    for j in 0..n2 {
        if !pairs.iter().any(|p| p.1 == j) {
            m.set(capacity, j, 1);
        }
    }
    m.validate().unwrap();
    m
}

fn bundle_from_values(values: Vec<f64>, n: usize, n1: usize, n2: usize, delta: f64, axis: SoftmaxAxis) -> SimilarityBundle {
    let v = Tensor::new(vec![n, n], values).unwrap();
    let s = Tensor::new(vec![n, n], v.data().iter().map(|&z| sigmoid(z)).collect()).unwrap();
    augment_normalize(&s, &v, delta, n1, n2, ScoreSpace::Logit, axis).unwrap()
}

#[test]
fn descriptor_layout() {
    let pose = Pose5D::new(Vector3::new(1.0, 2.0, 3.0), Vector2::new(0.6, 0.8), FrameId::Reference).unwrap();
    let d = build_descriptor(&vec![0.0; 500], &pose, &vec![0.0; 128]).unwrap();
    assert_eq!(d.dim(), 634);
    let f = d.fused();
    assert_eq!(&f[..6], &[1.0, 2.0, 3.0, 0.6, 0.8, 0.0]);
    assert!(f[6..].iter().all(|&v| v == 0.0));
    assert_eq!(d.embedding().len(), 128);
    let cam = Pose5D { frame: FrameId::Camera(0), ..pose };
    assert!(matches!(build_descriptor(&[], &cam, &[]), Err(MatchingError::FrameMismatch(FrameId::Camera(0)))));
}

#[test]
fn feature_matrix_padding() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = cfg.descriptor_dim();
    let empty = build_feature_matrix(&[], 4, d).unwrap();
    assert!(empty.data().iter().all(|&v| v == 0.0));
    let two: Vec<_> = (0..2).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let fm = build_feature_matrix(&two, 4, d).unwrap();
    assert_eq!(fm.lane(&[1]), two[1].fused().as_slice());
    assert!(fm.lane(&[2]).iter().chain(fm.lane(&[3])).all(|&v| v == 0.0));
    let full: Vec<_> = (0..4).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let fm = build_feature_matrix(&full, 4, d).unwrap();
    assert!(fm.lane(&[3]).iter().any(|&v| v != 0.0));
    let five: Vec<_> = (0..5).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    assert!(matches!(build_feature_matrix(&five, 4, d), Err(MatchingError::CapacityExceeded { count: 5, capacity: 4 })));
}

#[test]
fn pair_tensor_layout_and_swap() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = cfg.descriptor_dim();
    let a: Vec<_> = (0..3).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let b: Vec<_> = (0..2).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let fa = build_feature_matrix(&a, 4, d).unwrap();
    let fb = build_feature_matrix(&b, 4, d).unwrap();
    let e = build_pair_tensor(&fa, &fb).unwrap();
    let et = build_pair_tensor(&fb, &fa).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let v = e.lane(&[i, j]);
            assert_eq!(&v[..d], fa.lane(&[i]));
            assert_eq!(&v[d..], fb.lane(&[j]));
            let w = et.lane(&[j, i]);
            assert_eq!(&w[..d], &v[d..]);
            assert_eq!(&w[d..], &v[..d]);
        }
    }
    let one = build_feature_matrix(&a[..1], 1, d).unwrap();
    let e1 = build_pair_tensor(&one, &one).unwrap();
    assert_eq!(e1.shape(), &[1, 1, 2 * d]);
    assert!(matches!(build_pair_tensor(&fa, &Tensor::zeros(&[3, d])), Err(MatchingError::ShapeMismatch(_))));
}

#[test]
fn scorer_locality() {
    let cfg = small_config();
    let m = Matcher::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = cfg.descriptor_dim();
    let a: Vec<_> = (0..4).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let mut b: Vec<_> = (0..4).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let fa = build_feature_matrix(&a, 4, d).unwrap();
    let before = score_pairs(&build_pair_tensor(&fa, &build_feature_matrix(&b, 4, d).unwrap()).unwrap(), &m.scorer).unwrap();
    b[2].appearance[0] += 0.5;
    let after = score_pairs(&build_pair_tensor(&fa, &build_feature_matrix(&b, 4, d).unwrap()).unwrap(), &m.scorer).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let (x, y) = (before.get(&[i, j]), after.get(&[i, j]));
            if j == 2 {
                assert_ne!(x, y);
            } else {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert!(x > 0.0 && x < 1.0);
        }
    }
}

#[test]
fn zero_final_layer_gives_sigmoid_of_bias() {
    let cfg = small_config();
    let m = Matcher::new(cfg.clone()).unwrap();
    let mut layers: Vec<LayerSpec> = m.scorer.layers();
    let last = layers.last_mut().unwrap();
    last.weights.iter_mut().for_each(|w| *w = 0.0);
    last.bias = vec![0.7];
    let scorer = Mlp::from_layers(layers).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = cfg.descriptor_dim();
    let a: Vec<_> = (0..2).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let f = build_feature_matrix(&a, 4, d).unwrap();
    let s = score_pairs(&build_pair_tensor(&f, &f).unwrap(), &scorer).unwrap();
    let want = 1.0 / (1.0 + (-0.7f64).exp());
    for v in s.data() {
        assert_relative_eq!(*v, want, epsilon = 1e-15);
    }
}

#[test]
fn two_entry_softmax_by_hand() {
    // softmax(s, δ) for s = 1, δ = 3: e^1 / (e^1 + e^3) = 1 / (1 + e^2)
    let b = bundle_from_values(vec![1.0], 1, 1, 1, 3.0, SoftmaxAxis::Candidates);
    let p = 1.0 / (1.0 + 2f64.exp());
    assert_relative_eq!(b.s1n.get(&[0, 0]), p, epsilon = 1e-15);
    assert_relative_eq!(b.s1n.get(&[0, 1]), 1.0 - p, epsilon = 1e-15);
    assert_relative_eq!(b.s2n.get(&[0, 0]), p, epsilon = 1e-15);
    assert_relative_eq!(b.s2n.get(&[1, 0]), 1.0 - p, epsilon = 1e-15);
    assert_relative_eq!(b.fused.get(&[0, 0]), p, epsilon = 1e-15);
    assert_relative_eq!(b.fused.get(&[0, 1]), 1.0 - p, epsilon = 1e-15);
    assert_relative_eq!(b.fused.get(&[1, 0]), 1.0 - p, epsilon = 1e-15);
    assert_eq!(b.fused.get(&[1, 1]), 0.0);
}

#[test]
fn very_negative_delta_removes_null() {
    let b = bundle_from_values(vec![0.3, -0.2, 0.1, 0.4], 2, 2, 2, -1e6, SoftmaxAxis::Candidates);
    for i in 0..2 {
        assert_eq!(b.s1n.get(&[i, 2]), 0.0);
        assert_eq!(b.s2n.get(&[2, i]), 0.0);
    }
}

#[test]
fn normalized_rows_and_columns_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 5;
    let vals: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-9.0..9.0)).collect();
    let b = bundle_from_values(vals, n, 3, 4, 8.0, SoftmaxAxis::Candidates);
    for i in 0..n {
        let row: f64 = (0..=n).map(|j| b.s1n.get(&[i, j])).sum();
        assert!((row - 1.0).abs() < 1e-12);
    }
    for j in 0..n {
        let col: f64 = (0..=n).map(|i| b.s2n.get(&[i, j])).sum();
        assert!((col - 1.0).abs() < 1e-12);
        for i in 0..n {
            assert_eq!(b.fused.get(&[i, j]), (b.s1n.get(&[i, j]) + b.s2n.get(&[i, j])) / 2.0);
        }
    }
}

#[test]
fn literal_axis_normalizes_the_other_way() {
    let b = bundle_from_values(vec![0.3, -0.2, 0.1, 0.4], 2, 2, 2, 1.0, SoftmaxAxis::Literal);
    for j in 0..3 {
        let col: f64 = (0..2).map(|i| b.s1n.get(&[i, j])).sum();
        assert!((col - 1.0).abs() < 1e-12);
    }
    for i in 0..3 {
        let row: f64 = (0..2).map(|j| b.s2n.get(&[i, j])).sum();
        assert!((row - 1.0).abs() < 1e-12);
    }
    assert_relative_eq!(b.s1n.get(&[0, 2]), 0.5, epsilon = 1e-15);
}

#[test]
fn affinity_loss_hand_values() {
    let m = matrix(1, 1, 1, &[(0, 0)]);
    let b = bundle_from_values(vec![8.0], 1, 1, 1, 8.0, SoftmaxAxis::Candidates);
    assert_relative_eq!(loss_affinity(&b, &m).unwrap(), 0.5f64.ln().abs(), epsilon = 1e-15);
    assert_relative_eq!(loss_affinity(&b, &m).unwrap(), 0.6931471805599453, epsilon = 1e-15);
    // Row 0 is certain of column 0; column 1 splits evenly between the
    // padded row and the null slot, so L2 = (0 + ln 2) / 2 and L = ln 2 / 4.
    let b = bundle_from_values(vec![1000.0, -1000.0, 0.0, 0.0], 2, 1, 2, 0.0, SoftmaxAxis::Candidates);
    let m = matrix(2, 1, 2, &[(0, 0)]);
    assert_relative_eq!(loss_affinity(&b, &m).unwrap(), 2f64.ln() / 4.0, epsilon = 1e-15);
}

#[test]
fn one_hot_bundle_has_zero_loss() {
    let n = 3;
    let mut vals = vec![-1000.0; n * n];
    vals[0] = 1000.0;
    vals[n + 1] = 1000.0;
    let b = bundle_from_values(vals, n, 2, 2, -1000.0, SoftmaxAxis::Candidates);
    let m = matrix(n, 2, 2, &[(0, 0), (1, 1)]);
    assert_eq!(loss_affinity(&b, &m).unwrap(), 0.0);
}

#[test]
fn degenerate_and_empty() {
    let b = bundle_from_values(vec![0.0; 4], 2, 2, 2, 8.0, SoftmaxAxis::Candidates);
    let mut m = MatchMatrix::zeros(2, 2, 2);
    m.set(0, 0, 1);
    assert!(matches!(loss_affinity(&b, &m), Err(MatchingError::DegenerateMatch(_))));
    let b = bundle_from_values(vec![0.0; 4], 2, 0, 0, 8.0, SoftmaxAxis::Candidates);
    assert_eq!(loss_affinity(&b, &MatchMatrix::zeros(2, 0, 0)).unwrap(), 0.0);
}

#[test]
fn joint_loss_fixture() {
    assert_relative_eq!(loss_joint(0.6931, &[1.0, 3.0, 2.0, 2.0], 0.005), 0.70310, epsilon = 1e-12);
    assert_eq!(loss_joint(0.6931, &[5.0], 0.0), 0.6931);
    assert_eq!(loss_joint(0.6931, &[0.0, 0.0], 0.005), 0.6931);
}

fn check_scorer_gradient(space: ScoreSpace, axis: SoftmaxAxis) {
    let cfg = MatcherConfig { score_space: space, softmax_axis: axis, delta: if space == ScoreSpace::Logit { 2.0 } else { 0.6 }, ..small_config() };
    let m = Matcher::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a: Vec<_> = (0..3).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let b: Vec<_> = (0..2).map(|_| random_descriptor(&mut rng, &cfg)).collect();
    let mm = matrix(4, 3, 2, &[(0, 1), (2, 0)]);
    let mut grads = vec![0.0; m.scorer.num_params()];
    m.affinity_backward(&a, &b, &mm, 1.0, &mut grads).unwrap();
    let f = |p: &[f64]| {
        let mut mc = m.clone();
        mc.scorer.params_mut().copy_from_slice(p);
        loss_affinity(&mc.similarity(&a, &b).unwrap(), &mm).unwrap()
    };
    let report = grad_check(f, m.scorer.params(), &grads, 1e-5, 1e-4);
    assert!(report.passed, "{space:?}/{axis:?}: max rel err {} at {} (analytic {})", report.max_rel_error, report.worst_index, grads[report.worst_index]);
}

#[test]
fn scorer_gradient_logit_candidates() {
    check_scorer_gradient(ScoreSpace::Logit, SoftmaxAxis::Candidates);
}

#[test]
fn scorer_gradient_probability_candidates() {
    check_scorer_gradient(ScoreSpace::Probability, SoftmaxAxis::Candidates);
}

#[test]
fn scorer_gradient_literal_axis() {
    check_scorer_gradient(ScoreSpace::Logit, SoftmaxAxis::Literal);
    check_scorer_gradient(ScoreSpace::Probability, SoftmaxAxis::Literal);
}

#[test]
fn pose_head_gradient() {
    let cfg = small_config();
    let m = Matcher::new(cfg.clone()).unwrap();
    let g = [0.3, -0.7];
    let target = [0.4, 0.6, 0.5, 0.6, 0.8];
    let mut grads = vec![0.0; m.pose_head.num_params()];
    m.pose_head.loss_grad(&g, &target, 0.1, 1.0, &mut grads).unwrap();
    let f = |p: &[f64]| {
        let mut h = m.pose_head.clone();
        h.set_params(p);
        crate::numerics::loss_pose(&target, &h.predict(&g).unwrap(), 0.1).value
    };
    let report = grad_check(f, &m.pose_head.params(), &grads, 1e-6, 1e-4);
    assert!(report.passed, "max rel err {}", report.max_rel_error);
}

#[test]
fn deduplicated_path_is_bit_identical_to_naive() {
    for space in [ScoreSpace::Logit, ScoreSpace::Probability] {
        let cfg = MatcherConfig { score_space: space, ..small_config() };
        let m = Matcher::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n1, n2) in [(0, 0), (1, 3), (4, 2), (4, 4), (2, 0)] {
            let a: Vec<_> = (0..n1).map(|_| random_descriptor(&mut rng, &cfg)).collect();
            let b: Vec<_> = (0..n2).map(|_| random_descriptor(&mut rng, &cfg)).collect();
            let fast = m.similarity(&a, &b).unwrap();
            let scale = |v: &[ObjectDescriptor]| -> Vec<ObjectDescriptor> {
                v.iter()
                    .map(|d| {
                        let mut d = d.clone();
                        d.geometry[..3].iter_mut().for_each(|x| *x /= cfg.translation_scale);
                        d
                    })
                    .collect()
            };
            let d = cfg.descriptor_dim();
            let e = build_pair_tensor(&build_feature_matrix(&scale(&a), 4, d).unwrap(), &build_feature_matrix(&scale(&b), 4, d).unwrap()).unwrap();
            let z = score_logits(&e, &m.scorer).unwrap();
            let s = score_pairs(&e, &m.scorer).unwrap();
            let values = if space == ScoreSpace::Logit { z } else { s.clone() };
            let slow = augment_normalize(&s, &values, cfg.delta, n1, n2, space, cfg.softmax_axis).unwrap();
            assert_eq!(fast, slow);
        }
    }
}

#[test]
fn random_ranking_ap_matches_closed_form() {
    // Exact expectation over all placements of k positives among n ranks,
    // against E[AP] = (1/n) Σ_r (1 + (r-1)(k-1)/(n-1)) / r.
    for (n, k) in [(5usize, 2usize), (6, 3), (7, 1), (4, 4)] {
        let mut total = 0.0;
        let mut count = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            total += average_precision(&scores, &labels).unwrap();
            count += 1.0;
        }
        let closed: f64 = (1..=n)
            .map(|r| {
                let extra = if n > 1 { (r - 1) as f64 * (k - 1) as f64 / (n - 1) as f64 } else { 0.0 };
                (1.0 + extra) / r as f64
            })
            .sum::<f64>()
            / n as f64;
        assert_relative_eq!(total / count, closed, epsilon = 1e-12);
    }
    assert_eq!(average_precision(&[0.9, 0.1, 0.8], &[true, false, true]), Some(1.0));
    assert_eq!(average_precision(&[0.9, 0.1], &[false, false]), None);
    // positive ranked second of two: precision 1/2
    assert_eq!(average_precision(&[0.9, 0.1], &[false, true]), Some(0.5));
}

#[test]
fn map_over_frame_pairs() {
    let good = bundle_from_values(vec![5.0, -5.0, -5.0, 5.0], 2, 2, 2, 0.0, SoftmaxAxis::Candidates);
    let bad = bundle_from_values(vec![-5.0, 5.0, 5.0, -5.0], 2, 2, 2, 0.0, SoftmaxAxis::Candidates);
    let m = matrix(2, 2, 2, &[(0, 0), (1, 1)]);
    let none = matrix(2, 2, 2, &[]);
    assert_eq!(match_accuracy_map(&[(good.clone(), m.clone())]), Some(1.0));
    // bad ranks the two positives 3rd and 4th: (1/3 + 2/4) / 2
    let expected = (1.0 + (1.0 / 3.0 + 0.5) / 2.0) / 2.0;
    assert_relative_eq!(
        match_accuracy_map(&[(good.clone(), m.clone()), (bad, m.clone()), (good.clone(), none.clone())]).unwrap(),
        expected,
        epsilon = 1e-15
    );
    assert_eq!(match_accuracy_map(&[(good, none)]), None);
}

#[test]
fn association_accuracy_counts_rows_and_columns() {
    let b = bundle_from_values(vec![9.0, -5.0, -5.0, -5.0], 2, 2, 2, 0.0, SoftmaxAxis::Candidates);
    assert_eq!(association_accuracy(&b, &matrix(2, 2, 2, &[(0, 0)])), (4, 4));
    assert_eq!(association_accuracy(&b, &matrix(2, 2, 2, &[(0, 0), (1, 1)])), (2, 4));
}

#[test]
fn checkpoint_round_trip_and_rejection() {
    let m = Matcher::new(small_config()).unwrap();
    let os = crate::numerics::SgdMomentum::new(m.scorer.num_params(), 0.9, 0.0008);
    let op = crate::numerics::SgdMomentum::new(m.pose_head.num_params(), 0.9, 0.0008);
    let ck = Checkpoint::new(m.clone(), 3, &os, &op);
    let back = Checkpoint::from_json_str(&ck.to_json()).unwrap();
    assert_eq!(back, ck);
    let mut wrong = ck.clone();
    wrong.matcher.config.appearance_dim += 1;
    assert!(Checkpoint::from_json_str(&wrong.to_json()).is_err());
    let mut v = serde_json::to_value(&ck).unwrap();
    v["version"] = serde_json::json!(99);
    assert!(Checkpoint::from_json_str(&v.to_string()).is_err());
    assert!(Checkpoint::from_json_str("{\"format\":").is_err());
}

fn toy_dataset(cfg: &MatcherConfig, count: usize, seed: u64) -> Vec<MatchingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base: Vec<_> = (0..3).map(|_| random_descriptor(&mut rng, cfg)).collect();
            let frame_a: Vec<SampleObject> =
                base.iter().map(|d| SampleObject { descriptor: d.clone(), pose_target: Some([0.5, 0.5, 0.2, 0.0, 1.0]) }).collect();
            let mut frame_b: Vec<SampleObject> = base
                .iter()
                .map(|d| {
                    let mut d = d.clone();
                    d.appearance.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
                    SampleObject { descriptor: d, pose_target: None }
                })
                .collect();
            frame_b.swap(0, 2);
            let matrix = matrix(cfg.capacity, 3, 3, &[(0, 2), (1, 1), (2, 0)]);
            MatchingSample { frame_a, frame_b, matrix }
        })
        .collect()
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let cfg = MatcherConfig { epochs: 6, batch_size: 4, delta: 2.0, ..small_config() };
    let data = toy_dataset(&cfg, 24, 8);
    let a = train_matcher(&data, &cfg, None).unwrap();
    let b = train_matcher(&data, &cfg, None).unwrap();
    assert_eq!(a.matcher, b.matcher);
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.len(), 6);
    assert!(a.history[5].affinity_loss < a.history[0].affinity_loss);
    assert!(a.history[5].pose_loss < a.history[0].pose_loss);
    assert_eq!(a.history[0].learning_rate, 1e-2);
    assert_relative_eq!(a.history[4].learning_rate, 1e-3, epsilon = 1e-18);

    let half = train_matcher(&data, &MatcherConfig { epochs: 3, ..cfg.clone() }, None).unwrap();
    assert_eq!(half.checkpoint.epoch, 3);
    let resumed = train_matcher(&data, &cfg, Some(half.checkpoint.clone())).unwrap();
    assert_eq!(resumed.history.len(), 3);
    assert_eq!(resumed.history[0].epoch, 3);

    let frozen = train_matcher(&data, &MatcherConfig { lambda: 0.0, ..cfg.clone() }, None).unwrap();
    assert_eq!(frozen.matcher.pose_head, Matcher::new(cfg.clone()).unwrap().pose_head);
    assert!(matches!(train_matcher(&[], &cfg, None), Err(MatchingError::EmptyDataset)));
}
