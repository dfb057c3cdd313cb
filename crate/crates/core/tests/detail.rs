mod common;

use common::{neighbour_difference, random_labels};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdc_core::detail::{self, DetailHead, DetailPrediction, FusionOrder, LabelMap, IGNORE_LABEL};
use stdc_core::{generate_detail_gt, laplacian_response, DetailConfig, Shape, Tensor, WeightStore};

fn stride1_only() -> DetailConfig {
    DetailConfig {
        strides: vec![1],
        fusion_weights: vec![1.0],
        ..DetailConfig::default()
    }
}

#[test]
fn stride1_mask_equals_neighbour_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let cfg = DetailConfig::default();
    for _ in 0..300 {
        let labels = random_labels(&mut rng, 40);
        let oracle = neighbour_difference(&labels);
        let resp = laplacian_response(&labels, 1, &cfg).unwrap();
        let mask: Vec<bool> = resp.data().iter().map(|&v| v > cfg.binarize_threshold).collect();
        assert_eq!(mask, oracle);
        let gt = generate_detail_gt(&labels, &stride1_only()).unwrap();
        let gt_mask: Vec<bool> = gt.map.data().iter().map(|&v| v == 1.0).collect();
        assert_eq!(gt_mask, oracle);
    }
}

fn relabel(labels: &LabelMap, rng: &mut ChaCha8Rng) -> LabelMap {
    let mut targets: Vec<u32> = (0..255).collect();
    targets.shuffle(rng);
    LabelMap {
        ids: labels.ids.iter().map(|&id| targets[id as usize]).collect(),
        ..labels.clone()
    }
}

#[test]
fn ground_truth_ignores_id_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for order in [FusionOrder::BinarizeThenFuse, FusionOrder::FuseThenThreshold] {
        let cfg = DetailConfig {
            order,
            ..DetailConfig::default()
        };
        for _ in 0..150 {
            let labels = random_labels(&mut rng, 40);
            let a = generate_detail_gt(&labels, &cfg).unwrap();
            let b = generate_detail_gt(&relabel(&labels, &mut rng), &cfg).unwrap();
            assert!(a.map.bit_eq(&b.map));
        }
    }
}

/// Chebyshev distance from every pixel to the nearest boundary pixel.
fn boundary_distance(labels: &LabelMap) -> Vec<usize> {
    let boundary = neighbour_difference(labels);
    let (h, w) = (labels.height, labels.width);
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            (0..h * w)
                .filter(|&j| boundary[j])
                .map(|j| (j / w).abs_diff(y).max((j % w).abs_diff(x)))
                .min()
                .unwrap_or(usize::MAX)
        })
        .collect()
}

#[test]
fn marked_pixels_stay_near_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = DetailConfig::default();
    let band = 1 + cfg.strides.iter().max().unwrap();
    for _ in 0..150 {
        let labels = random_labels(&mut rng, 32);
        let gt = generate_detail_gt(&labels, &cfg).unwrap();
        let dist = boundary_distance(&labels);
        for (i, &v) in gt.map.data().iter().enumerate() {
            assert!(v == 0.0 || v == 1.0);
            if v == 1.0 {
                assert!(dist[i] <= band, "pixel {i} at distance {}", dist[i]);
            }
        }
    }
}

#[test]
fn uniform_and_checkerboard_maps() {
    let cfg = DetailConfig::default();
    let uniform = LabelMap::from_fn(2, 17, 23, |_, _, _| 4);
    assert!(generate_detail_gt(&uniform, &cfg).unwrap().map.data().iter().all(|&v| v == 0.0));
    for s in [1, 2, 4] {
        let r = laplacian_response(&uniform, s, &cfg).unwrap();
        assert_eq!(r.shape(), Shape::new(2, 1, (17 - 1) / s + 1, (23 - 1) / s + 1));
        assert!(r.data().iter().all(|&v| v == 0.0));
    }
    let checker = LabelMap::from_fn(1, 16, 16, |_, y, x| ((y + x) % 2) as u32);
    assert!(generate_detail_gt(&checker, &cfg).unwrap().map.data().iter().all(|&v| v == 1.0));
}

#[test]
fn two_region_split_marks_the_edge_columns() {
    let labels = LabelMap::from_fn(1, 12, 16, |_, _, x| (x >= 8) as u32);
    let r = laplacian_response(&labels, 1, &DetailConfig::default()).unwrap();
    for y in 0..12 {
        for x in 0..16 {
            assert_eq!(r.at(0, 0, y, x) > 0.0, x == 7 || x == 8, "({y}, {x})");
        }
    }
    let r2 = laplacian_response(&labels, 2, &DetailConfig::default()).unwrap();
    assert_eq!(r2.shape(), Shape::new(1, 1, 6, 8));
}

#[test]
fn ignored_pixels_are_zero_and_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut labels = LabelMap::from_fn(1, 16, 16, |_, y, _| (y >= 8) as u32);
    for _ in 0..20 {
        let i = rng.gen_range(0..labels.ids.len());
        labels.ids[i] = IGNORE_LABEL;
    }
    let gt = generate_detail_gt(&labels, &DetailConfig::default()).unwrap();
    for (i, &id) in labels.ids.iter().enumerate() {
        assert_eq!(gt.valid[i], id != IGNORE_LABEL);
        if id == IGNORE_LABEL {
            assert_eq!(gt.map.data()[i], 0.0);
        }
    }
}

#[test]
fn detail_head_shapes_and_zero_weights() {
    let head = DetailHead::new(16, 8);
    let mut t = stdc_core::analyzer::Tracer::new();
    let x = t.input(Shape::new(1, 16, 8, 8));
    head.run(&mut t, "detail_head", &x).unwrap();
    let schema = t.into_schema();
    let zeros = WeightStore::zeros(&schema);
    let feat = Tensor::full(Shape::new(1, 16, 8, 12), 0.3);
    let pred = detail::detail_head_forward(&head, &zeros, &feat).unwrap();
    assert_eq!(pred.probs.shape(), Shape::new(1, 1, 8, 12));
    assert!(pred.probs.data().iter().all(|&v| v == 0.5));

    let random = WeightStore::random(&schema, 1);
    let pred = detail::detail_head_forward(&head, &random, &feat).unwrap();
    assert!(pred.probs.is_finite());
    let wrong = Tensor::zeros(Shape::new(1, 15, 8, 8));
    assert!(detail::detail_head_forward(&head, &random, &wrong).is_err());
}

#[test]
fn supervision_loss_upsamples_prediction() {
    let labels = LabelMap::from_fn(1, 32, 32, |_, _, x| (x >= 16) as u32);
    let gt = generate_detail_gt(&labels, &DetailConfig::default()).unwrap();
    let pred = DetailPrediction::from_logits(Tensor::zeros(Shape::new(1, 1, 4, 4)));
    let loss = detail::detail_supervision_loss(&pred, &gt, 1.0).unwrap();
    assert_eq!(loss.gradient.len(), 32 * 32);
    assert!((loss.bce - std::f32::consts::LN_2).abs() < 1e-5);
    assert_eq!(loss.total, loss.dice + loss.bce);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gt_is_binary(seed in any::<u64>(), w1 in 0.0f32..1.0, w2 in 0.0f32..1.0, t in 0.05f32..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = random_labels(&mut rng, 24);
        let cfg = DetailConfig {
            fusion_weights: vec![w1, w2, 1.0 - w1],
            threshold: t,
            ..DetailConfig::default()
        };
        let gt = generate_detail_gt(&labels, &cfg).unwrap();
        prop_assert_eq!(gt.map.shape(), labels.shape());
        prop_assert!(gt.map.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn stride1_response_counts_differing_neighbours(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = random_labels(&mut rng, 16);
        let r = laplacian_response(&labels, 1, &DetailConfig::default()).unwrap();
        let oracle = neighbour_difference(&labels);
        for (&v, &o) in r.data().iter().zip(&oracle) {
            prop_assert_eq!(v, if o { 1.0 } else { 0.0 });
        }
    }
}
