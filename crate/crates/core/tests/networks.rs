mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdc_core::backbone::StdcNet;
use stdc_core::seg::{self, InferenceScale};
use stdc_core::{ops, ConvSpec, InferOptions, NetConfig, SegConfig, SegNet, Shape, StageSpec, Tensor, WeightStore};

fn tiny_backbone() -> NetConfig {
    let mut c = NetConfig::stdc1(10);
    c.conv1 = ConvSpec::new(3, 8, 3, 2);
    c.conv2 = ConvSpec::new(8, 16, 3, 2);
    c.stages = [StageSpec::new(32, 1), StageSpec::new(64, 2), StageSpec::new(64, 1)];
    c.head_channels = 64;
    c
}

fn tiny_seg(num_classes: usize) -> SegNet {
    let mut cfg = SegConfig::new(tiny_backbone(), num_classes);
    cfg.arm_channels = 16;
    cfg.ffm_channels = 32;
    cfg.aux_channels = 8;
    SegNet::build(cfg).unwrap()
}

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    common::random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), Shape::new(1, 3, h, w))
}

#[test]
fn stdc1_classifies_224() {
    let net = StdcNet::build(NetConfig::stdc1(1000)).unwrap();
    let weights = WeightStore::random(&net.schema(), 0);
    let logits = net.forward_classify(&weights, &image(1, 224, 224)).unwrap();
    assert_eq!(logits.shape(), Shape::new(1, 1000, 1, 1));
    assert!(logits.is_finite());
    assert!(logits.data().iter().any(|&v| v != 0.0));
}

#[test]
fn stdc2_features_at_three_scales() {
    let net = StdcNet::build_encoder(NetConfig::stdc2(1000)).unwrap();
    let weights = WeightStore::random(&net.schema(), 0);
    let f = net.extract_features(&weights, &image(2, 96, 128)).unwrap();
    assert_eq!(f.stage3.shape(), Shape::new(1, 256, 12, 16));
    assert_eq!(f.stage4.shape(), Shape::new(1, 512, 6, 8));
    assert_eq!(f.stage5.shape(), Shape::new(1, 1024, 3, 4));
}

#[test]
fn input_must_be_divisible_by_32() {
    let net = tiny_seg(19);
    let w = WeightStore::random(&net.schema(), 0);
    for (h, w_) in [(33, 64), (64, 48), (16, 64)] {
        let x = Tensor::zeros(Shape::new(1, 3, h, w_));
        assert!(net.infer(&w, &x, InferOptions::default()).is_err(), "{h}x{w_}");
    }
    let x = Tensor::zeros(Shape::new(1, 4, 64, 64));
    assert!(net.infer(&w, &x, InferOptions::default()).is_err());
}

#[test]
fn presets() {
    assert_eq!(SegConfig::cityscapes(NetConfig::stdc2(1000)).num_classes, 19);
    assert_eq!(SegConfig::camvid(NetConfig::stdc1(1000)).num_classes, 11);
    assert_eq!(InferenceScale::Seg50.input_size(), (512, 1024));
    assert_eq!(InferenceScale::Seg75.input_size(), (768, 1536));
    let camvid = tiny_seg(11);
    let w = WeightStore::random(&camvid.schema(), 3);
    let out = camvid.infer(&w, &image(0, 64, 96), InferOptions::default()).unwrap();
    assert_eq!(out.logits.shape(), Shape::new(1, 11, 64, 96));
}

#[test]
fn identical_images_in_a_batch_give_identical_outputs() {
    let net = tiny_seg(5);
    let w = WeightStore::random(&net.schema(), 4);
    let one = image(5, 64, 64);
    let mut data = one.data().to_vec();
    data.extend_from_slice(one.data());
    let batch = Tensor::new(Shape::new(2, 3, 64, 64), data).unwrap();
    let out = net.infer(&w, &batch, InferOptions::default()).unwrap();
    assert_eq!(out.logits.image(0), out.logits.image(1));
    let d = out.detail.unwrap();
    assert_eq!(d.probs.image(0), d.probs.image(1));
    let single = net.infer(&w, &one, InferOptions::default()).unwrap();
    assert_eq!(single.logits.image(0), out.logits.image(0));
}

#[test]
fn zero_weights_give_constant_bias_logits() {
    let net = tiny_seg(6);
    let mut w = WeightStore::zeros(&net.schema());
    let bias = [0.1, 0.7, -0.2, 0.7, 0.0, 0.3];
    w.insert("seg_head.out.bias", Tensor::vector(bias.to_vec()).unwrap());
    let out = net.infer(&w, &image(6, 64, 64), InferOptions::default()).unwrap();
    for (c, &b) in bias.iter().enumerate() {
        assert!(out.logits.plane(0, c).iter().all(|&v| (v - b).abs() < 1e-6));
    }
    assert!(out.labels.iter().all(|&l| l == 1));
    let head = seg::seg_head_forward(&w, "seg_head", &Tensor::full(Shape::new(1, 32, 4, 4), 2.0), 32, 6).unwrap();
    assert_eq!(head.shape(), Shape::new(1, 6, 4, 4));
}

#[test]
fn arm_gate_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = common::random_tensor(&mut rng, Shape::new(1, 4, 5, 6));
    let mut w = WeightStore::new();
    w.insert("arm.atten.weight", Tensor::zeros(Shape::new(4, 4, 1, 1)));
    for (name, v) in [("weight", 1.0), ("bias", 0.0), ("running_mean", 0.0), ("running_var", 1.0)] {
        w.insert(format!("arm.atten_bn.{name}"), Tensor::vector(vec![v; 4]).unwrap());
    }
    let half = seg::arm_forward(&w, "arm", &x).unwrap();
    assert!(half.data().iter().zip(x.data()).all(|(&a, &b)| a == 0.5 * b));
    w.insert("arm.atten_bn.bias", Tensor::vector(vec![40.0; 4]).unwrap());
    let open = seg::arm_forward(&w, "arm", &x).unwrap();
    assert!(open.max_abs_diff(&x) < 1e-6);
}

#[test]
fn ffm_with_zero_gate_scales_by_one_and_a_half() {
    let net = tiny_seg(3);
    let w = WeightStore::random(&net.schema(), 8);
    let mut w0 = w.clone();
    for name in ["ffm.conv1.weight", "ffm.conv2.weight"] {
        w0.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spatial = common::random_tensor(&mut rng, Shape::new(1, 32, 8, 8));
    let context = common::random_tensor(&mut rng, Shape::new(1, 16, 8, 8));
    let out = seg::ffm_forward(&w0, "ffm", &spatial, &context, 32).unwrap();
    let cat = ops::concat_channels(&[&spatial, &context]).unwrap();
    let mut f = stdc_core::graph::Forward::new(&w0);
    let feat = stdc_core::graph::convx(&mut f, "ffm.convx", &cat, &ConvSpec::new(48, 32, 1, 1)).unwrap();
    assert!(out.max_abs_diff(&feat.map(|v| 1.5 * v)) < 1e-6);
    let again = seg::ffm_forward(&w0, "ffm", &spatial, &context, 32).unwrap();
    assert!(out.bit_eq(&again));
    let bad = common::random_tensor(&mut rng, Shape::new(1, 16, 4, 4));
    assert!(seg::ffm_forward(&w, "ffm", &spatial, &bad, 32).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shape_contract_and_detached_detail_head(hk in 1usize..=4, wk in 1usize..=4, seed in any::<u64>()) {
        let (h, w) = (32 * hk, 32 * wk);
        let net = tiny_seg(7);
        let weights = WeightStore::random(&net.schema(), seed);
        let x = image(seed, h, w);
        let with = net.infer(&weights, &x, InferOptions { detail_head: true }).unwrap();
        let without = net.infer(&weights, &x, InferOptions { detail_head: false }).unwrap();
        prop_assert_eq!(with.logits.shape(), Shape::new(1, 7, h, w));
        prop_assert!(with.logits.bit_eq(&without.logits));
        prop_assert!(without.detail.is_none());
        let f = &with.features;
        prop_assert_eq!((f.stage3.shape().height, f.stage3.shape().width), (h / 8, w / 8));
        prop_assert_eq!((f.stage4.shape().height, f.stage4.shape().width), (h / 16, w / 16));
        prop_assert_eq!((f.stage5.shape().height, f.stage5.shape().width), (h / 32, w / 32));
        let d = with.detail.unwrap();
        prop_assert_eq!(d.probs.shape(), Shape::new(1, 1, h / 8, w / 8));
        prop_assert!(d.probs.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!(with.logits.is_finite());
        prop_assert!(with.labels.iter().all(|&l| l < 7));
        let p = ops::softmax_channels(&with.logits);
        for i in (0..h * w).step_by(7) {
            let s: f32 = (0..7).map(|c| p.plane(0, c)[i]).sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }
    }
}
