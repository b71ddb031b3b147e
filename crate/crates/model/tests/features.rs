mod common;

use common::{random, tiny};
use mvx_autograd::gradcheck::{check, GradCheck};
use mvx_autograd::{Graph, ParamStore, Tensor};
use mvx_model::config::EncoderConfig;
use mvx_model::features::{Encoder, FeatureEncoders};
use mvx_model::NetConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn build(cfg: &NetConfig, seed: u64) -> (FeatureEncoders, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let enc = FeatureEncoders::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    (enc, store)
}

/// Parameter count of one encoder read off its layer list: stem, stages of
/// residual blocks (3×3, 3×3, optional 1×1 skip), lateral, top and output
/// projections, all with biases.
fn declared_params(c_in: usize, enc: &EncoderConfig, fuse: usize, out: usize) -> usize {
    let conv = |ci: usize, co: usize, k: usize| ci * co * k * k + co;
    let c = enc.channels;
    let mut n = conv(c_in, c[0], 3);
    for s in 1..4 {
        for b in 0..enc.blocks_per_stage {
            let cin = if b == 0 { c[s - 1] } else { c[s] };
            n += conv(cin, c[s], 3) + conv(c[s], c[s], 3);
            if b == 0 {
                n += conv(cin, c[s], 1);
            }
        }
    }
    n + conv(c[2], fuse, 1) + conv(c[3], fuse, 1) + conv(fuse, out, 1)
}

#[test]
fn default_input_maps_to_eighth_resolution() {
    let cfg = NetConfig::default();
    let (enc, store) = build(&cfg, 1);
    let g = Graph::<f32>::new();
    let img = g.constant(random(&[1, 128, 256], 1.0, 2));
    let depth = g.constant(Tensor::zeros(&[1, 128, 256]));
    let fm = enc.encode(&g, &store, img, depth).unwrap();
    assert_eq!(g.shape(fm.f1), [64, 16, 32]);
    assert_eq!(g.shape(fm.f_depth), [64, 16, 32]);
    assert_eq!(g.shape(fm.f_context), [2 * cfg.refine.hidden_dim, 16, 32]);
}

#[test]
fn zero_input_and_biases_give_zero_output() {
    let cfg = NetConfig::compact();
    let (enc, mut store) = build(&cfg, 3);
    let biases: Vec<_> = store.ids().filter(|&id| store.entry(id).name.ends_with(".bias")).collect();
    for id in biases {
        *store.get_mut(id) = Tensor::zeros(&store.get(id).shape().to_vec());
    }
    let g = Graph::<f32>::new();
    let zeros = g.constant(Tensor::zeros(&[1, cfg.image_height, cfg.image_width]));
    let fm = enc.encode(&g, &store, zeros, zeros).unwrap();
    for v in [fm.f1, fm.f_context, fm.f_depth] {
        assert!(g.value(v).data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn zero_depth_map_gives_finite_output() {
    let cfg = NetConfig::compact();
    let (enc, store) = build(&cfg, 4);
    let g = Graph::<f32>::new();
    let out = enc.encode_depth(&g, &store, g.constant(Tensor::zeros(&[1, 64, 128]))).unwrap();
    assert!(g.value(out).is_finite());
}

#[test]
fn indivisible_sizes_are_rejected() {
    let cfg = NetConfig::compact();
    let (enc, store) = build(&cfg, 5);
    let g = Graph::<f32>::new();
    for shape in [[1, 60, 128], [1, 64, 120], [1, 0, 0]] {
        let x = g.constant(Tensor::zeros(&shape));
        assert!(enc.encode_image(&g, &store, x).is_err(), "{shape:?}");
        assert!(enc.encode_depth(&g, &store, x).is_err(), "{shape:?}");
    }
    let two_channel = g.constant(Tensor::zeros(&[2, 64, 128]));
    assert!(enc.encode_depth(&g, &store, two_channel).is_err());
}

#[test]
fn branch_parameter_counts_follow_architecture() {
    let cfg = NetConfig {
        in_channels: 3,
        ..NetConfig::default()
    };
    let (_, store) = build(&cfg, 6);
    let (image, depth, context) = (store.count(Some("image_enc.")), store.count(Some("depth_enc.")), store.count(Some("context_enc.")));
    let c0 = cfg.encoder.channels[0];
    assert_eq!(image - depth, (cfg.in_channels - 1) * c0 * 9);
    let d = cfg.feature_dim;
    assert_eq!(image, declared_params(3, &cfg.encoder, d, d));
    assert_eq!(depth, declared_params(1, &cfg.encoder, d, d));
    assert_eq!(context, declared_params(3, &cfg.encoder, d, 2 * cfg.refine.hidden_dim));
}

#[test]
fn branches_do_not_share_parameters() {
    let cfg = NetConfig::compact();
    let (_, store) = build(&cfg, 7);
    let stem = |b: &str| store.get(store.find(&format!("{b}.stem.weight")).unwrap()).clone();
    assert_ne!(stem("image_enc").data(), stem("context_enc").data());
    let total: usize = store.count(None);
    let by_branch: usize = ["image_enc.", "context_enc.", "depth_enc."].iter().map(|p| store.count(Some(p))).sum();
    assert_eq!(total, by_branch);
}

#[test]
fn input_gradient_on_16x16_crop() {
    let cfg = tiny();
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, "enc", 1, &cfg.encoder, 4, 4, &mut ChaCha8Rng::seed_from_u64(8));
    let crop = random::<f32>(&[1, 16, 16], 1.0, 9);
    let report = check(GradCheck::f32_default(), &[crop], &store, |g, p, v| Ok(g.sum(enc.forward(g, p, v[0])?))).unwrap();
    let input_err = report.per_tensor.iter().find(|t| t.0 == "input0").unwrap().1;
    assert!(input_err < 1e-2, "{input_err}");
    assert!(report.max_rel_error < 1e-2, "{:?}", report.per_tensor);
}

#[test]
fn encoding_order_does_not_leak_between_items() {
    let cfg = NetConfig::compact();
    let (enc, store) = build(&cfg, 10);
    let shape = [1, cfg.image_height, cfg.image_width];
    let (a, b) = (random::<f32>(&shape, 1.0, 11), random::<f32>(&shape, 1.0, 12));
    let run = |first: &Tensor<f32>, second: &Tensor<f32>| {
        let g = Graph::<f32>::new();
        let x = enc.encode(&g, &store, g.constant(first.clone()), g.constant(first.clone())).unwrap();
        let y = enc.encode(&g, &store, g.constant(second.clone()), g.constant(second.clone())).unwrap();
        let get = |v| g.value(v).data().to_vec();
        ((get(x.f1), get(x.f_context), get(x.f_depth)), (get(y.f1), get(y.f_context), get(y.f_depth)))
    };
    let (ab_a, ab_b) = run(&a, &b);
    let (ba_b, ba_a) = run(&b, &a);
    assert_eq!(ab_a, ba_a);
    assert_eq!(ab_b, ba_b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_is_eighth_of_input(hm in 1usize..5, wm in 1usize..5) {
        let cfg = tiny();
        let (enc, store) = build(&cfg, 13);
        let (h, w) = (16 * hm, 16 * wm);
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, h, w]));
        let (f1, ctx) = enc.encode_image(&g, &store, x).unwrap();
        prop_assert_eq!(g.shape(f1), vec![cfg.feature_dim, h / 8, w / 8]);
        prop_assert_eq!(&g.shape(ctx)[1..], &[h / 8, w / 8]);
        prop_assert_eq!(g.shape(enc.encode_depth(&g, &store, x).unwrap()), vec![cfg.feature_dim, h / 8, w / 8]);
    }
}
