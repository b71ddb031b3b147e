mod common;

use std::time::Instant;

use common::{fit_rotations, random, tiny};
use mvx_autograd::{Graph, ParamStore, Tensor, Var};
use mvx_core::geometry::{sample_rotation_perturbation_with, UnitQuaternion};
use mvx_model::config::TemporalConfig;
use mvx_model::temporal::{MambaBlock, TemporalModule};
use mvx_model::NetConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn module(cfg: &NetConfig, seed: u64) -> (TemporalModule, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let m = TemporalModule::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    (m, store)
}

fn flow_vars(g: &Graph<f32>, flows: &[Vec<Tensor<f32>>]) -> Vec<Vec<Var>> {
    flows.iter().map(|f| f.iter().map(|t| g.constant(t.clone())).collect()).collect()
}

fn random_flows(cfg: &NetConfig, seed: u64) -> Vec<Vec<Tensor<f32>>> {
    let (h, w) = cfg.grid();
    (0..cfg.temporal.frames)
        .map(|t| {
            (0..cfg.refine.iterations)
                .map(|k| random(&[2, h, w], 2.0, seed + (t * 100 + k) as u64))
                .collect()
        })
        .collect()
}

fn set(store: &mut ParamStore<f32>, name: &str, value: Tensor<f32>) {
    let id = store.find(name).unwrap_or_else(|| panic!("{name}"));
    assert_eq!(store.get(id).shape(), value.shape(), "{name}");
    *store.get_mut(id) = value;
}

fn zeros_like(store: &ParamStore<f32>, name: &str) -> Tensor<f32> {
    Tensor::zeros(&store.get(store.find(name).unwrap()).shape().to_vec())
}

#[test]
fn default_layout_has_321_tokens() {
    let cfg = NetConfig::default();
    let (m, store) = module(&cfg, 1);
    assert_eq!(m.token_count(), 321);
    assert_eq!(cfg.token_count(), 321);
    let g = Graph::<f32>::new();
    let flows = flow_vars(&g, &random_flows(&cfg, 2));
    let tokens = m.assemble_tokens(&g, &store, &flows).unwrap();
    assert_eq!(g.shape(tokens), [321, cfg.temporal.d_model]);
}

#[test]
fn zero_flows_and_embeddings_give_zero_patch_tokens() {
    let cfg = tiny();
    let (m, mut store) = module(&cfg, 3);
    for name in ["temporal.p_s", "temporal.p_t", "temporal.patch_embed.bias"] {
        let z = zeros_like(&store, name);
        set(&mut store, name, z);
    }
    let (h, w) = cfg.grid();
    let g = Graph::<f32>::new();
    let flows: Vec<Vec<Var>> = (0..cfg.temporal.frames)
        .map(|_| (0..cfg.refine.iterations).map(|_| g.constant(Tensor::zeros(&[2, h, w]))).collect())
        .collect();
    let tokens = g.value(m.assemble_tokens(&g, &store, &flows).unwrap()).clone();
    let d = cfg.temporal.d_model;
    assert!(tokens.data()[d..].iter().all(|&v| v == 0.0));
    let z_add = store.get(m.z_add);
    assert_eq!(&tokens.data()[..d], z_add.data());
}

/// With a one-hot patch projection and zero embeddings each token is the
/// raw patch; putting the patches back must rebuild the width-concatenated
/// flow map of every frame.
#[test]
fn patches_reassemble_into_the_flow_map() {
    let cfg = tiny();
    let p = cfg.temporal.patch;
    assert_eq!(cfg.temporal.d_model, 2 * p * p);
    let (m, mut store) = module(&cfg, 4);
    let d = cfg.temporal.d_model;
    let one_hot = Tensor::from_fn(&[d, 2, p, p], |i| if i / d == i % d { 1.0 } else { 0.0 });
    set(&mut store, "temporal.patch_embed.weight", one_hot);
    for name in ["temporal.p_s", "temporal.p_t", "temporal.patch_embed.bias"] {
        let z = zeros_like(&store, name);
        set(&mut store, name, z);
    }
    let flows = random_flows(&cfg, 5);
    let g = Graph::<f32>::new();
    let tokens = g.value(m.assemble_tokens(&g, &store, &flow_vars(&g, &flows)).unwrap()).clone();

    let (h, w) = cfg.grid();
    let iters = cfg.refine.iterations;
    let wide = w * iters;
    let per_row = wide / p;
    let n = (h / p) * per_row;
    for (t, frame) in flows.iter().enumerate() {
        let mut rebuilt = vec![f32::NAN; 2 * h * wide];
        for patch in 0..n {
            let row = &tokens.data()[(1 + t * n + patch) * d..(2 + t * n + patch) * d];
            let (py, px) = (patch / per_row, patch % per_row);
            for c in 0..2 {
                for dy in 0..p {
                    for dx in 0..p {
                        rebuilt[(c * h + py * p + dy) * wide + px * p + dx] = row[(c * p + dy) * p + dx];
                    }
                }
            }
        }
        for c in 0..2 {
            for y in 0..h {
                for x in 0..wide {
                    let want = frame[x / w].data()[(c * h + y) * w + x % w];
                    assert_eq!(rebuilt[(c * h + y) * wide + x], want, "frame {t} ch {c} ({y},{x})");
                }
            }
        }
    }
}

#[test]
fn wrong_frame_or_iteration_counts_are_rejected() {
    let cfg = tiny();
    let (m, store) = module(&cfg, 6);
    let g = Graph::<f32>::new();
    let mut flows = flow_vars(&g, &random_flows(&cfg, 7));
    flows[0].pop();
    assert!(m.assemble_tokens(&g, &store, &flows).is_err());
    flows.pop();
    assert!(m.assemble_tokens(&g, &store, &flows).is_err());
}

fn block_cfg() -> TemporalConfig {
    TemporalConfig {
        d_model: 8,
        ..tiny().temporal
    }
}

#[test]
fn single_token_scan_is_twice_one_direction() {
    let tc = block_cfg();
    let mut store = ParamStore::<f64>::new();
    let block = MambaBlock::new(&mut store, "b", &tc, &mut ChaCha8Rng::seed_from_u64(8));
    let g = Graph::<f64>::new();
    let x = g.constant(random(&[1, 8], 1.0, 9));
    let (y, _) = block.bidirectional_scan(&g, &store, x).unwrap();
    let (scan, _) = block.scan_inputs(&g, &store, x).unwrap();
    let fwd = g.selective_scan(scan, false).unwrap();
    let bwd = g.selective_scan(scan, true).unwrap();
    let (y, fwd, bwd) = (g.value(y).to_f64_vec(), g.value(fwd).to_f64_vec(), g.value(bwd).to_f64_vec());
    for i in 0..y.len() {
        assert_eq!(fwd[i], bwd[i]);
        assert!((y[i] - 2.0 * fwd[i]).abs() < 1e-12);
    }
}

#[test]
fn vanishing_step_leaves_only_the_skip_path() {
    let tc = block_cfg();
    let mut store = ParamStore::<f64>::new();
    let block = MambaBlock::new(&mut store, "b", &tc, &mut ChaCha8Rng::seed_from_u64(10));
    let id = store.find("b.dt_proj.bias").unwrap();
    store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = -40.0);
    let g = Graph::<f64>::new();
    let x = g.constant(random(&[5, 8], 1.0, 11));
    let (y, _) = block.bidirectional_scan(&g, &store, x).unwrap();
    let (scan, _) = block.scan_inputs(&g, &store, x).unwrap();
    let (u, d) = (g.value(scan.u).to_f64_vec(), g.value(scan.d).to_f64_vec());
    let e = d.len();
    for (i, &yi) in g.value(y).to_f64_vec().iter().enumerate() {
        assert!((yi - 2.0 * d[i % e] * u[i]).abs() < 1e-12, "{i}");
    }
}

#[test]
fn block_cost_grows_linearly_with_tokens() {
    let cfg = NetConfig::default();
    let mut store = ParamStore::new();
    let block = MambaBlock::new(&mut store, "b", &cfg.temporal, &mut ChaCha8Rng::seed_from_u64(12));
    let time = |len: usize| {
        let x = random::<f32>(&[len, cfg.temporal.d_model], 1.0, 13);
        (0..5)
            .map(|_| {
                let g = Graph::<f32>::new();
                let start = Instant::now();
                block.forward(&g, &store, g.constant(x.clone())).unwrap();
                start.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let t = cfg.token_count() - 1;
    let (one, two) = (time(t), time(2 * t));
    assert!(two / one < 2.3, "doubling T scaled block time by {:.2}", two / one);
}

#[test]
fn head_output_is_unit_norm_and_deterministic() {
    let cfg = tiny();
    let (m, store) = module(&cfg, 14);
    let flows = random_flows(&cfg, 15);
    let g = Graph::<f32>::new();
    let q1 = m.forward(&g, &store, &flow_vars(&g, &flows)).unwrap();
    let q2 = m.forward(&g, &store, &flow_vars(&g, &flows)).unwrap();
    assert_eq!(g.value(q1).data(), g.value(q2).data());
    let norm = g.value(q1).to_f64_vec().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
}

#[test]
fn module_overfits_eight_sequences() {
    let mut cfg = NetConfig::compact();
    cfg.temporal.frames = 2;
    cfg.refine.iterations = 2;
    cfg.validate().unwrap();
    let (m, mut store) = module(&cfg, 16);
    let seqs: Vec<_> = (0..8).map(|i| random_flows(&cfg, 1000 * (i + 1))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let targets: Vec<UnitQuaternion> = (0..8).map(|_| sample_rotation_perturbation_with(10.0, &mut rng).rotation).collect();
    let err = fit_rotations(&mut store, &targets, 500, 1e-3, |g, p, i| m.forward(g, p, &flow_vars(g, &seqs[i])));
    assert!(err < 0.5, "mean angular error {err:.3} deg");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn token_count_contract(frames in 1usize..4, iters in 1usize..5, patch in prop::sample::select(vec![1usize, 2, 4]), hm in 1usize..3, wm in 1usize..3) {
        let mut cfg = tiny();
        cfg.image_height = 16 * hm * patch.max(2) / 2;
        cfg.image_width = 16 * wm * patch.max(2) / 2;
        cfg.temporal.frames = frames;
        cfg.temporal.patch = patch;
        cfg.refine.iterations = iters;
        prop_assume!(cfg.validate().is_ok());
        let (m, store) = module(&cfg, 18);
        let g = Graph::<f32>::new();
        let tokens = m.assemble_tokens(&g, &store, &flow_vars(&g, &random_flows(&cfg, 19))).unwrap();
        let (h, w) = cfg.grid();
        let expected = 1 + frames * (h / patch) * (w * iters / patch);
        prop_assert_eq!(g.shape(tokens), vec![expected, cfg.temporal.d_model]);
        prop_assert_eq!(m.token_count(), expected);
    }
}
