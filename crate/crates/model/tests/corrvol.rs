mod common;

use common::{off_grid, random};
use mvx_autograd::gradcheck::{check, GradCheck};
use mvx_autograd::{Graph, ParamStore, Tensor};
use mvx_model::corrvol::{build_pyramid, lookup, lookup_channels, pyramid_entries};
use proptest::prelude::*;

/// Level-0 correlation by a plain quadruple loop, `[i][j][k][l]`.
fn brute_force(f1: &[f64], f2: &[f64], d: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w * h * w];
    for i in 0..h {
        for j in 0..w {
            for k in 0..h {
                for l in 0..w {
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += f1[c * h * w + i * w + j] * f2[c * h * w + k * w + l];
                    }
                    out[((i * w + j) * h + k) * w + l] = dot / (d as f64).sqrt();
                }
            }
        }
    }
    out
}

/// Average of the `2^k × 2^k` block of level 0 starting at target `(k·y, k·x)`.
fn pooled(level0: &[f64], h: usize, w: usize, src: usize, k: usize, y: usize, x: usize) -> f64 {
    let s = 1 << k;
    let mut acc = 0.0;
    for dy in 0..s {
        for dx in 0..s {
            acc += level0[(src * h + y * s + dy) * w + x * s + dx];
        }
    }
    acc / (s * s) as f64
}

/// Bilinear sample of a `hk×wk` plane at real `(y, x)`, clamping every
/// integer neighbour to the border.
fn bilinear(plane: &[f64], hk: usize, wk: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (ty, tx) = (y - y0, x - x0);
    let at = |r: f64, c: f64| {
        let r = r.clamp(0.0, (hk - 1) as f64) as usize;
        let c = c.clamp(0.0, (wk - 1) as f64) as usize;
        plane[r * wk + c]
    };
    (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1.0)) + ty * ((1.0 - tx) * at(y0 + 1.0, x0) + tx * at(y0 + 1.0, x0 + 1.0))
}

#[test]
fn all_ones_features_give_sqrt_d() {
    let g = Graph::<f32>::new();
    let f = g.constant(Tensor::full(&[64, 4, 4], 1.0));
    let pyr = build_pyramid(&g, f, f, 3).unwrap();
    for &l in &pyr.levels {
        assert!(g.value(l).data().iter().all(|&v| (v - 8.0).abs() < 1e-5));
    }
}

#[test]
fn orthogonal_columns_correlate_to_zero() {
    // Column (0,0) is e0 in f1, every f_depth column is e1.
    let g = Graph::<f32>::new();
    let mut a = Tensor::zeros(&[2, 2, 2]);
    a.data_mut()[0] = 1.0;
    let b = Tensor::from_fn(&[2, 2, 2], |i| if i >= 4 { 1.0 } else { 0.0 });
    let pyr = build_pyramid(&g, g.constant(a), g.constant(b), 1).unwrap();
    assert!(g.value(pyr.levels[0]).data()[..4].iter().all(|&v| v == 0.0));
}

#[test]
fn level0_matches_brute_force() {
    for (h, w, seed) in [(4, 4, 1), (4, 8, 2), (8, 8, 3)] {
        let d = 8;
        let (a, b) = (random::<f64>(&[d, h, w], 1.0, seed), random::<f64>(&[d, h, w], 1.0, seed + 100));
        let g = Graph::<f32>::new();
        let pyr = build_pyramid(&g, g.constant(a.cast()), g.constant(b.cast()), 1).unwrap();
        let oracle = brute_force(a.data(), b.data(), d, h, w);
        let got = g.value(pyr.levels[0]).to_f64_vec();
        let err = got.iter().zip(&oracle).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err < 1e-5, "{h}x{w}: {err}");
    }
}

#[test]
fn coarse_levels_are_block_averages() {
    let (d, h, w) = (8, 8, 8);
    let (a, b) = (random::<f64>(&[d, h, w], 1.0, 7), random::<f64>(&[d, h, w], 1.0, 8));
    let g = Graph::<f64>::new();
    let pyr = build_pyramid(&g, g.constant(a.clone()), g.constant(b.clone()), 4).unwrap();
    let level0 = brute_force(a.data(), b.data(), d, h, w);
    for k in 1..4 {
        let (hk, wk) = (h >> k, w >> k);
        let v = g.value(pyr.levels[k]).to_f64_vec();
        assert_eq!(v.len(), h * w * hk * wk);
        for src in 0..h * w {
            for y in 0..hk {
                for x in 0..wk {
                    let want = pooled(&level0, h, w, src, k, y, x);
                    assert!((v[(src * hk + y) * wk + x] - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn indivisible_grid_is_rejected() {
    let g = Graph::<f32>::new();
    let f = g.constant(Tensor::zeros(&[4, 6, 8]));
    assert!(build_pyramid(&g, f, f, 3).is_err());
    assert!(build_pyramid(&g, f, f, 2).is_ok());
    let other = g.constant(Tensor::zeros(&[4, 6, 4]));
    assert!(build_pyramid(&g, f, other, 1).is_err());
}

#[test]
fn zero_flow_window_is_centered_on_own_pixel() {
    let (d, h, w) = (4, 4, 4);
    let g = Graph::<f64>::new();
    let (a, b) = (random::<f64>(&[d, h, w], 1.0, 11), random::<f64>(&[d, h, w], 1.0, 12));
    let pyr = build_pyramid(&g, g.constant(a.clone()), g.constant(b.clone()), 1).unwrap();
    let out = lookup(&g, &pyr, g.constant(Tensor::zeros(&[2, h, w])), 1).unwrap();
    let v = g.value(out).to_f64_vec();
    let level0 = brute_force(a.data(), b.data(), d, h, w);
    let (i, j) = (1, 2);
    for (c, (dy, dx)) in (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dy, dx))).enumerate() {
        let (k, l) = ((i as isize + dy) as usize, (j as isize + dx) as usize);
        let want = level0[((i * w + j) * h + k) * w + l];
        assert!((v[(c * h + i) * w + j] - want).abs() < 1e-12);
    }
}

#[test]
fn random_flow_matches_sampling_oracle() {
    let (d, h, w, levels, r) = (8, 4, 4, 3, 2);
    let (a, b) = (random::<f64>(&[d, h, w], 1.0, 21), random::<f64>(&[d, h, w], 1.0, 22));
    let flow = random::<f64>(&[2, h, w], 3.0, 23);
    let g = Graph::<f32>::new();
    let pyr = build_pyramid(&g, g.constant(a.cast()), g.constant(b.cast()), levels).unwrap();
    let out = g.value(lookup(&g, &pyr, g.constant(flow.cast()), r).unwrap()).to_f64_vec();
    let side = 2 * r + 1;
    assert_eq!(out.len(), lookup_channels(levels, r) * h * w);

    let level0 = brute_force(a.data(), b.data(), d, h, w);
    let f = flow.data();
    let mut err = 0.0f64;
    for k in 0..levels {
        let (hk, wk) = (h >> k, w >> k);
        let s = (1 << k) as f64;
        for i in 0..h {
            for j in 0..w {
                let src = i * w + j;
                let plane: Vec<f64> = (0..hk * wk).map(|t| pooled(&level0, h, w, src, k, t / wk, t % wk)).collect();
                let cy = (i as f64 + f[src]) / s;
                let cx = (j as f64 + f[h * w + src]) / s;
                for wy in 0..side {
                    for wx in 0..side {
                        let want = bilinear(&plane, hk, wk, cy + wy as f64 - r as f64, cx + wx as f64 - r as f64);
                        let ch = k * side * side + wy * side + wx;
                        err = err.max((out[ch * h * w + src] - want).abs());
                    }
                }
            }
        }
    }
    assert!(err < 1e-5, "{err}");
}

#[test]
fn default_channel_count() {
    assert_eq!(lookup_channels(4, 4), 324);
}

#[test]
fn lookup_gradient_wrt_flow() {
    let (d, h, w) = (4, 4, 4);
    let inputs = vec![random::<f32>(&[d, h, w], 1.0, 31), random(&[d, h, w], 1.0, 32), off_grid(&[2, h, w], 1.0, 33)];
    let weights = random::<f32>(&[lookup_channels(2, 1), h, w], 1.0, 34);
    let report = check(GradCheck::f32_default(), &inputs, &ParamStore::new(), |g, _, v| {
        let pyr = build_pyramid(g, v[0], v[1], 2)?;
        let out = lookup(g, &pyr, v[2], 1)?;
        Ok(g.sum(g.mul(out, g.constant(weights.clone()))?))
    })
    .unwrap();
    let flow_err = report.per_tensor.iter().find(|t| t.0 == "input2").unwrap().1;
    assert!(flow_err < 1e-2, "{flow_err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn channel_count_formula(levels in 1usize..6, r in 1usize..6) {
        let (h, w) = (1 << (levels - 1), 2 << (levels - 1));
        let g = Graph::<f32>::new();
        let f = g.constant(Tensor::full(&[2, h, w], 0.5));
        let pyr = build_pyramid(&g, f, f, levels).unwrap();
        let out = lookup(&g, &pyr, g.constant(Tensor::zeros(&[2, h, w])), r).unwrap();
        prop_assert_eq!(g.shape(out), vec![levels * (2 * r + 1) * (2 * r + 1), h, w]);
    }

    #[test]
    fn entry_count_matches_formula(hb in 1usize..4, wb in 1usize..4, levels in 1usize..4) {
        let (h, w) = (hb << (levels - 1), wb << (levels - 1));
        let g = Graph::<f32>::new();
        let f = g.constant(Tensor::zeros(&[3, h, w]));
        let pyr = build_pyramid(&g, f, f, levels).unwrap();
        let direct: usize = (0..levels).map(|k| h * w * (h >> k) * (w >> k)).sum();
        prop_assert_eq!(pyr.entries(&g), direct);
        prop_assert_eq!(pyramid_entries(h, w, levels), direct);
    }

    #[test]
    fn swapping_features_transposes_level0(seed in 0u64..1000) {
        let (d, h, w) = (4, 2, 4);
        let (a, b) = (random::<f64>(&[d, h, w], 1.0, seed), random::<f64>(&[d, h, w], 1.0, seed + 1));
        let g = Graph::<f64>::new();
        let ab = g.value(build_pyramid(&g, g.constant(a.clone()), g.constant(b.clone()), 1).unwrap().levels[0]).to_f64_vec();
        let ba = g.value(build_pyramid(&g, g.constant(b), g.constant(a), 1).unwrap().levels[0]).to_f64_vec();
        let n = h * w;
        for s in 0..n {
            for t in 0..n {
                prop_assert!((ab[s * n + t] - ba[t * n + s]).abs() < 1e-12);
            }
        }
    }
}
