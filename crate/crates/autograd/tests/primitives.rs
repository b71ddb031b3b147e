use mvx_autograd::gradcheck::{check, GradCheck};
use mvx_autograd::primitive_suite::{self, random, scan_inputs, scan_ops};
use mvx_autograd::{Graph, GraphError, ParamStore, Scalar, Tensor, Var};

fn run_suite<S: Scalar>(opts: GradCheck, tol: f64) {
    let failures: Vec<String> = primitive_suite::run::<S>(opts)
        .unwrap()
        .into_iter()
        .filter(|c| !(c.report.max_rel_error < tol))
        .map(|c| format!("{}: {:.3e} at {}", c.op, c.report.max_rel_error, c.report.worst))
        .collect();
    assert!(failures.is_empty(), "gradient check failures: {failures:#?}");
}

#[test]
fn primitive_gradients_f32() {
    run_suite::<f32>(GradCheck::f32_default(), 1e-2);
}

#[test]
fn primitive_gradients_f64() {
    run_suite::<f64>(GradCheck::f64_default(), 1e-5);
}

#[test]
fn conv_of_zeros_is_zero() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[3, 8, 8]));
    let w = g.constant(random(&[4, 3, 3, 3], 1));
    let b = g.constant(Tensor::zeros(&[4]));
    let y = g.conv2d(x, w, Some(b), 2, 1).unwrap();
    assert_eq!(g.shape(y), vec![4, 4, 4]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn grid_sample_at_integer_coordinates_is_exact() {
    let g = Graph::<f32>::new();
    let src = random::<f32>(&[2, 4, 5], 3);
    let x = g.constant(src.clone());
    let coords: Vec<f32> = vec![0.0, 0.0, 3.0, 4.0, 2.0, 1.0, 1.0, 3.0];
    let c = g.constant(Tensor::from_vec(&[4, 2], coords.clone()));
    let y = g.grid_sample(x, c).unwrap();
    let out = g.value(y);
    for ch in 0..2 {
        for (p, yx) in coords.chunks(2).enumerate() {
            let expect = src.data()[ch * 20 + yx[0] as usize * 5 + yx[1] as usize];
            assert_eq!(out.data()[ch * 4 + p], expect);
        }
    }
}

#[test]
fn grid_sample_clamps_to_border() {
    let g = Graph::<f64>::new();
    let src = random::<f64>(&[1, 3, 3], 4);
    let x = g.constant(src.clone());
    let c = g.constant(Tensor::from_vec(&[2, 2], vec![-5.0, -5.0, 10.0, 1.0]));
    let y = g.grid_sample(x, c).unwrap();
    assert_eq!(g.value(y).data()[0], src.data()[0]);
    assert_eq!(g.value(y).data()[1], src.data()[2 * 3 + 1]);
}

#[test]
fn shape_errors_name_the_operation() {
    let g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 5]));
    let cases: Vec<(&str, mvx_autograd::Result<Var>)> = vec![
        ("add", g.add(a, b)),
        ("matmul", g.matmul(a, b)),
        ("concat", g.concat(&[a, b], 0)),
        ("conv2d", g.conv2d(a, b, None, 1, 0)),
        ("avg_pool2d", g.avg_pool2d(a, 2)),
        ("layer_norm", g.layer_norm(a, b, b, 1e-5)),
    ];
    for (op, r) in cases {
        match r {
            Err(e @ GraphError::Shape { .. }) => {
                assert_eq!(e.op(), op);
                assert!(e.to_string().starts_with(op));
            }
            Err(e) => panic!("{op}: unexpected {e}"),
            Ok(_) => panic!("{op} accepted mismatched shapes"),
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let g = Graph::<f32>::new();
        let x = g.constant(random(&[3, 8, 8], 5));
        let w = g.constant(random(&[6, 3, 3, 3], 6));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.tanh(y);
        let y = g.avg_pool2d(y, 2).unwrap();
        let v: Vec<u32> = g.value(y).data().iter().map(|v| v.to_bits()).collect();
        v
    };
    assert_eq!(run(), run());
}

#[test]
fn nonfinite_values_are_reported_with_op() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_vec(&[2], vec![100.0, 1.0]));
    let _ = g.exp(x);
    assert_eq!(g.first_nonfinite(), Some("exp"));
}

#[test]
fn relu_propagates_nan() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_vec(&[3], vec![f32::NAN, -1.0, 2.0]));
    let y = g.value(g.relu(x));
    assert!(y.data()[0].is_nan());
    assert_eq!(&y.data()[1..], &[0.0, 2.0]);
}

/// Independent direct-loop scan with explicit discretization.
fn scan_loop(u: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], (l, e, s): (usize, usize, usize)) -> Vec<f64> {
    let mut y = vec![0.0; l * e];
    for ch in 0..e {
        for st in 0..s {
            let mut h = 0.0;
            for t in 0..l {
                let abar = (delta[t * e + ch] * a[ch * s + st]).exp();
                let bbar = delta[t * e + ch] * b[t * s + st];
                h = abar * h + bbar * u[t * e + ch];
                y[t * e + ch] += c[t * s + st] * h;
            }
        }
    }
    y
}

fn run_scan(inputs: &[Tensor<f64>], reverse: bool) -> Vec<f64> {
    let g = Graph::<f64>::new();
    let v: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = g.selective_scan(scan_ops(&g, &v), reverse).unwrap();
    let out = g.value(y).data().to_vec();
    out
}

#[test]
fn scan_matches_direct_loop_and_superposes() {
    let (l, e, s) = (6, 3, 4);
    let mut inputs = scan_inputs::<f64>(l, e, s);
    inputs[5] = Tensor::zeros(&[e]);
    let direct = scan_loop(
        inputs[0].data(),
        inputs[1].data(),
        inputs[2].data(),
        inputs[3].data(),
        inputs[4].data(),
        (l, e, s),
    );
    let ours = run_scan(&inputs, false);
    for (a, b) in ours.iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12);
    }
    // Superposition in x with the gating parameters held fixed.
    let u1 = inputs[0].clone();
    let u2 = random::<f64>(&[l, e], 77);
    let mut with = |u: Tensor<f64>| {
        inputs[0] = u;
        run_scan(&inputs, false)
    };
    let y1 = with(u1.clone());
    let y2 = with(u2.clone());
    let y12 = with(u1.zip_map(&u2, |a, b| 2.0 * a - 3.0 * b));
    for i in 0..y12.len() {
        assert!((y12[i] - (2.0 * y1[i] - 3.0 * y2[i])).abs() < 1e-12);
    }
}

#[test]
fn scan_reverse_equals_scan_of_flipped_sequence() {
    let (l, e, s) = (5, 2, 3);
    let inputs = scan_inputs::<f64>(l, e, s);
    let flip = |t: &Tensor<f64>| {
        let cols = t.shape()[1];
        Tensor::from_vec(t.shape(), t.data().chunks(cols).rev().flatten().copied().collect())
    };
    let mut flipped = inputs.clone();
    for i in [0, 1, 3, 4] {
        flipped[i] = flip(&inputs[i]);
    }
    let rev = run_scan(&inputs, true);
    let fwd_of_flipped = flip(&Tensor::from_vec(&[l, e], run_scan(&flipped, false)));
    for (a, b) in rev.iter().zip(fwd_of_flipped.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn scan_with_vanishing_step_only_passes_skip() {
    let (l, e, s) = (4, 2, 3);
    let mut inputs = scan_inputs::<f64>(l, e, s);
    inputs[1] = Tensor::full(&[l, e], 1e-12);
    let y = run_scan(&inputs, false);
    for t in 0..l {
        for ch in 0..e {
            let skip = inputs[5].data()[ch] * inputs[0].data()[t * e + ch];
            assert!((y[t * e + ch] - skip).abs() < 1e-9);
        }
    }
}

#[test]
fn kink_inside_stencil_is_judged_one_sided() {
    // relu input sits 1e-4 from zero, inside the 1e-3 stencil.
    let x = Tensor::from_vec(&[3], vec![0.0001f32, 0.7, -0.3]);
    let params = ParamStore::new();
    let f = |g: &Graph<f32>, _: &ParamStore<f32>, v: &[Var]| Ok(g.sum(g.relu(v[0])));
    let strict = check(GradCheck { kink_threshold: None, ..GradCheck::f32_default() }, &[x.clone()], &params, f).unwrap();
    assert!(strict.max_rel_error > 0.3);
    let r = check(GradCheck::f32_default(), &[x], &params, f).unwrap();
    assert_eq!(r.kinks, 1);
    assert!(r.max_rel_error < 1e-2, "{}", r.max_rel_error);
}

#[test]
fn wrong_gradient_is_still_caught_at_a_kink() {
    let x = Tensor::from_vec(&[2], vec![0.0004f32, 0.7]);
    let params = ParamStore::new();
    let f = |g: &Graph<f32>, _: &ParamStore<f32>, v: &[Var]| {
        let y = g.value(g.relu(v[0])).clone();
        // Same value as relu, gradient doubled.
        let doubled = g.custom_op(
            "bad_relu",
            y,
            &[v[0]],
            Box::new(|args| vec![Some(args.grad.map(|t| t * 2.0))]),
        );
        Ok(g.sum(doubled))
    };
    let r = check(GradCheck::f32_default(), &[x], &params, f).unwrap();
    assert!(r.max_rel_error > 0.3);
}
