//! Finite-difference oracles shared by the integration tests.
//!
//! Every reference here is written against plain `f64` slices so that it
//! does not share code paths with the graph under test.

#![allow(dead_code)]

use quantlab::autodiff::{Graph, Tensor};
use quantlab::numerics::{Matrix, Prng};
use quantlab::quantizer::{bridge_mste, bridge_na, bridge_ste, noise_alpha, QuantizerSpec};
use quantlab::Result;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Central differences of `f` at `x`.
pub fn fd_grad(x: &Matrix, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with a floor so two zero gradients agree.
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let norm = |m: &[f64]| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x - y)
        .collect();
    norm(&diff) / norm(a.as_slice()).max(norm(b.as_slice())).max(1e-8)
}

pub fn random_matrix(rng: &mut Prng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-2.0, 2.0))
}

/// Values bounded away from zero, for divisors and PReLU inputs.
pub fn away_from_zero(rng: &mut Prng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let m = rng.uniform(0.2, 2.0);
        if rng.uniform(0.0, 1.0) < 0.5 {
            -m
        } else {
            m
        }
    })
}

pub fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

type Build = dyn Fn(&mut Graph, &[Tensor]) -> Result<Tensor>;

/// Gradient check of a graph expression: the VJP with a random cotangent
/// `w` against central differences of `⟨w, build(inputs)⟩`. Returns the
/// worst relative error across inputs.
pub fn check_graph(inputs: &[Matrix], w_seed: &mut Prng, build: &Build) -> f64 {
    let mut g = Graph::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
    let out = build(&mut g, &leaves).unwrap();
    let (r, c) = out.shape();
    let w = random_matrix(w_seed, r, c);
    g.backward_with(out, w.clone()).unwrap();
    let analytic: Vec<Matrix> = leaves.iter().map(|&t| g.grad_or_zeros(t)).collect();

    let eval = |vals: &[Matrix]| {
        let mut g = Graph::new();
        let leaves: Vec<Tensor> = vals.iter().map(|m| g.leaf(m.clone())).collect();
        let out = build(&mut g, &leaves).unwrap();
        dot(g.value(out), &w)
    };
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let numeric = fd_grad(&inputs[k], |x| {
            let mut vals = inputs.to_vec();
            vals[k] = x.clone();
            eval(&vals)
        });
        worst = worst.max(rel_err(a, &numeric));
    }
    worst
}

/// Population std with the same epsilon as the graph op, on a slice.
pub fn std_ref(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n + 1e-12).sqrt()
}

/// Reference surrogate for a bridge, with every stopped quantity frozen at
/// its value at `e0`.
pub fn bridge_surrogate(
    kind: &str,
    e0: &Matrix,
    e_q0: &Matrix,
    noise0: &Matrix,
    ratio_db: f64,
) -> impl Fn(&Matrix) -> Matrix {
    let kind = kind.to_string();
    let e0 = e0.clone();
    let e_q0 = e_q0.clone();
    let noise0 = noise0.clone();
    let alpha = noise_alpha(ratio_db);
    move |e: &Matrix| match kind.as_str() {
        "ste" => e.zip_map(&e0.zip_map(&e_q0, |a, q| q - a), |x, d| x + d),
        "mste" => {
            let qe0: Vec<f64> = e_q0
                .as_slice()
                .iter()
                .zip(e0.as_slice())
                .map(|(q, a)| q - a)
                .collect();
            let qe: Vec<f64> = e_q0
                .as_slice()
                .iter()
                .zip(e.as_slice())
                .map(|(q, a)| q - a)
                .collect();
            let ratio = std_ref(&qe) / std_ref(&qe0);
            let data = e
                .as_slice()
                .iter()
                .zip(&qe0)
                .map(|(x, d)| x + d * ratio)
                .collect();
            Matrix::from_vec(e.rows(), e.cols(), data).unwrap()
        }
        "na" => {
            let s = std_ref(e.as_slice());
            e.zip_map(&noise0, |x, n| x + alpha * s * n)
        }
        "na_det" => {
            let s = std_ref(e0.as_slice());
            e.zip_map(&noise0, |x, n| x + alpha * s * n)
        }
        other => panic!("unknown bridge {other}"),
    }
}

/// Gradient check of one training bridge at `e0` with cotangent `w`.
pub fn check_bridge(
    kind: &str,
    e0: &Matrix,
    w: &Matrix,
    spec: &QuantizerSpec,
    noise_seed: u64,
) -> f64 {
    let ratio_db = 4.0;
    let mut g = Graph::new();
    let e = g.leaf(e0.clone());
    let mut noise_rng = Prng::new(noise_seed, 3);
    let (out, e_q) = match kind {
        "ste" => {
            let b = bridge_ste(&mut g, e, spec).unwrap();
            (b.d_in, b.e_q)
        }
        "mste" => {
            let b = bridge_mste(&mut g, e, spec).unwrap();
            (b.d_in, b.e_q)
        }
        "na" | "na_det" => {
            let d = bridge_na(&mut g, e, ratio_db, &mut noise_rng, kind == "na_det").unwrap();
            (d, spec.quantize(e0))
        }
        other => panic!("unknown bridge {other}"),
    };
    g.backward_with(out, w.clone()).unwrap();
    let analytic = g.grad_or_zeros(e);

    // Same stream, same draw: reproduces the noise the bridge used.
    let noise0 =
        quantlab::numerics::gaussian_matrix(&mut Prng::new(noise_seed, 3), e0.rows(), e0.cols());
    let f = bridge_surrogate(kind, e0, &e_q, &noise0, ratio_db);
    let numeric = fd_grad(e0, |x| dot(&f(x), w));
    rel_err(&analytic, &numeric)
}

/// `erf` by its Maclaurin series; accurate to ~1e-15 for `|x| ≤ 3`.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
        if n > 200.0 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

/// Level probabilities of a nearest-level quantizer under `N(0, 1)`.
pub fn level_probabilities(levels: &[f64]) -> Vec<f64> {
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(levels.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(f64::INFINITY);
    let cdf = |x: f64| {
        if x.is_infinite() {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            phi(x)
        }
    };
    edges.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect()
}

/// `E[q(z)²]` for `z ~ N(0, 1)`.
pub fn quantized_second_moment(levels: &[f64]) -> f64 {
    level_probabilities(levels)
        .iter()
        .zip(levels)
        .map(|(p, l)| p * l * l)
        .sum()
}

/// Schoolbook product, independent of the GEMM backend.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    Matrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
    })
}

pub fn to_nalgebra(m: &Matrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Worst relative gradient error per op/bridge over `instances` random
/// cases with shapes up to 4×4.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let spec = QuantizerSpec::new(&quantlab::datagen::LEVELS_2BIT).unwrap();
    let mut rng = Prng::new(seed, 0);
    let mut worst: Vec<(&'static str, f64)> = [
        "matmul",
        "add",
        "sub",
        "mul",
        "div",
        "add_scalar",
        "mul_scalar",
        "div_scalar",
        "scale",
        "prelu",
        "sum_all",
        "mean_all",
        "std_all",
        "mse",
        "stop_grad",
        "bridge_ste",
        "bridge_mste",
        "bridge_na",
        "bridge_na_det",
    ]
    .iter()
    .map(|&n| (n, 0.0))
    .collect();
    let mut record = |name: &str, err: f64| {
        let slot = worst.iter_mut().find(|(n, _)| *n == name).unwrap();
        slot.1 = slot.1.max(err);
    };
    for i in 0..instances {
        let mut dim = |lo: usize| lo + (rng.next_u64() % (5 - lo as u64)) as usize;
        let (m, k, n) = (dim(1), dim(1), dim(1));
        let m2 = dim(2);
        let a = random_matrix(&mut rng, m, n);
        let b = random_matrix(&mut rng, m, n);
        let nz = away_from_zero(&mut rng, m, n);
        let s = away_from_zero(&mut rng, 1, 1);
        let r = &mut rng;

        let mm = [random_matrix(r, m, k), random_matrix(r, k, n)];
        record("matmul", check_graph(&mm, r, &|g, t| g.matmul(t[0], t[1])));
        let ab = [a.clone(), b.clone()];
        record("add", check_graph(&ab, r, &|g, t| g.add(t[0], t[1])));
        record("sub", check_graph(&ab, r, &|g, t| g.sub(t[0], t[1])));
        record("mul", check_graph(&ab, r, &|g, t| g.mul(t[0], t[1])));
        record(
            "div",
            check_graph(&[a.clone(), nz.clone()], r, &|g, t| g.div(t[0], t[1])),
        );
        let as_ = [a.clone(), s.clone()];
        record(
            "add_scalar",
            check_graph(&as_, r, &|g, t| g.add(t[0], t[1])),
        );
        record(
            "mul_scalar",
            check_graph(&as_, r, &|g, t| g.mul(t[0], t[1])),
        );
        record(
            "div_scalar",
            check_graph(&as_, r, &|g, t| g.div(t[0], t[1])),
        );
        let f = r.uniform(-3.0, 3.0);
        record(
            "scale",
            check_graph(std::slice::from_ref(&a), r, &move |g, t| {
                Ok(g.scale(t[0], f))
            }),
        );
        let slope = random_matrix(r, 1, 1);
        record(
            "prelu",
            check_graph(&[nz.clone(), slope], r, &|g, t| g.prelu(t[0], t[1])),
        );
        record(
            "sum_all",
            check_graph(std::slice::from_ref(&a), r, &|g, t| Ok(g.sum_all(t[0]))),
        );
        record(
            "mean_all",
            check_graph(std::slice::from_ref(&a), r, &|g, t| g.mean_all(t[0])),
        );
        let wide = random_matrix(r, m2, n);
        record(
            "std_all",
            check_graph(std::slice::from_ref(&wide), r, &|g, t| g.std_all(t[0])),
        );
        record("mse", check_graph(&ab, r, &|g, t| g.mse(t[0], t[1])));

        // ⟨w, a + sg(a)·a⟩ has gradient w·(1 + a0).
        let w = random_matrix(r, m, n);
        let mut g = Graph::new();
        let at = g.leaf(a.clone());
        let st = g.stop_grad(at);
        let p = g.mul(st, at).unwrap();
        let out = g.add(at, p).unwrap();
        g.backward_with(out, w.clone()).unwrap();
        let numeric = fd_grad(&a, |x| dot(&x.zip_map(&a, |v, f0| v + f0 * v), &w));
        record("stop_grad", rel_err(&g.grad_or_zeros(at), &numeric));

        let w2 = random_matrix(r, m2, n);
        let nseed = seed.wrapping_mul(1000).wrapping_add(i as u64);
        record("bridge_ste", check_bridge("ste", &wide, &w2, &spec, nseed));
        record(
            "bridge_mste",
            check_bridge("mste", &wide, &w2, &spec, nseed),
        );
        record("bridge_na", check_bridge("na", &wide, &w2, &spec, nseed));
        record(
            "bridge_na_det",
            check_bridge("na_det", &wide, &w2, &spec, nseed),
        );
    }
    worst
}
