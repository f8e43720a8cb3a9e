//! Property checks shared by the topical integration tests and the acceptance target.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use stiffpinn::balance::{compute_weights, BalanceConfig};
use stiffpinn::colloc::select_by_residual;
use stiffpinn::derivnet::{
    forward_jet_batch, forward_value, init_params, jet_values, Architecture, ParamVector,
};
use stiffpinn::tape::{NodeId, Tape};

const N_PARAMS: usize = 64;
const ROWS: usize = 3;
const COLS: usize = 4;

fn pick(rng: &mut ChaCha8Rng, pool: &[NodeId]) -> NodeId {
    pool[rng.gen_range(0..pool.len())]
}

/// Records a random graph over `params` on a fresh tape and returns the tape
/// with its scalar root.
fn random_graph(params: &[f64], shape_seed: u64) -> (Tape, NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(shape_seed);
    let mut tape = Tape::new(params.len());
    let mut pool = Vec::new();
    for _ in 0..3 {
        let off = rng.gen_range(0..=N_PARAMS - ROWS * COLS);
        pool.push(tape.param(params, off, ROWS, COLS).unwrap());
    }
    let c = Array2::from_shape_fn((ROWS, COLS), |_| rng.gen_range(-1.0..1.0));
    pool.push(tape.constant(c));

    let mut roots = Vec::new();
    for _ in 0..rng.gen_range(6..14) {
        let a = pick(&mut rng, &pool);
        let b = pick(&mut rng, &pool);
        let node = match rng.gen_range(0..10) {
            0 => tape.add(a, b),
            1 => tape.sub(a, b),
            2 => tape.mul(a, b),
            3 => tape.square(a),
            4 => tape.tanh(a),
            5 => {
                let c = pick(&mut rng, &pool);
                let terms = [
                    (a, rng.gen_range(-2.0..2.0)),
                    (b, rng.gen_range(-2.0..2.0)),
                    (c, 0.5),
                ];
                tape.lin_comb(&terms, rng.gen_range(-1.0..1.0))
            }
            6 => tape.add_scalar(a, rng.gen_range(-1.0..1.0)),
            7 | 8 => {
                let w = tape
                    .param(
                        params,
                        rng.gen_range(0..=N_PARAMS - ROWS * ROWS),
                        ROWS,
                        ROWS,
                    )
                    .unwrap();
                let bias_cols = rng.gen_range(0..=COLS);
                let bias = if bias_cols == 0 {
                    None
                } else {
                    let off = rng.gen_range(0..=N_PARAMS - ROWS);
                    Some((tape.param(params, off, ROWS, 1).unwrap(), bias_cols))
                };
                tape.affine(w, a, bias)
            }
            _ => tape.tanh_jet(a, COLS / 4),
        }
        .unwrap();
        if rng.gen_bool(0.3) {
            let start = rng.gen_range(0..COLS);
            let len = rng.gen_range(1..=COLS - start);
            let cols = tape.columns(node, start, len).unwrap();
            roots.push(tape.mean_squares(cols).unwrap());
        }
        pool.push(node);
    }
    let last = *pool.last().unwrap();
    roots.push(tape.mean_squares(last).unwrap());
    let terms: Vec<(NodeId, f64)> = roots.iter().map(|&r| (r, 1.0)).collect();
    let root = tape.lin_comb(&terms, 0.0).unwrap();
    (tape, root)
}

/// Max-norm relative error between reverse-mode and central-difference
/// gradients for each of `n_graphs` random graphs.
pub fn autodiff_fd_errors(n_graphs: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_graphs)
        .map(|_| {
            let shape_seed: u64 = rng.gen();
            let params: Vec<f64> = (0..N_PARAMS).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (tape, root) = random_graph(&params, shape_seed);
            let grad = tape.backward(root).unwrap();
            let eval = |p: &[f64]| {
                let (t, r) = random_graph(p, shape_seed);
                t.scalar_value(r).unwrap()
            };
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            let mut p = params.clone();
            for i in 0..N_PARAMS {
                p[i] = params[i] + h;
                let up = eval(&p);
                p[i] = params[i] - h;
                let down = eval(&p);
                p[i] = params[i];
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((grad.as_slice()[i] - fd).abs());
                scale = scale.max(fd.abs());
            }
            worst / scale.max(1e-12)
        })
        .collect()
}

pub struct JetFdErrors {
    pub u_x: f64,
    pub u_t: f64,
    pub u_xx: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Worst relative error of the jet against finite differences of the network
/// value at `n_points` random interior points of a randomly initialized network.
pub fn jet_fd_errors(n_points: usize, seed: u64) -> JetFdErrors {
    let params = init_params(Architecture::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut e = JetFdErrors {
        u_x: 0.0,
        u_t: 0.0,
        u_xx: 0.0,
    };
    for _ in 0..n_points {
        let (x, t) = (rng.gen_range(-0.95..0.95), rng.gen_range(0.05..0.95));
        let mut tape = Tape::new(params.len());
        let jet = forward_jet_batch(&mut tape, &params, &[(x, t)]).unwrap();
        let get = |id| tape.scalar_value(id).unwrap();
        let f = |x, t| forward_value(&params, x, t).unwrap();
        let h1 = 1e-5;
        let fd_x = (f(x + h1, t) - f(x - h1, t)) / (2.0 * h1);
        let fd_t = (f(x, t + h1) - f(x, t - h1)) / (2.0 * h1);
        let h2 = 1e-4;
        let fd_xx = (f(x + h2, t) - 2.0 * f(x, t) + f(x - h2, t)) / (h2 * h2);
        e.u_x = e.u_x.max(rel(get(jet.u_x), fd_x));
        e.u_t = e.u_t.max(rel(get(jet.u_t), fd_t));
        e.u_xx = e.u_xx.max(rel(get(jet.u_xx), fd_xx));
    }
    e
}

/// Relative error of the parameter gradient of `mean(u_xx²)` against central
/// differences along `n_dirs` random directions.
pub fn uxx_param_grad_error(n_dirs: usize, seed: u64) -> f64 {
    let params = init_params(Architecture::default(), seed).unwrap();
    let pts = [
        (0.3, 0.2),
        (-0.6, 0.7),
        (0.05, 0.5),
        (0.8, 0.9),
        (-0.2, 0.1),
    ];
    let loss = |p: &ParamVector| {
        let j = jet_values(p, &pts).unwrap();
        j.u_xx.iter().map(|v| v * v).sum::<f64>() / pts.len() as f64
    };
    let mut tape = Tape::new(params.len());
    let jet = forward_jet_batch(&mut tape, &params, &pts).unwrap();
    let root = tape.mean_squares(jet.u_xx).unwrap();
    let grad = tape.backward(root).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut worst: f64 = 0.0;
    for _ in 0..n_dirs {
        let v: Vec<f64> = (0..params.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let h = 1e-5;
        let shifted = |s: f64| {
            let vals = params
                .as_slice()
                .iter()
                .zip(&v)
                .map(|(p, d)| p + s * d / norm)
                .collect();
            ParamVector::from_vec(params.arch(), vals).unwrap()
        };
        let fd = (loss(&shifted(h)) - loss(&shifted(-h))) / (2.0 * h);
        let ad: f64 = grad
            .as_slice()
            .iter()
            .zip(&v)
            .map(|(g, d)| g * d / norm)
            .sum();
        worst = worst.max(rel(ad, fd));
    }
    worst
}

pub type Field = fn(f64, f64) -> f64;

/// Two smooth synthetic residual fields on `[−1, 1] × [0, 1]`.
pub fn synthetic_fields() -> [(&'static str, Field); 2] {
    [
        ("gaussian bump", |x, t| {
            0.2 + (-((x - 0.3).powi(2) + (t - 0.6).powi(2)) / 0.08).exp()
        }),
        ("front", |x, t| 0.3 + t * (-(x * x) / 0.05).exp() - 0.1 * x),
    ]
}

fn bin_of(x: f64, t: f64, k: usize) -> usize {
    let i = (((x + 1.0) / 2.0 * k as f64) as usize).min(k - 1);
    let j = ((t * k as f64) as usize).min(k - 1);
    i * k + j
}

pub struct MultinomialCheck {
    pub bins_outside: usize,
    pub worst_z: f64,
}

/// Resamples `n` of `pool` uniform candidates in proportion to `field` and
/// compares per-bin counts on an 8×8 grid with the bin's share of Σ|f|.
pub fn multinomial_check(field: Field, pool: usize, n: usize, seed: u64) -> MultinomialCheck {
    let k = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cand: Vec<(f64, f64)> = (0..pool)
        .map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(0.0..=1.0)))
        .collect();
    let res: Vec<f64> = cand.iter().map(|&(x, t)| field(x, t)).collect();
    let mut mass = vec![0.0; k * k];
    for (&(x, t), r) in cand.iter().zip(&res) {
        mass[bin_of(x, t, k)] += r.abs();
    }
    let total: f64 = mass.iter().sum();
    let chosen = select_by_residual(&cand, &res, n, &mut rng).unwrap();
    let mut counts = vec![0usize; k * k];
    for &(x, t) in &chosen {
        counts[bin_of(x, t, k)] += 1;
    }
    let mut out = MultinomialCheck {
        bins_outside: 0,
        worst_z: 0.0,
    };
    for (c, m) in counts.iter().zip(&mass) {
        let p = m / total;
        let se = (n as f64 * p * (1.0 - p)).sqrt();
        let z = (*c as f64 - n as f64 * p).abs() / se;
        out.worst_z = out.worst_z.max(z);
        if z > 3.0 {
            out.bins_outside += 1;
        }
    }
    out
}

/// p-value of a 4×4 chi-square uniformity test on points drawn with a
/// constant residual.
pub fn constant_field_chi_square_p(pool: usize, n: usize, seed: u64) -> f64 {
    let k = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cand: Vec<(f64, f64)> = (0..pool)
        .map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(0.0..=1.0)))
        .collect();
    let res = vec![0.7; pool];
    let chosen = select_by_residual(&cand, &res, n, &mut rng).unwrap();
    let mut counts = vec![0usize; k * k];
    for &(x, t) in &chosen {
        counts[bin_of(x, t, k)] += 1;
    }
    let expected = n as f64 / (k * k) as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    1.0 - ChiSquared::new((k * k - 1) as f64).unwrap().cdf(stat)
}

fn argmax(w: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if w[i] > w[best] {
            best = i;
        }
    }
    best
}

/// Checks the weight simplex properties on `n` random triples; returns the
/// first violation.
pub fn weight_simplex_violation(n: usize, seed: u64) -> Option<String> {
    let hyper = BalanceConfig::default();
    let ceiling = hyper.ceiling();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let mut g = [0.0; 3];
        for v in g.iter_mut() {
            *v = match rng.gen_range(0..4) {
                0 => 0.0,
                1 => rng.gen_range(0.0..1e-6),
                2 => rng.gen_range(0.0..1.0),
                _ => 10f64.powf(rng.gen_range(-3.0..6.0)),
            };
        }
        let w = compute_weights(&g, &hyper).unwrap();
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Some(format!("case {case}: {g:?} sums to {sum}"));
        }
        if w.iter().any(|&x| x < hyper.w_min || x > ceiling) {
            return Some(format!(
                "case {case}: {g:?} -> {w:?} outside [{}, {ceiling}]",
                hyper.w_min
            ));
        }
        let c = 10f64.powf(rng.gen_range(-2.0..2.0));
        let scaled = [g[0] * c, g[1] * c, g[2] * c];
        let ws = compute_weights(&scaled, &hyper).unwrap();
        if argmax(&ws) != argmax(&w) {
            return Some(format!(
                "case {case}: argmax moved under scale {c}: {w:?} vs {ws:?}"
            ));
        }
    }
    None
}
