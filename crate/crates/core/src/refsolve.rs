//! Finite-difference reference solutions and the Cole–Hopf oracle for Burgers.
//!
//! Burgers is advanced in conservative form `u_t + (u²/2)_x = ν u_xx` with a
//! Rusanov flux, central diffusion and explicit Euler. The step is recomputed
//! every step as `c · min(Δx / max|u|, Δx² / (2ν))` and clipped so the solver
//! lands exactly on each output time. Allen–Cahn uses the same explicit
//! stepping with pointwise reaction and Dirichlet `−1` boundaries.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{ProblemKind, ProblemSpec};

#[derive(Debug, Error)]
pub enum RefError {
    #[error("invalid solver parameter: {0}")]
    BadParameter(&'static str),
    #[error("solution became non-finite at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("query ({x}, {t}) outside the reference grid")]
    OutOfDomain { x: f64, t: f64 },
    #[error("Cole–Hopf formula needs t > 0, got {0}")]
    NonPositiveTime(f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub scheme: String,
    /// Safety constant multiplying the stability bounds.
    pub cfl: f64,
    pub steps: usize,
    /// Every step size actually taken.
    #[serde(skip)]
    pub dt_history: Vec<f64>,
    /// Unscaled stability limit in force at each step.
    #[serde(skip)]
    pub bound_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceGrid {
    pub x_nodes: Vec<f64>,
    pub t_nodes: Vec<f64>,
    /// `n_t × n_x`
    pub values: Array2<f64>,
    pub meta: GridMeta,
}

pub fn uniform_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Default snapshot times `0, 0.01, …, 1`.
pub fn default_output_times() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Symmetric node set on `[−1, 1]`: `x[n−1−i] == −x[i]` bit-for-bit.
fn symmetric_x(n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let j = n - 1 - i;
        if i <= j {
            let v = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            let v = if 2 * i == n - 1 { 0.0 } else { v };
            x[i] = v;
            x[j] = -v;
        }
    }
    x
}

fn check_times(times: &[f64]) -> Result<(), RefError> {
    if times.first() != Some(&0.0) {
        return Err(RefError::BadParameter("output times must start at 0"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RefError::BadParameter("output times must increase"));
    }
    Ok(())
}

fn van_leer(a: f64, b: f64) -> f64 {
    if a * b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

pub fn solve_burgers_fd(nu: f64, n_x: usize, cfl_c: f64) -> Result<ReferenceGrid, RefError> {
    solve_burgers_fd_at(nu, n_x, cfl_c, &default_output_times())
}

pub fn solve_burgers_fd_at(
    nu: f64,
    n_x: usize,
    cfl_c: f64,
    times: &[f64],
) -> Result<ReferenceGrid, RefError> {
    if n_x < 129 {
        return Err(RefError::BadParameter("n_x must be at least 129"));
    }
    if !(cfl_c > 0.0 && cfl_c <= 0.5) {
        return Err(RefError::BadParameter("cfl constant must lie in (0, 0.5]"));
    }
    if nu.is_nan() || nu <= 0.0 {
        return Err(RefError::BadParameter("nu must be positive"));
    }
    check_times(times)?;
    let spec = ProblemSpec::burgers(nu).expect("nu checked");
    let x = symmetric_x(n_x);
    let dx = 2.0 / (n_x - 1) as f64;
    let mut u: Vec<f64> = x.iter().map(|&xi| spec.ic_unchecked(xi)).collect();
    let mut values = Array2::zeros((times.len(), n_x));
    values.row_mut(0).assign(&ndarray::ArrayView1::from(&u));
    u[0] = 0.0;
    u[n_x - 1] = 0.0;

    let mut flux = vec![0.0; n_x - 1];
    // boundary slopes stay zero
    let mut slope = vec![0.0; n_x];
    let mut next = u.clone();
    let mut meta = GridMeta {
        scheme: "muscl-vanleer rusanov-flux central-diffusion explicit-euler".into(),
        cfl: cfl_c,
        steps: 0,
        dt_history: Vec::new(),
        bound_history: Vec::new(),
    };
    let diffusive = dx * dx / (2.0 * nu);
    let mut t = 0.0;
    for (k, &t_out) in times.iter().enumerate().skip(1) {
        while t < t_out {
            let umax = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let advective = if umax > 0.0 { dx / umax } else { f64::INFINITY };
            let bound = advective.min(diffusive);
            let mut dt = cfl_c * bound;
            let last = t + dt >= t_out;
            if last {
                dt = t_out - t;
            }
            for i in 1..n_x - 1 {
                slope[i] = van_leer(u[i] - u[i - 1], u[i + 1] - u[i]);
            }
            for i in 0..n_x - 1 {
                let ul = u[i] + 0.5 * slope[i];
                let ur = u[i + 1] - 0.5 * slope[i + 1];
                let a = ul.abs().max(ur.abs());
                flux[i] = 0.25 * (ul * ul + ur * ur) - 0.5 * a * (ur - ul);
            }
            for i in 1..n_x - 1 {
                let adv = (flux[i] - flux[i - 1]) / dx;
                let diff = nu * (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
                next[i] = u[i] + dt * (diff - adv);
            }
            std::mem::swap(&mut u, &mut next);
            t = if last { t_out } else { t + dt };
            meta.steps += 1;
            meta.dt_history.push(dt);
            meta.bound_history.push(bound);
            if u.iter().any(|v| !v.is_finite()) {
                return Err(RefError::NonFinite {
                    step: meta.steps,
                    t,
                });
            }
        }
        values.row_mut(k).assign(&ndarray::ArrayView1::from(&u));
    }
    Ok(ReferenceGrid {
        x_nodes: x,
        t_nodes: times.to_vec(),
        values,
        meta,
    })
}

pub fn solve_allen_cahn_fd(eps2: f64, n_x: usize, dt_max: f64) -> Result<ReferenceGrid, RefError> {
    solve_allen_cahn_fd_at(eps2, n_x, dt_max, &default_output_times(), None)
}

/// `initial` overrides the benchmark initial condition (length `n_x`).
pub fn solve_allen_cahn_fd_at(
    eps2: f64,
    n_x: usize,
    dt_max: f64,
    times: &[f64],
    initial: Option<&[f64]>,
) -> Result<ReferenceGrid, RefError> {
    if n_x < 129 {
        return Err(RefError::BadParameter("n_x must be at least 129"));
    }
    if dt_max.is_nan() || dt_max <= 0.0 {
        return Err(RefError::BadParameter("dt_max must be positive"));
    }
    if eps2.is_nan() || eps2 <= 0.0 {
        return Err(RefError::BadParameter("eps2 must be positive"));
    }
    check_times(times)?;
    let spec = ProblemSpec::allen_cahn(eps2).expect("eps2 checked");
    let x = symmetric_x(n_x);
    let dx = 2.0 / (n_x - 1) as f64;
    let mut u: Vec<f64> = match initial {
        Some(v) if v.len() == n_x => v.to_vec(),
        Some(_) => {
            return Err(RefError::BadParameter(
                "initial state length must equal n_x",
            ))
        }
        None => x.iter().map(|&xi| spec.ic_unchecked(xi)).collect(),
    };
    let mut values = Array2::zeros((times.len(), n_x));
    values.row_mut(0).assign(&ndarray::ArrayView1::from(&u));
    let bc = spec.bc_constant();
    u[0] = bc;
    u[n_x - 1] = bc;

    let diffusive = dx * dx / (2.0 * eps2);
    let dt_nominal = dt_max.min(0.4 * diffusive).min(0.1);
    let mut meta = GridMeta {
        scheme: "central-diffusion pointwise-reaction explicit-euler".into(),
        cfl: 0.4,
        steps: 0,
        dt_history: Vec::new(),
        bound_history: Vec::new(),
    };
    let mut next = u.clone();
    let mut t = 0.0;
    for (k, &t_out) in times.iter().enumerate().skip(1) {
        while t < t_out {
            let mut dt = dt_nominal;
            let last = t + dt >= t_out;
            if last {
                dt = t_out - t;
            }
            for i in 1..n_x - 1 {
                let lap = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
                let ui = u[i];
                next[i] = ui + dt * (eps2 * lap - (ui * ui * ui - ui));
            }
            next[0] = bc;
            next[n_x - 1] = bc;
            std::mem::swap(&mut u, &mut next);
            t = if last { t_out } else { t + dt };
            meta.steps += 1;
            meta.dt_history.push(dt);
            meta.bound_history.push(diffusive);
            if u.iter().any(|v| !v.is_finite()) {
                return Err(RefError::NonFinite {
                    step: meta.steps,
                    t,
                });
            }
        }
        values.row_mut(k).assign(&ndarray::ArrayView1::from(&u));
    }
    Ok(ReferenceGrid {
        x_nodes: x,
        t_nodes: times.to_vec(),
        values,
        meta,
    })
}

/// Reference grid for `spec` at the default resolution.
pub fn solve_reference(spec: &ProblemSpec) -> Result<ReferenceGrid, RefError> {
    match spec.kind {
        ProblemKind::Burgers => solve_burgers_fd(spec.nu, 2049, 0.4),
        ProblemKind::AllenCahn => solve_allen_cahn_fd(spec.eps2, 1025, 1e-4),
    }
}

fn bracket(nodes: &[f64], q: f64) -> Option<(usize, f64)> {
    let n = nodes.len();
    if !(q >= nodes[0] && q <= nodes[n - 1]) {
        return None;
    }
    let i = nodes.partition_point(|&v| v <= q).clamp(1, n - 1) - 1;
    let w = (q - nodes[i]) / (nodes[i + 1] - nodes[i]);
    Some((i, w))
}

/// Bilinear interpolation on the grid.
pub fn interpolate(grid: &ReferenceGrid, x: f64, t: f64) -> Result<f64, RefError> {
    let (Some((i, wx)), Some((k, wt))) = (bracket(&grid.x_nodes, x), bracket(&grid.t_nodes, t))
    else {
        return Err(RefError::OutOfDomain { x, t });
    };
    let v = &grid.values;
    let lo = (1.0 - wx) * v[[k, i]] + wx * v[[k, i + 1]];
    let hi = (1.0 - wx) * v[[k + 1, i]] + wx * v[[k + 1, i + 1]];
    Ok((1.0 - wt) * lo + wt * hi)
}

impl ReferenceGrid {
    /// Row index of an exact output time.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.t_nodes.iter().position(|&s| (s - t).abs() < 1e-12)
    }

    /// CSV: first row `t,x_0,x_1,…`; then one row `t,u(x_0),u(x_1),…` per time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), RefError> {
        let mut line = String::from("t");
        for x in &self.x_nodes {
            line.push_str(&format!(",{x:.17e}"));
        }
        writeln!(w, "{line}")?;
        for (k, t) in self.t_nodes.iter().enumerate() {
            let mut line = format!("{t:.17e}");
            for v in self.values.row(k) {
                line.push_str(&format!(",{v:.17e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), RefError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    pub fn to_json(&self) -> Result<String, RefError> {
        #[derive(Serialize)]
        struct Out<'a> {
            x: &'a [f64],
            t: &'a [f64],
            values: Vec<Vec<f64>>,
            meta: &'a GridMeta,
        }
        let values = self.values.outer_iter().map(|r| r.to_vec()).collect();
        Ok(serde_json::to_string(&Out {
            x: &self.x_nodes,
            t: &self.t_nodes,
            values,
            meta: &self.meta,
        })?)
    }
}

/// Gauss–Hermite nodes and weights for `∫ e^{−s²} f(s) ds`, by Newton
/// iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Quadrature rule reused across many Cole–Hopf evaluations.
#[derive(Clone, Debug)]
pub struct ColeHopf {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ColeHopf {
    pub fn new(quad_order: usize) -> Result<Self, RefError> {
        if quad_order < 32 {
            return Err(RefError::BadParameter(
                "quadrature order must be at least 32",
            ));
        }
        let (nodes, weights) = gauss_hermite(quad_order);
        Ok(Self { nodes, weights })
    }

    /// Exact viscous Burgers solution for `u(x, 0) = −sin(πx)`:
    /// `u = −∫ sin(π(x−η)) φ(x−η) G(η) dη / ∫ φ(x−η) G(η) dη`,
    /// `φ(y) = exp(−cos(πy)/(2πν))`, `G` the heat kernel, with `η = 2√(νt) s`.
    pub fn eval(&self, x: f64, t: f64, nu: f64) -> Result<f64, RefError> {
        if t.is_nan() || t <= 0.0 {
            return Err(RefError::NonPositiveTime(t));
        }
        let scale = 2.0 * (nu * t).sqrt();
        let k = 1.0 / (2.0 * PI * nu);
        // exponents are at most k; shift by k to keep terms ≤ 1
        let (mut num, mut den) = (0.0, 0.0);
        for (&s, &w) in self.nodes.iter().zip(&self.weights) {
            let y = PI * (x - scale * s);
            let e = (-y.cos() * k - k).exp();
            num += w * y.sin() * e;
            den += w * e;
        }
        Ok(-num / den)
    }
}

pub fn cole_hopf_exact(x: f64, t: f64, nu: f64, quad_order: usize) -> Result<f64, RefError> {
    ColeHopf::new(quad_order)?.eval(x, t, nu)
}

/// Flattened relative L2 distance between two equal-length vectors.
pub fn rel_l2_vec(pred: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = pred
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_integrates_moments() {
        let (x, w) = gauss_hermite(40);
        let sqrt_pi = PI.sqrt();
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - sqrt_pi).abs() < 1e-13);
        assert!((m2 - sqrt_pi / 2.0).abs() < 1e-13);
        assert!((m4 - 0.75 * sqrt_pi).abs() < 1e-12);
        let (_, w128) = gauss_hermite(128);
        assert!((w128.iter().sum::<f64>() - sqrt_pi).abs() < 1e-12);
    }

    #[test]
    fn cole_hopf_odd_and_boundaries() {
        let ch = ColeHopf::new(64).unwrap();
        for t in [0.1, 0.5, 1.0] {
            assert!(ch.eval(0.0, t, 0.01).unwrap().abs() < 1e-14);
            assert!(ch.eval(1.0, t, 0.01).unwrap().abs() < 1e-10);
            assert!(ch.eval(-1.0, t, 0.01).unwrap().abs() < 1e-10);
            let a = ch.eval(0.3, t, 0.01).unwrap();
            let b = ch.eval(-0.3, t, 0.01).unwrap();
            assert!((a + b).abs() < 1e-13);
        }
        assert!(matches!(
            ch.eval(0.1, 0.0, 0.01),
            Err(RefError::NonPositiveTime(_))
        ));
        assert!(ColeHopf::new(16).is_err());
    }

    #[test]
    fn cole_hopf_small_time_matches_ic() {
        let v = cole_hopf_exact(0.5, 1e-8, 0.01, 64).unwrap();
        assert!((v + 1.0).abs() < 1e-6);
    }

    #[test]
    fn burgers_first_row_is_ic_and_boundaries_zero() {
        let g = solve_burgers_fd_at(0.01, 129, 0.4, &[0.0, 0.05, 0.1]).unwrap();
        for (j, &x) in g.x_nodes.iter().enumerate() {
            assert_eq!(g.values[[0, j]], -crate::problems::sin_pi(x));
        }
        for k in 0..g.t_nodes.len() {
            assert_eq!(g.values[[k, 0]], 0.0);
            assert_eq!(g.values[[k, 128]], 0.0);
        }
    }

    #[test]
    fn burgers_odd_symmetry() {
        let g = solve_burgers_fd_at(0.01, 257, 0.4, &[0.0, 0.25, 0.5]).unwrap();
        let n = g.x_nodes.len();
        for k in 0..3 {
            for j in 0..n {
                assert!((g.values[[k, j]] + g.values[[k, n - 1 - j]]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn burgers_steps_respect_bounds() {
        let g = solve_burgers_fd_at(0.01, 257, 0.4, &[0.0, 0.3]).unwrap();
        assert_eq!(g.meta.dt_history.len(), g.meta.steps);
        for (dt, b) in g.meta.dt_history.iter().zip(&g.meta.bound_history) {
            assert!(*dt > 0.0 && *dt <= 0.4 * b * (1.0 + 1e-12));
        }
    }

    #[test]
    fn solver_parameters_validated() {
        assert!(solve_burgers_fd(0.01, 64, 0.4).is_err());
        assert!(solve_burgers_fd(0.01, 129, 0.6).is_err());
        assert!(solve_allen_cahn_fd(1e-4, 129, 0.0).is_err());
    }

    #[test]
    fn allen_cahn_equilibrium_is_preserved() {
        let init = vec![-1.0; 129];
        let g = solve_allen_cahn_fd_at(1e-4, 129, 1e-3, &[0.0, 0.5, 1.0], Some(&init)).unwrap();
        assert!(g.values.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn allen_cahn_bounded_and_dirichlet() {
        let g = solve_allen_cahn_fd(1e-4, 257, 1e-3).unwrap();
        assert!(g.values.iter().all(|v| v.abs() <= 1.0 + 1e-8));
        for k in 0..g.t_nodes.len() {
            assert_eq!(g.values[[k, 0]], -1.0);
            assert_eq!(g.values[[k, 256]], -1.0);
        }
    }

    #[test]
    fn interpolation_exact_at_nodes_and_linear_between() {
        let x = uniform_nodes(-1.0, 1.0, 5);
        let t = vec![0.0, 0.5, 1.0];
        let mut values = Array2::zeros((3, 5));
        for k in 0..3 {
            for j in 0..5 {
                values[[k, j]] = 2.0 * x[j] + 3.0 * t[k] + 1.0;
            }
        }
        let g = ReferenceGrid {
            x_nodes: x.clone(),
            t_nodes: t,
            values,
            meta: GridMeta {
                scheme: "test".into(),
                cfl: 0.0,
                steps: 0,
                dt_history: vec![],
                bound_history: vec![],
            },
        };
        assert_eq!(interpolate(&g, 0.5, 0.5).unwrap(), g.values[[1, 3]]);
        let mid = interpolate(&g, 0.25, 0.5).unwrap();
        assert!((mid - 0.5 * (g.values[[1, 2]] + g.values[[1, 3]])).abs() < 1e-15);
        assert!((interpolate(&g, -0.8, 0.3).unwrap() - (2.0 * -0.8 + 0.9 + 1.0)).abs() < 1e-14);
        assert!(interpolate(&g, 1.01, 0.5).is_err());
        assert!(interpolate(&g, 0.0, -0.1).is_err());
        assert_eq!(interpolate(&g, 1.0, 1.0).unwrap(), g.values[[2, 4]]);
    }

    #[test]
    fn csv_layout() {
        let g = solve_burgers_fd_at(0.01, 129, 0.4, &[0.0, 0.01]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("t,"));
        assert_eq!(lines[0].split(',').count(), 130);
        let json: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert_eq!(json["values"].as_array().unwrap().len(), 2);
    }
}
