//! Training point generation: uniform sampling and one-shot residual-driven
//! resampling of the interior set.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derivnet::{jet_values, NetError, ParamVector};
use crate::loss::PointSet;
use crate::problems::{ProblemSpec, Side, T_RANGE, X_RANGE};

#[derive(Debug, Error)]
pub enum CollocError {
    #[error("invalid sampler config: {0}")]
    BadConfig(&'static str),
    #[error("non-finite residual {value} at candidate ({x}, {t})")]
    NonFiniteResidual { x: f64, t: f64, value: f64 },
    #[error("{weights} weights for {candidates} candidates")]
    LengthMismatch { weights: usize, candidates: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_f: usize,
    pub n_i: usize,
    pub n_b: usize,
    /// Uniform candidates drawn before residual-weighted selection.
    pub pool_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_f: 10_000,
            n_i: 2_000,
            n_b: 2_000,
            pool_size: 100_000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), CollocError> {
        if self.n_f == 0 || self.n_i == 0 || self.n_b == 0 {
            return Err(CollocError::BadConfig("point counts must be positive"));
        }
        if self.pool_size < self.n_f {
            return Err(CollocError::BadConfig("pool_size must be at least n_f"));
        }
        Ok(())
    }
}

fn uniform_interior<R: Rng>(n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            (
                rng.gen_range(X_RANGE.0..=X_RANGE.1),
                rng.gen_range(T_RANGE.0..=T_RANGE.1),
            )
        })
        .collect()
}

fn uniform_initial<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| rng.gen_range(X_RANGE.0..=X_RANGE.1))
        .collect()
}

/// Boundary times are uniform; sides alternate left, right, left, ...
fn uniform_boundary<R: Rng>(n: usize, rng: &mut R) -> Vec<(Side, f64)> {
    (0..n)
        .map(|i| {
            let side = if i % 2 == 0 { Side::Left } else { Side::Right };
            (side, rng.gen_range(T_RANGE.0..=T_RANGE.1))
        })
        .collect()
}

pub fn sample_uniform<R: Rng>(
    _spec: &ProblemSpec,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<PointSet, CollocError> {
    config.validate()?;
    Ok(PointSet {
        interior: uniform_interior(config.n_f, rng),
        initial: uniform_initial(config.n_i, rng),
        boundary: uniform_boundary(config.n_b, rng),
    })
}

/// Picks `n` distinct indices with probability driven by `weights`
/// (Efraimidis–Spirakis keys `ln(u)/w`). Zero-weight items are only used, in
/// uniformly random order, once every positive-weight item has been taken.
pub fn weighted_without_replacement<R: Rng>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let tie: f64 = rng.gen();
            let key = if w > 0.0 {
                u.ln() / w
            } else {
                f64::NEG_INFINITY
            };
            (key, tie, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    keyed.into_iter().take(n).map(|(_, _, i)| i).collect()
}

/// Draws `n` of the `candidates` with probability proportional to `|residual|`,
/// without replacement. All-zero residuals fall back to a uniform draw.
pub fn select_by_residual<R: Rng>(
    candidates: &[(f64, f64)],
    residuals: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>, CollocError> {
    if residuals.len() != candidates.len() {
        return Err(CollocError::LengthMismatch {
            weights: residuals.len(),
            candidates: candidates.len(),
        });
    }
    if n > candidates.len() {
        return Err(CollocError::BadConfig(
            "more points requested than candidates",
        ));
    }
    if let Some(i) = residuals.iter().position(|r| !r.is_finite()) {
        let (x, t) = candidates[i];
        return Err(CollocError::NonFiniteResidual {
            x,
            t,
            value: residuals[i],
        });
    }
    let weights: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let weights = if weights.iter().all(|&w| w == 0.0) {
        vec![1.0; weights.len()]
    } else {
        weights
    };
    Ok(weighted_without_replacement(&weights, n, rng)
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

/// Replaces the interior set with points drawn in proportion to `|f|` over a
/// uniform candidate pool; initial and boundary sets are redrawn uniformly.
pub fn resample_residual<R: Rng>(
    params: &ParamVector,
    spec: &ProblemSpec,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<PointSet, CollocError> {
    config.validate()?;
    let candidates = uniform_interior(config.pool_size, rng);
    let jets = jet_values(params, &candidates)?;
    let residuals = spec.residual_values(&jets);
    let interior = select_by_residual(&candidates, &residuals, config.n_f, rng)?;
    Ok(PointSet {
        interior,
        initial: uniform_initial(config.n_i, rng),
        boundary: uniform_boundary(config.n_b, rng),
    })
}

/// Dumps interior points as `x,t` CSV.
pub fn write_points_csv(path: &Path, points: &[(f64, f64)]) -> Result<(), CollocError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "t"])?;
    for (x, t) in points {
        w.write_record([format!("{x:.17e}"), format!("{t:.17e}")])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
