//! Adaptive loss weights from exponentially smoothed gradient norms.
//!
//! Each epoch the three component gradient norms are smoothed,
//! `ḡ ← β ḡ + (1 − β) g`, turned into raw weights `(ḡ + ε)^(−α)`, normalized
//! to sum to one, and pushed up to a floor `w_min`. With three terms the floor
//! caps any single weight at `1 − 2 w_min`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::LossWeights;

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("gradient norm {0} is negative or not finite")]
    BadNorm(f64),
    #[error("weights requested before the first norm observation")]
    Uninitialized,
    #[error("no finite smoothed norm to weight")]
    NoFiniteNorms,
    #[error("invalid hyperparameters: {0}")]
    BadHyper(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub w_min: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.9,
            eps: 1e-8,
            w_min: 0.05,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<(), BalanceError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(BalanceError::BadHyper("alpha must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(BalanceError::BadHyper("beta must lie in [0, 1)"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(BalanceError::BadHyper("eps must be non-negative"));
        }
        if !(0.0..=1.0 / 3.0).contains(&self.w_min) {
            return Err(BalanceError::BadHyper("w_min must lie in [0, 1/3]"));
        }
        Ok(())
    }

    /// Largest weight the floor allows.
    pub fn ceiling(&self) -> f64 {
        1.0 - 2.0 * self.w_min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    pub smoothed: [f64; 3],
    pub weights: [f64; 3],
    pub initialized: bool,
    pub hyper: BalanceConfig,
}

impl WeightState {
    pub fn new(hyper: BalanceConfig) -> Result<Self, BalanceError> {
        hyper.validate()?;
        Ok(Self {
            smoothed: [0.0; 3],
            weights: [1.0 / 3.0; 3],
            initialized: false,
            hyper,
        })
    }

    /// Folds one observation of `(g_pde, g_ic, g_bc)` into the moving average.
    /// The first observation initializes the average directly.
    pub fn smooth_update(&mut self, norms: [f64; 3]) -> Result<(), BalanceError> {
        if let Some(&bad) = norms.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return Err(BalanceError::BadNorm(bad));
        }
        if self.initialized {
            let beta = self.hyper.beta;
            for (s, g) in self.smoothed.iter_mut().zip(norms) {
                *s = beta * *s + (1.0 - beta) * g;
            }
        } else {
            self.smoothed = norms;
            self.initialized = true;
        }
        Ok(())
    }

    /// Recomputes and stores the weights from the current smoothed norms.
    pub fn compute_weights(&mut self) -> Result<[f64; 3], BalanceError> {
        if !self.initialized {
            return Err(BalanceError::Uninitialized);
        }
        self.weights = compute_weights(&self.smoothed, &self.hyper)?;
        Ok(self.weights)
    }

    /// Smooth, then reweight.
    pub fn observe(&mut self, norms: [f64; 3]) -> Result<LossWeights, BalanceError> {
        self.smooth_update(norms)?;
        let [pde, ic, bc] = self.compute_weights()?;
        Ok(LossWeights::new(pde, ic, bc))
    }
}

/// Inverse-power weights normalized onto the simplex with a per-term floor.
///
/// Terms below the floor are clamped to it and the remaining mass is shared
/// among the unclamped terms in proportion to their raw weights; this is
/// repeated until no unclamped term falls below the floor.
pub fn compute_weights(
    smoothed: &[f64; 3],
    hyper: &BalanceConfig,
) -> Result<[f64; 3], BalanceError> {
    if smoothed.iter().all(|g| !g.is_finite()) {
        return Err(BalanceError::NoFiniteNorms);
    }
    // an infinite norm gets zero raw weight and ends up on the floor
    let raw: Vec<f64> = smoothed
        .iter()
        .map(|&g| {
            if g.is_finite() {
                (g.max(0.0) + hyper.eps).powf(-hyper.alpha)
            } else {
                0.0
            }
        })
        .collect();

    if raw.iter().any(|r| r.is_infinite()) {
        // zero norm with eps = 0: the infinite terms share the free mass
        let inf: Vec<bool> = raw.iter().map(|r| r.is_infinite()).collect();
        let k = inf.iter().filter(|&&b| b).count() as f64;
        let free = 1.0 - (3.0 - k) * hyper.w_min;
        let mut w = [hyper.w_min; 3];
        for i in 0..3 {
            if inf[i] {
                w[i] = free / k;
            }
        }
        return Ok(w);
    }

    let mut clamped = [false; 3];
    let mut w = [0.0; 3];
    loop {
        let n_clamped = clamped.iter().filter(|&&c| c).count() as f64;
        let free_mass = 1.0 - n_clamped * hyper.w_min;
        let free_raw: f64 = (0..3).filter(|&i| !clamped[i]).map(|i| raw[i]).sum();
        let single_free = n_clamped == 2.0 && free_raw > 0.0;
        for i in 0..3 {
            w[i] = if clamped[i] {
                hyper.w_min
            } else if single_free {
                // exact ceiling, no r/r rounding
                free_mass
            } else if free_raw > 0.0 {
                free_mass * raw[i] / free_raw
            } else {
                0.0
            };
        }
        let newly: Vec<usize> = (0..3)
            .filter(|&i| !clamped[i] && w[i] < hyper.w_min)
            .collect();
        if newly.is_empty() {
            break;
        }
        for i in newly {
            clamped[i] = true;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hyper() -> BalanceConfig {
        BalanceConfig::default()
    }

    #[test]
    fn first_update_copies_observation() {
        let mut s = WeightState::new(hyper()).unwrap();
        s.smooth_update([10.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.smoothed, [10.0, 1.0, 1.0]);
        s.smooth_update([0.0, 0.0, 0.0]).unwrap();
        for (a, b) in s.smoothed.iter().zip([9.0, 0.9, 0.9]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_beta_tracks_latest() {
        let mut s = WeightState::new(BalanceConfig {
            beta: 0.0,
            ..hyper()
        })
        .unwrap();
        for obs in [[1.0, 2.0, 3.0], [4.0, 0.5, 7.0], [0.0, 9.0, 1.0]] {
            s.smooth_update(obs).unwrap();
            assert_eq!(s.smoothed, obs);
        }
    }

    #[test]
    fn bad_norms_rejected() {
        let mut s = WeightState::new(hyper()).unwrap();
        assert_eq!(
            s.smooth_update([-1.0, 0.0, 0.0]),
            Err(BalanceError::BadNorm(-1.0))
        );
        assert!(s.smooth_update([f64::NAN, 0.0, 0.0]).is_err());
        assert_eq!(s.compute_weights(), Err(BalanceError::Uninitialized));
    }

    #[test]
    fn uniform_before_first_update() {
        let s = WeightState::new(hyper()).unwrap();
        assert_eq!(s.weights, [1.0 / 3.0; 3]);
    }

    #[test]
    fn symmetric_norms_give_equal_weights() {
        let w = compute_weights(&[1.0, 1.0, 1.0], &hyper()).unwrap();
        for wi in w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn floor_applies_to_large_norm() {
        // raw (0.1, 1, 1) → (0.0476, 0.476, 0.476) → PDE clamped
        let w = compute_weights(&[100.0, 1.0, 1.0], &hyper()).unwrap();
        let expect = [0.05, 0.475, 0.475];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{w:?}");
        }
    }

    #[test]
    fn floor_applies_to_bc() {
        let w = compute_weights(&[1e-12, 1e-12, 1e8], &hyper()).unwrap();
        let expect = [0.475, 0.475, 0.05];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{w:?}");
        }
    }

    #[test]
    fn two_terms_clamped_hit_ceiling() {
        let w = compute_weights(&[1e-6, 10.0, 100.0], &hyper()).unwrap();
        assert_eq!(w[1], 0.05);
        assert_eq!(w[2], 0.05);
        assert!((w[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_norms_without_eps() {
        let h = BalanceConfig {
            eps: 0.0,
            ..hyper()
        };
        let w = compute_weights(&[0.0, 0.0, 3.0], &h).unwrap();
        assert_eq!(w, [0.475, 0.475, 0.05]);
    }

    #[test]
    fn all_infinite_rejected() {
        assert_eq!(
            compute_weights(&[f64::INFINITY; 3], &hyper()),
            Err(BalanceError::NoFiniteNorms)
        );
    }

    proptest! {
        #[test]
        fn simplex_and_floor_hold(g in prop::array::uniform3(prop_oneof![Just(0.0), 0.0..1e3, 1e-12..1e-3])) {
            let h = hyper();
            let w = compute_weights(&g, &h).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for wi in w {
                prop_assert!(wi >= h.w_min - 1e-15 && wi <= h.ceiling() + 1e-12);
            }
        }

        #[test]
        fn monotone_in_own_norm(g in prop::array::uniform3(1e-6..1e3f64), k in 0usize..3, f in 1.0..100.0f64) {
            let h = hyper();
            let w0 = compute_weights(&g, &h).unwrap();
            let mut g1 = g;
            g1[k] *= f;
            let w1 = compute_weights(&g1, &h).unwrap();
            prop_assert!(w1[k] <= w0[k] + 1e-15);
        }
    }
}
