//! Adam and the training protocol for the three variants.
//!
//! One epoch is one full-batch step: measure the three component losses and
//! gradient norms, choose weights, combine, step. The collocation variant runs
//! the adaptive protocol, redraws the interior set once from the residual, and
//! keeps training with the same optimizer state.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{BalanceConfig, BalanceError, WeightState};
use crate::colloc::{resample_residual, sample_uniform, CollocError, SamplerConfig};
use crate::derivnet::{init_params, Architecture, NetError, ParamVector};
use crate::loss::{component_grads, total_grad, total_loss, LossError, LossWeights, PointSet};
use crate::problems::ProblemSpec;
use crate::tape::GradVector;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gradient has {got} entries, parameters {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite gradient entry {index}")]
    NonFiniteGradient { index: usize },
    #[error("training diverged at epoch {epoch}: total loss {total}")]
    Diverged { epoch: usize, total: f64 },
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Colloc(#[from] CollocError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
            config,
        }
    }

    /// Bias-corrected Adam update of `params` in place. The state is left
    /// untouched when the gradient is rejected.
    pub fn step(&mut self, params: &mut [f64], grad: &GradVector) -> Result<(), TrainError> {
        if grad.len() != params.len() || self.m.len() != params.len() {
            return Err(TrainError::ShapeMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if let Some(index) = grad.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient { index });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step_count += 1;
        let bc1 = 1.0 - beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - beta2.powi(self.step_count as i32);
        for (((p, m), v), &g) in params
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(grad.as_slice())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Standard,
    Adaptive,
    AdaptiveColloc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::Standard,
        Variant::Adaptive,
        Variant::AdaptiveColloc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Adaptive => "adaptive",
            Variant::AdaptiveColloc => "adaptive-colloc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Variant::Standard),
            "adaptive" => Ok(Variant::Adaptive),
            "adaptive-colloc" | "adaptive_colloc" => Ok(Variant::AdaptiveColloc),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub problem: ProblemSpec,
    pub variant: Variant,
    pub arch: Architecture,
    pub epochs: usize,
    /// Extra epochs after the residual resampling; collocation variant only.
    pub finetune_epochs: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub balance: BalanceConfig,
    pub adam: AdamConfig,
    /// Zero the Adam moments at the resampling boundary.
    pub reset_adam_on_resample: bool,
    /// Log progress every this many epochs (0 = silent).
    pub progress_every: usize,
}

impl TrainConfig {
    pub fn new(problem: ProblemSpec, variant: Variant, seed: u64) -> Self {
        Self {
            problem,
            variant,
            arch: Architecture::default(),
            epochs: 5_000,
            finetune_epochs: if variant == Variant::AdaptiveColloc {
                2_000
            } else {
                0
            },
            seed,
            sampler: SamplerConfig::default(),
            balance: BalanceConfig::default(),
            adam: AdamConfig::default(),
            reset_adam_on_resample: false,
            progress_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.finetune_epochs > 0 && self.variant != Variant::AdaptiveColloc {
            return Err(TrainError::BadConfig(
                "finetune epochs only apply to the adaptive-colloc variant",
            ));
        }
        self.sampler.validate()?;
        self.balance.validate()?;
        self.arch.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_pde: f64,
    pub l_ic: f64,
    pub l_bc: f64,
    pub g_pde: f64,
    pub g_ic: f64,
    pub g_bc: f64,
    pub w_pde: f64,
    pub w_ic: f64,
    pub w_bc: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLogs {
    pub epochs: Vec<EpochLog>,
}

impl TrainLogs {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.epochs {
            w.serialize(e)?;
        }
        if self.epochs.is_empty() {
            w.write_record([
                "epoch", "l_pde", "l_ic", "l_bc", "g_pde", "g_ic", "g_bc", "w_pde", "w_ic", "w_bc",
                "total",
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub struct TrainOutcome {
    pub params: ParamVector,
    pub logs: TrainLogs,
    pub final_points: PointSet,
    /// Set when the interior was resampled.
    pub resampled: bool,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn run_epoch(
    config: &TrainConfig,
    epoch: usize,
    params: &mut ParamVector,
    points: &PointSet,
    balance: &mut WeightState,
    adam: &mut AdamState,
) -> Result<EpochLog, TrainError> {
    let b = component_grads(params, &config.problem, points)?;
    let weights = match config.variant {
        Variant::Standard => LossWeights::UNIT,
        Variant::Adaptive | Variant::AdaptiveColloc => balance.observe(b.norms())?,
    };
    let total = total_loss(&weights, &b)?;
    if !total.is_finite() {
        return Err(TrainError::Diverged { epoch, total });
    }
    let grad = total_grad(&weights, &b)?;
    adam.step(params.as_mut_slice(), &grad)?;
    Ok(EpochLog {
        epoch,
        l_pde: b.l_pde,
        l_ic: b.l_ic,
        l_bc: b.l_bc,
        g_pde: b.g_pde,
        g_ic: b.g_ic,
        g_bc: b.g_bc,
        w_pde: weights.pde,
        w_ic: weights.ic,
        w_bc: weights.bc,
        total,
    })
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut params = init_params(config.arch, config.seed)?;
    let mut points = sample_uniform(
        &config.problem,
        &config.sampler,
        &mut stream_rng(config.seed, 1),
    )?;
    let mut balance = WeightState::new(config.balance)?;
    let mut adam = AdamState::new(params.len(), config.adam);
    let mut logs = TrainLogs::default();

    let total_epochs = config.epochs + config.finetune_epochs;
    let mut resampled = false;
    for epoch in 0..total_epochs {
        if epoch == config.epochs && config.variant == Variant::AdaptiveColloc {
            points = resample_residual(
                &params,
                &config.problem,
                &config.sampler,
                &mut stream_rng(config.seed, 2),
            )?;
            resampled = true;
            if config.reset_adam_on_resample {
                adam = AdamState::new(params.len(), config.adam);
            }
        }
        let log = run_epoch(config, epoch, &mut params, &points, &mut balance, &mut adam)?;
        if config.progress_every > 0
            && (epoch % config.progress_every == 0 || epoch + 1 == total_epochs)
        {
            log::info!(
                "{} {} seed {} epoch {}/{}: total {:.3e} (pde {:.3e} ic {:.3e} bc {:.3e}) w ({:.3}, {:.3}, {:.3})",
                config.problem.kind,
                config.variant,
                config.seed,
                epoch,
                total_epochs,
                log.total,
                log.l_pde,
                log.l_ic,
                log.l_bc,
                log.w_pde,
                log.w_ic,
                log.w_bc
            );
        }
        logs.epochs.push(log);
    }
    Ok(TrainOutcome {
        params,
        logs,
        final_points: points,
        resampled,
    })
}
