//! Metrics, experiment orchestration and result files.
//!
//! Layout under the output directory:
//!
//! ```text
//! <out>/summary.csv
//! <out>/<problem>/reference_grid.csv
//! <out>/<problem>/<variant>/seed_<n>/{metrics.json, train_log.csv, checkpoint.json,
//!                                     solution_grid.csv, run_info.json}
//! ```
//!
//! `metrics.json` holds only deterministic quantities so identical runs produce
//! identical bytes; wall-clock time goes to `run_info.json` and the summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colloc::{write_points_csv, CollocError, SamplerConfig};
use crate::derivnet::{forward_values, jet_values, save_checkpoint, NetError, ParamVector};
use crate::problems::{ProblemKind, ProblemSpec, Side, T_RANGE, X_RANGE};
use crate::refsolve::{
    interpolate, solve_reference, uniform_nodes, GridMeta, RefError, ReferenceGrid,
};
use crate::train::{train, TrainConfig, TrainError, Variant};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("reference has zero norm")]
    ZeroReference,
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ref(#[from] RefError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Colloc(#[from] CollocError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Seed for the residual metric points; fixed and independent of training seeds.
pub const METRIC_SEED: u64 = 0x5eed_e7a1;
pub const EVAL_NX: usize = 256;
pub const EVAL_NT: usize = 101;
pub const BOUNDARY_EVAL_TIMES: usize = 1_000;
pub const RESIDUAL_EVAL_POINTS: usize = 10_000;

/// `‖pred − ref‖₂ / ‖ref‖₂` over all entries.
pub fn relative_l2(pred: &Array2<f64>, reference: &Array2<f64>) -> Result<f64, ReportError> {
    if pred.dim() != reference.dim() {
        return Err(ReportError::ShapeMismatch(pred.dim(), reference.dim()));
    }
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(ReportError::ZeroReference);
    }
    let num: f64 = pred
        .iter()
        .zip(reference.iter())
        .map(|(p, r)| (p - r) * (p - r))
        .sum();
    Ok((num / den).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryErrors {
    pub left_mae: f64,
    pub right_mae: f64,
    pub left_rmse: f64,
    pub right_rmse: f64,
}

/// Mean absolute (and RMS) boundary misfit over `n_t_eval` uniform times.
pub fn boundary_errors(
    params: &ParamVector,
    spec: &ProblemSpec,
    n_t_eval: usize,
) -> Result<BoundaryErrors, ReportError> {
    if n_t_eval < 2 {
        return Err(ReportError::BadArgument(
            "n_t_eval must be at least 2".into(),
        ));
    }
    let times = uniform_nodes(T_RANGE.0, T_RANGE.1, n_t_eval);
    let side_err = |side: Side| -> Result<(f64, f64), ReportError> {
        let pts: Vec<(f64, f64)> = times.iter().map(|&t| (side.x(), t)).collect();
        let u = forward_values(params, &pts)?;
        let mut abs = 0.0;
        let mut sq = 0.0;
        for (&t, v) in times.iter().zip(u) {
            let e = v - spec.bc_value(side, t).expect("t in range");
            abs += e.abs();
            sq += e * e;
        }
        let n = n_t_eval as f64;
        Ok((abs / n, (sq / n).sqrt()))
    };
    let (left_mae, left_rmse) = side_err(Side::Left)?;
    let (right_mae, right_rmse) = side_err(Side::Right)?;
    Ok(BoundaryErrors {
        left_mae,
        right_mae,
        left_rmse,
        right_rmse,
    })
}

/// Mean squared PDE residual at `n_eval` fresh uniform interior points.
pub fn mean_sq_residual(
    params: &ParamVector,
    spec: &ProblemSpec,
    n_eval: usize,
    seed: u64,
) -> Result<f64, ReportError> {
    if n_eval == 0 {
        return Err(ReportError::BadArgument("n_eval must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n_eval)
        .map(|_| {
            (
                rng.gen_range(X_RANGE.0..=X_RANGE.1),
                rng.gen_range(T_RANGE.0..=T_RANGE.1),
            )
        })
        .collect();
    let jets = jet_values(params, &pts)?;
    let r = spec.residual_values(&jets);
    Ok(crate::tape::compensated_sum(r.iter().map(|f| f * f)) / n_eval as f64)
}

/// Network values on an `n_t × n_x` uniform grid.
pub fn network_on_grid(
    params: &ParamVector,
    n_x: usize,
    n_t: usize,
) -> Result<Array2<f64>, ReportError> {
    let xs = uniform_nodes(X_RANGE.0, X_RANGE.1, n_x);
    let ts = uniform_nodes(T_RANGE.0, T_RANGE.1, n_t);
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .flat_map(|&t| xs.iter().map(move |&x| (x, t)))
        .collect();
    let u = forward_values(params, &pts)?;
    Ok(Array2::from_shape_vec((n_t, n_x), u).expect("grid shape"))
}

/// Reference interpolated onto an `n_t × n_x` uniform grid.
pub fn reference_on_grid(
    grid: &ReferenceGrid,
    n_x: usize,
    n_t: usize,
) -> Result<Array2<f64>, ReportError> {
    let xs = uniform_nodes(X_RANGE.0, X_RANGE.1, n_x);
    let ts = uniform_nodes(T_RANGE.0, T_RANGE.1, n_t);
    let mut out = Array2::zeros((n_t, n_x));
    for (k, &t) in ts.iter().enumerate() {
        for (j, &x) in xs.iter().enumerate() {
            out[[k, j]] = interpolate(grid, x, t)?;
        }
    }
    Ok(out)
}

fn grid_from(values: Array2<f64>, scheme: &str) -> ReferenceGrid {
    let (n_t, n_x) = values.dim();
    ReferenceGrid {
        x_nodes: uniform_nodes(X_RANGE.0, X_RANGE.1, n_x),
        t_nodes: uniform_nodes(T_RANGE.0, T_RANGE.1, n_t),
        values,
        meta: GridMeta {
            scheme: scheme.into(),
            cfl: 0.0,
            steps: 0,
            dt_history: Vec::new(),
            bound_history: Vec::new(),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub problem: ProblemKind,
    pub variant: Variant,
    pub seed: u64,
    pub rel_l2: Option<f64>,
    /// What `rel_l2` was measured against.
    pub rel_l2_reference: String,
    pub bc_left_mae: f64,
    pub bc_right_mae: f64,
    pub bc_left_rmse: f64,
    pub bc_right_rmse: f64,
    pub mean_sq_residual: f64,
    pub epochs_run: usize,
    pub final_w_pde: f64,
    pub final_w_ic: f64,
    pub final_w_bc: f64,
    pub final_l_bc: f64,
}

/// Training budget and point counts shared by every run of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub sampler: SamplerConfig,
    pub progress_every: usize,
    pub dump_points: bool,
}

impl RunSettings {
    pub fn full_scale() -> Self {
        Self {
            epochs: 5_000,
            finetune_epochs: 2_000,
            sampler: SamplerConfig::default(),
            progress_every: 0,
            dump_points: false,
        }
    }

    /// 1,000 epochs and 2,000 interior points; fine-tuning and the candidate
    /// pool shrink in the same proportion.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 1_000,
            finetune_epochs: 400,
            sampler: SamplerConfig {
                n_f: 2_000,
                n_i: 2_000,
                n_b: 2_000,
                pool_size: 20_000,
            },
            progress_every: 0,
            dump_points: false,
        }
    }

    pub fn train_config(&self, problem: ProblemKind, variant: Variant, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(ProblemSpec::standard(problem), variant, seed);
        c.epochs = self.epochs;
        c.finetune_epochs = if variant == Variant::AdaptiveColloc {
            self.finetune_epochs
        } else {
            0
        };
        c.sampler = self.sampler;
        c.progress_every = self.progress_every;
        c
    }
}

pub struct RunResult {
    pub metrics: MetricsRecord,
    pub wall_time_s: f64,
    pub outcome: crate::train::TrainOutcome,
    pub solution: Array2<f64>,
}

/// Trains one configuration and grades it.
pub fn run_one(config: &TrainConfig, reference: &ReferenceGrid) -> Result<RunResult, ReportError> {
    let start = Instant::now();
    let outcome = train(config)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let metrics = evaluate(config, &outcome, reference)?;
    let solution = network_on_grid(&outcome.params, EVAL_NX, EVAL_NT)?;
    Ok(RunResult {
        metrics,
        wall_time_s,
        outcome,
        solution,
    })
}

fn evaluate(
    config: &TrainConfig,
    outcome: &crate::train::TrainOutcome,
    reference: &ReferenceGrid,
) -> Result<MetricsRecord, ReportError> {
    let spec = &config.problem;
    let params = &outcome.params;
    let pred = network_on_grid(params, EVAL_NX, EVAL_NT)?;
    let refv = reference_on_grid(reference, EVAL_NX, EVAL_NT)?;
    let rel_l2 = relative_l2(&pred, &refv)?;
    let bc = boundary_errors(params, spec, BOUNDARY_EVAL_TIMES)?;
    let res = mean_sq_residual(params, spec, RESIDUAL_EVAL_POINTS, METRIC_SEED)?;
    let last = outcome.logs.epochs.last();
    let rel_l2_reference = match spec.kind {
        ProblemKind::Burgers => "finite-difference reference (certified against Cole-Hopf)",
        ProblemKind::AllenCahn => {
            "internal finite-difference reference (not available in published tables)"
        }
    };
    Ok(MetricsRecord {
        problem: spec.kind,
        variant: config.variant,
        seed: config.seed,
        rel_l2: Some(rel_l2),
        rel_l2_reference: rel_l2_reference.into(),
        bc_left_mae: bc.left_mae,
        bc_right_mae: bc.right_mae,
        bc_left_rmse: bc.left_rmse,
        bc_right_rmse: bc.right_rmse,
        mean_sq_residual: res,
        epochs_run: outcome.logs.epochs.len(),
        final_w_pde: last.map_or(f64::NAN, |e| e.w_pde),
        final_w_ic: last.map_or(f64::NAN, |e| e.w_ic),
        final_w_bc: last.map_or(f64::NAN, |e| e.w_bc),
        final_l_bc: last.map_or(f64::NAN, |e| e.l_bc),
    })
}

fn write_run(
    dir: &Path,
    result: &RunResult,
    seed: u64,
    dump_points: bool,
) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&result.metrics)? + "\n",
    )?;
    fs::write(dir.join("train_log.csv"), result.outcome.logs.to_csv()?)?;
    save_checkpoint(&dir.join("checkpoint.json"), &result.outcome.params, seed)?;
    grid_from(result.solution.clone(), "network").save_csv(&dir.join("solution_grid.csv"))?;
    fs::write(
        dir.join("run_info.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "wall_time_s": result.wall_time_s,
            "resampled": result.outcome.resampled,
        }))? + "\n",
    )?;
    if dump_points {
        write_points_csv(
            &dir.join("interior_points.csv"),
            &result.outcome.final_points.interior,
        )?;
    }
    Ok(())
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub problem: String,
    pub variant: String,
    /// Seed number, or `median` for the per-variant median row.
    pub seed: String,
    pub status: String,
    pub rel_l2: Option<f64>,
    pub bc_left_mae: Option<f64>,
    pub bc_right_mae: Option<f64>,
    pub bc_left_rmse: Option<f64>,
    pub bc_right_rmse: Option<f64>,
    pub mean_sq_residual: Option<f64>,
    pub epochs_run: Option<usize>,
    pub wall_time_s: Option<f64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub problems: Vec<ProblemKind>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub settings: RunSettings,
    pub out: PathBuf,
    pub jobs: usize,
}

pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
    pub metrics: Vec<MetricsRecord>,
    pub failures: usize,
}

type RunKey = (ProblemKind, Variant, u64);
/// Metrics and wall time, or the error message of an aborted run.
type RunStatus = Result<(MetricsRecord, f64), String>;

/// Runs every (problem, variant, seed) combination and writes all files.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentSummary, ReportError> {
    if plan.problems.is_empty() || plan.variants.is_empty() || plan.seeds.is_empty() {
        return Err(ReportError::BadArgument("nothing to run".into()));
    }
    fs::create_dir_all(&plan.out)?;

    let mut references = BTreeMap::new();
    for &problem in &plan.problems {
        let grid = solve_reference(&ProblemSpec::standard(problem))?;
        let dir = plan.out.join(problem.name());
        fs::create_dir_all(&dir)?;
        grid.save_csv(&dir.join("reference_grid.csv"))?;
        references.insert(problem, grid);
    }

    let mut jobs: Vec<(ProblemKind, Variant, u64)> = Vec::new();
    for &p in &plan.problems {
        for &v in &plan.variants {
            for &s in &plan.seeds {
                jobs.push((p, v, s));
            }
        }
    }
    jobs.sort();
    jobs.dedup();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs.max(1))
        .build()
        .map_err(|e| ReportError::BadArgument(e.to_string()))?;
    let results: Vec<(RunKey, RunStatus)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, v, s)| {
                let config = plan.settings.train_config(p, v, s);
                let dir = plan
                    .out
                    .join(p.name())
                    .join(v.name())
                    .join(format!("seed_{s}"));
                let r = run_one(&config, &references[&p]).and_then(|res| {
                    write_run(&dir, &res, s, plan.settings.dump_points)?;
                    Ok((res.metrics, res.wall_time_s))
                });
                if let Err(e) = &r {
                    log::error!("{p} {v} seed {s} failed: {e}");
                }
                ((p, v, s), r.map_err(|e| e.to_string()))
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let mut failures = 0;
    let mut groups: BTreeMap<(ProblemKind, Variant), Vec<&MetricsRecord>> = BTreeMap::new();
    for ((p, v, s), r) in &results {
        match r {
            Ok((m, wall)) => {
                rows.push(SummaryRow {
                    problem: p.name().into(),
                    variant: v.name().into(),
                    seed: s.to_string(),
                    status: "ok".into(),
                    rel_l2: m.rel_l2,
                    bc_left_mae: Some(m.bc_left_mae),
                    bc_right_mae: Some(m.bc_right_mae),
                    bc_left_rmse: Some(m.bc_left_rmse),
                    bc_right_rmse: Some(m.bc_right_rmse),
                    mean_sq_residual: Some(m.mean_sq_residual),
                    epochs_run: Some(m.epochs_run),
                    wall_time_s: Some(*wall),
                });
                metrics.push(m.clone());
            }
            Err(e) => {
                failures += 1;
                rows.push(SummaryRow {
                    problem: p.name().into(),
                    variant: v.name().into(),
                    seed: s.to_string(),
                    status: format!("failed: {e}"),
                    rel_l2: None,
                    bc_left_mae: None,
                    bc_right_mae: None,
                    bc_left_rmse: None,
                    bc_right_rmse: None,
                    mean_sq_residual: None,
                    epochs_run: None,
                    wall_time_s: None,
                });
            }
        }
    }
    for m in &metrics {
        groups.entry((m.problem, m.variant)).or_default().push(m);
    }
    for ((p, v), ms) in &groups {
        let med = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| {
            let mut vals: Vec<f64> = ms.iter().filter_map(|m| f(m)).collect();
            median(&mut vals)
        };
        rows.push(SummaryRow {
            problem: p.name().into(),
            variant: v.name().into(),
            seed: "median".into(),
            status: format!("{} runs", ms.len()),
            rel_l2: med(&|m| m.rel_l2),
            bc_left_mae: med(&|m| Some(m.bc_left_mae)),
            bc_right_mae: med(&|m| Some(m.bc_right_mae)),
            bc_left_rmse: med(&|m| Some(m.bc_left_rmse)),
            bc_right_rmse: med(&|m| Some(m.bc_right_rmse)),
            mean_sq_residual: med(&|m| Some(m.mean_sq_residual)),
            epochs_run: None,
            wall_time_s: None,
        });
    }
    // per-seed rows first within each (problem, variant), then the median row
    rows.sort_by(|a, b| {
        let key = |r: &SummaryRow| {
            (
                r.problem.parse::<ProblemKind>().ok(),
                r.variant.parse::<Variant>().ok(),
                r.seed.parse::<u64>().unwrap_or(u64::MAX),
            )
        };
        key(a).cmp(&key(b))
    });

    let mut w = csv::Writer::from_path(plan.out.join("summary.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(ExperimentSummary {
        rows,
        metrics,
        failures,
    })
}
