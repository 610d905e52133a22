//! Seeded Monte Carlo over the finite-dimensional system and its comparison
//! with the replica prediction.

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use smrls_core::channel::{add_awgn, sample_rayleigh, ExperimentConfig};
use smrls_core::codec::{encode_users, SmCodebook, UserPayload};
use smrls_core::detect::{
    apply_decision, distortion, solve_l0_exhaustive, BoxLassoProblem, Decision, FeasibleSet,
    L0Mode, Metric, Regularizer, RlsSpec, SolverOptions,
};
use smrls_core::math::derive_seed;
use smrls_core::replica::solve_fixed_point;

use crate::config::Config;

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config: Config,
    pub master_seed: u64,
    pub trial_seeds: Vec<u64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, outputs: Vec<String>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            master_seed: config.experiment.seed,
            trial_seeds: trial_seeds(config.experiment.seed, config.experiment.trials),
            outputs,
        }
    }
}

pub fn trial_seeds(master: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|t| derive_seed(master, t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(trials)`.
    pub stderr: f64,
    pub trials: usize,
    /// Trials whose solver hit its iteration cap; they are still counted.
    pub unconverged: usize,
    /// Trials dropped because the detector returned an error.
    pub failed: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_trial: Option<Vec<f64>>,
}

impl AggregateResult {
    /// Aggregate in index order; `None` entries are failed trials.
    pub fn from_trials(metric: &str, values: &[Option<(f64, bool)>], retain: bool) -> Result<Self> {
        let kept: Vec<f64> = values.iter().flatten().map(|v| v.0).collect();
        if kept.is_empty() {
            bail!("every trial failed");
        }
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let var = if kept.len() > 1 {
            kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(Self {
            metric: metric.to_string(),
            mean,
            stderr: (var / n).sqrt(),
            trials: kept.len(),
            unconverged: values.iter().flatten().filter(|v| !v.1).count(),
            failed: values.iter().filter(|v| v.is_none()).count(),
            per_trial: retain.then_some(kept),
        })
    }

    pub fn mean_db(&self) -> f64 {
        10.0 * self.mean.log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Serial,
}

/// A system model: dimensions, noise and the shared codebook.
#[derive(Debug, Clone)]
pub struct Setup {
    pub system: ExperimentConfig,
    pub codebook: SmCodebook,
    pub solver: SolverOptions,
}

impl Setup {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let system = cfg.experiment_config()?;
        system.validate()?;
        Ok(Self {
            system,
            codebook: cfg.codebook()?,
            solver: cfg.solver_options(),
        })
    }
}

/// One draw of the transmit vector, channel and observation.
pub struct Realization {
    pub x: Vec<Complex64>,
    pub h: smrls_core::CMatrix,
    pub y: Vec<Complex64>,
}

pub fn realize(setup: &Setup, seed: u64) -> Result<Realization> {
    let s = &setup.system;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let payloads: Vec<UserPayload> = (0..s.users)
        .map(|_| UserPayload::random(&mut rng, &setup.codebook, &s.constellation))
        .collect();
    let x = encode_users(&setup.codebook, &s.constellation, &payloads)?;
    let h = sample_rayleigh(s.n, s.m(), &mut rng)?.matrix;
    let y = add_awgn(&h.mul_vec(&x), s.noise_var, &mut rng)?;
    Ok(Realization { x, h, y })
}

/// Soft estimate and whether its solver converged.
fn detect(
    setup: &Setup,
    r: &Realization,
    spec: &RlsSpec,
    problem: Option<&BoxLassoProblem>,
) -> Result<(Vec<Complex64>, bool)> {
    let c = &setup.system.constellation;
    match (&spec.feasible, spec.regularizer) {
        (FeasibleSet::Discrete(_), Regularizer::L0 { a, .. }) => Ok((
            solve_l0_exhaustive(&r.h, &r.y, a, c, L0Mode::IidMismatched)?,
            true,
        )),
        (FeasibleSet::Discrete(_), Regularizer::None) => {
            let mode = L0Mode::CodebookExact {
                codebook: &setup.codebook,
                users: setup.system.users,
            };
            Ok((solve_l0_exhaustive(&r.h, &r.y, 0.0, c, mode)?, true))
        }
        (feasible, regularizer) => {
            let lambda = match regularizer {
                Regularizer::L1(l) => l,
                Regularizer::None => 0.0,
                Regularizer::L0 { .. } => bail!("l0 penalties need a discrete feasible set"),
            };
            let (lower, upper) = feasible.real_bounds()?;
            let owned;
            let problem = match problem {
                Some(p) => p,
                None => {
                    owned = BoxLassoProblem::new(&r.h, &r.y)?;
                    &owned
                }
            };
            let est = problem.solve(lambda, lower, upper, &setup.solver);
            let converged = est.diagnostics.converged;
            Ok((est.to_complex(), converged))
        }
    }
}

fn measure(
    est: &[Complex64],
    truth: &[Complex64],
    spec: &RlsSpec,
    metric: Metric,
    setup: &Setup,
) -> Result<f64> {
    Ok(match metric {
        Metric::Mse => distortion(est, truth, Metric::Mse)?,
        Metric::ErrorRate => {
            let decided = match spec.decision {
                Decision::Identity => est.to_vec(),
                d => apply_decision(est, d, &setup.system.constellation)?,
            };
            distortion(&decided, truth, Metric::ErrorRate)?
        }
    })
}

type TrialValues = Vec<Vec<Option<(f64, bool)>>>;

/// Per trial, one realization shared by every detector in `specs`; returns
/// `[spec][metric][trial]`.
fn run_trials(
    setup: &Setup,
    specs: &[RlsSpec],
    metrics: &[Metric],
    seeds: &[u64],
    execution: Execution,
) -> Result<Vec<TrialValues>> {
    let one = |seed: u64| -> Result<TrialValues> {
        let r = realize(setup, seed)?;
        let shared = specs
            .iter()
            .any(|s| !matches!(s.feasible, FeasibleSet::Discrete(_)))
            .then(|| BoxLassoProblem::new(&r.h, &r.y))
            .transpose()?;
        Ok(specs
            .iter()
            .map(|spec| match detect(setup, &r, spec, shared.as_ref()) {
                Ok((est, ok)) => metrics
                    .iter()
                    .map(|&m| measure(&est, &r.x, spec, m, setup).ok().map(|v| (v, ok)))
                    .collect(),
                Err(_) => vec![None; metrics.len()],
            })
            .collect())
    };
    let per_trial: Vec<TrialValues> = match execution {
        Execution::Parallel => seeds.par_iter().map(|&s| one(s)).collect::<Result<_>>()?,
        Execution::Serial => seeds.iter().map(|&s| one(s)).collect::<Result<_>>()?,
    };
    Ok((0..specs.len())
        .map(|i| {
            (0..metrics.len())
                .map(|k| per_trial.iter().map(|t| t[i][k]).collect())
                .collect()
        })
        .collect())
}

fn metric_label(m: Metric) -> &'static str {
    match m {
        Metric::Mse => "mse",
        Metric::ErrorRate => "error-rate",
    }
}

/// Monte Carlo of one detector; trials run on derived seeds so the result
/// does not depend on `execution`.
pub fn run_monte_carlo(
    setup: &Setup,
    spec: &RlsSpec,
    metric: Metric,
    trials: usize,
    retain: bool,
    execution: Execution,
) -> Result<AggregateResult> {
    let mut all = run_sweep(
        setup,
        std::slice::from_ref(spec),
        &[metric],
        trials,
        retain,
        execution,
    )?;
    Ok(all.remove(0).remove(0))
}

/// Monte Carlo of several detectors on common realizations; `[spec][metric]`.
pub fn run_sweep(
    setup: &Setup,
    specs: &[RlsSpec],
    metrics: &[Metric],
    trials: usize,
    retain: bool,
    execution: Execution,
) -> Result<Vec<Vec<AggregateResult>>> {
    if trials == 0 {
        bail!("trials must be at least 1");
    }
    for spec in specs {
        spec.validate(&setup.system.constellation)?;
    }
    let seeds = trial_seeds(setup.system.seed, trials);
    let values = run_trials(setup, specs, metrics, &seeds, execution)?;
    values
        .iter()
        .map(|per_metric| {
            per_metric
                .iter()
                .zip(metrics)
                .map(|(v, &m)| AggregateResult::from_trials(metric_label(m), v, retain))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub lambda: f64,
    pub replica: f64,
    pub replica_converged: bool,
    pub residual: f64,
    pub mc: AggregateResult,
    /// `|10 log10(replica / mc)|`, for the MSE metric.
    pub deviation_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub rows: Vec<CompareRow>,
    pub max_deviation_db: Option<f64>,
}

/// Replica prediction and Monte Carlo mean for every `lambda` in `grid`.
pub fn compare_replica_mc(cfg: &Config, grid: &[f64], execution: Execution) -> Result<Comparison> {
    if grid.is_empty() {
        bail!("lambda grid is empty");
    }
    if !cfg.is_lasso() {
        bail!("comparison sweeps need a LASSO-type detector");
    }
    let metric = cfg.experiment.metric;
    let setup = Setup::from_config(cfg)?;
    let specs: Vec<RlsSpec> = grid
        .iter()
        .map(|&l| cfg.rls_spec(l))
        .collect::<Result<_>>()?;
    let mc = run_sweep(
        &setup,
        &specs,
        &[metric.metric()],
        cfg.experiment.trials,
        cfg.experiment.retain_trials,
        execution,
    )?;
    let spectrum = cfg.spectrum()?;
    let input = cfg.decoupled_input()?;
    let noise_var = cfg.noise_var();
    let opts = cfg.fixed_point_options();
    let replica: Vec<_> = grid
        .par_iter()
        .map(|&l| {
            solve_fixed_point(
                &cfg.scalar_spec(l, noise_var)?,
                cfg.scalar_decision(),
                &spectrum,
                noise_var,
                &input,
                &opts,
            )
            .with_context(|| format!("replica solve at lambda = {l}"))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<CompareRow> = grid
        .iter()
        .zip(replica)
        .zip(mc)
        .map(|((&lambda, fp), mut mc)| {
            let value = metric.tune_metric().of(&fp);
            let mc = mc.remove(0);
            CompareRow {
                lambda,
                replica: value,
                replica_converged: fp.converged,
                residual: fp.residual(),
                deviation_db: (metric == crate::config::MetricName::Mse)
                    .then(|| (10.0 * (value / mc.mean).log10()).abs()),
                mc,
            }
        })
        .collect();
    let max_deviation_db = rows
        .iter()
        .filter_map(|r| r.deviation_db)
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a| a.max(d)))
        });
    Ok(Comparison {
        metric: metric.label().to_string(),
        rows,
        max_deviation_db,
    })
}
