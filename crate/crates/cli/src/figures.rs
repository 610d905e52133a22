//! Built-in experiments whose outputs are single CSV tables.

use anyhow::{Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use smrls_core::codec::{empirical_stats, exact_marginal, CodebookPolicy, SmCodebook};
use smrls_core::constellation::Constellation;
use smrls_core::detect::Metric;
use smrls_core::replica::{
    map_bound, noise_for_snr, solve_fixed_point, tune, tuning_dictionary, DecoupledInput,
    DictionaryRow, EstimatorFamily, ScalarDecision, ScalarEstimatorSpec, TuneMetric,
};
use smrls_core::RayleighSpectrum;

use crate::config::{Config, ConstellationName, DetectorKind, MetricName};
use crate::harness::{compare_replica_mc, run_sweep, Execution, Setup};

/// A CSV table: header and formatted rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// False when any replica solve or tuning step failed to converge.
    pub converged: bool,
}

fn db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Codebook seed whose 64 random pairs activate antenna 16 exactly 8 times,
/// so entry 80 has the reference marginal exactly.
pub const PRIOR_CODEBOOK_SEED: u64 = 6;
pub const PRIOR_ENTRY: usize = 80;

/// Ten users, sixteen antennas, two active, BPSK.
pub fn prior_codebook() -> Result<SmCodebook> {
    Ok(SmCodebook::build(
        16,
        2,
        CodebookPolicy::SeededRandom(PRIOR_CODEBOOK_SEED),
    )?)
}

/// Empirical marginal of one transmit entry against the i.i.d. reference and
/// the exact marginal of the codebook.
pub fn fig_prior(seed: u64, draws: usize) -> Result<Table> {
    let codebook = prior_codebook()?;
    let c = Constellation::bpsk(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = empirical_stats(&codebook, &c, 10, PRIOR_ENTRY, draws, &[], &mut rng)?;
    let within_user = (PRIOR_ENTRY - 1) % codebook.m_u() + 1;
    let exact = exact_marginal(&codebook, &c, within_user)?;
    let mut rows: Vec<Vec<String>> = stats
        .marginal
        .iter()
        .zip(&stats.reference_marginal)
        .zip(&exact)
        .map(|(((v, p), (_, r)), (_, e))| {
            vec![
                v.re.to_string(),
                p.to_string(),
                r.to_string(),
                e.to_string(),
            ]
        })
        .collect();
    rows.sort_by(|a, b| {
        a[0].parse::<f64>()
            .unwrap()
            .total_cmp(&b[0].parse::<f64>().unwrap())
    });
    Ok(Table {
        header: vec!["value", "empirical", "reference", "exact"],
        rows,
        converged: true,
    })
}

/// Classic LASSO MSE against `lambda`: Monte Carlo and replica.
pub fn fig_mse(cfg: &Config, execution: Execution) -> Result<Table> {
    let mut cfg = cfg.clone();
    cfg.detector.kind = DetectorKind::ClassicLasso;
    cfg.experiment.metric = MetricName::Mse;
    let cmp = compare_replica_mc(&cfg, &cfg.experiment.lambda_grid, execution)?;
    let ln10 = std::f64::consts::LN_10;
    Ok(Table {
        header: vec!["lambda", "mc_mse_db", "mc_stderr_db", "replica_mse_db"],
        converged: cmp.rows.iter().all(|r| r.replica_converged),
        rows: cmp
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.lambda.to_string(),
                    db(r.mc.mean).to_string(),
                    (10.0 / ln10 * r.mc.stderr / r.mc.mean).to_string(),
                    db(r.replica).to_string(),
                ]
            })
            .collect(),
    })
}

/// Box-LASSO MSE and error rate against `lambda`: replica curves and
/// Monte Carlo markers.
pub fn fig_error_sweep(cfg: &Config, execution: Execution) -> Result<Table> {
    let mut cfg = cfg.clone();
    cfg.detector.kind = DetectorKind::BoxLasso;
    let grid = cfg.experiment.lambda_grid.clone();
    let setup = Setup::from_config(&cfg)?;
    let specs: Vec<_> = grid
        .iter()
        .map(|&l| cfg.rls_spec(l))
        .collect::<Result<_>>()?;
    let mc = run_sweep(
        &setup,
        &specs,
        &[Metric::Mse, Metric::ErrorRate],
        cfg.experiment.trials,
        false,
        execution,
    )?;
    let spectrum = cfg.spectrum()?;
    let input = cfg.decoupled_input()?;
    let noise_var = cfg.noise_var();
    let opts = cfg.fixed_point_options();
    let fps: Vec<_> = grid
        .par_iter()
        .map(|&l| {
            Ok(solve_fixed_point(
                &cfg.scalar_spec(l, noise_var)?,
                cfg.scalar_decision(),
                &spectrum,
                noise_var,
                &input,
                &opts,
            )?)
        })
        .collect::<Result<_>>()?;
    let ln10 = std::f64::consts::LN_10;
    Ok(Table {
        header: vec![
            "lambda",
            "replica_mse_db",
            "mc_mse_db",
            "mc_mse_stderr_db",
            "replica_error_rate",
            "mc_error_rate",
            "mc_error_stderr",
        ],
        converged: fps
            .iter()
            .all(|f: &smrls_core::replica::FixedPointResult| f.converged),
        rows: grid
            .iter()
            .zip(&fps)
            .zip(&mc)
            .map(|((l, fp), m)| {
                vec![
                    l.to_string(),
                    db(fp.mse).to_string(),
                    db(m[0].mean).to_string(),
                    (10.0 / ln10 * m[0].stderr / m[0].mean).to_string(),
                    fp.error_rate.to_string(),
                    m[1].mean.to_string(),
                    m[1].stderr.to_string(),
                ]
            })
            .collect(),
    })
}

/// Tuned error rates at one SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunedPoint {
    pub snr_db: f64,
    pub box_lambda: f64,
    pub box_error: f64,
    pub classic_lambda: f64,
    pub classic_error: f64,
    pub map_error: f64,
    pub converged: bool,
}

pub fn tuned_errors(cfg: &Config) -> Result<Vec<TunedPoint>> {
    let input = cfg.decoupled_input()?;
    let spectrum = cfg.spectrum()?;
    let opts = cfg.fixed_point_options();
    let decision = ScalarDecision::Threshold(cfg.threshold());
    let (lower, upper) = (cfg.detector.lower, cfg.detector.upper);
    let boxed = move |l: f64| ScalarEstimatorSpec::box_lasso(l, lower, upper);
    let classic = ScalarEstimatorSpec::classic_lasso;
    let grid = &cfg.experiment.lambda_grid;
    cfg.experiment
        .snr_grid
        .par_iter()
        .map(|&snr| {
            let noise_var = noise_for_snr(cfg.system.power, snr);
            let run = |f: &EstimatorFamily<'_>| {
                tune(
                    f,
                    decision,
                    &spectrum,
                    noise_var,
                    &input,
                    TuneMetric::ErrorRate,
                    grid,
                    &opts,
                )
                .with_context(|| format!("tuning at {snr} dB"))
            };
            let b = run(&boxed)?;
            let c = run(&classic)?;
            let m = map_bound(&spectrum, noise_var, &input, &opts)?;
            Ok(TunedPoint {
                snr_db: snr,
                box_lambda: b.lambda,
                box_error: b.value,
                classic_lambda: c.lambda,
                classic_error: c.value,
                map_error: m.error_rate,
                converged: b.fixed_point.converged && c.fixed_point.converged && m.converged,
            })
        })
        .collect()
}

/// Minimum error rate of box and classic LASSO, and the MAP bound, against SNR.
pub fn fig_tuned_error(cfg: &Config) -> Result<Table> {
    let points = tuned_errors(cfg)?;
    Ok(Table {
        header: vec![
            "snr_db",
            "box_lambda",
            "box_error_rate",
            "classic_lambda",
            "classic_error_rate",
            "map_error_rate",
        ],
        converged: points.iter().all(|p| p.converged),
        rows: points
            .iter()
            .map(|p| {
                [
                    p.snr_db,
                    p.box_lambda,
                    p.box_error,
                    p.classic_lambda,
                    p.classic_error,
                    p.map_error,
                ]
                .iter()
                .map(f64::to_string)
                .collect()
            })
            .collect(),
    })
}

/// Box-LASSO tuning dictionary over the SNR grid.
pub fn lambda_dictionary(cfg: &Config) -> Result<Vec<DictionaryRow>> {
    let mut cfg = cfg.clone();
    cfg.detector.kind = DetectorKind::BoxLasso;
    dictionary(&cfg)
}

/// Tuning dictionary for the configured LASSO family and metric.
pub fn dictionary(cfg: &Config) -> Result<Vec<DictionaryRow>> {
    if !cfg.is_lasso() {
        anyhow::bail!("tuning needs a LASSO-type detector");
    }
    let input = cfg.decoupled_input()?;
    let spectrum = cfg.spectrum()?;
    let opts = cfg.fixed_point_options();
    let (lower, upper) = (cfg.detector.lower, cfg.detector.upper);
    let kind = cfg.detector.kind;
    let family = move |l: f64| match kind {
        DetectorKind::BoxLasso => ScalarEstimatorSpec::box_lasso(l, lower, upper),
        _ => ScalarEstimatorSpec::classic_lasso(l),
    };
    let metric = cfg.experiment.metric.tune_metric();
    Ok(cfg
        .experiment
        .snr_grid
        .par_iter()
        .flat_map_iter(|&snr| {
            tuning_dictionary(
                &family,
                cfg.scalar_decision(),
                &spectrum,
                &input,
                metric,
                &[snr],
                &cfg.experiment.lambda_grid,
                &opts,
            )
        })
        .collect())
}

/// One point of the mismatched-MAP error-rate bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapBoundPoint {
    pub snr_db: f64,
    pub constellation: ConstellationName,
    pub error_rate: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Eight antennas per user, one active, `K/N = 1/4` so `M/N = 2`, unit power.
pub fn map_bound_curves(
    snr_grid: &[f64],
    opts: &smrls_core::replica::FixedPointOptions,
) -> Result<Vec<MapBoundPoint>> {
    let spectrum = RayleighSpectrum::new(0.25 * 8.0)?;
    let names = [
        ConstellationName::Ssk,
        ConstellationName::Bpsk,
        ConstellationName::Qam4,
    ];
    let jobs: Vec<(ConstellationName, f64)> = names
        .iter()
        .flat_map(|&c| snr_grid.iter().map(move |&s| (c, s)))
        .collect();
    jobs.par_iter()
        .map(|&(name, snr)| {
            let input = DecoupledInput::new(1.0 / 8.0, name.build(1.0))?;
            let r = map_bound(&spectrum, noise_for_snr(1.0, snr), &input, opts)?;
            Ok(MapBoundPoint {
                snr_db: snr,
                constellation: name,
                error_rate: r.error_rate,
                residual: r.residual(),
                converged: r.converged,
            })
        })
        .collect()
}

pub fn fig_map_bound(cfg: &Config) -> Result<Table> {
    let points = map_bound_curves(&cfg.experiment.snr_grid, &cfg.fixed_point_options())?;
    Ok(Table {
        header: vec![
            "snr_db",
            "constellation",
            "error_rate",
            "residual",
            "converged",
        ],
        converged: points.iter().all(|p| p.converged),
        rows: points
            .iter()
            .map(|p| {
                vec![
                    p.snr_db.to_string(),
                    p.constellation.label().to_string(),
                    p.error_rate.to_string(),
                    p.residual.to_string(),
                    p.converged.to_string(),
                ]
            })
            .collect(),
    })
}
