use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smrls::config::{Config, Overrides};
use smrls::figures::{self, Table};
use smrls::formats::{
    parse_codebook, write_codebook, write_replica_csv, write_summary, write_table,
};
use smrls::harness::{compare_replica_mc, run_monte_carlo, Execution, RunManifest, Setup};
use smrls::Unconverged;
use smrls_core::codec::{
    empirical_stats, encode, exact_marginal, per_antenna_rate, MomentRequest, SmCodebook,
    UserPayload,
};
use smrls_core::replica::{solve_fixed_point, tune, DictionaryRow, ScalarEstimatorSpec};

#[derive(Parser)]
#[command(
    name = "smrls",
    version,
    about = "Spatial-modulation RLS detection: simulation and replica analysis"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    /// CSV output file (stdout when absent)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON summary file; defaults to the CSV path with a `.json` extension
    #[arg(long, global = true)]
    summary: Option<PathBuf>,
    /// Run trials on one thread
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index bits, per-user rate and per-antenna rate bounds
    Rate,
    /// Map one user's bits to a transmit vector
    Encode {
        /// Payload as a string of 0/1
        #[arg(long)]
        bits: String,
        /// Read the codebook from a text file instead of building it
        #[arg(long)]
        codebook_file: Option<PathBuf>,
        /// Also write the codebook in text form
        #[arg(long)]
        write_codebook: Option<PathBuf>,
    },
    /// Empirical marginal and joint moments of one transmit entry
    Stats {
        /// One-based entry index into the stacked transmit vector
        #[arg(long)]
        entry: usize,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        /// Joint moment `l:t:delta`, repeatable
        #[arg(long = "moment", value_parser = parse_moment)]
        moments: Vec<MomentRequest>,
    },
    /// Monte Carlo of the configured detector
    Simulate,
    /// Replica fixed point of the configured detector
    Replica,
    /// Replica-optimal regularization at the configured SNR
    Tune,
    /// Tuning dictionary over the SNR grid
    Dict,
    /// Replica prediction against Monte Carlo over the lambda grid
    Compare,
    /// Marginal of entry 80 for the ten-user BPSK codebook
    FigPrior {
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Classic LASSO MSE against lambda
    FigMse,
    /// Box-LASSO MSE and error rate against lambda
    FigErrorSweep,
    /// Tuned box and classic LASSO error rates and the MAP bound against SNR
    FigTunedError,
    /// Box-LASSO tuning dictionary
    FigLambdaDict,
    /// Mismatched-MAP error-rate bound for SSK, BPSK and 4-QAM
    FigMapBound,
}

fn parse_moment(s: &str) -> Result<MomentRequest, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [l, t, d] = parts[..] else {
        return Err(format!("expected l:t:delta, got {s:?}"));
    };
    Ok(MomentRequest {
        l: l.parse().map_err(|e| format!("{e}"))?,
        t: t.parse().map_err(|e| format!("{e}"))?,
        delta: d.parse().map_err(|e| format!("{e}"))?,
    })
}

struct Output {
    csv: Option<PathBuf>,
    summary: Option<PathBuf>,
}

impl Output {
    fn new(cli: &Cli) -> Self {
        let summary = cli
            .summary
            .clone()
            .or_else(|| cli.out.as_ref().map(|p| p.with_extension("json")));
        Self {
            csv: cli.out.clone(),
            summary,
        }
    }

    fn paths(&self) -> Vec<String> {
        [&self.csv, &self.summary]
            .into_iter()
            .flatten()
            .map(|p| p.display().to_string())
            .collect()
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.csv {
            Some(p) => {
                Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)
            }
            None => Box::new(io::stdout().lock()),
        })
    }

    fn summary<T: serde::Serialize>(&self, manifest: &RunManifest, result: &T) -> Result<()> {
        if let Some(p) = &self.summary {
            write_summary(
                manifest,
                result,
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )?;
        }
        Ok(())
    }

    fn table(&self, t: &Table) -> Result<()> {
        write_table(&t.header, &t.rows, self.writer()?)
    }
}

fn check(converged: bool, what: &str) -> Result<()> {
    if converged {
        Ok(())
    } else {
        Err(Unconverged(format!("{what}: fixed point or solver did not converge")).into())
    }
}

fn row_of(
    snr_db: f64,
    noise_var: f64,
    lambda: f64,
    fp: &smrls_core::replica::FixedPointResult,
    value: f64,
) -> DictionaryRow {
    DictionaryRow {
        snr_db,
        noise_var,
        lambda,
        value,
        c_star: fp.c_star,
        q_star: fp.q_star,
        residual: fp.residual(),
        mse: fp.mse,
        error_rate: fp.error_rate,
        converged: fp.converged,
    }
}

fn snr_of(cfg: &Config) -> f64 {
    10.0 * (cfg.system.power / cfg.noise_var()).log10()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::resolve(Config::default(), &cli.overrides)?;
    let out = Output::new(&cli);
    let execution = if cli.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Rate => {
            let s = cfg.constellation().bits_per_symbol();
            let r = per_antenna_rate(cfg.system.m_u, cfg.system.l_u, s)?;
            let k = r.constants;
            let opt = |f: fn(&smrls_core::codec::RateConstants) -> f64| {
                k.as_ref().map_or(String::new(), |k| f(k).to_string())
            };
            write_table(
                &[
                    "m_u",
                    "l_u",
                    "s",
                    "index_bits",
                    "user_rate",
                    "r_bar",
                    "c",
                    "c_lower",
                    "c_upper",
                    "stirling_lo",
                    "stirling_hi",
                ],
                &[vec![
                    cfg.system.m_u.to_string(),
                    cfg.system.l_u.to_string(),
                    s.to_string(),
                    r.index_bits.to_string(),
                    r.user_rate.to_string(),
                    r.r_bar.to_string(),
                    opt(|k| k.c_const),
                    opt(|k| k.c_lower),
                    opt(|k| k.c_upper),
                    opt(|k| k.stirling_lo),
                    opt(|k| k.stirling_hi),
                ]],
                out.writer()?,
            )
        }
        Command::Encode {
            bits,
            codebook_file,
            write_codebook: dump,
        } => {
            let codebook: SmCodebook = match codebook_file {
                Some(p) => parse_codebook(
                    &std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?,
                )?,
                None => cfg.codebook()?,
            };
            let c = cfg.constellation();
            let bits: Vec<u8> = bits
                .chars()
                .map(|ch| match ch {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    _ => bail!("payload must contain only 0 and 1"),
                })
                .collect::<Result<_>>()?;
            let payload = UserPayload::new(bits, &codebook, &c)?;
            let x = encode(&codebook, &c, &payload)?;
            if let Some(p) = dump {
                std::fs::write(p, write_codebook(&codebook))
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            let rows: Vec<Vec<String>> = x
                .iter()
                .enumerate()
                .map(|(a, v)| vec![(a + 1).to_string(), v.re.to_string(), v.im.to_string()])
                .collect();
            write_table(&["antenna", "re", "im"], &rows, out.writer()?)
        }
        Command::Stats {
            entry,
            draws,
            moments,
        } => {
            let codebook = cfg.codebook()?;
            let c = cfg.constellation();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
            let stats = empirical_stats(
                &codebook,
                &c,
                cfg.system.users,
                *entry,
                *draws,
                moments,
                &mut rng,
            )?;
            let exact = exact_marginal(&codebook, &c, (entry - 1) % codebook.m_u() + 1)?;
            let mut rows = Vec::new();
            for (((v, p), (_, r)), (_, e)) in stats
                .marginal
                .iter()
                .zip(&stats.reference_marginal)
                .zip(&exact)
            {
                rows.push(vec![
                    "marginal".into(),
                    v.re.to_string(),
                    v.im.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    p.to_string(),
                    "0".into(),
                    r.to_string(),
                    "0".into(),
                    e.to_string(),
                ]);
            }
            for m in &stats.moments {
                rows.push(vec![
                    "moment".into(),
                    String::new(),
                    String::new(),
                    m.request.l.to_string(),
                    m.request.t.to_string(),
                    m.request.delta.to_string(),
                    m.empirical.re.to_string(),
                    m.empirical.im.to_string(),
                    m.reference.re.to_string(),
                    m.reference.im.to_string(),
                    String::new(),
                ]);
            }
            write_table(
                &[
                    "kind",
                    "value_re",
                    "value_im",
                    "l",
                    "t",
                    "delta",
                    "empirical_re",
                    "empirical_im",
                    "reference_re",
                    "reference_im",
                    "exact",
                ],
                &rows,
                out.writer()?,
            )
        }
        Command::Simulate => {
            let setup = Setup::from_config(&cfg)?;
            let spec = cfg.rls_spec(cfg.detector.lambda)?;
            let metric = cfg.experiment.metric;
            let r = run_monte_carlo(
                &setup,
                &spec,
                metric.metric(),
                cfg.experiment.trials,
                cfg.experiment.retain_trials,
                execution,
            )?;
            write_table(
                &[
                    "metric",
                    "mean",
                    "stderr",
                    "mean_db",
                    "trials",
                    "unconverged",
                    "failed",
                ],
                &[vec![
                    r.metric.clone(),
                    r.mean.to_string(),
                    r.stderr.to_string(),
                    r.mean_db().to_string(),
                    r.trials.to_string(),
                    r.unconverged.to_string(),
                    r.failed.to_string(),
                ]],
                out.writer()?,
            )?;
            out.summary(&RunManifest::new("simulate", &cfg, out.paths()), &r)?;
            check(r.unconverged == 0, "simulate")
        }
        Command::Replica => {
            let noise_var = cfg.noise_var();
            let fp = solve_fixed_point(
                &cfg.scalar_spec(cfg.detector.lambda, noise_var)?,
                cfg.scalar_decision(),
                &cfg.spectrum()?,
                noise_var,
                &cfg.decoupled_input()?,
                &cfg.fixed_point_options(),
            )?;
            let value = cfg.experiment.metric.tune_metric().of(&fp);
            let row = row_of(snr_of(&cfg), noise_var, cfg.detector.lambda, &fp, value);
            write_replica_csv(&[row], out.writer()?)?;
            check(fp.converged, "replica")
        }
        Command::Tune => {
            if !cfg.is_lasso() {
                bail!("tuning needs a LASSO-type detector");
            }
            let noise_var = cfg.noise_var();
            let (lower, upper, kind) = (cfg.detector.lower, cfg.detector.upper, cfg.detector.kind);
            let family = move |l: f64| match kind {
                smrls::config::DetectorKind::BoxLasso => {
                    ScalarEstimatorSpec::box_lasso(l, lower, upper)
                }
                _ => ScalarEstimatorSpec::classic_lasso(l),
            };
            let t = tune(
                &family,
                cfg.scalar_decision(),
                &cfg.spectrum()?,
                noise_var,
                &cfg.decoupled_input()?,
                cfg.experiment.metric.tune_metric(),
                &cfg.experiment.lambda_grid,
                &cfg.fixed_point_options(),
            )?;
            let row = row_of(snr_of(&cfg), noise_var, t.lambda, &t.fixed_point, t.value);
            write_replica_csv(&[row], out.writer()?)?;
            check(t.fixed_point.converged, "tune")
        }
        Command::Dict => {
            let rows = figures::dictionary(&cfg)?;
            write_replica_csv(&rows, out.writer()?)?;
            check(rows.iter().all(|r| r.converged), "dict")
        }
        Command::Compare => {
            let cmp = compare_replica_mc(&cfg, &cfg.experiment.lambda_grid, execution)?;
            let rows: Vec<Vec<String>> = cmp
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.lambda.to_string(),
                        r.replica.to_string(),
                        r.mc.mean.to_string(),
                        r.mc.stderr.to_string(),
                        r.deviation_db.map_or(String::new(), |d| d.to_string()),
                        r.replica_converged.to_string(),
                    ]
                })
                .collect();
            write_table(
                &[
                    "lambda",
                    "replica",
                    "mc_mean",
                    "mc_stderr",
                    "deviation_db",
                    "replica_converged",
                ],
                &rows,
                out.writer()?,
            )?;
            if let Some(d) = cmp.max_deviation_db {
                eprintln!("max deviation: {d:.4} dB");
            }
            out.summary(&RunManifest::new("compare", &cfg, out.paths()), &cmp)?;
            check(
                cmp.rows
                    .iter()
                    .all(|r| r.replica_converged && r.mc.unconverged == 0),
                "compare",
            )
        }
        Command::FigPrior { draws } => out.table(&figures::fig_prior(cfg.experiment.seed, *draws)?),
        Command::FigMse => figure(&out, &cfg, "fig-mse", figures::fig_mse(&cfg, execution)?),
        Command::FigErrorSweep => figure(
            &out,
            &cfg,
            "fig-error-sweep",
            figures::fig_error_sweep(&cfg, execution)?,
        ),
        Command::FigTunedError => figure(
            &out,
            &cfg,
            "fig-tuned-error",
            figures::fig_tuned_error(&cfg)?,
        ),
        Command::FigLambdaDict => {
            let rows = figures::lambda_dictionary(&cfg)?;
            write_replica_csv(&rows, out.writer()?)?;
            check(rows.iter().all(|r| r.converged), "fig-lambda-dict")
        }
        Command::FigMapBound => figure(&out, &cfg, "fig-map-bound", figures::fig_map_bound(&cfg)?),
    }
}

fn figure(out: &Output, cfg: &Config, command: &str, table: Table) -> Result<()> {
    out.table(&table)?;
    if out.csv.is_some() {
        let manifest = RunManifest::new(command, cfg, out.paths());
        out.summary(&manifest, &serde_json::json!({ "rows": table.rows.len() }))?;
    }
    check(table.converged, command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Unconverged>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
