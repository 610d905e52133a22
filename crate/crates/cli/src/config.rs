//! Run configuration: a TOML file with `[system]`, `[channel]`, `[detector]`
//! and `[experiment]` sections, every key optional.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use smrls_core::channel::ExperimentConfig;
use smrls_core::codec::{CodebookPolicy, SmCodebook};
use smrls_core::constellation::Constellation;
use smrls_core::detect::{Decision, FeasibleSet, Metric, Regularizer, RlsSpec, SolverOptions};
use smrls_core::replica::{DecoupledInput, ScalarDecision, ScalarEstimatorSpec, TuneMetric};
use smrls_core::RayleighSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ConstellationName {
    Ssk,
    Bpsk,
    Qam4,
}

impl ConstellationName {
    pub fn build(self, power: f64) -> Constellation {
        match self {
            ConstellationName::Ssk => Constellation::ssk(power),
            ConstellationName::Bpsk => Constellation::bpsk(power),
            ConstellationName::Qam4 => Constellation::qam4(power),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ConstellationName::Ssk => "ssk",
            ConstellationName::Bpsk => "bpsk",
            ConstellationName::Qam4 => "qam4",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CodebookName {
    Lexicographic,
    Seeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    /// l1 penalty over the box `[-lower, upper]`.
    BoxLasso,
    /// l1 penalty over the real line.
    ClassicLasso,
    /// l0 search over `S0^M` with the mismatched-prior weight.
    Map,
    /// Maximum likelihood over valid codewords only.
    MapCodebook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MetricName {
    Mse,
    ErrorRate,
}

impl MetricName {
    pub fn metric(self) -> Metric {
        match self {
            MetricName::Mse => Metric::Mse,
            MetricName::ErrorRate => Metric::ErrorRate,
        }
    }

    pub fn tune_metric(self) -> TuneMetric {
        match self {
            MetricName::Mse => TuneMetric::Mse,
            MetricName::ErrorRate => TuneMetric::ErrorRate,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MetricName::Mse => "mse",
            MetricName::ErrorRate => "error-rate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub users: usize,
    pub m_u: usize,
    pub l_u: usize,
    pub n: usize,
    pub constellation: ConstellationName,
    pub power: f64,
    pub codebook: CodebookName,
    pub codebook_seed: u64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            users: 10,
            m_u: 8,
            l_u: 1,
            n: 160,
            constellation: ConstellationName::Ssk,
            power: 1.0,
            codebook: CodebookName::Lexicographic,
            codebook_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    /// `10 log10(P / sigma^2)`; ignored when `noise_var` is set.
    pub snr_db: f64,
    pub noise_var: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            snr_db: 11.0,
            noise_var: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    pub lambda: f64,
    pub lower: f64,
    pub upper: f64,
    /// Hard-decision threshold; defaults to `sqrt(P) / 2`.
    pub threshold: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            kind: DetectorKind::ClassicLasso,
            lambda: 0.56,
            lower: 0.0,
            upper: 1.0,
            threshold: None,
            tol: 1e-8,
            max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub trials: usize,
    pub metric: MetricName,
    pub retain_trials: bool,
    pub lambda_grid: Vec<f64>,
    pub snr_grid: Vec<f64>,
    pub damping: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 1000,
            metric: MetricName::Mse,
            retain_trials: false,
            lambda_grid: linspace(0.02, 1.0, 50),
            snr_grid: linspace(5.0, 13.0, 17),
            damping: 0.5,
            fp_tol: 1e-10,
            fp_max_iter: 10_000,
        }
    }
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    pub channel: ChannelSection,
    pub detector: DetectorSection,
    pub experiment: ExperimentSection,
}

/// Command-line overrides; each flag replaces the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub users: Option<usize>,
    #[arg(long, global = true)]
    pub m_u: Option<usize>,
    #[arg(long, global = true)]
    pub l_u: Option<usize>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub constellation: Option<ConstellationName>,
    #[arg(long, global = true)]
    pub power: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub codebook: Option<CodebookName>,
    #[arg(long, global = true)]
    pub codebook_seed: Option<u64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long, global = true)]
    pub noise_var: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub detector: Option<DetectorKind>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub lower: Option<f64>,
    #[arg(long, global = true)]
    pub upper: Option<f64>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub metric: Option<MetricName>,
    /// Keep per-trial values in the JSON summary
    #[arg(long, global = true)]
    pub retain_trials: bool,
    /// Comma-separated regularization grid
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Comma-separated SNR grid in dB
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    pub snr_grid: Option<Vec<f64>>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing configuration")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    /// Load `base` (or `overrides.config` when set) and apply every flag.
    pub fn resolve(base: Config, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match &overrides.config {
            Some(path) => Self::load(path)?,
            None => base,
        };
        let o = overrides;
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.system.users, o.users);
        set!(cfg.system.m_u, o.m_u);
        set!(cfg.system.l_u, o.l_u);
        set!(cfg.system.n, o.n);
        set!(cfg.system.constellation, o.constellation);
        set!(cfg.system.power, o.power);
        set!(cfg.system.codebook, o.codebook);
        set!(cfg.system.codebook_seed, o.codebook_seed);
        if let Some(snr) = o.snr_db {
            cfg.channel.snr_db = snr;
            cfg.channel.noise_var = None;
        }
        if o.noise_var.is_some() {
            cfg.channel.noise_var = o.noise_var;
        }
        set!(cfg.detector.kind, o.detector);
        set!(cfg.detector.lambda, o.lambda);
        set!(cfg.detector.lower, o.lower);
        set!(cfg.detector.upper, o.upper);
        if o.threshold.is_some() {
            cfg.detector.threshold = o.threshold;
        }
        set!(cfg.experiment.seed, o.seed);
        set!(cfg.experiment.trials, o.trials);
        set!(cfg.experiment.metric, o.metric);
        if o.retain_trials {
            cfg.experiment.retain_trials = true;
        }
        set!(cfg.experiment.lambda_grid, o.lambda_grid);
        set!(cfg.experiment.snr_grid, o.snr_grid);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.system.power > 0.0) {
            bail!("symbol power must be positive");
        }
        if let Some(v) = self.channel.noise_var {
            if !(v > 0.0) {
                bail!("noise variance must be positive");
            }
        }
        if !self.channel.snr_db.is_finite() {
            bail!("SNR must be finite");
        }
        self.experiment_config()?.validate()?;
        let d = &self.detector;
        if !(d.tol > 0.0) || d.max_iter == 0 {
            bail!("solver tolerance and iteration cap must be positive");
        }
        if !(self.experiment.damping > 0.0 && self.experiment.damping <= 1.0) {
            bail!("damping must lie in (0, 1]");
        }
        if self.experiment.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            bail!("lambda grid entries must be non-negative");
        }
        self.rls_spec(d.lambda)?.validate(&self.constellation())?;
        Ok(())
    }

    pub fn constellation(&self) -> Constellation {
        self.system.constellation.build(self.system.power)
    }

    pub fn noise_var(&self) -> f64 {
        self.channel.noise_var.unwrap_or_else(|| {
            ExperimentConfig::noise_for_snr(self.system.power, self.channel.snr_db)
        })
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            users: self.system.users,
            m_u: self.system.m_u,
            l_u: self.system.l_u,
            n: self.system.n,
            noise_var: self.noise_var(),
            constellation: self.constellation(),
            seed: self.experiment.seed,
            trials: self.experiment.trials,
        })
    }

    pub fn codebook(&self) -> Result<SmCodebook> {
        let policy = match self.system.codebook {
            CodebookName::Lexicographic => CodebookPolicy::Lexicographic,
            CodebookName::Seeded => CodebookPolicy::SeededRandom(self.system.codebook_seed),
        };
        Ok(SmCodebook::build(self.system.m_u, self.system.l_u, policy)?)
    }

    pub fn threshold(&self) -> f64 {
        self.detector
            .threshold
            .unwrap_or_else(|| self.system.power.sqrt() / 2.0)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.detector.tol,
            max_iter: self.detector.max_iter,
        }
    }

    pub fn fixed_point_options(&self) -> smrls_core::replica::FixedPointOptions {
        smrls_core::replica::FixedPointOptions {
            damping: self.experiment.damping,
            init: None,
            tol: self.experiment.fp_tol,
            max_iter: self.experiment.fp_max_iter,
        }
    }

    /// The finite-dimensional detector at regularization `lambda`.
    pub fn rls_spec(&self, lambda: f64) -> Result<RlsSpec> {
        let d = &self.detector;
        let eps = self.threshold();
        let c = self.constellation();
        Ok(match d.kind {
            DetectorKind::BoxLasso => RlsSpec::box_lasso(lambda, d.lower, d.upper, eps),
            DetectorKind::ClassicLasso => RlsSpec::classic_lasso(lambda, eps),
            DetectorKind::Map => RlsSpec {
                feasible: FeasibleSet::Discrete(c.augmented()),
                regularizer: Regularizer::mismatched_map(
                    self.noise_var(),
                    self.system.l_u as f64 / self.system.m_u as f64,
                    c.bits_per_symbol(),
                )?,
                decision: Decision::Identity,
            },
            DetectorKind::MapCodebook => RlsSpec {
                feasible: FeasibleSet::Discrete(c.augmented()),
                regularizer: Regularizer::None,
                decision: Decision::Identity,
            },
        })
    }

    pub fn spectrum(&self) -> Result<RayleighSpectrum> {
        Ok(RayleighSpectrum::new(self.experiment_config()?.xi())?)
    }

    pub fn decoupled_input(&self) -> Result<DecoupledInput> {
        Ok(DecoupledInput::new(
            self.system.l_u as f64 / self.system.m_u as f64,
            self.constellation(),
        )?)
    }

    /// The decoupled scalar estimator matching the detector at `lambda`.
    pub fn scalar_spec(&self, lambda: f64, noise_var: f64) -> Result<ScalarEstimatorSpec> {
        let d = &self.detector;
        Ok(match d.kind {
            DetectorKind::BoxLasso => ScalarEstimatorSpec::box_lasso(lambda, d.lower, d.upper),
            DetectorKind::ClassicLasso => ScalarEstimatorSpec::classic_lasso(lambda),
            DetectorKind::Map => {
                ScalarEstimatorSpec::mismatched_map(noise_var, &self.decoupled_input()?)?
            }
            DetectorKind::MapCodebook => {
                bail!("codebook-exact detection has no decoupled counterpart")
            }
        })
    }

    pub fn scalar_decision(&self) -> ScalarDecision {
        match self.detector.kind {
            DetectorKind::Map | DetectorKind::MapCodebook => ScalarDecision::Identity,
            _ => ScalarDecision::Threshold(self.threshold()),
        }
    }

    /// True when the detector is indexed by a regularization weight.
    pub fn is_lasso(&self) -> bool {
        matches!(
            self.detector.kind,
            DetectorKind::BoxLasso | DetectorKind::ClassicLasso
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_reference_uplink() {
        let cfg = Config::default();
        let e = cfg.experiment_config().unwrap();
        assert_eq!(e.m(), 80);
        assert!((e.xi() - 0.5).abs() < 1e-15);
        assert!((cfg.noise_var() - 10f64.powf(-1.1)).abs() < 1e-15);
        assert_eq!(cfg.threshold(), 0.5);
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let cfg = Config::default();
        assert_eq!(Config::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        let partial =
            Config::from_toml("[system]\nusers = 4\n[detector]\nkind = \"box-lasso\"\n").unwrap();
        assert_eq!(partial.system.users, 4);
        assert_eq!(partial.detector.kind, DetectorKind::BoxLasso);
        assert_eq!(partial.system.n, 160);
        assert!(Config::from_toml("[system]\nantennas = 3\n").is_err());
    }

    #[test]
    fn flags_override_keys() {
        let o = Overrides {
            users: Some(2),
            noise_var: Some(0.3),
            lambda_grid: Some(vec![0.1, 0.2]),
            ..Default::default()
        };
        let cfg = Config::resolve(Config::default(), &o).unwrap();
        assert_eq!(cfg.system.users, 2);
        assert_eq!(cfg.noise_var(), 0.3);
        assert_eq!(cfg.experiment.lambda_grid, vec![0.1, 0.2]);
        let bad = Overrides {
            trials: Some(0),
            ..Default::default()
        };
        assert!(Config::resolve(Config::default(), &bad).is_err());
    }
}
