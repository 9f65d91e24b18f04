//! Experiment configuration: per-experiment default grids, a flat
//! key/value config file format, and CLI-style overrides.
//!
//! Config file grammar: one `key = value` pair per line, `#` starts a
//! comment, blank lines are ignored. Grid values are comma-separated
//! numbers. Recognized keys: `case`, `out`, `seed`, `trials`, `alpha`,
//! `n_mc`, `rho_grid`, `snr_grid_db`, `k_grid`, `block_grid`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    UtilityVsRho,
    Tradeoff,
    TrainingUtility,
    FrobeniusGap,
    Detection,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::UtilityVsRho,
        ExperimentKind::Tradeoff,
        ExperimentKind::TrainingUtility,
        ExperimentKind::FrobeniusGap,
        ExperimentKind::Detection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::UtilityVsRho => "utility_vs_rho",
            ExperimentKind::Tradeoff => "tradeoff",
            ExperimentKind::TrainingUtility => "training_utility",
            ExperimentKind::FrobeniusGap => "frobenius_gap",
            ExperimentKind::Detection => "detection",
        }
    }

    /// Stable stream index used to derive this experiment's seed space.
    pub fn stream_id(self) -> u64 {
        match self {
            ExperimentKind::UtilityVsRho => 1,
            ExperimentKind::Tradeoff => 2,
            ExperimentKind::TrainingUtility => 3,
            ExperimentKind::FrobeniusGap => 4,
            ExperimentKind::Detection => 5,
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utility_vs_rho" => Ok(ExperimentKind::UtilityVsRho),
            "tradeoff" => Ok(ExperimentKind::Tradeoff),
            "training_utility" => Ok(ExperimentKind::TrainingUtility),
            "frobenius_gap" => Ok(ExperimentKind::FrobeniusGap),
            "detection" => Ok(ExperimentKind::Detection),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Partially specified configuration, as read from a file or CLI flags.
/// Unset fields fall back to the per-experiment defaults.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub case_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub alpha_target: Option<f64>,
    pub n_mc: Option<usize>,
    pub rho_grid: Option<Vec<f64>>,
    pub snr_grid_db: Option<Vec<f64>>,
    pub k_grid: Option<Vec<usize>>,
    pub block_grid: Option<Vec<usize>>,
}

impl ConfigOverrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "case" => out.case_path = Some(PathBuf::from(value)),
                "out" => out.output_dir = Some(PathBuf::from(value)),
                "seed" => out.seed = Some(parse_one(key, value)?),
                "trials" => out.trials = Some(parse_one(key, value)?),
                "alpha" => out.alpha_target = Some(parse_one(key, value)?),
                "n_mc" => out.n_mc = Some(parse_one(key, value)?),
                "rho_grid" => out.rho_grid = Some(parse_list(key, value)?),
                "snr_grid_db" => out.snr_grid_db = Some(parse_list(key, value)?),
                "k_grid" => out.k_grid = Some(parse_list(key, value)?),
                "block_grid" => out.block_grid = Some(parse_list(key, value)?),
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Later (CLI) values win over earlier (file) values.
    pub fn merged_over(self, base: Self) -> Self {
        Self {
            case_path: self.case_path.or(base.case_path),
            output_dir: self.output_dir.or(base.output_dir),
            seed: self.seed.or(base.seed),
            trials: self.trials.or(base.trials),
            alpha_target: self.alpha_target.or(base.alpha_target),
            n_mc: self.n_mc.or(base.n_mc),
            rho_grid: self.rho_grid.or(base.rho_grid),
            snr_grid_db: self.snr_grid_db.or(base.snr_grid_db),
            k_grid: self.k_grid.or(base.k_grid),
            block_grid: self.block_grid.or(base.block_grid),
        }
    }
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} value '{value}'")))
}

/// Parse a comma-separated grid value, as used in config files and CLI flags.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_one(key, s))
        .collect()
}

/// Fully resolved configuration for one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case_path: PathBuf,
    pub rho_grid: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub block_grid: Vec<usize>,
    pub trials: usize,
    pub alpha_target: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Dense correlation grid for the utility and tradeoff sweeps: 0 to 0.95
/// in steps of 0.05, plus 0.99.
fn dense_rho_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=19).map(|i| i as f64 * 0.05).collect();
    grid.push(0.99);
    grid
}

impl ExperimentConfig {
    /// Merge overrides onto the per-experiment defaults and validate.
    pub fn resolve(kind: ExperimentKind, overrides: ConfigOverrides) -> Result<Self> {
        let (rho_default, snr_default) = match kind {
            ExperimentKind::UtilityVsRho => (dense_rho_grid(), vec![0.0, 10.0, 20.0, 30.0]),
            ExperimentKind::Tradeoff => (dense_rho_grid(), vec![10.0, 20.0]),
            _ => (vec![0.1, 0.8], vec![10.0, 20.0]),
        };
        let case_path = overrides
            .case_path
            .ok_or_else(|| Error::Config("no case file given (key 'case' or --case)".into()))?;
        let output_dir = overrides
            .output_dir
            .ok_or_else(|| Error::Config("no output directory given (key 'out' or --out)".into()))?;

        let mut config = Self {
            case_path,
            rho_grid: overrides.rho_grid.unwrap_or(rho_default),
            snr_grid_db: overrides.snr_grid_db.unwrap_or(snr_default),
            k_grid: overrides
                .k_grid
                .unwrap_or_else(|| vec![30, 50, 100, 200, 500, 1000]),
            block_grid: overrides.block_grid.unwrap_or_else(|| vec![1, 2, 5, 10]),
            trials: overrides.trials.unwrap_or(100),
            alpha_target: overrides.alpha_target.unwrap_or(0.05),
            n_mc: overrides.n_mc.unwrap_or(10_000),
            seed: overrides.seed.unwrap_or(0),
            output_dir,
        };
        // Rows are keyed by grid value; sort once so scheduling never
        // affects output order.
        config
            .rho_grid
            .sort_by(|a, b| a.partial_cmp(b).expect("no NaN in rho grid"));
        config
            .snr_grid_db
            .sort_by(|a, b| a.partial_cmp(b).expect("no NaN in snr grid"));
        config.k_grid.sort_unstable();
        config.block_grid.sort_unstable();
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.rho_grid.is_empty() || self.snr_grid_db.is_empty() || self.k_grid.is_empty() {
            return Err(Error::Config("grids must be non-empty".into()));
        }
        for &rho in &self.rho_grid {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::Config(format!("rho {rho} outside [0, 1)")));
            }
        }
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.alpha_target > 0.0 && self.alpha_target < 0.5) {
            return Err(Error::Config(format!(
                "alpha {} outside (0, 0.5)",
                self.alpha_target
            )));
        }
        if self.block_grid.iter().any(|&b| b == 0) {
            return Err(Error::Config("block sizes must be at least 1".into()));
        }
        Ok(())
    }
}
