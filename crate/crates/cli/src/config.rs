//! Run configurations. Each command's parameters are a serde + clap struct,
//! so the exact configuration of a run can be echoed into its output header
//! and parsed back. Execution-only options (thread count, output paths,
//! `--force`) do not change results and are kept out of the echo.

use std::fmt;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{CliError, CliResult, VERSION};

/// Inclusive integer range `a`, `a..b` or `a..b:step`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IntRange {
    pub start: i64,
    pub end: i64,
    pub step: i64,
}

impl IntRange {
    pub fn single(v: i64) -> Self {
        Self {
            start: v,
            end: v,
            step: 1,
        }
    }

    pub fn values(&self) -> Vec<i64> {
        (self.start..=self.end)
            .step_by(self.step as usize)
            .collect()
    }
}

impl FromStr for IntRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let int = |x: &str| {
            x.trim()
                .parse::<i64>()
                .map_err(|_| format!("bad integer {x:?} in range {s:?}"))
        };
        let (body, step) = match s.split_once(':') {
            Some((b, st)) => (b, int(st)?),
            None => (s, 1),
        };
        let (start, end) = match body.split_once("..") {
            Some((a, b)) => (int(a)?, int(b)?),
            None => {
                let v = int(body)?;
                (v, v)
            }
        };
        if step < 1 {
            return Err(format!("range step must be positive in {s:?}"));
        }
        if end < start {
            return Err(format!("range {s:?} is empty"));
        }
        Ok(Self { start, end, step })
    }
}

impl fmt::Display for IntRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{}", self.start)
        } else if self.step == 1 {
            write!(f, "{}..{}", self.start, self.end)
        } else {
            write!(f, "{}..{}:{}", self.start, self.end, self.step)
        }
    }
}

/// Comma-separated list of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct RealList(pub Vec<f64>);

impl FromStr for RealList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad number {x:?} in list {s:?}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(format!("non-finite value in {s:?}"));
        }
        Ok(Self(v))
    }
}

impl fmt::Display for RealList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| format!("{x:?}")).collect();
        f.write_str(&parts.join(","))
    }
}

macro_rules! serde_via_string {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_string!(IntRange);
serde_via_string!(RealList);

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleChoice {
    Haar,
    Design,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialChoice {
    /// |0...0> on environment and system
    Zero,
    /// maximally mixed environment, |0> on the system
    MixedEnv,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSweepConfig {
    /// System dimension
    #[arg(long, default_value_t = 2)]
    pub ds: u64,
    /// Non-Markovianity threshold(s)
    #[arg(long, default_value = "0.1")]
    pub delta: RealList,
    /// Design error(s)
    #[arg(long = "eps", default_value = "1e-12")]
    pub epsilon: RealList,
    /// Design orders
    #[arg(long, default_value = "2..10")]
    pub t: IntRange,
    /// Step counts
    #[arg(long, default_value = "0..4")]
    pub k: IntRange,
    /// Environment sizes, as log2 of the dimension
    #[arg(long = "log2-de", default_value = "10..60")]
    pub log2_de: IntRange,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSweepConfig {
    /// Qubit counts
    #[arg(long, default_value = "35..60")]
    pub n: IntRange,
    /// Design orders
    #[arg(long, default_value = "10")]
    pub t: IntRange,
    /// Design error(s)
    #[arg(long = "eps", default_value = "1e-12")]
    pub epsilon: RealList,
    /// System dimension used for the bound column (power of two)
    #[arg(long, default_value_t = 2)]
    pub ds: u64,
    /// Step count used for the bound column
    #[arg(long, default_value_t = 2)]
    pub k: u32,
    /// Threshold used for the bound column
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleArgs {
    #[arg(long, value_enum, default_value_t = EnsembleChoice::Haar)]
    pub ensemble: EnsembleChoice,
    /// log2 of the environment dimension (haar; derived from --n for design)
    #[arg(long = "log2-de")]
    pub log2_de: Option<u32>,
    /// System dimension
    #[arg(long, default_value_t = 2)]
    pub ds: u64,
    /// Number of intervention steps
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Base seed; sample i uses stream (seed, i)
    #[arg(long, env = "NMARKOV_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Total qubits of the design circuit
    #[arg(long)]
    pub n: Option<usize>,
    /// Design order
    #[arg(long, default_value_t = 2)]
    pub t: u32,
    /// Design error
    #[arg(long = "eps", default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Circuit repetitions (default: the minimum for t, eps, n)
    #[arg(long)]
    pub ell: Option<usize>,
    #[arg(long, value_enum, default_value_t = InitialChoice::Zero)]
    pub initial: InitialChoice,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Thresholds for the tail estimates in the summary
    #[arg(long, default_value = "0.05,0.1")]
    pub deltas: RealList,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessDumpConfig {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Which sample of the ensemble to dump
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateConfig {
    /// Run only the named criteria (repeatable)
    #[arg(long)]
    pub only: Vec<String>,
    /// Corrupt one circuit phase so the unitarity checks must fail
    #[arg(long)]
    pub corrupt_phase: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    BoundSweep(BoundSweepConfig),
    DepthSweep(DepthSweepConfig),
    Sample(SampleConfig),
    Validate(ValidateConfig),
    ProcessDump(ProcessDumpConfig),
}

#[derive(Args, Clone, Debug, Default)]
pub struct ExecArgs {
    /// Worker threads
    #[arg(long, env = "NMARKOV_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Output file (default: standard output)
    #[arg(long, short)]
    pub output: Option<std::path::PathBuf>,
}

#[derive(Parser, Debug)]
#[command(
    name = "nmarkov",
    version,
    about = "Memory effects of random open quantum dynamics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tail bound for design-generated processes over a parameter grid
    BoundSweep {
        #[command(flatten)]
        config: BoundSweepConfig,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Repetition count, depth and gate count of the design circuit
    DepthSweep {
        #[command(flatten)]
        config: DepthSweepConfig,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Sample an ensemble of processes and record their measures
    Sample {
        #[command(flatten)]
        config: SampleConfig,
        #[command(flatten)]
        exec: ExecArgs,
        /// Summary JSON file
        #[arg(long)]
        summary: Option<std::path::PathBuf>,
        /// Lift the dense-size cap
        #[arg(long)]
        force: bool,
    },
    /// Run the validation suite
    Validate {
        #[command(flatten)]
        config: ValidateConfig,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Write one sampled process Choi state in text form
    ProcessDump {
        #[command(flatten)]
        config: ProcessDumpConfig,
        #[command(flatten)]
        exec: ExecArgs,
        /// Lift the dense-size cap
        #[arg(long)]
        force: bool,
    },
}

const CONFIG_PREFIX: &str = "# config ";

/// Comment lines that open every output file.
pub fn header_lines(config: &RunConfig) -> String {
    format!(
        "# nmarkov {VERSION}\n{CONFIG_PREFIX}{}\n",
        serde_json::to_string(config).expect("config serializes")
    )
}

/// Recovers the configuration embedded in an output file's header.
pub fn parse_header(text: &str) -> CliResult<RunConfig> {
    let line = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(CONFIG_PREFIX))
        .ok_or_else(|| CliError::Usage("no config line in header".into()))?;
    serde_json::from_str(line).map_err(|e| CliError::Usage(format!("bad config line: {e}")))
}
