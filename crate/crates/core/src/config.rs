//! Run configuration: TOML files overlaid by command-line flags.
//!
//! A config file is a flat TOML table holding the subcommand's keys plus the
//! global keys `command`, `seed`, `out_dir` and `workers`. Flags win over the
//! file; `out_dir` falls back to `$GRAFS_OUT_DIR`, then `grafs-out`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{GrafsError, Result};
use crate::optimizer::DirectionRule;
use crate::slepian::DEFAULT_ENDPOINT_THRESHOLD;

pub const OUT_DIR_ENV: &str = "GRAFS_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "grafs-out";
const GLOBAL_KEYS: [&str; 4] = ["command", "seed", "out_dir", "workers"];

/// How many Slepian sequences enter the basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KPolicy {
    /// `K = round(2NW)` followed by the endpoint filter.
    Filtered,
    /// `K = round(2NW)`, unfiltered.
    Full,
    /// `K = ⌈f · round(2NW)⌉`, unfiltered.
    Fraction(f64),
    /// Exactly `K` sequences, unfiltered.
    Count(usize),
}

impl FromStr for KPolicy {
    type Err = GrafsError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GrafsError::Config(format!("invalid k_policy `{s}` (expected filtered, full, fraction:<f>, count:<k>)"));
        match s {
            "filtered" => Ok(KPolicy::Filtered),
            "full" => Ok(KPolicy::Full),
            _ => {
                if let Some(f) = s.strip_prefix("fraction:") {
                    let f: f64 = f.parse().map_err(|_| bad())?;
                    if !(f > 0.0 && f <= 1.0) {
                        return Err(bad());
                    }
                    Ok(KPolicy::Fraction(f))
                } else if let Some(k) = s.strip_prefix("count:") {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    if k == 0 {
                        return Err(bad());
                    }
                    Ok(KPolicy::Count(k))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl std::fmt::Display for KPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KPolicy::Filtered => write!(f, "filtered"),
            KPolicy::Full => write!(f, "full"),
            KPolicy::Fraction(x) => write!(f, "fraction:{x}"),
            KPolicy::Count(k) => write!(f, "count:{k}"),
        }
    }
}

impl Serialize for KPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for KPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    Zero,
    Uniform,
}

fn default_threshold() -> f64 {
    DEFAULT_ENDPOINT_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlepianParams {
    pub n: usize,
    pub w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub filter: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_toffoli() -> String {
    "toffoli".into()
}
fn default_k_policy() -> KPolicy {
    KPolicy::Filtered
}
fn default_alpha_bound() -> f64 {
    5.0
}
fn default_max_iters() -> usize {
    200
}
fn default_grad_tol() -> f64 {
    1e-9
}
fn default_fid_target() -> f64 {
    1.0
}
fn default_init() -> InitPolicy {
    InitPolicy::Zero
}
fn default_spread() -> f64 {
    0.1
}
fn default_memory() -> usize {
    crate::optimizer::OptimizerConfig::default().memory
}
fn default_direction() -> DirectionRule {
    DirectionRule::Lbfgs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeParams {
    #[serde(default = "default_toffoli")]
    pub system: String,
    #[serde(default = "default_toffoli")]
    pub target: String,
    pub n: usize,
    pub w: f64,
    pub tau: f64,
    #[serde(default = "default_k_policy")]
    pub k_policy: KPolicy,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_alpha_bound")]
    pub alpha_bound: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_fid_target")]
    pub fid_target: f64,
    #[serde(default = "default_init")]
    pub init: InitPolicy,
    #[serde(default = "default_spread")]
    pub init_spread: f64,
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default = "default_direction")]
    pub direction: DirectionRule,
}

fn default_samples() -> usize {
    20
}
fn default_h() -> f64 {
    1e-5
}
fn default_tol() -> f64 {
    1e-5
}
fn default_coeff_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckParams {
    #[serde(default = "default_toffoli")]
    pub system: String,
    #[serde(default = "default_toffoli")]
    pub target: String,
    pub n: usize,
    pub w: f64,
    pub tau: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Random coefficients are uniform in `[-coeff_scale, coeff_scale]`.
    #[serde(default = "default_coeff_scale")]
    pub coeff_scale: f64,
}

fn default_two_qubit() -> String {
    "two-qubit".into()
}
fn default_n_targets() -> usize {
    10
}
fn default_w_grid() -> Vec<f64> {
    vec![0.05, 0.1, 0.2]
}
fn default_f_stars() -> Vec<f64> {
    vec![0.9, 0.9999]
}
fn default_qsl_n() -> usize {
    200
}
fn default_dt_ref() -> f64 {
    crate::qsl::DEFAULT_DT_REF
}
fn default_rel_tol() -> f64 {
    0.02
}
fn default_qsl_iters() -> usize {
    300
}
fn default_restarts() -> usize {
    3
}
fn default_qsl_bound() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QslSweepParams {
    #[serde(default = "default_two_qubit")]
    pub system: String,
    /// Explicit target names; when empty, `n_targets` random perfect entanglers
    /// are drawn from the `targets` stream of the root seed.
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default = "default_n_targets")]
    pub n_targets: usize,
    #[serde(default = "default_w_grid")]
    pub w_grid: Vec<f64>,
    #[serde(default = "default_f_stars")]
    pub f_stars: Vec<f64>,
    #[serde(default = "default_qsl_n")]
    pub n: usize,
    #[serde(default = "default_dt_ref")]
    pub dt_ref: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_qsl_iters")]
    pub max_iters: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_qsl_bound")]
    pub alpha_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Slepian(SlepianParams),
    Synthesize(SynthesizeParams),
    GradCheck(GradCheckParams),
    QslSweep(QslSweepParams),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Slepian(_) => "slepian",
            Command::Synthesize(_) => "synthesize",
            Command::GradCheck(_) => "grad-check",
            Command::QslSweep(_) => "qsl-sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads (0 = library default).
    pub workers: usize,
    pub command: Command,
}

/// Flags given on the command line, as TOML values keyed like the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides(pub Table);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        if let Some(v) = value {
            let v = Value::try_from(v).map_err(|e| GrafsError::Config(format!("flag --{}: {e}", flag(key))))?;
            self.0.insert(key.to_string(), v);
        }
        Ok(())
    }
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GrafsError::Config(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| GrafsError::Config(format!("cannot parse config {}: {e}", path.display())))
}

fn deserialize<T: for<'de> Deserialize<'de>>(table: Table) -> Result<T> {
    T::deserialize(Value::Table(table)).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.trim();
        if let Some(rest) = msg.split("missing field `").nth(1) {
            let key = rest.split('`').next().unwrap_or(rest);
            GrafsError::Config(format!("missing required --{} (or `{key}` in the config file)", flag(key)))
        } else {
            GrafsError::Config(msg.to_string())
        }
    })
}

/// Merges `file` and `flags` (flags win) into a typed configuration.
pub fn resolve(command: &str, file: Option<Table>, flags: Overrides, env_out_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut table = file.unwrap_or_default();
    for (k, v) in flags.0 {
        table.insert(k, v);
    }
    if let Some(c) = table.remove("command") {
        match c.as_str() {
            Some(c) if c == command => {}
            _ => {
                return Err(GrafsError::Config(format!(
                    "config file is for command {c} but `{command}` was invoked"
                )))
            }
        }
    }
    let seed = match table.remove("seed") {
        None => 0,
        Some(Value::Integer(i)) if i >= 0 => i as u64,
        Some(v) => return Err(GrafsError::Config(format!("seed must be a non-negative integer, got {v}"))),
    };
    let workers = match table.remove("workers") {
        None => 0,
        Some(Value::Integer(i)) if i >= 0 => i as usize,
        Some(v) => return Err(GrafsError::Config(format!("workers must be a non-negative integer, got {v}"))),
    };
    let out_dir = match table.remove("out_dir") {
        Some(Value::String(s)) => PathBuf::from(s),
        Some(v) => return Err(GrafsError::Config(format!("out_dir must be a string, got {v}"))),
        None => env_out_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
    };
    let command = match command {
        "slepian" => Command::Slepian(deserialize(table)?),
        "synthesize" => Command::Synthesize(deserialize(table)?),
        "grad-check" => Command::GradCheck(deserialize(table)?),
        "qsl-sweep" => Command::QslSweep(deserialize(table)?),
        other => return Err(GrafsError::Config(format!("unknown command `{other}`"))),
    };
    let cfg = RunConfig {
        seed,
        out_dir,
        workers,
        command,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn range_err(name: &str, reason: String) -> GrafsError {
    GrafsError::Config(format!("{name} {reason}"))
}

fn check_w(w: f64) -> Result<()> {
    if !(w > 0.0 && w < 0.5) {
        return Err(range_err("w", format!("must lie in (0, 0.5), got {w}")));
    }
    Ok(())
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(range_err("n", format!("must be at least 2, got {n}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(range_err(name, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.command {
            Command::Slepian(p) => {
                check_n(p.n)?;
                check_w(p.w)?;
                if let Some(k) = p.k {
                    if k == 0 || k > p.n {
                        return Err(range_err("k", format!("must lie in [1, n], got {k}")));
                    }
                }
                if !(p.threshold > 0.0 && p.threshold < 1.0) {
                    return Err(range_err("threshold", format!("must lie in (0, 1), got {}", p.threshold)));
                }
            }
            Command::Synthesize(p) => {
                check_n(p.n)?;
                check_w(p.w)?;
                check_positive("tau", p.tau)?;
                if !(p.alpha_bound >= 0.0 && p.alpha_bound.is_finite()) {
                    return Err(range_err("alpha_bound", format!("must be finite and >= 0, got {}", p.alpha_bound)));
                }
                check_positive("grad_tol", p.grad_tol)?;
                if !(p.fid_target > 0.0 && p.fid_target <= 1.0) {
                    return Err(range_err("fid_target", format!("must lie in (0, 1], got {}", p.fid_target)));
                }
                if !(p.threshold > 0.0 && p.threshold < 1.0) {
                    return Err(range_err("threshold", format!("must lie in (0, 1), got {}", p.threshold)));
                }
                if p.memory == 0 {
                    return Err(range_err("memory", "must be at least 1".into()));
                }
            }
            Command::GradCheck(p) => {
                check_n(p.n)?;
                check_w(p.w)?;
                check_positive("tau", p.tau)?;
                check_positive("h", p.h)?;
                check_positive("tol", p.tol)?;
                check_positive("coeff_scale", p.coeff_scale)?;
                if p.samples == 0 {
                    return Err(range_err("samples", "must be at least 1".into()));
                }
            }
            Command::QslSweep(p) => {
                check_n(p.n)?;
                if p.w_grid.is_empty() {
                    return Err(range_err("w_grid", "must not be empty".into()));
                }
                for &w in &p.w_grid {
                    check_w(w)?;
                }
                if p.f_stars.is_empty() {
                    return Err(range_err("f_stars", "must not be empty".into()));
                }
                for &f in &p.f_stars {
                    if !(f > 0.0 && f < 1.0) {
                        return Err(range_err("f_stars", format!("entries must lie in (0, 1), got {f}")));
                    }
                }
                check_positive("dt_ref", p.dt_ref)?;
                check_positive("alpha_bound", p.alpha_bound)?;
                if !(p.rel_tol > 0.0 && p.rel_tol < 1.0) {
                    return Err(range_err("rel_tol", format!("must lie in (0, 1), got {}", p.rel_tol)));
                }
                if p.restarts == 0 {
                    return Err(range_err("restarts", "must be at least 1".into()));
                }
                if p.targets.is_empty() && p.n_targets == 0 {
                    return Err(range_err("n_targets", "must be at least 1 when no targets are listed".into()));
                }
            }
        }
        Ok(())
    }

    fn science_table(&self) -> Table {
        let value = match &self.command {
            Command::Slepian(p) => Value::try_from(p),
            Command::Synthesize(p) => Value::try_from(p),
            Command::GradCheck(p) => Value::try_from(p),
            Command::QslSweep(p) => Value::try_from(p),
        };
        let mut table = match value.expect("parameters serialize to TOML") {
            Value::Table(t) => t,
            _ => unreachable!("parameter structs serialize to tables"),
        };
        table.insert("command".into(), Value::String(self.command.name().into()));
        table.insert("seed".into(), Value::Integer(self.seed as i64));
        table
    }

    /// Fully resolved configuration as TOML (parses back to the same value).
    pub fn to_toml(&self) -> String {
        let mut table = self.science_table();
        table.insert("out_dir".into(), Value::String(self.out_dir.to_string_lossy().into_owned()));
        table.insert("workers".into(), Value::Integer(self.workers as i64));
        let mut out = String::new();
        for key in GLOBAL_KEYS {
            if let Some(v) = table.remove(key) {
                let mut one = Table::new();
                one.insert(key.into(), v);
                out.push_str(&toml::to_string(&one).expect("scalar TOML"));
            }
        }
        out.push_str(&toml::to_string(&table).expect("parameters serialize to TOML"));
        out
    }

    /// SHA-256 of the resolved configuration, excluding output location and
    /// worker count (neither affects numeric results).
    pub fn hash(&self) -> String {
        let text = toml::to_string(&self.science_table()).expect("parameters serialize to TOML");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
