//! The `ergodic-lab` command line: config parsing, parameter validation and
//! dispatch to the library.
//!
//! Every action takes `--key value` parameters checked against a per-action
//! table. A JSON config file (`--config`) holds the same fields as the echoed
//! [`RunConfig`]; flags override the file.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{self, CalibrationConstants, Constant, PacRequest};
use crate::error::Error;
use crate::exec::{self, SimOptions};
use crate::functionals::TestFunction;
use crate::lab;
use crate::langevin::{self, Potential, UlaPacConfig, UlaPlan};
use crate::lasso::{self, LassoPipeline};
use crate::output::{fmt_num, render_json, write_atomic, CsvTable};
use crate::sde::{self, DiffusionModel, StationaryMethod};

pub const SEED_ENV: &str = "ERGODIC_LAB_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Simulate,
    Potential,
    Bounds,
    ConcLab,
    Lasso,
    Ula,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Potential => "potential",
            CommandKind::Bounds => "bounds",
            CommandKind::ConcLab => "conc-lab",
            CommandKind::Lasso => "lasso",
            CommandKind::Ula => "ula",
        }
    }
}

/// A fully validated invocation. Serializing it gives the config echo that
/// every artifact embeds; parsing that echo yields the same value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub threads: usize,
}

/// Failures before or during dispatch, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// `--help` or `--version` output.
    #[error("{0}")]
    Info(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 2,
            CliError::Run(Error::Argument(_) | Error::UnsupportedMethod(_)) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "ergodic-lab", version, about = "Simulation and concentration tooling for ergodic diffusions")]
struct Cli {
    /// Master seed (falls back to ERGODIC_LAB_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; results go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads, 0 for automatic.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file with the same fields as the echoed config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate an Euler-Maruyama path and write its states.
    Simulate {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        params: Vec<String>,
    },
    /// Check a potential's radial condition and gradient.
    Potential {
        #[arg(value_parser = ["check"])]
        action: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        params: Vec<String>,
    },
    /// Closed-form exponents, sample sizes and tuning rules.
    Bounds {
        #[arg(value_parser = BOUNDS_ACTIONS)]
        action: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        params: Vec<String>,
    },
    /// Tail tables, calibration, moments and PAC coverage runs.
    ConcLab {
        #[arg(value_parser = ["tails", "calibrate", "moments", "coverage"])]
        action: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        params: Vec<String>,
    },
    /// l1-penalized drift estimation.
    Lasso {
        #[arg(value_parser = ["fit", "probe-re", "oracle"])]
        action: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        params: Vec<String>,
    },
    /// Unadjusted Langevin chains, estimates and PAC experiments.
    Ula {
        #[arg(value_parser = ["run", "estimate", "pac", "tune"])]
        action: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        params: Vec<String>,
    },
}

const BOUNDS_ACTIONS: [&str; 11] =
    ["rate", "c", "psi-cont", "psi-disc", "phi", "kappa", "t0", "lambda-min", "ula-tune", "ula-tv", "mu-const"];

#[derive(Clone, Copy, Debug)]
enum Kind {
    /// Closed or open bounds: `(lo, lo_open, hi, hi_open)`.
    Float(f64, bool, f64, bool),
    Int(i64, i64),
    FloatList,
    IntList,
    Choice(&'static [&'static str]),
}

#[derive(Clone, Copy, Debug)]
enum Def {
    Required,
    Optional,
    F(f64),
    I(i64),
    S(&'static str),
    FL(&'static [f64]),
    IL(&'static [i64]),
}

#[derive(Clone, Copy, Debug)]
struct ParamSpec {
    key: &'static str,
    kind: Kind,
    def: Def,
}

const INF: f64 = f64::INFINITY;

const fn p(key: &'static str, kind: Kind, def: Def) -> ParamSpec {
    ParamSpec { key, kind, def }
}

const POS: Kind = Kind::Float(0.0, true, INF, false);
const NONNEG: Kind = Kind::Float(0.0, false, INF, false);
const Q: Kind = Kind::Float(-1.0, false, 1.0, true);
const UNIT_OPEN: Kind = Kind::Float(0.0, true, 1.0, true);
const COUNT: Kind = Kind::Int(1, i64::MAX);
const INDEX: Kind = Kind::Int(0, i64::MAX);

const CONSTS: [ParamSpec; 8] = [
    p("w_frak", POS, Def::F(1.0)),
    p("d_frak", POS, Def::F(1.0)),
    p("c_frak", POS, Def::F(1.0)),
    p("c_burnin", POS, Def::F(1.0)),
    p("c_small", POS, Def::F(1.0)),
    p("iota_dd", POS, Def::F(1.0)),
    p("d_inf", POS, Def::F(1.0)),
    p("e_inf", POS, Def::F(1.0)),
];

const MODEL: [ParamSpec; 5] = [
    p("model", Kind::Choice(&["ou", "diag"]), Def::S("ou")),
    p("dim", Kind::Int(1, 64), Def::I(1)),
    p("theta", POS, Def::F(1.0)),
    p("sigma", POS, Def::F(SQRT_2)),
    p("diag", Kind::FloatList, Def::Optional),
];

const POTENTIAL: [ParamSpec; 5] = [
    p("potential", Kind::Choice(&["heavy", "gaussian", "flat"]), Def::S("heavy")),
    p("dim", Kind::Int(1, 64), Def::I(1)),
    p("q", UNIT_OPEN, Def::F(0.5)),
    p("scale", POS, Def::F(1.0)),
    p("strength", POS, Def::F(1.0)),
];

const FUNCS: &[&str] = &["x", "sqnorm"];

const TAILS: [ParamSpec; 7] = [
    p("f", Kind::Choice(FUNCS), Def::S("x")),
    p("t", POS, Def::F(100.0)),
    p("replicates", Kind::Int(100, i64::MAX), Def::I(1000)),
    p("thresholds", Kind::FloatList, Def::FL(&[0.5, 1.0, 2.0, 3.0, 4.0])),
    p("step", POS, Def::F(sde::DEFAULT_STEP)),
    p("init", Kind::Choice(&["exact", "burnin"]), Def::S("exact")),
    p("burn_in", NONNEG, Def::Optional),
];

const LASSO: [ParamSpec; 9] = [
    p("diag", Kind::FloatList, Def::FL(&[-1.0, -1.5, -1.0, -2.0, -1.2])),
    p("t", POS, Def::F(200.0)),
    p("step", POS, Def::F(sde::DEFAULT_STEP)),
    p("burn_in", NONNEG, Def::F(20.0)),
    p("lambda", NONNEG, Def::Optional),
    p("eps0", POS, Def::F(0.1)),
    p("pilot_t", POS, Def::F(1000.0)),
    p("tol", POS, Def::F(lasso::DEFAULT_TOL)),
    p("max_sweeps", COUNT, Def::I(lasso::DEFAULT_MAX_SWEEPS as i64)),
];

fn action_specs(cmd: CommandKind, action: Option<&str>) -> CliResult<Vec<ParamSpec>> {
    use CommandKind::*;
    let v = |parts: &[&[ParamSpec]]| parts.iter().flat_map(|s| s.iter().copied()).collect::<Vec<_>>();
    let req = |k: &'static str, kind: Kind| p(k, kind, Def::Required);
    let eps_delta = [req("epsilon", POS), req("delta", UNIT_OPEN)];
    let disc = [req("eta1", NONNEG), req("q", Q), req("q_prime", NONNEG), req("eta2", NONNEG), req("eta3", NONNEG)];
    let param_specs = match (cmd, action) {
        (Simulate, None) => v(&[
            &MODEL,
            &[
                p("x0", Kind::FloatList, Def::Optional),
                p("step", POS, Def::F(sde::DEFAULT_STEP)),
                p("n_steps", COUNT, Def::I(1000)),
                p("stride", COUNT, Def::I(1)),
                p("replicate", INDEX, Def::I(0)),
            ],
        ]),
        (Potential, Some("check")) => v(&[
            &POTENTIAL,
            &[p("radii", Kind::FloatList, Def::Optional), p("directions", COUNT, Def::I(16))],
        ]),
        (Bounds, Some("rate")) => vec![req("eta", NONNEG), req("q", Q), req("q_prime", NONNEG)],
        (Bounds, Some("c")) => vec![req("q", Q), req("iota_dd", POS)],
        (Bounds, Some("psi-cont")) => v(&[
            &eps_delta,
            &[req("eta", NONNEG), req("q", Q), req("q_prime", NONNEG), req("l_frak", POS)],
            &CONSTS,
        ]),
        (Bounds, Some("psi-disc")) => v(&[&eps_delta, &[req("step", POS)], &disc, &CONSTS]),
        (Bounds, Some("phi")) => {
            v(&[&[req("n", POS), req("step", POS), req("p", Kind::Float(1.0, false, INF, false))], &disc, &CONSTS])
        }
        (Bounds, Some("kappa")) => vec![req("q", Q), req("eta", NONNEG)],
        (Bounds, Some("t0")) => vec![
            req("eps0", POS),
            req("s", COUNT),
            req("c0", NONNEG),
            req("c", POS),
            req("q", Q),
            req("eta", NONNEG),
            req("d", COUNT),
            req("e_inf", POS),
        ],
        (Bounds, Some("lambda-min")) => {
            vec![req("t", POS), req("n_basis", COUNT), req("eps0", POS), req("d_inf", POS), req("e_inf", POS)]
        }
        (Bounds, Some("ula-tune")) => v(&[
            &eps_delta,
            &[
                req("q", UNIT_OPEN),
                req("eta1", NONNEG),
                req("eta2", NONNEG),
                req("eta3", NONNEG),
                req("d", COUNT),
                req("l_lip", NONNEG),
                req("grad_sup", NONNEG),
            ],
            &CONSTS,
        ]),
        (Bounds, Some("ula-tv")) => v(&[
            &[
                req("n", NONNEG),
                req("step", POS),
                req("nu_vq", Kind::Float(1.0, false, INF, false)),
                req("q", Kind::Float(-1.0, true, 1.0, true)),
                req("d", COUNT),
                req("l_lip", NONNEG),
                req("grad_sup", NONNEG),
            ],
            &CONSTS,
        ]),
        (Bounds, Some("mu-const")) => vec![req("q", Q), req("iota", POS), req("v_expectation", POS)],
        (ConcLab, Some("tails")) => v(&[&MODEL, &TAILS]),
        (ConcLab, Some("calibrate")) => v(&[
            &MODEL,
            &TAILS,
            &[
                p("u_grid", Kind::FloatList, Def::FL(&[2.0, 2.5, 3.0])),
                p("l_frak", POS, Def::Optional),
                p("sigma_tilde", POS, Def::Optional),
                p("tail_scale", NONNEG, Def::F(1.0)),
            ],
        ]),
        (ConcLab, Some("moments")) => v(&[&MODEL, &TAILS, &[p("p_list", Kind::IntList, Def::IL(&[1, 2, 4]))]]),
        (ConcLab, Some("coverage")) => v(&[
            &MODEL,
            &[
                p("f", Kind::Choice(FUNCS), Def::S("sqnorm")),
                p("x0", Kind::FloatList, Def::Optional),
                p("v", NONNEG, Def::F(10.0)),
                p("t", POS, Def::F(100.0)),
                p("epsilon", POS, Def::F(0.05)),
                p("delta", UNIT_OPEN, Def::F(0.05)),
                p("runs", Kind::Int(20, i64::MAX), Def::I(100)),
                p("target", Kind::Float(-INF, true, INF, true), Def::Optional),
                p("step", POS, Def::F(sde::DEFAULT_STEP)),
            ],
        ]),
        (Lasso, Some("fit")) => v(&[&LASSO, &[p("replicate", INDEX, Def::I(0))]]),
        (Lasso, Some("probe-re")) => v(&[
            &LASSO,
            &[
                p("replicate", INDEX, Def::I(0)),
                p("s", COUNT, Def::I(3)),
                p("c0", NONNEG, Def::F(1.0)),
                p("n_probe", Kind::Int(100, i64::MAX), Def::I(1000)),
            ],
        ]),
        (Lasso, Some("oracle")) => v(&[&LASSO, &[p("replicates", COUNT, Def::I(10))]]),
        (Ula, Some("run")) => v(&[
            &POTENTIAL,
            &[
                p("step", POS, Def::F(0.01)),
                p("n_steps", COUNT, Def::I(1000)),
                p("x0", Kind::FloatList, Def::Optional),
                p("replicate", INDEX, Def::I(0)),
            ],
        ]),
        (Ula, Some("estimate")) => v(&[
            &POTENTIAL,
            &[
                p("f", Kind::Choice(FUNCS), Def::S("sqnorm")),
                p("step", POS, Def::F(0.01)),
                p("m", INDEX, Def::I(1000)),
                p("n", COUNT, Def::I(10_000)),
                p("x0", Kind::FloatList, Def::Optional),
                p("replicate", INDEX, Def::I(0)),
            ],
        ]),
        (Ula, Some("pac")) => v(&[
            &POTENTIAL,
            &[
                p("f", Kind::Choice(FUNCS), Def::S("sqnorm")),
                p("epsilon", POS, Def::F(0.1)),
                p("delta", UNIT_OPEN, Def::F(0.05)),
                p("runs", Kind::Int(20, i64::MAX), Def::I(100)),
                p("override_step", POS, Def::Optional),
                p("override_n", COUNT, Def::Optional),
                p("override_m", INDEX, Def::Optional),
                p("max_steps", POS, Def::F(1e9)),
                p("half_width", POS, Def::Optional),
                p("nodes", Kind::Int(3, 1_000_001), Def::I(4001)),
            ],
            &CONSTS,
        ]),
        (Ula, Some("tune")) => v(&[
            &POTENTIAL,
            &[
                p("f", Kind::Choice(FUNCS), Def::S("sqnorm")),
                p("epsilon", POS, Def::F(0.1)),
                p("delta", UNIT_OPEN, Def::F(0.05)),
            ],
            &CONSTS,
        ]),
        (c, a) => return Err(usage(format!("unknown action {:?} for command {}", a.unwrap_or(""), c.name()))),
    };
    Ok(param_specs)
}

fn parse_scalar(param: &ParamSpec, raw: &str) -> CliResult<Value> {
    let bad = |what: &str| usage(format!("parameter '{}': cannot parse '{raw}' as {what}", param.key));
    Ok(match param.kind {
        Kind::Float(..) => json!(raw.trim().parse::<f64>().map_err(|_| bad("a number"))?),
        Kind::Int(..) => json!(raw.trim().parse::<i64>().map_err(|_| bad("an integer"))?),
        Kind::FloatList => Value::Array(
            raw.split(',')
                .map(|s| s.trim().parse::<f64>().map(|v| json!(v)).map_err(|_| bad("a comma-separated list of numbers")))
                .collect::<CliResult<_>>()?,
        ),
        Kind::IntList => Value::Array(
            raw.split(',')
                .map(|s| s.trim().parse::<i64>().map(|v| json!(v)).map_err(|_| bad("a comma-separated list of integers")))
                .collect::<CliResult<_>>()?,
        ),
        Kind::Choice(_) => json!(raw),
    })
}

fn check_value(param: &ParamSpec, v: &Value) -> CliResult<()> {
    let key = param.key;
    let range_f = |x: f64, lo: f64, lo_open: bool, hi: f64, hi_open: bool| -> CliResult<()> {
        let ok = x.is_finite() && (if lo_open { x > lo } else { x >= lo }) && (if hi_open { x < hi } else { x <= hi });
        if ok {
            Ok(())
        } else {
            Err(usage(format!(
                "parameter '{key}' = {x} out of range {}{lo}, {hi}{}",
                if lo_open { "(" } else { "[" },
                if hi_open { ")" } else { "]" }
            )))
        }
    };
    let mismatch = |what: &str| usage(format!("parameter '{key}' must be {what}, got {v}"));
    match param.kind {
        Kind::Float(lo, lo_open, hi, hi_open) => range_f(v.as_f64().ok_or_else(|| mismatch("a number"))?, lo, lo_open, hi, hi_open),
        Kind::Int(lo, hi) => {
            let x = v.as_i64().ok_or_else(|| mismatch("an integer"))?;
            if x < lo || x > hi {
                return Err(usage(format!("parameter '{key}' = {x} out of range [{lo}, {hi}]")));
            }
            Ok(())
        }
        Kind::FloatList => {
            let a = v.as_array().ok_or_else(|| mismatch("a list of numbers"))?;
            if a.is_empty() || a.iter().any(|x| !x.as_f64().is_some_and(f64::is_finite)) {
                return Err(mismatch("a nonempty list of finite numbers"));
            }
            Ok(())
        }
        Kind::IntList => {
            let a = v.as_array().ok_or_else(|| mismatch("a list of integers"))?;
            if a.is_empty() || a.iter().any(|x| !x.as_i64().is_some_and(|i| i >= 1)) {
                return Err(mismatch("a nonempty list of positive integers"));
            }
            Ok(())
        }
        Kind::Choice(options) => {
            let s = v.as_str().ok_or_else(|| mismatch("a string"))?;
            if !options.contains(&s) {
                return Err(usage(format!("parameter '{key}' = '{s}' is not one of {}", options.join(", "))));
            }
            Ok(())
        }
    }
}

fn default_value(def: Def) -> Option<Value> {
    match def {
        Def::Required | Def::Optional => None,
        Def::F(x) => Some(json!(x)),
        Def::I(x) => Some(json!(x)),
        Def::S(s) => Some(json!(s)),
        Def::FL(a) => Some(json!(a)),
        Def::IL(a) => Some(json!(a)),
    }
}

/// Checks keys, types and ranges, and fills defaults.
fn validate_params(cmd: CommandKind, action: Option<&str>, params: &mut BTreeMap<String, Value>) -> CliResult<()> {
    let param_specs = action_specs(cmd, action)?;
    for key in params.keys() {
        if !param_specs.iter().any(|s| s.key == key) {
            let known: Vec<&str> = param_specs.iter().map(|s| s.key).collect();
            return Err(usage(format!("unknown parameter '{key}' (expected one of: {})", known.join(", "))));
        }
    }
    for param in &param_specs {
        match params.get(param.key) {
            Some(v) => check_value(param, v)?,
            None => match (param.def, default_value(param.def)) {
                (Def::Required, _) => return Err(usage(format!("missing required parameter '{}'", param.key))),
                (_, Some(v)) => {
                    params.insert(param.key.to_string(), v);
                }
                _ => {}
            },
        }
    }
    Ok(())
}

/// Splits `--key value` / `--key=value` pairs. Global flags found among them
/// are returned separately.
fn split_pairs(args: &[String]) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| usage(format!("expected a --key, got '{a}'")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.replace('-', "_"), v.to_string()));
        } else {
            let v = it.next().ok_or_else(|| usage(format!("parameter '{key}' needs a value")))?;
            out.push((key.replace('-', "_"), v.clone()));
        }
    }
    Ok(out)
}

fn read_config_file(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Parses argv (without the program name) into a validated config.
pub fn parse_config<I, S>(args: I) -> CliResult<RunConfig>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = std::iter::once("ergodic-lab".to_string()).chain(args.into_iter().map(Into::into)).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp
        | clap::error::ErrorKind::DisplayVersion
        | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => CliError::Info(e.render().to_string()),
        _ => usage(e.render().to_string().trim_start_matches("error: ").trim_end().to_string()),
    })?;
    let file = cli.config.as_deref().map(read_config_file).transpose()?;
    let (cmd, action, raw) = match cli.command {
        Some(Cmd::Simulate { params }) => (Some(CommandKind::Simulate), None, params),
        Some(Cmd::Potential { action, params }) => (Some(CommandKind::Potential), Some(action), params),
        Some(Cmd::Bounds { action, params }) => (Some(CommandKind::Bounds), Some(action), params),
        Some(Cmd::ConcLab { action, params }) => (Some(CommandKind::ConcLab), Some(action), params),
        Some(Cmd::Lasso { action, params }) => (Some(CommandKind::Lasso), Some(action), params),
        Some(Cmd::Ula { action, params }) => (Some(CommandKind::Ula), Some(action), params),
        None => (None, None, Vec::new()),
    };
    let mut seed = cli.seed;
    let mut out = cli.out.map(|p| p.to_string_lossy().into_owned());
    let mut format = cli.format;
    let mut threads = cli.threads;
    let mut flag_params = BTreeMap::new();
    for (k, v) in split_pairs(&raw)? {
        let bad = |what: &str| usage(format!("flag '--{k}' needs {what}, got '{v}'"));
        match k.as_str() {
            "seed" => seed = Some(v.parse().map_err(|_| bad("an unsigned integer"))?),
            "out" => out = Some(v.clone()),
            "format" => format = Some(Format::from_str(&v, true).map_err(|_| bad("csv or json"))?),
            "threads" => threads = Some(v.parse().map_err(|_| bad("an unsigned integer"))?),
            "config" => return Err(usage("--config must come before the command")),
            _ => {
                flag_params.insert(k, v);
            }
        }
    }
    let command = match (cmd, &file) {
        (Some(c), _) => c,
        (None, Some(f)) => f.command,
        (None, None) => return Err(usage("no command given (try --help)")),
    };
    let action = match (action, &file) {
        (Some(a), _) => Some(a),
        (None, Some(f)) if f.command == command => f.action.clone(),
        _ => None,
    };
    let mut params = match &file {
        Some(f) if f.command == command && f.action == action => f.params.clone(),
        _ => BTreeMap::new(),
    };
    let param_specs = action_specs(command, action.as_deref())?;
    for (k, raw) in flag_params {
        let param = param_specs.iter().find(|s| s.key == k).ok_or_else(|| {
            let known: Vec<&str> = param_specs.iter().map(|s| s.key).collect();
            usage(format!("unknown parameter '{k}' (expected one of: {})", known.join(", ")))
        })?;
        params.insert(k, parse_scalar(param, &raw)?);
    }
    validate_params(command, action.as_deref(), &mut params)?;
    let env_seed = || -> CliResult<Option<u64>> {
        match std::env::var(SEED_ENV) {
            Ok(s) => s.trim().parse().map(Some).map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got '{s}'"))),
            Err(_) => Ok(None),
        }
    };
    let seed = match (seed, &file) {
        (Some(s), _) => s,
        (None, Some(f)) => f.seed,
        (None, None) => env_seed()?.unwrap_or(0),
    };
    Ok(RunConfig {
        command,
        action,
        params,
        seed,
        output_path: out.or_else(|| file.as_ref().and_then(|f| f.output_path.clone())),
        format: format.or(file.as_ref().map(|f| f.format)).unwrap_or_default(),
        threads: threads.or(file.as_ref().map(|f| f.threads)).unwrap_or(0),
    })
}

/// Typed access to validated parameters.
struct Params<'a>(&'a BTreeMap<String, Value>);

impl Params<'_> {
    fn f(&self, k: &str) -> f64 {
        self.opt_f(k).unwrap_or_else(|| panic!("parameter {k} validated but missing"))
    }

    fn opt_f(&self, k: &str) -> Option<f64> {
        self.0.get(k).and_then(Value::as_f64)
    }

    fn u(&self, k: &str) -> usize {
        self.opt_u(k).unwrap_or_else(|| panic!("parameter {k} validated but missing"))
    }

    fn opt_u(&self, k: &str) -> Option<usize> {
        self.0.get(k).and_then(Value::as_i64).map(|v| v as usize)
    }

    fn s(&self, k: &str) -> &str {
        self.0.get(k).and_then(Value::as_str).unwrap_or_else(|| panic!("parameter {k} validated but missing"))
    }

    fn opt_fl(&self, k: &str) -> Option<Vec<f64>> {
        self.0.get(k).and_then(Value::as_array).map(|a| a.iter().filter_map(Value::as_f64).collect())
    }

    fn fl(&self, k: &str) -> Vec<f64> {
        self.opt_fl(k).unwrap_or_else(|| panic!("parameter {k} validated but missing"))
    }

    fn il(&self, k: &str) -> Vec<u32> {
        self.0.get(k).and_then(Value::as_array).map(|a| a.iter().filter_map(Value::as_i64).map(|v| v as u32).collect()).unwrap_or_default()
    }

    fn consts(&self) -> CalibrationConstants {
        let c = |k: &str| Constant::default_value(self.opt_f(k).unwrap_or(1.0));
        CalibrationConstants {
            w_frak: c("w_frak"),
            d_frak: c("d_frak"),
            c_frak: c("c_frak"),
            c_burnin: c("c_burnin"),
            c_small: c("c_small"),
            iota_dd: c("iota_dd"),
            d_inf: c("d_inf"),
            e_inf: c("e_inf"),
        }
    }

    fn req(&self) -> crate::Result<PacRequest> {
        PacRequest::new(self.f("epsilon"), self.f("delta"))
    }

    fn x0(&self, dim: usize) -> crate::Result<Vec<f64>> {
        match self.opt_fl("x0") {
            None => Ok(vec![0.0; dim]),
            Some(v) if v.len() == 1 => Ok(vec![v[0]; dim]),
            Some(v) if v.len() == dim => Ok(v),
            Some(v) => Err(Error::Argument(format!("x0 has {} entries, expected 1 or {dim}", v.len()))),
        }
    }
}

/// What an action produces: a JSON result, a CSV table and, for bounds, a
/// one-line headline for stdout.
struct Artifact {
    json: Value,
    csv: CsvTable,
    headline: Option<String>,
}

fn scalar_artifact(name: &str, value: f64, extra: Value) -> Artifact {
    let mut json = json!({ name: value });
    if let (Value::Object(m), Value::Object(e)) = (&mut json, extra) {
        m.extend(e);
    }
    Artifact {
        json,
        csv: CsvTable::new(&["quantity", "value"], vec![vec![name.to_string(), fmt_num(value)]]),
        headline: Some(format!("{value:.10}")),
    }
}

fn model_from(p: &Params) -> crate::Result<DiffusionModel> {
    match p.s("model") {
        "ou" => DiffusionModel::ornstein_uhlenbeck(p.u("dim"), p.f("theta"), p.f("sigma")),
        "diag" => {
            let diag = p.opt_fl("diag").ok_or_else(|| Error::Argument("model 'diag' needs --diag".into()))?;
            Ok(LassoPipeline::diagonal_linear(&diag)?.model)
        }
        other => Err(Error::Argument(format!("unknown model '{other}'"))),
    }
}

/// Registry of observables. On the Ornstein-Uhlenbeck model the invariant
/// mean is attached so no plug-in run is needed.
fn function_from(name: &str, model: Option<&DiffusionModel>) -> crate::Result<TestFunction> {
    let ou = model.filter(|m| m.name == "ou").map(|m| {
        let theta = m.ergodicity.r_frak;
        let s2 = m.ergodicity.lambda_plus;
        (m.dim as f64, s2 / (2.0 * theta))
    });
    match name {
        "x" => Ok(match ou {
            Some(_) => TestFunction::coordinate(0).with_centered_mean(0.0),
            None => TestFunction::coordinate(0),
        }),
        "sqnorm" => Ok(match ou {
            Some((d, v)) => TestFunction::squared_norm().with_centered_mean(d * v),
            None => TestFunction::squared_norm(),
        }),
        other => Err(Error::Argument(format!("unknown test function '{other}'"))),
    }
}

fn potential_from(p: &Params) -> crate::Result<Potential> {
    langevin::potential_by_name(p.s("potential"), p.u("dim"), p.f("q"), p.f("scale"), p.f("strength"))
}

fn run_simulate(p: &Params, seed: u64) -> crate::Result<Artifact> {
    let model = model_from(p)?;
    let x0 = p.x0(model.dim)?;
    let traj = sde::euler_maruyama(&model, &x0, p.f("step"), p.u("n_steps"), seed, p.u("replicate") as u64)?;
    let stride = p.u("stride");
    let mut cols = vec!["step".to_string(), "time".to_string()];
    cols.extend((0..model.dim).map(|i| format!("x{i}")));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..traj.len())
        .step_by(stride)
        .map(|k| {
            let mut r = vec![k.to_string(), fmt_num(traj.time(k))];
            r.extend(traj.state(k).iter().map(|v| fmt_num(*v)));
            r
        })
        .collect();
    let states: Vec<&[f64]> = (0..traj.len()).step_by(stride).map(|k| traj.state(k)).collect();
    Ok(Artifact {
        json: json!({ "step": traj.step, "stride": stride, "states": states }),
        csv: CsvTable::new(&cols, rows),
        headline: None,
    })
}

fn report_rows(rows: &[(&str, &sde::ConditionReport)]) -> CsvTable {
    CsvTable::new(
        &["check", "holds", "worst_margin"],
        rows.iter().map(|(n, r)| vec![n.to_string(), r.holds.to_string(), fmt_num(r.worst_margin)]).collect(),
    )
}

fn run_potential(p: &Params) -> crate::Result<Artifact> {
    let pot = potential_from(p)?;
    let radii = p.opt_fl("radii").unwrap_or_else(|| {
        let m = pot.m0.max(1e-3);
        vec![m, 2.0 * m, 10.0 * m, 100.0 * m, 1e3 * m]
    });
    let dirs = p.u("directions");
    let cond = pot.check_condition(&radii, dirs)?;
    let grad = pot.check_gradient(&radii, dirs)?;
    Ok(Artifact {
        json: json!({
            "potential": pot.name,
            "q": pot.q,
            "l_lip": pot.l_lip,
            "grad_sup": pot.grad_sup,
            "m0": pot.m0,
            "r_frak": pot.r_frak,
            "radial_condition": cond,
            "gradient_check": grad,
        }),
        csv: report_rows(&[("radial_condition", &cond), ("gradient_check", &grad)]),
        headline: None,
    })
}

fn run_bounds(action: &str, p: &Params) -> crate::Result<Artifact> {
    Ok(match action {
        "rate" => scalar_artifact("rate", bounds::rate_exponent(p.f("eta"), p.f("q"), p.f("q_prime")), json!({})),
        "c" => scalar_artifact("c", bounds::cattiaux_c(p.f("q"), p.f("iota_dd"))?, json!({})),
        "psi-cont" => {
            let v = bounds::sample_length_continuous(&p.req()?, p.f("eta"), p.f("q"), p.f("q_prime"), p.f("l_frak"), &p.consts())?;
            scalar_artifact("psi", v, json!({}))
        }
        "psi-disc" => {
            let (n, choice) = bounds::sample_size_discrete(
                &p.req()?,
                p.f("step"),
                p.f("eta1"),
                p.f("q"),
                p.f("q_prime"),
                p.f("eta2"),
                p.f("eta3"),
                &p.consts(),
            )?;
            scalar_artifact("n_min", n, json!({ "choice": choice }))
        }
        "phi" => {
            let choice = bounds::choose_discrete_exponents(p.f("q"), p.f("q_prime"), p.f("eta1"), p.f("eta2"), p.f("eta3"))?;
            let v = bounds::discrete_moment_bound(p.f("n"), p.f("step"), p.f("p"), &p.consts(), &choice)?;
            scalar_artifact("phi", v, json!({ "choice": choice }))
        }
        "kappa" => scalar_artifact("kappa", bounds::kappa(p.f("q"), p.f("eta"))?, json!({})),
        "t0" => {
            let v = bounds::lasso_t0(p.f("eps0"), p.u("s"), p.f("c0"), p.f("c"), p.f("q"), p.f("eta"), p.u("d"), p.f("e_inf"))?;
            scalar_artifact("t0", v, json!({}))
        }
        "lambda-min" => {
            let v = bounds::lasso_lambda_min(p.f("t"), p.u("n_basis"), p.f("eps0"), p.f("d_inf"), p.f("e_inf"))?;
            scalar_artifact("lambda_min", v, json!({}))
        }
        "ula-tune" => {
            let t = bounds::ula_tuning(
                &p.req()?,
                p.f("q"),
                p.f("eta1"),
                p.f("eta2"),
                p.f("eta3"),
                p.u("d"),
                p.f("l_lip"),
                p.f("grad_sup"),
                &p.consts(),
            )?;
            tuning_artifact(&t)
        }
        "ula-tv" => {
            let v = bounds::ula_tv_bound(
                p.f("n"),
                p.f("step"),
                p.f("nu_vq"),
                p.f("q"),
                p.u("d"),
                p.f("l_lip"),
                p.f("grad_sup"),
                &p.consts(),
            )?;
            scalar_artifact("tv", v, json!({}))
        }
        "mu-const" => scalar_artifact("c_mu", bounds::mu_moment_constant(p.f("q"), p.f("iota"), p.f("v_expectation"))?, json!({})),
        other => return Err(Error::UnsupportedMethod(format!("bounds {other}"))),
    })
}

fn tuning_artifact(t: &bounds::UlaTuning) -> Artifact {
    Artifact {
        json: serde_json::to_value(t).expect("tuning serializes"),
        csv: CsvTable::new(
            &["quantity", "value"],
            vec![
                vec!["delta_step".into(), fmt_num(t.delta_step)],
                vec!["n".into(), fmt_num(t.n)],
                vec!["m".into(), fmt_num(t.m)],
            ],
        ),
        headline: Some(format!("{:.10} {:.10} {:.10}", t.delta_step, t.n, t.m)),
    }
}

fn tail_setup(p: &Params) -> crate::Result<(DiffusionModel, TestFunction, StationaryMethod, SimOptions)> {
    let model = model_from(p)?;
    let f = function_from(p.s("f"), Some(&model))?;
    let init = match (p.s("init"), p.opt_f("burn_in")) {
        ("exact", _) => StationaryMethod::Exact,
        (_, Some(t_burn)) => StationaryMethod::Burnin { t_burn },
        _ => sde::default_stationary_method(&model),
    };
    Ok((model, f, init, SimOptions::with_step(p.f("step"))))
}

fn run_conc_lab(action: &str, p: &Params, seed: u64) -> crate::Result<Artifact> {
    match action {
        "tails" | "calibrate" | "moments" => {
            let (model, f, init, opts) = tail_setup(p)?;
            let table = lab::run_tail_experiment_with(&model, &f, p.f("t"), p.u("replicates"), init, seed, &p.fl("thresholds"), &opts)?;
            match action {
                "tails" => Ok(Artifact {
                    json: json!({
                        "thresholds": table.thresholds,
                        "exceed_fraction": table.exceed_fraction,
                        "standard_errors": table.standard_errors,
                        "replicates": table.replicates,
                        "diverged": table.diverged,
                    }),
                    csv: table.to_csv(),
                    headline: None,
                }),
                "calibrate" => {
                    let l = p.opt_f("l_frak").unwrap_or(f.l_frak);
                    let e = &model.ergodicity;
                    let st = p.opt_f("sigma_tilde").unwrap_or_else(|| bounds::sigma_tilde(f.eta1, e.q, e.q_prime));
                    let u_grid = p.fl("u_grid");
                    let w = lab::calibrate_w_scaled(&table, l, st, &u_grid, p.f("tail_scale"))?;
                    Ok(scalar_artifact("w_hat", w, json!({ "l_frak": l, "sigma_tilde": st, "u_grid": u_grid })))
                }
                _ => {
                    let moments = lab::empirical_moments(&table.values, &p.il("p_list"))?;
                    Ok(Artifact {
                        json: json!({ "moments": moments }),
                        csv: CsvTable::new(&["p", "lp_norm"], moments.iter().map(|(k, v)| vec![k.to_string(), fmt_num(*v)]).collect()),
                        headline: None,
                    })
                }
            }
        }
        "coverage" => {
            let model = model_from(p)?;
            let f = function_from(p.s("f"), Some(&model))?;
            let target = match (p.opt_f("target"), f.centered_mean) {
                (Some(t), _) | (None, Some(t)) => t,
                (None, None) => return Err(Error::Argument("target is required for this model".into())),
            };
            let x0 = p.x0(model.dim)?;
            let opts = SimOptions::with_step(p.f("step"));
            let report = lab::burnin_coverage(&model, &f, &x0, p.f("v"), p.f("t"), target, &p.req()?, p.u("runs"), seed, &opts)?;
            Ok(Artifact { json: serde_json::to_value(&report).expect("report serializes"), csv: report.to_csv(), headline: None })
        }
        other => Err(Error::UnsupportedMethod(format!("conc-lab {other}"))),
    }
}

fn lasso_pipeline(p: &Params) -> crate::Result<LassoPipeline> {
    let mut pipe = LassoPipeline::diagonal_linear(&p.fl("diag"))?;
    pipe.step = p.f("step");
    pipe.burn_in = p.f("burn_in");
    pipe.eps0 = p.f("eps0");
    Ok(pipe)
}

fn run_lasso(action: &str, p: &Params, seed: u64) -> crate::Result<Artifact> {
    let pipe = lasso_pipeline(p)?;
    let t = p.f("t");
    let (d_inf, e_inf) = pipe.pilot_constants(p.f("pilot_t"), seed)?;
    let fit_one = |sys: &lasso::GramSystem| -> crate::Result<lasso::LassoFit> {
        let lambda = match p.opt_f("lambda") {
            Some(l) => l,
            None => pipe.lambda_for(sys.t, d_inf, e_inf)?,
        };
        lasso::lasso_solve(sys, lambda, p.f("tol"), p.u("max_sweeps"))
    };
    match action {
        "fit" => {
            let sys = pipe.systems(&[t], seed, p.u("replicate") as u64)?.remove(0);
            let fit = fit_one(&sys)?;
            let oracle = lasso::oracle_check(&fit, &pipe.theta0, &sys, pipe.s0, e_inf)?;
            Ok(Artifact {
                json: json!({
                    "theta_hat": fit.theta_hat,
                    "lambda": fit.lambda,
                    "objective": fit.objective,
                    "kkt_residual": fit.kkt_residual,
                    "sweeps": fit.sweeps,
                    "support": fit.support(),
                    "d_inf_hat": d_inf,
                    "e_inf_hat": e_inf,
                    "oracle": oracle,
                }),
                csv: fit.to_csv(&pipe.dict),
                headline: None,
            })
        }
        "probe-re" => {
            let sys = pipe.systems(&[t], seed, p.u("replicate") as u64)?.remove(0);
            let (q, z) = lasso::restricted_eigenvalue_probe(&sys, p.u("s"), p.f("c0"), p.u("n_probe"), seed)?;
            Ok(Artifact {
                json: json!({ "min_quotient": q, "argmin": z }),
                csv: CsvTable::new(&["index", "argmin"], z.iter().enumerate().map(|(i, v)| vec![i.to_string(), fmt_num(*v)]).collect()),
                headline: None,
            })
        }
        "oracle" => {
            let runs = exec::map_indices(p.u("replicates"), exec::Execution::Parallel, |i| {
                let sys = pipe.systems(&[t], seed, i)?.remove(0);
                let fit = fit_one(&sys)?;
                lasso::oracle_check(&fit, &pipe.theta0, &sys, pipe.s0, e_inf)
            })
            .into_iter()
            .collect::<crate::Result<Vec<_>>>()?;
            let holds = runs.iter().filter(|o| o.holds).count();
            Ok(Artifact {
                json: json!({ "checks": runs, "holds": holds, "d_inf_hat": d_inf, "e_inf_hat": e_inf }),
                csv: CsvTable::new(
                    &["replicate", "lhs", "rhs", "holds"],
                    runs.iter()
                        .enumerate()
                        .map(|(i, o)| vec![i.to_string(), fmt_num(o.lhs), fmt_num(o.rhs), (o.holds as u8).to_string()])
                        .collect(),
                ),
                headline: None,
            })
        }
        other => Err(Error::UnsupportedMethod(format!("lasso {other}"))),
    }
}

fn run_ula(action: &str, p: &Params, seed: u64) -> crate::Result<Artifact> {
    let pot = potential_from(p)?;
    match action {
        "run" => {
            let x0 = p.x0(pot.dim)?;
            let chain = langevin::ula_chain_replicate(&pot, p.f("step"), p.u("n_steps"), &x0, seed, p.u("replicate") as u64)?;
            let states: Vec<&[f64]> = chain.states().collect();
            Ok(Artifact { json: json!({ "delta_step": chain.delta_step, "states": states }), csv: chain.to_csv(), headline: None })
        }
        "estimate" => {
            let f = function_from(p.s("f"), None)?;
            let x0 = p.x0(pot.dim)?;
            let v = langevin::ula_estimate_streaming(&pot, &f, &x0, p.f("step"), p.u("m") as u64, p.u("n") as u64, seed, p.u("replicate") as u64)?;
            Ok(scalar_artifact("estimate", v, json!({})))
        }
        "tune" => {
            let f = function_from(p.s("f"), None)?;
            let t = bounds::ula_tuning(
                &p.req()?,
                pot.q,
                f.eta1,
                f.eta2.unwrap_or(f.eta1),
                f.eta3.unwrap_or(0.0),
                pot.dim,
                pot.l_lip,
                pot.grad_sup,
                &p.consts(),
            )?;
            Ok(tuning_artifact(&t))
        }
        "pac" => {
            let f = function_from(p.s("f"), None)?;
            let mut cfg = UlaPacConfig::new(p.req()?, p.consts(), p.u("runs"), seed);
            cfg.max_steps = p.f("max_steps");
            cfg.half_width = p.opt_f("half_width");
            cfg.nodes = p.u("nodes");
            cfg.plan = match (p.opt_f("override_step"), p.opt_u("override_n"), p.opt_u("override_m")) {
                (None, None, None) => UlaPlan::Tuned,
                (Some(delta_step), Some(n), m) => UlaPlan::Override { delta_step, n: n as u64, m: m.unwrap_or(0) as u64 },
                _ => return Err(Error::Argument("override needs both override_step and override_n".into())),
            };
            let report = langevin::ula_pac_experiment_with(&pot, &f, &cfg, &SimOptions::default())?;
            Ok(Artifact { json: serde_json::to_value(&report).expect("report serializes"), csv: report.coverage.to_csv(), headline: None })
        }
        other => Err(Error::UnsupportedMethod(format!("ula {other}"))),
    }
}

fn execute(cfg: &RunConfig) -> crate::Result<Artifact> {
    let p = Params(&cfg.params);
    let action = cfg.action.as_deref().unwrap_or("");
    match cfg.command {
        CommandKind::Simulate => run_simulate(&p, cfg.seed),
        CommandKind::Potential => run_potential(&p),
        CommandKind::Bounds => run_bounds(action, &p),
        CommandKind::ConcLab => run_conc_lab(action, &p, cfg.seed),
        CommandKind::Lasso => run_lasso(action, &p, cfg.seed),
        CommandKind::Ula => run_ula(action, &p, cfg.seed),
    }
}

/// Runs a validated config, writing the artifact to `output_path` (or stdout)
/// and returning the exit code.
pub fn dispatch(cfg: &RunConfig) -> i32 {
    exec::set_threads(cfg.threads);
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let result = execute(cfg).map_err(CliError::from).and_then(|art| {
        let body = match cfg.format {
            Format::Csv => art.csv.render(&echo),
            Format::Json => render_json(&echo, art.json),
        };
        if let Some(h) = &art.headline {
            println!("{h}");
        }
        match &cfg.output_path {
            Some(path) => write_atomic(Path::new(path), &body).map_err(|e| CliError::Run(Error::Io(e))),
            None if art.headline.is_none() => {
                print!("{body}");
                Ok(())
            }
            None => Ok(()),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point used by the binary.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    match parse_config(args) {
        Ok(cfg) => dispatch(&cfg),
        Err(CliError::Info(msg)) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
