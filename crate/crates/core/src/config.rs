//! Flat `key = value` run configuration files and named presets.
//!
//! ```text
//! # comments and blank lines are ignored
//! preset = sec6-nominal        # optional base, must come first
//! plant.name = benchmark
//! params.gamma = 0.8, 0.14, 0.06
//! uncertainty.mode = bounded
//! run.iterations = 1000
//! ```
//!
//! Every key not given keeps the value of the base configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::controller::LearningParams;
use crate::engine::{ReferenceSpec, RunConfig, SnapshotSchedule};
use crate::error::{IlcError, Result};
use crate::plant::{PlantRegistry, UncertaintyMode, UncertaintyModel, DEFAULT_DECAY_RATIO};

pub const PRESETS: [&str; 4] = ["sec6-nominal", "sec6-robust", "sec6-decaying", "sec6-first-order"];

/// Seed used by the stochastic presets.
pub const PRESET_SEED: u64 = 1;

pub fn preset(name: &str) -> Option<RunConfig> {
    let mut config = RunConfig::benchmark();
    match name {
        "sec6-nominal" => {}
        "sec6-robust" => {
            config.uncertainty = UncertaintyModel::bounded(0.01, 0.01, PRESET_SEED).ok()?;
        }
        "sec6-decaying" => {
            config.uncertainty = UncertaintyModel::decaying(0.01, 0.01, DEFAULT_DECAY_RATIO, PRESET_SEED).ok()?;
        }
        "sec6-first-order" => {
            config.params.gammas = vec![0.8];
        }
        _ => return None,
    }
    Some(config)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| IlcError::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(IlcError::config(key, format!("expected a boolean, found `{value}`"))),
    }
}

/// Nonnegative integer; negative values get a named error rather than a
/// generic parse failure.
fn parse_count(key: &str, value: &str) -> Result<usize> {
    let n: i64 = parse_value(key, value)?;
    usize::try_from(n).map_err(|_| IlcError::config(key, format!("must be nonnegative, found {n}")))
}

fn parse_reference(key: &str, value: &str) -> Result<ReferenceSpec> {
    if value == "benchmark" {
        return Ok(ReferenceSpec::Benchmark);
    }
    if let Some(v) = value.strip_prefix("constant:") {
        return Ok(ReferenceSpec::Constant(parse_value(key, v.trim())?));
    }
    if let Some(v) = value.strip_prefix("samples:") {
        return Ok(ReferenceSpec::Samples(parse_list(key, v)?));
    }
    Err(IlcError::config(
        key,
        format!("expected `benchmark`, `constant:<y>` or `samples:<y0, y1, ...>`, found `{value}`"),
    ))
}

fn parse_snapshots(key: &str, value: &str) -> Result<SnapshotSchedule> {
    match value {
        "default" => Ok(SnapshotSchedule::Default),
        "none" => Ok(SnapshotSchedule::None),
        _ => value
            .split(',')
            .map(|v| parse_count(key, v.trim()))
            .collect::<Result<BTreeSet<_>>>()
            .map(SnapshotSchedule::List),
    }
}

/// Parses configuration text. Structural problems are reported as
/// [`IlcError::Config`]; the result is then validated, so bad values come
/// back as [`IlcError::InvalidParams`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut config = RunConfig::benchmark();
    let mut seen = BTreeSet::new();
    let mut mode = None;
    let mut ratio = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(IlcError::config(format!("line {}", idx + 1), "expected `key = value`"));
        };
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(IlcError::config(key, "given more than once"));
        }
        match key {
            "preset" => {
                if seen.len() > 1 {
                    return Err(IlcError::config(key, "must be the first key"));
                }
                config = preset(value).ok_or_else(|| {
                    IlcError::config(key, format!("unknown preset `{value}` (known: {})", PRESETS.join(", ")))
                })?;
            }
            "plant.name" => config.plant = value.to_string(),
            "plant.horizon" => config.horizon = Some(parse_count(key, value)?),
            "plant.y0" => config.initial_output = Some(parse_value(key, value)?),
            "reference" => config.reference = parse_reference(key, value)?,
            "params.lambda" => config.params.lambda = parse_value(key, value)?,
            "params.gamma" => config.params.gammas = parse_list(key, value)?,
            "params.epsilon" => config.params.epsilon = parse_value(key, value)?,
            "params.mu1" => config.params.mu1 = parse_value(key, value)?,
            "params.mu2" => config.params.mu2 = parse_value(key, value)?,
            "uncertainty.mode" => mode = Some(value.to_string()),
            "uncertainty.beta_w" => config.uncertainty.beta_w = parse_value(key, value)?,
            "uncertainty.beta_delta" => config.uncertainty.beta_delta = parse_value(key, value)?,
            "uncertainty.ratio" => ratio = Some(parse_value::<f64>(key, value)?),
            "uncertainty.seed" => config.uncertainty.seed = parse_value(key, value)?,
            "init.estimate" => config.initial_estimate = parse_value(key, value)?,
            "init.input" => config.initial_input = Some(parse_list(key, value)?),
            "run.iterations" => config.iterations = parse_count(key, value)?,
            "run.snapshots" => config.snapshots = parse_snapshots(key, value)?,
            "run.diagnostics" => config.diagnostics = parse_bool(key, value)?,
            "run.input_clamp" => {
                config.input_clamp = match value {
                    "none" => None,
                    _ => Some(parse_value(key, value)?),
                }
            }
            _ => return Err(IlcError::config(key, "unknown key")),
        }
    }
    let current_ratio = match config.uncertainty.mode {
        UncertaintyMode::Decaying { ratio } => ratio,
        _ => DEFAULT_DECAY_RATIO,
    };
    config.uncertainty.mode = match mode.as_deref() {
        None => match (config.uncertainty.mode, ratio) {
            (UncertaintyMode::Decaying { .. }, Some(r)) => UncertaintyMode::Decaying { ratio: r },
            (m, None) => m,
            (_, Some(_)) => {
                return Err(IlcError::config("uncertainty.ratio", "only used with `uncertainty.mode = decaying`"))
            }
        },
        Some("none") => UncertaintyMode::None,
        Some("bounded") => UncertaintyMode::BoundedRandom,
        Some("decaying") => UncertaintyMode::Decaying {
            ratio: ratio.unwrap_or(current_ratio),
        },
        Some(other) => {
            return Err(IlcError::config(
                "uncertainty.mode",
                format!("expected `none`, `bounded` or `decaying`, found `{other}`"),
            ))
        }
    };
    config.validate()?;
    Ok(config)
}

/// Reads a configuration file, or a preset when `source` names one.
pub fn load_config(source: &str) -> Result<RunConfig> {
    if let Some(config) = preset(source) {
        return Ok(config);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| IlcError::io(path, e))?;
    parse_config(&text)
}

/// Validates the configuration and checks the plant name against `registry`.
pub fn check_config(config: &RunConfig, registry: &PlantRegistry) -> Result<()> {
    config.validate()?;
    config.resolve_plant(registry).map(|_| ())
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

/// Renders a configuration that [`parse_config`] reads back unchanged.
pub fn render_config(config: &RunConfig) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    line("plant.name", config.plant.clone());
    if let Some(h) = config.horizon {
        line("plant.horizon", h.to_string());
    }
    if let Some(y0) = config.initial_output {
        line("plant.y0", y0.to_string());
    }
    line(
        "reference",
        match &config.reference {
            ReferenceSpec::Benchmark => "benchmark".to_string(),
            ReferenceSpec::Constant(v) => format!("constant:{v}"),
            ReferenceSpec::Samples(v) => format!("samples:{}", join(v)),
        },
    );
    let LearningParams {
        lambda,
        gammas,
        epsilon,
        mu1,
        mu2,
    } = &config.params;
    line("params.lambda", lambda.to_string());
    line("params.gamma", join(gammas));
    line("params.epsilon", epsilon.to_string());
    line("params.mu1", mu1.to_string());
    line("params.mu2", mu2.to_string());
    let u = &config.uncertainty;
    line(
        "uncertainty.mode",
        match u.mode {
            UncertaintyMode::None => "none",
            UncertaintyMode::BoundedRandom => "bounded",
            UncertaintyMode::Decaying { .. } => "decaying",
        }
        .to_string(),
    );
    if let UncertaintyMode::Decaying { ratio } = u.mode {
        line("uncertainty.ratio", ratio.to_string());
    }
    line("uncertainty.beta_w", u.beta_w.to_string());
    line("uncertainty.beta_delta", u.beta_delta.to_string());
    line("uncertainty.seed", u.seed.to_string());
    line("init.estimate", config.initial_estimate.to_string());
    if let Some(u0) = &config.initial_input {
        line("init.input", join(u0));
    }
    line("run.iterations", config.iterations.to_string());
    line(
        "run.snapshots",
        match &config.snapshots {
            SnapshotSchedule::Default => "default".to_string(),
            SnapshotSchedule::None => "none".to_string(),
            SnapshotSchedule::List(ks) => ks.iter().map(usize::to_string).collect::<Vec<_>>().join(", "),
        },
    );
    line("run.diagnostics", config.diagnostics.to_string());
    if let Some(c) = config.input_clamp {
        line("run.input_clamp", c.to_string());
    }
    s
}
