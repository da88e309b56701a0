//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are rejected and missing keys keep their defaults.

use std::path::Path;

use afb_core::{Error, MemoryPolicy, PipelineConfig};

pub const KEYS: [&str; 15] = [
    "epsilon_h",
    "lambda_p",
    "epsilon_l",
    "lambda_u",
    "budget",
    "radius",
    "u_threshold",
    "stride",
    "patch",
    "d_k",
    "d_v",
    "tau_d",
    "seed",
    "memory_policy",
    "absorb_interval",
];

fn value<T: std::str::FromStr>(key: &str, raw: &str, line: usize) -> Result<T, Error> {
    raw.parse()
        .map_err(|_| Error::InvalidConfig(format!("line {line}: bad value '{raw}' for {key}")))
}

/// Applies each assignment in `text` on top of `base`.
pub fn apply(text: &str, mut base: PipelineConfig) -> Result<PipelineConfig, Error> {
    let cfg = &mut base;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {n}: expected key = value, got '{line}'")))?;
        let (key, val) = (key.trim(), val.trim());
        match key {
            "epsilon_h" => cfg.bank.epsilon_h = value(key, val, n)?,
            "lambda_p" => cfg.bank.lambda_p = value(key, val, n)?,
            "epsilon_l" => cfg.bank.epsilon_l = value(key, val, n)?,
            "lambda_u" => cfg.lambda_u = value(key, val, n)?,
            "budget" => cfg.bank.budget = value(key, val, n)?,
            "radius" => cfg.refine.radius = value(key, val, n)?,
            "u_threshold" => cfg.refine.u_threshold = value(key, val, n)?,
            "stride" => cfg.extractor.stride = value(key, val, n)?,
            "patch" => cfg.extractor.patch = value(key, val, n)?,
            "d_k" => cfg.extractor.d_k = value(key, val, n)?,
            "d_v" => cfg.extractor.d_v = value(key, val, n)?,
            "tau_d" => cfg.tau_d = value(key, val, n)?,
            "seed" => cfg.extractor.proj_seed = value(key, val, n)?,
            "memory_policy" => cfg.memory_policy = val.parse::<MemoryPolicy>()?,
            "absorb_interval" => cfg.absorb_interval = value(key, val, n)?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "line {n}: unknown key '{key}' (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
    }
    base.validate()?;
    Ok(base)
}

pub fn parse(text: &str) -> Result<PipelineConfig, Error> {
    apply(text, PipelineConfig::default())
}

/// Defaults when `path` is `None`.
pub fn load(path: Option<&Path>) -> Result<PipelineConfig, Error> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            parse(&text)
        }
    }
}
