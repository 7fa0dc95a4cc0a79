//! Flat `key=value` configuration files and their resolution against CLI
//! overrides. Recognized keys: N, mu, s, alpha, y, T, seed, replicates,
//! p_min, early_c1, early_c2. Precedence: built-in defaults, then the
//! config file, then CLI flags.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ModelParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line} is not a key=value pair: {text:?}")]
    BadLine { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config value for {key} is not a valid {ty}: {value:?}")]
    BadValue {
        key: &'static str,
        ty: &'static str,
        value: String,
    },
    #[error("replicates must be >= 1")]
    ZeroReplicates,
    #[error(transparent)]
    Params(#[from] crate::params::ParamsError),
}

const KNOWN_KEYS: &[&str] = &[
    "N",
    "mu",
    "s",
    "alpha",
    "y",
    "T",
    "seed",
    "replicates",
    "p_min",
    "early_c1",
    "early_c2",
];

/// CLI-supplied overrides; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub n: Option<u64>,
    pub mu: Option<f64>,
    pub s: Option<f64>,
    pub alpha: Option<f64>,
    pub y: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
    pub replicates: Option<u64>,
    pub p_min: Option<f64>,
    pub early_c1: Option<f64>,
    pub early_c2: Option<f64>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub seed: u64,
    pub replicates: u64,
    pub p_min: f64,
    pub early_c1: f64,
    /// None means "use the horizon-derived default".
    pub early_c2: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ModelParams {
                n: 10_000,
                mu: 5e-4,
                s: 0.05,
                alpha: 1.0,
                y: 0.3,
                t_end: 5.0,
            },
            seed: 42,
            replicates: 1,
            p_min: 1e-4,
            early_c1: 1.0,
            early_c2: None,
        }
    }
}

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_str(&text)
}

/// Parse config text: `key = value` lines, `#` comments, blank lines.
pub fn parse_str(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn get_f64(
    map: &BTreeMap<String, String>,
    key: &'static str,
) -> Result<Option<f64>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse::<f64>().map_err(|_| ConfigError::BadValue {
                key,
                ty: "float",
                value: v.clone(),
            })
        })
        .transpose()
}

fn get_u64(
    map: &BTreeMap<String, String>,
    key: &'static str,
) -> Result<Option<u64>, ConfigError> {
    map.get(key)
        .map(|v| {
            // Accept scientific notation for counts (N=1e6).
            if let Ok(n) = v.parse::<u64>() {
                return Ok(n);
            }
            match v.parse::<f64>() {
                Ok(f) if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 => Ok(f as u64),
                _ => Err(ConfigError::BadValue {
                    key,
                    ty: "integer",
                    value: v.clone(),
                }),
            }
        })
        .transpose()
}

/// Resolve the final configuration from an optional config file plus CLI
/// overrides, and validate the model parameters.
pub fn resolve(path: Option<&Path>, cli: &Overrides) -> Result<RunConfig, ConfigError> {
    let map = match path {
        Some(p) => parse_file(p)?,
        None => BTreeMap::new(),
    };
    let mut cfg = RunConfig::default();
    if let Some(v) = get_u64(&map, "N")? {
        cfg.params.n = v;
    }
    if let Some(v) = get_f64(&map, "mu")? {
        cfg.params.mu = v;
    }
    if let Some(v) = get_f64(&map, "s")? {
        cfg.params.s = v;
    }
    if let Some(v) = get_f64(&map, "alpha")? {
        cfg.params.alpha = v;
    }
    if let Some(v) = get_f64(&map, "y")? {
        cfg.params.y = v;
    }
    if let Some(v) = get_f64(&map, "T")? {
        cfg.params.t_end = v;
    }
    if let Some(v) = get_u64(&map, "seed")? {
        cfg.seed = v;
    }
    if let Some(v) = get_u64(&map, "replicates")? {
        cfg.replicates = v;
    }
    if let Some(v) = get_f64(&map, "p_min")? {
        cfg.p_min = v;
    }
    if let Some(v) = get_f64(&map, "early_c1")? {
        cfg.early_c1 = v;
    }
    if let Some(v) = get_f64(&map, "early_c2")? {
        cfg.early_c2 = Some(v);
    }

    if let Some(v) = cli.n {
        cfg.params.n = v;
    }
    if let Some(v) = cli.mu {
        cfg.params.mu = v;
    }
    if let Some(v) = cli.s {
        cfg.params.s = v;
    }
    if let Some(v) = cli.alpha {
        cfg.params.alpha = v;
    }
    if let Some(v) = cli.y {
        cfg.params.y = v;
    }
    if let Some(v) = cli.t_end {
        cfg.params.t_end = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.replicates {
        cfg.replicates = v;
    }
    if let Some(v) = cli.p_min {
        cfg.p_min = v;
    }
    if let Some(v) = cli.early_c1 {
        cfg.early_c1 = v;
    }
    if let Some(v) = cli.early_c2 {
        cfg.early_c2 = Some(v);
    }

    if cfg.replicates == 0 {
        return Err(ConfigError::ZeroReplicates);
    }
    cfg.params.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let map = parse_str("# reference\nN = 1e6\nmu=1e-4 # trailing\n\ns=0.01\n").unwrap();
        assert_eq!(map.get("N").unwrap(), "1e6");
        assert_eq!(map.get("mu").unwrap(), "1e-4");
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(matches!(
            parse_str("bogus=1\n"),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_str("N 100\n"),
            Err(ConfigError::BadLine { line: 1, .. })
        ));
    }

    #[test]
    fn cli_overrides_file() {
        let dir = std::env::temp_dir().join("wavefront-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.cfg");
        std::fs::write(&path, "N=100000\nmu=2e-4\ns=0.02\nseed=7\n").unwrap();
        let cli = Overrides {
            seed: Some(11),
            ..Overrides::default()
        };
        let cfg = resolve(Some(&path), &cli).unwrap();
        assert_eq!(cfg.params.n, 100_000);
        assert_eq!(cfg.seed, 11);
    }

    #[test]
    fn scientific_counts_are_accepted() {
        let map = parse_str("N=1e6\n").unwrap();
        assert_eq!(get_u64(&map, "N").unwrap(), Some(1_000_000));
    }

    #[test]
    fn zero_replicates_rejected() {
        let cli = Overrides {
            replicates: Some(0),
            ..Overrides::default()
        };
        assert!(matches!(
            resolve(None, &cli),
            Err(ConfigError::ZeroReplicates)
        ));
    }

    #[test]
    fn invalid_params_are_rejected_at_resolution() {
        let cli = Overrides {
            mu: Some(0.5),
            s: Some(0.1),
            ..Overrides::default()
        };
        assert!(matches!(resolve(None, &cli), Err(ConfigError::Params(_))));
    }
}
