//! Search configuration: defaults, validation, file and environment loading.
//!
//! The config file is a flat TOML document whose keys are exactly the field
//! names of [`SearchConfig`]. Environment variables named `REDRAFT_<KEY>`
//! (uppercased) override file values.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const ENV_PREFIX: &str = "REDRAFT_";

pub const DEFAULT_TREE_BUDGET: usize = 5;
pub const DEFAULT_SAMPLE_COUNT: usize = 5;
pub const DEFAULT_REWARD_THRESHOLD: f64 = 0.10;
pub const DEFAULT_UCT_CONSTANT: f64 = 6.36;
pub const DEFAULT_MAX_TOKENS: usize = 128;

const KEYS: [&str; 7] = [
    "tree_budget",
    "sample_count",
    "reward_threshold",
    "uct_constant",
    "max_tokens",
    "gate_direction",
    "rng_seed",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("{key}: cannot parse {value:?}")]
    Parse { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config file is not a flat key-value document: {0}")]
    Format(String),
}

/// Which side of the threshold counts as acceptable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateDirection {
    /// Reward-style scores: higher is more private.
    AcceptAtOrAbove,
    /// Leakage-style scores: lower is more private.
    AcceptAtOrBelow,
}

impl GateDirection {
    pub fn accepts(self, score: f64, threshold: f64) -> bool {
        match self {
            GateDirection::AcceptAtOrAbove => score >= threshold,
            GateDirection::AcceptAtOrBelow => score <= threshold,
        }
    }

    /// True when `a` is strictly better than `b` under this polarity.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            GateDirection::AcceptAtOrAbove => a > b,
            GateDirection::AcceptAtOrBelow => a < b,
        }
    }

    /// Maps a score onto a higher-is-better scale in [0,1].
    pub fn orient(self, score: f64) -> f64 {
        match self {
            GateDirection::AcceptAtOrAbove => score,
            GateDirection::AcceptAtOrBelow => 1.0 - score,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GateDirection::AcceptAtOrAbove => "at-or-above",
            GateDirection::AcceptAtOrBelow => "at-or-below",
        }
    }
}

impl fmt::Display for GateDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateDirection {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "at-or-above" | "acceptatorabove" | "above" => Ok(GateDirection::AcceptAtOrAbove),
            "at-or-below" | "acceptatorbelow" | "below" => Ok(GateDirection::AcceptAtOrBelow),
            _ => Err(()),
        }
    }
}

/// Validated search parameters. Construct through [`validate_config`] or
/// [`SearchConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchConfig {
    /// Node expansions per segment.
    pub tree_budget: usize,
    /// Candidates requested per rewrite call.
    pub sample_count: usize,
    pub reward_threshold: f64,
    pub uct_constant: f64,
    /// Generation length cap, in tokens.
    pub max_tokens: usize,
    pub gate_direction: GateDirection,
    pub rng_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            tree_budget: DEFAULT_TREE_BUDGET,
            sample_count: DEFAULT_SAMPLE_COUNT,
            reward_threshold: DEFAULT_REWARD_THRESHOLD,
            uct_constant: DEFAULT_UCT_CONSTANT,
            max_tokens: DEFAULT_MAX_TOKENS,
            gate_direction: GateDirection::AcceptAtOrAbove,
            rng_seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn accepts(&self, score: f64) -> bool {
        self.gate_direction.accepts(score, self.reward_threshold)
    }

    /// Serializes back into the raw key-value form accepted by [`validate_config`].
    pub fn to_raw(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("tree_budget".into(), self.tree_budget.to_string());
        m.insert("sample_count".into(), self.sample_count.to_string());
        m.insert("reward_threshold".into(), self.reward_threshold.to_string());
        m.insert("uct_constant".into(), self.uct_constant.to_string());
        m.insert("max_tokens".into(), self.max_tokens.to_string());
        m.insert("gate_direction".into(), self.gate_direction.to_string());
        m.insert("rng_seed".into(), self.rng_seed.to_string());
        m
    }

    /// Canonical text form; hashed into run manifests.
    pub fn canonical_string(&self) -> String {
        self.to_raw()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Parse {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Builds a [`SearchConfig`] from raw string values, filling defaults.
pub fn validate_config(raw: &BTreeMap<String, String>) -> Result<SearchConfig, ConfigError> {
    if let Some(k) = raw.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(k.clone()));
    }
    let mut cfg = SearchConfig::default();
    for (key, value) in raw {
        match key.as_str() {
            "tree_budget" => {
                let v: i64 = parse(key, value)?;
                if v < 1 {
                    return Err(ConfigError::Invalid("tree_budget must be ≥ 1".into()));
                }
                cfg.tree_budget = v as usize;
            }
            "sample_count" => {
                let v: i64 = parse(key, value)?;
                if v < 1 {
                    return Err(ConfigError::Invalid("sample_count must be ≥ 1".into()));
                }
                cfg.sample_count = v as usize;
            }
            "max_tokens" => {
                let v: i64 = parse(key, value)?;
                if v < 1 {
                    return Err(ConfigError::Invalid("max_tokens must be ≥ 1".into()));
                }
                cfg.max_tokens = v as usize;
            }
            "reward_threshold" => {
                let v: f64 = parse(key, value)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(ConfigError::Invalid(
                        "reward_threshold must be within [0, 1]".into(),
                    ));
                }
                cfg.reward_threshold = v;
            }
            "uct_constant" => {
                let v: f64 = parse(key, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(ConfigError::Invalid(
                        "uct_constant must be a finite value ≥ 0".into(),
                    ));
                }
                cfg.uct_constant = v;
            }
            "gate_direction" => {
                cfg.gate_direction = parse::<GateDirection>(key, value)?;
            }
            "rng_seed" => {
                cfg.rng_seed = parse(key, value)?;
            }
            _ => unreachable!("keys checked above"),
        }
    }
    Ok(cfg)
}

/// Parses a flat TOML document into raw key-value pairs.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Format(e.to_string()))?;
    let mut raw = BTreeMap::new();
    for (k, v) in table {
        let s = match v {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => {
                return Err(ConfigError::Format(format!(
                    "key {k:?} has non-scalar value {other}"
                )))
            }
        };
        raw.insert(k, s);
    }
    Ok(raw)
}

/// Applies `REDRAFT_<KEY>` overrides from `lookup` onto `raw`.
pub fn apply_env_overrides<F>(raw: &mut BTreeMap<String, String>, lookup: F)
where
    F: Fn(&str) -> Option<String>,
{
    for key in KEYS {
        let var = format!("{ENV_PREFIX}{}", key.to_ascii_uppercase());
        if let Some(v) = lookup(&var) {
            raw.insert(key.to_string(), v);
        }
    }
}

/// Loads an optional config file, applies process environment overrides and
/// validates the result.
pub fn load_config(path: Option<&Path>) -> Result<SearchConfig, ConfigError> {
    let mut raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    apply_env_overrides(&mut raw, |k| std::env::var(k).ok());
    validate_config(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn empty_map_gives_defaults() {
        let cfg = validate_config(&BTreeMap::new()).unwrap();
        assert_eq!(cfg.tree_budget, 5);
        assert_eq!(cfg.reward_threshold, 0.10);
        assert_eq!(cfg.uct_constant, 6.36);
        assert_eq!(cfg.max_tokens, 128);
        assert_eq!(cfg.sample_count, 5);
        assert_eq!(cfg.gate_direction, GateDirection::AcceptAtOrAbove);
        assert_eq!(cfg.rng_seed, 0);
    }

    #[test]
    fn zero_budget_rejected() {
        let err = validate_config(&raw(&[("tree_budget", "0")])).unwrap_err();
        assert_eq!(err.to_string(), "tree_budget must be ≥ 1");
    }

    #[test]
    fn threshold_accepted() {
        let cfg = validate_config(&raw(&[("reward_threshold", "0.10")])).unwrap();
        assert_eq!(cfg.reward_threshold, 0.10);
    }

    #[test]
    fn errors_name_the_key() {
        for (k, v) in [
            ("sample_count", "0"),
            ("max_tokens", "-3"),
            ("reward_threshold", "1.5"),
            ("uct_constant", "-0.1"),
        ] {
            let msg = validate_config(&raw(&[(k, v)])).unwrap_err().to_string();
            assert!(msg.contains(k), "{msg}");
        }
        assert!(matches!(
            validate_config(&raw(&[("budget", "3")])),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            validate_config(&raw(&[("rng_seed", "x")])),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn toml_and_env() {
        let mut r = parse_config_text("tree_budget = 3\nreward_threshold = 0.25\ngate_direction = \"at-or-below\"\n").unwrap();
        apply_env_overrides(&mut r, |k| (k == "REDRAFT_TREE_BUDGET").then(|| "7".to_string()));
        let cfg = validate_config(&r).unwrap();
        assert_eq!(cfg.tree_budget, 7);
        assert_eq!(cfg.reward_threshold, 0.25);
        assert_eq!(cfg.gate_direction, GateDirection::AcceptAtOrBelow);
        assert!(parse_config_text("[section]\na = 1").is_err());
    }

    fn raw_strategy() -> impl Strategy<Value = BTreeMap<String, String>> {
        let value = prop_oneof![
            (-3i64..200).prop_map(|v| v.to_string()),
            (-0.5f64..1.5).prop_map(|v| v.to_string()),
            Just("at-or-above".to_string()),
            Just("at-or-below".to_string()),
            Just("junk".to_string()),
        ];
        proptest::collection::btree_map(
            proptest::sample::select(KEYS.to_vec()).prop_map(str::to_string),
            value,
            0..7,
        )
    }

    proptest! {
        #[test]
        fn validated_configs_hold_invariants(r in raw_strategy()) {
            if let Ok(cfg) = validate_config(&r) {
                prop_assert!(cfg.tree_budget >= 1);
                prop_assert!(cfg.sample_count >= 1);
                prop_assert!(cfg.max_tokens >= 1);
                prop_assert!((0.0..=1.0).contains(&cfg.reward_threshold));
                prop_assert!(cfg.uct_constant >= 0.0);
                let again = validate_config(&cfg.to_raw()).unwrap();
                prop_assert_eq!(again, cfg);
            }
        }
    }
}
