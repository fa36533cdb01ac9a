//! Run configuration: one JSON file fully determines a run. Dotted-key
//! overrides edit the serialized tree before type checking, so every field
//! reachable in the file is reachable from the command line.

use anyhow::{bail, Context, Result};
use ratebox::envs::TrackerConfig;
use ratebox::geometry::ConstraintSpec;
use ratebox::learner::LearnerConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub learner: LearnerConfig,
    pub tracker: TrackerConfig,
    /// Monte-Carlo sample count for geometry reports.
    pub geometry_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ConstraintSpec::symmetric(vec![0.2, 0.2, 0.5, 0.5], 1.0)
            .expect("default spec is valid");
        RunConfig {
            learner: LearnerConfig::default(),
            tracker: TrackerConfig::new(spec),
            geometry_samples: 200_000,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        if self.tracker.horizon == 0 {
            bail!("invalid config: tracker horizon must be positive");
        }
        if self.geometry_samples == 0 {
            bail!("invalid config: geometry_samples must be positive");
        }
        Ok(())
    }
}

/// Loads the config file (or defaults when `path` is None), applies
/// `key=value` overrides, and type-checks the result.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let base: RunConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("cannot parse config file {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    let cfg = apply_overrides(&base, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_overrides(base: &RunConfig, overrides: &[String]) -> Result<RunConfig> {
    if overrides.is_empty() {
        return Ok(base.clone());
    }
    let mut tree = serde_json::to_value(base)?;
    for item in overrides {
        let (key, raw_value) = item
            .split_once('=')
            .with_context(|| format!("override '{item}' is not of the form key=value"))?;
        let value = parse_value(raw_value);
        set_key(&mut tree, key, value)
            .with_context(|| format!("cannot apply override '{item}'"))?;
    }
    let cfg: RunConfig =
        serde_json::from_value(tree).context("overridden config failed type checking")?;
    Ok(cfg)
}

/// Values parse as JSON when possible (numbers, booleans, arrays, quoted
/// strings); anything else is taken as a bare string, so mapping names
/// need no quoting.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Resolution order: the exact dotted path if it exists, then the key as a
/// field of `learner`, then of `tracker`.
fn set_key(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let direct: Vec<&str> = key.split('.').collect();
    if path_exists(tree, &direct) {
        *walk_mut(tree, &direct)? = value;
        return Ok(());
    }
    for section in ["learner", "tracker"] {
        let mut path = vec![section];
        path.extend(&direct);
        if path_exists(tree, &path) {
            *walk_mut(tree, &path)? = value;
            return Ok(());
        }
    }
    bail!(
        "unknown config key '{key}' (not a path, nor a learner or tracker field)"
    );
}

fn path_exists(tree: &Value, path: &[&str]) -> bool {
    let mut cur = tree;
    for part in path {
        match cur.get(part) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}

fn walk_mut<'a>(tree: &'a mut Value, path: &[&str]) -> Result<&'a mut Value> {
    let mut cur = tree;
    for part in path {
        cur = cur
            .get_mut(part)
            .with_context(|| format!("missing config key segment '{part}'"))?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ratebox::learner::Backbone;
    use ratebox::maps::Mapping;

    #[test]
    fn overrides_resolve_sections_and_exact_paths() {
        let base = RunConfig::default();
        let cfg = apply_overrides(
            &base,
            &[
                "mapping=srad-strict".to_string(),
                "learner.gamma=0.95".to_string(),
                "horizon=123".to_string(),
                "tracker.reward_sigma=0.5".to_string(),
                "backbone=td3".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.learner.mapping, Mapping::SradStrict);
        assert_eq!(cfg.learner.gamma, 0.95);
        assert_eq!(cfg.tracker.horizon, 123);
        assert_eq!(cfg.tracker.reward_sigma, 0.5);
        assert_eq!(cfg.learner.backbone, Backbone::Td3);
    }

    #[test]
    fn nested_and_array_overrides_parse_as_json() {
        let base = RunConfig::default();
        let cfg = apply_overrides(
            &base,
            &[
                "tracker.spec.delta=[0.1,0.3]".to_string(),
                "tracker.spec.a_min=[-2.0,-2.0]".to_string(),
                "tracker.spec.a_max=[2.0,2.0]".to_string(),
                "hidden=[32,32]".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.tracker.spec.delta(), &[0.1, 0.3]);
        assert_eq!(cfg.learner.hidden, vec![32, 32]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let base = RunConfig::default();
        assert!(apply_overrides(&base, &["nope=1".to_string()]).is_err());
        assert!(apply_overrides(&base, &["gamma".to_string()]).is_err());
        assert!(apply_overrides(&base, &["gamma=notanumber".to_string()]).is_err());
    }

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
