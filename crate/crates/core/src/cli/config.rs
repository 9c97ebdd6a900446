use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bvae::BvaeConfig;
use crate::dataio::{DataConfig, SyntheticSpec};
use crate::emohead::HeadConfig;
use crate::error::{Error, Result};
use crate::mlmetrics::DEFAULT_THRESHOLD;
use crate::objective::TrainConfig;
use crate::roipool::RoiPoolConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiPoolSection {
    pub n_roif: usize,
}

impl Default for RoiPoolSection {
    fn default() -> Self {
        Self { n_roif: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// F1 decision threshold on predicted probabilities.
    pub threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub alpha: f64,
    /// Bonferroni-Dunn critical value; looked up for `alpha = 0.05` when absent.
    pub q_alpha: Option<f64>,
    pub higher_is_better: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            q_alpha: None,
            higher_is_better: true,
        }
    }
}

/// Every tunable of every command, addressable by dotted key such as
/// `train.learning_rate` or `bvae.hidden`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub bvae: BvaeConfig,
    pub head: HeadConfig,
    pub roipool: RoiPoolSection,
    pub data: DataConfig,
    pub synthetic: SyntheticSpec,
    pub eval: EvalSection,
    pub compare: CompareSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Applies one `key=value` override. The value is parsed as JSON and
    /// falls back to a plain string; the key must already exist.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set_value(key.trim(), value)
    }

    pub fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.bvae.validate()?;
        RoiPoolConfig::new(self.roipool.n_roif)?;
        self.synthetic.validate()?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::Config(format!("eval.threshold must lie in (0, 1), got {}", self.eval.threshold)));
        }
        if !(self.compare.alpha > 0.0 && self.compare.alpha < 1.0) {
            return Err(Error::Config(format!("compare.alpha must lie in (0, 1), got {}", self.compare.alpha)));
        }
        Ok(())
    }
}

/// Dotted keys whose values differ between two configs.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(ma), Value::Object(mb)) => {
                for (k, va) in ma {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    match mb.get(k) {
                        Some(vb) => walk(&key, va, vb, out),
                        None => out.push(key),
                    }
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(
        "",
        &serde_json::to_value(a).expect("config serializes"),
        &serde_json::to_value(b).expect("config serializes"),
        &mut out,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides() {
        let mut c = RunConfig::default();
        c.set("train.learning_rate=0.01").unwrap();
        c.set("bvae.hidden=[32,16]").unwrap();
        c.set("data.split={\"scheme\":\"kfold\",\"k\":5}").unwrap();
        c.set("train.ablation=[\"no_mask\"]").unwrap();
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.bvae.hidden, vec![32, 16]);
        assert_eq!(c.data.split, crate::dataio::SplitScheme::Kfold { k: 5 });
        assert_eq!(config_diff(&RunConfig::default(), &c).len(), 4);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let mut c = RunConfig::default();
        for bad in ["train.learning_rat=1", "nope=1", "train.epochs=\"many\"", "train"] {
            assert!(matches!(c.set(bad), Err(Error::Config(_))), "{bad}");
        }
        assert!(matches!(RunConfig::from_json(r#"{"train":{"lr":1}}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"extra":{}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.set("head.d_prime=12").unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
