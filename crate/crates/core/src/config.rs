//! Pipeline configuration: presets, JSON files, `MMGT_` environment
//! variables and `key=value` overrides, merged in that order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::brainnet::BrainnetConfig;
use crate::contrastive::ContrastiveConfig;
use crate::encoders::{EncoderConfig, HeadConfig};
use crate::error::{Error, Result};
use crate::popgraph::ClassifierConfig;
use crate::synth::SynthesisConfig;

/// How contrastive-split patients enter the population graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveNodes {
    /// Unlabelled context nodes (message passing only).
    Context,
    /// Left out of the graph.
    Exclude,
    /// Labelled training nodes.
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub contrastive_nodes: ContrastiveNodes,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            contrastive_nodes: ContrastiveNodes::Context,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub contrastive_weight: f64,
    pub head_hidden: usize,
    pub baseline_side: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1e-3,
            weight_decay: 5e-4,
            batch_size: 20,
            contrastive_weight: 1.0,
            head_hidden: 32,
            baseline_side: 16,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.head_hidden == 0 || self.baseline_side < 2 {
            return Err(Error::config("ablation batch >= 2, head_hidden >= 1 and baseline_side >= 2 required"));
        }
        if !(self.lr >= 0.0) || !(self.contrastive_weight >= 0.0) {
            return Err(Error::config("ablation lr and contrastive_weight must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preset: String,
    pub seed: u64,
    pub synthesis: SynthesisConfig,
    pub brainnet: BrainnetConfig,
    pub encoders: EncoderConfig,
    pub heads: HeadConfig,
    pub contrastive: ContrastiveConfig,
    pub classifier: ClassifierConfig,
    pub graph: GraphConfig,
    pub ablation: AblationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PipelineConfig {
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            seed: 0,
            synthesis: SynthesisConfig::default(),
            brainnet: BrainnetConfig::default(),
            encoders: EncoderConfig::default(),
            heads: HeadConfig::default(),
            contrastive: ContrastiveConfig::default(),
            classifier: ClassifierConfig::default(),
            graph: GraphConfig::default(),
            ablation: AblationConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            brainnet: BrainnetConfig::paper(),
            encoders: EncoderConfig::paper(),
            contrastive: ContrastiveConfig::paper(),
            classifier: ClassifierConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::config(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesis.validate()?;
        self.brainnet.validate()?;
        self.encoders.validate()?;
        self.contrastive.validate()?;
        self.classifier.validate()?;
        self.ablation.validate()?;
        if self.encoders.node_projection.last() != self.heads.tumor_head.last() {
            return Err(Error::config("encoders.node_projection and heads.tumor_head must end in the same width"));
        }
        Ok(())
    }
}

/// Where a configuration layer came from, for error messages.
#[derive(Clone, Debug)]
pub enum Layer {
    File(std::path::PathBuf),
    Env(String),
    Flag(String),
}

/// Builds the resolved configuration: preset, then an optional JSON file,
/// then `MMGT_<SECTION>__<KEY>` variables from `env`, then `key=value`
/// overrides.
pub fn resolve(
    preset: &str,
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[String],
) -> Result<PipelineConfig> {
    let base = PipelineConfig::preset(preset)?;
    let mut tree = serde_json::to_value(&base)?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let layer: Value =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        merge(&mut tree, &layer, "", &Layer::File(path.to_path_buf()))?;
    }
    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix("MMGT_").map(|rest| (rest.to_string(), v)))
        .collect();
    env.sort();
    for (key, value) in env {
        let path = key.to_lowercase().replace("__", ".");
        set_path(&mut tree, &path, &value, &Layer::Env(format!("MMGT_{key}")))?;
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
        set_path(&mut tree, k.trim(), v.trim(), &Layer::Flag(o.clone()))?;
    }
    let cfg: PipelineConfig = serde_json::from_value(tree).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn describe(layer: &Layer) -> String {
    match layer {
        Layer::File(p) => p.display().to_string(),
        Layer::Env(k) => k.clone(),
        Layer::Flag(f) => format!("--set {f}"),
    }
}

/// Deep merge of objects; keys must already exist in `base`.
fn merge(base: &mut Value, layer: &Value, prefix: &str, src: &Layer) -> Result<()> {
    let (Some(b), Some(l)) = (base.as_object_mut(), layer.as_object()) else {
        *base = layer.clone();
        return Ok(());
    };
    for (k, v) in l {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let slot = b
            .get_mut(k)
            .ok_or_else(|| Error::config(format!("unknown key `{key}` in {}", describe(src))))?;
        if slot.is_object() && v.is_object() {
            merge(slot, v, &key, src)?;
        } else {
            *slot = v.clone();
        }
    }
    Ok(())
}

/// Sets a dotted path; the value is parsed as JSON, falling back to a plain
/// string.
fn set_path(tree: &mut Value, path: &str, raw: &str, src: &Layer) -> Result<()> {
    let mut node = tree;
    for part in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::config(format!("unknown key `{path}` in {}", describe(src))))?;
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    if node.is_object() {
        return Err(Error::config(format!("`{path}` is a section, not a value ({})", describe(src))));
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let env = vec![
            ("MMGT_CONTRASTIVE__TAU".to_string(), "0.2".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ];
        let cfg = resolve("desk", None, env.clone(), &[]).unwrap();
        assert_eq!(cfg.contrastive.tau, 0.2);
        let cfg = resolve("desk", None, env, &["contrastive.tau=0.3".into()]).unwrap();
        assert_eq!(cfg.contrastive.tau, 0.3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let e = resolve("desk", None, Vec::new(), &["contrastive.tua=1".into()]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = resolve("desk", None, Vec::new(), &["contrastive.tau=-1".into()]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(resolve("huge", None, Vec::new(), &[]).is_err());
    }

    #[test]
    fn paper_preset_values() {
        let p = PipelineConfig::paper();
        assert_eq!((p.contrastive.tau, p.contrastive.lambda, p.classifier.theta), (0.1, 0.8, 0.5));
        assert_eq!(p.contrastive.lr, 1e-3);
        assert_eq!(p.encoders.image_widths, vec![64, 128, 128, 256, 256]);
    }
}
