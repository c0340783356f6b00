//! Single-file engine configuration with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::eval::{RerankSettings, SynthConfig, Variant};
use crate::plan::{LlmEndpoint, DEFAULT_MAX_PATH_LEN};
use crate::reranker::{FeatureMask, ModelConfig, TrainConfig};
use crate::scorer::ScorerConfig;
use crate::traversal::TraversalConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbPaths {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    #[default]
    Gold,
    Template,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub mode: PlannerMode,
    /// JSON list of `{"pattern", "plan"}` rules.
    pub templates: Option<PathBuf>,
    pub endpoint: Option<LlmEndpoint>,
    /// JSON list of `{"query", "metapath", "restriction"}` examples.
    pub demonstrations: Option<PathBuf>,
    pub max_path_len: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            mode: PlannerMode::Gold,
            templates: None,
            endpoint: None,
            demonstrations: None,
            max_path_len: DEFAULT_MAX_PATH_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankerSection {
    /// Rerank retrievals with the checkpoint below.
    pub enabled: bool,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub negatives_per_positive: usize,
}

impl Default for RerankerSection {
    fn default() -> Self {
        let s = RerankSettings::default();
        Self {
            enabled: false,
            checkpoint: None,
            model: s.model,
            train: s.train,
            negatives_per_positive: s.negatives_per_positive,
        }
    }
}

impl RerankerSection {
    pub fn settings(&self) -> RerankSettings {
        RerankSettings {
            model: self.model.clone(),
            train: self.train.clone(),
            negatives_per_positive: self.negatives_per_positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Results returned per query by `retrieve`.
    pub k: usize,
    pub variants: Vec<Variant>,
    pub masks: Vec<FeatureMask>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            k: 20,
            variants: Variant::ALL.to_vec(),
            masks: vec![FeatureMask::ALL],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub kb: KbPaths,
    pub queries: Option<PathBuf>,
    pub train_queries: Option<PathBuf>,
    pub scorer: ScorerConfig,
    pub traversal: TraversalConfig,
    pub planner: PlannerConfig,
    pub reranker: RerankerSection,
    pub eval: EvalSection,
    pub synth: SynthConfig,
    pub out: PathBuf,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kb: KbPaths::default(),
            queries: None,
            train_queries: None,
            scorer: ScorerConfig::default(),
            traversal: TraversalConfig::default(),
            planner: PlannerConfig::default(),
            reranker: RerankerSection::default(),
            eval: EvalSection::default(),
            synth: SynthConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative input paths relative to the config file's directory.
    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.kb.nodes);
        fix(&mut self.kb.edges);
        fix(&mut self.queries);
        fix(&mut self.train_queries);
        fix(&mut self.planner.templates);
        fix(&mut self.planner.demonstrations);
        fix(&mut self.reranker.checkpoint);
    }

    /// Applies `a.b.c=value`. The value is read as JSON when it parses,
    /// otherwise as a string. The path must name an existing field.
    pub fn set(&mut self, assignment: &str) -> Result<(), String> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| format!("override {assignment:?} is not key=value"))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut root = serde_json::to_value(&*self).map_err(|e| e.to_string())?;
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = match slot {
                Value::Object(map) if map.contains_key(key) => map.get_mut(key).expect("checked"),
                _ => return Err(format!("unknown config key {path}")),
            };
        }
        *slot = value;
        *self = serde_json::from_value(root).map_err(|e| format!("override {path}: {e}"))?;
        Ok(())
    }

    /// Points every named seed at one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.reranker.model.seed = seed;
        self.reranker.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.planner.mode {
            PlannerMode::Gold => {}
            PlannerMode::Template if self.planner.templates.is_none() => {
                return Err("planner mode template needs planner.templates".into())
            }
            PlannerMode::Llm if self.planner.endpoint.is_none() => return Err("planner mode llm needs planner.endpoint".into()),
            _ => {}
        }
        if self.reranker.enabled && self.reranker.checkpoint.is_none() {
            return Err("missing model: reranker.enabled needs reranker.checkpoint".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = EngineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(EngineConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(EngineConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(EngineConfig::from_json(r#"{"planer": {}}"#).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = EngineConfig::default();
        cfg.set("traversal.per_layer_text=0").unwrap();
        cfg.set("planner.mode=template").unwrap();
        cfg.set("kb.nodes=data/nodes.jsonl").unwrap();
        cfg.set("reranker.train.epochs=3").unwrap();
        assert_eq!(cfg.traversal.per_layer_text, 0);
        assert_eq!(cfg.planner.mode, PlannerMode::Template);
        assert_eq!(cfg.kb.nodes.as_deref(), Some(Path::new("data/nodes.jsonl")));
        assert_eq!(cfg.reranker.train.epochs, 3);
        assert!(cfg.set("traversal.nope=1").is_err());
        assert!(cfg.set("traversal.n_seeds=-1").is_err());
        assert!(cfg.set("novalue").is_err());
    }

    #[test]
    fn planner_modes_need_their_inputs() {
        let mut cfg = EngineConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.planner.mode = PlannerMode::Llm;
        assert!(cfg.validate().is_err());
        cfg.planner.mode = PlannerMode::Gold;
        cfg.reranker.enabled = true;
        assert!(cfg.validate().unwrap_err().starts_with("missing model"));
    }
}
