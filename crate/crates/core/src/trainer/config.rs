//! Declarative training configuration (JSON).
//!
//! Required keys: `extractor`, `feature_dim`, `heads`, `mode`, `epochs`,
//! `lr`, `batch_size`, `seed`. Optional keys and their defaults:
//! `weights` (per-head overrides of the default loss weights), `stages`
//! (CL order, default: order of `heads`), `short_edge` (null = no resize),
//! `momentum` (0.9), `weight_decay` (0), `clip_norm` (1.0, null = off),
//! `max_steps` (null),
//! `pretrain_rotation_epochs` (0 = no pretraining), `stuff_combined`
//! (false), `pathway` (`"roi"` or `{"crop": size}`), `val` (true: log
//! base-val accuracy per epoch).
//!
//! ```json
//! {"extractor": "tiny", "feature_dim": 32, "heads": ["cls", "seg_fcn"],
//!  "mode": "cl", "epochs": 6, "lr": 0.1, "batch_size": 8, "seed": 0,
//!  "short_edge": 800}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::ExtractorConfig;
use crate::datamodel::{Combination, Head, HeadSetting, SupervisionConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Pathway, Vocabulary};

use super::{PlanOptions, TrainingPlan, DEFAULT_CLIP_NORM};

pub const TRAIN_CONFIG_KEYS: [&str; 19] = [
    "extractor",
    "feature_dim",
    "heads",
    "mode",
    "epochs",
    "lr",
    "batch_size",
    "seed",
    "weights",
    "stages",
    "short_edge",
    "momentum",
    "weight_decay",
    "clip_norm",
    "max_steps",
    "pretrain_rotation_epochs",
    "stuff_combined",
    "pathway",
    "val",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtractorKey {
    Preset(String),
    Layers(ExtractorConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathwayKey {
    Roi,
    Crop(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mtl,
    Cl,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_clip_norm() -> Option<f64> {
    Some(DEFAULT_CLIP_NORM)
}

fn default_pathway() -> PathwayKey {
    PathwayKey::Roi
}

fn default_val() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub extractor: ExtractorKey,
    pub feature_dim: usize,
    pub heads: Vec<Head>,
    pub mode: Mode,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub weights: BTreeMap<Head, f64>,
    #[serde(default)]
    pub stages: Option<Vec<Head>>,
    #[serde(default)]
    pub short_edge: Option<usize>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub pretrain_rotation_epochs: usize,
    #[serde(default)]
    pub stuff_combined: bool,
    #[serde(default = "default_pathway")]
    pub pathway: PathwayKey,
    #[serde(default = "default_val")]
    pub val: bool,
}

impl TrainConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn extractor(&self) -> Result<ExtractorConfig> {
        match &self.extractor {
            ExtractorKey::Preset(name) => ExtractorConfig::preset(name),
            ExtractorKey::Layers(c) => Ok(c.clone()),
        }
    }

    pub fn supervision(&self) -> Result<SupervisionConfig> {
        let aux: Vec<Head> = match (&self.stages, self.mode) {
            (Some(order), Mode::Cl) => {
                let mut listed: Vec<Head> = order.clone();
                for h in &self.heads {
                    if *h != Head::Cls && !listed.contains(h) {
                        return Err(Error::Config(format!("head {h} is missing from `stages`")));
                    }
                }
                listed.retain(|h| *h != Head::Cls);
                listed
            }
            _ => self.heads.iter().copied().filter(|&h| h != Head::Cls).collect(),
        };
        let rotation_first = self.pretrain_rotation_epochs > 0;
        let mut cfg = SupervisionConfig::new(
            &aux.iter().copied().filter(|&h| !(rotation_first && h == Head::Rotation)).collect::<Vec<_>>(),
            self.mode == Mode::Cl,
        )?;
        if rotation_first {
            cfg.heads.insert(
                Head::Rotation,
                HeadSetting {
                    weight: Head::Rotation.default_weight(),
                    labeled_fraction: 1.0,
                },
            );
        }
        for (h, w) in &self.weights {
            match cfg.heads.get_mut(h) {
                Some(s) => s.weight = *w,
                None => return Err(Error::Config(format!("weight given for head {h}, which is not enabled"))),
            }
        }
        cfg.stuff_combined = self.stuff_combined;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn plan(&self) -> Result<TrainingPlan> {
        let cfg = self.supervision()?;
        let o = PlanOptions {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            short_edge: self.short_edge,
            seed: self.seed,
            max_steps: self.max_steps,
        };
        let mut plan = if self.pretrain_rotation_epochs > 0 {
            let mut rest = cfg.clone();
            rest.heads.remove(&Head::Rotation);
            if let Combination::Cl { stages } = &mut rest.combination {
                stages.retain(|h| *h != Head::Rotation);
            }
            TrainingPlan::rotation_pretrain(&rest, &o, self.pretrain_rotation_epochs)
        } else {
            TrainingPlan::from_supervision(&cfg, &o)
        };
        plan.momentum = self.momentum;
        plan.weight_decay = self.weight_decay;
        plan.clip_norm = self.clip_norm;
        plan.check(&cfg)?;
        Ok(plan)
    }

    pub fn model_config(&self, vocabulary: Vocabulary) -> Result<ModelConfig> {
        let cfg = self.supervision()?;
        let heads: Vec<Head> = cfg.heads.keys().copied().collect();
        let mut mc = ModelConfig::new(self.extractor()?, self.feature_dim, &heads, vocabulary);
        mc.stuff_combined = self.stuff_combined;
        mc.pathway = match self.pathway {
            PathwayKey::Roi => Pathway::Roi,
            PathwayKey::Crop(size) => Pathway::Crop { size },
        };
        Ok(mc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"extractor": "tiny", "feature_dim": 16, "heads": ["cls", "seg_fcn", "attribute"],
        "mode": "cl", "epochs": 2, "lr": 0.1, "batch_size": 8, "seed": 3}"#;

    #[test]
    fn parses_and_builds_a_curriculum() {
        let c = TrainConfig::parse(BASE, "cfg").unwrap();
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.clip_norm, Some(1.0));
        let off = TrainConfig::parse(&BASE.replace(r#""seed": 3"#, r#""seed": 3, "clip_norm": null"#), "cfg").unwrap();
        assert_eq!(off.clip_norm, None);
        let plan = c.plan().unwrap();
        assert_eq!(plan.stages.len(), 3);
        assert_eq!(plan.stages[2].heads, vec![Head::Cls, Head::SegFcn, Head::Attribute]);
        assert_eq!(c.supervision().unwrap().weight(Head::Attribute), 25.0);
    }

    #[test]
    fn missing_key_is_named() {
        let text = BASE.replace(r#""lr": 0.1, "#, "");
        let err = TrainConfig::parse(&text, "cfg").unwrap_err().to_string();
        assert!(err.contains("missing field `lr`"), "{err}");
        let text = BASE.replace(r#""seed": 3"#, r#""seed": 3, "speed": 1"#);
        assert!(TrainConfig::parse(&text, "cfg").unwrap_err().to_string().contains("speed"));
    }

    #[test]
    fn rotation_pretrain_plan() {
        let text = BASE.replace(r#""seed": 3"#, r#""seed": 3, "pretrain_rotation_epochs": 1, "mode": "mtl""#)
            .replace(r#""mode": "cl", "#, "");
        let plan = TrainConfig::parse(&text, "cfg").unwrap().plan().unwrap();
        assert_eq!(plan.stages[0].heads, vec![Head::Rotation]);
        assert_eq!(plan.stages[0].epochs, 1);
        assert_eq!(plan.stages[1].heads, vec![Head::Cls, Head::Attribute, Head::SegFcn]);
    }
}
