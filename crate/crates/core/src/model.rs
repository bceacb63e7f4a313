//! A trainable model: extractor, region pathway and the enabled heads over
//! one parameter buffer, plus the checkpoint container.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{crop_and_pool, Extractor, ExtractorConfig, FeatureMap, RegionFeature, RegionPathway, RoiAlign};
use crate::datamodel::{BenchmarkManifest, Head, Producer};
use crate::error::{Error, Result};
use crate::heads::{
    BoxRegression, Classifier, Hierarchy, MultiLabel, PatchLocation, PooledClassifier, SegFcn, SegRegion, Stuff,
    MASK_SIZE,
};
use crate::nn::Params;
use crate::raster::Image;
use crate::seeds::{derive, keyed, Stream};

/// Label spaces of one benchmark, in class-index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub base: Vec<u32>,
    pub attributes: usize,
    pub hierarchy: Vec<Vec<String>>,
    pub parts: Vec<u32>,
    pub scenes: usize,
    pub stuff: Vec<u32>,
}

impl Vocabulary {
    pub fn from_manifest(m: &BenchmarkManifest) -> Self {
        Vocabulary {
            base: m.base_classes(),
            attributes: m.attribute_vocabulary.len(),
            hierarchy: m.hierarchy_vocabularies(),
            parts: m.part_vocabulary(),
            scenes: m.scene_vocabulary.len(),
            stuff: m.stuff_vocabulary(),
        }
    }

    pub fn class_index(&self, category: u32) -> Option<usize> {
        self.base.binary_search(&category).ok()
    }

    pub fn part_index(&self, category: u32) -> Option<usize> {
        self.parts.binary_search(&category).ok()
    }

    pub fn hierarchy_index(&self, path: &[String]) -> Option<Vec<usize>> {
        if path.len() != self.hierarchy.len() {
            return None;
        }
        path.iter()
            .zip(&self.hierarchy)
            .map(|(name, vocab)| vocab.binary_search(name).ok())
            .collect()
    }
}

/// How a region becomes a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Pathway {
    /// RoI-Align on the whole-image feature map, then a linear projection.
    Roi,
    /// Crop the tight box, resize to `size`, extract and pool.
    Crop { size: usize },
}

/// Architecture descriptor stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub roi: RoiAlign,
    pub feature_dim: usize,
    pub pathway: Pathway,
    pub heads: Vec<Head>,
    pub vocabulary: Vocabulary,
    pub stuff_combined: bool,
    pub mask_size: usize,
    /// Grid cell of each patch-location label.
    pub patch_cells: Vec<usize>,
}

impl ModelConfig {
    pub fn new(extractor: ExtractorConfig, feature_dim: usize, heads: &[Head], vocabulary: Vocabulary) -> Self {
        let mut hs: Vec<Head> = heads.to_vec();
        if !hs.contains(&Head::Cls) {
            hs.push(Head::Cls);
        }
        hs.sort();
        hs.dedup();
        ModelConfig {
            extractor,
            roi: RoiAlign::default(),
            feature_dim,
            pathway: Pathway::Roi,
            heads: hs,
            vocabulary,
            stuff_combined: false,
            mask_size: MASK_SIZE,
            patch_cells: (0..8).map(crate::heads::patch_cell).collect(),
        }
    }

    pub fn has(&self, head: Head) -> bool {
        self.heads.contains(&head)
    }

    pub fn region_dim(&self) -> usize {
        match self.pathway {
            Pathway::Roi => self.feature_dim,
            Pathway::Crop { .. } => self.extractor.out_channels(),
        }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub seed: u64,
    pub extractor: Extractor,
    pub region: RegionPathway,
    pub cls: Classifier,
    pub attribute: Option<MultiLabel>,
    pub hierarchy: Option<Hierarchy>,
    pub part: Option<MultiLabel>,
    pub bbox: Option<BoxRegression>,
    pub seg_region: Option<SegRegion>,
    pub seg_fcn: Option<SegFcn>,
    pub stuff: Option<Stuff>,
    pub scene: Option<PooledClassifier>,
    pub rotation: Option<PooledClassifier>,
    pub patch_location: Option<PatchLocation>,
}

fn nonempty(head: Head, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Config(format!("head {head} has an empty label vocabulary")));
    }
    Ok(n)
}

impl Model {
    /// Builds the model and initializes every parameter from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Params::default();
        let extractor = Extractor::new(&mut params, config.extractor.clone())?;
        let d_map = extractor.out_channels();
        let region = RegionPathway::new(&mut params, config.roi, d_map, config.feature_dim);
        let d = config.region_dim();
        let v = &config.vocabulary;
        let cls = Classifier::new(&mut params, Head::Cls, "cls", d, nonempty(Head::Cls, v.base.len())?);
        let mut model = Model {
            attribute: None,
            hierarchy: None,
            part: None,
            bbox: None,
            seg_region: None,
            seg_fcn: None,
            stuff: None,
            scene: None,
            rotation: None,
            patch_location: None,
            extractor,
            region,
            cls,
            params,
            seed,
            config: config.clone(),
        };
        let p = &mut model.params;
        for &h in &config.heads {
            match h {
                Head::Cls => {}
                Head::Attribute => {
                    model.attribute = Some(MultiLabel::new(p, h, d, nonempty(h, v.attributes)?));
                }
                Head::Hierarchy => {
                    let sizes: Vec<usize> = v.hierarchy.iter().map(|l| l.len()).collect();
                    for &s in &sizes {
                        nonempty(h, s)?;
                    }
                    model.hierarchy = Some(Hierarchy::new(p, d, &sizes));
                }
                Head::Part => model.part = Some(MultiLabel::new(p, h, d, nonempty(h, v.parts.len())?)),
                Head::Bbox => model.bbox = Some(BoxRegression::new(p, d)),
                Head::SegRegion => {
                    if config.pathway != Pathway::Roi {
                        return Err(Error::Config("seg_region needs the RoI pathway".into()));
                    }
                    let mut sr = SegRegion::new(p, d_map);
                    sr.align.size = config.mask_size;
                    model.seg_region = Some(sr);
                }
                Head::SegFcn => model.seg_fcn = Some(SegFcn::new(p, d_map, v.base.len())),
                Head::Stuff => {
                    model.stuff = Some(if config.stuff_combined {
                        Stuff::combined(p, d_map, v.base.len(), nonempty(h, v.stuff.len())?)
                    } else {
                        Stuff::plain(p, d_map)
                    })
                }
                Head::Scene => model.scene = Some(PooledClassifier::new(p, h, d_map, nonempty(h, v.scenes)?)),
                Head::Rotation => model.rotation = Some(PooledClassifier::new(p, h, d_map, 4)),
                Head::PatchLocation => model.patch_location = Some(PatchLocation::new(p, d_map)),
            }
        }
        for i in 0..model.params.specs.len() {
            model.init_param(i);
        }
        Ok(model)
    }

    /// Parameters are initialized independently, each from its own stream,
    /// so re-initializing one head reproduces its construction values.
    fn init_param(&mut self, index: usize) {
        let mut s = Stream::new(keyed(derive(self.seed, "init"), index as u64));
        self.params.init(crate::nn::ParamId(index), &mut s);
    }

    /// Indices of the parameters owned by `head`.
    pub fn head_params(&self, head: Head) -> Vec<usize> {
        let prefix = format!("{}.", head.name());
        self.params
            .specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.name.starts_with(&prefix))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn reinit_head(&mut self, head: Head) {
        for i in self.head_params(head) {
            self.init_param(i);
        }
    }

    pub fn feature_map(&self, image: &Image) -> FeatureMap {
        self.extractor.forward(&self.params, image)
    }

    /// Region feature of `region` (RoI pathway) or `tight` (crop pathway).
    pub fn region_feature(
        &self,
        image: &Image,
        fm: Option<&FeatureMap>,
        region: &crate::datamodel::BBox,
        tight: &crate::datamodel::BBox,
    ) -> Result<RegionFeature> {
        match self.config.pathway {
            Pathway::Roi => {
                let owned;
                let fm = match fm {
                    Some(f) => f,
                    None => {
                        owned = self.feature_map(image);
                        &owned
                    }
                };
                Ok(self.region.forward(&self.params, fm, region)?.0)
            }
            Pathway::Crop { size } => crop_and_pool(&self.extractor, &self.params, image, tight, size),
        }
    }

    pub fn param_hash(&self) -> String {
        self.params.hash()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Optimizer position, present in checkpoints written during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Last completed stage (0-based) and epoch within it.
    pub stage: usize,
    pub epoch: usize,
    pub step: u64,
    pub velocity: Vec<f64>,
}

/// Named arrays plus the architecture descriptor, as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub descriptor: ModelConfig,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer: Option<Producer>,
    pub arrays: BTreeMap<String, Array>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<TrainState>,
}

pub const CHECKPOINT_FORMAT: &str = "ltfs-checkpoint-1";

impl Checkpoint {
    pub fn from_model(model: &Model, config_hash: &str, state: Option<TrainState>) -> Self {
        let arrays = model
            .params
            .specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    s.name.clone(),
                    Array {
                        shape: s.shape.clone(),
                        values: model.params.get(crate::nn::ParamId(i)).to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            descriptor: model.config.clone(),
            seed: model.seed,
            config_hash: config_hash.into(),
            producer: None,
            arrays,
            state,
        }
    }

    /// Rebuilds the model and loads every named array.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.descriptor.clone(), self.seed)?;
        let names: Vec<String> = model.params.specs.iter().map(|s| s.name.clone()).collect();
        if names.len() != self.arrays.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} arrays, model expects {}",
                self.arrays.len(),
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            let a = self
                .arrays
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks array '{name}'")))?;
            let id = crate::nn::ParamId(i);
            if a.shape != model.params.specs[i].shape {
                return Err(Error::Config(format!("array '{name}' has shape {:?}", a.shape)));
            }
            model.params.get_mut(id).copy_from_slice(&a.values);
        }
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format '{}'", c.format)));
        }
        Ok(c)
    }
}

/// SHA-256 of any serializable configuration, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_manifest;

    fn config(heads: &[Head]) -> ModelConfig {
        let m = synthetic_manifest(&[120, 130, 150], &[20, 30], 1);
        ModelConfig::new(ExtractorConfig::tiny(4), 16, heads, Vocabulary::from_manifest(&m))
    }

    #[test]
    fn reinit_restores_construction_values() {
        let mut m = Model::new(config(&[Head::Attribute, Head::Scene]), 3).unwrap();
        let before = m.params.clone();
        let ids = m.head_params(Head::Scene);
        assert_eq!(ids.len(), 2);
        for &i in &ids {
            m.params.get_mut(crate::nn::ParamId(i)).iter_mut().for_each(|v| *v += 1.0);
        }
        m.reinit_head(Head::Scene);
        assert_eq!(m.params, before);
        assert!(m.head_params(Head::Cls).iter().all(|&i| m.params.specs[i].name.starts_with("cls.")));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut m = Model::new(config(&[Head::Hierarchy, Head::Rotation]), 5).unwrap();
        let mut s = Stream::new(9);
        m.params.values.iter_mut().for_each(|v| *v = s.normal() / 3.0);
        let ck = Checkpoint::from_model(&m, "abc", None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap().param_hash(), m.param_hash());
    }

    #[test]
    fn vocabulary_indices() {
        let m = synthetic_manifest(&[120, 130], &[20], 1);
        let v = Vocabulary::from_manifest(&m);
        assert_eq!(v.base.len(), 2);
        let c = m.categories_with_split(crate::datamodel::Split::Base).next().unwrap();
        assert!(v.class_index(c.category_id).is_some());
        assert!(v.hierarchy_index(&c.hierarchy_path).is_some());
    }
}
