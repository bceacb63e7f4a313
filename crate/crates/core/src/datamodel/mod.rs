//! Canonical benchmark types shared by every other module.

mod geometry;
mod mask;
mod supervision;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub use geometry::BBox;
pub use mask::Rle;
pub use supervision::{Combination, Head, HeadLevel, HeadSetting, SupervisionConfig};
pub use validate::{validate_manifest, Violation};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Categories need more than this many instances to be base classes.
pub const BASE_MIN_EXCLUSIVE: u32 = 100;
/// Object categories need at least this many instances to be kept.
pub const MIN_INSTANCES: u32 = 15;
/// Support instances per novel category.
pub const SUPPORT_SIZE: usize = 5;
/// Length of every hierarchy path.
pub const HIERARCHY_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Object,
    Part,
    Stuff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Base,
    NovelVal,
    NovelTest,
    Dropped,
}

impl Split {
    pub fn is_novel(self) -> bool {
        matches!(self, Split::NovelVal | Split::NovelTest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    BaseTrain,
    BaseVal,
    NovelSupport,
    NovelQuery,
}

/// Fixed-length bit vector over the attribute vocabulary, serialized as a
/// string of `0`/`1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttributeBits(pub Vec<bool>);

impl AttributeBits {
    pub fn zeros(len: usize) -> Self {
        AttributeBits(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl Serialize for AttributeBits {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let text: String = self.0.iter().map(|&b| if b { '1' } else { '0' }).collect();
        s.serialize_str(&text)
    }
}

impl<'de> Deserialize<'de> for AttributeBits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "attribute bit '{other}' is not 0 or 1"
                ))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(AttributeBits)
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub category_id: u32,
    pub name: String,
    pub kind: CategoryKind,
    /// Instance count in the full annotation set; regimes never rewrite it.
    pub instance_count: u32,
    pub attributes: AttributeBits,
    pub hierarchy_path: Vec<String>,
    pub split: Split,
    /// Set by Scarce-Image when no training instance of a base category survives.
    #[serde(default, skip_serializing_if = "is_false")]
    pub train_orphaned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub instance_id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub tight_box: BBox,
    pub region_box: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Rle>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub part_labels: BTreeSet<u32>,
    pub subset: Subset,
    /// Position in the seeded support draw (0..5) for novel support instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_rank: Option<u8>,
    /// Heads whose labels are withheld for this instance.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub masked_heads: BTreeSet<Head>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub uri: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stuff_mask_uri: Option<String>,
    pub instance_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub masked_heads: BTreeSet<Head>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RegimeOp {
    ScarceClass { keep_ratio: f64 },
    ScarceImage { keep_ratio: f64, seed: u64 },
    ScarceClassAdjust { keep_ratio: f64, seed: u64 },
    SupervisionFraction { head: Head, fraction: f64, seed: u64 },
}

impl RegimeOp {
    pub fn name(&self) -> &'static str {
        match self {
            RegimeOp::ScarceClass { .. } => "scarce-class",
            RegimeOp::ScarceImage { .. } => "scarce-image",
            RegimeOp::ScarceClassAdjust { .. } => "scarce-class-adjust",
            RegimeOp::SupervisionFraction { .. } => "supervision-fraction",
        }
    }

    pub fn ratio(&self) -> f64 {
        match *self {
            RegimeOp::ScarceClass { keep_ratio }
            | RegimeOp::ScarceImage { keep_ratio, .. }
            | RegimeOp::ScarceClassAdjust { keep_ratio, .. } => keep_ratio,
            RegimeOp::SupervisionFraction { fraction, .. } => fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Full,
    Derived { base_hash: String, op: RegimeOp },
}

impl Regime {
    pub fn id(&self) -> String {
        match self {
            Regime::Full => "full".to_string(),
            Regime::Derived { op, .. } => format!("{}-{}", op.name(), op.ratio()),
        }
    }
}

/// Which command produced an artifact, for experiment provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Producer {
    pub command: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer: Option<Producer>,
    pub context_ratio: f64,
    pub seeds: BTreeMap<String, u64>,
    pub regime: Regime,
    pub attribute_vocabulary: Vec<String>,
    pub scene_vocabulary: Vec<String>,
    pub categories: Vec<CategoryRecord>,
    pub images: Vec<ImageRecord>,
    pub instances: Vec<ObjectInstance>,
}

impl BenchmarkManifest {
    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Parses a manifest, naming the offending record on failure.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::parse("manifest", e))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::parse("manifest", "missing schema_version"))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(Error::parse(
                "manifest",
                format!("unsupported schema_version {version}"),
            ));
        }
        serde_json::from_value::<BenchmarkManifest>(value.clone()).map_err(|e| {
            for table in ["categories", "images", "instances"] {
                if let Some(rows) = value.get(table).and_then(|v| v.as_array()) {
                    for (i, row) in rows.iter().enumerate() {
                        let err = match table {
                            "categories" => {
                                serde_json::from_value::<CategoryRecord>(row.clone()).err()
                            }
                            "images" => serde_json::from_value::<ImageRecord>(row.clone()).err(),
                            _ => serde_json::from_value::<ObjectInstance>(row.clone()).err(),
                        };
                        if let Some(err) = err {
                            return Error::parse(format!("{table}[{i}]"), err);
                        }
                    }
                }
            }
            Error::parse("manifest", e)
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes).map_err(|e| match e {
            Error::Parse { record, message } => Error::Parse {
                record: format!("{}: {record}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the serialized manifest, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json()))
    }

    pub fn index(&self) -> ManifestIndex<'_> {
        ManifestIndex::new(self)
    }

    pub fn is_full(&self) -> bool {
        self.regime == Regime::Full
    }

    pub fn categories_with_split(&self, split: Split) -> impl Iterator<Item = &CategoryRecord> {
        self.categories.iter().filter(move |c| c.split == split)
    }

    pub fn instances_in(&self, subset: Subset) -> impl Iterator<Item = &ObjectInstance> {
        self.instances.iter().filter(move |i| i.subset == subset)
    }

    pub fn train_instance_count(&self) -> usize {
        self.instances_in(Subset::BaseTrain).count()
    }

    /// Base categories ordered by id; their position is the classifier index.
    pub fn base_classes(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .categories_with_split(Split::Base)
            .map(|c| c.category_id)
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn part_vocabulary(&self) -> Vec<u32> {
        self.kind_ids(CategoryKind::Part)
    }

    pub fn stuff_vocabulary(&self) -> Vec<u32> {
        self.kind_ids(CategoryKind::Stuff)
    }

    fn kind_ids(&self, kind: CategoryKind) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .categories
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.category_id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Per-level label vocabularies of the base categories' hierarchy paths.
    pub fn hierarchy_vocabularies(&self) -> Vec<Vec<String>> {
        (0..HIERARCHY_LEVELS)
            .map(|level| {
                let set: BTreeSet<&str> = self
                    .categories_with_split(Split::Base)
                    .filter_map(|c| c.hierarchy_path.get(level).map(String::as_str))
                    .collect();
                set.into_iter().map(str::to_string).collect()
            })
            .collect()
    }
}

pub struct ManifestIndex<'a> {
    pub categories: BTreeMap<u32, &'a CategoryRecord>,
    pub images: BTreeMap<u64, &'a ImageRecord>,
    pub instances: BTreeMap<u64, &'a ObjectInstance>,
}

impl<'a> ManifestIndex<'a> {
    pub fn new(m: &'a BenchmarkManifest) -> Self {
        ManifestIndex {
            categories: m.categories.iter().map(|c| (c.category_id, c)).collect(),
            images: m.images.iter().map(|i| (i.image_id, i)).collect(),
            instances: m.instances.iter().map(|i| (i.instance_id, i)).collect(),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Base => "base",
            Split::NovelVal => "novel_val",
            Split::NovelTest => "novel_test",
            Split::Dropped => "dropped",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_manifest() -> BenchmarkManifest {
        BenchmarkManifest {
            schema_version: SCHEMA_VERSION,
            producer: None,
            context_ratio: 2.7,
            seeds: BTreeMap::from([("jitter".to_string(), 9)]),
            regime: Regime::Full,
            attribute_vocabulary: vec!["red".into(), "wooden".into()],
            scene_vocabulary: vec!["kitchen".into()],
            categories: vec![CategoryRecord {
                category_id: 0,
                name: "leg".into(),
                kind: CategoryKind::Part,
                instance_count: 3,
                attributes: AttributeBits(vec![false, true]),
                hierarchy_path: vec![],
                split: Split::Dropped,
                train_orphaned: false,
            }],
            images: vec![ImageRecord {
                image_id: 1,
                uri: "a.png".into(),
                width: 10,
                height: 10,
                scene_label: Some(0),
                stuff_mask_uri: None,
                instance_ids: vec![],
                masked_heads: BTreeSet::new(),
            }],
            instances: vec![],
        }
    }

    #[test]
    fn json_round_trip() {
        let m = tiny_manifest();
        let back = BenchmarkManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.content_hash(), m.content_hash());
    }

    #[test]
    fn parse_error_names_record() {
        let mut v: serde_json::Value = serde_json::from_slice(&tiny_manifest().to_json()).unwrap();
        v["categories"][0]["kind"] = serde_json::Value::String("gadget".into());
        let err = BenchmarkManifest::from_json(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(err.to_string().contains("categories[0]"), "{err}");
    }

    #[test]
    fn rejects_unknown_schema() {
        let mut v: serde_json::Value = serde_json::from_slice(&tiny_manifest().to_json()).unwrap();
        v["schema_version"] = 99.into();
        assert!(BenchmarkManifest::from_json(&serde_json::to_vec(&v).unwrap()).is_err());
    }

    #[test]
    fn attribute_bits_serialize_as_text() {
        let s = serde_json::to_string(&AttributeBits(vec![true, false, true])).unwrap();
        assert_eq!(s, "\"101\"");
        assert!(serde_json::from_str::<AttributeBits>("\"12\"").is_err());
    }
}
