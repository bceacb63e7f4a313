use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every supervision head the trainer knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Cls,
    Attribute,
    Hierarchy,
    Part,
    Bbox,
    SegRegion,
    SegFcn,
    Stuff,
    Scene,
    Rotation,
    PatchLocation,
}

/// Where a head attaches in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadLevel {
    /// Consumes region feature vectors (or aligned region crops).
    Object,
    /// Consumes the whole-image feature map.
    Image,
    /// Consumes the extractor output of an edited image.
    SelfSupervised,
}

impl Head {
    pub const ALL: [Head; 11] = [
        Head::Cls,
        Head::Attribute,
        Head::Hierarchy,
        Head::Part,
        Head::Bbox,
        Head::SegRegion,
        Head::SegFcn,
        Head::Stuff,
        Head::Scene,
        Head::Rotation,
        Head::PatchLocation,
    ];

    /// Heads whose labels can be partially masked by the supervision-fraction regime.
    pub const MASKABLE: [Head; 8] = [
        Head::Attribute,
        Head::Hierarchy,
        Head::Part,
        Head::Bbox,
        Head::SegRegion,
        Head::SegFcn,
        Head::Stuff,
        Head::Scene,
    ];

    pub fn level(self) -> HeadLevel {
        match self {
            Head::Cls
            | Head::Attribute
            | Head::Hierarchy
            | Head::Part
            | Head::Bbox
            | Head::SegRegion => HeadLevel::Object,
            Head::SegFcn | Head::Stuff | Head::Scene => HeadLevel::Image,
            Head::Rotation | Head::PatchLocation => HeadLevel::SelfSupervised,
        }
    }

    /// Default loss weight. Stuff has no published weight and shares the
    /// segmentation weight.
    pub fn default_weight(self) -> f64 {
        match self {
            Head::Cls => 1.0,
            Head::Attribute => 25.0,
            Head::Hierarchy => 1.0,
            Head::Scene => 0.2,
            Head::Part => 25.0,
            Head::Bbox => 5.0,
            Head::SegRegion | Head::SegFcn | Head::Stuff => 0.5,
            Head::Rotation => 10.0,
            Head::PatchLocation => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Cls => "cls",
            Head::Attribute => "attribute",
            Head::Hierarchy => "hierarchy",
            Head::Part => "part",
            Head::Bbox => "bbox",
            Head::SegRegion => "seg_region",
            Head::SegFcn => "seg_fcn",
            Head::Stuff => "stuff",
            Head::Scene => "scene",
            Head::Rotation => "rotation",
            Head::PatchLocation => "patch_location",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Head::ALL
            .into_iter()
            .find(|h| h.name() == key)
            .or(match key.as_str() {
                "attr" => Some(Head::Attribute),
                "hier" | "hie" => Some(Head::Hierarchy),
                "seg" => Some(Head::SegFcn),
                "patch" => Some(Head::PatchLocation),
                _ => None,
            })
            .ok_or_else(|| Error::Argument(format!("unknown head '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSetting {
    pub weight: f64,
    pub labeled_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Combination {
    /// All heads at once.
    Mtl,
    /// Auxiliary heads added one per stage in the listed order.
    Cl { stages: Vec<Head> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionConfig {
    pub heads: BTreeMap<Head, HeadSetting>,
    pub combination: Combination,
    /// Stuff head predicts base classes plus stuff classes (background terms
    /// weighted 0.1) instead of a binary object/stuff label.
    #[serde(default)]
    pub stuff_combined: bool,
}

impl SupervisionConfig {
    /// Classification plus `aux` heads at their default weights. For CL the
    /// stage order is the order of `aux`.
    pub fn new(aux: &[Head], cl: bool) -> Result<Self> {
        let mut heads = BTreeMap::new();
        heads.insert(
            Head::Cls,
            HeadSetting {
                weight: 1.0,
                labeled_fraction: 1.0,
            },
        );
        let mut order = Vec::new();
        for &h in aux {
            if h == Head::Cls {
                continue;
            }
            if heads
                .insert(
                    h,
                    HeadSetting {
                        weight: h.default_weight(),
                        labeled_fraction: 1.0,
                    },
                )
                .is_some()
            {
                return Err(Error::Argument(format!("head {h} listed twice")));
            }
            order.push(h);
        }
        let combination = if cl {
            Combination::Cl { stages: order }
        } else {
            Combination::Mtl
        };
        let cfg = SupervisionConfig {
            heads,
            combination,
            stuff_combined: false,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn weight(&self, head: Head) -> f64 {
        self.heads.get(&head).map_or(0.0, |s| s.weight)
    }

    pub fn enabled(&self, head: Head) -> bool {
        self.heads.contains_key(&head)
    }

    pub fn auxiliary(&self) -> impl Iterator<Item = Head> + '_ {
        self.heads.keys().copied().filter(|&h| h != Head::Cls)
    }

    pub fn check(&self) -> Result<()> {
        match self.heads.get(&Head::Cls) {
            Some(s) if s.weight == 1.0 => {}
            _ => {
                return Err(Error::Config(
                    "cls head must be enabled with weight 1.0".into(),
                ))
            }
        }
        for (h, s) in &self.heads {
            if !(s.weight >= 0.0 && s.weight.is_finite()) {
                return Err(Error::Config(format!("head {h}: weight must be >= 0")));
            }
            if !(0.0..=1.0).contains(&s.labeled_fraction) {
                return Err(Error::Config(format!(
                    "head {h}: labeled_fraction must lie in [0, 1]"
                )));
            }
        }
        if let Combination::Cl { stages } = &self.combination {
            let mut listed: Vec<Head> = stages.clone();
            listed.sort();
            let before = listed.len();
            listed.dedup();
            let aux: Vec<Head> = self.auxiliary().collect();
            if before != listed.len() || listed != aux {
                return Err(Error::Config(
                    "CL stage list must cover exactly the enabled auxiliary heads".into(),
                ));
            }
        }
        Ok(())
    }
}
