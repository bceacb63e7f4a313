//! Raw scene-parsing annotations and the synthetic-fixture JSON format.
//!
//! Fixture schema (version 1):
//!
//! ```json
//! {
//!   "attribute_vocabulary": ["red", "wooden"],
//!   "categories": [
//!     {"name": "chair", "kind": "object", "attributes": ["wooden"],
//!      "hierarchy": ["entity", "furniture", "seat", "chair"]},
//!     {"name": "leg", "kind": "part"},
//!     {"name": "sky", "kind": "stuff"}
//!   ],
//!   "images": [
//!     {"uri": "img/0001.png", "width": 64, "height": 48, "scene": "kitchen",
//!      "stuff_mask": "img/0001_stuff.png",
//!      "objects": [
//!        {"name": "chair", "rect": [x, y, w, h], "parts": ["leg"]},
//!        {"name": "chair", "polygon": [[x, y], ...]},
//!        {"name": "chair", "rle": [bg, fg, bg, ...]}
//!      ]}
//!   ]
//! }
//! ```
//!
//! Exactly one of `rect`, `polygon`, `rle` describes each object's mask, in
//! image pixel coordinates. Stuff masks are 16-bit grayscale PNGs whose value
//! `v > 0` marks stuff vocabulary entry `v - 1` (stuff categories by id).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{CategoryKind, Rle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCategory {
    pub name: String,
    pub kind: Option<CategoryKind>,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub hierarchy: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawObject {
    pub name: String,
    pub mask: Rle,
    pub parts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub uri: String,
    pub width: u32,
    pub height: u32,
    pub scene: Option<String>,
    pub stuff_mask_uri: Option<String>,
    pub objects: Vec<RawObject>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawAnnotationSet {
    pub attribute_vocabulary: Vec<String>,
    pub categories: Vec<RawCategory>,
    pub images: Vec<RawImage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureObject {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<[i64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureImage {
    pub uri: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stuff_mask: Option<String>,
    pub objects: Vec<FixtureObject>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    #[serde(default)]
    pub attribute_vocabulary: Vec<String>,
    pub categories: Vec<RawCategory>,
    pub images: Vec<FixtureImage>,
}

impl Fixture {
    pub fn parse(bytes: &[u8], origin: &str) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| {
            Error::parse(format!("{origin}:{}:{}", e.line(), e.column()), e)
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes, &path.display().to_string())
    }

    pub fn into_raw(self) -> Result<RawAnnotationSet> {
        let mut images = Vec::with_capacity(self.images.len());
        for (i, img) in self.images.into_iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(Error::parse(format!("images[{i}]"), "zero-sized image"));
            }
            let mut objects = Vec::with_capacity(img.objects.len());
            for (j, obj) in img.objects.into_iter().enumerate() {
                let rec = format!("images[{i}].objects[{j}]");
                let mask = match (&obj.rect, &obj.polygon, &obj.rle) {
                    (Some([x, y, w, h]), None, None) => {
                        Rle::from_rect(img.width, img.height, *x, *y, x + w, y + h)
                    }
                    (None, Some(poly), None) => {
                        let pts: Vec<(f64, f64)> = poly.iter().map(|p| (p[0], p[1])).collect();
                        Rle::from_polygon(img.width, img.height, &pts)
                    }
                    (None, None, Some(counts)) => {
                        let rle = Rle {
                            width: img.width,
                            height: img.height,
                            counts: counts.clone(),
                        };
                        if !rle.is_well_formed() {
                            return Err(Error::parse(rec, "rle runs do not cover the image"));
                        }
                        rle
                    }
                    _ => {
                        return Err(Error::parse(
                            rec,
                            "exactly one of rect, polygon, rle is required",
                        ))
                    }
                };
                if mask.area() == 0 {
                    return Err(Error::parse(rec, "empty mask"));
                }
                objects.push(RawObject {
                    name: obj.name,
                    mask,
                    parts: obj.parts,
                });
            }
            images.push(RawImage {
                uri: img.uri,
                width: img.width,
                height: img.height,
                scene: img.scene,
                stuff_mask_uri: img.stuff_mask,
                objects,
            });
        }
        Ok(RawAnnotationSet {
            attribute_vocabulary: self.attribute_vocabulary,
            categories: self.categories,
            images,
        })
    }
}
