//! Parser for ADE20K-style per-image JSON annotations.
//!
//! The dataset root is walked for `*.json` files holding an `annotation`
//! object with `filename`, `imsize` `[h, w, c]`, `scene` and an `object`
//! list. Objects at `parts.part_level == 0` are whole objects; deeper levels
//! attach their name to the parent named by `parts.ispartof`. Object kinds,
//! attributes and hierarchy paths come from a separate kinds file with the
//! same `attribute_vocabulary` / `categories` layout as a fixture.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use walkdir::WalkDir;

use super::raw::{RawAnnotationSet, RawCategory, RawImage, RawObject};
use crate::datamodel::Rle;
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
pub struct KindsFile {
    #[serde(default)]
    pub attribute_vocabulary: Vec<String>,
    pub categories: Vec<RawCategory>,
}

#[derive(Debug, Deserialize)]
struct AnnotationFile {
    annotation: Annotation,
}

#[derive(Debug, Deserialize)]
struct Annotation {
    filename: String,
    imsize: Vec<u32>,
    #[serde(default)]
    scene: SceneField,
    #[serde(default)]
    object: Vec<AdeObject>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(untagged)]
enum SceneField {
    List(Vec<String>),
    One(String),
    #[default]
    Missing,
}

#[derive(Debug, Deserialize)]
struct AdeObject {
    id: i64,
    name: String,
    #[serde(default)]
    parts: AdeParts,
    polygon: AdePolygon,
}

#[derive(Debug, Deserialize, Default)]
struct AdeParts {
    #[serde(default, alias = "is_part_of")]
    ispartof: IdOrList,
    #[serde(default)]
    part_level: i64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(untagged)]
enum IdOrList {
    Id(i64),
    List(Vec<i64>),
    #[default]
    None,
}

impl IdOrList {
    fn first(&self) -> Option<i64> {
        match self {
            IdOrList::Id(i) => Some(*i),
            IdOrList::List(v) => v.first().copied(),
            IdOrList::None => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct AdePolygon {
    x: Vec<f64>,
    y: Vec<f64>,
}

pub fn parse_ade20k(root: &Path, kinds_path: &Path) -> Result<RawAnnotationSet> {
    let bytes = std::fs::read(kinds_path).map_err(|e| Error::io(kinds_path, e))?;
    let kinds: KindsFile = serde_json::from_slice(&bytes).map_err(|e| {
        Error::parse(format!("{}:{}:{}", kinds_path.display(), e.line(), e.column()), e)
    })?;

    let mut files: Vec<_> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json"))
        .map(|e| e.into_path())
        .collect();
    files.sort();

    let mut images = Vec::new();
    for path in files {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let value: serde_json::Value = match serde_json::from_slice(&bytes) {
            Ok(v) => v,
            Err(e) => {
                return Err(Error::parse(
                    format!("{}:{}:{}", path.display(), e.line(), e.column()),
                    e,
                ))
            }
        };
        if value.get("annotation").is_none() {
            continue;
        }
        let file: AnnotationFile = serde_json::from_value(value)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        let rel_dir = path
            .parent()
            .and_then(|p| p.strip_prefix(root).ok())
            .unwrap_or(Path::new(""));
        images.push(convert(file.annotation, rel_dir, &path)?);
    }
    Ok(RawAnnotationSet {
        attribute_vocabulary: kinds.attribute_vocabulary,
        categories: kinds.categories,
        images,
    })
}

fn convert(a: Annotation, rel_dir: &Path, origin: &Path) -> Result<RawImage> {
    let (height, width) = match a.imsize.as_slice() {
        [h, w, ..] if *h > 0 && *w > 0 => (*h, *w),
        _ => return Err(Error::parse(origin.display().to_string(), "bad imsize")),
    };
    let mut wholes: BTreeMap<i64, RawObject> = BTreeMap::new();
    let mut part_links = Vec::new();
    for obj in a.object {
        if obj.polygon.x.len() != obj.polygon.y.len() {
            return Err(Error::parse(
                format!("{} object {}", origin.display(), obj.id),
                "polygon x/y length mismatch",
            ));
        }
        if obj.parts.part_level > 0 {
            if let Some(parent) = obj.parts.ispartof.first() {
                part_links.push((parent, obj.name));
            }
            continue;
        }
        let pts: Vec<(f64, f64)> = obj.polygon.x.iter().copied().zip(obj.polygon.y.iter().copied()).collect();
        let mask = Rle::from_polygon(width, height, &pts);
        if mask.area() == 0 {
            continue;
        }
        wholes.insert(
            obj.id,
            RawObject {
                name: obj.name,
                mask,
                parts: Vec::new(),
            },
        );
    }
    for (parent, name) in part_links {
        if let Some(p) = wholes.get_mut(&parent) {
            if !p.parts.contains(&name) {
                p.parts.push(name);
            }
        }
    }
    let scene = match a.scene {
        SceneField::List(v) if !v.is_empty() => Some(v.join("/")),
        SceneField::One(s) if !s.is_empty() => Some(s),
        _ => None,
    };
    Ok(RawImage {
        uri: rel_dir.join(&a.filename).to_string_lossy().into_owned(),
        width,
        height,
        scene,
        stuff_mask_uri: None,
        objects: wholes.into_values().collect(),
    })
}
