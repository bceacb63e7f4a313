//! Synthetic annotation sets and rendered toy datasets for tests, demos and
//! desk-scale runs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::benchgen::{build_manifest, Fixture, FixtureImage, FixtureObject, RawAnnotationSet, RawCategory, RawImage, RawObject};
use crate::datamodel::{BenchmarkManifest, CategoryKind, Rle};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::seeds::Stream;
use crate::source::{write_label_map, LabelMap, MemorySource};

/// Long-tail counts `round(top * rank^-alpha)` for ranks `1..=n`.
pub fn zipf_counts(n: usize, alpha: f64, top: f64) -> Vec<u32> {
    (1..=n)
        .map(|r| (top * (r as f64).powf(-alpha)).round() as u32)
        .collect()
}

const ATTRIBUTES: [&str; 4] = ["red", "round", "wooden", "metal"];

fn object_category(name: &str, i: usize) -> RawCategory {
    RawCategory {
        name: name.to_string(),
        kind: Some(CategoryKind::Object),
        attributes: ATTRIBUTES
            .iter()
            .enumerate()
            .filter(|(a, _)| (i >> a) & 1 == 1)
            .map(|(_, s)| s.to_string())
            .collect(),
        hierarchy: vec![
            "entity".into(),
            format!("group{}", i % 3),
            format!("family{}", i % 5),
            name.to_string(),
        ],
    }
}

/// Annotation set with exactly `count` rectangle objects per named object
/// category, packed one to three per 64x48 image in seeded random order.
/// A part and a stuff category are added so every supervision vocabulary is
/// nonempty.
pub fn counts_raw(counts: &[(String, u32)], seed: u64) -> RawAnnotationSet {
    let mut stream = Stream::new(seed);
    let mut pool: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, (_, n))| std::iter::repeat_n(i, *n as usize))
        .collect();
    stream.shuffle(&mut pool);

    const SLOTS: [[i64; 4]; 3] = [[2, 2, 18, 20], [22, 10, 20, 20], [44, 4, 18, 30]];
    let mut images = Vec::new();
    let mut rest = &pool[..];
    while !rest.is_empty() {
        let take = (1 + stream.below(3) as usize).min(rest.len());
        let objects = rest[..take]
            .iter()
            .zip(SLOTS)
            .map(|(&c, [x, y, w, h])| RawObject {
                name: counts[c].0.clone(),
                mask: Rle::from_rect(64, 48, x, y, x + w, y + h),
                parts: if stream.below(2) == 0 { vec!["handle".into()] } else { vec![] },
            })
            .collect();
        images.push(RawImage {
            uri: format!("synthetic/{:06}.png", images.len() + 1),
            width: 64,
            height: 48,
            scene: Some(format!("scene{}", stream.below(3))),
            stuff_mask_uri: None,
            objects,
        });
        rest = &rest[take..];
    }

    let mut categories: Vec<RawCategory> = counts
        .iter()
        .enumerate()
        .map(|(i, (name, _))| object_category(name, i))
        .collect();
    categories.push(RawCategory {
        name: "handle".into(),
        kind: Some(CategoryKind::Part),
        attributes: vec![],
        hierarchy: vec![],
    });
    categories.push(RawCategory {
        name: "ground".into(),
        kind: Some(CategoryKind::Stuff),
        attributes: vec![],
        hierarchy: vec![],
    });
    RawAnnotationSet {
        attribute_vocabulary: ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        categories,
        images,
    }
}

/// Full manifest with base categories `b000..` and novel categories `n000..`
/// of the given instance counts.
pub fn synthetic_manifest(base_counts: &[u32], novel_counts: &[u32], seed: u64) -> BenchmarkManifest {
    let counts: Vec<(String, u32)> = base_counts
        .iter()
        .enumerate()
        .map(|(i, &n)| (format!("b{i:03}"), n))
        .chain(novel_counts.iter().enumerate().map(|(i, &n)| (format!("n{i:03}"), n)))
        .collect();
    build_manifest(&counts_raw(&counts, seed), 2.7, seed).expect("synthetic manifest builds")
}

/// Rendered toy dataset: small images with solid-colored rectangles, one
/// distinct color per class, over a scene-tinted background with sky and
/// ground stuff bands.
#[derive(Debug, Clone)]
pub struct ToySpec {
    pub image_size: usize,
    pub images: usize,
    pub objects_per_image: usize,
    pub base_classes: usize,
    pub novel_classes: usize,
    pub novel_instances: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            image_size: 32,
            images: 200,
            objects_per_image: 2,
            base_classes: 3,
            novel_classes: 0,
            novel_instances: 20,
            seed: 0,
        }
    }
}

pub struct ToyData {
    pub fixture: Fixture,
    pub source: MemorySource,
}

fn class_color(k: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 10] = [
        [0.9, 0.1, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.2, 0.9],
        [0.9, 0.9, 0.1],
        [0.9, 0.1, 0.9],
        [0.1, 0.9, 0.9],
        [1.0, 0.55, 0.0],
        [0.5, 0.0, 0.6],
        [0.55, 0.35, 0.15],
        [1.0, 1.0, 1.0],
    ];
    PALETTE[k % PALETTE.len()]
}

pub fn render_toy(spec: &ToySpec) -> ToyData {
    let mut stream = Stream::new(spec.seed);
    let s = spec.image_size;
    let quad = s / 2;
    let class_names: Vec<String> = (0..spec.base_classes)
        .map(|k| format!("base{k}"))
        .chain((0..spec.novel_classes).map(|k| format!("novel{k}")))
        .collect();

    // novel objects take the spare quadrants of the first images
    let mut novel_queue: Vec<usize> = (0..spec.novel_classes)
        .flat_map(|k| std::iter::repeat_n(spec.base_classes + k, spec.novel_instances))
        .collect();
    stream.shuffle(&mut novel_queue);

    let mut source = MemorySource::default();
    let mut images = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let scene = stream.below(2) as usize;
        let tint = if scene == 0 { [0.35, 0.3, 0.3] } else { [0.3, 0.3, 0.4] };
        let mut img = Image::new(3, s, s);
        let band = (s / 8).max(1);
        let mut labels = vec![0u16; s * s];
        for y in 0..s {
            for x in 0..s {
                let noise = 0.05 * stream.unit();
                for (c, t) in tint.iter().enumerate() {
                    img.set(c, y, x, t + noise);
                }
                if y < band {
                    labels[y * s + x] = 2; // sky
                    img.set(2, y, x, 0.6 + noise);
                } else if y >= s - band {
                    labels[y * s + x] = 1; // ground
                    img.set(0, y, x, 0.45 + noise);
                }
            }
        }

        let mut quadrants = [0usize, 1, 2, 3];
        stream.shuffle(&mut quadrants);
        let mut classes: Vec<usize> = (0..spec.objects_per_image.min(4))
            .map(|_| stream.below(spec.base_classes as u64) as usize)
            .collect();
        if classes.len() < 4 {
            if let Some(k) = novel_queue.pop() {
                classes.push(k);
            }
        }
        let mut objects = Vec::new();
        for (&k, &q) in classes.iter().zip(&quadrants) {
            let (qy, qx) = ((q / 2) * quad, (q % 2) * quad);
            let lo = (quad / 2).max(2);
            let w = lo + stream.below((quad - lo) as u64) as usize;
            let h = lo + stream.below((quad - lo) as u64) as usize;
            let x0 = qx + stream.below((quad - w + 1) as u64) as usize;
            let y0 = qy + stream.below((quad - h + 1) as u64) as usize;
            let color = class_color(k);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    for (c, v) in color.iter().enumerate() {
                        img.set(c, y, x, *v);
                    }
                    labels[y * s + x] = 0;
                }
            }
            objects.push(FixtureObject {
                name: class_names[k].clone(),
                rect: Some([x0 as i64, y0 as i64, w as i64, h as i64]),
                polygon: None,
                rle: None,
                parts: if k % 2 == 0 { vec!["top".into()] } else { vec![] },
            });
        }
        let uri = format!("toy/{:05}.png", i + 1);
        let stuff_uri = format!("toy/{:05}_stuff.png", i + 1);
        source.images.insert(uri.clone(), img);
        source.labels.insert(
            stuff_uri.clone(),
            LabelMap {
                width: s,
                height: s,
                data: labels,
            },
        );
        images.push(FixtureImage {
            uri,
            width: s as u32,
            height: s as u32,
            scene: Some(if scene == 0 { "indoor" } else { "outdoor" }.into()),
            stuff_mask: Some(stuff_uri),
            objects,
        });
    }

    let mut categories: Vec<RawCategory> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| object_category(n, i))
        .collect();
    for (name, kind) in [("top", CategoryKind::Part), ("ground", CategoryKind::Stuff), ("sky", CategoryKind::Stuff)] {
        categories.push(RawCategory {
            name: name.into(),
            kind: Some(kind),
            attributes: vec![],
            hierarchy: vec![],
        });
    }
    ToyData {
        fixture: Fixture {
            attribute_vocabulary: ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            categories,
            images,
        },
        source,
    }
}

impl ToyData {
    pub fn raw(&self) -> RawAnnotationSet {
        self.fixture.clone().into_raw().expect("toy fixture is valid")
    }

    /// Writes `fixture.json` plus every image and stuff mask under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (uri, img) in &self.source.images {
            let path = dir.join(uri);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            img.save_png(&path)?;
        }
        for (uri, map) in &self.source.labels {
            write_label_map(map, &dir.join(uri))?;
        }
        let json = serde_json::to_vec_pretty(&self.fixture).expect("fixture serializes");
        let path = dir.join("fixture.json");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Per-class instance counts of a toy dataset, by class name.
pub fn toy_counts(data: &ToyData) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for img in &data.fixture.images {
        for o in &img.objects {
            *out.entry(o.name.clone()).or_default() += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{validate_manifest, Split};

    #[test]
    fn zipf_is_decreasing() {
        let c = zipf_counts(50, 1.5, 5000.0);
        assert_eq!(c[0], 5000);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn synthetic_manifest_validates() {
        let m = synthetic_manifest(&[300, 150, 120], &[20, 40, 60], 5);
        assert_eq!(validate_manifest(&m), vec![]);
        assert_eq!(m.categories_with_split(Split::Base).count(), 3);
    }

    #[test]
    fn toy_classes_become_base() {
        let toy = render_toy(&ToySpec::default());
        let counts = toy_counts(&toy);
        assert_eq!(counts.values().sum::<usize>(), 400);
        let m = build_manifest(&toy.raw(), 2.7, 1).unwrap();
        assert_eq!(m.categories_with_split(Split::Base).count(), 3, "{counts:?}");
        assert_eq!(validate_manifest(&m), vec![]);
    }
}
