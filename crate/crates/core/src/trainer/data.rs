//! Turns manifest records into resized images with per-head targets.

use crate::backbone::STRIDE;
use crate::datamodel::{BBox, BenchmarkManifest, Head, ImageRecord, ObjectInstance, Split, Subset};
use crate::error::{Error, Result};
use crate::heads::{bbox_targets, majority_pool, region_mask_targets, LabelGrid};
use crate::model::{ModelConfig, Vocabulary};
use crate::raster::{short_edge_scale, Image};
use crate::source::ImageSource;

/// Targets of one object; `None` when the head is disabled or its label is
/// withheld for this instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTarget {
    pub instance_id: u64,
    pub category_id: u32,
    /// Boxes in the coordinates of the resized image.
    pub region: BBox,
    pub tight: BBox,
    /// Base class index; `None` for non-base objects.
    pub class: Option<usize>,
    pub attributes: Option<Vec<f64>>,
    pub hierarchy: Option<Vec<usize>>,
    pub parts: Option<Vec<f64>>,
    pub bbox: Option<[f64; 4]>,
    pub mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: u64,
    pub image: Image,
    pub objects: Vec<ObjectTarget>,
    pub scene: Option<usize>,
    pub seg_fcn: Option<LabelGrid>,
    pub stuff: Option<LabelGrid>,
}

fn wants(config: &ModelConfig, head: Head, masked: &std::collections::BTreeSet<Head>) -> bool {
    config.has(head) && !masked.contains(&head)
}

/// Nearest-neighbour resampling of a pixel label raster.
fn resample_labels(src: &[Option<u32>], h: usize, w: usize, nh: usize, nw: usize) -> Vec<Option<u32>> {
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        let sy = (((y as f64 + 0.5) * h as f64 / nh as f64) as usize).min(h - 1);
        for x in 0..nw {
            let sx = (((x as f64 + 0.5) * w as f64 / nw as f64) as usize).min(w - 1);
            out.push(src[sy * w + sx]);
        }
    }
    out
}

/// An image resized for the model, with the per-axis scale applied.
pub struct Loaded {
    pub image: Image,
    pub sx: f64,
    pub sy: f64,
}

impl Loaded {
    pub fn scale_box(&self, b: &BBox) -> BBox {
        BBox::new(b.x0 * self.sx, b.y0 * self.sy, b.x1 * self.sx, b.y1 * self.sy)
    }
}

/// Loads the image of `rec`, checks its size against the manifest and
/// resizes it to `short_edge` when given.
pub fn load_resized(source: &dyn ImageSource, rec: &ImageRecord, short_edge: Option<usize>) -> Result<Loaded> {
    let raw = source.image(&rec.uri)?;
    let (h, w) = (raw.height, raw.width);
    if (w, h) != (rec.width as usize, rec.height as usize) {
        return Err(Error::Image(format!(
            "{}: size {}x{} differs from manifest {}x{}",
            rec.uri, w, h, rec.width, rec.height
        )));
    }
    Ok(match short_edge {
        Some(target) => {
            let (_, nh, nw) = short_edge_scale(h, w, target)?;
            Loaded {
                image: raw.resize(nh, nw),
                sx: nw as f64 / w as f64,
                sy: nh as f64 / h as f64,
            }
        }
        None => Loaded { image: raw, sx: 1.0, sy: 1.0 },
    })
}

/// Prepares every image that holds at least one instance of `subset`, with
/// the objects of that subset.
pub fn prepare_samples(
    m: &BenchmarkManifest,
    config: &ModelConfig,
    source: &dyn ImageSource,
    subset: Subset,
    short_edge: Option<usize>,
) -> Result<Vec<Sample>> {
    let idx = m.index();
    let vocab = &config.vocabulary;
    let mut out = Vec::new();
    for rec in &m.images {
        let objects: Vec<&ObjectInstance> = rec
            .instance_ids
            .iter()
            .filter_map(|id| idx.instances.get(id).copied())
            .filter(|o| o.subset == subset)
            .collect();
        if objects.is_empty() {
            continue;
        }
        let loaded = load_resized(source, rec, short_edge)?;
        let (h, w) = (rec.height as usize, rec.width as usize);
        let image = loaded.image.clone();
        let to_model = |b: &BBox| loaded.scale_box(b);

        let mut targets = Vec::with_capacity(objects.len());
        for o in objects {
            let cat = idx.categories.get(&o.category_id).ok_or_else(|| {
                Error::Config(format!("instance {} has unknown category {}", o.instance_id, o.category_id))
            })?;
            let base = cat.split == Split::Base;
            let masked = &o.masked_heads;
            targets.push(ObjectTarget {
                instance_id: o.instance_id,
                category_id: o.category_id,
                region: to_model(&o.region_box),
                tight: to_model(&o.tight_box),
                class: vocab.class_index(o.category_id),
                attributes: (base && wants(config, Head::Attribute, masked))
                    .then(|| cat.attributes.as_f64()),
                hierarchy: if base && wants(config, Head::Hierarchy, masked) {
                    vocab.hierarchy_index(&cat.hierarchy_path)
                } else {
                    None
                },
                parts: (base && wants(config, Head::Part, masked)).then(|| part_targets(vocab, o)),
                bbox: if base && wants(config, Head::Bbox, masked) {
                    Some(bbox_targets(&o.region_box, &o.tight_box)?)
                } else {
                    None
                },
                mask: match (&o.mask, base && wants(config, Head::SegRegion, masked)) {
                    (Some(mask), true) => Some(region_mask_targets(mask, &o.region_box, config.mask_size)?),
                    _ => None,
                },
            });
        }

        let all: Vec<&ObjectInstance> = rec
            .instance_ids
            .iter()
            .filter_map(|id| idx.instances.get(id).copied())
            .collect();
        let (nh, nw) = (image.height, image.width);
        let seg_fcn = if wants(config, Head::SegFcn, &rec.masked_heads) {
            let mut px: Vec<Option<u32>> = vec![None; h * w];
            for o in &all {
                if let (Some(k), Some(mask)) = (vocab.class_index(o.category_id), &o.mask) {
                    paint(&mut px, mask, Some(k as u32));
                }
            }
            Some(majority_pool(&resample_labels(&px, h, w, nh, nw), nh, nw, STRIDE))
        } else {
            None
        };
        let stuff = match &rec.stuff_mask_uri {
            Some(uri) if wants(config, Head::Stuff, &rec.masked_heads) => {
                let map = source.label_map(uri)?;
                if (map.width, map.height) != (w, h) {
                    return Err(Error::Image(format!("{uri}: stuff map size differs from its image")));
                }
                let k = vocab.base.len() as u32;
                let mut px: Vec<Option<u32>> = map
                    .data
                    .iter()
                    .map(|&v| match (v, config.stuff_combined) {
                        (0, _) => None,
                        (_, false) => Some(0),
                        (v, true) if (v as usize) <= vocab.stuff.len() => Some(k + u32::from(v) - 1),
                        _ => None,
                    })
                    .collect();
                for o in &all {
                    let Some(mask) = &o.mask else { continue };
                    let label = if config.stuff_combined {
                        vocab.class_index(o.category_id).map(|c| c as u32)
                    } else {
                        Some(1)
                    };
                    paint(&mut px, mask, label);
                }
                Some(majority_pool(&resample_labels(&px, h, w, nh, nw), nh, nw, STRIDE))
            }
            _ => None,
        };
        let scene = if wants(config, Head::Scene, &rec.masked_heads) {
            rec.scene_label.map(|s| s as usize)
        } else {
            None
        };
        out.push(Sample {
            image_id: rec.image_id,
            image,
            objects: targets,
            scene,
            seg_fcn,
            stuff,
        });
    }
    Ok(out)
}

fn part_targets(vocab: &Vocabulary, o: &ObjectInstance) -> Vec<f64> {
    let mut t = vec![0.0; vocab.parts.len()];
    for &p in &o.part_labels {
        if let Some(i) = vocab.part_index(p) {
            t[i] = 1.0;
        }
    }
    t
}

fn paint(px: &mut [Option<u32>], mask: &crate::datamodel::Rle, label: Option<u32>) {
    for (p, on) in mask.to_bitmap().into_iter().enumerate() {
        if on && p < px.len() {
            px[p] = label;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ExtractorConfig;
    use crate::benchgen::build_manifest;
    use crate::synth::{render_toy, ToySpec};

    #[test]
    fn toy_samples_carry_targets() {
        let toy = render_toy(&ToySpec { images: 60, objects_per_image: 4, base_classes: 2, ..ToySpec::default() });
        let m = build_manifest(&toy.raw(), 2.7, 1).unwrap();
        let heads = [Head::SegFcn, Head::Stuff, Head::Scene, Head::Part, Head::Bbox, Head::SegRegion];
        let cfg = ModelConfig::new(ExtractorConfig::tiny(4), 8, &heads, Vocabulary::from_manifest(&m));
        let samples = prepare_samples(&m, &cfg, &toy.source, Subset::BaseTrain, None).unwrap();
        assert!(!samples.is_empty());
        let s = &samples[0];
        assert_eq!(s.seg_fcn.as_ref().unwrap().cells.len(), 16);
        let stuff = s.stuff.as_ref().unwrap();
        assert!(stuff.cells.contains(&Some(0)) && stuff.cells.contains(&Some(1)));
        assert!(stuff.cells.iter().flatten().all(|&c| c < 2));
        assert!(s.scene.is_some());
        for o in &s.objects {
            assert!(o.class.is_some() && o.parts.is_some() && o.bbox.is_some());
            assert_eq!(o.mask.as_ref().unwrap().len(), 14 * 14);
            assert!(o.attributes.is_none());
        }
        let resized = prepare_samples(&m, &cfg, &toy.source, Subset::BaseTrain, Some(64)).unwrap();
        assert_eq!(resized[0].image.height, 64);
        assert_eq!(resized[0].objects[0].tight.width(), 2.0 * s.objects[0].tight.width());
        assert_eq!(resized[0].seg_fcn.as_ref().unwrap().cells.len(), 64);
    }
}
