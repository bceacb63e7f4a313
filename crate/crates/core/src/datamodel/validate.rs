use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub record: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.record, self.message)
    }
}

struct Report(Vec<Violation>);

impl Report {
    fn push(&mut self, record: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            record: record.into(),
            message: message.into(),
        });
    }
}

/// Checks every manifest invariant; an empty list means the manifest is consistent.
pub fn validate_manifest(m: &BenchmarkManifest) -> Vec<Violation> {
    let mut r = Report(Vec::new());
    if m.schema_version != SCHEMA_VERSION {
        r.push("manifest", format!("schema_version {}", m.schema_version));
    }
    if !(m.context_ratio.is_finite() && m.context_ratio >= 1.0) {
        r.push("manifest", format!("context ratio {} < 1", m.context_ratio));
    }

    let mut categories = BTreeMap::new();
    for c in &m.categories {
        let rec = format!("category {} ({})", c.category_id, c.name);
        if categories.insert(c.category_id, c).is_some() {
            r.push(&rec, "duplicate category_id");
        }
        check_category(&mut r, &rec, c, m.attribute_vocabulary.len());
    }

    let mut images = BTreeMap::new();
    for img in &m.images {
        let rec = format!("image {}", img.image_id);
        if images.insert(img.image_id, img).is_some() {
            r.push(&rec, "duplicate image_id");
        }
        if img.width == 0 || img.height == 0 {
            r.push(&rec, "zero width or height");
        }
        if let Some(s) = img.scene_label {
            if s as usize >= m.scene_vocabulary.len() {
                r.push(&rec, format!("scene label {s} outside vocabulary"));
            }
        }
    }

    let mut instances = BTreeMap::new();
    let parts: BTreeSet<u32> = m.part_vocabulary().into_iter().collect();
    for inst in &m.instances {
        let rec = format!("instance {}", inst.instance_id);
        if instances.insert(inst.instance_id, inst).is_some() {
            r.push(&rec, "duplicate instance_id");
        }
        let image = images.get(&inst.image_id);
        match image {
            None => r.push(&rec, format!("unknown image {}", inst.image_id)),
            Some(img) => {
                if !img.instance_ids.contains(&inst.instance_id) {
                    r.push(&rec, format!("not listed by image {}", img.image_id));
                }
                check_geometry(&mut r, &rec, inst, img);
            }
        }
        match categories.get(&inst.category_id) {
            None => r.push(&rec, format!("unknown category {}", inst.category_id)),
            Some(c) => {
                let ok = match c.split {
                    Split::Base => matches!(inst.subset, Subset::BaseTrain | Subset::BaseVal),
                    Split::NovelVal | Split::NovelTest => {
                        matches!(inst.subset, Subset::NovelSupport | Subset::NovelQuery)
                    }
                    Split::Dropped => false,
                };
                if !ok {
                    r.push(
                        &rec,
                        format!("subset {:?} inconsistent with split {}", inst.subset, c.split),
                    );
                }
            }
        }
        if let Some(p) = inst.part_labels.iter().find(|p| !parts.contains(p)) {
            r.push(&rec, format!("part label {p} is not a part category"));
        }
        if (inst.subset == Subset::NovelSupport) != inst.support_rank.is_some() {
            r.push(&rec, "support_rank must be set exactly for support instances");
        }
    }

    for img in &m.images {
        for id in &img.instance_ids {
            match instances.get(id) {
                None => r.push(format!("image {}", img.image_id), format!("unknown instance {id}")),
                Some(inst) if inst.image_id != img.image_id => r.push(
                    format!("image {}", img.image_id),
                    format!("instance {id} belongs to image {}", inst.image_id),
                ),
                _ => {}
            }
        }
    }

    check_subset_counts(&mut r, m);
    r.0
}

fn check_category(r: &mut Report, rec: &str, c: &CategoryRecord, attr_len: usize) {
    let n = c.instance_count;
    match c.split {
        Split::Base => {
            if c.kind != CategoryKind::Object || n <= BASE_MIN_EXCLUSIVE {
                r.push(rec, format!("base category needs kind object and > 100 instances, has {n}"));
            }
        }
        Split::NovelVal | Split::NovelTest => {
            if c.kind != CategoryKind::Object || !(MIN_INSTANCES..=BASE_MIN_EXCLUSIVE).contains(&n) {
                r.push(rec, format!("novel category needs kind object and 15..=100 instances, has {n}"));
            }
        }
        Split::Dropped => {
            if c.kind == CategoryKind::Object && n >= MIN_INSTANCES {
                r.push(rec, format!("dropped object category has {n} >= 15 instances"));
            }
        }
    }
    if c.kind == CategoryKind::Object && c.hierarchy_path.len() != HIERARCHY_LEVELS {
        r.push(rec, format!("hierarchy path has {} levels", c.hierarchy_path.len()));
    }
    if c.attributes.len() != attr_len {
        r.push(
            rec,
            format!("attribute vector length {} != vocabulary {attr_len}", c.attributes.len()),
        );
    }
}

fn check_geometry(r: &mut Report, rec: &str, inst: &ObjectInstance, img: &ImageRecord) {
    let (w, h) = (f64::from(img.width), f64::from(img.height));
    for (name, b) in [("tight_box", &inst.tight_box), ("region_box", &inst.region_box)] {
        if !b.is_finite() || b.width() <= 0.0 || b.height() <= 0.0 {
            r.push(rec, format!("{name} is degenerate"));
        }
    }
    if !inst.region_box.contains(&inst.tight_box) {
        r.push(rec, "region_box does not contain tight_box");
    }
    if !inst.region_box.inside_image(w, h) {
        r.push(rec, "region_box leaves the image");
    }
    if let Some(mask) = &inst.mask {
        if mask.width != img.width || mask.height != img.height || !mask.is_well_formed() {
            r.push(rec, "mask does not match image size");
        } else if mask.area() == 0 {
            r.push(rec, "mask is empty");
        }
    }
}

fn check_subset_counts(r: &mut Report, m: &BenchmarkManifest) {
    let mut per_cat: BTreeMap<u32, BTreeMap<Subset, Vec<&ObjectInstance>>> = BTreeMap::new();
    for inst in &m.instances {
        per_cat
            .entry(inst.category_id)
            .or_default()
            .entry(inst.subset)
            .or_default()
            .push(inst);
    }
    let full = m.is_full();
    let empty = BTreeMap::new();
    for c in &m.categories {
        let rec = format!("category {} ({})", c.category_id, c.name);
        let subsets = per_cat.get(&c.category_id).unwrap_or(&empty);
        let count = |s: Subset| subsets.get(&s).map_or(0, Vec::len);
        let n = c.instance_count as usize;
        match c.split {
            Split::Base => {
                let val = count(Subset::BaseVal);
                let train = count(Subset::BaseTrain);
                if val != n / 6 {
                    r.push(&rec, format!("{val} base_val instances, expected {}", n / 6));
                }
                if full && train != n - n / 6 {
                    r.push(&rec, format!("{train} base_train instances, expected {}", n - n / 6));
                }
                if !full && train > n - n / 6 {
                    r.push(&rec, format!("{train} base_train instances exceed {}", n - n / 6));
                }
                if c.train_orphaned != (train == 0) && !full {
                    r.push(&rec, "train_orphaned flag disagrees with training instances");
                }
            }
            Split::NovelVal | Split::NovelTest => {
                let support = subsets.get(&Subset::NovelSupport).map_or(&[][..], Vec::as_slice);
                if support.len() != SUPPORT_SIZE {
                    r.push(
                        &rec,
                        format!("{} novel_support instances, expected {SUPPORT_SIZE}", support.len()),
                    );
                } else {
                    let ranks: BTreeSet<u8> = support.iter().filter_map(|i| i.support_rank).collect();
                    if ranks != (0..SUPPORT_SIZE as u8).collect() {
                        r.push(&rec, "support ranks are not 0..5");
                    }
                }
                let query = count(Subset::NovelQuery);
                if query == 0 {
                    r.push(&rec, "no novel_query instances");
                }
                if full && support.len() + query != n {
                    r.push(&rec, format!("{} instances listed, instance_count {n}", support.len() + query));
                }
            }
            Split::Dropped => {
                if !subsets.is_empty() {
                    r.push(&rec, "dropped category has instances");
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::tests::tiny_manifest;

    #[test]
    fn tiny_manifest_is_clean() {
        assert_eq!(validate_manifest(&tiny_manifest()), vec![]);
    }

    #[test]
    fn flags_bad_scene_and_attr_length() {
        let mut m = tiny_manifest();
        m.images[0].scene_label = Some(3);
        m.categories[0].attributes = AttributeBits(vec![true]);
        let v = validate_manifest(&m);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn flags_dangling_instance_reference() {
        let mut m = tiny_manifest();
        m.images[0].instance_ids.push(77);
        let v = validate_manifest(&m);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("unknown instance 77"));
    }
}
