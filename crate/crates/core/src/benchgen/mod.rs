//! Converts raw scene-parsing annotations into a [`BenchmarkManifest`].

mod ade20k;
mod geometry;
mod raw;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub use ade20k::{parse_ade20k, KindsFile};
pub use geometry::{enlarge_and_jitter, find_jitter_range, ratio_assign, ratio_from_unit};
pub use raw::{Fixture, FixtureImage, FixtureObject, RawAnnotationSet, RawCategory, RawImage, RawObject};

use crate::datamodel::*;
use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

/// Context ratio used when none is given.
pub const DEFAULT_GAMMA: f64 = 2.7;

/// Category records plus the set of ids that passed the frequency filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    pub records: Vec<CategoryRecord>,
    pub kept: BTreeSet<u32>,
}

/// Pads or trims a taxonomy path to exactly four levels, coarse to fine.
/// Short paths repeat their deepest entry; long ones keep the three coarsest
/// levels and the leaf.
pub fn normalize_hierarchy(path: &[String], name: &str) -> Vec<String> {
    let mut p: Vec<String> = if path.is_empty() {
        vec![name.to_string()]
    } else {
        path.to_vec()
    };
    if p.len() > HIERARCHY_LEVELS {
        let leaf = p.pop().unwrap();
        p.truncate(HIERARCHY_LEVELS - 1);
        p.push(leaf);
    }
    while p.len() < HIERARCHY_LEVELS {
        let last = p.last().unwrap().clone();
        p.push(last);
    }
    p
}

pub fn filter_categories(raw: &RawAnnotationSet) -> Result<CategoryTable> {
    filter_categories_with(raw, MIN_INSTANCES)
}

/// Counts instances per category name and keeps object categories with at
/// least `min_count` instances. Category ids follow name order.
pub fn filter_categories_with(raw: &RawAnnotationSet, min_count: u32) -> Result<CategoryTable> {
    let kinds: BTreeMap<&str, &RawCategory> =
        raw.categories.iter().map(|c| (c.name.as_str(), c)).collect();

    let mut counts: BTreeMap<&str, u32> = raw.categories.iter().map(|c| (c.name.as_str(), 0)).collect();
    let mut unknown = BTreeSet::new();
    for img in &raw.images {
        for obj in &img.objects {
            let names = std::iter::once(&obj.name).chain(obj.parts.iter());
            for name in names {
                match counts.get_mut(name.as_str()) {
                    Some(n) => *n += 1,
                    None => {
                        unknown.insert(name.clone());
                    }
                }
            }
        }
    }
    for c in &raw.categories {
        if c.kind.is_none() {
            unknown.insert(c.name.clone());
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownKind(unknown.into_iter().collect()));
    }

    let attr_index: BTreeMap<&str, usize> = raw
        .attribute_vocabulary
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();

    let mut records = Vec::with_capacity(counts.len());
    let mut kept = BTreeSet::new();
    for (id, (name, count)) in counts.into_iter().enumerate() {
        let id = id as u32;
        let rc = kinds[name];
        let kind = rc.kind.expect("checked above");
        let mut bits = AttributeBits::zeros(raw.attribute_vocabulary.len());
        for a in &rc.attributes {
            let i = attr_index.get(a.as_str()).ok_or_else(|| {
                Error::parse(format!("category {name}"), format!("unknown attribute '{a}'"))
            })?;
            bits.0[*i] = true;
        }
        let hierarchy_path = if kind == CategoryKind::Object {
            normalize_hierarchy(&rc.hierarchy, name)
        } else {
            rc.hierarchy.clone()
        };
        if kind == CategoryKind::Object && count >= min_count {
            kept.insert(id);
        }
        records.push(CategoryRecord {
            category_id: id,
            name: name.to_string(),
            kind,
            instance_count: count,
            attributes: bits,
            hierarchy_path,
            split: Split::Dropped,
            train_orphaned: false,
        });
    }
    Ok(CategoryTable { records, kept })
}

/// Number of novel-val categories for `n_novel` novel categories: the
/// 100 : 193 proportion rounded to nearest.
pub fn novel_val_size(n_novel: usize) -> usize {
    ((n_novel as f64) * 100.0 / 293.0).round() as usize
}

/// Kept categories with more than 100 instances become base, the rest novel;
/// novel categories are split uniformly at random into val and test.
pub fn split_base_novel(table: &CategoryTable, global_seed: u64) -> Vec<CategoryRecord> {
    let mut records = table.records.clone();
    let mut novel = Vec::new();
    for r in records.iter_mut() {
        r.split = Split::Dropped;
        if !table.kept.contains(&r.category_id) {
            continue;
        }
        if r.instance_count > BASE_MIN_EXCLUSIVE {
            r.split = Split::Base;
        } else {
            novel.push(r.category_id);
        }
    }
    if novel.is_empty() {
        log::warn!("no novel categories: every kept category has more than 100 instances");
    }
    let mut stream = Stream::new(seeds::derive(global_seed, seeds::NOVEL_SPLIT));
    stream.shuffle(&mut novel);
    let n_val = novel_val_size(novel.len());
    let val: BTreeSet<u32> = novel[..n_val].iter().copied().collect();
    for r in records.iter_mut() {
        if table.kept.contains(&r.category_id) && r.split != Split::Base {
            r.split = if val.contains(&r.category_id) {
                Split::NovelVal
            } else {
                Split::NovelTest
            };
        }
    }
    records
}

/// Tags instances: per base category `floor(n / 6)` go to base_val, per novel
/// category exactly five become support (ranked in draw order), the rest query.
pub fn assign_subsets(
    categories: &[CategoryRecord],
    instances: &mut [ObjectInstance],
    global_seed: u64,
) -> Result<()> {
    let mut by_cat: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_cat.entry(inst.category_id).or_default().push(i);
    }
    let val_seed = seeds::derive(global_seed, seeds::BASE_VAL);
    let support_seed = seeds::derive(global_seed, seeds::SUPPORT);
    for c in categories {
        let Some(members) = by_cat.get_mut(&c.category_id) else {
            continue;
        };
        members.sort_by_key(|&i| instances[i].instance_id);
        match c.split {
            Split::Base => {
                Stream::new(seeds::keyed(val_seed, u64::from(c.category_id))).shuffle(members);
                let n_val = members.len() / 6;
                for (rank, &i) in members.iter().enumerate() {
                    instances[i].subset = if rank < n_val {
                        Subset::BaseVal
                    } else {
                        Subset::BaseTrain
                    };
                    instances[i].support_rank = None;
                }
            }
            Split::NovelVal | Split::NovelTest => {
                if members.len() < SUPPORT_SIZE + 1 {
                    return Err(Error::InsufficientInstances {
                        category: c.name.clone(),
                        count: members.len(),
                        needed: SUPPORT_SIZE + 1,
                    });
                }
                Stream::new(seeds::keyed(support_seed, u64::from(c.category_id))).shuffle(members);
                for (rank, &i) in members.iter().enumerate() {
                    if rank < SUPPORT_SIZE {
                        instances[i].subset = Subset::NovelSupport;
                        instances[i].support_rank = Some(rank as u8);
                    } else {
                        instances[i].subset = Subset::NovelQuery;
                        instances[i].support_rank = None;
                    }
                }
            }
            Split::Dropped => {}
        }
    }
    Ok(())
}

/// Runs the full construction: filtering, splitting, region boxes and subsets.
pub fn build_manifest(raw: &RawAnnotationSet, gamma: f64, global_seed: u64) -> Result<BenchmarkManifest> {
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(Error::Argument(format!("context ratio {gamma} must be >= 1")));
    }
    let table = filter_categories(raw)?;
    let categories = split_base_novel(&table, global_seed);
    let by_name: BTreeMap<&str, &CategoryRecord> =
        categories.iter().map(|c| (c.name.as_str(), c)).collect();

    let scenes: BTreeSet<&str> = raw.images.iter().filter_map(|i| i.scene.as_deref()).collect();
    let scene_vocabulary: Vec<String> = scenes.iter().map(|s| s.to_string()).collect();
    let scene_index: BTreeMap<&str, u32> = scenes.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();

    let jitter_seed = seeds::derive(global_seed, seeds::JITTER);
    let mut images = Vec::with_capacity(raw.images.len());
    let mut instances = Vec::new();
    let mut next_instance: u64 = 1;
    for (i, img) in raw.images.iter().enumerate() {
        let image_id = i as u64 + 1;
        let mut ids = Vec::new();
        for obj in &img.objects {
            let instance_id = next_instance;
            next_instance += 1;
            let cat = by_name[obj.name.as_str()];
            if cat.split == Split::Dropped {
                continue;
            }
            let tight = obj
                .mask
                .bounding_box()
                .ok_or_else(|| Error::parse(format!("{} object {}", img.uri, obj.name), "empty mask"))?;
            let mut rng = Stream::new(seeds::keyed(jitter_seed, instance_id));
            let region = enlarge_and_jitter(&tight, f64::from(img.width), f64::from(img.height), gamma, &mut rng);
            let part_labels = obj
                .parts
                .iter()
                .filter_map(|p| by_name.get(p.as_str()))
                .filter(|c| c.kind == CategoryKind::Part)
                .map(|c| c.category_id)
                .collect();
            instances.push(ObjectInstance {
                instance_id,
                image_id,
                category_id: cat.category_id,
                tight_box: tight,
                region_box: region,
                mask: Some(obj.mask.clone()),
                part_labels,
                subset: Subset::BaseTrain,
                support_rank: None,
                masked_heads: BTreeSet::new(),
            });
            ids.push(instance_id);
        }
        images.push(ImageRecord {
            image_id,
            uri: img.uri.clone(),
            width: img.width,
            height: img.height,
            scene_label: img.scene.as_deref().map(|s| scene_index[s]),
            stuff_mask_uri: img.stuff_mask_uri.clone(),
            instance_ids: ids,
            masked_heads: BTreeSet::new(),
        });
    }
    assign_subsets(&categories, &mut instances, global_seed)?;

    let seeds = BTreeMap::from([
        ("global".to_string(), global_seed),
        (seeds::NOVEL_SPLIT.to_string(), seeds::derive(global_seed, seeds::NOVEL_SPLIT)),
        (seeds::BASE_VAL.to_string(), seeds::derive(global_seed, seeds::BASE_VAL)),
        (seeds::SUPPORT.to_string(), seeds::derive(global_seed, seeds::SUPPORT)),
        (seeds::JITTER.to_string(), jitter_seed),
    ]);
    Ok(BenchmarkManifest {
        schema_version: SCHEMA_VERSION,
        producer: None,
        context_ratio: gamma,
        seeds,
        regime: Regime::Full,
        attribute_vocabulary: raw.attribute_vocabulary.clone(),
        scene_vocabulary,
        categories,
        images,
        instances,
    })
}

/// Split summary: categories per split and instances per subset.
pub fn split_summary(m: &BenchmarkManifest) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for split in [Split::Base, Split::NovelVal, Split::NovelTest, Split::Dropped] {
        out.insert(format!("categories_{split}"), m.categories_with_split(split).count());
    }
    for (name, subset) in [
        ("base_train", Subset::BaseTrain),
        ("base_val", Subset::BaseVal),
        ("novel_support", Subset::NovelSupport),
        ("novel_query", Subset::NovelQuery),
    ] {
        out.insert(format!("instances_{name}"), m.instances_in(subset).count());
    }
    out
}

/// Rasterizes stuff-kind objects of images that have no stuff mask yet into
/// 16-bit PNGs under `dir`; pixel value `v > 0` is stuff vocabulary entry
/// `v - 1`. Sets each written image's `stuff_mask_uri` to `uri_prefix/<name>`.
pub fn render_stuff_masks(raw: &mut RawAnnotationSet, dir: &Path, uri_prefix: &str) -> Result<usize> {
    let mut stuff: Vec<&str> = raw
        .categories
        .iter()
        .filter(|c| c.kind == Some(CategoryKind::Stuff))
        .map(|c| c.name.as_str())
        .collect();
    stuff.sort_unstable();
    let index: BTreeMap<String, u16> = stuff
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i as u16 + 1))
        .collect();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = 0;
    for (i, img) in raw.images.iter_mut().enumerate() {
        if img.stuff_mask_uri.is_some() || !img.objects.iter().any(|o| index.contains_key(&o.name)) {
            continue;
        }
        let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(img.width, img.height);
        for obj in img.objects.iter().filter(|o| index.contains_key(&o.name)) {
            let v = index[&obj.name];
            for (p, on) in obj.mask.to_bitmap().into_iter().enumerate() {
                if on {
                    let (x, y) = (p as u32 % img.width, p as u32 / img.width);
                    buf.put_pixel(x, y, image::Luma([v]));
                }
            }
        }
        let name = format!("stuff_{:06}.png", i + 1);
        let path = dir.join(&name);
        buf.save(&path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        img.stuff_mask_uri = Some(if uri_prefix.is_empty() {
            name
        } else {
            format!("{uri_prefix}/{name}")
        });
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn object(name: &str) -> RawObject {
        RawObject {
            name: name.into(),
            mask: Rle::from_rect(50, 40, 10, 10, 20, 25),
            parts: vec![],
        }
    }

    fn cat(name: &str, kind: CategoryKind) -> RawCategory {
        RawCategory {
            name: name.into(),
            kind: Some(kind),
            attributes: vec![],
            hierarchy: vec![],
        }
    }

    /// One image per instance; counts per name.
    pub(crate) fn raw_with_counts(counts: &[(&str, CategoryKind, u32)]) -> RawAnnotationSet {
        let mut images = Vec::new();
        for (name, _, n) in counts {
            for _ in 0..*n {
                images.push(RawImage {
                    uri: format!("{name}.png"),
                    width: 50,
                    height: 40,
                    scene: None,
                    stuff_mask_uri: None,
                    objects: vec![object(name)],
                });
            }
        }
        RawAnnotationSet {
            attribute_vocabulary: vec![],
            categories: counts.iter().map(|(n, k, _)| cat(n, *k)).collect(),
            images,
        }
    }

    /// Brute-force count-and-filter over the flattened object list.
    fn kept_names_oracle(raw: &RawAnnotationSet, min: u32) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for c in &raw.categories {
            let n = raw
                .images
                .iter()
                .flat_map(|i| i.objects.iter())
                .filter(|o| o.name == c.name)
                .count() as u32;
            if c.kind == Some(CategoryKind::Object) && n >= min {
                out.insert(c.name.clone());
            }
        }
        out
    }

    #[test]
    fn filter_keeps_frequent_objects() {
        use CategoryKind::*;
        let raw = raw_with_counts(&[("A", Object, 200), ("B", Object, 15), ("C", Object, 14), ("D", Part, 500)]);
        let t = filter_categories(&raw).unwrap();
        let kept: BTreeSet<String> = t
            .records
            .iter()
            .filter(|r| t.kept.contains(&r.category_id))
            .map(|r| r.name.clone())
            .collect();
        assert_eq!(kept, kept_names_oracle(&raw, 15));
        assert_eq!(kept, BTreeSet::from(["A".to_string(), "B".to_string()]));
    }

    #[test]
    fn empty_input_gives_empty_table() {
        let t = filter_categories(&RawAnnotationSet::default()).unwrap();
        assert!(t.records.is_empty() && t.kept.is_empty());
    }

    #[test]
    fn unknown_kind_lists_names() {
        let mut raw = raw_with_counts(&[("A", CategoryKind::Object, 2)]);
        raw.images[0].objects[0].name = "zebra".into();
        raw.images[1].objects[0].parts = vec!["tail".into()];
        match filter_categories(&raw) {
            Err(Error::UnknownKind(names)) => assert_eq!(names, vec!["tail", "zebra"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_thresholds() {
        use CategoryKind::*;
        let raw = raw_with_counts(&[("A", Object, 500), ("B", Object, 101), ("C", Object, 100), ("D", Object, 15)]);
        let cats = split_base_novel(&filter_categories(&raw).unwrap(), 1);
        let split = |n: &str| cats.iter().find(|c| c.name == n).unwrap().split;
        assert_eq!(split("A"), Split::Base);
        assert_eq!(split("B"), Split::Base);
        assert!(split("C").is_novel());
        assert!(split("D").is_novel());
    }

    #[test]
    fn all_base_gives_no_novel() {
        let raw = raw_with_counts(&[("A", CategoryKind::Object, 101), ("B", CategoryKind::Object, 300)]);
        let cats = split_base_novel(&filter_categories(&raw).unwrap(), 1);
        assert!(cats.iter().all(|c| c.split == Split::Base));
    }

    #[test]
    fn novel_val_proportion() {
        assert_eq!(novel_val_size(293), 100);
        assert_eq!(novel_val_size(0), 0);
        assert_eq!(novel_val_size(3), 1);
        assert_eq!(novel_val_size(10), 3);
    }

    #[test]
    fn subset_floor_rule() {
        for (n, split, expected) in [
            (12usize, Split::Base, (2usize, 10usize)),
            (5, Split::Base, (0, 5)),
            (15, Split::NovelTest, (5, 10)),
        ] {
            let cats = vec![CategoryRecord {
                category_id: 0,
                name: "x".into(),
                kind: CategoryKind::Object,
                instance_count: n as u32,
                attributes: AttributeBits::default(),
                hierarchy_path: vec![],
                split,
                train_orphaned: false,
            }];
            let mut inst: Vec<ObjectInstance> = (0..n)
                .map(|i| ObjectInstance {
                    instance_id: i as u64,
                    image_id: 0,
                    category_id: 0,
                    tight_box: BBox::new(0.0, 0.0, 1.0, 1.0),
                    region_box: BBox::new(0.0, 0.0, 1.0, 1.0),
                    mask: None,
                    part_labels: BTreeSet::new(),
                    subset: Subset::BaseTrain,
                    support_rank: None,
                    masked_heads: BTreeSet::new(),
                })
                .collect();
            assign_subsets(&cats, &mut inst, 3).unwrap();
            let first = inst
                .iter()
                .filter(|i| matches!(i.subset, Subset::BaseVal | Subset::NovelSupport))
                .count();
            assert_eq!((first, n - first), expected, "n={n}");
        }
    }

    #[test]
    fn hierarchy_normalization() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(normalize_hierarchy(&s(&["a", "b"]), "x"), s(&["a", "b", "b", "b"]));
        assert_eq!(normalize_hierarchy(&[], "x"), s(&["x", "x", "x", "x"]));
        assert_eq!(normalize_hierarchy(&s(&["a", "b", "c", "d", "e"]), "x"), s(&["a", "b", "c", "e"]));
    }
}
