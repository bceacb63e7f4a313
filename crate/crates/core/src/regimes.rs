//! Data-scarcity regimes derived from a full benchmark manifest, and the
//! remaining-instance accounting that compares them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::*;
use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

fn check_full(m: &BenchmarkManifest) -> Result<()> {
    if m.is_full() {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "regimes apply to full manifests only, got {}",
            m.regime.id()
        )))
    }
}

fn check_keep_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("keep ratio {r} outside (0, 1]")))
    }
}

fn derived(base: &BenchmarkManifest, op: RegimeOp) -> BenchmarkManifest {
    let mut m = base.clone();
    m.producer = None;
    m.regime = Regime::Derived {
        base_hash: base.content_hash(),
        op,
    };
    m
}

/// Drops instances not accepted by `keep`, updating image lists and orphan flags.
fn retain_instances(m: &mut BenchmarkManifest, keep: impl Fn(&ObjectInstance) -> bool) {
    m.instances.retain(|i| keep(i));
    let alive: BTreeSet<u64> = m.instances.iter().map(|i| i.instance_id).collect();
    for img in &mut m.images {
        img.instance_ids.retain(|id| alive.contains(id));
    }
    flag_orphans(m);
}

fn flag_orphans(m: &mut BenchmarkManifest) {
    let with_train: BTreeSet<u32> = m
        .instances_in(Subset::BaseTrain)
        .map(|i| i.category_id)
        .collect();
    for c in &mut m.categories {
        c.train_orphaned = c.split == Split::Base && !with_train.contains(&c.category_id);
    }
}

/// Number of base categories Scarce-Class removes: `floor((1 - r) * n)`.
pub fn scarce_class_removed(n_base: usize, keep_ratio: f64) -> usize {
    (((1.0 - keep_ratio) * n_base as f64) + 1e-9).floor() as usize
}

/// Removes the least frequent base categories (ties by ascending id) together
/// with all of their instances. Novel categories are untouched.
pub fn scarce_class(m: &BenchmarkManifest, keep_ratio: f64) -> Result<BenchmarkManifest> {
    check_full(m)?;
    check_keep_ratio(keep_ratio)?;
    let mut base: Vec<&CategoryRecord> = m.categories_with_split(Split::Base).collect();
    base.sort_by_key(|c| (c.instance_count, c.category_id));
    let n_remove = scarce_class_removed(base.len(), keep_ratio);
    let removed: BTreeSet<u32> = base[..n_remove].iter().map(|c| c.category_id).collect();

    let mut out = derived(m, RegimeOp::ScarceClass { keep_ratio });
    out.categories.retain(|c| !removed.contains(&c.category_id));
    retain_instances(&mut out, |i| !removed.contains(&i.category_id));
    Ok(out)
}

/// Images holding at least one base-training instance, by id.
pub fn training_images(m: &BenchmarkManifest) -> Vec<u64> {
    let ids: BTreeSet<u64> = m.instances_in(Subset::BaseTrain).map(|i| i.image_id).collect();
    ids.into_iter().collect()
}

/// Keeps `round(r * N)` base-training images uniformly at random. Base-val and
/// novel instances stay, and categories left without training data are flagged.
pub fn scarce_image(m: &BenchmarkManifest, keep_ratio: f64, seed: u64) -> Result<BenchmarkManifest> {
    check_full(m)?;
    check_keep_ratio(keep_ratio)?;
    let mut images = training_images(m);
    let n_keep = (keep_ratio * images.len() as f64 + 0.5).floor() as usize;
    Stream::new(seeds::derive(seed, seeds::SCARCE_IMAGE)).shuffle(&mut images);
    let kept: BTreeSet<u64> = images[..n_keep.min(images.len())].iter().copied().collect();

    let mut out = derived(m, RegimeOp::ScarceImage { keep_ratio, seed });
    out.seeds.insert(seeds::SCARCE_IMAGE.into(), seeds::derive(seed, seeds::SCARCE_IMAGE));
    retain_instances(&mut out, |i| i.subset != Subset::BaseTrain || kept.contains(&i.image_id));
    Ok(out)
}

/// Scarce-Class followed by uniform per-category downsampling of training
/// instances so the total equals the Scarce-Image total for the same ratio
/// and seed.
pub fn scarce_class_adjust(m: &BenchmarkManifest, keep_ratio: f64, seed: u64) -> Result<BenchmarkManifest> {
    let by_class = scarce_class(m, keep_ratio)?;
    let target = scarce_image(m, keep_ratio, seed)?.train_instance_count();

    let mut per_cat: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for inst in by_class.instances_in(Subset::BaseTrain) {
        per_cat.entry(inst.category_id).or_default().push(inst.instance_id);
    }
    let current: usize = per_cat.values().map(Vec::len).sum();
    if target > current {
        return Err(Error::Argument(format!(
            "scarce-image target {target} exceeds scarce-class total {current}"
        )));
    }
    let rate = if current == 0 { 0.0 } else { target as f64 / current as f64 };
    let cats: Vec<u32> = per_cat.keys().copied().collect();
    let available: Vec<usize> = cats.iter().map(|c| per_cat[c].len()).collect();
    let mut quota: Vec<usize> = available
        .iter()
        .map(|&n| ((n as f64) * rate).round() as usize)
        .collect();

    let adjust_seed = seeds::derive(seed, seeds::SCARCE_ADJUST);
    let mut stream = Stream::new(adjust_seed);
    let mut total: usize = quota.iter().sum();
    // drift correction one instance at a time, categories drawn in
    // proportion to the instances that can move
    while total != target {
        let removing = total > target;
        let weights: Vec<usize> = quota
            .iter()
            .zip(&available)
            .map(|(&q, &a)| if removing { q } else { a - q })
            .collect();
        let sum: usize = weights.iter().sum();
        let mut pick = stream.below(sum as u64) as usize;
        let idx = weights
            .iter()
            .position(|&w| {
                if pick < w {
                    true
                } else {
                    pick -= w;
                    false
                }
            })
            .expect("pick within total weight");
        if removing {
            quota[idx] -= 1;
            total -= 1;
        } else {
            quota[idx] += 1;
            total += 1;
        }
    }

    let mut keep = BTreeSet::new();
    for (i, c) in cats.iter().enumerate() {
        let mut ids = per_cat[c].clone();
        ids.sort_unstable();
        Stream::new(seeds::keyed(adjust_seed, u64::from(*c))).shuffle(&mut ids);
        keep.extend(ids[..quota[i]].iter().copied());
    }

    let mut out = by_class;
    out.regime = Regime::Derived {
        base_hash: m.content_hash(),
        op: RegimeOp::ScarceClassAdjust { keep_ratio, seed },
    };
    out.seeds.insert(seeds::SCARCE_IMAGE.into(), seeds::derive(seed, seeds::SCARCE_IMAGE));
    out.seeds.insert(seeds::SCARCE_ADJUST.into(), adjust_seed);
    retain_instances(&mut out, |i| i.subset != Subset::BaseTrain || keep.contains(&i.instance_id));
    Ok(out)
}

/// Withholds `head` labels on a uniform random `1 - fraction` of its label
/// units: base-training instances for object-level heads, base-training
/// images for image-level heads. Classification labels are never touched.
pub fn subsample_supervision(
    m: &BenchmarkManifest,
    head: Head,
    fraction: f64,
    seed: u64,
) -> Result<BenchmarkManifest> {
    check_full(m)?;
    if !Head::MASKABLE.contains(&head) {
        return Err(Error::Argument(format!("head {head} has no maskable labels")));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Argument(format!("fraction {fraction} outside [0, 1]")));
    }
    let stream_seed = seeds::keyed(seeds::derive(seed, seeds::SUPERVISION), head as u64);
    let mut stream = Stream::new(stream_seed);
    let mut out = derived(m, RegimeOp::SupervisionFraction { head, fraction, seed });
    out.seeds.insert(format!("{}_{head}", seeds::SUPERVISION), stream_seed);

    let image_level = head.level() == HeadLevel::Image;
    let mut units: Vec<u64> = if image_level {
        training_images(m)
    } else {
        m.instances_in(Subset::BaseTrain).map(|i| i.instance_id).collect()
    };
    units.sort_unstable();
    let n_keep = (fraction * units.len() as f64).round() as usize;
    stream.shuffle(&mut units);
    let masked: BTreeSet<u64> = units[n_keep..].iter().copied().collect();
    if image_level {
        for img in &mut out.images {
            if masked.contains(&img.image_id) {
                img.masked_heads.insert(head);
            }
        }
    } else {
        for inst in &mut out.instances {
            if masked.contains(&inst.instance_id) {
                inst.masked_heads.insert(head);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortionRow {
    pub regime: String,
    pub ratio: f64,
    pub instances: usize,
    pub portion_pct: f64,
}

/// Training instances of `m` as a percentage of its full base manifest.
pub fn instance_portion(m: &BenchmarkManifest, base: Option<&BenchmarkManifest>) -> Result<PortionRow> {
    let instances = m.train_instance_count();
    let (regime, ratio, full) = match &m.regime {
        Regime::Full => ("full".to_string(), 1.0, instances),
        Regime::Derived { base_hash, op } => {
            let base = base.ok_or_else(|| {
                Error::Argument(format!("{} needs its base manifest", m.regime.id()))
            })?;
            if &base.content_hash() != base_hash {
                return Err(Error::Argument(
                    "base manifest does not match the recorded base hash".into(),
                ));
            }
            (op.name().to_string(), op.ratio(), base.train_instance_count())
        }
    };
    let portion_pct = if full == 0 {
        0.0
    } else {
        100.0 * instances as f64 / full as f64
    };
    Ok(PortionRow {
        regime,
        ratio,
        instances,
        portion_pct,
    })
}

pub fn instance_portion_report(
    base: &BenchmarkManifest,
    regimes: &[&BenchmarkManifest],
) -> Result<Vec<PortionRow>> {
    let mut rows = vec![instance_portion(base, None)?];
    for m in regimes {
        rows.push(instance_portion(m, Some(base))?);
    }
    Ok(rows)
}

/// Writes rows as CSV with columns `regime,ratio,instances,portion_pct`.
pub fn write_portion_csv<W: Write>(rows: &[PortionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Argument(e.to_string());
    w.write_record(["regime", "ratio", "instances", "portion_pct"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.regime.clone(),
            r.ratio.to_string(),
            r.instances.to_string(),
            format!("{:.4}", r.portion_pct),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("portion csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_manifest;

    #[test]
    fn scarce_class_drops_smallest() {
        let m = synthetic_manifest(&[500, 400, 300, 250, 200, 150, 120, 110], &[20, 30], 1);
        let out = scarce_class(&m, 0.75).unwrap();
        let base: Vec<u32> = out.categories_with_split(Split::Base).map(|c| c.instance_count).collect();
        assert_eq!(base.len(), 6);
        assert!(!base.contains(&120) && !base.contains(&110));
        assert_eq!(out.categories_with_split(Split::NovelTest).count() + out.categories_with_split(Split::NovelVal).count(), 2);
        assert!(validate_manifest(&out).is_empty(), "{:?}", validate_manifest(&out));
    }

    #[test]
    fn scarce_class_tie_break_by_id() {
        let m = synthetic_manifest(&[200, 150, 150, 150], &[20], 1);
        let out = scarce_class(&m, 0.5).unwrap();
        let mut tied: Vec<u32> = m
            .categories_with_split(Split::Base)
            .filter(|c| c.instance_count == 150)
            .map(|c| c.category_id)
            .collect();
        tied.sort();
        let kept: BTreeSet<u32> = out.categories_with_split(Split::Base).map(|c| c.category_id).collect();
        assert!(!kept.contains(&tied[0]) && !kept.contains(&tied[1]));
        assert!(kept.contains(&tied[2]));
    }

    #[test]
    fn keep_one_is_identity_but_provenance() {
        let m = synthetic_manifest(&[200, 150], &[20], 1);
        for out in [scarce_class(&m, 1.0).unwrap(), scarce_image(&m, 1.0, 4).unwrap()] {
            assert_eq!(out.instances, m.instances);
            assert_eq!(out.categories, m.categories);
            assert_ne!(out.regime, m.regime);
        }
        let adj = scarce_class_adjust(&m, 1.0, 4).unwrap();
        assert_eq!(adj.instances, m.instances);
        let sup = subsample_supervision(&m, Head::Attribute, 1.0, 4).unwrap();
        assert_eq!(sup.instances, m.instances);
    }

    #[test]
    fn rejects_bad_ratio_and_derived_input() {
        let m = synthetic_manifest(&[200], &[20], 1);
        assert!(scarce_class(&m, 0.0).is_err());
        assert!(scarce_image(&m, 1.5, 1).is_err());
        assert!(subsample_supervision(&m, Head::Scene, -0.1, 1).is_err());
        assert!(subsample_supervision(&m, Head::Rotation, 0.5, 1).is_err());
        let d = scarce_class(&m, 1.0).unwrap();
        assert!(scarce_class(&d, 0.5).is_err());
    }

    #[test]
    fn scarce_image_keeps_rounded_count() {
        // 4 training images
        let m = synthetic_manifest(&[104], &[], 1);
        let mut m = m;
        // collapse the training instances onto 4 images
        let train: Vec<u64> = m.instances_in(Subset::BaseTrain).map(|i| i.instance_id).collect();
        for (k, inst) in m.instances.iter_mut().enumerate() {
            if train.contains(&inst.instance_id) {
                inst.image_id = (k % 4) as u64 + 1;
            }
        }
        for img in &mut m.images {
            img.instance_ids = m.instances.iter().filter(|i| i.image_id == img.image_id).map(|i| i.instance_id).collect();
        }
        assert_eq!(training_images(&m).len(), 4);
        let out = scarce_image(&m, 0.5, 9).unwrap();
        assert_eq!(training_images(&out).len(), 2);
        // base-val untouched
        assert_eq!(out.instances_in(Subset::BaseVal).count(), m.instances_in(Subset::BaseVal).count());
    }

    #[test]
    fn adjust_matches_scarce_image_total() {
        let m = synthetic_manifest(&[900, 500, 300, 200, 150, 120, 105], &[30, 40], 2);
        for r in [0.25, 0.5, 0.75] {
            let img = scarce_image(&m, r, 17).unwrap();
            let adj = scarce_class_adjust(&m, r, 17).unwrap();
            assert_eq!(adj.train_instance_count(), img.train_instance_count());
            assert!(validate_manifest(&adj).is_empty());
        }
    }

    #[test]
    fn adjust_downsamples_uniformly() {
        let m = synthetic_manifest(&[1200, 600, 300, 150], &[], 3);
        let sc = scarce_class(&m, 0.75).unwrap();
        let adj = scarce_class_adjust(&m, 0.75, 5).unwrap();
        let count = |mm: &BenchmarkManifest, c: u32| mm.instances_in(Subset::BaseTrain).filter(|i| i.category_id == c).count() as f64;
        let rate = adj.train_instance_count() as f64 / sc.train_instance_count() as f64;
        for c in adj.categories_with_split(Split::Base) {
            let expect = count(&sc, c.category_id) * rate;
            assert!((count(&adj, c.category_id) - expect).abs() <= 2.0);
        }
    }

    #[test]
    fn supervision_fraction_counts() {
        let m = synthetic_manifest(&[600, 500], &[], 4);
        let n = m.train_instance_count();
        let out = subsample_supervision(&m, Head::Attribute, 0.25, 1).unwrap();
        let labeled = out
            .instances_in(Subset::BaseTrain)
            .filter(|i| !i.masked_heads.contains(&Head::Attribute))
            .count();
        assert_eq!(labeled, (0.25 * n as f64).round() as usize);
        let none = subsample_supervision(&m, Head::Scene, 0.0, 1).unwrap();
        assert!(training_images(&none)
            .iter()
            .all(|id| none.images.iter().find(|i| i.image_id == *id).unwrap().masked_heads.contains(&Head::Scene)));
    }

    #[test]
    fn portion_report() {
        let m = synthetic_manifest(&[600, 300, 200, 150], &[20], 4);
        let sc = scarce_class(&m, 0.5).unwrap();
        let rows = instance_portion_report(&m, &[&sc]).unwrap();
        assert_eq!(rows[0].portion_pct, 100.0);
        let expected = 100.0 * sc.train_instance_count() as f64 / m.train_instance_count() as f64;
        assert_eq!(rows[1].portion_pct, expected);
        assert!(instance_portion(&sc, None).is_err());
        let mut csv = Vec::new();
        write_portion_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("regime,ratio,instances,portion_pct\nfull,1,"), "{text}");
    }
}
