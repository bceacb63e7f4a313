//! Weighted multi-head loss over a batch, with its gradient.

use std::collections::BTreeMap;

use crate::backbone::FeatureMap;
use crate::datamodel::{Head, HeadLevel};
use crate::error::{Error, Result};
use crate::heads::{patch_location_edit, rotation_edit, rotation_loss, scene_loss, EditedFeatures, Sink};
use crate::model::{Model, Pathway};
use crate::nn::Grads;
use crate::raster::Image;
use crate::seeds::{keyed, Stream};

use super::data::Sample;

/// Per-head losses of a batch. `terms` are unweighted means over images;
/// `total = sum(weights[h] * terms[h])`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: BTreeMap<Head, f64>,
    pub weights: BTreeMap<Head, f64>,
    /// Base objects whose top-scoring class was right, out of `objects`.
    pub correct: usize,
    pub objects: usize,
}

impl LossBreakdown {
    pub fn weighted(&self, head: Head) -> f64 {
        self.weights.get(&head).copied().unwrap_or(0.0) * self.terms.get(&head).copied().unwrap_or(0.0)
    }

    pub fn sum_of_terms(&self) -> f64 {
        self.terms.keys().map(|&h| self.weighted(h)).sum()
    }
}

fn make_sink<'a>(g: &'a mut Option<&mut Grads>, scale: f64) -> Option<Sink<'a>> {
    g.as_deref_mut().map(move |grads| Sink { grads, scale })
}

fn bump(out: &mut LossBreakdown, head: Head, v: f64) {
    *out.terms.get_mut(&head).expect("active head") += v;
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn add(dst: &mut Image, src: &Image, scale: f64) {
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += scale * s;
    }
}

fn add_vec(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// `sum_h weights[h] * mean_images(L_h)` for the heads in `weights`
/// (classification included). When `grads` is given, the gradient of the
/// total w.r.t. every parameter is added to it. Editing operations draw
/// from a stream keyed by `edit_seed`, the image id and the head, so one
/// head's edits do not depend on which other heads are active.
pub fn total_loss(
    model: &Model,
    batch: &[&Sample],
    weights: &BTreeMap<Head, f64>,
    edit_seed: u64,
    mut grads: Option<&mut Grads>,
) -> Result<LossBreakdown> {
    for &h in weights.keys() {
        if !model.config.has(h) {
            return Err(Error::Config(format!("head {h} is active but not part of the model")));
        }
    }
    let n = batch.len().max(1) as f64;
    let w = |h: Head| weights.get(&h).copied();
    let mut out = LossBreakdown {
        weights: weights.clone(),
        terms: weights.keys().map(|&h| (h, 0.0)).collect(),
        ..Default::default()
    };
    let params = &model.params;
    let extractor = &model.extractor;
    let object_heads = weights.keys().any(|h| h.level() == HeadLevel::Object);
    let needs_map = (object_heads && model.config.pathway == Pathway::Roi)
        || [Head::SegFcn, Head::Stuff, Head::Scene].iter().any(|&h| w(h).is_some());

    for sample in batch {
        let traced = needs_map.then(|| extractor.forward_traced(params, &sample.image));
        let mut dmap = traced
            .as_ref()
            .map(|(fm, _)| Image::new(fm.map.channels, fm.map.height, fm.map.width));
        macro_rules! sink {
            ($h:expr) => {
                grads
                    .as_deref_mut()
                    .map(|g| Sink {
                        grads: g,
                        scale: w($h).unwrap_or(0.0) / n,
                    })
                    .as_mut()
            };
        }

        for o in sample.objects.iter().filter(|_| object_heads) {
            let Some(class) = o.class else { continue };
            // region feature and its backward hook
            let (f, crop, crop_trace) = match model.config.pathway {
                Pathway::Roi => {
                    let fm = &traced.as_ref().expect("map").0;
                    let (f, crop) = model.region.forward(params, fm, &o.region)?;
                    (f, Some(crop), None)
                }
                Pathway::Crop { size } => {
                    let img = sample.image.crop_resize(&o.tight, size, size);
                    let (fm, tr) = extractor.forward_traced(params, &img);
                    let f = crate::nn::global_average_pool(&fm.map);
                    (crate::backbone::RegionFeature(f), None, Some((fm, tr)))
                }
            };
            let mut df = vec![0.0; f.0.len()];
            if w(Head::Cls).is_some() {
                let (ho, dx) = crate::heads::cls_loss(&model.cls, params, &f, class, sink!(Head::Cls))?;
                out.objects += 1;
                if argmax(&ho.scores) == class {
                    out.correct += 1;
                }
                bump(&mut out, Head::Cls, ho.loss / n);
                add_vec(&mut df, &dx, w(Head::Cls).unwrap() / n);
            }
            if let (Some(wt), Some(head), Some(t)) = (w(Head::Attribute), &model.attribute, &o.attributes) {
                let (ho, dx) = head.loss(params, &f, t, sink!(Head::Attribute))?;
                bump(&mut out, Head::Attribute, ho.loss / n);
                add_vec(&mut df, &dx, wt / n);
            }
            if let (Some(wt), Some(head), Some(t)) = (w(Head::Part), &model.part, &o.parts) {
                let (ho, dx) = head.loss(params, &f, t, sink!(Head::Part))?;
                bump(&mut out, Head::Part, ho.loss / n);
                add_vec(&mut df, &dx, wt / n);
            }
            if let (Some(wt), Some(head), Some(t)) = (w(Head::Hierarchy), &model.hierarchy, &o.hierarchy) {
                let (ho, dx) = head.loss(params, &f, t, sink!(Head::Hierarchy))?;
                bump(&mut out, Head::Hierarchy, ho.loss / n);
                add_vec(&mut df, &dx, wt / n);
            }
            if let (Some(wt), Some(head), Some(t)) = (w(Head::Bbox), &model.bbox, &o.bbox) {
                let (ho, dx) = head.loss(params, &f, t, sink!(Head::Bbox))?;
                bump(&mut out, Head::Bbox, ho.loss / n);
                add_vec(&mut df, &dx, wt / n);
            }
            if let (Some(wt), Some(head), Some(t)) = (w(Head::SegRegion), &model.seg_region, &o.mask) {
                let fm = &traced.as_ref().expect("map").0;
                let c14 = head.align.align(fm, &o.region)?;
                let (ho, dx) = head.loss(params, &c14, t, sink!(Head::SegRegion))?;
                bump(&mut out, Head::SegRegion, ho.loss / n);
                if let Some(dm) = dmap.as_mut() {
                    let scaled: Vec<f64> = dx.iter().map(|v| v * wt / n).collect();
                    c14.backward(&scaled, dm);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                match (&crop, &crop_trace) {
                    (Some(crop), _) => model.region.backward(params, crop, &df, g, dmap.as_mut().expect("map")),
                    (None, Some((fm, tr))) => {
                        let dm = crate::nn::global_average_pool_backward(&fm.map, &df);
                        extractor.backward(params, tr, dm, g);
                    }
                    _ => {}
                }
            }
        }

        if let Some((fm, _)) = &traced {
            image_level(model, sample, fm, weights, n, &mut grads, dmap.as_mut().expect("map"), &mut out)?;
        }

        let edit_stream = |h: Head| Stream::new(keyed(keyed(edit_seed, sample.image_id), h as u64));
        if let (Some(wt), Some(head)) = (w(Head::Rotation), &model.rotation) {
            let k = edit_stream(Head::Rotation).below(4) as u8;
            let (img, k) = rotation_edit(&sample.image, k)?;
            let (efm, tr) = extractor.forward_traced(params, &img);
            let edited = EditedFeatures(efm);
            let (ho, dm) = rotation_loss(head, params, &edited, k, sink!(Head::Rotation))?;
            bump(&mut out, Head::Rotation, ho.loss / n);
            if let Some(g) = grads.as_deref_mut() {
                let mut dm = dm;
                dm.data.iter_mut().for_each(|v| *v *= wt / n);
                extractor.backward(params, &tr, dm, g);
            }
        }
        if let (Some(wt), Some(head)) = (w(Head::PatchLocation), &model.patch_location) {
            let pair = patch_location_edit(&sample.image, &mut edit_stream(Head::PatchLocation))?;
            let (cfm, ctr) = extractor.forward_traced(params, &pair.center);
            let (nfm, ntr) = extractor.forward_traced(params, &pair.neighbor);
            let (ho, dc, dn) = head.loss(
                params,
                &EditedFeatures(cfm),
                &EditedFeatures(nfm),
                pair.label,
                sink!(Head::PatchLocation),
            )?;
            bump(&mut out, Head::PatchLocation, ho.loss / n);
            if let Some(g) = grads.as_deref_mut() {
                for (mut d, tr) in [(dc, ctr), (dn, ntr)] {
                    d.data.iter_mut().for_each(|v| *v *= wt / n);
                    extractor.backward(params, &tr, d, g);
                }
            }
        }

        if let (Some(g), Some((_, tr)), Some(dm)) = (grads.as_deref_mut(), &traced, dmap) {
            extractor.backward(params, tr, dm, g);
        }
    }

    for (&h, &v) in &out.terms {
        if !v.is_finite() {
            return Err(Error::NonFinite { head: h.name().into() });
        }
    }
    out.total = out.sum_of_terms();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn image_level(
    model: &Model,
    sample: &Sample,
    fm: &FeatureMap,
    weights: &BTreeMap<Head, f64>,
    n: f64,
    grads: &mut Option<&mut Grads>,
    dmap: &mut Image,
    out: &mut LossBreakdown,
) -> Result<()> {
    let params = &model.params;
    let w = |h: Head| weights.get(&h).copied();
    if let (Some(wt), Some(head), Some(labels)) = (w(Head::SegFcn), &model.seg_fcn, &sample.seg_fcn) {
        let (d, dm) = head.loss(params, fm, labels, make_sink(grads, w(Head::SegFcn).unwrap_or(0.0) / n).as_mut())?;
        bump(out, Head::SegFcn, d.output.loss / n);
        add(dmap, &dm, wt / n);
    }
    if let (Some(wt), Some(head), Some(labels)) = (w(Head::Stuff), &model.stuff, &sample.stuff) {
        let (d, dm) = head.loss(params, fm, labels, make_sink(grads, w(Head::Stuff).unwrap_or(0.0) / n).as_mut())?;
        bump(out, Head::Stuff, d.output.loss / n);
        add(dmap, &dm, wt / n);
    }
    if let (Some(wt), Some(head)) = (w(Head::Scene), &model.scene) {
        if let Some((ho, dm)) = scene_loss(head, params, fm, sample.scene, make_sink(grads, w(Head::Scene).unwrap_or(0.0) / n).as_mut())? {
            bump(out, Head::Scene, ho.loss / n);
            add(dmap, &dm, wt / n);
        }
    }
    Ok(())
}
