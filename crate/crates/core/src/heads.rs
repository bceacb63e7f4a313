//! Supervision heads, their losses and the image edits used by the
//! self-supervised tasks.
//!
//! Every head returns its loss together with the gradient w.r.t. its input.
//! Parameter gradients are accumulated into a [`Grads`] buffer scaled by the
//! caller's factor (loss weight over batch size).

use serde::{Deserialize, Serialize};

use crate::backbone::{AlignedCrop, FeatureMap, RegionFeature, RoiAlign};
use crate::datamodel::{BBox, Head, Rle};
use crate::error::{Error, Result};
use crate::nn::{
    bce_with_logit, global_average_pool, global_average_pool_backward, smooth_l1, softmax_cross_entropy,
    Grads, Linear, ParamId, Params,
};
use crate::raster::Image;
use crate::seeds::Stream;

/// Side of the predicted region mask.
pub const MASK_SIZE: usize = 14;
/// Weight on stuff classes in combined stuff mode.
pub const BACKGROUND_WEIGHT: f64 = 0.1;
/// Smallest patch side for the patch-location edit.
pub const MIN_PATCH: usize = 8;

/// Where parameter gradients go, and the factor they are scaled by.
pub struct Sink<'a> {
    pub grads: &'a mut Grads,
    pub scale: f64,
}

/// Scores and loss of one head on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub head: Head,
    pub scores: Vec<f64>,
    pub loss: f64,
}

fn check_label(head: Head, label: usize, size: usize) -> Result<()> {
    if label >= size {
        return Err(Error::Label {
            head: head.name().into(),
            label,
            size,
        });
    }
    Ok(())
}

fn linear_backward(lin: &Linear, params: &Params, x: &[f64], dy: &[f64], sink: Option<&mut Sink>) -> Vec<f64> {
    if let Some(s) = sink {
        lin.accumulate(params, x, dy, s.scale, s.grads);
    }
    lin.input_grad(params, dy)
}

/// Linear layer plus softmax cross-entropy over `outputs` classes.
#[derive(Debug, Clone, Copy)]
pub struct Classifier {
    pub head: Head,
    pub linear: Linear,
}

impl Classifier {
    pub fn new(params: &mut Params, head: Head, name: &str, inputs: usize, classes: usize) -> Self {
        Classifier {
            head,
            linear: Linear::new(params, name, inputs, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.linear.outputs
    }

    pub fn scores(&self, params: &Params, x: &[f64]) -> Vec<f64> {
        self.linear.forward(params, x)
    }

    pub fn loss(&self, params: &Params, x: &[f64], label: usize, sink: Option<&mut Sink>) -> Result<(HeadOutput, Vec<f64>)> {
        check_label(self.head, label, self.classes())?;
        let scores = self.linear.forward(params, x);
        let (loss, dz) = softmax_cross_entropy(&scores, label);
        let dx = linear_backward(&self.linear, params, x, &dz, sink);
        Ok((
            HeadOutput {
                head: self.head,
                scores,
                loss,
            },
            dx,
        ))
    }
}

/// Base classification on a region feature.
pub fn cls_loss(
    head: &Classifier,
    params: &Params,
    f: &RegionFeature,
    label: usize,
    sink: Option<&mut Sink>,
) -> Result<(HeadOutput, Vec<f64>)> {
    head.loss(params, &f.0, label, sink)
}

/// Linear layer plus summed per-label binary cross-entropy (attributes,
/// parts).
#[derive(Debug, Clone, Copy)]
pub struct MultiLabel {
    pub head: Head,
    pub linear: Linear,
}

impl MultiLabel {
    pub fn new(params: &mut Params, head: Head, inputs: usize, labels: usize) -> Self {
        MultiLabel {
            head,
            linear: Linear::new(params, head.name(), inputs, labels),
        }
    }

    pub fn loss(
        &self,
        params: &Params,
        f: &RegionFeature,
        targets: &[f64],
        sink: Option<&mut Sink>,
    ) -> Result<(HeadOutput, Vec<f64>)> {
        if targets.len() != self.linear.outputs {
            return Err(Error::Label {
                head: self.head.name().into(),
                label: targets.len(),
                size: self.linear.outputs,
            });
        }
        let scores = self.linear.forward(params, &f.0);
        let mut loss = 0.0;
        let mut dz = Vec::with_capacity(scores.len());
        for (&z, &t) in scores.iter().zip(targets) {
            let (l, d) = bce_with_logit(z, t);
            loss += l;
            dz.push(d);
        }
        let dx = linear_backward(&self.linear, params, &f.0, &dz, sink);
        Ok((
            HeadOutput {
                head: self.head,
                scores,
                loss,
            },
            dx,
        ))
    }
}

/// Independent classifiers, one per taxonomy level.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub levels: Vec<Linear>,
}

impl Hierarchy {
    pub fn new(params: &mut Params, inputs: usize, sizes: &[usize]) -> Self {
        Hierarchy {
            levels: sizes
                .iter()
                .enumerate()
                .map(|(l, &k)| Linear::new(params, &format!("hierarchy.{l}"), inputs, k))
                .collect(),
        }
    }

    pub fn loss(
        &self,
        params: &Params,
        f: &RegionFeature,
        path: &[usize],
        mut sink: Option<&mut Sink>,
    ) -> Result<(HeadOutput, Vec<f64>)> {
        if path.len() != self.levels.len() {
            return Err(Error::Label {
                head: "hierarchy".into(),
                label: path.len(),
                size: self.levels.len(),
            });
        }
        for (lin, &label) in self.levels.iter().zip(path) {
            check_label(Head::Hierarchy, label, lin.outputs)?;
        }
        let mut loss = 0.0;
        let mut scores = Vec::new();
        let mut dx = vec![0.0; f.0.len()];
        for (lin, &label) in self.levels.iter().zip(path) {
            let z = lin.forward(params, &f.0);
            let (l, dz) = softmax_cross_entropy(&z, label);
            loss += l;
            let d = linear_backward(lin, params, &f.0, &dz, sink.as_deref_mut());
            dx.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            scores.extend(z);
        }
        Ok((
            HeadOutput {
                head: Head::Hierarchy,
                scores,
                loss,
            },
            dx,
        ))
    }
}

/// R-CNN regression targets `(t_x, t_y, t_w, t_h)` of `tight` relative to
/// `region`, using box centres.
pub fn bbox_targets(region: &BBox, tight: &BBox) -> Result<[f64; 4]> {
    for b in [region, tight] {
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(Error::Geometry("box with non-positive size".into()));
        }
    }
    let (ry, rx) = region.center();
    let (ty, tx) = tight.center();
    Ok([
        (tx - rx) / region.width(),
        (ty - ry) / region.height(),
        (tight.width() / region.width()).ln(),
        (tight.height() / region.height()).ln(),
    ])
}

#[derive(Debug, Clone, Copy)]
pub struct BoxRegression {
    pub linear: Linear,
}

impl BoxRegression {
    pub fn new(params: &mut Params, inputs: usize) -> Self {
        BoxRegression {
            linear: Linear::new(params, "bbox", inputs, 4),
        }
    }

    pub fn loss(
        &self,
        params: &Params,
        f: &RegionFeature,
        targets: &[f64; 4],
        sink: Option<&mut Sink>,
    ) -> Result<(HeadOutput, Vec<f64>)> {
        let scores = self.linear.forward(params, &f.0);
        let mut loss = 0.0;
        let mut dz = [0.0; 4];
        for k in 0..4 {
            let (l, d) = smooth_l1(scores[k] - targets[k]);
            loss += l;
            dz[k] = d;
        }
        let dx = linear_backward(&self.linear, params, &f.0, &dz, sink);
        Ok((
            HeadOutput {
                head: Head::Bbox,
                scores,
                loss,
            },
            dx,
        ))
    }
}

/// 1x1 convolution over a channels-first block: per-location logits.
#[derive(Debug, Clone, Copy)]
pub struct PointwiseConv {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl PointwiseConv {
    pub fn new(params: &mut Params, name: &str, inputs: usize, outputs: usize) -> Self {
        PointwiseConv {
            inputs,
            outputs,
            weight: params.add(format!("{name}.weight"), &[outputs, inputs], inputs),
            bias: params.add(format!("{name}.bias"), &[outputs], 0),
        }
    }

    pub fn init(&self, params: &mut Params, stream: &mut Stream) {
        params.init(self.weight, stream);
        params.init(self.bias, stream);
    }

    /// `x` is `inputs x n`; returns `outputs x n`.
    pub fn forward(&self, params: &Params, x: &[f64], n: usize) -> Vec<f64> {
        let w = params.get(self.weight);
        let b = params.get(self.bias);
        let mut out = vec![0.0; self.outputs * n];
        for o in 0..self.outputs {
            let dst = &mut out[o * n..(o + 1) * n];
            dst.iter_mut().for_each(|v| *v = b[o]);
            for i in 0..self.inputs {
                let wv = w[o * self.inputs + i];
                for (d, s) in dst.iter_mut().zip(&x[i * n..(i + 1) * n]) {
                    *d += wv * s;
                }
            }
        }
        out
    }

    pub fn backward(&self, params: &Params, x: &[f64], n: usize, dy: &[f64], sink: Option<&mut Sink>) -> Vec<f64> {
        let w = params.get(self.weight);
        let mut dx = vec![0.0; self.inputs * n];
        for o in 0..self.outputs {
            let g = &dy[o * n..(o + 1) * n];
            for i in 0..self.inputs {
                let wv = w[o * self.inputs + i];
                for (d, gv) in dx[i * n..(i + 1) * n].iter_mut().zip(g) {
                    *d += wv * gv;
                }
            }
        }
        if let Some(s) = sink {
            let mut gw = vec![0.0; self.outputs * self.inputs];
            let mut gb = vec![0.0; self.outputs];
            for o in 0..self.outputs {
                let g = &dy[o * n..(o + 1) * n];
                gb[o] = g.iter().sum();
                for i in 0..self.inputs {
                    gw[o * self.inputs + i] = g.iter().zip(&x[i * n..(i + 1) * n]).map(|(a, b)| a * b).sum();
                }
            }
            for (a, g) in s.grads.slice_mut(params, self.weight).iter_mut().zip(gw) {
                *a += s.scale * g;
            }
            for (a, g) in s.grads.slice_mut(params, self.bias).iter_mut().zip(gb) {
                *a += s.scale * g;
            }
        }
        dx
    }
}

/// Foreground fraction of `mask` sampled at the centres of an `m x m` grid
/// laid over `region` (pixel coordinates of the mask).
pub fn region_mask_targets(mask: &Rle, region: &BBox, m: usize) -> Result<Vec<f64>> {
    if !(region.width() > 0.0 && region.height() > 0.0) {
        return Err(Error::Geometry("empty mask region".into()));
    }
    let bits = mask.to_bitmap();
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        let y = region.y0 + (i as f64 + 0.5) * region.height() / m as f64;
        for j in 0..m {
            let x = region.x0 + (j as f64 + 0.5) * region.width() / m as f64;
            let (py, px) = (y.floor(), x.floor());
            let on = py >= 0.0
                && px >= 0.0
                && (py as usize) < h
                && (px as usize) < w
                && bits[py as usize * w + px as usize];
            out.push(if on { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

/// Binary mask prediction inside an aligned region.
#[derive(Debug, Clone, Copy)]
pub struct SegRegion {
    pub align: RoiAlign,
    pub conv: PointwiseConv,
}

impl SegRegion {
    pub fn new(params: &mut Params, channels: usize) -> Self {
        SegRegion {
            align: RoiAlign {
                size: MASK_SIZE,
                sampling: 2,
            },
            conv: PointwiseConv::new(params, "seg_region", channels, 1),
        }
    }

    pub fn loss(
        &self,
        params: &Params,
        crop: &AlignedCrop,
        targets: &[f64],
        sink: Option<&mut Sink>,
    ) -> Result<(HeadOutput, Vec<f64>)> {
        let n = crop.size * crop.size;
        if n == 0 || targets.len() != n {
            return Err(Error::Geometry("mask target does not match region grid".into()));
        }
        let z = self.conv.forward(params, &crop.values, n);
        let mut loss = 0.0;
        let mut dz = Vec::with_capacity(n);
        for (&zi, &t) in z.iter().zip(targets) {
            let (l, d) = bce_with_logit(zi, t);
            loss += l;
            dz.push(d);
        }
        let dx = self.conv.backward(params, &crop.values, n, &dz, sink);
        Ok((
            HeadOutput {
                head: Head::SegRegion,
                scores: z,
                loss,
            },
            dx,
        ))
    }
}

/// Stride-8 label grid; `None` cells are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<Option<u32>>,
}

impl LabelGrid {
    pub fn labeled(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Area-majority down-sampling of a pixel label raster by `stride`. Ignored
/// pixels vote too; ties go to the smallest label, ignore last.
pub fn majority_pool(pixels: &[Option<u32>], height: usize, width: usize, stride: usize) -> LabelGrid {
    let (gh, gw) = (height.div_ceil(stride), width.div_ceil(stride));
    let mut cells = Vec::with_capacity(gh * gw);
    let mut votes: std::collections::BTreeMap<Option<u32>, usize> = Default::default();
    for gy in 0..gh {
        for gx in 0..gw {
            votes.clear();
            for y in gy * stride..((gy + 1) * stride).min(height) {
                for x in gx * stride..((gx + 1) * stride).min(width) {
                    *votes.entry(pixels[y * width + x]).or_default() += 1;
                }
            }
            let best = votes
                .iter()
                .max_by(|a, b| {
                    a.1.cmp(b.1)
                        .then_with(|| a.0.is_some().cmp(&b.0.is_some()))
                        .then_with(|| b.0.cmp(a.0))
                })
                .map(|(k, _)| *k)
                .unwrap_or(None);
            cells.push(best);
        }
    }
    LabelGrid {
        height: gh,
        width: gw,
        cells,
    }
}

fn map_values(fm: &FeatureMap) -> (&[f64], usize) {
    (&fm.map.data, fm.map.height * fm.map.width)
}

fn grad_map(fm: &FeatureMap, dx: Vec<f64>) -> Image {
    Image {
        channels: fm.map.channels,
        height: fm.map.height,
        width: fm.map.width,
        data: dx,
    }
}

/// Semantic segmentation over base classes on the feature map.
#[derive(Debug, Clone, Copy)]
pub struct SegFcn {
    pub conv: PointwiseConv,
}

/// Loss of a dense head, with a flag for grids that had no labeled cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    pub output: HeadOutput,
    pub all_ignored: bool,
}

impl SegFcn {
    pub fn new(params: &mut Params, channels: usize, classes: usize) -> Self {
        SegFcn {
            conv: PointwiseConv::new(params, "seg_fcn", channels, classes),
        }
    }

    pub fn loss(
        &self,
        params: &Params,
        fm: &FeatureMap,
        labels: &LabelGrid,
        sink: Option<&mut Sink>,
    ) -> Result<(DenseOutput, Image)> {
        let weights = vec![1.0; self.conv.outputs];
        dense_ce(Head::SegFcn, &self.conv, params, fm, labels, &weights, sink)
    }
}

fn dense_ce(
    head: Head,
    conv: &PointwiseConv,
    params: &Params,
    fm: &FeatureMap,
    labels: &LabelGrid,
    class_weight: &[f64],
    sink: Option<&mut Sink>,
) -> Result<(DenseOutput, Image)> {
    let (x, n) = map_values(fm);
    if labels.cells.len() != n {
        return Err(Error::Geometry(format!("{head}: label grid does not match the feature map")));
    }
    for &l in labels.cells.iter().flatten() {
        check_label(head, l as usize, conv.outputs)?;
    }
    let count = labels.labeled();
    let z = conv.forward(params, x, n);
    let k = conv.outputs;
    let mut dz = vec![0.0; k * n];
    let mut loss = 0.0;
    if count > 0 {
        let norm = 1.0 / count as f64;
        let mut logits = vec![0.0; k];
        for (cell, label) in labels.cells.iter().enumerate() {
            let Some(label) = label else { continue };
            for c in 0..k {
                logits[c] = z[c * n + cell];
            }
            let w = class_weight[*label as usize] * norm;
            let (l, d) = softmax_cross_entropy(&logits, *label as usize);
            loss += w * l;
            for c in 0..k {
                dz[c * n + cell] = w * d[c];
            }
        }
    }
    let dx = conv.backward(params, x, n, &dz, sink);
    Ok((
        DenseOutput {
            output: HeadOutput {
                head,
                scores: z,
                loss,
            },
            all_ignored: count == 0,
        },
        grad_map(fm, dx),
    ))
}

/// Object-vs-stuff prediction on the feature map.
#[derive(Debug, Clone, Copy)]
pub struct Stuff {
    pub conv: PointwiseConv,
    /// `Some(k_base)` in combined mode: classes `0..k_base` are base
    /// objects, the rest stuff classes.
    pub combined: Option<usize>,
}

impl Stuff {
    /// Plain mode: one logit, label 1 = object, 0 = stuff.
    pub fn plain(params: &mut Params, channels: usize) -> Self {
        Stuff {
            conv: PointwiseConv::new(params, "stuff", channels, 1),
            combined: None,
        }
    }

    pub fn combined(params: &mut Params, channels: usize, base: usize, stuff: usize) -> Self {
        Stuff {
            conv: PointwiseConv::new(params, "stuff", channels, base + stuff),
            combined: Some(base),
        }
    }

    pub fn loss(
        &self,
        params: &Params,
        fm: &FeatureMap,
        labels: &LabelGrid,
        sink: Option<&mut Sink>,
    ) -> Result<(DenseOutput, Image)> {
        match self.combined {
            Some(base) => {
                let weights: Vec<f64> = (0..self.conv.outputs)
                    .map(|c| if c < base { 1.0 } else { BACKGROUND_WEIGHT })
                    .collect();
                dense_ce(Head::Stuff, &self.conv, params, fm, labels, &weights, sink)
            }
            None => {
                let (x, n) = map_values(fm);
                if labels.cells.len() != n {
                    return Err(Error::Geometry("stuff: label grid does not match the feature map".into()));
                }
                for &l in labels.cells.iter().flatten() {
                    check_label(Head::Stuff, l as usize, 2)?;
                }
                let count = labels.labeled();
                let z = self.conv.forward(params, x, n);
                let mut dz = vec![0.0; n];
                let mut loss = 0.0;
                for (cell, label) in labels.cells.iter().enumerate() {
                    if let Some(t) = label {
                        let (l, d) = bce_with_logit(z[cell], f64::from(*t));
                        loss += l / count as f64;
                        dz[cell] = d / count as f64;
                    }
                }
                let dx = self.conv.backward(params, x, n, &dz, sink);
                Ok((
                    DenseOutput {
                        output: HeadOutput {
                            head: Head::Stuff,
                            scores: z,
                            loss,
                        },
                        all_ignored: count == 0,
                    },
                    grad_map(fm, dx),
                ))
            }
        }
    }
}

/// Global average pooling, then a linear classifier. Used for scene labels
/// and for the rotation task.
#[derive(Debug, Clone, Copy)]
pub struct PooledClassifier {
    pub classifier: Classifier,
}

impl PooledClassifier {
    pub fn new(params: &mut Params, head: Head, channels: usize, classes: usize) -> Self {
        PooledClassifier {
            classifier: Classifier::new(params, head, head.name(), channels, classes),
        }
    }

    pub fn scores(&self, params: &Params, fm: &FeatureMap) -> Vec<f64> {
        self.classifier.scores(params, &global_average_pool(&fm.map))
    }

    pub fn loss(&self, params: &Params, fm: &FeatureMap, label: usize, sink: Option<&mut Sink>) -> Result<(HeadOutput, Image)> {
        let pooled = global_average_pool(&fm.map);
        let (out, dp) = self.classifier.loss(params, &pooled, label, sink)?;
        Ok((out, global_average_pool_backward(&fm.map, &dp)))
    }
}

/// Feature map of an edited whole image; only self-supervised heads take it.
#[derive(Debug, Clone, PartialEq)]
pub struct EditedFeatures(pub FeatureMap);

/// Scene classification from the image's own feature map.
pub fn scene_loss(
    head: &PooledClassifier,
    params: &Params,
    fm: &FeatureMap,
    label: Option<usize>,
    sink: Option<&mut Sink>,
) -> Result<Option<(HeadOutput, Image)>> {
    match label {
        Some(l) => head.loss(params, fm, l, sink).map(Some),
        None => Ok(None),
    }
}

/// Four-way rotation prediction on a rotated image.
pub fn rotation_loss(
    head: &PooledClassifier,
    params: &Params,
    edited: &EditedFeatures,
    k: u8,
    sink: Option<&mut Sink>,
) -> Result<(HeadOutput, Image)> {
    head.loss(params, &edited.0, k as usize, sink)
}

/// Centre square of `image` rotated counter-clockwise by `90 * k` degrees.
pub fn rotation_edit(image: &Image, k: u8) -> Result<(Image, u8)> {
    if k > 3 {
        return Err(Error::Argument(format!("rotation index {k} outside 0..4")));
    }
    if image.height == 0 || image.width == 0 {
        return Err(Error::Image("empty image".into()));
    }
    Ok((image.center_square().rotate90(k), k))
}

/// Label of the neighbour at row-major grid index `cell`: cells 0..8 minus
/// the centre 4, enumerated in order.
pub fn patch_label(cell: usize) -> Option<u8> {
    match cell {
        0..=3 => Some(cell as u8),
        5..=8 => Some(cell as u8 - 1),
        _ => None,
    }
}

pub fn patch_cell(label: u8) -> usize {
    if label < 4 {
        label as usize
    } else {
        label as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub center: Image,
    pub neighbor: Image,
    pub label: u8,
}

/// Cuts the image into a 3x3 grid and returns the centre cell and a random
/// neighbour with its position label.
pub fn patch_location_edit(image: &Image, stream: &mut Stream) -> Result<PatchPair> {
    let label = stream.below(8) as u8;
    patch_location_at(image, label)
}

pub fn patch_location_at(image: &Image, label: u8) -> Result<PatchPair> {
    let (ph, pw) = (image.height / 3, image.width / 3);
    if ph < MIN_PATCH || pw < MIN_PATCH || label > 7 {
        return Err(Error::Image(format!(
            "image {}x{} too small for a 3x3 patch grid",
            image.width, image.height
        )));
    }
    let cell = patch_cell(label);
    let (oy, ox) = ((image.height - 3 * ph) / 2, (image.width - 3 * pw) / 2);
    let patch = |g: usize| image.window(oy + (g / 3) * ph, ox + (g % 3) * pw, ph, pw);
    Ok(PatchPair {
        center: patch(4),
        neighbor: patch(cell),
        label,
    })
}

/// Eight-way relative position from the pooled features of both patches.
#[derive(Debug, Clone, Copy)]
pub struct PatchLocation {
    pub classifier: Classifier,
}

impl PatchLocation {
    pub fn new(params: &mut Params, channels: usize) -> Self {
        PatchLocation {
            classifier: Classifier::new(params, Head::PatchLocation, "patch_location", 2 * channels, 8),
        }
    }

    pub fn loss(
        &self,
        params: &Params,
        center: &EditedFeatures,
        neighbor: &EditedFeatures,
        label: u8,
        sink: Option<&mut Sink>,
    ) -> Result<(HeadOutput, Image, Image)> {
        let mut x = global_average_pool(&center.0.map);
        let d = x.len();
        x.extend(global_average_pool(&neighbor.0.map));
        let (out, dx) = self.classifier.loss(params, &x, label as usize, sink)?;
        Ok((
            out,
            global_average_pool_backward(&center.0.map, &dx[..d]),
            global_average_pool_backward(&neighbor.0.map, &dx[d..]),
        ))
    }
}

/// Vocabulary sizes and grid constants the heads were built with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDims {
    pub base_classes: usize,
    pub attributes: usize,
    pub hierarchy: Vec<usize>,
    pub parts: usize,
    pub scenes: usize,
    pub stuff_classes: usize,
    pub stuff_combined: bool,
    pub mask_size: usize,
    pub patch_labels: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};

    fn rand_vec(n: usize, s: &mut Stream) -> Vec<f64> {
        (0..n).map(|_| s.normal()).collect()
    }

    fn params_with<T>(seed: u64, build: impl FnOnce(&mut Params) -> T) -> (Params, T) {
        let mut p = Params::default();
        let t = build(&mut p);
        let mut s = Stream::new(seed);
        for v in &mut p.values {
            *v = 0.5 * s.normal();
        }
        (p, t)
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let (mut p, c) = params_with(1, |p| Classifier::new(p, Head::Cls, "cls", 3, 7));
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let (out, _) = cls_loss(&c, &p, &RegionFeature(vec![1.0, 2.0, 3.0]), 4, None).unwrap();
        assert!((out.loss - 7f64.ln()).abs() < 1e-12);
        assert!(matches!(cls_loss(&c, &p, &RegionFeature(vec![0.0; 3]), 7, None), Err(Error::Label { .. })));
    }

    #[test]
    fn cls_matches_scalar_softmax() {
        let (p, c) = params_with(2, |p| Classifier::new(p, Head::Cls, "cls", 2, 3));
        let f = vec![0.3, -1.2];
        let z = c.scores(&p, &f);
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let want = -(e[1] / e.iter().sum::<f64>()).ln();
        let (out, _) = c.loss(&p, &f, 1, None).unwrap();
        assert!((out.loss - want).abs() < 1e-9);
    }

    #[test]
    fn multilabel_zero_logits() {
        let (mut p, h) = params_with(3, |p| MultiLabel::new(p, Head::Attribute, 4, 6));
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let (out, _) = h
            .loss(&p, &RegionFeature(vec![1.0; 4]), &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0], None)
            .unwrap();
        assert!((out.loss - 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn multilabel_matches_per_bit_oracle() {
        let (p, h) = params_with(4, |p| MultiLabel::new(p, Head::Part, 3, 4));
        let f = RegionFeature(vec![0.2, -0.4, 1.1]);
        let t = [1.0, 0.0, 0.0, 1.0];
        let z = h.linear.forward(&p, &f.0);
        let want: f64 = z
            .iter()
            .zip(t)
            .map(|(&z, t)| {
                let s = 1.0 / (1.0 + (-z).exp());
                -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
            })
            .sum();
        assert!((h.loss(&p, &f, &t, None).unwrap().0.loss - want).abs() < 1e-9);
    }

    #[test]
    fn hierarchy_uniform_and_errors() {
        let (mut p, h) = params_with(5, |p| Hierarchy::new(p, 3, &[2, 3, 5, 7]));
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let (out, _) = h.loss(&p, &RegionFeature(vec![1.0; 3]), &[1, 2, 4, 6], None).unwrap();
        let want: f64 = [2f64, 3.0, 5.0, 7.0].iter().map(|k| k.ln()).sum();
        assert!((out.loss - want).abs() < 1e-12);
        assert!(h.loss(&p, &RegionFeature(vec![1.0; 3]), &[0, 3, 0, 0], None).is_err());
    }

    #[test]
    fn bbox_target_parameterization() {
        let tight = BBox::from_xywh(10.0, 20.0, 8.0, 6.0);
        assert_eq!(bbox_targets(&tight, &tight).unwrap(), [0.0; 4]);
        let region = BBox::from_xywh(6.0, 17.0, 16.0, 12.0);
        let t = bbox_targets(&region, &tight).unwrap();
        assert!(t[0].abs() < 1e-15 && t[1].abs() < 1e-15);
        assert!((t[2] + 2f64.ln()).abs() < 1e-15 && (t[3] + 2f64.ln()).abs() < 1e-15);
        assert!(bbox_targets(&BBox::new(1.0, 1.0, 1.0, 3.0), &tight).is_err());
        let (mut p, h) = params_with(6, |p| BoxRegression::new(p, 2));
        p.values.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(h.loss(&p, &RegionFeature(vec![1.0, 1.0]), &[0.0; 4], None).unwrap().0.loss, 0.0);
    }

    #[test]
    fn seg_region_constant_cases() {
        let (mut p, h) = params_with(7, |p| SegRegion::new(p, 2));
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let fm = FeatureMap { stride: 8, map: Image::filled(2, 4, 4, 1.0) };
        let crop = h.align.align(&fm, &BBox::new(0.0, 0.0, 32.0, 32.0)).unwrap();
        let t = vec![1.0; MASK_SIZE * MASK_SIZE];
        let (out, _) = h.loss(&p, &crop, &t, None).unwrap();
        assert!((out.loss - (MASK_SIZE * MASK_SIZE) as f64 * 2f64.ln()).abs() < 1e-9);
        let b = h.conv.bias;
        p.get_mut(b)[0] = 1e6;
        assert!(h.loss(&p, &crop, &t, None).unwrap().0.loss < 1e-12);
    }

    #[test]
    fn region_mask_targets_sample_centres() {
        let mask = Rle::from_rect(8, 8, 0, 0, 4, 8);
        let t = region_mask_targets(&mask, &BBox::new(0.0, 0.0, 8.0, 8.0), 4).unwrap();
        assert_eq!(t, [1.0, 1.0, 0.0, 0.0].repeat(4));
        assert!(region_mask_targets(&mask, &BBox::new(2.0, 2.0, 2.0, 5.0), 4).is_err());
    }

    #[test]
    fn seg_region_small_oracle() {
        // 4x4 grid against a direct per-cell BCE sum
        let (p, h) = params_with(8, |p| SegRegion::new(p, 3));
        let mut s = Stream::new(9);
        let mut map = Image::new(3, 3, 3);
        map.data.iter_mut().for_each(|v| *v = s.normal());
        let fm = FeatureMap { stride: 8, map };
        let ra = RoiAlign { size: 4, sampling: 2 };
        let crop = ra.align(&fm, &BBox::new(1.0, 2.0, 20.0, 23.0)).unwrap();
        let t: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let w = p.get(h.conv.weight);
        let b = p.get(h.conv.bias)[0];
        let mut want = 0.0;
        for cell in 0..16 {
            let z = b + (0..3).map(|c| w[c] * crop.values[c * 16 + cell]).sum::<f64>();
            let sg = 1.0 / (1.0 + (-z).exp());
            want -= t[cell] * sg.ln() + (1.0 - t[cell]) * (1.0 - sg).ln();
        }
        assert!((h.loss(&p, &crop, &t, None).unwrap().0.loss - want).abs() < 1e-9);
    }

    fn grid(cells: Vec<Option<u32>>, h: usize, w: usize) -> LabelGrid {
        LabelGrid { height: h, width: w, cells }
    }

    #[test]
    fn seg_fcn_cases() {
        let (mut p, h) = params_with(10, |p| SegFcn::new(p, 2, 5));
        let fm = FeatureMap { stride: 8, map: Image::filled(2, 2, 2, 0.5) };
        let (out, _) = h.loss(&p, &fm, &grid(vec![None; 4], 2, 2), None).unwrap();
        assert!(out.all_ignored && out.output.loss == 0.0);
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let (out, _) = h.loss(&p, &fm, &grid(vec![None, Some(3), None, None], 2, 2), None).unwrap();
        assert!((out.output.loss - 5f64.ln()).abs() < 1e-12);
        assert!(h.loss(&p, &fm, &grid(vec![None, Some(5), None, None], 2, 2), None).is_err());
    }

    #[test]
    fn combined_stuff_background_scaling() {
        let (p, plain) = params_with(11, |p| Stuff::plain(p, 2));
        let fm = FeatureMap { stride: 8, map: Image::filled(2, 2, 2, 0.5) };
        let (out, _) = plain.loss(&p, &fm, &grid(vec![None; 4], 2, 2), None).unwrap();
        assert_eq!(out.output.loss, 0.0);

        let (p, st) = params_with(12, |p| Stuff::combined(p, 2, 3, 2));
        let mut s = Stream::new(13);
        let mut map = Image::new(2, 2, 2);
        map.data.iter_mut().for_each(|v| *v = s.normal());
        let fm = FeatureMap { stride: 8, map };
        let labels = grid(vec![Some(3), None, Some(4), Some(4)], 2, 2);
        let (out, _) = st.loss(&p, &fm, &labels, None).unwrap();
        let z = st.conv.forward(&p, &fm.map.data, 4);
        let mut unweighted = 0.0;
        for (cell, l) in labels.cells.iter().enumerate() {
            if let Some(l) = l {
                let logits: Vec<f64> = (0..5).map(|c| z[c * 4 + cell]).collect();
                unweighted += softmax_cross_entropy(&logits, *l as usize).0;
            }
        }
        unweighted /= 3.0;
        assert!((out.output.loss - 0.1 * unweighted).abs() < 1e-12);
    }

    #[test]
    fn majority_pool_ties_and_ignore() {
        let px = vec![Some(1), Some(2), None, None, Some(2), Some(1), None, Some(0), None];
        let g = majority_pool(&px, 3, 3, 2);
        assert_eq!((g.height, g.width), (2, 2));
        assert_eq!(g.cells, vec![Some(2), Some(1), Some(0), None]);
        let tie = majority_pool(&[Some(3), Some(1), Some(1), Some(3)], 2, 2, 2);
        assert_eq!(tie.cells, vec![Some(1)]);
    }

    #[test]
    fn rotation_edit_group() {
        let mut s = Stream::new(14);
        let mut img = Image::new(1, 5, 7);
        img.data.iter_mut().for_each(|v| *v = s.unit());
        let (r0, k) = rotation_edit(&img, 0).unwrap();
        assert_eq!((r0, k), (img.center_square(), 0));
        let (r1, _) = rotation_edit(&img, 1).unwrap();
        let (r2, _) = rotation_edit(&img, 2).unwrap();
        assert_eq!(r1.rotate90(1), r2);
        assert!(rotation_edit(&img, 4).is_err());
    }

    #[test]
    fn patch_enumeration_table() {
        let table: Vec<Option<u8>> = (0..9).map(patch_label).collect();
        assert_eq!(
            table,
            vec![Some(0), Some(1), Some(2), Some(3), None, Some(4), Some(5), Some(6), Some(7)]
        );
        for l in 0..8u8 {
            assert_eq!(patch_label(patch_cell(l)), Some(l));
        }
        let mut img = Image::new(1, 30, 27);
        for y in 0..30 {
            for x in 0..27 {
                img.set(0, y, x, (y * 100 + x) as f64);
            }
        }
        let pair = patch_location_at(&img, 1).unwrap();
        assert_eq!(pair.neighbor.get(0, 0, 0), img.get(0, 0, 9));
        assert_eq!(pair.center.get(0, 0, 0), img.get(0, 10, 9));
        let mut seen = [false; 8];
        let mut s = Stream::new(15);
        for _ in 0..200 {
            seen[patch_location_edit(&img, &mut s).unwrap().label as usize] = true;
        }
        assert!(seen.iter().all(|&b| b));
        assert!(patch_location_at(&Image::new(1, 20, 40), 0).is_err());
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut s = Stream::new(16);
        for case in 0..20 {
            let (p, cls) = params_with(100 + case, |p| Classifier::new(p, Head::Cls, "cls", 4, 5));
            let f = rand_vec(4, &mut s);
            let label = s.below(5) as usize;
            let (_, dx) = cls.loss(&p, &f, label, None).unwrap();
            let num = numeric_gradient(|x| cls.loss(&p, x, label, None).unwrap().0.loss, &f, 1e-5);
            assert!(relative_error(&dx, &num) < 1e-4);

            let (p, bb) = params_with(200 + case, |p| BoxRegression::new(p, 3));
            let f = rand_vec(3, &mut s);
            let t = [s.normal(), s.normal(), s.normal(), s.normal()];
            let (_, dx) = bb.loss(&p, &RegionFeature(f.clone()), &t, None).unwrap();
            let num = numeric_gradient(|x| bb.loss(&p, &RegionFeature(x.to_vec()), &t, None).unwrap().0.loss, &f, 1e-5);
            assert!(relative_error(&dx, &num) < 1e-4);
        }
    }
}
