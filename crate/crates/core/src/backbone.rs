//! Feature extractor and region pooling: image -> stride-8 feature map ->
//! fixed-size region feature.

use serde::{Deserialize, Serialize};

use crate::datamodel::BBox;
use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_inplace, Conv2d, Grads, Linear, Params};
use crate::raster::Image;
use crate::seeds::Stream;

/// Total down-sampling of every extractor.
pub const STRIDE: usize = 8;

/// Boxes narrower than `STRIDE * DEGENERATE_EPS` pixels cannot be pooled.
pub const DEGENERATE_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Convolution followed by ReLU.
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
    },
    /// Two 3x3 stride-1 convolutions with an identity skip.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl ExtractorConfig {
    /// Three stride-2 3x3 convolutions.
    pub fn tiny(width: usize) -> Self {
        let conv = |out| LayerSpec::Conv {
            out,
            kernel: 3,
            stride: 2,
        };
        ExtractorConfig {
            in_channels: 3,
            layers: vec![conv(width), conv(2 * width), conv(2 * width)],
        }
    }

    /// ResNet-18 layout without max-pooling or normalization: the stem and
    /// the first two stage transitions halve the resolution, the last stage
    /// keeps it.
    pub fn resnet18() -> Self {
        let mut layers = vec![LayerSpec::Conv {
            out: 64,
            kernel: 7,
            stride: 2,
        }];
        for (out, stride) in [(64, 1), (128, 2), (256, 2), (512, 1)] {
            if out != 64 {
                layers.push(LayerSpec::Conv {
                    out,
                    kernel: 3,
                    stride,
                });
            }
            layers.push(LayerSpec::Residual);
            layers.push(LayerSpec::Residual);
        }
        ExtractorConfig {
            in_channels: 3,
            layers,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny(8)),
            "small" => Ok(Self::tiny(16)),
            "resnet18" => Ok(Self::resnet18()),
            other => Err(Error::Config(format!(
                "unknown extractor preset '{other}' (tiny, small, resnet18)"
            ))),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.layers
            .iter()
            .fold(self.in_channels, |c, l| match l {
                LayerSpec::Conv { out, .. } => *out,
                LayerSpec::Residual => c,
            })
    }

    pub fn stride(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv { stride, .. } => *stride,
                LayerSpec::Residual => 1,
            })
            .product()
    }

    pub fn check(&self) -> Result<()> {
        if self.stride() != STRIDE {
            return Err(Error::Config(format!(
                "extractor stride is {}, expected {STRIDE}",
                self.stride()
            )));
        }
        for l in &self.layers {
            if let LayerSpec::Conv { kernel, stride, .. } = l {
                if kernel % 2 == 0 || *stride == 0 {
                    return Err(Error::Config("conv kernels must be odd, strides positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Stride-8 feature map, channels-first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub stride: usize,
    pub map: Image,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.map.channels
    }

    pub fn is_finite(&self) -> bool {
        self.map.data.iter().all(|v| v.is_finite())
    }
}

/// Feature vector `f` of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeature(pub Vec<f64>);

#[derive(Debug, Clone, Copy)]
enum Layer {
    Conv(Conv2d),
    Residual(Conv2d, Conv2d),
}

#[derive(Debug, Clone)]
pub struct Extractor {
    pub config: ExtractorConfig,
    layers: Vec<Layer>,
}

/// Activations kept for the backward pass. The last layer is left linear.
pub struct ExtractorTrace {
    input: Image,
    /// Per layer: output, plus the inner activation of residual blocks.
    outputs: Vec<(Image, Option<Image>)>,
}

impl Extractor {
    pub fn new(params: &mut Params, config: ExtractorConfig) -> Result<Self> {
        config.check()?;
        let mut c = config.in_channels;
        let mut layers = Vec::new();
        for (i, spec) in config.layers.iter().enumerate() {
            match *spec {
                LayerSpec::Conv { out, kernel, stride } => {
                    layers.push(Layer::Conv(Conv2d::new(
                        params,
                        &format!("extractor.{i}"),
                        c,
                        out,
                        kernel,
                        stride,
                    )));
                    c = out;
                }
                LayerSpec::Residual => layers.push(Layer::Residual(
                    Conv2d::new(params, &format!("extractor.{i}.a"), c, c, 3, 1),
                    Conv2d::new(params, &format!("extractor.{i}.b"), c, c, 3, 1),
                )),
            }
        }
        Ok(Extractor { config, layers })
    }

    pub fn init(&self, params: &mut Params, stream: &mut Stream) {
        for l in &self.layers {
            match l {
                Layer::Conv(c) => c.init(params, stream),
                Layer::Residual(a, b) => {
                    a.init(params, stream);
                    b.init(params, stream);
                }
            }
        }
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    pub fn forward(&self, params: &Params, image: &Image) -> FeatureMap {
        self.forward_traced(params, image).0
    }

    pub fn forward_traced(&self, params: &Params, image: &Image) -> (FeatureMap, ExtractorTrace) {
        let mut outputs: Vec<(Image, Option<Image>)> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            let x = outputs.last().map_or(image, |o| &o.0);
            let entry = match l {
                Layer::Conv(c) => {
                    let mut y = c.forward(params, x);
                    if i < last {
                        relu_inplace(&mut y);
                    }
                    (y, None)
                }
                Layer::Residual(a, b) => {
                    let mut h = a.forward(params, x);
                    relu_inplace(&mut h);
                    let mut y = b.forward(params, &h);
                    for (v, s) in y.data.iter_mut().zip(&x.data) {
                        *v += s;
                    }
                    if i < last {
                        relu_inplace(&mut y);
                    }
                    (y, Some(h))
                }
            };
            outputs.push(entry);
        }
        let map = outputs.last().map_or_else(|| image.clone(), |o| o.0.clone());
        (
            FeatureMap {
                stride: STRIDE,
                map,
            },
            ExtractorTrace {
                input: image.clone(),
                outputs,
            },
        )
    }

    /// Accumulates parameter gradients given `dL/dmap`; returns `dL/dimage`.
    pub fn backward(&self, params: &Params, trace: &ExtractorTrace, dmap: Image, grads: &mut Grads) -> Image {
        let mut dy = dmap;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = if i == 0 { &trace.input } else { &trace.outputs[i - 1].0 };
            let (y, inner) = &trace.outputs[i];
            if i + 1 < self.layers.len() {
                relu_backward(y, &mut dy);
            }
            dy = match l {
                Layer::Conv(c) => c.backward(params, x, &dy, grads),
                Layer::Residual(a, b) => {
                    let h = inner.as_ref().expect("residual trace");
                    let mut dh = b.backward(params, h, &dy, grads);
                    relu_backward(h, &mut dh);
                    let mut dx = a.backward(params, x, &dh, grads);
                    for (d, s) in dx.data.iter_mut().zip(&dy.data) {
                        *d += s;
                    }
                    dx
                }
            };
        }
        dy
    }
}

/// Pooled `channels x size x size` crop plus the bilinear taps that produced
/// it, so gradients can flow back to the feature map.
#[derive(Debug, Clone)]
pub struct AlignedCrop {
    pub channels: usize,
    pub size: usize,
    pub values: Vec<f64>,
    /// Per output cell: (spatial index into the map plane, weight).
    taps: Vec<Vec<(usize, f64)>>,
}

impl AlignedCrop {
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.size + y) * self.size + x]
    }

    /// Scatters `dL/dvalues` into `dmap`.
    pub fn backward(&self, dvalues: &[f64], dmap: &mut Image) {
        let plane = dmap.height * dmap.width;
        let cells = self.size * self.size;
        for c in 0..self.channels {
            for (cell, taps) in self.taps.iter().enumerate() {
                let g = dvalues[c * cells + cell];
                if g == 0.0 {
                    continue;
                }
                for &(idx, w) in taps {
                    dmap.data[c * plane + idx] += g * w;
                }
            }
        }
    }
}

/// RoI-Align with `size x size` output cells and `sampling x sampling`
/// bilinear samples per cell. Sample coordinates are clamped to the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiAlign {
    pub size: usize,
    pub sampling: usize,
}

impl Default for RoiAlign {
    fn default() -> Self {
        RoiAlign { size: 7, sampling: 2 }
    }
}

impl RoiAlign {
    pub fn align(&self, fm: &FeatureMap, b: &BBox) -> Result<AlignedCrop> {
        let min = fm.stride as f64 * DEGENERATE_EPS;
        if !b.is_finite() || b.width() <= min || b.height() <= min {
            return Err(Error::Geometry(format!(
                "degenerate region box ({}, {}, {}, {})",
                b.x0, b.y0, b.x1, b.y1
            )));
        }
        let map = &fm.map;
        let s = fm.stride as f64;
        let (p, n) = (self.size, self.sampling);
        let (bx, by) = (b.x0 / s, b.y0 / s);
        let (bw, bh) = (b.width() / s / p as f64, b.height() / s / p as f64);
        let per_sample = 1.0 / (n * n) as f64;
        let mut taps = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                let mut cell: Vec<(usize, f64)> = Vec::with_capacity(4 * n * n);
                for si in 0..n {
                    let v = by + (i as f64 + (si as f64 + 0.5) / n as f64) * bh;
                    let (y0, y1, ly) = bilinear_axis(v, map.height);
                    for sj in 0..n {
                        let u = bx + (j as f64 + (sj as f64 + 0.5) / n as f64) * bw;
                        let (x0, x1, lx) = bilinear_axis(u, map.width);
                        for (yy, wy) in [(y0, 1.0 - ly), (y1, ly)] {
                            for (xx, wx) in [(x0, 1.0 - lx), (x1, lx)] {
                                let w = wy * wx * per_sample;
                                if w != 0.0 {
                                    push_tap(&mut cell, yy * map.width + xx, w);
                                }
                            }
                        }
                    }
                }
                taps.push(cell);
            }
        }
        let plane = map.height * map.width;
        let mut values = vec![0.0; map.channels * p * p];
        for c in 0..map.channels {
            let src = &map.data[c * plane..(c + 1) * plane];
            for (cell, t) in taps.iter().enumerate() {
                values[c * p * p + cell] = t.iter().map(|&(idx, w)| w * src[idx]).sum();
            }
        }
        Ok(AlignedCrop {
            channels: map.channels,
            size: p,
            values,
            taps,
        })
    }
}

/// Neighbouring indices and interpolation weight for feature coordinate
/// `u`, where cell `i` is centred at `i + 0.5`.
fn bilinear_axis(u: f64, len: usize) -> (usize, usize, f64) {
    let f = (u - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = f.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, f - i0 as f64)
}

fn push_tap(cell: &mut Vec<(usize, f64)>, idx: usize, w: f64) {
    match cell.iter_mut().find(|t| t.0 == idx) {
        Some(t) => t.1 += w,
        None => cell.push((idx, w)),
    }
}

/// RoI-Align followed by flatten and one linear projection to `d`.
#[derive(Debug, Clone, Copy)]
pub struct RegionPathway {
    pub align: RoiAlign,
    pub projection: Linear,
}

impl RegionPathway {
    pub fn new(params: &mut Params, align: RoiAlign, channels: usize, dim: usize) -> Self {
        RegionPathway {
            align,
            projection: Linear::new(params, "region.projection", channels * align.size * align.size, dim),
        }
    }

    pub fn init(&self, params: &mut Params, stream: &mut Stream) {
        self.projection.init(params, stream);
    }

    pub fn dim(&self) -> usize {
        self.projection.outputs
    }

    pub fn forward(&self, params: &Params, fm: &FeatureMap, b: &BBox) -> Result<(RegionFeature, AlignedCrop)> {
        let crop = self.align.align(fm, b)?;
        let f = self.projection.forward(params, &crop.values);
        Ok((RegionFeature(f), crop))
    }

    /// Backward from `dL/df` into the parameters and `dmap`.
    pub fn backward(&self, params: &Params, crop: &AlignedCrop, df: &[f64], grads: &mut Grads, dmap: &mut Image) {
        let dcrop = self.projection.backward(params, &crop.values, df, grads);
        crop.backward(&dcrop, dmap);
    }
}

/// Object-crop baseline: resample `tight` to `size x size`, run the
/// extractor and global-average-pool to a `D`-dimensional feature.
pub fn crop_and_pool(
    extractor: &Extractor,
    params: &Params,
    image: &Image,
    tight: &BBox,
    size: usize,
) -> Result<RegionFeature> {
    if !tight.is_finite() || tight.width() <= DEGENERATE_EPS || tight.height() <= DEGENERATE_EPS {
        return Err(Error::Geometry("degenerate crop box".into()));
    }
    let crop = image.crop_resize(tight, size, size);
    let fm = extractor.forward(params, &crop);
    Ok(RegionFeature(crate::nn::global_average_pool(&fm.map)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};

    fn random_image(c: usize, h: usize, w: usize, s: &mut Stream) -> Image {
        let mut img = Image::new(c, h, w);
        img.data.iter_mut().for_each(|v| *v = s.unit());
        img
    }

    fn tiny(params: &mut Params, seed: u64) -> Extractor {
        let e = Extractor::new(params, ExtractorConfig::tiny(4)).unwrap();
        e.init(params, &mut Stream::new(seed));
        e
    }

    /// Direct tent-kernel bilinear sampling, averaged per cell.
    fn brute_align(map: &Image, stride: f64, b: &BBox, p: usize, n: usize) -> Vec<f64> {
        let tent = |u: f64, len: usize, i: usize| {
            let f = (u - 0.5).clamp(0.0, (len - 1) as f64);
            (1.0 - (f - i as f64).abs()).max(0.0)
        };
        let mut out = vec![0.0; map.channels * p * p];
        let (cw, ch) = (b.width() / stride / p as f64, b.height() / stride / p as f64);
        for c in 0..map.channels {
            for i in 0..p {
                for j in 0..p {
                    let mut acc = 0.0;
                    for si in 0..n {
                        for sj in 0..n {
                            let v = b.y0 / stride + (i as f64 + (si as f64 + 0.5) / n as f64) * ch;
                            let u = b.x0 / stride + (j as f64 + (sj as f64 + 0.5) / n as f64) * cw;
                            for yy in 0..map.height {
                                for xx in 0..map.width {
                                    acc += tent(v, map.height, yy) * tent(u, map.width, xx) * map.get(c, yy, xx);
                                }
                            }
                        }
                    }
                    out[(c * p + i) * p + j] = acc / (n * n) as f64;
                }
            }
        }
        out
    }

    #[test]
    fn map_size_is_ceil_of_stride() {
        let mut p = Params::default();
        let e = tiny(&mut p, 1);
        for (h, w) in [(64, 64), (33, 17), (8, 9), (1, 1)] {
            let fm = e.forward(&p, &Image::new(3, h, w));
            assert_eq!((fm.map.height, fm.map.width), (h.div_ceil(8), w.div_ceil(8)));
            assert_eq!(fm.channels(), 8);
        }
    }

    #[test]
    fn resnet_preset_has_stride_eight() {
        let cfg = ExtractorConfig::resnet18();
        assert_eq!(cfg.stride(), 8);
        assert_eq!(cfg.out_channels(), 512);
        assert!(ExtractorConfig::preset("nope").is_err());
    }

    #[test]
    fn receptive_field_limits_influence() {
        let mut params = Params::default();
        let cfg = ExtractorConfig {
            in_channels: 1,
            layers: vec![
                LayerSpec::Conv { out: 2, kernel: 3, stride: 2 },
                LayerSpec::Conv { out: 2, kernel: 3, stride: 4 },
            ],
        };
        let e = Extractor::new(&mut params, cfg).unwrap();
        e.init(&mut params, &mut Stream::new(3));
        let mut s = Stream::new(4);
        let a = random_image(1, 32, 32, &mut s);
        let mut b = a.clone();
        for y in 16..32 {
            for x in 16..32 {
                b.set(0, y, x, 3.0 * s.unit());
            }
        }
        let (fa, fb) = (e.forward(&params, &a), e.forward(&params, &b));
        // outputs 0..2 read input rows and columns below 12
        for c in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(fa.map.get(c, y, x), fb.map.get(c, y, x));
                }
            }
        }
        assert_ne!(fa.map, fb.map);
    }

    #[test]
    fn extractor_gradient_matches_finite_differences() {
        for (seed, cfg) in [
            (5, ExtractorConfig::tiny(2)),
            (
                6,
                ExtractorConfig {
                    in_channels: 3,
                    layers: vec![
                        LayerSpec::Conv { out: 3, kernel: 3, stride: 2 },
                        LayerSpec::Residual,
                        LayerSpec::Conv { out: 2, kernel: 3, stride: 4 },
                    ],
                },
            ),
        ] {
            let mut params = Params::default();
            let e = Extractor::new(&mut params, cfg).unwrap();
            let mut s = Stream::new(seed);
            e.init(&mut params, &mut s);
            for v in &mut params.values {
                *v += 0.1 * s.normal();
            }
            let img = random_image(3, 12, 10, &mut s);
            let fm = e.forward(&params, &img);
            let r: Vec<f64> = (0..fm.map.data.len()).map(|_| s.normal()).collect();
            let (_, trace) = e.forward_traced(&params, &img);
            let mut grads = params.zeros_like();
            let mut dmap = fm.map.clone();
            dmap.data.copy_from_slice(&r);
            e.backward(&params, &trace, dmap, &mut grads);
            let num = numeric_gradient(
                |v| {
                    let p = Params { specs: params.specs.clone(), values: v.to_vec() };
                    e.forward(&p, &img).map.data.iter().zip(&r).map(|(a, b)| a * b).sum()
                },
                &params.values,
                1e-5,
            );
            assert!(relative_error(&grads.0, &num) < 1e-4);
        }
    }

    #[test]
    fn extractor_input_gradient() {
        let mut params = Params::default();
        let e = tiny(&mut params, 8);
        let mut s = Stream::new(9);
        let img = random_image(3, 9, 9, &mut s);
        let (fm, trace) = e.forward_traced(&params, &img);
        let r: Vec<f64> = (0..fm.map.data.len()).map(|_| s.normal()).collect();
        let mut dmap = fm.map.clone();
        dmap.data.copy_from_slice(&r);
        let dimg = e.backward(&params, &trace, dmap, &mut params.zeros_like());
        let num = numeric_gradient(
            |v| {
                let mut x = img.clone();
                x.data.copy_from_slice(v);
                e.forward(&params, &x).map.data.iter().zip(&r).map(|(a, b)| a * b).sum()
            },
            &img.data,
            1e-5,
        );
        assert!(relative_error(&dimg.data, &num) < 1e-4);
    }

    #[test]
    fn constant_map_pools_to_constant() {
        let fm = FeatureMap { stride: 8, map: Image::filled(2, 5, 6, 3.25) };
        let crop = RoiAlign::default().align(&fm, &BBox::new(3.0, 1.0, 40.0, 30.0)).unwrap();
        assert!(crop.values.iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn align_matches_brute_force() {
        let mut s = Stream::new(11);
        let ra = RoiAlign::default();
        for _ in 0..50 {
            let (h, w) = (1 + s.below(8) as usize, 1 + s.below(8) as usize);
            let map = random_image(2, h, w, &mut s);
            let (iw, ih) = (w as f64 * 8.0, h as f64 * 8.0);
            let x0 = s.uniform(0.0, iw - 1.0);
            let y0 = s.uniform(0.0, ih - 1.0);
            let b = BBox::new(x0, y0, s.uniform(x0 + 0.5, iw), s.uniform(y0 + 0.5, ih));
            let fm = FeatureMap { stride: 8, map: map.clone() };
            let got = ra.align(&fm, &b).unwrap().values;
            let want = brute_align(&map, 8.0, &b, 7, 2);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn linear_map_pools_to_bin_centre() {
        // bilinear interpolation reproduces an affine field away from the border
        let mut map = Image::new(1, 20, 20);
        for y in 0..20 {
            for x in 0..20 {
                map.set(0, y, x, 2.0 * (x as f64 + 0.5) - (y as f64 + 0.5));
            }
        }
        let fm = FeatureMap { stride: 8, map };
        let b = BBox::new(8.0 * 3.0, 8.0 * 4.0, 8.0 * 10.0, 8.0 * 11.0);
        let crop = RoiAlign::default().align(&fm, &b).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let want = 2.0 * (3.0 + j as f64 + 0.5) - (4.0 + i as f64 + 0.5);
                assert!((crop.get(0, i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_by_one_stride_shifts_cells() {
        let mut s = Stream::new(12);
        let map = random_image(1, 16, 16, &mut s);
        let fm = FeatureMap { stride: 8, map };
        let b = BBox::new(8.0 * 4.0, 8.0 * 4.0, 8.0 * 11.0, 8.0 * 11.0);
        let a = RoiAlign::default().align(&fm, &b).unwrap();
        let shifted = RoiAlign::default().align(&fm, &b.translate(8.0, 0.0)).unwrap();
        for i in 0..7 {
            for j in 0..6 {
                assert!((shifted.get(0, i, j) - a.get(0, i, j + 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let fm = FeatureMap { stride: 8, map: Image::new(1, 4, 4) };
        assert!(RoiAlign::default().align(&fm, &BBox::new(3.0, 3.0, 3.0, 9.0)).is_err());
    }

    #[test]
    fn region_pathway_gradient() {
        let mut params = Params::default();
        let rp = RegionPathway::new(&mut params, RoiAlign { size: 3, sampling: 2 }, 2, 4);
        let mut s = Stream::new(13);
        rp.init(&mut params, &mut s);
        let map = random_image(2, 4, 5, &mut s);
        let b = BBox::new(3.0, 2.0, 31.0, 27.0);
        let r: Vec<f64> = (0..4).map(|_| s.normal()).collect();
        let (_, crop) = rp.forward(&params, &FeatureMap { stride: 8, map: map.clone() }, &b).unwrap();
        let mut dmap = Image::new(2, 4, 5);
        rp.backward(&params, &crop, &r, &mut params.zeros_like(), &mut dmap);
        let num = numeric_gradient(
            |v| {
                let mut m = map.clone();
                m.data.copy_from_slice(v);
                let (f, _) = rp.forward(&params, &FeatureMap { stride: 8, map: m }, &b).unwrap();
                f.0.iter().zip(&r).map(|(a, b)| a * b).sum()
            },
            &map.data,
            1e-5,
        );
        assert!(relative_error(&dmap.data, &num) < 1e-6);
    }

    #[test]
    fn identical_crops_give_identical_features() {
        let mut params = Params::default();
        let e = tiny(&mut params, 14);
        let mut s = Stream::new(15);
        let patch = random_image(3, 10, 12, &mut s);
        let mut img = Image::filled(3, 40, 60, 0.2);
        for (oy, ox) in [(2usize, 3usize), (25, 40)] {
            for c in 0..3 {
                for y in 0..10 {
                    for x in 0..12 {
                        img.set(c, oy + y, ox + x, patch.get(c, y, x));
                    }
                }
            }
        }
        let a = crop_and_pool(&e, &params, &img, &BBox::from_xywh(3.0, 2.0, 12.0, 10.0), 16).unwrap();
        let b = crop_and_pool(&e, &params, &img, &BBox::from_xywh(40.0, 25.0, 12.0, 10.0), 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 8);
        let uniform = crop_and_pool(&e, &params, &Image::filled(3, 40, 60, 0.2), &BBox::from_xywh(5.0, 5.0, 7.0, 9.0), 16)
            .unwrap();
        let direct = crate::nn::global_average_pool(&e.forward(&params, &Image::filled(3, 16, 16, 0.2)).map);
        assert_eq!(uniform.0, direct);
    }
}
