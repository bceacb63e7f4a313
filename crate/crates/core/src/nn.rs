//! Flat parameter storage and the differentiable building blocks shared by
//! the backbone and the heads. Everything is f64 with hand-written backward
//! passes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::raster::Image;
use crate::seeds::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
    /// Multiplier on the `1/sqrt(fan_in)` init bound.
    pub gain: f64,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Every trainable array of a model in one contiguous buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<f64>,
}

impl Params {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        let len: usize = shape.iter().product();
        let offset = self.values.len();
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            fan_in,
            gain: 1.0,
        });
        self.values.resize(offset + len, 0.0);
        ParamId(self.specs.len() - 1)
    }

    pub fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let s = &self.specs[id.0];
        s.offset..s.offset + s.len()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[self.range(id)]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.values[r]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    /// Uniform fan-in initialization `U(-g/sqrt(fan_in), g/sqrt(fan_in))`
    /// for weights; zero for biases (`fan_in == 0`).
    pub fn init(&mut self, id: ParamId, stream: &mut Stream) {
        let ParamSpec { fan_in, gain, .. } = self.specs[id.0];
        let bound = if fan_in == 0 { 0.0 } else { gain / (fan_in as f64).sqrt() };
        for v in self.get_mut(id) {
            *v = if bound == 0.0 { 0.0 } else { stream.uniform(-bound, bound) };
        }
    }

    pub fn zeros_like(&self) -> Grads {
        Grads(vec![0.0; self.values.len()])
    }

    /// SHA-256 over the raw parameter bits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Gradient buffer laid out like [`Params::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<f64>);

impl Grads {
    pub fn slice_mut(&mut self, params: &Params, id: ParamId) -> &mut [f64] {
        let r = params.range(id);
        &mut self.0[r]
    }

    pub fn slice(&self, params: &Params, id: ParamId) -> &[f64] {
        &self.0[params.range(id)]
    }
}

/// Dense layer `y = W x + b`, `W` stored row-major `out x in`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(params: &mut Params, name: &str, inputs: usize, outputs: usize) -> Self {
        Linear {
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

    pub fn forward(&self, params: &Params, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let w = params.get(self.weight);
        let b = params.get(self.bias);
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, params: &Params, x: &[f64], dy: &[f64], grads: &mut Grads) -> Vec<f64> {
        self.accumulate(params, x, dy, 1.0, grads);
        self.input_grad(params, dy)
    }

    pub fn input_grad(&self, params: &Params, dy: &[f64]) -> Vec<f64> {
        let w = params.get(self.weight);
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            for (d, &wv) in dx.iter_mut().zip(row) {
                *d += g * wv;
            }
        }
        dx
    }

    /// Adds `scale * dL/dW` and `scale * dL/db`.
    pub fn accumulate(&self, params: &Params, x: &[f64], dy: &[f64], scale: f64, grads: &mut Grads) {
        {
            let gw = grads.slice_mut(params, self.weight);
            for (o, &g) in dy.iter().enumerate() {
                let g = g * scale;
                if g == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                for (r, &xv) in row.iter_mut().zip(x) {
                    *r += g * xv;
                }
            }
        }
        let gb = grads.slice_mut(params, self.bias);
        for (b, &g) in gb.iter_mut().zip(dy) {
            *b += g * scale;
        }
    }
}

/// 2-D convolution with square kernel, zero padding `kernel / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new(
        params: &mut Params,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = params.add(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
        );
        // He-uniform, suited to the ReLUs that follow.
        params.specs[weight.0].gain = 6f64.sqrt();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias: params.add(format!("{name}.bias"), &[out_channels], 0),
        }
    }

    pub fn init(&self, params: &mut Params, stream: &mut Stream) {
        params.init(self.weight, stream);
        params.init(self.bias, stream);
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = 2 * self.pad();
        (
            (h + p - self.kernel) / self.stride + 1,
            (w + p - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&self, params: &Params, x: &Image) -> Image {
        debug_assert_eq!(x.channels, self.in_channels);
        let (oh, ow) = self.output_size(x.height, x.width);
        let (k, s, pad) = (self.kernel, self.stride, self.pad() as isize);
        let w = params.get(self.weight);
        let b = params.get(self.bias);
        let mut out = Image::new(self.out_channels, oh, ow);
        for o in 0..self.out_channels {
            let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = b[o]);
            for i in 0..self.in_channels {
                let src = &x.data[i * x.height * x.width..(i + 1) * x.height * x.width];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((o * self.in_channels + i) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let iy = (oy * s) as isize + ky as isize - pad;
                            if iy < 0 || iy >= x.height as isize {
                                continue;
                            }
                            let row = &src[iy as usize * x.width..(iy as usize + 1) * x.width];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s) as isize + kx as isize - pad;
                                if ix >= 0 && ix < x.width as isize {
                                    *d += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, params: &Params, x: &Image, dy: &Image, grads: &mut Grads) -> Image {
        let (oh, ow) = (dy.height, dy.width);
        let (k, s, pad) = (self.kernel, self.stride, self.pad() as isize);
        let w = params.get(self.weight);
        let mut dx = Image::new(x.channels, x.height, x.width);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; self.out_channels];
        for o in 0..self.out_channels {
            let dplane = &dy.data[o * oh * ow..(o + 1) * oh * ow];
            gb[o] += dplane.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let base = i * x.height * x.width;
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * self.in_channels + i) * k + ky) * k + kx;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * s) as isize + ky as isize - pad;
                            if iy < 0 || iy >= x.height as isize {
                                continue;
                            }
                            let roff = base + iy as usize * x.width;
                            for ox in 0..ow {
                                let ix = (ox * s) as isize + kx as isize - pad;
                                if ix >= 0 && ix < x.width as isize {
                                    let g = dplane[oy * ow + ox];
                                    acc += g * x.data[roff + ix as usize];
                                    dx.data[roff + ix as usize] += g * wv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        for (a, g) in grads.slice_mut(params, self.weight).iter_mut().zip(gw) {
            *a += g;
        }
        for (a, g) in grads.slice_mut(params, self.bias).iter_mut().zip(gb) {
            *a += g;
        }
        dx
    }
}

pub fn relu_inplace(x: &mut Image) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gradient through ReLU given the activation's output.
pub fn relu_backward(out: &Image, dy: &mut Image) {
    for (g, &y) in dy.data.iter_mut().zip(&out.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Channel means over all spatial positions.
pub fn global_average_pool(x: &Image) -> Vec<f64> {
    let n = (x.height * x.width) as f64;
    x.data
        .chunks(x.height * x.width)
        .map(|plane| plane.iter().sum::<f64>() / n)
        .collect()
}

pub fn global_average_pool_backward(x: &Image, dy: &[f64]) -> Image {
    let n = (x.height * x.width) as f64;
    let mut dx = Image::new(x.channels, x.height, x.width);
    for (c, plane) in dx.data.chunks_mut(x.height * x.width).enumerate() {
        plane.iter_mut().for_each(|v| *v = dy[c] / n);
    }
    dx
}

/// Numerically stable log-sum-exp.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(logits);
    let loss = lse - logits[target];
    let mut d: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    d[target] -= 1.0;
    (loss, d)
}

/// Binary cross-entropy on a logit, stable for large |z|, with its gradient.
pub fn bce_with_logit(z: f64, target: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
    let sigmoid = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    (loss, sigmoid - target)
}

/// Smooth-L1 (Huber with unit threshold) and its derivative.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / (|a| + |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na + nb == 0.0 {
        0.0
    } else {
        diff / (na + nb)
    }
}
