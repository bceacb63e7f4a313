//! Planar f64 images (channels x height x width) and the pixel-level edits the
//! pipeline needs: resizing, cropping, rotation.

use std::path::Path;

use crate::datamodel::BBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    /// Loads an 8-bit image as RGB scaled to [0, 1].
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(3, h, w);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, f64::from(p.0[c]) / 255.0);
            }
        }
        Ok(out)
    }

    /// Writes the first three channels as an 8-bit RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut px = [0u8; 3];
                for (c, v) in px.iter_mut().enumerate() {
                    let src = self.get(c.min(self.channels - 1), y, x);
                    *v = (src.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                buf.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        buf.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at +0.5),
    /// clamped to the border.
    pub fn sample(&self, c: usize, y: f64, x: f64) -> f64 {
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (ly, lx) = (fy - y0 as f64, fx - x0 as f64);
        let top = self.get(c, y0, x0) * (1.0 - lx) + self.get(c, y0, x1) * lx;
        let bottom = self.get(c, y1, x0) * (1.0 - lx) + self.get(c, y1, x1) * lx;
        top * (1.0 - ly) + bottom * ly
    }

    /// Bilinear resample of the region `b` onto an `out_h x out_w` grid.
    pub fn crop_resize(&self, b: &BBox, out_h: usize, out_w: usize) -> Image {
        let mut out = Image::new(self.channels, out_h, out_w);
        let sy = b.height() / out_h as f64;
        let sx = b.width() / out_w as f64;
        for c in 0..self.channels {
            for y in 0..out_h {
                let py = b.y0 + (y as f64 + 0.5) * sy;
                for x in 0..out_w {
                    let px = b.x0 + (x as f64 + 0.5) * sx;
                    out.set(c, y, x, self.sample(c, py, px));
                }
            }
        }
        out
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Image {
        if (out_h, out_w) == (self.height, self.width) {
            return self.clone();
        }
        let full = BBox::new(0.0, 0.0, self.width as f64, self.height as f64);
        self.crop_resize(&full, out_h, out_w)
    }

    /// Integer sub-image `[y0, y0 + h) x [x0, x0 + w)`.
    pub fn window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        let mut out = Image::new(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        out
    }

    /// Largest centered square.
    pub fn center_square(&self) -> Image {
        let s = self.height.min(self.width);
        self.window((self.height - s) / 2, (self.width - s) / 2, s, s)
    }

    /// Counter-clockwise rotation by `k * 90` degrees.
    pub fn rotate90(&self, k: u8) -> Image {
        match k % 4 {
            0 => self.clone(),
            1 => {
                let mut out = Image::new(self.channels, self.width, self.height);
                for c in 0..self.channels {
                    for y in 0..self.height {
                        for x in 0..self.width {
                            out.set(c, self.width - 1 - x, y, self.get(c, y, x));
                        }
                    }
                }
                out
            }
            r => self.rotate90(1).rotate90(r - 1),
        }
    }
}

/// Scale factor and new size that make the short edge `target` pixels.
pub fn short_edge_scale(height: usize, width: usize, target: usize) -> Result<(f64, usize, usize)> {
    if height == 0 || width == 0 {
        return Err(Error::Image("zero-sized image".into()));
    }
    let scale = target as f64 / height.min(width) as f64;
    let new_h = ((height as f64 * scale).round() as usize).max(1);
    let new_w = ((width as f64 * scale).round() as usize).max(1);
    Ok((scale, new_h, new_w))
}

/// Aspect-preserving resize so that `min(H, W) == target`; returns the scale
/// factor to apply to boxes and masks.
pub fn resize_short_edge(img: &Image, target: usize) -> Result<(Image, f64)> {
    let (scale, h, w) = short_edge_scale(img.height, img.width, target)?;
    Ok((img.resize(h, w), scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        let mut img = Image::new(1, h, w);
        for y in 0..h {
            for x in 0..w {
                img.set(0, y, x, (y * w + x) as f64);
            }
        }
        img
    }

    #[test]
    fn short_edge_arithmetic() {
        assert_eq!(short_edge_scale(600, 900, 800).unwrap(), (800.0 / 600.0, 800, 1200));
        assert_eq!(short_edge_scale(800, 800, 800).unwrap(), (1.0, 800, 800));
        assert!(short_edge_scale(0, 10, 800).is_err());
    }

    #[test]
    fn unchanged_when_already_at_target() {
        let img = ramp(8, 12);
        let (out, s) = resize_short_edge(&img, 8).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(out, img);
    }

    #[test]
    fn box_scales_with_image() {
        let b = BBox::from_xywh(30.0, 60.0, 90.0, 120.0);
        let (s, _, _) = short_edge_scale(600, 900, 800).unwrap();
        let scaled = b.scale(s);
        assert!((scaled.width() - 120.0).abs() < 1e-9 && (scaled.height() - 160.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_group_property() {
        let img = ramp(3, 5);
        assert_eq!(img.rotate90(0), img);
        assert_eq!(img.rotate90(1).rotate90(1), img.rotate90(2));
        assert_eq!(img.rotate90(4), img);
        let r = img.rotate90(1);
        assert_eq!((r.height, r.width), (5, 3));
        // top-right corner moves to top-left
        assert_eq!(r.get(0, 0, 0), img.get(0, 0, 4));
    }

    #[test]
    fn crop_resize_of_constant_is_constant() {
        let img = Image::filled(2, 10, 10, 0.25);
        let out = img.crop_resize(&BBox::new(1.3, 2.2, 7.9, 9.1), 5, 4);
        assert!(out.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(3, 4, 6);
        img.set(1, 2, 3, 1.0);
        let p = dir.path().join("x.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load(&p).unwrap(), img);
    }
}
