//! Binary masks as run-length encoding over row-major pixel order.
//!
//! `counts` alternates background and foreground runs and always starts with
//! a background run (possibly zero). The runs sum to `width * height`.

use serde::{Deserialize, Serialize};

use super::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn from_bitmap(width: u32, height: u32, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        Rle {
            width,
            height,
            counts,
        }
    }

    /// Filled integer rectangle `[x0, x1) x [y0, y1)`, clipped to the image.
    pub fn from_rect(width: u32, height: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        let (w, h) = (width as i64, height as i64);
        let (x0, x1) = (x0.clamp(0, w), x1.clamp(0, w));
        let (y0, y1) = (y0.clamp(0, h), y1.clamp(0, h));
        let mut bits = vec![false; (w * h) as usize];
        for y in y0..y1 {
            for x in x0..x1 {
                bits[(y * w + x) as usize] = true;
            }
        }
        Rle::from_bitmap(width, height, &bits)
    }

    /// Rasterizes a polygon: a pixel is inside when its center is inside
    /// under the even-odd rule.
    pub fn from_polygon(width: u32, height: u32, points: &[(f64, f64)]) -> Self {
        let (w, h) = (width as usize, height as usize);
        let mut bits = vec![false; w * h];
        if points.len() >= 3 {
            let mut xs = Vec::new();
            for y in 0..h {
                let py = y as f64 + 0.5;
                xs.clear();
                for i in 0..points.len() {
                    let (ax, ay) = points[i];
                    let (bx, by) = points[(i + 1) % points.len()];
                    if (ay <= py && by > py) || (by <= py && ay > py) {
                        xs.push(ax + (py - ay) / (by - ay) * (bx - ax));
                    }
                }
                xs.sort_by(f64::total_cmp);
                for pair in xs.chunks(2) {
                    if let [a, b] = pair {
                        // pixel centers x + 0.5 in [a, b)
                        let start = (a - 0.5).ceil().max(0.0) as usize;
                        let end = ((b - 0.5).ceil().max(0.0) as usize).min(w);
                        for x in start..end {
                            bits[y * w + x] = true;
                        }
                    }
                }
            }
        }
        Rle::from_bitmap(width, height, &bits)
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        let mut value = false;
        for &c in &self.counts {
            bits.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        bits
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    /// Tight pixel box of the foreground, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BBox> {
        let w = u64::from(self.width);
        let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = u64::from(c);
            if i % 2 == 1 && c > 0 {
                let (first, last) = (pos, pos + c - 1);
                let (fy, ly) = (first / w, last / w);
                y0 = y0.min(fy);
                y1 = y1.max(ly + 1);
                if fy == ly {
                    x0 = x0.min(first % w);
                    x1 = x1.max(last % w + 1);
                } else {
                    x0 = 0;
                    x1 = w;
                }
            }
            pos += c;
        }
        (y0 != u64::MAX).then(|| BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64))
    }

    pub fn is_well_formed(&self) -> bool {
        self.total() == u64::from(self.width) * u64::from(self.height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rect_box_and_area() {
        let m = Rle::from_rect(10, 8, 2, 3, 5, 7);
        assert_eq!(m.area(), 12);
        assert_eq!(m.bounding_box(), Some(BBox::new(2.0, 3.0, 5.0, 7.0)));
        assert!(m.is_well_formed());
    }

    #[test]
    fn empty_mask_has_no_box() {
        let m = Rle::from_bitmap(4, 4, &[false; 16]);
        assert_eq!(m.counts, vec![16]);
        assert_eq!(m.bounding_box(), None);
    }

    #[test]
    fn polygon_square_matches_rect() {
        let p = Rle::from_polygon(10, 10, &[(2.0, 2.0), (6.0, 2.0), (6.0, 5.0), (2.0, 5.0)]);
        assert_eq!(p, Rle::from_rect(10, 10, 2, 2, 6, 5));
    }

    proptest! {
        #[test]
        fn bitmap_round_trip(bits in proptest::collection::vec(any::<bool>(), 35)) {
            let rle = Rle::from_bitmap(7, 5, &bits);
            prop_assert_eq!(rle.to_bitmap(), bits.clone());
            prop_assert!(rle.is_well_formed());
            let brute = bits.iter().enumerate().filter(|(_, b)| **b).fold(None, |acc: Option<(usize, usize, usize, usize)>, (i, _)| {
                let (x, y) = (i % 7, i / 7);
                Some(match acc {
                    None => (x, y, x + 1, y + 1),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                })
            });
            let got = rle.bounding_box().map(|b| (b.x0 as usize, b.y0 as usize, b.x1 as usize, b.y1 as usize));
            prop_assert_eq!(got, brute);
        }
    }
}
