use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixel coordinates, stored as closed corner bounds.
///
/// Corner form keeps containment checks exact: `a.contains(b)` compares the
/// stored numbers directly instead of re-deriving edges from `x + w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn from_center(cy: f64, cx: f64, h: f64, w: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.y0 + self.y1) / 2.0, (self.x0 + self.x1) / 2.0)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn inside_image(&self, width: f64, height: f64) -> bool {
        0.0 <= self.x0 && 0.0 <= self.y0 && self.x1 <= width && self.y1 <= height
    }

    pub fn is_finite(&self) -> bool {
        self.x0.is_finite() && self.y0.is_finite() && self.x1.is_finite() && self.y1.is_finite()
    }

    pub fn scale(&self, factor: f64) -> BBox {
        BBox::new(
            self.x0 * factor,
            self.y0 * factor,
            self.x1 * factor,
            self.y1 * factor,
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containment_is_inclusive() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert!(a.contains(&a));
        assert!(a.contains(&BBox::new(2.0, 3.0, 10.0, 4.0)));
        assert!(!a.contains(&BBox::new(-0.1, 3.0, 5.0, 4.0)));
        assert!(a.inside_image(10.0, 10.0));
        assert!(!a.inside_image(9.5, 10.0));
    }

    #[test]
    fn center_form_round_trip() {
        let b = BBox::from_center(5.0, 8.0, 4.0, 6.0);
        assert_eq!(b, BBox::new(5.0, 3.0, 11.0, 7.0));
        assert_eq!(b.center(), (5.0, 8.0));
    }
}
