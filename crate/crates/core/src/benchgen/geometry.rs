//! Context enlargement and random jitter of tight object boxes.
//!
//! Boxes use closed real bounds `[0, W] x [0, H]`; containment is `<=`.

use crate::datamodel::BBox;
use crate::seeds::Stream;

/// Per-axis enlargement factors for a tight box of size `(h, w)` in an
/// `H x W` image, given the uniform draw `u` in [0, 1].
///
/// Unconstrained, `gamma_h = gamma^u` and `gamma_w = gamma / gamma_h`. When an
/// axis would leave the image its factor is capped at the image bound and the
/// other axis takes up the remainder, again only up to its own bound. The
/// product is therefore `min(gamma, (H/h) * (W/w))` and both factors are >= 1.
pub fn ratio_from_unit(
    image_h: f64,
    image_w: f64,
    h: f64,
    w: f64,
    gamma: f64,
    u: f64,
) -> (f64, f64) {
    assert!(gamma >= 1.0, "context ratio must be >= 1");
    let bound_h = (image_h / h).max(1.0);
    let bound_w = (image_w / w).max(1.0);
    if bound_h * bound_w <= gamma {
        return (bound_h, bound_w);
    }
    let lo = (gamma / bound_w).max(1.0);
    let hi = gamma.min(bound_h);
    let gamma_h = gamma.powf(u).clamp(lo, hi);
    (gamma_h, gamma / gamma_h)
}

/// Draws the enlargement factors with one uniform sample from `rng`.
pub fn ratio_assign(
    image_h: f64,
    image_w: f64,
    h: f64,
    w: f64,
    gamma: f64,
    rng: &mut Stream,
) -> (f64, f64) {
    let u = rng.unit();
    ratio_from_unit(image_h, image_w, h, w, gamma, u)
}

/// Offsets `(y_min, y_max, x_min, x_max)` of the enlarged box center relative
/// to the tight box center `(y, x)` such that the enlarged box stays inside
/// the image and still covers the tight box.
#[allow(clippy::too_many_arguments)]
pub fn find_jitter_range(
    image_h: f64,
    image_w: f64,
    h: f64,
    w: f64,
    enlarged_h: f64,
    enlarged_w: f64,
    y: f64,
    x: f64,
) -> (f64, f64, f64, f64) {
    let (y_min, y_max) = axis_range(image_h, h, enlarged_h, y);
    let (x_min, x_max) = axis_range(image_w, w, enlarged_w, x);
    (y_min, y_max, x_min, x_max)
}

fn axis_range(extent: f64, size: f64, enlarged: f64, center: f64) -> (f64, f64) {
    let half = enlarged / 2.0;
    // inside the image: center + m in [half, extent - half]
    // covering the tight box: |m| <= (enlarged - size) / 2
    let slack = (enlarged - size) / 2.0;
    let lo = (half - center).max(-slack);
    let hi = (extent - half - center).min(slack);
    let tol = 1e-9 * extent.max(1.0);
    assert!(
        lo <= hi + tol,
        "infeasible jitter range: enlarged {enlarged} in extent {extent}"
    );
    if lo > hi {
        (lo, lo)
    } else {
        (lo, hi)
    }
}

/// Enlarges `tight` by the context ratio and shifts its center uniformly
/// within the feasible jitter range.
pub fn enlarge_and_jitter(
    tight: &BBox,
    image_w: f64,
    image_h: f64,
    gamma: f64,
    rng: &mut Stream,
) -> BBox {
    let (h, w) = (tight.height(), tight.width());
    let (y, x) = tight.center();
    let (gamma_h, gamma_w) = ratio_assign(image_h, image_w, h, w, gamma, rng);
    let enlarged_h = (h * gamma_h).min(image_h);
    let enlarged_w = (w * gamma_w).min(image_w);
    let (y_min, y_max, x_min, x_max) =
        find_jitter_range(image_h, image_w, h, w, enlarged_h, enlarged_w, y, x);
    let m_x = rng.uniform(x_min, x_max);
    let m_y = rng.uniform(y_min, y_max);
    let b = BBox::from_center(y + m_y, x + m_x, enlarged_h, enlarged_w);

    // Snap away rounding so containment holds exactly; an axis that was not
    // enlarged keeps the tight edges.
    let (x0, x1) = if gamma_w == 1.0 {
        (tight.x0, tight.x1)
    } else {
        (b.x0.max(0.0).min(tight.x0), b.x1.min(image_w).max(tight.x1))
    };
    let (y0, y1) = if gamma_h == 1.0 {
        (tight.y0, tight.y1)
    } else {
        (b.y0.max(0.0).min(tight.y0), b.y1.min(image_h).max(tight.y1))
    };
    BBox::new(x0, y0, x1, y1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Largest achievable product of per-axis factors under the image bounds,
    /// capped at gamma.
    fn max_feasible_product(image_h: f64, image_w: f64, h: f64, w: f64, gamma: f64) -> f64 {
        gamma.min((image_h / h) * (image_w / w))
    }

    #[test]
    fn unconstrained_product_is_gamma() {
        for u in [0.0, 0.1, 0.5, 0.93, 1.0] {
            let (gh, gw) = ratio_from_unit(1000.0, 1000.0, 50.0, 40.0, 2.7, u);
            assert!((gh * gw - 2.7).abs() < 1e-9);
            assert!(gh >= 1.0 && gw >= 1.0);
        }
    }

    #[test]
    fn gamma_one_is_identity() {
        let (gh, gw) = ratio_from_unit(100.0, 100.0, 20.0, 30.0, 1.0, 0.37);
        assert_eq!((gh, gw), (1.0, 1.0));
        let tight = BBox::new(3.0, 4.5, 23.25, 30.0);
        let mut rng = Stream::new(5);
        assert_eq!(enlarge_and_jitter(&tight, 100.0, 100.0, 1.0, &mut rng), tight);
    }

    #[test]
    fn full_height_box_puts_everything_on_width() {
        for (image_w, w) in [(100.0, 20.0), (100.0, 60.0)] {
            for u in [0.0, 0.5, 1.0] {
                let (gh, gw) = ratio_from_unit(80.0, image_w, 80.0, w, 2.7, u);
                assert_eq!(gh, 1.0);
                let expected = max_feasible_product(80.0, image_w, 80.0, w, 2.7);
                assert!((gw - expected).abs() < 1e-12, "{gw} vs {expected}");
                assert!((gw - 2.7_f64.min(image_w / w)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clamped_product_is_max_feasible() {
        let mut rng = Stream::new(11);
        for _ in 0..1000 {
            let image_h = rng.uniform(10.0, 200.0);
            let image_w = rng.uniform(10.0, 200.0);
            let h = rng.uniform(1.0, image_h);
            let w = rng.uniform(1.0, image_w);
            let gamma = rng.uniform(1.0, 4.0);
            let (gh, gw) = ratio_from_unit(image_h, image_w, h, w, gamma, rng.unit());
            assert!(gh >= 1.0 && gw >= 1.0);
            assert!(gh * h <= image_h * (1.0 + 1e-12) && gw * w <= image_w * (1.0 + 1e-12));
            let best = max_feasible_product(image_h, image_w, h, w, gamma);
            assert!((gh * gw - best).abs() <= 1e-9 * best);
        }
    }

    #[test]
    fn jitter_range_matches_interval_intersection() {
        let r = find_jitter_range(100.0, 100.0, 20.0, 20.0, 40.0, 40.0, 50.0, 50.0);
        assert_eq!(r, (-10.0, 10.0, -10.0, 10.0));
    }

    #[test]
    fn jitter_range_full_image_is_a_point() {
        let (y0, y1, x0, x1) = find_jitter_range(100.0, 80.0, 20.0, 10.0, 100.0, 80.0, 30.0, 25.0);
        assert_eq!((y0, y1), (20.0, 20.0));
        assert_eq!((x0, x1), (15.0, 15.0));
    }

    #[test]
    fn jitter_range_without_enlargement_is_zero() {
        let r = find_jitter_range(100.0, 100.0, 20.0, 30.0, 20.0, 30.0, 40.0, 60.0);
        assert_eq!(r, (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn jitter_endpoints_are_feasible() {
        // brute-force: the h~ x w~ box at each corner of the range is valid
        let (img_h, img_w, h, w, eh, ew, y, x) = (60.0, 90.0, 12.0, 30.0, 30.0, 50.0, 10.0, 70.0);
        let (y0, y1, x0, x1) = find_jitter_range(img_h, img_w, h, w, eh, ew, y, x);
        let tight = BBox::from_center(y, x, h, w);
        for my in [y0, y1] {
            for mx in [x0, x1] {
                let b = BBox::from_center(y + my, x + mx, eh, ew);
                assert!(b.contains(&tight) && b.inside_image(img_w, img_h));
            }
        }
        // one step past either end breaks a constraint
        let past = BBox::from_center(y + y0 - 0.01, x, eh, ew);
        assert!(!(past.contains(&tight) && past.inside_image(img_w, img_h)));
    }

    #[test]
    fn determinism_for_fixed_seed() {
        let tight = BBox::new(10.0, 12.0, 30.0, 40.0);
        let a = enlarge_and_jitter(&tight, 128.0, 96.0, 2.7, &mut Stream::new(99));
        let b = enlarge_and_jitter(&tight, 128.0, 96.0, 2.7, &mut Stream::new(99));
        assert_eq!(a, b);
    }
}
