//! Brute-force SSD block matcher, kept deliberately simple so it can serve
//! as an independent reference for the patch matcher.

use crate::error::{Error, Result};
use crate::matcher::{DisparityField, RectifiedStereoPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    /// Odd window side.
    pub window_size: usize,
    pub max_disparity: usize,
    /// Fit a parabola through the SSD valley for sub-pixel output.
    pub subpixel_refine: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            window_size: 9,
            max_disparity: 16,
            subpixel_refine: false,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "oracle window_size must be odd, got {}",
                self.window_size
            )));
        }
        if self.max_disparity < 1 {
            return Err(Error::InvalidConfig(
                "oracle max_disparity must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel SSD argmin over integer disparities `0..=max_disparity`.
///
/// A pixel is valid only when its window and every candidate window lie
/// inside the images, so the search range is never truncated at the left
/// border. Ties go to the smaller disparity.
pub fn exhaustive_disparity(
    pair: &RectifiedStereoPair,
    cfg: &OracleConfig,
) -> Result<DisparityField> {
    cfg.validate()?;
    let (w, h) = (pair.width(), pair.height());
    let r = cfg.window_size / 2;
    let left = &pair.left;
    let right = &pair.right;
    let mut disparity = vec![0.0; w * h];
    let mut confidence = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    let mut costs = vec![0.0f64; cfg.max_disparity + 1];

    for y in r..h.saturating_sub(r) {
        for x in (r + cfg.max_disparity)..w.saturating_sub(r) {
            for (d, cost) in costs.iter_mut().enumerate() {
                let mut ssd = 0.0f64;
                for yy in y - r..=y + r {
                    for xx in x - r..=x + r {
                        let e = (left.get(xx, yy) - right.get(xx - d, yy)) as f64;
                        ssd += e * e;
                    }
                }
                *cost = ssd;
            }
            let mut d = 0;
            for (k, &c) in costs.iter().enumerate() {
                if c < costs[d] {
                    d = k;
                }
            }
            let c0 = costs[d];
            let mut value = d as f64;
            if cfg.subpixel_refine && d > 0 && d < cfg.max_disparity {
                let (cm, cp) = (costs[d - 1], costs[d + 1]);
                let denom = cm - 2.0 * c0 + cp;
                if denom > 0.0 {
                    value += 0.5 * (cm - cp) / denom;
                }
            }
            let i = y * w + x;
            disparity[i] = value;
            confidence[i] = 1.0;
            valid[i] = true;
        }
    }
    DisparityField::from_parts(w, h, disparity, confidence, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;

    fn texture(x: f64, y: f64) -> f32 {
        (0.5 + 0.25 * (x * 0.9 + y * 0.3).sin() + 0.2 * (x * 0.37 - y * 0.71).cos()) as f32
    }

    fn pair(d: usize) -> RectifiedStereoPair {
        let left = GrayImage::from_fn(48, 32, |x, y| texture(x as f64, y as f64));
        let right = GrayImage::from_fn(48, 32, |x, y| texture((x + d) as f64, y as f64));
        RectifiedStereoPair::new(left, right, None).unwrap()
    }

    #[test]
    fn identical_images_give_zero() {
        let p = pair(0);
        let f = exhaustive_disparity(&p, &OracleConfig::default()).unwrap();
        assert!(f.valid_count() > 0);
        assert!(f
            .valid()
            .iter()
            .zip(f.disparity())
            .all(|(&v, &d)| !v || d == 0.0));
    }

    #[test]
    fn exact_shift_recovered_at_interior() {
        let p = pair(5);
        let mut cfg = OracleConfig {
            max_disparity: 10,
            ..OracleConfig::default()
        };
        let f = exhaustive_disparity(&p, &cfg).unwrap();
        for y in 4..28 {
            for x in 4 + 10..44 {
                assert_eq!(f.get(x, y), Some(5.0), "({x},{y})");
            }
        }
        // the parabola vertex stays inside the bracketing integers
        cfg.subpixel_refine = true;
        let f = exhaustive_disparity(&p, &cfg).unwrap();
        for y in 4..28 {
            for x in 4 + 10..44 {
                assert!((f.get(x, y).unwrap() - 5.0).abs() < 0.5, "({x},{y})");
            }
        }
        // border windows and truncated search ranges are invalid
        assert_eq!(f.get(0, 10), None);
        assert_eq!(f.get(20, 0), None);
        assert_eq!(f.get(13, 10), None);
        assert!(f.get(14, 10).is_some());
    }

    #[test]
    fn rejects_even_window() {
        let cfg = OracleConfig {
            window_size: 8,
            ..OracleConfig::default()
        };
        assert!(exhaustive_disparity(&pair(0), &cfg).is_err());
    }

    #[test]
    fn is_reproducible() {
        let p = pair(3);
        let cfg = OracleConfig::default();
        assert_eq!(
            exhaustive_disparity(&p, &cfg).unwrap(),
            exhaustive_disparity(&p, &cfg).unwrap()
        );
    }
}
