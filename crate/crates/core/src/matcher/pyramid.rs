//! 2x2 box-filter image pyramids.

use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::{MatcherConfig, RectifiedStereoPair};

/// Stereo pyramid; `levels[0]` is the input resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<RectifiedStereoPair>,
}

impl Pyramid {
    pub fn levels(&self) -> &[RectifiedStereoPair] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> &RectifiedStereoPair {
        &self.levels[index]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Levels ordered coarsest first, with their level index.
    pub fn coarse_to_fine(&self) -> impl Iterator<Item = (usize, &RectifiedStereoPair)> {
        self.levels.iter().enumerate().rev()
    }
}

/// Minimum `(width, height)` accepted for a given patch size and level count.
pub fn minimum_size(cfg: &MatcherConfig) -> usize {
    cfg.patch_size << (cfg.pyramid_levels - 1)
}

/// Builds `cfg.pyramid_levels` levels by repeated 2x2 averaging.
///
/// Level `L` has dimensions `⌊dim / 2^L⌋`. Color is kept only on level 0.
pub fn build_pyramid(pair: &RectifiedStereoPair, cfg: &MatcherConfig) -> Result<Pyramid> {
    cfg.validate()?;
    let min = minimum_size(cfg);
    let (w, h) = (pair.width(), pair.height());
    if w < min || h < min {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: min,
            min_height: min,
            levels: cfg.pyramid_levels,
            patch_size: cfg.patch_size,
        });
    }
    let mut levels = Vec::with_capacity(cfg.pyramid_levels);
    levels.push(pair.clone());
    for _ in 1..cfg.pyramid_levels {
        let prev = levels.last().expect("at least one level");
        let next = RectifiedStereoPair {
            left: downsample(&prev.left),
            right: downsample(&prev.right),
            left_color: None,
        };
        levels.push(next);
    }
    Ok(Pyramid { levels })
}

/// Halves both dimensions by averaging 2x2 blocks; odd trailing rows/columns drop.
pub fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() / 2, img.height() / 2);
    let src = img.as_slice();
    let sw = img.width();
    GrayImage::from_fn(w, h, |x, y| {
        let i = 2 * y * sw + 2 * x;
        0.25 * (src[i] + src[i + 1] + src[i + sw] + src[i + sw + 1])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> RectifiedStereoPair {
        let img = GrayImage::from_fn(w, h, f);
        RectifiedStereoPair::new(img.clone(), img, None).unwrap()
    }

    #[test]
    fn halving_dimensions() {
        let p = build_pyramid(
            &pair(640, 480, |x, y| ((x ^ y) & 7) as f32 / 7.0),
            &MatcherConfig::default(),
        )
        .unwrap();
        let dims: Vec<_> = p.levels().iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(640, 480), (320, 240), (160, 120), (80, 60)]);
        let order: Vec<_> = p.coarse_to_fine().map(|(i, _)| i).collect();
        assert_eq!(order, vec![3, 2, 1, 0]);
    }

    #[test]
    fn constant_image_is_a_fixed_point() {
        let p = build_pyramid(&pair(256, 200, |_, _| 0.375), &MatcherConfig::default()).unwrap();
        for level in p.levels() {
            assert!(level.left.as_slice().iter().all(|&v| v == 0.375));
            assert!(level.right.as_slice().iter().all(|&v| v == 0.375));
        }
    }

    #[test]
    fn too_small_image_names_minimum() {
        let err = build_pyramid(&pair(8, 8, |_, _| 0.0), &MatcherConfig::default()).unwrap_err();
        match err {
            Error::ImageTooSmall {
                min_width,
                min_height,
                ..
            } => {
                assert_eq!((min_width, min_height), (128, 128));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_message_mentions_size());
    }

    fn err_message_mentions_size() -> bool {
        let err = build_pyramid(&pair(8, 8, |_, _| 0.0), &MatcherConfig::default()).unwrap_err();
        err.to_string().contains("128x128")
    }

    #[test]
    fn odd_dimensions_floor() {
        let img = GrayImage::from_fn(7, 5, |x, _| x as f32);
        let d = downsample(&img);
        assert_eq!((d.width(), d.height()), (3, 2));
        assert_eq!(d.get(1, 0), 2.5);
    }
}
