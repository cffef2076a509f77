//! Invariants of the dense matcher on randomly textured planes.

use proptest::prelude::*;

use densemap_core::matcher::match_pair_detailed;
use densemap_core::synth::{render_pair, CameraPath, Geometry, SceneSpec, TextureSpec};
use densemap_core::{match_pair, MatcherConfig, RectifiedStereoPair, StereoRig};

/// A textured fronto-parallel plane seen with an exact disparity of `shift` px.
fn plane_pair(seed: u64, shift: f64, width: usize, height: usize) -> RectifiedStereoPair {
    let rig = StereoRig::centered(60.0, shift * 50.0 / 60.0, width, height).unwrap();
    let spec = SceneSpec {
        rig,
        geometry: Geometry::FrontoParallel { depth: 50.0 },
        texture: TextureSpec {
            seed,
            ..TextureSpec::default()
        },
        path: CameraPath::Static,
        frames: 1,
    };
    render_pair(&spec, 0).unwrap().pair
}

fn small_config() -> MatcherConfig {
    MatcherConfig {
        pyramid_levels: 3,
        max_disparity: Some(16.0),
        ..MatcherConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn valid_pixels_respect_range_and_threshold(seed in 0u64..1000, shift in 0.5f64..8.0) {
        let cfg = small_config();
        let field = match_pair(&plane_pair(seed, shift, 64, 64), &cfg).unwrap();
        for i in 0..field.disparity().len() {
            let c = field.confidence()[i];
            prop_assert!((0.0..=1.0).contains(&c));
            if field.valid()[i] {
                let d = field.disparity()[i];
                prop_assert!((0.0..=16.0).contains(&d), "d = {}", d);
                prop_assert!(c >= cfg.probability_threshold);
            }
        }
    }

    #[test]
    fn fused_value_lies_between_contributing_patches(seed in 0u64..1000, shift in 0.5f64..8.0) {
        let cfg = small_config();
        let out = match_pair_detailed(&plane_pair(seed, shift, 64, 64), &cfg).unwrap();
        let (w, h) = (out.field.width(), out.field.height());
        let mut lo = vec![f64::INFINITY; w * h];
        let mut hi = vec![f64::NEG_INFINITY; w * h];
        for p in out.patches.iter().filter(|p| p.valid && p.scrf_probability > 0.0) {
            let (ox, oy) = p.origin(cfg.patch_size);
            for j in 0..cfg.patch_size as isize {
                for i in 0..cfg.patch_size as isize {
                    let (x, y) = (ox + i, oy + j);
                    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                        let k = y as usize * w + x as usize;
                        lo[k] = lo[k].min(p.disparity);
                        hi[k] = hi[k].max(p.disparity);
                    }
                }
            }
        }
        for k in 0..w * h {
            if out.field.valid()[k] {
                let d = out.field.disparity()[k];
                prop_assert!(d >= lo[k] - 1e-9 && d <= hi[k] + 1e-9, "{} not in [{}, {}]", d, lo[k], hi[k]);
            }
        }
    }

    #[test]
    fn shared_intensity_offset_changes_nothing(seed in 0u64..1000, shift in 0.5f64..8.0, c in -0.3f32..0.3) {
        let cfg = small_config();
        let pair = plane_pair(seed, shift, 64, 64);
        let moved = RectifiedStereoPair::new(pair.left.offset(c), pair.right.offset(c), None).unwrap();
        let a = match_pair(&pair, &cfg).unwrap();
        let b = match_pair(&moved, &cfg).unwrap();
        for i in 0..a.disparity().len() {
            if a.valid()[i] && b.valid()[i] {
                prop_assert!((a.disparity()[i] - b.disparity()[i]).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise(seed in 0u64..1000, shift in 0.5f64..8.0) {
        let pair = plane_pair(seed, shift, 64, 64);
        let par = match_pair(&pair, &small_config()).unwrap();
        let seq = match_pair(&pair, &MatcherConfig { parallel: false, ..small_config() }).unwrap();
        prop_assert_eq!(par, seq);
    }
}

#[test]
fn identical_views_give_zero_disparity() {
    let pair = plane_pair(4, 3.0, 64, 64);
    let same = RectifiedStereoPair::new(pair.left.clone(), pair.left.clone(), None).unwrap();
    let field = match_pair(&same, &small_config()).unwrap();
    let valid: Vec<f64> = (0..field.disparity().len())
        .filter(|&i| field.valid()[i])
        .map(|i| field.disparity()[i])
        .collect();
    assert!(!valid.is_empty());
    let near_zero = valid.iter().filter(|d| d.abs() < 0.1).count();
    assert!(near_zero as f64 >= 0.99 * valid.len() as f64);
}

/// Cropping both views by a multiple of the coarsest patch stride shifts the
/// field by the same amount away from the borders.
#[test]
fn horizontal_crop_shifts_the_field() {
    let cfg = small_config();
    let offset = cfg.patch_stride << (cfg.pyramid_levels - 1);
    let wide = plane_pair(21, 4.0, 128 + offset, 96);
    let crop = |x0: usize| {
        RectifiedStereoPair::new(
            wide.left.crop(x0, 0, 128, 96).unwrap(),
            wide.right.crop(x0, 0, 128, 96).unwrap(),
            None,
        )
        .unwrap()
    };
    let a = match_pair(&crop(0), &cfg).unwrap();
    let b = match_pair(&crop(offset), &cfg).unwrap();
    let margin = cfg.patch_size;
    let (mut compared, mut agree) = (0usize, 0usize);
    for y in margin..96 - margin {
        for x in margin..128 - offset - margin {
            if let (Some(da), Some(db)) = (a.get(x + offset, y), b.get(x, y)) {
                compared += 1;
                if (da - db).abs() <= 1e-3 {
                    agree += 1;
                }
            }
        }
    }
    assert!(compared > 500);
    assert!(agree as f64 >= 0.99 * compared as f64, "{agree}/{compared}");
}

#[test]
fn full_size_plane_recovers_its_disparity() {
    let frame = render_pair(&SceneSpec::preset("plane", 1, 2).unwrap(), 0).unwrap();
    let field = match_pair(&frame.pair, &MatcherConfig::default()).unwrap();
    let n = field.disparity().len();
    let good = (0..n)
        .filter(|&i| field.valid()[i] && (field.disparity()[i] - 12.5).abs() <= 0.25)
        .count();
    assert!(good as f64 >= 0.95 * n as f64, "{good}/{n}");
}
