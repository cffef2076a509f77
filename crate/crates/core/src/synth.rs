//! Synthetic stereo sequences with analytic ground truth.
//!
//! Scenes are a single textured surface seen from inside or in front. The
//! texture is a solid (3-D) sum of sinusoids, so both cameras see the same
//! surface pattern and the true disparity at every pixel is `f·b / z`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::format_rig;
use crate::error::{Error, Result};
use crate::eval::Reference;
use crate::geometry::{DepthField, Pose, StereoRig};
use crate::image::{luma, save_rgb_png, to_u8, GrayImage, RgbImage};
use crate::matcher::{DisparityField, RectifiedStereoPair};
use crate::pfm::{disparity_to_map, write_pfm, FloatMap};
use crate::trajectory::{write_tum, StampedPose};

/// Frame rate assumed for trajectory timestamps.
pub const FRAME_RATE: f64 = 30.0;

/// Surface shape, in the world frame of frame 0 (camera at the origin,
/// x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    FrontoParallel {
        depth: f64,
    },
    /// Plane through `(0, 0, depth)` with `z = depth + x · tan(tilt)`.
    Slanted {
        depth: f64,
        tilt_deg: f64,
    },
    Sphere {
        center_depth: f64,
        radius: f64,
    },
    /// Cylinder through `(0, 0, axis_depth)`. The axis is world y rotated
    /// about x by `tilt_deg`.
    Tube {
        axis_depth: f64,
        radius: f64,
        tilt_deg: f64,
    },
}

impl Geometry {
    /// Slanted plane whose disparity ramps linearly from `left` at column 0
    /// to `right` at the last column.
    pub fn slanted_ramp(rig: &StereoRig, left: f64, right: f64) -> Result<Self> {
        if !(left > 0.0 && right > 0.0) {
            return Err(Error::InvalidConfig(
                "ramp disparities must be positive".into(),
            ));
        }
        let fb = rig.fx() * rig.baseline();
        let span = (rig.width() - 1) as f64;
        // disparity is affine in u for a plane: d(u) = d_c + (u - cx) * slope
        let slope = (right - left) / span;
        let d_c = left + slope * rig.cx();
        // fb / z = d_c - d_c * tan(t) * (u - cx) / fx
        let tan = -slope * rig.fx() / d_c;
        Ok(Geometry::Slanted {
            depth: fb / d_c,
            tilt_deg: tan.atan().to_degrees(),
        })
    }

    /// Smallest positive ray parameter where `origin + t·dir` meets the surface.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            Geometry::FrontoParallel { depth } => plane_hit(&Vector3::z(), depth, origin, dir),
            Geometry::Slanted { depth, tilt_deg } => {
                let (n, c) = slanted_plane(depth, tilt_deg);
                plane_hit(&n, c, origin, dir)
            }
            Geometry::Sphere {
                center_depth,
                radius,
            } => {
                let oc = origin - Vector3::new(0.0, 0.0, center_depth);
                smallest_positive_root(
                    dir.dot(dir),
                    2.0 * oc.dot(dir),
                    oc.dot(&oc) - radius * radius,
                    EPS,
                )
            }
            Geometry::Tube {
                axis_depth,
                radius,
                tilt_deg,
            } => {
                let axis = tube_axis(tilt_deg);
                let m = origin - Vector3::new(0.0, 0.0, axis_depth);
                let m_perp = m - axis * axis.dot(&m);
                let d_perp = dir - axis * axis.dot(dir);
                smallest_positive_root(
                    d_perp.dot(&d_perp),
                    2.0 * m_perp.dot(&d_perp),
                    m_perp.dot(&m_perp) - radius * radius,
                    EPS,
                )
            }
        }
    }

    /// Analytic reference surface for evaluation.
    pub fn reference(&self) -> Reference {
        let r = match *self {
            Geometry::FrontoParallel { depth } => Reference::plane(Vector3::z(), depth),
            Geometry::Slanted { depth, tilt_deg } => {
                let (n, c) = slanted_plane(depth, tilt_deg);
                Reference::plane(n, c)
            }
            Geometry::Sphere {
                center_depth,
                radius,
            } => Reference::sphere(Vector3::new(0.0, 0.0, center_depth), radius),
            Geometry::Tube {
                axis_depth,
                radius,
                tilt_deg,
            } => Reference::cylinder(
                Vector3::new(0.0, 0.0, axis_depth),
                tube_axis(tilt_deg),
                radius,
            ),
        };
        r.expect("geometry parameters validated")
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Geometry::FrontoParallel { depth } => depth > 0.0,
            Geometry::Slanted { depth, tilt_deg } => depth > 0.0 && tilt_deg.abs() < 89.0,
            Geometry::Sphere { radius, .. } => radius > 0.0,
            Geometry::Tube { radius, .. } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid scene geometry {self:?}"
            )))
        }
    }
}

fn slanted_plane(depth: f64, tilt_deg: f64) -> (Vector3<f64>, f64) {
    let t = tilt_deg.to_radians();
    let n = Vector3::new(-t.sin(), 0.0, t.cos());
    (n, depth * t.cos())
}

fn tube_axis(tilt_deg: f64) -> Vector3<f64> {
    let t = tilt_deg.to_radians();
    Vector3::new(0.0, t.cos(), t.sin())
}

fn plane_hit(n: &Vector3<f64>, c: f64, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let denom = n.dot(dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (c - n.dot(origin)) / denom;
    (t > 1e-9).then_some(t)
}

fn smallest_positive_root(a: f64, b: f64, c: f64, eps: f64) -> Option<f64> {
    if a.abs() < 1e-15 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t0, t1) = ((-b - s) / (2.0 * a), (-b + s) / (2.0 * a));
    if t0 > eps {
        Some(t0)
    } else if t1 > eps {
        Some(t1)
    } else {
        None
    }
}

/// Parameters of the solid noise texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureSpec {
    pub seed: u64,
    /// Longest wavelength in world units.
    pub wavelength: f64,
    /// Each octave halves the wavelength and scales amplitude by 0.6.
    pub octaves: usize,
    /// Peak deviation from mid gray, in [0, 0.5].
    pub contrast: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            wavelength: 8.0,
            octaves: 3,
            contrast: 0.45,
        }
    }
}

const WAVES_PER_OCTAVE: usize = 6;

#[derive(Debug, Clone, Copy)]
struct Wave {
    k: Vector3<f64>,
    phase: f64,
    amplitude: f64,
}

/// Seeded sum of randomly oriented 3-D sinusoids.
#[derive(Debug, Clone)]
pub struct SolidTexture {
    waves: Vec<Wave>,
    scale: f64,
}

impl SolidTexture {
    pub fn new(spec: &TextureSpec) -> Result<Self> {
        if !(spec.wavelength > 0.0) || spec.octaves == 0 || !(0.0..=0.5).contains(&spec.contrast) {
            return Err(Error::InvalidConfig(format!("invalid texture {spec:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut waves = Vec::with_capacity(spec.octaves * WAVES_PER_OCTAVE);
        let mut power = 0.0;
        for o in 0..spec.octaves {
            let base = spec.wavelength / (1u64 << o) as f64;
            let amplitude = 0.6f64.powi(o as i32);
            for _ in 0..WAVES_PER_OCTAVE {
                let dir = loop {
                    let v = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let n = v.norm();
                    if n > 0.1 && n <= 1.0 {
                        break v / n;
                    }
                };
                let lambda = base * rng.random_range(0.8..1.25);
                waves.push(Wave {
                    k: dir * (2.0 * PI / lambda),
                    phase: rng.random_range(0.0..2.0 * PI),
                    amplitude,
                });
                power += amplitude * amplitude / 2.0;
            }
        }
        // about three standard deviations map to the full contrast
        let scale = spec.contrast / (3.0 * power.sqrt());
        Ok(Self { waves, scale })
    }

    /// Intensity in [0, 1] at a world point.
    pub fn value(&self, p: &Vector3<f64>) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.k.dot(p) + w.phase).sin())
            .sum();
        (0.5 + self.scale * s).clamp(0.0, 1.0)
    }

    /// Tissue-like color ramp for an intensity.
    pub fn color(t: f64) -> [u8; 3] {
        [
            to_u8((0.30 + 0.65 * t) as f32),
            to_u8((0.12 + 0.55 * t) as f32),
            to_u8((0.10 + 0.45 * t) as f32),
        ]
    }
}

/// Camera trajectory, camera-to-world per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraPath {
    Static,
    /// Constant translation per frame.
    Dolly {
        step: Vector3<f64>,
    },
    /// Rotation about a vertical axis through `(0, 0, pivot_depth)`.
    Arc {
        pivot_depth: f64,
        step_deg: f64,
    },
}

impl CameraPath {
    pub fn pose(&self, frame: usize) -> Pose {
        let k = frame as f64;
        match *self {
            CameraPath::Static => Pose::identity(),
            CameraPath::Dolly { step } => Pose::from_translation(step * k),
            CameraPath::Arc {
                pivot_depth,
                step_deg,
            } => {
                let r = Rotation3::from_axis_angle(&Vector3::y_axis(), (k * step_deg).to_radians());
                let pivot = Vector3::new(0.0, 0.0, pivot_depth);
                Pose::from_rotation_translation(r, pivot - r * pivot)
            }
        }
    }
}

/// Everything needed to render a sequence deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub rig: StereoRig,
    pub geometry: Geometry,
    pub texture: TextureSpec,
    pub path: CameraPath,
    pub frames: usize,
}

impl SceneSpec {
    /// Named scenes at 640x480, f = 450 px, b = 5 mm.
    ///
    /// * `plane`: fronto-parallel at 180 mm (disparity 12.5 px)
    /// * `slanted`: disparity ramp from 5 to 20 px
    /// * `sphere`: inside a 60 mm sphere, depths about 55 to 80 mm
    /// * `tube`: inside a 50 mm cylinder, depths about 58 to 80 mm, dolly along the axis
    pub fn preset(name: &str, frames: usize, seed: u64) -> Result<Self> {
        Self::preset_with_rig(
            name,
            StereoRig::centered(450.0, 5.0, 640, 480)?,
            frames,
            seed,
        )
    }

    /// Same scenes with a custom rig. Fixed-depth scenes keep their depths,
    /// so disparities scale with `f·b`; the slanted ramp keeps 5 to 20 px.
    pub fn preset_with_rig(name: &str, rig: StereoRig, frames: usize, seed: u64) -> Result<Self> {
        let texture = TextureSpec {
            seed,
            ..TextureSpec::default()
        };
        let (geometry, texture, path) = match name {
            "plane" => (
                Geometry::FrontoParallel { depth: 180.0 },
                texture,
                CameraPath::Static,
            ),
            "slanted" => (
                Geometry::slanted_ramp(&rig, 5.0, 20.0)?,
                texture,
                CameraPath::Static,
            ),
            "sphere" => (
                Geometry::Sphere {
                    center_depth: 20.0,
                    radius: 60.0,
                },
                TextureSpec {
                    wavelength: 4.0,
                    ..texture
                },
                CameraPath::Arc {
                    pivot_depth: 20.0,
                    step_deg: 0.5,
                },
            ),
            "tube" => (
                Geometry::Tube {
                    axis_depth: 30.0,
                    radius: 50.0,
                    tilt_deg: 0.0,
                },
                TextureSpec {
                    wavelength: 4.0,
                    ..texture
                },
                CameraPath::Dolly {
                    step: Vector3::new(0.0, 1.0, 0.0),
                },
            ),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown scene `{other}` (expected plane, slanted, sphere or tube)"
                )))
            }
        };
        Ok(Self {
            rig,
            geometry,
            texture,
            path,
            frames,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        SolidTexture::new(&self.texture)?;
        Ok(())
    }

    pub fn pose(&self, frame: usize) -> Pose {
        self.path.pose(frame)
    }
}

/// One rendered stereo frame and its ground truth.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub index: usize,
    pub pose: Pose,
    pub pair: RectifiedStereoPair,
    pub right_color: RgbImage,
    /// `f·b / z` at every pixel.
    pub disparity: DisparityField,
    pub depth: DepthField,
}

/// Renders frame `frame` of a scene.
pub fn render_pair(spec: &SceneSpec, frame: usize) -> Result<RenderedFrame> {
    let texture = SolidTexture::new(&spec.texture)?;
    render_with_baseline(spec, &texture, frame, spec.rig.baseline())
}

pub(crate) fn render_with_baseline(
    spec: &SceneSpec,
    texture: &SolidTexture,
    frame: usize,
    baseline: f64,
) -> Result<RenderedFrame> {
    if frame >= spec.frames {
        return Err(Error::FrameOutOfRange {
            index: frame,
            frames: spec.frames,
        });
    }
    spec.geometry.validate()?;
    let rig = &spec.rig;
    let (w, h) = (rig.width(), rig.height());
    let pose = spec.pose(frame);
    let rot = *pose.rotation();
    let left_origin = *pose.translation();
    let right_origin = pose.transform_point(&Vector3::new(baseline, 0.0, 0.0));

    // per row: (left color, right color, left depth), or the first miss
    type Row = std::result::Result<Vec<([u8; 3], [u8; 3], f64)>, (usize, usize)>;
    let rows: Vec<Row> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let dir = rot * rig.ray(x as f64, y as f64);
                let tl = spec.geometry.intersect(&left_origin, &dir).ok_or((x, y))?;
                let tr = spec.geometry.intersect(&right_origin, &dir).ok_or((x, y))?;
                let cl = SolidTexture::color(texture.value(&(left_origin + dir * tl)));
                let cr = SolidTexture::color(texture.value(&(right_origin + dir * tr)));
                row.push((cl, cr, tl));
            }
            Ok(row)
        })
        .collect();

    let mut left = Vec::with_capacity(w * h);
    let mut right = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for row in rows {
        let row = row.map_err(|(x, y)| Error::SceneOutOfView {
            frame,
            reason: format!("ray through pixel ({x}, {y}) misses the surface"),
        })?;
        for (cl, cr, z) in row {
            left.push(cl);
            right.push(cr);
            depth.push(z);
        }
    }
    let fb = rig.fx() * baseline;
    let disparity = DisparityField::from_values(w, h, depth.iter().map(|z| fb / z).collect())?;
    let depth = DepthField::from_depths(w, h, depth)?;
    let left = RgbImage::from_vec(w, h, left)?;
    let right_color = RgbImage::from_vec(w, h, right)?;
    let gray = |img: &RgbImage| {
        GrayImage::from_vec(w, h, img.as_slice().iter().map(|&p| luma(p)).collect())
    };
    let pair = RectifiedStereoPair::new(gray(&left)?, gray(&right_color)?, Some(left))?;
    Ok(RenderedFrame {
        index: frame,
        pose,
        pair,
        right_color,
        disparity,
        depth,
    })
}

/// Files produced by [`write_sequence`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceManifest {
    pub root: PathBuf,
    pub left: Vec<PathBuf>,
    pub right: Vec<PathBuf>,
    pub trajectory: PathBuf,
    pub session_config: PathBuf,
    pub reference: PathBuf,
}

/// Renders every frame to `out`:
///
/// ```text
/// left/NNNNNN.png  right/NNNNNN.png
/// gt/disparity_NNNNNN.pfm  gt/depth_NNNNNN.pfm
/// trajectory.txt  session.cfg  reference.txt
/// ```
pub fn write_sequence(spec: &SceneSpec, out: &Path) -> Result<SequenceManifest> {
    spec.validate()?;
    let texture = SolidTexture::new(&spec.texture)?;
    let dirs = [out.join("left"), out.join("right"), out.join("gt")];
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = SequenceManifest {
        root: out.to_path_buf(),
        left: Vec::new(),
        right: Vec::new(),
        trajectory: out.join("trajectory.txt"),
        session_config: out.join("session.cfg"),
        reference: out.join("reference.txt"),
    };
    let mut poses = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let f = render_with_baseline(spec, &texture, k, spec.rig.baseline())?;
        let name = format!("{k:06}.png");
        let (lp, rp) = (dirs[0].join(&name), dirs[1].join(&name));
        save_rgb_png(
            f.pair.left_color.as_ref().expect("rendered with color"),
            &lp,
        )?;
        save_rgb_png(&f.right_color, &rp)?;
        write_pfm(
            &disparity_to_map(&f.disparity),
            &dirs[2].join(format!("disparity_{k:06}.pfm")),
        )?;
        let depth = FloatMap {
            width: f.depth.width(),
            height: f.depth.height(),
            data: f.depth.depth().iter().map(|&z| z as f32).collect(),
        };
        write_pfm(&depth, &dirs[2].join(format!("depth_{k:06}.pfm")))?;
        manifest.left.push(lp);
        manifest.right.push(rp);
        poses.push(StampedPose {
            timestamp: k as f64 / FRAME_RATE,
            pose: f.pose,
        });
    }
    write_tum(&poses, &manifest.trajectory)?;
    let cfg = format!(
        "# stereo rig of the rendered sequence\n{}",
        format_rig(&spec.rig)
    );
    std::fs::write(&manifest.session_config, cfg)
        .map_err(|e| Error::io(&manifest.session_config, e))?;
    let reference = spec
        .geometry
        .reference()
        .to_spec()
        .expect("analytic geometry");
    std::fs::write(&manifest.reference, format!("{reference}\n"))
        .map_err(|e| Error::io(&manifest.reference, e))?;
    Ok(manifest)
}
