//! Rectified stereo camera model, rigid poses, triangulation and
//! (back-)projection.
//!
//! Camera frame: x right, y down, z forward. Poses are camera-to-world.
//! All metric quantities are millimeters.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::matcher::DisparityField;

/// Default disparity floor below which triangulation reports an invalid depth.
pub const DEFAULT_DISPARITY_FLOOR: f64 = 0.1;

/// Rectified stereo pair intrinsics plus baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    baseline: f64,
    width: usize,
    height: usize,
}

impl StereoRig {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        baseline: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(baseline.is_finite() && baseline > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "baseline must be positive, got {baseline}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidConfig(
                "principal point must be finite".into(),
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            baseline,
            width,
            height,
        })
    }

    /// Square pixels with the principal point at the image center.
    pub fn centered(
        focal_length_px: f64,
        baseline: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        Self::new(
            focal_length_px,
            focal_length_px,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            baseline,
            width,
            height,
        )
    }

    /// Horizontal focal length, the `f` of `depth = f * b / disparity`.
    pub fn focal_length_px(&self) -> f64 {
        self.fx
    }
    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn baseline(&self) -> f64 {
        self.baseline
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Whether a pixel coordinate lies on the image (cell centers at integers).
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }

    /// Depth from disparity, `None` when `disparity <= floor`.
    pub fn triangulate_depth(&self, disparity: f64, floor: f64) -> Option<f64> {
        triangulate_depth(self, disparity, floor)
    }

    /// Ray direction in the camera frame with unit z component.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// `f * b / disparity`, or `None` at or below the disparity floor.
pub fn triangulate_depth(rig: &StereoRig, disparity: f64, floor: f64) -> Option<f64> {
    if disparity.is_finite() && disparity > floor {
        Some(rig.fx * rig.baseline / disparity)
    } else {
        None
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation_translation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a raw 3x3 matrix, checking orthonormality to 1e-9.
    pub fn from_matrix(r: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if err > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "rotation is not orthonormal (|RᵀR-I|={err:e}, det={det})"
            )));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(r),
            translation,
        })
    }

    /// Quaternion in (x, y, z, w) order; normalized before use.
    pub fn from_quaternion(t: Vector3<f64>, qx: f64, qy: f64, qz: f64, qw: f64) -> Result<Self> {
        let q = nalgebra::Quaternion::new(qw, qx, qy, qz);
        if !(q.norm() > 1e-12) || !q.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidConfig("degenerate quaternion".into()));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Self {
            rotation: uq.to_rotation_matrix(),
            translation: t,
        })
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion (x, y, z, w).
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        [q.i, q.j, q.k, q.w]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World point into this camera's frame (applies the inverse transform).
    #[inline]
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation
            .inverse_transform_vector(&(p - self.translation))
    }

    /// Euclidean distance between camera centers.
    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Geodesic rotation angle between two poses, in degrees.
    pub fn rotation_angle_deg(&self, other: &Pose) -> f64 {
        let rel = self.rotation.inverse() * other.rotation;
        let cos = ((rel.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos().to_degrees()
    }

    /// Largest absolute entry difference of rotation and translation.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dr = (self.rotation.matrix() - other.rotation.matrix())
            .abs()
            .max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

/// Back-projects a pixel with known depth into the world:
/// `pose * (depth * K⁻¹ [u, v, 1]ᵀ)`.
pub fn backproject_point(
    rig: &StereoRig,
    pose: &Pose,
    pixel: Vector2<f64>,
    depth: f64,
) -> Result<Vector3<f64>> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    if !rig.contains(pixel.x, pixel.y) {
        return Err(Error::PixelOutOfBounds {
            u: pixel.x,
            v: pixel.y,
            width: rig.width,
            height: rig.height,
        });
    }
    let cam = rig.ray(pixel.x, pixel.y) * depth;
    Ok(pose.transform_point(&cam))
}

/// Outcome of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// In front of the camera. The pixel may still lie off the image.
    Visible {
        pixel: Vector2<f64>,
        depth: f64,
    },
    BehindCamera,
}

impl Projection {
    pub fn visible(self) -> Option<(Vector2<f64>, f64)> {
        match self {
            Projection::Visible { pixel, depth } => Some((pixel, depth)),
            Projection::BehindCamera => None,
        }
    }
}

/// Projects a world point through `K · pose⁻¹`.
pub fn project_point(rig: &StereoRig, pose: &Pose, world: &Vector3<f64>) -> Projection {
    let cam = pose.inverse_transform_point(world);
    if !(cam.z > 0.0) {
        return Projection::BehindCamera;
    }
    let u = rig.fx * cam.x / cam.z + rig.cx;
    let v = rig.fy * cam.y / cam.z + rig.cy;
    Projection::Visible {
        pixel: Vector2::new(u, v),
        depth: cam.z,
    }
}

/// Nearest integer pixel for a projected coordinate, if on the image.
#[inline]
pub fn pixel_index(rig: &StereoRig, pixel: &Vector2<f64>) -> Option<(usize, usize)> {
    let u = pixel.x.round();
    let v = pixel.y.round();
    if u >= 0.0 && v >= 0.0 && u < rig.width as f64 && v < rig.height as f64 {
        Some((u as usize, v as usize))
    } else {
        None
    }
}

/// Per-pixel metric depth. Invalid pixels hold `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthField {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Builds a field from raw depths; non-finite or non-positive entries are invalid.
    pub fn from_depths(width: usize, height: usize, depths: Vec<f64>) -> Result<Self> {
        if depths.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} depths for {width}x{height} field",
                depths.len()
            )));
        }
        let mut field = Self::invalid(width, height);
        for (i, d) in depths.into_iter().enumerate() {
            if d.is_finite() && d > 0.0 {
                field.depth[i] = d;
                field.valid[i] = true;
            }
        }
        Ok(field)
    }

    /// Triangulates every valid disparity pixel.
    pub fn from_disparity(rig: &StereoRig, disparity: &DisparityField, floor: f64) -> Self {
        let (w, h) = (disparity.width(), disparity.height());
        let mut field = Self::invalid(w, h);
        for i in 0..w * h {
            if !disparity.valid()[i] {
                continue;
            }
            if let Some(d) = triangulate_depth(rig, disparity.disparity()[i], floor) {
                field.depth[i] = d;
                field.valid[i] = true;
            }
        }
        field
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn depth(&self) -> &[f64] {
        &self.depth
    }
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.depth[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}
