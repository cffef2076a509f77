//! Accuracy metrics: map points against a reference surface, and disparity
//! fields against ground truth.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::DisparityField;
use crate::mosaic::{GlobalMap, MapPoint};
use crate::ply::read_ply_file;

/// Exact nearest-neighbour index over 3-D points.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(mut points: Vec<[f64; 3]>) -> Self {
        let mut axes = vec![0u8; points.len()];
        build_node(&mut points, &mut axes);
        Self { points, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest stored point and its Euclidean distance.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<([f64; 3], f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, 0usize);
        self.search(0, self.points.len(), q, &mut best);
        Some((self.points[best.1], best.0.sqrt()))
    }

    fn search(&self, lo: usize, hi: usize, q: &[f64; 3], best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        let d2 = dist2(p, q);
        if d2 < best.0 {
            *best = (d2, mid);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        if diff * diff < best.0 {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build_node(points: &mut [[f64; 3]], axes: &mut [u8]) {
    if points.len() <= 1 {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    axes[mid] = axis as u8;
    let (lp, rest) = points.split_at_mut(mid);
    let (la, ra) = axes.split_at_mut(mid);
    build_node(lp, la);
    build_node(&mut rest[1..], &mut ra[1..]);
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Nearest distance by linear scan; reference implementation for tests.
pub fn brute_force_nearest(points: &[[f64; 3]], q: &[f64; 3]) -> Option<f64> {
    points
        .iter()
        .map(|p| dist2(p, q))
        .min_by(|a, b| a.total_cmp(b))
        .map(f64::sqrt)
}

/// Ground-truth surface used to score a map.
#[derive(Debug, Clone)]
pub enum Reference {
    /// Points `x` with `normal · x = offset`; `normal` is unit length.
    Plane {
        normal: Vector3<f64>,
        offset: f64,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Infinite cylinder through `point` along unit `axis`.
    Cylinder {
        point: Vector3<f64>,
        axis: Vector3<f64>,
        radius: f64,
    },
    Cloud(KdTree),
}

impl Reference {
    pub fn plane(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidConfig("plane normal must be non-zero".into()));
        }
        Ok(Reference::Plane {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        Ok(Reference::Sphere { center, radius })
    }

    pub fn cylinder(point: Vector3<f64>, axis: Vector3<f64>, radius: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidConfig(
                "cylinder axis must be non-zero".into(),
            ));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cylinder radius must be positive, got {radius}"
            )));
        }
        Ok(Reference::Cylinder {
            point,
            axis: axis / n,
            radius,
        })
    }

    pub fn cloud(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyReference);
        }
        Ok(Reference::Cloud(KdTree::build(points)))
    }

    /// Parses `plane:nx,ny,nz,d`, `sphere:cx,cy,cz,r` or
    /// `cylinder:px,py,pz,ax,ay,az,r`.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidConfig(format!("reference `{spec}`: {m}"));
        let (kind, rest) = spec
            .trim()
            .split_once(':')
            .ok_or_else(|| bad("expected `<kind>:<numbers>`".into()))?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{t}`")))
            })
            .collect::<Result<_>>()?;
        let need = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(bad(format!("{kind} takes {n} numbers, got {}", nums.len())))
            }
        };
        match kind {
            "plane" => {
                need(4)?;
                Self::plane(Vector3::new(nums[0], nums[1], nums[2]), nums[3])
            }
            "sphere" => {
                need(4)?;
                Self::sphere(Vector3::new(nums[0], nums[1], nums[2]), nums[3])
            }
            "cylinder" => {
                need(7)?;
                Self::cylinder(
                    Vector3::new(nums[0], nums[1], nums[2]),
                    Vector3::new(nums[3], nums[4], nums[5]),
                    nums[6],
                )
            }
            other => Err(bad(format!("unknown kind `{other}`"))),
        }
    }

    /// Analytic form as accepted by [`Reference::parse_spec`]; `None` for clouds.
    pub fn to_spec(&self) -> Option<String> {
        match self {
            Reference::Plane { normal: n, offset } => {
                Some(format!("plane:{},{},{},{}", n.x, n.y, n.z, offset))
            }
            Reference::Sphere { center: c, radius } => {
                Some(format!("sphere:{},{},{},{}", c.x, c.y, c.z, radius))
            }
            Reference::Cylinder {
                point: p,
                axis: a,
                radius,
            } => Some(format!(
                "cylinder:{},{},{},{},{},{},{}",
                p.x, p.y, p.z, a.x, a.y, a.z, radius
            )),
            Reference::Cloud(_) => None,
        }
    }

    /// Loads a reference from an analytic spec string, a text file holding
    /// one, or a PLY point cloud.
    pub fn load(arg: &str) -> Result<Self> {
        let kind = arg.split(':').next().unwrap_or("");
        if matches!(kind, "plane" | "sphere" | "cylinder") {
            return Self::parse_spec(arg);
        }
        let path = Path::new(arg);
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
        {
            let verts = read_ply_file(path)?;
            let pts = verts.iter().map(|v| v.position.map(|c| c as f64)).collect();
            return Self::cloud(pts);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_spec(text.trim())
    }

    /// Unsigned distance from `p` to the reference surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Reference::Plane { normal, offset } => (normal.dot(p) - offset).abs(),
            Reference::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Reference::Cylinder {
                point,
                axis,
                radius,
            } => {
                let v = p - point;
                let radial = v - axis * axis.dot(&v);
                (radial.norm() - radius).abs()
            }
            Reference::Cloud(tree) => tree
                .nearest(&[p.x, p.y, p.z])
                .map_or(f64::INFINITY, |(_, d)| d),
        }
    }
}

/// Map-to-surface error statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub point_count: usize,
    /// Points with error below the cutoff; the statistics use only these.
    pub inlier_count: usize,
    pub outlier_count: usize,
    /// Points with non-finite coordinates.
    pub invalid_count: usize,
    pub cutoff_mm: f64,
    pub mean_mm: Option<f64>,
    pub median_mm: Option<f64>,
    pub rms_mm: Option<f64>,
    pub max_mm: Option<f64>,
    /// Per-point errors below the cutoff, in map order.
    pub error_set: Vec<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Scores world points against `reference`. Errors at or beyond `cutoff`
/// count as outliers and are excluded from the statistics.
pub fn evaluate_points(
    points: &[[f64; 3]],
    reference: &Reference,
    cutoff: f64,
) -> Result<EvaluationReport> {
    if points.is_empty() {
        return Err(Error::EmptyMap);
    }
    if !(cutoff > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "cutoff must be positive, got {cutoff}"
        )));
    }
    if let Reference::Cloud(tree) = reference {
        if tree.is_empty() {
            return Err(Error::EmptyReference);
        }
    }
    let errors: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            let v = Vector3::new(p[0], p[1], p[2]);
            (v.iter().all(|c| c.is_finite())).then(|| reference.distance(&v))
        })
        .collect();
    let invalid_count = errors.iter().filter(|e| e.is_none()).count();
    let error_set: Vec<f64> = errors
        .iter()
        .flatten()
        .copied()
        .filter(|&e| e < cutoff)
        .collect();
    let outlier_count = points.len() - invalid_count - error_set.len();
    let n = error_set.len();
    let (mean_mm, rms_mm, max_mm) = if n == 0 {
        (None, None, None)
    } else {
        let sum: f64 = error_set.iter().sum();
        let sq: f64 = error_set.iter().map(|e| e * e).sum();
        let max = error_set.iter().copied().fold(0.0, f64::max);
        (
            Some(sum / n as f64),
            Some((sq / n as f64).sqrt()),
            Some(max),
        )
    };
    Ok(EvaluationReport {
        point_count: points.len(),
        inlier_count: n,
        outlier_count,
        invalid_count,
        cutoff_mm: cutoff,
        mean_mm,
        median_mm: median(&error_set),
        rms_mm,
        max_mm,
        error_set,
    })
}

pub fn evaluate_map(
    points: &[MapPoint],
    reference: &Reference,
    cutoff: f64,
) -> Result<EvaluationReport> {
    let pts: Vec<[f64; 3]> = points
        .iter()
        .map(|p| p.position.map(|c| c as f64))
        .collect();
    evaluate_points(&pts, reference, cutoff)
}

/// Scores every point of `map` against `reference`.
pub fn map_to_surface_error(
    map: &GlobalMap,
    reference: &Reference,
    cutoff: f64,
) -> Result<EvaluationReport> {
    evaluate_map(map.points(), reference, cutoff)
}

/// Distance from `point` to the closest point of `reference`.
pub fn nearest_reference_distance(point: &Vector3<f64>, reference: &Reference) -> Result<f64> {
    if let Reference::Cloud(tree) = reference {
        if tree.is_empty() {
            return Err(Error::EmptyReference);
        }
    }
    Ok(reference.distance(point))
}

/// End-point error of an estimated disparity field against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityErrorStats {
    /// Pixels valid in both fields.
    pub count: usize,
    pub mean_epe: Option<f64>,
    pub median_epe: Option<f64>,
    /// Share of compared pixels with error at most 0.5 px, in percent.
    pub within_half_pixel_percent: Option<f64>,
    /// Valid estimates over valid ground-truth pixels.
    pub coverage: f64,
}

pub fn disparity_epe(
    estimate: &DisparityField,
    truth: &DisparityField,
) -> Result<DisparityErrorStats> {
    if estimate.width() != truth.width() || estimate.height() != truth.height() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {}x{} vs truth {}x{}",
            estimate.width(),
            estimate.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut errs = Vec::new();
    for i in 0..estimate.disparity().len() {
        if estimate.valid()[i] && truth.valid()[i] {
            errs.push((estimate.disparity()[i] - truth.disparity()[i]).abs());
        }
    }
    let truth_valid = truth.valid_count();
    let n = errs.len();
    let mean = (n > 0).then(|| errs.iter().sum::<f64>() / n as f64);
    let within =
        (n > 0).then(|| 100.0 * errs.iter().filter(|&&e| e <= 0.5).count() as f64 / n as f64);
    Ok(DisparityErrorStats {
        count: n,
        mean_epe: mean,
        median_epe: median(&errs),
        within_half_pixel_percent: within,
        coverage: if truth_valid == 0 {
            0.0
        } else {
            n as f64 / truth_valid as f64
        },
    })
}
