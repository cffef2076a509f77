//! Global point map built by keyframe mosaicking.
//!
//! Each new keyframe first removes every existing point that projects onto
//! one of its valid depth pixels, then appends its own lifted points. Points
//! behind the camera or outside the image are kept.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{backproject_point, pixel_index, project_point, DepthField, Pose, StereoRig};
use crate::image::RgbImage;
use crate::matcher::DisparityField;
use crate::ply::{write_ply, write_ply_file, PlyVertex};

/// A colored world point and the keyframe that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
    pub source_keyframe: u64,
}

impl MapPoint {
    pub fn to_vertex(&self) -> PlyVertex {
        PlyVertex {
            position: self.position,
            color: self.color,
        }
    }
}

/// Depth and pose of one keyframe, ready to be fused into the map.
#[derive(Debug, Clone)]
pub struct KeyframeRecord {
    pub index: u64,
    /// Camera-to-world.
    pub pose: Pose,
    pub depth: DepthField,
    /// Left color image used for point colors; gray when absent.
    pub color: Option<RgbImage>,
    /// Disparity the depth came from, kept for export and inspection.
    pub disparity: Option<DisparityField>,
}

/// How existing points are tested against a new keyframe's depth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CullingMode {
    /// Remove any point landing on a valid depth pixel.
    #[default]
    Literal,
    /// Remove only points not farther than the observed depth plus the gate
    /// (in world units), so surfaces hidden behind the new view survive.
    DepthGated { gate: f64 },
}

impl CullingMode {
    fn culls(self, point_depth: f64, observed: f64) -> bool {
        match self {
            CullingMode::Literal => true,
            CullingMode::DepthGated { gate } => point_depth < observed + gate,
        }
    }
}

/// Outcome of one mosaic update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MosaicStats {
    pub keyframe_index: u64,
    pub culled: usize,
    pub added: usize,
    pub map_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeLogEntry {
    pub index: u64,
    pub pose: Pose,
    pub stats: MosaicStats,
}

/// Append-and-cull point map.
///
/// The point buffer is shared copy-on-write, so [`GlobalMap::snapshot`] is
/// cheap and never observes a half-applied update.
#[derive(Debug, Clone, Default)]
pub struct GlobalMap {
    points: Arc<Vec<MapPoint>>,
    keyframes: Vec<KeyframeLogEntry>,
}

const DEFAULT_GRAY: [u8; 3] = [128, 128, 128];

impl GlobalMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<MapPoint>) -> Self {
        Self {
            points: Arc::new(points),
            keyframes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    /// Consistent view of the points at this moment.
    pub fn snapshot(&self) -> Arc<Vec<MapPoint>> {
        Arc::clone(&self.points)
    }

    pub fn keyframes(&self) -> &[KeyframeLogEntry] {
        &self.keyframes
    }

    pub fn last_keyframe_index(&self) -> Option<u64> {
        self.keyframes.last().map(|k| k.index)
    }

    /// Culls against `keyframe` and appends `new_points`.
    ///
    /// Keyframe indices must strictly increase.
    pub fn update(
        &mut self,
        keyframe: &KeyframeRecord,
        new_points: Vec<MapPoint>,
        rig: &StereoRig,
        mode: CullingMode,
    ) -> Result<MosaicStats> {
        mosaic_update(self, keyframe, new_points, rig, mode)
    }

    pub fn write_ply<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_ply(out, self.points.iter().map(MapPoint::to_vertex))
    }

    pub fn export_ply(&self, path: &Path) -> Result<()> {
        write_ply_file(path, self.points.iter().map(MapPoint::to_vertex))
    }
}

/// Lifts every `stride`-th valid depth pixel of a keyframe into the world.
pub fn lift_keyframe(
    keyframe: &KeyframeRecord,
    rig: &StereoRig,
    stride: usize,
) -> Result<Vec<MapPoint>> {
    let depth = &keyframe.depth;
    if depth.width() != rig.width() || depth.height() != rig.height() {
        return Err(Error::DimensionMismatch(format!(
            "depth field {}x{} vs rig {}x{}",
            depth.width(),
            depth.height(),
            rig.width(),
            rig.height()
        )));
    }
    if let Some(c) = &keyframe.color {
        if c.width() != depth.width() || c.height() != depth.height() {
            return Err(Error::DimensionMismatch(
                "color image vs depth field".into(),
            ));
        }
    }
    let stride = stride.max(1);
    let mut out = Vec::with_capacity(depth.valid_count() / (stride * stride) + 1);
    for y in (0..depth.height()).step_by(stride) {
        for x in (0..depth.width()).step_by(stride) {
            let Some(d) = depth.get(x, y) else { continue };
            let p = backproject_point(rig, &keyframe.pose, Vector2::new(x as f64, y as f64), d)?;
            out.push(MapPoint {
                position: [p.x as f32, p.y as f32, p.z as f32],
                color: keyframe
                    .color
                    .as_ref()
                    .map_or(DEFAULT_GRAY, |c| c.get(x, y)),
                source_keyframe: keyframe.index,
            });
        }
    }
    Ok(out)
}

/// True when `point` would be removed by `keyframe` under `mode`.
pub fn is_culled_by(
    point: &MapPoint,
    keyframe: &KeyframeRecord,
    rig: &StereoRig,
    mode: CullingMode,
) -> bool {
    let world = nalgebra::Vector3::new(
        point.position[0] as f64,
        point.position[1] as f64,
        point.position[2] as f64,
    );
    let Some((pixel, z)) = project_point(rig, &keyframe.pose, &world).visible() else {
        return false;
    };
    let Some((x, y)) = pixel_index(rig, &pixel) else {
        return false;
    };
    match keyframe.depth.get(x, y) {
        Some(observed) => mode.culls(z, observed),
        None => false,
    }
}

/// One mosaicking step: cull, then append.
pub fn mosaic_update(
    map: &mut GlobalMap,
    keyframe: &KeyframeRecord,
    new_points: Vec<MapPoint>,
    rig: &StereoRig,
    mode: CullingMode,
) -> Result<MosaicStats> {
    if let Some(last) = map.last_keyframe_index() {
        if keyframe.index <= last {
            return Err(Error::KeyframeOrder {
                index: keyframe.index,
                last,
            });
        }
    }
    if keyframe.depth.width() != rig.width() || keyframe.depth.height() != rig.height() {
        return Err(Error::DimensionMismatch(format!(
            "depth field {}x{} vs rig {}x{}",
            keyframe.depth.width(),
            keyframe.depth.height(),
            rig.width(),
            rig.height()
        )));
    }
    let keep: Vec<bool> = map
        .points
        .par_iter()
        .map(|p| !is_culled_by(p, keyframe, rig, mode))
        .collect();
    let before = map.points.len();
    let added = new_points.len();
    let points = Arc::make_mut(&mut map.points);
    let mut k = keep.iter();
    points.retain(|_| *k.next().expect("one flag per point"));
    let culled = before - points.len();
    points.extend(new_points);
    let stats = MosaicStats {
        keyframe_index: keyframe.index,
        culled,
        added,
        map_size: points.len(),
    };
    map.keyframes.push(KeyframeLogEntry {
        index: keyframe.index,
        pose: keyframe.pose,
        stats,
    });
    Ok(stats)
}
