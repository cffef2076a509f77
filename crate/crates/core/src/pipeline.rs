//! Offline mapping session: keyframe selection on the driver thread, and
//! matching, lifting and mosaicking on a single mapping worker fed through a
//! bounded queue.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, TrySendError};
use std::time::Instant;

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::eval::median;
use crate::geometry::{DepthField, Pose, StereoRig, DEFAULT_DISPARITY_FLOOR};
use crate::image::{load_rgb, probe_dimensions};
use crate::matcher::{match_pair, MatcherConfig, RectifiedStereoPair};
use crate::mosaic::{
    lift_keyframe, mosaic_update, CullingMode, GlobalMap, KeyframeRecord, MapPoint,
};
use crate::ply::write_ply_file;
use crate::trajectory::{read_tum, StampedPose};

/// Largest timestamp difference, in seconds, when pairing images to poses by name.
pub const ALIGNMENT_TOLERANCE_S: f64 = 0.010;

/// When a frame becomes a keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePolicy {
    /// Translation from the last keyframe, world units.
    pub translation_threshold: f64,
    /// Rotation from the last keyframe, degrees.
    pub rotation_threshold_deg: f64,
    /// Force a keyframe after this many frames.
    pub max_frame_gap: usize,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            translation_threshold: 3.0,
            rotation_threshold_deg: 5.0,
            max_frame_gap: 30,
        }
    }
}

impl KeyframePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.translation_threshold > 0.0) || !(self.rotation_threshold_deg > 0.0) {
            return Err(Error::InvalidConfig(
                "keyframe thresholds must be positive".into(),
            ));
        }
        if self.max_frame_gap == 0 {
            return Err(Error::InvalidConfig("max_frame_gap must be >= 1".into()));
        }
        Ok(())
    }

    /// Strictly beyond either threshold, or at least `max_frame_gap` frames on.
    pub fn is_keyframe(&self, last: &Pose, last_frame: usize, pose: &Pose, frame: usize) -> bool {
        last.translation_distance(pose) > self.translation_threshold
            || last.rotation_angle_deg(pose) > self.rotation_threshold_deg
            || frame.saturating_sub(last_frame) >= self.max_frame_gap
    }
}

/// Whether the current frame becomes a keyframe, given the last keyframe's
/// pose and the number of frames since it.
pub fn select_keyframe(
    prev_keyframe_pose: &Pose,
    current_pose: &Pose,
    frames_since_keyframe: usize,
    policy: &KeyframePolicy,
) -> bool {
    policy.is_keyframe(prev_keyframe_pose, 0, current_pose, frames_since_keyframe)
}

/// Stateful keyframe selector; the first frame is always a keyframe.
#[derive(Debug, Clone)]
pub struct KeyframeSelector {
    policy: KeyframePolicy,
    last: Option<(Pose, usize)>,
}

impl KeyframeSelector {
    pub fn new(policy: KeyframePolicy) -> Self {
        Self { policy, last: None }
    }

    pub fn observe(&mut self, frame: usize, pose: &Pose) -> bool {
        let select = match &self.last {
            None => true,
            Some((p, f)) => self.policy.is_keyframe(p, *f, pose, frame),
        };
        if select {
            self.last = Some((*pose, frame));
        }
        select
    }
}

/// Everything a session needs besides its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub rig: StereoRig,
    pub matcher: MatcherConfig,
    pub policy: KeyframePolicy,
    /// Bounded queue between driver and mapping worker.
    pub queue_capacity: usize,
    /// Lift every n-th pixel in both directions.
    pub subsample_stride: usize,
    pub disparity_floor: f64,
    pub culling: CullingMode,
    /// Drop keyframes instead of blocking when the queue is full. Output then
    /// depends on timing.
    pub drop_when_busy: bool,
    /// Also write each keyframe's new points to `map_kf_<index>.ply`.
    pub export_chunks: bool,
}

impl SessionConfig {
    pub fn new(rig: StereoRig) -> Self {
        Self {
            rig,
            matcher: MatcherConfig::default(),
            policy: KeyframePolicy::default(),
            queue_capacity: 2,
            subsample_stride: 2,
            disparity_floor: DEFAULT_DISPARITY_FLOOR,
            culling: CullingMode::Literal,
            drop_when_busy: false,
            export_chunks: false,
        }
    }

    pub fn from_config(file: &ConfigFile) -> Result<Self> {
        let mut cfg = Self::new(file.rig()?);
        file.apply_matcher(&mut cfg.matcher)?;
        if let Some(v) = file.get("translation_threshold")? {
            cfg.policy.translation_threshold = v;
        }
        if let Some(v) = file.get("rotation_threshold")? {
            cfg.policy.rotation_threshold_deg = v;
        }
        if let Some(v) = file.get("max_frame_gap")? {
            cfg.policy.max_frame_gap = v;
        }
        if let Some(v) = file.get("worker_queue_capacity")? {
            cfg.queue_capacity = v;
        }
        if let Some(v) = file.get("subsample_stride")? {
            cfg.subsample_stride = v;
        }
        if let Some(v) = file.get("disparity_floor")? {
            cfg.disparity_floor = v;
        }
        if file.get_bool("depth_gated_culling")? == Some(true) {
            cfg.culling = CullingMode::DepthGated {
                gate: file.get("depth_gate")?.unwrap_or(2.0),
            };
        }
        if let Some(v) = file.get_bool("drop_when_busy")? {
            cfg.drop_when_busy = v;
        }
        if let Some(v) = file.get_bool("export_chunks")? {
            cfg.export_chunks = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.matcher.validate()?;
        self.policy.validate()?;
        if self.queue_capacity == 0 {
            return Err(Error::InvalidConfig(
                "worker_queue_capacity must be >= 1".into(),
            ));
        }
        if self.subsample_stride == 0 {
            return Err(Error::InvalidConfig("subsample_stride must be >= 1".into()));
        }
        if !(self.disparity_floor > 0.0) {
            return Err(Error::InvalidConfig(
                "disparity_floor must be positive".into(),
            ));
        }
        if let CullingMode::DepthGated { gate } = self.culling {
            if !(gate >= 0.0) {
                return Err(Error::InvalidConfig(
                    "depth gate must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Random-access frames with known poses.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Camera-to-world pose of frame `index`.
    fn pose(&self, index: usize) -> Pose;

    fn load(&self, index: usize) -> Result<RectifiedStereoPair>;
}

/// In-memory frames, mainly for tests and bindings.
#[derive(Debug, Clone, Default)]
pub struct MemoryFrames {
    pub frames: Vec<(Pose, RectifiedStereoPair)>,
}

impl FrameSource for MemoryFrames {
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn pose(&self, index: usize) -> Pose {
        self.frames[index].0
    }
    fn load(&self, index: usize) -> Result<RectifiedStereoPair> {
        Ok(self.frames[index].1.clone())
    }
}

/// Image files on disk, paired by position, with poses already aligned.
#[derive(Debug, Clone)]
pub struct FileFrames {
    pub left: Vec<PathBuf>,
    pub right: Vec<PathBuf>,
    pub poses: Vec<Pose>,
}

impl FileFrames {
    /// Expands the glob patterns, reads the trajectory and aligns it.
    ///
    /// Poses pair with images by index when the counts agree. Otherwise the
    /// image file stems are read as timestamps in seconds and each must be
    /// within [`ALIGNMENT_TOLERANCE_S`] of a pose.
    pub fn open(left_pattern: &str, right_pattern: &str, trajectory: &Path) -> Result<Self> {
        let left = expand(left_pattern)?;
        let right = expand(right_pattern)?;
        if left.len() != right.len() {
            return Err(Error::Alignment(format!(
                "{} left images but {} right images",
                left.len(),
                right.len()
            )));
        }
        let stamped = read_tum(trajectory)?;
        let poses = align(&left, &stamped)?;
        Ok(Self { left, right, poses })
    }

    /// Checks that every image header matches the rig before any work starts.
    pub fn probe(&self, rig: &StereoRig) -> Result<()> {
        for p in self.left.iter().chain(&self.right) {
            let (w, h) = probe_dimensions(p)?;
            if (w, h) != (rig.width(), rig.height()) {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {w}x{h}, rig expects {}x{}",
                    p.display(),
                    rig.width(),
                    rig.height()
                )));
            }
        }
        Ok(())
    }
}

impl FrameSource for FileFrames {
    fn len(&self) -> usize {
        self.left.len()
    }
    fn pose(&self, index: usize) -> Pose {
        self.poses[index]
    }
    fn load(&self, index: usize) -> Result<RectifiedStereoPair> {
        let left = load_rgb(&self.left[index])?;
        let right = load_rgb(&self.right[index])?;
        RectifiedStereoPair::from_color(left, &right)
    }
}

fn expand(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern)
        .map_err(|e| Error::InvalidConfig(format!("bad pattern `{pattern}`: {e}")))?;
    let mut out: Vec<PathBuf> = paths
        .filter_map(|p| p.ok())
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::NoFiles(pattern.to_string()));
    }
    Ok(out)
}

fn align(images: &[PathBuf], poses: &[StampedPose]) -> Result<Vec<Pose>> {
    if poses.len() == images.len() {
        return Ok(poses.iter().map(|p| p.pose).collect());
    }
    images
        .iter()
        .map(|img| {
            let stem = img.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            let t: f64 = stem.parse().map_err(|_| {
                Error::Alignment(format!(
                    "{} poses for {} images, and `{stem}` is not a timestamp",
                    poses.len(),
                    images.len()
                ))
            })?;
            poses
                .iter()
                .min_by(|a, b| (a.timestamp - t).abs().total_cmp(&(b.timestamp - t).abs()))
                .filter(|p| (p.timestamp - t).abs() <= ALIGNMENT_TOLERANCE_S)
                .map(|p| p.pose)
                .ok_or_else(|| {
                    Error::Alignment(format!("no pose within 10 ms of image timestamp {t}"))
                })
        })
        .collect()
}

/// Stage durations of one processed keyframe, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeTiming {
    pub kf_index: u64,
    pub match_ms: f64,
    pub lift_ms: f64,
    pub mosaic_ms: f64,
    pub export_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimingReport {
    pub records: Vec<KeyframeTiming>,
    /// Frames the driver went through.
    pub frames: usize,
    pub elapsed_s: f64,
}

pub const TIMING_CSV_HEADER: &str = "kf_index,match_ms,lift_ms,mosaic_ms,export_ms";

impl TimingReport {
    fn column(&self, f: impl Fn(&KeyframeTiming) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    fn columns(&self) -> [Vec<f64>; 4] {
        [
            self.column(|r| r.match_ms),
            self.column(|r| r.lift_ms),
            self.column(|r| r.mosaic_ms),
            self.column(|r| r.export_ms),
        ]
    }

    /// Means of match, lift, mosaic and export; zeros when empty.
    pub fn means(&self) -> [f64; 4] {
        self.columns().map(|c| mean(&c))
    }

    pub fn medians(&self) -> [f64; 4] {
        self.columns().map(|c| median(&c).unwrap_or(0.0))
    }

    /// Frames per second of wall time; zero for an empty session.
    pub fn hz(&self) -> f64 {
        if self.frames == 0 || !(self.elapsed_s > 0.0) {
            0.0
        } else {
            self.frames as f64 / self.elapsed_s
        }
    }

    pub fn keyframe_hz(&self) -> f64 {
        if self.records.is_empty() || !(self.elapsed_s > 0.0) {
            0.0
        } else {
            self.records.len() as f64 / self.elapsed_s
        }
    }

    /// One row per keyframe and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TIMING_CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.kf_index, r.match_ms, r.lift_ms, r.mosaic_ms, r.export_ms
            );
        }
        let m = self.means();
        let _ = writeln!(s, "mean,{},{},{},{}", m[0], m[1], m[2], m[3]);
        s
    }

    pub fn summary(&self) -> String {
        let (m, md) = (self.means(), self.medians());
        let mut s = String::new();
        let _ = writeln!(s, "frames: {}", self.frames);
        let _ = writeln!(s, "keyframes processed: {}", self.records.len());
        let _ = writeln!(s, "elapsed_s: {:.3}", self.elapsed_s);
        let _ = writeln!(s, "throughput_hz: {:.3}", self.hz());
        let _ = writeln!(s, "keyframe_hz: {:.3}", self.keyframe_hz());
        for (k, name) in ["match", "lift", "mosaic", "export"].iter().enumerate() {
            let _ = writeln!(s, "{name}_ms: mean {:.3} median {:.3}", m[k], md[k]);
        }
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Result of a session.
#[derive(Debug, Clone)]
pub struct SessionReport {
    pub map: GlobalMap,
    pub timing: TimingReport,
    pub keyframes_selected: usize,
    pub keyframes_dropped: usize,
    pub keyframes_skipped: usize,
    /// Files written, if an output directory was given.
    pub outputs: Vec<PathBuf>,
}

struct Job {
    index: u64,
    pose: Pose,
    pair: RectifiedStereoPair,
}

struct WorkerResult {
    map: GlobalMap,
    records: Vec<KeyframeTiming>,
    skipped: usize,
    chunks: Vec<PathBuf>,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Match, lift and fuse one keyframe. `Ok(None)` means nothing to add.
fn process_keyframe(
    job: &Job,
    cfg: &SessionConfig,
    map: &mut GlobalMap,
    chunk_dir: Option<&Path>,
) -> Result<Option<(KeyframeTiming, Option<PathBuf>)>> {
    let t = Instant::now();
    let field = match_pair(&job.pair, &cfg.matcher)?;
    let match_ms = ms_since(t);
    if field.valid_count() == 0 {
        log::warn!("keyframe {}: no valid disparities, skipped", job.index);
        return Ok(None);
    }

    let t = Instant::now();
    let kf = KeyframeRecord {
        index: job.index,
        pose: job.pose,
        depth: DepthField::from_disparity(&cfg.rig, &field, cfg.disparity_floor),
        color: job.pair.left_color.clone(),
        disparity: Some(field),
    };
    let points = lift_keyframe(&kf, &cfg.rig, cfg.subsample_stride)?;
    let lift_ms = ms_since(t);

    let t = Instant::now();
    let chunk: Option<Vec<MapPoint>> = chunk_dir.map(|_| points.clone());
    mosaic_update(map, &kf, points, &cfg.rig, cfg.culling)?;
    let mosaic_ms = ms_since(t);

    let t = Instant::now();
    let chunk_path = match (chunk_dir, chunk) {
        (Some(dir), Some(pts)) => {
            let path = dir.join(format!("map_kf_{}.ply", job.index));
            write_ply_file(&path, pts.iter().map(MapPoint::to_vertex))?;
            Some(path)
        }
        _ => None,
    };
    let export_ms = ms_since(t);
    Ok(Some((
        KeyframeTiming {
            kf_index: job.index,
            match_ms,
            lift_ms,
            mosaic_ms,
            export_ms,
        },
        chunk_path,
    )))
}

/// Runs a session over any frame source. With `out_dir`, writes `map.ply`,
/// `timing.csv`, `timing.txt` and optional per-keyframe chunks there.
pub fn run_frames<S: FrameSource>(
    source: &S,
    cfg: &SessionConfig,
    out_dir: Option<&Path>,
) -> Result<SessionReport> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let chunk_dir = if cfg.export_chunks { out_dir } else { None };
    let start = Instant::now();
    let (tx, rx) = sync_channel::<Job>(cfg.queue_capacity);
    let mut selected = 0usize;
    let mut dropped = 0usize;
    let mut load_failures = 0usize;

    let worker_out = std::thread::scope(|scope| -> Result<WorkerResult> {
        let worker = scope.spawn(move || {
            let mut res = WorkerResult {
                map: GlobalMap::new(),
                records: Vec::new(),
                skipped: 0,
                chunks: Vec::new(),
            };
            for job in rx {
                match process_keyframe(&job, cfg, &mut res.map, chunk_dir) {
                    Ok(Some((timing, chunk))) => {
                        res.records.push(timing);
                        res.chunks.extend(chunk);
                    }
                    Ok(None) => res.skipped += 1,
                    Err(e) if e.is_data_error() => {
                        log::warn!("keyframe {}: {e}; skipped", job.index);
                        res.skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(res)
        });

        let mut selector = KeyframeSelector::new(cfg.policy);
        for frame in 0..source.len() {
            let pose = source.pose(frame);
            if !selector.observe(frame, &pose) {
                continue;
            }
            selected += 1;
            let pair = match source.load(frame) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("frame {frame}: {e}; skipped");
                    load_failures += 1;
                    continue;
                }
            };
            let job = Job {
                index: frame as u64,
                pose,
                pair,
            };
            let sent = if cfg.drop_when_busy {
                match tx.try_send(job) {
                    Ok(()) => true,
                    Err(TrySendError::Full(job)) => {
                        log::warn!("mapping worker busy, keyframe {} dropped", job.index);
                        dropped += 1;
                        true
                    }
                    Err(TrySendError::Disconnected(_)) => false,
                }
            } else {
                tx.send(job).is_ok()
            };
            if !sent {
                // the worker has stopped; its error is reported below
                break;
            }
        }
        drop(tx);
        worker
            .join()
            .map_err(|_| Error::Worker("mapping worker panicked".into()))?
    })?;

    let timing = TimingReport {
        records: worker_out.records,
        frames: source.len(),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    let mut outputs = worker_out.chunks;
    if let Some(dir) = out_dir {
        let map_path = dir.join("map.ply");
        worker_out.map.export_ply(&map_path)?;
        outputs.push(map_path);
        outputs.extend(report_timing(&timing, dir)?);
    }
    Ok(SessionReport {
        map: worker_out.map,
        timing,
        keyframes_selected: selected,
        keyframes_dropped: dropped,
        keyframes_skipped: worker_out.skipped + load_failures,
        outputs,
    })
}

/// Writes `timing.csv` and `timing.txt` into `dir` and returns both paths.
pub fn report_timing(timing: &TimingReport, dir: &Path) -> Result<[PathBuf; 2]> {
    let csv = dir.join("timing.csv");
    std::fs::write(&csv, timing.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let txt = dir.join("timing.txt");
    std::fs::write(&txt, timing.summary()).map_err(|e| Error::io(&txt, e))?;
    Ok([csv, txt])
}

/// File-based session inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionInputs {
    pub left_pattern: String,
    pub right_pattern: String,
    pub trajectory: PathBuf,
    pub out_dir: PathBuf,
}

/// Opens, aligns and probes the inputs, then runs the session.
pub fn run_session(inputs: &SessionInputs, cfg: &SessionConfig) -> Result<SessionReport> {
    cfg.validate()?;
    let frames = FileFrames::open(
        &inputs.left_pattern,
        &inputs.right_pattern,
        &inputs.trajectory,
    )?;
    frames.probe(&cfg.rig)?;
    run_frames(&frames, cfg, Some(&inputs.out_dir))
}
