//! End-to-end sessions on small synthetic sequences.

use std::fs;

use densemap_core::mosaic::{lift_keyframe, KeyframeRecord};
use densemap_core::pipeline::{
    report_timing, run_frames, run_session, MemoryFrames, SessionConfig, SessionInputs,
    TIMING_CSV_HEADER,
};
use densemap_core::ply::read_ply_file;
use densemap_core::synth::{render_pair, write_sequence, SceneSpec};
use densemap_core::trajectory::{read_tum, write_tum};
use densemap_core::{match_pair, DepthField, Error, StereoRig};

fn small_rig() -> StereoRig {
    StereoRig::centered(112.5, 5.0, 160, 120).unwrap()
}

fn small_config() -> SessionConfig {
    let mut cfg = SessionConfig::new(small_rig());
    cfg.matcher.pyramid_levels = 2;
    cfg
}

fn plane_frames(n: usize) -> (SceneSpec, MemoryFrames) {
    let spec = SceneSpec::preset_with_rig("plane", small_rig(), n, 3).unwrap();
    let frames = (0..n)
        .map(|k| {
            let f = render_pair(&spec, k).unwrap();
            (f.pose, f.pair)
        })
        .collect();
    (spec, MemoryFrames { frames })
}

#[test]
fn forced_keyframes_every_ten_frames() {
    let (_, frames) = plane_frames(100);
    let mut cfg = small_config();
    cfg.policy.translation_threshold = 1e9;
    cfg.policy.rotation_threshold_deg = 180.0;
    cfg.policy.max_frame_gap = 10;
    let dir = tempfile::tempdir().unwrap();
    let report = run_frames(&frames, &cfg, Some(dir.path())).unwrap();
    assert_eq!(report.keyframes_selected, 10);
    assert_eq!(report.keyframes_dropped, 0);
    assert_eq!(report.timing.records.len(), 10);
    let indices: Vec<u64> = report.timing.records.iter().map(|r| r.kf_index).collect();
    assert_eq!(indices, (0..10).map(|k| k * 10).collect::<Vec<u64>>());
    assert!(!report.map.is_empty());

    let csv = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], TIMING_CSV_HEADER);
    assert_eq!(lines.len(), 12);
    assert!(lines[11].starts_with("mean,"));

    // stage means recomputed from the rows match the summary row
    let rows: Vec<Vec<f64>> = lines[1..11]
        .iter()
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let summary: Vec<f64> = lines[11]
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    for stage in 0..4 {
        let m = rows.iter().map(|r| r[stage]).sum::<f64>() / rows.len() as f64;
        assert!(
            (m - summary[stage]).abs() <= 1e-9,
            "stage {stage}: {m} vs {}",
            summary[stage]
        );
    }
    let total_ms: f64 = rows.iter().flatten().sum();
    assert!(total_ms <= report.timing.elapsed_s * 1e3 + 1e-6);

    let ply = read_ply_file(&dir.path().join("map.ply")).unwrap();
    assert_eq!(ply.len(), report.map.len());
}

#[test]
fn single_frame_map_equals_its_cloud() {
    let (spec, frames) = plane_frames(1);
    let cfg = small_config();
    let report = run_frames(&frames, &cfg, None).unwrap();
    assert_eq!(report.keyframes_selected, 1);

    let (pose, pair) = &frames.frames[0];
    let field = match_pair(pair, &cfg.matcher).unwrap();
    let kf = KeyframeRecord {
        index: 0,
        pose: *pose,
        depth: DepthField::from_disparity(&spec.rig, &field, cfg.disparity_floor),
        color: pair.left_color.clone(),
        disparity: None,
    };
    let cloud = lift_keyframe(&kf, &spec.rig, cfg.subsample_stride).unwrap();
    assert_eq!(report.map.points(), &cloud[..]);
}

#[test]
fn empty_session_reports_zero_rate() {
    let frames = MemoryFrames::default();
    let dir = tempfile::tempdir().unwrap();
    let report = run_frames(&frames, &small_config(), Some(dir.path())).unwrap();
    assert_eq!(report.timing.hz(), 0.0);
    assert!(report.map.is_empty());
    let csv = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn report_timing_writes_both_files() {
    let (_, frames) = plane_frames(3);
    let report = run_frames(&frames, &small_config(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let [csv, txt] = report_timing(&report.timing, dir.path()).unwrap();
    assert_eq!(fs::read_to_string(csv).unwrap(), report.timing.to_csv());
    assert!(fs::read_to_string(txt).unwrap().contains("throughput_hz"));
}

#[test]
fn queue_of_one_blocks_instead_of_dropping() {
    let (_, frames) = plane_frames(6);
    let mut cfg = small_config();
    cfg.queue_capacity = 1;
    cfg.policy.max_frame_gap = 1;
    let report = run_frames(&frames, &cfg, None).unwrap();
    assert_eq!(report.keyframes_selected, 6);
    assert_eq!(report.keyframes_dropped, 0);
    assert_eq!(report.timing.records.len(), 6);
}

#[test]
fn file_session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::preset_with_rig("plane", small_rig(), 4, 8).unwrap();
    let seq = write_sequence(&spec, &dir.path().join("seq")).unwrap();
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    let inputs = SessionInputs {
        left_pattern: format!("{}/left/*.png", seq.root.display()),
        right_pattern: format!("{}/right/*.png", seq.root.display()),
        trajectory: seq.trajectory.clone(),
        out_dir: out.clone(),
    };
    let report = run_session(&inputs, &small_config()).unwrap();
    assert_eq!(report.timing.frames, 4);
    assert!(report.keyframes_selected >= 1);
    assert!(out.join("map.ply").exists());
    assert!(out.join("timing.txt").exists());

    // one pose short of the image count: no name-based alignment possible
    let mut poses = read_tum(&seq.trajectory).unwrap();
    poses.pop();
    let short = dir.path().join("short.txt");
    write_tum(&poses, &short).unwrap();
    let err = run_session(
        &SessionInputs {
            trajectory: short,
            ..inputs
        },
        &small_config(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Alignment(_)), "{err}");
}
