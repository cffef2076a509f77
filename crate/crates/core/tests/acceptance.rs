//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use densemap_core::eval::{disparity_epe, map_to_surface_error};
use densemap_core::matcher::{match_pair_detailed, scrf_softmax, KernelTable};
use densemap_core::mosaic::{
    is_culled_by, lift_keyframe, mosaic_update, CullingMode, GlobalMap, KeyframeRecord,
};
use densemap_core::pipeline::{
    run_frames, run_session, MemoryFrames, SessionConfig, SessionInputs,
};
use densemap_core::synth::{
    render_pair, write_sequence, CameraPath, Geometry, RenderedFrame, SceneSpec, TextureSpec,
};
use densemap_core::{
    backproject_point, exhaustive_disparity, match_pair, project_point, DepthField, MatcherConfig,
    OracleConfig, Pose, StereoRig,
};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Ten frames inside the tube, 4 mm apart along its axis, so every frame is a keyframe.
fn tube_frames() -> &'static (SceneSpec, Vec<RenderedFrame>) {
    static FRAMES: OnceLock<(SceneSpec, Vec<RenderedFrame>)> = OnceLock::new();
    FRAMES.get_or_init(|| {
        let mut spec = SceneSpec::preset("tube", 10, 11).expect("tube preset");
        spec.path = CameraPath::Dolly {
            step: Vector3::new(0.0, 4.0, 0.0),
        };
        let frames = (0..10)
            .map(|k| render_pair(&spec, k).expect("render"))
            .collect();
        (spec, frames)
    })
}

fn matcher_vs_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst = 1.0f64;
    let mut lines = Vec::new();
    for seed in 0..20u64 {
        let shift = (seed % 8 + 1) as f64;
        // depth 50, f 60: baseline chosen so f·b/z is the integer shift
        let rig = StereoRig::centered(60.0, shift * 50.0 / 60.0, 64, 64).unwrap();
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
        let frame = render_pair(&spec, 0).unwrap();
        let cfg = MatcherConfig {
            pyramid_levels: 3,
            max_disparity: Some(16.0),
            ..MatcherConfig::default()
        };
        let est = match_pair(&frame.pair, &cfg).unwrap();
        let oracle = exhaustive_disparity(
            &frame.pair,
            &OracleConfig {
                max_disparity: 10,
                ..OracleConfig::default()
            },
        )
        .unwrap();
        let (mut n, mut agree) = (0usize, 0usize);
        for i in 0..est.valid().len() {
            if est.valid()[i] && oracle.valid()[i] {
                n += 1;
                if (est.disparity()[i] - oracle.disparity()[i]).abs() <= 0.5 {
                    agree += 1;
                }
            }
        }
        let rate = if n == 0 { 0.0 } else { agree as f64 / n as f64 };
        worst = worst.min(rate);
        if rate < 0.95 {
            lines.push(format!("seed {seed} shift {shift}: {agree}/{n}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst >= 0.95 && secs < 10.0,
        format!(
            "worst pair agreement {:.2}%, {secs:.2} s total {}",
            100.0 * worst,
            lines.join("; ")
        ),
    )
}

fn plane_accuracy() -> Verdict {
    let cfg = MatcherConfig::default();
    let plane = render_pair(&SceneSpec::preset("plane", 1, 5).unwrap(), 0).unwrap();
    let p = disparity_epe(&match_pair(&plane.pair, &cfg).unwrap(), &plane.disparity).unwrap();
    let ramp = render_pair(&SceneSpec::preset("slanted", 1, 5).unwrap(), 0).unwrap();
    let r = disparity_epe(&match_pair(&ramp.pair, &cfg).unwrap(), &ramp.disparity).unwrap();
    let pm = p.mean_epe.unwrap_or(f64::INFINITY);
    let rm = r.mean_epe.unwrap_or(f64::INFINITY);
    check(
        pm <= 0.25 && p.coverage >= 0.90 && rm <= 0.5,
        format!(
            "plane mean EPE {pm:.4} px, coverage {:.1}%; ramp mean EPE {rm:.4} px",
            100.0 * p.coverage
        ),
    )
}

fn probability_sanity() -> Verdict {
    let frame = render_pair(&SceneSpec::preset("slanted", 1, 9).unwrap(), 0).unwrap();
    let out = match_pair_detailed(&frame.pair, &MatcherConfig::default()).unwrap();
    let mut worst: f64 = 0.0;
    let mut converged = 0;
    for p in out.patches.iter().filter(|p| p.valid) {
        converged += 1;
        let sum: f64 = p.candidate_probabilities.iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    // residuals {0, R, R, R, R}: σ_r² = 0.16 R², so R = 1 / (0.32 s²) makes the exponent ratio 1
    let s = 16.0;
    let r = 1.0 / (0.32 * s * s);
    let worked = scrf_softmax(&[0.0, r, r, r, r], 0, s).probability;
    let expected = 1.0 / (1.0 + 4.0 * (-1.0f64).exp());
    let err = (worked - expected).abs();
    check(
        converged > 0 && worst <= 1e-9 && err <= 1e-9,
        format!("{converged} converged patches, max |Σp - 1| = {worst:.1e}; worked example error {err:.1e}"),
    )
}

fn threshold_behavior() -> Verdict {
    let frame = render_pair(&SceneSpec::preset("sphere", 1, 4).unwrap(), 0).unwrap();
    let base = MatcherConfig::default();
    let out = match_pair_detailed(&frame.pair, &base).unwrap();
    let (w, h) = (frame.pair.width(), frame.pair.height());

    // best contributing probability per pixel, recomputed from the patch list
    let kernel = KernelTable::new(base.patch_size, base.sigma_s);
    let mut best = vec![0.0f64; w * h];
    for p in out
        .patches
        .iter()
        .filter(|p| p.valid && p.scrf_probability > 0.0)
    {
        let (ox, oy) = p.origin(kernel.size());
        for j in 0..kernel.size() as isize {
            for i in 0..kernel.size() as isize {
                let (x, y) = (ox + i, oy + j);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    let k = y as usize * w + x as usize;
                    best[k] = best[k].max(p.scrf_probability);
                }
            }
        }
    }
    let field = &out.field;
    let below_but_valid = (0..w * h)
        .filter(|&k| field.valid()[k] && best[k] < 0.15)
        .count();
    let below = best.iter().filter(|&&b| b < 0.15).count();

    let strict = match_pair(
        &frame.pair,
        &MatcherConfig {
            probability_threshold: 1.0,
            ..base.clone()
        },
    )
    .unwrap();
    let loose = match_pair(
        &frame.pair,
        &MatcherConfig {
            probability_threshold: 0.0,
            ..base.clone()
        },
    )
    .unwrap();
    let missing = (0..w * h)
        .filter(|&k| field.valid()[k] && !loose.valid()[k])
        .count();
    check(
        below_but_valid == 0 && strict.valid_count() == 0 && missing == 0 && field.valid_count() > 0,
        format!(
            "{below} pixels below 0.15, {below_but_valid} of them valid; threshold 1.0 -> {} valid; \
             threshold 0 -> {} valid vs {} at 0.15, {missing} lost",
            strict.valid_count(),
            loose.valid_count(),
            field.valid_count()
        ),
    )
}

fn culling_postcondition() -> Verdict {
    let (spec, frames) = tube_frames();
    let rig = spec.rig;
    let cfg = MatcherConfig::default();
    let mut map = GlobalMap::new();
    let mut violations = 0usize;
    let mut last = None;
    let mut sizes = Vec::new();
    for f in frames {
        let disparity = match_pair(&f.pair, &cfg).unwrap();
        let kf = KeyframeRecord {
            index: f.index as u64,
            pose: f.pose,
            depth: DepthField::from_disparity(&rig, &disparity, 0.1),
            color: f.pair.left_color.clone(),
            disparity: None,
        };
        let pts = lift_keyframe(&kf, &rig, 2).unwrap();
        mosaic_update(&mut map, &kf, pts, &rig, CullingMode::Literal).unwrap();
        violations += map
            .points()
            .iter()
            .filter(|p| {
                p.source_keyframe != kf.index && is_culled_by(p, &kf, &rig, CullingMode::Literal)
            })
            .count();
        sizes.push(map.len());
        last = Some(kf);
    }
    let mut kf = last.expect("ten keyframes");
    let before = map.len();
    kf.index += 1;
    let pts = lift_keyframe(&kf, &rig, 2).unwrap();
    mosaic_update(&mut map, &kf, pts, &rig, CullingMode::Literal).unwrap();
    check(
        violations == 0 && map.len() == before,
        format!(
            "{violations} retained points on valid pixels over 10 updates; map sizes {sizes:?}; \
             reprocess {before} -> {}",
            map.len()
        ),
    )
}

fn tube_run() -> &'static densemap_core::SessionReport {
    static REPORT: OnceLock<densemap_core::SessionReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let (spec, frames) = tube_frames();
        let source = MemoryFrames {
            frames: frames.iter().map(|f| (f.pose, f.pair.clone())).collect(),
        };
        run_frames(&source, &SessionConfig::new(spec.rig), None).expect("session")
    })
}

fn map_accuracy() -> Verdict {
    let (spec, frames) = tube_frames();
    let report = tube_run();
    let reference = spec.geometry.reference();
    let eval = map_to_surface_error(&report.map, &reference, 5.0).unwrap();
    let depths = frames[0].depth.depth();
    let (zmin, zmax) = depths
        .iter()
        .fold((f64::MAX, 0.0f64), |(a, b), &z| (a.min(z), b.max(z)));
    let mean = eval.mean_mm.unwrap_or(f64::INFINITY);
    let median = eval.median_mm.unwrap_or(f64::INFINITY);
    check(
        report.timing.records.len() == 10 && mean <= 0.5 && median <= 0.4,
        format!(
            "{} keyframes, {} points ({} outliers), mean {mean:.4} mm, median {median:.4} mm, depth {zmin:.1}-{zmax:.1} mm",
            report.timing.records.len(),
            eval.point_count,
            eval.outlier_count
        ),
    )
}

fn throughput() -> Verdict {
    let frame = render_pair(&SceneSpec::preset("plane", 1, 2).unwrap(), 0).unwrap();
    let cfg = MatcherConfig {
        parallel: false,
        ..MatcherConfig::default()
    };
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let t = Instant::now();
        let f = match_pair(&frame.pair, &cfg).unwrap();
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
        assert!(f.valid_count() > 0);
    }
    let records = &tube_run().timing.records;
    let worst_ratio = records
        .iter()
        .map(|r| (r.lift_ms + r.mosaic_ms) / r.match_ms)
        .fold(0.0, f64::max);
    let staged = !records.is_empty()
        && records
            .iter()
            .all(|r| r.match_ms > 0.0 && r.lift_ms > 0.0 && r.mosaic_ms > 0.0);
    check(
        best <= 150.0 && worst_ratio <= 0.5 && staged,
        format!(
            "single-thread match {best:.1} ms (best of 5); lift+mosaic at most {:.1}% of match over {} keyframes",
            100.0 * worst_ratio,
            records.len()
        ),
    )
}

fn determinism() -> Verdict {
    let rig = StereoRig::centered(225.0, 5.0, 320, 240).unwrap();
    let spec = SceneSpec::preset_with_rig("tube", rig, 8, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    write_sequence(&spec, &seq).unwrap();
    let mut cfg = SessionConfig::new(rig);
    cfg.policy.translation_threshold = 1.5;
    let mut maps = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("out{run}"));
        let inputs = SessionInputs {
            left_pattern: seq.join("left/*.png").to_string_lossy().into_owned(),
            right_pattern: seq.join("right/*.png").to_string_lossy().into_owned(),
            trajectory: seq.join("trajectory.txt"),
            out_dir: out.clone(),
        };
        run_session(&inputs, &cfg).unwrap();
        maps.push(std::fs::read(out.join("map.ply")).unwrap());
    }
    check(
        maps[0] == maps[1] && maps[0].len() > 300,
        format!(
            "map.ply {} and {} bytes, identical: {}",
            maps[0].len(),
            maps[1].len(),
            maps[0] == maps[1]
        ),
    )
}

fn geometry_round_trip() -> Verdict {
    let rig = StereoRig::new(450.0, 455.0, 321.3, 238.9, 5.0, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_px: f64 = 0.0;
    let mut worst_depth: f64 = 0.0;
    for _ in 0..10_000 {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.1..1.0),
        ));
        let pose = Pose::from_rotation_translation(
            Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0)),
            Vector3::new(
                rng.random_range(-500.0..500.0),
                rng.random_range(-500.0..500.0),
                rng.random_range(-500.0..500.0),
            ),
        );
        let px = Vector2::new(
            rng.random_range(-0.5..639.49),
            rng.random_range(-0.5..479.49),
        );
        let depth = rng.random_range(1.0..500.0);
        let world = backproject_point(&rig, &pose, px, depth).unwrap();
        let (back, z) = project_point(&rig, &pose, &world)
            .visible()
            .expect("in front");
        worst_px = worst_px.max((back - px).norm());
        worst_depth = worst_depth.max((z - depth).abs());
    }
    check(
        worst_px <= 1e-6 && worst_depth <= 1e-6,
        format!(
            "max pixel error {worst_px:.2e}, max depth error {worst_depth:.2e} over 10^4 samples"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("matcher agrees with exhaustive oracle", matcher_vs_oracle),
        ("plane and ramp disparity accuracy", plane_accuracy),
        ("probability model sanity", probability_sanity),
        ("probability threshold behavior", threshold_behavior),
        ("mosaic culling postcondition", culling_postcondition),
        ("tube map accuracy", map_accuracy),
        ("throughput and stage costs", throughput),
        ("deterministic session output", determinism),
        ("projection round trip", geometry_round_trip),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("PASS criterion {}: {name} ({d}) [{secs:.1}s]", n + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({d}) [{secs:.1}s]", n + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
