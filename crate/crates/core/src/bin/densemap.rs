//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 input/data error, 3 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use densemap_core::config::ConfigFile;
use densemap_core::eval::{disparity_epe, map_to_surface_error, Reference};
use densemap_core::mosaic::{CullingMode, GlobalMap, MapPoint};
use densemap_core::pfm::{export_disparity, map_to_disparity, read_pfm};
use densemap_core::pipeline::{run_session, SessionConfig, SessionInputs};
use densemap_core::ply::read_ply_file;
use densemap_core::synth::{write_sequence, SceneSpec};
use densemap_core::{image, match_pair, Error, MatcherConfig, RectifiedStereoPair, StereoRig};

#[derive(Parser, Debug)]
#[command(
    name = "densemap",
    version,
    about = "Dense stereo mapping from rectified image sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Map a stereo sequence with known poses.
    Run {
        /// Glob pattern for left images, e.g. 'seq/left/*.png'.
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
        /// TUM trajectory (timestamp tx ty tz qx qy qz qw), camera-to-world.
        #[arg(long)]
        traj: PathBuf,
        /// key = value session file with the rig and optional overrides.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop keyframes when the mapping worker is busy (non-deterministic).
        #[arg(long)]
        drop_when_busy: bool,
        /// Keep points that lie behind the newly observed surface.
        #[arg(long)]
        depth_gated_culling: bool,
        /// Gate for depth-gated culling, in world units.
        #[arg(long, default_value_t = 2.0)]
        depth_gate: f64,
        /// Also write map_kf_<index>.ply per keyframe.
        #[arg(long)]
        export_chunks: bool,
    },
    /// Match a single rectified pair and write a disparity PFM.
    Match {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        /// Disparity output; `_conf.pfm` and `_mask.pgm` are written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Optional config file with matcher keys.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a map against a reference surface, or a disparity map against truth.
    Eval {
        #[arg(
            long,
            required_unless_present = "disparity",
            conflicts_with = "disparity"
        )]
        map: Option<PathBuf>,
        /// PLY point cloud, analytic spec (`plane:nx,ny,nz,d`, `sphere:cx,cy,cz,r`,
        /// `cylinder:px,py,pz,ax,ay,az,r`) or a text file holding one.
        #[arg(long, requires = "map")]
        reference: Option<String>,
        /// Errors at or above this distance are outliers.
        #[arg(long, default_value_t = 5.0)]
        cutoff: f64,
        /// Estimated disparity PFM.
        #[arg(long, requires = "truth")]
        disparity: Option<PathBuf>,
        /// Ground-truth disparity PFM.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// JSON report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic sequence with ground truth.
    Synth {
        #[arg(long, value_parser = ["plane", "slanted", "sphere", "tube"])]
        scene: String,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        /// Focal length in pixels.
        #[arg(long, default_value_t = 450.0)]
        focal: f64,
        #[arg(long, default_value_t = 5.0)]
        baseline: f64,
        /// Longest texture wavelength in world units.
        #[arg(long)]
        wavelength: Option<f64>,
        #[arg(long)]
        octaves: Option<usize>,
        #[arg(long)]
        contrast: Option<f64>,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            left,
            right,
            traj,
            config,
            out,
            drop_when_busy,
            depth_gated_culling,
            depth_gate,
            export_chunks,
        } => {
            let mut cfg = SessionConfig::from_config(&ConfigFile::load(&config)?)?;
            cfg.drop_when_busy |= drop_when_busy;
            cfg.export_chunks |= export_chunks;
            if depth_gated_culling {
                cfg.culling = CullingMode::DepthGated { gate: depth_gate };
            }
            let inputs = SessionInputs {
                left_pattern: left,
                right_pattern: right,
                trajectory: traj,
                out_dir: out.clone(),
            };
            let report = run_session(&inputs, &cfg)?;
            println!(
                "{} frames, {} keyframes selected, {} processed, {} skipped, {} dropped",
                report.timing.frames,
                report.keyframes_selected,
                report.timing.records.len(),
                report.keyframes_skipped,
                report.keyframes_dropped
            );
            println!(
                "{} map points -> {}",
                report.map.len(),
                out.join("map.ply").display()
            );
            print!("{}", report.timing.summary());
            Ok(())
        }
        Command::Match {
            left,
            right,
            out,
            config,
        } => {
            let mut matcher = MatcherConfig::default();
            if let Some(path) = config {
                ConfigFile::load(&path)?.apply_matcher(&mut matcher)?;
            }
            let l = image::load_rgb(&left)?;
            let r = image::load_rgb(&right)?;
            let pair = RectifiedStereoPair::from_color(l, &r)?;
            let field = match_pair(&pair, &matcher)?;
            let files = export_disparity(&field, &out)?;
            println!(
                "{}x{}: {:.1}% valid -> {}, {}, {}",
                field.width(),
                field.height(),
                100.0 * field.valid_fraction(),
                files.disparity.display(),
                files.confidence.display(),
                files.mask.display()
            );
            Ok(())
        }
        Command::Eval {
            map,
            reference,
            cutoff,
            disparity,
            truth,
            out,
        } => {
            let json = if let Some(map) = map {
                let reference =
                    reference.ok_or_else(|| Failure::Usage("--map requires --reference".into()))?;
                let reference = Reference::load(&reference)?;
                let points = read_ply_file(&map)?
                    .into_iter()
                    .map(|v| MapPoint {
                        position: v.position,
                        color: v.color,
                        source_keyframe: 0,
                    })
                    .collect();
                let report =
                    map_to_surface_error(&GlobalMap::from_points(points), &reference, cutoff)?;
                eprintln!(
                    "{} points, {} within cutoff, mean {:?}, median {:?}",
                    report.point_count, report.inlier_count, report.mean_mm, report.median_mm
                );
                serde_json::to_string_pretty(&report)
            } else {
                let (Some(d), Some(t)) = (disparity, truth) else {
                    return Err(Failure::Usage("--disparity requires --truth".into()));
                };
                let est = map_to_disparity(&read_pfm(&d)?)?;
                let gt = map_to_disparity(&read_pfm(&t)?)?;
                serde_json::to_string_pretty(&disparity_epe(&est, &gt)?)
            }
            .map_err(|e| Failure::Run(Error::Worker(format!("serializing report: {e}"))))?;
            match out {
                Some(path) => write_text(&path, &json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Synth {
            scene,
            frames,
            seed,
            out,
            width,
            height,
            focal,
            baseline,
            wavelength,
            octaves,
            contrast,
        } => {
            if frames == 0 {
                return Err(Failure::Usage("--frames must be at least 1".into()));
            }
            let rig = StereoRig::centered(focal, baseline, width, height)?;
            let mut spec = SceneSpec::preset_with_rig(&scene, rig, frames, seed)?;
            if let Some(w) = wavelength {
                spec.texture.wavelength = w;
            }
            if let Some(o) = octaves {
                spec.texture.octaves = o;
            }
            if let Some(c) = contrast {
                spec.texture.contrast = c;
            }
            let m = write_sequence(&spec, &out)?;
            println!(
                "{} frames of `{scene}` -> {} (reference in {})",
                m.left.len(),
                m.root.display(),
                m.reference.display()
            );
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, format!("{text}\n")).map_err(|e| Failure::Run(Error::io(path, e)))
}
