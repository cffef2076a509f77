//! TUM trajectory files: `timestamp tx ty tz qx qy qz qw` per line,
//! camera-to-world, `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

pub fn parse_tum(text: &str) -> Result<Vec<StampedPose>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::TrajectoryParse {
            line: i + 1,
            message,
        };
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| err(format!("not a number: `{tok}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", values.len())));
        }
        let pose = Pose::from_quaternion(
            Vector3::new(values[1], values[2], values[3]),
            values[4],
            values[5],
            values[6],
            values[7],
        )
        .map_err(|e| err(e.to_string()))?;
        out.push(StampedPose {
            timestamp: values[0],
            pose,
        });
    }
    Ok(out)
}

pub fn read_tum(path: &Path) -> Result<Vec<StampedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum(&text)
}

pub fn format_tum(poses: &[StampedPose]) -> String {
    let mut s = String::new();
    for p in poses {
        let t = p.pose.translation();
        let [qx, qy, qz, qw] = p.pose.quaternion();
        let _ = writeln!(
            s,
            "{:.6} {:.9} {:.9} {:.9} {:.12} {:.12} {:.12} {:.12}",
            p.timestamp, t.x, t.y, t.z, qx, qy, qz, qw
        );
    }
    s
}

pub fn write_tum(poses: &[StampedPose], path: &Path) -> Result<()> {
    std::fs::write(path, format_tum(poses)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn parses_comments_and_blank_lines() {
        let text = "# timestamp tx ty tz qx qy qz qw\n\n0.0 1 2 3 0 0 0 1\n0.5 0 0 0 0 0 0.7071067811865476 0.7071067811865476 # yaw\n";
        let poses = parse_tum(text).unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[0].pose.translation(), &Vector3::new(1.0, 2.0, 3.0));
        assert!((poses[1].pose.rotation_angle_deg(&Pose::identity()) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn reports_line_numbers() {
        match parse_tum("0 0 0 0 0 0 0 1\n1 2 3\n") {
            Err(Error::TrajectoryParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_tum("0 a 0 0 0 0 0 1").is_err());
    }

    #[test]
    fn format_round_trip() {
        let poses: Vec<_> = (0..5)
            .map(|i| StampedPose {
                timestamp: i as f64 / 30.0,
                pose: Pose::from_rotation_translation(
                    Rotation3::from_euler_angles(0.1 * i as f64, -0.2, 0.3),
                    Vector3::new(i as f64, 2.0, -1.5),
                ),
            })
            .collect();
        let back = parse_tum(&format_tum(&poses)).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.timestamp - b.timestamp).abs() < 1e-6);
            assert!(a.pose.max_abs_diff(&b.pose) < 1e-8);
        }
    }
}
