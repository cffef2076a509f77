//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown keys and repeated keys
//! are errors so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::StereoRig;
use crate::matcher::MatcherConfig;

/// Every key the session understands.
pub const KNOWN_KEYS: &[&str] = &[
    // rig
    "fx",
    "fy",
    "cx",
    "cy",
    "baseline",
    "width",
    "height",
    // matcher
    "patch_size",
    "patch_stride",
    "pyramid_levels",
    "max_iterations_per_patch",
    "candidate_offsets",
    "sigma_s",
    "probability_threshold",
    "min_valid_patch_ratio",
    "max_disparity",
    "coarse_search",
    "parallel",
    // keyframes
    "translation_threshold",
    "rotation_threshold",
    "max_frame_gap",
    // mapping
    "worker_queue_capacity",
    "subsample_stride",
    "disparity_floor",
    "depth_gated_culling",
    "depth_gate",
    "drop_when_busy",
    "export_chunks",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("unknown key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("missing value for `{key}`"),
                });
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line_no, value.to_string()))
            {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("`{key}` already set on line {first}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::ConfigParse {
                line: *line,
                message: format!("invalid value `{v}` for `{key}`"),
            }),
        }
    }

    /// Accepts `true/false`, `yes/no`, `on/off` and `1/0`.
    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(Some(true)),
                "false" | "no" | "off" | "0" => Ok(Some(false)),
                _ => Err(Error::ConfigParse {
                    line: *line,
                    message: format!("`{key}` expects a boolean, got `{v}`"),
                }),
            },
        }
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Builds the rig. Every rig key is required except `fy` (defaults to `fx`).
    pub fn rig(&self) -> Result<StereoRig> {
        let need = |key: &str| -> Result<f64> {
            self.get::<f64>(key)?
                .ok_or_else(|| Error::InvalidConfig(format!("missing required key `{key}`")))
        };
        let need_usize = |key: &str| -> Result<usize> {
            self.get::<usize>(key)?
                .ok_or_else(|| Error::InvalidConfig(format!("missing required key `{key}`")))
        };
        let fx = need("fx")?;
        let fy = self.get::<f64>("fy")?.unwrap_or(fx);
        StereoRig::new(
            fx,
            fy,
            need("cx")?,
            need("cy")?,
            need("baseline")?,
            need_usize("width")?,
            need_usize("height")?,
        )
    }

    /// Overrides the matcher fields present in the file.
    pub fn apply_matcher(&self, cfg: &mut MatcherConfig) -> Result<()> {
        self.set("patch_size", &mut cfg.patch_size)?;
        self.set("patch_stride", &mut cfg.patch_stride)?;
        self.set("pyramid_levels", &mut cfg.pyramid_levels)?;
        self.set(
            "max_iterations_per_patch",
            &mut cfg.max_iterations_per_patch,
        )?;
        self.set("sigma_s", &mut cfg.sigma_s)?;
        self.set("probability_threshold", &mut cfg.probability_threshold)?;
        self.set("min_valid_patch_ratio", &mut cfg.min_valid_patch_ratio)?;
        if let Some(b) = self.get_bool("coarse_search")? {
            cfg.coarse_search = b;
        }
        if let Some(b) = self.get_bool("parallel")? {
            cfg.parallel = b;
        }
        if let Some(raw) = self.raw("max_disparity") {
            cfg.max_disparity = if raw.eq_ignore_ascii_case("auto") {
                None
            } else {
                self.get::<f64>("max_disparity")?
            };
        }
        if let Some(raw) = self.raw("candidate_offsets") {
            let line = self.entries["candidate_offsets"].0;
            cfg.candidate_offsets = raw
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| Error::ConfigParse {
                        line,
                        message: format!("invalid offset `{}`", t.trim()),
                    })
                })
                .collect::<Result<_>>()?;
        }
        cfg.validate()
    }
}

/// Serializes a rig in the format [`ConfigFile::rig`] reads.
pub fn format_rig(rig: &StereoRig) -> String {
    format!(
        "fx = {}\nfy = {}\ncx = {}\ncy = {}\nbaseline = {}\nwidth = {}\nheight = {}\n",
        rig.fx(),
        rig.fy(),
        rig.cx(),
        rig.cy(),
        rig.baseline(),
        rig.width(),
        rig.height()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rig_and_matcher() {
        let text = "# rig\nfx = 450\ncx=319.5\ncy = 239.5 # centre\nbaseline = 5\nwidth = 640\nheight = 480\n\n\
                    patch_size = 8\ncandidate_offsets = -1, 0, 1\nmax_disparity = auto\ncoarse_search = off\n";
        let c = ConfigFile::parse(text).unwrap();
        let rig = c.rig().unwrap();
        assert_eq!(rig.fy(), 450.0);
        assert_eq!(rig.width(), 640);
        let mut m = MatcherConfig::default();
        c.apply_matcher(&mut m).unwrap();
        assert_eq!(m.patch_size, 8);
        assert_eq!(m.candidate_offsets, vec![-1.0, 0.0, 1.0]);
        assert_eq!(m.max_disparity, None);
        assert!(!m.coarse_search);
    }

    #[test]
    fn rig_round_trip() {
        let rig = StereoRig::new(400.5, 401.25, 300.0, 200.0, 4.5, 600, 400).unwrap();
        let back = ConfigFile::parse(&format_rig(&rig)).unwrap().rig().unwrap();
        assert_eq!(rig, back);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ConfigFile::parse("fx = 1\nfocal = 2\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 2, .. }), "{err}");
        let err = ConfigFile::parse("fx = 1\nfx = 2\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 2, .. }));
        let err = ConfigFile::parse("\n\nfx\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 3, .. }));
        let c = ConfigFile::parse("patch_size = big\n").unwrap();
        assert!(c.apply_matcher(&mut MatcherConfig::default()).is_err());
        let c = ConfigFile::parse("probability_threshold = 1.5\n").unwrap();
        assert!(matches!(
            c.apply_matcher(&mut MatcherConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
        assert!(ConfigFile::parse("fx = 1\n").unwrap().rig().is_err());
    }
}
