//! Bayesian dense inverse search stereo matcher.
//!
//! For each pyramid level, coarse to fine:
//!
//! 1. Lay a grid of overlapping square patches over the left image.
//! 2. Align every patch to the right image along its row with the
//!    inverse-compositional Gauss-Newton update (template gradient and
//!    Hessian fixed per patch).
//! 3. Score the converged disparity by a softmax over a small window of
//!    perturbed disparities.
//! 4. Fuse the overlapping patches pixel-wise, weighting each by its score
//!    times a Gaussian of the distance to the patch center.
//!
//! Each level is seeded from the previous level's fused field, upsampled.
//! Patch searches run in parallel; accumulation is sequential in grid order
//! so the output is bit-reproducible.

mod fusion;
mod pyramid;
mod search;

use nalgebra::Vector2;
use rayon::prelude::*;

pub use fusion::{FieldAccumulator, KernelTable};
pub use pyramid::{build_pyramid, downsample, minimum_size, Pyramid};
pub use search::{
    inverse_search_patch, scrf_probability, scrf_softmax, PatchSearch, PatchTemplate, ScrfOutcome,
    CONVERGENCE_EPS, DEGENERATE_HESSIAN, SIGMA_R_FLOOR,
};

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

/// Matcher hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherConfig {
    /// Square patch side in pixels.
    pub patch_size: usize,
    pub patch_stride: usize,
    pub pyramid_levels: usize,
    pub max_iterations_per_patch: usize,
    /// Disparity perturbations scored by the softmax; must contain 0.
    pub candidate_offsets: Vec<f64>,
    /// Spatial standard deviation of the fusion kernel, in pixels.
    pub sigma_s: f64,
    pub probability_threshold: f64,
    /// Minimum fraction of a patch that must sample inside both images.
    pub min_valid_patch_ratio: f64,
    /// Upper disparity bound at full resolution; `None` means width / 4.
    pub max_disparity: Option<f64>,
    /// Seed the coarsest level by an integer SSD scan instead of zero.
    pub coarse_search: bool,
    /// Run patch searches on the rayon pool.
    pub parallel: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            patch_stride: 8,
            pyramid_levels: 4,
            max_iterations_per_patch: 12,
            candidate_offsets: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            sigma_s: 4.0,
            probability_threshold: 0.15,
            min_valid_patch_ratio: 0.75,
            max_disparity: None,
            coarse_search: true,
            parallel: true,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patch_size < 2 {
            return bad(format!("patch_size must be >= 2, got {}", self.patch_size));
        }
        if self.patch_stride == 0 {
            return bad("patch_stride must be >= 1".into());
        }
        if self.pyramid_levels == 0 {
            return bad("pyramid_levels must be >= 1".into());
        }
        if self.max_iterations_per_patch == 0 {
            return bad("max_iterations_per_patch must be >= 1".into());
        }
        let n = self.candidate_offsets.len();
        if n % 2 == 0 || !self.candidate_offsets.contains(&0.0) {
            return bad(format!(
                "candidate_offsets must have odd length and contain 0, got {:?}",
                self.candidate_offsets
            ));
        }
        if self.candidate_offsets.iter().any(|d| !d.is_finite()) {
            return bad("candidate_offsets must be finite".into());
        }
        if !(self.sigma_s > 0.0 && self.sigma_s.is_finite()) {
            return bad(format!("sigma_s must be positive, got {}", self.sigma_s));
        }
        if !(0.0..=1.0).contains(&self.probability_threshold) {
            return bad(format!(
                "probability_threshold must lie in [0, 1], got {}",
                self.probability_threshold
            ));
        }
        if !(self.min_valid_patch_ratio > 0.0 && self.min_valid_patch_ratio <= 1.0) {
            return bad(format!(
                "min_valid_patch_ratio must lie in (0, 1], got {}",
                self.min_valid_patch_ratio
            ));
        }
        if let Some(m) = self.max_disparity {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("max_disparity must be positive, got {m}"));
            }
        }
        Ok(())
    }

    pub(crate) fn zero_offset_index(&self) -> usize {
        self.candidate_offsets
            .iter()
            .position(|&d| d == 0.0)
            .expect("validated: offsets contain 0")
    }

    /// Full-resolution disparity bound for an image of the given width.
    pub fn max_disparity_for(&self, width: usize) -> f64 {
        self.max_disparity.unwrap_or(width as f64 / 4.0)
    }
}

/// Rectified grayscale pair with an optional left color image for texturing.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedStereoPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub left_color: Option<RgbImage>,
}

impl RectifiedStereoPair {
    pub fn new(left: GrayImage, right: GrayImage, left_color: Option<RgbImage>) -> Result<Self> {
        if left.width() != right.width() || left.height() != right.height() {
            return Err(Error::DimensionMismatch(format!(
                "left {}x{} vs right {}x{}",
                left.width(),
                left.height(),
                right.width(),
                right.height()
            )));
        }
        if let Some(c) = &left_color {
            if c.width() != left.width() || c.height() != left.height() {
                return Err(Error::DimensionMismatch(
                    "left color differs from left gray".into(),
                ));
            }
        }
        Ok(Self {
            left,
            right,
            left_color,
        })
    }

    /// Builds the pair from two color images; grayscale is Rec. 601 luma.
    pub fn from_color(left: RgbImage, right: &RgbImage) -> Result<Self> {
        Self::new(left.to_gray(), right.to_gray(), Some(left))
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }

    /// Color for texturing: the left color image or the replicated gray.
    pub fn color(&self) -> RgbImage {
        self.left_color
            .clone()
            .unwrap_or_else(|| RgbImage::from_gray(&self.left))
    }
}

/// Per-pixel disparity with confidence and validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityField {
    width: usize,
    height: usize,
    disparity: Vec<f64>,
    confidence: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityField {
    pub fn from_parts(
        width: usize,
        height: usize,
        disparity: Vec<f64>,
        confidence: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if disparity.len() != n || confidence.len() != n || valid.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "disparity field buffers do not match {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            disparity,
            confidence,
            valid,
        })
    }

    /// Every finite value is valid with confidence 1; used for ground truth.
    pub fn from_values(width: usize, height: usize, disparity: Vec<f64>) -> Result<Self> {
        let valid: Vec<bool> = disparity.iter().map(|d| d.is_finite()).collect();
        let confidence = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let disparity = disparity
            .into_iter()
            .map(|d| if d.is_finite() { d } else { 0.0 })
            .collect();
        Self::from_parts(width, height, disparity, confidence, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn disparity(&self) -> &[f64] {
        &self.disparity
    }
    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.disparity[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / (self.width * self.height).max(1) as f64
    }
}

/// Converged state of one patch at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEstimate {
    /// Geometric patch center in level pixels.
    pub center: Vector2<f64>,
    pub disparity: f64,
    pub scrf_probability: f64,
    /// Mean squared residual at the converged disparity.
    pub residual_ssd: f64,
    pub sigma_r: f64,
    pub valid: bool,
    pub degenerate: bool,
    pub coverage: f64,
    /// Softmax over the candidate offsets, in `candidate_offsets` order.
    pub candidate_probabilities: Vec<f64>,
}

impl PatchEstimate {
    /// Top-left cell of the patch.
    pub fn origin(&self, patch_size: usize) -> (isize, isize) {
        let half = (patch_size as f64 - 1.0) / 2.0;
        (
            (self.center.x - half).round() as isize,
            (self.center.y - half).round() as isize,
        )
    }
}

/// Patch counts for one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelStats {
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub patches: usize,
    pub valid_patches: usize,
    pub degenerate_patches: usize,
}

/// Full matcher output: the finest fused field plus diagnostics.
#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub field: DisparityField,
    /// Finest-level patches in grid order.
    pub patches: Vec<PatchEstimate>,
    /// Per-level statistics, coarsest first.
    pub levels: Vec<LevelStats>,
}

/// Runs the matcher and returns the finest-level fused disparity field.
pub fn match_pair(pair: &RectifiedStereoPair, cfg: &MatcherConfig) -> Result<DisparityField> {
    Ok(match_pair_detailed(pair, cfg)?.field)
}

/// Runs the matcher and keeps the finest-level patch estimates.
pub fn match_pair_detailed(pair: &RectifiedStereoPair, cfg: &MatcherConfig) -> Result<MatchOutput> {
    let pyramid = build_pyramid(pair, cfg)?;
    let kernel = KernelTable::new(cfg.patch_size, cfg.sigma_s);
    let full_max = cfg.max_disparity_for(pair.width());

    let mut seed: Option<(FieldAccumulator, Vec<f64>)> = None;
    let mut levels = Vec::with_capacity(pyramid.len());
    for (level, images) in pyramid.coarse_to_fine() {
        let scale = (1usize << level) as f64;
        let max_disparity = full_max / scale;
        let origins = patch_grid(images.width(), images.height(), cfg);

        let run = |&(x0, y0): &(usize, usize)| {
            let template =
                PatchTemplate::extract(&images.left, (x0 as isize, y0 as isize), cfg.patch_size);
            let init = match &seed {
                Some((coarse, values)) => seed_at(coarse, values, template.center()),
                None if cfg.coarse_search => template
                    .integer_scan(&images.right, max_disparity, cfg.min_valid_patch_ratio)
                    .unwrap_or(0.0),
                None => 0.0,
            };
            estimate_patch(&template, &images.right, init, max_disparity, cfg)
        };
        let estimates: Vec<PatchEstimate> = if cfg.parallel {
            origins.par_iter().map(run).collect()
        } else {
            origins.iter().map(run).collect()
        };

        let mut acc = FieldAccumulator::new(images.width(), images.height());
        for e in &estimates {
            acc.accumulate(e, &kernel);
        }
        levels.push(LevelStats {
            level,
            width: images.width(),
            height: images.height(),
            patches: estimates.len(),
            valid_patches: estimates.iter().filter(|e| e.valid).count(),
            degenerate_patches: estimates.iter().filter(|e| e.degenerate).count(),
        });

        if level == 0 {
            let field = acc.finalize(cfg.probability_threshold, max_disparity);
            return Ok(MatchOutput {
                field,
                patches: estimates,
                levels,
            });
        }
        let values = acc.seed_field();
        seed = Some((acc, values));
    }
    unreachable!("pyramid has at least one level")
}

/// Patch origins covering the image: a regular grid plus one patch flush
/// with the far edge when the grid leaves a gap.
pub fn patch_grid(width: usize, height: usize, cfg: &MatcherConfig) -> Vec<(usize, usize)> {
    let xs = axis_positions(width, cfg.patch_size, cfg.patch_stride);
    let ys = axis_positions(height, cfg.patch_size, cfg.patch_stride);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect()
}

fn axis_positions(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if len < size {
        return Vec::new();
    }
    let mut out: Vec<usize> = (0..=len - size).step_by(stride).collect();
    if *out.last().expect("non-empty") + size < len {
        out.push(len - size);
    }
    out
}

/// Seed disparity at a fine-level point from the coarser level's field.
fn seed_at(coarse: &FieldAccumulator, values: &[f64], fine: Vector2<f64>) -> f64 {
    // fine pixel x covers coarse cell (x - 0.5) / 2 under 2x2 box averaging
    let (w, h) = (coarse.width(), coarse.height());
    let x = ((fine.x - 0.5) / 2.0).clamp(0.0, (w - 1) as f64);
    let y = ((fine.y - 0.5) / 2.0).clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let v = |xx: usize, yy: usize| values[yy * w + xx];
    let top = v(x0, y0) * (1.0 - ax) + v(x1, y0) * ax;
    let bottom = v(x0, y1) * (1.0 - ax) + v(x1, y1) * ax;
    2.0 * (top * (1.0 - ay) + bottom * ay)
}

fn estimate_patch(
    template: &PatchTemplate,
    right: &GrayImage,
    init: f64,
    max_disparity: f64,
    cfg: &MatcherConfig,
) -> PatchEstimate {
    let search = template.search(right, init, max_disparity, cfg);
    let mut estimate = PatchEstimate {
        center: template.center(),
        disparity: search.disparity,
        scrf_probability: 0.0,
        residual_ssd: search.residual,
        sigma_r: 0.0,
        valid: false,
        degenerate: search.degenerate,
        coverage: search.coverage,
        candidate_probabilities: Vec::new(),
    };
    if !search.is_usable(cfg, max_disparity) {
        return estimate;
    }
    if let Some(scrf) = search::template_scrf(template, right, search.disparity, cfg) {
        estimate.scrf_probability = scrf.probability;
        estimate.sigma_r = scrf.sigma_r;
        estimate.candidate_probabilities = scrf.candidate_probabilities;
        estimate.valid = true;
    }
    estimate
}
