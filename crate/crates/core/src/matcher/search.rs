//! Per-patch inverse-compositional disparity search and the candidate-window
//! softmax confidence.
//!
//! Convention: a left pixel `x` with disparity `u` corresponds to the right
//! pixel `x - u` on the same row.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::MatcherConfig;

/// Convergence threshold on the per-iteration update, in pixels.
pub const CONVERGENCE_EPS: f64 = 0.01;
/// Template Hessians below this are treated as textureless.
pub const DEGENERATE_HESSIAN: f64 = 1e-8;
/// Floor for the residual standard deviation in the softmax.
pub const SIGMA_R_FLOOR: f64 = 1e-12;

/// One row of a patch template, clipped to the left image.
#[derive(Debug, Clone, Copy)]
struct TemplateRow {
    y: usize,
    x_start: usize,
    len: usize,
    offset: usize,
}

/// Left-image patch with its horizontal gradient, fixed across iterations.
#[derive(Debug, Clone)]
pub struct PatchTemplate {
    size: usize,
    origin: (isize, isize),
    rows: Vec<TemplateRow>,
    values: Vec<f32>,
    grads: Vec<f32>,
    hessian: f64,
}

impl PatchTemplate {
    /// Extracts the `size x size` patch whose top-left cell is `origin`.
    pub fn extract(left: &GrayImage, origin: (isize, isize), size: usize) -> Self {
        let (w, h) = (left.width() as isize, left.height() as isize);
        let mut rows = Vec::with_capacity(size);
        let mut values = Vec::with_capacity(size * size);
        let mut grads = Vec::with_capacity(size * size);
        let xa = origin.0.max(0);
        let xb = (origin.0 + size as isize).min(w);
        for j in 0..size as isize {
            let y = origin.1 + j;
            if y < 0 || y >= h || xb <= xa {
                continue;
            }
            let row = left.row(y as usize);
            let offset = values.len();
            for x in xa..xb {
                let xu = x as usize;
                values.push(row[xu]);
                // central difference, one-sided at the borders
                let g = if x == 0 {
                    row[1.min(row.len() - 1)] - row[0]
                } else if x == w - 1 {
                    row[xu] - row[xu - 1]
                } else {
                    0.5 * (row[xu + 1] - row[xu - 1])
                };
                grads.push(g);
            }
            rows.push(TemplateRow {
                y: y as usize,
                x_start: xa as usize,
                len: (xb - xa) as usize,
                offset,
            });
        }
        let hessian = grads.iter().map(|&g| (g as f64) * (g as f64)).sum();
        Self {
            size,
            origin,
            rows,
            values,
            grads,
            hessian,
        }
    }

    /// Patch whose geometric center is `center`; the origin is rounded to the grid.
    pub fn around(left: &GrayImage, center: Vector2<f64>, size: usize) -> Self {
        let half = (size as f64 - 1.0) / 2.0;
        let origin = (
            (center.x - half).round() as isize,
            (center.y - half).round() as isize,
        );
        Self::extract(left, origin, size)
    }

    pub fn center(&self) -> Vector2<f64> {
        let half = (self.size as f64 - 1.0) / 2.0;
        Vector2::new(self.origin.0 as f64 + half, self.origin.1 as f64 + half)
    }

    pub fn origin(&self) -> (isize, isize) {
        self.origin
    }

    /// Full-template Gauss-Newton Hessian `Σ g²`.
    pub fn hessian(&self) -> f64 {
        self.hessian
    }

    /// Fraction of the nominal patch area that lies on the left image.
    pub fn left_coverage(&self) -> f64 {
        self.values.len() as f64 / (self.size * self.size) as f64
    }

    fn area(&self) -> f64 {
        (self.size * self.size) as f64
    }

    /// Sweeps the template against the right image at disparity `u`, calling
    /// `f(template_index, right_value)` for each in-bounds pixel.
    #[inline]
    fn for_each_sample(&self, right: &GrayImage, u: f64, mut f: impl FnMut(usize, f32)) -> usize {
        let w = right.width() as isize;
        let shift = -u;
        let k = shift.floor();
        let a = (shift - k) as f32;
        let k = k as isize;
        let exact = a == 0.0;
        let mut count = 0;
        for row in &self.rows {
            let rrow = right.row(row.y);
            // valid x: x + k >= 0 and x + k (+1 when interpolating) <= w - 1
            let lo = (-k).max(row.x_start as isize);
            let hi_excl = if exact { w - k } else { w - 1 - k };
            let hi = hi_excl.min((row.x_start + row.len) as isize);
            if hi <= lo {
                continue;
            }
            let base = row.offset as isize - row.x_start as isize;
            if exact {
                for x in lo..hi {
                    f((base + x) as usize, rrow[(x + k) as usize]);
                }
            } else {
                let b = 1.0 - a;
                for x in lo..hi {
                    let xr = (x + k) as usize;
                    f((base + x) as usize, rrow[xr] * b + rrow[xr + 1] * a);
                }
            }
            count += (hi - lo) as usize;
        }
        count
    }

    /// Runs the inverse-compositional iteration from `init`.
    pub fn search(
        &self,
        right: &GrayImage,
        init: f64,
        max_disparity: f64,
        cfg: &MatcherConfig,
    ) -> PatchSearch {
        let degenerate = self.hessian < DEGENERATE_HESSIAN;
        let mut out = PatchSearch {
            disparity: init,
            residual: f64::NAN,
            coverage: 0.0,
            iterations: 0,
            degenerate,
            converged: false,
            in_range: true,
        };
        if degenerate {
            out.coverage = self.coverage_at(right, init);
            return out;
        }
        let full = self.values.len();
        let mut u = init;
        for it in 0..cfg.max_iterations_per_patch {
            let mut sum_ge = 0.0f64;
            let mut h_masked = 0.0f64;
            let n = self.for_each_sample(right, u, |i, r| {
                let g = self.grads[i];
                sum_ge += (g * (r - self.values[i])) as f64;
                h_masked += (g * g) as f64;
            });
            out.iterations = it + 1;
            if (n as f64) < cfg.min_valid_patch_ratio * self.area() {
                break;
            }
            let h = if n == full { self.hessian } else { h_masked };
            if h < DEGENERATE_HESSIAN {
                out.degenerate = true;
                break;
            }
            let du = sum_ge / h;
            u += du;
            if !(u >= -1.0 && u <= max_disparity + 1.0) {
                out.in_range = false;
                break;
            }
            if du.abs() < CONVERGENCE_EPS {
                out.converged = true;
                break;
            }
        }
        out.disparity = u;
        let (n, ssd) = self.ssd_at(right, u);
        out.coverage = n as f64 / self.area();
        out.residual = if n > 0 { ssd / n as f64 } else { f64::NAN };
        out
    }

    fn coverage_at(&self, right: &GrayImage, u: f64) -> f64 {
        self.for_each_sample(right, u, |_, _| {}) as f64 / self.area()
    }

    /// Pixel count and sum of squared differences at disparity `u`.
    pub fn ssd_at(&self, right: &GrayImage, u: f64) -> (usize, f64) {
        let mut ssd = 0.0f64;
        let n = self.for_each_sample(right, u, |i, r| {
            let e = (r - self.values[i]) as f64;
            ssd += e * e;
        });
        (n, ssd)
    }

    /// Sum of squared residuals at `u + δ` for each offset, over the pixels
    /// that sample in bounds for every offset. `None` if that set is empty.
    pub fn candidate_residuals(
        &self,
        right: &GrayImage,
        u: f64,
        offsets: &[f64],
    ) -> Option<Vec<f64>> {
        let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Pixels valid at both extreme shifts are valid for every shift in between.
        let mut mask = vec![0u8; self.values.len()];
        self.for_each_sample(right, u + lo, |i, _| mask[i] += 1);
        self.for_each_sample(right, u + hi, |i, _| mask[i] += 1);
        let required = if lo == hi { 1 } else { 2 };
        if !mask.contains(&required) {
            return None;
        }
        let residuals = offsets
            .iter()
            .map(|&d| {
                let mut ssd = 0.0f64;
                self.for_each_sample(right, u + d, |i, r| {
                    if mask[i] == required {
                        let e = (r - self.values[i]) as f64;
                        ssd += e * e;
                    }
                });
                ssd
            })
            .collect();
        Some(residuals)
    }

    /// Exhaustive integer search over `0..=max`, used to seed the coarsest level.
    pub fn integer_scan(
        &self,
        right: &GrayImage,
        max_disparity: f64,
        min_ratio: f64,
    ) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        let mut d = 0.0;
        while d <= max_disparity {
            let (n, ssd) = self.ssd_at(right, d);
            if n as f64 >= min_ratio * self.area() {
                let mean = ssd / n as f64;
                if best.is_none_or(|(_, b)| mean < b) {
                    best = Some((d, mean));
                }
            }
            d += 1.0;
        }
        best.map(|(d, _)| d)
    }
}

/// Result of the iterative patch search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSearch {
    pub disparity: f64,
    /// Mean squared residual over in-bounds pixels at the final disparity.
    pub residual: f64,
    /// Fraction of the patch area sampling inside both images at the final disparity.
    pub coverage: f64,
    pub iterations: usize,
    pub degenerate: bool,
    pub converged: bool,
    /// False when the iterate left `[-1, max_disparity + 1]`.
    pub in_range: bool,
}

impl PatchSearch {
    pub fn is_usable(&self, cfg: &MatcherConfig, max_disparity: f64) -> bool {
        !self.degenerate
            && self.in_range
            && self.coverage >= cfg.min_valid_patch_ratio
            && self.disparity >= 0.0
            && self.disparity <= max_disparity
    }
}

/// Searches the patch centered at `center` starting from `init_disparity`.
///
/// Fails when the patch covers less than `min_valid_patch_ratio` of its area
/// on the left image.
pub fn inverse_search_patch(
    left: &GrayImage,
    right: &GrayImage,
    center: Vector2<f64>,
    init_disparity: f64,
    max_disparity: f64,
    cfg: &MatcherConfig,
) -> Result<PatchSearch> {
    check_pair(left, right)?;
    let template = PatchTemplate::around(left, center, cfg.patch_size);
    let coverage = template.left_coverage();
    if coverage < cfg.min_valid_patch_ratio {
        return Err(Error::InsufficientCoverage {
            coverage,
            required: cfg.min_valid_patch_ratio,
        });
    }
    Ok(template.search(right, init_disparity, max_disparity, cfg))
}

/// Softmax confidence over the candidate window.
#[derive(Debug, Clone, PartialEq)]
pub struct ScrfOutcome {
    /// Probability of the zero-offset candidate.
    pub probability: f64,
    pub sigma_r: f64,
    pub candidate_probabilities: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// `exp(-r_i / (2 σ_r² s²))` normalized over the candidates, with `σ_r` the
/// population standard deviation of the residuals (floored) and `s` the patch side.
pub fn scrf_softmax(residuals: &[f64], zero_index: usize, patch_side: f64) -> ScrfOutcome {
    assert!(
        zero_index < residuals.len(),
        "zero candidate index out of range"
    );
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / n;
    let sigma_r = var.sqrt().max(SIGMA_R_FLOOR);
    let denom = 2.0 * sigma_r * sigma_r * patch_side * patch_side;
    let logits: Vec<f64> = residuals.iter().map(|r| -r / denom).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    let candidate_probabilities: Vec<f64> = exps.iter().map(|e| e / total).collect();
    ScrfOutcome {
        probability: candidate_probabilities[zero_index],
        sigma_r,
        candidate_probabilities,
        residuals: residuals.to_vec(),
    }
}

/// Confidence of a converged patch disparity. `None` when every candidate
/// samples out of bounds.
pub fn scrf_probability(
    left: &GrayImage,
    right: &GrayImage,
    center: Vector2<f64>,
    converged_disparity: f64,
    cfg: &MatcherConfig,
) -> Result<Option<ScrfOutcome>> {
    check_pair(left, right)?;
    cfg.validate()?;
    let template = PatchTemplate::around(left, center, cfg.patch_size);
    Ok(template_scrf(&template, right, converged_disparity, cfg))
}

pub(crate) fn template_scrf(
    template: &PatchTemplate,
    right: &GrayImage,
    disparity: f64,
    cfg: &MatcherConfig,
) -> Option<ScrfOutcome> {
    let residuals = template.candidate_residuals(right, disparity, &cfg.candidate_offsets)?;
    Some(scrf_softmax(
        &residuals,
        cfg.zero_offset_index(),
        cfg.patch_size as f64,
    ))
}

fn check_pair(left: &GrayImage, right: &GrayImage) -> Result<()> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{} vs right {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    Ok(())
}
