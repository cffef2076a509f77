//! Pixel-wise fusion of overlapping patch disparities.
//!
//! Each valid patch spreads its confidence over its pixels with a Gaussian
//! spatial kernel; the fused disparity is the weighted mean of every covering
//! patch.

use super::{DisparityField, PatchEstimate};

/// Precomputed Gaussian weights `exp(-|δ|² / (2 σ_s²))` for every in-patch
/// offset `δ` from the patch's geometric center.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    size: usize,
    sigma_s: f64,
    weights: Vec<f64>,
}

impl KernelTable {
    pub fn new(patch_size: usize, sigma_s: f64) -> Self {
        let half = (patch_size as f64 - 1.0) / 2.0;
        let mut weights = Vec::with_capacity(patch_size * patch_size);
        for j in 0..patch_size {
            for i in 0..patch_size {
                weights.push(Self::weight_at(i as f64 - half, j as f64 - half, sigma_s));
            }
        }
        Self {
            size: patch_size,
            sigma_s,
            weights,
        }
    }

    #[inline]
    pub fn weight_at(dx: f64, dy: f64, sigma_s: f64) -> f64 {
        (-(dx * dx + dy * dy) / (2.0 * sigma_s * sigma_s)).exp()
    }

    /// Weight of the in-patch cell `(i, j)`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[j * self.size + i]
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma_s(&self) -> f64 {
        self.sigma_s
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Numerator/denominator buffers of the weighted mean, plus the best single
/// patch probability seen at each pixel.
#[derive(Debug, Clone)]
pub struct FieldAccumulator {
    width: usize,
    height: usize,
    weighted_disparity: Vec<f64>,
    weight: Vec<f64>,
    best_probability: Vec<f64>,
    min_disparity: Vec<f64>,
    max_disparity: Vec<f64>,
}

impl FieldAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            weighted_disparity: vec![0.0; n],
            weight: vec![0.0; n],
            best_probability: vec![0.0; n],
            min_disparity: vec![f64::INFINITY; n],
            max_disparity: vec![f64::NEG_INFINITY; n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Adds one patch. Invalid patches and off-image cells are skipped.
    pub fn accumulate(&mut self, estimate: &PatchEstimate, kernel: &KernelTable) {
        if !estimate.valid {
            return;
        }
        let p = estimate.scrf_probability;
        if !(p > 0.0) {
            return;
        }
        let (ox, oy) = estimate.origin(kernel.size());
        let u = estimate.disparity;
        for j in 0..kernel.size() {
            let y = oy + j as isize;
            if y < 0 || y >= self.height as isize {
                continue;
            }
            for i in 0..kernel.size() {
                let x = ox + i as isize;
                if x < 0 || x >= self.width as isize {
                    continue;
                }
                let idx = y as usize * self.width + x as usize;
                let w = p * kernel.get(i, j);
                self.weighted_disparity[idx] += w * u;
                self.weight[idx] += w;
                if p > self.best_probability[idx] {
                    self.best_probability[idx] = p;
                }
                self.min_disparity[idx] = self.min_disparity[idx].min(u);
                self.max_disparity[idx] = self.max_disparity[idx].max(u);
            }
        }
    }

    /// Fused disparity where any patch contributed.
    #[inline]
    pub fn fused(&self, idx: usize) -> Option<f64> {
        (self.weight[idx] > 0.0).then(|| self.weighted_disparity[idx] / self.weight[idx])
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn best_probability(&self) -> &[f64] {
        &self.best_probability
    }

    /// Range `[min, max]` of contributing patch disparities at a pixel.
    pub fn contributing_range(&self, idx: usize) -> Option<(f64, f64)> {
        (self.weight[idx] > 0.0).then(|| (self.min_disparity[idx], self.max_disparity[idx]))
    }

    /// Normalizes the accumulators and applies the confidence threshold.
    pub fn finalize(&self, probability_threshold: f64, max_disparity: f64) -> DisparityField {
        let n = self.width * self.height;
        let mut disparity = vec![0.0; n];
        let mut confidence = vec![0.0; n];
        let mut valid = vec![false; n];
        for i in 0..n {
            confidence[i] = self.best_probability[i];
            if let Some(d) = self.fused(i) {
                disparity[i] = d;
                valid[i] = self.best_probability[i] >= probability_threshold
                    && d >= 0.0
                    && d <= max_disparity;
            }
        }
        DisparityField::from_parts(self.width, self.height, disparity, confidence, valid)
            .expect("buffers sized from accumulator")
    }

    /// Dense seed for the next finer level: fused values with holes filled
    /// from the nearest defined pixel on the row, else the global mean.
    pub(crate) fn seed_field(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![f64::NAN; n];
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, o) in out.iter_mut().enumerate() {
            if let Some(d) = self.fused(i) {
                *o = d;
                sum += d;
                count += 1;
            }
        }
        let global = if count > 0 { sum / count as f64 } else { 0.0 };
        for y in 0..self.height {
            let row = &mut out[y * self.width..(y + 1) * self.width];
            fill_row(row, global);
        }
        out
    }
}

fn fill_row(row: &mut [f64], fallback: f64) {
    let n = row.len();
    let mut left = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if !row[i].is_nan() {
            last = Some((i, row[i]));
        }
        left[i] = last;
    }
    let mut next: Option<(usize, f64)> = None;
    for i in (0..n).rev() {
        if !row[i].is_nan() {
            next = Some((i, row[i]));
            continue;
        }
        row[i] = match (left[i], next) {
            (Some((li, lv)), Some((ri, rv))) => {
                if i - li <= ri - i {
                    lv
                } else {
                    rv
                }
            }
            (Some((_, v)), None) | (None, Some((_, v))) => v,
            (None, None) => fallback,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn estimate(center: (f64, f64), disparity: f64, p: f64) -> PatchEstimate {
        PatchEstimate {
            center: Vector2::new(center.0, center.1),
            disparity,
            scrf_probability: p,
            residual_ssd: 0.0,
            sigma_r: 1.0,
            valid: true,
            degenerate: false,
            coverage: 1.0,
            candidate_probabilities: vec![p],
        }
    }

    #[test]
    fn kernel_symmetry_and_center() {
        for size in [5usize, 16] {
            let k = KernelTable::new(size, 4.0);
            for j in 0..size {
                for i in 0..size {
                    let w = k.get(i, j);
                    assert!(w > 0.0 && w <= 1.0);
                    assert_eq!(w, k.get(size - 1 - i, size - 1 - j));
                }
            }
        }
        assert_eq!(KernelTable::weight_at(0.0, 0.0, 4.0), 1.0);
        assert_eq!(KernelTable::new(5, 4.0).get(2, 2), 1.0);
        assert_eq!(
            KernelTable::weight_at(1.5, -2.0, 4.0),
            KernelTable::weight_at(-1.5, 2.0, 4.0)
        );
    }

    #[test]
    fn single_patch_passes_its_disparity_through() {
        let k = KernelTable::new(4, 4.0);
        let mut acc = FieldAccumulator::new(8, 8);
        acc.accumulate(&estimate((3.5, 3.5), 2.25, 0.6), &k);
        let f = acc.finalize(0.15, 10.0);
        assert_eq!(f.get(3, 3), Some(2.25));
        assert_eq!(f.get(0, 0), None);
        assert!((f.confidence()[3 * 8 + 3] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn weighted_mean_of_two_patches() {
        // Same center, so kernel weights match and the probabilities set the 1:3 ratio.
        let k = KernelTable::new(4, 4.0);
        let mut acc = FieldAccumulator::new(8, 8);
        acc.accumulate(&estimate((3.5, 3.5), 2.0, 0.2), &k);
        acc.accumulate(&estimate((3.5, 3.5), 4.0, 0.6), &k);
        let f = acc.finalize(0.15, 10.0);
        assert!((f.get(4, 4).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_changes_nothing() {
        let k = KernelTable::new(4, 4.0);
        let mut acc = FieldAccumulator::new(8, 8);
        acc.accumulate(&estimate((3.5, 3.5), 2.0, 0.0), &k);
        assert!(acc.weight().iter().all(|&w| w == 0.0));
        assert!(acc.best_probability().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn threshold_and_coverage_rules() {
        let k = KernelTable::new(4, 4.0);
        let mut acc = FieldAccumulator::new(8, 4);
        acc.accumulate(&estimate((1.5, 1.5), 2.0, 0.10), &k);
        acc.accumulate(&estimate((5.5, 1.5), 3.0, 0.9), &k);
        let f = acc.finalize(0.15, 10.0);
        assert_eq!(f.get(1, 1), None); // best probability 0.10
        assert_eq!(f.get(6, 1), Some(3.0));
        let f = acc.finalize(0.15, 2.5);
        assert_eq!(f.get(6, 1), None); // beyond max disparity
    }

    #[test]
    fn fill_row_uses_nearest() {
        let mut row = vec![f64::NAN, 1.0, f64::NAN, f64::NAN, f64::NAN, 5.0, f64::NAN];
        fill_row(&mut row, 0.0);
        assert_eq!(row, vec![1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0]);
        let mut row = vec![f64::NAN; 3];
        fill_row(&mut row, 7.0);
        assert_eq!(row, vec![7.0; 3]);
    }
}
