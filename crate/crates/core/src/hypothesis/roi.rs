use serde::{Deserialize, Serialize};

use super::{HypothesisConfig, Preset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Selected pixels as sorted flat indices into a score map of `n` pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pixels: Vec<usize>,
    n: usize,
}

impl Roi {
    pub fn new(mut pixels: Vec<usize>, n: usize) -> Result<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        if let Some(&p) = pixels.last() {
            if p >= n {
                return Err(Error::InvalidConfig(format!("ROI pixel {p} out of range for {n} pixels")));
            }
        }
        Ok(Roi { pixels, n })
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, pixel: usize) -> bool {
        self.pixels.binary_search(&pixel).is_ok()
    }

    pub(crate) fn indicator(&self) -> Vec<bool> {
        let mut v = vec![false; self.n];
        for &p in &self.pixels {
            v[p] = true;
        }
        v
    }
}

/// Pixels whose score passes the threshold. Ties count as selected.
///
/// Under `use_norm` the comparison `S_i - (1 - t) min - t max >= 0` over the
/// unmasked pixels replaces `(S_i - min) / (max - min) >= t`.
pub(crate) fn select(values: &[f64], excluded: &[bool], tau: f64, use_norm: bool) -> Result<Vec<usize>> {
    let unmasked = || values.iter().zip(excluded).filter(|(_, &e)| !e).map(|(&v, _)| v);
    if use_norm {
        let lo = unmasked().fold(f64::INFINITY, f64::min);
        let hi = unmasked().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::DegenerateNormalization);
        }
        let (wl, wh) = (1.0 - tau, tau);
        Ok(pick(values, excluded, |v| v - wl * lo - wh * hi >= 0.0))
    } else {
        Ok(pick(values, excluded, |v| v >= tau))
    }
}

fn pick(values: &[f64], excluded: &[bool], keep: impl Fn(f64) -> bool) -> Vec<usize> {
    values.iter().zip(excluded).enumerate().filter(|(_, (&v, &e))| !e && keep(v)).map(|(i, _)| i).collect()
}

/// Thresholds a score map (before any normalization) into the ROI.
///
/// `sigmoid_output` says whether the score is the pre-activation of a
/// terminal Sigmoid, in which case the threshold is moved through the logit.
pub fn extract_roi(config: &HypothesisConfig, score: &Tensor, sigmoid_output: bool) -> Result<Roi> {
    let tau = config.effective_threshold(sigmoid_output)?;
    let n = score.len();
    let excluded = config.excluded(n)?;
    let pixels = select(score.data(), &excluded, tau, config.use_norm)?;
    if pixels.is_empty() {
        return Err(Error::EmptyRoi);
    }
    if pixels.len() == n {
        return Err(Error::FullRoi);
    }
    Roi::new(pixels, n)
}

/// Pixels within Chebyshev distance `r` of the ROI, excluding the ROI itself
/// and masked pixels. Distances are measured inside each `(H, W)` plane.
pub fn neighborhood(roi: &Roi, r: usize, shape: (usize, usize), excluded: &[bool]) -> Result<Vec<usize>> {
    let (h, w) = shape;
    let plane = h * w;
    if plane == 0 || !roi.n().is_multiple_of(plane) {
        return Err(Error::shape("neighborhood", format!("{} pixels do not tile {h}x{w} planes", roi.n())));
    }
    let mut hit = vec![false; roi.n()];
    for &p in roi.pixels() {
        let (base, y, x) = (p - p % plane, (p % plane) / w, p % w);
        for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
            for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                hit[base + yy * w + xx] = true;
            }
        }
    }
    let roi_mask = roi.indicator();
    let ring: Vec<usize> =
        (0..roi.n()).filter(|&i| hit[i] && !roi_mask[i] && !excluded.get(i).copied().unwrap_or(false)).collect();
    if ring.is_empty() {
        return Err(Error::EmptyNeighborhood);
    }
    Ok(ring)
}

fn complement(roi: &Roi, excluded: &[bool]) -> Result<Vec<usize>> {
    let roi_mask = roi.indicator();
    let rest: Vec<usize> =
        (0..roi.n()).filter(|&i| !roi_mask[i] && !excluded.get(i).copied().unwrap_or(false)).collect();
    if rest.is_empty() {
        return Err(Error::EmptyComplement);
    }
    Ok(rest)
}

/// The pixels the ROI is compared with: the unmasked complement, or the
/// neighborhood ring for [`Preset::NeighborMeanDiff`].
pub fn non_roi(config: &HypothesisConfig, roi: &Roi, shape: (usize, usize)) -> Result<Vec<usize>> {
    let excluded = config.excluded(roi.n())?;
    match config.preset {
        Preset::NeighborMeanDiff => neighborhood(roi, config.neighborhood_range, shape, &excluded),
        Preset::BackMeanDiff | Preset::ReferenceMeanDiff => complement(roi, &excluded),
    }
}

/// Test direction for the configured preset. Length `n`, or `2n` with the
/// test block first for [`Preset::ReferenceMeanDiff`].
pub fn build_eta(config: &HypothesisConfig, roi: &Roi, shape: (usize, usize)) -> Result<Vec<f64>> {
    if roi.is_empty() {
        return Err(Error::EmptyRoi);
    }
    let n = roi.n();
    let inside = 1.0 / roi.len() as f64;
    match config.preset {
        Preset::ReferenceMeanDiff => {
            let mut eta = vec![0.0; 2 * n];
            for &p in roi.pixels() {
                eta[p] = inside;
                eta[n + p] = -inside;
            }
            Ok(eta)
        }
        Preset::BackMeanDiff | Preset::NeighborMeanDiff => {
            let other = non_roi(config, roi, shape)?;
            let outside = 1.0 / other.len() as f64;
            let mut eta = vec![0.0; n];
            for &p in roi.pixels() {
                eta[p] = inside;
            }
            for p in other {
                eta[p] = -outside;
            }
            Ok(eta)
        }
    }
}
