use super::HypothesisConfig;
use crate::affine::pieces::{argmax_at, argmin_at};
use crate::affine::ParamTensor;
use crate::error::Result;
use crate::interval::Interval;

/// Thresholding outcome along the line at one `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionAt {
    /// Largest interval around `z`, inside the given validity interval, on
    /// which every unmasked pixel keeps its in/out status.
    pub interval: Interval,
    /// Pixels selected at `z`, sorted.
    pub pixels: Vec<usize>,
}

/// Narrows `valid` to the set of `z'` selecting the same pixels as `z`.
///
/// `score` is the affine score map (pre-normalization), exact on `valid`.
/// Never fails on empty or full selections; the caller decides what those
/// mean.
pub fn selection_constraints(
    config: &HypothesisConfig,
    score: &ParamTensor,
    valid: Interval,
    z: f64,
    sigmoid_output: bool,
) -> Result<SelectionAt> {
    let tau = config.effective_threshold(sigmoid_output)?;
    let n = score.len();
    let excluded = config.excluded(n)?;
    let (a, b) = (score.bias().data(), score.coeff().data());
    let mut iv = valid;

    // The compared quantity is g_i = (a_i - off_a) + (b_i - off_b) z.
    let (off_a, off_b) = if config.use_norm {
        let unmasked: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
        let lines = || unmasked.iter().map(|&i| (a[i], b[i]));
        let Some(((lo_k, _), (hi_k, _))) = argmin_at(lines(), z).zip(argmax_at(lines(), z)) else {
            iv.check_contains(z, "selection")?;
            return Ok(SelectionAt { interval: iv, pixels: Vec::new() });
        };
        let (m, mx) = (unmasked[lo_k], unmasked[hi_k]);
        for &j in &unmasked {
            iv.keep_nonneg(a[j] - a[m], b[j] - b[m], true, z);
            iv.keep_nonneg(a[mx] - a[j], b[mx] - b[j], true, z);
        }
        ((1.0 - tau) * a[m] + tau * a[mx], (1.0 - tau) * b[m] + tau * b[mx])
    } else {
        (tau, 0.0)
    };

    let mut pixels = Vec::new();
    for i in (0..n).filter(|&i| !excluded[i]) {
        let (ga, gb) = (a[i] - off_a, b[i] - off_b);
        let inside = ga + gb * z >= 0.0;
        if inside {
            pixels.push(i);
        }
        iv.keep_nonneg(ga, gb, inside, z);
    }
    iv.check_contains(z, "selection")?;
    Ok(SelectionAt { interval: iv, pixels })
}
