//! Piece selection for scalar piecewise-linear functions of `z`.
//!
//! Branch convention: the positive branch of ReLU/LeakyReLU/Abs is active iff
//! `a + b z > 0`; an exact zero takes the other branch. Intervals are kept
//! closed.

use crate::interval::Interval;

/// Active piece of `relu(a + b z)` at `z` and the largest sub-interval of
/// `interval` containing `z` on which that piece stays active.
pub fn relu_piece(a: f64, b: f64, interval: Interval, z: f64) -> (f64, f64, Interval) {
    let positive = a + b * z > 0.0;
    let mut iv = interval;
    iv.keep_sign(a, b, positive, z);
    if positive {
        (a, b, iv)
    } else {
        (0.0, 0.0, iv)
    }
}

/// Like [`relu_piece`] with slope `alpha` on the non-positive side.
pub fn leaky_relu_piece(a: f64, b: f64, alpha: f64, interval: Interval, z: f64) -> (f64, f64, Interval) {
    let positive = a + b * z > 0.0;
    let mut iv = interval;
    iv.keep_sign(a, b, positive, z);
    if positive {
        (a, b, iv)
    } else {
        (alpha * a, alpha * b, iv)
    }
}

/// Active piece of `|a + b z|` at `z`.
pub fn abs_piece(a: f64, b: f64, interval: Interval, z: f64) -> (f64, f64, Interval) {
    let positive = a + b * z > 0.0;
    let mut iv = interval;
    iv.keep_sign(a, b, positive, z);
    if positive {
        (a, b, iv)
    } else {
        (-a, -b, iv)
    }
}

/// Active piece of `max_k (a_k + b_k z)` at `z`, ties going to the lowest
/// index, and the sub-interval on which that candidate stays maximal.
///
/// Panics if `candidates` is empty.
pub fn max_piece(candidates: &[(f64, f64)], interval: Interval, z: f64) -> (f64, f64, Interval) {
    let (best, _) = argmax_at(candidates.iter().copied(), z).expect("max_piece needs candidates");
    let (ab, bb) = candidates[best];
    let mut iv = interval;
    for (j, &(aj, bj)) in candidates.iter().enumerate() {
        if j != best {
            // winner stays >= candidate j while (ab - aj) + (bb - bj) z >= 0
            iv.keep_nonneg(ab - aj, bb - bj, true, z);
        }
    }
    (ab, bb, iv)
}

/// Index and value of the largest `a + b z`; the first maximum wins.
pub(crate) fn argmax_at(items: impl Iterator<Item = (f64, f64)>, z: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (a, b)) in items.enumerate() {
        let v = a + b * z;
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((k, v)),
        }
    }
    best
}

/// Index and value of the smallest `a + b z`; the first minimum wins.
pub(crate) fn argmin_at(items: impl Iterator<Item = (f64, f64)>, z: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (a, b)) in items.enumerate() {
        let v = a + b * z;
        match best {
            Some((_, bv)) if v >= bv => {}
            _ => best = Some((k, v)),
        }
    }
    best
}
