//! Closed intervals on the search line and finite unions of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is reversed");
        Interval { lo, hi }
    }

    pub fn contains(&self, z: f64) -> bool {
        self.lo <= z && z <= self.hi
    }

    pub fn contains_strictly(&self, z: f64) -> bool {
        self.lo < z && z < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Intersection, or `None` when the result is empty.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn raise_lo(&mut self, bound: f64) {
        if bound > self.lo {
            self.lo = bound;
        }
    }

    pub fn lower_hi(&mut self, bound: f64) {
        if bound < self.hi {
            self.hi = bound;
        }
    }

    /// Restricts to the half-line on which `a + b z'` keeps the sign branch it
    /// has at `z`: positive when `a + b z > 0`, non-positive otherwise.
    /// `b == 0` imposes nothing. The bound never crosses `z` itself, which
    /// guards against the rounded root landing on the wrong side.
    pub(crate) fn keep_sign(&mut self, a: f64, b: f64, positive: bool, z: f64) {
        if b == 0.0 {
            return;
        }
        let root = -a / b;
        if (b > 0.0) == positive {
            self.raise_lo(root.min(z));
        } else {
            self.lower_hi(root.max(z));
        }
    }

    /// Restricts to the half-line on which `a + b z' >= 0` keeps holding
    /// (`holds == true`) or keeps failing.
    pub(crate) fn keep_nonneg(&mut self, a: f64, b: f64, holds: bool, z: f64) {
        self.keep_sign(a, b, holds, z);
    }

    /// Fails with `InternalInconsistency` if the interval is reversed or
    /// misses `z`.
    pub(crate) fn check_contains(&self, z: f64, what: &str) -> Result<()> {
        if self.lo <= z && z <= self.hi {
            Ok(())
        } else {
            Err(Error::InternalInconsistency(format!(
                "{what}: interval [{}, {}] does not contain z = {z}",
                self.lo, self.hi
            )))
        }
    }
}

impl Serialize for Interval {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [json_bound(self.lo), json_bound(self.hi)].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [lo, hi] = <[serde_json::Value; 2]>::deserialize(d)?;
        let parse = |v: &serde_json::Value| -> std::result::Result<f64, D::Error> {
            match v {
                serde_json::Value::Number(n) => Ok(n.as_f64().unwrap_or(f64::NAN)),
                serde_json::Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                serde_json::Value::String(s) if s == "inf" => Ok(f64::INFINITY),
                other => Err(serde::de::Error::custom(format!("bad interval bound {other}"))),
            }
        };
        let (lo, hi) = (parse(&lo)?, parse(&hi)?);
        if !(lo <= hi) {
            return Err(serde::de::Error::custom("interval bounds reversed"));
        }
        Ok(Interval { lo, hi })
    }
}

/// JSON has no infinity; unbounded ends are written as the strings
/// `"-inf"` / `"inf"`.
fn json_bound(v: f64) -> serde_json::Value {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.into()
    }
}

/// Sorted, pairwise-disjoint intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalUnion {
    segments: Vec<Interval>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        IntervalUnion::default()
    }

    pub fn single(iv: Interval) -> Self {
        IntervalUnion { segments: vec![iv] }
    }

    /// Builds a union from arbitrary intervals, merging any that overlap or
    /// lie within `merge_gap` of each other.
    pub fn from_intervals(mut intervals: Vec<Interval>, merge_gap: f64) -> Self {
        intervals.sort_by(|x, y| x.lo.total_cmp(&y.lo));
        let mut segments: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            match segments.last_mut() {
                Some(last) if iv.lo <= last.hi + merge_gap => {
                    last.hi = last.hi.max(iv.hi);
                }
                _ => segments.push(iv),
            }
        }
        IntervalUnion { segments }
    }

    pub fn segments(&self) -> &[Interval] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn contains(&self, z: f64) -> bool {
        self.segments.iter().any(|s| s.contains(z))
    }

    /// Distance from `z` to the nearest segment (0 when inside).
    pub fn distance_to(&self, z: f64) -> f64 {
        self.segments
            .iter()
            .map(|s| {
                if z < s.lo {
                    s.lo - z
                } else if z > s.hi {
                    z - s.hi
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// True when every point of `iv` is covered by a single segment.
    pub fn covers(&self, iv: &Interval) -> bool {
        self.segments.iter().any(|s| s.lo <= iv.lo && iv.hi <= s.hi)
    }

    pub fn scaled(&self, c: f64) -> IntervalUnion {
        debug_assert!(c > 0.0);
        IntervalUnion { segments: self.segments.iter().map(|s| Interval::new(s.lo * c, s.hi * c)).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_sign_follows_the_active_branch() {
        // 1 + 2z at z = 0 is positive; root at -0.5.
        let mut iv = Interval::new(-3.0, 3.0);
        iv.keep_sign(1.0, 2.0, true, 0.0);
        assert_eq!(iv, Interval::new(-0.5, 3.0));

        // 1 - 2z at z = 1 is negative; root at 0.5.
        let mut iv = Interval::new(-3.0, 3.0);
        iv.keep_sign(1.0, -2.0, false, 1.0);
        assert_eq!(iv, Interval::new(0.5, 3.0));

        let mut iv = Interval::new(-1.0, 1.0);
        iv.keep_sign(0.0, 0.0, false, 0.0);
        assert_eq!(iv, Interval::new(-1.0, 1.0));
    }

    #[test]
    fn union_merges_overlaps_and_sorts() {
        let u = IntervalUnion::from_intervals(
            vec![Interval::new(3.0, 4.0), Interval::new(0.0, 1.0), Interval::new(0.5, 2.0)],
            0.0,
        );
        assert_eq!(u.segments(), &[Interval::new(0.0, 2.0), Interval::new(3.0, 4.0)]);
        assert!(u.covers(&Interval::new(0.2, 1.9)));
        assert!(!u.covers(&Interval::new(1.5, 3.5)));
    }

    #[test]
    fn infinite_bounds_serialize_as_strings() {
        let iv = Interval::new(f64::NEG_INFINITY, 2.0);
        let s = serde_json::to_string(&iv).unwrap();
        assert_eq!(s, r#"["-inf",2.0]"#);
        let back: Interval = serde_json::from_str(&s).unwrap();
        assert_eq!(back, iv);
    }
}
