//! Score maps, regions of interest and test directions.
//!
//! A model output (optionally post-processed) is thresholded into a region
//! of interest (ROI). The preset decides what the ROI is compared with: the
//! rest of the image, a ring around the ROI, or the same pixels of a
//! reference image.

mod constraints;
mod roi;
mod score;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use constraints::{selection_constraints, SelectionAt};
pub use roi::{build_eta, extract_roi, neighborhood, non_roi, Roi};
pub use score::{affine_score, raw_score_map, score_map};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// ROI mean against the mean of every other unmasked pixel.
    BackMeanDiff,
    /// ROI mean against the mean of a Chebyshev ring around the ROI.
    NeighborMeanDiff,
    /// ROI mean of the test image against the same pixels of a reference.
    ReferenceMeanDiff,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "back-mean-diff" | "BackMeanDiff" => Ok(Preset::BackMeanDiff),
            "neighbor-mean-diff" | "NeighborMeanDiff" => Ok(Preset::NeighborMeanDiff),
            "reference-mean-diff" | "ReferenceMeanDiff" => Ok(Preset::ReferenceMeanDiff),
            other => Err(Error::InvalidConfig(format!("unknown hypothesis `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::BackMeanDiff => "back-mean-diff",
            Preset::NeighborMeanDiff => "neighbor-mean-diff",
            Preset::ReferenceMeanDiff => "reference-mean-diff",
        })
    }
}

fn default_kernel() -> usize {
    3
}

fn default_sigma() -> f64 {
    1.0
}

/// One step of the post-processing chain applied to the model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PostProcess {
    /// Output minus the tested input.
    InputDiff,
    Abs,
    Neg,
    AverageFilter {
        #[serde(default = "default_kernel")]
        kernel_size: usize,
    },
    GaussianFilter {
        #[serde(default = "default_kernel")]
        kernel_size: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
}

impl PostProcess {
    fn validate(&self) -> Result<()> {
        match *self {
            PostProcess::AverageFilter { kernel_size } | PostProcess::GaussianFilter { kernel_size, .. }
                if kernel_size == 0 || kernel_size % 2 == 0 =>
            {
                Err(Error::InvalidConfig(format!("filter kernel size must be odd and positive, got {kernel_size}")))
            }
            PostProcess::GaussianFilter { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidConfig(format!("gaussian sigma must be positive, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Parses a comma-separated chain such as `input-diff,abs,gaussian:3:1.0`.
    pub fn parse_chain(s: &str) -> Result<Vec<PostProcess>> {
        s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::parse).collect()
    }
}

impl FromStr for PostProcess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = || Error::InvalidConfig(format!("cannot parse post-process step `{s}`"));
        let int = |i: usize, d: usize| -> Result<usize> { args.get(i).map_or(Ok(d), |v| v.parse().map_err(|_| bad())) };
        let float = |i: usize, d: f64| -> Result<f64> { args.get(i).map_or(Ok(d), |v| v.parse().map_err(|_| bad())) };
        let step = match kind {
            "input-diff" if args.is_empty() => PostProcess::InputDiff,
            "abs" if args.is_empty() => PostProcess::Abs,
            "neg" if args.is_empty() => PostProcess::Neg,
            "average" | "average-filter" if args.len() <= 1 => PostProcess::AverageFilter { kernel_size: int(0, 3)? },
            "gaussian" | "gaussian-filter" if args.len() <= 2 => {
                PostProcess::GaussianFilter { kernel_size: int(0, 3)?, sigma: float(1, 1.0)? }
            }
            _ => return Err(bad()),
        };
        step.validate()?;
        Ok(step)
    }
}

fn default_range() -> usize {
    1
}

/// Everything that defines the tested hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConfig {
    pub preset: Preset,
    pub threshold: f64,
    #[serde(default)]
    pub i_idx: usize,
    #[serde(default)]
    pub o_idx: usize,
    #[serde(default)]
    pub post_process: Vec<PostProcess>,
    #[serde(default)]
    pub use_norm: bool,
    #[serde(default = "default_range")]
    pub neighborhood_range: usize,
    /// Non-zero entries mark pixels excluded from the ROI and from every
    /// comparison region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Tensor>,
}

impl HypothesisConfig {
    pub fn new(preset: Preset, threshold: f64) -> Self {
        HypothesisConfig {
            preset,
            threshold,
            i_idx: 0,
            o_idx: 0,
            post_process: Vec::new(),
            use_norm: false,
            neighborhood_range: 1,
            mask: None,
        }
    }

    pub fn with_post_process(mut self, chain: Vec<PostProcess>) -> Self {
        self.post_process = chain;
        self
    }

    pub fn with_norm(mut self, use_norm: bool) -> Self {
        self.use_norm = use_norm;
        self
    }

    pub fn with_mask(mut self, mask: Tensor) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn with_neighborhood_range(mut self, r: usize) -> Self {
        self.neighborhood_range = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::InvalidConfig("threshold must be finite".into()));
        }
        if self.use_norm && !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig("with use_norm the threshold must lie in (0, 1)".into()));
        }
        if self.neighborhood_range == 0 {
            return Err(Error::InvalidConfig("neighborhood_range must be at least 1".into()));
        }
        for p in &self.post_process {
            p.validate()?;
        }
        Ok(())
    }

    /// Threshold applied to the score actually compared. When the scored
    /// output ends in a Sigmoid, comparison happens on the pre-activation
    /// with `logit(threshold)`.
    pub fn effective_threshold(&self, sigmoid_output: bool) -> Result<f64> {
        if !sigmoid_output {
            return Ok(self.threshold);
        }
        if !self.post_process.is_empty() || self.use_norm {
            return Err(Error::InvalidConfig(
                "post-processing and use_norm are not supported on a Sigmoid output".into(),
            ));
        }
        let t = self.threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold {t} on a Sigmoid output must lie in (0, 1)")));
        }
        Ok((t / (1.0 - t)).ln())
    }

    /// Per-pixel exclusion flags for `n` pixels.
    pub fn excluded(&self, n: usize) -> Result<Vec<bool>> {
        match &self.mask {
            None => Ok(vec![false; n]),
            Some(m) if m.len() == n => Ok(m.data().iter().map(|&v| v != 0.0).collect()),
            Some(m) => Err(Error::shape("mask", format!("mask has {} entries, score map has {n}", m.len()))),
        }
    }
}

/// `(height, width)` of the trailing image plane of a score tensor.
pub(crate) fn plane_shape(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        r => (shape[r - 2], shape[r - 1]),
    }
}
