//! Selective p-values for a thresholded ROI.
//!
//! The observed image `x` is moved along the line `a + b z` that varies
//! only the test statistic `eta' x`. The set of `z` reproducing the observed
//! ROI is found by sweeping the line piece by piece, and the p-value is the
//! two-sided tail of a normal truncated to that set.

mod covariance;
mod line;
mod search;

use serde::{Deserialize, Serialize};

pub use covariance::Covariance;
pub use line::{line_params, LineParams};
pub use search::{LineSearch, SweepStats};

use crate::affine::SessionStats;
use crate::error::{Error, Result};
use crate::hypothesis::{
    build_eta, extract_roi, non_roi, plane_shape, raw_score_map, score_map, HypothesisConfig, Preset, Roi,
};
use crate::interval::{Interval, IntervalUnion};
use crate::ir::ModelGraph;
use crate::tensor::Tensor;
use crate::truncnorm::{naive_log_p, two_sided_p};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Condition only on the selected ROI.
    #[default]
    Parametric,
    /// Condition on the ROI and on every piece of the network at `z_obs`.
    OverConditioning,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(Mode::Parametric),
            "over_conditioning" | "over-conditioning" | "oc" => Ok(Mode::OverConditioning),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceOptions {
    pub mode: Mode,
    /// Half-width of the search window in units of `sigma_eta`.
    pub z_range: f64,
    /// Sweep step past each interval; `None` uses `1e-6 * max(1, sigma_eta)`.
    pub epsilon: Option<f64>,
    pub memoize: bool,
    /// Consecutive near-empty intervals tolerated before giving up.
    pub max_stall: usize,
    /// Log of the number of hypotheses for the Bonferroni p-value; `None`
    /// uses `n ln 2` for `n` pixels.
    pub log_num_comparisons: Option<f64>,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            mode: Mode::Parametric,
            z_range: 10.0,
            epsilon: None,
            memoize: true,
            max_stall: 1000,
            log_num_comparisons: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub intervals_visited: u64,
    pub intervals_accepted: u64,
    pub node_evaluations: u64,
    pub cache_hits: u64,
    pub propagations: u64,
    pub epsilon: f64,
    /// Searched window `[lo, hi]` in the units of `z`.
    pub window: Interval,
    /// Whether the window was widened to keep `z_obs` well inside it.
    pub window_extended: bool,
    /// Over-conditioning interval at `z_obs`, unclipped.
    pub oc_interval: Interval,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceResult {
    pub p_value: f64,
    pub naive_p_value: f64,
    pub log_naive_p_value: f64,
    pub oc_p_value: f64,
    pub bonferroni_p_value: f64,
    pub log_num_comparisons: f64,
    pub z_obs: f64,
    pub sigma_eta: f64,
    pub truncation_region: IntervalUnion,
    pub roi: Vec<usize>,
    pub non_roi: Vec<usize>,
    pub mode: Mode,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub output: Vec<Tensor>,
    #[serde(skip)]
    pub score_map: Tensor,
    #[serde(skip)]
    pub roi_set: Roi,
}

impl InferenceResult {
    /// `min(1, exp(log naive_p + log_num_comparisons))`.
    pub fn bonferroni(&self, log_num_comparisons: f64) -> f64 {
        bonferroni(self.log_naive_p_value, log_num_comparisons)
    }
}

fn bonferroni(log_p: f64, log_m: f64) -> f64 {
    let v = log_p + log_m;
    if v >= 0.0 {
        1.0
    } else {
        v.exp()
    }
}

/// Runs one selective test.
///
/// `inputs` are the graph inputs; the one at `config.i_idx` is tested.
/// `reference` is required for [`Preset::ReferenceMeanDiff`] and ignored
/// otherwise. `cov` describes the noise of the tested image, or of the
/// stacked (test, reference) pair.
pub fn inference(
    graph: &ModelGraph,
    config: &HypothesisConfig,
    inputs: &[Tensor],
    reference: Option<&Tensor>,
    cov: &Covariance,
    opts: &InferenceOptions,
) -> Result<InferenceResult> {
    config.validate()?;
    if !(opts.z_range > 0.0 && opts.z_range.is_finite()) {
        return Err(Error::InvalidConfig(format!("z_range must be positive, got {}", opts.z_range)));
    }
    let output = graph.forward(inputs)?;
    let pre = graph.forward_pre_sigmoid(inputs)?;
    let sigmoid = graph.output_is_sigmoid(config.o_idx);

    let x = inputs
        .get(config.i_idx)
        .ok_or_else(|| Error::InvalidConfig(format!("input index {} out of range", config.i_idx)))?;
    let n = x.len();
    let raw = raw_score_map(config, inputs, &pre)?;
    if raw.len() != n {
        return Err(Error::shape("score", format!("score map has {} pixels, tested input has {n}", raw.len())));
    }
    let shown = score_map(config, inputs, &pre)?;
    let roi = extract_roi(config, &raw, sigmoid)?;
    let plane = plane_shape(x.shape());
    let others = non_roi(config, &roi, plane)?;
    let eta = build_eta(config, &roi, plane)?;

    let stacked = config.preset == Preset::ReferenceMeanDiff;
    let mut data = x.data().to_vec();
    if stacked {
        let r = reference.ok_or_else(|| Error::InvalidConfig("reference-mean-diff needs a reference image".into()))?;
        if r.len() != n {
            return Err(Error::shape("reference", format!("reference has {} pixels, input has {n}", r.len())));
        }
        data.extend_from_slice(r.data());
    }
    let cov = cov.fitted(data.len(), stacked)?;
    let line = line_params(&data, &eta, &cov)?;
    let (z_obs, sigma) = (line.z_obs, line.sigma_eta);

    let eps = opts.epsilon.unwrap_or(1e-6 * sigma.max(1.0));
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {eps}")));
    }
    let half = opts.z_range * sigma;
    let window = Interval::new((-half).min(z_obs - sigma), half.max(z_obs + sigma));
    let window_extended = window.lo != -half || window.hi != half;
    if window_extended {
        log::info!("search window widened to [{}, {}] around z_obs = {z_obs}", window.lo, window.hi);
    }

    let mut search = LineSearch::new(graph, config, inputs, &line, opts.memoize)?;
    let at_obs = search.oc_region(z_obs)?;
    if at_obs.pixels != roi.pixels() {
        return Err(Error::InternalInconsistency("affine selection at z_obs differs from the observed ROI".into()));
    }
    let oc = at_obs.interval;

    let region = match opts.mode {
        Mode::OverConditioning => IntervalUnion::single(oc),
        Mode::Parametric => {
            let swept = search.parametric_search(roi.pixels(), window.lo, window.hi, eps, opts.max_stall)?;
            let mut segs = swept.segments().to_vec();
            segs.extend(oc.intersect(&window));
            IntervalUnion::from_intervals(segs, eps)
        }
    };

    let p_value = two_sided_p(&region, z_obs, sigma)?;
    let oc_p_value = two_sided_p(&IntervalUnion::single(oc), z_obs, sigma)?;
    let log_naive = naive_log_p(z_obs, sigma);
    let log_m = opts.log_num_comparisons.unwrap_or(n as f64 * std::f64::consts::LN_2);

    let SessionStats { propagations, node_evaluations, cache_hits } = search.session_stats();
    let sweep = search.sweep_stats();
    Ok(InferenceResult {
        p_value,
        naive_p_value: log_naive.exp(),
        log_naive_p_value: log_naive,
        oc_p_value,
        bonferroni_p_value: bonferroni(log_naive, log_m),
        log_num_comparisons: log_m,
        z_obs,
        sigma_eta: sigma,
        truncation_region: region,
        roi: roi.pixels().to_vec(),
        non_roi: others,
        mode: opts.mode,
        diagnostics: Diagnostics {
            intervals_visited: sweep.intervals_visited,
            intervals_accepted: sweep.intervals_accepted,
            node_evaluations,
            cache_hits,
            propagations,
            epsilon: eps,
            window,
            window_extended,
            oc_interval: oc,
        },
        output,
        score_map: shown,
        roi_set: roi,
    })
}
