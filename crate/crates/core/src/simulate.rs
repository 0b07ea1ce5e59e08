//! Monte-Carlo studies of p-value calibration and power.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::hypothesis::{HypothesisConfig, Preset};
use crate::inference::{inference, Covariance, InferenceOptions};
use crate::ir::ModelGraph;
use crate::synth::SynthSpec;

/// Levels at which rejection rates are reported.
pub const ALPHAS: [f64; 3] = [0.01, 0.05, 0.1];

/// Offset between the seeds of the test and reference image streams.
pub const REFERENCE_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub p_value: f64,
    pub naive_p_value: f64,
    pub bonferroni_p_value: f64,
    pub oc_p_value: f64,
    pub intervals_visited: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedTrial {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    /// `(alpha, rate)` pairs for [`ALPHAS`].
    pub rejection_rates: Vec<(f64, f64)>,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub sorted: Vec<f64>,
}

impl Summary {
    pub fn from_p_values(mut ps: Vec<f64>) -> Self {
        ps.sort_by(f64::total_cmp);
        let n = ps.len().max(1) as f64;
        let rejection_rates = ALPHAS.iter().map(|&a| (a, ps.iter().filter(|&&p| p <= a).count() as f64 / n)).collect();
        let (d, p) = ks_uniform(&ps);
        Summary { rejection_rates, ks_statistic: d, ks_p_value: p, sorted: ps }
    }

    pub fn rejection_rate(&self, alpha: f64) -> Option<f64> {
        self.rejection_rates.iter().find(|(a, _)| *a == alpha).map(|&(_, r)| r)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub trials: Vec<TrialOutcome>,
    /// Trials whose ROI was empty, full or otherwise untestable.
    pub degenerate: Vec<SkippedTrial>,
    /// Trials that failed for any other reason.
    pub failed: Vec<SkippedTrial>,
    pub selective: Summary,
    pub naive: Summary,
    pub bonferroni: Summary,
    pub over_conditioning: Summary,
}

/// Data-generating part of a study. Image `i` comes from
/// [`SynthSpec::sample`] with index `i`; reference images, when the preset
/// needs them, are null samples from a stream seeded `seed + 2^32`.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub data: SynthSpec,
    pub trials: usize,
}

/// Runs every trial, in parallel, reporting them in index order.
pub fn simulate(
    graph: &ModelGraph,
    config: &HypothesisConfig,
    cov: &Covariance,
    opts: &InferenceOptions,
    study: &StudySpec,
) -> Result<SimulationReport> {
    study.data.validate()?;
    let mut reference = study.data.clone();
    reference.local_signal = 0.0;
    reference.seed = reference.seed.wrapping_add(REFERENCE_SEED_OFFSET);
    let needs_ref = config.preset == Preset::ReferenceMeanDiff;

    let results: Vec<_> = (0..study.trials)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let x = study.data.sample(i as u64)?.image;
            let r = if needs_ref { Some(reference.sample(i as u64)?.image) } else { None };
            Ok(inference(graph, config, &[x], r.as_ref(), cov, opts))
        })
        .collect::<Result<_>>()?;

    let mut trials = Vec::new();
    let mut degenerate = Vec::new();
    let mut failed = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) => trials.push(TrialOutcome {
                index,
                p_value: res.p_value,
                naive_p_value: res.naive_p_value,
                bonferroni_p_value: res.bonferroni_p_value,
                oc_p_value: res.oc_p_value,
                intervals_visited: res.diagnostics.intervals_visited,
            }),
            Err(e) if e.is_degenerate() => degenerate.push(SkippedTrial { index, reason: e.to_string() }),
            Err(e) => {
                log::warn!("trial {index} failed: {e}");
                failed.push(SkippedTrial { index, reason: e.to_string() })
            }
        }
    }
    let column = |f: fn(&TrialOutcome) -> f64| Summary::from_p_values(trials.iter().map(f).collect());
    Ok(SimulationReport {
        selective: column(|t| t.p_value),
        naive: column(|t| t.naive_p_value),
        bonferroni: column(|t| t.bonferroni_p_value),
        over_conditioning: column(|t| t.oc_p_value),
        trials,
        degenerate,
        failed,
    })
}

/// One-sample Kolmogorov-Smirnov test of sorted values against
/// Uniform(0, 1): statistic and asymptotic p-value with Stephens'
/// small-sample correction.
pub fn ks_uniform(sorted: &[f64]) -> (f64, f64) {
    if sorted.is_empty() {
        return (0.0, 1.0);
    }
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let p = p.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - p).max(p - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    (d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form, fast for small arguments.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (0..20).map(|j| (-((2 * j + 1) as f64).powi(2) * c).exp()).sum();
        (1.0 - (std::f64::consts::TAU).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}
