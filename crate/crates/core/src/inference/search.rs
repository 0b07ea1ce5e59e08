use serde::Serialize;

use super::LineParams;
use crate::affine::{ParamTensor, PropagationSession, SessionStats};
use crate::error::{Error, Result};
use crate::hypothesis::{affine_score, selection_constraints, HypothesisConfig, SelectionAt};
use crate::interval::{Interval, IntervalUnion};
use crate::ir::ModelGraph;
use crate::tensor::Tensor;

/// Counters from one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SweepStats {
    pub intervals_visited: u64,
    pub intervals_accepted: u64,
    pub narrowest_interval: f64,
}

/// Moves the tested model input along a data line and reports, at any `z`,
/// the selected pixels and the interval on which that outcome is fixed.
pub struct LineSearch<'g, 'c> {
    session: PropagationSession<'g>,
    config: &'c HypothesisConfig,
    sigmoid: bool,
    sweep: SweepStats,
}

impl<'g, 'c> LineSearch<'g, 'c> {
    /// `inputs` are the observed graph inputs; the one at `config.i_idx` is
    /// replaced by the first `len` coordinates of `line`, the others stay
    /// fixed.
    pub fn new(
        graph: &'g ModelGraph,
        config: &'c HypothesisConfig,
        inputs: &[Tensor],
        line: &LineParams,
        memoize: bool,
    ) -> Result<Self> {
        let tested = inputs
            .get(config.i_idx)
            .ok_or_else(|| Error::InvalidConfig(format!("input index {} out of range", config.i_idx)))?;
        let n = tested.len();
        if line.a.len() < n {
            return Err(Error::shape("line", format!("line has {} entries, input has {n}", line.a.len())));
        }
        let shape = tested.shape().to_vec();
        let moving = ParamTensor::new(
            Tensor::new(shape.clone(), line.a[..n].to_vec())?,
            Tensor::new(shape, line.b[..n].to_vec())?,
        )?;
        let params = inputs
            .iter()
            .enumerate()
            .map(|(k, t)| if k == config.i_idx { moving.clone() } else { ParamTensor::constant(t.clone()) })
            .collect();
        Ok(LineSearch {
            session: PropagationSession::new(graph, params, memoize)?,
            config,
            sigmoid: graph.output_is_sigmoid(config.o_idx),
            sweep: SweepStats { narrowest_interval: f64::INFINITY, ..SweepStats::default() },
        })
    }

    /// Over-conditioning interval at `z` and the pixels selected there.
    pub fn oc_region(&mut self, z: f64) -> Result<SelectionAt> {
        let prop = self.session.propagate(z)?;
        let mut valid = prop.valid;
        let score = affine_score(self.config, self.session.inputs(), &prop.outputs, &mut valid, z)?;
        selection_constraints(self.config, &score, valid, z, self.sigmoid)
    }

    /// Sweeps `[z_min, z_max]` left to right and returns the union of the
    /// visited intervals that select exactly `roi`, clipped to the window.
    /// Segments closer than `eps` are merged.
    ///
    /// Fails with `StalledSearch` after more than `max_stall` consecutive
    /// intervals narrower than `10 eps`.
    pub fn parametric_search(
        &mut self,
        roi: &[usize],
        z_min: f64,
        z_max: f64,
        eps: f64,
        max_stall: usize,
    ) -> Result<IntervalUnion> {
        let window = Interval::new(z_min, z_max);
        let mut accepted = Vec::new();
        let mut narrow_run = 0;
        let mut z = z_min;
        while z <= z_max {
            let sel = self.oc_region(z)?;
            let iv = sel.interval;
            self.sweep.intervals_visited += 1;
            self.sweep.narrowest_interval = self.sweep.narrowest_interval.min(iv.width());
            log::trace!("z = {z:.9}: [{:.9}, {:.9}], {} pixels", iv.lo, iv.hi, sel.pixels.len());
            if sel.pixels == roi {
                if let Some(c) = iv.intersect(&window) {
                    accepted.push(c);
                    self.sweep.intervals_accepted += 1;
                }
            }
            if iv.width() < 10.0 * eps {
                narrow_run += 1;
                if narrow_run > max_stall {
                    return Err(Error::StalledSearch {
                        z,
                        count: narrow_run,
                        min_width: self.sweep.narrowest_interval,
                    });
                }
            } else {
                narrow_run = 0;
            }
            if !(iv.hi < z_max) {
                break;
            }
            z = iv.hi + eps;
        }
        Ok(IntervalUnion::from_intervals(accepted, eps))
    }

    pub fn session_stats(&self) -> SessionStats {
        self.session.stats()
    }

    pub fn sweep_stats(&self) -> SweepStats {
        self.sweep
    }
}
