use super::{plane_shape, HypothesisConfig, PostProcess};
use crate::affine::ParamTensor;
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::tensor::Tensor;

fn pick<'a, T>(items: &'a [T], idx: usize, what: &str) -> Result<&'a T> {
    items
        .get(idx)
        .ok_or_else(|| Error::InvalidConfig(format!("{what} index {idx} out of range ({} available)", items.len())))
}

fn same_len(out: usize, inp: usize) -> Result<()> {
    if out != inp {
        return Err(Error::shape("input-diff", format!("output has {out} elements, input has {inp}")));
    }
    Ok(())
}

/// Normalized `k x k` kernel, row-major.
pub(crate) fn filter_kernel(step: &PostProcess) -> Option<(usize, Vec<f64>)> {
    let (k, weights) = match *step {
        PostProcess::AverageFilter { kernel_size: k } => (k, vec![1.0; k * k]),
        PostProcess::GaussianFilter { kernel_size: k, sigma } => {
            let c = (k / 2) as f64;
            let w = (0..k * k)
                .map(|i| {
                    let (dy, dx) = ((i / k) as f64 - c, (i % k) as f64 - c);
                    (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
                })
                .collect();
            (k, w)
        }
        _ => return None,
    };
    let total: f64 = weights.iter().sum();
    Some((k, weights.into_iter().map(|w| w / total).collect()))
}

/// Same-size 2-D correlation over every trailing `(H, W)` plane with zero
/// padding.
pub(crate) fn filter_planes(data: &[f64], shape: &[usize], k: usize, kernel: &[f64]) -> Vec<f64> {
    let (h, w) = plane_shape(shape);
    let r = (k / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(h * w).zip(out.chunks_mut(h * w)) {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for ky in -r..=r {
                    let yy = y + ky;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for kx in -r..=r {
                        let xx = x + kx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let wgt = kernel[((ky + r) as usize) * k + (kx + r) as usize];
                        acc += wgt * src[yy as usize * w + xx as usize];
                    }
                }
                dst[y as usize * w + x as usize] = acc;
            }
        }
    }
    out
}

/// Score map after the post-processing chain, before normalization.
///
/// `outputs` should hold pre-activation values when the scored output ends
/// in a Sigmoid (see [`crate::ir::ModelGraph::forward_pre_sigmoid`]).
pub fn raw_score_map(config: &HypothesisConfig, inputs: &[Tensor], outputs: &[Tensor]) -> Result<Tensor> {
    let mut s = pick(outputs, config.o_idx, "output")?.clone();
    for step in &config.post_process {
        s = match step {
            PostProcess::InputDiff => {
                let x = pick(inputs, config.i_idx, "input")?;
                same_len(s.len(), x.len())?;
                let data = s.data().iter().zip(x.data()).map(|(o, i)| o - i).collect();
                Tensor::new(s.shape().to_vec(), data)?
            }
            PostProcess::Abs => s.map(f64::abs),
            PostProcess::Neg => s.map(|v| -v),
            filter => {
                let (k, kernel) = filter_kernel(filter).expect("remaining steps are filters");
                let data = filter_planes(s.data(), s.shape(), k, &kernel);
                Tensor::new(s.shape().to_vec(), data)?
            }
        };
    }
    Ok(s)
}

/// Score map as reported to users: the post-processed output, min-max
/// normalized over unmasked pixels when `use_norm` is set.
pub fn score_map(config: &HypothesisConfig, inputs: &[Tensor], outputs: &[Tensor]) -> Result<Tensor> {
    let s = raw_score_map(config, inputs, outputs)?;
    if !config.use_norm {
        return Ok(s);
    }
    let excluded = config.excluded(s.len())?;
    let unmasked = || s.data().iter().zip(&excluded).filter(|(_, &e)| !e).map(|(&v, _)| v);
    let lo = unmasked().fold(f64::INFINITY, f64::min);
    let hi = unmasked().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateNormalization);
    }
    Ok(s.map(|v| (v - lo) / (hi - lo)))
}

/// The post-processing chain applied to affine outputs. Abs steps narrow
/// `valid` to the piece containing `z`.
pub fn affine_score(
    config: &HypothesisConfig,
    inputs: &[ParamTensor],
    outputs: &[ParamTensor],
    valid: &mut Interval,
    z: f64,
) -> Result<ParamTensor> {
    let mut s = pick(outputs, config.o_idx, "output")?.clone();
    for step in &config.post_process {
        s = match step {
            PostProcess::InputDiff => {
                let x = pick(inputs, config.i_idx, "input")?;
                same_len(s.len(), x.len())?;
                let x = x.clone().reshaped(s.shape().to_vec())?;
                s.sub(&x)?
            }
            PostProcess::Abs => s.abs_at(valid, z),
            PostProcess::Neg => s.scaled(-1.0),
            filter => {
                let (k, kernel) = filter_kernel(filter).expect("remaining steps are filters");
                let shape = s.shape().to_vec();
                let bias = filter_planes(s.bias().data(), &shape, k, &kernel);
                let coeff = filter_planes(s.coeff().data(), &shape, k, &kernel);
                ParamTensor::from_parts(shape, bias, coeff)
            }
        };
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::Preset;
    use approx::assert_relative_eq;

    #[test]
    fn empty_chain_is_raw_output() {
        let c = HypothesisConfig::new(Preset::BackMeanDiff, 0.0);
        let out = Tensor::vector(vec![1.0, -2.0]);
        assert_eq!(score_map(&c, &[], std::slice::from_ref(&out)).unwrap(), out);
    }

    #[test]
    fn input_diff_then_abs() {
        let c = HypothesisConfig::new(Preset::BackMeanDiff, 0.0)
            .with_post_process(vec![PostProcess::InputDiff, PostProcess::Abs]);
        let s = score_map(&c, &[Tensor::vector(vec![1.0, 1.0])], &[Tensor::vector(vec![2.0, 4.0])]).unwrap();
        assert_eq!(s.data(), &[1.0, 3.0]);
        let s = score_map(&c, &[Tensor::vector(vec![3.0, 1.0])], &[Tensor::vector(vec![2.0, 4.0])]).unwrap();
        assert_eq!(s.data(), &[1.0, 3.0]);
    }

    #[test]
    fn gaussian_impulse_response_is_the_kernel() {
        let c = HypothesisConfig::new(Preset::BackMeanDiff, 0.0)
            .with_post_process(vec![PostProcess::GaussianFilter { kernel_size: 3, sigma: 1.0 }]);
        let mut img = Tensor::zeros(vec![1, 1, 5, 5]);
        img.data_mut()[12] = 1.0;
        let s = score_map(&c, &[], &[img]).unwrap();
        let (e0, e1, e2) = (1.0, (-0.5f64).exp(), (-1.0f64).exp());
        let z = e0 + 4.0 * e1 + 4.0 * e2;
        let expect = [e2, e1, e2, e1, e0, e1, e2, e1, e2].map(|v| v / z);
        for (k, &want) in expect.iter().enumerate() {
            let (dy, dx) = (k / 3, k % 3);
            assert_relative_eq!(s.data()[(1 + dy) * 5 + 1 + dx], want, max_relative = 1e-15);
        }
        assert_relative_eq!(s.data().iter().sum::<f64>(), 1.0, max_relative = 1e-14);
        assert_eq!(s.data()[0], 0.0);
    }

    #[test]
    fn average_filter_zero_pads_the_border() {
        let c = HypothesisConfig::new(Preset::BackMeanDiff, 0.0)
            .with_post_process(vec![PostProcess::AverageFilter { kernel_size: 3 }]);
        let s = score_map(&c, &[], &[Tensor::filled(vec![3, 3], 9.0)]).unwrap();
        assert_relative_eq!(s.data()[0], 4.0, max_relative = 1e-15);
        assert_relative_eq!(s.data()[1], 6.0, max_relative = 1e-15);
        assert_relative_eq!(s.data()[4], 9.0, max_relative = 1e-15);
    }

    #[test]
    fn min_max_normalization() {
        let c = HypothesisConfig::new(Preset::BackMeanDiff, 0.5).with_norm(true);
        let s = score_map(&c, &[], &[Tensor::vector(vec![1.0, 3.0, 5.0])]).unwrap();
        assert_eq!(s.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn affine_chain_matches_concrete_chain() {
        let chain = vec![
            PostProcess::InputDiff,
            PostProcess::Abs,
            PostProcess::GaussianFilter { kernel_size: 3, sigma: 0.7 },
            PostProcess::Neg,
        ];
        let c = HypothesisConfig::new(Preset::BackMeanDiff, 0.0).with_post_process(chain);
        let shape = vec![1, 1, 3, 4];
        let a = Tensor::new(shape.clone(), (0..12).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let b = Tensor::new(shape.clone(), (0..12).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let x = ParamTensor::new(a, b).unwrap();
        let out = x.scaled(2.0);
        let z = 0.31;
        let mut valid = Interval::REAL_LINE;
        let s = affine_score(&c, std::slice::from_ref(&x), std::slice::from_ref(&out), &mut valid, z).unwrap();
        assert!(valid.contains(z));
        for zz in [z, (z + valid.lo.max(-5.0)) / 2.0, (z + valid.hi.min(5.0)) / 2.0] {
            let concrete = raw_score_map(&c, &[x.value_at(zz)], &[out.value_at(zz)]).unwrap();
            assert!(s.value_at(zz).max_abs_diff(&concrete) < 1e-12);
        }
    }
}
