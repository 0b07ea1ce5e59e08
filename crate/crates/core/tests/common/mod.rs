//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde_json::json;

use siglass::hypothesis::{extract_roi, raw_score_map, HypothesisConfig};
use siglass::inference::LineParams;
use siglass::ir::{GraphBuilder, ModelGraph, OpType};
use siglass::Tensor;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn normal_tensor(rng: &mut StdRng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

/// `mean + spread * N(0, 1)` entries.
pub fn shifted_tensor(rng: &mut StdRng, shape: Vec<usize>, mean: f64, spread: f64) -> Tensor {
    normal_tensor(rng, shape, spread).map(|v| v + mean)
}

pub const CENTRE: [f64; 9] = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
/// Mean over the 2x2 block whose top-left corner is the output pixel.
pub const BOX2: [f64; 9] = [0.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.0, 0.25, 0.25];

/// Weight distribution of [`conv_relu_conv`].
#[derive(Debug, Clone, Copy)]
pub struct ConvNetShape {
    pub hidden: usize,
    /// Mean first-layer kernel; the second layer uses its point reflection.
    pub kernel: [f64; 9],
    /// Spread of the random kernel weights.
    pub spread: f64,
    /// Mean first-layer bias.
    pub bias: f64,
    /// Scale of the second layer.
    pub gain: f64,
    /// Score added to the bottom-right pixel through a constant hidden
    /// channel, so that the ROI is rarely empty.
    pub anchor: f64,
}

impl Default for ConvNetShape {
    fn default() -> Self {
        ConvNetShape { hidden: 4, kernel: CENTRE, spread: 0.05, bias: -1.5, gain: 1.0, anchor: 0.0 }
    }
}

/// Conv(3x3) -> Relu -> Conv(3x3) on `1 x 1 x h x w` with random weights
/// drawn from `seed` around centre-heavy kernels.
pub fn conv_relu_conv(seed: u64, shape: ConvNetShape, h: usize, w: usize) -> ModelGraph {
    let ConvNetShape { hidden, kernel, spread, bias, gain, anchor } = shape;
    let channels = hidden + usize::from(anchor != 0.0);
    let mut r = rng(seed);
    let mut g = GraphBuilder::new();
    let x = g.input("x", vec![1, 1, h, w]);
    let mut w1 = normal_tensor(&mut r, vec![channels, 1, 3, 3], spread);
    for c in 0..hidden {
        for (w, k) in w1.data_mut()[c * 9..(c + 1) * 9].iter_mut().zip(kernel) {
            *w += k;
        }
    }
    let mut b1 = shifted_tensor(&mut r, vec![channels], bias, 0.1);
    let k = gain / hidden as f64;
    let mut w2 = normal_tensor(&mut r, vec![1, channels, 3, 3], spread * k);
    if anchor != 0.0 {
        // The constant channel reaches a pixel through the taps at offsets
        // (0,0), (1,0), (0,1), (1,1) that stay in bounds; the signed sum
        // below is nonzero only where the last three fall outside.
        w1.data_mut()[hidden * 9..].fill(0.0);
        b1.data_mut()[hidden] = 1.0;
        let w = &mut w2.data_mut()[hidden * 9..];
        w.fill(0.0);
        w[4] = anchor;
        w[5] = -anchor;
        w[7] = -anchor;
        w[8] = anchor;
    }
    let y = g.conv2d(&x, w1, Some(b1), 1);
    let y = g.relu(&y);
    for c in 0..hidden {
        for j in 0..9 {
            w2.data_mut()[c * 9 + j] += k * kernel[8 - j];
        }
    }
    let y = g.conv2d(&y, w2, None, 1);
    g.build(&[&y]).unwrap()
}

/// Random same-size scorer on `1 x 1 x h x w` (`h`, `w` even) with
/// `piecewise` layers drawn from Relu, LeakyRelu, Abs and MaxPool blocks,
/// some wrapped in residual or batch-norm structure.
pub fn random_scorer(seed: u64, piecewise: usize, h: usize, w: usize) -> ModelGraph {
    let mut r = rng(seed);
    let mut g = GraphBuilder::new();
    let mut x = g.input("x", vec![1, 1, h, w]);
    let mut c = 1;
    for _ in 0..piecewise {
        let c_out = r.random_range(2..=4);
        let wt = shifted_tensor(&mut r, vec![c_out, c, 3, 3], 0.1, 0.3);
        let b = normal_tensor(&mut r, vec![c_out], 0.2);
        let mut y = g.conv2d(&x, wt, Some(b), 1);
        if r.random_bool(0.3) {
            let scale = g.constant("s", shifted_tensor(&mut r, vec![c_out], 1.0, 0.2));
            let shift = g.constant("t", normal_tensor(&mut r, vec![c_out], 0.1));
            let mean = g.constant("m", normal_tensor(&mut r, vec![c_out], 0.1));
            let var = g.constant("v", shifted_tensor(&mut r, vec![c_out], 1.0, 0.0));
            y = g.node(OpType::BatchNormalization, &[&y, &scale, &shift, &mean, &var], json!({}));
        }
        y = match r.random_range(0..4) {
            0 => g.relu(&y),
            1 => g.node(OpType::LeakyRelu, &[&y], json!({ "alpha": 0.1 })),
            2 => g.node(OpType::Abs, &[&y], json!({})),
            _ => {
                let p = g.max_pool(&y, 2, 2);
                g.node(OpType::UpsampleNearest, &[&p], json!({ "scales": [2, 2] }))
            }
        };
        if c_out == c && r.random_bool(0.5) {
            y = g.node(OpType::Add, &[&y, &x], json!({}));
        }
        x = y;
        c = c_out;
    }
    let wt = shifted_tensor(&mut r, vec![1, c, 3, 3], 0.1, 0.3);
    let y = g.conv2d(&x, wt, None, 1);
    g.build(&[&y]).unwrap()
}

/// Random graph with a wider operator mix for propagation checks; the
/// output need not match the input size.
pub fn random_graph(seed: u64) -> ModelGraph {
    let mut r = rng(seed);
    let mut g = GraphBuilder::new();
    let x = g.input("x", vec![1, 2, 6, 6]);
    let w1 = normal_tensor(&mut r, vec![3, 2, 3, 3], 0.5);
    let b1 = normal_tensor(&mut r, vec![3], 0.3);
    let y = g.conv2d(&x, w1, Some(b1), 1);
    let y = match r.random_range(0..3) {
        0 => g.relu(&y),
        1 => g.node(OpType::LeakyRelu, &[&y], json!({ "alpha": 0.2 })),
        _ => g.node(OpType::Abs, &[&y], json!({})),
    };
    let pool = r.random_range(0..3);
    let y = match pool {
        0 => g.max_pool(&y, 2, 2),
        1 => g.node(OpType::AveragePool, &[&y], json!({ "kernel_shape": [2, 2], "strides": [2, 2] })),
        _ => g.node(OpType::MaxPool, &[&y], json!({ "kernel_shape": [3, 3], "strides": [1, 1], "pads": [1, 1, 1, 1] })),
    };
    let wt = normal_tensor(&mut r, vec![3, 2, 2, 2], 0.5);
    let wt = g.constant("wt", wt);
    let up = g.node(OpType::ConvTranspose, &[&y, &wt], json!({ "strides": [2, 2] }));
    let up = g.relu(&up);
    let flat = g.node(OpType::Flatten, &[&up], json!({ "axis": 1 }));
    let full = if pool == 2 { 2 * 12 * 12 } else { 2 * 6 * 6 };
    let k = if r.random_bool(0.5) { full } else { full / 2 };
    let feats = if k == full {
        flat
    } else {
        g.node(OpType::Slice, &[&flat], json!({ "starts": [0], "ends": [k], "axes": [1] }))
    };
    let wd = g.constant("wd", normal_tensor(&mut r, vec![k, 5], 0.1));
    let bd = g.constant("bd", normal_tensor(&mut r, vec![5], 0.1));
    let d = g.node(OpType::Gemm, &[&feats, &wd, &bd], json!({}));
    let d = g.node(OpType::Abs, &[&d], json!({}));
    let neg = g.node(OpType::Neg, &[&d], json!({}));
    let d = g.node(OpType::Concat, &[&d, &neg], json!({ "axis": 1 }));
    g.build(&[&d]).unwrap()
}

/// ROI selected at `line.point(z)` by a plain forward pass, or `None` when
/// the selection is degenerate there.
pub fn roi_on_line(
    graph: &ModelGraph,
    config: &HypothesisConfig,
    shape: &[usize],
    line: &LineParams,
    z: f64,
) -> Option<Vec<usize>> {
    let n: usize = shape.iter().product();
    let x = Tensor::new(shape.to_vec(), line.point(z)[..n].to_vec()).unwrap();
    let out = graph.forward_pre_sigmoid(std::slice::from_ref(&x)).ok()?;
    let s = raw_score_map(config, &[x], &out).ok()?;
    extract_roi(config, &s, graph.output_is_sigmoid(config.o_idx)).ok().map(|r| r.pixels().to_vec())
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log P(lo <= N(0, sigma^2) <= hi)` by adaptive quadrature of the density
/// with its peak over the segment factored out.
pub fn quad_log_mass(lo: f64, hi: f64, sigma: f64) -> f64 {
    if !(lo < hi) {
        return f64::NEG_INFINITY;
    }
    let (lo, hi) = (lo / sigma, hi / sigma);
    let peak = if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        hi
    } else {
        0.0
    };
    // exp(-(t^2 - peak^2) / 2) <= 1 on the segment; beyond 40 units past the
    // peak it is below e^-800.
    let lo_c = lo.max(peak - 40.0);
    let hi_c = hi.min(peak + 40.0);
    let f = |t: f64| (-(t - peak) * (t + peak) / 2.0).exp();
    let mut total = 0.0;
    // Quarter-unit pieces keep each integrand nearly polynomial.
    let mut cuts = vec![lo_c];
    let mut t = (lo_c * 4.0).floor() / 4.0 + 0.25;
    while t < hi_c {
        cuts.push(t);
        t += 0.25;
    }
    cuts.push(hi_c);
    for w in cuts.windows(2) {
        total += quadrature::integrate(f, w[0], w[1], 1e-16).integral;
    }
    -peak * peak / 2.0 + total.ln() - LN_SQRT_2PI
}

/// Two-sided truncated-normal p-value from [`quad_log_mass`].
pub fn quad_two_sided_p(segments: &[(f64, f64)], z_obs: f64, sigma: f64) -> f64 {
    let c = z_obs.abs();
    let mut tails = Vec::new();
    let mut all = Vec::new();
    for &(lo, hi) in segments {
        all.push(quad_log_mass(lo, hi, sigma));
        tails.push(quad_log_mass(lo, hi.min(-c), sigma));
        tails.push(quad_log_mass(lo.max(c), hi, sigma));
    }
    let lse = |v: &[f64]| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    (lse(&tails) - lse(&all)).exp()
}
