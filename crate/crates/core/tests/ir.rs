mod common;

use proptest::prelude::*;
use serde_json::json;

use common::{normal_tensor, random_graph, random_scorer, rng};
use siglass::ir::{parse_model, GraphBuilder, ModelGraph, OpType};
use siglass::{Error, Tensor};

fn at(t: &Tensor, idx: [usize; 4]) -> f64 {
    let s = t.shape();
    t.data()[((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]]
}

struct ConvAttrs {
    stride: [usize; 2],
    pads: [usize; 4],
    dilation: [usize; 2],
    group: usize,
}

/// Direct loop over the definition of a grouped, strided, dilated
/// cross-correlation with zero padding.
fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, a: &ConvAttrs) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (m, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let ho = (h + a.pads[0] + a.pads[2] - a.dilation[0] * (kh - 1) - 1) / a.stride[0] + 1;
    let wo = (wd + a.pads[1] + a.pads[3] - a.dilation[1] * (kw - 1) - 1) / a.stride[1] + 1;
    let mg = m / a.group;
    assert_eq!(cg * a.group, c);
    let mut out = vec![0.0; n * m * ho * wo];
    for ni in 0..n {
        for mi in 0..m {
            let g = mi / mg;
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut s = b.data()[mi];
                    for ci in 0..cg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (yo * a.stride[0] + ky * a.dilation[0]) as isize - a.pads[0] as isize;
                                let xx = (xo * a.stride[1] + kx * a.dilation[1]) as isize - a.pads[1] as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                s += at(x, [ni, g * cg + ci, y as usize, xx as usize]) * at(w, [mi, ci, ky, kx]);
                            }
                        }
                    }
                    out[((ni * m + mi) * ho + yo) * wo + xo] = s;
                }
            }
        }
    }
    Tensor::new(vec![n, m, ho, wo], out).unwrap()
}

/// Scatter form of the transposed convolution.
fn conv_transpose_oracle(x: &Tensor, w: &Tensor, stride: usize, pad: usize, out_pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (m, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let ho = stride * (h - 1) + out_pad + kh - 2 * pad;
    let wo = stride * (wd - 1) + out_pad + kw - 2 * pad;
    let mut out = vec![0.0; n * m * ho * wo];
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..wd {
                    for mi in 0..m {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (i * stride + ky) as isize - pad as isize;
                                let xx = (j * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= ho as isize || xx >= wo as isize {
                                    continue;
                                }
                                out[((ni * m + mi) * ho + y as usize) * wo + xx as usize] +=
                                    at(x, [ni, ci, i, j]) * at(w, [ci, mi, ky, kx]);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, m, ho, wo], out).unwrap()
}

fn close(a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape());
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()), "{u} vs {v}");
    }
}

#[test]
fn conv_matches_direct_loops() {
    let cases = [
        ([1, 1, 5, 5], [1, 1, 3, 3], ConvAttrs { stride: [1, 1], pads: [0; 4], dilation: [1, 1], group: 1 }),
        ([2, 3, 7, 6], [4, 3, 3, 2], ConvAttrs { stride: [2, 1], pads: [1, 0, 1, 1], dilation: [1, 1], group: 1 }),
        ([1, 4, 9, 9], [6, 2, 3, 3], ConvAttrs { stride: [1, 2], pads: [2, 2, 2, 2], dilation: [2, 2], group: 2 }),
    ];
    for (k, (xs, ws, a)) in cases.into_iter().enumerate() {
        let mut r = rng(k as u64);
        let x = normal_tensor(&mut r, xs.to_vec(), 1.0);
        let w = normal_tensor(&mut r, ws.to_vec(), 1.0);
        let b = normal_tensor(&mut r, vec![ws[0]], 1.0);
        let mut g = GraphBuilder::new();
        let xi = g.input("x", xs.to_vec());
        let wi = g.constant("w", w.clone());
        let bi = g.constant("b", b.clone());
        let y = g.node(
            OpType::Conv,
            &[&xi, &wi, &bi],
            json!({ "strides": a.stride, "pads": a.pads, "dilations": a.dilation, "group": a.group }),
        );
        let graph = g.build(&[&y]).unwrap();
        let want = conv_oracle(&x, &w, &b, &a);
        assert_eq!(graph.outputs()[0].shape, want.shape());
        close(&graph.forward(&[x]).unwrap()[0], &want);
    }
}

#[test]
fn conv_transpose_matches_scatter() {
    for (k, (stride, pad, out_pad)) in [(1, 0, 0), (2, 0, 0), (2, 1, 1), (3, 1, 0)].into_iter().enumerate() {
        let mut r = rng(100 + k as u64);
        let x = normal_tensor(&mut r, vec![1, 2, 4, 3], 1.0);
        let w = normal_tensor(&mut r, vec![2, 3, 3, 3], 1.0);
        let mut g = GraphBuilder::new();
        let xi = g.input("x", vec![1, 2, 4, 3]);
        let wi = g.constant("w", w.clone());
        let y = g.node(
            OpType::ConvTranspose,
            &[&xi, &wi],
            json!({ "strides": [stride, stride], "pads": [pad, pad, pad, pad], "output_padding": [out_pad, out_pad] }),
        );
        let graph = g.build(&[&y]).unwrap();
        close(
            &graph.forward(std::slice::from_ref(&x)).unwrap()[0],
            &conv_transpose_oracle(&x, &w, stride, pad, out_pad),
        );
    }
}

#[test]
fn pooling_by_hand() {
    let x = Tensor::new(vec![1, 1, 3, 4], (0..12).map(|v| ((v * 7) % 12) as f64).collect()).unwrap();
    // [[0, 7, 2, 9], [4, 11, 6, 1], [8, 3, 10, 5]]
    let mut g = GraphBuilder::new();
    let xi = g.input("x", vec![1, 1, 3, 4]);
    let mx = g.max_pool(&xi, 2, 2);
    let avg =
        g.node(OpType::AveragePool, &[&xi], json!({ "kernel_shape": [2, 2], "strides": [1, 2], "pads": [0, 0, 1, 0] }));
    let gap = g.node(OpType::GlobalAveragePool, &[&xi], json!({}));
    let graph = g.build(&[&mx, &avg, &gap]).unwrap();
    let out = graph.forward(&[x]).unwrap();
    assert_eq!(out[0].data(), [11.0, 9.0]);
    // Padding does not count towards the average by default.
    assert_eq!(out[1].shape(), [1, 1, 3, 2]);
    assert_eq!(out[1].data(), [5.5, 4.5, 6.5, 5.5, 5.5, 7.5]);
    assert_eq!(out[2].data(), [5.5]);
}

#[test]
fn gemm_and_shape_ops_by_hand() {
    let mut g = GraphBuilder::new();
    let x = g.input("x", vec![1, 2, 2, 1]);
    let flat = g.node(OpType::Flatten, &[&x], json!({ "axis": 1 }));
    let w = g.constant("w", Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 2.0]).unwrap());
    let b = g.constant("b", Tensor::vector(vec![0.5, -0.5]));
    let y = g.node(OpType::Gemm, &[&flat, &w, &b], json!({}));
    let z = g.node(OpType::MulScalar, &[&y], json!({ "value": 2.0 }));
    let graph = g.build(&[&z]).unwrap();
    let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    // [1 2 3 4] W = [1 + 3 - 4, 2 + 3 + 8] = [0, 13]
    assert_eq!(graph.forward(&[x]).unwrap()[0].data(), [1.0, 25.0]);
}

fn round_trip(graph: &ModelGraph, b64: bool) -> ModelGraph {
    parse_model(graph.to_json(b64).as_bytes()).unwrap()
}

#[test]
fn documents_round_trip_exactly() {
    for seed in 0..10 {
        let graph = random_graph(seed);
        let x = normal_tensor(&mut rng(seed + 500), vec![1, 2, 6, 6], 1.0);
        let want = graph.forward(std::slice::from_ref(&x)).unwrap();
        for b64 in [false, true] {
            let back = round_trip(&graph, b64);
            assert_eq!(back.nodes(), graph.nodes());
            assert_eq!(back.initializers(), graph.initializers());
            assert_eq!(back.forward(std::slice::from_ref(&x)).unwrap(), want);
            assert_eq!(back.to_json(b64), graph.to_json(b64));
        }
    }
}

#[test]
fn unsupported_nodes_are_all_listed() {
    let doc = json!({
        "ir_version": 1,
        "inputs": [{ "name": "x", "shape": [1, 3] }],
        "outputs": [{ "name": "z", "shape": [1, 3] }],
        "nodes": [
            { "name": "a", "op_type": "Exp", "inputs": ["x"], "outputs": ["y"] },
            { "name": "b", "op_type": "Softmax", "inputs": ["y"], "outputs": ["z"] }
        ]
    });
    match parse_model(doc.to_string().as_bytes()) {
        Err(Error::UnsupportedOperator(bad)) => assert_eq!(bad, ["a (Exp)", "b (Softmax)"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let graph = random_scorer(3, 2, 6, 6);
    let x = Tensor::zeros(vec![1, 1, 6, 5]);
    assert!(matches!(graph.forward(&[x]), Err(Error::ShapeMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Without Sigmoid, `t -> forward(x + t d)` is continuous and affine
    /// between kinks: second differences vanish wherever the piece
    /// signature is the same at three equally spaced points.
    #[test]
    fn forward_is_piecewise_affine(seed in 0u64..1000, t in -2.0f64..2.0) {
        let graph = random_scorer(seed, 3, 6, 6);
        let mut r = rng(seed);
        let x = normal_tensor(&mut r, vec![1, 1, 6, 6], 1.0);
        let d = normal_tensor(&mut r, vec![1, 1, 6, 6], 1.0);
        let h = 1e-3;
        let pts: Vec<Tensor> = [-h, 0.0, h].iter().map(|s| x.zip_with(&d, |u, v| u + (t + s) * v).unwrap()).collect();
        let outs: Vec<Tensor> = pts.iter().map(|p| graph.forward(std::slice::from_ref(p)).unwrap().remove(0)).collect();
        let sigs: Vec<Vec<u32>> = pts.iter().map(|p| graph.piece_signature(std::slice::from_ref(p)).unwrap()).collect();
        for k in 0..outs[0].len() {
            let (a, b, c) = (outs[0].data()[k], outs[1].data()[k], outs[2].data()[k]);
            // Continuity: neighbouring values stay close.
            prop_assert!((a - b).abs() < 1.0 && (c - b).abs() < 1.0);
            if sigs[0] == sigs[1] && sigs[1] == sigs[2] {
                prop_assert!((a - 2.0 * b + c).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}
