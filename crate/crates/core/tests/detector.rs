mod common;

use common::*;
use infergate::detector::bound::propagated_error_bound;
use infergate::detector::{
    decode, nms, Architecture, FeatureMap, HeadSpec, Layer, LayerStack, LayerWeights, Shape,
};
use infergate::quant::{dequantize_tensor, quantize_calibrated};
use infergate::{BBox, Detection};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn forward_matches_nested_loop_oracle() {
    let mut r = rng(1);
    for _ in 0..40 {
        let stack = random_micro_model(&mut r);
        let img = random_image(&mut r, stack.input_shape());
        let got = stack.forward_features(&img).unwrap().data;
        let want = naive_forward(&stack, &img);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((f64::from(*g) - w).abs() <= 1e-5, "{g} vs {w}");
        }
    }
}

#[test]
fn quantized_forward_within_propagated_bound() {
    let mut r = rng(2);
    for _ in 0..40 {
        let stack = random_micro_model(&mut r);
        let q = stack.quantized(&vec![true; stack.layers().len()]).unwrap();
        let img = random_image(&mut r, stack.input_shape());
        let f = stack.forward_features(&img).unwrap().data;
        let g = q.forward_quantized_features(&img).unwrap().data;
        let bound = propagated_error_bound(&stack, &q, &img).unwrap();
        for ((a, b), e) in f.iter().zip(&g).zip(&bound) {
            assert!(f64::from((a - b).abs()) <= *e, "{a} {b} bound {e}");
        }
    }
}

/// Replaces every CONV/FC weight with its own quantize-dequantize image, so
/// the weights sit exactly on the int8 grid.
fn snap_to_grid(stack: &LayerStack) -> LayerStack {
    let layers = stack
        .layers()
        .iter()
        .cloned()
        .map(|mut l| {
            if let Layer::Conv { weights, .. } | Layer::Fc { weights, .. } = &mut l {
                let w = weights.as_float().to_vec();
                let q = quantize_calibrated(&w, &[w.len()]).unwrap();
                *weights = LayerWeights::Float(dequantize_tensor(&q));
            }
            l
        })
        .collect();
    LayerStack::new(stack.input_shape(), layers, stack.head()).unwrap()
}

#[test]
fn grid_exact_weights_match_float_forward() {
    let mut r = rng(3);
    for _ in 0..20 {
        let stack = snap_to_grid(&random_micro_model(&mut r));
        let q = stack.quantized(&vec![true; stack.layers().len()]).unwrap();
        // Snapped weights re-quantize to identical values.
        for (a, b) in stack.layers().iter().zip(q.layers()) {
            if let (Some(wa), Some(wb)) = (a.weights(), b.weights()) {
                assert_eq!(wa.as_float(), wb.as_float());
            }
        }
        let img = random_image(&mut r, stack.input_shape());
        let f = stack.forward_features(&img).unwrap().data;
        let g = q.forward_quantized_features(&img).unwrap().data;
        for (a, b) in f.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_image_follows_bias_path() {
    let mut r = rng(4);
    let stack = Architecture::parse("c4 r p c8 r f12 r f6")
        .unwrap()
        .build(
            Shape::new(3, 8, 8),
            Some(HeadSpec {
                boxes: 1,
                classes: 1,
            }),
            17,
        )
        .unwrap();
    let _ = r.random::<u8>();
    let q = stack.quantized(&vec![true; stack.layers().len()]).unwrap();
    let zero = FeatureMap::zeros(3, 8, 8);
    let trace_f = stack.forward_trace(&zero).unwrap();
    // First conv sees zeros: both paths output its bias exactly.
    let first_q = LayerStack::new(stack.input_shape(), q.layers()[..1].to_vec(), None)
        .unwrap()
        .forward_quantized_features(&zero)
        .unwrap();
    assert_eq!(first_q.data, trace_f[1].data);
    let f = stack.forward_features(&zero).unwrap().data;
    let g = q.forward_quantized_features(&zero).unwrap().data;
    let bound = propagated_error_bound(&stack, &q, &zero).unwrap();
    for ((a, b), e) in f.iter().zip(&g).zip(&bound) {
        assert!(f64::from((a - b).abs()) <= *e);
    }
}

#[test]
fn bound_tightens_with_quantization_range() {
    // A single FC layer isolates the weight term: halving the weight range
    // halves the scale and therefore the bound.
    let mut r = rng(5);
    for _ in 0..10 {
        let n_in = r.random_range(2..12);
        let n_out = r.random_range(1..6);
        let w = uniform(&mut r, n_in * n_out, 1.0);
        let mk = |w: Vec<f32>| {
            LayerStack::new(
                Shape::new(n_in, 1, 1),
                vec![Layer::Fc {
                    in_features: n_in,
                    out_features: n_out,
                    weights: LayerWeights::Float(w),
                    bias: vec![0.0; n_out],
                }],
                None,
            )
            .unwrap()
        };
        let full = mk(w.clone());
        let half = mk(w.iter().map(|v| v * 0.5).collect());
        let x = random_image(&mut r, Shape::new(n_in, 1, 1));
        let b_full = propagated_error_bound(&full, &full.quantized(&[true]).unwrap(), &x).unwrap();
        let b_half = propagated_error_bound(&half, &half.quantized(&[true]).unwrap(), &x).unwrap();
        for (a, b) in b_full.iter().zip(&b_half) {
            assert!(b < a);
            assert!((b / a - 0.5).abs() < 1e-4);
        }
    }
}

#[test]
fn maxpool_matches_window_max() {
    let mut r = rng(6);
    for _ in 0..30 {
        let shape = Shape::new(
            r.random_range(1..4),
            r.random_range(2..17),
            r.random_range(2..17),
        );
        let stack = LayerStack::new(shape, vec![Layer::MaxPool], None).unwrap();
        let img = random_image(&mut r, shape);
        let out = stack.forward_features(&img).unwrap();
        assert_eq!((out.height, out.width), (shape.height / 2, shape.width / 2));
        let want = naive_forward(&stack, &img);
        for (g, w) in out.data.iter().zip(&want) {
            assert_eq!(f64::from(*g), *w);
        }
    }
}

#[test]
fn decode_after_forward_is_pure() {
    let mut r = rng(7);
    let stack = random_micro_model(&mut r);
    let img = random_image(&mut r, stack.input_shape());
    let a = decode(&stack.forward(&img).unwrap(), 0.0, 640, 480);
    let b = decode(&stack.forward(&img).unwrap(), 0.0, 640, 480);
    assert_eq!(a, b);
}

#[test]
fn nms_matches_reference_on_random_boxes() {
    let mut r = rng(8);
    for _ in 0..200 {
        let dets: Vec<Detection> = (0..10)
            .map(|_| {
                Detection::new(
                    r.random_range(0..2),
                    r.random_range(0.0f32..1.0),
                    random_box(&mut r, 60, 60),
                )
            })
            .collect();
        for thr in [0.3, 0.45, 0.7] {
            assert_eq!(nms(&dets, thr), brute_force_nms(&dets, thr));
        }
    }
}

proptest! {
    #[test]
    fn nms_output_is_an_antichain(
        raw in prop::collection::vec((0u16..3, 0.0f32..1.0, 0u16..50, 0u16..50, 1u16..30, 1u16..30), 0..25),
        thr in 0.1f64..1.0,
    ) {
        let dets: Vec<Detection> = raw
            .into_iter()
            .map(|(l, c, x, y, w, h)| Detection::new(l, c, BBox::new(x, y, x + w, y + h)))
            .collect();
        let kept = nms(&dets, thr);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.label_id != b.label_id || a.bbox.iou(&b.bbox) < thr);
            }
        }
        // Every input is either kept or covered by a kept detection.
        for d in &dets {
            prop_assert!(kept.iter().any(|k| k == d
                || (k.label_id == d.label_id && k.bbox.iou(&d.bbox) >= thr && k.confidence >= d.confidence)));
        }
    }
}
