//! Worst-case gap between the int8-weight and float forward passes.
//!
//! For a CONV/FC layer with float weights `w`, quantized weights `w'`
//! (`|w' - w| <= scale / 2`), float-path input `x` and quantized-path input
//! `x'` with `|x' - x| <= e` element-wise, each output satisfies
//!
//! ```text
//! |y' - y| <= sum |w'| e + (scale / 2) sum |x| + rounding
//! ```
//!
//! where the sums run over the output's receptive field. ReLU and max pool
//! are 1-Lipschitz in the max norm, so they pass the bound through (max
//! pool takes the window maximum). `rounding` covers f32 accumulation in
//! both passes: `gamma(n) * (sum |w| |x| + sum |w'| (|x| + e) + 2 |b|)` with
//! `gamma(n) = (n + 4) u / (1 - (n + 4) u)`, `u = 2^-24`.

use super::layers::{FeatureMap, Layer, LayerStack};
use super::DetectorError;

const UNIT_ROUNDOFF: f64 = 1.0 / 16_777_216.0;

fn gamma(n: usize) -> f64 {
    let k = (n + 4) as f64 * UNIT_ROUNDOFF;
    k / (1.0 - k)
}

/// Per-output bound on `|quantized_forward - float_forward|`.
///
/// `float_stack` and `quant_stack` must share architecture; every CONV/FC
/// layer of `quant_stack` must hold int8 weights calibrated from the
/// corresponding float weights.
pub fn propagated_error_bound(
    float_stack: &LayerStack,
    quant_stack: &LayerStack,
    input: &FeatureMap,
) -> Result<Vec<f64>, DetectorError> {
    let trace = float_stack.forward_trace(input)?;
    let mut err = vec![0.0f64; input.data.len()];
    for (i, (lf, lq)) in float_stack
        .layers()
        .iter()
        .zip(quant_stack.layers())
        .enumerate()
    {
        let x = &trace[i];
        err = match (lf, lq) {
            (
                Layer::Conv {
                    in_channels,
                    out_channels,
                    weights: wf,
                    bias,
                },
                Layer::Conv { weights: wq, .. },
            ) => {
                let q = wq.quantized().ok_or(DetectorError::NotQuantized(i))?;
                let half = f64::from(q.scale()) / 2.0;
                conv_bound(
                    x,
                    *in_channels,
                    *out_channels,
                    wf.as_float(),
                    wq.as_float(),
                    bias,
                    half,
                    &err,
                )
            }
            (
                Layer::Fc {
                    in_features,
                    out_features,
                    weights: wf,
                    bias,
                },
                Layer::Fc { weights: wq, .. },
            ) => {
                let q = wq.quantized().ok_or(DetectorError::NotQuantized(i))?;
                let half = f64::from(q.scale()) / 2.0;
                fc_bound(
                    &x.data,
                    *in_features,
                    *out_features,
                    wf.as_float(),
                    wq.as_float(),
                    bias,
                    half,
                    &err,
                )
            }
            (Layer::Relu, Layer::Relu) => err,
            (Layer::MaxPool, Layer::MaxPool) => pool_bound(x, &err),
            _ => {
                return Err(DetectorError::Architecture(format!(
                    "layer {i} differs between float and quantized stacks"
                )))
            }
        };
    }
    Ok(err)
}

#[allow(clippy::too_many_arguments)]
fn conv_bound(
    x: &FeatureMap,
    in_c: usize,
    out_c: usize,
    wf: &[f32],
    wq: &[f32],
    bias: &[f32],
    half_scale: f64,
    e: &[f64],
) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let mut out = vec![0.0; out_c * h * w];
    for oc in 0..out_c {
        for oy in 0..h {
            for ox in 0..w {
                let (mut prop, mut abs_x, mut abs_wx, mut abs_wqx, mut n) =
                    (0.0, 0.0, 0.0, 0.0, 0usize);
                for ic in 0..in_c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = (oy + ky, ox + kx);
                            if iy < 1 || ix < 1 || iy > h || ix > w {
                                continue;
                            }
                            let idx = (ic * h + iy - 1) * w + ix - 1;
                            let widx = ((oc * in_c + ic) * 3 + ky) * 3 + kx;
                            let xv = f64::from(x.data[idx]).abs();
                            let wqv = f64::from(wq[widx]).abs();
                            prop += wqv * e[idx];
                            abs_x += xv;
                            abs_wx += f64::from(wf[widx]).abs() * xv;
                            abs_wqx += wqv * (xv + e[idx]);
                            n += 1;
                        }
                    }
                }
                let b = f64::from(bias[oc]).abs();
                out[(oc * h + oy) * w + ox] =
                    prop + half_scale * abs_x + gamma(n) * (abs_wx + abs_wqx + 2.0 * b);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn fc_bound(
    x: &[f32],
    in_f: usize,
    out_f: usize,
    wf: &[f32],
    wq: &[f32],
    bias: &[f32],
    half_scale: f64,
    e: &[f64],
) -> Vec<f64> {
    (0..out_f)
        .map(|o| {
            let (mut prop, mut abs_x, mut abs_wx, mut abs_wqx) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..in_f {
                let xv = f64::from(x[i]).abs();
                let wqv = f64::from(wq[o * in_f + i]).abs();
                prop += wqv * e[i];
                abs_x += xv;
                abs_wx += f64::from(wf[o * in_f + i]).abs() * xv;
                abs_wqx += wqv * (xv + e[i]);
            }
            let b = f64::from(bias[o]).abs();
            prop + half_scale * abs_x + gamma(in_f) * (abs_wx + abs_wqx + 2.0 * b)
        })
        .collect()
}

fn pool_bound(x: &FeatureMap, e: &[f64]) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(x.channels * oh * ow);
    for c in 0..x.channels {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| e[(c * h + 2 * y + dy) * w + 2 * xx + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}
