//! Reference pipeline: direct integer arithmetic with the same fixed-point
//! constants as the simulator and no memory model at all.

use super::model::{ConvLayer, Layer, Network, PoolLayer, PoolOp};
use crate::error::Result;
use crate::primitives::FixedPointTensor;

/// Sliding-window dot products for every kernel, `[k][oy][ox]`.
pub fn conv_sums(layer: &ConvLayer, input: &[i64]) -> Vec<i128> {
    let g = &layer.geometry;
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(g.kernels * oh * ow);
    for k in 0..g.kernels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i128;
                for c in 0..g.channels {
                    for dy in 0..g.kh {
                        for dx in 0..g.kw {
                            let x = input[(c * g.height + oy * g.stride + dy) * g.width + ox * g.stride + dx];
                            acc += (x * layer.weights[g.weight_index(k, c, dy, dx)]) as i128;
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn conv_layer(layer: &ConvLayer, input: &[i64]) -> Vec<i64> {
    let per = layer.output.h * layer.output.w;
    conv_sums(layer, input)
        .into_iter()
        .enumerate()
        .map(|(i, s)| layer.post.apply(i / per, s))
        .collect()
}

pub fn pool_layer(layer: &PoolLayer, input: &[i64]) -> Vec<i64> {
    (0..layer.output.len())
        .map(|p| {
            let window = (0..layer.window()).map(|e| input[layer.source(p, e)]);
            match layer.op {
                PoolOp::Max => window.max().unwrap_or(0),
                PoolOp::Min => window.min().unwrap_or(0),
                PoolOp::Avg => {
                    let sum: i64 = window.sum();
                    layer.avg.expect("average pool constants").apply(sum as i128) as i64
                }
            }
        })
        .collect()
}

pub fn run_layer(layer: &Layer, input: &[i64]) -> Vec<i64> {
    match layer {
        Layer::Conv(l) => conv_layer(l, input),
        Layer::Pool(l) => pool_layer(l, input),
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[i64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, i64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Runs the whole network, returning every layer's output.
pub fn run_network_trace(net: &Network, input: &FixedPointTensor) -> Result<Vec<FixedPointTensor>> {
    net.check_input(input)?;
    let mut cur = input.values.clone();
    let mut outs = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        cur = run_layer(layer, &cur);
        outs.push(FixedPointTensor::unsigned(layer.output().dims(), layer.out_bits(), cur.clone())?);
    }
    Ok(outs)
}

pub fn run_network(net: &Network, input: &FixedPointTensor) -> Result<FixedPointTensor> {
    Ok(run_network_trace(net, input)?.pop().unwrap_or_else(|| input.clone()))
}
