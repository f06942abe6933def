//! Seeded generator for small test networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixed::BatchNorm;
use super::model::{nest, BatchNormSpec, InputSpec, Layer, LayerKind, LayerSpec, ModelSpec, Network};
use super::oracle;
use crate::error::{Error, Result};
use crate::primitives::FixedPointTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub input_bits: u32,
    pub weight_bits: u32,
    pub act_bits: u32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            input_bits: 4,
            weight_bits: 4,
            act_bits: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Toy {
    pub model: ModelSpec,
    pub input: FixedPointTensor,
}

fn weights(rng: &mut ChaCha8Rng, dims: &[usize], bits: u32) -> serde_json::Value {
    let half = 1i64 << (bits - 1);
    let n: usize = dims.iter().product();
    let v: Vec<i64> = (0..n).map(|_| rng.gen_range(-half..half)).collect();
    nest(&v, dims)
}

fn weighted_layer(kind: LayerKind, dims: Vec<usize>, cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> LayerSpec {
    LayerSpec {
        kind,
        weights: Some(weights(rng, &dims, cfg.weight_bits)),
        dims,
        stride: 1,
        k_w: Some(cfg.weight_bits),
        k_i: None,
        k_o: Some(cfg.act_bits),
        signed_weights: true,
        relu: false,
        qmin: Some(0.0),
        qmax: Some(1.0),
        bn: None,
        bias: None,
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Real-valued pre-quantization outputs of the last layer of `spec`,
/// grouped by channel.
fn channel_values(spec: &ModelSpec, input: &FixedPointTensor) -> Result<Vec<Vec<f64>>> {
    let net = Network::compile(spec)?;
    let (last, prefix) = net.layers.split_last().ok_or_else(|| Error::Invariant("empty toy".into()))?;
    let mut cur = input.values.clone();
    for l in prefix {
        cur = oracle::run_layer(l, &cur);
    }
    let Layer::Conv(c) = last else {
        return Err(Error::Invariant("toy calibration expects a weighted layer".into()));
    };
    let per = c.output.h * c.output.w;
    let sums = oracle::conv_sums(c, &cur);
    Ok(sums.chunks(per).map(|ch| ch.iter().map(|&s| s as f64).collect()).collect())
}

/// Appends `layer`, then picks batch-norm statistics and the quantization
/// range from the values it actually produces on `input`.
fn calibrate(spec: &mut ModelSpec, mut layer: LayerSpec, input: &FixedPointTensor, bn: bool, rng: &mut ChaCha8Rng) -> Result<()> {
    spec.layers.push(layer.clone());
    let chans = channel_values(spec, input)?;
    let mut post: Vec<f64> = Vec::new();
    if bn {
        let mut p = BatchNormSpec {
            mu: vec![],
            sigma: vec![],
            gamma: vec![],
            beta: vec![],
            eps: 1e-5,
        };
        for vals in &chans {
            let (mean, std) = mean_std(vals);
            let bn = BatchNorm {
                mu: mean + rng.gen_range(-0.5..0.5) * std,
                sigma: std * rng.gen_range(0.5..1.5) + 0.5,
                gamma: rng.gen_range(0.5..2.0) * if rng.gen_bool(0.15) { -1.0 } else { 1.0 },
                beta: rng.gen_range(-0.5..1.0),
                eps: 1e-5,
            };
            for &v in vals {
                post.push(bn.apply_real(v)?);
            }
            p.mu.push(bn.mu);
            p.sigma.push(bn.sigma);
            p.gamma.push(bn.gamma);
            p.beta.push(bn.beta);
        }
        layer.bn = Some(p);
    } else {
        let bias: Vec<f64> = chans.iter().map(|_| rng.gen_range(-4.0..4.0)).collect();
        for (vals, b) in chans.iter().zip(&bias) {
            post.extend(vals.iter().map(|v| v + b));
        }
        layer.bias = Some(bias);
    }
    if layer.relu {
        for v in &mut post {
            *v = v.max(0.0);
        }
    }
    let lo = post.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (qmin, qmax) = if layer.relu {
        (0.0, (hi * rng.gen_range(0.7..1.0)).max(0.5))
    } else {
        (lo, if hi - lo < 0.5 { lo + 0.5 } else { hi })
    };
    layer.qmin = Some(qmin);
    layer.qmax = Some(qmax);
    *spec.layers.last_mut().expect("just pushed") = layer;
    Ok(())
}

/// Two 3x3 convolutions with batch norm and ReLU, a 2x2 max pool and a
/// fully connected classifier over a 1x8x8 input.
pub fn toy_model(seed: u64, cfg: ToyConfig) -> Result<Toy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<i64> = (0..64).map(|_| rng.gen_range(0..1i64 << cfg.input_bits)).collect();
    let input = FixedPointTensor::unsigned(vec![1, 8, 8], cfg.input_bits, values)?;
    let mut spec = ModelSpec {
        input: InputSpec {
            shape: vec![1, 8, 8],
            bits: cfg.input_bits,
        },
        layers: Vec::new(),
    };
    let mut c1 = weighted_layer(LayerKind::Conv, vec![2, 1, 3, 3], &cfg, &mut rng);
    c1.relu = true;
    c1.k_i = Some(cfg.input_bits);
    calibrate(&mut spec, c1, &input, true, &mut rng)?;
    let mut c2 = weighted_layer(LayerKind::Conv, vec![2, 2, 3, 3], &cfg, &mut rng);
    c2.relu = true;
    calibrate(&mut spec, c2, &input, true, &mut rng)?;
    spec.layers.push(LayerSpec::pool(LayerKind::Maxpool, 2, 2, 2));
    let fc = weighted_layer(LayerKind::Fc, vec![4, 8], &cfg, &mut rng);
    calibrate(&mut spec, fc, &input, false, &mut rng)?;
    Ok(Toy { model: spec, input })
}
