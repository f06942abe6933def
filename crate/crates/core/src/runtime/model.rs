//! Model description, tensor files and the compiled network.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::fixed::{avg_pool_affine, quantize_affine, BatchNorm, FixedAffine, BN_FRAC_BITS};
use crate::error::{Error, Result};
use crate::primitives::{ConvGeometry, FixedPointTensor, Signedness};

pub const MAX_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    Maxpool,
    Minpool,
    Avgpool,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Fc => "fc",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Minpool => "minpool",
            LayerKind::Avgpool => "avgpool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    /// `[channels, height, width]`.
    pub shape: Vec<usize>,
    pub bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormSpec {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-5
}

fn default_stride() -> usize {
    1
}

/// One layer as written in the model file.
///
/// `dims` is `[out_channels, in_channels, kh, kw]` for `conv`,
/// `[out_features, in_features]` for `fc` and `[kh, kw]` for pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub dims: Vec<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_i: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_o: Option<u32>,
    #[serde(default)]
    pub signed_weights: bool,
    #[serde(default)]
    pub relu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmax: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn: Option<BatchNormSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Json>,
}

impl LayerSpec {
    pub fn pool(kind: LayerKind, kh: usize, kw: usize, stride: usize) -> Self {
        Self {
            kind,
            dims: vec![kh, kw],
            stride,
            k_w: None,
            k_i: None,
            k_o: None,
            signed_weights: false,
            relu: false,
            qmin: None,
            qmax: None,
            bn: None,
            bias: None,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input: InputSpec,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("{what}: {e}")))
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "model")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Flattens nested JSON integer arrays, checking them against `dims`.
pub fn flatten_nested(value: &Json, dims: &[usize]) -> Result<Vec<i64>> {
    fn walk(v: &Json, dims: &[usize], path: &mut Vec<usize>, out: &mut Vec<i64>) -> Result<()> {
        match dims.split_first() {
            None => {
                let n = v
                    .as_i64()
                    .ok_or_else(|| Error::InvalidModel(format!("expected an integer at {path:?}, found {v}")))?;
                out.push(n);
                Ok(())
            }
            Some((&len, rest)) => {
                let arr = v
                    .as_array()
                    .ok_or_else(|| Error::InvalidModel(format!("expected an array at {path:?}")))?;
                if arr.len() != len {
                    return Err(Error::DimMismatch(format!(
                        "array at {path:?} has {} entries, expected {len}",
                        arr.len()
                    )));
                }
                for (i, x) in arr.iter().enumerate() {
                    path.push(i);
                    walk(x, rest, path, out)?;
                    path.pop();
                }
                Ok(())
            }
        }
    }
    let mut out = Vec::with_capacity(dims.iter().product());
    walk(value, dims, &mut Vec::new(), &mut out)?;
    Ok(out)
}

/// Inverse of [`flatten_nested`].
pub fn nest(values: &[i64], dims: &[usize]) -> Json {
    match dims.split_first() {
        None => Json::from(values[0]),
        Some((&len, rest)) => {
            let step: usize = rest.iter().product();
            Json::Array((0..len).map(|i| nest(&values[i * step..(i + 1) * step], rest)).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.c, self.h, self.w]
    }
}

/// Per-channel arithmetic applied to a convolution result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PostOps {
    pub bn: Option<Vec<FixedAffine>>,
    pub relu: bool,
    pub quant: Vec<FixedAffine>,
    pub out_bits: u32,
}

impl PostOps {
    /// Reference evaluation for one output channel.
    pub fn apply(&self, channel: usize, conv: i128) -> i64 {
        let mut y = match &self.bn {
            Some(bn) => bn[channel].apply(conv),
            None => conv,
        };
        if self.relu {
            y = y.max(0);
        }
        self.quant[channel].apply(y).clamp(0, (1i128 << self.out_bits) - 1) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvLayer {
    pub index: usize,
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
    pub geometry: ConvGeometry,
    /// `[kernel][channel][dy][dx]`, row-major.
    pub weights: Vec<i64>,
    pub post: PostOps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolOp {
    Max,
    Min,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PoolLayer {
    pub index: usize,
    pub kind: LayerKind,
    pub op: PoolOp,
    pub input: Shape,
    pub output: Shape,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub bits: u32,
    pub avg: Option<FixedAffine>,
}

impl PoolLayer {
    pub fn window(&self) -> usize {
        self.kh * self.kw
    }

    /// Input index of window element `e` for output position `p`.
    pub fn source(&self, p: usize, e: usize) -> usize {
        let per = self.output.h * self.output.w;
        let (c, r) = (p / per, p % per);
        let (oy, ox) = (r / self.output.w, r % self.output.w);
        let (dy, dx) = (e / self.kw, e % self.kw);
        (c * self.input.h + oy * self.stride + dy) * self.input.w + ox * self.stride + dx
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Layer {
    Conv(ConvLayer),
    Pool(PoolLayer),
}

impl Layer {
    pub fn index(&self) -> usize {
        match self {
            Layer::Conv(l) => l.index,
            Layer::Pool(l) => l.index,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(l) => l.kind,
            Layer::Pool(l) => l.kind,
        }
    }

    pub fn output(&self) -> Shape {
        match self {
            Layer::Conv(l) => l.output,
            Layer::Pool(l) => l.output,
        }
    }

    pub fn out_bits(&self) -> u32 {
        match self {
            Layer::Conv(l) => l.post.out_bits,
            Layer::Pool(l) => l.bits,
        }
    }
}

/// A validated model with every fixed-point constant resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Network {
    pub input: Shape,
    pub input_bits: u32,
    pub layers: Vec<Layer>,
}

fn bits_ok(bits: u32, what: &str, layer: usize) -> Result<u32> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(bits)
    } else {
        Err(Error::InvalidModel(format!("layer {layer}: {what} = {bits} not in 1..={MAX_BITS}")))
    }
}

fn per_channel(v: &[f64], n: usize, what: &str, layer: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimMismatch(format!(
            "layer {layer}: {what} has {} entries for {n} channels",
            v.len()
        )));
    }
    Ok(())
}

fn compile_conv(index: usize, spec: &LayerSpec, input: Shape, bits: u32) -> Result<ConvLayer> {
    let bad = |msg: String| Error::InvalidModel(format!("layer {index} ({}): {msg}", spec.kind.name()));
    let (geometry, output) = match spec.kind {
        LayerKind::Conv => {
            let [k, c, kh, kw] = spec.dims[..] else {
                return Err(bad(format!("dims must be [out, in, kh, kw], got {:?}", spec.dims)));
            };
            if c != input.c {
                return Err(Error::DimMismatch(format!(
                    "layer {index}: expects {c} input channels, previous layer gives {}",
                    input.c
                )));
            }
            let g = ConvGeometry {
                channels: c,
                height: input.h,
                width: input.w,
                kernels: k,
                kh,
                kw,
                stride: spec.stride,
                in_bits: bits,
                weight_bits: 1,
                signed_weights: spec.signed_weights,
            };
            (g, Shape { c: k, h: 0, w: 0 })
        }
        _ => {
            let [out, inp] = spec.dims[..] else {
                return Err(bad(format!("dims must be [out, in], got {:?}", spec.dims)));
            };
            if inp != input.len() {
                return Err(Error::DimMismatch(format!(
                    "layer {index}: expects {inp} inputs, previous layer gives {}",
                    input.len()
                )));
            }
            if spec.stride != 1 {
                return Err(Error::StrideInvalid(format!("layer {index}: fully connected layers take stride 1")));
            }
            let g = ConvGeometry {
                channels: inp,
                height: 1,
                width: 1,
                kernels: out,
                kh: 1,
                kw: 1,
                stride: 1,
                in_bits: bits,
                weight_bits: 1,
                signed_weights: spec.signed_weights,
            };
            (g, Shape { c: out, h: 1, w: 1 })
        }
    };
    let k_w = bits_ok(spec.k_w.ok_or_else(|| bad("k_w is required".into()))?, "k_w", index)?;
    if let Some(ki) = spec.k_i {
        if ki != bits {
            return Err(Error::DimMismatch(format!(
                "layer {index}: k_i = {ki} but the incoming tensor has {bits} bits"
            )));
        }
    }
    let mut geometry = geometry;
    geometry.weight_bits = k_w;
    geometry.validate().map_err(|e| match e {
        Error::DimMismatch(m) => Error::DimMismatch(format!("layer {index}: {m}")),
        Error::StrideInvalid(m) => Error::StrideInvalid(format!("layer {index}: {m}")),
        other => other,
    })?;
    let output = Shape {
        c: output.c,
        h: geometry.out_h(),
        w: geometry.out_w(),
    };
    let wdims = spec.dims.clone();
    let weights = flatten_nested(spec.weights.as_ref().ok_or_else(|| bad("weights are required".into()))?, &wdims)?;
    let wt = FixedPointTensor::new(
        wdims,
        k_w,
        if spec.signed_weights {
            Signedness::TwosComplement
        } else {
            Signedness::Unsigned
        },
        weights,
    )
    .map_err(|e| bad(format!("weights: {e}")))?;

    let k = geometry.kernels;
    let out_bits = bits_ok(spec.k_o.ok_or_else(|| bad("k_o is required".into()))?, "k_o", index)?;
    let qmin = spec.qmin.ok_or_else(|| bad("qmin is required".into()))?;
    let qmax = spec.qmax.ok_or_else(|| bad("qmax is required".into()))?;
    let bias = match &spec.bias {
        Some(b) => {
            per_channel(b, k, "bias", index)?;
            b.clone()
        }
        None => vec![0.0; k],
    };
    let bn: Option<Vec<FixedAffine>> = match &spec.bn {
        Some(p) => {
            for (v, name) in [(&p.mu, "mu"), (&p.sigma, "sigma"), (&p.gamma, "gamma"), (&p.beta, "beta")] {
                per_channel(v, k, name, index)?;
            }
            Some(
                (0..k)
                    .map(|i| {
                        BatchNorm {
                            mu: p.mu[i],
                            sigma: p.sigma[i],
                            gamma: p.gamma[i],
                            beta: p.beta[i],
                            eps: p.eps,
                        }
                        .affine(bias[i])
                    })
                    .collect::<Result<_>>()?,
            )
        }
        None if spec.bias.is_some() => Some(bias.iter().map(|&b| BatchNorm::bias(b).affine(0.0)).collect::<Result<_>>()?),
        None => None,
    };
    let frac = if bn.is_some() { BN_FRAC_BITS } else { 0 };
    let q = quantize_affine(qmin, qmax, out_bits, frac)?;
    Ok(ConvLayer {
        index,
        kind: spec.kind,
        input,
        output,
        geometry,
        weights: wt.values,
        post: PostOps {
            bn,
            relu: spec.relu,
            quant: vec![q; k],
            out_bits,
        },
    })
}

fn compile_pool(index: usize, spec: &LayerSpec, input: Shape, bits: u32) -> Result<PoolLayer> {
    let [kh, kw] = spec.dims[..] else {
        return Err(Error::InvalidModel(format!(
            "layer {index} ({}): dims must be [kh, kw], got {:?}",
            spec.kind.name(),
            spec.dims
        )));
    };
    if spec.stride == 0 {
        return Err(Error::StrideInvalid(format!("layer {index}: stride must be at least 1")));
    }
    if kh == 0 || kw == 0 || kh > input.h || kw > input.w {
        return Err(Error::DimMismatch(format!(
            "layer {index}: {kh}x{kw} window does not fit a {}x{} input",
            input.h, input.w
        )));
    }
    if (input.h - kh) % spec.stride != 0 || (input.w - kw) % spec.stride != 0 {
        return Err(Error::DimMismatch(format!(
            "layer {index}: {kh}x{kw} window with stride {} does not tile a {}x{} input",
            spec.stride, input.h, input.w
        )));
    }
    if spec.weights.is_some() || spec.bn.is_some() {
        return Err(Error::InvalidModel(format!("layer {index}: pooling layers take no weights or batch norm")));
    }
    let op = match spec.kind {
        LayerKind::Maxpool => PoolOp::Max,
        LayerKind::Minpool => PoolOp::Min,
        _ => PoolOp::Avg,
    };
    let output = Shape {
        c: input.c,
        h: (input.h - kh) / spec.stride + 1,
        w: (input.w - kw) / spec.stride + 1,
    };
    Ok(PoolLayer {
        index,
        kind: spec.kind,
        op,
        input,
        output,
        kh,
        kw,
        stride: spec.stride,
        bits,
        avg: (op == PoolOp::Avg).then(|| avg_pool_affine(kh * kw, bits)),
    })
}

impl Network {
    pub fn compile(spec: &ModelSpec) -> Result<Self> {
        let [c, h, w] = spec.input.shape[..] else {
            return Err(Error::InvalidModel(format!(
                "input shape must be [channels, height, width], got {:?}",
                spec.input.shape
            )));
        };
        if c * h * w == 0 {
            return Err(Error::InvalidModel("input shape has a zero dimension".into()));
        }
        let input = Shape { c, h, w };
        let input_bits = bits_ok(spec.input.bits, "input bits", 0)?;
        let (mut shape, mut bits) = (input, input_bits);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let layer = match l.kind {
                LayerKind::Conv | LayerKind::Fc => Layer::Conv(compile_conv(i, l, shape, bits)?),
                _ => Layer::Pool(compile_pool(i, l, shape, bits)?),
            };
            shape = layer.output();
            bits = layer.out_bits();
            layers.push(layer);
        }
        Ok(Self {
            input,
            input_bits,
            layers,
        })
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.input, Layer::output)
    }

    pub fn output_bits(&self) -> u32 {
        self.layers.last().map_or(self.input_bits, Layer::out_bits)
    }

    /// Checks that `t` is a valid input for this network.
    pub fn check_input(&self, t: &FixedPointTensor) -> Result<()> {
        t.validate()?;
        if t.dims != self.input.dims() {
            return Err(Error::DimMismatch(format!(
                "input tensor has shape {:?}, model expects {:?}",
                t.dims,
                self.input.dims()
            )));
        }
        if t.signedness != Signedness::Unsigned || t.bits != self.input_bits {
            return Err(Error::InvalidTensor(format!(
                "model expects unsigned {}-bit input, got {:?} {}-bit",
                self.input_bits, t.signedness, t.bits
            )));
        }
        Ok(())
    }
}

/// JSON tensor file: `{"shape": [...], "bits": k, "data": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    pub data: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argmax: Option<usize>,
}

impl TensorFile {
    pub fn from_tensor(t: &FixedPointTensor) -> Self {
        Self {
            shape: t.dims.clone(),
            bits: Some(t.bits),
            data: t.values.clone(),
            argmax: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "tensor")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("tensor serializes");
        s.push('\n');
        s
    }

    /// Interprets the file as an unsigned tensor of `bits` bits (or the
    /// bit width it declares).
    pub fn into_tensor(self, bits: u32) -> Result<FixedPointTensor> {
        let b = self.bits.unwrap_or(bits);
        FixedPointTensor::unsigned(self.shape, b, self.data)
    }
}

/// Binary tensor: `u32` rank, `u32` dims, then `i32` values, all little endian.
pub fn write_binary_tensor(mut w: impl Write, shape: &[usize], data: &[i64]) -> std::io::Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&(v as i32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary_tensor(mut r: impl Read) -> Result<(Vec<usize>, Vec<i64>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Parse(format!("binary tensor: {e}")))?;
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| b.try_into().expect("slice of four"))
            .ok_or_else(|| Error::Parse(format!("binary tensor truncated at byte {}", 4 * i)))
    };
    let rank = u32::from_le_bytes(word(0)?) as usize;
    if rank > 8 {
        return Err(Error::Parse(format!("binary tensor rank {rank} is implausible")));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| word(1 + i).map(|b| u32::from_le_bytes(b) as usize))
        .collect::<Result<_>>()?;
    let n: usize = shape.iter().product();
    let expected = 4 * (1 + rank + n);
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "binary tensor of shape {shape:?} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = (0..n)
        .map(|i| word(1 + rank + i).map(|b| i32::from_le_bytes(b) as i64))
        .collect::<Result<_>>()?;
    Ok((shape, data))
}

/// Reads a tensor from JSON text or the binary layout, deciding by the
/// first non-blank byte.
pub fn parse_tensor(bytes: &[u8], bits: u32) -> Result<FixedPointTensor> {
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
    if matches!(first, Some(b'{')) {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(format!("tensor: {e}")))?;
        TensorFile::from_json(text)?.into_tensor(bits)
    } else {
        let (shape, data) = read_binary_tensor(bytes)?;
        FixedPointTensor::unsigned(shape, bits, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_spec() -> LayerSpec {
        LayerSpec {
            kind: LayerKind::Conv,
            dims: vec![1, 1, 1, 1],
            stride: 1,
            k_w: Some(2),
            k_i: Some(4),
            k_o: Some(4),
            signed_weights: false,
            relu: false,
            qmin: Some(0.0),
            qmax: Some(15.0),
            bn: None,
            bias: None,
            weights: Some(serde_json::json!([[[[1]]]])),
        }
    }

    #[test]
    fn nested_round_trip() {
        let v: Vec<i64> = (0..24).collect();
        let j = nest(&v, &[2, 3, 4]);
        assert_eq!(flatten_nested(&j, &[2, 3, 4]).unwrap(), v);
        assert!(matches!(flatten_nested(&j, &[2, 4, 3]), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn identity_conv_compiles_to_identity_post_ops() {
        let spec = ModelSpec {
            input: InputSpec {
                shape: vec![1, 3, 3],
                bits: 4,
            },
            layers: vec![conv_spec()],
        };
        let net = Network::compile(&spec).unwrap();
        let Layer::Conv(c) = &net.layers[0] else { panic!() };
        for x in 0..16 {
            assert_eq!(c.post.apply(0, x), x as i64);
        }
        assert_eq!(net.output_shape(), Shape { c: 1, h: 3, w: 3 });
    }

    #[test]
    fn model_errors() {
        let mut spec = ModelSpec {
            input: InputSpec {
                shape: vec![2, 3, 3],
                bits: 4,
            },
            layers: vec![conv_spec()],
        };
        assert!(matches!(Network::compile(&spec), Err(Error::DimMismatch(_))));
        spec.input.shape = vec![1, 3, 3];
        spec.layers[0].qmax = Some(0.0);
        assert!(matches!(Network::compile(&spec), Err(Error::DegenerateRange(_))));
        spec.layers[0].qmax = Some(15.0);
        spec.layers[0].weights = Some(serde_json::json!([[[[4]]]]));
        assert!(matches!(Network::compile(&spec), Err(Error::InvalidModel(_))));
        assert!(matches!(ModelSpec::from_json("{\"input\": "), Err(Error::Parse(_))));
    }

    #[test]
    fn binary_tensor_round_trip() {
        let mut buf = Vec::new();
        write_binary_tensor(&mut buf, &[1, 2, 3], &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(buf.len(), 4 * (1 + 3 + 6));
        let t = parse_tensor(&buf, 3).unwrap();
        assert_eq!(t.dims, vec![1, 2, 3]);
        assert_eq!(t.values, vec![0, 1, 2, 3, 4, 5]);
        assert!(read_binary_tensor(&buf[..buf.len() - 1]).is_err());
        let j = TensorFile::from_tensor(&t).to_json();
        assert_eq!(parse_tensor(j.as_bytes(), 8).unwrap(), t);
    }
}
