//! Little-endian binary containers.
//!
//! Model file (`LTTA`):
//!
//! ```text
//! magic "LTTA" | version u32 (1 float, 2 int8)
//! name (u64 length + UTF-8) | input rank u64 + dims u64… | classes u64
//! [version 2: input qparams | plan: unfused ids, fused ids]
//! layer count u64, then per layer: kind tag u8 | payload length u64 | payload
//! ```
//!
//! Arrays are a u64 element count followed by the elements. Tensors are rank
//! u64, dims u64…, then an f32 array. Quantization parameters are scale f32,
//! zero point i32, dtype u8 (0 = u8, 1 = i8).
//!
//! Dataset file (`LTTD`):
//!
//! ```text
//! magic "LTTD" | version u32 | classes u64 | count u64 | sample rank u64 + dims u64…
//! f32 block (count × sample size) | u16 label block (count)
//! annotated u8; when 1, per sample: id u64, source index u64, shift kind u8, severity u8
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use leantta_core::graph::{Conv2dLayer, Layer, LinearLayer};
use leantta_core::quant::{FusionPlan, QLayer, QuantDtype, QuantParams, QuantizedModel};
use leantta_core::shift::{LabeledDataset, ShiftKind, ShiftSpec, StreamItem};
use leantta_core::{ModelGraph, NormParams, Tensor};

use crate::error::{CliError, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"LTTA";
pub const DATASET_MAGIC: [u8; 4] = *b"LTTD";
pub const FLOAT_VERSION: u32 = 1;
pub const QUANT_VERSION: u32 = 2;
pub const DATASET_VERSION: u32 = 1;

mod tag {
    pub const CONV: u8 = 1;
    pub const LINEAR: u8 = 2;
    pub const BATCH_NORM: u8 = 3;
    pub const ADAPTIVE_NORM: u8 = 4;
    pub const RELU: u8 = 5;
    pub const GAP: u8 = 6;
    pub const RES_BEGIN: u8 = 7;
    pub const RES_END: u8 = 8;
    pub const Q_CONV: u8 = 16;
    pub const Q_LINEAR: u8 = 17;
    pub const Q_NORM: u8 = 18;
    pub const Q_GAP: u8 = 19;
    pub const Q_RES_END: u8 = 20;
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.usize(x));
    }
    fn f32s(&mut self, v: &[f32]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f32(x));
    }
    fn i8s(&mut self, v: &[i8]) {
        self.usize(v.len());
        self.0.extend(v.iter().map(|&x| x as u8));
    }
    fn i32s(&mut self, v: &[i32]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.i32(x));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.usizes(t.shape());
        self.f32s(t.data());
    }
    fn qp(&mut self, q: &QuantParams) {
        self.f32(q.scale);
        self.i32(q.zero_point);
        self.u8(match q.dtype {
            QuantDtype::U8 => 0,
            QuantDtype::I8 => 1,
        });
    }
    fn norm(&mut self, p: &NormParams) {
        self.f32s(&p.mu_s);
        self.f32s(&p.sigma2_s);
        self.f32s(&p.gamma);
        self.f32s(&p.beta);
        self.f32(p.eps);
    }
    fn section(&mut self, kind: u8, payload: Enc) {
        self.u8(kind);
        self.usize(payload.0.len());
        self.0.extend_from_slice(&payload.0);
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf[0]` in the file, for error positions.
    base: usize,
    path: &'a Path,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Dec { buf, pos: 0, base: 0, path }
    }

    fn offset(&self) -> u64 {
        (self.base + self.pos) as u64
    }

    fn err(&self, detail: impl Into<String>) -> CliError {
        CliError::Parse { path: self.path.to_path_buf(), offset: self.offset(), detail: detail.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("unexpected end of file reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr(what)?))
    }
    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.offset();
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| CliError::Parse {
            path: self.path.to_path_buf(),
            offset: at,
            detail: format!("{what} {v} does not fit in memory"),
        })
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.arr(what)?))
    }
    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.arr(what)?))
    }
    /// Element count, checked against the bytes left so corrupt lengths fail
    /// before allocating.
    fn count(&mut self, elem: usize, what: &str) -> Result<usize> {
        let at = self.offset();
        let n = self.usize(what)?;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(CliError::Parse {
                path: self.path.to_path_buf(),
                offset: at,
                detail: format!("{what} length {n} exceeds the remaining data"),
            });
        }
        Ok(n)
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.count(1, what)?;
        let at = self.offset();
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CliError::Parse {
            path: self.path.to_path_buf(),
            offset: at,
            detail: format!("{what} is not valid UTF-8"),
        })
    }
    fn usizes(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.count(8, what)?;
        (0..n).map(|_| self.usize(what)).collect()
    }
    fn f32s(&mut self, what: &str) -> Result<Vec<f32>> {
        let n = self.count(4, what)?;
        (0..n).map(|_| self.f32(what)).collect()
    }
    fn i8s(&mut self, what: &str) -> Result<Vec<i8>> {
        let n = self.count(1, what)?;
        Ok(self.take(n, what)?.iter().map(|&b| b as i8).collect())
    }
    fn i32s(&mut self, what: &str) -> Result<Vec<i32>> {
        let n = self.count(4, what)?;
        (0..n).map(|_| self.i32(what)).collect()
    }
    fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let at = self.offset();
        let shape = self.usizes(what)?;
        let data = self.f32s(what)?;
        Tensor::new(&shape, data).map_err(|e| CliError::Parse { path: self.path.to_path_buf(), offset: at, detail: e.to_string() })
    }
    fn qp(&mut self, what: &str) -> Result<QuantParams> {
        let scale = self.f32(what)?;
        let zero_point = self.i32(what)?;
        let dtype = match self.u8(what)? {
            0 => QuantDtype::U8,
            1 => QuantDtype::I8,
            d => return Err(self.err(format!("unknown quantization dtype {d}"))),
        };
        Ok(QuantParams { scale, zero_point, dtype })
    }
    fn norm(&mut self) -> Result<NormParams> {
        Ok(NormParams {
            mu_s: self.f32s("norm mean")?,
            sigma2_s: self.f32s("norm variance")?,
            gamma: self.f32s("norm scale")?,
            beta: self.f32s("norm shift")?,
            eps: self.f32("norm epsilon")?,
        })
    }
    fn bool(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.err(format!("{what} flag must be 0 or 1, got {v}"))),
        }
    }

    /// Split off the next tagged section as its own decoder.
    fn section(&mut self) -> Result<(u8, Dec<'a>)> {
        let kind = self.u8("layer tag")?;
        let n = self.count(1, "layer payload")?;
        let base = self.base + self.pos;
        let buf = self.take(n, "layer payload")?;
        Ok((kind, Dec { buf, pos: 0, base, path: self.path }))
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} unexpected trailing bytes after {what}", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn header(e: &mut Enc, version: u32, name: &str, input_shape: &[usize], classes: usize) {
    e.0.extend_from_slice(&MODEL_MAGIC);
    e.u32(version);
    e.str(name);
    e.usizes(input_shape);
    e.usize(classes);
}

fn encode_layer(layer: &Layer) -> (u8, Enc) {
    let mut p = Enc::default();
    let kind = match layer {
        Layer::Conv2d(c) => {
            p.tensor(&c.weight);
            p.f32s(&c.bias);
            p.usize(c.stride);
            p.usize(c.padding);
            tag::CONV
        }
        Layer::Linear(l) => {
            p.tensor(&l.weight);
            p.f32s(&l.bias);
            tag::LINEAR
        }
        Layer::BatchNorm(n) => {
            p.norm(n);
            tag::BATCH_NORM
        }
        Layer::AdaptiveNorm(n) => {
            p.norm(n);
            tag::ADAPTIVE_NORM
        }
        Layer::Relu => tag::RELU,
        Layer::GlobalAvgPool => tag::GAP,
        Layer::ResidualBegin => tag::RES_BEGIN,
        Layer::ResidualEnd => tag::RES_END,
    };
    (kind, p)
}

pub fn encode_model(model: &ModelGraph) -> Vec<u8> {
    let mut e = Enc::default();
    header(&mut e, FLOAT_VERSION, &model.name, &model.input_shape, model.num_classes);
    e.usize(model.layers.len());
    for layer in &model.layers {
        let (kind, payload) = encode_layer(layer);
        e.section(kind, payload);
    }
    e.0
}

pub fn encode_quantized(model: &QuantizedModel) -> Vec<u8> {
    let mut e = Enc::default();
    header(&mut e, QUANT_VERSION, &model.name, &model.input_shape, model.num_classes);
    e.qp(&model.input);
    e.usizes(&model.plan.unfused);
    e.usizes(&model.plan.fused);
    e.usize(model.layers.len());
    for layer in &model.layers {
        let mut p = Enc::default();
        let kind = match layer {
            QLayer::Conv { weight, weight_shape, weight_scale, bias, stride, padding, out, relu } => {
                p.i8s(weight);
                weight_shape.iter().for_each(|&d| p.usize(d));
                p.f32(*weight_scale);
                p.i32s(bias);
                p.usize(*stride);
                p.usize(*padding);
                p.qp(out);
                p.u8(*relu as u8);
                tag::Q_CONV
            }
            QLayer::Linear { weight, weight_shape, weight_scale, bias, out, relu } => {
                p.i8s(weight);
                weight_shape.iter().for_each(|&d| p.usize(d));
                p.f32(*weight_scale);
                p.i32s(bias);
                p.qp(out);
                p.u8(*relu as u8);
                tag::Q_LINEAR
            }
            QLayer::Norm { source_layer, params, out, relu } => {
                p.usize(*source_layer);
                p.norm(params);
                p.qp(out);
                p.u8(*relu as u8);
                tag::Q_NORM
            }
            QLayer::Relu => tag::RELU,
            QLayer::GlobalAvgPool { out } => {
                p.qp(out);
                tag::Q_GAP
            }
            QLayer::ResidualBegin => tag::RES_BEGIN,
            QLayer::ResidualEnd { out } => {
                p.qp(out);
                tag::Q_RES_END
            }
        };
        e.section(kind, p);
    }
    e.0
}

/// Either kind of model file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Float(ModelGraph),
    Quantized(QuantizedModel),
}

struct Header {
    version: u32,
    name: String,
    input_shape: Vec<usize>,
    classes: usize,
}

fn read_header(d: &mut Dec<'_>) -> Result<Header> {
    if d.arr::<4>("magic")? != MODEL_MAGIC {
        return Err(CliError::Parse { path: d.path.to_path_buf(), offset: 0, detail: "not a model file (bad magic)".into() });
    }
    let version = d.u32("format version")?;
    if version != FLOAT_VERSION && version != QUANT_VERSION {
        return Err(CliError::Version {
            path: d.path.to_path_buf(),
            detail: format!("unsupported model format version {version} (known: {FLOAT_VERSION}, {QUANT_VERSION})"),
        });
    }
    Ok(Header { version, name: d.str("model name")?, input_shape: d.usizes("input shape")?, classes: d.usize("class count")? })
}

fn unknown_tag(path: &Path, kind: u8, version: u32) -> CliError {
    CliError::Version { path: path.to_path_buf(), detail: format!("unknown layer kind tag {kind} in format version {version}") }
}

fn decode_float_layers(d: &mut Dec<'_>, h: &Header) -> Result<Vec<Layer>> {
    let n = d.count(9, "layer count")?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (kind, mut p) = d.section()?;
        let layer = match kind {
            tag::CONV => Layer::Conv2d(Conv2dLayer {
                weight: p.tensor("conv weight")?,
                bias: p.f32s("conv bias")?,
                stride: p.usize("conv stride")?,
                padding: p.usize("conv padding")?,
            }),
            tag::LINEAR => Layer::Linear(LinearLayer { weight: p.tensor("linear weight")?, bias: p.f32s("linear bias")? }),
            tag::BATCH_NORM => Layer::BatchNorm(p.norm()?),
            tag::ADAPTIVE_NORM => Layer::AdaptiveNorm(p.norm()?),
            tag::RELU => Layer::Relu,
            tag::GAP => Layer::GlobalAvgPool,
            tag::RES_BEGIN => Layer::ResidualBegin,
            tag::RES_END => Layer::ResidualEnd,
            other => return Err(unknown_tag(d.path, other, h.version)),
        };
        p.finish("layer payload")?;
        layers.push(layer);
    }
    Ok(layers)
}

fn decode_quant_layers(d: &mut Dec<'_>, h: &Header) -> Result<Vec<QLayer>> {
    let n = d.count(9, "layer count")?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (kind, mut p) = d.section()?;
        let layer = match kind {
            tag::Q_CONV => QLayer::Conv {
                weight: p.i8s("conv weight")?,
                weight_shape: [p.usize("shape")?, p.usize("shape")?, p.usize("shape")?, p.usize("shape")?],
                weight_scale: p.f32("weight scale")?,
                bias: p.i32s("conv bias")?,
                stride: p.usize("conv stride")?,
                padding: p.usize("conv padding")?,
                out: p.qp("output qparams")?,
                relu: p.bool("relu")?,
            },
            tag::Q_LINEAR => QLayer::Linear {
                weight: p.i8s("linear weight")?,
                weight_shape: [p.usize("shape")?, p.usize("shape")?],
                weight_scale: p.f32("weight scale")?,
                bias: p.i32s("linear bias")?,
                out: p.qp("output qparams")?,
                relu: p.bool("relu")?,
            },
            tag::Q_NORM => QLayer::Norm {
                source_layer: p.usize("source layer")?,
                params: p.norm()?,
                out: p.qp("output qparams")?,
                relu: p.bool("relu")?,
            },
            tag::RELU => QLayer::Relu,
            tag::Q_GAP => QLayer::GlobalAvgPool { out: p.qp("output qparams")? },
            tag::RES_BEGIN => QLayer::ResidualBegin,
            tag::Q_RES_END => QLayer::ResidualEnd { out: p.qp("output qparams")? },
            other => return Err(unknown_tag(d.path, other, h.version)),
        };
        p.finish("layer payload")?;
        layers.push(layer);
    }
    Ok(layers)
}

pub fn decode_any(bytes: &[u8], path: &Path) -> Result<AnyModel> {
    let mut d = Dec::new(bytes, path);
    let h = read_header(&mut d)?;
    let model = if h.version == FLOAT_VERSION {
        let layers = decode_float_layers(&mut d, &h)?;
        d.finish("model")?;
        AnyModel::Float(ModelGraph::new(h.name, h.input_shape, h.classes, layers)?)
    } else {
        let input = d.qp("input qparams")?;
        let plan = FusionPlan { unfused: d.usizes("unfused ids")?, fused: d.usizes("fused ids")? };
        let layers = decode_quant_layers(&mut d, &h)?;
        d.finish("model")?;
        let q = QuantizedModel { name: h.name, input_shape: h.input_shape, num_classes: h.classes, input, layers, plan };
        q.validate()?;
        AnyModel::Quantized(q)
    };
    Ok(model)
}

pub fn load_any(path: &Path) -> Result<AnyModel> {
    decode_any(&read(path)?, path)
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    match load_any(path)? {
        AnyModel::Float(m) => Ok(m),
        AnyModel::Quantized(_) => Err(CliError::Version {
            path: path.to_path_buf(),
            detail: format!("expected a float model (format version {FLOAT_VERSION}), found an int8 model (version {QUANT_VERSION})"),
        }),
    }
}

pub fn load_quantized(path: &Path) -> Result<QuantizedModel> {
    match load_any(path)? {
        AnyModel::Quantized(q) => Ok(q),
        AnyModel::Float(_) => Err(CliError::Version {
            path: path.to_path_buf(),
            detail: format!("expected an int8 model (format version {QUANT_VERSION}), found a float model (version {FLOAT_VERSION})"),
        }),
    }
}

/// Sidecar path: the model path with `.manifest` appended.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

pub fn float_manifest(model: &ModelGraph) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format=LTTA");
    let _ = writeln!(s, "version={FLOAT_VERSION}");
    let _ = writeln!(s, "name={}", model.name);
    let _ = writeln!(s, "input_shape={}", join(&model.input_shape));
    let _ = writeln!(s, "classes={}", model.num_classes);
    let _ = writeln!(s, "layers={}", model.layers.len());
    let _ = writeln!(s, "norm_layers={}", join(&model.norm_layer_ids()));
    let _ = writeln!(s, "adaptive_layers={}", join(&model.adaptive_layer_ids()));
    for (i, l) in model.layers.iter().enumerate() {
        let detail = match l {
            Layer::Conv2d(c) => format!(" weight={} stride={} padding={}", join(c.weight.shape()), c.stride, c.padding),
            Layer::Linear(li) => format!(" weight={}", join(li.weight.shape())),
            Layer::BatchNorm(p) | Layer::AdaptiveNorm(p) => format!(" channels={} eps={}", p.channels(), p.eps),
            _ => String::new(),
        };
        let _ = writeln!(s, "layer.{i}={}{detail}", l.kind_name());
    }
    s
}

pub fn quantized_manifest(model: &QuantizedModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format=LTTA");
    let _ = writeln!(s, "version={QUANT_VERSION}");
    let _ = writeln!(s, "name={}", model.name);
    let _ = writeln!(s, "input_shape={}", join(&model.input_shape));
    let _ = writeln!(s, "classes={}", model.num_classes);
    let _ = writeln!(s, "input_scale={}", model.input.scale);
    let _ = writeln!(s, "input_zero_point={}", model.input.zero_point);
    let _ = writeln!(s, "unfused_layers={}", join(&model.plan.unfused));
    let _ = writeln!(s, "fused_layers={}", join(&model.plan.fused));
    for (i, l) in model.layers.iter().enumerate() {
        let line = match l {
            QLayer::Conv { weight_shape, relu, out, .. } => format!("int8-conv weight={} relu={relu} out_scale={}", join(weight_shape), out.scale),
            QLayer::Linear { weight_shape, relu, out, .. } => format!("int8-linear weight={} relu={relu} out_scale={}", join(weight_shape), out.scale),
            QLayer::Norm { source_layer, relu, .. } => format!("float-norm source_layer={source_layer} relu={relu}"),
            QLayer::Relu => "relu".into(),
            QLayer::GlobalAvgPool { .. } => "global-avg-pool".into(),
            QLayer::ResidualBegin => "residual-begin".into(),
            QLayer::ResidualEnd { .. } => "residual-end".into(),
        };
        let _ = writeln!(s, "layer.{i}={line}");
    }
    s
}

/// Write the model and its text manifest.
pub fn save_model(path: &Path, model: &ModelGraph) -> Result<()> {
    write_bytes(path, &encode_model(model))?;
    write_bytes(&manifest_path(path), float_manifest(model).as_bytes())
}

pub fn save_quantized(path: &Path, model: &QuantizedModel) -> Result<()> {
    write_bytes(path, &encode_quantized(model))?;
    write_bytes(&manifest_path(path), quantized_manifest(model).as_bytes())
}

/// Per-sample provenance stored with stream files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub id: u64,
    pub source_index: usize,
    pub shift: ShiftSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub data: LabeledDataset,
    /// Per-sample shape without the batch axis.
    pub sample_shape: Vec<usize>,
    pub annotations: Option<Vec<Annotation>>,
}

pub fn encode_dataset(data: &LabeledDataset, sample_shape: &[usize], annotations: Option<&[Annotation]>) -> Vec<u8> {
    let mut e = Enc::default();
    e.0.extend_from_slice(&DATASET_MAGIC);
    e.u32(DATASET_VERSION);
    e.usize(data.num_classes);
    e.usize(data.len());
    e.usizes(sample_shape);
    for x in &data.inputs {
        x.data().iter().for_each(|&v| e.f32(v));
    }
    for &l in &data.labels {
        e.0.extend_from_slice(&(l as u16).to_le_bytes());
    }
    match annotations {
        Some(a) => {
            e.u8(1);
            for a in a {
                e.u64(a.id);
                e.usize(a.source_index);
                e.u8(a.shift.kind.tag());
                e.u8(a.shift.severity);
            }
        }
        None => e.u8(0),
    }
    e.0
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<DatasetFile> {
    let mut d = Dec::new(bytes, path);
    if d.arr::<4>("magic")? != DATASET_MAGIC {
        return Err(CliError::Parse { path: path.to_path_buf(), offset: 0, detail: "not a dataset file (bad magic)".into() });
    }
    let version = d.u32("format version")?;
    if version != DATASET_VERSION {
        return Err(CliError::Version {
            path: path.to_path_buf(),
            detail: format!("unsupported dataset format version {version} (expected {DATASET_VERSION})"),
        });
    }
    let classes = d.usize("class count")?;
    let count = d.usize("sample count")?;
    let sample_shape = d.usizes("sample shape")?;
    let per: usize = sample_shape.iter().product();
    let mut shape = vec![1];
    shape.extend_from_slice(&sample_shape);
    let mut inputs = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let at = d.offset();
        let raw = d.take(per * 4, "sample data")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4"))).collect();
        inputs.push(Tensor::new(&shape, data).map_err(|e| CliError::Parse { path: path.to_path_buf(), offset: at, detail: e.to_string() })?);
    }
    let raw = d.take(count * 2, "label block")?;
    let labels = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]]) as usize).collect();
    let annotations = if d.bool("annotation")? {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let id = d.u64("sample id")?;
            let source_index = d.usize("source index")?;
            let kind_tag = d.u8("shift kind")?;
            let kind = ShiftKind::from_tag(kind_tag).ok_or_else(|| d.err(format!("unknown shift kind tag {kind_tag}")))?;
            let severity = d.u8("severity")?;
            out.push(Annotation { id, source_index, shift: ShiftSpec { kind, severity } });
        }
        Some(out)
    } else {
        None
    };
    d.finish("dataset")?;
    let data = LabeledDataset::new(inputs, labels, classes)?;
    Ok(DatasetFile { data, sample_shape, annotations })
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    decode_dataset(&read(path)?, path)
}

pub fn write_dataset(path: &Path, data: &LabeledDataset, sample_shape: &[usize], annotations: Option<&[Annotation]>) -> Result<()> {
    if data.num_classes > u16::MAX as usize + 1 {
        return Err(leantta_core::Error::Unsupported(format!("{} classes do not fit 16-bit labels", data.num_classes)).into());
    }
    write_bytes(path, &encode_dataset(data, sample_shape, annotations))
}

pub fn write_stream(path: &Path, items: &[StreamItem], num_classes: usize, sample_shape: &[usize]) -> Result<()> {
    let data = LabeledDataset::new(items.iter().map(|i| i.input.clone()).collect(), items.iter().map(|i| i.label).collect(), num_classes)?;
    let ann: Vec<Annotation> = items.iter().map(|i| Annotation { id: i.id, source_index: i.source_index, shift: i.shift }).collect();
    write_dataset(path, &data, sample_shape, Some(&ann))
}

/// Stream items from a dataset file; files without annotations read as a
/// clean stream in file order.
pub fn read_stream(path: &Path) -> Result<(Vec<StreamItem>, DatasetFile)> {
    let file = read_dataset(path)?;
    let items = match &file.annotations {
        Some(ann) => ann
            .iter()
            .zip(file.data.inputs.iter().zip(&file.data.labels))
            .map(|(a, (x, &label))| StreamItem { id: a.id, source_index: a.source_index, input: x.clone(), label, shift: a.shift })
            .collect(),
        None => leantta_core::shift::clean_stream(&file.data),
    };
    Ok((items, file))
}
