//! Model packages.
//!
//! On disk a package is a JSON manifest plus one raw blob of little-endian
//! f32 values. Each parameterised layer declares the offset (in values, not
//! bytes) of its parameters; offsets must tile the blob contiguously in layer
//! order. Conv parameters are `weight[out][in][ky][kx]` followed by
//! `bias[out]`; batch-norm parameters are `γ, β, μ, σ²`, one per channel.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::{BatchNorm, Conv2d};
use super::{Architecture, ModelError, Variant};
use crate::config::BandConfig;
use crate::rng::RngStream;

pub const MANIFEST_FORMAT: &str = "dualband-model";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    Tanh,
    MaxPool2,
    Upsample2,
    /// Appends the output of an earlier layer (by index) after the current channels.
    ConcatSkip { source: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::BatchNorm(_) => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::Upsample2 => "upsample2",
            LayerSpec::ConcatSkip { .. } => "concat_skip",
        }
    }

    fn num_values(&self) -> usize {
        match self {
            LayerSpec::Conv(c) => c.weight_len() + c.out_channels,
            LayerSpec::BatchNorm(b) => 4 * b.channels(),
            _ => 0,
        }
    }
}

/// A validated, immutable network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPackage {
    architecture: Architecture,
    variant: Variant,
    height: usize,
    width: usize,
    input_scale: f64,
    output_scale: f64,
    layers: Vec<LayerSpec>,
    /// Layers whose output is consumed by a later skip connection.
    retained: Vec<bool>,
}

impl ModelPackage {
    /// Checks channel flow, pooling parity, skip sources and the output head.
    pub fn new(
        architecture: Architecture,
        variant: Variant,
        height: usize,
        width: usize,
        input_scale: f64,
        output_scale: f64,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, ModelError> {
        check_scale("input_scale", input_scale)?;
        check_scale("output_scale", output_scale)?;
        if height == 0 || width == 0 {
            return Err(ModelError::Topology(format!("model shape {height}x{width}")));
        }
        if layers.is_empty() {
            return Err(ModelError::Topology("empty layer list".into()));
        }
        let in_channels = variant.input_channels();
        match layers.first() {
            Some(LayerSpec::Conv(c)) if c.in_channels == in_channels => {}
            Some(LayerSpec::Conv(c)) => {
                return Err(ModelError::Topology(format!(
                    "first conv takes {} channels, {variant} models take {in_channels}",
                    c.in_channels
                )))
            }
            _ => return Err(ModelError::Topology("first layer must be a conv".into())),
        }

        let mut shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(layers.len());
        let mut retained = vec![false; layers.len()];
        let mut cur = (in_channels, height, width);
        for (i, layer) in layers.iter().enumerate() {
            let (c, h, w) = cur;
            let bad = |msg: String| ModelError::Topology(format!("layer {i} ({}): {msg}", layer.kind()));
            cur = match layer {
                LayerSpec::Conv(conv) => {
                    conv.check()?;
                    if conv.in_channels != c {
                        return Err(bad(format!("expects {} channels, receives {c}", conv.in_channels)));
                    }
                    let (oh, ow) = conv
                        .output_size(h, w)
                        .filter(|(oh, ow)| *oh > 0 && *ow > 0)
                        .ok_or_else(|| bad(format!("kernel {} does not fit {h}x{w}", conv.kernel)))?;
                    (conv.out_channels, oh, ow)
                }
                LayerSpec::BatchNorm(bn) => {
                    bn.check()?;
                    if bn.channels() != c {
                        return Err(bad(format!("has {} channels, receives {c}", bn.channels())));
                    }
                    cur
                }
                LayerSpec::Relu | LayerSpec::Tanh => cur,
                LayerSpec::MaxPool2 => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(bad(format!("odd spatial size {h}x{w}")));
                    }
                    (c, h / 2, w / 2)
                }
                LayerSpec::Upsample2 => (c, 2 * h, 2 * w),
                LayerSpec::ConcatSkip { source } => {
                    if *source >= i {
                        return Err(bad(format!("skip source {source} is not an earlier layer")));
                    }
                    let (sc, sh, sw) = shapes[*source];
                    if (sh, sw) != (h, w) {
                        return Err(bad(format!("skip source is {sh}x{sw}, decoder is {h}x{w}")));
                    }
                    retained[*source] = true;
                    (c + sc, h, w)
                }
            };
            shapes.push(cur);
        }
        if !matches!(layers.last(), Some(LayerSpec::Tanh)) {
            return Err(ModelError::Topology("final layer must be tanh".into()));
        }
        if cur != (2, height, width) {
            return Err(ModelError::Topology(format!(
                "output shape {cur:?}, expected (2, {height}, {width})"
            )));
        }
        Ok(ModelPackage {
            architecture,
            variant,
            height,
            width,
            input_scale,
            output_scale,
            layers,
            retained,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn input_channels(&self) -> usize {
        self.variant.input_channels()
    }

    /// Trained `(M_Rx, M_Tx)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub(crate) fn is_retained(&self, layer: usize) -> bool {
        self.retained[layer]
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(LayerSpec::num_values).sum()
    }

    pub fn num_convs(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Conv(_))).count()
    }

    pub fn with_scales(mut self, input_scale: f64, output_scale: f64) -> Result<Self, ModelError> {
        check_scale("input_scale", input_scale)?;
        check_scale("output_scale", output_scale)?;
        self.input_scale = input_scale;
        self.output_scale = output_scale;
        Ok(self)
    }

    /// Rejects a model trained for a different array size.
    pub fn ensure_shape(&self, num_rx: usize, num_tx: usize) -> Result<(), ModelError> {
        if (self.height, self.width) != (num_rx, num_tx) {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{num_rx}x{num_tx} (runtime band)"),
                actual: format!("{}x{} (model)", self.height, self.width),
            });
        }
        Ok(())
    }

    /// Nine hidden `conv3×3(64) → ReLU → BN` blocks and a `conv3×3(2) → tanh` head,
    /// with random weights. Used for fixtures and plumbing tests.
    pub fn random_cnn(variant: Variant, height: usize, width: usize, rng: &mut RngStream) -> Result<Self, ModelError> {
        Self::random_cnn_with(variant, height, width, 64, 9, rng)
    }

    pub fn random_cnn_with(
        variant: Variant,
        height: usize,
        width: usize,
        hidden: usize,
        depth: usize,
        rng: &mut RngStream,
    ) -> Result<Self, ModelError> {
        let mut layers = Vec::new();
        let mut c = variant.input_channels();
        for _ in 0..depth {
            push_block(&mut layers, c, hidden, rng);
            c = hidden;
        }
        layers.push(LayerSpec::Conv(random_conv(c, 2, rng)));
        layers.push(LayerSpec::Tanh);
        Self::new(Architecture::Cnn, variant, height, width, 1.0, 1.0, layers)
    }

    /// Two encoders (32, 64 channels) with 2×2 max-pool after each, two decoders
    /// (upsample, concat the matching encoder output, 64 then 32 channels), five
    /// `conv → ReLU → BN` blocks per stage, `conv3×3(2) → tanh` head.
    pub fn random_unet(variant: Variant, height: usize, width: usize, rng: &mut RngStream) -> Result<Self, ModelError> {
        Self::random_unet_with(variant, height, width, 32, 5, rng)
    }

    pub fn random_unet_with(
        variant: Variant,
        height: usize,
        width: usize,
        base: usize,
        convs_per_stage: usize,
        rng: &mut RngStream,
    ) -> Result<Self, ModelError> {
        if convs_per_stage == 0 {
            return Err(ModelError::Topology("unet stages need at least one conv".into()));
        }
        let mut layers = Vec::new();
        let stage = |layers: &mut Vec<LayerSpec>, c_in: usize, c_out: usize, rng: &mut RngStream| {
            let mut c = c_in;
            for _ in 0..convs_per_stage {
                push_block(layers, c, c_out, rng);
                c = c_out;
            }
            layers.len() - 1
        };
        let enc1 = stage(&mut layers, variant.input_channels(), base, rng);
        layers.push(LayerSpec::MaxPool2);
        let enc2 = stage(&mut layers, base, 2 * base, rng);
        layers.push(LayerSpec::MaxPool2);
        layers.push(LayerSpec::Upsample2);
        layers.push(LayerSpec::ConcatSkip { source: enc2 });
        stage(&mut layers, 4 * base, 2 * base, rng);
        layers.push(LayerSpec::Upsample2);
        layers.push(LayerSpec::ConcatSkip { source: enc1 });
        stage(&mut layers, 3 * base, base, rng);
        layers.push(LayerSpec::Conv(random_conv(base, 2, rng)));
        layers.push(LayerSpec::Tanh);
        Self::new(Architecture::Unet, variant, height, width, 1.0, 1.0, layers)
    }

    pub fn random(
        architecture: Architecture,
        variant: Variant,
        height: usize,
        width: usize,
        rng: &mut RngStream,
    ) -> Result<Self, ModelError> {
        match architecture {
            Architecture::Cnn => Self::random_cnn(variant, height, width, rng),
            Architecture::Unet => Self::random_unet(variant, height, width, rng),
        }
    }
}

fn check_scale(name: &str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Values are rounded through f32 so a saved package reloads bit-identically.
fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

fn random_conv(c_in: usize, c_out: usize, rng: &mut RngStream) -> Conv2d {
    let k = 3;
    let std = (2.0 / (c_in * k * k) as f64).sqrt();
    Conv2d {
        in_channels: c_in,
        out_channels: c_out,
        kernel: k,
        padding: 1,
        weight: (0..c_out * c_in * k * k)
            .map(|_| f32_round(std * rng.standard_normal()))
            .collect(),
        bias: (0..c_out).map(|_| f32_round(rng.uniform(-0.1, 0.1))).collect(),
    }
}

fn random_bn(c: usize, rng: &mut RngStream) -> BatchNorm {
    let mut draw = |lo: f64, hi: f64| (0..c).map(|_| f32_round(rng.uniform(lo, hi))).collect::<Vec<_>>();
    BatchNorm {
        gamma: draw(0.5, 1.5),
        beta: draw(-0.1, 0.1),
        mean: draw(-0.1, 0.1),
        var: draw(0.5, 1.5),
        eps: 1e-3,
    }
}

fn push_block(layers: &mut Vec<LayerSpec>, c_in: usize, c_out: usize, rng: &mut RngStream) {
    layers.push(LayerSpec::Conv(random_conv(c_in, c_out, rng)));
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::BatchNorm(random_bn(c_out, rng)));
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    architecture: Architecture,
    variant: Variant,
    input_channels: usize,
    height: usize,
    width: usize,
    input_scale: f64,
    output_scale: f64,
    layers: Vec<serde_json::Value>,
    blob: BlobInfo,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobInfo {
    file: String,
    /// Number of f32 values.
    values: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvEntry {
    kind: String,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    padding: usize,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchNormEntry {
    kind: String,
    channels: usize,
    eps: f64,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlainEntry {
    kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkipEntry {
    kind: String,
    source: usize,
}

fn parse_entry<T: serde::de::DeserializeOwned>(i: usize, v: &serde_json::Value) -> Result<T, ModelError> {
    serde_json::from_value(v.clone()).map_err(|e| ModelError::Parse(format!("layer {i}: {e}")))
}

fn take<'a>(blob: &'a [f32], cursor: &mut usize, offset: usize, len: usize, i: usize) -> Result<&'a [f32], ModelError> {
    if offset != *cursor {
        return Err(ModelError::SizeMismatch(format!(
            "layer {i} declares offset {offset}, expected {cursor}"
        )));
    }
    let end = offset + len;
    if end > blob.len() {
        return Err(ModelError::SizeMismatch(format!(
            "layer {i} needs values {offset}..{end}, blob holds {}",
            blob.len()
        )));
    }
    *cursor = end;
    Ok(&blob[offset..end])
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>, ModelError> {
    fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn blob_path(manifest_path: &Path, file: &str) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(file)
}

/// Loads and fully validates a package: manifest syntax, layer kinds, blob
/// size, checksum, offsets and network topology.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelPackage, ModelError> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| ModelError::Parse(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(ModelError::Parse(format!("format tag {:?}", manifest.format)));
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(ModelError::Parse(format!("unsupported version {}", manifest.version)));
    }
    if manifest.input_channels != manifest.variant.input_channels() {
        return Err(ModelError::Topology(format!(
            "{} models take {} input channels, manifest declares {}",
            manifest.variant,
            manifest.variant.input_channels(),
            manifest.input_channels
        )));
    }

    // Layer kinds are checked before touching the blob.
    let mut kinds = Vec::with_capacity(manifest.layers.len());
    for (i, v) in manifest.layers.iter().enumerate() {
        let kind = v
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| ModelError::Parse(format!("layer {i} has no kind")))?;
        match kind {
            "conv" | "batchnorm" | "relu" | "tanh" | "maxpool2" | "upsample2" | "concat_skip" => {
                kinds.push(kind.to_string())
            }
            other => return Err(ModelError::UnknownLayerKind(other.to_string())),
        }
    }

    let bytes = read_file(&blob_path(path, &manifest.blob.file))?;
    if bytes.len() != manifest.blob.values * 4 {
        return Err(ModelError::SizeMismatch(format!(
            "manifest declares {} values ({} bytes), blob has {} bytes",
            manifest.blob.values,
            manifest.blob.values * 4,
            bytes.len()
        )));
    }
    let digest = hex::encode(Sha256::digest(&bytes));
    if !digest.eq_ignore_ascii_case(&manifest.blob.sha256) {
        return Err(ModelError::ChecksumMismatch {
            expected: manifest.blob.sha256.clone(),
            actual: digest,
        });
    }
    let blob: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let mut cursor = 0;
    let mut layers = Vec::with_capacity(kinds.len());
    for (i, (kind, v)) in kinds.iter().zip(&manifest.layers).enumerate() {
        let layer = match kind.as_str() {
            "conv" => {
                let e: ConvEntry = parse_entry(i, v)?;
                let nw = e.out_channels * e.in_channels * e.kernel * e.kernel;
                let vals = take(&blob, &mut cursor, e.offset, nw + e.out_channels, i)?;
                LayerSpec::Conv(Conv2d {
                    in_channels: e.in_channels,
                    out_channels: e.out_channels,
                    kernel: e.kernel,
                    padding: e.padding,
                    weight: widen(&vals[..nw]),
                    bias: widen(&vals[nw..]),
                })
            }
            "batchnorm" => {
                let e: BatchNormEntry = parse_entry(i, v)?;
                let c = e.channels;
                let vals = take(&blob, &mut cursor, e.offset, 4 * c, i)?;
                LayerSpec::BatchNorm(BatchNorm {
                    gamma: widen(&vals[..c]),
                    beta: widen(&vals[c..2 * c]),
                    mean: widen(&vals[2 * c..3 * c]),
                    var: widen(&vals[3 * c..]),
                    eps: e.eps,
                })
            }
            "concat_skip" => {
                let e: SkipEntry = parse_entry(i, v)?;
                LayerSpec::ConcatSkip { source: e.source }
            }
            plain => {
                let _: PlainEntry = parse_entry(i, v)?;
                match plain {
                    "relu" => LayerSpec::Relu,
                    "tanh" => LayerSpec::Tanh,
                    "maxpool2" => LayerSpec::MaxPool2,
                    _ => LayerSpec::Upsample2,
                }
            }
        };
        layers.push(layer);
    }
    if cursor != blob.len() {
        return Err(ModelError::SizeMismatch(format!(
            "layers consume {cursor} values, blob holds {}",
            blob.len()
        )));
    }
    ModelPackage::new(
        manifest.architecture,
        manifest.variant,
        manifest.height,
        manifest.width,
        manifest.input_scale,
        manifest.output_scale,
        layers,
    )
}

/// Loads a package and checks it was trained for this band's array size.
pub fn load_model_for_band(path: impl AsRef<Path>, band: &BandConfig) -> Result<ModelPackage, ModelError> {
    let model = load_model(path)?;
    model.ensure_shape(band.num_rx, band.num_tx)?;
    Ok(model)
}

/// Writes `<manifest>` and its blob (`<manifest stem>.bin`, same directory).
/// Output is deterministic: re-saving the same package gives identical bytes.
pub fn save_model(model: &ModelPackage, manifest_path: impl AsRef<Path>) -> Result<(), ModelError> {
    let manifest_path = manifest_path.as_ref();
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| ModelError::InvalidParameter(format!("bad manifest path {}", manifest_path.display())))?;
    let blob_file = format!("{stem}.bin");

    let mut blob: Vec<u8> = Vec::with_capacity(model.num_parameters() * 4);
    let mut push = |vals: &[f64]| {
        for v in vals {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    };
    let mut entries = Vec::with_capacity(model.layers.len());
    let mut offset = 0;
    for layer in &model.layers {
        let kind = layer.kind().to_string();
        let entry = match layer {
            LayerSpec::Conv(c) => {
                push(&c.weight);
                push(&c.bias);
                serde_json::to_value(ConvEntry {
                    kind,
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    padding: c.padding,
                    offset,
                })
            }
            LayerSpec::BatchNorm(b) => {
                push(&b.gamma);
                push(&b.beta);
                push(&b.mean);
                push(&b.var);
                serde_json::to_value(BatchNormEntry {
                    kind,
                    channels: b.channels(),
                    eps: b.eps,
                    offset,
                })
            }
            LayerSpec::ConcatSkip { source } => serde_json::to_value(SkipEntry { kind, source: *source }),
            _ => serde_json::to_value(PlainEntry { kind }),
        }
        .map_err(|e| ModelError::Parse(e.to_string()))?;
        offset += layer.num_values();
        entries.push(entry);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        architecture: model.architecture,
        variant: model.variant,
        input_channels: model.input_channels(),
        height: model.height,
        width: model.width,
        input_scale: model.input_scale,
        output_scale: model.output_scale,
        layers: entries,
        blob: BlobInfo {
            file: blob_file.clone(),
            values: offset,
            sha256: hex::encode(Sha256::digest(&blob)),
        },
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| ModelError::Parse(e.to_string()))?;
    let io = |path: PathBuf| move |source| ModelError::Io { path, source };
    let blob_path = blob_path(manifest_path, &blob_file);
    fs::write(&blob_path, &blob).map_err(io(blob_path.clone()))?;
    fs::write(manifest_path, text + "\n").map_err(io(manifest_path.to_path_buf()))?;
    Ok(())
}
