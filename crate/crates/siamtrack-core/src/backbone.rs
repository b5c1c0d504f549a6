//! Declarative Siamese feature-extractor descriptions.
//!
//! A backbone is a line-based list of layers:
//!
//! ```text
//! conv k=7 s=2 c=12 g=1 act=relu
//! maxpool k=3 s=2
//! ```
//!
//! Blank lines and `#` comments are ignored. [`analyze`] reports the total
//! stride and receptive field of a spec, [`build`] instantiates seeded
//! parameters, and [`check_design_rules`] flags departures from the design
//! guidelines (stride near 8, receptive field at 70-80% of the exemplar,
//! 256 channels in the deepest convolution).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::rng;
use crate::tensor::Tensor;

/// Exemplar patch side in pixels; the receptive-field guideline and
/// [`NetAnalysis::rf_fraction_of_exemplar`] are relative to it.
pub const EXEMPLAR_SIZE: usize = 127;

/// Instance (search) patch side in pixels.
pub const INSTANCE_SIZE: usize = 255;

/// The reference backbone shipped with the repository: total stride 8,
/// receptive field 91 (72% of the exemplar), grouped middle convolutions,
/// 256 deepest channels. On a 127/255 input pair it produces 5x5 and 21x21
/// feature maps and therefore a 17x17 score map.
pub const REFERENCE_BACKBONE: &str = "\
# reference backbone: stride 8, receptive field 91
conv k=7 s=2 c=12 g=1 act=relu
maxpool k=3 s=2
conv k=7 s=1 c=24 g=2 act=relu
maxpool k=3 s=2
conv k=3 s=1 c=32 g=2 act=relu
conv k=3 s=1 c=32 g=2 act=relu
conv k=3 s=1 c=256 g=1 act=none
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv {
        kernel: usize,
        stride: usize,
        out_channels: usize,
        groups: usize,
        activation: Activation,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
}

impl Layer {
    pub fn kernel(&self) -> usize {
        match self {
            Layer::Conv { kernel, .. } | Layer::MaxPool { kernel, .. } => *kernel,
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            Layer::Conv { stride, .. } | Layer::MaxPool { stride, .. } => *stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    pub input_channels: usize,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetAnalysis {
    pub total_stride: usize,
    pub receptive_field: usize,
    pub rf_fraction_of_exemplar: f64,
}

fn parse_fields<'a>(line_no: usize, parts: &[&'a str], expected: &[&str]) -> Result<Vec<&'a str>> {
    let mut values: Vec<Option<&str>> = vec![None; expected.len()];
    for part in parts {
        let (key, value) = part.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            detail: format!("expected key=value, got `{part}`"),
        })?;
        let slot = expected
            .iter()
            .position(|e| *e == key)
            .ok_or_else(|| Error::Parse {
                line: line_no,
                detail: format!("unknown key `{key}`"),
            })?;
        if values[slot].is_some() {
            return Err(Error::Parse {
                line: line_no,
                detail: format!("duplicate key `{key}`"),
            });
        }
        values[slot] = Some(value);
    }
    expected
        .iter()
        .zip(values)
        .map(|(key, v)| {
            v.ok_or_else(|| Error::Parse {
                line: line_no,
                detail: format!("missing key `{key}`"),
            })
        })
        .collect()
}

fn parse_int(line_no: usize, key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| Error::Parse {
        line: line_no,
        detail: format!("`{key}` must be a positive integer, got `{value}`"),
    })
}

/// Parses and validates a backbone description (3-channel input assumed).
pub fn parse_backbone_spec(text: &str) -> Result<BackboneSpec> {
    let mut layers = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let layer = match parts[0] {
            "conv" => {
                let v = parse_fields(line_no, &parts[1..], &["k", "s", "c", "g", "act"])?;
                let activation = match v[4] {
                    "relu" => Activation::Relu,
                    "none" => Activation::None,
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            detail: format!("`act` must be relu or none, got `{other}`"),
                        })
                    }
                };
                Layer::Conv {
                    kernel: parse_int(line_no, "k", v[0])?,
                    stride: parse_int(line_no, "s", v[1])?,
                    out_channels: parse_int(line_no, "c", v[2])?,
                    groups: parse_int(line_no, "g", v[3])?,
                    activation,
                }
            }
            "maxpool" => {
                let v = parse_fields(line_no, &parts[1..], &["k", "s"])?;
                Layer::MaxPool {
                    kernel: parse_int(line_no, "k", v[0])?,
                    stride: parse_int(line_no, "s", v[1])?,
                }
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!("unknown layer kind `{other}`"),
                })
            }
        };
        if layer.kernel() < 1 {
            return Err(Error::Parse {
                line: line_no,
                detail: "kernel >= 1 required".into(),
            });
        }
        if layer.stride() < 1 {
            return Err(Error::Parse {
                line: line_no,
                detail: "stride >= 1 required".into(),
            });
        }
        if let Layer::Conv {
            out_channels,
            groups,
            ..
        } = layer
        {
            if out_channels < 1 || groups < 1 {
                return Err(Error::Parse {
                    line: line_no,
                    detail: "channels and groups must be >= 1".into(),
                });
            }
        }
        layers.push(layer);
        lines.push(line_no);
    }

    let spec = BackboneSpec {
        input_channels: 3,
        layers,
    };
    if spec.layers.is_empty() {
        return Err(Error::invalid("backbone", "no layers defined"));
    }

    // Group divisibility can only be checked once the input channel count
    // of each layer is known.
    let mut channels = spec.input_channels;
    for (layer, line_no) in spec.layers.iter().zip(&lines) {
        if let Layer::Conv {
            out_channels,
            groups,
            ..
        } = layer
        {
            if channels % groups != 0 || out_channels % groups != 0 {
                return Err(Error::Parse {
                    line: *line_no,
                    detail: format!(
                        "groups {groups} must divide in channels {channels} and out channels {out_channels}"
                    ),
                });
            }
            channels = *out_channels;
        }
    }

    feature_size(&spec, EXEMPLAR_SIZE)?;
    Ok(spec)
}

/// Spatial output size for a square input, or the failing layer index.
pub fn feature_size(spec: &BackboneSpec, input: usize) -> Result<usize> {
    let mut size = input;
    for (i, layer) in spec.layers.iter().enumerate() {
        size = kernels::conv_out_size(size, layer.kernel(), layer.stride()).ok_or_else(|| {
            Error::invalid(
                "backbone input",
                format!("layer {i} needs input >= {}, got {size}", layer.kernel()),
            )
        })?;
    }
    Ok(size)
}

/// Output channel count of the deepest convolution.
pub fn out_channels(spec: &BackboneSpec) -> usize {
    spec.layers
        .iter()
        .rev()
        .find_map(|l| match l {
            Layer::Conv { out_channels, .. } => Some(*out_channels),
            _ => None,
        })
        .unwrap_or(spec.input_channels)
}

/// Total stride and receptive field by the standard composition rule
/// (`r <- r + (k-1)*j`, `j <- j*s`).
pub fn analyze(spec: &BackboneSpec) -> NetAnalysis {
    let mut r = 1usize;
    let mut j = 1usize;
    for layer in &spec.layers {
        r += (layer.kernel() - 1) * j;
        j *= layer.stride();
    }
    NetAnalysis {
        total_stride: j,
        receptive_field: r,
        rf_fraction_of_exemplar: r as f64 / EXEMPLAR_SIZE as f64,
    }
}

/// Advisory findings for specs that leave the preferred design region.
pub fn check_design_rules(analysis: &NetAnalysis, spec: &BackboneSpec) -> Vec<String> {
    let mut findings = Vec::new();
    if !(7..=9).contains(&analysis.total_stride) {
        findings.push(format!(
            "stride {} outside preferred 7-9",
            analysis.total_stride
        ));
    }
    let pct = analysis.rf_fraction_of_exemplar * 100.0;
    if !(0.70..=0.80).contains(&analysis.rf_fraction_of_exemplar) {
        findings.push(format!(
            "receptive field {pct:.0}% of exemplar, preferred 70-80%"
        ));
    }
    let deepest = out_channels(spec);
    if deepest != 256 {
        findings.push(format!("deepest conv channels {deepest}, preferred 256"));
    }
    findings
}

/// Parameter names for layer `i` of a spec.
pub fn layer_names(i: usize) -> (String, String) {
    (format!("layer{i}.weight"), format!("layer{i}.bias"))
}

/// Instantiates parameters: weights from a seeded uniform distribution
/// scaled by `1/sqrt(fan_in)` (bound `sqrt(6)/sqrt(fan_in)`, which keeps
/// activation magnitudes steady through ReLU layers), biases zero.
pub fn build(spec: &BackboneSpec, seed: u64) -> BTreeMap<String, Tensor> {
    let mut params = BTreeMap::new();
    let mut r = rng::seeded(seed);
    let mut channels = spec.input_channels;
    for (i, layer) in spec.layers.iter().enumerate() {
        if let Layer::Conv {
            kernel,
            out_channels,
            groups,
            ..
        } = layer
        {
            let cin_g = channels / groups;
            let fan_in = (cin_g * kernel * kernel) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let n = out_channels * cin_g * kernel * kernel;
            let data = (0..n).map(|_| rng::uniform(&mut r, -bound, bound)).collect();
            let (w_name, b_name) = layer_names(i);
            params.insert(
                w_name,
                Tensor::new(vec![*out_channels, cin_g, *kernel, *kernel], data)
                    .expect("consistent shape"),
            );
            params.insert(b_name, Tensor::zeros(vec![*out_channels]));
            channels = *out_channels;
        }
    }
    params
}

/// Shared-parameter forward pass used for both the exemplar and instance
/// branches.
pub fn forward(
    spec: &BackboneSpec,
    params: &BTreeMap<String, Tensor>,
    image: &Tensor,
) -> Result<Tensor> {
    let mut x = image.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        x = match layer {
            Layer::Conv {
                stride,
                groups,
                activation,
                ..
            } => {
                let (w_name, b_name) = layer_names(i);
                let out = kernels::conv2d(&x, &params[&w_name], &params[&b_name], *stride, *groups)
                    .map_err(|e| layer_error(i, e))?;
                match activation {
                    Activation::Relu => kernels::relu(&out),
                    Activation::None => out,
                }
            }
            Layer::MaxPool { kernel, stride } => {
                kernels::maxpool2d(&x, *kernel, *stride).map_err(|e| layer_error(i, e))?
            }
        };
    }
    Ok(x)
}

/// Graph-recorded forward pass for training.
pub fn forward_graph(
    g: &mut Graph,
    spec: &BackboneSpec,
    vars: &BTreeMap<String, Var>,
    image: Var,
) -> Result<Var> {
    let mut x = image;
    for (i, layer) in spec.layers.iter().enumerate() {
        x = match layer {
            Layer::Conv {
                stride,
                groups,
                activation,
                ..
            } => {
                let (w_name, b_name) = layer_names(i);
                let out = g
                    .conv2d(x, vars[&w_name], vars[&b_name], *stride, *groups)
                    .map_err(|e| layer_error(i, e))?;
                match activation {
                    Activation::Relu => g.relu(out),
                    Activation::None => out,
                }
            }
            Layer::MaxPool { kernel, stride } => g
                .maxpool2d(x, *kernel, *stride)
                .map_err(|e| layer_error(i, e))?,
        };
    }
    Ok(x)
}

fn layer_error(index: usize, e: Error) -> Error {
    match e {
        Error::Shape { op, detail } => Error::Shape {
            op,
            detail: format!("layer {index}: {detail}"),
        },
        other => other,
    }
}
