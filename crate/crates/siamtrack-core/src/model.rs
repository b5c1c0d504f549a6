//! The complete tracking network: a shared backbone plus three 1x1
//! convolution heads (score, offset, size) applied to the depthwise
//! correlation of the two branch features.

use std::collections::BTreeMap;
use std::path::Path;

use crate::backbone::{self, BackboneSpec};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::labels::{HeadOutput, HeadTargets};
use crate::losses::LossWeights;
use crate::tensor::Tensor;

pub const SCORE_WEIGHT: &str = "head.score.weight";
pub const SCORE_BIAS: &str = "head.score.bias";
pub const OFFSET_WEIGHT: &str = "head.offset.weight";
pub const OFFSET_BIAS: &str = "head.offset.bias";
pub const SIZE_WEIGHT: &str = "head.size.weight";
pub const SIZE_BIAS: &str = "head.size.bias";

/// Score-map geometry implied by a backbone on the 127/255 patch pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub stride: usize,
    pub map_size: usize,
    pub exemplar_feat: usize,
    pub instance_feat: usize,
}

impl Geometry {
    /// Patch-pixel position of map cell (0, 0): the map is centered in the
    /// patch, and decoding adds this offset back through the crop origin.
    pub fn map_origin_in_patch(&self, patch_size: usize) -> f64 {
        patch_size as f64 / 2.0 - (self.stride * (self.map_size - 1)) as f64 / 2.0
    }
}

/// Validates that the spec's stride divides the 127/255 patch gap and that
/// the resulting score map is consistent with the layer arithmetic.
pub fn score_geometry(spec: &BackboneSpec) -> Result<Geometry> {
    let analysis = backbone::analyze(spec);
    let stride = analysis.total_stride;
    let exemplar_feat = backbone::feature_size(spec, backbone::EXEMPLAR_SIZE)?;
    let instance_feat = backbone::feature_size(spec, backbone::INSTANCE_SIZE)?;
    let gap = (backbone::INSTANCE_SIZE - backbone::EXEMPLAR_SIZE) as f64;
    let expected = gap / stride as f64 + 1.0;
    if expected.fract() != 0.0 {
        return Err(Error::invalid(
            "backbone geometry",
            format!("score map size {expected} is not an integer (stride {stride})"),
        ));
    }
    let map_size = instance_feat - exemplar_feat + 1;
    if map_size != expected as usize {
        return Err(Error::invalid(
            "backbone geometry",
            format!(
                "layer arithmetic gives a {map_size}-cell score map but the stride predicts {expected}"
            ),
        ));
    }
    Ok(Geometry {
        stride,
        map_size,
        exemplar_feat,
        instance_feat,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackModel {
    pub spec: BackboneSpec,
    pub params: BTreeMap<String, Tensor>,
}

/// Shapes every parameter of a model for `spec` must have; used to vet
/// checkpoints against a backbone before tracking.
pub fn expected_shapes(spec: &BackboneSpec) -> BTreeMap<String, Vec<usize>> {
    let mut shapes = BTreeMap::new();
    let mut channels = spec.input_channels;
    for (i, layer) in spec.layers.iter().enumerate() {
        if let backbone::Layer::Conv {
            kernel,
            out_channels,
            groups,
            ..
        } = layer
        {
            let (w, b) = backbone::layer_names(i);
            shapes.insert(w, vec![*out_channels, channels / groups, *kernel, *kernel]);
            shapes.insert(b, vec![*out_channels]);
            channels = *out_channels;
        }
    }
    let c = backbone::out_channels(spec);
    shapes.insert(SCORE_WEIGHT.into(), vec![1, c, 1, 1]);
    shapes.insert(SCORE_BIAS.into(), vec![1]);
    shapes.insert(OFFSET_WEIGHT.into(), vec![2, c, 1, 1]);
    shapes.insert(OFFSET_BIAS.into(), vec![2]);
    shapes.insert(SIZE_WEIGHT.into(), vec![2, c, 1, 1]);
    shapes.insert(SIZE_BIAS.into(), vec![2]);
    shapes
}

/// Prior for the score-head bias: most cells are background, so the
/// logistic output starts near 0.1 instead of 0.5.
const SCORE_BIAS_PRIOR: f64 = -2.0;

/// Gain on the initial channel-averaging score weights. Normalized
/// correlations are well under 1, so this spreads the logistic output
/// enough that the hanning prior cannot mask the match peak before any
/// training has happened.
const SCORE_GAIN: f64 = 8.0;

/// Prior for the size-head bias: the crop rule maps a square target to
/// half the exemplar side in patch pixels, so start at ln(127/2).
fn size_bias_prior() -> f64 {
    (backbone::EXEMPLAR_SIZE as f64 / 2.0).ln()
}

impl TrackModel {
    /// Fresh model with seeded backbone weights and prior-initialized
    /// heads. The score head starts as the uniform channel average of the
    /// correlation volume (a plain template matcher) with a low bias; the
    /// offset and size heads start as pure biases at the half-cell neutral
    /// point and the log patch extent the crop rule assigns a square
    /// target.
    pub fn new(spec: BackboneSpec, seed: u64) -> Result<Self> {
        score_geometry(&spec)?;
        let mut params = backbone::build(&spec, seed);
        let c = backbone::out_channels(&spec);
        params.insert(
            SCORE_WEIGHT.into(),
            Tensor::filled(vec![1, c, 1, 1], SCORE_GAIN / c as f64),
        );
        params.insert(SCORE_BIAS.into(), Tensor::filled(vec![1], SCORE_BIAS_PRIOR));
        params.insert(OFFSET_WEIGHT.into(), Tensor::zeros(vec![2, c, 1, 1]));
        params.insert(OFFSET_BIAS.into(), Tensor::filled(vec![2], 0.5));
        params.insert(SIZE_WEIGHT.into(), Tensor::zeros(vec![2, c, 1, 1]));
        params.insert(SIZE_BIAS.into(), Tensor::filled(vec![2], size_bias_prior()));
        Ok(TrackModel { spec, params })
    }

    pub fn geometry(&self) -> Result<Geometry> {
        score_geometry(&self.spec)
    }

    /// Branch features: backbone output scaled to unit RMS so correlation
    /// magnitudes are independent of the raw feature scale.
    pub fn forward_features(&self, patch: &Tensor) -> Result<Tensor> {
        Ok(kernels::rms_normalize(&backbone::forward(
            &self.spec,
            &self.params,
            patch,
        )?))
    }

    /// Head maps from a correlation volume (already averaged per cell).
    pub fn forward_head(&self, corr: &Tensor) -> Result<HeadOutput> {
        let conv = |w: &str, b: &str| -> Result<Tensor> {
            kernels::conv2d(corr, &self.params[w], &self.params[b], 1, 1)
        };
        let score = kernels::sigmoid(&conv(SCORE_WEIGHT, SCORE_BIAS)?);
        let offset = conv(OFFSET_WEIGHT, OFFSET_BIAS)?;
        let size = conv(SIZE_WEIGHT, SIZE_BIAS)?;
        Ok(HeadOutput {
            score,
            offset,
            size,
        })
    }

    /// Full inference for one instance patch against frozen exemplar
    /// features.
    pub fn infer(&self, exemplar_features: &Tensor, instance_patch: &Tensor) -> Result<HeadOutput> {
        let instance_features = self.forward_features(instance_patch)?;
        let corr = kernels::xcorr_depthwise(&instance_features, exemplar_features)?;
        // Average over the exemplar window so cells are O(1) regardless of
        // the exemplar feature size, then remove each channel's spatial
        // mean: a per-channel scalar shift that kills the correlation
        // common mode without disturbing cell ordering.
        let window = (exemplar_features.shape()[1] * exemplar_features.shape()[2]) as f64;
        let scaled = Tensor::new(
            corr.shape().to_vec(),
            corr.data().iter().map(|v| v / window).collect(),
        )?;
        self.forward_head(&kernels::center_channels(&scaled))
    }

    /// Records the complete training loss for one pair on a fresh graph.
    /// Returns the graph, the loss node, and the parameter nodes by name.
    pub fn loss_graph(
        &self,
        exemplar: &Tensor,
        instance: &Tensor,
        targets: &HeadTargets,
        weights: &LossWeights,
    ) -> Result<(Graph, Var, Vec<(String, Var)>)> {
        let mut g = Graph::new();
        let mut vars = BTreeMap::new();
        let mut named = Vec::with_capacity(self.params.len());
        for (name, tensor) in &self.params {
            let v = g.param(tensor);
            vars.insert(name.clone(), v);
            named.push((name.clone(), v));
        }
        let ex_in = g.constant(exemplar.clone());
        let inst_in = g.constant(instance.clone());
        let ex_feat = backbone::forward_graph(&mut g, &self.spec, &vars, ex_in)?;
        let ex_feat = g.rms_norm(ex_feat);
        let inst_feat = backbone::forward_graph(&mut g, &self.spec, &vars, inst_in)?;
        let inst_feat = g.rms_norm(inst_feat);
        let raw_corr = g.xcorr_depthwise(inst_feat, ex_feat)?;
        let ex_shape = g.value(ex_feat).shape();
        let window = (ex_shape[1] * ex_shape[2]) as f64;
        let scaled = g.scale(raw_corr, 1.0 / window);
        let corr = g.center_channels(scaled)?;
        let score_logits = g.conv2d(corr, vars[SCORE_WEIGHT], vars[SCORE_BIAS], 1, 1)?;
        let score = g.sigmoid(score_logits);
        let offset = g.conv2d(corr, vars[OFFSET_WEIGHT], vars[OFFSET_BIAS], 1, 1)?;
        let size = g.conv2d(corr, vars[SIZE_WEIGHT], vars[SIZE_BIAS], 1, 1)?;
        let cls = g.focal_loss(score, &targets.score_label)?;
        let off = g.offset_loss(offset, targets.delta)?;
        let scl = g.scale_loss(size, targets.size_log, targets.center_cell)?;
        let loss = g.total_loss(cls, off, scl, weights)?;
        Ok((g, loss, named))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    /// Loads a checkpoint for a known backbone, rejecting name or shape
    /// mismatches.
    pub fn load(spec: BackboneSpec, path: &Path) -> Result<Self> {
        let params = checkpoint::load(path)?;
        let expected = expected_shapes(&spec);
        for (name, shape) in &expected {
            match params.get(name) {
                None => {
                    return Err(Error::shape(
                        "checkpoint",
                        format!("missing tensor `{name}` for this backbone"),
                    ))
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::shape(
                        "checkpoint",
                        format!(
                            "tensor `{name}` has shape {:?}, backbone wants {shape:?}",
                            t.shape()
                        ),
                    ))
                }
                _ => {}
            }
        }
        if let Some(extra) = params.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::shape(
                "checkpoint",
                format!("unexpected tensor `{extra}` for this backbone"),
            ));
        }
        Ok(TrackModel { spec, params })
    }
}
