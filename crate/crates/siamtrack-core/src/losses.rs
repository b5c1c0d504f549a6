//! The three training losses and their weighted combination.
//!
//! The classification term is a penalty-reduced pixel-wise logistic focal
//! loss (exponents 2 and 4) normalized by the count of label-1 cells. The
//! offset term is an L1 over every map cell against the shared sub-stride
//! target; the size term is an L1 read only at the center cell. The total
//! is `cls + 0.1*off + 4*scl` with offset contributions below 1e-8 clamped
//! to zero.

use crate::error::{Error, Result};
use crate::graph::{Graph, Op, Var};
use crate::labels::HeadTargets;
use crate::tensor::Tensor;

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_off: f64,
    pub lambda_scl: f64,
    pub offset_cutoff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_off: 0.1,
            lambda_scl: 4.0,
            offset_cutoff: 1e-8,
        }
    }
}

fn l1_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_focal_inputs(pred: &Tensor, label: &Tensor) -> Result<usize> {
    if pred.shape() != label.shape() {
        return Err(Error::shape(
            "focal_loss",
            format!("pred {:?} vs label {:?}", pred.shape(), label.shape()),
        ));
    }
    if pred.data().iter().any(|&p| p <= 0.0 || p >= 1.0) {
        return Err(Error::invalid(
            "focal_loss prediction",
            "values must lie strictly in (0, 1); apply sigmoid first",
        ));
    }
    let n_pos = label.data().iter().filter(|&&y| y == 1.0).count();
    if n_pos == 0 {
        return Err(Error::invalid(
            "focal_loss label",
            "no cell equals 1 exactly",
        ));
    }
    Ok(n_pos)
}

/// Penalty-reduced focal loss over a score map.
pub fn focal_loss(pred: &Tensor, label: &Tensor) -> Result<f64> {
    let n_pos = check_focal_inputs(pred, label)?;
    let mut acc = 0.0;
    for (&p, &y) in pred.data().iter().zip(label.data()) {
        if y == 1.0 {
            acc += (1.0 - p).powi(FOCAL_ALPHA) * p.ln();
        } else {
            acc += (1.0 - y).powi(FOCAL_BETA) * p.powi(FOCAL_ALPHA) * (1.0 - p).ln();
        }
    }
    Ok(-acc / n_pos as f64)
}

fn focal_grad(pred: &Tensor, label: &Tensor, n_pos: usize, upstream: f64) -> Vec<f64> {
    let scale = -upstream / n_pos as f64;
    pred.data()
        .iter()
        .zip(label.data())
        .map(|(&p, &y)| {
            let d = if y == 1.0 {
                -2.0 * (1.0 - p) * p.ln() + (1.0 - p).powi(2) / p
            } else {
                (1.0 - y).powi(FOCAL_BETA) * (2.0 * p * (1.0 - p).ln() - p.powi(2) / (1.0 - p))
            };
            scale * d
        })
        .collect()
}

fn check_offset_pred(pred: &Tensor) -> Result<(usize, usize)> {
    let s = pred.shape();
    if s.len() != 3 || s[0] != 2 {
        return Err(Error::shape(
            "offset_loss",
            format!("expected [2,M,M] prediction, got {s:?}"),
        ));
    }
    Ok((s[1], s[2]))
}

/// Mean L1 distance to the shared sub-stride target over every map cell.
pub fn offset_loss(pred_offset: &Tensor, target: &HeadTargets) -> Result<f64> {
    let (h, w) = check_offset_pred(pred_offset)?;
    let cells = (h * w) as f64;
    let (dx, dy) = target.delta;
    let data = pred_offset.data();
    let mut acc = 0.0;
    for &px in &data[..h * w] {
        acc += (px - dx).abs();
    }
    for &py in &data[h * w..] {
        acc += (py - dy).abs();
    }
    Ok(acc / cells)
}

/// L1 on the log-size prediction, read only at the center cell.
pub fn scale_loss(pred_size: &Tensor, target: &HeadTargets) -> Result<f64> {
    let s = pred_size.shape();
    if s.len() != 3 || s[0] != 2 {
        return Err(Error::shape(
            "scale_loss",
            format!("expected [2,M,M] prediction, got {s:?}"),
        ));
    }
    let (cx, cy) = target.center_cell;
    if cy >= s[1] || cx >= s[2] {
        return Err(Error::shape(
            "scale_loss",
            format!("center cell ({cx}, {cy}) outside map {}x{}", s[2], s[1]),
        ));
    }
    let a_hat = pred_size.at(0, cy, cx);
    let b_hat = pred_size.at(1, cy, cx);
    let (a, b) = target.size_log;
    Ok((a_hat - a).abs() + (b_hat - b).abs())
}

/// Weighted combination with the small-offset cutoff.
pub fn total_loss(cls: f64, off: f64, scl: f64, w: &LossWeights) -> f64 {
    let off = if off < w.offset_cutoff { 0.0 } else { off };
    cls + w.lambda_off * off + w.lambda_scl * scl
}

struct FocalLossOp {
    label: Tensor,
    n_pos: usize,
}

impl Op for FocalLossOp {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        focal_loss(inputs[0], &self.label).map(Tensor::scalar)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(focal_grad(inputs[0], &self.label, self.n_pos, grad_out[0]))]
    }
}

struct OffsetLossOp {
    delta: (f64, f64),
}

impl Op for OffsetLossOp {
    fn name(&self) -> &'static str {
        "offset_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (h, w) = check_offset_pred(inputs[0])?;
        let cells = (h * w) as f64;
        let data = inputs[0].data();
        let mut acc = 0.0;
        for &px in &data[..h * w] {
            acc += (px - self.delta.0).abs();
        }
        for &py in &data[h * w..] {
            acc += (py - self.delta.1).abs();
        }
        Ok(Tensor::scalar(acc / cells))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let s = inputs[0].shape();
        let plane = s[1] * s[2];
        let scale = grad_out[0] / plane as f64;
        let data = inputs[0].data();
        let mut g = Vec::with_capacity(data.len());
        for &px in &data[..plane] {
            g.push(scale * l1_sign(px - self.delta.0));
        }
        for &py in &data[plane..] {
            g.push(scale * l1_sign(py - self.delta.1));
        }
        vec![Some(g)]
    }
}

struct ScaleLossOp {
    size_log: (f64, f64),
    cell: (usize, usize),
}

impl Op for ScaleLossOp {
    fn name(&self) -> &'static str {
        "scale_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let t = HeadTargets {
            score_label: Tensor::scalar(1.0),
            delta: (0.0, 0.0),
            size_log: self.size_log,
            center_cell: self.cell,
        };
        scale_loss(inputs[0], &t).map(Tensor::scalar)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let s = inputs[0].shape();
        let plane = s[1] * s[2];
        let idx = self.cell.1 * s[2] + self.cell.0;
        let mut g = vec![0.0; inputs[0].len()];
        g[idx] = grad_out[0] * l1_sign(inputs[0].data()[idx] - self.size_log.0);
        g[plane + idx] = grad_out[0] * l1_sign(inputs[0].data()[plane + idx] - self.size_log.1);
        vec![Some(g)]
    }
}

struct TotalLossOp {
    weights: LossWeights,
}

impl Op for TotalLossOp {
    fn name(&self) -> &'static str {
        "total_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        for t in inputs {
            if !t.is_scalar() {
                return Err(Error::shape("total_loss", "all loss terms must be scalar"));
            }
        }
        Ok(Tensor::scalar(total_loss(
            inputs[0].data()[0],
            inputs[1].data()[0],
            inputs[2].data()[0],
            &self.weights,
        )))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let g = grad_out[0];
        let off = inputs[1].data()[0];
        let d_off = if off < self.weights.offset_cutoff {
            0.0
        } else {
            self.weights.lambda_off
        };
        vec![
            Some(vec![g]),
            Some(vec![g * d_off]),
            Some(vec![g * self.weights.lambda_scl]),
        ]
    }
}

impl Graph {
    pub fn focal_loss(&mut self, pred: Var, label: &Tensor) -> Result<Var> {
        let n_pos = check_focal_inputs(self.value(pred), label)?;
        self.apply(
            Box::new(FocalLossOp {
                label: label.clone(),
                n_pos,
            }),
            &[pred],
        )
    }

    pub fn offset_loss(&mut self, pred: Var, delta: (f64, f64)) -> Result<Var> {
        self.apply(Box::new(OffsetLossOp { delta }), &[pred])
    }

    pub fn scale_loss(&mut self, pred: Var, size_log: (f64, f64), cell: (usize, usize)) -> Result<Var> {
        self.apply(Box::new(ScaleLossOp { size_log, cell }), &[pred])
    }

    pub fn total_loss(&mut self, cls: Var, off: Var, scl: Var, weights: &LossWeights) -> Result<Var> {
        self.apply(Box::new(TotalLossOp { weights: *weights }), &[cls, off, scl])
    }
}
