//! Reverse-mode differentiation over a tape of operation records.
//!
//! Nodes are appended in evaluation order, so the tape index order is a
//! topological order and the backward pass is a single reverse sweep.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// One differentiable operation: eager forward plus a rule mapping the
/// output gradient to per-input gradient contributions.
pub trait Op {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Returns one contribution per input slot; `None` where `needs[i]` is
    /// false. Contributions are accumulated by the graph, so an input used
    /// in several slots receives the sum.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    op: Option<Box<dyn Op>>,
    inputs: Vec<usize>,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient (images, labels).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Node {
            op: None,
            inputs: Vec::new(),
            value,
            needs_grad: false,
        })
    }

    /// Leaf parameter; [`Graph::backward`] populates its gradient.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.push(Node {
            op: None,
            inputs: Vec::new(),
            value: value.clone(),
            needs_grad: true,
        })
    }

    /// Appends an operation node, evaluating it eagerly.
    pub fn apply(&mut self, op: Box<dyn Op>, inputs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = op.forward(&refs)?;
        debug_assert!(value.all_finite(), "{} produced non-finite values", op.name());
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(Node {
            op: Some(op),
            inputs: inputs.iter().map(|v| v.0).collect(),
            value,
            needs_grad,
        }))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward target with respect to `v`, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("same shape")
        })
    }

    /// Reverse sweep from a scalar loss. Rejected if called twice or if the
    /// loss is not scalar; a loss with no parameter ancestors is a no-op.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::invalid(
                "backward target",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        if self.backward_done {
            return Err(Error::invalid(
                "backward call",
                "backward already ran on this graph",
            ));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            let op = match &node.op {
                Some(op) => op,
                None => continue,
            };
            let grad_out = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let refs: Vec<&Tensor> = node.inputs.iter().map(|&i| &nodes[i].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].needs_grad).collect();
            let contribs = op.backward(&refs, &node.value, &grad_out, &needs);
            debug_assert_eq!(contribs.len(), node.inputs.len());
            for (&input, contrib) in node.inputs.iter().zip(contribs) {
                if let Some(c) = contrib {
                    debug_assert!(c.iter().all(|v| v.is_finite()));
                    match &mut grads[input] {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&c) {
                                *a += b;
                            }
                        }
                        None => grads[input] = Some(c),
                    }
                }
            }
            grads[idx] = Some(grad_out);
        }
        Ok(())
    }
}

struct Conv2dOp {
    stride: usize,
    groups: usize,
}

impl Op for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        kernels::conv2d(inputs[0], inputs[1], inputs[2], self.stride, self.groups)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let g = kernels::conv2d_backward(
            inputs[0],
            inputs[1],
            grad_out,
            self.stride,
            self.groups,
            needs[0],
        );
        vec![
            g.input,
            needs[1].then_some(g.weights),
            needs[2].then_some(g.bias),
        ]
    }
}

struct XcorrOp;

impl Op for XcorrOp {
    fn name(&self) -> &'static str {
        "xcorr_depthwise"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        kernels::xcorr_depthwise(inputs[0], inputs[1])
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let g = kernels::xcorr_backward(inputs[0], inputs[1], grad_out);
        vec![needs[0].then_some(g.instance), needs[1].then_some(g.exemplar)]
    }
}

struct ReluOp;

impl Op for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(kernels::relu(inputs[0]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(kernels::relu_backward(inputs[0], grad_out))]
    }
}

struct SigmoidOp;

impl Op for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(kernels::sigmoid(inputs[0]))
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(kernels::sigmoid_backward(output, grad_out))]
    }
}

struct MaxPoolOp {
    kernel: usize,
    stride: usize,
}

impl Op for MaxPoolOp {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        kernels::maxpool2d(inputs[0], self.kernel, self.stride)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(kernels::maxpool2d_backward(
            inputs[0],
            self.kernel,
            self.stride,
            grad_out,
        ))]
    }
}

struct RmsNormOp;

impl Op for RmsNormOp {
    fn name(&self) -> &'static str {
        "rms_norm"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(kernels::rms_normalize(inputs[0]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(kernels::rms_normalize_backward(inputs[0], grad_out))]
    }
}

struct CenterChannelsOp;

impl Op for CenterChannelsOp {
    fn name(&self) -> &'static str {
        "center_channels"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs[0].shape().len() != 3 {
            return Err(Error::shape(
                "center_channels",
                format!("expected [C,H,W], got {:?}", inputs[0].shape()),
            ));
        }
        Ok(kernels::center_channels(inputs[0]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(kernels::center_channels_backward(
            inputs[0].shape(),
            grad_out,
        ))]
    }
}

struct SumOp;

impl Op for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(inputs[0].data().iter().sum()))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![grad_out[0]; inputs[0].len()])]
    }
}

struct AddOp;

impl Op for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs[0].shape() != inputs[1].shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", inputs[0].shape(), inputs[1].shape()),
            ));
        }
        let data = inputs[0]
            .data()
            .iter()
            .zip(inputs[1].data())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new(inputs[0].shape().to_vec(), data)
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![
            needs[0].then(|| grad_out.to_vec()),
            needs[1].then(|| grad_out.to_vec()),
        ]
    }
}

struct MulOp;

impl Op for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs[0].shape() != inputs[1].shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", inputs[0].shape(), inputs[1].shape()),
            ));
        }
        let data = inputs[0]
            .data()
            .iter()
            .zip(inputs[1].data())
            .map(|(a, b)| a * b)
            .collect();
        Tensor::new(inputs[0].shape().to_vec(), data)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let against = |other: &Tensor| {
            grad_out
                .iter()
                .zip(other.data())
                .map(|(g, o)| g * o)
                .collect::<Vec<_>>()
        };
        vec![
            needs[0].then(|| against(inputs[1])),
            needs[1].then(|| against(inputs[0])),
        ]
    }
}

struct ScaleOp(f64);

impl Op for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let data = inputs[0].data().iter().map(|v| v * self.0).collect();
        Tensor::new(inputs[0].shape().to_vec(), data)
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &[f64],
        _needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad_out.iter().map(|g| g * self.0).collect())]
    }
}

impl Graph {
    pub fn conv2d(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        stride: usize,
        groups: usize,
    ) -> Result<Var> {
        self.apply(Box::new(Conv2dOp { stride, groups }), &[input, weights, bias])
    }

    pub fn xcorr_depthwise(&mut self, instance: Var, exemplar: Var) -> Result<Var> {
        self.apply(Box::new(XcorrOp), &[instance, exemplar])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.apply(Box::new(ReluOp), &[x]).expect("relu is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.apply(Box::new(SigmoidOp), &[x]).expect("sigmoid is total")
    }

    pub fn rms_norm(&mut self, x: Var) -> Var {
        self.apply(Box::new(RmsNormOp), &[x]).expect("rms_norm is total")
    }

    pub fn center_channels(&mut self, x: Var) -> Result<Var> {
        self.apply(Box::new(CenterChannelsOp), &[x])
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        self.apply(Box::new(MaxPoolOp { kernel, stride }), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.apply(Box::new(SumOp), &[x]).expect("sum is total")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Box::new(AddOp), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Box::new(MulOp), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.apply(Box::new(ScaleOp(c)), &[x]).expect("scale is total")
    }
}

/// Maximum relative error between analytic gradients and central finite
/// differences of step `eps`, taken over every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("grad_check eps", "must be positive"));
    }
    let eval = |tensors: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.param(t)).collect();
        let out = f(&mut g, &vars)?;
        if !g.value(out).is_scalar() {
            return Err(Error::invalid(
                "grad_check function",
                format!("output must be scalar, got shape {:?}", g.value(out).shape()),
            ));
        }
        Ok((g, vars, out))
    };

    let (mut graph, vars, loss) = eval(inputs)?;
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| graph.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let base = inputs[i].data()[j];
            work[i].data_mut()[j] = base + eps;
            let (g_plus, _, out_plus) = eval(&work)?;
            let f_plus = g_plus.value(out_plus).data()[0];
            work[i].data_mut()[j] = base - eps;
            let (g_minus, _, out_minus) = eval(&work)?;
            let f_minus = g_minus.value(out_minus).data()[0];
            work[i].data_mut()[j] = base;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
