//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: every operation appends a node whose inputs are
//! earlier nodes, so node order is a topological order. [`Graph::backward`]
//! walks the tape once in reverse and then releases the saved forward
//! context; a consumed graph refuses further use.

pub mod gradcheck;

use crate::error::{Error, Result};
use crate::loss;
use crate::nn::conv::{self, ConvGeometry, ConvPlan};
use crate::nn::norm::{self, BatchStats, NormMode};
use crate::nn::{pool, resize};
use crate::tensor::Tensor;

pub use gradcheck::{finite_difference_gradient, relative_error};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Log,
    Neg,
}

/// How the right operand of a binary op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    /// Left is `[N, C, ..]`, right is `[C]`.
    RightChannel { channels: usize, inner: usize },
    /// Right is `[N, C, ..]`, left is `[C]`.
    LeftChannel { channels: usize, inner: usize },
}

enum Op {
    Leaf,
    Binary {
        kind: Elementwise,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: Elementwise,
        a: Var,
    },
    Sum(Var),
    Scale(Var, f64),
    Conv3d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        plan: ConvPlan,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mode: NormMode,
    },
    Upsample {
        input: Var,
        planes: usize,
        from: [usize; 3],
        to: [usize; 3],
    },
    Concat {
        a: Var,
        b: Var,
        batch: usize,
        a_item: usize,
        b_item: usize,
    },
    Dice {
        pred: Var,
        target: Tensor,
    },
    Bce {
        pred: Var,
        target: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn channel_layout(full: &[usize], vec: &[usize]) -> Option<(usize, usize)> {
    match (full, vec) {
        ([_, c, rest @ ..], [vc]) if c == vc => Some((*c, rest.iter().product())),
        _ => None,
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is reported by [`backward`](Self::backward).
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::Graph(
                "graph already consumed by backward(); build a new one".into(),
            ))
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Dispatches one of the elementwise kinds; `b` is required for binary
    /// kinds and must be absent for unary ones.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        use Elementwise::*;
        match (kind, b) {
            (Add | Sub | Mul, Some(b)) => self.binary(kind, a, b),
            (Relu | Sigmoid | Log | Neg, None) => self.unary(kind, a),
            _ => Err(Error::Graph(format!(
                "{kind:?} called with the wrong number of operands"
            ))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Sigmoid, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Neg, a)
    }

    fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bcast = if av.shape() == bv.shape() {
            Broadcast::None
        } else if let Some((channels, inner)) = channel_layout(av.shape(), bv.shape()) {
            Broadcast::RightChannel { channels, inner }
        } else if let Some((channels, inner)) = channel_layout(bv.shape(), av.shape()) {
            Broadcast::LeftChannel { channels, inner }
        } else {
            return Err(Error::ShapeMismatch {
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
                context: "elementwise operands (only per-channel broadcast is supported)",
            });
        };
        let f = |x: f64, y: f64| match kind {
            Elementwise::Add => x + y,
            Elementwise::Sub => x - y,
            _ => x * y,
        };
        let value = match bcast {
            Broadcast::None => Tensor::from_parts(
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::RightChannel { channels, inner } => Tensor::from_parts(
                av.shape().to_vec(),
                av.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bv.data()[(i / inner) % channels]))
                    .collect(),
            ),
            Broadcast::LeftChannel { channels, inner } => Tensor::from_parts(
                bv.shape().to_vec(),
                bv.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| f(av.data()[(i / inner) % channels], y))
                    .collect(),
            ),
        };
        self.push(value, Op::Binary { kind, a, b, bcast }, &[a, b], "elementwise op")
    }

    fn unary(&mut self, kind: Elementwise, a: Var) -> Result<Var> {
        self.check_live()?;
        let av = &self.nodes[a.0].value;
        let value = match kind {
            Elementwise::Relu => av.map(|x| x.max(0.0)),
            Elementwise::Sigmoid => av.map(sigmoid),
            Elementwise::Neg => av.map(|x| -x),
            Elementwise::Log => {
                if let Some(bad) = av.data().iter().find(|&&x| x <= 0.0) {
                    return Err(Error::InvalidValue(format!(
                        "log of non-positive value {bad}; clamp before taking logs"
                    )));
                }
                av.map(f64::ln)
            }
            _ => unreachable!("binary kinds are routed to binary()"),
        };
        self.push(value, Op::Unary { kind, a }, &[a], "elementwise op")
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_live()?;
        let value = Tensor::scalar(self.nodes[a.0].value.sum());
        self.push(value, Op::Sum(a), &[a], "sum")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check_live()?;
        let value = self.nodes[a.0].value.map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a], "scale")
    }

    /// Dilated 3D convolution of `[N, C, D, H, W]` by `[O, C, kd, kh, kw]`,
    /// plus an optional `[O]` bias.
    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
    ) -> Result<Var> {
        self.check_live()?;
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let plan = ConvPlan::new(x.shape(), w.shape(), geometry)?;
        let b = match bias {
            Some(b) => {
                let bv = &self.nodes[b.0].value;
                if bv.shape() != [plan.cout] {
                    return Err(Error::ShapeMismatch {
                        lhs: bv.shape().to_vec(),
                        rhs: vec![plan.cout],
                        context: "conv3d bias vs out_channels",
                    });
                }
                Some(bv.data())
            }
            None => None,
        };
        let out = conv::forward(&plan, x.data(), w.data(), b);
        let value = Tensor::from_parts(plan.output_shape(), out);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            value,
            Op::Conv3d {
                input,
                weight,
                bias,
                plan,
            },
            &inputs,
            "conv3d",
        )
    }

    /// 2x2x2 max pooling with stride 2; spatial extents must be even.
    pub fn max_pool3d(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let x = &self.nodes[input.0].value;
        let pooled = pool::forward(x.data(), x.shape())?;
        let value = Tensor::from_parts(pooled.shape, pooled.output);
        self.push(
            value,
            Op::MaxPool {
                input,
                argmax: pooled.argmax,
            },
            &[input],
            "maxpool3d",
        )
    }

    /// Batch normalization. In train mode the batch statistics are returned
    /// so the caller can update its running estimates.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm3d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        epsilon: f64,
        mode: NormMode,
    ) -> Result<(Var, Option<BatchStats>)> {
        self.check_live()?;
        let x = &self.nodes[input.0].value;
        let normed = norm::forward(
            x.data(),
            x.shape(),
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
            running_mean,
            running_var,
            epsilon,
            mode,
        )?;
        let value = Tensor::from_parts(x.shape().to_vec(), normed.output);
        let var = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: normed.xhat,
                inv_std: normed.inv_std,
                mode,
            },
            &[input, gamma, beta],
            "batchnorm3d",
        )?;
        Ok((var, normed.stats))
    }

    /// Trilinear upsampling by an integer factor per spatial axis.
    pub fn upsample_trilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        self.check_live()?;
        if factor == 0 {
            return Err(Error::Config("upsample factor must be >= 1".into()));
        }
        let x = &self.nodes[input.0].value;
        let [n, c, d, h, w] = x.dims5()?;
        let from = [d, h, w];
        let to = [d * factor, h * factor, w * factor];
        let out = resize::resize_trilinear(x.data(), n * c, from, to);
        let value = Tensor::from_parts(vec![n, c, to[0], to[1], to[2]], out);
        self.push(
            value,
            Op::Upsample {
                input,
                planes: n * c,
                from,
                to,
            },
            &[input],
            "upsample_trilinear",
        )
    }

    /// Channel concatenation: `a`'s channels first, then `b`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::ShapeMismatch {
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
                context: "concat_channels (all non-channel dims must match)",
            });
        }
        let batch = sa[0];
        let a_item = av.len() / batch.max(1);
        let b_item = bv.len() / batch.max(1);
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for n in 0..batch {
            data.extend_from_slice(&av.data()[n * a_item..(n + 1) * a_item]);
            data.extend_from_slice(&bv.data()[n * b_item..(n + 1) * b_item]);
        }
        let mut shape = sa.to_vec();
        shape[1] += sb[1];
        let value = Tensor::from_parts(shape, data);
        self.push(
            value,
            Op::Concat {
                a,
                b,
                batch,
                a_item,
                b_item,
            },
            &[a, b],
            "concat_channels",
        )
    }

    /// Two-class Dice loss of predictions `pred` against a fixed mask.
    pub fn dice_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.check_live()?;
        let value = loss::dice_loss(target, &self.nodes[pred.0].value)?;
        self.push(
            Tensor::scalar(value),
            Op::Dice {
                pred,
                target: target.clone(),
            },
            &[pred],
            "dice_loss",
        )
    }

    /// Mean binary cross-entropy of predictions `pred` against a fixed mask.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.check_live()?;
        let value = loss::bce_loss(target, &self.nodes[pred.0].value)?;
        self.push(
            Tensor::scalar(value),
            Op::Bce {
                pred,
                target: target.clone(),
            },
            &[pred],
            "bce_loss",
        )
    }

    /// Reverse pass from a one-element `loss`. Consumes the graph's saved
    /// context; calling it twice is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check_live()?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            // intermediate gradients are dropped once propagated; only leaves keep theirs
            let Some(g) = grads[id].take() else {
                continue;
            };
            for (input, contribution) in self.node_backward(id, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        self.consumed = true;
        let mut out = Vec::with_capacity(grads.len());
        for (id, g) in grads.into_iter().enumerate() {
            out.push(g.map(|g| Tensor::from_parts(self.nodes[id].value.shape().to_vec(), g)));
        }
        for node in &mut self.nodes {
            node.op = Op::Leaf;
        }
        Ok(Gradients { grads: out })
    }

    /// Contributions of node `id`'s output gradient `g` to its inputs.
    fn node_backward(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary { kind, a, b, bcast } => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let (ga, gb) = match bcast {
                    Broadcast::None => {
                        let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                            Elementwise::Add => (g.to_vec(), g.to_vec()),
                            Elementwise::Sub => (g.to_vec(), g.iter().map(|x| -x).collect()),
                            _ => (
                                g.iter().zip(bv).map(|(g, b)| g * b).collect(),
                                g.iter().zip(av).map(|(g, a)| g * a).collect(),
                            ),
                        };
                        (ga, gb)
                    }
                    Broadcast::RightChannel { channels, inner } => {
                        let mut ga = vec![0.0; g.len()];
                        let mut gb = vec![0.0; *channels];
                        for (i, &gi) in g.iter().enumerate() {
                            let ch = (i / inner) % channels;
                            let (da, db) = binary_partials(*kind, av[i], bv[ch]);
                            ga[i] = gi * da;
                            gb[ch] += gi * db;
                        }
                        (ga, gb)
                    }
                    Broadcast::LeftChannel { channels, inner } => {
                        let mut ga = vec![0.0; *channels];
                        let mut gb = vec![0.0; g.len()];
                        for (i, &gi) in g.iter().enumerate() {
                            let ch = (i / inner) % channels;
                            let (da, db) = binary_partials(*kind, av[ch], bv[i]);
                            ga[ch] += gi * da;
                            gb[i] = gi * db;
                        }
                        (ga, gb)
                    }
                };
                vec![(*a, ga), (*b, gb)]
            }
            Op::Unary { kind, a } => {
                let x = self.nodes[a.0].value.data();
                let y = node.value.data();
                let ga = match kind {
                    Elementwise::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Elementwise::Sigmoid => {
                        g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect()
                    }
                    Elementwise::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                    Elementwise::Neg => g.iter().map(|g| -g).collect(),
                    _ => unreachable!(),
                };
                vec![(*a, ga)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.nodes[a.0].value.len()])],
            Op::Scale(a, f) => vec![(*a, g.iter().map(|g| g * f).collect())],
            Op::Conv3d {
                input,
                weight,
                bias,
                plan,
            } => {
                let grads = conv::backward(
                    plan,
                    self.nodes[input.0].value.data(),
                    self.nodes[weight.0].value.data(),
                    g,
                    (
                        needs(*input),
                        needs(*weight),
                        bias.is_some_and(needs),
                    ),
                );
                let mut out = Vec::with_capacity(3);
                if let Some(dx) = grads.input {
                    out.push((*input, dx));
                }
                if let Some(dw) = grads.weight {
                    out.push((*weight, dw));
                }
                if let (Some(b), Some(db)) = (bias, grads.bias) {
                    out.push((*b, db));
                }
                out
            }
            Op::MaxPool { input, argmax } => {
                let n = self.nodes[input.0].value.len();
                vec![(*input, pool::backward(argmax, g, n))]
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let grads = norm::backward(
                    g,
                    node.value.shape(),
                    xhat,
                    inv_std,
                    self.nodes[gamma.0].value.data(),
                    *mode,
                );
                vec![
                    (*input, grads.input),
                    (*gamma, grads.gamma),
                    (*beta, grads.beta),
                ]
            }
            Op::Upsample {
                input,
                planes,
                from,
                to,
            } => vec![(
                *input,
                resize::resize_trilinear_adjoint(g, *planes, *from, *to),
            )],
            Op::Concat {
                a,
                b,
                batch,
                a_item,
                b_item,
            } => {
                let mut ga = Vec::with_capacity(batch * a_item);
                let mut gb = Vec::with_capacity(batch * b_item);
                for n in 0..*batch {
                    let base = n * (a_item + b_item);
                    ga.extend_from_slice(&g[base..base + a_item]);
                    gb.extend_from_slice(&g[base + a_item..base + a_item + b_item]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Dice { pred, target } => {
                let (_, grad) = loss::dice_loss_with_grad(target.data(), self.nodes[pred.0].value.data());
                vec![(*pred, grad.into_iter().map(|d| d * g[0]).collect())]
            }
            Op::Bce { pred, target } => {
                let (_, grad) = loss::bce_loss_with_grad(target.data(), self.nodes[pred.0].value.data());
                vec![(*pred, grad.into_iter().map(|d| d * g[0]).collect())]
            }
        }
    }
}

fn binary_partials(kind: Elementwise, a: f64, b: f64) -> (f64, f64) {
    match kind {
        Elementwise::Add => (1.0, 1.0),
        Elementwise::Sub => (1.0, -1.0),
        _ => (b, a),
    }
}
