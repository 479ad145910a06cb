//! Building blocks: conv-BN-ReLU units, encoder blocks (plain or with the
//! input concatenated onto the output), bottlenecks and decoder stages.

use rand::Rng;

use super::params::{Forward, NormUpdate, ParamStore};
use super::Variant;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv3dSpec, ConvGeometry, NormMode, DEFAULT_EPSILON};
use crate::tensor::Tensor;

/// Creates parameters in a [`ParamStore`] with seeded initialization.
pub struct LayerBuilder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<'a, R: Rng> LayerBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        LayerBuilder { store, rng }
    }

    pub fn conv(&mut self, name: &str, spec: Conv3dSpec) -> Conv {
        let weight = self.store.add_param(
            format!("{name}.weight"),
            ParamStore::kaiming(spec.weight_shape(), self.rng),
        );
        let bias = self
            .store
            .add_param(format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels]));
        Conv {
            name: name.to_string(),
            spec,
            weight,
            bias,
        }
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> Norm {
        let gamma = self
            .store
            .add_param(format!("{name}.gamma"), Tensor::ones(vec![channels]));
        let beta = self
            .store
            .add_param(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        let running_mean = self
            .store
            .add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels]));
        let running_var = self
            .store
            .add_buffer(format!("{name}.running_var"), Tensor::ones(vec![channels]));
        Norm {
            name: name.to_string(),
            channels,
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    /// 3x3x3 shape-preserving conv (padding `d`), batch norm, ReLU.
    pub fn conv_bn_relu(&mut self, name: &str, cin: usize, cout: usize, dilation: usize) -> ConvBnRelu {
        let conv = self.conv(
            &format!("{name}.conv"),
            Conv3dSpec {
                in_channels: cin,
                out_channels: cout,
                geometry: ConvGeometry::same(3, dilation),
            },
        );
        let norm = self.norm(&format!("{name}.bn"), cout);
        ConvBnRelu { conv, norm }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub spec: Conv3dSpec,
    weight: usize,
    bias: usize,
}

impl Conv {
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = f.param(self.bias);
        f.graph.conv3d(x, w, Some(b), self.spec.geometry)
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub name: String,
    pub channels: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

impl Norm {
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        let mode = f.mode();
        let store = f.store();
        let mean = store.buffers[self.running_mean].value.data().to_vec();
        let var = store.buffers[self.running_var].value.data().to_vec();
        let (y, stats) = f
            .graph
            .batch_norm3d(x, gamma, beta, &mean, &var, DEFAULT_EPSILON, mode)?;
        if let Some(stats) = stats {
            f.record(NormUpdate {
                mean_buffer: self.running_mean,
                var_buffer: self.running_var,
                stats,
            });
        }
        Ok(y)
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.channels
    }
}

#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvBnRelu {
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let c = self.conv.forward(f, x)?;
        let n = self.norm.forward(f, c)?;
        f.graph.relu(n)
    }

    pub fn out_channels(&self) -> usize {
        self.conv.spec.out_channels
    }

    fn layer_counts(&self, out: &mut Vec<(String, usize)>) {
        out.push((self.conv.name.clone(), self.conv.parameter_count()));
        out.push((self.norm.name.clone(), self.norm.parameter_count()));
    }
}

/// Two conv-BN-ReLU units. With `residual_concat` the block input is
/// concatenated (channels first) onto the second unit's output.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
    pub residual_concat: bool,
    pub in_channels: usize,
}

impl EncoderBlock {
    pub fn out_channels(&self) -> usize {
        let conv_out = self.second.out_channels();
        if self.residual_concat {
            self.in_channels + conv_out
        } else {
            conv_out
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let a = self.first.forward(f, x)?;
        let b = self.second.forward(f, a)?;
        if self.residual_concat {
            f.graph.concat_channels(x, b)
        } else {
            Ok(b)
        }
    }

    pub fn layer_counts(&self, out: &mut Vec<(String, usize)>) {
        self.first.layer_counts(out);
        self.second.layer_counts(out);
    }
}

pub fn build_encoder_block<R: Rng>(
    builder: &mut LayerBuilder<'_, R>,
    name: &str,
    in_channels: usize,
    out_channels: usize,
    variant: Variant,
) -> Result<EncoderBlock> {
    if in_channels == 0 || out_channels == 0 {
        return Err(Error::Config(format!(
            "{name}: channel counts must be >= 1 (in {in_channels}, out {out_channels})"
        )));
    }
    Ok(EncoderBlock {
        first: builder.conv_bn_relu(&format!("{name}.unit1"), in_channels, out_channels, 1),
        second: builder.conv_bn_relu(&format!("{name}.unit2"), out_channels, out_channels, 1),
        residual_concat: variant == Variant::UnetDr,
        in_channels,
    })
}

/// Lowest level of the network.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum Bottleneck {
    /// Two stacked conv-BN-ReLU units.
    Plain {
        first: ConvBnRelu,
        second: ConvBnRelu,
    },
    /// Parallel single conv-BN-ReLU branches, one per dilation rate, applied
    /// to the same input and summed.
    Dilated { branches: Vec<ConvBnRelu> },
}

impl Bottleneck {
    pub fn out_channels(&self) -> usize {
        match self {
            Bottleneck::Plain { second, .. } => second.out_channels(),
            Bottleneck::Dilated { branches } => branches[0].out_channels(),
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        match self {
            Bottleneck::Plain { first, second } => {
                let a = first.forward(f, x)?;
                second.forward(f, a)
            }
            Bottleneck::Dilated { branches } => {
                let mut acc = branches[0].forward(f, x)?;
                for branch in &branches[1..] {
                    let y = branch.forward(f, x)?;
                    acc = f.graph.add(acc, y)?;
                }
                Ok(acc)
            }
        }
    }

    pub fn layer_counts(&self, out: &mut Vec<(String, usize)>) {
        match self {
            Bottleneck::Plain { first, second } => {
                first.layer_counts(out);
                second.layer_counts(out);
            }
            Bottleneck::Dilated { branches } => branches.iter().for_each(|b| b.layer_counts(out)),
        }
    }
}

pub fn build_plain_bottleneck<R: Rng>(
    builder: &mut LayerBuilder<'_, R>,
    name: &str,
    in_channels: usize,
    out_channels: usize,
) -> Bottleneck {
    Bottleneck::Plain {
        first: builder.conv_bn_relu(&format!("{name}.unit1"), in_channels, out_channels, 1),
        second: builder.conv_bn_relu(&format!("{name}.unit2"), out_channels, out_channels, 1),
    }
}

pub fn build_dilated_bottleneck<R: Rng>(
    builder: &mut LayerBuilder<'_, R>,
    name: &str,
    in_channels: usize,
    out_channels: usize,
    rates: &[usize],
) -> Result<Bottleneck> {
    if rates.is_empty() || rates.contains(&0) {
        return Err(Error::Config(format!(
            "{name}: dilation rates must be a non-empty list of values >= 1, got {rates:?}"
        )));
    }
    let branches = rates
        .iter()
        .map(|&r| builder.conv_bn_relu(&format!("{name}.d{r}"), in_channels, out_channels, r))
        .collect();
    Ok(Bottleneck::Dilated { branches })
}

/// Upsample x2, concatenate the skip tensor, two conv-BN-ReLU units.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
}

impl DecoderStage {
    pub fn forward(&self, f: &mut Forward<'_>, x: Var, skip: Var) -> Result<Var> {
        let up = f.graph.upsample_trilinear(x, 2)?;
        let cat = f.graph.concat_channels(up, skip)?;
        let a = self.first.forward(f, cat)?;
        self.second.forward(f, a)
    }

    pub fn layer_counts(&self, out: &mut Vec<(String, usize)>) {
        self.first.layer_counts(out);
        self.second.layer_counts(out);
    }
}

pub fn build_decoder_stage<R: Rng>(
    builder: &mut LayerBuilder<'_, R>,
    name: &str,
    in_channels: usize,
    out_channels: usize,
) -> DecoderStage {
    DecoderStage {
        first: builder.conv_bn_relu(&format!("{name}.unit1"), in_channels, out_channels, 1),
        second: builder.conv_bn_relu(&format!("{name}.unit2"), out_channels, out_channels, 1),
    }
}

/// Inference helper for testing blocks in isolation.
pub fn run_block(
    store: &ParamStore,
    input: &Tensor,
    mode: NormMode,
    block: impl FnOnce(&mut Forward<'_>, Var) -> Result<Var>,
) -> Result<Tensor> {
    let mut graph = crate::autodiff::Graph::new();
    let x = graph.constant(input.clone());
    let mut f = Forward::new(&mut graph, store, mode, false);
    let y = block(&mut f, x)?;
    Ok(graph.value(y).clone())
}
