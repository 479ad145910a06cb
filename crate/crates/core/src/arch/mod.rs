//! The two segmentation networks.
//!
//! Both share the U-shaped layout: `levels` encoder blocks with widths
//! `F, 2F, 4F, ..` each followed by 2x max pooling, a bottleneck, and one
//! decoder stage per level (trilinear upsample, concatenation with the
//! pre-pool encoder output, two conv-BN-ReLU units), then a 1x1x1 conv and a
//! sigmoid.
//!
//! * [`Variant::BaselineUnet`]: plain double-conv encoder blocks and a plain
//!   double-conv bottleneck at `2^levels * F` channels.
//! * [`Variant::UnetDr`]: encoder blocks concatenate their input onto their
//!   output, and the bottleneck is a sum of parallel dilated convolutions,
//!   one per rate. The `2^levels * F` bottleneck filters are split evenly
//!   across the branches, so each branch (and the summed output) has
//!   `2^levels * F / rates.len()` channels.

pub mod blocks;
pub mod checkpoint;
pub mod params;
pub mod probe;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{norm, Conv3dSpec, ConvGeometry, NormMode, DEFAULT_MOMENTUM};
use crate::tensor::Tensor;

pub use blocks::{
    build_decoder_stage, build_dilated_bottleneck, build_encoder_block, build_plain_bottleneck,
    Bottleneck, Conv, ConvBnRelu, DecoderStage, EncoderBlock, LayerBuilder, Norm,
};
pub use checkpoint::Checkpoint;
pub use params::{Binding, Forward, NamedTensor, NormUpdate, ParamStore};
pub use probe::{probe_dilated_bottleneck, probe_single_conv, receptive_field_probe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    BaselineUnet,
    UnetDr,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineUnet => "baseline",
            Variant::UnetDr => "unet_dr",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Variant::BaselineUnet => 0,
            Variant::UnetDr => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Variant::BaselineUnet),
            1 => Some(Variant::UnetDr),
            _ => None,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "baseline_unet" | "unet" => Ok(Variant::BaselineUnet),
            "unet_dr" | "dr" | "unet-dr" => Ok(Variant::UnetDr),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected baseline or unet_dr)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub levels: usize,
    pub dilation_rates: Vec<usize>,
    pub variant: Variant,
    pub input_channels: usize,
    pub output_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 24,
            levels: 3,
            dilation_rates: vec![1, 2, 3, 4],
            variant: Variant::UnetDr,
            input_channels: 1,
            output_channels: 1,
        }
    }
}

impl NetworkConfig {
    pub fn new(variant: Variant, base_channels: usize) -> Self {
        NetworkConfig {
            variant,
            base_channels,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::Config(format!(
                "levels must be in 1..=8, got {}",
                self.levels
            )));
        }
        if self.dilation_rates.is_empty() || self.dilation_rates.contains(&0) {
            return Err(Error::Config(format!(
                "dilation_rates must be non-empty with every rate >= 1, got {:?}",
                self.dilation_rates
            )));
        }
        if self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::Config("input/output channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Channels of the plain bottleneck: `2^levels * F`.
    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.levels
    }

    /// Channels of each dilated branch: the bottleneck width split across
    /// the rates (at least one).
    pub fn dilated_branch_channels(&self) -> usize {
        (self.bottleneck_channels() / self.dilation_rates.len()).max(1)
    }

    /// Spatial extents must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: NetworkConfig,
    store: ParamStore,
    encoder: Vec<EncoderBlock>,
    bottleneck: Bottleneck,
    decoder: Vec<DecoderStage>,
    head: Conv,
}

/// Builds either network with seeded initialization.
pub fn build_model(config: NetworkConfig, seed: u64) -> Result<Model> {
    Model::new(config, seed)
}

/// Exact number of trainable scalars (conv weights and biases, batch-norm
/// gamma and beta).
pub fn count_parameters(model: &Model) -> usize {
    model.parameter_count()
}

impl Model {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let mut b = LayerBuilder::new(&mut store, &mut rng);
        let f = config.base_channels;

        let mut encoder = Vec::with_capacity(config.levels);
        let mut ch = config.input_channels;
        for level in 0..config.levels {
            let block =
                build_encoder_block(&mut b, &format!("enc{}", level + 1), ch, f << level, config.variant)?;
            ch = block.out_channels();
            encoder.push(block);
        }
        let skip_channels: Vec<usize> = encoder.iter().map(EncoderBlock::out_channels).collect();

        let bottleneck = match config.variant {
            Variant::BaselineUnet => {
                build_plain_bottleneck(&mut b, "bottleneck", ch, config.bottleneck_channels())
            }
            Variant::UnetDr => build_dilated_bottleneck(
                &mut b,
                "bottleneck",
                ch,
                config.dilated_branch_channels(),
                &config.dilation_rates,
            )?,
        };
        ch = bottleneck.out_channels();

        let mut decoder = Vec::with_capacity(config.levels);
        for level in (0..config.levels).rev() {
            let out = f << level;
            decoder.push(build_decoder_stage(
                &mut b,
                &format!("dec{}", level + 1),
                ch + skip_channels[level],
                out,
            ));
            ch = out;
        }

        let head = b.conv(
            "head",
            Conv3dSpec {
                in_channels: ch,
                out_channels: config.output_channels,
                geometry: ConvGeometry::same(1, 1),
            },
        );

        Ok(Model {
            config,
            store,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &[EncoderBlock] {
        &self.encoder
    }

    pub fn bottleneck(&self) -> &Bottleneck {
        &self.bottleneck
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Trainable scalars per conv and batch-norm layer, in forward order.
    pub fn layer_parameter_counts(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for block in &self.encoder {
            block.layer_counts(&mut out);
        }
        self.bottleneck.layer_counts(&mut out);
        for stage in &self.decoder {
            stage.layer_counts(&mut out);
        }
        out.push((self.head.name.clone(), self.head.parameter_count()));
        out
    }

    /// Rejects inputs whose channel count or spatial extents the network
    /// cannot process, before anything is allocated.
    pub fn check_input_shape(&self, shape: &[usize]) -> Result<()> {
        let [_, c, d, h, w]: [usize; 5] = shape.try_into().map_err(|_| {
            Error::InvalidShape(format!("model input must be [N, C, D, H, W], got {shape:?}"))
        })?;
        if c != self.config.input_channels {
            return Err(Error::InvalidShape(format!(
                "model expects {} input channel(s), got {c}",
                self.config.input_channels
            )));
        }
        let div = self.config.spatial_divisor();
        for (axis, e) in ["depth", "height", "width"].iter().zip([d, h, w]) {
            if e == 0 || e % div != 0 {
                return Err(Error::InvalidShape(format!(
                    "{axis} extent {e} is not a positive multiple of {div} (2^levels)"
                )));
            }
        }
        Ok(())
    }

    /// Full network on graph input `x`; returns the sigmoid output node.
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        self.check_input_shape(f.graph.value(x).shape())?;
        let mut skips = Vec::with_capacity(self.config.levels);
        let mut h = x;
        for block in &self.encoder {
            let out = block.forward(f, h)?;
            skips.push(out);
            h = f.graph.max_pool3d(out)?;
        }
        h = self.bottleneck.forward(f, h)?;
        for (stage, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            h = stage.forward(f, h, *skip)?;
        }
        let logits = self.head.forward(f, h)?;
        f.graph.sigmoid(logits)
    }

    /// Inference-mode forward on a plain tensor.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input_shape(input.shape())?;
        let mut graph = Graph::new();
        let x = graph.constant(input.clone());
        let mut f = Forward::new(&mut graph, &self.store, NormMode::Inference, false);
        let y = self.forward(&mut f, x)?;
        Ok(graph.value(y).clone())
    }

    /// Folds recorded batch statistics into the running estimates.
    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate]) {
        for u in updates {
            norm::update_running(
                self.store.buffers[u.mean_buffer].value.data_mut(),
                &u.stats.mean,
                DEFAULT_MOMENTUM,
            );
            norm::update_running(
                self.store.buffers[u.var_buffer].value.data_mut(),
                &u.stats.var,
                DEFAULT_MOMENTUM,
            );
        }
    }
}
