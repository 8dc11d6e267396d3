//! Composite blocks and model assembly: Shared Channel Residual stages, Atrous
//! Spatial Pyramid Pooling, and the configurable classification network built
//! from them (stem → SCR stages → ASPP → global pool → dense head).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{ConvSpec, Padding};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Element, Tensor};

/// The challenge label schema has exactly ten classes.
pub const NUM_CLASSES: usize = 10;

/// LeakyReLU slope used everywhere in the network.
pub const LEAKY_ALPHA: f64 = 0.01;

/// Shared Channel Residual stage: concatenate the stage input with a shared
/// feature map, max-pool 2×2, then a dilated 3×3 same-padding convolution.
/// Output spatial extent is exactly half the (even) input extent.
#[derive(Clone, Copy, Debug)]
pub struct ScrConfig {
    pub out_channels: usize,
    /// Dilation of the 3×3 convolution (default 2).
    pub dilation: usize,
}

impl ScrConfig {
    pub fn new(out_channels: usize) -> Self {
        ScrConfig {
            out_channels,
            dilation: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 {
            return Err(Error::invalid_spec("SCR out_channels must be positive".to_string()));
        }
        if self.dilation == 0 {
            return Err(Error::invalid_spec("SCR dilation must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Atrous Spatial Pyramid Pooling: a 1×1 branch, one dilated 3×3 branch per
/// rate, an optional image-level pooling branch, all concatenated and
/// projected back down by a 1×1 convolution. Preserves spatial extent.
#[derive(Clone, Debug, PartialEq)]
pub struct AsppConfig {
    pub branch_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub include_image_pool: bool,
    pub project_channels: usize,
}

impl Default for AsppConfig {
    fn default() -> Self {
        AsppConfig {
            branch_channels: 16,
            dilation_rates: vec![2, 4, 8],
            include_image_pool: true,
            project_channels: 32,
        }
    }
}

impl AsppConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branch_channels == 0 || self.project_channels == 0 {
            return Err(Error::invalid_spec("ASPP channel counts must be positive".to_string()));
        }
        if self.dilation_rates.is_empty() {
            return Err(Error::invalid_spec("ASPP dilation rate list must not be empty".to_string()));
        }
        if self.dilation_rates.iter().any(|&r| r == 0) {
            return Err(Error::invalid_spec("ASPP dilation rates must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Parallel branches: one per rate, plus the 1×1 branch, plus image pooling.
    pub fn branch_count(&self) -> usize {
        self.dilation_rates.len() + 1 + usize::from(self.include_image_pool)
    }

    /// A rate is usable on an H×W input only while it stays within the sanity
    /// bound `rate <= 2·min(H,W)`; beyond that the dilated taps cannot reach
    /// any real pixel pair.
    pub fn validate_for_extent(&self, h: usize, w: usize) -> Result<()> {
        let limit = 2 * h.min(w);
        for &r in &self.dilation_rates {
            if r > limit {
                return Err(Error::invalid_spec(format!(
                    "ASPP dilation rate {r} too large for input extent {h}x{w}"
                )));
            }
        }
        Ok(())
    }
}

/// Full network configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Square input extent; one of 32, 64, 224 (3 input channels).
    pub input_hw: usize,
    pub stem_channels: usize,
    /// Output channels of each SCR stage; each stage halves the extent.
    pub stage_channels: Vec<usize>,
    /// Dilation inside the SCR stages (default 2).
    pub scr_dilation: usize,
    pub aspp: AsppConfig,
    pub seed: u64,
}

impl ModelConfig {
    /// Small 32×32 configuration that trains in seconds on a CPU.
    pub fn small() -> Self {
        ModelConfig {
            input_hw: 32,
            stem_channels: 8,
            stage_channels: vec![16, 32],
            scr_dilation: 2,
            aspp: AsppConfig::default(),
            seed: 42,
        }
    }

    /// Full-size 224×224 configuration. Widths and rates are a reasonable
    /// default for this architecture family, not a tuned setting.
    pub fn large() -> Self {
        ModelConfig {
            input_hw: 224,
            stem_channels: 16,
            stage_channels: vec![32, 64, 128, 256],
            scr_dilation: 2,
            aspp: AsppConfig {
                branch_channels: 64,
                dilation_rates: vec![6, 12, 18],
                include_image_pool: true,
                project_channels: 128,
            },
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![32, 64, 224].contains(&self.input_hw) {
            return Err(Error::invalid_spec(format!(
                "input extent must be one of 32, 64, 224; got {}",
                self.input_hw
            )));
        }
        if self.stem_channels == 0 {
            return Err(Error::invalid_spec("stem_channels must be positive".to_string()));
        }
        if self.stage_channels.is_empty() {
            return Err(Error::invalid_spec("at least one SCR stage is required".to_string()));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::invalid_spec("stage channel counts must be positive".to_string()));
        }
        if self.scr_dilation == 0 {
            return Err(Error::invalid_spec("scr_dilation must be >= 1".to_string()));
        }
        let stages = self.stage_channels.len() as u32;
        if self.input_hw % (1usize << stages) != 0 {
            return Err(Error::invalid_spec(format!(
                "input extent {} is not divisible by 2^{} (one halving per stage)",
                self.input_hw, stages
            )));
        }
        self.aspp.validate()?;
        Ok(())
    }

    /// Spatial extent of the feature map entering the ASPP block.
    pub fn aspp_extent(&self) -> usize {
        self.input_hw >> self.stage_channels.len()
    }
}

/// One convolution with learnable weight and bias.
#[derive(Clone, Debug)]
pub struct ConvLayer<T: Element> {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> ConvLayer<T> {
    fn init(name: &str, spec: ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        let shape = [
            spec.out_channels,
            spec.in_channels,
            spec.kernel.0,
            spec.kernel.1,
        ];
        ConvLayer {
            name: name.to_string(),
            spec,
            weight: init_uniform(&shape, fan_in, rng),
            bias: Tensor::zeros(&[spec.out_channels]),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, input: NodeId) -> Result<NodeId> {
        let w = tape.param(format!("{}.weight", self.name), self.weight.clone());
        let b = tape.param(format!("{}.bias", self.name), self.bias.clone());
        tape.conv2d(input, w, b, &self.spec)
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.weight", self.name), &self.weight),
            (format!("{}.bias", self.name), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            (format!("{}.weight", self.name), &mut self.weight),
            (format!("{}.bias", self.name), &mut self.bias),
        ]
    }
}

/// Fully connected classifier head.
#[derive(Clone, Debug)]
pub struct DenseLayer<T: Element> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> DenseLayer<T> {
    fn init(name: &str, in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        DenseLayer {
            name: name.to_string(),
            weight: init_uniform(&[in_features, out_features], in_features, rng),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, input: NodeId) -> Result<NodeId> {
        let w = tape.param(format!("{}.weight", self.name), self.weight.clone());
        let b = tape.param(format!("{}.bias", self.name), self.bias.clone());
        tape.dense(input, w, b)
    }
}

/// Fan-in-scaled uniform init: bound = sqrt(2/(1+α²)) · sqrt(6/fan_in),
/// drawn in f64 so the same seed yields the same weights at every precision.
fn init_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let gain = (2.0 / (1.0 + LEAKY_ALPHA * LEAKY_ALPHA)).sqrt();
    let bound = gain * (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
}

/// Shared Channel Residual block.
#[derive(Clone, Debug)]
pub struct ScrBlock<T: Element> {
    pub cfg: ScrConfig,
    pub conv: ConvLayer<T>,
}

impl<T: Element> ScrBlock<T> {
    pub fn init(
        name: &str,
        primary_channels: usize,
        shared_channels: usize,
        cfg: ScrConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let spec = ConvSpec::new(primary_channels + shared_channels, cfg.out_channels, 3)
            .with_dilation(cfg.dilation)
            .with_padding(Padding::Same);
        Ok(ScrBlock {
            cfg,
            conv: ConvLayer::init(name, spec, rng),
        })
    }

    /// `leaky_relu(conv(maxpool(concat(primary, shared))))`; halves the extent.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        primary: NodeId,
        shared: NodeId,
    ) -> Result<NodeId> {
        let cat = tape.concat_channels(&[primary, shared])?;
        let pooled = tape.maxpool2d(cat, 2)?;
        let conv = self.conv.forward(tape, pooled)?;
        tape.leaky_relu(conv, T::from_f64(LEAKY_ALPHA))
    }
}

/// Atrous Spatial Pyramid Pooling block.
#[derive(Clone, Debug)]
pub struct AsppBlock<T: Element> {
    pub cfg: AsppConfig,
    pub point: ConvLayer<T>,
    pub rate_convs: Vec<ConvLayer<T>>,
    pub pool_conv: Option<ConvLayer<T>>,
    pub project: ConvLayer<T>,
}

impl<T: Element> AsppBlock<T> {
    pub fn init(
        name: &str,
        in_channels: usize,
        cfg: AsppConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let point = ConvLayer::init(
            &format!("{name}.point"),
            ConvSpec::new(in_channels, cfg.branch_channels, 1).with_padding(Padding::Same),
            rng,
        );
        let rate_convs = cfg
            .dilation_rates
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                ConvLayer::init(
                    &format!("{name}.rate{i}"),
                    ConvSpec::new(in_channels, cfg.branch_channels, 3)
                        .with_dilation(r)
                        .with_padding(Padding::Same),
                    rng,
                )
            })
            .collect();
        let pool_conv = cfg.include_image_pool.then(|| {
            ConvLayer::init(
                &format!("{name}.pool"),
                ConvSpec::new(in_channels, cfg.branch_channels, 1).with_padding(Padding::Same),
                rng,
            )
        });
        let concat_channels = cfg.branch_count() * cfg.branch_channels;
        let project = ConvLayer::init(
            &format!("{name}.project"),
            ConvSpec::new(concat_channels, cfg.project_channels, 1).with_padding(Padding::Same),
            rng,
        );
        Ok(AsppBlock {
            cfg,
            point,
            rate_convs,
            pool_conv,
            project,
        })
    }

    /// All branches activate with LeakyReLU, concatenate in a fixed order
    /// (1×1, rates in config order, image pool), then project.
    pub fn forward(&self, tape: &mut Tape<T>, input: NodeId) -> Result<NodeId> {
        let (_, _, h, w) = tape.value(input).dims4()?;
        self.cfg.validate_for_extent(h, w)?;
        let alpha = T::from_f64(LEAKY_ALPHA);

        let mut branches = Vec::with_capacity(self.cfg.branch_count());
        let point = self.point.forward(tape, input)?;
        branches.push(tape.leaky_relu(point, alpha)?);
        for conv in &self.rate_convs {
            let out = conv.forward(tape, input)?;
            branches.push(tape.leaky_relu(out, alpha)?);
        }
        if let Some(pool_conv) = &self.pool_conv {
            let pooled = tape.global_avg_pool(input)?;
            let conv = pool_conv.forward(tape, pooled)?;
            let act = tape.leaky_relu(conv, alpha)?;
            branches.push(tape.broadcast_spatial(act, h, w)?);
        }
        let cat = tape.concat_channels(&branches)?;
        let projected = self.project.forward(tape, cat)?;
        tape.leaky_relu(projected, alpha)
    }
}

/// The assembled network: stem convolution, SCR stages fed by a shared
/// average-pooled stem map, ASPP, global average pooling, dense head.
#[derive(Clone, Debug)]
pub struct Model<T: Element> {
    pub cfg: ModelConfig,
    pub stem: ConvLayer<T>,
    pub stages: Vec<ScrBlock<T>>,
    pub aspp: AsppBlock<T>,
    pub head: DenseLayer<T>,
}

/// Builds the network from a validated config with seeded initialization.
/// Two builds from the same config are bitwise identical.
pub fn build_model<T: Element>(cfg: &ModelConfig) -> Result<Model<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let stem = ConvLayer::init(
        "stem",
        ConvSpec::new(3, cfg.stem_channels, 3).with_padding(Padding::Same),
        &mut rng,
    );

    let mut stages = Vec::with_capacity(cfg.stage_channels.len());
    let mut prev_channels = cfg.stem_channels;
    for (k, &out_channels) in cfg.stage_channels.iter().enumerate() {
        let block = ScrBlock::init(
            &format!("stage{k}"),
            prev_channels,
            cfg.stem_channels,
            ScrConfig {
                out_channels,
                dilation: cfg.scr_dilation,
            },
            &mut rng,
        )?;
        stages.push(block);
        prev_channels = out_channels;
    }

    let aspp = AsppBlock::init("aspp", prev_channels, cfg.aspp.clone(), &mut rng)?;
    let head = DenseLayer::init("head", cfg.aspp.project_channels, NUM_CLASSES, &mut rng);

    Ok(Model {
        cfg: cfg.clone(),
        stem,
        stages,
        aspp,
        head,
    })
}

impl<T: Element> Model<T> {
    /// Records a forward pass on a fresh tape; returns the tape and the node
    /// holding the N×10 logits.
    pub fn forward_taped(&self, batch: &Tensor<T>) -> Result<(Tape<T>, NodeId)> {
        let (n, c, h, w) = batch.dims4()?;
        if c != 3 || h != self.cfg.input_hw || w != self.cfg.input_hw {
            return Err(Error::contract(format!(
                "batch shape {:?} does not match model input {}x3x{}x{}",
                batch.shape(),
                n,
                self.cfg.input_hw,
                self.cfg.input_hw
            )));
        }
        let alpha = T::from_f64(LEAKY_ALPHA);
        let mut tape = Tape::new();
        let input = tape.constant(batch.clone());

        let stem_conv = self.stem.forward(&mut tape, input)?;
        let stem_out = tape.leaky_relu(stem_conv, alpha)?;

        let mut current = stem_out;
        for (k, stage) in self.stages.iter().enumerate() {
            // The shared input is the stem map average-pooled down to this
            // stage's input resolution.
            let shared = tape.avgpool2d(stem_out, 1 << k)?;
            current = stage.forward(&mut tape, current, shared)?;
        }

        let aspp_out = self.aspp.forward(&mut tape, current)?;
        let pooled = tape.global_avg_pool(aspp_out)?;
        let flat = tape.reshape(pooled, &[n, self.cfg.aspp.project_channels])?;
        let logits = self.head.forward(&mut tape, flat)?;
        Ok((tape, logits))
    }

    /// Pure inference: N×3×H×W → N×10 logits.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let (tape, logits) = self.forward_taped(batch)?;
        Ok(tape.value(logits).clone())
    }

    /// All learnable tensors with their stable names, in build order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.stem.params();
        for stage in &self.stages {
            out.extend(stage.conv.params());
        }
        out.extend(self.aspp.point.params());
        for conv in &self.aspp.rate_convs {
            out.extend(conv.params());
        }
        if let Some(pool_conv) = &self.aspp.pool_conv {
            out.extend(pool_conv.params());
        }
        out.extend(self.aspp.project.params());
        out.push((format!("{}.weight", self.head.name), &self.head.weight));
        out.push((format!("{}.bias", self.head.name), &self.head.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = self.stem.params_mut();
        for stage in &mut self.stages {
            out.extend(stage.conv.params_mut());
        }
        out.extend(self.aspp.point.params_mut());
        for conv in &mut self.aspp.rate_convs {
            out.extend(conv.params_mut());
        }
        if let Some(pool_conv) = &mut self.aspp.pool_conv {
            out.extend(pool_conv.params_mut());
        }
        out.extend(self.aspp.project.params_mut());
        out.push((format!("{}.weight", self.head.name), &mut self.head.weight));
        out.push((format!("{}.bias", self.head.name), &mut self.head.bias));
        out
    }

    /// Overwrites parameters by name; every name must exist and shapes must match.
    pub fn assign_params(&mut self, values: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, value) in values {
            let mut found = false;
            for (pname, tensor) in self.named_params_mut() {
                if &pname == name {
                    if tensor.shape() != value.shape() {
                        return Err(Error::contract(format!(
                            "parameter '{name}' has shape {:?}, cannot assign {:?}",
                            tensor.shape(),
                            value.shape()
                        )));
                    }
                    *tensor = value.clone();
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(Error::contract(format!("unknown parameter '{name}'")));
            }
        }
        Ok(())
    }

    /// Total learnable element count.
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Per-layer breakdown: (name, shape, count).
    pub fn param_breakdown(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.named_params()
            .into_iter()
            .map(|(name, t)| (name, t.shape().to_vec(), t.numel()))
            .collect()
    }
}
