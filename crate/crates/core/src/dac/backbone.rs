use alloc::vec::Vec;

use crate::autodiff::{Graph, Padding, Var};
use crate::batch::rng_for;
use crate::dac::pairs::LabelFeatures;
use crate::nn::{BatchNorm, Conv2d, Dense, Mode};
use crate::params::ParamStore;
use crate::stn::{LocNetConfig, LocalizationNet, StLayer, StOutput};
use crate::{Error, Result, Tensor};

/// Where a spatial transformer may sit, in activation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StPlacement {
    AfterInput,
    AfterBlock2,
    AfterBlock3,
}

impl StPlacement {
    pub const ORDER: [StPlacement; 3] = [
        StPlacement::AfterInput,
        StPlacement::AfterBlock2,
        StPlacement::AfterBlock3,
    ];

    fn tag(self) -> &'static str {
        match self {
            StPlacement::AfterInput => "st_input",
            StPlacement::AfterBlock2 => "st_block2",
            StPlacement::AfterBlock3 => "st_block3",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    /// 0–3; activates the first `n` entries of [`StPlacement::ORDER`].
    pub st_layer_count: usize,
    pub cluster_count: usize,
    pub input_size: usize,
    pub input_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            st_layer_count: 0,
            cluster_count: 10,
            input_size: 28,
            input_channels: 1,
        }
    }
}

impl BackboneConfig {
    pub fn with_st_layers(st_layer_count: usize) -> Self {
        BackboneConfig {
            st_layer_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.st_layer_count > 3 {
            return Err(Error::Config(alloc::format!(
                "st_layer_count {} not in 0..=3",
                self.st_layer_count
            )));
        }
        if self.cluster_count < 2 {
            return Err(Error::Config("cluster_count must be at least 2".into()));
        }
        if self.input_size < 8 {
            return Err(Error::Config(alloc::format!(
                "input size {} too small for three 2x2 poolings",
                self.input_size
            )));
        }
        Ok(())
    }
}

const BLOCK_WIDTHS: [usize; 3] = [64, 128, 256];
const HIDDEN_UNITS: usize = 3096;

#[derive(Clone, Debug)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm,
    pool_bn: BatchNorm,
}

impl ConvBlock {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let mut h = self.conv.forward(g, store, x)?;
        h = self.bn.forward(g, store, h, mode)?;
        h = g.relu(h)?;
        h = g.maxpool2d(h)?;
        self.pool_bn.forward(g, store, h, mode)
    }
}

/// Output of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[N, k]` label features: softmax rows rescaled to unit L2 norm.
    pub features: Var,
    /// Active spatial transformers in placement order.
    pub st: Vec<StOutput>,
}

/// The VGG-style clustering network with optional spatial transformers
/// together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: BackboneConfig,
    pub params: ParamStore,
    blocks: Vec<ConvBlock>,
    /// One slot per [`StPlacement`], `None` when inactive.
    st: [Option<StLayer>; 3],
    hidden: Dense,
    hidden_bn: BatchNorm,
    head: Dense,
    head_bn: BatchNorm,
}

impl Model {
    /// Builds and initializes the network. Every layer draws from its own
    /// seeded stream, so the shared layers of two configurations built
    /// from the same seed hold identical weights.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut stream = 0u64;
        let mut next_rng = || {
            stream += 1;
            rng_for(seed, &[0x1a7e, stream])
        };

        let mut sizes = [config.input_size; 4];
        for i in 0..3 {
            sizes[i + 1] = sizes[i] / 2;
        }
        let mut channels = config.input_channels;
        let mut blocks = Vec::new();
        for (i, &width) in BLOCK_WIDTHS.iter().enumerate() {
            let name = alloc::format!("block{}", i + 1);
            let conv = Conv2d::new(
                &mut params,
                &alloc::format!("{name}/conv"),
                3,
                channels,
                width,
                Padding::Same,
                &mut next_rng(),
            )?;
            let bn = BatchNorm::new(&mut params, &alloc::format!("{name}/bn"), width)?;
            let pool_bn = BatchNorm::new(&mut params, &alloc::format!("{name}/pool_bn"), width)?;
            blocks.push(ConvBlock { conv, bn, pool_bn });
            channels = width;
        }
        let flat = sizes[3] * sizes[3] * channels;
        let hidden = Dense::new(&mut params, "dense1", flat, HIDDEN_UNITS, &mut next_rng())?;
        let hidden_bn = BatchNorm::new(&mut params, "dense1/bn", HIDDEN_UNITS)?;
        let head = Dense::new(
            &mut params,
            "dense2",
            HIDDEN_UNITS,
            config.cluster_count,
            &mut next_rng(),
        )?;
        let head_bn = BatchNorm::new(&mut params, "dense2/bn", config.cluster_count)?;

        let st_inputs = [
            LocNetConfig {
                size: sizes[0],
                channels: config.input_channels,
            },
            LocNetConfig {
                size: sizes[2],
                channels: BLOCK_WIDTHS[1],
            },
            LocNetConfig {
                size: sizes[3],
                channels: BLOCK_WIDTHS[2],
            },
        ];
        let mut st: [Option<StLayer>; 3] = [None, None, None];
        for (slot, (placement, loc)) in StPlacement::ORDER.iter().zip(st_inputs).enumerate() {
            // ST streams are keyed by placement, independent of the count.
            let mut rng = rng_for(seed, &[0x57, slot as u64]);
            if slot < config.st_layer_count {
                let net = LocalizationNet::build_for(
                    &mut params,
                    &alloc::format!("{}/loc", placement.tag()),
                    loc,
                    &mut rng,
                )?;
                st[slot] = Some(StLayer::new(net));
            }
        }
        Ok(Model {
            config,
            params,
            blocks,
            st,
            hidden,
            hidden_bn,
            head,
            head_bn,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn st_layer(&self, placement: StPlacement) -> Option<&StLayer> {
        self.st[placement as usize].as_ref()
    }

    pub fn st_layer_mut(&mut self, placement: StPlacement) -> Option<&mut StLayer> {
        self.st[placement as usize].as_mut()
    }

    /// Active placements with the `(size, size, channels)` each ST reads.
    pub fn st_inputs(&self) -> Vec<(StPlacement, (usize, usize, usize))> {
        StPlacement::ORDER
            .iter()
            .zip(&self.st)
            .filter_map(|(p, s)| {
                let c = s.as_ref()?.locnet.config();
                Some((*p, (c.size, c.size, c.channels)))
            })
            .collect()
    }

    /// Pins every active ST layer to a fixed θ (or releases it with `None`).
    pub fn override_st_theta(&mut self, theta: Option<[f64; 6]>) {
        for s in self.st.iter_mut().flatten() {
            s.theta_override = theta;
        }
    }

    fn st_at(&self, g: &mut Graph, slot: usize, x: Var, out: &mut Vec<StOutput>) -> Result<Var> {
        match &self.st[slot] {
            Some(st) => {
                let o = st.forward(g, &self.params, x)?;
                out.push(o);
                Ok(o.output)
            }
            None => Ok(x),
        }
    }

    /// Records the network on `g` for input `x` (`[N, H, W, C]`).
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode) -> Result<ForwardOutput> {
        let mut st = Vec::new();
        let mut h = self.st_at(g, 0, x, &mut st)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, &mut self.params, h, mode)?;
            if i >= 1 {
                h = self.st_at(g, i, h, &mut st)?;
            }
        }
        h = g.flatten(h)?;
        h = self.hidden.forward(g, &self.params, h)?;
        h = self.hidden_bn.forward(g, &mut self.params, h, mode)?;
        h = g.relu(h)?;
        h = self.head.forward(g, &self.params, h)?;
        h = self.head_bn.forward(g, &mut self.params, h, mode)?;
        h = g.relu(h)?;
        h = g.softmax(h)?;
        let features = g.l2_normalize_rows(h)?;
        Ok(ForwardOutput { features, st })
    }

    /// Eval-mode label features for all images, computed in chunks.
    pub fn label_features(&mut self, images: &Tensor, chunk: usize) -> Result<LabelFeatures> {
        let n = images.shape()[0];
        let mut parts = Vec::new();
        for start in (0..n).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(n);
            let mut g = Graph::no_grad();
            let x = g.input(images.slice_rows(start, end));
            let out = self.forward(&mut g, x, Mode::Eval)?;
            parts.push(g.value(out.features).clone());
        }
        if parts.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        LabelFeatures::new(Tensor::concat_rows(&parts)?)
    }

    /// Output of the ST layer at `placement` for each image (eval mode),
    /// with the θ it applied.
    pub fn st_output(
        &mut self,
        placement: StPlacement,
        images: &Tensor,
    ) -> Result<(Tensor, crate::stn::AffineTheta)> {
        let Some(layer) = self.st[placement as usize].clone() else {
            return Err(Error::Config(alloc::format!(
                "no ST layer at {placement:?}"
            )));
        };
        if placement == StPlacement::AfterInput {
            return layer.apply(&self.params, images);
        }
        let mut g = Graph::no_grad();
        let x = g.input(images.clone());
        let out = self.forward(&mut g, x, Mode::Eval)?;
        let idx = self.st[..placement as usize]
            .iter()
            .filter(|s| s.is_some())
            .count();
        let o = out.st[idx];
        let theta = crate::stn::AffineTheta::from_tensor(g.value(o.theta).clone())?;
        Ok((g.value(o.output).clone(), theta))
    }
}
