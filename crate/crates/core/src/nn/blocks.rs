//! The fusion architecture as composable blocks.
//!
//! Block math, with `a` the LeakyReLU activation and `s` the sigmoid:
//!
//! * channel attention   `CA(K)  = K * s(conv2(relu(conv1(avg_pool(K)))))`
//! * feature extractor   `FE(M)  = M + conv3(M + CA(conv2(a(conv1(M)))))`
//! * wide focus          `WF(x)  = drop(a(conv(sum_d drop(a(conv_d(x))))))`
//! * filtered wide focus `FWF(x) = (shallow + WF(shallow), shallow)`, with
//!   `shallow = FE^n(x)`
//! * attention fusion    `SAF(xa, xb) = xa * s(mlp_b(xb)) + xb * s(mlp_a(xa))`
//!
//! Each fusion stage runs FWF per stream, multiplies the two deep features as
//! a naive joint representation, fuses that with the RGB features through one
//! SAF block, convolves, then fuses the result with the depth features through
//! a second SAF block. The RGB stream forwards its shallow features to the
//! next stage. The full model adds the predicted correction back onto the
//! upsampled LR depth map.

use rand_chacha::ChaCha8Rng;

use super::config::{FusionKind, ModelConfig, SkipLocation};
use super::store::{BoundParams, Init, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Scalar, Shape};

type Rng<'a> = Option<&'a mut ChaCha8Rng>;

/// Named conv layer: registration shape plus forward geometry.
pub struct Conv2dSpec {
    weight: String,
    bias: String,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    padding: usize,
    dilation: usize,
}

impl Conv2dSpec {
    /// 3x3 same-padding conv; padding tracks the dilation.
    pub fn same3(prefix: &str, in_ch: usize, out_ch: usize, dilation: usize) -> Self {
        Conv2dSpec {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            in_ch,
            out_ch,
            k: 3,
            padding: dilation,
            dilation,
        }
    }

    pub fn pointwise(prefix: &str, in_ch: usize, out_ch: usize) -> Self {
        Conv2dSpec {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            in_ch,
            out_ch,
            k: 1,
            padding: 0,
            dilation: 1,
        }
    }

    fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        let shape = Shape::new(self.out_ch, self.in_ch, self.k, self.k);
        store.register_weight(&self.weight, shape, self.in_ch * self.k * self.k, init);
        store.register_bias(&self.bias, self.out_ch);
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let w = p.get(&self.weight)?;
        let b = p.get(&self.bias)?;
        g.conv2d(x, w, Some(b), self.padding, self.dilation)
    }
}

/// Channel-wise affine layer of an attention MLP.
pub struct LinearSpec {
    weight: String,
    bias: String,
    in_ch: usize,
    out_ch: usize,
}

impl LinearSpec {
    pub fn new(prefix: &str, in_ch: usize, out_ch: usize) -> Self {
        LinearSpec {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            in_ch,
            out_ch,
        }
    }

    fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        let shape = Shape::new(self.out_ch, self.in_ch, 1, 1);
        store.register_weight(&self.weight, shape, self.in_ch, init);
        store.register_bias(&self.bias, self.out_ch);
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let w = p.get(&self.weight)?;
        let b = p.get(&self.bias)?;
        g.linear(x, w, b)
    }
}

/// Squeeze-excitation style gate from globally pooled statistics.
pub struct ChannelAttention {
    squeeze: Conv2dSpec,
    excite: Conv2dSpec,
}

impl ChannelAttention {
    pub fn new(prefix: &str, channels: usize, reduction: usize) -> Self {
        let mid = channels / reduction;
        ChannelAttention {
            squeeze: Conv2dSpec::pointwise(&format!("{prefix}.squeeze"), channels, mid),
            excite: Conv2dSpec::pointwise(&format!("{prefix}.excite"), mid, channels),
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.squeeze.register(store, init);
        self.excite.register(store, init);
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let pooled = g.global_avg_pool(x)?;
        let h = self.squeeze.forward(g, p, pooled)?;
        let h = g.relu(h)?;
        let h = self.excite.forward(g, p, h)?;
        let gate = g.sigmoid(h)?;
        g.mul(x, gate)
    }
}

/// Conv-activation-conv stack with channel attention and two skips.
pub struct FeatureExtractor {
    conv1: Conv2dSpec,
    conv2: Conv2dSpec,
    conv3: Conv2dSpec,
    ca: ChannelAttention,
    slope: f64,
}

impl FeatureExtractor {
    pub fn new(prefix: &str, channels: usize, reduction: usize, slope: f64) -> Self {
        FeatureExtractor {
            conv1: Conv2dSpec::same3(&format!("{prefix}.conv1"), channels, channels, 1),
            conv2: Conv2dSpec::same3(&format!("{prefix}.conv2"), channels, channels, 1),
            conv3: Conv2dSpec::same3(&format!("{prefix}.conv3"), channels, channels, 1),
            ca: ChannelAttention::new(&format!("{prefix}.ca"), channels, reduction),
            slope,
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.conv1.register(store, init);
        self.conv2.register(store, init);
        self.conv3.register(store, init);
        self.ca.register(store, init);
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let h = self.conv1.forward(g, p, x)?;
        let h = g.leaky_relu(h, self.slope)?;
        let h = self.conv2.forward(g, p, h)?;
        let h = self.ca.forward(g, p, h)?;
        let inner = g.add(x, h)?;
        let out = self.conv3.forward(g, p, inner)?;
        g.add(x, out)
    }
}

/// Parallel dilated branches, summed, then one aggregating conv.
/// Dropout is live only when a training RNG is supplied.
pub struct WideFocus {
    branches: Vec<Conv2dSpec>,
    fuse: Conv2dSpec,
    slope: f64,
    dropout_p: f64,
}

impl WideFocus {
    pub fn new(prefix: &str, channels: usize, dilations: &[usize], slope: f64, dropout_p: f64) -> Self {
        WideFocus {
            branches: dilations
                .iter()
                .enumerate()
                .map(|(i, &d)| Conv2dSpec::same3(&format!("{prefix}.branch.{i}"), channels, channels, d))
                .collect(),
            fuse: Conv2dSpec::same3(&format!("{prefix}.fuse"), channels, channels, 1),
            slope,
            dropout_p,
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        for b in &self.branches {
            b.register(store, init);
        }
        self.fuse.register(store, init);
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: NodeId,
        mut rng: Rng,
    ) -> Result<NodeId> {
        let mut summed: Option<NodeId> = None;
        for branch in &self.branches {
            let h = branch.forward(g, p, x)?;
            let h = g.leaky_relu(h, self.slope)?;
            let h = self.drop(g, h, rng.as_deref_mut())?;
            summed = Some(match summed {
                Some(acc) => g.add(acc, h)?,
                None => h,
            });
        }
        let h = self.fuse.forward(g, p, summed.expect("validated non-empty dilations"))?;
        let h = g.leaky_relu(h, self.slope)?;
        self.drop(g, h, rng)
    }

    fn drop<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, rng: Rng) -> Result<NodeId> {
        match rng {
            Some(rng) => g.dropout(x, self.dropout_p, true, rng),
            None => Ok(x),
        }
    }
}

/// FE stack followed by wide focus, exposing (deep, shallow) features.
pub struct FilteredWideFocus {
    fes: Vec<FeatureExtractor>,
    wf: Option<WideFocus>,
    skip_location: SkipLocation,
}

impl FilteredWideFocus {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        FilteredWideFocus {
            fes: (0..cfg.n_fe)
                .map(|i| {
                    FeatureExtractor::new(
                        &format!("{prefix}.fe.{i}"),
                        cfg.channels,
                        cfg.ca_reduction,
                        cfg.leaky_slope as f64,
                    )
                })
                .collect(),
            wf: cfg.use_wf.then(|| {
                WideFocus::new(
                    &format!("{prefix}.wf"),
                    cfg.channels,
                    &cfg.wf_dilations,
                    cfg.leaky_slope as f64,
                    cfg.dropout_p as f64,
                )
            }),
            skip_location: cfg.skip_location,
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        for fe in &self.fes {
            fe.register(store, init);
        }
        if let Some(wf) = &self.wf {
            wf.register(store, init);
        }
    }

    /// Returns (deep, shallow).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: NodeId,
        rng: Rng,
    ) -> Result<(NodeId, NodeId)> {
        let mut shallow = x;
        for fe in &self.fes {
            shallow = fe.forward(g, p, shallow)?;
        }
        let deep = match &self.wf {
            Some(wf) => {
                let refined = wf.forward(g, p, shallow, rng)?;
                g.add(shallow, refined)?
            }
            None => shallow,
        };
        let skip = match self.skip_location {
            SkipLocation::AfterFe => shallow,
            SkipLocation::AfterWf => deep,
        };
        Ok((deep, skip))
    }
}

/// Stack of channel-wise affine layers producing attention logits.
pub struct SafMlp {
    layers: Vec<LinearSpec>,
}

impl SafMlp {
    pub fn new(prefix: &str, channels: usize, layers: usize) -> Self {
        SafMlp {
            layers: (0..layers)
                .map(|i| LinearSpec::new(&format!("{prefix}.{i}"), channels, channels))
                .collect(),
        }
    }

    fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        for l in &self.layers {
            l.register(store, init);
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for l in &self.layers {
            h = l.forward(g, p, h)?;
        }
        Ok(h)
    }
}

/// Two-input fusion: each input is gated by a sigmoid of an affine map of the
/// other. With weighting disabled it degrades to a plain (symmetric) sum and
/// registers no parameters.
pub struct SafBlock {
    mlps: Option<(SafMlp, SafMlp)>,
}

impl SafBlock {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        SafBlock {
            mlps: cfg.saf_weighted.then(|| {
                (
                    SafMlp::new(&format!("{prefix}.mlp_a"), cfg.channels, cfg.saf_mlp_layers),
                    SafMlp::new(&format!("{prefix}.mlp_b"), cfg.channels, cfg.saf_mlp_layers),
                )
            }),
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        if let Some((a, b)) = &self.mlps {
            a.register(store, init);
            b.register(store, init);
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x_a: NodeId,
        x_b: NodeId,
    ) -> Result<NodeId> {
        if g.shape(x_a) != g.shape(x_b) {
            return Err(Error::shape(
                "saf",
                format!("{} vs {}", g.shape(x_a), g.shape(x_b)),
            ));
        }
        let Some((mlp_a, mlp_b)) = &self.mlps else {
            return g.add(x_a, x_b);
        };
        let y_a = mlp_a.forward(g, p, x_a)?;
        let y_b = mlp_b.forward(g, p, x_b)?;
        let gate_b = g.sigmoid(y_b)?;
        let gate_a = g.sigmoid(y_a)?;
        let left = g.mul(x_a, gate_b)?;
        let right = g.mul(x_b, gate_a)?;
        g.add(left, right)
    }
}

enum FusionOp {
    Igaf { saf_rgb: SafBlock, mid_conv: Conv2dSpec, saf_depth: SafBlock },
    Add,
    Concat { proj: Conv2dSpec },
}

/// One fusion stage: per-stream feature extraction, then modality fusion.
pub struct IgafStage {
    rgb_fwf: FilteredWideFocus,
    depth_fwf: FilteredWideFocus,
    fusion: FusionOp,
}

impl IgafStage {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        let fusion = match cfg.fusion_kind {
            FusionKind::Igaf => FusionOp::Igaf {
                saf_rgb: SafBlock::new(&format!("{prefix}.saf_rgb"), cfg),
                mid_conv: Conv2dSpec::same3(&format!("{prefix}.mid_conv"), cfg.channels, cfg.channels, 1),
                saf_depth: SafBlock::new(&format!("{prefix}.saf_depth"), cfg),
            },
            FusionKind::Add => FusionOp::Add,
            FusionKind::Concat => FusionOp::Concat {
                proj: Conv2dSpec::pointwise(&format!("{prefix}.proj"), 2 * cfg.channels, cfg.channels),
            },
        };
        IgafStage {
            rgb_fwf: FilteredWideFocus::new(&format!("{prefix}.rgb_fwf"), cfg),
            depth_fwf: FilteredWideFocus::new(&format!("{prefix}.depth_fwf"), cfg),
            fusion,
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.rgb_fwf.register(store, init);
        self.depth_fwf.register(store, init);
        match &self.fusion {
            FusionOp::Igaf { saf_rgb, mid_conv, saf_depth } => {
                saf_rgb.register(store, init);
                mid_conv.register(store, init);
                saf_depth.register(store, init);
            }
            FusionOp::Add => {}
            FusionOp::Concat { proj } => proj.register(store, init),
        }
    }

    /// Returns (d_out, r_out); r_out feeds the next stage's RGB input.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        r_in: NodeId,
        d_in: NodeId,
        mut rng: Rng,
    ) -> Result<(NodeId, NodeId)> {
        let (r_deep, r_skip) = self.rgb_fwf.forward(g, p, r_in, rng.as_deref_mut())?;
        let (d_deep, _) = self.depth_fwf.forward(g, p, d_in, rng)?;
        let d_out = match &self.fusion {
            FusionOp::Igaf { saf_rgb, mid_conv, saf_depth } => {
                let naive = g.mul(r_deep, d_deep)?;
                let guided = saf_rgb.forward(g, p, naive, r_deep)?;
                let joint = mid_conv.forward(g, p, guided)?;
                saf_depth.forward(g, p, joint, d_deep)?
            }
            FusionOp::Add => g.add(r_deep, d_deep)?,
            FusionOp::Concat { proj } => {
                let both = g.concat_channels(r_deep, d_deep)?;
                proj.forward(g, p, both)?
            }
        };
        Ok((d_out, r_skip))
    }
}

/// Three feature extractors, then conv -> LeakyReLU -> conv down to one channel.
pub struct DepthRefinement {
    fes: Vec<FeatureExtractor>,
    conv1: Conv2dSpec,
    conv2: Conv2dSpec,
    slope: f64,
}

impl DepthRefinement {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        DepthRefinement {
            fes: (0..3)
                .map(|i| {
                    FeatureExtractor::new(
                        &format!("{prefix}.fe.{i}"),
                        cfg.channels,
                        cfg.ca_reduction,
                        cfg.leaky_slope as f64,
                    )
                })
                .collect(),
            conv1: Conv2dSpec::same3(&format!("{prefix}.conv1"), cfg.channels, cfg.channels, 1),
            conv2: Conv2dSpec::same3(&format!("{prefix}.conv2"), cfg.channels, 1, 1),
            slope: cfg.leaky_slope as f64,
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        for fe in &self.fes {
            fe.register(store, init);
        }
        self.conv1.register(store, init);
        self.conv2.register(store, init);
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for fe in &self.fes {
            h = fe.forward(g, p, h)?;
        }
        let h = self.conv1.forward(g, p, h)?;
        let h = g.leaky_relu(h, self.slope)?;
        self.conv2.forward(g, p, h)
    }
}

/// The full dual-stream model.
pub struct IgafModel {
    stem_rgb: Conv2dSpec,
    stem_depth: Conv2dSpec,
    stages: Vec<IgafStage>,
    refine: DepthRefinement,
    slope: f64,
}

impl IgafModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(IgafModel {
            stem_rgb: Conv2dSpec::same3("stem_rgb", 3, cfg.channels, 1),
            stem_depth: Conv2dSpec::same3("stem_depth", 1, cfg.channels, 1),
            stages: (0..cfg.num_igaf).map(|i| IgafStage::new(&format!("igaf.{i}"), cfg)).collect(),
            refine: DepthRefinement::new("refine", cfg),
            slope: cfg.leaky_slope as f64,
        })
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.stem_rgb.register(store, init);
        self.stem_depth.register(store, init);
        for stage in &self.stages {
            stage.register(store, init);
        }
        self.refine.register(store, init);
    }

    /// Predicts HR depth from RGB guidance and the upsampled LR depth map.
    /// `rgb` is [N, 3, H, W]; `depth_up` is [N, 1, H, W], already bicubic-
    /// upsampled to the RGB resolution; the output shares its shape.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        rgb: NodeId,
        depth_up: NodeId,
        mut rng: Rng,
    ) -> Result<NodeId> {
        let rs = g.shape(rgb);
        let ds = g.shape(depth_up);
        if rs.n != ds.n || rs.h != ds.h || rs.w != ds.w {
            return Err(Error::shape(
                "model",
                format!("rgb {rs} and upsampled depth {ds} are not spatially aligned"),
            ));
        }
        let mut r = self.stem_rgb.forward(g, p, rgb)?;
        r = g.leaky_relu(r, self.slope)?;
        let mut d = self.stem_depth.forward(g, p, depth_up)?;
        d = g.leaky_relu(d, self.slope)?;
        for stage in &self.stages {
            let (d_next, r_next) = stage.forward(g, p, r, d, rng.as_deref_mut())?;
            d = d_next;
            r = r_next;
        }
        // The last stage's RGB output is dropped; only depth is refined.
        let correction = self.refine.forward(g, p, d)?;
        g.add(depth_up, correction)
    }
}

/// Deterministic parameter initialization for a model configuration.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    use rand::SeedableRng;
    let model = IgafModel::new(cfg)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init::Kaiming { rng: &mut rng, slope: cfg.leaky_slope as f64 };
    model.register(&mut store, &mut init);
    Ok(store)
}

/// Parameter layout (names and shapes only) for a configuration.
pub fn param_layout(cfg: &ModelConfig) -> Result<ParamStore<f32>> {
    let model = IgafModel::new(cfg)?;
    let mut store = ParamStore::new();
    model.register(&mut store, &mut Init::Zeros);
    Ok(store)
}

/// Total scalar parameter count implied by a configuration.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_layout(cfg)?.total_len())
}
