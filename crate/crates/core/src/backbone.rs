//! ResNet-style feature extractors with optional DSSA insertion: a 3×3 stem,
//! four stages of basic or bottleneck blocks (stride-2 entries on stages
//! 2–4), time-mean pooling and a linear embedding projection.
//!
//! `hs_resnet50` swaps every bottleneck 3×3 for a Hierarchical-Split block;
//! the surrounding 1×1 convolutions widen to the block's s·C₀ channels, so
//! stage output shapes match `resnet50` exactly.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::DSSAConfig;
use crate::error::{Error, Result};
use crate::hs_block::HSBlockConfig;
use crate::tensor::{read_fmat, write_fmat, Tensor};

/// Fewest input frames the three stride-2 stages support.
pub const MIN_FRAMES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Resnet34,
    Resnet50,
    HsResnet50,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Resnet34 => "resnet34",
            Variant::Resnet50 => "resnet50",
            Variant::HsResnet50 => "hs_resnet50",
        };
        f.write_str(s)
    }
}

/// Hierarchical-split hyperparameters applied to every bottleneck 3×3.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HsSettings {
    pub s: usize,
    pub t: f64,
    #[serde(default = "default_hs_kernel")]
    pub kernel: usize,
}

fn default_hs_kernel() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: Variant,
    #[serde(default = "default_initial_channels")]
    pub initial_channels: usize,
    #[serde(default = "default_stage_blocks")]
    pub stage_blocks: [usize; 4],
    /// Set exactly when `variant` is `hs_resnet50`.
    #[serde(default)]
    pub hs: Option<HsSettings>,
    /// Insert the DSSA module after this stage (1–4); `None` disables it.
    #[serde(default)]
    pub dssa_after_stage: Option<usize>,
    #[serde(default = "default_dssa_kernel")]
    pub dssa_kernel_size: usize,
    #[serde(default)]
    pub dssa_topk: Option<usize>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
}

fn default_initial_channels() -> usize {
    16
}

fn default_stage_blocks() -> [usize; 4] {
    [3, 4, 6, 3]
}

fn default_dssa_kernel() -> usize {
    1
}

fn default_embedding_dim() -> usize {
    256
}

fn default_feature_dim() -> usize {
    64
}

impl BackboneConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            initial_channels: default_initial_channels(),
            stage_blocks: default_stage_blocks(),
            hs: match variant {
                Variant::HsResnet50 => Some(HsSettings {
                    s: 8,
                    t: 1.5,
                    kernel: 3,
                }),
                _ => None,
            },
            dssa_after_stage: None,
            dssa_kernel_size: default_dssa_kernel(),
            dssa_topk: None,
            embedding_dim: default_embedding_dim(),
            feature_dim: default_feature_dim(),
        }
    }

    /// Small configuration so full test suites run in seconds.
    pub fn toy(variant: Variant) -> Self {
        let mut cfg = Self::new(variant);
        cfg.initial_channels = 4;
        cfg.feature_dim = 16;
        cfg.embedding_dim = 32;
        if variant == Variant::HsResnet50 {
            // planes 4..32 need a wider split base than the paper's s=8
            cfg.hs = Some(HsSettings {
                s: 2,
                t: 1.5,
                kernel: 3,
            });
        }
        cfg
    }

    fn validate(&self) -> Result<()> {
        if self.initial_channels == 0 {
            return Err(Error::Config("initial_channels must be positive".into()));
        }
        if self.embedding_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "embedding_dim and feature_dim must be positive".into(),
            ));
        }
        if self.stage_blocks.contains(&0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        match (self.variant, &self.hs) {
            (Variant::HsResnet50, None) => {
                return Err(Error::Config(
                    "hs_resnet50 requires hs settings (s, t)".into(),
                ))
            }
            (Variant::HsResnet50, Some(_)) => {}
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "hs settings are only valid for hs_resnet50, not {}",
                    self.variant
                )))
            }
            (_, None) => {}
        }
        if let Some(stage) = self.dssa_after_stage {
            if !(1..=4).contains(&stage) {
                return Err(Error::Config(format!(
                    "dssa_after_stage must be in 1..=4, got {stage}"
                )));
            }
        }
        if self.dssa_topk == Some(0) {
            return Err(Error::Config("dssa_topk must be ≥ 1 when set".into()));
        }
        Ok(())
    }

    fn expansion(&self) -> usize {
        match self.variant {
            Variant::Resnet34 => 1,
            Variant::Resnet50 | Variant::HsResnet50 => 4,
        }
    }

    fn stage_planes(&self, stage: usize) -> usize {
        self.initial_channels << (stage - 1)
    }

    fn stage_out_channels(&self, stage: usize) -> usize {
        self.stage_planes(stage) * self.expansion()
    }

    /// Frequency extent after `stage` (stages 2–4 halve with ceiling).
    fn freq_after_stage(&self, stage: usize) -> usize {
        let mut f = self.feature_dim;
        for _ in 2..=stage {
            f = f.div_ceil(2);
        }
        f
    }
}

struct ConvLayer {
    w: Tensor,
    stride: usize,
    pad: (usize, usize),
}

impl ConvLayer {
    fn seeded(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        pad: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let b = 1.0 / (fan_in as f64).sqrt();
        let n = out_ch * in_ch * k * k;
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-b..=b)).collect();
        Self {
            w: Tensor::new(vec![out_ch, in_ch, k, k], data).unwrap(),
            stride,
            pad,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.w, self.stride, self.pad)
    }
}

struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    fn seeded(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            w: Tensor::new(vec![out_dim, in_dim], data).unwrap(),
            b: Tensor::new(vec![out_dim], bias).unwrap(),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // x is a flat [n] vector
        let col = x.reshape(vec![x.numel(), 1])?;
        let out = self.w.matmul(&col)?;
        out.reshape(vec![self.w.shape()[0]])?.add(&self.b.reshape(vec![self.b.numel()])?)
    }
}

enum Mid {
    Conv(ConvLayer),
    Hs(HSBlockConfig),
}

enum BlockBody {
    Basic {
        conv1: ConvLayer,
        conv2: ConvLayer,
    },
    Bottleneck {
        conv1: ConvLayer,
        mid: Mid,
        conv3: ConvLayer,
    },
}

struct Block {
    body: BlockBody,
    down: Option<ConvLayer>,
}

fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

impl Block {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shortcut = match &self.down {
            Some(d) => d.forward(x)?,
            None => x.clone(),
        };
        let main = match &self.body {
            BlockBody::Basic { conv1, conv2 } => {
                let h = relu(&conv1.forward(x)?);
                conv2.forward(&h)?
            }
            BlockBody::Bottleneck { conv1, mid, conv3 } => {
                let h = relu(&conv1.forward(x)?);
                let h = match mid {
                    Mid::Conv(c) => relu(&c.forward(&h)?),
                    Mid::Hs(hs) => relu(&hs.forward(&h)?),
                };
                conv3.forward(&h)?
            }
        };
        Ok(relu(&main.add(&shortcut)?))
    }
}

/// A built backbone: immutable weights, pure `embed`.
pub struct Model {
    cfg: BackboneConfig,
    seed: u64,
    stem: ConvLayer,
    stages: Vec<Vec<Block>>,
    dssa: Option<DSSAConfig>,
    proj: Linear,
}

/// Deterministically builds a model from its configuration and seed; the
/// same pair always yields bitwise-identical weights.
pub fn build_model(cfg: &BackboneConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.initial_channels;
    let stem = ConvLayer::seeded(c, 1, 3, 1, (1, 1), &mut rng);

    let mut stages = Vec::with_capacity(4);
    let mut dssa = None;
    let mut in_ch = c;
    for stage in 1..=4usize {
        let planes = cfg.stage_planes(stage);
        let out_ch = cfg.stage_out_channels(stage);
        let entry_stride = if stage == 1 { 1 } else { 2 };
        let mut blocks = Vec::with_capacity(cfg.stage_blocks[stage - 1]);
        for b in 0..cfg.stage_blocks[stage - 1] {
            let stride = if b == 0 { entry_stride } else { 1 };
            let needs_down = stride != 1 || in_ch != out_ch;
            let body = match cfg.variant {
                Variant::Resnet34 => BlockBody::Basic {
                    conv1: ConvLayer::seeded(planes, in_ch, 3, stride, (1, 1), &mut rng),
                    conv2: ConvLayer::seeded(planes, planes, 3, 1, (1, 1), &mut rng),
                },
                Variant::Resnet50 => BlockBody::Bottleneck {
                    conv1: ConvLayer::seeded(planes, in_ch, 1, stride, (0, 0), &mut rng),
                    mid: Mid::Conv(ConvLayer::seeded(planes, planes, 3, 1, (1, 1), &mut rng)),
                    conv3: ConvLayer::seeded(out_ch, planes, 1, 1, (0, 0), &mut rng),
                },
                Variant::HsResnet50 => {
                    let hs_set = cfg.hs.as_ref().unwrap();
                    let hs = HSBlockConfig::new(planes, hs_set.t, hs_set.s, hs_set.kernel)?
                        .with_seeded_weights(&mut rng)?;
                    let mid_ch = hs.io_channels();
                    BlockBody::Bottleneck {
                        conv1: ConvLayer::seeded(mid_ch, in_ch, 1, stride, (0, 0), &mut rng),
                        mid: Mid::Hs(hs),
                        conv3: ConvLayer::seeded(out_ch, mid_ch, 1, 1, (0, 0), &mut rng),
                    }
                }
            };
            let down = if needs_down {
                Some(ConvLayer::seeded(out_ch, in_ch, 1, stride, (0, 0), &mut rng))
            } else {
                None
            };
            blocks.push(Block { body, down });
            in_ch = out_ch;
        }
        stages.push(blocks);
        if cfg.dssa_after_stage == Some(stage) {
            let width = cfg.freq_after_stage(stage);
            dssa = Some(DSSAConfig::seeded(
                in_ch,
                width,
                cfg.dssa_kernel_size,
                cfg.dssa_topk,
                &mut rng,
            )?);
        }
    }

    let flat = in_ch * cfg.freq_after_stage(4);
    let proj = Linear::seeded(cfg.embedding_dim, flat, &mut rng);
    Ok(Model {
        cfg: cfg.clone(),
        seed,
        stem,
        stages,
        dssa,
        proj,
    })
}

impl Model {
    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dssa(&self) -> Option<&DSSAConfig> {
        self.dssa.as_ref()
    }

    /// Overrides the DSSA sparsity at inference time.
    pub fn set_dssa_topk(&mut self, topk: Option<usize>) -> Result<()> {
        match &mut self.dssa {
            Some(d) => {
                d.set_topk(topk);
                Ok(())
            }
            None => Err(Error::Config("model has no DSSA module".into())),
        }
    }

    fn run_stages(&self, features: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        if features.rank() != 2 {
            return Err(Error::Input(format!(
                "features must be [frames × bins], got {:?}",
                features.shape()
            )));
        }
        let (t, f) = (features.shape()[0], features.shape()[1]);
        if f != self.cfg.feature_dim {
            return Err(Error::Input(format!(
                "features have {f} bins, model expects {}",
                self.cfg.feature_dim
            )));
        }
        if t < MIN_FRAMES {
            return Err(Error::Input(format!(
                "need at least {MIN_FRAMES} frames, got {t}"
            )));
        }
        let mut x = relu(&self.stem.forward(&features.reshape(vec![1, t, f])?)?);
        let mut attn = None;
        for (i, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                x = block.forward(&x)?;
            }
            if self.cfg.dssa_after_stage == Some(i + 1) {
                let d = self.dssa.as_ref().expect("dssa built with config");
                let (y, w) = d.forward(&x)?;
                x = y;
                attn = Some(w);
            }
        }
        Ok((x, attn))
    }

    /// Frame-level features `[T × feature_dim]` to an embedding of length
    /// `embedding_dim`: stages, optional DSSA, mean over time, flatten,
    /// linear projection.
    pub fn embed(&self, features: &Tensor) -> Result<Tensor> {
        let (x, _) = self.run_stages(features)?;
        let pooled = x.mean_axis(1)?;
        let flat = pooled.reshape(vec![pooled.numel()])?;
        self.proj.forward(&flat)
    }

    /// Like [`embed`](Model::embed) but also returns the DSSA attention
    /// stack `[C × T' × T']` when the model carries the module.
    pub fn embed_with_attention(&self, features: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let (x, attn) = self.run_stages(features)?;
        let pooled = x.mean_axis(1)?;
        let flat = pooled.reshape(vec![pooled.numel()])?;
        Ok((self.proj.forward(&flat)?, attn))
    }

    /// Visits every weight tensor (convolutions, projections, DSSA filters
    /// and affine vectors) in a stable order.
    pub fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("stem.w", &self.stem.w);
        for (si, blocks) in self.stages.iter().enumerate() {
            for (bi, block) in blocks.iter().enumerate() {
                let p = format!("stage{}.block{}", si + 1, bi);
                match &block.body {
                    BlockBody::Basic { conv1, conv2 } => {
                        f(&format!("{p}.conv1.w"), &conv1.w);
                        f(&format!("{p}.conv2.w"), &conv2.w);
                    }
                    BlockBody::Bottleneck { conv1, mid, conv3 } => {
                        f(&format!("{p}.conv1.w"), &conv1.w);
                        match mid {
                            Mid::Conv(c) => f(&format!("{p}.conv2.w"), &c.w),
                            Mid::Hs(hs) => {
                                for (g, wt) in hs.weights().iter().enumerate() {
                                    f(&format!("{p}.hs.f{}", g + 2), wt);
                                }
                            }
                        }
                        f(&format!("{p}.conv3.w"), &conv3.w);
                    }
                }
                if let Some(d) = &block.down {
                    f(&format!("{p}.down.w"), &d.w);
                }
            }
        }
        if let Some(d) = &self.dssa {
            for (name, t) in d.named_params("dssa") {
                f(&name, &t);
            }
        }
        f("proj.w", &self.proj.w);
        f("proj.b", &self.proj.b);
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each_param(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot: &mut Tensor = if name == "stem.w" {
            &mut self.stem.w
        } else if name == "proj.w" {
            &mut self.proj.w
        } else if name == "proj.b" {
            &mut self.proj.b
        } else {
            let mut parts = name.split('.');
            let stage: usize = parts
                .next()
                .and_then(|s| s.strip_prefix("stage"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("unknown weight name '{name}'")))?;
            let block: usize = parts
                .next()
                .and_then(|s| s.strip_prefix("block"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("unknown weight name '{name}'")))?;
            let blk = self
                .stages
                .get_mut(stage - 1)
                .and_then(|s| s.get_mut(block))
                .ok_or_else(|| Error::Data(format!("no block for weight '{name}'")))?;
            let which = parts.next().unwrap_or("");
            match (&mut blk.body, which) {
                (BlockBody::Basic { conv1, .. }, "conv1") => &mut conv1.w,
                (BlockBody::Basic { conv2, .. }, "conv2") => &mut conv2.w,
                (BlockBody::Bottleneck { conv1, .. }, "conv1") => &mut conv1.w,
                (BlockBody::Bottleneck { mid: Mid::Conv(c), .. }, "conv2") => &mut c.w,
                (BlockBody::Bottleneck { mid: Mid::Hs(hs), .. }, "hs") => {
                    let g: usize = parts
                        .next()
                        .and_then(|s| s.strip_prefix('f'))
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Data(format!("unknown weight name '{name}'")))?;
                    let idx = g.checked_sub(2).ok_or_else(|| {
                        Error::Data(format!("unknown weight name '{name}'"))
                    })?;
                    return hs.set_weight(idx, value);
                }
                (BlockBody::Bottleneck { conv3, .. }, "conv3") => &mut conv3.w,
                (_, "down") => {
                    let d = blk.down.as_mut().ok_or_else(|| {
                        Error::Data(format!("block for '{name}' has no downsample"))
                    })?;
                    &mut d.w
                }
                _ => return Err(Error::Data(format!("unknown weight name '{name}'"))),
            }
        };
        if slot.shape() != value.shape() {
            return Err(Error::Data(format!(
                "weight '{name}': shape {:?}, expected {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Writes `model.json` plus one FMAT file per weight into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        let mut io_err = None;
        self.for_each_param(&mut |name, t| {
            if io_err.is_some() {
                return;
            }
            let file = format!("{name}.fmat");
            let rows = t.shape()[0];
            let cols = t.numel() / rows;
            let flat = match t.reshape(vec![rows, cols]) {
                Ok(f) => f,
                Err(e) => {
                    io_err = Some(e);
                    return;
                }
            };
            if let Err(e) = write_fmat(dir.join(&file), &flat) {
                io_err = Some(e);
                return;
            }
            entries.push(WeightEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                file,
            });
        });
        if let Some(e) = io_err {
            return Err(e);
        }
        let manifest = ModelManifest {
            config: self.cfg.clone(),
            seed: self.seed,
            weights: entries,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        fs::write(dir.join("model.json"), json)?;
        Ok(())
    }

    /// Rebuilds the model from a directory written by [`save`](Model::save).
    pub fn load(dir: impl AsRef<Path>) -> Result<Model> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("model.json");
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", manifest_path.display())))?;
        let manifest: ModelManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
        let mut model = build_model(&manifest.config, manifest.seed)?;
        let mut dssa_params: Vec<(String, Tensor)> = Vec::new();
        for entry in &manifest.weights {
            let flat = read_fmat(dir.join(&entry.file))?;
            let n: usize = entry.shape.iter().product();
            if flat.numel() != n {
                return Err(Error::Data(format!(
                    "weight '{}': file holds {} values, manifest shape {:?}",
                    entry.name,
                    flat.numel(),
                    entry.shape
                )));
            }
            let t = flat.reshape(entry.shape.clone())?;
            if entry.name.starts_with("dssa.") {
                dssa_params.push((entry.name.clone(), t));
            } else {
                model.set_param(&entry.name, t)?;
            }
        }
        if let Some(d) = &mut model.dssa {
            let lookup = |name: &str| -> Result<Tensor> {
                dssa_params
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::Data(format!("missing weight '{name}'")))
            };
            d.load_params("dssa", &lookup)?;
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    config: BackboneConfig,
    seed: u64,
    weights: Vec<WeightEntry>,
}
