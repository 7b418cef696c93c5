//! The noise predictor: a convolutional UNet whose residual blocks are
//! modulated by a time embedding fused with the condition bundle.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{
    conv2d, group_norm, linear, Conv2d, Conv2dConfig, GroupNorm, Linear, Module, VarBuilder,
};
use serde::{Deserialize, Serialize};

use crate::cond::ConditionBundle;
use crate::corpus::{IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub height: usize,
    pub width: usize,
    /// Channel width of the first level.
    pub base: usize,
    /// Per-level channel multipliers; each extra level halves the resolution.
    pub mults: Vec<usize>,
    pub groups: usize,
    /// Width of each of the three conditions.
    pub cond_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            height: IMAGE_HEIGHT,
            width: IMAGE_WIDTH,
            base: 64,
            mults: vec![1, 2, 4],
            groups: 32,
            cond_dim: 512,
        }
    }
}

impl DenoiserConfig {
    /// Width of the time embedding and of the fused conditioning vector.
    pub fn time_dim(&self) -> usize {
        4 * self.base
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.mults.is_empty() || self.base == 0 || self.cond_dim == 0 || self.groups == 0 {
            return bad("denoiser sizes must be positive".into());
        }
        let scale = 1 << (self.mults.len() - 1);
        if !self.height.is_multiple_of(scale) || !self.width.is_multiple_of(scale) {
            return bad(format!(
                "{}x{} is not divisible by {scale}",
                self.height, self.width
            ));
        }
        if !self.base.is_multiple_of(2) {
            return bad("base width must be even for the sinusoidal embedding".into());
        }
        for m in &self.mults {
            if *m == 0 || !(m * self.base).is_multiple_of(self.groups) {
                return bad(format!(
                    "{} channels not divisible into {} groups",
                    m * self.base,
                    self.groups
                ));
            }
        }
        Ok(())
    }
}

fn conv3(cin: usize, cout: usize, stride: usize, vb: VarBuilder) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: 1,
        stride,
        ..Default::default()
    };
    Ok(conv2d(cin, cout, 3, cfg, vb)?)
}

struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    emb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(cin: usize, cout: usize, cfg: &DenoiserConfig, vb: VarBuilder) -> Result<Self> {
        let skip = if cin != cout {
            Some(conv2d(cin, cout, 1, Default::default(), vb.pp("skip"))?)
        } else {
            None
        };
        Ok(ResBlock {
            norm1: group_norm(cfg.groups, cin, 1e-5, vb.pp("norm1"))?,
            conv1: conv3(cin, cout, 1, vb.pp("conv1"))?,
            emb: linear(cfg.time_dim(), cout, vb.pp("emb"))?,
            norm2: group_norm(cfg.groups, cout, 1e-5, vb.pp("norm2"))?,
            conv2: conv3(cout, cout, 1, vb.pp("conv2"))?,
            skip,
        })
    }

    /// `emb` is the already-activated fused embedding, `(B, time_dim)`.
    fn forward(&self, x: &Tensor, emb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let shift = self.emb.forward(emb)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = h.broadcast_add(&shift)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let x = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((x + h)?)
    }
}

/// Single-head self-attention over all spatial positions.
struct SelfAttention {
    norm: GroupNorm,
    qkv: Linear,
    proj: Linear,
    scale: f64,
}

impl SelfAttention {
    fn new(ch: usize, cfg: &DenoiserConfig, vb: VarBuilder) -> Result<Self> {
        Ok(SelfAttention {
            norm: group_norm(cfg.groups, ch, 1e-5, vb.pp("norm"))?,
            qkv: linear(ch, 3 * ch, vb.pp("qkv"))?,
            proj: linear(ch, ch, vb.pp("proj"))?,
            scale: 1.0 / (ch as f64).sqrt(),
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let tokens = self
            .norm
            .forward(x)?
            .reshape((b, c, h * w))?
            .transpose(1, 2)?
            .contiguous()?;
        let qkv = self.qkv.forward(&tokens)?;
        let q = qkv.narrow(D::Minus1, 0, c)?;
        let k = qkv.narrow(D::Minus1, c, c)?;
        let v = qkv.narrow(D::Minus1, 2 * c, c)?;
        let scores = (q.contiguous()?.matmul(&k.t()?.contiguous()?)? * self.scale)?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = self.proj.forward(&attn.matmul(&v.contiguous()?)?)?;
        let out = out.transpose(1, 2)?.reshape((b, c, h, w))?;
        Ok((x + out)?)
    }
}

/// Sinusoidal embedding of (1-based) step indices, `(B, dim)`.
pub fn step_embedding(
    steps: &[usize],
    dim: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &n in steps {
        let t = n as f64;
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let (sin, cos): (Vec<f64>, Vec<f64>) =
            freqs.map(|f| ((t * f).sin(), (t * f).cos())).unzip();
        data.extend(sin);
        data.extend(cos);
    }
    Ok(Tensor::from_vec(data, (steps.len(), dim), device)?.to_dtype(dtype)?)
}

pub struct DenoiserModel {
    config: DenoiserConfig,
    params: ParamStore,
    time_in: Linear,
    time_out: Linear,
    cond_fuse: Linear,
    conv_in: Conv2d,
    down: Vec<ResBlock>,
    downsample: Vec<Conv2d>,
    mid1: ResBlock,
    mid_attn: SelfAttention,
    mid2: ResBlock,
    up: Vec<ResBlock>,
    upsample: Vec<Conv2d>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
    dtype: DType,
    device: Device,
}

impl DenoiserModel {
    pub fn new(config: DenoiserConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::new(seed);
        let vb = params.builder(dtype, device);
        let td = config.time_dim();
        let chans: Vec<usize> = config.mults.iter().map(|m| m * config.base).collect();
        let levels = chans.len();

        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut prev = config.base;
        for (i, &ch) in chans.iter().enumerate() {
            down.push(ResBlock::new(
                prev,
                ch,
                &config,
                vb.pp(format!("down.{i}")),
            )?);
            if i + 1 < levels {
                downsample.push(conv3(ch, ch, 2, vb.pp(format!("downsample.{i}")))?);
            }
            prev = ch;
        }
        let deepest = chans[levels - 1];
        let mut up = Vec::new();
        let mut upsample = Vec::new();
        for i in (0..levels).rev() {
            let ch = chans[i];
            up.push(ResBlock::new(
                prev + ch,
                ch,
                &config,
                vb.pp(format!("up.{i}")),
            )?);
            if i > 0 {
                upsample.push(conv3(ch, ch, 1, vb.pp(format!("upsample.{i}")))?);
            }
            prev = ch;
        }
        Ok(DenoiserModel {
            time_in: linear(config.base, td, vb.pp("time_embed.0"))?,
            time_out: linear(td, td, vb.pp("time_embed.1"))?,
            cond_fuse: linear(td + 3 * config.cond_dim, td, vb.pp("cond_fuse"))?,
            conv_in: conv3(1, config.base, 1, vb.pp("conv_in"))?,
            down,
            downsample,
            mid1: ResBlock::new(deepest, deepest, &config, vb.pp("mid.0"))?,
            mid_attn: SelfAttention::new(deepest, &config, vb.pp("mid.attn"))?,
            mid2: ResBlock::new(deepest, deepest, &config, vb.pp("mid.1"))?,
            up,
            upsample,
            norm_out: group_norm(config.groups, config.base, 1e-5, vb.pp("norm_out"))?,
            conv_out: conv3(config.base, 1, 1, vb.pp("conv_out"))?,
            config,
            params,
            dtype,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Predicted noise for `x` `(B, 1, H, W)` at per-sample steps, given the
    /// concatenated conditions `(B, 3 * cond_dim)`.
    pub fn forward(&self, x: &Tensor, steps: &[usize], cond: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if c != 1 || h != self.config.height || w != self.config.width {
            return Err(Error::shape(
                format!("(B, 1, {}, {})", self.config.height, self.config.width),
                format!("{:?}", x.dims()),
            ));
        }
        if steps.len() != b {
            return Err(Error::shape(format!("{b} steps"), steps.len()));
        }
        let cdims = cond.dims2()?;
        if cdims != (b, 3 * self.config.cond_dim) {
            return Err(Error::shape(
                format!("({b}, {})", 3 * self.config.cond_dim),
                format!("{cdims:?}"),
            ));
        }
        let temb = step_embedding(steps, self.config.base, self.dtype, &self.device)?;
        let temb = self
            .time_out
            .forward(&self.time_in.forward(&temb)?.silu()?)?;
        let fused = self
            .cond_fuse
            .forward(&Tensor::cat(&[&temb, &cond.to_dtype(self.dtype)?], 1)?)?;
        let emb = fused.silu()?;

        let mut hcur = self.conv_in.forward(&x.to_dtype(self.dtype)?)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, block) in self.down.iter().enumerate() {
            hcur = block.forward(&hcur, &emb)?;
            skips.push(hcur.clone());
            if let Some(ds) = self.downsample.get(i) {
                hcur = ds.forward(&hcur)?;
            }
        }
        hcur = self.mid1.forward(&hcur, &emb)?;
        hcur = self.mid_attn.forward(&hcur)?;
        hcur = self.mid2.forward(&hcur, &emb)?;
        for (j, block) in self.up.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            hcur = block.forward(&Tensor::cat(&[&hcur, &skip], 1)?, &emb)?;
            if let Some(us) = self.upsample.get(j) {
                let (_, _, hh, ww) = hcur.dims4()?;
                hcur = us.forward(&hcur.upsample_nearest2d(2 * hh, 2 * ww)?)?;
            }
        }
        Ok(self
            .conv_out
            .forward(&self.norm_out.forward(&hcur)?.silu()?)?)
    }

    /// [`forward`](Self::forward) with a condition bundle.
    pub fn predict(&self, x: &Tensor, steps: &[usize], bundle: &ConditionBundle) -> Result<Tensor> {
        self.forward(x, steps, &bundle.concat()?)
    }
}
