//! Conditional encoder: image, text and style conditions derived from a frozen
//! recognizer, learnable null embeddings, and training-time condition dropout.
//!
//! * image: attention-pool over `F_enc(I) + Emb(P_i)`
//! * text: `Proj(W_c T + Emb(P_t))`, mean-pooled over characters
//! * style: `Proj(Emb(S))`

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{init::Init, Embedding, Linear, Module, VarBuilder};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Raster, MAX_TEXT_LEN};
use crate::error::{Error, Result};
use crate::modes::GenerationMode;
use crate::params::ParamStore;
use crate::recognizer::RecognizerModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Number of recognizer frames pooled into the image condition.
    pub patches: usize,
    /// Width of the recognizer features and of every condition.
    pub dim: usize,
    pub max_text_len: usize,
    pub num_writers: usize,
    pub style_width: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patches: 64,
            dim: 512,
            max_text_len: MAX_TEXT_LEN,
            num_writers: 5,
            style_width: 512,
        }
    }
}

impl EncoderConfig {
    /// Shapes the encoder to consume `recognizer`'s features.
    pub fn for_recognizer(recognizer: &RecognizerModel, num_writers: usize) -> Self {
        EncoderConfig {
            patches: recognizer.frames(),
            dim: recognizer.feature_dim(),
            num_writers,
            ..Default::default()
        }
    }
}

/// Which of the three conditions carry real information.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Presence {
    pub image: bool,
    pub text: bool,
    pub style: bool,
}

impl Presence {
    pub const NONE: Presence = Presence::new(false, false, false);
    pub const ALL: Presence = Presence::new(true, true, true);

    pub const fn new(image: bool, text: bool, style: bool) -> Self {
        Presence { image, text, style }
    }

    pub fn as_array(self) -> [bool; 3] {
        [self.image, self.text, self.style]
    }

    pub fn and(self, other: Presence) -> Presence {
        Presence::new(
            self.image && other.image,
            self.text && other.text,
            self.style && other.style,
        )
    }

    /// `c_i,c_t`-style label, `none` when empty.
    pub fn label(self) -> String {
        let parts: Vec<&str> = [(self.image, "c_i"), (self.text, "c_t"), (self.style, "c_s")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(",")
        }
    }
}

/// A batch of condition triples; absent slots hold the null embeddings.
#[derive(Clone, Debug)]
pub struct ConditionBundle {
    /// `(B, dim)` each.
    pub image: Tensor,
    pub text: Tensor,
    pub style: Tensor,
    pub presence: Vec<Presence>,
}

impl ConditionBundle {
    pub fn batch_size(&self) -> usize {
        self.presence.len()
    }

    /// `[c_i, c_t, c_s]`, shape `(B, 3 * dim)`.
    pub fn concat(&self) -> Result<Tensor> {
        Ok(Tensor::cat(
            &[&self.image, &self.text, &self.style],
            D::Minus1,
        )?)
    }

    /// Stacks single- or multi-sample bundles along the batch axis.
    pub fn cat(parts: &[ConditionBundle]) -> Result<ConditionBundle> {
        let grab = |f: fn(&ConditionBundle) -> &Tensor| -> Result<Tensor> {
            Ok(Tensor::cat(&parts.iter().map(f).collect::<Vec<_>>(), 0)?)
        };
        Ok(ConditionBundle {
            image: grab(|b| &b.image)?,
            text: grab(|b| &b.text)?,
            style: grab(|b| &b.style)?,
            presence: parts.iter().flat_map(|b| b.presence.clone()).collect(),
        })
    }

    /// Repeats a single-sample bundle `n` times.
    pub fn repeat(&self, n: usize) -> Result<ConditionBundle> {
        if self.batch_size() != 1 {
            return Err(Error::shape("single-sample bundle", self.batch_size()));
        }
        let rep = |t: &Tensor| t.repeat((n, 1));
        Ok(ConditionBundle {
            image: rep(&self.image)?,
            text: rep(&self.text)?,
            style: rep(&self.style)?,
            presence: vec![self.presence[0]; n],
        })
    }
}

/// Per-condition probabilities of replacing a condition with its null embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutRates {
    pub image: f64,
    pub text: f64,
    pub style: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates {
            image: 0.20,
            text: 0.10,
            style: 0.20,
        }
    }
}

impl DropoutRates {
    pub const ZERO: DropoutRates = DropoutRates {
        image: 0.0,
        text: 0.0,
        style: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for r in [self.image, self.text, self.style] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!(
                    "dropout rate {r} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Draws which conditions survive; consumes exactly three uniforms, in
    /// image, text, style order.
    pub fn draw(&self, rng: &mut impl Rng) -> Presence {
        let keep = |rate: f64, rng: &mut dyn rand::RngCore| rng.random::<f64>() >= rate;
        let image = keep(self.image, rng);
        let text = keep(self.text, rng);
        let style = keep(self.style, rng);
        Presence::new(image, text, style)
    }
}

/// Attention pooling with one learnable query and one head. Values are the
/// inputs themselves, so uniform weights reduce to the mean.
pub struct AttentionPool {
    query: Tensor,
    key: Linear,
    scale: f64,
}

impl AttentionPool {
    fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        let query = vb.get_with_hints(
            dim,
            "query",
            Init::Randn {
                mean: 0.0,
                stdev: 0.02,
            },
        )?;
        let key = candle_nn::linear_no_bias(dim, dim, vb.pp("key"))?;
        Ok(AttentionPool {
            query,
            key,
            scale: 1.0 / (dim as f64).sqrt(),
        })
    }

    /// `(B, N, dim)` -> pooled `(B, dim)` and weights `(B, N)`.
    pub fn forward_with_weights(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let keys = self.key.forward(x)?;
        let scores = keys
            .broadcast_mul(&self.query.reshape((1, 1, ()))?)?
            .sum(D::Minus1)?
            .affine(self.scale, 0.0)?;
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let pooled = weights.unsqueeze(1)?.matmul(x)?.squeeze(1)?;
        Ok((pooled, weights))
    }

    pub fn query(&self) -> &Tensor {
        &self.query
    }
}

pub struct ConditionalEncoder {
    config: EncoderConfig,
    params: ParamStore,
    pub(crate) attn_pool: AttentionPool,
    pos_emb_image: Tensor,
    pos_emb_text: Tensor,
    text_proj: Linear,
    style_table: Embedding,
    style_proj: Linear,
    null_image: Tensor,
    null_text: Tensor,
    null_style: Tensor,
    dtype: DType,
    device: Device,
}

impl ConditionalEncoder {
    pub fn new(config: EncoderConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        if config.patches == 0 || config.dim == 0 || config.num_writers == 0 {
            return Err(Error::InvalidArgument(
                "encoder sizes must be positive".into(),
            ));
        }
        let params = ParamStore::new(seed);
        let vb = params.builder(dtype, device);
        let emb_init = Init::Randn {
            mean: 0.0,
            stdev: 0.02,
        };
        let attn_pool = AttentionPool::new(config.dim, vb.pp("attn_pool"))?;
        let pos_emb_image =
            vb.get_with_hints((config.patches, config.dim), "pos_emb_image", emb_init)?;
        let pos_emb_text =
            vb.get_with_hints((config.max_text_len, config.dim), "pos_emb_text", emb_init)?;
        let text_proj = candle_nn::linear(config.dim, config.dim, vb.pp("text_proj"))?;
        let style_table = Embedding::new(
            vb.get_with_hints(
                (config.num_writers, config.style_width),
                "style_table",
                Init::Randn {
                    mean: 0.0,
                    stdev: 1.0,
                },
            )?,
            config.style_width,
        );
        let style_proj = candle_nn::linear(config.style_width, config.dim, vb.pp("style_proj"))?;
        let null_init = Init::Randn {
            mean: 0.0,
            stdev: 1.0,
        };
        let null_image = vb.get_with_hints(config.dim, "null_i", null_init)?;
        let null_text = vb.get_with_hints(config.dim, "null_t", null_init)?;
        let null_style = vb.get_with_hints(config.dim, "null_s", null_init)?;
        Ok(ConditionalEncoder {
            config,
            params,
            attn_pool,
            pos_emb_image,
            pos_emb_text,
            text_proj,
            style_table,
            style_proj,
            null_image,
            null_text,
            null_style,
            dtype,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
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

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// `(null_i, null_t, null_s)`.
    pub fn nulls(&self) -> (&Tensor, &Tensor, &Tensor) {
        (&self.null_image, &self.null_text, &self.null_style)
    }

    /// Image conditions from frame features `(B, patches, dim)`; also returns the pooling weights.
    pub fn image_condition_from_features(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, n, d) = features.dims3()?;
        if n != self.config.patches || d != self.config.dim {
            return Err(Error::shape(
                format!("(B, {}, {})", self.config.patches, self.config.dim),
                format!("{:?}", features.dims()),
            ));
        }
        let x = features
            .to_dtype(self.dtype)?
            .broadcast_add(&self.pos_emb_image.unsqueeze(0)?)?;
        self.attn_pool.forward_with_weights(&x)
    }

    /// `c_i` for a single image through the frozen recognizer.
    pub fn image_condition(&self, image: &Raster, recognizer: &RecognizerModel) -> Result<Tensor> {
        let features = recognizer.features(&[image])?;
        Ok(self
            .image_condition_from_features(&features)?
            .0
            .squeeze(0)?)
    }

    fn check_text(&self, text: &str) -> Result<()> {
        let len = text.chars().count();
        if len == 0 {
            return Err(Error::EmptyText);
        }
        if len > self.config.max_text_len {
            return Err(Error::TextTooLong {
                len,
                max: self.config.max_text_len,
            });
        }
        Ok(())
    }

    /// Projected per-character embeddings before pooling, `(len, dim)`.
    ///
    /// `classifier_weight` is `W_c` with shape `(dim, classes)`; a character's
    /// one-hot selects its column.
    pub fn text_sequence(&self, indices: &[usize], classifier_weight: &Tensor) -> Result<Tensor> {
        let (d, classes) = classifier_weight.dims2()?;
        if d != self.config.dim {
            return Err(Error::shape(
                format!("W_c with {} rows", self.config.dim),
                d,
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&k| k >= classes) {
            return Err(Error::InvalidArgument(format!(
                "class index {bad} >= {classes}"
            )));
        }
        let ids = Tensor::from_vec(
            indices.iter().map(|&k| k as u32).collect::<Vec<_>>(),
            indices.len(),
            &self.device,
        )?;
        let char_emb = classifier_weight
            .to_dtype(self.dtype)?
            .t()?
            .index_select(&ids, 0)?;
        let pos = self.pos_emb_text.narrow(0, 0, indices.len())?;
        Ok(self.text_proj.forward(&(char_emb + pos)?)?)
    }

    /// `c_t` for each text, `(B, dim)`.
    pub fn text_conditions(&self, texts: &[&str], recognizer: &RecognizerModel) -> Result<Tensor> {
        let w_c = recognizer.classifier_weight()?.detach();
        let rows = texts
            .iter()
            .map(|t| {
                self.check_text(t)?;
                let idx = recognizer.alphabet().encode(t)?;
                Ok(self.text_sequence(&idx, &w_c)?.mean(0)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&rows, 0)?)
    }

    pub fn text_condition(&self, text: &str, recognizer: &RecognizerModel) -> Result<Tensor> {
        Ok(self.text_conditions(&[text], recognizer)?.squeeze(0)?)
    }

    /// `c_s` for each writer, `(B, dim)`.
    pub fn style_conditions(&self, writer_ids: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = writer_ids.iter().find(|&&id| id >= self.config.num_writers) {
            return Err(Error::WriterOutOfRange {
                id: bad,
                count: self.config.num_writers,
            });
        }
        let ids = Tensor::from_vec(
            writer_ids.iter().map(|&k| k as u32).collect::<Vec<_>>(),
            writer_ids.len(),
            &self.device,
        )?;
        Ok(self.style_proj.forward(&self.style_table.forward(&ids)?)?)
    }

    pub fn style_condition(&self, writer_id: usize) -> Result<Tensor> {
        Ok(self.style_conditions(&[writer_id])?.squeeze(0)?)
    }

    fn null_rows(&self, null: &Tensor, batch: usize) -> Result<Tensor> {
        Ok(null.unsqueeze(0)?.repeat((batch, 1))?)
    }

    /// A bundle in which every slot is null.
    pub fn null_bundle(&self, batch: usize) -> Result<ConditionBundle> {
        Ok(ConditionBundle {
            image: self.null_rows(&self.null_image, batch)?,
            text: self.null_rows(&self.null_text, batch)?,
            style: self.null_rows(&self.null_style, batch)?,
            presence: vec![Presence::NONE; batch],
        })
    }

    /// Substitutes null embeddings wherever `presence` is false.
    pub fn mask(&self, bundle: &ConditionBundle, presence: &[Presence]) -> Result<ConditionBundle> {
        let b = bundle.batch_size();
        if presence.len() != b {
            return Err(Error::shape(format!("{b} presence flags"), presence.len()));
        }
        let presence: Vec<Presence> = bundle
            .presence
            .iter()
            .zip(presence)
            .map(|(a, &p)| a.and(p))
            .collect();
        let pick =
            |slot: &Tensor, null: &Tensor, keep: &dyn Fn(&Presence) -> bool| -> Result<Tensor> {
                let mask: Vec<u8> = presence.iter().map(|p| u8::from(keep(p))).collect();
                let mask =
                    Tensor::from_vec(mask, (b, 1), &self.device)?.broadcast_as(slot.shape())?;
                let null = null.unsqueeze(0)?.broadcast_as(slot.shape())?;
                Ok(mask.where_cond(slot, &null)?)
            };
        Ok(ConditionBundle {
            image: pick(&bundle.image, &self.null_image, &|p| p.image)?,
            text: pick(&bundle.text, &self.null_text, &|p| p.text)?,
            style: pick(&bundle.style, &self.null_style, &|p| p.style)?,
            presence,
        })
    }

    /// Full bundle from precomputed recognizer features, texts and writers.
    /// Any argument may be absent, in which case that slot is null for the whole batch.
    pub fn encode(
        &self,
        batch: usize,
        features: Option<&Tensor>,
        texts: Option<&[&str]>,
        writer_ids: Option<&[usize]>,
        recognizer: &RecognizerModel,
    ) -> Result<ConditionBundle> {
        let image = match features {
            Some(f) => self.image_condition_from_features(f)?.0,
            None => self.null_rows(&self.null_image, batch)?,
        };
        let text = match texts {
            Some(t) => self.text_conditions(t, recognizer)?,
            None => self.null_rows(&self.null_text, batch)?,
        };
        let style = match writer_ids {
            Some(w) => self.style_conditions(w)?,
            None => self.null_rows(&self.null_style, batch)?,
        };
        for t in [&image, &text, &style] {
            if t.dim(0)? != batch {
                return Err(Error::shape(format!("batch {batch}"), t.dim(0)?));
            }
        }
        let presence = Presence::new(features.is_some(), texts.is_some(), writer_ids.is_some());
        Ok(ConditionBundle {
            image,
            text,
            style,
            presence: vec![presence; batch],
        })
    }
}

/// Training-time condition dropout: per sample, each condition independently
/// falls back to its null embedding with the given probability.
pub fn apply_condition_dropout(
    encoder: &ConditionalEncoder,
    bundle: &ConditionBundle,
    rates: &DropoutRates,
    rng: &mut impl Rng,
) -> Result<ConditionBundle> {
    let draws: Vec<Presence> = (0..bundle.batch_size()).map(|_| rates.draw(rng)).collect();
    encoder.mask(bundle, &draws)
}

/// Inputs a caller may supply for conditioning.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConditionInputs<'a> {
    pub image: Option<&'a Raster>,
    pub text: Option<&'a str>,
    pub writer_id: Option<usize>,
}

/// Builds a single-sample bundle with exactly the presence pattern of `mode`.
pub fn assemble_conditions(
    mode: GenerationMode,
    inputs: ConditionInputs<'_>,
    recognizer: &RecognizerModel,
    encoder: &ConditionalEncoder,
) -> Result<ConditionBundle> {
    let want = mode.presence();
    let missing = |field| Error::MissingInput {
        mode: mode.name(),
        field,
    };
    let features = if want.image {
        let img = inputs.image.ok_or_else(|| missing("image"))?;
        Some(recognizer.features(&[img])?)
    } else {
        None
    };
    let texts = if want.text {
        Some([inputs.text.ok_or_else(|| missing("text"))?])
    } else {
        None
    };
    let writers = if want.style {
        Some([inputs.writer_id.ok_or_else(|| missing("writer_id"))?])
    } else {
        None
    };
    encoder.encode(
        1,
        features.as_ref(),
        texts.as_ref().map(|t| &t[..]),
        writers.as_ref().map(|w| &w[..]),
        recognizer,
    )
}

impl ConditionalEncoder {
    pub fn write_into(&self, ck: &mut crate::checkpoint::Checkpoint, prefix: &str) -> Result<()> {
        ck.add_params(prefix, &self.params)?;
        ck.set_meta(&format!("{prefix}config"), &self.config)
    }

    pub fn read_from(
        ck: &crate::checkpoint::Checkpoint,
        prefix: &str,
        device: &Device,
    ) -> Result<Self> {
        let config: EncoderConfig = ck.meta(&format!("{prefix}config"))?;
        let enc = ConditionalEncoder::new(config, 0, DType::F32, device)?;
        enc.params.restore(&ck.tensors, prefix)?;
        Ok(enc)
    }
}
