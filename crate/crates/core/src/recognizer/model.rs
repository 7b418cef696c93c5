use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use candle_nn::rnn::{LSTMConfig, RNN};
use candle_nn::{Conv2d, Conv2dConfig, Linear, Module, LSTM};
use serde::{Deserialize, Serialize};

use super::ctc::{decode_greedy, FrameLogits};
use crate::checkpoint::{config_hash, Checkpoint};
use crate::corpus::{Alphabet, Raster, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::error::{Error, Result};
use crate::params::ParamStore;

const INFER_CHUNK: usize = 32;

/// CRNN shape: four conv stages (2x2, 2x2, 2x1, 2x1 pooling) and a
/// bidirectional LSTM whose concatenated states are the frame features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognizerConfig {
    pub height: usize,
    pub width: usize,
    pub channels: [usize; 4],
    /// LSTM width per direction; frame features are twice this wide.
    pub hidden: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            height: IMAGE_HEIGHT,
            width: IMAGE_WIDTH,
            channels: [64, 128, 256, 256],
            hidden: 256,
        }
    }
}

impl RecognizerConfig {
    /// Number of output frames (width / 4).
    pub fn frames(&self) -> usize {
        self.width / 4
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if !self.height.is_multiple_of(16)
            || self.height == 0
            || !self.width.is_multiple_of(4)
            || self.width == 0
        {
            return Err(Error::InvalidArgument(format!(
                "recognizer input {}x{} must be a multiple of 16x4",
                self.height, self.width
            )));
        }
        if self.channels.contains(&0) || self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "recognizer widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Tensor-level outputs for a batch.
pub struct RecognizerOutput {
    /// `(B, frames, feature_dim)` post-recurrent frame features.
    pub features: Tensor,
    /// `(B, frames, classes)`.
    pub logits: Tensor,
}

struct Crnn {
    convs: Vec<Conv2d>,
    collapse: Linear,
    forward_rnn: LSTM,
    backward_rnn: LSTM,
    classifier: Linear,
}

impl Crnn {
    fn new(cfg: &RecognizerConfig, classes: usize, vb: candle_nn::VarBuilder) -> Result<Self> {
        let conv_cfg = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        let mut convs = Vec::with_capacity(4);
        let mut in_ch = 1;
        for (i, &out_ch) in cfg.channels.iter().enumerate() {
            convs.push(candle_nn::conv2d(
                in_ch,
                out_ch,
                3,
                conv_cfg,
                vb.pp(format!("conv{i}")),
            )?);
            in_ch = out_ch;
        }
        let collapsed = cfg.channels[3] * (cfg.height / 16);
        let collapse = candle_nn::linear(collapsed, cfg.hidden, vb.pp("collapse"))?;
        let forward_rnn = candle_nn::lstm(
            cfg.hidden,
            cfg.hidden,
            LSTMConfig::default(),
            vb.pp("lstm_fwd"),
        )?;
        let backward_rnn = candle_nn::lstm(
            cfg.hidden,
            cfg.hidden,
            LSTMConfig::default(),
            vb.pp("lstm_bwd"),
        )?;
        let classifier = candle_nn::linear(cfg.feature_dim(), classes, vb.pp("classifier"))?;
        Ok(Crnn {
            convs,
            collapse,
            forward_rnn,
            backward_rnn,
            classifier,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<RecognizerOutput> {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?.relu()?;
            h = if i < 2 {
                h.max_pool2d(2)?
            } else {
                h.max_pool2d_with_stride((2, 1), (2, 1))?
            };
        }
        let (b, c, hh, w) = h.dims4()?;
        let seq = h.permute((0, 3, 1, 2))?.reshape((b, w, c * hh))?;
        let seq = self.collapse.forward(&seq)?.relu()?;

        let fwd = self
            .forward_rnn
            .states_to_tensor(&self.forward_rnn.seq(&seq)?)?;
        let rev_idx = Tensor::from_vec((0..w as u32).rev().collect::<Vec<_>>(), w, seq.device())?;
        let reversed = seq.index_select(&rev_idx, 1)?;
        let bwd = self
            .backward_rnn
            .states_to_tensor(&self.backward_rnn.seq(&reversed)?)?
            .index_select(&rev_idx, 1)?;
        let features = Tensor::cat(&[fwd, bwd], D::Minus1)?;
        let logits = self.classifier.forward(&features)?;
        Ok(RecognizerOutput { features, logits })
    }
}

/// A CRNN recognizer together with its alphabet and parameters.
pub struct RecognizerModel {
    config: RecognizerConfig,
    alphabet: Alphabet,
    params: ParamStore,
    net: Crnn,
    device: Device,
    dtype: DType,
    validation_cer: Option<f64>,
}

impl RecognizerModel {
    pub fn new(
        config: RecognizerConfig,
        alphabet: Alphabet,
        seed: u64,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::new(seed);
        let net = Crnn::new(&config, alphabet.size(), params.builder(dtype, device))?;
        Ok(RecognizerModel {
            config,
            alphabet,
            params,
            net,
            device: device.clone(),
            dtype,
            validation_cer: None,
        })
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn frames(&self) -> usize {
        self.config.frames()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn validation_cer(&self) -> Option<f64> {
        self.validation_cer
    }

    pub(crate) fn set_validation_cer(&mut self, cer: f64) {
        self.validation_cer = Some(cer);
    }

    /// Classifier weights `W_c`, shape `(feature_dim, classes)`: column `k` is class `k`.
    pub fn classifier_weight(&self) -> Result<Tensor> {
        Ok(self.net.classifier.weight().t()?)
    }

    pub fn classifier_bias(&self) -> Option<&Tensor> {
        self.net.classifier.bias()
    }

    /// Batched forward on a `(B, 1, H, W)` tensor.
    pub fn forward_batch(&self, x: &Tensor) -> Result<RecognizerOutput> {
        let (_, c, h, w) = x.dims4()?;
        if (c, h, w) != (1, self.config.height, self.config.width) {
            return Err(Error::shape(
                format!("(B, 1, {}, {})", self.config.height, self.config.width),
                format!("{:?}", x.dims()),
            ));
        }
        self.net.forward(x)
    }

    fn check_image(&self, image: &Raster) -> Result<()> {
        if image.dims() != (self.config.height, self.config.width) {
            return Err(Error::shape(
                format!("{}x{}", self.config.height, self.config.width),
                format!("{}x{}", image.height(), image.width()),
            ));
        }
        Ok(())
    }

    /// Frame features `(frames, feature_dim)` and frame logits for one image.
    pub fn recognizer_forward(&self, image: &Raster) -> Result<(Tensor, FrameLogits)> {
        self.check_image(image)?;
        let out = self.forward_batch(&image.to_tensor(self.dtype, &self.device)?)?;
        let logits = FrameLogits::from_batch(&out.logits)?.remove(0);
        Ok((out.features.squeeze(0)?, logits))
    }

    /// Detached frame features for a batch of images, `(B, frames, feature_dim)`.
    pub fn features(&self, images: &[&Raster]) -> Result<Tensor> {
        let mut parts = Vec::new();
        for chunk in images.chunks(INFER_CHUNK) {
            for img in chunk {
                self.check_image(img)?;
            }
            let x = Raster::stack(chunk, self.dtype, &self.device)?;
            parts.push(self.forward_batch(&x)?.features.detach());
        }
        Ok(Tensor::cat(&parts, 0)?)
    }

    /// Mean-over-frames feature vector per image.
    pub fn pooled_features(&self, images: &[&Raster]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            let f = self.features(chunk)?.mean(1)?.to_dtype(DType::F64)?;
            out.extend(f.to_vec2::<f64>()?);
        }
        Ok(out)
    }

    /// Greedy transcriptions.
    pub fn recognize(&self, images: &[&Raster]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            for img in chunk {
                self.check_image(img)?;
            }
            let x = Raster::stack(chunk, self.dtype, &self.device)?;
            let logits = FrameLogits::from_batch(&self.forward_batch(&x)?.logits)?;
            out.extend(logits.iter().map(|l| decode_greedy(l, &self.alphabet)));
        }
        Ok(out)
    }

    pub fn write_into(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        ck.add_params(prefix, &self.params)?;
        ck.set_meta(&format!("{prefix}config"), &self.config)?;
        ck.set_meta(&format!("{prefix}alphabet"), &self.alphabet)?;
        ck.set_meta(&format!("{prefix}config_hash"), &config_hash(&self.config)?)?;
        ck.set_meta(&format!("{prefix}validation_cer"), &self.validation_cer)?;
        Ok(())
    }

    pub fn read_from(ck: &Checkpoint, prefix: &str, device: &Device) -> Result<Self> {
        let config: RecognizerConfig = ck.meta(&format!("{prefix}config"))?;
        let alphabet: Alphabet = ck.meta(&format!("{prefix}alphabet"))?;
        let stored_hash: String = ck.meta(&format!("{prefix}config_hash"))?;
        if stored_hash != config_hash(&config)? {
            return Err(Error::Format {
                what: "checkpoint",
                detail: "recognizer config hash mismatch".into(),
            });
        }
        let mut model = RecognizerModel::new(config, alphabet, 0, DType::F32, device)?;
        model.params.restore(&ck.tensors, prefix)?;
        model.validation_cer = ck.meta(&format!("{prefix}validation_cer"))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        self.write_into(&mut ck, "")?;
        ck.save(path)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::read_from(&Checkpoint::load(path, device)?, "", device)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RecognizerConfig {
        RecognizerConfig {
            height: 16,
            width: 32,
            channels: [2, 3, 4, 4],
            hidden: 5,
        }
    }

    #[test]
    fn output_shapes() {
        let m = RecognizerModel::new(tiny(), Alphabet::lowercase(), 1, DType::F32, &Device::Cpu)
            .unwrap();
        let img = Raster::filled(16, 32, 1.0);
        let (feat, logits) = m.recognizer_forward(&img).unwrap();
        assert_eq!(feat.dims(), &[8, 10]);
        assert_eq!((logits.frames(), logits.classes()), (8, 27));
        assert!(m.recognizer_forward(&Raster::filled(16, 36, 1.0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.safetensors");
        let m = RecognizerModel::new(tiny(), Alphabet::lowercase(), 1, DType::F32, &Device::Cpu)
            .unwrap();
        m.save(&path).unwrap();
        let loaded = RecognizerModel::load(&path, &Device::Cpu).unwrap();
        let img = Raster::filled(16, 32, 0.3);
        let (a, _) = m.recognizer_forward(&img).unwrap();
        let (b, _) = loaded.recognizer_forward(&img).unwrap();
        assert_eq!(a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());
        assert_eq!(loaded.alphabet(), m.alphabet());
    }
}
