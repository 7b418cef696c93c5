//! Miniature models shared by unit tests.

use candle_core::{DType, Device};

use crate::cond::{ConditionalEncoder, EncoderConfig};
use crate::corpus::{render_word, Alphabet, Raster, WriterStyle};
use crate::recognizer::{RecognizerConfig, RecognizerModel};

pub const H: usize = 16;
pub const W: usize = 32;

pub fn tiny_recognizer(dtype: DType) -> RecognizerModel {
    let cfg = RecognizerConfig {
        height: H,
        width: W,
        channels: [2, 3, 4, 4],
        hidden: 3,
    };
    RecognizerModel::new(cfg, Alphabet::lowercase(), 11, dtype, &Device::Cpu).unwrap()
}

pub fn tiny_encoder(rec: &RecognizerModel, dtype: DType) -> ConditionalEncoder {
    let cfg = EncoderConfig {
        style_width: 4,
        ..EncoderConfig::for_recognizer(rec, 3)
    };
    ConditionalEncoder::new(cfg, 5, dtype, &Device::Cpu).unwrap()
}

/// A full-size render shrunk to the miniature canvas by block averaging.
pub fn tiny_image(text: &str, writer: usize) -> Raster {
    let style = WriterStyle::preset(writer, 3);
    let full = render_word(text, &style, 7, &Alphabet::lowercase())
        .unwrap()
        .image;
    let (fh, fw) = full.dims();
    let (sy, sx) = (fh / H, fw / W);
    let mut data = vec![0.0f32; H * W];
    for y in 0..H {
        for x in 0..W {
            let mut acc = 0.0;
            for dy in 0..sy {
                for dx in 0..sx {
                    acc += full.get(y * sy + dy, x * sx + dx);
                }
            }
            data[y * W + x] = acc / (sy * sx) as f32;
        }
    }
    Raster::new(H, W, data).unwrap()
}

pub fn tiny_denoiser(cond_dim: usize, dtype: DType) -> crate::diffusion::DenoiserModel {
    let cfg = crate::diffusion::DenoiserConfig {
        height: H,
        width: W,
        base: 4,
        mults: vec![1, 2],
        groups: 2,
        cond_dim,
    };
    crate::diffusion::DenoiserModel::new(cfg, 21, dtype, &Device::Cpu).unwrap()
}

/// Untrained miniature generator with a 5-step schedule and 3 writers.
pub fn tiny_model() -> crate::diffusion::DiffusionModel {
    let recognizer = tiny_recognizer(DType::F32);
    let encoder = tiny_encoder(&recognizer, DType::F32);
    let denoiser = tiny_denoiser(encoder.dim(), DType::F32);
    crate::diffusion::DiffusionModel {
        recognizer,
        encoder,
        denoiser,
        schedule: crate::diffusion::make_schedule(5, crate::diffusion::ScheduleKind::Cosine)
            .unwrap(),
        writers: WriterStyle::presets(3, 1),
        conditions: crate::cond::Presence::ALL,
        training_steps: 0,
    }
}

/// A miniature corpus on disk: `words` x 3 writers, all in the train split.
pub fn tiny_corpus_on_disk(dir: &std::path::Path, words: &[&str]) -> crate::corpus::CorpusManifest {
    use crate::corpus::{CorpusManifest, Source, Split, TextImageSample};
    let mut m = CorpusManifest::new(dir, Alphabet::lowercase(), WriterStyle::presets(3, 1), 1);
    m.ensure_image_dir().unwrap();
    let mut k = 0;
    for w in words {
        for writer in 0..3 {
            let s = TextImageSample {
                image: tiny_image(w, writer),
                text: w.to_string(),
                writer_id: Some(writer),
                source: Source::Real,
            };
            m.push_sample(k, &s, Split::Train).unwrap();
            k += 1;
        }
    }
    m.write().unwrap();
    m
}
