//! Conditional text-image generation with denoising diffusion.
//!
//! The pipeline: render a synthetic multi-writer corpus ([`corpus`]), train a CTC
//! recognizer on it ([`recognizer`]), derive image/text/style conditions from that
//! recognizer ([`cond`]), train a condition-fused DDPM ([`diffusion`]), generate
//! in four modes ([`modes`]) and score the results ([`metrics`]). [`experiment`]
//! packages the condition ablation and the recognizer augmentation study.

pub mod checkpoint;
pub mod cond;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod modes;
pub mod optim;
pub mod params;
pub mod recognizer;
pub mod rng;
#[cfg(test)]
mod testutil;

pub use cond::{
    apply_condition_dropout, assemble_conditions, ConditionBundle, ConditionInputs,
    ConditionalEncoder, DropoutRates, EncoderConfig, Presence,
};
pub use corpus::{
    build_corpus, encode_label, render_word, Alphabet, CorpusManifest, ManifestRecord, Raster,
    Source, Split, TextImageSample, WriterStyle,
};
pub use diffusion::{
    make_schedule, DenoiserConfig, DenoiserModel, DiffusionModel, DiffusionTrainConfig,
    NoiseSchedule, SampleOptions, ScheduleKind,
};
pub use error::{Error, Result};
pub use experiment::{ExperimentManifest, RunConfig};
pub use metrics::{content_validity, feature_fid, rmse, ssim, MetricReport};
pub use modes::{generate, mix_generate, GenerationMode, GenerationRequest, MixConfig};
pub use recognizer::{cer, decode_greedy, wer, FrameLogits, RecognizerConfig, RecognizerModel};

/// Compute device for models; everything here runs on [`Device::Cpu`].
pub use candle_core::Device;
