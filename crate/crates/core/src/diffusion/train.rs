//! Joint training of the denoiser and the conditional encoder against a frozen
//! recognizer.

use std::fs;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample, DenoiserConfig, DenoiserModel, DiffusionModel, SampleOptions, ScheduleConfig};
use crate::cond::{ConditionalEncoder, DropoutRates, EncoderConfig, Presence};
use crate::corpus::{contact_sheet, CorpusManifest, Raster, Split, TextImageSample, WriterStyle};
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, Trainer};
use crate::recognizer::RecognizerModel;
use crate::rng;

pub const CHECKPOINT_FILE: &str = "diffusion.safetensors";
pub const METRICS_FILE: &str = "metrics.jsonl";
const SAMPLE_DIR: &str = "samples";
const PREVIEW_COUNT: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub batch_size: usize,
    /// Optimizer steps.
    pub steps: usize,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub dropout: DropoutRates,
    /// Conditions the model may use; the rest are always null.
    pub conditions: Presence,
    /// `height`, `width` and `cond_dim` are overridden by the recognizer's shapes.
    pub denoiser: DenoiserConfig,
    pub style_width: usize,
    pub optimizer: OptimizerConfig,
    /// Steps between preview grids (`0` = never).
    pub sample_every: usize,
    /// Steps between checkpoints written to the output directory.
    pub checkpoint_every: usize,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            batch_size: 256,
            steps: 50_000,
            seed: 0,
            schedule: ScheduleConfig::default(),
            dropout: DropoutRates::default(),
            conditions: Presence::ALL,
            denoiser: DenoiserConfig::default(),
            style_width: 512,
            optimizer: OptimizerConfig::default(),
            sample_every: 5_000,
            checkpoint_every: 1_000,
        }
    }
}

/// One line of the diffusion metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionStepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct DiffusionOutcome {
    pub model: DiffusionModel,
    /// Mean loss over the first tenth of training (at most 100 steps).
    pub first_loss: f64,
    /// Mean loss over the last tenth of training (at most 100 steps).
    pub last_loss: f64,
    pub history: Vec<DiffusionStepRecord>,
}

/// Trains on the corpus's train split. With `out_dir`, writes the metrics log,
/// periodic checkpoints and preview grids there.
pub fn train_diffusion(
    corpus: &CorpusManifest,
    recognizer: RecognizerModel,
    config: &DiffusionTrainConfig,
    out_dir: Option<&Path>,
    device: &Device,
    log: &mut dyn FnMut(&DiffusionStepRecord),
) -> Result<DiffusionOutcome> {
    let train = corpus.load_split(Split::Train)?;
    train_diffusion_on(
        &train,
        &corpus.writers,
        recognizer,
        config,
        out_dir,
        device,
        log,
    )
}

pub fn train_diffusion_on(
    train: &[TextImageSample],
    writers: &[WriterStyle],
    recognizer: RecognizerModel,
    config: &DiffusionTrainConfig,
    out_dir: Option<&Path>,
    device: &Device,
    log: &mut dyn FnMut(&DiffusionStepRecord),
) -> Result<DiffusionOutcome> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "steps and batch_size must be positive".into(),
        ));
    }
    if writers.is_empty() {
        return Err(Error::InvalidArgument("writer table is empty".into()));
    }
    config.dropout.validate()?;
    let rcfg = recognizer.config().clone();
    for s in train {
        if s.image.dims() != (rcfg.height, rcfg.width) {
            return Err(Error::shape(
                format!("{}x{}", rcfg.height, rcfg.width),
                format!("{}x{}", s.image.height(), s.image.width()),
            ));
        }
        recognizer.alphabet().encode(&s.text)?;
    }
    let enc_cfg = EncoderConfig {
        style_width: config.style_width,
        ..EncoderConfig::for_recognizer(&recognizer, writers.len())
    };
    let encoder = ConditionalEncoder::new(
        enc_cfg,
        rng::derive_seed(config.seed, &[0x0045_4e43]),
        DType::F32,
        device,
    )?;
    let dcfg = DenoiserConfig {
        height: rcfg.height,
        width: rcfg.width,
        cond_dim: encoder.dim(),
        ..config.denoiser.clone()
    };
    let denoiser = DenoiserModel::new(
        dcfg,
        rng::derive_seed(config.seed, &[0x554e_4554]),
        DType::F32,
        device,
    )?;
    let schedule = config.schedule.build()?;

    let mut vars = denoiser.params().all_vars();
    vars.extend(encoder.params().all_vars());
    let mut trainer = Trainer::new(vars, &config.optimizer, config.steps)?;
    let mut stream = rng::stream(rng::derive_seed(config.seed, &[0x4449_4646]));

    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir.join(SAMPLE_DIR)).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            Some((
                fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
                path,
            ))
        }
        None => None,
    };

    let mut model = DiffusionModel {
        recognizer,
        encoder,
        denoiser,
        schedule,
        writers: writers.to_vec(),
        conditions: config.conditions,
        training_steps: 0,
    };
    let mut history = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| stream.random_range(0..train.len()))
            .collect();
        let batch: Vec<&TextImageSample> = idx.iter().map(|&i| &train[i]).collect();
        let loss = batch_loss(&model, &batch, config, &mut stream).map_err(|e| match e {
            Error::NonFinite(what) => Error::Diverged {
                step,
                detail: format!("{what} is not finite; last good checkpoint kept"),
            },
            other => other,
        })?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let lr = trainer.step(&loss)?;
        model.training_steps = step;
        let record = DiffusionStepRecord {
            step,
            loss: value,
            lr,
        };
        if let Some((file, path)) = metrics.as_mut() {
            writeln!(file, "{}", serde_json::to_string(&record)?)
                .map_err(|e| Error::io(&*path, e))?;
        }
        log(&record);
        history.push(record);

        if let Some(dir) = out_dir {
            if step % config.checkpoint_every.max(1) == 0 || step == config.steps {
                save_atomically(&model, &dir.join(CHECKPOINT_FILE))?;
            }
            if config.sample_every > 0 && (step % config.sample_every == 0 || step == config.steps)
            {
                let previews = &train[..PREVIEW_COUNT.min(train.len())];
                let grid = preview(&model, previews, config.seed)?;
                grid.save_png(&dir.join(SAMPLE_DIR).join(format!("step_{step:06}.png")))?;
            }
        }
    }

    let window = (config.steps / 10).clamp(1, 100);
    let mean = |r: &[DiffusionStepRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    Ok(DiffusionOutcome {
        first_loss: mean(&history[..window]),
        last_loss: mean(&history[history.len() - window..]),
        model,
        history,
    })
}

/// Conditions for a batch of real samples with the model's allowed set; style is
/// null for samples without a writer.
pub(crate) fn batch_bundle(
    model: &DiffusionModel,
    batch: &[&TextImageSample],
    allowed: Presence,
) -> Result<crate::cond::ConditionBundle> {
    let b = batch.len();
    let images: Vec<&Raster> = batch.iter().map(|s| &s.image).collect();
    let features = if allowed.image {
        Some(model.recognizer.features(&images)?)
    } else {
        None
    };
    let texts: Vec<&str> = batch.iter().map(|s| s.text.as_str()).collect();
    let writer_ids: Vec<usize> = batch.iter().map(|s| s.writer_id.unwrap_or(0)).collect();
    let bundle = model.encoder.encode(
        b,
        features.as_ref(),
        allowed.text.then_some(&texts[..]),
        allowed.style.then_some(&writer_ids[..]),
        &model.recognizer,
    )?;
    let has_writer: Vec<Presence> = batch
        .iter()
        .map(|s| Presence::new(true, true, s.writer_id.is_some()))
        .collect();
    model.encoder.mask(&bundle, &has_writer)
}

fn batch_loss(
    model: &DiffusionModel,
    batch: &[&TextImageSample],
    config: &DiffusionTrainConfig,
    stream: &mut rng::Stream,
) -> Result<candle_core::Tensor> {
    let bundle = batch_bundle(model, batch, config.conditions)?;
    let bundle =
        crate::cond::apply_condition_dropout(&model.encoder, &bundle, &config.dropout, stream)?;
    let images: Vec<&Raster> = batch.iter().map(|s| &s.image).collect();
    let x0 = Raster::stack(&images, DType::F32, model.device())?;
    super::training_loss(&model.denoiser, &x0, &bundle, &model.schedule, stream)
}

fn save_atomically(model: &DiffusionModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    model.save(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reference images above their generated counterparts.
fn preview(model: &DiffusionModel, samples: &[TextImageSample], seed: u64) -> Result<Raster> {
    let refs: Vec<&TextImageSample> = samples.iter().collect();
    let bundle = batch_bundle(model, &refs, model.conditions)?;
    let mut rngs: Vec<rng::Stream> = (0..samples.len())
        .map(|k| rng::stream(rng::derive_seed(seed, &[0x5052_4556, k as u64])))
        .collect();
    let out = sample(
        &model.denoiser,
        &model.encoder,
        &bundle,
        &model.schedule,
        &mut rngs,
        SampleOptions::default(),
    )?;
    let mut tiles: Vec<Raster> = samples.iter().map(|s| s.image.clone()).collect();
    tiles.extend(Raster::unstack(&out)?);
    contact_sheet(&tiles, samples.len())
}
