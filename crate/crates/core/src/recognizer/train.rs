use candle_core::{DType, Device};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ctc::ctc_loss;
use super::model::{RecognizerConfig, RecognizerModel};
use super::score::{mean_cer, wer};
use crate::corpus::{Alphabet, CorpusManifest, Raster, Split, TextImageSample};
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, Trainer};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Optimizer steps.
    pub steps: usize,
    pub eval_every: usize,
    /// Cap on validation samples scored per evaluation (`None` = all).
    pub eval_limit: Option<usize>,
    pub seed: u64,
    pub model: RecognizerConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            steps: 20_000,
            eval_every: 500,
            eval_limit: None,
            seed: 0,
            model: RecognizerConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cer: f64,
    pub wer: f64,
    pub n: usize,
}

/// One line of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_cer: Option<f64>,
}

pub struct TrainOutcome {
    /// Weights with the best validation CER seen.
    pub model: RecognizerModel,
    pub best_validation_cer: f64,
    pub first_loss: f64,
    pub last_loss: f64,
    pub history: Vec<StepRecord>,
}

/// Scores greedy transcriptions of `samples` against their labels.
pub fn evaluate(model: &RecognizerModel, samples: &[TextImageSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let images: Vec<&Raster> = samples.iter().map(|s| &s.image).collect();
    let preds = model.recognize(&images)?;
    let refs: Vec<String> = samples.iter().map(|s| s.text.clone()).collect();
    Ok(EvalReport {
        cer: mean_cer(&preds, &refs)?,
        wer: wer(&preds, &refs)?,
        n: samples.len(),
    })
}

/// Trains on a corpus's train split, selecting weights on its validation split.
pub fn train_recognizer(
    corpus: &CorpusManifest,
    config: &TrainConfig,
    device: &Device,
    log: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let train = corpus.load_split(Split::Train)?;
    let validation = corpus.load_split(Split::Validation)?;
    train_recognizer_on(&train, &validation, &corpus.alphabet, config, device, log)
}

pub fn train_recognizer_on(
    train: &[TextImageSample],
    validation: &[TextImageSample],
    alphabet: &Alphabet,
    config: &TrainConfig,
    device: &Device,
    log: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if validation.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "steps and batch_size must be positive".into(),
        ));
    }
    let targets: Vec<Vec<usize>> = train
        .iter()
        .map(|s| alphabet.encode(&s.text))
        .collect::<Result<_>>()?;
    let val_subset = match config.eval_limit {
        Some(n) => &validation[..n.min(validation.len())],
        None => validation,
    };

    let mut model = RecognizerModel::new(
        config.model.clone(),
        alphabet.clone(),
        rng::derive_seed(config.seed, &[0x5245_4353]),
        DType::F32,
        device,
    )?;
    let mut trainer = Trainer::new(model.params().all_vars(), &config.optimizer, config.steps)?;
    let mut batches = rng::stream(rng::derive_seed(config.seed, &[0x4241_5443]));

    let mut best: Option<(f64, _)> = None;
    let mut history = Vec::new();
    let mut first_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for step in 1..=config.steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| batches.random_range(0..train.len()))
            .collect();
        let images: Vec<&Raster> = idx.iter().map(|&i| &train[i].image).collect();
        let x = Raster::stack(&images, DType::F32, device)?;
        let tgt: Vec<Vec<usize>> = idx.iter().map(|&i| targets[i].clone()).collect();
        let out = model.forward_batch(&x)?;
        let loss = ctc_loss(&out.logits, &tgt, alphabet.blank())?;
        let loss_value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("ctc loss {loss_value}"),
            });
        }
        let lr = trainer.step(&loss)?;
        if step == 1 {
            first_loss = loss_value;
        }
        last_loss = loss_value;

        let mut record = StepRecord {
            step,
            loss: loss_value,
            lr,
            validation_cer: None,
        };
        if step % config.eval_every.max(1) == 0 || step == config.steps {
            let report = evaluate(&model, val_subset)?;
            record.validation_cer = Some(report.cer);
            if best.as_ref().is_none_or(|(c, _)| report.cer < *c) {
                best = Some((report.cer, model.params().snapshot()?));
            }
        }
        log(&record);
        history.push(record);
    }

    let (best_cer, weights) = best.expect("final step always evaluates");
    model.params().restore(&weights, "")?;
    model.set_validation_cer(best_cer);
    Ok(TrainOutcome {
        model,
        best_validation_cer: best_cer,
        first_loss,
        last_loss,
        history,
    })
}
