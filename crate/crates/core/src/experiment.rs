//! Run configuration, experiment manifests and the two packaged experiments:
//! the condition ablation and the recognizer augmentation study.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, file_hash, Checkpoint};
use crate::cond::Presence;
use crate::corpus::{CorpusManifest, Split, TextImageSample};
use crate::diffusion::{
    train_diffusion, DiffusionModel, DiffusionStepRecord, DiffusionTrainConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{compare, MetricReport};
use crate::modes::{generate_conditioned, mix_generate, MixConfig};
use crate::recognizer::{
    evaluate, train_recognizer_on, EvalReport, RecognizerModel, StepRecord, TrainConfig,
};
use crate::rng;

pub const EXPERIMENT_FILE: &str = "experiment.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusBuildConfig {
    pub vocab: PathBuf,
    pub writers: usize,
    pub per_pair: usize,
}

impl Default for CorpusBuildConfig {
    fn default() -> Self {
        CorpusBuildConfig {
            vocab: PathBuf::from("data/vocab50.txt"),
            writers: 5,
            per_pair: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Test-split samples generated and scored per variant.
    pub eval_samples: usize,
    /// Diffusion steps per variant; `None` uses the diffusion budget.
    pub steps: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            eval_samples: 250,
            steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub mix_total: usize,
    pub synthesis_fraction: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            mix_total: 5_000,
            synthesis_fraction: 0.5,
        }
    }
}

/// Everything a run needs. Relative paths are resolved against the directory of
/// the file they were loaded from; the top-level seed overrides section seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    pub recognizer_ckpt: PathBuf,
    /// Recognizer trained on a disjoint seed, used only for scoring.
    pub heldout_ckpt: PathBuf,
    pub diffusion_ckpt: PathBuf,
    pub corpus_build: CorpusBuildConfig,
    pub recognizer: TrainConfig,
    pub diffusion: DiffusionTrainConfig,
    pub ablation: AblationConfig,
    pub augmentation: AugmentationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            corpus: PathBuf::from("corpus"),
            recognizer_ckpt: PathBuf::from("recognizer.safetensors"),
            heldout_ckpt: PathBuf::from("heldout.safetensors"),
            diffusion_ckpt: PathBuf::from("diffusion.safetensors"),
            corpus_build: CorpusBuildConfig::default(),
            recognizer: TrainConfig::default(),
            diffusion: DiffusionTrainConfig::default(),
            ablation: AblationConfig::default(),
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format {
            what: "config",
            detail: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format {
            what: "config",
            detail: e.to_string(),
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.recognizer_ckpt,
            &mut self.heldout_ckpt,
            &mut self.diffusion_ckpt,
            &mut self.corpus_build.vocab,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.recognizer.steps == 0 || self.diffusion.steps == 0 {
            return bad("training budgets must be at least 1 step");
        }
        if self.recognizer.batch_size == 0 || self.diffusion.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.corpus_build.writers == 0 || self.corpus_build.per_pair == 0 {
            return bad("corpus needs at least one writer and one render per pair");
        }
        self.diffusion.dropout.validate()?;
        self.recognizer.model.validate()?;
        self.diffusion.schedule.build()?;
        MixConfig {
            total: self.augmentation.mix_total,
            synthesis_fraction: self.augmentation.synthesis_fraction,
            seed: self.seed,
        }
        .counts()?;
        Ok(())
    }

    /// Recognizer settings with the run seed.
    pub fn recognizer_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.recognizer.clone()
        }
    }

    /// Held-out recognizer settings: same budget, disjoint seed.
    pub fn heldout_train(&self) -> TrainConfig {
        TrainConfig {
            seed: rng::derive_seed(self.seed, &[0x484f_4c44]),
            ..self.recognizer.clone()
        }
    }

    pub fn diffusion_train(&self) -> DiffusionTrainConfig {
        DiffusionTrainConfig {
            seed: self.seed,
            ..self.diffusion.clone()
        }
    }
}

/// A produced file and its content hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the stage's output directory.
    pub path: String,
    pub sha256: String,
}

/// Record of one stage: configuration, hashes of everything written and metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub stage: String,
    pub seed: u64,
    pub config: RunConfig,
    pub config_hash: String,
    /// Hash over the package version and the configuration.
    pub content_hash: String,
    pub artifacts: Vec<Artifact>,
    pub metrics: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ExperimentManifest {
    pub fn new(stage: &str, config: &RunConfig) -> Result<Self> {
        let config_hash = config_hash(config)?;
        let content_hash = config_hash_of_code(&config_hash)?;
        Ok(ExperimentManifest {
            stage: stage.into(),
            seed: config.seed,
            config: config.clone(),
            config_hash,
            content_hash,
            artifacts: Vec::new(),
            metrics: serde_json::Value::Null,
            failure: None,
        })
    }

    /// Hashes every file under `dir` except the manifest itself, in path order.
    pub fn collect_artifacts(&mut self, dir: &Path) -> Result<()> {
        let mut files = Vec::new();
        walk(dir, &mut files)?;
        files.sort();
        self.artifacts = files
            .into_iter()
            .filter(|p| p.file_name().is_some_and(|n| n != EXPERIMENT_FILE))
            .map(|p| {
                Ok(Artifact {
                    path: p
                        .strip_prefix(dir)
                        .expect("walked under dir")
                        .to_string_lossy()
                        .replace('\\', "/"),
                    sha256: file_hash(&p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Collects artifacts under `dir` and writes `experiment.json` there.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.collect_artifacts(dir)?;
        let path = dir.join(EXPERIMENT_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn config_hash_of_code(config_hash_hex: &str) -> Result<String> {
    config_hash(&(
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        config_hash_hex,
    ))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// In-memory copy of a recognizer through its checkpoint form.
pub fn clone_recognizer(model: &RecognizerModel) -> Result<RecognizerModel> {
    let mut ck = Checkpoint::new();
    model.write_into(&mut ck, "")?;
    RecognizerModel::read_from(&ck, "", model.device())
}

/// The five condition sets compared by the ablation.
pub const ABLATION_ROWS: [Presence; 5] = [
    Presence::NONE,
    Presence::new(true, false, false),
    Presence::new(false, true, false),
    Presence::new(true, true, false),
    Presence::ALL,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub conditions: Presence,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A named qualitative ordering and whether it held (`None` if a row is missing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub holds: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn report(&self, conditions: Presence) -> Option<&MetricReport> {
        self.rows
            .iter()
            .find(|r| r.conditions == conditions)
            .and_then(|r| r.report.as_ref())
    }

    /// The orderings the ablation is expected to reproduce.
    pub fn orderings(&self) -> Vec<OrderingCheck> {
        let fid = |p: Presence| self.report(p).map(|r| r.fid);
        let ssim = |p: Presence| self.report(p).map(|r| r.ssim);
        let c_i = Presence::new(true, false, false);
        let c_t = Presence::new(false, true, false);
        let worst = ABLATION_ROWS[1..]
            .iter()
            .map(|&p| fid(p))
            .collect::<Option<Vec<f64>>>()
            .zip(fid(Presence::NONE))
            .map(|(others, none)| others.iter().all(|&f| none > f));
        let pair = |name: &str, v: Option<(f64, f64)>, f: fn(f64, f64) -> bool| OrderingCheck {
            name: name.into(),
            holds: v.map(|(a, b)| f(a, b)),
        };
        vec![
            OrderingCheck {
                name: "rFID(none) is the worst row".into(),
                holds: worst,
            },
            pair(
                "rFID(none) > rFID(c_t)",
                fid(Presence::NONE).zip(fid(c_t)),
                |a, b| a > b,
            ),
            pair(
                "rFID(all) <= rFID(c_i)",
                fid(Presence::ALL).zip(fid(c_i)),
                |a, b| a <= b,
            ),
            pair(
                "SSIM(all) >= SSIM(none)",
                ssim(Presence::ALL).zip(ssim(Presence::NONE)),
                |a, b| a >= b,
            ),
        ]
    }
}

fn dir_label(p: Presence) -> String {
    p.label().replace(',', "+")
}

/// Trains one diffusion model per condition set and scores each on the test split.
///
/// `recognizer` supplies the conditions; `evaluator` (trained on a disjoint
/// seed) computes rFID and content CER. A failing row records its error and the
/// remaining rows still run.
pub fn run_condition_ablation(
    config: &RunConfig,
    corpus: &CorpusManifest,
    recognizer: &RecognizerModel,
    evaluator: &RecognizerModel,
    out_dir: &Path,
    device: &Device,
    log: &mut dyn FnMut(&str, &DiffusionStepRecord),
) -> Result<AblationTable> {
    let test = corpus.load_split(Split::Test)?;
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let eval: Vec<TextImageSample> = test
        .into_iter()
        .take(config.ablation.eval_samples)
        .collect();
    let mut rows = Vec::new();
    for conditions in ABLATION_ROWS {
        let label = conditions.label();
        let dir = out_dir.join(dir_label(conditions));
        let mut tcfg = DiffusionTrainConfig {
            conditions,
            ..config.diffusion_train()
        };
        if let Some(steps) = config.ablation.steps {
            tcfg.steps = steps;
        }
        let outcome = (|| -> Result<(f64, MetricReport)> {
            let out = train_diffusion(
                corpus,
                clone_recognizer(recognizer)?,
                &tcfg,
                Some(&dir),
                device,
                &mut |r| log(&label, r),
            )?;
            let images = generate_conditioned(
                &out.model,
                &eval,
                conditions,
                rng::derive_seed(config.seed, &[0x4142_4c41]),
            )?;
            let gen: Vec<TextImageSample> = eval
                .iter()
                .zip(images)
                .map(|(s, image)| TextImageSample { image, ..s.clone() })
                .collect();
            Ok((out.last_loss, compare(&eval, &gen, evaluator)?))
        })();
        rows.push(match outcome {
            Ok((loss, report)) => AblationRow {
                conditions,
                label,
                final_loss: Some(loss),
                report: Some(report),
                error: None,
            },
            Err(e) => AblationRow {
                conditions,
                label,
                final_loss: None,
                report: None,
                error: Some(format!("{}: {e}", e.kind())),
            },
        });
    }
    Ok(AblationTable { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub baseline: EvalReport,
    pub augmented: EvalReport,
    /// `augmented − baseline`; negative means the generated data helped.
    pub delta_cer: f64,
    pub delta_wer: f64,
    pub mix_records: usize,
    pub mix_manifest_sha256: String,
}

/// Trains a recognizer on real data and another on real plus generated MIX data,
/// with the same seed and budget, and scores both on the test split.
pub fn run_augmentation_study(
    config: &RunConfig,
    corpus: &CorpusManifest,
    model: &DiffusionModel,
    out_dir: &Path,
    device: &Device,
    log: &mut dyn FnMut(&str, &StepRecord),
) -> Result<AugmentationReport> {
    let mix_cfg = MixConfig {
        total: config.augmentation.mix_total,
        synthesis_fraction: config.augmentation.synthesis_fraction,
        seed: config.seed,
    };
    let mix_dir = out_dir.join("mix");
    let mix = mix_generate(corpus, model, &mix_cfg, &mix_dir, &mut |_, _| {})?;
    let generated = mix.load_records(&mix.records.iter().collect::<Vec<_>>())?;

    let train = corpus.load_split(Split::Train)?;
    let validation = corpus.load_split(Split::Validation)?;
    let test = corpus.load_split(Split::Test)?;
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let tcfg = config.recognizer_train();
    let baseline = train_recognizer_on(
        &train,
        &validation,
        &corpus.alphabet,
        &tcfg,
        device,
        &mut |r| log("baseline", r),
    )?;
    let mut augmented_train = train;
    augmented_train.extend(generated);
    let augmented = train_recognizer_on(
        &augmented_train,
        &validation,
        &corpus.alphabet,
        &tcfg,
        device,
        &mut |r| log("augmented", r),
    )?;
    baseline.model.save(&out_dir.join("baseline.safetensors"))?;
    augmented
        .model
        .save(&out_dir.join("augmented.safetensors"))?;
    let b = evaluate(&baseline.model, &test)?;
    let a = evaluate(&augmented.model, &test)?;
    Ok(AugmentationReport {
        delta_cer: a.cer - b.cer,
        delta_wer: a.wer - b.wer,
        baseline: b,
        augmented: a,
        mix_records: mix.records.len(),
        mix_manifest_sha256: file_hash(&mix.manifest_path())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_recipe() {
        let c = RunConfig::default();
        assert_eq!(c.recognizer.batch_size, 64);
        assert_eq!(c.diffusion.batch_size, 256);
        let o = &c.diffusion.optimizer;
        assert_eq!(
            (o.beta1, o.beta2, o.weight_decay, o.lr),
            (0.9, 0.999, 0.2, 1e-4)
        );
        let d = c.diffusion.dropout;
        assert_eq!((d.image, d.text, d.style), (0.2, 0.1, 0.2));
        assert_eq!(c.diffusion.denoiser.cond_dim, 512);
        c.validate().unwrap();
    }

    #[test]
    fn config_round_trip_is_idempotent() {
        let base = Path::new("/work/run");
        let text = "seed = 7\ncorpus = \"data/corpus\"\n[diffusion]\nbatch_size = 64\n";
        let cfg = RunConfig::from_toml(text, base).unwrap();
        assert_eq!(cfg.corpus, base.join("data/corpus"));
        assert_eq!(cfg.diffusion.batch_size, 64);
        assert_eq!(cfg.diffusion_train().seed, 7);
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml().unwrap(), cfg.to_toml().unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = Path::new("/tmp");
        assert!(RunConfig::from_toml("[recognizer]\nsteps = 0\n", base).is_err());
        assert!(RunConfig::from_toml(
            "[diffusion.dropout]\nimage = 1.5\ntext = 0.1\nstyle = 0.2\n",
            base
        )
        .is_err());
        assert!(RunConfig::from_toml("[augmentation]\nmix_total = 5\n", base).is_err());
        assert!(matches!(
            RunConfig::from_toml("seed = \"x\"", base),
            Err(Error::Format { what: "config", .. })
        ));
    }

    #[test]
    fn manifest_hashes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.txt"), b"alpha").unwrap();
        fs::write(dir.path().join("sub/b.txt"), b"beta").unwrap();
        let mut m = ExperimentManifest::new("test", &RunConfig::default()).unwrap();
        m.write(dir.path()).unwrap();
        let paths: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, vec!["a.txt", "sub/b.txt"]);
        let loaded: ExperimentManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(EXPERIMENT_FILE)).unwrap())
                .unwrap();
        assert_eq!(loaded, m);
        let again = ExperimentManifest::new("test", &RunConfig::default()).unwrap();
        assert_eq!(again.content_hash, m.content_hash);
    }

    #[test]
    fn orderings_need_all_rows() {
        let report = |fid: f64, ssim: f64| MetricReport {
            fid,
            ssim,
            rmse: 0.0,
            content_cer: 0.0,
            n_real: 1,
            n_gen: 1,
            config_hash: String::new(),
        };
        let fids = [9.0, 5.0, 4.0, 3.0, 2.0];
        let rows = ABLATION_ROWS
            .iter()
            .zip(fids)
            .map(|(&p, f)| AblationRow {
                conditions: p,
                label: p.label(),
                final_loss: None,
                report: Some(report(f, 1.0 / f)),
                error: None,
            })
            .collect();
        let table = AblationTable { rows };
        assert!(table.orderings().iter().all(|o| o.holds == Some(true)));
        let partial = AblationTable {
            rows: table.rows[1..].to_vec(),
        };
        assert_eq!(partial.orderings()[0].holds, None);
        let labels: Vec<String> = ABLATION_ROWS.iter().map(|p| p.label()).collect();
        assert_eq!(labels, ["none", "c_i", "c_t", "c_i,c_t", "c_i,c_t,c_s"]);
    }
}
