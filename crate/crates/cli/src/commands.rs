//! Subcommand handlers.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use inkdiff_core::corpus::{contact_sheet, read_vocab, Split};
use inkdiff_core::diffusion::{train_diffusion, DiffusionModel, SampleOptions};
use inkdiff_core::experiment::{
    run_augmentation_study, run_condition_ablation, ExperimentManifest, RunConfig,
};
use inkdiff_core::modes::{
    generate_observed, mix_generate, GenerationMode, GenerationRequest, MixConfig,
};
use inkdiff_core::recognizer::{evaluate, train_recognizer, RecognizerModel};
use inkdiff_core::{
    build_corpus, metrics, Alphabet, CorpusManifest, Device, Error, Raster, TextImageSample,
    WriterStyle,
};
use serde::Serialize;

use crate::args::{
    Command, Common, CorpusCmd, DiffusionCmd, ExperimentCmd, GenerateArgs, MetricsCmd, MixArgs,
    RecognizerCmd,
};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const SHEET_FILE: &str = "contact_sheet.png";
const SHEET_MAX: usize = 32;
const SHEET_COLS: usize = 4;

/// Effective configuration plus where outputs go.
struct Ctx {
    config: RunConfig,
    from_file: bool,
    out: Option<PathBuf>,
    device: Device,
}

impl Ctx {
    fn new(common: Common) -> Result<Self> {
        let (mut config, from_file) = match &common.config {
            Some(path) => (RunConfig::load(path)?, true),
            None => {
                let mut c = RunConfig::default();
                c.resolve_paths(&std::env::current_dir().map_err(|e| Error::Io {
                    path: ".".into(),
                    source: e,
                })?);
                (c, false)
            }
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        Ok(Ctx {
            config,
            from_file,
            out: common.out,
            device: Device::Cpu,
        })
    }

    /// The flag value, else the config value when a config file was given.
    fn pick(
        &self,
        flag: Option<PathBuf>,
        from_config: &Path,
        name: &'static str,
    ) -> Result<PathBuf> {
        match flag {
            Some(p) => Ok(p),
            None if self.from_file => Ok(from_config.to_path_buf()),
            None => Err(CliError::MissingFlag(name)),
        }
    }

    fn out(&self) -> Result<PathBuf> {
        let dir = self.out.clone().ok_or(CliError::MissingFlag("--out"))?;
        fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        Ok(dir)
    }

    fn finish(&self, stage: &str, dir: &Path, metrics: impl Serialize) -> Result<()> {
        let mut manifest = ExperimentManifest::new(stage, &self.config)?;
        manifest.metrics = serde_json::to_value(&metrics)?;
        manifest.write(dir)?;
        Ok(())
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Appends JSON lines to a file.
struct JsonLog {
    file: BufWriter<File>,
    path: PathBuf,
}

impl JsonLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(JsonLog {
            file: BufWriter::new(file),
            path,
        })
    }

    fn push(&mut self, value: &impl Serialize) {
        let line = serde_json::to_string(value).expect("log records serialize");
        if let Err(e) = writeln!(self.file, "{line}") {
            log::warn!("{}: {e}", self.path.display());
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Corpus { action, common } => corpus(action, Ctx::new(common)?),
        Command::Recognizer { action, common } => recognizer(action, Ctx::new(common)?),
        Command::Diffusion { action, common } => diffusion(action, Ctx::new(common)?),
        Command::Generate { args, common } => generate(args, Ctx::new(common)?),
        Command::Mix { args, common } => mix(args, Ctx::new(common)?),
        Command::Metrics { action, common } => metrics_cmd(action, Ctx::new(common)?),
        Command::Experiment { action, common } => experiment(action, Ctx::new(common)?),
    }
}

fn corpus(action: CorpusCmd, mut ctx: Ctx) -> Result<()> {
    let CorpusCmd::Build {
        vocab,
        writers,
        per_pair,
    } = action;
    let vocab = ctx.pick(vocab, &ctx.config.corpus_build.vocab.clone(), "--vocab")?;
    let out = ctx.out()?;
    if let Some(n) = writers {
        ctx.config.corpus_build.writers = n;
    }
    if let Some(k) = per_pair {
        ctx.config.corpus_build.per_pair = k;
    }
    ctx.config.corpus_build.vocab = vocab.clone();
    ctx.config.corpus = out.clone();
    let words = read_vocab(&vocab)?;
    let cfg = &ctx.config;
    let styles = WriterStyle::presets(cfg.corpus_build.writers, cfg.seed);
    let manifest = build_corpus(
        &words,
        &styles,
        cfg.corpus_build.per_pair,
        cfg.seed,
        &Alphabet::lowercase(),
        &out,
    )?;
    let summary = serde_json::json!({
        "records": manifest.records.len(),
        "train": manifest.records_in(Split::Train).count(),
        "validation": manifest.records_in(Split::Validation).count(),
        "test": manifest.records_in(Split::Test).count(),
    });
    ctx.finish("corpus build", &out, &summary)?;
    print_json(&summary)
}

fn split_of(name: &str) -> Option<Split> {
    match name {
        "train" => Some(Split::Train),
        "validation" => Some(Split::Validation),
        "test" => Some(Split::Test),
        _ => None,
    }
}

fn recognizer(action: RecognizerCmd, mut ctx: Ctx) -> Result<()> {
    match action {
        RecognizerCmd::Train {
            corpus,
            heldout,
            steps,
        } => {
            let corpus_dir = ctx.pick(corpus, &ctx.config.corpus.clone(), "--corpus")?;
            let out = ctx.out()?;
            if let Some(n) = steps {
                ctx.config.recognizer.steps = n;
            }
            ctx.config.corpus = corpus_dir.clone();
            let corpus = CorpusManifest::load(&corpus_dir)?;
            let (tcfg, file) = if heldout {
                (ctx.config.heldout_train(), "heldout.safetensors")
            } else {
                (ctx.config.recognizer_train(), "recognizer.safetensors")
            };
            let mut log = JsonLog::create(out.join("metrics.jsonl"))?;
            let outcome = train_recognizer(&corpus, &tcfg, &ctx.device, &mut |r| {
                if let Some(c) = r.validation_cer {
                    log::info!("step {} loss {:.4} validation cer {:.4}", r.step, r.loss, c);
                }
                log.push(r);
            })?;
            drop(log);
            outcome.model.save(&out.join(file))?;
            let summary = serde_json::json!({
                "checkpoint": file,
                "best_validation_cer": outcome.best_validation_cer,
                "first_loss": outcome.first_loss,
                "last_loss": outcome.last_loss,
            });
            ctx.finish("recognizer train", &out, &summary)?;
            print_json(&summary)
        }
        RecognizerCmd::Eval {
            corpus,
            ckpt,
            split,
        } => {
            let corpus_dir = ctx.pick(corpus, &ctx.config.corpus.clone(), "--corpus")?;
            let ckpt = ctx.pick(ckpt, &ctx.config.recognizer_ckpt.clone(), "--ckpt")?;
            let corpus = CorpusManifest::load(&corpus_dir)?;
            let model = RecognizerModel::load(&ckpt, &ctx.device)?;
            let split = split_of(&split).expect("clap restricts the split");
            let report = evaluate(&model, &corpus.load_split(split)?)?;
            if ctx.out.is_some() {
                let out = ctx.out()?;
                fs::write(
                    out.join("report.json"),
                    serde_json::to_string_pretty(&report)?,
                )
                .map_err(io_err(&out))?;
                ctx.finish("recognizer eval", &out, &report)?;
            }
            print_json(&report)
        }
    }
}

fn diffusion(action: DiffusionCmd, mut ctx: Ctx) -> Result<()> {
    let DiffusionCmd::Train {
        corpus,
        recognizer,
        steps,
    } = action;
    let corpus_dir = ctx.pick(corpus, &ctx.config.corpus.clone(), "--corpus")?;
    let rec_path = ctx.pick(
        recognizer,
        &ctx.config.recognizer_ckpt.clone(),
        "--recognizer",
    )?;
    let out = ctx.out()?;
    if let Some(n) = steps {
        ctx.config.diffusion.steps = n;
    }
    let corpus = CorpusManifest::load(&corpus_dir)?;
    let rec = RecognizerModel::load(&rec_path, &ctx.device)?;
    let tcfg = ctx.config.diffusion_train();
    let every = (tcfg.steps / 100).max(1);
    let outcome = train_diffusion(&corpus, rec, &tcfg, Some(&out), &ctx.device, &mut |r| {
        if r.step % every == 0 {
            log::info!("step {} loss {:.4} lr {:.2e}", r.step, r.loss, r.lr);
        }
    })?;
    let summary = serde_json::json!({
        "checkpoint": inkdiff_core::diffusion::CHECKPOINT_FILE,
        "steps": outcome.model.training_steps,
        "first_loss": outcome.first_loss,
        "last_loss": outcome.last_loss,
    });
    ctx.finish("diffusion train", &out, &summary)?;
    print_json(&summary)
}

fn write_sheet(samples: &[TextImageSample], out: &Path) -> Result<()> {
    let tiles: Vec<Raster> = samples
        .iter()
        .take(SHEET_MAX)
        .map(|s| s.image.clone())
        .collect();
    if !tiles.is_empty() {
        contact_sheet(&tiles, SHEET_COLS)?.save_png(&out.join(SHEET_FILE))?;
    }
    Ok(())
}

fn generate(args: GenerateArgs, ctx: Ctx) -> Result<()> {
    let mode: GenerationMode = args.mode.parse()?;
    let ckpt = ctx.pick(args.ckpt, &ctx.config.diffusion_ckpt, "--ckpt")?;
    let out = ctx.out()?;
    let model = DiffusionModel::load(&ckpt, &ctx.device)?;
    let mut request = GenerationRequest::new(mode, args.count, ctx.config.seed);
    request.text = args.text;
    request.writer_id = args.writer;
    if let Some(path) = &args.image {
        request.source_image = Some(Raster::load_png(path)?);
    }
    let mut presence = Vec::new();
    let samples = generate_observed(
        &request,
        &model,
        SampleOptions {
            guidance: args.guidance,
        },
        &mut |_, p| presence.push(p),
    )?;
    let mut manifest = CorpusManifest::new(
        &out,
        model.alphabet().clone(),
        model.writers.clone(),
        ctx.config.seed,
    );
    manifest.ensure_image_dir()?;
    for (k, s) in samples.iter().enumerate() {
        manifest.push_sample(k, s, Split::Train)?;
    }
    manifest.write()?;
    write_sheet(&samples, &out)?;
    let summary = serde_json::json!({
        "mode": mode,
        "count": samples.len(),
        "presence": presence.first(),
    });
    ctx.finish("generate", &out, &summary)?;
    print_json(&summary)
}

fn mix(args: MixArgs, ctx: Ctx) -> Result<()> {
    let corpus_dir = ctx.pick(args.corpus, &ctx.config.corpus, "--corpus")?;
    let ckpt = ctx.pick(args.ckpt, &ctx.config.diffusion_ckpt, "--ckpt")?;
    let total = match (args.total, ctx.from_file) {
        (Some(n), _) => n,
        (None, true) => ctx.config.augmentation.mix_total,
        (None, false) => return Err(CliError::MissingFlag("--total")),
    };
    let out = ctx.out()?;
    let mix_cfg = MixConfig {
        total,
        synthesis_fraction: args
            .synthesis_fraction
            .unwrap_or(ctx.config.augmentation.synthesis_fraction),
        seed: ctx.config.seed,
    };
    let corpus = CorpusManifest::load(&corpus_dir)?;
    let model = DiffusionModel::load(&ckpt, &ctx.device)?;
    let mut observed: std::collections::BTreeMap<String, usize> = Default::default();
    let manifest = mix_generate(&corpus, &model, &mix_cfg, &out, &mut |m, p| {
        *observed
            .entry(format!("{}:{}", m.name(), p.label()))
            .or_default() += 1;
    })?;
    let shown: Vec<&_> = manifest.records.iter().take(SHEET_MAX).collect();
    write_sheet(&manifest.load_records(&shown)?, &out)?;
    let summary = serde_json::json!({ "records": manifest.records.len(), "presence": observed });
    ctx.finish("mix", &out, &summary)?;
    print_json(&summary)
}

fn load_all(dir: &Path, split: Option<Split>) -> Result<Vec<TextImageSample>> {
    let corpus = CorpusManifest::load(dir)?;
    let records: Vec<_> = corpus
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect();
    Ok(corpus.load_records(&records)?)
}

fn metrics_cmd(action: MetricsCmd, ctx: Ctx) -> Result<()> {
    let MetricsCmd::Compare {
        real,
        gen,
        ckpt,
        split,
    } = action;
    let ckpt = ctx.pick(ckpt, &ctx.config.heldout_ckpt, "--ckpt")?;
    let recognizer = RecognizerModel::load(&ckpt, &ctx.device)?;
    let real = load_all(&real, split_of(&split))?;
    let gen = load_all(&gen, None)?;
    let report = metrics::compare(&real, &gen, &recognizer)?;
    if ctx.out.is_some() {
        let out = ctx.out()?;
        fs::write(
            out.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )
        .map_err(io_err(&out))?;
        ctx.finish("metrics compare", &out, &report)?;
    }
    print_json(&report)
}

fn experiment(action: ExperimentCmd, mut ctx: Ctx) -> Result<()> {
    match action {
        ExperimentCmd::Ablation {
            corpus,
            recognizer,
            heldout,
        } => {
            let corpus_dir = ctx.pick(corpus, &ctx.config.corpus, "--corpus")?;
            let rec_path = ctx.pick(recognizer, &ctx.config.recognizer_ckpt, "--recognizer")?;
            let held_path = ctx.pick(heldout, &ctx.config.heldout_ckpt, "--heldout")?;
            let out = ctx.out()?;
            let corpus = CorpusManifest::load(&corpus_dir)?;
            let rec = RecognizerModel::load(&rec_path, &ctx.device)?;
            let held = RecognizerModel::load(&held_path, &ctx.device)?;
            let table = run_condition_ablation(
                &ctx.config,
                &corpus,
                &rec,
                &held,
                &out,
                &ctx.device,
                &mut |label, r| {
                    if r.step % 100 == 0 {
                        log::info!("[{label}] step {} loss {:.4}", r.step, r.loss);
                    }
                },
            )?;
            let summary = serde_json::json!({ "rows": table.rows, "orderings": table.orderings() });
            fs::write(
                out.join("table.json"),
                serde_json::to_string_pretty(&summary)?,
            )
            .map_err(io_err(&out))?;
            ctx.finish("experiment ablation", &out, &summary)?;
            print_json(&summary)
        }
        ExperimentCmd::Augment {
            corpus,
            ckpt,
            total,
        } => {
            let corpus_dir = ctx.pick(corpus, &ctx.config.corpus, "--corpus")?;
            let ckpt = ctx.pick(ckpt, &ctx.config.diffusion_ckpt, "--ckpt")?;
            let out = ctx.out()?;
            if let Some(n) = total {
                ctx.config.augmentation.mix_total = n;
            }
            ctx.config.validate()?;
            let corpus = CorpusManifest::load(&corpus_dir)?;
            let model = DiffusionModel::load(&ckpt, &ctx.device)?;
            let report = run_augmentation_study(
                &ctx.config,
                &corpus,
                &model,
                &out,
                &ctx.device,
                &mut |which, r| {
                    if let Some(c) = r.validation_cer {
                        log::info!("[{which}] step {} validation cer {:.4}", r.step, c);
                    }
                },
            )?;
            fs::write(
                out.join("report.json"),
                serde_json::to_string_pretty(&report)?,
            )
            .map_err(io_err(&out))?;
            ctx.finish("experiment augment", &out, &report)?;
            print_json(&report)
        }
    }
}
