//! The four generation modes and the MIX data recipe.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cond::{assemble_conditions, ConditionBundle, ConditionInputs, Presence};
use crate::corpus::{
    contact_sheet, CorpusManifest, ManifestRecord, Raster, Source, Split, TextImageSample,
};
use crate::diffusion::{sample, DiffusionModel, SampleOptions};
use crate::error::{Error, Result};
use crate::rng;

/// Which conditions drive generation.
///
/// | mode         | c_i | c_t | c_s |
/// |--------------|-----|-----|-----|
/// | synthesis    |     |  x  |     |
/// | augmentation |  x  |     |     |
/// | recovery     |  x  |  x  |     |
/// | imitation    |  x  |  x  |  x  |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    Synthesis,
    Augmentation,
    Recovery,
    Imitation,
}

impl GenerationMode {
    pub const ALL: [GenerationMode; 4] = [
        GenerationMode::Synthesis,
        GenerationMode::Augmentation,
        GenerationMode::Recovery,
        GenerationMode::Imitation,
    ];

    pub fn presence(self) -> Presence {
        match self {
            GenerationMode::Synthesis => Presence::new(false, true, false),
            GenerationMode::Augmentation => Presence::new(true, false, false),
            GenerationMode::Recovery => Presence::new(true, true, false),
            GenerationMode::Imitation => Presence::new(true, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GenerationMode::Synthesis => "synthesis",
            GenerationMode::Augmentation => "augmentation",
            GenerationMode::Recovery => "recovery",
            GenerationMode::Imitation => "imitation",
        }
    }

    pub fn source(self) -> Source {
        match self {
            GenerationMode::Synthesis => Source::Synthesis,
            GenerationMode::Augmentation => Source::Augmentation,
            GenerationMode::Recovery => Source::Recovery,
            GenerationMode::Imitation => Source::Imitation,
        }
    }
}

impl std::str::FromStr for GenerationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GenerationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

/// Upper bound on images per request.
pub const MAX_COUNT: usize = 10_000;
/// Images denoised together; rows are independent, so this only bounds memory.
const CHUNK: usize = 16;

/// One generation call.
#[derive(Clone, Debug)]
pub struct GenerationRequest {
    pub mode: GenerationMode,
    /// Conditioning text for synthesis, recovery and imitation; the label in every mode.
    pub text: Option<String>,
    pub source_image: Option<Raster>,
    pub writer_id: Option<usize>,
    pub count: usize,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(mode: GenerationMode, count: usize, seed: u64) -> Self {
        GenerationRequest {
            mode,
            text: None,
            source_image: None,
            writer_id: None,
            count,
            seed,
        }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn image(mut self, image: Raster) -> Self {
        self.source_image = Some(image);
        self
    }

    pub fn writer(mut self, writer_id: usize) -> Self {
        self.writer_id = Some(writer_id);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 || self.count > MAX_COUNT {
            return Err(Error::InvalidArgument(format!(
                "count must be in 1..={MAX_COUNT}, got {}",
                self.count
            )));
        }
        // Augmentation ignores the text as a condition but still needs it as the label.
        if self.text.is_none() {
            return Err(Error::MissingInput {
                mode: self.mode.name(),
                field: "text",
            });
        }
        Ok(())
    }
}

/// Presence triple of each generated sample, reported as it is produced.
pub type Observer<'a> = dyn FnMut(GenerationMode, Presence) + 'a;

/// A single-sample bundle plus the seed of its random stream.
struct Job {
    bundle: ConditionBundle,
    seed: u64,
}

/// Denoises `jobs` in chunks; output `k` depends only on job `k`.
fn run_jobs(model: &DiffusionModel, jobs: &[Job], opts: SampleOptions) -> Result<Vec<Raster>> {
    let mut out = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(CHUNK) {
        let bundles: Vec<ConditionBundle> = chunk.iter().map(|j| j.bundle.clone()).collect();
        let bundle = ConditionBundle::cat(&bundles)?;
        let mut rngs: Vec<rng::Stream> = chunk.iter().map(|j| rng::stream(j.seed)).collect();
        let images = sample(
            &model.denoiser,
            &model.encoder,
            &bundle,
            &model.schedule,
            &mut rngs,
            opts,
        )?;
        for mut img in Raster::unstack(&images)? {
            img.quantize();
            out.push(img);
        }
    }
    Ok(out)
}

fn conditions_for(
    model: &DiffusionModel,
    mode: GenerationMode,
    image: Option<&Raster>,
    text: Option<&str>,
    writer_id: Option<usize>,
) -> Result<ConditionBundle> {
    let inputs = ConditionInputs {
        image,
        text,
        writer_id,
    };
    assemble_conditions(mode, inputs, &model.recognizer, &model.encoder)
}

/// Generates `request.count` images with distinct sub-seeds.
pub fn generate(
    request: &GenerationRequest,
    model: &DiffusionModel,
) -> Result<Vec<TextImageSample>> {
    generate_observed(request, model, SampleOptions::default(), &mut |_, _| {})
}

pub fn generate_observed(
    request: &GenerationRequest,
    model: &DiffusionModel,
    opts: SampleOptions,
    observer: &mut Observer<'_>,
) -> Result<Vec<TextImageSample>> {
    request.validate()?;
    let text = request.text.as_deref().expect("validated");
    model.alphabet().encode(text)?;
    let bundle = conditions_for(
        model,
        request.mode,
        request.source_image.as_ref(),
        Some(text),
        request.writer_id,
    )?;
    let jobs: Vec<Job> = (0..request.count)
        .map(|k| Job {
            bundle: bundle.clone(),
            seed: rng::derive_seed(request.seed, &[k as u64]),
        })
        .collect();
    let images = run_jobs(model, &jobs, opts)?;
    Ok(images
        .into_iter()
        .map(|image| {
            observer(request.mode, bundle.presence[0]);
            TextImageSample {
                image,
                text: text.to_string(),
                writer_id: request.writer_id,
                source: request.mode.source(),
            }
        })
        .collect())
}

/// Proportions of a generated training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub total: usize,
    /// Share of synthesis samples; the rest are imitation samples.
    pub synthesis_fraction: f64,
    pub seed: u64,
}

impl MixConfig {
    pub fn new(total: usize, seed: u64) -> Self {
        MixConfig {
            total,
            synthesis_fraction: 0.5,
            seed,
        }
    }

    /// `(synthesis, imitation)` counts; the split must be exact.
    pub fn counts(&self) -> Result<(usize, usize)> {
        if self.total == 0 {
            return Err(Error::InvalidArgument("mix total must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.synthesis_fraction) {
            return Err(Error::InvalidArgument(
                "synthesis fraction outside [0, 1]".into(),
            ));
        }
        let exact = self.total as f64 * self.synthesis_fraction;
        if (exact - exact.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "total {} does not split exactly at fraction {}",
                self.total, self.synthesis_fraction
            )));
        }
        let syn = exact.round() as usize;
        Ok((syn, self.total - syn))
    }
}

/// Synthesis plus imitation samples written as a corpus under `out_dir`.
///
/// Synthesis texts are drawn uniformly from the corpus vocabulary and imitation
/// sources uniformly from its train split. All records are tagged `train`.
pub fn mix_generate(
    corpus: &CorpusManifest,
    model: &DiffusionModel,
    mix: &MixConfig,
    out_dir: &Path,
    observer: &mut Observer<'_>,
) -> Result<CorpusManifest> {
    let (n_syn, n_imi) = mix.counts()?;
    let lexicon = corpus.vocabulary();
    let sources: Vec<&ManifestRecord> = corpus.records_in(Split::Train).collect();
    if lexicon.is_empty() || (n_imi > 0 && sources.is_empty()) {
        return Err(Error::EmptySplit("train"));
    }
    let mut r = rng::stream(rng::derive_seed(mix.seed, &[0x004d_4958]));
    let mut plan: Vec<(GenerationMode, TextImageSample)> = Vec::with_capacity(mix.total);
    for _ in 0..n_syn {
        let text = lexicon[r.random_range(0..lexicon.len())].clone();
        plan.push((
            GenerationMode::Synthesis,
            TextImageSample {
                image: Raster::blank(),
                text,
                writer_id: None,
                source: Source::Synthesis,
            },
        ));
    }
    for _ in 0..n_imi {
        let rec = sources[r.random_range(0..sources.len())];
        let mut src = corpus.sample(rec)?;
        src.source = Source::Imitation;
        plan.push((GenerationMode::Imitation, src));
    }
    let jobs = plan
        .iter()
        .enumerate()
        .map(|(k, (mode, s))| {
            let image = (*mode == GenerationMode::Imitation).then_some(&s.image);
            Ok(Job {
                bundle: conditions_for(model, *mode, image, Some(&s.text), s.writer_id)?,
                seed: rng::derive_seed(mix.seed, &[k as u64]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_generated(corpus, model, plan, jobs, out_dir, mix.seed, observer)
}

fn write_generated(
    corpus_like: &CorpusManifest,
    model: &DiffusionModel,
    plan: Vec<(GenerationMode, TextImageSample)>,
    jobs: Vec<Job>,
    out_dir: &Path,
    seed: u64,
    observer: &mut Observer<'_>,
) -> Result<CorpusManifest> {
    let images = run_jobs(model, &jobs, SampleOptions::default())?;
    let mut out = CorpusManifest::new(
        out_dir,
        corpus_like.alphabet.clone(),
        corpus_like.writers.clone(),
        seed,
    );
    out.ensure_image_dir()?;
    for (k, ((mode, mut s), image)) in plan.into_iter().zip(images).enumerate() {
        observer(mode, jobs[k].bundle.presence[0]);
        s.image = image;
        out.push_sample(k, &s, Split::Train)?;
    }
    out.write()?;
    Ok(out)
}

/// Synthesis-only samples over a target lexicon, `total` in all, with texts
/// cycling through the lexicon in order.
pub fn domain_adapt_generate(
    lexicon: &[String],
    model: &DiffusionModel,
    total: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    if lexicon.is_empty() || total == 0 {
        return Err(Error::InvalidArgument(
            "lexicon and total must be nonempty".into(),
        ));
    }
    for word in lexicon {
        if word.is_empty() || model.alphabet().first_unknown(word).is_some() {
            return Err(Error::InvalidArgument(format!(
                "lexicon entry `{word}` is not over the model alphabet"
            )));
        }
    }
    let mut plan = Vec::with_capacity(total);
    let mut jobs = Vec::with_capacity(total);
    for k in 0..total {
        let text = lexicon[k % lexicon.len()].clone();
        jobs.push(Job {
            bundle: conditions_for(model, GenerationMode::Synthesis, None, Some(&text), None)?,
            seed: rng::derive_seed(seed, &[k as u64]),
        });
        plan.push((
            GenerationMode::Synthesis,
            TextImageSample {
                image: Raster::blank(),
                text,
                writer_id: None,
                source: Source::Synthesis,
            },
        ));
    }
    let shell = CorpusManifest::new(
        out_dir,
        model.alphabet().clone(),
        model.writers.clone(),
        seed,
    );
    write_generated(&shell, model, plan, jobs, out_dir, seed, &mut |_, _| {})
}

/// One image per source sample, conditioned on whichever of its image, text and
/// writer `presence` allows. Used for condition ablations, where some patterns
/// match no generation mode.
pub fn generate_conditioned(
    model: &DiffusionModel,
    sources: &[TextImageSample],
    presence: Presence,
    seed: u64,
) -> Result<Vec<Raster>> {
    let mut jobs = Vec::with_capacity(sources.len());
    for (k, s) in sources.iter().enumerate() {
        let features = if presence.image {
            Some(model.recognizer.features(&[&s.image])?)
        } else {
            None
        };
        let writer = match (presence.style, s.writer_id) {
            (true, Some(w)) => Some([w]),
            _ => None,
        };
        let bundle = model.encoder.encode(
            1,
            features.as_ref(),
            presence
                .text
                .then_some([s.text.as_str()])
                .as_ref()
                .map(|t| &t[..]),
            writer.as_ref().map(|w| &w[..]),
            &model.recognizer,
        )?;
        jobs.push(Job {
            bundle,
            seed: rng::derive_seed(seed, &[k as u64]),
        });
    }
    run_jobs(model, &jobs, SampleOptions::default())
}

/// Grid of generated images, `cols` per row, for visual inspection.
pub fn contact_sheet_of(samples: &[TextImageSample], cols: usize) -> Result<Raster> {
    let images: Vec<Raster> = samples.iter().map(|s| s.image.clone()).collect();
    contact_sheet(&images, cols)
}
