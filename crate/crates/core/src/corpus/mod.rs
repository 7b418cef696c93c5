//! Synthetic text-image corpus: rendering, persistence and loading.
//!
//! A corpus directory holds `manifest.jsonl` (one header line with the alphabet,
//! writers and seed, then one line per sample) and an `images/` folder of 8-bit
//! grayscale PNGs.

mod alphabet;
mod glyphs;
mod raster;
mod render;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use alphabet::{encode_label, Alphabet, OneHot};
pub use raster::{contact_sheet, Raster, BACKGROUND, IMAGE_HEIGHT, IMAGE_WIDTH};
pub use render::{render_word, WriterStyle, FONT_COUNT};

use crate::error::{Error, Result};
use crate::rng;

/// Longest transcript a text image may carry.
pub const MAX_TEXT_LEN: usize = 24;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
const IMAGE_DIR: &str = "images";

/// How a sample came to exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthesis,
    Augmentation,
    Recovery,
    Imitation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// A text image paired with its transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct TextImageSample {
    pub image: Raster,
    pub text: String,
    /// `None` for samples generated without any writer (synthesis mode).
    pub writer_id: Option<usize>,
    pub source: Source,
}

impl TextImageSample {
    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        self.image.check_text_image()?;
        let len = self.text.chars().count();
        if len == 0 {
            return Err(Error::EmptyText);
        }
        if len > MAX_TEXT_LEN {
            return Err(Error::TextTooLong {
                len,
                max: MAX_TEXT_LEN,
            });
        }
        if let Some(c) = alphabet.first_unknown(&self.text) {
            return Err(Error::UnknownCharacter(c));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: String,
    pub text: String,
    pub writer_id: Option<usize>,
    pub source: Source,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    alphabet: Alphabet,
    writers: Vec<WriterStyle>,
    seed: u64,
}

/// Index of a corpus on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub alphabet: Alphabet,
    pub writers: Vec<WriterStyle>,
    pub seed: u64,
    pub records: Vec<ManifestRecord>,
    root: PathBuf,
}

impl CorpusManifest {
    pub fn new(
        root: impl Into<PathBuf>,
        alphabet: Alphabet,
        writers: Vec<WriterStyle>,
        seed: u64,
    ) -> Self {
        CorpusManifest {
            alphabet,
            writers,
            seed,
            records: Vec::new(),
            root: root.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = ManifestHeader {
            alphabet: self.alphabet.clone(),
            writers: self.writers.clone(),
            seed: self.seed,
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(root: impl Into<PathBuf>, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader =
            serde_json::from_str(lines.next().ok_or_else(|| Error::Format {
                what: "manifest",
                detail: "missing header record".into(),
            })?)?;
        let records = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
        let manifest = CorpusManifest {
            alphabet: header.alphabet,
            writers: header.writers,
            seed: header.seed,
            records,
            root: root.into(),
        };
        manifest.check_writers()?;
        Ok(manifest)
    }

    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.manifest_path();
        fs::write(&path, self.to_jsonl()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_jsonl(dir, &text)
    }

    fn check_writers(&self) -> Result<()> {
        for rec in &self.records {
            if let Some(id) = rec.writer_id {
                if self.writer(id).is_none() {
                    return Err(Error::Format {
                        what: "manifest",
                        detail: format!("record {} names unknown writer {id}", rec.image_path),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn writer(&self, id: usize) -> Option<&WriterStyle> {
        self.writers.iter().find(|w| w.writer_id == id)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.image_path)
    }

    pub fn sample(&self, record: &ManifestRecord) -> Result<TextImageSample> {
        let image = Raster::load_png(&self.image_path(record))?;
        Ok(TextImageSample {
            image,
            text: record.text.clone(),
            writer_id: record.writer_id,
            source: record.source,
        })
    }

    pub fn load_records(&self, records: &[&ManifestRecord]) -> Result<Vec<TextImageSample>> {
        records.par_iter().map(|r| self.sample(r)).collect()
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<TextImageSample>> {
        let records: Vec<&ManifestRecord> = self.records_in(split).collect();
        self.load_records(&records)
    }

    /// Distinct transcripts, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.text.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Re-loads every image and re-checks every sample invariant.
    pub fn verify(&self) -> Result<()> {
        self.check_writers()?;
        self.records
            .par_iter()
            .try_for_each(|rec| self.sample(rec)?.validate(&self.alphabet))
    }

    /// Saves `sample` under `images/` with the given index and appends its record.
    pub fn push_sample(
        &mut self,
        index: usize,
        sample: &TextImageSample,
        split: Split,
    ) -> Result<()> {
        let record = self.save_image(index, sample, split)?;
        self.records.push(record);
        Ok(())
    }

    fn save_image(
        &self,
        index: usize,
        sample: &TextImageSample,
        split: Split,
    ) -> Result<ManifestRecord> {
        let rel = format!("{IMAGE_DIR}/{index:06}.png");
        sample.image.save_png(&self.root.join(&rel))?;
        Ok(ManifestRecord {
            image_path: rel,
            text: sample.text.clone(),
            writer_id: sample.writer_id,
            source: sample.source,
            split,
        })
    }

    /// Creates the `images/` directory under the corpus root.
    pub fn ensure_image_dir(&self) -> Result<()> {
        let dir = self.root.join(IMAGE_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))
    }
}

/// Renders `|vocab| x |writers| x per_pair` samples into `out_dir` and writes the manifest.
///
/// Splits are assigned 80/10/10 per word, so every word appears in every split
/// it has enough samples for.
pub fn build_corpus(
    vocab: &[String],
    writers: &[WriterStyle],
    per_pair: usize,
    seed: u64,
    alphabet: &Alphabet,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    if vocab.is_empty() {
        return Err(Error::InvalidArgument("vocabulary is empty".into()));
    }
    if writers.is_empty() {
        return Err(Error::InvalidArgument("no writers".into()));
    }
    if per_pair == 0 {
        return Err(Error::InvalidArgument("per_pair must be at least 1".into()));
    }
    for (i, w) in writers.iter().enumerate() {
        if writers[..i].iter().any(|o| o.writer_id == w.writer_id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate writer id {}",
                w.writer_id
            )));
        }
    }

    let per_word = writers.len() * per_pair;
    let mut jobs = Vec::with_capacity(vocab.len() * per_word);
    for (wi, word) in vocab.iter().enumerate() {
        let mut slots: Vec<usize> = (0..per_word).collect();
        slots.shuffle(&mut rng::stream(rng::derive_seed(
            seed,
            &[0x53504c54, wi as u64],
        )));
        let n_train = (0.8 * per_word as f64).round() as usize;
        let n_val = (0.1 * per_word as f64).round() as usize;
        let mut split_of = vec![Split::Test; per_word];
        for (rank, &slot) in slots.iter().enumerate() {
            split_of[slot] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
        for (k, writer) in writers.iter().enumerate() {
            for rep in 0..per_pair {
                let render_seed =
                    rng::derive_seed(seed, &[wi as u64, writer.writer_id as u64, rep as u64]);
                jobs.push((
                    word.as_str(),
                    writer,
                    render_seed,
                    split_of[k * per_pair + rep],
                ));
            }
        }
    }

    let mut manifest = CorpusManifest::new(out_dir, alphabet.clone(), writers.to_vec(), seed);
    manifest.ensure_image_dir()?;
    let records = jobs
        .par_iter()
        .enumerate()
        .map(|(index, &(word, writer, render_seed, split))| {
            let sample = render_word(word, writer, render_seed, alphabet)?;
            manifest.save_image(index, &sample, split)
        })
        .collect::<Result<Vec<_>>>()?;
    manifest.records = records;
    manifest.write()?;
    Ok(manifest)
}

/// Reads a vocabulary file: one word per line, blank lines and `#` comments ignored.
pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
