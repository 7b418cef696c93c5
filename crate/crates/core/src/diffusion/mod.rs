//! Conditioned denoising diffusion: schedule, noise-predicting UNet, training
//! loss, ancestral sampler and the checkpointed model bundle.

mod sampler;
mod schedule;
mod train;
mod unet;

use std::path::Path;

use candle_core::Device;

pub use sampler::{
    ancestral_step, denoise_step, forward_sample, noise_like, noise_mse, sample, sample_with,
    training_loss, training_loss_at, SampleOptions,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig, ScheduleKind};
pub use train::{
    train_diffusion, train_diffusion_on, DiffusionOutcome, DiffusionStepRecord,
    DiffusionTrainConfig, CHECKPOINT_FILE, METRICS_FILE,
};
pub use unet::{step_embedding, DenoiserConfig, DenoiserModel};

use crate::checkpoint::{config_hash, Checkpoint};
use crate::cond::{ConditionalEncoder, Presence};
use crate::corpus::{Alphabet, WriterStyle};
use crate::error::{Error, Result};
use crate::recognizer::RecognizerModel;

/// Everything generation needs: the frozen recognizer, the conditional encoder,
/// the denoiser, the schedule and the closed writer table.
pub struct DiffusionModel {
    pub recognizer: RecognizerModel,
    pub encoder: ConditionalEncoder,
    pub denoiser: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub writers: Vec<WriterStyle>,
    /// Conditions the model saw during training; others were always null.
    pub conditions: Presence,
    pub training_steps: usize,
}

impl DiffusionModel {
    pub fn alphabet(&self) -> &Alphabet {
        self.recognizer.alphabet()
    }

    pub fn device(&self) -> &Device {
        self.denoiser.device()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        self.recognizer.write_into(&mut ck, "recognizer.")?;
        self.encoder.write_into(&mut ck, "encoder.")?;
        ck.add_params("denoiser.", self.denoiser.params())?;
        ck.set_meta("denoiser.config", self.denoiser.config())?;
        ck.set_meta("schedule", &self.schedule.config())?;
        ck.set_meta("writers", &self.writers)?;
        ck.set_meta("conditions", &self.conditions)?;
        ck.set_meta("training_steps", &self.training_steps)?;
        let hash = config_hash(&(
            self.denoiser.config(),
            self.encoder.config(),
            self.schedule.config(),
        ))?;
        ck.set_meta("config_hash", &hash)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        let recognizer = RecognizerModel::read_from(ck, "recognizer.", device)?;
        let encoder = ConditionalEncoder::read_from(ck, "encoder.", device)?;
        let dcfg: DenoiserConfig = ck.meta("denoiser.config")?;
        let denoiser = DenoiserModel::new(dcfg, 0, candle_core::DType::F32, device)?;
        denoiser.params().restore(&ck.tensors, "denoiser.")?;
        let schedule = ck.meta::<ScheduleConfig>("schedule")?.build()?;
        let stored: String = ck.meta("config_hash")?;
        let hash = config_hash(&(denoiser.config(), encoder.config(), schedule.config()))?;
        if stored != hash {
            return Err(Error::Format {
                what: "checkpoint",
                detail: "diffusion config hash mismatch".into(),
            });
        }
        Ok(DiffusionModel {
            recognizer,
            encoder,
            denoiser,
            schedule,
            writers: ck.meta("writers")?,
            conditions: ck.meta("conditions")?,
            training_steps: ck.meta("training_steps")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, device)?, device)
    }
}
