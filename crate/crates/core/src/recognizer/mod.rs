//! CTC text recognizer: frozen feature source for the conditional encoder,
//! CER/WER scoring, and the model retrained in augmentation studies.

mod ctc;
mod model;
mod score;
mod train;

pub use ctc::{collapse, ctc_loss, decode_greedy, FrameLogits};
pub use model::{RecognizerConfig, RecognizerModel, RecognizerOutput};
pub use score::{cer, edit_distance, mean_cer, wer};
pub use train::{
    evaluate, train_recognizer, train_recognizer_on, EvalReport, StepRecord, TrainConfig,
    TrainOutcome,
};
