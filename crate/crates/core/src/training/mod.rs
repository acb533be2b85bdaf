//! Diffusion pretraining/fine-tuning and the braille classifier.

mod classifier;
mod diffusion;
mod loss;

pub use classifier::{
    cross_entropy, init_classifier, train_classifier, ClassifierArch, ClassifierConfig, ClassifierLog,
    ClassifierParams, LabeledImage,
};
pub use diffusion::{
    corpus_training_pairs, resume_diffusion, train_diffusion, TrainConfig, TrainLog, LATEST_CHECKPOINT, TRAIN_LOG_FILE,
};
pub use loss::{diffusion_loss, diffusion_loss_and_grad, diffusion_loss_with, draw_for_item, NoisyDraw, TrainingPair};
