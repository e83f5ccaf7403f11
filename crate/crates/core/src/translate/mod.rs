//! Conditional feature-to-image translation: generators, patch
//! discriminators, the adversarial objective and the training loop.

mod checkpoint;
mod discriminator;
mod generator;
mod loss;
mod spec;
mod train;

pub use checkpoint::{
    read_loss_csv, translate, write_loss_csv, CheckpointMeta, LossSummary, TrainingProvenance, TranslatorCheckpoint, LOSS_FILE,
    META_FILE, WEIGHTS_FILE,
};
pub use discriminator::{build_discriminators, MultiScaleDiscriminator, ScaleOutput};
pub use generator::{build_generator, ForwardTrace, Generator};
pub use loss::{cgan_losses, discriminator_loss, generator_loss, CganLosses, LossRecord};
pub use spec::{receptive_field, AdversarialLoss, DiscriminatorSpec, GeneratorFamily, GeneratorSpec, TrainConfig};
pub use train::{train_translator, train_translator_with, PngDumper, Silent, TrainObserver};
