//! Conditional adversarial training: the patch discriminator, the losses
//! and the alternating optimization loop.

pub mod discriminator;
pub mod loss;
pub mod train;

pub use discriminator::{build_discriminator, build_discriminator_with, Discriminator, DiscriminatorSpec};
pub use loss::{dice_loss, discriminator_loss, generator_loss};
pub use train::{stack_batch, train, AdversarialConfig, LossRecord, TrainReport, Trainer};
