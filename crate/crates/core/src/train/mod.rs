//! Desk-scale training: synthetic images, cross-entropy, AdamW with a cosine
//! schedule, the training loop, and a finite-difference gradient checker.

mod data;
mod gradcheck;
mod optim;
mod trainer;

pub use data::{synth_dataset, SynthSample, NOISE_STD};
pub use gradcheck::{finite_diff_gradcheck, GradcheckReport};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use trainer::{cross_entropy, train_loop, DataConfig, MetricsRow, TrainConfig, TrainReport, Trainer};

#[cfg(test)]
mod tests;
