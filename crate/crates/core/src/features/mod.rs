//! Signal channels, stroke images, augmentation and synthetic data.

pub mod augment;
pub mod kinematics;
pub mod render;
pub mod synth;

pub use augment::{Augment, AugmentOp, Transform};
pub use kinematics::{kinematic_features, kinematics, kinematics_of, Kinematics, SignalMatrix, CHANNEL_NAMES};
pub use render::{render_image, RgbCanvas};
pub use synth::{synth_generate, synth_records, SynthOptions};
