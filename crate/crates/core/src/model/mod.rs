//! The WDN network.

pub mod blocks;
pub mod config;
pub mod output;
pub mod upsampling;
pub mod wdn;

pub use blocks::{block_forward, init_block, pixel_calibrate, BlockSpec, Mode};
pub use config::{ActivationVariant, TrainingProcedure, WdnConfig};
pub use output::OutputModule;
pub use upsampling::UpsamplingModule;
pub use wdn::{prepare_inputs, stage1_input, NetworkInputs, WdnModel};
