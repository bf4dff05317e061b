//! Layer swapping: build new generators by mixing the resolution bands of
//! two style-based GAN checkpoints that share an architecture.
//!
//! The pieces:
//!
//! * [`checkpoint`] holds parameter sets and reads/writes the GWTC container.
//! * [`topology`] maps each parameter name to its resolution band.
//! * [`blend`] interpolates two checkpoints under a per-band α schedule.
//! * [`generator`] evaluates a checkpoint and creates fixture models.
//! * [`projector`] recovers a latent for a target image and runs toonify.
//! * [`sampling`] renders seeded sample grids.

pub mod blend;
pub mod checkpoint;
pub mod error;
pub mod generator;
pub mod par;
pub mod projector;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod topology;

pub use crate::blend::{blend_checkpoints, describe_schedule, BlendSchedule, MappingPolicy, ScheduleRow, Source};
pub use crate::checkpoint::{Checkpoint, GeneratorConfig, ModelId, ModelRegistry};
pub use crate::error::{Error, Result};
pub use crate::generator::{activations, forward, forward_w, init_random, manifest, synth_transfer, Generator, NoiseSpec};
pub use crate::par::ExecMode;
pub use crate::tensor::{Image, Tensor};
