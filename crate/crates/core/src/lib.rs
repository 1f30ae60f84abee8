pub mod cli;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod training;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use error::{CheckpointError, Error, Result};
pub use generator::{Generator, GeneratorConfig};
pub use nn::Module;
pub use tensor::{no_grad, Element, Rng, Tensor};
