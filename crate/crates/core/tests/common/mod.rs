#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srtransgan::data::save_checkpoint;
use srtransgan::training::{TrainConfig, Trainer};
use srtransgan::{DiscriminatorConfig, GeneratorConfig, Module};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_srtransgan"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Tiny run config training on 32x32 HR crops from `dataset`.
pub fn tiny_config(dataset: &Path, steps: u64) -> String {
    format!(
        r#"seed = 3

[generator]
levels = 4
stacks = [1, 1, 1, 1]
base_channels = 8
heads = [1, 2, 4, 8]
refinement_stacks = 1

[discriminator]
image_size = 32
patch_size = 8
embed_dim = 32
depth = 2
heads = 2

[train]
batch_size = 2
steps = {steps}
lr_crop = 16
log_every = 5
checkpoint_every = 10

[data]
root = "{}"
scale = 2
"#,
        dataset.display()
    )
}

/// Saves a checkpoint whose generator has every weight set to zero.
pub fn zero_weight_checkpoint(path: &Path) -> PathBuf {
    let t = Trainer::new(
        &GeneratorConfig::tiny(),
        &DiscriminatorConfig::tiny(),
        &TrainConfig::default(),
    )
    .unwrap();
    t.gen.zero_weights();
    save_checkpoint(&t.to_checkpoint(), path).unwrap();
    path.to_path_buf()
}

/// Saves a checkpoint of a freshly initialized tiny generator.
pub fn random_checkpoint(path: &Path, seed: u64) -> PathBuf {
    let cfg = TrainConfig {
        seed,
        ..Default::default()
    };
    let t = Trainer::new(&GeneratorConfig::tiny(), &DiscriminatorConfig::tiny(), &cfg).unwrap();
    save_checkpoint(&t.to_checkpoint(), path).unwrap();
    path.to_path_buf()
}
