//! Trains the tiny GAN for a few steps on synthetic textures and writes
//! the log and checkpoints to a temporary directory.

use srtransgan::data::synth::write_texture_corpus;
use srtransgan::data::{load_dataset, Layout};
use srtransgan::training::{train_loop, TrainConfig, Trainer};
use srtransgan::{DiscriminatorConfig, GeneratorConfig};

fn main() -> srtransgan::Result<()> {
    let dir = std::env::temp_dir().join("srtransgan-train-tiny");
    write_texture_corpus(dir.join("data"), 6, 32, 1)?;
    let pairs = load_dataset(dir.join("data"), Layout::HrOnly, 2)?.load_pairs()?;

    let dcfg = DiscriminatorConfig {
        image_size: 32,
        ..DiscriminatorConfig::tiny()
    };
    let cfg = TrainConfig {
        steps: 20,
        batch_size: 2,
        lr_crop: 16,
        log_every: 5,
        checkpoint_every: 10,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&GeneratorConfig::tiny(), &dcfg, &cfg)?;
    let summary = train_loop(&mut trainer, &pairs, &dir.join("run"), |r| {
        println!(
            "step {:>3}  d {:.4}  g_adv {:.4}  g_rec {:.4}",
            r.step, r.d_loss, r.g_adv, r.g_rec
        );
    })?;
    println!("final checkpoint {}", summary.final_checkpoint.display());
    Ok(())
}
