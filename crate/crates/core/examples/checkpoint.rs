//! Saves a trainer checkpoint, reloads it and shows that outputs match
//! bit for bit and that a corrupted file is rejected.

use srtransgan::data::{load_checkpoint, save_checkpoint};
use srtransgan::training::{TrainConfig, Trainer};
use srtransgan::{DiscriminatorConfig, GeneratorConfig, Rng, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("srtransgan-checkpoint");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");

    let t = Trainer::new(
        &GeneratorConfig::tiny(),
        &DiscriminatorConfig::tiny(),
        &TrainConfig::default(),
    )?;
    save_checkpoint(&t.to_checkpoint(), &path)?;
    let gen = load_checkpoint(&path)?.generator()?;

    let x = Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut Rng::new(2));
    let same = t.gen.forward(&x)?.to_vec() == gen.forward(&x)?.to_vec();
    println!("reloaded generator output identical: {same}");

    let mut bytes = std::fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    let bad = dir.join("corrupt.ckpt");
    std::fs::write(&bad, bytes)?;
    match load_checkpoint(&bad) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted file rejected: {e}"),
    }
    Ok(())
}
