//! Upscales a synthetic image 2x and 4x with a fresh generator and with
//! one whose learned branch is zeroed (pure bicubic).

use srtransgan::data::save_image;
use srtransgan::data::synth::detailed_texture;
use srtransgan::{Generator, GeneratorConfig, Module, Rng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("srtransgan-upscale");
    std::fs::create_dir_all(&dir)?;
    let lr = detailed_texture(30, 40, &mut Rng::new(3));
    save_image(&lr, dir.join("lr.png"))?;

    let gen = Generator::<f32>::new(&GeneratorConfig::tiny(), &mut Rng::new(0))?;
    let x = lr.reshape(&[1, 3, 30, 40])?;
    for s in [2, 4] {
        let sr = gen.infer(&x, s)?;
        println!("{s}x -> {:?}", sr.shape());
        save_image(&sr, dir.join(format!("sr_{s}x.png")))?;
    }
    gen.zero_weights();
    save_image(&gen.infer(&x, 2)?, dir.join("bicubic_2x.png"))?;
    println!("written to {}", dir.display());
    Ok(())
}
