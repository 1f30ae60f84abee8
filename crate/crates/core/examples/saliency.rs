//! Renders the input-gradient saliency map of a flat/checkerboard pair
//! and writes the grey and colour versions.

use srtransgan::data::synth::flat_and_checker;
use srtransgan::data::{make_pair, save_image};
use srtransgan::metrics::saliency_map;
use srtransgan::{Generator, GeneratorConfig, Rng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pair = make_pair(&flat_and_checker(64, 64, 4), 2)?;
    let gen = Generator::<f32>::new(&GeneratorConfig::tiny(), &mut Rng::new(0))?;
    let s = saliency_map(&gen, &pair.lr, &pair.hr)?;

    let (h, w) = (s.height(), s.width());
    let v = s.map.to_f64_vec();
    let half = |right: bool| {
        let cols = if right { w / 2..w } else { 0..w / 2 };
        let n = (h * cols.len()) as f64;
        (0..h)
            .flat_map(|y| cols.clone().map(move |x| y * w + x))
            .map(|i| v[i])
            .sum::<f64>()
            / n
    };
    println!(
        "mean saliency: flat half {:.4}, textured half {:.4}",
        half(false),
        half(true)
    );

    let dir = std::env::temp_dir().join("srtransgan-saliency");
    std::fs::create_dir_all(&dir)?;
    save_image(&s.map.reshape(&[1, h, w])?, dir.join("saliency.pgm"))?;
    save_image(&s.color, dir.join("saliency.png"))?;
    println!("written to {}", dir.display());
    Ok(())
}
