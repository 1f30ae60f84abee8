//! PSNR and SSIM of bicubic upscaling on synthetic textures, in RGB and
//! luma modes.

use srtransgan::data::synth::detailed_texture;
use srtransgan::data::{bicubic_resize, make_pair};
use srtransgan::metrics::{evaluate_pairs, psnr, ChannelMode};
use srtransgan::{Rng, Tensor};

fn main() -> srtransgan::Result<()> {
    let a = Tensor::<f32>::full(&[3, 8, 8], 0.5);
    let b = Tensor::<f32>::full(&[3, 8, 8], 0.6);
    println!("uniform 0.1 offset: {:.6} dB", psnr(&a, &b, 1.0)?);

    let rng = Rng::new(5);
    let pairs = (0..3)
        .map(|i| make_pair(&detailed_texture(48, 48, &mut rng.fork(i)), 2))
        .collect::<srtransgan::Result<Vec<_>>>()?;
    for mode in [ChannelMode::Rgb, ChannelMode::Luma] {
        let report = evaluate_pairs(&pairs, mode, |p| bicubic_resize(&p.lr, 48, 48))?;
        print!("{}", report.to_tsv());
    }
    Ok(())
}
