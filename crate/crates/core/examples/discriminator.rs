//! Trains the tiny discriminator to tell textures from uniform noise.

use srtransgan::data::synth::detailed_texture;
use srtransgan::training::{adversarial_loss_d, Adam, AdamConfig};
use srtransgan::{no_grad, Discriminator, DiscriminatorConfig, Module, Rng, Tensor};

fn batch(n: usize, rng: &mut Rng) -> srtransgan::Result<(Tensor, Tensor)> {
    let real: Vec<f32> = (0..n).flat_map(|_| detailed_texture(32, 32, rng).to_vec()).collect();
    let real = Tensor::new(real, &[n, 3, 32, 32])?;
    let noise = Tensor::rand_uniform(&[n, 3, 32, 32], 0.0, 1.0, rng);
    Ok((real, noise))
}

fn main() -> srtransgan::Result<()> {
    let mut rng = Rng::new(1);
    let disc = Discriminator::<f32>::new(&DiscriminatorConfig::tiny(), &mut rng)?;
    let mut opt = Adam::new(&disc, AdamConfig::default());
    let cond = Tensor::full(&[8, 3, 32, 32], 0.5);
    for step in 1..=100 {
        let (real, noise) = batch(8, &mut rng)?;
        disc.zero_grad();
        let loss = adversarial_loss_d(
            &disc.forward_logits(&real, &cond, Some(&mut rng))?,
            &disc.forward_logits(&noise, &cond, Some(&mut rng))?,
        )?;
        loss.backward()?;
        opt.step()?;
        if step % 20 == 0 {
            let (real, noise) = batch(8, &mut rng)?;
            let (pr, pn) =
                no_grad(|| Ok::<_, srtransgan::Error>((disc.forward(&real, &cond)?, disc.forward(&noise, &cond)?)))?;
            let correct =
                pr.to_vec().iter().filter(|&&p| p > 0.5).count() + pn.to_vec().iter().filter(|&&p| p < 0.5).count();
            println!(
                "step {step:>3}  loss {:.4}  accuracy {:.1}%",
                loss.item()?,
                100.0 * correct as f64 / 16.0
            );
        }
    }
    Ok(())
}
