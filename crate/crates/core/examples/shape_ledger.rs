//! Prints every stage shape of the tiny generator for an 8x8 input.

use srtransgan::{Generator, GeneratorConfig, Module, Rng, Tensor};

fn main() -> srtransgan::Result<()> {
    let cfg = GeneratorConfig::tiny();
    let gen = Generator::<f32>::new(&cfg, &mut Rng::new(0))?;
    let x = Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut Rng::new(1));
    let (_, trace) = gen.forward_traced(&x)?;
    for (name, shape) in &trace {
        println!("{name:>4} {shape:?}");
    }
    println!("  4x {:?}", gen.generate_4x(&x)?.shape());
    println!("parameters: {}", gen.num_params());
    Ok(())
}
