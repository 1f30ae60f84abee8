//! Builds a small graph, runs backward and checks it against finite
//! differences.

use srtransgan::tensor::{grad_check, Rng, Tensor};

fn main() -> srtransgan::Result<()> {
    let mut rng = Rng::new(0);
    let x = Tensor::<f64>::randn(&[1, 2, 4, 4], 1.0, &mut rng).with_grad();
    let w = Tensor::<f64>::randn(&[3, 2, 3, 3], 0.3, &mut rng).with_grad();

    let y = x.conv2d(&w, None, 1, 1)?.gelu().sum();
    y.backward()?;
    println!("loss {:.6}", y.item()?);
    println!("dL/dw[0..4] {:?}", &w.grad().unwrap()[..4]);

    let err = grad_check(|x| Ok(x.conv2d(&w.detach(), None, 1, 1)?.gelu().sum()), &x, 1e-4)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
