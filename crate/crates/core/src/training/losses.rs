//! Stage losses.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::{ssim_graph, SSIM_WINDOW};
use crate::tensor::Real;

/// Mean squared error over every element.
pub fn loss_upsampling<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let d = g.sub(pred, gt)?;
    let sq = g.square(d);
    g.mean(sq)
}

/// `MSE + (1 - SSIM)` for the output stage.
pub fn loss_output<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let (_, _, h, w) = g.value(pred).dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(
            "loss_output",
            format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"),
        ));
    }
    let mse = loss_upsampling(g, pred, gt)?;
    let s = ssim_graph(g, pred, gt)?;
    let neg = g.scale(s, T::lit(-1.0));
    let dssim = g.shift(neg, T::one());
    g.add(mse, dssim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn closed_forms() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::full(&[1, 1, 12, 12], 0.5));
        let b = g.input(Tensor::full(&[1, 1, 12, 12], 0.6));
        let l = loss_upsampling(&mut g, a, b).unwrap();
        assert!((g.value(l).data()[0] - 0.01).abs() < 1e-12);
        let z = loss_output(&mut g, a, a).unwrap();
        assert!(g.value(z).data()[0].abs() < 1e-12);
    }

    #[test]
    fn output_loss_needs_window() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[1, 1, 10, 16]));
        assert!(loss_output(&mut g, a, a).is_err());
        let b = g.input(Tensor::zeros(&[1, 1, 12, 12]));
        assert!(loss_upsampling(&mut g, a, b).is_err());
    }
}
