//! Builds a small graph by hand, backpropagates, and checks one gradient
//! against a central difference.

use xconv::{Graph, Tensor};

fn loss_at(w: &Tensor) -> xconv::Result<(f64, Tensor)> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]])?);
    let w = g.variable(w.clone());
    let h = g.matmul(x, w)?;
    let a = g.elu(h)?;
    let loss = g.softmax_cross_entropy(a, &[0, 1])?;
    g.backward(loss)?;
    Ok((g.value(loss).item(), g.grad(w).cloned().unwrap_or_else(|| Tensor::zeros(&[2, 2]))))
}

fn main() -> xconv::Result<()> {
    let w = Tensor::from_rows(&[vec![0.3, -0.1], vec![0.2, 0.4]])?;
    let (loss, grad) = loss_at(&w)?;
    let h = 1e-6;
    let (mut plus, mut minus) = (w.clone(), w.clone());
    plus.data_mut()[1] += h;
    minus.data_mut()[1] -= h;
    let numeric = (loss_at(&plus)?.0 - loss_at(&minus)?.0) / (2.0 * h);
    println!("loss {loss:.6}");
    println!("dL/dw[0][1]: backprop {:.9}, central difference {numeric:.9}", grad.data()[1]);
    Ok(())
}
