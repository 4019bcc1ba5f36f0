//! Reverse-mode gradients on a small expression, checked against central
//! differences.

use anomaly_transformer::numerics::gradcheck::{central_difference, max_relative_error, STEP};
use anomaly_transformer::numerics::{Tape, Tensor, Var};

// mean(softmax(x·W) ⊙ gelu(x·W)), a few ops deep
fn expr<'t>(x: Var<'t>, w: Var<'t>) -> Var<'t> {
    let h = x.matmul(w).unwrap();
    h.softmax_rows().mul(h.gelu()).unwrap().mean()
}

fn main() -> anomaly_transformer::Result<()> {
    let x = Tensor::from_rows(&[vec![0.3, -1.2, 0.8], vec![1.5, 0.1, -0.4]])?;
    let w = Tensor::from_rows(&[vec![0.2, -0.5], vec![0.7, 0.1], vec![-0.3, 0.9]])?;

    let tape = Tape::new();
    let (xv, wv) = (tape.constant(&x), tape.param(&w));
    let loss = expr(xv, wv);
    tape.backward(loss)?;
    let analytic = tape.grad(wv);

    let numeric = central_difference(
        |d| {
            let tape = Tape::new();
            let w = Tensor::new(vec![3, 2], d.to_vec()).unwrap();
            expr(tape.constant(&x), tape.constant(&w)).item()
        },
        w.data(),
        STEP,
    );
    println!("loss      {:.6}", loss.item());
    println!("analytic  {:?}", analytic.iter().map(|g| format!("{:+.6}", g)).collect::<Vec<_>>());
    println!("numeric   {:?}", numeric.iter().map(|g| format!("{:+.6}", g)).collect::<Vec<_>>());
    println!("max rel error {:.2e}", max_relative_error(&analytic, &numeric));
    Ok(())
}
