//! Builds a small attention computation on the tape and compares its
//! backpropagated gradients with central finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use igformer::tensor::gradcheck::check;
use igformer::tensor::{Tape, Tensor, TensorError, Var};

fn attention(tape: &mut Tape, v: &[Var]) -> Result<Var, TensorError> {
    let (x, wq, wk) = (v[0], v[1], v[2]);
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 0.5)?;
    let r = tape.softmax_rows(scores)?;
    let out = tape.matmul(r, x)?;
    let out = tape.gelu(out)?;
    tape.sum(out)
}

fn main() -> Result<(), TensorError> {
    let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let wq = Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64 * 0.91).cos() * 0.5).collect())?;
    let wk = Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64 * 1.3).sin() * 0.5).collect())?;

    let mut tape = Tape::new();
    let vars: Vec<Var> = [&x, &wq, &wk].iter().map(|t| tape.leaf((*t).clone(), true)).collect();
    let y = attention(&mut tape, &vars)?;
    println!("f(x) = {:.6}", tape.value(y).item());
    let grads = tape.backward(y)?;
    println!("df/dx = {:?}", grads.get(vars[0]).map(|g| g.data().to_vec()));

    for r in check(&[x, wq, wk], attention)? {
        println!("input {}: max relative error {:.2e} over {} elements", r.input, r.max_rel_err, r.checked);
    }
    Ok(())
}
