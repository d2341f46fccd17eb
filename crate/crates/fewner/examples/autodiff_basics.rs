//! Builds a tiny computation graph on the reverse-mode tape, runs backward,
//! and cross-checks every gradient against central finite differences.
//!
//!     cargo run --example autodiff_basics

use fewner::ndcore::{check_grads, Adam, Mode, ParamUpdate, Rng, Tape, Tensor};

fn main() -> fewner::Result<()> {
    // A two-layer scoring function: mean(tanh(x W + b) * v). The tape
    // records each op; backward fills grads for every param node.
    let mut tape = Tape::new(Mode::Train);
    let x = tape.constant(Tensor::from_vec(2, 3, vec![0.5, -1.0, 0.25, 1.5, 0.0, -0.75])?);
    let w = tape.param(Tensor::from_fn(3, 4, |i, j| 0.1 * (i as f64) - 0.05 * (j as f64)));
    let b = tape.param(Tensor::row_vec(vec![0.01, -0.02, 0.03, 0.0])?);
    let v = tape.param(Tensor::row_vec(vec![0.2, -0.4, 0.6, -0.8])?);

    let h = tape.matmul(x, w)?;
    let h = tape.add_row_vec(h, b)?;
    let h = tape.tanh(h)?;
    // Broadcast v over rows by stacking it.
    let twice = tape.stack_rows(&[v, v])?;
    let scored = tape.mul(h, twice)?;
    let loss = tape.mean(scored)?;
    tape.backward(loss)?;

    println!("loss = {:.6}", tape.value(loss).item());
    println!("dL/db = {:?}", tape.grad(b).unwrap().data());

    // The same graph through the finite-difference harness. `build` gets
    // fresh param nodes each call so every +-h evaluation is independent.
    let leaves = [
        Tensor::from_fn(3, 4, |i, j| 0.1 * (i as f64) - 0.05 * (j as f64)),
        Tensor::row_vec(vec![0.01, -0.02, 0.03, 0.0])?,
        Tensor::row_vec(vec![0.2, -0.4, 0.6, -0.8])?,
    ];
    let report = check_grads(
        |tape, ids| {
            let x = tape.constant(Tensor::from_vec(2, 3, vec![0.5, -1.0, 0.25, 1.5, 0.0, -0.75])?);
            let h = tape.matmul(x, ids[0])?;
            let h = tape.add_row_vec(h, ids[1])?;
            let h = tape.tanh(h)?;
            let twice = tape.stack_rows(&[ids[2], ids[2]])?;
            let scored = tape.mul(h, twice)?;
            tape.mean(scored)
        },
        &leaves,
        1e-4,
    )?;
    println!(
        "finite differences over {} elements: max abs err {:.2e}, max rel err {:.2e}",
        report.checked, report.max_abs_err, report.max_rel_err
    );

    // Ten Adam steps on a least-squares toy: fit w so that x w matches y.
    let x_data = Tensor::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0])?;
    let y_data = Tensor::from_vec(4, 1, vec![3.0, -2.0, 1.0, 8.0])?;
    let mut w_val = Tensor::zeros(2, 1);
    let mut adam = Adam::new(0.25, 0.0);
    for step in 0..10 {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.constant(x_data.clone());
        let y = tape.constant(y_data.clone());
        let w = tape.param(w_val.clone());
        let pred = tape.matmul(x, w)?;
        let err = tape.sub(pred, y)?;
        let sq = tape.mul(err, err)?;
        let loss = tape.mean(sq)?;
        tape.backward(loss)?;
        let grad = tape.grad(w).unwrap().clone();
        let mut updates = [ParamUpdate { name: "w", value: &mut w_val, grad: &grad }];
        adam.step(&mut updates)?;
        if step % 3 == 0 || step == 9 {
            println!("step {step}: loss {:.5}, w = {:?}", tape.value(loss).item(), w_val.data());
        }
    }

    // Dropout nodes rescale by 1/(1-rate) in train mode and pass through
    // untouched in eval mode, so eval values never depend on the mask rng.
    let mut rng = Rng::seed(42);
    let mut train_tape = Tape::new(Mode::Train);
    let a = train_tape.constant(Tensor::filled(1, 8, 1.0));
    let dropped = train_tape.dropout(a, 0.5, &mut rng)?;
    println!("dropout(train) on ones: {:?}", train_tape.value(dropped).data());
    let mut eval_tape = Tape::new(Mode::Eval);
    let a = eval_tape.constant(Tensor::filled(1, 8, 1.0));
    let kept = eval_tape.dropout(a, 0.5, &mut rng)?;
    println!("dropout(eval)  on ones: {:?}", eval_tape.value(kept).data());
    Ok(())
}
