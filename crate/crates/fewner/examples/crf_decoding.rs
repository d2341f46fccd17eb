//! Scores tag sequences with the linear-chain layer on a tiny instance and
//! checks the forward recursion and Viterbi against brute-force enumeration
//! over all K^T paths.
//!
//!     cargo run --example crf_decoding

use fewner::crf::{crf_nll, path_score, viterbi, CrfParams};
use fewner::ndcore::{Mode, Rng, Tape, Tensor};

/// Every tag path of length `t_len` over `k` tags.
fn all_paths(t_len: usize, k: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![vec![]];
    for _ in 0..t_len {
        paths = paths
            .iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    paths
}

fn main() -> fewner::Result<()> {
    let (t_len, k) = (4, 3);
    let mut rng = Rng::seed(7);
    let emissions = Tensor::from_fn(t_len, k, |_, _| rng.range_f64(-1.5, 1.5));
    let mut params = CrfParams::zeros(k);
    params.start = Tensor::from_fn(1, k, |_, _| rng.range_f64(-0.5, 0.5));
    params.end = Tensor::from_fn(1, k, |_, _| rng.range_f64(-0.5, 0.5));
    params.trans = Tensor::from_fn(k, k, |_, _| rng.range_f64(-1.0, 1.0));

    // log Z by enumeration: logsumexp of every path score.
    let scores: Vec<f64> = all_paths(t_len, k)
        .iter()
        .map(|p| path_score(&emissions, &params, p).unwrap())
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    println!("{} paths enumerated, log Z = {log_z:.8}", scores.len());

    // The same quantity from the forward recursion, recovered from the
    // tape NLL: nll(y) = log Z - score(y) for any labeled path y.
    let labeled = vec![0, 2, 1, 1];
    let mut tape = Tape::new(Mode::Train);
    let nodes = params.register(&mut tape);
    let em = tape.constant(emissions.clone());
    let nll = crf_nll(&mut tape, &nodes, em, &labeled)?;
    let recursion_log_z = tape.value(nll).item() + path_score(&emissions, &params, &labeled)?;
    println!("forward recursion    log Z = {recursion_log_z:.8}");
    println!("difference                 = {:.2e}", (log_z - recursion_log_z).abs());

    // Path probabilities exponentiate to a distribution.
    let total: f64 = scores.iter().map(|s| (s - log_z).exp()).sum();
    println!("sum of P(path) over all paths = {total:.10}");

    // Viterbi against argmax over the enumeration.
    let decoded = viterbi(&emissions, &params)?;
    let best = all_paths(t_len, k)
        .into_iter()
        .max_by(|a, b| {
            let sa = path_score(&emissions, &params, a).unwrap();
            let sb = path_score(&emissions, &params, b).unwrap();
            sa.partial_cmp(&sb).unwrap()
        })
        .unwrap();
    println!("viterbi path     {decoded:?}  score {:.6}", path_score(&emissions, &params, &decoded)?);
    println!("enumeration best {best:?}  score {:.6}", path_score(&emissions, &params, &best)?);

    // NLL gradients flow into transitions: one backward pass leaves the
    // expected-minus-observed feature counts in the grads.
    tape.backward(nll)?;
    let g = tape.grad(nodes.trans).unwrap();
    println!("\nd nll / d trans (expected minus observed transition counts):");
    for i in 0..k {
        let row: Vec<String> = g.row(i).iter().map(|v| format!("{v:+.4}")).collect();
        println!("  [{}]", row.join(", "));
    }
    Ok(())
}
