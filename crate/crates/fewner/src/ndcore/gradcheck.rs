use super::graph::{Mode, NodeId, Tape};
use super::tensor::Tensor;
use crate::error::Result;

/// Worst disagreement between tape gradients and central finite differences
/// for one scalar-valued graph.
#[derive(Clone, Copy, Debug)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn within(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel_err <= rel_tol || self.max_abs_err <= abs_tol
    }
}

/// Compares tape gradients against central finite differences.
///
/// `build` must construct the same scalar-valued graph every call, treating
/// the given tensors as the trainable leaves (registered via `tape.param` in
/// order). Any internal randomness (dropout masks) must be re-seeded inside
/// `build` so repeated evaluations see identical graphs.
///
/// Every element of every leaf is perturbed by +-h, so keep leaves small.
pub fn check_grads<F>(build: F, leaves: &[Tensor], h: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |inputs: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new(Mode::Train);
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let root = build(&mut tape, &ids)?;
        Ok((tape, ids, root))
    };

    let (mut tape, ids, root) = eval(leaves)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(leaves)
        .map(|(&id, leaf)| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(leaf.rows(), leaf.cols()))
        })
        .collect();

    let mut report = GradReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        for e in 0..leaf.numel() {
            let orig = leaf.data()[e];
            work[li].data_mut()[e] = orig + h;
            let (tape_p, _, root_p) = eval(&work)?;
            let fp = tape_p.value(root_p).item();
            work[li].data_mut()[e] = orig - h;
            let (tape_m, _, root_m) = eval(&work)?;
            let fm = tape_m.value(root_m).item();
            work[li].data_mut()[e] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let tape_grad = analytic[li].data()[e];
            let abs = (numeric - tape_grad).abs();
            let rel = abs / f64::max(numeric.abs() + tape_grad.abs(), 1e-8);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
