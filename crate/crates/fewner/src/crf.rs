//! Linear-chain CRF scoring layer: negative log-likelihood on the tape and
//! value-level Viterbi decoding.
//!
//! A path y_1..y_T over K tags scores
//! start[y_1] + sum_t emit[t][y_t] + sum_t trans[y_{t-1}][y_t] + end[y_T],
//! and the partition function is computed by the log-space forward recursion.

use crate::error::{Error, Result};
use crate::ndcore::{NodeId, Tape, Tensor};

/// Transition parameters. `trans[i][j]` scores moving from tag i to tag j.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    pub start: Tensor,
    pub end: Tensor,
    pub trans: Tensor,
}

impl CrfParams {
    /// Fresh zero-scored transitions over `k` tags.
    pub fn zeros(k: usize) -> Self {
        CrfParams {
            start: Tensor::zeros(1, k),
            end: Tensor::zeros(1, k),
            trans: Tensor::zeros(k, k),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.start.cols()
    }

    /// Registers the parameters as trainable leaves on a tape.
    pub fn register(&self, tape: &mut Tape) -> CrfNodes {
        CrfNodes {
            start: tape.param(self.start.clone()),
            end: tape.param(self.end.clone()),
            trans: tape.param(self.trans.clone()),
            k: self.num_tags(),
        }
    }
}

/// Tape handles for one registration of `CrfParams`.
#[derive(Clone, Copy, Debug)]
pub struct CrfNodes {
    pub start: NodeId,
    pub end: NodeId,
    pub trans: NodeId,
    pub k: usize,
}

fn check_sequence(op: &'static str, t_len: usize, k: usize, tags: &[usize]) -> Result<()> {
    if t_len == 0 {
        return Err(Error::Contract(format!("{op}: empty sequence")));
    }
    if tags.len() != t_len {
        return Err(Error::shape(
            op,
            format!("{} tags for {} emission rows", tags.len(), t_len),
        ));
    }
    if let Some(&bad) = tags.iter().find(|&&y| y >= k) {
        return Err(Error::shape(op, format!("tag {bad} out of range for K={k}")));
    }
    Ok(())
}

/// Negative log-likelihood of `tags` under the CRF, as a tape scalar.
/// `emissions` is a [T, K] node of per-token tag scores.
pub fn crf_nll(
    tape: &mut Tape,
    crf: &CrfNodes,
    emissions: NodeId,
    tags: &[usize],
) -> Result<NodeId> {
    let (t_len, k) = tape.value(emissions).shape();
    if k != crf.k {
        return Err(Error::shape(
            "crf_nll",
            format!("emissions have {k} tags, CRF has {}", crf.k),
        ));
    }
    check_sequence("crf_nll", t_len, k, tags)?;

    // Forward recursion for log Z.
    let first = tape.row(emissions, 0)?;
    let mut alpha = tape.add(first, crf.start)?;
    for t in 1..t_len {
        let scores = tape.add_col_vec(crf.trans, alpha)?;
        let reduced = tape.logsumexp_cols(scores)?;
        let emit_t = tape.row(emissions, t)?;
        alpha = tape.add(reduced, emit_t)?;
    }
    let final_scores = tape.add(alpha, crf.end)?;
    let log_z = tape.logsumexp_all(final_scores)?;

    // Score of the labeled path.
    let mut parts = Vec::with_capacity(2 * t_len + 2);
    parts.push(tape.elem(crf.start, 0, tags[0])?);
    for (t, &y) in tags.iter().enumerate() {
        parts.push(tape.elem(emissions, t, y)?);
        if t > 0 {
            parts.push(tape.elem(crf.trans, tags[t - 1], y)?);
        }
    }
    parts.push(tape.elem(crf.end, 0, tags[t_len - 1])?);
    let stacked = tape.stack_rows(&parts)?;
    let score = tape.sum(stacked)?;

    tape.sub(log_z, score)
}

/// Value-level score of one path; the quantity `crf_nll` subtracts.
pub fn path_score(emissions: &Tensor, params: &CrfParams, tags: &[usize]) -> Result<f64> {
    let (t_len, k) = emissions.shape();
    if k != params.num_tags() {
        return Err(Error::shape(
            "path_score",
            format!("emissions have {k} tags, CRF has {}", params.num_tags()),
        ));
    }
    check_sequence("path_score", t_len, k, tags)?;
    let mut score = params.start.get(0, tags[0]) + params.end.get(0, tags[t_len - 1]);
    for (t, &y) in tags.iter().enumerate() {
        score += emissions.get(t, y);
        if t > 0 {
            score += params.trans.get(tags[t - 1], y);
        }
    }
    Ok(score)
}

/// Highest-scoring tag path. Score ties resolve to the lowest tag index at
/// every decision, so decoding is fully deterministic.
pub fn viterbi(emissions: &Tensor, params: &CrfParams) -> Result<Vec<usize>> {
    let (t_len, k) = emissions.shape();
    if k != params.num_tags() {
        return Err(Error::shape(
            "viterbi",
            format!("emissions have {k} tags, CRF has {}", params.num_tags()),
        ));
    }
    if t_len == 0 {
        return Err(Error::Contract("viterbi: empty sequence".into()));
    }

    let mut delta: Vec<f64> = (0..k)
        .map(|j| params.start.get(0, j) + emissions.get(0, j))
        .collect();
    let mut backptr: Vec<Vec<usize>> = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; k];
        let mut bp = vec![0usize; k];
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, &d) in delta.iter().enumerate() {
                let s = d + params.trans.get(i, j);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + emissions.get(t, j);
            bp[j] = arg;
        }
        delta = next;
        backptr.push(bp);
    }

    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, &d) in delta.iter().enumerate() {
        let s = d + params.end.get(0, j);
        if s > best {
            best = s;
            last = j;
        }
    }

    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = backptr[t - 1][path[t]];
    }
    Ok(path)
}

#[cfg(test)]
pub mod enumeration {
    //! Brute-force reference over all K^T paths, usable as an oracle for
    //! the forward recursion and Viterbi on small instances.
    use super::*;

    pub fn all_paths(t_len: usize, k: usize) -> Vec<Vec<usize>> {
        let mut paths = vec![vec![]];
        for _ in 0..t_len {
            let mut next = Vec::with_capacity(paths.len() * k);
            for p in &paths {
                for y in 0..k {
                    let mut q = p.clone();
                    q.push(y);
                    next.push(q);
                }
            }
            paths = next;
        }
        paths
    }

    pub fn log_partition(emissions: &Tensor, params: &CrfParams) -> f64 {
        let (t_len, k) = emissions.shape();
        let scores: Vec<f64> = all_paths(t_len, k)
            .iter()
            .map(|p| path_score(emissions, params, p).unwrap())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
    }

    pub fn best_path(emissions: &Tensor, params: &CrfParams) -> (Vec<usize>, f64, usize) {
        let (t_len, k) = emissions.shape();
        let mut best_score = f64::NEG_INFINITY;
        let mut best = Vec::new();
        let mut ties = 0;
        for p in all_paths(t_len, k) {
            let s = path_score(emissions, params, &p).unwrap();
            if s > best_score + 1e-12 {
                best_score = s;
                best = p;
                ties = 1;
            } else if (s - best_score).abs() <= 1e-12 {
                ties += 1;
            }
        }
        (best, best_score, ties)
    }
}
