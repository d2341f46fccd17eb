//! Metric classification head: tokens are scored by negative squared
//! distance to per-tag prototypes (support-set centroids in encoder output
//! space), with a single trainable bias as the outside logit. The alphabet
//! always lists O last so that bias sits in the final column.

use std::collections::BTreeMap;

use crate::corpus::{Episode, LabeledSentence};
use crate::crf::{self, CrfParams};
use crate::encoder::{encode_batch, EmbeddingTable, EncoderNodes, EncoderParams};
use crate::error::{Error, Result};
use crate::ndcore::{Mode, NodeId, Rng, Tape, Tensor};

/// Stand-in logit for an alphabet tag with no support tokens: effectively
/// probability zero without disturbing finite arithmetic.
pub const NEG_FILL: f64 = -1e4;

/// Per-tag centroid nodes built from tagged support tokens; differentiable
/// back into the encoder.
pub fn prototype_nodes_from_encodings(
    tape: &mut Tape,
    encodings: &[NodeId],
    tag_seqs: &[&[String]],
) -> Result<BTreeMap<String, NodeId>> {
    if encodings.len() != tag_seqs.len() {
        return Err(Error::Contract(
            "one tag sequence per support encoding is required".into(),
        ));
    }
    let mut buckets: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
    for (&enc, tags) in encodings.iter().zip(tag_seqs) {
        if tape.value(enc).rows() != tags.len() {
            return Err(Error::Contract(format!(
                "encoding has {} rows for {} tags",
                tape.value(enc).rows(),
                tags.len()
            )));
        }
        for (t, tag) in tags.iter().enumerate() {
            if tag != "O" {
                let row = tape.row(enc, t)?;
                buckets.entry(tag.clone()).or_default().push(row);
            }
        }
    }
    let mut protos = BTreeMap::new();
    for (tag, rows) in buckets {
        protos.insert(tag, tape.mean_nodes(&rows)?);
    }
    Ok(protos)
}

/// Logit row [1, K] for one encoded token: negative squared distance per
/// non-O alphabet tag, `NEG_FILL` where the support had no such tokens, and
/// the outside bias in the last column.
pub fn token_logit_row(
    tape: &mut Tape,
    row: NodeId,
    protos: &BTreeMap<String, NodeId>,
    b_o: NodeId,
    alphabet: &[String],
) -> Result<NodeId> {
    if alphabet.last().map(String::as_str) != Some("O") {
        return Err(Error::Contract("alphabet must end with O".into()));
    }
    let mut parts = Vec::with_capacity(alphabet.len());
    for tag in &alphabet[..alphabet.len() - 1] {
        match protos.get(tag) {
            Some(&proto) => {
                let d = tape.sq_dist(row, proto)?;
                parts.push(tape.neg(d)?);
            }
            None => parts.push(tape.constant(Tensor::scalar(NEG_FILL))),
        }
    }
    parts.push(b_o);
    tape.concat_cols(&parts)
}

/// Mean cross-entropy of the true tags over every query token.
pub fn cross_entropy_from_encodings(
    tape: &mut Tape,
    protos: &BTreeMap<String, NodeId>,
    b_o: NodeId,
    alphabet: &[String],
    query_encodings: &[NodeId],
    query_tag_seqs: &[&[String]],
) -> Result<NodeId> {
    let index: BTreeMap<&str, usize> = alphabet
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut losses = Vec::new();
    for (&enc, tags) in query_encodings.iter().zip(query_tag_seqs) {
        for (t, tag) in tags.iter().enumerate() {
            let &idx = index.get(tag.as_str()).ok_or_else(|| {
                Error::Contract(format!("query tag `{tag}` is outside the alphabet"))
            })?;
            let row = tape.row(enc, t)?;
            let logits = token_logit_row(tape, row, protos, b_o, alphabet)?;
            let norm = tape.logsumexp_all(logits)?;
            let truth = tape.elem(logits, 0, idx)?;
            losses.push(tape.sub(norm, truth)?);
        }
    }
    if losses.is_empty() {
        return Err(Error::Contract("episode has no query tokens".into()));
    }
    tape.mean_nodes(&losses)
}

/// Full episode objective: encode support (dropout follows the tape mode,
/// so it stays active during training), build prototypes, encode the query,
/// and average token cross-entropy.
pub fn episode_loss(
    tape: &mut Tape,
    nodes: &EncoderNodes,
    table: &EmbeddingTable,
    episode: &Episode,
    alphabet: &[String],
    dropout: f64,
    rng: &mut Rng,
) -> Result<NodeId> {
    let b_o = nodes
        .b_o
        .ok_or_else(|| Error::Contract("encoder was built without an outside bias".into()))?;
    let support_refs: Vec<&LabeledSentence> = episode.support.iter().collect();
    let query_refs: Vec<&LabeledSentence> = episode.query.iter().collect();
    if support_refs.is_empty() || query_refs.is_empty() {
        return Err(Error::Contract("episode needs support and query sentences".into()));
    }
    let support_enc = encode_batch(tape, nodes, table, &support_refs, dropout, rng)?;
    let support_tags: Vec<&[String]> = episode.support.iter().map(|s| s.tags.as_slice()).collect();
    let protos = prototype_nodes_from_encodings(tape, &support_enc, &support_tags)?;
    let query_enc = encode_batch(tape, nodes, table, &query_refs, dropout, rng)?;
    let query_tags: Vec<&[String]> = episode.query.iter().map(|s| s.tags.as_slice()).collect();
    cross_entropy_from_encodings(tape, &protos, b_o, alphabet, &query_enc, &query_tags)
}

/// Frozen per-tag centroids for prediction, with the task alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub alphabet: Vec<String>,
    pub protos: BTreeMap<String, Tensor>,
}

impl PrototypeSet {
    /// Logits for one encoded token row, `NEG_FILL` for absent tags and the
    /// outside bias last, mirroring `token_logit_row` on plain values.
    pub fn token_logits(&self, row: &[f64], b_o: f64) -> Vec<f64> {
        let k = self.alphabet.len();
        let mut out = Vec::with_capacity(k);
        for tag in &self.alphabet[..k - 1] {
            match self.protos.get(tag) {
                Some(proto) => {
                    let d: f64 = proto
                        .data()
                        .iter()
                        .zip(row)
                        .map(|(p, r)| (p - r) * (p - r))
                        .sum();
                    out.push(-d);
                }
                None => out.push(NEG_FILL),
            }
        }
        out.push(b_o);
        out
    }
}

/// Builds frozen prototypes from every tagged token in `sentences`, encoded
/// in eval mode (dropout off). Sentences without tagged tokens contribute
/// nothing, so passing a whole few-shot sample is fine.
pub fn build_prototype_set(
    params: &EncoderParams,
    table: &EmbeddingTable,
    sentences: &[&LabeledSentence],
    alphabet: &[String],
) -> Result<PrototypeSet> {
    if alphabet.last().map(String::as_str) != Some("O") {
        return Err(Error::Contract("alphabet must end with O".into()));
    }
    let mut tape = Tape::new(Mode::Eval);
    let nodes = params.register(&mut tape);
    let mut rng = Rng::seed(0);
    let encodings = encode_batch(&mut tape, &nodes, table, sentences, 0.0, &mut rng)?;
    let dim = params.cfg.out_width;
    let mut sums: BTreeMap<String, (Tensor, usize)> = BTreeMap::new();
    for (enc, sentence) in encodings.iter().zip(sentences) {
        let values = tape.value(*enc);
        for (t, tag) in sentence.tags.iter().enumerate() {
            if tag != "O" {
                let entry = sums
                    .entry(tag.clone())
                    .or_insert_with(|| (Tensor::zeros(1, dim), 0));
                for (acc, v) in entry.0.data_mut().iter_mut().zip(values.row(t)) {
                    *acc += v;
                }
                entry.1 += 1;
            }
        }
    }
    let mut protos = BTreeMap::new();
    for (tag, (mut sum, count)) in sums {
        let inv = 1.0 / count as f64;
        for v in sum.data_mut() {
            *v *= inv;
        }
        protos.insert(tag, sum);
    }
    Ok(PrototypeSet {
        alphabet: alphabet.to_vec(),
        protos,
    })
}

/// Normalized tag distribution for one token.
#[derive(Clone, Debug)]
pub struct TokenDistribution {
    pub alphabet: Vec<String>,
    pub probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn from_logits(alphabet: &[String], logits: &[f64]) -> Self {
        debug_assert_eq!(alphabet.len(), logits.len());
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        TokenDistribution {
            alphabet: alphabet.to_vec(),
            probs: exps.iter().map(|e| e / total).collect(),
        }
    }

    pub fn prob_of(&self, tag: &str) -> f64 {
        self.alphabet
            .iter()
            .position(|t| t == tag)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }
}

/// Decoding rule for prediction: per-token argmax, or Viterbi under a
/// transition model.
#[derive(Clone, Copy, Debug)]
pub enum Decode<'a> {
    Independent,
    Crf(&'a CrfParams),
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicts tag sequences for a batch of sentences with frozen parameters
/// and prototypes (eval mode throughout). Ties break toward the lower
/// alphabet index in both decoders.
pub fn predict_tags_batch(
    params: &EncoderParams,
    table: &EmbeddingTable,
    set: &PrototypeSet,
    sentences: &[&LabeledSentence],
    decode: Decode,
) -> Result<Vec<Vec<String>>> {
    let b_o = params
        .b_o
        .as_ref()
        .ok_or_else(|| Error::Contract("encoder was built without an outside bias".into()))?
        .item();
    let mut tape = Tape::new(Mode::Eval);
    let nodes = params.register(&mut tape);
    let mut rng = Rng::seed(0);
    let encodings = encode_batch(&mut tape, &nodes, table, sentences, 0.0, &mut rng)?;
    let k = set.alphabet.len();
    let mut out = Vec::with_capacity(sentences.len());
    for (enc, sentence) in encodings.iter().zip(sentences) {
        let values = tape.value(*enc);
        let mut emissions = Tensor::zeros(sentence.len(), k);
        for t in 0..sentence.len() {
            let logits = set.token_logits(values.row(t), b_o);
            emissions.row_mut(t).copy_from_slice(&logits);
        }
        let indices = match decode {
            Decode::Independent => (0..sentence.len())
                .map(|t| argmax_lowest(emissions.row(t)))
                .collect::<Vec<_>>(),
            Decode::Crf(crf_params) => crf::viterbi(&emissions, crf_params)?,
        };
        out.push(indices.into_iter().map(|i| set.alphabet[i].clone()).collect());
    }
    Ok(out)
}

pub fn predict_tags(
    params: &EncoderParams,
    table: &EmbeddingTable,
    set: &PrototypeSet,
    sentence: &LabeledSentence,
    decode: Decode,
) -> Result<Vec<String>> {
    Ok(predict_tags_batch(params, table, set, &[sentence], decode)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{class_alphabet, Scheme};
    use crate::encoder::{init_params, EncoderConfig};
    use crate::ndcore::check_grads;

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|t| t.to_string()).collect()
    }

    fn sent(tokens: &[&str], tag_list: &[&str]) -> LabeledSentence {
        LabeledSentence::new(
            tokens.iter().map(|t| t.to_string()).collect(),
            tags(tag_list),
            Scheme::Bio,
        )
        .unwrap()
    }

    fn test_cfg() -> EncoderConfig {
        EncoderConfig {
            word_dim: 5,
            char_dim: 3,
            char_hidden: 2,
            word_hidden: 4,
            out_width: 6,
            b_o_init: Some(-4.0),
        }
    }

    /// Straight-line recomputation of the episode objective, no tape.
    fn reference_loss(
        support: &[(&Tensor, Vec<&str>)],
        query: &[(&Tensor, Vec<&str>)],
        alphabet: &[String],
        b_o: f64,
    ) -> f64 {
        let dim = support[0].0.cols();
        let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for (enc, tag_list) in support {
            for (t, tag) in tag_list.iter().enumerate() {
                if *tag != "O" {
                    let e = sums.entry(tag).or_insert((vec![0.0; dim], 0));
                    for (a, v) in e.0.iter_mut().zip(enc.row(t)) {
                        *a += v;
                    }
                    e.1 += 1;
                }
            }
        }
        let protos: BTreeMap<&str, Vec<f64>> = sums
            .into_iter()
            .map(|(tag, (s, n))| (tag, s.iter().map(|v| v / n as f64).collect()))
            .collect();
        let mut total = 0.0;
        let mut count = 0;
        for (enc, tag_list) in query {
            for (t, tag) in tag_list.iter().enumerate() {
                let logits: Vec<f64> = alphabet
                    .iter()
                    .map(|a| {
                        if a == "O" {
                            b_o
                        } else {
                            match protos.get(a.as_str()) {
                                Some(p) => {
                                    -p.iter()
                                        .zip(enc.row(t))
                                        .map(|(x, y)| (x - y) * (x - y))
                                        .sum::<f64>()
                                }
                                None => NEG_FILL,
                            }
                        }
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                let idx = alphabet.iter().position(|a| a == tag).unwrap();
                total += lse - logits[idx];
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn toy_episode_loss_matches_reference_computation() {
        let alphabet = class_alphabet("LOC", Scheme::Bio);
        let s1 = Tensor::from_vec(3, 2, vec![1.0, 0.0, 0.5, 0.5, -1.0, 2.0]).unwrap();
        let s2 = Tensor::from_vec(2, 2, vec![0.8, 0.1, 0.0, 0.0]).unwrap();
        let q1 = Tensor::from_vec(2, 2, vec![0.9, 0.2, -0.4, 1.1]).unwrap();
        let s1_tags = tags(&["B-LOC", "I-LOC", "O"]);
        let s2_tags = tags(&["B-LOC", "O"]);
        let q1_tags = tags(&["B-LOC", "O"]);
        let b_o = -4.0;

        let mut tape = Tape::new(Mode::Train);
        let e1 = tape.constant(s1.clone());
        let e2 = tape.constant(s2.clone());
        let eq = tape.constant(q1.clone());
        let b = tape.param(Tensor::scalar(b_o));
        let protos =
            prototype_nodes_from_encodings(&mut tape, &[e1, e2], &[&s1_tags, &s2_tags]).unwrap();
        let loss =
            cross_entropy_from_encodings(&mut tape, &protos, b, &alphabet, &[eq], &[&q1_tags])
                .unwrap();

        let want = reference_loss(
            &[(&s1, vec!["B-LOC", "I-LOC", "O"]), (&s2, vec!["B-LOC", "O"])],
            &[(&q1, vec!["B-LOC", "O"])],
            &alphabet,
            b_o,
        );
        assert!((tape.value(loss).item() - want).abs() < 1e-12);
    }

    #[test]
    fn token_on_its_own_prototype_scores_the_closed_form_probability() {
        let alphabet = class_alphabet("PER", Scheme::Bio);
        let mut set = PrototypeSet {
            alphabet: alphabet.clone(),
            protos: BTreeMap::new(),
        };
        set.protos.insert(
            "B-PER".into(),
            Tensor::from_vec(1, 3, vec![0.3, -0.7, 2.0]).unwrap(),
        );
        let logits = set.token_logits(&[0.3, -0.7, 2.0], -4.0);
        let dist = TokenDistribution::from_logits(&alphabet, &logits);
        let want = 1.0 / (1.0 + (-4.0_f64).exp() + (NEG_FILL - 0.0_f64).exp());
        assert!((dist.prob_of("B-PER") - want).abs() < 1e-12);
        assert!((dist.prob_of("B-PER") - 0.982_013_790_037_908_4).abs() < 1e-9);
    }

    #[test]
    fn distributions_are_normalized_and_translation_invariant() {
        let alphabet = class_alphabet("ORG", Scheme::Bio);
        let proto_b = vec![0.4, -1.2];
        let proto_i = vec![2.0, 0.3];
        let row = [0.1, 0.2];
        let shift = [10.0, -3.0];
        let build = |delta: &[f64]| {
            let mut set = PrototypeSet {
                alphabet: alphabet.clone(),
                protos: BTreeMap::new(),
            };
            let shifted = |v: &[f64]| {
                Tensor::from_vec(1, 2, v.iter().zip(delta).map(|(a, d)| a + d).collect()).unwrap()
            };
            set.protos.insert("B-ORG".into(), shifted(&proto_b));
            set.protos.insert("I-ORG".into(), shifted(&proto_i));
            let moved: Vec<f64> = row.iter().zip(delta).map(|(a, d)| a + d).collect();
            TokenDistribution::from_logits(&alphabet, &set.token_logits(&moved, -4.0))
        };
        let base = build(&[0.0, 0.0]);
        let moved = build(&shift);
        let sum: f64 = base.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for (a, b) in base.probs.iter().zip(&moved.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_the_outside_bias_raises_outside_probability() {
        let alphabet = class_alphabet("LOC", Scheme::Bio);
        let mut set = PrototypeSet {
            alphabet: alphabet.clone(),
            protos: BTreeMap::new(),
        };
        set.protos
            .insert("B-LOC".into(), Tensor::from_vec(1, 2, vec![1.0, 1.0]).unwrap());
        let row = [0.0, 0.0];
        let mut last = 0.0;
        for b_o in [-6.0, -4.0, -2.0, 0.0, 2.0] {
            let dist = TokenDistribution::from_logits(&alphabet, &set.token_logits(&row, b_o));
            let p = dist.prob_of("O");
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn tags_absent_from_support_are_effectively_impossible() {
        let alphabet = class_alphabet("LOC", Scheme::Bio);
        let mut set = PrototypeSet {
            alphabet: alphabet.clone(),
            protos: BTreeMap::new(),
        };
        set.protos
            .insert("B-LOC".into(), Tensor::from_vec(1, 2, vec![5.0, 5.0]).unwrap());
        // I-LOC has no prototype; even far from B-LOC it must not win.
        let logits = set.token_logits(&[-5.0, -5.0], -4.0);
        let dist = TokenDistribution::from_logits(&alphabet, &logits);
        assert!(dist.prob_of("I-LOC") < 1e-40);
        assert_eq!(argmax_lowest(&logits), 2);
    }

    #[test]
    fn episode_loss_gradients_match_finite_differences() {
        let alphabet = class_alphabet("LOC", Scheme::Bio);
        let s_tags = tags(&["B-LOC", "I-LOC", "O"]);
        let q_tags = tags(&["O", "B-LOC"]);
        let leaves = vec![
            Tensor::from_vec(3, 2, vec![0.4, -0.2, 1.1, 0.3, -0.6, 0.9]).unwrap(),
            Tensor::from_vec(2, 2, vec![0.2, 0.1, -0.9, 0.5]).unwrap(),
            Tensor::scalar(-4.0),
        ];
        let report = check_grads(
            |tape, ids| {
                let protos =
                    prototype_nodes_from_encodings(tape, &[ids[0]], &[&s_tags])?;
                cross_entropy_from_encodings(tape, &protos, ids[2], &alphabet, &[ids[1]], &[&q_tags])
            },
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.within(1e-6, 1e-8), "{report:?}");
    }

    #[test]
    fn training_mode_dropout_is_live_on_support_and_query() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(21);
        let params = init_params(&cfg, &mut rng).unwrap();
        let table = EmbeddingTable::random(["acme", "visits", "rome"], cfg.word_dim, &mut rng);
        let episode = Episode {
            support: vec![sent(&["rome", "visits"], &["B-LOC", "O"])],
            query: vec![sent(&["acme", "rome"], &["O", "B-LOC"])],
        };
        let alphabet = class_alphabet("LOC", Scheme::Bio);
        let run = |mode: Mode, seed: u64| {
            let mut tape = Tape::new(mode);
            let nodes = params.register(&mut tape);
            let mut drop_rng = Rng::seed(seed);
            let loss =
                episode_loss(&mut tape, &nodes, &table, &episode, &alphabet, 0.5, &mut drop_rng)
                    .unwrap();
            tape.value(loss).item()
        };
        assert_ne!(run(Mode::Train, 1), run(Mode::Train, 2));
        assert_eq!(run(Mode::Eval, 1), run(Mode::Eval, 2));
    }

    #[test]
    fn prototype_set_ignores_untagged_sentences() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(22);
        let params = init_params(&cfg, &mut rng).unwrap();
        let table = EmbeddingTable::random(["a", "b", "c"], cfg.word_dim, &mut rng);
        let alphabet = class_alphabet("LOC", Scheme::Bio);
        let carrier = sent(&["a", "b"], &["B-LOC", "O"]);
        let empty = sent(&["c", "c"], &["O", "O"]);
        let with_empty =
            build_prototype_set(&params, &table, &[&carrier, &empty], &alphabet).unwrap();
        let carriers_only = build_prototype_set(&params, &table, &[&carrier], &alphabet).unwrap();
        assert_eq!(with_empty, carriers_only);
        assert!(with_empty.protos.contains_key("B-LOC"));
        assert!(!with_empty.protos.contains_key("I-LOC"));
    }

    #[test]
    fn prediction_supports_both_decoders() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(23);
        let params = init_params(&cfg, &mut rng).unwrap();
        let table = EmbeddingTable::random(["rome", "in"], cfg.word_dim, &mut rng);
        let alphabet = class_alphabet("LOC", Scheme::Bio);
        let carrier = sent(&["rome", "in"], &["B-LOC", "O"]);
        let set = build_prototype_set(&params, &table, &[&carrier], &alphabet).unwrap();
        let target = sent(&["in", "rome"], &["O", "O"]);
        let free = predict_tags(&params, &table, &set, &target, Decode::Independent).unwrap();
        assert_eq!(free.len(), 2);
        assert!(free.iter().all(|t| alphabet.contains(t)));
        let crf_params = CrfParams::zeros(alphabet.len());
        let viterbi =
            predict_tags(&params, &table, &set, &target, Decode::Crf(&crf_params)).unwrap();
        // Zero transitions make Viterbi agree with per-token argmax.
        assert_eq!(free, viterbi);
    }

    #[test]
    fn query_tags_outside_the_alphabet_are_rejected() {
        let alphabet = class_alphabet("LOC", Scheme::Bio);
        let mut tape = Tape::new(Mode::Train);
        let enc = tape.constant(Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap());
        let b = tape.param(Tensor::scalar(-4.0));
        let stray = tags(&["B-PER"]);
        let protos = BTreeMap::new();
        let err =
            cross_entropy_from_encodings(&mut tape, &protos, b, &alphabet, &[enc], &[&stray]);
        assert!(err.is_err());
    }
}
