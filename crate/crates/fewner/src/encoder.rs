//! Sentence encoder: fixed word embeddings concatenated with a trainable
//! byte-level bi-LSTM summary per token, a word-level bi-LSTM over the
//! sentence, dropout, and a linear projection to the output width (prototype
//! space or label logits).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::LabeledSentence;
use crate::error::{Error, Result};
use crate::ndcore::{NodeId, Rng, Tape, Tensor};

/// Fixed word-vector lookup. Lookups never fail: unknown words fall back to
/// their lowercase form, then to the zero vector. Entries are constants
/// during training; the byte-level channel carries the trainable signal.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Contract(format!(
                "embedding vector has {} entries, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        self.entries.insert(word.into(), vector);
        Ok(())
    }

    /// Copies the vector for `word` into `out` (exact match, then lowercase,
    /// then zeros).
    pub fn fill(&self, word: &str, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        if let Some(v) = self.entries.get(word) {
            out.copy_from_slice(v);
            return;
        }
        let lower = word.to_lowercase();
        if lower != word {
            if let Some(v) = self.entries.get(&lower) {
                out.copy_from_slice(v);
                return;
            }
        }
        out.fill(0.0);
    }

    /// Reads `word v1 v2 ... vD` lines. A first line of exactly two integer
    /// tokens is treated as a `count dim` header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut table: Option<EmbeddingTable> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if lineno == 0
                && fields.len() == 2
                && fields.iter().all(|f| f.parse::<usize>().is_ok())
            {
                let dim: usize = fields[1].parse().unwrap();
                if dim == 0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: 1,
                        msg: "header declares dimension 0".into(),
                    });
                }
                table = Some(EmbeddingTable::new(dim));
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            if fields.len() < 2 {
                return Err(parse_err("expected `word v1 v2 ...`".into()));
            }
            let vector: Vec<f64> = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(format!("bad number `{f}`")))
                })
                .collect::<Result<_>>()?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
            if vector.len() != t.dim {
                return Err(parse_err(format!(
                    "vector has {} entries, table dimension is {}",
                    vector.len(),
                    t.dim
                )));
            }
            t.entries.insert(fields[0].to_string(), vector);
        }
        table.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no embedding entries".into(),
        })
    }

    /// Fixed random vectors for a known vocabulary, for experiments without
    /// a pretrained table. Deterministic given the rng stream.
    pub fn random<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, rng: &mut Rng) -> Self {
        let mut table = EmbeddingTable::new(dim);
        let mut sorted: Vec<&str> = words.into_iter().collect();
        sorted.sort_unstable();
        sorted.dedup();
        for word in sorted {
            let v: Vec<f64> = (0..dim).map(|_| rng.range_f64(-1.0, 1.0)).collect();
            table.entries.insert(word.to_string(), v);
        }
        table
    }
}

/// Architecture widths plus the outside-bias switch. `out_width` is M in
/// prototype mode or the logit count in baseline mode; `b_o_init` is Some
/// exactly when the prototype head is attached.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
    pub out_width: usize,
    pub b_o_init: Option<f64>,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.word_dim,
            self.char_dim,
            self.char_hidden,
            self.word_hidden,
            self.out_width,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Spec("encoder dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Width of one token's input row: word vector plus both final states of
    /// the byte LSTM.
    pub fn token_input_width(&self) -> usize {
        self.word_dim + 2 * self.char_hidden
    }
}

/// One LSTM direction: stacked gate weights [input, 4H], recurrent weights
/// [H, 4H], gate bias [1, 4H], gates ordered input/forget/cell/output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

/// All trainable encoder tensors. Registered with the optimizer exactly once
/// each, in the order of `named_tensors`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub cfg: EncoderConfig,
    pub char_table: Tensor,
    pub char_rnn: BiLstmParams,
    pub word_rnn: BiLstmParams,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub b_o: Option<Tensor>,
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.range_f64(-a, a))
}

fn init_lstm(input: usize, hidden: usize, rng: &mut Rng) -> LstmParams {
    let mut b = Tensor::zeros(1, 4 * hidden);
    // Forget gates start open.
    for j in hidden..2 * hidden {
        b.set(0, j, 1.0);
    }
    LstmParams {
        wx: xavier(input, 4 * hidden, rng),
        wh: xavier(hidden, 4 * hidden, rng),
        b,
    }
}

/// Fresh parameters: Xavier-uniform weights, zero biases except forget gates
/// at 1, and the outside bias at its configured start value.
pub fn init_params(cfg: &EncoderConfig, rng: &mut Rng) -> Result<EncoderParams> {
    cfg.validate()?;
    Ok(EncoderParams {
        cfg: *cfg,
        char_table: xavier(256, cfg.char_dim, rng),
        char_rnn: BiLstmParams {
            fwd: init_lstm(cfg.char_dim, cfg.char_hidden, rng),
            bwd: init_lstm(cfg.char_dim, cfg.char_hidden, rng),
        },
        word_rnn: BiLstmParams {
            fwd: init_lstm(cfg.token_input_width(), cfg.word_hidden, rng),
            bwd: init_lstm(cfg.token_input_width(), cfg.word_hidden, rng),
        },
        proj_w: xavier(2 * cfg.word_hidden, cfg.out_width, rng),
        proj_b: Tensor::zeros(1, cfg.out_width),
        b_o: cfg.b_o_init.map(Tensor::scalar),
    })
}

impl EncoderParams {
    /// Stable (name, tensor) listing; the optimizer and checkpoints rely on
    /// this order.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out: Vec<(&'static str, &Tensor)> = vec![
            ("char_table", &self.char_table),
            ("char_fwd_wx", &self.char_rnn.fwd.wx),
            ("char_fwd_wh", &self.char_rnn.fwd.wh),
            ("char_fwd_b", &self.char_rnn.fwd.b),
            ("char_bwd_wx", &self.char_rnn.bwd.wx),
            ("char_bwd_wh", &self.char_rnn.bwd.wh),
            ("char_bwd_b", &self.char_rnn.bwd.b),
            ("word_fwd_wx", &self.word_rnn.fwd.wx),
            ("word_fwd_wh", &self.word_rnn.fwd.wh),
            ("word_fwd_b", &self.word_rnn.fwd.b),
            ("word_bwd_wx", &self.word_rnn.bwd.wx),
            ("word_bwd_wh", &self.word_rnn.bwd.wh),
            ("word_bwd_b", &self.word_rnn.bwd.b),
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
        ];
        if let Some(b_o) = &self.b_o {
            out.push(("b_o", b_o));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out: Vec<(&'static str, &mut Tensor)> = vec![
            ("char_table", &mut self.char_table),
            ("char_fwd_wx", &mut self.char_rnn.fwd.wx),
            ("char_fwd_wh", &mut self.char_rnn.fwd.wh),
            ("char_fwd_b", &mut self.char_rnn.fwd.b),
            ("char_bwd_wx", &mut self.char_rnn.bwd.wx),
            ("char_bwd_wh", &mut self.char_rnn.bwd.wh),
            ("char_bwd_b", &mut self.char_rnn.bwd.b),
            ("word_fwd_wx", &mut self.word_rnn.fwd.wx),
            ("word_fwd_wh", &mut self.word_rnn.fwd.wh),
            ("word_fwd_b", &mut self.word_rnn.fwd.b),
            ("word_bwd_wx", &mut self.word_rnn.bwd.wx),
            ("word_bwd_wh", &mut self.word_rnn.bwd.wh),
            ("word_bwd_b", &mut self.word_rnn.bwd.b),
            ("proj_w", &mut self.proj_w),
            ("proj_b", &mut self.proj_b),
        ];
        if let Some(b_o) = &mut self.b_o {
            out.push(("b_o", b_o));
        }
        out
    }

    /// Registers every tensor as a trainable tape leaf.
    pub fn register(&self, tape: &mut Tape) -> EncoderNodes {
        EncoderNodes {
            cfg: self.cfg,
            char_table: tape.param(self.char_table.clone()),
            char_rnn: BiLstmNodes {
                fwd: register_lstm(tape, &self.char_rnn.fwd),
                bwd: register_lstm(tape, &self.char_rnn.bwd),
            },
            word_rnn: BiLstmNodes {
                fwd: register_lstm(tape, &self.word_rnn.fwd),
                bwd: register_lstm(tape, &self.word_rnn.bwd),
            },
            proj_w: tape.param(self.proj_w.clone()),
            proj_b: tape.param(self.proj_b.clone()),
            b_o: self.b_o.as_ref().map(|t| tape.param(t.clone())),
        }
    }
}

fn register_lstm(tape: &mut Tape, p: &LstmParams) -> LstmNodes {
    LstmNodes {
        wx: tape.param(p.wx.clone()),
        wh: tape.param(p.wh.clone()),
        b: tape.param(p.b.clone()),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub wx: NodeId,
    pub wh: NodeId,
    pub b: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmNodes {
    pub fwd: LstmNodes,
    pub bwd: LstmNodes,
}

/// Tape handles for one registration of `EncoderParams`, in the same order
/// as `named_tensors`.
#[derive(Clone, Debug)]
pub struct EncoderNodes {
    pub cfg: EncoderConfig,
    pub char_table: NodeId,
    pub char_rnn: BiLstmNodes,
    pub word_rnn: BiLstmNodes,
    pub proj_w: NodeId,
    pub proj_b: NodeId,
    pub b_o: Option<NodeId>,
}

impl EncoderNodes {
    /// NodeIds aligned with `EncoderParams::named_tensors`.
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = vec![
            self.char_table,
            self.char_rnn.fwd.wx,
            self.char_rnn.fwd.wh,
            self.char_rnn.fwd.b,
            self.char_rnn.bwd.wx,
            self.char_rnn.bwd.wh,
            self.char_rnn.bwd.b,
            self.word_rnn.fwd.wx,
            self.word_rnn.fwd.wh,
            self.word_rnn.fwd.b,
            self.word_rnn.bwd.wx,
            self.word_rnn.bwd.wh,
            self.word_rnn.bwd.b,
            self.proj_w,
            self.proj_b,
        ];
        if let Some(b_o) = self.b_o {
            out.push(b_o);
        }
        out
    }
}

/// Runs one LSTM direction over the rows of `x`, returning hidden-state
/// nodes indexed by original row position.
fn lstm_direction(
    tape: &mut Tape,
    lstm: &LstmNodes,
    x: NodeId,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<NodeId>> {
    let t_len = tape.value(x).rows();
    let xproj = tape.matmul(x, lstm.wx)?;
    let mut h = tape.constant(Tensor::zeros(1, hidden));
    let mut c = tape.constant(Tensor::zeros(1, hidden));
    let mut states = vec![h; t_len];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let xt = tape.row(xproj, t)?;
        let hproj = tape.matmul(h, lstm.wh)?;
        let pre0 = tape.add(xt, hproj)?;
        let pre = tape.add(pre0, lstm.b)?;
        let i_gate = tape.slice_cols(pre, 0, hidden)?;
        let i_gate = tape.sigmoid(i_gate)?;
        let f_gate = tape.slice_cols(pre, hidden, 2 * hidden)?;
        let f_gate = tape.sigmoid(f_gate)?;
        let g_cell = tape.slice_cols(pre, 2 * hidden, 3 * hidden)?;
        let g_cell = tape.tanh(g_cell)?;
        let o_gate = tape.slice_cols(pre, 3 * hidden, 4 * hidden)?;
        let o_gate = tape.sigmoid(o_gate)?;
        let keep = tape.mul(f_gate, c)?;
        let write = tape.mul(i_gate, g_cell)?;
        c = tape.add(keep, write)?;
        let c_act = tape.tanh(c)?;
        h = tape.mul(o_gate, c_act)?;
        states[t] = h;
    }
    Ok(states)
}

/// Byte-level bi-LSTM summary of one word: both directions' final states,
/// concatenated into [1, 2 * char_hidden].
fn char_summary(tape: &mut Tape, nodes: &EncoderNodes, word: &str) -> Result<NodeId> {
    let bytes: Vec<usize> = word.bytes().map(|b| b as usize).collect();
    if bytes.is_empty() {
        return Err(Error::Contract("empty token".into()));
    }
    let embs = tape.gather_rows(nodes.char_table, &bytes)?;
    let h = nodes.cfg.char_hidden;
    let fwd = lstm_direction(tape, &nodes.char_rnn.fwd, embs, h, false)?;
    let bwd = lstm_direction(tape, &nodes.char_rnn.bwd, embs, h, true)?;
    tape.concat_cols(&[fwd[bytes.len() - 1], bwd[0]])
}

/// Encodes a batch of sentences on one tape, sharing byte-LSTM work across
/// repeated word surfaces. Returns one [T, out_width] node per sentence.
/// Dropout applies to the bi-LSTM output rows and only in train mode.
pub fn encode_batch(
    tape: &mut Tape,
    nodes: &EncoderNodes,
    table: &EmbeddingTable,
    sentences: &[&LabeledSentence],
    dropout: f64,
    rng: &mut Rng,
) -> Result<Vec<NodeId>> {
    if table.dim() != nodes.cfg.word_dim {
        return Err(Error::Contract(format!(
            "embedding table dimension {} does not match encoder word_dim {}",
            table.dim(),
            nodes.cfg.word_dim
        )));
    }
    let mut char_cache: BTreeMap<&str, NodeId> = BTreeMap::new();
    let mut out = Vec::with_capacity(sentences.len());
    for sentence in sentences {
        if sentence.is_empty() {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        let t_len = sentence.len();
        let mut word_vecs = Tensor::zeros(t_len, table.dim());
        for (t, token) in sentence.tokens.iter().enumerate() {
            table.fill(token, word_vecs.row_mut(t));
        }
        let word_part = tape.constant(word_vecs);
        let mut char_parts = Vec::with_capacity(t_len);
        for token in &sentence.tokens {
            let id = match char_cache.get(token.as_str()) {
                Some(&id) => id,
                None => {
                    let id = char_summary(tape, nodes, token)?;
                    char_cache.insert(token.as_str(), id);
                    id
                }
            };
            char_parts.push(id);
        }
        let char_part = tape.stack_rows(&char_parts)?;
        let x = tape.concat_cols(&[word_part, char_part])?;

        let h = nodes.cfg.word_hidden;
        let fwd = lstm_direction(tape, &nodes.word_rnn.fwd, x, h, false)?;
        let bwd = lstm_direction(tape, &nodes.word_rnn.bwd, x, h, true)?;
        let fwd_all = tape.stack_rows(&fwd)?;
        let bwd_all = tape.stack_rows(&bwd)?;
        let states = tape.concat_cols(&[fwd_all, bwd_all])?;
        let dropped = tape.dropout(states, dropout, rng)?;
        let projected = tape.matmul(dropped, nodes.proj_w)?;
        out.push(tape.add_row_vec(projected, nodes.proj_b)?);
    }
    Ok(out)
}

/// Single-sentence encoding; train/eval behavior follows the tape's mode.
pub fn encode(
    tape: &mut Tape,
    nodes: &EncoderNodes,
    table: &EmbeddingTable,
    sentence: &LabeledSentence,
    dropout: f64,
    rng: &mut Rng,
) -> Result<NodeId> {
    Ok(encode_batch(tape, nodes, table, &[sentence], dropout, rng)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Scheme;
    use crate::ndcore::Mode;

    fn test_cfg() -> EncoderConfig {
        EncoderConfig {
            word_dim: 6,
            char_dim: 4,
            char_hidden: 3,
            word_hidden: 5,
            out_width: 7,
            b_o_init: Some(-4.0),
        }
    }

    fn sentence(tokens: &[&str]) -> LabeledSentence {
        LabeledSentence::new(
            tokens.iter().map(|t| t.to_string()).collect(),
            tokens.iter().map(|_| "O".to_string()).collect(),
            Scheme::Bio,
        )
        .unwrap()
    }

    fn table_for(tokens: &[&str]) -> EmbeddingTable {
        let mut rng = Rng::seed(400);
        EmbeddingTable::random(tokens.iter().copied(), 6, &mut rng)
    }

    fn eval_encode(
        params: &EncoderParams,
        table: &EmbeddingTable,
        s: &LabeledSentence,
    ) -> Tensor {
        let mut tape = Tape::new(Mode::Eval);
        let nodes = params.register(&mut tape);
        let mut rng = Rng::seed(0);
        let id = encode(&mut tape, &nodes, table, s, 0.5, &mut rng).unwrap();
        tape.value(id).clone()
    }

    #[test]
    fn init_respects_configured_outside_bias_and_seed() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(7);
        let params = init_params(&cfg, &mut rng).unwrap();
        assert_eq!(params.b_o.as_ref().unwrap().item(), -4.0);
        let mut rng2 = Rng::seed(7);
        let params2 = init_params(&cfg, &mut rng2).unwrap();
        assert_eq!(params, params2);
        assert_eq!(params.named_tensors().len(), 16);
    }

    #[test]
    fn init_uses_xavier_bounds_and_open_forget_gates() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(8);
        let params = init_params(&cfg, &mut rng).unwrap();
        let w = &params.proj_w; // [10, 7]
        let a = (6.0_f64 / 17.0).sqrt();
        assert!(w.data().iter().all(|&v| v.abs() <= a));
        assert!(w.data().iter().any(|&v| v.abs() > 0.5 * a));
        let b = &params.word_rnn.fwd.b;
        for j in 0..4 * cfg.word_hidden {
            let want = if (cfg.word_hidden..2 * cfg.word_hidden).contains(&j) {
                1.0
            } else {
                0.0
            };
            assert_eq!(b.get(0, j), want);
        }
    }

    #[test]
    fn encoding_has_one_row_per_token() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(9);
        let params = init_params(&cfg, &mut rng).unwrap();
        let s = sentence(&["one", "two", "three", "four", "five"]);
        let enc = eval_encode(&params, &table_for(&["one", "two"]), &s);
        assert_eq!(enc.shape(), (5, 7));
    }

    #[test]
    fn eval_encoding_is_deterministic() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(10);
        let params = init_params(&cfg, &mut rng).unwrap();
        let s = sentence(&["alpha", "beta", "gamma"]);
        let table = table_for(&["alpha", "beta", "gamma"]);
        assert_eq!(eval_encode(&params, &table, &s), eval_encode(&params, &table, &s));
    }

    #[test]
    fn context_changes_reach_every_token_row() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(11);
        let params = init_params(&cfg, &mut rng).unwrap();
        let table = table_for(&["a", "b", "c", "d", "e", "x"]);
        let s1 = sentence(&["a", "b", "c", "d", "e"]);
        let s2 = sentence(&["a", "b", "c", "x", "e"]);
        let e1 = eval_encode(&params, &table, &s1);
        let e2 = eval_encode(&params, &table, &s2);
        // Token 1 precedes the edit, so only backward context sees it.
        let differs = e1.row(1).iter().zip(e2.row(1)).any(|(x, y)| x != y);
        assert!(differs, "bi-directional context did not propagate");
    }

    #[test]
    fn reversing_the_sentence_changes_encodings() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(12);
        let params = init_params(&cfg, &mut rng).unwrap();
        let table = table_for(&["p", "q", "r"]);
        let fwd = eval_encode(&params, &table, &sentence(&["p", "q", "r"]));
        let rev = eval_encode(&params, &table, &sentence(&["r", "q", "p"]));
        let differs = fwd.row(0).iter().zip(rev.row(2)).any(|(x, y)| x != y);
        assert!(differs);
    }

    #[test]
    fn tags_do_not_leak_into_the_encoding() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(13);
        let params = init_params(&cfg, &mut rng).unwrap();
        let table = table_for(&["acme", "rises"]);
        let plain = sentence(&["acme", "rises"]);
        let tagged = LabeledSentence::new(
            vec!["acme".into(), "rises".into()],
            vec!["B-ORG".into(), "O".into()],
            Scheme::Bio,
        )
        .unwrap();
        assert_eq!(
            eval_encode(&params, &table, &plain),
            eval_encode(&params, &table, &tagged)
        );
    }

    #[test]
    fn gradient_reaches_every_parameter_group() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(14);
        let params = init_params(&cfg, &mut rng).unwrap();
        let table = table_for(&["alpha", "beta", "gamma"]);
        let mut tape = Tape::new(Mode::Train);
        let nodes = params.register(&mut tape);
        let s = sentence(&["alpha", "beta", "gamma"]);
        let mut drop_rng = Rng::seed(15);
        let enc = encode(&mut tape, &nodes, &table, &s, 0.25, &mut drop_rng).unwrap();
        // Pull b_o into the objective so the whole group list is covered.
        let enc_sum = tape.sum(enc).unwrap();
        let b_o = nodes.b_o.unwrap();
        let with_bias = tape.add(enc_sum, b_o).unwrap();
        let loss = tape.mul(with_bias, with_bias).unwrap();
        tape.backward(loss).unwrap();
        for (name, id) in [
            ("char_table", nodes.char_table),
            ("char_fwd_wx", nodes.char_rnn.fwd.wx),
            ("char_bwd_wh", nodes.char_rnn.bwd.wh),
            ("word_fwd_wx", nodes.word_rnn.fwd.wx),
            ("word_bwd_b", nodes.word_rnn.bwd.b),
            ("proj_w", nodes.proj_w),
            ("proj_b", nodes.proj_b),
            ("b_o", b_o),
        ] {
            let norm: f64 = tape
                .grad(id)
                .map(|g| g.data().iter().map(|v| v * v).sum())
                .unwrap_or(0.0);
            assert!(norm > 1e-12, "no gradient reached {name}");
        }
    }

    #[test]
    fn empty_sentences_are_rejected() {
        let cfg = test_cfg();
        let mut rng = Rng::seed(16);
        let params = init_params(&cfg, &mut rng).unwrap();
        let table = EmbeddingTable::new(6);
        let mut tape = Tape::new(Mode::Eval);
        let nodes = params.register(&mut tape);
        let empty = LabeledSentence::new(vec![], vec![], Scheme::Bio).unwrap();
        let mut rng2 = Rng::seed(0);
        assert!(encode(&mut tape, &nodes, &table, &empty, 0.0, &mut rng2).is_err());
    }

    #[test]
    fn oov_words_resolve_through_lowercase_to_zero() {
        let mut table = EmbeddingTable::new(2);
        table.insert("paris", vec![1.0, 2.0]).unwrap();
        let mut out = [0.0; 2];
        table.fill("paris", &mut out);
        assert_eq!(out, [1.0, 2.0]);
        table.fill("Paris", &mut out);
        assert_eq!(out, [1.0, 2.0]);
        table.fill("tokyo", &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn embedding_files_load_with_and_without_headers() {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("plain.vec");
        std::fs::write(&plain, "paris 0.5 -1.0\nbonn 0.25 0.75\n").unwrap();
        let t = EmbeddingTable::load(&plain).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);

        let headed = dir.path().join("headed.vec");
        std::fs::write(&headed, "2 3\nparis 1 2 3\nbonn 4 5 6\n").unwrap();
        let t = EmbeddingTable::load(&headed).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn malformed_embedding_lines_report_their_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vec");
        std::fs::write(&path, "paris 0.5 1.0\nbonn 0.25\n").unwrap();
        let err = EmbeddingTable::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        std::fs::write(&path, "paris 0.5 oops\n").unwrap();
        let err = EmbeddingTable::load(&path).unwrap_err();
        assert!(err.to_string().contains("bad number"), "{err}");
    }
}
