//! Versioned JSON model container. The fingerprint covers the architecture
//! (regime, encoder config, alphabet, tensor shapes) so a loader can reject
//! files whose declared layout was edited or mixed up, without hashing the
//! weight values themselves.

use std::collections::BTreeMap;
use std::path::Path;

use crate::crf::CrfParams;
use crate::encoder::{BiLstmParams, EncoderConfig, EncoderParams, LstmParams};
use crate::error::{Error, Result};
use crate::ndcore::{mix_seed, Tensor};
use crate::protohead::PrototypeSet;
use crate::regimes::{Regime, TrainedModel, TrainingHistory};

const VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TensorRepr {
    fn from_tensor(t: &Tensor) -> Self {
        TensorRepr {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        }
    }

    fn into_tensor(self, name: &str) -> Result<Tensor> {
        Tensor::from_vec(self.rows, self.cols, self.data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointFile {
    version: u32,
    fingerprint: String,
    regime: Regime,
    alphabet: Vec<String>,
    encoder_cfg: EncoderConfig,
    encoder: BTreeMap<String, TensorRepr>,
    crf: Option<BTreeMap<String, TensorRepr>>,
    prototypes: Option<BTreeMap<String, TensorRepr>>,
    history_loss: Vec<f64>,
    history_test_f1: Vec<f64>,
}

fn fingerprint(file: &CheckpointFile) -> String {
    let cfg = serde_json::to_string(&file.encoder_cfg).expect("config serializes");
    let mut parts: Vec<String> = vec![
        file.regime.id().to_string(),
        cfg,
        file.alphabet.join("\u{1f}"),
    ];
    let mut describe = |label: &str, map: &BTreeMap<String, TensorRepr>| {
        for (name, t) in map {
            parts.push(format!("{label}.{name}:{}x{}", t.rows, t.cols));
        }
    };
    describe("encoder", &file.encoder);
    if let Some(crf) = &file.crf {
        describe("crf", crf);
    }
    if let Some(protos) = &file.prototypes {
        describe("proto", protos);
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    format!("{:016x}", mix_seed(file.version as u64, &refs))
}

fn encoder_map(params: &EncoderParams) -> BTreeMap<String, TensorRepr> {
    params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| (name.to_string(), TensorRepr::from_tensor(t)))
        .collect()
}

fn take_tensor(
    map: &mut BTreeMap<String, TensorRepr>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Tensor> {
    let repr = map
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
    if (repr.rows, repr.cols) != (rows, cols) {
        return Err(Error::Checkpoint(format!(
            "tensor `{name}` is {}x{}, expected {rows}x{cols}",
            repr.rows, repr.cols
        )));
    }
    repr.into_tensor(name)
}

fn lstm_from(
    map: &mut BTreeMap<String, TensorRepr>,
    prefix: &str,
    input: usize,
    hidden: usize,
) -> Result<LstmParams> {
    Ok(LstmParams {
        wx: take_tensor(map, &format!("{prefix}_wx"), input, 4 * hidden)?,
        wh: take_tensor(map, &format!("{prefix}_wh"), hidden, 4 * hidden)?,
        b: take_tensor(map, &format!("{prefix}_b"), 1, 4 * hidden)?,
    })
}

fn encoder_from(cfg: &EncoderConfig, mut map: BTreeMap<String, TensorRepr>) -> Result<EncoderParams> {
    cfg.validate()?;
    let params = EncoderParams {
        cfg: *cfg,
        char_table: take_tensor(&mut map, "char_table", 256, cfg.char_dim)?,
        char_rnn: BiLstmParams {
            fwd: lstm_from(&mut map, "char_fwd", cfg.char_dim, cfg.char_hidden)?,
            bwd: lstm_from(&mut map, "char_bwd", cfg.char_dim, cfg.char_hidden)?,
        },
        word_rnn: BiLstmParams {
            fwd: lstm_from(&mut map, "word_fwd", cfg.token_input_width(), cfg.word_hidden)?,
            bwd: lstm_from(&mut map, "word_bwd", cfg.token_input_width(), cfg.word_hidden)?,
        },
        proj_w: take_tensor(&mut map, "proj_w", 2 * cfg.word_hidden, cfg.out_width)?,
        proj_b: take_tensor(&mut map, "proj_b", 1, cfg.out_width)?,
        b_o: if cfg.b_o_init.is_some() {
            Some(take_tensor(&mut map, "b_o", 1, 1)?)
        } else {
            None
        },
    };
    if let Some(extra) = map.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    Ok(params)
}

/// Writes a trained model as a single JSON document.
pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let crf = model.crf.as_ref().map(|c| {
        BTreeMap::from([
            ("start".to_string(), TensorRepr::from_tensor(&c.start)),
            ("end".to_string(), TensorRepr::from_tensor(&c.end)),
            ("trans".to_string(), TensorRepr::from_tensor(&c.trans)),
        ])
    });
    let prototypes = model.prototypes.as_ref().map(|set| {
        set.protos
            .iter()
            .map(|(tag, t)| (tag.clone(), TensorRepr::from_tensor(t)))
            .collect()
    });
    let mut file = CheckpointFile {
        version: VERSION,
        fingerprint: String::new(),
        regime: model.regime,
        alphabet: model.alphabet.clone(),
        encoder_cfg: model.encoder.cfg,
        encoder: encoder_map(&model.encoder),
        crf,
        prototypes,
        history_loss: model.history.loss.clone(),
        history_test_f1: model.history.test_f1.clone(),
    };
    file.fingerprint = fingerprint(&file);
    let mut body = serde_json::to_string(&file)?;
    body.push('\n');
    std::fs::write(path, body)?;
    Ok(())
}

/// Loads a model, rejecting unknown versions, fingerprint mismatches, and
/// layouts that disagree with the declared config.
pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let body = std::fs::read_to_string(path)?;
    let mut file: CheckpointFile = serde_json::from_str(&body)?;
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported container version {}",
            file.version
        )));
    }
    let stored = std::mem::take(&mut file.fingerprint);
    let computed = fingerprint(&file);
    if stored != computed {
        return Err(Error::Checkpoint(format!(
            "fingerprint mismatch: stored {stored}, computed {computed}"
        )));
    }
    let k = file.alphabet.len();
    let crf = match file.crf {
        None => None,
        Some(mut map) => {
            let params = CrfParams {
                start: take_tensor(&mut map, "start", 1, k)?,
                end: take_tensor(&mut map, "end", 1, k)?,
                trans: take_tensor(&mut map, "trans", k, k)?,
            };
            Some(params)
        }
    };
    let prototypes = match file.prototypes {
        None => None,
        Some(map) => {
            let mut protos = BTreeMap::new();
            for (tag, repr) in map {
                let t = take_shape_checked(repr, &tag, file.encoder_cfg.out_width)?;
                protos.insert(tag, t);
            }
            Some(PrototypeSet {
                alphabet: file.alphabet.clone(),
                protos,
            })
        }
    };
    Ok(TrainedModel {
        regime: file.regime,
        alphabet: file.alphabet,
        encoder: encoder_from(&file.encoder_cfg, file.encoder)?,
        crf,
        prototypes,
        history: TrainingHistory {
            loss: file.history_loss,
            test_f1: file.history_test_f1,
        },
    })
}

fn take_shape_checked(repr: TensorRepr, tag: &str, dim: usize) -> Result<Tensor> {
    if (repr.rows, repr.cols) != (1, dim) {
        return Err(Error::Checkpoint(format!(
            "prototype `{tag}` is {}x{}, expected 1x{dim}",
            repr.rows, repr.cols
        )));
    }
    repr.into_tensor(tag)
}
