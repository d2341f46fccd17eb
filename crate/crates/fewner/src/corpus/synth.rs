//! Synthetic corpus generation from a small JSON spec, for experiments that
//! must run in seconds instead of hours.

use std::collections::BTreeMap;

use super::{LabeledSentence, Scheme};
use crate::error::{Error, Result};
use crate::ndcore::Rng;

/// One entity class: the surface forms it can take (multi-token allowed)
/// and the probability that a generated sentence carries it.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ClassSpec {
    pub lexicon: Vec<String>,
    pub carrier_prob: f64,
}

/// Generator parameters. `sentence_len` bounds the number of background
/// tokens per sentence (inclusive); entities are inserted on top.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub classes: BTreeMap<String, ClassSpec>,
    pub background: Vec<String>,
    pub train_sentences: usize,
    pub validation_sentences: usize,
    pub sentence_len: [usize; 2],
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, class) in &self.classes {
            if class.lexicon.is_empty() {
                return Err(Error::Spec(format!("class {name} has an empty lexicon")));
            }
            if !(0.0..=1.0).contains(&class.carrier_prob) {
                return Err(Error::Spec(format!(
                    "class {name} carrier probability {} outside [0, 1]",
                    class.carrier_prob
                )));
            }
            if class.lexicon.iter().any(|e| e.trim().is_empty()) {
                return Err(Error::Spec(format!("class {name} has a blank entity")));
            }
        }
        if self.background.is_empty() {
            return Err(Error::Spec("background vocabulary is empty".into()));
        }
        let [lo, hi] = self.sentence_len;
        if lo == 0 || lo > hi {
            return Err(Error::Spec(format!(
                "sentence length range [{lo}, {hi}] is invalid"
            )));
        }
        Ok(())
    }
}

fn generate_sentence(spec: &SynthSpec, rng: &mut Rng) -> LabeledSentence {
    let [lo, hi] = spec.sentence_len;
    let len = lo + rng.below(hi - lo + 1);
    let mut pairs: Vec<(String, String)> = (0..len)
        .map(|_| (rng.choose(&spec.background).clone(), "O".to_string()))
        .collect();
    for (name, class) in &spec.classes {
        if !rng.chance(class.carrier_prob) {
            continue;
        }
        let surface = rng.choose(&class.lexicon);
        let words: Vec<&str> = surface.split_whitespace().collect();
        let at = rng.below(pairs.len() + 1);
        let block = words.iter().enumerate().map(|(w, word)| {
            let tag = if w == 0 {
                format!("B-{name}")
            } else {
                format!("I-{name}")
            };
            (word.to_string(), tag)
        });
        pairs.splice(at..at, block);
    }
    let (tokens, tags) = pairs.into_iter().unzip();
    LabeledSentence {
        tokens,
        tags,
        scheme: Scheme::Bio,
    }
}

/// Builds the train and validation corpora described by `spec`. Identical
/// seeds reproduce identical corpora.
pub fn generate_synthetic_corpus(
    spec: &SynthSpec,
    rng: &mut Rng,
) -> Result<(Vec<LabeledSentence>, Vec<LabeledSentence>)> {
    spec.validate()?;
    let train = (0..spec.train_sentences)
        .map(|_| generate_sentence(spec, rng))
        .collect();
    let validation = (0..spec.validation_sentences)
        .map(|_| generate_sentence(spec, rng))
        .collect();
    Ok((train, validation))
}
