//! Chunk extraction, TO-to-BIO reconstruction, and chunk-level micro F1 for
//! a single target class.

use std::io::Write;
use std::path::Path;

use crate::corpus::{class_of, LabeledSentence};
use crate::error::{Error, Result};

/// One labeled chunk: class plus token span [start, end).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChunkSpan {
    pub class: String,
    pub start: usize,
    pub end: usize,
}

/// Micro-aggregated counts and the derived precision/recall/F1, with the
/// convention that 0/0 ratios are 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Report {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl F1Report {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        F1Report {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Recovers chunks from a BIO sequence, leniently: a chunk starts at B-X, or
/// at an I-X whose predecessor does not continue the same class; it extends
/// through consecutive I-X of the same class.
pub fn extract_chunks(tags: &[String]) -> Vec<ChunkSpan> {
    let mut chunks = Vec::new();
    let mut open: Option<ChunkSpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, class) = match tag.split_once('-') {
            Some((p @ ("B" | "I"), c)) => (p, c),
            _ => {
                if let Some(c) = open.take() {
                    chunks.push(c);
                }
                continue;
            }
        };
        let continues = prefix == "I"
            && open
                .as_ref()
                .map(|c| c.class == class && c.end == i)
                .unwrap_or(false);
        if continues {
            open.as_mut().unwrap().end = i + 1;
        } else {
            if let Some(c) = open.take() {
                chunks.push(c);
            }
            open = Some(ChunkSpan {
                class: class.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    if let Some(c) = open {
        chunks.push(c);
    }
    chunks
}

/// Rebuilds BIO tags from a TO sequence: a class tag after O, sentence
/// start, or a different class opens a chunk (B); after the same class it
/// continues one (I).
pub fn to_to_bio(tags: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev: Option<&str> = None;
    for tag in tags {
        if tag == "O" {
            out.push("O".to_string());
            prev = None;
        } else {
            let class = class_of(tag).unwrap_or(tag);
            if prev == Some(class) {
                out.push(format!("I-{class}"));
            } else {
                out.push(format!("B-{class}"));
            }
            prev = Some(class);
        }
    }
    out
}

/// Chunk-level micro F1 for `class` over a test set. Gold tags must be BIO;
/// predictions in the reduced scheme should pass through `to_to_bio` first.
pub fn chunk_f1(gold: &[LabeledSentence], pred: &[Vec<String>], class: &str) -> Result<F1Report> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} gold sentences vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::Contract(format!(
                "sentence has {} tokens but {} predicted tags",
                g.len(),
                p.len()
            )));
        }
        let gold_chunks: Vec<ChunkSpan> = extract_chunks(&g.tags)
            .into_iter()
            .filter(|c| c.class == class)
            .collect();
        let pred_chunks: Vec<ChunkSpan> = extract_chunks(p)
            .into_iter()
            .filter(|c| c.class == class)
            .collect();
        for c in &pred_chunks {
            if gold_chunks.contains(c) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        for c in &gold_chunks {
            if !pred_chunks.contains(c) {
                fn_ += 1;
            }
        }
    }
    Ok(F1Report::from_counts(tp, fp, fn_))
}

/// Writes `token gold pred` rows in the layout external CoNLL scorers read.
pub fn write_three_column(
    path: impl AsRef<Path>,
    gold: &[LabeledSentence],
    pred: &[Vec<String>],
) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} gold sentences vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Contract(format!(
                "sentence has {} tokens but {} predicted tags",
                g.len(),
                p.len()
            )));
        }
        if i > 0 {
            writeln!(file)?;
        }
        for ((token, gt), pt) in g.tokens.iter().zip(&g.tags).zip(p) {
            writeln!(file, "{token} {gt} {pt}")?;
        }
    }
    file.flush()?;
    Ok(())
}
