//! Data layer: CoNLL-column reading and writing, BIO/TO label schemes,
//! per-target-class relabeling into task views, episode sampling, and a
//! synthetic corpus generator.

pub mod sampling;
pub mod synth;

pub use sampling::{
    empty_count, sample_in_domain, sample_out_of_domain_episode,
    sample_out_of_domain_episode_indexed, split_episode, Episode, PoolIndex,
};
pub use synth::{generate_synthetic_corpus, ClassSpec, SynthSpec};

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::Rng;

/// Label scheme. BIO marks chunk boundaries (B-X, I-X, O); TO keeps only
/// class presence (X, O).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    #[default]
    #[serde(rename = "bio")]
    Bio,
    #[serde(rename = "to")]
    To,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Bio => write!(f, "bio"),
            Scheme::To => write!(f, "to"),
        }
    }
}

/// One tokenized sentence with a parallel tag column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub scheme: Scheme,
}

impl LabeledSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>, scheme: Scheme) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::Contract(format!(
                "sentence has {} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        Ok(LabeledSentence {
            tokens,
            tags,
            scheme,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True if any tag refers to `class`.
    pub fn carries(&self, class: &str) -> bool {
        self.tags.iter().any(|t| class_of(t) == Some(class))
    }

    /// True if every tag is O.
    pub fn is_all_o(&self) -> bool {
        self.tags.iter().all(|t| t == "O")
    }
}

/// Class named by a tag: `B-X`/`I-X` give X (BIO), a bare `X` gives X (TO),
/// and `O` gives none.
pub fn class_of(tag: &str) -> Option<&str> {
    if tag == "O" {
        return None;
    }
    match tag.split_once('-') {
        Some(("B" | "I", class)) => Some(class),
        _ => Some(tag),
    }
}

/// Sorted distinct class names appearing in a corpus.
pub fn classes(corpus: &[LabeledSentence]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for s in corpus {
        for t in &s.tags {
            if let Some(c) = class_of(t) {
                set.insert(c.to_string());
            }
        }
    }
    set.into_iter().collect()
}

/// Ordered tag list for a pool: non-O tags sorted lexicographically, O last.
/// The O-last convention is what lets classifier heads treat the final
/// column as the outside logit.
pub fn alphabet(corpus: &[LabeledSentence]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for s in corpus {
        for t in &s.tags {
            if t != "O" {
                set.insert(t.clone());
            }
        }
    }
    let mut out: Vec<String> = set.into_iter().collect();
    out.push("O".to_string());
    out
}

/// Structural tag list for a single-class task, independent of which tags
/// happen to appear in a particular sample: B/I pair under BIO, the bare
/// class name under TO, O last either way.
pub fn class_alphabet(class: &str, scheme: Scheme) -> Vec<String> {
    match scheme {
        Scheme::Bio => vec![format!("B-{class}"), format!("I-{class}"), "O".to_string()],
        Scheme::To => vec![class.to_string(), "O".to_string()],
    }
}

/// Reads blank-line-separated `token tag` rows. Tags are kept verbatim; the
/// scheme is inferred (TO when some non-O tag lacks a B-/I- prefix). Loose
/// BIO violations (I-X with no preceding B-X/I-X) are counted and logged,
/// not rejected.
pub fn read_conll(path: impl AsRef<Path>) -> Result<Vec<LabeledSentence>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut bare_tags = false;
    let mut loose_bio = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if !tokens.is_empty() {
                sentences.push((std::mem::take(&mut tokens), std::mem::take(&mut tags)));
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected `token tag`, got {} fields", fields.len()),
            });
        }
        let tag = fields[1];
        if tag != "O" && !matches!(tag.split_once('-'), Some(("B" | "I", rest)) if !rest.is_empty())
        {
            bare_tags = true;
        }
        if let Some(("I", class)) = tag.split_once('-') {
            let prev_matches = tags
                .last()
                .map(|p| class_of(p) == Some(class))
                .unwrap_or(false);
            if !prev_matches {
                loose_bio += 1;
            }
        }
        tokens.push(fields[0].to_string());
        tags.push(tag.to_string());
    }
    if !tokens.is_empty() {
        sentences.push((tokens, tags));
    }

    if loose_bio > 0 {
        log::warn!(
            "{}: {} I-tags without a matching preceding tag (accepted)",
            path.display(),
            loose_bio
        );
    }
    let scheme = if bare_tags { Scheme::To } else { Scheme::Bio };
    sentences
        .into_iter()
        .map(|(tokens, tags)| LabeledSentence::new(tokens, tags, scheme))
        .collect()
}

/// Writes the two-column format `read_conll` accepts.
pub fn write_conll(path: impl AsRef<Path>, corpus: &[LabeledSentence]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, s) in corpus.iter().enumerate() {
        if i > 0 {
            writeln!(file)?;
        }
        for (token, tag) in s.tokens.iter().zip(&s.tags) {
            writeln!(file, "{token} {tag}")?;
        }
    }
    file.flush()?;
    Ok(())
}

/// In-domain view: tags of `class` survive (as B/I under BIO, as the bare
/// class name under TO), every other tag becomes O.
pub fn relabel(sentence: &LabeledSentence, class: &str, scheme: Scheme) -> LabeledSentence {
    let tags = sentence
        .tags
        .iter()
        .map(|t| match class_of(t) {
            Some(c) if c == class => match scheme {
                Scheme::To => class.to_string(),
                Scheme::Bio => {
                    if t.starts_with("I-") {
                        format!("I-{class}")
                    } else {
                        format!("B-{class}")
                    }
                }
            },
            _ => "O".to_string(),
        })
        .collect();
    LabeledSentence {
        tokens: sentence.tokens.clone(),
        tags,
        scheme,
    }
}

/// Out-of-domain view: tags of `class` become O, all other classes survive
/// (converted to bare class names under TO).
pub fn strip_class(sentence: &LabeledSentence, class: &str, scheme: Scheme) -> LabeledSentence {
    let tags = sentence
        .tags
        .iter()
        .map(|t| match class_of(t) {
            None => "O".to_string(),
            Some(c) if c == class => "O".to_string(),
            Some(c) => match scheme {
                Scheme::To => c.to_string(),
                Scheme::Bio => {
                    if t.starts_with("I-") {
                        format!("I-{c}")
                    } else {
                        format!("B-{c}")
                    }
                }
            },
        })
        .collect();
    LabeledSentence {
        tokens: sentence.tokens.clone(),
        tags,
        scheme,
    }
}

/// Per-target-class data triple. `in_domain` starts as the full relabeled
/// validation pool; `with_few_shot_split` replaces it with the sampled
/// few-shot sentences and fills `test` with the rest.
#[derive(Clone, Debug)]
pub struct TaskDataset {
    pub class: String,
    pub scheme: Scheme,
    pub in_domain: Vec<LabeledSentence>,
    pub out_of_domain: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
}

/// Builds the task views for one target class. The out-of-domain pool keeps
/// every other class from the train corpus; the in-domain pool is the
/// validation corpus seen through the single-class relabeling.
pub fn make_task(
    corpus_train: &[LabeledSentence],
    corpus_validation: &[LabeledSentence],
    class: &str,
    scheme: Scheme,
) -> Result<TaskDataset> {
    if !corpus_validation.iter().any(|s| s.carries(class)) {
        return Err(Error::Contract(format!(
            "class {class} does not occur in the validation corpus"
        )));
    }
    Ok(TaskDataset {
        class: class.to_string(),
        scheme,
        in_domain: corpus_validation
            .iter()
            .map(|s| relabel(s, class, scheme))
            .collect(),
        out_of_domain: corpus_train
            .iter()
            .map(|s| strip_class(s, class, scheme))
            .collect(),
        test: Vec::new(),
    })
}

impl TaskDataset {
    /// The task's structural tag alphabet (see `class_alphabet`).
    pub fn alphabet(&self) -> Vec<String> {
        class_alphabet(&self.class, self.scheme)
    }

    /// Draws the few-shot in-domain sample (N carrier sentences plus the
    /// proportion-preserving number of empty ones) and reserves the rest of
    /// the pool for testing. The returned task's `in_domain` is the sample.
    pub fn with_few_shot_split(&self, n: usize, rng: &mut Rng) -> Result<TaskDataset> {
        let picked = sampling::sample_in_domain_indices(&self.in_domain, &self.class, n, rng)?;
        let picked_set: BTreeSet<usize> = picked.iter().copied().collect();
        let sample: Vec<LabeledSentence> =
            picked.iter().map(|&i| self.in_domain[i].clone()).collect();
        let test: Vec<LabeledSentence> = self
            .in_domain
            .iter()
            .enumerate()
            .filter(|(i, _)| !picked_set.contains(i))
            .map(|(_, s)| s.clone())
            .collect();
        Ok(TaskDataset {
            class: self.class.clone(),
            scheme: self.scheme,
            in_domain: sample,
            out_of_domain: self.out_of_domain.clone(),
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(pairs: &[(&str, &str)]) -> LabeledSentence {
        LabeledSentence::new(
            pairs.iter().map(|(t, _)| t.to_string()).collect(),
            pairs.iter().map(|(_, g)| g.to_string()).collect(),
            Scheme::Bio,
        )
        .unwrap()
    }

    #[test]
    fn class_of_parses_all_tag_forms() {
        assert_eq!(class_of("B-GPE"), Some("GPE"));
        assert_eq!(class_of("I-GPE"), Some("GPE"));
        assert_eq!(class_of("GPE"), Some("GPE"));
        assert_eq!(class_of("O"), None);
    }

    #[test]
    fn read_write_round_trip_preserves_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.conll");
        let corpus = vec![
            sent(&[("Paris", "B-GPE"), ("is", "O"), ("big", "O")]),
            sent(&[("acme", "B-ORG"), ("corp", "I-ORG")]),
        ];
        write_conll(&path, &corpus).unwrap();
        let back = read_conll(&path).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn read_conll_splits_on_blank_lines_and_keeps_tags_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.conll");
        std::fs::write(&path, "Paris B-GPE\nis O\n\n\nBonn B-GPE\n").unwrap();
        let corpus = read_conll(&path).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].tokens, vec!["Paris", "is"]);
        assert_eq!(corpus[0].tags, vec!["B-GPE", "O"]);
        assert_eq!(corpus[1].tokens, vec!["Bonn"]);
    }

    #[test]
    fn read_conll_reports_line_numbers_for_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conll");
        std::fs::write(&path, "Paris B-GPE\nbroken\n").unwrap();
        let err = read_conll(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn read_conll_accepts_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.conll");
        std::fs::write(&path, "").unwrap();
        assert!(read_conll(&path).unwrap().is_empty());
    }

    #[test]
    fn read_conll_infers_the_reduced_scheme_from_bare_tags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("to.conll");
        std::fs::write(&path, "Paris GPE\nis O\n").unwrap();
        let corpus = read_conll(&path).unwrap();
        assert_eq!(corpus[0].scheme, Scheme::To);
    }

    #[test]
    fn relabel_keeps_only_the_target_class() {
        let s = sent(&[("Paris", "B-GPE"), ("hosts", "O"), ("ACME", "B-ORG")]);
        let view = relabel(&s, "GPE", Scheme::Bio);
        assert_eq!(view.tags, vec!["B-GPE", "O", "O"]);
        let view = relabel(&s, "GPE", Scheme::To);
        assert_eq!(view.tags, vec!["GPE", "O", "O"]);
        // Source unchanged.
        assert_eq!(s.tags, vec!["B-GPE", "O", "B-ORG"]);
    }

    #[test]
    fn strip_class_erases_the_target_and_keeps_the_rest() {
        let s = sent(&[("Paris", "B-GPE"), ("hosts", "O"), ("ACME", "B-ORG")]);
        let view = strip_class(&s, "GPE", Scheme::Bio);
        assert_eq!(view.tags, vec!["O", "O", "B-ORG"]);
        let view = strip_class(&s, "GPE", Scheme::To);
        assert_eq!(view.tags, vec!["O", "O", "ORG"]);
    }

    #[test]
    fn make_task_enforces_alphabet_invariants() {
        let train = vec![
            sent(&[("Paris", "B-GPE"), ("ACME", "B-ORG"), ("corp", "I-ORG")]),
            sent(&[("today", "B-DATE")]),
        ];
        let validation = vec![
            sent(&[("Bonn", "B-GPE"), ("ACME", "B-ORG")]),
            sent(&[("quiet", "O")]),
        ];
        let task = make_task(&train, &validation, "GPE", Scheme::Bio).unwrap();
        assert_eq!(alphabet(&task.in_domain), vec!["B-GPE", "O"]);
        let ood_alpha = alphabet(&task.out_of_domain);
        assert!(!ood_alpha.iter().any(|t| t.contains("GPE")));
        assert!(ood_alpha.contains(&"B-ORG".to_string()));
        assert!(ood_alpha.contains(&"B-DATE".to_string()));
        assert!(task.test.is_empty());
    }

    #[test]
    fn make_task_rejects_classes_absent_from_validation() {
        let train = vec![sent(&[("Paris", "B-GPE")])];
        let validation = vec![sent(&[("quiet", "O")])];
        assert!(make_task(&train, &validation, "GPE", Scheme::Bio).is_err());
    }

    #[test]
    fn few_shot_split_partitions_the_pool_by_identity() {
        let mut pool = Vec::new();
        for i in 0..30 {
            pool.push(sent(&[(format!("city{i}").as_str(), "B-GPE")]));
        }
        for i in 0..30 {
            pool.push(sent(&[(format!("word{i}").as_str(), "O")]));
        }
        let task = TaskDataset {
            class: "GPE".to_string(),
            scheme: Scheme::Bio,
            in_domain: pool.clone(),
            out_of_domain: vec![],
            test: vec![],
        };
        let mut rng = Rng::seed(5);
        let split = task.with_few_shot_split(10, &mut rng).unwrap();
        // pr = 0.5, so 10 carriers + 10 empties sampled.
        assert_eq!(split.in_domain.len(), 20);
        assert_eq!(split.test.len(), 40);
        let carriers = split
            .in_domain
            .iter()
            .filter(|s| s.carries("GPE"))
            .count();
        assert_eq!(carriers, 10);
        // Every pool sentence lands on exactly one side.
        let mut all: Vec<&LabeledSentence> =
            split.in_domain.iter().chain(split.test.iter()).collect();
        assert_eq!(all.len(), 60);
        all.sort_by_key(|s| &s.tokens[0]);
        let mut want: Vec<&LabeledSentence> = pool.iter().collect();
        want.sort_by_key(|s| &s.tokens[0]);
        assert_eq!(all, want);
    }
}
