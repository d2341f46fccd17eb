//! Generates a labeled synthetic corpus, inspects its class balance, and
//! round-trips it through the two-column CoNLL format.
//!
//!     cargo run --example synthetic_corpus

use std::collections::BTreeMap;

use fewner::corpus::{
    self, classes, read_conll, relabel, strip_class, write_conll, ClassSpec, Scheme, SynthSpec,
};
use fewner::ndcore::{mix_seed, Rng};

fn main() -> fewner::Result<()> {
    let spec = SynthSpec {
        classes: BTreeMap::from([
            (
                "City".to_string(),
                ClassSpec {
                    lexicon: vec!["Aldburg".into(), "Torfen".into(), "Quinvale".into()],
                    carrier_prob: 0.4,
                },
            ),
            (
                "River".to_string(),
                ClassSpec {
                    lexicon: vec!["Elsflow".into(), "Marflow".into()],
                    carrier_prob: 0.2,
                },
            ),
        ]),
        background: ["the", "a", "near", "old", "ferry", "crossed", "bank", "mist"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        train_sentences: 400,
        validation_sentences: 100,
        sentence_len: [4, 7],
    };
    let mut rng = Rng::seed(mix_seed(2024, &["synthetic-corpus"]));
    let (train, validation) = corpus::generate_synthetic_corpus(&spec, &mut rng)?;
    println!("generated {} train / {} validation sentences", train.len(), validation.len());
    println!("classes present: {:?}", classes(&train));

    // Carrier proportions should track each carrier_prob.
    for class in classes(&train) {
        let carriers = train.iter().filter(|s| s.carries(&class)).count();
        println!(
            "  {class}: {carriers} carrier sentences ({:.3} of train, spec {:.3})",
            carriers as f64 / train.len() as f64,
            spec.classes[&class].carrier_prob
        );
    }

    let sample = train.iter().find(|s| s.carries("City")).unwrap();
    println!("\nfirst City-carrying sentence:");
    for (token, tag) in sample.tokens.iter().zip(&sample.tags) {
        println!("  {token:<10} {tag}");
    }

    // Single-class views: relabel keeps one class and rewrites everything
    // else to O; strip_class removes the class instead.
    let kept = relabel(sample, "City", Scheme::Bio);
    let dropped = strip_class(sample, "City", Scheme::Bio);
    println!("City-only tags:    {:?}", kept.tags);
    println!("City-removed tags: {:?}", dropped.tags);

    // CoNLL round trip: write, read, compare.
    let dir = std::env::temp_dir().join("fewner_synthetic_corpus_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("train.conll");
    write_conll(&path, &train)?;
    let reread = read_conll(&path)?;
    println!(
        "\nwrote {}, reread {} sentences, identical: {}",
        path.display(),
        reread.len(),
        reread == train
    );

    // The reader infers the tag scheme: a corpus whose non-O tags carry no
    // B-/I- prefix is treated as single-token tags.
    let to_path = dir.join("single_token.conll");
    std::fs::write(&to_path, "the O\nTorfen City\nferry O\n\n")?;
    let to_corpus = read_conll(&to_path)?;
    println!("inferred scheme for prefix-free tags: {:?}", to_corpus[0].scheme);
    Ok(())
}
