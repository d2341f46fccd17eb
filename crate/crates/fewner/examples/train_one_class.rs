//! Trains one regime on one entity class of a small synthetic corpus and
//! prints the learning curve, the learned prototype geometry, and a
//! breakdown of the remaining errors.
//!
//!     cargo run --release --example train_one_class -- [regime] [seed]
//!
//! The regime defaults to WarmProto and the seed to 0.

use std::collections::BTreeMap;

use fewner::corpus::{self, ClassSpec, Scheme, SynthSpec};
use fewner::encoder::EmbeddingTable;
use fewner::eval::chunk_f1;
use fewner::experiment::{predict_pool, score_predictions};
use fewner::ndcore::{mix_seed, Rng};
use fewner::regimes::{self, Regime, RegimeConfig, TrainedModel};

fn synth_spec() -> SynthSpec {
    let stems = [
        "Al", "Brin", "Cor", "Dal", "Els", "Fen", "Gor", "Hul", "Ith", "Jor", "Kel", "Lum",
        "Mar", "Nor", "Ost", "Pel", "Quin", "Rav", "Sel", "Tor", "Ulm", "Vel", "Wex", "Yor",
    ];
    // Single-token surfaces only: every gold tag then has a support
    // prototype, so no query token is scored against a missing class.
    let class = |suffix: &str, carrier_prob: f64| ClassSpec {
        lexicon: stems.iter().map(|s| format!("{s}{suffix}")).collect(),
        carrier_prob,
    };
    SynthSpec {
        classes: BTreeMap::from([
            ("City".to_string(), class("burg", 0.4)),
            ("Firm".to_string(), class("corp", 0.35)),
            ("Name".to_string(), class("senn", 0.3)),
            ("River".to_string(), class("flow", 0.25)),
            ("Team".to_string(), class("vita", 0.2)),
        ]),
        background: [
            "the", "a", "of", "to", "in", "and", "said", "that", "for", "was", "near", "with",
            "report", "market", "council", "visited", "along", "against", "played", "met",
            "on", "after", "before", "trade", "votes", "opened", "closed", "route", "press",
            "old", "new", "quiet", "first", "last", "small", "grand", "early", "late", "news",
            "day",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        train_sentences: 1500,
        validation_sentences: 500,
        sentence_len: [5, 8],
    }
}

fn main() -> fewner::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let regime = match args.next() {
        Some(name) => Regime::parse(&name)?,
        None => Regime::WarmProto,
    };
    let seed: u64 = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);

    let spec = synth_spec();
    let mut corpus_rng = Rng::seed(mix_seed(7, &["synthetic-corpus"]));
    let (train, validation) = corpus::generate_synthetic_corpus(&spec, &mut corpus_rng)?;
    let words = train
        .iter()
        .chain(&validation)
        .flat_map(|s| s.tokens.iter().map(String::as_str));
    let mut table_rng = Rng::seed(mix_seed(11, &["random-embeddings"]));
    let table = EmbeddingTable::random(words, 20, &mut table_rng);

    let class = "City";
    let task = corpus::make_task(&train, &validation, class, Scheme::Bio)?;
    let mut cfg = RegimeConfig::new(regime, seed);
    cfg.epochs = 12;
    cfg.steps_per_epoch = 40;
    cfg.warm_epochs = Some(1);
    cfg.proto_dim = 24;
    cfg.char_dim = 8;
    cfg.char_hidden = 16;
    cfg.word_hidden = 32;
    // Distance logits double under dropout noise and the outside bias
    // never recalibrates, so the head trains without dropout.
    cfg.dropout = 0.0;
    // The outside bias drifts upward roughly lr per step on majority-O
    // queries; 3e-3 keeps it below entity logits over this budget.
    cfg.lr = 3e-3;
    cfg.l2 = 3e-3;
    let mut split_rng = Rng::seed(mix_seed(seed, &["few-shot", class]));
    let task = task.with_few_shot_split(cfg.n_support, &mut split_rng)?;
    println!(
        "task: class {class}, {} support-pool sentences, {} out-of-domain, {} test",
        task.in_domain.len(),
        task.out_of_domain.len(),
        task.test.len()
    );

    let mut probe = |epoch: usize, snapshot: &TrainedModel| -> fewner::Result<f64> {
        let pred = predict_pool(snapshot, &table, &task.test)?;
        let f1 = chunk_f1(&task.test, &pred, class)?.f1;
        println!(
            "epoch {epoch:>2}: mean loss {:.4}, test F1 {f1:.4}",
            snapshot.history.loss.last().copied().unwrap_or(f64::NAN)
        );
        Ok(f1)
    };
    let model = regimes::train(&task, &table, &cfg, Some(&mut probe))?;

    let pred = predict_pool(&model, &table, &task.test)?;
    let report = score_predictions(&task.test, &pred, class, task.scheme)?;
    println!(
        "final: tp {} fp {} fn {} precision {:.4} recall {:.4} F1 {:.4}",
        report.tp, report.fp, report.fn_, report.precision, report.recall, report.f1
    );

    // A prototype head is only as good as its margins: a token is tagged
    // as an entity when some class prototype is closer than the outside
    // bias, so the two logit populations must separate.
    if let (Some(set), Some(b_o)) = (&model.prototypes, &model.encoder.b_o) {
        let b_o = b_o.item();
        let mut tape = fewner::ndcore::Tape::new(fewner::ndcore::Mode::Eval);
        let nodes = model.encoder.register(&mut tape);
        let mut rng = Rng::seed(0);
        let refs: Vec<&corpus::LabeledSentence> = task.test.iter().take(200).collect();
        let encodings =
            fewner::encoder::encode_batch(&mut tape, &nodes, &table, &refs, 0.0, &mut rng)?;
        let mut outside = Vec::new();
        let mut entity = Vec::new();
        for (enc, sentence) in encodings.iter().zip(&refs) {
            let values = tape.value(*enc);
            for (t, tag) in sentence.tags.iter().enumerate() {
                let logits = set.token_logits(values.row(t), b_o);
                let best_entity = logits[..logits.len() - 1]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                if tag == "O" {
                    outside.push(best_entity);
                } else {
                    entity.push(best_entity);
                }
            }
        }
        let quartiles = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (v[v.len() / 4], v[v.len() / 2], v[3 * v.len() / 4])
        };
        let (oq1, oq2, oq3) = quartiles(&mut outside);
        let (eq1, eq2, eq3) = quartiles(&mut entity);
        println!("\nprototype geometry on 200 test sentences:");
        println!("  b_O (outside logit)                  {b_o:.3}");
        println!("  best entity logit, gold-O tokens     quartiles {oq1:.3} / {oq2:.3} / {oq3:.3}");
        println!("  best entity logit, gold-entity tokens quartiles {eq1:.3} / {eq2:.3} / {eq3:.3}");
    }

    let sampled: std::collections::BTreeSet<&str> = task
        .in_domain
        .iter()
        .flat_map(|s| {
            s.tokens
                .iter()
                .zip(&s.tags)
                .filter(|(_, tag)| *tag != "O")
                .map(|(tok, _)| tok.as_str())
        })
        .collect();
    let mut fp_same_class_word = 0usize;
    let mut fp_other_entity = 0usize;
    let mut fp_background = 0usize;
    let mut fn_seen = 0usize;
    let mut fn_unseen = 0usize;
    for (sentence, tags) in task.test.iter().zip(&pred) {
        let gold = fewner::eval::extract_chunks(&sentence.tags);
        let got = fewner::eval::extract_chunks(tags);
        for chunk in got.iter().filter(|c| !gold.contains(c)) {
            let token = sentence.tokens[chunk.start].as_str();
            let gold_tag = sentence.tags[chunk.start].as_str();
            if gold_tag != "O" {
                fp_same_class_word += 1;
            } else if token.chars().next().is_some_and(|c| c.is_uppercase()) {
                fp_other_entity += 1;
            } else {
                fp_background += 1;
            }
        }
        for chunk in gold.iter().filter(|c| !got.contains(c)) {
            if sampled.contains(sentence.tokens[chunk.start].as_str()) {
                fn_seen += 1;
            } else {
                fn_unseen += 1;
            }
        }
    }
    println!("\nerror sources:");
    println!("  false positives: {fp_same_class_word} mis-spanned class tokens, {fp_other_entity} other-class entities, {fp_background} background words");
    println!("  false negatives: {fn_seen} surfaces seen in the support pool, {fn_unseen} unseen");
    Ok(())
}
