//! Runs a scaled-down class x regime x seed grid through the experiment
//! pipeline and prints the aggregated table. The shipped full grid lives in
//! specs/benchmark.json and runs the same way via the command-line binary:
//!
//!     fewner run --spec crates/fewner/specs/benchmark.json --out runs/bench
//!
//!     cargo run --release --example full_benchmark

use fewner::experiment::{emit_reports, render_summary, ExperimentSpec, RunOptions};

fn main() -> fewner::Result<()> {
    env_logger::init();
    let spec_json = r#"{
        "synthetic": {
            "seed": 2024,
            "spec": {
                "classes": {
                    "City": {
                        "lexicon": ["Alburg", "Brinburg", "Corburg", "Dalburg", "Elsburg",
                                    "Fenburg", "Gorburg", "Hulburg", "Ithburg", "Jorburg",
                                    "Kelburg", "Lumburg"],
                        "carrier_prob": 0.4
                    },
                    "Firm": {
                        "lexicon": ["Marcorp", "Norcorp", "Ostcorp", "Pelcorp", "Quincorp",
                                    "Ravcorp", "Selcorp", "Torcorp", "Ulmcorp", "Velcorp",
                                    "Wexcorp", "Yorcorp"],
                        "carrier_prob": 0.3
                    },
                    "Name": {
                        "lexicon": ["Alsenn", "Brinsenn", "Corsenn", "Dalsenn", "Elssenn",
                                    "Fensenn", "Gorsenn", "Hulsenn", "Ithsenn", "Jorsenn",
                                    "Kelsenn", "Lumsenn"],
                        "carrier_prob": 0.25
                    }
                },
                "background": ["the", "a", "of", "to", "in", "and", "said", "that", "for",
                               "was", "near", "with", "report", "market", "council", "met",
                               "on", "after", "trade", "opened"],
                "train_sentences": 1200,
                "validation_sentences": 400,
                "sentence_len": [5, 8]
            }
        },
        "random_embeddings": { "dim": 20, "seed": 11 },
        "classes": ["City", "Firm"],
        "regimes": ["Protonet", "WarmProto", "WarmProtoZero"],
        "seeds": [0, 1],
        "config": {
            "epochs": 8,
            "steps_per_epoch": 40,
            "warm_epochs": 1,
            "query_cap": 30,
            "lr": 0.003,
            "l2": 0.003,
            "dropout": 0.0,
            "proto_dim": 24,
            "char_dim": 8,
            "char_hidden": 16,
            "word_hidden": 32
        }
    }"#;
    let spec: ExperimentSpec = serde_json::from_str(spec_json).expect("spec parses");
    spec.validate()?;

    let report = fewner::experiment::run_experiment(&spec, RunOptions::default())?;
    print!("{}", render_summary(&report.rows));

    let outdir = std::env::temp_dir().join("fewner_full_benchmark_example");
    emit_reports(&report, &outdir)?;
    println!("\nreports written to {}", outdir.display());
    for row in &report.rows {
        let per_seed: Vec<String> = row
            .seed_f1
            .iter()
            .map(|(seed, f1)| format!("seed {seed}: {f1:.3}"))
            .collect();
        println!("{:<6} {:<14} {}", row.class, row.regime.id(), per_seed.join("  "));
    }
    if !report.failures.is_empty() {
        println!("{} cells failed", report.failures.len());
    }
    Ok(())
}
