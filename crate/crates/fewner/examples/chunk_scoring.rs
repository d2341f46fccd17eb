//! Demonstrates chunk extraction, single-token tag reconstruction, and
//! chunk-level F1, including the edge cases that trip up naive scorers.
//!
//!     cargo run --example chunk_scoring

use fewner::corpus::{LabeledSentence, Scheme};
use fewner::eval::{chunk_f1, extract_chunks, to_to_bio};

fn tags(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn main() -> fewner::Result<()> {
    // Chunks are maximal B-X (I-X)* runs; a bare I-X also opens a chunk,
    // matching lenient CoNLL readers.
    let cases: [&[&str]; 4] = [
        &["B-City", "I-City", "O", "B-City"],
        &["I-City", "I-City", "B-City", "I-Firm"],
        &["O", "B-City", "B-City", "I-City"],
        &["I-Firm", "O", "I-Firm", "I-Firm"],
    ];
    for case in cases {
        let spans: Vec<String> = extract_chunks(&tags(case))
            .iter()
            .map(|c| format!("{}[{}..{})", c.class, c.start, c.end))
            .collect();
        println!("{case:?} -> {}", spans.join(" "));
    }

    // Single-token tags reconstruct to BIO by starting a chunk at every
    // class change, so adjacent same-class tokens merge into one chunk.
    let reduced = tags(&["O", "City", "City", "O", "Firm", "City"]);
    println!("\nreduced {reduced:?}");
    println!("as BIO  {:?}", to_to_bio(&reduced));

    // F1 counts exact span matches only. The second prediction gets the
    // tokens right but splits the chunk, costing both a fp and a fn.
    let gold = vec![
        LabeledSentence::new(
            tags(&["visited", "New", "Carthage", "today"]),
            tags(&["O", "B-City", "I-City", "O"]),
            Scheme::Bio,
        )?,
        LabeledSentence::new(
            tags(&["the", "Old", "Harbor", "council"]),
            tags(&["O", "B-City", "I-City", "O"]),
            Scheme::Bio,
        )?,
    ];
    let pred = vec![
        tags(&["O", "B-City", "I-City", "O"]),
        tags(&["O", "B-City", "B-City", "O"]),
    ];
    let report = chunk_f1(&gold, &pred, "City")?;
    println!(
        "\nexact span scoring: tp {} fp {} fn {} precision {:.3} recall {:.3} F1 {:.3}",
        report.tp, report.fp, report.fn_, report.precision, report.recall, report.f1
    );

    // Off-class chunks are invisible to a single-class report.
    let gold = vec![LabeledSentence::new(
        tags(&["Kelcorp", "met", "Aldburg"]),
        tags(&["B-Firm", "O", "B-City"]),
        Scheme::Bio,
    )?];
    let pred = vec![tags(&["B-Firm", "O", "O"])];
    let city = chunk_f1(&gold, &pred, "City")?;
    let firm = chunk_f1(&gold, &pred, "Firm")?;
    println!("City view: tp {} fp {} fn {}", city.tp, city.fp, city.fn_);
    println!("Firm view: tp {} fp {} fn {}", firm.tp, firm.fp, firm.fn_);

    // Empty denominators resolve to zero rather than NaN.
    let report = chunk_f1(&gold, &vec![tags(&["O", "O", "O"])], "River")?;
    println!(
        "no gold, no pred: precision {:.1} recall {:.1} F1 {:.1}",
        report.precision, report.recall, report.f1
    );
    Ok(())
}
