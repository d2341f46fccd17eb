//! Walks through the sampling layer: proportion-preserving draws, the
//! few-shot support split, and support/query episode assembly from both
//! the in-domain pool and the out-of-domain classes.
//!
//!     cargo run --example episode_sampling

use std::collections::BTreeMap;

use fewner::corpus::{
    self, empty_count, make_task, sample_in_domain, sample_out_of_domain_episode, split_episode,
    ClassSpec, Scheme, SynthSpec,
};
use fewner::ndcore::{mix_seed, Rng};
use fewner::regimes::draws_in_domain;

fn main() -> fewner::Result<()> {
    let lexicon = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let spec = SynthSpec {
        classes: BTreeMap::from([
            ("City".to_string(), ClassSpec { lexicon: lexicon(&["Aldburg", "Torburg"]), carrier_prob: 0.3 }),
            ("Firm".to_string(), ClassSpec { lexicon: lexicon(&["Kelcorp", "Ravcorp"]), carrier_prob: 0.3 }),
            ("Name".to_string(), ClassSpec { lexicon: lexicon(&["Norsenn", "Pelsenn"]), carrier_prob: 0.3 }),
        ]),
        background: lexicon(&["the", "a", "met", "near", "old", "press", "day", "said"]),
        train_sentences: 600,
        validation_sentences: 200,
        sentence_len: [4, 7],
    };
    let mut rng = Rng::seed(mix_seed(5, &["synthetic-corpus"]));
    let (train, validation) = corpus::generate_synthetic_corpus(&spec, &mut rng)?;

    // A proportion-preserving sample of n carriers brings along
    // round(n * (1 - pr) / pr) class-free sentences.
    let class = "City";
    let carriers = train.iter().filter(|s| s.carries(class)).count();
    let pr = carriers as f64 / train.len() as f64;
    println!("pool: {} sentences, {carriers} carry {class} (pr = {pr:.3})", train.len());
    for n in [5, 10, 20] {
        println!("  n = {n:>2}: {} accompanying class-free sentences", empty_count(n, pr));
    }

    let mut draw_rng = Rng::seed(1);
    let sample = sample_in_domain(&train, class, 10, &mut draw_rng)?;
    let sampled_carriers = sample.iter().filter(|s| s.carries(class)).count();
    println!(
        "drawn sample: {} sentences, {sampled_carriers} carriers ({:.3} vs pool {pr:.3})",
        sample.len(),
        sampled_carriers as f64 / sample.len() as f64
    );

    // The task view pins a few-shot support pool: n_support carrier
    // sentences plus their proportional share of empties; the rest of the
    // in-domain data is barred from training.
    let task = make_task(&train, &validation, class, Scheme::Bio)?;
    let mut split_rng = Rng::seed(mix_seed(0, &["few-shot", class]));
    let task = task.with_few_shot_split(10, &mut split_rng)?;
    println!(
        "\nfew-shot task: {} support-pool sentences, {} out-of-domain, {} test",
        task.in_domain.len(),
        task.out_of_domain.len(),
        task.test.len()
    );

    // Episodes split a sample into disjoint support and query halves.
    let mut episode_rng = Rng::seed(2);
    let episode = split_episode(&task.in_domain, &mut episode_rng)?;
    println!(
        "in-domain episode: {} support / {} query sentences",
        episode.support.len(),
        episode.query.len()
    );

    // Out-of-domain episodes pick a random other class, relabel the draw
    // to that class alone, and split it the same way.
    let episode = sample_out_of_domain_episode(&task.out_of_domain, &mut episode_rng, 10)?;
    let classes = corpus::classes(&episode.support);
    println!(
        "out-of-domain episode: {} support / {} query, class {:?}",
        episode.support.len(),
        episode.query.len(),
        classes
    );

    // Mixed-source training flips a p-coin per step; over many steps the
    // in-domain fraction tracks p.
    let mut coin_rng = Rng::seed(3);
    for p in [0.0, 0.5, 1.0] {
        let hits = (0..2000).filter(|_| draws_in_domain(&mut coin_rng, p)).count();
        println!("p = {p:.1}: {:.3} of 2000 draws in-domain", hits as f64 / 2000.0);
    }
    Ok(())
}
