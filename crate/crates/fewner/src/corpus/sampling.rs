//! Proportion-preserving sentence sampling and support/query episode
//! assembly.

use super::{relabel, LabeledSentence};
use crate::error::{Error, Result};
use crate::ndcore::Rng;

/// One few-shot episode: a support set to build class representations from
/// and a disjoint query set to score.
#[derive(Clone, Debug)]
pub struct Episode {
    pub support: Vec<LabeledSentence>,
    pub query: Vec<LabeledSentence>,
}

/// Number of class-free sentences accompanying `n` carriers so the sample
/// keeps the pool's carrier proportion: round(n * (1 - pr) / pr).
pub fn empty_count(n: usize, pr: f64) -> usize {
    (n as f64 * (1.0 - pr) / pr).round() as usize
}

/// Draws the indices of `n` distinct carrier sentences plus the
/// proportion-preserving number of distinct class-free ones, shuffled
/// together. The carrier proportion pr is computed over the whole pool.
pub fn sample_in_domain_indices(
    pool: &[LabeledSentence],
    class: &str,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let carriers: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].carries(class)).collect();
    let empties: Vec<usize> = (0..pool.len())
        .filter(|&i| !pool[i].carries(class))
        .collect();
    draw_proportional(&carriers, &empties, class, n, rng)
}

/// The carrier/empty draw shared by the scanning and indexed samplers. Both
/// index lists must be in pool order so the two paths pick identically.
fn draw_proportional(
    carriers: &[usize],
    empties: &[usize],
    class: &str,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if carriers.len() < n {
        return Err(Error::Sampling(format!(
            "need {n} sentences carrying {class}, pool has {}",
            carriers.len()
        )));
    }
    let pr = carriers.len() as f64 / (carriers.len() + empties.len()) as f64;
    let want_empty = empty_count(n, pr);
    if empties.len() < want_empty {
        return Err(Error::Sampling(format!(
            "need {want_empty} {class}-free sentences, pool has {}",
            empties.len()
        )));
    }
    let mut picked: Vec<usize> = rng
        .sample_indices(carriers.len(), n)
        .into_iter()
        .map(|i| carriers[i])
        .collect();
    picked.extend(
        rng.sample_indices(empties.len(), want_empty)
            .into_iter()
            .map(|i| empties[i]),
    );
    rng.shuffle(&mut picked);
    Ok(picked)
}

/// The sentence-level view of `sample_in_domain_indices`.
pub fn sample_in_domain(
    pool: &[LabeledSentence],
    class: &str,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<LabeledSentence>> {
    Ok(sample_in_domain_indices(pool, class, n, rng)?
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// Splits a few-shot sample into support and query: half the carrier
/// sentences support, the other half plus half the empty sentences query.
/// The partition is redrawn on every call.
pub fn split_episode(sample: &[LabeledSentence], rng: &mut Rng) -> Result<Episode> {
    let carriers: Vec<usize> = (0..sample.len())
        .filter(|&i| !sample[i].is_all_o())
        .collect();
    let empties: Vec<usize> = (0..sample.len())
        .filter(|&i| sample[i].is_all_o())
        .collect();
    if carriers.len() < 2 {
        return Err(Error::Sampling(format!(
            "episode split needs at least 2 carrier sentences, got {}",
            carriers.len()
        )));
    }
    let half = carriers.len() / 2;
    let mut order: Vec<usize> = carriers.clone();
    rng.shuffle(&mut order);
    let support: Vec<LabeledSentence> =
        order[..half].iter().map(|&i| sample[i].clone()).collect();
    let mut query: Vec<LabeledSentence> =
        order[half..].iter().map(|&i| sample[i].clone()).collect();
    let quota = empties.len() / 2;
    query.extend(
        rng.sample_indices(empties.len(), quota)
            .into_iter()
            .map(|i| sample[empties[i]].clone()),
    );
    Ok(Episode { support, query })
}

/// Per-class carrier and class-free sentence index lists over one pool, in
/// pool order. Build once so repeated episode draws skip the full scan.
pub struct PoolIndex {
    classes: Vec<String>,
    carriers: Vec<Vec<usize>>,
    empties: Vec<Vec<usize>>,
}

impl PoolIndex {
    pub fn build(pool: &[LabeledSentence]) -> PoolIndex {
        let classes = super::classes(pool);
        let mut carriers = vec![Vec::new(); classes.len()];
        let mut empties = vec![Vec::new(); classes.len()];
        for (i, s) in pool.iter().enumerate() {
            for (k, class) in classes.iter().enumerate() {
                if s.carries(class) {
                    carriers[k].push(i);
                } else {
                    empties[k].push(i);
                }
            }
        }
        PoolIndex {
            classes,
            carriers,
            empties,
        }
    }
}

/// Picks a training class uniformly among those with at least `n` carrier
/// sentences, samples proportionally from the out-of-domain pool, relabels
/// the sample to that class alone, and splits it into an episode.
pub fn sample_out_of_domain_episode(
    out_of_domain: &[LabeledSentence],
    rng: &mut Rng,
    n: usize,
) -> Result<Episode> {
    let index = PoolIndex::build(out_of_domain);
    sample_out_of_domain_episode_indexed(out_of_domain, &index, rng, n)
}

/// `sample_out_of_domain_episode` against a prebuilt index. The index lists
/// are in pool order, so the draw sequence matches the scanning version.
pub fn sample_out_of_domain_episode_indexed(
    out_of_domain: &[LabeledSentence],
    index: &PoolIndex,
    rng: &mut Rng,
    n: usize,
) -> Result<Episode> {
    let eligible: Vec<usize> = (0..index.classes.len())
        .filter(|&k| index.carriers[k].len() >= n)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(format!(
            "no out-of-domain class has {n} carrier sentences"
        )));
    }
    let k = eligible[rng.below(eligible.len())];
    let class = &index.classes[k];
    let scheme = out_of_domain
        .first()
        .map(|s| s.scheme)
        .unwrap_or(super::Scheme::Bio);
    let sample: Vec<LabeledSentence> =
        draw_proportional(&index.carriers[k], &index.empties[k], class, n, rng)?
            .into_iter()
            .map(|i| relabel(&out_of_domain[i], class, scheme))
            .collect();
    split_episode(&sample, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{class_of, Scheme};

    fn carrier(class: &str, i: usize) -> LabeledSentence {
        LabeledSentence::new(
            vec![format!("e{i}"), "x".to_string()],
            vec![format!("B-{class}"), "O".to_string()],
            Scheme::Bio,
        )
        .unwrap()
    }

    fn empty(i: usize) -> LabeledSentence {
        LabeledSentence::new(
            vec![format!("w{i}")],
            vec!["O".to_string()],
            Scheme::Bio,
        )
        .unwrap()
    }

    fn pool(class: &str, n_carrier: usize, n_empty: usize) -> Vec<LabeledSentence> {
        let mut p: Vec<LabeledSentence> = (0..n_carrier).map(|i| carrier(class, i)).collect();
        p.extend((0..n_empty).map(empty));
        p
    }

    #[test]
    fn empty_count_matches_the_proportion_formula() {
        // pr = 1/3: 20 carriers go with 40 empties.
        assert_eq!(empty_count(20, 1.0 / 3.0), 40);
        // pr = 1/4: 60 empties.
        assert_eq!(empty_count(20, 0.25), 60);
        // pr = 1: no empties.
        assert_eq!(empty_count(20, 1.0), 0);
    }

    #[test]
    fn sample_keeps_pool_proportion() {
        let p = pool("GPE", 40, 80); // pr = 1/3
        let mut rng = Rng::seed(2);
        let sample = sample_in_domain(&p, "GPE", 20, &mut rng).unwrap();
        assert_eq!(sample.len(), 60);
        assert_eq!(sample.iter().filter(|s| s.carries("GPE")).count(), 20);
    }

    #[test]
    fn sample_is_without_replacement() {
        let p = pool("GPE", 25, 30);
        let mut rng = Rng::seed(3);
        let sample = sample_in_domain(&p, "GPE", 20, &mut rng).unwrap();
        let mut keys: Vec<&String> = sample.iter().map(|s| &s.tokens[0]).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), sample.len());
    }

    #[test]
    fn insufficient_pools_report_available_counts() {
        let p = pool("GPE", 5, 100);
        let mut rng = Rng::seed(4);
        let err = sample_in_domain(&p, "GPE", 20, &mut rng).unwrap_err();
        assert!(err.to_string().contains("pool has 5"), "{err}");
    }

    #[test]
    fn split_gives_half_carriers_to_support_and_half_empties_to_query() {
        let p = pool("GPE", 20, 40);
        let mut rng = Rng::seed(6);
        let sample = sample_in_domain(&p, "GPE", 20, &mut rng).unwrap();
        let ep = split_episode(&sample, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 10);
        assert_eq!(ep.query.len(), 10 + 20);
        assert!(ep.support.iter().all(|s| s.carries("GPE")));
        assert_eq!(ep.query.iter().filter(|s| s.carries("GPE")).count(), 10);
        // Disjointness within the episode.
        for s in &ep.support {
            assert!(!ep.query.contains(s));
        }
    }

    #[test]
    fn split_is_redrawn_every_call() {
        let p = pool("GPE", 20, 0);
        let mut rng = Rng::seed(7);
        let sample = sample_in_domain(&p, "GPE", 20, &mut rng).unwrap();
        let first = split_episode(&sample, &mut rng).unwrap();
        let differs = (0..10).any(|_| {
            let ep = split_episode(&sample, &mut rng).unwrap();
            ep.support != first.support
        });
        assert!(differs);
    }

    #[test]
    fn minimal_split_has_one_sentence_each_side() {
        let p = pool("GPE", 2, 0);
        let mut rng = Rng::seed(8);
        let ep = split_episode(&p, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 1);
        assert_eq!(ep.query.len(), 1);
    }

    #[test]
    fn out_of_domain_episode_keeps_a_single_class() {
        let mut p = pool("ORG", 30, 30);
        p.extend((0..30).map(|i| carrier("DATE", 100 + i)));
        let mut rng = Rng::seed(9);
        let ep = sample_out_of_domain_episode(&p, &mut rng, 20).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for s in ep.support.iter().chain(&ep.query) {
            for t in &s.tags {
                if let Some(c) = class_of(t) {
                    seen.insert(c.to_string());
                }
            }
        }
        assert_eq!(seen.len(), 1, "tags mix classes: {seen:?}");
    }

    #[test]
    fn out_of_domain_class_choice_is_roughly_uniform() {
        let mut p = pool("ORG", 25, 0);
        p.extend((0..25).map(|i| carrier("DATE", 100 + i)));
        let mut rng = Rng::seed(10);
        let mut org = 0;
        for _ in 0..1000 {
            let ep = sample_out_of_domain_episode(&p, &mut rng, 20).unwrap();
            if ep.support[0].tags.iter().any(|t| t.contains("ORG")) {
                org += 1;
            }
        }
        assert!((400..=600).contains(&org), "ORG chosen {org}/1000");
    }

    #[test]
    fn out_of_domain_respects_the_proportion_formula() {
        // Single eligible class with pr = 0.5 over the pool.
        let p = pool("ORG", 50, 50);
        let mut rng = Rng::seed(11);
        let ep = sample_out_of_domain_episode(&p, &mut rng, 20).unwrap();
        // 20 carriers + 20 empties, split 10 support / 10 + 10 query.
        assert_eq!(ep.support.len(), 10);
        assert_eq!(ep.query.len(), 20);
    }

    #[test]
    fn indexed_sampler_matches_the_scanning_sampler() {
        let mut p = pool("ORG", 30, 30);
        p.extend(pool("GPE", 30, 30));
        let index = PoolIndex::build(&p);
        let mut a = Rng::seed(9);
        let mut b = Rng::seed(9);
        for _ in 0..5 {
            let scan = sample_out_of_domain_episode(&p, &mut a, 10).unwrap();
            let fast = sample_out_of_domain_episode_indexed(&p, &index, &mut b, 10).unwrap();
            let flat = |ep: &Episode| {
                ep.support
                    .iter()
                    .chain(&ep.query)
                    .map(|s| (s.tokens.clone(), s.tags.clone()))
                    .collect::<Vec<_>>()
            };
            assert_eq!(flat(&scan), flat(&fast));
        }
    }

    #[test]
    fn out_of_domain_errors_without_an_eligible_class() {
        let p = pool("ORG", 5, 50);
        let mut rng = Rng::seed(12);
        assert!(sample_out_of_domain_episode(&p, &mut rng, 20).is_err());
    }
}
