use std::collections::BTreeMap;

use rand::Rng;

use crate::corpus::Grade;

/// A query with two judged documents of different grades, `y1 > y2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingTriple {
    pub query_id: String,
    pub doc1: String,
    pub doc2: String,
    pub y1: Grade,
    pub y2: Grade,
}

/// Documents grouped by grade, grades descending, documents in input order.
fn by_grade(judgments: &BTreeMap<String, Grade>) -> Vec<(Grade, Vec<&str>)> {
    let mut groups: BTreeMap<Grade, Vec<&str>> = BTreeMap::new();
    for (doc, &g) in judgments {
        groups.entry(g).or_default().push(doc);
    }
    groups.into_iter().rev().collect()
}

/// Number of distinct triples a query can yield.
pub fn possible_triples(judgments: &BTreeMap<String, Grade>) -> usize {
    let groups = by_grade(judgments);
    let mut total = 0;
    for (i, (_, hi)) in groups.iter().enumerate() {
        for (_, lo) in &groups[i + 1..] {
            total += hi.len() * lo.len();
        }
    }
    total
}

/// Samples at most `cap` distinct triples for one query.
///
/// When the query admits no more than `cap` triples all of them are returned.
/// Otherwise each draw picks a label pair uniformly among those with unused
/// document pairs, then an unused document pair uniformly within it.
pub fn sample_triples<R: Rng>(
    query_id: &str,
    judgments: &BTreeMap<String, Grade>,
    cap: usize,
    rng: &mut R,
) -> Vec<TrainingTriple> {
    let groups = by_grade(judgments);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            pairs.push((i, j));
        }
    }
    let triple = |i: usize, j: usize, a: usize, b: usize| TrainingTriple {
        query_id: query_id.to_string(),
        doc1: groups[i].1[a].to_string(),
        doc2: groups[j].1[b].to_string(),
        y1: groups[i].0,
        y2: groups[j].0,
    };

    if possible_triples(judgments) <= cap {
        let mut out = Vec::new();
        for &(i, j) in &pairs {
            for a in 0..groups[i].1.len() {
                for b in 0..groups[j].1.len() {
                    out.push(triple(i, j, a, b));
                }
            }
        }
        return out;
    }

    // Unused document pairs per label pair, as flat indices a * |lo| + b.
    let mut remaining: Vec<Vec<usize>> = pairs
        .iter()
        .map(|&(i, j)| (0..groups[i].1.len() * groups[j].1.len()).collect())
        .collect();
    let mut out = Vec::with_capacity(cap);
    while out.len() < cap {
        let open: Vec<usize> = (0..pairs.len())
            .filter(|&p| !remaining[p].is_empty())
            .collect();
        let p = open[rng.random_range(0..open.len())];
        let k = rng.random_range(0..remaining[p].len());
        let flat = remaining[p].swap_remove(k);
        let (i, j) = pairs[p];
        let width = groups[j].1.len();
        out.push(triple(i, j, flat / width, flat % width));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn judgments(grades: &[(&str, Grade)]) -> BTreeMap<String, Grade> {
        grades.iter().map(|&(d, g)| (d.to_string(), g)).collect()
    }

    #[test]
    fn single_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_triples("q", &judgments(&[("a", 4), ("b", 0)]), 50, &mut rng);
        assert_eq!(
            t,
            [TrainingTriple {
                query_id: "q".into(),
                doc1: "a".into(),
                doc2: "b".into(),
                y1: 4,
                y2: 0
            }]
        );
    }

    #[test]
    fn equal_grades_yield_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let j: BTreeMap<String, Grade> = (0..10).map(|i| (format!("d{i}"), 3)).collect();
        assert!(sample_triples("q", &j, 50, &mut rng).is_empty());
        assert_eq!(possible_triples(&j), 0);
    }

    #[test]
    fn cap_is_respected_and_triples_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j: BTreeMap<String, Grade> = (0..30)
            .map(|i| (format!("d{i:02}"), (i % 5) as Grade))
            .collect();
        assert_eq!(possible_triples(&j), 360);
        let t = sample_triples("q", &j, 50, &mut rng);
        assert_eq!(t.len(), 50);
        let mut keys: Vec<(String, String)> =
            t.iter().map(|x| (x.doc1.clone(), x.doc2.clone())).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 50);
        assert!(t
            .iter()
            .all(|x| x.y1 > x.y2 && j[&x.doc1] == x.y1 && j[&x.doc2] == x.y2));
    }

    #[test]
    fn small_queries_return_every_triple() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = judgments(&[("a", 4), ("b", 2), ("c", 2), ("d", 0)]);
        let t = sample_triples("q", &j, 50, &mut rng);
        assert_eq!(t.len(), 5);
    }

    /// Chi-square statistic and p-value of observed counts against expected.
    fn chi_square(observed: &[f64], expected: &[f64]) -> (f64, f64) {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let stat: f64 = observed
            .iter()
            .zip(expected)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
        (stat, dist.sf(stat))
    }

    #[test]
    fn single_draws_are_uniform_over_label_pairs() {
        // Group sizes 1..=5 make "uniform over label pairs" and "uniform over
        // document pairs" clearly different distributions.
        let mut j = BTreeMap::new();
        for g in 0..5u8 {
            for k in 0..=g {
                j.insert(format!("g{g}d{k}"), g);
            }
        }
        let pairs: Vec<(Grade, Grade)> = (0..5u8)
            .flat_map(|hi| (0..hi).map(move |lo| (hi, lo)))
            .collect();
        let mut counts = vec![0.0; pairs.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        for _ in 0..n {
            let t = sample_triples("q", &j, 1, &mut rng);
            assert_eq!(t.len(), 1);
            let k = pairs.iter().position(|&p| p == (t[0].y1, t[0].y2)).unwrap();
            counts[k] += 1.0;
        }
        let uniform = vec![n as f64 / pairs.len() as f64; pairs.len()];
        let (_, p) = chi_square(&counts, &uniform);
        assert!(p > 0.01, "p = {p}, counts {counts:?}");

        // The same counts reject the document-pair-uniform alternative.
        let total = possible_triples(&j) as f64;
        let by_docs: Vec<f64> = pairs
            .iter()
            .map(|&(hi, lo)| n as f64 * f64::from(hi + 1) * f64::from(lo + 1) / total)
            .collect();
        let (_, p_alt) = chi_square(&counts, &by_docs);
        assert!(p_alt < 1e-6, "p_alt = {p_alt}");
    }
}
