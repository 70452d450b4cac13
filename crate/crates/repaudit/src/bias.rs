//! Subset-similarity metrics over embedding sets and the derived
//! representational bias score, plus the percent-change analytic.

use serde::Serialize;

use crate::embedding::EmbeddingSet;
use crate::gender::GenderLabel;
use crate::{Error, Result};

/// Pronouns and gendered nouns removed from significant-word lists before
/// embedding comparison: differences in these are expected by construction.
pub const GENDERED_TOKENS: [&str; 20] = [
    "she", "her", "hers", "herself", "he", "his", "him", "himself", "they", "their", "them", "mr",
    "mrs", "ms", "female", "male", "woman", "man", "women", "men",
];

/// Drops every gendered token from the list, preserving the order of the
/// remaining words.
pub fn strip_gendered_tokens(words: &[String]) -> Vec<String> {
    words
        .iter()
        .filter(|w| !GENDERED_TOKENS.contains(&w.as_str()))
        .cloned()
        .collect()
}

fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v.iter()) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    1.0 - dot / (nu.sqrt() * nv.sqrt())
}

/// Mean over `a` of the cosine distance to the nearest member of `b`:
/// asymmetric, in [0, 2]. Zero means every member of `a` has an exact
/// angular match in `b`; 2 means every member is antipodal to all of `b`.
pub fn subset_similarity(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyEmbeddingSet(a.label.clone()));
    }
    if b.is_empty() {
        return Err(Error::EmptyEmbeddingSet(b.label.clone()));
    }
    let sum: f64 = a
        .members()
        .iter()
        .map(|(_, v)| {
            b.members()
                .iter()
                .map(|(_, u)| cosine_distance(u, v))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `subset_similarity(s, a) - subset_similarity(s, b)`: negative when `s`
/// sits closer to `a`, positive when closer to `b`, zero for no pull
/// either way. Range [-2, 2].
pub fn srbs(s: &EmbeddingSet, a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    Ok(subset_similarity(s, a)? - subset_similarity(s, b)?)
}

/// One scored cell: a candidate set's distances to the two target sets and
/// their difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasScoreRecord {
    pub model: String,
    pub occupation: String,
    pub gender: GenderLabel,
    pub d_to_female: f64,
    pub d_to_male: f64,
    pub delta: f64,
}

/// Relative growth of the score magnitude between two runs:
/// `100 * (|new| - |old|) / |old|`. Positive means the association
/// strengthened. `None` when the old score is zero (undefined cell).
pub fn percent_change(old_delta: f64, new_delta: f64) -> Option<f64> {
    if old_delta == 0.0 {
        return None;
    }
    Some(100.0 * (new_delta.abs() - old_delta.abs()) / old_delta.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{embed_set, EmbeddingTable};
    use proptest::prelude::*;

    fn set_of(vectors: &[(&str, Vec<f64>)]) -> EmbeddingSet {
        let table =
            EmbeddingTable::from_pairs(vectors.iter().map(|(w, v)| (w.to_string(), v.clone())))
                .unwrap();
        let words: Vec<String> = vectors.iter().map(|(w, _)| w.to_string()).collect();
        embed_set(&words, &table, "test").unwrap().0
    }

    #[test]
    fn strip_removes_gendered_tokens_only() {
        let words: Vec<String> = ["her", "kind"].iter().map(|s| s.to_string()).collect();
        assert_eq!(strip_gendered_tokens(&words), vec!["kind"]);

        assert!(strip_gendered_tokens(&[]).is_empty());

        let words: Vec<String> = ["mr", "resilience", "his"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(strip_gendered_tokens(&words), vec!["resilience"]);
    }

    #[test]
    fn anchor_cases() {
        let e1 = set_of(&[("x", vec![1.0, 0.0])]);
        let e2 = set_of(&[("y", vec![0.0, 1.0])]);
        let neg_e1 = set_of(&[("z", vec![-1.0, 0.0])]);

        // self distance is zero
        assert_eq!(subset_similarity(&e1, &e1).unwrap(), 0.0);
        // orthogonal unit vectors: cosine 0 -> distance 1
        assert_eq!(subset_similarity(&e1, &e2).unwrap(), 1.0);
        // antipodal: cosine -1 -> distance 2
        assert_eq!(subset_similarity(&e1, &neg_e1).unwrap(), 2.0);
        // srbs antisymmetry in the two targets
        let s = set_of(&[("s", vec![0.6, 0.8])]);
        let ab = srbs(&s, &e1, &e2).unwrap();
        let ba = srbs(&s, &e2, &e1).unwrap();
        assert!((ab + ba).abs() < 1e-15);
        // identical targets: zero
        assert_eq!(srbs(&s, &e1, &e1).unwrap(), 0.0);
        // s = a orthogonal to b: 0 - 1 = -1
        assert_eq!(srbs(&e1, &e1, &e2).unwrap(), -1.0);
    }

    #[test]
    fn nearest_member_wins() {
        let a = set_of(&[("a", vec![1.0, 0.0])]);
        let b = set_of(&[("far", vec![-1.0, 0.0]), ("near", vec![1.0, 0.1])]);
        let d = subset_similarity(&a, &b).unwrap();
        assert!(d < 0.01, "nearest vector should dominate, got {d}");
    }

    /// Straightforward re-implementation of the definition, kept separate
    /// from the library path on purpose.
    fn brute_force(a: &EmbeddingSet, b: &EmbeddingSet) -> f64 {
        let mut total = 0.0;
        for (_, v) in a.members() {
            let mut best = f64::INFINITY;
            for (_, u) in b.members() {
                let dot: f64 = u.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
                let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let d = 1.0 - dot / (nu * nv);
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / a.members().len() as f64
    }

    /// Random set with non-degenerate vectors, reproducible from the seed.
    pub(crate) fn random_set(dim: usize, size: usize, seed: u64, label: &str) -> EmbeddingSet {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(String, Vec<f64>)> = (0..size)
            .map(|i| {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
                if v.iter().all(|x| x.abs() < 1e-3) {
                    v[0] = 1.0;
                }
                (format!("w{i}"), v)
            })
            .collect();
        let words: Vec<String> = pairs.iter().map(|(w, _)| w.clone()).collect();
        let table = EmbeddingTable::from_pairs(pairs).unwrap();
        embed_set(&words, &table, label).unwrap().0
    }

    #[test]
    fn agrees_with_brute_force_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for trial in 0..100u64 {
            let dim = rng.gen_range(2..=50);
            let na = rng.gen_range(1..=20);
            let nb = rng.gen_range(1..=20);
            let a = random_set(dim, na, 1000 + trial, "a");
            let b = random_set(dim, nb, 2000 + trial, "b");
            let lib = subset_similarity(&a, &b).unwrap();
            let oracle = brute_force(&a, &b);
            assert!(
                (lib - oracle).abs() < 1e-12,
                "trial {trial}: {lib} vs {oracle}"
            );
            assert!((0.0..=2.0).contains(&lib));
        }
    }

    #[test]
    fn random_sizes_5_and_7_match_oracle() {
        let a = random_set(10, 5, 7, "a");
        let b = random_set(10, 7, 8, "b");
        let lib = subset_similarity(&a, &b).unwrap();
        assert!((lib - brute_force(&a, &b)).abs() < 1e-12);
    }

    proptest! {
        /// Scaling any vector by a positive factor leaves the metric unchanged.
        #[test]
        fn scale_invariance(scale in 0.1f64..50.0) {
            let a = set_of(&[("a", vec![0.3, 0.4, 0.1]), ("b", vec![-1.0, 2.0, 0.5])]);
            let b = set_of(&[("c", vec![2.0, -1.0, 0.3]), ("d", vec![0.1, 0.1, 0.9])]);
            let base = subset_similarity(&a, &b).unwrap();
            let scaled_b = set_of(&[
                ("c", vec![2.0 * scale, -1.0 * scale, 0.3 * scale]),
                ("d", vec![0.1, 0.1, 0.9]),
            ]);
            let scaled = subset_similarity(&a, &scaled_b).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }

    #[test]
    fn superset_shrinks_distance() {
        let a = set_of(&[("a", vec![1.0, 1.0])]);
        let b = set_of(&[("c", vec![-1.0, 0.2])]);
        let b_sup = set_of(&[("c", vec![-1.0, 0.2]), ("d", vec![1.0, 0.9])]);
        assert!(subset_similarity(&a, &b_sup).unwrap() <= subset_similarity(&a, &b).unwrap());
    }

    #[test]
    fn percent_change_convention() {
        assert_eq!(percent_change(0.10, 0.20), Some(100.0));
        assert_eq!(percent_change(0.20, 0.10), Some(-50.0));
        // associated women drew closer to specified women: |delta| grew
        assert_eq!(percent_change(-0.05, -0.10), Some(100.0));
        assert_eq!(percent_change(0.0, 0.5), None);
    }
}
