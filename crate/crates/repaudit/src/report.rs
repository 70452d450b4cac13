//! Representation statistics against labor reference data, category
//! lexicon tagging, and the binned views the report files are built from.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, GenerationRecord, SpecifiedGender};
use crate::gender::GenderLabel;
use crate::{Error, Result};

/// Gender shares of one (model, occupation) cell over labeled ungendered
/// records; the three shares sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Shares {
    pub female: f64,
    pub male: f64,
    pub nonbinary: f64,
    pub labeled: usize,
}

/// Shares of F/M/N per (model, occupation) among labeled ungendered
/// records. Cells without a single labeled record are absent.
pub fn representation_distribution(
    records: &[&GenerationRecord],
) -> BTreeMap<(String, String), Shares> {
    let mut tallies: BTreeMap<(String, String), (usize, usize, usize)> = BTreeMap::new();
    for record in records {
        if record.specified_gender != SpecifiedGender::None {
            continue;
        }
        let Some(label) = record.associated_gender else {
            continue;
        };
        let entry = tallies
            .entry((record.model.clone(), record.occupation.clone()))
            .or_insert((0, 0, 0));
        match label {
            GenderLabel::F => entry.0 += 1,
            GenderLabel::M => entry.1 += 1,
            GenderLabel::N => entry.2 += 1,
        }
    }
    tallies
        .into_iter()
        .map(|(key, (f, m, n))| {
            let total = (f + m + n) as f64;
            (
                key,
                Shares {
                    female: f as f64 / total,
                    male: m as f64 / total,
                    nonbinary: n as f64 / total,
                    labeled: f + m + n,
                },
            )
        })
        .collect()
}

/// One row of the labor reference file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceShare {
    pub occupation: String,
    pub female_share: f64,
    pub source: String,
}

/// Loads the reference CSV (`occupation,female_share,source` with header).
pub fn load_reference_shares(path: &Path) -> Result<Vec<ReferenceShare>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Invalid(format!("reference file {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (idx, row) in reader.deserialize::<ReferenceShare>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, idx + 2, e.to_string()))?;
        if !(0.0..=1.0).contains(&row.female_share) {
            return Err(Error::parse(
                path,
                idx + 2,
                format!("female_share out of [0, 1]: {}", row.female_share),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Decile index of a share: [0,10) .. [80,90), with the top bin [90,100]
/// closed so a 100% share lands in it.
pub fn decile_bin(share: f64) -> usize {
    ((share * 10.0).floor() as usize).min(9)
}

/// Pretty label of a decile bin.
pub fn decile_label(bin: usize) -> String {
    format!("{}-{}", bin * 10, bin * 10 + 10)
}

/// Counts per decile for the model's shares and the reference shares over
/// the same matched occupations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SplitBins {
    pub model: [usize; 10],
    pub reference: [usize; 10],
    pub occupations: usize,
}

/// Fig-1-shaped view: occupations split by whether the reference calls
/// them male- or female-dominated, then binned by female share.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DecileHistogram {
    pub male_dominated: SplitBins,
    pub female_dominated: SplitBins,
    /// Occupations with model shares but no reference row.
    pub unmatched: Vec<String>,
}

/// Splits occupations at a 50% reference female share and bins both the
/// model's shares and the reference's into deciles. Occupations absent
/// from the reference are listed, not binned.
pub fn decile_histogram(
    shares: &BTreeMap<String, f64>,
    reference: &[ReferenceShare],
) -> DecileHistogram {
    let by_occupation: BTreeMap<&str, f64> = reference
        .iter()
        .map(|r| (r.occupation.as_str(), r.female_share))
        .collect();
    let mut histogram = DecileHistogram::default();
    for (occupation, model_share) in shares {
        let Some(reference_share) = by_occupation.get(occupation.as_str()) else {
            histogram.unmatched.push(occupation.clone());
            continue;
        };
        let split = if *reference_share < 0.5 {
            &mut histogram.male_dominated
        } else {
            &mut histogram.female_dominated
        };
        split.model[decile_bin(*model_share)] += 1;
        split.reference[decile_bin(*reference_share)] += 1;
        split.occupations += 1;
    }
    histogram
}

/// U.S. population share identifying as non-binary, used as a benchmark
/// marker in the non-binary report.
pub const NONBINARY_POPULATION_BENCHMARK: f64 = 0.016;

/// Percentile bin of a non-binary share: a dedicated bin for exactly zero,
/// then (0,1], (1,2], ... counted in percent.
pub fn nonbinary_bin(share: f64) -> usize {
    if share == 0.0 {
        0
    } else {
        (share * 100.0).ceil().max(1.0) as usize
    }
}

/// Label of a non-binary percentile bin.
pub fn nonbinary_bin_label(bin: usize) -> String {
    if bin == 0 {
        "0".to_string()
    } else {
        format!("{}-{}", bin - 1, bin)
    }
}

/// The bin holding the population benchmark (1.6% -> bin (1,2]).
pub fn nonbinary_benchmark_bin() -> usize {
    nonbinary_bin(NONBINARY_POPULATION_BENCHMARK)
}

/// Counts occupations per non-binary percentile bin.
pub fn nonbinary_percentile_bins(shares: &BTreeMap<String, f64>) -> BTreeMap<usize, usize> {
    let mut bins = BTreeMap::new();
    for share in shares.values() {
        *bins.entry(nonbinary_bin(*share)).or_insert(0) += 1;
    }
    bins
}

/// Category name -> word list. Categories may overlap; words are
/// tokenize-normalized on load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryLexicon {
    categories: BTreeMap<String, BTreeSet<String>>,
}

impl CategoryLexicon {
    pub fn from_map(map: BTreeMap<String, Vec<String>>) -> Self {
        let categories = map
            .into_iter()
            .map(|(name, words)| {
                let normalized = words.iter().flat_map(|w| tokenize(w)).collect();
                (name, normalized)
            })
            .collect();
        CategoryLexicon { categories }
    }

    /// Loads a JSON file mapping category names to word arrays.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&raw)
            .map_err(|e| Error::Invalid(format!("lexicon {}: {e}", path.display())))?;
        Ok(Self::from_map(map))
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.categories.iter().map(|(n, w)| (n.as_str(), w))
    }

    pub fn contains_category(&self, name: &str) -> bool {
        self.categories.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Restricts the lexicon to the named categories; unknown names error.
    pub fn restricted_to(&self, names: &[String]) -> Result<Self> {
        let mut categories = BTreeMap::new();
        for name in names {
            let words = self
                .categories
                .get(name)
                .ok_or_else(|| Error::UnknownCategory(name.clone()))?;
            categories.insert(name.clone(), words.clone());
        }
        Ok(CategoryLexicon { categories })
    }
}

static BUNDLED_LEXICON: OnceLock<CategoryLexicon> = OnceLock::new();

/// The bundled category lexicon (15 categories of stereotype- and
/// narrative-related words).
pub fn bundled_lexicon() -> &'static CategoryLexicon {
    BUNDLED_LEXICON.get_or_init(|| {
        let raw = include_str!("../fixtures/category_lexicon.json");
        let map: BTreeMap<String, Vec<String>> =
            serde_json::from_str(raw).expect("bundled lexicon is well formed");
        CategoryLexicon::from_map(map)
    })
}

/// One audited category hit: which words of an occupation's significant
/// list fell into the category.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryHit {
    pub model: String,
    pub gender: GenderLabel,
    pub category: String,
    pub occupation: String,
    pub words: Vec<String>,
}

/// Counts, per (model, gender, category), the occupations with at least
/// one significant word in the category; an occupation counts once no
/// matter how many of its words hit. The per-hit word lists are returned
/// alongside for auditing.
pub fn categorize(
    significant: &BTreeMap<(String, String, GenderLabel), Vec<String>>,
    lexicon: &CategoryLexicon,
) -> (
    BTreeMap<(String, GenderLabel, String), usize>,
    Vec<CategoryHit>,
) {
    let mut counts = BTreeMap::new();
    let mut hits = Vec::new();
    for ((model, occupation, gender), words) in significant {
        for (category, lexicon_words) in lexicon.categories() {
            let matched: Vec<String> = words
                .iter()
                .filter(|w| lexicon_words.contains(w.as_str()))
                .cloned()
                .collect();
            if matched.is_empty() {
                continue;
            }
            *counts
                .entry((model.clone(), *gender, category.to_string()))
                .or_insert(0) += 1;
            hits.push(CategoryHit {
                model: model.clone(),
                gender: *gender,
                category: category.to_string(),
                occupation: occupation.clone(),
                words: matched,
            });
        }
    }
    (counts, hits)
}
