//! Keyed word-vector tables loaded from the standard text format, plus the
//! named vector sets the similarity metrics operate on.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Immutable word -> vector table; all vectors share one dimension and
/// none has zero norm.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    dimension: usize,
}

impl EmbeddingTable {
    /// Loads the text keyed-vector format: an optional `count dim` header
    /// line, then `word v1 ... vd` lines. Mixed dimensions, zero-norm
    /// vectors, and duplicate words are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut table = EmbeddingTable::default();
        let mut first_entry = true;
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if first_entry
                && fields.len() == 2
                && fields[0].parse::<usize>().is_ok()
                && fields[1].parse::<usize>().is_ok()
            {
                // header: vocabulary size and dimension
                table.dimension = fields[1].parse().unwrap();
                first_entry = false;
                continue;
            }
            first_entry = false;
            if fields.len() < 2 {
                return Err(Error::Embedding {
                    path: path.to_path_buf(),
                    message: format!("line {}: expected `word v1 ... vd`", idx + 1),
                });
            }
            let word = fields[0].to_string();
            let vector: Vec<f64> = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Embedding {
                    path: path.to_path_buf(),
                    message: format!("line {}: bad component: {e}", idx + 1),
                })?;
            table
                .insert(word, vector)
                .map_err(|message| Error::Embedding {
                    path: path.to_path_buf(),
                    message: format!("line {}: {message}", idx + 1),
                })?;
        }
        if table.vectors.is_empty() {
            return Err(Error::Embedding {
                path: path.to_path_buf(),
                message: "no vectors found".into(),
            });
        }
        Ok(table)
    }

    /// Builds a table from (word, vector) pairs, enforcing the same
    /// invariants as the file loader.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = EmbeddingTable::default();
        for (word, vector) in pairs {
            table.insert(word, vector).map_err(Error::Invalid)?;
        }
        Ok(table)
    }

    fn insert(&mut self, word: String, vector: Vec<f64>) -> std::result::Result<(), String> {
        if self.dimension == 0 {
            self.dimension = vector.len();
        } else if vector.len() != self.dimension {
            return Err(format!(
                "vector for `{word}` has dimension {}, expected {}",
                vector.len(),
                self.dimension
            ));
        }
        if vector.iter().all(|v| *v == 0.0) {
            return Err(format!("zero-norm vector for `{word}`"));
        }
        if self.vectors.contains_key(&word) {
            return Err(format!("duplicate word `{word}`"));
        }
        self.vectors.insert(word, vector);
        Ok(())
    }

    /// Deterministic random unit-scale vectors for the given words; used by
    /// offline demos and tests that need a vocabulary-complete table.
    pub fn synthetic<I, S>(words: I, dimension: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut table = EmbeddingTable {
            vectors: HashMap::new(),
            dimension,
        };
        for word in words {
            let word = word.as_ref();
            if table.vectors.contains_key(word) {
                continue;
            }
            // per-word rng so the vector does not depend on insertion order
            let mut hash = seed ^ 0x9e37_79b9_7f4a_7c15;
            for b in word.bytes() {
                hash = hash.wrapping_mul(0x100_0000_01b3).wrapping_add(b as u64);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(hash);
            let vector: Vec<f64> = (0..dimension).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vector = if vector.iter().all(|v| *v == 0.0) {
                vec![1.0; dimension]
            } else {
                vector
            };
            table.vectors.insert(word.to_string(), vector);
        }
        table
    }

    /// Writes the table in the text keyed-vector format with a header,
    /// sorted by word for determinism.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{} {}", self.vectors.len(), self.dimension)
            .map_err(|e| Error::io(path, e))?;
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        for word in words {
            let comps: Vec<String> = self.vectors[word].iter().map(|v| v.to_string()).collect();
            writeln!(writer, "{} {}", word, comps.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// A named, non-empty set of (word, vector) members drawn from one table.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub label: String,
    members: Vec<(String, Vec<f64>)>,
}

impl EmbeddingSet {
    pub fn members(&self) -> &[(String, Vec<f64>)] {
        &self.members
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|(w, _)| w.as_str())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Looks up each word's vector, deduplicating the input and dropping
/// out-of-vocabulary words into the returned side list. Erroring when
/// nothing is left avoids silently scoring an empty set.
pub fn embed_set(
    words: &[String],
    table: &EmbeddingTable,
    label: &str,
) -> Result<(EmbeddingSet, Vec<String>)> {
    let mut members = Vec::new();
    let mut missing = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for word in words {
        if !seen.insert(word.as_str()) {
            continue;
        }
        match table.get(word) {
            Some(vector) => members.push((word.clone(), vector.to_vec())),
            None => missing.push(word.clone()),
        }
    }
    if members.is_empty() {
        return Err(Error::EmptyEmbeddingSet(label.to_string()));
    }
    Ok((
        EmbeddingSet {
            label: label.to_string(),
            members,
        },
        missing,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn loads_text_format_with_header() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("vecs.txt");
        std::fs::write(&path, "2 3\nalpha 1.0 0.0 0.0\nbeta 0.5 -0.25 2.0\n").unwrap();
        let table = EmbeddingTable::load(&path).unwrap();
        assert_eq!(table.dimension(), 3);
        assert_eq!(table.len(), 2);
        assert_eq!(table.get("beta").unwrap(), &[0.5, -0.25, 2.0]);
    }

    #[test]
    fn loads_headerless_format() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("vecs.txt");
        std::fs::write(&path, "alpha 1 0\nbeta 0 1\n").unwrap();
        let table = EmbeddingTable::load(&path).unwrap();
        assert_eq!(table.dimension(), 2);
    }

    #[test]
    fn rejects_bad_files() {
        let dir = TempDir::new().unwrap();
        let mixed = dir.path().join("mixed.txt");
        std::fs::write(&mixed, "alpha 1 0\nbeta 0 1 5\n").unwrap();
        assert!(EmbeddingTable::load(&mixed).is_err());

        let zero = dir.path().join("zero.txt");
        std::fs::write(&zero, "alpha 0 0\n").unwrap();
        assert!(EmbeddingTable::load(&zero).is_err());

        let dup = dir.path().join("dup.txt");
        std::fs::write(&dup, "alpha 1 0\nalpha 0 1\n").unwrap();
        assert!(EmbeddingTable::load(&dup).is_err());
    }

    #[test]
    fn save_round_trips() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("vecs.txt");
        let table = EmbeddingTable::synthetic(["one", "two", "three"], 4, 9);
        table.save(&path).unwrap();
        let loaded = EmbeddingTable::load(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.get("two"), table.get("two"));
    }

    #[test]
    fn synthetic_is_order_independent() {
        let a = EmbeddingTable::synthetic(["x", "y"], 8, 1);
        let b = EmbeddingTable::synthetic(["y", "x"], 8, 1);
        assert_eq!(a.get("x"), b.get("x"));
        assert_eq!(a.get("y"), b.get("y"));
    }

    #[test]
    fn embed_set_drops_oov_and_dedupes() {
        let table = EmbeddingTable::synthetic(["kind", "steady"], 4, 2);
        let words: Vec<String> = ["kind", "steady", "kind", "ghost"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (set, missing) = embed_set(&words, &table, "test").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(missing, vec!["ghost".to_string()]);
    }

    #[test]
    fn embed_set_errors_when_empty() {
        let table = EmbeddingTable::synthetic(["kind"], 4, 2);
        assert!(embed_set(&[], &table, "empty").is_err());
        let oov = vec!["ghost".to_string()];
        let err = embed_set(&oov, &table, "all-oov").unwrap_err();
        assert!(matches!(err, Error::EmptyEmbeddingSet(label) if label == "all-oov"));
    }
}
