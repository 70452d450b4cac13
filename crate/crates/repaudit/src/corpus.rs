//! Tokenization, word counting, and corpus persistence shared by every
//! statistics stage.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gender::GenderLabel;
use crate::{Error, Result};

/// Splits on whitespace, lowercases each word, and deletes every
/// non-alphanumeric character inside it. Empty results are dropped and
/// order is preserved. Digits are kept: deleting them would silently merge
/// distinct tokens.
///
/// `"Detail-oriented!"` becomes `["detailoriented"]` and `"Chen's plan"`
/// becomes `["chens", "plan"]`. This is the only normalization the crate
/// supports, so counts stay reproducible across stages.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let token: String = raw
                .to_lowercase()
                .chars()
                .filter(|c| c.is_alphanumeric())
                .collect();
            if token.is_empty() {
                None
            } else {
                Some(token)
            }
        })
        .collect()
}

/// Word -> count table for one corpus slice. Immutable once built; share
/// freely across threads. Keys are always `tokenize` outputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    counts: HashMap<String, u64>,
    total: u64,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from arbitrary (word, count) pairs. Keys are pushed
    /// through `tokenize` so the key invariant holds by construction;
    /// entries that normalize to nothing are dropped.
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: AsRef<str>,
    {
        let mut table = CountTable::new();
        for (word, count) in pairs {
            for token in tokenize(word.as_ref()) {
                table.add(&token, count);
            }
        }
        table
    }

    pub(crate) fn add(&mut self, token: &str, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(token.to_string()).or_insert(0) += count;
        self.total += count;
    }

    pub fn get(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.counts.contains_key(word)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(w, c)| (w.as_str(), *c))
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    /// Re-derives the total from the entries; always equals `total()`.
    pub fn recomputed_total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Counts token multiplicities; `total` equals the input length.
pub fn count_words<S: AsRef<str>>(tokens: &[S]) -> CountTable {
    let mut table = CountTable::new();
    for token in tokens {
        table.add(token.as_ref(), 1);
    }
    table
}

/// Pointwise sum of the given tables.
pub fn merge<'a, I>(tables: I) -> CountTable
where
    I: IntoIterator<Item = &'a CountTable>,
{
    let mut out = CountTable::new();
    for table in tables {
        for (word, count) in table.iter() {
            out.add(word, count);
        }
    }
    out
}

/// The `k` highest-count words (by merged count) among words present in
/// every input table. Ties break lexicographically. Fewer than `k` shared
/// words returns them all; an empty `corpora` slice yields the empty set.
pub fn shared_top_words(corpora: &[CountTable], k: usize) -> BTreeSet<String> {
    let mut shared: Vec<(String, u64)> = Vec::new();
    let Some(first) = corpora.first() else {
        return BTreeSet::new();
    };
    'words: for (word, _) in first.iter() {
        let mut merged = 0u64;
        for table in corpora {
            let c = table.get(word);
            if c == 0 {
                continue 'words;
            }
            merged += c;
        }
        shared.push((word.to_string(), merged));
    }
    shared.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    shared.into_iter().take(k).map(|(w, _)| w).collect()
}

/// Prompt template family a record was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Persona,
    Biography,
}

impl PromptKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Persona => "persona",
            PromptKind::Biography => "biography",
        }
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gender written into the prompt, or `None` for ungendered prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecifiedGender {
    None,
    Female,
    Male,
    Nonbinary,
}

impl SpecifiedGender {
    /// The label the association step is expected to produce for records
    /// generated with this gender in the prompt.
    pub fn expected_label(&self) -> Option<GenderLabel> {
        match self {
            SpecifiedGender::None => None,
            SpecifiedGender::Female => Some(GenderLabel::F),
            SpecifiedGender::Male => Some(GenderLabel::M),
            SpecifiedGender::Nonbinary => Some(GenderLabel::N),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SpecifiedGender::None => "none",
            SpecifiedGender::Female => "female",
            SpecifiedGender::Male => "male",
            SpecifiedGender::Nonbinary => "nonbinary",
        }
    }
}

impl std::fmt::Display for SpecifiedGender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One model output plus its campaign metadata. `associated_gender` stays
/// absent until the association step runs, and stays absent permanently
/// when no label can be derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub model: String,
    pub occupation: String,
    pub prompt_kind: PromptKind,
    pub specified_gender: SpecifiedGender,
    pub associated_gender: Option<GenderLabel>,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

/// Loads a corpus file: one JSON object per line with exactly the
/// `GenerationRecord` fields. Malformed lines error with their line
/// number; duplicate ids are a hard error because the harness relies on
/// ids for resumability.
pub fn load_corpus(path: &Path) -> Result<Vec<GenerationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GenerationRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if record.text.is_empty() {
            return Err(Error::parse(path, idx + 1, "record has empty text"));
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records as one JSON object per line, replacing the file.
pub fn save_corpus(records: &[GenerationRecord], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Invalid(format!("serialize record {}: {e}", record.id)))?;
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Append-only corpus writer used by campaign runners; flushes after every
/// record so an interrupted run loses at most the line being written.
pub struct CorpusAppender {
    writer: BufWriter<File>,
    path: std::path::PathBuf,
}

impl CorpusAppender {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(CorpusAppender {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, record: &GenerationRecord) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Invalid(format!("serialize record {}: {e}", record.id)))?;
        writeln!(self.writer, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

/// Truncates a torn trailing line (no final newline) left by an
/// interrupted append, so a resumed campaign can reload the file strictly.
/// Returns true when bytes were dropped.
pub fn repair_corpus_tail(path: &Path) -> Result<bool> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(false),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut contents = Vec::new();
    file.read_to_end(&mut contents)
        .map_err(|e| Error::io(path, e))?;
    if contents.is_empty() || contents.ends_with(b"\n") {
        return Ok(false);
    }
    let keep = contents
        .iter()
        .rposition(|&b| b == b'\n')
        .map(|p| p + 1)
        .unwrap_or(0);
    file.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
    file.seek(SeekFrom::End(0))
        .map_err(|e| Error::io(path, e))?;
    Ok(true)
}

/// Loads a reference word-frequency prior from `word<space>count` lines.
/// Words are re-normalized through `tokenize`; entries that normalize to
/// nothing are skipped and duplicate keys accumulate.
pub fn load_reference_prior(path: &Path) -> Result<CountTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut table = CountTable::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected `word count`, got {} fields", fields.len()),
            ));
        }
        let count: u64 = fields[1].parse().map_err(|_| {
            Error::parse(path, idx + 1, format!("non-numeric count `{}`", fields[1]))
        })?;
        for token in tokenize(fields[0]) {
            table.add(&token, count);
        }
    }
    if table.is_empty() {
        return Err(Error::EmptyPrior(path.to_path_buf()));
    }
    Ok(table)
}

static BUNDLED_ENGLISH_PRIOR: OnceLock<CountTable> = OnceLock::new();

/// Word frequencies of the Brown corpus (1,013,319 tokens after
/// normalization), bundled so the default configuration works offline.
/// Any `word count` file can be substituted through the config.
pub fn bundled_english_prior() -> &'static CountTable {
    BUNDLED_ENGLISH_PRIOR.get_or_init(|| {
        let raw = include_str!("../fixtures/english_prior.txt");
        let mut table = CountTable::new();
        for line in raw.lines() {
            if line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(word), Some(count)) = (fields.next(), fields.next()) else {
                continue;
            };
            let count: u64 = count.parse().expect("bundled prior is well formed");
            table.add(word, count);
        }
        table
    })
}

static BUNDLED_COMMON_WORDS: OnceLock<BTreeSet<String>> = OnceLock::new();

/// The bundled base calibration list: 50 English function words.
pub fn bundled_common_words() -> &'static BTreeSet<String> {
    BUNDLED_COMMON_WORDS.get_or_init(|| {
        include_str!("../fixtures/common_words.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    })
}

/// Loads a calibration word list (one word per line, `#` comments allowed).
pub fn load_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut words = BTreeSet::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        for token in tokenize(trimmed) {
            words.insert(token);
        }
    }
    Ok(words)
}
