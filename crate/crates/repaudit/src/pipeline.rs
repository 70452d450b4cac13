//! Wires the stages behind the CLI subcommands: generate, associate,
//! markedwords, score, and report. Every emitted data file is a pure
//! function of its inputs (no timestamps), so re-running a stage on the
//! same inputs is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias::{percent_change, strip_gendered_tokens, BiasScoreRecord};
use crate::config::AppConfig;
use crate::corpus::{
    bundled_common_words, bundled_english_prior, load_corpus, load_reference_prior, load_word_list,
    merge, save_corpus, tokenize, CountTable, GenerationRecord, PromptKind, SpecifiedGender,
};
use crate::embedding::{embed_set, EmbeddingTable};
use crate::gender::{associate_gender, association_rate, validate_against_specified, GenderLabel};
use crate::harness::{
    build_client, mock_vocabulary, run_associated_campaign, run_specified_campaign,
};
use crate::marked::{
    calibrate_constants, calibrated_zscores_with, regularizers, significant_words, OddsDenominator,
    PriorSpec, ScoreOptions,
};
use crate::report::{
    categorize, decile_histogram, decile_label, nonbinary_benchmark_bin, nonbinary_bin_label,
    nonbinary_percentile_bins, representation_distribution, CategoryLexicon,
};
use crate::stats::welch_t_test;
use crate::{Error, Result};

/// Canonical artifact locations inside the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub out_dir: PathBuf,
}

impl Artifacts {
    pub fn new(out_dir: &Path) -> Self {
        Artifacts {
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn corpus_associated(&self) -> PathBuf {
        self.out_dir.join("corpus_associated.jsonl")
    }

    pub fn corpus_specified(&self) -> PathBuf {
        self.out_dir.join("corpus_specified.jsonl")
    }

    pub fn campaign_summary(&self, tag: &str) -> PathBuf {
        self.out_dir.join(format!("campaign_{tag}.json"))
    }

    pub fn marked_dir(&self, tag: &str) -> PathBuf {
        self.out_dir.join("marked_words").join(tag)
    }

    pub fn bias_scores(&self) -> PathBuf {
        self.out_dir.join("bias_scores.csv")
    }

    pub fn welch(&self) -> PathBuf {
        self.out_dir.join("welch.csv")
    }

    pub fn score_oov(&self) -> PathBuf {
        self.out_dir.join("score_oov.csv")
    }

    pub fn score_run(&self) -> PathBuf {
        self.out_dir.join("score_run.json")
    }

    pub fn representation(&self) -> PathBuf {
        self.out_dir.join("representation.csv")
    }

    pub fn deciles(&self) -> PathBuf {
        self.out_dir.join("deciles.csv")
    }

    pub fn nonbinary_bins(&self) -> PathBuf {
        self.out_dir.join("nonbinary_bins.csv")
    }

    pub fn percent_change(&self) -> PathBuf {
        self.out_dir.join("percent_change.csv")
    }

    pub fn categories(&self) -> PathBuf {
        self.out_dir.join("categories.csv")
    }

    pub fn categories_audit(&self) -> PathBuf {
        self.out_dir.join("categories_audit.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.out_dir.join("manifest.json")
    }

    pub fn associate_capture(&self) -> PathBuf {
        self.out_dir.join("associate_capture.csv")
    }

    pub fn associate_validation(&self) -> PathBuf {
        self.out_dir.join("associate_validation.csv")
    }

    fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingStage {
            stage: stage.to_string(),
            path: path.to_path_buf(),
        })
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

/// Which campaign(s) to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerateMode {
    Associated,
    Specified,
    Both,
}

/// Runs the configured campaign(s) against the configured endpoint (or the
/// mock when forced) and writes the corpora plus campaign summaries.
pub fn stage_generate(
    config: &AppConfig,
    out_dir: &Path,
    mode: GenerateMode,
    resume: bool,
    force_mock: bool,
    seed_override: Option<u64>,
) -> Result<()> {
    let artifacts = Artifacts::new(out_dir);
    artifacts.ensure_dir()?;
    let mut mock_config = config.mock.clone();
    if let Some(seed) = seed_override {
        mock_config.seed = seed;
    }
    let client = build_client(&config.campaign, &mock_config, force_mock)?;

    if matches!(mode, GenerateMode::Associated | GenerateMode::Both) {
        let report = run_associated_campaign(
            &config.campaign,
            client.as_ref(),
            &artifacts.corpus_associated(),
            resume,
        )?;
        let summary = serde_json::json!({
            "campaign": "associated",
            "model": report.model,
            "endpoint": config.campaign.endpoint,
            "quota": config.campaign.quota,
            "gate": config.campaign.gate,
            "max_requests": config.campaign.max_requests,
            "cells": report.cells,
            "failed_cells": report.failed_cells,
        });
        write_json(&artifacts.campaign_summary("associated"), &summary)?;
    }
    if matches!(mode, GenerateMode::Specified | GenerateMode::Both) {
        let report = run_specified_campaign(
            &config.campaign,
            client.as_ref(),
            &artifacts.corpus_specified(),
            resume,
        )?;
        let summary = serde_json::json!({
            "campaign": "specified",
            "model": report.model,
            "endpoint": config.campaign.endpoint,
            "quota": config.campaign.quota,
            "cells": report.cells,
            "incomplete_cells": report.incomplete_cells,
        });
        write_json(&artifacts.campaign_summary("specified"), &summary)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invalid(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// associate
// ---------------------------------------------------------------------------

/// Capture and validation summaries produced by the associate stage.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AssociateSummary {
    /// model -> (captured fraction, ungendered record count)
    pub capture: BTreeMap<String, (f64, usize)>,
    /// (model, specified gender) -> validation fractions
    pub validation: BTreeMap<(String, String), crate::gender::ValidationSummary>,
}

impl AssociateSummary {
    /// Table-shaped CSV text: capture rates then validation rates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,captured_pct,ungendered_records\n");
        for (model, (rate, count)) in &self.capture {
            out.push_str(&format!("{model},{:.4},{count}\n", rate * 100.0));
        }
        out.push_str("\nmodel,gender,correct_pct,incorrect_pct,not_captured_pct,records\n");
        for ((model, gender), v) in &self.validation {
            out.push_str(&format!(
                "{model},{gender},{:.4},{:.4},{:.4},{}\n",
                v.correct * 100.0,
                v.incorrect * 100.0,
                v.not_captured * 100.0,
                v.records
            ));
        }
        out
    }
}

/// Fills `associated_gender` for every record of the given corpus files
/// (rewriting each file in place) and summarizes capture and validation
/// accuracy per model.
pub fn stage_associate(
    corpus_paths: &[PathBuf],
    artifacts: Option<&Artifacts>,
) -> Result<AssociateSummary> {
    let mut summary = AssociateSummary::default();
    let mut by_model_ungendered: BTreeMap<String, Vec<GenerationRecord>> = BTreeMap::new();
    let mut by_model_specified: BTreeMap<String, Vec<GenerationRecord>> = BTreeMap::new();

    for path in corpus_paths {
        require(path, "associate")?;
        let mut records = load_corpus(path)?;
        for record in &mut records {
            let counts = crate::corpus::count_words(&tokenize(&record.text));
            record.associated_gender = associate_gender(&record.text, &counts);
        }
        let tmp = path.with_extension("jsonl.tmp");
        save_corpus(&records, &tmp)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        for record in records {
            if record.specified_gender == SpecifiedGender::None {
                by_model_ungendered
                    .entry(record.model.clone())
                    .or_default()
                    .push(record);
            } else {
                by_model_specified
                    .entry(record.model.clone())
                    .or_default()
                    .push(record);
            }
        }
    }

    for (model, records) in &by_model_ungendered {
        summary
            .capture
            .insert(model.clone(), (association_rate(records)?, records.len()));
    }
    for (model, records) in &by_model_specified {
        for (gender, validation) in validate_against_specified(records)? {
            summary
                .validation
                .insert((model.clone(), gender.to_string()), validation);
        }
    }

    if let Some(artifacts) = artifacts {
        artifacts.ensure_dir()?;
        let mut capture = csv_writer(&artifacts.associate_capture())?;
        capture
            .write_record(["model", "captured_pct", "ungendered_records"])
            .and_then(|_| {
                for (model, (rate, count)) in &summary.capture {
                    capture.write_record([
                        model.as_str(),
                        &format!("{:.4}", rate * 100.0),
                        &count.to_string(),
                    ])?;
                }
                capture.flush().map_err(csv::Error::from)
            })
            .map_err(|e| Error::Invalid(e.to_string()))?;

        let mut validation = csv_writer(&artifacts.associate_validation())?;
        validation
            .write_record([
                "model",
                "gender",
                "correct_pct",
                "incorrect_pct",
                "not_captured_pct",
                "records",
            ])
            .and_then(|_| {
                for ((model, gender), v) in &summary.validation {
                    validation.write_record([
                        model.as_str(),
                        gender.as_str(),
                        &format!("{:.4}", v.correct * 100.0),
                        &format!("{:.4}", v.incorrect * 100.0),
                        &format!("{:.4}", v.not_captured * 100.0),
                        &v.records.to_string(),
                    ])?;
                }
                validation.flush().map_err(csv::Error::from)
            })
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// markedwords
// ---------------------------------------------------------------------------

/// How records are assigned to the two compared groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    /// Ungendered records, grouped by their associated gender (F vs M).
    Associated,
    /// Gender-specified records, grouped by the prompt's gender (F vs M).
    Specified,
}

impl GroupBy {
    pub fn tag(&self) -> &'static str {
        match self {
            GroupBy::Associated => "associated",
            GroupBy::Specified => "specified",
        }
    }
}

type ComparisonKey = (String, String, Option<PromptKind>);

/// Summary of one marked-words run, written alongside the CSVs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MarkedRunSummary {
    pub grouping: String,
    pub threshold: f64,
    pub mix: f64,
    pub autocalibrate: bool,
    pub literal_pseudocode: bool,
    /// "model/occupation[/prompt]" -> tuned (c_topic, c_english).
    pub constants: BTreeMap<String, (f64, f64)>,
    /// Comparisons that could not be scored, with the reason.
    pub skipped: BTreeMap<String, String>,
    pub calibration_words: BTreeMap<String, usize>,
}

fn comparison_tag(key: &ComparisonKey) -> String {
    match &key.2 {
        Some(kind) => format!("{}/{}/{}", key.0, key.1, kind),
        None => format!("{}/{}", key.0, key.1),
    }
}

fn sanitize_component(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}

/// Computes significant words per (model, occupation[, prompt], gender)
/// and writes one CSV per comparison plus an `index.csv` and `run.json`.
pub fn stage_marked_words(
    config: &AppConfig,
    corpus_path: &Path,
    group_by: GroupBy,
    dir: &Path,
) -> Result<MarkedRunSummary> {
    require(corpus_path, "markedwords")?;
    let records = load_corpus(corpus_path)?;
    let analysis = &config.analysis;
    analysis.validate()?;

    let english_owned;
    let english: &CountTable = match &analysis.english_prior {
        Some(path) => {
            english_owned = load_reference_prior(path)?;
            &english_owned
        }
        None => bundled_english_prior(),
    };
    let base_words = match &analysis.common_words {
        Some(path) => load_word_list(path)?,
        None => bundled_common_words().clone(),
    };
    let options = ScoreOptions {
        threshold: analysis.threshold,
        denominator: if analysis.literal_pseudocode {
            OddsDenominator::SharedUnmarked
        } else {
            OddsDenominator::PerGroup
        },
    };

    // group records into cells and per-model topic priors
    let mut cells: BTreeMap<ComparisonKey, BTreeMap<GenderLabel, CountTable>> = BTreeMap::new();
    let mut topic_parts: BTreeMap<String, Vec<CountTable>> = BTreeMap::new();
    for record in &records {
        let gender = match group_by {
            GroupBy::Associated => {
                if record.specified_gender != SpecifiedGender::None {
                    continue;
                }
                match record.associated_gender {
                    Some(label) => label,
                    None => continue, // unlabeled records stay out of all statistics
                }
            }
            GroupBy::Specified => match record.specified_gender.expected_label() {
                Some(label) => label,
                None => continue,
            },
        };
        let counts = crate::corpus::count_words(&tokenize(&record.text));
        topic_parts
            .entry(record.model.clone())
            .or_default()
            .push(counts.clone());
        if gender == GenderLabel::N {
            continue; // the F/M comparison; N feeds only the topic prior
        }
        let prompt = if analysis.per_prompt {
            Some(record.prompt_kind)
        } else {
            None
        };
        let key = (record.model.clone(), record.occupation.clone(), prompt);
        let entry = cells.entry(key).or_default().entry(gender).or_default();
        *entry = merge([&*entry, &counts]);
    }

    let topic_priors: BTreeMap<String, CountTable> = topic_parts
        .into_iter()
        .map(|(model, parts)| (model, merge(parts.iter())))
        .collect();

    // calibration word set per model: base list plus shared top words
    let mut calibration: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for model in topic_priors.keys() {
        let model_tables: Vec<CountTable> = cells
            .iter()
            .filter(|((m, _, _), _)| m == model)
            .flat_map(|(_, genders)| genders.values().cloned())
            .collect();
        let mut words = base_words.clone();
        words.extend(crate::corpus::shared_top_words(
            &model_tables,
            analysis.shared_top_k,
        ));
        calibration.insert(model.clone(), words);
    }

    let mut summary = MarkedRunSummary {
        grouping: group_by.tag().to_string(),
        threshold: analysis.threshold,
        mix: analysis.mix,
        autocalibrate: analysis.autocalibrate,
        literal_pseudocode: analysis.literal_pseudocode,
        ..Default::default()
    };
    for (model, words) in &calibration {
        summary.calibration_words.insert(model.clone(), words.len());
    }

    struct Scored {
        rows: Vec<(GenderLabel, String, f64, u64)>,
        constants: (f64, f64),
    }

    let comparisons: Vec<(&ComparisonKey, &BTreeMap<GenderLabel, CountTable>)> =
        cells.iter().collect();
    let scored: Vec<(ComparisonKey, std::result::Result<Scored, String>)> = comparisons
        .par_iter()
        .map(|(key, genders)| {
            let run = || -> std::result::Result<Scored, String> {
                let female = genders
                    .get(&GenderLabel::F)
                    .ok_or("no female group in this comparison")?;
                let male = genders
                    .get(&GenderLabel::M)
                    .ok_or("no male group in this comparison")?;
                let topic = &topic_priors[&key.0];
                let words = &calibration[&key.0];
                let (c_topic, c_english) = if analysis.autocalibrate {
                    calibrate_constants(words, female, male, topic, english, analysis.mix, &options)
                        .map_err(|e| e.to_string())?
                } else {
                    (analysis.c_topic.unwrap(), analysis.c_english.unwrap())
                };
                let spec = PriorSpec {
                    topic,
                    english,
                    mix: analysis.mix,
                    c_topic,
                    c_english,
                };
                let reg = regularizers(words, female, male, &spec).map_err(|e| e.to_string())?;
                let z = calibrated_zscores_with(female, male, &reg.prior, reg.r1, reg.r2, &options)
                    .map_err(|e| e.to_string())?;
                let mut rows = Vec::new();
                for word in significant_words(&z, female) {
                    let score = z.get(&word).unwrap();
                    rows.push((GenderLabel::F, word.clone(), score, female.get(&word)));
                }
                let negated = z.negated();
                for word in significant_words(&negated, male) {
                    let score = negated.get(&word).unwrap();
                    rows.push((GenderLabel::M, word.clone(), score, male.get(&word)));
                }
                Ok(Scored {
                    rows,
                    constants: (c_topic, c_english),
                })
            };
            ((*key).clone(), run())
        })
        .collect();

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = csv_writer(&dir.join("index.csv"))?;
    index
        .write_record(["file", "model", "occupation", "prompt_kind"])
        .map_err(|e| Error::Invalid(e.to_string()))?;

    let mut used_names: BTreeSet<String> = BTreeSet::new();
    for (key, outcome) in scored {
        match outcome {
            Ok(scored) => {
                let mut name = match &key.2 {
                    Some(kind) => format!(
                        "{}__{}__{}",
                        sanitize_component(&key.0),
                        sanitize_component(&key.1),
                        kind
                    ),
                    None => format!(
                        "{}__{}",
                        sanitize_component(&key.0),
                        sanitize_component(&key.1)
                    ),
                };
                while used_names.contains(&name) {
                    name.push('_');
                }
                used_names.insert(name.clone());
                let file = format!("{name}.csv");
                let mut writer = csv_writer(&dir.join(&file))?;
                writer
                    .write_record(["word", "gender", "zscore", "group_count"])
                    .map_err(|e| Error::Invalid(e.to_string()))?;
                for (gender, word, score, count) in &scored.rows {
                    writer
                        .write_record([
                            word.as_str(),
                            gender.as_str(),
                            &score.to_string(),
                            &count.to_string(),
                        ])
                        .map_err(|e| Error::Invalid(e.to_string()))?;
                }
                writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;
                index
                    .write_record([
                        file.as_str(),
                        key.0.as_str(),
                        key.1.as_str(),
                        &key.2.map(|k| k.to_string()).unwrap_or_default(),
                    ])
                    .map_err(|e| Error::Invalid(e.to_string()))?;
                summary
                    .constants
                    .insert(comparison_tag(&key), scored.constants);
            }
            Err(reason) => {
                summary.skipped.insert(comparison_tag(&key), reason);
            }
        }
    }
    index.flush().map_err(|e| Error::Invalid(e.to_string()))?;
    write_json(&dir.join("run.json"), &summary)?;
    Ok(summary)
}

/// Reads a marked-words directory back into
/// (model, occupation, prompt) -> gender -> ranked significant words.
pub fn read_marked_dir(
    dir: &Path,
) -> Result<BTreeMap<ComparisonKey, BTreeMap<GenderLabel, Vec<String>>>> {
    let index_path = dir.join("index.csv");
    require(&index_path, "markedwords")?;
    let mut reader = csv::Reader::from_path(&index_path)
        .map_err(|e| Error::Invalid(format!("{}: {e}", index_path.display())))?;
    let mut out: BTreeMap<ComparisonKey, BTreeMap<GenderLabel, Vec<String>>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Invalid(e.to_string()))?;
        let file = row.get(0).unwrap_or_default().to_string();
        let model = row.get(1).unwrap_or_default().to_string();
        let occupation = row.get(2).unwrap_or_default().to_string();
        let prompt = match row.get(3).unwrap_or_default() {
            "" => None,
            "persona" => Some(PromptKind::Persona),
            "biography" => Some(PromptKind::Biography),
            other => {
                return Err(Error::Invalid(format!(
                    "index.csv: unknown prompt kind `{other}`"
                )))
            }
        };
        let path = dir.join(&file);
        let mut words_reader = csv::Reader::from_path(&path)
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        let entry = out.entry((model, occupation, prompt)).or_default();
        for word_row in words_reader.records() {
            let word_row = word_row.map_err(|e| Error::Invalid(e.to_string()))?;
            let word = word_row.get(0).unwrap_or_default().to_string();
            let gender: GenderLabel = word_row.get(1).unwrap_or_default().parse()?;
            entry.entry(gender).or_default().push(word);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

/// Summary of the scoring stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub embeddings: PathBuf,
    pub embeddings_sha256: String,
    pub scored_cells: usize,
    pub skipped: BTreeMap<String, String>,
    pub welch_skipped: BTreeMap<String, String>,
}

/// Scores every (model, occupation) present in both marked-words runs:
/// embeds the pronoun-stripped significant words, computes each associated
/// set's distance to the specified-female and specified-male sets, and
/// summarizes per-model female/male score separation with Welch's t-test.
pub fn stage_score(config: &AppConfig, out_dir: &Path) -> Result<ScoreSummary> {
    let artifacts = Artifacts::new(out_dir);
    let embeddings_path =
        config.score.embeddings.as_ref().ok_or_else(|| {
            Error::Config("score.embeddings is required for the score stage".into())
        })?;
    require(embeddings_path, "score")?;
    let table = EmbeddingTable::load(embeddings_path)?;

    let associated = read_marked_dir(&artifacts.marked_dir("associated"))?;
    let specified = read_marked_dir(&artifacts.marked_dir("specified"))?;

    let mut summary = ScoreSummary {
        embeddings: embeddings_path.clone(),
        embeddings_sha256: sha256_file(embeddings_path)?,
        ..Default::default()
    };
    let mut rows: Vec<BiasScoreRecord> = Vec::new();
    let mut oov_rows: Vec<(String, String, String, String)> = Vec::new();

    for (key, assoc_genders) in &associated {
        let tag = comparison_tag(key);
        let Some(spec_genders) = specified.get(key) else {
            summary
                .skipped
                .insert(tag, "no specified-gender marked words for this cell".into());
            continue;
        };
        let mut embed = |label: &str,
                         words: Option<&Vec<String>>|
         -> std::result::Result<crate::embedding::EmbeddingSet, String> {
            let words = words.ok_or_else(|| format!("missing {label} word list"))?;
            let stripped = strip_gendered_tokens(words);
            let (set, missing) = embed_set(&stripped, &table, label).map_err(|e| e.to_string())?;
            for word in missing {
                oov_rows.push((key.0.clone(), key.1.clone(), label.to_string(), word));
            }
            Ok(set)
        };
        let sets = (|| -> std::result::Result<_, String> {
            let target_f = embed("specified-F", spec_genders.get(&GenderLabel::F))?;
            let target_m = embed("specified-M", spec_genders.get(&GenderLabel::M))?;
            let assoc_f = embed("associated-F", assoc_genders.get(&GenderLabel::F))?;
            let assoc_m = embed("associated-M", assoc_genders.get(&GenderLabel::M))?;
            Ok((target_f, target_m, assoc_f, assoc_m))
        })();
        let (target_f, target_m, assoc_f, assoc_m) = match sets {
            Ok(sets) => sets,
            Err(reason) => {
                summary.skipped.insert(tag, reason);
                continue;
            }
        };
        for (gender, candidate) in [(GenderLabel::F, &assoc_f), (GenderLabel::M, &assoc_m)] {
            let d_to_female = crate::bias::subset_similarity(candidate, &target_f)?;
            let d_to_male = crate::bias::subset_similarity(candidate, &target_m)?;
            rows.push(BiasScoreRecord {
                model: key.0.clone(),
                occupation: key.1.clone(),
                gender,
                d_to_female,
                d_to_male,
                delta: d_to_female - d_to_male,
            });
        }
        summary.scored_cells += 1;
    }

    rows.sort_by(|a, b| {
        (&a.model, &a.occupation, a.gender).cmp(&(&b.model, &b.occupation, b.gender))
    });
    let mut writer = csv_writer(&artifacts.bias_scores())?;
    writer
        .write_record([
            "model",
            "occupation",
            "gender",
            "d_to_female",
            "d_to_male",
            "delta",
        ])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    for row in &rows {
        writer
            .write_record([
                row.model.as_str(),
                row.occupation.as_str(),
                row.gender.as_str(),
                &row.d_to_female.to_string(),
                &row.d_to_male.to_string(),
                &row.delta.to_string(),
            ])
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    // per-model Welch test between female and male per-occupation deltas
    let mut by_model: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in &rows {
        let entry = by_model.entry(row.model.clone()).or_default();
        match row.gender {
            GenderLabel::F => entry.0.push(row.delta),
            GenderLabel::M => entry.1.push(row.delta),
            GenderLabel::N => {}
        }
    }
    let mut writer = csv_writer(&artifacts.welch())?;
    writer
        .write_record(["model", "t", "p"])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    for (model, (female, male)) in &by_model {
        match welch_t_test(female, male) {
            Ok(test) => {
                writer
                    .write_record([model.as_str(), &test.t.to_string(), &test.p.to_string()])
                    .map_err(|e| Error::Invalid(e.to_string()))?;
            }
            Err(e) => {
                summary.welch_skipped.insert(model.clone(), e.to_string());
            }
        }
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    oov_rows.sort();
    let mut writer = csv_writer(&artifacts.score_oov())?;
    writer
        .write_record(["model", "occupation", "set", "word"])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    for (model, occupation, set, word) in &oov_rows {
        writer
            .write_record([
                model.as_str(),
                occupation.as_str(),
                set.as_str(),
                word.as_str(),
            ])
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    write_json(&artifacts.score_run(), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn read_bias_scores(path: &Path) -> Result<Vec<BiasScoreRecord>> {
    require(path, "report")?;
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Invalid(e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            row.get(i)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|e| Error::Invalid(format!("bias_scores.csv: {e}")))
        };
        rows.push(BiasScoreRecord {
            model: row.get(0).unwrap_or_default().to_string(),
            occupation: row.get(1).unwrap_or_default().to_string(),
            gender: row.get(2).unwrap_or_default().parse()?,
            d_to_female: parse(3)?,
            d_to_male: parse(4)?,
            delta: parse(5)?,
        });
    }
    Ok(rows)
}

/// Emits the report files: representation shares, decile histograms,
/// non-binary bins, category counts, percent change, and the manifest.
pub fn stage_report(config: &AppConfig, out_dir: &Path) -> Result<()> {
    let artifacts = Artifacts::new(out_dir);
    let corpus_path = artifacts.corpus_associated();
    require(&corpus_path, "report")?;
    let records = load_corpus(&corpus_path)?;

    // Representation shares are computed over each cell's initial batch
    // (the first `quota` requests, in generation order). The adaptive
    // continuation oversamples the minority gender by design and would
    // bias the shares.
    let quota = config.campaign.quota;
    let mut per_cell_seen: BTreeMap<(String, String, PromptKind), usize> = BTreeMap::new();
    let mut survey: Vec<&GenerationRecord> = Vec::new();
    for record in &records {
        if record.specified_gender != SpecifiedGender::None {
            continue;
        }
        let key = (
            record.model.clone(),
            record.occupation.clone(),
            record.prompt_kind,
        );
        let seen = per_cell_seen.entry(key).or_insert(0);
        if *seen < quota {
            survey.push(record);
        }
        *seen += 1;
    }
    let shares = representation_distribution(&survey);

    let mut writer = csv_writer(&artifacts.representation())?;
    writer
        .write_record([
            "model",
            "occupation",
            "female_share",
            "male_share",
            "nonbinary_share",
            "labeled",
        ])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    for ((model, occupation), cell) in &shares {
        writer
            .write_record([
                model.as_str(),
                occupation.as_str(),
                &cell.female.to_string(),
                &cell.male.to_string(),
                &cell.nonbinary.to_string(),
                &cell.labeled.to_string(),
            ])
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    // deciles against the reference
    let reference_path =
        config.report.reference.as_ref().ok_or_else(|| {
            Error::Config("report.reference is required for the report stage".into())
        })?;
    require(reference_path, "report")?;
    let reference = crate::report::load_reference_shares(reference_path)?;

    let mut models: BTreeSet<String> = BTreeSet::new();
    let mut female_by_model: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut nonbinary_by_model: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for ((model, occupation), cell) in &shares {
        models.insert(model.clone());
        female_by_model
            .entry(model.clone())
            .or_default()
            .insert(occupation.clone(), cell.female);
        nonbinary_by_model
            .entry(model.clone())
            .or_default()
            .insert(occupation.clone(), cell.nonbinary);
    }

    let mut unmatched: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut writer = csv_writer(&artifacts.deciles())?;
    writer
        .write_record(["model", "split", "bin", "model_count", "reference_count"])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    for model in &models {
        let histogram = decile_histogram(&female_by_model[model], &reference);
        for (split, bins) in [
            ("male_dominated", &histogram.male_dominated),
            ("female_dominated", &histogram.female_dominated),
        ] {
            for bin in 0..10 {
                writer
                    .write_record([
                        model.as_str(),
                        split,
                        &decile_label(bin),
                        &bins.model[bin].to_string(),
                        &bins.reference[bin].to_string(),
                    ])
                    .map_err(|e| Error::Invalid(e.to_string()))?;
            }
        }
        if !histogram.unmatched.is_empty() {
            unmatched.insert(model.clone(), histogram.unmatched);
        }
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    let mut writer = csv_writer(&artifacts.nonbinary_bins())?;
    writer
        .write_record(["model", "bin", "occupations", "contains_benchmark"])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let benchmark = nonbinary_benchmark_bin();
    for model in &models {
        let bins = nonbinary_percentile_bins(&nonbinary_by_model[model]);
        for (bin, count) in &bins {
            writer
                .write_record([
                    model.as_str(),
                    &nonbinary_bin_label(*bin),
                    &count.to_string(),
                    if *bin == benchmark { "true" } else { "false" },
                ])
                .map_err(|e| Error::Invalid(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    // category tagging over the associated marked words
    let marked = read_marked_dir(&artifacts.marked_dir("associated"))?;
    let lexicon_path = config.report.lexicon.clone();
    let lexicon_owned;
    let lexicon: &CategoryLexicon = match &lexicon_path {
        Some(path) => {
            lexicon_owned = CategoryLexicon::load(path)?;
            &lexicon_owned
        }
        None => crate::report::bundled_lexicon(),
    };
    let restricted;
    let lexicon = match &config.report.categories {
        Some(names) => {
            restricted = lexicon.restricted_to(names)?;
            &restricted
        }
        None => lexicon,
    };
    // pool prompt kinds: one word list per (model, occupation, gender)
    let mut significant: BTreeMap<(String, String, GenderLabel), Vec<String>> = BTreeMap::new();
    for ((model, occupation, _prompt), genders) in &marked {
        for (gender, words) in genders {
            let entry = significant
                .entry((model.clone(), occupation.clone(), *gender))
                .or_default();
            for word in words {
                if !entry.contains(word) {
                    entry.push(word.clone());
                }
            }
        }
    }
    let (category_counts, category_hits) = categorize(&significant, lexicon);

    let mut writer = csv_writer(&artifacts.categories())?;
    writer
        .write_record(["model", "gender", "category", "occupations"])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    for ((model, gender, category), count) in &category_counts {
        writer
            .write_record([
                model.as_str(),
                gender.as_str(),
                category.as_str(),
                &count.to_string(),
            ])
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    let mut writer = csv_writer(&artifacts.categories_audit())?;
    writer
        .write_record(["model", "gender", "category", "occupation", "words"])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let mut hits = category_hits;
    hits.sort_by(|a, b| {
        (&a.model, a.gender, &a.category, &a.occupation).cmp(&(
            &b.model,
            b.gender,
            &b.category,
            &b.occupation,
        ))
    });
    for hit in &hits {
        writer
            .write_record([
                hit.model.as_str(),
                hit.gender.as_str(),
                hit.category.as_str(),
                hit.occupation.as_str(),
                &hit.words.join(";"),
            ])
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    // percent change between the configured model pair
    let bias_rows = read_bias_scores(&artifacts.bias_scores())?;
    let mut writer = csv_writer(&artifacts.percent_change())?;
    writer
        .write_record([
            "occupation",
            "gender",
            "old_model",
            "new_model",
            "old_delta",
            "new_delta",
            "percent_change",
            "direction_flipped",
        ])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    if let [old_model, new_model] = config.report.compare_models.as_slice() {
        let lookup = |model: &str| -> BTreeMap<(String, GenderLabel), f64> {
            bias_rows
                .iter()
                .filter(|r| r.model == model)
                .map(|r| ((r.occupation.clone(), r.gender), r.delta))
                .collect()
        };
        let old = lookup(old_model);
        let new = lookup(new_model);
        for ((occupation, gender), old_delta) in &old {
            let Some(new_delta) = new.get(&(occupation.clone(), *gender)) else {
                continue;
            };
            let change = percent_change(*old_delta, *new_delta);
            writer
                .write_record([
                    occupation.as_str(),
                    gender.as_str(),
                    old_model.as_str(),
                    new_model.as_str(),
                    &old_delta.to_string(),
                    &new_delta.to_string(),
                    &change.map(|c| c.to_string()).unwrap_or_default(),
                    if old_delta * new_delta < 0.0 {
                        "true"
                    } else {
                        "false"
                    },
                ])
                .map_err(|e| Error::Invalid(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| Error::Invalid(e.to_string()))?;

    // manifest: configuration, provenance, and stage summaries
    let marked_summary: Option<MarkedRunSummary> =
        std::fs::read_to_string(artifacts.marked_dir("associated").join("run.json"))
            .ok()
            .and_then(|raw| serde_json::from_str(&raw).ok());
    let score_summary: Option<ScoreSummary> = std::fs::read_to_string(artifacts.score_run())
        .ok()
        .and_then(|raw| serde_json::from_str(&raw).ok());
    let lexicon_sha = match &lexicon_path {
        Some(path) => sha256_file(path)?,
        None => format!(
            "{:x}",
            Sha256::digest(include_str!("../fixtures/category_lexicon.json").as_bytes())
        ),
    };
    let manifest = serde_json::json!({
        "analysis": config.analysis,
        "campaign": {
            "model": config.campaign.model,
            "quota": config.campaign.quota,
            "gate": config.campaign.gate,
        },
        "english_prior": config
            .analysis
            .english_prior
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "bundled (Brown corpus word frequencies)".into()),
        "lexicon_sha256": lexicon_sha,
        "percent_change": {
            "convention": "100 * (|new_delta| - |old_delta|) / |old_delta|; positive when the \
                           score magnitude grew; direction_flipped marks sign changes",
            "models": config.report.compare_models,
        },
        "unmatched_occupations": unmatched,
        "marked_words": marked_summary,
        "score": score_summary,
        "files": [
            "representation.csv",
            "deciles.csv",
            "nonbinary_bins.csv",
            "bias_scores.csv",
            "welch.csv",
            "percent_change.csv",
            "categories.csv",
            "categories_audit.csv",
        ],
    });
    write_json(&artifacts.manifest(), &manifest)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// all
// ---------------------------------------------------------------------------

/// Runs the whole pipeline: both campaigns, association, marked words for
/// both corpora, scoring, and the report.
pub fn run_all(
    config: &AppConfig,
    out_dir: &Path,
    resume: bool,
    force_mock: bool,
    seed_override: Option<u64>,
) -> Result<AssociateSummary> {
    let artifacts = Artifacts::new(out_dir);
    stage_generate(
        config,
        out_dir,
        GenerateMode::Both,
        resume,
        force_mock,
        seed_override,
    )?;
    let summary = stage_associate(
        &[artifacts.corpus_associated(), artifacts.corpus_specified()],
        Some(&artifacts),
    )?;
    stage_marked_words(
        config,
        &artifacts.corpus_associated(),
        GroupBy::Associated,
        &artifacts.marked_dir("associated"),
    )?;
    stage_marked_words(
        config,
        &artifacts.corpus_specified(),
        GroupBy::Specified,
        &artifacts.marked_dir("specified"),
    )?;
    stage_score(config, out_dir)?;
    stage_report(config, out_dir)?;
    Ok(summary)
}

/// Writes a vocabulary-complete synthetic embedding file for mock runs.
pub fn write_mock_embeddings(config: &AppConfig, path: &Path, dimension: usize) -> Result<()> {
    let vocabulary = mock_vocabulary(&config.mock, &config.campaign.occupations);
    let table = EmbeddingTable::synthetic(vocabulary.iter(), dimension, config.mock.seed);
    table.save(path)
}
