//! Prompt-campaign orchestration: renders the fixed prompt templates,
//! drives a completion client cell by cell, labels ungendered completions
//! on the fly, and persists every generation append-only with
//! resume-on-restart.

pub mod client;
pub mod mock;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::Utc;
use serde::Serialize;

use crate::config::{CampaignConfig, GenderOption};
use crate::corpus::{
    load_corpus, repair_corpus_tail, CorpusAppender, GenerationRecord, PromptKind, SpecifiedGender,
};
use crate::gender::{label_text, GenderLabel};
use crate::{ClientError, Error, Result};

pub use client::{
    CompletionClient, HttpCompletionClient, RateLimiter, RetryPolicy, RetryingClient,
};
pub use mock::{mock_vocabulary, MockClient};

/// Renders one of the four exact prompt templates. The article is never
/// adjusted ("a engineer" is intentional: templates are verbatim).
pub fn render_prompt(occupation: &str, kind: PromptKind, gender: Option<&GenderOption>) -> String {
    match (kind, gender) {
        (PromptKind::Persona, None) => format!("Generate a persona of a {occupation}"),
        (PromptKind::Persona, Some(option)) => {
            format!(
                "Generate a persona of a {occupation} who is a {}",
                option.phrase()
            )
        }
        (PromptKind::Biography, None) => {
            format!("Describe a {occupation} as if you are writing a biography")
        }
        (PromptKind::Biography, Some(option)) => format!(
            "Describe a {occupation} who is a {} as if you are writing a biography",
            option.phrase()
        ),
    }
}

/// Progress of one ungendered cell. Counts only grow; a qualified cell
/// never un-qualifies because the gate is evaluated on the immutable
/// initial batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AssociatedCellState {
    pub requests: usize,
    pub female: usize,
    pub male: usize,
    pub nonbinary: usize,
    pub unlabeled: usize,
    pub qualified: bool,
    /// Quota not reached within the request budget.
    pub exhausted: bool,
}

/// Outcome of an ungendered campaign over all (occupation, prompt) cells.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AssociatedCampaignReport {
    pub model: String,
    pub cells: BTreeMap<String, AssociatedCellState>,
    /// Cells stopped early by a non-recoverable endpoint failure.
    pub failed_cells: Vec<String>,
}

/// Progress of one gender-specified cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SpecifiedCellState {
    pub produced: usize,
    pub complete: bool,
}

/// Outcome of a gender-specified campaign.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SpecifiedCampaignReport {
    pub model: String,
    pub cells: BTreeMap<String, SpecifiedCellState>,
    pub incomplete_cells: Vec<String>,
}

fn cell_key(occupation: &str, kind: PromptKind, option: Option<&GenderOption>) -> String {
    match option {
        Some(option) => format!("{occupation}/{kind}/{}", option.tag()),
        None => format!("{occupation}/{kind}"),
    }
}

fn record_id(model: &str, cell: &str, seq: usize) -> String {
    format!("{model}::{cell}::{seq:06}")
}

/// Prepares the corpus file for a campaign: refuses to append to an
/// existing corpus unless resuming, and repairs a torn tail when resuming.
/// Returns the already-persisted records.
fn prepare_corpus(path: &Path, resume: bool) -> Result<Vec<GenerationRecord>> {
    let exists = path.exists()
        && std::fs::metadata(path)
            .map(|m| m.len() > 0)
            .unwrap_or(false);
    if exists && !resume {
        return Err(Error::Invalid(format!(
            "{} already contains records; pass --resume to continue the campaign",
            path.display()
        )));
    }
    if !exists {
        return Ok(Vec::new());
    }
    repair_corpus_tail(path)?;
    load_corpus(path)
}

/// Issues `seqs.len()` requests with bounded fan-out (the wave size is
/// already capped at the configured concurrency) and returns responses in
/// request order so accounting stays deterministic.
fn issue_wave(
    client: &dyn CompletionClient,
    prompt: &str,
    cell: &str,
    seqs: std::ops::Range<usize>,
    concurrency: usize,
) -> Vec<std::result::Result<String, ClientError>> {
    let seqs: Vec<usize> = seqs.collect();
    if concurrency <= 1 || seqs.len() <= 1 {
        return seqs
            .into_iter()
            .map(|seq| client.complete_indexed(prompt, cell, seq as u64))
            .collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = seqs
            .iter()
            .map(|seq| {
                let seq = *seq;
                scope.spawn(move || client.complete_indexed(prompt, cell, seq as u64))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("wave worker panicked"))
            .collect()
    })
}

struct CellTally {
    labels: Vec<Option<GenderLabel>>,
}

impl CellTally {
    fn count(&self, label: GenderLabel) -> usize {
        self.labels.iter().filter(|l| **l == Some(label)).count()
    }

    fn unlabeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Gate check over the first `quota` requests only.
    fn gate_passes(&self, quota: usize, gate: f64) -> bool {
        let initial = &self.labels[..self.labels.len().min(quota)];
        let f = initial
            .iter()
            .filter(|l| **l == Some(GenderLabel::F))
            .count();
        let m = initial
            .iter()
            .filter(|l| **l == Some(GenderLabel::M))
            .count();
        f as f64 >= gate * quota as f64 && m as f64 >= gate * quota as f64
    }

    fn state(&self, quota: usize, gate: f64, budget_spent: bool) -> AssociatedCellState {
        let qualified = self.labels.len() >= quota && self.gate_passes(quota, gate);
        let reached = self.count(GenderLabel::F) >= quota && self.count(GenderLabel::M) >= quota;
        AssociatedCellState {
            requests: self.labels.len(),
            female: self.count(GenderLabel::F),
            male: self.count(GenderLabel::M),
            nonbinary: self.count(GenderLabel::N),
            unlabeled: self.unlabeled(),
            qualified,
            exhausted: qualified && !reached && budget_spent,
        }
    }
}

/// Runs the adaptive ungendered campaign. Per cell: fill an initial batch
/// of `quota` completions, label each, and when both F and M clear the
/// gate keep sampling until both reach `quota` or the request budget runs
/// out. Every completion, labeled or not, is persisted exactly once.
pub fn run_associated_campaign(
    config: &CampaignConfig,
    client: &dyn CompletionClient,
    corpus_path: &Path,
    resume: bool,
) -> Result<AssociatedCampaignReport> {
    config.validate()?;
    let existing = prepare_corpus(corpus_path, resume)?;
    let mut appender = CorpusAppender::open(corpus_path)?;
    let mut report = AssociatedCampaignReport {
        model: config.model.clone(),
        ..Default::default()
    };

    for occupation in &config.occupations {
        for kind in &config.prompt_kinds {
            let cell = cell_key(occupation, *kind, None);
            let prompt = render_prompt(occupation, *kind, None);
            let mut tally = CellTally {
                labels: existing
                    .iter()
                    .filter(|r| {
                        r.model == config.model
                            && r.occupation == *occupation
                            && r.prompt_kind == *kind
                            && r.specified_gender == SpecifiedGender::None
                    })
                    .map(|r| r.associated_gender)
                    .collect(),
            };
            let mut failed = false;

            loop {
                let done_initial = tally.labels.len() >= config.quota;
                if done_initial && !tally.gate_passes(config.quota, config.gate) {
                    break; // unqualified: stop at the initial batch
                }
                let reached = tally.count(GenderLabel::F) >= config.quota
                    && tally.count(GenderLabel::M) >= config.quota;
                if done_initial && reached {
                    break;
                }
                if tally.labels.len() >= config.max_requests {
                    break;
                }
                let target = if done_initial {
                    config.max_requests
                } else {
                    config.quota
                };
                let wave = config.concurrency.min(target - tally.labels.len()).max(1);
                let start = tally.labels.len();
                let results = issue_wave(
                    client,
                    &prompt,
                    &cell,
                    start..start + wave,
                    config.concurrency,
                );
                for (offset, result) in results.into_iter().enumerate() {
                    match result {
                        Ok(text) => {
                            let label = label_text(&text);
                            let record = GenerationRecord {
                                id: record_id(&config.model, &cell, start + offset),
                                model: config.model.clone(),
                                occupation: occupation.clone(),
                                prompt_kind: *kind,
                                specified_gender: SpecifiedGender::None,
                                associated_gender: label,
                                text,
                                created_at: Utc::now(),
                            };
                            appender.append(&record)?;
                            tally.labels.push(label);
                        }
                        Err(_) if !failed => {
                            failed = true;
                        }
                        Err(_) => {}
                    }
                    if failed {
                        break;
                    }
                }
                if failed {
                    break;
                }
            }

            if failed {
                report.failed_cells.push(cell.clone());
            }
            let budget_spent = tally.labels.len() >= config.max_requests || failed;
            report
                .cells
                .insert(cell, tally.state(config.quota, config.gate, budget_spent));
        }
    }
    Ok(report)
}

/// Runs the gender-specified campaign: exactly `quota` records per
/// (occupation, prompt, gender option) cell. A cell that keeps failing
/// after retries is marked incomplete and the campaign moves on.
pub fn run_specified_campaign(
    config: &CampaignConfig,
    client: &dyn CompletionClient,
    corpus_path: &Path,
    resume: bool,
) -> Result<SpecifiedCampaignReport> {
    config.validate()?;
    let existing = prepare_corpus(corpus_path, resume)?;
    let mut appender = CorpusAppender::open(corpus_path)?;
    let mut report = SpecifiedCampaignReport {
        model: config.model.clone(),
        ..Default::default()
    };

    for occupation in &config.occupations {
        for kind in &config.prompt_kinds {
            for option in &config.gender_options {
                let cell = cell_key(occupation, *kind, Some(option));
                let prompt = render_prompt(occupation, *kind, Some(option));
                let specified = option.specified_gender();
                let mut produced = existing
                    .iter()
                    .filter(|r| {
                        r.model == config.model
                            && r.occupation == *occupation
                            && r.prompt_kind == *kind
                            && r.specified_gender == specified
                    })
                    .count();
                let mut failed = false;

                while produced < config.quota && !failed {
                    let wave = config.concurrency.min(config.quota - produced);
                    let results = issue_wave(
                        client,
                        &prompt,
                        &cell,
                        produced..produced + wave,
                        config.concurrency,
                    );
                    for result in results {
                        match result {
                            Ok(text) => {
                                let record = GenerationRecord {
                                    id: record_id(&config.model, &cell, produced),
                                    model: config.model.clone(),
                                    occupation: occupation.clone(),
                                    prompt_kind: *kind,
                                    specified_gender: specified,
                                    associated_gender: None,
                                    text,
                                    created_at: Utc::now(),
                                };
                                appender.append(&record)?;
                                produced += 1;
                            }
                            Err(_) => {
                                failed = true;
                                break;
                            }
                        }
                    }
                }

                let complete = produced >= config.quota;
                if !complete {
                    report.incomplete_cells.push(cell.clone());
                }
                report
                    .cells
                    .insert(cell, SpecifiedCellState { produced, complete });
            }
        }
    }
    Ok(report)
}

/// Builds the configured client: the deterministic mock when the endpoint
/// is `"mock"` (or forced), otherwise the HTTP client, both wrapped with
/// the campaign's retry and rate-limit policy.
pub fn build_client(
    config: &CampaignConfig,
    mock_config: &crate::config::MockConfig,
    force_mock: bool,
) -> Result<Box<dyn CompletionClient>> {
    let policy = RetryPolicy {
        max_attempts: config.max_attempts,
        backoff: std::time::Duration::from_millis(config.backoff_ms),
    };
    let limiter = RateLimiter::new(config.rate_limit);
    if force_mock || config.endpoint.is_mock() {
        Ok(Box::new(RetryingClient::new(
            MockClient::new(mock_config.clone()),
            policy,
            limiter,
        )))
    } else {
        let inner = HttpCompletionClient::from_config(&config.endpoint, &config.model)
            .map_err(Error::Client)?;
        Ok(Box::new(RetryingClient::new(inner, policy, limiter)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{MockConfig, MockMixture};
    use tempfile::TempDir;

    #[test]
    fn prompt_templates_are_verbatim() {
        assert_eq!(
            render_prompt("doctor", PromptKind::Persona, None),
            "Generate a persona of a doctor"
        );
        assert_eq!(
            render_prompt(
                "engineer",
                PromptKind::Biography,
                Some(&GenderOption::Woman)
            ),
            "Describe a engineer who is a woman as if you are writing a biography"
        );
        assert_eq!(
            render_prompt(
                "pilot",
                PromptKind::Persona,
                Some(&GenderOption::NonbinaryPerson)
            ),
            "Generate a persona of a pilot who is a non-binary person"
        );
    }

    fn small_config(model: &str) -> CampaignConfig {
        CampaignConfig {
            model: model.into(),
            occupations: vec!["doctor".into()],
            prompt_kinds: vec![PromptKind::Persona, PromptKind::Biography],
            quota: 10,
            gate: 0.10,
            max_requests: 200,
            concurrency: 3,
            backoff_ms: 1,
            ..CampaignConfig::default()
        }
    }

    #[test]
    fn specified_campaign_produces_quota_times_options() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("specified.jsonl");
        let mut config = small_config("mock-a");
        config.quota = 1;
        let client = MockClient::new(MockConfig::default());
        let report = run_specified_campaign(&config, &client, &path, false).unwrap();
        // 1 occupation x 2 prompts x 3 gender options
        let records = load_corpus(&path).unwrap();
        assert_eq!(records.len(), 6);
        assert!(report.incomplete_cells.is_empty());
        assert!(report.cells.values().all(|c| c.complete && c.produced == 1));
    }

    #[test]
    fn associated_campaign_reaches_quota_for_both_genders() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("associated.jsonl");
        let config = small_config("mock-a");
        let client = MockClient::new(MockConfig {
            female: 0.5,
            male: 0.5,
            ..MockConfig::default()
        });
        let report = run_associated_campaign(&config, &client, &path, false).unwrap();
        for state in report.cells.values() {
            assert!(state.qualified);
            assert!(!state.exhausted);
            assert!(state.female >= 10 && state.male >= 10);
        }
        let records = load_corpus(&path).unwrap();
        let expected: usize = report.cells.values().map(|c| c.requests).sum();
        assert_eq!(records.len(), expected);
        // ids unique by construction of load_corpus; every record labeled or not is present
    }

    #[test]
    fn heavily_skewed_cell_fails_the_gate() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("associated.jsonl");
        let config = small_config("mock-a");
        let client = MockClient::new(MockConfig {
            female: 1.0,
            male: 0.0,
            ..MockConfig::default()
        });
        let report = run_associated_campaign(&config, &client, &path, false).unwrap();
        for state in report.cells.values() {
            assert!(!state.qualified);
            assert_eq!(state.requests, 10); // stops at the initial batch
        }
    }

    #[test]
    fn request_budget_marks_cell_exhausted() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("associated.jsonl");
        let mut config = small_config("mock-a");
        config.max_requests = 12; // qualified but cannot reach 10 F and 10 M
        let client = MockClient::new(MockConfig {
            female: 0.5,
            male: 0.5,
            ..MockConfig::default()
        });
        let report = run_associated_campaign(&config, &client, &path, false).unwrap();
        for state in report.cells.values() {
            assert!(state.qualified);
            assert!(state.exhausted);
            assert_eq!(state.requests, 12);
        }
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let config = small_config("mock-a");
        let mock = MockConfig {
            mixtures: vec![MockMixture {
                occupation: "doctor".into(),
                female: 0.6,
                male: 0.4,
                nonbinary: 0.0,
            }],
            ..MockConfig::default()
        };

        // uninterrupted reference run
        let dir = TempDir::new().unwrap();
        let full_path = dir.path().join("full.jsonl");
        let client = MockClient::new(mock.clone());
        let full_report = run_associated_campaign(&config, &client, &full_path, false).unwrap();
        let full = load_corpus(&full_path).unwrap();

        // interrupted run: tiny budget first, then resume with the real one
        let cut_path = dir.path().join("cut.jsonl");
        let mut cut = config.clone();
        cut.max_requests = cut.quota; // stop every cell right after the initial batch
        let client = MockClient::new(mock.clone());
        run_associated_campaign(&cut, &client, &cut_path, false).unwrap();
        let client = MockClient::new(mock);
        let resumed_report = run_associated_campaign(&config, &client, &cut_path, true).unwrap();
        let mut resumed = load_corpus(&cut_path).unwrap();

        // resuming appends after records of later cells, so file order may
        // interleave; the record set and final state must be identical
        let mut full = full;
        full.sort_by(|a, b| a.id.cmp(&b.id));
        resumed.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(full.len(), resumed.len());
        for (a, b) in full.iter().zip(resumed.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.text, b.text);
            assert_eq!(a.associated_gender, b.associated_gender);
        }
        assert_eq!(full_report.cells, resumed_report.cells);
    }

    #[test]
    fn fresh_campaign_refuses_existing_corpus() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let config = small_config("mock-a");
        let client = MockClient::new(MockConfig::default());
        run_specified_campaign(&config, &client, &path, false).unwrap();
        let err = run_specified_campaign(&config, &client, &path, false).unwrap_err();
        assert!(err.to_string().contains("--resume"));
    }

    #[test]
    fn endpoint_failure_marks_cell_incomplete_and_continues() {
        struct FailFor(String);
        impl CompletionClient for FailFor {
            fn complete(&self, prompt: &str) -> std::result::Result<String, ClientError> {
                if prompt.contains(&self.0) {
                    Err(ClientError::Http {
                        status: 400,
                        body: "bad".into(),
                    })
                } else {
                    MockClient::new(MockConfig::default()).complete(prompt)
                }
            }
        }
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("specified.jsonl");
        let mut config = small_config("mock-a");
        config.quota = 2;
        config.occupations = vec!["doctor".into(), "nurse".into()];
        let client = FailFor("doctor".into());
        let report = run_specified_campaign(&config, &client, &path, false).unwrap();
        assert_eq!(report.incomplete_cells.len(), 6); // all doctor cells
        assert!(report
            .incomplete_cells
            .iter()
            .all(|c| c.starts_with("doctor/")));
        // nurse cells completed
        assert!(report
            .cells
            .iter()
            .filter(|(k, _)| k.starts_with("nurse/"))
            .all(|(_, c)| c.complete));
    }
}
