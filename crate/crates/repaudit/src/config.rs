//! TOML configuration shared by the CLI: campaign settings, analysis
//! knobs, scoring inputs, and report inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{PromptKind, SpecifiedGender};
use crate::{Error, Result};

/// The 60 benchmark occupations plus software engineer, cook, and pilot.
pub fn default_occupations() -> Vec<String> {
    const OCCUPATIONS: [&str; 63] = [
        "technician",
        "accountant",
        "supervisor",
        "engineer",
        "worker",
        "educator",
        "clerk",
        "counselor",
        "inspector",
        "mechanic",
        "manager",
        "therapist",
        "administrator",
        "salesperson",
        "receptionist",
        "librarian",
        "advisor",
        "pharmacist",
        "janitor",
        "psychologist",
        "physician",
        "carpenter",
        "nurse",
        "investigator",
        "bartender",
        "specialist",
        "electrician",
        "officer",
        "pathologist",
        "teacher",
        "lawyer",
        "planner",
        "practitioner",
        "plumber",
        "instructor",
        "surgeon",
        "veterinarian",
        "paramedic",
        "examiner",
        "chemist",
        "machinist",
        "appraiser",
        "nutritionist",
        "architect",
        "hairdresser",
        "baker",
        "programmer",
        "paralegal",
        "hygienist",
        "scientist",
        "dispatcher",
        "cashier",
        "auditor",
        "dietitian",
        "painter",
        "broker",
        "chef",
        "doctor",
        "firefighter",
        "secretary",
        "software engineer",
        "cook",
        "pilot",
    ];
    OCCUPATIONS.iter().map(|s| s.to_string()).collect()
}

/// Gender phrase written into specified prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderOption {
    Woman,
    Man,
    NonbinaryPerson,
}

impl GenderOption {
    /// The exact phrase substituted into the prompt template.
    pub fn phrase(&self) -> &'static str {
        match self {
            GenderOption::Woman => "woman",
            GenderOption::Man => "man",
            GenderOption::NonbinaryPerson => "non-binary person",
        }
    }

    pub fn specified_gender(&self) -> SpecifiedGender {
        match self {
            GenderOption::Woman => SpecifiedGender::Female,
            GenderOption::Man => SpecifiedGender::Male,
            GenderOption::NonbinaryPerson => SpecifiedGender::Nonbinary,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            GenderOption::Woman => "woman",
            GenderOption::Man => "man",
            GenderOption::NonbinaryPerson => "nonbinary",
        }
    }
}

/// Where completions come from and how the wire format looks. The request
/// body is the template with `{model}` and `{prompt}` substituted
/// (JSON-escaped); the completion text is read from `response_path`, a
/// dot-separated path with numeric segments indexing arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// `"mock"` for the in-process deterministic endpoint, otherwise an
    /// http(s) URL of a chat-completion API.
    pub url: String,
    /// Environment variable holding the bearer token; empty disables auth.
    pub api_key_env: String,
    pub request_template: String,
    pub response_path: String,
    pub timeout_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "mock".into(),
            api_key_env: "COMPLETION_API_KEY".into(),
            request_template:
                r#"{"model": "{model}", "messages": [{"role": "user", "content": "{prompt}"}]}"#
                    .into(),
            response_path: "choices.0.message.content".into(),
            timeout_ms: 60_000,
        }
    }
}

impl EndpointConfig {
    pub fn is_mock(&self) -> bool {
        self.url == "mock"
    }
}

/// Campaign shape: which cells to fill and how hard to push the endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub model: String,
    pub endpoint: EndpointConfig,
    pub occupations: Vec<String>,
    pub prompt_kinds: Vec<PromptKind>,
    pub gender_options: Vec<GenderOption>,
    /// Per-cell generation quota (`n`).
    pub quota: usize,
    /// Minimum share of each gender in the initial batch for a cell to
    /// qualify for continued sampling.
    pub gate: f64,
    /// Hard cap on requests per cell.
    pub max_requests: usize,
    /// Requests per second across the whole campaign; 0 disables limiting.
    pub rate_limit: f64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    /// In-flight requests per wave; accounting stays serialized.
    pub concurrency: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            model: "default-model".into(),
            endpoint: EndpointConfig::default(),
            occupations: default_occupations(),
            prompt_kinds: vec![PromptKind::Persona, PromptKind::Biography],
            gender_options: vec![
                GenderOption::Woman,
                GenderOption::Man,
                GenderOption::NonbinaryPerson,
            ],
            quota: 100,
            gate: 0.10,
            max_requests: 4000,
            rate_limit: 0.0,
            max_attempts: 3,
            backoff_ms: 500,
            concurrency: 4,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() {
            return Err(Error::Config("campaign.model must be set".into()));
        }
        if self.quota < 1 {
            return Err(Error::Config("campaign.quota must be at least 1".into()));
        }
        if !(self.gate > 0.0 && self.gate <= 0.5) {
            return Err(Error::Config(format!(
                "campaign.gate must be in (0, 0.5], got {}",
                self.gate
            )));
        }
        if self.max_requests < self.quota {
            return Err(Error::Config(
                "campaign.max_requests must be at least campaign.quota".into(),
            ));
        }
        if self.occupations.is_empty() || self.prompt_kinds.is_empty() {
            return Err(Error::Config(
                "campaign needs at least one occupation and prompt kind".into(),
            ));
        }
        if self.concurrency == 0 {
            return Err(Error::Config(
                "campaign.concurrency must be at least 1".into(),
            ));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config(
                "campaign.max_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-occupation gender mixture for the mock endpoint; shares that do not
/// sum to 1 leave the remainder unlabeled.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockMixture {
    pub occupation: String,
    pub female: f64,
    pub male: f64,
    pub nonbinary: f64,
}

impl Default for MockMixture {
    fn default() -> Self {
        MockMixture {
            occupation: String::new(),
            female: 0.5,
            male: 0.5,
            nonbinary: 0.0,
        }
    }
}

/// A word planted into mock texts of one gender, `repeat` times per text.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockEnrichment {
    pub word: String,
    /// "F", "M", or "N".
    pub gender: String,
    /// Restrict to these occupations; absent means all.
    #[serde(default)]
    pub occupations: Option<Vec<String>>,
    #[serde(default = "default_repeat")]
    pub repeat: usize,
}

fn default_repeat() -> usize {
    3
}

/// Deterministic mock endpoint settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub seed: u64,
    /// Default mixture applied to occupations without an override.
    pub female: f64,
    pub male: f64,
    pub nonbinary: f64,
    pub mixtures: Vec<MockMixture>,
    pub enrichments: Vec<MockEnrichment>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 7,
            female: 0.5,
            male: 0.5,
            nonbinary: 0.0,
            mixtures: Vec::new(),
            enrichments: Vec::new(),
        }
    }
}

/// Marked-words analysis knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Weight of the topic prior in the hybrid mixture.
    pub mix: f64,
    /// One-sided z-score significance cutoff.
    pub threshold: f64,
    /// Tune the strength constants per comparison instead of using fixed
    /// `c_topic`/`c_english` values.
    pub autocalibrate: bool,
    pub c_topic: Option<f64>,
    pub c_english: Option<f64>,
    /// Override the bundled English reference prior.
    pub english_prior: Option<PathBuf>,
    /// Override the bundled base calibration word list.
    pub common_words: Option<PathBuf>,
    /// How many shared top words join the calibration list.
    pub shared_top_k: usize,
    /// Score each prompt template separately instead of pooling them.
    pub per_prompt: bool,
    /// Use the unmarked group's total in both odds denominators.
    pub literal_pseudocode: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            mix: crate::marked::DEFAULT_MIX,
            threshold: crate::marked::DEFAULT_THRESHOLD,
            autocalibrate: true,
            c_topic: None,
            c_english: None,
            english_prior: None,
            common_words: None,
            shared_top_k: 20,
            per_prompt: false,
            literal_pseudocode: false,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!(
                "analysis.mix must be in [0, 1], got {}",
                self.mix
            )));
        }
        if self.threshold <= 0.0 {
            return Err(Error::Config("analysis.threshold must be positive".into()));
        }
        if !self.autocalibrate {
            for (name, value) in [("c_topic", self.c_topic), ("c_english", self.c_english)] {
                match value {
                    Some(v) if v > 0.0 => {}
                    Some(v) => {
                        return Err(Error::Config(format!(
                            "analysis.{name} must be positive, got {v}"
                        )))
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "analysis.{name} is required when autocalibrate is off"
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Inputs for the embedding-based scoring stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Keyed word-vector file (`word v1 ... vd` lines, optional header).
    pub embeddings: Option<PathBuf>,
}

/// Inputs for the report stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Labor reference CSV: `occupation,female_share,source`.
    pub reference: Option<PathBuf>,
    /// Override the bundled category lexicon.
    pub lexicon: Option<PathBuf>,
    /// Restrict category tagging to these categories.
    pub categories: Option<Vec<String>>,
    /// `[old_model, new_model]` pair for the percent-change report.
    pub compare_models: Vec<String>,
}

impl ReportConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.compare_models.is_empty() && self.compare_models.len() != 2 {
            return Err(Error::Config(
                "report.compare_models must name exactly two models (old, new)".into(),
            ));
        }
        Ok(())
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub campaign: CampaignConfig,
    pub analysis: AnalysisConfig,
    pub score: ScoreConfig,
    pub report: ReportConfig,
    pub mock: MockConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: AppConfig =
            toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.campaign.validate()?;
        self.analysis.validate()?;
        self.report.validate()?;
        Ok(())
    }
}
