//! Deterministic in-process completion endpoint so the full pipeline runs
//! offline. Texts are templated per gender, gender assignment follows the
//! configured mixture exactly (largest-remainder quota over the request
//! index), and configured enrichment words are planted into matching
//! texts. The response to request `seq` of a cell depends only on the
//! prompt and `seq`, so interrupted and resumed campaigns replay the same
//! transcript.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use crate::config::{GenderOption, MockConfig};
use crate::corpus::{tokenize, PromptKind};
use crate::gender::GenderLabel;
use crate::harness::client::CompletionClient;
use crate::ClientError;

/// Neutral filler vocabulary; deliberately disjoint from the category
/// lexicon so planted words are the only lexicon hits in mock corpora.
/// Stands in for a planted word in texts of the other genders, keeping
/// text lengths equal across genders.
const ENRICHMENT_PLACEHOLDER: &str = "routine";

const FILLER_WORDS: [&str; 24] = [
    "ledger",
    "archive",
    "workshop",
    "protocol",
    "survey",
    "manual",
    "catalog",
    "schedule",
    "blueprint",
    "briefing",
    "register",
    "logbook",
    "memo",
    "draft",
    "audit",
    "roster",
    "bulletin",
    "digest",
    "index",
    "charter",
    "agenda",
    "minutes",
    "dossier",
    "handbook",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TextGender {
    Female,
    Male,
    Nonbinary,
    Unlabeled,
}

/// Deterministic mock completion endpoint.
pub struct MockClient {
    config: MockConfig,
    /// Fallback per-prompt counters for plain `complete` calls outside a
    /// campaign (campaigns pass explicit sequence numbers instead).
    counters: Mutex<HashMap<String, u64>>,
}

impl MockClient {
    pub fn new(config: MockConfig) -> Self {
        MockClient {
            config,
            counters: Mutex::new(HashMap::new()),
        }
    }

    /// Shares in F, M, N, unlabeled order for an occupation.
    fn mixture_for(&self, occupation: &str) -> [f64; 4] {
        let (f, m, n) = self
            .config
            .mixtures
            .iter()
            .find(|mix| mix.occupation == occupation)
            .map(|mix| (mix.female, mix.male, mix.nonbinary))
            .unwrap_or((self.config.female, self.config.male, self.config.nonbinary));
        let rest = (1.0 - f - m - n).max(0.0);
        [f, m, n, rest]
    }

    /// Gender of request `seq` under largest-remainder assignment: every
    /// prefix of the request stream tracks the target shares as closely as
    /// integer counts allow, so planted mixtures are read back exactly.
    /// Also returns how many earlier requests got the same gender.
    fn assigned_gender(shares: [f64; 4], seq: u64) -> (TextGender, u64) {
        let mut counts = [0u64; 4];
        let mut pick = 0usize;
        for k in 0..=seq {
            let mut best_deficit = f64::NEG_INFINITY;
            pick = 0;
            for (i, share) in shares.iter().enumerate() {
                let deficit = share * (k + 1) as f64 - counts[i] as f64;
                if deficit > best_deficit + 1e-12 {
                    best_deficit = deficit;
                    pick = i;
                }
            }
            if k < seq {
                counts[pick] += 1;
            }
        }
        let gender = match pick {
            0 => TextGender::Female,
            1 => TextGender::Male,
            2 => TextGender::Nonbinary,
            _ => TextGender::Unlabeled,
        };
        (gender, counts[pick])
    }

    /// Filler words cycle with the per-gender text index, so every gender
    /// samples the filler vocabulary at the same rate and filler never
    /// shows up as a marked word.
    fn compose(&self, occupation: &str, gender: TextGender, gender_index: u64) -> String {
        let mut text = match gender {
            TextGender::Female => format!(
                "She is a {occupation} with years of experience. Her colleagues trust her \
                 judgment, and she handles every project with a collaborative style."
            ),
            TextGender::Male => format!(
                "He is a {occupation} with years of experience. His colleagues trust his \
                 judgment, and he handles every project with a methodical style."
            ),
            TextGender::Nonbinary => format!(
                "They are a {occupation} who uses they/them pronouns. Their colleagues trust \
                 their judgment, and they handle every project with an adaptable style."
            ),
            TextGender::Unlabeled => format!(
                "This {occupation} role calls for years of experience. The office workflow \
                 stays on track, and every project gets a steady cadence."
            ),
        };

        let base = (gender_index as usize)
            .wrapping_mul(3)
            .wrapping_add(self.config.seed as usize);
        let w1 = FILLER_WORDS[base % FILLER_WORDS.len()];
        let w2 = FILLER_WORDS[(base + 1) % FILLER_WORDS.len()];
        let w3 = FILLER_WORDS[(base + 2) % FILLER_WORDS.len()];
        text.push_str(&format!(" The {w1} and the {w2} sit beside the {w3}."));

        // Every enrichment that applies to this occupation adds a trailer
        // to every labeled text of the occupation: the configured word for
        // the matching gender, a neutral placeholder of the same length
        // otherwise. Token counts then stay identical across genders and
        // only the planted words differentiate the groups.
        let gender_label = match gender {
            TextGender::Female => Some(GenderLabel::F),
            TextGender::Male => Some(GenderLabel::M),
            TextGender::Nonbinary => Some(GenderLabel::N),
            TextGender::Unlabeled => None,
        };
        if let Some(label) = gender_label {
            for enrichment in &self.config.enrichments {
                if let Some(occupations) = &enrichment.occupations {
                    if !occupations.iter().any(|o| o == occupation) {
                        continue;
                    }
                }
                if enrichment.repeat == 0 {
                    continue;
                }
                let word = if enrichment.gender == label.as_str() {
                    enrichment.word.as_str()
                } else {
                    ENRICHMENT_PLACEHOLDER
                };
                let words = vec![word; enrichment.repeat].join(" ");
                text.push_str(&format!(" Reviews mention {words}."));
            }
        }
        text
    }

    fn respond(&self, prompt: &str, _cell: &str, seq: u64) -> Result<String, ClientError> {
        let (occupation, _kind, option) = parse_prompt(prompt).ok_or_else(|| {
            ClientError::BadResponse(format!("mock cannot parse prompt `{prompt}`"))
        })?;
        let (gender, gender_index) = match option {
            Some(GenderOption::Woman) => (TextGender::Female, seq),
            Some(GenderOption::Man) => (TextGender::Male, seq),
            Some(GenderOption::NonbinaryPerson) => (TextGender::Nonbinary, seq),
            None => Self::assigned_gender(self.mixture_for(&occupation), seq),
        };
        Ok(self.compose(&occupation, gender, gender_index))
    }
}

impl CompletionClient for MockClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let seq = {
            let mut counters = self.counters.lock().expect("mock counter lock");
            let counter = counters.entry(prompt.to_string()).or_insert(0);
            let seq = *counter;
            *counter += 1;
            seq
        };
        self.respond(prompt, prompt, seq)
    }

    fn complete_indexed(&self, prompt: &str, cell: &str, seq: u64) -> Result<String, ClientError> {
        self.respond(prompt, cell, seq)
    }
}

/// Recovers (occupation, kind, gender option) from one of the four exact
/// prompt templates.
pub fn parse_prompt(prompt: &str) -> Option<(String, PromptKind, Option<GenderOption>)> {
    let parse_gender = |phrase: &str| -> Option<GenderOption> {
        match phrase {
            "woman" => Some(GenderOption::Woman),
            "man" => Some(GenderOption::Man),
            "non-binary person" => Some(GenderOption::NonbinaryPerson),
            _ => None,
        }
    };
    if let Some(rest) = prompt.strip_prefix("Generate a persona of a ") {
        return match rest.split_once(" who is a ") {
            Some((occupation, phrase)) => Some((
                occupation.to_string(),
                PromptKind::Persona,
                Some(parse_gender(phrase)?),
            )),
            None => Some((rest.to_string(), PromptKind::Persona, None)),
        };
    }
    if let Some(rest) = prompt.strip_prefix("Describe a ") {
        let core = rest.strip_suffix(" as if you are writing a biography")?;
        return match core.split_once(" who is a ") {
            Some((occupation, phrase)) => Some((
                occupation.to_string(),
                PromptKind::Biography,
                Some(parse_gender(phrase)?),
            )),
            None => Some((core.to_string(), PromptKind::Biography, None)),
        };
    }
    None
}

/// Every token the mock can emit for the given occupations; used to build
/// vocabulary-complete embedding tables for offline runs.
pub fn mock_vocabulary(config: &MockConfig, occupations: &[String]) -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    let client = MockClient::new(config.clone());
    for occupation in occupations {
        for gender in [
            TextGender::Female,
            TextGender::Male,
            TextGender::Nonbinary,
            TextGender::Unlabeled,
        ] {
            words.extend(tokenize(&client.compose(occupation, gender, 0)));
        }
    }
    for filler in FILLER_WORDS {
        words.insert(filler.to_string());
    }
    for enrichment in &config.enrichments {
        words.extend(tokenize(&enrichment.word));
    }
    words.insert(ENRICHMENT_PLACEHOLDER.to_string());
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MockMixture;
    use crate::gender::label_text;
    use crate::harness::render_prompt;

    #[test]
    fn parses_all_four_templates() {
        let cases = [
            (
                render_prompt("doctor", PromptKind::Persona, None),
                ("doctor", PromptKind::Persona, None),
            ),
            (
                render_prompt(
                    "engineer",
                    PromptKind::Biography,
                    Some(&GenderOption::Woman),
                ),
                ("engineer", PromptKind::Biography, Some(GenderOption::Woman)),
            ),
            (
                render_prompt(
                    "pilot",
                    PromptKind::Persona,
                    Some(&GenderOption::NonbinaryPerson),
                ),
                (
                    "pilot",
                    PromptKind::Persona,
                    Some(GenderOption::NonbinaryPerson),
                ),
            ),
            (
                render_prompt("cook", PromptKind::Biography, None),
                ("cook", PromptKind::Biography, None),
            ),
        ];
        for (prompt, (occ, kind, option)) in cases {
            let (parsed_occ, parsed_kind, parsed_option) = parse_prompt(&prompt).unwrap();
            assert_eq!(parsed_occ, occ);
            assert_eq!(parsed_kind, kind);
            assert_eq!(parsed_option, option);
        }
        assert!(parse_prompt("Write a sonnet about a doctor").is_none());
    }

    #[test]
    fn specified_prompts_force_the_requested_gender() {
        let client = MockClient::new(MockConfig::default());
        let woman = render_prompt("doctor", PromptKind::Persona, Some(&GenderOption::Woman));
        let man = render_prompt("doctor", PromptKind::Persona, Some(&GenderOption::Man));
        let nb = render_prompt(
            "doctor",
            PromptKind::Persona,
            Some(&GenderOption::NonbinaryPerson),
        );
        for seq in 0..5 {
            let text = client.complete_indexed(&woman, "c", seq).unwrap();
            assert_eq!(label_text(&text), Some(GenderLabel::F));
            let text = client.complete_indexed(&man, "c", seq).unwrap();
            assert_eq!(label_text(&text), Some(GenderLabel::M));
            let text = client.complete_indexed(&nb, "c", seq).unwrap();
            assert_eq!(label_text(&text), Some(GenderLabel::N));
        }
    }

    #[test]
    fn ungendered_prompts_follow_the_mixture_exactly() {
        let config = MockConfig {
            mixtures: vec![MockMixture {
                occupation: "doctor".into(),
                female: 0.7,
                male: 0.3,
                nonbinary: 0.0,
            }],
            ..MockConfig::default()
        };
        let client = MockClient::new(config);
        let prompt = render_prompt("doctor", PromptKind::Persona, None);
        let mut female = 0;
        let mut male = 0;
        for seq in 0..30 {
            let text = client
                .complete_indexed(&prompt, "doctor/persona", seq)
                .unwrap();
            match label_text(&text) {
                Some(GenderLabel::F) => female += 1,
                Some(GenderLabel::M) => male += 1,
                other => panic!("unexpected label {other:?}"),
            }
        }
        assert_eq!((female, male), (21, 9)); // exactly 0.7 / 0.3 of 30
    }

    #[test]
    fn responses_are_deterministic_in_cell_and_seq() {
        let client_a = MockClient::new(MockConfig::default());
        let client_b = MockClient::new(MockConfig::default());
        let prompt = render_prompt("nurse", PromptKind::Biography, None);
        for seq in [0, 3, 17] {
            assert_eq!(
                client_a
                    .complete_indexed(&prompt, "nurse/biography", seq)
                    .unwrap(),
                client_b
                    .complete_indexed(&prompt, "nurse/biography", seq)
                    .unwrap()
            );
        }
    }

    #[test]
    fn enrichment_words_appear_with_multiplicity() {
        let config = MockConfig {
            female: 1.0,
            male: 0.0,
            enrichments: vec![crate::config::MockEnrichment {
                word: "resilience".into(),
                gender: "F".into(),
                occupations: Some(vec!["doctor".into()]),
                repeat: 3,
            }],
            ..MockConfig::default()
        };
        let client = MockClient::new(config);
        let prompt = render_prompt("doctor", PromptKind::Persona, None);
        let text = client.complete_indexed(&prompt, "c", 0).unwrap();
        let tokens = tokenize(&text);
        assert_eq!(tokens.iter().filter(|t| *t == "resilience").count(), 3);

        // other occupations are untouched
        let other = render_prompt("nurse", PromptKind::Persona, None);
        let text = client.complete_indexed(&other, "c", 0).unwrap();
        assert!(!tokenize(&text).contains(&"resilience".to_string()));
    }

    #[test]
    fn vocabulary_covers_emitted_tokens() {
        let config = MockConfig {
            enrichments: vec![crate::config::MockEnrichment {
                word: "resilience".into(),
                gender: "F".into(),
                occupations: None,
                repeat: 2,
            }],
            ..MockConfig::default()
        };
        let occupations = vec!["doctor".to_string(), "software engineer".to_string()];
        let vocab = mock_vocabulary(&config, &occupations);
        let client = MockClient::new(config);
        for occupation in &occupations {
            for kind in [PromptKind::Persona, PromptKind::Biography] {
                let prompt = render_prompt(occupation, kind, None);
                for seq in 0..40 {
                    let text = client.complete_indexed(&prompt, "cell", seq).unwrap();
                    for token in tokenize(&text) {
                        assert!(vocab.contains(&token), "`{token}` missing from vocabulary");
                    }
                }
            }
        }
    }

    #[test]
    fn plain_complete_counts_per_prompt() {
        let config = MockConfig {
            female: 0.5,
            male: 0.5,
            ..MockConfig::default()
        };
        let client = MockClient::new(config);
        let prompt = render_prompt("doctor", PromptKind::Persona, None);
        let first = client.complete(&prompt).unwrap();
        let second = client.complete(&prompt).unwrap();
        // 0.5/0.5 alternates deterministically: F then M
        assert_eq!(label_text(&first), Some(GenderLabel::F));
        assert_eq!(label_text(&second), Some(GenderLabel::M));
    }
}
