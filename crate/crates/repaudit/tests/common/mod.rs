//! Shared fixture for integration tests: a four-occupation mock campaign
//! with planted mixtures and lexicon words.

use std::path::Path;

#[allow(dead_code)]
pub const FIXTURE_MODEL: &str = "mock-alpha";

/// Reference CSV matching the fixture occupations.
pub fn write_reference(base: &Path) {
    std::fs::write(
        base.join("reference.csv"),
        "occupation,female_share,source\n\
         doctor,0.4,test-snapshot\n\
         engineer,0.2,test-snapshot\n\
         nurse,0.85,test-snapshot\n\
         plumber,0.03,test-snapshot\n",
    )
    .unwrap();
}

/// Mock campaign config: doctor 70/30 with planted "resilience" (F),
/// engineer 50/50 with planted "golf" (M), nurse all-female (fails the
/// gate), plumber 30/60/10 with planted "compassionate" (F).
pub fn fixture_config(base: &Path, model: &str) -> String {
    format!(
        r#"
[campaign]
model = "{model}"
occupations = ["doctor", "engineer", "nurse", "plumber"]
quota = 30
gate = 0.10
max_requests = 400
concurrency = 4

[mock]
seed = 11
female = 0.5
male = 0.5

[[mock.mixtures]]
occupation = "doctor"
female = 0.7
male = 0.3
nonbinary = 0.0

[[mock.mixtures]]
occupation = "nurse"
female = 1.0
male = 0.0
nonbinary = 0.0

[[mock.mixtures]]
occupation = "plumber"
female = 0.3
male = 0.6
nonbinary = 0.1

[[mock.enrichments]]
word = "resilience"
gender = "F"
occupations = ["doctor"]
repeat = 3

[[mock.enrichments]]
word = "golf"
gender = "M"
occupations = ["engineer"]
repeat = 2

[[mock.enrichments]]
word = "compassionate"
gender = "F"
occupations = ["plumber"]
repeat = 2

[score]
embeddings = "{embeddings}"

[report]
reference = "{reference}"
"#,
        model = model,
        embeddings = base.join("embeddings.txt").display(),
        reference = base.join("reference.csv").display(),
    )
}

/// Parses the fixture config into an `AppConfig` after materializing the
/// reference CSV and the embedding table.
#[allow(dead_code)]
pub fn fixture_app_config(base: &Path, model: &str) -> repaudit::config::AppConfig {
    write_reference(base);
    let config_path = base.join(format!("config_{model}.toml"));
    std::fs::write(&config_path, fixture_config(base, model)).unwrap();
    let config = repaudit::config::AppConfig::load(&config_path).unwrap();
    let embeddings = base.join("embeddings.txt");
    if !embeddings.exists() {
        repaudit::pipeline::write_mock_embeddings(&config, &embeddings, 24).unwrap();
    }
    config
}
