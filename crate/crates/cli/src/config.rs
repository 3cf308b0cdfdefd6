//! Optional JSON configuration file. Every field may be omitted; command-line
//! flags override whatever is set here.

use std::path::Path;

use anyhow::{Context, Result};
use backtrack::cv::Refit;
use backtrack::engine::EngineConfig;
use backtrack::multinomial::MultinomialConfig;
use backtrack::simulation::Method;
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub engine: Option<EngineConfig>,
    pub multinomial: Option<MultinomialConfig>,
    pub cv: CvSection,
    pub simulation: SimulationSection,
    pub theory: TheorySection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: Option<usize>,
    pub repeats: Option<usize>,
    pub refit: Option<Refit>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub scenario: Option<u8>,
    pub snr: Option<f64>,
    pub replications: Option<usize>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub test_rows: Option<usize>,
    pub methods: Option<Vec<Method>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub lemma_trials: Option<usize>,
    pub lemma_margin: Option<f64>,
    pub draws: Option<usize>,
    pub t: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
