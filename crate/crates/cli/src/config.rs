use std::path::{Path, PathBuf};

use impromptu_core::embed::SkipGramConfig;
use impromptu_core::fine::FineConfig;
use impromptu_core::lm::ModelConfig;
use impromptu_core::synth::SynthConfig;
use impromptu_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Desk-scale configuration shipped with the crate; also the default.
pub const SYNTHETIC_CONFIG: &str = include_str!("../configs/synthetic.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Plain-text (one sentence per line) or corpus JSON-lines input. When
    /// absent, `synth` generates a planted corpus into the workdir.
    pub corpus: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    /// Euphemism list file for the file provider.
    pub euphemisms: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            seeds: None,
            lexicon: None,
            gold: None,
            euphemisms: None,
            workdir: PathBuf::from("work"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub n_terms_per_seed: usize,
    pub occ_per_term: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            n_terms_per_seed: 2,
            occ_per_term: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub merge_phrases: bool,
    pub phrase_delta: f64,
    pub phrase_threshold: f64,
    pub min_count: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            merge_phrases: true,
            phrase_delta: 5.0,
            phrase_threshold: 100.0,
            min_count: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    pub k: usize,
    pub rounds: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig { k: 50, rounds: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseStage {
    /// Nearest neighbours per seed forming the positive vocabulary.
    pub top_n: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub threshold: f64,
}

impl Default for CoarseStage {
    fn default() -> Self {
        CoarseStage {
            top_n: 100,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            threshold: impromptu_core::coarse::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineStage {
    /// Terms nearest the mean seed vector that become fine candidates.
    pub top_n: usize,
    pub model: ModelConfig,
    #[serde(flatten)]
    pub fine: FineConfig,
    pub rounds: usize,
    pub keep_fraction: f64,
}

impl Default for FineStage {
    fn default() -> Self {
        FineStage {
            top_n: 1000,
            model: ModelConfig::default(),
            fine: FineConfig::default(),
            rounds: 1,
            keep_fraction: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderChoice {
    Template,
    File,
    Service,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DevsetConfig {
    pub provider: ProviderChoice,
    pub per_seed: usize,
    pub n_euphemisms: usize,
    pub max_in_flight: usize,
    /// Use the dev set for fine-stage checkpoint selection.
    pub early_stopping: bool,
}

impl Default for DevsetConfig {
    fn default() -> Self {
        DevsetConfig {
            provider: ProviderChoice::Template,
            per_seed: 3,
            n_euphemisms: 20,
            max_in_flight: 4,
            early_stopping: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub plant: PlantConfig,
    pub ingest: IngestConfig,
    pub embed: SkipGramConfig,
    pub expansion: ExpansionConfig,
    pub coarse: CoarseStage,
    pub fine: FineStage,
    pub devset: DevsetConfig,
    /// Master seed; every stage derives its own rng seed from it.
    pub seed: u64,
    pub k_list: Vec<usize>,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            synth: SynthConfig::default(),
            plant: PlantConfig::default(),
            ingest: IngestConfig::default(),
            embed: SkipGramConfig::default(),
            expansion: ExpansionConfig::default(),
            coarse: CoarseStage::default(),
            fine: FineStage::default(),
            devset: DevsetConfig::default(),
            seed: 42,
            k_list: impromptu_core::eval::DEFAULT_K.to_vec(),
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn synthetic() -> Self {
        serde_json::from_str(SYNTHETIC_CONFIG).expect("bundled config parses")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))
    }

    /// Applies the master seed to every stage that consumes randomness.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.embed.seed = seed;
        self.coarse.train.seed = seed;
        self.fine.fine.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::invalid(m.to_string()));
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return bad("k_list must contain positive values");
        }
        if !(self.fine.keep_fraction > 0.0 && self.fine.keep_fraction <= 1.0) {
            return bad("keep_fraction must lie in (0, 1]");
        }
        if !(self.coarse.threshold > 0.0 && self.coarse.threshold < 1.0) {
            return bad("coarse threshold must lie in (0, 1)");
        }
        if self.coarse.top_n == 0 || self.fine.top_n == 0 {
            return bad("top_n must be positive");
        }
        self.coarse.train.validate()?;
        self.fine.fine.train.validate()?;
        for p in [
            &self.paths.corpus,
            &self.paths.seeds,
            &self.paths.lexicon,
            &self.paths.gold,
            &self.paths.euphemisms,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(CliError::missing_artifact(p));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_is_valid() {
        let cfg = PipelineConfig::synthetic();
        cfg.validate().unwrap();
        assert_eq!(cfg.synth.seeds.len(), 5);
        assert_eq!(cfg.fine.model.n_aug_layers, 2);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"seed": 7, "fine": {"rounds": 3}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.fine.rounds, 3);
        assert_eq!(cfg.fine.keep_fraction, 0.5);
        assert_eq!(cfg.k_list, vec![5, 10, 20]);
    }

    #[test]
    fn seed_propagates() {
        let mut cfg = PipelineConfig::default();
        cfg.set_seed(11);
        assert_eq!(
            (cfg.synth.seed, cfg.embed.seed, cfg.fine.fine.train.seed),
            (11, 11, 11)
        );
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = PipelineConfig {
            k_list: vec![0],
            ..PipelineConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().code(), 3);
        let mut cfg = PipelineConfig::default();
        cfg.paths.corpus = Some("/definitely/not/here.txt".into());
        assert_eq!(cfg.validate().unwrap_err().code(), 2);
    }
}
