//! File-backed pipeline stages. Each stage reads earlier artifacts from the
//! workdir, writes its own, and is skipped when its outputs already exist
//! unless forced.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use impromptu_core::coarse::{self, CoarseMeta, CoarseModel, Refined};
use impromptu_core::corpus::{
    build_vocab, ingest, merge_phrases, Corpus, RawCorpus, Split, TermId, Vocabulary,
};
use impromptu_core::datasets::{self, GoldLabels, MaskedSample};
use impromptu_core::embed::{train_embeddings, EmbeddingMatrix};
use impromptu_core::eval::{evaluate_detections, DetectionReport, DevItem};
use impromptu_core::fine::{
    self, read_ranking, train_fine, write_ranking, DevSignal, FineModel, IterationSpec,
    IterationState,
};
use impromptu_core::index::{build_inverted_index, expand_seeds, lexicon_intersect, InvertedIndex};
use impromptu_core::llmgen::{
    self, EuphemismMap, FileProvider, GenerationProvider, ServiceProvider, TemplateProvider,
};
use impromptu_core::lm::{save_checkpoint, ModelConfig, ModelParams};
use impromptu_core::synth;
use impromptu_core::train::EpochLog;
use impromptu_core::{io, Error};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, ProviderChoice};
use crate::error::{CliError, CliResult};

pub const RAW: &str = "raw.jsonl";
pub const GOLD_RAW: &str = "gold.raw.jsonl";
pub const SEEDS: &str = "seeds.txt";
pub const CORPUS: &str = "corpus.jsonl";
pub const VOCAB: &str = "vocab.jsonl";
pub const GOLD: &str = "gold.jsonl";
pub const EMBEDDINGS: &str = "embeddings.txt";
pub const INDEX: &str = "index.jsonl";
pub const EXPANSION: &str = "expansion.jsonl";
pub const COARSE_TRAIN: &str = "coarse_train.jsonl";
pub const COARSE_DEV: &str = "coarse_dev.jsonl";
pub const COARSE_CKPT: &str = "coarse.ckpt";
pub const COARSE_META: &str = "coarse.meta.json";
pub const CANDIDATES: &str = "fine_candidates.txt";
pub const REFINED: &str = "refined.jsonl";
pub const FINE_SAMPLES: &str = "fine_samples.jsonl";
pub const EUPHEMISMS: &str = "euphemisms.json";
pub const DEV: &str = "dev.jsonl";
pub const FINE_CKPT: &str = "fine.ckpt";
pub const FINE_META: &str = "fine.meta.json";
pub const ITERATION: &str = "iteration.json";
pub const RANKING: &str = "ranking.jsonl";
pub const REPORT: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SERIES: &str = "series.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Embed,
    Index,
    BuildCoarse,
    TrainCoarse,
    Filter,
    BuildFine,
    Devset,
    TrainFine,
    Iterate,
    Score,
    Evaluate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Index => "index",
            Stage::BuildCoarse => "build-coarse",
            Stage::TrainCoarse => "train-coarse",
            Stage::Filter => "filter",
            Stage::BuildFine => "build-fine",
            Stage::Devset => "devset",
            Stage::TrainFine => "train-fine",
            Stage::Iterate => "iterate",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Artifacts whose presence marks the stage as complete.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &[RAW, GOLD_RAW, SEEDS],
            Stage::Ingest => &[CORPUS, VOCAB],
            Stage::Embed => &[EMBEDDINGS],
            Stage::Index => &[INDEX],
            Stage::BuildCoarse => &[COARSE_TRAIN, COARSE_DEV],
            Stage::TrainCoarse => &[COARSE_CKPT, COARSE_META],
            Stage::Filter => &[CANDIDATES, REFINED],
            Stage::BuildFine => &[FINE_SAMPLES],
            Stage::Devset => &[EUPHEMISMS, DEV],
            Stage::TrainFine => &[FINE_CKPT, FINE_META],
            Stage::Iterate => &[ITERATION, FINE_CKPT, FINE_META],
            Stage::Score => &[RANKING],
            Stage::Evaluate => &[REPORT, REPORT_CSV],
            Stage::Report => &[SERIES],
        }
    }
}

/// Per-stage rng streams derived from the master seed.
fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64 + 1);
    rng
}

#[derive(Serialize, Deserialize)]
pub struct FineMeta {
    pub best_dev_accuracy: Option<f64>,
    pub history: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
pub struct IterationLog {
    pub rounds: Vec<IterationState>,
    pub selected_round: usize,
    pub stopped_early: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ExpansionRow {
    seed: String,
    expanded: Vec<String>,
    lexicon_hits: Vec<String>,
}

pub struct Workspace {
    pub cfg: PipelineConfig,
    pub force: bool,
}

impl Workspace {
    pub fn new(cfg: PipelineConfig, force: bool) -> CliResult<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.paths.workdir)
            .map_err(|e| CliError::Core(Error::file(&cfg.paths.workdir, e)))?;
        Ok(Workspace { cfg, force })
    }

    pub fn dir(&self) -> &Path {
        &self.cfg.paths.workdir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir().join(name)
    }

    /// Path of an artifact that must already exist.
    pub fn input(&self, name: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::missing_artifact(&p))
        }
    }

    fn done(&self, stage: Stage) -> bool {
        stage.outputs().iter().all(|o| self.path(o).exists())
    }

    /// Runs `stage` unless its outputs exist and `force` is off.
    pub fn run(&self, stage: Stage) -> CliResult<()> {
        if !self.force && self.done(stage) {
            info!("{}: outputs present, skipping", stage.name());
            return Ok(());
        }
        info!("{}: running", stage.name());
        match stage {
            Stage::Synth => self.synth(),
            Stage::Ingest => self.ingest(),
            Stage::Embed => self.embed(),
            Stage::Index => self.index(),
            Stage::BuildCoarse => self.build_coarse(),
            Stage::TrainCoarse => self.train_coarse(),
            Stage::Filter => self.filter(),
            Stage::BuildFine => self.build_fine(),
            Stage::Devset => self.devset(),
            Stage::TrainFine => self.train_fine(),
            Stage::Iterate => self.iterate(),
            Stage::Score => self.score(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
        }
    }

    /// The full chain; returns the detection report.
    pub fn pipeline(&self) -> CliResult<DetectionReport> {
        let mut stages = vec![];
        if self.cfg.paths.corpus.is_none() {
            stages.push(Stage::Synth);
        }
        stages.extend([
            Stage::Ingest,
            Stage::Embed,
            Stage::Index,
            Stage::BuildCoarse,
            Stage::TrainCoarse,
            Stage::Filter,
            Stage::BuildFine,
        ]);
        if self.cfg.devset.early_stopping {
            stages.push(Stage::Devset);
        }
        stages.extend([Stage::Iterate, Stage::Score, Stage::Evaluate]);
        for s in stages {
            self.run(s)?;
        }
        self.run(Stage::Report)?;
        Ok(DetectionReport::read_json(&self.input(REPORT)?)?)
    }

    // ---- loaders ----

    pub fn vocab(&self) -> CliResult<Vocabulary> {
        Ok(Vocabulary::read_jsonl(&self.input(VOCAB)?)?)
    }

    pub fn corpus(&self, vocab: &Vocabulary) -> CliResult<Corpus> {
        Ok(vocab.encode_corpus(&RawCorpus::read_jsonl(&self.input(CORPUS)?)?))
    }

    pub fn seeds(&self) -> CliResult<Vec<String>> {
        Ok(io::read_term_list(&self.input(SEEDS)?)?)
    }

    pub fn seed_ids(&self, vocab: &Vocabulary) -> CliResult<Vec<TermId>> {
        Ok(self
            .seeds()?
            .iter()
            .map(|s| vocab.require(s))
            .collect::<Result<_, _>>()?)
    }

    pub fn gold(&self) -> CliResult<Option<GoldLabels>> {
        let p = self.path(GOLD);
        Ok(if p.exists() {
            Some(GoldLabels::read_jsonl(&p)?)
        } else {
            None
        })
    }

    pub fn embeddings(&self) -> CliResult<EmbeddingMatrix> {
        Ok(EmbeddingMatrix::read_text(&self.input(EMBEDDINGS)?)?)
    }

    pub fn index_for(&self, vocab: &Vocabulary) -> CliResult<InvertedIndex> {
        Ok(InvertedIndex::read_jsonl(&self.input(INDEX)?, vocab)?)
    }

    pub fn coarse_model(&self, vocab: &Vocabulary, corpus: &Corpus) -> CliResult<CoarseModel> {
        let cfg = self.coarse_config(vocab, corpus);
        let params = ModelParams::load_matching(&self.input(COARSE_CKPT)?, &cfg)?;
        let meta: CoarseMeta = read_json(&self.input(COARSE_META)?)?;
        Ok(CoarseModel::from_parts(params, meta)?)
    }

    pub fn fine_samples(&self, vocab: &Vocabulary) -> CliResult<Vec<MaskedSample>> {
        Ok(datasets::read_samples(&self.input(FINE_SAMPLES)?, vocab)?)
    }

    pub fn fine_params(&self, vocab: &Vocabulary, corpus: &Corpus) -> CliResult<ModelParams> {
        Ok(ModelParams::load_matching(
            &self.input(FINE_CKPT)?,
            &self.fine_config(vocab, corpus),
        )?)
    }

    pub fn dev_items(&self, vocab: &Vocabulary) -> CliResult<Option<Vec<DevItem>>> {
        if !self.cfg.devset.early_stopping {
            return Ok(None);
        }
        let samples = llmgen::read_dev_set(&self.input(DEV)?)?;
        Ok(Some(llmgen::to_dev_items(&samples, vocab)?))
    }

    /// Coarse model shape: vocabulary from the data, room for the leading CLS.
    pub fn coarse_config(&self, vocab: &Vocabulary, corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.len(),
            max_len: corpus.max_len() + 1,
            ..self.cfg.coarse.model.clone()
        }
    }

    pub fn fine_config(&self, vocab: &Vocabulary, corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.len(),
            max_len: corpus.max_len() + 1,
            ..self.cfg.fine.model.clone()
        }
    }

    // ---- stages ----

    fn synth(&self) -> CliResult<()> {
        let raw = synth::generate(&self.cfg.synth)?;
        let mut rng = stage_rng(self.cfg.seed, Stage::Synth);
        let (planted, gold) = datasets::plant_impromptu(
            &raw,
            &self.cfg.synth.seeds,
            self.cfg.plant.n_terms_per_seed,
            self.cfg.plant.occ_per_term,
            &mut rng,
        )?;
        planted.write_jsonl(&self.path(RAW))?;
        gold.write_jsonl(&self.path(GOLD_RAW))?;
        io::write_term_list(&self.path(SEEDS), &self.cfg.synth.seeds)?;
        info!(
            "synth: {} sentences, {} planted terms",
            planted.len(),
            gold.terms.len()
        );
        Ok(())
    }

    fn ingest(&self) -> CliResult<()> {
        let source = match &self.cfg.paths.corpus {
            Some(p) => p.clone(),
            None => self.input(RAW)?,
        };
        let raw = if source.extension().is_some_and(|e| e == "jsonl") {
            RawCorpus::read_jsonl(&source)?
        } else {
            ingest(io::open(&source)?, Split::White)?
        };
        let c = &self.cfg.ingest;
        let merged = if c.merge_phrases {
            merge_phrases(&raw, c.phrase_delta, c.phrase_threshold)
        } else {
            raw
        };
        let vocab = build_vocab(&merged, c.min_count);
        let seeds = match &self.cfg.paths.seeds {
            Some(p) => io::read_term_list(p)?,
            None => self.seeds()?,
        };
        let present: Vec<String> = seeds
            .into_iter()
            .filter(|s| {
                let ok = vocab.id(s).is_some();
                if !ok {
                    warn!("seed `{s}` is not in the vocabulary; dropped");
                }
                ok
            })
            .collect();
        if present.is_empty() {
            return Err(CliError::invalid("no seed occurs in the corpus vocabulary"));
        }
        let gold_src = match &self.cfg.paths.gold {
            Some(p) => Some(p.clone()),
            None => {
                Some(self.path(GOLD_RAW)).filter(|p| p.exists() && self.cfg.paths.corpus.is_none())
            }
        };
        if let Some(g) = gold_src {
            let corpus = vocab.encode_corpus(&merged);
            GoldLabels::read_jsonl(&g)?
                .realign(&corpus, &vocab)?
                .write_jsonl(&self.path(GOLD))?;
        }
        merged.write_jsonl(&self.path(CORPUS))?;
        vocab.write_jsonl(&self.path(VOCAB))?;
        io::write_term_list(&self.path(SEEDS), &present)?;
        info!(
            "ingest: {} sentences, {} terms",
            merged.len(),
            vocab.n_terms()
        );
        Ok(())
    }

    fn embed(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        train_embeddings(&corpus, &vocab, &self.cfg.embed)?.write_text(&self.path(EMBEDDINGS))?;
        Ok(())
    }

    fn index(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let index = build_inverted_index(&corpus, &vocab);
        index.write_jsonl(&self.path(INDEX), &vocab)?;
        if let Some(lex_path) = &self.cfg.paths.lexicon {
            let lexicon = io::read_term_list(lex_path)?;
            let matrix = self.embeddings()?;
            let rows = self
                .seeds()?
                .into_iter()
                .map(|seed| {
                    let expanded = expand_seeds(
                        &matrix,
                        &seed,
                        self.cfg.expansion.k,
                        self.cfg.expansion.rounds,
                    )?;
                    let hits = lexicon_intersect(&expanded, &lexicon);
                    Ok(ExpansionRow {
                        seed,
                        expanded: expanded.into_iter().collect(),
                        lexicon_hits: hits.into_iter().collect(),
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            io::write_jsonl(&self.path(EXPANSION), rows)?;
        }
        Ok(())
    }

    fn build_coarse(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let matrix = self.embeddings()?;
        let mut rng = stage_rng(self.cfg.seed, Stage::BuildCoarse);
        let (train, dev) = datasets::build_coarse_dataset(
            &corpus,
            &vocab,
            &matrix,
            &self.seeds()?,
            self.cfg.coarse.top_n,
            &mut rng,
        )?;
        datasets::write_samples(&self.path(COARSE_TRAIN), &train, &corpus, &vocab)?;
        datasets::write_samples(&self.path(COARSE_DEV), &dev, &corpus, &vocab)?;
        info!(
            "build-coarse: {} train / {} dev samples",
            train.len(),
            dev.len()
        );
        Ok(())
    }

    fn train_coarse(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let train = datasets::read_samples(&self.input(COARSE_TRAIN)?, &vocab)?;
        let dev = datasets::read_samples(&self.input(COARSE_DEV)?, &vocab)?;
        let cfg = self.coarse_config(&vocab, &corpus);
        let mut model =
            coarse::train_coarse(&train, &dev, &cfg, &self.cfg.coarse.train, vocab.cls_id())?;
        model.threshold = self.cfg.coarse.threshold;
        save_checkpoint(&model.params, &self.path(COARSE_CKPT))?;
        write_json(&self.path(COARSE_META), &model.meta())?;
        info!("train-coarse: best dev loss {:.4}", model.best_dev_loss);
        Ok(())
    }

    fn filter(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let matrix = self.embeddings()?;
        let index = self.index_for(&vocab)?;
        let model = self.coarse_model(&vocab, &corpus)?;
        let candidates = datasets::fine_candidates(&matrix, &self.seeds()?, self.cfg.fine.top_n)?;
        let refined = coarse::filter_candidates(
            &model,
            &corpus,
            &vocab,
            &candidates,
            &index,
            model.threshold,
        )?;
        io::write_term_list(&self.path(CANDIDATES), &candidates)?;
        refined.write_jsonl(&self.path(REFINED))?;
        info!(
            "filter: kept {} occurrences of {} candidates",
            refined.kept.len(),
            candidates.len()
        );
        Ok(())
    }

    fn build_fine(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let refined = Refined::read_jsonl(&self.input(REFINED)?)?;
        let samples = refined.samples(&corpus, &vocab)?;
        if samples.is_empty() {
            return Err(CliError::invalid(
                "the coarse filter kept no candidate occurrences",
            ));
        }
        datasets::write_samples(&self.path(FINE_SAMPLES), &samples, &corpus, &vocab)?;
        Ok(())
    }

    fn provider(&self) -> CliResult<Box<dyn GenerationProvider>> {
        Ok(match self.cfg.devset.provider {
            ProviderChoice::Template => Box::new(TemplateProvider {
                seed: self.cfg.seed,
            }),
            ProviderChoice::File => {
                let path =
                    self.cfg.paths.euphemisms.as_ref().ok_or_else(|| {
                        CliError::invalid("the file provider needs paths.euphemisms")
                    })?;
                Box::new(FileProvider::open(path)?)
            }
            ProviderChoice::Service => Box::new(ServiceProvider::from_env()?),
        })
    }

    fn devset(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let index = self.index_for(&vocab)?;
        let provider = self.provider()?;
        let gold: HashSet<String> = self
            .gold()?
            .map(|g| g.terms.into_keys().collect())
            .unwrap_or_default();
        let d = &self.cfg.devset;
        let euphemisms = llmgen::generate_euphemism_candidates(
            provider.as_ref(),
            &self.seeds()?,
            d.n_euphemisms,
            &gold,
            d.max_in_flight,
        )?;
        let mut rng = stage_rng(self.cfg.seed, Stage::Devset);
        let samples = llmgen::build_dev_set(
            provider.as_ref(),
            &euphemisms,
            &corpus,
            &vocab,
            &index,
            d.per_seed,
            &mut rng,
        )?;
        write_json(&self.path(EUPHEMISMS), &euphemisms)?;
        llmgen::write_dev_set(&self.path(DEV), &samples)?;
        info!("devset: {} samples", samples.len());
        Ok(())
    }

    fn write_fine(&self, model: &FineModel) -> CliResult<()> {
        save_checkpoint(&model.params, &self.path(FINE_CKPT))?;
        write_json(
            &self.path(FINE_META),
            &FineMeta {
                best_dev_accuracy: model.best_dev_accuracy,
                history: model.history.clone(),
            },
        )
    }

    fn train_fine(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let samples = self.fine_samples(&vocab)?;
        let seed_ids = self.seed_ids(&vocab)?;
        let dev = self.dev_items(&vocab)?;
        let signal = dev.as_deref().map(|items| DevSignal {
            items,
            seed_ids: &seed_ids,
        });
        let model = train_fine(
            &samples,
            &self.fine_config(&vocab, &corpus),
            &self.cfg.fine.fine,
            signal,
            vocab.mask_id(),
        )?;
        self.write_fine(&model)
    }

    fn iterate(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let samples = self.fine_samples(&vocab)?;
        let seed_ids = self.seed_ids(&vocab)?;
        let dev = self.dev_items(&vocab)?;
        let gold_sites = self.gold()?.map(|g| g.site_set());
        let model_cfg = self.fine_config(&vocab, &corpus);
        let save_round = |round: usize, m: &FineModel| -> Result<String, Error> {
            let name = format!("round_{round}.ckpt");
            save_checkpoint(&m.params, &self.path(&name))?;
            Ok(name)
        };
        let spec = IterationSpec {
            rounds: self.cfg.fine.rounds,
            keep_fraction: self.cfg.fine.keep_fraction,
            model: &model_cfg,
            fine: &self.cfg.fine.fine,
            dev: dev.as_deref().map(|items| DevSignal {
                items,
                seed_ids: &seed_ids,
            }),
            seed_ids: &seed_ids,
            mask_id: vocab.mask_id(),
            gold_sites: gold_sites.as_ref(),
            on_round: Some(&save_round),
        };
        let out = fine::iterate_training(&samples, &spec)?;
        self.write_fine(&out.model)?;
        write_json(
            &self.path(ITERATION),
            &IterationLog {
                rounds: out.history,
                selected_round: out.selected_round,
                stopped_early: out.stopped_early,
            },
        )
    }

    fn score(&self) -> CliResult<()> {
        let vocab = self.vocab()?;
        let corpus = self.corpus(&vocab)?;
        let params = self.fine_params(&vocab, &corpus)?;
        let samples = self.fine_samples(&vocab)?;
        let seed_ids = self.seed_ids(&vocab)?;
        let exclude: HashSet<TermId> = seed_ids.iter().copied().collect();
        let ranking = fine::score_candidates(&params, &samples, &seed_ids, &vocab, &exclude)?;
        write_ranking(&self.path(RANKING), &ranking)?;
        Ok(())
    }

    fn evaluate(&self) -> CliResult<()> {
        let ranking = read_ranking(&self.input(RANKING)?)?;
        let gold = self
            .gold()?
            .ok_or_else(|| CliError::missing_artifact(&self.path(GOLD)))?;
        let vocab = self.vocab()?;
        let index = self.index_for(&vocab)?;
        let report = evaluate_detections(&ranking, &gold, &index, &vocab, &self.cfg.k_list)?;
        report.write_json(&self.path(REPORT))?;
        report.write_csv(&self.path(REPORT_CSV))?;
        Ok(())
    }

    /// Writes plot-ready series.
    fn report(&self) -> CliResult<()> {
        let report = DetectionReport::read_json(&self.input(REPORT)?)?;
        let optional = |name: &str| -> CliResult<Option<serde_json::Value>> {
            let p = self.path(name);
            Ok(if p.exists() {
                Some(read_json(&p)?)
            } else {
                None
            })
        };
        let series = serde_json::json!({
            "k": report.results.iter().map(|r| r.k).collect::<Vec<_>>(),
            "precision_permille": report.results.iter().map(|r| r.precision_permille).collect::<Vec<_>>(),
            "recall": report.results.iter().map(|r| r.recall).collect::<Vec<_>>(),
            "random_recall": report.results.iter().map(|r| r.random_recall).collect::<Vec<_>>(),
            "gold_ranks": report.gold_ranks,
            "rank_quartiles": report.rank_quartiles,
            "iteration": optional(ITERATION)?,
            "coarse": optional(COARSE_META)?,
            "fine": optional(FINE_META)?,
        });
        write_json(&self.path(SERIES), &series)
    }

    /// Text table of the evaluation results.
    pub fn summary(&self) -> CliResult<String> {
        let report = DetectionReport::read_json(&self.input(REPORT)?)?;
        let mut lines = vec![format!(
            "{:>5} {:>12} {:>8} {:>8}",
            "k", "precision‰", "recall", "random"
        )];
        for r in &report.results {
            lines.push(format!(
                "{:>5} {:>12.3} {:>8.3} {:>8.3}",
                r.k, r.precision_permille, r.recall, r.random_recall
            ));
        }
        let q = &report.rank_quartiles;
        lines.push(format!(
            "gold ranks: min {} q1 {} median {} q3 {} max {}",
            q.min, q.q1, q.median, q.q3, q.max
        ));
        Ok(lines.join("\n"))
    }

    /// Gold-term set used to audit leakage into generated dev data.
    pub fn gold_terms(&self) -> CliResult<BTreeSet<String>> {
        Ok(self
            .gold()?
            .map(|g| g.terms.into_keys().collect())
            .unwrap_or_default())
    }

    pub fn euphemisms(&self) -> CliResult<EuphemismMap> {
        read_json(&self.input(EUPHEMISMS)?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::Json)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Core(Error::file(path, e)))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Core(Error::file(path, e)))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}
