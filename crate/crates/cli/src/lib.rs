//! Command-line driver for the two-stage euphemism detection pipeline.
//!
//! Every subcommand is one file-backed stage in the workdir; `pipeline` runs
//! them all. [`run`] is the testable entry point behind the binary.

pub mod config;
pub mod error;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use stages::{Stage, Workspace};

#[derive(Debug, Parser)]
#[command(
    name = "impromptu",
    version,
    about = "Detect novel euphemisms in a text corpus"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted impromptu terms.
    Synth,
    /// Tokenize, merge phrases and build the vocabulary.
    Ingest,
    /// Train skip-gram embeddings.
    Embed,
    /// Build the inverted index (and seed expansion when a lexicon is given).
    Index,
    /// Build the coarse classification dataset.
    BuildCoarse,
    /// Train the coarse classifier.
    TrainCoarse,
    /// Filter fine candidates' occurrences with the coarse classifier.
    Filter,
    /// Materialize the fine training samples.
    BuildFine,
    /// Train one fine model.
    TrainFine,
    /// Multi-round iterative fine training.
    Iterate,
    /// Rank candidates with the fine model.
    Score,
    /// Score the ranking against gold labels.
    Evaluate,
    /// Generate the balanced dev set.
    Devset,
    /// Write plot-ready series and print a summary.
    Report,
    /// Run every stage in order.
    Pipeline,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Synth => Stage::Synth,
            Command::Ingest => Stage::Ingest,
            Command::Embed => Stage::Embed,
            Command::Index => Stage::Index,
            Command::BuildCoarse => Stage::BuildCoarse,
            Command::TrainCoarse => Stage::TrainCoarse,
            Command::Filter => Stage::Filter,
            Command::BuildFine => Stage::BuildFine,
            Command::TrainFine => Stage::TrainFine,
            Command::Iterate => Stage::Iterate,
            Command::Score => Stage::Score,
            Command::Evaluate => Stage::Evaluate,
            Command::Devset => Stage::Devset,
            Command::Report => Stage::Report,
            Command::Pipeline => return None,
        })
    }
}

/// Flags override the matching config keys.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Flags {
    /// JSON config file; defaults to the bundled synthetic configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seeds: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    pub gold: Option<PathBuf>,
    #[arg(long, global = true)]
    pub euphemisms: Option<PathBuf>,
    /// Comma-separated cutoffs, e.g. `5,10,20`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub rounds: Option<usize>,
    /// Disable the context-augmentation objective.
    #[arg(long, global = true)]
    pub no_cam: bool,
    #[arg(long, global = true)]
    pub keep_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed_rng: Option<u64>,
    /// Rerun stages whose outputs already exist.
    #[arg(long, global = true)]
    pub force: bool,
}

impl Flags {
    pub fn resolve(&self) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::synthetic(),
        };
        let paths = &mut cfg.paths;
        for (flag, slot) in [
            (&self.corpus, &mut paths.corpus),
            (&self.seeds, &mut paths.seeds),
            (&self.lexicon, &mut paths.lexicon),
            (&self.gold, &mut paths.gold),
            (&self.euphemisms, &mut paths.euphemisms),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(w) = &self.workdir {
            paths.workdir = w.clone();
        }
        if let Some(k) = &self.k {
            cfg.k_list = k.clone();
        }
        if let Some(r) = self.rounds {
            cfg.fine.rounds = r;
        }
        if self.no_cam {
            cfg.fine.fine.cam_weight = 0.0;
        }
        if let Some(f) = self.keep_fraction {
            cfg.fine.keep_fraction = f;
        }
        if let Some(t) = self.threshold {
            cfg.coarse.threshold = t;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(s) = self.seed_rng {
            cfg.set_seed(s);
        }
        Ok(cfg)
    }
}

/// Caps rayon's global pool. Only the first call in a process takes effect.
pub fn set_threads(n: Option<usize>) {
    if let Some(n) = n {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            log::debug!("thread pool already initialized: {e}");
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.flags.resolve()?;
    set_threads(cfg.threads);
    let ws = Workspace::new(cfg, cli.flags.force)?;
    match cli.command.stage() {
        Some(Stage::Report) => ws.run(Stage::Report)?,
        Some(stage) => return ws.run(stage),
        None => {
            ws.pipeline()?;
        }
    }
    println!("{}", ws.summary()?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "impromptu",
            "pipeline",
            "--k",
            "1,3",
            "--rounds",
            "2",
            "--no-cam",
            "--keep-fraction",
            "0.25",
            "--seed-rng",
            "9",
            "--workdir",
            "/tmp/w",
        ])
        .unwrap();
        let cfg = cli.flags.resolve().unwrap();
        assert_eq!(cfg.k_list, vec![1, 3]);
        assert_eq!(cfg.fine.rounds, 2);
        assert_eq!(cfg.fine.fine.cam_weight, 0.0);
        assert_eq!(cfg.fine.keep_fraction, 0.25);
        assert_eq!((cfg.seed, cfg.fine.fine.train.seed), (9, 9));
        assert_eq!(cfg.paths.workdir, PathBuf::from("/tmp/w"));
    }

    #[test]
    fn every_subcommand_parses() {
        for name in [
            "ingest",
            "synth",
            "embed",
            "index",
            "build-coarse",
            "train-coarse",
            "filter",
            "build-fine",
            "train-fine",
            "iterate",
            "score",
            "evaluate",
            "devset",
            "report",
            "pipeline",
        ] {
            assert!(Cli::try_parse_from(["impromptu", name]).is_ok(), "{name}");
        }
        let err = Cli::try_parse_from(["impromptu", "frobnicate"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
