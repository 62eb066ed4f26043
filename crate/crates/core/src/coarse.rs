//! Coarse stage: a binary `[CLS]` classifier deciding whether a masked
//! position carries seed-related meaning, used to filter candidate occurrences.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TermId, Vocabulary};
use crate::datasets::MaskedSample;
use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::io;
use crate::lm::{batch_loss, Batch, CoarseExample, Mode, ModelConfig, ModelParams};
use crate::train::{fit, Criterion, EpochLog, Prepared, TrainConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct CoarseModel {
    pub params: ModelParams,
    pub best_dev_loss: f64,
    pub threshold: f64,
    pub history: Vec<EpochLog>,
}

/// Sidecar metadata stored next to the checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoarseMeta {
    pub best_dev_loss: f64,
    pub threshold: f64,
    pub history: Vec<EpochLog>,
}

impl CoarseModel {
    pub fn meta(&self) -> CoarseMeta {
        CoarseMeta {
            best_dev_loss: self.best_dev_loss,
            threshold: self.threshold,
            history: self.history.clone(),
        }
    }

    pub fn from_parts(params: ModelParams, meta: CoarseMeta) -> Result<Self> {
        check_threshold(meta.threshold)?;
        Ok(CoarseModel {
            params,
            best_dev_loss: meta.best_dev_loss,
            threshold: meta.threshold,
            history: meta.history,
        })
    }

    /// Probability that the masked position in `sample` is euphemistic.
    pub fn probability(&self, sample: &MaskedSample, cls_id: TermId) -> Result<f64> {
        let ids = with_cls(&sample.tokens, cls_id);
        let trace = self.params.encode(&ids, Mode::Eval)?;
        Ok(self.params.classify(&trace)[1])
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "threshold must lie in (0, 1), got {t}"
        )))
    }
}

fn with_cls(tokens: &[TermId], cls_id: TermId) -> Vec<TermId> {
    let mut ids = Vec::with_capacity(tokens.len() + 1);
    ids.push(cls_id);
    ids.extend_from_slice(tokens);
    ids
}

fn examples(samples: &[MaskedSample], cls_id: TermId) -> Result<Vec<CoarseExample>> {
    samples
        .iter()
        .map(|s| {
            let label = s.label.ok_or_else(|| {
                Error::InvalidInput(format!("coarse sample for sentence {} has no label", s.sid))
            })?;
            Ok(CoarseExample {
                ids: with_cls(&s.tokens, cls_id),
                label,
            })
        })
        .collect()
}

/// Trains the classifier and returns the checkpoint with the lowest dev loss.
pub fn train_coarse(
    train: &[MaskedSample],
    dev: &[MaskedSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    cls_id: TermId,
) -> Result<CoarseModel> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Insufficient(
            "coarse training needs non-empty train and dev sets".into(),
        ));
    }
    let train_ex = examples(train, cls_id)?;
    let dev_ex = examples(dev, cls_id)?;
    let init = ModelParams::init(model.clone(), cfg.seed)?;
    let mut eval = |p: &ModelParams| batch_loss(p, Batch::Coarse(&dev_ex));
    let out = fit(
        init,
        train_ex.len(),
        cfg,
        Criterion::MinLoss,
        |idx, _| {
            Ok(Prepared::Coarse(
                idx.iter().map(|&i| train_ex[i].clone()).collect(),
            ))
        },
        Some(&mut eval),
    )?;
    Ok(CoarseModel {
        params: out.best,
        best_dev_loss: out.best_score,
        threshold: DEFAULT_THRESHOLD,
        history: out.history,
    })
}

/// Fraction of samples whose predicted class matches their label.
pub fn accuracy(model: &CoarseModel, samples: &[MaskedSample], cls_id: TermId) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Insufficient("accuracy of an empty set".into()));
    }
    let hits: Vec<bool> = samples
        .par_iter()
        .map(|s| {
            let p = model.probability(s, cls_id)?;
            Ok((p >= 0.5) == (s.label == Some(1)))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occurrence {
    pub term: String,
    pub sid: u64,
    pub pos: u32,
    pub p: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Refined {
    pub kept: Vec<Occurrence>,
    pub keep_counts: BTreeMap<String, usize>,
}

impl Refined {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        io::write_jsonl(path, &self.kept)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let kept: Vec<Occurrence> = io::read_jsonl(path)?;
        let mut keep_counts = BTreeMap::new();
        for o in &kept {
            *keep_counts.entry(o.term.clone()).or_insert(0) += 1;
        }
        Ok(Refined { kept, keep_counts })
    }

    /// Masked samples for the kept occurrences, in file order.
    pub fn samples(&self, corpus: &Corpus, vocab: &Vocabulary) -> Result<Vec<MaskedSample>> {
        self.kept
            .iter()
            .map(|o| {
                let s = corpus.get(o.sid).ok_or_else(|| {
                    Error::Invariant(format!("refined occurrence in missing sentence {}", o.sid))
                })?;
                let pos = o.pos as usize;
                if s.tokens.get(pos).map(|&t| vocab.term(t)) != Some(o.term.as_str()) {
                    return Err(Error::Invariant(format!(
                        "refined occurrence {}:{} is not `{}`",
                        o.sid, o.pos, o.term
                    )));
                }
                Ok(MaskedSample::single(
                    o.sid,
                    &s.tokens,
                    pos,
                    vocab.mask_id(),
                    None,
                ))
            })
            .collect()
    }
}

/// Classifier probability for each `(sid, pos)` site, masked in turn.
pub fn site_probabilities(
    model: &CoarseModel,
    corpus: &Corpus,
    vocab: &Vocabulary,
    sites: &[(u64, u32)],
) -> Result<Vec<f64>> {
    sites
        .par_iter()
        .map(|&(sid, pos)| {
            let s = corpus
                .get(sid)
                .ok_or_else(|| Error::InvalidInput(format!("no sentence {sid}")))?;
            if pos as usize >= s.tokens.len() {
                return Err(Error::InvalidInput(format!(
                    "position {pos} outside sentence {sid}"
                )));
            }
            let sample = MaskedSample::single(sid, &s.tokens, pos as usize, vocab.mask_id(), None);
            model.probability(&sample, vocab.cls_id())
        })
        .collect()
}

/// Scores every occurrence of every candidate term (in term order, then
/// posting order) without thresholding.
pub fn score_candidate_occurrences<S: AsRef<str>>(
    model: &CoarseModel,
    corpus: &Corpus,
    vocab: &Vocabulary,
    candidates: &[S],
    index: &InvertedIndex,
) -> Result<Vec<Occurrence>> {
    let mut terms: Vec<&str> = candidates.iter().map(|c| c.as_ref()).collect();
    terms.sort_unstable();
    terms.dedup();
    let mut sites = Vec::new();
    let mut owners = Vec::new();
    for term in terms {
        let id = vocab.require(term)?;
        for p in index.postings(id) {
            sites.push((p.sid, p.pos));
            owners.push(term);
        }
    }
    let probs = site_probabilities(model, corpus, vocab, &sites)?;
    Ok(owners
        .into_iter()
        .zip(sites)
        .zip(probs)
        .map(|((term, (sid, pos)), p)| Occurrence {
            term: term.to_string(),
            sid,
            pos,
            p,
        })
        .collect())
}

/// Keeps the scored occurrences with `p ≥ threshold`.
pub fn keep_above(scored: &[Occurrence], threshold: f64) -> Result<Refined> {
    check_threshold(threshold)?;
    let kept: Vec<Occurrence> = scored
        .iter()
        .filter(|o| o.p >= threshold)
        .cloned()
        .collect();
    let mut keep_counts = BTreeMap::new();
    for o in &kept {
        *keep_counts.entry(o.term.clone()).or_insert(0) += 1;
    }
    Ok(Refined { kept, keep_counts })
}

/// Masks each candidate occurrence, classifies it and keeps those with
/// `p(euphemism) ≥ threshold`.
pub fn filter_candidates<S: AsRef<str>>(
    model: &CoarseModel,
    corpus: &Corpus,
    vocab: &Vocabulary,
    candidates: &[S],
    index: &InvertedIndex,
    threshold: f64,
) -> Result<Refined> {
    check_threshold(threshold)?;
    keep_above(
        &score_candidate_occurrences(model, corpus, vocab, candidates, index)?,
        threshold,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, ingest, Split};
    use crate::index::build_inverted_index;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(vocab: usize) -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            max_len: 8,
            vocab_size: vocab,
            n_aug_layers: 2,
            dropout: 0.0,
        }
    }

    /// Label 1 iff the token before the mask is `buy` (id 0); contexts otherwise random.
    fn separable(n: usize, seed: u64, shuffle_labels: bool) -> Vec<MaskedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = 20;
        let mut out: Vec<MaskedSample> = (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let cue = if label == 1 { 0 } else { 1 };
                let tokens = vec![rng.random_range(2..18), cue, mask, rng.random_range(2..18)];
                MaskedSample {
                    sid: i as u64,
                    tokens,
                    mask_positions: vec![2],
                    targets: vec![3],
                    label: Some(label),
                }
            })
            .collect();
        if shuffle_labels {
            let mut labels: Vec<Option<u8>> = out.iter().map(|s| s.label).collect();
            labels.shuffle(&mut rng);
            for (s, l) in out.iter_mut().zip(labels) {
                s.label = l;
            }
        }
        out
    }

    fn cfg(epochs: usize, patience: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            patience,
            batch_size: 16,
            lr: 3e-3,
            seed: 1,
        }
    }

    const CLS: TermId = 21;

    #[test]
    fn separable_data_is_learned() {
        let data = separable(250, 3, false);
        let (train, dev) = data.split_at(200);
        let m = train_coarse(train, dev, &small_model(22), &cfg(20, 20), CLS).unwrap();
        assert!(accuracy(&m, dev, CLS).unwrap() > 0.95);
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let data = separable(600, 4, true);
        let (train, dev) = data.split_at(400);
        let m = train_coarse(train, dev, &small_model(22), &cfg(10, 2), CLS).unwrap();
        let acc = accuracy(&m, dev, CLS).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "acc {acc}");
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let data = separable(40, 5, false);
        let m = train_coarse(&data[..32], &data[32..], &small_model(22), &cfg(10, 0), CLS).unwrap();
        assert_eq!(m.history.len(), 1);
    }

    #[test]
    fn best_checkpoint_has_lowest_dev_loss() {
        let data = separable(80, 6, false);
        let m = train_coarse(&data[..64], &data[64..], &small_model(22), &cfg(6, 6), CLS).unwrap();
        let lowest = m
            .history
            .iter()
            .map(|e| e.dev_score)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(m.best_dev_loss, lowest);
        let dev_ex = examples(&data[64..], CLS).unwrap();
        assert!((batch_loss(&m.params, Batch::Coarse(&dev_ex)).unwrap() - lowest).abs() < 1e-12);
    }

    #[test]
    fn empty_sets_rejected() {
        let data = separable(10, 7, false);
        assert!(train_coarse(&data, &[], &small_model(22), &cfg(1, 1), CLS).is_err());
    }

    fn toy_corpus() -> (Corpus, Vocabulary, InvertedIndex) {
        let text = "buy coke now\nbuy snow now\nwalk dog now\nsnow falls now\n";
        let raw = ingest(text.as_bytes(), Split::Dedup).unwrap();
        let vocab = build_vocab(&raw, 1);
        let corpus = vocab.encode_corpus(&raw);
        let index = build_inverted_index(&corpus, &vocab);
        (corpus, vocab, index)
    }

    #[test]
    fn threshold_bounds_and_monotonicity() {
        let (corpus, vocab, index) = toy_corpus();
        let mut cfgm = small_model(vocab.len());
        cfgm.max_len = 6;
        let model = CoarseModel {
            params: ModelParams::init(cfgm, 9).unwrap(),
            best_dev_loss: 0.7,
            threshold: 0.5,
            history: vec![],
        };
        let cands = ["snow", "coke", "dog"];
        let scored = score_candidate_occurrences(&model, &corpus, &vocab, &cands, &index).unwrap();
        assert_eq!(scored.len(), 4);
        assert_eq!(keep_above(&scored, 1e-9).unwrap().kept.len(), 4);
        assert!(keep_above(&scored, 0.999_999_999).unwrap().kept.is_empty());
        assert!(keep_above(&scored, 0.0).is_err());
        assert!(keep_above(&scored, 1.0).is_err());
        let mut prev = usize::MAX;
        for t in [0.01, 0.3, 0.5, 0.5001, 0.7, 0.99] {
            let n = keep_above(&scored, t).unwrap().kept.len();
            assert!(n <= prev);
            prev = n;
        }
        let refined = filter_candidates(&model, &corpus, &vocab, &cands, &index, 1e-9).unwrap();
        assert_eq!(refined.keep_counts["snow"], 2);
        let samples = refined.samples(&corpus, &vocab).unwrap();
        assert!(samples
            .iter()
            .all(|s| s.tokens[s.target_pos()] == vocab.mask_id()));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refined.jsonl");
        refined.write_jsonl(&path).unwrap();
        assert_eq!(Refined::read_jsonl(&path).unwrap(), refined);
    }
}
