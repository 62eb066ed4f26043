//! Derived datasets: the planted synthetic benchmark, the coarse binary
//! classification set and the fine-grained masked training corpus.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    detokenize, Corpus, RawCorpus, Split, TermId, Vocabulary, MASK_TOKEN, UNK_TOKEN,
};
use crate::embed::{mean_vector, nearest, EmbeddingMatrix, Query};
use crate::error::{Error, Result};
use crate::io;

/// A sentence with some positions replaced by the mask id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskedSample {
    pub sid: u64,
    pub tokens: Vec<TermId>,
    /// Ascending.
    pub mask_positions: Vec<usize>,
    /// Original ids at `mask_positions`, same order.
    pub targets: Vec<TermId>,
    pub label: Option<u8>,
}

impl MaskedSample {
    /// Masks a single position of `tokens`.
    pub fn single(
        sid: u64,
        tokens: &[TermId],
        pos: usize,
        mask_id: TermId,
        label: Option<u8>,
    ) -> Self {
        let mut masked = tokens.to_vec();
        let target = std::mem::replace(&mut masked[pos], mask_id);
        MaskedSample {
            sid,
            tokens: masked,
            mask_positions: vec![pos],
            targets: vec![target],
            label,
        }
    }

    /// The unmasked sentence.
    pub fn restore(&self) -> Vec<TermId> {
        let mut tokens = self.tokens.clone();
        for (&p, &t) in self.mask_positions.iter().zip(&self.targets) {
            tokens[p] = t;
        }
        tokens
    }

    pub fn check(&self, mask_id: TermId) -> Result<()> {
        let ok = self.mask_positions.len() == self.targets.len()
            && self.mask_positions.windows(2).all(|w| w[0] < w[1])
            && self
                .mask_positions
                .iter()
                .all(|&p| p < self.tokens.len() && self.tokens[p] == mask_id);
        if ok {
            Ok(())
        } else {
            Err(Error::Invariant(format!(
                "malformed masked sample for sentence {}",
                self.sid
            )))
        }
    }

    /// First masked position; the MLM target for single-target samples.
    pub fn target_pos(&self) -> usize {
        self.mask_positions[0]
    }

    pub fn target(&self) -> TermId {
        self.targets[0]
    }
}

/// Masked-sample file row: the corpus envelope plus masking fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskedRecord {
    pub id: u64,
    pub text: String,
    pub split: Split,
    pub mask_positions: Vec<usize>,
    pub targets: Vec<String>,
    pub label: Option<u8>,
}

fn decode_token(vocab: &Vocabulary, token: &str) -> TermId {
    match token {
        MASK_TOKEN => vocab.mask_id(),
        _ => vocab.id(token).unwrap_or_else(|| vocab.unk_id()),
    }
}

pub fn write_samples(
    path: &Path,
    samples: &[MaskedSample],
    corpus: &Corpus,
    vocab: &Vocabulary,
) -> Result<()> {
    let rows = samples
        .iter()
        .map(|s| {
            let split = corpus.get(s.sid).map(|c| c.split).ok_or_else(|| {
                Error::Invariant(format!("sample refers to missing sentence {}", s.sid))
            })?;
            Ok(MaskedRecord {
                id: s.sid,
                text: detokenize(&vocab.decode(&s.tokens)),
                split,
                mask_positions: s.mask_positions.clone(),
                targets: vocab.decode(&s.targets),
                label: s.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_jsonl(path, rows)
}

pub fn read_samples(path: &Path, vocab: &Vocabulary) -> Result<Vec<MaskedSample>> {
    let rows: Vec<MaskedRecord> = io::read_jsonl(path)?;
    rows.into_iter()
        .map(|r| {
            let sample = MaskedSample {
                sid: r.id,
                tokens: r
                    .text
                    .split_whitespace()
                    .map(|t| decode_token(vocab, t))
                    .collect(),
                mask_positions: r.mask_positions,
                targets: r.targets.iter().map(|t| decode_token(vocab, t)).collect(),
                label: r.label,
            };
            sample.check(vocab.mask_id())?;
            Ok(sample)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTerm {
    pub seed: String,
    /// `(sentence id, position)` of every planted occurrence.
    pub sites: Vec<(u64, u32)>,
}

/// Ground truth for planted impromptu terms. Used only for evaluation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldLabels {
    pub terms: BTreeMap<String, GoldTerm>,
}

#[derive(Serialize, Deserialize)]
struct GoldRecord {
    term: String,
    seed: String,
    sites: Vec<(u64, u32)>,
}

impl GoldLabels {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn count(&self, term: &str) -> usize {
        self.terms.get(term).map_or(0, |g| g.sites.len())
    }

    pub fn total_sites(&self) -> usize {
        self.terms.values().map(|g| g.sites.len()).sum()
    }

    pub fn site_set(&self) -> HashSet<(u64, u32)> {
        self.terms
            .values()
            .flat_map(|g| g.sites.iter().copied())
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        io::write_jsonl(
            path,
            self.terms.iter().map(|(term, g)| GoldRecord {
                term: term.clone(),
                seed: g.seed.clone(),
                sites: g.sites.clone(),
            }),
        )
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let rows: Vec<GoldRecord> = io::read_jsonl(path)?;
        Ok(GoldLabels {
            terms: rows
                .into_iter()
                .map(|r| {
                    (
                        r.term,
                        GoldTerm {
                            seed: r.seed,
                            sites: r.sites,
                        },
                    )
                })
                .collect(),
        })
    }

    /// Re-resolves sites against `corpus` by looking the planted term up in
    /// each recorded sentence; positions shift when phrases are merged after
    /// planting. Fails if a planted occurrence has disappeared.
    pub fn realign(&self, corpus: &Corpus, vocab: &Vocabulary) -> Result<GoldLabels> {
        let mut terms = BTreeMap::new();
        for (term, g) in &self.terms {
            let id = vocab.id(term).ok_or_else(|| {
                Error::Invariant(format!("planted term `{term}` is not in the vocabulary"))
            })?;
            let sids: BTreeSet<u64> = g.sites.iter().map(|s| s.0).collect();
            let mut sites = Vec::new();
            for sid in sids {
                let sentence = corpus.get(sid).ok_or_else(|| {
                    Error::Invariant(format!("gold sentence {sid} missing from corpus"))
                })?;
                sites.extend(
                    sentence
                        .tokens
                        .iter()
                        .enumerate()
                        .filter(|(_, &t)| t == id)
                        .map(|(p, _)| (sid, p as u32)),
                );
            }
            if sites.len() != g.sites.len() {
                return Err(Error::Invariant(format!(
                    "planted term `{term}` has {} sites, expected {}",
                    sites.len(),
                    g.sites.len()
                )));
            }
            terms.insert(
                term.clone(),
                GoldTerm {
                    seed: g.seed.clone(),
                    sites,
                },
            );
        }
        Ok(GoldLabels { terms })
    }
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "x", "sh", "r", "k"];

fn mint_term<R: Rng>(rng: &mut R, taken: &HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut word = String::new();
        for _ in 0..syllables {
            word.push_str(ONSETS.choose(rng).unwrap());
            word.push_str(VOWELS.choose(rng).unwrap());
        }
        word.push_str(CODAS.choose(rng).unwrap());
        if !taken.contains(&word) {
            return word;
        }
    }
}

/// Mints `n_terms_per_seed` novel terms per seed and substitutes each into
/// `occ_per_term` distinct sentences that contained the seed. Planted
/// sentences move to the target split; other seed occurrences stay untouched.
pub fn plant_impromptu<R: Rng>(
    corpus: &RawCorpus,
    seeds: &[String],
    n_terms_per_seed: usize,
    occ_per_term: usize,
    rng: &mut R,
) -> Result<(RawCorpus, GoldLabels)> {
    let mut out = corpus.clone();
    let mut gold = GoldLabels::default();
    if n_terms_per_seed == 0 || occ_per_term == 0 {
        return Ok((out, gold));
    }
    let mut taken: HashSet<String> = corpus
        .sentences
        .iter()
        .flat_map(|s| s.tokens.iter().cloned())
        .collect();
    taken.extend(seeds.iter().cloned());
    let mut used: HashSet<usize> = HashSet::new();
    for seed in seeds {
        let need = n_terms_per_seed * occ_per_term;
        let mut hosts: Vec<(usize, usize)> = out
            .sentences
            .iter()
            .enumerate()
            .filter(|(i, _)| !used.contains(i))
            .filter_map(|(i, s)| s.tokens.iter().position(|t| t == seed).map(|p| (i, p)))
            .collect();
        if hosts.len() < need {
            return Err(Error::Insufficient(format!(
                "seed `{seed}` occurs in {} available sentences, planting needs {need}",
                hosts.len()
            )));
        }
        hosts.shuffle(rng);
        hosts.truncate(need);
        for chunk in hosts.chunks(occ_per_term) {
            let term = mint_term(rng, &taken);
            taken.insert(term.clone());
            let mut sites = Vec::with_capacity(occ_per_term);
            for &(i, p) in chunk {
                let s = &mut out.sentences[i];
                s.tokens[p] = term.clone();
                s.raw = detokenize(&s.tokens);
                s.split = Split::Target;
                used.insert(i);
                sites.push((s.id, p as u32));
            }
            sites.sort_unstable();
            gold.terms.insert(
                term,
                GoldTerm {
                    seed: seed.clone(),
                    sites,
                },
            );
        }
    }
    Ok((out, gold))
}

/// Union of each seed's `top_n` nearest terms.
pub fn coarse_candidates(
    matrix: &EmbeddingMatrix,
    seeds: &[String],
    top_n: usize,
) -> Result<BTreeSet<String>> {
    let none = HashSet::new();
    let mut out = BTreeSet::new();
    for seed in seeds {
        for (t, _) in nearest(matrix, Query::Term(seed), top_n, &none)? {
            out.insert(t);
        }
    }
    Ok(out)
}

/// Candidates for the fine stage: the `top_n` terms closest to the mean seed vector.
pub fn fine_candidates(
    matrix: &EmbeddingMatrix,
    seeds: &[String],
    top_n: usize,
) -> Result<Vec<String>> {
    let centroid = mean_vector(matrix, seeds)?;
    Ok(
        nearest(matrix, Query::Vector(&centroid), top_n, &HashSet::new())?
            .into_iter()
            .map(|r| r.0)
            .collect(),
    )
}

fn candidate_ids(
    vocab: &Vocabulary,
    terms: impl IntoIterator<Item = impl AsRef<str>>,
) -> Result<BTreeSet<TermId>> {
    terms
        .into_iter()
        .map(|t| vocab.require(t.as_ref()))
        .collect()
}

/// Balanced binary set: every candidate occurrence masked (label 1) against
/// an equal number of distinct candidate-free sentences with one random
/// position masked (label 0). Shuffled, then split 80/20 into train/dev.
pub fn build_coarse_dataset<R: Rng>(
    corpus: &Corpus,
    vocab: &Vocabulary,
    matrix: &EmbeddingMatrix,
    seeds: &[String],
    top_n: usize,
    rng: &mut R,
) -> Result<(Vec<MaskedSample>, Vec<MaskedSample>)> {
    if top_n == 0 {
        return Err(Error::InvalidInput("top_n must be at least 1".into()));
    }
    let candidates = candidate_ids(vocab, coarse_candidates(matrix, seeds, top_n)?)?;
    let mut samples = Vec::new();
    let mut negatives_pool = Vec::new();
    for s in &corpus.sentences {
        let before = samples.len();
        for (pos, t) in s.tokens.iter().enumerate() {
            if candidates.contains(t) {
                samples.push(MaskedSample::single(
                    s.id,
                    &s.tokens,
                    pos,
                    vocab.mask_id(),
                    Some(1),
                ));
            }
        }
        if samples.len() == before {
            negatives_pool.push(s);
        }
    }
    let n_pos = samples.len();
    if negatives_pool.len() < n_pos {
        return Err(Error::Insufficient(format!(
            "{n_pos} positive samples but only {} candidate-free sentences for negatives",
            negatives_pool.len()
        )));
    }
    for s in negatives_pool.choose_multiple(rng, n_pos) {
        let pos = rng.random_range(0..s.tokens.len());
        samples.push(MaskedSample::single(
            s.id,
            &s.tokens,
            pos,
            vocab.mask_id(),
            Some(0),
        ));
    }
    samples.shuffle(rng);
    let n_train = samples.len() * 4 / 5;
    let dev = samples.split_off(n_train);
    Ok((samples, dev))
}

/// One single-target sample per occurrence of a candidate term, in corpus order.
pub fn build_fine_corpus<S: AsRef<str>>(
    corpus: &Corpus,
    vocab: &Vocabulary,
    candidates: &[S],
) -> Result<Vec<MaskedSample>> {
    let ids = candidate_ids(vocab, candidates)?;
    Ok(corpus
        .sentences
        .iter()
        .flat_map(|s| {
            s.tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| ids.contains(t))
                .map(|(pos, _)| MaskedSample::single(s.id, &s.tokens, pos, vocab.mask_id(), None))
        })
        .collect())
}

/// Decodes a dumped token, mapping the unknown marker back to its id.
pub fn token_id(vocab: &Vocabulary, token: &str) -> TermId {
    if token == UNK_TOKEN {
        vocab.unk_id()
    } else {
        decode_token(vocab, token)
    }
}
