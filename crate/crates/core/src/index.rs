//! Term → (sentence, position) postings, seed expansion over the embedding
//! space, and lexicon-driven sentence retrieval/removal.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TermId, Vocabulary};
use crate::embed::{nearest, EmbeddingMatrix, Query};
use crate::error::{Error, Result};
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Posting {
    pub sid: u64,
    pub pos: u32,
}

/// Postings for every regular term, sorted by `(sid, pos)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    postings: Vec<Vec<Posting>>,
}

#[derive(Serialize, Deserialize)]
struct PostingRow {
    term: String,
    postings: Vec<(u64, u32)>,
}

pub fn build_inverted_index(corpus: &Corpus, vocab: &Vocabulary) -> InvertedIndex {
    let mut postings = vec![Vec::new(); vocab.n_terms()];
    for s in &corpus.sentences {
        for (pos, &t) in s.tokens.iter().enumerate() {
            if !vocab.is_special(t) {
                postings[t as usize].push(Posting {
                    sid: s.id,
                    pos: pos as u32,
                });
            }
        }
    }
    InvertedIndex { postings }
}

impl InvertedIndex {
    /// Empty for specials and out-of-range ids.
    pub fn postings(&self, term: TermId) -> &[Posting] {
        self.postings.get(term as usize).map_or(&[], Vec::as_slice)
    }

    pub fn postings_of(&self, vocab: &Vocabulary, term: &str) -> &[Posting] {
        vocab.id(term).map_or(&[], |id| self.postings(id))
    }

    pub fn total_postings(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn n_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn write_jsonl(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        io::write_jsonl(
            path,
            self.postings.iter().enumerate().map(|(id, p)| PostingRow {
                term: vocab.term(id as TermId).to_owned(),
                postings: p.iter().map(|p| (p.sid, p.pos)).collect(),
            }),
        )
    }

    pub fn read_jsonl(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let rows: Vec<PostingRow> = io::read_jsonl(path)?;
        let mut postings = vec![Vec::new(); vocab.n_terms()];
        for row in rows {
            let id = vocab.require(&row.term)?;
            let mut list: Vec<Posting> = row
                .postings
                .into_iter()
                .map(|(sid, pos)| Posting { sid, pos })
                .collect();
            list.sort_unstable();
            postings[id as usize] = list;
        }
        Ok(InvertedIndex { postings })
    }
}

/// Frontier expansion: round 1 queries the seed, round `r` queries every term
/// returned in round `r - 1`. Returns the union of all rounds minus the seed.
pub fn expand_seeds(
    matrix: &EmbeddingMatrix,
    seed: &str,
    k: usize,
    rounds: usize,
) -> Result<BTreeSet<String>> {
    if rounds == 0 {
        return Err(Error::InvalidInput("rounds must be at least 1".into()));
    }
    if matrix.id(seed).is_none() {
        return Err(Error::UnknownTerm(seed.to_owned()));
    }
    let none = HashSet::new();
    let mut found = BTreeSet::new();
    let mut frontier: BTreeSet<String> = [seed.to_owned()].into();
    for _ in 0..rounds {
        let mut next = BTreeSet::new();
        for term in &frontier {
            for (t, _) in nearest(matrix, Query::Term(term), k, &none)? {
                next.insert(t);
            }
        }
        found.extend(next.iter().cloned());
        frontier = next;
    }
    found.remove(seed);
    Ok(found)
}

pub fn lexicon_intersect<S: AsRef<str>>(
    expanded: &BTreeSet<String>,
    lexicon: &[S],
) -> BTreeSet<String> {
    lexicon
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| expanded.contains(*t))
        .map(str::to_owned)
        .collect()
}

pub fn postings_sentences(index: &InvertedIndex, terms: &[TermId]) -> BTreeSet<u64> {
    terms
        .iter()
        .flat_map(|&t| index.postings(t))
        .map(|p| p.sid)
        .collect()
}

/// Drops every sentence containing any of `terms`; surviving ids are kept.
pub fn remove_sentences(corpus: &Corpus, terms: &[TermId]) -> Corpus {
    let banned: HashSet<TermId> = terms.iter().copied().collect();
    Corpus {
        sentences: corpus
            .sentences
            .iter()
            .filter(|s| !s.tokens.iter().any(|t| banned.contains(t)))
            .cloned()
            .collect(),
        vocab_ref: corpus.vocab_ref,
    }
}
