//! Skip-gram word embeddings trained with negative sampling, plus the cosine
//! queries used for candidate selection and seed expansion.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TermId, Vocabulary};
use crate::error::{Error, Result};
use crate::io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Maximum context distance on each side; the effective window is drawn
    /// uniformly from `1..=window` per center word.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f32,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            subsample: 1e-3,
            seed: 42,
        }
    }
}

/// Input (center-word) vectors for every regular vocabulary term.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    terms: Vec<String>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    lookup: HashMap<String, TermId>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, terms: Vec<String>, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dim must be positive".into()));
        }
        if vectors.len() != dim * terms.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} floats for {} terms of dim {dim}, got {}",
                dim * terms.len(),
                terms.len(),
                vectors.len()
            )));
        }
        let norms = vectors
            .chunks(dim)
            .map(|v| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt())
            .collect();
        let lookup = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TermId))
            .collect();
        Ok(Self {
            dim,
            terms,
            vectors,
            norms,
            lookup,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn id(&self, term: &str) -> Option<TermId> {
        self.lookup.get(term).copied()
    }

    pub fn vector(&self, id: TermId) -> &[f32] {
        let start = id as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    pub fn vector_of(&self, term: &str) -> Result<&[f32]> {
        self.id(term)
            .map(|id| self.vector(id))
            .ok_or_else(|| Error::UnknownTerm(term.to_owned()))
    }

    pub fn norm(&self, id: TermId) -> f64 {
        self.norms[id as usize]
    }

    /// Writes `dim N vocab V` followed by one `term f1 .. fN` line per term.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = io::create(path)?;
        writeln!(out, "dim {} vocab {}", self.dim, self.terms.len())?;
        for (i, term) in self.terms.iter().enumerate() {
            write!(out, "{term}")?;
            for x in self.vector(i as TermId) {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::InvalidInput(format!("{}: {msg}", path.display()));
        let mut lines = io::open(path)?.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty embedding file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (dim, n) = match fields.as_slice() {
            ["dim", d, "vocab", v] => (
                d.parse::<usize>()
                    .map_err(|e| bad(format!("bad dim: {e}")))?,
                v.parse::<usize>()
                    .map_err(|e| bad(format!("bad vocab: {e}")))?,
            ),
            _ => return Err(bad(format!("bad header `{header}`"))),
        };
        let mut terms = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for line in lines {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(term) = parts.next() else { continue };
            let before = vectors.len();
            for p in parts {
                vectors.push(
                    p.parse::<f32>()
                        .map_err(|e| bad(format!("bad float `{p}`: {e}")))?,
                );
            }
            if vectors.len() - before != dim {
                return Err(bad(format!(
                    "term `{term}` has {} components",
                    vectors.len() - before
                )));
            }
            terms.push(term.to_owned());
        }
        if terms.len() != n {
            return Err(bad(format!(
                "header promises {n} terms, found {}",
                terms.len()
            )));
        }
        Self::new(dim, terms, vectors)
    }
}

pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "cosine of vectors with different lengths ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

pub enum Query<'a> {
    Term(&'a str),
    Vector(&'a [f32]),
}

/// Top-`k` terms by cosine similarity, descending, ties by id ascending.
/// The query term (if any), excluded terms and zero vectors are skipped.
pub fn nearest(
    matrix: &EmbeddingMatrix,
    query: Query<'_>,
    k: usize,
    exclude: &HashSet<String>,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let (qvec, skip) = match query {
        Query::Term(term) => {
            let id = matrix
                .id(term)
                .ok_or_else(|| Error::UnknownTerm(term.to_owned()))?;
            (matrix.vector(id), Some(id))
        }
        Query::Vector(v) => (v, None),
    };
    if qvec.len() != matrix.dim() {
        return Err(Error::InvalidInput(format!(
            "query has dim {}, matrix has {}",
            qvec.len(),
            matrix.dim()
        )));
    }
    let qnorm = qvec
        .iter()
        .map(|&x| x as f64 * x as f64)
        .sum::<f64>()
        .sqrt();
    if qnorm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut scored: Vec<(f64, TermId)> = Vec::with_capacity(matrix.len());
    for id in 0..matrix.len() as TermId {
        if Some(id) == skip
            || matrix.norm(id) == 0.0
            || exclude.contains(&matrix.terms[id as usize])
        {
            continue;
        }
        let dot: f64 = matrix
            .vector(id)
            .iter()
            .zip(qvec)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        scored.push((dot / (qnorm * matrix.norm(id)), id));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(s, id)| (matrix.terms[id as usize].clone(), s))
        .collect())
}

pub fn mean_vector<S: AsRef<str>>(matrix: &EmbeddingMatrix, terms: &[S]) -> Result<Vec<f32>> {
    if terms.is_empty() {
        return Err(Error::InvalidInput("mean of an empty term list".into()));
    }
    let mut acc = vec![0.0f64; matrix.dim()];
    for t in terms {
        for (a, &x) in acc.iter_mut().zip(matrix.vector_of(t.as_ref())?) {
            *a += x as f64;
        }
    }
    let n = terms.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

fn sigmoid(x: f32) -> f32 {
    if x > 8.0 {
        1.0
    } else if x < -8.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Single-worker skip-gram trainer; bit-for-bit reproducible for a given seed.
pub fn train_embeddings(
    corpus: &Corpus,
    vocab: &Vocabulary,
    cfg: &SkipGramConfig,
) -> Result<EmbeddingMatrix> {
    if cfg.dim == 0 || cfg.window == 0 || cfg.negatives == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidInput(
            "dim, window, negatives and epochs must all be positive".into(),
        ));
    }
    let n = vocab.n_terms();
    let total_words: u64 = corpus
        .sentences
        .iter()
        .flat_map(|s| &s.tokens)
        .filter(|&&t| !vocab.is_special(t))
        .count() as u64;
    if n == 0 || total_words == 0 {
        return Err(Error::NothingToTrain);
    }
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut syn0: Vec<f32> = (0..n * dim)
        .map(|_| (rng.random::<f32>() - 0.5) / dim as f32)
        .collect();
    let mut syn1 = vec![0.0f32; n * dim];

    let weights: Vec<f64> = (0..n as TermId)
        .map(|id| (vocab.count(id).max(1) as f64).powf(0.75))
        .collect();
    let noise = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidInput(format!("negative sampling table: {e}")))?;

    let keep_prob: Vec<f32> = (0..n as TermId)
        .map(|id| {
            if cfg.subsample <= 0.0 {
                return 1.0;
            }
            let f = vocab.count(id) as f64;
            let t = cfg.subsample * total_words as f64;
            (((f / t).sqrt() + 1.0) * t / f).min(1.0) as f32
        })
        .collect();

    let budget = (cfg.epochs as u64 * total_words) as f32 + 1.0;
    let mut processed = 0u64;
    let mut grad = vec![0.0f32; dim];
    let mut kept: Vec<TermId> = Vec::new();
    for _ in 0..cfg.epochs {
        for sentence in &corpus.sentences {
            kept.clear();
            for &t in &sentence.tokens {
                if vocab.is_special(t) {
                    continue;
                }
                processed += 1;
                if rng.random::<f32>() < keep_prob[t as usize] {
                    kept.push(t);
                }
            }
            let lr = cfg.lr * (1.0 - processed as f32 / budget).max(1e-4);
            for (i, &center) in kept.iter().enumerate() {
                let b = rng.random_range(1..=cfg.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(kept.len() - 1);
                let c0 = center as usize * dim;
                for (j, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for d in 0..=cfg.negatives {
                        let (target, label) = if d == 0 {
                            (context, 1.0f32)
                        } else {
                            let s = noise.sample(&mut rng) as TermId;
                            if s == context {
                                continue;
                            }
                            (s, 0.0)
                        };
                        let t0 = target as usize * dim;
                        let dot: f32 = syn0[c0..c0 + dim]
                            .iter()
                            .zip(&syn1[t0..t0 + dim])
                            .map(|(a, b)| a * b)
                            .sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for k in 0..dim {
                            grad[k] += g * syn1[t0 + k];
                            syn1[t0 + k] += g * syn0[c0 + k];
                        }
                    }
                    for k in 0..dim {
                        syn0[c0 + k] += grad[k];
                    }
                }
            }
        }
    }
    EmbeddingMatrix::new(dim, vocab.terms().to_vec(), syn0)
}
