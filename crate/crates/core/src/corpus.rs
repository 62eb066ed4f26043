//! Text ingestion, tokenization, two-word phrase merging and the shared vocabulary.
//!
//! Text flows through two representations. A [`RawCorpus`] holds lowercased
//! token strings and is what ingestion, phrase merging and planting operate on.
//! Once a [`Vocabulary`] has been built, [`Vocabulary::encode_corpus`] produces
//! the id-based [`Corpus`] every model-facing module consumes.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub type TermId = u32;

/// Which part of the benchmark a sentence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Sentences carrying impromptu (hidden) euphemisms.
    Target,
    /// Sentences with common euphemisms or their benign homographs.
    Dedup,
    /// Innocuous text.
    White,
    Synthetic,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Split::Target),
            "dedup" => Ok(Split::Dedup),
            "white" => Ok(Split::White),
            "synthetic" => Ok(Split::Synthetic),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

/// Lowercases and splits on whitespace and punctuation.
///
/// Hyphens and underscores survive inside a word (`5-mapb`, `blue_kush`) but
/// are trimmed from word edges, so the output re-tokenizes to itself.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
        .map(|run| run.trim_matches(|c| c == '-' || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSentence {
    pub id: u64,
    pub tokens: Vec<String>,
    pub split: Split,
    pub raw: String,
}

/// Tokenized text before vocabulary construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCorpus {
    pub sentences: Vec<RawSentence>,
    /// Lines dropped because they were not valid UTF-8.
    pub skipped_lines: usize,
}

/// Corpus-file row: `{"id": int, "text": str, "split": ...}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: u64,
    pub text: String,
    pub split: Split,
}

impl RawCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    /// Appends `other`, renumbering its sentences after the current last id.
    pub fn append(&mut self, other: RawCorpus) {
        let first = self.sentences.last().map_or(0, |s| s.id + 1);
        for (id, mut s) in (first..).zip(other.sentences) {
            s.id = id;
            self.sentences.push(s);
        }
        self.skipped_lines += other.skipped_lines;
    }

    pub fn records(&self) -> impl Iterator<Item = CorpusRecord> + '_ {
        self.sentences.iter().map(|s| CorpusRecord {
            id: s.id,
            text: detokenize(&s.tokens),
            split: s.split,
        })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        io::write_jsonl(path, self.records())
    }

    /// Loads a corpus file. Ids must be strictly increasing.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let records: Vec<CorpusRecord> = io::read_jsonl(path)?;
        let mut sentences = Vec::with_capacity(records.len());
        for rec in records {
            if let Some(prev) = sentences.last().map(|s: &RawSentence| s.id) {
                if rec.id <= prev {
                    return Err(Error::InvalidInput(format!(
                        "{}: sentence ids must be strictly increasing ({} after {prev})",
                        path.display(),
                        rec.id
                    )));
                }
            }
            let tokens = tokenize(&rec.text);
            if tokens.is_empty() {
                continue;
            }
            sentences.push(RawSentence {
                id: rec.id,
                tokens,
                split: rec.split,
                raw: rec.text,
            });
        }
        Ok(RawCorpus {
            sentences,
            skipped_lines: 0,
        })
    }
}

/// One sentence per non-empty line. Lines that are not valid UTF-8 are
/// skipped and counted in [`RawCorpus::skipped_lines`].
pub fn ingest<R: BufRead>(mut source: R, split: Split) -> Result<RawCorpus> {
    let mut corpus = RawCorpus::default();
    let mut buf = Vec::new();
    let mut next_id = 0u64;
    loop {
        buf.clear();
        if source.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let line = match std::str::from_utf8(&buf) {
            Ok(line) => line,
            Err(_) => {
                corpus.skipped_lines += 1;
                continue;
            }
        };
        let tokens = tokenize(line);
        if tokens.is_empty() {
            continue;
        }
        corpus.sentences.push(RawSentence {
            id: next_id,
            tokens,
            split,
            raw: line.trim_end_matches(['\n', '\r']).to_owned(),
        });
        next_id += 1;
    }
    if corpus.skipped_lines > 0 {
        log::warn!(
            "skipped {} line(s) with invalid UTF-8",
            corpus.skipped_lines
        );
    }
    Ok(corpus)
}

/// Collocation score of an adjacent pair:
/// `(count(ab) - delta) * n_tokens / (count(a) * count(b))`.
pub fn phrase_score(pair_count: u64, count_a: u64, count_b: u64, n_tokens: u64, delta: f64) -> f64 {
    if count_a == 0 || count_b == 0 {
        return f64::NEG_INFINITY;
    }
    (pair_count as f64 - delta) * n_tokens as f64 / (count_a as f64 * count_b as f64)
}

/// One left-to-right merging pass joining adjacent pairs scoring above
/// `threshold` into `a_b`. Tokens that are already phrases never merge again,
/// so only two-word phrases are produced.
pub fn merge_phrases(corpus: &RawCorpus, delta: f64, threshold: f64) -> RawCorpus {
    let mut unigrams: HashMap<&str, u64> = HashMap::new();
    let mut bigrams: HashMap<(&str, &str), u64> = HashMap::new();
    let mut n_tokens = 0u64;
    for s in &corpus.sentences {
        for (i, t) in s.tokens.iter().enumerate() {
            *unigrams.entry(t.as_str()).or_default() += 1;
            n_tokens += 1;
            if let Some(next) = s.tokens.get(i + 1) {
                *bigrams.entry((t.as_str(), next.as_str())).or_default() += 1;
            }
        }
    }
    let mergeable = |a: &str, b: &str| -> bool {
        if a.contains('_') || b.contains('_') {
            return false;
        }
        let pair = bigrams.get(&(a, b)).copied().unwrap_or(0);
        if pair == 0 {
            return false;
        }
        phrase_score(pair, unigrams[a], unigrams[b], n_tokens, delta) > threshold
    };

    let sentences = corpus
        .sentences
        .iter()
        .map(|s| {
            let mut tokens = Vec::with_capacity(s.tokens.len());
            let mut i = 0;
            while i < s.tokens.len() {
                let a = &s.tokens[i];
                match s.tokens.get(i + 1) {
                    Some(b) if mergeable(a, b) => {
                        tokens.push(format!("{a}_{b}"));
                        i += 2;
                    }
                    _ => {
                        tokens.push(a.clone());
                        i += 1;
                    }
                }
            }
            RawSentence {
                id: s.id,
                tokens,
                split: s.split,
                raw: s.raw.clone(),
            }
        })
        .collect();
    RawCorpus {
        sentences,
        skipped_lines: corpus.skipped_lines,
    }
}

/// Term/id bijection with corpus frequencies. Regular terms take ids
/// `0..n_terms`; the four special tokens are appended after them.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    counts: Vec<u64>,
    lookup: HashMap<String, TermId>,
    min_count: u64,
    unknown_count: u64,
}

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const MASK_TOKEN: &str = "<mask>";
pub const CLS_TOKEN: &str = "<cls>";
const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN, CLS_TOKEN];

#[derive(Serialize, Deserialize)]
struct VocabHeader {
    min_count: u64,
    n_terms: usize,
    unknown_count: u64,
    pad: TermId,
    unk: TermId,
    mask: TermId,
    cls: TermId,
}

#[derive(Serialize, Deserialize)]
struct VocabRow {
    term: String,
    id: TermId,
    count: u64,
}

/// Terms seen fewer than `min_count` times map to the unknown id. Ids follow
/// `(frequency desc, term asc)`.
pub fn build_vocab(corpus: &RawCorpus, min_count: u64) -> Vocabulary {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in &corpus.sentences {
        for t in &s.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = Vec::new();
    let mut unknown_count = 0;
    for (term, count) in counts {
        if count >= min_count.max(1) {
            kept.push((term, count));
        } else {
            unknown_count += count;
        }
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_parts(
        kept.into_iter().map(|(t, c)| (t.to_owned(), c)).collect(),
        min_count,
        unknown_count,
    )
}

impl Vocabulary {
    fn from_parts(entries: Vec<(String, u64)>, min_count: u64, unknown_count: u64) -> Self {
        let mut terms = Vec::with_capacity(entries.len() + SPECIALS.len());
        let mut counts = Vec::with_capacity(entries.len() + SPECIALS.len());
        for (t, c) in entries {
            terms.push(t);
            counts.push(c);
        }
        for special in SPECIALS {
            terms.push(special.to_owned());
            counts.push(0);
        }
        let lookup = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TermId))
            .collect();
        Vocabulary {
            terms,
            counts,
            lookup,
            min_count,
            unknown_count,
        }
    }

    /// Number of regular (non-special) terms.
    pub fn n_terms(&self) -> usize {
        self.terms.len() - SPECIALS.len()
    }

    /// Total id space, specials included.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_terms() == 0
    }

    pub fn pad_id(&self) -> TermId {
        self.n_terms() as TermId
    }

    pub fn unk_id(&self) -> TermId {
        self.n_terms() as TermId + 1
    }

    pub fn mask_id(&self) -> TermId {
        self.n_terms() as TermId + 2
    }

    pub fn cls_id(&self) -> TermId {
        self.n_terms() as TermId + 3
    }

    pub fn is_special(&self, id: TermId) -> bool {
        id as usize >= self.n_terms()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Id of a regular term; specials are not looked up by name.
    pub fn id(&self, term: &str) -> Option<TermId> {
        self.lookup
            .get(term)
            .copied()
            .filter(|&id| !self.is_special(id))
    }

    pub fn require(&self, term: &str) -> Result<TermId> {
        self.id(term)
            .ok_or_else(|| Error::UnknownTerm(term.to_owned()))
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id as usize]
    }

    pub fn count(&self, id: TermId) -> u64 {
        if id == self.unk_id() {
            self.unknown_count
        } else {
            self.counts[id as usize]
        }
    }

    /// Regular terms in id order.
    pub fn terms(&self) -> &[String] {
        &self.terms[..self.n_terms()]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TermId> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or_else(|| self.unk_id()))
            .collect()
    }

    pub fn decode(&self, ids: &[TermId]) -> Vec<String> {
        ids.iter().map(|&id| self.term(id).to_owned()).collect()
    }

    /// Stable fingerprint of the term/id assignment, used to tie corpora to
    /// the vocabulary that encoded them.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.terms.hash(&mut h);
        h.finish()
    }

    pub fn encode_corpus(&self, raw: &RawCorpus) -> Corpus {
        let sentences = raw
            .sentences
            .iter()
            .map(|s| Sentence {
                id: s.id,
                tokens: self.encode(&s.tokens),
                split: s.split,
                raw: s.raw.clone(),
            })
            .collect();
        Corpus {
            sentences,
            vocab_ref: self.fingerprint(),
        }
    }

    /// Writes the header line followed by one `{"term","id","count"}` row per
    /// regular term.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = io::create(path)?;
        let header = VocabHeader {
            min_count: self.min_count,
            n_terms: self.n_terms(),
            unknown_count: self.unknown_count,
            pad: self.pad_id(),
            unk: self.unk_id(),
            mask: self.mask_id(),
            cls: self.cls_id(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (id, term) in self.terms().iter().enumerate() {
            let row = VocabRow {
                term: term.clone(),
                id: id as TermId,
                count: self.counts[id],
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let reader = io::open(path)?;
        let mut lines = reader.lines();
        let header: VocabHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => {
                return Err(Error::InvalidInput(format!(
                    "{}: empty vocabulary file",
                    path.display()
                )))
            }
        };
        let mut entries = Vec::with_capacity(header.n_terms);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: VocabRow = serde_json::from_str(&line)?;
            if row.id as usize != entries.len() {
                return Err(Error::InvalidInput(format!(
                    "{}: vocabulary ids must be dense and ordered (got {})",
                    path.display(),
                    row.id
                )));
            }
            entries.push((row.term, row.count));
        }
        let vocab = Vocabulary::from_parts(entries, header.min_count, header.unknown_count);
        if vocab.n_terms() != header.n_terms
            || vocab.mask_id() != header.mask
            || vocab.pad_id() != header.pad
            || vocab.unk_id() != header.unk
            || vocab.cls_id() != header.cls
        {
            return Err(Error::InvalidInput(format!(
                "{}: header does not match vocabulary rows",
                path.display()
            )));
        }
        Ok(vocab)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: u64,
    pub tokens: Vec<TermId>,
    pub split: Split,
    pub raw: String,
}

/// Id-encoded corpus; sentence ids are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub vocab_ref: u64,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn get(&self, id: u64) -> Option<&Sentence> {
        self.sentences
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.sentences[i])
    }

    pub fn max_len(&self) -> usize {
        self.sentences
            .iter()
            .map(|s| s.tokens.len())
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(lines: &[&str]) -> RawCorpus {
        ingest(lines.join("\n").as_bytes(), Split::Synthetic).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Blueberry Kush!"), ["blueberry", "kush"]);
        assert_eq!(tokenize("5-mapb is good"), ["5-mapb", "is", "good"]);
        assert_eq!(tokenize("a,b;c"), ["a", "b", "c"]);
        assert_eq!(tokenize("-- edge- -hyphens --"), ["edge", "hyphens"]);
        assert_eq!(tokenize("mescaline_crystals"), ["mescaline_crystals"]);
    }

    #[test]
    fn ingest_single_line() {
        let c = ingest("I bought Coke today\n".as_bytes(), Split::Target).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].tokens.len(), 4);
        assert_eq!(c.sentences[0].split, Split::Target);
    }

    #[test]
    fn ingest_empty_stream() {
        let c = ingest("".as_bytes(), Split::White).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn ingest_skips_blank_lines() {
        let c = ingest("first line\n\nthird line\n".as_bytes(), Split::White).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[1].id, 1);
    }

    #[test]
    fn ingest_counts_bad_utf8() {
        let mut bytes = b"good line\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe, b'\n']);
        bytes.extend_from_slice(b"another\n");
        let c = ingest(&bytes[..], Split::White).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.skipped_lines, 1);
    }

    #[test]
    fn unseen_pair_never_merges() {
        let c = raw(&["a b", "c d"]);
        let merged = merge_phrases(&c, 0.0, f64::NEG_INFINITY);
        // every seen pair merges at -inf threshold, but "b c" never occurs
        assert_eq!(merged.sentences[0].tokens, ["a_b"]);
        assert_eq!(merged.sentences[1].tokens, ["c_d"]);
        assert!(phrase_score(0, 3, 3, 10, 5.0) < 0.0);
    }

    #[test]
    fn large_delta_is_identity() {
        let c = raw(&["a b a b", "a b c"]);
        assert_eq!(merge_phrases(&c, 100.0, 0.0), c);
    }

    #[test]
    fn collocation_merges_at_default_threshold() {
        // 20 sentences of 11 tokens = 220 tokens. "mescaline crystals" appears
        // in 10 of them and neither word appears elsewhere:
        // score = (10 - 5) * 220 / (10 * 10) = 11 > 10.
        let mut lines = Vec::new();
        for i in 0..10 {
            lines.push(format!(
                "p{i} q{i} mescaline crystals r{i} s{i} t{i} u{i} v{i} w{i} x{i}"
            ));
        }
        for i in 0..10 {
            let words: Vec<String> = (0..11).map(|j| format!("n{i}m{j}")).collect();
            lines.push(words.join(" "));
        }
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let c = raw(&refs);
        assert_eq!(c.token_count(), 220);
        let merged = merge_phrases(&c, 5.0, 10.0);
        assert_eq!(merged.sentences[0].tokens[2], "mescaline_crystals");
        assert_eq!(merged.sentences[0].tokens.len(), 10);
        assert_eq!(merged.sentences[10], c.sentences[10]);
        // with 10 fewer tokens the score drops to exactly 10 and nothing merges
        assert_eq!(phrase_score(10, 10, 10, 200, 5.0), 10.0);
    }

    #[test]
    fn merging_never_builds_three_word_phrases() {
        let c = raw(&["a b c"; 30]);
        let once = merge_phrases(&c, 0.0, 0.0);
        assert_eq!(once.sentences[0].tokens, ["a_b", "c"]);
        let twice = merge_phrases(&once, 0.0, 0.0);
        assert_eq!(twice.sentences[0].tokens, ["a_b", "c"]);
    }

    #[test]
    fn vocab_min_count_boundary() {
        let c = raw(&["rare common common common common common", "rare rare rare"]);
        let v = build_vocab(&c, 5);
        assert_eq!(v.id("rare"), None);
        assert!(v.id("common").is_some());
        assert_eq!(v.encode(&["rare"]), [v.unk_id()]);
        assert_eq!(v.count(v.unk_id()), 4);

        let all = build_vocab(&c, 1);
        assert_eq!(all.n_terms(), 2);
    }

    #[test]
    fn vocab_hand_tally() {
        // 100 tokens: "a" x40, "b" x30, "c" x20, "d" x5, "e" x3, "f" x1, "g" x1
        let mut tokens = Vec::new();
        for (t, n) in [
            ("a", 40),
            ("b", 30),
            ("c", 20),
            ("d", 5),
            ("e", 3),
            ("f", 1),
            ("g", 1),
        ] {
            tokens.extend(std::iter::repeat_n(t, n));
        }
        assert_eq!(tokens.len(), 100);
        let lines: Vec<String> = tokens.chunks(10).map(|c| c.join(" ")).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let v = build_vocab(&raw(&refs), 2);
        assert_eq!(v.n_terms(), 5);
        assert_eq!(v.terms(), ["a", "b", "c", "d", "e"]);
        let specials = [v.pad_id(), v.unk_id(), v.mask_id(), v.cls_id()];
        assert!(specials.iter().all(|&id| v.is_special(id)));
        assert_eq!(v.len(), 9);
    }

    #[test]
    fn vocab_ties_break_by_term() {
        let v = build_vocab(&raw(&["zeta alpha mid mid"]), 1);
        assert_eq!(v.terms(), ["mid", "alpha", "zeta"]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.jsonl");
        let v = build_vocab(&raw(&["a b b c c c", "d"]), 1);
        v.write_jsonl(&path).unwrap();
        assert_eq!(Vocabulary::read_jsonl(&path).unwrap(), v);
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let c = merge_phrases(&raw(&["Blue Kush, again!", "x y"]), 0.0, f64::NEG_INFINITY);
        c.write_jsonl(&path).unwrap();
        let back = RawCorpus::read_jsonl(&path).unwrap();
        assert_eq!(back.sentences[0].tokens, c.sentences[0].tokens);
        assert_eq!(back.sentences[1].id, 1);
    }

    #[test]
    fn corpus_file_rejects_unordered_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            "{\"id\":3,\"text\":\"a\",\"split\":\"white\"}\n{\"id\":1,\"text\":\"b\",\"split\":\"white\"}\n",
        )
        .unwrap();
        assert!(RawCorpus::read_jsonl(&path).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_round_trips(text in "\\PC{0,60}") {
            let tokens = tokenize(&text);
            prop_assert_eq!(tokenize(&detokenize(&tokens)), tokens);
        }

        #[test]
        fn merge_shrinks_by_merge_count(
            sents in prop::collection::vec(prop::collection::vec(0u8..5, 1..12), 1..20),
            delta in 0.0f64..3.0,
            threshold in -5.0f64..5.0,
        ) {
            let lines: Vec<String> = sents
                .iter()
                .map(|s| s.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
            let c = raw(&refs);
            let merged = merge_phrases(&c, delta, threshold);
            for (a, b) in c.sentences.iter().zip(&merged.sentences) {
                let merges = b.tokens.iter().filter(|t| t.contains('_')).count();
                prop_assert_eq!(b.tokens.len(), a.tokens.len() - merges);
                let flat: Vec<String> = b.tokens.iter().flat_map(|t| t.split('_').map(str::to_owned)).collect();
                prop_assert_eq!(&flat, &a.tokens);
            }
        }

        #[test]
        fn vocab_is_deterministic(words in prop::collection::vec("[a-e]{1,2}", 1..80)) {
            let line = words.join(" ");
            let c = raw(&[line.as_str()]);
            prop_assert_eq!(build_vocab(&c, 2), build_vocab(&c.clone(), 2));
        }
    }
}
