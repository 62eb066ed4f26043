//! Balanced dev-set generation through a pluggable text generator.
//!
//! Positives are corpus sentences retrieved for a seed with the seed swapped
//! for a generated euphemism; negatives are harmless sentences, either
//! rewritten by an external service or drawn from the corpus' benign pool.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::Hasher;
use std::path::Path;
use std::time::Duration;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, TermId, Vocabulary, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::eval::DevItem;
use crate::index::InvertedIndex;
use crate::io;

/// Regeneration attempts per dev sample before giving up.
pub const MAX_ATTEMPTS: usize = 3;

pub type EuphemismMap = BTreeMap<String, Vec<String>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "euph")]
    Euphemistic,
    #[serde(rename = "benign")]
    Benign,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DevSample {
    pub text: Vec<String>,
    /// `(start, length)` of the masked span in `text`.
    pub mask_span: (usize, usize),
    pub label: Label,
    pub source_seed: String,
}

impl DevSample {
    fn span_tokens(&self) -> Option<&[String]> {
        let (start, len) = self.mask_span;
        (len > 0 && start + len <= self.text.len()).then(|| &self.text[start..start + len])
    }
}

#[derive(Serialize, Deserialize)]
struct DevRecord {
    text: String,
    mask_start: usize,
    mask_len: usize,
    label: Label,
    seed: String,
}

pub fn write_dev_set(path: &Path, samples: &[DevSample]) -> Result<()> {
    io::write_jsonl(
        path,
        samples.iter().map(|s| DevRecord {
            text: s.text.join(" "),
            mask_start: s.mask_span.0,
            mask_len: s.mask_span.1,
            label: s.label,
            seed: s.source_seed.clone(),
        }),
    )
}

/// Reads a dev-set file. Text is split on whitespace only, so the span
/// offsets stay valid.
pub fn read_dev_set(path: &Path) -> Result<Vec<DevSample>> {
    let rows: Vec<DevRecord> = io::read_jsonl(path)?;
    Ok(rows
        .into_iter()
        .map(|r| DevSample {
            text: r.text.split_whitespace().map(str::to_owned).collect(),
            mask_span: (r.mask_start, r.mask_len),
            label: r.label,
            source_seed: r.seed,
        })
        .collect())
}

/// Encodes dev samples for scoring, collapsing each span into one mask.
pub fn to_dev_items(samples: &[DevSample], vocab: &Vocabulary) -> Result<Vec<DevItem>> {
    samples
        .iter()
        .map(|s| {
            if s.span_tokens().is_none() {
                return Err(Error::InvalidInput(format!(
                    "dev sample `{}` has an invalid span",
                    s.text.join(" ")
                )));
            }
            let (start, len) = s.mask_span;
            let id = |t: &String| -> TermId {
                if t == UNK_TOKEN {
                    vocab.unk_id()
                } else {
                    vocab.id(t).unwrap_or(vocab.unk_id())
                }
            };
            let mut ids: Vec<TermId> = s.text[..start].iter().map(id).collect();
            ids.push(vocab.mask_id());
            ids.extend(s.text[start + len..].iter().map(id));
            Ok(DevItem {
                ids,
                mask_pos: start,
                label: s.label == Label::Euphemistic,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Service,
    File,
    Template,
}

pub trait GenerationProvider: Sync {
    fn kind(&self) -> ProviderKind;

    /// Up to `n` raw euphemism strings for `seed`; normalization and
    /// filtering happen in [`generate_euphemism_candidates`].
    fn euphemisms(&self, seed: &str, n: usize) -> Result<Vec<String>>;

    /// A harmless counterpart of `positive`. `None` lets the caller draw one
    /// from the corpus' benign pool instead.
    fn benign(&self, _positive: &DevSample, _avoid: &[String]) -> Result<Option<DevSample>> {
        Ok(None)
    }
}

fn numbered_item_splitter() -> Regex {
    Regex::new(r"(?:^|\s)\d+[.)]\s+").expect("valid regex")
}

/// Splits `"1. Coke 2. Blow 3. Nose candy"` (or one item per line) into items.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    numbered_item_splitter()
        .split(text)
        .map(|s| s.trim().trim_end_matches([',', ';']).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Euphemism lists read from a file with one `Seed: 1. term 2. term …` row
/// per seed (`|` or a tab also separate the seed from its list).
#[derive(Clone, Debug, Default)]
pub struct FileProvider {
    lists: BTreeMap<String, Vec<String>>,
}

impl FileProvider {
    pub fn open(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> Self {
        let mut lists = BTreeMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let Some((seed, rest)) = line.split_once([':', '|', '\t']) else {
                warn!("skipping euphemism row without a seed separator: `{line}`");
                continue;
            };
            let Some(seed) = io::normalize_term(seed) else {
                continue;
            };
            lists.insert(seed, parse_numbered_list(rest));
        }
        FileProvider { lists }
    }

    pub fn seeds(&self) -> impl Iterator<Item = &str> {
        self.lists.keys().map(String::as_str)
    }
}

impl GenerationProvider for FileProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::File
    }

    fn euphemisms(&self, seed: &str, n: usize) -> Result<Vec<String>> {
        let list = self.lists.get(seed).ok_or_else(|| Error::Provider {
            attempts: 1,
            message: format!("no euphemism list for seed `{seed}`"),
        })?;
        Ok(list.iter().take(n).cloned().collect())
    }
}

const TEMPLATE_FIRST: &[&str] = &[
    "white", "blue", "silver", "lucky", "happy", "midnight", "sugar", "golden", "crystal",
    "velvet", "thunder", "purple",
];
const TEMPLATE_SECOND: &[&str] = &[
    "dust", "lady", "dragon", "train", "rocket", "biscuit", "cloud", "magic", "ghost", "river",
    "feather", "spark",
];

/// Offline generator: two-word coinages drawn by a rng keyed on the seed.
#[derive(Clone, Debug)]
pub struct TemplateProvider {
    pub seed: u64,
}

impl GenerationProvider for TemplateProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Template
    }

    fn euphemisms(&self, seed: &str, n: usize) -> Result<Vec<String>> {
        let mut key = fnv::FnvHasher::default();
        key.write(seed.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key.finish());
        let mut pairs: Vec<(usize, usize)> = (0..TEMPLATE_FIRST.len())
            .flat_map(|a| (0..TEMPLATE_SECOND.len()).map(move |b| (a, b)))
            .collect();
        pairs.shuffle(&mut rng);
        Ok(pairs
            .into_iter()
            .take(n)
            .map(|(a, b)| format!("{} {}", TEMPLATE_FIRST[a], TEMPLATE_SECOND[b]))
            .collect())
    }
}

/// Client for a text-generation service speaking
/// `{"prompt": str, "n": int}` → `{"choices": [str]}`.
#[derive(Clone, Debug)]
pub struct ServiceProvider {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: usize,
}

pub const ENV_ENDPOINT: &str = "IMPROMPTU_LLM_ENDPOINT";
/// Names the environment variable that holds the API key.
pub const ENV_KEY_NAME: &str = "IMPROMPTU_LLM_KEY_VAR";
pub const ENV_TIMEOUT: &str = "IMPROMPTU_LLM_TIMEOUT_SECS";
const DEFAULT_KEY_VAR: &str = "IMPROMPTU_LLM_API_KEY";

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    n: usize,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<String>,
}

impl ServiceProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ServiceProvider {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            max_attempts: MAX_ATTEMPTS,
        }
    }

    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| Error::Provider {
            attempts: 0,
            message: format!("{ENV_ENDPOINT} is not set"),
        })?;
        let key_var = std::env::var(ENV_KEY_NAME).unwrap_or_else(|_| DEFAULT_KEY_VAR.to_string());
        let timeout = match std::env::var(ENV_TIMEOUT) {
            Ok(v) => v.parse::<u64>().map_err(|_| {
                Error::InvalidInput(format!("{ENV_TIMEOUT} must be whole seconds, got `{v}`"))
            })?,
            Err(_) => 30,
        };
        Ok(ServiceProvider {
            api_key: std::env::var(key_var).ok(),
            timeout: Duration::from_secs(timeout),
            ..Self::new(endpoint)
        })
    }

    /// Sends one prompt, retrying transport and decoding failures.
    pub fn complete(&self, prompt: &str, n: usize) -> Result<Vec<String>> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut last = String::new();
        for attempt in 1..=self.max_attempts.max(1) {
            let mut req = agent.post(&self.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let result = req
                .send_json(CompletionRequest { prompt, n })
                .and_then(|mut resp| resp.body_mut().read_json::<CompletionResponse>());
            match result {
                Ok(r) => return Ok(r.choices),
                Err(e) => {
                    warn!(
                        "generation request {attempt}/{} failed: {e}",
                        self.max_attempts
                    );
                    last = e.to_string();
                }
            }
        }
        Err(Error::Provider {
            attempts: self.max_attempts.max(1),
            message: last,
        })
    }
}

pub fn euphemism_prompt(seed: &str, n: usize) -> String {
    format!(
        "You help content moderators recognise coded drug language.\n\
         List {n} euphemisms or slang expressions that people use to refer to {seed}.\n\
         Answer on a single line as a numbered list: 1. term 2. term ..."
    )
}

pub fn benign_prompt(sentence: &str, avoid: &[String]) -> String {
    format!(
        "Rewrite the following sentence so that it is completely harmless and unrelated to drugs.\n\
         Do not use any of these words: {}.\n\
         Keep a similar length and wrap exactly one of the words you changed in square brackets.\n\
         Sentence: {sentence}",
        avoid.join(", ")
    )
}

/// Tokenizes service output, locating the `[bracketed]` span.
pub fn parse_marked(text: &str) -> Option<(Vec<String>, (usize, usize))> {
    let open = text.find('[')?;
    let close = open + text[open..].find(']')?;
    let before = crate::corpus::tokenize(&text[..open]);
    let inside = crate::corpus::tokenize(&text[open + 1..close]);
    let after = crate::corpus::tokenize(&text[close + 1..]);
    if inside.is_empty() {
        return None;
    }
    let span = (before.len(), inside.len());
    Some(([before, inside, after].concat(), span))
}

impl GenerationProvider for ServiceProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Service
    }

    fn euphemisms(&self, seed: &str, n: usize) -> Result<Vec<String>> {
        let seed_text = seed.replace('_', " ");
        let choices = self.complete(&euphemism_prompt(&seed_text, n), 1)?;
        Ok(choices
            .iter()
            .flat_map(|c| parse_numbered_list(c))
            .collect())
    }

    fn benign(&self, positive: &DevSample, avoid: &[String]) -> Result<Option<DevSample>> {
        let sentence = positive.text.join(" ").replace('_', " ");
        for choice in self.complete(&benign_prompt(&sentence, avoid), 1)? {
            match parse_marked(&choice) {
                Some((text, mask_span)) => {
                    return Ok(Some(DevSample {
                        text,
                        mask_span,
                        label: Label::Benign,
                        source_seed: positive.source_seed.clone(),
                    }))
                }
                None => warn!("skipping malformed benign rewrite: `{choice}`"),
            }
        }
        Ok(None)
    }
}

/// Up to `n_per_seed` normalized euphemisms per seed. Seeds, duplicates,
/// malformed items and any term in `gold` are dropped; at most
/// `max_in_flight` provider calls run at once.
pub fn generate_euphemism_candidates(
    provider: &dyn GenerationProvider,
    seeds: &[String],
    n_per_seed: usize,
    gold: &HashSet<String>,
    max_in_flight: usize,
) -> Result<EuphemismMap> {
    if n_per_seed == 0 {
        return Ok(EuphemismMap::new());
    }
    let seed_set: HashSet<&String> = seeds.iter().collect();
    let fetch = |seed: &String| -> Result<(String, Vec<String>)> {
        let mut out: Vec<String> = Vec::new();
        for raw in provider.euphemisms(seed, n_per_seed)? {
            let Some(term) = io::normalize_term(&raw) else {
                warn!("skipping malformed euphemism `{raw}` for `{seed}`");
                continue;
            };
            if gold.contains(&term) {
                info!("dropping `{term}`: it is a gold impromptu term");
            } else if !seed_set.contains(&term) && !out.contains(&term) {
                out.push(term);
            }
        }
        out.truncate(n_per_seed);
        Ok((seed.clone(), out))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Invariant(format!("cannot start provider workers: {e}")))?;
    let pairs: Vec<(String, Vec<String>)> =
        pool.install(|| seeds.par_iter().map(fetch).collect::<Result<_>>())?;
    Ok(pairs.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    EmptyText,
    SpanOutOfRange,
    MissingEuphemism,
    NegativeContainsEuphemism(String),
    Duplicate,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::EmptyText => f.write_str("empty text"),
            RejectReason::SpanOutOfRange => f.write_str("mask span outside the text"),
            RejectReason::MissingEuphemism => {
                f.write_str("positive does not contain a generated euphemism at its span")
            }
            RejectReason::NegativeContainsEuphemism(t) => write!(f, "negative contains `{t}`"),
            RejectReason::Duplicate => f.write_str("duplicate text"),
        }
    }
}

/// Lexical checks shared by generation and [`validate_dev_set`].
struct Validator<'a> {
    euphemisms: &'a EuphemismMap,
    /// Every euphemism and seed, as word sequences.
    forbidden: Vec<(String, Vec<String>)>,
}

impl<'a> Validator<'a> {
    fn new(euphemisms: &'a EuphemismMap) -> Self {
        let mut terms: BTreeSet<&String> = euphemisms.keys().collect();
        terms.extend(euphemisms.values().flatten());
        let forbidden = terms
            .into_iter()
            .map(|t| (t.clone(), t.split('_').map(str::to_owned).collect()))
            .collect();
        Validator {
            euphemisms,
            forbidden,
        }
    }

    fn check(&self, s: &DevSample) -> Option<RejectReason> {
        if s.text.is_empty() {
            return Some(RejectReason::EmptyText);
        }
        let Some(span) = s.span_tokens() else {
            return Some(RejectReason::SpanOutOfRange);
        };
        match s.label {
            Label::Euphemistic => {
                let term = span.join("_");
                let known = self
                    .euphemisms
                    .get(&s.source_seed)
                    .is_some_and(|l| l.contains(&term));
                (!known).then_some(RejectReason::MissingEuphemism)
            }
            Label::Benign => {
                let words: Vec<&str> = s.text.iter().flat_map(|t| t.split('_')).collect();
                self.forbidden
                    .iter()
                    .find(|(_, seq)| {
                        words
                            .windows(seq.len())
                            .any(|w| w.iter().zip(seq).all(|(a, b)| a == b))
                    })
                    .map(|(t, _)| RejectReason::NegativeContainsEuphemism(t.clone()))
            }
        }
    }
}

/// Splits `samples` into accepted ones and rejects with a reason. Negatives
/// may not contain any seed or generated euphemism; of two identical texts
/// the later one is rejected.
pub fn validate_dev_set(
    samples: &[DevSample],
    euphemisms: &EuphemismMap,
) -> (Vec<DevSample>, Vec<(DevSample, RejectReason)>) {
    let v = Validator::new(euphemisms);
    let verdicts: Vec<Option<RejectReason>> = samples.par_iter().map(|s| v.check(s)).collect();
    let mut seen = HashSet::new();
    let (mut accepted, mut rejected) = (Vec::new(), Vec::new());
    for (s, verdict) in samples.iter().zip(verdicts) {
        match verdict {
            Some(r) => rejected.push((s.clone(), r)),
            None if !seen.insert(s.text.clone()) => {
                rejected.push((s.clone(), RejectReason::Duplicate))
            }
            None => accepted.push(s.clone()),
        }
    }
    (accepted, rejected)
}

/// Corpus sentences usable as negatives: no seed or euphemism word anywhere
/// and no unknown tokens. White-split sentences are preferred when present.
struct BenignPool {
    sentences: Vec<Vec<String>>,
    used: HashSet<usize>,
}

impl BenignPool {
    fn new(corpus: &Corpus, vocab: &Vocabulary, euphemisms: &EuphemismMap) -> Self {
        let mut banned: HashSet<&str> = euphemisms.keys().map(String::as_str).collect();
        for t in euphemisms.keys().chain(euphemisms.values().flatten()) {
            banned.extend(t.split('_'));
        }
        let clean = |split: Option<Split>| -> Vec<Vec<String>> {
            corpus
                .sentences
                .iter()
                .filter(|s| split.is_none_or(|sp| s.split == sp))
                .map(|s| vocab.decode(&s.tokens))
                .filter(|toks| {
                    toks.iter()
                        .all(|t| t != UNK_TOKEN && t.split('_').all(|w| !banned.contains(w)))
                })
                .collect()
        };
        let white = clean(Some(Split::White));
        let sentences = if white.is_empty() { clean(None) } else { white };
        BenignPool {
            sentences,
            used: HashSet::new(),
        }
    }

    fn draw<R: Rng>(&mut self, seed: &str, rng: &mut R) -> Option<DevSample> {
        if self.used.len() >= self.sentences.len() {
            return None;
        }
        let i = loop {
            let i = rng.random_range(0..self.sentences.len());
            if self.used.insert(i) {
                break i;
            }
        };
        let text = self.sentences[i].clone();
        let pos = rng.random_range(0..text.len());
        Some(DevSample {
            text,
            mask_span: (pos, 1),
            label: Label::Benign,
            source_seed: seed.to_string(),
        })
    }
}

fn positive(tokens: &[String], seed: &str, euphemism: &str) -> Option<DevSample> {
    let pos = tokens.iter().position(|t| t == seed)?;
    let words: Vec<String> = euphemism.split('_').map(str::to_owned).collect();
    let span = (pos, words.len());
    let text = [&tokens[..pos], &words[..], &tokens[pos + 1..]].concat();
    Some(DevSample {
        text,
        mask_span: span,
        label: Label::Euphemistic,
        source_seed: seed.to_string(),
    })
}

/// Builds `per_seed` positives per seed (a retrieved sentence with the seed
/// replaced by one of its euphemisms) and one negative for each, validating
/// as it goes and regenerating rejects up to [`MAX_ATTEMPTS`] times.
pub fn build_dev_set<R: Rng>(
    provider: &dyn GenerationProvider,
    euphemisms: &EuphemismMap,
    corpus: &Corpus,
    vocab: &Vocabulary,
    index: &InvertedIndex,
    per_seed: usize,
    rng: &mut R,
) -> Result<Vec<DevSample>> {
    let validator = Validator::new(euphemisms);
    let mut pool = BenignPool::new(corpus, vocab, euphemisms);
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut out = Vec::new();
    let accept =
        |candidate: Option<DevSample>, seen: &mut HashSet<Vec<String>>| -> Option<DevSample> {
            let s = candidate?;
            match validator.check(&s) {
                None if seen.insert(s.text.clone()) => Some(s),
                None => {
                    warn!("regenerating duplicate dev sample");
                    None
                }
                Some(reason) => {
                    warn!("regenerating rejected dev sample: {reason}");
                    None
                }
            }
        };
    for (seed, terms) in euphemisms {
        if terms.is_empty() {
            return Err(Error::Insufficient(format!(
                "no euphemisms available for seed `{seed}`"
            )));
        }
        let id = vocab.id(seed).ok_or_else(|| {
            Error::Insufficient(format!("seed `{seed}` is not in the vocabulary"))
        })?;
        let sids: Vec<u64> = index
            .postings(id)
            .iter()
            .map(|p| p.sid)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if sids.len() < per_seed {
            return Err(Error::Insufficient(format!(
                "seed `{seed}` occurs in {} sentences, {per_seed} needed",
                sids.len()
            )));
        }
        let mut order = sids;
        order.shuffle(rng);
        let mut next_sentence = order.into_iter();
        for j in 0..per_seed {
            let mut pos = None;
            for attempt in 0..MAX_ATTEMPTS {
                let Some(sid) = next_sentence.next() else {
                    break;
                };
                let tokens = vocab.decode(&corpus.get(sid).expect("indexed sentence").tokens);
                let term = &terms[(j + attempt) % terms.len()];
                if let Some(s) = accept(positive(&tokens, seed, term), &mut seen) {
                    pos = Some(s);
                    break;
                }
            }
            let pos = pos.ok_or_else(|| Error::Provider {
                attempts: MAX_ATTEMPTS,
                message: format!("could not build a valid positive for seed `{seed}`"),
            })?;
            let mut neg = None;
            for _ in 0..MAX_ATTEMPTS {
                let candidate = match provider.benign(&pos, terms)? {
                    Some(s) => Some(s),
                    None => pool.draw(seed, rng),
                };
                if let Some(s) = accept(candidate, &mut seen) {
                    neg = Some(s);
                    break;
                }
            }
            let neg = neg.ok_or_else(|| Error::Provider {
                attempts: MAX_ATTEMPTS,
                message: format!("could not build a valid negative for seed `{seed}`"),
            })?;
            out.push(pos);
            out.push(neg);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, ingest};
    use crate::index::build_inverted_index;

    const COCAINE_ROW: &str =
        "Cocaine: 1. Coke 2. Blow 3. Snow 4. White 5. Powder 6. Yayo 7. Nose candy \
        8. Charlie 9. Flake 10. Dust 11. Toot 12. Line 13. Rail 14. Bump 15. Sniff 16. Skiing \
        17. Blizzard 18. Pearl 19. Sleigh ride 20. Big rush";

    #[test]
    fn parses_list_rows() {
        let p = FileProvider::parse(&format!(
            "# comment\n{COCAINE_ROW}\nHeroin | 1. Smack 2. Brown sugar\n"
        ));
        let coke = p.euphemisms("cocaine", 20).unwrap();
        assert_eq!(coke.len(), 20);
        for t in ["Coke", "Blow", "Snow", "Nose candy", "Sleigh ride"] {
            assert!(coke.contains(&t.to_string()), "{t}");
        }
        assert_eq!(
            p.euphemisms("heroin", 5).unwrap(),
            vec!["Smack", "Brown sugar"]
        );
        assert!(matches!(
            p.euphemisms("ketamine", 5),
            Err(Error::Provider { .. })
        ));
        assert_eq!(
            parse_numbered_list("1) a\n2) b c\n3. 7.5s 4. 10/325s"),
            vec!["a", "b c", "7.5s", "10/325s"]
        );
    }

    #[test]
    fn candidate_generation_filters() {
        let p = FileProvider::parse(&format!(
            "{COCAINE_ROW}\nheroin: 1. Smack 2. smack 3. heroin 4. !!! 5. Zorblat"
        ));
        let seeds = vec!["cocaine".to_string(), "heroin".to_string()];
        let gold: HashSet<String> = ["zorblat".to_string()].into();
        let m = generate_euphemism_candidates(&p, &seeds, 20, &gold, 2).unwrap();
        assert_eq!(m["cocaine"].len(), 20);
        assert!(m["cocaine"].contains(&"nose_candy".to_string()));
        assert_eq!(m["heroin"], vec!["smack"]);
        assert!(generate_euphemism_candidates(&p, &seeds, 0, &gold, 2)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn template_provider_is_deterministic() {
        let p = TemplateProvider { seed: 9 };
        let a = p.euphemisms("cocaine", 8).unwrap();
        assert_eq!(a, p.euphemisms("cocaine", 8).unwrap());
        assert_eq!(a.len(), 8);
        assert_ne!(a, p.euphemisms("heroin", 8).unwrap());
        assert_ne!(
            a,
            TemplateProvider { seed: 10 }
                .euphemisms("cocaine", 8)
                .unwrap()
        );
    }

    fn toy() -> (Corpus, Vocabulary, InvertedIndex) {
        let text = "i bought some coke from the corner\n\
                    the coke was strong tonight\n\
                    we walked the dog by the lake\n\
                    pizza tastes great on friday\n\
                    my sister plays tennis\n\
                    smack is cheap in the alley\n";
        let raw = ingest(text.as_bytes(), Split::White).unwrap();
        let vocab = build_vocab(&raw, 1);
        let corpus = vocab.encode_corpus(&raw);
        let index = build_inverted_index(&corpus, &vocab);
        (corpus, vocab, index)
    }

    fn map(entries: &[(&str, &[&str])]) -> EuphemismMap {
        entries
            .iter()
            .map(|(s, ts)| (s.to_string(), ts.iter().map(|t| t.to_string()).collect()))
            .collect()
    }

    #[test]
    fn one_seed_one_sentence_gives_a_pair() {
        let (corpus, vocab, index) = toy();
        let m = map(&[("coke", &["nose_candy"])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = build_dev_set(
            &TemplateProvider { seed: 1 },
            &m,
            &corpus,
            &vocab,
            &index,
            1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set[0].label, Label::Euphemistic);
        assert_eq!(set[0].span_tokens().unwrap(), ["nose", "candy"]);
        assert_eq!(set[1].label, Label::Benign);
        assert!(!set[1].text.contains(&"smack".to_string()));
        let (ok, bad) = validate_dev_set(&set, &m);
        assert_eq!((ok.len(), bad.len()), (2, 0));
    }

    #[test]
    fn too_few_sentences_names_the_seed() {
        let (corpus, vocab, index) = toy();
        let m = map(&[("coke", &["blow"])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = build_dev_set(
            &TemplateProvider { seed: 1 },
            &m,
            &corpus,
            &vocab,
            &index,
            3,
            &mut rng,
        )
        .unwrap_err();
        assert!(err.to_string().contains("`coke`"), "{err}");
    }

    #[test]
    fn validation_rejections() {
        let m = map(&[("cocaine", &["coke", "nose_candy"])]);
        let s = |text: &str, span, label| DevSample {
            text: text.split(' ').map(str::to_owned).collect(),
            mask_span: span,
            label,
            source_seed: "cocaine".into(),
        };
        let samples = vec![
            s("got some nose candy today", (2, 2), Label::Euphemistic),
            s("a cold coke on a hot day", (1, 1), Label::Benign),
            s("the dog ran home", (1, 1), Label::Benign),
            s("the dog ran home", (2, 1), Label::Benign),
            s("got some blow today", (2, 1), Label::Euphemistic),
            s("short", (1, 1), Label::Benign),
        ];
        let (ok, bad) = validate_dev_set(&samples, &m);
        assert_eq!(ok.len(), 2);
        let reasons: Vec<RejectReason> = bad.into_iter().map(|(_, r)| r).collect();
        assert_eq!(
            reasons,
            vec![
                RejectReason::NegativeContainsEuphemism("coke".into()),
                RejectReason::Duplicate,
                RejectReason::MissingEuphemism,
                RejectReason::SpanOutOfRange,
            ]
        );
    }

    #[test]
    fn dev_file_round_trip_and_items() {
        let (_, vocab, _) = toy();
        let samples = vec![
            DevSample {
                text: "i bought some nose candy"
                    .split(' ')
                    .map(str::to_owned)
                    .collect(),
                mask_span: (3, 2),
                label: Label::Euphemistic,
                source_seed: "coke".into(),
            },
            DevSample {
                text: vec![
                    "my".into(),
                    "sister".into(),
                    "plays".into(),
                    "tennis".into(),
                ],
                mask_span: (1, 1),
                label: Label::Benign,
                source_seed: "coke".into(),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev.jsonl");
        write_dev_set(&path, &samples).unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.contains(r#""label":"euph""#) && line.contains(r#""mask_len":2"#));
        assert_eq!(read_dev_set(&path).unwrap(), samples);
        let items = to_dev_items(&samples, &vocab).unwrap();
        assert_eq!(items[0].ids.len(), 4);
        assert_eq!(items[0].ids[3], vocab.mask_id());
        assert_eq!(items[0].mask_pos, 3);
        assert!(items[0].label && !items[1].label);
    }

    #[test]
    fn marked_rewrites() {
        let (text, span) = parse_marked("We ate [fresh bread] at noon.").unwrap();
        assert_eq!(text, ["we", "ate", "fresh", "bread", "at", "noon"]);
        assert_eq!(span, (2, 2));
        assert!(parse_marked("no brackets here").is_none());
        assert!(parse_marked("empty [] span").is_none());
    }
}
