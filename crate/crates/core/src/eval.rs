//! Top-k detection metrics, dev-set accuracy and rank summaries.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TermId, Vocabulary};
use crate::datasets::GoldLabels;
use crate::error::{Error, Result};
use crate::fine::{rank_positions, seed_log_mass, CandidateScore};
use crate::index::InvertedIndex;
use crate::io;
use crate::lm::ModelParams;

pub const DEFAULT_K: [usize; 3] = [5, 10, 20];

/// Flagged-gold over flagged tokens, per mille; 0 when nothing is flagged.
pub fn precision_at_k(n_imp_k: u64, n_res_k: u64) -> Result<f64> {
    if n_imp_k > n_res_k {
        return Err(Error::Invariant(format!(
            "{n_imp_k} correct flags out of only {n_res_k}"
        )));
    }
    if n_res_k == 0 {
        return Ok(0.0);
    }
    Ok(n_imp_k as f64 / n_res_k as f64 * 1000.0)
}

pub fn recall_at_k(n_imp_k: u64, n_imp_total: u64) -> Result<f64> {
    if n_imp_total == 0 {
        return Err(Error::InvalidInput(
            "recall is undefined without gold occurrences".into(),
        ));
    }
    if n_imp_k > n_imp_total {
        return Err(Error::Invariant(format!(
            "{n_imp_k} recovered out of {n_imp_total} gold"
        )));
    }
    Ok(n_imp_k as f64 / n_imp_total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KResult {
    pub k: usize,
    pub precision_permille: f64,
    pub recall: f64,
    pub n_res: u64,
    pub n_imp: u64,
    pub selected: Vec<String>,
    /// `k` exceeded the ranking length, so the whole ranking was used.
    pub saturated: bool,
    /// Expected recall of flagging `k` terms drawn uniformly from the ranking.
    pub random_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldRank {
    pub term: String,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub results: Vec<KResult>,
    pub n_imp_total: u64,
    pub gold_ranks: Vec<GoldRank>,
    pub rank_quartiles: Quartiles,
}

impl DetectionReport {
    pub fn at(&self, k: usize) -> Option<&KResult> {
        self.results.iter().find(|r| r.k == k)
    }

    pub fn mean_gold_rank(&self) -> f64 {
        self.gold_ranks.iter().map(|g| g.rank as f64).sum::<f64>() / self.gold_ranks.len() as f64
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut out = io::create(path)?;
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(io::open(path)?)?)
    }

    /// One row per k: `k,precision_permille,recall,n_res,n_imp`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = io::create(path)?;
        writeln!(out, "k,precision_permille,recall,n_res,n_imp")?;
        for r in &self.results {
            writeln!(
                out,
                "{},{:.4},{:.4},{},{}",
                r.k, r.precision_permille, r.recall, r.n_res, r.n_imp
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Flags every corpus occurrence of the global top-k terms and counts how
/// many flags land on gold sites.
pub fn evaluate_detections(
    ranking: &[CandidateScore],
    gold: &GoldLabels,
    index: &InvertedIndex,
    vocab: &Vocabulary,
    k_list: &[usize],
) -> Result<DetectionReport> {
    if gold.is_empty() {
        return Err(Error::InvalidInput("gold labels are empty".into()));
    }
    if k_list.contains(&0) {
        return Err(Error::InvalidInput("k values must be positive".into()));
    }
    let sites = gold.site_set();
    let n_imp_total = sites.len() as u64;
    let gold_hits = |term: &str| {
        index
            .postings_of(vocab, term)
            .iter()
            .filter(|p| sites.contains(&(p.sid, p.pos)))
            .count()
    };
    let reachable: usize = ranking.iter().map(|c| gold_hits(&c.term)).sum();
    let mut results = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let take = k.min(ranking.len());
        let selected: Vec<String> = ranking[..take].iter().map(|c| c.term.clone()).collect();
        let (mut n_res, mut n_imp) = (0u64, 0u64);
        for term in &selected {
            for p in index.postings_of(vocab, term) {
                n_res += 1;
                if sites.contains(&(p.sid, p.pos)) {
                    n_imp += 1;
                }
            }
        }
        results.push(KResult {
            k,
            precision_permille: precision_at_k(n_imp, n_res)?,
            recall: recall_at_k(n_imp, n_imp_total)?,
            n_res,
            n_imp,
            selected,
            saturated: k > ranking.len(),
            random_recall: if ranking.is_empty() {
                0.0
            } else {
                take as f64 / ranking.len() as f64 * reachable as f64 / n_imp_total as f64
            },
        });
    }
    let gold_ranks: Vec<GoldRank> = rank_positions(ranking, gold)
        .into_iter()
        .map(|(term, rank)| GoldRank { term, rank })
        .collect();
    let ranks: Vec<f64> = gold_ranks.iter().map(|g| g.rank as f64).collect();
    Ok(DetectionReport {
        results,
        n_imp_total,
        gold_ranks,
        rank_quartiles: rank_summary(&ranks)?,
    })
}

/// Standard quartiles with linear interpolation between order statistics.
pub fn rank_summary(values: &[f64]) -> Result<Quartiles> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no ranks to summarize".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Ok(Quartiles {
        min: v[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: v[v.len() - 1],
    })
}

/// A dev sentence with its euphemism span collapsed to one mask token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DevItem {
    pub ids: Vec<TermId>,
    pub mask_pos: usize,
    pub label: bool,
}

/// Predicts positive when a score is strictly above the median score and
/// returns the fraction of correct predictions.
pub fn accuracy_above_median(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::InvalidInput("need one label per score".into()));
    }
    let median = rank_summary(scores)?.median;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s > median) == l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Rank-based dev accuracy of a fine model: seed-probability mass at the
/// masked span, thresholded at the dev-set median.
pub fn dev_accuracy(params: &ModelParams, items: &[DevItem], seed_ids: &[TermId]) -> Result<f64> {
    let scores: Vec<f64> = items
        .par_iter()
        .map(|it| seed_log_mass(params, &it.ids, it.mask_pos, seed_ids))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = items.iter().map(|it| it.label).collect();
    accuracy_above_median(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, ingest, Split};
    use crate::datasets::GoldTerm;
    use crate::index::build_inverted_index;
    use proptest::prelude::*;

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at_k(0, 100).unwrap(), 0.0);
        assert_eq!(precision_at_k(440, 440).unwrap(), 1000.0);
        assert_eq!(precision_at_k(0, 0).unwrap(), 0.0);
        assert!(precision_at_k(3, 2).is_err());
    }

    #[test]
    fn reported_table_row_is_self_consistent() {
        // recall 0.53 of 440 gold tokens, precision 4.61‰
        let n_imp = (0.53f64 * 440.0).round() as u64;
        assert_eq!(n_imp, 233);
        let n_res = (n_imp as f64 / 0.00461).round() as u64;
        assert_eq!(n_res, 50_542);
        assert!((precision_at_k(n_imp, n_res).unwrap() - 4.61).abs() <= 0.01);
        assert!((recall_at_k(n_imp, 440).unwrap() - 0.53).abs() <= 0.01);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(440, 440).unwrap(), 1.0);
        assert_eq!(recall_at_k(0, 440).unwrap(), 0.0);
        assert!((recall_at_k(233, 440).unwrap() - 0.5295).abs() < 1e-4);
        assert!(recall_at_k(1, 0).is_err());
    }

    proptest! {
        #[test]
        fn recall_identity(total in 1u64..100_000, frac in 0.0f64..=1.0) {
            let k = (frac * total as f64).floor() as u64;
            let r = recall_at_k(k, total).unwrap();
            prop_assert_eq!((r * total as f64).round() as u64, k);
        }

        #[test]
        fn adding_a_flag_moves_precision_in_the_right_direction(imp in 0u64..1000, extra in 0u64..1000, gold_flag: bool) {
            let res = imp + extra;
            let before = precision_at_k(imp, res).unwrap();
            let after = precision_at_k(imp + gold_flag as u64, res + 1).unwrap();
            if gold_flag {
                prop_assert!(after >= before);
            } else {
                prop_assert!(after <= before);
            }
        }

        #[test]
        fn quartiles_match_sorted_scan(mut v in proptest::collection::vec(0u32..500, 1..40)) {
            let q = rank_summary(&v.iter().map(|&x| x as f64).collect::<Vec<_>>()).unwrap();
            v.sort_unstable();
            prop_assert_eq!(q.min, v[0] as f64);
            prop_assert_eq!(q.max, *v.last().unwrap() as f64);
            prop_assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
            if v.len() % 2 == 1 {
                prop_assert_eq!(q.median, v[v.len() / 2] as f64);
            } else {
                let m = (v[v.len() / 2 - 1] + v[v.len() / 2]) as f64 / 2.0;
                prop_assert_eq!(q.median, m);
            }
        }
    }

    #[test]
    fn quartile_examples() {
        let q = rank_summary(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
        let q = rank_summary(&[7.0]).unwrap();
        assert_eq!([q.min, q.q1, q.median, q.q3, q.max], [7.0; 5]);
        // pos = 0.25·3 = 0.75 → 1 + 0.75·(2 − 1)
        let q = rank_summary(&[4.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 3.0, 5.5));
        assert!(rank_summary(&[]).is_err());
    }

    #[test]
    fn median_accuracy() {
        assert_eq!(
            accuracy_above_median(&[1.0; 4], &[true, true, false, false]).unwrap(),
            0.5
        );
        assert_eq!(
            accuracy_above_median(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        // median 0.5: predictions F,T,F,T against T,T,F,F
        assert_eq!(
            accuracy_above_median(&[0.4, 0.6, 0.3, 0.7], &[true, true, false, false]).unwrap(),
            0.5
        );
    }

    fn cs(term: &str) -> CandidateScore {
        CandidateScore {
            term: term.into(),
            n_occ: 1,
            score: 0.0,
            occurrence_scores: vec![],
        }
    }

    fn toy() -> (Vocabulary, InvertedIndex, GoldLabels, usize) {
        // sids: 0 "zib sold here" 1 "zib again" 2 "coke sold here" 3 "coke zib"
        let raw = ingest(
            "zib sold here\nzib again\ncoke sold here\ncoke zib\n".as_bytes(),
            Split::Dedup,
        )
        .unwrap();
        let vocab = build_vocab(&raw, 1);
        let corpus = vocab.encode_corpus(&raw);
        let index = build_inverted_index(&corpus, &vocab);
        let gold = GoldLabels {
            terms: [(
                "zib".to_string(),
                GoldTerm {
                    seed: "cocaine".into(),
                    sites: vec![(0, 0), (1, 0)],
                },
            )]
            .into(),
        };
        (vocab, index, gold, corpus.token_count())
    }

    #[test]
    fn hand_tallied_detection() {
        let (vocab, index, gold, _) = toy();
        let ranking = vec![cs("coke"), cs("zib"), cs("sold")];
        let report = evaluate_detections(&ranking, &gold, &index, &vocab, &[1, 2, 5]).unwrap();
        // k=1: coke flags 2 tokens, none gold
        assert_eq!((report.results[0].n_res, report.results[0].n_imp), (2, 0));
        // k=2: + zib's 3 tokens, 2 of them gold
        let r2 = &report.results[1];
        assert_eq!((r2.n_res, r2.n_imp), (5, 2));
        assert_eq!(r2.precision_permille, 400.0);
        assert_eq!(r2.recall, 1.0);
        assert!(report.results[2].saturated);
        assert_eq!(
            report.gold_ranks,
            vec![GoldRank {
                term: "zib".into(),
                rank: 2
            }]
        );
        // all gold reachable through the 3-term ranking: k/3 in expectation
        assert!((report.results[0].random_recall - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.results[2].random_recall, 1.0);
        assert!(
            evaluate_detections(&ranking, &GoldLabels::default(), &index, &vocab, &[1]).is_err()
        );
    }

    #[test]
    fn flagging_everything() {
        let (vocab, index, gold, n_tokens) = toy();
        let ranking: Vec<CandidateScore> = vocab.terms().iter().map(|t| cs(t)).collect();
        let report =
            evaluate_detections(&ranking, &gold, &index, &vocab, &[vocab.n_terms()]).unwrap();
        let r = &report.results[0];
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.n_res as usize, n_tokens);
        assert!((r.precision_permille - 1000.0 * 2.0 / n_tokens as f64).abs() < 1e-12);
    }

    #[test]
    fn report_files() {
        let (vocab, index, gold, _) = toy();
        let report = evaluate_detections(&[cs("zib")], &gold, &index, &vocab, &DEFAULT_K).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("report.json");
        report.write_json(&json).unwrap();
        assert_eq!(DetectionReport::read_json(&json).unwrap(), report);
        let csv = dir.path().join("report.csv");
        report.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("k,precision_permille,recall,n_res,n_imp\n5,"));
    }
}
