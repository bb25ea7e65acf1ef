//! Corpus-level generation metrics: BLEU-1..4, ROUGE-L, METEOR-lite and
//! CIDEr-D, plus grouped report rendering.
//!
//! All metrics work on whitespace-split token sequences, scored exactly as
//! produced by the pipeline (post-normalization). Conventions that differ
//! from the heavyweight reference implementations, on purpose:
//!
//! * **METEOR-lite** runs only the exact and stemmed matching stages
//!   (Snowball English stemmer); the synonym/paraphrase stages need external
//!   lexical databases and are omitted. Scores are therefore not comparable
//!   to the Java METEOR tool, only internally.
//! * **CIDEr-D idf** is computed from the evaluation reference corpus itself.
//!   When a report groups lines by transfer label, every group shares the
//!   idf table built from *all* reference lines, so a group's CIDEr value
//!   can shift if other groups' references change; the other metrics are
//!   fully group-local.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rust_stemmers::{Algorithm, Stemmer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("hypothesis and reference corpora are empty")]
    Empty,
    #[error("parallel corpora differ in length: {hyps} hypotheses vs {refs} references")]
    ParallelMismatch { hyps: usize, refs: usize },
    #[error("BLEU order {0} outside 1..=4")]
    BadOrder(usize),
    #[error("idf undefined: need at least 2 reference sentences, got {0}")]
    IdfUndefined(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    BadFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("line count mismatch: {hyp_lines} hypothesis lines vs {ref_lines} reference lines")]
    LineCountMismatch { hyp_lines: usize, ref_lines: usize },
    #[error("line {line}: hypothesis labeled {hyp_label:?} but reference labeled {ref_label:?}")]
    LabelMismatch {
        line: usize,
        hyp_label: String,
        ref_label: String,
    },
}

fn check_parallel(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
) -> Result<(), MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::ParallelMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

// Ordered maps keep floating-point accumulation order fixed, so repeated
// evaluations are bitwise identical.
fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU of order `n`: clipped n-gram matches pooled over the corpus
/// for each order `1..=n`, geometric mean, times the brevity penalty
/// `exp(1 - r/c)` when the hypothesis corpus is shorter than the reference
/// corpus. Any order with zero matches gives 0; so does an all-empty
/// hypothesis corpus.
pub fn bleu_n(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    n: usize,
) -> Result<f64, MetricsError> {
    check_parallel(hyps, refs)?;
    if !(1..=4).contains(&n) {
        return Err(MetricsError::BadOrder(n));
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0f64;
    for k in 1..=n {
        let mut matches = 0usize;
        let mut total = 0usize;
        for (hyp, rf) in hyps.iter().zip(refs) {
            let hc = ngram_counts(hyp, k);
            let rc = ngram_counts(rf, k);
            for (gram, &count) in &hc {
                total += count;
                matches += count.min(rc.get(gram).copied().unwrap_or(0));
            }
        }
        if matches == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (matches as f64 / total as f64).ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / n as f64).exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L: sentence-level LCS F-measure with `β² = 1.44` (recall-weighted),
/// `F = (1 + β²)·P·R / (R + β²·P)`, averaged over the corpus. A sentence with
/// no common subsequence scores 0.
pub fn rouge_l(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricsError> {
    check_parallel(hyps, refs)?;
    const BETA_SQ: f64 = 1.44;
    let mut total = 0.0f64;
    for (hyp, rf) in hyps.iter().zip(refs) {
        let lcs = lcs_len(hyp, rf) as f64;
        if lcs == 0.0 || hyp.is_empty() || rf.is_empty() {
            continue;
        }
        let p = lcs / hyp.len() as f64;
        let r = lcs / rf.len() as f64;
        total += (1.0 + BETA_SQ) * p * r / (r + BETA_SQ * p);
    }
    Ok(total / hyps.len() as f64)
}

/// Greedy leftmost unigram alignment in two stages (exact surface, then
/// stem). Returns matched `(hyp_index, ref_index)` pairs sorted by
/// hypothesis position.
fn align_unigrams(hyp: &[String], rf: &[String], stemmer: &Stemmer) -> Vec<(usize, usize)> {
    let mut hyp_matched = vec![false; hyp.len()];
    let mut ref_matched = vec![false; rf.len()];
    let mut pairs = Vec::new();
    for (i, h) in hyp.iter().enumerate() {
        for (j, r) in rf.iter().enumerate() {
            if !ref_matched[j] && h == r {
                hyp_matched[i] = true;
                ref_matched[j] = true;
                pairs.push((i, j));
                break;
            }
        }
    }
    let hyp_stems: Vec<String> = hyp.iter().map(|t| stemmer.stem(t).to_string()).collect();
    let ref_stems: Vec<String> = rf.iter().map(|t| stemmer.stem(t).to_string()).collect();
    for i in 0..hyp.len() {
        if hyp_matched[i] {
            continue;
        }
        for j in 0..rf.len() {
            if !ref_matched[j] && hyp_stems[i] == ref_stems[j] {
                hyp_matched[i] = true;
                ref_matched[j] = true;
                pairs.push((i, j));
                break;
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0usize;
    let mut prev: Option<(usize, usize)> = None;
    for &(h, r) in pairs {
        match prev {
            Some((ph, pr)) if h == ph + 1 && r == pr + 1 => {}
            _ => chunks += 1,
        }
        prev = Some((h, r));
    }
    chunks
}

/// METEOR-lite: exact+stem unigram alignment, harmonic mean
/// `F = 10·P·R / (R + 9·P)`, fragmentation penalty
/// `0.5·(chunks/matches)³`, sentence scores averaged over the corpus.
/// No matches → 0 for that sentence.
pub fn meteor_lite(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricsError> {
    check_parallel(hyps, refs)?;
    let stemmer = Stemmer::create(Algorithm::English);
    let mut total = 0.0f64;
    for (hyp, rf) in hyps.iter().zip(refs) {
        if hyp.is_empty() || rf.is_empty() {
            continue;
        }
        let pairs = align_unigrams(hyp, rf, &stemmer);
        let m = pairs.len() as f64;
        if m == 0.0 {
            continue;
        }
        let p = m / hyp.len() as f64;
        let r = m / rf.len() as f64;
        let f = 10.0 * p * r / (r + 9.0 * p);
        let chunks = count_chunks(&pairs) as f64;
        let penalty = 0.5 * (chunks / m).powi(3);
        total += f * (1.0 - penalty);
    }
    Ok(total / hyps.len() as f64)
}

const CIDER_MAX_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

/// Document frequencies of reference n-grams, shared by every group of a
/// report. Owned n-grams keep the borrow checker out of the way.
pub struct CiderIdf {
    n_refs: usize,
    df: Vec<BTreeMap<Vec<String>, usize>>,
}

impl CiderIdf {
    /// Build from the full reference corpus. Fewer than two references make
    /// idf undefined.
    pub fn from_refs(refs: &[Vec<String>]) -> Result<Self, MetricsError> {
        if refs.len() < 2 {
            return Err(MetricsError::IdfUndefined(refs.len()));
        }
        let mut df = Vec::with_capacity(CIDER_MAX_N);
        for n in 1..=CIDER_MAX_N {
            let mut map: BTreeMap<Vec<String>, usize> = BTreeMap::new();
            for rf in refs {
                for gram in ngram_counts(rf, n).into_keys() {
                    *map.entry(gram.to_vec()).or_insert(0) += 1;
                }
            }
            df.push(map);
        }
        Ok(CiderIdf { n_refs: refs.len(), df })
    }

    /// `ln(N / df)` with `df` floored at 1.
    fn idf(&self, n: usize, gram: &[String]) -> f64 {
        let df = self.df[n - 1].get(gram).copied().unwrap_or(0).max(1);
        (self.n_refs as f64 / df as f64).ln()
    }
}

fn tfidf_vector<'a>(
    tokens: &'a [String],
    n: usize,
    idf: &CiderIdf,
) -> BTreeMap<&'a [String], f64> {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(gram, count)| (gram, count as f64 * idf.idf(n, gram)))
        .collect()
}

/// CIDEr-D for one aligned pair under a fixed idf table: per order `n`, the
/// clipped tf-idf cosine `Σ min(h_g, r_g)·r_g / (‖h‖·‖r‖)` (0 when either
/// vector is zero), averaged over `n = 1..4`, times the length gaussian
/// `exp(-(len_h - len_r)²/(2σ²))` with `σ = 6`, times 10.
fn cider_pair(hyp: &[String], rf: &[String], idf: &CiderIdf) -> f64 {
    let mut sum = 0.0f64;
    for n in 1..=CIDER_MAX_N {
        let h = tfidf_vector(hyp, n, idf);
        let r = tfidf_vector(rf, n, idf);
        let h_norm = h.values().map(|v| v * v).sum::<f64>().sqrt();
        let r_norm = r.values().map(|v| v * v).sum::<f64>().sqrt();
        if h_norm == 0.0 || r_norm == 0.0 {
            continue;
        }
        let mut dot = 0.0f64;
        for (gram, &rv) in &r {
            if let Some(&hv) = h.get(gram) {
                dot += hv.min(rv) * rv;
            }
        }
        sum += dot / (h_norm * r_norm);
    }
    let delta = hyp.len() as f64 - rf.len() as f64;
    let gauss = (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    10.0 * gauss * sum / CIDER_MAX_N as f64
}

fn cider_with_idf(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    idf: &CiderIdf,
) -> f64 {
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| cider_pair(h, r, idf))
        .sum();
    total / hyps.len() as f64
}

/// Corpus CIDEr-D with idf built from `refs` themselves.
pub fn cider(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricsError> {
    check_parallel(hyps, refs)?;
    let idf = CiderIdf::from_refs(refs)?;
    Ok(cider_with_idf(hyps, refs, &idf))
}

/// One row of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

/// Scores per transfer label, plus the pooled `all` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: BTreeMap<String, MetricRow>,
}

fn score_group(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    idf: &CiderIdf,
) -> Result<MetricRow, MetricsError> {
    Ok(MetricRow {
        bleu: [
            bleu_n(hyps, refs, 1)?,
            bleu_n(hyps, refs, 2)?,
            bleu_n(hyps, refs, 3)?,
            bleu_n(hyps, refs, 4)?,
        ],
        meteor: meteor_lite(hyps, refs)?,
        rouge_l: rouge_l(hyps, refs)?,
        cider: cider_with_idf(hyps, refs, idf),
    })
}

/// Score line-aligned corpora with optional per-line transfer labels.
/// Labeled lines are grouped per label; the pooled `all` row always exists.
/// CIDEr idf is shared across groups (built from all references).
pub fn evaluate_lines(
    hyps: &[(Option<String>, Vec<String>)],
    refs: &[(Option<String>, Vec<String>)],
) -> Result<MetricReport, MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LineCountMismatch {
            hyp_lines: hyps.len(),
            ref_lines: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut labels = Vec::with_capacity(hyps.len());
    for (i, ((hl, _), (rl, _))) in hyps.iter().zip(refs).enumerate() {
        let label = match (hl, rl) {
            (Some(h), Some(r)) if h != r => {
                return Err(MetricsError::LabelMismatch {
                    line: i + 1,
                    hyp_label: h.clone(),
                    ref_label: r.clone(),
                })
            }
            (Some(h), _) => Some(h.clone()),
            (None, Some(r)) => Some(r.clone()),
            (None, None) => None,
        };
        labels.push(label);
    }
    let all_hyps: Vec<Vec<String>> = hyps.iter().map(|(_, s)| s.clone()).collect();
    let all_refs: Vec<Vec<String>> = refs.iter().map(|(_, s)| s.clone()).collect();
    let idf = CiderIdf::from_refs(&all_refs)?;
    let mut rows = BTreeMap::new();
    rows.insert("all".to_string(), score_group(&all_hyps, &all_refs, &idf)?);
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        if let Some(l) = label {
            groups.entry(l.clone()).or_default().push(i);
        }
    }
    for (label, idxs) in groups {
        let gh: Vec<Vec<String>> = idxs.iter().map(|&i| all_hyps[i].clone()).collect();
        let gr: Vec<Vec<String>> = idxs.iter().map(|&i| all_refs[i].clone()).collect();
        rows.insert(label, score_group(&gh, &gr, &idf)?);
    }
    Ok(MetricReport { rows })
}

/// Parse an evaluation file: each line is either `sentence` or
/// `label<TAB>sentence` (all lines must agree on which). Tokens are
/// whitespace-split; a trailing newline is fine, interior blank lines count
/// as empty sentences.
pub fn read_eval_file(path: &Path) -> Result<Vec<(Option<String>, Vec<String>)>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    let mut labeled: Option<bool> = None;
    for (i, line) in text.lines().enumerate() {
        let (label, sentence) = match line.split_once('\t') {
            Some((l, s)) => (Some(l.to_string()), s),
            None => (None, line),
        };
        let has = label.is_some();
        match labeled {
            None => labeled = Some(has),
            Some(expect) if expect != has => {
                return Err(MetricsError::BadFile {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "mix of labeled and unlabeled lines".to_string(),
                })
            }
            _ => {}
        }
        let tokens = sentence.split_whitespace().map(str::to_string).collect();
        out.push((label, tokens));
    }
    if out.is_empty() {
        return Err(MetricsError::BadFile {
            path: path.to_path_buf(),
            line: 0,
            reason: "empty file".to_string(),
        });
    }
    Ok(out)
}

/// Score a hypothesis file against a reference file (see [`read_eval_file`]
/// for the format).
pub fn evaluate_corpus(hyp_path: &Path, ref_path: &Path) -> Result<MetricReport, MetricsError> {
    let hyps = read_eval_file(hyp_path)?;
    let refs = read_eval_file(ref_path)?;
    evaluate_lines(&hyps, &refs)
}

impl MetricReport {
    /// Machine-readable CSV, three decimals per score.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("transfer,bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,cider\n");
        for (label, row) in &self.rows {
            writeln!(
                out,
                "{label},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
                row.bleu[0], row.bleu[1], row.bleu[2], row.bleu[3],
                row.meteor, row.rouge_l, row.cider
            )
            .unwrap();
        }
        out
    }

    /// Human-readable aligned table with the scoring caveats up top.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("# METEOR-lite: exact+stem matching only (no synonym/paraphrase stages)\n");
        out.push_str("# CIDEr-D: idf from this evaluation's references, shared across groups\n");
        let label_w = self
            .rows
            .keys()
            .map(String::len)
            .chain(["transfer".len()])
            .max()
            .unwrap_or(8);
        writeln!(
            out,
            "{:label_w$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}  {:>6}",
            "transfer", "bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "cider"
        )
        .unwrap();
        for (label, row) in &self.rows {
            writeln!(
                out,
                "{label:label_w$}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>7.3}  {:>6.3}",
                row.bleu[0], row.bleu[1], row.bleu[2], row.bleu[3],
                row.meteor, row.rouge_l, row.cider
            )
            .unwrap();
        }
        out
    }
}
