//! Paired-sentence corpus handling for fine-grained style transfer.
//!
//! A dataset is a set of TSV files, one per transfer (or per transfer
//! combination), each line holding `source<TAB>target[<TAB>extra_info]` with
//! space-separated tokens. This module loads such files, normalizes tokens
//! (lowercase, numerals to `NUM`, rare words to `UNK`), makes deterministic
//! train/valid/test splits, and assembles the condition sequence the model is
//! conditioned on: optional style tokens, optional extra-information segment,
//! then the source sentence.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::derive_rng;

/// Padding token; id 0 in every vocabulary.
pub const PAD_TOKEN: &str = "PAD";
/// Unknown-word token (rare or out-of-vocabulary words).
pub const UNK_TOKEN: &str = "UNK";
/// All numeric literals collapse to this token.
pub const NUM_TOKEN: &str = "NUM";
/// End-of-sentence marker appended by the tokenizer.
pub const EOS_TOKEN: &str = "EOS";
/// Delimiter around the extra-information segment of a condition.
pub const SEP_TOKEN: &str = "SEP";

/// The fine-grained transfers the pipeline knows about.
///
/// Declaration order is the canonical order in which style tokens are
/// prepended when transfers are composed: tense first, then voice, then the
/// positional and lexical transfers. `NoTenseChange`/`NoVoiceChange` are the
/// explicit no-op members that compositional datasets use for their 0- and
/// 1-transfer combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransferId {
    ToFuture,
    ToPresent,
    ToPast,
    NoTenseChange,
    ActiveToPassive,
    PassiveToActive,
    NoVoiceChange,
    PPFrontToBack,
    PPBackToFront,
    AdjAdvRemoval,
    PPRemoval,
    SubstatementRemoval,
    InformationAddition,
    VerbEmphasis,
    AdjEmphasis,
}

impl TransferId {
    /// Every transfer, in canonical (declaration) order.
    pub const ALL: [TransferId; 15] = [
        TransferId::ToFuture,
        TransferId::ToPresent,
        TransferId::ToPast,
        TransferId::NoTenseChange,
        TransferId::ActiveToPassive,
        TransferId::PassiveToActive,
        TransferId::NoVoiceChange,
        TransferId::PPFrontToBack,
        TransferId::PPBackToFront,
        TransferId::AdjAdvRemoval,
        TransferId::PPRemoval,
        TransferId::SubstatementRemoval,
        TransferId::InformationAddition,
        TransferId::VerbEmphasis,
        TransferId::AdjEmphasis,
    ];

    /// Stable name, used in file stems and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            TransferId::ToFuture => "ToFuture",
            TransferId::ToPresent => "ToPresent",
            TransferId::ToPast => "ToPast",
            TransferId::NoTenseChange => "NoTenseChange",
            TransferId::ActiveToPassive => "ActiveToPassive",
            TransferId::PassiveToActive => "PassiveToActive",
            TransferId::NoVoiceChange => "NoVoiceChange",
            TransferId::PPFrontToBack => "PPFrontToBack",
            TransferId::PPBackToFront => "PPBackToFront",
            TransferId::AdjAdvRemoval => "AdjAdvRemoval",
            TransferId::PPRemoval => "PPRemoval",
            TransferId::SubstatementRemoval => "SubstatementRemoval",
            TransferId::InformationAddition => "InformationAddition",
            TransferId::VerbEmphasis => "VerbEmphasis",
            TransferId::AdjEmphasis => "AdjEmphasis",
        }
    }

    /// The reserved vocabulary surface that selects this transfer.
    pub fn style_token(self) -> &'static str {
        match self {
            TransferId::ToFuture => "<TOFUTURE>",
            TransferId::ToPresent => "<TOPRESENT>",
            TransferId::ToPast => "<TOPAST>",
            TransferId::NoTenseChange => "<NOTENSECHANGE>",
            TransferId::ActiveToPassive => "<ACTIVETOPASSIVE>",
            TransferId::PassiveToActive => "<PASSIVETOACTIVE>",
            TransferId::NoVoiceChange => "<NOVOICECHANGE>",
            TransferId::PPFrontToBack => "<PPFRONTTOBACK>",
            TransferId::PPBackToFront => "<PPBACKTOFRONT>",
            TransferId::AdjAdvRemoval => "<ADJADVREMOVAL>",
            TransferId::PPRemoval => "<PPREMOVAL>",
            TransferId::SubstatementRemoval => "<SUBSTATEMENTREMOVAL>",
            TransferId::InformationAddition => "<INFORMATIONADDITION>",
            TransferId::VerbEmphasis => "<VERBEMPHASIS>",
            TransferId::AdjEmphasis => "<ADJEMPHASIS>",
        }
    }

    /// Whether pairs of this transfer may carry an extra-information field
    /// (keywords to add, or the word to emphasize).
    pub fn takes_extra_info(self) -> bool {
        matches!(
            self,
            TransferId::InformationAddition | TransferId::VerbEmphasis | TransferId::AdjEmphasis
        )
    }
}

impl fmt::Display for TransferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransferId::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| CorpusError::UnknownTransfer {
                name: s.to_string(),
                valid: transfer_names(),
            })
    }
}

fn transfer_names() -> String {
    TransferId::ALL
        .iter()
        .map(|t| t.name())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Parse a `+`-joined transfer list such as `ToPast+ActiveToPassive`.
/// Single names parse to one-element lists; empty components are rejected.
pub fn parse_transfer_list(s: &str) -> Result<Vec<TransferId>, CorpusError> {
    s.split('+').map(|part| part.trim().parse()).collect()
}

/// Is this surface form reserved (left untouched by [`preprocess`])?
pub fn is_reserved_surface(token: &str) -> bool {
    matches!(token, PAD_TOKEN | UNK_TOKEN | NUM_TOKEN | EOS_TOKEN | SEP_TOKEN)
        || TransferId::ALL.iter().any(|t| t.style_token() == token)
}

/// One aligned sentence pair plus the transfer(s) that map source to target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub transfers: Vec<TransferId>,
    /// Keywords for transfers that need them (word to emphasize, facts to
    /// add); empty for all others.
    pub extra_info: Vec<String>,
}

/// A pair reduced to what the model consumes: the assembled condition
/// sequence and the target sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionedPair {
    pub condition: Vec<String>,
    pub target: Vec<String>,
}

/// Errors from corpus loading, preprocessing, splitting and conditioning.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 2 or 3 tab-separated fields, found {found}")]
    BadFieldCount {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("{path}:{line}: {side} sentence is empty")]
    EmptySide {
        path: PathBuf,
        line: usize,
        side: &'static str,
    },
    #[error("{path}:{line}: extra info present but none of the transfers accept extra info")]
    UnexpectedExtraInfo { path: PathBuf, line: usize },
    #[error("{path}: no pairs")]
    NoPairs { path: PathBuf },
    #[error("unknown transfer name `{name}` (valid names: {valid})")]
    UnknownTransfer { name: String, valid: String },
    #[error("split proportions must be positive and sum to 1, got {0:?}")]
    BadProportions([f64; 3]),
    #[error("need at least 3 pairs to split, got {0}")]
    TooFewPairs(usize),
    #[error("transfer {0} is not registered with this condition builder")]
    UnregisteredTransfer(TransferId),
    #[error("{path}:{line}: malformed split manifest line")]
    BadManifestLine { path: PathBuf, line: usize },
    #[error("bad condition builder spec {0:?} (want `bare:<transfer>` or `styled:<a>+<b>`)")]
    BadBuilderSpec(String),
}

fn open_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Load sentence pairs from one TSV file.
///
/// Each line must have 2 or 3 tab-separated fields: source, target, and an
/// optional extra-information field. Tokens are space-separated. Lines are
/// validated eagerly with 1-based line numbers in every error; an extra-info
/// field is only legal when at least one of `transfers` accepts one.
pub fn load_pairs(path: &Path, transfers: &[TransferId]) -> Result<Vec<SentencePair>, CorpusError> {
    let file = File::open(path).map_err(open_err(path))?;
    let takes_extra = transfers.iter().any(|t| t.takes_extra_info());
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(open_err(path))?;
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(CorpusError::BadFieldCount {
                path: path.to_path_buf(),
                line: lineno,
                found: fields.len(),
            });
        }
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let source = words(fields[0]);
        let target = words(fields[1]);
        let extra_info = fields.get(2).map(|s| words(s)).unwrap_or_default();
        if source.is_empty() {
            return Err(CorpusError::EmptySide {
                path: path.to_path_buf(),
                line: lineno,
                side: "source",
            });
        }
        if target.is_empty() {
            return Err(CorpusError::EmptySide {
                path: path.to_path_buf(),
                line: lineno,
                side: "target",
            });
        }
        if !extra_info.is_empty() && !takes_extra {
            return Err(CorpusError::UnexpectedExtraInfo {
                path: path.to_path_buf(),
                line: lineno,
            });
        }
        pairs.push(SentencePair {
            source,
            target,
            transfers: transfers.to_vec(),
            extra_info,
        });
    }
    if pairs.is_empty() {
        return Err(CorpusError::NoPairs {
            path: path.to_path_buf(),
        });
    }
    Ok(pairs)
}

/// Write pairs back in the same TSV layout [`load_pairs`] reads.
pub fn write_pairs<W: Write>(mut w: W, pairs: &[SentencePair]) -> std::io::Result<()> {
    for p in pairs {
        if p.extra_info.is_empty() {
            writeln!(w, "{}\t{}", p.source.join(" "), p.target.join(" "))?;
        } else {
            writeln!(
                w,
                "{}\t{}\t{}",
                p.source.join(" "),
                p.target.join(" "),
                p.extra_info.join(" ")
            )?;
        }
    }
    Ok(())
}

/// Token frequencies over a training split, keyed by lowercased surface.
pub type TokenCounts = HashMap<String, usize>;

/// Count lowercased token occurrences over sources, targets and extra info.
pub fn count_tokens(pairs: &[SentencePair]) -> TokenCounts {
    let mut counts = TokenCounts::new();
    for pair in pairs {
        for tok in pair
            .source
            .iter()
            .chain(&pair.target)
            .chain(&pair.extra_info)
        {
            *counts.entry(tok.to_lowercase()).or_insert(0) += 1;
        }
    }
    counts
}

/// Words appearing fewer than this many times in training data become `UNK`.
pub const MIN_TOKEN_COUNT: usize = 3;

/// Does this token read as a numeric literal? Optional sign, then digits with
/// optional thousands commas and at most one decimal point.
fn is_numeric_literal(s: &str) -> bool {
    let rest = s.strip_prefix(['+', '-']).unwrap_or(s);
    if rest.is_empty() {
        return false;
    }
    let mut saw_digit = false;
    let mut saw_dot = false;
    for c in rest.chars() {
        match c {
            '0'..='9' => saw_digit = true,
            ',' => {}
            '.' if !saw_dot => saw_dot = true,
            _ => return false,
        }
    }
    saw_digit
}

/// Surface normalization only: reserved surfaces pass through unchanged;
/// everything else is lowercased and numeric literals become [`NUM_TOKEN`].
/// No rare-word handling — generation-time inputs use this, and the
/// vocabulary maps unknown words to `UNK` at encode time.
pub fn preprocess_surface(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .map(|tok| {
            if is_reserved_surface(tok) {
                return tok.clone();
            }
            let lower = tok.to_lowercase();
            if is_numeric_literal(&lower) {
                NUM_TOKEN.to_string()
            } else {
                lower
            }
        })
        .collect()
}

/// Normalize one token sequence: [`preprocess_surface`], then tokens seen
/// fewer than [`MIN_TOKEN_COUNT`] times in `train_counts` become
/// [`UNK_TOKEN`].
///
/// Reserved surfaces being fixed points makes the function idempotent:
/// `preprocess(preprocess(x)) == preprocess(x)` for any input and counts.
pub fn preprocess(tokens: &[String], train_counts: &TokenCounts) -> Vec<String> {
    preprocess_surface(tokens)
        .into_iter()
        .map(|tok| {
            if is_reserved_surface(&tok) {
                tok
            } else if train_counts.get(&tok).copied().unwrap_or(0) < MIN_TOKEN_COUNT {
                UNK_TOKEN.to_string()
            } else {
                tok
            }
        })
        .collect()
}

/// Apply [`preprocess`] to every field of a pair.
pub fn preprocess_pair(pair: &SentencePair, train_counts: &TokenCounts) -> SentencePair {
    SentencePair {
        source: preprocess(&pair.source, train_counts),
        target: preprocess(&pair.target, train_counts),
        transfers: pair.transfers.clone(),
        extra_info: preprocess(&pair.extra_info, train_counts),
    }
}

/// Which original line indices landed in each split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// A dataset partitioned into train/valid/test.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<SentencePair>,
    pub valid: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
    pub indices: SplitIndices,
}

/// Compute a deterministic split of `n` items.
///
/// Proportions are (train, valid, test); they must be positive and sum to 1.
/// Valid and test sizes are `floor(n * p)` but never below one element each,
/// with the remainder going to train — so 3 pairs always split 1/1/1 and 100
/// pairs at (0.9, 0.05, 0.05) split 90/5/5. The shuffle is seeded; indices
/// within each split are returned in ascending order.
pub fn split_indices(
    n: usize,
    proportions: [f64; 3],
    seed: u64,
) -> Result<SplitIndices, CorpusError> {
    let sum: f64 = proportions.iter().sum();
    if proportions.iter().any(|&p| p <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadProportions(proportions));
    }
    if n < 3 {
        return Err(CorpusError::TooFewPairs(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, "split", 0));
    let n_valid = ((n as f64 * proportions[1]).floor() as usize).max(1);
    let n_test = ((n as f64 * proportions[2]).floor() as usize).max(1);
    let n_train = n - n_valid - n_test;
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut valid: Vec<usize> = order[n_train..n_train + n_valid].to_vec();
    let mut test: Vec<usize> = order[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, valid, test })
}

/// Split pairs into train/valid/test under [`split_indices`].
pub fn split(
    pairs: &[SentencePair],
    proportions: [f64; 3],
    seed: u64,
) -> Result<SplitDataset, CorpusError> {
    let indices = split_indices(pairs.len(), proportions, seed)?;
    let gather = |idx: &[usize]| idx.iter().map(|&i| pairs[i].clone()).collect();
    Ok(SplitDataset {
        train: gather(&indices.train),
        valid: gather(&indices.valid),
        test: gather(&indices.test),
        indices,
    })
}

/// Append one dataset's split to a manifest: three lines of
/// `name<TAB>split<TAB>space-separated original line indices`.
pub fn write_split_manifest<W: Write>(
    mut w: W,
    name: &str,
    indices: &SplitIndices,
) -> std::io::Result<()> {
    for (split, idx) in [
        ("train", &indices.train),
        ("valid", &indices.valid),
        ("test", &indices.test),
    ] {
        let joined = idx
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(w, "{name}\t{split}\t{joined}")?;
    }
    Ok(())
}

/// Read a manifest written by [`write_split_manifest`] (possibly holding
/// several datasets). Returns `(name, indices)` in file order.
pub fn read_split_manifest(path: &Path) -> Result<Vec<(String, SplitIndices)>, CorpusError> {
    let file = File::open(path).map_err(open_err(path))?;
    let mut out: Vec<(String, SplitIndices)> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(open_err(path))?;
        let lineno = idx + 1;
        let bad = || CorpusError::BadManifestLine {
            path: path.to_path_buf(),
            line: lineno,
        };
        let mut fields = line.split('\t');
        let (name, split, rest) = match (fields.next(), fields.next(), fields.next()) {
            (Some(n), Some(s), Some(r)) if fields.next().is_none() => (n, s, r),
            _ => return Err(bad()),
        };
        let ids: Vec<usize> = rest
            .split_whitespace()
            .map(|tok| tok.parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let entry = match out.last_mut() {
            Some((n, e)) if n == name => e,
            _ => {
                out.push((
                    name.to_string(),
                    SplitIndices {
                        train: vec![],
                        valid: vec![],
                        test: vec![],
                    },
                ));
                &mut out.last_mut().unwrap().1
            }
        };
        match split {
            "train" => entry.train = ids,
            "valid" => entry.valid = ids,
            "test" => entry.test = ids,
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

/// Whether conditions carry style tokens.
///
/// A single-task model has its transfer baked into the weights, so its
/// condition is the bare source; multitask and compositional models need the
/// style tokens to know what to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionMode {
    Bare,
    Styled,
}

/// Assembles condition sequences and enforces which transfers a model serves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionBuilder {
    mode: ConditionMode,
    registered: BTreeSet<TransferId>,
}

impl ConditionBuilder {
    /// One styled model serving every transfer.
    pub fn multitask() -> Self {
        ConditionBuilder {
            mode: ConditionMode::Styled,
            registered: TransferId::ALL.into_iter().collect(),
        }
    }

    /// One bare-condition model dedicated to a single transfer.
    pub fn single_task(transfer: TransferId) -> Self {
        ConditionBuilder {
            mode: ConditionMode::Bare,
            registered: [transfer].into_iter().collect(),
        }
    }

    /// A styled model serving exactly the given transfers (compositional
    /// datasets register the transfers appearing in their combinations).
    pub fn styled(transfers: &[TransferId]) -> Self {
        ConditionBuilder {
            mode: ConditionMode::Styled,
            registered: transfers.iter().copied().collect(),
        }
    }

    pub fn mode(&self) -> ConditionMode {
        self.mode
    }

    /// Registered transfers in canonical order.
    pub fn registered(&self) -> Vec<TransferId> {
        self.registered.iter().copied().collect()
    }

    /// Assemble a condition from parts:
    /// `[style tokens in canonical order] ++ [SEP extra_info SEP] ++ source`.
    /// The style block is present only in styled mode, the extra segment only
    /// when `extra_info` is nonempty. Every transfer must be registered.
    pub fn condition_parts(
        &self,
        transfers: &[TransferId],
        extra_info: &[String],
        source: &[String],
    ) -> Result<Vec<String>, CorpusError> {
        for t in transfers {
            if !self.registered.contains(t) {
                return Err(CorpusError::UnregisteredTransfer(*t));
            }
        }
        let mut out = Vec::with_capacity(transfers.len() + extra_info.len() + source.len() + 2);
        if self.mode == ConditionMode::Styled {
            let ordered: BTreeSet<TransferId> = transfers.iter().copied().collect();
            out.extend(ordered.iter().map(|t| t.style_token().to_string()));
        }
        if !extra_info.is_empty() {
            out.push(SEP_TOKEN.to_string());
            out.extend(extra_info.iter().cloned());
            out.push(SEP_TOKEN.to_string());
        }
        out.extend(source.iter().cloned());
        Ok(out)
    }

    /// The condition sequence for a pair.
    pub fn condition(&self, pair: &SentencePair) -> Result<Vec<String>, CorpusError> {
        self.condition_parts(&pair.transfers, &pair.extra_info, &pair.source)
    }

    /// Reduce a pair to (condition, target).
    pub fn conditioned(&self, pair: &SentencePair) -> Result<ConditionedPair, CorpusError> {
        Ok(ConditionedPair {
            condition: self.condition(pair)?,
            target: pair.target.clone(),
        })
    }

    /// Compact textual form for persistence: `bare:<transfer>` or
    /// `styled:<a>+<b>+...` with transfers in canonical order.
    pub fn spec_string(&self) -> String {
        let names = self
            .registered()
            .iter()
            .map(|t| t.name().to_string())
            .collect::<Vec<_>>()
            .join("+");
        match self.mode {
            ConditionMode::Bare => format!("bare:{names}"),
            ConditionMode::Styled => format!("styled:{names}"),
        }
    }

    /// Parse [`spec_string`](Self::spec_string) output.
    pub fn from_spec(spec: &str) -> Result<Self, CorpusError> {
        let bad = || CorpusError::BadBuilderSpec(spec.to_string());
        let (mode, names) = spec.split_once(':').ok_or_else(bad)?;
        let transfers = parse_transfer_list(names)?;
        match mode {
            "bare" => {
                let [one] = transfers.as_slice() else {
                    return Err(bad());
                };
                Ok(ConditionBuilder::single_task(*one))
            }
            "styled" => Ok(ConditionBuilder::styled(&transfers)),
            _ => Err(bad()),
        }
    }
}
