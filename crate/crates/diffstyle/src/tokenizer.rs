//! Word-level vocabulary with encode/decode and a plain-text on-disk format.
//!
//! Ids are dense `u32`s. The first five ids are the reserved specials
//! (`PAD`=0, `UNK`=1, `NUM`=2, `EOS`=3, `SEP`=4), the next fifteen are the
//! style tokens in [`TransferId::ALL`] order, and everything after that is
//! corpus vocabulary in first-seen order. Encoding truncates, appends `EOS`,
//! and optionally pads to a fixed length; decoding stops at the first `EOS`
//! and skips `PAD`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{
    SentencePair, TransferId, EOS_TOKEN, NUM_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN,
};

/// Id of [`PAD_TOKEN`].
pub const PAD_ID: u32 = 0;
/// Id of [`UNK_TOKEN`].
pub const UNK_ID: u32 = 1;
/// Id of [`NUM_TOKEN`].
pub const NUM_ID: u32 = 2;
/// Id of [`EOS_TOKEN`].
pub const EOS_ID: u32 = 3;
/// Id of [`SEP_TOKEN`].
pub const SEP_ID: u32 = 4;

/// Number of ids every vocabulary starts with: 5 specials + 15 style tokens.
pub const RESERVED_IDS: usize = 5 + TransferId::ALL.len();

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("max_len must be at least 2 (one token plus EOS), got {0}")]
    MaxLenTooSmall(usize),
    #[error("id {id} out of range for vocabulary of size {vocab_size}")]
    InvalidId { id: u32, vocab_size: usize },
    #[error("{path}: corrupt vocabulary file: {reason}")]
    CorruptVocab { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A fixed token-to-id mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// The reserved block alone: specials `PAD UNK NUM EOS SEP` followed by
    /// every style token, ids `0..RESERVED_IDS`.
    pub fn with_reserved() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for tok in [PAD_TOKEN, UNK_TOKEN, NUM_TOKEN, EOS_TOKEN, SEP_TOKEN] {
            v.insert(tok);
        }
        for t in TransferId::ALL {
            v.insert(t.style_token());
        }
        debug_assert_eq!(v.id_to_token.len(), RESERVED_IDS);
        v
    }

    /// Add a token (idempotent) and return its id.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.to_string(), id);
        self.id_to_token.push(token.to_string());
        id
    }

    /// Build from arbitrary token sequences (first-seen order after the
    /// reserved block). Sequences should already be preprocessed; tokens that
    /// collide with reserved surfaces simply map to the reserved id.
    pub fn from_token_seqs<'a, I>(seqs: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut v = Vocabulary::with_reserved();
        for seq in seqs {
            for tok in seq {
                v.insert(tok);
            }
        }
        v
    }

    /// Build from preprocessed pairs; per pair the source is scanned first,
    /// then extra info, then the target.
    pub fn build(pairs: &[SentencePair]) -> Self {
        Vocabulary::from_token_seqs(pairs.iter().flat_map(|p| {
            [
                p.source.as_slice(),
                p.extra_info.as_slice(),
                p.target.as_slice(),
            ]
        }))
    }

    /// Number of ids (reserved block included).
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved block is always present
    }

    /// Id for a token, if present.
    pub fn get(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Surface form for an id, if in range.
    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Id of a transfer's style token (always in the reserved block).
    pub fn style_token_id(&self, transfer: TransferId) -> u32 {
        self.token_to_id[transfer.style_token()]
    }

    /// Encode a token sequence.
    ///
    /// Keeps the first `max_len - 1` tokens (out-of-vocabulary tokens map to
    /// `UNK`), appends `EOS`, and, when `pad` is set, pads with `PAD` up to
    /// exactly `max_len` ids. `EOS` is always the last non-`PAD` id.
    pub fn encode(
        &self,
        tokens: &[String],
        max_len: usize,
        pad: bool,
    ) -> Result<Vec<u32>, TokenizerError> {
        if max_len < 2 {
            return Err(TokenizerError::MaxLenTooSmall(max_len));
        }
        let mut ids: Vec<u32> = tokens
            .iter()
            .take(max_len - 1)
            .map(|t| self.get(t).unwrap_or(UNK_ID))
            .collect();
        ids.push(EOS_ID);
        if pad {
            ids.resize(max_len, PAD_ID);
        }
        Ok(ids)
    }

    /// Decode ids to surface tokens: stop at the first `EOS`, skip `PAD`,
    /// error on ids outside the vocabulary.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            if id as usize >= self.len() {
                return Err(TokenizerError::InvalidId {
                    id,
                    vocab_size: self.len(),
                });
            }
            if id == EOS_ID {
                break;
            }
            if id == PAD_ID {
                continue;
            }
            out.push(self.id_to_token[id as usize].clone());
        }
        Ok(out)
    }

    /// Write one token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let io_err = |source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        for tok in &self.id_to_token {
            writeln!(w, "{tok}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Read a file written by [`save`](Self::save), validating the reserved
    /// block and rejecting duplicates.
    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let io_err = |source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let corrupt = |reason: String| TokenizerError::CorruptVocab {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::open(path).map_err(io_err)?;
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for line in BufReader::new(file).lines() {
            let tok = line.map_err(io_err)?;
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(corrupt(format!("bad token line {:?}", tok)));
            }
            if v.token_to_id.contains_key(&tok) {
                return Err(corrupt(format!("duplicate token {:?}", tok)));
            }
            v.insert(&tok);
        }
        let expected = Vocabulary::with_reserved();
        if v.id_to_token.len() < RESERVED_IDS
            || v.id_to_token[..RESERVED_IDS] != expected.id_to_token[..]
        {
            return Err(corrupt(
                "reserved token block missing or out of order".to_string(),
            ));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng as _;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn sample_vocab() -> Vocabulary {
        let seqs = [toks("the cat sat"), toks("the dog ran")];
        Vocabulary::from_token_seqs(seqs.iter().map(Vec::as_slice))
    }

    #[test]
    fn reserved_block_has_fixed_ids() {
        let v = sample_vocab();
        assert_eq!(v.get(PAD_TOKEN), Some(PAD_ID));
        assert_eq!(v.get(UNK_TOKEN), Some(UNK_ID));
        assert_eq!(v.get(NUM_TOKEN), Some(NUM_ID));
        assert_eq!(v.get(EOS_TOKEN), Some(EOS_ID));
        assert_eq!(v.get(SEP_TOKEN), Some(SEP_ID));
        assert_eq!(v.style_token_id(TransferId::ToFuture), 5);
        assert_eq!(v.style_token_id(TransferId::AdjEmphasis), 19);
        assert_eq!(v.get("the"), Some(RESERVED_IDS as u32));
    }

    #[test]
    fn corpus_tokens_keep_first_seen_order_and_dedupe() {
        let seqs = [toks("b a NUM b"), toks("c a")];
        let v = Vocabulary::from_token_seqs(seqs.iter().map(Vec::as_slice));
        let base = RESERVED_IDS as u32;
        assert_eq!(v.get("b"), Some(base));
        assert_eq!(v.get("a"), Some(base + 1));
        assert_eq!(v.get("c"), Some(base + 2));
        // "NUM" resolved to the reserved id instead of a new entry.
        assert_eq!(v.get(NUM_TOKEN), Some(NUM_ID));
        assert_eq!(v.len(), RESERVED_IDS + 3);
    }

    #[test]
    fn build_scans_source_then_extra_then_target() {
        let pair = SentencePair {
            source: toks("s1 s2"),
            target: toks("t1"),
            transfers: vec![TransferId::VerbEmphasis],
            extra_info: toks("e1"),
        };
        let v = Vocabulary::build(&[pair]);
        let base = RESERVED_IDS as u32;
        assert_eq!(v.get("s1"), Some(base));
        assert_eq!(v.get("e1"), Some(base + 2));
        assert_eq!(v.get("t1"), Some(base + 3));
    }

    #[test]
    fn encode_appends_eos_and_pads() {
        let v = sample_vocab();
        let ids = v.encode(&toks("the cat"), 6, true).unwrap();
        assert_eq!(ids.len(), 6);
        assert_eq!(ids[2], EOS_ID);
        assert_eq!(&ids[3..], &[PAD_ID, PAD_ID, PAD_ID]);
        let ids = v.encode(&toks("the cat"), 6, false).unwrap();
        assert_eq!(ids, vec![v.get("the").unwrap(), v.get("cat").unwrap(), EOS_ID]);
    }

    #[test]
    fn encode_truncates_to_leave_room_for_eos() {
        let v = sample_vocab();
        let ids = v.encode(&toks("the cat sat the dog"), 4, true).unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[3], EOS_ID, "EOS survives truncation");
        let ids = v.encode(&toks("the"), 2, true).unwrap();
        assert_eq!(ids, vec![v.get("the").unwrap(), EOS_ID]);
    }

    #[test]
    fn encode_rejects_tiny_max_len_and_maps_oov_to_unk() {
        let v = sample_vocab();
        assert!(matches!(
            v.encode(&toks("the"), 1, true),
            Err(TokenizerError::MaxLenTooSmall(1))
        ));
        let ids = v.encode(&toks("zebra"), 4, false).unwrap();
        assert_eq!(ids[0], UNK_ID);
    }

    #[test]
    fn decode_stops_at_eos_and_skips_pad() {
        let v = sample_vocab();
        let the = v.get("the").unwrap();
        let cat = v.get("cat").unwrap();
        let out = v.decode(&[the, PAD_ID, cat, EOS_ID, the]).unwrap();
        assert_eq!(out, toks("the cat"));
        assert!(v.decode(&[the, 9999]).is_err());
    }

    #[test]
    fn encode_decode_round_trips_in_vocab_sentences() {
        let v = sample_vocab();
        let words = ["the", "cat", "sat", "dog", "ran", "NUM", "UNK"];
        let mut rng = derive_rng(3, "tok-roundtrip", 0);
        for _ in 0..100 {
            let n = rng.random_range(1..8);
            let sent: Vec<String> = (0..n)
                .map(|_| words[rng.random_range(0..words.len())].to_string())
                .collect();
            let ids = v.encode(&sent, 16, true).unwrap();
            assert_eq!(ids.len(), 16);
            assert_eq!(v.decode(&ids).unwrap(), sent);
        }
    }

    #[test]
    fn save_load_round_trips() {
        let v = sample_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded, v);
    }

    #[test]
    fn load_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "PAD\nUNK\nNUM\nEOS\n").unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(TokenizerError::CorruptVocab { .. })
        ));
        std::fs::write(&path, "UNK\nPAD\nNUM\nEOS\nSEP\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
        let mut full = String::new();
        for t in [PAD_TOKEN, UNK_TOKEN, NUM_TOKEN, EOS_TOKEN, SEP_TOKEN] {
            full.push_str(t);
            full.push('\n');
        }
        for t in TransferId::ALL {
            full.push_str(t.style_token());
            full.push('\n');
        }
        full.push_str("dup\ndup\n");
        std::fs::write(&path, full).unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(TokenizerError::CorruptVocab { .. })
        ));
    }
}
