//! Byte-level BPE tokenizer for URLs.
//!
//! URLs are treated as raw lowercased ASCII bytes: percent-escapes are kept
//! as-is (attackers exploit escaping, so the surface form matters) and all
//! ASCII whitespace is stripped. Training merges the most frequent adjacent
//! symbol pair per round, with lexicographic tie-breaking so the merges
//! list is deterministic for a given corpus.
//!
//! `encode` produces aligned views of one URL: subword ids, character ids,
//! and per-token character spans that tile the char stream. CLS/SEP/PAD
//! occupy synthetic single-character spans so the spans always tile.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
const N_SPECIALS: usize = 4;
const BASE_VOCAB: usize = N_SPECIALS + 256;
/// Minimum vocab: the 256 byte tokens plus specials.
pub const MIN_VOCAB: usize = 260;

/// Char-table ids for the character channel.
pub const PAD_CHAR: u32 = 0;
pub const UNK_CHAR: u32 = 1;
pub const CLS_CHAR: u32 = 2;
pub const SEP_CHAR: u32 = 3;
const N_CHAR_SPECIALS: usize = 4;

pub const VOCAB_VERSION: &str = "pma-bpe-v1";

/// Default subword vocabulary size.
pub const DEFAULT_VOCAB_SIZE: usize = 4096;

/// Default maximum subword length of an encoded URL.
pub const DEFAULT_MAX_LEN: usize = 200;

/// Trained subword vocabulary plus the character table.
#[derive(Debug, Clone)]
pub struct Vocab {
    /// Token byte strings by id; ids 0..4 are specials, 4..260 single bytes.
    token_bytes: Vec<Vec<u8>>,
    /// Ranked merges as (left id, right id) -> (rank, merged id).
    merge_map: HashMap<(u32, u32), (u32, u32)>,
    /// Merge list in rank order, as (left id, right id).
    merges: Vec<(u32, u32)>,
    /// byte value -> char-channel id.
    char_table: [u32; 256],
    /// Sorted high bytes (>= 128) seen during training.
    seen_high: Vec<u8>,
    char_count: usize,
}

/// Aligned subword and character views of one URL.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub subword_ids: Vec<u32>,
    pub char_ids: Vec<u32>,
    /// (start, len) per token; spans tile [0, char_ids.len()).
    pub spans: Vec<(usize, usize)>,
}

impl TokenSequence {
    /// Padded token count `m`.
    pub fn token_count(&self) -> usize {
        self.subword_ids.len()
    }

    /// Tokens before the PAD tail (CLS and SEP included).
    pub fn real_len(&self) -> usize {
        self.subword_ids
            .iter()
            .position(|&id| id == PAD)
            .unwrap_or(self.subword_ids.len())
    }

    /// Characters covered by real tokens (synthetic CLS/SEP chars included).
    pub fn real_char_len(&self) -> usize {
        let m = self.real_len();
        if m == 0 {
            0
        } else {
            let (start, len) = self.spans[m - 1];
            start + len
        }
    }
}

fn normalize(url: &str) -> Vec<u8> {
    url.bytes()
        .filter(|b| !b.is_ascii_whitespace())
        .map(|b| b.to_ascii_lowercase())
        .collect()
}

impl Vocab {
    fn with_merge_capacity(n_merges: usize) -> Vocab {
        let mut token_bytes = Vec::with_capacity(BASE_VOCAB + n_merges);
        token_bytes.push(b"<pad>".to_vec());
        token_bytes.push(b"<unk>".to_vec());
        token_bytes.push(b"<cls>".to_vec());
        token_bytes.push(b"<sep>".to_vec());
        for b in 0..=255u8 {
            token_bytes.push(vec![b]);
        }
        Vocab {
            token_bytes,
            merge_map: HashMap::new(),
            merges: Vec::new(),
            char_table: [0; 256],
            seen_high: Vec::new(),
            char_count: 0,
        }
    }

    fn finish_char_table(&mut self, seen_high: Vec<u8>) {
        self.seen_high = seen_high;
        for b in 0..256usize {
            self.char_table[b] = if b < 128 {
                (N_CHAR_SPECIALS + b) as u32
            } else {
                match self.seen_high.binary_search(&(b as u8)) {
                    Ok(pos) => (N_CHAR_SPECIALS + 128 + pos) as u32,
                    Err(_) => UNK_CHAR,
                }
            };
        }
        self.char_count = N_CHAR_SPECIALS + 128 + self.seen_high.len();
    }

    fn byte_token(b: u8) -> u32 {
        (N_SPECIALS + b as usize) as u32
    }

    fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let mut bytes = self.token_bytes[left as usize].clone();
        bytes.extend_from_slice(&self.token_bytes[right as usize]);
        self.token_bytes.push(bytes);
        let id = (self.token_bytes.len() - 1) as u32;
        let rank = self.merges.len() as u32;
        self.merges.push((left, right));
        self.merge_map.insert((left, right), (rank, id));
        id
    }

    pub fn subword_count(&self) -> usize {
        self.token_bytes.len()
    }

    pub fn char_count(&self) -> usize {
        self.char_count
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_str(&self, id: u32) -> Option<&[u8]> {
        self.token_bytes.get(id as usize).map(|v| v.as_slice())
    }

    pub fn char_id(&self, byte: u8) -> u32 {
        self.char_table[byte as usize]
    }

    /// Tokenize raw text (no specials, no padding); returns token ids with
    /// their byte offsets into the normalized text.
    pub fn tokenize_raw(&self, text: &str) -> Vec<(u32, usize, usize)> {
        let bytes = normalize(text);
        let mut symbols: Vec<(u32, usize, usize)> = bytes
            .iter()
            .enumerate()
            .map(|(i, &b)| (Self::byte_token(b), i, 1))
            .collect();
        loop {
            let mut best: Option<(u32, u32)> = None; // (rank, merged id)
            for w in symbols.windows(2) {
                if let Some(&(rank, id)) = self.merge_map.get(&(w[0].0, w[1].0)) {
                    if best.is_none() || rank < best.unwrap().0 {
                        best = Some((rank, id));
                    }
                }
            }
            let Some((rank, merged)) = best else { break };
            let (left, right) = self.merges[rank as usize];
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i].0 == left && symbols[i + 1].0 == right {
                    out.push((merged, symbols[i].1, symbols[i].2 + symbols[i + 1].2));
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = out;
        }
        symbols
    }

    /// Encode one URL into aligned subword/char views, truncated to
    /// `max_len` subwords (prefix kept) and padded with PAD.
    pub fn encode(&self, url: &str, max_len: usize) -> Result<TokenSequence> {
        let bytes = normalize(url);
        if bytes.is_empty() {
            return Err(Error::EmptyInput);
        }
        let tokens = self.tokenize_raw(url);
        let body = max_len.saturating_sub(2);
        let kept = &tokens[..tokens.len().min(body)];

        let mut subword_ids = Vec::with_capacity(max_len);
        let mut char_ids = Vec::new();
        let mut spans = Vec::with_capacity(max_len);

        subword_ids.push(CLS);
        char_ids.push(CLS_CHAR);
        spans.push((0, 1));
        for &(id, start, len) in kept {
            let span_start = char_ids.len();
            for &b in &bytes[start..start + len] {
                char_ids.push(self.char_table[b as usize]);
            }
            subword_ids.push(id);
            spans.push((span_start, len));
        }
        subword_ids.push(SEP);
        spans.push((char_ids.len(), 1));
        char_ids.push(SEP_CHAR);
        while subword_ids.len() < max_len {
            subword_ids.push(PAD);
            spans.push((char_ids.len(), 1));
            char_ids.push(PAD_CHAR);
        }
        Ok(TokenSequence {
            subword_ids,
            char_ids,
            spans,
        })
    }

    /// Inverse of `encode` up to truncation and lowercasing; specials and
    /// padding produce nothing.
    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        let mut out = Vec::new();
        for &id in &seq.subword_ids {
            if id == PAD || id == CLS || id == SEP || id == UNK {
                continue;
            }
            let bytes = self
                .token_bytes
                .get(id as usize)
                .ok_or(Error::UnknownId(id as usize))?;
            out.extend_from_slice(bytes);
        }
        Ok(String::from_utf8_lossy(&out).into_owned())
    }

    // ── persistence ──────────────────────────────────────────────────

    /// Text format: version line, merges count, one `left<TAB>right` line
    /// per merge, then the special-token and seen-char blocks.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(VOCAB_VERSION.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(format!("#merges {}\n", self.merges.len()).as_bytes());
        for &(l, r) in &self.merges {
            out.extend_from_slice(&self.token_bytes[l as usize]);
            out.push(b'\t');
            out.extend_from_slice(&self.token_bytes[r as usize]);
            out.push(b'\n');
        }
        out.extend_from_slice(b"#specials\n");
        for (name, id) in [("PAD", PAD), ("UNK", UNK), ("CLS", CLS), ("SEP", SEP)] {
            out.extend_from_slice(format!("{name} {id}\n").as_bytes());
        }
        let hex: Vec<String> = self.seen_high.iter().map(|b| format!("{b:02x}")).collect();
        out.extend_from_slice(format!("#chars {}\n", hex.join(" ")).as_bytes());
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        let mut lines = raw.split(|&b| b == b'\n');
        let version = lines.next().unwrap_or(b"");
        if version != VOCAB_VERSION.as_bytes() {
            return Err(Error::BadVocabFile(format!(
                "version {:?}",
                String::from_utf8_lossy(version)
            )));
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::BadVocabFile("missing merges header".into()))?;
        let header = String::from_utf8_lossy(header);
        let n_merges: usize = header
            .strip_prefix("#merges ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::BadVocabFile(format!("bad merges header {header:?}")))?;

        let mut vocab = Vocab::with_merge_capacity(n_merges);
        // rebuild ids by re-merging strings; byte strings map uniquely to ids
        let mut by_bytes: HashMap<Vec<u8>, u32> = HashMap::new();
        for (id, tb) in vocab.token_bytes.iter().enumerate().skip(N_SPECIALS) {
            by_bytes.insert(tb.clone(), id as u32);
        }
        for _ in 0..n_merges {
            let line = lines
                .next()
                .ok_or_else(|| Error::BadVocabFile("truncated merges".into()))?;
            let tab = line
                .iter()
                .position(|&b| b == b'\t')
                .ok_or_else(|| Error::BadVocabFile("merge line without tab".into()))?;
            let (lb, rb) = (&line[..tab], &line[tab + 1..]);
            let &l = by_bytes
                .get(lb)
                .ok_or_else(|| Error::BadVocabFile("merge references unknown token".into()))?;
            let &r = by_bytes
                .get(rb)
                .ok_or_else(|| Error::BadVocabFile("merge references unknown token".into()))?;
            let id = vocab.push_merge(l, r);
            by_bytes.insert(vocab.token_bytes[id as usize].clone(), id);
        }
        let mut seen_high = Vec::new();
        for line in lines {
            let line = String::from_utf8_lossy(line);
            if let Some(rest) = line.strip_prefix("#chars") {
                for tok in rest.split_whitespace() {
                    let b = u8::from_str_radix(tok, 16)
                        .map_err(|_| Error::BadVocabFile(format!("bad char byte {tok:?}")))?;
                    seen_high.push(b);
                }
            }
        }
        seen_high.sort_unstable();
        seen_high.dedup();
        vocab.finish_char_table(seen_high);
        Ok(vocab)
    }
}

/// Train a BPE vocabulary on an URL corpus. Deterministic given the corpus
/// and size: merges are ranked by pair frequency with lexicographic
/// tie-breaks on the (left, right) byte strings.
pub fn train_bpe<I, S>(corpus: I, vocab_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if vocab_size < MIN_VOCAB {
        return Err(Error::VocabTooSmall {
            requested: vocab_size,
            minimum: MIN_VOCAB,
        });
    }
    // dedupe normalized URLs into weighted words
    let mut word_count: HashMap<Vec<u8>, u64> = HashMap::new();
    let mut seen_high: Vec<u8> = Vec::new();
    let mut any = false;
    for url in corpus {
        let bytes = normalize(url.as_ref());
        if bytes.is_empty() {
            continue;
        }
        any = true;
        for &b in &bytes {
            if b >= 128 && !seen_high.contains(&b) {
                seen_high.push(b);
            }
        }
        *word_count.entry(bytes).or_insert(0) += 1;
    }
    if !any {
        return Err(Error::EmptyCorpus);
    }
    seen_high.sort_unstable();

    let n_merges = vocab_size - BASE_VOCAB;
    let mut vocab = Vocab::with_merge_capacity(n_merges);

    // sort words for deterministic bookkeeping (counts are order-free anyway)
    let mut words: Vec<(Vec<u32>, u64)> = word_count
        .into_iter()
        .map(|(bytes, count)| {
            (
                bytes.iter().map(|&b| Vocab::byte_token(b)).collect(),
                count,
            )
        })
        .collect();
    words.sort_unstable();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for (wi, (word, count)) in words.iter().enumerate() {
        for w in word.windows(2) {
            let pair = (w[0], w[1]);
            *pair_counts.entry(pair).or_insert(0) += *count as i64;
            let entry = pair_words.entry(pair).or_default();
            if entry.last() != Some(&(wi as u32)) {
                entry.push(wi as u32);
            }
        }
    }

    for _ in 0..n_merges {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    // lexicographically smaller pair wins: invert the ordering
                    let ka = (
                        &vocab.token_bytes[pa.0 as usize],
                        &vocab.token_bytes[pa.1 as usize],
                    );
                    let kb = (
                        &vocab.token_bytes[pb.0 as usize],
                        &vocab.token_bytes[pb.1 as usize],
                    );
                    kb.cmp(&ka)
                })
            })
            .map(|(&p, _)| p);
        let Some(pair) = best else { break };
        let merged = vocab.push_merge(pair.0, pair.1);
        let affected = pair_words.remove(&pair).unwrap_or_default();
        for wi in affected {
            let (word, count) = &mut words[wi as usize];
            if !word.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let count = *count as i64;
            for w in word.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) -= count;
            }
            let mut rewritten = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
                    rewritten.push(merged);
                    i += 2;
                } else {
                    rewritten.push(word[i]);
                    i += 1;
                }
            }
            *word = rewritten;
            for w in word.windows(2) {
                let p = (w[0], w[1]);
                *pair_counts.entry(p).or_insert(0) += count;
                let entry = pair_words.entry(p).or_default();
                if entry.last() != Some(&wi) {
                    entry.push(wi);
                }
            }
        }
        pair_counts.remove(&pair);
    }

    vocab.finish_char_table(seen_high);
    Ok(vocab)
}
