//! Vocabulary and demonstration datasets.
//!
//! Token ids are dense `u32`s with three reserved slots (`PAD`, `BOS`, `EOS`)
//! ahead of the real tokens, so id layout is identical in every component.
//! Datasets live on disk as JSON lines of surface tokens; in memory they are
//! id sequences where every target ends with `EOS`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
/// Number of reserved ids ahead of the first real token.
pub const RESERVED: usize = 3;

const PAD_SURFACE: &str = "<pad>";
const BOS_SURFACE: &str = "<bos>";
const EOS_SURFACE: &str = "<eos>";

/// Immutable token inventory. Safe to share read-only across workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from surface tokens, deduplicating while keeping
    /// first-occurrence order. Ids are assigned densely starting at `RESERVED`.
    pub fn build<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut surfaces = Vec::new();
        let mut index = HashMap::new();
        for tok in tokens {
            let tok = tok.as_ref();
            if tok.is_empty() {
                return Err(Error::InvalidArgument("empty surface token".into()));
            }
            if matches!(tok, PAD_SURFACE | BOS_SURFACE | EOS_SURFACE) {
                return Err(Error::InvalidArgument(format!(
                    "surface token {tok:?} collides with a reserved symbol"
                )));
            }
            if !index.contains_key(tok) {
                let id = (RESERVED + surfaces.len()) as TokenId;
                index.insert(tok.to_owned(), id);
                surfaces.push(tok.to_owned());
            }
        }
        if surfaces.is_empty() {
            return Err(Error::InvalidArgument(
                "vocabulary needs at least one token".into(),
            ));
        }
        Ok(Vocab { surfaces, index })
    }

    /// Synthetic inventory `w0..w{n-1}`, used by generated tasks.
    pub fn synthetic(n: usize) -> Result<Self> {
        Vocab::build((0..n).map(|i| format!("w{i}")))
    }

    /// Total id space including the reserved slots.
    pub fn size(&self) -> usize {
        RESERVED + self.surfaces.len()
    }

    /// Number of real (non-reserved) tokens.
    pub fn num_tokens(&self) -> usize {
        self.surfaces.len()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        match surface {
            PAD_SURFACE => Some(PAD),
            BOS_SURFACE => Some(BOS),
            EOS_SURFACE => Some(EOS),
            _ => self.index.get(surface).copied(),
        }
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        match id {
            PAD => Some(PAD_SURFACE),
            BOS => Some(BOS_SURFACE),
            EOS => Some(EOS_SURFACE),
            _ => self
                .surfaces
                .get(id as usize - RESERVED)
                .map(|s| s.as_str()),
        }
    }

    /// Ids of the real tokens, ascending.
    pub fn token_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (RESERVED..self.size()).map(|i| i as TokenId)
    }

    /// Writes one surface token per line (reserved ids stay implicit).
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for s in &self.surfaces {
            writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                lines.push(line.trim().to_owned());
            }
        }
        Vocab::build(lines)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;
    fn try_from(surfaces: Vec<String>) -> Result<Self> {
        Vocab::build(surfaces)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.surfaces
    }
}

/// A token-id sequence. Targets end with `EOS`; contexts contain no reserved
/// ids at all. `PAD`/`BOS` never appear inside a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence {
    ids: Vec<TokenId>,
}

impl Sequence {
    /// Validates ids against a vocabulary size: ids in range, no `PAD`/`BOS`,
    /// at most one `EOS` and only in final position.
    pub fn new(ids: Vec<TokenId>, vocab_size: usize) -> Result<Self> {
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} out of range for vocab of size {vocab_size}"
                )));
            }
            if id == PAD || id == BOS {
                return Err(Error::InvalidArgument(format!(
                    "reserved id {id} inside a sequence"
                )));
            }
            if id == EOS && i + 1 != ids.len() {
                return Err(Error::InvalidArgument(
                    "EOS before the final position".into(),
                ));
            }
        }
        Ok(Sequence { ids })
    }

    /// Caller guarantees the invariants hold.
    pub fn from_raw(ids: Vec<TokenId>) -> Self {
        Sequence { ids }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True when the sequence ends with `EOS`.
    pub fn is_complete(&self) -> bool {
        self.ids.last() == Some(&EOS)
    }
}

/// One demonstration: context `x` conditions the target `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub x: Sequence,
    pub y: Sequence,
}

impl Example {
    /// `x` must be nonempty and reserved-free; `y` must be complete.
    pub fn new(x: Sequence, y: Sequence) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty context".into()));
        }
        if x.ids().contains(&EOS) {
            return Err(Error::InvalidArgument("EOS inside a context".into()));
        }
        if !y.is_complete() {
            return Err(Error::InvalidArgument(
                "target does not end with EOS".into(),
            ));
        }
        Ok(Example { x, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub vocab: Vocab,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn relabel(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    x: Vec<String>,
    y: Vec<String>,
}

/// Reads a JSON-lines dataset (`{"x": [...], "y": [...]}` of surface tokens).
/// The stored `y` carries no terminator; `EOS` is appended on read.
pub fn read_dataset(path: &Path, vocab: &Vocab, split: Split) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ExampleLine = serde_json::from_str(&line).map_err(|e| Error::DataFormat {
            path: path.to_owned(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if parsed.x.is_empty() {
            return Err(Error::DataFormat {
                path: path.to_owned(),
                line: lineno,
                msg: "empty context".into(),
            });
        }
        let lookup = |surface: &str| -> Result<TokenId> {
            vocab.id(surface).ok_or_else(|| Error::UnknownToken {
                token: surface.to_owned(),
                line: lineno,
            })
        };
        let x: Vec<TokenId> = parsed.x.iter().map(|s| lookup(s)).collect::<Result<_>>()?;
        let mut y: Vec<TokenId> = parsed.y.iter().map(|s| lookup(s)).collect::<Result<_>>()?;
        y.push(EOS);
        let x = Sequence::new(x, vocab.size()).map_err(|e| Error::DataFormat {
            path: path.to_owned(),
            line: lineno,
            msg: e.to_string(),
        })?;
        let y = Sequence::new(y, vocab.size()).map_err(|e| Error::DataFormat {
            path: path.to_owned(),
            line: lineno,
            msg: e.to_string(),
        })?;
        examples.push(Example::new(x, y).map_err(|e| Error::DataFormat {
            path: path.to_owned(),
            line: lineno,
            msg: e.to_string(),
        })?);
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset(path.to_owned()));
    }
    Ok(Dataset {
        examples,
        vocab: vocab.clone(),
        split,
    })
}

/// Inverse of `read_dataset`: surfaces out, trailing `EOS` stripped.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let surface = |id: TokenId| -> Result<String> {
        ds.vocab
            .surface(id)
            .map(str::to_owned)
            .ok_or_else(|| Error::InvalidArgument(format!("id {id} not in vocab")))
    };
    for ex in &ds.examples {
        let x: Vec<String> =
            ex.x.ids()
                .iter()
                .map(|&t| surface(t))
                .collect::<Result<_>>()?;
        let mut y_ids = ex.y.ids();
        if ex.y.is_complete() {
            y_ids = &y_ids[..y_ids.len() - 1];
        }
        let y: Vec<String> = y_ids.iter().map(|&t| surface(t)).collect::<Result<_>>()?;
        let line =
            serde_json::to_string(&ExampleLine { x, y }).map_err(|e| Error::json(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Deterministic context class: FNV-1a over the id bytes, reduced mod
/// `num_classes`. Stable across platforms and runs by construction.
pub fn context_class(x: &Sequence, num_classes: usize) -> usize {
    debug_assert!(num_classes > 0);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &id in x.ids() {
        for b in id.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    (h % num_classes as u64) as usize
}

/// All complete sequences (real tokens then `EOS`) of total length at most
/// `max_len`, shortest first. Errors when the count would exceed `limit`.
pub fn enumerate_complete_sequences(
    vocab: &Vocab,
    max_len: usize,
    limit: u64,
) -> Result<Vec<Sequence>> {
    let count = count_complete_sequences(vocab.num_tokens(), max_len);
    if count > u128::from(limit) {
        return Err(Error::EnumerationTooLarge { count, limit });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut frontier: Vec<Vec<TokenId>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in frontier {
            let mut complete = prefix.clone();
            complete.push(EOS);
            out.push(Sequence::from_raw(complete));
            if prefix.len() + 2 <= max_len {
                for t in vocab.token_ids() {
                    let mut ext = prefix.clone();
                    ext.push(t);
                    next.push(ext);
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    Ok(out)
}

/// Number of complete sequences of total length at most `max_len`.
pub fn count_complete_sequences(num_tokens: usize, max_len: usize) -> u128 {
    let v = num_tokens as u128;
    let mut total: u128 = 0;
    let mut leaves: u128 = 1;
    for _ in 0..max_len {
        total = total.saturating_add(leaves);
        leaves = leaves.saturating_mul(v);
        if leaves > u128::from(u64::MAX) {
            return u128::MAX;
        }
    }
    total
}
