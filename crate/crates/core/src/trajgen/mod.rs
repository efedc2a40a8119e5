//! Navigation corpora.
//!
//! Trajectories are node paths encoded incrementally as
//! `[start, goal, inc_1, ..., inc_T, pad...]` where `inc_t = u_t - u_{t-1}`.
//! The vocabulary places node ids and offsets in disjoint segments.

mod corpus;
pub mod paths;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{gen_corpus, split_pairs, CorpusManifest, CorpusParams, TrajectoryCorpus};
pub use paths::{k_shortest, shortest_path};

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("offset {offset} out of range for a {n}-node vocabulary")]
    OffsetRange { offset: i64, n: usize },
    #[error("path of {len} steps does not fit block size {block}")]
    Overlong { len: usize, block: usize },
    #[error("token {0} cannot be decoded here")]
    BadToken(usize),
    #[error("need at least 2 pairs to split, got {0}")]
    TooFewPairs(usize),
    #[error("invalid corpus parameter: {0}")]
    Parameter(String),
    #[error("corpus file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token layout for an `n`-node graph: `[0, n)` nodes, `[n, 3n-1)` offsets
/// `-(n-1)..=n-1`, `3n-1` padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub n: usize,
}

impl Vocabulary {
    pub fn new(n: usize) -> Self {
        Vocabulary { n }
    }

    pub fn size(&self) -> usize {
        3 * self.n
    }

    pub fn pad(&self) -> usize {
        3 * self.n - 1
    }

    pub fn node(&self, u: usize) -> usize {
        debug_assert!(u < self.n);
        u
    }

    pub fn encode_offset(&self, d: i64) -> Result<usize, TrajError> {
        let span = self.n as i64 - 1;
        if d < -span || d > span {
            return Err(TrajError::OffsetRange { offset: d, n: self.n });
        }
        Ok((self.n as i64 + d + span) as usize)
    }

    pub fn decode_offset(&self, tok: usize) -> Option<i64> {
        self.is_increment(tok).then(|| tok as i64 - 2 * self.n as i64 + 1)
    }

    pub fn is_increment(&self, tok: usize) -> bool {
        tok >= self.n && tok < 3 * self.n - 1
    }

    /// Token range of the increment segment.
    pub fn increments(&self) -> std::ops::Range<usize> {
        self.n..3 * self.n - 1
    }
}

/// How a trajectory was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Shortest,
    Kshort,
    Detour,
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: usize,
    pub goal: usize,
    pub nodes: Vec<usize>,
    pub tokens: Vec<usize>,
    pub source: Source,
}

impl Trajectory {
    /// Number of increments (edges walked).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Unpadded token count: start, goal and one token per step.
    pub fn len_tokens(&self) -> usize {
        2 + self.steps()
    }
}

/// Encodes a node path, padding to `block_size`.
pub fn encode(nodes: &[usize], vocab: &Vocabulary, block_size: usize) -> Result<Vec<usize>, TrajError> {
    let (&start, &goal) = match (nodes.first(), nodes.last()) {
        (Some(s), Some(g)) => (s, g),
        _ => return Err(TrajError::Parameter("empty path".into())),
    };
    let len = nodes.len() + 1;
    if len > block_size {
        return Err(TrajError::Overlong { len: nodes.len() - 1, block: block_size });
    }
    if let Some(&bad) = nodes.iter().find(|&&u| u >= vocab.n) {
        return Err(TrajError::BadToken(bad));
    }
    let mut tokens = Vec::with_capacity(block_size);
    tokens.push(vocab.node(start));
    tokens.push(vocab.node(goal));
    for w in nodes.windows(2) {
        tokens.push(vocab.encode_offset(w[1] as i64 - w[0] as i64)?);
    }
    tokens.resize(block_size, vocab.pad());
    Ok(tokens)
}

/// Recovers the node path from `[start, goal, inc..., pad...]`.
pub fn decode(tokens: &[usize], vocab: &Vocabulary) -> Result<Vec<usize>, TrajError> {
    let start = *tokens.first().ok_or(TrajError::Parameter("empty token sequence".into()))?;
    if start >= vocab.n {
        return Err(TrajError::BadToken(start));
    }
    let mut nodes = vec![start];
    let mut cur = start as i64;
    for &tok in tokens.iter().skip(2) {
        if tok == vocab.pad() {
            break;
        }
        let d = vocab.decode_offset(tok).ok_or(TrajError::BadToken(tok))?;
        cur += d;
        if cur < 0 || cur >= vocab.n as i64 {
            return Err(TrajError::BadToken(tok));
        }
        nodes.push(cur as usize);
    }
    Ok(nodes)
}

/// Independent legality check: every consecutive pair is an edge and the
/// path ends at `goal`.
pub fn is_legal_path(g: &crate::graphgen::Graph, nodes: &[usize], goal: usize) -> bool {
    nodes.last() == Some(&goal) && nodes.windows(2).all(|w| g.edges().binary_search(&(w[0], w[1])).is_ok())
}
