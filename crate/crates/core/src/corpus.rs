//! Tokenization, untruncated vocabularies, context/target pair extraction and
//! exact conditional-probability matrices for small corpora.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type WordId = u32;

/// Placeholder id for positions before the start (forward) or after the end
/// (backward) of a sequence.
pub const BOUNDARY: WordId = WordId::MAX;

/// Surface form used for [`BOUNDARY`] in forward contexts.
pub const BOS_FORWARD: &str = "<s>";
/// Surface form used for [`BOUNDARY`] in backward contexts.
pub const BOS_BACKWARD: &str = "</s>";

/// Splits on Unicode whitespace. No case folding or other normalization, so
/// rare surface forms keep their identity.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Word/id map with occurrence counts. Every token seen is kept: there is no
/// frequency cut-off and no unknown-word class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    /// Ids are assigned in first-occurrence order.
    pub fn build<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut vocab = Vocabulary::default();
        for tok in tokens {
            vocab.add(tok.as_ref());
        }
        vocab
    }

    /// Counts one occurrence of `word`, returning its id.
    pub fn add(&mut self, word: &str) -> WordId {
        if let Some(&id) = self.index.get(word) {
            self.counts[id as usize] += 1;
            return id;
        }
        let id = WordId::try_from(self.words.len())
            .ok()
            .filter(|&id| id != BOUNDARY)
            .expect("vocabulary exceeds WordId range");
        self.words.push(word.to_owned());
        self.counts.push(1);
        self.index.insert(word.to_owned(), id);
        id
    }

    /// Adds the counts of `other`. Words new to `self` are appended in
    /// `other`'s id order.
    pub fn merge(&mut self, other: &Vocabulary) {
        for (word, &count) in other.words.iter().zip(&other.counts) {
            let id = self.add(word);
            self.counts[id as usize] += count - 1;
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: WordId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ids sorted by descending count, ties by id.
    pub fn ids_by_frequency(&self) -> Vec<WordId> {
        let mut ids: Vec<WordId> = (0..self.len() as WordId).collect();
        ids.sort_by(|&a, &b| self.counts[b as usize].cmp(&self.counts[a as usize]).then(a.cmp(&b)));
        ids
    }

    /// `rank[id]` = position of `id` in [`Vocabulary::ids_by_frequency`].
    pub fn frequency_ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.len()];
        for (r, id) in self.ids_by_frequency().into_iter().enumerate() {
            rank[id as usize] = r;
        }
        rank
    }

    /// Surface form for a context slot, rendering the boundary marker for
    /// the given direction.
    pub fn context_token(&self, id: WordId, direction: Direction) -> &str {
        if id == BOUNDARY {
            return direction.boundary_token();
        }
        self.word(id).unwrap_or("")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn boundary_token(self) -> &'static str {
        match self {
            Direction::Forward => BOS_FORWARD,
            Direction::Backward => BOS_BACKWARD,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::Config(format!("unknown context direction {other:?}"))),
        }
    }
}

/// How a context is defined: the `k` tokens preceding (forward) or
/// following (backward) the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub direction: Direction,
    pub k: usize,
}

impl ContextSpec {
    pub fn new(direction: Direction, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("context window k must be at least 1".into()));
        }
        Ok(ContextSpec { direction, k })
    }
}

/// Exact k-token context, oldest token first. Positions outside the
/// sequence hold [`BOUNDARY`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey(pub Vec<WordId>);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pair {
    pub context: ContextKey,
    pub target: WordId,
}

/// Context/target pairs of one token sequence.
///
/// Forward: every position `i` yields the `k` preceding ids (boundary-padded)
/// and target `tokens[i]`. Backward is forward on the reversed sequence, so
/// pairs come out right to left. Sequences shorter than two tokens yield
/// nothing.
pub fn extract_pairs(tokens: &[WordId], spec: ContextSpec) -> impl Iterator<Item = Pair> + '_ {
    let n = if tokens.len() < 2 { 0 } else { tokens.len() };
    let k = spec.k;
    let at = move |pos: usize| match spec.direction {
        Direction::Forward => tokens[pos],
        Direction::Backward => tokens[n - 1 - pos],
    };
    (0..n).map(move |i| {
        let context = (0..k)
            .map(|j| {
                // slot j holds position i - k + j
                (i + j).checked_sub(k).map_or(BOUNDARY, at)
            })
            .collect();
        Pair {
            context: ContextKey(context),
            target: at(i),
        }
    })
}

/// Occurrence counts `#(c, w)` in first-occurrence order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairCounts {
    counts: IndexMap<(ContextKey, WordId), u64>,
}

impl PairCounts {
    pub fn from_pairs<I: IntoIterator<Item = Pair>>(pairs: I) -> Self {
        let mut pc = PairCounts::default();
        for p in pairs {
            pc.add(p);
        }
        pc
    }

    pub fn add(&mut self, pair: Pair) {
        *self.counts.entry((pair.context, pair.target)).or_insert(0) += 1;
    }

    /// Pure addition of counts; the resulting multiset does not depend on
    /// merge order.
    pub fn merge(&mut self, other: &PairCounts) {
        for (key, &c) in &other.counts {
            *self.counts.entry(key.clone()).or_insert(0) += c;
        }
    }

    /// Number of distinct `(context, target)` pairs.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of extracted pairs, i.e. the sum of all counts.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn get(&self, context: &ContextKey, target: WordId) -> u64 {
        self.counts.get(&(context.clone(), target)).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContextKey, WordId, u64)> {
        self.counts.iter().map(|((c, w), &n)| (c, *w, n))
    }

    /// Distinct contexts in first-occurrence order.
    pub fn contexts(&self) -> Vec<ContextKey> {
        let mut seen = IndexMap::new();
        for (c, _) in self.counts.keys() {
            seen.entry(c.clone()).or_insert(());
        }
        seen.into_keys().collect()
    }

    pub fn as_sorted_vec(&self) -> Vec<((ContextKey, WordId), u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, &n)| (k.clone(), n)).collect();
        v.sort();
        v
    }

    /// `context-tokens<TAB>target<TAB>count`, context tokens space-joined.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, direction: Direction, mut out: W) -> io::Result<()> {
        for (ctx, target, n) in self.iter() {
            let ctx_str: Vec<&str> = ctx.0.iter().map(|&id| vocab.context_token(id, direction)).collect();
            writeln!(out, "{}\t{}\t{}", ctx_str.join(" "), vocab.context_token(target, direction), n)?;
        }
        Ok(())
    }
}

/// Dense row-stochastic matrix of `p(w | c)`, rows in first-occurrence order
/// of contexts.
#[derive(Clone, Debug)]
pub struct ConditionalProbMatrix {
    pub contexts: Vec<ContextKey>,
    /// `#(c)` per row.
    pub context_counts: Vec<u64>,
    pub p: Array2<f64>,
}

impl ConditionalProbMatrix {
    pub fn from_counts(pairs: &PairCounts, vocab_size: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("conditional matrix needs at least one pair".into()));
        }
        let contexts = pairs.contexts();
        let row_of: HashMap<&ContextKey, usize> = contexts.iter().enumerate().map(|(i, c)| (c, i)).collect();
        let mut p = Array2::zeros((contexts.len(), vocab_size));
        let mut context_counts = vec![0u64; contexts.len()];
        for (ctx, w, n) in pairs.iter() {
            let row = row_of[ctx];
            let col = w as usize;
            if col >= vocab_size {
                return Err(Error::UnknownWord { id: col, vocab: vocab_size });
            }
            p[[row, col]] += n as f64;
            context_counts[row] += n;
        }
        for (mut row, &total) in p.rows_mut().into_iter().zip(&context_counts) {
            row /= total as f64;
        }
        Ok(ConditionalProbMatrix {
            contexts,
            context_counts,
            p,
        })
    }

    /// Wraps an existing matrix, checking non-negativity and row sums.
    /// Contexts are synthetic single-slot keys numbered by row.
    pub fn from_matrix(p: Array2<f64>) -> Result<Self> {
        for (i, row) in p.rows().into_iter().enumerate() {
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("row {i} sums to {sum}")));
            }
        }
        let n = p.nrows();
        Ok(ConditionalProbMatrix {
            contexts: (0..n as WordId).map(|i| ContextKey(vec![i])).collect(),
            context_counts: vec![1; n],
            p,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.p.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.p.ncols()
    }
}

/// Tokenized corpus, one document per input line, with its vocabulary.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub documents: Vec<Vec<WordId>>,
}

impl Corpus {
    pub fn from_text(text: &str) -> Self {
        let mut vocab = Vocabulary::default();
        let documents = text
            .lines()
            .map(|line| tokenize(line).into_iter().map(|t| vocab.add(t)).collect::<Vec<_>>())
            .filter(|doc| !doc.is_empty())
            .collect();
        Corpus { vocab, documents }
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    pub fn pairs(&self, spec: ContextSpec) -> impl Iterator<Item = Pair> + '_ {
        self.documents.iter().flat_map(move |doc| extract_pairs(doc, spec))
    }

    pub fn pair_counts(&self, spec: ContextSpec) -> PairCounts {
        PairCounts::from_pairs(self.pairs(spec))
    }
}
