//! Word representations: a dense word table plus hashed character n-gram
//! buckets, so that any string (seen or unseen) maps to a vector.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_NMIN: usize = 3;
pub const DEFAULT_NMAX: usize = 6;
pub const DEFAULT_BUCKETS: usize = 100_000;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Character n-grams of `<word>` with `nmin <= n <= nmax`, scanning start
/// positions left to right and lengths shortest first, followed by the whole
/// wrapped word. A word whose wrapped form is shorter than `nmin` has no
/// n-grams at all.
pub fn extract_ngrams(word: &str, nmin: usize, nmax: usize) -> Vec<String> {
    if word.is_empty() {
        return Vec::new();
    }
    let wrapped: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
    if wrapped.len() < nmin {
        return Vec::new();
    }
    let mut out = Vec::new();
    for start in 0..wrapped.len() {
        for n in nmin..=nmax {
            if start + n > wrapped.len() {
                break;
            }
            out.push(wrapped[start..start + n].iter().collect());
        }
    }
    out.push(wrapped.iter().collect());
    out
}

/// 64-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn hash_ngram(ngram: &str, buckets: usize) -> usize {
    assert!(buckets >= 1, "bucket count must be positive");
    (fnv1a(ngram.as_bytes()) % buckets as u64) as usize
}

/// Which parts of the table make up an in-vocabulary word's vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// Word vector plus the mean of its n-gram bucket vectors.
    #[default]
    WordAndSubword,
    /// Word vector alone; OOV words still fall back to n-grams.
    WordOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    word_vectors: Array2<f64>,
    buckets: Array2<f64>,
    nmin: usize,
    nmax: usize,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, word_vectors: Array2<f64>, buckets: Array2<f64>, nmin: usize, nmax: usize) -> Result<Self> {
        let dim = word_vectors.ncols();
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if words.len() != word_vectors.nrows() {
            return Err(Error::Shape(format!("{} words but {} vectors", words.len(), word_vectors.nrows())));
        }
        if buckets.nrows() == 0 || buckets.ncols() != dim {
            return Err(Error::Shape(format!(
                "bucket matrix {:?} incompatible with dimension {dim}",
                buckets.dim()
            )));
        }
        if nmin == 0 || nmin > nmax {
            return Err(Error::Config(format!("invalid n-gram bounds {nmin}..={nmax}")));
        }
        if word_vectors.iter().chain(buckets.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding table entry".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate word {w:?} in embedding table")));
            }
        }
        Ok(EmbeddingTable {
            words,
            index,
            word_vectors,
            buckets,
            nmin,
            nmax,
        })
    }

    /// Uniform random word and bucket vectors in `[-scale, scale)`.
    pub fn random(words: Vec<String>, dim: usize, n_buckets: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wv = Array2::from_shape_fn((words.len(), dim), |_| rng.random_range(-scale..scale));
        let bv = Array2::from_shape_fn((n_buckets, dim), |_| rng.random_range(-scale..scale));
        Self::new(words, wv, bv, DEFAULT_NMIN, DEFAULT_NMAX)
    }

    pub fn dim(&self) -> usize {
        self.word_vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn n_buckets(&self) -> usize {
        self.buckets.nrows()
    }

    pub fn ngram_bounds(&self) -> (usize, usize) {
        (self.nmin, self.nmax)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_vectors(&self) -> &Array2<f64> {
        &self.word_vectors
    }

    pub fn buckets(&self) -> &Array2<f64> {
        &self.buckets
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Replace the bucket matrix, e.g. after reading a companion bucket file.
    pub fn with_buckets(self, buckets: Array2<f64>) -> Result<Self> {
        Self::new(self.words, self.word_vectors, buckets, self.nmin, self.nmax)
    }

    pub fn with_ngram_bounds(self, nmin: usize, nmax: usize) -> Result<Self> {
        Self::new(self.words, self.word_vectors, self.buckets, nmin, nmax)
    }

    pub fn lookup(&self, word: &str) -> Result<Vec<f64>> {
        self.lookup_with(word, Composition::WordAndSubword)
    }

    pub fn lookup_with(&self, word: &str, composition: Composition) -> Result<Vec<f64>> {
        let in_vocab = self.index.get(word).copied();
        if let (Some(row), Composition::WordOnly) = (in_vocab, composition) {
            return Ok(self.word_vectors.row(row).to_vec());
        }
        let ngrams = extract_ngrams(word, self.nmin, self.nmax);
        let mut out = vec![0.0; self.dim()];
        if !ngrams.is_empty() {
            let b = self.n_buckets();
            for ng in &ngrams {
                let row = self.buckets.row(hash_ngram(ng, b));
                for (o, &x) in out.iter_mut().zip(row.iter()) {
                    *o += x;
                }
            }
            let inv = 1.0 / ngrams.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        match in_vocab {
            Some(row) => {
                for (o, &x) in out.iter_mut().zip(self.word_vectors.row(row).iter()) {
                    *o += x;
                }
            }
            None if ngrams.is_empty() => return Err(Error::Unrepresentable(word.to_owned())),
            None => {}
        }
        Ok(out)
    }

    /// Parses the standard text vector format: a `V m` header followed by
    /// `word v1 .. vm` lines. Buckets start as a single zero row.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>, what: &str| -> Result<usize> {
            s.and_then(|t| t.parse().ok()).ok_or(Error::Parse {
                line: 1,
                msg: format!("header needs {what}"),
            })
        };
        let n_words = parse_usize(parts.next(), "vocabulary size")?;
        let dim = parse_usize(parts.next(), "dimension")?;
        if dim == 0 {
            return Err(Error::Parse {
                line: 1,
                msg: "dimension must be at least 1".into(),
            });
        }

        let mut words = Vec::with_capacity(n_words);
        let mut data = Vec::with_capacity(n_words * dim);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("non-empty line has a field");
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        msg: format!("bad value {f:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {dim} values, found {}", values.len()),
                });
            }
            words.push(word.to_owned());
            data.extend(values);
        }
        if words.len() != n_words {
            return Err(Error::Parse {
                line: words.len() + 2,
                msg: format!("header declares {n_words} words, file has {}", words.len()),
            });
        }
        let wv = Array2::from_shape_vec((n_words, dim), data).expect("shape checked per line");
        Self::new(words, wv, Array2::zeros((1, dim)), DEFAULT_NMIN, DEFAULT_NMAX)
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim())?;
        for (word, row) in self.words.iter().zip(self.word_vectors.rows()) {
            write!(out, "{word}")?;
            for x in row {
                // `{}` on f64 prints the shortest string that parses back exactly.
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_text<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Bucket file layout: `B` and `m` as little-endian u64, then `B * m`
    /// little-endian f32 values, row-major.
    pub fn write_buckets<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_u64::<LittleEndian>(self.n_buckets() as u64)?;
        out.write_u64::<LittleEndian>(self.dim() as u64)?;
        for &x in self.buckets.iter() {
            out.write_f32::<LittleEndian>(x as f32)?;
        }
        Ok(())
    }

    pub fn read_buckets<R: Read>(mut input: R) -> Result<Array2<f64>> {
        let b = input.read_u64::<LittleEndian>()? as usize;
        let m = input.read_u64::<LittleEndian>()? as usize;
        if b == 0 || m == 0 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("bucket file header B={b} m={m}"),
            });
        }
        let mut data = vec![0f32; b * m];
        input.read_f32_into::<LittleEndian>(&mut data)?;
        Ok(Array2::from_shape_vec((b, m), data.into_iter().map(f64::from).collect()).expect("length b*m"))
    }
}

pub fn load_text_embeddings<P: AsRef<Path>>(path: P) -> Result<EmbeddingTable> {
    EmbeddingTable::read_text(BufReader::new(File::open(path)?))
}

/// Text vectors plus a companion bucket file.
pub fn load_with_buckets<P: AsRef<Path>, Q: AsRef<Path>>(vectors: P, buckets: Q) -> Result<EmbeddingTable> {
    let table = load_text_embeddings(vectors)?;
    let b = EmbeddingTable::read_buckets(BufReader::new(File::open(buckets)?))?;
    table.with_buckets(b)
}

/// Scales `v` to unit L2 norm. Zero vectors are rejected.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !n.is_finite() {
        return Err(Error::NonFinite("vector norm".into()));
    }
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// View of an [`EmbeddingTable`] that emits unit-norm vectors.
#[derive(Clone, Debug)]
pub struct NormalizedEmbeddingTable {
    inner: EmbeddingTable,
}

impl NormalizedEmbeddingTable {
    pub fn new(inner: EmbeddingTable) -> Self {
        NormalizedEmbeddingTable { inner }
    }

    pub fn inner(&self) -> &EmbeddingTable {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn lookup(&self, word: &str) -> Result<Vec<f64>> {
        normalize(self.inner.lookup(word)?)
    }

    pub fn lookup_with(&self, word: &str, composition: Composition) -> Result<Vec<f64>> {
        normalize(self.inner.lookup_with(word, composition)?)
    }
}

/// Result of [`train_svd_embedding`].
#[derive(Clone, Debug)]
pub struct SvdEmbedding {
    pub table: EmbeddingTable,
    pub singular_values: Vec<f64>,
    /// Numerical rank of the input matrix.
    pub rank: usize,
    /// Set when the requested dimension exceeds the rank; the trailing
    /// components then carry no information about the matrix.
    pub rank_limited: bool,
}

/// Word vectors from a rank-`m` SVD `M ~ U_m S_m V_m^T`: the rows of
/// `(S_m^alpha V_m^T)^T`, one per column of `M`.
pub fn train_svd_embedding(m_matrix: ArrayView2<f64>, words: Vec<String>, dim: usize, alpha: f64, seed: u64) -> Result<SvdEmbedding> {
    let (n, v) = m_matrix.dim();
    if dim == 0 || dim > n.min(v) {
        return Err(Error::Config(format!("embedding dimension {dim} must lie in 1..={}", n.min(v))));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    if words.len() != v {
        return Err(Error::Shape(format!("{} words for {v} matrix columns", words.len())));
    }
    let dec = linalg::truncated_svd(m_matrix, dim, seed);
    let rank = dec.rank(1e-10);
    let rank_limited = dim > rank;
    if rank_limited {
        log::warn!("requested SVD embedding dimension {dim} exceeds matrix rank {rank}");
    }
    let k = dec.s.len();
    let mut wv = Array2::zeros((v, dim));
    for i in 0..k {
        let scale = if alpha == 0.0 { 1.0 } else { dec.s[i].powf(alpha) };
        for j in 0..v {
            wv[[j, i]] = scale * dec.vt[[i, j]];
        }
    }
    let table = EmbeddingTable::new(words, wv, Array2::zeros((1, dim)), DEFAULT_NMIN, DEFAULT_NMAX)?;
    Ok(SvdEmbedding {
        table,
        singular_values: dec.s.to_vec(),
        rank,
        rank_limited,
    })
}

/// Neighbour counts for distributional embeddings: a `2(F+2) x V` matrix.
/// Rows `0..F` of the first half count how often each of the `F` most
/// frequent words immediately precedes `w`; row `F` counts document starts
/// and row `F+1` every other predecessor. The second half, offset by `F+2`,
/// does the same for successors and document ends. Each occurrence lands in
/// exactly one row per half, so the column of every word that occurs has
/// positive PPMI somewhere unless its neighbours match the marginal exactly.
pub fn neighbor_counts(corpus: &Corpus, features: usize) -> Array2<f64> {
    let v = corpus.vocab.len();
    let ids = corpus.vocab.ids_by_frequency();
    let f = features.min(v);
    let other = f + 1;
    let mut slot = vec![other; v];
    for (i, &id) in ids.iter().take(f).enumerate() {
        slot[id as usize] = i;
    }
    let right = f + 2;
    let mut counts = Array2::zeros((2 * right, v));
    for doc in corpus.documents.iter().filter(|d| !d.is_empty()) {
        counts[[f, doc[0] as usize]] += 1.0;
        counts[[right + f, doc[doc.len() - 1] as usize]] += 1.0;
        for pair in doc.windows(2) {
            let (a, b) = (pair[0] as usize, pair[1] as usize);
            counts[[slot[a], b]] += 1.0;
            counts[[right + slot[b], a]] += 1.0;
        }
    }
    counts
}

/// Positive PMI of a context/word count matrix, `max(0, log(#(c,w) T / (#(c) #(w))))`.
pub fn positive_pmi(counts: ArrayView2<f64>) -> Array2<f64> {
    let total: f64 = counts.sum();
    let row: Vec<f64> = counts.rows().into_iter().map(|r| r.sum()).collect();
    let col: Vec<f64> = counts.columns().into_iter().map(|c| c.sum()).collect();
    Array2::from_shape_fn(counts.dim(), |(i, j)| {
        let c = counts[[i, j]];
        if c <= 0.0 {
            0.0
        } else {
            (c * total / (row[i] * col[j])).ln().max(0.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest};

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn neighbor_counts_by_hand() {
        let corpus = Corpus::from_text("x y x\ny x");
        // ids: x=0 (3 times), y=1 (2 times)
        let c = neighbor_counts(&corpus, 1);
        assert_eq!(c.dim(), (6, 2));
        // predecessors of x: one start, y twice; of y: x once, one start.
        // successors of x: two ends, y once; of y: x twice
        assert_eq!(c, array![[0.0, 1.0], [1.0, 1.0], [2.0, 0.0], [0.0, 2.0], [2.0, 0.0], [1.0, 0.0]]);
        // one row per side for each occurrence
        assert_eq!(c.sum_axis(ndarray::Axis(0)), array![6.0, 4.0]);
    }

    #[test]
    fn ngrams_of_short_words() {
        assert_eq!(extract_ngrams("ab", 3, 3), s(&["<ab", "ab>", "<ab>"]));
        assert_eq!(extract_ngrams("where", 3, 3), s(&["<wh", "whe", "her", "ere", "re>", "<where>"]));
        assert_eq!(extract_ngrams("ab", 2, 3), s(&["<a", "<ab", "ab", "ab>", "b>", "<ab>"]));
        assert!(extract_ngrams("a", 4, 6).is_empty());
        assert!(extract_ngrams("", 3, 6).is_empty());
    }

    #[test]
    fn ngram_count_for_eight_char_word() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let word: String = (0..8).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        // wrapped length 10: sum over n of (10 - n + 1) windows, plus the whole word
        let expect: usize = (3..=6).map(|n| 10 - n + 1).sum::<usize>() + 1;
        assert_eq!(expect, 27);
        assert_eq!(extract_ngrams(&word, 3, 6).len(), expect);
    }

    #[test]
    fn ngrams_count_characters_not_bytes() {
        let grams = extract_ngrams("żółw", 3, 3);
        assert_eq!(grams[0], "<żó");
        assert_eq!(grams.len(), 4 + 1);
    }

    #[test]
    fn fnv_golden_vectors() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
        assert_eq!(hash_ngram("abc", 1), 0);
        assert_eq!(hash_ngram("abc", 100_000), hash_ngram("abc", 100_000));
        assert_eq!(hash_ngram("<wh", 100_000), (fnv1a(b"<wh") % 100_000) as usize);
    }

    #[test]
    fn collision_rate_near_birthday_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let b = 1usize << 20;
        let n = 10_000usize;
        let mut grams = std::collections::HashSet::new();
        while grams.len() < n {
            let len = rng.random_range(3..=6);
            let g: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
            grams.insert(g);
        }
        let mut seen = std::collections::HashSet::new();
        let mut collisions = 0usize;
        for g in &grams {
            if !seen.insert(hash_ngram(g, b)) {
                collisions += 1;
            }
        }
        // expected colliding insertions: n - B (1 - (1 - 1/B)^n)
        let bf = b as f64;
        let expected = n as f64 - bf * (1.0 - (1.0 - 1.0 / bf).powi(n as i32));
        assert!(expected > 40.0 && expected < 50.0);
        assert!((collisions as f64) <= 3.0 * expected, "{collisions} vs {expected}");
        assert!((collisions as f64) >= expected / 3.0, "{collisions} vs {expected}");
    }

    #[test]
    fn in_vocab_word_with_zero_buckets_is_word_vector() {
        let t = EmbeddingTable::new(s(&["cat"]), array![[1.0, 2.0]], Array2::zeros((1, 2)), 3, 6).unwrap();
        assert_eq!(t.lookup("cat").unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn oov_lookup_matches_manual_recomputation() {
        let t = EmbeddingTable::random(s(&["a", "b"]), 5, 97, 1.0, 12).unwrap();
        let word = "absurdity";
        let v1 = t.lookup(word).unwrap();
        assert_eq!(v1, t.lookup(word).unwrap());

        let wrapped: Vec<char> = "<absurdity>".chars().collect();
        let mut grams = Vec::new();
        for st in 0..wrapped.len() {
            for n in 3..=6 {
                if st + n <= wrapped.len() {
                    grams.push(wrapped[st..st + n].iter().collect::<String>());
                }
            }
        }
        grams.push("<absurdity>".into());
        let mut mean = Array1::<f64>::zeros(5);
        for g in &grams {
            let h = (fnv1a(g.as_bytes()) % 97) as usize;
            mean += &t.buckets().row(h);
        }
        mean /= grams.len() as f64;
        for (a, b) in v1.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unrepresentable_oov() {
        let t = EmbeddingTable::random(s(&["x"]), 3, 4, 1.0, 1).unwrap().with_ngram_bounds(5, 6).unwrap();
        // "<x>" is shorter than nmin, but x is in vocabulary
        assert!(t.lookup("x").is_ok());
        assert!(matches!(t.lookup("y"), Err(Error::Unrepresentable(_))));
        assert!(t.lookup("yyy").is_ok());
    }

    #[test]
    fn word_only_composition_skips_buckets() {
        let t = EmbeddingTable::random(s(&["dog"]), 4, 10, 1.0, 2).unwrap();
        assert_eq!(t.lookup_with("dog", Composition::WordOnly).unwrap(), t.word_vectors().row(0).to_vec());
        assert_ne!(t.lookup("dog").unwrap(), t.word_vectors().row(0).to_vec());
    }

    #[test]
    fn text_parse_and_errors() {
        let t = EmbeddingTable::read_text("2 3\nfoo 1 2 3\nbar 4 5 6\n".as_bytes()).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        match EmbeddingTable::read_text("2 3\nfoo 1 2 3\nbar 4 5\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(EmbeddingTable::read_text("3 3\nfoo 1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn text_round_trip_is_bit_identical() {
        let t = EmbeddingTable::random(s(&["a", "bb", "ccc"]), 7, 1, 3.0, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        t.save_text(&path).unwrap();
        let back = load_text_embeddings(&path).unwrap();
        assert_eq!(back.words(), t.words());
        for (a, b) in back.word_vectors().iter().zip(t.word_vectors().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bucket_file_round_trip() {
        let t = EmbeddingTable::random(s(&["a"]), 3, 5, 1.0, 8).unwrap();
        let mut buf = Vec::new();
        t.write_buckets(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 5 * 3 * 4);
        let b = EmbeddingTable::read_buckets(buf.as_slice()).unwrap();
        for (x, y) in b.iter().zip(t.buckets().iter()) {
            assert_eq!(*x, f64::from(*y as f32));
        }
    }

    #[test]
    fn zero_vector_cannot_be_normalized() {
        assert!(matches!(normalize(vec![0.0, 0.0]), Err(Error::ZeroVector)));
        let t = EmbeddingTable::new(s(&["z"]), array![[0.0, 0.0]], Array2::zeros((1, 2)), 3, 6).unwrap();
        let nt = NormalizedEmbeddingTable::new(t);
        assert!(matches!(nt.lookup("z"), Err(Error::ZeroVector)));
    }

    #[test]
    fn svd_embedding_of_identity_is_orthonormal() {
        let e = train_svd_embedding(Array2::eye(3).view(), s(&["a", "b", "c"]), 3, 0.0, 0).unwrap();
        let w = e.table.word_vectors();
        let g = w.dot(&w.t());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-12);
            }
        }
        // each row is a signed unit basis vector
        for row in w.rows() {
            assert_eq!(row.iter().filter(|x| x.abs() > 1e-12).count(), 1);
        }
        assert!(!e.rank_limited);
    }

    #[test]
    fn svd_embedding_rank_one_and_limits() {
        let m = array![[1.0, 2.0, 0.5], [2.0, 4.0, 1.0]];
        let e = train_svd_embedding(m.view(), s(&["a", "b", "c"]), 1, 1.0, 0).unwrap();
        assert_eq!(e.rank, 1);
        // with alpha = 1 the word vectors are S V^T, so U S V^T reproduces M
        let d = linalg::svd(m.view()).truncate(1);
        let err = linalg::frobenius((&m - &d.reconstruct()).view());
        assert!(err < 1e-12);
        let limited = train_svd_embedding(m.view(), s(&["a", "b", "c"]), 2, 0.5, 0).unwrap();
        assert!(limited.rank_limited);
        assert!(train_svd_embedding(m.view(), s(&["a", "b", "c"]), 3, 0.5, 0).is_err());
        assert!(train_svd_embedding(m.view(), s(&["a", "b", "c"]), 1, 1.5, 0).is_err());
    }

    #[test]
    fn ppmi_is_nonnegative() {
        let c = array![[4.0, 0.0, 1.0], [1.0, 3.0, 0.0]];
        let p = positive_pmi(c.view());
        assert!(p.iter().all(|&x| x >= 0.0));
        assert_eq!(p[[0, 1]], 0.0);
        let want = (4.0f64 * 9.0 / (5.0 * 5.0)).ln();
        assert!((p[[0, 0]] - want).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn any_long_enough_string_is_representable(word in "\\PC{1,12}") {
            let t = EmbeddingTable::random(vec!["known".into()], 4, 16, 1.0, 5).unwrap();
            let v = t.lookup(&word).unwrap();
            prop_assert_eq!(v.len(), 4);
            prop_assert!(v.iter().all(|x| x.is_finite()));
        }

        #[test]
        fn normalization_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let once = normalize(v).unwrap();
            let n: f64 = once.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
            let twice = normalize(once.clone()).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
