//! Indexed word-vector collections and the cosine geometry used everywhere else.
//!
//! A [`VectorStore`] holds an ordered vocabulary and a dense row-major matrix.
//! Rows are unit-normalized at load time so cosine similarity reduces to a dot
//! product; the transformed space produced by the optimizer is a second
//! instance of the same type.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dot product with four independent accumulators. Deterministic summation
/// order, and fast enough for the all-pairs neighborhood pass.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in chunks * 4..n {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two rows of arbitrary norm.
pub(crate) fn cosine_raw(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

/// An indexed vocabulary plus its dense embedding matrix.
#[derive(Debug, Clone)]
pub struct VectorStore {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

/// Side counts reported by [`VectorStore::load_with_stats`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadStats {
    /// Lines whose word had been seen before; the first occurrence is kept.
    pub duplicate_words: usize,
    /// Lines dropped by the vocabulary filter.
    pub filtered_out: usize,
}

/// Top-k cosine neighbors of one query word, most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRanking {
    pub query: usize,
    /// `(word id, cosine similarity)`, sorted by similarity descending,
    /// ties broken by ascending word id. Never contains the query itself.
    pub entries: Vec<(usize, f64)>,
}

impl VectorStore {
    /// Builds a store from parallel word/row data. Rows are taken as-is;
    /// call [`normalize`](Self::normalize) to put them on the unit sphere.
    pub fn new(words: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimensionality must be positive".into()));
        }
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if data.len() != words.len() * dim {
            return Err(Error::Validation(format!(
                "matrix has {} components, expected {} words x {} dims",
                data.len(),
                words.len(),
                dim
            )));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite vector component".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (id, word) in words.iter().enumerate() {
            if index.insert(word.clone(), id).is_some() {
                return Err(Error::Validation(format!("duplicate word {word:?}")));
            }
        }
        Ok(VectorStore {
            words,
            index,
            dim,
            data,
            normalized: false,
        })
    }

    /// Loads a whitespace-separated text vector file (the GloVe/Paragram
    /// distribution format), keeping only words in `vocab_filter` when one is
    /// given, and unit-normalizes every row.
    pub fn load(path: impl AsRef<Path>, vocab_filter: Option<&HashSet<String>>) -> Result<Self> {
        Self::load_with_stats(path, vocab_filter).map(|(store, _)| store)
    }

    /// As [`load`](Self::load), also reporting duplicate/filter counts.
    pub fn load_with_stats(
        path: impl AsRef<Path>,
        vocab_filter: Option<&HashSet<String>>,
    ) -> Result<(Self, LoadStats)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);

        let mut words: Vec<String> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut data: Vec<f64> = Vec::new();
        let mut dim: Option<usize> = None;
        let mut stats = LoadStats::default();

        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let word = tokens.next().expect("non-empty line has a first token");
            let component_count = tokens.clone().count();
            match dim {
                None => {
                    if component_count == 0 {
                        return Err(Error::parse(path, lineno, "no vector components"));
                    }
                    dim = Some(component_count);
                }
                Some(d) if component_count != d => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected {d} components, found {component_count}"),
                    ));
                }
                _ => {}
            }
            if let Some(filter) = vocab_filter {
                if !filter.contains(word) {
                    stats.filtered_out += 1;
                    continue;
                }
            }
            if !seen.insert(word.to_string()) {
                stats.duplicate_words += 1;
                continue;
            }
            for token in tokens {
                let value: f64 = token.parse().map_err(|_| {
                    Error::parse(path, lineno, format!("non-numeric component {token:?}"))
                })?;
                if !value.is_finite() {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("non-finite component {token:?}"),
                    ));
                }
                data.push(value);
            }
            words.push(word.to_string());
        }

        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let dim = dim.expect("dim set once any word was kept");
        let mut store = VectorStore::new(words, dim, data)?;
        store.normalize()?;
        Ok((store, stats))
    }

    /// Writes the same text format accepted by [`load`](Self::load).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        let mut line = String::new();
        for (id, word) in self.words.iter().enumerate() {
            line.clear();
            line.push_str(word);
            for component in self.row(id) {
                write!(line, " {component:.6}").expect("writing to a String cannot fail");
            }
            line.push('\n');
            writer
                .write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// As [`id`](Self::id) but failing with [`Error::UnknownWord`].
    pub fn require_id(&self, word: &str) -> Result<usize> {
        self.id(word)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub(crate) fn matrix(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Scales every row to unit Euclidean norm. Fails on a zero row.
    pub fn normalize(&mut self) -> Result<()> {
        for id in 0..self.words.len() {
            let row = self.row_mut(id);
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::ZeroNorm(id));
            }
            for component in row {
                *component /= n;
            }
        }
        self.normalized = true;
        Ok(())
    }

    /// Two stores are compatible when they index the same vocabulary in the
    /// same order with the same dimensionality.
    pub fn same_vocab(&self, other: &VectorStore) -> bool {
        self.dim == other.dim && self.words == other.words
    }

    pub fn cosine(&self, i: usize, j: usize) -> Result<f64> {
        let c = cosine_raw(self.row(i), self.row(j)).ok_or_else(|| {
            if norm(self.row(i)) == 0.0 {
                Error::ZeroNorm(i)
            } else {
                Error::ZeroNorm(j)
            }
        })?;
        Ok(c)
    }

    /// Cosine distance `1 - cos(v_i, v_j)`, in `[0, 2]`.
    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        Ok(1.0 - self.cosine(i, j)?)
    }

    /// Top-`k` words by cosine similarity to `word`, excluding the query.
    /// Requires `1 <= k < len()`.
    pub fn nearest_neighbors(&self, word: &str, k: usize) -> Result<NeighborRanking> {
        let query = self.require_id(word)?;
        if k == 0 || k >= self.len() {
            return Err(Error::Validation(format!(
                "k must satisfy 1 <= k < {}, got {k}",
                self.len()
            )));
        }
        let query_row = self.row(query);
        let query_norm = norm(query_row);
        if query_norm == 0.0 {
            return Err(Error::ZeroNorm(query));
        }

        // Keep the k best seen so far; `worst` is its weakest entry.
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for id in 0..self.len() {
            if id == query {
                continue;
            }
            let c = cosine_raw(query_row, self.row(id)).ok_or(Error::ZeroNorm(id))?;
            let candidate = (id, c);
            if best.len() < k {
                best.push(candidate);
                best.sort_by(|a, b| rank_order(*a, *b));
            } else if rank_order(candidate, *best.last().expect("k >= 1")).is_lt() {
                best.pop();
                let pos = best
                    .binary_search_by(|probe| rank_order(*probe, candidate))
                    .unwrap_err();
                best.insert(pos, candidate);
            }
        }
        Ok(NeighborRanking {
            query,
            entries: best,
        })
    }
}

/// Ranking order: higher similarity first, ties by ascending word id.
fn rank_order(a: (usize, f64), b: (usize, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .expect("cosines are finite")
        .then(a.0.cmp(&b.0))
}

/// Reads a one-word-per-line file (the vocabulary filter format).
pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut words = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let word = line.trim();
        if !word.is_empty() {
            words.push(word.to_string());
        }
    }
    Ok(words)
}

/// As [`load_word_list`], collected into a set for filtering.
pub fn load_word_set(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    Ok(load_word_list(path)?.into_iter().collect())
}
