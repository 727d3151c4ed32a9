//! Corpus ingestion, vocabularies, train/test splits and minibatch streams.
//!
//! Text corpora hold one sequence per line with whitespace-separated tokens.
//! Vocabulary files hold one token per line; when the vocabulary reserves an
//! unknown-word slot it is index 0 and is not written to the file, so line
//! `i` (0-based) is index `i + 1`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const UNK_INDEX: u32 = 0;

/// Bidirectional word ↔ index map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    lookup: HashMap<String, u32>,
    has_unk: bool,
}

impl Vocab {
    /// An empty vocabulary with the unknown-word slot at index 0.
    pub fn with_unk() -> Self {
        let mut v = Vocab {
            words: Vec::new(),
            lookup: HashMap::new(),
            has_unk: true,
        };
        v.words.push(UNK.to_string());
        v.lookup.insert(UNK.to_string(), UNK_INDEX);
        v
    }

    /// Synthetic symbols `w0 … w{n-1}` without an unknown-word slot.
    pub fn symbols(n: usize) -> Self {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        Self::from_words(words, false).expect("symbol names are distinct")
    }

    /// Builds a vocabulary from its full word list (including `<unk>` first
    /// when `has_unk`).
    pub fn from_words(words: Vec<String>, has_unk: bool) -> Result<Self> {
        if has_unk && words.first().map(String::as_str) != Some(UNK) {
            return Err(Error::InvalidArgument("vocabulary with UNK must start with <unk>".into()));
        }
        let mut lookup = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if lookup.insert(w.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Vocab { words, lookup, has_unk })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn has_unk(&self) -> bool {
        self.has_unk
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index(&self, word: &str) -> Option<u32> {
        self.lookup.get(word).copied()
    }

    pub fn word(&self, index: u32) -> Option<&str> {
        self.words.get(index as usize).map(String::as_str)
    }

    fn insert(&mut self, word: &str) -> u32 {
        if let Some(&i) = self.lookup.get(word) {
            return i;
        }
        let i = self.words.len() as u32;
        self.words.push(word.to_string());
        self.lookup.insert(word.to_string(), i);
        i
    }

    /// Loads a vocabulary file; index 0 is reserved for `<unk>`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocab::with_unk();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let word = line.trim();
            if word.is_empty() {
                continue;
            }
            if vocab.lookup.contains_key(word) {
                return Err(Error::InvalidArgument(format!("{}: duplicate entry `{word}`", path.display())));
            }
            vocab.insert(word);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let skip = usize::from(self.has_unk);
        for w in &self.words[skip..] {
            writeln!(out, "{w}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// What to do with a token missing from a frozen vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OovPolicy {
    Unk,
    Error,
}

#[derive(Debug, Clone)]
pub enum VocabPolicy {
    /// Grow a fresh vocabulary (with `<unk>` at 0) while reading.
    Build,
    Frozen { vocab: Vocab, oov: OovPolicy },
}

/// Token-index sequences over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<Vec<u32>>,
    pub vocab: Vocab,
}

impl Corpus {
    pub fn new(sequences: Vec<Vec<u32>>, vocab: Vocab) -> Result<Self> {
        let v = vocab.len();
        for (n, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::InvalidArgument(format!("sequence {n} is empty")));
            }
            if let Some(&w) = seq.iter().find(|&&w| w as usize >= v) {
                return Err(Error::OutOfVocabulary { index: w as usize, size: v });
            }
        }
        Ok(Corpus { sequences, vocab })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Writes the corpus as text, one sequence per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for seq in &self.sequences {
            let line: Vec<&str> = seq.iter().map(|&w| self.vocab.word(w).unwrap_or(UNK)).collect();
            writeln!(out, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Diagnostics from [`load_corpus`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub skipped_empty_lines: usize,
    pub unknown_tokens: usize,
}

pub fn load_corpus(path: impl AsRef<Path>, policy: &VocabPolicy) -> Result<(Corpus, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = LoadReport::default();
    let (mut vocab, frozen) = match policy {
        VocabPolicy::Build => (Vocab::with_unk(), None),
        VocabPolicy::Frozen { vocab, oov } => {
            if *oov == OovPolicy::Unk && !vocab.has_unk() {
                return Err(Error::Config("UNK mapping requested but the vocabulary has no <unk> slot".into()));
            }
            (vocab.clone(), Some(*oov))
        }
    };

    let mut sequences = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut seq = Vec::new();
        for token in line.split_whitespace() {
            let index = match frozen {
                None => vocab.insert(token),
                Some(oov) => match (vocab.index(token), oov) {
                    (Some(i), _) => i,
                    (None, OovPolicy::Unk) => {
                        report.unknown_tokens += 1;
                        UNK_INDEX
                    }
                    (None, OovPolicy::Error) => {
                        return Err(Error::UnknownToken {
                            path: path.to_path_buf(),
                            line: lineno + 1,
                            token: token.to_string(),
                        })
                    }
                },
            };
            seq.push(index);
        }
        if seq.is_empty() {
            report.skipped_empty_lines += 1;
        } else {
            sequences.push(seq);
        }
    }
    if sequences.is_empty() {
        return Err(Error::NoSequences(path.to_path_buf()));
    }
    Ok((Corpus { sequences, vocab }, report))
}

/// Deterministic shuffled split into (train, test) over a shared vocabulary.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n = corpus.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} of {n} sequences leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| Corpus {
        sequences: idx.iter().map(|&i| corpus.sequences[i].clone()).collect(),
        vocab: corpus.vocab.clone(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// How sequences are drawn for minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// A fresh permutation every pass, cut into consecutive batches.
    Shuffle,
    /// Every batch holds M independent uniform draws.
    Iid,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffle" => Ok(Sampling::Shuffle),
            "iid" => Ok(Sampling::Iid),
            other => Err(Error::Config(format!("unknown sampling mode `{other}` (expected shuffle or iid)"))),
        }
    }
}

/// Endless, seeded stream of minibatches of sequence indices.
#[derive(Debug, Clone)]
pub struct Minibatches {
    corpus_size: usize,
    batch_size: usize,
    mode: Sampling,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Minibatches {
    /// Number of batches that make up one pass over the data.
    pub fn batches_per_pass(&self) -> usize {
        self.corpus_size.div_ceil(self.batch_size)
    }
}

pub fn minibatches(corpus_size: usize, batch_size: usize, seed: u64, mode: Sampling) -> Result<Minibatches> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("minibatch size must be at least 1".into()));
    }
    if corpus_size == 0 {
        return Err(Error::InvalidArgument("cannot sample from an empty corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Ok(Minibatches {
        corpus_size,
        batch_size,
        mode,
        rng,
        order: (0..corpus_size).collect(),
        cursor: corpus_size,
    })
}

impl Iterator for Minibatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        match self.mode {
            Sampling::Shuffle => {
                if self.cursor >= self.corpus_size {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let end = (self.cursor + self.batch_size).min(self.corpus_size);
                let batch = self.order[self.cursor..end].to_vec();
                self.cursor = end;
                Some(batch)
            }
            Sampling::Iid => {
                let n = self.corpus_size;
                Some((0..self.batch_size).map(|_| self.rng.random_range(0..n)).collect())
            }
        }
    }
}
