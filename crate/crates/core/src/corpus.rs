//! Bag-of-words corpora: loading, export, vocabulary filtering and the
//! train/heldout split.
//!
//! Two on-disk formats are understood.
//!
//! * `uci`: the UCI docword file (`D`, `W`, `NNZ` header lines followed by
//!   1-based `docID termID count` triples) with an optional vocabulary file
//!   holding one term per line. Tokens within a document are stored sorted
//!   by term, so loading is independent of triple order.
//! * `lines`: one document per line, tokens separated by whitespace, every
//!   token a term listed in the vocabulary file. Token order is kept.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Uci,
    Lines,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uci" => Ok(CorpusFormat::Uci),
            "lines" => Ok(CorpusFormat::Lines),
            other => Err(Error::domain(format!("unknown corpus format {other:?} (expected uci or lines)"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Uci => "uci",
            CorpusFormat::Lines => "lines",
        })
    }
}

/// Documents as sequences of term indices into `vocab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Vec<u32>>,
    vocab: Vec<String>,
}

impl Corpus {
    pub fn new(docs: Vec<Vec<u32>>, vocab: Vec<String>) -> Result<Self> {
        let v = vocab.len();
        if v > u32::MAX as usize {
            return Err(Error::domain("vocabulary too large"));
        }
        for (j, doc) in docs.iter().enumerate() {
            if let Some(&bad) = doc.iter().find(|&&t| t as usize >= v) {
                return Err(Error::domain(format!("document {j}: term {bad} outside vocabulary of {v}")));
            }
        }
        Ok(Corpus { docs, vocab })
    }

    /// Vocabulary `t1, t2, ...` for corpora without term strings.
    pub fn with_numbered_vocab(docs: Vec<Vec<u32>>, vocab_size: usize) -> Result<Self> {
        Self::new(docs, numbered_vocab(vocab_size))
    }

    pub fn docs(&self) -> &[Vec<u32>] {
        &self.docs
    }

    pub fn doc(&self, j: usize) -> &[u32] {
        &self.docs[j]
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// m_j.
    pub fn doc_lengths(&self) -> Vec<usize> {
        self.docs.iter().map(Vec::len).collect()
    }

    /// m·.
    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Number of distinct documents containing each term.
    pub fn document_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0usize; self.vocab_size()];
        let mut last_seen = vec![usize::MAX; self.vocab_size()];
        for (j, doc) in self.docs.iter().enumerate() {
            for &t in doc {
                let t = t as usize;
                if last_seen[t] != j {
                    last_seen[t] = j;
                    df[t] += 1;
                }
            }
        }
        df
    }

    /// Per-document (term, count) pairs sorted by term.
    pub fn term_counts(&self) -> Vec<Vec<(u32, u32)>> {
        self.docs.iter().map(|d| sparse_counts(d)).collect()
    }
}

fn numbered_vocab(v: usize) -> Vec<String> {
    (1..=v).map(|i| format!("t{i}")).collect()
}

fn sparse_counts(doc: &[u32]) -> Vec<(u32, u32)> {
    let mut sorted = doc.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::new();
    for t in sorted {
        match out.last_mut() {
            Some((last, n)) if *last == t => *n += 1,
            _ => out.push((t, 1)),
        }
    }
    out
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Where the vocabulary for `path` is looked for when none is given:
/// `docword.X` pairs with `vocab.X` in the same directory, anything else
/// with `<path>.vocab`.
pub fn default_vocab_path(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    match name.strip_prefix("docword.") {
        Some(rest) => path.with_file_name(format!("vocab.{rest}")),
        None => {
            let mut s = path.as_os_str().to_owned();
            s.push(".vocab");
            PathBuf::from(s)
        }
    }
}

/// Reads one term per line, ignoring a trailing empty line.
pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let mut vocab = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let term = line.trim();
        if term.is_empty() {
            return Err(parse_err(path, i + 1, "empty vocabulary entry"));
        }
        vocab.push(term.to_string());
    }
    Ok(vocab)
}

/// Loads a corpus. `vocab` overrides [`default_vocab_path`]. Without a
/// vocabulary file a UCI corpus gets numbered terms and a lines corpus
/// takes its terms in order of first appearance.
pub fn load_corpus(path: &Path, format: CorpusFormat, vocab: Option<&Path>) -> Result<Corpus> {
    let vocab_path = vocab.map_or_else(|| default_vocab_path(path), Path::to_path_buf);
    let vocab = if vocab.is_some() || vocab_path.exists() {
        Some(read_vocab(&vocab_path)?)
    } else {
        None
    };
    let corpus = match format {
        CorpusFormat::Uci => load_uci(path, vocab)?,
        CorpusFormat::Lines => load_lines(path, vocab)?,
    };
    if corpus.total_tokens() == 0 {
        return Err(Error::EmptyCorpus(format!("{} holds no tokens", path.display())));
    }
    Ok(corpus)
}

/// Token-count triples of a UCI docword file, 0-based, with the header
/// dimensions.
struct UciTriples {
    docs: usize,
    terms: usize,
    triples: Vec<(u32, u32, u32)>,
}

fn read_uci_triples(path: &Path) -> Result<UciTriples> {
    let mut header = [0usize; 3];
    let mut filled = 0;
    let mut triples = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if filled < 3 {
            header[filled] = line
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("expected a header count, found {line:?}")))?;
            filled += 1;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, lineno, "expected `docID termID count`"));
        }
        let mut nums = [0u64; 3];
        for (n, f) in nums.iter_mut().zip(&fields) {
            *n = f
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("not a count: {f:?}")))?;
        }
        let [d, w, n] = nums;
        if d == 0 || d as usize > header[0] {
            return Err(parse_err(path, lineno, format!("docID {d} outside 1..={}", header[0])));
        }
        if w == 0 || w as usize > header[1] {
            return Err(parse_err(path, lineno, format!("termID {w} outside 1..={}", header[1])));
        }
        if n == 0 || n > u32::MAX as u64 {
            return Err(parse_err(path, lineno, format!("count {n} out of range")));
        }
        triples.push((d as u32 - 1, w as u32 - 1, n as u32));
    }
    if filled < 3 {
        return Err(parse_err(path, 0, "missing D, W, NNZ header"));
    }
    if triples.len() != header[2] {
        return Err(parse_err(
            path,
            0,
            format!("header announces {} nonzeros, file has {}", header[2], triples.len()),
        ));
    }
    Ok(UciTriples {
        docs: header[0],
        terms: header[1],
        triples,
    })
}

fn load_uci(path: &Path, vocab: Option<Vec<String>>) -> Result<Corpus> {
    let t = read_uci_triples(path)?;
    let vocab = match vocab {
        Some(v) if v.len() != t.terms => {
            return Err(parse_err(
                path,
                2,
                format!("W = {} but the vocabulary lists {} terms", t.terms, v.len()),
            ))
        }
        Some(v) => v,
        None => numbered_vocab(t.terms),
    };
    let mut docs = vec![Vec::new(); t.docs];
    for (d, w, n) in t.triples {
        docs[d as usize].extend(std::iter::repeat_n(w, n as usize));
    }
    for doc in &mut docs {
        doc.sort_unstable();
    }
    Corpus::new(docs, vocab)
}

/// Without a vocabulary the terms are numbered in order of first appearance.
fn load_lines(path: &Path, vocab: Option<Vec<String>>) -> Result<Corpus> {
    let fixed = vocab.is_some();
    let mut vocab = vocab.unwrap_or_default();
    let docs = {
        let mut index: std::collections::HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if index.len() != vocab.len() {
            return Err(Error::domain("vocabulary lists a term twice"));
        }
        let mut docs = Vec::new();
        for (i, line) in open(path)?.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut doc = Vec::new();
            for tok in line.split_whitespace() {
                let id = match index.get(tok) {
                    Some(&id) => id,
                    None if fixed => {
                        return Err(parse_err(path, i + 1, format!("token {tok:?} not in vocabulary")));
                    }
                    None => {
                        let id = vocab.len() as u32;
                        vocab.push(tok.to_string());
                        index.insert(tok.to_string(), id);
                        id
                    }
                };
                doc.push(id);
            }
            docs.push(doc);
        }
        docs
    };
    Corpus::new(docs, vocab)
}

fn write_vocab(path: &Path, vocab: &[String]) -> Result<()> {
    let mut w = create(path)?;
    for term in vocab {
        writeln!(w, "{term}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `docs` as a UCI docword file.
pub fn write_uci_counts<W: Write>(mut w: W, docs: &[Vec<(u32, u32)>], vocab_size: usize) -> io::Result<()> {
    let nnz: usize = docs.iter().map(Vec::len).sum();
    writeln!(w, "{}", docs.len())?;
    writeln!(w, "{vocab_size}")?;
    writeln!(w, "{nnz}")?;
    for (j, doc) in docs.iter().enumerate() {
        for &(t, n) in doc {
            writeln!(w, "{} {} {n}", j + 1, t + 1)?;
        }
    }
    Ok(())
}

/// Writes the corpus and its vocabulary (to `vocab`, or the default
/// location) so that [`load_corpus`] reads it back unchanged. The `uci`
/// format keeps counts only; it round-trips corpora whose documents are
/// sorted by term, as every UCI-loaded corpus is.
pub fn export_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat, vocab: Option<&Path>) -> Result<()> {
    let vocab_path = vocab.map_or_else(|| default_vocab_path(path), Path::to_path_buf);
    let mut w = create(path)?;
    match format {
        CorpusFormat::Uci => {
            write_uci_counts(&mut w, &corpus.term_counts(), corpus.vocab_size()).map_err(|e| Error::io(path, e))?
        }
        CorpusFormat::Lines => {
            for doc in &corpus.docs {
                let line: Vec<&str> = doc.iter().map(|&t| corpus.vocab[t as usize].as_str()).collect();
                writeln!(w, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_vocab(&vocab_path, &corpus.vocab)
}

// ---------------------------------------------------------------------------

/// What [`filter_vocab`] removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterStats {
    pub removed_terms: usize,
    pub removed_tokens: usize,
    pub dropped_docs: usize,
}

/// Keeps the terms that occur in at least `min_docs` distinct documents,
/// renumbers them densely in their original order and drops documents left
/// empty.
pub fn filter_vocab(corpus: &Corpus, min_docs: usize) -> Result<(Corpus, FilterStats)> {
    if min_docs == 0 {
        return Err(Error::domain("min_docs must be at least 1"));
    }
    let df = corpus.document_frequencies();
    let mut remap = vec![u32::MAX; corpus.vocab_size()];
    let mut vocab = Vec::new();
    for (t, &f) in df.iter().enumerate() {
        if f >= min_docs {
            remap[t] = vocab.len() as u32;
            vocab.push(corpus.vocab[t].clone());
        }
    }
    if vocab.is_empty() {
        return Err(Error::AllTermsFiltered(min_docs));
    }
    let mut stats = FilterStats {
        removed_terms: corpus.vocab_size() - vocab.len(),
        removed_tokens: 0,
        dropped_docs: 0,
    };
    let mut docs = Vec::with_capacity(corpus.num_docs());
    for doc in &corpus.docs {
        let kept: Vec<u32> = doc
            .iter()
            .filter_map(|&t| Some(remap[t as usize]).filter(|&x| x != u32::MAX))
            .collect();
        stats.removed_tokens += doc.len() - kept.len();
        if kept.is_empty() {
            stats.dropped_docs += 1;
        } else {
            docs.push(kept);
        }
    }
    Ok((Corpus { docs, vocab }, stats))
}

// ---------------------------------------------------------------------------

/// Heldout word counts m^test_vj, stored per document as (term, count)
/// pairs sorted by term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCounts {
    docs: Vec<Vec<(u32, u32)>>,
    vocab_size: usize,
}

impl TestCounts {
    pub fn new(docs: Vec<Vec<(u32, u32)>>, vocab_size: usize) -> Result<Self> {
        for (j, doc) in docs.iter().enumerate() {
            for w in doc.windows(2) {
                if w[0].0 >= w[1].0 {
                    return Err(Error::domain(format!("test counts for document {j} are not sorted by term")));
                }
            }
            if doc.iter().any(|&(t, n)| t as usize >= vocab_size || n == 0) {
                return Err(Error::domain(format!("bad test entry in document {j}")));
            }
        }
        Ok(TestCounts { docs, vocab_size })
    }

    pub fn docs(&self) -> &[Vec<(u32, u32)>] {
        &self.docs
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// m^test_··.
    pub fn total(&self) -> u64 {
        self.docs.iter().flatten().map(|&(_, n)| u64::from(n)).sum()
    }

    pub fn doc_totals(&self) -> Vec<u64> {
        self.docs
            .iter()
            .map(|d| d.iter().map(|&(_, n)| u64::from(n)).sum())
            .collect()
    }

    pub fn write_uci(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        write_uci_counts(&mut w, &self.docs, self.vocab_size).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_uci(path: &Path) -> Result<Self> {
        let t = read_uci_triples(path)?;
        let mut docs = vec![Vec::new(); t.docs];
        for (d, w, n) in t.triples {
            docs[d as usize].push((w, n));
        }
        for doc in &mut docs {
            doc.sort_unstable();
            let before = doc.len();
            doc.dedup_by_key(|e| e.0);
            if doc.len() != before {
                return Err(parse_err(path, 0, "a (docID, termID) pair appears twice"));
            }
        }
        TestCounts::new(docs, t.terms)
    }
}

/// Training corpus plus the words held out from it.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldoutSplit {
    pub train: Corpus,
    pub test: TestCounts,
    pub seed: u64,
}

/// Sends a uniformly random ⌈fraction·m_j⌉ tokens of each document to the
/// training corpus and counts the rest as heldout. Training documents come
/// out sorted by term.
pub fn split_heldout(corpus: &Corpus, fraction: f64, rng: &mut RngStream) -> Result<HeldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let seed = rng.seed();
    let mut train = Vec::with_capacity(corpus.num_docs());
    let mut test = Vec::with_capacity(corpus.num_docs());
    for doc in &corpus.docs {
        let m = doc.len();
        let keep = train_size(m, fraction);
        let mut tokens = doc.clone();
        // partial Fisher-Yates: the first `keep` slots are a uniform subset
        for i in 0..keep {
            let pick = rng.random_range(i..m);
            tokens.swap(i, pick);
        }
        let mut held = tokens.split_off(keep);
        tokens.sort_unstable();
        held.sort_unstable();
        train.push(tokens);
        test.push(sparse_counts(&held));
    }
    Ok(HeldoutSplit {
        train: Corpus {
            docs: train,
            vocab: corpus.vocab.clone(),
        },
        test: TestCounts {
            docs: test,
            vocab_size: corpus.vocab_size(),
        },
        seed,
    })
}

/// ⌈fraction·m⌉, guarded against products like 0.3·10 = 3.0000000000000004.
fn train_size(m: usize, fraction: f64) -> usize {
    let x = fraction * m as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (k as usize).min(m)
}

// ---------------------------------------------------------------------------

/// Tokens of a corpus laid out contiguously, with the owning document of
/// each token. Shared by the topic-model samplers.
#[derive(Debug, Clone)]
pub(crate) struct FlatTokens {
    pub words: Vec<u32>,
    pub doc_of: Vec<u32>,
    pub doc_start: Vec<usize>,
}

impl FlatTokens {
    pub fn new(corpus: &Corpus) -> Self {
        let n = corpus.total_tokens();
        let mut words = Vec::with_capacity(n);
        let mut doc_of = Vec::with_capacity(n);
        let mut doc_start = Vec::with_capacity(corpus.num_docs() + 1);
        for (j, doc) in corpus.docs.iter().enumerate() {
            doc_start.push(words.len());
            words.extend_from_slice(doc);
            doc_of.extend(std::iter::repeat_n(j as u32, doc.len()));
        }
        doc_start.push(words.len());
        FlatTokens {
            words,
            doc_of,
            doc_start,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn num_docs(&self) -> usize {
        self.doc_start.len() - 1
    }

    pub fn doc_len(&self, j: usize) -> usize {
        self.doc_start[j + 1] - self.doc_start[j]
    }

    /// Flat index of token i of document j.
    pub fn index(&self, j: usize, i: usize) -> Option<usize> {
        (j < self.num_docs() && i < self.doc_len(j)).then(|| self.doc_start[j] + i)
    }
}
