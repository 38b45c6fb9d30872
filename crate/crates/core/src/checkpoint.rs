//! Plain-text chain checkpoints.
//!
//! ```text
//! bnbp-checkpoint 1
//! model bnbp
//! iteration 2500
//! seed 42
//! rng_position 123456
//! eta 0.05
//! vocab_size 1539
//! docs 536
//! topics 87
//! gamma0 3.2
//! c 1.5
//! hyperpriors 0.01 0.01 0.01 0.01
//! r 0.8 1.1 ...
//! tokens
//! 12:0 12:3 40:0 ...
//! ```
//!
//! An LDA checkpoint carries `alpha` in place of `gamma0`, `c`,
//! `hyperpriors` and `r`. After `tokens` come exactly `docs` lines, one per
//! document, of `term:topic` pairs (0-based); an empty document is an empty
//! line. Floats are written in shortest round-trip form, so a checkpoint
//! restores the chain exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::bnbp_model::Hyperpriors;
use crate::error::{Error, Result};
use crate::rng::RngStream;

const MAGIC: &str = "bnbp-checkpoint 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Bnbp,
    Lda,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Bnbp => "bnbp",
            ModelKind::Lda => "lda",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bnbp" => Ok(ModelKind::Bnbp),
            "lda" => Ok(ModelKind::Lda),
            other => Err(Error::domain(format!("unknown model {other:?} (expected bnbp or lda)"))),
        }
    }
}

/// Model-specific scalars.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Bnbp {
        gamma0: f64,
        c: f64,
        r: Vec<f64>,
        hyper: Hyperpriors,
    },
    Lda {
        alpha: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub seed: u64,
    pub rng_position: u128,
    pub eta: f64,
    pub vocab_size: usize,
    pub topics: usize,
    pub params: ModelParams,
    /// Per document, (term, topic) for each token.
    pub tokens: Vec<Vec<(u32, u32)>>,
}

impl Checkpoint {
    pub fn model(&self) -> ModelKind {
        match self.params {
            ModelParams::Bnbp { .. } => ModelKind::Bnbp,
            ModelParams::Lda { .. } => ModelKind::Lda,
        }
    }

    /// The random stream positioned where the chain stopped.
    pub fn rng(&self) -> RngStream {
        RngStream::at_position(self.seed, self.rng_position)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "model {}", self.model().as_str())?;
        writeln!(w, "iteration {}", self.iteration)?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "rng_position {}", self.rng_position)?;
        writeln!(w, "eta {}", self.eta)?;
        writeln!(w, "vocab_size {}", self.vocab_size)?;
        writeln!(w, "docs {}", self.tokens.len())?;
        writeln!(w, "topics {}", self.topics)?;
        match &self.params {
            ModelParams::Bnbp { gamma0, c, r, hyper } => {
                writeln!(w, "gamma0 {gamma0}")?;
                writeln!(w, "c {c}")?;
                writeln!(w, "hyperpriors {} {} {} {}", hyper.a0, hyper.b0, hyper.e0, hyper.f0)?;
                let mut line = String::from("r");
                for x in r {
                    write!(line, " {x}").expect("writing to a String");
                }
                writeln!(w, "{line}")?;
            }
            ModelParams::Lda { alpha } => writeln!(w, "alpha {alpha}")?,
        }
        writeln!(w, "tokens")?;
        let mut line = String::new();
        for doc in &self.tokens {
            line.clear();
            for (i, (v, k)) in doc.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                write!(line, "{v}:{k}").expect("writing to a String");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(Error::Checkpoint(format!("line {}: {e}", i + 1))),
                None => Err(Error::Checkpoint(format!("ended before {what}"))),
            }
        };
        let (_, magic) = next("the header")?;
        if magic.trim() != MAGIC {
            return Err(Error::Checkpoint(format!("not a checkpoint (first line {magic:?})")));
        }
        let mut fields = std::collections::HashMap::new();
        loop {
            let (no, line) = next("the tokens section")?;
            let line = line.trim().to_string();
            if line == "tokens" {
                break;
            }
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("line {no}: expected `key value`")))?;
            if fields.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Checkpoint(format!("line {no}: duplicate key {key:?}")));
            }
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key:?}")))
        };
        fn num<T: FromStr>(key: &str, s: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for {key:?}: {s:?}")))
        }
        let model: ModelKind = get("model")?.parse()?;
        let docs: usize = num("docs", get("docs")?)?;
        let topics: usize = num("topics", get("topics")?)?;
        let vocab_size: usize = num("vocab_size", get("vocab_size")?)?;
        let params = match model {
            ModelKind::Bnbp => {
                let r = get("r")?
                    .split_whitespace()
                    .map(|x| num("r", x))
                    .collect::<Result<Vec<f64>>>()?;
                let h = get("hyperpriors")?
                    .split_whitespace()
                    .map(|x| num("hyperpriors", x))
                    .collect::<Result<Vec<f64>>>()?;
                if h.len() != 4 {
                    return Err(Error::Checkpoint("hyperpriors needs four values".into()));
                }
                ModelParams::Bnbp {
                    gamma0: num("gamma0", get("gamma0")?)?,
                    c: num("c", get("c")?)?,
                    r,
                    hyper: Hyperpriors {
                        a0: h[0],
                        b0: h[1],
                        e0: h[2],
                        f0: h[3],
                    },
                }
            }
            ModelKind::Lda => ModelParams::Lda {
                alpha: num("alpha", get("alpha")?)?,
            },
        };
        let mut tokens = Vec::with_capacity(docs);
        for _ in 0..docs {
            let (no, line) = next("the last document")?;
            let doc = line
                .split_whitespace()
                .map(|pair| {
                    let (v, k) = pair
                        .split_once(':')
                        .ok_or_else(|| Error::Checkpoint(format!("line {no}: bad token {pair:?}")))?;
                    let v: u32 = num("term", v)?;
                    let k: u32 = num("topic", k)?;
                    if v as usize >= vocab_size || k as usize >= topics {
                        return Err(Error::Checkpoint(format!("line {no}: token {pair:?} out of range")));
                    }
                    Ok((v, k))
                })
                .collect::<Result<Vec<_>>>()?;
            tokens.push(doc);
        }
        if let Ok((no, extra)) = next("") {
            if !extra.trim().is_empty() {
                return Err(Error::Checkpoint(format!("line {no}: trailing content")));
            }
        }
        Ok(Checkpoint {
            iteration: num("iteration", get("iteration")?)?,
            seed: num("seed", get("seed")?)?,
            rng_position: num("rng_position", get("rng_position")?)?,
            eta: num("eta", get("eta")?)?,
            vocab_size,
            topics,
            params,
            tokens,
        })
    }

    /// Per-document term lists and topic labels.
    pub(crate) fn split_tokens(&self) -> (Vec<Vec<u32>>, Vec<Vec<usize>>) {
        self.tokens
            .iter()
            .map(|d| d.iter().map(|&(v, k)| (v, k as usize)).unzip())
            .unzip()
    }
}
