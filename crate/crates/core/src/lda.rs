//! Collapsed Gibbs sampling for LDA with a fixed number of topics K and a
//! symmetric Dirichlet(α/K) prior on document proportions.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint::{Checkpoint, ModelParams};
use crate::corpus::{Corpus, FlatTokens};
use crate::distributions::{categorical_unchecked, dirichlet_into};
use crate::error::{Error, Result};
use crate::eval::{DrawSink, PosteriorDraw};
use crate::bnbp_model::TrainConfig;
use crate::rng::RngStream;
use crate::trace::{ChainTrace, TraceRow};

const UNASSIGNED: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct LdaState {
    tokens: FlatTokens,
    vocab_size: usize,
    topics: usize,
    alpha: f64,
    eta: f64,
    z: Vec<u32>,
    order: Vec<u32>,
    n_vk: Vec<u32>,
    n_jk: Vec<u32>,
    n_k: Vec<u32>,
    removed: Option<usize>,
    weights: Vec<f64>,
    iteration: usize,
}

impl LdaState {
    /// Each token gets a uniformly random topic.
    pub fn new(corpus: &Corpus, topics: usize, alpha: f64, eta: f64, rng: &mut RngStream) -> Result<Self> {
        if topics == 0 {
            return Err(Error::domain("LDA needs at least one topic"));
        }
        let z: Vec<Vec<usize>> = corpus
            .docs()
            .iter()
            .map(|d| d.iter().map(|_| rng.random_range(0..topics)).collect())
            .collect();
        Self::from_assignments(corpus, &z, topics, alpha, eta)
    }

    pub fn from_assignments(corpus: &Corpus, z: &[Vec<usize>], topics: usize, alpha: f64, eta: f64) -> Result<Self> {
        if topics == 0 {
            return Err(Error::domain("LDA needs at least one topic"));
        }
        if !(alpha > 0.0 && alpha.is_finite() && eta > 0.0 && eta.is_finite()) {
            return Err(Error::domain(format!("alpha and eta must be positive (got {alpha}, {eta})")));
        }
        if corpus.vocab_size() == 0 {
            return Err(Error::EmptyCorpus("vocabulary is empty".into()));
        }
        if z.len() != corpus.num_docs() {
            return Err(Error::LengthMismatch {
                expected: corpus.num_docs(),
                got: z.len(),
            });
        }
        let tokens = FlatTokens::new(corpus);
        let mut flat_z = Vec::with_capacity(tokens.len());
        for (labels, doc) in z.iter().zip(corpus.docs()) {
            if labels.len() != doc.len() {
                return Err(Error::LengthMismatch {
                    expected: doc.len(),
                    got: labels.len(),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&k| k >= topics) {
                return Err(Error::InconsistentPartition(format!("topic {bad} with K = {topics}")));
            }
            flat_z.extend(labels.iter().map(|&k| k as u32));
        }
        let mut state = LdaState {
            vocab_size: corpus.vocab_size(),
            topics,
            alpha,
            eta,
            order: (0..tokens.len() as u32).collect(),
            n_vk: vec![0; corpus.vocab_size() * topics],
            n_jk: vec![0; corpus.num_docs() * topics],
            n_k: vec![0; topics],
            z: flat_z,
            removed: None,
            weights: Vec::with_capacity(topics),
            iteration: 0,
            tokens,
        };
        for t in 0..state.z.len() {
            state.add(t, state.z[t] as usize);
        }
        Ok(state)
    }

    pub fn num_topics(&self) -> usize {
        self.topics
    }

    pub fn num_docs(&self) -> usize {
        self.tokens.num_docs()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn topic_totals(&self) -> &[u32] {
        &self.n_k
    }

    pub fn doc_topic_counts(&self, j: usize) -> &[u32] {
        &self.n_jk[j * self.topics..(j + 1) * self.topics]
    }

    pub fn term_topic_counts(&self, v: usize) -> &[u32] {
        &self.n_vk[v * self.topics..(v + 1) * self.topics]
    }

    fn add(&mut self, t: usize, k: usize) {
        let (v, j) = (self.tokens.words[t] as usize, self.tokens.doc_of[t] as usize);
        self.z[t] = k as u32;
        self.n_vk[v * self.topics + k] += 1;
        self.n_jk[j * self.topics + k] += 1;
        self.n_k[k] += 1;
    }

    fn subtract(&mut self, t: usize) {
        let k = self.z[t] as usize;
        let (v, j) = (self.tokens.words[t] as usize, self.tokens.doc_of[t] as usize);
        self.z[t] = UNASSIGNED;
        self.n_vk[v * self.topics + k] -= 1;
        self.n_jk[j * self.topics + k] -= 1;
        self.n_k[k] -= 1;
    }

    fn token_index(&self, j: usize, i: usize) -> Result<usize> {
        self.tokens
            .index(j, i)
            .ok_or_else(|| Error::domain(format!("no token ({j}, {i})")))
    }

    pub fn remove_token(&mut self, j: usize, i: usize) -> Result<()> {
        let t = self.token_index(j, i)?;
        if self.removed.is_some() {
            return Err(Error::InconsistentPartition("another token is already removed".into()));
        }
        self.subtract(t);
        self.removed = Some(t);
        Ok(())
    }

    pub fn assign_token(&mut self, j: usize, i: usize, k: usize) -> Result<()> {
        let t = self.token_index(j, i)?;
        if self.removed != Some(t) {
            return Err(Error::StaleCounts { doc: j, token: i });
        }
        if k >= self.topics {
            return Err(Error::InconsistentPartition(format!("topic {k} with K = {}", self.topics)));
        }
        self.add(t, k);
        self.removed = None;
        Ok(())
    }

    /// Weights (η + n_vk)/(Vη + n_k) · (n_jk + α/K) of the removed token.
    pub fn lda_token_conditional(&mut self, j: usize, i: usize) -> Result<Vec<f64>> {
        let t = self.token_index(j, i)?;
        if self.removed != Some(t) {
            return Err(Error::StaleCounts { doc: j, token: i });
        }
        self.fill_weights(j, self.tokens.words[t] as usize);
        Ok(self.weights.clone())
    }

    fn fill_weights(&mut self, j: usize, v: usize) -> f64 {
        let k = self.topics;
        let eta = self.eta;
        let v_eta = self.vocab_size as f64 * eta;
        let prior = self.alpha / k as f64;
        let nv = &self.n_vk[v * k..(v + 1) * k];
        let nj = &self.n_jk[j * k..(j + 1) * k];
        let w = &mut self.weights;
        w.clear();
        let mut total = 0.0;
        for kk in 0..k {
            let x = (eta + nv[kk] as f64) / (v_eta + self.n_k[kk] as f64) * (nj[kk] as f64 + prior);
            total += x;
            w.push(x);
        }
        total
    }

    /// Resamples every token once in a fresh uniformly random order.
    pub fn gibbs_sweep(&mut self, rng: &mut RngStream) -> Result<()> {
        if self.removed.is_some() {
            return Err(Error::InconsistentPartition("a token is still removed".into()));
        }
        let mut order = std::mem::take(&mut self.order);
        for (i, t) in order.iter_mut().enumerate() {
            *t = i as u32;
        }
        order.shuffle(rng);
        for &t in &order {
            let t = t as usize;
            self.subtract(t);
            let total = self.fill_weights(self.tokens.doc_of[t] as usize, self.tokens.words[t] as usize);
            let k = categorical_unchecked(&self.weights, total, rng);
            self.add(t, k);
        }
        self.order = order;
        self.iteration += 1;
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        let k = self.topics;
        let mut n_vk = vec![0u32; self.n_vk.len()];
        let mut n_jk = vec![0u32; self.n_jk.len()];
        let mut n_k = vec![0u32; k];
        for (t, &z) in self.z.iter().enumerate() {
            if z == UNASSIGNED {
                if self.removed != Some(t) {
                    return Err(Error::InconsistentPartition(format!("token {t} unassigned")));
                }
                continue;
            }
            let z = z as usize;
            if z >= k {
                return Err(Error::InconsistentPartition(format!("token {t} has topic {z}")));
            }
            n_vk[self.tokens.words[t] as usize * k + z] += 1;
            n_jk[self.tokens.doc_of[t] as usize * k + z] += 1;
            n_k[z] += 1;
        }
        if n_vk != self.n_vk || n_jk != self.n_jk || n_k != self.n_k {
            return Err(Error::InconsistentPartition("count tables disagree with assignments".into()));
        }
        Ok(())
    }

    /// φ_k ~ Dir(η + n_vk) over the terms and θ_j ~ Dir(n_jk + α/K).
    pub fn posterior_point_draw(&self, rng: &mut RngStream) -> Result<PosteriorDraw> {
        let (k, v) = (self.topics, self.vocab_size);
        let mut phi = Vec::with_capacity(k * v);
        let mut row = Vec::with_capacity(v.max(k));
        for kk in 0..k {
            dirichlet_into((0..v).map(|t| self.eta + self.n_vk[t * k + kk] as f64), &mut row, rng);
            phi.extend_from_slice(&row);
        }
        let prior = self.alpha / k as f64;
        let mut theta = Vec::with_capacity(self.num_docs() * k);
        for j in 0..self.num_docs() {
            dirichlet_into(self.doc_topic_counts(j).iter().map(|&n| n as f64 + prior), &mut row, rng);
            theta.extend_from_slice(&row);
        }
        PosteriorDraw::new(k, v, self.num_docs(), phi, theta)
    }

    /// K is fixed; the BNBP-only columns read 0.
    pub fn trace_row(&self) -> TraceRow {
        TraceRow {
            iter: self.iteration,
            k: self.topics,
            gamma0: 0.0,
            c: 0.0,
            r_dot: 0.0,
        }
    }

    pub fn token_pairs(&self) -> Vec<Vec<(u32, u32)>> {
        (0..self.num_docs())
            .map(|j| {
                let range = self.tokens.doc_start[j]..self.tokens.doc_start[j + 1];
                self.tokens.words[range.clone()]
                    .iter()
                    .zip(&self.z[range])
                    .map(|(&v, &k)| (v, k))
                    .collect()
            })
            .collect()
    }

    pub fn to_checkpoint(&self, rng: &RngStream) -> Result<Checkpoint> {
        if self.removed.is_some() {
            return Err(Error::Checkpoint("a token is removed from the counts".into()));
        }
        Ok(Checkpoint {
            iteration: self.iteration,
            seed: rng.seed(),
            rng_position: rng.position(),
            eta: self.eta,
            vocab_size: self.vocab_size,
            topics: self.topics,
            params: ModelParams::Lda { alpha: self.alpha },
            tokens: self.token_pairs(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ModelParams::Lda { alpha } = ck.params else {
            return Err(Error::Checkpoint("not an LDA checkpoint".into()));
        };
        let (docs, z) = ck.split_tokens();
        let corpus = Corpus::with_numbered_vocab(docs, ck.vocab_size)?;
        let mut state = Self::from_assignments(&corpus, &z, ck.topics, alpha, ck.eta)?;
        state.iteration = ck.iteration;
        Ok(state)
    }
}

/// Runs `cfg.iters` sweeps from the current state, collecting draws in the
/// window exactly as the BNBP chain does.
pub fn run_lda_chain(
    state: &mut LdaState,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    sink: &mut dyn DrawSink,
) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut trace = ChainTrace::new();
    trace.push(state.trace_row());
    for it in 1..=cfg.iters {
        state.gibbs_sweep(rng)?;
        trace.push(state.trace_row());
        if sink.wants_draws() && cfg.collects_at(it) {
            sink.accept(state.posterior_point_draw(rng)?);
        }
    }
    Ok(trace)
}

pub fn lda_train(
    corpus: &Corpus,
    topics: usize,
    alpha: f64,
    eta: f64,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    sink: &mut dyn DrawSink,
) -> Result<(LdaState, ChainTrace)> {
    let mut state = LdaState::new(corpus, topics, alpha, eta, rng)?;
    let trace = run_lda_chain(&mut state, cfg, rng, sink)?;
    Ok((state, trace))
}
