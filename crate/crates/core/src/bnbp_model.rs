//! The BNBP topic model and its fully collapsed Gibbs sampler.
//!
//! Topics, document weights and the beta process are integrated out; the
//! sampler state is the token-topic assignment plus the count tables
//! n_vk, n_jk, n_k. The hyperparameters γ0, r_j and c are resampled after
//! every sweep through the auxiliary p_k, Q(Ω\D_J) and CRT counts l_jk.
//!
//! Count tables are flat with a fixed topic stride `cap` that doubles when a
//! new topic does not fit. Topic labels are dense: an emptied topic is
//! deleted at once and the highest label moves into its slot.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint::{Checkpoint, ModelParams};
use crate::corpus::{Corpus, FlatTokens};
use crate::distributions::{
    categorical_log, categorical_unchecked, crt_sum_sample, beta, dirichlet_into, gamma_variate,
    log_sum_exp, logbeta_sample, BetaDraw, LogBetaParams,
};
use crate::error::{Error, Result};
use crate::eval::{DrawSink, PosteriorDraw};
use crate::partition::BnbpParams;
use crate::rng::RngStream;
use crate::special::{digamma, ln_gamma};
use crate::trace::{ChainTrace, TraceRow};

pub(crate) const UNASSIGNED: u32 = u32::MAX;
const INITIAL_CAP: usize = 16;

/// Number of points in the grid for c.
pub const C_GRID_POINTS: usize = 99;

/// The grid 1/(1+c) = 0.01, 0.02, ..., 0.99, as values of c.
pub fn c_grid() -> Vec<f64> {
    (1..=C_GRID_POINTS)
        .map(|i| {
            let u = i as f64 / 100.0;
            (1.0 - u) / u
        })
        .collect()
}

/// Gamma hyperpriors: r_j ~ Gamma(a0, 1/b0), γ0 ~ Gamma(e0, 1/f0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperpriors {
    pub a0: f64,
    pub b0: f64,
    pub e0: f64,
    pub f0: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Hyperpriors {
            a0: 0.01,
            b0: 0.01,
            e0: 0.01,
            f0: 0.01,
        }
    }
}

impl Hyperpriors {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a0, self.b0, self.e0, self.f0];
        if all.iter().all(|&x| x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::domain(format!("hyperpriors must be positive: {self:?}")))
        }
    }
}

/// Iteration counts for a chain. The last `collect` iterations form the
/// collection window; within it every `thin`-th iteration, counted back
/// from the final one, yields a posterior draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub iters: usize,
    pub collect: usize,
    pub thin: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 2500,
            collect: 1500,
            thin: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::domain("thinning interval must be at least 1"));
        }
        if self.collect > self.iters {
            return Err(Error::domain(format!(
                "cannot collect {} of {} iterations",
                self.collect, self.iters
            )));
        }
        Ok(())
    }

    /// Burn-in length implied by the collection window.
    pub fn burnin(&self) -> usize {
        self.iters - self.collect
    }

    /// Whether iteration `it` (1-based) yields a draw.
    pub fn collects_at(&self, it: usize) -> bool {
        it > self.burnin() && it <= self.iters && (self.iters - it).is_multiple_of(self.thin)
    }
}

fn clamp_positive(x: f64) -> f64 {
    x.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone)]
pub struct TopicModelState {
    tokens: FlatTokens,
    vocab_size: usize,
    z: Vec<u32>,
    order: Vec<u32>,
    cap: usize,
    topics: usize,
    n_vk: Vec<u32>,
    n_jk: Vec<u32>,
    n_k: Vec<u32>,
    // n_k / (c + n_k + r·), kept in step with n_k, c and r·
    size_factor: Vec<f64>,
    params: BnbpParams,
    r_dot: f64,
    eta: f64,
    hyper: Hyperpriors,
    p: Vec<BetaDraw>,
    p_fresh: bool,
    q_rest: f64,
    l_jk: Vec<u32>,
    l_width: usize,
    removed: Option<usize>,
    weights: Vec<f64>,
    iteration: usize,
}

impl TopicModelState {
    /// Every token in one shared topic, γ0 = c = r_j = 1.
    pub fn new(corpus: &Corpus, eta: f64, hyper: Hyperpriors) -> Result<Self> {
        let z: Vec<Vec<usize>> = corpus.docs().iter().map(|d| vec![0; d.len()]).collect();
        let params = BnbpParams::uniform(1.0, 1.0, 1.0, corpus.num_docs())?;
        Self::from_assignments(corpus, &z, eta, params, hyper)
    }

    /// State with the given labels, renumbered by first appearance.
    pub fn from_assignments(
        corpus: &Corpus,
        z: &[Vec<usize>],
        eta: f64,
        params: BnbpParams,
        hyper: Hyperpriors,
    ) -> Result<Self> {
        Self::build(corpus, z, eta, params, hyper, true)
    }

    fn build(
        corpus: &Corpus,
        z: &[Vec<usize>],
        eta: f64,
        params: BnbpParams,
        hyper: Hyperpriors,
        renumber: bool,
    ) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::domain(format!("eta must be positive, got {eta}")));
        }
        hyper.validate()?;
        if corpus.vocab_size() == 0 {
            return Err(Error::EmptyCorpus("vocabulary is empty".into()));
        }
        if params.num_groups() != corpus.num_docs() {
            return Err(Error::LengthMismatch {
                expected: corpus.num_docs(),
                got: params.num_groups(),
            });
        }
        if z.len() != corpus.num_docs() {
            return Err(Error::LengthMismatch {
                expected: corpus.num_docs(),
                got: z.len(),
            });
        }
        let tokens = FlatTokens::new(corpus);
        let mut relabel = std::collections::HashMap::new();
        let mut flat_z = Vec::with_capacity(tokens.len());
        for (j, (labels, doc)) in z.iter().zip(corpus.docs()).enumerate() {
            if labels.len() != doc.len() {
                return Err(Error::InconsistentPartition(format!(
                    "document {j} has {} tokens but {} labels",
                    doc.len(),
                    labels.len()
                )));
            }
            for &label in labels {
                let next = relabel.len();
                let k = if renumber { next } else { label };
                flat_z.push(*relabel.entry(label).or_insert(k) as u32);
            }
        }
        let topics = relabel.len();
        if !renumber && relabel.keys().any(|&k| k >= topics) {
            return Err(Error::InconsistentPartition("topic labels are not dense".into()));
        }
        let cap = topics.next_power_of_two().max(INITIAL_CAP);
        let n = tokens.len();
        let mut state = TopicModelState {
            vocab_size: corpus.vocab_size(),
            z: flat_z,
            order: (0..n as u32).collect(),
            cap,
            topics,
            n_vk: vec![0; corpus.vocab_size() * cap],
            n_jk: vec![0; corpus.num_docs() * cap],
            n_k: vec![0; cap],
            size_factor: vec![0.0; cap],
            r_dot: params.r_dot(),
            params,
            eta,
            hyper,
            p: Vec::new(),
            p_fresh: false,
            q_rest: 0.0,
            l_jk: Vec::new(),
            l_width: 0,
            removed: None,
            weights: Vec::new(),
            iteration: 0,
            tokens,
        };
        for t in 0..n {
            let (v, j, k) = (state.tokens.words[t] as usize, state.tokens.doc_of[t] as usize, state.z[t] as usize);
            state.n_vk[v * cap + k] += 1;
            state.n_jk[j * cap + k] += 1;
            state.n_k[k] += 1;
        }
        state.refresh_size_factors();
        Ok(state)
    }

    fn refresh_size_factors(&mut self) {
        self.r_dot = self.params.r_dot();
        let c = self.params.c();
        for k in 0..self.topics {
            let n = self.n_k[k] as f64;
            self.size_factor[k] = n / (c + n + self.r_dot);
        }
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

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn params(&self) -> &BnbpParams {
        &self.params
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn hyperpriors(&self) -> Hyperpriors {
        self.hyper
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// n_·k for the live topics.
    pub fn topic_totals(&self) -> &[u32] {
        &self.n_k[..self.topics]
    }

    /// n_jk for the live topics.
    pub fn doc_topic_counts(&self, j: usize) -> &[u32] {
        &self.n_jk[j * self.cap..j * self.cap + self.topics]
    }

    /// n_vk for the live topics.
    pub fn term_topic_counts(&self, v: usize) -> &[u32] {
        &self.n_vk[v * self.cap..v * self.cap + self.topics]
    }

    /// Topic labels of document j; a removed token reads `u32::MAX`.
    pub fn doc_assignments(&self, j: usize) -> &[u32] {
        &self.z[self.tokens.doc_start[j]..self.tokens.doc_start[j + 1]]
    }

    pub fn doc_terms(&self, j: usize) -> &[u32] {
        &self.tokens.words[self.tokens.doc_start[j]..self.tokens.doc_start[j + 1]]
    }

    /// Latest draws of p_k, one per live topic when fresh.
    pub fn topic_probabilities(&self) -> &[BetaDraw] {
        &self.p
    }

    /// Latest draw of Q(Ω\D_J).
    pub fn q_rest(&self) -> f64 {
        self.q_rest
    }

    /// Latest CRT counts l_jk as a J × width table, row-major.
    pub fn crt_counts(&self) -> (&[u32], usize) {
        (&self.l_jk, self.l_width)
    }

    /// Replaces γ0, c and r_j.
    pub fn set_params(&mut self, params: BnbpParams) -> Result<()> {
        if params.num_groups() != self.num_docs() {
            return Err(Error::LengthMismatch {
                expected: self.num_docs(),
                got: params.num_groups(),
            });
        }
        self.params = params;
        self.p_fresh = false;
        self.refresh_size_factors();
        Ok(())
    }

    /// Snapshot of the chain together with the position of `rng`.
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
            params: ModelParams::Bnbp {
                gamma0: self.params.gamma0(),
                c: self.params.c(),
                r: self.params.r().to_vec(),
                hyper: self.hyper,
            },
            tokens: self.token_pairs(),
        })
    }

    /// Rebuilds the state a checkpoint was taken from, labels included.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ModelParams::Bnbp { gamma0, c, r, hyper } = &ck.params else {
            return Err(Error::Checkpoint("not a BNBP checkpoint".into()));
        };
        let (docs, z) = ck.split_tokens();
        let corpus = Corpus::with_numbered_vocab(docs, ck.vocab_size)?;
        let params = BnbpParams::new(*gamma0, *c, r.clone())?;
        let mut state = Self::build(&corpus, &z, ck.eta, params, *hyper, false)?;
        if state.topics != ck.topics {
            return Err(Error::Checkpoint(format!(
                "header says {} topics, tokens use {}",
                ck.topics, state.topics
            )));
        }
        state.iteration = ck.iteration;
        Ok(state)
    }

    /// Recomputes all counts from the assignments and compares.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InconsistentPartition(msg));
        let cap = self.cap;
        let mut n_vk = vec![0u32; self.vocab_size * cap];
        let mut n_jk = vec![0u32; self.num_docs() * cap];
        let mut n_k = vec![0u32; cap];
        for (t, &k) in self.z.iter().enumerate() {
            if k == UNASSIGNED {
                if self.removed != Some(t) {
                    return bad(format!("token {t} unassigned but not marked removed"));
                }
                continue;
            }
            let k = k as usize;
            if k >= self.topics {
                return bad(format!("token {t} has label {k} >= K = {}", self.topics));
            }
            n_vk[self.tokens.words[t] as usize * cap + k] += 1;
            n_jk[self.tokens.doc_of[t] as usize * cap + k] += 1;
            n_k[k] += 1;
        }
        if n_vk != self.n_vk || n_jk != self.n_jk || n_k != self.n_k {
            return bad("count tables disagree with assignments".into());
        }
        if let Some(k) = self.n_k[..self.topics].iter().position(|&n| n == 0) {
            return bad(format!("live topic {k} is empty"));
        }
        let c = self.params.c();
        let r_dot = self.params.r_dot();
        if self.r_dot != r_dot {
            return bad("cached r_dot is stale".into());
        }
        for k in 0..self.topics {
            let n = self.n_k[k] as f64;
            if self.size_factor[k] != n / (c + n + r_dot) {
                return bad(format!("cached size factor of topic {k} is stale"));
            }
        }
        Ok(())
    }

    // -- single-token moves -------------------------------------------------

    fn token_index(&self, j: usize, i: usize) -> Result<usize> {
        self.tokens
            .index(j, i)
            .ok_or_else(|| Error::domain(format!("no token ({j}, {i})")))
    }

    fn decrement(&mut self, t: usize) {
        let k = self.z[t] as usize;
        let (v, j) = (self.tokens.words[t] as usize, self.tokens.doc_of[t] as usize);
        self.z[t] = UNASSIGNED;
        self.n_vk[v * self.cap + k] -= 1;
        self.n_jk[j * self.cap + k] -= 1;
        self.n_k[k] -= 1;
        if self.n_k[k] == 0 {
            self.delete_topic(k);
        } else {
            let n = self.n_k[k] as f64;
            self.size_factor[k] = n / (self.params.c() + n + self.r_dot);
        }
    }

    fn increment(&mut self, t: usize, k: usize) {
        if k == self.topics {
            self.open_topic();
        }
        let (v, j) = (self.tokens.words[t] as usize, self.tokens.doc_of[t] as usize);
        self.z[t] = k as u32;
        self.n_vk[v * self.cap + k] += 1;
        self.n_jk[j * self.cap + k] += 1;
        self.n_k[k] += 1;
        let n = self.n_k[k] as f64;
        self.size_factor[k] = n / (self.params.c() + n + self.r_dot);
    }

    fn delete_topic(&mut self, k: usize) {
        let last = self.topics - 1;
        let cap = self.cap;
        if k != last {
            for table in [&mut self.n_vk, &mut self.n_jk] {
                for row in table.chunks_exact_mut(cap) {
                    row[k] = row[last];
                    row[last] = 0;
                }
            }
            self.n_k[k] = self.n_k[last];
            self.size_factor[k] = self.size_factor[last];
            let (from, to) = (last as u32, k as u32);
            for z in &mut self.z {
                if *z == from {
                    *z = to;
                }
            }
        }
        self.n_k[last] = 0;
        self.size_factor[last] = 0.0;
        self.topics -= 1;
        self.p_fresh = false;
    }

    fn open_topic(&mut self) {
        if self.topics == self.cap {
            self.grow(self.cap * 2);
        }
        self.topics += 1;
        self.p_fresh = false;
    }

    fn grow(&mut self, new_cap: usize) {
        let old = self.cap;
        for table in [&mut self.n_vk, &mut self.n_jk] {
            let rows = table.len() / old;
            let mut wide = vec![0u32; rows * new_cap];
            for (src, dst) in table.chunks_exact(old).zip(wide.chunks_exact_mut(new_cap)) {
                dst[..old].copy_from_slice(src);
            }
            *table = wide;
        }
        self.n_k.resize(new_cap, 0);
        self.size_factor.resize(new_cap, 0.0);
        self.cap = new_cap;
    }

    /// Takes token i of document j out of the count tables.
    pub fn remove_token(&mut self, j: usize, i: usize) -> Result<()> {
        let t = self.token_index(j, i)?;
        if self.removed.is_some() {
            return Err(Error::InconsistentPartition("another token is already removed".into()));
        }
        self.decrement(t);
        self.removed = Some(t);
        self.p_fresh = false;
        Ok(())
    }

    /// Puts the removed token back with topic `k`; `k == K` opens a topic.
    pub fn assign_token(&mut self, j: usize, i: usize, k: usize) -> Result<()> {
        let t = self.token_index(j, i)?;
        if self.removed != Some(t) {
            return Err(Error::StaleCounts { doc: j, token: i });
        }
        if k > self.topics {
            return Err(Error::InconsistentPartition(format!("topic {k} exceeds K = {}", self.topics)));
        }
        self.increment(t, k);
        self.removed = None;
        Ok(())
    }

    /// Unnormalised conditional weights of the removed token (j, i): one
    /// per live topic, then the new-topic weight.
    pub fn token_conditional(&mut self, j: usize, i: usize) -> Result<Vec<f64>> {
        let t = self.token_index(j, i)?;
        if self.removed != Some(t) {
            return Err(Error::StaleCounts { doc: j, token: i });
        }
        self.fill_weights(j, self.tokens.words[t] as usize);
        Ok(self.weights.clone())
    }

    /// Writes the conditional weights into `self.weights`, returns their sum.
    fn fill_weights(&mut self, j: usize, v: usize) -> f64 {
        let k = self.topics;
        let cap = self.cap;
        let eta = self.eta;
        let v_eta = self.vocab_size as f64 * eta;
        let rj = self.params.r()[j];
        let nv = &self.n_vk[v * cap..v * cap + k];
        let nj = &self.n_jk[j * cap..j * cap + k];
        let nk = &self.n_k[..k];
        let sf = &self.size_factor[..k];
        let w = &mut self.weights;
        w.resize(k + 1, 0.0);
        for ((((x, &a), &b), &s), &n) in w[..k].iter_mut().zip(nv).zip(nk).zip(sf).zip(nj) {
            *x = (eta + a as f64) / (v_eta + b as f64) * s * (n as f64 + rj);
        }
        w[k] = (1.0 / self.vocab_size as f64) * (self.params.gamma0() / (self.params.c() + self.r_dot)) * rj;
        sum_lanes(w)
    }

    /// The same weights in log space, for when the linear ones underflow.
    fn log_weights(&self, j: usize, v: usize) -> Vec<f64> {
        let cap = self.cap;
        let (c, r_dot, eta) = (self.params.c(), self.r_dot, self.eta);
        let rj = self.params.r()[j];
        let v_eta = self.vocab_size as f64 * eta;
        let mut out: Vec<f64> = (0..self.topics)
            .map(|k| {
                let nk = self.n_k[k] as f64;
                (eta + self.n_vk[v * cap + k] as f64).ln() - (v_eta + nk).ln() + nk.ln() - (c + nk + r_dot).ln()
                    + (self.n_jk[j * cap + k] as f64 + rj).ln()
            })
            .collect();
        out.push(-(self.vocab_size as f64).ln() + self.params.gamma0().ln() - (c + r_dot).ln() + rj.ln());
        out
    }

    fn resample(&mut self, t: usize, rng: &mut RngStream) {
        self.decrement(t);
        let (j, v) = (self.tokens.doc_of[t] as usize, self.tokens.words[t] as usize);
        let total = self.fill_weights(j, v);
        let k = if total > f64::MIN_POSITIVE && total.is_finite() {
            categorical_unchecked(&self.weights, total, rng)
        } else {
            categorical_log(&self.log_weights(j, v), rng).expect("new-topic weight is positive")
        };
        self.increment(t, k);
    }

    /// Resamples every token once in a fresh uniformly random order.
    pub fn gibbs_sweep(&mut self, rng: &mut RngStream) -> Result<()> {
        if let Some(t) = self.removed {
            let j = self.tokens.doc_of[t] as usize;
            return Err(Error::InconsistentPartition(format!(
                "token {} of document {j} is still removed",
                t - self.tokens.doc_start[j]
            )));
        }
        self.refresh_size_factors();
        let mut order = std::mem::take(&mut self.order);
        // Reset first so the visiting order depends only on the stream.
        for (i, t) in order.iter_mut().enumerate() {
            *t = i as u32;
        }
        order.shuffle(rng);
        for &t in &order {
            self.resample(t as usize, rng);
        }
        self.order = order;
        self.p_fresh = false;
        Ok(())
    }

    // -- hyperparameters ----------------------------------------------------

    /// γ0, then p_k and Q(Ω\D_J), then l_jk, then r_j.
    pub fn update_hyperparameters(&mut self, rng: &mut RngStream) -> Result<()> {
        let k = self.topics;
        let c = self.params.c();
        let r_dot = self.params.r_dot();
        let h = self.hyper;

        let rate = h.f0 + digamma(c + r_dot) - digamma(c);
        let gamma0 = clamp_positive(gamma_variate(h.e0 + k as f64, 1.0 / rate, rng));
        self.params.set_gamma0(gamma0)?;

        self.p.clear();
        for kk in 0..k {
            self.p.push(beta(self.n_k[kk] as f64, c + r_dot, rng)?);
        }
        self.q_rest = logbeta_sample(LogBetaParams::new(gamma0, c + r_dot)?, rng);

        self.l_width = k;
        self.l_jk.clear();
        let mut l_sums = vec![0u64; self.num_docs()];
        for (j, l_sum) in l_sums.iter_mut().enumerate() {
            let rj = self.params.r()[j];
            for kk in 0..k {
                let n = self.n_jk[j * self.cap + kk];
                let l = if n == 0 { 0 } else { crt_sum_sample(n as u64, rj, rng) };
                self.l_jk.push(l as u32);
                *l_sum += l;
            }
        }

        let ln_one_minus_p: f64 = self.p.iter().map(|d| d.ln_one_minus_p).sum();
        let rate = h.b0 + self.q_rest - ln_one_minus_p;
        for (j, &l) in l_sums.iter().enumerate() {
            let rj = clamp_positive(gamma_variate(h.a0 + l as f64, 1.0 / rate, rng));
            self.params.set_r(j, rj)?;
        }
        self.refresh_size_factors();
        self.p_fresh = true;
        Ok(())
    }

    /// Normalised log-probabilities of the c grid under the current state.
    /// Only the c-dependent factors of the joint law enter.
    pub fn c_grid_log_posterior(&self) -> Vec<(f64, f64)> {
        let gamma0 = self.params.gamma0();
        let r_dot = self.params.r_dot();
        let k = self.topics as f64;
        let grid = c_grid();
        let lp: Vec<f64> = grid
            .iter()
            .map(|&c| {
                let mut x = -gamma0 * (digamma(c + r_dot) - digamma(c)) + k * ln_gamma(c + r_dot);
                for &n in self.topic_totals() {
                    x -= ln_gamma(c + n as f64 + r_dot);
                }
                x
            })
            .collect();
        let norm = log_sum_exp(&lp);
        grid.into_iter().zip(lp).map(|(c, x)| (c, x - norm)).collect()
    }

    /// Griddy-Gibbs draw of c.
    pub fn sample_concentration_c(&mut self, rng: &mut RngStream) -> Result<f64> {
        let post = self.c_grid_log_posterior();
        let lw: Vec<f64> = post.iter().map(|&(_, l)| l).collect();
        let c = post[categorical_log(&lw, rng)?].0;
        self.params.set_c(c)?;
        self.refresh_size_factors();
        Ok(c)
    }

    /// One full iteration: sweep, hyperparameters, then c.
    pub fn iterate(&mut self, rng: &mut RngStream) -> Result<()> {
        self.gibbs_sweep(rng)?;
        self.update_hyperparameters(rng)?;
        self.sample_concentration_c(rng)?;
        self.iteration += 1;
        Ok(())
    }

    /// φ_k ~ Dir(η + n_vk over the V terms) and θ_jk ~ Gamma(n_jk + r_j,
    /// scale p_k) for the live topics. Needs p_k from the latest
    /// hyperparameter update.
    pub fn posterior_point_draw(&self, rng: &mut RngStream) -> Result<PosteriorDraw> {
        if !self.p_fresh || self.p.len() != self.topics {
            return Err(Error::domain("p_k must be redrawn before a posterior draw"));
        }
        let (k, v, cap) = (self.topics, self.vocab_size, self.cap);
        let mut phi = Vec::with_capacity(k * v);
        let mut row = Vec::with_capacity(v);
        for kk in 0..k {
            let alpha = (0..v).map(|t| self.eta + self.n_vk[t * cap + kk] as f64);
            dirichlet_into(alpha, &mut row, rng);
            phi.extend_from_slice(&row);
        }
        let mut theta = Vec::with_capacity(self.num_docs() * k);
        for j in 0..self.num_docs() {
            let rj = self.params.r()[j];
            for kk in 0..k {
                let p = self.p[kk].p;
                let shape = self.n_jk[j * cap + kk] as f64 + rj;
                theta.push(if p > 0.0 { gamma_variate(shape, p, rng) } else { 0.0 });
            }
        }
        PosteriorDraw::new(k, v, self.num_docs(), phi, theta)
    }

    pub fn trace_row(&self) -> TraceRow {
        TraceRow {
            iter: self.iteration,
            k: self.topics,
            gamma0: self.params.gamma0(),
            c: self.params.c(),
            r_dot: self.params.r_dot(),
        }
    }

    /// Per document, (term, topic) for each token.
    pub fn token_pairs(&self) -> Vec<Vec<(u32, u32)>> {
        (0..self.num_docs())
            .map(|j| {
                self.doc_terms(j)
                    .iter()
                    .zip(self.doc_assignments(j))
                    .map(|(&v, &k)| (v, k))
                    .collect()
            })
            .collect()
    }
}

/// Runs `cfg.iters` iterations from the current state. The trace starts
/// with the current state; draws go to `sink` inside the collection window.
pub fn run_chain(
    state: &mut TopicModelState,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    sink: &mut dyn DrawSink,
) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut trace = ChainTrace::new();
    trace.push(state.trace_row());
    for it in 1..=cfg.iters {
        state.iterate(rng)?;
        trace.push(state.trace_row());
        if sink.wants_draws() && cfg.collects_at(it) {
            sink.accept(state.posterior_point_draw(rng)?);
        }
    }
    Ok(trace)
}

/// Builds the initial state and runs a chain on it.
pub fn train(
    corpus: &Corpus,
    eta: f64,
    hyper: Hyperpriors,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    sink: &mut dyn DrawSink,
) -> Result<(TopicModelState, ChainTrace)> {
    let mut state = TopicModelState::new(corpus, eta, hyper)?;
    let trace = run_chain(&mut state, cfg, rng, sink)?;
    Ok((state, trace))
}

/// Draws a random J × V count-preserving assignment with `topics` labels,
/// used to start states away from the single-topic default.
pub fn random_assignments<R: Rng + ?Sized>(corpus: &Corpus, topics: usize, rng: &mut R) -> Vec<Vec<usize>> {
    corpus
        .docs()
        .iter()
        .map(|d| d.iter().map(|_| rng.random_range(0..topics.max(1))).collect())
        .collect()
}

/// Sum over four independent accumulators so the loop vectorises.
fn sum_lanes(x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = x.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Corpus {
        Corpus::with_numbered_vocab(vec![vec![0, 1, 1, 2], vec![3, 3], vec![4, 0, 2]], 5).unwrap()
    }

    #[test]
    fn grid_mapping() {
        let g = c_grid();
        assert_eq!(g.len(), 99);
        assert_eq!(g[0], 99.0);
        assert_eq!(g[49], 1.0);
        assert!((g[98] - 1.0 / 99.0).abs() < 1e-15);
    }

    #[test]
    fn substitution_case() {
        // Topic 0 holds term 0 three times and term 1 once; two of its
        // tokens sit in document 0.
        let corpus = Corpus::with_numbered_vocab(vec![vec![0, 0, 0, 1], vec![0], vec![1, 1]], 2).unwrap();
        let z = vec![vec![0, 0, 1, 1], vec![0], vec![0, 1]];
        let params = BnbpParams::new(3.0, 1.0, vec![1.0, 0.5, 0.5]).unwrap();
        let mut s = TopicModelState::from_assignments(&corpus, &z, 0.5, params, Hyperpriors::default()).unwrap();
        s.remove_token(0, 2).unwrap();
        assert_eq!(s.topic_totals(), &[4, 2]);
        let w = s.token_conditional(0, 2).unwrap();
        assert!((w[0] - 1.2).abs() < 1e-14, "{}", w[0]);
        assert!((w[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stale_token_rejected() {
        let mut s = TopicModelState::new(&toy(), 0.1, Hyperpriors::default()).unwrap();
        assert!(matches!(s.token_conditional(0, 1), Err(Error::StaleCounts { doc: 0, token: 1 })));
        assert!(s.assign_token(0, 1, 0).is_err());
        s.remove_token(0, 1).unwrap();
        assert!(s.remove_token(0, 2).is_err());
        assert!(s.gibbs_sweep(&mut RngStream::new(1)).is_err());
    }

    #[test]
    fn sweeps_keep_invariants_and_grow_tables() {
        let docs: Vec<Vec<u32>> = (0..30).map(|j| (0..40).map(|i| ((i * 7 + j * 3) % 50) as u32).collect()).collect();
        let corpus = Corpus::with_numbered_vocab(docs, 50).unwrap();
        let mut rng = RngStream::new(5);
        let z = random_assignments(&corpus, INITIAL_CAP, &mut rng);
        // A large mass makes new topics likely, so the tables must widen.
        let params = BnbpParams::uniform(200.0, 1.0, 1.0, corpus.num_docs()).unwrap();
        let mut s = TopicModelState::from_assignments(&corpus, &z, 0.01, params, Hyperpriors::default()).unwrap();
        assert_eq!(s.cap, INITIAL_CAP);
        s.gibbs_sweep(&mut rng).unwrap();
        s.check_invariants().unwrap();
        assert!(s.cap > INITIAL_CAP, "tables never grew (K = {})", s.num_topics());
        for _ in 0..30 {
            s.iterate(&mut rng).unwrap();
            s.check_invariants().unwrap();
        }
    }

    #[test]
    fn single_token_corpus() {
        let corpus = Corpus::with_numbered_vocab(vec![vec![0]], 3).unwrap();
        let mut s = TopicModelState::new(&corpus, 0.5, Hyperpriors::default()).unwrap();
        let mut rng = RngStream::new(2);
        for _ in 0..50 {
            s.iterate(&mut rng).unwrap();
            assert_eq!(s.num_topics(), 1);
        }
    }

    #[test]
    fn zero_iteration_run() {
        let mut sink = Vec::new();
        let cfg = TrainConfig {
            iters: 0,
            collect: 0,
            thin: 1,
        };
        let (_, trace) = train(&toy(), 0.1, Hyperpriors::default(), &cfg, &mut RngStream::new(1), &mut sink).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.rows()[0].k, 1);
        assert!(sink.is_empty());
    }

    #[test]
    fn collection_window() {
        let cfg = TrainConfig {
            iters: 10,
            collect: 4,
            thin: 2,
        };
        let kept: Vec<usize> = (1..=10).filter(|&i| cfg.collects_at(i)).collect();
        assert_eq!(kept, vec![8, 10]);
        let mut sink = Vec::new();
        train(&toy(), 0.1, Hyperpriors::default(), &cfg, &mut RngStream::new(3), &mut sink).unwrap();
        assert_eq!(sink.len(), 2);
        for d in &sink {
            for k in 0..d.num_topics() {
                assert!((d.phi(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn draw_needs_fresh_p() {
        let mut s = TopicModelState::new(&toy(), 0.1, Hyperpriors::default()).unwrap();
        let mut rng = RngStream::new(4);
        assert!(s.posterior_point_draw(&mut rng).is_err());
        s.update_hyperparameters(&mut rng).unwrap();
        assert!(s.posterior_point_draw(&mut rng).is_ok());
        s.gibbs_sweep(&mut rng).unwrap();
        assert!(s.posterior_point_draw(&mut rng).is_err());
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut sink = Vec::new();
            let cfg = TrainConfig {
                iters: 20,
                collect: 3,
                thin: 1,
            };
            let (s, t) = train(&toy(), 0.2, Hyperpriors::default(), &cfg, &mut RngStream::new(11), &mut sink).unwrap();
            (s.token_pairs(), t, sink)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_resume_matches_continued_chain() {
        let cfg = TrainConfig {
            iters: 5,
            collect: 0,
            thin: 1,
        };
        let mut rng = RngStream::new(21);
        let (mut a, _) = train(&toy(), 0.3, Hyperpriors::default(), &cfg, &mut rng, &mut crate::eval::NoDraws).unwrap();
        let mut buf = Vec::new();
        a.to_checkpoint(&rng).unwrap().write_to(&mut buf).unwrap();
        let ck = Checkpoint::read_from(&buf[..]).unwrap();
        let mut b = TopicModelState::from_checkpoint(&ck).unwrap();
        let mut rng_b = ck.rng();
        assert_eq!(b.token_pairs(), a.token_pairs());
        for _ in 0..5 {
            a.iterate(&mut rng).unwrap();
            b.iterate(&mut rng_b).unwrap();
        }
        assert_eq!(a.token_pairs(), b.token_pairs());
        assert_eq!(a.trace_row(), b.trace_row());
    }
}
