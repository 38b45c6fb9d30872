//! Posterior point draws, per-word heldout perplexity and chain-trace
//! summaries.

use crate::corpus::TestCounts;
use crate::error::{Error, Result};
use crate::trace::ChainTrace;

/// Topics φ (K × V, each row a distribution over terms) and document
/// weights θ (J × K, nonnegative), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    topics: usize,
    vocab_size: usize,
    docs: usize,
    phi: Vec<f64>,
    theta: Vec<f64>,
}

impl PosteriorDraw {
    pub fn new(topics: usize, vocab_size: usize, docs: usize, phi: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if phi.len() != topics * vocab_size {
            return Err(Error::LengthMismatch {
                expected: topics * vocab_size,
                got: phi.len(),
            });
        }
        if theta.len() != docs * topics {
            return Err(Error::LengthMismatch {
                expected: docs * topics,
                got: theta.len(),
            });
        }
        if phi.iter().chain(&theta).any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::domain("posterior draw entries must be finite and nonnegative"));
        }
        Ok(PosteriorDraw {
            topics,
            vocab_size,
            docs,
            phi,
            theta,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_docs(&self) -> usize {
        self.docs
    }

    /// φ_k over the vocabulary.
    pub fn phi(&self, k: usize) -> &[f64] {
        &self.phi[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    /// θ_j over the topics.
    pub fn theta(&self, j: usize) -> &[f64] {
        &self.theta[j * self.topics..(j + 1) * self.topics]
    }
}

/// Receiver for the posterior draws a training run collects.
pub trait DrawSink {
    /// When false the sampler skips building draws altogether.
    fn wants_draws(&self) -> bool {
        true
    }

    fn accept(&mut self, draw: PosteriorDraw);
}

impl DrawSink for Vec<PosteriorDraw> {
    fn accept(&mut self, draw: PosteriorDraw) {
        self.push(draw);
    }
}

/// Discards everything; training then only produces a trace.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDraws;

impl DrawSink for NoDraws {
    fn wants_draws(&self) -> bool {
        false
    }

    fn accept(&mut self, _draw: PosteriorDraw) {}
}

/// Streams draws into the sums that perplexity needs:
/// Σ_s Σ_k φ_vk θ_jk for each heldout (v, j) pair and Σ_s Σ_v Σ_k φ_vk θ_jk
/// for each document.
#[derive(Debug, Clone)]
pub struct PerplexityAccumulator<'a> {
    test: &'a TestCounts,
    numer: Vec<f64>,
    denom: Vec<f64>,
    draws: usize,
    mismatch: Option<String>,
}

impl<'a> PerplexityAccumulator<'a> {
    pub fn new(test: &'a TestCounts) -> Self {
        let pairs = test.docs().iter().map(Vec::len).sum();
        PerplexityAccumulator {
            test,
            numer: vec![0.0; pairs],
            denom: vec![0.0; test.num_docs()],
            draws: 0,
            mismatch: None,
        }
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn add(&mut self, draw: &PosteriorDraw) -> Result<()> {
        if draw.docs != self.test.num_docs() {
            return Err(Error::LengthMismatch {
                expected: self.test.num_docs(),
                got: draw.docs,
            });
        }
        if draw.vocab_size != self.test.vocab_size() {
            return Err(Error::LengthMismatch {
                expected: self.test.vocab_size(),
                got: draw.vocab_size,
            });
        }
        let kk = draw.topics;
        let phi_mass: Vec<f64> = (0..kk).map(|k| draw.phi(k).iter().sum()).collect();
        let mut pair = 0;
        for (j, doc) in self.test.docs().iter().enumerate() {
            let theta = draw.theta(j);
            self.denom[j] += theta.iter().zip(&phi_mass).map(|(t, m)| t * m).sum::<f64>();
            for &(v, _) in doc {
                let v = v as usize;
                let mut s = 0.0;
                for (k, &t) in theta.iter().enumerate() {
                    s += draw.phi[k * draw.vocab_size + v] * t;
                }
                self.numer[pair] += s;
                pair += 1;
            }
        }
        self.draws += 1;
        Ok(())
    }

    /// exp(−(1/m^test) Σ_vj m^test_vj ln[numer_vj / denom_j]).
    pub fn finish(&self) -> Result<f64> {
        if let Some(e) = &self.mismatch {
            return Err(Error::domain(format!("a collected draw was rejected: {e}")));
        }
        let total = self.test.total();
        if total == 0 {
            return Err(Error::ZeroTestMass);
        }
        if self.draws == 0 {
            return Err(Error::domain("perplexity needs at least one posterior draw"));
        }
        let mut ll = 0.0;
        let mut pair = 0;
        for (j, doc) in self.test.docs().iter().enumerate() {
            for &(_, n) in doc {
                ll += f64::from(n) * (self.numer[pair] / self.denom[j]).ln();
                pair += 1;
            }
        }
        Ok((-ll / total as f64).exp())
    }
}

impl DrawSink for PerplexityAccumulator<'_> {
    fn accept(&mut self, draw: PosteriorDraw) {
        if let Err(e) = self.add(&draw) {
            self.mismatch.get_or_insert(e.to_string());
        }
    }
}

/// Per-word heldout perplexity of `test` under the collected draws.
pub fn perplexity(test: &TestCounts, draws: &[PosteriorDraw]) -> Result<f64> {
    let mut acc = PerplexityAccumulator::new(test);
    for d in draws {
        acc.add(d)?;
    }
    acc.finish()
}

// ---------------------------------------------------------------------------

/// Trailing window of the rolling mean used for stabilization.
pub const STABILIZATION_WINDOW: usize = 50;
/// Relative half-width of the band around the final-window mean.
pub const STABILIZATION_BAND: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub iterations: usize,
    pub burnin: usize,
    /// Rows with `iter > burnin`.
    pub collected: usize,
    /// Mean K_J over the collected rows, `None` if there are none.
    pub posterior_mean_k: Option<f64>,
    /// Mean K_J over the last [`STABILIZATION_WINDOW`] rows.
    pub final_window_mean: f64,
    /// First iteration from which the rolling mean never leaves the band.
    pub stabilization_iter: usize,
}

/// Rolling means of `values` over trailing windows of up to `window` entries.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &x) in values.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Index of the first rolling mean after which every rolling mean stays
/// within `band` (relative) of the mean of the last `window` values.
pub fn stabilization_index(values: &[f64], window: usize, band: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let tail = &values[values.len().saturating_sub(window.max(1))..];
    let target = tail.iter().sum::<f64>() / tail.len() as f64;
    let tol = band * target.abs();
    let rolling = rolling_mean(values, window);
    let mut first = rolling.len();
    for i in (0..rolling.len()).rev() {
        if (rolling[i] - target).abs() <= tol {
            first = i;
        } else {
            break;
        }
    }
    first.min(rolling.len() - 1)
}

/// Burn-in is the fixed count `burnin`; the posterior mean of K_J is taken
/// over every row with `iter > burnin`.
pub fn trace_diagnostics(trace: &ChainTrace, burnin: usize) -> Result<TraceSummary> {
    let rows = trace.rows();
    let last = rows.last().ok_or_else(|| Error::domain("trace is empty"))?;
    let k = trace.k_values();
    let collected: Vec<f64> = rows.iter().filter(|r| r.iter > burnin).map(|r| r.k as f64).collect();
    let tail = &k[k.len().saturating_sub(STABILIZATION_WINDOW)..];
    Ok(TraceSummary {
        iterations: last.iter,
        burnin,
        collected: collected.len(),
        posterior_mean_k: (!collected.is_empty()).then(|| collected.iter().sum::<f64>() / collected.len() as f64),
        final_window_mean: tail.iter().sum::<f64>() / tail.len() as f64,
        stabilization_iter: rows[stabilization_index(&k, STABILIZATION_WINDOW, STABILIZATION_BAND)].iter,
    })
}
