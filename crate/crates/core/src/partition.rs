//! Exchangeable partitions of grouped data under the beta-negative binomial
//! process: the cluster probability function (joint law of group sizes and
//! assignments), the count-matrix prior, the group-size dependent partition
//! probability function and the prediction rule used to simulate partitions
//! by Gibbs sampling.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::distributions::{
    categorical_unchecked, dirmult_sample, log_sum_exp, poisson_variate, DigammaSampler,
};
use crate::error::{Error, Result};
use crate::special::{digamma, ln_factorial, ln_gamma};
use crate::trace::{ChainTrace, TraceRow};

/// Marker for a token slot that has been taken out of the count tables.
pub const UNASSIGNED: usize = usize::MAX;

/// Largest total number of data points for which [`eppf_log`] enumerates the
/// normalising constant.
pub const DEFAULT_ENUMERATION_BUDGET: usize = 12;

/// Mass γ0, concentration c and per-group dispersions r_j.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbpParams {
    gamma0: f64,
    c: f64,
    r: Vec<f64>,
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl BnbpParams {
    pub fn new(gamma0: f64, c: f64, r: Vec<f64>) -> Result<Self> {
        if !positive(gamma0) || !positive(c) {
            return Err(Error::Domain(format!(
                "BNBP parameters need gamma0, c > 0 (got {gamma0}, {c})"
            )));
        }
        if let Some(bad) = r.iter().find(|&&x| !positive(x)) {
            return Err(Error::Domain(format!("dispersion r_j must be positive (got {bad})")));
        }
        Ok(BnbpParams { gamma0, c, r })
    }

    /// The same dispersion for each of `groups` groups.
    pub fn uniform(gamma0: f64, c: f64, r: f64, groups: usize) -> Result<Self> {
        Self::new(gamma0, c, vec![r; groups])
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn num_groups(&self) -> usize {
        self.r.len()
    }

    /// r· = Σ_j r_j, recomputed on every call.
    pub fn r_dot(&self) -> f64 {
        self.r.iter().sum()
    }

    pub fn set_gamma0(&mut self, gamma0: f64) -> Result<()> {
        *self = Self::new(gamma0, self.c, std::mem::take(&mut self.r))?;
        Ok(())
    }

    pub fn set_c(&mut self, c: f64) -> Result<()> {
        if !positive(c) {
            return Err(Error::Domain(format!("concentration must be positive (got {c})")));
        }
        self.c = c;
        Ok(())
    }

    pub fn set_r(&mut self, j: usize, rj: f64) -> Result<()> {
        if !positive(rj) {
            return Err(Error::Domain(format!("dispersion r_j must be positive (got {rj})")));
        }
        self.r[j] = rj;
        Ok(())
    }

    /// ψ(c + r·) − ψ(c).
    pub fn digamma_gap(&self) -> f64 {
        digamma(self.c + self.r_dot()) - digamma(self.c)
    }

    /// Prior mean number of clusters, γ0 [ψ(c + r·) − ψ(c)].
    pub fn expected_clusters(&self) -> f64 {
        self.gamma0 * self.digamma_gap()
    }

    /// The γ0 that makes the prior mean number of clusters equal `k`.
    pub fn gamma0_for_expected_clusters(k: f64, c: f64, r: &[f64]) -> f64 {
        let r_dot: f64 = r.iter().sum();
        k / (digamma(c + r_dot) - digamma(c))
    }
}

// ---------------------------------------------------------------------------

/// Cluster assignments z_ji for J groups together with the derived counts
/// n_jk and n_·k. New clusters take the next free label; a cluster that
/// empties is deleted at once and the highest label moves into its slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPartition {
    assignments: Vec<Vec<usize>>,
    counts: Vec<Vec<u64>>,
    totals: Vec<u64>,
    removed: Option<(usize, usize)>,
}

impl GroupedPartition {
    /// All groups empty.
    pub fn empty(groups: usize) -> Self {
        GroupedPartition {
            assignments: vec![Vec::new(); groups],
            counts: vec![Vec::new(); groups],
            totals: Vec::new(),
            removed: None,
        }
    }

    /// Builds a partition from arbitrary labels. Labels are renumbered in
    /// order of first appearance, scanning group by group.
    pub fn from_assignments(assignments: Vec<Vec<usize>>) -> Result<Self> {
        let mut relabel = std::collections::HashMap::new();
        let mut p = GroupedPartition::empty(assignments.len());
        for (j, group) in assignments.iter().enumerate() {
            for &label in group {
                if label == UNASSIGNED {
                    return Err(Error::InconsistentPartition(
                        "unassigned label in input assignments".into(),
                    ));
                }
                let next = relabel.len();
                let k = *relabel.entry(label).or_insert(next);
                p.push(j, k);
            }
        }
        Ok(p)
    }

    /// Appends a new data point to group `j` in cluster `k` (`k == K` opens a
    /// new cluster).
    pub fn push(&mut self, j: usize, k: usize) {
        self.assignments[j].push(k);
        self.add(j, k);
    }

    fn add(&mut self, j: usize, k: usize) {
        if k == self.totals.len() {
            self.totals.push(0);
            for row in &mut self.counts {
                row.push(0);
            }
        }
        self.counts[j][k] += 1;
        self.totals[k] += 1;
    }

    pub fn num_groups(&self) -> usize {
        self.assignments.len()
    }

    /// K_J, the number of nonempty clusters.
    pub fn num_clusters(&self) -> usize {
        self.totals.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn total_size(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// n_jk rows, one per group.
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// n_·k.
    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn removed(&self) -> Option<(usize, usize)> {
        self.removed
    }

    /// Takes data point (j, i) out of the counts. A cluster left empty is
    /// deleted immediately.
    pub fn remove(&mut self, j: usize, i: usize) -> Result<()> {
        if let Some((rj, ri)) = self.removed {
            return Err(Error::InconsistentPartition(format!(
                "data point ({rj}, {ri}) is already removed"
            )));
        }
        let k = self.assignments[j][i];
        self.assignments[j][i] = UNASSIGNED;
        self.removed = Some((j, i));
        self.counts[j][k] -= 1;
        self.totals[k] -= 1;
        if self.totals[k] == 0 {
            self.delete_cluster(k);
        }
        Ok(())
    }

    fn delete_cluster(&mut self, k: usize) {
        let last = self.totals.len() - 1;
        self.totals.swap_remove(k);
        for row in &mut self.counts {
            row.swap_remove(k);
        }
        if k != last {
            for z in self.assignments.iter_mut().flatten() {
                if *z == last {
                    *z = k;
                }
            }
        }
    }

    /// Puts the removed data point back into cluster `k`; `k == K` opens a
    /// new cluster.
    pub fn assign(&mut self, j: usize, i: usize, k: usize) -> Result<()> {
        if self.removed != Some((j, i)) {
            return Err(Error::StaleCounts { doc: j, token: i });
        }
        if k > self.num_clusters() {
            return Err(Error::InconsistentPartition(format!(
                "label {k} exceeds K_J = {}",
                self.num_clusters()
            )));
        }
        self.assignments[j][i] = k;
        self.removed = None;
        self.add(j, k);
        Ok(())
    }

    /// Recomputes every count from the assignments and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let k = self.totals.len();
        let mut counts = vec![vec![0u64; k]; self.num_groups()];
        let mut removed = 0;
        for (j, group) in self.assignments.iter().enumerate() {
            if self.counts[j].len() != k {
                return Err(Error::InconsistentPartition(format!("row {j} has wrong width")));
            }
            for (i, &z) in group.iter().enumerate() {
                if z == UNASSIGNED {
                    if self.removed != Some((j, i)) {
                        return Err(Error::InconsistentPartition(format!(
                            "({j}, {i}) unassigned but not marked removed"
                        )));
                    }
                    removed += 1;
                    continue;
                }
                if z >= k {
                    return Err(Error::InconsistentPartition(format!("label {z} out of range")));
                }
                counts[j][z] += 1;
            }
        }
        if removed != usize::from(self.removed.is_some()) {
            return Err(Error::InconsistentPartition("removed marker is stale".into()));
        }
        if counts != self.counts {
            return Err(Error::InconsistentPartition("n_jk disagrees with assignments".into()));
        }
        for kk in 0..k {
            let col: u64 = counts.iter().map(|row| row[kk]).sum();
            if col != self.totals[kk] {
                return Err(Error::InconsistentPartition("n_.k disagrees with n_jk".into()));
            }
            if col == 0 {
                return Err(Error::InconsistentPartition(format!("cluster {kk} is empty")));
            }
        }
        Ok(())
    }

    /// Labels renumbered by first appearance over the flattened data points.
    /// Two partitions induce the same set partition iff their keys agree.
    pub fn canonical_key(&self) -> Vec<usize> {
        let mut map = vec![UNASSIGNED; self.num_clusters()];
        let mut next = 0;
        self.assignments
            .iter()
            .flatten()
            .map(|&z| {
                if z == UNASSIGNED {
                    return UNASSIGNED;
                }
                if map[z] == UNASSIGNED {
                    map[z] = next;
                    next += 1;
                }
                map[z]
            })
            .collect()
    }

    pub fn to_count_matrix(&self) -> CountMatrix {
        CountMatrix {
            rows: self.counts.clone(),
            clusters: self.num_clusters(),
        }
    }
}

// ---------------------------------------------------------------------------

/// A J × K count matrix whose every column sums to at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    rows: Vec<Vec<u64>>,
    clusters: usize,
}

impl CountMatrix {
    pub fn new(rows: Vec<Vec<u64>>) -> Result<Self> {
        let clusters = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != clusters) {
            return Err(Error::LengthMismatch {
                expected: clusters,
                got: bad.len(),
            });
        }
        for k in 0..clusters {
            if rows.iter().all(|r| r[k] == 0) {
                return Err(Error::InconsistentPartition(format!("column {k} is empty")));
            }
        }
        Ok(CountMatrix { rows, clusters })
    }

    /// J × 0 matrix.
    pub fn empty(groups: usize) -> Self {
        CountMatrix {
            rows: vec![Vec::new(); groups],
            clusters: 0,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.rows.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    pub fn get(&self, j: usize, k: usize) -> u64 {
        self.rows[j][k]
    }

    pub fn column_totals(&self) -> Vec<u64> {
        (0..self.clusters)
            .map(|k| self.rows.iter().map(|r| r[k]).sum())
            .collect()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }

    /// Matrix with its columns reordered by `perm` (column k of the result is
    /// column perm[k] of this one).
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.clusters {
            return Err(Error::LengthMismatch {
                expected: self.clusters,
                got: perm.len(),
            });
        }
        let rows = self
            .rows
            .iter()
            .map(|r| perm.iter().map(|&k| r[k]).collect())
            .collect();
        CountMatrix::new(rows)
    }

    /// Variance-to-mean ratio of each row across the K columns (population
    /// variance). `None` for rows with zero mean or when K = 0.
    pub fn row_dispersion(&self) -> Vec<Option<f64>> {
        let k = self.clusters as f64;
        self.rows
            .iter()
            .map(|r| {
                if r.is_empty() {
                    return None;
                }
                let mean = r.iter().sum::<u64>() as f64 / k;
                if mean <= 0.0 {
                    return None;
                }
                let var = r.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / k;
                Some(var / mean)
            })
            .collect()
    }

    /// Mean of the defined row dispersions.
    pub fn mean_row_dispersion(&self) -> Option<f64> {
        let vals: Vec<f64> = self.row_dispersion().into_iter().flatten().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// CSV with one row per group and one column per cluster, preceded by
    /// `# ` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> io::Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        write!(w, "group")?;
        for k in 1..=self.clusters {
            write!(w, ",k{k}")?;
        }
        writeln!(w)?;
        for (j, row) in self.rows.iter().enumerate() {
            write!(w, "{}", j + 1)?;
            for x in row {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------

fn check_groups(groups: usize, params: &BnbpParams) -> Result<()> {
    if groups != params.num_groups() {
        return Err(Error::LengthMismatch {
            expected: params.num_groups(),
            got: groups,
        });
    }
    Ok(())
}

/// log of the cluster-level factor Γ(n_·k)Γ(c+r·)/Γ(c+n_·k+r·).
fn ln_size_factor(total: u64, c: f64, r_dot: f64) -> f64 {
    ln_gamma(total as f64) + ln_gamma(c + r_dot) - ln_gamma(c + total as f64 + r_dot)
}

/// log f(z, m | r, γ0, c): the joint law of the group sizes and the
/// assignments.
pub fn ecpf_log(p: &GroupedPartition, params: &BnbpParams) -> Result<f64> {
    check_groups(p.num_groups(), params)?;
    if p.removed.is_some() {
        return Err(Error::InconsistentPartition(
            "a data point is removed; the partition is incomplete".into(),
        ));
    }
    p.check_consistency()?;
    let r = params.r();
    let r_dot = params.r_dot();
    let c = params.c();
    let k = p.num_clusters() as f64;
    let mut lp = k * params.gamma0().ln() - params.gamma0() * params.digamma_gap();
    lp -= p.assignments.iter().map(|g| ln_factorial(g.len() as u64)).sum::<f64>();
    for (kk, &total) in p.totals.iter().enumerate() {
        lp += ln_size_factor(total, c, r_dot);
        for (j, &rj) in r.iter().enumerate() {
            let n = p.counts[j][kk];
            if n > 0 {
                lp += ln_gamma(n as f64 + rj) - ln_gamma(rj);
            }
        }
    }
    Ok(lp)
}

/// log f(N | r, γ0, c) for a count matrix whose column order is uniformly
/// random.
pub fn count_matrix_log_prob(n: &CountMatrix, params: &BnbpParams) -> Result<f64> {
    check_groups(n.num_groups(), params)?;
    let r = params.r();
    let r_dot = params.r_dot();
    let c = params.c();
    let k = n.num_clusters();
    let mut lp = k as f64 * params.gamma0().ln() - params.gamma0() * params.digamma_gap()
        - ln_factorial(k as u64);
    for (kk, total) in n.column_totals().into_iter().enumerate() {
        if total == 0 {
            return Err(Error::InconsistentPartition(format!("column {kk} is empty")));
        }
        lp += ln_size_factor(total, c, r_dot);
        for (j, &rj) in r.iter().enumerate() {
            let x = n.get(j, kk);
            lp += ln_gamma(x as f64 + rj) - ln_factorial(x) - ln_gamma(rj);
        }
    }
    Ok(lp)
}

/// Draws a count matrix from the prior: K ~ Pois(γ0[ψ(c+r·)−ψ(c)]) i.i.d.
/// columns, each with n_·k ~ Digam(r·, c) and n_:k ~ DirMult(n_·k, r).
pub fn count_matrix_prior_sample<R: Rng + ?Sized>(
    groups: usize,
    params: &BnbpParams,
    rng: &mut R,
) -> Result<CountMatrix> {
    let mut sampler = PriorMatrixSampler::new(groups, params)?;
    Ok(sampler.sample(rng))
}

/// Repeated prior draws sharing one digamma table.
#[derive(Debug, Clone)]
pub struct PriorMatrixSampler {
    params: BnbpParams,
    sizes: DigammaSampler,
}

impl PriorMatrixSampler {
    pub fn new(groups: usize, params: &BnbpParams) -> Result<Self> {
        if groups == 0 {
            return Err(Error::Domain("count matrix needs at least one group".into()));
        }
        check_groups(groups, params)?;
        Ok(PriorMatrixSampler {
            params: params.clone(),
            sizes: DigammaSampler::new(params.r_dot(), params.c())?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> CountMatrix {
        let groups = self.params.num_groups();
        let k = poisson_variate(self.params.expected_clusters(), rng) as usize;
        let mut rows = vec![Vec::with_capacity(k); groups];
        for _ in 0..k {
            let total = self.sizes.sample(rng);
            let col = dirmult_sample(total, self.params.r(), rng).expect("validated parameters");
            for (row, x) in rows.iter_mut().zip(col) {
                row.push(x);
            }
        }
        CountMatrix { rows, clusters: k }
    }
}

/// ln f(m | r, γ0, c), the marginal law of the group sizes, by exact
/// summation over every way of writing m as an unordered collection of
/// nonzero column vectors.
///
/// The sum over ordered K-tuples of columns is organised as a recursion on
/// partial sums: A_K(s) = Σ_{0 < n ≤ s} w(n) A_{K−1}(s − n), which visits
/// every composition exactly once.
pub fn ln_group_size_marginal(group_sizes: &[usize], params: &BnbpParams, budget: usize) -> Result<f64> {
    check_groups(group_sizes.len(), params)?;
    let total: usize = group_sizes.iter().sum();
    if total > budget {
        return Err(Error::EnumerationBudget { total, budget });
    }
    let base = -params.gamma0() * params.digamma_gap();
    if total == 0 {
        return Ok(base);
    }

    // Mixed-radix indexing of vectors 0 ≤ s ≤ m.
    let radix: Vec<usize> = group_sizes.iter().map(|&m| m + 1).collect();
    let states: usize = radix.iter().product();
    let digits = |mut idx: usize| -> Vec<usize> {
        radix
            .iter()
            .map(|&b| {
                let d = idx % b;
                idx /= b;
                d
            })
            .collect()
    };
    let strides: Vec<usize> = radix
        .iter()
        .scan(1, |acc, &b| {
            let s = *acc;
            *acc *= b;
            Some(s)
        })
        .collect();

    let r = params.r();
    let r_dot = params.r_dot();
    let c = params.c();
    let ln_w: Vec<f64> = (0..states)
        .map(|idx| {
            let d = digits(idx);
            let size: usize = d.iter().sum();
            if size == 0 {
                return f64::NEG_INFINITY;
            }
            let mut lw = ln_size_factor(size as u64, c, r_dot);
            for (&x, &rj) in d.iter().zip(r) {
                lw += ln_gamma(x as f64 + rj) - ln_factorial(x as u64) - ln_gamma(rj);
            }
            lw
        })
        .collect();

    let target = states - 1;
    let mut prev = vec![f64::NEG_INFINITY; states];
    prev[0] = 0.0;
    let mut terms = Vec::with_capacity(total);
    let mut ln_k_fact = 0.0;
    let mut buf = Vec::new();
    for k in 1..=total {
        ln_k_fact += (k as f64).ln();
        let mut cur = vec![f64::NEG_INFINITY; states];
        for (s, slot) in cur.iter_mut().enumerate() {
            let sd = digits(s);
            buf.clear();
            // odometer over nonzero sub-vectors n ≤ s
            let mut nd = vec![0usize; sd.len()];
            loop {
                let mut pos = 0;
                while pos < nd.len() {
                    if nd[pos] < sd[pos] {
                        nd[pos] += 1;
                        break;
                    }
                    nd[pos] = 0;
                    pos += 1;
                }
                if pos == nd.len() {
                    break;
                }
                let n_idx: usize = nd.iter().zip(&strides).map(|(a, b)| a * b).sum();
                let rest = prev[s - n_idx];
                if rest > f64::NEG_INFINITY {
                    buf.push(ln_w[n_idx] + rest);
                }
            }
            *slot = log_sum_exp(&buf);
        }
        terms.push(k as f64 * params.gamma0().ln() - ln_k_fact + cur[target]);
        prev = cur;
    }
    Ok(base + log_sum_exp(&terms))
}

/// log f(z | m, r, γ0, c) with the default enumeration budget.
pub fn eppf_log(p: &GroupedPartition, params: &BnbpParams) -> Result<f64> {
    eppf_log_with_budget(p, params, DEFAULT_ENUMERATION_BUDGET)
}

/// log f(z | m, r, γ0, c) = log f(z, m) − log f(m).
pub fn eppf_log_with_budget(p: &GroupedPartition, params: &BnbpParams, budget: usize) -> Result<f64> {
    let total = p.total_size();
    if total > budget {
        return Err(Error::EnumerationBudget { total, budget });
    }
    let joint = ecpf_log(p, params)?;
    Ok(joint - cached_group_size_marginal(&p.group_sizes(), params, budget)?)
}

type MarginalKey = (Vec<usize>, u64, u64, Vec<u64>, usize);

thread_local! {
    /// Last normaliser computed on this thread; enumerating partitions of
    /// fixed group sizes asks for the same value over and over.
    static LAST_MARGINAL: std::cell::RefCell<Option<(MarginalKey, f64)>> = const { std::cell::RefCell::new(None) };
}

fn cached_group_size_marginal(group_sizes: &[usize], params: &BnbpParams, budget: usize) -> Result<f64> {
    let key: MarginalKey = (
        group_sizes.to_vec(),
        params.gamma0().to_bits(),
        params.c().to_bits(),
        params.r().iter().map(|r| r.to_bits()).collect(),
        budget,
    );
    if let Some(v) = LAST_MARGINAL.with(|m| m.borrow().as_ref().filter(|(k, _)| *k == key).map(|&(_, v)| v)) {
        return Ok(v);
    }
    let v = ln_group_size_marginal(group_sizes, params, budget)?;
    LAST_MARGINAL.with(|m| *m.borrow_mut() = Some((key, v)));
    Ok(v)
}

fn prediction_weights_into(
    counts: &[Vec<u64>],
    totals: &[u64],
    j: usize,
    params: &BnbpParams,
    r_dot: f64,
    out: &mut Vec<f64>,
) {
    let c = params.c();
    let rj = params.r()[j];
    out.clear();
    for (k, &total) in totals.iter().enumerate() {
        let n = total as f64;
        out.push(n / (c + n + r_dot) * (counts[j][k] as f64 + rj));
    }
    out.push(params.gamma0() / (c + r_dot) * rj);
}

/// Unnormalised conditional weights for the removed data point (j, i): one
/// per existing cluster followed by the weight of a new cluster.
pub fn prediction_weights(
    p: &GroupedPartition,
    j: usize,
    i: usize,
    params: &BnbpParams,
) -> Result<Vec<f64>> {
    check_groups(p.num_groups(), params)?;
    if p.removed != Some((j, i)) {
        return Err(Error::StaleCounts { doc: j, token: i });
    }
    let mut out = Vec::with_capacity(p.num_clusters() + 1);
    prediction_weights_into(&p.counts, &p.totals, j, params, params.r_dot(), &mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------

/// Gibbs sampler over partitions with fixed group sizes, driven by the
/// prediction rule.
#[derive(Debug, Clone)]
pub struct PartitionGibbs {
    partition: GroupedPartition,
    params: BnbpParams,
    slots: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

impl PartitionGibbs {
    /// Seats the data points one at a time with the prediction rule to get a
    /// starting state.
    pub fn new<R: Rng + ?Sized>(group_sizes: &[usize], params: BnbpParams, rng: &mut R) -> Result<Self> {
        check_groups(group_sizes.len(), &params)?;
        let r_dot = params.r_dot();
        let mut partition = GroupedPartition::empty(group_sizes.len());
        let mut weights = Vec::new();
        let mut slots = Vec::new();
        for (j, &m) in group_sizes.iter().enumerate() {
            for i in 0..m {
                prediction_weights_into(&partition.counts, &partition.totals, j, &params, r_dot, &mut weights);
                let total: f64 = weights.iter().sum();
                let k = categorical_unchecked(&weights, total, rng);
                partition.push(j, k);
                slots.push((j, i));
            }
        }
        Ok(PartitionGibbs {
            partition,
            params,
            slots,
            weights,
        })
    }

    /// Resamples every data point once, in a fresh random order.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.slots.shuffle(rng);
        let r_dot = self.params.r_dot();
        for &(j, i) in &self.slots {
            self.partition.remove(j, i).expect("one removal at a time");
            prediction_weights_into(
                &self.partition.counts,
                &self.partition.totals,
                j,
                &self.params,
                r_dot,
                &mut self.weights,
            );
            let total: f64 = self.weights.iter().sum();
            let k = categorical_unchecked(&self.weights, total, rng);
            self.partition.assign(j, i, k).expect("label in range");
        }
    }

    pub fn partition(&self) -> &GroupedPartition {
        &self.partition
    }

    pub fn params(&self) -> &BnbpParams {
        &self.params
    }

    pub fn into_partition(self) -> GroupedPartition {
        self.partition
    }

    fn trace_row(&self, iter: usize) -> TraceRow {
        TraceRow {
            iter,
            k: self.partition.num_clusters(),
            gamma0: self.params.gamma0(),
            c: self.params.c(),
            r_dot: self.params.r_dot(),
        }
    }
}

/// Runs `iters` Gibbs sweeps and returns the final partition with the K_J
/// trace (row 0 is the starting state).
pub fn partition_gibbs_run<R: Rng + ?Sized>(
    group_sizes: &[usize],
    params: &BnbpParams,
    iters: usize,
    rng: &mut R,
) -> Result<(GroupedPartition, ChainTrace)> {
    let mut gibbs = PartitionGibbs::new(group_sizes, params.clone(), rng)?;
    let mut trace = ChainTrace::new();
    trace.push(gibbs.trace_row(0));
    for it in 1..=iters {
        gibbs.sweep(rng);
        trace.push(gibbs.trace_row(it));
    }
    Ok((gibbs.into_partition(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn unit(groups: usize) -> BnbpParams {
        BnbpParams::uniform(1.0, 1.0, 1.0, groups).unwrap()
    }

    #[test]
    fn ecpf_hand_values() {
        let p = GroupedPartition::from_assignments(vec![vec![0]]).unwrap();
        let want = (-1.0f64).exp().ln() + 0.5f64.ln();
        assert!((ecpf_log(&p, &unit(1)).unwrap() - want).abs() < 1e-14);
        assert!((want - (-1.693_147_180_559_945)).abs() < 1e-12);

        let together = GroupedPartition::from_assignments(vec![vec![0, 0]]).unwrap();
        let want = -1.0 - 6f64.ln();
        assert!((ecpf_log(&together, &unit(1)).unwrap() - want).abs() < 1e-14);
        let apart = GroupedPartition::from_assignments(vec![vec![0, 1]]).unwrap();
        let want = -1.0 - 8f64.ln();
        assert!((ecpf_log(&apart, &unit(1)).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn eppf_hand_values() {
        let params = unit(1);
        let single = GroupedPartition::from_assignments(vec![vec![0]]).unwrap();
        assert!(eppf_log(&single, &params).unwrap().abs() < 1e-14);
        let together = GroupedPartition::from_assignments(vec![vec![0, 0]]).unwrap();
        let apart = GroupedPartition::from_assignments(vec![vec![0, 1]]).unwrap();
        assert!((eppf_log(&together, &params).unwrap().exp() - 4.0 / 7.0).abs() < 1e-14);
        assert!((eppf_log(&apart, &params).unwrap().exp() - 3.0 / 7.0).abs() < 1e-14);
        let ln_fm = ln_group_size_marginal(&[2], &params, 12).unwrap();
        assert!((ln_fm - (-1.0 + (7.0f64 / 24.0).ln())).abs() < 1e-14);
    }

    #[test]
    fn eppf_budget_error() {
        let p = GroupedPartition::from_assignments(vec![vec![0; 13]]).unwrap();
        assert!(matches!(
            eppf_log(&p, &unit(1)),
            Err(Error::EnumerationBudget { total: 13, budget: 12 })
        ));
    }

    #[test]
    fn empty_partition_has_probability_one() {
        let p = GroupedPartition::empty(2);
        assert!(eppf_log(&p, &unit(2)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn count_matrix_hand_value() {
        let n = CountMatrix::new(vec![vec![2]]).unwrap();
        let got = count_matrix_log_prob(&n, &unit(1)).unwrap();
        assert!((got - (-1.0 - 6f64.ln())).abs() < 1e-14);
        assert!(CountMatrix::new(vec![vec![1, 0], vec![2, 0]]).is_err());
        assert!(CountMatrix::new(vec![vec![1, 0], vec![2]]).is_err());
    }

    #[test]
    fn prediction_rule_hand_case() {
        let mut p = GroupedPartition::from_assignments(vec![vec![0, 0]]).unwrap();
        p.remove(0, 1).unwrap();
        let w = prediction_weights(&p, 0, 1, &unit(1)).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 0.5).abs() < 1e-15);
        assert!((w[0] / (w[0] + w[1]) - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn prediction_on_empty_state_is_new_cluster() {
        let mut p = GroupedPartition::from_assignments(vec![vec![0]]).unwrap();
        p.remove(0, 0).unwrap();
        assert_eq!(p.num_clusters(), 0);
        let w = prediction_weights(&p, 0, 0, &unit(1)).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0] > 0.0);
    }

    #[test]
    fn stale_counts_rejected() {
        let p = GroupedPartition::from_assignments(vec![vec![0, 0]]).unwrap();
        assert!(matches!(
            prediction_weights(&p, 0, 1, &unit(1)),
            Err(Error::StaleCounts { doc: 0, token: 1 })
        ));
        let mut p = p;
        assert!(p.assign(0, 0, 0).is_err());
        p.remove(0, 0).unwrap();
        assert!(p.remove(0, 1).is_err());
    }

    #[test]
    fn removal_moves_last_cluster_into_gap() {
        let mut p = GroupedPartition::from_assignments(vec![vec![0, 1, 2], vec![2, 1, 2]]).unwrap();
        p.remove(0, 0).unwrap();
        assert_eq!(p.num_clusters(), 2);
        assert_eq!(p.assignments()[0], vec![UNASSIGNED, 1, 0]);
        assert_eq!(p.assignments()[1], vec![0, 1, 0]);
        assert_eq!(p.totals(), &[3, 2]);
        p.check_consistency().unwrap();
        p.assign(0, 0, 2).unwrap();
        p.check_consistency().unwrap();
        assert_eq!(p.totals(), &[3, 2, 1]);
    }

    #[test]
    fn gibbs_empty_groups() {
        let mut rng = RngStream::new(1);
        let (p, trace) = partition_gibbs_run(&[0, 0, 0], &unit(3), 5, &mut rng).unwrap();
        assert_eq!(p.num_clusters(), 0);
        assert_eq!(trace.len(), 6);
        assert!(trace.rows().iter().all(|r| r.k == 0));
    }

    #[test]
    fn gibbs_keeps_counts_consistent() {
        let mut rng = RngStream::new(2);
        let params = BnbpParams::new(2.0, 0.7, vec![0.5, 3.0, 1.0]).unwrap();
        let mut g = PartitionGibbs::new(&[6, 1, 4], params, &mut rng).unwrap();
        for _ in 0..200 {
            g.sweep(&mut rng);
            g.partition().check_consistency().unwrap();
            assert_eq!(g.partition().group_sizes(), vec![6, 1, 4]);
        }
    }

    #[test]
    fn prior_sample_vanishing_mass() {
        let mut rng = RngStream::new(3);
        let params = BnbpParams::uniform(1e-12, 1.0, 1.0, 4).unwrap();
        for _ in 0..100 {
            let n = count_matrix_prior_sample(4, &params, &mut rng).unwrap();
            assert_eq!(n.num_clusters(), 0);
            assert_eq!(n.num_groups(), 4);
        }
    }

    #[test]
    fn csv_layout() {
        let n = CountMatrix::new(vec![vec![1, 0], vec![2, 3]]).unwrap();
        let mut buf = Vec::new();
        n.write_csv(&mut buf, &["c=2".into()]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# c=2\ngroup,k1,k2\n1,1,0\n2,2,3\n");
    }

    #[test]
    fn dispersion_of_flat_row_is_zero() {
        let n = CountMatrix::new(vec![vec![5, 5, 5], vec![1, 2, 12]]).unwrap();
        let d = n.row_dispersion();
        assert_eq!(d[0], Some(0.0));
        assert!(d[1].unwrap() > 1.0);
    }
}
