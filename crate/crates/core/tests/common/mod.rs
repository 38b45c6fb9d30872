//! Oracles written independently of the library: products of rising
//! factorials instead of log-gamma differences, brute-force enumeration
//! instead of dynamic programming.

#![allow(dead_code)]

use bnbp_core::special::digamma;

/// ln of x(x+1)…(x+n−1).
pub fn ln_rising(x: f64, n: u64) -> f64 {
    (0..n).map(|t| (x + t as f64).ln()).sum()
}

pub fn ln_fact(n: u64) -> f64 {
    (2..=n).map(|t| (t as f64).ln()).sum()
}

/// Cluster counts n_jk from labels, clusters numbered by first appearance.
pub fn counts_of(z: &[Vec<usize>]) -> Vec<Vec<u64>> {
    let mut map = std::collections::HashMap::new();
    for &l in z.iter().flatten() {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    let mut n = vec![vec![0u64; map.len()]; z.len()];
    for (j, g) in z.iter().enumerate() {
        for l in g {
            n[j][map[l]] += 1;
        }
    }
    n
}

/// ln of the joint law of labels and group sizes, as
/// γ0^K e^{−γ0[ψ(c+r·)−ψ(c)]} / Π m_j! · Π_k (n_k−1)! / (c+r·)^(n_k) · Π_j r_j^(n_jk).
pub fn ln_ecpf(z: &[Vec<usize>], gamma0: f64, c: f64, r: &[f64]) -> f64 {
    let n = counts_of(z);
    let r_dot: f64 = r.iter().sum();
    let k = n.first().map_or(0, Vec::len);
    let mut lp = k as f64 * gamma0.ln() - gamma0 * (digamma(c + r_dot) - digamma(c));
    lp -= z.iter().map(|g| ln_fact(g.len() as u64)).sum::<f64>();
    for kk in 0..k {
        let nk: u64 = n.iter().map(|row| row[kk]).sum();
        lp += ln_fact(nk - 1) - ln_rising(c + r_dot, nk);
        for (j, row) in n.iter().enumerate() {
            lp += ln_rising(r[j], row[kk]);
        }
    }
    lp
}

/// ln of the topic-word factor Π_k Γ(Vη)/Γ(Vη+n_k) Π_v Γ(η+n_vk)/Γ(η).
pub fn ln_word_factor(words: &[Vec<u32>], z: &[Vec<usize>], vocab: usize, eta: f64) -> f64 {
    let mut table: std::collections::BTreeMap<usize, Vec<u64>> = Default::default();
    for (ws, zs) in words.iter().zip(z) {
        for (&v, &k) in ws.iter().zip(zs) {
            table.entry(k).or_insert_with(|| vec![0; vocab])[v as usize] += 1;
        }
    }
    table
        .values()
        .map(|col| {
            let nk: u64 = col.iter().sum();
            col.iter().map(|&x| ln_rising(eta, x)).sum::<f64>() - ln_rising(vocab as f64 * eta, nk)
        })
        .sum()
}

/// Every set partition of `n` items as a restricted growth string.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let top = if prefix.is_empty() { 0 } else { max + 1 };
        for l in 0..=top {
            prefix.push(l);
            go(prefix, max.max(l), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), 0, n, &mut out);
    out
}

/// Splits a flat label string into groups of the given sizes.
pub fn split_groups(flat: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &m in sizes {
        out.push(flat[at..at + m].to_vec());
        at += m;
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
