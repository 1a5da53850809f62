//! Replicable hypothesis selection: Scheffe semi-distances plus a binary
//! tournament tree whose per-level decisions are replicable coin tests.

use std::ops::Range;
use std::sync::Arc;

use crate::distributions::{DiscreteDistribution, SampleStream};
use crate::error::{Error, Result};
use crate::expectation_gap::{size_invariant_estimate, BatchProvider, Decision, EstimatorConfig};
use crate::rng::{derive_seed, Role};
use crate::testers::{coin_spec, CoinProblem};

/// Hypotheses over a common finite domain, padded to a power of two by
/// duplicating the last entry.
pub struct HypothesisSet {
    hyps: Vec<DiscreteDistribution>,
    original_n: usize,
}

impl HypothesisSet {
    pub fn new(hyps: Vec<DiscreteDistribution>) -> Result<Self> {
        if hyps.len() < 2 {
            return Err(Error::Parameter("need at least 2 hypotheses".into()));
        }
        let dsize = hyps[0].n();
        if hyps.iter().any(|h| h.n() != dsize) {
            return Err(Error::Dimension("hypotheses must share one domain".into()));
        }
        let original_n = hyps.len();
        let mut hyps = hyps;
        while !hyps.len().is_power_of_two() {
            hyps.push(hyps[original_n - 1].clone());
        }
        Ok(Self { hyps, original_n })
    }

    /// Padded count (a power of two).
    pub fn n(&self) -> usize {
        self.hyps.len()
    }

    pub fn original_n(&self) -> usize {
        self.original_n
    }

    pub fn dsize(&self) -> usize {
        self.hyps[0].n()
    }

    pub fn hyp(&self, i: usize) -> &DiscreteDistribution {
        &self.hyps[i]
    }

    /// Maps a padded index back to the caller's numbering.
    pub fn unpad(&self, i: usize) -> usize {
        i.min(self.original_n - 1)
    }
}

struct PairEntry {
    /// Domain elements of S_ij = {x : H_i(x) <= H_j(x)}, ties included.
    set: Vec<u32>,
    hi_mass: f64,
}

/// All n(n-1) Scheffe sets with H_i(S_ij) precomputed.
pub struct ScheffeTable {
    n: usize,
    entries: Vec<PairEntry>,
}

pub fn scheffe_table(hset: &HypothesisSet) -> ScheffeTable {
    let n = hset.n();
    let mut entries = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let hi = hset.hyp(i).pmf();
            let hj = hset.hyp(j).pmf();
            let set: Vec<u32> = (0..hset.dsize())
                .filter(|&x| hi[x] <= hj[x])
                .map(|x| x as u32)
                .collect();
            let hi_mass = set.iter().map(|&x| hi[x as usize]).sum();
            entries.push(PairEntry { set, hi_mass });
        }
    }
    ScheffeTable { n, entries }
}

impl ScheffeTable {
    pub fn pair_count(&self) -> usize {
        self.entries.len()
    }

    fn entry(&self, i: usize, j: usize) -> &PairEntry {
        debug_assert!(i != j);
        let col = if j < i { j } else { j - 1 };
        &self.entries[i * (self.n - 1) + col]
    }

    pub fn scheffe_set(&self, i: usize, j: usize) -> Vec<usize> {
        self.entry(i, j).set.iter().map(|&x| x as usize).collect()
    }

    pub fn hypothesis_mass(&self, i: usize, j: usize) -> f64 {
        self.entry(i, j).hi_mass
    }

    /// W_hat_i = max over j != i of |H_i(S_ij) - P_hat(S_ij)| where
    /// P_hat comes from the supplied set-mass evaluator.
    fn w_hat(&self, i: usize, p_mass: &dyn Fn(&PairEntry) -> f64) -> f64 {
        let mut w = 0.0f64;
        for j in 0..self.n {
            if j == i {
                continue;
            }
            let e = self.entry(i, j);
            w = w.max((e.hi_mass - p_mass(e)).abs());
        }
        w
    }

    fn argmin_w(&self, candidates: Range<usize>, p_mass: &dyn Fn(&PairEntry) -> f64) -> usize {
        let mut best = candidates.start;
        let mut best_w = f64::INFINITY;
        for i in candidates {
            let w = self.w_hat(i, p_mass);
            // Ties break to the smallest index.
            if w < best_w {
                best_w = w;
                best = i;
            }
        }
        best
    }
}

fn hist_mass(hist: &[u64], m: u64) -> impl Fn(&PairEntry) -> f64 + '_ {
    move |e: &PairEntry| {
        let count: u64 = e.set.iter().map(|&x| hist[x as usize]).sum();
        count as f64 / m as f64
    }
}

/// Minimum-distance selection from an explicit sample set: empirical
/// semi-distances against every other hypothesis, argmin of the maxima.
pub fn min_distance_select(
    hset: &HypothesisSet,
    table: &ScheffeTable,
    samples: &[usize],
) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::Precondition("min_distance_select needs >= 1 sample".into()));
    }
    let mut hist = vec![0u64; hset.dsize()];
    for &x in samples {
        if x >= hist.len() {
            return Err(Error::Domain(format!("sample {x} outside domain")));
        }
        hist[x] += 1;
    }
    let m = samples.len() as u64;
    let mass = hist_mass(&hist, m);
    Ok(table.argmin_w(0..hset.n(), &mass))
}

/// Selection with the true probabilities of P plugged in for P_hat; the
/// infinite-sample limit used by oracle tests.
pub fn min_distance_select_exact(
    hset: &HypothesisSet,
    table: &ScheffeTable,
    p: &DiscreteDistribution,
) -> Result<usize> {
    if p.n() != hset.dsize() {
        return Err(Error::Dimension("P domain mismatch".into()));
    }
    let mass = |e: &PairEntry| -> f64 { e.set.iter().map(|&x| p.prob(x as usize)).sum() };
    Ok(table.argmin_w(0..hset.n(), &mass))
}

/// True semi-distance maximum W_i of hypothesis i against P.
pub fn true_w(table: &ScheffeTable, p: &DiscreteDistribution, i: usize) -> f64 {
    let mass = |e: &PairEntry| -> f64 { e.set.iter().map(|&x| p.prob(x as usize)).sum() };
    table.w_hat(i, &mass)
}

#[derive(Debug, Clone, Copy)]
pub struct SelectConfig {
    pub rho: f64,
    pub eps: f64,
    /// Per-level sample constant: m = ceil(c_m ln(n) / eps0^2).
    pub c_m: f64,
}

impl SelectConfig {
    pub fn new(rho: f64, eps: f64) -> Self {
        Self { rho, eps, c_m: 16.0 }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SelectOutcome {
    /// Index into the caller's (unpadded) hypothesis list.
    pub index: usize,
    pub samples_used: u64,
    pub levels: u32,
    pub samples_per_flip: u64,
}

/// One coin flip = one min-distance run on fresh samples; heads when the
/// winner (argmin over the current node, semi-distances against the full
/// hypothesis set) lands in the target half.
struct FlipBatches<'a> {
    table: &'a ScheffeTable,
    p: &'a DiscreteDistribution,
    stream: &'a mut SampleStream<usize>,
    m_flip: u64,
    node: Range<usize>,
    target: Range<usize>,
}

impl BatchProvider for FlipBatches<'_> {
    fn next_statistic(&mut self, flips: u64) -> Result<f64> {
        let mut heads = 0u64;
        for _ in 0..flips {
            let hist = self.stream.draw_histogram(self.p, self.m_flip)?;
            let winner = self.table.argmin_w(self.node.clone(), &hist_mass(&hist, self.m_flip));
            if self.target.contains(&winner) {
                heads += 1;
            }
        }
        Ok(heads as f64 / flips as f64)
    }

    fn samples_used(&self) -> u64 {
        self.stream.count_drawn()
    }
}

/// Descends lg n tree levels; each level keeps the half that wins a
/// replicable coin test over min-distance flips, run twice with flipped
/// head semantics so either a strong left or strong right bias is caught.
pub fn replicable_select(
    hset: &HypothesisSet,
    p: Arc<DiscreteDistribution>,
    config: &SelectConfig,
    sample_seed: u64,
    randomness_seed: u64,
) -> Result<SelectOutcome> {
    if !(config.rho > 0.0 && config.rho <= 1.0) || !(config.eps > 0.0 && config.eps <= 1.0) {
        return Err(Error::Parameter("replicable_select needs rho, eps in (0,1]".into()));
    }
    if p.n() != hset.dsize() {
        return Err(Error::Dimension("P domain mismatch".into()));
    }
    let table = scheffe_table(hset);
    let n = hset.n();
    let levels = n.trailing_zeros().max(1);
    let eps0 = config.eps / levels as f64;
    let rho0 = config.rho / levels as f64;
    let m_flip = ((config.c_m * (n as f64).ln() / (eps0 * eps0)).ceil() as u64).max(1);
    let delta = ((n as f64).powi(-3)).min(rho0);
    let coin = CoinProblem { p0: 0.5, q0: 0.75, rho: rho0, delta };
    let spec = coin_spec(&coin)?;

    let mut stream = SampleStream::new(p.clone(), sample_seed);
    let mut lo = 0usize;
    let mut size = n;
    for level in 0..levels {
        size /= 2;
        let node = lo..lo + 2 * size;
        let left = lo..lo + size;
        let right = lo + size..lo + 2 * size;
        let mut go_right = false;
        for (variant, target) in [(0u64, left.clone()), (1u64, right.clone())] {
            let mut cfg = EstimatorConfig::new(coin.rho, coin.delta);
            cfg.randomness_seed =
                derive_seed(randomness_seed, level as u64 * 2 + variant, Role::Stage);
            let mut flips = FlipBatches {
                table: &table,
                p: &p,
                stream: &mut stream,
                m_flip,
                node: node.clone(),
                target: target.clone(),
            };
            let verdict = size_invariant_estimate(&spec, &cfg, &mut flips)?;
            // Reject means the flip bias is near q0, i.e. the target half
            // wins decisively; both tests accepting means either half is fine.
            if verdict.decision == Decision::Reject {
                go_right = variant == 1;
                break;
            }
        }
        if go_right {
            lo += size;
        }
    }
    Ok(SelectOutcome {
        index: hset.unpad(lo),
        samples_used: stream.count_drawn(),
        levels,
        samples_per_flip: m_flip,
    })
}
