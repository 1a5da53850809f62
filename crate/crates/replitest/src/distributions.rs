//! Sample sources, exact divergences, and chaining hard-instance families.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{poisson, rng_from_seed};

/// Anything a `SampleStream` can pull i.i.d. draws from.
pub trait Sampler<T>: Send + Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> T;
}

/// A finite distribution over `[n]` with an alias table for O(1) draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    pmf: Vec<f64>,
    alias_prob: Vec<f64>,
    alias: Vec<usize>,
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        DiscreteDistribution::new(&w)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(d: DiscreteDistribution) -> Vec<f64> {
        d.pmf
    }
}

impl DiscreteDistribution {
    /// Builds from nonnegative weights, normalizing to total mass 1.
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("empty pmf".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter("pmf entries must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Parameter("pmf must have positive total mass".into()));
        }
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sum: f64 = pmf.iter().sum();
        debug_assert!((sum - 1.0).abs() <= 1e-12);

        // Vose alias construction.
        let n = pmf.len();
        let mut alias_prob = vec![0.0; n];
        let mut alias = vec![0usize; n];
        let scaled: Vec<f64> = pmf.iter().map(|p| p * n as f64).collect();
        let mut small: Vec<usize> = Vec::new();
        let mut large: Vec<usize> = Vec::new();
        for (i, s) in scaled.iter().enumerate() {
            if *s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        let mut scaled = scaled;
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            large.pop();
            alias_prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for &i in small.iter().chain(large.iter()) {
            alias_prob[i] = 1.0;
            alias[i] = i;
        }
        Ok(Self { pmf, alias_prob, alias })
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(&vec![1.0; n]).expect("uniform pmf is valid")
    }

    /// Bernoulli as a two-point distribution; outcome 1 is "heads".
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!("bernoulli p {p} outside [0,1]")));
        }
        Self::new(&[1.0 - p, p])
    }

    pub fn n(&self) -> usize {
        self.pmf.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.pmf[i]
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let i = rng.random_range(0..self.pmf.len());
        if rng.random::<f64>() < self.alias_prob[i] {
            i
        } else {
            self.alias[i]
        }
    }

    /// Histogram of `m` i.i.d. draws, generated as a chain of conditional
    /// binomials. Distributionally identical to drawing one by one but O(n)
    /// instead of O(m), which matters when a single tester consumes millions
    /// of batched draws.
    pub fn sample_histogram(&self, m: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let n = self.pmf.len();
        let mut hist = vec![0u64; n];
        let mut remaining = m;
        let mut mass_left = 1.0f64;
        for i in 0..n {
            if remaining == 0 {
                break;
            }
            if i + 1 == n {
                hist[i] = remaining;
                break;
            }
            let p = (self.pmf[i] / mass_left).clamp(0.0, 1.0);
            let draw = rand_distr::Binomial::new(remaining, p)
                .expect("binomial parameters are valid")
                .sample(rng);
            hist[i] = draw;
            remaining -= draw;
            mass_left = (mass_left - self.pmf[i]).max(f64::MIN_POSITIVE);
        }
        hist
    }
}

impl Sampler<usize> for DiscreteDistribution {
    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        self.sample(rng)
    }
}

/// N(mean, I_d).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianSource {
    pub mean: Vec<f64>,
}

impl GaussianSource {
    pub fn new(mean: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Parameter("dimension must be >= 1".into()));
        }
        Ok(Self { mean })
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }
}

impl Sampler<Vec<f64>> for GaussianSource {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mean
            .iter()
            .map(|mu| mu + rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect()
    }
}

/// Lazily pulled i.i.d. sample source; the only way testers acquire data.
///
/// Two streams with equal (source, seed) produce bit-identical sequences.
/// `count_drawn` tracks every sample handed out, including batched draws.
pub struct SampleStream<T> {
    sampler: Arc<dyn Sampler<T>>,
    rng: ChaCha8Rng,
    seed: u64,
    count_drawn: u64,
    budget: Option<u64>,
}

impl<T> SampleStream<T> {
    pub fn new(sampler: Arc<dyn Sampler<T>>, seed: u64) -> Self {
        Self {
            sampler,
            rng: rng_from_seed(seed),
            seed,
            count_drawn: 0,
            budget: None,
        }
    }

    pub fn with_budget(sampler: Arc<dyn Sampler<T>>, seed: u64, budget: u64) -> Self {
        let mut s = Self::new(sampler, seed);
        s.budget = Some(budget);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count_drawn(&self) -> u64 {
        self.count_drawn
    }

    fn charge(&mut self, k: u64) -> Result<()> {
        if let Some(b) = self.budget {
            if self.count_drawn + k > b {
                return Err(Error::BudgetExhausted { budget: b, drawn: self.count_drawn });
            }
        }
        self.count_drawn += k;
        Ok(())
    }

    pub fn draw(&mut self) -> Result<T> {
        self.charge(1)?;
        Ok(self.sampler.draw(&mut self.rng))
    }

    /// Poisson batch size for poissonized statistics. The count itself is
    /// part of the data-generating process and comes from the sample rng.
    pub fn draw_poisson_count(&mut self, mean: f64) -> u64 {
        poisson(&mut self.rng, mean)
    }

}

impl SampleStream<usize> {
    /// Histogram of `m` draws via the multinomial shortcut, charged against
    /// the budget like `m` individual draws.
    pub fn draw_histogram(&mut self, dist: &DiscreteDistribution, m: u64) -> Result<Vec<u64>> {
        self.charge(m)?;
        Ok(dist.sample_histogram(m, &mut self.rng))
    }
}

pub fn l1_distance(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::Dimension(format!("domains {} vs {}", p.n(), q.n())));
    }
    Ok(p.pmf().iter().zip(q.pmf()).map(|(a, b)| (a - b).abs()).sum())
}

pub fn tv_distance(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    Ok(l1_distance(p, q)? / 2.0)
}

pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::Dimension(format!("domains {} vs {}", p.n(), q.n())));
    }
    let mut acc = 0.0;
    for (a, b) in p.pmf().iter().zip(q.pmf()) {
        if *a == 0.0 {
            continue;
        }
        if *b == 0.0 {
            return Err(Error::Domain(
                "kl_divergence requires q > 0 wherever p > 0".into(),
            ));
        }
        acc += a * (a / b).ln();
    }
    // Gibbs inequality up to rounding.
    Ok(acc.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainKind {
    Coin,
    Uniformity,
    Closeness,
}

/// One chain element: a distribution, or a (p, q_i) pair for closeness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainStep {
    pub primary: DiscreteDistribution,
    pub secondary: Option<DiscreteDistribution>,
}

/// Ordered hard-instance family p_0..p_t; p_0 satisfies the property and
/// p_t is eps-far, with adjacent elements nearly indistinguishable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainFamily {
    pub kind: ChainKind,
    pub eps: f64,
    pub t: usize,
    pub steps: Vec<ChainStep>,
    pub label_0: String,
    pub label_t: String,
}

impl ChainFamily {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Bernoulli chain with biases 1/2 + i*eps/t.
pub fn coin_chain(eps: f64, t: usize) -> Result<ChainFamily> {
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(Error::Parameter(format!("coin chain needs eps in (0, 0.25], got {eps}")));
    }
    if t < 1 {
        return Err(Error::Parameter("chain length t must be >= 1".into()));
    }
    let steps = (0..=t)
        .map(|i| {
            let bias = 0.5 + i as f64 * eps / t as f64;
            Ok(ChainStep { primary: DiscreteDistribution::bernoulli(bias)?, secondary: None })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainFamily {
        kind: ChainKind::Coin,
        eps,
        t,
        steps,
        label_0: "in-property".into(),
        label_t: "eps-far".into(),
    })
}

/// Paired-bin perturbation chain: p_i(j) = (1 +- i*eps/t)/n on even/odd j.
pub fn uniformity_chain(n: usize, eps: f64, t: usize) -> Result<ChainFamily> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Parameter(format!("uniformity chain needs even n >= 2, got {n}")));
    }
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::Parameter(format!("uniformity chain needs eps in (0, 1/2], got {eps}")));
    }
    if t < 1 {
        return Err(Error::Parameter("chain length t must be >= 1".into()));
    }
    let steps = (0..=t)
        .map(|i| {
            let bump = i as f64 * eps / t as f64;
            let pmf: Vec<f64> = (0..n)
                .map(|j| if j % 2 == 0 { (1.0 + bump) / n as f64 } else { (1.0 - bump) / n as f64 })
                .collect();
            Ok(ChainStep { primary: DiscreteDistribution::new(&pmf)?, secondary: None })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainFamily {
        kind: ChainKind::Uniformity,
        eps,
        t,
        steps,
        label_0: "in-property".into(),
        label_t: "eps-far".into(),
    })
}

/// Mass parameters for the closeness chain. They are direct inputs with
/// defaults that keep the construction feasible for any n >= 4t.
#[derive(Debug, Clone, Copy)]
pub struct ClosenessChainParams {
    /// Per-element mass on the heavy common part A.
    pub b: f64,
    /// Per-element base mass on the light parts B, D (scaled by eps).
    pub a: f64,
}

impl ClosenessChainParams {
    pub fn defaults(n: usize, eps: f64) -> Self {
        Self { b: 4.0 * (1.0 - eps) / n as f64, a: 4.0 / n as f64 }
    }
}

/// Chain of pairs (p, q_i) sharing a heavy part A; q_i moves light mass
/// from B blocks onto D blocks so that TV(p, q_i) grows linearly to eps.
pub fn closeness_chain(n: usize, eps: f64, t: usize) -> Result<ChainFamily> {
    closeness_chain_with(n, eps, t, ClosenessChainParams::defaults(n, eps))
}

pub fn closeness_chain_with(
    n: usize,
    eps: f64,
    t: usize,
    params: ClosenessChainParams,
) -> Result<ChainFamily> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Parameter(format!("closeness chain needs eps in (0,1), got {eps}")));
    }
    if t < 1 {
        return Err(Error::Parameter("chain length t must be >= 1".into()));
    }
    if !(params.a > 0.0 && params.b > 0.0) {
        return Err(Error::Parameter("closeness chain masses must be positive".into()));
    }
    // Block sizes are floored; leftover mass is spread uniformly over A.
    let size_a = ((1.0 - eps) / params.b).floor() as usize;
    let size_bd = (1.0 / params.a).floor() as usize;
    let block = size_bd / t;
    if size_a == 0 || block == 0 {
        return Err(Error::Parameter(
            "closeness chain infeasible: A or a per-step block would be empty".into(),
        ));
    }
    let used = size_a + 2 * block * t;
    if used > n {
        return Err(Error::Parameter(format!(
            "closeness chain needs {used} support elements but n = {n}"
        )));
    }
    // Layout: [A | B_1..B_t | D_1..D_t | unused zeros].
    let a_range = 0..size_a;
    let b_start = size_a;
    let d_start = size_a + block * t;
    let light = eps * params.a;
    let body_mass = size_a as f64 * params.b + (block * t) as f64 * light;
    if body_mass > 1.0 + 1e-9 {
        return Err(Error::Parameter(
            "closeness chain masses exceed total probability 1".into(),
        ));
    }
    let a_mass = params.b + (1.0 - body_mass).max(0.0) / size_a as f64;

    let base = |on_light: &dyn Fn(usize) -> bool| -> Result<DiscreteDistribution> {
        let mut pmf = vec![0.0; n];
        for j in a_range.clone() {
            pmf[j] = a_mass;
        }
        for k in 0..block * t {
            if on_light(k / block) {
                pmf[b_start + k] = light;
            }
        }
        for k in 0..block * t {
            if !on_light(k / block) {
                // D block d is lit exactly when B block d is dark.
                pmf[d_start + k] = light;
            }
        }
        DiscreteDistribution::new(&pmf)
    };

    // p lights every B block; q_i lights B blocks i+1..t and D blocks 1..i.
    let p = base(&|_| true)?;
    let steps = (0..=t)
        .map(|i| {
            let q = base(&move |blk| blk >= i)?;
            Ok(ChainStep { primary: p.clone(), secondary: Some(q) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainFamily {
        kind: ChainKind::Closeness,
        eps,
        t,
        steps,
        label_0: "in-property".into(),
        label_t: "eps-far".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn l1_and_tv_on_known_pair() {
        let p = DiscreteDistribution::new(&[0.5, 0.5]).unwrap();
        let q = DiscreteDistribution::new(&[0.6, 0.4]).unwrap();
        assert!((l1_distance(&p, &q).unwrap() - 0.2).abs() < 1e-15);
        assert!((tv_distance(&p, &q).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kl_on_known_bernoulli_pair() {
        let p = DiscreteDistribution::bernoulli(0.5).unwrap();
        let q = DiscreteDistribution::bernoulli(0.6).unwrap();
        // 0.5 ln(0.5/0.6) + 0.5 ln(0.5/0.4)
        let expected = 0.5 * (0.5f64 / 0.6).ln() + 0.5 * (0.5f64 / 0.4).ln();
        assert!((kl_divergence(&p, &q).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.020410997260127572).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_missing_support() {
        let p = DiscreteDistribution::new(&[0.5, 0.5]).unwrap();
        let q = DiscreteDistribution::new(&[1.0, 0.0]).unwrap();
        assert!(kl_divergence(&p, &q).is_err());
    }

    #[test]
    fn alias_sampling_matches_pmf() {
        let d = DiscreteDistribution::new(&[0.2, 0.3, 0.5]).unwrap();
        let mut rng = rng_from_seed(5);
        let m = 200_000;
        let mut counts = [0u64; 3];
        for _ in 0..m {
            counts[d.sample(&mut rng)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = d.prob(i);
            let se = (p * (1.0 - p) / m as f64).sqrt();
            assert!((c as f64 / m as f64 - p).abs() < 5.0 * se, "bin {i}");
        }
    }

    #[test]
    fn histogram_draw_matches_pmf_and_total() {
        let d = DiscreteDistribution::new(&[0.2, 0.3, 0.5]).unwrap();
        let mut rng = rng_from_seed(6);
        let m = 200_000u64;
        let hist = d.sample_histogram(m, &mut rng);
        assert_eq!(hist.iter().sum::<u64>(), m);
        for (i, &c) in hist.iter().enumerate() {
            let p = d.prob(i);
            let se = (p * (1.0 - p) / m as f64).sqrt();
            assert!((c as f64 / m as f64 - p).abs() < 5.0 * se, "bin {i}");
        }
    }

    #[test]
    fn stream_budget_is_enforced() {
        let d = Arc::new(DiscreteDistribution::uniform(4));
        let mut s = SampleStream::with_budget(d.clone(), 1, 10);
        assert!(s.draw_histogram(&d, 8).is_ok());
        assert!(matches!(
            s.draw_histogram(&d, 8),
            Err(Error::BudgetExhausted { budget: 10, drawn: 8 })
        ));
    }

    #[test]
    fn equal_seeds_give_identical_streams() {
        let d = Arc::new(DiscreteDistribution::uniform(6));
        let mut a = SampleStream::new(d.clone(), 42);
        let mut b = SampleStream::new(d.clone(), 42);
        for _ in 0..100 {
            assert_eq!(a.draw().unwrap(), b.draw().unwrap());
        }
    }

    #[test]
    fn coin_chain_endpoints_and_spacing() {
        let chain = coin_chain(0.25, 83).unwrap();
        assert_eq!(chain.len(), 84);
        assert!((chain.steps[0].primary.prob(1) - 0.5).abs() < 1e-15);
        assert!((chain.steps[83].primary.prob(1) - 0.75).abs() < 1e-12);
        for w in chain.steps.windows(2) {
            let diff = w[1].primary.prob(1) - w[0].primary.prob(1);
            assert!((diff - 0.25 / 83.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniformity_chain_known_pmfs() {
        let chain = uniformity_chain(4, 0.5, 2).unwrap();
        let mid = chain.steps[1].primary.pmf();
        let end = chain.steps[2].primary.pmf();
        for (got, want) in mid.iter().zip([0.3125, 0.1875, 0.3125, 0.1875]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in end.iter().zip([0.375, 0.125, 0.375, 0.125]) {
            assert!((got - want).abs() < 1e-15);
        }
        let uni = DiscreteDistribution::uniform(4);
        assert!((l1_distance(&chain.steps[2].primary, &uni).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn closeness_chain_moves_mass_linearly() {
        let chain = closeness_chain(40, 0.5, 2).unwrap();
        let p = &chain.steps[0].primary;
        let q0 = chain.steps[0].secondary.as_ref().unwrap();
        let qt = chain.steps[2].secondary.as_ref().unwrap();
        assert!(l1_distance(p, q0).unwrap() < 1e-12);
        assert!((tv_distance(p, qt).unwrap() - 0.5).abs() < 1e-12);
        for step in &chain.steps {
            let sum: f64 = step.secondary.as_ref().unwrap().pmf().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn chain_json_roundtrip() {
        let chain = coin_chain(0.2, 3).unwrap();
        let json = chain.to_json().unwrap();
        let back = ChainFamily::from_json(&json).unwrap();
        assert_eq!(back.len(), chain.len());
        assert_eq!(back.kind, ChainKind::Coin);
        assert!((back.steps[2].primary.prob(1) - chain.steps[2].primary.prob(1)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn construction_normalizes(weights in proptest::collection::vec(0.01f64..10.0, 1..12)) {
            let d = DiscreteDistribution::new(&weights).unwrap();
            let sum: f64 = d.pmf().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pinsker_inequality_holds(a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let p = DiscreteDistribution::bernoulli(a).unwrap();
            let q = DiscreteDistribution::bernoulli(b).unwrap();
            let kl = kl_divergence(&p, &q).unwrap();
            let tv = tv_distance(&p, &q).unwrap();
            prop_assert!(kl + 1e-12 >= 2.0 * tv * tv);
        }
    }
}
