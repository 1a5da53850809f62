//! Concrete replicable testers: coin, uniformity, closeness.

use std::sync::Arc;

use crate::distributions::{DiscreteDistribution, SampleStream};
use crate::error::{Error, Result};
use crate::expectation_gap::{
    general_collect, general_estimate, size_invariant_batches, size_invariant_collect,
    size_invariant_estimate, BatchProvider, EstimatorConfig, StatisticSpec, Tester, TesterVerdict,
};
use crate::rng::{derive_seed, Role};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CoinProblem {
    /// Null bias (accept when p = p0).
    pub p0: f64,
    /// Alternative bias (reject when p >= q0).
    pub q0: f64,
    pub rho: f64,
    pub delta: f64,
}

impl CoinProblem {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p0 && self.p0 < self.q0 && self.q0 <= 1.0) {
            return Err(Error::Parameter(format!(
                "coin problem needs 0 <= p0 < q0 <= 1, got ({}, {})",
                self.p0, self.q0
            )));
        }
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        self.q0 - self.p0
    }
}

pub struct CoinSpec {
    p0: f64,
    q0: f64,
}

/// Fraction-of-heads statistic for the biased-coin problem.
pub fn coin_spec(problem: &CoinProblem) -> Result<CoinSpec> {
    problem.validate()?;
    Ok(CoinSpec { p0: problem.p0, q0: problem.q0 })
}

impl StatisticSpec for CoinSpec {
    fn name(&self) -> &str {
        "coin"
    }
    fn tau0(&self, _m: u64) -> f64 {
        self.p0
    }
    fn tau1(&self, _m: u64) -> f64 {
        self.q0
    }
    fn sigma(&self, m: u64) -> f64 {
        (self.q0 / m as f64).sqrt()
    }
    fn m_min(&self) -> u64 {
        1
    }
    fn size_invariant(&self) -> bool {
        true
    }
}

/// Fraction of outcomes equal to 1 (heads).
pub fn coin_statistic(samples: &[usize]) -> f64 {
    let heads = samples.iter().filter(|&&x| x == 1).count();
    heads as f64 / samples.len() as f64
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct UniformityProblem {
    pub n: usize,
    pub eps: f64,
    pub rho: f64,
    pub delta: f64,
    /// Variance-model constants of the collision statistic.
    pub c1: f64,
    pub c2: f64,
}

impl UniformityProblem {
    pub fn new(n: usize, eps: f64, rho: f64, delta: f64) -> Self {
        Self { n, eps, rho, delta, c1: 2.0, c2: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Parameter("uniformity needs n >= 2".into()));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::Parameter(format!("uniformity eps {} outside (0,1]", self.eps)));
        }
        Ok(())
    }
}

pub struct UniformitySpec {
    n: f64,
    eps: f64,
    c1: f64,
    c2: f64,
}

/// Collision-fraction statistic; E[Z] = ||p||_2^2, which is 1/n exactly at
/// uniform and at least (1+eps^2)/n when eps-far in L1.
pub fn uniformity_spec(problem: &UniformityProblem) -> Result<UniformitySpec> {
    problem.validate()?;
    Ok(UniformitySpec {
        n: problem.n as f64,
        eps: problem.eps,
        c1: problem.c1,
        c2: problem.c2,
    })
}

impl StatisticSpec for UniformitySpec {
    fn name(&self) -> &str {
        "uniformity-collision"
    }
    fn tau0(&self, _m: u64) -> f64 {
        1.0 / self.n
    }
    fn tau1(&self, _m: u64) -> f64 {
        (1.0 + self.eps * self.eps) / self.n
    }
    fn sigma(&self, m: u64) -> f64 {
        let m = m as f64;
        self.c1 / (m * self.n.sqrt())
            + (self.c2 / m.sqrt()) * (self.eps / self.n + self.eps.powf(1.5) / self.n.powf(0.75))
    }
    fn m_min(&self) -> u64 {
        2
    }
    fn size_invariant(&self) -> bool {
        true
    }
}

/// Number of colliding pairs divided by C(m,2), via a histogram.
pub fn collision_statistic(samples: &[usize], n: usize) -> Result<f64> {
    let m = samples.len() as u64;
    if m < 2 {
        return Err(Error::Precondition("collision statistic needs m >= 2".into()));
    }
    let mut hist = vec![0u64; n];
    for &x in samples {
        if x >= n {
            return Err(Error::Domain(format!("sample {x} outside domain [{n}]")));
        }
        hist[x] += 1;
    }
    Ok(collisions_from_hist(&hist))
}

fn collisions_from_hist(hist: &[u64]) -> f64 {
    let m: u64 = hist.iter().sum();
    let pairs: u64 = hist.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    pairs as f64 / (m * (m - 1) / 2) as f64
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ClosenessProblem {
    pub n: usize,
    pub eps: f64,
    pub rho: f64,
    /// Failure probability exponent: delta = rho^c.
    pub c: f64,
    /// Draw Poi(m) samples per side instead of exactly m.
    pub poissonized: bool,
}

impl ClosenessProblem {
    pub fn new(n: usize, eps: f64, rho: f64) -> Self {
        Self { n, eps, rho, c: 2.0, poissonized: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Parameter("closeness needs n >= 2".into()));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::Parameter(format!("closeness eps {} outside (0,1]", self.eps)));
        }
        if self.c < 1.0 {
            return Err(Error::Parameter("closeness exponent c must be >= 1".into()));
        }
        Ok(())
    }
}

pub struct ClosenessSpec {
    n: f64,
    eps: f64,
}

/// Chi-square style two-sample statistic on poissonized counts.
pub fn closeness_spec(problem: &ClosenessProblem) -> Result<ClosenessSpec> {
    problem.validate()?;
    Ok(ClosenessSpec { n: problem.n as f64, eps: problem.eps })
}

impl StatisticSpec for ClosenessSpec {
    fn name(&self) -> &str {
        "closeness-chisq"
    }
    fn tau0(&self, _m: u64) -> f64 {
        0.0
    }
    fn tau1(&self, m: u64) -> f64 {
        let m = m as f64;
        m * m * self.eps * self.eps / (4.0 * self.n + 2.0 * m)
    }
    // Case split from the variance proof: sparse regime below m = n.
    fn sigma(&self, m: u64) -> f64 {
        let mf = m as f64;
        if mf < self.n {
            (20.0 * mf).sqrt()
        } else {
            (10.0 * self.n + 5.0 * mf * self.eps * self.eps).sqrt()
        }
    }
    fn m_min(&self) -> u64 {
        1
    }
    fn size_invariant(&self) -> bool {
        false
    }
}

/// Sum over bins of ((X_i - Y_i)^2 - X_i - Y_i)/(X_i + Y_i); empty bins
/// contribute 0 (their numerator vanishes along with the denominator).
pub fn closeness_statistic(hist_x: &[f64], hist_y: &[f64]) -> Result<f64> {
    if hist_x.len() != hist_y.len() {
        return Err(Error::Dimension(format!(
            "histogram lengths {} vs {}",
            hist_x.len(),
            hist_y.len()
        )));
    }
    let mut acc = 0.0;
    for (&x, &y) in hist_x.iter().zip(hist_y) {
        if x < 0.0 || y < 0.0 {
            return Err(Error::Domain("negative count in closeness statistic".into()));
        }
        let s = x + y;
        if s > 0.0 {
            let d = x - y;
            acc += (d * d - x - y) / s;
        }
    }
    Ok(acc)
}

/// Batch provider for coin and uniformity runs over a discrete stream.
/// Batches are materialized as histograms through the multinomial shortcut,
/// which is distributionally identical to per-sample draws.
pub struct DiscreteBatches<'a> {
    stream: &'a mut SampleStream<usize>,
    dist: &'a DiscreteDistribution,
    kind: DiscreteStatistic,
}

#[derive(Clone, Copy)]
pub enum DiscreteStatistic {
    HeadsFraction,
    CollisionFraction,
}

impl<'a> DiscreteBatches<'a> {
    pub fn new(
        stream: &'a mut SampleStream<usize>,
        dist: &'a DiscreteDistribution,
        kind: DiscreteStatistic,
    ) -> Self {
        Self { stream, dist, kind }
    }
}

impl BatchProvider for DiscreteBatches<'_> {
    fn next_statistic(&mut self, m: u64) -> Result<f64> {
        let hist = self.stream.draw_histogram(self.dist, m)?;
        Ok(match self.kind {
            DiscreteStatistic::HeadsFraction => hist[1] as f64 / m as f64,
            DiscreteStatistic::CollisionFraction => collisions_from_hist(&hist),
        })
    }

    fn samples_used(&self) -> u64 {
        self.stream.count_drawn()
    }
}

/// Batch provider over an explicit sample sequence, for acceptance
/// probability as a function of relabeled samples.
pub struct SliceBatches<'a> {
    samples: &'a [usize],
    pos: usize,
    n: usize,
    kind: DiscreteStatistic,
}

impl<'a> SliceBatches<'a> {
    pub fn new(samples: &'a [usize], n: usize, kind: DiscreteStatistic) -> Self {
        Self { samples, pos: 0, n, kind }
    }
}

impl BatchProvider for SliceBatches<'_> {
    fn next_statistic(&mut self, m: u64) -> Result<f64> {
        let end = self.pos + m as usize;
        if end > self.samples.len() {
            return Err(Error::Sampling(format!(
                "sample slice exhausted: need {end}, have {}",
                self.samples.len()
            )));
        }
        let batch = &self.samples[self.pos..end];
        self.pos = end;
        Ok(match self.kind {
            DiscreteStatistic::HeadsFraction => coin_statistic(batch),
            DiscreteStatistic::CollisionFraction => collision_statistic(batch, self.n)?,
        })
    }

    fn samples_used(&self) -> u64 {
        self.pos as u64
    }
}

/// Poissonized two-stream provider for the closeness statistic.
pub struct ClosenessBatches<'a> {
    stream_p: &'a mut SampleStream<usize>,
    stream_q: &'a mut SampleStream<usize>,
    dist_p: &'a DiscreteDistribution,
    dist_q: &'a DiscreteDistribution,
    poissonized: bool,
}

impl BatchProvider for ClosenessBatches<'_> {
    fn next_statistic(&mut self, m: u64) -> Result<f64> {
        let n1 = if self.poissonized { self.stream_p.draw_poisson_count(m as f64) } else { m };
        let n2 = if self.poissonized { self.stream_q.draw_poisson_count(m as f64) } else { m };
        let hx = self.stream_p.draw_histogram(self.dist_p, n1)?;
        let hy = self.stream_q.draw_histogram(self.dist_q, n2)?;
        let hx: Vec<f64> = hx.iter().map(|&c| c as f64).collect();
        let hy: Vec<f64> = hy.iter().map(|&c| c as f64).collect();
        closeness_statistic(&hx, &hy)
    }

    fn samples_used(&self) -> u64 {
        self.stream_p.count_drawn() + self.stream_q.count_drawn()
    }
}

fn coin_config(problem: &CoinProblem, randomness_seed: u64) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::new(problem.rho, problem.delta);
    cfg.randomness_seed = randomness_seed;
    // Flat schedule: every t_k = 1/8.
    cfg.t_schedule = None;
    cfg
}

/// Replicable coin test: size-invariant estimator with the all-1/8 schedule.
/// `dist` must be the two-point distribution the stream draws from.
pub fn coin_test(
    problem: &CoinProblem,
    dist: &DiscreteDistribution,
    stream: &mut SampleStream<usize>,
    randomness_seed: u64,
) -> Result<TesterVerdict> {
    let spec = coin_spec(problem)?;
    let cfg = coin_config(problem, randomness_seed);
    let mut batches = DiscreteBatches::new(stream, dist, DiscreteStatistic::HeadsFraction);
    size_invariant_estimate(&spec, &cfg, &mut batches)
}

fn uniformity_config(problem: &UniformityProblem, randomness_seed: u64) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::new(problem.rho, problem.delta);
    cfg.randomness_seed = randomness_seed;
    let k = cfg.levels();
    cfg.t_schedule = Some((1..=k).map(|j| 0.5f64.powi(j as i32)).collect());
    cfg
}

/// Replicable uniformity test: size-invariant estimator with t_k = 2^-k.
pub fn uniformity_test(
    problem: &UniformityProblem,
    dist: &DiscreteDistribution,
    stream: &mut SampleStream<usize>,
    randomness_seed: u64,
) -> Result<TesterVerdict> {
    let spec = uniformity_spec(problem)?;
    let cfg = uniformity_config(problem, randomness_seed);
    let mut batches = DiscreteBatches::new(stream, dist, DiscreteStatistic::CollisionFraction);
    size_invariant_estimate(&spec, &cfg, &mut batches)
}

fn closeness_config(problem: &ClosenessProblem, randomness_seed: u64) -> EstimatorConfig {
    // The natural accuracy knob is t = rho; the estimator's admissible
    // range caps t at 1/16, so larger rho values are clamped.
    let delta = problem.rho.powf(problem.c);
    let mut cfg = EstimatorConfig::new(problem.rho, delta);
    cfg.randomness_seed = randomness_seed;
    cfg
}

/// Replicable closeness test: general estimator on the poissonized
/// chi-square statistic.
pub fn closeness_test(
    problem: &ClosenessProblem,
    dist_p: &DiscreteDistribution,
    stream_p: &mut SampleStream<usize>,
    dist_q: &DiscreteDistribution,
    stream_q: &mut SampleStream<usize>,
    randomness_seed: u64,
) -> Result<TesterVerdict> {
    if dist_p.n() != dist_q.n() {
        return Err(Error::Dimension(format!("domains {} vs {}", dist_p.n(), dist_q.n())));
    }
    let spec = closeness_spec(problem)?;
    let cfg = closeness_config(problem, randomness_seed);
    let mut batches = ClosenessBatches {
        stream_p,
        stream_q,
        dist_p,
        dist_q,
        poissonized: problem.poissonized,
    };
    general_estimate(&spec, &cfg, &mut batches)
}

/// Owns a coin problem and the coin actually under test.
pub struct CoinTester {
    pub problem: CoinProblem,
    pub dist: Arc<DiscreteDistribution>,
}

impl CoinTester {
    pub fn new(problem: CoinProblem, bias: f64) -> Result<Self> {
        problem.validate()?;
        Ok(Self { problem, dist: Arc::new(DiscreteDistribution::bernoulli(bias)?) })
    }

    fn run_inner(&self, sample_seed: u64, randomness_seed: u64, budget: Option<u64>) -> Result<TesterVerdict> {
        let mut stream = match budget {
            Some(b) => SampleStream::with_budget(self.dist.clone(), sample_seed, b),
            None => SampleStream::new(self.dist.clone(), sample_seed),
        };
        coin_test(&self.problem, &self.dist, &mut stream, randomness_seed)
    }
}

impl Tester for CoinTester {
    fn name(&self) -> String {
        format!("coin(p0={}, q0={})", self.problem.p0, self.problem.q0)
    }

    fn run(&self, sample_seed: u64, randomness_seed: u64) -> Result<TesterVerdict> {
        self.run_inner(sample_seed, randomness_seed, None)
    }

    fn run_budgeted(&self, sample_seed: u64, randomness_seed: u64, budget: u64) -> Result<TesterVerdict> {
        self.run_inner(sample_seed, randomness_seed, Some(budget))
    }

    fn exact_acceptance(&self, sample_seed: u64) -> Result<Option<f64>> {
        let spec = coin_spec(&self.problem)?;
        let cfg = coin_config(&self.problem, 0);
        let mut stream = SampleStream::new(self.dist.clone(), sample_seed);
        let mut batches =
            DiscreteBatches::new(&mut stream, &self.dist, DiscreteStatistic::HeadsFraction);
        let outcome = size_invariant_collect(&spec, &cfg, &mut batches)?;
        Ok(Some(outcome.acceptance_probability()))
    }
}

pub struct UniformityTester {
    pub problem: UniformityProblem,
    pub dist: Arc<DiscreteDistribution>,
}

impl UniformityTester {
    pub fn new(problem: UniformityProblem, dist: DiscreteDistribution) -> Result<Self> {
        problem.validate()?;
        if dist.n() != problem.n {
            return Err(Error::Dimension(format!(
                "distribution domain {} vs problem n {}",
                dist.n(),
                problem.n
            )));
        }
        Ok(Self { problem, dist: Arc::new(dist) })
    }

    fn run_inner(&self, sample_seed: u64, randomness_seed: u64, budget: Option<u64>) -> Result<TesterVerdict> {
        let mut stream = match budget {
            Some(b) => SampleStream::with_budget(self.dist.clone(), sample_seed, b),
            None => SampleStream::new(self.dist.clone(), sample_seed),
        };
        uniformity_test(&self.problem, &self.dist, &mut stream, randomness_seed)
    }
}

impl Tester for UniformityTester {
    fn name(&self) -> String {
        format!("uniformity(n={}, eps={})", self.problem.n, self.problem.eps)
    }

    fn run(&self, sample_seed: u64, randomness_seed: u64) -> Result<TesterVerdict> {
        self.run_inner(sample_seed, randomness_seed, None)
    }

    fn run_budgeted(&self, sample_seed: u64, randomness_seed: u64, budget: u64) -> Result<TesterVerdict> {
        self.run_inner(sample_seed, randomness_seed, Some(budget))
    }

    fn exact_acceptance(&self, sample_seed: u64) -> Result<Option<f64>> {
        let spec = uniformity_spec(&self.problem)?;
        let cfg = uniformity_config(&self.problem, 0);
        let mut stream = SampleStream::new(self.dist.clone(), sample_seed);
        let mut batches =
            DiscreteBatches::new(&mut stream, &self.dist, DiscreteStatistic::CollisionFraction);
        let outcome = size_invariant_collect(&spec, &cfg, &mut batches)?;
        Ok(Some(outcome.acceptance_probability()))
    }
}

pub struct ClosenessTester {
    pub problem: ClosenessProblem,
    pub p: Arc<DiscreteDistribution>,
    pub q: Arc<DiscreteDistribution>,
}

impl ClosenessTester {
    pub fn new(problem: ClosenessProblem, p: DiscreteDistribution, q: DiscreteDistribution) -> Result<Self> {
        problem.validate()?;
        if p.n() != q.n() {
            return Err(Error::Dimension(format!("domains {} vs {}", p.n(), q.n())));
        }
        Ok(Self { problem, p: Arc::new(p), q: Arc::new(q) })
    }

    fn streams(&self, sample_seed: u64, budget: Option<u64>) -> (SampleStream<usize>, SampleStream<usize>) {
        let sp = derive_seed(sample_seed, 0, Role::Stage);
        let sq = derive_seed(sample_seed, 1, Role::Stage);
        match budget {
            // Budget is split evenly; either side exhausting its half stops the run.
            Some(b) => (
                SampleStream::with_budget(self.p.clone(), sp, b / 2),
                SampleStream::with_budget(self.q.clone(), sq, b - b / 2),
            ),
            None => (
                SampleStream::new(self.p.clone(), sp),
                SampleStream::new(self.q.clone(), sq),
            ),
        }
    }
}

impl Tester for ClosenessTester {
    fn name(&self) -> String {
        format!("closeness(n={}, eps={})", self.problem.n, self.problem.eps)
    }

    fn run(&self, sample_seed: u64, randomness_seed: u64) -> Result<TesterVerdict> {
        let (mut sp, mut sq) = self.streams(sample_seed, None);
        closeness_test(&self.problem, &self.p, &mut sp, &self.q, &mut sq, randomness_seed)
    }

    fn run_budgeted(&self, sample_seed: u64, randomness_seed: u64, budget: u64) -> Result<TesterVerdict> {
        let (mut sp, mut sq) = self.streams(sample_seed, Some(budget));
        closeness_test(&self.problem, &self.p, &mut sp, &self.q, &mut sq, randomness_seed)
    }

    fn exact_acceptance(&self, sample_seed: u64) -> Result<Option<f64>> {
        let spec = closeness_spec(&self.problem)?;
        let cfg = closeness_config(&self.problem, 0);
        let (mut sp, mut sq) = self.streams(sample_seed, None);
        let mut batches = ClosenessBatches {
            stream_p: &mut sp,
            stream_q: &mut sq,
            dist_p: &self.p,
            dist_q: &self.q,
            poissonized: self.problem.poissonized,
        };
        let (outcome, _) = general_collect(&spec, &cfg, &mut batches)?;
        Ok(Some(outcome.acceptance_probability()))
    }
}

/// A tester whose acceptance probability is a function of an explicit
/// sample sequence over a finite domain; the hook the small-domain label
/// symmetrizer needs.
pub trait SliceTester: Tester {
    fn domain_size(&self) -> usize;
    /// Worst-case sample consumption of one run.
    fn max_samples(&self) -> Result<u64>;
    /// Acceptance probability over internal randomness given the sequence.
    fn acceptance_on(&self, samples: &[usize]) -> Result<f64>;
}

impl SliceTester for CoinTester {
    fn domain_size(&self) -> usize {
        2
    }

    fn max_samples(&self) -> Result<u64> {
        let spec = coin_spec(&self.problem)?;
        let cfg = coin_config(&self.problem, 0);
        Ok(size_invariant_batches(&spec, &cfg)?.iter().map(|(m, c)| m * c).sum())
    }

    fn acceptance_on(&self, samples: &[usize]) -> Result<f64> {
        let spec = coin_spec(&self.problem)?;
        let cfg = coin_config(&self.problem, 0);
        let mut batches = SliceBatches::new(samples, 2, DiscreteStatistic::HeadsFraction);
        Ok(size_invariant_collect(&spec, &cfg, &mut batches)?.acceptance_probability())
    }
}

impl SliceTester for UniformityTester {
    fn domain_size(&self) -> usize {
        self.problem.n
    }

    fn max_samples(&self) -> Result<u64> {
        let spec = uniformity_spec(&self.problem)?;
        let cfg = uniformity_config(&self.problem, 0);
        Ok(size_invariant_batches(&spec, &cfg)?.iter().map(|(m, c)| m * c).sum())
    }

    fn acceptance_on(&self, samples: &[usize]) -> Result<f64> {
        let spec = uniformity_spec(&self.problem)?;
        let cfg = uniformity_config(&self.problem, 0);
        let mut batches =
            SliceBatches::new(samples, self.problem.n, DiscreteStatistic::CollisionFraction);
        Ok(size_invariant_collect(&spec, &cfg, &mut batches)?.acceptance_probability())
    }
}

/// Non-replicable one-shot coin test on a fixed batch; the fallback used
/// with `cap_samples`.
pub struct FixedBatchCoinTester {
    pub problem: CoinProblem,
    pub dist: Arc<DiscreteDistribution>,
    pub m: u64,
}

impl FixedBatchCoinTester {
    pub fn new(problem: CoinProblem, bias: f64) -> Result<Self> {
        problem.validate()?;
        let eps = problem.eps();
        let m = ((8.0 * problem.q0 * (1.0 / problem.delta).ln() / (eps * eps)).ceil() as u64).max(1);
        Ok(Self { problem, dist: Arc::new(DiscreteDistribution::bernoulli(bias)?), m })
    }
}

impl Tester for FixedBatchCoinTester {
    fn name(&self) -> String {
        "coin-fixed-batch".into()
    }

    fn run(&self, sample_seed: u64, _randomness_seed: u64) -> Result<TesterVerdict> {
        let mut stream = SampleStream::new(self.dist.clone(), sample_seed);
        let hist = stream.draw_histogram(&self.dist, self.m)?;
        let z = hist[1] as f64 / self.m as f64;
        let cut = 0.5 * (self.problem.p0 + self.problem.q0);
        Ok(TesterVerdict {
            decision: if z < cut {
                crate::expectation_gap::Decision::Accept
            } else {
                crate::expectation_gap::Decision::Reject
            },
            r_used: 0.5,
            samples_used: stream.count_drawn(),
            stage: crate::expectation_gap::Stage::Fallback,
            statistic_trace: vec![(crate::expectation_gap::Stage::Fallback, z)],
        })
    }
}
