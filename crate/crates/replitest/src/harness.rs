//! Empirical measurement of replicability, accuracy, and sample cost, plus
//! the canonicalizing and symmetrizing wrappers.

use std::sync::Arc;

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{kl_divergence, ChainFamily, ChainKind, DiscreteDistribution, SampleStream};
use crate::error::{Error, Result};
use crate::expectation_gap::{Decision, Stage, Tester, TesterVerdict};
use crate::rng::{derive_seed, rng_from_seed, Role};
use crate::testers::{CoinProblem, CoinTester, SliceTester};

const Z_95: f64 = 1.959963984540054;

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: u64, trials: u64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (Z_95 / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Normal-approximation standard error of a proportion.
pub fn proportion_stderr(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicabilityReport {
    pub tester: String,
    pub trials: u64,
    pub disagreements: u64,
    pub disagreement_rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub accept_rate_run1: f64,
    pub accept_rate_run2: f64,
    pub mean_samples: f64,
    pub max_samples: u64,
    pub master_seed: u64,
}

struct TrialStat {
    disagree: bool,
    accept1: bool,
    accept2: bool,
    samples: u64,
}

fn run_trials<F, T>(trials: u64, f: F) -> Result<Vec<T>>
where
    F: Fn(u64) -> Result<T> + Sync,
    T: Send,
{
    (0..trials)
        .into_par_iter()
        .map(|i| f(i).map_err(|e| Error::Trial { trial: i as usize, source: Box::new(e) }))
        .collect()
}

/// Disagreement rate between two runs per trial: independent sample seeds,
/// one shared internal-randomness seed. This is the quantity the
/// replicability parameter rho bounds.
pub fn estimate_replicability(
    tester: &dyn Tester,
    trials: u64,
    master_seed: u64,
) -> Result<ReplicabilityReport> {
    if trials < 100 {
        return Err(Error::Parameter(format!("need >= 100 trials, got {trials}")));
    }
    let stats = run_trials(trials, |i| {
        let s1 = derive_seed(master_seed, i, Role::Samples1);
        let s2 = derive_seed(master_seed, i, Role::Samples2);
        let rr = derive_seed(master_seed, i, Role::Randomness);
        let v1 = tester.run(s1, rr)?;
        let v2 = tester.run(s2, rr)?;
        Ok(TrialStat {
            disagree: v1.decision != v2.decision,
            accept1: v1.decision == Decision::Accept,
            accept2: v2.decision == Decision::Accept,
            samples: v1.samples_used + v2.samples_used,
        })
    })?;
    let disagreements = stats.iter().filter(|s| s.disagree).count() as u64;
    let (lo, hi) = wilson_ci(disagreements, trials);
    Ok(ReplicabilityReport {
        tester: tester.name(),
        trials,
        disagreements,
        disagreement_rate: disagreements as f64 / trials as f64,
        wilson_low: lo,
        wilson_high: hi,
        accept_rate_run1: stats.iter().filter(|s| s.accept1).count() as f64 / trials as f64,
        accept_rate_run2: stats.iter().filter(|s| s.accept2).count() as f64 / trials as f64,
        mean_samples: stats.iter().map(|s| s.samples as f64).sum::<f64>() / trials as f64,
        max_samples: stats.iter().map(|s| s.samples).max().unwrap_or(0),
        master_seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyReport {
    pub tester: String,
    pub expected: Decision,
    pub trials: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub mean_samples: f64,
    pub max_samples: u64,
    pub master_seed: u64,
}

/// Fraction of independent runs returning the expected decision.
pub fn estimate_accuracy(
    tester: &dyn Tester,
    expected: Decision,
    trials: u64,
    master_seed: u64,
) -> Result<AccuracyReport> {
    if trials == 0 {
        return Err(Error::Parameter("need >= 1 trial".into()));
    }
    let stats = run_trials(trials, |i| {
        let s1 = derive_seed(master_seed, i, Role::Samples1);
        let rr = derive_seed(master_seed, i, Role::Randomness);
        let v = tester.run(s1, rr)?;
        Ok((v.decision == expected, v.samples_used))
    })?;
    let correct = stats.iter().filter(|s| s.0).count() as u64;
    let (lo, hi) = wilson_ci(correct, trials);
    Ok(AccuracyReport {
        tester: tester.name(),
        expected,
        trials,
        correct,
        accuracy: correct as f64 / trials as f64,
        wilson_low: lo,
        wilson_high: hi,
        mean_samples: stats.iter().map(|s| s.1 as f64).sum::<f64>() / trials as f64,
        max_samples: stats.iter().map(|s| s.1).max().unwrap_or(0),
        master_seed,
    })
}

/// Canonical-form wrapper: computes the inner tester's acceptance
/// probability f(X) for the sampled data, then accepts iff a single
/// uniform draw r satisfies r <= f(X). Two runs sharing r disagree only
/// when r falls between the two f values.
pub struct CanonicalTester {
    inner: Arc<dyn Tester>,
    /// Replay count of the Monte Carlo fallback when no exact f exists.
    mc_rounds: u64,
}

pub fn canonicalize(inner: Arc<dyn Tester>, mc_rounds: u64) -> Result<CanonicalTester> {
    if mc_rounds == 0 {
        return Err(Error::Parameter("canonicalize needs mc_rounds >= 1".into()));
    }
    Ok(CanonicalTester { inner, mc_rounds })
}

impl CanonicalTester {
    /// f(X) for the sample sequence this seed generates: exact when the
    /// inner tester exposes it, otherwise an internal-randomness replay
    /// average. Deterministic in the seed either way.
    pub fn acceptance(&self, sample_seed: u64) -> Result<f64> {
        if let Some(f) = self.inner.exact_acceptance(sample_seed)? {
            return Ok(f);
        }
        let mut accepts = 0u64;
        for i in 0..self.mc_rounds {
            let rr = derive_seed(sample_seed, i, Role::Replay);
            if self.inner.run(sample_seed, rr)?.decision == Decision::Accept {
                accepts += 1;
            }
        }
        Ok(accepts as f64 / self.mc_rounds as f64)
    }
}

impl Tester for CanonicalTester {
    fn name(&self) -> String {
        format!("canonical({})", self.inner.name())
    }

    fn run(&self, sample_seed: u64, randomness_seed: u64) -> Result<TesterVerdict> {
        let f = self.acceptance(sample_seed)?;
        let mut rng = rng_from_seed(randomness_seed);
        let r = rand::Rng::random::<f64>(&mut rng);
        Ok(TesterVerdict {
            decision: if r <= f { Decision::Accept } else { Decision::Reject },
            r_used: r,
            // Sample accounting happens inside the inner runs; the wrapper
            // itself reports only the acceptance function value.
            samples_used: 0,
            stage: Stage::Canonical,
            statistic_trace: vec![(Stage::Canonical, f)],
        })
    }
}

/// Label-symmetrized wrapper for testers over a tiny finite domain: the
/// acceptance probability is averaged over every relabeling of the domain,
/// so the wrapped tester is exactly invariant under permuted labels.
pub struct SymmetrizedTester {
    inner: Arc<dyn SliceTester>,
    dist: Arc<DiscreteDistribution>,
}

pub fn symmetrize_small(
    inner: Arc<dyn SliceTester>,
    dist: Arc<DiscreteDistribution>,
) -> Result<SymmetrizedTester> {
    let n = inner.domain_size();
    if n > 8 {
        return Err(Error::Capacity(format!(
            "symmetrize_small enumerates n! relabelings; n = {n} exceeds 8"
        )));
    }
    if dist.n() != n {
        return Err(Error::Dimension(format!(
            "distribution domain {} vs tester domain {n}",
            dist.n()
        )));
    }
    Ok(SymmetrizedTester { inner, dist })
}

impl SymmetrizedTester {
    /// h(X) = average of f(pi(X)) over all domain permutations pi. The
    /// summands are sorted first: the multiset of values is invariant under
    /// relabeling X, so the sorted sum makes h(pi(X)) = h(X) bit-exact.
    pub fn symmetric_acceptance(&self, samples: &[usize]) -> Result<f64> {
        let n = self.inner.domain_size();
        let mut values = Vec::new();
        for perm in (0..n).permutations(n) {
            let relabeled: Vec<usize> = samples.iter().map(|&x| perm[x]).collect();
            values.push(self.inner.acceptance_on(&relabeled)?);
        }
        values.sort_by(f64::total_cmp);
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }
}

impl Tester for SymmetrizedTester {
    fn name(&self) -> String {
        format!("symmetrized({})", self.inner.name())
    }

    fn run(&self, sample_seed: u64, randomness_seed: u64) -> Result<TesterVerdict> {
        let need = self.inner.max_samples()?;
        let mut stream = SampleStream::new(self.dist.clone(), sample_seed);
        let samples: Vec<usize> = (0..need).map(|_| stream.draw()).collect::<Result<_>>()?;
        let h = self.symmetric_acceptance(&samples)?;
        let mut rng = rng_from_seed(randomness_seed);
        let r = rand::Rng::random::<f64>(&mut rng);
        Ok(TesterVerdict {
            decision: if r <= h { Decision::Accept } else { Decision::Reject },
            r_used: r,
            samples_used: stream.count_drawn(),
            stage: Stage::Canonical,
            statistic_trace: vec![(Stage::Canonical, h)],
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainPairReport {
    /// Index i of the pair (p_{i-1}, p_i).
    pub index: usize,
    pub kl: f64,
    /// Pinsker bound sqrt(m * KL / 2) on the TV distance of m-sample views.
    pub tv_bound: f64,
    /// True when the bound certifies indistinguishability (< 1/2).
    pub indistinguishable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub kind: ChainKind,
    pub eps: f64,
    pub t: usize,
    pub m: u64,
    pub pairs: Vec<ChainPairReport>,
    pub all_indistinguishable: bool,
}

/// Per-adjacent-pair KL divergences of a chain and the Pinsker bound on
/// what m samples can distinguish. Closeness chains share the primary p, so
/// their pairs compare the secondary distributions.
pub fn chain_report(chain: &ChainFamily, m: u64) -> Result<ChainReport> {
    if chain.len() < 2 {
        return Err(Error::Precondition("chain_report needs >= 2 steps".into()));
    }
    let dist_of = |i: usize| -> Result<&DiscreteDistribution> {
        let step = &chain.steps[i];
        match chain.kind {
            ChainKind::Closeness => step
                .secondary
                .as_ref()
                .ok_or_else(|| Error::Contract("closeness chain step lacks secondary".into())),
            _ => Ok(&step.primary),
        }
    };
    let mut pairs = Vec::with_capacity(chain.len() - 1);
    for i in 1..chain.len() {
        let kl = kl_divergence(dist_of(i)?, dist_of(i - 1)?)?;
        let tv_bound = (m as f64 * kl / 2.0).sqrt();
        pairs.push(ChainPairReport { index: i, kl, tv_bound, indistinguishable: tv_bound < 0.5 });
    }
    let all = pairs.iter().all(|p| p.indistinguishable);
    Ok(ChainReport {
        kind: chain.kind,
        eps: chain.eps,
        t: chain.t,
        m,
        pairs,
        all_indistinguishable: all,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub rho: f64,
    pub trials: u64,
    pub mean_samples: f64,
    pub max_samples: u64,
    /// Theoretical expected-cost scale q0 (1/rho + ln(1/delta)) / eps^2.
    pub expected_bound: f64,
    /// Theoretical worst-case scale q0 (1/rho^2 + ln(1/delta)) / eps^2.
    pub worst_bound: f64,
    pub mean_ratio: f64,
    pub max_ratio: f64,
}

/// Measures coin-tester sample cost across a rho grid against the
/// theoretical scaling, on a null-biased coin (the costliest instances sit
/// inside the gap, but the null already exercises the full stage plan).
pub fn sample_complexity_sweep(
    problem_base: &CoinProblem,
    bias: f64,
    rhos: &[f64],
    trials: u64,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    if rhos.is_empty() || trials == 0 {
        return Err(Error::Parameter("sweep needs >= 1 rho and >= 1 trial".into()));
    }
    let mut rows = Vec::with_capacity(rhos.len());
    for (j, &rho) in rhos.iter().enumerate() {
        let problem = CoinProblem { rho, ..*problem_base };
        let tester = CoinTester::new(problem, bias)?;
        let seed = derive_seed(master_seed, j as u64, Role::Stage);
        let samples = run_trials(trials, |i| {
            let s = derive_seed(seed, i, Role::Samples1);
            let rr = derive_seed(seed, i, Role::Randomness);
            Ok(tester.run(s, rr)?.samples_used)
        })?;
        let eps = problem.eps();
        let ln_term = (1.0 / problem.delta).ln();
        let expected_bound = problem.q0 * (1.0 / rho + ln_term) / (eps * eps);
        let worst_bound = problem.q0 * (1.0 / (rho * rho) + ln_term) / (eps * eps);
        let mean_samples = samples.iter().map(|&s| s as f64).sum::<f64>() / trials as f64;
        let max_samples = samples.iter().copied().max().unwrap_or(0);
        rows.push(SweepRow {
            rho,
            trials,
            mean_samples,
            max_samples,
            expected_bound,
            worst_bound,
            mean_ratio: mean_samples / expected_bound,
            max_ratio: max_samples as f64 / worst_bound,
        });
    }
    Ok(rows)
}

/// CSV rendering with a schema tag line; bytes are a pure function of the
/// rows, so identical runs serialize identically.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("schema=1\n");
    out.push_str("rho,trials,mean_samples,max_samples,expected_bound,worst_bound,mean_ratio,max_ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.rho,
            r.trials,
            r.mean_samples,
            r.max_samples,
            r.expected_bound,
            r.worst_bound,
            r.mean_ratio,
            r.max_ratio
        ));
    }
    out
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    struct ConstantTester(Decision);

    impl Tester for ConstantTester {
        fn name(&self) -> String {
            "constant".into()
        }
        fn run(&self, _s: u64, _r: u64) -> crate::error::Result<TesterVerdict> {
            Ok(TesterVerdict {
                decision: self.0,
                r_used: 0.5,
                samples_used: 1,
                stage: Stage::FallThrough,
                statistic_trace: vec![],
            })
        }
    }

    /// Accepts based on the parity of its own first "sample", which is just
    /// the low bit of the sample seed stream; maximally non-replicable.
    struct ParityTester;

    impl Tester for ParityTester {
        fn name(&self) -> String {
            "parity".into()
        }
        fn run(&self, sample_seed: u64, _r: u64) -> crate::error::Result<TesterVerdict> {
            let mut rng = rng_from_seed(sample_seed);
            let bit = rand::Rng::random::<bool>(&mut rng);
            Ok(TesterVerdict {
                decision: if bit { Decision::Accept } else { Decision::Reject },
                r_used: 0.5,
                samples_used: 1,
                stage: Stage::FallThrough,
                statistic_trace: vec![],
            })
        }
    }

    /// Ignores samples; accepts iff its internal uniform draw is below p.
    struct BiasedRandomTester(f64);

    impl Tester for BiasedRandomTester {
        fn name(&self) -> String {
            "biased-random".into()
        }
        fn run(&self, _s: u64, randomness_seed: u64) -> crate::error::Result<TesterVerdict> {
            let mut rng = rng_from_seed(randomness_seed);
            let r = rand::Rng::random::<f64>(&mut rng);
            Ok(TesterVerdict {
                decision: if r < self.0 { Decision::Accept } else { Decision::Reject },
                r_used: r,
                samples_used: 0,
                stage: Stage::FallThrough,
                statistic_trace: vec![],
            })
        }
    }

    #[test]
    fn wilson_interval_contains_the_point_estimate() {
        for &(s, n) in &[(0u64, 100u64), (50, 100), (100, 100), (3, 1000)] {
            let (lo, hi) = wilson_ci(s, n);
            let p = s as f64 / n as f64;
            assert!(lo <= p + 1e-12 && p <= hi + 1e-12, "({s}, {n})");
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }

    #[test]
    fn wilson_coverage_on_synthetic_bernoulli() {
        let mut rng = rng_from_seed(33);
        let n = 50u64;
        let mut covered = 0u32;
        let sims = 1000;
        for i in 0..sims {
            let p = 0.05 + 0.9 * (i as f64 / sims as f64);
            let mut s = 0u64;
            for _ in 0..n {
                if rand::Rng::random::<f64>(&mut rng) < p {
                    s += 1;
                }
            }
            let (lo, hi) = wilson_ci(s, n);
            if lo <= p && p <= hi {
                covered += 1;
            }
        }
        assert!(covered as f64 / sims as f64 >= 0.93, "coverage {covered}/1000");
    }

    #[test]
    fn constant_tester_never_disagrees() {
        let r = estimate_replicability(&ConstantTester(Decision::Accept), 200, 1).unwrap();
        assert_eq!(r.disagreements, 0);
        assert_eq!(r.accept_rate_run1, 1.0);
        assert_eq!(r.accept_rate_run2, 1.0);
    }

    #[test]
    fn parity_tester_disagrees_half_the_time() {
        let r = estimate_replicability(&ParityTester, 2000, 2).unwrap();
        assert!((r.disagreement_rate - 0.5).abs() < 0.05, "rate {}", r.disagreement_rate);
    }

    #[test]
    fn replicability_requires_enough_trials() {
        assert!(estimate_replicability(&ParityTester, 99, 1).is_err());
    }

    #[test]
    fn accuracy_of_a_deterministic_tester_is_one() {
        let r = estimate_accuracy(&ConstantTester(Decision::Reject), Decision::Reject, 100, 1).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.wilson_low <= 1.0 && r.wilson_high == 1.0);
    }

    #[test]
    fn canonicalize_monte_carlo_estimates_known_acceptance() {
        let canon = canonicalize(std::sync::Arc::new(BiasedRandomTester(0.3)), 10_000).unwrap();
        let f = canon.acceptance(123).unwrap();
        // Binomial stderr at p = 0.3 over 10^4 replays is 0.0046.
        assert!((f - 0.3).abs() < 0.02, "f {f}");
    }

    #[test]
    fn canonical_wrapper_thresholds_on_the_shared_draw() {
        let canon = canonicalize(std::sync::Arc::new(ConstantTester(Decision::Accept)), 10).unwrap();
        // f = 1 for every X, so the wrapper always accepts.
        for seed in 0..20u64 {
            assert_eq!(canon.run(seed, seed + 7).unwrap().decision, Decision::Accept);
        }
    }

    #[test]
    fn chain_report_identical_steps_have_zero_kl() {
        let chain = crate::distributions::uniformity_chain(4, 0.5, 1).unwrap();
        let report = chain_report(&chain, 100).unwrap();
        assert_eq!(report.pairs.len(), 1);
        assert!(report.pairs[0].kl > 0.0);
        let mut same = chain.clone();
        same.steps[1] = same.steps[0].clone();
        let report = chain_report(&same, 100).unwrap();
        assert_eq!(report.pairs[0].kl, 0.0);
        assert_eq!(report.pairs[0].tv_bound, 0.0);
        assert!(report.all_indistinguishable);
    }

    #[test]
    fn sweep_output_is_deterministic() {
        let base = crate::testers::CoinProblem { p0: 0.5, q0: 0.7, rho: 0.5, delta: 0.05 };
        let a = sample_complexity_sweep(&base, 0.6, &[0.4, 0.2], 20, 9).unwrap();
        let b = sample_complexity_sweep(&base, 0.6, &[0.4, 0.2], 20, 9).unwrap();
        assert_eq!(sweep_csv(&a), sweep_csv(&b));
        assert!(sweep_csv(&a).starts_with("schema=1\n"));
    }

    #[test]
    fn symmetrizer_rejects_large_domains() {
        let problem = crate::testers::UniformityProblem::new(9, 0.5, 0.5, 0.5);
        let dist = std::sync::Arc::new(crate::distributions::DiscreteDistribution::uniform(9));
        let tester = std::sync::Arc::new(
            crate::testers::UniformityTester::new(problem, (*dist).clone()).unwrap(),
        );
        assert!(symmetrize_small(tester, dist).is_err());
    }

    #[test]
    fn symmetrized_acceptance_is_label_invariant_on_two_labels() {
        let problem = crate::testers::CoinProblem { p0: 0.5, q0: 0.7, rho: 0.5, delta: 0.25 };
        let dist = std::sync::Arc::new(crate::distributions::DiscreteDistribution::bernoulli(0.6).unwrap());
        let tester = std::sync::Arc::new(crate::testers::CoinTester::new(problem, 0.6).unwrap());
        let sym = symmetrize_small(tester.clone(), dist).unwrap();
        let need = crate::testers::SliceTester::max_samples(&*tester).unwrap() as usize;
        let mut rng = rng_from_seed(4);
        let samples: Vec<usize> =
            (0..need).map(|_| rand::Rng::random_range(&mut rng, 0..2usize)).collect();
        let swapped: Vec<usize> = samples.iter().map(|&x| 1 - x).collect();
        let h1 = sym.symmetric_acceptance(&samples).unwrap();
        let h2 = sym.symmetric_acceptance(&swapped).unwrap();
        assert_eq!(h1, h2);
    }
}
