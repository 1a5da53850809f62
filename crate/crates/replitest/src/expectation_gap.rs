//! Expectation-gap statistics and the two estimator algorithms built on them.
//!
//! A statistic spec supplies thresholds tau0(m) <= E[Z] under the null,
//! tau1(m) >= E[Z] under the alternative, and a deviation bound sigma(m).
//! The estimators never see raw samples; they pull statistic values for
//! batches of a requested nominal size through a `BatchProvider`, which
//! keeps the decision logic independent of the sample type.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, uniform_in, derive_seed, Role};

pub trait StatisticSpec: Send + Sync {
    fn name(&self) -> &str;
    /// Null threshold: upper bound on E[Z(m)] under H0.
    fn tau0(&self, m: u64) -> f64;
    /// Alternative threshold: lower bound on E[Z(m)] under H1.
    fn tau1(&self, m: u64) -> f64;
    /// Deviation scale; sqrt(Var Z(m)) is bounded by sigma(m) times the
    /// expectation-gap growth factor.
    fn sigma(&self, m: u64) -> f64;
    fn m_min(&self) -> u64;
    /// True when tau0, tau1 do not depend on m.
    fn size_invariant(&self) -> bool;
}

/// Threshold gap Delta(m) = tau1(m) - tau0(m).
pub fn delta_gap(spec: &dyn StatisticSpec, m: u64) -> Result<f64> {
    if m < spec.m_min() {
        return Err(Error::Precondition(format!(
            "m = {m} below m_min = {} for {}",
            spec.m_min(),
            spec.name()
        )));
    }
    Ok(spec.tau1(m) - spec.tau0(m))
}

/// Noise-to-signal ratio f(m) = sigma(m)/Delta(m).
pub fn noise_to_signal(spec: &dyn StatisticSpec, m: u64) -> Result<f64> {
    let d = delta_gap(spec, m)?;
    Ok(spec.sigma(m) / d)
}

/// Checks the registration-time spec invariants on a grid of m values.
pub fn validate_spec(spec: &dyn StatisticSpec) -> Result<()> {
    let m0 = spec.m_min().max(1);
    let grid: Vec<u64> = (0..12).map(|i| m0.saturating_mul(1 << i)).collect();
    let t0 = spec.tau0(m0);
    let t1 = spec.tau1(m0);
    for &m in &grid {
        if spec.tau1(m) < spec.tau0(m) {
            return Err(Error::Contract(format!(
                "{}: tau1({m}) < tau0({m})",
                spec.name()
            )));
        }
        if spec.size_invariant() && (spec.tau0(m) != t0 || spec.tau1(m) != t1) {
            return Err(Error::Contract(format!(
                "{}: thresholds vary with m despite size_invariant",
                spec.name()
            )));
        }
    }
    Ok(())
}

fn breakpoint_pred(spec: &dyn StatisticSpec, t: f64, m: u64) -> bool {
    let d = spec.tau1(m) - spec.tau0(m);
    if d <= 0.0 {
        return false;
    }
    let f = spec.sigma(m) / d;
    f.is_finite() && f <= t / 2.0
}

const BREAKPOINT_CAP: u64 = 1 << 60;

/// Smallest m >= m_min with f(m) <= t/2, by doubling plus binary search.
/// Assumes the predicate is monotone in m; use `breakpoint_scan` for specs
/// where that is in doubt.
pub fn breakpoint(spec: &dyn StatisticSpec, t: f64) -> Result<u64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Parameter(format!("breakpoint t {t} outside (0,1]")));
    }
    let m0 = spec.m_min().max(1);
    if breakpoint_pred(spec, t, m0) {
        return Ok(m0);
    }
    let mut lo = m0; // pred false
    let mut hi = m0;
    loop {
        hi = hi.saturating_mul(2);
        if hi > BREAKPOINT_CAP {
            return Err(Error::UnreachableBreakpoint);
        }
        if breakpoint_pred(spec, t, hi) {
            break;
        }
        lo = hi;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if breakpoint_pred(spec, t, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Linear-scan breakpoint oracle for possibly non-monotone f(m).
pub fn breakpoint_scan(spec: &dyn StatisticSpec, t: f64, cap: u64) -> Result<u64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Parameter(format!("breakpoint t {t} outside (0,1]")));
    }
    for m in spec.m_min().max(1)..=cap {
        if breakpoint_pred(spec, t, m) {
            return Ok(m);
        }
    }
    Err(Error::UnreachableBreakpoint)
}

/// Chebyshev deviation probability f(m)^2 / alpha^2 for a deviation of
/// alpha * Delta(m) when E[Z] lies inside the gap interval.
pub fn chebyshev_bound(spec: &dyn StatisticSpec, m: u64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha {alpha} outside (0,1]")));
    }
    let f = noise_to_signal(spec, m)?;
    Ok(f * f / (alpha * alpha))
}

/// Supplies statistic values for fresh batches of a requested nominal size.
pub trait BatchProvider {
    fn next_statistic(&mut self, m: u64) -> Result<f64>;
    /// Total samples drawn so far (actual draws, not nominal).
    fn samples_used(&self) -> u64;
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorConfig {
    pub rho: f64,
    pub delta: f64,
    /// Accuracy knob of the general estimator, in (0, 1/16].
    pub t: f64,
    /// Per-level accuracy for the size-invariant estimator; defaults to the
    /// all-1/8 schedule when absent.
    pub t_schedule: Option<Vec<f64>>,
    /// Repetition constant C'; L = ceil(C' t^2 / rho^2).
    pub rep_constant: f64,
    pub sample_seed: u64,
    pub randomness_seed: u64,
    /// Resolve breakpoints by linear scan instead of binary search.
    pub strict_scan: bool,
    /// Desk-scale override: use this batch size instead of the breakpoint.
    /// Needed when the caller must respect a hard sample budget.
    pub batch_size: Option<u64>,
    /// Desk-scale override for the repetition count L of general_estimate.
    pub max_batches: Option<u64>,
}

impl EstimatorConfig {
    pub fn new(rho: f64, delta: f64) -> Self {
        Self {
            rho,
            delta,
            t: (rho.min(1.0 / 16.0)).max(f64::MIN_POSITIVE),
            t_schedule: None,
            rep_constant: 64.0,
            sample_seed: 0,
            randomness_seed: 0,
            strict_scan: false,
            batch_size: None,
            max_batches: None,
        }
    }

    pub fn with_seeds(mut self, sample_seed: u64, randomness_seed: u64) -> Self {
        self.sample_seed = sample_seed;
        self.randomness_seed = randomness_seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Parameter(format!("rho {} outside (0,1]", self.rho)));
        }
        if !(self.delta > 0.0 && self.delta <= self.rho) {
            return Err(Error::Parameter(format!(
                "delta {} outside (0, rho = {}]",
                self.delta, self.rho
            )));
        }
        if self.rep_constant <= 0.0 {
            return Err(Error::Parameter("rep_constant must be positive".into()));
        }
        Ok(())
    }

    /// Number of levels of the size-invariant estimator.
    pub fn levels(&self) -> u32 {
        ((1.0 / self.rho).log2().ceil() as u32).max(1)
    }

    fn schedule(&self) -> Result<Vec<f64>> {
        let k = self.levels() as usize;
        let sched = match &self.t_schedule {
            Some(s) => {
                if s.len() != k {
                    return Err(Error::Parameter(format!(
                        "t_schedule length {} != K = {k}",
                        s.len()
                    )));
                }
                s.clone()
            }
            None => vec![0.125; k],
        };
        // The level analysis wants t_k >= 2^-k, but the flat all-1/8
        // schedule sits below that for k <= 2, so only the upper end is
        // enforced here.
        for t in &sched {
            if !(*t > 0.0 && *t <= 0.5) {
                return Err(Error::Parameter(format!("t_k {t} outside (0, 1/2]")));
            }
        }
        Ok(sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    /// Stage-1 median gate (both estimators).
    MedianGate,
    /// Final mean-versus-threshold comparison of the general estimator.
    MeanThreshold,
    /// Level k of the size-invariant estimator.
    Level(u32),
    /// Fall-through accept of the size-invariant estimator.
    FallThrough,
    /// Gaussian tester operator-norm gate.
    GateA,
    /// Gaussian tester matching gate.
    GateB,
    /// Non-replicable fallback invoked by cap_samples.
    Fallback,
    /// Canonicalized or symmetrized wrapper: accept iff r <= f(X).
    Canonical,
}

#[derive(Debug, Clone, Serialize)]
pub struct TesterVerdict {
    pub decision: Decision,
    pub r_used: f64,
    pub samples_used: u64,
    pub stage: Stage,
    pub statistic_trace: Vec<(Stage, f64)>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("statistics are not NaN"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn draw_r(randomness_seed: u64) -> f64 {
    let mut rng = rng_from_seed(randomness_seed);
    uniform_in(&mut rng, 0.25, 0.75)
}

/// Batch values of a fully evaluated general-estimator run; decision and
/// acceptance probability are pure functions of this.
#[derive(Debug, Clone)]
pub struct GeneralOutcome {
    pub tau0: f64,
    pub tau1: f64,
    pub median: f64,
    pub mean: f64,
}

impl GeneralOutcome {
    fn gap(&self) -> f64 {
        self.tau1 - self.tau0
    }

    /// Ties at the gate cutoffs continue; the final comparison is inclusive.
    pub fn decide(&self, r: f64) -> (Decision, Stage) {
        let dg = self.gap();
        if self.median < self.tau0 + dg / 8.0 {
            return (Decision::Accept, Stage::MedianGate);
        }
        if self.median > self.tau1 - dg / 8.0 {
            return (Decision::Reject, Stage::MedianGate);
        }
        if self.mean <= self.tau0 + r * dg {
            (Decision::Accept, Stage::MeanThreshold)
        } else {
            (Decision::Reject, Stage::MeanThreshold)
        }
    }

    /// Pr over r ~ Unif[1/4, 3/4] of accepting, exactly.
    pub fn acceptance_probability(&self) -> f64 {
        let dg = self.gap();
        if self.median < self.tau0 + dg / 8.0 {
            return 1.0;
        }
        if self.median > self.tau1 - dg / 8.0 {
            return 0.0;
        }
        // Accept iff r >= u where u = (mean - tau0)/Delta.
        let u = (self.mean - self.tau0) / dg;
        ((0.75 - u) / 0.5).clamp(0.0, 1.0)
    }
}

/// General expectation-gap estimator: L batches of m_t samples, a median
/// gate, then the batch mean against the randomized threshold tau0 + r*Delta.
pub fn general_estimate(
    spec: &dyn StatisticSpec,
    config: &EstimatorConfig,
    provider: &mut dyn BatchProvider,
) -> Result<TesterVerdict> {
    let (outcome, _m) = general_collect(spec, config, provider)?;
    let r = draw_r(config.randomness_seed);
    let (decision, stage) = outcome.decide(r);
    Ok(TesterVerdict {
        decision,
        r_used: r,
        samples_used: provider.samples_used(),
        stage,
        statistic_trace: vec![
            (Stage::MedianGate, outcome.median),
            (Stage::MeanThreshold, outcome.mean),
        ],
    })
}

/// Draws every batch of a general-estimator run and returns the outcome.
/// Consumption order matches `general_estimate` exactly, so the outcome's
/// acceptance probability is the exact f(X) of that run's sample sequence.
pub fn general_collect(
    spec: &dyn StatisticSpec,
    config: &EstimatorConfig,
    provider: &mut dyn BatchProvider,
) -> Result<(GeneralOutcome, u64)> {
    config.validate()?;
    validate_spec(spec)?;
    if !(config.t > 0.0 && config.t <= 1.0 / 16.0) {
        return Err(Error::Parameter(format!(
            "general estimator t {} outside (0, 1/16]",
            config.t
        )));
    }
    let m_t = match config.batch_size {
        Some(m) => m.max(spec.m_min()),
        None if config.strict_scan => breakpoint_scan(spec, config.t, 10_000_000)?,
        None => breakpoint(spec, config.t)?,
    };
    let l = match config.max_batches {
        Some(l) => l.max(1),
        None => ((config.rep_constant * config.t * config.t / (config.rho * config.rho)).ceil()
            as u64)
            .max(1),
    };
    let mut stats = Vec::with_capacity(l as usize);
    for _ in 0..l {
        stats.push(provider.next_statistic(m_t)?);
    }
    let outcome = GeneralOutcome {
        tau0: spec.tau0(m_t),
        tau1: spec.tau1(m_t),
        median: median(&stats),
        mean: stats.iter().sum::<f64>() / stats.len() as f64,
    };
    Ok((outcome, m_t))
}

/// Level gate of the size-invariant estimator, inclusive on both sides.
fn level_gate(v_hat: f64, tau0: f64, dg: f64, r: f64, k: u32) -> Option<Decision> {
    let half_width = 0.5f64.powi(k as i32);
    if v_hat <= tau0 + (r - half_width) * dg {
        Some(Decision::Accept)
    } else if v_hat >= tau0 + (r + half_width) * dg {
        Some(Decision::Reject)
    } else {
        None
    }
}

/// Fully evaluated size-invariant run: the stage-1 median plus the
/// median-of-means V-hat for every level.
#[derive(Debug, Clone)]
pub struct SizeInvariantOutcome {
    pub tau0: f64,
    pub tau1: f64,
    pub stage1_median: f64,
    pub v_hats: Vec<f64>,
}

impl SizeInvariantOutcome {
    fn gap(&self) -> f64 {
        self.tau1 - self.tau0
    }

    pub fn decide(&self, r: f64) -> (Decision, Stage) {
        let dg = self.gap();
        if self.stage1_median < self.tau0 + dg / 8.0 {
            return (Decision::Accept, Stage::MedianGate);
        }
        if self.stage1_median > self.tau1 - dg / 8.0 {
            return (Decision::Reject, Stage::MedianGate);
        }
        for (idx, &v) in self.v_hats.iter().enumerate() {
            let k = idx as u32 + 1;
            if let Some(d) = level_gate(v, self.tau0, dg, r, k) {
                return (d, Stage::Level(k));
            }
        }
        (Decision::Accept, Stage::FallThrough)
    }

    /// Pr over r ~ Unif[1/4, 3/4] of accepting. The run's decision is a
    /// piecewise-constant function of r; the still-undecided region after
    /// each level is an interval, so the sweep is exact.
    pub fn acceptance_probability(&self) -> f64 {
        let dg = self.gap();
        if self.stage1_median < self.tau0 + dg / 8.0 {
            return 1.0;
        }
        if self.stage1_median > self.tau1 - dg / 8.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.25f64, 0.75f64);
        let mut accept_len = 0.0f64;
        for (idx, &v) in self.v_hats.iter().enumerate() {
            let k = idx as u32 + 1;
            let half_width = 0.5f64.powi(k as i32);
            let u = (v - self.tau0) / dg;
            // Accept iff r >= u + 2^-k, reject iff r <= u - 2^-k.
            accept_len += (hi - (u + half_width).max(lo)).max(0.0);
            lo = lo.max(u - half_width);
            hi = hi.min(u + half_width);
            if lo >= hi {
                break;
            }
        }
        if hi > lo {
            // Fall-through region accepts.
            accept_len += hi - lo;
        }
        (accept_len / 0.5).clamp(0.0, 1.0)
    }
}

struct Stage1Run {
    values: Vec<f64>,
    early: Option<Decision>,
}

/// Stage-1 draw loop with a verdict-preserving shortcut: once more than
/// half of the L planned values sit beyond a gate cutoff, the median of any
/// completion is beyond it too, so the remaining batches are not drawn.
fn run_stage1(
    provider: &mut dyn BatchProvider,
    m0: u64,
    l0: u64,
    accept_cut: f64,
    reject_cut: f64,
    draw_all: bool,
) -> Result<Stage1Run> {
    let need = (l0 / 2 + 1) as usize;
    let mut values = Vec::with_capacity(l0 as usize);
    let mut below = 0usize;
    let mut above = 0usize;
    for _ in 0..l0 {
        let z = provider.next_statistic(m0)?;
        values.push(z);
        if z < accept_cut {
            below += 1;
        }
        if z > reject_cut {
            above += 1;
        }
        if !draw_all {
            if below >= need {
                return Ok(Stage1Run { values, early: Some(Decision::Accept) });
            }
            if above >= need {
                return Ok(Stage1Run { values, early: Some(Decision::Reject) });
            }
        }
    }
    Ok(Stage1Run { values, early: None })
}

/// Size-invariant expectation-gap estimator. Stage 1 is a median gate on
/// L = ceil(8 ln(1/delta)) batches at the t = 1/8 breakpoint; the level
/// phase shrinks the randomized decision window geometrically and accepts
/// on fall-through.
pub fn size_invariant_estimate(
    spec: &dyn StatisticSpec,
    config: &EstimatorConfig,
    provider: &mut dyn BatchProvider,
) -> Result<TesterVerdict> {
    let plan = SizeInvariantPlan::new(spec, config)?;
    let r = draw_r(config.randomness_seed);
    let mut trace = Vec::new();

    let stage1 = run_stage1(
        provider,
        plan.m0,
        plan.l0,
        plan.tau0 + plan.gap / 8.0,
        plan.tau1 - plan.gap / 8.0,
        false,
    )?;
    let med = median(&stage1.values);
    trace.push((Stage::MedianGate, med));
    let stage1_decision = stage1.early.or_else(|| {
        if med < plan.tau0 + plan.gap / 8.0 {
            Some(Decision::Accept)
        } else if med > plan.tau1 - plan.gap / 8.0 {
            Some(Decision::Reject)
        } else {
            None
        }
    });
    if let Some(decision) = stage1_decision {
        return Ok(TesterVerdict {
            decision,
            r_used: r,
            samples_used: provider.samples_used(),
            stage: Stage::MedianGate,
            statistic_trace: trace,
        });
    }

    for level in &plan.levels {
        let v_hat = level.run(provider)?;
        trace.push((Stage::Level(level.k), v_hat));
        if let Some(decision) = level_gate(v_hat, plan.tau0, plan.gap, r, level.k) {
            return Ok(TesterVerdict {
                decision,
                r_used: r,
                samples_used: provider.samples_used(),
                stage: Stage::Level(level.k),
                statistic_trace: trace,
            });
        }
    }
    Ok(TesterVerdict {
        decision: Decision::Accept,
        r_used: r,
        samples_used: provider.samples_used(),
        stage: Stage::FallThrough,
        statistic_trace: trace,
    })
}

/// Draws every batch a size-invariant run could consume, in the same order
/// as the lazy run, and returns the full outcome. Batches the lazy run
/// skips by terminating early are never reached by it, so positions agree
/// wherever both paths read the stream.
pub fn size_invariant_collect(
    spec: &dyn StatisticSpec,
    config: &EstimatorConfig,
    provider: &mut dyn BatchProvider,
) -> Result<SizeInvariantOutcome> {
    let plan = SizeInvariantPlan::new(spec, config)?;
    let stage1 = run_stage1(
        provider,
        plan.m0,
        plan.l0,
        plan.tau0 + plan.gap / 8.0,
        plan.tau1 - plan.gap / 8.0,
        true,
    )?;
    let stage1_median = median(&stage1.values);
    let gated = stage1_median < plan.tau0 + plan.gap / 8.0
        || stage1_median > plan.tau1 - plan.gap / 8.0;
    let mut v_hats = Vec::new();
    if !gated {
        for level in &plan.levels {
            v_hats.push(level.run(provider)?);
        }
    }
    Ok(SizeInvariantOutcome {
        tau0: plan.tau0,
        tau1: plan.tau1,
        stage1_median,
        v_hats,
    })
}

struct LevelPlan {
    k: u32,
    m_k: u64,
    j_k: u64,
    l_k: u64,
}

impl LevelPlan {
    /// Median over L_k outer repetitions of the mean of J_k batch values.
    fn run(&self, provider: &mut dyn BatchProvider) -> Result<f64> {
        let mut means = Vec::with_capacity(self.l_k as usize);
        for _ in 0..self.l_k {
            let mut acc = 0.0;
            for _ in 0..self.j_k {
                acc += provider.next_statistic(self.m_k)?;
            }
            means.push(acc / self.j_k as f64);
        }
        Ok(median(&means))
    }
}

struct SizeInvariantPlan {
    tau0: f64,
    tau1: f64,
    gap: f64,
    m0: u64,
    l0: u64,
    levels: Vec<LevelPlan>,
}

impl SizeInvariantPlan {
    fn new(spec: &dyn StatisticSpec, config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        validate_spec(spec)?;
        if !spec.size_invariant() {
            return Err(Error::Contract(format!(
                "{} is not size-invariant",
                spec.name()
            )));
        }
        let schedule = config.schedule()?;
        let bp = |t: f64| -> Result<u64> {
            match config.batch_size {
                Some(m) => Ok(m.max(spec.m_min())),
                None if config.strict_scan => breakpoint_scan(spec, t, 10_000_000),
                None => breakpoint(spec, t),
            }
        };
        let m0 = bp(0.125)?;
        let tau0 = spec.tau0(m0);
        let tau1 = spec.tau1(m0);
        let gap = tau1 - tau0;
        if gap <= 0.0 {
            return Err(Error::Contract(format!("{} has no threshold gap", spec.name())));
        }
        let l0 = ((8.0 * (1.0 / config.delta).ln()).ceil() as u64).max(1);
        let levels = schedule
            .iter()
            .enumerate()
            .map(|(idx, &t_k)| {
                let k = idx as u32 + 1;
                Ok(LevelPlan {
                    k,
                    m_k: bp(t_k)?,
                    j_k: ((t_k * t_k * 4.0f64.powi(k as i32)).ceil() as u64).max(1),
                    l_k: 16 * (schedule.len() as u64 - idx as u64),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tau0, tau1, gap, m0, l0, levels })
    }
}

/// Batch layout (batch size, batch count) of a general-estimator run.
pub fn general_batches(
    spec: &dyn StatisticSpec,
    config: &EstimatorConfig,
) -> Result<Vec<(u64, u64)>> {
    config.validate()?;
    let m_t = match config.batch_size {
        Some(m) => m.max(spec.m_min()),
        None if config.strict_scan => breakpoint_scan(spec, config.t, 10_000_000)?,
        None => breakpoint(spec, config.t)?,
    };
    let l = match config.max_batches {
        Some(l) => l.max(1),
        None => ((config.rep_constant * config.t * config.t / (config.rho * config.rho)).ceil()
            as u64)
            .max(1),
    };
    Ok(vec![(m_t, l)])
}

/// Batch layout of a size-invariant run, stage 1 first then each level,
/// assuming no stage terminates early (the worst case).
pub fn size_invariant_batches(
    spec: &dyn StatisticSpec,
    config: &EstimatorConfig,
) -> Result<Vec<(u64, u64)>> {
    let plan = SizeInvariantPlan::new(spec, config)?;
    let mut out = vec![(plan.m0, plan.l0)];
    for level in &plan.levels {
        out.push((level.m_k, level.l_k * level.j_k));
    }
    Ok(out)
}

/// A tester with explicit seed inputs; the unit every harness measurement
/// runs on. Implementations own their data source.
pub trait Tester: Send + Sync {
    fn name(&self) -> String;
    fn run(&self, sample_seed: u64, randomness_seed: u64) -> Result<TesterVerdict>;

    /// Like `run` but refusing to draw more than `budget` samples.
    fn run_budgeted(
        &self,
        _sample_seed: u64,
        _randomness_seed: u64,
        _budget: u64,
    ) -> Result<TesterVerdict> {
        Err(Error::Contract(format!("{} does not support sample budgets", self.name())))
    }

    /// Exact acceptance probability over internal randomness for the sample
    /// sequence this seed generates, when a closed form is available.
    fn exact_acceptance(&self, _sample_seed: u64) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// Budget wrapper: runs the inner tester with a hard sample cap and falls
/// back to a supplied non-replicable tester when the cap is hit. With
/// budget = expected/rho, Markov keeps the truncation (and hence extra
/// disagreement) probability at most rho.
pub struct CapSamples {
    inner: std::sync::Arc<dyn Tester>,
    fallback: std::sync::Arc<dyn Tester>,
    budget: u64,
}

pub fn cap_samples(
    inner: std::sync::Arc<dyn Tester>,
    budget: u64,
    fallback: std::sync::Arc<dyn Tester>,
) -> Result<CapSamples> {
    if budget == 0 {
        return Err(Error::Parameter("cap_samples budget must be >= 1".into()));
    }
    Ok(CapSamples { inner, fallback, budget })
}

impl CapSamples {
    pub fn truncated(&self, sample_seed: u64, randomness_seed: u64) -> Result<bool> {
        match self.inner.run_budgeted(sample_seed, randomness_seed, self.budget) {
            Ok(_) => Ok(false),
            Err(Error::BudgetExhausted { .. }) => Ok(true),
            Err(e) => Err(e),
        }
    }
}

impl Tester for CapSamples {
    fn name(&self) -> String {
        format!("cap({}, {})", self.inner.name(), self.budget)
    }

    fn run(&self, sample_seed: u64, randomness_seed: u64) -> Result<TesterVerdict> {
        match self.inner.run_budgeted(sample_seed, randomness_seed, self.budget) {
            Ok(v) => Ok(v),
            Err(Error::BudgetExhausted { .. }) => {
                let fs = derive_seed(sample_seed, 0, Role::Fallback);
                let fr = derive_seed(randomness_seed, 0, Role::Fallback);
                let mut v = self.fallback.run(fs, fr)?;
                v.samples_used += self.budget;
                v.stage = Stage::Fallback;
                Ok(v)
            }
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct GapSpec {
        q0: f64,
        eps: f64,
    }

    impl StatisticSpec for GapSpec {
        fn name(&self) -> &str {
            "gap-test"
        }
        fn tau0(&self, _m: u64) -> f64 {
            self.q0 - self.eps
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

    /// Replays a fixed list of statistic values as batches.
    struct FixedProvider {
        values: Vec<f64>,
        pos: usize,
    }

    impl FixedProvider {
        fn new(values: Vec<f64>) -> Self {
            Self { values, pos: 0 }
        }
    }

    impl BatchProvider for FixedProvider {
        fn next_statistic(&mut self, _m: u64) -> Result<f64> {
            let v = self.values[self.pos % self.values.len()];
            self.pos += 1;
            Ok(v)
        }
        fn samples_used(&self) -> u64 {
            self.pos as u64
        }
    }

    #[test]
    fn breakpoint_matches_closed_form_for_heads_fraction() {
        // f(m) = sqrt(q0/m)/eps <= t/2 first holds at m = ceil(4 q0/(t^2 eps^2)).
        let spec = GapSpec { q0: 0.7, eps: 0.2 };
        assert_eq!(breakpoint(&spec, 0.125).unwrap(), 4480);
        for &t in &[0.5f64, 0.25, 0.125, 0.0625] {
            let closed = (4.0 * 0.7 / (t * t * 0.04)).ceil() as u64;
            assert_eq!(breakpoint(&spec, t).unwrap(), closed);
            assert_eq!(breakpoint_scan(&spec, t, 10_000_000).unwrap(), closed);
        }
    }

    #[test]
    fn breakpoint_is_monotone_in_t() {
        let spec = GapSpec { q0: 0.6, eps: 0.15 };
        let mut last = 0;
        for &t in &[0.5, 0.25, 0.125, 0.0625, 0.03125] {
            let m = breakpoint(&spec, t).unwrap();
            assert!(m >= last);
            last = m;
        }
    }

    #[test]
    fn chebyshev_bound_value() {
        let spec = GapSpec { q0: 0.7, eps: 0.2 };
        // f(4480) = 1/16, alpha = 1/2 -> (1/16)^2 / (1/4) = 1/64.
        let b = chebyshev_bound(&spec, 4480, 0.5).unwrap();
        assert!((b - 1.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let mut cfg = EstimatorConfig::new(0.2, 0.5);
        let spec = GapSpec { q0: 0.7, eps: 0.2 };
        let mut p = FixedProvider::new(vec![0.5]);
        // delta > rho is inadmissible.
        assert!(general_collect(&spec, &cfg, &mut p).is_err());
        cfg = EstimatorConfig::new(0.2, 0.05);
        cfg.t = 0.2;
        assert!(general_collect(&spec, &cfg, &mut p).is_err());
    }

    #[test]
    fn general_outcome_gates_and_threshold() {
        let o = GeneralOutcome { tau0: 0.5, tau1: 0.7, median: 0.51, mean: 0.6 };
        assert_eq!(o.decide(0.5), (Decision::Accept, Stage::MedianGate));
        assert_eq!(o.acceptance_probability(), 1.0);
        let o = GeneralOutcome { tau0: 0.5, tau1: 0.7, median: 0.69, mean: 0.6 };
        assert_eq!(o.decide(0.5), (Decision::Reject, Stage::MedianGate));
        assert_eq!(o.acceptance_probability(), 0.0);
        let o = GeneralOutcome { tau0: 0.5, tau1: 0.7, median: 0.6, mean: 0.6 };
        // u = 0.5; the final comparison is inclusive at r = u.
        assert_eq!(o.decide(0.5), (Decision::Accept, Stage::MeanThreshold));
        assert_eq!(o.decide(0.49), (Decision::Reject, Stage::MeanThreshold));
        assert!((o.acceptance_probability() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn size_invariant_sweep_matches_grid_integration() {
        let o = SizeInvariantOutcome {
            tau0: 0.5,
            tau1: 0.7,
            stage1_median: 0.6,
            v_hats: vec![0.61, 0.595, 0.602],
        };
        let exact = o.acceptance_probability();
        let grid = 2_000_001u64;
        let mut accepts = 0u64;
        for i in 0..grid {
            let r = 0.25 + 0.5 * (i as f64 + 0.5) / grid as f64;
            if o.decide(r).0 == Decision::Accept {
                accepts += 1;
            }
        }
        let numeric = accepts as f64 / grid as f64;
        assert!((exact - numeric).abs() < 1e-5, "exact {exact} vs numeric {numeric}");
    }

    #[test]
    fn estimate_and_collect_agree_on_shared_values() {
        let spec = GapSpec { q0: 0.7, eps: 0.2 };
        let cfg = EstimatorConfig::new(0.3, 0.1);
        let values: Vec<f64> = (0..500).map(|i| 0.5 + 0.2 * ((i * 7919 % 100) as f64 / 100.0)).collect();
        let verdict =
            size_invariant_estimate(&spec, &cfg, &mut FixedProvider::new(values.clone())).unwrap();
        let outcome =
            size_invariant_collect(&spec, &cfg, &mut FixedProvider::new(values)).unwrap();
        let (decision, stage) = outcome.decide(verdict.r_used);
        assert_eq!(decision, verdict.decision);
        assert_eq!(stage, verdict.stage);
    }

    #[test]
    fn stage1_early_stop_preserves_the_verdict() {
        let spec = GapSpec { q0: 0.7, eps: 0.2 };
        let cfg = EstimatorConfig::new(0.3, 0.1);
        // Every batch sits far below the accept cutoff.
        let verdict =
            size_invariant_estimate(&spec, &cfg, &mut FixedProvider::new(vec![0.5])).unwrap();
        assert_eq!(verdict.decision, Decision::Accept);
        assert_eq!(verdict.stage, Stage::MedianGate);
        let outcome = size_invariant_collect(&spec, &cfg, &mut FixedProvider::new(vec![0.5])).unwrap();
        assert_eq!(outcome.acceptance_probability(), 1.0);
    }

    #[test]
    fn cap_samples_requires_positive_budget() {
        struct Never;
        impl Tester for Never {
            fn name(&self) -> String {
                "never".into()
            }
            fn run(&self, _s: u64, _r: u64) -> Result<TesterVerdict> {
                unreachable!()
            }
        }
        assert!(cap_samples(std::sync::Arc::new(Never), 0, std::sync::Arc::new(Never)).is_err());
    }

    proptest! {
        #[test]
        fn acceptance_probability_is_a_probability(
            median in 0.5f64..0.7,
            v in proptest::collection::vec(0.45f64..0.75, 0..5),
        ) {
            let o = SizeInvariantOutcome { tau0: 0.5, tau1: 0.7, stage1_median: median, v_hats: v };
            let p = o.acceptance_probability();
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn decide_is_monotone_in_r(
            v in proptest::collection::vec(0.45f64..0.75, 1..5),
        ) {
            // Larger thresholds only make accepting easier.
            let o = SizeInvariantOutcome { tau0: 0.5, tau1: 0.7, stage1_median: 0.6, v_hats: v };
            let mut last_accept = false;
            for i in 0..200 {
                let r = 0.25 + 0.5 * i as f64 / 199.0;
                let accept = o.decide(r).0 == Decision::Accept;
                if last_accept {
                    prop_assert!(accept);
                }
                last_accept = accept;
            }
        }
    }
}
