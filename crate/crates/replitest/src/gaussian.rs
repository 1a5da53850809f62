//! Three-stage replicable Gaussian mean tester.
//!
//! Step A screens the empirical second moment's operator norm, Step B
//! screens the size of a large-inner-product matching between two fresh
//! batches, and Step C runs the expectation-gap machinery on the statistic
//! <sum X_i, sum Y_j>. Each gate is a randomized threshold rule, so the
//! whole pipeline stays replicable under shared internal randomness.

use std::sync::Arc;

use crate::distributions::{Sampler, SampleStream};
use crate::error::{Error, Result};
use rand::Rng as _;

use crate::expectation_gap::{
    general_collect, general_estimate, BatchProvider, Decision, EstimatorConfig, Stage,
    StatisticSpec, Tester, TesterVerdict,
};
use crate::matching::{max_matching, MatchingGraph};
use crate::rng::{derive_seed, rng_from_seed, Role};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Radial projection onto the ball of the given radius; points already
/// inside are returned unchanged.
pub fn project_to_ball(x: &[f64], radius: f64) -> Vec<f64> {
    assert!(radius > 0.0, "projection radius must be positive");
    let scale = (norm(x) / radius).max(1.0);
    x.iter().map(|v| v / scale).collect()
}

/// Randomized threshold gate: a = (3T - h)/T, accept iff r <= a.
/// h <= 2T forces accept, h >= 3T forces reject for any r in (0, 1].
pub fn threshold_accept(h_value: f64, t: f64, r: f64) -> Result<Decision> {
    if t <= 0.0 {
        return Err(Error::Parameter(format!("threshold T must be positive, got {t}")));
    }
    let a = (3.0 * t - h_value) / t;
    Ok(if r <= a { Decision::Accept } else { Decision::Reject })
}

/// Acceptance probability of the gate over r ~ Unif[0,1].
pub fn threshold_accept_probability(h_value: f64, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Parameter(format!("threshold T must be positive, got {t}")));
    }
    Ok(((3.0 * t - h_value) / t).clamp(0.0, 1.0))
}

// The norm feeds a threshold gate with order-1 slack, so 1e-5 relative
// accuracy is ample; the generous iteration cap covers near-degenerate
// leading eigenpairs, where successive estimates close in slowly.
const OPNORM_TOL: f64 = 1e-5;
const OPNORM_RESTARTS: usize = 3;

/// Largest eigenvalue of (1/m) sum x_i x_i^T by matrix-free power
/// iteration; deterministic because restart vectors come from a fixed seed.
pub fn operator_norm(points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Precondition("operator_norm needs at least one point".into()));
    }
    let d = points[0].len();
    let m = points.len() as f64;
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for x in points {
            let c = dot(x, v) / m;
            for (o, xi) in out.iter_mut().zip(x) {
                *o += c * xi;
            }
        }
        out
    };
    let mut rng = rng_from_seed(0x6f706e6f726d);
    let mut best = 0.0f64;
    let mut any_converged = false;
    let max_iters = 100 * d;
    for _ in 0..OPNORM_RESTARTS {
        let mut v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut lambda = 0.0f64;
        for _ in 0..max_iters {
            let av = apply(&v);
            let next_lambda = norm(&av);
            if next_lambda <= f64::MIN_POSITIVE {
                // The operator annihilates v; its eigenvalue along this
                // direction is 0, which converges trivially.
                lambda = 0.0;
                any_converged = true;
                break;
            }
            let converged = (next_lambda - lambda).abs() <= OPNORM_TOL * next_lambda;
            lambda = next_lambda;
            v = av.iter().map(|x| x / next_lambda).collect();
            if converged {
                any_converged = true;
                break;
            }
        }
        best = best.max(lambda);
    }
    if any_converged {
        Ok(best)
    } else {
        Err(Error::NonConvergence { best })
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GaussianTesterConfig {
    pub d: usize,
    /// Reject when the mean norm is at least alpha.
    pub alpha: f64,
    pub rho: f64,
    /// Per-stage sample count; the full run consumes up to 5m points.
    pub m: u64,
    /// Scale factor of the polylog parameter K.
    pub c_k: f64,
}

impl GaussianTesterConfig {
    pub fn new(d: usize, alpha: f64, rho: f64, m: u64) -> Self {
        Self { d, alpha, rho, m, c_k: 4.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 {
            return Err(Error::Parameter("gaussian tester needs d >= 1 and m >= 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Parameter("alpha must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Parameter(format!("rho {} outside (0,1]", self.rho)));
        }
        if self.k() <= 0.0 {
            return Err(Error::Parameter("derived K must be positive".into()));
        }
        Ok(())
    }

    /// K = c_K * ln^2(m d / (alpha rho)).
    pub fn k(&self) -> f64 {
        let arg = (self.m as f64 * self.d as f64 / (self.alpha * self.rho)).max(std::f64::consts::E);
        self.c_k * arg.ln().powi(2)
    }

    pub fn l(&self) -> f64 {
        self.k()
    }

    pub fn s(&self) -> f64 {
        self.k() * (self.d as f64).sqrt()
    }

    pub fn t1(&self) -> f64 {
        let k = self.k();
        (1.0 + self.d as f64 / (self.m as f64 * self.rho * self.rho)) * k * k * k
    }

    pub fn t2(&self) -> f64 {
        self.k() / (self.rho * self.rho)
    }

    pub fn projection_radius(&self) -> f64 {
        self.l() * (self.d as f64).sqrt()
    }
}

/// Operator-norm gate on one batch of projected points.
pub fn step_a_gate(points: &[Vec<f64>], config: &GaussianTesterConfig, r: f64) -> Result<Decision> {
    threshold_accept(operator_norm(points)?, config.t1(), r)
}

/// Matching gate on two fresh batches of projected points.
pub fn step_b_gate(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    config: &GaussianTesterConfig,
    r: f64,
) -> Result<Decision> {
    let mut graph = MatchingGraph::from_points(xs, ys, config.s());
    threshold_accept(max_matching(&mut graph) as f64, config.t2(), r)
}

/// Z = <sum X_i, sum Y_j>; expectation m^2 ||mu||^2 under mean-mu sampling.
pub fn step_c_statistic(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("batch sizes {} vs {}", xs.len(), ys.len())));
    }
    if xs.is_empty() {
        return Err(Error::Precondition("step C statistic needs nonempty batches".into()));
    }
    let d = xs[0].len();
    if ys[0].len() != d {
        return Err(Error::Dimension(format!("point dimensions {d} vs {}", ys[0].len())));
    }
    let mut sx = vec![0.0; d];
    let mut sy = vec![0.0; d];
    for x in xs {
        for (s, v) in sx.iter_mut().zip(x) {
            *s += v;
        }
    }
    for y in ys {
        for (s, v) in sy.iter_mut().zip(y) {
            *s += v;
        }
    }
    Ok(dot(&sx, &sy))
}

/// Expectation-gap spec for Step C. sigma sums the four case bounds of the
/// variance analysis into one expression with constant c = 8.
pub struct StepCSpec {
    alpha: f64,
    d: f64,
    s: f64,
    l: f64,
    t1: f64,
    t2: f64,
}

impl StepCSpec {
    pub fn new(config: &GaussianTesterConfig) -> Self {
        Self {
            alpha: config.alpha,
            d: config.d as f64,
            s: config.s(),
            l: config.l(),
            t1: config.t1(),
            t2: config.t2(),
        }
    }
}

impl StatisticSpec for StepCSpec {
    fn name(&self) -> &str {
        "gaussian-step-c"
    }
    fn tau0(&self, _m: u64) -> f64 {
        0.0
    }
    fn tau1(&self, m: u64) -> f64 {
        let m = m as f64;
        m * m * self.alpha * self.alpha / 4.0
    }
    fn sigma(&self, m: u64) -> f64 {
        let m = m as f64;
        8.0 * (m.powf(1.5) * self.alpha * self.t1.sqrt()
            + m * self.s
            + self.l * (m * self.d * self.t1 * self.t2).sqrt())
    }
    fn m_min(&self) -> u64 {
        1
    }
    fn size_invariant(&self) -> bool {
        false
    }
}

struct StepCBatches<'a> {
    stream: &'a mut SampleStream<Vec<f64>>,
    radius: f64,
}

impl StepCBatches<'_> {
    fn draw_batch(&mut self, m: u64) -> Result<Vec<Vec<f64>>> {
        (0..m)
            .map(|_| Ok(project_to_ball(&self.stream.draw()?, self.radius)))
            .collect()
    }
}

impl crate::expectation_gap::BatchProvider for StepCBatches<'_> {
    fn next_statistic(&mut self, m: u64) -> Result<f64> {
        let xs = self.draw_batch(m)?;
        let ys = self.draw_batch(m)?;
        step_c_statistic(&xs, &ys)
    }

    fn samples_used(&self) -> u64 {
        self.stream.count_drawn()
    }
}

fn step_c_config(config: &GaussianTesterConfig, randomness_seed: u64) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::new(config.rho, config.rho);
    cfg.randomness_seed = randomness_seed;
    // The run's sample contract is 5m points total; Step C gets one batch
    // pair of the configured size rather than the asymptotic breakpoint.
    cfg.batch_size = Some(config.m);
    cfg.max_batches = Some(1);
    cfg
}

fn gate_r(randomness_seed: u64, index: u64) -> f64 {
    let mut rng = rng_from_seed(derive_seed(randomness_seed, index, Role::Stage));
    rand::Rng::random::<f64>(&mut rng)
}

/// Full three-stage tester. Draws m points for Step A, 2m for Step B and
/// 2m for Step C from the one stream, projecting everything to the ball of
/// radius L sqrt(d). Rejects as soon as any gate rejects.
pub fn gaussian_mean_test(
    stream: &mut SampleStream<Vec<f64>>,
    config: &GaussianTesterConfig,
    randomness_seed: u64,
) -> Result<TesterVerdict> {
    config.validate()?;
    let radius = config.projection_radius();
    let mut trace = Vec::new();

    let batch = |stream: &mut SampleStream<Vec<f64>>, m: u64| -> Result<Vec<Vec<f64>>> {
        (0..m).map(|_| Ok(project_to_ball(&stream.draw()?, radius))).collect()
    };

    let points_a = batch(stream, config.m)?;
    let h_a = operator_norm(&points_a)?;
    trace.push((Stage::GateA, h_a));
    let r_a = gate_r(randomness_seed, 0);
    if threshold_accept(h_a, config.t1(), r_a)? == Decision::Reject {
        return Ok(TesterVerdict {
            decision: Decision::Reject,
            r_used: r_a,
            samples_used: stream.count_drawn(),
            stage: Stage::GateA,
            statistic_trace: trace,
        });
    }

    let xs = batch(stream, config.m)?;
    let ys = batch(stream, config.m)?;
    let mut graph = MatchingGraph::from_points(&xs, &ys, config.s());
    let h_b = max_matching(&mut graph) as f64;
    trace.push((Stage::GateB, h_b));
    let r_b = gate_r(randomness_seed, 1);
    if threshold_accept(h_b, config.t2(), r_b)? == Decision::Reject {
        return Ok(TesterVerdict {
            decision: Decision::Reject,
            r_used: r_b,
            samples_used: stream.count_drawn(),
            stage: Stage::GateB,
            statistic_trace: trace,
        });
    }

    let spec = StepCSpec::new(config);
    let cfg = step_c_config(config, derive_seed(randomness_seed, 2, Role::Stage));
    let mut provider = StepCBatches { stream, radius };
    let mut verdict = general_estimate(&spec, &cfg, &mut provider)?;
    trace.append(&mut verdict.statistic_trace);
    verdict.statistic_trace = trace;
    verdict.samples_used = provider.samples_used();
    Ok(verdict)
}

/// Harness tester owning a Gaussian (or adversarial) point source.
pub struct GaussianTester {
    pub config: GaussianTesterConfig,
    pub source: Arc<dyn Sampler<Vec<f64>>>,
    label: String,
}

impl GaussianTester {
    pub fn new(config: GaussianTesterConfig, source: Arc<dyn Sampler<Vec<f64>>>, label: &str) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, source, label: label.to_string() })
    }
}

impl Tester for GaussianTester {
    fn name(&self) -> String {
        format!("gaussian(d={}, alpha={}, {})", self.config.d, self.config.alpha, self.label)
    }

    fn run(&self, sample_seed: u64, randomness_seed: u64) -> Result<TesterVerdict> {
        let mut stream = SampleStream::new(self.source.clone(), sample_seed);
        gaussian_mean_test(&mut stream, &self.config, randomness_seed)
    }

    fn run_budgeted(&self, sample_seed: u64, randomness_seed: u64, budget: u64) -> Result<TesterVerdict> {
        let mut stream = SampleStream::with_budget(self.source.clone(), sample_seed, budget);
        gaussian_mean_test(&mut stream, &self.config, randomness_seed)
    }

    /// The three gates draw independent thresholds, so f(X) is the product
    /// of the gate acceptance probabilities for this sample sequence.
    fn exact_acceptance(&self, sample_seed: u64) -> Result<Option<f64>> {
        let config = &self.config;
        let radius = config.projection_radius();
        let mut stream = SampleStream::new(self.source.clone(), sample_seed);
        let batch = |stream: &mut SampleStream<Vec<f64>>, m: u64| -> Result<Vec<Vec<f64>>> {
            (0..m).map(|_| Ok(project_to_ball(&stream.draw()?, radius))).collect()
        };
        let points_a = batch(&mut stream, config.m)?;
        let p_a = threshold_accept_probability(operator_norm(&points_a)?, config.t1())?;
        if p_a == 0.0 {
            return Ok(Some(0.0));
        }
        let xs = batch(&mut stream, config.m)?;
        let ys = batch(&mut stream, config.m)?;
        let mut graph = MatchingGraph::from_points(&xs, &ys, config.s());
        let p_b = threshold_accept_probability(max_matching(&mut graph) as f64, config.t2())?;
        if p_b == 0.0 {
            return Ok(Some(0.0));
        }
        let spec = StepCSpec::new(config);
        let cfg = step_c_config(config, 0);
        let mut provider = StepCBatches { stream: &mut stream, radius };
        let (outcome, _) = general_collect(&spec, &cfg, &mut provider)?;
        Ok(Some(p_a * p_b * outcome.acceptance_probability()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::GaussianSource;

    #[test]
    fn projection_only_shrinks_outside_points() {
        let inside = vec![0.3, 0.4];
        assert_eq!(project_to_ball(&inside, 1.0), inside);
        let outside = project_to_ball(&[3.0, 4.0], 1.0);
        assert!((norm(&outside) - 1.0).abs() < 1e-12);
        assert!((outside[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn threshold_gate_forced_regions() {
        // h <= 2T accepts for every r in (0,1]; h >= 3T rejects.
        assert_eq!(threshold_accept(2.0, 1.0, 1.0).unwrap(), Decision::Accept);
        assert_eq!(threshold_accept(3.0, 1.0, 1e-12).unwrap(), Decision::Reject);
        assert!((threshold_accept_probability(2.5, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(threshold_accept(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn operator_norm_of_known_point_sets() {
        // M = (1/2) diag(4, 1) has top eigenvalue 2.
        let pts = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
        assert!((operator_norm(&pts).unwrap() - 2.0).abs() < 1e-4);
        // Rank-one: M = [[1,1],[1,1]], eigenvalue 2.
        let pts = vec![vec![1.0, 1.0]];
        assert!((operator_norm(&pts).unwrap() - 2.0).abs() < 1e-4);
        assert!(operator_norm(&[]).is_err());
    }

    #[test]
    fn step_c_statistic_hand_value() {
        let xs = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let ys = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        // <(4,6), (1,1)> = 10.
        assert_eq!(step_c_statistic(&xs, &ys).unwrap(), 10.0);
        assert!(step_c_statistic(&xs, &ys[..1].to_vec()).is_err());
    }

    #[test]
    fn config_derived_quantities_are_positive_and_ordered() {
        let c = GaussianTesterConfig::new(16, 1.0, 0.2, 400);
        c.validate().unwrap();
        assert!(c.k() > 1.0);
        assert!(c.t1() > c.t2());
        assert!(c.s() > 0.0);
        assert_eq!(c.l(), c.k());
    }

    #[test]
    fn null_and_far_means_get_opposite_verdicts() {
        let c = GaussianTesterConfig::new(16, 1.0, 0.2, 400);
        let null = GaussianTester::new(
            c,
            std::sync::Arc::new(GaussianSource::new(vec![0.0; 16]).unwrap()),
            "null",
        )
        .unwrap();
        let mut far_mean = vec![0.0; 16];
        far_mean[0] = 1.0;
        let far = GaussianTester::new(
            c,
            std::sync::Arc::new(GaussianSource::new(far_mean).unwrap()),
            "far",
        )
        .unwrap();
        for seed in 0..3u64 {
            assert_eq!(null.run(seed, 7).unwrap().decision, Decision::Accept);
            assert_eq!(far.run(seed, 7).unwrap().decision, Decision::Reject);
        }
    }

    #[test]
    fn exact_acceptance_is_extreme_off_the_gap() {
        let c = GaussianTesterConfig::new(8, 1.0, 0.25, 200);
        let null = GaussianTester::new(
            c,
            std::sync::Arc::new(GaussianSource::new(vec![0.0; 8]).unwrap()),
            "null",
        )
        .unwrap();
        let f = null.exact_acceptance(11).unwrap().unwrap();
        assert_eq!(f, 1.0);
    }
}
