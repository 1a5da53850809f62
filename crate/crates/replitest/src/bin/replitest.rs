//! Command-line harness for the replicable testers.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use replitest::distributions::{
    coin_chain, closeness_chain, uniformity_chain, ChainFamily, DiscreteDistribution,
    GaussianSource, SampleStream,
};
use replitest::error::{Error, Result};
use replitest::expectation_gap::{breakpoint, Decision, Tester};
use replitest::gaussian::{GaussianTester, GaussianTesterConfig, StepCSpec};
use replitest::harness::{
    chain_report, estimate_accuracy, estimate_replicability, proportion_stderr,
    sample_complexity_sweep, sweep_csv, to_json_pretty,
};
use replitest::rng::{derive_seed, Role};
use replitest::selection::{replicable_select, HypothesisSet, SelectConfig};
use replitest::testers::{
    uniformity_spec, ClosenessProblem, ClosenessTester, CoinProblem, CoinTester,
    UniformityProblem, UniformityTester,
};

#[derive(Parser)]
#[command(name = "replitest", version, about = "Replicable hypothesis testers for distributions")]
struct Cli {
    /// Master seed; every trial seed derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 200)]
    trials: u64,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for trial execution.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Exit with code 2 when the run's stated expectation fails.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accuracy of the replicable coin tester on a fixed bias.
    Coin(CoinCmd),
    /// Accuracy of the replicable uniformity tester.
    Uniformity(UniformityCmd),
    /// Accuracy of the replicable closeness tester.
    Closeness(ClosenessCmd),
    /// Accuracy of the replicable Gaussian mean tester.
    Gaussian(GaussianCmd),
    /// Replicable hypothesis selection over a JSON hypothesis list.
    Select(SelectCmd),
    /// Paired-run disagreement rate of a tester described by a JSON config.
    Replicability(ReplicabilityCmd),
    /// Sample-cost sweep of the coin tester over a rho grid (CSV).
    Sweep(SweepCmd),
    /// KL and Pinsker-bound report for a chaining hard-instance family.
    ChainReport(ChainReportCmd),
    /// Empirical variance check of the statistic models.
    Calibrate(CalibrateCmd),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExpectArg {
    Accept,
    Reject,
}

impl From<ExpectArg> for Decision {
    fn from(e: ExpectArg) -> Decision {
        match e {
            ExpectArg::Accept => Decision::Accept,
            ExpectArg::Reject => Decision::Reject,
        }
    }
}

#[derive(Args)]
struct CoinCmd {
    /// JSON file with {p0, q0, bias, rho, delta}; overrides the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    p0: f64,
    #[arg(long, default_value_t = 0.7)]
    q0: f64,
    /// True heads probability of the coin under test.
    #[arg(long, default_value_t = 0.5)]
    bias: f64,
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, value_enum, default_value = "accept")]
    expect: ExpectArg,
    /// Minimum acceptable rate of the expected verdict in --check mode.
    #[arg(long, default_value_t = 0.9)]
    min_rate: f64,
}

#[derive(Deserialize)]
struct CoinParams {
    p0: f64,
    q0: f64,
    bias: f64,
    rho: f64,
    delta: f64,
}

#[derive(Args)]
struct UniformityCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 0.25)]
    rho: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// JSON file with the pmf under test; defaults to uniform.
    #[arg(long)]
    pmf: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "accept")]
    expect: ExpectArg,
    #[arg(long, default_value_t = 0.9)]
    min_rate: f64,
}

#[derive(Deserialize)]
struct UniformityParams {
    n: usize,
    eps: f64,
    rho: f64,
    delta: f64,
    #[serde(default)]
    pmf: Option<Vec<f64>>,
}

#[derive(Args)]
struct ClosenessCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 0.6)]
    eps: f64,
    #[arg(long, default_value_t = 0.25)]
    rho: f64,
    /// Failure probability exponent: delta = rho^c.
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    #[arg(long)]
    pmf_p: Option<PathBuf>,
    #[arg(long)]
    pmf_q: Option<PathBuf>,
    /// Test a disjoint-half pair instead of p = q.
    #[arg(long)]
    disjoint: bool,
    #[arg(long, value_enum, default_value = "accept")]
    expect: ExpectArg,
    #[arg(long, default_value_t = 0.9)]
    min_rate: f64,
}

#[derive(Args)]
struct GaussianCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    /// Per-stage sample count.
    #[arg(long, default_value_t = 400)]
    m: u64,
    /// Mean is mean_norm * e_1.
    #[arg(long, default_value_t = 0.0)]
    mean_norm: f64,
    #[arg(long, value_enum, default_value = "accept")]
    expect: ExpectArg,
    #[arg(long, default_value_t = 0.9)]
    min_rate: f64,
}

#[derive(Args)]
struct SelectCmd {
    /// JSON file: array of pmfs (arrays of weights) over one domain.
    #[arg(long)]
    hypotheses: PathBuf,
    /// Index of the hypothesis P is planted at.
    #[arg(long, default_value_t = 0)]
    planted: usize,
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    /// Per-flip sample constant.
    #[arg(long, default_value_t = 16.0)]
    cm: f64,
    #[arg(long, default_value_t = 0.9)]
    min_rate: f64,
}

/// Tester description shared by `replicability` configs.
#[derive(Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
enum TesterSpec {
    Coin {
        p0: f64,
        q0: f64,
        bias: f64,
        rho: f64,
        delta: f64,
    },
    Uniformity {
        n: usize,
        eps: f64,
        rho: f64,
        delta: f64,
        #[serde(default)]
        pmf: Option<Vec<f64>>,
    },
    Closeness {
        n: usize,
        eps: f64,
        rho: f64,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default)]
        pmf_p: Option<Vec<f64>>,
        #[serde(default)]
        pmf_q: Option<Vec<f64>>,
    },
    Gaussian {
        d: usize,
        alpha: f64,
        rho: f64,
        m: u64,
        #[serde(default)]
        mean: Option<Vec<f64>>,
    },
}

fn default_c() -> f64 {
    2.0
}

#[derive(Args)]
struct ReplicabilityCmd {
    /// JSON tester description with a "family" tag.
    #[arg(long)]
    config: PathBuf,
    /// Disagreement ceiling for --check; defaults to the tester's rho plus
    /// three standard errors.
    #[arg(long)]
    max_rate: Option<f64>,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long, default_value_t = 0.5)]
    p0: f64,
    #[arg(long, default_value_t = 0.7)]
    q0: f64,
    #[arg(long, default_value_t = 0.6)]
    bias: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.4, 0.2, 0.1])]
    rhos: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ChainFamilyArg {
    Coin,
    Uniformity,
    Closeness,
}

#[derive(Args)]
struct ChainReportCmd {
    #[arg(long, value_enum)]
    family: ChainFamilyArg,
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    #[arg(long, default_value_t = 83)]
    t: usize,
    /// Domain size for uniformity and closeness chains.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Sample budget the Pinsker bound is evaluated at.
    #[arg(long)]
    m: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CalibrateFamily {
    Uniformity,
    Gaussian,
}

#[derive(Args)]
struct CalibrateCmd {
    #[arg(long, value_enum)]
    family: CalibrateFamily,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 0.25)]
    rho: f64,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 400)]
    m: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn load_pmf(path: &PathBuf) -> Result<DiscreteDistribution> {
    let w: Vec<f64> = read_json(path)?;
    DiscreteDistribution::new(&w)
}

fn build_tester(spec: TesterSpec) -> Result<(Arc<dyn Tester>, f64)> {
    match spec {
        TesterSpec::Coin { p0, q0, bias, rho, delta } => {
            let t = CoinTester::new(CoinProblem { p0, q0, rho, delta }, bias)?;
            Ok((Arc::new(t), rho))
        }
        TesterSpec::Uniformity { n, eps, rho, delta, pmf } => {
            let dist = match pmf {
                Some(w) => DiscreteDistribution::new(&w)?,
                None => DiscreteDistribution::uniform(n),
            };
            let t = UniformityTester::new(UniformityProblem::new(n, eps, rho, delta), dist)?;
            Ok((Arc::new(t), rho))
        }
        TesterSpec::Closeness { n, eps, rho, c, pmf_p, pmf_q } => {
            let p = match pmf_p {
                Some(w) => DiscreteDistribution::new(&w)?,
                None => DiscreteDistribution::uniform(n),
            };
            let q = match pmf_q {
                Some(w) => DiscreteDistribution::new(&w)?,
                None => p.clone(),
            };
            let mut problem = ClosenessProblem::new(n, eps, rho);
            problem.c = c;
            let t = ClosenessTester::new(problem, p, q)?;
            Ok((Arc::new(t), rho))
        }
        TesterSpec::Gaussian { d, alpha, rho, m, mean } => {
            let mu = mean.unwrap_or_else(|| vec![0.0; d]);
            if mu.len() != d {
                return Err(Error::Dimension(format!("mean length {} vs d {d}", mu.len())));
            }
            let source = Arc::new(GaussianSource::new(mu)?);
            let t = GaussianTester::new(GaussianTesterConfig::new(d, alpha, rho, m), source, "cli")?;
            Ok((Arc::new(t), rho))
        }
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

/// Runs an accuracy measurement and applies the --check gate.
fn run_accuracy(
    cli: &Cli,
    tester: &dyn Tester,
    expect: ExpectArg,
    min_rate: f64,
) -> Result<bool> {
    let report = estimate_accuracy(tester, expect.into(), cli.trials, cli.seed)?;
    let ok = report.accuracy >= min_rate;
    emit(&cli.out, &format!("{}\n", to_json_pretty(&report)?))?;
    Ok(ok)
}

fn cmd_coin(cli: &Cli, cmd: &CoinCmd) -> Result<bool> {
    let (problem, bias) = match &cmd.config {
        Some(path) => {
            let p: CoinParams = read_json(path)?;
            (CoinProblem { p0: p.p0, q0: p.q0, rho: p.rho, delta: p.delta }, p.bias)
        }
        None => (
            CoinProblem { p0: cmd.p0, q0: cmd.q0, rho: cmd.rho, delta: cmd.delta },
            cmd.bias,
        ),
    };
    let tester = CoinTester::new(problem, bias)?;
    run_accuracy(cli, &tester, cmd.expect, cmd.min_rate)
}

fn cmd_uniformity(cli: &Cli, cmd: &UniformityCmd) -> Result<bool> {
    let (problem, dist) = match &cmd.config {
        Some(path) => {
            let p: UniformityParams = read_json(path)?;
            let dist = match p.pmf {
                Some(w) => DiscreteDistribution::new(&w)?,
                None => DiscreteDistribution::uniform(p.n),
            };
            (UniformityProblem::new(p.n, p.eps, p.rho, p.delta), dist)
        }
        None => {
            let dist = match &cmd.pmf {
                Some(path) => load_pmf(path)?,
                None => DiscreteDistribution::uniform(cmd.n),
            };
            (UniformityProblem::new(cmd.n, cmd.eps, cmd.rho, cmd.delta), dist)
        }
    };
    let tester = UniformityTester::new(problem, dist)?;
    run_accuracy(cli, &tester, cmd.expect, cmd.min_rate)
}

fn cmd_closeness(cli: &Cli, cmd: &ClosenessCmd) -> Result<bool> {
    let p = match &cmd.pmf_p {
        Some(path) => load_pmf(path)?,
        None if cmd.disjoint => {
            // First half of the domain, uniform.
            let mut w = vec![0.0; cmd.n];
            w[..cmd.n / 2].fill(1.0);
            DiscreteDistribution::new(&w)?
        }
        None => DiscreteDistribution::uniform(cmd.n),
    };
    let q = match &cmd.pmf_q {
        Some(path) => load_pmf(path)?,
        None if cmd.disjoint => {
            let mut w = vec![0.0; cmd.n];
            w[cmd.n / 2..].fill(1.0);
            DiscreteDistribution::new(&w)?
        }
        None => p.clone(),
    };
    let mut problem = ClosenessProblem::new(cmd.n, cmd.eps, cmd.rho);
    problem.c = cmd.c;
    let tester = ClosenessTester::new(problem, p, q)?;
    run_accuracy(cli, &tester, cmd.expect, cmd.min_rate)
}

fn cmd_gaussian(cli: &Cli, cmd: &GaussianCmd) -> Result<bool> {
    let (config, mean_norm) = match &cmd.config {
        Some(path) => {
            let c: GaussianTesterConfig = read_json(path)?;
            (c, cmd.mean_norm)
        }
        None => (GaussianTesterConfig::new(cmd.d, cmd.alpha, cmd.rho, cmd.m), cmd.mean_norm),
    };
    let mut mu = vec![0.0; config.d];
    mu[0] = mean_norm;
    let tester = GaussianTester::new(config, Arc::new(GaussianSource::new(mu)?), "cli")?;
    run_accuracy(cli, &tester, cmd.expect, cmd.min_rate)
}

#[derive(Serialize)]
struct SelectReport {
    hypotheses: usize,
    planted: usize,
    trials: u64,
    planted_rate: f64,
    agreement_rate: f64,
    mean_samples: f64,
    index_counts: Vec<u64>,
    master_seed: u64,
}

fn cmd_select(cli: &Cli, cmd: &SelectCmd) -> Result<bool> {
    let pmfs: Vec<Vec<f64>> = read_json(&cmd.hypotheses)?;
    let hyps = pmfs
        .iter()
        .map(|w| DiscreteDistribution::new(w))
        .collect::<Result<Vec<_>>>()?;
    let hset = HypothesisSet::new(hyps)?;
    if cmd.planted >= hset.original_n() {
        return Err(Error::Parameter(format!("planted index {} out of range", cmd.planted)));
    }
    let p = Arc::new(hset.hyp(cmd.planted).clone());
    let mut config = SelectConfig::new(cmd.rho, cmd.eps);
    config.c_m = cmd.cm;

    let mut index_counts = vec![0u64; hset.original_n()];
    let mut planted_hits = 0u64;
    let mut agreements = 0u64;
    let mut total_samples = 0u64;
    for i in 0..cli.trials {
        let rr = derive_seed(cli.seed, i, Role::Randomness);
        let o1 = replicable_select(
            &hset,
            p.clone(),
            &config,
            derive_seed(cli.seed, i, Role::Samples1),
            rr,
        )?;
        let o2 = replicable_select(
            &hset,
            p.clone(),
            &config,
            derive_seed(cli.seed, i, Role::Samples2),
            rr,
        )?;
        index_counts[o1.index] += 1;
        if o1.index == cmd.planted {
            planted_hits += 1;
        }
        if o1.index == o2.index {
            agreements += 1;
        }
        total_samples += o1.samples_used;
    }
    let report = SelectReport {
        hypotheses: hset.original_n(),
        planted: cmd.planted,
        trials: cli.trials,
        planted_rate: planted_hits as f64 / cli.trials as f64,
        agreement_rate: agreements as f64 / cli.trials as f64,
        mean_samples: total_samples as f64 / cli.trials as f64,
        index_counts,
        master_seed: cli.seed,
    };
    let ok = report.planted_rate >= cmd.min_rate;
    emit(&cli.out, &format!("{}\n", to_json_pretty(&report)?))?;
    Ok(ok)
}

fn cmd_replicability(cli: &Cli, cmd: &ReplicabilityCmd) -> Result<bool> {
    let (tester, rho) = build_tester(read_json(&cmd.config)?)?;
    let report = estimate_replicability(tester.as_ref(), cli.trials, cli.seed)?;
    let ceiling = cmd
        .max_rate
        .unwrap_or(rho + 3.0 * proportion_stderr(rho, cli.trials));
    let ok = report.disagreement_rate <= ceiling;
    emit(&cli.out, &format!("{}\n", to_json_pretty(&report)?))?;
    Ok(ok)
}

fn successive_ratios(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0]).collect()
}

fn cmd_sweep(cli: &Cli, cmd: &SweepCmd) -> Result<bool> {
    let base = CoinProblem { p0: cmd.p0, q0: cmd.q0, rho: 0.5, delta: cmd.delta };
    let rows = sample_complexity_sweep(&base, cmd.bias, &cmd.rhos, cli.trials, cli.seed)?;
    // Cost should grow roughly linearly in 1/rho on average and at most
    // quadratically in the worst case.
    let mean_ok = successive_ratios(&rows.iter().map(|r| r.mean_samples).collect::<Vec<_>>())
        .iter()
        .all(|r| (1.2..=3.5).contains(r));
    let max_ok = successive_ratios(&rows.iter().map(|r| r.max_samples as f64).collect::<Vec<_>>())
        .iter()
        .all(|r| (1.5..=7.0).contains(r));
    emit(&cli.out, &sweep_csv(&rows))?;
    Ok(mean_ok && max_ok)
}

fn cmd_chain_report(cli: &Cli, cmd: &ChainReportCmd) -> Result<bool> {
    let chain: ChainFamily = match cmd.family {
        ChainFamilyArg::Coin => coin_chain(cmd.eps, cmd.t)?,
        ChainFamilyArg::Uniformity => uniformity_chain(cmd.n, cmd.eps, cmd.t)?,
        ChainFamilyArg::Closeness => closeness_chain(cmd.n, cmd.eps, cmd.t)?,
    };
    let report = chain_report(&chain, cmd.m)?;
    let ok = report.all_indistinguishable;
    emit(&cli.out, &format!("{}\n", to_json_pretty(&report)?))?;
    Ok(ok)
}

#[derive(Serialize)]
struct CalibrationReport {
    family: String,
    m: u64,
    trials: u64,
    /// Empirical standard deviation of the statistic over the trials.
    empirical_std: f64,
    /// The sigma(m) the estimators assume.
    model_sigma: f64,
    /// empirical_std / model_sigma; above 1 the deviation model is unsafe.
    ratio: f64,
    safe: bool,
    master_seed: u64,
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn cmd_calibrate(cli: &Cli, cmd: &CalibrateCmd) -> Result<bool> {
    let trials = cli.trials.max(100);
    let report = match cmd.family {
        CalibrateFamily::Uniformity => {
            let problem = UniformityProblem::new(cmd.n, cmd.eps, cmd.rho, cmd.rho);
            let spec = uniformity_spec(&problem)?;
            let m = breakpoint(&spec, 0.125)?;
            let dist = Arc::new(DiscreteDistribution::uniform(cmd.n));
            let mut stream = SampleStream::new(dist.clone(), derive_seed(cli.seed, 0, Role::Samples1));
            let mut zs = Vec::with_capacity(trials as usize);
            for _ in 0..trials {
                let hist = stream.draw_histogram(&dist, m)?;
                let pairs: u64 = hist.iter().map(|&c| c * (c - 1) / 2).sum();
                zs.push(pairs as f64 / (m * (m - 1) / 2) as f64);
            }
            let empirical_std = std_dev(&zs);
            let model_sigma = replitest::expectation_gap::StatisticSpec::sigma(&spec, m);
            CalibrationReport {
                family: "uniformity".into(),
                m,
                trials,
                empirical_std,
                model_sigma,
                ratio: empirical_std / model_sigma,
                safe: empirical_std <= model_sigma,
                master_seed: cli.seed,
            }
        }
        CalibrateFamily::Gaussian => {
            let config = GaussianTesterConfig::new(cmd.d, cmd.alpha, cmd.rho, cmd.m);
            config.validate()?;
            let source = Arc::new(GaussianSource::new(vec![0.0; cmd.d])?);
            let spec = StepCSpec::new(&config);
            let radius = config.projection_radius();
            let mut stream: SampleStream<Vec<f64>> =
                SampleStream::new(source, derive_seed(cli.seed, 0, Role::Samples1));
            let mut zs = Vec::with_capacity(trials as usize);
            for _ in 0..trials {
                let draw_batch = |s: &mut SampleStream<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
                    (0..cmd.m)
                        .map(|_| Ok(replitest::gaussian::project_to_ball(&s.draw()?, radius)))
                        .collect()
                };
                let xs = draw_batch(&mut stream)?;
                let ys = draw_batch(&mut stream)?;
                zs.push(replitest::gaussian::step_c_statistic(&xs, &ys)?);
            }
            let empirical_std = std_dev(&zs);
            let model_sigma = replitest::expectation_gap::StatisticSpec::sigma(&spec, cmd.m);
            CalibrationReport {
                family: "gaussian".into(),
                m: cmd.m,
                trials,
                empirical_std,
                model_sigma,
                ratio: empirical_std / model_sigma,
                safe: empirical_std <= model_sigma,
                master_seed: cli.seed,
            }
        }
    };
    let ok = report.safe;
    emit(&cli.out, &format!("{}\n", to_json_pretty(&report)?))?;
    Ok(ok)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Coin(c) => cmd_coin(cli, c),
        Command::Uniformity(c) => cmd_uniformity(cli, c),
        Command::Closeness(c) => cmd_closeness(cli, c),
        Command::Gaussian(c) => cmd_gaussian(cli, c),
        Command::Select(c) => cmd_select(cli, c),
        Command::Replicability(c) => cmd_replicability(cli, c),
        Command::Sweep(c) => cmd_sweep(cli, c),
        Command::ChainReport(c) => cmd_chain_report(cli, c),
        Command::Calibrate(c) => cmd_calibrate(cli, c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("failed to configure worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if cli.check => {
            eprintln!("check failed: measured result below the stated expectation");
            ExitCode::from(2)
        }
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
