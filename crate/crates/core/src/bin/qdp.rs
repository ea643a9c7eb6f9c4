//! Command-line surface for the solver and the experiment harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use qdp::baselines::fullinfo::FullInfo;
use qdp::baselines::geometric::{fit_truncated_geometric, CountMdp};
use qdp::baselines::qlearn::qlearn_aggregated;
use qdp::config::InstanceConfig;
use qdp::harness::{csv_io, run_design, svg, ExperimentDesign};
use qdp::policy::{
    load_policy, save_policy, to_pure_policy, PartitionedPolicy, PolicyTable, PurePolicy,
    SharingScheme,
};
use qdp::pricing::efficient::QplexEngine;
use qdp::pricing::PricingModel;
use qdp::sim::{exhaustive_restricted, simulate_policy};
use qdp::train::{train, EpisodeEngine, TrainParams, TrainTrace};

#[derive(Parser)]
#[command(
    name = "qdp",
    about = "Deterministic solver and experiment harness for queueing dynamic-pricing decision problems",
    version
)]
struct Cli {
    /// Instance configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed for every randomized component.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    max_episodes: usize,
    /// Accept a step only if it improves the objective, halving the rate
    /// otherwise.
    #[arg(long)]
    adaptive: bool,
    /// Share one price pmf across counter blocks, e.g. "0-10,11-15,16-25".
    #[arg(long)]
    share_z: Option<String>,
    /// Share across epoch blocks, e.g. "all" or "0-24,25-49". Defaults to
    /// "all" when --share-z is given.
    #[arg(long)]
    share_t: Option<String>,
    /// Train once per learning rate, e.g. "1,10,100,1000", writing one trace
    /// per rate plus a sweep summary.
    #[arg(long)]
    eta_sweep: Option<String>,
    /// Keep a policy snapshot every this many episodes in the trace.
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Replace the service pmf with a truncated geometric of this mean.
    #[arg(long)]
    geo_mean: Option<f64>,
    /// Also write an SVG rendering of the training curve.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Policy file (structured text) to evaluate.
    #[arg(long)]
    policy: PathBuf,
    /// Also dump per-period counter marginals to this CSV.
    #[arg(long)]
    marginals: Option<PathBuf>,
    #[arg(long)]
    geo_mean: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

#[derive(Args)]
struct DesignArgs {
    /// Experiment design file (TOML).
    #[arg(long)]
    design: PathBuf,
    /// Also write SVG histograms of the gap columns.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Pure count policy (matrix CSV).
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    reps: u64,
    #[arg(long)]
    geo_mean: Option<f64>,
}

#[derive(Args)]
struct ExhaustiveArgs {
    /// Counter blocks sharing a price, e.g. "0-10,11-15,16-20,21-25".
    #[arg(long)]
    blocks: String,
    /// Candidate prices, e.g. "0.2,0.4,0.6,0.8,1.0,1.1".
    #[arg(long)]
    prices: String,
    #[arg(long, default_value_t = 100_000)]
    reps: u64,
    #[arg(long, default_value_t = 6)]
    top_k: usize,
    #[arg(long, default_value_t = 1_000_000)]
    top_reps: u64,
}

#[derive(Args)]
struct QlearnArgs {
    /// Constant learning rates, e.g. "0.1,0.05,0.025".
    #[arg(long, default_value = "0.1,0.05,0.025,0.01,0.005,0.0025")]
    rates: String,
    #[arg(long, default_value_t = 1_000_000)]
    episodes: u64,
    #[arg(long, default_value_t = 100_000)]
    eval_every: u64,
    #[arg(long, default_value_t = 20_000)]
    eval_reps: u64,
}

#[derive(Args)]
struct BellmanArgs {
    /// Optional count policy (matrix CSV) to evaluate exactly.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    geo_mean: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    geo_mean: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a pricing policy with exponentiated Q-ascent.
    Train(TrainArgs),
    /// Evaluate a policy file with the forward scheme.
    Eval(EvalArgs),
    /// Run the derivative and equivalence verification suites.
    Gradcheck(GradcheckArgs),
    /// Execute a factorial experiment design.
    Design(DesignArgs),
    /// Monte Carlo simulation of a pure count policy.
    Simulate(SimulateArgs),
    /// Exhaustive simulation over a restricted policy class.
    Exhaustive(ExhaustiveArgs),
    /// State-aggregated Q-learning baseline.
    Qlearn(QlearnArgs),
    /// Solve the full-information MDP exactly.
    BellmanFull(BellmanArgs),
    /// Solve the memoryless count MDP exactly.
    BellmanGeom(BellmanArgs),
    /// Extract a count policy from the full-information optimum.
    Extract(ExtractArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; usage problems exit with 1.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<qdp::Error>()
                .map(|err| err.exit_code())
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::Train(args) => cmd_train(cli, args),
        Command::Eval(args) => cmd_eval(cli, args),
        Command::Gradcheck(args) => cmd_gradcheck(cli, args),
        Command::Design(args) => cmd_design(cli, args),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Exhaustive(args) => cmd_exhaustive(cli, args),
        Command::Qlearn(args) => cmd_qlearn(cli, args),
        Command::BellmanFull(args) => cmd_bellman_full(cli, args),
        Command::BellmanGeom(args) => cmd_bellman_geom(cli, args),
        Command::Extract(args) => cmd_extract(cli, args),
    }
}

fn load_model(cli: &Cli, geo_mean: Option<f64>) -> anyhow::Result<(InstanceConfig, PricingModel)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config is required"))?;
    let mut config = InstanceConfig::load(path)?;
    if let Some(mean) = geo_mean {
        let g = fit_truncated_geometric(mean)?;
        config.service_pmf = qdp::config::NamedOrVector::Vector(g.as_slice().to_vec());
    }
    let model = config.to_model()?;
    Ok((config, model))
}

fn out_dir(cli: &Cli) -> anyhow::Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn parse_ranges(text: &str, upper: usize) -> anyhow::Result<Vec<Vec<usize>>> {
    if text.trim() == "all" {
        return Ok(vec![(0..upper).collect()]);
    }
    let mut blocks = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let block = if let Some((lo, hi)) = part.split_once('-') {
            let lo: usize = lo.trim().parse().context("range start")?;
            let hi: usize = hi.trim().parse().context("range end")?;
            if hi < lo {
                bail!("empty range '{part}'");
            }
            (lo..=hi).collect()
        } else {
            vec![part.parse().context("range value")?]
        };
        blocks.push(block);
    }
    Ok(blocks)
}

fn parse_list<T: std::str::FromStr>(text: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| anyhow!("bad list entry '{s}': {e}"))
        })
        .collect()
}

fn sharing_from_args(
    args: &TrainArgs,
    counters: usize,
    horizon: usize,
) -> anyhow::Result<Option<SharingScheme>> {
    if args.share_z.is_none() && args.share_t.is_none() {
        return Ok(None);
    }
    let z_blocks = match &args.share_z {
        Some(text) => parse_ranges(text, counters)?,
        None => vec![(0..counters).collect()],
    };
    let t_blocks = match &args.share_t {
        Some(text) => parse_ranges(text, horizon)?,
        None => vec![(0..horizon).collect()],
    };
    Ok(Some(SharingScheme { z_blocks, t_blocks }))
}

fn run_training(
    model: &PricingModel,
    params: &TrainParams,
    sharing: Option<SharingScheme>,
) -> anyhow::Result<TrainTrace> {
    let engine = QplexEngine::new(model);
    let mut init = model.uniform_count_policy();
    init.set_sharing(sharing)?;
    Ok(train(&engine, &init, params)?)
}

fn write_policy_files(
    dir: &Path,
    stem: &str,
    policy: &PartitionedPolicy,
) -> anyhow::Result<(PathBuf, PathBuf)> {
    let txt = dir.join(format!("{stem}.policy.txt"));
    save_policy(&PolicyTable::from_policy(policy), &txt)?;
    let pure = to_pure_policy(policy);
    let csv = dir.join(format!("{stem}.pure.csv"));
    PurePolicy::from_policy(&pure).save_csv(&csv)?;
    Ok((txt, csv))
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> anyhow::Result<ExitCode> {
    let (config, model) = load_model(cli, args.geo_mean)?;
    let dir = out_dir(cli)?;
    let sharing = sharing_from_args(args, model.space.counters, model.spec.horizon)?;
    let hash = config.resolved_hash()?;

    let etas: Vec<f64> = match &args.eta_sweep {
        Some(list) => parse_list(list)?,
        None => vec![args.eta],
    };
    let sweep = etas.len() > 1;
    let mut sweep_rows = Vec::new();
    for &eta in &etas {
        let params = TrainParams {
            eta,
            epsilon: args.epsilon,
            max_episodes: args.max_episodes,
            adaptive: args.adaptive,
            snapshot_every: args.snapshot_every,
        };
        let started = std::time::Instant::now();
        let trace = run_training(&model, &params, sharing.clone())?;
        let elapsed = started.elapsed().as_secs_f64();
        let stem = if sweep {
            format!("eta{eta}")
        } else {
            "train".to_string()
        };
        let trace_path = dir.join(format!("{stem}.trace.csv"));
        csv_io::write_train_trace(&trace_path, &trace)?;
        let (txt, csv) = write_policy_files(&dir, &stem, &trace.final_policy)?;
        let final_reward = trace.final_reward().clone();
        println!(
            "eta={eta} episodes={} converged={} J={:.6} revenue={:.6} penalty={:.6} ({:.2}s)",
            trace.episodes.len(),
            trace.converged,
            final_reward.total,
            final_reward.component("revenue"),
            final_reward.component("penalty"),
            elapsed
        );
        println!("  config-hash={hash}");
        println!(
            "  wrote {} {} {}",
            trace_path.display(),
            txt.display(),
            csv.display()
        );
        if args.svg {
            let series = vec![(
                format!("J (eta={eta})"),
                trace
                    .episodes
                    .iter()
                    .map(|r| (r.episode as f64, r.reward.total))
                    .collect(),
            )];
            svg::line_chart(
                &dir.join(format!("{stem}.trace.svg")),
                "objective during training",
                &series,
            )?;
        }
        sweep_rows.push((eta, trace.episodes.len(), final_reward.total));
    }
    if sweep {
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record(["eta", "episodes", "J"])?;
        for (eta, episodes, value) in &sweep_rows {
            w.write_record([eta.to_string(), episodes.to_string(), value.to_string()])?;
        }
        w.flush()?;
        println!("wrote {}", dir.join("sweep.csv").display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load_model(cli, args.geo_mean)?;
    let table = load_policy(&args.policy)?;
    if table.horizon != model.spec.horizon {
        bail!(qdp::Error::Domain(format!(
            "policy horizon {} does not match the instance horizon {}",
            table.horizon, model.spec.horizon
        )));
    }
    if table.experts != model.space.counters || table.actions != model.spec.action_count() {
        bail!(qdp::Error::Domain(
            "policy dimensions do not match the instance".into()
        ));
    }
    let policy = table.into_policy(model.count_assignment(), None)?;
    let engine = QplexEngine::new(&model);
    let episode = engine.episode(&policy)?;
    let value = &episode.reward;
    println!("J {:.12}", value.total);
    for (name, component) in &value.components {
        println!("{name} {component:.12}");
    }
    if let Some(path) = &args.marginals {
        let marginals: Vec<Vec<f64>> = episode
            .trace
            .mu
            .iter()
            .map(|mu| {
                (0..model.space.counters)
                    .map(|z| model.space.counter_marginal(mu.as_slice(), z))
                    .collect()
            })
            .collect();
        csv_io::write_counter_marginals(path, &marginals)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs) -> anyhow::Result<ExitCode> {
    let report = qdp::gradcheck::run_suite(args.trials, cli.seed)?;
    println!("trials {}", report.trials);
    println!(
        "max policy-gradient rel error  {:.3e}",
        report.max_gradient_error
    );
    println!("max sigma rel error            {:.3e}", report.max_sigma_error);
    println!(
        "max Fisher asymmetry           {:.3e}",
        report.max_fisher_asymmetry
    );
    println!(
        "min Fisher eigenvalue          {:.3e}",
        report.min_fisher_eigenvalue
    );
    println!(
        "max Markov off-diagonal block  {:.3e}",
        report.max_markov_offdiag
    );
    println!(
        "max kernel row drift           {:.3e}",
        report.max_kernel_row_drift
    );
    println!(
        "max sum-product equivalence    {:.3e}",
        report.max_equivalence_error
    );
    println!(
        "max xi-gradient rel error      {:.3e}",
        report.max_xi_gradient_error
    );
    if report.passed() {
        println!("gradcheck: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        for failure in &report.failures {
            println!("gradcheck FAILURE: {failure}");
        }
        Ok(ExitCode::from(2))
    }
}

fn cmd_design(cli: &Cli, args: &DesignArgs) -> anyhow::Result<ExitCode> {
    let design = ExperimentDesign::load(&args.design)?;
    let dir = out_dir(cli)?;
    let threads = if cli.threads == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        cli.threads
    };
    println!("running {} cells on {} threads", design.cell_count(), threads);
    let outputs = run_design(&design, threads);

    let mut all_records = Vec::new();
    let mut summaries = Vec::new();
    for output in &outputs {
        all_records.extend(output.records.iter().cloned());
        summaries.push(output.summary.clone());
        if let Some(error) = &output.summary.error {
            eprintln!("cell {} failed: {error}", output.summary.cell);
        }
    }
    csv_io::write_records(&dir.join("records.csv"), &all_records)?;
    csv_io::write_summaries(&dir.join("summary.csv"), &summaries)?;
    println!(
        "wrote {} and {}",
        dir.join("records.csv").display(),
        dir.join("summary.csv").display()
    );
    if args.svg {
        let gaps: Vec<f64> = summaries
            .iter()
            .filter_map(|s| s.optimality_gap_bound)
            .collect();
        if !gaps.is_empty() {
            svg::histogram(
                &dir.join("optimality_gap.svg"),
                "optimality gap upper bound",
                &gaps,
                20,
            )?;
        }
        let errors: Vec<f64> = summaries.iter().filter_map(|s| s.qplex_rel_error).collect();
        if !errors.is_empty() {
            svg::histogram(
                &dir.join("qplex_rel_error.svg"),
                "relative error of the forward value",
                &errors,
                20,
            )?;
        }
    }
    let failed = summaries.iter().filter(|s| s.error.is_some()).count();
    if failed > 0 {
        println!("{failed} cells failed");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load_model(cli, args.geo_mean)?;
    let dir = out_dir(cli)?;
    let policy = PurePolicy::load_csv(&args.policy)?;
    let result = simulate_policy(&model, &policy, args.reps, cli.seed)?;
    println!(
        "mean {:.6} +- {:.6} (99.7% CI, {} reps)",
        result.mean, result.ci_halfwidth, result.reps
    );
    println!(
        "revenue {:.6} waiting {:.6} terminal {:.6}",
        result.revenue, result.waiting, result.terminal
    );
    println!("max violation {:.6}", result.max_violation());
    csv_io::write_violations(&dir.join("violations.csv"), &result.violation)?;
    println!("wrote {}", dir.join("violations.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_exhaustive(cli: &Cli, args: &ExhaustiveArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load_model(cli, None)?;
    let dir = out_dir(cli)?;
    let blocks = parse_ranges(&args.blocks, model.space.counters)?;
    let prices: Vec<f64> = parse_list(&args.prices)?;
    let price_indices: Vec<usize> = prices
        .iter()
        .map(|p| {
            model
                .spec
                .prices
                .iter()
                .position(|q| (q - p).abs() < 1e-9)
                .ok_or_else(|| anyhow!("price {p} is not on the instance grid"))
        })
        .collect::<anyhow::Result<_>>()?;
    let result = exhaustive_restricted(
        &model,
        &blocks,
        &price_indices,
        args.reps,
        cli.seed,
        args.top_k,
        args.top_reps,
    )?;
    println!(
        "{} candidates, {} feasible",
        result.candidates_total, result.feasible_total
    );
    let mut w = csv::Writer::from_path(dir.join("exhaustive.csv"))?;
    let mut header = vec!["rank".to_string()];
    header.extend((0..blocks.len()).map(|i| format!("price_block{i}")));
    header.extend(
        [
            "mean",
            "ci",
            "max_violation",
            "feasible",
            "refined_mean",
            "refined_ci",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for (rank, candidate) in result.ranked.iter().enumerate() {
        let mut row = vec![rank.to_string()];
        row.extend(
            candidate
                .block_prices
                .iter()
                .map(|&a| model.spec.prices[a].to_string()),
        );
        row.push(candidate.sim.mean.to_string());
        row.push(candidate.sim.ci_halfwidth.to_string());
        row.push(candidate.sim.max_violation().to_string());
        row.push((candidate.feasible as u8).to_string());
        row.push(
            candidate
                .refined
                .as_ref()
                .map(|r| r.mean.to_string())
                .unwrap_or_default(),
        );
        row.push(
            candidate
                .refined
                .as_ref()
                .map(|r| r.ci_halfwidth.to_string())
                .unwrap_or_default(),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    if let Some(winner) = result.winner() {
        let refined = winner.refined.as_ref().unwrap_or(&winner.sim);
        let prices: Vec<String> = winner
            .block_prices
            .iter()
            .map(|&a| format!("{}", model.spec.prices[a]))
            .collect();
        println!(
            "winner ({}) mean {:.6} +- {:.6}",
            prices.join(","),
            refined.mean,
            refined.ci_halfwidth
        );
    } else {
        println!("no feasible candidate");
    }
    println!("wrote {}", dir.join("exhaustive.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_qlearn(cli: &Cli, args: &QlearnArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load_model(cli, None)?;
    let dir = out_dir(cli)?;
    let rates: Vec<f64> = parse_list(&args.rates)?;
    let result = qlearn_aggregated(
        &model,
        &rates,
        args.episodes,
        args.eval_every,
        args.eval_reps,
        cli.seed,
    )?;
    csv_io::write_learning_curves(&dir.join("qlearn_curves.csv"), &result)?;
    let best = result.best();
    println!(
        "best rate {} with checkpoint value {:.6}",
        best.rate, best.best_value
    );
    best.best_policy.save_csv(&dir.join("qlearn.pure.csv"))?;
    println!(
        "wrote {} and {}",
        dir.join("qlearn_curves.csv").display(),
        dir.join("qlearn.pure.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bellman_full(cli: &Cli, args: &BellmanArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load_model(cli, args.geo_mean)?;
    let fullinfo = FullInfo::new(&model)?;
    println!("states {}", fullinfo.state_count);
    let solution = fullinfo.bellman_optimal();
    println!("v_mdp_exact {:.12}", solution.value);
    if let Some(path) = &args.policy {
        let policy = PurePolicy::load_csv(path)?;
        let value = fullinfo.evaluate_count_policy(&policy)?;
        println!("v_policy_exact {value:.12}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bellman_geom(cli: &Cli, args: &BellmanArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load_model(cli, args.geo_mean)?;
    let mdp = CountMdp::new(&model);
    println!("completion probability {:.9}", mdp.completion_probability());
    let solution = mdp.bellman_optimal();
    println!("v_geom_exact {:.12}", solution.value);
    if let Some(path) = &args.policy {
        let policy = PurePolicy::load_csv(path)?;
        let value = mdp.evaluate(&policy)?;
        println!("v_policy_geom {value:.12}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_extract(cli: &Cli, args: &ExtractArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load_model(cli, args.geo_mean)?;
    let dir = out_dir(cli)?;
    let fullinfo = FullInfo::new(&model)?;
    let solution = fullinfo.bellman_optimal();
    let extracted = fullinfo.extract_count_policy(&solution);
    let value = fullinfo.evaluate_count_policy(&extracted)?;
    println!("v_mdp_exact     {:.12}", solution.value);
    println!("v_extract_exact {value:.12}");
    extracted.save_csv(&dir.join("extracted.pure.csv"))?;
    println!("wrote {}", dir.join("extracted.pure.csv").display());
    Ok(ExitCode::SUCCESS)
}
