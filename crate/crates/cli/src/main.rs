use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fabsched_core::agents::{ActMode, Checkpoint};
use fabsched_core::baselines::{Variant, VariantSpec};
use fabsched_core::error::Error;
use fabsched_core::eval::{
    completion_histogram, evaluate_checkpoint, evaluation_episode, paired_differences, run_benchmark,
    sign_test, Benchmark, Metric, MetricsReport, HISTOGRAM_BINS,
};
use fabsched_core::factory::{validate_trace, Trace};
use fabsched_core::learner::{curve_to_csv, train, TrainConfig};
use fabsched_core::scenario::{
    generate_scenario, load_scenario, sample_episode, save_scenario, DemandTier, EpisodeInstance,
    ScenarioConfig, ScenarioShape,
};

#[derive(Parser)]
#[command(name = "fabsched", version, about = "Multi-agent production scheduling toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed; echoed into every artifact.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Scenario TOML file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[arg(long, global = true, default_value = "high")]
    tier: DemandTier,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

impl From<Mode> for ActMode {
    fn from(m: Mode) -> ActMode {
        match m {
            Mode::Greedy => ActMode::Greedy,
            Mode::Sample => ActMode::Sample,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file from a preset shape.
    Generate {
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        products: Option<usize>,
        #[arg(long)]
        operations: Option<usize>,
        #[arg(long)]
        machines: Option<usize>,
        #[arg(long)]
        shifts: Option<u32>,
        #[arg(long)]
        out_degree: Option<f64>,
        /// Also write this many evaluation episodes for `--tier`.
        #[arg(long, default_value_t = 0)]
        episodes: u64,
    },
    /// Train one variant and write its checkpoints and curve.
    Train {
        #[arg(long, default_value = "LFORM-RC")]
        variant: Variant,
        #[arg(long, default_value_t = 2000)]
        episodes: u64,
    },
    /// Run a checkpoint over shared evaluation episodes.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        episodes: u64,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: Mode,
    },
    /// Compare variants against a baseline on paired episodes.
    Benchmark {
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long, value_delimiter = ',', default_value = "SRM,ORM,LFSRM,LFORM,LFORM-RC,DRL-JSSP,DRL-DFJSS")]
        variants: Vec<Variant>,
        #[arg(long, default_value = "DRL-JSSP")]
        baseline: Variant,
        /// Demand tiers to run; defaults to `--tier`.
        #[arg(long, value_delimiter = ',')]
        tiers: Vec<DemandTier>,
    },
    /// The five ablation variants against SRM at `--tier`.
    Ablate {
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Check a trace against every constraint family.
    Validate {
        #[arg(long)]
        trace: PathBuf,
        /// Episode JSON; rebuilt from the trace header when omitted.
        #[arg(long)]
        episode: Option<PathBuf>,
    },
    /// Print a trace as a per-machine timeline with its metrics.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        episode: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Directory holding `<VARIANT>_<tier>.json` checkpoints.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Train missing checkpoints with this many episodes.
    #[arg(long, default_value_t = 0)]
    train_episodes: u64,
    #[arg(long, default_value_t = 30)]
    episodes: u64,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: Mode,
}

/// Trace failed validation.
#[derive(Debug)]
struct ValidationFailed;

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("trace failed validation")
    }
}

impl std::error::Error for ValidationFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::from("error");
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    msg = format!("{msg}: {text}");
                }
            }
            eprintln!("{msg}");
            let validation = e.is::<ValidationFailed>()
                || matches!(e.downcast_ref::<Error>(), Some(Error::MalformedTrace(_)));
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Generate {
            ref preset,
            products,
            operations,
            machines,
            shifts,
            out_degree,
            episodes,
        } => generate(g, preset, [products, operations, machines], shifts, out_degree, episodes),
        Command::Train { variant, episodes } => {
            let config = scenario(g)?;
            train_one(g, &config, variant, g.tier, episodes, &g.out)?;
            Ok(())
        }
        Command::Evaluate {
            ref checkpoint,
            episodes,
            mode,
        } => evaluate(g, checkpoint, episodes, mode.into()),
        Command::Benchmark {
            bench,
            variants,
            baseline,
            tiers,
        } => {
            let tiers = if tiers.is_empty() { vec![g.tier] } else { tiers };
            benchmark(g, &bench, &variants, baseline, &tiers)
        }
        Command::Ablate { bench } => benchmark(g, &bench, &Variant::ABLATION, Variant::Srm, &[g.tier]),
        Command::Validate { ref trace, ref episode } => validate(g, trace, episode.as_deref()),
        Command::Replay { ref trace, ref episode } => replay(g, trace, episode.as_deref()),
    }
}

fn scenario(g: &Global) -> Result<ScenarioConfig> {
    let Some(path) = &g.scenario else {
        bail!(Error::Parse("--scenario is required".into()));
    };
    Ok(load_scenario(path).with_context(|| format!("loading {}", path.display()))?)
}

fn seed_header(g: &Global, config: &ScenarioConfig, extra: &str) -> String {
    format!(
        "scenario={} fingerprint={} tier={} seed={}{}",
        config.name,
        config.fingerprint(),
        g.tier,
        g.seed,
        extra
    )
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate(
    g: &Global,
    preset: &str,
    dims: [Option<usize>; 3],
    shifts: Option<u32>,
    out_degree: Option<f64>,
    episodes: u64,
) -> Result<()> {
    let Some(mut shape) = ScenarioShape::preset(preset) else {
        bail!(Error::Parse(format!("unknown preset '{preset}'")));
    };
    let [p, o, m] = dims;
    shape.products = p.unwrap_or(shape.products);
    shape.operations = o.unwrap_or(shape.operations);
    shape.machines = m.unwrap_or(shape.machines);
    if let Some(s) = shifts {
        shape = shape.shifts(s);
    }
    if let Some(d) = out_degree {
        shape = shape.out_degree(d);
    }
    let config = generate_scenario(&shape, g.seed)?;
    let path = g.out.join(format!("{}.toml", config.name));
    fs::create_dir_all(&g.out)?;
    save_scenario(&config, &path)?;
    println!("wrote {} ({})", path.display(), config.fingerprint());
    for i in 0..episodes {
        let e = evaluation_episode(&config, g.tier, g.seed, i);
        write(&g.out.join(format!("episodes/{}_{i}.json", g.tier)), &e.to_json()?)?;
    }
    Ok(())
}

fn train_one(
    g: &Global,
    config: &ScenarioConfig,
    variant: Variant,
    tier: DemandTier,
    episodes: u64,
    dir: &Path,
) -> Result<Checkpoint> {
    let cfg = TrainConfig {
        workers: g.workers,
        ..TrainConfig::default()
    };
    let spec = VariantSpec::of(variant);
    let out = train(config, tier, spec, &cfg, episodes, g.seed, |row| {
        if (row.episode + 1) % 100 == 0 {
            eprintln!("{variant} {tier}: episode {} team reward {:.2}", row.episode + 1, row.team_reward);
        }
    })?;
    fs::create_dir_all(dir)?;
    out.best.save(dir.join("checkpoint_best.json"))?;
    out.last.save(dir.join("checkpoint_last.json"))?;
    let model = fabsched_core::baselines::build_variant(spec, config, &cfg.encoder, &cfg.hidden, g.seed)?;
    let header = format!(
        "# scenario={} fingerprint={} tier={tier} seed={} variant={variant} episodes={episodes}\n",
        config.name,
        config.fingerprint(),
        g.seed
    );
    write(&dir.join("curve.csv"), &(header + &curve_to_csv(&model, &out.curve)))?;
    if let Some(best) = out.best_window_mean {
        println!("{variant} {tier}: best 100-episode mean team reward {best:.3}");
    }
    Ok(out.best)
}

fn evaluate(g: &Global, checkpoint: &Path, episodes: u64, mode: ActMode) -> Result<()> {
    let config = scenario(g)?;
    let ck = Checkpoint::load(checkpoint, &config.fingerprint())?;
    let ev = evaluate_checkpoint(&ck, &config, g.tier, episodes, g.seed, mode, g.workers)?;
    let header = seed_header(g, &config, &format!(" variant={} mode={mode:?}", ck.variant.variant));
    write(&g.out.join("metrics.csv"), &ev.report.to_csv(&header))?;
    fs::create_dir_all(g.out.join("traces"))?;
    for (i, t) in ev.traces.iter().enumerate() {
        t.write(g.out.join(format!("traces/episode_{i}.jsonl")))?;
    }
    let mut log = format!("# {header}\nepisode,guard_overrides,goal_emissions\n");
    for (i, (o, goals)) in ev.guard_overrides.iter().zip(&ev.goal_logs).enumerate() {
        writeln!(log, "{i},{o},{}", goals.len())?;
    }
    write(&g.out.join("episode_log.csv"), &log)?;
    print_summary(&ev.report);
    Ok(())
}

fn print_summary(report: &MetricsReport) {
    for m in Metric::ALL {
        let s = report.aggregate[&m];
        println!("{:<16} mean {:>10.4} sd {:>10.4}", m.name(), s.mean, s.std);
    }
}

fn benchmark(g: &Global, args: &BenchArgs, variants: &[Variant], baseline: Variant, tiers: &[DemandTier]) -> Result<()> {
    let config = scenario(g)?;
    let dir = args.checkpoints.clone().unwrap_or_else(|| g.out.join("checkpoints"));
    let mut order = vec![baseline];
    order.extend(variants.iter().copied().filter(|v| *v != baseline));
    let mut checkpoints = BTreeMap::new();
    for &tier in tiers {
        for &v in &order {
            let path = dir.join(format!("{}_{tier}.json", v.name()));
            let ck = if path.exists() || args.train_episodes == 0 {
                Checkpoint::load(&path, &config.fingerprint())?
            } else {
                let ck = train_one(g, &config, v, tier, args.train_episodes, &dir.join(format!("{}_{tier}", v.name())))?;
                ck.save(&path)?;
                ck
            };
            checkpoints.insert((v, tier), ck);
        }
    }
    let bench = run_benchmark(
        &config,
        tiers,
        &order,
        baseline,
        &checkpoints,
        args.episodes,
        g.seed,
        args.mode.into(),
        g.workers,
    )?;
    write_benchmark(g, &config, &bench)?;
    print!("{}", bench.table.to_text());
    Ok(())
}

fn write_benchmark(g: &Global, config: &ScenarioConfig, bench: &Benchmark) -> Result<()> {
    let header = format!(
        "scenario={} fingerprint={} seed={} episodes={}",
        config.name,
        config.fingerprint(),
        g.seed,
        bench.table.episodes
    );
    write(&g.out.join("comparison.json"), &bench.table.to_json()?)?;
    write(&g.out.join("comparison.txt"), &bench.table.to_text())?;
    for ((v, tier), report) in &bench.reports {
        write(
            &g.out.join(format!("metrics_{}_{tier}.csv", v.name())),
            &report.to_csv(&format!("{header} tier={tier} variant={v}")),
        )?;
    }
    let edges: Vec<String> = (0..=HISTOGRAM_BINS)
        .map(|k| format!("{}", k as f64 / HISTOGRAM_BINS as f64))
        .collect();
    let mut hist = format!("# {header}\n# completion-rate bin edges: {}\nvariant,tier", edges.join(","));
    for k in 0..HISTOGRAM_BINS {
        write!(hist, ",bin{k}")?;
    }
    hist.push('\n');
    for ((v, tier), counts) in &bench.histograms {
        debug_assert_eq!(counts, &completion_histogram(&bench.reports[&(*v, *tier)]));
        let cells: Vec<String> = counts.iter().map(ToString::to_string).collect();
        writeln!(hist, "{v},{tier},{}", cells.join(","))?;
    }
    write(&g.out.join("histograms.csv"), &hist)?;
    let mut signs = format!("# {header} baseline={}\nvariant,tier,metric,wins,losses,ties,p_value\n", bench.table.baseline);
    for ((v, tier), report) in &bench.reports {
        if *v == bench.table.baseline {
            continue;
        }
        let base = &bench.reports[&(bench.table.baseline, *tier)];
        for m in [Metric::CompletionRate, Metric::Tardiness] {
            let s = sign_test(&paired_differences(m, base, report));
            writeln!(signs, "{v},{tier},{},{},{},{},{}", m.name(), s.wins, s.losses, s.ties, s.p_value)?;
        }
    }
    write(&g.out.join("sign_tests.csv"), &signs)?;
    let mut overrides = format!("# {header}\nvariant,tier,guard_overrides\n");
    for ((v, tier), n) in &bench.guard_overrides {
        writeln!(overrides, "{v},{tier},{n}")?;
    }
    write(&g.out.join("guard_overrides.csv"), &overrides)
}

/// The episode a trace was produced on, rebuilt from its header when no file is given.
fn trace_episode(config: &ScenarioConfig, trace: &Trace, episode: Option<&Path>) -> Result<(ScenarioConfig, EpisodeInstance)> {
    if trace.header.horizon_ticks % config.shift_ticks != 0 {
        bail!(Error::MalformedTrace("horizon is not a whole number of shifts".into()));
    }
    let shifts = trace.header.horizon_ticks / config.shift_ticks;
    let windowed = config.with_horizon(shifts);
    let e = match episode {
        Some(p) => EpisodeInstance::from_json(&fs::read_to_string(p)?)?,
        None => sample_episode(&windowed, trace.header.tier, trace.header.episode_seed),
    };
    Ok((windowed, e))
}

fn load_trace(config: &ScenarioConfig, path: &Path) -> Result<Trace> {
    let trace = Trace::read(path)?;
    if trace.header.fingerprint != config.fingerprint() {
        bail!(Error::FingerprintMismatch {
            expected: config.fingerprint(),
            found: trace.header.fingerprint.clone(),
        });
    }
    Ok(trace)
}

fn validate(g: &Global, path: &Path, episode: Option<&Path>) -> Result<()> {
    let config = scenario(g)?;
    let trace = load_trace(&config, path)?;
    let (config, e) = trace_episode(&config, &trace, episode)?;
    let report = validate_trace(&config, &e, &trace)?;
    print!("{report}");
    println!("events {} max shift conversion {} of {}", report.events_checked, report.max_shift_conversion, config.conversion_threshold);
    if !report.passed() {
        bail!(ValidationFailed);
    }
    Ok(())
}

fn replay(g: &Global, path: &Path, episode: Option<&Path>) -> Result<()> {
    let config = scenario(g)?;
    let trace = load_trace(&config, path)?;
    let (config, e) = trace_episode(&config, &trace, episode)?;
    let metrics = fabsched_core::eval::compute_metrics(&trace, &e, &config)?;
    println!(
        "# scenario={} episode_seed={} breakdown_seed={} horizon={}",
        trace.header.scenario, trace.header.episode_seed, trace.header.breakdown_seed, trace.header.horizon_ticks
    );
    let width = trace.header.horizon_ticks as usize;
    for (l, m) in config.machines.iter().enumerate() {
        let mut row = vec!['.'; width];
        let mut paint = |s: u32, e: u32, c: char| {
            for cell in row.iter_mut().take((e as usize).min(width)).skip(s as usize) {
                *cell = c;
            }
        };
        for mt in trace.maintenance.iter().filter(|mt| mt.machine.0 == l) {
            paint(mt.start, mt.end, '#');
        }
        for ev in trace.events.iter().filter(|ev| ev.machine.0 == l) {
            paint(ev.start, ev.start + ev.conversion_ticks, '~');
            let c = char::from_digit(ev.product.0 as u32 % 36, 36).unwrap_or('?');
            paint(ev.start + ev.conversion_ticks, ev.completion(), c);
        }
        println!("{:<8} {}", m.name, row.into_iter().collect::<String>());
    }
    println!("digits: product id, ~: conversion, #: maintenance, .: idle");
    let report = MetricsReport::new(vec![metrics]);
    print_summary(&report);
    Ok(())
}
