//! Schedule metrics, paired comparisons between variants and the sign test.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::{ActMode, Checkpoint};
use crate::baselines::Variant;
use crate::error::{Error, Result};
use crate::factory::{lots_from_trace, objective_population, validate_trace, LotLocation, Trace};
use crate::learner::{infer_rolling, GoalEmission};
use crate::rng::{derive_seed, streams};
use crate::scenario::{sample_episode, DemandTier, EpisodeInstance, ScenarioConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_seed: u64,
    /// Sum over lots due within the horizon of `max(0, C - D)`; unfinished lots use the
    /// horizon as `C`.
    pub tardiness: u64,
    pub n_conversions: usize,
    /// Machine ticks that were neither processing, converting nor under maintenance.
    pub cumulative_idle: u64,
    pub completion_rate: f64,
    pub delayed: usize,
    pub total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tardiness,
    Conversions,
    Idle,
    CompletionRate,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Tardiness, Metric::Conversions, Metric::Idle, Metric::CompletionRate];

    pub fn value(self, m: &EpisodeMetrics) -> f64 {
        match self {
            Metric::Tardiness => m.tardiness as f64,
            Metric::Conversions => m.n_conversions as f64,
            Metric::Idle => m.cumulative_idle as f64,
            Metric::CompletionRate => m.completion_rate,
        }
    }

    /// Completion rate improves upward; the other metrics improve downward.
    pub fn higher_is_better(self) -> bool {
        self == Metric::CompletionRate
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Tardiness => "tardiness",
            Metric::Conversions => "conversions",
            Metric::Idle => "idle",
            Metric::CompletionRate => "completion_rate",
        }
    }
}

/// Metrics of a validated trace.
pub fn compute_metrics(trace: &Trace, episode: &EpisodeInstance, config: &ScenarioConfig) -> Result<EpisodeMetrics> {
    let report = validate_trace(config, episode, trace)?;
    if !report.passed() {
        return Err(Error::Validation(format!("trace fails validation: {report}")));
    }
    let horizon = trace.header.horizon_ticks;
    let lots = lots_from_trace(config, episode, trace);
    let mut tardiness = 0u64;
    let mut delayed = 0usize;
    for lot in lots.iter().filter(|l| l.due <= horizon) {
        let c = if lot.location == LotLocation::Finished {
            lot.final_completion().unwrap_or(horizon)
        } else {
            horizon
        };
        tardiness += u64::from(c.saturating_sub(lot.due));
        if lot.is_delayed() {
            delayed += 1;
        }
    }
    let total = objective_population(config, episode);
    let mut busy: Vec<Vec<(u32, u32)>> = vec![Vec::new(); config.n_machines()];
    for (l, m) in episode.initial_machines.iter().enumerate() {
        busy[l].push((0, m.busy_until));
    }
    for ev in &trace.events {
        busy[ev.machine.0].push((ev.start, ev.completion()));
    }
    for m in &trace.maintenance {
        busy[m.machine.0].push((m.start, m.end));
    }
    let mut idle = 0u64;
    for mut spans in busy {
        spans.sort_unstable();
        let mut covered = 0u64;
        let mut reach = 0u32;
        for (s, e) in spans {
            let (s, e) = (s.max(reach), e.min(horizon));
            if e > s {
                covered += u64::from(e - s);
                reach = e;
            }
        }
        idle += u64::from(horizon) - covered;
    }
    Ok(EpisodeMetrics {
        episode_seed: episode.seed,
        tardiness,
        n_conversions: trace.events.iter().filter(|e| e.conversion_ticks > 0).count(),
        cumulative_idle: idle,
        completion_rate: crate::factory::completion_rate(delayed, total),
        delayed,
        total,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, std, n }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std / (self.n as f64).sqrt()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub aggregate: BTreeMap<Metric, Summary>,
}

impl MetricsReport {
    pub fn new(episodes: Vec<EpisodeMetrics>) -> MetricsReport {
        let aggregate = Metric::ALL
            .into_iter()
            .map(|m| (m, Summary::of(&episodes.iter().map(|e| m.value(e)).collect::<Vec<_>>())))
            .collect();
        MetricsReport { episodes, aggregate }
    }

    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.episodes.iter().map(|e| metric.value(e)).collect()
    }

    /// Comma-separated per-episode records behind a commented header.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            writeln!(out, "# {line}").expect("string write");
        }
        out.push_str("episode_seed,tardiness,n_conversions,cumulative_idle,completion_rate,delayed,total\n");
        for e in &self.episodes {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.episode_seed, e.tardiness, e.n_conversions, e.cumulative_idle, e.completion_rate, e.delayed, e.total
            )
            .expect("string write");
        }
        out
    }
}

/// Percentage improvement of `value` over `base`; positive is better for every metric.
/// `None` when the baseline value is zero.
pub fn improvement(metric: Metric, base: f64, value: f64) -> Option<f64> {
    if base == 0.0 {
        return None;
    }
    let change = (value - base) / base.abs() * 100.0;
    Some(if metric.higher_is_better() { change } else { -change } + 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub tier: DemandTier,
    pub metric: Metric,
    /// Paired per-episode improvement in percent.
    pub improvement: Summary,
    /// Raw metric of the variant.
    pub raw: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenario: String,
    pub baseline: Variant,
    pub episodes: usize,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, variant: Variant, tier: DemandTier, metric: Metric) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.tier == tier && r.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ComparisonTable> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "# scenario={} baseline={} episodes={} seed={}",
            self.scenario, self.baseline, self.episodes, self.seed
        )
        .expect("string write");
        out.push_str("# improvement in percent over the baseline; positive is better for every metric\n");
        writeln!(
            out,
            "{:<10} {:<7} {:<16} {:>12} {:>10} {:>12} {:>10}",
            "variant", "tier", "metric", "improve_mean", "improve_sd", "raw_mean", "raw_sd"
        )
        .expect("string write");
        for r in &self.rows {
            writeln!(
                out,
                "{:<10} {:<7} {:<16} {:>12.2} {:>10.2} {:>12.4} {:>10.4}",
                r.variant.name(),
                r.tier.to_string(),
                r.metric.name(),
                r.improvement.mean,
                r.improvement.std,
                r.raw.mean,
                r.raw.std
            )
            .expect("string write");
        }
        out
    }
}

/// Paired comparison of reports on the same episodes against `baseline`.
pub fn compare(
    scenario: &str,
    baseline: Variant,
    seed: u64,
    reports: &BTreeMap<(Variant, DemandTier), MetricsReport>,
    order: &[Variant],
) -> Result<ComparisonTable> {
    let mut rows = Vec::new();
    let mut episodes = 0;
    let tiers: Vec<DemandTier> = {
        let mut t: Vec<_> = reports.keys().map(|k| k.1).collect();
        t.sort();
        t.dedup();
        t
    };
    for &tier in &tiers {
        let base = reports
            .get(&(baseline, tier))
            .ok_or_else(|| Error::MissingCheckpoint(format!("no results for baseline {baseline} at {tier}")))?;
        episodes = base.episodes.len();
        for &variant in order {
            let Some(rep) = reports.get(&(variant, tier)) else {
                continue;
            };
            if rep.episodes.len() != base.episodes.len() {
                return Err(Error::Contract("reports are not paired by episode".into()));
            }
            for metric in Metric::ALL {
                let paired: Vec<f64> = base
                    .episodes
                    .iter()
                    .zip(&rep.episodes)
                    .filter_map(|(b, v)| improvement(metric, metric.value(b), metric.value(v)))
                    .collect();
                rows.push(ComparisonRow {
                    variant,
                    tier,
                    metric,
                    improvement: Summary::of(&paired),
                    raw: rep.aggregate[&metric],
                });
            }
        }
    }
    Ok(ComparisonTable {
        scenario: scenario.to_string(),
        baseline,
        episodes,
        seed,
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided exact binomial p-value of at least `wins` successes in `wins + losses`.
    pub p_value: f64,
}

pub fn sign_test(differences: &[f64]) -> SignTest {
    let wins = differences.iter().filter(|d| **d > 0.0).count();
    let losses = differences.iter().filter(|d| **d < 0.0).count();
    let ties = differences.len() - wins - losses;
    let n = wins + losses;
    let p_value = if n == 0 {
        1.0
    } else {
        (wins..=n).map(|k| binomial(n, k)).sum::<f64>() / 2f64.powi(n as i32)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Paired per-episode differences `variant - baseline`, signed so positive is better.
pub fn paired_differences(metric: Metric, baseline: &MetricsReport, variant: &MetricsReport) -> Vec<f64> {
    baseline
        .episodes
        .iter()
        .zip(&variant.episodes)
        .map(|(b, v)| {
            let d = metric.value(v) - metric.value(b);
            if metric.higher_is_better() {
                d
            } else {
                -d
            }
        })
        .collect()
}

pub const HISTOGRAM_BINS: usize = 10;

/// Completion-rate counts over ten equal bins of [0, 1]; 1.0 falls in the last bin.
pub fn completion_histogram(report: &MetricsReport) -> Vec<usize> {
    let mut bins = vec![0; HISTOGRAM_BINS];
    for e in &report.episodes {
        let k = ((e.completion_rate * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[k] += 1;
    }
    bins
}

/// Evaluation episode `index`: every variant sees the same instance for the same index.
pub fn evaluation_episode(config: &ScenarioConfig, tier: DemandTier, seed: u64, index: u64) -> EpisodeInstance {
    let base = derive_seed(derive_seed(seed, streams::EVAL), tier as u64);
    sample_episode(config, tier, derive_seed(base, index))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub traces: Vec<Trace>,
    pub guard_overrides: Vec<usize>,
    pub goal_logs: Vec<Vec<GoalEmission>>,
}

/// Run a checkpoint over `episodes` shared evaluation episodes.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    config: &ScenarioConfig,
    tier: DemandTier,
    episodes: u64,
    seed: u64,
    mode: ActMode,
    workers: usize,
) -> Result<Evaluation> {
    let one = |i: u64| -> Result<(EpisodeMetrics, Trace, usize, Vec<GoalEmission>)> {
        let e = evaluation_episode(config, tier, seed, i);
        let inf = infer_rolling(checkpoint, config, &e, mode, seed)?;
        let metrics = compute_metrics(&inf.run.trace, &e, config)?;
        let overrides = inf.guard_log.iter().filter(|g| g.overridden()).count();
        Ok((metrics, inf.run.trace, overrides, inf.goal_log))
    };
    let results: Vec<_> = run_indexed(episodes, workers, one)?;
    let mut metrics = Vec::new();
    let mut traces = Vec::new();
    let mut guard_overrides = Vec::new();
    let mut goal_logs = Vec::new();
    for (m, t, o, g) in results {
        metrics.push(m);
        traces.push(t);
        guard_overrides.push(o);
        goal_logs.push(g);
    }
    Ok(Evaluation {
        report: MetricsReport::new(metrics),
        traces,
        guard_overrides,
        goal_logs,
    })
}

fn run_indexed<T: Send>(n: u64, workers: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Validation(format!("worker pool: {e}")))?;
        return pool.install(|| (0..n).into_par_iter().map(&f).collect());
    }
    let _ = workers;
    (0..n).map(f).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub table: ComparisonTable,
    pub reports: BTreeMap<(Variant, DemandTier), MetricsReport>,
    pub histograms: BTreeMap<(Variant, DemandTier), Vec<usize>>,
    pub guard_overrides: BTreeMap<(Variant, DemandTier), usize>,
}

/// Evaluate every (variant, tier) checkpoint on the same episodes and compare with `baseline`.
#[allow(clippy::too_many_arguments)]
pub fn run_benchmark(
    config: &ScenarioConfig,
    tiers: &[DemandTier],
    variants: &[Variant],
    baseline: Variant,
    checkpoints: &BTreeMap<(Variant, DemandTier), Checkpoint>,
    episodes: u64,
    seed: u64,
    mode: ActMode,
    workers: usize,
) -> Result<Benchmark> {
    let mut reports = BTreeMap::new();
    let mut histograms = BTreeMap::new();
    let mut overrides = BTreeMap::new();
    let mut order: Vec<Variant> = vec![baseline];
    order.extend(variants.iter().copied().filter(|v| *v != baseline));
    for &tier in tiers {
        for &variant in &order {
            let ck = checkpoints
                .get(&(variant, tier))
                .ok_or_else(|| Error::MissingCheckpoint(format!("{variant} at {tier}")))?;
            let ev = evaluate_checkpoint(ck, config, tier, episodes, seed, mode, workers)?;
            histograms.insert((variant, tier), completion_histogram(&ev.report));
            overrides.insert((variant, tier), ev.guard_overrides.iter().sum());
            reports.insert((variant, tier), ev.report);
        }
    }
    let table = compare(&config.name, baseline, seed, &reports, &order)?;
    Ok(Benchmark {
        table,
        reports,
        histograms,
        guard_overrides: overrides,
    })
}

/// The five ablation variants against SRM.
pub fn run_ablation(
    config: &ScenarioConfig,
    tier: DemandTier,
    checkpoints: &BTreeMap<(Variant, DemandTier), Checkpoint>,
    episodes: u64,
    seed: u64,
    mode: ActMode,
    workers: usize,
) -> Result<Benchmark> {
    run_benchmark(
        config,
        &[tier],
        &Variant::ABLATION,
        Variant::Srm,
        checkpoints,
        episodes,
        seed,
        mode,
        workers,
    )
}
