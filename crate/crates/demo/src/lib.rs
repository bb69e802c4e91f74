//! Browser demo: a Gantt chart of a rule-driven episode, an urgency/guard explorer and
//! demand histograms per tier. Every export returns JSON for `www/index.html`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use fabsched_core::baselines::{DispatchRule, RuleController};
use fabsched_core::eval::{compute_metrics, EpisodeMetrics};
use fabsched_core::factory::{AssignmentEvent, MachineState, MaintenanceInterval};
use fabsched_core::guard::{decide_conversion, score_urgency, CapacityView, FollowerIntent, GuardedDecision};
use fabsched_core::ids::{MachineId, OpId, ProductId};
use fabsched_core::rng::derive_seed;
use fabsched_core::runner::run_episode;
use fabsched_core::scenario::{generate_scenario, sample_episode, DemandTier, ScenarioShape};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
pub struct Gantt {
    pub scenario: String,
    pub machines: Vec<String>,
    pub stations: Vec<usize>,
    pub products: Vec<String>,
    pub horizon: u32,
    pub shift_ticks: u32,
    pub events: Vec<AssignmentEvent>,
    pub maintenance: Vec<MaintenanceInterval>,
    pub metrics: EpisodeMetrics,
}

fn parse_rule(rule: &str) -> Result<DispatchRule, String> {
    match rule {
        "spt" => Ok(DispatchRule::Spt),
        "edd" => Ok(DispatchRule::Edd),
        "fifo" => Ok(DispatchRule::Fifo),
        "longest_queue" => Ok(DispatchRule::LongestQueue),
        other => Err(format!("unknown rule '{other}'")),
    }
}

pub fn gantt(preset: &str, tier: &str, seed: u32, rule: &str) -> Result<Gantt, String> {
    let shape = ScenarioShape::preset(preset).ok_or_else(|| format!("unknown preset '{preset}'"))?;
    let config = generate_scenario(&shape, 1).map_err(|e| e.to_string())?;
    let tier: DemandTier = tier.parse().map_err(|e: fabsched_core::error::Error| e.to_string())?;
    let episode = sample_episode(&config, tier, u64::from(seed));
    let run = run_episode(&config, &episode, &mut RuleController(parse_rule(rule)?)).map_err(|e| e.to_string())?;
    let metrics = compute_metrics(&run.trace, &episode, &config).map_err(|e| e.to_string())?;
    Ok(Gantt {
        scenario: config.name.clone(),
        machines: config.machines.iter().map(|m| m.name.clone()).collect(),
        stations: config.machines.iter().map(|m| m.station.0).collect(),
        products: config.products.iter().map(|p| p.name.clone()).collect(),
        horizon: run.trace.header.horizon_ticks,
        shift_ticks: config.shift_ticks,
        events: run.trace.events,
        maintenance: run.trace.maintenance,
        metrics,
    })
}

/// Simulate one episode under a dispatching rule and return its schedule.
#[wasm_bindgen]
pub fn simulate(preset: &str, tier: &str, seed: u32, rule: &str) -> Result<String, JsValue> {
    let g = gantt(preset, tier, seed, rule).map_err(js_err)?;
    serde_json::to_string(&g).map_err(js_err)
}

/// One station seen by a single deciding machine.
#[derive(Deserialize)]
pub struct GuardQuery {
    /// RC per product, ticks.
    pub required: Vec<u64>,
    /// ERC per product contributed by the other machines.
    pub others_remaining: Vec<u64>,
    /// Product setups of the other machines.
    pub other_setups: Vec<usize>,
    pub queued: Vec<usize>,
    /// Setup of the deciding machine and its own remaining time.
    pub current: usize,
    pub own_remaining: u64,
    pub convert: bool,
    pub candidate: usize,
}

#[derive(Serialize)]
pub struct GuardAnswer {
    pub big_number: u64,
    pub expected_remaining: Vec<u64>,
    pub scores: Vec<u64>,
    pub argmax: Option<usize>,
    pub decision: GuardedDecision,
}

pub fn explore_guard(q: &GuardQuery) -> Result<GuardAnswer, String> {
    let n = q.required.len();
    if n == 0 || q.others_remaining.len() != n || q.queued.len() != n {
        return Err("required, others_remaining and queued need one entry per product".into());
    }
    if q.current >= n || q.candidate >= n || q.other_setups.iter().any(|&p| p >= n) {
        return Err("product index out of range".into());
    }
    let mut expected_remaining = q.others_remaining.clone();
    expected_remaining[q.current] += q.own_remaining;
    let big_number = 1 + q.required.iter().sum::<u64>();
    let view = CapacityView {
        operation: OpId(0),
        products: (0..n).map(ProductId).collect(),
        queued: q.queued.clone(),
        required: q.required.clone(),
        expected_remaining: expected_remaining.clone(),
        machine_share: vec![(MachineId(0), q.current, q.own_remaining)],
        big_number,
    };
    let mut setups: Vec<ProductId> = q.other_setups.iter().map(|&p| ProductId(p)).collect();
    setups.push(ProductId(q.current));
    let urgency = score_urgency(&view, &setups);
    let machine = MachineState {
        machine_id: MachineId(0),
        station: OpId(0),
        product_setup: ProductId(q.current),
        operation_setup: OpId(0),
        busy: false,
        busy_until: 0,
        shift_conversion_used: 0,
        in_unscheduled_maintenance: false,
        in_scheduled_maintenance: false,
        current_lot: None,
        pending_repair: None,
    };
    let intent = FollowerIntent {
        convert: q.convert,
        candidate: ProductId(q.candidate),
    };
    let decision = decide_conversion(intent, &machine, &view, &urgency, &vec![true; n]).map_err(|e| e.to_string())?;
    Ok(GuardAnswer {
        big_number,
        expected_remaining,
        argmax: urgency.argmax().map(|p| p.0),
        scores: urgency.scores,
        decision,
    })
}

/// Urgency scores and the guarded decision for a JSON [`GuardQuery`].
#[wasm_bindgen]
pub fn guard(query: &str) -> Result<String, JsValue> {
    let q: GuardQuery = serde_json::from_str(query).map_err(js_err)?;
    serde_json::to_string(&explore_guard(&q).map_err(js_err)?).map_err(js_err)
}

#[derive(Serialize)]
pub struct TierDemand {
    pub tier: String,
    /// Lots per episode, counted into `edges`.
    pub counts: Vec<usize>,
    pub mean_lots: f64,
}

#[derive(Serialize)]
pub struct DemandProfile {
    pub edges: Vec<usize>,
    pub tiers: Vec<TierDemand>,
}

pub fn demand_profile(preset: &str, episodes: u32, seed: u32) -> Result<DemandProfile, String> {
    let shape = ScenarioShape::preset(preset).ok_or_else(|| format!("unknown preset '{preset}'"))?;
    let config = generate_scenario(&shape, 1).map_err(|e| e.to_string())?;
    let tiers = [DemandTier::Low, DemandTier::Medium, DemandTier::High];
    let totals: Vec<Vec<usize>> = tiers
        .iter()
        .enumerate()
        .map(|(k, &tier)| {
            (0..episodes)
                .map(|i| sample_episode(&config, tier, derive_seed(derive_seed(u64::from(seed), k as u64), u64::from(i))).demand.len())
                .collect()
        })
        .collect();
    let top = totals.iter().flatten().copied().max().unwrap_or(0) + 1;
    let width = top.div_ceil(12).max(1);
    let edges: Vec<usize> = (0..=12).map(|k| k * width).collect();
    let tiers = tiers
        .iter()
        .zip(&totals)
        .map(|(tier, lots)| {
            let mut counts = vec![0; 12];
            for &n in lots {
                counts[(n / width).min(11)] += 1;
            }
            TierDemand {
                tier: tier.to_string(),
                counts,
                mean_lots: lots.iter().sum::<usize>() as f64 / lots.len().max(1) as f64,
            }
        })
        .collect();
    Ok(DemandProfile { edges, tiers })
}

/// Histogram of demanded lots per episode for each tier.
#[wasm_bindgen]
pub fn demand(preset: &str, episodes: u32, seed: u32) -> Result<String, JsValue> {
    serde_json::to_string(&demand_profile(preset, episodes, seed).map_err(js_err)?).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gantt_is_valid_and_repeatable() {
        let a = gantt("desk", "high", 4, "edd").unwrap();
        let b = gantt("desk", "high", 4, "edd").unwrap();
        assert!(!a.events.is_empty());
        assert_eq!(a.events, b.events);
        assert!(a.metrics.completion_rate <= 1.0);
        assert!(gantt("desk", "high", 4, "random").is_err());
    }

    #[test]
    fn guard_explorer_adopts_uncovered_product() {
        let q = GuardQuery {
            required: vec![0, 100],
            others_remaining: vec![40, 0],
            other_setups: vec![0],
            queued: vec![0, 5],
            current: 0,
            own_remaining: 40,
            convert: true,
            candidate: 0,
        };
        let a = explore_guard(&q).unwrap();
        assert_eq!(a.scores, vec![0, 100 + a.big_number]);
        assert_eq!(a.decision.next_product, ProductId(1));
    }

    #[test]
    fn demand_grows_with_tier() {
        let p = demand_profile("desk", 40, 1).unwrap();
        assert_eq!(p.edges.len(), 13);
        assert!(p.tiers[0].mean_lots < p.tiers[2].mean_lots);
        assert!(p.tiers.iter().all(|t| t.counts.iter().sum::<usize>() == 40));
    }
}
