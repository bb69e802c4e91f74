use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{Layout, ScenarioConfig};
use crate::error::{Error, Result};
use crate::ids::{OpId, ProductId};
use crate::rng::{stream_rng, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandTier {
    Low,
    Medium,
    High,
}

impl DemandTier {
    pub const ALL: [DemandTier; 3] = [DemandTier::Low, DemandTier::Medium, DemandTier::High];

    pub fn multiplier(self) -> f64 {
        match self {
            DemandTier::Low => 1.0,
            DemandTier::Medium => 3.0,
            DemandTier::High => 5.0,
        }
    }
}

impl fmt::Display for DemandTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DemandTier::Low => "low",
            DemandTier::Medium => "medium",
            DemandTier::High => "high",
        })
    }
}

impl FromStr for DemandTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(DemandTier::Low),
            "medium" => Ok(DemandTier::Medium),
            "high" => Ok(DemandTier::High),
            other => Err(Error::Parse(format!("unknown demand tier '{other}'"))),
        }
    }
}

/// One lot: either demand released into its first queue, or pre-positioned WIP.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotSpec {
    pub product: ProductId,
    /// Lot index `k`, unique per product.
    pub index: u32,
    pub units: u32,
    /// Due tick, always a shift boundary.
    pub due: u32,
    /// Tick the lot enters the queue of `stage`.
    pub release: u32,
    /// Route index the lot starts at.
    pub stage: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialMachine {
    pub product: ProductId,
    pub operation: OpId,
    /// Machine is occupied by work outside the episode until this tick.
    #[serde(default)]
    pub busy_until: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInstance {
    pub scenario: String,
    pub tier: DemandTier,
    pub seed: u64,
    pub horizon_shifts: u32,
    pub demand: Vec<LotSpec>,
    pub initial_wip: Vec<LotSpec>,
    pub initial_machines: Vec<InitialMachine>,
    pub breakdown_trace_seed: u64,
}

impl EpisodeInstance {
    pub fn lots(&self) -> impl Iterator<Item = &LotSpec> {
        self.initial_wip.iter().chain(self.demand.iter())
    }

    pub fn total_lots(&self) -> usize {
        self.demand.len() + self.initial_wip.len()
    }

    pub fn horizon_ticks(&self, config: &ScenarioConfig) -> u32 {
        self.horizon_shifts * config.shift_ticks
    }

    /// Cross-check against the scenario.
    pub fn validate(&self, config: &ScenarioConfig) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.horizon_shifts == 0 {
            return fail("episode horizon must be positive".into());
        }
        if self.initial_machines.len() != config.n_machines() {
            return fail(format!(
                "episode sets up {} machines, scenario has {}",
                self.initial_machines.len(),
                config.n_machines()
            ));
        }
        let layout = Layout::new(config);
        for (l, m) in self.initial_machines.iter().enumerate() {
            if m.product.0 >= config.n_products() {
                return fail(format!("machine m{l} initial setup names unknown product"));
            }
            if m.operation != config.machines[l].station {
                return fail(format!("machine m{l} initial operation differs from station"));
            }
            if layout.stage_of(m.product, m.operation).is_none() {
                return fail(format!(
                    "machine m{l} initial setup {} is not processable at {}",
                    m.product, m.operation
                ));
            }
        }
        let mut keys = BTreeSet::new();
        for (lot, is_wip) in self
            .initial_wip
            .iter()
            .map(|l| (l, true))
            .chain(self.demand.iter().map(|l| (l, false)))
        {
            if lot.product.0 >= config.n_products() {
                return fail(format!("lot {} names unknown product", lot.index));
            }
            if !keys.insert((lot.product, lot.index)) {
                return fail(format!("duplicate lot ({}, {})", lot.product, lot.index));
            }
            if lot.due == 0 || lot.due % config.shift_ticks != 0 {
                return fail(format!(
                    "lot ({}, {}) due {} is not on a shift boundary",
                    lot.product, lot.index, lot.due
                ));
            }
            if lot.units == 0 {
                return fail(format!("lot ({}, {}) has no units", lot.product, lot.index));
            }
            let route_len = config.route(lot.product).len();
            if lot.stage >= route_len || (!is_wip && lot.stage != 0) {
                return fail(format!("lot ({}, {}) has invalid stage", lot.product, lot.index));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<EpisodeInstance> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Draw one episode: demanded product set, Poisson lot counts per shift scaled by the
/// tier, unit counts, initial setups and WIP, and the breakdown seed.
pub fn sample_episode(config: &ScenarioConfig, tier: DemandTier, seed: u64) -> EpisodeInstance {
    let mut rng = stream_rng(seed, streams::EPISODE);
    let layout = Layout::new(config);
    let n_products = config.n_products();
    let s = config.shift_ticks;

    let mut active: Vec<bool> = (0..n_products)
        .map(|_| !rng.random_bool(config.demand.product_dropout))
        .collect();
    if !active.iter().any(|&a| a) {
        let keep = rng.random_range(0..n_products);
        active[keep] = true;
    }

    let initial_machines = config
        .machines
        .iter()
        .enumerate()
        .map(|(l, m)| {
            let candidates: Vec<ProductId> = layout.products_at[m.station.0]
                .iter()
                .copied()
                .filter(|&p| layout.compatible[l][p.0])
                .collect();
            let pool = if candidates.is_empty() {
                &layout.products_at[m.station.0]
            } else {
                &candidates
            };
            InitialMachine {
                product: pool[rng.random_range(0..pool.len())],
                operation: m.station,
                busy_until: 0,
            }
        })
        .collect();

    let mut next_index = vec![0u32; n_products];
    let units_for = |rng: &mut crate::rng::SimRng, p: usize| {
        let [lo, hi] = config.products[p].units;
        rng.random_range(lo..=hi)
    };

    let mut initial_wip = Vec::new();
    for p in 0..n_products {
        if !active[p] || !rng.random_bool(config.demand.initial_wip_prob) {
            continue;
        }
        let stage = rng.random_range(0..config.products[p].route.len());
        let units = units_for(&mut rng, p);
        initial_wip.push(LotSpec {
            product: ProductId(p),
            index: next_index[p],
            units,
            due: s,
            release: 0,
            stage,
        });
        next_index[p] += 1;
    }

    let mult = tier.multiplier();
    let mut demand = Vec::new();
    for n in 0..config.horizon_shifts {
        for p in 0..n_products {
            if !active[p] {
                continue;
            }
            let lambda = config.products[p].demand_rate * mult;
            let count = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u32
            } else {
                0
            };
            for _ in 0..count {
                let units = units_for(&mut rng, p);
                demand.push(LotSpec {
                    product: ProductId(p),
                    index: next_index[p],
                    units,
                    due: (n + 1) * s,
                    release: n.saturating_sub(config.release_lead_shifts) * s,
                    stage: 0,
                });
                next_index[p] += 1;
            }
        }
    }

    EpisodeInstance {
        scenario: config.name.clone(),
        tier,
        seed,
        horizon_shifts: config.horizon_shifts,
        demand,
        initial_wip,
        initial_machines,
        breakdown_trace_seed: rng.random(),
    }
}
