//! Static scenario description and its file format.
//!
//! A scenario is stored as TOML. Products carry their routes (operation sequence with
//! per-step unit processing time and compatible machines); machines belong to exactly one
//! operation station. See `docs/scenario-format.md` for the key-by-key schema.

mod episode;
mod generate;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ids::{MachineId, OpId, ProductId};

pub use episode::{sample_episode, DemandTier, EpisodeInstance, InitialMachine, LotSpec};
pub use generate::{generate_scenario, ScenarioShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationSpec {
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub name: String,
    /// Operation this machine serves.
    pub station: OpId,
    /// Mean ticks between breakdowns; 0 disables breakdowns.
    #[serde(default)]
    pub mtbf_ticks: f64,
    /// Inclusive repair duration range in ticks.
    #[serde(default = "default_repair")]
    pub repair_ticks: [u32; 2],
}

fn default_repair() -> [u32; 2] {
    [1, 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteStep {
    pub operation: OpId,
    /// Processing ticks per unit.
    pub unit_time: u32,
    /// Compatible machines for this step.
    pub machines: Vec<MachineId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub name: String,
    #[serde(default)]
    pub family: u32,
    /// Inclusive unit-count range for a lot.
    pub units: [u32; 2],
    /// Mean lots per shift at the low demand tier.
    pub demand_rate: f64,
    pub route: Vec<RouteStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionSpec {
    /// Extra ticks when the operation setup changes.
    pub operation_change: u32,
    /// `product_matrix[from][to]`: ticks to change the product setup; diagonal is zero.
    pub product_matrix: Vec<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceWindow {
    pub machine: MachineId,
    /// First tick of the window.
    pub start: u32,
    /// One past the last tick of the window.
    pub end: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    /// Per-episode probability that a product is dropped from the demanded set.
    #[serde(default)]
    pub product_dropout: f64,
    /// Per-product probability of one pre-positioned WIP lot at episode start.
    #[serde(default)]
    pub initial_wip_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Ticks (decision points) per shift.
    pub shift_ticks: u32,
    /// Number of shifts in the planning horizon.
    pub horizon_shifts: u32,
    /// Conversion ticks allowed per machine per shift.
    pub conversion_threshold: u32,
    /// Lots due at the end of shift `n` are released at the start of shift `n - lead`.
    #[serde(default = "default_lead")]
    pub release_lead_shifts: u32,
    pub demand: DemandModel,
    pub conversion: ConversionSpec,
    pub operations: Vec<OperationSpec>,
    pub machines: Vec<MachineSpec>,
    pub products: Vec<ProductSpec>,
    #[serde(default)]
    pub maintenance: Vec<MaintenanceWindow>,
}

fn default_lead() -> u32 {
    1
}

/// A (product, operation) machine setup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Setup {
    pub product: ProductId,
    pub operation: OpId,
}

impl ScenarioConfig {
    pub fn n_products(&self) -> usize {
        self.products.len()
    }

    pub fn n_operations(&self) -> usize {
        self.operations.len()
    }

    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn horizon_ticks(&self) -> u32 {
        self.shift_ticks * self.horizon_shifts
    }

    /// Total decision points `N * S`.
    pub fn decision_points(&self) -> u32 {
        self.horizon_ticks()
    }

    pub fn conversion_ticks(&self, from: Setup, to: Setup) -> u32 {
        if from == to {
            return 0;
        }
        let product = self.conversion.product_matrix[from.product.0][to.product.0];
        let operation = if from.operation == to.operation {
            0
        } else {
            self.conversion.operation_change
        };
        product + operation
    }

    pub fn route(&self, p: ProductId) -> &[RouteStep] {
        &self.products[p.0].route
    }

    /// Copy with a different horizon, used for short training windows.
    pub fn with_horizon(&self, shifts: u32) -> ScenarioConfig {
        let mut c = self.clone();
        c.horizon_shifts = shifts;
        c
    }

    /// Stable hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<ScenarioConfig> {
        let config: ScenarioConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Check every structural invariant. Returns the first violation found.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        let n_ops = self.n_operations();
        let n_machines = self.n_machines();
        let n_products = self.n_products();
        if n_ops == 0 || n_machines == 0 || n_products == 0 {
            return fail("scenario needs at least one product, operation and machine".into());
        }
        if self.shift_ticks == 0 || self.horizon_shifts == 0 {
            return fail("shift_ticks and horizon_shifts must be positive".into());
        }
        if self.conversion_threshold >= self.shift_ticks {
            return fail(format!(
                "conversion threshold {} must be below the shift duration {}",
                self.conversion_threshold, self.shift_ticks
            ));
        }
        let d = &self.demand;
        if !(0.0..1.0).contains(&d.product_dropout) || !(0.0..=1.0).contains(&d.initial_wip_prob) {
            return fail("demand probabilities out of range".into());
        }
        for (l, m) in self.machines.iter().enumerate() {
            if m.station.0 >= n_ops {
                return fail(format!("machine m{l} has unknown station {}", m.station));
            }
            if !m.mtbf_ticks.is_finite() || m.mtbf_ticks < 0.0 {
                return fail(format!("machine m{l} has invalid mtbf {}", m.mtbf_ticks));
            }
            if m.repair_ticks[0] == 0 || m.repair_ticks[0] > m.repair_ticks[1] {
                return fail(format!("machine m{l} has invalid repair range"));
            }
        }
        let mut used_ops = vec![false; n_ops];
        let mut used_machines = vec![false; n_machines];
        for (p, prod) in self.products.iter().enumerate() {
            if prod.route.is_empty() {
                return fail(format!("product p{p} has an empty operation sequence"));
            }
            if prod.units[0] == 0 || prod.units[0] > prod.units[1] {
                return fail(format!("product p{p} has an invalid unit range"));
            }
            if !prod.demand_rate.is_finite() || prod.demand_rate < 0.0 {
                return fail(format!("product p{p} has an invalid demand rate"));
            }
            let mut seen = BTreeSet::new();
            for (j, step) in prod.route.iter().enumerate() {
                if step.operation.0 >= n_ops {
                    return fail(format!("product p{p} step {j} names unknown operation"));
                }
                if !seen.insert(step.operation) {
                    return fail(format!(
                        "product p{p} visits {} twice; encode re-entry as a distinct operation",
                        step.operation
                    ));
                }
                if step.unit_time == 0 {
                    return fail(format!("product p{p} step {j} has zero unit time"));
                }
                if step.machines.is_empty() {
                    return fail(format!(
                        "empty compatible machine set for product p{p} step {j}"
                    ));
                }
                let mut uniq = BTreeSet::new();
                for &l in &step.machines {
                    if l.0 >= n_machines {
                        return fail(format!(
                            "product p{p} step {j} lists unknown machine {l}"
                        ));
                    }
                    if self.machines[l.0].station != step.operation {
                        return fail(format!(
                            "machine {l} in product p{p} step {j} belongs to station {}, not {}",
                            self.machines[l.0].station, step.operation
                        ));
                    }
                    if !uniq.insert(l) {
                        return fail(format!("product p{p} step {j} lists {l} twice"));
                    }
                    used_machines[l.0] = true;
                }
                used_ops[step.operation.0] = true;
            }
        }
        if let Some(o) = used_ops.iter().position(|u| !u) {
            return fail(format!("operation o{o} is not used by any product"));
        }
        if let Some(l) = used_machines.iter().position(|u| !u) {
            return fail(format!("machine m{l} is not compatible with any step"));
        }
        let m = &self.conversion.product_matrix;
        if m.len() != n_products || m.iter().any(|row| row.len() != n_products) {
            return fail("conversion matrix must be products x products".into());
        }
        if (0..n_products).any(|p| m[p][p] != 0) {
            return fail("conversion time between identical setups must be zero".into());
        }
        for w in &self.maintenance {
            if w.machine.0 >= n_machines || w.start >= w.end {
                return fail(format!(
                    "invalid maintenance window {}..{} on {}",
                    w.start, w.end, w.machine
                ));
            }
        }
        if !Layout::new(self).operation_graph_is_acyclic(self) {
            return fail("operation precedence graph contains a cycle".into());
        }
        Ok(())
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_toml(&text)
}

pub fn save_scenario(config: &ScenarioConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, config.to_toml()?)?;
    Ok(())
}

/// Derived lookup tables for a validated scenario.
#[derive(Clone, Debug)]
pub struct Layout {
    /// Products whose route includes each operation, ascending.
    pub products_at: Vec<Vec<ProductId>>,
    /// Machines of each station, ascending.
    pub stations: Vec<Vec<MachineId>>,
    /// `stage[p][o]`: route index of operation `o` for product `p`.
    pub stage: Vec<Vec<Option<usize>>>,
    /// `compatible[l][p]` for the step of `p` at the station of `l`.
    pub compatible: Vec<Vec<bool>>,
}

impl Layout {
    pub fn new(config: &ScenarioConfig) -> Layout {
        let n_ops = config.n_operations();
        let n_products = config.n_products();
        let mut products_at = vec![Vec::new(); n_ops];
        let mut stage = vec![vec![None; n_ops]; n_products];
        let mut compatible = vec![vec![false; n_products]; config.n_machines()];
        for (p, prod) in config.products.iter().enumerate() {
            for (j, step) in prod.route.iter().enumerate() {
                if step.operation.0 >= n_ops {
                    continue;
                }
                products_at[step.operation.0].push(ProductId(p));
                stage[p][step.operation.0] = Some(j);
                for l in &step.machines {
                    if let Some(row) = compatible.get_mut(l.0) {
                        row[p] = true;
                    }
                }
            }
        }
        let mut stations = vec![Vec::new(); n_ops];
        for (l, m) in config.machines.iter().enumerate() {
            if m.station.0 < n_ops {
                stations[m.station.0].push(MachineId(l));
            }
        }
        Layout {
            products_at,
            stations,
            stage,
            compatible,
        }
    }

    pub fn stage_of(&self, p: ProductId, o: OpId) -> Option<usize> {
        self.stage[p.0][o.0]
    }

    pub fn is_compatible(&self, l: MachineId, p: ProductId) -> bool {
        self.compatible[l.0][p.0]
    }

    /// Distinct precedence arcs induced by consecutive route steps.
    pub fn operation_edges(config: &ScenarioConfig) -> BTreeSet<(OpId, OpId)> {
        config
            .products
            .iter()
            .flat_map(|p| p.route.windows(2).map(|w| (w[0].operation, w[1].operation)))
            .collect()
    }

    /// Mean out-degree of the operation precedence DAG.
    pub fn mean_out_degree(config: &ScenarioConfig) -> f64 {
        Self::operation_edges(config).len() as f64 / config.n_operations() as f64
    }

    fn operation_graph_is_acyclic(&self, config: &ScenarioConfig) -> bool {
        let n = config.n_operations();
        let mut indeg = vec![0usize; n];
        let mut adj = vec![Vec::new(); n];
        for (a, b) in Self::operation_edges(config) {
            adj[a.0].push(b.0);
            indeg[b.0] += 1;
        }
        let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for &w in &adj[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    stack.push(w);
                }
            }
        }
        seen == n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_by_two() -> ScenarioConfig {
        ScenarioConfig {
            name: "unit".into(),
            shift_ticks: 12,
            horizon_shifts: 2,
            conversion_threshold: 5,
            release_lead_shifts: 1,
            demand: DemandModel {
                product_dropout: 0.0,
                initial_wip_prob: 0.0,
            },
            conversion: ConversionSpec {
                operation_change: 2,
                product_matrix: vec![vec![0, 3], vec![4, 0]],
            },
            operations: vec![
                OperationSpec { name: "a".into() },
                OperationSpec { name: "b".into() },
            ],
            machines: vec![
                MachineSpec {
                    name: "m0".into(),
                    station: OpId(0),
                    mtbf_ticks: 0.0,
                    repair_ticks: [1, 1],
                },
                MachineSpec {
                    name: "m1".into(),
                    station: OpId(1),
                    mtbf_ticks: 0.0,
                    repair_ticks: [1, 1],
                },
            ],
            products: (0..2)
                .map(|p| ProductSpec {
                    name: format!("p{p}"),
                    family: p,
                    units: [2, 2],
                    demand_rate: 1.0,
                    route: vec![
                        RouteStep {
                            operation: OpId(0),
                            unit_time: 1,
                            machines: vec![MachineId(0)],
                        },
                        RouteStep {
                            operation: OpId(1),
                            unit_time: 2,
                            machines: vec![MachineId(1)],
                        },
                    ],
                })
                .collect(),
            maintenance: vec![],
        }
    }

    #[test]
    fn valid_config_passes() {
        two_by_two().validate().unwrap();
    }

    #[test]
    fn empty_machine_set_is_named() {
        let mut c = two_by_two();
        c.products[1].route[0].machines.clear();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("p1 step 0"), "{err}");
    }

    #[test]
    fn threshold_must_fit_in_shift() {
        let mut c = two_by_two();
        c.conversion_threshold = 12;
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn cycle_is_rejected() {
        let mut c = two_by_two();
        c.products[1].route.reverse();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("cycle"), "{err}");
    }

    #[test]
    fn repeated_operation_is_rejected() {
        let mut c = two_by_two();
        let step = c.products[0].route[0].clone();
        c.products[0].route.push(step);
        assert!(c.validate().is_err());
    }

    #[test]
    fn conversion_identity_is_zero() {
        let c = two_by_two();
        let s = Setup {
            product: ProductId(1),
            operation: OpId(0),
        };
        assert_eq!(c.conversion_ticks(s, s), 0);
        let t = Setup {
            product: ProductId(0),
            operation: OpId(1),
        };
        assert_eq!(c.conversion_ticks(s, t), 4 + 2);
    }

    #[test]
    fn toml_round_trip() {
        let c = two_by_two();
        let text = c.to_toml().unwrap();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.fingerprint(), back.fingerprint());
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        assert!(matches!(
            ScenarioConfig::from_toml("name = ["),
            Err(Error::Parse(_))
        ));
    }
}

#[cfg(test)]
pub(crate) use tests::two_by_two;
