use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    ConversionSpec, DemandModel, Layout, MachineSpec, MaintenanceWindow, OperationSpec,
    ProductSpec, RouteStep, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::ids::{MachineId, OpId};
use crate::rng::{stream_rng, streams, SimRng};

/// Size and texture parameters for synthetic scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioShape {
    pub name: String,
    pub products: usize,
    pub operations: usize,
    pub machines: usize,
    /// Target mean out-degree of the operation DAG.
    pub out_degree: f64,
    pub shifts: u32,
    pub shift_ticks: u32,
    pub conversion_threshold: u32,
    pub families: u32,
    /// Inclusive range for the lower end of a product's unit range.
    pub units: [u32; 2],
    pub unit_time: [u32; 2],
    pub conversion_same_family: [u32; 2],
    pub conversion_cross_family: [u32; 2],
    pub operation_change: u32,
    /// Utilisation of the most loaded station at the low demand tier.
    pub low_utilization: f64,
    /// Probability that a station machine is compatible with a given step.
    pub compat_prob: f64,
    pub mtbf_ticks: f64,
    pub repair_ticks: [u32; 2],
    /// Per machine per shift probability of a scheduled maintenance window.
    pub maintenance_prob: f64,
    pub maintenance_ticks: [u32; 2],
    pub product_dropout: f64,
    pub initial_wip_prob: f64,
    pub release_lead_shifts: u32,
    /// Cap on route length; 0 means no cap.
    pub max_route_len: usize,
}

impl ScenarioShape {
    pub fn new(products: usize, operations: usize, machines: usize) -> ScenarioShape {
        ScenarioShape {
            name: format!("gen-{products}p{operations}o{machines}m"),
            products,
            operations,
            machines,
            out_degree: 1.0,
            shifts: 4,
            shift_ticks: 12,
            conversion_threshold: 5,
            families: 2,
            units: [2, 3],
            unit_time: [1, 2],
            conversion_same_family: [2, 3],
            conversion_cross_family: [3, 4],
            operation_change: 2,
            low_utilization: 0.22,
            compat_prob: 0.8,
            mtbf_ticks: 240.0,
            repair_ticks: [2, 5],
            maintenance_prob: 0.1,
            maintenance_ticks: [2, 4],
            product_dropout: 0.2,
            initial_wip_prob: 0.3,
            release_lead_shifts: 1,
            max_route_len: 0,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn out_degree(mut self, d: f64) -> Self {
        self.out_degree = d;
        self
    }

    pub fn shifts(mut self, n: u32) -> Self {
        self.shifts = n;
        self
    }

    /// 20 products, 21 operations, 115 machines, 42 shifts.
    pub fn long_term() -> Self {
        let mut s = Self::new(20, 21, 115)
            .named("long-term")
            .out_degree(1.37)
            .shifts(42);
        s.max_route_len = 8;
        s
    }

    /// 35 products, 26 operations, 159 machines, 14 shifts.
    pub fn short_term() -> Self {
        let mut s = Self::new(35, 26, 159)
            .named("short-term")
            .out_degree(1.33)
            .shifts(14);
        s.max_route_len = 8;
        s
    }

    /// Two products, two operations, three machines, four shifts.
    pub fn tiny() -> Self {
        let mut s = Self::new(2, 2, 3).named("tiny").out_degree(0.5);
        s.compat_prob = 1.0;
        s.product_dropout = 0.0;
        s
    }

    /// Five products, four operations, eight machines, four shifts.
    pub fn desk() -> Self {
        Self::new(5, 4, 8).named("desk").out_degree(1.0)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "long-term" => Some(Self::long_term()),
            "short-term" => Some(Self::short_term()),
            "tiny" => Some(Self::tiny()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }
}

const DEGREE_TOLERANCE: f64 = 0.15;

/// Synthesize a scenario whose counts match `shape` exactly. Deterministic per seed.
pub fn generate_scenario(shape: &ScenarioShape, seed: u64) -> Result<ScenarioConfig> {
    let infeasible = |msg: String| Err(Error::InfeasibleShape(msg));
    let (n_p, n_o, n_m) = (shape.products, shape.operations, shape.machines);
    if n_p == 0 || n_o == 0 || n_m == 0 {
        return infeasible("counts must be positive".into());
    }
    if n_m < n_o {
        return infeasible(format!(
            "{n_o} operations each need a machine but only {n_m} machines exist"
        ));
    }
    if shape.conversion_threshold >= shape.shift_ticks {
        return infeasible("conversion threshold must be below the shift duration".into());
    }
    let max_len = if shape.max_route_len == 0 {
        n_o
    } else {
        shape.max_route_len.min(n_o)
    };
    let max_edges = (n_o * (n_o - 1) / 2).min(n_p * (max_len - 1));
    let target_edges = ((shape.out_degree * n_o as f64).round() as usize).min(max_edges);
    if !shape.out_degree.is_finite()
        || shape.out_degree < 0.0
        || (max_edges as f64 / n_o as f64) < shape.out_degree - DEGREE_TOLERANCE
    {
        return infeasible(format!(
            "out-degree {} unreachable with {n_p} products over {n_o} operations",
            shape.out_degree
        ));
    }
    if n_p * max_len < n_o {
        return infeasible("not enough route slots to use every operation".into());
    }

    let mut rng = stream_rng(seed, streams::GENERATE);
    let routes = build_routes(shape, n_p, n_o, max_len, target_edges, &mut rng)?;

    let mut products: Vec<ProductSpec> = routes
        .iter()
        .enumerate()
        .map(|(p, ops)| {
            let lo = rng.random_range(shape.units[0]..=shape.units[1]);
            let hi = lo + rng.random_range(0..=1);
            ProductSpec {
                name: format!("p{p}"),
                family: rng.random_range(0..shape.families.max(1)),
                units: [lo, hi],
                demand_rate: rng.random_range(0.5..1.5),
                route: ops
                    .iter()
                    .map(|&o| RouteStep {
                        operation: OpId(o),
                        unit_time: rng.random_range(shape.unit_time[0]..=shape.unit_time[1]),
                        machines: Vec::new(),
                    })
                    .collect(),
            }
        })
        .collect();

    // Station sizes follow load: one machine each, then greedily to the busiest.
    let mut load = vec![0.0f64; n_o];
    for p in &products {
        let mean_units = (p.units[0] + p.units[1]) as f64 / 2.0;
        for step in &p.route {
            load[step.operation.0] += p.demand_rate * step.unit_time as f64 * mean_units;
        }
    }
    let mut station_size = vec![1usize; n_o];
    for _ in n_o..n_m {
        let o = (0..n_o)
            .max_by(|&a, &b| {
                (load[a] / station_size[a] as f64)
                    .total_cmp(&(load[b] / station_size[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("at least one operation");
        station_size[o] += 1;
    }
    let mut machines = Vec::with_capacity(n_m);
    let mut stations: Vec<Vec<MachineId>> = vec![Vec::new(); n_o];
    for (o, &size) in station_size.iter().enumerate() {
        for _ in 0..size {
            let l = machines.len();
            stations[o].push(MachineId(l));
            let mtbf = if shape.mtbf_ticks > 0.0 {
                (shape.mtbf_ticks * rng.random_range(0.8..1.2)).round()
            } else {
                0.0
            };
            machines.push(MachineSpec {
                name: format!("m{l}"),
                station: OpId(o),
                mtbf_ticks: mtbf,
                repair_ticks: shape.repair_ticks,
            });
        }
    }

    // Compatibility subsets of each station, every machine covering at least one step.
    for p in products.iter_mut() {
        for step in p.route.iter_mut() {
            let station = &stations[step.operation.0];
            let mut chosen: Vec<MachineId> = station
                .iter()
                .copied()
                .filter(|_| rng.random_bool(shape.compat_prob))
                .collect();
            if chosen.is_empty() {
                chosen.push(station[rng.random_range(0..station.len())]);
            }
            step.machines = chosen;
        }
    }
    for (o, station) in stations.iter().enumerate() {
        for &l in station {
            let covered = products
                .iter()
                .any(|p| p.route.iter().any(|s| s.machines.contains(&l)));
            if covered {
                continue;
            }
            let users: Vec<(usize, usize)> = products
                .iter()
                .enumerate()
                .flat_map(|(pi, p)| {
                    p.route
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| s.operation.0 == o)
                        .map(move |(j, _)| (pi, j))
                })
                .collect();
            let (pi, j) = users[rng.random_range(0..users.len())];
            let step = &mut products[pi].route[j];
            step.machines.push(l);
            step.machines.sort();
        }
    }

    // Scale demand so the busiest station runs at the requested low-tier utilisation.
    let mut util = vec![0.0f64; n_o];
    for p in &products {
        let mean_units = (p.units[0] + p.units[1]) as f64 / 2.0;
        for step in &p.route {
            util[step.operation.0] += p.demand_rate * step.unit_time as f64 * mean_units;
        }
    }
    let peak = (0..n_o)
        .map(|o| util[o] / (station_size[o] as f64 * shape.shift_ticks as f64))
        .fold(0.0f64, f64::max);
    let scale = if peak > 0.0 { shape.low_utilization / peak } else { 0.0 };
    for p in products.iter_mut() {
        p.demand_rate = (p.demand_rate * scale * 1e4).round() / 1e4;
    }

    let product_matrix = (0..n_p)
        .map(|a| {
            (0..n_p)
                .map(|b| {
                    if a == b {
                        0
                    } else {
                        let r = if products[a].family == products[b].family {
                            shape.conversion_same_family
                        } else {
                            shape.conversion_cross_family
                        };
                        rng.random_range(r[0]..=r[1])
                    }
                })
                .collect()
        })
        .collect();

    let mut maintenance = Vec::new();
    for l in 0..n_m {
        for n in 0..shape.shifts {
            if !rng.random_bool(shape.maintenance_prob) {
                continue;
            }
            let len = rng.random_range(shape.maintenance_ticks[0]..=shape.maintenance_ticks[1]);
            let offset = rng.random_range(0..shape.shift_ticks.saturating_sub(len).max(1));
            let start = n * shape.shift_ticks + offset;
            maintenance.push(MaintenanceWindow {
                machine: MachineId(l),
                start,
                end: start + len,
            });
        }
    }

    let config = ScenarioConfig {
        name: shape.name.clone(),
        shift_ticks: shape.shift_ticks,
        horizon_shifts: shape.shifts,
        conversion_threshold: shape.conversion_threshold,
        release_lead_shifts: shape.release_lead_shifts,
        demand: DemandModel {
            product_dropout: shape.product_dropout,
            initial_wip_prob: shape.initial_wip_prob,
        },
        conversion: ConversionSpec {
            operation_change: shape.operation_change,
            product_matrix,
        },
        operations: (0..n_o)
            .map(|o| OperationSpec {
                name: format!("op{o}"),
            })
            .collect(),
        machines,
        products,
        maintenance,
    };
    config.validate()?;
    Ok(config)
}

fn count_edges(routes: &[Vec<usize>]) -> usize {
    routes
        .iter()
        .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Routes are increasing operation sequences, so the union graph is a DAG by construction.
/// A local search edits routes until the distinct arc count reaches the target.
fn build_routes(
    shape: &ScenarioShape,
    n_p: usize,
    n_o: usize,
    max_len: usize,
    target_edges: usize,
    rng: &mut SimRng,
) -> Result<Vec<Vec<usize>>> {
    let all_ops: Vec<usize> = (0..n_o).collect();
    let mut routes: Vec<Vec<usize>> = (0..n_p)
        .map(|_| {
            let len = rng.random_range(1..=max_len.min(3).max(1));
            let mut ops: Vec<usize> = all_ops.choose_multiple(rng, len).copied().collect();
            ops.sort_unstable();
            ops
        })
        .collect();
    // Every operation must appear somewhere.
    for o in 0..n_o {
        if routes.iter().any(|r| r.contains(&o)) {
            continue;
        }
        let open: Vec<usize> = (0..n_p).filter(|&p| routes[p].len() < max_len).collect();
        let p = if open.is_empty() {
            return Err(Error::InfeasibleShape("route slots exhausted".into()));
        } else {
            open[rng.random_range(0..open.len())]
        };
        routes[p].push(o);
        routes[p].sort_unstable();
    }

    let usage = |routes: &[Vec<usize>], o: usize| routes.iter().filter(|r| r.contains(&o)).count();
    let mut edges = count_edges(&routes);
    let mut iterations = 0usize;
    while edges != target_edges && iterations < 200_000 {
        iterations += 1;
        let p = rng.random_range(0..n_p);
        let mut candidate = routes[p].clone();
        let grow = rng.random_bool(if edges < target_edges { 0.7 } else { 0.3 });
        if grow {
            if candidate.len() >= max_len {
                continue;
            }
            let o = rng.random_range(0..n_o);
            if candidate.contains(&o) {
                continue;
            }
            candidate.push(o);
            candidate.sort_unstable();
        } else {
            if candidate.len() <= 1 {
                continue;
            }
            let idx = rng.random_range(0..candidate.len());
            if usage(&routes, candidate[idx]) <= 1 {
                continue;
            }
            candidate.remove(idx);
        }
        let old = std::mem::replace(&mut routes[p], candidate);
        let next = count_edges(&routes);
        if next.abs_diff(target_edges) <= edges.abs_diff(target_edges) {
            edges = next;
        } else {
            routes[p] = old;
        }
    }
    let degree = edges as f64 / n_o as f64;
    if (degree - shape.out_degree).abs() > DEGREE_TOLERANCE {
        return Err(Error::InfeasibleShape(format!(
            "out-degree search stalled at {degree:.3} (target {})",
            shape.out_degree
        )));
    }
    Ok(routes)
}

impl Layout {
    /// Number of machines per station.
    pub fn station_sizes(&self) -> Vec<usize> {
        self.stations.iter().map(Vec::len).collect()
    }
}
