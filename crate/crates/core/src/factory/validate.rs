//! Constraint checker for assignment traces.
//!
//! Shares no scheduling code with the simulator: it rebuilds machine setups, lot arrivals
//! and conversion budgets from the trace alone, so it can serve as an oracle.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AssignmentEvent, Trace};
use crate::error::{Error, Result};
use crate::ids::{MachineId, ProductId};
use crate::scenario::{EpisodeInstance, LotSpec, ScenarioConfig, Setup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    /// One job at a time per machine; no work during maintenance.
    NoOverlap,
    /// Setups change only through assignments, with the matching conversion time.
    SetupPersistence,
    /// Processing time equals unit time times units.
    CompletionTime,
    /// A stage starts only after the previous stage (or the release) completes.
    Precedence,
    /// Same-product lots at an operation are dispatched in arrival order.
    Fifo,
    /// Each (product, stage, lot) is assigned at most once.
    SingleAssignment,
    /// Per-machine conversion ticks within a shift stay within the threshold.
    ConversionBudget,
    /// Assigned machine is compatible and idle at the start tick.
    Availability,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 8] = [
        ConstraintFamily::NoOverlap,
        ConstraintFamily::SetupPersistence,
        ConstraintFamily::CompletionTime,
        ConstraintFamily::Precedence,
        ConstraintFamily::Fifo,
        ConstraintFamily::SingleAssignment,
        ConstraintFamily::ConversionBudget,
        ConstraintFamily::Availability,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub family: ConstraintFamily,
    pub machine: Option<MachineId>,
    pub tick: Option<u32>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub events_checked: usize,
    pub violations: Vec<Violation>,
    /// Largest per-machine per-shift conversion usage seen.
    pub max_shift_conversion: u32,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn family_passed(&self, family: ConstraintFamily) -> bool {
        self.violations.iter().all(|v| v.family != family)
    }

    fn push(&mut self, family: ConstraintFamily, machine: Option<MachineId>, tick: Option<u32>, message: String) {
        self.violations.push(Violation {
            family,
            machine,
            tick,
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for family in ConstraintFamily::ALL {
            let n = self.violations.iter().filter(|v| v.family == family).count();
            writeln!(
                f,
                "{:<18} {}",
                format!("{family:?}"),
                if n == 0 { "pass".to_string() } else { format!("FAIL ({n})") }
            )?;
        }
        for v in self.violations.iter().take(20) {
            writeln!(f, "  {:?}: {}", v.family, v.message)?;
        }
        Ok(())
    }
}

fn overlaps(a: (u32, u32), b: (u32, u32)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

pub fn validate_trace(
    config: &ScenarioConfig,
    episode: &EpisodeInstance,
    trace: &Trace,
) -> Result<ValidationReport> {
    use ConstraintFamily::*;

    let horizon = episode.horizon_ticks(config);
    let shift = config.shift_ticks;
    let lots: HashMap<(ProductId, u32), &LotSpec> =
        episode.lots().map(|l| ((l.product, l.index), l)).collect();

    // Malformed input is an error, not a violation.
    let mut last_start = 0;
    for (i, e) in trace.events.iter().enumerate() {
        if e.start < last_start {
            return Err(Error::MalformedTrace(format!(
                "event {i} starts at {} before its predecessor at {last_start}",
                e.start
            )));
        }
        last_start = e.start;
        if e.product.0 >= config.n_products() || e.machine.0 >= config.n_machines() {
            return Err(Error::MalformedTrace(format!("event {i} names an unknown id")));
        }
        if e.stage >= config.route(e.product).len() {
            return Err(Error::MalformedTrace(format!("event {i} names an unknown stage")));
        }
        if !lots.contains_key(&(e.product, e.lot)) {
            return Err(Error::MalformedTrace(format!(
                "event {i} names unknown lot ({}, {})",
                e.product, e.lot
            )));
        }
    }
    for m in &trace.maintenance {
        if m.machine.0 >= config.n_machines() || m.start >= m.end {
            return Err(Error::MalformedTrace("invalid maintenance interval".into()));
        }
    }
    if episode.initial_machines.len() != config.n_machines() {
        return Err(Error::MalformedTrace("episode machine count mismatch".into()));
    }

    let mut report = ValidationReport {
        events_checked: trace.events.len(),
        ..Default::default()
    };

    // Single assignment.
    let mut by_key: HashMap<(ProductId, usize, u32), &AssignmentEvent> = HashMap::new();
    for e in &trace.events {
        if by_key.insert((e.product, e.stage, e.lot), e).is_some() {
            report.push(
                SingleAssignment,
                Some(e.machine),
                Some(e.start),
                format!("lot ({}, {}) stage {} assigned twice", e.product, e.lot, e.stage),
            );
        }
    }

    // Per-event checks: compatibility, horizon, processing arithmetic.
    for e in &trace.events {
        let step = &config.route(e.product)[e.stage];
        if !step.machines.contains(&e.machine) {
            report.push(
                Availability,
                Some(e.machine),
                Some(e.start),
                format!("{} is not compatible with {} stage {}", e.machine, e.product, e.stage),
            );
        }
        if e.start >= horizon {
            report.push(
                Availability,
                Some(e.machine),
                Some(e.start),
                format!("assignment at {} outside the horizon", e.start),
            );
        }
        let init = &episode.initial_machines[e.machine.0];
        if e.start < init.busy_until {
            report.push(
                Availability,
                Some(e.machine),
                Some(e.start),
                format!("{} busy until {} at start", e.machine, init.busy_until),
            );
        }
        let units = lots[&(e.product, e.lot)].units;
        let expected = step.unit_time * units;
        if e.processing_ticks != expected {
            report.push(
                CompletionTime,
                Some(e.machine),
                Some(e.start),
                format!(
                    "lot ({}, {}) stage {} processing {} != {}",
                    e.product, e.lot, e.stage, e.processing_ticks, expected
                ),
            );
        }
    }

    // Per-machine timelines: overlap, setups, conversion budget.
    let mut per_machine: BTreeMap<MachineId, Vec<&AssignmentEvent>> = BTreeMap::new();
    for e in &trace.events {
        per_machine.entry(e.machine).or_default().push(e);
    }
    for (&l, events) in &per_machine {
        let init = &episode.initial_machines[l.0];
        let mut setup = Setup {
            product: init.product,
            operation: init.operation,
        };
        let mut free_at = init.busy_until;
        let mut budget: BTreeMap<u32, u32> = BTreeMap::new();
        let downtime: Vec<(u32, u32)> = trace
            .maintenance
            .iter()
            .filter(|m| m.machine == l)
            .map(|m| (m.start, m.end))
            .chain(
                config
                    .maintenance
                    .iter()
                    .filter(|w| w.machine == l)
                    .map(|w| (w.start, w.end)),
            )
            .collect();
        for e in events {
            let span = (e.start, e.completion());
            if e.start < free_at {
                report.push(
                    NoOverlap,
                    Some(l),
                    Some(e.start),
                    format!("{l} starts at {} while busy until {free_at}", e.start),
                );
            }
            if let Some(d) = downtime.iter().find(|d| overlaps(span, **d)) {
                report.push(
                    NoOverlap,
                    Some(l),
                    Some(e.start),
                    format!(
                        "{l} job {}..{} overlaps maintenance {}..{}",
                        span.0, span.1, d.0, d.1
                    ),
                );
            }
            free_at = free_at.max(span.1);

            let target = Setup {
                product: e.product,
                operation: config.route(e.product)[e.stage].operation,
            };
            let expected = config.conversion_ticks(setup, target);
            if e.conversion_ticks != expected {
                report.push(
                    SetupPersistence,
                    Some(l),
                    Some(e.start),
                    format!(
                        "{l} at {}: conversion {} but setup change {:?}->{:?} needs {expected}",
                        e.start, e.conversion_ticks, setup, target
                    ),
                );
            }
            setup = target;

            let used = budget.entry(e.start / shift).or_default();
            *used += e.conversion_ticks;
            report.max_shift_conversion = report.max_shift_conversion.max(*used);
            if *used > config.conversion_threshold {
                report.push(
                    ConversionBudget,
                    Some(l),
                    Some(e.start),
                    format!(
                        "{l} uses {} conversion ticks in shift {} (threshold {})",
                        used,
                        e.start / shift,
                        config.conversion_threshold
                    ),
                );
            }
        }
    }

    // Precedence and arrival ticks.
    let arrival = |p: ProductId, j: usize, k: u32| -> Option<u32> {
        let lot = lots[&(p, k)];
        if j == lot.stage {
            Some(lot.release)
        } else if j > lot.stage {
            by_key.get(&(p, j - 1, k)).map(|prev| prev.completion())
        } else {
            None
        }
    };
    for e in &trace.events {
        match arrival(e.product, e.stage, e.lot) {
            None => report.push(
                Precedence,
                Some(e.machine),
                Some(e.start),
                format!(
                    "lot ({}, {}) stage {} assigned before its predecessor stage",
                    e.product, e.lot, e.stage
                ),
            ),
            Some(ready) if e.start < ready => report.push(
                Precedence,
                Some(e.machine),
                Some(e.start),
                format!(
                    "lot ({}, {}) stage {} starts at {} before ready at {ready}",
                    e.product, e.lot, e.stage, e.start
                ),
            ),
            Some(_) => {}
        }
    }

    // FIFO: within each (product, stage) queue, dispatch ticks are non-decreasing in
    // (arrival, lot index); lots that arrived but were never dispatched count as infinity.
    for (p, prod) in config.products.iter().enumerate() {
        let p = ProductId(p);
        for j in 0..prod.route.len() {
            let mut queue: Vec<((u32, u32), u32)> = episode
                .lots()
                .filter(|l| l.product == p)
                .filter_map(|l| {
                    let arrived = arrival(p, j, l.index)?;
                    if arrived >= horizon {
                        return None;
                    }
                    let dispatched = by_key.get(&(p, j, l.index)).map_or(u32::MAX, |e| e.start);
                    Some(((arrived, l.index), dispatched))
                })
                .collect();
            queue.sort();
            for w in queue.windows(2) {
                let ((_, k0), s0) = w[0];
                let ((_, k1), s1) = w[1];
                if s1 < s0 {
                    report.push(
                        Fifo,
                        None,
                        Some(s1),
                        format!(
                            "{p} stage {j}: lot {k1} dispatched at {s1} ahead of earlier lot {k0}"
                        ),
                    );
                }
            }
        }
    }

    Ok(report)
}
