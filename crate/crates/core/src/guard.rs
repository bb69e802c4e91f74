//! Rule-based conversion guard: urgency scoring and the per-machine conversion decision
//! that can supersede a follower's intent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factory::MachineState;
use crate::ids::{MachineId, OpId, ProductId};
use crate::scenario::{EpisodeInstance, ScenarioConfig};
use crate::sim::{MachineCommand, Simulator};

/// Capacity figures of one operation, in ticks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityView {
    pub operation: OpId,
    /// Products processable at the operation; the other vectors are aligned with it.
    pub products: Vec<ProductId>,
    /// Queued lots per product.
    pub queued: Vec<usize>,
    /// RC: processing time of all queued lots.
    pub required: Vec<u64>,
    /// ERC: remaining time until the planning horizon of machines set to the product.
    pub expected_remaining: Vec<u64>,
    /// ERCM per station machine: its setup's position in `products` and its share.
    pub machine_share: Vec<(MachineId, usize, u64)>,
    pub big_number: u64,
}

impl CapacityView {
    /// Capacity view of station `o` at the simulator's current tick.
    pub fn from_sim(sim: &Simulator, o: OpId, horizon_end: u32, big_number: u64) -> CapacityView {
        let config = sim.config();
        let state = sim.state();
        let t = state.tick;
        let products = sim.layout().products_at[o.0].clone();
        let mut queued = Vec::with_capacity(products.len());
        let mut required = Vec::with_capacity(products.len());
        for &p in &products {
            let q = state.queue(o, p);
            queued.push(q.len());
            required.push(
                q.iter()
                    .map(|&i| {
                        let lot = &state.lots[i];
                        u64::from(config.route(p)[lot.stage].unit_time * lot.units)
                    })
                    .sum(),
            );
        }
        let mut expected_remaining = vec![0u64; products.len()];
        let mut machine_share = Vec::new();
        for &l in &sim.layout().stations[o.0] {
            let m = &state.machines[l.0];
            if m.operation_setup != o {
                continue;
            }
            let Some(pos) = products.iter().position(|&p| p == m.product_setup) else {
                continue;
            };
            let share = u64::from(horizon_end.saturating_sub(t.max(m.busy_until)));
            expected_remaining[pos] += share;
            machine_share.push((l, pos, share));
        }
        CapacityView {
            operation: o,
            products,
            queued,
            required,
            expected_remaining,
            machine_share,
            big_number,
        }
    }

    pub fn position(&self, p: ProductId) -> Option<usize> {
        self.products.iter().position(|&q| q == p)
    }

    /// ERCM of machine `l` for product `p`: zero unless `l` is set to `p`.
    pub fn machine_remaining(&self, l: MachineId, p: ProductId) -> u64 {
        let Some(pos) = self.position(p) else {
            return 0;
        };
        self.machine_share
            .iter()
            .filter(|&&(m, q, _)| m == l && q == pos)
            .map(|&(_, _, s)| s)
            .sum()
    }
}

/// BN: one more than the total processing time of every lot in the episode.
pub fn big_number(config: &ScenarioConfig, episode: &EpisodeInstance) -> u64 {
    1 + episode
        .lots()
        .map(|lot| {
            config
                .route(lot.product)
                .iter()
                .map(|s| u64::from(s.unit_time * lot.units))
                .sum::<u64>()
        })
        .sum::<u64>()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrgencyTable {
    pub operation: OpId,
    pub products: Vec<ProductId>,
    pub scores: Vec<u64>,
}

impl UrgencyTable {
    pub fn score(&self, p: ProductId) -> u64 {
        self.products
            .iter()
            .position(|&q| q == p)
            .map_or(0, |i| self.scores[i])
    }

    pub fn total(&self) -> u64 {
        self.scores.iter().sum()
    }

    /// Most urgent product among those accepted by `eligible`, lowest id on ties;
    /// `None` when every eligible score is zero.
    pub fn argmax_where(&self, eligible: impl Fn(ProductId) -> bool) -> Option<ProductId> {
        let mut best: Option<(u64, ProductId)> = None;
        for (&p, &s) in self.products.iter().zip(&self.scores) {
            if s == 0 || !eligible(p) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bp)) => s > bs || (s == bs && p < bp),
            };
            if better {
                best = Some((s, p));
            }
        }
        best.map(|(_, p)| p)
    }

    pub fn argmax(&self) -> Option<ProductId> {
        self.argmax_where(|_| true)
    }
}

/// Urgency scores of one operation given the product setups of its machines.
pub fn score_urgency(view: &CapacityView, setups: &[ProductId]) -> UrgencyTable {
    let scores = view
        .products
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (rc, erc) = (view.required[i], view.expected_remaining[i]);
            if rc <= erc {
                0
            } else if setups.contains(p) {
                rc
            } else {
                rc + view.big_number
            }
        })
        .collect();
    UrgencyTable {
        operation: view.operation,
        products: view.products.clone(),
        scores,
    }
}

/// A follower's decoded intent for one machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowerIntent {
    pub convert: bool,
    pub candidate: ProductId,
}

impl FollowerIntent {
    /// The command the follower would issue without the guard.
    pub fn command(&self) -> MachineCommand {
        if self.convert {
            MachineCommand::Convert(self.candidate)
        } else {
            MachineCommand::Keep
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardBranch {
    /// No conversion requested.
    Keep,
    /// Candidate has WIP and is adopted.
    Candidate,
    /// Candidate has no WIP; the most urgent product is adopted instead.
    Urgent,
    /// Candidate has no WIP and no safe urgent switch exists.
    Hold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardedDecision {
    pub next_product: ProductId,
    pub branch: GuardBranch,
}

impl GuardedDecision {
    pub fn command(&self, machine: &MachineState) -> MachineCommand {
        if self.next_product == machine.product_setup {
            MachineCommand::Keep
        } else {
            MachineCommand::Convert(self.next_product)
        }
    }
}

/// Decide the next product setup of an available machine.
///
/// `compatible` is aligned with `view.products`; the urgent switch only considers products
/// the machine can run.
pub fn decide_conversion(
    intent: FollowerIntent,
    machine: &MachineState,
    view: &CapacityView,
    urgency: &UrgencyTable,
    compatible: &[bool],
) -> Result<GuardedDecision> {
    if !machine.is_available() {
        return Err(Error::Contract(format!(
            "guard called for busy machine {}",
            machine.machine_id
        )));
    }
    let current = machine.product_setup;
    let keep = |branch| GuardedDecision {
        next_product: current,
        branch,
    };
    if !intent.convert {
        return Ok(keep(GuardBranch::Keep));
    }
    let has_wip = view
        .position(intent.candidate)
        .is_some_and(|i| view.queued[i] > 0);
    if has_wip {
        return Ok(GuardedDecision {
            next_product: intent.candidate,
            branch: GuardBranch::Candidate,
        });
    }
    let (rc, erc) = match view.position(current) {
        Some(i) => (view.required[i], view.expected_remaining[i]),
        None => (0, 0),
    };
    let others = erc.saturating_sub(view.machine_remaining(machine.machine_id, current));
    if rc < others && urgency.total() > 0 {
        let eligible = |p: ProductId| view.position(p).is_some_and(|i| compatible[i]);
        if let Some(p) = urgency.argmax_where(eligible) {
            return Ok(GuardedDecision {
                next_product: p,
                branch: GuardBranch::Urgent,
            });
        }
    }
    Ok(keep(GuardBranch::Hold))
}

/// One guard decision, for override-rate analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardRecord {
    pub tick: u32,
    pub machine: MachineId,
    pub operation: OpId,
    pub intent: FollowerIntent,
    pub current: ProductId,
    pub decision: GuardedDecision,
}

impl GuardRecord {
    /// The guard replaced the follower's choice of product.
    pub fn overridden(&self) -> bool {
        self.decision.branch == GuardBranch::Urgent
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn view(rc: &[u64], erc: &[u64], shares: &[(usize, usize, u64)], bn: u64) -> CapacityView {
        CapacityView {
            operation: OpId(0),
            products: (0..rc.len()).map(ProductId).collect(),
            queued: rc.iter().map(|&r| usize::from(r > 0)).collect(),
            required: rc.to_vec(),
            expected_remaining: erc.to_vec(),
            machine_share: shares.iter().map(|&(l, p, s)| (MachineId(l), p, s)).collect(),
            big_number: bn,
        }
    }

    fn machine(l: usize, p: usize) -> MachineState {
        MachineState {
            machine_id: MachineId(l),
            station: OpId(0),
            product_setup: ProductId(p),
            operation_setup: OpId(0),
            busy: false,
            busy_until: 0,
            shift_conversion_used: 0,
            in_unscheduled_maintenance: false,
            in_scheduled_maintenance: false,
            current_lot: None,
            pending_repair: None,
        }
    }

    #[test]
    fn urgency_examples() {
        let v = view(&[100], &[200], &[], 1_000_000);
        assert_eq!(score_urgency(&v, &[ProductId(0)]).scores, vec![0]);
        let v = view(&[100], &[50], &[(0, 0, 50)], 1_000_000);
        assert_eq!(score_urgency(&v, &[ProductId(0)]).scores, vec![100]);
        let v = view(&[100], &[0], &[], 1_000_000);
        assert_eq!(score_urgency(&v, &[ProductId(1)]).scores, vec![1_000_100]);
    }

    #[test]
    fn keep_when_no_conversion_requested() {
        let v = view(&[0, 30], &[10, 0], &[(0, 0, 10)], 100);
        let u = score_urgency(&v, &[ProductId(0)]);
        let intent = FollowerIntent {
            convert: false,
            candidate: ProductId(1),
        };
        let d = decide_conversion(intent, &machine(0, 0), &v, &u, &[true, true]).unwrap();
        assert_eq!(d.branch, GuardBranch::Keep);
        assert_eq!(d.next_product, ProductId(0));
    }

    #[test]
    fn candidate_with_wip_is_adopted() {
        let v = view(&[0, 30], &[10, 0], &[(0, 0, 10)], 100);
        let u = score_urgency(&v, &[ProductId(0)]);
        let intent = FollowerIntent {
            convert: true,
            candidate: ProductId(1),
        };
        let d = decide_conversion(intent, &machine(0, 0), &v, &u, &[true, true]).unwrap();
        assert_eq!(d.branch, GuardBranch::Candidate);
        assert_eq!(d.next_product, ProductId(1));
    }

    #[test]
    fn urgent_switch_needs_cover_from_other_machines() {
        // p0 has 5 ticks of WIP; m0 and m1 are both set to p0 with 10 ticks each.
        let intent = FollowerIntent {
            convert: true,
            candidate: ProductId(2),
        };
        let v = view(&[5, 30, 0], &[20, 0, 0], &[(0, 0, 10), (1, 0, 10)], 100);
        let u = score_urgency(&v, &[ProductId(0), ProductId(0)]);
        let d = decide_conversion(intent, &machine(0, 0), &v, &u, &[true; 3]).unwrap();
        assert_eq!((d.branch, d.next_product), (GuardBranch::Urgent, ProductId(1)));
        // Without m1, converting m0 would strand p0's WIP.
        let v = view(&[5, 30, 0], &[10, 0, 0], &[(0, 0, 10)], 100);
        let u = score_urgency(&v, &[ProductId(0)]);
        let d = decide_conversion(intent, &machine(0, 0), &v, &u, &[true; 3]).unwrap();
        assert_eq!((d.branch, d.next_product), (GuardBranch::Hold, ProductId(0)));
        // An incompatible urgent product is not chosen.
        let v = view(&[5, 30, 0], &[20, 0, 0], &[(0, 0, 10), (1, 0, 10)], 100);
        let u = score_urgency(&v, &[ProductId(0), ProductId(0)]);
        let d = decide_conversion(intent, &machine(0, 0), &v, &u, &[true, false, true]).unwrap();
        assert_eq!(d.branch, GuardBranch::Hold);
    }

    #[test]
    fn busy_machine_is_a_contract_error() {
        let v = view(&[0], &[0], &[], 1);
        let u = score_urgency(&v, &[]);
        let mut m = machine(0, 0);
        m.busy = true;
        let intent = FollowerIntent {
            convert: false,
            candidate: ProductId(0),
        };
        assert!(decide_conversion(intent, &m, &v, &u, &[true]).is_err());
    }

    proptest! {
        #[test]
        fn uncovered_shortfall_dominates(
            rows in prop::collection::vec((0u64..500, 0u64..500, any::<bool>()), 1..8)
        ) {
            let rc: Vec<u64> = rows.iter().map(|r| r.0).collect();
            let erc: Vec<u64> = rows.iter().map(|r| r.1).collect();
            let setups: Vec<ProductId> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.2)
                .map(|(i, _)| ProductId(i))
                .collect();
            let v = view(&rc, &erc, &[], 1 + rc.iter().sum::<u64>());
            let u = score_urgency(&v, &setups);
            for (i, s) in u.scores.iter().enumerate() {
                prop_assert!(*s == 0 || *s == rc[i] || *s == rc[i] + v.big_number);
                if rc[i] <= erc[i] {
                    prop_assert_eq!(*s, 0);
                }
            }
            let uncovered = |i: usize| rc[i] > erc[i] && !rows[i].2;
            if (0..rows.len()).any(uncovered) {
                let best = u.argmax().unwrap();
                prop_assert!(uncovered(best.0));
            }
        }
    }
}
