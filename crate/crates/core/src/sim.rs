//! Decision-point simulator.
//!
//! One tick is one decision point. Per tick the caller runs
//! [`Simulator::realize_maintenance`], then [`Simulator::apply_actions`] for the stations
//! that have an available machine, then [`Simulator::advance`], which completes jobs,
//! releases demand and emits shift rewards at shift boundaries.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factory::{
    initial_lots, AssignmentEvent, LotId, LotLocation, LotState, MachineState,
    MaintenanceInterval, MaintenanceKind, Trace,
};
use crate::ids::{MachineId, OpId, ProductId};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::scenario::{EpisodeInstance, Layout, MaintenanceWindow, ScenarioConfig, Setup};

/// What a station tells one of its available machines to do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MachineCommand {
    /// Process the current setup's next lot if one is waiting.
    Keep,
    /// Switch to this product (converting if the setup differs) and process its next lot.
    Convert(ProductId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StationCommands {
    pub operation: OpId,
    pub commands: Vec<(MachineId, MachineCommand)>,
}

/// Result of one command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MachineOutcome {
    Started { converted: bool },
    IdleNoWip,
    IdleIncompatible,
    IdleBudget,
    IdleMaintenanceConflict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRewards {
    /// 1-based shift index `n`; rewards count lots due at or before `n * S`.
    pub shift: u32,
    /// Operation-wise reward per operation.
    pub operation: Vec<f64>,
    /// Team reward over final completions.
    pub leader: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub events: Vec<AssignmentEvent>,
    pub outcomes: Vec<(MachineId, MachineOutcome)>,
    pub rewards: Option<ShiftRewards>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactoryState {
    pub tick: u32,
    /// 0-based index of the current shift.
    pub shift_index: u32,
    pub machines: Vec<MachineState>,
    pub lots: Vec<LotState>,
    /// `queues[o][p]`, FIFO by (arrival tick, lot index).
    pub queues: Vec<Vec<VecDeque<LotId>>>,
}

impl FactoryState {
    pub fn queue(&self, o: OpId, p: ProductId) -> &VecDeque<LotId> {
        &self.queues[o.0][p.0]
    }

    /// Lots per location: (pending, queued, on machine, finished).
    pub fn location_counts(&self) -> (usize, usize, usize, usize) {
        let mut c = (0, 0, 0, 0);
        for lot in &self.lots {
            match lot.location {
                LotLocation::Pending => c.0 += 1,
                LotLocation::Queued => c.1 += 1,
                LotLocation::OnMachine(_) => c.2 += 1,
                LotLocation::Finished => c.3 += 1,
            }
        }
        c
    }
}

/// Pre-sampled breakdown triggers, independent of the schedule so that paired runs see
/// the same disturbances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BreakdownPlan {
    triggers: Vec<VecDeque<(u32, u32)>>,
}

impl BreakdownPlan {
    pub fn sample(config: &ScenarioConfig, seed: u64, horizon: u32) -> BreakdownPlan {
        let triggers = config
            .machines
            .iter()
            .enumerate()
            .map(|(l, m)| {
                let mut out = VecDeque::new();
                if m.mtbf_ticks <= 0.0 {
                    return out;
                }
                let mut rng = stream_rng(derive_seed(seed, l as u64), streams::BREAKDOWN);
                let gap = Exp::new(1.0 / m.mtbf_ticks).expect("positive rate");
                let mut t = 0u32;
                loop {
                    let dt = gap.sample(&mut rng).ceil().max(1.0);
                    if dt >= (horizon - t) as f64 {
                        break;
                    }
                    t += dt as u32;
                    let repair = rng.random_range(m.repair_ticks[0]..=m.repair_ticks[1]);
                    out.push_back((t, repair));
                }
                out
            })
            .collect();
        BreakdownPlan { triggers }
    }

    pub fn none(machines: usize) -> BreakdownPlan {
        BreakdownPlan {
            triggers: vec![VecDeque::new(); machines],
        }
    }

    pub fn triggers(&self, machine: MachineId) -> impl Iterator<Item = &(u32, u32)> {
        self.triggers[machine.0].iter()
    }
}

pub struct Simulator<'a> {
    config: &'a ScenarioConfig,
    episode: &'a EpisodeInstance,
    layout: Layout,
    state: FactoryState,
    breakdowns: BreakdownPlan,
    windows: Vec<Vec<MaintenanceWindow>>,
    repair_until: Vec<u32>,
    job_until: Vec<u32>,
    start_stage: Vec<usize>,
    pending: VecDeque<LotId>,
    events: Vec<AssignmentEvent>,
    maintenance_log: Vec<MaintenanceInterval>,
    horizon: u32,
    realized_tick: Option<u32>,
}

impl<'a> Simulator<'a> {
    /// Configure the initial machines and WIP of an episode, sampling breakdowns from
    /// the episode's breakdown seed.
    pub fn reset(config: &'a ScenarioConfig, episode: &'a EpisodeInstance) -> Result<Self> {
        let horizon = episode.horizon_ticks(config);
        let breakdowns = BreakdownPlan::sample(config, episode.breakdown_trace_seed, horizon);
        Self::with_breakdowns(config, episode, breakdowns)
    }

    pub fn with_breakdowns(
        config: &'a ScenarioConfig,
        episode: &'a EpisodeInstance,
        breakdowns: BreakdownPlan,
    ) -> Result<Self> {
        episode.validate(config)?;
        if breakdowns.triggers.len() != config.n_machines() {
            return Err(Error::DimensionMismatch {
                expected: config.n_machines(),
                got: breakdowns.triggers.len(),
            });
        }
        let layout = Layout::new(config);
        let horizon = episode.horizon_ticks(config);
        let machines: Vec<MachineState> = episode
            .initial_machines
            .iter()
            .enumerate()
            .map(|(l, init)| MachineState {
                machine_id: MachineId(l),
                station: config.machines[l].station,
                product_setup: init.product,
                operation_setup: init.operation,
                busy: init.busy_until > 0,
                busy_until: init.busy_until,
                shift_conversion_used: 0,
                in_unscheduled_maintenance: false,
                in_scheduled_maintenance: false,
                current_lot: None,
                pending_repair: None,
            })
            .collect();
        let mut windows = vec![Vec::new(); config.n_machines()];
        let mut maintenance_log = Vec::new();
        for w in &config.maintenance {
            windows[w.machine.0].push(w.clone());
            if w.start < horizon {
                maintenance_log.push(MaintenanceInterval {
                    machine: w.machine,
                    start: w.start,
                    end: w.end,
                    kind: MaintenanceKind::Scheduled,
                });
            }
        }
        let lots = initial_lots(config, episode);
        let start_stage = lots.iter().map(|l| l.stage).collect();
        let mut pending: Vec<LotId> = (0..lots.len()).collect();
        pending.sort_by_key(|&i| (lots[i].release, lots[i].product, lots[i].lot_index));
        let mut sim = Simulator {
            config,
            episode,
            state: FactoryState {
                tick: 0,
                shift_index: 0,
                machines,
                lots,
                queues: vec![vec![VecDeque::new(); config.n_products()]; config.n_operations()],
            },
            layout,
            breakdowns,
            windows,
            repair_until: vec![0; config.n_machines()],
            job_until: episode.initial_machines.iter().map(|m| m.busy_until).collect(),
            start_stage,
            pending: pending.into(),
            events: Vec::new(),
            maintenance_log,
            horizon,
            realized_tick: None,
        };
        sim.release_due(0);
        sim.refresh_flags();
        Ok(sim)
    }

    pub fn config(&self) -> &'a ScenarioConfig {
        self.config
    }

    pub fn episode(&self) -> &'a EpisodeInstance {
        self.episode
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn state(&self) -> &FactoryState {
        &self.state
    }

    pub fn tick(&self) -> u32 {
        self.state.tick
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.state.tick >= self.horizon
    }

    pub fn is_shift_start(&self) -> bool {
        self.state.tick % self.config.shift_ticks == 0
    }

    pub fn events(&self) -> &[AssignmentEvent] {
        &self.events
    }

    pub fn breakdowns(&self) -> &BreakdownPlan {
        &self.breakdowns
    }

    /// Stage index a lot started the episode at (nonzero for initial WIP).
    pub fn start_stage(&self, lot: LotId) -> usize {
        self.start_stage[lot]
    }

    /// Lots not yet released, in release order.
    pub fn pending_lots(&self) -> impl Iterator<Item = &LotState> {
        self.pending.iter().map(|&i| &self.state.lots[i])
    }

    /// Processing ticks of a lot at its current stage.
    pub fn processing_ticks(&self, lot: LotId) -> u32 {
        let lot = &self.state.lots[lot];
        self.config.route(lot.product)[lot.stage].unit_time * lot.units
    }

    /// No scheduled window of machine `l` intersects `[start, end)`.
    pub fn clear_of_maintenance(&self, l: MachineId, start: u32, end: u32) -> bool {
        !self.windows[l.0].iter().any(|w| w.start < end && start < w.end)
    }

    /// Stations with at least one available machine, with those machines in id order.
    pub fn available_by_station(&self) -> Vec<(OpId, Vec<MachineId>)> {
        self.layout
            .stations
            .iter()
            .enumerate()
            .filter_map(|(o, machines)| {
                let avail: Vec<MachineId> = machines
                    .iter()
                    .copied()
                    .filter(|l| self.state.machines[l.0].is_available())
                    .collect();
                (!avail.is_empty()).then_some((OpId(o), avail))
            })
            .collect()
    }

    /// Start pending repairs, apply breakdown triggers and scheduled windows for the
    /// current tick, and refresh availability.
    pub fn realize_maintenance(&mut self) -> Result<()> {
        let t = self.state.tick;
        if t >= self.horizon {
            return Err(Error::Contract(format!(
                "realize_maintenance at tick {t} past the horizon {}",
                self.horizon
            )));
        }
        if self.realized_tick == Some(t) {
            return Ok(());
        }
        for l in 0..self.state.machines.len() {
            let working = self.job_until[l] > t;
            let in_window = self.windows[l].iter().any(|w| w.start <= t && t < w.end);
            let m = &mut self.state.machines[l];
            if !working {
                if let Some(r) = m.pending_repair.take() {
                    self.repair_until[l] = t + r;
                    self.maintenance_log.push(MaintenanceInterval {
                        machine: MachineId(l),
                        start: t,
                        end: t + r,
                        kind: MaintenanceKind::Breakdown,
                    });
                }
            }
            let queue = &mut self.breakdowns.triggers[l];
            while let Some(&(at, r)) = queue.front() {
                if at > t {
                    break;
                }
                queue.pop_front();
                if self.repair_until[l] > t || m.pending_repair.is_some() || in_window {
                    continue;
                }
                if working {
                    m.pending_repair = Some(r);
                } else {
                    self.repair_until[l] = t + r;
                    self.maintenance_log.push(MaintenanceInterval {
                        machine: MachineId(l),
                        start: t,
                        end: t + r,
                        kind: MaintenanceKind::Breakdown,
                    });
                }
            }
        }
        self.refresh_flags();
        self.realized_tick = Some(t);
        Ok(())
    }

    /// Execute station commands at the current tick. Machines are processed in ascending
    /// id order; a command that cannot start a lot leaves the machine idle.
    pub fn apply_actions(&mut self, actions: &[StationCommands]) -> Result<StepOutcome> {
        let t = self.state.tick;
        if self.realized_tick != Some(t) {
            return Err(Error::Contract(format!(
                "apply_actions at tick {t} before realize_maintenance"
            )));
        }
        let mut all: Vec<(MachineId, MachineCommand)> = Vec::new();
        for sc in actions {
            if sc.operation.0 >= self.config.n_operations() {
                return Err(Error::Contract(format!("unknown operation {}", sc.operation)));
            }
            let station = &self.layout.stations[sc.operation.0];
            if !station.iter().any(|l| self.state.machines[l.0].is_available()) {
                return Err(Error::Contract(format!(
                    "station {} has no available machine at tick {t}",
                    sc.operation
                )));
            }
            for &(l, cmd) in &sc.commands {
                if l.0 >= self.state.machines.len() || self.state.machines[l.0].station != sc.operation {
                    return Err(Error::Contract(format!(
                        "machine {l} does not belong to station {}",
                        sc.operation
                    )));
                }
                if !self.state.machines[l.0].is_available() {
                    return Err(Error::Contract(format!("machine {l} is busy at tick {t}")));
                }
                all.push((l, cmd));
            }
        }
        all.sort_by_key(|&(l, _)| l);
        if all.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Contract("machine commanded twice in one tick".into()));
        }
        let mut out = StepOutcome::default();
        for (l, cmd) in all {
            let outcome = self.execute(l, cmd, &mut out.events)?;
            out.outcomes.push((l, outcome));
        }
        self.refresh_flags();
        Ok(out)
    }

    fn execute(
        &mut self,
        l: MachineId,
        cmd: MachineCommand,
        events: &mut Vec<AssignmentEvent>,
    ) -> Result<MachineOutcome> {
        let t = self.state.tick;
        let m = &self.state.machines[l.0];
        let o = m.station;
        let target = match cmd {
            MachineCommand::Keep => m.product_setup,
            MachineCommand::Convert(p) => p,
        };
        if self.layout.stage_of(target, o).is_none() {
            if cmd == MachineCommand::Keep {
                return Ok(MachineOutcome::IdleNoWip);
            }
            return Err(Error::Contract(format!("product {target} is not processed at {o}")));
        }
        let Some(&lot_id) = self.state.queues[o.0][target.0].front() else {
            return Ok(MachineOutcome::IdleNoWip);
        };
        if !self.layout.is_compatible(l, target) {
            return Ok(MachineOutcome::IdleIncompatible);
        }
        let to = Setup {
            product: target,
            operation: o,
        };
        let conv = self.config.conversion_ticks(m.setup(), to);
        if conv > 0 && m.shift_conversion_used + conv > self.config.conversion_threshold {
            return Ok(MachineOutcome::IdleBudget);
        }
        let proc = self.processing_ticks(lot_id);
        let end = t + conv + proc;
        if !self.clear_of_maintenance(l, t, end) {
            return Ok(MachineOutcome::IdleMaintenanceConflict);
        }
        self.state.queues[o.0][target.0].pop_front();
        let lot = &mut self.state.lots[lot_id];
        lot.location = LotLocation::OnMachine(l);
        let ev = AssignmentEvent {
            product: target,
            stage: lot.stage,
            lot: lot.lot_index,
            machine: l,
            start: t,
            conversion_ticks: conv,
            processing_ticks: proc,
        };
        let m = &mut self.state.machines[l.0];
        m.product_setup = target;
        m.operation_setup = o;
        m.shift_conversion_used += conv;
        m.current_lot = Some(lot_id);
        self.job_until[l.0] = end;
        self.events.push(ev);
        events.push(ev);
        Ok(MachineOutcome::Started { converted: conv > 0 })
    }

    /// Move to the next tick: complete jobs, release demand and, at a shift boundary,
    /// compute rewards and reset conversion budgets.
    pub fn advance(&mut self) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::Contract(format!(
                "advance past the horizon {}; the episode is done",
                self.horizon
            )));
        }
        let t1 = self.state.tick + 1;
        for l in 0..self.state.machines.len() {
            if self.job_until[l] != t1 {
                continue;
            }
            if let Some(lot_id) = self.state.machines[l].current_lot.take() {
                self.complete(lot_id, t1);
            }
        }
        self.release_due(t1);
        self.state.tick = t1;
        self.realized_tick = None;
        let mut out = StepOutcome::default();
        if t1 % self.config.shift_ticks == 0 {
            let n = t1 / self.config.shift_ticks;
            out.rewards = Some(self.shift_rewards(n));
            for m in &mut self.state.machines {
                m.shift_conversion_used = 0;
            }
            self.state.shift_index = n;
        }
        self.refresh_flags();
        out.done = self.is_done();
        Ok(out)
    }

    /// Rewards for shift `n` (1-based), counting lots due at or before `n * S`.
    pub fn shift_rewards(&self, n: u32) -> ShiftRewards {
        let cutoff = n * self.config.shift_ticks;
        let mut operation = vec![0.0; self.config.n_operations()];
        let mut leader = 0.0;
        for (i, lot) in self.state.lots.iter().enumerate() {
            if lot.due > cutoff {
                continue;
            }
            for (j, step) in self.config.route(lot.product).iter().enumerate() {
                if j < self.start_stage[i] {
                    continue;
                }
                let on_time = lot.completion_times[j].is_some_and(|c| c <= lot.due);
                if !on_time {
                    operation[step.operation.0] -= 1.0;
                }
            }
            if lot.is_delayed() {
                leader -= 1.0;
            }
        }
        ShiftRewards {
            shift: n,
            operation,
            leader,
        }
    }

    /// Trace of assignments and realised maintenance so far.
    pub fn trace(&self) -> Trace {
        let mut maintenance = self.maintenance_log.clone();
        maintenance.sort_by_key(|m| (m.start, m.machine, m.end));
        Trace::new(self.config, self.episode, self.events.clone(), maintenance)
    }

    fn complete(&mut self, lot_id: LotId, t: u32) {
        let lot = &mut self.state.lots[lot_id];
        lot.completion_times[lot.stage] = Some(t);
        lot.stage += 1;
        if lot.stage == lot.completion_times.len() {
            lot.location = LotLocation::Finished;
        } else {
            lot.arrival_tick_at_stage = t;
            self.enqueue(lot_id);
        }
    }

    fn release_due(&mut self, t: u32) {
        while let Some(&i) = self.pending.front() {
            if self.state.lots[i].release > t {
                break;
            }
            self.pending.pop_front();
            self.state.lots[i].arrival_tick_at_stage = self.state.lots[i].release;
            self.enqueue(i);
        }
    }

    fn enqueue(&mut self, lot_id: LotId) {
        let lots = &mut self.state.lots;
        lots[lot_id].location = LotLocation::Queued;
        let lot = &lots[lot_id];
        let o = self.config.route(lot.product)[lot.stage].operation;
        let key = lot.queue_key();
        let queue = &mut self.state.queues[o.0][lot.product.0];
        let at = queue.partition_point(|&other| lots[other].queue_key() <= key);
        queue.insert(at, lot_id);
    }

    fn refresh_flags(&mut self) {
        let t = self.state.tick;
        for (l, m) in self.state.machines.iter_mut().enumerate() {
            let window_end = self.windows[l]
                .iter()
                .filter(|w| w.start <= t && t < w.end)
                .map(|w| w.end)
                .max();
            m.in_scheduled_maintenance = window_end.is_some();
            m.in_unscheduled_maintenance = self.repair_until[l] > t;
            m.busy_until = self.job_until[l]
                .max(self.repair_until[l])
                .max(window_end.unwrap_or(0));
            m.busy = m.busy_until > t;
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use rand::seq::IndexedRandom;

    use super::*;
    use crate::factory::{objective_value, validate_trace};
    use crate::rng::SimRng;
    use crate::scenario::{generate_scenario, sample_episode, two_by_two, DemandTier, ScenarioShape};
    use rand::SeedableRng;

    /// Drive an episode with uniformly random commands.
    pub(crate) fn random_run(
        config: &ScenarioConfig,
        episode: &EpisodeInstance,
        seed: u64,
        mut each_tick: impl FnMut(&Simulator),
    ) -> (Trace, Vec<ShiftRewards>, Vec<LotState>) {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut sim = Simulator::reset(config, episode).unwrap();
        let mut rewards = Vec::new();
        while !sim.is_done() {
            sim.realize_maintenance().unwrap();
            let avail = sim.available_by_station();
            let cmds: Vec<StationCommands> = avail
                .into_iter()
                .map(|(o, ms)| StationCommands {
                    operation: o,
                    commands: ms
                        .into_iter()
                        .map(|l| {
                            let ps = &sim.layout().products_at[o.0];
                            let cmd = if rng.random_bool(0.5) {
                                MachineCommand::Keep
                            } else {
                                MachineCommand::Convert(*ps.choose(&mut rng).unwrap())
                            };
                            (l, cmd)
                        })
                        .collect(),
                })
                .collect();
            sim.apply_actions(&cmds).unwrap();
            let out = sim.advance().unwrap();
            rewards.extend(out.rewards);
            each_tick(&sim);
        }
        (sim.trace(), rewards, sim.state().lots.clone())
    }

    fn desk() -> ScenarioConfig {
        generate_scenario(&ScenarioShape::desk(), 3).unwrap()
    }

    #[test]
    fn lots_are_conserved_every_tick() {
        let c = desk();
        let e = sample_episode(&c, DemandTier::High, 11);
        let total = e.total_lots();
        random_run(&c, &e, 5, |sim| {
            let (a, b, d, f) = sim.state().location_counts();
            assert_eq!(a + b + d + f, total);
            let queued: usize = sim.state().queues.iter().flatten().map(|q| q.len()).sum();
            assert_eq!(queued, b);
        });
    }

    #[test]
    fn same_seed_same_trace() {
        let c = desk();
        let e = sample_episode(&c, DemandTier::Medium, 2);
        let a = random_run(&c, &e, 9, |_| {}).0.to_jsonl();
        let b = random_run(&c, &e, 9, |_| {}).0.to_jsonl();
        assert_eq!(a, b);
    }

    #[test]
    fn random_play_passes_validator_and_final_reward_matches_objective() {
        let c = desk();
        for seed in 0..10 {
            let e = sample_episode(&c, DemandTier::High, seed);
            let (trace, rewards, lots) = random_run(&c, &e, seed, |_| {});
            let report = validate_trace(&c, &e, &trace).unwrap();
            assert!(report.passed(), "seed {seed}: {report}");
            let objective = objective_value(&c, &e, &lots).unwrap();
            assert_eq!(rewards.last().unwrap().leader, -(objective as f64));
            assert_eq!(rewards.len() as u32, e.horizon_shifts);
        }
    }

    fn unit_episode(c: &ScenarioConfig) -> EpisodeInstance {
        let mut e = sample_episode(c, DemandTier::Low, 0);
        e.initial_wip.clear();
        e.demand = vec![crate::scenario::LotSpec {
            product: ProductId(1),
            index: 0,
            units: 2,
            due: 12,
            release: 0,
            stage: 0,
        }];
        for (l, m) in e.initial_machines.iter_mut().enumerate() {
            m.product = ProductId(0);
            m.operation = OpId(l);
            m.busy_until = 0;
        }
        e
    }

    #[test]
    fn conversion_over_budget_idles() {
        let mut c = two_by_two();
        c.conversion_threshold = 2;
        let e = unit_episode(&c);
        let mut sim = Simulator::with_breakdowns(&c, &e, BreakdownPlan::none(2)).unwrap();
        sim.realize_maintenance().unwrap();
        let out = sim
            .apply_actions(&[StationCommands {
                operation: OpId(0),
                commands: vec![(MachineId(0), MachineCommand::Convert(ProductId(1)))],
            }])
            .unwrap();
        assert_eq!(out.outcomes, vec![(MachineId(0), MachineOutcome::IdleBudget)]);
        assert!(out.events.is_empty());
        assert_eq!(sim.state().machines[0].product_setup, ProductId(0));
    }

    #[test]
    fn conversion_then_processing() {
        let c = two_by_two();
        let e = unit_episode(&c);
        let mut sim = Simulator::with_breakdowns(&c, &e, BreakdownPlan::none(2)).unwrap();
        sim.realize_maintenance().unwrap();
        let out = sim
            .apply_actions(&[StationCommands {
                operation: OpId(0),
                commands: vec![(MachineId(0), MachineCommand::Convert(ProductId(1)))],
            }])
            .unwrap();
        assert_eq!(out.events[0].conversion_ticks, 3);
        assert_eq!(out.events[0].completion(), 5);
        let m = &sim.state().machines[0];
        assert_eq!((m.product_setup, m.shift_conversion_used, m.busy_until), (ProductId(1), 3, 5));
        for _ in 0..5 {
            sim.advance().unwrap();
        }
        let lot = &sim.state().lots[0];
        assert_eq!(lot.completion_times[0], Some(5));
        assert_eq!(sim.state().queue(OpId(1), ProductId(1)).len(), 1);
    }

    #[test]
    fn call_order_is_enforced() {
        let c = two_by_two();
        let e = unit_episode(&c);
        let mut sim = Simulator::with_breakdowns(&c, &e, BreakdownPlan::none(2)).unwrap();
        assert!(matches!(sim.apply_actions(&[]), Err(Error::Contract(_))));
        for _ in 0..sim.horizon() {
            sim.advance().unwrap();
        }
        assert!(matches!(sim.advance(), Err(Error::Contract(_))));
    }

    #[test]
    fn breakdown_during_processing_waits_for_completion() {
        let c = two_by_two();
        let e = unit_episode(&c);
        let mut plan = BreakdownPlan::none(2);
        plan.triggers[0].push_back((2, 3));
        let mut sim = Simulator::with_breakdowns(&c, &e, plan).unwrap();
        sim.realize_maintenance().unwrap();
        sim.apply_actions(&[StationCommands {
            operation: OpId(0),
            commands: vec![(MachineId(0), MachineCommand::Convert(ProductId(1)))],
        }])
        .unwrap();
        for _ in 0..5 {
            sim.advance().unwrap();
            sim.realize_maintenance().unwrap();
        }
        let m = &sim.state().machines[0];
        assert!(m.in_unscheduled_maintenance);
        assert_eq!(m.busy_until, 8);
        let log = sim.trace().maintenance;
        assert_eq!(log[0].start, 5);
        assert_eq!(log[0].end, 8);
    }
}
