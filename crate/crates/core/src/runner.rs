//! Episode driver: the per-tick loop of maintenance, decisions and time advance.

use crate::error::Result;
use crate::factory::{LotState, Trace};
use crate::ids::{MachineId, OpId};
use crate::scenario::{EpisodeInstance, ScenarioConfig};
use crate::sim::{ShiftRewards, Simulator, StationCommands};

/// Decision logic plugged into [`run_episode`].
pub trait Controller {
    /// Called at the first decision point of every shift, before `decide`.
    fn shift_start(&mut self, _sim: &Simulator) -> Result<()> {
        Ok(())
    }

    /// Commands for the stations that have at least one available machine.
    fn decide(&mut self, sim: &Simulator, available: &[(OpId, Vec<MachineId>)]) -> Result<Vec<StationCommands>>;

    fn shift_end(&mut self, _sim: &Simulator, _rewards: &ShiftRewards) -> Result<()> {
        Ok(())
    }

    fn episode_end(&mut self, _sim: &Simulator) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRun {
    pub trace: Trace,
    pub lots: Vec<LotState>,
    pub rewards: Vec<ShiftRewards>,
}

impl EpisodeRun {
    /// Sum of the leader rewards over all shifts.
    pub fn team_reward(&self) -> f64 {
        self.rewards.iter().map(|r| r.leader).sum()
    }
}

pub fn run_episode(
    config: &ScenarioConfig,
    episode: &EpisodeInstance,
    controller: &mut dyn Controller,
) -> Result<EpisodeRun> {
    let mut sim = Simulator::reset(config, episode)?;
    let mut rewards = Vec::with_capacity(episode.horizon_shifts as usize);
    while !sim.is_done() {
        sim.realize_maintenance()?;
        if sim.is_shift_start() {
            controller.shift_start(&sim)?;
        }
        let available = sim.available_by_station();
        if !available.is_empty() {
            let commands = controller.decide(&sim, &available)?;
            sim.apply_actions(&commands)?;
        }
        let out = sim.advance()?;
        if let Some(r) = out.rewards {
            controller.shift_end(&sim, &r)?;
            rewards.push(r);
        }
    }
    controller.episode_end(&sim)?;
    Ok(EpisodeRun {
        trace: sim.trace(),
        lots: sim.state().lots.clone(),
        rewards,
    })
}
