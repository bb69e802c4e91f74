//! Dispatching rules, model variants and rule-selection agents.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    follower_head, follower_obs_dim, leader_obs_dim, ActMode, Action, Agent, Decision, EncoderConfig,
    Head, GOAL_DIM,
};
use crate::error::{Error, Result};
use crate::ids::{MachineId, OpId, ProductId};
use crate::rng::{stream_rng, streams};
use crate::runner::Controller;
use crate::scenario::{Layout, ScenarioConfig, Setup};
use crate::sim::{MachineCommand, Simulator, StationCommands};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SRM")]
    Srm,
    #[serde(rename = "ORM")]
    Orm,
    #[serde(rename = "LFSRM")]
    Lfsrm,
    #[serde(rename = "LFORM")]
    Lform,
    #[serde(rename = "LFORM-RC")]
    LformRc,
    #[serde(rename = "DRL-JSSP")]
    DrlJssp,
    #[serde(rename = "DRL-DFJSS")]
    DrlDfjss,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Srm,
        Variant::Orm,
        Variant::Lfsrm,
        Variant::Lform,
        Variant::LformRc,
        Variant::DrlJssp,
        Variant::DrlDfjss,
    ];
    pub const ABLATION: [Variant; 5] = [
        Variant::Srm,
        Variant::Orm,
        Variant::Lfsrm,
        Variant::Lform,
        Variant::LformRc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Srm => "SRM",
            Variant::Orm => "ORM",
            Variant::Lfsrm => "LFSRM",
            Variant::Lform => "LFORM",
            Variant::LformRc => "LFORM-RC",
            Variant::DrlJssp => "DRL-JSSP",
            Variant::DrlDfjss => "DRL-DFJSS",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.to_ascii_uppercase().replace('_', "-");
        let up = up.strip_suffix("-STYLE").unwrap_or(&up);
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == up)
            .ok_or_else(|| Error::Parse(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Every follower receives the leader's reward.
    Shared,
    OperationWise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerOperation,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Direct,
    RuleSelection { scope: Scope },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant: Variant,
    pub leader: bool,
    pub reward: RewardMode,
    pub guard: bool,
    pub action: ActionSpace,
}

impl VariantSpec {
    pub fn of(variant: Variant) -> VariantSpec {
        use ActionSpace::*;
        use RewardMode::*;
        let (leader, reward, guard, action) = match variant {
            Variant::Srm => (false, Shared, false, Direct),
            Variant::Orm => (false, OperationWise, false, Direct),
            Variant::Lfsrm => (true, Shared, false, Direct),
            Variant::Lform => (true, OperationWise, false, Direct),
            Variant::LformRc => (true, OperationWise, true, Direct),
            Variant::DrlJssp => (
                false,
                OperationWise,
                false,
                RuleSelection {
                    scope: Scope::PerOperation,
                },
            ),
            Variant::DrlDfjss => (
                false,
                OperationWise,
                false,
                RuleSelection {
                    scope: Scope::Global,
                },
            ),
        };
        VariantSpec {
            variant,
            leader,
            reward,
            guard,
            action,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let direct = self.action == ActionSpace::Direct;
        if self.guard && !direct {
            return Err(Error::InconsistentVariant(
                "the conversion guard needs direct machine actions".into(),
            ));
        }
        if self.leader && !direct {
            return Err(Error::InconsistentVariant(
                "leader goals need direct follower actions".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchRule {
    /// Shortest processing time of the head lot.
    Spt,
    /// Earliest due date of the head lot.
    Edd,
    /// Earliest arrival at the operation.
    Fifo,
    /// Product with the most queued lots.
    LongestQueue,
}

pub fn rule_set(scope: Scope) -> [DispatchRule; 3] {
    match scope {
        Scope::PerOperation => [DispatchRule::Spt, DispatchRule::Edd, DispatchRule::Fifo],
        Scope::Global => [DispatchRule::Spt, DispatchRule::Edd, DispatchRule::LongestQueue],
    }
}

/// Commands for the available machines of station `o` under `rule`.
///
/// Machines choose in ascending id order; each picks among products whose next unclaimed
/// lot it can start now (compatible, within the shift conversion budget, clear of scheduled
/// maintenance). Ties prefer the current setup, then the lower product id.
pub fn rule_commands(
    rule: DispatchRule,
    sim: &Simulator,
    o: OpId,
    machines: &[MachineId],
) -> Vec<(MachineId, MachineCommand)> {
    let config = sim.config();
    let layout = sim.layout();
    let state = sim.state();
    let t = state.tick;
    let products = &layout.products_at[o.0];
    let mut claimed = vec![0usize; products.len()];
    let mut out = Vec::with_capacity(machines.len());
    for &l in machines {
        let m = &state.machines[l.0];
        let mut best: Option<((i64, u8, ProductId), usize)> = None;
        for (i, &p) in products.iter().enumerate() {
            let queue = state.queue(o, p);
            let Some(&lot_id) = queue.get(claimed[i]) else {
                continue;
            };
            if !layout.is_compatible(l, p) {
                continue;
            }
            let conv = config.conversion_ticks(
                m.setup(),
                Setup {
                    product: p,
                    operation: o,
                },
            );
            if conv > 0 && m.shift_conversion_used + conv > config.conversion_threshold {
                continue;
            }
            let lot = &state.lots[lot_id];
            let proc = config.route(p)[lot.stage].unit_time * lot.units;
            if !sim.clear_of_maintenance(l, t, t + conv + proc) {
                continue;
            }
            let primary = match rule {
                DispatchRule::Spt => i64::from(proc),
                DispatchRule::Edd => i64::from(lot.due),
                DispatchRule::Fifo => i64::from(lot.arrival_tick_at_stage),
                DispatchRule::LongestQueue => -((queue.len() - claimed[i]) as i64),
            };
            let key = (primary, u8::from(conv > 0), p);
            if best.is_none_or(|(k, _)| key < k) {
                best = Some((key, i));
            }
        }
        let cmd = match best {
            Some((_, i)) => {
                claimed[i] += 1;
                let p = products[i];
                if p == m.product_setup {
                    MachineCommand::Keep
                } else {
                    MachineCommand::Convert(p)
                }
            }
            None => MachineCommand::Keep,
        };
        out.push((l, cmd));
    }
    out
}

/// Runs one fixed dispatching rule at every station.
pub struct RuleController(pub DispatchRule);

impl Controller for RuleController {
    fn decide(&mut self, sim: &Simulator, available: &[(OpId, Vec<MachineId>)]) -> Result<Vec<StationCommands>> {
        Ok(available
            .iter()
            .map(|(o, machines)| StationCommands {
                operation: *o,
                commands: rule_commands(self.0, sim, *o, machines),
            })
            .collect())
    }
}

/// Pick a rule with a rule-selection agent.
pub fn rule_select_act(
    obs: &[f64],
    policy: &Agent,
    rules: &[DispatchRule],
    mode: ActMode,
    rng: &mut impl Rng,
) -> Result<(DispatchRule, Decision)> {
    if rules.is_empty() {
        return Err(Error::Contract("empty rule set".into()));
    }
    let decision = policy.act(obs, None, mode, rng)?;
    let Action::Discrete(choice) = &decision.action else {
        return Err(Error::Contract("rule selection needs a categorical head".into()));
    };
    let k = choice.first().copied().flatten().unwrap_or(0);
    let rule = *rules
        .get(k)
        .ok_or_else(|| Error::DimensionMismatch {
            expected: rules.len(),
            got: k + 1,
        })?;
    Ok((rule, decision))
}

/// Agents of one variant and the role of each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: VariantSpec,
    pub agents: Vec<Agent>,
}

impl Model {
    /// Index of the leader agent, when the variant has one.
    pub fn leader(&self) -> Option<usize> {
        self.spec.leader.then(|| self.agents.len() - 1)
    }

    /// Index of the agent deciding for operation `o`.
    pub fn follower(&self, o: OpId) -> usize {
        match self.spec.action {
            ActionSpace::RuleSelection {
                scope: Scope::Global,
            } => 0,
            _ => o.0,
        }
    }
}

/// Observation width of the global rule-selection agent.
pub fn global_obs_dim(config: &ScenarioConfig, layout: &Layout, enc: &EncoderConfig) -> usize {
    (0..config.n_operations())
        .map(|o| follower_obs_dim(config, layout, OpId(o), enc) - GOAL_DIM)
        .sum()
}

/// Freshly initialized agents for `spec` on `config`.
pub fn build_variant(
    spec: VariantSpec,
    config: &ScenarioConfig,
    enc: &EncoderConfig,
    hidden: &[usize],
    seed: u64,
) -> Result<Model> {
    spec.validate()?;
    let layout = Layout::new(config);
    let mut rng = stream_rng(seed, streams::INIT);
    let mut agents = Vec::new();
    match spec.action {
        ActionSpace::Direct => {
            for o in 0..config.n_operations() {
                let o = OpId(o);
                let dim = follower_obs_dim(config, &layout, o, enc);
                agents.push(Agent::new(format!("follower-{o}"), dim, follower_head(&layout, o), hidden, &mut rng));
            }
        }
        ActionSpace::RuleSelection { scope } => {
            let head = Head::Categorical {
                groups: 1,
                classes: rule_set(scope).len(),
            };
            match scope {
                Scope::PerOperation => {
                    for o in 0..config.n_operations() {
                        let o = OpId(o);
                        let dim = follower_obs_dim(config, &layout, o, enc);
                        agents.push(Agent::new(format!("selector-{o}"), dim, head, hidden, &mut rng));
                    }
                }
                Scope::Global => {
                    let dim = global_obs_dim(config, &layout, enc);
                    agents.push(Agent::new("selector", dim, head, hidden, &mut rng));
                }
            }
        }
    }
    if spec.leader {
        let dim = leader_obs_dim(config, &layout, enc);
        let head = Head::Beta {
            dims: GOAL_DIM * config.n_operations(),
        };
        agents.push(Agent::new("leader", dim, head, hidden, &mut rng));
    }
    Ok(Model { spec, agents })
}
