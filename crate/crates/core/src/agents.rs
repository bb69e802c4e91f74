//! State encoders, actor-critic agents and checkpoints.
//!
//! Every agent (leader, per-operation follower or rule selector) is an [`Agent`]: an actor
//! network feeding an action [`Head`] and a separate critic network.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::VariantSpec;
use crate::dist::{argmax, beta_mode, beta_sample, beta_terms, categorical_terms, sample_categorical};
use crate::error::{Error, Result};
use crate::guard::FollowerIntent;
use crate::ids::{OpId, ProductId};
use crate::nn::Mlp;
use crate::scenario::{Layout, ScenarioConfig};
use crate::sim::Simulator;

pub const GOAL_DIM: usize = 3;
pub type Goal = [f64; GOAL_DIM];

/// Normalization constants shared by all encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Lot counts are divided by this and clipped to 1.
    pub count_cap: f64,
    /// Future shifts of demand shown per product.
    pub demand_slots: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            count_cap: 10.0,
            demand_slots: 4,
        }
    }
}

/// Planning window `[start, end)` in ticks used for the demand view and the guard.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: u32,
    pub end: u32,
}

impl Window {
    /// Consecutive blocks of `shifts` shifts, clipped to the horizon.
    pub fn containing(tick: u32, shift_ticks: u32, shifts: u32, horizon: u32) -> Window {
        let len = shift_ticks * shifts.max(1);
        let t = tick.min(horizon.saturating_sub(1));
        let start = t / len * len;
        Window {
            start,
            end: (start + len).min(horizon),
        }
    }
}

pub fn follower_obs_dim(config: &ScenarioConfig, layout: &Layout, o: OpId, enc: &EncoderConfig) -> usize {
    let np = layout.products_at[o.0].len();
    let nm = layout.stations[o.0].len();
    nm * (np + config.n_operations() + 3) + np * (2 + enc.demand_slots) + 2 + GOAL_DIM
}

pub fn leader_obs_dim(config: &ScenarioConfig, layout: &Layout, enc: &EncoderConfig) -> usize {
    (0..config.n_operations())
        .map(|o| follower_obs_dim(config, layout, OpId(o), enc) - GOAL_DIM)
        .sum()
}

fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Follower observation of operation `o`: machine block, product block, time features,
/// then the goal.
pub fn encode_follower_state(
    sim: &Simulator,
    o: OpId,
    goal: &Goal,
    window: Window,
    enc: &EncoderConfig,
) -> Vec<f64> {
    let config = sim.config();
    let layout = sim.layout();
    let state = sim.state();
    let t = state.tick;
    let s = config.shift_ticks;
    let products = &layout.products_at[o.0];
    let mut out = Vec::with_capacity(follower_obs_dim(config, layout, o, enc));

    for &l in &layout.stations[o.0] {
        let m = &state.machines[l.0];
        out.extend(products.iter().map(|&p| f64::from(u8::from(m.product_setup == p))));
        out.extend((0..config.n_operations()).map(|q| f64::from(u8::from(m.operation_setup.0 == q))));
        out.push(f64::from(u8::from(m.busy)));
        out.push(clip01(
            f64::from(m.shift_conversion_used) / f64::from(config.conversion_threshold.max(1)),
        ));
        out.push(clip01(f64::from(m.busy_until.saturating_sub(t)) / f64::from(s)));
    }

    let shift = t / s;
    let window_end_shift = window.end.div_ceil(s);
    let cap = enc.count_cap;
    for &p in products {
        let j = layout.stage_of(p, o).expect("product processed at o");
        let queue = state.queue(o, p);
        let late = queue.iter().filter(|&&i| state.lots[i].due < t).count();
        let mut demand = vec![0.0; enc.demand_slots];
        for lot in &state.lots {
            if lot.product != p || lot.stage > j || lot.completion_times[j].is_some() {
                continue;
            }
            let due_shift = lot.due / s;
            if due_shift == 0 || due_shift - 1 < shift || due_shift > window_end_shift {
                continue;
            }
            let k = (due_shift - 1 - shift) as usize;
            if k < enc.demand_slots {
                demand[k] += 1.0;
            }
        }
        out.push(clip01(queue.len() as f64 / cap));
        out.push(clip01(late as f64 / cap));
        out.extend(demand.into_iter().map(|d| clip01(d / cap)));
    }

    out.push(f64::from(t % s) / f64::from(s));
    let span = window.end.saturating_sub(window.start).max(1);
    out.push(clip01(f64::from(t.saturating_sub(window.start)) / f64::from(span)));
    out.extend_from_slice(goal);
    out
}

/// Concatenated goal-free follower observations of all operations.
pub fn encode_leader_state(sim: &Simulator, window: Window, enc: &EncoderConfig) -> Vec<f64> {
    let mut out = Vec::new();
    for o in 0..sim.config().n_operations() {
        let mut obs = encode_follower_state(sim, OpId(o), &[0.0; GOAL_DIM], window, enc);
        obs.truncate(obs.len() - GOAL_DIM);
        out.extend(obs);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Independent categoricals, one per group.
    Categorical { groups: usize, classes: usize },
    /// Independent Beta coordinates; two raw outputs per coordinate.
    Beta { dims: usize },
}

impl Head {
    pub fn output_dim(&self) -> usize {
        match *self {
            Head::Categorical { groups, classes } => groups * classes,
            Head::Beta { dims } => 2 * dims,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Chosen class per group; `None` for masked groups.
    Discrete(Vec<Option<usize>>),
    Continuous(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub logp: f64,
    pub value: f64,
}

/// Joint log-probability and entropy of an action and their gradients w.r.t. the actor output.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionTerms {
    pub logp: f64,
    pub entropy: f64,
    pub dlogp: Vec<f64>,
    pub dentropy: Vec<f64>,
}

pub fn action_terms(head: &Head, out: &[f64], action: &Action) -> Result<ActionTerms> {
    let n = out.len();
    let mut t = ActionTerms {
        logp: 0.0,
        entropy: 0.0,
        dlogp: vec![0.0; n],
        dentropy: vec![0.0; n],
    };
    match (head, action) {
        (&Head::Categorical { groups, classes }, Action::Discrete(choice)) => {
            if choice.len() != groups {
                return Err(Error::DimensionMismatch {
                    expected: groups,
                    got: choice.len(),
                });
            }
            for (g, c) in choice.iter().enumerate() {
                let Some(c) = *c else { continue };
                let span = g * classes..(g + 1) * classes;
                let ct = categorical_terms(&out[span.clone()], c);
                t.logp += ct.logp;
                t.entropy += ct.entropy;
                t.dlogp[span.clone()].copy_from_slice(&ct.dlogp);
                t.dentropy[span].copy_from_slice(&ct.dentropy);
            }
        }
        (&Head::Beta { dims }, Action::Continuous(x)) => {
            if x.len() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    got: x.len(),
                });
            }
            for (d, &xd) in x.iter().enumerate() {
                let bt = beta_terms(out[2 * d], out[2 * d + 1], xd);
                t.logp += bt.logp;
                t.entropy += bt.entropy;
                t.dlogp[2 * d..2 * d + 2].copy_from_slice(&bt.dlogp);
                t.dentropy[2 * d..2 * d + 2].copy_from_slice(&bt.dentropy);
            }
        }
        _ => return Err(Error::Contract("action kind does not match the head".into())),
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub name: String,
    pub actor: Mlp,
    pub critic: Mlp,
    pub head: Head,
}

impl Agent {
    pub fn new(name: impl Into<String>, obs_dim: usize, head: Head, hidden: &[usize], rng: &mut impl Rng) -> Agent {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(head.output_dim());
        sizes.push(1);
        Agent {
            name: name.into(),
            actor: Mlp::new(&actor_sizes, 0.01, rng),
            critic: Mlp::new(&sizes, 1.0, rng),
            head,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.critic.forward_one(obs)?[0])
    }

    /// Draw (or take the mode of) an action. `mask` disables categorical groups.
    pub fn act(&self, obs: &[f64], mask: Option<&[bool]>, mode: ActMode, rng: &mut impl Rng) -> Result<Decision> {
        let out = self.actor.forward_one(obs)?;
        let value = self.value(obs)?;
        let action = match self.head {
            Head::Categorical { groups, classes } => {
                if let Some(m) = mask {
                    if m.len() != groups {
                        return Err(Error::DimensionMismatch {
                            expected: groups,
                            got: m.len(),
                        });
                    }
                }
                Action::Discrete(
                    (0..groups)
                        .map(|g| {
                            if mask.is_some_and(|m| !m[g]) {
                                return None;
                            }
                            let logits = &out[g * classes..(g + 1) * classes];
                            Some(match mode {
                                ActMode::Sample => sample_categorical(logits, rng),
                                ActMode::Greedy => argmax(logits),
                            })
                        })
                        .collect(),
                )
            }
            Head::Beta { dims } => Action::Continuous(
                (0..dims)
                    .map(|d| match mode {
                        ActMode::Sample => beta_sample(out[2 * d], out[2 * d + 1], rng),
                        ActMode::Greedy => beta_mode(out[2 * d], out[2 * d + 1]),
                    })
                    .collect(),
            ),
        };
        let logp = action_terms(&self.head, &out, &action)?.logp;
        Ok(Decision { action, logp, value })
    }
}

/// Follower action for one station: a categorical per machine over `2 * np_o` classes where
/// class `2i` converts to `P_o[i]` and class `2i + 1` keeps the setup.
pub fn follower_head(layout: &Layout, o: OpId) -> Head {
    Head::Categorical {
        groups: layout.stations[o.0].len(),
        classes: 2 * layout.products_at[o.0].len(),
    }
}

pub fn follower_act(
    obs: &[f64],
    policy: &Agent,
    available: &[bool],
    mode: ActMode,
    rng: &mut impl Rng,
) -> Result<Decision> {
    policy.act(obs, Some(available), mode, rng)
}

/// Decode one machine's class into a conversion intent.
pub fn decode_intent(class: usize, products: &[ProductId]) -> FollowerIntent {
    FollowerIntent {
        convert: class % 2 == 0,
        candidate: products[class / 2],
    }
}

/// Goals for every operation, emitted once at the first decision point of a shift.
pub fn leader_act(
    sim: &Simulator,
    window: Window,
    policy: &Agent,
    enc: &EncoderConfig,
    mode: ActMode,
    rng: &mut impl Rng,
) -> Result<(Vec<Goal>, Vec<f64>, Decision)> {
    if !sim.is_shift_start() {
        return Err(Error::Contract(format!(
            "leader acted at tick {}, which is not a shift start",
            sim.tick()
        )));
    }
    let obs = encode_leader_state(sim, window, enc);
    let decision = policy.act(&obs, None, mode, rng)?;
    let Action::Continuous(x) = &decision.action else {
        return Err(Error::Contract("leader needs a Beta head".into()));
    };
    let goals = x
        .chunks(GOAL_DIM)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((goals, obs, decision))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained agents of one variant for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub scenario: String,
    pub fingerprint: String,
    pub variant: VariantSpec,
    pub encoder: EncoderConfig,
    pub window_shifts: u32,
    pub episodes_trained: u64,
    pub seed: u64,
    pub agents: Vec<Agent>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Load and check that the checkpoint was trained on a scenario with this fingerprint.
    pub fn load(path: impl AsRef<Path>, fingerprint: &str) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingCheckpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "checkpoint format {} is not supported",
                ck.format_version
            )));
        }
        if ck.fingerprint != fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: fingerprint.to_string(),
                found: ck.fingerprint,
            });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::rng::SimRng;
    use crate::scenario::{sample_episode, two_by_two, DemandTier, MaintenanceWindow};

    #[test]
    fn fresh_machine_encodes_idle_and_unused_budget() {
        let c = two_by_two();
        let e = sample_episode(&c, DemandTier::Low, 1);
        let sim = Simulator::reset(&c, &e).unwrap();
        let enc = EncoderConfig::default();
        let w = Window::containing(0, 12, 4, sim.horizon());
        let obs = encode_follower_state(&sim, OpId(0), &[0.5; 3], w, &enc);
        assert_eq!(obs.len(), follower_obs_dim(&c, sim.layout(), OpId(0), &enc));
        // Machine block: 2 product bits, 2 operation bits, Q, budget, next-available.
        assert_eq!(&obs[4..7], &[0.0, 0.0, 0.0]);
        assert_eq!(&obs[obs.len() - 3..], &[0.5; 3]);
        assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(obs, encode_follower_state(&sim, OpId(0), &[0.5; 3], w, &enc));
    }

    #[test]
    fn scheduled_maintenance_shows_busy_until_window_end() {
        let mut c = two_by_two();
        c.maintenance.push(MaintenanceWindow {
            machine: crate::MachineId(0),
            start: 0,
            end: 6,
        });
        let e = sample_episode(&c, DemandTier::Low, 1);
        let mut sim = Simulator::reset(&c, &e).unwrap();
        sim.realize_maintenance().unwrap();
        let w = Window::containing(0, 12, 4, sim.horizon());
        let obs = encode_follower_state(&sim, OpId(0), &[0.0; 3], w, &EncoderConfig::default());
        assert_eq!(obs[4], 1.0);
        assert_eq!(obs[6], 0.5);
    }

    #[test]
    fn uniform_policy_gives_quarter_probabilities() {
        let mut rng = SimRng::seed_from_u64(0);
        let mut agent = Agent::new("f", 3, Head::Categorical { groups: 2, classes: 4 }, &[8], &mut rng);
        for w in &mut agent.actor.weights {
            w.fill(0.0);
        }
        let d = agent.act(&[0.1, 0.2, 0.3], Some(&[true, false]), ActMode::Sample, &mut rng).unwrap();
        assert!((d.logp - 0.25f64.ln()).abs() < 1e-12);
        let Action::Discrete(choice) = &d.action else { panic!() };
        assert!(choice[1].is_none());
    }

    #[test]
    fn joint_logp_is_sum_of_machine_terms() {
        let mut rng = SimRng::seed_from_u64(5);
        let agent = Agent::new("f", 4, Head::Categorical { groups: 3, classes: 4 }, &[16], &mut rng);
        let obs = [0.3, 0.9, 0.1, 0.5];
        let d = agent.act(&obs, Some(&[true, true, true]), ActMode::Sample, &mut rng).unwrap();
        let out = agent.actor.forward_one(&obs).unwrap();
        let Action::Discrete(choice) = &d.action else { panic!() };
        let direct: f64 = choice
            .iter()
            .enumerate()
            .map(|(g, c)| {
                let z = &out[g * 4..g * 4 + 4];
                let norm: f64 = z.iter().map(|v| v.exp()).sum();
                (z[c.unwrap()].exp() / norm).ln()
            })
            .sum();
        assert!((d.logp - direct).abs() < 1e-12);
        let g1 = agent.act(&obs, None, ActMode::Greedy, &mut rng).unwrap();
        let g2 = agent.act(&obs, None, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(g1.action, g2.action);
    }

    #[test]
    fn leader_goals_are_in_unit_interval_and_only_at_shift_start() {
        let c = two_by_two();
        let e = sample_episode(&c, DemandTier::High, 2);
        let mut sim = Simulator::reset(&c, &e).unwrap();
        let enc = EncoderConfig::default();
        let mut rng = SimRng::seed_from_u64(9);
        let layout = sim.layout().clone();
        let dim = leader_obs_dim(&c, &layout, &enc);
        let leader = Agent::new("leader", dim, Head::Beta { dims: 3 * c.n_operations() }, &[16], &mut rng);
        let w = Window::containing(0, 12, 4, sim.horizon());
        for _ in 0..2000 {
            let (goals, _, _) = leader_act(&sim, w, &leader, &enc, ActMode::Sample, &mut rng).unwrap();
            assert_eq!(goals.len(), 2);
            assert!(goals.iter().flatten().all(|g| (0.0..=1.0).contains(g)));
        }
        let (a, _, _) = leader_act(&sim, w, &leader, &enc, ActMode::Greedy, &mut rng).unwrap();
        let (b, _, _) = leader_act(&sim, w, &leader, &enc, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(a, b);
        sim.advance().unwrap();
        assert!(matches!(
            leader_act(&sim, w, &leader, &enc, ActMode::Greedy, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn decode_classes() {
        let ps = [ProductId(3), ProductId(5)];
        assert_eq!(decode_intent(0, &ps), FollowerIntent { convert: true, candidate: ProductId(3) });
        assert_eq!(decode_intent(3, &ps), FollowerIntent { convert: false, candidate: ProductId(5) });
    }

    #[test]
    fn window_blocks() {
        assert_eq!(Window::containing(50, 12, 4, 120), Window { start: 48, end: 96 });
        assert_eq!(Window::containing(100, 12, 4, 120), Window { start: 96, end: 120 });
        assert_eq!(Window::containing(120, 12, 4, 120), Window { start: 96, end: 120 });
    }
}
