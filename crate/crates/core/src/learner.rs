//! PPO training: rollout collection, advantage estimation, clipped updates, checkpoint
//! selection and rolling-horizon inference.

use std::ops::Range;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    action_terms, decode_intent, encode_follower_state, encode_leader_state, follower_act, leader_act,
    ActMode, Action, Agent, Checkpoint, Decision, EncoderConfig, Goal, Window, CHECKPOINT_VERSION, GOAL_DIM,
};
use crate::baselines::{build_variant, rule_commands, rule_select_act, rule_set, ActionSpace, Model, RewardMode, Scope, VariantSpec};
use crate::error::{Error, Result};
use crate::guard::{big_number, decide_conversion, score_urgency, CapacityView, GuardRecord};
use crate::ids::{MachineId, OpId};
use crate::nn::{clip_global_norm, stack_rows, Adam, MlpGrad};
use crate::rng::{derive_seed, stream_rng, streams, SimRng};
use crate::runner::{run_episode, Controller, EpisodeRun};
use crate::scenario::{sample_episode, DemandTier, EpisodeInstance, ScenarioConfig};
use crate::sim::{ShiftRewards, Simulator, StationCommands};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub clip: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub epochs_per_update: usize,
    pub rollout_episodes: usize,
    pub training_shift_horizon: u32,
    pub hidden: Vec<usize>,
    pub workers: usize,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 1e-4,
            discount: 0.99,
            clip: 0.2,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            epochs_per_update: 4,
            rollout_episodes: 8,
            training_shift_horizon: 4,
            hidden: vec![256, 256],
            workers: 1,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.to_string()));
        if self.batch_size == 0 || self.epochs_per_update == 0 || self.rollout_episodes == 0 {
            return fail("batch size, epochs and rollout episodes must be positive");
        }
        if self.training_shift_horizon == 0 || self.workers == 0 {
            return fail("training horizon and worker count must be positive");
        }
        if !(self.learning_rate > 0.0 && self.discount > 0.0 && self.discount <= 1.0) {
            return fail("learning rate must be positive and discount in (0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return fail("clip must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda must be in [0, 1]");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.max_grad_norm <= 0.0 {
            return fail("loss coefficients must be non-negative and the norm cap positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub agent: usize,
    pub obs: Vec<f64>,
    pub action: Action,
    pub logp: f64,
    pub value: f64,
    /// Nonzero only on an agent's last transition of a shift.
    pub reward: f64,
    /// Last transition of the episode for this agent.
    pub done: bool,
    pub shift: u32,
    pub tick: u32,
}

/// One agent's transitions of one episode; the episode end is a truncation, so the
/// critic's value of the final observation is kept for bootstrapping.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub transitions: Vec<Transition>,
    pub bootstrap: f64,
}

/// A goal emission of the leader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalEmission {
    pub shift: u32,
    pub tick: u32,
    pub goals: Vec<Goal>,
}

/// Runs a [`Model`] inside the episode loop, optionally recording transitions.
pub struct PolicyController<'m> {
    model: &'m Model,
    enc: &'m EncoderConfig,
    mode: ActMode,
    rng: SimRng,
    window_shifts: u32,
    big_number: u64,
    record: bool,
    goals: Vec<Goal>,
    open: Vec<Vec<Transition>>,
    pending: Vec<f64>,
    pub segments: Vec<Segment>,
    pub agent_rewards: Vec<f64>,
    pub guard_log: Vec<GuardRecord>,
    pub goal_log: Vec<GoalEmission>,
}

impl<'m> PolicyController<'m> {
    pub fn new(
        model: &'m Model,
        enc: &'m EncoderConfig,
        mode: ActMode,
        rng: SimRng,
        window_shifts: u32,
        big_number: u64,
        record: bool,
    ) -> Self {
        let n = model.agents.len();
        PolicyController {
            model,
            enc,
            mode,
            rng,
            window_shifts,
            big_number,
            record,
            goals: Vec::new(),
            open: vec![Vec::new(); n],
            pending: vec![0.0; n],
            segments: Vec::new(),
            agent_rewards: vec![0.0; n],
            guard_log: Vec::new(),
            goal_log: Vec::new(),
        }
    }

    fn window(&self, sim: &Simulator) -> Window {
        Window::containing(sim.tick(), sim.config().shift_ticks, self.window_shifts, sim.horizon())
    }

    fn goal(&self, o: OpId) -> Goal {
        self.goals.get(o.0).copied().unwrap_or([0.0; GOAL_DIM])
    }

    fn push(&mut self, agent: usize, obs: Vec<f64>, decision: Decision, sim: &Simulator) {
        if !self.record {
            return;
        }
        let reward = std::mem::take(&mut self.pending[agent]);
        self.open[agent].push(Transition {
            agent,
            obs,
            action: decision.action,
            logp: decision.logp,
            value: decision.value,
            reward,
            done: false,
            shift: sim.state().shift_index,
            tick: sim.tick(),
        });
    }

    fn global_obs(&self, sim: &Simulator, window: Window) -> Vec<f64> {
        encode_leader_state(sim, window, self.enc)
    }

    fn direct_station(
        &mut self,
        sim: &Simulator,
        o: OpId,
        available: &[MachineId],
        window: Window,
    ) -> Result<Vec<(MachineId, crate::sim::MachineCommand)>> {
        let agent_ix = self.model.follower(o);
        let layout = sim.layout();
        let station = &layout.stations[o.0];
        let products = &layout.products_at[o.0];
        let mask: Vec<bool> = station.iter().map(|l| available.contains(l)).collect();
        let obs = encode_follower_state(sim, o, &self.goal(o), window, self.enc);
        let agent = &self.model.agents[agent_ix];
        let decision = follower_act(&obs, agent, &mask, self.mode, &mut self.rng)?;
        let Action::Discrete(choice) = &decision.action else {
            return Err(Error::Contract("follower needs a categorical head".into()));
        };
        let mut guard = None;
        let mut commands = Vec::with_capacity(available.len());
        for (g, &l) in station.iter().enumerate() {
            let Some(class) = choice[g] else { continue };
            let intent = decode_intent(class, products);
            let machine = &sim.state().machines[l.0];
            let cmd = if self.model.spec.guard {
                let (view, urgency) = guard.get_or_insert_with(|| {
                    let view = CapacityView::from_sim(sim, o, window.end, self.big_number);
                    let setups: Vec<_> = station.iter().map(|m| sim.state().machines[m.0].product_setup).collect();
                    let urgency = score_urgency(&view, &setups);
                    (view, urgency)
                });
                let compatible: Vec<bool> = products.iter().map(|&p| layout.is_compatible(l, p)).collect();
                let decision = decide_conversion(intent, machine, view, urgency, &compatible)?;
                self.guard_log.push(GuardRecord {
                    tick: sim.tick(),
                    machine: l,
                    operation: o,
                    intent,
                    current: machine.product_setup,
                    decision,
                });
                decision.command(machine)
            } else {
                intent.command()
            };
            commands.push((l, cmd));
        }
        self.push(agent_ix, obs, decision, sim);
        Ok(commands)
    }
}

impl Controller for PolicyController<'_> {
    fn shift_start(&mut self, sim: &Simulator) -> Result<()> {
        let n_ops = sim.config().n_operations();
        match self.model.leader() {
            Some(ix) => {
                let window = self.window(sim);
                let (goals, obs, decision) =
                    leader_act(sim, window, &self.model.agents[ix], self.enc, self.mode, &mut self.rng)?;
                self.goals = goals.clone();
                self.goal_log.push(GoalEmission {
                    shift: sim.state().shift_index,
                    tick: sim.tick(),
                    goals,
                });
                self.push(ix, obs, decision, sim);
            }
            None => self.goals = vec![[0.0; GOAL_DIM]; n_ops],
        }
        Ok(())
    }

    fn decide(&mut self, sim: &Simulator, available: &[(OpId, Vec<MachineId>)]) -> Result<Vec<StationCommands>> {
        let window = self.window(sim);
        let mut out = Vec::with_capacity(available.len());
        match self.model.spec.action {
            ActionSpace::Direct => {
                for (o, ms) in available {
                    let commands = self.direct_station(sim, *o, ms, window)?;
                    out.push(StationCommands {
                        operation: *o,
                        commands,
                    });
                }
            }
            ActionSpace::RuleSelection {
                scope: Scope::PerOperation,
            } => {
                let rules = rule_set(Scope::PerOperation);
                for (o, ms) in available {
                    let ix = self.model.follower(*o);
                    let obs = encode_follower_state(sim, *o, &[0.0; GOAL_DIM], window, self.enc);
                    let (rule, decision) = rule_select_act(&obs, &self.model.agents[ix], &rules, self.mode, &mut self.rng)?;
                    out.push(StationCommands {
                        operation: *o,
                        commands: rule_commands(rule, sim, *o, ms),
                    });
                    self.push(ix, obs, decision, sim);
                }
            }
            ActionSpace::RuleSelection { scope: Scope::Global } => {
                let rules = rule_set(Scope::Global);
                let obs = self.global_obs(sim, window);
                let (rule, decision) = rule_select_act(&obs, &self.model.agents[0], &rules, self.mode, &mut self.rng)?;
                for (o, ms) in available {
                    out.push(StationCommands {
                        operation: *o,
                        commands: rule_commands(rule, sim, *o, ms),
                    });
                }
                self.push(0, obs, decision, sim);
            }
        }
        Ok(out)
    }

    fn shift_end(&mut self, _sim: &Simulator, rewards: &ShiftRewards) -> Result<()> {
        let routed = route_rewards(self.model, rewards);
        for (ix, r) in routed.into_iter().enumerate() {
            self.agent_rewards[ix] += r;
            match self.open[ix].last_mut() {
                Some(t) => t.reward += r,
                None => self.pending[ix] += r,
            }
        }
        Ok(())
    }

    fn episode_end(&mut self, sim: &Simulator) -> Result<()> {
        if !self.record {
            return Ok(());
        }
        let window = self.window(sim);
        for ix in 0..self.model.agents.len() {
            let mut transitions = std::mem::take(&mut self.open[ix]);
            let Some(last) = transitions.last_mut() else {
                self.segments.push(Segment {
                    transitions,
                    bootstrap: 0.0,
                });
                continue;
            };
            last.done = true;
            let obs = if Some(ix) == self.model.leader() {
                self.global_obs(sim, window)
            } else {
                match self.model.spec.action {
                    ActionSpace::Direct => encode_follower_state(sim, OpId(ix), &self.goal(OpId(ix)), window, self.enc),
                    ActionSpace::RuleSelection { scope: Scope::PerOperation } => {
                        encode_follower_state(sim, OpId(ix), &[0.0; GOAL_DIM], window, self.enc)
                    }
                    ActionSpace::RuleSelection { scope: Scope::Global } => self.global_obs(sim, window),
                }
            };
            let bootstrap = self.model.agents[ix].value(&obs)?;
            self.segments.push(Segment { transitions, bootstrap });
        }
        Ok(())
    }
}

/// Per-agent share of a shift's rewards under the variant's reward mode.
pub fn route_rewards(model: &Model, rewards: &ShiftRewards) -> Vec<f64> {
    let n = model.agents.len();
    let mut out = vec![0.0; n];
    let operation_total: f64 = rewards.operation.iter().sum();
    for (ix, slot) in out.iter_mut().enumerate() {
        *slot = if Some(ix) == model.leader() {
            rewards.leader
        } else {
            match (model.spec.reward, model.spec.action) {
                (RewardMode::Shared, _) => rewards.leader,
                (RewardMode::OperationWise, ActionSpace::RuleSelection { scope: Scope::Global }) => operation_total,
                (RewardMode::OperationWise, _) => rewards.operation[ix],
            }
        };
    }
    out
}

/// Advantages and returns of one segment by the GAE recursion; `bootstrap` is the value
/// after the last step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    discount: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if rewards.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: rewards.len(),
            got: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + discount * next_value - values[t];
        acc = delta + discount * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shift to mean 0 and scale to standard deviation 1.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-12 {
            *a /= std;
        }
    }
}

/// A transition ready for the PPO loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: Action,
    pub old_logp: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Samples of one agent with normalized advantages.
pub fn prepare_samples(segments: &[Segment], cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for seg in segments.iter().filter(|s| !s.transitions.is_empty()) {
        let rewards: Vec<f64> = seg.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = seg.transitions.iter().map(|t| t.value).collect();
        let (adv, ret) = compute_gae(&rewards, &values, seg.bootstrap, cfg.discount, cfg.gae_lambda)?;
        for ((t, a), r) in seg.transitions.iter().zip(adv).zip(ret) {
            samples.push(Sample {
                obs: t.obs.clone(),
                action: t.action.clone(),
                old_logp: t.logp,
                advantage: a,
                ret: r,
            });
        }
    }
    let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
    normalize_advantages(&mut adv);
    for (s, a) in samples.iter_mut().zip(adv) {
        s.advantage = a;
    }
    Ok(samples)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Mean PPO loss over `batch` and its gradients for the actor and the critic.
pub fn ppo_loss(agent: &Agent, batch: &[Sample], cfg: &TrainConfig) -> Result<(LossStats, MlpGrad, MlpGrad)> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let dim = agent.obs_dim();
    for s in batch {
        if s.obs.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.obs.len(),
            });
        }
    }
    let x = stack_rows(batch.iter().map(|s| s.obs.as_slice()), dim);
    let (out, actor_acts) = agent.actor.forward_train(x.view())?;
    let (values, critic_acts) = agent.critic.forward_train(x.view())?;
    let b = batch.len() as f64;
    let mut dout = Array2::zeros(out.raw_dim());
    let mut dvalue = Array2::zeros(values.raw_dim());
    let mut stats = LossStats::default();
    for (i, s) in batch.iter().enumerate() {
        let row = out.row(i);
        let terms = action_terms(&agent.head, row.as_slice().expect("row-major"), &s.action)?;
        let ratio = (terms.logp - s.old_logp).exp();
        let surr1 = ratio * s.advantage;
        let surr2 = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * s.advantage;
        let dpolicy_dlogp = if surr1 <= surr2 { -s.advantage * ratio } else { 0.0 };
        for k in 0..terms.dlogp.len() {
            dout[[i, k]] = (dpolicy_dlogp * terms.dlogp[k] - cfg.entropy_coef * terms.dentropy[k]) / b;
        }
        let v = values[[i, 0]];
        dvalue[[i, 0]] = cfg.value_coef * (v - s.ret) / b;
        stats.policy -= surr1.min(surr2) / b;
        stats.value += 0.5 * (v - s.ret).powi(2) / b;
        stats.entropy += terms.entropy / b;
        stats.approx_kl += (s.old_logp - terms.logp) / b;
        if (ratio - 1.0).abs() > cfg.clip {
            stats.clip_fraction += 1.0 / b;
        }
    }
    stats.total = stats.policy + cfg.value_coef * stats.value - cfg.entropy_coef * stats.entropy;
    if !stats.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!("{stats:?}")));
    }
    let ga = agent.actor.backward(&actor_acts, dout);
    let gc = agent.critic.backward(&critic_acts, dvalue);
    if !ga.is_finite() || !gc.is_finite() {
        return Err(Error::NonFiniteLoss("non-finite gradient".into()));
    }
    Ok((stats, ga, gc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentOptimizer {
    pub actor: Adam,
    pub critic: Adam,
}

impl AgentOptimizer {
    pub fn new(agent: &Agent, lr: f64) -> Self {
        AgentOptimizer {
            actor: Adam::new(lr, agent.actor.n_params()),
            critic: Adam::new(lr, agent.critic.n_params()),
        }
    }
}

/// Clipped-surrogate update over several epochs of shuffled minibatches; returns mean
/// statistics per epoch. On a non-finite loss the update stops before touching the
/// parameters of the offending minibatch.
pub fn ppo_update(
    agent: &mut Agent,
    opt: &mut AgentOptimizer,
    samples: &[Sample],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<LossStats>> {
    if samples.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs_per_update);
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        let mut mean = LossStats::default();
        let mut count = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (stats, mut ga, mut gc) = ppo_loss(agent, &batch, cfg)?;
            clip_global_norm(&mut [&mut ga, &mut gc], cfg.max_grad_norm);
            opt.actor.step(&mut agent.actor, &ga);
            opt.critic.step(&mut agent.critic, &gc);
            mean.total += stats.total;
            mean.policy += stats.policy;
            mean.value += stats.value;
            mean.entropy += stats.entropy;
            mean.approx_kl += stats.approx_kl;
            mean.clip_fraction += stats.clip_fraction;
            count += 1.0;
        }
        for v in [
            &mut mean.total,
            &mut mean.policy,
            &mut mean.value,
            &mut mean.entropy,
            &mut mean.approx_kl,
            &mut mean.clip_fraction,
        ] {
            *v /= count;
        }
        epochs.push(mean);
    }
    Ok(epochs)
}

/// Episode instance number `index` of a training run.
pub fn training_episode(config: &ScenarioConfig, tier: DemandTier, seed: u64, index: u64, shifts: u32) -> EpisodeInstance {
    let windowed = config.with_horizon(shifts.min(config.horizon_shifts));
    let base = derive_seed(seed, streams::TRAIN_EPISODE);
    sample_episode(&windowed, tier, derive_seed(base, index))
}

/// Outcome of one rollout episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub index: u64,
    pub team_reward: f64,
    pub agent_rewards: Vec<f64>,
    pub segments: Vec<Segment>,
    pub guard_overrides: usize,
}

fn rollout_one(
    config: &ScenarioConfig,
    tier: DemandTier,
    model: &Model,
    cfg: &TrainConfig,
    seed: u64,
    index: u64,
    mode: ActMode,
) -> Result<EpisodeResult> {
    let episode = training_episode(config, tier, seed, index, cfg.training_shift_horizon);
    let rng = stream_rng(derive_seed(seed, index), streams::POLICY);
    let bn = big_number(config, &episode);
    let mut ctl = PolicyController::new(model, &cfg.encoder, mode, rng, cfg.training_shift_horizon, bn, true);
    let run = run_episode(config, &episode, &mut ctl)?;
    Ok(EpisodeResult {
        index,
        team_reward: run.team_reward(),
        agent_rewards: ctl.agent_rewards,
        segments: ctl.segments,
        guard_overrides: ctl.guard_log.iter().filter(|g| g.overridden()).count(),
    })
}

/// Roll out episodes `indices` with the current policies, ordered by episode index
/// whatever the worker count.
pub fn collect_rollouts(
    config: &ScenarioConfig,
    tier: DemandTier,
    model: &Model,
    cfg: &TrainConfig,
    indices: Range<u64>,
    seed: u64,
) -> Result<Vec<EpisodeResult>> {
    collect_with_mode(config, tier, model, cfg, indices, seed, ActMode::Sample)
}

fn collect_with_mode(
    config: &ScenarioConfig,
    tier: DemandTier,
    model: &Model,
    cfg: &TrainConfig,
    indices: Range<u64>,
    seed: u64,
    mode: ActMode,
) -> Result<Vec<EpisodeResult>> {
    let run = |i: u64| rollout_one(config, tier, model, cfg, seed, i, mode);
    #[cfg(feature = "parallel")]
    if cfg.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Validation(format!("worker pool: {e}")))?;
        return pool.install(|| indices.into_par_iter().map(run).collect());
    }
    indices.map(run).collect()
}

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: u64,
    pub team_reward: f64,
    pub agent_rewards: Vec<f64>,
}

pub fn curve_to_csv(model: &Model, curve: &[CurveRow]) -> String {
    let mut out = String::from("episode,team_reward");
    for a in &model.agents {
        out.push(',');
        out.push_str(&a.name);
    }
    out.push('\n');
    for row in curve {
        out.push_str(&format!("{},{}", row.episode, row.team_reward));
        for r in &row.agent_rewards {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
    }
    out
}

pub struct TrainOutcome {
    /// Policies with the best 100-episode moving-average team reward.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub curve: Vec<CurveRow>,
    pub best_window_mean: Option<f64>,
    pub updates: Vec<Vec<LossStats>>,
}

pub const SELECTION_WINDOW: usize = 100;

fn checkpoint(config: &ScenarioConfig, model: &Model, cfg: &TrainConfig, episodes: u64, seed: u64) -> Checkpoint {
    Checkpoint {
        format_version: CHECKPOINT_VERSION,
        scenario: config.name.clone(),
        fingerprint: config.fingerprint(),
        variant: model.spec,
        encoder: cfg.encoder.clone(),
        window_shifts: cfg.training_shift_horizon,
        episodes_trained: episodes,
        seed,
        agents: model.agents.clone(),
    }
}

/// Train `spec` for `total_episodes` episodes on `training_shift_horizon`-shift windows.
pub fn train(
    config: &ScenarioConfig,
    tier: DemandTier,
    spec: VariantSpec,
    cfg: &TrainConfig,
    total_episodes: u64,
    seed: u64,
    mut progress: impl FnMut(&CurveRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = build_variant(spec, config, &cfg.encoder, &cfg.hidden, seed)?;
    let mut opts: Vec<AgentOptimizer> = model
        .agents
        .iter()
        .map(|a| AgentOptimizer::new(a, cfg.learning_rate))
        .collect();
    let mut shuffle_rng = stream_rng(seed, streams::SHUFFLE);
    let mut curve: Vec<CurveRow> = Vec::with_capacity(total_episodes as usize);
    let mut best = checkpoint(config, &model, cfg, 0, seed);
    let mut best_mean: Option<f64> = None;
    let mut updates = Vec::new();
    let window = SELECTION_WINDOW.min(total_episodes as usize).max(1);
    let mut done = 0u64;
    while done < total_episodes {
        let n = (cfg.rollout_episodes as u64).min(total_episodes - done);
        let results = collect_rollouts(config, tier, &model, cfg, done..done + n, seed)?;
        done += n;
        for r in &results {
            let row = CurveRow {
                episode: r.index,
                team_reward: r.team_reward,
                agent_rewards: r.agent_rewards.clone(),
            };
            progress(&row);
            curve.push(row);
        }
        if curve.len() >= window {
            let mean = curve[curve.len() - window..].iter().map(|r| r.team_reward).sum::<f64>() / window as f64;
            if best_mean.is_none_or(|b| mean > b) {
                best_mean = Some(mean);
                best = checkpoint(config, &model, cfg, done, seed);
            }
        }
        let mut per_agent: Vec<Vec<Segment>> = vec![Vec::new(); model.agents.len()];
        for r in results {
            for (ix, seg) in r.segments.into_iter().enumerate() {
                per_agent[ix].push(seg);
            }
        }
        let mut stats = Vec::new();
        for (ix, segments) in per_agent.iter().enumerate() {
            let samples = prepare_samples(segments, cfg)?;
            if samples.is_empty() {
                continue;
            }
            let s = ppo_update(&mut model.agents[ix], &mut opts[ix], &samples, cfg, &mut shuffle_rng)?;
            stats.extend(s.last().copied());
        }
        updates.push(stats);
    }
    Ok(TrainOutcome {
        best,
        last: checkpoint(config, &model, cfg, done, seed),
        curve,
        best_window_mean: best_mean,
        updates,
    })
}

/// Mean team reward of a frozen model over training-window episodes `indices`.
pub fn frozen_team_rewards(
    config: &ScenarioConfig,
    tier: DemandTier,
    model: &Model,
    cfg: &TrainConfig,
    indices: Range<u64>,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(collect_with_mode(config, tier, model, cfg, indices, seed, ActMode::Sample)?
        .into_iter()
        .map(|r| r.team_reward)
        .collect())
}

pub struct Inference {
    pub run: EpisodeRun,
    pub guard_log: Vec<GuardRecord>,
    pub goal_log: Vec<GoalEmission>,
}

/// Apply window-trained policies over a full episode, re-planning every `window_shifts`
/// shifts.
pub fn infer_rolling(
    checkpoint: &Checkpoint,
    config: &ScenarioConfig,
    episode: &EpisodeInstance,
    mode: ActMode,
    seed: u64,
) -> Result<Inference> {
    if checkpoint.fingerprint != config.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: config.fingerprint(),
            found: checkpoint.fingerprint.clone(),
        });
    }
    let model = Model {
        spec: checkpoint.variant,
        agents: checkpoint.agents.clone(),
    };
    let rng = stream_rng(derive_seed(seed, episode.seed), streams::EVAL);
    let bn = big_number(config, episode);
    let mut ctl = PolicyController::new(&model, &checkpoint.encoder, mode, rng, checkpoint.window_shifts, bn, false);
    let run = run_episode(config, episode, &mut ctl)?;
    Ok(Inference {
        run,
        guard_log: ctl.guard_log,
        goal_log: ctl.goal_log,
    })
}
