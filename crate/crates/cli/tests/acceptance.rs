//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero on any
//! failure. Pass criterion numbers as arguments to run a subset:
//! `cargo test --release --test acceptance -- 2 3 4`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};

use fabsched_core::agents::{action_terms, ActMode, Action, Agent, Head, GOAL_DIM};
use fabsched_core::baselines::{build_variant, DispatchRule, RuleController, Variant, VariantSpec};
use fabsched_core::eval::{
    evaluate_checkpoint, evaluation_episode, paired_differences, sign_test, Evaluation, Metric, Summary,
};
use fabsched_core::factory::{validate_trace, Trace};
use fabsched_core::guard::{big_number, decide_conversion, score_urgency, CapacityView, FollowerIntent};
use fabsched_core::ids::{MachineId, OpId, ProductId};
use fabsched_core::learner::{compute_gae, frozen_team_rewards, ppo_loss, train, Sample, TrainConfig, TrainOutcome};
use fabsched_core::nn::Mlp;
use fabsched_core::rng::SimRng;
use fabsched_core::runner::{run_episode, Controller};
use fabsched_core::scenario::{
    generate_scenario, sample_episode, DemandTier, EpisodeInstance, InitialMachine, LotSpec, ScenarioConfig,
    ScenarioShape,
};
use fabsched_core::sim::{MachineCommand, Simulator, StationCommands};

const SEED: u64 = 1;
const TRAIN_EPISODES: u64 = 2000;
const DESK_TRAIN_EPISODES: u64 = 1000;
const PAIRED_EPISODES: u64 = 30;

/// Shift-budget audit over every trace checked by the suite.
struct Audit {
    traces: usize,
    violations: usize,
    max_usage: u32,
}

static AUDIT: Mutex<Audit> = Mutex::new(Audit {
    traces: 0,
    violations: 0,
    max_usage: 0,
});

/// Validate a trace and record its conversion-budget usage; true when every family passes.
fn audit(config: &ScenarioConfig, episode: &EpisodeInstance, trace: &Trace) -> bool {
    let report = validate_trace(config, episode, trace).expect("well-formed trace");
    let mut a = AUDIT.lock().unwrap();
    a.traces += 1;
    let over = report.max_shift_conversion > config.conversion_threshold
        || !report.family_passed(fabsched_core::factory::ConstraintFamily::ConversionBudget);
    if over {
        a.violations += 1;
    }
    a.max_usage = a.max_usage.max(report.max_shift_conversion);
    report.passed()
}

fn audit_evaluation(config: &ScenarioConfig, tier: DemandTier, ev: &Evaluation) -> bool {
    ev.traces
        .iter()
        .enumerate()
        .all(|(i, t)| audit(config, &evaluation_episode(config, tier, SEED, i as u64), t))
}

fn report(n: u32, name: &str, pass: bool, detail: String) -> bool {
    println!("criterion {n:>2} {name:<28} {} | {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let s = Summary::of(values);
    (s.mean, s.std_error())
}

/// Random conversions on every available machine.
struct RandomController(SimRng);

impl Controller for RandomController {
    fn decide(
        &mut self,
        sim: &Simulator,
        available: &[(OpId, Vec<MachineId>)],
    ) -> fabsched_core::error::Result<Vec<StationCommands>> {
        let products = &sim.layout().products_at;
        Ok(available
            .iter()
            .map(|(o, machines)| StationCommands {
                operation: *o,
                commands: machines
                    .iter()
                    .map(|&l| {
                        let p = products[o.0][self.0.random_range(0..products[o.0].len())];
                        let cmd = if self.0.random_bool(0.3) {
                            MachineCommand::Convert(p)
                        } else {
                            MachineCommand::Keep
                        };
                        (l, cmd)
                    })
                    .collect(),
            })
            .collect())
    }
}

fn criterion_1() -> bool {
    let start = Instant::now();
    let tiers = [DemandTier::Low, DemandTier::Medium, DemandTier::High];
    let rules = [DispatchRule::Spt, DispatchRule::Edd, DispatchRule::Fifo, DispatchRule::LongestQueue];
    let (mut episodes, mut passed, mut events) = (0, 0, 0);
    for scenario_seed in 1..=10u64 {
        let config = generate_scenario(&ScenarioShape::desk(), scenario_seed).expect("desk scenario");
        assert!(config.n_products() <= 5 && config.n_operations() <= 5 && config.n_machines() <= 8);
        assert_eq!(config.horizon_shifts, 4);
        for i in 0..100u64 {
            let e = sample_episode(&config, tiers[(i % 3) as usize], scenario_seed * 1000 + i);
            let run = if i % 2 == 0 {
                let mut c = RandomController(SimRng::seed_from_u64(i));
                run_episode(&config, &e, &mut c)
            } else {
                run_episode(&config, &e, &mut RuleController(rules[(i / 2 % 4) as usize]))
            }
            .expect("episode runs");
            episodes += 1;
            events += run.trace.events.len();
            if audit(&config, &e, &run.trace) {
                passed += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "constraint fidelity",
        passed == episodes && secs < 300.0,
        format!("{passed}/{episodes} traces valid, {events} assignments, {secs:.1}s"),
    )
}

const GUARD_SCENARIO: &str = r#"
name = "guard-2x2x1"
shift_ticks = 12
horizon_shifts = 4
conversion_threshold = 5
release_lead_shifts = 1

[demand]
product_dropout = 0.0
initial_wip_prob = 0.0

[conversion]
operation_change = 2
product_matrix = [[0, 3], [3, 0]]

[[operations]]
name = "op0"

[[machines]]
name = "m0"
station = 0
mtbf_ticks = 0.0
repair_ticks = [1, 1]

[[machines]]
name = "m1"
station = 0
mtbf_ticks = 0.0
repair_ticks = [1, 1]

[[products]]
name = "p0"
family = 0
units = [3, 3]
demand_rate = 0.0

[[products.route]]
operation = 0
unit_time = 2
machines = [0, 1]

[[products]]
name = "p1"
family = 1
units = [3, 3]
demand_rate = 0.0

[[products.route]]
operation = 0
unit_time = 2
machines = [0, 1]
"#;

/// Brute-force table entry written from the decision rules alone.
fn guard_oracle(ci: bool, cand: usize, cur: usize, other: usize, queue: [u64; 2], horizon: u64, other_busy: u64) -> usize {
    const WORK: u64 = 6;
    let bn = 1 + (queue[0] + queue[1]) * WORK;
    let own = horizon;
    let other_share = horizon.saturating_sub(other_busy);
    let rc = [queue[0] * WORK, queue[1] * WORK];
    let erc: Vec<u64> = (0..2)
        .map(|p| if cur == p { own } else { 0 } + if other == p { other_share } else { 0 })
        .collect();
    let us: Vec<u64> = (0..2)
        .map(|p| {
            if rc[p] <= erc[p] {
                0
            } else if cur == p || other == p {
                rc[p]
            } else {
                rc[p] + bn
            }
        })
        .collect();
    if !ci {
        return cur;
    }
    if queue[cand] > 0 {
        return cand;
    }
    let covered_by_others = erc[cur] - own;
    if rc[cur] < covered_by_others && us[0] + us[1] > 0 {
        return if us[1] > us[0] { 1 } else { 0 };
    }
    cur
}

fn criterion_2() -> bool {
    let config = ScenarioConfig::from_toml(GUARD_SCENARIO).expect("guard scenario");
    let (mut cases, mut mismatches) = (0, 0);
    let mut branches = BTreeSet::new();
    for cur in 0..2 {
        for other in 0..2 {
            for other_busy in [0u32, 6, 40] {
                for q0 in 0..3u32 {
                    for q1 in 0..3u32 {
                        let lot = |p: usize, k: u32| LotSpec {
                            product: ProductId(p),
                            index: k,
                            units: 3,
                            due: 24,
                            release: 0,
                            stage: 0,
                        };
                        let mut wip: Vec<LotSpec> = (0..q0).map(|k| lot(0, k)).collect();
                        wip.extend((0..q1).map(|k| lot(1, k)));
                        let episode = EpisodeInstance {
                            scenario: config.name.clone(),
                            tier: DemandTier::Low,
                            seed: 0,
                            horizon_shifts: 4,
                            demand: vec![],
                            initial_wip: wip,
                            initial_machines: vec![
                                InitialMachine {
                                    product: ProductId(cur),
                                    operation: OpId(0),
                                    busy_until: 0,
                                },
                                InitialMachine {
                                    product: ProductId(other),
                                    operation: OpId(0),
                                    busy_until: other_busy,
                                },
                            ],
                            breakdown_trace_seed: 0,
                        };
                        let mut sim = Simulator::reset(&config, &episode).expect("reset");
                        sim.realize_maintenance().expect("maintenance");
                        let machine = sim.state().machines[0].clone();
                        let setups: Vec<ProductId> = sim.state().machines.iter().map(|m| m.product_setup).collect();
                        for horizon in [6u32, 12, 48] {
                            let view = CapacityView::from_sim(&sim, OpId(0), horizon, big_number(&config, &episode));
                            let urgency = score_urgency(&view, &setups);
                            for ci in [false, true] {
                                for cand in 0..2 {
                                    let intent = FollowerIntent {
                                        convert: ci,
                                        candidate: ProductId(cand),
                                    };
                                    let got = decide_conversion(intent, &machine, &view, &urgency, &[true, true])
                                        .expect("available machine");
                                    let want = guard_oracle(
                                        ci,
                                        cand,
                                        cur,
                                        other,
                                        [u64::from(q0), u64::from(q1)],
                                        u64::from(horizon),
                                        u64::from(other_busy),
                                    );
                                    cases += 1;
                                    branches.insert(format!("{:?}", got.branch));
                                    if got.next_product != ProductId(want) {
                                        mismatches += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    report(
        2,
        "guard oracle equivalence",
        mismatches == 0 && branches.len() == 4,
        format!("{cases} states, {mismatches} discrepancies, branches {branches:?}"),
    )
}

fn criterion_3() -> bool {
    let mut rng = SimRng::seed_from_u64(SEED);
    let (mut tables, mut applicable, mut held) = (0, 0, 0);
    while applicable < 10_000 {
        tables += 1;
        let n = rng.random_range(2..=6);
        let products: Vec<ProductId> = (0..n).map(ProductId).collect();
        let required: Vec<u64> = (0..n).map(|_| rng.random_range(0..500)).collect();
        let expected_remaining: Vec<u64> = (0..n).map(|_| rng.random_range(0..500)).collect();
        let setups: Vec<ProductId> = products.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        let view = CapacityView {
            operation: OpId(0),
            products: products.clone(),
            queued: vec![1; n],
            required: required.clone(),
            expected_remaining: expected_remaining.clone(),
            machine_share: vec![],
            big_number: 1 + required.iter().sum::<u64>(),
        };
        let table = score_urgency(&view, &setups);
        let uncovered: Vec<ProductId> = (0..n)
            .filter(|&i| required[i] > expected_remaining[i] && !setups.contains(&products[i]))
            .map(ProductId)
            .collect();
        if uncovered.is_empty() {
            continue;
        }
        applicable += 1;
        if table.argmax().is_some_and(|p| uncovered.contains(&p)) {
            held += 1;
        }
    }
    report(
        3,
        "BN dominance",
        held == applicable,
        format!("{held}/{applicable} tables with an uncovered short product ({tables} drawn)"),
    )
}

/// Lambda-return form: G^lambda_t - V_t.
fn gae_oracle(r: &[f64], v: &[f64], bootstrap: f64, g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    let value = |k: usize| if k == n { bootstrap } else { v[k] };
    let n_step = |t: usize, steps: usize| {
        (0..steps).map(|k| g.powi(k as i32) * r[t + k]).sum::<f64>() + g.powi(steps as i32) * value(t + steps)
    };
    (0..n)
        .map(|t| {
            let remaining = n - t;
            let mut ret = 0.0;
            for steps in 1..remaining {
                ret += (1.0 - l) * l.powi(steps as i32 - 1) * n_step(t, steps);
            }
            ret += l.powi(remaining as i32 - 1) * n_step(t, remaining);
            ret - v[t]
        })
        .collect()
}

fn fd_relative_error(agent: &Agent, batch: &[Sample], cfg: &TrainConfig) -> f64 {
    let (_, ga, gc) = ppo_loss(agent, batch, cfg).expect("loss");
    let loss = |a: &Agent| ppo_loss(a, batch, cfg).expect("loss").0.total;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: Vec<f64>, params: Vec<f64>, set: &dyn Fn(&mut Agent, &[f64])| {
        for k in 0..params.len() {
            let mut a = agent.clone();
            let mut p = params.clone();
            p[k] += h;
            set(&mut a, &p);
            let up = loss(&a);
            p[k] -= 2.0 * h;
            set(&mut a, &p);
            let down = loss(&a);
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(analytic[k].abs());
            if scale > 1e-7 {
                worst = worst.max((fd - analytic[k]).abs() / scale);
            }
        }
    };
    check(ga.flat(), agent.actor.flat_params(), &|a, p| a.actor.set_flat_params(p).unwrap());
    check(gc.flat(), agent.critic.flat_params(), &|a, p| a.critic.set_flat_params(p).unwrap());
    worst
}

fn toy_batch(agent: &Agent, rng: &mut SimRng, actions: impl Fn(&mut SimRng) -> Action) -> Vec<Sample> {
    (0..6)
        .map(|_| {
            let obs: Vec<f64> = (0..agent.obs_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let action = actions(rng);
            let out = agent.actor.forward_one(&obs).unwrap();
            let logp = action_terms(&agent.head, &out, &action).unwrap().logp;
            Sample {
                obs,
                action,
                old_logp: logp + rng.random_range(-0.5..0.5),
                advantage: rng.random_range(-1.5..1.5),
                ret: rng.random_range(-1.0..1.0),
            }
        })
        .collect()
}

fn criterion_4() -> bool {
    let mut rng = SimRng::seed_from_u64(SEED);
    let mut worst_gae: f64 = 0.0;
    for _ in 0..1000 {
        let r: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bootstrap = rng.random_range(-2.0..2.0);
        let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
        let (adv, _) = compute_gae(&r, &v, bootstrap, g, l).expect("gae");
        for (a, b) in adv.iter().zip(gae_oracle(&r, &v, bootstrap, g, l)) {
            worst_gae = worst_gae.max((a - b).abs());
        }
    }
    let cfg = TrainConfig::default();
    let mut categorical = Agent::new("toy", 3, Head::Categorical { groups: 2, classes: 3 }, &[5], &mut rng);
    categorical.critic = Mlp::new(&[3, 5, 1], 1.0, &mut rng);
    categorical.actor = Mlp::new(&[3, 5, 6], 1.0, &mut rng);
    let batch = toy_batch(&categorical, &mut rng, |r| {
        Action::Discrete(vec![Some(r.random_range(0..3)), Some(r.random_range(0..3))])
    });
    let cat_err = fd_relative_error(&categorical, &batch, &cfg);
    let mut beta = Agent::new("toy-beta", 3, Head::Beta { dims: GOAL_DIM }, &[5], &mut rng);
    beta.actor = Mlp::new(&[3, 5, 2 * GOAL_DIM], 1.0, &mut rng);
    let batch = toy_batch(&beta, &mut rng, |r| {
        Action::Continuous((0..GOAL_DIM).map(|_| r.random_range(0.05..0.95)).collect())
    });
    let beta_err = fd_relative_error(&beta, &batch, &cfg);
    report(
        4,
        "learner numerics",
        worst_gae < 1e-10 && cat_err < 1e-4 && beta_err < 1e-4,
        format!("GAE max abs err {worst_gae:.2e}; PPO FD rel err categorical {cat_err:.2e}, beta {beta_err:.2e}"),
    )
}

fn tiny() -> ScenarioConfig {
    generate_scenario(&ScenarioShape::tiny(), SEED).expect("tiny scenario")
}

fn desk() -> ScenarioConfig {
    generate_scenario(&ScenarioShape::desk(), SEED).expect("desk scenario")
}

fn train_variant(config: &ScenarioConfig, variant: Variant, episodes: u64) -> TrainOutcome {
    train(config, DemandTier::High, VariantSpec::of(variant), &TrainConfig::default(), episodes, SEED, |_| {})
        .expect("training")
}

fn criterion_5(model: &TrainOutcome) -> bool {
    let config = tiny();
    let cfg = TrainConfig::default();
    let rewards: Vec<f64> = model.curve.iter().map(|r| r.team_reward).collect();
    let (first, first_se) = mean_se(&rewards[..100]);
    let (last, last_se) = mean_se(&rewards[rewards.len() - 100..]);
    let untrained = build_variant(VariantSpec::of(Variant::LformRc), &config, &cfg.encoder, &cfg.hidden, SEED).unwrap();
    let random = frozen_team_rewards(&config, DemandTier::High, &untrained, &cfg, 1_000_000..1_000_100, SEED).unwrap();
    let (rand_mean, rand_se) = mean_se(&random);
    let margin_first = 2.0 * (first_se.powi(2) + last_se.powi(2)).sqrt();
    let margin_rand = 2.0 * (rand_se.powi(2) + last_se.powi(2)).sqrt();
    report(
        5,
        "learning progress",
        rewards.len() == TRAIN_EPISODES as usize && last - first > margin_first && last - rand_mean > margin_rand,
        format!(
            "final100 {last:.2} vs first100 {first:.2} (need > {margin_first:.2} gap), vs random {rand_mean:.2} (need > {margin_rand:.2})"
        ),
    )
}

fn evaluate(config: &ScenarioConfig, outcome: &TrainOutcome) -> Evaluation {
    let ev = evaluate_checkpoint(
        &outcome.best,
        config,
        DemandTier::High,
        PAIRED_EPISODES,
        SEED,
        ActMode::Greedy,
        1,
    )
    .expect("evaluation");
    assert!(audit_evaluation(config, DemandTier::High, &ev), "evaluation trace fails validation");
    ev
}

fn criterion_6(proposed: &Evaluation) -> bool {
    let config = tiny();
    let mut pass = true;
    let mut detail = Vec::new();
    for baseline in [Variant::DrlJssp, Variant::DrlDfjss] {
        let ev = evaluate(&config, &train_variant(&config, baseline, TRAIN_EPISODES));
        let cr = |e: &Evaluation| e.report.aggregate[&Metric::CompletionRate].mean;
        let s = sign_test(&paired_differences(Metric::CompletionRate, &ev.report, &proposed.report));
        pass &= cr(proposed) >= cr(&ev) && s.p_value < 0.05;
        detail.push(format!(
            "vs {baseline}: CR {:.3} vs {:.3}, wins {} losses {} p={:.4}",
            cr(proposed),
            cr(&ev),
            s.wins,
            s.losses,
            s.p_value
        ));
    }
    report(6, "benchmark direction", pass, detail.join("; "))
}

fn criterion_7() -> (bool, Vec<Evaluation>) {
    let config = desk();
    let proposed = evaluate(&config, &train_variant(&config, Variant::LformRc, DESK_TRAIN_EPISODES));
    let srm = evaluate(&config, &train_variant(&config, Variant::Srm, DESK_TRAIN_EPISODES));
    let mean = |e: &Evaluation, m| e.report.aggregate[&m].mean;
    let cr = sign_test(&paired_differences(Metric::CompletionRate, &srm.report, &proposed.report));
    let td = sign_test(&paired_differences(Metric::Tardiness, &srm.report, &proposed.report));
    let overrides: usize = proposed.guard_overrides.iter().sum();
    let pass = mean(&proposed, Metric::CompletionRate) > mean(&srm, Metric::CompletionRate)
        && mean(&proposed, Metric::Tardiness) < mean(&srm, Metric::Tardiness)
        && cr.p_value < 0.05
        && td.p_value < 0.05
        && proposed.guard_overrides.iter().any(|&n| n > 0);
    let ok = report(
        7,
        "ablation direction",
        pass,
        format!(
            "CR {:.3} vs {:.3} (p={:.4}); tardiness {:.1} vs {:.1} (p={:.4}); {overrides} guard overrides",
            mean(&proposed, Metric::CompletionRate),
            mean(&srm, Metric::CompletionRate),
            cr.p_value,
            mean(&proposed, Metric::Tardiness),
            mean(&srm, Metric::Tardiness),
            td.p_value
        ),
    );
    (ok, vec![proposed])
}

fn cli(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fabsched"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_8() -> bool {
    let runs: Vec<Option<Vec<(String, Vec<u8>)>>> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let d = tmp.path();
            let steps: [&[&str]; 5] = [
                &["generate", "--preset", "desk", "--seed", "3", "--out", "."],
                &["train", "--scenario", "desk.toml", "--episodes", "24", "--seed", "3", "--out", "train"],
                &[
                    "evaluate", "--scenario", "desk.toml", "--checkpoint", "train/checkpoint_best.json",
                    "--episodes", "3", "--mode", "sample", "--seed", "3", "--out", "eval",
                ],
                &[
                    "ablate", "--scenario", "desk.toml", "--train-episodes", "8", "--episodes", "3", "--seed",
                    "3", "--out", "ablate",
                ],
                &["validate", "--scenario", "desk.toml", "--trace", "eval/traces/episode_0.jsonl"],
            ];
            steps.iter().all(|s| cli(s, d)).then(|| read_tree(d))
        })
        .collect();
    let (a, b) = (&runs[0], &runs[1]);
    let pass = a.is_some() && a == b;
    let n = a.as_ref().map_or(0, Vec::len);
    let kinds: BTreeSet<&str> = a
        .iter()
        .flatten()
        .filter_map(|(name, _)| Path::new(name).extension().and_then(|e| e.to_str()))
        .collect();
    report(
        8,
        "determinism",
        pass && kinds.contains("jsonl") && kinds.contains("csv"),
        format!("{n} artifacts byte-identical across reruns ({kinds:?})"),
    )
}

fn criterion_10(evaluations: &[(&ScenarioConfig, &Evaluation)]) -> bool {
    let (mut episodes, mut bad) = (0, 0);
    let mut extra = Vec::new();
    let config = desk();
    let fresh = train_variant(&config, Variant::LformRc, 0);
    for i in 0..50 {
        let e = evaluation_episode(&config, DemandTier::Medium, SEED + 1, i);
        let inf = fabsched_core::learner::infer_rolling(&fresh.best, &config, &e, ActMode::Sample, i).unwrap();
        audit(&config, &e, &inf.run.trace);
        extra.push(inf.goal_log);
    }
    let mut check = |config: &ScenarioConfig, log: &[fabsched_core::learner::GoalEmission]| {
        episodes += 1;
        let shifts: Vec<u32> = log.iter().map(|g| g.shift).collect();
        let one_per_shift = shifts.len() == config.horizon_shifts as usize
            && shifts.windows(2).all(|w| w[1] == w[0] + 1)
            && log.iter().all(|g| g.tick % config.shift_ticks == 0);
        let bounded = log.iter().all(|g| {
            g.goals.len() == config.n_operations()
                && g.goals.iter().all(|goal| goal.len() == 3 && goal.iter().all(|x| (0.0..=1.0).contains(x)))
        });
        if !(one_per_shift && bounded) {
            bad += 1;
        }
    };
    for log in &extra {
        check(&config, log);
    }
    for (config, ev) in evaluations {
        for log in &ev.goal_logs {
            check(config, log);
        }
    }
    report(
        10,
        "leader contract",
        bad == 0 && episodes > 0,
        format!("{} of {episodes} episodes emit one 3-dim goal in [0,1] per operation per shift", episodes - bad),
    )
}

fn criterion_9() -> bool {
    let a = AUDIT.lock().unwrap();
    report(
        9,
        "shift-budget safety",
        a.violations == 0 && a.traces > 0,
        format!("{} traces audited, {} over budget, max per-shift usage {}", a.traces, a.violations, a.max_usage),
    )
}

fn main() {
    let selected: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let start = Instant::now();
    let mut results = Vec::new();
    if want(2) {
        results.push(criterion_2());
    }
    if want(3) {
        results.push(criterion_3());
    }
    if want(4) {
        results.push(criterion_4());
    }
    if want(1) {
        results.push(criterion_1());
    }
    let mut evaluated = Vec::new();
    let tiny_config = tiny();
    let desk_config = desk();
    if want(5) || want(6) || want(10) {
        let proposed = train_variant(&tiny_config, Variant::LformRc, TRAIN_EPISODES);
        if want(5) {
            results.push(criterion_5(&proposed));
        }
        let ev = evaluate(&tiny_config, &proposed);
        if want(6) {
            results.push(criterion_6(&ev));
        }
        evaluated.push((&tiny_config, ev));
    }
    if want(7) {
        let (ok, evs) = criterion_7();
        results.push(ok);
        evaluated.extend(evs.into_iter().map(|e| (&desk_config, e)));
    }
    if want(8) {
        results.push(criterion_8());
    }
    if want(10) {
        let refs: Vec<(&ScenarioConfig, &Evaluation)> = evaluated.iter().map(|(c, e)| (*c, e)).collect();
        results.push(criterion_10(&refs));
    }
    if want(9) {
        if AUDIT.lock().unwrap().traces == 0 {
            criterion_1();
        }
        results.push(criterion_9());
    }
    let failed = results.iter().filter(|r| !**r).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
