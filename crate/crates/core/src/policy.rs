//! STOP/ASK controller and its REINFORCE training loop.
//!
//! The controller is a two-layer feed-forward network over the top-k belief
//! probabilities and the normalized turn index. Training rolls out episodes
//! against the user simulator, asks information-gain questions whenever the
//! sampled action is ASK, and follows the policy gradient of the undiscounted
//! return with a moving-average baseline. The response-model scalars `w`, `b`
//! are tuned alongside by central differences of the same surrogate.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{Answer, BeliefState};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::simulator::SimulatorModel;

pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_MAX_TURNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Stop,
    Ask,
}

impl Action {
    fn index(self) -> usize {
        match self {
            Action::Stop => 0,
            Action::Ask => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecideMode {
    /// Most probable action; an exact tie stops.
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub k: usize,
    pub max_turns: usize,
    pub hidden: usize,
    /// `hidden x (k + 1)`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `2 x hidden`, row-major; row 0 is STOP.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    probs: [f64; 2],
}

impl PolicyModel {
    pub fn zeros(k: usize, max_turns: usize) -> Self {
        assert!(k >= 1 && max_turns >= 1);
        let hidden = DEFAULT_HIDDEN;
        Self {
            k,
            max_turns,
            hidden,
            w1: vec![0.0; hidden * (k + 1)],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * hidden],
            b2: vec![0.0; 2],
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
    pub fn new(k: usize, max_turns: usize, seed: u64) -> Self {
        let mut m = Self::zeros(k, max_turns);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / ((k + 1) as f64).sqrt();
        for w in &mut m.w1 {
            *w = rng.gen_range(-a1..a1);
        }
        let a2 = 1.0 / (m.hidden as f64).sqrt();
        for w in &mut m.w2 {
            *w = rng.gen_range(-a2..a2);
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.k + 1
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Network input: top-k belief values (zero padded) and `turn / max_turns`.
    pub fn features(&self, state: &BeliefState, turn: usize) -> Vec<f64> {
        let mut x = state.top_k_probs(self.k);
        x.push(turn as f64 / self.max_turns as f64);
        x
    }

    fn run(&self, x: &[f64]) -> Forward {
        let d = self.input_dim();
        assert_eq!(x.len(), d, "policy input must have k + 1 entries");
        let mut pre = self.b1.clone();
        for (h, p) in pre.iter_mut().enumerate() {
            *p += self.w1[h * d..(h + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mut logits = [self.b2[0], self.b2[1]];
        for (o, l) in logits.iter_mut().enumerate() {
            *l += self.w2[o * self.hidden..(o + 1) * self.hidden].iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
        }
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let z = e[0] + e[1];
        Forward { pre, act, probs: [e[0] / z, e[1] / z] }
    }

    /// `(p_stop, p_ask)` for a raw input vector.
    pub fn forward_features(&self, x: &[f64]) -> (f64, f64) {
        let f = self.run(x);
        (f.probs[0], f.probs[1])
    }

    /// `(p_stop, p_ask)` for top-k probabilities (length `k`) and a turn index.
    pub fn forward(&self, topk_probs: &[f64], turn: usize) -> (f64, f64) {
        let mut x = topk_probs.to_vec();
        x.resize(self.k, 0.0);
        x.push(turn as f64 / self.max_turns as f64);
        self.forward_features(&x)
    }

    pub fn log_prob(&self, x: &[f64], action: Action) -> f64 {
        self.run(x).probs[action.index()].max(f64::MIN_POSITIVE).ln()
    }

    /// Gradient of `log pi(action | x)` in [`params`](Self::params) order.
    pub fn grad_log_prob(&self, x: &[f64], action: Action) -> Vec<f64> {
        let f = self.run(x);
        let d = self.input_dim();
        let a = action.index();
        // d log softmax_a / d logit_o = 1[o = a] - p_o
        let dlogit = [if a == 0 { 1.0 } else { 0.0 } - f.probs[0], if a == 1 { 1.0 } else { 0.0 } - f.probs[1]];
        let mut g = vec![0.0; self.n_params()];
        let (gw1, rest) = g.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(self.b1.len());
        let (gw2, gb2) = rest.split_at_mut(self.w2.len());
        for o in 0..2 {
            gb2[o] = dlogit[o];
            for h in 0..self.hidden {
                gw2[o * self.hidden + h] = dlogit[o] * f.act[h];
            }
        }
        for h in 0..self.hidden {
            if f.pre[h] <= 0.0 {
                continue;
            }
            let dh = dlogit[0] * self.w2[h] + dlogit[1] * self.w2[self.hidden + h];
            gb1[h] = dh;
            for (gw, xv) in gw1[h * d..(h + 1) * d].iter_mut().zip(x) {
                *gw = dh * xv;
            }
        }
        g
    }

    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    /// STOP or ASK at `turn`. At `turn >= max_turns` the answer is always STOP.
    pub fn decide(&self, state: &BeliefState, turn: usize, mode: DecideMode, rng: &mut impl Rng) -> Action {
        if turn >= self.max_turns {
            return Action::Stop;
        }
        let (p_stop, _) = self.forward_features(&self.features(state, turn));
        match mode {
            DecideMode::Greedy => {
                if p_stop >= 0.5 {
                    Action::Stop
                } else {
                    Action::Ask
                }
            }
            DecideMode::Sample => {
                if rng.gen::<f64>() < p_stop {
                    Action::Stop
                } else {
                    Action::Ask
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, w: f64, b: f64) -> Result<()> {
        let path = path.as_ref();
        let rows = |m: &[f64], cols: usize| m.chunks(cols).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let ck = PolicyCheckpoint {
            version: 1,
            k: self.k,
            max_turns: self.max_turns,
            hidden: self.hidden,
            w1: rows(&self.w1, self.k + 1),
            b1: self.b1.clone(),
            w2: rows(&self.w2, self.hidden),
            b2: self.b2.clone(),
            w,
            b,
        };
        fs::write(path, serde_json::to_string(&ck).expect("serializable")).map_err(|e| Error::io(path, e))
    }

    /// Load a checkpoint; returns the policy and the tuned `(w, b)`.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, f64, f64)> {
        let path = path.as_ref();
        let bad = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: PolicyCheckpoint = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if ck.version != 1 {
            return Err(bad(format!("unsupported version {}", ck.version)));
        }
        if ck.k == 0 || ck.max_turns == 0 || ck.hidden == 0 {
            return Err(bad("k, max_turns and hidden must be positive".into()));
        }
        let shape_ok = ck.w1.len() == ck.hidden
            && ck.w1.iter().all(|r| r.len() == ck.k + 1)
            && ck.b1.len() == ck.hidden
            && ck.w2.len() == 2
            && ck.w2.iter().all(|r| r.len() == ck.hidden)
            && ck.b2.len() == 2;
        if !shape_ok {
            return Err(bad("parameter shapes do not match k and hidden".into()));
        }
        let m = Self {
            k: ck.k,
            max_turns: ck.max_turns,
            hidden: ck.hidden,
            w1: ck.w1.concat(),
            b1: ck.b1,
            w2: ck.w2.concat(),
            b2: ck.b2,
        };
        if m.params().iter().any(|x| !x.is_finite()) || !ck.w.is_finite() || !ck.b.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok((m, ck.w, ck.b))
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyCheckpoint {
    version: u32,
    k: usize,
    max_turns: usize,
    hidden: usize,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    w: f64,
    b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub correct: f64,
    pub wrong: f64,
    /// Added for every question asked; must be `<= 0`.
    pub turn_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { correct: 20.0, wrong: -10.0, turn_penalty: -0.5 }
    }
}

impl RewardConfig {
    pub fn with_turn_penalty(turn_penalty: f64) -> Self {
        Self { turn_penalty, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub features: Vec<f64>,
    pub action: Action,
    /// `None` for a STOP forced by the turn limit or an exhausted bank.
    pub log_prob: Option<f64>,
    pub question: Option<(usize, Answer)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub query: String,
    pub target: usize,
    pub prediction: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn turns(&self) -> usize {
        self.steps.iter().filter(|s| s.action == Action::Ask).count()
    }

    pub fn correct(&self) -> bool {
        self.prediction == self.target
    }
}

/// Per-step rewards: the turn penalty for each ASK, the terminal reward on the final STOP.
pub fn step_rewards(trajectory: &Trajectory, rewards: &RewardConfig) -> Vec<f64> {
    let terminal = if trajectory.correct() { rewards.correct } else { rewards.wrong };
    trajectory
        .steps
        .iter()
        .map(|s| match s.action {
            Action::Ask => rewards.turn_penalty,
            Action::Stop => terminal,
        })
        .collect()
}

/// Undiscounted return from each step to the end.
pub fn compute_returns(trajectory: &Trajectory, rewards: &RewardConfig) -> Vec<f64> {
    suffix_sums(&step_rewards(trajectory, rewards))
}

pub fn suffix_sums(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc += r;
        out[i] = acc;
    }
    out
}

/// One episode with sampled actions against the simulator.
pub fn rollout(
    engine: &Engine,
    policy: &PolicyModel,
    simulator: &SimulatorModel,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let (target, query) = simulator.start_episode(rng)?;
    let mut state = engine.initial_belief(&query);
    let mut steps = Vec::new();
    let mut turn = 0;
    loop {
        let features = policy.features(&state, turn);
        if turn >= policy.max_turns {
            steps.push(Step { features, action: Action::Stop, log_prob: None, question: None });
            break;
        }
        let action = policy.decide(&state, turn, DecideMode::Sample, rng);
        let log_prob = policy.log_prob(&features, action);
        if action == Action::Stop {
            steps.push(Step { features, action, log_prob: Some(log_prob), question: None });
            break;
        }
        let Some(q) = engine.select(&state) else {
            steps.push(Step { features, action: Action::Stop, log_prob: None, question: None });
            break;
        };
        let answer = simulator.sample_response(q, target, rng)?;
        engine.update(&mut state, q, answer)?;
        steps.push(Step { features, action, log_prob: Some(log_prob), question: Some((q, answer)) });
        turn += 1;
    }
    Ok(Trajectory { query, target, prediction: state.best(), steps })
}

/// Recompute the policy inputs of a recorded episode under another engine
/// (same questions and answers).
fn replay_features(engine: &Engine, policy: &PolicyModel, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let mut state = engine.initial_belief(&traj.query);
    let mut out = Vec::with_capacity(traj.steps.len());
    for (turn, step) in traj.steps.iter().enumerate() {
        out.push(policy.features(&state, turn));
        if let Some((q, a)) = step.question {
            engine.update(&mut state, q, a)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PolicyTrainConfig {
    /// Total simulated episodes.
    pub episodes: usize,
    /// Episodes per parameter update.
    pub batch_size: usize,
    /// Adam step size for the network.
    pub learning_rate: f64,
    /// Gradient-ascent step size for `w` and `b`; zero keeps them fixed.
    pub wb_learning_rate: f64,
    pub fd_epsilon: f64,
    pub baseline_decay: f64,
    /// Episodes per training-log row.
    pub log_interval: usize,
    /// Starting ASK-minus-STOP output bias. Positive values make early
    /// rollouts ask several questions before the controller learns to stop.
    pub initial_ask_bias: f64,
    pub k: usize,
    pub max_turns: usize,
    pub jobs: usize,
    pub seed: u64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            episodes: 6000,
            batch_size: 20,
            learning_rate: 5e-3,
            wb_learning_rate: 1e-3,
            fd_epsilon: 1e-3,
            baseline_decay: 0.95,
            log_interval: 400,
            initial_ask_bias: 2.0,
            k: DEFAULT_TOP_K,
            max_turns: DEFAULT_MAX_TURNS,
            jobs: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub total_return: f64,
    pub turns: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub episode: usize,
    pub mean_return: f64,
    pub mean_turns: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyTrainOutcome {
    pub policy: PolicyModel,
    pub w: f64,
    pub b: f64,
    pub episodes: Vec<EpisodeLog>,
    pub log: Vec<TrainLogRow>,
}

impl PolicyTrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("episode,mean_return,mean_turns,accuracy\n");
        for r in &self.log {
            s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.episode, r.mean_return, r.mean_turns, r.accuracy));
        }
        s
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Ascent step along `grad`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// REINFORCE training of the controller (and fine-tuning of `w`, `b`)
/// against the simulator. The encoder is left untouched.
pub fn train_policy(
    engine: &Engine,
    simulator: &SimulatorModel,
    rewards: &RewardConfig,
    config: &PolicyTrainConfig,
) -> Result<PolicyTrainOutcome> {
    if simulator.labels().iter().any(|&l| l >= engine.n_labels()) {
        return Err(Error::Simulator("simulator labels do not belong to the engine's catalog".into()));
    }
    if let Some(&l) = simulator.labels().first() {
        let n_q = (0..engine.bank().len()).filter(|&q| simulator.response_distribution(q, l).is_some()).count();
        if n_q != engine.bank().len() {
            return Err(Error::Simulator("simulator and engine question banks differ".into()));
        }
    }
    if rewards.turn_penalty > 0.0 {
        return Err(Error::InvalidArgument("turn penalty must be <= 0".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut policy = PolicyModel::new(config.k, config.max_turns, config.seed);
    policy.b2[Action::Ask.index()] = config.initial_ask_bias;
    let mut params = policy.params();
    let mut adam = Adam::new(params.len());
    let (mut w, mut b) = (engine.responses().w, engine.responses().b);
    let mut current = engine.with_wb(w, b);
    let mut baseline: Option<f64> = None;
    let mut episodes = Vec::with_capacity(config.episodes);

    let mut start = 0;
    while start < config.episodes {
        let end = (start + config.batch_size).min(config.episodes);
        let trajectories: Vec<Trajectory> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|e| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[e as u64]));
                    rollout(&current, &policy, simulator, &mut rng)
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let returns: Vec<Vec<f64>> = trajectories.iter().map(|t| compute_returns(t, rewards)).collect();
        let base = baseline.unwrap_or_else(|| returns.iter().map(|g| g[0]).sum::<f64>() / returns.len() as f64);
        let advantages: Vec<Vec<f64>> = returns.iter().map(|g| g.iter().map(|x| x - base).collect()).collect();

        let mut grad = vec![0.0; params.len()];
        for (traj, adv) in trajectories.iter().zip(&advantages) {
            for (step, a) in traj.steps.iter().zip(adv) {
                if step.log_prob.is_none() || *a == 0.0 {
                    continue;
                }
                for (g, d) in grad.iter_mut().zip(policy.grad_log_prob(&step.features, step.action)) {
                    *g += a * d;
                }
            }
        }
        let scale = 1.0 / trajectories.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }

        if config.wb_learning_rate > 0.0 {
            let surrogate = |eng: &Engine| -> Result<f64> {
                let mut total = 0.0;
                for (traj, adv) in trajectories.iter().zip(&advantages) {
                    let feats = replay_features(eng, &policy, traj)?;
                    for ((step, x), a) in traj.steps.iter().zip(&feats).zip(adv) {
                        if step.log_prob.is_some() {
                            total += a * policy.log_prob(x, step.action);
                        }
                    }
                }
                Ok(total * scale)
            };
            let eps = config.fd_epsilon;
            let dw = (surrogate(&engine.with_wb(w + eps, b))? - surrogate(&engine.with_wb(w - eps, b))?) / (2.0 * eps);
            let db = (surrogate(&engine.with_wb(w, b + eps))? - surrogate(&engine.with_wb(w, b - eps))?) / (2.0 * eps);
            if dw.is_finite() && db.is_finite() {
                w += config.wb_learning_rate * dw;
                b += config.wb_learning_rate * db;
                current = engine.with_wb(w, b);
            }
        }

        if config.learning_rate != 0.0 {
            adam.step(&mut params, &grad, config.learning_rate);
            policy.set_params(&params);
        }

        let mut bl = base;
        for (i, (traj, g)) in trajectories.iter().zip(&returns).enumerate() {
            bl = config.baseline_decay * bl + (1.0 - config.baseline_decay) * g[0];
            episodes.push(EpisodeLog {
                episode: start + i,
                total_return: g[0],
                turns: traj.turns(),
                correct: traj.correct(),
            });
        }
        baseline = Some(bl);
        start = end;
    }

    let log = summarize(&episodes, config.log_interval.max(1));
    Ok(PolicyTrainOutcome { policy, w, b, episodes, log })
}

fn summarize(episodes: &[EpisodeLog], interval: usize) -> Vec<TrainLogRow> {
    episodes
        .chunks(interval)
        .map(|c| {
            let n = c.len() as f64;
            TrainLogRow {
                episode: c.last().map_or(0, |e| e.episode + 1),
                mean_return: c.iter().map(|e| e.total_return).sum::<f64>() / n,
                mean_turns: c.iter().map(|e| e.turns as f64).sum::<f64>() / n,
                accuracy: c.iter().filter(|e| e.correct).count() as f64 / n,
            }
        })
        .collect()
}
