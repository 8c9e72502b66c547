//! Interaction driver, metrics and baselines.

mod bm25;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use bm25::{bm25_rank, Bm25Index, DEFAULT_B, DEFAULT_K1};

use crate::belief::{Answer, BeliefState};
use crate::dataset::{Corpus, LabelCatalog, Question, SplitPart};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::math::{derive_seed, mean_std, ranking};
use crate::policy::{Action, DecideMode, PolicyModel};
use crate::simulator::SimulatorModel;

#[derive(Debug, Clone, Copy)]
pub enum Termination<'a> {
    /// Greedy STOP/ASK from a trained controller.
    Policy(&'a PolicyModel),
    /// Stop once the top label's probability reaches the threshold.
    Threshold(f64),
    FixedTurns(usize),
}

impl Termination<'_> {
    /// Turn budget under `max_turns`; a policy also caps it at its own horizon.
    pub fn turn_limit(&self, max_turns: usize) -> usize {
        match self {
            Termination::Policy(p) => max_turns.min(p.max_turns),
            _ => max_turns,
        }
    }

    /// Whether to stop before asking at `turn` (the budget is checked separately).
    pub fn should_stop(&self, state: &BeliefState, turn: usize, rng: &mut impl Rng) -> bool {
        match *self {
            Termination::Policy(p) => p.decide(state, turn, DecideMode::Greedy, rng) == Action::Stop,
            Termination::Threshold(t) => state.top_k_probs(1)[0] >= t,
            Termination::FixedTurns(n) => turn >= n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    InfoGain,
    /// Uniform over the whole bank, with replacement. Repeated questions
    /// spend a turn but leave the belief unchanged.
    Random,
}

#[derive(Debug, Clone, Copy)]
pub struct InteractionConfig<'a> {
    pub termination: Termination<'a>,
    pub selector: Selector,
    /// Start from a uniform belief instead of the query prior.
    pub uniform_prior: bool,
    pub max_turns: usize,
}

impl<'a> InteractionConfig<'a> {
    pub fn new(termination: Termination<'a>, max_turns: usize) -> Self {
        Self { termination, selector: Selector::InfoGain, uniform_prior: false, max_turns }
    }
}

pub trait Responder {
    fn respond(&mut self, q: usize, question: &Question) -> Result<Answer>;
}

/// Answers by sampling the simulator for a fixed target.
pub struct SimulatedResponder<'a, R> {
    pub simulator: &'a SimulatorModel,
    pub target: usize,
    pub rng: R,
}

impl<R: Rng> Responder for SimulatedResponder<'_, R> {
    fn respond(&mut self, q: usize, _question: &Question) -> Result<Answer> {
        self.simulator.sample_response(q, self.target, &mut self.rng)
    }
}

/// Replays recorded answers in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedResponder {
    answers: VecDeque<(usize, Answer)>,
}

impl ScriptedResponder {
    pub fn new(answers: impl IntoIterator<Item = (usize, Answer)>) -> Self {
        Self { answers: answers.into_iter().collect() }
    }
}

impl Responder for ScriptedResponder {
    fn respond(&mut self, q: usize, question: &Question) -> Result<Answer> {
        match self.answers.pop_front() {
            Some((expected, a)) if expected == q => Ok(a),
            Some((expected, _)) => {
                Err(Error::Responder(format!("script expected question {expected}, got `{}`", question.id)))
            }
            None => Err(Error::Responder("script exhausted".into())),
        }
    }
}

/// Any closure `(question index, question) -> answer` is a responder.
impl<F: FnMut(usize, &Question) -> Result<Answer>> Responder for F {
    fn respond(&mut self, q: usize, question: &Question) -> Result<Answer> {
        self(q, question)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Turn {
    pub question: usize,
    pub answer: Answer,
    /// Most probable label after this answer.
    pub top1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transcript {
    pub target: Option<usize>,
    pub query: String,
    pub turns: Vec<Turn>,
    pub prediction: usize,
    /// Final label ranking, most probable first.
    pub ranking: Vec<usize>,
    /// Belief before the first question and after every answer.
    pub beliefs: Vec<Vec<f64>>,
}

impl Transcript {
    pub fn n_turns(&self) -> usize {
        self.turns.len()
    }

    pub fn correct_at(&self, k: usize) -> bool {
        self.target.is_some_and(|t| self.ranking.iter().take(k).any(|&y| y == t))
    }
}

/// An interaction cut short by a responder or update failure.
#[derive(Debug, thiserror::Error)]
#[error("interaction interrupted after {} turns: {error}", .partial.turns.len())]
pub struct Interrupted {
    pub partial: Box<Transcript>,
    #[source]
    pub error: Error,
}

fn snapshot(state: &BeliefState, target: Option<usize>, turns: Vec<Turn>, beliefs: Vec<Vec<f64>>) -> Transcript {
    let probs = state.probs();
    Transcript {
        target,
        query: state.query.clone(),
        turns,
        prediction: state.best(),
        ranking: ranking(&probs),
        beliefs,
    }
}

/// Run one interaction to completion: decide, select, ask, update.
pub fn run_interaction(
    engine: &Engine,
    query: &str,
    target: Option<usize>,
    responder: &mut dyn Responder,
    config: &InteractionConfig<'_>,
    rng: &mut impl Rng,
) -> std::result::Result<Transcript, Interrupted> {
    let mut state = if config.uniform_prior {
        let mut s = engine.uniform_belief();
        s.query = query.to_string();
        s
    } else {
        engine.initial_belief(query)
    };
    let max_turns = config.termination.turn_limit(config.max_turns);
    let mut turns = Vec::new();
    let mut beliefs = vec![state.probs()];
    for turn in 0..max_turns {
        if config.termination.should_stop(&state, turn, rng) {
            break;
        }
        let q = match config.selector {
            Selector::InfoGain => engine.select(&state),
            Selector::Random if engine.bank().is_empty() => None,
            Selector::Random => Some(rng.gen_range(0..engine.bank().len())),
        };
        let Some(q) = q else { break };
        let answer = match responder.respond(q, engine.bank().get(q)) {
            Ok(a) => a,
            Err(error) => {
                return Err(Interrupted { partial: Box::new(snapshot(&state, target, turns, beliefs)), error })
            }
        };
        if state.is_eligible(engine.bank(), q) {
            if let Err(error) = engine.update(&mut state, q, answer) {
                return Err(Interrupted { partial: Box::new(snapshot(&state, target, turns, beliefs)), error });
            }
        }
        turns.push(Turn { question: q, answer, top1: state.best() });
        beliefs.push(state.probs());
    }
    Ok(snapshot(&state, target, turns, beliefs))
}

/// Fraction of transcripts whose final top-`k` contains the target.
pub fn accuracy_at_k(transcripts: &[Transcript], k: usize) -> f64 {
    if transcripts.is_empty() {
        return 0.0;
    }
    transcripts.iter().filter(|t| t.correct_at(k)).count() as f64 / transcripts.len() as f64
}

pub fn mean_turns(transcripts: &[Transcript]) -> f64 {
    if transcripts.is_empty() {
        return 0.0;
    }
    transcripts.iter().map(|t| t.n_turns() as f64).sum::<f64>() / transcripts.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Encoder prior only.
    NoInteraction,
    Bm25,
    RandomInteraction(usize),
    /// Uniform prior, information-gain questions, policy termination.
    NoInitialQuery,
    Full,
    Threshold(f64),
    FixedTurns(usize),
    /// Full model with the empirical estimate only.
    LambdaOne,
    /// Full model with the empirical estimate hidden for dev and test labels.
    ZeroShot,
}

impl Strategy {
    pub fn needs_policy(&self) -> bool {
        matches!(self, Strategy::NoInitialQuery | Strategy::Full | Strategy::LambdaOne | Strategy::ZeroShot)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::NoInteraction => write!(f, "none"),
            Strategy::Bm25 => write!(f, "bm25"),
            Strategy::RandomInteraction(t) => write!(f, "random:{t}"),
            Strategy::NoInitialQuery => write!(f, "no-init"),
            Strategy::Full => write!(f, "full"),
            Strategy::Threshold(t) => write!(f, "threshold:{t}"),
            Strategy::FixedTurns(n) => write!(f, "fixed:{n}"),
            Strategy::LambdaOne => write!(f, "lambda1"),
            Strategy::ZeroShot => write!(f, "zero-shot"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let bad = || Error::InvalidArgument(format!("bad strategy `{s}`"));
        let int = |d: usize| arg.map_or(Ok(d), |a| a.parse().map_err(|_| bad()));
        let strategy = match name {
            "none" | "no-interaction" => Strategy::NoInteraction,
            "bm25" => Strategy::Bm25,
            "random" => Strategy::RandomInteraction(int(5)?),
            "no-init" | "no-initial-query" => Strategy::NoInitialQuery,
            "full" => Strategy::Full,
            "threshold" => {
                let t: f64 = arg.map_or(Ok(0.9), |a| a.parse().map_err(|_| bad()))?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(bad());
                }
                Strategy::Threshold(t)
            }
            "fixed" => Strategy::FixedTurns(int(4)?),
            "lambda1" => Strategy::LambdaOne,
            "zero-shot" | "zeroshot" => Strategy::ZeroShot,
            _ => return Err(bad()),
        };
        if arg.is_some()
            && !matches!(strategy, Strategy::RandomInteraction(_) | Strategy::Threshold(_) | Strategy::FixedTurns(_))
        {
            return Err(bad());
        }
        Ok(strategy)
    }
}

/// Trained models shared by every strategy of a suite.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub engine: &'a Engine,
    pub policy: Option<&'a PolicyModel>,
    pub simulator: &'a SimulatorModel,
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub strategies: Vec<Strategy>,
    pub episodes: usize,
    pub seeds: usize,
    pub seed: u64,
    pub max_turns: usize,
    pub jobs: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub confusion: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            strategies: vec![
                Strategy::NoInteraction,
                Strategy::Bm25,
                Strategy::RandomInteraction(5),
                Strategy::NoInitialQuery,
                Strategy::Full,
                Strategy::Threshold(0.9),
                Strategy::FixedTurns(4),
                Strategy::LambdaOne,
                Strategy::ZeroShot,
            ],
            episodes: 500,
            seeds: 3,
            seed: 0,
            max_turns: crate::policy::DEFAULT_MAX_TURNS,
            jobs: 1,
            bm25_k1: DEFAULT_K1,
            bm25_b: DEFAULT_B,
            confusion: false,
        }
    }
}

/// Everything needed to run one strategy.
struct Plan<'a> {
    engine: Engine,
    mode: PlanMode<'a>,
}

enum PlanMode<'a> {
    Bm25(Bm25Index),
    Interactive(InteractionConfig<'a>),
}

fn plan<'a>(strategy: Strategy, corpus: &Corpus, models: &Models<'a>, config: &SuiteConfig) -> Result<Plan<'a>> {
    let policy =
        || models.policy.ok_or_else(|| Error::InvalidArgument(format!("strategy `{strategy}` needs a trained policy")));
    let base = models.engine.clone();
    let interactive = |engine: Engine, termination, selector, uniform_prior| Plan {
        engine,
        mode: PlanMode::Interactive(InteractionConfig {
            termination,
            selector,
            uniform_prior,
            max_turns: config.max_turns,
        }),
    };
    Ok(match strategy {
        Strategy::NoInteraction => interactive(base, Termination::FixedTurns(0), Selector::InfoGain, false),
        Strategy::Bm25 => {
            let texts = models.engine.labels().texts();
            Plan { engine: base, mode: PlanMode::Bm25(Bm25Index::new(&texts, config.bm25_k1, config.bm25_b)) }
        }
        Strategy::RandomInteraction(t) => interactive(base, Termination::FixedTurns(t), Selector::Random, false),
        Strategy::NoInitialQuery => interactive(base, Termination::Policy(policy()?), Selector::InfoGain, true),
        Strategy::Full => interactive(base, Termination::Policy(policy()?), Selector::InfoGain, false),
        Strategy::Threshold(t) => interactive(base, Termination::Threshold(t), Selector::InfoGain, false),
        Strategy::FixedTurns(n) => interactive(base, Termination::FixedTurns(n), Selector::InfoGain, false),
        Strategy::LambdaOne => {
            interactive(base.with_lambda(1.0), Termination::Policy(policy()?), Selector::InfoGain, false)
        }
        Strategy::ZeroShot => {
            let mut held_out = corpus.split_indices(SplitPart::Dev);
            held_out.extend(corpus.split_indices(SplitPart::Test));
            interactive(base.with_hidden_empirical(held_out), Termination::Policy(policy()?), Selector::InfoGain, false)
        }
    })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn run_plan(
    plan: &Plan<'_>,
    simulator: &SimulatorModel,
    seed: u64,
    episodes: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Transcript>> {
    // Every strategy sees the same targets, queries and answer streams for a given seed.
    pool.install(|| {
        (0..episodes)
            .into_par_iter()
            .map(|e| {
                let ep = derive_seed(seed, &[e as u64]);
                let (target, query) = simulator.start_episode(&mut ChaCha8Rng::seed_from_u64(derive_seed(ep, &[0])))?;
                match &plan.mode {
                    PlanMode::Bm25(index) => {
                        let ranking = index.rank(&query);
                        Ok(Transcript {
                            target: Some(target),
                            query,
                            turns: Vec::new(),
                            prediction: ranking[0],
                            ranking,
                            beliefs: Vec::new(),
                        })
                    }
                    PlanMode::Interactive(cfg) => {
                        let mut responder = SimulatedResponder {
                            simulator,
                            target,
                            rng: ChaCha8Rng::seed_from_u64(derive_seed(ep, &[1])),
                        };
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ep, &[2]));
                        run_interaction(&plan.engine, &query, Some(target), &mut responder, cfg, &mut rng)
                            .map_err(|i| i.error)
                    }
                }
            })
            .collect()
    })
}

/// Transcripts of one strategy for one seed.
pub fn run_strategy(
    corpus: &Corpus,
    models: &Models<'_>,
    strategy: Strategy,
    config: &SuiteConfig,
    seed: u64,
) -> Result<Vec<Transcript>> {
    let p = plan(strategy, corpus, models, config)?;
    run_plan(&p, models.simulator, seed, config.episodes, &thread_pool(config.jobs)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub episodes: usize,
    pub acc1: f64,
    pub acc3: f64,
    pub mean_turns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub strategy: String,
    /// Keyed by `k`.
    pub accuracy: BTreeMap<usize, Stat>,
    pub mean_turns: Stat,
    pub per_seed: Vec<SeedResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

impl EvalReport {
    pub fn acc(&self, k: usize) -> Stat {
        self.accuracy.get(&k).copied().unwrap_or(Stat { mean: 0.0, std: 0.0 })
    }
}

fn seed_for(config: &SuiteConfig, s: usize) -> u64 {
    derive_seed(config.seed, &[s as u64])
}

/// Run every requested strategy over `episodes x seeds` simulated episodes.
pub fn evaluate_suite(corpus: &Corpus, models: &Models<'_>, config: &SuiteConfig) -> Result<Vec<EvalReport>> {
    let plans = config
        .strategies
        .iter()
        .map(|&s| plan(s, corpus, models, config).map(|p| (s, p)))
        .collect::<Result<Vec<_>>>()?;
    if config.episodes == 0 || config.seeds == 0 {
        return Ok(Vec::new());
    }
    let pool = thread_pool(config.jobs)?;
    let mut reports = Vec::with_capacity(plans.len());
    for (strategy, p) in &plans {
        let mut per_seed = Vec::with_capacity(config.seeds);
        let mut confusion = config.confusion.then(|| ConfusionMatrix::new(models.engine.labels()));
        for s in 0..config.seeds {
            let seed = seed_for(config, s);
            let ts = run_plan(p, models.simulator, seed, config.episodes, &pool)?;
            if let Some(c) = confusion.as_mut() {
                c.add(&ts);
            }
            per_seed.push(SeedResult {
                seed,
                episodes: ts.len(),
                acc1: accuracy_at_k(&ts, 1),
                acc3: accuracy_at_k(&ts, 3),
                mean_turns: mean_turns(&ts),
            });
        }
        let col = |f: fn(&SeedResult) -> f64| Stat::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        let accuracy = BTreeMap::from([(1, col(|r| r.acc1)), (3, col(|r| r.acc3))]);
        reports.push(EvalReport {
            strategy: strategy.to_string(),
            accuracy,
            mean_turns: col(|r| r.mean_turns),
            per_seed,
            confusion,
        });
    }
    Ok(reports)
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("strategy,acc1_mean,acc1_std,acc3_mean,acc3_std,turns_mean,turns_std\n");
    for r in reports {
        let (a1, a3) = (r.acc(1), r.acc(3));
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.strategy, a1.mean, a1.std, a3.mean, a3.std, r.mean_turns.mean, r.mean_turns.std
        ));
    }
    s
}

/// Configurations swept by [`accuracy_vs_turns`].
#[derive(Debug, Clone, Default)]
pub struct CurveGrid<'a> {
    pub fixed_turns: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// Named policies, e.g. one per turn penalty.
    pub policies: Vec<(String, &'a PolicyModel)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub config: String,
    pub mean_turns: f64,
    pub acc1: f64,
    pub acc3: f64,
}

/// One accuracy/turns point per grid configuration, averaged over seeds.
pub fn accuracy_vs_turns(
    corpus: &Corpus,
    models: &Models<'_>,
    grid: &CurveGrid<'_>,
    config: &SuiteConfig,
) -> Result<Vec<CurvePoint>> {
    let pool = thread_pool(config.jobs)?;
    let mut configs: Vec<(String, String, Plan<'_>)> = Vec::new();
    for &n in &grid.fixed_turns {
        configs.push(("fixed".into(), n.to_string(), plan(Strategy::FixedTurns(n), corpus, models, config)?));
    }
    for &t in &grid.thresholds {
        configs.push(("threshold".into(), t.to_string(), plan(Strategy::Threshold(t), corpus, models, config)?));
    }
    for (name, policy) in &grid.policies {
        let with_policy = Models { policy: Some(policy), ..*models };
        configs.push(("policy".into(), name.clone(), plan(Strategy::Full, corpus, &with_policy, config)?));
    }
    let mut out = Vec::with_capacity(configs.len());
    for (strategy, cfg, p) in configs {
        let mut all = Vec::new();
        for s in 0..config.seeds {
            all.extend(run_plan(&p, models.simulator, seed_for(config, s), config.episodes, &pool)?);
        }
        out.push(CurvePoint {
            strategy,
            config: cfg,
            mean_turns: mean_turns(&all),
            acc1: accuracy_at_k(&all, 1),
            acc3: accuracy_at_k(&all, 3),
        });
    }
    Ok(out)
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("strategy,config,mean_turns,acc1,acc3\n");
    for p in points {
        s.push_str(&format!("{},{},{:.6},{:.6},{:.6}\n", p.strategy, p.config, p.mean_turns, p.acc1, p.acc3));
    }
    s
}

/// Rows are targets, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(catalog: &LabelCatalog) -> Self {
        let n = catalog.len();
        Self { labels: catalog.iter().map(|l| l.id.clone()).collect(), counts: vec![vec![0; n]; n] }
    }

    pub fn add(&mut self, transcripts: &[Transcript]) {
        for t in transcripts {
            if let Some(target) = t.target {
                self.counts[target][t.prediction] += 1;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Element-wise `self - other`.
    pub fn difference(&self, other: &ConfusionMatrix) -> Vec<Vec<i64>> {
        self.counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x as i64 - y as i64).collect())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("target,{}\n", self.labels.join(","));
        for (id, row) in self.labels.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            s.push_str(&format!("{id},{}\n", cells.join(",")));
        }
        s
    }
}

pub fn confusion_matrix(transcripts: &[Transcript], catalog: &LabelCatalog) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::new(catalog);
    m.add(transcripts);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{ResponseConfig, ResponseModel};
    use crate::dataset::{synth_world, SynthConfig};
    use crate::encoder::{train_encoder, TrainConfig};

    fn tx(target: usize, ranking: Vec<usize>, turns: usize) -> Transcript {
        Transcript {
            target: Some(target),
            query: String::new(),
            turns: (0..turns).map(|q| Turn { question: q, answer: Answer::Choice(0), top1: ranking[0] }).collect(),
            prediction: ranking[0],
            ranking,
            beliefs: vec![],
        }
    }

    #[test]
    fn accuracy_examples() {
        let all = vec![tx(0, vec![0, 1, 2], 0), tx(1, vec![1, 0, 2], 1)];
        assert_eq!(accuracy_at_k(&all, 1), 1.0);
        let mixed = vec![tx(0, vec![1, 2, 0], 0), tx(1, vec![1, 0, 2], 0), tx(2, vec![0, 2, 1], 0)];
        assert!((accuracy_at_k(&mixed, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!(accuracy_at_k(&mixed, 3) >= accuracy_at_k(&mixed, 1));
        assert_eq!(accuracy_at_k(&mixed, 3), 1.0);
        assert_eq!(accuracy_at_k(&[], 1), 0.0);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in SuiteConfig::default().strategies {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("random".parse::<Strategy>().unwrap(), Strategy::RandomInteraction(5));
        assert_eq!("fixed".parse::<Strategy>().unwrap(), Strategy::FixedTurns(4));
        assert!("full:3".parse::<Strategy>().is_err());
        assert!("threshold:1.5".parse::<Strategy>().is_err());
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn confusion_examples() {
        let labels = LabelCatalog::new(
            ["a", "b"].iter().map(|id| crate::dataset::Label { id: id.to_string(), text: id.to_string() }).collect(),
        )
        .unwrap();
        let m = confusion_matrix(&[tx(0, vec![0, 1], 0), tx(1, vec![1, 0], 0), tx(1, vec![1, 0], 0)], &labels);
        assert_eq!(m.counts, vec![vec![1, 0], vec![0, 2]]);
        assert_eq!(m.total(), 3);
        assert_eq!(m.trace(), 3);
        assert_eq!(m.to_csv(), "target,a,b\na,1,0\nb,0,2\n");
    }

    struct World {
        corpus: Corpus,
        engine: Engine,
        sim: SimulatorModel,
    }

    fn world() -> World {
        let w = synth_world(&SynthConfig::new(32, 5, 0.0, 3)).unwrap();
        let cfg = TrainConfig { epochs: 3, dim: 16, ..TrainConfig::default() };
        let (enc, _) = train_encoder(&w.corpus, &cfg).unwrap();
        let rm = ResponseModel::fit(&w.corpus, &enc, ResponseConfig::default()).unwrap();
        let engine = Engine::new(&w.corpus, enc, rm);
        let sim = SimulatorModel::from_split(&w.corpus, SplitPart::Test, 1.0).unwrap();
        World { corpus: w.corpus, engine, sim }
    }

    #[test]
    fn zero_turns_is_the_prior() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (target, query) = w.sim.start_episode(&mut rng).unwrap();
        let mut responder = ScriptedResponder::default();
        let cfg = InteractionConfig::new(Termination::FixedTurns(0), 10);
        let t = run_interaction(&w.engine, &query, Some(target), &mut responder, &cfg, &mut rng).unwrap();
        assert_eq!(t.n_turns(), 0);
        assert_eq!(t.prediction, crate::math::argmax(&w.engine.prior(&query)));
    }

    #[test]
    fn threshold_on_concentrated_prior_asks_nothing() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = InteractionConfig::new(Termination::Threshold(0.0), 10);
        let t =
            run_interaction(&w.engine, "anything", None, &mut ScriptedResponder::default(), &cfg, &mut rng).unwrap();
        assert_eq!(t.n_turns(), 0);
    }

    #[test]
    fn responder_failure_keeps_the_partial_transcript() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = InteractionConfig::new(Termination::FixedTurns(3), 10);
        let mut calls = 0;
        let mut flaky = |_q: usize, _question: &Question| {
            calls += 1;
            if calls < 3 {
                Ok(Answer::Choice(0))
            } else {
                Err(Error::Responder("gone".into()))
            }
        };
        let err = run_interaction(&w.engine, "item", None, &mut flaky, &cfg, &mut rng).unwrap_err();
        assert_eq!(err.partial.turns.len(), 2);
        assert!(matches!(err.error, Error::Responder(_)));
    }

    #[test]
    fn suite_is_reproducible_and_consistent() {
        let w = world();
        let models = Models { engine: &w.engine, policy: None, simulator: &w.sim };
        let cfg = SuiteConfig {
            strategies: vec![
                Strategy::NoInteraction,
                Strategy::Bm25,
                Strategy::RandomInteraction(3),
                Strategy::FixedTurns(2),
            ],
            episodes: 40,
            seeds: 2,
            confusion: true,
            ..SuiteConfig::default()
        };
        let a = evaluate_suite(&w.corpus, &models, &cfg).unwrap();
        let b = evaluate_suite(&w.corpus, &models, &SuiteConfig { jobs: 3, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert!(r.acc(3).mean >= r.acc(1).mean);
            for s in &r.per_seed {
                assert!(s.acc3 >= s.acc1 && (0.0..=1.0).contains(&s.acc1));
            }
            assert_eq!(r.confusion.as_ref().unwrap().total(), 80);
        }
        assert_eq!(a[3].mean_turns.mean, 2.0);
        let csv = reports_csv(&a);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn empty_suite_and_missing_policy() {
        let w = world();
        let models = Models { engine: &w.engine, policy: None, simulator: &w.sim };
        let cfg = SuiteConfig { strategies: vec![Strategy::NoInteraction], episodes: 0, ..SuiteConfig::default() };
        assert!(evaluate_suite(&w.corpus, &models, &cfg).unwrap().is_empty());
        let cfg = SuiteConfig { strategies: vec![Strategy::Full], episodes: 10, ..SuiteConfig::default() };
        assert!(matches!(evaluate_suite(&w.corpus, &models, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn curve_points_for_fixed_turns() {
        let w = world();
        let models = Models { engine: &w.engine, policy: None, simulator: &w.sim };
        let cfg = SuiteConfig { episodes: 30, seeds: 1, ..SuiteConfig::default() };
        let grid = CurveGrid { fixed_turns: vec![0, 1, 3], ..CurveGrid::default() };
        let pts = accuracy_vs_turns(&w.corpus, &models, &grid, &cfg).unwrap();
        assert_eq!(pts.len(), 3);
        for p in &pts {
            assert_eq!(p.mean_turns.fract(), 0.0);
        }
        let none = run_strategy(&w.corpus, &models, Strategy::NoInteraction, &cfg, seed_for(&cfg, 0)).unwrap();
        assert_eq!(pts[0].acc1, accuracy_at_k(&none, 1));
    }
}
