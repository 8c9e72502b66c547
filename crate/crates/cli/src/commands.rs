use std::fs;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use clarion_core::dataset::{load_corpus, save_corpus, synth_world, SplitPart, SynthConfig};
use clarion_core::encoder::train_encoder as fit_encoder;
use clarion_core::evaluation::{
    accuracy_vs_turns, curve_csv, evaluate_suite, reports_csv, CurveGrid, EvalReport, Models, Strategy, SuiteConfig,
};
use clarion_core::policy::{train_policy as fit_policy, DEFAULT_HIDDEN, DEFAULT_MAX_TURNS, DEFAULT_TOP_K};
use clarion_core::service::{self, Service, ServiceConfig, StepAction, StopRule};
use clarion_core::{
    Corpus, EncoderModel, Engine, Error, PolicyModel, PolicyTrainConfig, ResponseConfig, ResponseModel, RewardConfig,
    SimulatorModel, TrainConfig,
};
use serde::Serialize;

use crate::{CliError, ModelPaths};

pub struct Global {
    pub seed: u64,
    pub jobs: usize,
}

type CmdResult = Result<(), CliError>;

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn load_engine(paths: &ModelPaths) -> Result<(Corpus, Engine), Error> {
    let corpus = load_corpus(&paths.corpus)?;
    let encoder = EncoderModel::load(&paths.encoder)?;
    let responses = ResponseModel::load(&paths.responses, &corpus, &encoder)?;
    let engine = Engine::new(&corpus, encoder, responses);
    Ok((corpus, engine))
}

/// Policy plus the engine with the policy's fine-tuned `w`, `b`.
fn load_policy(path: &Path, engine: &Engine) -> Result<(PolicyModel, Engine), Error> {
    let (policy, w, b) = PolicyModel::load(path)?;
    Ok((policy, engine.with_wb(w, b)))
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    labels: usize,
    /// Binary attributes per label.
    #[arg(long, default_value_t = 6)]
    attrs: usize,
    /// Probability an annotator flips an attribute.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 4)]
    annotators: usize,
    #[arg(long, default_value_t = 2)]
    queries_per_annotator: usize,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn synth(a: &SynthArgs, g: &Global) -> CmdResult {
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(CliError::Usage(format!("--noise must be in [0, 1], got {}", a.noise)));
    }
    let cfg = SynthConfig {
        annotators_per_label: a.annotators,
        queries_per_annotator: a.queries_per_annotator,
        ..SynthConfig::new(a.labels, a.attrs, a.noise, g.seed)
    };
    let world = synth_world(&cfg).map_err(|e| match e {
        Error::InvalidArgument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    save_corpus(&world.corpus, &a.out)?;
    let split = &world.corpus.split;
    println!(
        "wrote {} labels, {} questions ({}/{}/{} train/dev/test) to {}",
        world.corpus.labels.len(),
        world.corpus.questions.len(),
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainEncoderArgs {
    #[arg(long, env = "CLARION_CORPUS")]
    corpus: PathBuf,
    /// Encoder checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    /// Learning rate at the last epoch as a fraction of `--lr`.
    #[arg(long, default_value_t = TrainConfig::default().final_lr_fraction)]
    final_lr_fraction: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    /// Minimum negatives per batch.
    #[arg(long, default_value_t = TrainConfig::default().negatives_per_batch)]
    negatives: usize,
    #[arg(long, default_value_t = TrainConfig::default().augmentation_rate)]
    augmentation: f64,
    #[arg(long, default_value_t = TrainConfig::default().answer_weight)]
    answer_weight: f64,
    #[arg(long, default_value_t = TrainConfig::default().dim)]
    dim: usize,
    /// Optional CSV of the loss after each epoch.
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn train_encoder(a: &TrainEncoderArgs, g: &Global) -> CmdResult {
    if a.dim == 0 {
        return Err(CliError::Usage("--dim must be positive".into()));
    }
    let corpus = load_corpus(&a.corpus)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        negatives_per_batch: a.negatives,
        augmentation_rate: a.augmentation,
        answer_weight: a.answer_weight,
        final_lr_fraction: a.final_lr_fraction,
        dim: a.dim,
        seed: g.seed,
    };
    let (model, report) = fit_encoder(&corpus, &cfg)?;
    model.save(&a.out)?;
    if let Some(log) = &a.log {
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in report.losses.iter().enumerate() {
            csv.push_str(&format!("{i},{l:.6}\n"));
        }
        write_file(log, &csv)?;
    }
    println!(
        "trained on {} pairs; loss {:.4} -> {:.4}; wrote {}",
        report.pairs,
        report.losses.first().copied().unwrap_or(f64::NAN),
        report.losses.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct FitResponsesArgs {
    #[arg(long, env = "CLARION_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "CLARION_ENCODER")]
    encoder: PathBuf,
    /// Smoothing added to every answer count.
    #[arg(long, default_value_t = ResponseConfig::default().alpha)]
    alpha: f64,
    /// Weight of the counted estimate against the encoder estimate.
    #[arg(long, default_value_t = ResponseConfig::default().lambda)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn fit_responses(a: &FitResponsesArgs) -> CmdResult {
    let corpus = load_corpus(&a.corpus)?;
    let encoder = EncoderModel::load(&a.encoder)?;
    let rm = ResponseModel::fit(&corpus, &encoder, ResponseConfig { alpha: a.alpha, lambda: a.lambda })?;
    rm.save_counts(&a.out, &corpus)?;
    println!("wrote response counts for {} labels to {}", rm.n_labels(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct FitSimulatorArgs {
    #[arg(long, env = "CLARION_CORPUS")]
    corpus: PathBuf,
    /// Split whose annotations drive the simulator: train, dev or test.
    #[arg(long, default_value = "dev")]
    split: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn fit_simulator(a: &FitSimulatorArgs) -> CmdResult {
    let part: SplitPart = a.split.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let corpus = load_corpus(&a.corpus)?;
    let sim = SimulatorModel::from_split(&corpus, part, a.alpha)?;
    sim.save(&a.out)?;
    println!("simulator over {} {} labels written to {}", sim.labels().len(), part.name(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainPolicyArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[arg(long, env = "CLARION_SIMULATOR")]
    simulator: PathBuf,
    /// Reward added for every question asked (must be <= 0).
    #[arg(long, allow_negative_numbers = true, default_value_t = RewardConfig::default().turn_penalty)]
    turn_penalty: f64,
    #[arg(long, default_value_t = PolicyTrainConfig::default().episodes)]
    episodes: usize,
    #[arg(long, default_value_t = PolicyTrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = PolicyTrainConfig::default().learning_rate)]
    lr: f64,
    /// Step size for the fine-tuned `w`, `b` scalars; 0 freezes them.
    #[arg(long, default_value_t = PolicyTrainConfig::default().wb_learning_rate)]
    wb_lr: f64,
    #[arg(long, default_value_t = PolicyTrainConfig::default().baseline_decay)]
    baseline_decay: f64,
    /// Episodes per training-log row.
    #[arg(long, default_value_t = PolicyTrainConfig::default().log_interval)]
    log_interval: usize,
    /// Starting ASK-minus-STOP output bias of the controller.
    #[arg(long, allow_negative_numbers = true, default_value_t = PolicyTrainConfig::default().initial_ask_bias)]
    initial_ask_bias: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_TURNS)]
    max_turns: usize,
    /// Policy checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training-log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn train_policy(a: &TrainPolicyArgs, g: &Global) -> CmdResult {
    if a.top_k == 0 || a.max_turns == 0 {
        return Err(CliError::Usage("--top-k and --max-turns must be positive".into()));
    }
    let (corpus, engine) = load_engine(&a.models)?;
    let sim = SimulatorModel::load(&a.simulator, &corpus)?;
    let cfg = PolicyTrainConfig {
        episodes: a.episodes,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        wb_learning_rate: a.wb_lr,
        baseline_decay: a.baseline_decay,
        log_interval: a.log_interval,
        initial_ask_bias: a.initial_ask_bias,
        k: a.top_k,
        max_turns: a.max_turns,
        jobs: g.jobs,
        seed: g.seed,
        ..PolicyTrainConfig::default()
    };
    let out = fit_policy(&engine, &sim, &RewardConfig::with_turn_penalty(a.turn_penalty), &cfg)?;
    out.policy.save(&a.out, out.w, out.b)?;
    if let Some(log) = &a.log {
        write_file(log, &out.log_csv())?;
    }
    if let Some(last) = out.log.last() {
        println!(
            "episode {}: mean return {:.3}, mean turns {:.3}, accuracy {:.3}; w={:.4} b={:.4}",
            last.episode, last.mean_return, last.mean_turns, last.accuracy, out.w, out.b
        );
    }
    println!("wrote {} (hidden {DEFAULT_HIDDEN})", a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    models: ModelPaths,
    /// Simulator used as the evaluation user (normally fit on the test split).
    #[arg(long, env = "CLARION_SIMULATOR")]
    simulator: PathBuf,
    /// Policy checkpoint; required by full, no-init, lambda1 and zero-shot.
    #[arg(long, env = "CLARION_POLICY")]
    policy: Option<PathBuf>,
    /// Comma-separated strategies: none, bm25, random[:T], no-init, full,
    /// threshold[:t], fixed[:n], lambda1, zero-shot.
    #[arg(long, default_value = "none,bm25,random,no-init,full,threshold,fixed,lambda1,zero-shot")]
    suite: String,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_TURNS)]
    max_turns: usize,
    /// Report JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write one confusion-matrix CSV per strategy into this directory.
    #[arg(long)]
    confusion_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    episodes: usize,
    seeds: usize,
    seed: u64,
    max_turns: usize,
    reports: &'a [EvalReport],
}

fn parse_suite(text: &str) -> Result<Vec<Strategy>, CliError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Strategy>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn eval(a: &EvalArgs, g: &Global) -> CmdResult {
    let strategies = parse_suite(&a.suite)?;
    if strategies.is_empty() {
        return Err(CliError::Usage("--suite names no strategies".into()));
    }
    let (corpus, engine) = load_engine(&a.models)?;
    let sim = SimulatorModel::load(&a.simulator, &corpus)?;
    let loaded = a.policy.as_deref().map(|p| load_policy(p, &engine)).transpose()?;
    let (policy, engine) = match &loaded {
        Some((p, e)) => (Some(p), e),
        None => (None, &engine),
    };
    if policy.is_none() && strategies.iter().any(Strategy::needs_policy) {
        return Err(CliError::Usage("the suite needs --policy".into()));
    }
    let models = Models { engine, policy, simulator: &sim };
    let cfg = SuiteConfig {
        strategies,
        episodes: a.episodes,
        seeds: a.seeds,
        seed: g.seed,
        max_turns: a.max_turns,
        jobs: g.jobs,
        confusion: a.confusion_dir.is_some(),
        ..SuiteConfig::default()
    };
    let reports = evaluate_suite(&corpus, &models, &cfg)?;
    let file =
        ReportFile { episodes: a.episodes, seeds: a.seeds, seed: g.seed, max_turns: a.max_turns, reports: &reports };
    let json = serde_json::to_string_pretty(&file).expect("serializable") + "\n";
    match &a.out {
        Some(path) => write_file(path, &json)?,
        None => print!("{json}"),
    }
    if let Some(path) = &a.csv {
        write_file(path, &reports_csv(&reports))?;
    }
    if let Some(dir) = &a.confusion_dir {
        for r in &reports {
            if let Some(c) = &r.confusion {
                let name = r.strategy.replace([':', '.'], "_");
                write_file(&dir.join(format!("confusion-{name}.csv")), &c.to_csv())?;
            }
        }
    }
    for r in &reports {
        let (a1, a3) = (r.acc(1), r.acc(3));
        eprintln!(
            "{:<14} acc@1 {:.3} ± {:.3}  acc@3 {:.3} ± {:.3}  turns {:.2}",
            r.strategy, a1.mean, a1.std, a3.mean, a3.std, r.mean_turns.mean
        );
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[arg(long, env = "CLARION_SIMULATOR")]
    simulator: PathBuf,
    /// Fixed turn counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9,10")]
    fixed: Vec<usize>,
    /// Confidence thresholds to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7,0.8,0.9,0.95")]
    thresholds: Vec<f64>,
    /// Policies as `name=path` (or just a path); repeatable.
    #[arg(long = "policy", value_delimiter = ',')]
    policies: Vec<String>,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_TURNS)]
    max_turns: usize,
    /// Curve CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn curve(a: &CurveArgs, g: &Global) -> CmdResult {
    if a.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(CliError::Usage("thresholds must lie in [0, 1]".into()));
    }
    let (corpus, engine) = load_engine(&a.models)?;
    let sim = SimulatorModel::load(&a.simulator, &corpus)?;
    let mut policies = Vec::new();
    for spec in &a.policies {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                (p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned()), p)
            }
        };
        let (policy, _, _) = PolicyModel::load(&path)?;
        policies.push((name, policy));
    }
    let grid = CurveGrid {
        fixed_turns: a.fixed.clone(),
        thresholds: a.thresholds.clone(),
        policies: policies.iter().map(|(n, p)| (n.clone(), p)).collect(),
    };
    let models = Models { engine: &engine, policy: None, simulator: &sim };
    let cfg = SuiteConfig {
        strategies: Vec::new(),
        episodes: a.episodes,
        seeds: a.seeds,
        seed: g.seed,
        max_turns: a.max_turns,
        jobs: g.jobs,
        ..SuiteConfig::default()
    };
    let points = accuracy_vs_turns(&corpus, &models, &grid, &cfg)?;
    let csv = curve_csv(&points);
    match &a.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct SessionArgs {
    #[command(flatten)]
    models: ModelPaths,
    /// Policy checkpoint deciding when to stop; without one the confidence
    /// threshold is used.
    #[arg(long, env = "CLARION_POLICY")]
    policy: Option<PathBuf>,
    #[arg(long, env = "CLARION_THRESHOLD", default_value_t = 0.9)]
    threshold: f64,
    #[arg(long, env = "CLARION_MAX_TURNS", default_value_t = DEFAULT_MAX_TURNS)]
    max_turns: usize,
}

fn build_service(a: &SessionArgs, config: ServiceConfig) -> Result<(Service, Corpus), CliError> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Usage("--threshold must lie in [0, 1]".into()));
    }
    if a.max_turns == 0 {
        return Err(CliError::Usage("--max-turns must be positive".into()));
    }
    let (corpus, engine) = load_engine(&a.models)?;
    let (rule, engine) = match &a.policy {
        Some(path) => {
            let (p, e) = load_policy(path, &engine)?;
            (StopRule::Policy(p), e)
        }
        None => (StopRule::Threshold(a.threshold), engine),
    };
    let svc = Service::new(engine, &corpus, rule, ServiceConfig { max_turns: a.max_turns, ..config })?;
    Ok((svc, corpus))
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long, env = "CLARION_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "CLARION_PORT", default_value_t = 8080)]
    port: u16,
    /// Idle minutes before a session expires.
    #[arg(long, env = "CLARION_TTL_MINUTES", default_value_t = 30)]
    ttl_minutes: u64,
    /// Directory for daily transcript logs.
    #[arg(long, env = "CLARION_LOG_DIR")]
    log_dir: Option<PathBuf>,
}

pub fn serve(a: &ServeArgs, g: &Global) -> CmdResult {
    let addr: SocketAddr =
        format!("{}:{}", a.host, a.port).parse().map_err(|e| CliError::Usage(format!("bad --host/--port: {e}")))?;
    let config = ServiceConfig {
        ttl: Duration::from_secs(a.ttl_minutes * 60),
        log_dir: a.log_dir.clone(),
        seed: g.seed,
        ..ServiceConfig::default()
    };
    let (svc, _) = build_service(&a.session, config)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(g.jobs.max(2))
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(service::serve(addr, svc))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct InteractArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Label id to show as a scenario before the query.
    #[arg(long)]
    scenario: Option<String>,
}

fn read_line(input: &mut impl BufRead) -> Result<String, CliError> {
    let mut line = String::new();
    let n = input.read_line(&mut line).map_err(|e| CliError::Runtime(e.to_string()))?;
    if n == 0 {
        return Err(CliError::Runtime("input closed before the interaction finished".into()));
    }
    Ok(line.trim().to_string())
}

pub fn interact(a: &InteractArgs, g: &Global) -> CmdResult {
    let (svc, _) = build_service(&a.session, ServiceConfig { seed: g.seed, ..ServiceConfig::default() })?;
    let created = svc.create_session(a.scenario.as_deref()).map_err(|e| CliError::Usage(e.to_string()))?;
    let id = created.session_id;
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut out = std::io::stdout();
    let runtime = |e: std::io::Error| CliError::Runtime(e.to_string());
    if let Some(text) = &created.scenario_text {
        writeln!(out, "Scenario: {text}").map_err(runtime)?;
    }
    let mut step = loop {
        write!(out, "Your question: ").map_err(runtime)?;
        out.flush().map_err(runtime)?;
        let query = read_line(&mut input)?;
        match svc.submit_query(&id, &query) {
            Ok(step) => break step,
            Err(e) => writeln!(out, "{e}").map_err(runtime)?,
        }
    };
    loop {
        match &step.action {
            StepAction::Ask { question } => {
                writeln!(out, "\n[{}] {}", step.turn + 1, question.text).map_err(runtime)?;
                for (i, ans) in question.answers.iter().enumerate() {
                    writeln!(out, "  {}) {ans}", i + 1).map_err(runtime)?;
                }
                write!(out, "> ").map_err(runtime)?;
                out.flush().map_err(runtime)?;
                let reply = read_line(&mut input)?;
                let answer = match reply.parse::<usize>() {
                    Ok(n) if (1..=question.answers.len()).contains(&n) => question.answers[n - 1].clone(),
                    _ => reply,
                };
                match svc.submit_answer(&id, &answer) {
                    Ok(next) => step = next,
                    Err(e) => writeln!(out, "{e}").map_err(runtime)?,
                }
            }
            StepAction::Stop { prediction, top, ground_truth } => {
                writeln!(out, "\nPrediction after {} question(s): {} ({})", step.turn, prediction.text, prediction.id)
                    .map_err(runtime)?;
                for (i, l) in top.iter().enumerate() {
                    writeln!(out, "  {}. {} [{}] p={:.3}", i + 1, l.text, l.id, l.probability).map_err(runtime)?;
                }
                if let Some(truth) = ground_truth {
                    writeln!(out, "Scenario label: {} ({})", truth.text, truth.id).map_err(runtime)?;
                }
                return Ok(());
            }
        }
    }
}
