//! Session-oriented HTTP API over the live interaction loop.
//!
//! A session moves `awaiting_query -> awaiting_answer* -> done`. Each step
//! runs the same stop rule, question selection and belief update as
//! [`run_interaction`](crate::evaluation::run_interaction), so a finished
//! session replays offline to the same predictions.

use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{offered_answers, Answer, BeliefState};
use crate::dataset::{Corpus, QuestionKind, NOT_APPLICABLE};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::evaluation::{Termination, Turn};
use crate::math::derive_seed;
use crate::policy::{PolicyModel, DEFAULT_MAX_TURNS};

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);
pub const TOP_SHOWN: usize = 3;

/// Owned counterpart of [`Termination`].
#[derive(Debug, Clone)]
pub enum StopRule {
    Policy(PolicyModel),
    Threshold(f64),
    FixedTurns(usize),
}

impl StopRule {
    pub fn termination(&self) -> Termination<'_> {
        match self {
            StopRule::Policy(p) => Termination::Policy(p),
            StopRule::Threshold(t) => Termination::Threshold(*t),
            StopRule::FixedTurns(n) => Termination::FixedTurns(*n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_turns: usize,
    /// Idle time after which a session is gone.
    pub ttl: Duration,
    /// Where daily `transcripts-YYYY-MM-DD.jsonl` files go; `None` disables logging.
    pub log_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_turns: DEFAULT_MAX_TURNS, ttl: DEFAULT_TTL, log_dir: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingQuery,
    AwaitingAnswer,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Gone,
    Conflict,
    Invalid,
    Internal,
}

impl ErrorKind {
    pub fn http_status(self) -> StatusCode {
        match self {
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Gone => StatusCode::GONE,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{message}")]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub message: String,
    /// Session status at the time of the error, when there is a session.
    pub status: Option<SessionStatus>,
    pub turn: usize,
    pub valid_answers: Option<Vec<String>>,
}

impl ServiceError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), status: None, turn: 0, valid_answers: None }
    }

    fn at(mut self, session: &Session) -> Self {
        self.status = Some(session.status);
        self.turn = session.turn;
        self
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    status: &'a str,
    turn: usize,
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    session_status: Option<SessionStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    valid_answers: Option<&'a [String]>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            status: "error",
            turn: self.turn,
            error: &self.message,
            session_status: self.status,
            valid_answers: self.valid_answers.as_deref(),
        };
        (self.kind.http_status(), Json(body)).into_response()
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub status: SessionStatus,
    pub turn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: String,
    pub text: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelView {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub id: String,
    pub text: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum StepAction {
    Ask {
        question: QuestionView,
    },
    Stop {
        prediction: LabelScore,
        top: Vec<LabelScore>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_truth: Option<LabelView>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub status: SessionStatus,
    pub turn: usize,
    #[serde(flatten)]
    pub action: StepAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub naturalness: u8,
    pub rationality: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAck {
    pub status: SessionStatus,
    pub turn: usize,
    pub rating: Rating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub question_id: String,
    pub question: String,
    pub answer: String,
    /// Most probable label id after the answer.
    pub top1: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptView {
    pub session_id: String,
    pub status: SessionStatus,
    pub turn: usize,
    #[serde(default)]
    pub query: Option<String>,
    pub turns: Vec<TurnView>,
    #[serde(default)]
    pub prediction: Option<String>,
    /// Only revealed once the session is done.
    #[serde(default)]
    pub scenario_id: Option<String>,
    #[serde(default)]
    pub rating: Option<Rating>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelInfo {
    pub status: String,
    pub turn: usize,
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub turn: usize,
    pub labels: usize,
    pub questions: usize,
    pub sessions: usize,
}

#[derive(Debug)]
struct Session {
    scenario: Option<usize>,
    status: SessionStatus,
    turn: usize,
    belief: Option<BeliefState>,
    pending: Option<usize>,
    turns: Vec<Turn>,
    prediction: Option<usize>,
    rating: Option<Rating>,
    last_active: Instant,
    rng: ChaCha8Rng,
}

struct Inner {
    engine: Engine,
    rule: StopRule,
    config: ServiceConfig,
    scenarios: Vec<Option<String>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    expired: Mutex<HashSet<String>>,
    created: AtomicU64,
    log_lock: Mutex<()>,
}

/// Shared handle to the models and live sessions; cheap to clone.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

/// User-facing description of a label built from its annotated attributes
/// (majority answer per question). Falls back to an annotated query when a
/// label has no informative answers.
pub fn scenario_text(corpus: &Corpus, label: usize) -> Option<String> {
    let id = &corpus.labels.get(label).id;
    let records: Vec<_> = corpus.records.iter().filter(|r| &r.label_id == id).collect();
    let mut votes: Vec<HashMap<&str, usize>> = vec![HashMap::new(); corpus.questions.len()];
    for r in &records {
        for qa in &r.qa_pairs {
            if let Some(q) = corpus.questions.position(&qa.q) {
                *votes[q].entry(qa.r.as_str()).or_default() += 1;
            }
        }
    }
    let mut traits = Vec::new();
    for (q, counts) in votes.iter().enumerate() {
        let Some((&answer, _)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else { continue };
        let question = corpus.questions.get(q);
        match question.kind {
            QuestionKind::Binary if answer == "yes" => traits.push(question.tag().to_string()),
            QuestionKind::Multichoice if !answer.eq_ignore_ascii_case(NOT_APPLICABLE) => {
                traits.push(format!("{}: {answer}", question.tag()))
            }
            _ => {}
        }
    }
    if !traits.is_empty() {
        return Some(format!("You are looking for help with something that involves {}.", traits.join("; ")));
    }
    let query = records.iter().flat_map(|r| &r.initial_queries).next()?;
    Some(format!("You are looking for help. Someone else described it as: \"{query}\"."))
}

impl Service {
    pub fn new(engine: Engine, corpus: &Corpus, rule: StopRule, config: ServiceConfig) -> Result<Self> {
        if corpus.labels.len() != engine.n_labels() || corpus.questions.len() != engine.bank().len() {
            return Err(Error::InvalidArgument("corpus does not match the engine".into()));
        }
        if config.max_turns == 0 {
            return Err(Error::InvalidArgument("max_turns must be positive".into()));
        }
        let scenarios = (0..corpus.labels.len()).map(|y| scenario_text(corpus, y)).collect();
        Ok(Self {
            inner: Arc::new(Inner {
                engine,
                rule,
                config,
                scenarios,
                sessions: RwLock::new(HashMap::new()),
                expired: Mutex::new(HashSet::new()),
                created: AtomicU64::new(0),
                log_lock: Mutex::new(()),
            }),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.inner.engine
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn create_session(&self, scenario_id: Option<&str>) -> ServiceResult<SessionCreated> {
        self.sweep_expired();
        let inner = &*self.inner;
        let (scenario, scenario_text) = match scenario_id {
            None => (None, None),
            Some(id) => {
                let y = inner
                    .engine
                    .labels()
                    .position(id)
                    .ok_or_else(|| ServiceError::new(ErrorKind::NotFound, format!("unknown scenario `{id}`")))?;
                let text = inner.scenarios[y].clone().ok_or_else(|| {
                    ServiceError::new(ErrorKind::Invalid, format!("scenario `{id}` has no annotations to describe it"))
                })?;
                (Some(y), Some(text))
            }
        };
        let n = inner.created.fetch_add(1, Ordering::Relaxed);
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session {
            scenario,
            status: SessionStatus::AwaitingQuery,
            turn: 0,
            belief: None,
            pending: None,
            turns: Vec::new(),
            prediction: None,
            rating: None,
            last_active: Instant::now(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(inner.config.seed, &[n])),
        };
        inner.sessions.write().expect("session map lock").insert(session_id.clone(), Arc::new(Mutex::new(session)));
        tracing::debug!(session = %session_id, "session created");
        Ok(SessionCreated { session_id, status: SessionStatus::AwaitingQuery, turn: 0, scenario_text })
    }

    pub fn submit_query(&self, session_id: &str, text: &str) -> ServiceResult<StepResult> {
        self.with_session(session_id, |s| {
            if s.status != SessionStatus::AwaitingQuery {
                return Err(ServiceError::new(ErrorKind::Conflict, "the initial query was already submitted").at(s));
            }
            if text.trim().is_empty() {
                return Err(ServiceError::new(ErrorKind::Invalid, "query text is empty").at(s));
            }
            s.belief = Some(self.inner.engine.initial_belief(text));
            Ok(self.advance(session_id, s))
        })
    }

    pub fn submit_answer(&self, session_id: &str, answer: &str) -> ServiceResult<StepResult> {
        let engine = &self.inner.engine;
        self.with_session(session_id, |s| {
            if s.status != SessionStatus::AwaitingAnswer {
                return Err(ServiceError::new(ErrorKind::Conflict, "no question is awaiting an answer").at(s));
            }
            let q = s.pending.expect("awaiting an answer");
            let question = engine.bank().get(q);
            let parsed = Answer::parse(question, answer).map_err(|e| {
                let mut err = ServiceError::new(ErrorKind::Invalid, e.to_string()).at(s);
                err.valid_answers = Some(offered_answers(question));
                err
            })?;
            let state = s.belief.as_mut().expect("belief exists once a query is in");
            engine.update(state, q, parsed).map_err(|e| ServiceError::new(ErrorKind::Internal, e.to_string()))?;
            s.turn += 1;
            s.turns.push(Turn { question: q, answer: parsed, top1: state.best() });
            s.pending = None;
            Ok(self.advance(session_id, s))
        })
    }

    pub fn submit_rating(&self, session_id: &str, naturalness: i64, rationality: i64) -> ServiceResult<RatingAck> {
        self.with_session(session_id, |s| {
            if s.status != SessionStatus::Done {
                return Err(
                    ServiceError::new(ErrorKind::Conflict, "ratings are accepted once the session is done").at(s)
                );
            }
            if s.rating.is_some() {
                return Err(ServiceError::new(ErrorKind::Conflict, "the session was already rated").at(s));
            }
            let in_range = |x: i64| (1..=5).contains(&x);
            if !in_range(naturalness) || !in_range(rationality) {
                return Err(ServiceError::new(
                    ErrorKind::Invalid,
                    format!(
                        "scores must be between 1 and 5 (got naturalness {naturalness}, rationality {rationality})"
                    ),
                )
                .at(s));
            }
            let rating = Rating { naturalness: naturalness as u8, rationality: rationality as u8 };
            s.rating = Some(rating);
            self.append_log(&serde_json::json!({
                "kind": "rating",
                "session_id": session_id,
                "naturalness": rating.naturalness,
                "rationality": rating.rationality,
                "at": chrono::Utc::now().to_rfc3339(),
            }));
            Ok(RatingAck { status: s.status, turn: s.turn, rating })
        })
    }

    pub fn transcript(&self, session_id: &str) -> ServiceResult<TranscriptView> {
        let engine = &self.inner.engine;
        self.with_session(session_id, |s| {
            let labels = engine.labels();
            let done = s.status == SessionStatus::Done;
            Ok(TranscriptView {
                session_id: session_id.to_string(),
                status: s.status,
                turn: s.turn,
                query: s.belief.as_ref().map(|b| b.query.clone()),
                turns: s
                    .turns
                    .iter()
                    .map(|t| {
                        let q = engine.bank().get(t.question);
                        TurnView {
                            question_id: q.id.clone(),
                            question: q.text.clone(),
                            answer: t.answer.text(q).to_string(),
                            top1: labels.get(t.top1).id.clone(),
                        }
                    })
                    .collect(),
                prediction: s.prediction.map(|y| labels.get(y).id.clone()),
                scenario_id: s.scenario.filter(|_| done).map(|y| labels.get(y).id.clone()),
                rating: s.rating,
            })
        })
    }

    pub fn label(&self, id: &str) -> ServiceResult<LabelInfo> {
        let labels = self.inner.engine.labels();
        let y = labels
            .position(id)
            .ok_or_else(|| ServiceError::new(ErrorKind::NotFound, format!("unknown label `{id}`")))?;
        let l = labels.get(y);
        Ok(LabelInfo { status: "ok".into(), turn: 0, id: l.id.clone(), text: l.text.clone() })
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            turn: 0,
            labels: self.inner.engine.n_labels(),
            questions: self.inner.engine.bank().len(),
            sessions: self.inner.sessions.read().expect("session map lock").len(),
        }
    }

    /// Drops sessions idle for longer than the TTL; returns how many.
    pub fn sweep_expired(&self) -> usize {
        let ttl = self.inner.config.ttl;
        let mut map = self.inner.sessions.write().expect("session map lock");
        let stale: Vec<String> = map
            .iter()
            .filter(|(_, s)| s.try_lock().is_ok_and(|s| s.last_active.elapsed() > ttl))
            .map(|(id, _)| id.clone())
            .collect();
        let mut expired = self.inner.expired.lock().expect("expired set lock");
        for id in &stale {
            map.remove(id);
            expired.insert(id.clone());
        }
        stale.len()
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> ServiceResult<T>) -> ServiceResult<T> {
        let handle = self.inner.sessions.read().expect("session map lock").get(id).cloned();
        let Some(handle) = handle else {
            return Err(if self.inner.expired.lock().expect("expired set lock").contains(id) {
                ServiceError::new(ErrorKind::Gone, format!("session `{id}` has expired"))
            } else {
                ServiceError::new(ErrorKind::NotFound, format!("unknown session `{id}`"))
            });
        };
        let mut session = handle.lock().expect("session lock");
        if session.last_active.elapsed() > self.inner.config.ttl {
            drop(session);
            self.inner.sessions.write().expect("session map lock").remove(id);
            self.inner.expired.lock().expect("expired set lock").insert(id.to_string());
            return Err(ServiceError::new(ErrorKind::Gone, format!("session `{id}` has expired")));
        }
        session.last_active = Instant::now();
        f(&mut session)
    }

    /// Ask the next question or stop, mirroring one iteration of the offline loop.
    fn advance(&self, session_id: &str, s: &mut Session) -> StepResult {
        let engine = &self.inner.engine;
        let termination = self.inner.rule.termination();
        let limit = termination.turn_limit(self.inner.config.max_turns);
        let state = s.belief.as_ref().expect("belief exists once a query is in");
        let next = if s.turn >= limit || termination.should_stop(state, s.turn, &mut s.rng) {
            None
        } else {
            engine.select(state)
        };
        if let Some(q) = next {
            let question = engine.bank().get(q);
            s.pending = Some(q);
            s.status = SessionStatus::AwaitingAnswer;
            return StepResult {
                status: s.status,
                turn: s.turn,
                action: StepAction::Ask {
                    question: QuestionView {
                        id: question.id.clone(),
                        text: question.text.clone(),
                        answers: offered_answers(question),
                    },
                },
            };
        }

        let labels = engine.labels();
        let score = |(y, p): (usize, f64)| LabelScore {
            id: labels.get(y).id.clone(),
            text: labels.get(y).text.clone(),
            probability: p,
        };
        let top: Vec<LabelScore> =
            state.top_k(TOP_SHOWN).into_iter().filter(|(y, _)| *y != usize::MAX).map(score).collect();
        let best = state.best();
        s.prediction = Some(best);
        s.status = SessionStatus::Done;
        self.append_log(&serde_json::json!({
            "kind": "transcript",
            "session_id": session_id,
            "scenario_id": s.scenario.map(|y| labels.get(y).id.clone()),
            "query": state.query,
            "turns": s.turns.iter().map(|t| {
                let q = engine.bank().get(t.question);
                serde_json::json!({"question_id": q.id, "answer": t.answer.text(q), "top1": labels.get(t.top1).id})
            }).collect::<Vec<_>>(),
            "prediction": labels.get(best).id,
            "top": top,
            "at": chrono::Utc::now().to_rfc3339(),
        }));
        StepResult {
            status: s.status,
            turn: s.turn,
            action: StepAction::Stop {
                prediction: score((best, state.probs()[best])),
                top,
                ground_truth: s
                    .scenario
                    .map(|y| LabelView { id: labels.get(y).id.clone(), text: labels.get(y).text.clone() }),
            },
        }
    }

    fn append_log(&self, record: &serde_json::Value) {
        let Some(dir) = &self.inner.config.log_dir else { return };
        let path = dir.join(format!("transcripts-{}.jsonl", chrono::Utc::now().format("%Y-%m-%d")));
        let _guard = self.inner.log_lock.lock().expect("log lock");
        let result = fs::create_dir_all(dir).and_then(|_| {
            let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
            writeln!(f, "{record}")
        });
        if let Err(e) = result {
            tracing::warn!(path = %path.display(), error = %e, "could not append to transcript log");
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct CreateBody {
    scenario_id: Option<String>,
}

#[derive(Debug, Deserialize)]
struct QueryBody {
    text: String,
}

#[derive(Debug, Deserialize)]
struct AnswerBody {
    answer: String,
}

#[derive(Debug, Deserialize)]
struct RatingBody {
    naturalness: i64,
    rationality: i64,
}

fn body<T>(payload: std::result::Result<Json<T>, JsonRejection>) -> ServiceResult<T> {
    payload.map(|Json(b)| b).map_err(|e| ServiceError::new(ErrorKind::Invalid, e.body_text()))
}

async fn create_handler(State(svc): State<Service>, raw: Bytes) -> ServiceResult<Json<SessionCreated>> {
    let req: CreateBody = if raw.iter().all(u8::is_ascii_whitespace) {
        CreateBody::default()
    } else {
        serde_json::from_slice(&raw)
            .map_err(|e| ServiceError::new(ErrorKind::Invalid, format!("invalid request body: {e}")))?
    };
    svc.create_session(req.scenario_id.as_deref()).map(Json)
}

async fn query_handler(
    State(svc): State<Service>,
    Path(id): Path<String>,
    payload: std::result::Result<Json<QueryBody>, JsonRejection>,
) -> ServiceResult<Json<StepResult>> {
    let req = body(payload)?;
    svc.submit_query(&id, &req.text).map(Json)
}

async fn answer_handler(
    State(svc): State<Service>,
    Path(id): Path<String>,
    payload: std::result::Result<Json<AnswerBody>, JsonRejection>,
) -> ServiceResult<Json<StepResult>> {
    let req = body(payload)?;
    svc.submit_answer(&id, &req.answer).map(Json)
}

async fn rating_handler(
    State(svc): State<Service>,
    Path(id): Path<String>,
    payload: std::result::Result<Json<RatingBody>, JsonRejection>,
) -> ServiceResult<Json<RatingAck>> {
    let req = body(payload)?;
    svc.submit_rating(&id, req.naturalness, req.rationality).map(Json)
}

async fn transcript_handler(State(svc): State<Service>, Path(id): Path<String>) -> ServiceResult<Json<TranscriptView>> {
    svc.transcript(&id).map(Json)
}

async fn label_handler(State(svc): State<Service>, Path(id): Path<String>) -> ServiceResult<Json<LabelInfo>> {
    svc.label(&id).map(Json)
}

async fn health_handler(State(svc): State<Service>) -> Json<Health> {
    Json(svc.health())
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/healthz", get(health_handler))
        .route("/sessions", post(create_handler))
        .route("/sessions/{id}/query", post(query_handler))
        .route("/sessions/{id}/answer", post(answer_handler))
        .route("/sessions/{id}/rating", post(rating_handler))
        .route("/sessions/{id}/transcript", get(transcript_handler))
        .route("/labels/{id}", get(label_handler))
        .with_state(service)
}

/// Serve on an already bound listener until it fails.
pub async fn serve_on(listener: tokio::net::TcpListener, service: Service) -> Result<()> {
    axum::serve(listener, router(service)).await.map_err(|e| Error::Server(e.to_string()))
}

/// Bind `addr` and serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, service: Service) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Server(format!("bind {addr}: {e}")))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Server(e.to_string()))
}
