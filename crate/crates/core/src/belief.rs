//! Answer likelihoods `p(r | q, y)` and the running posterior over labels.
//!
//! The response model mixes smoothed empirical answer counts with an
//! encoder-based estimate; [`LikelihoodTable`] materializes the mixture
//! (floored and renormalized) for every question, label and answer so the
//! belief update and question selection read the same numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Question, QuestionBank, NOT_VISIBLE};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::math::{dot, entropy, floor_and_normalize, logsumexp, ranking, softmax};

#[derive(Debug, Clone, Copy)]
pub struct ResponseConfig {
    /// Additive smoothing for the empirical counts.
    pub alpha: f64,
    /// Weight of the empirical estimate in the mixture.
    pub lambda: f64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self { alpha: 0.1, lambda: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct ResponseModel {
    n_labels: usize,
    n_answers: Vec<usize>,
    /// Offset of each question inside a label's block.
    offsets: Vec<usize>,
    block: usize,
    /// `[label][question][answer]`, flattened.
    counts: Vec<f64>,
    /// `S(q#r, y)` with the same layout.
    scores: Vec<f64>,
    hidden: Vec<bool>,
    pub alpha: f64,
    pub lambda: f64,
    pub w: f64,
    pub b: f64,
}

impl ResponseModel {
    /// Build from raw parts. `counts` and `scores` are indexed `[label][question][answer]`.
    pub fn from_parts(
        n_answers: Vec<usize>,
        counts: Vec<Vec<Vec<f64>>>,
        scores: Vec<Vec<Vec<f64>>>,
        config: ResponseConfig,
        w: f64,
        b: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", config.lambda)));
        }
        if config.alpha.is_nan() || config.alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be non-negative".into()));
        }
        let n_labels = counts.len();
        let mut offsets = Vec::with_capacity(n_answers.len());
        let mut block = 0;
        for &n in &n_answers {
            offsets.push(block);
            block += n;
        }
        let flatten = |t: Vec<Vec<Vec<f64>>>, what: &str| -> Result<Vec<f64>> {
            if t.len() != n_labels {
                return Err(Error::InvalidArgument(format!("{what}: expected {n_labels} labels")));
            }
            let mut out = Vec::with_capacity(n_labels * block);
            for per_label in t {
                if per_label.len() != n_answers.len() {
                    return Err(Error::InvalidArgument(format!("{what}: wrong question count")));
                }
                for (q, row) in per_label.into_iter().enumerate() {
                    if row.len() != n_answers[q] {
                        return Err(Error::InvalidArgument(format!("{what}: wrong answer count for question {q}")));
                    }
                    out.extend(row);
                }
            }
            Ok(out)
        };
        let counts = flatten(counts, "counts")?;
        if counts.iter().any(|c| c.is_nan() || *c < 0.0) {
            return Err(Error::InvalidArgument("counts must be non-negative".into()));
        }
        let scores = flatten(scores, "scores")?;
        Ok(Self {
            n_labels,
            n_answers,
            offsets,
            block,
            counts,
            scores,
            hidden: vec![false; n_labels],
            alpha: config.alpha,
            lambda: config.lambda,
            w,
            b,
        })
    }

    /// Empirical counts from every corpus record, encoder scores for every
    /// (question, answer, label) triple, and `w`, `b` from the encoder.
    pub fn fit(corpus: &Corpus, encoder: &EncoderModel, config: ResponseConfig) -> Result<Self> {
        let counts = count_answers(corpus);
        let scores = score_table(corpus, encoder);
        let n_answers = corpus.questions.iter().map(|q| q.answers.len()).collect();
        Self::from_parts(n_answers, counts, scores, config, encoder.w, encoder.b)
    }

    /// Like [`fit`](Self::fit) but with counts read from a file written by
    /// [`save_counts`](Self::save_counts).
    pub fn load(path: impl AsRef<Path>, corpus: &Corpus, encoder: &EncoderModel) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CountsFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if file.version != 1 {
            return Err(bad(format!("unsupported version {}", file.version)));
        }
        let mut counts: Vec<Vec<Vec<f64>>> = corpus
            .labels
            .iter()
            .map(|_| corpus.questions.iter().map(|q| vec![0.0; q.answers.len()]).collect())
            .collect();
        for (label_id, per_q) in &file.counts {
            let li = corpus.labels.position(label_id).ok_or_else(|| bad(format!("unknown label `{label_id}`")))?;
            for (qid, row) in per_q {
                let qi = corpus.questions.position(qid).ok_or_else(|| bad(format!("unknown question `{qid}`")))?;
                if row.len() != corpus.questions.get(qi).answers.len() {
                    return Err(bad(format!("answer count mismatch for `{label_id}`/`{qid}`")));
                }
                counts[li][qi] = row.clone();
            }
        }
        let scores = score_table(corpus, encoder);
        let n_answers = corpus.questions.iter().map(|q| q.answers.len()).collect();
        Self::from_parts(
            n_answers,
            counts,
            scores,
            ResponseConfig { alpha: file.alpha, lambda: file.lambda },
            encoder.w,
            encoder.b,
        )
    }

    pub fn save_counts(&self, path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
        let path = path.as_ref();
        let mut counts = BTreeMap::new();
        for (li, label) in corpus.labels.iter().enumerate() {
            let mut per_q = BTreeMap::new();
            for (qi, q) in corpus.questions.iter().enumerate() {
                let row = self.counts_row(qi, li);
                if row.iter().any(|c| *c > 0.0) {
                    per_q.insert(q.id.clone(), row.to_vec());
                }
            }
            if !per_q.is_empty() {
                counts.insert(label.id.clone(), per_q);
            }
        }
        let file = CountsFile { version: 1, alpha: self.alpha, lambda: self.lambda, counts };
        fs::write(path, serde_json::to_string(&file).expect("serializable")).map_err(|e| Error::io(path, e))
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_questions(&self) -> usize {
        self.n_answers.len()
    }

    fn idx(&self, q: usize, y: usize) -> std::ops::Range<usize> {
        let start = y * self.block + self.offsets[q];
        start..start + self.n_answers[q]
    }

    fn counts_row(&self, q: usize, y: usize) -> &[f64] {
        &self.counts[self.idx(q, y)]
    }

    /// Same model with a different mixture weight.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// Same model with the empirical estimate removed for `labels`, so
    /// their likelihoods come from the encoder alone.
    pub fn with_hidden_empirical(&self, labels: impl IntoIterator<Item = usize>) -> Self {
        let mut out = self.clone();
        for l in labels {
            out.hidden[l] = true;
        }
        out
    }

    /// Smoothed empirical `p̂(· | q, y)`, or `None` when there is nothing to
    /// estimate from (no counts and no smoothing, or masked).
    pub fn empirical_response(&self, q: usize, y: usize) -> Option<Vec<f64>> {
        if self.hidden[y] {
            return None;
        }
        let row = self.counts_row(q, y);
        let total: f64 = row.iter().sum::<f64>() + self.alpha * row.len() as f64;
        if total <= 0.0 {
            return None;
        }
        Some(row.iter().map(|c| (c + self.alpha) / total).collect())
    }

    /// Encoder-based `p̃(· | q, y)`: softmax over answers of `w * S(q#r, y) + b`.
    pub fn param_distribution(&self, q: usize, y: usize) -> Vec<f64> {
        let logits: Vec<f64> = self.scores[self.idx(q, y)].iter().map(|s| self.w * s + self.b).collect();
        softmax(&logits)
    }

    pub fn param_response(&self, q: usize, r: usize, y: usize) -> f64 {
        self.param_distribution(q, y)[r]
    }

    /// Unfloored mixture `λ p̂ + (1 - λ) p̃`, or `p̃` alone when `p̂` is absent.
    pub fn response_distribution(&self, q: usize, y: usize) -> Vec<f64> {
        let param = self.param_distribution(q, y);
        match self.empirical_response(q, y) {
            Some(emp) => emp.iter().zip(&param).map(|(e, p)| self.lambda * e + (1.0 - self.lambda) * p).collect(),
            None => param,
        }
    }

    pub fn response_prob(&self, q: usize, r: usize, y: usize) -> f64 {
        self.response_distribution(q, y)[r]
    }

    pub fn table(&self) -> LikelihoodTable {
        let per_q = (0..self.n_questions())
            .map(|q| (0..self.n_labels).map(|y| self.response_distribution(q, y)).collect())
            .collect();
        LikelihoodTable::from_distributions(self.n_labels, per_q).expect("response model rows are well formed")
    }
}

#[derive(Serialize, Deserialize)]
struct CountsFile {
    version: u32,
    alpha: f64,
    lambda: f64,
    counts: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
}

/// Answer counts `[label][question][answer]` over all corpus records.
/// "not visible" answers carry no information about the label and are skipped.
pub fn count_answers(corpus: &Corpus) -> Vec<Vec<Vec<f64>>> {
    let mut counts: Vec<Vec<Vec<f64>>> =
        corpus.labels.iter().map(|_| corpus.questions.iter().map(|q| vec![0.0; q.answers.len()]).collect()).collect();
    for rec in &corpus.records {
        let li = corpus.labels.position(&rec.label_id).expect("validated corpus");
        for qa in &rec.qa_pairs {
            let qi = corpus.questions.position(&qa.q).expect("validated corpus");
            if let Some(ri) = corpus.questions.get(qi).answer_index(&qa.r) {
                counts[li][qi][ri] += 1.0;
            }
        }
    }
    counts
}

/// `S(q#r, y)` for every label, question and answer.
pub fn score_table(corpus: &Corpus, encoder: &EncoderModel) -> Vec<Vec<Vec<f64>>> {
    let labels = encoder.encode_labels(&corpus.labels);
    let qa: Vec<Vec<Vec<f64>>> = corpus
        .questions
        .iter()
        .map(|q| q.answers.iter().map(|a| encoder.encode(&q.with_answer(a))).collect())
        .collect();
    labels.iter().map(|ey| qa.iter().map(|answers| answers.iter().map(|e| dot(e, ey)).collect()).collect()).collect()
}

/// Floored, normalized `p(r | q, y)` for every question.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    n_labels: usize,
    questions: Vec<QuestionLikelihood>,
}

#[derive(Debug, Clone, PartialEq)]
struct QuestionLikelihood {
    n_answers: usize,
    /// `[label][answer]`, flattened.
    probs: Vec<f64>,
    logs: Vec<f64>,
}

impl LikelihoodTable {
    /// `dists[q][y]` is a distribution over the answers of question `q`.
    /// Entries are clamped at [`crate::math::PROB_FLOOR`] and each row renormalized.
    pub fn from_distributions(n_labels: usize, dists: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mut questions = Vec::with_capacity(dists.len());
        for (qi, per_label) in dists.into_iter().enumerate() {
            if per_label.len() != n_labels {
                return Err(Error::InvalidArgument(format!("question {qi}: expected {n_labels} label rows")));
            }
            let n_answers = per_label.first().map_or(0, Vec::len);
            if n_answers < 2 {
                return Err(Error::InvalidArgument(format!("question {qi}: needs at least two answers")));
            }
            let mut probs = Vec::with_capacity(n_labels * n_answers);
            for mut row in per_label {
                if row.len() != n_answers {
                    return Err(Error::InvalidArgument(format!("question {qi}: ragged answer rows")));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidArgument(format!("question {qi}: invalid probability")));
                }
                floor_and_normalize(&mut row);
                probs.extend(row);
            }
            let logs = probs.iter().map(|p| p.ln()).collect();
            questions.push(QuestionLikelihood { n_answers, probs, logs });
        }
        Ok(Self { n_labels, questions })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn n_answers(&self, q: usize) -> usize {
        self.questions[q].n_answers
    }

    pub fn prob(&self, q: usize, y: usize, r: usize) -> f64 {
        let t = &self.questions[q];
        t.probs[y * t.n_answers + r]
    }

    pub fn log_prob(&self, q: usize, y: usize, r: usize) -> f64 {
        let t = &self.questions[q];
        t.logs[y * t.n_answers + r]
    }

    /// `p(· | q, y)`.
    pub fn row(&self, q: usize, y: usize) -> &[f64] {
        let t = &self.questions[q];
        &t.probs[y * t.n_answers..(y + 1) * t.n_answers]
    }
}

/// A user's reply to a clarification question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    /// Index into the question's answer list.
    Choice(usize),
    /// The asked-about part cannot be observed; only valid for grouped questions.
    NotVisible,
}

impl Answer {
    pub fn parse(question: &Question, text: &str) -> Result<Self> {
        if let Some(i) = question.answer_index(text) {
            return Ok(Answer::Choice(i));
        }
        if question.group.is_some() && text.eq_ignore_ascii_case(NOT_VISIBLE) {
            return Ok(Answer::NotVisible);
        }
        Err(Error::InvalidAnswer {
            question: question.id.clone(),
            answer: text.to_string(),
            valid: offered_answers(question),
        })
    }

    pub fn text<'a>(&self, question: &'a Question) -> &'a str {
        match self {
            Answer::Choice(i) => &question.answers[*i],
            Answer::NotVisible => NOT_VISIBLE,
        }
    }
}

/// Answers a user may give: the answer set, plus "not visible" for grouped questions.
pub fn offered_answers(question: &Question) -> Vec<String> {
    let mut out = question.answers.clone();
    if question.group.is_some() {
        out.push(NOT_VISIBLE.to_string());
    }
    out
}

/// Normalized log-posterior over labels plus the interaction so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub query: String,
    log_belief: Vec<f64>,
    history: Vec<(usize, Answer)>,
    asked: BTreeSet<usize>,
    skipped_groups: BTreeSet<String>,
}

impl BeliefState {
    /// Start from `p(y | query)`. Zero entries are floored so later evidence
    /// can still recover them.
    pub fn new(prior: &[f64], query: impl Into<String>) -> Result<Self> {
        if prior.is_empty() {
            return Err(Error::InvalidArgument("prior over zero labels".into()));
        }
        if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("prior has negative or non-finite entries".into()));
        }
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("prior sums to {sum}, not 1")));
        }
        let mut p = prior.to_vec();
        floor_and_normalize(&mut p);
        Ok(Self::from_logs(p.iter().map(|x| x.ln()).collect(), query.into()))
    }

    pub fn uniform(n_labels: usize) -> Self {
        assert!(n_labels > 0);
        Self::from_logs(vec![-(n_labels as f64).ln(); n_labels], String::new())
    }

    fn from_logs(log_belief: Vec<f64>, query: String) -> Self {
        Self { query, log_belief, history: Vec::new(), asked: BTreeSet::new(), skipped_groups: BTreeSet::new() }
    }

    pub fn n_labels(&self) -> usize {
        self.log_belief.len()
    }

    pub fn log_belief(&self) -> &[f64] {
        &self.log_belief
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_belief.iter().map(|l| l.exp()).collect()
    }

    pub fn history(&self) -> &[(usize, Answer)] {
        &self.history
    }

    pub fn asked(&self) -> &BTreeSet<usize> {
        &self.asked
    }

    pub fn skipped_groups(&self) -> &BTreeSet<String> {
        &self.skipped_groups
    }

    pub fn is_eligible(&self, bank: &QuestionBank, q: usize) -> bool {
        !self.asked.contains(&q) && bank.get(q).group.as_ref().is_none_or(|g| !self.skipped_groups.contains(g))
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs())
    }

    /// Condition on the answer `answer` to question `q`: add
    /// `log p(answer | q, y)` to every label and renormalize. A "not visible"
    /// answer leaves the belief as is and skips the question's group.
    pub fn update(&mut self, bank: &QuestionBank, table: &LikelihoodTable, q: usize, answer: Answer) -> Result<()> {
        let question = bank.get(q);
        if self.asked.contains(&q) {
            return Err(Error::AlreadyAsked(question.id.clone()));
        }
        match answer {
            Answer::Choice(r) if r < question.answers.len() && r < table.n_answers(q) => {
                for (y, lb) in self.log_belief.iter_mut().enumerate() {
                    *lb += table.log_prob(q, y, r);
                }
                let norm = logsumexp(&self.log_belief);
                for lb in &mut self.log_belief {
                    *lb -= norm;
                }
            }
            Answer::NotVisible if question.group.is_some() => {
                self.skipped_groups.insert(question.group.clone().expect("checked"));
            }
            other => {
                let text = match other {
                    Answer::Choice(r) => format!("#{r}"),
                    Answer::NotVisible => NOT_VISIBLE.into(),
                };
                return Err(Error::InvalidAnswer {
                    question: question.id.clone(),
                    answer: text,
                    valid: offered_answers(question),
                });
            }
        }
        self.asked.insert(q);
        self.history.push((q, answer));
        Ok(())
    }

    /// The `k` most probable labels, descending, ties by catalog order,
    /// padded with `(usize::MAX, 0.0)` when there are fewer than `k` labels.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let probs = self.probs();
        let mut out: Vec<(usize, f64)> = ranking(&probs).into_iter().take(k).map(|i| (i, probs[i])).collect();
        out.resize(k, (usize::MAX, 0.0));
        out
    }

    pub fn top_k_probs(&self, k: usize) -> Vec<f64> {
        self.top_k(k).into_iter().map(|(_, p)| p).collect()
    }

    /// Most probable label, ties to the lowest index.
    pub fn best(&self) -> usize {
        crate::math::argmax(&self.log_belief)
    }
}

/// Direct evaluation of `p(y | x) * prod_t p(r_t | q_t, y)`, normalized.
pub fn batch_posterior(prior: &[f64], table: &LikelihoodTable, history: &[(usize, usize)]) -> Vec<f64> {
    let mut p = prior.to_vec();
    floor_and_normalize(&mut p);
    let mut logs: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    for &(q, r) in history {
        for (y, l) in logs.iter_mut().enumerate() {
            *l += table.log_prob(q, y, r);
        }
    }
    let norm = logsumexp(&logs);
    logs.iter().map(|l| (l - norm).exp()).collect()
}
