//! Bundles the models needed to run an interaction: encoder (prior),
//! response model (likelihoods) and the question bank.

use std::sync::Arc;

use crate::belief::{Answer, BeliefState, LikelihoodTable, ResponseModel};
use crate::dataset::{Corpus, LabelCatalog, QuestionBank};
use crate::encoder::EncoderModel;
use crate::error::Result;
use crate::selection::select_question;

#[derive(Debug, Clone)]
pub struct Engine {
    encoder: Arc<EncoderModel>,
    labels: Arc<LabelCatalog>,
    bank: Arc<QuestionBank>,
    label_encodings: Arc<Vec<Vec<f64>>>,
    responses: ResponseModel,
    table: Arc<LikelihoodTable>,
}

impl Engine {
    pub fn new(corpus: &Corpus, encoder: impl Into<Arc<EncoderModel>>, responses: ResponseModel) -> Self {
        let encoder = encoder.into();
        let label_encodings = Arc::new(encoder.encode_labels(&corpus.labels));
        let table = Arc::new(responses.table());
        Self {
            encoder,
            labels: Arc::new(corpus.labels.clone()),
            bank: Arc::new(corpus.questions.clone()),
            label_encodings,
            responses,
            table,
        }
    }

    pub fn encoder(&self) -> &EncoderModel {
        &self.encoder
    }

    pub fn labels(&self) -> &LabelCatalog {
        &self.labels
    }

    pub fn bank(&self) -> &QuestionBank {
        &self.bank
    }

    pub fn responses(&self) -> &ResponseModel {
        &self.responses
    }

    pub fn table(&self) -> &LikelihoodTable {
        &self.table
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    /// Same engine with a different response model.
    pub fn with_responses(&self, responses: ResponseModel) -> Self {
        Self { table: Arc::new(responses.table()), responses, ..self.clone() }
    }

    pub fn with_wb(&self, w: f64, b: f64) -> Self {
        let mut rm = self.responses.clone();
        rm.w = w;
        rm.b = b;
        self.with_responses(rm)
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        self.with_responses(self.responses.with_lambda(lambda))
    }

    pub fn with_hidden_empirical(&self, labels: impl IntoIterator<Item = usize>) -> Self {
        self.with_responses(self.responses.with_hidden_empirical(labels))
    }

    pub fn prior(&self, query: &str) -> Vec<f64> {
        self.encoder.prior_from_encodings(query, &self.label_encodings)
    }

    pub fn initial_belief(&self, query: &str) -> BeliefState {
        BeliefState::new(&self.prior(query), query).expect("softmax output is a distribution")
    }

    pub fn uniform_belief(&self) -> BeliefState {
        BeliefState::uniform(self.n_labels())
    }

    pub fn select(&self, state: &BeliefState) -> Option<usize> {
        select_question(state, &self.bank, &self.table)
    }

    pub fn update(&self, state: &mut BeliefState, q: usize, answer: Answer) -> Result<()> {
        state.update(&self.bank, &self.table, q, answer)
    }
}
