//! User simulator built from held-out annotations: it samples a target
//! label, an initial query for it, and noisy answers from smoothed counts.
//! The engine never reads these answer distributions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::Answer;
use crate::dataset::{AnnotationRecord, Corpus, LabelCatalog, QuestionBank, SplitPart, NOT_VISIBLE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatorModel {
    /// Catalog indices of the labels the simulator can play.
    labels: Vec<usize>,
    label_ids: Vec<String>,
    /// `[label][question]`: distribution over the question's answers,
    /// followed by one slot for "not visible".
    responses: Vec<Vec<Vec<f64>>>,
    query_pools: Vec<Vec<String>>,
    pub alpha: f64,
    #[serde(skip)]
    position: HashMap<usize, usize>,
}

impl SimulatorModel {
    /// `p'(r | q, y)` proportional to `count + alpha` over the answer set;
    /// observed "not visible" answers keep their raw count.
    pub fn fit(records: &[&AnnotationRecord], labels: &LabelCatalog, bank: &QuestionBank, alpha: f64) -> Result<Self> {
        if alpha.is_nan() || alpha < 0.0 {
            return Err(Error::Simulator("alpha must be non-negative".into()));
        }
        let mut order: Vec<usize> = Vec::new();
        let mut pos: HashMap<usize, usize> = HashMap::new();
        let mut counts: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut pools: Vec<Vec<String>> = Vec::new();
        for rec in records {
            let li = labels
                .position(&rec.label_id)
                .ok_or_else(|| Error::Simulator(format!("record for unknown label `{}`", rec.label_id)))?;
            let p = *pos.entry(li).or_insert_with(|| {
                order.push(li);
                counts.push(bank.iter().map(|q| vec![0.0; q.answers.len() + 1]).collect());
                pools.push(Vec::new());
                order.len() - 1
            });
            pools[p].extend(rec.initial_queries.iter().cloned());
            for qa in &rec.qa_pairs {
                let qi = bank
                    .position(&qa.q)
                    .ok_or_else(|| Error::Simulator(format!("record references unknown question `{}`", qa.q)))?;
                let q = bank.get(qi);
                let slot = match q.answer_index(&qa.r) {
                    Some(r) => r,
                    None if qa.r == NOT_VISIBLE && q.group.is_some() => q.answers.len(),
                    None => return Err(Error::Simulator(format!("answer `{}` not valid for `{}`", qa.r, qa.q))),
                };
                counts[p][qi][slot] += 1.0;
            }
        }

        // keep catalog order so sampling does not depend on record order
        let mut idx: Vec<usize> = (0..order.len()).collect();
        idx.sort_by_key(|&i| order[i]);

        let mut out_labels = Vec::with_capacity(idx.len());
        let mut responses = Vec::with_capacity(idx.len());
        let mut query_pools = Vec::with_capacity(idx.len());
        for i in idx {
            let li = order[i];
            let mut per_q = Vec::with_capacity(bank.len());
            for (qi, row) in counts[i].iter().enumerate() {
                let n = row.len() - 1;
                let total: f64 = row[..n].iter().sum::<f64>() + alpha * n as f64 + row[n];
                if total <= 0.0 {
                    return Err(Error::Simulator(format!(
                        "no answers for label `{}` and question `{}` and alpha = 0",
                        labels.get(li).id,
                        bank.get(qi).id
                    )));
                }
                let mut dist: Vec<f64> = row[..n].iter().map(|c| (c + alpha) / total).collect();
                dist.push(row[n] / total);
                per_q.push(dist);
            }
            out_labels.push(li);
            responses.push(per_q);
            query_pools.push(std::mem::take(&mut pools[i]));
        }
        let label_ids = out_labels.iter().map(|&l| labels.get(l).id.clone()).collect();
        let mut sim = Self { labels: out_labels, label_ids, responses, query_pools, alpha, position: HashMap::new() };
        sim.reindex();
        Ok(sim)
    }

    /// Simulator over one held-out split. Refuses the train split, whose
    /// annotations also train the encoder.
    pub fn from_split(corpus: &Corpus, part: SplitPart, alpha: f64) -> Result<Self> {
        if part == SplitPart::Train {
            return Err(Error::DataLeak("the simulator cannot be built from encoder training records".into()));
        }
        let records = corpus.records_in(part);
        let train: std::collections::HashSet<&str> = corpus.split.train.iter().map(String::as_str).collect();
        if let Some(r) = records.iter().find(|r| train.contains(r.label_id.as_str())) {
            return Err(Error::DataLeak(format!(
                "label `{}` is in both the train split and the simulator data",
                r.label_id
            )));
        }
        Self::fit(&records, &corpus.labels, &corpus.questions, alpha)
    }

    fn reindex(&mut self) {
        self.position = self.labels.iter().enumerate().map(|(p, &l)| (l, p)).collect();
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn contains(&self, label: usize) -> bool {
        self.position.contains_key(&label)
    }

    pub fn query_pool(&self, label: usize) -> Option<&[String]> {
        self.position.get(&label).map(|&p| self.query_pools[p].as_slice())
    }

    /// `p'(· | q, label)`, with the trailing "not visible" slot.
    pub fn response_distribution(&self, q: usize, label: usize) -> Option<&[f64]> {
        self.position.get(&label).map(|&p| self.responses[p][q].as_slice())
    }

    /// Uniform target label, then a uniform query from its pool.
    pub fn start_episode(&self, rng: &mut impl Rng) -> Result<(usize, String)> {
        if self.labels.is_empty() {
            return Err(Error::Simulator("no labels to simulate".into()));
        }
        if let Some(p) = self.query_pools.iter().position(Vec::is_empty) {
            return Err(Error::Simulator(format!("label `{}` has an empty query pool", self.label_ids[p])));
        }
        let p = rng.gen_range(0..self.labels.len());
        let pool = &self.query_pools[p];
        let query = pool[rng.gen_range(0..pool.len())].clone();
        Ok((self.labels[p], query))
    }

    /// Draw an answer to question `q` for `target` from `p'`.
    pub fn sample_response(&self, q: usize, target: usize, rng: &mut impl Rng) -> Result<Answer> {
        let dist = self
            .response_distribution(q, target)
            .ok_or_else(|| Error::Simulator(format!("label index {target} is not simulated")))?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let last_nonzero = dist.iter().rposition(|p| *p > 0.0).expect("non-empty distribution");
        for (i, p) in dist.iter().enumerate() {
            acc += p;
            if u < acc || i == last_nonzero {
                return Ok(if i == dist.len() - 1 { Answer::NotVisible } else { Answer::Choice(i) });
            }
        }
        unreachable!("cumulative sum reaches the last non-zero slot")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self).expect("serializable")).map_err(|e| Error::io(path, e))
    }

    /// Load a saved simulator and check it against the corpus it came from.
    pub fn load(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut sim: Self = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        for (&l, id) in sim.labels.iter().zip(&sim.label_ids) {
            if corpus.labels.position(id) != Some(l) {
                return Err(bad(format!("label `{id}` does not match the corpus")));
            }
        }
        for per_q in &sim.responses {
            if per_q.len() != corpus.questions.len() {
                return Err(bad("question count does not match the corpus".into()));
            }
        }
        sim.reindex();
        Ok(sim)
    }
}
