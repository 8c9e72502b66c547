//! Okapi BM25 over label texts, used as the keyword no-interaction baseline.

use std::collections::HashMap;

use crate::encoder::tokenize;
use crate::math::ranking;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    doc_len: Vec<f64>,
    avg_len: f64,
    /// token -> postings `(doc, term frequency)`
    postings: HashMap<String, Vec<(usize, f64)>>,
}

impl Bm25Index {
    pub fn new<S: AsRef<str>>(docs: &[S], k1: f64, b: f64) -> Self {
        let mut postings: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (d, text) in docs.iter().enumerate() {
            let toks = tokenize(text.as_ref());
            doc_len.push(toks.len() as f64);
            let mut tf: HashMap<String, f64> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1.0;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((d, c));
            }
        }
        let avg_len = if doc_len.is_empty() { 0.0 } else { doc_len.iter().sum::<f64>() / doc_len.len() as f64 };
        Self { k1, b, doc_len, avg_len, postings }
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`; zero for unseen tokens.
    pub fn idf(&self, token: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.postings.get(token).map_or(0, Vec::len) as f64;
        if df == 0.0 {
            return 0.0;
        }
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        for tok in tokenize(query) {
            let Some(list) = self.postings.get(&tok) else { continue };
            let idf = self.idf(&tok);
            for &(d, tf) in list {
                let norm = if self.avg_len > 0.0 { self.doc_len[d] / self.avg_len } else { 0.0 };
                scores[d] += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm));
            }
        }
        scores
    }

    /// Documents by descending score, ties in document order.
    pub fn rank(&self, query: &str) -> Vec<usize> {
        ranking(&self.scores(query))
    }
}

pub fn bm25_rank<S: AsRef<str>>(docs: &[S], query: &str, k1: f64, b: f64) -> Vec<usize> {
    Bm25Index::new(docs, k1, b).rank(query)
}
