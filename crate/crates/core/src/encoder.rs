//! Shared text encoder: mean-pooled trainable embeddings over unigram and
//! (query-side) bigram features, the dot-product score, the label prior,
//! and contrastive pre-training with in-batch negatives.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, LabelCatalog, QuestionKind, SplitPart, NOT_APPLICABLE, NOT_VISIBLE};
use crate::error::{Error, Result};
use crate::math::{dot, logsumexp, softmax};

pub const OOV_TOKEN: &str = "<oov>";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Lowercase, split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

fn bigram(a: &str, b: &str) -> String {
    format!("{a} {b}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    vocab: HashMap<String, usize>,
    dim: usize,
    /// Row-major `vocab.len() x dim`.
    embeddings: Vec<f64>,
    pub w: f64,
    pub b: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    d: usize,
    vocab: BTreeMap<String, usize>,
    embeddings: Vec<Vec<f64>>,
    w: f64,
    b: f64,
}

impl EncoderModel {
    /// Model over `tokens` (OOV is added at index 0) with embeddings drawn
    /// uniformly from `(-scale, scale)`.
    pub fn random(tokens: impl IntoIterator<Item = String>, dim: usize, scale: f64, seed: u64) -> Self {
        let mut m = Self::zeros(tokens, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if scale > 0.0 {
            for x in &mut m.embeddings {
                *x = rng.gen_range(-scale..scale);
            }
        }
        m
    }

    pub fn zeros(tokens: impl IntoIterator<Item = String>, dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        let mut vocab = HashMap::new();
        vocab.insert(OOV_TOKEN.to_string(), 0);
        for t in tokens {
            let next = vocab.len();
            vocab.entry(t).or_insert(next);
        }
        let embeddings = vec![0.0; vocab.len() * dim];
        Self { vocab, dim, embeddings, w: 1.0, b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn parameters(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.embeddings
    }

    /// FNV-1a over the embedding bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in &self.embeddings {
            for byte in x.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Embedding rows pooled for `text`: one per token (OOV when unknown)
    /// plus one per adjacent token pair present in the vocabulary.
    pub fn features(&self, text: &str) -> Vec<usize> {
        let tokens = tokenize(text);
        let mut out: Vec<usize> = tokens.iter().map(|t| self.token_index(t).unwrap_or(0)).collect();
        for pair in tokens.windows(2) {
            if let Some(i) = self.token_index(&bigram(&pair[0], &pair[1])) {
                out.push(i);
            }
        }
        out
    }

    fn pool(&self, features: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        if features.is_empty() {
            return v;
        }
        for &f in features {
            for (acc, x) in v.iter_mut().zip(self.row(f)) {
                *acc += x;
            }
        }
        let n = features.len() as f64;
        for x in &mut v {
            *x /= n;
        }
        v
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.pool(&self.features(text))
    }

    /// `enc(u) . enc(v)`.
    pub fn score(&self, u: &str, v: &str) -> f64 {
        dot(&self.encode(u), &self.encode(v))
    }

    pub fn encode_labels(&self, labels: &LabelCatalog) -> Vec<Vec<f64>> {
        labels.iter().map(|l| self.encode(&l.text)).collect()
    }

    /// `p(y | query)`: softmax over labels of `S(y, query)`.
    pub fn prior(&self, query: &str, labels: &LabelCatalog) -> Result<Vec<f64>> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("prior over an empty label catalog".into()));
        }
        Ok(self.prior_from_encodings(query, &self.encode_labels(labels)))
    }

    pub fn prior_from_encodings(&self, query: &str, label_encodings: &[Vec<f64>]) -> Vec<f64> {
        let q = self.encode(query);
        let scores: Vec<f64> = label_encodings.iter().map(|e| dot(e, &q)).collect();
        softmax(&scores)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            d: self.dim,
            vocab: self.vocab.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            embeddings: self.embeddings.chunks(self.dim).map(<[f64]>::to_vec).collect(),
            w: self.w,
            b: self.b,
        };
        let text = serde_json::to_string(&ck).expect("serializable");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {} (expected {CHECKPOINT_VERSION})", ck.version)));
        }
        if ck.d == 0 {
            return Err(bad("embedding dimension must be positive".into()));
        }
        if ck.vocab.get(OOV_TOKEN) != Some(&0) {
            return Err(bad("vocabulary must map the OOV token to row 0".into()));
        }
        let rows = ck.embeddings.len();
        let mut seen = vec![false; rows];
        for (tok, &i) in &ck.vocab {
            if i >= rows || std::mem::replace(&mut seen[i], true) {
                return Err(bad(format!("token `{tok}` has invalid row {i}")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("embedding rows not covered by the vocabulary".into()));
        }
        let mut embeddings = Vec::with_capacity(rows * ck.d);
        for row in &ck.embeddings {
            if row.len() != ck.d {
                return Err(bad(format!("row of length {} (expected {})", row.len(), ck.d)));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite embedding entry".into()));
            }
            embeddings.extend_from_slice(row);
        }
        if !ck.w.is_finite() || !ck.b.is_finite() {
            return Err(bad("non-finite w or b".into()));
        }
        Ok(Self { vocab: ck.vocab.into_iter().collect(), dim: ck.d, embeddings, w: ck.w, b: ck.b })
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Minimum number of negative labels per batch; in-batch labels are
    /// topped up with random training labels when a batch has fewer.
    pub negatives_per_batch: usize,
    /// Probability of emitting an extra pseudo-query pair per query.
    pub augmentation_rate: f64,
    /// Weight of the answer term: for `tag answer` pairs, the pair's answer
    /// must outscore the tag's other answers on the label. Zero disables it.
    pub answer_weight: f64,
    /// Step size at the last epoch as a fraction of `learning_rate`;
    /// the rate decays linearly between the two.
    pub final_lr_fraction: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 30.0,
            negatives_per_batch: 16,
            augmentation_rate: 0.5,
            answer_weight: 0.1,
            final_lr_fraction: 0.05,
            dim: 64,
            seed: 0,
        }
    }
}

/// One `(u, v)` training pair; `label` is the catalog index behind `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPair {
    pub u: String,
    pub v: String,
    pub label: usize,
    /// The same tag with each of its other answers (empty for queries).
    pub alternatives: Vec<String>,
}

impl TextPair {
    pub fn new(u: impl Into<String>, v: impl Into<String>, label: usize) -> Self {
        Self { u: u.into(), v: v.into(), label, alternatives: Vec::new() }
    }
}

/// Positive tag texts of a label, as used for pseudo-query augmentation.
fn label_tags(corpus: &Corpus, label_id: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for rec in corpus.records.iter().filter(|r| r.label_id == label_id) {
        for qa in &rec.qa_pairs {
            let Some(qi) = corpus.questions.position(&qa.q) else { continue };
            let q = corpus.questions.get(qi);
            let tag = match q.kind {
                QuestionKind::Binary if qa.r == "yes" => q.tag().to_string(),
                QuestionKind::Multichoice if qa.r != NOT_APPLICABLE && qa.r != NOT_VISIBLE => q.with_answer(&qa.r),
                _ => continue,
            };
            if !out.contains(&tag) {
                out.push(tag);
            }
        }
    }
    out
}

/// Training pairs from the train split: `(query, label text)` for every
/// initial query and `(tag answer, label text)` for every annotated answer,
/// plus pseudo-queries (query followed by some of the label's tags).
pub fn make_pairs(corpus: &Corpus, config: &TrainConfig) -> Vec<TextPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5041_4952);
    let mut tags_cache: HashMap<&str, Vec<String>> = HashMap::new();
    let mut pairs = Vec::new();
    for rec in corpus.records_in(SplitPart::Train) {
        let label = corpus.labels.position(&rec.label_id).expect("validated corpus");
        let v = &corpus.labels.get(label).text;
        for x in &rec.initial_queries {
            pairs.push(TextPair::new(x.clone(), v.clone(), label));
            if config.augmentation_rate > 0.0 && rng.gen_bool(config.augmentation_rate.min(1.0)) {
                let tags = tags_cache.entry(rec.label_id.as_str()).or_insert_with(|| label_tags(corpus, &rec.label_id));
                if tags.is_empty() {
                    continue;
                }
                let k = rng.gen_range(1..=tags.len().min(3));
                let picked: Vec<&str> = tags.choose_multiple(&mut rng, k).map(String::as_str).collect();
                pairs.push(TextPair::new(format!("{x} {}", picked.join(" ")), v.clone(), label));
            }
        }
        for qa in &rec.qa_pairs {
            let q = corpus.questions.get(corpus.questions.position(&qa.q).expect("validated corpus"));
            let alternatives = if qa.r == NOT_VISIBLE {
                Vec::new()
            } else {
                q.answers.iter().filter(|a| **a != qa.r).map(|a| q.with_answer(a)).collect()
            };
            pairs.push(TextPair { u: q.with_answer(&qa.r), v: v.clone(), label, alternatives });
        }
    }
    pairs
}

/// Vocabulary for a pair set: every token, plus bigrams seen on the `u` side.
pub fn build_vocab(pairs: &[TextPair]) -> Vec<String> {
    let mut unigrams = BTreeSet::new();
    let mut bigrams = BTreeSet::new();
    for p in pairs {
        for u in std::iter::once(&p.u).chain(&p.alternatives) {
            let tu = tokenize(u);
            for pair in tu.windows(2) {
                bigrams.insert(bigram(&pair[0], &pair[1]));
            }
            unigrams.extend(tu);
        }
        unigrams.extend(tokenize(&p.v));
    }
    unigrams.into_iter().chain(bigrams).collect()
}

/// Mean loss over `pairs` and its gradient with respect to the embedding
/// table. The label term is the in-batch softmax cross-entropy, with the
/// distinct labels of the batch plus `extra` as candidates; the answer term
/// (scaled by `answer_weight`) is the softmax cross-entropy of `u` against
/// the pair's alternatives, scored on `v`.
pub fn loss_and_grad(
    model: &EncoderModel,
    pairs: &[&TextPair],
    extra: &[(usize, &str)],
    answer_weight: f64,
) -> (f64, Vec<f64>) {
    let d = model.dim;
    let mut grad = vec![0.0; model.embeddings.len()];
    if pairs.is_empty() {
        return (0.0, grad);
    }

    let mut cand_labels: Vec<usize> = Vec::new();
    let mut cand_feats: Vec<Vec<usize>> = Vec::new();
    let push_cand = |label: usize, text: &str, labels: &mut Vec<usize>, feats: &mut Vec<Vec<usize>>| {
        if !labels.contains(&label) {
            labels.push(label);
            feats.push(model.features(text));
        }
    };
    for p in pairs {
        push_cand(p.label, &p.v, &mut cand_labels, &mut cand_feats);
    }
    for &(label, text) in extra {
        push_cand(label, text, &mut cand_labels, &mut cand_feats);
    }
    let cand_enc: Vec<Vec<f64>> = cand_feats.iter().map(|f| model.pool(f)).collect();
    let mut cand_grad = vec![vec![0.0; d]; cand_enc.len()];

    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for p in pairs {
        let feats = model.features(&p.u);
        let eu = model.pool(&feats);
        let logits: Vec<f64> = cand_enc.iter().map(|e| dot(&eu, e)).collect();
        let own = cand_labels.iter().position(|&l| l == p.label).expect("own label is a candidate");
        total += logsumexp(&logits) - logits[own];
        let probs = softmax(&logits);

        let mut gu = vec![0.0; d];
        for (c, (pc, ec)) in probs.iter().zip(&cand_enc).enumerate() {
            let coef = (pc - if c == own { 1.0 } else { 0.0 }) * scale;
            for k in 0..d {
                gu[k] += coef * ec[k];
                cand_grad[c][k] += coef * eu[k];
            }
        }
        scatter(&mut grad, d, &feats, &gu);

        if answer_weight != 0.0 && !p.alternatives.is_empty() {
            let vf = model.features(&p.v);
            let ev = model.pool(&vf);
            let mut feats_k = vec![feats];
            feats_k.extend(p.alternatives.iter().map(|a| model.features(a)));
            let enc_k: Vec<Vec<f64>> = feats_k.iter().map(|f| model.pool(f)).collect();
            let logits: Vec<f64> = enc_k.iter().map(|e| dot(e, &ev)).collect();
            total += answer_weight * (logsumexp(&logits) - logits[0]);
            let probs = softmax(&logits);
            let mut gv = vec![0.0; d];
            for (k, (pk, ek)) in probs.iter().zip(&enc_k).enumerate() {
                let coef = (pk - if k == 0 { 1.0 } else { 0.0 }) * scale * answer_weight;
                let gk: Vec<f64> = ev.iter().map(|x| coef * x).collect();
                scatter(&mut grad, d, &feats_k[k], &gk);
                for (acc, x) in gv.iter_mut().zip(ek) {
                    *acc += coef * x;
                }
            }
            scatter(&mut grad, d, &vf, &gv);
        }
    }
    for (feats, g) in cand_feats.iter().zip(&cand_grad) {
        scatter(&mut grad, d, feats, g);
    }
    (total * scale, grad)
}

fn scatter(grad: &mut [f64], d: usize, feats: &[usize], g: &[f64]) {
    if feats.is_empty() {
        return;
    }
    let w = 1.0 / feats.len() as f64;
    for &f in feats {
        for (acc, x) in grad[f * d..(f + 1) * d].iter_mut().zip(g) {
            *acc += w * x;
        }
    }
}

/// Loss over `pairs` chunked into consecutive batches, weighted by batch size.
pub fn dataset_loss(model: &EncoderModel, pairs: &[TextPair], batch_size: usize, answer_weight: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let refs: Vec<&TextPair> = chunk.iter().collect();
        total += loss_only(model, &refs, answer_weight) * chunk.len() as f64;
    }
    total / pairs.len() as f64
}

fn loss_only(model: &EncoderModel, pairs: &[&TextPair], answer_weight: f64) -> f64 {
    let mut labels: Vec<usize> = Vec::new();
    let mut encs: Vec<Vec<f64>> = Vec::new();
    for p in pairs {
        if !labels.contains(&p.label) {
            labels.push(p.label);
            encs.push(model.encode(&p.v));
        }
    }
    let mut total = 0.0;
    for p in pairs {
        let eu = model.encode(&p.u);
        let logits: Vec<f64> = encs.iter().map(|e| dot(&eu, e)).collect();
        let own = labels.iter().position(|&l| l == p.label).expect("own label");
        total += logsumexp(&logits) - logits[own];
        if answer_weight != 0.0 && !p.alternatives.is_empty() {
            let ev = model.encode(&p.v);
            let logits: Vec<f64> =
                std::iter::once(&p.u).chain(&p.alternatives).map(|t| dot(&model.encode(t), &ev)).collect();
            total += answer_weight * (logsumexp(&logits) - logits[0]);
        }
    }
    total / pairs.len() as f64
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub pairs: usize,
    /// Training loss before the first epoch and after each epoch.
    pub losses: Vec<f64>,
}

/// Pre-train the encoder on train-split pairs. `w` and `b` stay at (1, 0).
pub fn train_encoder(corpus: &Corpus, config: &TrainConfig) -> Result<(EncoderModel, TrainReport)> {
    let pairs = make_pairs(corpus, config);
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs in the train split".into()));
    }
    let model = EncoderModel::random(build_vocab(&pairs), config.dim, 0.1, config.seed);
    let pool: Vec<(usize, String)> =
        corpus.split_indices(SplitPart::Train).into_iter().map(|i| (i, corpus.labels.get(i).text.clone())).collect();
    train_on_pairs(model, &pairs, &pool, config)
}

/// Training stops with an error once the loss exceeds this multiple of its starting value.
const DIVERGENCE_FACTOR: f64 = 100.0;

/// Mini-batch gradient descent on an existing model.
pub fn train_on_pairs(
    mut model: EncoderModel,
    pairs: &[TextPair],
    negative_pool: &[(usize, String)],
    config: &TrainConfig,
) -> Result<(EncoderModel, TrainReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty training data".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut report = TrainReport {
        pairs: pairs.len(),
        losses: vec![dataset_loss(&model, pairs, config.batch_size, config.answer_weight)],
    };
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        let t = if config.epochs > 1 { epoch as f64 / (config.epochs - 1) as f64 } else { 0.0 };
        let lr = config.learning_rate * (1.0 + t * (config.final_lr_fraction - 1.0));
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TextPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let mut extra: Vec<(usize, &str)> = Vec::new();
            let mut distinct: BTreeSet<usize> = batch.iter().map(|p| p.label).collect();
            let wanted = (config.negatives_per_batch + 1).min(negative_pool.len());
            while distinct.len() < wanted {
                let (l, text) = &negative_pool[rng.gen_range(0..negative_pool.len())];
                if distinct.insert(*l) {
                    extra.push((*l, text));
                }
            }
            let (_, grad) = loss_and_grad(&model, &batch, &extra, config.answer_weight);
            if lr != 0.0 {
                for (p, g) in model.embeddings.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
        }
        let loss = dataset_loss(&model, pairs, config.batch_size, config.answer_weight);
        let blown_up = loss > DIVERGENCE_FACTOR * report.losses[0].max(1.0);
        if !loss.is_finite() || blown_up || model.embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training(format!("encoder diverged at epoch {}; lower the learning rate", epoch + 1)));
        }
        report.losses.push(loss);
    }
    Ok((model, report))
}

/// Largest relative error between the analytic loss gradient (all pairs
/// as one batch) and central finite differences.
pub fn grad_check(model: &EncoderModel, pairs: &[TextPair], epsilon: f64) -> f64 {
    grad_check_with(model, pairs, epsilon, 0, 1.0, |m, p| loss_and_grad(m, p, &[], 1.0).1)
}

/// [`grad_check`] against an arbitrary gradient routine. Checks every
/// coordinate of the rows the pairs touch, or a random 400 of them when
/// there are more.
pub fn grad_check_with(
    model: &EncoderModel,
    pairs: &[TextPair],
    epsilon: f64,
    seed: u64,
    answer_weight: f64,
    gradient: impl Fn(&EncoderModel, &[&TextPair]) -> Vec<f64>,
) -> f64 {
    let refs: Vec<&TextPair> = pairs.iter().collect();
    let analytic = gradient(model, &refs);
    let d = model.dim;
    let mut rows = BTreeSet::new();
    for p in pairs {
        rows.extend(model.features(&p.u));
        rows.extend(model.features(&p.v));
        for a in &p.alternatives {
            rows.extend(model.features(a));
        }
    }
    let mut coords: Vec<usize> = rows.iter().flat_map(|&r| (r * d)..(r + 1) * d).collect();
    if coords.len() > 400 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(400);
    }
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for c in coords {
        let orig = probe.embeddings[c];
        probe.embeddings[c] = orig + epsilon;
        let plus = loss_only(&probe, &refs, answer_weight);
        probe.embeddings[c] = orig - epsilon;
        let minus = loss_only(&probe, &refs, answer_weight);
        probe.embeddings[c] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[c];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
        worst = worst.max(err);
    }
    worst
}
