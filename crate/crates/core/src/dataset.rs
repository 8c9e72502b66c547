//! Corpus data model: labels, the clarification question bank, per-label
//! annotations, and the train/dev/test label partition.
//!
//! On disk a corpus is a directory with four files:
//!
//! - `labels.jsonl`: `{"id", "text"}` per line
//! - `questions.jsonl`: `{"id", "text", "kind", "answers", "group"}` per line
//! - `annotations.jsonl`: `{"label_id", "initial_queries", "qa_pairs": [{"q", "r"}]}` per line
//! - `split.json`: `{"train": [..], "dev": [..], "test": [..]}`

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LABELS_FILE: &str = "labels.jsonl";
pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const SPLIT_FILE: &str = "split.json";

/// Escape answer available for questions that belong to a part-group.
pub const NOT_VISIBLE: &str = "not visible";
pub const NOT_APPLICABLE: &str = "Not applicable";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Binary,
    Multichoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub kind: QuestionKind,
    pub answers: Vec<String>,
    pub group: Option<String>,
}

impl Question {
    pub fn answer_index(&self, answer: &str) -> Option<usize> {
        self.answers.iter().position(|a| a == answer)
    }

    /// The tag the question was templated from, used when pairing a
    /// question with an answer as free text ("phone operating system IOS").
    pub fn tag(&self) -> &str {
        let t = self.text.trim();
        let t = t.strip_suffix('?').unwrap_or(t).trim_end();
        for prefix in ["Is it about ", "What is your "] {
            if let Some(rest) = t.strip_prefix(prefix) {
                return rest;
            }
        }
        t
    }

    /// `tag answer` concatenation.
    pub fn with_answer(&self, answer: &str) -> String {
        format!("{} {}", self.tag(), answer)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("question id is empty".into());
        }
        if self.answers.len() < 2 {
            return Err(format!("question `{}` needs at least two answers", self.id));
        }
        let unique: HashSet<&String> = self.answers.iter().collect();
        if unique.len() != self.answers.len() {
            return Err(format!("question `{}` has duplicate answers", self.id));
        }
        if self.kind == QuestionKind::Binary && self.answers != ["yes", "no"] {
            return Err(format!("binary question `{}` must have answers [\"yes\", \"no\"]", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub q: String,
    pub r: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub label_id: String,
    pub initial_queries: Vec<String>,
    pub qa_pairs: Vec<QaPair>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPart {
    Train,
    Dev,
    Test,
}

impl SplitPart {
    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Dev => "dev",
            SplitPart::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitPart {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "dev" => Ok(SplitPart::Dev),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl Split {
    pub fn part(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Dev => &self.dev,
            SplitPart::Test => &self.test,
        }
    }
}

/// Ordered label list with id lookup. Catalog order is the tie-break order
/// everywhere a ranking is produced.
#[derive(Debug, Clone, Default)]
pub struct LabelCatalog {
    labels: Vec<Label>,
    index: HashMap<String, usize>,
}

impl LabelCatalog {
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.id.is_empty() {
                return Err(Error::Corpus(format!("label {i} has an empty id")));
            }
            if l.text.trim().is_empty() {
                return Err(Error::Corpus(format!("label `{}` has empty text", l.id)));
            }
            if index.insert(l.id.clone(), i).is_some() {
                return Err(Error::Corpus(format!("duplicate label id `{}`", l.id)));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> &Label {
        &self.labels[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Label> {
        self.labels.iter()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct QuestionBank {
    questions: Vec<Question>,
    index: HashMap<String, usize>,
}

impl QuestionBank {
    pub fn new(questions: Vec<Question>) -> Result<Self> {
        let mut index = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            q.validate().map_err(Error::Corpus)?;
            if index.insert(q.id.clone(), i).is_some() {
                return Err(Error::Corpus(format!("duplicate question id `{}`", q.id)));
            }
        }
        Ok(Self { questions, index })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, i: usize) -> &Question {
        &self.questions[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Question> {
        self.questions.iter()
    }

    pub fn has_groups(&self) -> bool {
        self.questions.iter().any(|q| q.group.is_some())
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub labels: LabelCatalog,
    pub questions: QuestionBank,
    pub records: Vec<AnnotationRecord>,
    pub split: Split,
}

impl Corpus {
    /// Cross-validate all parts. Errors name the offending record.
    pub fn new(
        labels: LabelCatalog,
        questions: QuestionBank,
        records: Vec<AnnotationRecord>,
        split: Split,
    ) -> Result<Self> {
        for (i, rec) in records.iter().enumerate() {
            validate_record(&labels, &questions, rec).map_err(|msg| Error::data(ANNOTATIONS_FILE, i + 1, msg))?;
        }
        validate_split(&labels, &split)?;
        Ok(Self { labels, questions, records, split })
    }

    /// Catalog indices of the labels in one split part.
    pub fn split_indices(&self, part: SplitPart) -> Vec<usize> {
        self.split.part(part).iter().map(|id| self.labels.position(id).expect("validated split")).collect()
    }

    /// Records whose label belongs to the given split part.
    pub fn records_in(&self, part: SplitPart) -> Vec<&AnnotationRecord> {
        let ids: HashSet<&str> = self.split.part(part).iter().map(String::as_str).collect();
        self.records.iter().filter(|r| ids.contains(r.label_id.as_str())).collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_corpus(self, dir)
    }
}

fn validate_record(
    labels: &LabelCatalog,
    bank: &QuestionBank,
    rec: &AnnotationRecord,
) -> std::result::Result<(), String> {
    if labels.position(&rec.label_id).is_none() {
        return Err(format!("record for unknown label `{}`", rec.label_id));
    }
    for qa in &rec.qa_pairs {
        let Some(qi) = bank.position(&qa.q) else {
            return Err(format!("record for label `{}` references unknown question `{}`", rec.label_id, qa.q));
        };
        let q = bank.get(qi);
        let ok = q.answer_index(&qa.r).is_some() || (q.group.is_some() && qa.r == NOT_VISIBLE);
        if !ok {
            return Err(format!(
                "record for label `{}`: answer `{}` is not in the answer set of question `{}`",
                rec.label_id, qa.r, qa.q
            ));
        }
    }
    Ok(())
}

fn validate_split(labels: &LabelCatalog, split: &Split) -> Result<()> {
    let mut seen = HashSet::new();
    for part in [SplitPart::Train, SplitPart::Dev, SplitPart::Test] {
        for id in split.part(part) {
            if labels.position(id).is_none() {
                return Err(Error::data(SPLIT_FILE, 1, format!("{} split names unknown label `{id}`", part.name())));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::data(SPLIT_FILE, 1, format!("label `{id}` appears in more than one split")));
            }
        }
    }
    if let Some(missing) = labels.iter().find(|l| !seen.contains(l.id.as_str())) {
        return Err(Error::data(SPLIT_FILE, 1, format!("label `{}` is not assigned to any split", missing.id)));
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::data(&name, i + 1, e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

fn corpus_dir(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

/// Load and cross-validate a corpus directory (or any file inside one).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let dir = corpus_dir(path.as_ref());
    let labels: Vec<Label> = read_jsonl(&dir.join(LABELS_FILE))?;
    let questions: Vec<Question> = read_jsonl(&dir.join(QUESTIONS_FILE))?;
    let records: Vec<AnnotationRecord> = read_jsonl(&dir.join(ANNOTATIONS_FILE))?;

    for (i, l) in labels.iter().enumerate() {
        if l.text.trim().is_empty() {
            return Err(Error::data(LABELS_FILE, i + 1, format!("label `{}` has empty text", l.id)));
        }
    }
    for (i, q) in questions.iter().enumerate() {
        q.validate().map_err(|m| Error::data(QUESTIONS_FILE, i + 1, m))?;
    }

    let split_path = dir.join(SPLIT_FILE);
    let split_text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let split: Split =
        serde_json::from_str(&split_text).map_err(|e| Error::data(SPLIT_FILE, e.line(), e.to_string()))?;

    Corpus::new(LabelCatalog::new(labels)?, QuestionBank::new(questions)?, records, split)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item).expect("serializable");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(LABELS_FILE), corpus.labels.iter())?;
    write_jsonl(&dir.join(QUESTIONS_FILE), corpus.questions.iter())?;
    write_jsonl(&dir.join(ANNOTATIONS_FILE), corpus.records.iter())?;
    let path = dir.join(SPLIT_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer(&mut f, &corpus.split).expect("serializable");
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// An annotation tag: binary tags have no values, categorical ones at least two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    pub text: String,
    pub kind: QuestionKind,
    pub values: Vec<String>,
}

impl Tag {
    pub fn binary(text: impl Into<String>) -> Self {
        Self { text: text.into(), kind: QuestionKind::Binary, values: vec![] }
    }

    pub fn categorical(text: impl Into<String>, values: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            text: text.into(),
            kind: QuestionKind::Multichoice,
            values: values.into_iter().map(Into::into).collect(),
        }
    }
}

fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    let trimmed = out.trim_end_matches('_');
    if trimmed.is_empty() {
        "tag".to_string()
    } else {
        trimmed.to_string()
    }
}

/// Template tags into questions: binary tags become "Is it about {tag}?",
/// categorical tags "What is your {tag}?" with a trailing "Not applicable".
pub fn tags_to_questions(tags: &[Tag]) -> Result<QuestionBank> {
    let mut seen_text = HashSet::new();
    let mut seen_id = HashSet::new();
    let mut questions = Vec::with_capacity(tags.len());
    for tag in tags {
        let text = tag.text.trim();
        if text.is_empty() {
            return Err(Error::InvalidArgument("empty tag text".into()));
        }
        if !seen_text.insert(text.to_string()) {
            return Err(Error::InvalidArgument(format!("duplicate tag `{text}`")));
        }
        let base = slug(text);
        let mut id = base.clone();
        let mut n = 2;
        while !seen_id.insert(id.clone()) {
            id = format!("{base}_{n}");
            n += 1;
        }
        let q = match tag.kind {
            QuestionKind::Binary => {
                if !tag.values.is_empty() {
                    return Err(Error::InvalidArgument(format!("binary tag `{text}` must not carry values")));
                }
                Question {
                    id,
                    text: format!("Is it about {text}?"),
                    kind: QuestionKind::Binary,
                    answers: vec!["yes".into(), "no".into()],
                    group: None,
                }
            }
            QuestionKind::Multichoice => {
                if tag.values.len() < 2 {
                    return Err(Error::InvalidArgument(format!("categorical tag `{text}` needs at least two values")));
                }
                let mut answers = tag.values.clone();
                if !answers.iter().any(|a| a.eq_ignore_ascii_case(NOT_APPLICABLE)) {
                    answers.push(NOT_APPLICABLE.into());
                }
                Question {
                    id,
                    text: format!("What is your {text}?"),
                    kind: QuestionKind::Multichoice,
                    answers,
                    group: None,
                }
            }
        };
        questions.push(q);
    }
    QuestionBank::new(questions)
}

/// Knobs for [`synth_world`] beyond the required four.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_labels: usize,
    pub n_attrs: usize,
    pub flip_noise: f64,
    pub seed: u64,
    pub annotators_per_label: usize,
    pub queries_per_annotator: usize,
    /// Maximum number of true attributes mentioned by an initial query.
    pub max_query_attrs: usize,
}

impl SynthConfig {
    pub fn new(n_labels: usize, n_attrs: usize, flip_noise: f64, seed: u64) -> Self {
        Self {
            n_labels,
            n_attrs,
            flip_noise,
            seed,
            annotators_per_label: 4,
            queries_per_annotator: 2,
            max_query_attrs: 2,
        }
    }
}

/// A synthetic corpus plus the ground-truth attribute codes behind it.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub corpus: Corpus,
    /// Bit `j` of `codes[i]` is attribute `j` of label `i`.
    pub codes: Vec<u64>,
    pub attr_words: Vec<String>,
}

const ATTR_WORDS: &[&str] = &[
    "roaming",
    "billing",
    "android",
    "iphone",
    "prepaid",
    "voicemail",
    "hotspot",
    "refund",
    "upgrade",
    "contract",
    "international",
    "password",
    "bluetooth",
    "camera",
    "battery",
    "screen",
    "warranty",
    "family",
    "business",
    "autopay",
    "coverage",
    "activation",
    "insurance",
    "sim",
    "wifi",
    "messaging",
    "streaming",
    "storage",
    "tablet",
    "watch",
    "tradein",
    "porting",
];

const QUERY_TEMPLATES: &[&str] = &["help with {}", "question about {}", "{} issue", "i need {}", "problem with my {}"];

pub fn attr_word(j: usize) -> String {
    ATTR_WORDS.get(j).map(|w| w.to_string()).unwrap_or_else(|| format!("feature{j}"))
}

/// Synthetic world with `n_labels` labels, each carrying a distinct
/// `n_attrs`-bit attribute code. Deterministic under `seed`.
pub fn synth_corpus(n_labels: usize, n_attrs: usize, flip_noise: f64, seed: u64) -> Result<Corpus> {
    Ok(synth_world(&SynthConfig::new(n_labels, n_attrs, flip_noise, seed))?.corpus)
}

pub fn synth_world(cfg: &SynthConfig) -> Result<SynthWorld> {
    let n = cfg.n_labels;
    let m = cfg.n_attrs;
    if m >= 63 || (1u64 << m) < n as u64 {
        return Err(Error::InvalidArgument(format!("{m} binary attributes cannot give {n} labels distinct codes")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one label".into()));
    }
    if !(0.0..=1.0).contains(&cfg.flip_noise) {
        return Err(Error::InvalidArgument("flip_noise must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let space = 1u64 << m;

    let mut codes: Vec<u64> = if space == n as u64 {
        let mut all: Vec<u64> = (0..space).collect();
        all.shuffle(&mut rng);
        all
    } else {
        let mut chosen = BTreeSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let c = rng.gen_range(0..space);
            if chosen.insert(c) {
                out.push(c);
            }
        }
        out
    };
    codes.truncate(n);

    let words: Vec<String> = (0..m).map(attr_word).collect();
    let width = (n.max(2) - 1).to_string().len().max(3);
    let labels: Vec<Label> = codes
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            let mut text = String::from("item");
            for (j, w) in words.iter().enumerate() {
                if code >> j & 1 == 1 {
                    text.push(' ');
                    text.push_str(w);
                }
            }
            Label { id: format!("L{i:0width$}"), text }
        })
        .collect();

    let qwidth = (m.max(2) - 1).to_string().len().max(2);
    let questions: Vec<Question> = words
        .iter()
        .enumerate()
        .map(|(j, w)| Question {
            id: format!("q{j:0qwidth$}"),
            text: format!("Is it about {w}?"),
            kind: QuestionKind::Binary,
            answers: vec!["yes".into(), "no".into()],
            group: None,
        })
        .collect();

    let mut records = Vec::with_capacity(n * cfg.annotators_per_label);
    for (label, &code) in labels.iter().zip(&codes) {
        let present: Vec<usize> = (0..m).filter(|j| code >> j & 1 == 1).collect();
        for _ in 0..cfg.annotators_per_label {
            let initial_queries = (0..cfg.queries_per_annotator)
                .map(|_| synth_query(&mut rng, &present, &words, cfg.max_query_attrs))
                .collect();
            let qa_pairs = questions
                .iter()
                .enumerate()
                .map(|(j, q)| {
                    let bit = code >> j & 1 == 1;
                    let flipped = rng.gen_bool(cfg.flip_noise);
                    let r = if bit != flipped { "yes" } else { "no" };
                    QaPair { q: q.id.clone(), r: r.into() }
                })
                .collect();
            records.push(AnnotationRecord { label_id: label.id.clone(), initial_queries, qa_pairs });
        }
    }

    let mut ids: Vec<String> = labels.iter().map(|l| l.id.clone()).collect();
    ids.shuffle(&mut rng);
    let n_train = ((n as f64) * 0.6).round() as usize;
    let n_dev = ((n as f64) * 0.2).round() as usize;
    let n_dev = n_dev.min(n - n_train);
    let mut split = Split {
        train: ids[..n_train].to_vec(),
        dev: ids[n_train..n_train + n_dev].to_vec(),
        test: ids[n_train + n_dev..].to_vec(),
    };
    for part in [&mut split.train, &mut split.dev, &mut split.test] {
        part.sort();
    }

    let corpus = Corpus::new(LabelCatalog::new(labels)?, QuestionBank::new(questions)?, records, split)?;
    Ok(SynthWorld { corpus, codes, attr_words: words })
}

fn synth_query(rng: &mut ChaCha8Rng, present: &[usize], words: &[String], max_attrs: usize) -> String {
    if present.is_empty() || max_attrs == 0 {
        return "i have a question".to_string();
    }
    let k = rng.gen_range(1..=max_attrs.min(present.len()));
    let mentioned: Vec<&str> = present.choose_multiple(rng, k).map(|&j| words[j].as_str()).collect();
    let template = QUERY_TEMPLATES.choose(rng).expect("non-empty");
    template.replace("{}", &mentioned.join(" and "))
}
