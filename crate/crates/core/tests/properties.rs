use std::collections::BTreeSet;
use std::sync::OnceLock;

use clarion_core::belief::{Answer, BeliefState, LikelihoodTable, ResponseConfig, ResponseModel};
use clarion_core::dataset::{
    load_corpus, save_corpus, synth_world, tags_to_questions, Question, QuestionBank, QuestionKind, SplitPart,
    SynthConfig, Tag,
};
use clarion_core::encoder::{train_encoder, EncoderModel, TrainConfig};
use clarion_core::evaluation::{run_interaction, InteractionConfig, ScriptedResponder, Termination};
use clarion_core::math::softmax;
use clarion_core::policy::{
    compute_returns, rollout, step_rewards, Action, PolicyModel, RewardConfig, Step, Trajectory,
};
use clarion_core::selection::{conditional_entropy, information_gain, select_question};
use clarion_core::{Corpus, Engine, SimulatorModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn question(i: usize, n_answers: usize) -> Question {
    Question {
        id: format!("q{i}"),
        text: format!("Question {i}?"),
        kind: QuestionKind::Multichoice,
        answers: (0..n_answers).map(|r| format!("a{r}")).collect(),
        group: None,
    }
}

/// A normalized belief over `n` labels plus `n_q` questions with 2 to 4 answers.
#[derive(Debug, Clone)]
struct Instance {
    prior: Vec<f64>,
    bank: QuestionBank,
    table: LikelihoodTable,
}

fn instance(max_labels: usize, max_questions: usize) -> impl Strategy<Value = Instance> {
    (1..=max_labels, 1..=max_questions).prop_flat_map(|(n, n_q)| {
        let rows = prop::collection::vec(
            (2usize..=4).prop_flat_map(move |k| prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), n)),
            n_q,
        );
        (prop::collection::vec(1e-4f64..1.0, n), rows).prop_map(move |(raw, dists)| {
            let z: f64 = raw.iter().sum();
            let prior = raw.iter().map(|p| p / z).collect();
            let bank =
                QuestionBank::new(dists.iter().enumerate().map(|(i, d)| question(i, d[0].len())).collect()).unwrap();
            let table = LikelihoodTable::from_distributions(n, dists).unwrap();
            Instance { prior, bank, table }
        })
    })
}

/// A history of distinct questions, each with an answer chosen by `picks`.
fn history(inst: &Instance, order: &[usize], picks: &[usize]) -> Vec<(usize, usize)> {
    let mut seen = BTreeSet::new();
    order
        .iter()
        .map(|o| o % inst.bank.len())
        .filter(|q| seen.insert(*q))
        .zip(picks)
        .map(|(q, p)| (q, p % inst.table.n_answers(q)))
        .collect()
}

fn apply(inst: &Instance, hist: &[(usize, usize)]) -> BeliefState {
    let mut s = BeliefState::new(&inst.prior, "").unwrap();
    for &(q, r) in hist {
        s.update(&inst.bank, &inst.table, q, Answer::Choice(r)).unwrap();
    }
    s
}

struct World {
    corpus: Corpus,
    engine: Engine,
    sim: SimulatorModel,
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let corpus = synth_world(&SynthConfig::new(16, 4, 0.1, 5)).unwrap().corpus;
        let (enc, _) = train_encoder(&corpus, &TrainConfig { epochs: 2, dim: 8, ..TrainConfig::default() }).unwrap();
        let rm = ResponseModel::fit(&corpus, &enc, ResponseConfig::default()).unwrap();
        let engine = Engine::new(&corpus, enc, rm);
        let sim = SimulatorModel::from_split(&corpus, SplitPart::Test, 1.0).unwrap();
        World { corpus, engine, sim }
    })
}

proptest! {
    #[test]
    fn belief_stays_normalized(inst in instance(20, 6), order in prop::collection::vec(any::<usize>(), 0..8), picks in prop::collection::vec(any::<usize>(), 8)) {
        let hist = history(&inst, &order, &picks);
        let mut s = BeliefState::new(&inst.prior, "").unwrap();
        for &(q, r) in &hist {
            s.update(&inst.bank, &inst.table, q, Answer::Choice(r)).unwrap();
            let ps = s.probs();
            prop_assert!(ps.iter().all(|p| p.is_finite() && *p >= 0.0));
            prop_assert!((ps.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn update_order_does_not_matter(inst in instance(20, 6), order in prop::collection::vec(any::<usize>(), 0..8), picks in prop::collection::vec(any::<usize>(), 8), seed in any::<u64>()) {
        let hist = history(&inst, &order, &picks);
        let mut shuffled = hist.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (apply(&inst, &hist).probs(), apply(&inst, &shuffled).probs());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn most_likely_answer_never_hurts_its_label(inst in instance(20, 4), q in any::<usize>(), r in any::<usize>()) {
        let q = q % inst.bank.len();
        let r = r % inst.table.n_answers(q);
        let n = inst.prior.len();
        let best = (0..n).max_by(|&a, &b| inst.table.prob(q, a, r).total_cmp(&inst.table.prob(q, b, r))).unwrap();
        let before = apply(&inst, &[]).probs()[best];
        let after = apply(&inst, &[(q, r)]).probs()[best];
        prop_assert!(after >= before - 1e-12);
    }

    #[test]
    fn gain_is_bounded_by_entropy(inst in instance(20, 4)) {
        let s = apply(&inst, &[]);
        for q in 0..inst.bank.len() {
            let ig = information_gain(&s, q, &inst.table);
            prop_assert!(ig >= -1e-12);
            prop_assert!(ig <= s.entropy() + 1e-12);
        }
    }

    #[test]
    fn selection_maximizes_gain_and_skips_asked(inst in instance(20, 6), order in prop::collection::vec(any::<usize>(), 0..8), picks in prop::collection::vec(any::<usize>(), 8)) {
        let hist = history(&inst, &order, &picks);
        let s = apply(&inst, &hist);
        let picked = select_question(&s, &inst.bank, &inst.table);
        let open: Vec<usize> = (0..inst.bank.len()).filter(|q| !s.asked().contains(q)).collect();
        prop_assert_eq!(picked.is_none(), open.is_empty());
        if let Some(q) = picked {
            prop_assert!(!s.asked().contains(&q));
            let h = conditional_entropy(&s, q, &inst.table);
            let g = information_gain(&s, q, &inst.table);
            for &o in &open {
                prop_assert!(h <= conditional_entropy(&s, o, &inst.table) + 1e-12);
                prop_assert!(g >= information_gain(&s, o, &inst.table) - 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant(xs in prop::collection::vec(-50.0f64..50.0, 1..30), c in -1e3f64..1e3) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        for (a, b) in softmax(&xs).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn return_identity(n_asks in 0usize..12, correct in any::<bool>(), penalty in -5.0f64..0.0) {
        let step = |action| Step { features: Vec::new(), action, log_prob: None, question: None };
        let mut steps: Vec<Step> = (0..n_asks).map(|_| step(Action::Ask)).collect();
        steps.push(step(Action::Stop));
        let traj = Trajectory { query: String::new(), target: 0, prediction: if correct { 0 } else { 1 }, steps };
        let rewards = RewardConfig::with_turn_penalty(penalty);
        let g = compute_returns(&traj, &rewards);
        let r = step_rewards(&traj, &rewards);
        prop_assert_eq!(g.len(), n_asks + 1);
        prop_assert_eq!(*g.last().unwrap(), *r.last().unwrap());
        for t in 0..n_asks {
            prop_assert!((g[t] - (g[t + 1] + r[t])).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prior_is_a_distribution(scale in 0.0f64..20.0, dim in 1usize..12, seed in any::<u64>(), query in "[a-z ]{0,30}") {
        let w = world();
        let words = ["item", "roaming", "billing", "android", "iphone", "yes", "no"].map(String::from);
        let model = EncoderModel::random(words, dim, scale, seed);
        let p = model.prior(&query, &w.corpus.labels).unwrap();
        prop_assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn encoding_is_pure(query in "[a-z ]{0,40}", label in "[a-z ]{0,40}") {
        let enc = world().engine.encoder();
        let (a, b) = (enc.encode(&query), enc.encode(&query));
        prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(enc.score(&query, &label).to_bits(), enc.score(&query, &label).to_bits());
    }

    #[test]
    fn rollouts_respect_the_turn_limit(seed in any::<u64>(), max_turns in 1usize..6) {
        let w = world();
        let policy = PolicyModel::new(5, max_turns, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let t = rollout(&w.engine, &policy, &w.sim, &mut rng).unwrap();
            prop_assert!(t.turns() <= max_turns);
            prop_assert_eq!(t.steps.last().unwrap().action, Action::Stop);
        }
    }

    #[test]
    fn sampled_answers_are_offered(seed in any::<u64>(), q in any::<usize>()) {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (target, _) = w.sim.start_episode(&mut rng).unwrap();
        let q = q % w.engine.bank().len();
        match w.sim.sample_response(q, target, &mut rng).unwrap() {
            Answer::Choice(r) => prop_assert!(r < w.engine.bank().get(q).answers.len()),
            Answer::NotVisible => prop_assert!(w.engine.bank().get(q).group.is_some()),
        }
    }

    #[test]
    fn no_initial_query_always_opens_the_same_way(a in "[a-z ]{0,30}", b in "[a-z ]{0,30}") {
        let w = world();
        let first = |query: &str| {
            let cfg = InteractionConfig { uniform_prior: true, ..InteractionConfig::new(Termination::FixedTurns(1), 1) };
            let mut responder = |_: usize, _: &Question| Ok(Answer::Choice(0));
            run_interaction(&w.engine, query, None, &mut responder, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().turns[0].question
        };
        prop_assert_eq!(first(&a), first(&b));
    }

    #[test]
    fn scripted_replay_reproduces_beliefs(seed in any::<u64>(), turns in 0usize..5) {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (target, query) = w.sim.start_episode(&mut rng).unwrap();
        let cfg = InteractionConfig::new(Termination::FixedTurns(turns), 10);
        let mut sim_rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut live = |q: usize, _: &Question| w.sim.sample_response(q, target, &mut sim_rng);
        let first = run_interaction(&w.engine, &query, Some(target), &mut live, &cfg, &mut rng).unwrap();
        let mut script = ScriptedResponder::new(first.turns.iter().map(|t| (t.question, t.answer)));
        let again = run_interaction(&w.engine, &query, Some(target), &mut script, &cfg, &mut rng).unwrap();
        prop_assert_eq!(first, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn splits_partition_the_labels(n in 2usize..60, noise in 0.0f64..0.5, seed in any::<u64>()) {
        let corpus = synth_world(&SynthConfig::new(n, 6, noise, seed)).unwrap().corpus;
        let mut seen = BTreeSet::new();
        for part in [SplitPart::Train, SplitPart::Dev, SplitPart::Test] {
            for id in corpus.split.part(part) {
                prop_assert!(seen.insert(id.clone()), "{} appears twice", id);
            }
        }
        let all: BTreeSet<String> = corpus.labels.iter().map(|l| l.id.clone()).collect();
        prop_assert_eq!(seen, all);
    }

    #[test]
    fn save_then_load_is_byte_identical(n in 2usize..30, noise in 0.0f64..0.5, seed in any::<u64>()) {
        let corpus = synth_world(&SynthConfig::new(n, 5, noise, seed)).unwrap().corpus;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_corpus(&corpus, a.path()).unwrap();
        save_corpus(&load_corpus(a.path()).unwrap(), b.path()).unwrap();
        for entry in std::fs::read_dir(a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            prop_assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn tag_templates_are_injective(texts in prop::collection::btree_set("[A-Za-z][A-Za-z -]{0,15}", 0..12), categorical in prop::collection::vec(any::<bool>(), 12)) {
        let tags: Vec<Tag> = texts
            .iter()
            .zip(&categorical)
            .map(|(t, &c)| if c { Tag::categorical(t.clone(), ["red", "blue"]) } else { Tag::binary(t.clone()) })
            .collect();
        let bank = tags_to_questions(&tags).unwrap();
        prop_assert_eq!(bank.len(), tags.len());
        let ids: BTreeSet<&str> = bank.iter().map(|q| q.id.as_str()).collect();
        let questions: BTreeSet<(&str, &Vec<String>)> = bank.iter().map(|q| (q.text.as_str(), &q.answers)).collect();
        prop_assert_eq!(ids.len(), tags.len());
        prop_assert_eq!(questions.len(), tags.len());
    }
}
