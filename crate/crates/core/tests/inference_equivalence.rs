//! Beam search vs. exact enumeration, tie-breaking, and the
//! exhaustive-beam equivalence between the beam loss and the exact
//! globally normalized negative log-likelihood.

use gntp_core::corpus::{generate, GeneratorSpec};
use gntp_core::features::simple_tagging_template;
use gntp_core::inference::{
    beam_search, beam_search_tracking, enumerate_all, greedy_decode, log_sum_exp, ScoreMode,
};
use gntp_core::network::{Activation, Params};
use gntp_core::tasks::unroll_gold;
use gntp_core::training::{global_loss_frozen, local_loss_and_grad};
use gntp_core::transition::TransitionSystem;
use gntp_core::{Input, Model};

fn small_model(tags: usize, seed: u64) -> Model {
    let corpus = generate(&GeneratorSpec::SeparableTagging {
        sentences: 6,
        vocab: 8,
        tags,
        max_len: 5,
        seed,
    })
    .unwrap();
    let sys = TransitionSystem::tagging((0..tags).map(|t| format!("t{t}")).collect());
    let mut template = simple_tagging_template(1, 2, 4);
    template.build_vocabs(&sys, &corpus.sentences);
    let params = Params::init(&template, &[6], sys.vocab().len(), Activation::Tanh, seed);
    Model::new(sys, template, params)
}

fn small_parser(seed: u64) -> (Model, Input, Vec<usize>) {
    let corpus = generate(&GeneratorSpec::RandomProjective {
        sentences: 3,
        vocab: 6,
        labels: 2,
        max_len: 4,
        seed,
    })
    .unwrap();
    let sys = TransitionSystem::parsing(vec!["l0".into(), "l1".into()]);
    let mut template = simple_tagging_template(1, 2, 3);
    template.build_vocabs(&sys, &corpus.sentences);
    let params = Params::init(&template, &[5], sys.vocab().len(), Activation::Tanh, seed);
    let model = Model::new(sys, template, params);
    let (input, gold) = &corpus.sentences[0];
    let decisions = unroll_gold(&model.system, input, gold).unwrap();
    (model.clone(), input.clone(), decisions)
}

fn test_input(len: usize) -> Input {
    let forms: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
    Input::from_forms(&forms).unwrap()
}

#[test]
fn greedy_equals_beam_one() {
    for seed in 0..10 {
        let model = small_model(4, seed);
        let input = test_input(4);
        let greedy = greedy_decode(&model.raw_scorer(), &input).unwrap();
        let beam = beam_search(&model.raw_scorer(), &input, 1, ScoreMode::Local).unwrap();
        assert_eq!(greedy.decisions, beam.items[0].decisions);
    }
}

#[test]
fn exhaustive_beam_matches_enumeration_argmax() {
    for seed in 0..10 {
        let model = small_model(3, seed);
        let input = test_input(4); // 81 sequences
        let (all, _) = enumerate_all(&model.raw_scorer(), &input, 1000).unwrap();
        for mode in [ScoreMode::Local, ScoreMode::Global] {
            let beam = beam_search(&model.raw_scorer(), &input, 100, mode).unwrap();
            let best = all
                .iter()
                .max_by(|a, b| {
                    let (ka, kb) = match mode {
                        ScoreMode::Local => (a.local_logp, b.local_logp),
                        ScoreMode::Global => (a.raw_score, b.raw_score),
                    };
                    ka.partial_cmp(&kb)
                        .unwrap()
                        .then_with(|| b.decisions.cmp(&a.decisions))
                })
                .unwrap();
            assert_eq!(beam.items[0].decisions, best.decisions, "mode {mode:?}");
        }
    }
}

#[test]
fn beam_best_score_is_monotone_in_width() {
    for seed in 0..6 {
        let model = small_model(4, seed);
        let input = test_input(5);
        for mode in [ScoreMode::Local, ScoreMode::Global] {
            let mut prev = f64::NEG_INFINITY;
            for b in [1, 2, 4, 8, 32, 2000] {
                let beam = beam_search(&model.raw_scorer(), &input, b, mode).unwrap();
                let best = match mode {
                    ScoreMode::Local => beam.items[0].local_logp,
                    ScoreMode::Global => beam.items[0].raw_score,
                };
                assert!(best >= prev - 1e-12);
                prev = best;
            }
        }
    }
}

#[test]
fn zero_scores_break_ties_lexicographically() {
    let mut model = small_model(3, 1);
    model.params.scale(0.0);
    let input = test_input(3);
    let beam = beam_search(&model.raw_scorer(), &input, 4, ScoreMode::Global).unwrap();
    // All scores tie, so hypotheses come out in lexicographic order.
    assert_eq!(beam.items[0].decisions, vec![0, 0, 0]);
    assert_eq!(beam.items[1].decisions, vec![0, 0, 1]);
    assert_eq!(beam.items[2].decisions, vec![0, 0, 2]);
    assert_eq!(beam.items[3].decisions, vec![0, 1, 0]);
}

#[test]
fn enumeration_probabilities_sum_to_one() {
    for seed in 0..5 {
        let model = small_model(3, seed);
        let input = test_input(3);
        let (all, log_zg) = enumerate_all(&model.raw_scorer(), &input, 1000).unwrap();
        assert_eq!(all.len(), 27);
        let local: f64 = all.iter().map(|s| s.local_logp.exp()).sum();
        let global: f64 = all.iter().map(|s| s.global_logp.unwrap().exp()).sum();
        assert!((local - 1.0).abs() < 1e-9, "local sum {local}");
        assert!((global - 1.0).abs() < 1e-9, "global sum {global}");
        let by_hand = log_sum_exp(&all.iter().map(|s| s.raw_score).collect::<Vec<_>>());
        assert!((by_hand - log_zg).abs() < 1e-12);
    }
}

#[test]
fn exhaustive_beam_loss_equals_exact_global_nll() {
    // With a beam wide enough to hold every sequence the gold path
    // never falls out, the update set is all of D_n, and the beam loss
    // reduces to the exact globally normalized NLL.
    for seed in 0..8 {
        let model = small_model(3, seed);
        let input = test_input(4);
        let gold = vec![1, 0, 2, 1];
        let tracked = beam_search_tracking(
            &model.raw_scorer(),
            &input,
            10_000,
            ScoreMode::Global,
            &gold,
        )
        .unwrap();
        assert!(tracked.fallout_step.is_none());
        let (beam_loss, _) = global_loss_frozen(&model, &input, &tracked).unwrap();

        let (all, log_zg) = enumerate_all(&model.raw_scorer(), &input, 1000).unwrap();
        let gold_seq = all.iter().find(|s| s.decisions == gold).unwrap();
        let exact_nll = log_zg - gold_seq.raw_score;
        assert!(
            (beam_loss - exact_nll).abs() < 1e-9,
            "beam {beam_loss} vs exact {exact_nll}"
        );

        // The beam's log-sum-exp equals the exact partition value.
        let beam_lse = log_sum_exp(
            &tracked
                .beam
                .items
                .iter()
                .map(|i| i.raw_score)
                .collect::<Vec<_>>(),
        );
        assert!((beam_lse - log_zg).abs() < 1e-9);
    }
}

#[test]
fn exhaustive_beam_equivalence_holds_for_parsing() {
    for seed in 0..4 {
        let (model, input, gold) = small_parser(seed);
        let tracked = beam_search_tracking(
            &model.raw_scorer(),
            &input,
            10_000,
            ScoreMode::Global,
            &gold,
        )
        .unwrap();
        assert!(tracked.fallout_step.is_none());
        let (beam_loss, _) = global_loss_frozen(&model, &input, &tracked).unwrap();
        let (all, log_zg) = enumerate_all(&model.raw_scorer(), &input, 100_000).unwrap();
        let gold_seq = all.iter().find(|s| s.decisions == gold).unwrap();
        assert!((beam_loss - (log_zg - gold_seq.raw_score)).abs() < 1e-9);
    }
}

#[test]
fn local_nll_matches_enumerated_sequence_probability() {
    for seed in 0..5 {
        let model = small_model(3, seed);
        let input = test_input(3);
        let gold = vec![2, 0, 1];
        let (loss, _) = local_loss_and_grad(&model, &input, &gold).unwrap();
        let (all, _) = enumerate_all(&model.raw_scorer(), &input, 1000).unwrap();
        let seq = all.iter().find(|s| s.decisions == gold).unwrap();
        assert!((loss + seq.local_logp).abs() < 1e-9);
    }
}
