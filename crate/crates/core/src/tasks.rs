//! Concrete task glue: gold-oracle unrolling, structure
//! reconstruction from complete decision sequences, and evaluation.

use crate::error::{Error, Result};
use crate::input::Input;
use crate::transition::{Payload, TaskKind, TransitionSystem, KEEP, SHIFT};

/// Gold structure for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoldAnnotation {
    Tagging {
        tags: Vec<String>,
    },
    Parsing {
        /// Head per token, 1-based; 0 = ROOT.
        heads: Vec<usize>,
        labels: Vec<String>,
    },
    Compression {
        keep: Vec<bool>,
    },
}

impl GoldAnnotation {
    pub fn len(&self) -> usize {
        match self {
            GoldAnnotation::Tagging { tags } => tags.len(),
            GoldAnnotation::Parsing { heads, .. } => heads.len(),
            GoldAnnotation::Compression { keep } => keep.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            GoldAnnotation::Tagging { .. } => TaskKind::Tagging,
            GoldAnnotation::Parsing { .. } => TaskKind::Parsing,
            GoldAnnotation::Compression { .. } => TaskKind::Compression,
        }
    }
}

/// Predicted structure reconstructed from a final state. Same shape
/// as [`GoldAnnotation`].
pub type PredictedStructure = GoldAnnotation;

fn check_len(input: &Input, gold_len: usize) -> Result<()> {
    if input.len() != gold_len {
        return Err(Error::LengthMismatch {
            gold: gold_len,
            input: input.len(),
        });
    }
    Ok(())
}

fn symbol_id(symbols: &[String], name: &str) -> Result<usize> {
    symbols
        .iter()
        .position(|s| s == name)
        .ok_or_else(|| Error::InvalidGold(format!("unknown symbol `{name}`")))
}

/// Validate a parsing gold annotation: heads in range, exactly one
/// root, no cycles.
pub fn validate_tree(heads: &[usize]) -> Result<()> {
    let m = heads.len();
    let mut roots = 0;
    for (i, &h) in heads.iter().enumerate() {
        if h > m {
            return Err(Error::InvalidGold(format!(
                "head {h} out of range for token {}",
                i + 1
            )));
        }
        if h == i + 1 {
            return Err(Error::InvalidGold(format!("token {} is its own head", i + 1)));
        }
        if h == 0 {
            roots += 1;
        }
    }
    if roots != 1 {
        return Err(Error::InvalidGold(format!(
            "expected exactly one root, found {roots}"
        )));
    }
    // Cycle check: walk up from every token.
    for start in 1..=m {
        let mut seen = 0;
        let mut cur = start;
        while cur != 0 {
            cur = heads[cur - 1];
            seen += 1;
            if seen > m {
                return Err(Error::InvalidGold("cycle in head assignments".into()));
            }
        }
    }
    Ok(())
}

/// Unroll a gold annotation into its decision sequence. For parsing
/// this is the static arc-standard oracle: left-arcs as soon as legal,
/// right-arcs once the dependent's own dependents are complete.
pub fn unroll_gold(
    sys: &TransitionSystem,
    input: &Input,
    gold: &GoldAnnotation,
) -> Result<Vec<usize>> {
    check_len(input, gold.len())?;
    match (sys.kind(), gold) {
        (TaskKind::Tagging, GoldAnnotation::Tagging { tags }) => tags
            .iter()
            .map(|t| symbol_id(sys.symbols(), t))
            .collect(),
        (TaskKind::Compression, GoldAnnotation::Compression { keep }) => Ok(keep
            .iter()
            .map(|&k| if k { KEEP } else { crate::transition::DROP })
            .collect()),
        (TaskKind::Parsing, GoldAnnotation::Parsing { heads, labels }) => {
            validate_tree(heads)?;
            let label_ids: Vec<usize> = labels
                .iter()
                .map(|l| symbol_id(sys.symbols(), l))
                .collect::<Result<_>>()?;
            let m = input.len();
            let mut dep_total = vec![0usize; m + 1];
            for &h in heads {
                dep_total[h] += 1;
            }
            let mut attached = vec![0usize; m + 1];
            let mut state = sys.start_state(input)?;
            let mut decisions = vec![];
            for step in 0..sys.n_of(input) {
                let allowed = sys.allowed(&state, input);
                let (stack, buffer) = match &state.payload {
                    Payload::Parser { stack, buffer, .. } => (stack.clone(), *buffer),
                    _ => unreachable!(),
                };
                let mut choice = None;
                if stack.len() >= 2 {
                    let s0 = stack[stack.len() - 1];
                    let s1 = stack[stack.len() - 2];
                    if s1 != 0 && heads[s1 - 1] == s0 && attached[s1] == dep_total[s1] {
                        choice = Some((sys.left_arc_id(label_ids[s1 - 1]), s1));
                    } else if heads[s0 - 1] == s1 && attached[s0] == dep_total[s0] {
                        let d = sys.right_arc_id(label_ids[s0 - 1]);
                        if allowed.contains(&d) {
                            choice = Some((d, s0));
                        }
                    }
                }
                let decision = match choice {
                    Some((d, dep)) => {
                        attached[heads[dep - 1]] += 1;
                        d
                    }
                    None => {
                        if buffer <= m {
                            SHIFT
                        } else {
                            return Err(Error::NonProjective { step });
                        }
                    }
                };
                state = sys.apply(&state, decision, input)?;
                decisions.push(decision);
            }
            Ok(decisions)
        }
        (kind, gold) => Err(Error::TaskMismatch {
            model: kind.as_str().to_string(),
            input: gold.kind().as_str().to_string(),
        }),
    }
}

/// Rebuild the predicted structure from a complete decision sequence.
/// Inverse of the decision encoding: `reconstruct(unroll_gold(g)) = g`.
pub fn reconstruct(
    sys: &TransitionSystem,
    input: &Input,
    decisions: &[usize],
) -> Result<PredictedStructure> {
    let state = sys.replay(input, decisions)?;
    if !sys.is_final(&state, input) {
        return Err(Error::IncompleteSequence {
            got: decisions.len(),
            expected: sys.n_of(input),
        });
    }
    Ok(match &state.payload {
        Payload::Tagger { tags, .. } => GoldAnnotation::Tagging {
            tags: tags.iter().map(|&t| sys.symbols()[t].clone()).collect(),
        },
        Payload::Compressor { mask, .. } => GoldAnnotation::Compression { keep: mask.clone() },
        Payload::Parser { arcs, .. } => {
            let m = input.len();
            let mut heads = vec![0usize; m];
            let mut labels = vec![String::new(); m];
            for arc in arcs {
                heads[arc.dependent - 1] = arc.head;
                labels[arc.dependent - 1] = sys.symbols()[arc.label].clone();
            }
            GoldAnnotation::Parsing { heads, labels }
        }
    })
}

/// Evaluation configuration. Tokens whose value in `punct_column` is
/// in `punctuation_tags` are excluded from UAS/LAS.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub punctuation_tags: Vec<String>,
    pub punct_column: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            punctuation_tags: ["``", "''", ".", ",", ":"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            punct_column: "tag".to_string(),
        }
    }
}

/// Task metrics. Tagging accuracy and UAS/LAS are percentages;
/// compression precision/recall/F1 and exact match are fractions.
#[derive(Debug, Clone, PartialEq)]
pub enum Metrics {
    Tagging {
        accuracy: f64,
        correct: usize,
        total: usize,
    },
    Parsing {
        uas: f64,
        las: f64,
        counted: usize,
    },
    Compression {
        precision: f64,
        recall: f64,
        f1: f64,
        exact_match: f64,
        sentences: usize,
    },
}

impl Metrics {
    /// The headline number used for early stopping.
    pub fn headline(&self) -> f64 {
        match self {
            Metrics::Tagging { accuracy, .. } => *accuracy,
            Metrics::Parsing { las, .. } => *las,
            Metrics::Compression { f1, .. } => *f1 * 100.0,
        }
    }
}

/// Streaming evaluation over (input, predicted, gold) triples.
#[derive(Debug, Clone)]
pub struct Evaluator {
    config: EvalConfig,
    tag_correct: usize,
    tag_total: usize,
    head_correct: usize,
    both_correct: usize,
    parse_counted: usize,
    tp: usize,
    fp: usize,
    fn_: usize,
    exact: usize,
    sentences: usize,
    kind: Option<TaskKind>,
}

impl Evaluator {
    pub fn new(config: EvalConfig) -> Self {
        Evaluator {
            config,
            tag_correct: 0,
            tag_total: 0,
            head_correct: 0,
            both_correct: 0,
            parse_counted: 0,
            tp: 0,
            fp: 0,
            fn_: 0,
            exact: 0,
            sentences: 0,
            kind: None,
        }
    }

    pub fn add(
        &mut self,
        input: &Input,
        pred: &PredictedStructure,
        gold: &GoldAnnotation,
    ) -> Result<()> {
        if pred.len() != gold.len() {
            return Err(Error::LengthMismatch {
                gold: gold.len(),
                input: pred.len(),
            });
        }
        check_len(input, gold.len())?;
        self.kind = Some(gold.kind());
        self.sentences += 1;
        match (pred, gold) {
            (GoldAnnotation::Tagging { tags: p }, GoldAnnotation::Tagging { tags: g }) => {
                self.tag_total += g.len();
                self.tag_correct += p.iter().zip(g).filter(|(a, b)| a == b).count();
            }
            (
                GoldAnnotation::Parsing {
                    heads: ph,
                    labels: pl,
                },
                GoldAnnotation::Parsing {
                    heads: gh,
                    labels: gl,
                },
            ) => {
                for i in 0..gh.len() {
                    let tag = input.token(i).attr(&self.config.punct_column);
                    if let Some(t) = tag {
                        if self.config.punctuation_tags.iter().any(|p| p == t) {
                            continue;
                        }
                    }
                    self.parse_counted += 1;
                    if ph[i] == gh[i] {
                        self.head_correct += 1;
                        if pl[i] == gl[i] {
                            self.both_correct += 1;
                        }
                    }
                }
            }
            (GoldAnnotation::Compression { keep: p }, GoldAnnotation::Compression { keep: g }) => {
                if p == g {
                    self.exact += 1;
                }
                for (a, b) in p.iter().zip(g) {
                    match (a, b) {
                        (true, true) => self.tp += 1,
                        (true, false) => self.fp += 1,
                        (false, true) => self.fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
            _ => {
                return Err(Error::TaskMismatch {
                    model: gold.kind().as_str().to_string(),
                    input: pred.kind().as_str().to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Metrics {
        match self.kind {
            Some(TaskKind::Tagging) | None => Metrics::Tagging {
                accuracy: percent(self.tag_correct, self.tag_total),
                correct: self.tag_correct,
                total: self.tag_total,
            },
            Some(TaskKind::Parsing) => Metrics::Parsing {
                uas: percent(self.head_correct, self.parse_counted),
                las: percent(self.both_correct, self.parse_counted),
                counted: self.parse_counted,
            },
            Some(TaskKind::Compression) => {
                let precision = ratio(self.tp, self.tp + self.fp);
                let recall = ratio(self.tp, self.tp + self.fn_);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                Metrics::Compression {
                    precision,
                    recall,
                    f1,
                    exact_match: ratio(self.exact, self.sentences),
                    sentences: self.sentences,
                }
            }
        }
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Evaluate a single sentence.
pub fn evaluate(
    input: &Input,
    pred: &PredictedStructure,
    gold: &GoldAnnotation,
    config: EvalConfig,
) -> Result<Metrics> {
    let mut ev = Evaluator::new(config);
    ev.add(input, pred, gold)?;
    Ok(ev.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag_sys() -> TransitionSystem {
        TransitionSystem::tagging(
            ["A", "B", "C"].iter().map(|s| s.to_string()).collect(),
        )
    }

    fn parse_sys() -> TransitionSystem {
        TransitionSystem::parsing(vec!["dep".to_string(), "mod".to_string()])
    }

    #[test]
    fn tagging_unroll_is_tag_transcription() {
        let sys = tag_sys();
        let x = Input::from_forms(&["a", "b", "c"]).unwrap();
        let gold = GoldAnnotation::Tagging {
            tags: vec!["A".into(), "B".into(), "C".into()],
        };
        assert_eq!(unroll_gold(&sys, &x, &gold).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn parsing_oracle_two_tokens() {
        let sys = parse_sys();
        let x = Input::from_forms(&["w1", "w2"]).unwrap();
        let gold = GoldAnnotation::Parsing {
            heads: vec![0, 1],
            labels: vec!["dep".into(), "dep".into()],
        };
        let d = unroll_gold(&sys, &x, &gold).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(
            d,
            vec![SHIFT, SHIFT, sys.right_arc_id(0), sys.right_arc_id(0)]
        );
        assert_eq!(reconstruct(&sys, &x, &d).unwrap(), gold);
    }

    #[test]
    fn parsing_oracle_rejects_non_projective() {
        let sys = parse_sys();
        let x = Input::from_forms(&["w1", "w2", "w3", "w4"]).unwrap();
        let gold = GoldAnnotation::Parsing {
            heads: vec![3, 4, 0, 1],
            labels: vec!["dep".into(); 4],
        };
        assert!(matches!(
            unroll_gold(&sys, &x, &gold),
            Err(Error::NonProjective { .. })
        ));
    }

    #[test]
    fn tree_validation_rejects_cycles_and_multi_roots() {
        assert!(validate_tree(&[0, 1]).is_ok());
        assert!(validate_tree(&[2, 1]).is_err()); // no root, cycle
        assert!(validate_tree(&[0, 0]).is_err()); // two roots
        assert!(validate_tree(&[0, 9]).is_err()); // out of range
    }

    #[test]
    fn compression_round_trip() {
        let sys = TransitionSystem::compression();
        let x = Input::from_forms(&["a", "b", "c"]).unwrap();
        let gold = GoldAnnotation::Compression {
            keep: vec![true, false, true],
        };
        let d = unroll_gold(&sys, &x, &gold).unwrap();
        assert_eq!(d, vec![KEEP, crate::transition::DROP, KEEP]);
        assert_eq!(reconstruct(&sys, &x, &d).unwrap(), gold);
    }

    #[test]
    fn evaluate_identical_parse_is_perfect() {
        let x = Input::from_forms(&["w1", "w2"]).unwrap();
        let gold = GoldAnnotation::Parsing {
            heads: vec![0, 1],
            labels: vec!["dep".into(), "dep".into()],
        };
        let m = evaluate(&x, &gold, &gold, EvalConfig::default()).unwrap();
        match m {
            Metrics::Parsing { uas, las, .. } => {
                assert_eq!(uas, 100.0);
                assert_eq!(las, 100.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn evaluate_one_wrong_label_among_four() {
        let x = Input::from_forms(&["w1", "w2", "w3", "w4"]).unwrap();
        let gold = GoldAnnotation::Parsing {
            heads: vec![0, 1, 1, 1],
            labels: vec!["dep".into(); 4],
        };
        let pred = GoldAnnotation::Parsing {
            heads: vec![0, 1, 1, 1],
            labels: vec!["dep".into(), "dep".into(), "dep".into(), "mod".into()],
        };
        let m = evaluate(&x, &pred, &gold, EvalConfig::default()).unwrap();
        match m {
            Metrics::Parsing { uas, las, .. } => {
                assert_eq!(uas, 100.0);
                assert_eq!(las, 75.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn evaluate_compression_f1() {
        let x = Input::from_forms(&["a", "b", "c"]).unwrap();
        let gold = GoldAnnotation::Compression {
            keep: vec![true, false, true],
        };
        let pred = GoldAnnotation::Compression {
            keep: vec![true, false, false],
        };
        let m = evaluate(&x, &pred, &gold, EvalConfig::default()).unwrap();
        match m {
            Metrics::Compression {
                precision,
                recall,
                f1,
                exact_match,
                ..
            } => {
                assert_eq!(precision, 1.0);
                assert_eq!(recall, 0.5);
                assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
                assert_eq!(exact_match, 0.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn punctuation_excluded_from_attachment_scores() {
        let x = Input::new(vec![
            crate::input::Token::new("w1").with_attr("tag", "NN"),
            crate::input::Token::new(".").with_attr("tag", "."),
        ])
        .unwrap();
        let gold = GoldAnnotation::Parsing {
            heads: vec![0, 1],
            labels: vec!["dep".into(), "dep".into()],
        };
        let pred = GoldAnnotation::Parsing {
            heads: vec![0, 0],
            labels: vec!["dep".into(), "dep".into()],
        };
        // The wrong head is on the punctuation token, which is skipped.
        let m = evaluate(&x, &pred, &gold, EvalConfig::default()).unwrap();
        match m {
            Metrics::Parsing { uas, counted, .. } => {
                assert_eq!(uas, 100.0);
                assert_eq!(counted, 1);
            }
            _ => unreachable!(),
        }
    }
}
