//! Abstract transition-system machinery: decisions, states, allowed
//! moves, and the transition function. Every complete decision
//! sequence for one input has the same fixed length `n(x)`; a state is
//! in bijection with its decision history.

use crate::error::{Error, Result};
use crate::input::Input;

/// One decision in a task's fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Decision {
    pub id: usize,
    pub name: String,
}

/// Ordered decision vocabulary. Ids are dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionVocab {
    decisions: Vec<Decision>,
}

impl DecisionVocab {
    pub fn new(names: Vec<String>) -> Self {
        let decisions = names
            .into_iter()
            .enumerate()
            .map(|(id, name)| Decision { id, name })
            .collect();
        DecisionVocab { decisions }
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn get(&self, id: usize) -> &Decision {
        &self.decisions[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.decisions[id].name
    }

    pub fn id_of(&self, name: &str) -> Result<usize> {
        self.decisions
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDecision(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Decision> {
        self.decisions.iter()
    }
}

/// A dependency arc; token indices are 1-based, head 0 is the
/// artificial ROOT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParserArc {
    pub head: usize,
    pub dependent: usize,
    pub label: usize,
}

/// Task-specific part of a state. Always a deterministic function of
/// (input, decision history).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Tagger {
        /// 0-based index of the next token to tag.
        buffer: usize,
        /// Tag index emitted for each consumed token.
        tags: Vec<usize>,
    },
    Parser {
        /// Stack of token ids, bottom first; starts as `[0]` (ROOT).
        stack: Vec<usize>,
        /// 1-based id of the next buffer token; `m + 1` when empty.
        buffer: usize,
        arcs: Vec<ParserArc>,
    },
    Compressor {
        /// 0-based index of the next token to decide.
        cursor: usize,
        /// Keep(true)/drop(false) bit per consumed token.
        mask: Vec<bool>,
    },
}

/// A state: the decision history plus the payload it determines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub history: Vec<usize>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Tagging,
    Parsing,
    Compression,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Tagging => "tagging",
            TaskKind::Parsing => "parsing",
            TaskKind::Compression => "compression",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tagging" => Ok(TaskKind::Tagging),
            "parsing" => Ok(TaskKind::Parsing),
            "compression" => Ok(TaskKind::Compression),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// What a parser decision id means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParserAction {
    Shift,
    LeftArc(usize),
    RightArc(usize),
}

/// A concrete transition system: shift-and-tag tagging, arc-standard
/// dependency parsing with labeled arcs, or keep/drop compression.
///
/// The decision vocabulary is fixed at construction and serialized
/// with trained models; unseen labels at decode time are an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionSystem {
    kind: TaskKind,
    vocab: DecisionVocab,
    /// Tag names (tagging) or dependency label names (parsing).
    symbols: Vec<String>,
}

pub const KEEP: usize = 0;
pub const DROP: usize = 1;
pub const SHIFT: usize = 0;

impl TransitionSystem {
    pub fn tagging(tags: Vec<String>) -> Self {
        let names = tags.iter().map(|t| format!("TAG:{t}")).collect();
        TransitionSystem {
            kind: TaskKind::Tagging,
            vocab: DecisionVocab::new(names),
            symbols: tags,
        }
    }

    /// Arc-standard parser. Decision ids: 0 = SHIFT, then LEFT-ARC per
    /// label, then RIGHT-ARC per label.
    pub fn parsing(labels: Vec<String>) -> Self {
        let mut names = vec!["SHIFT".to_string()];
        names.extend(labels.iter().map(|l| format!("LEFT-ARC({l})")));
        names.extend(labels.iter().map(|l| format!("RIGHT-ARC({l})")));
        TransitionSystem {
            kind: TaskKind::Parsing,
            vocab: DecisionVocab::new(names),
            symbols: labels,
        }
    }

    pub fn compression() -> Self {
        TransitionSystem {
            kind: TaskKind::Compression,
            vocab: DecisionVocab::new(vec!["KEEP".to_string(), "DROP".to_string()]),
            symbols: vec![],
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn vocab(&self) -> &DecisionVocab {
        &self.vocab
    }

    /// Tags for tagging, dependency labels for parsing.
    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn parser_action(&self, decision: usize) -> ParserAction {
        debug_assert_eq!(self.kind, TaskKind::Parsing);
        let l = self.symbols.len();
        if decision == SHIFT {
            ParserAction::Shift
        } else if decision <= l {
            ParserAction::LeftArc(decision - 1)
        } else {
            ParserAction::RightArc(decision - 1 - l)
        }
    }

    pub fn left_arc_id(&self, label: usize) -> usize {
        1 + label
    }

    pub fn right_arc_id(&self, label: usize) -> usize {
        1 + self.symbols.len() + label
    }

    /// Fixed decision count for a complete structure: `m` for tagging
    /// and compression, `2m` for arc-standard parsing.
    pub fn n_of(&self, input: &Input) -> usize {
        match self.kind {
            TaskKind::Tagging | TaskKind::Compression => input.len(),
            TaskKind::Parsing => 2 * input.len(),
        }
    }

    pub fn start_state(&self, input: &Input) -> Result<State> {
        if input.is_empty() {
            return Err(Error::EmptyInput);
        }
        let payload = match self.kind {
            TaskKind::Tagging => Payload::Tagger {
                buffer: 0,
                tags: vec![],
            },
            TaskKind::Parsing => Payload::Parser {
                stack: vec![0],
                buffer: 1,
                arcs: vec![],
            },
            TaskKind::Compression => Payload::Compressor {
                cursor: 0,
                mask: vec![],
            },
        };
        Ok(State {
            history: vec![],
            payload,
        })
    }

    pub fn is_final(&self, state: &State, input: &Input) -> bool {
        state.history.len() == self.n_of(input)
    }

    /// Allowed decision ids in ascending order; empty iff final.
    pub fn allowed(&self, state: &State, input: &Input) -> Vec<usize> {
        if self.is_final(state, input) {
            return vec![];
        }
        match &state.payload {
            Payload::Tagger { .. } | Payload::Compressor { .. } => {
                (0..self.vocab.len()).collect()
            }
            Payload::Parser { stack, buffer, .. } => {
                let m = input.len();
                let l = self.symbols.len();
                let mut out = vec![];
                if *buffer <= m {
                    out.push(SHIFT);
                }
                if stack.len() >= 2 && stack[stack.len() - 2] != 0 {
                    out.extend((0..l).map(|lab| self.left_arc_id(lab)));
                }
                // RIGHT-ARC onto ROOT only as the very last decision:
                // keeps output trees single-rooted.
                let right_ok = stack.len() >= 3
                    || (stack.len() == 2 && *buffer > m);
                if right_ok {
                    out.extend((0..l).map(|lab| self.right_arc_id(lab)));
                }
                out.sort_unstable();
                out
            }
        }
    }

    pub fn apply(&self, state: &State, decision: usize, input: &Input) -> Result<State> {
        if !self.allowed(state, input).contains(&decision) {
            return Err(Error::DisallowedDecision {
                decision: self.vocab.name(decision).to_string(),
            });
        }
        let mut next = state.clone();
        next.history.push(decision);
        match &mut next.payload {
            Payload::Tagger { buffer, tags } => {
                tags.push(decision);
                *buffer += 1;
            }
            Payload::Compressor { cursor, mask } => {
                mask.push(decision == KEEP);
                *cursor += 1;
            }
            Payload::Parser {
                stack,
                buffer,
                arcs,
            } => match self.parser_action(decision) {
                ParserAction::Shift => {
                    stack.push(*buffer);
                    *buffer += 1;
                }
                ParserAction::LeftArc(label) => {
                    let head = stack[stack.len() - 1];
                    let dependent = stack.remove(stack.len() - 2);
                    arcs.push(ParserArc {
                        head,
                        dependent,
                        label,
                    });
                }
                ParserAction::RightArc(label) => {
                    let dependent = stack.pop().unwrap();
                    let head = stack[stack.len() - 1];
                    arcs.push(ParserArc {
                        head,
                        dependent,
                        label,
                    });
                }
            },
        }
        Ok(next)
    }

    /// Replay a decision sequence from the start state.
    pub fn replay(&self, input: &Input, decisions: &[usize]) -> Result<State> {
        let mut state = self.start_state(input)?;
        for &d in decisions {
            state = self.apply(&state, d, input)?;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag5() -> TransitionSystem {
        TransitionSystem::tagging(
            ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn tagging_start_state() {
        let sys = tag5();
        let x = Input::from_forms(&["a", "b", "c"]).unwrap();
        let s = sys.start_state(&x).unwrap();
        assert!(s.history.is_empty());
        assert_eq!(
            s.payload,
            Payload::Tagger {
                buffer: 0,
                tags: vec![]
            }
        );
    }

    #[test]
    fn tagging_allows_all_tags_until_final() {
        let sys = tag5();
        let x = Input::from_forms(&["a", "b", "c"]).unwrap();
        let mut s = sys.start_state(&x).unwrap();
        for step in 0..3 {
            assert_eq!(sys.allowed(&s, &x), vec![0, 1, 2, 3, 4], "step {step}");
            s = sys.apply(&s, 0, &x).unwrap();
        }
        assert!(sys.is_final(&s, &x));
        assert!(sys.allowed(&s, &x).is_empty());
    }

    #[test]
    fn parser_start_allows_only_shift() {
        let sys = TransitionSystem::parsing(vec!["dep".to_string()]);
        let x = Input::from_forms(&["w1", "w2"]).unwrap();
        let s = sys.start_state(&x).unwrap();
        assert_eq!(sys.allowed(&s, &x), vec![SHIFT]);
    }

    #[test]
    fn parser_right_arc_pops_top() {
        let sys = TransitionSystem::parsing(vec!["dep".to_string()]);
        let x = Input::from_forms(&["w1", "w2"]).unwrap();
        let s = sys.replay(&x, &[SHIFT, SHIFT]).unwrap();
        // stack = [ROOT, w1, w2]
        let s = sys.apply(&s, sys.right_arc_id(0), &x).unwrap();
        match &s.payload {
            Payload::Parser { stack, arcs, .. } => {
                assert_eq!(stack, &vec![0, 1]);
                assert_eq!(
                    arcs,
                    &vec![ParserArc {
                        head: 1,
                        dependent: 2,
                        label: 0
                    }]
                );
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn parser_complete_parse_has_2m_decisions() {
        let sys = TransitionSystem::parsing(vec!["dep".to_string()]);
        let x = Input::from_forms(&["w1", "w2"]).unwrap();
        let ra = sys.right_arc_id(0);
        let s = sys.replay(&x, &[SHIFT, SHIFT, ra, ra]).unwrap();
        assert!(sys.is_final(&s, &x));
        assert_eq!(s.history.len(), 2 * x.len());
    }

    #[test]
    fn root_attachment_deferred_until_buffer_empty() {
        let sys = TransitionSystem::parsing(vec!["dep".to_string()]);
        let x = Input::from_forms(&["w1", "w2"]).unwrap();
        let s = sys.replay(&x, &[SHIFT]).unwrap();
        // stack = [ROOT, w1], buffer non-empty: only SHIFT allowed.
        assert_eq!(sys.allowed(&s, &x), vec![SHIFT]);
    }

    #[test]
    fn disallowed_decision_is_an_error() {
        let sys = TransitionSystem::parsing(vec!["dep".to_string()]);
        let x = Input::from_forms(&["w1", "w2"]).unwrap();
        let s = sys.start_state(&x).unwrap();
        assert!(matches!(
            sys.apply(&s, sys.left_arc_id(0), &x),
            Err(Error::DisallowedDecision { .. })
        ));
    }

    #[test]
    fn compression_final_state_has_empty_allowed() {
        let sys = TransitionSystem::compression();
        let x = Input::from_forms(&["a", "b"]).unwrap();
        let s = sys.replay(&x, &[KEEP, DROP]).unwrap();
        assert!(sys.is_final(&s, &x));
        assert!(sys.allowed(&s, &x).is_empty());
        match &s.payload {
            Payload::Compressor { cursor, mask } => {
                assert_eq!(*cursor, 2);
                assert_eq!(mask, &vec![true, false]);
            }
            _ => unreachable!(),
        }
    }
}
