//! Decoding: greedy search, beam search under local (log-softmax
//! additive) and global (raw-score additive) semantics, gold tracking
//! for early updates, and exact enumeration on small instances.

use crate::error::{Error, Result};
use crate::input::Input;
use crate::model::Scorer;
use crate::transition::State;

/// Numerically stable log-sum-exp with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Additive scores are per-step log-softmax values.
    Local,
    /// Additive scores are the raw decision scores.
    Global,
}

/// One beam hypothesis: a decision prefix with both cumulative scores.
#[derive(Debug, Clone)]
pub struct BeamItem {
    pub decisions: Vec<usize>,
    pub state: State,
    /// Cumulative raw score: sum of decision scores along the prefix.
    pub raw_score: f64,
    /// Cumulative local log-probability: sum of per-step log-softmax.
    pub local_logp: f64,
    pub is_gold: bool,
}

impl BeamItem {
    fn key(&self, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Local => self.local_logp,
            ScoreMode::Global => self.raw_score,
        }
    }
}

/// A pruned beam after some number of steps, sorted descending by the
/// active mode with lexicographic tie-break on decision ids.
#[derive(Debug, Clone)]
pub struct Beam {
    pub items: Vec<BeamItem>,
    pub step: usize,
    pub mode: ScoreMode,
}

/// A complete decision sequence with its exact scores.
#[derive(Debug, Clone)]
pub struct ScoredSequence {
    pub decisions: Vec<usize>,
    pub raw_score: f64,
    pub local_logp: f64,
    /// Per-step local partition values ln Z_L.
    pub step_log_zl: Vec<f64>,
    pub log_zg: Option<f64>,
    pub global_logp: Option<f64>,
}

fn sort_items(items: &mut [BeamItem], mode: ScoreMode) {
    items.sort_by(|a, b| {
        b.key(mode)
            .partial_cmp(&a.key(mode))
            .expect("non-finite beam score")
            .then_with(|| a.decisions.cmp(&b.decisions))
    });
}

fn expand<S: Scorer>(
    scorer: &S,
    input: &Input,
    items: &[BeamItem],
    gold: Option<&[usize]>,
    step: usize,
) -> Result<Vec<BeamItem>> {
    let sys = scorer.system();
    let mut candidates = vec![];
    for item in items {
        let allowed = sys.allowed(&item.state, input);
        debug_assert!(!allowed.is_empty());
        let scores = scorer.score(&item.state, input)?;
        let log_zl = log_sum_exp(&allowed.iter().map(|&d| scores[d]).collect::<Vec<_>>());
        for &d in &allowed {
            let mut decisions = item.decisions.clone();
            decisions.push(d);
            let is_gold = item.is_gold && gold.is_some_and(|g| g.get(step) == Some(&d));
            candidates.push(BeamItem {
                state: sys.apply(&item.state, d, input)?,
                decisions,
                raw_score: item.raw_score + scores[d],
                local_logp: item.local_logp + scores[d] - log_zl,
                is_gold,
            });
        }
    }
    Ok(candidates)
}

fn start_item<S: Scorer>(scorer: &S, input: &Input, gold_tracking: bool) -> Result<BeamItem> {
    Ok(BeamItem {
        state: scorer.system().start_state(input)?,
        decisions: vec![],
        raw_score: 0.0,
        local_logp: 0.0,
        is_gold: gold_tracking,
    })
}

/// Standard beam search: expand every item by every allowed decision,
/// keep the top `B` by the mode's additive score. Deterministic:
/// ties break toward the lexicographically smaller decision sequence.
pub fn beam_search<S: Scorer>(
    scorer: &S,
    input: &Input,
    beam_size: usize,
    mode: ScoreMode,
) -> Result<Beam> {
    assert!(beam_size >= 1);
    let n = scorer.system().n_of(input);
    let mut items = vec![start_item(scorer, input, false)?];
    for step in 0..n {
        let mut candidates = expand(scorer, input, &items, None, step)?;
        sort_items(&mut candidates, mode);
        candidates.truncate(beam_size);
        items = candidates;
    }
    Ok(Beam {
        items,
        step: n,
        mode,
    })
}

/// Result of beam search with gold tracking. On fallout at step `j`,
/// `beam` holds the `B` kept items at step `j` and `gold` the gold
/// prefix `d*_{1:j}` (together they form the update set; the gold item
/// is appended, never duplicated). If gold survives, `beam` is the
/// final beam with the gold item inside, flagged.
#[derive(Debug, Clone)]
pub struct TrackedBeam {
    pub beam: Beam,
    pub gold: BeamItem,
    pub fallout_step: Option<usize>,
}

impl TrackedBeam {
    /// The update set B_j: kept beam items plus the gold prefix,
    /// containing the gold path exactly once.
    pub fn update_set(&self) -> Vec<&BeamItem> {
        let mut set: Vec<&BeamItem> = self.beam.items.iter().collect();
        if self.fallout_step.is_some() {
            set.push(&self.gold);
        }
        set
    }
}

/// Beam search that tracks the gold path, stopping at the first step
/// where the gold prefix is pruned (early update).
pub fn beam_search_tracking<S: Scorer>(
    scorer: &S,
    input: &Input,
    beam_size: usize,
    mode: ScoreMode,
    gold: &[usize],
) -> Result<TrackedBeam> {
    assert!(beam_size >= 1);
    let sys = scorer.system();
    let n = sys.n_of(input);
    if gold.len() != n {
        return Err(Error::IncompleteSequence {
            got: gold.len(),
            expected: n,
        });
    }
    let mut items = vec![start_item(scorer, input, true)?];
    for step in 0..n {
        let mut candidates = expand(scorer, input, &items, Some(gold), step)?;
        let gold_item = candidates
            .iter()
            .find(|c| c.is_gold)
            .expect("gold extension must exist while gold is in the beam")
            .clone();
        sort_items(&mut candidates, mode);
        candidates.truncate(beam_size);
        if !candidates.iter().any(|c| c.is_gold) {
            return Ok(TrackedBeam {
                beam: Beam {
                    items: candidates,
                    step: step + 1,
                    mode,
                },
                gold: gold_item,
                fallout_step: Some(step + 1),
            });
        }
        items = candidates;
    }
    let gold_item = items.iter().find(|c| c.is_gold).unwrap().clone();
    Ok(TrackedBeam {
        beam: Beam {
            items,
            step: n,
            mode,
        },
        gold: gold_item,
        fallout_step: None,
    })
}

/// Whether the gold prefix is still in the beam, and the step at which
/// it fell out if not.
pub fn track_gold(tracked: &TrackedBeam) -> (bool, Option<usize>) {
    (tracked.fallout_step.is_none(), tracked.fallout_step)
}

/// Greedy decoding: per-step argmax of the local conditional. Equal to
/// beam search with B = 1 in local mode. Ties break toward the lowest
/// decision id.
pub fn greedy_decode<S: Scorer>(scorer: &S, input: &Input) -> Result<ScoredSequence> {
    let beam = beam_search(scorer, input, 1, ScoreMode::Local)?;
    let item = &beam.items[0];
    sequence_from_item(scorer, input, item)
}

/// Decode with a beam and return the top hypothesis as a fully scored
/// sequence.
pub fn decode<S: Scorer>(
    scorer: &S,
    input: &Input,
    beam_size: usize,
    mode: ScoreMode,
) -> Result<ScoredSequence> {
    let beam = beam_search(scorer, input, beam_size, mode)?;
    sequence_from_item(scorer, input, &beam.items[0])
}

fn sequence_from_item<S: Scorer>(
    scorer: &S,
    input: &Input,
    item: &BeamItem,
) -> Result<ScoredSequence> {
    // Recompute per-step Z_L values along the chosen path.
    let sys = scorer.system();
    let mut state = sys.start_state(input)?;
    let mut step_log_zl = vec![];
    for &d in &item.decisions {
        let allowed = sys.allowed(&state, input);
        let scores = scorer.score(&state, input)?;
        step_log_zl.push(log_sum_exp(
            &allowed.iter().map(|&a| scores[a]).collect::<Vec<_>>(),
        ));
        state = sys.apply(&state, d, input)?;
    }
    Ok(ScoredSequence {
        decisions: item.decisions.clone(),
        raw_score: item.raw_score,
        local_logp: item.local_logp,
        step_log_zl,
        log_zg: None,
        global_logp: None,
    })
}

/// Enumerate every valid complete decision sequence, score it, and
/// compute the exact global partition value ln Z_G. Refuses when the
/// number of sequences exceeds `cap`.
pub fn enumerate_all<S: Scorer>(
    scorer: &S,
    input: &Input,
    cap: u64,
) -> Result<(Vec<ScoredSequence>, f64)> {
    let sys = scorer.system();
    let n = sys.n_of(input);
    let mut out: Vec<ScoredSequence> = vec![];
    let mut count: u64 = 0;

    struct Frame {
        state: State,
        decisions: Vec<usize>,
        raw: f64,
        logp: f64,
        log_zls: Vec<f64>,
    }
    let mut stack = vec![Frame {
        state: sys.start_state(input)?,
        decisions: vec![],
        raw: 0.0,
        logp: 0.0,
        log_zls: vec![],
    }];
    while let Some(frame) = stack.pop() {
        if frame.decisions.len() == n {
            count += 1;
            if count > cap {
                return Err(Error::EnumerationCap { count, cap });
            }
            out.push(ScoredSequence {
                decisions: frame.decisions,
                raw_score: frame.raw,
                local_logp: frame.logp,
                step_log_zl: frame.log_zls,
                log_zg: None,
                global_logp: None,
            });
            continue;
        }
        let allowed = sys.allowed(&frame.state, input);
        let scores = scorer.score(&frame.state, input)?;
        let log_zl = log_sum_exp(&allowed.iter().map(|&d| scores[d]).collect::<Vec<_>>());
        // Push in reverse so lexicographically smaller sequences pop first.
        for &d in allowed.iter().rev() {
            let mut decisions = frame.decisions.clone();
            decisions.push(d);
            let mut log_zls = frame.log_zls.clone();
            log_zls.push(log_zl);
            stack.push(Frame {
                state: sys.apply(&frame.state, d, input)?,
                decisions,
                raw: frame.raw + scores[d],
                logp: frame.logp + scores[d] - log_zl,
                log_zls,
            });
        }
    }
    let log_zg = log_sum_exp(&out.iter().map(|s| s.raw_score).collect::<Vec<_>>());
    for s in &mut out {
        s.log_zg = Some(log_zg);
        s.global_logp = Some(s.raw_score - log_zg);
    }
    Ok((out, log_zg))
}
