//! Executable demonstration that globally normalized models are
//! strictly more expressive than locally normalized ones.
//!
//! One direction embeds any local model as a global one with scores
//! `ln p_L`; the other exhibits a single-scalar global model on an
//! ambiguous two-sentence dataset whose gold probabilities sum above
//! 1, which no local model restricted to prefix lookahead can match
//! (the sum of its two gold probabilities is bounded by 1).

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inference::log_sum_exp;

/// The toy globally normalized model: a single scalar `alpha`, a set
/// of licensed tag bigrams, and a set of licensed (word, tag) pairs.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub alpha: f64,
    pub transitions: BTreeSet<(String, String)>,
    pub emissions: BTreeSet<(String, String)>,
    pub tags: Vec<String>,
    pub words: Vec<String>,
}

/// A list of (sentence, gold tags) pairs of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyDataset {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
}

/// The ambiguous two-sentence family: `a b^{k+1} c` tagged
/// `A B^{k+1} C` and `a b^{k+1} e` tagged `A D^{k+1} E`. With `k = 0`
/// this is exactly the classic pair; the middle `b` duplicated `k+1`
/// times defeats any local model with lookahead `< k+1`.
pub fn lookahead_family(k: usize) -> ToyDataset {
    let mut w1 = vec!["a".to_string()];
    let mut t1 = vec!["A".to_string()];
    let mut w2 = w1.clone();
    let mut t2 = t1.clone();
    for _ in 0..=k {
        w1.push("b".into());
        t1.push("B".into());
        w2.push("b".into());
        t2.push("D".into());
    }
    w1.push("c".into());
    t1.push("C".into());
    w2.push("e".into());
    t2.push("E".into());
    ToyDataset {
        pairs: vec![(w1, t1), (w2, t2)],
    }
}

impl ToyModel {
    /// The classic construction over the `k = 0` family.
    pub fn classic(alpha: f64) -> ToyModel {
        ToyModel::from_dataset(alpha, &lookahead_family(0))
    }

    /// Build the licensed transition and emission sets from the gold
    /// pairs of a dataset; tag and word vocabularies are the minimal
    /// closed sets over the data.
    pub fn from_dataset(alpha: f64, data: &ToyDataset) -> ToyModel {
        let mut transitions = BTreeSet::new();
        let mut emissions = BTreeSet::new();
        let mut tags = vec![];
        let mut words = vec![];
        for (ws, ts) in &data.pairs {
            for i in 0..ws.len() {
                if !words.contains(&ws[i]) {
                    words.push(ws[i].clone());
                }
                if !tags.contains(&ts[i]) {
                    tags.push(ts[i].clone());
                }
                emissions.insert((ws[i].clone(), ts[i].clone()));
                if i > 0 {
                    transitions.insert((ts[i - 1].clone(), ts[i].clone()));
                }
            }
        }
        tags.sort();
        words.sort();
        ToyModel {
            alpha,
            transitions,
            emissions,
            tags,
            words,
        }
    }

    /// Score of tagging word `i` (0-based) with `tag` after `prev`.
    /// The transition indicator is defined as 0 at the first position.
    pub fn score(&self, word: &str, prev_tag: Option<&str>, tag: &str) -> f64 {
        let trans = match prev_tag {
            Some(p) => self
                .transitions
                .contains(&(p.to_string(), tag.to_string())) as u8 as f64,
            None => 0.0,
        };
        let emit = self
            .emissions
            .contains(&(word.to_string(), tag.to_string())) as u8 as f64;
        self.alpha * trans + self.alpha * emit
    }
}

/// An exact distribution over all tag sequences of one length.
#[derive(Debug, Clone)]
pub struct ToyDistribution {
    pub tags: Vec<String>,
    pub sequences: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    pub log_zg: f64,
}

impl ToyDistribution {
    pub fn prob_of(&self, tag_names: &[&str]) -> f64 {
        let want: Vec<usize> = tag_names
            .iter()
            .map(|t| self.tags.iter().position(|x| x == t).unwrap_or(usize::MAX))
            .collect();
        self.sequences
            .iter()
            .zip(&self.probs)
            .find(|(s, _)| **s == want)
            .map(|(_, &p)| p)
            .unwrap_or(0.0)
    }
}

const ENUM_CAP: u64 = 1_000_000;

fn enumerate_sequences(num_tags: usize, len: usize) -> Result<Vec<Vec<usize>>> {
    let count = (num_tags as u64).checked_pow(len as u32);
    match count {
        Some(c) if c <= ENUM_CAP => {}
        _ => {
            return Err(Error::EnumerationCap {
                count: count.unwrap_or(u64::MAX),
                cap: ENUM_CAP,
            })
        }
    }
    let mut out = vec![vec![]];
    for _ in 0..len {
        let mut next = Vec::with_capacity(out.len() * num_tags);
        for seq in &out {
            for t in 0..num_tags {
                let mut s = seq.clone();
                s.push(t);
                next.push(s);
            }
        }
        out = next;
    }
    Ok(out)
}

/// Exact globally normalized distribution of the toy model over all
/// tag sequences for `x`, by enumeration.
pub fn toy_global_distribution(model: &ToyModel, x: &[String]) -> Result<ToyDistribution> {
    let sequences = enumerate_sequences(model.tags.len(), x.len())?;
    let scores: Vec<f64> = sequences
        .iter()
        .map(|seq| {
            let mut total = 0.0;
            for i in 0..seq.len() {
                let prev = if i > 0 {
                    Some(model.tags[seq[i - 1]].as_str())
                } else {
                    None
                };
                total += model.score(&x[i], prev, &model.tags[seq[i]]);
            }
            total
        })
        .collect();
    let log_zg = log_sum_exp(&scores);
    let probs = scores.iter().map(|s| (s - log_zg).exp()).collect();
    Ok(ToyDistribution {
        tags: model.tags.clone(),
        sequences,
        probs,
        log_zg,
    })
}

/// A locally normalized model over a fixed tag vocabulary: a per-step
/// conditional distribution given the full input and the tag prefix.
/// Honest implementations read only `x[..=i]`; the audit probes for
/// violations by mutating tokens beyond `i`.
pub trait LocalModel {
    fn tags(&self) -> &[String];
    /// Conditional distribution over tags for position `i`.
    fn conditional(&self, x: &[String], i: usize, prefix: &[usize]) -> Vec<f64>;
}

/// Seeded random local model: the conditional is a deterministic
/// function of (x_{1:i}, prefix) drawn from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomLocalModel {
    pub seed: u64,
    pub tags: Vec<String>,
}

impl RandomLocalModel {
    pub fn new(seed: u64, tags: Vec<String>) -> Self {
        RandomLocalModel { seed, tags }
    }
}

impl LocalModel for RandomLocalModel {
    fn tags(&self) -> &[String] {
        &self.tags
    }

    fn conditional(&self, x: &[String], i: usize, prefix: &[usize]) -> Vec<f64> {
        let mut hasher = DefaultHasher::new();
        self.seed.hash(&mut hasher);
        x[..=i].hash(&mut hasher);
        prefix.hash(&mut hasher);
        let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
        let weights: Vec<f64> = (0..self.tags.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }
}

/// Chain-rule probability of a full tag sequence under a local model.
pub fn local_sequence_prob<M: LocalModel>(model: &M, x: &[String], tags: &[&str]) -> f64 {
    let mut prefix = vec![];
    let mut p = 1.0;
    for (i, t) in tags.iter().enumerate() {
        let ti = model
            .tags()
            .iter()
            .position(|m| m == t)
            .expect("tag in vocabulary");
        p *= model.conditional(x, i, &prefix)[ti];
        prefix.push(ti);
    }
    p
}

/// Verify that a local model's conditionals depend only on the prefix
/// of the input: mutate every token beyond `i` and require identical
/// distributions.
pub fn check_prefix_restriction<M: LocalModel>(model: &M, x: &[String], words: &[String]) -> Result<()> {
    for i in 0..x.len() {
        let base = model.conditional(x, i, &[]);
        for j in i + 1..x.len() {
            for w in words {
                if *w == x[j] {
                    continue;
                }
                let mut mutated = x.to_vec();
                mutated[j] = w.clone();
                if model.conditional(&mutated, i, &[]) != base {
                    return Err(Error::LookaheadViolation);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub trials: usize,
    /// Max over audited models of p_L(gold1|x1) + p_L(gold2|x2).
    pub max_sum: f64,
}

/// Audit the local bound on the `k = 0` family (or any two-sentence
/// dataset): for every sampled local model the two gold-sequence
/// probabilities are computed exactly and their sum checked against 1.
pub fn local_bound_audit<M, F>(
    data: &ToyDataset,
    trials: usize,
    mut make_model: F,
) -> Result<AuditReport>
where
    M: LocalModel,
    F: FnMut(u64) -> M,
{
    assert_eq!(data.pairs.len(), 2);
    let words: Vec<String> = {
        let mut ws: Vec<String> = data
            .pairs
            .iter()
            .flat_map(|(w, _)| w.iter().cloned())
            .collect();
        ws.sort();
        ws.dedup();
        ws
    };
    let mut max_sum = 0.0f64;
    for t in 0..trials {
        let model = make_model(t as u64);
        for (x, _) in &data.pairs {
            check_prefix_restriction(&model, x, &words)?;
        }
        let mut sum = 0.0;
        for (x, gold) in &data.pairs {
            let gold_refs: Vec<&str> = gold.iter().map(|s| s.as_str()).collect();
            sum += local_sequence_prob(&model, x, &gold_refs);
        }
        if sum > 1.0 + 1e-9 {
            return Err(Error::InvalidGold(format!(
                "local bound violated: sum = {sum}"
            )));
        }
        max_sum = max_sum.max(sum);
    }
    Ok(AuditReport { trials, max_sum })
}

/// Embed a local model as a global one with scores `ln p_L`,
/// flooring zero probabilities. The resulting global distribution
/// equals the local one on every complete sequence.
#[derive(Debug, Clone)]
pub struct EmbeddedGlobal<'a, M: LocalModel> {
    pub local: &'a M,
    pub floor: f64,
}

impl<'a, M: LocalModel> EmbeddedGlobal<'a, M> {
    pub fn new(local: &'a M, floor: f64) -> Self {
        EmbeddedGlobal { local, floor }
    }

    pub fn score(&self, x: &[String], i: usize, prefix: &[usize], tag: usize) -> Result<f64> {
        let p = self.local.conditional(x, i, prefix)[tag];
        if p <= 0.0 && self.floor <= 0.0 {
            return Err(Error::ZeroProbability);
        }
        Ok(p.max(self.floor).ln())
    }

    /// Exact global distribution of the embedded scores over all tag
    /// sequences, by enumeration.
    pub fn global_distribution(&self, x: &[String]) -> Result<ToyDistribution> {
        let tags = self.local.tags().to_vec();
        let sequences = enumerate_sequences(tags.len(), x.len())?;
        let mut scores = Vec::with_capacity(sequences.len());
        for seq in &sequences {
            let mut total = 0.0;
            for (i, &t) in seq.iter().enumerate() {
                total += self.score(x, i, &seq[..i], t)?;
            }
            scores.push(total);
        }
        let log_zg = log_sum_exp(&scores);
        let probs = scores.iter().map(|s| (s - log_zg).exp()).collect();
        Ok(ToyDistribution {
            tags,
            sequences,
            probs,
            log_zg,
        })
    }

    /// Max |p_G - p_L| over all sequences of length `x.len()`.
    pub fn max_divergence(&self, x: &[String]) -> Result<f64> {
        let dist = self.global_distribution(x)?;
        let mut max_diff = 0.0f64;
        for (seq, &pg) in dist.sequences.iter().zip(&dist.probs) {
            let names: Vec<&str> = seq.iter().map(|&t| dist.tags[t].as_str()).collect();
            let pl = local_sequence_prob(self.local, x, &names);
            max_diff = max_diff.max((pg - pl).abs());
        }
        Ok(max_diff)
    }
}

/// One row of the alpha-sweep table.
#[derive(Debug, Clone)]
pub struct AlphaRow {
    pub alpha: f64,
    pub p_first: f64,
    pub p_second: f64,
    pub sum: f64,
}

/// Sweep alpha over the `k`-family and report both gold probabilities
/// under the toy global model.
pub fn alpha_sweep(alphas: &[f64], k: usize) -> Result<Vec<AlphaRow>> {
    let data = lookahead_family(k);
    let mut rows = vec![];
    for &alpha in alphas {
        let model = ToyModel::from_dataset(alpha, &data);
        let mut ps = vec![];
        for (x, gold) in &data.pairs {
            let dist = toy_global_distribution(&model, x)?;
            let names: Vec<&str> = gold.iter().map(|s| s.as_str()).collect();
            ps.push(dist.prob_of(&names));
        }
        rows.push(AlphaRow {
            alpha,
            p_first: ps[0],
            p_second: ps[1],
            sum: ps[0] + ps[1],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn family_k0_is_the_classic_pair() {
        let d = lookahead_family(0);
        assert_eq!(d.pairs[0].0, strs(&["a", "b", "c"]));
        assert_eq!(d.pairs[0].1, strs(&["A", "B", "C"]));
        assert_eq!(d.pairs[1].0, strs(&["a", "b", "e"]));
        assert_eq!(d.pairs[1].1, strs(&["A", "D", "E"]));
    }

    #[test]
    fn family_k2_duplicates_middle() {
        let d = lookahead_family(2);
        assert_eq!(d.pairs[0].0, strs(&["a", "b", "b", "b", "c"]));
        assert_eq!(d.pairs[0].0.len(), 5);
        assert_eq!(d.pairs[0].0.len(), d.pairs[1].0.len());
    }

    #[test]
    fn classic_sets_match_the_construction() {
        let m = ToyModel::classic(1.0);
        let t: Vec<(String, String)> = m.transitions.iter().cloned().collect();
        assert_eq!(t.len(), 4);
        assert!(m.transitions.contains(&("A".into(), "B".into())));
        assert!(m.transitions.contains(&("B".into(), "C".into())));
        assert!(m.transitions.contains(&("A".into(), "D".into())));
        assert!(m.transitions.contains(&("D".into(), "E".into())));
        assert_eq!(m.emissions.len(), 5);
        assert_eq!(m.tags, strs(&["A", "B", "C", "D", "E"]));
        assert_eq!(m.words, strs(&["a", "b", "c", "e"]));
    }

    #[test]
    fn toy_scores_by_hand() {
        let m = ToyModel::classic(1.0);
        // First position: transition indicator is 0, (a, A) emits.
        assert_eq!(m.score("a", None, "A"), 1.0);
        // (A, B) transition and (b, B) emission both fire.
        assert_eq!(m.score("b", Some("A"), "B"), 2.0);
        // Neither indicator fires.
        assert_eq!(m.score("b", Some("A"), "C"), 0.0);
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let m = ToyModel::classic(0.0);
        let x = strs(&["a", "b", "c"]);
        let d = toy_global_distribution(&m, &x).unwrap();
        assert_eq!(d.sequences.len(), 125);
        for &p in &d.probs {
            assert!((p - 1.0 / 125.0).abs() < 1e-12);
        }
        let total: f64 = d.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gold_score_counts_five_indicators() {
        let m = ToyModel::classic(1.0);
        let x = strs(&["a", "b", "c"]);
        let score: f64 = [
            m.score("a", None, "A"),
            m.score("b", Some("A"), "B"),
            m.score("c", Some("B"), "C"),
        ]
        .iter()
        .sum();
        assert_eq!(score, 5.0);
        let _ = x;
    }

    #[test]
    fn sharpening_is_monotone_and_exceeds_one() {
        let rows = alpha_sweep(&[0.0, 1.0, 2.0, 5.0, 10.0, 20.0], 0).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].p_first >= w[0].p_first - 1e-12);
            assert!(w[1].p_second >= w[0].p_second - 1e-12);
        }
        let last = rows.last().unwrap();
        assert!(last.p_first > 0.999);
        assert!(last.p_second > 0.999);
        assert!(last.sum > 1.99);
    }

    #[test]
    fn random_local_models_respect_the_bound() {
        let data = lookahead_family(0);
        let tags = strs(&["A", "B", "C", "D", "E"]);
        let report = local_bound_audit(&data, 200, |seed| {
            RandomLocalModel::new(seed, tags.clone())
        })
        .unwrap();
        assert!(report.max_sum <= 1.0 + 1e-9);
    }

    #[test]
    fn optimal_split_reaches_exactly_one() {
        // A local model that is deterministic everywhere except the
        // ambiguous middle step, which it splits evenly.
        struct Split;
        impl LocalModel for Split {
            fn tags(&self) -> &[String] {
                use std::sync::OnceLock;
                static TAGS: OnceLock<Vec<String>> = OnceLock::new();
                TAGS.get_or_init(|| strs(&["A", "B", "C", "D", "E"]))
            }
            fn conditional(&self, x: &[String], i: usize, prefix: &[usize]) -> Vec<f64> {
                let mut p = vec![0.0; 5];
                match i {
                    0 => p[0] = 1.0,                       // A
                    1 => {
                        p[1] = 0.5;                        // B
                        p[3] = 0.5;                        // D
                    }
                    _ => {
                        // Disambiguated by the visible suffix symbol.
                        if x[i] == "c" {
                            p[2] = 1.0;                    // C
                        } else {
                            p[4] = 1.0;                    // E
                        }
                    }
                }
                let _ = prefix;
                p
            }
        }
        let data = lookahead_family(0);
        let mut sum = 0.0;
        for (x, gold) in &data.pairs {
            let names: Vec<&str> = gold.iter().map(|s| s.as_str()).collect();
            sum += local_sequence_prob(&Split, x, &names);
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cheating_generator_is_rejected() {
        // Reads one token of lookahead: distribution at step i depends
        // on x[i+1] when present.
        struct Cheater;
        impl LocalModel for Cheater {
            fn tags(&self) -> &[String] {
                use std::sync::OnceLock;
                static TAGS: OnceLock<Vec<String>> = OnceLock::new();
                TAGS.get_or_init(|| strs(&["A", "B"]))
            }
            fn conditional(&self, x: &[String], i: usize, _prefix: &[usize]) -> Vec<f64> {
                if x.get(i + 1).map(|w| w == "c").unwrap_or(false) {
                    vec![0.9, 0.1]
                } else {
                    vec![0.5, 0.5]
                }
            }
        }
        let data = lookahead_family(0);
        let r = local_bound_audit(&data, 1, |_| Cheater);
        assert!(matches!(r, Err(Error::LookaheadViolation)));
    }

    #[test]
    fn embedding_reproduces_local_distribution() {
        let tags = strs(&["A", "B", "C", "D", "E"]);
        let x = strs(&["a", "b", "c"]);
        for seed in 0..20 {
            let local = RandomLocalModel::new(seed, tags.clone());
            let emb = EmbeddedGlobal::new(&local, 0.0);
            assert!(emb.max_divergence(&x).unwrap() < 1e-9);
        }
    }

    #[test]
    fn uniform_local_embeds_to_uniform_global() {
        struct Uniform(Vec<String>);
        impl LocalModel for Uniform {
            fn tags(&self) -> &[String] {
                &self.0
            }
            fn conditional(&self, _x: &[String], _i: usize, _p: &[usize]) -> Vec<f64> {
                vec![1.0 / self.0.len() as f64; self.0.len()]
            }
        }
        let local = Uniform(strs(&["A", "B", "C"]));
        let emb = EmbeddedGlobal::new(&local, 0.0);
        let d = emb.global_distribution(&strs(&["a", "b"])).unwrap();
        for &p in &d.probs {
            assert!((p - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_local_model_needs_a_floor() {
        struct Hard(Vec<String>);
        impl LocalModel for Hard {
            fn tags(&self) -> &[String] {
                &self.0
            }
            fn conditional(&self, _x: &[String], _i: usize, _p: &[usize]) -> Vec<f64> {
                vec![1.0, 0.0]
            }
        }
        let local = Hard(strs(&["A", "B"]));
        let x = strs(&["a", "b"]);
        let emb = EmbeddedGlobal::new(&local, 0.0);
        assert!(matches!(
            emb.max_divergence(&x),
            Err(Error::ZeroProbability)
        ));
        let emb = EmbeddedGlobal::new(&local, 1e-12);
        assert!(emb.max_divergence(&x).unwrap() < 1e-6);
    }
}
