//! Training: local negative log-likelihood, globally normalized beam
//! training with early updates, the hinge-loss alternative, averaged
//! SGD with momentum, and the two-stage pipeline.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inference::{
    beam_search_tracking, decode, log_sum_exp, ScoreMode, TrackedBeam,
};
use crate::input::Input;
use crate::model::Model;
use crate::network::{self, Gradients, Params, TrainableSet};
use crate::tasks::{reconstruct, unroll_gold, EvalConfig, Evaluator, GoldAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    LocalPretrain,
    Global,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::LocalPretrain => "local",
            Stage::Global => "global",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Crf,
    Hinge,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage: Stage,
    pub beam_size: usize,
    pub subset: TrainableSet,
    pub loss: LossKind,
    /// Exponential decay schedule: eta_t = eta0 * gamma^(t / decay_steps).
    pub eta0: f64,
    pub gamma: f64,
    pub decay_steps: f64,
    pub momentum: f64,
    pub patience: usize,
    pub seed: u64,
    pub epochs: usize,
    pub margin: f64,
    /// Max gradient L2 norm per example; 0 disables clipping.
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::LocalPretrain,
            beam_size: 1,
            subset: TrainableSet::Full,
            loss: LossKind::Crf,
            eta0: 0.01,
            gamma: 0.96,
            decay_steps: 4000.0,
            momentum: 0.9,
            patience: 10,
            seed: 1,
            epochs: 20,
            margin: 1.0,
            clip: 5.0,
        }
    }
}

/// Momentum velocity plus the running parameter average.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: Params,
    pub average: Params,
    pub steps: u64,
    pub eta0: f64,
    pub gamma: f64,
    pub decay_steps: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(params: &Params, cfg: &TrainConfig) -> OptimizerState {
        OptimizerState {
            velocity: params.zeros_like(),
            average: params.clone(),
            steps: 0,
            eta0: cfg.eta0,
            gamma: cfg.gamma,
            decay_steps: cfg.decay_steps,
            momentum: cfg.momentum,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.eta0 * self.gamma.powf(self.steps as f64 / self.decay_steps)
    }
}

/// One averaged-SGD-with-momentum step:
/// `v <- mu v - eta g; theta <- theta + v; avg <- avg + (theta - avg)/t`.
pub fn sgd_step(params: &mut Params, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    let eta = opt.learning_rate();
    opt.velocity.scale(opt.momentum);
    opt.velocity.axpy(-eta, grads);
    params.axpy(1.0, &opt.velocity);
    params.step_tag += 1;
    opt.steps += 1;
    // Running average over iterates, from step 1.
    let mut delta = params.clone();
    delta.axpy(-1.0, &opt.average);
    opt.average.axpy(1.0 / opt.steps as f64, &delta);
    Ok(())
}

/// Local NLL (per-step softmax) loss and its exact gradient through
/// every layer: `-sum_j rho(gold_j) + sum_j ln Z_L(gold prefix)`.
pub fn local_loss_and_grad(
    model: &Model,
    input: &Input,
    gold: &[usize],
) -> Result<(f64, Gradients)> {
    let sys = &model.system;
    let mut state = sys.start_state(input)?;
    let mut loss = 0.0;
    let mut grads = model.params.zeros_like();
    for &d in gold {
        let allowed = sys.allowed(&state, input);
        let (scores, cache) = model.forward_state(&state, input, false)?;
        let log_zl = log_sum_exp(&allowed.iter().map(|&a| scores[a]).collect::<Vec<_>>());
        loss += log_zl - scores[d];
        let mut upstream = Array1::zeros(scores.len());
        for &a in &allowed {
            upstream[a] = (scores[a] - log_zl).exp();
        }
        upstream[d] -= 1.0;
        network::backward_into(&cache, &upstream, &model.params, &mut grads);
        state = sys.apply(&state, d, input)?;
    }
    Ok((loss, grads))
}

/// Accumulate gradients of a weighted sum of path raw scores: each
/// entry maps a decision prefix to (weight applied at each of its
/// steps). Shared prefixes are scored once.
fn accumulate_path_gradients(
    model: &Model,
    input: &Input,
    weighted_paths: &[(&[usize], f64)],
    grads: &mut Gradients,
) -> Result<()> {
    // upstream[prefix][d] = total weight of paths taking d after prefix.
    let mut upstream: HashMap<Vec<usize>, Array1<f64>> = HashMap::new();
    let n_decisions = model.params.num_decisions();
    for (path, w) in weighted_paths {
        for i in 0..path.len() {
            let u = upstream
                .entry(path[..i].to_vec())
                .or_insert_with(|| Array1::zeros(n_decisions));
            u[path[i]] += w;
        }
    }
    let sys = &model.system;
    // Deterministic iteration order.
    let mut keys: Vec<Vec<usize>> = upstream.keys().cloned().collect();
    keys.sort();
    for key in keys {
        let state = sys.replay(input, &key)?;
        let (_, cache) = model.forward_state(&state, input, false)?;
        network::backward_into(&cache, &upstream[&key], &model.params, grads);
    }
    Ok(())
}

/// Globally normalized beam loss with early update. Decodes with a
/// global-mode beam while tracking the gold path; the update set is
/// the kept beam at the stopping step plus the gold prefix (appended
/// only when gold fell out). The beam composition is treated as fixed:
/// no gradient flows through the pruning.
pub fn global_beam_loss_and_grad(
    model: &Model,
    input: &Input,
    gold: &[usize],
    beam_size: usize,
) -> Result<(f64, Gradients, Option<usize>)> {
    let tracked = beam_search_tracking(
        &model.raw_scorer(),
        input,
        beam_size,
        ScoreMode::Global,
        gold,
    )?;
    let (loss, grads) = global_loss_frozen(model, input, &tracked)?;
    Ok((loss, grads, tracked.fallout_step))
}

/// Loss and gradient over an already-computed (frozen) update set.
pub fn global_loss_frozen(
    model: &Model,
    input: &Input,
    tracked: &TrackedBeam,
) -> Result<(f64, Gradients)> {
    let set = tracked.update_set();
    let raws: Vec<f64> = set.iter().map(|i| i.raw_score).collect();
    let log_z = log_sum_exp(&raws);
    let loss = log_z - tracked.gold.raw_score;
    let mut weighted: Vec<(&[usize], f64)> = set
        .iter()
        .map(|item| {
            (
                item.decisions.as_slice(),
                (item.raw_score - log_z).exp(),
            )
        })
        .collect();
    weighted.push((tracked.gold.decisions.as_slice(), -1.0));
    let mut grads = model.params.zeros_like();
    accumulate_path_gradients(model, input, &weighted, &mut grads)?;
    Ok((loss, grads))
}

/// Perceptron-like hinge loss between the gold prefix and the best
/// non-gold element of the beam at the early-update point.
pub fn hinge_loss_and_grad(
    model: &Model,
    input: &Input,
    gold: &[usize],
    beam_size: usize,
    margin: f64,
) -> Result<(f64, Gradients)> {
    let tracked = beam_search_tracking(
        &model.raw_scorer(),
        input,
        beam_size,
        ScoreMode::Global,
        gold,
    )?;
    hinge_loss_frozen(model, input, &tracked, margin)
}

/// Hinge loss over an already-computed update set.
pub fn hinge_loss_frozen(
    model: &Model,
    input: &Input,
    tracked: &TrackedBeam,
    margin: f64,
) -> Result<(f64, Gradients)> {
    let best_rival = tracked
        .update_set()
        .into_iter()
        .filter(|i| !i.is_gold)
        .max_by(|a, b| {
            a.raw_score
                .partial_cmp(&b.raw_score)
                .unwrap()
                .then_with(|| b.decisions.cmp(&a.decisions))
        })
        .cloned();
    let mut grads = model.params.zeros_like();
    let loss = match best_rival {
        None => 0.0, // beam of size 1 containing only gold
        Some(rival) => {
            let loss = (rival.raw_score + margin - tracked.gold.raw_score).max(0.0);
            if loss > 0.0 {
                let weighted: Vec<(&[usize], f64)> = vec![
                    (rival.decisions.as_slice(), 1.0),
                    (tracked.gold.decisions.as_slice(), -1.0),
                ];
                accumulate_path_gradients(model, input, &weighted, &mut grads)?;
            }
            loss
        }
    };
    Ok((loss, grads))
}

/// One line per epoch in the training log.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub mean_loss: f64,
    pub dev_metric: f64,
    /// fallout step -> count (global stage only; survivals keyed by 0).
    pub fallout: BTreeMap<usize, usize>,
}

impl TrainRecord {
    /// Plain-text schema: `epoch=<e> stage=<s> loss=<l> metric=<m>
    /// fallout=<j1>:<c1>,<j2>:<c2>,...` (fallout key 0 counts
    /// sentences where gold survived to the end).
    pub fn to_line(&self) -> String {
        let fallout = self
            .fallout
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "epoch={} stage={} loss={:.6} metric={:.4} fallout={}",
            self.epoch,
            self.stage.as_str(),
            self.mean_loss,
            self.dev_metric,
            fallout
        )
    }
}

fn unrolled_corpus(
    model: &Model,
    corpus: &[(Input, GoldAnnotation)],
) -> Vec<(Input, Vec<usize>)> {
    let mut out = vec![];
    for (input, gold) in corpus {
        match unroll_gold(&model.system, input, gold) {
            Ok(d) => out.push((input.clone(), d)),
            Err(e) => log::warn!("skipping sentence without an oracle path: {e}"),
        }
    }
    out
}

/// Evaluate a model over a corpus with the given decode settings.
pub fn evaluate_corpus(
    model: &Model,
    corpus: &[(Input, GoldAnnotation)],
    beam_size: usize,
    mode: ScoreMode,
    averaged: bool,
) -> Result<crate::tasks::Metrics> {
    let mut ev = Evaluator::new(EvalConfig::default());
    for (input, gold) in corpus {
        let seq = if averaged {
            decode(&model.averaged_scorer(), input, beam_size, mode)?
        } else {
            decode(&model.raw_scorer(), input, beam_size, mode)?
        };
        let pred = reconstruct(&model.system, input, &seq.decisions)?;
        ev.add(input, &pred, gold)?;
    }
    Ok(ev.finish())
}

/// Train one stage. For the global stage the final decision layer is
/// re-initialized first (pretraining fixes all layers except the
/// softmax layer). Early stopping restores the best dev snapshot.
pub fn train_stage(
    model: &mut Model,
    train: &[(Input, GoldAnnotation)],
    dev: &[(Input, GoldAnnotation)],
    cfg: &TrainConfig,
) -> Result<Vec<TrainRecord>> {
    if train.is_empty() {
        return Err(Error::Config("empty training corpus".into()));
    }
    if cfg.stage == Stage::LocalPretrain && cfg.loss == LossKind::Hinge {
        return Err(Error::Config(
            "local pretraining forbids beam-dependent losses".into(),
        ));
    }
    if cfg.stage == Stage::Global {
        model.params.reinit_final_layer(cfg.seed ^ 0x5eed_f00d);
    }
    let examples = unrolled_corpus(model, train);
    if examples.is_empty() {
        return Err(Error::Config(
            "no trainable sentences after oracle unrolling".into(),
        ));
    }
    let mut opt = OptimizerState::new(&model.params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let decode_mode = match cfg.stage {
        Stage::LocalPretrain => ScoreMode::Local,
        Stage::Global => ScoreMode::Global,
    };
    let mut records = vec![];
    let mut best_metric = f64::NEG_INFINITY;
    let mut best: Option<(Params, Params)> = None;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut fallout: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &order {
            let (input, gold) = &examples[i];
            let (loss, grads) = match cfg.stage {
                Stage::LocalPretrain => local_loss_and_grad(model, input, gold)?,
                Stage::Global => match cfg.loss {
                    LossKind::Crf => {
                        let (loss, grads, step) =
                            global_beam_loss_and_grad(model, input, gold, cfg.beam_size)?;
                        *fallout.entry(step.unwrap_or(0)).or_insert(0) += 1;
                        (loss, grads)
                    }
                    LossKind::Hinge => {
                        hinge_loss_and_grad(model, input, gold, cfg.beam_size, cfg.margin)?
                    }
                },
            };
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss = {loss}")));
            }
            total_loss += loss;
            let mut grads = network::restrict_trainable(grads, cfg.subset);
            if cfg.clip > 0.0 {
                clip_gradients(&mut grads, cfg.clip);
            }
            sgd_step(&mut model.params, &grads, &mut opt)?;
        }
        model.averaged = opt.average.clone();
        let dev_metric = if dev.is_empty() {
            0.0
        } else {
            evaluate_corpus(model, dev, cfg.beam_size, decode_mode, true)?.headline()
        };
        records.push(TrainRecord {
            epoch,
            stage: cfg.stage,
            mean_loss: total_loss / examples.len() as f64,
            dev_metric,
            fallout,
        });
        if dev.is_empty() {
            continue;
        }
        if dev_metric > best_metric {
            best_metric = dev_metric;
            best = Some((model.params.clone(), model.averaged.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some((params, averaged)) = best {
        model.params = params;
        model.averaged = averaged;
    }
    model.meta.epochs += records.len() as u32;
    Ok(records)
}

/// Two-stage pipeline: local pretraining followed by global training.
pub fn train_two_stage(
    model: &mut Model,
    train: &[(Input, GoldAnnotation)],
    dev: &[(Input, GoldAnnotation)],
    local_cfg: &TrainConfig,
    global_cfg: &TrainConfig,
) -> Result<Vec<TrainRecord>> {
    assert_eq!(local_cfg.stage, Stage::LocalPretrain);
    assert_eq!(global_cfg.stage, Stage::Global);
    let mut records = train_stage(model, train, dev, local_cfg)?;
    records.extend(train_stage(model, train, dev, global_cfg)?);
    Ok(records)
}

/// Scale gradients so their L2 norm over all tensors is at most
/// `max_norm`.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) {
    let norm = grads.flat().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

/// Maximum relative error between two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            // Floor the denominator above central-difference noise
            // (cancellation error is around eps/2h, i.e. ~1e-12 at
            // h=1e-4) so near-zero coordinates don't report spurious
            // relative errors.
            let denom = (a.abs() + n.abs()).max(1e-6);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub local_max_rel: f64,
    pub global_max_rel: f64,
    pub hinge_max_rel: f64,
}

impl GradCheckReport {
    pub fn overall_max(&self) -> f64 {
        self.local_max_rel
            .max(self.global_max_rel)
            .max(self.hinge_max_rel)
    }
}

fn numeric_gradient<F: FnMut(&Model) -> Result<f64>>(
    model: &Model,
    h: f64,
    mut loss_fn: F,
) -> Result<Vec<f64>> {
    let base = model.params.flat();
    let mut numeric = vec![0.0; base.len()];
    let mut probe = model.clone();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        probe.params.set_flat(&plus);
        let lp = loss_fn(&probe)?;
        let mut minus = base.clone();
        minus[i] -= h;
        probe.params.set_flat(&minus);
        let lm = loss_fn(&probe)?;
        numeric[i] = (lp - lm) / (2.0 * h);
    }
    Ok(numeric)
}

/// Compare every loss (local NLL, frozen-beam global, hinge) against
/// central finite differences on the given example.
pub fn gradient_check(
    model: &Model,
    input: &Input,
    gold: &[usize],
    beam_size: usize,
    margin: f64,
    h: f64,
) -> Result<GradCheckReport> {
    // Local NLL.
    let (_, analytic) = local_loss_and_grad(model, input, gold)?;
    let numeric = numeric_gradient(model, h, |m| {
        Ok(local_loss_and_grad(m, input, gold)?.0)
    })?;
    let local_max_rel = max_relative_error(&analytic.flat(), &numeric);

    // Global loss with frozen beam composition: the update set is
    // computed once at the base parameters, then only the path scores
    // vary under perturbation.
    let tracked = beam_search_tracking(
        &model.raw_scorer(),
        input,
        beam_size,
        ScoreMode::Global,
        gold,
    )?;
    let frozen: Vec<Vec<usize>> = tracked
        .update_set()
        .iter()
        .map(|i| i.decisions.clone())
        .collect();
    let gold_prefix = tracked.gold.decisions.clone();
    let (_, analytic) = global_loss_frozen(model, input, &tracked)?;
    let numeric = numeric_gradient(model, h, |m| {
        raw_path_logsumexp_loss(m, input, &frozen, &gold_prefix)
    })?;
    let global_max_rel = max_relative_error(&analytic.flat(), &numeric);

    // Hinge with the rival path frozen the same way.
    let (hinge_loss, analytic) = hinge_loss_frozen(model, input, &tracked, margin)?;
    let hinge_max_rel = if hinge_loss > 0.0 {
        let rival = tracked
            .update_set()
            .into_iter()
            .filter(|i| !i.is_gold)
            .max_by(|a, b| {
                a.raw_score
                    .partial_cmp(&b.raw_score)
                    .unwrap()
                    .then_with(|| b.decisions.cmp(&a.decisions))
            })
            .unwrap()
            .decisions
            .clone();
        let numeric = numeric_gradient(model, h, |m| {
            let r = raw_path_score(m, input, &rival)?;
            let g = raw_path_score(m, input, &gold_prefix)?;
            Ok(r + margin - g)
        })?;
        max_relative_error(&analytic.flat(), &numeric)
    } else {
        0.0
    };
    Ok(GradCheckReport {
        local_max_rel,
        global_max_rel,
        hinge_max_rel,
    })
}

fn raw_path_score(model: &Model, input: &Input, path: &[usize]) -> Result<f64> {
    let sys = &model.system;
    let mut state = sys.start_state(input)?;
    let mut total = 0.0;
    for &d in path {
        let (scores, _) = model.forward_state(&state, input, false)?;
        total += scores[d];
        state = sys.apply(&state, d, input)?;
    }
    Ok(total)
}

fn raw_path_logsumexp_loss(
    model: &Model,
    input: &Input,
    paths: &[Vec<usize>],
    gold: &[usize],
) -> Result<f64> {
    let raws: Vec<f64> = paths
        .iter()
        .map(|p| raw_path_score(model, input, p))
        .collect::<Result<_>>()?;
    Ok(log_sum_exp(&raws) - raw_path_score(model, input, gold)?)
}
