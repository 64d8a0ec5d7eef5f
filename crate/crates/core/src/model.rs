//! A trained model: transition system, feature template with
//! vocabularies, and raw plus averaged parameters.

use ndarray::Array1;

use crate::error::Result;
use crate::features::{self, FeatureTemplate};
use crate::input::Input;
use crate::network::{self, ForwardCache, Params};
use crate::transition::{State, TransitionSystem};

/// Anything that can score every decision in a state. Scores over the
/// full decision vocabulary; disallowed decisions are masked by the
/// caller.
pub trait Scorer {
    fn system(&self) -> &TransitionSystem;
    fn score(&self, state: &State, input: &Input) -> Result<Array1<f64>>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMeta {
    pub config_text: String,
    pub seed: u64,
    pub epochs: u32,
}


#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub system: TransitionSystem,
    pub template: FeatureTemplate,
    /// Raw parameters, updated by training steps.
    pub params: Params,
    /// Running average of raw parameters; used for evaluation decodes.
    pub averaged: Params,
    pub meta: ModelMeta,
}

impl Model {
    pub fn new(system: TransitionSystem, template: FeatureTemplate, params: Params) -> Model {
        let averaged = params.clone();
        Model {
            system,
            template,
            params,
            averaged,
            meta: ModelMeta::default(),
        }
    }

    pub fn forward_state(
        &self,
        state: &State,
        input: &Input,
        averaged: bool,
    ) -> Result<(Array1<f64>, ForwardCache)> {
        let fv = features::extract(state, input, &self.template, &self.system)?;
        let params = if averaged { &self.averaged } else { &self.params };
        network::forward(&fv, params)
    }

    /// Scorer over raw parameters (training-time view).
    pub fn raw_scorer(&self) -> ModelScorer<'_> {
        ModelScorer {
            model: self,
            averaged: false,
        }
    }

    /// Scorer over averaged parameters (evaluation-time view).
    pub fn averaged_scorer(&self) -> ModelScorer<'_> {
        ModelScorer {
            model: self,
            averaged: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelScorer<'a> {
    model: &'a Model,
    averaged: bool,
}

impl Scorer for ModelScorer<'_> {
    fn system(&self) -> &TransitionSystem {
        &self.model.system
    }

    fn score(&self, state: &State, input: &Input) -> Result<Array1<f64>> {
        let (scores, _) = self.model.forward_state(state, input, self.averaged)?;
        Ok(scores)
    }
}
