//! Shared fixtures for the benchmarks: a randomly initialized tagging
//! model over a seeded synthetic corpus.

use gntp_core::corpus::{generate, GeneratorSpec};
use gntp_core::features::simple_tagging_template;
use gntp_core::network::{Activation, Params};
use gntp_core::transition::TransitionSystem;
use gntp_core::{Input, Model};

pub fn tagging_fixture(sentences: usize, vocab: usize, tags: usize) -> (Model, Vec<Input>) {
    let spec = GeneratorSpec::SeparableTagging {
        sentences,
        vocab,
        tags,
        max_len: 12,
        seed: 7,
    };
    let corpus = generate(&spec).expect("generator");
    let tag_names: Vec<String> = (0..tags).map(|t| format!("t{t}")).collect();
    let sys = TransitionSystem::tagging(tag_names);
    let mut template = simple_tagging_template(2, 4, 16);
    template.build_vocabs(&sys, &corpus.sentences);
    let params = Params::init(&template, &[64], sys.vocab().len(), Activation::Relu, 42);
    let inputs: Vec<Input> = corpus.sentences.into_iter().map(|(x, _)| x).collect();
    (Model::new(sys, template, params), inputs)
}
