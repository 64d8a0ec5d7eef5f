//! Corpus reading, writing, and seeded synthetic generation.
//!
//! On-disk format: one token per line, tab-separated columns, blank
//! line between sentences. Columns by task:
//!
//! ```text
//! tagging:      index  form  tag
//! parsing:      index  form  tag  head  label
//! compression:  index  form  keep        (keep is 0 or 1)
//! ```
//!
//! Indices are 1-based; for parsing, head 0 is the root. Lines
//! starting with `#` are comments.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::input::{Input, Token};
use crate::labbias::lookahead_family;
use crate::tasks::{validate_tree, GoldAnnotation};
use crate::transition::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub kind: TaskKind,
    pub sentences: Vec<(Input, GoldAnnotation)>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::CorpusParse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn expected_columns(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Tagging => 3,
        TaskKind::Parsing => 5,
        TaskKind::Compression => 3,
    }
}

struct Block {
    forms: Vec<String>,
    tags: Vec<String>,
    heads: Vec<usize>,
    labels: Vec<String>,
    keep: Vec<bool>,
}

fn finish_block(kind: TaskKind, block: Block, path: &str, line: usize) -> Result<(Input, GoldAnnotation)> {
    let input = match kind {
        TaskKind::Parsing => Input::new(
            block
                .forms
                .iter()
                .zip(&block.tags)
                .map(|(f, t)| Token::new(f.clone()).with_attr("tag", t.clone()))
                .collect(),
        )?,
        _ => Input::from_forms(&block.forms)?,
    };
    let gold = match kind {
        TaskKind::Tagging => GoldAnnotation::Tagging { tags: block.tags },
        TaskKind::Compression => GoldAnnotation::Compression { keep: block.keep },
        TaskKind::Parsing => {
            validate_tree(&block.heads)
                .map_err(|e| parse_err(path, line, e.to_string()))?;
            GoldAnnotation::Parsing {
                heads: block.heads,
                labels: block.labels,
            }
        }
    };
    Ok((input, gold))
}

/// Parse corpus text. `path` is used only in error messages.
pub fn parse_corpus(text: &str, kind: TaskKind, path: &str) -> Result<Corpus> {
    let cols = expected_columns(kind);
    let mut sentences = vec![];
    let mut block = Block {
        forms: vec![],
        tags: vec![],
        heads: vec![],
        labels: vec![],
        keep: vec![],
    };
    let mut block_start = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim_end();
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            if !block.forms.is_empty() {
                sentences.push(finish_block(
                    kind,
                    std::mem::replace(
                        &mut block,
                        Block {
                            forms: vec![],
                            tags: vec![],
                            heads: vec![],
                            labels: vec![],
                            keep: vec![],
                        },
                    ),
                    path,
                    block_start,
                )?);
            }
            continue;
        }
        if block.forms.is_empty() {
            block_start = line;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != cols {
            return Err(parse_err(
                path,
                line,
                format!("expected {cols} tab-separated columns, got {}", fields.len()),
            ));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad token index `{}`", fields[0])))?;
        if idx != block.forms.len() + 1 {
            return Err(parse_err(
                path,
                line,
                format!("token index {idx} out of order (expected {})", block.forms.len() + 1),
            ));
        }
        block.forms.push(fields[1].to_string());
        match kind {
            TaskKind::Tagging => block.tags.push(fields[2].to_string()),
            TaskKind::Parsing => {
                block.tags.push(fields[2].to_string());
                let head: usize = fields[3].parse().map_err(|_| {
                    parse_err(path, line, format!("bad head `{}`", fields[3]))
                })?;
                block.heads.push(head);
                block.labels.push(fields[4].to_string());
            }
            TaskKind::Compression => {
                let keep = match fields[2] {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(parse_err(
                            path,
                            line,
                            format!("keep bit must be 0 or 1, got `{other}`"),
                        ))
                    }
                };
                block.keep.push(keep);
            }
        }
    }
    if !block.forms.is_empty() {
        sentences.push(finish_block(kind, block, path, block_start)?);
    }
    Ok(Corpus { kind, sentences })
}

pub fn read_corpus(path: impl AsRef<Path>, kind: TaskKind) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, kind, &path.display().to_string())
}

fn format_sentence(kind: TaskKind, input: &Input, gold: &GoldAnnotation, out: &mut String) {
    for (i, tok) in input.tokens().iter().enumerate() {
        out.push_str(&format!("{}\t{}", i + 1, tok.form));
        match (kind, gold) {
            (TaskKind::Tagging, GoldAnnotation::Tagging { tags }) => {
                out.push_str(&format!("\t{}", tags[i]));
            }
            (TaskKind::Parsing, GoldAnnotation::Parsing { heads, labels }) => {
                let tag = tok.attr("tag").unwrap_or("_");
                out.push_str(&format!("\t{tag}\t{}\t{}", heads[i], labels[i]));
            }
            (TaskKind::Compression, GoldAnnotation::Compression { keep }) => {
                out.push_str(&format!("\t{}", keep[i] as u8));
            }
            _ => unreachable!("corpus kind matches annotation kind"),
        }
        out.push('\n');
    }
    out.push('\n');
}

pub fn format_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for (input, gold) in &corpus.sentences {
        format_sentence(corpus.kind, input, gold, &mut out);
    }
    out
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_corpus(corpus))?;
    Ok(())
}

/// Write predicted structures in the same column format as a corpus.
pub fn write_predictions(
    kind: TaskKind,
    pairs: &[(Input, GoldAnnotation)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let corpus = Corpus {
        kind,
        sentences: pairs.to_vec(),
    };
    write_corpus(&corpus, path)
}

/// Seeded synthetic corpus generators.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    /// Tagging corpus where the tag is a fixed function of the word,
    /// so a purely local model can reach 100% accuracy.
    SeparableTagging {
        sentences: usize,
        vocab: usize,
        tags: usize,
        max_len: usize,
        seed: u64,
    },
    /// The ambiguous lookahead-k family. With `fillers = 0` every pair
    /// is the exact two-sentence family; with `fillers > 0` each pair
    /// gets a distinct filler-word prefix (tagged `F`), keeping the
    /// ambiguous middle identical across pairs while making pairs
    /// distinct sentences. With `calibrate` set, each block also gets
    /// two trigger sentences (`g b^{k+1} c` tagged `G D^{k+1} C` and
    /// `h b^{k+1} e` tagged `H B^{k+1} E`) so that every final-step
    /// context appears with confident gold in training; this closes
    /// the escape hatch where a locally normalized model recovers the
    /// pruned path through an unconstrained conditional at the last
    /// step.
    LookaheadFamily {
        k: usize,
        pairs: usize,
        fillers: usize,
        filler_vocab: usize,
        calibrate: bool,
        seed: u64,
    },
    /// Random projective dependency trees via recursive bracketing.
    RandomProjective {
        sentences: usize,
        vocab: usize,
        labels: usize,
        max_len: usize,
        seed: u64,
    },
}

impl GeneratorSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            GeneratorSpec::SeparableTagging { .. } | GeneratorSpec::LookaheadFamily { .. } => {
                TaskKind::Tagging
            }
            GeneratorSpec::RandomProjective { .. } => TaskKind::Parsing,
        }
    }

    /// Parse `name:key=value,...`, e.g. `separable:sentences=50,seed=7`
    /// or `lookahead:k=1,pairs=500,fillers=2`.
    pub fn parse(text: &str) -> Result<GeneratorSpec> {
        let (name, rest) = match text.split_once(':') {
            Some((n, r)) => (n, r),
            None => (text, ""),
        };
        let mut spec = match name {
            "separable" => GeneratorSpec::SeparableTagging {
                sentences: 100,
                vocab: 50,
                tags: 5,
                max_len: 8,
                seed: 1,
            },
            "lookahead" => GeneratorSpec::LookaheadFamily {
                k: 0,
                pairs: 1,
                fillers: 0,
                filler_vocab: 40,
                calibrate: false,
                seed: 1,
            },
            "projective" => GeneratorSpec::RandomProjective {
                sentences: 100,
                vocab: 50,
                labels: 4,
                max_len: 8,
                seed: 1,
            },
            other => return Err(Error::UnknownGenerator(other.to_string())),
        };
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{kv}`")))?;
            let num: u64 = value
                .parse()
                .map_err(|_| Error::Config(format!("bad numeric value `{value}` for `{key}`")))?;
            let n = num as usize;
            match (&mut spec, key) {
                (GeneratorSpec::SeparableTagging { sentences, .. }, "sentences") => *sentences = n,
                (GeneratorSpec::SeparableTagging { vocab, .. }, "vocab") => *vocab = n,
                (GeneratorSpec::SeparableTagging { tags, .. }, "tags") => *tags = n,
                (GeneratorSpec::SeparableTagging { max_len, .. }, "max_len") => *max_len = n,
                (GeneratorSpec::SeparableTagging { seed, .. }, "seed") => *seed = num,
                (GeneratorSpec::LookaheadFamily { k, .. }, "k") => *k = n,
                (GeneratorSpec::LookaheadFamily { pairs, .. }, "pairs") => *pairs = n,
                (GeneratorSpec::LookaheadFamily { fillers, .. }, "fillers") => *fillers = n,
                (GeneratorSpec::LookaheadFamily { filler_vocab, .. }, "filler_vocab") => {
                    *filler_vocab = n
                }
                (GeneratorSpec::LookaheadFamily { calibrate, .. }, "calibrate") => {
                    *calibrate = n != 0
                }
                (GeneratorSpec::LookaheadFamily { seed, .. }, "seed") => *seed = num,
                (GeneratorSpec::RandomProjective { sentences, .. }, "sentences") => *sentences = n,
                (GeneratorSpec::RandomProjective { vocab, .. }, "vocab") => *vocab = n,
                (GeneratorSpec::RandomProjective { labels, .. }, "labels") => *labels = n,
                (GeneratorSpec::RandomProjective { max_len, .. }, "max_len") => *max_len = n,
                (GeneratorSpec::RandomProjective { seed, .. }, "seed") => *seed = num,
                _ => {
                    return Err(Error::Config(format!(
                        "generator `{name}` has no parameter `{key}`"
                    )))
                }
            }
        }
        Ok(spec)
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<Corpus> {
    match *spec {
        GeneratorSpec::SeparableTagging {
            sentences,
            vocab,
            tags,
            max_len,
            seed,
        } => generate_separable(sentences, vocab, tags, max_len, seed),
        GeneratorSpec::LookaheadFamily {
            k,
            pairs,
            fillers,
            filler_vocab,
            calibrate,
            seed,
        } => generate_lookahead(k, pairs, fillers, filler_vocab, calibrate, seed),
        GeneratorSpec::RandomProjective {
            sentences,
            vocab,
            labels,
            max_len,
            seed,
        } => generate_projective(sentences, vocab, labels, max_len, seed),
    }
}

fn generate_separable(
    sentences: usize,
    vocab: usize,
    tags: usize,
    max_len: usize,
    seed: u64,
) -> Result<Corpus> {
    if vocab == 0 || tags == 0 || max_len < 1 {
        return Err(Error::Config("separable: vocab, tags, max_len must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![];
    for _ in 0..sentences {
        let len = rng.gen_range(1..=max_len.max(1));
        let mut forms = vec![];
        let mut tag_seq = vec![];
        for _ in 0..len {
            let w = rng.gen_range(0..vocab);
            forms.push(format!("w{w}"));
            tag_seq.push(format!("t{}", w % tags));
        }
        out.push((
            Input::from_forms(&forms)?,
            GoldAnnotation::Tagging { tags: tag_seq },
        ));
    }
    Ok(Corpus {
        kind: TaskKind::Tagging,
        sentences: out,
    })
}

fn lookahead_block(k: usize, calibrate: bool) -> Vec<(Vec<String>, Vec<String>)> {
    let family = lookahead_family(k);
    let mut block = family.pairs;
    if calibrate {
        for (trigger, trigger_tag, middle_tag) in
            [("g", "G", "D"), ("h", "H", "B")]
        {
            let mut ws = vec![trigger.to_string()];
            let mut ts = vec![trigger_tag.to_string()];
            for _ in 0..=k {
                ws.push("b".into());
                ts.push(middle_tag.into());
            }
            // The suffix pairs with the opposite middle tags relative
            // to the ambiguous family.
            if middle_tag == "D" {
                ws.push("c".into());
                ts.push("C".into());
            } else {
                ws.push("e".into());
                ts.push("E".into());
            }
            block.push((ws, ts));
        }
    }
    block
}

fn generate_lookahead(
    k: usize,
    pairs: usize,
    fillers: usize,
    filler_vocab: usize,
    calibrate: bool,
    seed: u64,
) -> Result<Corpus> {
    let block = lookahead_block(k, calibrate);
    let mut out = vec![];
    if fillers == 0 {
        for _ in 0..pairs {
            for (ws, ts) in &block {
                out.push((
                    Input::from_forms(ws)?,
                    GoldAnnotation::Tagging { tags: ts.clone() },
                ));
            }
        }
    } else {
        if filler_vocab < 2 {
            return Err(Error::Config("lookahead: filler_vocab must be at least 2".into()));
        }
        let total = (filler_vocab as u128).pow(fillers as u32);
        // Keep at least 2x headroom so rejection sampling terminates
        // quickly.
        if (pairs as u128) * 2 > total {
            return Err(Error::Config(format!(
                "lookahead: need filler_vocab^fillers >= 2*pairs, got {total} < {}",
                pairs * 2
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = BTreeSet::new();
        while seen.len() < pairs {
            let combo: Vec<usize> = (0..fillers).map(|_| rng.gen_range(0..filler_vocab)).collect();
            seen.insert(combo);
        }
        for combo in seen {
            for (ws, ts) in &block {
                let mut forms: Vec<String> = combo.iter().map(|i| format!("f{i}")).collect();
                let mut tags: Vec<String> = vec!["F".to_string(); fillers];
                forms.extend(ws.iter().cloned());
                tags.extend(ts.iter().cloned());
                out.push((
                    Input::from_forms(&forms)?,
                    GoldAnnotation::Tagging { tags },
                ));
            }
        }
    }
    Ok(Corpus {
        kind: TaskKind::Tagging,
        sentences: out,
    })
}

fn generate_projective(
    sentences: usize,
    vocab: usize,
    labels: usize,
    max_len: usize,
    seed: u64,
) -> Result<Corpus> {
    if vocab == 0 || labels == 0 || max_len < 1 {
        return Err(Error::Config("projective: vocab, labels, max_len must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![];
    for _ in 0..sentences {
        let len = rng.gen_range(1..=max_len);
        let mut heads = vec![0usize; len];
        // Recursive random bracketing over [lo, hi] (1-based, inclusive)
        // yields a projective tree; returns the span head.
        fn build(lo: usize, hi: usize, heads: &mut [usize], rng: &mut ChaCha8Rng) -> usize {
            if lo == hi {
                return lo;
            }
            let split = rng.gen_range(lo..hi);
            let left = build(lo, split, heads, rng);
            let right = build(split + 1, hi, heads, rng);
            if rng.gen_bool(0.5) {
                heads[right - 1] = left;
                left
            } else {
                heads[left - 1] = right;
                right
            }
        }
        let root = build(1, len, &mut heads, &mut rng);
        heads[root - 1] = 0;
        let mut tokens = vec![];
        let mut label_seq = vec![];
        for _ in 0..len {
            let w = rng.gen_range(0..vocab);
            tokens.push(Token::new(format!("w{w}")).with_attr("tag", format!("T{}", w % 6)));
            label_seq.push(format!("l{}", rng.gen_range(0..labels)));
        }
        validate_tree(&heads).expect("bracketing yields a valid tree");
        out.push((
            Input::new(tokens)?,
            GoldAnnotation::Parsing {
                heads,
                labels: label_seq,
            },
        ));
    }
    Ok(Corpus {
        kind: TaskKind::Parsing,
        sentences: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagging_round_trip() {
        let text = "1\tthe\tDT\n2\tcat\tNN\n\n1\truns\tVB\n";
        let c = parse_corpus(text, TaskKind::Tagging, "test").unwrap();
        assert_eq!(c.len(), 2);
        let back = parse_corpus(&format_corpus(&c), TaskKind::Tagging, "test").unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn parsing_round_trip_and_attrs() {
        let text = "1\tthe\tDT\t2\tdet\n2\tcat\tNN\t0\troot\n";
        let c = parse_corpus(text, TaskKind::Parsing, "test").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].0.token(0).attr("tag"), Some("DT"));
        let back = parse_corpus(&format_corpus(&c), TaskKind::Parsing, "test").unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn compression_round_trip() {
        let text = "1\ta\t1\n2\tb\t0\n3\tc\t1\n";
        let c = parse_corpus(text, TaskKind::Compression, "test").unwrap();
        assert_eq!(
            c.sentences[0].1,
            GoldAnnotation::Compression {
                keep: vec![true, false, true]
            }
        );
        let back = parse_corpus(&format_corpus(&c), TaskKind::Compression, "test").unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn rejects_bad_column_count() {
        let r = parse_corpus("1\tthe\n", TaskKind::Tagging, "test");
        assert!(matches!(r, Err(Error::CorpusParse { line: 1, .. })));
    }

    #[test]
    fn rejects_bad_keep_bit() {
        let r = parse_corpus("1\ta\t2\n", TaskKind::Compression, "test");
        assert!(matches!(r, Err(Error::CorpusParse { .. })));
    }

    #[test]
    fn rejects_out_of_order_index() {
        let r = parse_corpus("1\ta\tX\n3\tb\tY\n", TaskKind::Tagging, "test");
        assert!(matches!(r, Err(Error::CorpusParse { line: 2, .. })));
    }

    #[test]
    fn rejects_invalid_tree() {
        let text = "1\ta\tT\t1\tl\n"; // self-headed
        let r = parse_corpus(text, TaskKind::Parsing, "test");
        assert!(matches!(r, Err(Error::CorpusParse { .. })));
    }

    #[test]
    fn comments_are_skipped() {
        let text = "# header\n1\ta\tX\n";
        let c = parse_corpus(text, TaskKind::Tagging, "test").unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn separable_is_deterministic_and_consistent() {
        let spec = GeneratorSpec::parse("separable:sentences=20,vocab=10,tags=3,seed=9").unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        // Tag is a function of the word everywhere.
        for (input, gold) in &a.sentences {
            let GoldAnnotation::Tagging { tags } = gold else { panic!() };
            for (tok, tag) in input.tokens().iter().zip(tags) {
                let w: usize = tok.form[1..].parse().unwrap();
                assert_eq!(*tag, format!("t{}", w % 3));
            }
        }
    }

    #[test]
    fn lookahead_n1_is_the_exact_pair() {
        let c = generate(&GeneratorSpec::parse("lookahead:k=0,pairs=1").unwrap()).unwrap();
        assert_eq!(c.len(), 2);
        let forms: Vec<&str> = c.sentences[0].0.forms().collect();
        assert_eq!(forms, ["a", "b", "c"]);
        let forms: Vec<&str> = c.sentences[1].0.forms().collect();
        assert_eq!(forms, ["a", "b", "e"]);
    }

    #[test]
    fn lookahead_fillers_are_distinct_prefixes() {
        let spec = GeneratorSpec::parse("lookahead:k=1,pairs=30,fillers=2,filler_vocab=10,seed=3")
            .unwrap();
        let c = generate(&spec).unwrap();
        assert_eq!(c.len(), 60);
        let mut prefixes = BTreeSet::new();
        for (input, gold) in &c.sentences {
            let forms: Vec<&str> = input.forms().collect();
            assert_eq!(forms.len(), 6); // 2 fillers + a b b + {c,e}
            prefixes.insert((forms[0].to_string(), forms[1].to_string()));
            let GoldAnnotation::Tagging { tags } = gold else { panic!() };
            assert_eq!(&tags[..2], &["F".to_string(), "F".to_string()]);
        }
        assert_eq!(prefixes.len(), 30);
    }

    #[test]
    fn lookahead_rejects_oversubscribed_fillers() {
        let spec =
            GeneratorSpec::parse("lookahead:pairs=10,fillers=1,filler_vocab=4").unwrap();
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn projective_trees_validate_and_round_trip() {
        let spec = GeneratorSpec::parse("projective:sentences=50,max_len=10,seed=11").unwrap();
        let c = generate(&spec).unwrap();
        assert_eq!(c.len(), 50);
        for (_, gold) in &c.sentences {
            let GoldAnnotation::Parsing { heads, .. } = gold else { panic!() };
            validate_tree(heads).unwrap();
        }
        let back = parse_corpus(&format_corpus(&c), TaskKind::Parsing, "test").unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_generator_name() {
        assert!(matches!(
            GeneratorSpec::parse("nope:seed=1"),
            Err(Error::UnknownGenerator(_))
        ));
    }
}
