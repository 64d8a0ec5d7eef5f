//! Declarative feature templates and feature extraction from states.
//!
//! A template is a list of feature groups plus an optional lookahead
//! limit `k`: when set, no feature may read a token beyond position
//! `i + k` while scoring decision `i`. Each group has a dedicated
//! padding id (0) and unknown id (1) in its vocabulary.
//!
//! Template text format (one directive per line, `#` comments):
//!
//! ```text
//! lookahead <k|unlimited>
//! group <name> window <form|col:NAME> <offsets> dim=<d> [vocab=<path>]
//! group <name> chargram <L> <offsets> dim=<d> [slots=<s>] [nobound] [vocab=<path>]
//! group <name> history <size> dim=<d>
//! group <name> stack <form|col:NAME|label> <loc,...> dim=<d> [vocab=<path>]
//! ```
//!
//! Offsets are a comma list (`-1,0,1`) or a range (`-3..3`). Stack
//! locators: `s0`, `s1`, ..., `b0`, `b1`, ..., `lc1(s0)`, `rc2(s1)`,
//! and nested forms such as `lc1(lc1(s0))`.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::input::Input;
use crate::transition::{Payload, State, TransitionSystem};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

/// String-to-id vocabulary with reserved padding and unknown entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            entries: vec![],
            index: HashMap::new(),
        };
        v.add("<PAD>");
        v.add("<UNK>");
        v
    }

    pub fn add(&mut self, entry: &str) -> u32 {
        if let Some(&id) = self.index.get(entry) {
            return id;
        }
        let id = self.entries.len() as u32;
        self.entries.push(entry.to_string());
        self.index.insert(entry.to_string(), id);
        id
    }

    pub fn lookup(&self, entry: &str) -> u32 {
        self.index.get(entry).copied().unwrap_or(UNK)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn from_entries(entries: Vec<String>) -> Self {
        let mut v = Vocab::new();
        for e in entries {
            v.add(&e);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attribute {
    Form,
    Column(String),
}

impl Attribute {
    fn value<'a>(&self, input: &'a Input, pos: usize) -> Option<&'a str> {
        match self {
            Attribute::Form => Some(&input.token(pos).form),
            Attribute::Column(c) => input.token(pos).attr(c),
        }
    }

    fn to_text(&self) -> String {
        match self {
            Attribute::Form => "form".into(),
            Attribute::Column(c) => format!("col:{c}"),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        if s == "form" {
            Ok(Attribute::Form)
        } else if let Some(c) = s.strip_prefix("col:") {
            Ok(Attribute::Column(c.to_string()))
        } else {
            Err(Error::Template(format!("unknown attribute `{s}`")))
        }
    }
}

/// What a stack-group feature reads from the located token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StackAttribute {
    Form,
    Column(String),
    /// Label of the arc whose dependent is the located token.
    ArcLabel,
}

impl StackAttribute {
    fn to_text(&self) -> String {
        match self {
            StackAttribute::Form => "form".into(),
            StackAttribute::Column(c) => format!("col:{c}"),
            StackAttribute::ArcLabel => "label".into(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        if s == "label" {
            Ok(StackAttribute::ArcLabel)
        } else if s == "form" {
            Ok(StackAttribute::Form)
        } else if let Some(c) = s.strip_prefix("col:") {
            Ok(StackAttribute::Column(c.to_string()))
        } else {
            Err(Error::Template(format!("unknown stack attribute `{s}`")))
        }
    }
}

/// Token locator relative to a parser state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Locator {
    /// `s0` is the stack top, `s1` below it, ...
    Stack(usize),
    /// `b0` is the buffer front.
    Buffer(usize),
    /// `lc<r>(base)`: r-th leftmost child of the located token.
    LeftChild(Box<Locator>, usize),
    /// `rc<r>(base)`: r-th rightmost child.
    RightChild(Box<Locator>, usize),
}

impl Locator {
    fn to_text(&self) -> String {
        match self {
            Locator::Stack(i) => format!("s{i}"),
            Locator::Buffer(i) => format!("b{i}"),
            Locator::LeftChild(b, r) => format!("lc{r}({})", b.to_text()),
            Locator::RightChild(b, r) => format!("rc{r}({})", b.to_text()),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Template(format!("bad locator `{s}`"));
        if let Some(rest) = s.strip_prefix('s') {
            if !rest.contains('(') {
                return rest.parse().map(Locator::Stack).map_err(|_| bad());
            }
        }
        if let Some(rest) = s.strip_prefix('b') {
            if !rest.contains('(') {
                return rest.parse().map(Locator::Buffer).map_err(|_| bad());
            }
        }
        for (prefix, left) in [("lc", true), ("rc", false)] {
            if let Some(rest) = s.strip_prefix(prefix) {
                if let Some(open) = rest.find('(') {
                    if !rest.ends_with(')') {
                        return Err(bad());
                    }
                    let rank: usize = rest[..open].parse().map_err(|_| bad())?;
                    if rank == 0 {
                        return Err(bad());
                    }
                    let inner = Locator::parse(&rest[open + 1..rest.len() - 1])?;
                    return Ok(if left {
                        Locator::LeftChild(Box::new(inner), rank)
                    } else {
                        Locator::RightChild(Box::new(inner), rank)
                    });
                }
            }
        }
        Err(bad())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupSource {
    /// Token window around the focus token.
    Window {
        attribute: Attribute,
        offsets: Vec<i64>,
    },
    /// All character n-grams (length <= max_len) of windowed tokens,
    /// packed into a fixed number of slots per token.
    CharNgram {
        max_len: usize,
        offsets: Vec<i64>,
        slots: usize,
        boundary: bool,
    },
    /// Most recent predicted decisions, newest first.
    History { size: usize },
    /// Parser stack/buffer locators with child navigation.
    Stack {
        attribute: StackAttribute,
        locators: Vec<Locator>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGroup {
    pub name: String,
    pub source: GroupSource,
    pub dim: usize,
    pub vocab: Vocab,
    /// Set when the vocabulary came from a fixed file rather than the
    /// training corpus.
    pub vocab_path: Option<String>,
}

impl FeatureGroup {
    /// Number of feature slots this group always produces.
    pub fn arity(&self) -> usize {
        match &self.source {
            GroupSource::Window { offsets, .. } => offsets.len(),
            GroupSource::CharNgram { offsets, slots, .. } => offsets.len() * slots,
            GroupSource::History { size } => *size,
            GroupSource::Stack { locators, .. } => locators.len(),
        }
    }
}

/// A feature template: groups plus the lookahead limit (`None` =
/// unlimited).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureTemplate {
    pub groups: Vec<FeatureGroup>,
    pub lookahead: Option<usize>,
}

/// Extracted ids, one list per group, fixed arity per group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub ids: Vec<Vec<u32>>,
}

fn offsets_to_text(offsets: &[i64]) -> String {
    let contiguous = offsets.len() > 1
        && offsets.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous {
        format!("{}..{}", offsets[0], offsets[offsets.len() - 1])
    } else {
        offsets
            .iter()
            .map(|o| o.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn parse_offsets(s: &str) -> Result<Vec<i64>> {
    let bad = || Error::Template(format!("bad offsets `{s}`"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: i64 = lo.parse().map_err(|_| bad())?;
        let hi: i64 = hi.parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        Ok((lo..=hi).collect())
    } else {
        s.split(',')
            .map(|p| p.parse().map_err(|_| bad()))
            .collect()
    }
}

impl FeatureTemplate {
    /// Serialize to the text format; `parse_text` round-trips it.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self.lookahead {
            Some(k) => writeln!(out, "lookahead {k}").unwrap(),
            None => writeln!(out, "lookahead unlimited").unwrap(),
        }
        for g in &self.groups {
            match &g.source {
                GroupSource::Window { attribute, offsets } => writeln!(
                    out,
                    "group {} window {} {} dim={}{}",
                    g.name,
                    attribute.to_text(),
                    offsets_to_text(offsets),
                    g.dim,
                    vocab_suffix(g),
                )
                .unwrap(),
                GroupSource::CharNgram {
                    max_len,
                    offsets,
                    slots,
                    boundary,
                } => writeln!(
                    out,
                    "group {} chargram {} {} dim={} slots={}{}{}",
                    g.name,
                    max_len,
                    offsets_to_text(offsets),
                    g.dim,
                    slots,
                    if *boundary { "" } else { " nobound" },
                    vocab_suffix(g),
                )
                .unwrap(),
                GroupSource::History { size } => {
                    writeln!(out, "group {} history {} dim={}", g.name, size, g.dim).unwrap()
                }
                GroupSource::Stack {
                    attribute,
                    locators,
                } => writeln!(
                    out,
                    "group {} stack {} {} dim={}{}",
                    g.name,
                    attribute.to_text(),
                    locators
                        .iter()
                        .map(|l| l.to_text())
                        .collect::<Vec<_>>()
                        .join(","),
                    g.dim,
                    vocab_suffix(g),
                )
                .unwrap(),
            }
        }
        out
    }

    /// Parse the text format. Vocabularies referenced by `vocab=` are
    /// loaded from disk; all others start empty and are built from the
    /// training corpus.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lookahead = None;
        let mut groups: Vec<FeatureGroup> = vec![];
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Template(format!("line {}: {m}", ln + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts[0] {
                "lookahead" => {
                    if parts.len() != 2 {
                        return Err(err("expected `lookahead <k|unlimited>`"));
                    }
                    lookahead = if parts[1] == "unlimited" {
                        None
                    } else {
                        Some(
                            parts[1]
                                .parse()
                                .map_err(|_| err("bad lookahead value"))?,
                        )
                    };
                }
                "group" => {
                    if parts.len() < 4 {
                        return Err(err("truncated group line"));
                    }
                    let name = parts[1].to_string();
                    if groups.iter().any(|g| g.name == name) {
                        return Err(err(&format!("duplicate group `{name}`")));
                    }
                    let mut dim = None;
                    let mut slots = 8usize;
                    let mut boundary = true;
                    let mut vocab_path = None;
                    let mut positional: Vec<&str> = vec![];
                    for p in &parts[3..] {
                        if let Some(v) = p.strip_prefix("dim=") {
                            dim = Some(v.parse().map_err(|_| err("bad dim"))?);
                        } else if let Some(v) = p.strip_prefix("slots=") {
                            slots = v.parse().map_err(|_| err("bad slots"))?;
                        } else if let Some(v) = p.strip_prefix("vocab=") {
                            vocab_path = Some(v.to_string());
                        } else if *p == "nobound" {
                            boundary = false;
                        } else {
                            positional.push(p);
                        }
                    }
                    let dim = dim.ok_or_else(|| err("missing dim="))?;
                    let source = match parts[2] {
                        "window" => {
                            if positional.len() != 2 {
                                return Err(err("window needs <attribute> <offsets>"));
                            }
                            GroupSource::Window {
                                attribute: Attribute::parse(positional[0])?,
                                offsets: parse_offsets(positional[1])?,
                            }
                        }
                        "chargram" => {
                            if positional.len() != 2 {
                                return Err(err("chargram needs <L> <offsets>"));
                            }
                            GroupSource::CharNgram {
                                max_len: positional[0]
                                    .parse()
                                    .map_err(|_| err("bad n-gram length"))?,
                                offsets: parse_offsets(positional[1])?,
                                slots,
                                boundary,
                            }
                        }
                        "history" => {
                            if positional.len() != 1 {
                                return Err(err("history needs <size>"));
                            }
                            GroupSource::History {
                                size: positional[0]
                                    .parse()
                                    .map_err(|_| err("bad history size"))?,
                            }
                        }
                        "stack" => {
                            if positional.len() != 2 {
                                return Err(err("stack needs <attribute> <locators>"));
                            }
                            GroupSource::Stack {
                                attribute: StackAttribute::parse(positional[0])?,
                                locators: positional[1]
                                    .split(',')
                                    .map(Locator::parse)
                                    .collect::<Result<_>>()?,
                            }
                        }
                        other => return Err(err(&format!("unknown source `{other}`"))),
                    };
                    let vocab = match &vocab_path {
                        Some(p) => {
                            let text = std::fs::read_to_string(p)?;
                            Vocab::from_entries(
                                text.lines()
                                    .filter(|l| !l.trim().is_empty())
                                    .map(|l| l.to_string())
                                    .collect(),
                            )
                        }
                        None => Vocab::new(),
                    };
                    groups.push(FeatureGroup {
                        name,
                        source,
                        dim,
                        vocab,
                        vocab_path,
                    });
                }
                other => return Err(err(&format!("unknown directive `{other}`"))),
            }
        }
        if groups.is_empty() {
            return Err(Error::Template("template has no groups".into()));
        }
        Ok(FeatureTemplate { groups, lookahead })
    }

    /// Total concatenated embedding width.
    pub fn input_width(&self) -> usize {
        self.groups.iter().map(|g| g.arity() * g.dim).sum()
    }

    /// Populate empty vocabularies from a training corpus.
    pub fn build_vocabs(
        &mut self,
        sys: &TransitionSystem,
        corpus: &[(Input, crate::tasks::GoldAnnotation)],
    ) {
        for g in &mut self.groups {
            if g.vocab_path.is_some() {
                continue;
            }
            match &g.source {
                GroupSource::History { .. } => {
                    for d in sys.vocab().iter() {
                        g.vocab.add(&d.name);
                    }
                }
                GroupSource::Window { attribute, .. } => {
                    for (input, _) in corpus {
                        for i in 0..input.len() {
                            if let Some(v) = attribute.value(input, i) {
                                g.vocab.add(v);
                            }
                        }
                    }
                }
                GroupSource::CharNgram {
                    max_len, boundary, ..
                } => {
                    for (input, _) in corpus {
                        for form in input.forms() {
                            for ng in char_ngrams(form, *max_len, *boundary) {
                                g.vocab.add(&ng);
                            }
                        }
                    }
                }
                GroupSource::Stack { attribute, .. } => {
                    g.vocab.add("<ROOT>");
                    match attribute {
                        StackAttribute::ArcLabel => {
                            for l in sys.symbols() {
                                g.vocab.add(l);
                            }
                        }
                        StackAttribute::Form => {
                            for (input, _) in corpus {
                                for form in input.forms() {
                                    g.vocab.add(form);
                                }
                            }
                        }
                        StackAttribute::Column(c) => {
                            for (input, _) in corpus {
                                for i in 0..input.len() {
                                    if let Some(v) = input.token(i).attr(c) {
                                        g.vocab.add(v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn vocab_suffix(g: &FeatureGroup) -> String {
    match &g.vocab_path {
        Some(p) => format!(" vocab={p}"),
        None => String::new(),
    }
}

/// All character n-grams of `form` up to length `max_len`, ordered by
/// length then start position. With `boundary`, n-grams touching the
/// first character get a `^` prefix and those touching the last get a
/// `$` suffix.
pub fn char_ngrams(form: &str, max_len: usize, boundary: bool) -> Vec<String> {
    let chars: Vec<char> = form.chars().collect();
    let mut out = vec![];
    for n in 1..=max_len.min(chars.len()) {
        for start in 0..=chars.len() - n {
            let mut s = String::new();
            if boundary && start == 0 {
                s.push('^');
            }
            s.extend(&chars[start..start + n]);
            if boundary && start + n == chars.len() {
                s.push('$');
            }
            out.push(s);
        }
    }
    out
}

/// Largest 0-based token position features may read in `state` under
/// lookahead `k`, or `None` when unlimited.
fn visible_limit(state: &State, lookahead: Option<usize>) -> Option<i64> {
    let k = lookahead? as i64;
    Some(match &state.payload {
        Payload::Tagger { buffer, .. } => *buffer as i64 + k,
        Payload::Compressor { cursor, .. } => *cursor as i64 + k,
        // Scoring a parser decision after f shifted tokens may read
        // x_{1:f+k}; buffer front is the (f+1)-th token.
        Payload::Parser { buffer, .. } => *buffer as i64 - 2 + k,
    })
}

/// 0-based focus position for window-style groups.
fn focus(state: &State) -> i64 {
    match &state.payload {
        Payload::Tagger { buffer, .. } => *buffer as i64,
        Payload::Compressor { cursor, .. } => *cursor as i64,
        Payload::Parser { buffer, .. } => *buffer as i64 - 1,
    }
}

fn resolve_locator(
    loc: &Locator,
    stack: &[usize],
    buffer: usize,
    m: usize,
    arcs: &[crate::transition::ParserArc],
) -> Option<usize> {
    match loc {
        Locator::Stack(i) => {
            if *i < stack.len() {
                Some(stack[stack.len() - 1 - i])
            } else {
                None
            }
        }
        Locator::Buffer(i) => {
            let tok = buffer + i;
            if tok <= m {
                Some(tok)
            } else {
                None
            }
        }
        Locator::LeftChild(base, rank) => {
            let b = resolve_locator(base, stack, buffer, m, arcs)?;
            let mut kids: Vec<usize> = arcs
                .iter()
                .filter(|a| a.head == b && a.dependent < b)
                .map(|a| a.dependent)
                .collect();
            kids.sort_unstable();
            kids.get(rank - 1).copied()
        }
        Locator::RightChild(base, rank) => {
            let b = resolve_locator(base, stack, buffer, m, arcs)?;
            let mut kids: Vec<usize> = arcs
                .iter()
                .filter(|a| a.head == b && a.dependent > b)
                .map(|a| a.dependent)
                .collect();
            kids.sort_unstable_by(|a, b| b.cmp(a));
            kids.get(rank - 1).copied()
        }
    }
}

/// Extract the feature vector for a non-final state. Deterministic;
/// out-of-range or lookahead-masked positions yield padding ids.
pub fn extract(
    state: &State,
    input: &Input,
    template: &FeatureTemplate,
    sys: &TransitionSystem,
) -> Result<FeatureVector> {
    let limit = visible_limit(state, template.lookahead);
    let f = focus(state);
    let len = input.len() as i64;
    let readable = |pos: i64| -> bool {
        pos >= 0 && pos < len && limit.is_none_or(|l| pos <= l)
    };
    let mut ids = Vec::with_capacity(template.groups.len());
    for g in &template.groups {
        let mut gids: Vec<u32> = Vec::with_capacity(g.arity());
        match &g.source {
            GroupSource::Window { attribute, offsets } => {
                for &o in offsets {
                    let pos = f + o;
                    if readable(pos) {
                        match attribute.value(input, pos as usize) {
                            Some(v) => gids.push(g.vocab.lookup(v)),
                            None => {
                                return Err(Error::Template(format!(
                                    "group `{}`: token {} has no column",
                                    g.name, pos
                                )))
                            }
                        }
                    } else {
                        gids.push(PAD);
                    }
                }
            }
            GroupSource::CharNgram {
                max_len,
                offsets,
                slots,
                boundary,
            } => {
                for &o in offsets {
                    let pos = f + o;
                    let mut filled = 0;
                    if readable(pos) {
                        let form = &input.token(pos as usize).form;
                        for ng in char_ngrams(form, *max_len, *boundary) {
                            if filled == *slots {
                                break;
                            }
                            gids.push(g.vocab.lookup(&ng));
                            filled += 1;
                        }
                    }
                    gids.extend(std::iter::repeat_n(PAD, *slots - filled));
                }
            }
            GroupSource::History { size } => {
                for back in 0..*size {
                    if back < state.history.len() {
                        let d = state.history[state.history.len() - 1 - back];
                        gids.push(g.vocab.lookup(sys.vocab().name(d)));
                    } else {
                        gids.push(PAD);
                    }
                }
            }
            GroupSource::Stack {
                attribute,
                locators,
            } => {
                let (stack, buffer, arcs) = match &state.payload {
                    Payload::Parser {
                        stack,
                        buffer,
                        arcs,
                    } => (stack.as_slice(), *buffer, arcs.as_slice()),
                    _ => {
                        return Err(Error::Template(format!(
                            "group `{}`: stack features require the parsing task",
                            g.name
                        )))
                    }
                };
                for loc in locators {
                    let tok = resolve_locator(loc, stack, buffer, input.len(), arcs);
                    let id = match tok {
                        None => PAD,
                        Some(0) => g.vocab.lookup("<ROOT>"),
                        Some(t) => {
                            let pos = t as i64 - 1;
                            if !readable(pos) {
                                PAD
                            } else {
                                match attribute {
                                    StackAttribute::Form => {
                                        g.vocab.lookup(&input.token(t - 1).form)
                                    }
                                    StackAttribute::Column(c) => input
                                        .token(t - 1)
                                        .attr(c)
                                        .map(|v| g.vocab.lookup(v))
                                        .unwrap_or(UNK),
                                    StackAttribute::ArcLabel => arcs
                                        .iter()
                                        .find(|a| a.dependent == t)
                                        .map(|a| g.vocab.lookup(&sys.symbols()[a.label]))
                                        .unwrap_or(PAD),
                                }
                            }
                        }
                    };
                    gids.push(id);
                }
            }
        }
        debug_assert_eq!(gids.len(), g.arity());
        ids.push(gids);
    }
    Ok(FeatureVector { ids })
}

/// Convenience: a ±window word template used by tests and the tagging
/// defaults.
pub fn simple_tagging_template(window: i64, history: usize, dim: usize) -> FeatureTemplate {
    FeatureTemplate {
        lookahead: None,
        groups: vec![
            FeatureGroup {
                name: "word".into(),
                source: GroupSource::Window {
                    attribute: Attribute::Form,
                    offsets: (-window..=window).collect(),
                },
                dim,
                vocab: Vocab::new(),
                vocab_path: None,
            },
            FeatureGroup {
                name: "hist".into(),
                source: GroupSource::History { size: history },
                dim,
                vocab: Vocab::new(),
                vocab_path: None,
            },
        ],
    }
}
