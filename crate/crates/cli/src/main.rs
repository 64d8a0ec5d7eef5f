//! Command-line interface: train, decode, eval, gradcheck, labbias,
//! and synth subcommands.
//!
//! Exit codes: 0 on success, 1 on runtime failure (I/O, divergence),
//! 2 on usage or validation errors (bad flags, malformed config or
//! corpus files).

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use gntp_core::archive::{load_model, save_model};
use gntp_core::corpus::{generate, read_corpus, write_corpus, write_predictions, GeneratorSpec};
use gntp_core::features::{simple_tagging_template, FeatureTemplate};
use gntp_core::inference::{decode, ScoreMode};
use gntp_core::labbias::{
    alpha_sweep, local_bound_audit, lookahead_family, EmbeddedGlobal, RandomLocalModel,
};
use gntp_core::network::{Activation, Params, TrainableSet};
use gntp_core::tasks::{reconstruct, unroll_gold};
use gntp_core::training::{
    evaluate_corpus, gradient_check, train_stage, train_two_stage, LossKind, Stage, TrainConfig,
};
use gntp_core::transition::TransitionSystem;
use gntp_core::{Error as CoreError, GoldAnnotation, Input, Metrics, Model, TaskKind};

#[derive(Parser)]
#[command(name = "gntp", version, about = "Globally normalized transition-based structured prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Task {
    Tagging,
    Parsing,
    Compression,
}

impl From<Task> for TaskKind {
    fn from(t: Task) -> TaskKind {
        match t {
            Task::Tagging => TaskKind::Tagging,
            Task::Parsing => TaskKind::Parsing,
            Task::Compression => TaskKind::Compression,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Local,
    Global,
}

impl From<Mode> for ScoreMode {
    fn from(m: Mode) -> ScoreMode {
        match m {
            Mode::Local => ScoreMode::Local,
            Mode::Global => ScoreMode::Global,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on a corpus.
    Train {
        #[arg(long, value_enum)]
        task: Task,
        /// Training corpus file.
        #[arg(long)]
        train: PathBuf,
        /// Development corpus for early stopping and reporting.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Configuration file with key=value lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inline overrides, e.g. --set epochs=5 --set beam=8.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Where to write the trained model archive.
        #[arg(long)]
        model_out: PathBuf,
        /// Training log file (defaults to stdout).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Decode a corpus with a trained model and write predictions.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Predictions file (defaults to stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, value_enum, default_value = "global")]
        mode: Mode,
        /// Worker threads for parallel decoding.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Evaluate a model against gold annotations.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, value_enum, default_value = "global")]
        mode: Mode,
    },
    /// Check analytic gradients against finite differences on a tiny
    /// synthetic model.
    Gradcheck {
        /// Corpus generator, e.g. separable:sentences=3,vocab=6,tags=3.
        #[arg(long, default_value = "separable:sentences=3,vocab=6,tags=3,max_len=4,seed=5")]
        generator: String,
        #[arg(long, default_value_t = 2)]
        beam: usize,
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Reproduce the label-bias demonstration: an alpha sweep of the
    /// toy global model plus an audit of random local models.
    Labbias {
        /// Lookahead parameter of the ambiguous family.
        #[arg(long, default_value_t = 0)]
        k: usize,
        /// Comma-separated alpha values.
        #[arg(long, default_value = "0,1,2,5,10,20")]
        alphas: String,
        /// Random local models to audit (0 skips the audit).
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Generate a synthetic corpus.
    Synth {
        /// Generator spec, e.g. lookahead:k=1,pairs=50,fillers=2.
        #[arg(long)]
        generator: String,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Training configuration file: key=value lines, `#` comments.
#[derive(Debug, Clone)]
struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    fn new() -> Self {
        FileConfig {
            values: BTreeMap::new(),
        }
    }

    fn load(path: &PathBuf) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = FileConfig::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                anyhow!(CoreError::Config(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                )))
            })?;
            cfg.values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(cfg)
    }

    fn apply_sets(&mut self, sets: &[String]) -> anyhow::Result<()> {
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| {
                anyhow!(CoreError::Config(format!("--set expects key=value, got `{s}`")))
            })?;
            self.values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> anyhow::Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                anyhow!(CoreError::Config(format!("bad value `{v}` for `{key}`")))
            }),
        }
    }

    fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

fn collect_symbols(kind: TaskKind, corpus: &[(Input, GoldAnnotation)]) -> Vec<String> {
    let mut symbols = std::collections::BTreeSet::new();
    for (_, gold) in corpus {
        match gold {
            GoldAnnotation::Tagging { tags } => symbols.extend(tags.iter().cloned()),
            GoldAnnotation::Parsing { labels, .. } => symbols.extend(labels.iter().cloned()),
            GoldAnnotation::Compression { .. } => {}
        }
    }
    let _ = kind;
    symbols.into_iter().collect()
}

fn build_system(kind: TaskKind, corpus: &[(Input, GoldAnnotation)]) -> TransitionSystem {
    let symbols = collect_symbols(kind, corpus);
    match kind {
        TaskKind::Tagging => TransitionSystem::tagging(symbols),
        TaskKind::Parsing => TransitionSystem::parsing(symbols),
        TaskKind::Compression => TransitionSystem::compression(),
    }
}

fn build_template(cfg: &FileConfig) -> anyhow::Result<FeatureTemplate> {
    if let Some(path) = cfg.get("template_file") {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading template {path}"))?;
        return Ok(FeatureTemplate::parse_text(&text)?);
    }
    let window: i64 = cfg.parse("window", 2)?;
    let history: usize = cfg.parse("history", 2)?;
    let dim: usize = cfg.parse("dim", 16)?;
    let mut template = simple_tagging_template(window, history, dim);
    if let Some(la) = cfg.get("lookahead") {
        template.lookahead = if la == "unlimited" {
            None
        } else {
            Some(la.parse().map_err(|_| {
                anyhow!(CoreError::Config(format!("bad lookahead `{la}`")))
            })?)
        };
    }
    Ok(template)
}

fn stage_config(cfg: &FileConfig, stage: Stage, epochs_key: &str) -> anyhow::Result<TrainConfig> {
    let mut tc = TrainConfig::default();
    tc.stage = stage;
    tc.beam_size = cfg.parse("beam", tc.beam_size)?;
    tc.subset = TrainableSet::parse(cfg.get("subset").unwrap_or("full"))?;
    tc.loss = match cfg.get("loss").unwrap_or("crf") {
        "crf" => LossKind::Crf,
        "hinge" => LossKind::Hinge,
        other => {
            return Err(anyhow!(CoreError::Config(format!("unknown loss `{other}`"))))
        }
    };
    tc.eta0 = cfg.parse("eta0", tc.eta0)?;
    tc.gamma = cfg.parse("gamma", tc.gamma)?;
    tc.decay_steps = cfg.parse("decay_steps", tc.decay_steps)?;
    tc.momentum = cfg.parse("momentum", tc.momentum)?;
    tc.patience = cfg.parse("patience", tc.patience)?;
    tc.seed = cfg.parse("seed", tc.seed)?;
    tc.margin = cfg.parse("margin", tc.margin)?;
    tc.clip = cfg.parse("clip", tc.clip)?;
    let epochs: usize = cfg.parse("epochs", 10)?;
    tc.epochs = cfg.parse(epochs_key, epochs)?;
    Ok(tc)
}

fn metrics_line(m: &Metrics) -> String {
    match m {
        Metrics::Tagging {
            accuracy,
            correct,
            total,
        } => format!("accuracy={accuracy:.2} correct={correct} total={total}"),
        Metrics::Parsing { uas, las, counted } => {
            format!("uas={uas:.2} las={las:.2} tokens={counted}")
        }
        Metrics::Compression {
            precision,
            recall,
            f1,
            exact_match,
            ..
        } => format!(
            "precision={:.2} recall={:.2} f1={:.2} exact={:.2}",
            precision * 100.0,
            recall * 100.0,
            f1 * 100.0,
            exact_match * 100.0
        ),
    }
}

fn cmd_train(
    task: Task,
    train: PathBuf,
    dev: Option<PathBuf>,
    config: Option<PathBuf>,
    sets: Vec<String>,
    model_out: PathBuf,
    log: Option<PathBuf>,
) -> anyhow::Result<()> {
    let kind: TaskKind = task.into();
    let mut cfg = match config {
        Some(path) => FileConfig::load(&path)?,
        None => FileConfig::new(),
    };
    cfg.apply_sets(&sets)?;
    let train_corpus = read_corpus(&train, kind)?;
    let dev_corpus = match &dev {
        Some(p) => read_corpus(p, kind)?.sentences,
        None => vec![],
    };

    let sys = build_system(kind, &train_corpus.sentences);
    let mut template = build_template(&cfg)?;
    template.build_vocabs(&sys, &train_corpus.sentences);
    let hidden: Vec<usize> = cfg
        .get("hidden")
        .unwrap_or("32")
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| {
                anyhow!(CoreError::Config(format!("bad hidden size `{s}`")))
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let activation = Activation::parse(cfg.get("activation").unwrap_or("relu"))?;
    let seed: u64 = cfg.parse("seed", 1)?;
    let params = Params::init(&template, &hidden, sys.vocab().len(), activation, seed);
    let mut model = Model::new(sys, template, params);
    model.meta.seed = seed;
    model.meta.config_text = cfg.to_text();

    let stage = cfg.get("stage").unwrap_or("two_stage").to_string();
    let records = match stage.as_str() {
        "local" => train_stage(
            &mut model,
            &train_corpus.sentences,
            &dev_corpus,
            &stage_config(&cfg, Stage::LocalPretrain, "epochs_local")?,
        )?,
        "global" => train_stage(
            &mut model,
            &train_corpus.sentences,
            &dev_corpus,
            &stage_config(&cfg, Stage::Global, "epochs_global")?,
        )?,
        "two_stage" => train_two_stage(
            &mut model,
            &train_corpus.sentences,
            &dev_corpus,
            &stage_config(&cfg, Stage::LocalPretrain, "epochs_local")?,
            &stage_config(&cfg, Stage::Global, "epochs_global")?,
        )?,
        other => {
            return Err(anyhow!(CoreError::Config(format!("unknown stage `{other}`"))))
        }
    };

    let log_text: String = records.iter().map(|r| r.to_line() + "\n").collect();
    match &log {
        Some(path) => fs::write(path, &log_text)?,
        None => print!("{log_text}"),
    }
    save_model(&model, &model_out)?;
    if let Some(r) = records.last() {
        eprintln!("final: {}", r.to_line());
    }
    eprintln!("model written to {}", model_out.display());
    Ok(())
}

fn cmd_decode(
    model_path: PathBuf,
    input: PathBuf,
    output: Option<PathBuf>,
    beam: usize,
    mode: Mode,
    threads: usize,
) -> anyhow::Result<()> {
    if beam == 0 || threads == 0 {
        return Err(anyhow!(CoreError::Config(
            "beam and threads must be at least 1".into()
        )));
    }
    let model = load_model(&model_path)?;
    let kind = model.system.kind();
    let corpus = read_corpus(&input, kind)?;
    let mode: ScoreMode = mode.into();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| anyhow!(CoreError::Config(e.to_string())))?;
    let started = Instant::now();
    let preds: Vec<(Input, GoldAnnotation)> = pool.install(|| {
        corpus
            .sentences
            .par_iter()
            .map(|(x, _)| {
                let seq = decode(&model.averaged_scorer(), x, beam, mode)?;
                let pred = reconstruct(&model.system, x, &seq.decisions)?;
                Ok((x.clone(), pred))
            })
            .collect::<gntp_core::Result<Vec<_>>>()
    })?;
    let elapsed = started.elapsed().as_secs_f64();

    match &output {
        Some(path) => write_predictions(kind, &preds, path)?,
        None => {
            let c = gntp_core::corpus::Corpus {
                kind,
                sentences: preds.clone(),
            };
            print!("{}", gntp_core::corpus::format_corpus(&c));
        }
    }
    eprintln!(
        "decoded {} sentences in {:.3}s ({:.1} sentences/second, beam={beam}, threads={threads})",
        preds.len(),
        elapsed,
        preds.len() as f64 / elapsed.max(1e-9)
    );
    Ok(())
}

fn cmd_eval(model_path: PathBuf, input: PathBuf, beam: usize, mode: Mode) -> anyhow::Result<()> {
    let model = load_model(&model_path)?;
    let corpus = read_corpus(&input, model.system.kind())?;
    let metrics = evaluate_corpus(&model, &corpus.sentences, beam, mode.into(), true)?;
    println!("{}", metrics_line(&metrics));
    Ok(())
}

fn cmd_gradcheck(generator: String, beam: usize, h: f64, tol: f64, seed: u64) -> anyhow::Result<()> {
    let spec = GeneratorSpec::parse(&generator)?;
    let corpus = generate(&spec)?;
    let sys = build_system(spec.kind(), &corpus.sentences);
    let mut template = simple_tagging_template(1, 1, 2);
    template.build_vocabs(&sys, &corpus.sentences);
    let params = Params::init(&template, &[4], sys.vocab().len(), Activation::Tanh, seed);
    let model = Model::new(sys, template, params);
    eprintln!("checking {} parameters", model.params.flat_len());
    let mut worst = 0.0f64;
    for (input, gold) in corpus.sentences.iter().take(3) {
        let decisions = unroll_gold(&model.system, input, gold)?;
        let report = gradient_check(&model, input, &decisions, beam, 1.0, h)?;
        println!(
            "local={:.3e} global={:.3e} hinge={:.3e}",
            report.local_max_rel, report.global_max_rel, report.hinge_max_rel
        );
        worst = worst.max(report.overall_max());
    }
    if worst > tol {
        return Err(anyhow!("gradient check failed: max relative error {worst:.3e} > {tol:.3e}"));
    }
    println!("ok: max relative error {worst:.3e} <= {tol:.3e}");
    Ok(())
}

fn cmd_labbias(k: usize, alphas: String, trials: usize) -> anyhow::Result<()> {
    let alphas: Vec<f64> = alphas
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| {
                anyhow!(CoreError::Config(format!("bad alpha `{s}`")))
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let rows = alpha_sweep(&alphas, k)?;
    println!("{:>8} {:>12} {:>12} {:>12}", "alpha", "p(gold1)", "p(gold2)", "sum");
    for r in &rows {
        println!(
            "{:>8.2} {:>12.6} {:>12.6} {:>12.6}",
            r.alpha, r.p_first, r.p_second, r.sum
        );
    }
    if trials > 0 {
        let data = lookahead_family(k);
        let tags: Vec<String> = ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect();
        let report = local_bound_audit(&data, trials, |seed| {
            RandomLocalModel::new(seed, tags.clone())
        })?;
        println!(
            "audit: {} random local models, max p(gold1)+p(gold2) = {:.6} (bound 1)",
            report.trials, report.max_sum
        );
        let x = data.pairs[0].0.clone();
        let mut max_div = 0.0f64;
        for seed in 0..20 {
            let local = RandomLocalModel::new(seed, tags.clone());
            let emb = EmbeddedGlobal::new(&local, 0.0);
            max_div = max_div.max(emb.max_divergence(&x)?);
        }
        println!("embedding: max |p_G - p_L| over 20 local models = {max_div:.3e}");
    }
    Ok(())
}

fn cmd_synth(generator: String, output: PathBuf) -> anyhow::Result<()> {
    let spec = GeneratorSpec::parse(&generator)?;
    let corpus = generate(&spec)?;
    write_corpus(&corpus, &output)?;
    eprintln!(
        "wrote {} sentences ({}) to {}",
        corpus.len(),
        corpus.kind.as_str(),
        output.display()
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Train {
            task,
            train,
            dev,
            config,
            sets,
            model_out,
            log,
        } => cmd_train(task, train, dev, config, sets, model_out, log),
        Cmd::Decode {
            model,
            input,
            output,
            beam,
            mode,
            threads,
        } => cmd_decode(model, input, output, beam, mode, threads),
        Cmd::Eval {
            model,
            input,
            beam,
            mode,
        } => cmd_eval(model, input, beam, mode),
        Cmd::Gradcheck {
            generator,
            beam,
            h,
            tol,
            seed,
        } => cmd_gradcheck(generator, beam, h, tol, seed),
        Cmd::Labbias { k, alphas, trials } => cmd_labbias(k, alphas, trials),
        Cmd::Synth { generator, output } => cmd_synth(generator, output),
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(
            CoreError::Config(_)
            | CoreError::CorpusParse { .. }
            | CoreError::UnknownGenerator(_)
            | CoreError::UnknownSubset(_)
            | CoreError::Template(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
