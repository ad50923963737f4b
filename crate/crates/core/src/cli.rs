//! Command-line front end. [`run`] returns the process exit code:
//! 0 success, 2 usage error, 3 data error, 4 numeric error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{gen_synthetic, load_corpus, read_jsonl, Corpus, LoadOptions, Schema, SplitRatios, SyntheticSpec};
use crate::denoiser::{train, Checkpoint, DenoiserConfig, LossRecord, TrainConfig};
use crate::diffusion::{ScheduleConfig, DEFAULT_STEPS};
use crate::error::{Error, ErrorClass, Result};
use crate::layout::Layout;
use crate::metrics::{evaluate, fid, violation_rate, BoxStatistics, EvalOptions, FeatureExtractor, NetFeatures};
use crate::quantizer::{QuantizerKind, Vocabulary};
use crate::render::render_svg;
use crate::sampler::{sample_each, DecodePolicy, RelationConstraint, SampleOptions, SampleOutput};
use crate::seed;
use crate::task::{make_condition, ConditionOptions, PartialElement, TaskCondition, TaskKind};

#[derive(Parser, Debug)]
#[command(name = "laydiff", version, about = "Discrete diffusion for layout generation")]
struct Cli {
    /// JSON file of flag values for the subcommand (same keys as flags).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one flag, e.g. `--set n=10`. Applied after everything else.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic grid-flow corpus.
    Synth(SynthArgs),
    /// Fit the per-modality quantizer on a corpus' training split.
    FitVocab(FitVocabArgs),
    /// Train a denoiser.
    Train(TrainArgs),
    /// Sample layouts for a task.
    Sample(SampleArgs),
    /// Score generated layouts against a reference set.
    Eval(EvalArgs),
    /// Sample over a grid of guidance weights or step sizes.
    Sweep(SweepArgs),
    /// Write one SVG per layout.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct CorpusArgs {
    /// Corpus directory or file.
    #[arg(long)]
    corpus: PathBuf,
    /// native | publaynet | rico
    #[arg(long, default_value = "native")]
    schema: Schema,
    /// Element-count cap applied when ingesting external formats.
    #[arg(long, default_value_t = crate::layout::DEFAULT_MAX_ELEMENTS)]
    ingest_max_elements: usize,
}

impl CorpusArgs {
    fn load(&self, seed: u64) -> Result<Corpus> {
        let opts = LoadOptions {
            max_elements: self.ingest_max_elements,
            ratios: SplitRatios::default(),
            seed,
        };
        load_corpus(&self.corpus, self.schema, &opts)
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    size: usize,
    #[arg(long, default_value_t = 5)]
    categories: u32,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    #[arg(long, default_value_t = 10)]
    max_elements: usize,
    /// Std of Gaussian noise on every coordinate.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct FitVocabArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 32)]
    bins: usize,
    /// kmeans | percentile | uniform
    #[arg(long, default_value = "kmeans")]
    quantizer: QuantizerKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Vocabulary JSON; fitted on the training split when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    bins: usize,
    #[arg(long, default_value = "kmeans")]
    quantizer: QuantizerKind,
    /// paper | desk | tiny
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Single flat positional table instead of element + attribute tables.
    #[arg(long)]
    flat_pe: bool,
    /// Sequence capacity in elements; defaults to the corpus cap.
    #[arg(long)]
    max_elements: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    diffusion_steps: usize,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = crate::diffusion::DEFAULT_AUX_WEIGHT)]
    aux_weight: f64,
    #[arg(long)]
    out: PathBuf,
    /// CSV of step,loss,vb,aux.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Log progress every this many steps (0 = never).
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Condition JSON: task, elements, relations, lambda_pi, margin,
    /// top_p, delta, n, seed. Flags take precedence over its fields.
    #[arg(long)]
    condition: Option<PathBuf>,
    /// uncond | c | c+s | completion | refine | relation
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    /// Weight of the refinement prior or relation guidance.
    #[arg(long)]
    lambda_pi: Option<f64>,
    /// Refinement window half-width.
    #[arg(long)]
    margin: Option<f64>,
    /// Derive one condition per sample from this corpus' layouts.
    #[arg(long)]
    from_corpus: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Fail on slots mixing PAD with content instead of dropping them.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    /// Layouts JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Also write the derived conditions' relations, one JSON list per line.
    #[arg(long)]
    relations_out: Option<PathBuf>,
    /// Also write the layouts the conditions were derived from.
    #[arg(long)]
    source_out: Option<PathBuf>,
    /// Also render every sample into this directory.
    #[arg(long)]
    svg_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvalArgs {
    /// Generated layouts JSONL.
    #[arg(long)]
    generated: PathBuf,
    /// Reference layouts: a JSONL file or a corpus directory.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Use this checkpoint's network as the FID feature extractor.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use model-free box statistics as the feature extractor.
    #[arg(long)]
    box_features: bool,
    /// Neighbourhood size for density and coverage.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Relations JSONL aligned with the generated layouts.
    #[arg(long)]
    relations: Option<PathBuf>,
    /// Pair generated[i] with reference[i] for DocSim.
    #[arg(long)]
    paired: bool,
    /// MetricReport JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "test")]
    split: String,
    /// `lambda_pi=0,1,2` (relation guidance) or `delta=1,2,5` (unconditional).
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    top_p: f64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct RenderArgs {
    /// Layouts JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Corpus directory whose category names label the legend.
    #[arg(long)]
    names_from: Option<PathBuf>,
}

/// Fields of a sample condition file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionFile {
    task: Option<TaskKind>,
    #[serde(default)]
    elements: Vec<PartialElement>,
    #[serde(default)]
    relations: Vec<RelationConstraint>,
    lambda_pi: Option<f64>,
    margin: Option<f64>,
    top_p: Option<f64>,
    delta: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
}

const SUBCOMMANDS: [&str; 7] = ["synth", "fit-vocab", "train", "sample", "eval", "sweep", "render"];

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn flag_args(key: &str, value: &serde_json::Value) -> Result<Vec<String>> {
    let flag = format!("--{}", key.replace('_', "-"));
    Ok(match value {
        serde_json::Value::Null | serde_json::Value::Bool(false) => vec![],
        serde_json::Value::Bool(true) => vec![flag],
        serde_json::Value::String(s) => vec![flag, s.clone()],
        serde_json::Value::Number(n) => vec![flag, n.to_string()],
        other => return Err(usage(format!("config key {key:?}: unsupported value {other}"))),
    })
}

fn option_value(args: &[String], name: &str) -> Vec<String> {
    let long = format!("--{name}");
    let prefixed = format!("--{name}=");
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == &long {
            if let Some(v) = it.next() {
                out.push(v.clone());
            }
        } else if let Some(v) = a.strip_prefix(&prefixed) {
            out.push(v.to_string());
        }
    }
    out
}

/// Splice `--config` file entries right after the subcommand name (so
/// explicit flags override them) and `--set` entries at the end.
fn expand_args(args: Vec<String>) -> Result<Vec<String>> {
    let configs = option_value(&args, "config");
    let sets = option_value(&args, "set");
    if configs.is_empty() && sets.is_empty() {
        return Ok(args);
    }
    let mut from_config = Vec::new();
    for path in &configs {
        let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, format!("cannot read: {e}")))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse(path, "config must be a JSON object"))?;
        for (k, v) in obj {
            from_config.extend(flag_args(k, v)?);
        }
    }
    let mut from_set = Vec::new();
    for kv in &sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        match v {
            "true" => from_set.push(format!("--{}", k.replace('_', "-"))),
            "false" => {}
            _ => from_set.extend([format!("--{}", k.replace('_', "-")), v.to_string()]),
        }
    }
    let pos = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .ok_or_else(|| usage("missing subcommand"))?;
    let mut out: Vec<String> = args[..=pos].to_vec();
    out.extend(from_config);
    out.extend(args[pos + 1..].iter().cloned());
    out.extend(from_set);
    Ok(out)
}

fn report_error(e: &Error) -> i32 {
    let class = match e.class() {
        ErrorClass::Usage => "usage",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    };
    let code = e.exit_code();
    let obj = serde_json::json!({ "error": { "class": class, "code": code, "message": e.to_string() } });
    eprintln!("{obj}");
    code
}

/// Parse `argv` (including the program name) and run the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = match argv
        .into_iter()
        .map(|a| a.into().into_string())
        .collect::<std::result::Result<_, _>>()
    {
        Ok(a) => a,
        Err(_) => return report_error(&usage("arguments must be valid UTF-8")),
    };
    let args = match expand_args(args) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => cmd_synth(a, seed.unwrap_or(0)),
        Command::FitVocab(a) => cmd_fit_vocab(a, seed.unwrap_or(0)),
        Command::Train(a) => cmd_train(a, seed.unwrap_or(0)),
        Command::Sample(a) => cmd_sample(a, seed),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a, seed.unwrap_or(0)),
        Command::Render(a) => cmd_render(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn jsonl(layouts: &[Layout]) -> String {
    let mut s = String::new();
    for l in layouts {
        s.push_str(&l.to_json());
        s.push('\n');
    }
    s
}

fn cmd_synth(a: SynthArgs, seed: u64) -> Result<()> {
    let category_weights = if a.categories == 5 {
        SyntheticSpec::default().category_weights
    } else {
        Vec::new()
    };
    let spec = SyntheticSpec {
        num_categories: a.categories,
        rows: a.rows,
        cols: a.cols,
        jitter: a.jitter,
        count_weights: vec![1.0; a.max_elements],
        category_weights,
        size: a.size,
        seed,
    };
    let corpus = gen_synthetic(&spec, SplitRatios::default())?;
    corpus.save(&a.out)?;
    log::info!(
        "wrote {} train / {} val / {} test layouts to {}",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        a.out.display()
    );
    Ok(())
}

fn fit_vocab(corpus: &Corpus, bins: usize, kind: QuantizerKind, seed: u64) -> Result<Vocabulary> {
    let (vocab, warnings) = Vocabulary::fit(&corpus.train, corpus.num_categories(), bins, kind, seed)?;
    for w in warnings {
        log::warn!("{w:?}");
    }
    Ok(vocab)
}

fn cmd_fit_vocab(a: FitVocabArgs, seed: u64) -> Result<()> {
    let corpus = a.corpus.load(seed)?;
    let vocab = fit_vocab(&corpus, a.bins, a.quantizer, seed)?;
    write_file(&a.out, vocab.to_json()? + "\n")
}

fn cmd_train(a: TrainArgs, seed: u64) -> Result<()> {
    let corpus = a.corpus.load(seed)?;
    let vocab = match &a.vocab {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::parse(p, format!("cannot read: {e}")))?;
            Vocabulary::from_json(&text)?
        }
        None => fit_vocab(&corpus, a.bins, a.quantizer, seed)?,
    };
    if vocab.num_categories() != corpus.num_categories() {
        return Err(Error::ShapeMismatch(format!(
            "vocabulary has {} categories, corpus {}",
            vocab.num_categories(),
            corpus.num_categories()
        )));
    }
    let mut model = DenoiserConfig::preset(&a.preset, vocab.num_categories(), vocab.bins())?;
    model.max_elements = a.max_elements.unwrap_or(corpus.max_elements);
    if let Some(v) = a.layers {
        model.layers = v;
    }
    if let Some(v) = a.heads {
        model.heads = v;
    }
    if let Some(v) = a.embed_dim {
        model.embed_dim = v;
    }
    if let Some(v) = a.hidden_dim {
        model.hidden_dim = v;
    }
    if let Some(v) = a.dropout {
        model.dropout = v;
    }
    model.decoupled_pe = !a.flat_pe;
    let config = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        max_steps: a.steps,
        aux_weight: a.aux_weight,
        seed,
        ..TrainConfig::default()
    };
    let schedule = ScheduleConfig {
        steps: a.diffusion_steps,
        ..ScheduleConfig::default()
    };
    let log_every = a.log_every;
    let (ckpt, records) = train(&corpus.train, &vocab, model, config, schedule, |r: &LossRecord| {
        if log_every > 0 && r.step.is_multiple_of(log_every) {
            log::info!("step {} loss {:.4} vb {:.4} aux {:.4}", r.step, r.loss, r.vb, r.aux);
        }
    })?;
    ckpt.save(&a.out)?;
    if let Some(p) = &a.loss_log {
        let mut s = String::from("step,loss,vb,aux\n");
        for r in &records {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.loss, r.vb, r.aux);
        }
        write_file(p, s)?;
    }
    Ok(())
}

fn read_condition(path: &Path) -> Result<ConditionFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, format!("cannot read: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn load_split(dir: &Path, split: &str) -> Result<(Vec<Layout>, Vec<String>)> {
    if dir.is_file() {
        return Ok((read_jsonl(dir)?, Vec::new()));
    }
    let corpus = Corpus::load(dir)?;
    Ok((corpus.split(split)?.to_vec(), corpus.categories))
}

/// Conditions derived from the first `n` layouts of `source` (cycled).
fn derived_conditions(
    task: TaskKind,
    source: &[Layout],
    n: usize,
    vocab: &Vocabulary,
    opts: &ConditionOptions,
    seed: u64,
) -> Result<(Vec<TaskCondition>, Vec<Layout>)> {
    if source.is_empty() {
        return Err(Error::EmptyData("no layouts to derive conditions from"));
    }
    let mut rng = seed::rng(seed, "condition");
    let mut conds = Vec::with_capacity(n);
    let mut used = Vec::with_capacity(n);
    for i in 0..n {
        let l = &source[i % source.len()];
        conds.push(make_condition(task, l, vocab, opts, &mut rng)?);
        used.push(l.canonical());
    }
    Ok((conds, used))
}

fn relations_of(cond: &TaskCondition) -> Vec<RelationConstraint> {
    cond.priors.iter().flat_map(|p| p.relations.iter().copied()).collect()
}

fn cmd_sample(a: SampleArgs, seed: Option<u64>) -> Result<()> {
    let file = match &a.condition {
        Some(p) => read_condition(p)?,
        None => ConditionFile::default(),
    };
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let task = a.task.or(file.task).unwrap_or(TaskKind::Unconditional);
    let n = a.n.or(file.n).unwrap_or(1);
    let seed = seed.or(file.seed).unwrap_or(0);
    let opts = SampleOptions {
        n,
        delta: a.delta.or(file.delta).unwrap_or(1),
        top_p: a.top_p.or(file.top_p).unwrap_or(1.0),
        seed,
        batch_size: a.batch_size,
        decode: if a.strict {
            DecodePolicy::Strict
        } else {
            DecodePolicy::Lenient
        },
    };
    let mut copts = ConditionOptions {
        max_elements: ckpt.net.config().max_elements,
        ..ConditionOptions::default()
    };
    if let Some(l) = a.lambda_pi.or(file.lambda_pi) {
        copts.refine_lambda = l;
        copts.relation_lambda = l;
    }
    if let Some(m) = a.margin.or(file.margin) {
        copts.margin = m;
    }
    let (conds, sources) = match &a.from_corpus {
        Some(dir) => {
            let (layouts, _) = load_split(dir, &a.split)?;
            let (c, s) = derived_conditions(task, &layouts, n, &ckpt.vocab, &copts, seed)?;
            (c, Some(s))
        }
        None => {
            let c = TaskCondition::from_partial(task, &file.elements, file.relations.clone(), &ckpt.vocab, &copts)?;
            (vec![c; n], None)
        }
    };
    let schedule = ckpt.diffusion_schedule()?;
    let out: SampleOutput = sample_each(&ckpt.net, &schedule, &ckpt.vocab, &conds, &opts)?;
    for w in &out.warnings {
        log::warn!("{w:?}");
    }
    if out.dropped_elements > 0 {
        log::warn!("dropped {} partially padded slots while decoding", out.dropped_elements);
    }
    write_file(&a.out, jsonl(&out.layouts))?;
    if let Some(p) = &a.relations_out {
        let mut s = String::new();
        for c in &conds {
            s.push_str(&serde_json::to_string(&relations_of(c))?);
            s.push('\n');
        }
        write_file(p, s)?;
    }
    if let (Some(p), Some(src)) = (&a.source_out, &sources) {
        write_file(p, jsonl(src))?;
    }
    if let Some(dir) = &a.svg_dir {
        write_svgs(&out.layouts, dir, &[])?;
    }
    Ok(())
}

fn read_relations(path: &Path, n: usize) -> Result<Vec<Vec<RelationConstraint>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, format!("cannot read: {e}")))?;
    let lists: Vec<Vec<RelationConstraint>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1))))
        .collect::<Result<_>>()?;
    match lists.len() {
        1 => Ok(vec![lists[0].clone(); n]),
        len if len == n => Ok(lists),
        len => Err(Error::parse(path, format!("{len} relation lists for {n} layouts"))),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let generated = read_jsonl(&a.generated)?;
    let (reference, names) = match &a.reference {
        Some(p) => load_split(p, &a.split)?,
        None => (Vec::new(), Vec::new()),
    };
    let ckpt = a.checkpoint.as_ref().map(Checkpoint::load).transpose()?;
    let net_features = ckpt.as_ref().map(|c| NetFeatures {
        net: &c.net,
        vocab: &c.vocab,
        batch_size: 100,
    });
    let num_categories = generated
        .iter()
        .chain(&reference)
        .flat_map(|l| l.elements.iter().map(|e| e.category))
        .max()
        .unwrap_or(1)
        .max(names.len() as u32);
    let boxes = BoxStatistics { num_categories };
    let extractor: Option<&dyn FeatureExtractor> = match (&net_features, a.box_features) {
        (Some(f), _) => Some(f),
        (None, true) => Some(&boxes),
        (None, false) => None,
    };
    let constraints = a
        .relations
        .as_ref()
        .map(|p| read_relations(p, generated.len()))
        .transpose()?;
    let config = serde_json::json!({
        "generated": a.generated,
        "reference": a.reference,
        "split": a.split,
        "features": if net_features.is_some() { "network" } else if a.box_features { "box_statistics" } else { "none" },
        "k": a.k,
        "paired": a.paired,
    });
    let opts = EvalOptions {
        extractor,
        k: a.k,
        constraints: constraints.as_deref(),
        paired: a.paired,
        config,
    };
    let report = evaluate(&generated, &reference, &opts)?;
    print!("{}", report.to_table());
    let _ = std::io::stdout().flush();
    if let Some(p) = &a.out {
        write_file(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

fn parse_grid(grid: &str) -> Result<(String, Vec<String>)> {
    let (k, v) = grid
        .split_once('=')
        .ok_or_else(|| usage(format!("grid must look like name=v1,v2,..., got {grid:?}")))?;
    let vals: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if vals.is_empty() {
        return Err(usage("grid has no values"));
    }
    Ok((k.trim().to_string(), vals))
}

fn cmd_sweep(a: SweepArgs, seed: u64) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let corpus = a.corpus.load(seed)?;
    let reference = corpus.split(&a.split)?;
    let schedule = ckpt.diffusion_schedule()?;
    let features = BoxStatistics {
        num_categories: ckpt.vocab.num_categories(),
    };
    let (name, values) = parse_grid(&a.grid)?;
    let base = SampleOptions {
        n: a.n,
        delta: 1,
        top_p: a.top_p,
        seed,
        batch_size: a.batch_size,
        decode: DecodePolicy::Lenient,
    };
    let max_elements = ckpt.net.config().max_elements;
    let usable: Vec<Layout> = reference.iter().filter(|l| l.len() <= max_elements).cloned().collect();
    let mut csv = String::new();
    match name.as_str() {
        "lambda_pi" => {
            csv.push_str("lambda_pi,fid_surrogate,violation\n");
            let pairs: Vec<Layout> = usable.iter().filter(|l| l.len() >= 2).cloned().collect();
            for v in &values {
                let lambda: f64 = v.parse().map_err(|_| usage(format!("bad lambda_pi value {v:?}")))?;
                let copts = ConditionOptions {
                    max_elements,
                    relation_lambda: lambda,
                    ..ConditionOptions::default()
                };
                let (conds, _) = derived_conditions(TaskKind::Relationship, &pairs, a.n, &ckpt.vocab, &copts, seed)?;
                let out = sample_each(&ckpt.net, &schedule, &ckpt.vocab, &conds, &base)?;
                let constraints: Vec<_> = conds.iter().map(relations_of).collect();
                let f = fid(&out.layouts, &usable, &features)?;
                let viol = violation_rate(&out.layouts, &constraints)?;
                log::info!("lambda_pi {lambda}: fid_surrogate {f:.4} violation {viol:.4}");
                let _ = writeln!(csv, "{lambda},{f},{viol}");
            }
        }
        "delta" => {
            csv.push_str("delta,fid_surrogate,network_calls,seconds\n");
            let cond = TaskCondition::unconditional(&ckpt.vocab, max_elements);
            let conds = vec![cond; a.n];
            for v in &values {
                let delta: usize = v.parse().map_err(|_| usage(format!("bad delta value {v:?}")))?;
                let opts = SampleOptions { delta, ..base.clone() };
                let t0 = Instant::now();
                let out = sample_each(&ckpt.net, &schedule, &ckpt.vocab, &conds, &opts)?;
                let secs = t0.elapsed().as_secs_f64();
                let f = fid(&out.layouts, &usable, &features)?;
                log::info!("delta {delta}: fid_surrogate {f:.4} in {secs:.2}s");
                let _ = writeln!(csv, "{delta},{f},{},{secs:.3}", out.network_calls);
            }
        }
        other => return Err(usage(format!("unknown grid parameter {other:?}; use lambda_pi or delta"))),
    }
    write_file(&a.out, csv)
}

fn write_svgs(layouts: &[Layout], dir: &Path, names: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, l) in layouts.iter().enumerate() {
        std::fs::write(dir.join(format!("layout_{i:05}.svg")), render_svg(l, names))?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let layouts = read_jsonl(&a.input)?;
    let names = match &a.names_from {
        Some(d) => Corpus::load(d)?.categories,
        None => Vec::new(),
    };
    write_svgs(&layouts, &a.out_dir, &names)
}
