//! Command-line front end. Every report is written as JSON lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::FaultInjection;
use crate::checkpoint::Checkpoint;
use crate::config::{Precision, Preset, TrainConfig};
use crate::data::{
    encode_all, generate_synthetic, load_corpus, prepare, render_cbt_corpus, CorpusFormat, SyntheticSpec,
    SyntheticTask, Vocabulary,
};
use crate::error::{Error, Result};
use crate::micro::micro_instance;
use crate::model::{EpiReader, Evidence, Prediction};
use crate::train::{evaluate, EvalOptions, EvalReport, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.epir";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "epireader", version, about = "Extract-then-rerank Cloze reader")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, vocabulary, metrics and config.
    Train(TrainArgs),
    /// Report extractor-only and full-model accuracy on a dataset.
    Eval(EvalArgs),
    /// Rank the slate of a single example.
    Predict(PredictArgs),
    /// Write a synthetic corpus as CBT-format train/valid/test files.
    GenData(GenDataArgs),
    /// Finite-difference check of the full objective on a micro model.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum FormatArg {
    Cbt,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Extractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BreakOp {
    Conv,
    Matmul,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long, value_enum, default_value = "toy")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Keep the margin loss from updating the extractor through p.
    #[arg(long)]
    pub stop_margin_grad: bool,
    #[arg(long)]
    pub min_count: Option<usize>,
}

impl HyperArgs {
    pub fn resolve(&self) -> TrainConfig {
        let mut c = TrainConfig::from_preset(self.preset);
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            seed => seed,
            lambda => lambda,
            gamma => gamma,
            l2 => l2,
            k => dims.k,
            epochs => max_epochs,
            patience => patience,
            batch => batch_size,
            lr => learning_rate,
            precision => precision,
            min_count => min_count,
        );
        c.stop_margin_grad |= self.stop_margin_grad;
        c
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Re-run from a resolved config.json written by an earlier run.
    #[arg(long, conflicts_with_all = ["train", "valid", "test", "format"])]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub train: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub eval_workers: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: Option<PathBuf>,
    pub format: FormatArg,
    pub out: PathBuf,
    pub eval_workers: usize,
    pub config: TrainConfig,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Evaluate only one ranking; both when omitted.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Replace reasoner evidence by a uniform distribution.
    #[arg(long)]
    pub uniform_evidence: bool,
    #[arg(long)]
    pub dump_predictions: bool,
    #[arg(long, default_value_t = 1)]
    pub eval_workers: usize,
    /// Also write the report to DIR/eval.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// A file holding one example.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub uniform_evidence: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "locate")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 10)]
    pub entities: usize,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 5000)]
    pub examples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Locate,
    Alternation,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Corrupt one backward rule to confirm the check catches it.
    #[arg(long, value_enum)]
    pub break_op: Option<BreakOp>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn infer_format(path: &Path, explicit: Option<FormatArg>) -> FormatArg {
    explicit.unwrap_or_else(|| {
        if path.is_dir() || path.extension().is_some_and(|e| e == "question") {
            FormatArg::Cnn
        } else {
            FormatArg::Cbt
        }
    })
}

fn corpus(path: &Path, format: FormatArg) -> Result<Vec<crate::data::RawCloze>> {
    let f = match format {
        FormatArg::Cbt => CorpusFormat::Cbt,
        FormatArg::Cnn => CorpusFormat::Cnn,
    };
    load_corpus(path, f).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn print_json(out: &mut dyn Write, v: &serde_json::Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(v)?)?;
    Ok(())
}

fn load_model(checkpoint: &Path, vocab: Option<&Path>) -> Result<(Checkpoint, EpiReader, Vocabulary)> {
    let vocab_path = vocab
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.parent().unwrap_or_else(|| Path::new(".")).join(VOCAB_FILE));
    let vocab = Vocabulary::read_from(std::io::BufReader::new(fs::File::open(&vocab_path)?))?;
    let ck = Checkpoint::load(checkpoint, Some(vocab.hash()))?;
    if ck.vocab_size != vocab.len() {
        return Err(Error::Checkpoint {
            field: "vocab size".into(),
            msg: format!("checkpoint has {}, vocabulary has {}", ck.vocab_size, vocab.len()),
        });
    }
    let reader = ck.reader();
    Ok((ck, reader, vocab))
}

fn token(vocab: &Vocabulary, id: usize) -> String {
    vocab.token(id).unwrap_or("<?>").to_string()
}

fn prediction_json(vocab: &Vocabulary, p: &Prediction) -> serde_json::Value {
    let slate = p.combined.as_ref().map(|c| {
        c.slate
            .iter()
            .enumerate()
            .map(|(i, &w)| json!({"candidate": token(vocab, w), "p": c.p[i], "e": c.e[i], "pi": c.pi[i]}))
            .collect::<Vec<_>>()
    });
    json!({
        "source": p.source,
        "gold": token(vocab, p.gold),
        "zero_support": p.zero_support,
        "extractor": p.extractor.map(|w| token(vocab, w)),
        "full": p.combined.as_ref().map(|c| token(vocab, c.answer)),
        "slate": slate,
    })
}

fn report_json(r: &EvalReport) -> serde_json::Value {
    json!({
        "examples": r.examples,
        "zero_support": r.zero_support,
        "acc_extractor": r.acc_extractor,
        "acc_full": r.acc_full,
    })
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let run = match &args.config {
        Some(p) => {
            let mut run: RunConfig = serde_json::from_slice(&fs::read(p)?)?;
            run.out = args.out.clone();
            run
        }
        None => {
            let train = args.train.clone().expect("required by clap");
            RunConfig {
                command: "train".into(),
                format: infer_format(&train, args.format),
                valid: args.valid.clone().expect("required by clap"),
                train,
                test: args.test.clone(),
                out: args.out.clone(),
                eval_workers: args.eval_workers,
                config: args.hyper.resolve(),
            }
        }
    };
    run.config.validate()?;
    let train_raw = corpus(&run.train, run.format)?;
    let valid_raw = corpus(&run.valid, run.format)?;
    let test_raw = match &run.test {
        Some(p) => corpus(p, run.format)?,
        None => Vec::new(),
    };
    if train_raw.is_empty() || valid_raw.is_empty() {
        return Err(Error::Config("train and valid sets must be non-empty".into()));
    }
    let data = prepare(&train_raw, &valid_raw, &test_raw, run.config.min_count)?;

    fs::create_dir_all(&run.out)?;
    fs::write(run.out.join(CONFIG_FILE), serde_json::to_string_pretty(&run)? + "\n")?;
    data.vocab
        .write_to(std::io::BufWriter::new(fs::File::create(run.out.join(VOCAB_FILE))?))?;

    let config = &run.config;
    let (reader, params) = EpiReader::new(config.dims, data.vocab.len(), config.seed);
    let mut metrics = fs::File::create(run.out.join(METRICS_FILE))?;
    let outcome = Trainer::new(&reader, config, params).fit(&data.train, &data.valid, |m| {
        writeln!(metrics, "{}", serde_json::to_string(m)?)?;
        Ok(())
    })?;
    let ck = Checkpoint {
        config: config.clone(),
        vocab_size: data.vocab.len(),
        vocab_hash: data.vocab.hash(),
        params: outcome.params,
        optimizer: outcome.optimizer,
    };
    ck.save(&run.out.join(CHECKPOINT_FILE))?;

    let best = outcome.metrics.iter().find(|m| m.epoch == outcome.best_epoch);
    let mut summary = json!({
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.metrics.len(),
        "valid_acc_full": best.map(|m| m.valid_acc_full),
        "valid_acc_extractor": best.map(|m| m.valid_acc_extractor),
        "dropped_zero_support": outcome.dropped_zero_support,
    });
    if !data.test.is_empty() {
        let opts = EvalOptions {
            full: true,
            evidence: Evidence::Reasoner,
            workers: run.eval_workers,
        };
        let r = evaluate(&reader, &ck.params, &data.test, opts)?;
        summary["test"] = report_json(&r);
    }
    print_json(out, &summary)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (ck, reader, vocab) = load_model(&args.checkpoint, args.vocab.as_deref())?;
    let raws = corpus(&args.test, infer_format(&args.test, args.format))?;
    let examples = encode_all(&vocab, &raws)?;
    let opts = EvalOptions {
        full: args.mode != Some(ModeArg::Extractor),
        evidence: if args.uniform_evidence {
            Evidence::Uniform
        } else {
            Evidence::Reasoner
        },
        workers: args.eval_workers,
    };
    let report = evaluate(&reader, &ck.params, &examples, opts)?;
    let mut summary = report_json(&report);
    if args.mode == Some(ModeArg::Full) {
        summary.as_object_mut().unwrap().remove("acc_extractor");
    }
    let mut lines = vec![summary];
    if args.dump_predictions {
        lines.extend(report.predictions.iter().map(|p| prediction_json(&vocab, p)));
    }
    let mut file = match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(fs::File::create(dir.join("eval.jsonl"))?)
        }
        None => None,
    };
    for l in &lines {
        print_json(out, l)?;
        if let Some(f) = &mut file {
            print_json(f, l)?;
        }
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let (ck, reader, vocab) = load_model(&args.checkpoint, args.vocab.as_deref())?;
    let raws = corpus(&args.input, infer_format(&args.input, args.format))?;
    let [raw] = raws.as_slice() else {
        return Err(Error::Config(format!(
            "expected exactly one example, found {}",
            raws.len()
        )));
    };
    let ex = vocab.encode(raw)?;
    let evidence = if args.uniform_evidence {
        Evidence::Uniform
    } else {
        Evidence::Reasoner
    };
    let pred = reader.predict(&ck.params, &ex, evidence, true)?;
    let Some(c) = pred.combined else {
        return Err(Error::degenerate("predict", "no candidate occurs in the text"));
    };
    let mut order: Vec<usize> = (0..c.slate.len()).collect();
    order.sort_by(|&a, &b| c.pi[b].total_cmp(&c.pi[a]).then(a.cmp(&b)));
    for (rank, &i) in order.iter().enumerate() {
        print_json(
            out,
            &json!({
                "rank": rank + 1,
                "candidate": token(&vocab, c.slate[i]),
                "p": c.p[i],
                "e": c.e[i],
                "pi": c.pi[i],
            }),
        )?;
    }
    Ok(())
}

pub fn cmd_gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let task = match args.task {
        TaskArg::Locate => SyntheticTask::Locate,
        TaskArg::Alternation => SyntheticTask::Alternation,
    };
    let mut spec = SyntheticSpec::new(task, args.examples, args.seed);
    spec.num_entities = args.entities;
    spec.vocab_size = args.vocab_size;
    if let Some(s) = args.sentences {
        spec.num_sentences = s;
    }
    let corpus = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out)?;
    for (name, split) in [
        ("train", &corpus.train),
        ("valid", &corpus.valid),
        ("test", &corpus.test),
    ] {
        let path = args.out.join(format!("{name}.txt"));
        fs::write(&path, render_cbt_corpus(split))?;
        print_json(out, &json!({"split": name, "path": path, "examples": split.len()}))?;
    }
    Ok(())
}

/// Returns whether every tensor passed.
pub fn cmd_grad_check(args: &GradCheckArgs, out: &mut dyn Write) -> Result<bool> {
    let fault = match args.break_op {
        None => FaultInjection::None,
        Some(BreakOp::Conv) => FaultInjection::ConvFilters,
        Some(BreakOp::Matmul) => FaultInjection::MatMul,
    };
    let micro = micro_instance(args.seed)?;
    let report = micro.check(fault)?;
    for t in &report.tensors {
        print_json(
            out,
            &json!({"tensor": t.name, "max_rel_err": t.max_rel_err, "worst_index": t.worst_index, "passed": t.passed}),
        )?;
    }
    print_json(
        out,
        &json!({
            "tensors": report.tensors.len(),
            "failed": report.failures().map(|t| t.name.clone()).collect::<Vec<_>>(),
            "tolerance": report.tolerance,
            "epsilon": report.epsilon,
            "passed": report.passed(),
        }),
    )?;
    Ok(report.passed())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let rendered = e.render();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::GenData(a) => cmd_gen_data(a, out),
        Command::GradCheck(a) => match cmd_grad_check(a, out) {
            Ok(true) => Ok(()),
            Ok(false) => return 3,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
