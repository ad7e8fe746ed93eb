//! Command-line front end. [`run_cli`] takes explicit streams so it can be scripted.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{
    corpus_to_jsonl, load_corpus, parse_corpus, save_corpus, stratified_split, AnnotatorRole, Corpus, EmotionLabel,
    Sample, Source, SplitSpec,
};
use crate::error::Error;
use crate::evalkit::{balancing_report, evaluate_pipeline, run_grid, GridSpec};
use crate::manifest::{digest_file, RunManifest};
use crate::pipeline::{ExperimentConfig, FeatureKind, ModelKind, Pipeline};
use crate::synth::{synth_corpus, SynthConfig};
use crate::textprep::{EmojiMap, Preprocessor, StopWordList};

#[derive(Debug, Parser)]
#[command(name = "emoforge", version, about = "Emotion classification experiments", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a JSONL, CSV or plain-text file into a corpus file.
    Ingest(IngestArgs),
    /// Label samples interactively over standard input.
    Annotate(AnnotateArgs),
    /// Clean, map emojis, tokenize and remove stop words.
    Preprocess(PreprocessArgs),
    /// Assign stratified train/val/test splits.
    Split(SplitArgs),
    /// Train one feature x model pipeline.
    Train(TrainArgs),
    /// Score a trained pipeline on a corpus.
    Evaluate(EvaluateArgs),
    /// Run the feature x model grid or the balancing study.
    Grid(GridArgs),
    /// Label one text with a trained pipeline.
    Predict(PredictArgs),
    /// Write a seeded synthetic corpus with planted class keywords.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum InputFormat {
    Auto,
    Jsonl,
    Csv,
    Text,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    format: InputFormat,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    annotator: String,
    /// Also adjudicate samples whose votes tie.
    #[arg(long)]
    lead: bool,
    /// Write here instead of updating the corpus file in place.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TextResources {
    /// One stop word per line; defaults to the embedded list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Tab-separated `emoji<TAB>word` lines; defaults to the embedded map.
    #[arg(long = "emoji-map")]
    emoji_map: Option<PathBuf>,
}

impl TextResources {
    fn preprocessor(&self) -> Result<Preprocessor, Error> {
        let mut p = Preprocessor::default();
        if let Some(path) = &self.stopwords {
            p.stopwords = StopWordList::load(path)?;
        }
        if let Some(path) = &self.emoji_map {
            p.emoji = EmojiMap::load(path)?;
        }
        Ok(p)
    }

    fn digests(&self) -> Result<Vec<crate::manifest::InputDigest>, Error> {
        [&self.stopwords, &self.emoji_map].into_iter().flatten().map(digest_file).collect()
    }
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    resources: TextResources,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Train, val and test fractions.
    #[arg(long, value_parser = parse_ratios, default_value = "0.7,0.15,0.15")]
    ratios: [f64; 3],
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_model)]
    model: ModelKind,
    #[arg(long, value_parser = parse_feature)]
    features: FeatureKind,
    /// SMOTE-balance the training split.
    #[arg(long)]
    balance: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    resources: TextResources,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_feature, default_value = "count,tfidf,skipgram,subword,contextual")]
    features: Vec<FeatureKind>,
    #[arg(long, value_delimiter = ',', value_parser = parse_model, default_value = "dt,rf,svm,nb,rnn,lstm,hybrid,ensemble")]
    models: Vec<ModelKind>,
    /// Run every cell with SMOTE off and on and report deltas.
    #[arg(long = "balance-study")]
    balance_study: bool,
    /// SMOTE-balance every cell (ignored by the balancing study).
    #[arg(long)]
    balance: bool,
    /// Record wall-clock seconds (outputs then differ between runs).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV report path.
    #[arg(long)]
    out: PathBuf,
    /// Full JSON report path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    text: String,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Class sizes 200 down to 25 instead of 100 each.
    #[arg(long)]
    skewed: bool,
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let ratios: [f64; 3] = parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected three ratios, got {}", v.len()))?;
    SplitSpec::new(ratios, 0).map_err(|e| e.to_string())?;
    Ok(ratios)
}

fn parse_feature(s: &str) -> Result<FeatureKind, String> {
    s.trim().parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.trim().parse().map_err(|e: Error| e.to_string())
}

struct Io<'a> {
    stdin: &'a mut dyn BufRead,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

type CmdResult = Result<(), Error>;

fn write_file(path: &Path, content: &str) -> CmdResult {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn console(e: std::io::Error) -> Error {
    Error::io("<console>", e)
}

/// Flags over config file over built-in defaults.
fn resolve_config(path: Option<&Path>, seed_flag: Option<u64>) -> Result<(ExperimentConfig, u64, Vec<crate::manifest::InputDigest>), Error> {
    let (cfg, digests) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let cfg: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| Error::data(format!("config {}: {e}", p.display())))?;
            (cfg, vec![digest_file(p)?])
        }
        None => (ExperimentConfig::default(), Vec::new()),
    };
    let seed = seed_flag.unwrap_or(cfg.seed);
    Ok((ExperimentConfig { seed, ..cfg }, seed, digests))
}

fn announce(io: &mut Io, manifest: &RunManifest) -> CmdResult {
    let line = serde_json::to_string(&manifest.stamped())?;
    writeln!(io.stderr, "manifest {} {line}", manifest.hash()).map_err(console)
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    manifest_hash: String,
    manifest: RunManifest,
    report: &'a T,
}

fn report_json<T: Serialize>(manifest: &RunManifest, report: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(&Report {
        manifest_hash: manifest.hash(),
        manifest: manifest.for_output(),
        report,
    })?)
}

fn ingest(a: &IngestArgs, io: &mut Io) -> CmdResult {
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let format = match a.format {
        InputFormat::Auto => match ext {
            "jsonl" | "json" => InputFormat::Jsonl,
            "csv" => InputFormat::Csv,
            _ => InputFormat::Text,
        },
        f => f,
    };
    let corpus = match format {
        InputFormat::Jsonl => parse_corpus(&text)?,
        InputFormat::Csv => ingest_csv(&text)?,
        _ => Corpus::new(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| Sample::new(format!("s{:06}", i + 1), l.trim()))
                .collect(),
        )?,
    };
    save_corpus(&corpus, &a.output)?;
    writeln!(io.stdout, "ingested {} samples", corpus.len()).map_err(console)
}

/// Needs a `text` column; `id`, `source` and `label` are optional.
fn ingest_csv(text: &str) -> Result<Corpus, Error> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::data(format!("csv header: {e}")))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = col("text").ok_or_else(|| Error::data("csv input needs a `text` column"))?;
    let (id_col, source_col, label_col) = (col("id"), col("source"), col("label"));
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(format!("csv record at line {line}: {e}")))?;
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).map(str::trim).filter(|v| !v.is_empty());
        let id = field(id_col).map(str::to_string).unwrap_or_else(|| format!("s{:06}", i + 1));
        let mut s = Sample::new(id, rec.get(text_col).unwrap_or(""));
        if let Some(src) = field(source_col) {
            s.source = serde_json::from_value::<Source>(serde_json::Value::String(src.to_string()))
                .map_err(|_| Error::data(format!("unknown source `{src}` at line {line}")))?;
        }
        if let Some(l) = field(label_col) {
            s.label = Some(
                l.parse::<EmotionLabel>()
                    .map_err(|_| Error::data(format!("unknown label `{l}` at line {line}")))?,
            );
        }
        samples.push(s);
    }
    // Corpus::new does not know line numbers, so check duplicates here.
    let mut seen = std::collections::HashSet::new();
    for s in &samples {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::data(format!("duplicate id `{}`", s.id)));
        }
    }
    Corpus::new(samples)
}

enum Answer {
    Label(EmotionLabel),
    Skip,
    Quit,
}

fn ask(io: &mut Io, prompt: &str) -> Result<Answer, Error> {
    let names: Vec<&str> = EmotionLabel::ALL.iter().map(|l| l.as_str()).collect();
    loop {
        write!(io.stdout, "{prompt} [{} | 0-7 | s=skip | q=quit]: ", names.join(" ")).map_err(console)?;
        io.stdout.flush().map_err(console)?;
        let mut line = String::new();
        if io.stdin.read_line(&mut line).map_err(console)? == 0 {
            writeln!(io.stdout).map_err(console)?;
            return Ok(Answer::Quit);
        }
        let t = line.trim();
        match t {
            "q" | "quit" => return Ok(Answer::Quit),
            "" | "s" | "skip" => return Ok(Answer::Skip),
            _ => {}
        }
        if let Ok(i) = t.parse::<usize>() {
            if let Ok(l) = EmotionLabel::from_index(i) {
                return Ok(Answer::Label(l));
            }
        }
        match t.parse::<EmotionLabel>() {
            Ok(l) => return Ok(Answer::Label(l)),
            Err(_) => writeln!(io.stdout, "not a label: `{t}`").map_err(console)?,
        }
    }
}

fn annotate(a: &AnnotateArgs, io: &mut Io) -> CmdResult {
    let mut corpus = load_corpus(&a.corpus)?;
    let out = a.output.clone().unwrap_or_else(|| a.corpus.clone());
    let pending: Vec<String> = corpus
        .samples()
        .iter()
        .filter(|s| s.label.is_none() && !s.adjudicated && !s.votes.contains_key(&a.annotator))
        .map(|s| s.id.clone())
        .collect();
    let total = pending.len();
    let (mut voted, mut quit) = (0usize, false);
    for (n, id) in pending.iter().enumerate() {
        let text = corpus.get(id).map(|s| s.text.clone()).unwrap_or_default();
        writeln!(io.stdout, "[{}/{}] {id}: {text}", n + 1, total).map_err(console)?;
        match ask(io, "label")? {
            Answer::Quit => {
                quit = true;
                break;
            }
            Answer::Skip => continue,
            Answer::Label(l) => {
                corpus = corpus.record_vote(id, &a.annotator, l)?;
                voted += 1;
                let s = corpus.get(id).expect("voted sample exists");
                if let Some(label) = s.label {
                    writeln!(io.stdout, "labeled {id} as {label}").map_err(console)?;
                } else if Corpus::is_unresolved(s) {
                    writeln!(io.stdout, "{id} is unresolved and needs a lead annotator").map_err(console)?;
                }
            }
        }
    }
    let mut adjudicated = 0usize;
    if a.lead && !quit {
        let unresolved: Vec<String> = corpus
            .samples()
            .iter()
            .filter(|s| Corpus::is_unresolved(s))
            .map(|s| s.id.clone())
            .collect();
        for id in unresolved {
            let s = corpus.get(&id).expect("listed sample exists");
            let votes: Vec<String> = s.votes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(io.stdout, "unresolved {id}: {} (votes: {})", s.text, votes.join(", ")).map_err(console)?;
            match ask(io, "adjudicate")? {
                Answer::Quit => break,
                Answer::Skip => continue,
                Answer::Label(l) => {
                    corpus = corpus.adjudicate(&id, AnnotatorRole::Lead, l)?;
                    adjudicated += 1;
                }
            }
        }
    }
    // Write to a temporary file first so an interrupted save never truncates the corpus.
    let mut tmp = out.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write_file(&tmp, &corpus_to_jsonl(&corpus)?)?;
    std::fs::rename(&tmp, &out).map_err(|e| Error::io(&out, e))?;
    writeln!(io.stdout, "recorded {voted} votes, {adjudicated} adjudications").map_err(console)
}

fn preprocess(a: &PreprocessArgs, io: &mut Io) -> CmdResult {
    let pre = a.resources.preprocessor()?;
    let corpus = load_corpus(&a.corpus)?;
    let out = corpus.map_text(|t| pre.process(t));
    save_corpus(&out, &a.output)?;
    writeln!(io.stdout, "preprocessed {} samples", out.len()).map_err(console)
}

fn split(a: &SplitArgs, io: &mut Io) -> CmdResult {
    let spec = SplitSpec::new(a.ratios, a.seed)?;
    let out = stratified_split(&load_corpus(&a.corpus)?, &spec)?;
    save_corpus(&out, &a.output)?;
    let counts = [crate::corpus::Split::Train, crate::corpus::Split::Val, crate::corpus::Split::Test]
        .map(|s| out.split_samples(s).count());
    writeln!(io.stdout, "train {} val {} test {}", counts[0], counts[1], counts[2]).map_err(console)
}

fn train(a: &TrainArgs, io: &mut Io) -> CmdResult {
    let (cfg, seed, mut inputs) = resolve_config(a.config.as_deref(), a.seed)?;
    inputs.insert(0, digest_file(&a.corpus)?);
    inputs.extend(a.resources.digests()?);
    let mut manifest = RunManifest::new(
        "train",
        serde_json::json!({
            "feature": a.features,
            "model": a.model,
            "balance": a.balance,
            "experiment": cfg,
        }),
    )
    .with_seed("seed", seed);
    manifest.inputs = inputs;
    announce(io, &manifest)?;
    let corpus = load_corpus(&a.corpus)?;
    let pipeline = Pipeline::train(
        &corpus,
        a.resources.preprocessor()?,
        a.features,
        a.model,
        a.balance,
        &cfg,
        seed,
        manifest.for_output(),
    )?;
    pipeline.save(&a.out)?;
    writeln!(io.stdout, "trained {}/{} -> {}", a.features, a.model, a.out.display()).map_err(console)
}

fn evaluate(a: &EvaluateArgs, io: &mut Io) -> CmdResult {
    let pipeline = Pipeline::load(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let manifest = RunManifest::new(
        "evaluate",
        serde_json::json!({ "model_manifest_hash": pipeline.manifest.hash() }),
    )
    .with_input(digest_file(&a.model)?)
    .with_input(digest_file(&a.corpus)?);
    announce(io, &manifest)?;
    let mut report = evaluate_pipeline(&pipeline, &corpus)?;
    report.manifest_hash = Some(manifest.hash());
    write_file(&a.report, &report_json(&manifest, &report)?)?;
    writeln!(
        io.stdout,
        "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
        report.accuracy, report.precision, report.recall, report.f1
    )
    .map_err(console)
}

fn grid(a: &GridArgs, io: &mut Io) -> CmdResult {
    let (cfg, seed, mut inputs) = resolve_config(a.config.as_deref(), a.seed)?;
    inputs.insert(0, digest_file(&a.corpus)?);
    let spec = GridSpec {
        features: a.features.clone(),
        models: a.models.clone(),
        seed,
        balance: a.balance && !a.balance_study,
        timing: a.timing,
        config: cfg,
        ..GridSpec::default()
    };
    let sub = if a.balance_study { "grid --balance-study" } else { "grid" };
    let mut manifest = RunManifest::new(sub, serde_json::to_value(&spec)?).with_seed("seed", seed);
    manifest.inputs = inputs;
    announce(io, &manifest)?;
    let corpus = load_corpus(&a.corpus)?;
    let hash = manifest.hash();
    let (csv, json, rows) = if a.balance_study {
        let mut r = balancing_report(&corpus, &spec)?;
        r.manifest_hash = Some(hash);
        (r.to_csv()?, report_json(&manifest, &r)?, r.pairs.len() * 2)
    } else {
        let mut r = run_grid(&corpus, &spec)?;
        r.manifest_hash = Some(hash);
        (r.to_csv()?, report_json(&manifest, &r)?, r.rows.len())
    };
    write_file(&a.out, &csv)?;
    if let Some(p) = &a.json {
        write_file(p, &json)?;
    }
    writeln!(io.stdout, "wrote {rows} rows to {}", a.out.display()).map_err(console)
}

fn predict(a: &PredictArgs, io: &mut Io) -> CmdResult {
    let pipeline = Pipeline::load(&a.model)?;
    let p = pipeline.predict_text(&a.text)?;
    let dist: serde_json::Map<String, serde_json::Value> = EmotionLabel::ALL
        .iter()
        .zip(&p.distribution)
        .map(|(l, v)| (l.as_str().to_string(), serde_json::json!(v)))
        .collect();
    let line = serde_json::json!({ "label": p.label, "distribution": dist });
    writeln!(io.stdout, "{line}").map_err(console)
}

fn synth(a: &SynthArgs, io: &mut Io) -> CmdResult {
    let cfg = if a.skewed {
        SynthConfig::skewed(a.seed)
    } else {
        SynthConfig {
            seed: a.seed,
            ..SynthConfig::default()
        }
    };
    let corpus = synth_corpus(&cfg)?;
    save_corpus(&corpus, &a.output)?;
    writeln!(io.stdout, "wrote {} samples", corpus.len()).map_err(console)
}

/// Exit codes: 0 success, 1 usage, 2 data format, 3 training or boosting, 4 I/O.
pub fn run_cli<I, T>(argv: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let mut io = Io { stdin, stdout, stderr };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a, &mut io),
        Command::Annotate(a) => annotate(a, &mut io),
        Command::Preprocess(a) => preprocess(a, &mut io),
        Command::Split(a) => split(a, &mut io),
        Command::Train(a) => train(a, &mut io),
        Command::Evaluate(a) => evaluate(a, &mut io),
        Command::Grid(a) => grid(a, &mut io),
        Command::Predict(a) => predict(a, &mut io),
        Command::Synth(a) => synth(a, &mut io),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(io.stderr, "error: {msg}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str], input: &str) -> (i32, String, String) {
        let mut stdin = input.as_bytes();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_cli(
            std::iter::once("emoforge").chain(args.iter().copied()),
            &mut stdin,
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn no_arguments_is_usage_error() {
        let (code, _, err) = run(&[], "");
        assert_eq!(code, 1);
        assert!(err.contains("Usage"));
    }

    #[test]
    fn bad_ratios_are_usage_errors() {
        let (code, _, _) = run(&["split", "--corpus", "x", "--ratios", "0.5,0.5", "--output", "y"], "");
        assert_eq!(code, 1);
        let (code, _, _) = run(&["split", "--corpus", "x", "--ratios", "0.5,0.3,0.3", "--output", "y"], "");
        assert_eq!(code, 1);
    }

    #[test]
    fn missing_input_is_io_error() {
        let (code, _, err) = run(&["ingest", "--input", "/nonexistent/in.txt", "--output", "/tmp/o"], "");
        assert_eq!(code, 4);
        assert!(err.starts_with("error: "));
        assert_eq!(err.lines().count(), 1);
    }

    #[test]
    fn ratio_parser() {
        assert_eq!(parse_ratios("0.7, 0.15,0.15").unwrap(), [0.7, 0.15, 0.15]);
        assert!(parse_ratios("a,b,c").is_err());
    }
}
