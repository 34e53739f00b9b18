mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use capbias_core::biasstats::{
    amplification_ratio, build_bias_profile, chi_squared_1dof, conflict_census, two_person_phrase_stats,
    usage_histogram,
};
use capbias_core::datasetgen::{
    build_gender_classification_set, build_unusual_set, DEFAULT_MIN_COUNT, DEFAULT_TOP_K,
};
use capbias_core::formats::{parse_predictions, write_jsonl};
use capbias_core::metrics::{bleu_report, references_by_image, Smoothing};
use capbias_core::neutralizer::{neutralize_corpus, write_edit_tsv};
use capbias_core::reinjector::{inject_corpus, parse_labels, InjectOptions};
use capbias_core::report::{
    write_bias_tsv, write_census_tsv, write_json_report, write_phrase_tsv, write_usage_tsv, ReportHeader,
};
use capbias_core::{corpus, load_corpus, load_lexicon, tokenize, Corpus, Lexicon, Number, Split};

use output::{Outputs, UsageError};

#[derive(Parser)]
#[command(name = "capbias", version, about = "Gender-bias analysis and caption rewriting for COCO caption corpora")]
struct Cli {
    /// Lexicon JSON file; the built-in lexicon is used when absent.
    #[arg(long, global = true, env = "CAPBIAS_LEXICON")]
    lexicon: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a corpus, print counts.
    IngestCheck(CorpusArgs),
    /// Rewrite captions with gender-neutral words.
    Neutralize(NeutralizeArgs),
    /// Corpus statistics reports
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Build derived datasets
    #[command(subcommand)]
    Build(BuildCommand),
    /// Put classifier gender labels into neutral predicted captions.
    Inject(InjectArgs),
    /// Score predictions with BLEU-1..4.
    Bleu(BleuArgs),
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Per-word male/female co-occurrence and bias.
    Bias(StatsArgs),
    /// Conflicting-annotation census.
    Census(StatsArgs),
    /// Gendered vs neutral usage histogram with a chi-squared test.
    Usage(UsageArgs),
    /// Two-person "X and Y" phrase statistics.
    Phrases(PhraseArgs),
}

#[derive(Subcommand)]
enum BuildCommand {
    /// Male/female/person crop specs from caption agreement.
    ClassificationSet(ClassificationArgs),
    /// Evaluation images pairing a gender with opposite-biased words.
    UnusualSet(UnusualArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// COCO captions JSON (repeatable).
    #[arg(long, required = true)]
    captions: Vec<PathBuf>,
    /// COCO instances JSON (repeatable).
    #[arg(long)]
    instances: Vec<PathBuf>,
    /// Split assignment JSON: {"train": [ids], "val": [...], "test": [...]}.
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NeutralizeArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Only rewrite images of this split.
    #[arg(long)]
    subset: Option<Split>,
    /// Also write the per-token edit list as TSV.
    #[arg(long)]
    edits: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Tsv,
    Json,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "train")]
    subset: Split,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum NumberArg {
    Singular,
    Plural,
}

#[derive(Args)]
struct UsageArgs {
    #[command(flatten)]
    stats: StatsArgs,
    #[arg(long, value_enum, default_value = "singular")]
    number: NumberArg,
}

#[derive(Args)]
struct PhraseArgs {
    #[command(flatten)]
    stats: StatsArgs,
    /// Predictions JSONL; adds their phrase stats and the amplification ratio.
    #[arg(long)]
    pred: Option<PathBuf>,
}

#[derive(Args)]
struct ClassificationArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "train")]
    subset: Split,
    /// Summary JSON path (default: <out>.summary.json, or stderr).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct UnusualArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Split the bias profile is built from.
    #[arg(long, default_value = "train")]
    profile_split: Split,
    /// Split the images are selected from.
    #[arg(long, default_value = "test")]
    eval_split: Split,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct InjectArgs {
    /// Neutral predictions JSONL ({"image_id", "caption"}).
    #[arg(long)]
    pred: PathBuf,
    /// Classifier labels JSONL ({"image_id", "instances": [{"bbox", "area", "label"}]}).
    #[arg(long)]
    labels: PathBuf,
    /// Render person-labelled youngsters as "child"/"children".
    #[arg(long)]
    prefer_child: bool,
    /// Per-caption injection reports as JSONL.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothingArg {
    None,
    Epsilon,
}

#[derive(Args)]
struct BleuArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Reference captions, COCO captions JSON.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    smoothing: SmoothingArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    write_jsonl(items, &mut b)?;
    Ok(b)
}

struct Ctx {
    lexicon: Lexicon,
    lexicon_path: Option<PathBuf>,
    force: bool,
}

impl Ctx {
    fn outputs(&self, subcommand: &str, out: Option<PathBuf>) -> Result<Outputs> {
        // fail before loading anything; finish() checks again for side files
        if let Some(p) = out.as_ref().filter(|p| !self.force && p.exists()) {
            return Err(UsageError(format!("{} already exists; pass --force to overwrite", p.display())).into());
        }
        let mut o = Outputs::new(subcommand, out, self.force);
        o.lexicon_version(self.lexicon.version());
        if let Some(p) = &self.lexicon_path {
            o.input(p)?;
        }
        Ok(o)
    }

    fn corpus(&self, args: &CorpusArgs, o: &mut Outputs) -> Result<Corpus> {
        o.inputs(&args.captions)?;
        o.inputs(&args.instances)?;
        o.input(&args.split)?;
        Ok(load_corpus(&args.captions, &args.instances, args.split.clone())?)
    }
}

/// Writes a summary to its own file, or to stderr when there is nowhere to put it.
fn emit_summary<T: Serialize>(o: &mut Outputs, explicit: Option<PathBuf>, summary: &T) -> Result<()> {
    let bytes = json_bytes(summary)?;
    match explicit.or_else(|| o.sibling(".summary.json")) {
        Some(p) => o.file(p, bytes),
        None => eprint!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn stats_report(
    ctx: &Ctx,
    name: &str,
    args: &StatsArgs,
    o: &mut Outputs,
) -> Result<(Corpus, ReportHeader)> {
    o.param("subset", args.subset);
    o.param("format", args.format);
    let corpus = ctx.corpus(&args.corpus, o)?;
    if corpus.images_in(args.subset).next().is_none() {
        return Err(capbias_core::Error::Input(format!("split {} contains no images", args.subset)).into());
    }
    log::info!("{name}: {} images in {}", corpus.images_in(args.subset).count(), args.subset);
    let header = ReportHeader::new(&corpus, Some(args.subset), &ctx.lexicon);
    Ok((corpus, header))
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        lexicon: load_lexicon(cli.lexicon.as_deref())?,
        lexicon_path: cli.lexicon.clone(),
        force: cli.force,
    };
    let lex = &ctx.lexicon;
    match cli.command {
        Command::IngestCheck(args) => {
            let mut o = ctx.outputs("ingest-check", args.out.clone())?;
            let corpus = ctx.corpus(&args, &mut o)?;
            #[derive(Serialize)]
            struct Check<'a> {
                provenance: &'a corpus::Provenance,
                images: BTreeMap<Split, usize>,
                captions: usize,
                person_instances: usize,
                load_stats: &'a corpus::LoadStats,
            }
            let check = Check {
                provenance: corpus.provenance(),
                images: corpus.split_sizes(),
                captions: corpus.captions().len(),
                person_instances: corpus.instances().len(),
                load_stats: corpus.load_stats(),
            };
            o.primary(json_bytes(&check)?);
            o.finish()
        }
        Command::Neutralize(args) => {
            let mut o = ctx.outputs("neutralize", args.corpus.out.clone())?;
            o.param("subset", args.subset);
            let corpus = ctx.corpus(&args.corpus, &mut o)?;
            let result = neutralize_corpus(lex, &corpus, args.subset);
            log::info!(
                "neutralized {} of {} captions ({} edits)",
                result.stats.captions_edited,
                result.stats.captions,
                result.stats.total_edits
            );
            let mut bytes = serde_json::to_vec(&result.captions)?;
            bytes.push(b'\n');
            o.primary(bytes);
            if let Some(p) = args.edits {
                let mut tsv = Vec::new();
                write_edit_tsv(&result.records, &mut tsv)?;
                o.file(p, tsv);
            }
            o.param("edit_stats", &result.stats);
            o.finish()
        }
        Command::Stats(StatsCommand::Bias(args)) => {
            let mut o = ctx.outputs("stats bias", args.corpus.out.clone())?;
            let (corpus, header) = stats_report(&ctx, "bias", &args, &mut o)?;
            let profile = build_bias_profile(lex, &corpus, args.subset)?;
            let mut buf = Vec::new();
            match args.format {
                Format::Tsv => write_bias_tsv(&header, &profile, &mut buf)?,
                Format::Json => write_json_report(&header, &profile, &mut buf)?,
            }
            o.primary(buf);
            o.finish()
        }
        Command::Stats(StatsCommand::Census(args)) => {
            let mut o = ctx.outputs("stats census", args.corpus.out.clone())?;
            let (corpus, header) = stats_report(&ctx, "census", &args, &mut o)?;
            let census = conflict_census(lex, &corpus, args.subset);
            let mut buf = Vec::new();
            match args.format {
                Format::Tsv => write_census_tsv(&header, &census, &mut buf)?,
                Format::Json => write_json_report(&header, &census, &mut buf)?,
            }
            o.primary(buf);
            o.finish()
        }
        Command::Stats(StatsCommand::Usage(args)) => {
            let mut o = ctx.outputs("stats usage", args.stats.corpus.out.clone())?;
            o.param("number", args.number);
            let (corpus, header) = stats_report(&ctx, "usage", &args.stats, &mut o)?;
            let number = match args.number {
                NumberArg::Singular => Number::Singular,
                NumberArg::Plural => Number::Plural,
            };
            let hist = usage_histogram(lex, &corpus, args.stats.subset, number);
            let test = match chi_squared_1dof(&hist.contingency()) {
                Ok(t) => Some(t),
                Err(e) => {
                    log::warn!("chi-squared test skipped: {e}");
                    None
                }
            };
            let mut buf = Vec::new();
            match args.stats.format {
                Format::Tsv => write_usage_tsv(&header, &hist, test.as_ref(), &mut buf)?,
                Format::Json => {
                    #[derive(Serialize)]
                    struct Usage<'a> {
                        histogram: &'a capbias_core::biasstats::UsageHistogram,
                        contingency: capbias_core::biasstats::Contingency2x2,
                        chi_squared: Option<capbias_core::biasstats::ChiSquared>,
                    }
                    let report = Usage {
                        histogram: &hist,
                        contingency: hist.contingency(),
                        chi_squared: test,
                    };
                    write_json_report(&header, &report, &mut buf)?
                }
            }
            o.primary(buf);
            o.finish()
        }
        Command::Stats(StatsCommand::Phrases(args)) => {
            let mut o = ctx.outputs("stats phrases", args.stats.corpus.out.clone())?;
            let (corpus, header) = stats_report(&ctx, "phrases", &args.stats, &mut o)?;
            let subset: Vec<&[String]> = corpus
                .images_in(args.stats.subset)
                .flat_map(|img| corpus.captions_of(img.image_id).unwrap_or_default())
                .map(|c| c.tokens.as_slice())
                .collect();
            let train = two_person_phrase_stats(lex, &subset);
            let pred = match &args.pred {
                Some(p) => {
                    o.input(p)?;
                    let preds = parse_predictions(&p.display().to_string(), &read(p)?)?;
                    let toks: Vec<Vec<String>> = preds.iter().map(|p| tokenize(&p.caption)).collect();
                    let stats = two_person_phrase_stats(lex, &toks);
                    let ratio = match amplification_ratio(&train, &stats) {
                        Ok(r) => Some(r),
                        Err(e) => {
                            log::warn!("{e}");
                            None
                        }
                    };
                    Some((stats, ratio))
                }
                None => None,
            };
            let mut buf = Vec::new();
            match args.stats.format {
                Format::Tsv => write_phrase_tsv(&header, &train, pred.as_ref().map(|(s, r)| (s, *r)), &mut buf)?,
                Format::Json => {
                    #[derive(Serialize)]
                    struct Phrases {
                        corpus: capbias_core::biasstats::PhraseStats,
                        predictions: Option<capbias_core::biasstats::PhraseStats>,
                        amplification: Option<f64>,
                    }
                    let report = Phrases {
                        corpus: train,
                        predictions: pred.map(|p| p.0),
                        amplification: pred.and_then(|p| p.1),
                    };
                    write_json_report(&header, &report, &mut buf)?
                }
            }
            o.primary(buf);
            o.finish()
        }
        Command::Build(BuildCommand::ClassificationSet(args)) => {
            let mut o = ctx.outputs("build classification-set", args.corpus.out.clone())?;
            o.param("subset", args.subset);
            let corpus = ctx.corpus(&args.corpus, &mut o)?;
            let (specs, summary) = build_gender_classification_set(lex, &corpus, args.subset)?;
            o.primary(jsonl_bytes(&specs)?);
            emit_summary(&mut o, args.summary, &summary)?;
            o.finish()
        }
        Command::Build(BuildCommand::UnusualSet(args)) => {
            let mut o = ctx.outputs("build unusual-set", args.corpus.out.clone())?;
            o.param("profile_split", args.profile_split);
            o.param("eval_split", args.eval_split);
            o.param("top_k", args.top_k);
            o.param("min_count", args.min_count);
            let corpus = ctx.corpus(&args.corpus, &mut o)?;
            if args.profile_split == args.eval_split {
                return Err(capbias_core::Error::Contamination(format!(
                    "profile and evaluation split are both {}",
                    args.eval_split
                ))
                .into());
            }
            let profile = build_bias_profile(lex, &corpus, args.profile_split)?;
            let (instances, summary) =
                build_unusual_set(lex, &corpus, &profile, args.eval_split, args.top_k, args.min_count)?;
            o.primary(jsonl_bytes(&instances)?);
            emit_summary(&mut o, args.summary, &summary)?;
            o.finish()
        }
        Command::Inject(args) => {
            let mut o = ctx.outputs("inject", args.out.clone())?;
            o.param("prefer_child", args.prefer_child);
            o.input(&args.pred)?;
            o.input(&args.labels)?;
            let preds = parse_predictions(&args.pred.display().to_string(), &read(&args.pred)?)?;
            let labels = parse_labels(&args.labels.display().to_string(), &read(&args.labels)?)?;
            let opts = InjectOptions {
                prefer_child: args.prefer_child,
            };
            let result = inject_corpus(lex, &preds, &labels, opts)?;
            if result.stats.missing_labels > 0 {
                log::warn!("{} predictions have no labels and were left unchanged", result.stats.missing_labels);
            }
            o.primary(jsonl_bytes(&result.predictions)?);
            if let Some(p) = args.report {
                o.file(p, jsonl_bytes(&result.reports)?);
            }
            emit_summary(&mut o, args.summary, &result.stats)?;
            o.finish()
        }
        Command::Bleu(args) => {
            let mut o = ctx.outputs("bleu", args.out.clone())?;
            let smoothing = match args.smoothing {
                SmoothingArg::None => Smoothing::None,
                SmoothingArg::Epsilon => Smoothing::Epsilon,
            };
            o.param("smoothing", smoothing);
            o.input(&args.pred)?;
            o.input(&args.refs)?;
            let preds = parse_predictions(&args.pred.display().to_string(), &read(&args.pred)?)?;
            let refs = corpus::parse_captions(&args.refs.display().to_string(), &read(&args.refs)?)?;
            let report = bleu_report(&preds, &references_by_image(&refs), smoothing)?;
            o.primary(json_bytes(&report)?);
            o.finish()
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<capbias_core::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let threads = cli.threads;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .expect("thread pool");
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
