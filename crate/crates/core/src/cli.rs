//! Command-line entry point: `stats`, `train`, `evaluate`, `analyze`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
//! The data manifest resolves from `--data`, then the config file, then the
//! `DOMAINRC_DATA` environment variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    emit_scatter_data, pair_vector_trained, pca_fit_transform, render_scatter_svg,
    select_top_relations, sentence_vector_untrained, InstanceVector, ScatterMode, SentencePooling,
};
use crate::corpus::{Corpus, DomainId, Manifest, Split, ValidationOptions};
use crate::encoding::{EncodingContext, EncodingStrategy};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_seeds, evaluate_domain, predictions_tsv, render_results_table, EvalReport, TableRow,
};
use crate::model::{Encoder, EncoderSpec, RelationModel};
use crate::tokenizer::Tokenizer;
use crate::training::{
    load_checkpoint, parse_seed_list, run_experiment, seeded_rng, set_global_seed, TrainConfig,
    TrainData,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const DATA_ENV: &str = "DOMAINRC_DATA";

#[derive(Debug, Parser)]
#[command(
    name = "domainrc",
    about = "Multi-domain relation classification with domain-encoding strategies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print corpus statistics per source and split.
    Stats(StatsArgs),
    /// Train one strategy (or all six) over the configured seeds.
    Train(TrainArgs),
    /// Evaluate trained checkpoints on a corpus split.
    Evaluate(EvaluateArgs),
    /// Emit PCA scatter data for the representation analyses.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Manifest JSON or corpus directory (falls back to DOMAINRC_DATA).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Flat key=value config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Strategy name, or `all` for every setup.
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated seed list, e.g. `1,2,3`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Fine-to-coarse mapping file override.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Overwrite existing run directories.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Checkpoint directories (as written under <out>/<strategy>/<seed>/checkpoint).
    #[arg(required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "dev")]
    split: String,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for report files (defaults to each checkpoint's parent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// `figure1` (untrained sentence embeddings by domain) or `figure2`
    /// (trained pair representations by label).
    mode: String,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Encoder for figure1 (not fine-tuned).
    #[arg(long, default_value = "bert-base-cased")]
    encoder: String,
    /// Trained baseline checkpoint, required for figure2.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory for the scatter files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// How many most-frequent labels figure2 keeps.
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Sentence pooling for figure1: mean or cls.
    #[arg(long, default_value = "mean")]
    pooling: String,
    #[arg(long, default_value = "dev")]
    split: String,
    /// Seed for untrained-encoder initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also render an SVG next to each CSV.
    #[arg(long)]
    image: bool,
    #[arg(long)]
    force: bool,
}

/// Parses and runs a command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successful exits.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return code;
        }
    };

    let result = match cli.command {
        Command::Stats(args) => cmd_stats(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Analyze(args) => cmd_analyze(args),
    };

    match result {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn resolve_data(flag: Option<PathBuf>, config: Option<&TrainConfig>) -> Result<PathBuf> {
    if let Some(path) = flag {
        return Ok(path);
    }
    if let Some(config) = config {
        return Ok(config.data_manifest.clone());
    }
    match std::env::var(DATA_ENV) {
        Ok(path) if !path.is_empty() => Ok(PathBuf::from(path)),
        _ => Err(Error::Config(format!(
            "no data location: pass --data or set {DATA_ENV}"
        ))),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let manifest = Manifest::from_path(path)?;
    Corpus::load(&manifest, &ValidationOptions::default())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let data = resolve_data(args.data, None)?;
    let corpus = load_corpus(&data)?;
    let stats = corpus.stats();
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats.to_json())?);
    } else {
        print!("{}", stats.render_table());
    }
    Ok(())
}

fn parse_strategies(flag: Option<&str>, config_default: EncodingStrategy) -> Result<Vec<EncodingStrategy>> {
    match flag {
        None => Ok(vec![config_default]),
        Some("all") => Ok(EncodingStrategy::ALL.to_vec()),
        Some(name) => Ok(vec![name.parse()?]),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seeds) = &args.seeds {
        config.seeds = parse_seed_list(seeds)?;
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    if let Some(encoder) = args.encoder {
        config.encoder = encoder;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(batch) = args.batch_size {
        config.batch_size = batch;
    }
    if let Some(epochs) = args.max_epochs {
        config.max_epochs = epochs;
    }
    if let Some(patience) = args.patience {
        config.patience = patience;
    }
    if let Some(mapping) = args.mapping {
        config.type_mapping = Some(mapping);
    }
    config.overwrite |= args.force;
    config.data_manifest = resolve_data(args.data, Some(&config))?;
    config.validate()?;

    let strategies = parse_strategies(args.strategy.as_deref(), config.strategy)?;
    let corpus = load_corpus(&config.data_manifest)?;
    let data = TrainData::from_corpus(&corpus)?;

    let mut rows: Vec<TableRow> = Vec::new();
    let mut failed_seeds = 0usize;
    for strategy in strategies {
        config.strategy = strategy;
        println!(
            "training {} over seeds {:?} (encoder {})",
            strategy.name(),
            config.seeds,
            config.encoder
        );
        let outcome = run_experiment(&config, &data)?;
        for run in &outcome.runs {
            println!(
                "  seed {}: best dev macro-F1 {:.2} over {} epochs -> {}",
                run.seed,
                run.best_dev_macro_f1 * 100.0,
                run.log.epochs.len(),
                run.checkpoint_dir.display()
            );
            if run.train_skipped > 0 {
                println!(
                    "  seed {}: {} training instances skipped (marker truncation)",
                    run.seed, run.train_skipped
                );
            }
        }
        for (seed, err) in &outcome.failures {
            failed_seeds += 1;
            eprintln!("  seed {seed} FAILED: {err}");
        }
        if !outcome.runs.is_empty() {
            let aggregate = aggregate_seeds(&outcome.reports())?;
            rows.push(aggregate.table_row());
        }
    }

    if !rows.is_empty() {
        println!("\ndev results (macro-F1 x100, mean over seeds):");
        print!("{}", render_results_table(&rows));
    }
    if failed_seeds > 0 {
        return Err(Error::Model(format!("{failed_seeds} seed run(s) failed")));
    }
    Ok(())
}

fn evaluate_checkpoint_on_split(
    model: &RelationModel,
    ctx: &EncodingContext,
    corpus: &Corpus,
    split: Split,
    strategy: EncodingStrategy,
    seed: u64,
) -> Result<(EvalReport, Vec<crate::evaluation::PredictionRecord>)> {
    let mut domain_reports = BTreeMap::new();
    let mut all_records = Vec::new();
    for (domain, instances) in corpus.instances_by_domain(split) {
        let (report, records) = evaluate_domain(model, ctx, &instances)?;
        all_records.extend(records.iter().cloned());
        domain_reports.insert(domain, (report, records));
    }
    let report = EvalReport::from_domain_records(
        strategy,
        seed,
        split.name(),
        domain_reports,
        ctx.mapping.source().describe(),
    )?;
    Ok((report, all_records))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let split: Split = args.split.parse()?;
    let data = resolve_data(args.data, None)?;
    let corpus = load_corpus(&data)?;
    let corpus_labels = corpus.label_vocabulary()?;

    let mut by_strategy: BTreeMap<EncodingStrategy, Vec<EvalReport>> = BTreeMap::new();
    for checkpoint in &args.checkpoints {
        let (model, ctx, meta) = load_checkpoint(checkpoint)?;
        if ctx.labels != corpus_labels {
            return Err(Error::Checkpoint(format!(
                "label vocabulary mismatch: checkpoint {} has {} labels, corpus has {}",
                checkpoint.display(),
                ctx.labels.len(),
                corpus_labels.len()
            )));
        }
        let (report, records) =
            evaluate_checkpoint_on_split(&model, &ctx, &corpus, split, meta.strategy, meta.seed)?;

        let out_dir = args
            .out
            .clone()
            .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
        std::fs::create_dir_all(&out_dir)?;
        let report_path = out_dir.join(format!("report-{}-seed{}.json", split.name(), meta.seed));
        let tsv_path = out_dir.join(format!("predictions-{}-seed{}.tsv", split.name(), meta.seed));
        for path in [&report_path, &tsv_path] {
            if path.exists() && !args.force {
                return Err(Error::OutputExists(path.clone()));
            }
        }
        report.save(&report_path)?;
        std::fs::write(&tsv_path, predictions_tsv(&records))?;

        if args.json {
            println!("{}", serde_json::to_string_pretty(&report)?);
        } else {
            println!(
                "{} seed {} on {}: avg macro-F1 {:.2} -> {}",
                meta.strategy.name(),
                meta.seed,
                split.name(),
                report.avg_macro_f1 * 100.0,
                report_path.display()
            );
        }
        by_strategy.entry(meta.strategy).or_default().push(report);
    }

    if !args.json {
        let mut rows = Vec::new();
        for reports in by_strategy.values() {
            rows.push(aggregate_seeds(reports)?.table_row());
        }
        println!("\n{} results (macro-F1 x100, mean over seeds):", split.name());
        print!("{}", render_results_table(&rows));
        if by_strategy
            .values()
            .any(|r| r[0].type_mapping.contains("built-in"))
        {
            println!("note: typed setups used the built-in default fine-to-coarse table");
        }
    }
    Ok(())
}

fn check_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::OutputExists(path.to_path_buf()));
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let split: Split = args.split.parse()?;
    std::fs::create_dir_all(&args.out)?;

    match args.mode.as_str() {
        "figure1" => {
            let pooling: SentencePooling = args.pooling.parse()?;
            let data = resolve_data(args.data, None)?;
            let corpus = load_corpus(&data)?;

            // The domain-representation plot excludes the news domain.
            let sentences: Vec<_> = corpus
                .sentences(split)
                .filter(|s| s.domain != DomainId::News)
                .collect();
            let excluded = corpus.sentences(split).count() - sentences.len();
            if sentences.is_empty() {
                return Err(Error::EmptyCorpus(format!(
                    "no non-news sentences in the {split} split"
                )));
            }

            set_global_seed(args.seed);
            let (encoder, tokenizer) = untrained_encoder(&args.encoder, &sentences)?;
            let vectors: Vec<InstanceVector> = sentences
                .iter()
                .map(|s| sentence_vector_untrained(s, &encoder, &tokenizer, pooling))
                .collect::<Result<_>>()?;

            let projection = pca_fit_transform(&vectors, 2)?;
            let (csv, _) = emit_scatter_data(&projection, &vectors, ScatterMode::Figure1)?;
            let csv_path = args.out.join("figure1.csv");
            check_output(&csv_path, args.force)?;
            std::fs::write(&csv_path, csv)?;
            println!(
                "figure1: {} sentences embedded ({excluded} news sentences excluded) -> {}",
                sentences.len(),
                csv_path.display()
            );
            if args.image {
                let svg_path = args.out.join("figure1.svg");
                check_output(&svg_path, args.force)?;
                std::fs::write(
                    &svg_path,
                    render_scatter_svg(&projection, &vectors, ScatterMode::Figure1)?,
                )?;
                println!("figure1: image -> {}", svg_path.display());
            }
        }
        "figure2" => {
            let checkpoint = args.checkpoint.ok_or_else(|| {
                Error::Config("figure2 needs --checkpoint <trained baseline checkpoint>".to_string())
            })?;
            let (model, ctx, _) = load_checkpoint(&checkpoint)?;
            let data = resolve_data(args.data, None)?;
            let corpus = load_corpus(&data)?;

            let instances = corpus.instances(split);
            let top = select_top_relations(&instances, args.k)?;
            let selected: Vec<_> = instances
                .iter()
                .filter(|i| top.contains(&i.label))
                .collect();

            let mut vectors = Vec::with_capacity(selected.len());
            let mut skipped = 0usize;
            for instance in &selected {
                match pair_vector_trained(instance, &model, &ctx) {
                    Ok(v) => vectors.push(v),
                    Err(Error::MarkerTruncated { .. }) => skipped += 1,
                    Err(other) => return Err(other),
                }
            }
            if vectors.is_empty() {
                return Err(Error::EmptyCorpus("no encodable instances".to_string()));
            }

            let projection = pca_fit_transform(&vectors, 2)?;
            let (csv, _) = emit_scatter_data(&projection, &vectors, ScatterMode::Figure2)?;
            let csv_path = args.out.join("figure2.csv");
            check_output(&csv_path, args.force)?;
            std::fs::write(&csv_path, csv)?;
            println!(
                "figure2: {} instances over labels {:?} ({skipped} skipped) -> {}",
                vectors.len(),
                top,
                csv_path.display()
            );
            if args.image {
                let svg_path = args.out.join("figure2.svg");
                check_output(&svg_path, args.force)?;
                std::fs::write(
                    &svg_path,
                    render_scatter_svg(&projection, &vectors, ScatterMode::Figure2)?,
                )?;
                println!("figure2: image -> {}", svg_path.display());
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown analyze mode `{other}` (expected figure1 or figure2)"
            )));
        }
    }
    Ok(())
}

fn untrained_encoder(
    spec: &str,
    sentences: &[&crate::corpus::AnnotatedSentence],
) -> Result<(Encoder, Tokenizer)> {
    match EncoderSpec::parse(spec)? {
        EncoderSpec::Tiny(opts) => {
            let tokenizer = Tokenizer::from_words(
                sentences
                    .iter()
                    .flat_map(|s| s.tokens.iter().map(String::as_str)),
                opts.min_word_freq,
            );
            let mut rng = seeded_rng("analysis-init");
            let encoder = Encoder::new(opts.to_config(tokenizer.vocab_size()), &mut rng)?;
            Ok((encoder, tokenizer))
        }
        EncoderSpec::Pretrained(dir) => crate::model::load_pretrained_encoder(dir),
    }
}
