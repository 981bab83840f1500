use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use userhan::analysis::{self, CategoryLexicon, Scope};
use userhan::config::{apply, KeyValues};
use userhan::corpus::{generate_synthetic, load_corpus, save_corpus, Split, SplitRatios, SyntheticConfig};
use userhan::corpus::Manifest;
use userhan::experiment::{
    self, han_traces, prepare, run_ablation, run_protocol, train_model, ExperimentConfig, ModelKind, RunData,
    TrainedModel, DEFAULT_POST_CAPS,
};
use userhan::han::write_traces;

#[derive(Parser)]
#[command(name = "userhan", version, about = "User-level mental health classification from post histories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (JSON Lines).
    GenSynthetic {
        /// key=value generator settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw nine controls per diagnosed user and split into train/dev/test.
    Prepare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        condition: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a prepared manifest.
    Train {
        #[arg(long, value_parser = parse_model)]
        model: ModelKind,
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the corpus recorded in the manifest.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with the test scores of this run.
        #[arg(long)]
        report: Option<PathBuf>,
        /// CSV with per-epoch training loss and dev scores.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Attention traces (JSON Lines) for every manifest user; HAN only.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Repeat control selection, training and testing over seeds 1..=n.
    Protocol {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        condition: String,
        #[arg(long, value_delimiter = ',', default_value = "han,logreg,svm,charngram", value_parser = parse_model)]
        models: Vec<ModelKind>,
        #[arg(long, default_value_t = 5)]
        resamplings: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Receives runs.csv, summary.csv and history.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// HAN F1 as a function of the number of posts per user.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        condition: String,
        #[arg(long, value_delimiter = ',')]
        caps: Option<Vec<usize>>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Rank the most attended unigrams and bigrams and group them by category.
    AttentionReport {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// predicted-test, predicted, diagnosed or all
        #[arg(long, default_value = "predicted-test", value_parser = parse_scope)]
        scope: Scope,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: userhan::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: userhan::Error| e.to_string())
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    s.parse().map_err(|e: userhan::Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn corpus_path(arg: Option<PathBuf>, manifest: &Manifest) -> Result<PathBuf> {
    match arg.or_else(|| manifest.corpus.as_ref().map(PathBuf::from)) {
        Some(p) => Ok(p),
        None => bail!("no --corpus given and the manifest does not record one"),
    }
}

fn resolve(manifest_path: &Path, corpus: Option<PathBuf>) -> Result<(Manifest, RunData)> {
    let manifest =
        Manifest::load(manifest_path).with_context(|| format!("reading manifest {}", manifest_path.display()))?;
    let path = corpus_path(corpus, &manifest)?;
    let users = load_corpus(&path).with_context(|| format!("reading corpus {}", path.display()))?;
    let data = RunData::resolve(&manifest, &users)?;
    Ok((manifest, data))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic { config, seed, out } => {
            let mut cfg = SyntheticConfig::default();
            if let Some(p) = config {
                let kv = KeyValues::parse(&std::fs::read_to_string(&p)?)?;
                apply(&kv, &mut [&mut cfg]).with_context(|| format!("in {}", p.display()))?;
            }
            let users = generate_synthetic(&cfg, seed)?;
            save_corpus(&out, &users)?;
            println!("wrote {} users to {}", users.len(), out.display());
        }
        Command::Prepare { corpus, condition, seed, out } => {
            let users = load_corpus(&corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
            let mut manifest = prepare(&users, &condition, seed, SplitRatios::default())?;
            manifest.corpus = Some(corpus.display().to_string());
            manifest.save(&out)?;
            let mut table = Vec::new();
            for split in [Split::Train, Split::Dev, Split::Test] {
                table.push(vec![
                    split.to_string(),
                    manifest.count(split, userhan::corpus::Label::Diagnosed).to_string(),
                    manifest.count(split, userhan::corpus::Label::Control).to_string(),
                ]);
            }
            print!("{}", experiment::format_table(&["split", "diagnosed", "control"], &table));
        }
        Command::Train { model, manifest, corpus, config, checkpoint, report, history } => {
            let cfg = load_config(config.as_deref())?;
            let (_, data) = resolve(&manifest, corpus)?;
            let (trained, run) = train_model(model, &data, &cfg)?;
            trained.save(&checkpoint)?;
            let runs = [run];
            if let Some(p) = report {
                experiment::write_runs_csv(create(&p)?, &runs)?;
            }
            if let Some(p) = history {
                experiment::write_history_csv(create(&p)?, &runs)?;
            }
            print!("{}", experiment::runs_table(&runs));
        }
        Command::Evaluate { checkpoint, manifest, corpus, split, threshold, report, traces } => {
            let model = TrainedModel::load(&checkpoint)
                .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
            let (manifest, data) = resolve(&manifest, corpus)?;
            let scores = model.evaluate(data.split(split), threshold)?;
            let header = ["condition", "model", "control_seed", "split", "precision", "recall", "f1"];
            let row = vec![
                manifest.condition.clone(),
                model.kind().to_string(),
                manifest.seed.to_string(),
                split.to_string(),
                format!("{:.6}", scores.precision),
                format!("{:.6}", scores.recall),
                format!("{:.6}", scores.f1),
            ];
            if let Some(p) = report {
                let mut w = csv::Writer::from_writer(create(&p)?);
                w.write_record(header)?;
                w.write_record(&row)?;
                w.flush()?;
            }
            if let Some(p) = traces {
                let TrainedModel::Han(han) = &model else { bail!("attention traces need a HAN checkpoint") };
                let mut all = Vec::new();
                for s in [Split::Train, Split::Dev, Split::Test] {
                    let encoded = han.encode_all(data.split(s));
                    all.extend(han_traces(han, &encoded, Some(s), threshold)?);
                }
                write_traces(create(&p)?, &all)?;
            }
            print!("{}", experiment::format_table(&header, &[row]));
        }
        Command::Protocol { corpus, condition, models, resamplings, config, out_dir } => {
            let cfg = load_config(config.as_deref())?;
            let users = load_corpus(&corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
            let report = run_protocol(&users, &condition, &models, resamplings, SplitRatios::default(), &cfg)?;
            experiment::write_runs_csv(create(&out_dir.join("runs.csv"))?, &report.runs)?;
            experiment::write_summary_csv(create(&out_dir.join("summary.csv"))?, &report.summary)?;
            experiment::write_history_csv(create(&out_dir.join("history.csv"))?, &report.runs)?;
            print!("{}\n{}", experiment::runs_table(&report.runs), experiment::summary_table(&report.summary));
        }
        Command::Ablate { corpus, condition, caps, seeds, config, out_dir } => {
            let cfg = load_config(config.as_deref())?;
            let users = load_corpus(&corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
            let caps = caps.unwrap_or_else(|| DEFAULT_POST_CAPS.to_vec());
            let report = run_ablation(&users, &condition, &caps, seeds, SplitRatios::default(), &cfg)?;
            experiment::write_runs_csv(create(&out_dir.join("runs.csv"))?, &report.runs)?;
            experiment::write_summary_csv(create(&out_dir.join("summary.csv"))?, &report.summary)?;
            experiment::write_history_csv(create(&out_dir.join("history.csv"))?, &report.runs)?;
            print!("{}\n{}", experiment::runs_table(&report.runs), experiment::summary_table(&report.summary));
        }
        Command::AttentionReport { traces, lexicon, scope, out } => {
            let file = File::open(&traces).with_context(|| format!("opening {}", traces.display()))?;
            let traces = userhan::han::read_traces(BufReader::new(file))?;
            let lexicon = match lexicon {
                Some(p) => CategoryLexicon::parse(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("in lexicon {}", p.display()))?,
                None => CategoryLexicon::default(),
            };
            let ranked = analysis::accumulate(&traces, scope)?;
            analysis::write_report_csv(create(&out)?, &ranked, &lexicon)?;
            let mut stdout = std::io::stdout().lock();
            write!(stdout, "{}", analysis::ranking_table(&ranked))?;
            if !lexicon.categories.is_empty() {
                write!(stdout, "\n{}", analysis::category_table(&analysis::categorize(&ranked, &lexicon)))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
