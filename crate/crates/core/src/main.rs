use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;

use convlab::cluster::{kmeans, overcluster_k, read_assignment_csv, write_assignment_csv, KMeansConfig};
use convlab::data::{dataset_stats, featurize, load_dataset, load_embeddings, save_embeddings, Dataset, Field, Split};
use convlab::experiment::{ablation, load_features, run_experiment, ExperimentConfig, FeatureSource};
use convlab::metrics::{evaluate, MetricReport};
use convlab::model::{init_model, HeadWeights, ModelConfig, RepSource};
use convlab::postprocess::{infill_known_intents, summarize_clusters, SummaryConfig};
use convlab::protocol::{mask, MaskedView};
use convlab::report::{render_report, ReportFormat};
use convlab::schemes::{
    static_representations, train_cdac, train_dac, train_supervised, write_log_jsonl, Scheme, TrainConfig, TrainingSet,
};
use convlab::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "convlab", version, about = "Novel intent discovery over conversational data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// JSONL dataset
    #[arg(long)]
    dataset: PathBuf,
    /// Seed for assigning splits to examples that lack one
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl DatasetArgs {
    fn load(&self) -> Result<Dataset> {
        load_dataset(&self.dataset, self.split_seed)
    }
}

#[derive(Args, Debug)]
struct FeatureArgs {
    /// EMB1 matrix for the question field
    #[arg(long)]
    emb_q: Option<PathBuf>,
    /// EMB1 matrix for the answer field
    #[arg(long)]
    emb_a: Option<PathBuf>,
    /// EMB1 matrix for the question-answer field
    #[arg(long)]
    emb_qa: Option<PathBuf>,
    /// Featurizer dimension when no embeddings are given
    #[arg(long, default_value_t = convlab::data::DEFAULT_FEATURE_DIM)]
    dim: usize,
}

impl FeatureArgs {
    fn source(&self) -> FeatureSource {
        if self.emb_q.is_none() && self.emb_a.is_none() && self.emb_qa.is_none() {
            FeatureSource::Featurize { dim: self.dim }
        } else {
            FeatureSource::Embeddings {
                q: self.emb_q.clone(),
                a: self.emb_a.clone(),
                qa: self.emb_qa.clone(),
            }
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hash-featurize one field into an EMB1 matrix
    Featurize {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value = "Q")]
        field: Field,
        #[arg(long, default_value_t = convlab::data::DEFAULT_FEATURE_DIM)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write dataset statistics as JSON
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Mask intents and labels of the train split
    Mask {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        novel_ratio: f64,
        #[arg(long, default_value_t = 0.5)]
        keep_ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a representation model and export representations
    Train {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        features: FeatureArgs,
        /// Masked view from `mask`
        #[arg(long)]
        view: PathBuf,
        #[arg(long, default_value = "cdac")]
        scheme: Scheme,
        /// Head weights, e.g. `1,0,0`, `1/3,1/3,1/3` or `conv`
        #[arg(long, default_value = "q")]
        lambda: HeadWeights,
        /// Representation source, e.g. `QA` or `Q+A`
        #[arg(long)]
        rep_source: Option<RepSource>,
        #[arg(long, default_value_t = 128)]
        rep_dim: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        max_epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model checkpoint
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSONL training log
        #[arg(long)]
        log: Option<PathBuf>,
        /// EMB1 representations of every dataset row
        #[arg(long)]
        reps_out: PathBuf,
    },
    /// K-means over representations of one split
    Cluster {
        #[command(flatten)]
        data: DatasetArgs,
        /// EMB1 representations, one row per dataset example
        #[arg(long)]
        reps: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitArg,
        /// Number of clusters; defaults to the number of intents in the split
        #[arg(long)]
        k: Option<usize>,
        /// Over-clustering factor applied to the intent count
        #[arg(long, conflicts_with = "k")]
        overcluster: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        n_init: usize,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a cluster assignment
    Evaluate {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        view: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Row label for reports
        #[arg(long, default_value = "run")]
        scheme: String,
        /// Dataset label; the file stem by default
        #[arg(long)]
        dataset_id: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a multi-seed experiment from a JSON config
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Representation and batch size preset, e.g. `purchase`
        #[arg(long)]
        preset: Option<String>,
        /// Run every head-weight variant of an ablation, e.g. `conversational`
        #[arg(long)]
        ablation: Option<String>,
        /// Select the learning rate per seed by validation AVG
        #[arg(long)]
        lr_sweep: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize clusters and flag likely-known ones
    Summarize {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        assignment: PathBuf,
        /// Masked view; enables known-intent flags together with --reps
        #[arg(long, requires = "reps")]
        view: Option<PathBuf>,
        /// EMB1 representations, one row per dataset example
        #[arg(long)]
        reps: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render metrics of many runs as a table
    Report {
        /// metrics.json files or directories searched recursively
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Scheme label used for significance tests
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy)]
struct SplitArg(Split);

impl std::str::FromStr for SplitArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitArg(Split::Train)),
            "val" => Ok(SplitArg(Split::Val)),
            "test" => Ok(SplitArg(Split::Test)),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn rows_of(dataset: &Dataset, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            dataset
                .position(id)
                .ok_or_else(|| Error::Validation(format!("id {id:?} is not in the dataset")))
        })
        .collect()
}

fn collect_metric_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            if e.is_dir() || e.file_name().is_some_and(|n| n == "metrics.json") {
                collect_metric_files(&e, out)?;
            }
        }
    } else {
        out.push(path.to_owned());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Featurize {
            data,
            field,
            dim,
            out,
            stats,
        } => {
            let dataset = data.load()?;
            let m = featurize(&dataset, field, dim)?;
            save_embeddings(&out, m.view())?;
            if let Some(p) = stats {
                write_output(Some(&p), &to_json(&dataset_stats(&dataset)?)?)?;
            }
            log::info!("wrote {}x{} matrix to {}", m.nrows(), m.ncols(), out.display());
        }
        Command::Mask {
            data,
            seed,
            novel_ratio,
            keep_ratio,
            out,
        } => {
            let view = mask(&data.load()?, novel_ratio, keep_ratio, seed)?;
            view.save(&out)?;
            log::info!(
                "{} known / {} novel intents, {} labeled examples",
                view.known_intents.len(),
                view.novel_intents.len(),
                view.labeled_ids.len()
            );
        }
        Command::Train {
            data,
            features,
            view,
            scheme,
            lambda,
            rep_source,
            rep_dim,
            batch_size,
            lr,
            max_epochs,
            delta,
            seed,
            out,
            log,
            reps_out,
        } => {
            let dataset = data.load()?;
            let view = MaskedView::load(&view)?;
            lambda.validate()?;
            let source = rep_source.unwrap_or_else(|| ModelConfig::new(1, 2, lambda).rep_source);
            let mut fields = source.fields();
            if scheme != Scheme::Static {
                fields.extend(lambda.active());
            }
            fields.sort_by_key(|f| f.index());
            fields.dedup();
            let matrices = load_features(&dataset, &features.source(), &fields)?;
            if scheme == Scheme::Static {
                let reps = static_representations(&matrices, &source)?;
                return save_embeddings(&reps_out, reps.view());
            }
            let input_dim = matrices.require(fields[0])?.ncols();
            let mut config = ModelConfig::new(input_dim, rep_dim, lambda);
            config.rep_source = source;
            let model = init_model(config, seed)?;
            let train = TrainConfig {
                batch_size,
                learning_rate: lr,
                max_epochs,
                delta,
                ..TrainConfig::default()
            };
            let set = TrainingSet::from_masked(&dataset, &view)?;
            let outcome = match scheme {
                Scheme::Dac => train_dac(model, &matrices, &set.rows, &train, seed)?,
                Scheme::Cdac => train_cdac(model, &matrices, &set, &train, seed)?,
                Scheme::Supervised => train_supervised(model, &matrices, &set, &train, seed)?,
                Scheme::Static => unreachable!(),
            };
            if let Some(p) = out {
                outcome.model.save(p)?;
            }
            if let Some(p) = log {
                write_log_jsonl(p, &outcome.log)?;
            }
            let reps = outcome.model.extract_representations(&matrices, None)?;
            save_embeddings(&reps_out, reps.view())?;
        }
        Command::Cluster {
            data,
            reps,
            split,
            k,
            overcluster,
            seed,
            n_init,
            max_iter,
            out,
        } => {
            let dataset = data.load()?;
            let reps = load_embeddings(&reps)?;
            if reps.nrows() != dataset.len() {
                return Err(Error::Dimension {
                    expected: dataset.len(),
                    actual: reps.nrows(),
                });
            }
            let rows = dataset.split_rows(split.0);
            let n_intents = dataset.intents_of(&rows).len();
            let k = match (k, overcluster) {
                (Some(k), _) => k,
                (None, Some(f)) => overcluster_k(n_intents, f)?,
                (None, None) => n_intents,
            };
            let result = kmeans(reps.select(Axis(0), &rows).view(), k, seed, KMeansConfig { n_init, max_iter })?;
            let ids: Vec<&str> = rows.iter().map(|&r| dataset.examples()[r].id.as_str()).collect();
            write_assignment_csv(&out, &ids, &result.assignment)?;
            log::info!("k = {k}, inertia {:.6}", result.inertia);
        }
        Command::Evaluate {
            data,
            view,
            assignment,
            scheme,
            dataset_id,
            out,
        } => {
            let dataset = data.load()?;
            let view = MaskedView::load(&view)?;
            let (ids, clusters): (Vec<String>, Vec<usize>) = read_assignment_csv(&assignment)?.into_iter().unzip();
            let rows = rows_of(&dataset, &ids)?;
            let truth: Vec<&str> = rows
                .iter()
                .map(|&r| {
                    dataset.examples()[r]
                        .intent
                        .as_deref()
                        .ok_or_else(|| Error::Validation(format!("example {:?} has no intent", dataset.examples()[r].id)))
                })
                .collect::<Result<_>>()?;
            let known: BTreeSet<String> = view.known_intents.iter().cloned().collect();
            let report = MetricReport {
                dataset: dataset_id.unwrap_or_else(|| {
                    data.dataset
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                }),
                scheme,
                seed: view.seed,
                metrics: evaluate(&truth, &clusters, &known)?,
            };
            write_output(out.as_deref(), &to_json(&report)?)?;
        }
        Command::Experiment {
            config,
            preset,
            ablation: variants,
            lr_sweep,
            output,
        } => {
            let mut base = ExperimentConfig::load(&config)?;
            if let Some(p) = preset {
                base.apply_preset(&p)?;
            }
            if lr_sweep {
                base.lr_sweep = true;
            }
            if let Some(o) = output {
                base.output_dir = o;
            }
            let configs = match variants {
                Some(name) => ablation(&name)?
                    .into_iter()
                    .map(|(label, lambda)| ExperimentConfig {
                        name: Some(format!("{}[{label}]", base.scheme)),
                        lambda,
                        ..base.clone()
                    })
                    .collect(),
                None => vec![base],
            };
            for cfg in configs {
                let outcome = run_experiment(&cfg)?;
                println!(
                    "{}\t{}\tAVG {}",
                    cfg.label(),
                    outcome.dir.display(),
                    convlab::report::format_stat(&outcome.aggregate.avg)
                );
            }
        }
        Command::Summarize {
            data,
            assignment,
            view,
            reps,
            out,
        } => {
            let dataset = data.load()?;
            let (ids, clusters): (Vec<String>, Vec<usize>) = read_assignment_csv(&assignment)?.into_iter().unzip();
            let rows = rows_of(&dataset, &ids)?;
            let messages: Vec<&str> = rows.iter().map(|&r| dataset.examples()[r].question.as_str()).collect();
            let predictions = match (view, reps) {
                (Some(view), Some(reps)) => {
                    let view = MaskedView::load(&view)?;
                    let reps = load_embeddings(&reps)?;
                    if reps.nrows() != dataset.len() {
                        return Err(Error::Dimension {
                            expected: dataset.len(),
                            actual: reps.nrows(),
                        });
                    }
                    let labeled: Vec<(usize, String)> = rows_of(&dataset, &view.labeled_ids)?
                        .into_iter()
                        .filter_map(|r| dataset.examples()[r].intent.clone().map(|i| (r, i)))
                        .collect();
                    let infilled = infill_known_intents(reps.view(), &labeled, &rows)?;
                    let labeled_ids: BTreeSet<&str> = view.labeled_ids.iter().map(String::as_str).collect();
                    Some(
                        rows.iter()
                            .zip(infilled)
                            .map(|(&r, p)| {
                                let ex = &dataset.examples()[r];
                                if labeled_ids.contains(ex.id.as_str()) {
                                    ex.intent.clone()
                                } else {
                                    Some(p.intent)
                                }
                            })
                            .collect::<Vec<_>>(),
                    )
                }
                _ => None,
            };
            let summaries = summarize_clusters(&messages, &clusters, predictions.as_deref(), &SummaryConfig::default())?;
            write_output(out.as_deref(), &to_json(&summaries)?)?;
        }
        Command::Report {
            inputs,
            format,
            baseline,
            out,
        } => {
            let mut files = Vec::new();
            for p in &inputs {
                collect_metric_files(p, &mut files)?;
            }
            let mut records = Vec::with_capacity(files.len());
            for f in files {
                let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
                records.push(serde_json::from_str::<MetricReport>(&text)?);
            }
            write_output(out.as_deref(), &render_report(&records, baseline.as_deref(), format)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
