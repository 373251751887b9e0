//! Multi-seed experiments: mask, train, cluster the test split, score.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{kmeans, overcluster_k, write_assignment_csv, KMeansConfig};
use crate::data::{featurize, load_dataset, load_embeddings, Dataset, Field, FieldMatrices, Split, DEFAULT_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport, Metrics};
use crate::model::{init_model, HeadWeights, ModelConfig, RepModel, RepSource};
use crate::protocol::{mask, seed_plan, MaskedView};
use crate::schemes::{
    static_representations, train_cdac, train_dac, train_supervised, write_log_jsonl, EpochLog, Scheme, TrainConfig,
    TrainingSet,
};

pub const REP_DIM_GRID: [usize; 5] = [16, 32, 64, 128, 256];
pub const BATCH_GRID: [usize; 6] = [16, 32, 64, 128, 256, 512];
pub const LR_GRID: [f64; 3] = [1e-5, 5e-5, 1e-4];
pub const THREADS_ENV: &str = "CONV_LAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KMode {
    /// k = number of distinct intents in the evaluated split.
    GroundTruth,
    /// k = ⌈factor · intents⌉.
    Overcluster { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    /// Built-in hashed TF-IDF featurizer.
    Featurize { dim: usize },
    /// Precomputed `EMB1` matrices, one per field, rows aligned with the
    /// dataset.
    Embeddings {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        qa: Option<PathBuf>,
    },
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Featurize { dim: DEFAULT_FEATURE_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Row label in reports; derived from scheme and head weights if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset: PathBuf,
    /// Dataset label in reports; the file stem if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    pub features: FeatureSource,
    pub scheme: Scheme,
    pub lambda: HeadWeights,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rep_source: Option<RepSource>,
    pub rep_dim: usize,
    pub train: TrainConfig,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub novel_intent_ratio: f64,
    pub label_keep_ratio: f64,
    pub k_mode: KMode,
    pub kmeans: KMeansConfig,
    /// Retrain every seed with each grid learning rate and keep the model
    /// with the best validation AVG.
    pub lr_sweep: bool,
    /// Permit rep_dim, batch size and learning rate outside the search grid.
    pub allow_off_grid: bool,
    /// Root for artifacts; not part of the config hash.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            dataset: PathBuf::new(),
            dataset_id: None,
            features: FeatureSource::default(),
            scheme: Scheme::Cdac,
            lambda: HeadWeights::QUESTION,
            rep_source: None,
            rep_dim: 128,
            train: TrainConfig::default(),
            n_seeds: 5,
            base_seed: 0,
            novel_intent_ratio: 0.5,
            label_keep_ratio: 0.5,
            k_mode: KMode::GroundTruth,
            kmeans: KMeansConfig::default(),
            lr_sweep: false,
            allow_off_grid: false,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Representation and batch sizes selected per dataset.
pub const PRESETS: [(&str, usize, usize); 5] = [
    ("banking77", 256, 128),
    ("clinc150", 256, 128),
    ("purchase", 32, 16),
    ("delivery", 32, 32),
    ("retail", 64, 16),
];

/// Head-weight variants of an ablation preset, with row labels.
pub fn ablation(name: &str) -> Result<Vec<(&'static str, HeadWeights)>> {
    match name {
        "conversational" => Ok(vec![
            ("Q", HeadWeights::QUESTION),
            ("A", HeadWeights::ANSWER),
            ("QA", HeadWeights::CONCAT),
            ("Q+A", HeadWeights::TWO_HEADS),
            ("Q+A+QA", HeadWeights::CONV),
        ]),
        other => Err(Error::Config(format!("unknown ablation preset {other:?}"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let (_, rep_dim, batch) = PRESETS
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        self.rep_dim = *rep_dim;
        self.train.batch_size = *batch;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.lambda.validate()?;
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be >= 1".into()));
        }
        if let KMode::Overcluster { factor } = self.k_mode {
            overcluster_k(1, factor)?;
        }
        if !self.allow_off_grid {
            if !REP_DIM_GRID.contains(&self.rep_dim) {
                return Err(Error::Config(format!("rep_dim {} is off the grid {REP_DIM_GRID:?}", self.rep_dim)));
            }
            if !BATCH_GRID.contains(&self.train.batch_size) {
                return Err(Error::Config(format!(
                    "batch_size {} is off the grid {BATCH_GRID:?}",
                    self.train.batch_size
                )));
            }
            if !self.lr_sweep && !LR_GRID.contains(&self.train.learning_rate) {
                return Err(Error::Config(format!(
                    "learning_rate {} is off the grid {LR_GRID:?}",
                    self.train.learning_rate
                )));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        match self.scheme {
            Scheme::Static => format!("static[{}]", self.representation_source()),
            s => {
                let [q, a, qa] = self.lambda.0;
                format!("{s}[λ={}/{}/{}]", short(q), short(a), short(qa))
            }
        }
    }

    pub fn dataset_label(&self) -> String {
        self.dataset_id.clone().unwrap_or_else(|| {
            self.dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }

    pub fn representation_source(&self) -> RepSource {
        self.rep_source
            .clone()
            .unwrap_or_else(|| ModelConfig::new(1, 2, self.lambda).rep_source)
    }

    /// Hex SHA-256 of the canonical JSON form (output directory excluded).
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Fields whose features the run needs.
    pub fn required_fields(&self) -> Vec<Field> {
        let mut fields = self.representation_source().fields();
        if self.scheme != Scheme::Static {
            fields.extend(self.lambda.active());
        }
        fields.sort_by_key(|f| f.index());
        fields.dedup();
        fields
    }
}

fn short(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Loads or computes the feature matrices for the given fields.
pub fn load_features(dataset: &Dataset, source: &FeatureSource, fields: &[Field]) -> Result<FieldMatrices> {
    let mut out = FieldMatrices::new();
    for &f in fields {
        let m = match source {
            FeatureSource::Featurize { dim } => featurize(dataset, f, *dim)?,
            FeatureSource::Embeddings { q, a, qa } => {
                let path = [q, a, qa][f.index()]
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("no embedding file configured for field {f}")))?;
                let m = load_embeddings(path)?;
                if m.nrows() != dataset.len() {
                    return Err(Error::Dimension {
                        expected: dataset.len(),
                        actual: m.nrows(),
                    });
                }
                m
            }
        };
        out.insert(f, m);
    }
    Ok(out)
}

/// Everything a seed-run needs besides the config.
pub struct ExperimentInputs {
    pub dataset: Dataset,
    pub features: FieldMatrices,
}

impl ExperimentInputs {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let dataset = load_dataset(&config.dataset, config.base_seed)?;
        let features = load_features(&dataset, &config.features, &config.required_fields())?;
        Ok(Self { dataset, features })
    }
}

/// Result of one seed, before anything is written to disk.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub view: MaskedView,
    pub model: Option<RepModel>,
    pub log: Vec<EpochLog>,
    pub learning_rate: Option<f64>,
    pub test_rows: Vec<usize>,
    pub assignment: Vec<usize>,
    pub metrics: Metrics,
}

fn train(config: &ExperimentConfig, inputs: &ExperimentInputs, set: &TrainingSet, train: &TrainConfig, seed: u64) -> Result<(RepModel, Vec<EpochLog>)> {
    let input_dim = inputs
        .features
        .get(config.required_fields()[0])
        .map(|m| m.ncols())
        .ok_or_else(|| Error::Validation("no features loaded".into()))?;
    for f in config.required_fields() {
        let m = inputs.features.require(f)?;
        if m.ncols() != input_dim {
            return Err(Error::Dimension {
                expected: input_dim,
                actual: m.ncols(),
            });
        }
    }
    let mut model_config = ModelConfig::new(input_dim, config.rep_dim, config.lambda);
    model_config.rep_source = config.representation_source();
    let model = init_model(model_config, seed)?;
    let outcome = match config.scheme {
        Scheme::Dac => train_dac(model, &inputs.features, &set.rows, train, seed)?,
        Scheme::Cdac => train_cdac(model, &inputs.features, set, train, seed)?,
        Scheme::Supervised => train_supervised(model, &inputs.features, set, train, seed)?,
        Scheme::Static => unreachable!("static runs are not trained"),
    };
    Ok((outcome.model, outcome.log))
}

fn cluster_and_score(
    config: &ExperimentConfig,
    inputs: &ExperimentInputs,
    model: Option<&RepModel>,
    view: &MaskedView,
    rows: &[usize],
    seed: u64,
) -> Result<(Vec<usize>, Metrics)> {
    if rows.is_empty() {
        return Err(Error::Validation("evaluated split is empty".into()));
    }
    let reps: Array2<f64> = match model {
        Some(m) => m.extract_representations(&inputs.features, Some(rows))?,
        None => static_representations(&inputs.features, &config.representation_source())?.select(ndarray::Axis(0), rows),
    };
    let truth: Vec<&str> = rows
        .iter()
        .map(|&r| {
            inputs.dataset.examples()[r]
                .intent
                .as_deref()
                .ok_or_else(|| Error::Validation(format!("evaluated example {:?} has no intent", inputs.dataset.examples()[r].id)))
        })
        .collect::<Result<_>>()?;
    let n_intents = inputs.dataset.intents_of(rows).len();
    let k = match config.k_mode {
        KMode::GroundTruth => n_intents,
        KMode::Overcluster { factor } => overcluster_k(n_intents, factor)?,
    };
    let clusters = kmeans(reps.view(), k, seed, config.kmeans)?;
    let known = view.known_intents.iter().cloned().collect();
    let metrics = evaluate(&truth, &clusters.assignment, &known)?;
    Ok((clusters.assignment, metrics))
}

/// Runs one seed end to end without touching the filesystem.
pub fn run_seed(config: &ExperimentConfig, inputs: &ExperimentInputs, seed: u64) -> Result<SeedRun> {
    let view = mask(&inputs.dataset, config.novel_intent_ratio, config.label_keep_ratio, seed)?;
    let test_rows = inputs.dataset.split_rows(Split::Test);
    if config.scheme == Scheme::Static {
        let (assignment, metrics) = cluster_and_score(config, inputs, None, &view, &test_rows, seed)?;
        return Ok(SeedRun {
            seed,
            view,
            model: None,
            log: Vec::new(),
            learning_rate: None,
            test_rows,
            assignment,
            metrics,
        });
    }
    let set = TrainingSet::from_masked(&inputs.dataset, &view)?;
    let (model, log, lr) = if config.lr_sweep {
        let val_rows = inputs.dataset.split_rows(Split::Val);
        let mut best: Option<(f64, RepModel, Vec<EpochLog>, f64)> = None;
        for lr in LR_GRID {
            let tc = TrainConfig {
                learning_rate: lr,
                ..config.train.clone()
            };
            let (model, log) = train(config, inputs, &set, &tc, seed)?;
            let (_, val) = cluster_and_score(config, inputs, Some(&model), &view, &val_rows, seed)?;
            log::info!("seed {seed}: lr {lr:e} gives validation AVG {:.4}", val.avg);
            if best.as_ref().is_none_or(|b| val.avg > b.0) {
                best = Some((val.avg, model, log, lr));
            }
        }
        let (_, model, log, lr) = best.expect("grid is non-empty");
        (model, log, lr)
    } else {
        let (model, log) = train(config, inputs, &set, &config.train, seed)?;
        (model, log, config.train.learning_rate)
    };
    let (assignment, metrics) = cluster_and_score(config, inputs, Some(&model), &view, &test_rows, seed)?;
    Ok(SeedRun {
        seed,
        view,
        model: Some(model),
        log,
        learning_rate: Some(lr),
        test_rows,
        assignment,
        metrics,
    })
}

/// Per-seed record; everything but `wall_clock_secs` is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub report: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub scheme: String,
    pub seeds: Vec<u64>,
    pub acc: MetricStat,
    pub nmi: MetricStat,
    pub ari: MetricStat,
    pub binary_f1: MetricStat,
    pub macro_f1: MetricStat,
    pub avg: MetricStat,
}

/// Mean and sample standard deviation (n − 1; zero for a single value).
pub fn mean_std(values: &[f64]) -> MetricStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MetricStat { mean, std }
}

pub fn aggregate(reports: &[MetricReport]) -> Result<Aggregate> {
    let first = reports.first().ok_or_else(|| Error::Validation("nothing to aggregate".into()))?;
    let stat = |i: usize| mean_std(&reports.iter().map(|r| r.metrics.values()[i]).collect::<Vec<_>>());
    Ok(Aggregate {
        dataset: first.dataset.clone(),
        scheme: first.scheme.clone(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        acc: stat(0),
        nmi: stat(1),
        ari: stat(2),
        binary_f1: stat(3),
        macro_f1: stat(4),
        avg: stat(5),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

fn persist_seed(dir: &Path, hash: &str, report: MetricReport, run: &SeedRun, ids: &[&str], secs: f64) -> Result<RunRecord> {
    create_dir(dir)?;
    run.view.save(dir.join("view.json"))?;
    let log_path = if let Some(model) = &run.model {
        model.save(dir.join("model.ckpt"))?;
        let p = dir.join("train_log.jsonl");
        write_log_jsonl(&p, &run.log)?;
        Some(p)
    } else {
        None
    };
    write_assignment_csv(dir.join("assignment.csv"), ids, &run.assignment)?;
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(RunRecord {
        config_hash: hash.to_owned(),
        seed: run.seed,
        report,
        learning_rate: run.learning_rate,
        log_path,
        wall_clock_secs: secs,
    })
}

#[derive(Serialize)]
struct Status<'a> {
    complete: bool,
    completed_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Runs every derived seed, persisting artifacts under
/// `<output>/<config-hash>/<seed>/`. A failing seed aborts the experiment
/// after the completed seeds and a failure status are written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let inputs = ExperimentInputs::load(config)?;
    run_experiment_with(config, &inputs)
}

pub fn run_experiment_with(config: &ExperimentConfig, inputs: &ExperimentInputs) -> Result<ExperimentOutcome> {
    config.validate()?;
    let hash = config.hash()?;
    let dir = config.output_dir.join(&hash);
    create_dir(&dir)?;
    write_json(&dir.join("config.json"), config)?;
    let seeds = seed_plan(config.base_seed, config.n_seeds);
    let (dataset_id, scheme) = (config.dataset_label(), config.label());

    let pool = thread_pool()?;
    let results: Vec<Result<RunRecord>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let run = run_seed(config, inputs, seed)?;
                let ids: Vec<&str> = run.test_rows.iter().map(|&r| inputs.dataset.examples()[r].id.as_str()).collect();
                let report = MetricReport {
                    dataset: dataset_id.clone(),
                    scheme: scheme.clone(),
                    seed,
                    metrics: run.metrics,
                };
                log::info!("{scheme} seed {seed}: AVG {:.4}", run.metrics.avg);
                persist_seed(&dir.join(seed.to_string()), &hash, report, &run, &ids, start.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) if failure.is_none() => failure = Some(e),
            Err(e) => log::error!("additional seed failure: {e}"),
        }
    }
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    let records_path = dir.join("records.jsonl");
    std::fs::write(&records_path, lines).map_err(|e| Error::io(&records_path, e))?;
    let message = failure.as_ref().map(ToString::to_string);
    write_json(
        &dir.join("status.json"),
        &Status {
            complete: failure.is_none(),
            completed_seeds: records.iter().map(|r| r.seed).collect(),
            error: message.as_deref(),
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let reports: Vec<MetricReport> = records.iter().map(|r| r.report.clone()).collect();
    let aggregate = aggregate(&reports)?;
    write_json(&dir.join("aggregate.json"), &aggregate)?;
    Ok(ExperimentOutcome { dir, records, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{conversational_blobs, SyntheticConfig};

    fn inputs() -> ExperimentInputs {
        let (dataset, features) = conversational_blobs(&SyntheticConfig {
            per_intent: 30,
            ..SyntheticConfig::default()
        })
        .unwrap();
        ExperimentInputs { dataset, features }
    }

    fn config(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset: "synthetic.jsonl".into(),
            rep_dim: 16,
            n_seeds: 3,
            output_dir: out.to_path_buf(),
            train: TrainConfig {
                max_epochs: 4,
                batch_size: 32,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        let s = mean_std(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.4]).std, 0.0);
    }

    #[test]
    fn hash_ignores_output_dir_and_tracks_settings() {
        let a = config(Path::new("/tmp/a"));
        let b = config(Path::new("/tmp/b"));
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = ExperimentConfig { base_seed: 1, ..a.clone() };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn grid_is_enforced_unless_allowed() {
        let mut c = config(Path::new("out"));
        assert!(c.validate().is_ok());
        c.rep_dim = 20;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        c.allow_off_grid = true;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn presets_set_rep_and_batch() {
        let mut c = ExperimentConfig::default();
        c.apply_preset("Delivery").unwrap();
        assert_eq!((c.rep_dim, c.train.batch_size), (32, 32));
        assert!(c.apply_preset("nope").is_err());
        assert_eq!(ablation("conversational").unwrap().len(), 5);
    }

    #[test]
    fn labels_and_fields() {
        let mut c = ExperimentConfig {
            lambda: HeadWeights::CONV,
            ..ExperimentConfig::default()
        };
        assert_eq!(c.label(), "cdac[λ=0.333/0.333/0.333]");
        assert_eq!(c.required_fields(), vec![Field::Q, Field::A, Field::QA]);
        c.scheme = Scheme::Static;
        assert_eq!(c.label(), "static[QA]");
        assert_eq!(c.required_fields(), vec![Field::QA]);
    }

    #[test]
    fn experiment_writes_artifacts_and_aggregates() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(tmp.path());
        let out = run_experiment_with(&cfg, &inputs()).unwrap();
        assert_eq!(out.records.len(), 3);
        let avgs: Vec<f64> = out.records.iter().map(|r| r.report.metrics.avg).collect();
        assert!((out.aggregate.avg.mean - avgs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        for r in &out.records {
            let d = out.dir.join(r.seed.to_string());
            for f in ["view.json", "model.ckpt", "train_log.jsonl", "assignment.csv", "metrics.json"] {
                assert!(d.join(f).exists(), "{f}");
            }
        }
        assert!(out.dir.join("aggregate.json").exists());
    }

    #[test]
    fn static_runs_skip_training() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            scheme: Scheme::Static,
            ..config(tmp.path())
        };
        let run = run_seed(&cfg, &inputs(), 11).unwrap();
        assert!(run.model.is_none() && run.log.is_empty());
        assert_eq!(run.assignment.len(), run.test_rows.len());
    }

    #[test]
    fn failing_seed_persists_status() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = config(tmp.path());
        cfg.scheme = Scheme::Supervised;
        cfg.novel_intent_ratio = 0.9;
        let err = run_experiment_with(&cfg, &inputs()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let status = std::fs::read_to_string(tmp.path().join(cfg.hash().unwrap()).join("status.json")).unwrap();
        assert!(status.contains("\"complete\": false"));
    }
}
