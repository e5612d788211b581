//! File-based pipeline stages: preprocess → select features → train →
//! evaluate, plus the three-configuration experiment matrix, prediction and
//! fine-tuning. Each stage reads the previous stage's files from the output
//! directory.

mod config;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::PipelineConfig;

use crate::dataset::{
    balance_files, build_vocabulary, encode, fit_normalization, impute_missing, load_cache, load_csv, save_cache,
    split_indices, stratified_indices, CacheMeta, ColumnKind, DatasetTable, EncodedDataset, FeatureSet,
    ImputationStats, NormalizationStats, Schema, SplitSpec, Vocabulary, UNK_TOKEN,
};
use crate::error::{Error, Result};
use crate::featsel::{fit_forest, importances, select, ForestConfig, ImportanceReport};
use crate::metrics::{
    auc_roc, build_report, confusion, render_comparison, ExperimentLabel, MetricsReport, ReportFormat, Timings,
    DEFAULT_THRESHOLD,
};
use crate::model::{ItctModel, ModelBundle};
use crate::training::{self, measure, predict_dataset, History};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const MODEL_FILE: &str = "model.itct";
pub const IMPORTANCE_FILE: &str = "importances.json";
pub const CONFIG_ECHO: &str = "config.resolved.txt";

pub fn cache_path(output_dir: &Path, split: &str) -> PathBuf {
    output_dir.join("cache").join(format!("{split}.bin"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T, what: &str) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(what, e))?;
    text.push('\n');
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(what, e))
}

/// Writes the resolved configuration next to a stage's outputs.
pub fn echo_config(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    write(&dir.join(CONFIG_ECHO), cfg.to_text())
}

fn schema_of(cfg: &PipelineConfig) -> Result<Schema> {
    match &cfg.schema {
        Some(path) => Schema::from_file(path),
        None => Ok(Schema::mqtt_default()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSummary {
    pub file: String,
    pub raw: (usize, usize),
    pub balanced: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub normal: usize,
    pub attack: usize,
}

/// Row counts as `(normal, attack)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub files: Vec<FileSummary>,
    pub splits: Vec<SplitSummary>,
}

/// load → impute → balance → concatenate → split → fit vocabulary and
/// normalisation on train → encode every feature → cache.
pub fn cmd_preprocess(cfg: &PipelineConfig) -> Result<PreprocessSummary> {
    if cfg.data_files.len() != 5 {
        return Err(Error::Config(format!(
            "data_files must list 5 files, got {}",
            cfg.data_files.len()
        )));
    }
    let schema = schema_of(cfg)?;
    let mut tables = Vec::with_capacity(5);
    let mut imputation: Vec<ImputationStats> = Vec::with_capacity(5);
    for path in &cfg.data_files {
        let raw = load_csv(path, &schema)?;
        let (table, stats) = impute_missing(&raw)?;
        log::info!("loaded {} ({} rows)", path.display(), table.n_rows());
        tables.push(table);
        imputation.push(stats);
    }
    let balanced = balance_files(&tables, cfg.seed)?;
    let files = cfg
        .data_files
        .iter()
        .zip(tables.iter().zip(&balanced))
        .map(|(p, (raw, bal))| FileSummary {
            file: p
                .file_name()
                .map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned()),
            raw: raw.class_counts(),
            balanced: bal.class_counts(),
        })
        .collect();
    drop(tables);
    let all = DatasetTable::concat(&balanced)?;
    drop(balanced);

    let (tr, va, te) = split_indices(all.n_rows(), &SplitSpec::with_seed(cfg.seed))?;
    let train_table = all.select_rows(&tr);
    let vocabulary = build_vocabulary(&train_table);
    let normalization = fit_normalization(&train_table);
    let features = schema.feature_names();
    let meta = CacheMeta {
        features: FeatureSet::all(&schema),
        vocabulary,
        normalization,
        imputation,
    };

    let mut splits = Vec::new();
    for (name, rows) in SPLITS.iter().zip([&tr, &va, &te]) {
        let table = if *name == "train" {
            train_table.clone()
        } else {
            all.select_rows(rows)
        };
        let encoded = encode(&table, &meta.vocabulary, &meta.normalization, &features)?;
        let path = cache_path(&cfg.output_dir, name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_cache(&path, &encoded, &meta)?;
        let (normal, attack) = encoded.class_counts();
        splits.push(SplitSummary {
            split: name.to_string(),
            normal,
            attack,
        });
    }
    let summary = PreprocessSummary { files, splits };
    write_json(
        &cfg.output_dir.join("preprocess_summary.json"),
        &summary,
        "preprocess summary",
    )?;
    echo_config(cfg, &cfg.output_dir)?;
    Ok(summary)
}

/// Loads one cached split, keeping a stratified `cfg.fraction` of it.
pub fn load_split(cfg: &PipelineConfig, split: &str) -> Result<(EncodedDataset, CacheMeta)> {
    let path = cache_path(&cfg.output_dir, split);
    if !path.exists() {
        return Err(Error::Dataset(format!(
            "no cached {split} split at {}; run preprocess first",
            path.display()
        )));
    }
    let (data, meta) = load_cache(&path)?;
    if cfg.fraction >= 1.0 {
        return Ok((data, meta));
    }
    let target = (cfg.fraction * data.n_rows() as f64).round() as usize;
    let rows = stratified_indices(data.labels(), target, cfg.seed);
    Ok((data.select_rows(&rows), meta))
}

/// Fits the forest on (a capped stratified sample of) the training split and
/// writes the importance report.
pub fn cmd_select_features(cfg: &PipelineConfig) -> Result<ImportanceReport> {
    let report = select_features(cfg)?;
    write_json(&cfg.output_dir.join(IMPORTANCE_FILE), &report, "importance report")?;
    echo_config(cfg, &cfg.output_dir)?;
    Ok(report)
}

fn select_features(cfg: &PipelineConfig) -> Result<ImportanceReport> {
    let (train, meta) = load_split(cfg, "train")?;
    let train = if train.n_rows() > cfg.selection_cap {
        train.select_rows(&stratified_indices(train.labels(), cfg.selection_cap, cfg.seed))
    } else {
        train
    };
    let forest = fit_forest(
        &train,
        &ForestConfig {
            n_trees: cfg.forest_trees,
            max_depth: cfg.forest_max_depth,
            seed: cfg.seed,
            ..ForestConfig::default()
        },
    )?;
    let mut report = importances(&forest);
    let order = schema_order(&meta.features, cfg)?;
    report.reorder(&order);
    select(&report, cfg.selection_threshold, &cfg.force_include)
}

fn schema_order(features: &FeatureSet, cfg: &PipelineConfig) -> Result<Vec<String>> {
    let schema = schema_of(cfg)?;
    let names = schema.feature_names();
    if names
        .iter()
        .all(|n| features.categorical.contains(n) || features.continuous.contains(n))
    {
        Ok(names)
    } else {
        Ok(features.names())
    }
}

fn bundle_metadata(meta: &CacheMeta, features: &FeatureSet) -> (Vocabulary, NormalizationStats) {
    let vocabulary = Vocabulary {
        columns: features
            .categorical
            .iter()
            .filter_map(|n| meta.vocabulary.get(n).cloned())
            .collect(),
    };
    let normalization = NormalizationStats {
        columns: features
            .continuous
            .iter()
            .filter_map(|n| meta.normalization.get(n).cloned())
            .collect(),
    };
    (vocabulary, normalization)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub history: History,
    pub model_path: PathBuf,
}

/// Trains on the cached train split (validating on val) using either the
/// selected features or all of them, and writes the model and its history.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let outcome = train_into(cfg, &cfg.output_dir)?;
    echo_config(cfg, &cfg.output_dir)?;
    Ok(outcome)
}

/// Reads the cache from `cfg.output_dir` and the importance report (when
/// feature selection is on) and all outputs from `out_dir`.
fn train_into(cfg: &PipelineConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let (train, meta) = load_split(cfg, "train")?;
    let (val, _) = load_split(cfg, "val")?;
    let (train, val) = if cfg.feature_selection {
        let path = out_dir.join(IMPORTANCE_FILE);
        if !path.exists() {
            return Err(Error::Dataset(format!(
                "feature selection is on but {} is missing; run select-features first",
                path.display()
            )));
        }
        let report: ImportanceReport = read_json(&path, "importance report")?;
        let names = report.features();
        (train.select_features(&names)?, val.select_features(&names)?)
    } else {
        (train, val)
    };
    let features = train.features().clone();
    let model_config = cfg.model_config(train.vocab_sizes().to_vec(), train.n_continuous());
    let mut model = ItctModel::<f32>::init(model_config, cfg.seed)?;
    let (history, seconds) = measure("training", || training::train(&mut model, &train, &val, &cfg.train));
    let mut history = history?;
    history.total_seconds = seconds;

    let (vocabulary, normalization) = bundle_metadata(&meta, &features);
    let bundle = ModelBundle {
        model,
        vocabulary,
        normalization,
        features,
    };
    let model_path = out_dir.join(MODEL_FILE);
    write(&model_path, bundle.to_bytes()?)?;
    write(&out_dir.join("history.csv"), history.to_csv())?;
    write(&out_dir.join("history.json"), history.to_json()?)?;
    Ok(TrainOutcome {
        bundle,
        history,
        model_path,
    })
}

/// Restricts a cached split to the model's features and checks that the
/// vocabularies line up.
pub fn align_to_model(data: &EncodedDataset, bundle: &ModelBundle) -> Result<EncodedDataset> {
    let have = data.features();
    let missing: Vec<String> = bundle
        .features
        .names()
        .into_iter()
        .filter(|n| !have.categorical.contains(n) && !have.continuous.contains(n))
        .collect();
    if !missing.is_empty() {
        return Err(Error::FeatureMismatch(missing));
    }
    let aligned = data.select_features(&bundle.features.names())?;
    if aligned.features() != &bundle.features || aligned.vocab_sizes() != bundle.model.config.vocab_sizes.as_slice() {
        return Err(Error::FeatureMismatch(bundle.features.names()));
    }
    Ok(aligned)
}

/// Scores the test split and builds the report. Only the forward passes
/// over the test rows are timed.
pub fn evaluate_bundle(
    bundle: &ModelBundle,
    test: &EncodedDataset,
    label: ExperimentLabel,
    training_seconds: f64,
) -> Result<MetricsReport> {
    let test = align_to_model(test, bundle)?;
    let (scores, inference_seconds) = measure("inference", || predict_dataset(&bundle.model, &test));
    let scores = scores?;
    let cm = confusion(&scores, test.labels(), DEFAULT_THRESHOLD)?;
    let auc = auc_roc(&scores, test.labels())?;
    Ok(build_report(
        cm,
        auc,
        Timings {
            training_seconds,
            inference_seconds,
        },
        bundle.model.count_params(),
        label,
    ))
}

fn write_reports(dir: &Path, stem: &str, reports: &[MetricsReport]) -> Result<()> {
    for format in ReportFormat::SUPPORTED {
        let text = render_comparison(reports, format)?;
        let ext = format.parse::<ReportFormat>()?.extension();
        write(&dir.join(format!("{stem}.{ext}")), text)?;
    }
    Ok(())
}

/// Evaluates a saved model on the cached test split and writes
/// `report.{md,csv,json}` next to it.
pub fn cmd_evaluate(cfg: &PipelineConfig, model_path: &Path) -> Result<MetricsReport> {
    let bundle = ModelBundle::load(model_path)?;
    let (test, _) = load_split(cfg, "test")?;
    let dir = model_path.parent().unwrap_or(Path::new("."));
    let history_path = dir.join("history.json");
    let training_seconds = if history_path.exists() {
        read_json::<History>(&history_path, "training history")?.total_seconds
    } else {
        0.0
    };
    let label = ExperimentLabel::new("Evaluation", cfg.feature_selection, cfg.train.callback_enabled);
    let report = evaluate_bundle(&bundle, &test, label, training_seconds)?;
    write_reports(dir, "report", std::slice::from_ref(&report))?;
    Ok(report)
}

/// The three configurations compared side by side.
pub fn experiment_configs(cfg: &PipelineConfig) -> Vec<(ExperimentLabel, PipelineConfig)> {
    [
        ("Experiment 1", true, true),
        ("Experiment 2", false, false),
        ("Experiment 3", false, true),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (name, fe, cb))| {
        let mut c = cfg.clone();
        c.feature_selection = fe;
        c.train.callback_enabled = cb;
        c.output_dir = cfg.output_dir.join(format!("exp{}", i + 1));
        (ExperimentLabel::new(name, fe, cb), c)
    })
    .collect()
}

/// Runs one experiment in `cfg.output_dir`, reading the cache from the
/// parent directory.
pub fn run_experiment(parent: &PipelineConfig, label: ExperimentLabel, cfg: &PipelineConfig) -> Result<MetricsReport> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let with_cache = PipelineConfig {
        output_dir: parent.output_dir.clone(),
        ..cfg.clone()
    };
    if cfg.feature_selection {
        let report = select_features(&with_cache)?;
        write_json(&cfg.output_dir.join(IMPORTANCE_FILE), &report, "importance report")?;
    }
    let outcome = train_into(&with_cache, &cfg.output_dir)?;
    let (test, _) = load_split(&with_cache, "test")?;
    let report = evaluate_bundle(&outcome.bundle, &test, label, outcome.history.total_seconds)?;
    write_reports(&cfg.output_dir, "report", std::slice::from_ref(&report))?;
    echo_config(cfg, &cfg.output_dir)?;
    Ok(report)
}

/// Runs all three configurations on the shared cache and writes
/// `comparison.{md,csv,json}`.
pub fn cmd_experiment_matrix(cfg: &PipelineConfig) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::new();
    for (label, c) in experiment_configs(cfg) {
        log::info!("running {label}");
        reports.push(run_experiment(cfg, label, &c)?);
    }
    write_reports(&cfg.output_dir, "comparison", &reports)?;
    echo_config(cfg, &cfg.output_dir)?;
    Ok(reports)
}

/// Per-row scores for a CSV holding at least the model's feature columns.
/// Missing continuous cells take the file's column mean (the training mean
/// if the whole column is empty); missing or unseen tokens map to UNK.
pub fn predict_csv(bundle: &ModelBundle, input: &Path) -> Result<Vec<f64>> {
    let csv_err = |source| Error::Csv {
        path: input.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(input)
        .map_err(csv_err)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let wanted = bundle.features.names();
    let missing: Vec<String> = wanted.iter().filter(|n| !header.contains(n)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::FeatureMismatch(missing));
    }
    let extras: Vec<&String> = header.iter().filter(|h| !wanted.contains(h)).collect();
    if !extras.is_empty() {
        log::warn!("ignoring columns not used by the model: {extras:?}");
    }
    let pos = |n: &str| header.iter().position(|h| h == n).expect("checked above");
    let cat_pos: Vec<usize> = bundle.features.categorical.iter().map(|n| pos(n)).collect();
    let cont_pos: Vec<usize> = bundle.features.continuous.iter().map(|n| pos(n)).collect();

    let mut cat = Vec::new();
    let mut raw_cont: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_err)? {
        for (vocab, &p) in bundle.vocabulary.columns.iter().zip(&cat_pos) {
            let cell = record
                .get(p)
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .unwrap_or(UNK_TOKEN);
            cat.push(vocab.id(Some(cell)));
        }
        for &p in &cont_pos {
            let v = record
                .get(p)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite());
            raw_cont.push(v.unwrap_or(f64::NAN));
        }
        rows += 1;
    }
    let c = cont_pos.len();
    let mut cont = vec![0f32; rows * c];
    for (j, name) in bundle.features.continuous.iter().enumerate() {
        let scale = bundle
            .normalization
            .get(name)
            .ok_or_else(|| Error::FeatureMismatch(vec![name.clone()]))?;
        let (sum, count) = (0..rows)
            .map(|r| raw_cont[r * c + j])
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        let fill = if count > 0 { sum / count as f64 } else { scale.mean };
        for r in 0..rows {
            let v = raw_cont[r * c + j];
            cont[r * c + j] = scale.apply(if v.is_nan() { fill } else { v }) as f32;
        }
    }
    let data = EncodedDataset::new(
        bundle.features.clone(),
        bundle.model.config.vocab_sizes.clone(),
        cat,
        cont,
        vec![0; rows],
    )?;
    predict_dataset(&bundle.model, &data)
}

/// `row_index,score,prediction` for every row of `input`.
pub fn cmd_predict(model_path: &Path, input: &Path) -> Result<String> {
    let bundle = ModelBundle::load(model_path)?;
    let scores = predict_csv(&bundle, input)?;
    let mut text = String::from("row_index,score,prediction\n");
    for (i, s) in scores.iter().enumerate() {
        text.push_str(&format!("{i},{s},{}\n", u8::from(*s >= DEFAULT_THRESHOLD)));
    }
    Ok(text)
}

/// Fine-tunes a saved model on a labelled CSV. One tenth of the rows
/// (at least one) is held out for validation.
pub fn cmd_fine_tune(
    cfg: &PipelineConfig,
    model_path: &Path,
    input: &Path,
    output: &Path,
) -> Result<(ModelBundle, History)> {
    let bundle = ModelBundle::load(model_path)?;
    let schema = fine_tune_schema(cfg, &bundle)?;
    let (table, _) = impute_missing(&load_csv(input, &schema)?)?;
    if table.n_rows() < 2 {
        return Err(Error::Dataset("fine-tuning needs at least two labelled rows".into()));
    }
    let mut order: Vec<usize> = (0..table.n_rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_val = (table.n_rows() / 10).max(1);
    let (val_rows, train_rows) = order.split_at(n_val);
    let (tuned, history) = training::fine_tune(
        model_path,
        &table.select_rows(train_rows),
        &table.select_rows(val_rows),
        &cfg.fine_tune,
    )?;
    write(output, tuned.to_bytes()?)?;
    if let Some(dir) = output.parent() {
        write(&dir.join("fine_tune_history.csv"), history.to_csv())?;
        echo_config(cfg, dir)?;
    }
    Ok((tuned, history))
}

/// The configured schema, checked to contain every model feature.
fn fine_tune_schema(cfg: &PipelineConfig, bundle: &ModelBundle) -> Result<Schema> {
    let schema = schema_of(cfg)?;
    let missing: Vec<String> = bundle
        .features
        .names()
        .into_iter()
        .filter(|n| schema.kind_of(n).is_none_or(|k| k == ColumnKind::Label))
        .collect();
    if !missing.is_empty() {
        return Err(Error::FeatureMismatch(missing));
    }
    Ok(schema)
}
