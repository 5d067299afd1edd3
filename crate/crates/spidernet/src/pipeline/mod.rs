//! Reproducible command pipelines shared by the CLI binary and the
//! examples: synthetic data generation, feature engineering, training,
//! evaluation, model comparison, and manifest-driven reruns.

pub mod manifest;

pub use manifest::{with_manifest, RunManifest, MANIFEST_FILE};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{
    build_cnn1d, build_densenet1d, build_fdensenet, build_spidernet, Checkpoint, DenseNetConfig, DropoutSchedule,
    Network, NetworkSpec,
};
use crate::data::{
    load_dataset, load_schema, save_dataset, stratified_split, synth_generate, Dataset, Scaler, SplitFractions,
    SplitMode, Splits, SynthConfig,
};
use crate::error::{Error, Result};
use crate::features::{correlation_prune, fill_rate_filter, generate_bw_features, BwConfig};
use crate::metrics::{EvalReport, render_table, sign_test, ScoredEntity};
use crate::train::{grid_search, train, eval_scores, GridPoint, TrainConfig, TrainData, TrainHistory};

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub config: SynthConfig,
    pub out: PathBuf,
}

/// Generate a synthetic dataset: writes `data.csv`, `schema.json`, and the
/// run manifest.
pub fn run_synth(spec: &SynthSpec) -> Result<Vec<PathBuf>> {
    let args = serde_json::to_value(spec)?;
    let out_dir = spec.out.clone();
    let work_dir = out_dir.clone();
    let config = spec.config.clone();
    with_manifest("synth", args, config.seed, &[], &out_dir, move || {
        let dataset = synth_generate(&config)?;
        let csv = work_dir.join("data.csv");
        let schema = work_dir.join("schema.json");
        save_dataset(&dataset, &csv, &schema)?;
        Ok(vec![csv, schema])
    })
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturesSpec {
    pub data: PathBuf,
    pub schema: PathBuf,
    /// B/W test definitions (inlined from the config file).
    pub bw: BwConfig,
    pub fill_rate: f64,
    pub corr_threshold: f64,
    /// Skip B/W generation, keeping only the selection steps.
    pub skip_bw: bool,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureReport {
    pub input_features: usize,
    pub kept_after_fill_rate: Vec<String>,
    pub kept_after_correlation: Vec<String>,
    pub appended_bw_columns: Vec<String>,
    pub fill_rates: Vec<(String, f64)>,
}

/// Feature pipeline: fill-rate filter, correlation pruning, then B/W test
/// generation. Writes the augmented dataset, its schema, and a report.
pub fn run_features(spec: &FeaturesSpec) -> Result<Vec<PathBuf>> {
    let args = serde_json::to_value(spec)?;
    let spec = spec.clone();
    let out_dir = spec.out.clone();
    let work_dir = out_dir.clone();
    let inputs = vec![spec.data.clone(), spec.schema.clone()];
    with_manifest("features", args, spec.seed, &inputs, &out_dir, move || {
        let out_dir = work_dir;
        let schema = load_schema(&spec.schema)?;
        let dataset = load_dataset(&spec.data, &schema)?;
        let fill_rates = dataset.fill_rates();

        let kept_fill = fill_rate_filter(&dataset, spec.fill_rate)?;
        let dataset = dataset.select_features(&kept_fill)?;
        let kept_corr = correlation_prune(&dataset, spec.corr_threshold)?;
        let dataset = dataset.select_features(&kept_corr)?;

        let (dataset, appended) = if spec.skip_bw {
            (dataset, Vec::new())
        } else {
            let augmented = generate_bw_features(&dataset, &spec.bw)?;
            let appended = spec.bw.column_names();
            (augmented, appended)
        };

        let csv = out_dir.join("data.csv");
        let schema_path = out_dir.join("schema.json");
        save_dataset(&dataset, &csv, &schema_path)?;
        let report = FeatureReport {
            input_features: fill_rates.len(),
            kept_after_fill_rate: kept_fill,
            kept_after_correlation: kept_corr,
            appended_bw_columns: appended,
            fill_rates,
        };
        let report_path = out_dir.join("features.json");
        manifest::write_json(&report, &report_path)?;
        Ok(vec![csv, schema_path, report_path])
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchChoice {
    Spidernet,
    Cnn,
    Densenet,
    Fdensenet,
}

impl ArchChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ArchChoice::Spidernet => "spidernet",
            ArchChoice::Cnn => "cnn",
            ArchChoice::Densenet => "densenet",
            ArchChoice::Fdensenet => "fdensenet",
        }
    }
}

/// Architecture hyperparameters, named as in the training configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchParams {
    /// SpiderNet blocks / CNN conv layers.
    pub blocks: usize,
    /// F-DenseNet convolutions per block.
    pub convolutions: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub hidden: usize,
    /// Fully connected head dropout.
    pub dropout: f64,
    pub block_dropout: DropoutSchedule,
    /// DenseNet-specific settings (ignored by other architectures).
    pub densenet: DenseNetConfig,
}

impl Default for ArchParams {
    fn default() -> Self {
        ArchParams {
            blocks: 6,
            convolutions: 3,
            filters: 10,
            kernel_size: 3,
            hidden: 100,
            dropout: 0.25,
            block_dropout: DropoutSchedule::default(),
            densenet: DenseNetConfig::default(),
        }
    }
}

/// Build the network spec for one architecture at a given input width.
pub fn build_arch(arch: ArchChoice, params: &ArchParams, input_length: usize) -> Result<NetworkSpec> {
    let mut spec = match arch {
        ArchChoice::Spidernet => build_spidernet(
            params.blocks,
            params.filters,
            params.kernel_size,
            params.hidden,
            params.block_dropout,
            input_length,
        )?,
        ArchChoice::Cnn => build_cnn1d(params.blocks, params.filters, params.kernel_size, params.hidden, input_length)?,
        ArchChoice::Densenet => {
            let mut config = params.densenet.clone();
            config.conv_kernel = params.kernel_size;
            config.hidden = params.hidden;
            build_densenet1d(&config, input_length)?
        }
        ArchChoice::Fdensenet => build_fdensenet(
            2,
            params.convolutions,
            params.filters,
            params.kernel_size,
            params.hidden,
            input_length,
        )?,
    };
    spec.head.dropout = params.dropout;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    pub fractions: SplitFractions,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            fractions: SplitFractions::default(),
            mode: SplitMode::EntityCoherent,
            seed: 42,
        }
    }
}

/// Everything needed to score new data: the checkpoint plus the fitted
/// scaler, the feature list, and the split protocol it was trained under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub arch: String,
    pub checkpoint: Checkpoint,
    pub scaler: Scaler,
    pub feature_names: Vec<String>,
    pub split: SplitSettings,
}

impl TrainedModel {
    pub fn load(path: &Path) -> Result<TrainedModel> {
        manifest::read_json(path)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub arch: ArchChoice,
    pub params: ArchParams,
    pub train: TrainConfig,
    pub split: SplitSettings,
    pub out: PathBuf,
}

/// Split, train with early stopping (optionally after a grid search), and
/// write `model.json`, `history.json`, and the manifest.
pub fn run_train(spec: &TrainSpec) -> Result<Vec<PathBuf>> {
    let args = serde_json::to_value(spec)?;
    let spec = spec.clone();
    let out_dir = spec.out.clone();
    let work_dir = out_dir.clone();
    let inputs = vec![spec.data.clone(), spec.schema.clone()];
    with_manifest("train", args, spec.train.seed, &inputs, &out_dir, move || {
        let out_dir = work_dir;
        let schema = load_schema(&spec.schema)?;
        let dataset = load_dataset(&spec.data, &schema)?;
        let splits = stratified_split(&dataset, spec.split.fractions, spec.split.seed, spec.split.mode)?;
        let scaler = Scaler::fit(&dataset, &splits.train);
        let data = TrainData {
            dataset: &dataset,
            scaler: &scaler,
            train_rows: &splits.train,
            validation_rows: &splits.validation,
        };

        let mut outputs = Vec::new();
        let (params, config) = match &spec.train.grid {
            Some(grid) if !grid.0.is_empty() => {
                let result = grid_search(grid, &data, |point| {
                    let (p, c) = apply_grid_point(&spec.params, &spec.train, point);
                    let net_spec = build_arch(spec.arch, &p, dataset.n_features())?;
                    Ok((Network::new(net_spec, c.seed)?, c))
                })?;
                let leaderboard_path = out_dir.join("leaderboard.json");
                manifest::write_json(&result.leaderboard, &leaderboard_path)?;
                outputs.push(leaderboard_path);
                apply_grid_point(&spec.params, &spec.train, &result.best)
            }
            _ => (spec.params.clone(), spec.train.clone()),
        };

        let net_spec = build_arch(spec.arch, &params, dataset.n_features())?;
        let mut net = Network::new(net_spec, config.seed)?;
        let history: TrainHistory = train(&mut net, &data, &config)?;

        let model = TrainedModel {
            arch: spec.arch.name().to_string(),
            checkpoint: net.to_checkpoint(),
            scaler,
            feature_names: dataset.feature_names.clone(),
            split: spec.split,
        };
        let model_path = out_dir.join("model.json");
        manifest::write_json(&model, &model_path)?;
        let history_path = out_dir.join("history.json");
        manifest::write_json(&history, &history_path)?;
        outputs.push(model_path);
        outputs.push(history_path);
        Ok(outputs)
    })
}

/// Overlay one grid point onto the architecture and training settings.
/// Unknown keys are rejected so typos do not silently no-op.
fn apply_grid_point(params: &ArchParams, config: &TrainConfig, point: &GridPoint) -> (ArchParams, TrainConfig) {
    let mut p = params.clone();
    let mut c = config.clone();
    c.grid = None;
    for (key, value) in &point.0 {
        let as_f64 = value.as_f64();
        let as_usize = value.as_u64().map(|v| v as usize);
        match key.as_str() {
            "learn_rate" | "learning_rate" => c.learning_rate = as_f64.unwrap_or(c.learning_rate),
            "weight_decay" => c.weight_decay = as_f64.unwrap_or(c.weight_decay),
            "l2_batch" => c.l2_batch = as_f64.unwrap_or(c.l2_batch),
            "batch_size" => c.batch_size = as_usize.unwrap_or(c.batch_size),
            "target_fraud_rate" => c.target_fraud_rate = as_f64.unwrap_or(c.target_fraud_rate),
            "blocks" => p.blocks = as_usize.unwrap_or(p.blocks),
            "convolutions" => p.convolutions = as_usize.unwrap_or(p.convolutions),
            "filters" => p.filters = as_usize.unwrap_or(p.filters),
            "kernel_size" => p.kernel_size = as_usize.unwrap_or(p.kernel_size),
            "hidden" => p.hidden = as_usize.unwrap_or(p.hidden),
            "dropout" => p.dropout = as_f64.unwrap_or(p.dropout),
            other => log::warn!("ignoring unknown grid key `{}`", other),
        }
    }
    (p, c)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSpec {
    pub model: PathBuf,
    pub data: PathBuf,
    pub schema: PathBuf,
    pub split: EvalSplit,
    /// Investigation budget `k` for the Prevented Loss block.
    pub budget: Option<usize>,
    pub alpha: f64,
    pub out: PathBuf,
}

fn pick_rows(splits: &Splits, which: EvalSplit, n_rows: usize) -> Vec<usize> {
    match which {
        EvalSplit::Train => splits.train.clone(),
        EvalSplit::Validation => splits.validation.clone(),
        EvalSplit::Test => splits.test.clone(),
        EvalSplit::All => (0..n_rows).collect(),
    }
}

/// Aggregate record scores into per-entity scores (mean over the entity's
/// records) with the entity's financial fields.
pub fn aggregate_entities(dataset: &Dataset, rows: &[usize], scores: &[f64]) -> Result<Vec<ScoredEntity>> {
    let financial = dataset
        .financial
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("dataset has no financial columns".into()))?;
    let mut grouped: BTreeMap<&str, (f64, usize, u8, usize)> = BTreeMap::new();
    for (&r, &s) in rows.iter().zip(scores) {
        let e = grouped
            .entry(dataset.entity_ids[r].as_str())
            .or_insert((0.0, 0, 0, r));
        e.0 += s;
        e.1 += 1;
        e.2 |= dataset.labels[r];
    }
    Ok(grouped
        .into_iter()
        .map(|(id, (sum, count, label, first_row))| {
            let fin = financial[first_row];
            ScoredEntity {
                entity_id: id.to_string(),
                score: sum / count as f64,
                label,
                portfolio: fin.portfolio,
                default_rate: fin.default_rate,
                zero_target: fin.zero_target,
            }
        })
        .collect())
}

/// Evaluate a trained model on one split; writes `report.json` and a plain
/// text `report.txt`.
pub fn run_eval(spec: &EvalSpec) -> Result<Vec<PathBuf>> {
    let args = serde_json::to_value(spec)?;
    let spec = spec.clone();
    let out_dir = spec.out.clone();
    let work_dir = out_dir.clone();
    let inputs = vec![spec.model.clone(), spec.data.clone(), spec.schema.clone()];
    with_manifest("eval", args, 0, &inputs, &out_dir, move || {
        let out_dir = work_dir;
        let model = TrainedModel::load(&spec.model)?;
        let schema = load_schema(&spec.schema)?;
        let dataset = load_dataset(&spec.data, &schema)?;
        let dataset = dataset.select_features(&model.feature_names)?;
        let net = Network::from_checkpoint(&model.checkpoint)?;

        let splits = stratified_split(&dataset, model.split.fractions, model.split.seed, model.split.mode)?;
        let rows = pick_rows(&splits, spec.split, dataset.n_rows());
        if rows.is_empty() {
            return Err(Error::InvalidInput("selected split is empty".into()));
        }
        let scores = eval_scores(&net, &dataset, &model.scaler, &rows)?;
        let labels: Vec<u8> = rows.iter().map(|&r| dataset.labels[r]).collect();

        let entities = match (spec.budget, &dataset.financial) {
            (Some(budget), Some(_)) => {
                let agg = aggregate_entities(&dataset, &rows, &scores)?;
                Some((agg, budget))
            }
            (Some(_), None) => {
                log::warn!("--budget given but the dataset has no financial columns; PL omitted");
                None
            }
            (None, _) => None,
        };
        let report = EvalReport::from_scores(
            model.arch.clone(),
            &scores,
            &labels,
            spec.alpha,
            entities.as_ref().map(|(e, b)| (e.as_slice(), *b)),
        )?;

        let report_path = out_dir.join("report.json");
        manifest::write_json(&report, &report_path)?;
        let table_path = out_dir.join("report.txt");
        std::fs::write(&table_path, render_table(std::slice::from_ref(&report)))
            .map_err(|e| Error::io(table_path.display().to_string(), e))?;
        Ok(vec![report_path, table_path])
    })
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSpec {
    /// Pairs of report paths; wins are counted for A over B across every
    /// metric the paired reports share.
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSummary {
    pub comparisons: Vec<MetricComparison>,
    pub wins: usize,
    pub n: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricComparison {
    pub pair: usize,
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub a_wins: bool,
}

/// Metric-wise sign test of A over B; ties count against A.
pub fn compare_reports(pairs: &[(EvalReport, EvalReport)]) -> Result<CompareSummary> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no report pairs to compare".into()));
    }
    let mut comparisons = Vec::new();
    for (i, (a, b)) in pairs.iter().enumerate() {
        let a_metrics = a.metric_values();
        let b_metrics: BTreeMap<String, f64> = b.metric_values().into_iter().collect();
        let mut shared = 0;
        for (name, va) in a_metrics {
            if let Some(&vb) = b_metrics.get(&name) {
                shared += 1;
                comparisons.push(MetricComparison {
                    pair: i,
                    metric: name,
                    a: va,
                    b: vb,
                    a_wins: va > vb,
                });
            }
        }
        if shared == 0 {
            return Err(Error::InvalidInput(format!("report pair {} shares no metrics", i)));
        }
    }
    let n = comparisons.len();
    let wins = comparisons.iter().filter(|c| c.a_wins).count();
    Ok(CompareSummary {
        comparisons,
        wins,
        n,
        p_value: sign_test(wins, n)?,
    })
}

pub fn run_compare(spec: &CompareSpec) -> Result<Vec<PathBuf>> {
    let args = serde_json::to_value(spec)?;
    let spec = spec.clone();
    let out_dir = spec.out.clone();
    let work_dir = out_dir.clone();
    let inputs: Vec<PathBuf> = spec.pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    with_manifest("compare", args, 0, &inputs, &out_dir, move || {
        let out_dir = work_dir;
        let mut loaded = Vec::new();
        for (a, b) in &spec.pairs {
            let ra: EvalReport = manifest::read_json(a)?;
            let rb: EvalReport = manifest::read_json(b)?;
            loaded.push((ra, rb));
        }
        let summary = compare_reports(&loaded)?;
        let path = out_dir.join("comparison.json");
        manifest::write_json(&summary, &path)?;
        Ok(vec![path])
    })
}

// ---------------------------------------------------------------------------
// rerun
// ---------------------------------------------------------------------------

/// Re-run a command from its manifest. When `out_override` is given, the
/// outputs are redirected there (for byte-level comparison against the
/// original run).
pub fn run_rerun(manifest_path: &Path, out_override: Option<&Path>) -> Result<Vec<PathBuf>> {
    let manifest = RunManifest::load(manifest_path)?;
    if let Some(err) = &manifest.error {
        return Err(Error::InvalidInput(format!(
            "manifest records a failed run ({}); nothing to reproduce",
            err
        )));
    }
    match manifest.command.as_str() {
        "synth" => {
            let mut spec: SynthSpec = serde_json::from_value(manifest.args)?;
            if let Some(out) = out_override {
                spec.out = out.to_path_buf();
            }
            run_synth(&spec)
        }
        "features" => {
            let mut spec: FeaturesSpec = serde_json::from_value(manifest.args)?;
            if let Some(out) = out_override {
                spec.out = out.to_path_buf();
            }
            run_features(&spec)
        }
        "train" => {
            let mut spec: TrainSpec = serde_json::from_value(manifest.args)?;
            if let Some(out) = out_override {
                spec.out = out.to_path_buf();
            }
            run_train(&spec)
        }
        "eval" => {
            let mut spec: EvalSpec = serde_json::from_value(manifest.args)?;
            if let Some(out) = out_override {
                spec.out = out.to_path_buf();
            }
            run_eval(&spec)
        }
        "compare" => {
            let mut spec: CompareSpec = serde_json::from_value(manifest.args)?;
            if let Some(out) = out_override {
                spec.out = out.to_path_buf();
            }
            run_compare(&spec)
        }
        other => Err(Error::InvalidInput(format!("unknown command `{}` in manifest", other))),
    }
}
