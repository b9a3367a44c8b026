//! Run directories, checkpoints, summaries and embedding export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{argmax_rows, Head};
use crate::data::split_tudataset;
use crate::gnn::{Graph, Model};
use crate::params::ParamSet;

use super::train::{build, eval_batches, fixed_batches, node_outputs, num_classes};
use super::{train_graphs, train_nodes, Dataset, HarnessError, RunRecord, TrainConfig};

/// Best-epoch parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    pub params: ParamSet,
}

pub fn run_dir(out: &Path, config: &TrainConfig) -> PathBuf {
    out.join("runs").join(config.hash())
}

pub fn checkpoint_path(out: &Path, config: &TrainConfig, seed: u64) -> PathBuf {
    run_dir(out, config).join(format!("seed-{seed}.json"))
}

/// Records stored in a `record.jsonl`; a missing file holds none.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(HarnessError::io(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::io(path, format!("record {}: {e}", i + 1))))
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::io(path, e))
}

/// Trains every seed of `config` that has no record under
/// `out/runs/<hash>/` yet, appending one JSON line per run and saving the
/// best parameters. Returns the records in seed-list order.
pub fn run_config(config: &TrainConfig, dataset: &Dataset, out: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    config.validate(dataset.task())?;
    let dir = run_dir(out, config);
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut stored = config.clone();
    stored.seeds.clear();
    stored.out.clear();
    write_json(&dir.join("config.json"), &stored)?;
    let log = dir.join("record.jsonl");
    let mut done = read_records(&log)?;
    let mut records = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        if let Some(pos) = done.iter().position(|r| r.seed == seed) {
            records.push(done.swap_remove(pos));
            continue;
        }
        let (record, params) = match dataset {
            Dataset::Node(g) => train_nodes(config, g, seed)?,
            Dataset::Graphs(ds) => train_graphs(config, ds, seed)?,
        };
        let line = serde_json::to_string(&record).expect("serializable") + "\n";
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&log).map_err(|e| HarnessError::io(&log, e))?;
        f.write_all(line.as_bytes()).map_err(|e| HarnessError::io(&log, e))?;
        let ckpt = Checkpoint { config_hash: record.config_hash.clone(), seed, params };
        write_json(&checkpoint_path(out, config, seed), &ckpt)?;
        records.push(record);
    }
    Ok(records)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub arch: String,
    pub geometry: String,
    pub dim: usize,
    pub classifier: String,
    pub config_hash: String,
    pub seeds: usize,
    pub mean_test_accuracy: f64,
    pub std_test_accuracy: f64,
}

const SUMMARY_HEADER: &str = "dataset,arch,geometry,dim,classifier,config_hash,seeds,mean_test_accuracy,std_test_accuracy";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SummaryRow {
    fn key(&self) -> String {
        format!("{},{},{},{},{},", csv_field(&self.dataset), self.arch, self.geometry, self.dim, self.classifier)
    }

    fn line(&self) -> String {
        format!(
            "{}{},{},{:.6},{:.6}",
            self.key(),
            self.config_hash,
            self.seeds,
            self.mean_test_accuracy,
            self.std_test_accuracy
        )
    }
}

/// Inserts `row` into the CSV at `path`, replacing any row for the same
/// dataset, architecture, geometry, dimension and classifier. Rows are kept
/// sorted.
pub fn write_summary_row(path: &Path, row: &SummaryRow) -> Result<(), HarnessError> {
    let existing = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(HarnessError::io(path, e)),
    };
    let key = row.key();
    let mut lines: Vec<String> =
        existing.lines().skip(1).filter(|l| !l.is_empty() && !l.starts_with(&key)).map(str::to_string).collect();
    lines.push(row.line());
    lines.sort();
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Runs (or resumes) every seed and records mean and population standard
/// deviation of test accuracy in `out/summary.csv`.
pub fn evaluate(config: &TrainConfig, dataset: &Dataset, out: &Path) -> Result<(SummaryRow, Vec<RunRecord>), HarnessError> {
    let records = run_config(config, dataset, out)?;
    let accs: Vec<f64> = records.iter().map(|r| r.test_accuracy).collect();
    let (mean, std) = mean_std(&accs);
    let row = SummaryRow {
        dataset: config.dataset.clone(),
        arch: config.arch.name().to_string(),
        geometry: config.geometry.to_ascii_lowercase(),
        dim: config.dim,
        classifier: config.classifier.name().to_string(),
        config_hash: config.hash(),
        seeds: records.len(),
        mean_test_accuracy: mean,
        std_test_accuracy: std,
    };
    write_summary_row(&out.join("summary.csv"), &row)?;
    Ok((row, records))
}

/// Rebuilds the model and head of `config` with the checkpoint's values.
fn restore(
    config: &TrainConfig,
    input_dim: usize,
    classes: usize,
    ckpt: &Checkpoint,
) -> Result<(Model, Head, ParamSet), HarnessError> {
    let (model, head, fresh) = build(config, input_dim, classes, &mut ChaCha8Rng::seed_from_u64(0))?;
    let matches = fresh.len() == ckpt.params.len()
        && fresh.iter().zip(ckpt.params.iter()).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
    if !matches {
        return Err(HarnessError::Config("checkpoint does not match the configured model".into()));
    }
    Ok((model, head, ckpt.params.clone()))
}

/// Test accuracy of a saved checkpoint.
pub fn checkpoint_accuracy(config: &TrainConfig, dataset: &Dataset, ckpt: &Checkpoint) -> Result<f64, HarnessError> {
    match dataset {
        Dataset::Node(g) => {
            let (model, head, params) = restore(config, g.feature_dim(), num_classes(&g.labels), ckpt)?;
            let (_, scores) = node_outputs(&model, &head, &params, &g.ops(), g)?;
            let pred = argmax_rows(&scores);
            let test = &g.split.as_ref().ok_or_else(|| HarnessError::Config("node dataset has no split".into()))?.test;
            let hits = test.iter().filter(|&&i| pred[i] == g.labels[i]).count();
            Ok(hits as f64 / test.len().max(1) as f64)
        }
        Dataset::Graphs(ds) => {
            let input_dim = ds.graphs.first().map_or(0, |g| g.feature_dim());
            let (model, head, mut params) = restore(config, input_dim, ds.num_classes.max(2), ckpt)?;
            let split = split_tudataset(&ds.labels, config.split_seed);
            let test = fixed_batches(ds, &split.test, config.batch_size)?;
            Ok(eval_batches(&model, &head, &mut params, &test, 0)?.1)
        }
    }
}

/// Writes one CSV row per node: id, label, then the tangent-space
/// embedding (upper-triangle vectorized log for SPD).
pub fn export_embeddings(config: &TrainConfig, graph: &Graph, ckpt: &Checkpoint, out: &Path) -> Result<(), HarnessError> {
    let (model, head, params) = restore(config, graph.feature_dim(), num_classes(&graph.labels), ckpt)?;
    let (feats, _) = node_outputs(&model, &head, &params, &graph.ops(), graph)?;
    let (n, d) = feats.rows();
    let mut text = String::from("node,label");
    for j in 0..d {
        text.push_str(&format!(",e{j}"));
    }
    text.push('\n');
    for i in 0..n {
        let label = graph.labels.get(i).map_or(String::new(), |y| y.to_string());
        text.push_str(&format!("{i},{label}"));
        for v in feats.row(i) {
            text.push_str(&format!(",{v:?}"));
        }
        text.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(out, text).map_err(|e| HarnessError::io(out, e))
}
