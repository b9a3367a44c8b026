//! Exhaustive hyperparameter search.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{run_config, Dataset, HarnessError, NonlinearityKind, TrainConfig};

const LRS: [f64; 3] = [0.1, 0.01, 0.001];
const DROPOUTS: [f64; 2] = [0.0, 0.5];
const WEIGHT_DECAYS: [f64; 3] = [0.0, 0.005, 0.0005];
const MARGIN_CS: [f64; 4] = [0.5, 0.05, 0.005, 0.0005];

/// Cartesian product of learning rate, dropout and weight decay, crossed
/// with the eigenvalue nonlinearity on SPD and with `C` for margin heads.
pub fn grid_space(base: &TrainConfig) -> Result<Vec<TrainConfig>, HarnessError> {
    let spd = base.geometry_context()?.is_spd();
    let nls: &[NonlinearityKind] =
        if spd { &[NonlinearityKind::TgReEig, NonlinearityKind::ReEig] } else { std::slice::from_ref(&base.nonlinearity) };
    let cs: &[f64] = if base.classifier.is_margin() { &MARGIN_CS } else { std::slice::from_ref(&base.c) };
    let mut out = Vec::new();
    for &lr in &LRS {
        for &dropout in &DROPOUTS {
            for &weight_decay in &WEIGHT_DECAYS {
                for &nonlinearity in nls {
                    for &c in cs {
                        out.push(TrainConfig { lr, dropout, weight_decay, nonlinearity, c, ..base.clone() });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderEntry {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Mean dev accuracy over seeds; `None` when training diverged.
    pub dev_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: TrainConfig,
    /// Sorted best first.
    pub leaderboard: Vec<LeaderEntry>,
}

fn tiebreak(a: &TrainConfig, b: &TrainConfig) -> Ordering {
    a.lr.total_cmp(&b.lr)
        .then(a.dropout.total_cmp(&b.dropout))
        .then(a.weight_decay.total_cmp(&b.weight_decay))
        .then(a.nonlinearity.name().cmp(b.nonlinearity.name()))
        .then(a.c.total_cmp(&b.c))
}

/// Descending dev accuracy, diverged runs last, then lower learning rate
/// and the remaining hyperparameters in order.
pub fn rank(entries: &mut [LeaderEntry]) {
    entries.sort_by(|a, b| {
        let by_acc = match (a.dev_accuracy, b.dev_accuracy) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_acc.then_with(|| tiebreak(&a.config, &b.config))
    });
}

/// Trains every grid point on a pool of `threads` workers (0 picks the
/// default), reusing finished runs found under `out`, and writes
/// `out/leaderboard.csv`.
pub fn grid_search(base: &TrainConfig, dataset: &Dataset, out: &Path, threads: usize) -> Result<GridResult, HarnessError> {
    let space = grid_space(base)?;
    for c in &space {
        c.validate(dataset.task())?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<LeaderEntry, HarnessError>> = pool.install(|| {
        space
            .par_iter()
            .map(|config| {
                let entry = |dev, test| LeaderEntry {
                    config: config.clone(),
                    config_hash: config.hash(),
                    dev_accuracy: dev,
                    test_accuracy: test,
                };
                match run_config(config, dataset, out) {
                    Ok(records) => {
                        let n = records.len() as f64;
                        let dev = records.iter().map(|r| r.val_accuracy).sum::<f64>() / n;
                        let test = records.iter().map(|r| r.test_accuracy).sum::<f64>() / n;
                        Ok(entry(Some(dev), Some(test)))
                    }
                    Err(HarnessError::Diverged { .. } | HarnessError::NonFiniteGradient { .. }) => Ok(entry(None, None)),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let mut leaderboard = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    rank(&mut leaderboard);
    write_leaderboard(&out.join("leaderboard.csv"), &leaderboard)?;
    let best = leaderboard
        .iter()
        .find(|e| e.dev_accuracy.is_some())
        .map(|e| e.config.clone())
        .ok_or(HarnessError::Diverged { epoch: 0, reason: "every grid configuration diverged".into() })?;
    Ok(GridResult { best, leaderboard })
}

fn write_leaderboard(path: &Path, entries: &[LeaderEntry]) -> Result<(), HarnessError> {
    let fmt = |v: Option<f64>| v.map_or("diverged".to_string(), |x| format!("{x:.6}"));
    let mut text = String::from("rank,config_hash,lr,dropout,weight_decay,nonlinearity,c,dev_accuracy,test_accuracy\n");
    for (i, e) in entries.iter().enumerate() {
        let c = &e.config;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            i + 1,
            e.config_hash,
            c.lr,
            c.dropout,
            c.weight_decay,
            c.nonlinearity.name(),
            c.c,
            fmt(e.dev_accuracy),
            fmt(e.test_accuracy)
        ));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
