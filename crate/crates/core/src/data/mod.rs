//! Dataset loaders, splits, synthetic generators and Gromov hyperbolicity.

pub mod hyperbolicity;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::gnn::{GnnError, Graph, Split};

pub use hyperbolicity::{delta_hyperbolicity, DeltaMode, MAX_EXACT_NODES};
pub use synth::{synth_grid, synth_tree, synth_tree_of_grids, Role, SYNTH_FEATURE_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: index {index} out of range for {len} nodes")]
    IndexOutOfRange { path: PathBuf, line: usize, index: usize, len: usize },
    #[error("inconsistent counts: {0}")]
    InconsistentCounts(String),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("exact hyperbolicity needs at most {max} nodes, got {nodes}")]
    TooLargeForExact { nodes: usize, max: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Graph(#[from] GnnError),
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::Io { path: path.to_path_buf(), message: e.to_string() })
}

/// Non-blank lines with their 1-based line numbers; CR is stripped.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: &str) -> Result<T, DataError> {
    tok.trim().parse().map_err(|_| parse_err(path, line, format!("cannot parse '{}'", tok.trim())))
}

/// Rows of comma-separated reals; every row must have the same width.
fn read_matrix(path: &Path) -> Result<Vec<(usize, Vec<f64>)>, DataError> {
    let text = read(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (ln, l) in lines(&text) {
        let row = l.split(',').map(|t| parse_num::<f64>(path, ln, t)).collect::<Result<Vec<_>, _>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, ln, "non-finite value"));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(path, ln, format!("row has {} columns, expected {w}", row.len())));
            }
            _ => {}
        }
        rows.push((ln, row));
    }
    Ok(rows)
}

fn read_ints(path: &Path) -> Result<Vec<(usize, i64)>, DataError> {
    let text = read(path)?;
    lines(&text).map(|(ln, l)| Ok((ln, parse_num::<i64>(path, ln, l)?))).collect()
}

#[derive(Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Loads a node-classification directory: `graph.edges` (tab-separated
/// 0-indexed pairs), `features.csv`, `labels.csv` and `split.json`.
pub fn load_node_dataset(dir: &Path) -> Result<Graph, DataError> {
    let fpath = dir.join("features.csv");
    let feats = read_matrix(&fpath)?;
    let n = feats.len();
    if n == 0 {
        return Err(parse_err(&fpath, 1, "no feature rows"));
    }
    let f = feats[0].1.len();
    let features = Tensor::new(vec![n, f], feats.into_iter().flat_map(|(_, r)| r).collect()).map_err(GnnError::Ad)?;

    let lpath = dir.join("labels.csv");
    let mut labels = Vec::with_capacity(n);
    for (ln, v) in read_ints(&lpath)? {
        if v < 0 {
            return Err(parse_err(&lpath, ln, format!("negative label {v}")));
        }
        labels.push(v as usize);
    }
    if labels.len() != n {
        return Err(DataError::InconsistentCounts(format!("{} labels for {n} feature rows", labels.len())));
    }

    let epath = dir.join("graph.edges");
    let text = read(&epath)?;
    let mut edges = Vec::new();
    for (ln, l) in lines(&text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(&epath, ln, format!("expected 'u<TAB>v', got '{l}'")));
        }
        let (u, v): (usize, usize) = (parse_num(&epath, ln, toks[0])?, parse_num(&epath, ln, toks[1])?);
        if let Some(&bad) = [u, v].iter().find(|&&x| x >= n) {
            return Err(DataError::IndexOutOfRange { path: epath, line: ln, index: bad, len: n });
        }
        edges.push((u, v));
    }

    let spath = dir.join("split.json");
    let split: SplitFile =
        serde_json::from_str(&read(&spath)?).map_err(|e| parse_err(&spath, e.line(), e.to_string()))?;
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        if i >= n {
            return Err(DataError::IndexOutOfRange { path: spath, line: 1, index: i, len: n });
        }
    }
    let graph = Graph::new(n, &edges, features, labels)?;
    Ok(graph.with_split(Split { train: split.train, val: split.val, test: split.test })?)
}

/// Writes `graph` (with labels and a split) in the layout read by
/// [`load_node_dataset`].
pub fn write_node_dataset(graph: &Graph, dir: &Path) -> Result<(), DataError> {
    let io = |path: PathBuf, r: std::io::Result<()>| r.map_err(|e| DataError::Io { path, message: e.to_string() });
    let split = graph.split.as_ref().ok_or_else(|| DataError::InvalidArgument("graph has no split".into()))?;
    if graph.labels.len() != graph.num_nodes() {
        return Err(DataError::InvalidArgument("graph has no labels".into()));
    }
    io(dir.to_path_buf(), fs::create_dir_all(dir))?;
    let edges: String = graph.edges().iter().map(|(u, v)| format!("{u}\t{v}\n")).collect();
    io(dir.join("graph.edges"), fs::write(dir.join("graph.edges"), edges))?;
    let f = graph.feature_dim();
    let feats: String = graph
        .features
        .data()
        .chunks(f.max(1))
        .map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    io(dir.join("features.csv"), fs::write(dir.join("features.csv"), feats))?;
    let labels: String = graph.labels.iter().map(|y| format!("{y}\n")).collect();
    io(dir.join("labels.csv"), fs::write(dir.join("labels.csv"), labels))?;
    let json = serde_json::json!({ "train": split.train, "val": split.val, "test": split.test });
    io(dir.join("split.json"), fs::write(dir.join("split.json"), json.to_string()))
}

/// Graph-classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TuDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    /// Class index per graph, `0..num_classes`.
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

fn find_prefix(dir: &Path) -> Result<String, DataError> {
    let entries = fs::read_dir(dir).map_err(|e| DataError::Io { path: dir.to_path_buf(), message: e.to_string() })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix("_A.txt").map(str::to_string))
        .collect();
    names.sort();
    names.into_iter().next().ok_or_else(|| DataError::Io {
        path: dir.join("DS_A.txt"),
        message: "no *_A.txt edge file".into(),
    })
}

/// Maps arbitrary integer codes to `0..k` in increasing order.
fn index_codes(codes: &[i64]) -> (Vec<usize>, usize) {
    let map: BTreeMap<i64, usize> = {
        let mut uniq: Vec<i64> = codes.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        uniq.into_iter().enumerate().map(|(i, c)| (c, i)).collect()
    };
    (codes.iter().map(|c| map[c]).collect(), map.len())
}

/// Loads a TUDataset directory `DS_*.txt`. Node labels become one-hot
/// columns followed by any node attributes; with neither file every node
/// gets the constant feature 1. `zscore` standardizes attribute columns
/// over all nodes.
pub fn load_tudataset(dir: &Path, zscore: bool) -> Result<TuDataset, DataError> {
    let name = find_prefix(dir)?;
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let ipath = file("graph_indicator");
    let indicator = read_ints(&ipath)?;
    let n = indicator.len();
    let mut graph_of = Vec::with_capacity(n);
    let mut prev = 0i64;
    for &(ln, g) in &indicator {
        if g < 1 || g < prev || g > prev + 1 {
            return Err(parse_err(&ipath, ln, format!("graph id {g} after {prev}: ids must be contiguous from 1")));
        }
        prev = g;
        graph_of.push((g - 1) as usize);
    }
    let num_graphs = prev as usize;

    let gpath = file("graph_labels");
    let glabels = read_ints(&gpath)?;
    if glabels.len() != num_graphs {
        return Err(DataError::InconsistentCounts(format!("{} graph labels for {num_graphs} graphs", glabels.len())));
    }
    let (labels, num_classes) = index_codes(&glabels.iter().map(|&(_, v)| v).collect::<Vec<_>>());

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    let npath = file("node_labels");
    let has_labels = npath.exists();
    if has_labels {
        let codes = read_ints(&npath)?;
        if codes.len() != n {
            return Err(DataError::InconsistentCounts(format!("{} node labels for {n} nodes", codes.len())));
        }
        let (idx, k) = index_codes(&codes.iter().map(|&(_, v)| v).collect::<Vec<_>>());
        for (row, &c) in columns.iter_mut().zip(&idx) {
            row.extend((0..k).map(|j| if j == c { 1.0 } else { 0.0 }));
        }
    }
    let apath = file("node_attributes");
    if apath.exists() {
        let attrs = read_matrix(&apath)?;
        if attrs.len() != n {
            return Err(DataError::InconsistentCounts(format!("{} attribute rows for {n} nodes", attrs.len())));
        }
        let mut attrs: Vec<Vec<f64>> = attrs.into_iter().map(|(_, r)| r).collect();
        if zscore {
            standardize_columns(&mut attrs);
        }
        for (row, a) in columns.iter_mut().zip(attrs) {
            row.extend(a);
        }
    } else if !has_labels {
        columns.iter_mut().for_each(|r| r.push(1.0));
    }

    let mut start = vec![0usize; num_graphs + 1];
    for &g in &graph_of {
        start[g + 1] += 1;
    }
    for g in 0..num_graphs {
        start[g + 1] += start[g];
    }
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let epath = file("A");
    let text = read(&epath)?;
    for (ln, l) in lines(&text) {
        let toks: Vec<&str> = l.split(',').collect();
        if toks.len() != 2 {
            return Err(parse_err(&epath, ln, format!("expected 'i, j', got '{l}'")));
        }
        let (i, j): (usize, usize) = (parse_num(&epath, ln, toks[0])?, parse_num(&epath, ln, toks[1])?);
        if let Some(&bad) = [i, j].iter().find(|&&x| x == 0 || x > n) {
            return Err(DataError::IndexOutOfRange { path: epath, line: ln, index: bad, len: n });
        }
        let (i, j) = (i - 1, j - 1);
        let g = graph_of[i];
        if graph_of[j] != g {
            return Err(parse_err(&epath, ln, format!("edge joins graphs {} and {}", g + 1, graph_of[j] + 1)));
        }
        edges[g].push((i - start[g], j - start[g]));
    }

    let f = columns.first().map(Vec::len).unwrap_or(0);
    let graphs = (0..num_graphs)
        .map(|g| {
            let (a, b) = (start[g], start[g + 1]);
            let data: Vec<f64> = columns[a..b].iter().flatten().copied().collect();
            let feats = Tensor::new(vec![b - a, f], data).map_err(GnnError::Ad)?;
            Ok(Graph::new(b - a, &edges[g], feats, Vec::new())?)
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(TuDataset { name, graphs, labels, num_classes })
}

fn standardize_columns(rows: &mut [Vec<f64>]) {
    let Some(w) = rows.first().map(Vec::len) else { return };
    let n = rows.len() as f64;
    for c in 0..w {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        rows.iter_mut().for_each(|r| r[c] = (r[c] - mean) / sd);
    }
}

/// Index lists of a graph-classification split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified 10-fold partition; fold 0 is the test set and a uniformly
/// random 10% of the rest is held out as the dev set.
pub fn split_tudataset(labels: &[usize], seed: u64) -> GraphSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds = stratified_folds(labels, 10, &mut rng);
    let test: Vec<usize> = folds[0].clone();
    let mut rest: Vec<usize> = folds[1..].concat();
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    let n_dev = (rest.len() as f64 * 0.1).round() as usize;
    let mut dev = rest[..n_dev].to_vec();
    let mut train = rest[n_dev..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    GraphSplit { train, dev, test }
}

/// Deals the shuffled members of each class round-robin into `k` folds,
/// continuing the deal across classes so fold sizes differ by at most one.
fn stratified_folds(labels: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for members in by_class.values_mut() {
        members.shuffle(rng);
        for &i in members.iter() {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// Stratified node split with the given train and validation fractions
/// per class; the remainder is the test set.
pub fn stratified_node_split(labels: &[usize], train: f64, val: f64, seed: u64) -> Result<Split, DataError> {
    if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
        return Err(DataError::InvalidArgument(format!("split fractions {train}, {val}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut split = Split::default();
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let m = members.len();
        let a = ((m as f64 * train).round() as usize).clamp(1.min(m), m);
        let b = (a + (m as f64 * val).round() as usize).min(m);
        split.train.extend_from_slice(&members[..a]);
        split.val.extend_from_slice(&members[a..b]);
        split.test.extend_from_slice(&members[b..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests;
