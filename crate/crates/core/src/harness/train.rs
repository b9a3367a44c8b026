//! Full-batch node classification and mini-batch graph classification.

use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::classifiers::{argmax_rows, ClassifierError, Head};
use crate::data::{split_tudataset, TuDataset};
use crate::gnn::{Graph, GraphOps, Model, ModelConfig};
use crate::manifolds::GeometryContext;
use crate::params::ParamSet;
use crate::symcore::{sym_eig, SymMatrix};

use super::{derive_seed, Adam, HarnessError, Task, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
    /// Smallest eigenvalue of any SPD embedding produced by any layer
    /// during the training pass of this epoch.
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

impl RunRecord {
    pub fn mean_epoch_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the lowest dev loss; asks to stop after `patience` epochs
/// without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, since: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since = 0;
            return StopDecision::Improved;
        }
        self.since += 1;
        if self.since >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

pub(crate) fn ad_err(e: AdError, epoch: usize) -> HarnessError {
    match e {
        AdError::NonFinite(_) | AdError::Linalg(_) => HarnessError::Diverged { epoch, reason: e.to_string() },
        other => HarnessError::Model(other.to_string()),
    }
}

fn head_err(e: ClassifierError, epoch: usize) -> HarnessError {
    match e {
        ClassifierError::Ad(a) => ad_err(a, epoch),
        other => HarnessError::Model(other.to_string()),
    }
}

/// Freshly initialized model, head and parameters for a run.
pub(crate) fn build(
    config: &TrainConfig,
    input_dim: usize,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Model, Head, ParamSet), HarnessError> {
    let geometry = config.geometry_context()?;
    let mut mc = ModelConfig::new(config.arch, geometry, input_dim);
    mc.num_layers = config.num_layers;
    mc.dropout = config.dropout;
    mc.nonlinearity = config.model_nonlinearity();
    let mut params = ParamSet::new();
    let model = Model::init(mc, &mut params, rng).map_err(|e| HarnessError::Config(e.to_string()))?;
    let head = Head::init(config.classifier, geometry, num_classes, config.c, &mut params, rng)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok((model, head, params))
}

pub(crate) fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1).max(2)
}

fn min_spd_eigenvalue(geometry: GeometryContext, outs: &[Var<'_>]) -> Option<f64> {
    let GeometryContext::Spd(n) = geometry else { return None };
    let mut lo = f64::INFINITY;
    for z in outs {
        for p in z.value().data().chunks(n * n) {
            let s = SymMatrix::new(n, p.to_vec()).ok()?;
            lo = lo.min(sym_eig(&s).ok()?.min_value());
        }
    }
    Some(lo)
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

fn pick(v: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Inference over all nodes: final-layer embeddings and class scores.
pub(crate) fn node_outputs(
    model: &Model,
    head: &Head,
    params: &ParamSet,
    ops: &GraphOps,
    graph: &Graph,
) -> Result<(Tensor, Tensor), HarnessError> {
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outs = model.forward(&vars, ops, tape.constant(graph.features.clone()), &mut rng, false).map_err(|e| ad_err(e, 0))?;
    let z = *outs.last().expect("model has layers");
    let feats = model.geometry().tangent_features(z).map_err(|e| ad_err(e, 0))?;
    let scores = head.scores(&vars, z).map_err(|e| ad_err(e, 0))?;
    Ok((feats.value().as_ref().clone(), scores.value().as_ref().clone()))
}

struct NodeEval {
    train_acc: f64,
    val_acc: f64,
    test_acc: f64,
    val_loss: f64,
}

fn eval_nodes(
    model: &Model,
    head: &Head,
    params: &ParamSet,
    ops: &GraphOps,
    graph: &Graph,
    epoch: usize,
) -> Result<NodeEval, HarnessError> {
    let split = graph.split.as_ref().expect("checked by caller");
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outs =
        model.forward(&vars, ops, tape.constant(graph.features.clone()), &mut rng, false).map_err(|e| ad_err(e, epoch))?;
    let z = *outs.last().expect("model has layers");
    let pred = argmax_rows(&head.scores(&vars, z).map_err(|e| ad_err(e, epoch))?.value());
    // without a validation set the training loss drives early stopping
    let monitor = if split.val.is_empty() { &split.train } else { &split.val };
    let zv = z.gather_rows(Rc::new(monitor.clone())).map_err(|e| ad_err(e, epoch))?;
    let val_loss = head.loss(&vars, zv, Rc::new(pick(&graph.labels, monitor))).map_err(|e| head_err(e, epoch))?.item();
    let acc = |idx: &[usize]| accuracy(&pick(&pred, idx), &pick(&graph.labels, idx));
    Ok(NodeEval { train_acc: acc(&split.train), val_acc: acc(&split.val), test_acc: acc(&split.test), val_loss })
}

/// Full-batch training on one graph with a node split. Returns the record
/// and the parameters of the best dev-loss epoch.
pub fn train_nodes(config: &TrainConfig, graph: &Graph, seed: u64) -> Result<(RunRecord, ParamSet), HarnessError> {
    config.validate(Task::Node)?;
    let split = graph.split.as_ref().ok_or_else(|| HarnessError::Config("node dataset has no split".into()))?;
    if split.train.is_empty() || graph.labels.len() != graph.num_nodes() {
        return Err(HarnessError::Config("node dataset needs labels and training nodes".into()));
    }
    let hash = config.hash();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&hash, seed));
    let (model, head, mut params) = build(config, graph.feature_dim(), num_classes(&graph.labels), &mut rng)?;
    let ops = graph.ops();
    let train_idx = Rc::new(split.train.clone());
    let train_labels = Rc::new(pick(&graph.labels, &split.train));
    let mut adam = Adam::new(config.lr, config.weight_decay, &params);
    let mut stopper = EarlyStopping::new(config.patience(Task::Node));
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs(Task::Node) {
        let start = Instant::now();
        let (train_loss, min_eig) = {
            let tape = Tape::new();
            let vars = params.bind(&tape);
            let feats = tape.constant(graph.features.clone());
            let outs = model.forward(&vars, &ops, feats, &mut rng, true).map_err(|e| ad_err(e, epoch))?;
            let min_eig = min_spd_eigenvalue(model.geometry(), &outs);
            let z = outs.last().expect("model has layers").gather_rows(train_idx.clone()).map_err(|e| ad_err(e, epoch))?;
            let loss = head.loss(&vars, z, train_labels.clone()).map_err(|e| head_err(e, epoch))?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(HarnessError::Diverged { epoch, reason: format!("loss {value}") });
            }
            let mut grads = tape.backward(loss).map_err(|e| ad_err(e, epoch))?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut params, &grads)?;
            (value, min_eig)
        };
        let ev = eval_nodes(&model, &head, &params, &ops, graph, epoch)?;
        if !ev.val_loss.is_finite() {
            return Err(HarnessError::Diverged { epoch, reason: format!("dev loss {}", ev.val_loss) });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy: ev.train_acc,
            val_loss: ev.val_loss,
            val_accuracy: ev.val_acc,
            seconds: start.elapsed().as_secs_f64(),
            min_eigenvalue: min_eig,
        });
        match stopper.observe(epoch, ev.val_loss) {
            StopDecision::Improved => best = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let ev = eval_nodes(&model, &head, &best, &ops, graph, stopper.best_epoch())?;
    let record = RunRecord {
        config_hash: hash,
        seed,
        epochs,
        best_epoch: stopper.best_epoch(),
        stopped_early,
        train_accuracy: ev.train_acc,
        val_accuracy: ev.val_acc,
        test_accuracy: ev.test_acc,
    };
    Ok((record, best))
}

/// A fixed union of graphs with their labels.
pub(crate) struct Batch {
    graph: Graph,
    ops: GraphOps,
    segment: Rc<Vec<usize>>,
    labels: Rc<Vec<usize>>,
}

impl Batch {
    fn new(ds: &TuDataset, idx: &[usize]) -> Result<Self, HarnessError> {
        let refs: Vec<&Graph> = idx.iter().map(|&i| &ds.graphs[i]).collect();
        let (graph, segment) = Graph::disjoint_union(&refs).map_err(|e| HarnessError::Model(e.to_string()))?;
        let ops = graph.ops();
        Ok(Batch { graph, ops, segment: Rc::new(segment), labels: Rc::new(pick(&ds.labels, idx)) })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

/// Loss and predictions of one batch; the training pass also steps Adam.
#[allow(clippy::too_many_arguments)]
fn run_batch(
    model: &Model,
    head: &Head,
    params: &mut ParamSet,
    batch: &Batch,
    rng: &mut ChaCha8Rng,
    adam: Option<&mut Adam>,
    epoch: usize,
    min_eig: &mut Option<f64>,
) -> Result<(f64, Vec<usize>), HarnessError> {
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let train = adam.is_some();
    let feats = tape.constant(batch.graph.features.clone());
    let outs = model.forward(&vars, &batch.ops, feats, rng, train).map_err(|e| ad_err(e, epoch))?;
    if train {
        if let Some(m) = min_spd_eigenvalue(model.geometry(), &outs) {
            *min_eig = Some(min_eig.map_or(m, |x| x.min(m)));
        }
    }
    let z = *outs.last().expect("model has layers");
    let pooled = model.geometry().readout_mean(z, &batch.segment, batch.len()).map_err(|e| ad_err(e, epoch))?;
    let pred = argmax_rows(&head.scores(&vars, pooled).map_err(|e| ad_err(e, epoch))?.value());
    let loss = head.loss(&vars, pooled, batch.labels.clone()).map_err(|e| head_err(e, epoch))?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(HarnessError::Diverged { epoch, reason: format!("loss {value}") });
    }
    if let Some(adam) = adam {
        let mut grads = tape.backward(loss).map_err(|e| ad_err(e, epoch))?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
        adam.step(params, &grads)?;
    }
    Ok((value, pred))
}

/// Mean loss and accuracy over fixed batches, no parameter updates.
pub(crate) fn eval_batches(
    model: &Model,
    head: &Head,
    params: &mut ParamSet,
    batches: &[Batch],
    epoch: usize,
) -> Result<(f64, f64), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut loss, mut correct, mut total) = (0.0, 0usize, 0usize);
    for b in batches {
        let (l, pred) = run_batch(model, head, params, b, &mut rng, None, epoch, &mut None)?;
        loss += l * b.len() as f64;
        correct += pred.iter().zip(b.labels.iter()).filter(|(p, y)| p == y).count();
        total += b.len();
    }
    let t = total.max(1) as f64;
    Ok((loss / t, correct as f64 / t))
}

pub(crate) fn fixed_batches(ds: &TuDataset, idx: &[usize], size: usize) -> Result<Vec<Batch>, HarnessError> {
    idx.chunks(size).map(|c| Batch::new(ds, c)).collect()
}

/// Mini-batch training on a graph-classification dataset with a stratified
/// 10-fold split (fold 0 held out for testing).
pub fn train_graphs(config: &TrainConfig, ds: &TuDataset, seed: u64) -> Result<(RunRecord, ParamSet), HarnessError> {
    config.validate(Task::Graph)?;
    if ds.graphs.is_empty() {
        return Err(HarnessError::Config("graph dataset is empty".into()));
    }
    let split = split_tudataset(&ds.labels, config.split_seed);
    let hash = config.hash();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&hash, seed));
    let input_dim = ds.graphs[0].feature_dim();
    let (model, head, mut params) = build(config, input_dim, ds.num_classes.max(2), &mut rng)?;
    let bs = config.batch_size;
    let train_eval = fixed_batches(ds, &split.train, bs)?;
    let dev = if split.dev.is_empty() { fixed_batches(ds, &split.train, bs)? } else { fixed_batches(ds, &split.dev, bs)? };
    let test = fixed_batches(ds, &split.test, bs)?;
    let mut adam = Adam::new(config.lr, config.weight_decay, &params);
    let mut stopper = EarlyStopping::new(config.patience(Task::Graph));
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order = split.train.clone();

    for epoch in 1..=config.max_epochs(Task::Graph) {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut min_eig = None;
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(bs) {
            let batch = Batch::new(ds, chunk)?;
            let (l, _) = run_batch(&model, &head, &mut params, &batch, &mut rng, Some(&mut adam), epoch, &mut min_eig)?;
            loss_sum += l * batch.len() as f64;
            count += batch.len();
        }
        let (_, train_acc) = eval_batches(&model, &head, &mut params, &train_eval, epoch)?;
        let (val_loss, val_acc) = eval_batches(&model, &head, &mut params, &dev, epoch)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / count.max(1) as f64,
            train_accuracy: train_acc,
            val_loss,
            val_accuracy: val_acc,
            seconds: start.elapsed().as_secs_f64(),
            min_eigenvalue: min_eig,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let e = stopper.best_epoch();
    let (_, train_accuracy) = eval_batches(&model, &head, &mut best, &train_eval, e)?;
    let (_, val_accuracy) = eval_batches(&model, &head, &mut best, &dev, e)?;
    let (_, test_accuracy) = eval_batches(&model, &head, &mut best, &test, e)?;
    let record = RunRecord {
        config_hash: hash,
        seed,
        epochs,
        best_epoch: e,
        stopped_early,
        train_accuracy,
        val_accuracy,
        test_accuracy,
    };
    Ok((record, best))
}
