use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spdgnn::classifiers::ClassifierKind;
use spdgnn::data::{self, DeltaMode};
use spdgnn::gnn::Arch;
use spdgnn::harness::{self, Dataset, HarnessError, NonlinearityKind, Task, TrainConfig};

#[derive(Parser)]
#[command(name = "spdgnn", version, about = "Train and evaluate graph neural networks on SPD, hyperbolic and Euclidean embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one configuration
    Train(TrainArgs),
    /// Search the hyperparameter grid and report the best configuration
    Gridsearch(TrainArgs),
    /// Mean and standard deviation of test accuracy over seeds, or the accuracy of one checkpoint
    Evaluate {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write tangent-space node embeddings of a checkpoint as CSV
    ExportEmbeddings {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output file; defaults to <out>/embeddings.csv
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Gromov delta-hyperbolicity of a node dataset's graph
    Hyperbolicity {
        #[arg(long)]
        dataset_dir: PathBuf,
        /// Sample this many quadruples instead of the exact computation
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate a synthetic node dataset
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// JSON file with TrainConfig fields; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskArg>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    geometry: Option<String>,
    /// Ambient dimension (SPD_n uses n(n+1)/2)
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classifier: Option<String>,
    /// Single seed, or the first of --seeds
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    nonlinearity: Option<NlArg>,
    /// Margin-head regularization weight
    #[arg(long = "c")]
    c: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Standardize continuous node attributes of graph datasets
    #[arg(long)]
    zscore: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Node,
    Graph,
}

#[derive(Clone, Copy, ValueEnum)]
enum NlArg {
    Reeig,
    Tgreeig,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Tree,
    Grid,
    TreeOfGrids,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "tree-of-grids")]
    kind: SynthKind,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 3)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    #[arg(long)]
    out: PathBuf,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::from_json(&std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?)?,
            None => TrainConfig::default(),
        };
        if let Some(d) = &self.dataset_dir {
            c.dataset = d.display().to_string();
        }
        if let Some(t) = self.task {
            c.task = Some(match t {
                TaskArg::Node => Task::Node,
                TaskArg::Graph => Task::Graph,
            });
        }
        if let Some(a) = &self.arch {
            c.arch = a.parse::<Arch>().map_err(config_err)?;
        }
        if let Some(g) = &self.geometry {
            c.geometry = g.clone();
        }
        if let Some(d) = self.dim {
            c.dim = d;
        }
        if let Some(k) = &self.classifier {
            c.classifier = k.parse::<ClassifierKind>().map_err(config_err)?;
        }
        match (self.seed, self.seeds) {
            (Some(s), None) => c.seeds = vec![s],
            (first, Some(n)) => {
                let s = first.unwrap_or(0);
                c.seeds = (s..s + n).collect();
            }
            (None, None) => {}
        }
        if let Some(o) = &self.out {
            c.out = o.display().to_string();
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        if let Some(v) = self.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = self.nonlinearity {
            c.nonlinearity = match v {
                NlArg::Reeig => NonlinearityKind::ReEig,
                NlArg::Tgreeig => NonlinearityKind::TgReEig,
            };
        }
        if let Some(v) = self.c {
            c.c = v;
        }
        if self.max_epochs.is_some() {
            c.max_epochs = self.max_epochs;
        }
        if self.patience.is_some() {
            c.patience = self.patience;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        c.zscore |= self.zscore;
        Ok(c)
    }
}

fn init_threads(threads: Option<usize>) -> Result<(), HarnessError> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(config_err)?;
    }
    Ok(())
}

fn load(args: &TrainArgs) -> Result<(TrainConfig, Dataset), HarnessError> {
    init_threads(args.threads)?;
    let config = args.config()?;
    config.geometry_context()?;
    let ds = harness::load_dataset(&config)?;
    config.validate(ds.task())?;
    Ok((config, ds))
}

fn checkpoint_or_default(config: &TrainConfig, path: &Option<PathBuf>) -> PathBuf {
    path.clone().unwrap_or_else(|| harness::checkpoint_path(Path::new(&config.out), config, config.seeds[0]))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("json value"));
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train(args) => {
            let (config, ds) = load(&args)?;
            for r in harness::run_config(&config, &ds, Path::new(&config.out))? {
                print_json(&serde_json::json!({
                    "config_hash": r.config_hash,
                    "seed": r.seed,
                    "epochs": r.epochs.len(),
                    "best_epoch": r.best_epoch,
                    "train_accuracy": r.train_accuracy,
                    "val_accuracy": r.val_accuracy,
                    "test_accuracy": r.test_accuracy,
                }));
            }
        }
        Command::Gridsearch(args) => {
            let (config, ds) = load(&args)?;
            let out = Path::new(&config.out);
            let res = harness::grid_search(&config, &ds, out, args.threads.unwrap_or(0))?;
            let best = serde_json::to_string_pretty(&res.best).expect("config serializes");
            std::fs::write(out.join("best.json"), best + "\n").map_err(|e| HarnessError::Io {
                path: out.join("best.json").display().to_string(),
                message: e.to_string(),
            })?;
            let top = &res.leaderboard[0];
            print_json(&serde_json::json!({
                "configs": res.leaderboard.len(),
                "best_hash": top.config_hash,
                "dev_accuracy": top.dev_accuracy,
                "test_accuracy": top.test_accuracy,
            }));
        }
        Command::Evaluate { args, checkpoint } => {
            let (config, ds) = load(&args)?;
            match checkpoint {
                Some(path) => {
                    let ckpt = harness::load_checkpoint(&path)?;
                    let acc = harness::checkpoint_accuracy(&config, &ds, &ckpt)?;
                    print_json(&serde_json::json!({ "checkpoint": path.display().to_string(), "test_accuracy": acc }));
                }
                None => {
                    let (row, _) = harness::evaluate(&config, &ds, Path::new(&config.out))?;
                    print_json(&serde_json::json!({
                        "config_hash": row.config_hash,
                        "seeds": row.seeds,
                        "mean_test_accuracy": row.mean_test_accuracy,
                        "std_test_accuracy": row.std_test_accuracy,
                    }));
                }
            }
        }
        Command::ExportEmbeddings { args, checkpoint, output } => {
            let (config, ds) = load(&args)?;
            let Dataset::Node(graph) = ds else {
                return Err(config_err("embedding export needs a node dataset"));
            };
            let ckpt = harness::load_checkpoint(&checkpoint_or_default(&config, &checkpoint))?;
            let output = output.unwrap_or_else(|| Path::new(&config.out).join("embeddings.csv"));
            harness::export_embeddings(&config, &graph, &ckpt, &output)?;
            println!("{}", output.display());
        }
        Command::Hyperbolicity { dataset_dir, samples, seed, threads } => {
            init_threads(threads)?;
            let graph = data::load_node_dataset(&dataset_dir)?;
            let mode = match samples {
                Some(n) => DeltaMode::Sampled { num_quadruples: n, seed },
                None => DeltaMode::Exact,
            };
            let delta = data::delta_hyperbolicity(&graph, mode)?;
            print_json(&serde_json::json!({ "nodes": graph.num_nodes(), "exact": samples.is_none(), "delta": delta }));
        }
        Command::Synth(a) => {
            let graph = match a.kind {
                SynthKind::Tree => data::synth_tree(a.branching, a.depth, a.seed),
                SynthKind::Grid => data::synth_grid(a.width, a.height, a.seed),
                SynthKind::TreeOfGrids => data::synth_tree_of_grids(a.branching, a.depth, a.width, a.height, a.seed),
            }
            .map_err(config_err)?;
            let split = data::stratified_node_split(&graph.labels, a.train_frac, a.val_frac, a.seed).map_err(config_err)?;
            let graph = graph.with_split(split).map_err(config_err)?;
            data::write_node_dataset(&graph, &a.out)?;
            print_json(&serde_json::json!({ "nodes": graph.num_nodes(), "edges": graph.num_edges(), "out": a.out.display().to_string() }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
