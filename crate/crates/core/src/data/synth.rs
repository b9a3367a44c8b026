//! Trees, grids and trees with grids hanging off their leaves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::gnn::Graph;

use super::DataError;

/// Width of generated node features.
pub const SYNTH_FEATURE_DIM: usize = 8;

/// Degrees above this share the last one-hot slot.
const MAX_DEGREE_SLOT: usize = 8;

/// Structural role, used as the node label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    TreeInterior = 0,
    GridInterior = 1,
    Junction = 2,
}

/// Features are `R e_deg` for a seeded random `R[dim, MAX_DEGREE_SLOT + 1]`
/// with entries in `[-1, 1]`, `deg` counting neighbours without the self-loop.
fn degree_features(num_nodes: usize, edges: &[(usize, usize)], seed: u64) -> Tensor {
    let mut deg = vec![0usize; num_nodes];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = MAX_DEGREE_SLOT + 1;
    let proj: Vec<f64> = (0..SYNTH_FEATURE_DIM * slots).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut data = Vec::with_capacity(num_nodes * SYNTH_FEATURE_DIM);
    for &d in &deg {
        let s = d.min(MAX_DEGREE_SLOT);
        data.extend((0..SYNTH_FEATURE_DIM).map(|r| proj[r * slots + s]));
    }
    Tensor::new(vec![num_nodes, SYNTH_FEATURE_DIM], data).expect("finite projection")
}

fn build(num_nodes: usize, edges: Vec<(usize, usize)>, roles: Vec<Role>, seed: u64) -> Result<Graph, DataError> {
    let feats = degree_features(num_nodes, &edges, seed);
    Ok(Graph::new(num_nodes, &edges, feats, roles.into_iter().map(|r| r as usize).collect())?)
}

/// Complete `b`-ary tree with `depth` levels below the root, in BFS order.
/// Returns the edges and the first leaf index.
fn tree_edges(b: usize, depth: usize) -> (usize, Vec<(usize, usize)>, usize) {
    let mut n = 1;
    let mut level = 1;
    let mut first_leaf = 0;
    for _ in 0..depth {
        first_leaf = n;
        level *= b;
        n += level;
    }
    let edges = (1..n).map(|c| ((c - 1) / b, c)).collect();
    (n, edges, first_leaf)
}

fn grid_edges(w: usize, h: usize, base: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = base + r * w + c;
            if c + 1 < w {
                edges.push((i, i + 1));
            }
            if r + 1 < h {
                edges.push((i, i + w));
            }
        }
    }
    edges
}

fn check_positive(args: &[(&str, usize)]) -> Result<(), DataError> {
    match args.iter().find(|(_, v)| *v == 0) {
        Some((name, _)) => Err(DataError::InvalidArgument(format!("{name} must be positive"))),
        None => Ok(()),
    }
}

/// Complete `b`-ary tree. Leaves are labelled as junctions, everything else
/// as tree interior.
pub fn synth_tree(b: usize, depth: usize, seed: u64) -> Result<Graph, DataError> {
    check_positive(&[("branching", b)])?;
    let (n, edges, first_leaf) = tree_edges(b, depth);
    let roles = (0..n).map(|i| if depth > 0 && i >= first_leaf { Role::Junction } else { Role::TreeInterior }).collect();
    build(n, edges, roles, seed)
}

/// `w x h` grid; every node is labelled grid interior.
pub fn synth_grid(w: usize, h: usize, seed: u64) -> Result<Graph, DataError> {
    check_positive(&[("width", w), ("height", h)])?;
    build(w * h, grid_edges(w, h, 0), vec![Role::GridInterior; w * h], seed)
}

/// Tree whose every leaf is joined to the corner of its own `grid_w x grid_h`
/// grid. Leaves are junctions.
pub fn synth_tree_of_grids(b: usize, depth: usize, grid_w: usize, grid_h: usize, seed: u64) -> Result<Graph, DataError> {
    check_positive(&[("branching", b), ("depth", depth), ("grid width", grid_w), ("grid height", grid_h)])?;
    let (tn, mut edges, first_leaf) = tree_edges(b, depth);
    let mut roles: Vec<Role> = (0..tn).map(|i| if i >= first_leaf { Role::Junction } else { Role::TreeInterior }).collect();
    let cells = grid_w * grid_h;
    let mut base = tn;
    for leaf in first_leaf..tn {
        edges.extend(grid_edges(grid_w, grid_h, base));
        edges.push((leaf, base));
        roles.extend(std::iter::repeat_n(Role::GridInterior, cells));
        base += cells;
    }
    build(base, edges, roles, seed)
}
