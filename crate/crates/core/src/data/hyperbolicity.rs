//! Gromov four-point hyperbolicity on the shortest-path metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::gnn::Graph;

use super::DataError;

/// Largest graph accepted by the exact mode.
pub const MAX_EXACT_NODES: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaMode {
    /// Every 4-subset of nodes.
    Exact,
    /// Random quadruples; a lower bound on the exact value.
    Sampled { num_quadruples: usize, seed: u64 },
}

impl DeltaMode {
    pub fn sampled(seed: u64) -> Self {
        DeltaMode::Sampled { num_quadruples: 1_000_000, seed }
    }
}

/// All-pairs hop distances, row-major.
pub fn all_pairs_distances(graph: &Graph) -> Result<Vec<u32>, DataError> {
    let n = graph.num_nodes();
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut dist = vec![u32::MAX; n];
            let mut queue = std::collections::VecDeque::from([s]);
            dist[s] = 0;
            while let Some(u) = queue.pop_front() {
                for &v in graph.neighbors(u) {
                    if dist[v] == u32::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect();
    if rows.iter().any(|r| r.contains(&u32::MAX)) {
        return Err(DataError::Disconnected);
    }
    Ok(rows.concat())
}

/// Twice the four-point defect: largest minus second-largest pairing sum.
fn defect2(d: &[u32], n: usize, x: usize, y: usize, z: usize, w: usize) -> u32 {
    let s1 = d[x * n + y] + d[z * n + w];
    let s2 = d[x * n + z] + d[y * n + w];
    let s3 = d[x * n + w] + d[y * n + z];
    let hi = s1.max(s2).max(s3);
    let lo = s1.min(s2).min(s3);
    let mid = s1 + s2 + s3 - hi - lo;
    hi - mid
}

/// Gromov delta of a connected graph: the largest half-gap between the two
/// biggest of the three pairing sums over quadruples.
pub fn delta_hyperbolicity(graph: &Graph, mode: DeltaMode) -> Result<f64, DataError> {
    let n = graph.num_nodes();
    if let DeltaMode::Exact = mode {
        if n > MAX_EXACT_NODES {
            return Err(DataError::TooLargeForExact { nodes: n, max: MAX_EXACT_NODES });
        }
    }
    let d = all_pairs_distances(graph)?;
    if n < 4 {
        return Ok(0.0);
    }
    let best = match mode {
        DeltaMode::Exact => (0..n)
            .into_par_iter()
            .map(|x| {
                let mut best = 0;
                for y in x + 1..n {
                    for z in y + 1..n {
                        for w in z + 1..n {
                            best = best.max(defect2(&d, n, x, y, z, w));
                        }
                    }
                }
                best
            })
            .max()
            .unwrap_or(0),
        DeltaMode::Sampled { num_quadruples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..num_quadruples)
                .map(|_| {
                    let q: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..n));
                    defect2(&d, n, q[0], q[1], q[2], q[3])
                })
                .max()
                .unwrap_or(0)
        }
    };
    Ok(best as f64 / 2.0)
}
