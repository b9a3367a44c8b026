//! Graphs in compressed sparse row form with self-loops.

use std::rc::Rc;

use crate::autodiff::Tensor;

use super::GnnError;

/// Node index lists for the three phases of a node-classification task.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Undirected graph. `N(i)` always contains `i`; neighbour lists are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub split: Option<Split>,
}

impl Graph {
    /// Symmetrizes and deduplicates `edges` and adds a self-loop at every node.
    /// `features` must be `[num_nodes, f]` and `labels` empty or one per node.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Tensor,
        labels: Vec<usize>,
    ) -> Result<Self, GnnError> {
        match features.shape() {
            [n, _] if *n == num_nodes => {}
            s => {
                return Err(GnnError::InvalidGraph(format!("features have shape {s:?}, expected [{num_nodes}, f]")));
            }
        }
        if !features.is_finite() {
            return Err(GnnError::InvalidGraph("non-finite feature value".into()));
        }
        if !labels.is_empty() && labels.len() != num_nodes {
            return Err(GnnError::InvalidGraph(format!("{} labels for {num_nodes} nodes", labels.len())));
        }
        let mut adj: Vec<Vec<usize>> = (0..num_nodes).map(|i| vec![i]).collect();
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GnnError::InvalidGraph(format!("edge ({u}, {v}) out of range for {num_nodes} nodes")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Graph { num_nodes, offsets, neighbors, features, labels, split: None })
    }

    pub fn with_split(mut self, split: Split) -> Result<Self, GnnError> {
        let mut seen = vec![false; self.num_nodes];
        for &i in split.train.iter().chain(&split.val).chain(&split.test) {
            if i >= self.num_nodes {
                return Err(GnnError::InvalidGraph(format!("split index {i} out of range")));
            }
            if seen[i] {
                return Err(GnnError::InvalidGraph(format!("node {i} appears in more than one split")));
            }
            seen[i] = true;
        }
        self.split = Some(split);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// `N(i)`, including `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// `c_i = |N(i)|`.
    pub fn degrees(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Undirected edges `(u, v)` with `u < v`, self-loops excluded.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes).flat_map(|u| self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v))).collect()
    }

    pub fn num_edges(&self) -> usize {
        (self.neighbors.len() - self.num_nodes) / 2
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GnnError> {
        let n = self.num_nodes;
        let mut check = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut check[p], true)) {
            return Err(GnnError::InvalidGraph("not a permutation".into()));
        }
        let f = self.feature_dim();
        let mut feats = vec![0.0; n * f];
        let mut labels = vec![0; if self.labels.is_empty() { 0 } else { n }];
        for i in 0..n {
            feats[perm[i] * f..(perm[i] + 1) * f].copy_from_slice(self.features.row(i));
            if !self.labels.is_empty() {
                labels[perm[i]] = self.labels[i];
            }
        }
        let edges: Vec<(usize, usize)> = self.edges().into_iter().map(|(u, v)| (perm[u], perm[v])).collect();
        let mut g = Graph::new(n, &edges, Tensor::new(vec![n, f], feats).map_err(GnnError::Ad)?, labels)?;
        if let Some(s) = &self.split {
            let map = |v: &[usize]| v.iter().map(|&i| perm[i]).collect();
            g = g.with_split(Split { train: map(&s.train), val: map(&s.val), test: map(&s.test) })?;
        }
        Ok(g)
    }

    /// Joins graphs into one block-diagonal graph. Returns it with the graph
    /// index of every node. Node labels are dropped.
    pub fn disjoint_union(graphs: &[&Graph]) -> Result<(Graph, Vec<usize>), GnnError> {
        let f = graphs.first().map(|g| g.feature_dim()).unwrap_or(0);
        let total: usize = graphs.iter().map(|g| g.num_nodes).sum();
        let mut feats = Vec::with_capacity(total * f);
        let mut edges = Vec::new();
        let mut segment = Vec::with_capacity(total);
        let mut base = 0;
        for (k, g) in graphs.iter().enumerate() {
            if g.feature_dim() != f {
                return Err(GnnError::InvalidGraph(format!("graph {k} has feature dim {}, expected {f}", g.feature_dim())));
            }
            feats.extend_from_slice(g.features.data());
            edges.extend(g.edges().into_iter().map(|(u, v)| (u + base, v + base)));
            segment.extend(std::iter::repeat_n(k, g.num_nodes));
            base += g.num_nodes;
        }
        let g = Graph::new(total, &edges, Tensor::new(vec![total, f], feats).map_err(GnnError::Ad)?, Vec::new())?;
        Ok((g, segment))
    }

    /// Message-passing index structures for this graph.
    pub fn ops(&self) -> GraphOps {
        GraphOps::new(self)
    }
}

/// Edge lists in destination-major order, shared by all layers.
#[derive(Debug, Clone)]
pub struct GraphOps {
    pub num_nodes: usize,
    /// Source `j` of every `(i, j)` pair with `j` in `N(i)`.
    pub src: Rc<Vec<usize>>,
    /// Destination `i` of every pair.
    pub dst: Rc<Vec<usize>>,
    /// Segment boundaries of `dst`, length `num_nodes + 1`.
    pub offsets: Rc<Vec<usize>>,
    /// `c_i^{-1/2} c_j^{-1/2}` per pair.
    pub gcn_weights: Tensor,
    /// Pairs with `i != j`.
    pub nbr_src: Rc<Vec<usize>>,
    pub nbr_dst: Rc<Vec<usize>>,
    /// `-(d_i d_j)^{-1/2}` per pair with `i != j`, where `d` counts neighbours
    /// without the self-loop: the normalized Laplacian rescaled by
    /// `lambda_max = 2`, whose diagonal vanishes.
    pub cheb_weights: Tensor,
}

impl GraphOps {
    fn new(g: &Graph) -> Self {
        let n = g.num_nodes;
        let c: Vec<f64> = g.degrees().iter().map(|&d| d as f64).collect();
        let (mut src, mut dst, mut w) = (Vec::new(), Vec::new(), Vec::new());
        let (mut nsrc, mut ndst, mut cw) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            for &j in g.neighbors(i) {
                src.push(j);
                dst.push(i);
                w.push(1.0 / (c[i].sqrt() * c[j].sqrt()));
                if i != j {
                    nsrc.push(j);
                    ndst.push(i);
                    cw.push(-1.0 / ((c[i] - 1.0).sqrt() * (c[j] - 1.0).sqrt()));
                }
            }
        }
        GraphOps {
            num_nodes: n,
            src: Rc::new(src),
            dst: Rc::new(dst),
            offsets: Rc::new(g.offsets.clone()),
            gcn_weights: Tensor::vector(w),
            nbr_src: Rc::new(nsrc),
            nbr_dst: Rc::new(ndst),
            cheb_weights: Tensor::vector(cw),
        }
    }
}

/// `k_ij = c_i^{-1/2} c_j^{-1/2}` for `j` in `N(i)`, in the order of
/// `graph.neighbors(i)` for `i = 0, 1, ...`.
pub fn gcn_weights(graph: &Graph) -> Vec<f64> {
    graph.ops().gcn_weights.into_data()
}
