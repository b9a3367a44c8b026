use std::fs;

use proptest::prelude::*;
use tempfile::TempDir;

use super::*;

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn node_fixture() -> TempDir {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    write(p, "graph.edges", "0\t1\n1\t2\n");
    write(p, "features.csv", "0.5,1.0\n-1.0,2.0\n3.0,0.0\n");
    write(p, "labels.csv", "0\n1\n0\n");
    write(p, "split.json", r#"{"train": [0], "val": [1], "test": [2]}"#);
    dir
}

#[test]
fn node_dataset_two_node_example() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    write(p, "graph.edges", "0\t1\n");
    write(p, "features.csv", "1.0\n2.0\n");
    write(p, "labels.csv", "0\n1\n");
    write(p, "split.json", r#"{"train": [0], "val": [], "test": [1]}"#);
    let g = load_node_dataset(p).unwrap();
    assert_eq!(g.neighbors(0), &[0, 1]);
    assert_eq!(g.degrees(), vec![2, 2]);
    assert_eq!(g.split.as_ref().unwrap().test, vec![1]);
}

#[test]
fn node_dataset_empty_edges_and_duplicates() {
    let dir = node_fixture();
    write(dir.path(), "graph.edges", "");
    let g = load_node_dataset(dir.path()).unwrap();
    assert_eq!(g.num_edges(), 0);
    for i in 0..3 {
        assert_eq!(g.neighbors(i), &[i]);
    }
    write(dir.path(), "graph.edges", "0\t1\r\n1\t0\r\n0\t1\r\n");
    let g = load_node_dataset(dir.path()).unwrap();
    assert_eq!(g.edges(), vec![(0, 1)]);
}

#[test]
fn node_dataset_loads_are_identical() {
    let dir = node_fixture();
    assert_eq!(load_node_dataset(dir.path()).unwrap(), load_node_dataset(dir.path()).unwrap());
}

#[test]
fn node_dataset_corruptions_are_located() {
    let dir = node_fixture();
    fs::remove_file(dir.path().join("labels.csv")).unwrap();
    match load_node_dataset(dir.path()) {
        Err(DataError::Io { path, .. }) => assert!(path.ends_with("labels.csv")),
        other => panic!("{other:?}"),
    }

    let dir = node_fixture();
    write(dir.path(), "graph.edges", "0\t1\n1\t7\n");
    match load_node_dataset(dir.path()) {
        Err(DataError::IndexOutOfRange { path, line, index, len }) => {
            assert!(path.ends_with("graph.edges"));
            assert_eq!((line, index, len), (2, 7, 3));
        }
        other => panic!("{other:?}"),
    }

    let dir = node_fixture();
    write(dir.path(), "features.csv", "0.5,1.0\n-1.0\n3.0,0.0\n");
    match load_node_dataset(dir.path()) {
        Err(DataError::Parse { path, line, .. }) => {
            assert!(path.ends_with("features.csv"));
            assert_eq!(line, 2);
        }
        other => panic!("{other:?}"),
    }

    let dir = node_fixture();
    write(dir.path(), "graph.edges", "0 1\nx\t2\n");
    assert!(matches!(load_node_dataset(dir.path()), Err(DataError::Parse { line: 2, .. })));

    let dir = node_fixture();
    write(dir.path(), "labels.csv", "0\n1\n");
    assert!(matches!(load_node_dataset(dir.path()), Err(DataError::InconsistentCounts(_))));

    let dir = node_fixture();
    write(dir.path(), "split.json", r#"{"train": [0, 1], "val": [1], "test": [2]}"#);
    assert!(matches!(load_node_dataset(dir.path()), Err(DataError::Graph(_))));

    let dir = node_fixture();
    write(dir.path(), "split.json", r#"{"train": [0], "val": [9], "test": [2]}"#);
    assert!(matches!(load_node_dataset(dir.path()), Err(DataError::IndexOutOfRange { index: 9, .. })));
}

#[test]
fn node_dataset_write_roundtrip() {
    let mut g = synth_tree_of_grids(2, 2, 2, 2, 3).unwrap();
    let split = stratified_node_split(&g.labels, 0.6, 0.2, 1).unwrap();
    g = g.with_split(split).unwrap();
    let dir = TempDir::new().unwrap();
    write_node_dataset(&g, dir.path()).unwrap();
    assert_eq!(load_node_dataset(dir.path()).unwrap(), g);
}

fn tu_fixture(extra: &[(&str, &str)]) -> TempDir {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    write(p, "MINI_A.txt", "1, 2\n2, 1\n");
    write(p, "MINI_graph_indicator.txt", "1\n1\n");
    write(p, "MINI_graph_labels.txt", "1\n");
    for (name, text) in extra {
        write(p, name, text);
    }
    dir
}

#[test]
fn tudataset_minimal_fixture() {
    let dir = tu_fixture(&[]);
    let ds = load_tudataset(dir.path(), false).unwrap();
    assert_eq!(ds.name, "MINI");
    assert_eq!(ds.graphs.len(), 1);
    assert_eq!(ds.graphs[0].num_nodes(), 2);
    assert_eq!(ds.graphs[0].edges(), vec![(0, 1)]);
    assert_eq!(ds.labels, vec![0]);
}

#[test]
fn tudataset_one_hot_labels_and_attributes() {
    let dir = tu_fixture(&[("MINI_node_labels.txt", "0\n1\n")]);
    let ds = load_tudataset(dir.path(), false).unwrap();
    assert_eq!(ds.graphs[0].features.shape(), &[2, 2]);
    assert_eq!(ds.graphs[0].features.data(), &[1.0, 0.0, 0.0, 1.0]);

    let dir = tu_fixture(&[("MINI_node_labels.txt", "0\n1\n"), ("MINI_node_attributes.txt", "0.5, 2.0\n1.5, 4.0\n")]);
    let ds = load_tudataset(dir.path(), false).unwrap();
    assert_eq!(ds.graphs[0].features.data(), &[1.0, 0.0, 0.5, 2.0, 0.0, 1.0, 1.5, 4.0]);
    let ds = load_tudataset(dir.path(), true).unwrap();
    assert_eq!(ds.graphs[0].features.data(), &[1.0, 0.0, -1.0, -1.0, 0.0, 1.0, 1.0, 1.0]);
}

#[test]
fn tudataset_splits_graphs_by_indicator() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    write(p, "DS_A.txt", "1, 2\n2, 1\n3, 4\n4, 5\n5, 3\n");
    write(p, "DS_graph_indicator.txt", "1\n1\n2\n2\n2\n");
    write(p, "DS_graph_labels.txt", "-1\n1\n");
    let ds = load_tudataset(p, false).unwrap();
    assert_eq!(ds.graphs.len(), 2);
    assert_eq!(ds.graphs[1].num_nodes(), 3);
    assert_eq!(ds.graphs[1].num_edges(), 3);
    assert_eq!(ds.labels, vec![0, 1]);
    assert_eq!(ds.num_classes, 2);
    assert_eq!(ds.graphs[0].features.data(), &[1.0, 1.0]);
}

#[test]
fn tudataset_errors() {
    let dir = tu_fixture(&[("MINI_graph_labels.txt", "1\n0\n")]);
    assert!(matches!(load_tudataset(dir.path(), false), Err(DataError::InconsistentCounts(_))));
    let dir = tu_fixture(&[("MINI_node_labels.txt", "0\n")]);
    assert!(matches!(load_tudataset(dir.path(), false), Err(DataError::InconsistentCounts(_))));
    let dir = tu_fixture(&[("MINI_A.txt", "1, 3\n")]);
    assert!(matches!(load_tudataset(dir.path(), false), Err(DataError::IndexOutOfRange { line: 1, index: 3, .. })));
    let dir = tu_fixture(&[("MINI_graph_indicator.txt", "1\n3\n")]);
    assert!(matches!(load_tudataset(dir.path(), false), Err(DataError::Parse { line: 2, .. })));
    let dir = tu_fixture(&[("MINI_node_attributes.txt", "1.0\n2.0, 3.0\n")]);
    assert!(matches!(load_tudataset(dir.path(), false), Err(DataError::Parse { line: 2, .. })));
    let empty = TempDir::new().unwrap();
    assert!(matches!(load_tudataset(empty.path(), false), Err(DataError::Io { .. })));
}

#[test]
fn tudataset_split_sizes_and_determinism() {
    let labels: Vec<usize> = (0..100).map(|i| i % 3).collect();
    let s = split_tudataset(&labels, 7);
    assert_eq!((s.test.len(), s.dev.len(), s.train.len()), (10, 9, 81));
    assert_eq!(s, split_tudataset(&labels, 7));
    assert_ne!(s, split_tudataset(&labels, 8));
    let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn tudataset_test_fold_is_stratified(sizes in prop::collection::vec(1usize..40, 2..5), seed in 0u64..1000) {
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)).collect();
        let s = split_tudataset(&labels, seed);
        for (c, &m) in sizes.iter().enumerate() {
            let got = s.test.iter().filter(|&&i| labels[i] == c).count() as f64;
            let ideal = m as f64 / 10.0;
            prop_assert!((got - ideal).abs() <= 1.0, "class {} got {} ideal {}", c, got, ideal);
        }
    }
}

#[test]
fn synthetic_counts() {
    let t = synth_tree(2, 3, 0).unwrap();
    assert_eq!((t.num_nodes(), t.num_edges()), (15, 14));
    let g = synth_grid(3, 3, 0).unwrap();
    assert_eq!((g.num_nodes(), g.num_edges()), (9, 12));
    let tg = synth_tree_of_grids(2, 2, 3, 3, 0).unwrap();
    assert_eq!(tg.num_nodes(), 7 + 4 * 9);
    assert_eq!(tg.num_edges(), 6 + 4 * (12 + 1));
    assert_eq!(tg.feature_dim(), SYNTH_FEATURE_DIM);
    let count = |r: Role| tg.labels.iter().filter(|&&y| y == r as usize).count();
    assert_eq!((count(Role::TreeInterior), count(Role::Junction), count(Role::GridInterior)), (3, 4, 36));
    assert!(synth_grid(0, 3, 0).is_err());
}

#[test]
fn synthetic_features_are_seeded_and_follow_degree() {
    let a = synth_tree_of_grids(2, 2, 2, 2, 5).unwrap();
    assert_eq!(a, synth_tree_of_grids(2, 2, 2, 2, 5).unwrap());
    assert_ne!(a.features, synth_tree_of_grids(2, 2, 2, 2, 6).unwrap().features);
    let deg = a.degrees();
    for i in 0..a.num_nodes() {
        for j in 0..a.num_nodes() {
            assert_eq!(deg[i] == deg[j], a.features.row(i) == a.features.row(j));
        }
    }
}

fn path(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    Graph::new(n, &edges, Tensor::zeros(&[n, 1]), vec![]).unwrap()
}

#[test]
fn delta_of_trees_is_zero() {
    assert_eq!(delta_hyperbolicity(&path(5), DeltaMode::Exact).unwrap(), 0.0);
    let star = Graph::new(5, &[(0, 1), (0, 2), (0, 3), (0, 4)], Tensor::zeros(&[5, 1]), vec![]).unwrap();
    assert_eq!(delta_hyperbolicity(&star, DeltaMode::Exact).unwrap(), 0.0);
    assert_eq!(delta_hyperbolicity(&synth_tree(2, 4, 0).unwrap(), DeltaMode::Exact).unwrap(), 0.0);
}

/// Four-point defect over every ordered quadruple with Floyd-Warshall distances.
fn brute_delta(g: &Graph) -> f64 {
    let n = g.num_nodes();
    let inf = f64::INFINITY;
    let mut d = vec![inf; n * n];
    for i in 0..n {
        for &j in g.neighbors(i) {
            d[i * n + j] = if i == j { 0.0 } else { 1.0 };
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    let mut best = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                for w in 0..n {
                    let mut s = [d[x * n + y] + d[z * n + w], d[x * n + z] + d[y * n + w], d[x * n + w] + d[y * n + z]];
                    s.sort_by(f64::total_cmp);
                    best = best.max((s[2] - s[1]) / 2.0);
                }
            }
        }
    }
    best
}

#[test]
fn delta_matches_brute_force() {
    let grid = synth_grid(4, 4, 0).unwrap();
    let exact = delta_hyperbolicity(&grid, DeltaMode::Exact).unwrap();
    assert_eq!(exact, brute_delta(&grid));
    assert!(exact > 0.0);
    let cycle = Graph::new(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)], Tensor::zeros(&[6, 1]), vec![]).unwrap();
    assert_eq!(delta_hyperbolicity(&cycle, DeltaMode::Exact).unwrap(), brute_delta(&cycle));
}

#[test]
fn sampled_delta_is_a_lower_bound() {
    for g in [synth_grid(4, 3, 0).unwrap(), synth_tree_of_grids(2, 1, 3, 3, 0).unwrap(), path(9)] {
        let exact = delta_hyperbolicity(&g, DeltaMode::Exact).unwrap();
        for seed in 0..3 {
            let s = delta_hyperbolicity(&g, DeltaMode::Sampled { num_quadruples: 2000, seed }).unwrap();
            assert!(s <= exact);
        }
    }
}

#[test]
fn delta_errors() {
    let g = Graph::new(4, &[(0, 1), (2, 3)], Tensor::zeros(&[4, 1]), vec![]).unwrap();
    assert_eq!(delta_hyperbolicity(&g, DeltaMode::Exact), Err(DataError::Disconnected));
    let big = path(MAX_EXACT_NODES + 1);
    assert_eq!(
        delta_hyperbolicity(&big, DeltaMode::Exact),
        Err(DataError::TooLargeForExact { nodes: MAX_EXACT_NODES + 1, max: MAX_EXACT_NODES })
    );
    assert_eq!(delta_hyperbolicity(&big, DeltaMode::Sampled { num_quadruples: 100, seed: 0 }).unwrap(), 0.0);
}

#[test]
fn stratified_node_split_covers_every_class() {
    let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
    let s = stratified_node_split(&labels, 0.6, 0.2, 3).unwrap();
    for c in 0..5 {
        assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 6);
        assert_eq!(s.val.iter().filter(|&&i| labels[i] == c).count(), 2);
    }
    assert_eq!(s.train.len() + s.val.len() + s.test.len(), 50);
    assert!(stratified_node_split(&labels, 0.9, 0.2, 3).is_err());
}
