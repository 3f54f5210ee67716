use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use proptest::prelude::*;
use stag::config::RunConfig;
use stag::data::{append_csv, load_citation, make_split, SplitPolicy};
use stag::graph::Graph;
use stag::Error;

fn fixture(dir: &Path, content: &str, cites: &str) -> (PathBuf, PathBuf) {
    let c = dir.join("toy.content");
    let e = dir.join("toy.cites");
    fs::write(&c, content).unwrap();
    fs::write(&e, cites).unwrap();
    (c, e)
}

#[test]
fn loads_small_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (c, e) = fixture(
        dir.path(),
        "p1\t1\t0\t1\tA\np2\t0\t1\t0\tB\np3\t1\t1\t0\tA\n",
        "p1\tp2\np2\tp3\n",
    );
    let data = load_citation(&c, &e, false).unwrap();
    let g = &data.graph;
    assert_eq!(g.n_nodes(), 3);
    assert_eq!(g.n_edges(), 4);
    assert_eq!(data.node_ids, ["p1", "p2", "p3"]);
    assert_eq!(data.class_names, ["A", "B"]);
    assert_eq!(g.labels().unwrap(), &[0, 1, 0]);
    assert_eq!(g.features().row(0).to_vec(), vec![1.0, 0.0, 1.0]);

    let norm = load_citation(&c, &e, true).unwrap();
    for row in norm.graph.features().rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn duplicate_and_reversed_cites_collapse() {
    let dir = tempfile::tempdir().unwrap();
    let (c, e) = fixture(dir.path(), "a 1 x\nb 0 y\n", "a b\nb a\na b\na a\n");
    let data = load_citation(&c, &e, false).unwrap();
    assert_eq!(data.graph.edges(), vec![(0, 1), (1, 0)]);
}

#[test]
fn unknown_ids_are_counted() {
    let dir = tempfile::tempdir().unwrap();
    let (c, e) = fixture(dir.path(), "a 1 x\nb 0 y\n", "a b\na ghost\nghost b\n");
    let data = load_citation(&c, &e, false).unwrap();
    assert_eq!(data.skipped_cites, 2);
    assert_eq!(data.graph.n_edges(), 2);
}

#[test]
fn malformed_lines_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let (c, e) = fixture(dir.path(), "a 1 0 x\nb 0 1 y\nc 1 z\n", "");
    match load_citation(&c, &e, false) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("features"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let (c, e) = fixture(dir.path(), "a 1 0 x\nb 0 q y\n", "");
    assert!(matches!(
        load_citation(&c, &e, false),
        Err(Error::Parse { line: 2, .. })
    ));
    let (c, e) = fixture(dir.path(), "a 1 x\nb 0 y\n", "a b\na\n");
    assert!(matches!(
        load_citation(&c, &e, false),
        Err(Error::Parse { line: 2, .. })
    ));
}

fn labelled_graph(n: usize, classes: usize) -> Graph {
    let labels: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % classes).collect();
    Graph::new(&[], Array2::zeros((n, 1)), Some(labels)).unwrap()
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_sized(
        n in 30usize..200,
        classes in 1usize..8,
        frac in (0.05f64..0.3, 0.05f64..0.3, 0.05f64..0.3),
        random in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let g = labelled_graph(n, classes);
        let (a, b, c) = ((frac.0 * n as f64) as usize, (frac.1 * n as f64) as usize, (frac.2 * n as f64) as usize);
        let policy = if random { SplitPolicy::Random } else { SplitPolicy::PlanetoidLike };
        let s = make_split(&g, a, b, c, policy, seed).unwrap();
        prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (a, b, c));
        let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), a + b + c);
        prop_assert!(all.iter().all(|&i| i < n));
        prop_assert_eq!(&s, &make_split(&g, a, b, c, policy, seed).unwrap());

        if !random {
            let labels = g.labels().unwrap();
            let mut counts = vec![0usize; g.num_classes()];
            for &i in &s.train {
                counts[labels[i]] += 1;
            }
            let available: Vec<usize> = (0..g.num_classes()).map(|k| labels.iter().filter(|&&l| l == k).count()).collect();
            let open: Vec<usize> = counts.iter().zip(&available).filter(|(c, a)| c < a).map(|(c, _)| *c).collect();
            if let (Some(lo), Some(hi)) = (open.iter().min(), counts.iter().max()) {
                prop_assert!(hi - lo <= 1, "counts {:?}", counts);
            }
        }
    }
}

#[test]
fn oversized_split_is_rejected() {
    let g = labelled_graph(10, 2);
    assert!(make_split(&g, 5, 5, 5, SplitPolicy::Random, 0).is_err());
}

#[test]
fn config_defaults_and_manifest_round_trip() {
    let cfg = RunConfig::parse("").unwrap();
    let manifest = cfg.manifest();
    for key in ["model.kind", "train.lr", "train.epochs", "data.split", "noise.family"] {
        assert!(manifest.contains(key), "{key} missing from manifest");
    }
    let again = RunConfig::parse(&manifest).unwrap();
    assert_eq!(again.manifest(), manifest);
}

#[test]
fn vi_defaults_follow_dataset_and_granularity() {
    let cfg =
        RunConfig::parse("train.method = vi\nvi.granularity = per_edge_per_channel\ndata.dataset = cora\n").unwrap();
    let m = cfg.manifest();
    assert!(m.contains("vi.mu0 = 0.5"), "{m}");
    assert!(m.contains("vi.log_sigma0 = 1\n"), "{m}");
    assert!(m.contains("vi.sigma_prior = 0.5"), "{m}");
}

#[test]
fn config_errors_name_the_problem() {
    let err = |text: &str| RunConfig::parse(text).unwrap_err().to_string();
    assert!(err("noise.preset = dropedge\n").contains("noise.p_drop"));
    assert!(err("model.colour = red\n").contains("model.colour"));
    assert!(err("train.epochs = many\n").contains("train.epochs"));
    assert!(
        err("noise.preset = dropedge\nnoise.family = normal\nnoise.mu = 1\nnoise.sigma = 1\n").contains("dropedge")
    );
    assert!(err("train.lr = -1\n").contains("train.lr"));
    assert!(err("train.epochs = 50\ntrain.patience = 80\n").contains("train.patience"));
    assert_eq!(
        RunConfig::parse("train.epochs = 50\n").unwrap().train.patience,
        Some(50)
    );
    let o = RunConfig::parse_with_overrides("train.epochs = 10\n", &["train.epochs=20".to_string()]).unwrap();
    assert_eq!(o.train.epochs, 20);
    assert!(RunConfig::parse_with_overrides("", &["oops".to_string()]).is_err());
}

#[test]
fn csv_append_writes_header_once() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    append_csv(&p, &["a", "b"], &[vec!["1", "2"]]).unwrap();
    append_csv(&p, &["a", "b"], &[vec!["3", "4"], vec!["5", "6"]]).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,2\n3,4\n5,6\n");
}
