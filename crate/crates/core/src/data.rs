//! Citation datasets, node splits, edge lists and result files.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "STAG_DATA_DIR";

/// Dataset root from [`DATA_DIR_ENV`], defaulting to `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// `<dir>/<name>.content` and `<dir>/<name>.cites`, if both exist.
pub fn citation_paths(dir: &Path, name: &str) -> Option<(PathBuf, PathBuf)> {
    let content = dir.join(format!("{name}.content"));
    let cites = dir.join(format!("{name}.cites"));
    (content.is_file() && cites.is_file()).then_some((content, cites))
}

#[derive(Debug, Clone)]
pub struct CitationData {
    pub graph: Graph,
    /// Original node ids in index order.
    pub node_ids: Vec<String>,
    /// Class names in id order.
    pub class_names: Vec<String>,
    /// Citation lines naming an unknown paper.
    pub skipped_cites: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads a `.content` / `.cites` pair.
///
/// Content lines are `id f1 … fK label` (whitespace separated), cites lines
/// are `cited citing`. Ids are indexed in first-appearance order, classes in
/// first-appearance order, edges are symmetrized and duplicates collapse.
pub fn load_citation(content_path: &Path, cites_path: &Path, row_normalize: bool) -> Result<CitationData> {
    let mut node_ids = Vec::new();
    let mut index = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index = HashMap::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;

    let reader = BufReader::new(fs::File::open(content_path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(parse_err(content_path, i + 1, "expected id, features and label"));
        }
        let k = fields.len() - 2;
        match width {
            None => width = Some(k),
            Some(w) if w != k => {
                return Err(parse_err(
                    content_path,
                    i + 1,
                    format!("{k} features, previous lines had {w}"),
                ))
            }
            _ => {}
        }
        let id = fields[0].to_string();
        if index.contains_key(&id) {
            return Err(parse_err(content_path, i + 1, format!("duplicate node id '{id}'")));
        }
        for f in &fields[1..=k] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(content_path, i + 1, format!("bad feature value '{f}'")))?;
            rows.push(v);
        }
        let label = fields[k + 1];
        let next = class_index.len();
        let class = *class_index.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            next
        });
        labels.push(class);
        index.insert(id.clone(), node_ids.len());
        node_ids.push(id);
    }
    let n = node_ids.len();
    if n == 0 {
        return Err(parse_err(content_path, 1, "no nodes"));
    }
    let mut features = Array2::from_shape_vec((n, width.expect("n > 0")), rows).expect("rows have uniform width");
    if row_normalize {
        for mut row in features.rows_mut() {
            let s: f64 = row.sum();
            if s != 0.0 {
                row /= s;
            }
        }
    }

    let mut edges = Vec::new();
    let mut skipped = 0;
    let reader = BufReader::new(fs::File::open(cites_path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(parse_err(cites_path, i + 1, "expected 'cited citing'"));
        }
        match (index.get(fields[0]), index.get(fields[1])) {
            (Some(&a), Some(&b)) if a != b => edges.push((a, b)),
            (Some(_), Some(_)) => {}
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} citation lines naming unknown papers");
    }
    let graph = Graph::undirected(&edges, features, Some(labels))?;
    Ok(CitationData {
        graph,
        node_ids,
        class_names,
        skipped_cites: skipped,
    })
}

/// Disjoint train / validation / test node lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let mut seen = vec![false; n_nodes];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n_nodes {
                return Err(Error::InvalidArgument(format!("split index {i} >= {n_nodes}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("node {i} appears in two splits")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPolicy {
    /// Class-balanced training nodes, then validation and test from the rest.
    PlanetoidLike,
    /// Uniform without replacement.
    Random,
}

impl std::str::FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planetoid_like" => Ok(SplitPolicy::PlanetoidLike),
            "random" => Ok(SplitPolicy::Random),
            _ => Err(Error::Config(format!(
                "unknown split policy '{s}' (planetoid_like, random)"
            ))),
        }
    }
}

/// Seeded split of `g`'s nodes.
///
/// `PlanetoidLike` takes `⌈n_train / classes⌉` nodes per class from a
/// seeded shuffle, truncated to `n_train` with per-class counts differing by
/// at most one, then draws validation and test nodes from the remainder.
pub fn make_split(
    g: &Graph,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    policy: SplitPolicy,
    seed: u64,
) -> Result<Split> {
    let n = g.n_nodes();
    if n_train + n_val + n_test > n {
        return Err(Error::InvalidArgument(format!(
            "split {n_train}+{n_val}+{n_test} exceeds {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let train = match policy {
        SplitPolicy::Random => order[..n_train].to_vec(),
        SplitPolicy::PlanetoidLike => {
            let labels = g
                .labels()
                .ok_or_else(|| Error::InvalidArgument("planetoid_like split needs labels".into()))?;
            let k = g.num_classes().max(1);
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
            for &i in &order {
                by_class[labels[i]].push(i);
            }
            // Round-robin over classes keeps per-class counts within one.
            let mut train = Vec::with_capacity(n_train);
            let mut depth = 0;
            while train.len() < n_train {
                let before = train.len();
                for members in &by_class {
                    if train.len() == n_train {
                        break;
                    }
                    if let Some(&i) = members.get(depth) {
                        train.push(i);
                    }
                }
                if train.len() == before {
                    break;
                }
                depth += 1;
            }
            train
        }
    };
    let mut taken = vec![false; n];
    for &i in &train {
        taken[i] = true;
    }
    let rest: Vec<usize> = order.into_iter().filter(|&i| !taken[i]).collect();
    let val = rest[..n_val].to_vec();
    let test = rest[rest.len() - n_test..].to_vec();
    let split = Split { train, val, test };
    split.validate(n)?;
    Ok(split)
}

/// Writes `n_nodes` then one `src dst` line per stored directed edge.
pub fn write_edge_list(g: &Graph, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# nodes {}", g.n_nodes())?;
    for (s, d) in g.edges() {
        writeln!(out, "{s} {d}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file produced by [`write_edge_list`]; features are zero-width.
pub fn read_edge_list(path: &Path) -> Result<Graph> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut n_nodes = None;
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix("# nodes") {
            n_nodes = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, "bad node count"))?,
            );
            continue;
        }
        let mut it = t.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, i + 1, "expected 'src dst'"));
        };
        let a: usize = a.parse().map_err(|_| parse_err(path, i + 1, "bad source index"))?;
        let b: usize = b.parse().map_err(|_| parse_err(path, i + 1, "bad target index"))?;
        edges.push((a, b));
    }
    let n = n_nodes.ok_or_else(|| parse_err(path, 1, "missing '# nodes N' header"))?;
    Graph::new(&edges, Array2::zeros((n, 0)), None)
}

/// Appends `rows` to a CSV file, writing `header` only when the file is new or empty.
pub fn append_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header)?;
    }
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(|s| s.as_ref()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a CSV file from scratch.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    if path.exists() {
        fs::remove_file(path)?;
    }
    append_csv(path, header, rows)
}

/// Synthetic graph with the size profile of the Cora citation graph:
/// 2708 nodes, about 5.3k undirected edges, 1433 sparse binary features
/// (row-normalized) and 7 classes with homophilous edges.
pub fn synthetic_citation<R: Rng + ?Sized>(rng: &mut R) -> Result<Graph> {
    synthetic_citation_sized(2708, 5278, 1433, 7, rng)
}

/// Planted-partition graph with class-correlated sparse binary features.
pub fn synthetic_citation_sized<R: Rng + ?Sized>(
    n: usize,
    undirected_edges: usize,
    n_features: usize,
    n_classes: usize,
    rng: &mut R,
) -> Result<Graph> {
    if n < 2 || n_classes == 0 || n_features < n_classes {
        return Err(Error::InvalidArgument("synthetic graph too small".into()));
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut set = std::collections::HashSet::new();
    while set.len() < undirected_edges {
        let a = rng.random_range(0..n);
        let b = if rng.random::<f64>() < 0.8 && by_class[labels[a]].len() > 1 {
            let members = &by_class[labels[a]];
            members[rng.random_range(0..members.len())]
        } else {
            rng.random_range(0..n)
        };
        if a != b {
            set.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges: Vec<_> = set.into_iter().collect();
    edges.sort_unstable();
    let block = n_features / n_classes;
    let mut features = Array2::zeros((n, n_features));
    for (i, &c) in labels.iter().enumerate() {
        for _ in 0..18 {
            let j = if rng.random::<f64>() < 0.6 {
                c * block + rng.random_range(0..block)
            } else {
                rng.random_range(0..n_features)
            };
            features[[i, j]] = 1.0;
        }
        let s: f64 = features.row(i).sum();
        features.row_mut(i).mapv_inplace(|v| v / s);
    }
    Graph::undirected(&edges, features, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, content: &str, cites: &str) -> (PathBuf, PathBuf) {
        let c = dir.join("toy.content");
        let e = dir.join("toy.cites");
        fs::write(&c, content).unwrap();
        fs::write(&e, cites).unwrap();
        (c, e)
    }

    #[test]
    fn loads_three_node_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = fixture(
            dir.path(),
            "p1\t1\t0\t1\tA\np2\t0\t1\t0\tB\np3\t1\t1\t0\tA\n",
            "p1\tp2\np2\tp3\np2\tp3\np9\tp1\n",
        );
        let d = load_citation(&c, &e, true).unwrap();
        assert_eq!(d.graph.n_nodes(), 3);
        assert_eq!(d.graph.n_edges(), 4);
        assert_eq!(d.skipped_cites, 1);
        assert_eq!(d.graph.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(d.graph.features().row(0).to_vec(), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = fixture(dir.path(), "p1 1 0 A\np2 1 B\n", "");
        match load_citation(&c, &e, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::undirected(&[(0, 1), (2, 3), (1, 2)], Array2::zeros((5, 0)), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.edges");
        write_edge_list(&g, &p).unwrap();
        let h = read_edge_list(&p).unwrap();
        assert_eq!(h.n_nodes(), 5);
        assert_eq!(h.edges(), g.edges());
    }

    #[test]
    fn csv_appends_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        append_csv(&p, &["a", "b"], &[vec!["1", "2"]]).unwrap();
        append_csv(&p, &["a", "b"], &[vec!["3", "4"]]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,2\n3,4\n");
    }
}
