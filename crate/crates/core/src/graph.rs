//! Graphs, datasets and block-diagonal batches.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Undirected graph with node features.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted and de-duplicated.
/// Self-loops are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    x: Tensor,
    edge_attrs: Option<Tensor>,
    label: Option<usize>,
}

impl Graph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>, x: Tensor, label: Option<usize>) -> Result<Self> {
        Self::with_edge_attrs(n, edges, x, None, label)
    }

    /// `edge_attrs`, when given, has one row per entry of `edges` (in the
    /// order passed); duplicates keep the first row.
    pub fn with_edge_attrs(
        n: usize,
        edges: Vec<(usize, usize)>,
        x: Tensor,
        edge_attrs: Option<Tensor>,
        label: Option<usize>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        if x.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {n} nodes",
                x.rows()
            )));
        }
        if let Some(a) = &edge_attrs {
            if a.rows() != edges.len() {
                return Err(Error::InvalidGraph(format!(
                    "{} edge attribute rows for {} edges",
                    a.rows(),
                    edges.len()
                )));
            }
        }
        let mut keyed: Vec<((usize, usize), usize)> = Vec::with_capacity(edges.len());
        for (k, &(a, b)) in edges.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on node {a}")));
            }
            keyed.push(((a.min(b), a.max(b)), k));
        }
        // stable sort keeps the first occurrence first among duplicates
        keyed.sort_by_key(|(e, _)| *e);
        keyed.dedup_by_key(|(e, _)| *e);
        let edges: Vec<(usize, usize)> = keyed.iter().map(|(e, _)| *e).collect();
        let edge_attrs = match edge_attrs {
            Some(a) if !keyed.is_empty() => {
                let rows: Vec<usize> = keyed.iter().map(|(_, k)| *k).collect();
                Some(a.gather_rows(&rows)?)
            }
            _ => None,
        };
        Ok(Graph {
            n,
            edges,
            x,
            edge_attrs,
            label,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn edge_attrs(&self) -> Option<&Tensor> {
        self.edge_attrs.as_ref()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Dense symmetric 0/1 adjacency with a zero diagonal.
    pub fn adjacency(&self) -> Tensor {
        let mut a = Tensor::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }

    /// Subgraph induced by `nodes`, relabelled in ascending original order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut keep: Vec<usize> = nodes.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() {
            return Err(Error::InvalidGraph("induced subgraph on no nodes".into()));
        }
        if keep.last().is_some_and(|&v| v >= self.n) {
            return Err(Error::InvalidGraph("induced subgraph node out of range".into()));
        }
        let mut remap = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut edges = Vec::new();
        let mut attr_rows = Vec::new();
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            if remap[a] != usize::MAX && remap[b] != usize::MAX {
                edges.push((remap[a], remap[b]));
                attr_rows.push(k);
            }
        }
        let x = self.x.gather_rows(&keep)?;
        let attrs = match &self.edge_attrs {
            Some(a) if !attr_rows.is_empty() => Some(a.gather_rows(&attr_rows)?),
            _ => None,
        };
        Graph::with_edge_attrs(keep.len(), edges, x, attrs, self.label)
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::LengthMismatch(self.n, perm.len()));
        }
        let mut inverse = vec![usize::MAX; self.n];
        for (old, &new) in perm.iter().enumerate() {
            if new >= self.n || inverse[new] != usize::MAX {
                return Err(Error::invalid("not a permutation"));
            }
            inverse[new] = old;
        }
        let x = self.x.gather_rows(&inverse)?;
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Graph::with_edge_attrs(self.n, edges, x, self.edge_attrs.clone(), self.label)
    }

    /// Same graph with a replaced edge set (edge attributes are dropped).
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Graph> {
        Graph::new(self.n, edges, self.x.clone(), self.label)
    }

    pub fn with_features(&self, x: Tensor) -> Result<Graph> {
        Graph::with_edge_attrs(self.n, self.edges.clone(), x, self.edge_attrs.clone(), self.label)
    }
}

/// One-hot degree features, degrees above `max_degree` share the last slot.
pub fn degree_features(n: usize, edges: &[(usize, usize)], max_degree: usize) -> Tensor {
    let mut deg = vec![0usize; n];
    for &(a, b) in edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    let mut x = Tensor::zeros(n, max_degree + 1);
    for (i, d) in deg.into_iter().enumerate() {
        x.set(i, d.min(max_degree), 1.0);
    }
    x
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    graphs: Vec<Graph>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>, num_classes: usize) -> Result<Self> {
        let first = graphs.first().ok_or(Error::NoGraphs)?;
        let feature_dim = first.feature_dim();
        for g in &graphs {
            if g.feature_dim() != feature_dim {
                return Err(Error::FeatureDimMismatch {
                    expected: feature_dim,
                    found: g.feature_dim(),
                });
            }
            if let Some(l) = g.label() {
                if l >= num_classes {
                    return Err(Error::InvalidGraph(format!(
                        "label {l} outside [0, {num_classes})"
                    )));
                }
            }
        }
        Ok(Dataset {
            graphs,
            num_classes,
            feature_dim,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Labels of every graph; `None` if any graph is unlabelled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.graphs.iter().map(Graph::label).collect()
    }
}

/// Several graphs packed into one block-diagonal graph.
#[derive(Clone, Debug)]
pub struct Batch {
    pub graphs: Vec<Graph>,
    pub adj: Tensor,
    pub x: Tensor,
    pub graph_id: Vec<usize>,
    pub sizes: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl Batch {
    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.graph_id.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    /// Node indices of graph `g` within the batch.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g] + self.sizes[g]
    }
}

pub fn make_batch(graphs: &[Graph]) -> Result<Batch> {
    let first = graphs.first().ok_or(Error::NoGraphs)?;
    let d = first.feature_dim();
    let total: usize = graphs.iter().map(Graph::n).sum();
    let mut adj = Tensor::zeros(total, total);
    let mut x = Vec::with_capacity(total * d);
    let mut graph_id = Vec::with_capacity(total);
    let mut sizes = Vec::with_capacity(graphs.len());
    let mut offsets = Vec::with_capacity(graphs.len());
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d {
            return Err(Error::FeatureDimMismatch {
                expected: d,
                found: g.feature_dim(),
            });
        }
        for &(a, b) in g.edges() {
            adj.set(offset + a, offset + b, 1.0);
            adj.set(offset + b, offset + a, 1.0);
        }
        x.extend_from_slice(g.x().data());
        graph_id.extend(std::iter::repeat_n(gi, g.n()));
        sizes.push(g.n());
        offsets.push(offset);
        offset += g.n();
    }
    Ok(Batch {
        graphs: graphs.to_vec(),
        adj,
        x: Tensor::new(total, d, x)?,
        graph_id,
        sizes,
        offsets,
    })
}

/// Node features for synthetic graphs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthFeatures {
    /// i.i.d. standard normal entries of the given width.
    Gaussian(usize),
    /// One-hot node degree capped at the given maximum.
    Degree(usize),
    /// A single constant feature.
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub features: SynthFeatures,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_graphs: 200,
            n_nodes: 40,
            p_in: 0.6,
            p_out: 0.05,
            features: SynthFeatures::Gaussian(8),
        }
    }
}

/// Two-block stochastic block model, one graph per sample.
///
/// Nodes `0..n/2` form the first block. Even-indexed graphs carry label 0
/// and use `p_in` inside blocks; odd-indexed graphs carry label 1 and use
/// `p_in / 2`. Cross-block pairs connect with `p_out`.
pub fn synth_two_community(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    let SynthConfig {
        n_graphs,
        n_nodes,
        p_in,
        p_out,
        features,
    } = *cfg;
    let valid_p = |p: f64| (0.0..=1.0).contains(&p);
    if !valid_p(p_in) || !valid_p(p_out) || p_out > p_in {
        return Err(Error::invalid(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in} p_out={p_out}"
        )));
    }
    if n_nodes == 0 || n_nodes % 2 != 0 {
        return Err(Error::invalid(format!("n_nodes must be even and positive, got {n_nodes}")));
    }
    if n_graphs == 0 {
        return Err(Error::NoGraphs);
    }
    let mut rng = stream(seed, Stream::Data);
    let half = n_nodes / 2;
    let mut graphs = Vec::with_capacity(n_graphs);
    for gi in 0..n_graphs {
        let label = gi % 2;
        let within = if label == 0 { p_in } else { p_in / 2.0 };
        let mut edges = Vec::new();
        for i in 0..n_nodes {
            for j in (i + 1)..n_nodes {
                let p = if (i < half) == (j < half) { within } else { p_out };
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        let x = match features {
            SynthFeatures::Gaussian(d) => {
                Tensor::from_fn(n_nodes, d.max(1), |_, _| rng.sample::<f64, _>(StandardNormal))
            }
            SynthFeatures::Degree(max) => degree_features(n_nodes, &edges, max),
            SynthFeatures::Constant => Tensor::ones(n_nodes, 1),
        };
        graphs.push(Graph::new(n_nodes, edges, x, Some(label))?);
    }
    Dataset::new(graphs, 2)
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Degree cap for one-hot fallback features.
    pub max_degree: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { max_degree: 64 }
    }
}

fn tu_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Non-empty lines of a file with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect())
}

fn parse_fields<T: std::str::FromStr>(path: &Path, line_no: usize, line: &str) -> Result<Vec<T>> {
    line.split(',')
        .map(|f| {
            f.trim().parse::<T>().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line: line_no,
                msg: format!("cannot parse `{}`", f.trim()),
            })
        })
        .collect()
}

fn read_optional(path: &Path) -> Result<Option<Vec<(usize, String)>>> {
    if path.exists() {
        read_lines(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Loads a dataset in the TUDataset text layout.
pub fn load_tudataset(dir: &Path, name: &str, opts: LoadOptions) -> Result<Dataset> {
    let a_path = tu_path(dir, name, "A");
    let ind_path = tu_path(dir, name, "graph_indicator");
    for p in [&a_path, &ind_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }

    let indicator_lines = read_lines(&ind_path)?;
    if indicator_lines.is_empty() {
        return Err(Error::NoGraphs);
    }
    let mut owner = Vec::with_capacity(indicator_lines.len());
    for (line_no, line) in &indicator_lines {
        let v: Vec<usize> = parse_fields(&ind_path, *line_no, line)?;
        match v.as_slice() {
            [g] if *g >= 1 => owner.push(g - 1),
            _ => {
                return Err(Error::Parse {
                    file: ind_path.clone(),
                    line: *line_no,
                    msg: "expected one positive graph id".into(),
                })
            }
        }
    }
    let n_graphs = owner.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_graphs];
    let mut local = vec![0usize; owner.len()];
    for (node, &g) in owner.iter().enumerate() {
        local[node] = members[g].len();
        members[g].push(node);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::InvalidGraph(format!("graph {} has no nodes", empty + 1)));
    }

    let total = owner.len();
    let a_lines = read_lines(&a_path)?;
    let edge_attr_lines = read_optional(&tu_path(dir, name, "edge_attributes"))?;
    if let Some(lines) = &edge_attr_lines {
        if lines.len() != a_lines.len() {
            return Err(Error::LengthMismatch(a_lines.len(), lines.len()));
        }
    }
    let mut graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    let mut graph_edge_attrs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_graphs];
    for (k, (line_no, line)) in a_lines.iter().enumerate() {
        let v: Vec<usize> = parse_fields(&a_path, *line_no, line)?;
        let (i, j) = match v.as_slice() {
            [i, j] => (*i, *j),
            _ => {
                return Err(Error::Parse {
                    file: a_path.clone(),
                    line: *line_no,
                    msg: "expected `i, j`".into(),
                })
            }
        };
        if i == 0 || j == 0 || i > total || j > total {
            return Err(Error::Parse {
                file: a_path.clone(),
                line: *line_no,
                msg: format!("edge ({i}, {j}) references a node outside 1..={total}"),
            });
        }
        let (i, j) = (i - 1, j - 1);
        if owner[i] != owner[j] {
            return Err(Error::Parse {
                file: a_path.clone(),
                line: *line_no,
                msg: format!("edge ({}, {}) crosses graphs", i + 1, j + 1),
            });
        }
        if i == j {
            continue;
        }
        let g = owner[i];
        graph_edges[g].push((local[i], local[j]));
        if let Some(lines) = &edge_attr_lines {
            let (ln, l) = &lines[k];
            graph_edge_attrs[g].push(parse_fields(&tu_path(dir, name, "edge_attributes"), *ln, l)?);
        }
    }

    let labels = match read_optional(&tu_path(dir, name, "graph_labels"))? {
        Some(lines) => {
            if lines.len() != n_graphs {
                return Err(Error::LengthMismatch(n_graphs, lines.len()));
            }
            let path = tu_path(dir, name, "graph_labels");
            let raw: Vec<i64> = lines
                .iter()
                .map(|(ln, l)| {
                    let v: Vec<i64> = parse_fields(&path, *ln, l)?;
                    v.first().copied().ok_or_else(|| Error::Parse {
                        file: path.clone(),
                        line: *ln,
                        msg: "empty label".into(),
                    })
                })
                .collect::<Result<_>>()?;
            Some(normalize_labels(&raw))
        }
        None => None,
    };

    let attrs = match read_optional(&tu_path(dir, name, "node_attributes"))? {
        Some(lines) => {
            if lines.len() != total {
                return Err(Error::LengthMismatch(total, lines.len()));
            }
            let path = tu_path(dir, name, "node_attributes");
            let rows: Vec<Vec<f64>> = lines
                .iter()
                .map(|(ln, l)| parse_fields(&path, *ln, l))
                .collect::<Result<_>>()?;
            Some(Tensor::from_rows(&rows)?)
        }
        None => None,
    };
    let node_labels = match read_optional(&tu_path(dir, name, "node_labels"))? {
        Some(lines) => {
            if lines.len() != total {
                return Err(Error::LengthMismatch(total, lines.len()));
            }
            let path = tu_path(dir, name, "node_labels");
            let raw: Vec<i64> = lines
                .iter()
                .map(|(ln, l)| parse_fields::<i64>(&path, *ln, l).map(|v| v[0]))
                .collect::<Result<_>>()?;
            let mut values: Vec<i64> = raw.clone();
            values.sort_unstable();
            values.dedup();
            let index: BTreeMap<i64, usize> = values.iter().enumerate().map(|(i, v)| (*v, i)).collect();
            Some(Tensor::from_fn(total, values.len(), |i, j| {
                if index[&raw[i]] == j {
                    1.0
                } else {
                    0.0
                }
            }))
        }
        None => None,
    };
    let global_x = match (attrs, node_labels) {
        (Some(a), Some(l)) => Some(hstack(&a, &l)),
        (Some(a), None) => Some(a),
        (None, Some(l)) => Some(l),
        (None, None) => None,
    };

    let mut graphs = Vec::with_capacity(n_graphs);
    for g in 0..n_graphs {
        let nodes = &members[g];
        let edges = std::mem::take(&mut graph_edges[g]);
        let x = match &global_x {
            Some(gx) => gx.gather_rows(nodes)?,
            None => {
                let mut dedup: Vec<(usize, usize)> =
                    edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
                dedup.sort_unstable();
                dedup.dedup();
                degree_features(nodes.len(), &dedup, opts.max_degree)
            }
        };
        let edge_attrs = if edge_attr_lines.is_some() && !edges.is_empty() {
            Some(Tensor::from_rows(&graph_edge_attrs[g])?)
        } else {
            None
        };
        let label = labels.as_ref().map(|(l, _)| l[g]);
        graphs.push(Graph::with_edge_attrs(nodes.len(), edges, x, edge_attrs, label)?);
    }
    let num_classes = labels.map_or(0, |(_, k)| k);
    Dataset::new(graphs, num_classes)
}

fn hstack(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_fn(a.rows(), a.cols() + b.cols(), |i, j| {
        if j < a.cols() {
            a.get(i, j)
        } else {
            b.get(i, j - a.cols())
        }
    })
}

/// Non-negative labels are kept as class ids; otherwise the sorted distinct
/// values are mapped to `0..k`.
fn normalize_labels(raw: &[i64]) -> (Vec<usize>, usize) {
    if raw.iter().all(|&v| v >= 0) {
        let k = raw.iter().max().map_or(0, |&m| m as usize + 1);
        (raw.iter().map(|&v| v as usize).collect(), k)
    } else {
        let mut values = raw.to_vec();
        values.sort_unstable();
        values.dedup();
        let index: BTreeMap<i64, usize> = values.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        (raw.iter().map(|v| index[v]).collect(), values.len())
    }
}

/// Writes `dataset` in the TUDataset text layout.
///
/// Node features are written as `name_node_attributes.txt`, so reloading
/// reproduces them exactly.
pub fn write_tudataset(dataset: &Dataset, dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut a = String::new();
    let mut ea = String::new();
    let mut ind = String::new();
    let mut attrs = String::new();
    let with_edge_attrs = dataset.graphs().iter().all(|g| g.edge_attrs().is_some() || g.num_edges() == 0)
        && dataset.graphs().iter().any(|g| g.edge_attrs().is_some());
    let mut offset = 0;
    for (gi, g) in dataset.graphs().iter().enumerate() {
        for i in 0..g.n() {
            ind.push_str(&format!("{}\n", gi + 1));
            attrs.push_str(&join_floats(g.x().row(i)));
            attrs.push('\n');
        }
        for (k, &(i, j)) in g.edges().iter().enumerate() {
            let (gi_, gj) = (offset + i + 1, offset + j + 1);
            a.push_str(&format!("{gi_}, {gj}\n{gj}, {gi_}\n"));
            if with_edge_attrs {
                let row = join_floats(g.edge_attrs().expect("checked").row(k));
                ea.push_str(&format!("{row}\n{row}\n"));
            }
        }
        offset += g.n();
    }
    let write = |suffix: &str, body: &str| -> Result<()> {
        let mut f = fs::File::create(tu_path(dir, name, suffix))?;
        f.write_all(body.as_bytes())?;
        Ok(())
    };
    write("A", &a)?;
    write("graph_indicator", &ind)?;
    write("node_attributes", &attrs)?;
    if with_edge_attrs {
        write("edge_attributes", &ea)?;
    }
    if let Some(labels) = dataset.labels() {
        let body: String = labels.iter().map(|l| format!("{l}\n")).collect();
        write("graph_labels", &body)?;
    }
    Ok(())
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> Graph {
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(n, edges, Tensor::ones(n, 2), None).unwrap()
    }

    #[test]
    fn graph_normalizes_edges() {
        let g = Graph::new(3, vec![(1, 0), (0, 1), (2, 1)], Tensor::ones(3, 1), None).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(Graph::new(3, vec![(0, 3)], Tensor::ones(3, 1), None).is_err());
        assert!(Graph::new(3, vec![(1, 1)], Tensor::ones(3, 1), None).is_err());
        assert!(Graph::new(3, vec![], Tensor::ones(2, 1), None).is_err());
    }

    #[test]
    fn batch_packs_block_diagonally() {
        let b = make_batch(&[path_graph(3), path_graph(4)]).unwrap();
        assert_eq!(b.num_nodes(), 7);
        assert_eq!(b.graph_id, vec![0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(b.sizes.iter().sum::<usize>(), 7);
        for i in 0..7 {
            for j in 0..7 {
                if b.graph_id[i] != b.graph_id[j] {
                    assert_eq!(b.adj.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_graph_batch_is_its_adjacency() {
        let g = path_graph(5);
        let b = make_batch(std::slice::from_ref(&g)).unwrap();
        assert_eq!(b.adj, g.adjacency());
    }

    #[test]
    fn batch_rejects_mixed_feature_dims() {
        let g1 = path_graph(2);
        let g2 = Graph::new(2, vec![], Tensor::ones(2, 3), None).unwrap();
        assert!(matches!(make_batch(&[g1, g2]), Err(Error::FeatureDimMismatch { .. })));
    }

    #[test]
    fn synth_forced_probabilities() {
        let cfg = SynthConfig {
            n_graphs: 1,
            n_nodes: 8,
            p_in: 1.0,
            p_out: 0.0,
            features: SynthFeatures::Constant,
        };
        let ds = synth_two_community(&cfg, 3).unwrap();
        let g = &ds.graphs()[0];
        assert_eq!(g.label(), Some(0));
        assert_eq!(g.num_edges(), 12);
        assert!(g.edges().iter().all(|&(a, b)| (a < 4) == (b < 4)));

        let empty = SynthConfig {
            p_in: 0.0,
            p_out: 0.0,
            n_graphs: 4,
            ..cfg
        };
        let ds = synth_two_community(&empty, 3).unwrap();
        assert!(ds.graphs().iter().all(|g| g.num_edges() == 0));
    }

    #[test]
    fn synth_rejects_bad_input() {
        let mut cfg = SynthConfig {
            n_graphs: 2,
            n_nodes: 8,
            p_in: 0.2,
            p_out: 0.5,
            features: SynthFeatures::Constant,
        };
        assert!(synth_two_community(&cfg, 0).is_err());
        cfg.p_out = 0.1;
        cfg.n_nodes = 7;
        assert!(synth_two_community(&cfg, 0).is_err());
    }

    #[test]
    fn degree_one_hot_caps() {
        let x = degree_features(4, &[(0, 1), (0, 2), (0, 3)], 2);
        assert_eq!(x.cols(), 3);
        assert_eq!(x.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(x.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn permutation_moves_rows() {
        let x = Tensor::from_fn(3, 1, |i, _| i as f64);
        let g = Graph::new(3, vec![(0, 1)], x, None).unwrap();
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.x().data(), &[1.0, 2.0, 0.0]);
        assert_eq!(p.edges(), &[(0, 2)]);
    }
}
