//! Plain-text graph format.
//!
//! ```text
//! dualgnn-graph 1
//! <n> <d> <num_classes>
//! features
//! <d space-separated decimals>        (n lines, one per node)
//! labels
//! <n space-separated integers>         (one line; -1 marks an unlabeled node)
//! train <k> <i_1> ... <i_k>
//! val <k> <i_1> ... <i_k>
//! test <k> <i_1> ... <i_k>
//! edges <m>
//! <i> <j>                              (m lines, undirected pairs with i < j)
//! ```
//!
//! UTF-8 with LF line endings. Errors report the 1-based line number.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::diffmath::{Matrix, SparseMatrix};

use super::graph::{Graph, NodeMask};
use super::GraphError;

pub const FORMAT_MAGIC: &str = "dualgnn-graph 1";

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Split<'a, char>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let text = text.strip_suffix('\n').unwrap_or(text);
        Self { inner: text.split('\n').enumerate(), last: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), GraphError> {
        match self.inner.next() {
            Some((i, line)) => {
                self.last = i + 1;
                if line.ends_with('\r') {
                    return Err(err(i + 1, "CR line ending; expected LF"));
                }
                Ok((i + 1, line))
            }
            None => Err(err(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Format { line, message: message.into() }
}

fn parse_field<T: FromStr>(line: usize, tok: &str, what: &str) -> Result<T, GraphError> {
    tok.parse().map_err(|_| err(line, format!("invalid {what} {tok:?}")))
}

fn expect_keyword(lines: &mut Lines<'_>, keyword: &str) -> Result<(), GraphError> {
    let (ln, line) = lines.next(keyword)?;
    if line.trim() != keyword {
        return Err(err(ln, format!("expected {keyword:?}, found {line:?}")));
    }
    Ok(())
}

fn parse_mask(lines: &mut Lines<'_>, name: &str, n: usize) -> Result<(usize, Vec<usize>), GraphError> {
    let (ln, line) = lines.next(name)?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some(name) {
        return Err(err(ln, format!("expected {name:?} mask line")));
    }
    let k: usize = parse_field(ln, toks.next().unwrap_or(""), "mask size")?;
    let idx = toks.map(|t| parse_field::<usize>(ln, t, "node index")).collect::<Result<Vec<_>, _>>()?;
    if idx.len() != k {
        return Err(err(ln, format!("{name} mask declares {k} nodes but lists {}", idx.len())));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(err(ln, format!("{name} mask index {bad} outside 0..{n}")));
    }
    let mut sorted = idx.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(err(ln, format!("{name} mask lists a node twice")));
    }
    Ok((ln, idx))
}

/// Parses a graph from text in the format above.
pub fn parse_graph(text: &str) -> Result<Graph, GraphError> {
    let mut lines = Lines::new(text);
    let (ln, magic) = lines.next("header")?;
    if magic.trim() != FORMAT_MAGIC {
        return Err(err(ln, format!("expected {FORMAT_MAGIC:?}")));
    }
    let (ln, dims) = lines.next("dimensions")?;
    let dims: Vec<&str> = dims.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(err(ln, "expected \"<n> <d> <num_classes>\""));
    }
    let n: usize = parse_field(ln, dims[0], "node count")?;
    let d: usize = parse_field(ln, dims[1], "feature dimension")?;
    let c: usize = parse_field(ln, dims[2], "class count")?;
    if d == 0 || c == 0 {
        return Err(err(ln, "feature dimension and class count must be positive"));
    }

    expect_keyword(&mut lines, "features")?;
    let mut feats = Vec::with_capacity(n * d);
    for _ in 0..n {
        let (ln, line) = lines.next("feature row")?;
        let before = feats.len();
        for tok in line.split_whitespace() {
            let v: f64 = parse_field(ln, tok, "feature value")?;
            if !v.is_finite() {
                return Err(err(ln, "non-finite feature value"));
            }
            feats.push(v);
        }
        if feats.len() - before != d {
            return Err(err(ln, format!("expected {d} features, found {}", feats.len() - before)));
        }
    }
    let features = Matrix::from_vec(n, d, feats).expect("row count checked");

    expect_keyword(&mut lines, "labels")?;
    let (ln, line) = lines.next("label vector")?;
    let mut labels = Vec::with_capacity(n);
    for tok in line.split_whitespace() {
        let v: i64 = parse_field(ln, tok, "label")?;
        labels.push(match v {
            -1 => None,
            v if v >= 0 && (v as usize) < c => Some(v as usize),
            v => return Err(err(ln, format!("label {v} outside 0..{c} (or -1)"))),
        });
    }
    if labels.len() != n {
        return Err(err(ln, format!("expected {n} labels, found {}", labels.len())));
    }

    let mut masks = Vec::with_capacity(3);
    let mut mask_lines = Vec::with_capacity(3);
    for name in ["train", "val", "test"] {
        let (ln, idx) = parse_mask(&mut lines, name, n)?;
        mask_lines.push(ln);
        masks.push(NodeMask::from_indices(n, &idx)?);
    }

    let (ln, line) = lines.next("edge header")?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some("edges") {
        return Err(err(ln, "expected \"edges <m>\""));
    }
    let m: usize = parse_field(ln, toks.next().unwrap_or(""), "edge count")?;
    let mut edges = Vec::with_capacity(m);
    let mut seen = std::collections::HashSet::with_capacity(m);
    for _ in 0..m {
        let (ln, line) = lines.next("edge")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(err(ln, "expected \"<i> <j>\""));
        }
        let i: usize = parse_field(ln, toks[0], "node index")?;
        let j: usize = parse_field(ln, toks[1], "node index")?;
        if i >= j {
            return Err(err(ln, format!("edge ({i}, {j}) must satisfy i < j")));
        }
        if j >= n {
            return Err(err(ln, format!("edge endpoint {j} outside 0..{n}")));
        }
        if !seen.insert((i, j)) {
            return Err(err(ln, format!("duplicate edge ({i}, {j})")));
        }
        edges.push((i, j));
    }
    if let Some((i, line)) = lines.inner.next() {
        return Err(err(i + 1, format!("trailing content {line:?}")));
    }

    let adjacency = SparseMatrix::from_undirected_edges(n, &edges)?;
    let mut it = masks.into_iter();
    let (train, val, test) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Graph::new(features, adjacency, labels, c, train, val, test).map_err(|e| match e {
        GraphError::MaskOverlap { second: mask, .. } | GraphError::MissingLabel { mask, .. } => {
            let line = match mask {
                "train" => mask_lines[0],
                "val" => mask_lines[1],
                _ => mask_lines[2],
            };
            err(line, e.to_string())
        }
        other => other,
    })
}

/// Reads a graph file.
pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let text = fs::read_to_string(path)?;
    parse_graph(&text)
}

/// Writes `g` in the text format. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_graph<W: Write>(g: &Graph, out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{FORMAT_MAGIC}")?;
    writeln!(w, "{} {} {}", g.num_nodes(), g.feature_dim(), g.num_classes())?;
    writeln!(w, "features")?;
    for r in 0..g.num_nodes() {
        let row: Vec<String> = g.features().row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    writeln!(w, "labels")?;
    let labels: Vec<String> = g.labels().iter().map(|l| l.map_or("-1".to_string(), |v| v.to_string())).collect();
    writeln!(w, "{}", labels.join(" "))?;
    for (name, mask) in [("train", g.train_mask()), ("val", g.val_mask()), ("test", g.test_mask())] {
        let idx = mask.indices();
        write!(w, "{name} {}", idx.len())?;
        for i in idx {
            write!(w, " {i}")?;
        }
        writeln!(w)?;
    }
    let pairs = g.adjacency().upper_pairs();
    writeln!(w, "edges {}", pairs.len())?;
    for (i, j) in pairs {
        writeln!(w, "{i} {j}")?;
    }
    w.flush()
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let file = fs::File::create(path)?;
    write_graph(g, file)?;
    Ok(())
}
