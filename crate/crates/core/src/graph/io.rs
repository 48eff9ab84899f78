//! `nodes.csv` / `edges.csv` dataset directories.

use std::fs::File;
use std::path::Path;

use ndarray::Array2;

use super::{build_graph, Graph};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            other => Error::Parse(format!("{}: {other:?}", path.display())),
        })
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{line}: {msg}", path.display()))
}

/// Loads a graph from `dir/nodes.csv` and `dir/edges.csv`.
///
/// Label `-1` marks an unlabeled node; such nodes are excluded from
/// supervision through the graph's label mask.
pub fn load_dataset(dir: &Path) -> Result<Graph> {
    let nodes_path = dir.join("nodes.csv");
    let mut rdr = open(&nodes_path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(&nodes_path, 1, e))?
        .clone();
    let f = header.len().saturating_sub(2);
    let expected: Vec<String> = ["id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..f).map(|i| format!("f{i}")))
        .collect();
    if f == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            &nodes_path,
            1,
            format!("header must be id,label,f0,...; got {}", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows: Vec<(usize, i64, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(&nodes_path, line, e))?;
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(&nodes_path, line, format!("bad id {:?}", &rec[0])))?;
        let label: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(&nodes_path, line, format!("bad label {:?}", &rec[1])))?;
        if label < -1 {
            return Err(parse_err(&nodes_path, line, format!("label {label} below -1")));
        }
        let feats = rec
            .iter()
            .skip(2)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(&nodes_path, line, e))?;
        rows.push((id, label, feats));
    }
    rows.sort_by_key(|r| r.0);
    for (expect, row) in rows.iter().enumerate() {
        if row.0 != expect {
            return Err(Error::Parse(format!(
                "{}: node ids must be contiguous 0..{}; offending id {}",
                nodes_path.display(),
                rows.len(),
                row.0
            )));
        }
    }
    let n = rows.len();
    let mut x = Array2::zeros((n, f));
    let mut labels = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for (i, (_, label, feats)) in rows.into_iter().enumerate() {
        for (j, v) in feats.into_iter().enumerate() {
            x[[i, j]] = v;
        }
        labels.push(label.max(0) as usize);
        mask.push(label >= 0);
    }

    let edges_path = dir.join("edges.csv");
    let mut rdr = open(&edges_path)?;
    let header = rdr.headers().map_err(|e| parse_err(&edges_path, 1, e))?;
    if header.iter().ne(["src", "dst"]) {
        return Err(parse_err(&edges_path, 1, "header must be src,dst"));
    }
    let mut edges = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(&edges_path, line, e))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(&edges_path, line, format!("bad node id {s:?}")))
        };
        edges.push((parse(&rec[0])?, parse(&rec[1])?));
    }

    let any_labeled = mask.iter().any(|&m| m);
    let labels = any_labeled.then_some(labels);
    let (mut g, _) = build_graph(x, labels, &edges)?;
    if any_labeled && mask.iter().any(|&m| !m) {
        g.set_label_mask(Some(mask));
    }
    Ok(g)
}

/// Writes `g` in the dataset directory layout read by [`load_dataset`].
pub fn write_dataset(g: &Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(dir.join("nodes.csv")).map_err(to_io)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..g.feature_dim()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(to_io)?;
    for v in 0..g.node_count() {
        let label = match g.labels() {
            Some(l) if g.is_labeled(v) => l[v] as i64,
            _ => -1,
        };
        let mut rec = vec![v.to_string(), label.to_string()];
        rec.extend(g.features().row(v).iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(to_io)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("edges.csv")).map_err(to_io)?;
    w.write_record(["src", "dst"]).map_err(to_io)?;
    for &(u, v) in g.edges() {
        w.write_record([u.to_string(), v.to_string()]).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}
