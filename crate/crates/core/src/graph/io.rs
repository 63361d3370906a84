//! Canonical on-disk graph directory.
//!
//! ```text
//! manifest.json  {"num_nodes", "num_classes", "feature_dim", "edges", "features", "labels"}
//! edges.csv      `src,dst` per line, 0-indexed
//! features.csv   N lines of d comma-separated floats
//! labels.csv     N lines, one integer each
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphManifest {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub edges: String,
    pub features: String,
    pub labels: String,
}

impl GraphManifest {
    fn canonical(g: &Graph) -> Self {
        Self {
            num_nodes: g.num_nodes(),
            num_classes: g.num_classes(),
            feature_dim: g.feature_dim(),
            edges: "edges.csv".into(),
            features: "features.csv".into(),
            labels: "labels.csv".into(),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Loads a graph from a manifest file or from a directory containing `manifest.json`.
pub fn load_graph(manifest_path: impl AsRef<Path>) -> Result<Graph> {
    let manifest_path = manifest_path.as_ref();
    let manifest_path: PathBuf = if manifest_path.is_dir() {
        manifest_path.join("manifest.json")
    } else {
        manifest_path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: GraphManifest = serde_json::from_str(&read(&manifest_path)?)?;
    let n = manifest.num_nodes;

    let edges_path = dir.join(&manifest.edges);
    let mut edges = Vec::new();
    for (ln, line) in read(&edges_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = || -> Result<usize> {
            let field = parts
                .next()
                .ok_or_else(|| parse_err(&edges_path, ln + 1, "expected `src,dst`"))?;
            field
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(&edges_path, ln + 1, e.to_string()))
        };
        let (a, b) = (next()?, next()?);
        if a >= n || b >= n {
            return Err(parse_err(
                &edges_path,
                ln + 1,
                format!("edge ({a}, {b}) out of range for {n} nodes"),
            ));
        }
        edges.push((a, b));
    }

    let features_path = dir.join(&manifest.features);
    let text = read(&features_path)?;
    let mut data = Vec::with_capacity(n * manifest.feature_dim);
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e: std::num::ParseFloatError| parse_err(&features_path, ln + 1, e.to_string()))?;
            if !v.is_finite() {
                return Err(parse_err(&features_path, ln + 1, "non-finite feature"));
            }
            data.push(v);
        }
        if data.len() - before != manifest.feature_dim {
            return Err(parse_err(
                &features_path,
                ln + 1,
                format!(
                    "{} values, expected {}",
                    data.len() - before,
                    manifest.feature_dim
                ),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::InvalidGraph(format!(
            "{}: {rows} feature rows, manifest says {n}",
            features_path.display()
        )));
    }
    let features = DenseMatrix::from_vec(n, manifest.feature_dim, data)?;

    let labels_path = dir.join(&manifest.labels);
    let mut labels = Vec::with_capacity(n);
    for (ln, line) in read(&labels_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let y: usize = line
            .parse()
            .map_err(|e: std::num::ParseIntError| parse_err(&labels_path, ln + 1, e.to_string()))?;
        if y >= manifest.num_classes {
            return Err(parse_err(
                &labels_path,
                ln + 1,
                format!("label {y} outside [0, {})", manifest.num_classes),
            ));
        }
        labels.push(y);
    }
    if labels.len() != n {
        return Err(Error::InvalidGraph(format!(
            "{}: {} labels, manifest says {n}",
            labels_path.display(),
            labels.len()
        )));
    }

    Graph::new(manifest.num_classes, edges, features, labels)
}

/// Writes the canonical directory: edges sorted with `src < dst`, features in
/// shortest round-trip decimal form.
pub fn save_graph(g: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = GraphManifest::canonical(g);

    let write_file = |name: &str, body: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    };

    write_file(&manifest.edges, &|w| {
        for (a, b) in g.edges() {
            writeln!(w, "{a},{b}")?;
        }
        Ok(())
    })?;
    write_file(&manifest.features, &|w| {
        for row in g.features().row_iter() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    write_file(&manifest.labels, &|w| {
        for y in g.labels() {
            writeln!(w, "{y}")?;
        }
        Ok(())
    })?;
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}
