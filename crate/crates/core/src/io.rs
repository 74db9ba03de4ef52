//! Dataset directories, inline synthetic datasets, and atomic file output.
//!
//! A dataset directory holds `edges.tsv` (`i j [w]` per line), and
//! optionally `features.csv` (one row per node), `labels.txt` (one integer
//! per line) and `splits.json` (`{"train": [..], "val": [..], "test": [..]}`).
//! Blank lines and lines starting with `#` are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::eval::Split;
use crate::graph::{sbm_generate, Graph, SbmParams};

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    /// Public split shipped with the dataset, if any.
    pub split: Option<Split>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for (no, line) in content_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(path, no, format!("expected `i j [w]`, got `{line}`")));
        }
        let id = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, no, format!("bad node id `{s}`")))
        };
        let w = match fields.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| parse_err(path, no, format!("bad weight `{s}`")))?,
            None => 1.0,
        };
        out.push((id(fields[0])?, id(fields[1])?, w));
    }
    Ok(out)
}

pub fn parse_matrix_csv(path: &Path, text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, line) in content_lines(text) {
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, no, format!("bad number `{}`", s.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    no,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn parse_labels(path: &Path, text: &str) -> Result<Vec<usize>> {
    content_lines(text)
        .map(|(no, l)| {
            l.parse::<usize>()
                .map_err(|_| parse_err(path, no, format!("bad label `{l}`")))
        })
        .collect()
}

/// Loads a dataset directory. The node count comes from the features, then
/// the labels, then the largest edge endpoint. Missing features default to
/// the identity.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let edges_path = dir.join(EDGES_FILE);
    if !edges_path.is_file() {
        return Err(Error::Config(format!(
            "dataset `{}` has no {EDGES_FILE}",
            dir.display()
        )));
    }
    let edges = parse_edges(&edges_path, &read_text(&edges_path)?)?;

    let fpath = dir.join(FEATURES_FILE);
    let features = if fpath.is_file() {
        Some(parse_matrix_csv(&fpath, &read_text(&fpath)?)?)
    } else {
        None
    };
    let lpath = dir.join(LABELS_FILE);
    let labels = if lpath.is_file() {
        Some(parse_labels(&lpath, &read_text(&lpath)?)?)
    } else {
        None
    };
    let n = match (&features, &labels) {
        (Some(x), _) => x.nrows(),
        (None, Some(y)) => y.len(),
        (None, None) => edges.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0),
    };
    let features = features.unwrap_or_else(|| DMatrix::identity(n, n));
    let graph = Graph::new(n, edges, features, labels)?;

    let spath = dir.join(SPLITS_FILE);
    let split = if spath.is_file() {
        let s: Split = serde_json::from_str(&read_text(&spath)?)?;
        s.validate(n)?;
        Some(s)
    } else {
        None
    };
    Ok(Dataset { graph, split })
}

/// Parses `sbm:n=400,C=2,p_in=0.1,p_out=0.01[,d=16][,seed=0]`.
pub fn parse_sbm_spec(spec: &str) -> Result<SbmParams> {
    let body = spec
        .strip_prefix("sbm:")
        .ok_or_else(|| Error::Config(format!("`{spec}` is not an sbm spec")))?;
    let mut p = SbmParams {
        n: 0,
        classes: 2,
        p_in: f64::NAN,
        p_out: f64::NAN,
        feature_dim: 16,
        seed: 0,
    };
    let bad = |k: &str, v: &str| Error::Config(format!("sbm spec: bad value `{v}` for `{k}`"));
    for part in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sbm spec: `{part}` is not key=value")))?;
        match k.trim() {
            "n" => p.n = v.parse().map_err(|_| bad(k, v))?,
            "C" | "c" | "classes" => p.classes = v.parse().map_err(|_| bad(k, v))?,
            "p_in" => p.p_in = v.parse().map_err(|_| bad(k, v))?,
            "p_out" => p.p_out = v.parse().map_err(|_| bad(k, v))?,
            "d" | "dim" => p.feature_dim = v.parse().map_err(|_| bad(k, v))?,
            "seed" => p.seed = v.parse().map_err(|_| bad(k, v))?,
            other => return Err(Error::Config(format!("sbm spec: unknown key `{other}`"))),
        }
    }
    if p.n == 0 || p.p_in.is_nan() || p.p_out.is_nan() {
        return Err(Error::Config(format!("sbm spec `{spec}` needs n, p_in and p_out")));
    }
    p.feature_dim = p.feature_dim.max(p.classes);
    Ok(p)
}

/// Inline `sbm:` spec or dataset directory.
pub fn resolve_dataset(spec: &str) -> Result<Dataset> {
    if spec.starts_with("sbm:") {
        let p = parse_sbm_spec(spec)?;
        let graph = sbm_generate(&p).map_err(|e| Error::Config(e.to_string()))?;
        return Ok(Dataset { graph, split: None });
    }
    let dir = PathBuf::from(spec);
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset path `{spec}` does not exist")));
    }
    load_dataset(&dir)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("`{}` is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn format_edges(g: &Graph) -> String {
    let mut s = String::new();
    for e in g.edges() {
        s.push_str(&format!("{}\t{}\t{}\n", e.u, e.v, e.weight));
    }
    s
}

pub fn format_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Writes `topology`'s weighted edges, `features` and labels (if any) as a
/// dataset directory.
pub fn write_dataset(
    dir: &Path,
    topology: &Graph,
    features: &DMatrix<f64>,
    split: Option<&Split>,
) -> Result<()> {
    create_dir(dir)?;
    write_atomic(&dir.join(EDGES_FILE), format_edges(topology).as_bytes())?;
    write_atomic(&dir.join(FEATURES_FILE), format_matrix_csv(features).as_bytes())?;
    if let Some(y) = topology.labels() {
        let text: String = y.iter().map(|l| format!("{l}\n")).collect();
        write_atomic(&dir.join(LABELS_FILE), text.as_bytes())?;
    }
    if let Some(s) = split {
        write_atomic(&dir.join(SPLITS_FILE), &serde_json::to_vec_pretty(s)?)?;
    }
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    if !path.is_file() {
        return Err(Error::Config(format!("file `{}` does not exist", path.display())));
    }
    parse_matrix_csv(path, &read_text(path)?)
}
