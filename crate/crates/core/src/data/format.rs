//! Directory format, one domain per directory:
//!
//! ```text
//! meta.json      {"name": .., "n_nodes": .., "feature_dim": .., "class_count": ..}
//! edges.tsv      u <TAB> v            (u < v, sorted)
//! features.tsv   row <TAB> col <TAB> value   (sorted by row, col)
//! labels.tsv     node <TAB> class     (every node exactly once)
//! ```
//!
//! Floats are written with 17 significant digits so that a reload is
//! bitwise exact.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::graph::Graph;
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    name: String,
    n_nodes: usize,
    feature_dim: usize,
    class_count: usize,
}

fn read(dir: &Path, file: &str) -> Result<String> {
    let path = dir.join(file);
    fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.display().to_string()),
        _ => Error::Io(e),
    })
}

/// Yields `(line_number, fields)` for non-empty lines.
fn rows<'a>(
    text: &'a str,
    file: &'a str,
    width: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>)>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(move |(i, line)| {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != width {
                return Err(parse_error(
                    file,
                    i + 1,
                    format!("expected {width} tab-separated fields, found {}", fields.len()),
                ));
            }
            Ok((i + 1, fields))
        })
}

fn parse_error(file: &str, line: usize, message: String) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message,
    }
}

fn field<T: FromStr>(file: &str, line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_error(file, line, format!("cannot parse {s:?}")))
}

fn index(file: &str, line: usize, s: &str, bound: usize, what: &str) -> Result<usize> {
    let v: usize = field(file, line, s)?;
    if v >= bound {
        return Err(parse_error(file, line, format!("{what} {v} out of range (< {bound})")));
    }
    Ok(v)
}

pub fn load_domain(dir: &Path) -> Result<DomainDataset> {
    let meta: Meta = serde_json::from_str(&read(dir, "meta.json")?)?;
    let n = meta.n_nodes;

    const EDGES: &str = "edges.tsv";
    let text = read(dir, EDGES)?;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for row in rows(&text, EDGES, 2) {
        let (line, f) = row?;
        let u = index(EDGES, line, f[0], n, "node")?;
        let v = index(EDGES, line, f[1], n, "node")?;
        if u >= v {
            return Err(parse_error(EDGES, line, format!("edge ({u}, {v}) must satisfy u < v")));
        }
        if !seen.insert((u, v)) {
            return Err(parse_error(EDGES, line, format!("duplicate edge ({u}, {v})")));
        }
        edges.push((u, v));
    }

    const FEATURES: &str = "features.tsv";
    let text = read(dir, FEATURES)?;
    let mut features = Vec::new();
    let mut seen = HashSet::new();
    for row in rows(&text, FEATURES, 3) {
        let (line, f) = row?;
        let r = index(FEATURES, line, f[0], n, "row")?;
        let c = index(FEATURES, line, f[1], meta.feature_dim, "column")?;
        let v: f64 = field(FEATURES, line, f[2])?;
        if !v.is_finite() {
            return Err(parse_error(FEATURES, line, format!("non-finite value {v}")));
        }
        if !seen.insert((r, c)) {
            return Err(parse_error(FEATURES, line, format!("duplicate entry ({r}, {c})")));
        }
        features.push((r, c, v));
    }

    const LABELS: &str = "labels.tsv";
    let text = read(dir, LABELS)?;
    let mut labels = vec![None; n];
    for row in rows(&text, LABELS, 2) {
        let (line, f) = row?;
        let node = index(LABELS, line, f[0], n, "node")?;
        let class = index(LABELS, line, f[1], meta.class_count, "class")?;
        if labels[node].replace(class).is_some() {
            return Err(parse_error(LABELS, line, format!("node {node} labelled twice")));
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(v, l)| l.ok_or_else(|| Error::InvalidData(format!("{LABELS}: node {v} has no label"))))
        .collect::<Result<Vec<_>>>()?;

    DomainDataset::new(
        meta.name,
        Graph::new(n, edges)?,
        features,
        labels,
        meta.feature_dim,
        meta.class_count,
    )
}

pub fn save_domain(ds: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        name: ds.name.clone(),
        n_nodes: ds.n_nodes(),
        feature_dim: ds.feature_dim,
        class_count: ds.class_count,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;

    let mut out = String::new();
    for &(u, v) in ds.graph.edges() {
        writeln!(out, "{u}\t{v}").expect("write to string");
    }
    fs::write(dir.join("edges.tsv"), &out)?;

    out.clear();
    let mut feats = ds.features.clone();
    feats.sort_by_key(|&(r, c, _)| (r, c));
    for (r, c, v) in feats {
        writeln!(out, "{r}\t{c}\t{v:.16e}").expect("write to string");
    }
    fs::write(dir.join("features.tsv"), &out)?;

    out.clear();
    for (v, c) in ds.labels.iter().enumerate() {
        writeln!(out, "{v}\t{c}").expect("write to string");
    }
    fs::write(dir.join("labels.tsv"), &out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_shifted_pair, ShiftConfig};
    use proptest::prelude::*;
    use sha2::{Digest, Sha256};

    fn write_fixture(dir: &Path, edges: &str) {
        fs::write(
            dir.join("meta.json"),
            r#"{"name": "tiny", "n_nodes": 3, "feature_dim": 2, "class_count": 2}"#,
        )
        .unwrap();
        fs::write(dir.join("edges.tsv"), edges).unwrap();
        fs::write(dir.join("features.tsv"), "0\t0\t1.5\n1\t1\t-2\n2\t0\t0.25\n").unwrap();
        fs::write(dir.join("labels.tsv"), "0\t0\n1\t1\n2\t1\n").unwrap();
    }

    #[test]
    fn minimal_fixture_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "0\t1\n1\t2\n");
        let ds = load_domain(dir.path()).unwrap();
        assert_eq!(ds.name, "tiny");
        assert_eq!(ds.graph.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(ds.features, vec![(0, 0, 1.5), (1, 1, -2.0), (2, 0, 0.25)]);
        assert_eq!(ds.labels, vec![0, 1, 1]);
    }

    #[test]
    fn out_of_range_edge_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "0\t1\n1\t3\n");
        match load_domain(dir.path()) {
            Err(Error::Parse { file, line, .. }) => assert_eq!((file.as_str(), line), ("edges.tsv", 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_gaps_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "0\t1\n0\t1\n");
        assert!(matches!(load_domain(dir.path()), Err(Error::Parse { line: 2, .. })));
        write_fixture(dir.path(), "0\t1\n");
        fs::write(dir.path().join("labels.tsv"), "0\t0\n2\t1\n").unwrap();
        assert!(matches!(load_domain(dir.path()), Err(Error::InvalidData(_))));
        fs::remove_file(dir.path().join("labels.tsv")).unwrap();
        assert!(matches!(load_domain(dir.path()), Err(Error::MissingFile(_))));
    }

    fn dir_hash(dir: &Path) -> String {
        let mut h = Sha256::new();
        for f in ["meta.json", "edges.tsv", "features.tsv", "labels.tsv"] {
            h.update(f.as_bytes());
            h.update(fs::read(dir.join(f)).unwrap());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    #[test]
    fn saved_fixture_hash_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "1\t2\n0\t1\n");
        let ds = load_domain(dir.path()).unwrap();
        let out = dir.path().join("out");
        save_domain(&ds, &out).unwrap();
        assert_eq!(
            fs::read_to_string(out.join("features.tsv")).unwrap(),
            "0\t0\t1.5000000000000000e0\n1\t1\t-2.0000000000000000e0\n2\t0\t2.5000000000000000e-1\n"
        );
        assert_eq!(fs::read_to_string(out.join("edges.tsv")).unwrap(), "0\t1\n1\t2\n");
        let first = dir_hash(&out);
        save_domain(&load_domain(&out).unwrap(), &out).unwrap();
        assert_eq!(dir_hash(&out), first);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn generated_domains_round_trip(seed in any::<u64>(), offset in 0.0f64..3.0) {
            let cfg = ShiftConfig { nodes: 40, feature_dim: 5, offset, seed, ..ShiftConfig::default() };
            let (s, t) = generate_shifted_pair(&cfg).unwrap();
            let dir = tempfile::tempdir().unwrap();
            for ds in [s, t] {
                let path = dir.path().join(&ds.name);
                save_domain(&ds, &path).unwrap();
                let back = load_domain(&path).unwrap();
                prop_assert_eq!(back.features.len(), ds.features.len());
                for (a, b) in back.features.iter().zip(&ds.features) {
                    prop_assert_eq!((a.0, a.1, a.2.to_bits()), (b.0, b.1, b.2.to_bits()));
                }
                prop_assert_eq!(back, ds);
            }
        }
    }
}
