//! Dataset directory ingestion and export.
//!
//! Layout (all UTF-8, `#` starts a comment line):
//!
//! - `schema.txt` — `nodetype <name> <count>` lines, then
//!   `relation <name> <srctype> <dsttype>` lines;
//! - `<relation>.edges` — one `src_local dst_local` pair per line;
//! - `<type>.features` — one whitespace-separated float row per node;
//! - `labels.txt` — first line `target <typename>`, then
//!   `local_id class_index` lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::DenseMatrix;

use super::{GraphSpec, HetGraph};

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Numbered, trimmed, non-comment lines of a file.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Graph(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

/// Loads a dataset directory into a validated graph.
pub fn load_graph(dir: &Path) -> Result<HetGraph> {
    let schema_path = dir.join("schema.txt");
    if !schema_path.exists() {
        return Err(Error::Graph(format!("missing schema file {}", schema_path.display())));
    }

    let mut spec = GraphSpec::default();
    let mut declared: Vec<(String, String, String)> = Vec::new();
    for (lineno, line) in read_lines(&schema_path)? {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["nodetype", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| parse_err(&schema_path, lineno, format!("bad node count '{count}'")))?;
                spec.types.push((name.to_string(), count));
            }
            ["relation", name, src, dst] => {
                declared.push((name.to_string(), src.to_string(), dst.to_string()));
            }
            _ => {
                return Err(parse_err(
                    &schema_path,
                    lineno,
                    format!("expected 'nodetype <name> <count>' or 'relation <name> <src> <dst>', got '{line}'"),
                ))
            }
        }
    }

    for (name, src, dst) in declared {
        let path = dir.join(format!("{name}.edges"));
        if !path.exists() {
            return Err(Error::Graph(format!("missing edge file {}", path.display())));
        }
        let mut edges = Vec::new();
        for (lineno, line) in read_lines(&path)? {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 2 {
                return Err(parse_err(&path, lineno, format!("expected 'src dst', got '{line}'")));
            }
            let s: usize = tok[0]
                .parse()
                .map_err(|_| parse_err(&path, lineno, format!("bad node id '{}'", tok[0])))?;
            let d: usize = tok[1]
                .parse()
                .map_err(|_| parse_err(&path, lineno, format!("bad node id '{}'", tok[1])))?;
            edges.push((s, d));
        }
        spec.relations.push((name, src, dst, edges));
    }

    for (ty, _) in &spec.types {
        let path = dir.join(format!("{ty}.features"));
        if !path.exists() {
            continue;
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width: Option<usize> = None;
        for (lineno, line) in read_lines(&path)? {
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|_| parse_err(&path, lineno, "bad float in feature row"))?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(parse_err(
                        &path,
                        lineno,
                        format!("non-rectangular feature rows: expected width {w}, got {}", row.len()),
                    ))
                }
                _ => {}
            }
            rows.push(row);
        }
        spec.features.insert(ty.clone(), DenseMatrix::from_rows(&rows)?);
    }

    let labels_path = dir.join("labels.txt");
    if !labels_path.exists() {
        return Err(Error::Graph(format!("missing label file {}", labels_path.display())));
    }
    let lines = read_lines(&labels_path)?;
    let mut it = lines.into_iter();
    match it.next() {
        Some((_, first)) if first.starts_with("target ") => {
            spec.target = first["target ".len()..].trim().to_string();
        }
        Some((lineno, other)) => {
            return Err(parse_err(&labels_path, lineno, format!("expected 'target <typename>', got '{other}'")))
        }
        None => return Err(parse_err(&labels_path, 1, "empty label file")),
    }
    for (lineno, line) in it {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 2 {
            return Err(parse_err(&labels_path, lineno, format!("expected 'local_id class', got '{line}'")));
        }
        let id: usize = tok[0]
            .parse()
            .map_err(|_| parse_err(&labels_path, lineno, format!("bad node id '{}'", tok[0])))?;
        let class: usize = tok[1]
            .parse()
            .map_err(|_| parse_err(&labels_path, lineno, format!("bad class '{}'", tok[1])))?;
        spec.labels.push((id, class));
    }

    HetGraph::build(spec)
}

/// Writes a graph back out in the dataset format. Auto-added reverse
/// relations are skipped; the loader reconstructs them.
pub fn save_graph(dir: &Path, graph: &HetGraph) -> Result<()> {
    fs::create_dir_all(dir)?;
    let types = graph.types();

    let mut schema = String::from("# node types\n");
    for ty in 0..types.len() {
        schema.push_str(&format!("nodetype {} {}\n", types.name(ty), types.count(ty)));
    }
    schema.push_str("# relations\n");
    for rel in graph.relations() {
        if rel.reverse_of.is_some() {
            continue;
        }
        schema.push_str(&format!(
            "relation {} {} {}\n",
            rel.spec.name,
            types.name(rel.spec.src),
            types.name(rel.spec.dst)
        ));
    }
    fs::write(dir.join("schema.txt"), schema)?;

    for rel in graph.relations() {
        if rel.reverse_of.is_some() {
            continue;
        }
        let src_off = types.offset(rel.spec.src);
        let dst_off = types.offset(rel.spec.dst);
        let mut out = fs::File::create(dir.join(format!("{}.edges", rel.spec.name)))?;
        for ((r, c), _) in rel.matrix.iter() {
            writeln!(out, "{} {}", r - src_off, c - dst_off)?;
        }
    }

    for ty in 0..types.len() {
        if let Some(feats) = graph.features(ty) {
            let mut out = fs::File::create(dir.join(format!("{}.features", types.name(ty))))?;
            for r in 0..feats.rows() {
                let row: Vec<String> = feats.row(r).iter().map(|v| format!("{v}")).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
        }
    }

    let mut out = fs::File::create(dir.join("labels.txt"))?;
    writeln!(out, "target {}", types.name(graph.target_type()))?;
    for (local, class) in graph.labels() {
        writeln!(out, "{local} {class}")?;
    }
    Ok(())
}
