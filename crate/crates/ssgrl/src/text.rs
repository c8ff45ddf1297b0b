//! Line-oriented text formats: embedding tables, co-occurrence graphs,
//! category lists and annotation files.

use std::collections::HashMap;
use std::path::Path;

use ssgrl_core::cooccurrence::{AnnotationSet, CooccurrenceGraph};
use ssgrl_core::decoupling::EmbeddingTable;
use ssgrl_core::Tensor;

use crate::error::{display_name, read_to_string, write_file, Error, Result};

/// Seventeen significant digits, enough for an exact `f64` round trip.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(tok: &str, file: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            file: file.into(),
            line,
            msg: format!("`{tok}` is not a finite number"),
        })
}

/// Non-blank lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses `word v1 … vd` lines and picks out `categories` in order.
pub fn parse_embeddings(text: &str, file: &str, categories: &[String]) -> Result<EmbeddingTable> {
    let mut dim = None;
    let mut table: HashMap<&str, Vec<f64>> = HashMap::new();
    for (n, line) in lines(text) {
        let mut toks = line.split_whitespace();
        let word = toks.next().expect("non-blank line");
        let values = toks
            .map(|t| parse_real(t, file, n))
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(Error::Parse {
                    file: file.into(),
                    line: n,
                    msg: format!("`{word}` has no components"),
                })
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Format {
                    file: file.into(),
                    msg: format!(
                        "line {n}: `{word}` has {} components, expected {d}",
                        values.len()
                    ),
                })
            }
            Some(_) => {}
        }
        table.entry(word).or_insert(values);
    }
    let dim = dim.ok_or_else(|| Error::Format {
        file: file.into(),
        msg: "no embeddings".into(),
    })?;
    let mut data = Vec::with_capacity(categories.len() * dim);
    for name in categories {
        let v = table
            .get(name.as_str())
            .ok_or_else(|| Error::Lookup(format!("{file}: no embedding for category `{name}`")))?;
        data.extend_from_slice(v);
    }
    let vectors = Tensor::new(vec![categories.len(), dim], data)?;
    Ok(EmbeddingTable::new(categories.to_vec(), vectors)?)
}

pub fn render_embeddings(table: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (c, name) in table.names().iter().enumerate() {
        out.push_str(name);
        for &v in table.vector(c) {
            out.push(' ');
            out.push_str(&fmt_real(v));
        }
        out.push('\n');
    }
    out
}

pub fn read_embeddings(path: &Path, categories: &[String]) -> Result<EmbeddingTable> {
    parse_embeddings(&read_to_string(path)?, &display_name(path), categories)
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    write_file(path, render_embeddings(table))
}

/// Graph file: `cooccurrence v1 C=<int>`, a comma-separated name line, then
/// `C` rows of `C` reals.
pub fn render_graph(graph: &CooccurrenceGraph) -> String {
    let c = graph.num_categories();
    let mut out = format!("cooccurrence v1 C={c}\n{}\n", graph.names().join(","));
    for i in 0..c {
        let row: Vec<String> = (0..c).map(|j| fmt_real(graph.get(i, j))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_graph(text: &str, file: &str) -> Result<CooccurrenceGraph> {
    let format_err = |msg: String| Error::Format {
        file: file.into(),
        msg,
    };
    let mut it = text.lines().map(|l| l.trim_end_matches('\r')).enumerate();
    let header = it.next().map(|(_, l)| l).unwrap_or("");
    let c = header
        .strip_prefix("cooccurrence v1 C=")
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|&c| c > 0)
        .ok_or_else(|| Error::Parse {
            file: file.into(),
            line: 1,
            msg: format!("expected `cooccurrence v1 C=<int>`, found `{header}`"),
        })?;
    let names: Vec<String> = match it.next() {
        Some((_, l)) => l.split(',').map(|s| s.trim().to_string()).collect(),
        None => return Err(format_err("missing category line".into())),
    };
    if names.len() != c {
        return Err(format_err(format!(
            "header says C={c} but {} names are listed",
            names.len()
        )));
    }
    let mut data = Vec::with_capacity(c * c);
    let mut rows = 0;
    for (i, line) in it {
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| parse_real(t, file, i + 1))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != c {
            return Err(format_err(format!(
                "line {}: {} values, header says C={c}",
                i + 1,
                values.len()
            )));
        }
        rows += 1;
        if rows > c {
            return Err(format_err(format!("more than C={c} matrix rows")));
        }
        data.extend(values);
    }
    if rows != c {
        return Err(format_err(format!("{rows} matrix rows, header says C={c}")));
    }
    let adjacency = Tensor::new(vec![c, c], data)?;
    CooccurrenceGraph::from_parts(names, adjacency).map_err(|e| format_err(e.to_string()))
}

pub fn read_graph(path: &Path) -> Result<CooccurrenceGraph> {
    parse_graph(&read_to_string(path)?, &display_name(path))
}

pub fn write_graph(path: &Path, graph: &CooccurrenceGraph) -> Result<()> {
    write_file(path, render_graph(graph))
}

/// One category name per line.
pub fn parse_categories(text: &str, file: &str) -> Result<Vec<String>> {
    let mut names: Vec<String> = Vec::new();
    for (n, line) in lines(text) {
        let name = line.trim();
        if name.contains(',') || name.contains(char::is_whitespace) {
            return Err(Error::Parse {
                file: file.into(),
                line: n,
                msg: format!("category `{name}` contains a comma or whitespace"),
            });
        }
        if names.iter().any(|x| x == name) {
            return Err(Error::Parse {
                file: file.into(),
                line: n,
                msg: format!("duplicate category `{name}`"),
            });
        }
        names.push(name.to_string());
    }
    if names.is_empty() {
        return Err(Error::Format {
            file: file.into(),
            msg: "no categories".into(),
        });
    }
    Ok(names)
}

pub fn render_categories(names: &[String]) -> String {
    names.iter().map(|n| format!("{n}\n")).collect()
}

pub fn read_categories(path: &Path) -> Result<Vec<String>> {
    parse_categories(&read_to_string(path)?, &display_name(path))
}

/// `sample-id<TAB>name,name,…` lines. With `categories` unset, names are
/// indexed in order of first appearance.
pub fn parse_annotations(
    text: &str,
    file: &str,
    categories: Option<&[String]>,
) -> Result<AnnotationSet> {
    let mut names: Vec<String> = categories.map(<[String]>::to_vec).unwrap_or_default();
    let fixed = categories.is_some();
    let mut rows: Vec<(String, Vec<usize>)> = Vec::new();
    for (n, line) in lines(text) {
        let parse_err = |msg: String| Error::Parse {
            file: file.into(),
            line: n,
            msg,
        };
        let (id, labels) = line.split_once('\t').unwrap_or((line, ""));
        let id = id.trim();
        if id.is_empty() {
            return Err(parse_err("empty sample id".into()));
        }
        if rows.iter().any(|(x, _)| x == id) {
            return Err(parse_err(format!("duplicate sample id `{id}`")));
        }
        let mut idx = Vec::new();
        for name in labels.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match names.iter().position(|x| x == name) {
                Some(i) => idx.push(i),
                None if fixed => {
                    return Err(Error::Lookup(format!(
                        "{file}:{n}: unknown category `{name}`"
                    )))
                }
                None => {
                    names.push(name.to_string());
                    idx.push(names.len() - 1);
                }
            }
        }
        rows.push((id.to_string(), idx));
    }
    if names.is_empty() {
        return Err(Error::Format {
            file: file.into(),
            msg: "no categories".into(),
        });
    }
    let mut set = AnnotationSet::new(names);
    for (id, labels) in rows {
        set.push(&id, &labels)?;
    }
    Ok(set)
}

pub fn render_annotations(set: &AnnotationSet) -> String {
    let mut out = String::new();
    for s in set.samples() {
        let names: Vec<&str> = s
            .labels
            .iter()
            .map(|&l| set.categories()[l].as_str())
            .collect();
        out.push_str(&format!("{}\t{}\n", s.id, names.join(",")));
    }
    out
}

pub fn read_annotations(path: &Path, categories: Option<&[String]>) -> Result<AnnotationSet> {
    parse_annotations(&read_to_string(path)?, &display_name(path), categories)
}
