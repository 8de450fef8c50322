//! Text formats for structures and datasets.
//!
//! Structure file:
//!
//! ```text
//! spn v1
//! vars 2
//! scale 1000
//! root S
//! leaf X1 var=0 pos
//! leaf NX1 var=0 neg
//! sum S1 scope=0 X1:300 NX1:700
//! product P1 scope=0,1 S1 S3
//! ```
//!
//! Node lines may appear in any order and refer to children by name. The
//! `scope=` field is optional on input; when present it must match the
//! scope implied by the children. `#` starts a comment.
//!
//! Dataset file: an optional `spn-data v1` header, then one row per line of
//! comma-separated `0`/`1` values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{NodeKind, Polarity, SpnGraph, SpnNode, StructureError};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        message: message.into(),
    }
}

fn strip(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, ParseError> {
    s.parse()
        .map_err(|_| syntax(line, format!("invalid {what} {s:?}")))
}

fn parse_scope(s: &str, line: usize) -> Result<BTreeSet<usize>, ParseError> {
    if s.is_empty() {
        return Ok(BTreeSet::new());
    }
    s.split(',')
        .map(|v| parse_num(v, line, "scope variable"))
        .collect()
}

enum RawKind {
    Leaf(usize, Polarity),
    Sum(Vec<(String, u128)>),
    Product(Vec<String>),
}

struct RawNode {
    line: usize,
    name: String,
    kind: RawKind,
    scope: Option<BTreeSet<usize>>,
}

pub fn parse_structure(text: &str) -> Result<SpnGraph, ParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip(l)))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, "spn v1")) => {}
        Some((n, other)) => {
            return Err(syntax(
                n,
                format!("expected header \"spn v1\", found {other:?}"),
            ))
        }
        None => return Err(syntax(1, "empty structure file")),
    }
    let mut vars = None;
    let mut scale = None;
    let mut root = None;
    let mut raw: Vec<RawNode> = Vec::new();
    for (n, line) in lines {
        let mut words = line.split_whitespace();
        let keyword = words.next().expect("non-empty line");
        let rest: Vec<&str> = words.collect();
        let one = |what: &str| -> Result<&str, ParseError> {
            match rest.as_slice() {
                [v] => Ok(v),
                _ => Err(syntax(n, format!("{what} takes one value"))),
            }
        };
        match keyword {
            "vars" => vars = Some(parse_num::<usize>(one("vars")?, n, "variable count")?),
            "scale" => scale = Some(parse_num::<u128>(one("scale")?, n, "scale")?),
            "root" => root = Some((n, one("root")?.to_string())),
            "leaf" | "sum" | "product" => {
                let Some((&name, fields)) = rest.split_first() else {
                    return Err(syntax(n, "missing node name"));
                };
                let mut scope = None;
                let mut var = None;
                let mut polarity = None;
                let mut items = Vec::new();
                for f in fields {
                    if let Some(s) = f.strip_prefix("scope=") {
                        scope = Some(parse_scope(s, n)?);
                    } else if let Some(v) = f.strip_prefix("var=") {
                        var = Some(parse_num::<usize>(v, n, "variable")?);
                    } else if keyword == "leaf" && (*f == "pos" || *f == "neg") {
                        polarity = Some(if *f == "pos" {
                            Polarity::Positive
                        } else {
                            Polarity::Negated
                        });
                    } else {
                        items.push(*f);
                    }
                }
                let kind = match keyword {
                    "leaf" => {
                        if !items.is_empty() {
                            return Err(syntax(n, format!("unexpected field {:?}", items[0])));
                        }
                        let var = var.ok_or_else(|| syntax(n, "leaf needs var="))?;
                        let pol = polarity.ok_or_else(|| syntax(n, "leaf needs pos or neg"))?;
                        RawKind::Leaf(var, pol)
                    }
                    "sum" => RawKind::Sum(
                        items
                            .iter()
                            .map(|item| {
                                let (c, w) = item.split_once(':').ok_or_else(|| {
                                    syntax(n, format!("sum child {item:?} needs a weight"))
                                })?;
                                Ok((c.to_string(), parse_num(w, n, "weight")?))
                            })
                            .collect::<Result<_, ParseError>>()?,
                    ),
                    _ => RawKind::Product(items.iter().map(|s| s.to_string()).collect()),
                };
                if keyword != "leaf" && var.is_some() {
                    return Err(syntax(n, "only leaves take var="));
                }
                raw.push(RawNode {
                    line: n,
                    name: name.to_string(),
                    kind,
                    scope,
                });
            }
            other => return Err(syntax(n, format!("unknown node kind or keyword {other:?}"))),
        }
    }
    let vars = vars.ok_or_else(|| syntax(1, "missing vars line"))?;
    let scale = scale.ok_or_else(|| syntax(1, "missing scale line"))?;
    let (root_line, root) = root.ok_or_else(|| syntax(1, "missing root line"))?;

    let mut index = BTreeMap::new();
    for (i, node) in raw.iter().enumerate() {
        if index.insert(node.name.clone(), i).is_some() {
            return Err(syntax(
                node.line,
                format!("duplicate node name {:?}", node.name),
            ));
        }
    }
    let lookup = |name: &str, line: usize| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| syntax(line, format!("unknown node {name:?}")))
    };
    let root = lookup(&root, root_line)?;
    let mut nodes = Vec::with_capacity(raw.len());
    for node in &raw {
        let kind = match &node.kind {
            RawKind::Leaf(var, polarity) => NodeKind::Leaf {
                var: *var,
                polarity: *polarity,
            },
            RawKind::Sum(ch) => NodeKind::Sum {
                children: ch
                    .iter()
                    .map(|(c, w)| Ok((lookup(c, node.line)?, *w)))
                    .collect::<Result<_, ParseError>>()?,
            },
            RawKind::Product(ch) => NodeKind::Product {
                children: ch
                    .iter()
                    .map(|c| lookup(c, node.line))
                    .collect::<Result<_, ParseError>>()?,
            },
        };
        nodes.push(SpnNode {
            name: node.name.clone(),
            kind,
        });
    }
    let spn = SpnGraph::new(nodes, root, vars, scale)?;
    for (i, node) in raw.iter().enumerate() {
        if let Some(scope) = &node.scope {
            if scope != spn.scope(i) {
                return Err(syntax(
                    node.line,
                    format!(
                        "declared scope {:?} of {} differs from {:?}",
                        scope,
                        node.name,
                        spn.scope(i)
                    ),
                ));
            }
        }
    }
    Ok(spn)
}

fn scope_text(scope: &BTreeSet<usize>) -> String {
    scope
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_structure(spn: &SpnGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "spn v1");
    let _ = writeln!(out, "vars {}", spn.num_vars());
    let _ = writeln!(out, "scale {}", spn.scale());
    let _ = writeln!(out, "root {}", spn.node(spn.root()).name);
    for (i, node) in spn.nodes().iter().enumerate() {
        let scope = scope_text(spn.scope(i));
        match &node.kind {
            NodeKind::Leaf { var, polarity } => {
                let pol = match polarity {
                    Polarity::Positive => "pos",
                    Polarity::Negated => "neg",
                };
                let _ = writeln!(out, "leaf {} var={var} {pol}", node.name);
            }
            NodeKind::Sum { children } => {
                let _ = write!(out, "sum {} scope={scope}", node.name);
                for (c, w) in children {
                    let _ = write!(out, " {}:{w}", spn.node(*c).name);
                }
                out.push('\n');
            }
            NodeKind::Product { children } => {
                let _ = write!(out, "product {} scope={scope}", node.name);
                for c in children {
                    let _ = write!(out, " {}", spn.node(*c).name);
                }
                out.push('\n');
            }
        }
    }
    out
}

fn read(path: &Path) -> Result<String, ParseError> {
    std::fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), ParseError> {
    std::fs::write(path, text).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_structure(path: impl AsRef<Path>) -> Result<SpnGraph, ParseError> {
    parse_structure(&read(path.as_ref())?)
}

pub fn save_structure(spn: &SpnGraph, path: impl AsRef<Path>) -> Result<(), ParseError> {
    write(path.as_ref(), &write_structure(spn))
}

/// Parses rows of 0/1 values; `vars` fixes the expected width when known.
pub fn parse_dataset(text: &str, vars: Option<usize>) -> Result<Vec<Vec<bool>>, ParseError> {
    let mut rows = Vec::new();
    let mut width = vars;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = strip(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(version) = line.strip_prefix("spn-data") {
            if !rows.is_empty() || version.trim() != "v1" {
                return Err(syntax(n, format!("unexpected header {line:?}")));
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|v| match v.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(syntax(n, format!("value {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        match width {
            Some(w) if w != row.len() => {
                return Err(syntax(
                    n,
                    format!("row has {} values, expected {w}", row.len()),
                ))
            }
            Some(_) => {}
            None => width = Some(row.len()),
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_dataset(rows: &[Vec<bool>]) -> String {
    let mut out = String::from("spn-data v1\n");
    for row in rows {
        let cells: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    vars: Option<usize>,
) -> Result<Vec<Vec<bool>>, ParseError> {
    parse_dataset(&read(path.as_ref())?, vars)
}

pub fn save_dataset(rows: &[Vec<bool>], path: impl AsRef<Path>) -> Result<(), ParseError> {
    write(path.as_ref(), &write_dataset(rows))
}
