//! Loading of crystal and perturbation spec files.
//!
//! # Crystal specs
//!
//! Either a builtin name (`z1`, `z2`, `z3`, `toblerone`) or a path to a text
//! file with the grammar (order of sections fixed, `#` starts a comment):
//!
//! ```text
//! dimension 2
//! vertices
//!   a 1.0            # name, vertex weight m0
//!   b 2.0
//! edges
//!   a b 0 0 1.0      # origin, terminus, eta (d integers), edge weight m0
//!   a a 1 0 1.0
//! potential
//!   a 0.5            # optional section; name, R0 value (default 0)
//! ```
//!
//! # Perturbation specs
//!
//! Line-oriented, `#` starts a comment:
//!
//! ```text
//! kernel hub -4.0 1.0        # kernel <hub|complete|toblerone> <alpha> <C>
//! radius 128                 # enumeration radius for the infinite star
//! remove 0 3                 # quotient edge index, then the lift's cell
//! measure vertex 0 2 4.0     # site, cell, new m(x)
//! measure edge 0 -2 0.25     # quotient edge index, cell, new m(e)
//! potential 0 1 -1.5         # site, cell, new R(x)
//! ```
//!
//! Kernel `table x_site x_cell.. y_site y_cell.. w` adds one explicit edge.

use std::fs;

use topocrystal::crystal::{lattice_zd, quotient_from_spec, toblerone, TopologicalCrystal};
use topocrystal::error::{Error, Result};
use topocrystal::graph::{Cell, EdgeKey, Vertex};
use topocrystal::perturbation::{Kernel, PerturbedGraph};

pub fn load_crystal(selector: &str) -> Result<TopologicalCrystal> {
    match selector {
        "z1" => Ok(lattice_zd(1)),
        "z2" => Ok(lattice_zd(2)),
        "z3" => Ok(lattice_zd(3)),
        "toblerone" => Ok(toblerone()),
        path => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::InvalidParameter(format!("cannot read crystal spec {path}: {e}"))
            })?;
            quotient_from_spec(&text)
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from {tok:?}")))
}

fn parse_cell(tokens: &[&str], d: usize, line: usize) -> Result<Cell> {
    if tokens.len() < d {
        return Err(parse_err(line, format!("expected {d} cell coordinates")));
    }
    tokens[..d]
        .iter()
        .map(|t| parse_num::<i64>(t, line, "cell coordinate"))
        .collect()
}

/// Parses a perturbation spec against a crystal. `None` path means the
/// trivial perturbation.
pub fn load_perturbation(
    crystal: TopologicalCrystal,
    path: Option<&str>,
) -> Result<PerturbedGraph> {
    let mut pg = PerturbedGraph::unperturbed(crystal);
    let path = match path {
        Some(p) => p,
        None => return Ok(pg),
    };
    let text = fs::read_to_string(path).map_err(|e| {
        Error::InvalidParameter(format!("cannot read perturbation spec {path}: {e}"))
    })?;
    let d = pg.crystal.dimension();
    let n_sites = pg.crystal.n_sites();
    let n_edges = pg.crystal.quotient().edges.len();
    let mut table_entries: Vec<(Vertex, Vertex, f64)> = Vec::new();

    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "kernel" => {
                if tokens.len() < 2 {
                    return Err(parse_err(line_no, "kernel needs a kind"));
                }
                match tokens[1] {
                    "none" => pg.added = None,
                    "hub" | "complete" | "toblerone" => {
                        if tokens.len() != 4 {
                            return Err(parse_err(line_no, "kernel <kind> <alpha> <C>"));
                        }
                        let alpha: f64 = parse_num(tokens[2], line_no, "alpha")?;
                        let c: f64 = parse_num(tokens[3], line_no, "C")?;
                        if alpha >= 0.0 {
                            return Err(parse_err(line_no, "kernel needs alpha < 0"));
                        }
                        if c <= 0.0 {
                            return Err(parse_err(line_no, "kernel needs C > 0"));
                        }
                        pg.added = Some(match tokens[1] {
                            "hub" => Kernel::Hub {
                                hub: Vertex::new(0, vec![0; d]),
                                alpha,
                                c,
                            },
                            "complete" => Kernel::Complete { alpha, c },
                            _ => {
                                if d != 1 || n_sites != 3 {
                                    return Err(parse_err(
                                        line_no,
                                        "toblerone kernel needs the 3-site d=1 crystal",
                                    ));
                                }
                                Kernel::Toblerone { alpha, c }
                            }
                        });
                    }
                    "table" => {
                        if tokens.len() != 2 * (1 + d) + 3 {
                            return Err(parse_err(
                                line_no,
                                "kernel table <x_site> <x_cell..> <y_site> <y_cell..> <w>",
                            ));
                        }
                        let xs: usize = parse_num(tokens[2], line_no, "site")?;
                        let xc = parse_cell(&tokens[3..3 + d], d, line_no)?;
                        let ys: usize = parse_num(tokens[3 + d], line_no, "site")?;
                        let yc = parse_cell(&tokens[4 + d..4 + 2 * d], d, line_no)?;
                        let w: f64 = parse_num(tokens[4 + 2 * d], line_no, "weight")?;
                        if xs >= n_sites || ys >= n_sites {
                            return Err(parse_err(line_no, "site out of range"));
                        }
                        if w <= 0.0 {
                            return Err(parse_err(line_no, "edge weight must be positive"));
                        }
                        table_entries.push((Vertex::new(xs, xc), Vertex::new(ys, yc), w));
                    }
                    other => {
                        return Err(parse_err(line_no, format!("unknown kernel {other:?}")))
                    }
                }
            }
            "radius" => {
                if tokens.len() != 2 {
                    return Err(parse_err(line_no, "radius <r>"));
                }
                let r: i64 = parse_num(tokens[1], line_no, "radius")?;
                if r < 1 {
                    return Err(parse_err(line_no, "radius must be >= 1"));
                }
                pg.enum_radius = r;
            }
            "remove" => {
                if tokens.len() != 2 + d {
                    return Err(parse_err(line_no, "remove <edge> <cell..>"));
                }
                let edge: usize = parse_num(tokens[1], line_no, "edge index")?;
                if edge >= n_edges {
                    return Err(parse_err(line_no, "edge index out of range"));
                }
                let cell = parse_cell(&tokens[2..], d, line_no)?;
                pg.removed.push(EdgeKey { quotient_edge: edge, cell });
            }
            "measure" => {
                if tokens.len() != 4 + d {
                    return Err(parse_err(
                        line_no,
                        "measure <vertex|edge> <index> <cell..> <value>",
                    ));
                }
                let value: f64 = parse_num(tokens[3 + d], line_no, "measure value")?;
                if value <= 0.0 {
                    return Err(parse_err(line_no, "measures must be positive"));
                }
                let cell = parse_cell(&tokens[3..3 + d], d, line_no)?;
                match tokens[1] {
                    "vertex" => {
                        let site: usize = parse_num(tokens[2], line_no, "site")?;
                        if site >= n_sites {
                            return Err(parse_err(line_no, "site out of range"));
                        }
                        pg.vertex_measure_overrides.insert(Vertex::new(site, cell), value);
                    }
                    "edge" => {
                        let edge: usize = parse_num(tokens[2], line_no, "edge index")?;
                        if edge >= n_edges {
                            return Err(parse_err(line_no, "edge index out of range"));
                        }
                        pg.edge_measure_overrides
                            .insert(EdgeKey { quotient_edge: edge, cell }, value);
                    }
                    other => {
                        return Err(parse_err(line_no, format!("unknown target {other:?}")))
                    }
                }
            }
            "potential" => {
                if tokens.len() != 3 + d {
                    return Err(parse_err(line_no, "potential <site> <cell..> <value>"));
                }
                let site: usize = parse_num(tokens[1], line_no, "site")?;
                if site >= n_sites {
                    return Err(parse_err(line_no, "site out of range"));
                }
                let cell = parse_cell(&tokens[2..2 + d], d, line_no)?;
                let value: f64 = parse_num(tokens[2 + d], line_no, "potential value")?;
                pg.potential_overrides.insert(Vertex::new(site, cell), value);
            }
            other => return Err(parse_err(line_no, format!("unknown directive {other:?}"))),
        }
    }

    if !table_entries.is_empty() {
        if pg.added.is_some() {
            return Err(Error::InvalidParameter(
                "table edges cannot be combined with a rule kernel".into(),
            ));
        }
        pg.added = Some(Kernel::Table(table_entries));
    }
    Ok(pg)
}
