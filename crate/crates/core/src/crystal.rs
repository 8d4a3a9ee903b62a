//! Topological crystals: lazily generated Z^d-periodic graphs defined by a
//! finite quotient graph with integer edge indices.
//!
//! A quotient graph lists each unoriented edge once as `(origin site,
//! terminus site, index, weight)`; the reversal `(terminus, origin, -index)`
//! is implicit. The lifted crystal has vertex set `{sites} x Z^d` and, for
//! each quotient edge, an edge from `(j, mu)` to `(l, mu + index)` for every
//! cell `mu`.

use crate::error::{Error, Result};
use crate::graph::{Cell, EdgeKey, OrientedEdge, Vertex, WeightedGraph};
use crate::tail::Interval;

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientEdge {
    pub origin: usize,
    pub terminus: usize,
    pub index: Cell,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct QuotientGraph {
    pub dimension: usize,
    pub site_names: Vec<String>,
    /// Periodic vertex measure m0 per site.
    pub vertex_weights: Vec<f64>,
    /// Periodic potential R0 per site.
    pub potentials: Vec<f64>,
    pub edges: Vec<QuotientEdge>,
}

impl QuotientGraph {
    pub fn n_sites(&self) -> usize {
        self.site_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites();
        if n == 0 {
            return Err(Error::InvalidQuotient("no vertices".into()));
        }
        if self.dimension == 0 {
            return Err(Error::InvalidQuotient("dimension must be >= 1".into()));
        }
        if self.vertex_weights.len() != n || self.potentials.len() != n {
            return Err(Error::InvalidQuotient(
                "vertex weight/potential list length mismatch".into(),
            ));
        }
        if let Some(w) = self.vertex_weights.iter().find(|&&w| w <= 0.0) {
            return Err(Error::InvalidQuotient(format!(
                "vertex weight {w} is not strictly positive"
            )));
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.origin >= n || e.terminus >= n {
                return Err(Error::InvalidQuotient(format!("edge {i}: site out of range")));
            }
            if e.index.len() != self.dimension {
                return Err(Error::InvalidQuotient(format!(
                    "edge {i}: index has {} components, expected {}",
                    e.index.len(),
                    self.dimension
                )));
            }
            if e.weight < 0.0 {
                return Err(Error::InvalidQuotient(format!("edge {i}: negative weight")));
            }
        }
        // No duplicate lifted edges: a pair (j, l, eta) coincides with a
        // previously listed edge or with its implicit reversal (l, j, -eta).
        for i in 0..self.edges.len() {
            for k in 0..i {
                let a = &self.edges[i];
                let b = &self.edges[k];
                let same = a.origin == b.origin && a.terminus == b.terminus && a.index == b.index;
                let reversed = a.origin == b.terminus
                    && a.terminus == b.origin
                    && a.index.iter().zip(&b.index).all(|(x, y)| *x == -y);
                if same || reversed {
                    return Err(Error::InvalidQuotient(format!(
                        "edges {k} and {i} lift to the same crystal edge"
                    )));
                }
            }
        }
        Ok(())
    }

    /// deg_{m0} at a site: sum over incident oriented edges of m0(e)/m0(site).
    pub fn site_degree(&self, j: usize) -> f64 {
        let mut acc = 0.0;
        for e in &self.edges {
            if e.origin == j {
                acc += e.weight;
            }
            if e.terminus == j {
                acc += e.weight;
            }
        }
        acc / self.vertex_weights[j]
    }

    pub fn site_index(&self, name: &str) -> Option<usize> {
        self.site_names.iter().position(|s| s == name)
    }
}

#[derive(Debug, Clone)]
pub struct TopologicalCrystal {
    quotient: QuotientGraph,
}

impl TopologicalCrystal {
    pub fn new(quotient: QuotientGraph) -> Result<Self> {
        quotient.validate()?;
        Ok(TopologicalCrystal { quotient })
    }

    pub fn quotient(&self) -> &QuotientGraph {
        &self.quotient
    }

    pub fn dimension(&self) -> usize {
        self.quotient.dimension
    }

    pub fn n_sites(&self) -> usize {
        self.quotient.n_sites()
    }

    /// The lifts A_x of the quotient edges with origin x. The count depends
    /// only on the site of x.
    pub fn incident_edges(&self, x: &Vertex) -> Vec<OrientedEdge> {
        let mut out = Vec::new();
        for (k, e) in self.quotient.edges.iter().enumerate() {
            if e.origin == x.site {
                let terminus = Vertex::new(
                    e.terminus,
                    x.cell.iter().zip(&e.index).map(|(a, b)| a + b).collect(),
                );
                out.push(OrientedEdge {
                    origin: x.clone(),
                    terminus,
                    key: EdgeKey { quotient_edge: k, cell: x.cell.clone() },
                });
            }
            if e.terminus == x.site {
                let cell: Cell = x.cell.iter().zip(&e.index).map(|(a, b)| a - b).collect();
                let terminus = Vertex::new(e.origin, cell.clone());
                out.push(OrientedEdge {
                    origin: x.clone(),
                    terminus,
                    key: EdgeKey { quotient_edge: k, cell },
                });
            }
        }
        out
    }

    /// Resolves an edge key to the two endpoints of the unoriented edge.
    pub fn edge_endpoints(&self, key: &EdgeKey) -> (Vertex, Vertex) {
        let e = &self.quotient.edges[key.quotient_edge];
        let origin = Vertex::new(e.origin, key.cell.clone());
        let terminus = Vertex::new(
            e.terminus,
            key.cell.iter().zip(&e.index).map(|(a, b)| a + b).collect(),
        );
        (origin, terminus)
    }

    pub fn m0_vertex(&self, x: &Vertex) -> f64 {
        self.quotient.vertex_weights[x.site]
    }

    pub fn m0_edge(&self, key: &EdgeKey) -> f64 {
        self.quotient.edges[key.quotient_edge].weight
    }

    pub fn r0(&self, x: &Vertex) -> f64 {
        self.quotient.potentials[x.site]
    }
}

/// The unperturbed periodic operator data (X, m0, R0) as a weighted graph.
pub struct CrystalOperator<'a> {
    pub crystal: &'a TopologicalCrystal,
}

impl WeightedGraph for CrystalOperator<'_> {
    fn dimension(&self) -> usize {
        self.crystal.dimension()
    }

    fn n_sites(&self) -> usize {
        self.crystal.n_sites()
    }

    fn vertex_measure(&self, x: &Vertex) -> f64 {
        self.crystal.m0_vertex(x)
    }

    fn potential(&self, x: &Vertex) -> f64 {
        self.crystal.r0(x)
    }

    fn edges_at(&self, x: &Vertex) -> Vec<(Vertex, f64)> {
        self.crystal
            .incident_edges(x)
            .into_iter()
            .map(|e| {
                let w = self.crystal.m0_edge(&e.key);
                (e.terminus, w)
            })
            .collect()
    }

    fn degree_tail(&self, _x: &Vertex) -> crate::error::Result<Interval> {
        Ok(Interval::ZERO)
    }

    fn degree_sup_bound(&self) -> crate::error::Result<f64> {
        let q = self.crystal.quotient();
        Ok((0..q.n_sites())
            .map(|j| q.site_degree(j))
            .fold(0.0, f64::max))
    }

    fn potential_sup_bound(&self) -> f64 {
        self.crystal
            .quotient()
            .potentials
            .iter()
            .fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// The lattice Z^d: one site, d loops indexed by the standard basis.
pub fn lattice_zd(d: usize) -> TopologicalCrystal {
    let edges = (0..d)
        .map(|a| {
            let mut index = vec![0i64; d];
            index[a] = 1;
            QuotientEdge { origin: 0, terminus: 0, index, weight: 1.0 }
        })
        .collect();
    TopologicalCrystal::new(QuotientGraph {
        dimension: d,
        site_names: vec!["o".into()],
        vertex_weights: vec![1.0],
        potentials: vec![0.0],
        edges,
    })
    .expect("Z^d quotient is valid")
}

/// The triangular prism crystal: three sites forming a triangle in each
/// cell, each site also joined to its translate in the next cell.
pub fn toblerone() -> TopologicalCrystal {
    let edges = vec![
        QuotientEdge { origin: 0, terminus: 1, index: vec![0], weight: 1.0 },
        QuotientEdge { origin: 1, terminus: 2, index: vec![0], weight: 1.0 },
        QuotientEdge { origin: 2, terminus: 0, index: vec![0], weight: 1.0 },
        QuotientEdge { origin: 0, terminus: 0, index: vec![1], weight: 1.0 },
        QuotientEdge { origin: 1, terminus: 1, index: vec![1], weight: 1.0 },
        QuotientEdge { origin: 2, terminus: 2, index: vec![1], weight: 1.0 },
    ];
    TopologicalCrystal::new(QuotientGraph {
        dimension: 1,
        site_names: vec!["x".into(), "y".into(), "z".into()],
        vertex_weights: vec![1.0; 3],
        potentials: vec![0.0; 3],
        edges,
    })
    .expect("toblerone quotient is valid")
}

/// Parses a quotient graph from the structured text format:
///
/// ```text
/// dimension 1
/// vertices
///   x 1.0
///   y 1.0
/// edges
///   x y 0 1.0      # origin terminus eta_1 .. eta_d weight
///   x x 1 1.0
/// potential        # optional block, defaults to 0
///   x 0.5
/// ```
///
/// `#` starts a comment; blank lines are skipped.
pub fn quotient_from_spec(text: &str) -> Result<TopologicalCrystal> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Vertices,
        Edges,
        Potential,
    }

    let mut dimension: Option<usize> = None;
    let mut names: Vec<String> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut potentials: Vec<(String, f64, usize)> = Vec::new();
    let mut raw_edges: Vec<(String, String, Vec<i64>, f64, usize)> = Vec::new();
    let mut section = Section::None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse { line: lineno, message };
        match parts[0] {
            "dimension" => {
                let d = parts
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err("expected `dimension <d>`".into()))?;
                dimension = Some(d);
            }
            "vertices" => section = Section::Vertices,
            "edges" => section = Section::Edges,
            "potential" => section = Section::Potential,
            _ => match section {
                Section::Vertices => {
                    if parts.len() != 2 {
                        return Err(parse_err("expected `<name> <weight>`".into()));
                    }
                    let w: f64 = parts[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad weight `{}`", parts[1])))?;
                    names.push(parts[0].to_string());
                    weights.push(w);
                }
                Section::Edges => {
                    let d = dimension
                        .ok_or_else(|| parse_err("`dimension` must precede `edges`".into()))?;
                    if parts.len() != 3 + d {
                        return Err(parse_err(format!(
                            "expected `<origin> <terminus> <{d} index components> <weight>`"
                        )));
                    }
                    let mut index = Vec::with_capacity(d);
                    for p in &parts[2..2 + d] {
                        index.push(
                            p.parse()
                                .map_err(|_| parse_err(format!("bad index component `{p}`")))?,
                        );
                    }
                    let w: f64 = parts[2 + d]
                        .parse()
                        .map_err(|_| parse_err(format!("bad weight `{}`", parts[2 + d])))?;
                    raw_edges.push((parts[0].into(), parts[1].into(), index, w, lineno));
                }
                Section::Potential => {
                    if parts.len() != 2 {
                        return Err(parse_err("expected `<name> <value>`".into()));
                    }
                    let v: f64 = parts[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad value `{}`", parts[1])))?;
                    potentials.push((parts[0].to_string(), v, lineno));
                }
                Section::None => {
                    return Err(parse_err(format!("unexpected token `{}`", parts[0])));
                }
            },
        }
    }

    let dimension =
        dimension.ok_or_else(|| Error::Parse { line: 0, message: "missing `dimension`".into() })?;
    let site = |name: &str, line: usize| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or(Error::Parse { line, message: format!("unknown vertex `{name}`") })
    };
    let mut edges = Vec::new();
    for (o, t, index, weight, line) in raw_edges {
        edges.push(QuotientEdge {
            origin: site(&o, line)?,
            terminus: site(&t, line)?,
            index,
            weight,
        });
    }
    let mut pot = vec![0.0; names.len()];
    for (name, v, line) in potentials {
        pot[site(&name, line)?] = v;
    }
    TopologicalCrystal::new(QuotientGraph {
        dimension,
        site_names: names,
        vertex_weights: weights,
        potentials: pot,
        edges,
    })
}
