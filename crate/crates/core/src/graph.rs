//! Weighted graphs, measures, the l^2 structure and the Laplace/Schrodinger
//! operators as appliable linear maps.
//!
//! Vertices of a periodic (or perturbed periodic) graph are pairs
//! `(site, cell)` with `site` an index into the quotient graph and `cell` a
//! point of Z^d. Operators act on finitely supported functions and are pure:
//! applying one returns a new [`GridFunction`].

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tail::{Interval, Summed};

/// Cell coordinate in Z^d.
pub type Cell = Vec<i64>;

pub fn cell_norm(cell: &[i64]) -> f64 {
    cell.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
}

pub fn cell_norm_inf(cell: &[i64]) -> i64 {
    cell.iter().map(|&c| c.abs()).max().unwrap_or(0)
}

/// `<mu> = (1 + |mu|^2)^{1/2}` used by the weighted decay condition.
pub fn cell_bracket(cell: &[i64]) -> f64 {
    (1.0 + cell.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt()
}

/// A vertex of the lifted graph: site index `j` in the quotient plus the
/// Z^d cell it lives in. Identity is exactly the pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    pub site: usize,
    pub cell: Cell,
}

impl Vertex {
    pub fn new(site: usize, cell: Cell) -> Self {
        Vertex { site, cell }
    }

    /// The entire part of the vertex: its Z^d cell coordinate.
    pub fn entire_part(&self) -> &Cell {
        &self.cell
    }

    pub fn translated(&self, nu: &[i64]) -> Vertex {
        Vertex {
            site: self.site,
            cell: self.cell.iter().zip(nu).map(|(a, b)| a + b).collect(),
        }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {:?})", self.site, self.cell)
    }
}

/// Identifier of an unoriented edge of the unperturbed crystal: the index of
/// the defining quotient edge plus the cell of the lift's canonical origin.
/// Both orientations of one lifted edge share the same key, so any weight
/// stored under the key automatically satisfies m(e) = m(reversal(e)).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey {
    pub quotient_edge: usize,
    pub cell: Cell,
}

/// An oriented edge of the lifted crystal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrientedEdge {
    pub origin: Vertex,
    pub terminus: Vertex,
    pub key: EdgeKey,
}

impl OrientedEdge {
    pub fn reversal(&self) -> OrientedEdge {
        OrientedEdge {
            origin: self.terminus.clone(),
            terminus: self.origin.clone(),
            key: self.key.clone(),
        }
    }

    /// Index of the edge: cell displacement from origin to terminus.
    pub fn index(&self) -> Cell {
        self.terminus
            .cell
            .iter()
            .zip(&self.origin.cell)
            .map(|(t, o)| t - o)
            .collect()
    }

    /// Entire part of the edge, defined as the entire part of its origin.
    pub fn entire_part(&self) -> &Cell {
        &self.origin.cell
    }
}

/// A finitely supported complex function on the vertex set. Entries are kept
/// in a sorted map so that sums accumulate in a fixed order and results are
/// bit-reproducible across runs.
#[derive(Debug, Clone, Default)]
pub struct GridFunction {
    values: BTreeMap<Vertex, Complex64>,
}

impl GridFunction {
    pub fn new() -> Self {
        GridFunction { values: BTreeMap::new() }
    }

    pub fn delta(x: Vertex) -> Self {
        let mut f = GridFunction::new();
        f.set(x, Complex64::new(1.0, 0.0));
        f
    }

    pub fn get(&self, x: &Vertex) -> Complex64 {
        self.values.get(x).copied().unwrap_or_default()
    }

    pub fn set(&mut self, x: Vertex, v: Complex64) {
        if v == Complex64::default() {
            self.values.remove(&x);
        } else {
            self.values.insert(x, v);
        }
    }

    pub fn add_to(&mut self, x: Vertex, v: Complex64) {
        let entry = self.values.entry(x).or_default();
        *entry += v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vertex, &Complex64)> {
        self.values.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = &Vertex> {
        self.values.keys()
    }

    pub fn support_len(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, c: Complex64) -> GridFunction {
        GridFunction {
            values: self.values.iter().map(|(k, v)| (k.clone(), v * c)).collect(),
        }
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        let mut out = self.clone();
        for (x, v) in other.iter() {
            out.add_to(x.clone(), -v);
        }
        out
    }

    /// Pointwise rescaling by a real positive function.
    pub fn rescaled(&self, factor: impl Fn(&Vertex) -> f64) -> GridFunction {
        GridFunction {
            values: self
                .values
                .iter()
                .map(|(k, v)| (k.clone(), v * factor(k)))
                .collect(),
        }
    }
}

/// A graph together with a measure and a potential, exposed through local
/// enumeration. `edges_at` lists the oriented edges with the given origin
/// (possibly truncated for rule-generated infinite stars, in which case
/// `degree_tail` certifies the neglected weight).
pub trait WeightedGraph {
    fn dimension(&self) -> usize;
    fn n_sites(&self) -> usize;

    /// Vertex measure m(x) > 0.
    fn vertex_measure(&self, x: &Vertex) -> f64;

    /// Potential R(x).
    fn potential(&self, x: &Vertex) -> f64;

    /// Oriented edges with origin `x`, as (terminus, m(e)) pairs.
    fn edges_at(&self, x: &Vertex) -> Vec<(Vertex, f64)>;

    /// Certified interval for the edge weight at `x` that `edges_at` did not
    /// enumerate. Errors if no tail rule is available.
    fn degree_tail(&self, x: &Vertex) -> Result<Interval>;

    /// Certified upper bound for sup_x deg_m(x).
    fn degree_sup_bound(&self) -> Result<f64>;

    /// sup_x |R(x)|.
    fn potential_sup_bound(&self) -> f64;
}

/// Degree function deg_m(x) = sum_{e in A_x} m(e)/m(x), as a truncated sum
/// with a certified tail interval.
pub fn degree<G: WeightedGraph>(g: &G, x: &Vertex) -> Result<Summed> {
    let m_x = g.vertex_measure(x);
    let value: f64 = g.edges_at(x).iter().map(|(_, w)| w / m_x).sum();
    let tail = g.degree_tail(x)?.scale(1.0 / m_x);
    Ok(Summed { value, tail })
}

/// Applies the Laplace operator: [Df](x) = sum_{e in A_x} m(e)/m(x) (f(t(e)) - f(x)).
///
/// Infinite stars are enumerated at the graph's configured truncation radius;
/// the same truncation is used consistently by every operator in this crate.
pub fn laplacian_apply<G: WeightedGraph>(g: &G, f: &GridFunction) -> GridFunction {
    let mut touched: Vec<Vertex> = f.support().cloned().collect();
    for x in f.support() {
        for (t, _) in g.edges_at(x) {
            touched.push(t);
        }
    }
    touched.sort_by(|a, b| (a.site, &a.cell).cmp(&(b.site, &b.cell)));
    touched.dedup();

    let mut out = GridFunction::new();
    for x in touched {
        let m_x = g.vertex_measure(&x);
        let fx = f.get(&x);
        let mut acc = Complex64::default();
        for (t, w) in g.edges_at(&x) {
            acc += (w / m_x) * (f.get(&t) - fx);
        }
        out.set(x, acc);
    }
    out
}

/// Applies H = -Delta + R.
pub fn schrodinger_apply<G: WeightedGraph>(g: &G, f: &GridFunction) -> GridFunction {
    let mut out = laplacian_apply(g, f).scaled(Complex64::new(-1.0, 0.0));
    for (x, v) in f.iter() {
        out.add_to(x.clone(), g.potential(x) * v);
    }
    out
}

/// Scalar product of l^2(X, m): sum m(x) f(x) conj(g(x)).
pub fn inner_product<G: WeightedGraph>(g: &G, f: &GridFunction, h: &GridFunction) -> Complex64 {
    let (small, large, conj_small) = if f.support_len() <= h.support_len() {
        (f, h, false)
    } else {
        (h, f, true)
    };
    let mut acc = Complex64::default();
    for (x, v) in small.iter() {
        let other = large.get(x);
        let term = if conj_small {
            g.vertex_measure(x) * other * v.conj()
        } else {
            g.vertex_measure(x) * v * other.conj()
        };
        acc += term;
    }
    acc
}

pub fn norm<G: WeightedGraph>(g: &G, f: &GridFunction) -> f64 {
    f.iter()
        .map(|(x, v)| g.vertex_measure(x) * v.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Certified upper bound on the operator norm of H = -Delta + R,
/// namely 2 sup deg_m + sup |R|.
pub fn operator_norm_bound<G: WeightedGraph>(g: &G) -> Result<f64> {
    Ok(2.0 * g.degree_sup_bound()? + g.potential_sup_bound())
}

/// Quadratic form of -Delta: sum over unoriented edges of
/// m(e) |f(t) - f(o)|^2 / (2 m-normalization), equal to <-Delta f, f> for
/// real measures. Used by tests as an independent positivity oracle.
pub fn dirichlet_form<G: WeightedGraph>(g: &G, f: &GridFunction) -> f64 {
    let mut touched: Vec<Vertex> = f.support().cloned().collect();
    for x in f.support() {
        for (t, _) in g.edges_at(x) {
            touched.push(t);
        }
    }
    touched.sort_by(|a, b| (a.site, &a.cell).cmp(&(b.site, &b.cell)));
    touched.dedup();
    // Each unoriented edge appears once per endpoint, hence the factor 1/2.
    let mut acc = 0.0;
    for x in &touched {
        for (t, w) in g.edges_at(x) {
            acc += 0.5 * w * (f.get(&t) - f.get(x)).norm_sqr();
        }
    }
    acc
}

pub fn unknown_tail(x: &Vertex) -> Error {
    Error::UnknownTail(x.to_string())
}
