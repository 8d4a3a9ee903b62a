//! Perturbed graphs: an infinite rule-generated set of new edges F+, a
//! finite removed set F-, measure and potential modifications, the unitary
//! rescaling J, and the position-space decomposition operators L+/L-/Z.
//!
//! New edges are represented intensionally: a weight kernel plus a box
//! enumerator plus analytic tail bounds. Measure and potential changes are
//! finite override tables, so their decay integrands have finite support.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_complex::Complex64;

use crate::crystal::TopologicalCrystal;
use crate::error::{Error, Result};
use crate::graph::{
    cell_norm, cell_norm_inf, Cell, EdgeKey, GridFunction, Vertex, WeightedGraph,
};
use crate::tail::{power_tail, Interval, Summed};

pub mod decay;

/// Weight kernel for the rule-generated new-edge set F+.
#[derive(Debug, Clone)]
pub enum Kernel {
    /// One hub vertex connected to every vertex in a different cell,
    /// with weight C |cell(y)|^alpha.
    Hub { hub: Vertex, alpha: f64, c: f64 },
    /// Every pair of vertices connected, weight C (1+|x|)^alpha (1+|y|)^alpha.
    Complete { alpha: f64, c: f64 },
    /// Hub vertex of the triangular prism crystal connected to every other
    /// vertex, weight C (1+|mu|)^alpha.
    Toblerone { alpha: f64, c: f64 },
    /// Finite explicit table of (x, y, weight) with x != y.
    Table(Vec<(Vertex, Vertex, f64)>),
}

pub(crate) fn box_cells(d: usize, radius: i64) -> Vec<Cell> {
    let mut cells = vec![Vec::with_capacity(d)];
    for _ in 0..d {
        let mut next = Vec::with_capacity(cells.len() * (2 * radius as usize + 1));
        for c in cells {
            for v in -radius..=radius {
                let mut c2 = c.clone();
                c2.push(v);
                next.push(c2);
            }
        }
        cells = next;
    }
    cells
}

/// Certified bounds for sums of |mu|^alpha (or (1+|mu|)^alpha when `shifted`)
/// over the cells of Z^d with |mu|_inf > radius. Errors when the sum has no
/// finite bound (alpha + d >= 0).
fn cell_power_tail(d: usize, radius: i64, alpha: f64, shifted: bool) -> Result<Interval> {
    let p = alpha + d as f64 - 1.0;
    if p >= -1.0 {
        return Err(Error::UnknownTail(format!(
            "sum of |mu|^{alpha} over Z^{d} diverges"
        )));
    }
    let r = radius.max(1) as f64;
    if d == 1 {
        // Shell r holds exactly the two cells {-r, r} with |mu| = r.
        let base = power_tail(if shifted { r + 1.0 } else { r }, alpha);
        return Ok(base.scale(2.0));
    }
    let sd = (d as f64).sqrt();
    let tail = power_tail(r, p);
    let hi = 2.0 * d as f64 * 3f64.powi(d as i32 - 1) * tail.hi;
    let lo_factor = if shifted { (1.0 + sd).powf(alpha) } else { sd.powf(alpha) };
    let lo = 2.0 * d as f64 * lo_factor * tail.lo;
    Ok(Interval::new(lo.min(hi), hi))
}

impl Kernel {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            Kernel::Hub { alpha, .. }
            | Kernel::Complete { alpha, .. }
            | Kernel::Toblerone { alpha, .. } => Some(*alpha),
            Kernel::Table(_) => None,
        }
    }

    /// Weight of the new edge between x and y, 0 if the kernel adds none.
    pub fn weight(&self, x: &Vertex, y: &Vertex) -> f64 {
        if x == y {
            return 0.0;
        }
        match self {
            Kernel::Hub { hub, alpha, c } => {
                let other = if x == hub {
                    y
                } else if y == hub {
                    x
                } else {
                    return 0.0;
                };
                let dist: Cell = other
                    .cell
                    .iter()
                    .zip(&hub.cell)
                    .map(|(a, b)| a - b)
                    .collect();
                if dist.iter().all(|&v| v == 0) {
                    return 0.0;
                }
                c * cell_norm(&dist).powf(*alpha)
            }
            Kernel::Complete { alpha, c } => {
                c * (1.0 + cell_norm(&x.cell)).powf(*alpha) * (1.0 + cell_norm(&y.cell)).powf(*alpha)
            }
            Kernel::Toblerone { alpha, c } => {
                let hub = Vertex::new(0, vec![0]);
                let other = if *x == hub {
                    y
                } else if *y == hub {
                    x
                } else {
                    return 0.0;
                };
                c * (1.0 + cell_norm(&other.cell)).powf(*alpha)
            }
            Kernel::Table(entries) => entries
                .iter()
                .filter(|(a, b, _)| (a == x && b == y) || (a == y && b == x))
                .map(|(_, _, w)| w)
                .sum(),
        }
    }

    /// New edges with origin x, enumerated over cells |mu|_inf <= radius.
    pub fn edges_at(&self, x: &Vertex, n_sites: usize, radius: i64) -> Vec<(Vertex, f64)> {
        match self {
            Kernel::Hub { hub, .. } => {
                if x == hub {
                    let d = hub.cell.len();
                    let mut out = Vec::new();
                    for cell in box_cells(d, radius) {
                        let shifted: Cell =
                            cell.iter().zip(&hub.cell).map(|(a, b)| a + b).collect();
                        if cell.iter().all(|&v| v == 0) {
                            continue;
                        }
                        for site in 0..n_sites {
                            let y = Vertex::new(site, shifted.clone());
                            let w = self.weight(x, &y);
                            if w > 0.0 {
                                out.push((y, w));
                            }
                        }
                    }
                    out
                } else {
                    let w = self.weight(x, hub);
                    if w > 0.0 {
                        vec![(hub.clone(), w)]
                    } else {
                        Vec::new()
                    }
                }
            }
            Kernel::Complete { .. } => {
                let d = x.cell.len();
                let mut out = Vec::new();
                for cell in box_cells(d, radius) {
                    for site in 0..n_sites {
                        let y = Vertex::new(site, cell.clone());
                        if &y == x {
                            continue;
                        }
                        let w = self.weight(x, &y);
                        if w > 0.0 {
                            out.push((y, w));
                        }
                    }
                }
                out
            }
            Kernel::Toblerone { .. } => {
                let hub = Vertex::new(0, vec![0]);
                if *x == hub {
                    let mut out = Vec::new();
                    for mu in -radius..=radius {
                        for site in 0..n_sites {
                            let y = Vertex::new(site, vec![mu]);
                            if y == hub {
                                continue;
                            }
                            let w = self.weight(x, &y);
                            if w > 0.0 {
                                out.push((y, w));
                            }
                        }
                    }
                    out
                } else {
                    let w = self.weight(x, &hub);
                    if w > 0.0 {
                        vec![(hub, w)]
                    } else {
                        Vec::new()
                    }
                }
            }
            Kernel::Table(entries) => {
                let mut out = Vec::new();
                for (a, b, w) in entries {
                    if a == x {
                        out.push((b.clone(), *w));
                    } else if b == x {
                        out.push((a.clone(), *w));
                    }
                }
                out
            }
        }
    }

    /// Certified interval for the total weight of new edges at x that
    /// `edges_at` with the same radius does not enumerate.
    pub fn tail_weight(&self, x: &Vertex, n_sites: usize, radius: i64) -> Result<Interval> {
        match self {
            Kernel::Hub { hub, alpha, c } => {
                if x == hub {
                    let d = hub.cell.len();
                    Ok(cell_power_tail(d, radius, *alpha, false)?
                        .scale(c * n_sites as f64))
                } else {
                    Ok(Interval::ZERO)
                }
            }
            Kernel::Complete { alpha, c } => {
                let d = x.cell.len();
                let factor = c * n_sites as f64 * (1.0 + cell_norm(&x.cell)).powf(*alpha);
                Ok(cell_power_tail(d, radius, *alpha, true)?.scale(factor))
            }
            Kernel::Toblerone { alpha, c } => {
                let hub = Vertex::new(0, vec![0]);
                if *x == hub {
                    Ok(cell_power_tail(1, radius, *alpha, true)?.scale(c * n_sites as f64))
                } else {
                    Ok(Interval::ZERO)
                }
            }
            Kernel::Table(_) => Ok(Interval::ZERO),
        }
    }

    /// Upper bound for deg-type weight sums of new edges at any vertex with
    /// |cell|_inf > radius (used by the global degree bound).
    pub fn far_weight_bound(&self, n_sites: usize, radius: i64) -> Result<f64> {
        let r = radius.max(1) as f64;
        match self {
            Kernel::Hub { alpha, c, .. } => Ok(c * r.powf(*alpha)),
            Kernel::Complete { alpha, c } => {
                // (1+|x|)^alpha <= (1+r)^alpha times the full second-factor sum.
                let d = 1usize.max(self.dimension_hint());
                let total = self.total_weight_bound(n_sites, d)?;
                Ok((1.0 + r).powf(*alpha) * total / c.max(f64::MIN_POSITIVE) * c)
            }
            Kernel::Toblerone { alpha, c } => Ok(c * (1.0 + r).powf(*alpha)),
            Kernel::Table(_) => Ok(0.0),
        }
    }

    fn dimension_hint(&self) -> usize {
        match self {
            Kernel::Hub { hub, .. } => hub.cell.len(),
            Kernel::Toblerone { .. } => 1,
            _ => 1,
        }
    }

    /// Upper bound on sum over all vertices y of C (1+|cell(y)|)^alpha,
    /// for the Complete kernel's second factor.
    fn total_weight_bound(&self, n_sites: usize, d: usize) -> Result<f64> {
        match self {
            Kernel::Complete { alpha, c } => {
                let inner_radius = 16i64;
                let mut partial = 0.0;
                for cell in box_cells(d, inner_radius) {
                    partial += (1.0 + cell_norm(&cell)).powf(*alpha);
                }
                let tail = cell_power_tail(d, inner_radius, *alpha, true)?.hi;
                Ok(c * n_sites as f64 * (partial + tail))
            }
            _ => Ok(0.0),
        }
    }
}

/// The perturbed graph: base crystal, new/removed edges, and finite measure
/// and potential override tables. Infinite stars are enumerated over the box
/// |cell|_inf <= `enum_radius`; every operator of this crate uses that same
/// truncation, and certified tails are reported alongside.
#[derive(Debug, Clone)]
pub struct PerturbedGraph {
    pub crystal: TopologicalCrystal,
    pub added: Option<Kernel>,
    pub enum_radius: i64,
    pub removed: Vec<EdgeKey>,
    pub vertex_measure_overrides: HashMap<Vertex, f64>,
    pub edge_measure_overrides: HashMap<EdgeKey, f64>,
    pub potential_overrides: HashMap<Vertex, f64>,
}

impl PerturbedGraph {
    pub fn unperturbed(crystal: TopologicalCrystal) -> Self {
        PerturbedGraph {
            crystal,
            added: None,
            enum_radius: 128,
            removed: Vec::new(),
            vertex_measure_overrides: HashMap::new(),
            edge_measure_overrides: HashMap::new(),
            potential_overrides: HashMap::new(),
        }
    }

    pub fn with_enum_radius(mut self, radius: i64) -> Self {
        self.enum_radius = radius;
        self
    }

    pub fn m_vertex(&self, x: &Vertex) -> f64 {
        self.vertex_measure_overrides
            .get(x)
            .copied()
            .unwrap_or_else(|| self.crystal.m0_vertex(x))
    }

    pub fn m0_vertex(&self, x: &Vertex) -> f64 {
        self.crystal.m0_vertex(x)
    }

    pub fn is_removed(&self, key: &EdgeKey) -> bool {
        self.removed.contains(key)
    }

    /// Measure of a surviving original edge (override or m0); None if removed.
    pub fn m_edge(&self, key: &EdgeKey) -> Option<f64> {
        if self.is_removed(key) {
            return None;
        }
        Some(
            self.edge_measure_overrides
                .get(key)
                .copied()
                .unwrap_or_else(|| self.crystal.m0_edge(key)),
        )
    }

    /// Measure with the convention m(e) := m0(e) for removed edges, used by
    /// the multiplication-operator parts of the decomposition.
    pub fn m_edge_or_m0(&self, key: &EdgeKey) -> f64 {
        if self.is_removed(key) {
            self.crystal.m0_edge(key)
        } else {
            self.m_edge(key).unwrap()
        }
    }

    pub fn r(&self, x: &Vertex) -> f64 {
        self.potential_overrides
            .get(x)
            .copied()
            .unwrap_or_else(|| self.crystal.r0(x))
    }

    pub fn added_edges_at(&self, x: &Vertex) -> Vec<(Vertex, f64)> {
        match &self.added {
            Some(kernel) => kernel.edges_at(x, self.crystal.n_sites(), self.enum_radius),
            None => Vec::new(),
        }
    }

    pub fn added_tail(&self, x: &Vertex) -> Result<Interval> {
        match &self.added {
            Some(kernel) => kernel.tail_weight(x, self.crystal.n_sites(), self.enum_radius),
            None => Ok(Interval::ZERO),
        }
    }

    /// Partial degree deg_{F+}(x) = sum over new edges at x of m(e)/m(x),
    /// as a truncated sum with certified tail.
    pub fn partial_degree(&self, x: &Vertex) -> Result<Summed> {
        let m_x = self.m_vertex(x);
        let value: f64 = self.added_edges_at(x).iter().map(|(_, w)| w / m_x).sum();
        Ok(Summed { value, tail: self.added_tail(x)?.scale(1.0 / m_x) })
    }

    /// The unitary J : l^2(X, m0) -> l^2(X-perturbed, m),
    /// [Jf](x) = (m0(x)/m(x))^{1/2} f(x).
    pub fn j_apply(&self, f: &GridFunction) -> GridFunction {
        f.rescaled(|x| (self.m0_vertex(x) / self.m_vertex(x)).sqrt())
    }

    /// The inverse (= adjoint) of J.
    pub fn j_inverse(&self, f: &GridFunction) -> GridFunction {
        f.rescaled(|x| (self.m_vertex(x) / self.m0_vertex(x)).sqrt())
    }

    fn override_extent(&self) -> i64 {
        let mut r = 0i64;
        for x in self
            .vertex_measure_overrides
            .keys()
            .chain(self.potential_overrides.keys())
        {
            r = r.max(cell_norm_inf(&x.cell));
        }
        for k in self.edge_measure_overrides.keys().chain(self.removed.iter()) {
            let (a, b) = self.crystal.edge_endpoints(k);
            r = r.max(cell_norm_inf(&a.cell)).max(cell_norm_inf(&b.cell));
        }
        r
    }
}

impl WeightedGraph for PerturbedGraph {
    fn dimension(&self) -> usize {
        self.crystal.dimension()
    }

    fn n_sites(&self) -> usize {
        self.crystal.n_sites()
    }

    fn vertex_measure(&self, x: &Vertex) -> f64 {
        self.m_vertex(x)
    }

    fn potential(&self, x: &Vertex) -> f64 {
        self.r(x)
    }

    fn edges_at(&self, x: &Vertex) -> Vec<(Vertex, f64)> {
        let mut out: Vec<(Vertex, f64)> = self
            .crystal
            .incident_edges(x)
            .into_iter()
            .filter_map(|e| self.m_edge(&e.key).map(|w| (e.terminus, w)))
            .collect();
        out.extend(self.added_edges_at(x));
        out
    }

    fn degree_tail(&self, x: &Vertex) -> Result<Interval> {
        self.added_tail(x)
    }

    fn degree_sup_bound(&self) -> Result<f64> {
        let scan = self.override_extent().max(4) + 1;
        let d = self.dimension();
        let mut sup: f64 = 0.0;
        for cell in box_cells(d, scan) {
            for site in 0..self.n_sites() {
                let x = Vertex::new(site, cell.clone());
                sup = sup.max(crate::graph::degree(self, &x)?.upper());
            }
        }
        // Beyond the scanned box there are no overrides; the original degree
        // is periodic and new-edge weight is bounded by the kernel far field.
        let base = crate::crystal::CrystalOperator { crystal: &self.crystal }.degree_sup_bound()?;
        let far = match &self.added {
            Some(kernel) => {
                let min_m = self
                    .crystal
                    .quotient()
                    .vertex_weights
                    .iter()
                    .fold(f64::INFINITY, |a, &b| a.min(b));
                kernel.far_weight_bound(self.n_sites(), scan)? / min_m
            }
            None => 0.0,
        };
        Ok(sup.max(base + far))
    }

    fn potential_sup_bound(&self) -> f64 {
        let base = self
            .crystal
            .quotient()
            .potentials
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        self.potential_overrides
            .values()
            .fold(base, |a, &b| a.max(b.abs()))
    }
}

/// A finitely supported function Z^d -> C^n, the position-space side of the
/// Floquet transform (component j at cell mu corresponds to vertex (j, mu)
/// with the m0^{1/2} weight absorbed).
#[derive(Debug, Clone)]
pub struct CellFunction {
    pub n_sites: usize,
    values: BTreeMap<Cell, Vec<Complex64>>,
}

impl CellFunction {
    pub fn new(n_sites: usize) -> Self {
        CellFunction { n_sites, values: BTreeMap::new() }
    }

    pub fn get(&self, cell: &Cell, site: usize) -> Complex64 {
        self.values
            .get(cell)
            .map(|v| v[site])
            .unwrap_or_default()
    }

    pub fn set(&mut self, cell: Cell, site: usize, v: Complex64) {
        let entry = self
            .values
            .entry(cell)
            .or_insert_with(|| vec![Complex64::default(); self.n_sites]);
        entry[site] = v;
    }

    pub fn add_to(&mut self, cell: Cell, site: usize, v: Complex64) {
        let entry = self
            .values
            .entry(cell)
            .or_insert_with(|| vec![Complex64::default(); self.n_sites]);
        entry[site] += v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cell, &Vec<Complex64>)> {
        self.values.iter()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .values()
            .flat_map(|v| v.iter())
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn sub(&self, other: &CellFunction) -> CellFunction {
        let mut out = self.clone();
        for (cell, comps) in other.iter() {
            for (j, v) in comps.iter().enumerate() {
                out.add_to(cell.clone(), j, -v);
            }
        }
        out
    }

    /// Standard (unweighted) cell inner product sum_j sum_mu phi conj(psi).
    pub fn inner(&self, other: &CellFunction) -> Complex64 {
        let mut acc = Complex64::default();
        for (cell, comps) in self.iter() {
            if let Some(o) = other.values.get(cell) {
                for (a, b) in comps.iter().zip(o) {
                    acc += a * b.conj();
                }
            }
        }
        acc
    }

    /// The weighted re-indexing (F* I U f): component j at mu is
    /// m0(x_j)^{1/2} f((j, mu)).
    pub fn from_grid(crystal: &TopologicalCrystal, f: &GridFunction) -> CellFunction {
        let q = crystal.quotient();
        let mut out = CellFunction::new(q.n_sites());
        for (x, v) in f.iter() {
            out.add_to(x.cell.clone(), x.site, q.vertex_weights[x.site].sqrt() * v);
        }
        out
    }

    /// Inverse of `from_grid`.
    pub fn to_grid(&self, crystal: &TopologicalCrystal) -> GridFunction {
        let q = crystal.quotient();
        let mut out = GridFunction::new();
        for (cell, comps) in self.iter() {
            for (j, v) in comps.iter().enumerate() {
                if *v != Complex64::default() {
                    out.set(
                        Vertex::new(j, cell.clone()),
                        v / q.vertex_weights[j].sqrt(),
                    );
                }
            }
        }
        out
    }

    fn vertices(&self) -> Vec<Vertex> {
        let mut out = Vec::new();
        for (cell, comps) in self.iter() {
            for (j, v) in comps.iter().enumerate() {
                if *v != Complex64::default() {
                    out.push(Vertex::new(j, cell.clone()));
                }
            }
        }
        out
    }
}

fn gather_candidates(pg: &PerturbedGraph, phi: &CellFunction) -> Vec<Vertex> {
    let mut set: BTreeSet<Vertex> = BTreeSet::new();
    for v in phi.vertices() {
        for (t, _) in pg.added_edges_at(&v) {
            set.insert(t);
        }
        set.insert(v);
    }
    set.into_iter().collect()
}

/// The new-edge operator L+ acting on cell functions:
/// hopping with weights m(e)/(m(o)^{1/2} m(t)^{1/2}) minus the diagonal
/// partial-degree term.
pub fn l_plus_apply(pg: &PerturbedGraph, phi: &CellFunction) -> CellFunction {
    let mut out = CellFunction::new(phi.n_sites);
    for x in gather_candidates(pg, phi) {
        let m_x = pg.m_vertex(&x);
        let mut hop = Complex64::default();
        let mut diag_weight = 0.0;
        for (t, w) in pg.added_edges_at(&x) {
            hop += (w / (m_x * pg.m_vertex(&t)).sqrt()) * phi.get(&t.cell, t.site);
            diag_weight += w;
        }
        let value = hop - (diag_weight / m_x) * phi.get(&x.cell, x.site);
        if value != Complex64::default() {
            out.add_to(x.cell, x.site, value);
        }
    }
    out
}

/// The removed-edge operator L-: same shape as L+ but summing over F- with
/// the original weights m0(e) in the numerators.
pub fn l_minus_apply(pg: &PerturbedGraph, phi: &CellFunction) -> CellFunction {
    let mut out = CellFunction::new(phi.n_sites);
    for key in &pg.removed {
        let (a, b) = pg.crystal.edge_endpoints(key);
        let w0 = pg.crystal.m0_edge(key);
        let (ma, mb) = (pg.m_vertex(&a), pg.m_vertex(&b));
        // contribution at a (edge oriented a -> b) and at b (b -> a)
        out.add_to(
            a.cell.clone(),
            a.site,
            (w0 / (ma * mb).sqrt()) * phi.get(&b.cell, b.site)
                - (w0 / ma) * phi.get(&a.cell, a.site),
        );
        out.add_to(
            b.cell.clone(),
            b.site,
            (w0 / (ma * mb).sqrt()) * phi.get(&a.cell, a.site)
                - (w0 / mb) * phi.get(&b.cell, b.site),
        );
    }
    out
}

/// The diagonal potential difference r_s(N): multiplication by
/// R(mu x_j) - R0(x_j).
pub fn r_s_apply(pg: &PerturbedGraph, phi: &CellFunction) -> CellFunction {
    let mut out = CellFunction::new(phi.n_sites);
    for (cell, comps) in phi.iter() {
        for (j, v) in comps.iter().enumerate() {
            if *v == Complex64::default() {
                continue;
            }
            let x = Vertex::new(j, cell.clone());
            let diff = pg.r(&x) - pg.crystal.r0(&x);
            if diff != 0.0 {
                out.add_to(cell.clone(), j, diff * v);
            }
        }
    }
    out
}

/// The position-space difference operator
/// Z = sum over oriented quotient edges of (T(e)(N) - S_eta(e) K(e)(N))
///     + r_s(N) - L+ + L-,
/// with the convention m(e) := m0(e) on removed edges inside K and T.
pub fn z_apply(pg: &PerturbedGraph, phi: &CellFunction) -> CellFunction {
    let q = pg.crystal.quotient();
    let mut out = CellFunction::new(phi.n_sites);

    for (k, e) in q.edges.iter().enumerate() {
        let m0_edge = e.weight;
        // both orientations: (origin site, terminus site, eta, key offset)
        let neg_index: Cell = e.index.iter().map(|v| -v).collect();
        let orientations = [
            (e.origin, e.terminus, e.index.clone(), vec![0i64; q.dimension]),
            (e.terminus, e.origin, neg_index.clone(), neg_index),
        ];
        for (os, ts, eta, key_offset) in orientations {
            let m0_os = q.vertex_weights[os];
            let m0_ts = q.vertex_weights[ts];

            // T(e)(N) phi : diagonal in the origin site.
            for (cell, comps) in phi.iter() {
                let v = comps[os];
                if v == Complex64::default() {
                    continue;
                }
                let key = EdgeKey {
                    quotient_edge: k,
                    cell: cell.iter().zip(&key_offset).map(|(a, b)| a + b).collect(),
                };
                let o_vertex = Vertex::new(os, cell.clone());
                let t_val = pg.m_edge_or_m0(&key) / pg.m_vertex(&o_vertex) - m0_edge / m0_os;
                if t_val != 0.0 {
                    out.add_to(cell.clone(), os, t_val * v);
                }
            }

            // - S_eta K(e)(N) phi : out_os(nu - eta) -= K(nu) phi_ts(nu).
            for (cell, comps) in phi.iter() {
                let v = comps[ts];
                if v == Complex64::default() {
                    continue;
                }
                let nu = cell;
                let translation: Cell = nu.iter().zip(&eta).map(|(a, b)| a - b).collect();
                let key = EdgeKey {
                    quotient_edge: k,
                    cell: translation.iter().zip(&key_offset).map(|(a, b)| a + b).collect(),
                };
                let o_vertex = Vertex::new(os, translation.clone());
                let t_vertex = Vertex::new(ts, nu.clone());
                let k_val = pg.m_edge_or_m0(&key)
                    / (pg.m_vertex(&o_vertex) * pg.m_vertex(&t_vertex)).sqrt()
                    - m0_edge / (m0_os * m0_ts).sqrt();
                if k_val != 0.0 {
                    out.add_to(translation, os, -k_val * v);
                }
            }
        }
    }

    let rs = r_s_apply(pg, phi);
    for (cell, comps) in rs.iter() {
        for (j, v) in comps.iter().enumerate() {
            out.add_to(cell.clone(), j, *v);
        }
    }
    let lp = l_plus_apply(pg, phi);
    for (cell, comps) in lp.iter() {
        for (j, v) in comps.iter().enumerate() {
            out.add_to(cell.clone(), j, -v);
        }
    }
    let lm = l_minus_apply(pg, phi);
    for (cell, comps) in lm.iter() {
        for (j, v) in comps.iter().enumerate() {
            out.add_to(cell.clone(), j, *v);
        }
    }
    out
}

/// Oracle for the decomposition: Z phi must equal the weighted re-indexing of
/// (J* H J - H0) f with f the grid form of phi. Both sides are evaluated with
/// the same star truncation, so the identity is exact up to rounding.
pub fn decomposition_residual(pg: &PerturbedGraph, phi: &CellFunction) -> f64 {
    use crate::crystal::CrystalOperator;
    use crate::graph::schrodinger_apply;

    let lhs = z_apply(pg, phi);

    let f = phi.to_grid(&pg.crystal);
    let jf = pg.j_apply(&f);
    let hjf = schrodinger_apply(pg, &jf);
    let jstar_hjf = pg.j_inverse(&hjf);
    let op0 = CrystalOperator { crystal: &pg.crystal };
    let h0f = schrodinger_apply(&op0, &f);
    let diff = jstar_hjf.sub(&h0f);
    let rhs = CellFunction::from_grid(&pg.crystal, &diff);

    lhs.sub(&rhs).norm()
}

/// Runs the decomposition oracle on random compactly supported vectors and
/// returns the largest residual.
pub fn verify_decomposition(
    pg: &PerturbedGraph,
    trials: usize,
    support_radius: i64,
    seed: u64,
) -> f64 {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(seed);
    let d = pg.dimension();
    let n = pg.n_sites();
    let mut max_residual = 0.0f64;
    for _ in 0..trials {
        let mut phi = CellFunction::new(n);
        for _ in 0..8 {
            let cell: Cell = (0..d)
                .map(|_| rng.random_range(-support_radius..=support_radius))
                .collect();
            let site = rng.random_range(0..n);
            phi.add_to(
                cell,
                site,
                Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
            );
        }
        max_residual = max_residual.max(decomposition_residual(pg, &phi));
    }
    max_residual
}

/// Builder for the hub example on Z^d: one vertex connected to every other
/// cell with weight C |y|^alpha.
pub fn hub_example(d: usize, alpha: f64, c: f64) -> Result<PerturbedGraph> {
    if alpha >= 0.0 {
        return Err(Error::InvalidParameter(
            "hub kernel needs alpha < 0 (unbounded degree otherwise)".into(),
        ));
    }
    let crystal = crate::crystal::lattice_zd(d);
    let hub = Vertex::new(0, vec![0; d]);
    Ok(PerturbedGraph {
        added: Some(Kernel::Hub { hub, alpha, c }),
        ..PerturbedGraph::unperturbed(crystal)
    })
}

/// Builder for the all-to-all example on Z^d with weight
/// C (1+|x|)^alpha (1+|y|)^alpha.
pub fn complete_example(d: usize, alpha: f64, c: f64) -> Result<PerturbedGraph> {
    if alpha >= 0.0 {
        return Err(Error::InvalidParameter(
            "complete kernel needs alpha < 0 (unbounded degree otherwise)".into(),
        ));
    }
    let crystal = crate::crystal::lattice_zd(d);
    Ok(PerturbedGraph {
        added: Some(Kernel::Complete { alpha, c }),
        ..PerturbedGraph::unperturbed(crystal)
    })
}

/// Builder for the perturbed triangular prism: its hub connected to every
/// other vertex with weight C (1+|mu|)^alpha.
pub fn toblerone_example(alpha: f64, c: f64) -> Result<PerturbedGraph> {
    if alpha >= 0.0 {
        return Err(Error::InvalidParameter(
            "toblerone kernel needs alpha < 0 (unbounded degree otherwise)".into(),
        ));
    }
    let crystal = crate::crystal::toblerone();
    Ok(PerturbedGraph {
        added: Some(Kernel::Toblerone { alpha, c }),
        ..PerturbedGraph::unperturbed(crystal)
    })
}
