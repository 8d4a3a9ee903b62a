//! Spectral numerics: finite sections of the perturbed operator, fiber-wise
//! functional calculus for the periodic operator (band filters and free
//! evolution), Chebyshev time propagation, and the wave-operator probe.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bloch::{eig_fiber, sample_bands};
use crate::crystal::TopologicalCrystal;
use crate::error::{Error, Result};
use crate::graph::{cell_norm_inf, degree, Cell, GridFunction, Vertex, WeightedGraph};
use crate::perturbation::{box_cells, CellFunction, PerturbedGraph};

/// Compression P H P of the operator to the box |cell|_inf <= half_width, in
/// the orthonormal basis m(x)^{-1/2} delta_x of l^2(X, m). Diagonal entries
/// keep the full degree (including edges leaving the box and the truncated
/// enumeration of infinite stars), so spectral containment in [0, ||H||]
/// holds for nonnegative potentials.
pub struct FiniteSection {
    pub half_width: i64,
    pub vertices: Vec<Vertex>,
    matrix: faer::Mat<f64>,
    // CSR view of the (typically very sparse) matrix, for fast matvec
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

pub const DEFAULT_MAX_SECTION: usize = 4200;

impl FiniteSection {
    pub fn new<G: WeightedGraph>(g: &G, half_width: i64, max_dim: usize) -> Result<Self> {
        let d = g.dimension();
        let n_sites = g.n_sites();
        let cells = box_cells(d, half_width);
        let n = cells.len() * n_sites;
        if n > max_dim {
            return Err(Error::SectionTooLarge { n, max: max_dim });
        }
        let mut vertices = Vec::with_capacity(n);
        for cell in cells {
            for site in 0..n_sites {
                vertices.push(Vertex::new(site, cell.clone()));
            }
        }
        let index: HashMap<Vertex, usize> =
            vertices.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();

        let mut matrix = faer::Mat::<f64>::zeros(n, n);
        for (i, x) in vertices.iter().enumerate() {
            let m_x = g.vertex_measure(x);
            matrix[(i, i)] = degree(g, x)?.value + g.potential(x);
            for (t, w) in g.edges_at(x) {
                if let Some(&j) = index.get(&t) {
                    matrix[(i, j)] -= w / (m_x * g.vertex_measure(&t)).sqrt();
                }
            }
        }

        // certify symmetry, then symmetrize exactly
        let mut scale = 1.0f64;
        let mut deviation = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                scale = scale.max(matrix[(i, j)].abs());
                deviation = deviation.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
        let tolerance = 1e-12 * scale;
        if deviation > tolerance {
            return Err(Error::NotHermitian { deviation, tolerance });
        }
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let a = matrix[(i, j)];
                if a != 0.0 {
                    col_idx.push(j as u32);
                    vals.push(a);
                }
            }
            row_ptr.push(col_idx.len());
        }

        Ok(FiniteSection { half_width, vertices, matrix, row_ptr, col_idx, vals })
    }

    pub fn dim(&self) -> usize {
        self.vertices.len()
    }

    pub fn matrix(&self) -> &faer::Mat<f64> {
        &self.matrix
    }

    /// Coefficients of the projection of f onto the section basis:
    /// c_x = m(x)^{1/2} f(x).
    pub fn project<G: WeightedGraph>(&self, g: &G, f: &GridFunction) -> Vec<Complex64> {
        self.vertices
            .iter()
            .map(|x| g.vertex_measure(x).sqrt() * f.get(x))
            .collect()
    }

    pub fn embed<G: WeightedGraph>(&self, g: &G, coeffs: &[Complex64]) -> GridFunction {
        let mut f = GridFunction::new();
        for (x, c) in self.vertices.iter().zip(coeffs) {
            if *c != Complex64::default() {
                f.set(x.clone(), c / g.vertex_measure(x).sqrt());
            }
        }
        f
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim())
            .map(|i| {
                let mut acc = Complex64::default();
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.vals[k] * v[self.col_idx[k] as usize];
                }
                acc
            })
            .collect()
    }

    /// Gershgorin enclosure of the section spectrum.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let n = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut radius = 0.0;
            let mut diag = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] as usize == i {
                    diag = self.vals[k];
                } else {
                    radius += self.vals[k].abs();
                }
            }
            lo = lo.min(diag - radius);
            hi = hi.max(diag + radius);
        }
        (lo, hi)
    }

    /// Fraction of the coefficient mass of `v` inside |cell|_inf <= radius.
    pub fn mass_within(&self, v: &[f64], radius: i64) -> f64 {
        let mut inside = 0.0;
        let mut total = 0.0;
        for (x, c) in self.vertices.iter().zip(v) {
            let m = c * c;
            total += m;
            if cell_norm_inf(&x.cell) <= radius {
                inside += m;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            inside / total
        }
    }
}

pub struct SectionEigen {
    pub values: Vec<f64>,
    pub vectors: faer::Mat<f64>,
}

pub fn eigensolve_section(section: &FiniteSection) -> Result<SectionEigen> {
    let evd = section
        .matrix
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::InvalidParameter(format!("eigensolver failed: {e:?}")))?;
    let n = section.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| evd.S()[a].partial_cmp(&evd.S()[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| evd.S()[i]).collect();
    let vectors = faer::Mat::from_fn(n, n, |i, j| evd.U()[(i, order[j])]);
    Ok(SectionEigen { values, vectors })
}

/// Counts eigenvalues of the section in [lo, hi] whose eigenvector carries at
/// least `mass_fraction` of its mass in the inner half box. Eigenvalues of
/// boundary-localized states drift with the box size; localized ones are the
/// stable proxies for discrete spectrum in a gap of the essential spectrum.
pub fn count_localized_in(
    section: &FiniteSection,
    eigen: &SectionEigen,
    lo: f64,
    hi: f64,
    mass_fraction: f64,
) -> usize {
    let inner = section.half_width / 2;
    let n = section.dim();
    let mut count = 0;
    for (k, &lambda) in eigen.values.iter().enumerate() {
        if lambda < lo || lambda > hi {
            continue;
        }
        let v: Vec<f64> = (0..n).map(|i| eigen.vectors[(i, k)]).collect();
        if section.mass_within(&v, inner) >= mass_fraction {
            count += 1;
        }
    }
    count
}

/// Applies f(H0) via the eigendecomposition (the dense oracle used to check
/// the Chebyshev propagator).
pub fn apply_by_eigen(
    eigen: &SectionEigen,
    v: &[Complex64],
    f: impl Fn(f64) -> Complex64 + Sync,
) -> Vec<Complex64> {
    let n = eigen.values.len();
    // coefficients in the eigenbasis
    let coeffs: Vec<Complex64> = (0..n)
        .map(|k| (0..n).map(|i| eigen.vectors[(i, k)] * v[i]).sum())
        .collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|k| eigen.vectors[(i, k)] * f(eigen.values[k]) * coeffs[k])
                .sum()
        })
        .collect()
}

fn centered_period(n_grid: usize) -> Vec<i64> {
    let n = n_grid as i64;
    let lo = -(n / 2);
    (lo..lo + n).collect()
}

/// Applies the operator `symbol(H0)` to a cell function, fiber by fiber on
/// the uniform grid with `n_grid` points per torus axis. Exact (no aliasing)
/// as long as the support of `phi` and of the result fit inside one centered
/// period of the grid; the input support is checked, the output is folded.
pub fn apply_symbol(
    crystal: &TopologicalCrystal,
    phi: &CellFunction,
    n_grid: usize,
    symbol: impl Fn(f64) -> Complex64 + Sync,
) -> Result<CellFunction> {
    let q = crystal.quotient();
    let d = q.dimension;
    let n_sites = q.n_sites();
    if n_grid < 2 {
        return Err(Error::InvalidParameter("grid must have at least 2 points".into()));
    }
    let lo_cell = -((n_grid as i64) / 2);
    let hi_cell = lo_cell + n_grid as i64; // exclusive
    for (cell, _) in phi.iter() {
        if cell.iter().any(|&c| c < lo_cell || c >= hi_cell) {
            return Err(Error::InvalidParameter(format!(
                "support reaches cell {cell:?}; grid of {n_grid} points aliases it"
            )));
        }
    }

    let total = n_grid.pow(d as u32);
    let unflatten = |mut flat: usize| -> Vec<usize> {
        let mut idx = vec![0usize; d];
        for a in 0..d {
            idx[a] = flat % n_grid;
            flat /= n_grid;
        }
        idx
    };

    let hatted: Vec<Vec<Complex64>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let idx = unflatten(flat);
            let xi: Vec<f64> = idx.iter().map(|&k| k as f64 / n_grid as f64).collect();

            // forward transform of phi at xi
            let mut phi_hat = vec![Complex64::default(); n_sites];
            for (cell, comps) in phi.iter() {
                let phase: f64 = xi.iter().zip(cell).map(|(x, &m)| x * m as f64).sum();
                let e = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase);
                for (j, v) in comps.iter().enumerate() {
                    phi_hat[j] += e * v;
                }
            }

            let fiber = crate::bloch::assemble_fiber(q, &xi);
            let (values, vectors) = eig_fiber(&fiber)?;
            let mut out = vec![Complex64::default(); n_sites];
            for (k, &lambda) in values.iter().enumerate() {
                let s = symbol(lambda);
                if s == Complex64::default() {
                    continue;
                }
                // <phi_hat, u_k> u_k
                let mut c = Complex64::default();
                for j in 0..n_sites {
                    c += vectors[(j, k)].conj() * phi_hat[j];
                }
                for j in 0..n_sites {
                    out[j] += s * c * vectors[(j, k)];
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    // inverse transform over one centered period
    let period = centered_period(n_grid);
    let mut out_cells = vec![Vec::new()];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out_cells.len() * n_grid);
        for c in &out_cells {
            for &v in &period {
                let mut c2: Cell = c.clone();
                c2.push(v);
                next.push(c2);
            }
        }
        out_cells = next;
    }

    let rows: Vec<(Cell, Vec<Complex64>)> = out_cells
        .into_par_iter()
        .map(|cell| {
            let mut comps = vec![Complex64::default(); n_sites];
            for flat in 0..total {
                let idx = unflatten(flat);
                let phase: f64 = idx
                    .iter()
                    .zip(&cell)
                    .map(|(&k, &m)| k as f64 / n_grid as f64 * m as f64)
                    .sum();
                let e = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * phase);
                for j in 0..n_sites {
                    comps[j] += e * hatted[flat][j];
                }
            }
            (cell, comps)
        })
        .collect();

    let scale = 1.0 / total as f64;
    let mut out = CellFunction::new(n_sites);
    for (cell, comps) in rows {
        for (j, v) in comps.into_iter().enumerate() {
            let v = v * scale;
            if v.norm() > 1e-300 {
                out.set(cell.clone(), j, v);
            }
        }
    }
    Ok(out)
}

/// Spectral projection E_{H0}(I) applied fiber-wise.
pub fn band_filter(
    crystal: &TopologicalCrystal,
    phi: &CellFunction,
    interval: (f64, f64),
    n_grid: usize,
) -> Result<CellFunction> {
    apply_symbol(crystal, phi, n_grid, |lambda| {
        if interval.0 <= lambda && lambda <= interval.1 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::default()
        }
    })
}

/// exp(-i H0 t) E_{H0}(I) applied fiber-wise (pass None to skip the filter).
pub fn free_evolve(
    crystal: &TopologicalCrystal,
    phi: &CellFunction,
    t: f64,
    interval: Option<(f64, f64)>,
    n_grid: usize,
) -> Result<CellFunction> {
    apply_symbol(crystal, phi, n_grid, |lambda| {
        if let Some((a, b)) = interval {
            if lambda < a || lambda > b {
                return Complex64::default();
            }
        }
        Complex64::from_polar(1.0, -lambda * t)
    })
}

/// Bessel functions J_0(z)..J_k_max(z) for z >= 0 by Miller's downward
/// recurrence with the normalization J_0 + 2 sum J_{2k} = 1.
pub fn bessel_j_sequence(z: f64, k_max: usize) -> Vec<f64> {
    assert!(z >= 0.0);
    if z == 0.0 {
        let mut out = vec![0.0; k_max + 1];
        out[0] = 1.0;
        return out;
    }
    let start = k_max + 20 + (z as usize) + (40.0 * (k_max as f64 + z).sqrt()) as usize;
    let mut j_up = 0.0f64; // J_{k+1}
    let mut j = 1e-300f64; // J_k
    let mut out = vec![0.0; k_max + 1];
    let mut norm = 0.0f64;
    for k in (0..=start).rev() {
        // now j = J_{k}, j_up = J_{k+1}; step to J_{k-1}
        if k <= k_max {
            out[k] = j;
        }
        if k % 2 == 0 {
            norm += if k == 0 { j } else { 2.0 * j };
        }
        let j_down = (2.0 * k as f64 / z) * j - j_up;
        j_up = j;
        j = j_down;
        if j.abs() > 1e250 {
            let s = 1e-250;
            j *= s;
            j_up *= s;
            norm *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    // the loop stepped one index too far: after k = 0 the values are shifted.
    // `out` and `norm` were recorded before stepping, so only rescale.
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// exp(-i A t) v by the Chebyshev expansion
/// exp(-i a t) sum_k (2 - delta_{k0}) (-i sgn(t))^k J_k(b |t|) T_k((A-a)/b) v
/// with [a-b, a+b] a Gershgorin enclosure of spec(A). Refuses (rather than
/// silently truncates) when the needed polynomial degree exceeds
/// `max_degree`.
pub fn chebyshev_evolve(
    section: &FiniteSection,
    v: &[Complex64],
    t: f64,
    max_degree: usize,
) -> Result<Vec<Complex64>> {
    let (lo, hi) = section.spectral_bounds();
    let a = 0.5 * (hi + lo);
    let b = 0.5 * (hi - lo);
    let phase = Complex64::from_polar(1.0, -a * t);
    if b == 0.0 || t == 0.0 {
        return Ok(v.iter().map(|x| x * phase).collect());
    }
    let z = b * t.abs();
    let degree = (z + 12.0 * z.cbrt() + 40.0).ceil() as usize;
    if degree > max_degree {
        return Err(Error::DegreeExceeded { required: degree, max: max_degree });
    }
    let bessel = bessel_j_sequence(z, degree);
    let unit = if t >= 0.0 {
        Complex64::new(0.0, -1.0)
    } else {
        Complex64::new(0.0, 1.0)
    };

    let n = v.len();
    let scaled_matvec = |x: &[Complex64]| -> Vec<Complex64> {
        let ax = section.matvec(x);
        (0..n).map(|i| (ax[i] - a * x[i]) / b).collect()
    };

    let mut t_prev: Vec<Complex64> = v.to_vec(); // T_0 v
    let mut t_cur = scaled_matvec(&t_prev); // T_1 v
    let mut acc: Vec<Complex64> = (0..n)
        .map(|i| bessel[0] * t_prev[i] + 2.0 * bessel[1] * unit * t_cur[i])
        .collect();
    let mut ik = unit;
    for k in 2..=degree {
        ik *= unit;
        let ax = scaled_matvec(&t_cur);
        let t_next: Vec<Complex64> = (0..n).map(|i| 2.0 * ax[i] - t_prev[i]).collect();
        let c = 2.0 * bessel[k] * ik;
        for i in 0..n {
            acc[i] += c * t_next[i];
        }
        t_prev = t_cur;
        t_cur = t_next;
    }
    Ok(acc.into_iter().map(|x| x * phase).collect())
}

/// A smooth wave packet on Z^1: the inverse transform of a C-infinity bump
/// supported on the xi window, hence with superalgebraically decaying tails
/// in position. Normalized in l^2.
pub fn smooth_packet_1d(xi_window: (f64, f64), n_grid: usize) -> Result<CellFunction> {
    let (lo, hi) = xi_window;
    if !(lo < hi) || hi - lo >= 1.0 {
        return Err(Error::InvalidParameter("bad xi window".into()));
    }
    let bump = |xi: f64| -> f64 {
        // evaluate on the torus representative closest to the window center
        let center = 0.5 * (lo + hi);
        let mut x = xi;
        while x - center > 0.5 {
            x -= 1.0;
        }
        while center - x > 0.5 {
            x += 1.0;
        }
        let u = (2.0 * x - (lo + hi)) / (hi - lo);
        if u.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - u * u)).exp()
        }
    };
    let mut out = CellFunction::new(1);
    let period = centered_period(n_grid);
    for &mu in &period {
        let mut acc = Complex64::default();
        for k in 0..n_grid {
            let xi = k as f64 / n_grid as f64;
            let g = bump(xi);
            if g == 0.0 {
                continue;
            }
            acc += g * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * xi * mu as f64);
        }
        let v = acc / n_grid as f64;
        if v.norm() > 1e-300 {
            out.set(vec![mu], 0, v);
        }
    }
    let norm = out.norm();
    if norm == 0.0 {
        return Err(Error::InvalidParameter("empty packet".into()));
    }
    let mut normalized = CellFunction::new(1);
    for (cell, comps) in out.iter() {
        normalized.set(cell.clone(), 0, comps[0] / norm);
    }
    Ok(normalized)
}

/// Largest group velocity (in cells per unit time) over the sampled bands,
/// from finite differences of the band functions along each axis.
pub fn max_group_velocity(crystal: &TopologicalCrystal, n_per_axis: usize) -> Result<f64> {
    let bs = sample_bands(crystal.quotient(), n_per_axis)?;
    let total = bs.grid_points();
    let mut vmax = 0.0f64;
    for flat in 0..total {
        let idx = bs.unflatten(flat);
        for axis in 0..bs.dimension {
            let mut next = idx.clone();
            next[axis] = (next[axis] + 1) % bs.n_per_axis;
            let nflat = bs.flatten(&next);
            for band in 0..bs.n_sites {
                let dlambda = (bs.bands[nflat][band] - bs.bands[flat][band]).abs();
                vmax = vmax.max(dlambda * bs.n_per_axis as f64 / (2.0 * std::f64::consts::PI));
            }
        }
    }
    Ok(vmax)
}

#[derive(Debug, Clone)]
pub struct WaveProbeOptions {
    /// Spectral interval I for the filter E_{H0}(I).
    pub interval: (f64, f64),
    /// Support window of the fiber bump; its band image must lie inside I.
    pub xi_window: (f64, f64),
    /// Probe times T; the probe compares w(2T) against w(T).
    pub t_values: Vec<f64>,
    /// Section half-width; None picks r_packet + vmax * 2 T_max + padding.
    pub half_width: Option<i64>,
    /// Relative l^2 mass allowed near the section boundary.
    pub boundary_limit: f64,
    pub max_degree: usize,
    pub max_dim: usize,
}

impl Default for WaveProbeOptions {
    fn default() -> Self {
        WaveProbeOptions {
            interval: (1.0, 3.0),
            xi_window: (0.19, 0.31),
            t_values: vec![10.0, 20.0, 40.0, 80.0],
            half_width: None,
            boundary_limit: 1e-6,
            max_degree: 20_000,
            max_dim: DEFAULT_MAX_SECTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WaveProbeReport {
    pub t_values: Vec<f64>,
    /// ||w(2T) - w(T)|| per probe time.
    pub cauchy_norms: Vec<f64>,
    pub wave_norms: Vec<f64>,
    /// Relative free-wave mass outside the section box, per evolved time.
    pub boundary_masses: Vec<f64>,
    pub half_width: i64,
    pub n_grid: usize,
}

/// Probes convergence of exp(i H T) J exp(-i H0 T) E_{H0}(I) psi along a
/// dyadic time sequence. Decreasing Cauchy differences ||w(2T) - w(T)|| are
/// the numerical signature of the wave operator existing on E_{H0}(I).
///
/// Implemented for crystals with a single site per cell in dimension one
/// (the free half is built from an explicit smooth in-band packet).
pub fn wave_probe(pg: &PerturbedGraph, opts: &WaveProbeOptions) -> Result<WaveProbeReport> {
    let crystal = &pg.crystal;
    if crystal.dimension() != 1 || crystal.n_sites() != 1 {
        return Err(Error::InvalidParameter(
            "wave probe needs a one-site crystal in dimension one".into(),
        ));
    }
    let t_max = opts
        .t_values
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);

    // pick the box from the light cone plus the packet's own tail radius
    let vmax = max_group_velocity(crystal, 256)?;
    let half_width = match opts.half_width {
        Some(l) => l,
        None => {
            // smooth bumps decay like exp(-c sqrt(mu)); measure where the
            // tail mass actually drops below the probe's error floor
            let probe = smooth_packet_1d(opts.xi_window, 4096)?;
            let mut by_radius: Vec<(i64, f64)> = probe
                .iter()
                .map(|(cell, comps)| (cell_norm_inf(cell), comps[0].norm_sqr()))
                .collect();
            by_radius.sort_by_key(|(r, _)| std::cmp::Reverse(*r));
            let mut tail = 0.0;
            let mut r_needed = 0i64;
            for (r, m) in by_radius {
                tail += m;
                if tail > 1e-22 {
                    r_needed = r + 1;
                    break;
                }
            }
            (vmax * 2.0 * t_max).ceil() as i64 + r_needed + 32
        }
    };
    let n_grid = ((2 * half_width + 2) as usize).next_power_of_two();

    let psi = smooth_packet_1d(opts.xi_window, n_grid)?;
    let psi = band_filter(crystal, &psi, opts.interval, n_grid)?;

    let pg_eff = pg.clone().with_enum_radius(pg.enum_radius.max(half_width));
    let section = FiniteSection::new(&pg_eff, half_width, opts.max_dim)?;

    let mut evolve_times: Vec<f64> = Vec::new();
    for &t in &opts.t_values {
        for cand in [t, 2.0 * t] {
            if !evolve_times.iter().any(|&u| (u - cand).abs() < 1e-12) {
                evolve_times.push(cand);
            }
        }
    }

    let mut waves: Vec<(f64, Vec<Complex64>)> = Vec::new();
    let mut boundary_masses = Vec::new();
    for &t in &evolve_times {
        let free = free_evolve(crystal, &psi, t, Some(opts.interval), n_grid)?;
        let total: f64 = free.iter().flat_map(|(_, c)| c.iter()).map(|z| z.norm_sqr()).sum();
        let outside: f64 = free
            .iter()
            .filter(|(cell, _)| cell_norm_inf(cell) > half_width)
            .flat_map(|(_, c)| c.iter())
            .map(|z| z.norm_sqr())
            .sum();
        let mass = if total == 0.0 { 0.0 } else { outside / total };
        if mass > opts.boundary_limit {
            return Err(Error::BoundaryContaminated {
                mass,
                limit: opts.boundary_limit,
                l: half_width,
            });
        }
        boundary_masses.push(mass);

        let grid = free.to_grid(crystal);
        let j_grid = pg_eff.j_apply(&grid);
        let coeffs = section.project(&pg_eff, &j_grid);
        // exp(+i H t) on the section
        let w = chebyshev_evolve(&section, &coeffs, -t, opts.max_degree)?;
        waves.push((t, w));
    }

    let wave_at = |t: f64| -> &Vec<Complex64> {
        &waves
            .iter()
            .find(|(u, _)| (u - t).abs() < 1e-12)
            .expect("time was evolved")
            .1
    };
    let mut cauchy_norms = Vec::new();
    let mut wave_norms = Vec::new();
    for &t in &opts.t_values {
        let w1 = wave_at(t);
        let w2 = wave_at(2.0 * t);
        let diff: f64 = w1
            .iter()
            .zip(w2)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        cauchy_norms.push(diff);
        wave_norms.push(w1.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
    }

    Ok(WaveProbeReport {
        t_values: opts.t_values.clone(),
        cauchy_norms,
        wave_norms,
        boundary_masses,
        half_width,
        n_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::lattice_zd;
    use crate::perturbation::hub_example;

    fn z1_section(l: i64) -> FiniteSection {
        let pg = PerturbedGraph::unperturbed(lattice_zd(1));
        FiniteSection::new(&pg, l, DEFAULT_MAX_SECTION).unwrap()
    }

    #[test]
    fn z1_section_eigenvalues_are_cosines() {
        // compression of the free operator to n points (with full-degree
        // diagonal) is the Dirichlet discrete Laplacian plus 2 on the
        // diagonal: eigenvalues 2 - 2 cos(k pi / (n+1)).
        let l = 24i64;
        let section = z1_section(l);
        let n = section.dim();
        let eigen = eigensolve_section(&section).unwrap();
        for (k, &v) in eigen.values.iter().enumerate() {
            let expected =
                2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - expected).abs() < 1e-10, "k={k} v={v} expected={expected}");
        }
    }

    #[test]
    fn section_spectrum_stays_in_band_hull() {
        let section = z1_section(40);
        let eigen = eigensolve_section(&section).unwrap();
        assert!(eigen.values.iter().all(|&v| (-1e-10..=4.0 + 1e-10).contains(&v)));
        let (lo, hi) = section.spectral_bounds();
        assert!(lo <= 0.0 && hi >= 4.0);
    }

    #[test]
    fn rank_one_potential_bump_detaches_one_eigenvalue() {
        let mut pg = PerturbedGraph::unperturbed(lattice_zd(1));
        pg.potential_overrides.insert(Vertex::new(0, vec![0]), 5.0);
        let section = FiniteSection::new(&pg, 64, DEFAULT_MAX_SECTION).unwrap();
        let eigen = eigensolve_section(&section).unwrap();
        let above = count_localized_in(&section, &eigen, 4.0 + 1e-6, 100.0, 0.9);
        assert_eq!(above, 1);
    }

    #[test]
    fn bessel_matches_known_values() {
        // J_0(1), J_1(1), J_5(2) to published 1e-10 accuracy
        let b1 = bessel_j_sequence(1.0, 6);
        assert!((b1[0] - 0.7651976865579666).abs() < 1e-12);
        assert!((b1[1] - 0.4400505857449335).abs() < 1e-12);
        let b2 = bessel_j_sequence(2.0, 6);
        assert!((b2[5] - 0.007039629755871685).abs() < 1e-12);
        // normalization identity J_0 + 2 sum_{k even} J_k = 1
        let bs = bessel_j_sequence(13.7, 60);
        let s = bs[0] + 2.0 * (2..=58).step_by(2).map(|k| bs[k]).sum::<f64>();
        assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn chebyshev_matches_dense_oracle() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let section = z1_section(30);
        let eigen = eigensolve_section(&section).unwrap();
        let n = section.dim();
        let mut rng = StdRng::seed_from_u64(5);
        let v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        for t in [0.5, 3.0, -7.0] {
            let fast = chebyshev_evolve(&section, &v, t, 20_000).unwrap();
            let slow = apply_by_eigen(&eigen, &v, |l| Complex64::from_polar(1.0, -l * t));
            let err: f64 = fast
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-10, "t={t} err={err}");
            // unitarity
            let n_in: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let n_out: f64 = fast.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((n_in - n_out).abs() < 1e-10);
        }
    }

    #[test]
    fn chebyshev_refuses_excessive_degree() {
        let section = z1_section(10);
        let v = vec![Complex64::new(1.0, 0.0); section.dim()];
        match chebyshev_evolve(&section, &v, 1e6, 100) {
            Err(Error::DegreeExceeded { .. }) => {}
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn band_filter_is_idempotent_and_selective() {
        let crystal = lattice_zd(1);
        let mut phi = CellFunction::new(1);
        phi.set(vec![0], 0, Complex64::new(1.0, 0.0));
        let n_grid = 128;
        let once = band_filter(&crystal, &phi, (1.0, 3.0), n_grid).unwrap();
        let twice = band_filter(&crystal, &once, (1.0, 3.0), n_grid).unwrap();
        assert!(twice.sub(&once).norm() < 1e-12);
        // filtering onto the whole band is the identity
        let all = band_filter(&crystal, &phi, (-1.0, 5.0), n_grid).unwrap();
        assert!(all.sub(&phi).norm() < 1e-12);
        // complementary filters add to the identity
        let rest = band_filter(&crystal, &phi, (3.0, 5.0), n_grid).unwrap();
        let low = band_filter(&crystal, &phi, (-1.0, 1.0 - 1e-12), n_grid).unwrap();
        let total = {
            let mut acc = once.clone();
            for (cell, comps) in low.iter() {
                for (j, v) in comps.iter().enumerate() {
                    acc.add_to(cell.clone(), j, *v);
                }
            }
            for (cell, comps) in rest.iter() {
                for (j, v) in comps.iter().enumerate() {
                    acc.add_to(cell.clone(), j, *v);
                }
            }
            acc
        };
        assert!(total.sub(&phi).norm() < 1e-10);
    }

    #[test]
    fn free_evolution_preserves_norm_and_matches_section_oracle() {
        let crystal = lattice_zd(1);
        let n_grid = 512;
        let mut psi = CellFunction::new(1);
        psi.set(vec![0], 0, Complex64::new(1.0, 0.0));
        let t = 6.0;
        let evolved = free_evolve(&crystal, &psi, t, None, n_grid).unwrap();
        assert!((evolved.norm() - 1.0).abs() < 1e-10);

        // compare against Chebyshev evolution on a large section: a delta
        // spreads at most superexponentially beyond the light cone |mu| = 2t
        let pg = PerturbedGraph::unperturbed(crystal.clone());
        let section = FiniteSection::new(&pg, 120, DEFAULT_MAX_SECTION).unwrap();
        let coeffs = section.project(&pg, &psi.to_grid(&crystal));
        let w = chebyshev_evolve(&section, &coeffs, t, 20_000).unwrap();
        let evolved_coeffs = section.project(&pg, &evolved.to_grid(&crystal));
        let err: f64 = w
            .iter()
            .zip(&evolved_coeffs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-8, "err={err}");
    }

    #[test]
    fn smooth_packet_decays_superalgebraically() {
        let psi = smooth_packet_1d((0.19, 0.31), 1024).unwrap();
        let tail = |r: i64| -> f64 {
            psi.iter()
                .filter(|(cell, _)| cell_norm_inf(cell) > r)
                .flat_map(|(_, c)| c.iter())
                .map(|z| z.norm_sqr())
                .sum()
        };
        let m200 = tail(200);
        let m400 = tail(400);
        assert!(m200 < 1e-6, "tail mass at 200: {m200}");
        // much faster than any 1/poly: two octaves cut at least 1e3
        assert!(m400 < 1e-3 * m200, "tails {m200} -> {m400}");
    }

    #[test]
    fn group_velocity_of_z1_is_two() {
        let v = max_group_velocity(&lattice_zd(1), 512).unwrap();
        assert!((v - 2.0).abs() < 0.05, "vmax = {v}");
    }

    #[test]
    fn trivial_perturbation_has_tiny_cauchy_differences() {
        let pg = PerturbedGraph::unperturbed(lattice_zd(1));
        let opts = WaveProbeOptions {
            t_values: vec![2.0, 4.0],
            ..WaveProbeOptions::default()
        };
        let report = wave_probe(&pg, &opts).unwrap();
        for c in &report.cauchy_norms {
            assert!(*c < 1e-10, "cauchy {c}");
        }
    }

    #[test]
    fn hub_cauchy_differences_decrease() {
        let pg = hub_example(1, -4.0, 1.0).unwrap();
        let opts = WaveProbeOptions {
            t_values: vec![4.0, 8.0, 16.0],
            ..WaveProbeOptions::default()
        };
        let report = wave_probe(&pg, &opts).unwrap();
        for w in report.cauchy_norms.windows(2) {
            assert!(w[1] < w[0], "{:?}", report.cauchy_norms);
        }
    }
}
