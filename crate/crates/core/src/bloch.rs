//! Floquet-Bloch analysis of the periodic operator: fiber matrices h0(xi),
//! band structure, spectrum as a union of intervals, approximate thresholds,
//! and the unitary identifications between l^2(X, m0) and L^2(T^d; C^n).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::crystal::{QuotientGraph, TopologicalCrystal};
use crate::error::{Error, Result};
use crate::graph::GridFunction;

/// The n x n Bloch fiber at a point of the torus.
#[derive(Debug, Clone)]
pub struct FiberMatrix {
    pub xi: Vec<f64>,
    pub matrix: DMatrix<Complex64>,
}

fn phase(xi: &[f64], eta: &[i64]) -> Complex64 {
    let arg: f64 = 2.0 * PI * xi.iter().zip(eta).map(|(x, e)| x * *e as f64).sum::<f64>();
    Complex64::new(arg.cos(), arg.sin())
}

/// Assembles h0(xi). Both orientations of each quotient edge contribute, so
/// the result is Hermitian by construction:
///
///   h0(xi)_{jl} = -sum_{e=(x_j, x_l)} m0(e) / (m0(x_j)^{1/2} m0(x_l)^{1/2})
///                 e^{2 pi i xi . eta(e)}  +  (deg_{m0}(x_j) + R0(x_j)) delta_{jl}.
pub fn assemble_fiber(q: &QuotientGraph, xi: &[f64]) -> FiberMatrix {
    let n = q.n_sites();
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for e in &q.edges {
        let coeff = e.weight / (q.vertex_weights[e.origin] * q.vertex_weights[e.terminus]).sqrt();
        let ph = phase(xi, &e.index);
        m[(e.origin, e.terminus)] -= coeff * ph;
        m[(e.terminus, e.origin)] -= coeff * ph.conj();
    }
    for j in 0..n {
        m[(j, j)] += Complex64::new(q.site_degree(j) + q.potentials[j], 0.0);
    }
    FiberMatrix { xi: xi.to_vec(), matrix: m }
}

/// Analytic derivative of h0 along one torus axis; used by finite-difference
/// cross-checks and by Lipschitz estimates for band continuity.
pub fn fiber_gradient(q: &QuotientGraph, xi: &[f64], axis: usize) -> DMatrix<Complex64> {
    let n = q.n_sites();
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for e in &q.edges {
        let coeff = e.weight / (q.vertex_weights[e.origin] * q.vertex_weights[e.terminus]).sqrt();
        let ph = phase(xi, &e.index);
        let factor = Complex64::new(0.0, 2.0 * PI * e.index[axis] as f64);
        m[(e.origin, e.terminus)] -= coeff * factor * ph;
        m[(e.terminus, e.origin)] -= coeff * (factor * ph).conj();
    }
    m
}

pub fn hermitian_deviation(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Dense Hermitian eigendecomposition: eigenvalues ascending, columns of the
/// returned matrix are the matching orthonormal eigenvectors.
pub fn eig_fiber(fiber: &FiberMatrix) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    eig_hermitian(&fiber.matrix)
}

pub fn eig_hermitian(m: &DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let tolerance = 1e-13;
    let deviation = hermitian_deviation(m) / scale;
    if deviation > tolerance {
        return Err(Error::NotHermitian { deviation, tolerance });
    }
    // Symmetrize to kill rounding-level asymmetry before factorizing.
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Sampled eigenvalue surfaces over a tensor grid on T^d.
#[derive(Debug, Clone)]
pub struct BandStructure {
    pub dimension: usize,
    pub n_per_axis: usize,
    pub n_sites: usize,
    /// `bands[flat_index]` holds the sorted eigenvalues at that grid point.
    pub bands: Vec<Vec<f64>>,
}

impl BandStructure {
    pub fn grid_points(&self) -> usize {
        self.n_per_axis.pow(self.dimension as u32)
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dimension];
        for a in 0..self.dimension {
            idx[a] = flat % self.n_per_axis;
            flat /= self.n_per_axis;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for a in (0..self.dimension).rev() {
            flat = flat * self.n_per_axis + idx[a] % self.n_per_axis;
        }
        flat
    }

    pub fn xi_at(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&k| k as f64 / self.n_per_axis as f64).collect()
    }
}

/// Samples all band functions on the N^d tensor grid xi_k = k/N.
pub fn sample_bands(q: &QuotientGraph, n_per_axis: usize) -> Result<BandStructure> {
    if n_per_axis < 2 {
        return Err(Error::InvalidParameter("grid must have at least 2 points per axis".into()));
    }
    let d = q.dimension;
    let total = n_per_axis.pow(d as u32);
    let bands: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rest = flat;
            let mut xi = vec![0.0; d];
            for x in xi.iter_mut() {
                *x = (rest % n_per_axis) as f64 / n_per_axis as f64;
                rest /= n_per_axis;
            }
            let fiber = assemble_fiber(q, &xi);
            let (values, _) = eig_hermitian(&fiber.matrix).expect("h0 is Hermitian");
            values
        })
        .collect();
    Ok(BandStructure { dimension: d, n_per_axis, n_sites: q.n_sites(), bands })
}

/// Union of the sampled band ranges, merged into disjoint closed intervals.
pub fn spectrum_h0(bs: &BandStructure) -> Vec<(f64, f64)> {
    let mut intervals: Vec<(f64, f64)> = (0..bs.n_sites)
        .map(|j| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for point in &bs.bands {
                lo = lo.min(point[j]);
                hi = hi.max(point[j]);
            }
            (lo, hi)
        })
        .collect();
    intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in intervals {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

/// Detected critical values of the band functions plus all band edges,
/// deduplicated within the tolerance. This approximates the threshold set;
/// it is reported as a lower approximation of the exact stratification-based
/// set.
#[derive(Debug, Clone)]
pub struct ThresholdEstimate {
    pub values: Vec<f64>,
    pub tolerance: f64,
}

impl ThresholdEstimate {
    /// Distance from the interval [a, b] to the nearest estimated threshold
    /// (0 if one lies inside).
    pub fn distance_to_interval(&self, a: f64, b: f64) -> f64 {
        self.values
            .iter()
            .map(|&t| {
                if t < a {
                    a - t
                } else if t > b {
                    t - b
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn estimate_thresholds(bs: &BandStructure, tolerance: f64) -> ThresholdEstimate {
    let mut values: Vec<f64> = Vec::new();
    let total = bs.grid_points();
    for j in 0..bs.n_sites {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for flat in 0..total {
            let v = bs.bands[flat][j];
            lo = lo.min(v);
            hi = hi.max(v);
            let idx = bs.unflatten(flat);
            let mut critical = true;
            for a in 0..bs.dimension {
                let mut fwd = idx.clone();
                fwd[a] = (idx[a] + 1) % bs.n_per_axis;
                let mut bwd = idx.clone();
                bwd[a] = (idx[a] + bs.n_per_axis - 1) % bs.n_per_axis;
                let df = bs.bands[bs.flatten(&fwd)][j] - v;
                let db = v - bs.bands[bs.flatten(&bwd)][j];
                let small = df.abs() <= tolerance && db.abs() <= tolerance;
                if df * db > 0.0 && !small {
                    critical = false;
                    break;
                }
            }
            if critical {
                values.push(v);
            }
        }
        values.push(lo);
        values.push(hi);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut dedup: Vec<f64> = Vec::new();
    for v in values {
        match dedup.last() {
            Some(&last) if (v - last).abs() <= tolerance => {}
            _ => dedup.push(v),
        }
    }
    ThresholdEstimate { values: dedup, tolerance }
}

/// The Floquet transform (U f)(xi) in l^2 of the quotient sites:
/// component j is sum_mu e^{-2 pi i xi . mu} f((j, mu)).
pub fn floquet_transform(f: &GridFunction, xi: &[f64], n_sites: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); n_sites];
    for (x, v) in f.iter() {
        let arg: f64 =
            -2.0 * PI * xi.iter().zip(&x.cell).map(|(a, b)| a * *b as f64).sum::<f64>();
        out[x.site] += Complex64::new(arg.cos(), arg.sin()) * v;
    }
    out
}

/// The composition I o U: component j additionally scaled by m0(x_j)^{1/2},
/// mapping into C^n with the standard inner product.
pub fn floquet_weighted(q: &QuotientGraph, f: &GridFunction, xi: &[f64]) -> Vec<Complex64> {
    let mut out = floquet_transform(f, xi, q.n_sites());
    for (j, v) in out.iter_mut().enumerate() {
        *v *= q.vertex_weights[j].sqrt();
    }
    out
}

/// Residual of the unitary equivalence at one fiber:
/// || (I U H0 f)(xi) - h0(xi) (I U f)(xi) ||.
pub fn verify_fiber_equivalence(crystal: &TopologicalCrystal, f: &GridFunction, xi: &[f64]) -> f64 {
    use crate::crystal::CrystalOperator;
    use crate::graph::schrodinger_apply;
    let q = crystal.quotient();
    let op = CrystalOperator { crystal };
    let hf = schrodinger_apply(&op, f);
    let lhs = floquet_weighted(q, &hf, xi);
    let v = floquet_weighted(q, f, xi);
    let fiber = assemble_fiber(q, xi);
    let n = q.n_sites();
    let mut residual = 0.0f64;
    for j in 0..n {
        let mut row = Complex64::default();
        for l in 0..n {
            row += fiber.matrix[(j, l)] * v[l];
        }
        residual += (lhs[j] - row).norm_sqr();
    }
    residual.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{lattice_zd, toblerone};
    use crate::graph::Vertex;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn z1_fiber_is_two_minus_two_cos() {
        let z1 = lattice_zd(1);
        for &xi in &[0.0, 0.25, 0.5, 0.37] {
            let fiber = assemble_fiber(z1.quotient(), &[xi]);
            let expected = 2.0 - 2.0 * (2.0 * PI * xi).cos();
            assert!((fiber.matrix[(0, 0)].re - expected).abs() < 1e-14);
            assert!(fiber.matrix[(0, 0)].im.abs() < 1e-14);
        }
        let at_half = assemble_fiber(z1.quotient(), &[0.5]);
        assert!((at_half.matrix[(0, 0)].re - 4.0).abs() < 1e-14);
    }

    #[test]
    fn z2_fiber_at_zero_vanishes() {
        let z2 = lattice_zd(2);
        let fiber = assemble_fiber(z2.quotient(), &[0.0, 0.0]);
        assert!(fiber.matrix[(0, 0)].norm() < 1e-14);
    }

    #[test]
    fn toblerone_fiber_and_eigenvalues() {
        let tob = toblerone();
        for &xi in &[0.0, 0.21, 0.5] {
            let fiber = assemble_fiber(tob.quotient(), &[xi]);
            let diag = 4.0 - 2.0 * (2.0 * PI * xi).cos();
            for j in 0..3 {
                assert!((fiber.matrix[(j, j)].re - diag).abs() < 1e-13);
                for l in 0..3 {
                    if j != l {
                        assert!((fiber.matrix[(j, l)] - Complex64::new(-1.0, 0.0)).norm() < 1e-13);
                    }
                }
            }
            let (vals, _) = eig_fiber(&fiber).unwrap();
            let low = 2.0 - 2.0 * (2.0 * PI * xi).cos();
            let high = 5.0 - 2.0 * (2.0 * PI * xi).cos();
            assert!((vals[0] - low).abs() < 1e-12);
            assert!((vals[1] - high).abs() < 1e-12);
            assert!((vals[2] - high).abs() < 1e-12);
        }
    }

    #[test]
    fn toblerone_fiber_at_zero_spectrum() {
        // h0(0) = [[2,-1,-1],[-1,2,-1],[-1,-1,2]] has eigenvalues {0, 3, 3}.
        let tob = toblerone();
        let fiber = assemble_fiber(tob.quotient(), &[0.0]);
        let (vals, _) = eig_fiber(&fiber).unwrap();
        assert!((vals[0] - 0.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eig_diagonal_and_reconstruction() {
        let m = DMatrix::<Complex64>::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(3.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.5, 0.0),
        ]));
        let (vals, _) = eig_hermitian(&m).unwrap();
        assert_eq!(vals, vec![-1.0, 0.5, 3.0]);

        let mut rng = StdRng::seed_from_u64(7);
        let n = 5;
        let mut a = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                if i == j {
                    a[(i, i)] = Complex64::new(z.re, 0.0);
                } else {
                    a[(i, j)] = z;
                    a[(j, i)] = z.conj();
                }
            }
        }
        let (vals, vecs) = eig_hermitian(&a).unwrap();
        let lambda = DMatrix::<Complex64>::from_diagonal(&nalgebra::DVector::from_vec(
            vals.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>(),
        ));
        let recon = &vecs * lambda * vecs.adjoint();
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let resid = (&a - recon).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(resid <= 1e-10 * scale);
        let gram = vecs.adjoint() * &vecs;
        let id = DMatrix::<Complex64>::identity(n, n);
        assert!((gram - id).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-10);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = DMatrix::<Complex64>::zeros(2, 2);
        m[(0, 1)] = Complex64::new(1.0, 0.0);
        m[(1, 0)] = Complex64::new(2.0, 0.0);
        assert!(eig_hermitian(&m).is_err());
    }

    #[test]
    fn band_unions() {
        let z1 = lattice_zd(1);
        let bs = sample_bands(z1.quotient(), 512).unwrap();
        let spec = spectrum_h0(&bs);
        assert_eq!(spec.len(), 1);
        assert!((spec[0].0 - 0.0).abs() < 1e-4 && (spec[0].1 - 4.0).abs() < 1e-4);

        let tob = toblerone();
        let bs = sample_bands(tob.quotient(), 256).unwrap();
        let spec = spectrum_h0(&bs);
        // [0,4] and [3,7] merge into [0,7]
        assert_eq!(spec.len(), 1);
        assert!((spec[0].0 - 0.0).abs() < 1e-3 && (spec[0].1 - 7.0).abs() < 1e-3);
    }

    #[test]
    fn refinement_containment() {
        let tob = toblerone();
        let coarse = spectrum_h0(&sample_bands(tob.quotient(), 64).unwrap());
        let fine = spectrum_h0(&sample_bands(tob.quotient(), 128).unwrap());
        // the finer grid can only widen the sampled union
        for (lo, hi) in coarse {
            assert!(fine.iter().any(|&(a, b)| a <= lo + 1e-9 && hi <= b + 1e-9));
        }
    }

    #[test]
    fn thresholds_of_examples() {
        let z1 = lattice_zd(1);
        let t = estimate_thresholds(&sample_bands(z1.quotient(), 512).unwrap(), 1e-6);
        assert_eq!(t.values.len(), 2);
        assert!((t.values[0] - 0.0).abs() < 1e-9 && (t.values[1] - 4.0).abs() < 1e-9);

        let z2 = lattice_zd(2);
        let t = estimate_thresholds(&sample_bands(z2.quotient(), 64).unwrap(), 1e-6);
        assert_eq!(t.values.len(), 3);
        assert!((t.values[0] - 0.0).abs() < 1e-9);
        assert!((t.values[1] - 4.0).abs() < 1e-9);
        assert!((t.values[2] - 8.0).abs() < 1e-9);

        let tob = toblerone();
        let t = estimate_thresholds(&sample_bands(tob.quotient(), 256).unwrap(), 1e-6);
        assert_eq!(t.values.len(), 4);
        for (got, want) in t.values.iter().zip(&[0.0, 3.0, 4.0, 7.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn floquet_of_deltas() {
        let f = GridFunction::delta(Vertex::new(0, vec![0, 0]));
        let v = floquet_transform(&f, &[0.3, 0.8], 1);
        assert!((v[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);

        let g = GridFunction::delta(Vertex::new(0, vec![2, -1]));
        let xi = [0.3, 0.8];
        let v = floquet_transform(&g, &xi, 1);
        let arg = -2.0 * PI * (0.3 * 2.0 - 0.8);
        assert!((v[0] - Complex64::new(arg.cos(), arg.sin())).norm() < 1e-14);
    }

    #[test]
    fn parseval_by_quadrature() {
        // sum m0 |f|^2 equals the trapezoid quadrature of |IUf|^2 on the torus.
        let tob = toblerone();
        let q = tob.quotient();
        let mut rng = StdRng::seed_from_u64(42);
        let mut f = GridFunction::new();
        for _ in 0..12 {
            let site = rng.random_range(0..3);
            let cell = vec![rng.random_range(-10..=10i64)];
            f.set(
                Vertex::new(site, cell),
                Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
            );
        }
        let lhs: f64 = f
            .iter()
            .map(|(x, v)| q.vertex_weights[x.site] * v.norm_sqr())
            .sum();
        let n = 64;
        let mut rhs = 0.0;
        for k in 0..n {
            let xi = [k as f64 / n as f64];
            let v = floquet_weighted(q, &f, &xi);
            rhs += v.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        rhs /= n as f64;
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.max(1.0));
    }

    #[test]
    fn fiber_equivalence_examples() {
        let z1 = lattice_zd(1);
        let f = GridFunction::delta(Vertex::new(0, vec![0]));
        assert!(verify_fiber_equivalence(&z1, &f, &[1.0 / 3.0]) <= 1e-12);

        let tob = toblerone();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let mut f = GridFunction::new();
            for _ in 0..6 {
                f.set(
                    Vertex::new(rng.random_range(0..3), vec![rng.random_range(-8..=8i64)]),
                    Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
                );
            }
            let xi = [rng.random::<f64>()];
            assert!(verify_fiber_equivalence(&tob, &f, &xi) <= 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let tob = toblerone();
        let q = tob.quotient();
        let xi = [0.2137];
        let h = 1e-5;
        let grad = fiber_gradient(q, &xi, 0);
        let plus = assemble_fiber(q, &[xi[0] + h]).matrix;
        let minus = assemble_fiber(q, &[xi[0] - h]).matrix;
        let fd = (plus - minus) / Complex64::new(2.0 * h, 0.0);
        let err = (&grad - fd).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-6, "gradient error {err}");
    }
}
