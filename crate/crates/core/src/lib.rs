//! Numerical toolkit for periodic Schrodinger operators on topological
//! crystals and their perturbation by infinitely many new edges.
//!
//! The layers, bottom up:
//!
//! * [`tail`] — certified intervals for truncated sums over infinite stars;
//! * [`graph`] — weighted graphs, the l^2(X, m) structure, H = -Delta + R;
//! * [`crystal`] — quotient graphs, their lazy Z^d lifts, a text format;
//! * [`bloch`] — Floquet-Bloch fibers, band structures, threshold estimates;
//! * [`perturbation`] — new/removed edges, measure and potential changes,
//!   the unitary J, the L+/L-/Z decomposition and decay-condition probes;
//! * [`spectral`] — finite sections, band filters, Chebyshev propagation and
//!   the wave-operator probe.

pub mod bloch;
pub mod crystal;
pub mod error;
pub mod graph;
pub mod perturbation;
pub mod spectral;
pub mod tail;

pub use error::{Error, Result};
pub use graph::{Cell, EdgeKey, GridFunction, OrientedEdge, Vertex, WeightedGraph};
pub use tail::{Interval, Summed};
