//! Kummer shape algebras of nonlinearly coupled harmonic oscillators.
//!
//! A resonance vector `l` and an invertible resonance matrix split the phase
//! space of `N + 1` oscillators into conserved actions `I_1 .. I_N` and one
//! active pair `(I_0, psi_0)`. Everything downstream lives on that reduced
//! space: the classical flow on the Kummer shape (a surface of revolution in
//! `(x, y, I_0)`), the quantum sector operators `A, A*, A_0` obeying
//! `A A* = G(A_0)`, the coherent states they generate, and the radial
//! measures that make those states a resolution of the identity.
//!
//! Module layout:
//!
//! * [`expr`] - small symbolic expression trees for couplings `g_0` and free
//!   Hamiltonians `h_0`, with exact differentiation and JSON serialization.
//! * [`algebra`] - resonance data, invariants, the structural polynomial
//!   `P_l` and the structural functions `G_0`, `G~_0`, `G_hbar`.
//! * [`classical`] - reduced equations of motion, quadrature of the level
//!   sets, angle reconstruction, Nambu-type brackets.
//! * [`quantum`] - sector Hilbert spaces, tridiagonal Hamiltonians, spectra,
//!   Heisenberg evolution, the q-deformed Weyl pair.
//! * [`coherent`] - coherent state families, reproducing kernels,
//!   hypergeometric closed forms, star products and their classical limits.
//! * [`measure`] - radial densities on the positive axis and moment checks
//!   for the resolution of the identity.
//! * [`presets`] - ready-made systems (Laguerre, Krawtchouk, q-Weyl,
//!   three-wave) with exact reference data where known.
//! * [`verify`] - the end-to-end cross-check battery used by the CLI.
//!
//! Numerical plumbing (tridiagonal eigensolver, adaptive Gauss-Kronrod,
//! Dormand-Prince 5(4), Bessel/Gamma/pFq evaluation) sits in [`tridiag`],
//! [`quad`], [`ode`] and [`special`].

pub mod algebra;
pub mod classical;
pub mod coherent;
pub mod error;
pub mod expr;
pub mod measure;
pub mod ode;
pub mod quad;
pub mod presets;
pub mod quantum;
pub mod special;
pub mod star;
pub mod tridiag;
pub mod verify;

pub use error::{KummerError, Result};

/// Default tolerances and sizes shared across the crate.
pub mod tol {
    /// Relative tolerance for identities that hold to machine precision
    /// (operator relations, exact moments, closed-form kernels).
    pub const ALGEBRAIC_REL: f64 = 1e-12;

    /// Relative tolerance for quantities obtained through integration
    /// (trajectories, periods, densities).
    pub const DYNAMICAL_REL: f64 = 1e-9;

    /// Default basis size for sectors with infinite-dimensional reduced
    /// space. Overridable per call and through `KUMMER_TRUNCATION` in the
    /// CLI.
    pub const DEFAULT_TRUNCATION: usize = 256;
}
