//! Simulator for the Kompaneets equation in photon-number-density form.
//!
//! The equation solved is `∂_t n = ∂_x J` on `x ∈ (0, R)` with
//! `J(x, n) = x² ∂_x n + (x² − 2x) n + n²` (the photon flux to the left),
//! a no-flux condition at the right boundary and no imposed condition at
//! `x = 0`. Photons leave the domain through an outflux `n_t(0)²` at zero
//! energy, which is the discrete stand-in for Bose–Einstein condensation.
//!
//! The crate is organised as
//!
//! * [`grid`] — non-uniform geometric meshes refined towards `x = 0`,
//! * [`analytic`] — closed-form objects: Bose–Einstein equilibria,
//!   stationary super-solutions, entropy/dissipation functionals, slope and
//!   onset bounds,
//! * [`solver`] — the semi-implicit upwind time stepper,
//! * [`diagnostics`] — runtime monitors: loss accounting, onset detection,
//!   entropy balance, equilibrium fitting, paired-run contraction and
//!   comparison checks,
//! * [`cli`] — configuration parsing and the scenario runner behind the
//!   `simulate` binary.
//!
//! All numerical kernels are generic over the floating-point scalar (see
//! [`scalar::Scalar`]); the type aliases below fix `f64`, which is what the
//! command-line tool and the test suite use.

pub mod analytic;
pub mod cli;
pub mod diagnostics;
pub mod grid;
pub mod scalar;
pub mod solver;

pub use scalar::Scalar;

/// `f64` mesh.
pub type Mesh64 = grid::Mesh<f64>;
/// `f32` mesh.
pub type Mesh32 = grid::Mesh<f32>;
/// `f64` solution profile.
pub type Profile64 = solver::Profile<f64>;
/// `f64` scheme configuration.
pub type SchemeConfig64 = solver::SchemeConfig<f64>;
/// `f64` run record.
pub type RunRecord64 = diagnostics::RunRecord<f64>;
