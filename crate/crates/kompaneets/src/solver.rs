//! Semi-implicit upwind time stepper for `∂_t n = ∂_x J`.
//!
//! The linear part of the flux, `J_lin = x² ∂_x n + (x² − 2x) n`, is
//! approximated at node `x_j` with left differences and treated implicitly;
//! the outer derivative is the forward difference `∂_x⁺`. The quadratic term
//! `n²` is handled either fully explicitly or with the lagged product
//! `n_{k+1} n_k` (semi-implicit). Row 0 discretises the boundary relation
//! `∂_x J_lin|₀ = −2 n(0)`, row `M` pins `n(R) = 0`. Each step is one
//! tridiagonal solve.

use crate::grid::Mesh;
use crate::scalar::{as_f64, lit, Scalar};
use std::io::{self, Write};
use std::sync::Arc;
use thiserror::Error;

/// Errors from stepping and initial-data construction.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("zero pivot at row {row} during tridiagonal elimination")]
    ZeroPivot { row: usize },
    #[error("non-finite state produced (time step too large?)")]
    NonFiniteState,
    #[error("step {step} failed at t = {time}: {source}")]
    StepFailed {
        step: usize,
        time: f64,
        #[source]
        source: Box<SolverError>,
    },
}

/// Treatment of the quadratic flux term `n²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    /// `∂_x⁺(n_k²)` on the right-hand side.
    ExplicitQuadratic,
    /// Lagged product `∂_x⁺(n_{k+1} n_k)` folded into the matrix.
    SemiImplicitProduct,
}

/// Time-stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig<S> {
    pub dt: S,
    pub nonlinearity: Nonlinearity,
    pub t_end: S,
    pub record_every: usize,
}

impl<S: Scalar> SchemeConfig<S> {
    pub fn new(
        dt: S,
        nonlinearity: Nonlinearity,
        t_end: S,
        record_every: usize,
    ) -> Result<Self, SolverError> {
        if !(dt > S::zero()) || !dt.is_finite() {
            return Err(SolverError::BadParams(format!(
                "time step must be positive and finite, got {}",
                as_f64(dt)
            )));
        }
        if t_end < S::zero() || !t_end.is_finite() {
            return Err(SolverError::BadParams(format!(
                "final time must be nonnegative and finite, got {}",
                as_f64(t_end)
            )));
        }
        if record_every == 0 {
            return Err(SolverError::BadParams(
                "recording stride must be at least 1".into(),
            ));
        }
        Ok(Self {
            dt,
            nonlinearity,
            t_end,
            record_every,
        })
    }

    /// Number of steps needed to reach `t_end` from `t = 0`.
    pub fn step_count(&self) -> usize {
        let ratio = as_f64(self.t_end) / as_f64(self.dt);
        // Guard against 2.0000000003 rounding up to 3 steps.
        (ratio - 1e-9).ceil().max(0.0) as usize
    }
}

/// Solution state: nodal density values at one instant.
#[derive(Debug, Clone)]
pub struct Profile<S> {
    mesh: Arc<Mesh<S>>,
    values: Vec<S>,
    time: S,
}

impl<S: Scalar> Profile<S> {
    pub fn new(mesh: Arc<Mesh<S>>, values: Vec<S>, time: S) -> Result<Self, SolverError> {
        if values.len() != mesh.node_count() {
            return Err(SolverError::LengthMismatch {
                expected: mesh.node_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteState);
        }
        Ok(Self { mesh, values, time })
    }

    pub fn mesh(&self) -> &Arc<Mesh<S>> {
        &self.mesh
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn time(&self) -> S {
        self.time
    }

    /// Boundary density `n(0)`, whose square is the photon outflux.
    pub fn boundary_value(&self) -> S {
        self.values[0]
    }

    pub fn max_value(&self) -> S {
        self.values.iter().fold(S::zero(), |a, v| a.max(*v))
    }

    pub fn min_value(&self) -> S {
        self.values
            .iter()
            .fold(S::infinity(), |a, v| a.min(*v))
    }

    /// `L¹` distance to another profile on the same mesh (trapezoid).
    pub fn l1_distance(&self, other: &Profile<S>) -> Result<S, SolverError> {
        if other.values.len() != self.values.len() {
            return Err(SolverError::LengthMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        let nodes = self.mesh.nodes();
        let half = lit::<S>(0.5);
        let mut acc = S::zero();
        for i in 1..nodes.len() {
            let a = (self.values[i - 1] - other.values[i - 1]).abs();
            let b = (self.values[i] - other.values[i]).abs();
            acc = acc + half * (a + b) * (nodes[i] - nodes[i - 1]);
        }
        Ok(acc)
    }

    /// Writes the profile as CSV with columns `x,n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,n")?;
        for (x, n) in self.mesh.nodes().iter().zip(&self.values) {
            writeln!(w, "{:.16e},{:.16e}", as_f64(*x), as_f64(*n))?;
        }
        Ok(())
    }
}

/// Tridiagonal linear system; bands are full-length with unused ends zero.
#[derive(Debug, Clone)]
pub struct TridiagonalSystem<S> {
    pub sub: Vec<S>,
    pub diag: Vec<S>,
    pub sup: Vec<S>,
    pub rhs: Vec<S>,
}

impl<S: Scalar> TridiagonalSystem<S> {
    pub fn zeros(len: usize) -> Self {
        Self {
            sub: vec![S::zero(); len],
            diag: vec![S::zero(); len],
            sup: vec![S::zero(); len],
            rhs: vec![S::zero(); len],
        }
    }

    /// Thomas algorithm: forward elimination, back substitution.
    pub fn solve(&self) -> Result<Vec<S>, SolverError> {
        let n = self.diag.len();
        let mut c = vec![S::zero(); n];
        let mut d = vec![S::zero(); n];
        let mut pivot = self.diag[0];
        if pivot == S::zero() {
            return Err(SolverError::ZeroPivot { row: 0 });
        }
        c[0] = self.sup[0] / pivot;
        d[0] = self.rhs[0] / pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.sub[i] * c[i - 1];
            if pivot == S::zero() {
                return Err(SolverError::ZeroPivot { row: i });
            }
            c[i] = self.sup[i] / pivot;
            d[i] = (self.rhs[i] - self.sub[i] * d[i - 1]) / pivot;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] = x[i] - c[i] * next;
        }
        Ok(x)
    }

    /// Number of rows violating strict diagonal dominance.
    pub fn dominance_violations(&self) -> usize {
        (0..self.diag.len())
            .filter(|&i| self.diag[i].abs() < self.sub[i].abs() + self.sup[i].abs())
            .count()
    }
}

/// Three-band discretisation of `(L n)_i = ∂_x⁺ J_lin⁻(n)|_{x_i}` at the
/// interior nodes `1 ≤ i ≤ M−1`; boundary rows are left zero.
#[derive(Debug, Clone)]
pub struct LinearOperator<S> {
    pub sub: Vec<S>,
    pub diag: Vec<S>,
    pub sup: Vec<S>,
}

/// Assembles the upwinded linear-flux operator on a mesh.
///
/// With `a_j = x_j²`, `b_j = x_j² − 2x_j` and left-difference flux
/// `J_lin(x_j) = a_j (n_j − n_{j−1})/δx_{j−1} + b_j n_j`, row `i` is
/// `(J_lin(x_{i+1}) − J_lin(x_i))/δx_i`.
pub fn assemble_linear_operator<S: Scalar>(mesh: &Mesh<S>) -> LinearOperator<S> {
    let m = mesh.intervals();
    let nodes = mesh.nodes();
    let two = lit::<S>(2.0);
    let mut op = LinearOperator {
        sub: vec![S::zero(); m + 1],
        diag: vec![S::zero(); m + 1],
        sup: vec![S::zero(); m + 1],
    };
    for i in 1..m {
        let dxm = nodes[i] - nodes[i - 1];
        let dxi = nodes[i + 1] - nodes[i];
        let (xi, xp) = (nodes[i], nodes[i + 1]);
        let (ai, ap) = (xi * xi, xp * xp);
        let (bi, bp) = (xi * xi - two * xi, xp * xp - two * xp);
        op.sup[i] = (ap / dxi + bp) / dxi;
        op.diag[i] = -(ap / dxi + ai / dxm) / dxi - bi / dxi;
        op.sub[i] = ai / (dxm * dxi);
    }
    op
}

/// Assembles the step system `(I/δt − L − Q)·n_{k+1} = rhs` for the current
/// state, where `Q` is the lagged quadratic term in the semi-implicit
/// variant and empty in the explicit one.
fn assemble_step<S: Scalar>(
    profile: &Profile<S>,
    op: &LinearOperator<S>,
    cfg: &SchemeConfig<S>,
) -> TridiagonalSystem<S> {
    let mesh = profile.mesh();
    let n = profile.values();
    let nodes = mesh.nodes();
    let m = mesh.intervals();
    let inv_dt = cfg.dt.recip();
    let two = lit::<S>(2.0);
    let mut sys = TridiagonalSystem::zeros(m + 1);

    for i in 1..m {
        let dxi = nodes[i + 1] - nodes[i];
        sys.sub[i] = -op.sub[i];
        sys.diag[i] = inv_dt - op.diag[i];
        sys.sup[i] = -op.sup[i];
        match cfg.nonlinearity {
            Nonlinearity::ExplicitQuadratic => {
                sys.rhs[i] = n[i] * inv_dt + (n[i + 1] * n[i + 1] - n[i] * n[i]) / dxi;
            }
            Nonlinearity::SemiImplicitProduct => {
                sys.sup[i] = sys.sup[i] - n[i + 1] / dxi;
                sys.diag[i] = sys.diag[i] + n[i] / dxi;
                sys.rhs[i] = n[i] * inv_dt;
            }
        }
    }

    // Row 0: ∂_x J_lin|₀ = −2 n(0) turns the update into
    // (1/δt + 2) n_{k+1}(0) = n_k(0)/δt + (n²(x₁) − n²(0))/x₁.
    let x1 = nodes[1];
    sys.diag[0] = inv_dt + two;
    match cfg.nonlinearity {
        Nonlinearity::ExplicitQuadratic => {
            sys.rhs[0] = n[0] * inv_dt + (n[1] * n[1] - n[0] * n[0]) / x1;
        }
        Nonlinearity::SemiImplicitProduct => {
            sys.diag[0] = sys.diag[0] + n[0] / x1;
            sys.sup[0] = -n[1] / x1;
            sys.rhs[0] = n[0] * inv_dt;
        }
    }

    // Row M: Dirichlet n_{k+1}(R) = 0, exactly.
    sys.diag[m] = S::one();
    sys.rhs[m] = S::zero();
    sys
}

fn advance<S: Scalar>(
    profile: &Profile<S>,
    op: &LinearOperator<S>,
    cfg: &SchemeConfig<S>,
) -> Result<Profile<S>, SolverError> {
    let sys = assemble_step(profile, op, cfg);
    let violations = sys.dominance_violations();
    if violations > 0 {
        log::warn!(
            "step system violates diagonal dominance in {violations} rows; proceeding"
        );
    }
    let values = sys.solve()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteState);
    }
    Profile::new(profile.mesh().clone(), values, profile.time() + cfg.dt)
}

/// One step with the fully explicit quadratic flux.
pub fn step_explicit<S: Scalar>(
    profile: &Profile<S>,
    cfg: &SchemeConfig<S>,
) -> Result<Profile<S>, SolverError> {
    let cfg = SchemeConfig {
        nonlinearity: Nonlinearity::ExplicitQuadratic,
        ..*cfg
    };
    let op = assemble_linear_operator(profile.mesh());
    advance(profile, &op, &cfg)
}

/// One step with the lagged-product quadratic flux.
pub fn step_semi_implicit<S: Scalar>(
    profile: &Profile<S>,
    cfg: &SchemeConfig<S>,
) -> Result<Profile<S>, SolverError> {
    let cfg = SchemeConfig {
        nonlinearity: Nonlinearity::SemiImplicitProduct,
        ..*cfg
    };
    let op = assemble_linear_operator(profile.mesh());
    advance(profile, &op, &cfg)
}

/// Callbacks invoked by [`run`]: per-step observation (for time quadrature
/// of the outflux) and coarser recorded snapshots.
pub trait RunHooks<S: Scalar> {
    /// Called once with the initial profile before stepping.
    fn on_start(&mut self, _profile: &Profile<S>) {}
    /// Called after every step.
    fn on_step(&mut self, _step: usize, _profile: &Profile<S>) {}
    /// Called every `record_every` steps and at the final step.
    fn on_record(&mut self, _step: usize, _profile: &Profile<S>) {}
}

/// Hooks that observe nothing; useful for timing runs.
pub struct NoHooks;

impl<S: Scalar> RunHooks<S> for NoHooks {}

/// A pluggable stepper. The production stepper dispatches on
/// [`SchemeConfig::nonlinearity`]; tests substitute doubles to exercise
/// failure paths.
pub trait Stepper<S: Scalar> {
    fn step(&mut self, profile: &Profile<S>, cfg: &SchemeConfig<S>)
        -> Result<Profile<S>, SolverError>;
}

/// The Appendix-style scheme with the linear operator assembled once per
/// mesh (the explicit variant reuses it; the semi-implicit variant adds the
/// lagged product on top every step).
pub struct SchemeStepper<S> {
    op: Option<LinearOperator<S>>,
}

impl<S: Scalar> SchemeStepper<S> {
    pub fn new() -> Self {
        Self { op: None }
    }
}

impl<S: Scalar> Default for SchemeStepper<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Stepper<S> for SchemeStepper<S> {
    fn step(
        &mut self,
        profile: &Profile<S>,
        cfg: &SchemeConfig<S>,
    ) -> Result<Profile<S>, SolverError> {
        let op = self
            .op
            .get_or_insert_with(|| assemble_linear_operator(profile.mesh()));
        advance(profile, op, cfg)
    }
}

/// Advances `initial` until `t_end`, invoking the hooks along the way, and
/// returns the final profile. Stepper errors are wrapped with the failing
/// step index and time.
pub fn run<S: Scalar, H: RunHooks<S>>(
    initial: Profile<S>,
    cfg: &SchemeConfig<S>,
    stepper: &mut dyn Stepper<S>,
    hooks: &mut H,
) -> Result<Profile<S>, SolverError> {
    let steps = cfg.step_count();
    hooks.on_start(&initial);
    if steps == 0 {
        hooks.on_record(0, &initial);
        return Ok(initial);
    }
    let mut profile = initial;
    for k in 1..=steps {
        profile = stepper
            .step(&profile, cfg)
            .map_err(|source| SolverError::StepFailed {
                step: k,
                time: as_f64(profile.time()),
                source: Box::new(source),
            })?;
        hooks.on_step(k, &profile);
        if k % cfg.record_every == 0 || k == steps {
            hooks.on_record(k, &profile);
        }
    }
    Ok(profile)
}

/// Initial-data families.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData<S> {
    /// `c · n̂₀`.
    PlanckMultiple { factor: S },
    /// `(a·x − b·x²)₊`, with boundary slope `a`.
    TruncatedLinear { a: S, b: S },
    /// Gaussian bump `A · exp(−(x − x_c)²/σ²)`.
    Bump { amplitude: S, center: S, width: S },
    /// `n̂₀ + Bump`, pointwise at least Planck.
    PlanckPlusBump { amplitude: S, center: S, width: S },
    /// Stationary super-solution `S_γ`.
    SuperSolutionSample { gamma: S },
    /// Tabulated nodal values.
    Custom { values: Vec<S> },
}

/// Samples an initial-data family on the mesh at `t = 0`. Families are
/// nonnegative by construction; values are clamped at zero from below to
/// absorb rounding.
pub fn make_initial_data<S: Scalar>(
    mesh: &Arc<Mesh<S>>,
    family: &InitialData<S>,
) -> Result<Profile<S>, SolverError> {
    use crate::analytic::{be_density, super_solution, EquilibriumParam, SuperSolutionParam};
    let planck = EquilibriumParam::new(S::zero()).expect("zero is a valid parameter");
    let bump = |amplitude: S, center: S, width: S| -> Result<Vec<S>, SolverError> {
        if amplitude < S::zero() || !(width > S::zero()) || center < S::zero() {
            return Err(SolverError::BadParams(format!(
                "bump needs amplitude >= 0, center >= 0, width > 0; got ({}, {}, {})",
                as_f64(amplitude),
                as_f64(center),
                as_f64(width)
            )));
        }
        Ok(mesh
            .nodes()
            .iter()
            .map(|&x| {
                let z = (x - center) / width;
                amplitude * (-z * z).exp()
            })
            .collect())
    };
    let values: Vec<S> = match family {
        InitialData::PlanckMultiple { factor } => {
            if *factor < S::zero() {
                return Err(SolverError::BadParams(format!(
                    "Planck multiple must be nonnegative, got {}",
                    as_f64(*factor)
                )));
            }
            mesh.nodes()
                .iter()
                .map(|&x| *factor * be_density(planck, x).expect("nodes nonnegative"))
                .collect()
        }
        InitialData::TruncatedLinear { a, b } => {
            if !(*a > S::zero()) || !(*b > S::zero()) {
                return Err(SolverError::BadParams(format!(
                    "truncated linear needs a > 0 and b > 0, got ({}, {})",
                    as_f64(*a),
                    as_f64(*b)
                )));
            }
            mesh.nodes()
                .iter()
                .map(|&x| (*a * x - *b * x * x).max(S::zero()))
                .collect()
        }
        InitialData::Bump {
            amplitude,
            center,
            width,
        } => bump(*amplitude, *center, *width)?,
        InitialData::PlanckPlusBump {
            amplitude,
            center,
            width,
        } => bump(*amplitude, *center, *width)?
            .into_iter()
            .zip(mesh.nodes())
            .map(|(b, &x)| b + be_density(planck, x).expect("nodes nonnegative"))
            .collect(),
        InitialData::SuperSolutionSample { gamma } => {
            let g = SuperSolutionParam::new(*gamma)
                .map_err(|e| SolverError::BadParams(e.to_string()))?;
            mesh.nodes()
                .iter()
                .map(|&x| super_solution(g, x).expect("nodes nonnegative"))
                .collect()
        }
        InitialData::Custom { values } => {
            if values.iter().any(|v| !v.is_finite() || *v < S::zero()) {
                return Err(SolverError::BadParams(
                    "custom initial data must be finite and nonnegative".into(),
                ));
            }
            values.clone()
        }
    };
    Profile::new(mesh.clone(), values, S::zero())
}
