//! Closed-form objects of the Kompaneets problem.
//!
//! Bose–Einstein equilibria `n̂_μ(x) = x²/(e^{x+μ} − 1)`, the stationary
//! super-solutions `S_γ = n̂₀ + γ·m`, the quantum entropy `H` and its
//! dissipation `D`, the photon flux `J`, and the onset/slope bounds used by
//! the diagnostics. Everything here is a pure function of its arguments;
//! quadrature is always performed on the solver's own mesh.

use crate::grid::Mesh;
use crate::scalar::{as_f64, lit, Scalar};
use thiserror::Error;

/// Errors from closed-form evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("photon energy must be nonnegative, got {0}")]
    NegativeEnergy(f64),
    #[error("density values must be nonnegative (min {min} vs tolerance {tol})")]
    NegativeDensity { min: f64, tol: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("target photon number {0} exceeds the Planck maximum 2ζ(3)")]
    TargetTooLarge(f64),
    #[error("target photon number {0} must be positive")]
    TargetNonpositive(f64),
    #[error("initial slope {0} is not supercritical (needs slope > 1)")]
    SlopeNotSupercritical(f64),
    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),
    #[error("node index {index} outside the interior range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
}

/// Chemical-potential parameter `μ ≥ 0` of a Bose–Einstein equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumParam<S>(S);

impl<S: Scalar> EquilibriumParam<S> {
    pub fn new(mu: S) -> Result<Self, AnalyticError> {
        if mu < S::zero() || !mu.is_finite() {
            return Err(AnalyticError::NegativeEnergy(as_f64(mu)));
        }
        Ok(Self(mu))
    }

    pub fn mu(&self) -> S {
        self.0
    }
}

/// Amplitude `γ ≥ 0` of a stationary super-solution `S_γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperSolutionParam<S>(S);

impl<S: Scalar> SuperSolutionParam<S> {
    pub fn new(gamma: S) -> Result<Self, AnalyticError> {
        if gamma < S::zero() || !gamma.is_finite() {
            return Err(AnalyticError::NegativeEnergy(as_f64(gamma)));
        }
        Ok(Self(gamma))
    }

    pub fn gamma(&self) -> S {
        self.0
    }
}

/// Entropy and dissipation of a profile, evaluated together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport<S> {
    pub entropy: S,
    pub dissipation: S,
}

impl<S: Scalar> EntropyReport<S> {
    pub fn compute(mesh: &Mesh<S>, values: &[S]) -> Result<Self, AnalyticError> {
        Ok(Self {
            entropy: entropy(mesh, values)?,
            dissipation: dissipation(mesh, values)?,
        })
    }
}

/// Relative tolerance under which slightly negative densities (a monitored
/// artifact of the non-positivity-preserving scheme) are treated as zero.
const NEGATIVITY_REL_TOL: f64 = 1e-10;

fn check_density<S: Scalar>(mesh: &Mesh<S>, values: &[S]) -> Result<(), AnalyticError> {
    if values.len() != mesh.node_count() {
        return Err(AnalyticError::LengthMismatch {
            expected: mesh.node_count(),
            got: values.len(),
        });
    }
    let max_abs = values
        .iter()
        .fold(S::zero(), |acc, v| acc.max(v.abs()));
    let tol = lit::<S>(NEGATIVITY_REL_TOL) * max_abs;
    let min = values.iter().fold(S::zero(), |acc, v| acc.min(*v));
    if min < -tol {
        return Err(AnalyticError::NegativeDensity {
            min: as_f64(min),
            tol: as_f64(tol),
        });
    }
    Ok(())
}

/// Bose–Einstein equilibrium density `n̂_μ(x) = x²/(e^{x+μ} − 1)`.
///
/// Uses `expm1` so that the near-origin behaviour `n̂₀(x) ≈ x` survives at
/// `x` as small as the canonical first mesh node (`~1e-7`).
pub fn be_density<S: Scalar>(mu: EquilibriumParam<S>, x: S) -> Result<S, AnalyticError> {
    if x < S::zero() {
        return Err(AnalyticError::NegativeEnergy(as_f64(x)));
    }
    if x == S::zero() {
        return Ok(S::zero());
    }
    Ok(x * x / (x + mu.mu()).exp_m1())
}

/// Samples `n̂_μ` on every node of a mesh.
pub fn be_profile<S: Scalar>(mesh: &Mesh<S>, mu: EquilibriumParam<S>) -> Vec<S> {
    mesh.nodes()
        .iter()
        .map(|&x| be_density(mu, x).expect("mesh nodes are nonnegative"))
        .collect()
}

/// Truncation point for the `Σ e^{-kμ}/k³` series.
const SERIES_TERMS: usize = 20_000;

/// Photon number of the equilibrium `n̂_μ`: `N(n̂_μ) = 2 Σ_k e^{-kμ}/k³`.
///
/// Partial sum plus an Euler–Maclaurin tail correction; absolute accuracy is
/// better than `1e-12` uniformly in `μ ≥ 0` (in `f64`).
pub fn equilibrium_photon_number<S: Scalar>(mu: EquilibriumParam<S>) -> S {
    let mu = mu.mu();
    let mut acc = S::zero();
    // Sum ascending in magnitude (descending k) to limit rounding.
    for k in (1..=SERIES_TERMS).rev() {
        let k_s = S::from_usize(k).unwrap();
        acc = acc + (-k_s * mu).exp() / (k_s * k_s * k_s);
    }
    // Tail Σ_{k=N}^∞ k⁻³ ≈ 1/(2N²) + 1/(2N³) + 1/(4N⁴), damped by e^{-Nμ}.
    let n = S::from_usize(SERIES_TERMS + 1).unwrap();
    let half = lit::<S>(0.5);
    let n2 = n * n;
    let tail = half / n2 + half / (n2 * n) + lit::<S>(0.25) / (n2 * n2);
    acc = acc + (-n * mu).exp() * tail;
    lit::<S>(2.0) * acc
}

/// Photon number of the Planck spectrum, `N(n̂₀) = 2ζ(3) ≈ 2.404`.
pub fn planck_photon_number<S: Scalar>() -> S {
    equilibrium_photon_number(EquilibriumParam(S::zero()))
}

/// Total photon number `N(n) = ∫ n dx` by trapezoid quadrature on the mesh.
pub fn photon_number<S: Scalar>(mesh: &Mesh<S>, values: &[S]) -> Result<S, AnalyticError> {
    if values.len() != mesh.node_count() {
        return Err(AnalyticError::LengthMismatch {
            expected: mesh.node_count(),
            got: values.len(),
        });
    }
    Ok(trapezoid(mesh, |i, _| values[i]))
}

/// Trapezoid quadrature of a nodal integrand over the mesh.
fn trapezoid<S: Scalar, F: Fn(usize, S) -> S>(mesh: &Mesh<S>, f: F) -> S {
    let nodes = mesh.nodes();
    let half = lit::<S>(0.5);
    let mut acc = S::zero();
    let mut prev = f(0, nodes[0]);
    for i in 1..nodes.len() {
        let cur = f(i, nodes[i]);
        acc = acc + half * (prev + cur) * (nodes[i] - nodes[i - 1]);
        prev = cur;
    }
    acc
}

/// Finds the unique `μ ≥ 0` with `N(n̂_μ)` equal to `target`.
///
/// Bisection on the strictly decreasing map `μ ↦ N(n̂_μ)`; the round-trip
/// error `|N(n̂_μ) − target|` is below `1e-8`.
pub fn solve_mu_for_number<S: Scalar>(target: S) -> Result<EquilibriumParam<S>, AnalyticError> {
    let planck = planck_photon_number::<S>();
    if target <= S::zero() {
        return Err(AnalyticError::TargetNonpositive(as_f64(target)));
    }
    if target > planck + lit(1e-12) {
        return Err(AnalyticError::TargetTooLarge(as_f64(target)));
    }
    if target >= planck {
        return Ok(EquilibriumParam(S::zero()));
    }
    let number_at = |mu: S| equilibrium_photon_number(EquilibriumParam(mu));
    let mut lo = S::zero();
    let mut hi = S::one();
    while number_at(hi) > target {
        hi = hi * lit(2.0);
        if hi > lit(1e4) {
            break;
        }
    }
    for _ in 0..200 {
        let mid = (lo + hi) * lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if number_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(EquilibriumParam((lo + hi) * lit(0.5)))
}

/// Weight `m(x) = x² eˣ/(eˣ − 1)²` of the super-solution family, with the
/// removable singularity `m(0) = 1`.
pub fn super_solution_weight<S: Scalar>(x: S) -> Result<S, AnalyticError> {
    if x < S::zero() {
        return Err(AnalyticError::NegativeEnergy(as_f64(x)));
    }
    if x == S::zero() {
        return Ok(S::one());
    }
    let em = x.exp_m1();
    Ok(x * x * (em + S::one()) / (em * em))
}

/// Stationary super-solution `S_γ(x) = n̂₀(x) + γ·m(x)`.
pub fn super_solution<S: Scalar>(gamma: SuperSolutionParam<S>, x: S) -> Result<S, AnalyticError> {
    let base = be_density(EquilibriumParam(S::zero()), x)?;
    Ok(base + gamma.gamma() * super_solution_weight(x)?)
}

/// Riccati upper bound `t̄* = ½ ln(s/(s − 1))` on the onset time when the
/// initial boundary slope `s = ∂_x n₀(0)` exceeds 1.
pub fn riccati_onset_bound<S: Scalar>(slope0: S) -> Result<S, AnalyticError> {
    if !(slope0 > S::one()) {
        return Err(AnalyticError::SlopeNotSupercritical(as_f64(slope0)));
    }
    // ln(s/(s-1)) = -ln(1 - 1/s), kept log-stable for s near 1.
    Ok(-lit::<S>(0.5) * (-slope0.recip()).ln_1p())
}

/// Oleinik lower bound on the slope: `∂_x n ≥ −1/(2t) − 5x/2 − α/2` with
/// `α = √(6·sup|n| + 1) − 1`.
pub fn oleinik_envelope<S: Scalar>(x: S, t: S, sup_n: S) -> Result<S, AnalyticError> {
    if !(t > S::zero()) {
        return Err(AnalyticError::NonpositiveTime(as_f64(t)));
    }
    if x < S::zero() || sup_n < S::zero() {
        return Err(AnalyticError::NegativeEnergy(as_f64(x.min(sup_n))));
    }
    let half = lit::<S>(0.5);
    let alpha = (lit::<S>(6.0) * sup_n + S::one()).sqrt() - S::one();
    Ok(-half / t - lit::<S>(2.5) * x - half * alpha)
}

/// Entropy integrand term `Φ(x, n) = −n ln(1 + x²/n) − x² ln(1 + n/x²)`,
/// extended by continuity: `Φ(x, 0) = 0` and `Φ(0, n) = 0`.
fn phi<S: Scalar>(x: S, n: S) -> S {
    if n <= S::zero() || x <= S::zero() {
        return S::zero();
    }
    let x2 = x * x;
    -n * (x2 / n).ln_1p() - x2 * (n / x2).ln_1p()
}

/// Quantum entropy `H(n) = ∫ x n + Φ(x, n) dx` by trapezoid quadrature.
///
/// Values within the negativity monitoring tolerance below zero are treated
/// as zero; anything more negative is a hard error.
pub fn entropy<S: Scalar>(mesh: &Mesh<S>, values: &[S]) -> Result<S, AnalyticError> {
    check_density(mesh, values)?;
    Ok(trapezoid(mesh, |i, x| {
        let n = values[i].max(S::zero());
        x * n + phi(x, n)
    }))
}

/// Density floor below which a cell contributes nothing to the dissipation.
/// The prefactor `n(n + x²)` vanishes there, but `ln n` in the discrete
/// difference of `h` does not, so the cell is zeroed outright.
const DISSIPATION_FLOOR: f64 = 1e-30;

/// Entropy dissipation `D(n) = ∫ n(n + x²) |∂_x h|² dx` with
/// `h(x, n) = x + ln n − ln(n + x²)`, discretised with centred differences
/// of `h` at interior nodes. Equilibria give `h ≡ −μ`, so `D(n̂_μ) = 0` up
/// to rounding.
pub fn dissipation<S: Scalar>(mesh: &Mesh<S>, values: &[S]) -> Result<S, AnalyticError> {
    check_density(mesh, values)?;
    let nodes = mesh.nodes();
    let floor = lit::<S>(DISSIPATION_FLOOR);
    let half = lit::<S>(0.5);
    let h = |i: usize| -> Option<S> {
        let n = values[i];
        if n <= floor {
            return None;
        }
        let x = nodes[i];
        Some(x - (x * x / n).ln_1p())
    };
    let mut acc = S::zero();
    for i in 1..nodes.len() - 1 {
        let (hm, h0, hp) = match (h(i - 1), h(i), h(i + 1)) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue,
        };
        let _ = h0;
        let dh = (hp - hm) / (nodes[i + 1] - nodes[i - 1]);
        let n = values[i];
        let x = nodes[i];
        let cell = half * (nodes[i + 1] - nodes[i - 1]);
        acc = acc + n * (n + x * x) * dh * dh * cell;
    }
    Ok(acc.max(S::zero()))
}

/// Discrete photon flux `J(x_i, n) = x_i² ∂_x n|_i + (x_i² − 2x_i) n_i + n_i²`
/// with a centred slope, at an interior node `1 ≤ i ≤ M−1`.
pub fn flux<S: Scalar>(mesh: &Mesh<S>, values: &[S], i: usize) -> Result<S, AnalyticError> {
    if values.len() != mesh.node_count() {
        return Err(AnalyticError::LengthMismatch {
            expected: mesh.node_count(),
            got: values.len(),
        });
    }
    let max = mesh.intervals() - 1;
    if i == 0 || i > max {
        return Err(AnalyticError::IndexOutOfRange { index: i, max });
    }
    let nodes = mesh.nodes();
    let x = nodes[i];
    let dn = (values[i + 1] - values[i - 1]) / (nodes[i + 1] - nodes[i - 1]);
    let two = lit::<S>(2.0);
    Ok(x * x * dn + (x * x - two * x) * values[i] + values[i] * values[i])
}

/// Lower bound `∫ min(n₀, n̂₀) dx` on the photon number of the long-time
/// equilibrium, by trapezoid quadrature.
pub fn mass_floor<S: Scalar>(mesh: &Mesh<S>, values: &[S]) -> Result<S, AnalyticError> {
    check_density(mesh, values)?;
    let mu0 = EquilibriumParam(S::zero());
    Ok(trapezoid(mesh, |i, x| {
        values[i]
            .max(S::zero())
            .min(be_density(mu0, x).expect("nodes nonnegative"))
    }))
}
