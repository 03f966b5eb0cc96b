//! Non-uniform spatial meshes with geometrically growing spacing.
//!
//! Solutions decay exponentially for large `x` but develop jumps or cusps at
//! `x = 0`, so the mesh packs resolution near the origin: the spacings
//! `δx_i = x_{i+1} − x_i` form a geometric progression `δx_i = h₀ rⁱ` with
//! `r > 1`, pinned by the interval count `M`, the right boundary `R` and the
//! last spacing `δx_{M−1}`.

use crate::scalar::{as_f64, lit, Scalar};
use std::io::{self, Write};
use thiserror::Error;

/// Errors from mesh construction and evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    /// No geometric spacing sequence with ratio `r > 1` fits the request.
    #[error("invalid mesh spec: {0}")]
    InvalidMeshSpec(String),
    /// Query point outside `[0, R]`.
    #[error("coordinate {x} outside the mesh domain [0, {right}]")]
    OutOfDomain { x: f64, right: f64 },
    /// Value vector length does not match the node count.
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Non-uniform mesh `0 = x₀ < x₁ < … < x_M = R` with constant spacing ratio.
///
/// Immutable after construction; share it read-only (typically behind an
/// `Arc`) between solver runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<S> {
    nodes: Vec<S>,
}

impl<S: Scalar> Mesh<S> {
    /// Builds the geometric mesh with `m` intervals on `[0, right]` whose
    /// final spacing is `last_spacing`.
    ///
    /// The common ratio `r > 1` is found by bisection on
    /// `g(r) = h₀(r)·(r^m − 1)/(r − 1) − R` with `h₀(r) = last_spacing / r^{m−1}`;
    /// `g` is monotone on the bracket `(1, 10]`. After accumulation the node
    /// vector is rescaled so the final node lands on `right` exactly, which
    /// keeps the spacing ratio constant to rounding.
    pub fn build_geometric(m: usize, right: S, last_spacing: S) -> Result<Self, GridError> {
        let zero = S::zero();
        let one = S::one();
        if m < 3 {
            return Err(GridError::InvalidMeshSpec(format!(
                "need at least 3 intervals, got {m}"
            )));
        }
        if !(right > zero) || !right.is_finite() {
            return Err(GridError::InvalidMeshSpec(format!(
                "right boundary must be positive and finite, got {}",
                as_f64(right)
            )));
        }
        if !(last_spacing > zero) || !(last_spacing < right) {
            return Err(GridError::InvalidMeshSpec(format!(
                "last spacing must lie in (0, R), got {}",
                as_f64(last_spacing)
            )));
        }
        // Total length is last_spacing · Σ_{j=0}^{m-1} r^{-j}: strictly
        // decreasing in r, with limit m·last_spacing as r → 1⁺.
        let total = |q: S| -> S {
            // q = 1/r; sum the m-term geometric series directly.
            let mut acc = zero;
            let mut pow = one;
            for _ in 0..m {
                acc = acc + pow;
                pow = pow * q;
            }
            acc * last_spacing
        };
        let m_s = S::from_usize(m).expect("interval count fits in scalar");
        if m_s * last_spacing <= right {
            return Err(GridError::InvalidMeshSpec(format!(
                "m·last_spacing = {} does not exceed R = {}; no ratio r > 1 exists",
                as_f64(m_s * last_spacing),
                as_f64(right)
            )));
        }
        let mut lo = zero; // ln r lower bound (r = 1)
        let mut hi = lit::<S>(10.0).ln();
        if total((-hi).exp()) >= right {
            return Err(GridError::InvalidMeshSpec(
                "required spacing ratio exceeds the supported bracket r <= 10".into(),
            ));
        }
        for _ in 0..200 {
            let mid = (lo + hi) * lit(0.5);
            if mid <= lo || mid >= hi {
                break;
            }
            if total((-mid).exp()) > right {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let ln_r = (lo + hi) * lit(0.5);
        let ratio = ln_r.exp();
        if !(ratio > one) {
            return Err(GridError::InvalidMeshSpec(
                "bisection did not produce a ratio r > 1".into(),
            ));
        }

        // First spacing h₀ = last_spacing · r^{1-m}, then accumulate.
        let h0 = last_spacing * (S::from_usize(m - 1).unwrap() * -ln_r).exp();
        if !h0.is_normal() {
            return Err(GridError::InvalidMeshSpec(format!(
                "first spacing underflows (ratio {} over {m} intervals)",
                as_f64(ratio)
            )));
        }
        let mut nodes = Vec::with_capacity(m + 1);
        let mut x = zero;
        let mut dx = h0;
        nodes.push(zero);
        for _ in 0..m {
            x = x + dx;
            nodes.push(x);
            dx = dx * ratio;
        }
        // Rescale so x_M = R exactly; a uniform scale preserves all ratios.
        let scale = right / nodes[m];
        for node in nodes.iter_mut().skip(1) {
            *node = *node * scale;
        }
        nodes[m] = right;
        let mesh = Mesh { nodes };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Node coordinates `x₀ … x_M`.
    pub fn nodes(&self) -> &[S] {
        &self.nodes
    }

    /// Number of intervals `M`.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of nodes `M + 1`.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Right boundary `R`.
    pub fn right(&self) -> S {
        *self.nodes.last().unwrap()
    }

    /// Spacing `δx_i = x_{i+1} − x_i`.
    pub fn spacing(&self, i: usize) -> S {
        self.nodes[i + 1] - self.nodes[i]
    }

    /// Checks the mesh invariants: strictly increasing nodes starting at 0,
    /// positive finite spacings with a constant ratio, and total length `R`.
    pub fn validate(&self) -> Result<(), GridError> {
        let nodes = &self.nodes;
        if nodes.len() < 4 || nodes[0] != S::zero() {
            return Err(GridError::InvalidMeshSpec(
                "mesh must start at 0 with at least 3 intervals".into(),
            ));
        }
        let mut sum = S::zero();
        for i in 0..self.intervals() {
            let dx = self.spacing(i);
            if !(dx > S::zero()) || !dx.is_finite() {
                return Err(GridError::InvalidMeshSpec(format!(
                    "non-positive or non-finite spacing at interval {i}"
                )));
            }
            sum = sum + dx;
        }
        let tol_len = lit::<S>(1e-12) * self.right();
        if (sum - self.right()).abs() > tol_len {
            return Err(GridError::InvalidMeshSpec(
                "spacings do not sum to the right boundary".into(),
            ));
        }
        let r0 = self.spacing(1) / self.spacing(0);
        for i in 0..self.intervals() - 1 {
            let r = self.spacing(i + 1) / self.spacing(i);
            if (r - r0).abs() > lit::<S>(1e-10) {
                return Err(GridError::InvalidMeshSpec(format!(
                    "spacing ratio drifts at interval {i}"
                )));
            }
        }
        Ok(())
    }

    /// Piecewise-linear interpolation of nodal `values` at `x`; exact at nodes.
    pub fn interpolate(&self, values: &[S], x: S) -> Result<S, GridError> {
        if values.len() != self.node_count() {
            return Err(GridError::LengthMismatch {
                expected: self.node_count(),
                got: values.len(),
            });
        }
        if x < S::zero() || x > self.right() {
            return Err(GridError::OutOfDomain {
                x: as_f64(x),
                right: as_f64(self.right()),
            });
        }
        // Index of the first node strictly greater than x.
        let hi = self.nodes.partition_point(|&node| node <= x);
        if hi == self.node_count() {
            return Ok(*values.last().unwrap());
        }
        let lo = hi - 1;
        if self.nodes[lo] == x {
            return Ok(values[lo]);
        }
        let t = (x - self.nodes[lo]) / (self.nodes[hi] - self.nodes[lo]);
        Ok(values[lo] + t * (values[hi] - values[lo]))
    }

    /// Writes the mesh as CSV with columns `index,x`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,x")?;
        for (i, x) in self.nodes.iter().enumerate() {
            writeln!(w, "{i},{:.16e}", as_f64(*x))?;
        }
        Ok(())
    }
}
