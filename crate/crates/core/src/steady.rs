//! Steady-state densities and the weak-noise quasipotential.
//!
//! In one dimension a no-flux steady state carries zero current, so
//! J = v w - (D/2) w' = 0 integrates in closed form:
//!
//!   w(x) ~ D(x)^(alpha-1) exp( int 2a/D dx ),
//!
//! evaluated here by trapezoid quadrature of the exponent. On any grid
//! (1-D or 2-D) the same density is also the null vector of the discrete
//! forward operator, extracted by inverse iteration on the implicit Euler
//! map (I - tau L)^{-1}; the two constructions cross-check each other.
//! For pure noise at alpha = 1 both collapse to the uniform density: the
//! current is purely Fickian and only a constant kills it.
//!
//! The quasipotential rescales a density by the noise strength,
//! phi = -eps ln(w / max w), turning steady weights into a landscape
//! whose minima sit at the attractors of the drift.

use crate::error::{Error, Result};
use crate::fpe::{Boundary, OperatorKind, OperatorMatrix};
use crate::model::{Alpha, Grid, GridDensity, SdeModel};
use crate::sparse::{bicgstab, solve_tridiagonal};

/// Zero-current steady density in one dimension.
///
/// Requires strictly positive diffusion on every node; the exponent is
/// anchored at the leftmost cell center (any anchor differs only by
/// normalization).
pub fn steady_1d_zero_current(
    model: &SdeModel,
    grid: &Grid,
    alpha: Alpha,
) -> Result<GridDensity> {
    if grid.dim() != 1 || model.state_dim() != 1 {
        return Err(Error::param(
            "grid",
            "zero-current quadrature is a strictly 1-D construction",
        ));
    }
    let ax = grid.axis(0);
    let n = ax.n;
    let h = ax.spacing();
    let mut ratio = vec![0.0; n]; // 2 a / D at cell centers
    let mut log_d = vec![0.0; n];
    let mut a = [0.0];
    let mut d = [0.0];
    let mut bs = vec![0.0; model.noise_dim()];
    for i in 0..n {
        let x = [ax.center(i)];
        model.diffusion_into(&x, &mut d, &mut bs);
        if !(d[0] > 0.0) || !d[0].is_finite() {
            return Err(Error::Domain(format!(
                "zero-current steady state needs D > 0 everywhere; D({}) = {} at node {i}",
                x[0], d[0]
            )));
        }
        model.eval_drift(&x, &mut a);
        ratio[i] = 2.0 * a[0] / d[0];
        log_d[i] = d[0].ln();
    }
    let am1 = alpha.value() - 1.0;
    let mut expo = vec![0.0; n];
    expo[0] = am1 * log_d[0];
    let mut acc = 0.0;
    for i in 1..n {
        acc += 0.5 * (ratio[i - 1] + ratio[i]) * h;
        expo[i] = acc + am1 * log_d[i];
    }
    // Shift by the maximum so the largest weight is exactly exp(0) = 1.
    let m = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values: Vec<f64> = expo.iter().map(|e| (e - m).exp()).collect();
    GridDensity::from_unnormalized(grid.clone(), values, 0.0)
}

/// Null vector of a no-flux forward operator, as a normalized density.
///
/// Inverse iteration on (I - tau L)^{-1} with tau set a couple of orders
/// above the slowest diffusive relaxation, so the null component dominates
/// after a handful of solves. Converges when ||L w||_max drops below
/// 1e-12 ||L||_max ||w||_max.
pub fn steady_nullspace(op: &OperatorMatrix) -> Result<GridDensity> {
    if op.kind() != OperatorKind::Forward {
        return Err(Error::param(
            "operator",
            format!("need the forward generator, got {}", op.kind()),
        ));
    }
    if op.boundary() != Boundary::NoFlux {
        return Err(Error::param(
            "operator",
            "an absorbing operator has no steady density; build with no-flux boundaries",
        ));
    }
    let grid = op.grid();
    let n = op.n();
    let l = op.matrix();
    let l_norm = l.max_abs();
    if !(l_norm > 0.0) {
        return Err(Error::Domain("operator is identically zero".into()));
    }
    // Slowest diffusive mode relaxes at ~ ||L|| (pi / n_cells)^2; aim tau
    // two decades above it so each solve multiplies the null component's
    // lead by ~200.
    let n_max = (0..grid.dim()).map(|d| grid.axis(d).n).max().unwrap() as f64;
    let tau = 20.0 * n_max * n_max / l_norm;
    let a = l.identity_plus_scaled(-tau);
    let tri = if grid.dim() == 1 { a.tridiagonal() } else { None };

    let mut w = vec![1.0; n];
    let mut lw = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let max_outer = 200;
    for iter in 0..max_outer {
        let next = match &tri {
            Some((lower, diag, upper)) => solve_tridiagonal(lower, diag, upper, &w)?,
            None => bicgstab(&a, &w, &w, 1e-13, 20_000)?,
        };
        w = next;
        let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::Divergence { step: iter, index: 0 });
        }
        for v in &mut w {
            *v /= peak;
        }
        l.matvec(&w, &mut lw);
        residual = lw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if residual <= 1e-12 * l_norm {
            // Rounding can leave dust of either sign; the true null vector
            // is nonnegative, so clamp before normalizing the mass.
            let clamped: Vec<f64> = w.iter().map(|&v| v.max(0.0)).collect();
            return GridDensity::from_unnormalized(grid.clone(), clamped, 0.0);
        }
    }
    Err(Error::NonConvergence {
        residual: residual / l_norm,
        iterations: max_outer,
    })
}

/// Noise-scaled log-density landscape phi = -eps ln(w / max w).
#[derive(Debug, Clone)]
pub struct Quasipotential {
    grid: Grid,
    values: Vec<f64>,
    epsilon: f64,
    /// Nodes where w = 0 forced phi to +infinity.
    infinite_nodes: Vec<usize>,
}

impl Quasipotential {
    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn infinite_nodes(&self) -> &[usize] {
        &self.infinite_nodes
    }

    pub fn is_finite_everywhere(&self) -> bool {
        self.infinite_nodes.is_empty()
    }
}

/// Extract the quasipotential from a density at noise strength `epsilon`.
///
/// The minimum over finite nodes is exactly zero (attained where w peaks);
/// zero-density nodes are mapped to +infinity and reported.
pub fn quasipotential(w: &GridDensity, epsilon: f64) -> Result<Quasipotential> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::param("epsilon", "must be positive and finite"));
    }
    let mx = w.max_value();
    let mut infinite_nodes = Vec::new();
    let mut values = Vec::with_capacity(w.values().len());
    for (i, &v) in w.values().iter().enumerate() {
        if v > 0.0 {
            let p = -epsilon * (v / mx).ln();
            values.push(if p == 0.0 { 0.0 } else { p });
        } else {
            infinite_nodes.push(i);
            values.push(f64::INFINITY);
        }
    }
    Ok(Quasipotential {
        grid: w.grid().clone(),
        values,
        epsilon,
        infinite_nodes,
    })
}
