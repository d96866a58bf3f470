//! Discrete forward and backward generators on a grid, density evolution,
//! probability currents, and the forward/backward operator gap.
//!
//! The forward operator is discretized in flux form,
//!
//!   L w = div[ -v w + (D/2) grad w ],   v = a + (alpha - 1) a_N,
//!
//! with D, a, and a_N evaluated at cell-face midpoints. The backward
//! operator reuses the same face stencil for its divergence part and adds
//! the advection v . grad by centered node differences:
//!
//!   L+ u = v . grad u + div[ (D/2) grad u ].
//!
//! Both operators see the same advective velocity; they differ only in
//! whether it acts under or outside the divergence. For pure noise at
//! alpha = 1 the velocity vanishes identically and the two assemblies
//! produce the same matrix bit for bit — time-reversal symmetry as an
//! exact matrix identity, not an approximation.
//!
//! Assembly discipline: every face coefficient enters the matrix twice,
//! +q into one row and -q into the neighbor, in a fixed insertion order.
//! [`SparseMatrix`] keeps stacked entries, so 1-D column sums cancel to
//! exactly 0.0 and identically assembled operators subtract to exactly
//! zero; 2-D sums cancel to rounding (~1e-13 on the grids used here).
//! alpha = 1 short-circuits the noise-drift evaluation entirely, so the
//! operator provably never depends on derivative information beyond D
//! itself at the faces.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{Alpha, Grid, GridDensity, SdeModel};
use crate::noise_drift::{a_n_from_d_into, DriftScratch};
use crate::sparse::{bicgstab, solve_tridiagonal, SparseBuilder, SparseMatrix};

/// Which generator a matrix discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Density evolution w_t = L w.
    Forward,
    /// Expectation evolution u_t = L+ u.
    Backward,
    /// The difference L - L+ for the drift-free model.
    Gap,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorKind::Forward => "forward",
            OperatorKind::Backward => "backward",
            OperatorKind::Gap => "gap",
        })
    }
}

/// Behavior of the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// No probability current through the boundary (reflecting); mass is
    /// conserved and the forward column sums telescope to zero.
    NoFlux,
    /// Density pinned to zero on the boundary faces; mass leaks out.
    Absorbing,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::NoFlux => "no-flux",
            Boundary::Absorbing => "absorbing",
        })
    }
}

/// A sparse generator matrix acting on grid functions.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    grid: Grid,
    kind: OperatorKind,
    alpha: Alpha,
    boundary: Boundary,
    matrix: SparseMatrix,
}

impl OperatorMatrix {
    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    #[inline]
    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    #[inline]
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    #[inline]
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    /// Apply the operator: out = M w.
    pub fn apply(&self, w: &[f64], out: &mut [f64]) {
        self.matrix.matvec(w, out);
    }
}

/// Velocity field v = a + (alpha - 1) a_N with scratch reuse.
///
/// At alpha = 1 the factor is exactly zero and the noise-induced drift is
/// never evaluated, which keeps the operator independent of Jacobian
/// information by construction.
struct VelocityEval {
    am1: f64,
    a: Vec<f64>,
    an: Vec<f64>,
    scratch: DriftScratch,
}

impl VelocityEval {
    fn new(model: &SdeModel, alpha: Alpha) -> VelocityEval {
        let n = model.state_dim();
        VelocityEval {
            am1: alpha.value() - 1.0,
            a: vec![0.0; n],
            an: vec![0.0; n],
            scratch: DriftScratch::for_model(model),
        }
    }

    fn eval(&mut self, model: &SdeModel, x: &[f64], out: &mut [f64]) {
        model.eval_drift(x, &mut self.a);
        if self.am1 != 0.0 {
            a_n_from_d_into(model, x, &mut self.an, &mut self.scratch);
            for i in 0..out.len() {
                out[i] = self.a[i] + self.am1 * self.an[i];
            }
        } else {
            out.copy_from_slice(&self.a);
        }
    }
}

/// Check D(x) at every node: finite entries and positive semidefinite.
fn precheck_diffusion(model: &SdeModel, grid: &Grid) -> Result<()> {
    let n = model.state_dim();
    let mut d = vec![0.0; n * n];
    let mut b = vec![0.0; n * model.noise_dim()];
    let mut bad: Vec<usize> = Vec::new();
    for node in 0..grid.len() {
        let x = grid.coord(node);
        model.diffusion_into(&x, &mut d, &mut b);
        let finite = d.iter().all(|v| v.is_finite());
        let scale = d.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let psd = match n {
            1 => d[0] >= -1e-12 * scale,
            _ => {
                d[0] >= -1e-12 * scale
                    && d[3] >= -1e-12 * scale
                    && d[0] * d[3] - d[1] * d[2] >= -1e-12 * scale * scale
            }
        };
        if !finite || !psd {
            bad.push(node);
        }
    }
    if bad.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = bad.iter().take(8).map(|i| i.to_string()).collect();
    let more = if bad.len() > 8 {
        format!(" (+{} more)", bad.len() - 8)
    } else {
        String::new()
    };
    Err(Error::Build(format!(
        "diffusion matrix non-finite or not positive semidefinite at nodes [{}]{more}",
        shown.join(", ")
    )))
}

/// Add +q to `row_plus` and -q to `row_minus` in column `col`.
#[inline]
fn pair(b: &mut SparseBuilder, row_plus: usize, row_minus: usize, col: usize, q: f64) {
    b.add(row_plus, col, q);
    b.add(row_minus, col, -q);
}

/// Face-flux assembly in 1-D. `vel` carries the advective velocity;
/// `None` assembles the pure Fickian part (used by the backward builder).
fn assemble_flux_1d(
    model: &SdeModel,
    grid: &Grid,
    mut vel: Option<&mut VelocityEval>,
    boundary: Boundary,
    b: &mut SparseBuilder,
) {
    let ax = grid.axis(0);
    let h = ax.spacing();
    let inv_h = 1.0 / h;
    let inv_h2 = inv_h * inv_h;
    let mut d = [0.0];
    let mut v = [0.0];
    let mut bs = vec![0.0; model.noise_dim()];
    for k in 1..ax.n {
        let xf = [ax.lo + k as f64 * h];
        model.diffusion_into(&xf, &mut d, &mut bs);
        let dc = d[0] * 0.5 * inv_h2;
        let vc = match vel.as_deref_mut() {
            Some(ve) => {
                ve.eval(model, &xf, &mut v);
                v[0] * 0.5 * inv_h
            }
            None => 0.0,
        };
        let c_lo = -dc - vc;
        let c_hi = dc - vc;
        b.add(k - 1, k - 1, c_lo);
        b.add(k - 1, k, c_hi);
        b.add(k, k - 1, -c_lo);
        b.add(k, k, -c_hi);
    }
    if boundary == Boundary::Absorbing {
        // Dirichlet zero on the domain faces: the face value of w is 0, so
        // only the diffusive half-cell gradient survives.
        for (cell, xf) in [(0usize, ax.lo), (ax.n - 1, ax.hi)] {
            model.diffusion_into(&[xf], &mut d, &mut bs);
            b.add(cell, cell, -d[0] * inv_h2);
        }
    }
}

/// Face-flux assembly in 2-D with corner-averaged cross-diffusion terms.
fn assemble_flux_2d(
    model: &SdeModel,
    grid: &Grid,
    mut vel: Option<&mut VelocityEval>,
    boundary: Boundary,
    b: &mut SparseBuilder,
) {
    let (axx, axy) = (grid.axis(0).clone(), grid.axis(1).clone());
    let (nx, ny) = (axx.n, axy.n);
    let (hx, hy) = (axx.spacing(), axy.spacing());
    let mut d = [0.0; 4];
    let mut v = [0.0; 2];
    let mut bs = vec![0.0; 2 * model.noise_dim()];

    // Faces normal to x, between (ix-1, iy) and (ix, iy).
    for iy in 0..ny {
        for ix in 1..nx {
            let xf = [axx.lo + ix as f64 * hx, axy.center(iy)];
            model.diffusion_into(&xf, &mut d, &mut bs);
            let l = grid.flat(ix - 1, iy);
            let r = grid.flat(ix, iy);
            let dc = d[0] * 0.5 / (hx * hx);
            let vc = match vel.as_deref_mut() {
                Some(ve) => {
                    ve.eval(model, &xf, &mut v);
                    v[0] * 0.5 / hx
                }
                None => 0.0,
            };
            let c_lo = -dc - vc;
            let c_hi = dc - vc;
            b.add(l, l, c_lo);
            b.add(l, r, c_hi);
            b.add(r, l, -c_lo);
            b.add(r, r, -c_hi);
            // Cross flux -(D_xy/2) dw/dy through this face, averaged over
            // the two adjacent cell columns; one-sided at the y edges.
            let dxy = d[1];
            if dxy != 0.0 {
                let g = dxy / (8.0 * hx * hy);
                let g0 = dxy / (4.0 * hx * hy);
                for cx in [ix - 1, ix] {
                    if iy > 0 && iy + 1 < ny {
                        pair(b, l, r, grid.flat(cx, iy + 1), g);
                        pair(b, l, r, grid.flat(cx, iy - 1), -g);
                    } else if iy == 0 {
                        pair(b, l, r, grid.flat(cx, 1), g0);
                        pair(b, l, r, grid.flat(cx, 0), -g0);
                    } else {
                        pair(b, l, r, grid.flat(cx, ny - 1), g0);
                        pair(b, l, r, grid.flat(cx, ny - 2), -g0);
                    }
                }
            }
        }
    }

    // Faces normal to y, between (ix, iy-1) and (ix, iy).
    for iy in 1..ny {
        for ix in 0..nx {
            let xf = [axx.center(ix), axy.lo + iy as f64 * hy];
            model.diffusion_into(&xf, &mut d, &mut bs);
            let l = grid.flat(ix, iy - 1);
            let r = grid.flat(ix, iy);
            let dc = d[3] * 0.5 / (hy * hy);
            let vc = match vel.as_deref_mut() {
                Some(ve) => {
                    ve.eval(model, &xf, &mut v);
                    v[1] * 0.5 / hy
                }
                None => 0.0,
            };
            let c_lo = -dc - vc;
            let c_hi = dc - vc;
            b.add(l, l, c_lo);
            b.add(l, r, c_hi);
            b.add(r, l, -c_lo);
            b.add(r, r, -c_hi);
            let dxy = d[1];
            if dxy != 0.0 {
                let g = dxy / (8.0 * hx * hy);
                let g0 = dxy / (4.0 * hx * hy);
                for cy in [iy - 1, iy] {
                    if ix > 0 && ix + 1 < nx {
                        pair(b, l, r, grid.flat(ix + 1, cy), g);
                        pair(b, l, r, grid.flat(ix - 1, cy), -g);
                    } else if ix == 0 {
                        pair(b, l, r, grid.flat(1, cy), g0);
                        pair(b, l, r, grid.flat(0, cy), -g0);
                    } else {
                        pair(b, l, r, grid.flat(nx - 1, cy), g0);
                        pair(b, l, r, grid.flat(nx - 2, cy), -g0);
                    }
                }
            }
        }
    }

    if boundary == Boundary::Absorbing {
        // Dirichlet zero on all four domain edges, diffusive part only
        // (the advective and cross terms vanish with the face value).
        for iy in 0..ny {
            let yc = axy.center(iy);
            for (cell, xf) in [(grid.flat(0, iy), axx.lo), (grid.flat(nx - 1, iy), axx.hi)] {
                model.diffusion_into(&[xf, yc], &mut d, &mut bs);
                b.add(cell, cell, -d[0] / (hx * hx));
            }
        }
        for ix in 0..nx {
            let xc = axx.center(ix);
            for (cell, yf) in [(grid.flat(ix, 0), axy.lo), (grid.flat(ix, ny - 1), axy.hi)] {
                model.diffusion_into(&[xc, yf], &mut d, &mut bs);
                b.add(cell, cell, -d[3] / (hy * hy));
            }
        }
    }
}

/// Centered node advection c . grad, one-sided on boundary rows. Entries
/// are skipped entirely where the coefficient is zero, so a vanishing
/// velocity contributes nothing to the matrix.
fn assemble_node_advection(
    model: &SdeModel,
    grid: &Grid,
    vel: &mut VelocityEval,
    b: &mut SparseBuilder,
) {
    let dim = grid.dim();
    let mut v = vec![0.0; dim];
    for node in 0..grid.len() {
        let x = grid.coord(node);
        vel.eval(model, &x, &mut v);
        for d in 0..dim {
            let c = v[d];
            if c == 0.0 {
                continue;
            }
            let ax = grid.axis(d);
            let h = ax.spacing();
            let (i, stride) = match dim {
                1 => (node, 1usize),
                _ => {
                    let nx = grid.axis(0).n;
                    if d == 0 {
                        (node % nx, 1)
                    } else {
                        (node / nx, nx)
                    }
                }
            };
            if i == 0 {
                b.add(node, node + stride, c / h);
                b.add(node, node, -c / h);
            } else if i == ax.n - 1 {
                b.add(node, node, c / h);
                b.add(node, node - stride, -c / h);
            } else {
                b.add(node, node + stride, c * 0.5 / h);
                b.add(node, node - stride, -c * 0.5 / h);
            }
        }
    }
}

fn check_dims(model: &SdeModel, grid: &Grid) -> Result<()> {
    if model.state_dim() != grid.dim() {
        return Err(Error::param(
            "grid",
            format!(
                "model state dimension {} does not match grid dimension {}",
                model.state_dim(),
                grid.dim()
            ),
        ));
    }
    Ok(())
}

fn finish(
    grid: &Grid,
    kind: OperatorKind,
    alpha: Alpha,
    boundary: Boundary,
    matrix: SparseMatrix,
) -> Result<OperatorMatrix> {
    if matrix
        .iter_entries()
        .any(|(_, _, v)| !v.is_finite())
    {
        return Err(Error::Build(format!(
            "{kind} operator has non-finite entries (drift or noise field evaluated to NaN/inf)"
        )));
    }
    Ok(OperatorMatrix {
        grid: grid.clone(),
        kind,
        alpha,
        boundary,
        matrix,
    })
}

/// Build the forward generator L w = div[-v w + (D/2) grad w] with
/// v = a + (alpha - 1) a_N evaluated at cell faces.
pub fn build_forward(
    model: &SdeModel,
    grid: &Grid,
    alpha: Alpha,
    boundary: Boundary,
) -> Result<OperatorMatrix> {
    check_dims(model, grid)?;
    precheck_diffusion(model, grid)?;
    let mut vel = VelocityEval::new(model, alpha);
    let mut b = SparseBuilder::new(grid.len());
    match grid.dim() {
        1 => assemble_flux_1d(model, grid, Some(&mut vel), boundary, &mut b),
        _ => assemble_flux_2d(model, grid, Some(&mut vel), boundary, &mut b),
    }
    finish(grid, OperatorKind::Forward, alpha, boundary, b.build())
}

/// Build the backward generator L+ u = v . grad u + div[(D/2) grad u],
/// sharing the forward face stencil for the divergence part. Advection is
/// centered at nodes, one-sided on the boundary.
pub fn build_backward(model: &SdeModel, grid: &Grid, alpha: Alpha) -> Result<OperatorMatrix> {
    check_dims(model, grid)?;
    precheck_diffusion(model, grid)?;
    let mut vel = VelocityEval::new(model, alpha);
    let mut b = SparseBuilder::new(grid.len());
    match grid.dim() {
        1 => assemble_flux_1d(model, grid, None, Boundary::NoFlux, &mut b),
        _ => assemble_flux_2d(model, grid, None, Boundary::NoFlux, &mut b),
    }
    assemble_node_advection(model, grid, &mut vel, &mut b);
    finish(grid, OperatorKind::Backward, alpha, Boundary::NoFlux, b.build())
}

/// The matrix L - L+ for the model with its external drift removed.
///
/// For pure noise the advective velocity is (alpha - 1) a_N, so the gap
/// scales linearly in (1 - alpha) entry by entry and vanishes identically
/// at alpha = 1, where both assemblies emit the same diffusion matrix.
pub fn operator_gap(model: &SdeModel, grid: &Grid, alpha: Alpha) -> Result<OperatorMatrix> {
    let pure = model.without_drift();
    let forward = build_forward(&pure, grid, alpha, Boundary::NoFlux)?;
    let backward = build_backward(&pure, grid, alpha)?;
    Ok(OperatorMatrix {
        grid: grid.clone(),
        kind: OperatorKind::Gap,
        alpha,
        boundary: Boundary::NoFlux,
        matrix: forward.matrix.sub(&backward.matrix),
    })
}

/// Node-centered probability current field.
#[derive(Debug, Clone)]
pub struct CurrentField {
    grid: Grid,
    /// Components stored at `node * dim + c`.
    values: Vec<f64>,
}

impl CurrentField {
    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn component(&self, node: usize, c: usize) -> f64 {
        self.values[node * self.grid.dim() + c]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// The current J = v w - (D/2) grad w at every node, with centered
/// gradients in the interior and one-sided differences on the boundary.
pub fn probability_current(
    model: &SdeModel,
    w: &GridDensity,
    alpha: Alpha,
) -> Result<CurrentField> {
    let grid = w.grid();
    check_dims(model, grid)?;
    let dim = grid.dim();
    let mut vel = VelocityEval::new(model, alpha);
    let mut v = vec![0.0; dim];
    let mut d = vec![0.0; dim * dim];
    let mut bs = vec![0.0; dim * model.noise_dim()];
    let mut grad = vec![0.0; dim];
    let vals = w.values();
    let mut out = vec![0.0; grid.len() * dim];
    for node in 0..grid.len() {
        let x = grid.coord(node);
        vel.eval(model, &x, &mut v);
        model.diffusion_into(&x, &mut d, &mut bs);
        for c in 0..dim {
            let ax = grid.axis(c);
            let h = ax.spacing();
            let (i, stride) = match dim {
                1 => (node, 1usize),
                _ => {
                    let nx = grid.axis(0).n;
                    if c == 0 {
                        (node % nx, 1)
                    } else {
                        (node / nx, nx)
                    }
                }
            };
            grad[c] = if i == 0 {
                (vals[node + stride] - vals[node]) / h
            } else if i == ax.n - 1 {
                (vals[node] - vals[node - stride]) / h
            } else {
                (vals[node + stride] - vals[node - stride]) * 0.5 / h
            };
        }
        for c in 0..dim {
            let mut fick = 0.0;
            for k in 0..dim {
                fick += d[c * dim + k] * grad[k];
            }
            let j = v[c] * vals[node] - 0.5 * fick;
            if !j.is_finite() {
                return Err(Error::Evaluation {
                    what: "probability current",
                    x,
                });
            }
            out[node * dim + c] = j;
        }
    }
    Ok(CurrentField {
        grid: grid.clone(),
        values: out,
    })
}

/// A Crank-Nicolson run: snapshots plus anything worth flagging.
#[derive(Debug, Clone)]
pub struct DensityEvolution {
    /// Snapshots in time order; the first is the initial density at t = 0.
    pub snapshots: Vec<GridDensity>,
    /// Human-readable anomalies: per-step mass drift beyond rounding, or
    /// negative lobes beyond the scheme's usual undershoot.
    pub warnings: Vec<String>,
}

impl DensityEvolution {
    pub fn final_density(&self) -> &GridDensity {
        self.snapshots.last().expect("at least the initial snapshot")
    }
}

/// Suggested Crank-Nicolson step: h_min^2 / (2 max_x max_eig D(x)).
///
/// The scheme is unconditionally stable; this keeps it accurate and the
/// undershoot negligible.
pub fn default_dt(model: &SdeModel, grid: &Grid) -> Result<f64> {
    check_dims(model, grid)?;
    let dim = grid.dim();
    let mut d = vec![0.0; dim * dim];
    let mut bs = vec![0.0; dim * model.noise_dim()];
    let mut d_max = 0.0f64;
    for node in 0..grid.len() {
        let x = grid.coord(node);
        model.diffusion_into(&x, &mut d, &mut bs);
        let eig = match dim {
            1 => d[0],
            _ => {
                let half_tr = 0.5 * (d[0] + d[3]);
                let half_diff = 0.5 * (d[0] - d[3]);
                half_tr + (half_diff * half_diff + d[1] * d[2]).max(0.0).sqrt()
            }
        };
        if !eig.is_finite() {
            return Err(Error::Evaluation { what: "diffusion", x });
        }
        d_max = d_max.max(eig);
    }
    if d_max <= 0.0 {
        return Err(Error::Domain(
            "diffusion vanishes on the whole grid; no sensible time step".into(),
        ));
    }
    let h_min = (0..dim).map(|d| grid.axis(d).spacing()).fold(f64::INFINITY, f64::min);
    Ok(h_min * h_min / (2.0 * d_max))
}

/// Evolve a density by Crank-Nicolson on the forward operator.
///
/// Takes steps of size `dt` until `t_final` (rounded to a whole number of
/// steps) and returns at most `n_snapshots` densities evenly spaced in
/// step index, the initial and final states included. Mass conservation
/// is monitored per step under no-flux boundaries.
pub fn evolve_density(
    model: &SdeModel,
    w0: &GridDensity,
    t_final: f64,
    dt: f64,
    alpha: Alpha,
    boundary: Boundary,
    n_snapshots: usize,
) -> Result<DensityEvolution> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::param("t_final", "must be positive and finite"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::param("dt", "must be positive and finite"));
    }
    if n_snapshots < 2 {
        return Err(Error::param("n_snapshots", "need at least initial and final"));
    }
    let op = build_forward(model, w0.grid(), alpha, boundary)?;
    let l = &op.matrix;
    let n = l.n();
    let steps = ((t_final / dt).round() as usize).max(1);

    // I - (dt/2) L on the left, I + (dt/2) L applied on the right.
    let a = l.identity_plus_scaled(-0.5 * dt);
    let tri = if w0.grid().dim() == 1 { a.tridiagonal() } else { None };

    let mut snap_steps: Vec<usize> = (0..n_snapshots)
        .map(|j| ((j * steps) as f64 / (n_snapshots - 1) as f64).round() as usize)
        .collect();
    snap_steps.dedup();

    let mut w: Vec<f64> = w0.values().to_vec();
    let mut lw = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let vol = w0.grid().cell_volume();
    let mass0: f64 = w.iter().sum::<f64>() * vol;
    let mut prev_mass = mass0;
    let mut max_mass_jump = 0.0f64;
    let mut first_jump_step = 0usize;
    let mut worst_lobe = 0.0f64;

    let mut snapshots = Vec::with_capacity(snap_steps.len());
    let mut next_snap = 0usize;
    if snap_steps[0] == 0 {
        snapshots.push(w0.with_values(w.clone(), 0.0));
        next_snap = 1;
    }

    for step in 1..=steps {
        l.matvec(&w, &mut lw);
        for i in 0..n {
            rhs[i] = w[i] + 0.5 * dt * lw[i];
        }
        w = match &tri {
            Some((lower, diag, upper)) => solve_tridiagonal(lower, diag, upper, &rhs)?,
            None => bicgstab(&a, &rhs, &w, 1e-12, 2000)?,
        };
        if let Some(bad) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, index: bad });
        }

        if boundary == Boundary::NoFlux {
            let mass: f64 = w.iter().sum::<f64>() * vol;
            let jump = (mass - prev_mass).abs();
            if jump > max_mass_jump {
                max_mass_jump = jump;
                first_jump_step = step;
            }
            prev_mass = mass;
        }
        let max_w = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_w = w.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_w < 0.0 {
            worst_lobe = worst_lobe.max(-min_w / max_w.max(f64::MIN_POSITIVE));
        }

        if next_snap < snap_steps.len() && step == snap_steps[next_snap] {
            snapshots.push(w0.with_values(w.clone(), step as f64 * dt));
            next_snap += 1;
        }
    }

    let mut warnings = Vec::new();
    if boundary == Boundary::NoFlux && max_mass_jump > 1e-12 * mass0.abs() {
        warnings.push(format!(
            "mass drifted by {max_mass_jump:.3e} in one step (first at step {first_jump_step}); \
             the no-flux operator should conserve mass to rounding"
        ));
    }
    if worst_lobe > 1e-6 {
        warnings.push(format!(
            "negative density lobes reached {worst_lobe:.3e} of the peak; \
             the time step is too coarse for this initial profile"
        ));
    }
    Ok(DensityEvolution { snapshots, warnings })
}

/// Location of a snapshot's maximum.
#[derive(Debug, Clone)]
pub struct ExtremumPoint {
    pub time: f64,
    /// Flat node index of the maximal cell.
    pub node: usize,
    /// Sub-cell position: cell center plus a quadratic-fit offset per axis.
    pub position: Vec<f64>,
    /// The maximum sits on the domain boundary (no refinement there).
    pub on_boundary: bool,
    /// No other node attains the same maximal value.
    pub unique: bool,
}

/// Quadratic vertex offset from three samples at spacing h; 0 when the
/// triple is not strictly concave.
fn quadratic_offset(wm: f64, w0: f64, wp: f64, h: f64) -> f64 {
    let den = wm - 2.0 * w0 + wp;
    if den < 0.0 {
        0.5 * (wm - wp) / den * h
    } else {
        0.0
    }
}

/// Track the argmax across snapshots with sub-cell quadratic refinement.
///
/// Boundary maxima are flagged and left at the cell center; ties leave
/// `unique` false and report the first maximal node.
pub fn extremum_track(snapshots: &[GridDensity]) -> Result<Vec<ExtremumPoint>> {
    if snapshots.is_empty() {
        return Err(Error::param("snapshots", "need at least one snapshot"));
    }
    let mut out = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let grid = snap.grid();
        let vals = snap.values();
        let mut node = 0usize;
        for (i, &v) in vals.iter().enumerate() {
            if v > vals[node] {
                node = i;
            }
        }
        let max = vals[node];
        let unique = vals.iter().filter(|&&v| v == max).count() == 1;
        let dim = grid.dim();
        let mut position = grid.coord(node);
        let mut on_boundary = false;
        for c in 0..dim {
            let ax = grid.axis(c);
            let (i, stride) = match dim {
                1 => (node, 1usize),
                _ => {
                    let nx = grid.axis(0).n;
                    if c == 0 {
                        (node % nx, 1)
                    } else {
                        (node / nx, nx)
                    }
                }
            };
            if i == 0 || i == ax.n - 1 {
                on_boundary = true;
            } else {
                position[c] += quadratic_offset(
                    vals[node - stride],
                    vals[node],
                    vals[node + stride],
                    ax.spacing(),
                );
            }
        }
        out.push(ExtremumPoint {
            time: snap.time(),
            node,
            position,
            on_boundary,
            unique,
        });
    }
    Ok(out)
}
