//! SDE problem statement: drift and noise fields, derived diffusion,
//! and the uniform grids densities live on.
//!
//! A model is dX^i = a^i(x) dt + b^{ik}(x) dW_k with state dimension `n`
//! and noise dimension `m`. Fields are stored as shareable closures so a
//! model is immutable after construction and safe to evaluate from any
//! thread. The diffusion matrix D = b b^T is always derived, never stored.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Evaluation-point parameter of the stochastic integral, in [0, 1].
///
/// 0 selects the beginning of each partition interval (Ito), 1/2 the
/// midpoint (Stratonovich), 1 the end (anti-Ito).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha(f64);

impl Alpha {
    pub const ITO: Alpha = Alpha(0.0);
    pub const STRATONOVICH: Alpha = Alpha(0.5);
    pub const ANTI_ITO: Alpha = Alpha(1.0);

    pub fn new(value: f64) -> Result<Alpha> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::param(
                "alpha",
                format!("value {value} violates 0 <= alpha <= 1"),
            ));
        }
        Ok(Alpha(value))
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.0
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Finite-difference step for derivative fallbacks: max(1e-5, 1e-5 |x|)
/// per component.
#[inline]
pub(crate) fn fd_step(x: f64) -> f64 {
    f64::max(1e-5, 1e-5 * x.abs())
}

/// An SDE dX = a(X) dt + b(X) dW.
///
/// `drift` fills an n-vector, `noise` fills a row-major n x m matrix, and
/// the optional analytic `noise_jacobian` fills db[i][k]/dx[j] at index
/// `(i*m + k)*n + j`. When no analytic Jacobian is supplied, derivative
/// consumers fall back to central finite differences.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    state_dim: usize,
    noise_dim: usize,
    drift: FieldFn,
    noise: FieldFn,
    noise_jacobian: Option<FieldFn>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("analytic_jacobian", &self.noise_jacobian.is_some())
            .finish()
    }
}

impl SdeModel {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        noise_dim: usize,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        noise: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<SdeModel> {
        if state_dim == 0 {
            return Err(Error::param("state_dim", "must be positive"));
        }
        if noise_dim == 0 {
            return Err(Error::param("noise_dim", "must be positive"));
        }
        Ok(SdeModel {
            name: name.into(),
            state_dim,
            noise_dim,
            drift: Arc::new(drift),
            noise: Arc::new(noise),
            noise_jacobian: None,
        })
    }

    /// Attach an analytic noise Jacobian db/dx.
    pub fn with_noise_jacobian(
        mut self,
        jacobian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> SdeModel {
        self.noise_jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.noise_jacobian.is_some()
    }

    /// A copy of this model with the external drift set to zero.
    pub fn without_drift(&self) -> SdeModel {
        let mut copy = self.clone();
        copy.name = format!("{}:pure-noise", self.name);
        copy.drift = Arc::new(|_x, out| out.fill(0.0));
        copy
    }

    #[inline]
    pub fn eval_drift(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.state_dim);
        debug_assert_eq!(out.len(), self.state_dim);
        (self.drift)(x, out);
    }

    /// Fill `out` (row-major n x m) with b(x).
    #[inline]
    pub fn eval_noise(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.state_dim);
        debug_assert_eq!(out.len(), self.state_dim * self.noise_dim);
        (self.noise)(x, out);
    }

    /// Fill `out` with db[i][k]/dx[j] at index `(i*m + k)*n + j`, using the
    /// analytic Jacobian when present and central differences otherwise.
    pub fn noise_jacobian_at(&self, x: &[f64], out: &mut [f64]) {
        let (n, m) = (self.state_dim, self.noise_dim);
        debug_assert_eq!(out.len(), n * m * n);
        if let Some(jac) = &self.noise_jacobian {
            jac(x, out);
            return;
        }
        let mut xp = x.to_vec();
        let mut bp = vec![0.0; n * m];
        let mut bm = vec![0.0; n * m];
        for j in 0..n {
            let h = fd_step(x[j]);
            xp[j] = x[j] + h;
            (self.noise)(&xp, &mut bp);
            xp[j] = x[j] - h;
            (self.noise)(&xp, &mut bm);
            xp[j] = x[j];
            for ik in 0..n * m {
                out[ik * n + j] = (bp[ik] - bm[ik]) / (2.0 * h);
            }
        }
    }

    /// The diffusion matrix D(x) = b(x) b(x)^T.
    pub fn diffusion_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (n, m) = (self.state_dim, self.noise_dim);
        let mut b = vec![0.0; n * m];
        self.eval_noise(x, &mut b);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                what: "noise",
                x: x.to_vec(),
            });
        }
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..=i {
                let mut s = 0.0;
                for j in 0..m {
                    s += b[i * m + j] * b[k * m + j];
                }
                d[(i, k)] = s;
                d[(k, i)] = s;
            }
        }
        Ok(d)
    }

    /// Scratch-friendly variant of [`diffusion_at`](Self::diffusion_at):
    /// fills `d` (row-major n x n) using `b_scratch` of length n*m.
    pub(crate) fn diffusion_into(&self, x: &[f64], d: &mut [f64], b_scratch: &mut [f64]) {
        let (n, m) = (self.state_dim, self.noise_dim);
        self.eval_noise(x, b_scratch);
        for i in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for j in 0..m {
                    s += b_scratch[i * m + j] * b_scratch[k * m + j];
                }
                d[i * n + k] = s;
            }
        }
    }
}

/// Per-probe outcome of [`validate_model`].
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub x: Vec<f64>,
    pub drift_finite: bool,
    pub noise_finite: bool,
    /// Smallest eigenvalue of D(x).
    pub d_min_eigenvalue: f64,
    pub d_max_abs: f64,
    /// D(x) is positive semidefinite up to -1e-10 * max|D|.
    pub psd_ok: bool,
    /// Max |analytic - finite difference| over Jacobian entries, when an
    /// analytic Jacobian is attached.
    pub jacobian_discrepancy: Option<f64>,
    pub jacobian_ok: bool,
    /// D(x) has a (near-)zero eigenvalue; allowed but worth flagging.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub probes: Vec<ProbeReport>,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.probes
            .iter()
            .all(|p| p.drift_finite && p.noise_finite && p.psd_ok && p.jacobian_ok)
    }

    pub fn max_jacobian_discrepancy(&self) -> Option<f64> {
        self.probes
            .iter()
            .filter_map(|p| p.jacobian_discrepancy)
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.max(d))))
    }
}

/// Check a model at the given probe points: finiteness of the fields, the
/// PSD property of D, and (when an analytic Jacobian is attached) its
/// agreement with central finite differences. Failures become report
/// entries, not errors.
pub fn validate_model(model: &SdeModel, probes: &[Vec<f64>]) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(Error::param("probes", "need at least one probe point"));
    }
    let (n, m) = (model.state_dim(), model.noise_dim());
    let mut reports = Vec::with_capacity(probes.len());
    for x in probes {
        if x.len() != n {
            return Err(Error::param("probes", format!("probe dim {} != {n}", x.len())));
        }
        let mut a = vec![0.0; n];
        model.eval_drift(x, &mut a);
        let drift_finite = a.iter().all(|v| v.is_finite());

        let mut b = vec![0.0; n * m];
        model.eval_noise(x, &mut b);
        let noise_finite = b.iter().all(|v| v.is_finite());

        let (d_min, d_max, psd_ok, degenerate) = if noise_finite {
            let d = model.diffusion_at(x)?;
            let d_max = d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let eigs = d.clone().symmetric_eigenvalues();
            let d_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            let psd_ok = d_min >= -1e-10 * d_max.max(1.0);
            let degenerate = d_min.abs() <= 1e-12 * d_max.max(1.0);
            (d_min, d_max, psd_ok, degenerate)
        } else {
            (f64::NAN, f64::NAN, false, false)
        };

        let (jac_disc, jac_ok) = match (&model.noise_jacobian, noise_finite) {
            (Some(jac), true) => {
                let mut analytic = vec![0.0; n * m * n];
                jac(x, &mut analytic);
                let mut fd = vec![0.0; n * m * n];
                let stripped = SdeModel {
                    noise_jacobian: None,
                    ..model.clone()
                };
                stripped.noise_jacobian_at(x, &mut fd);
                let disc = analytic
                    .iter()
                    .zip(&fd)
                    .map(|(a, f)| (a - f).abs())
                    .fold(0.0f64, f64::max);
                let scale = fd.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
                (Some(disc), disc <= 1e-5 * scale)
            }
            _ => (None, true),
        };

        reports.push(ProbeReport {
            x: x.clone(),
            drift_finite,
            noise_finite,
            d_min_eigenvalue: d_min,
            d_max_abs: d_max,
            psd_ok,
            jacobian_discrepancy: jac_disc,
            jacobian_ok: jac_ok,
            degenerate,
        });
    }
    Ok(ValidationReport { probes: reports })
}

/// One axis of a uniform grid: `n` cells of width `(hi - lo) / n`,
/// cell centers at `lo + (i + 1/2) h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.spacing()
    }

    /// Cell index containing `x`, or None when outside [lo, hi).
    #[inline]
    pub fn locate(&self, x: f64) -> Option<usize> {
        if x < self.lo || x >= self.hi {
            return None;
        }
        let i = ((x - self.lo) / self.spacing()) as usize;
        Some(i.min(self.n - 1))
    }
}

/// Uniform cell-centered grid in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new_1d(lo: f64, hi: f64, n: usize) -> Result<Grid> {
        Grid::new(vec![Axis { lo, hi, n }])
    }

    pub fn new_2d(x: (f64, f64, usize), y: (f64, f64, usize)) -> Result<Grid> {
        Grid::new(vec![
            Axis {
                lo: x.0,
                hi: x.1,
                n: x.2,
            },
            Axis {
                lo: y.0,
                hi: y.1,
                n: y.2,
            },
        ])
    }

    pub fn new(axes: Vec<Axis>) -> Result<Grid> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::param("grid", "dimension must be 1 or 2"));
        }
        for ax in &axes {
            if !(ax.hi > ax.lo) || !ax.lo.is_finite() || !ax.hi.is_finite() {
                return Err(Error::param("grid", "axis needs finite bounds with hi > lo"));
            }
            if ax.n < 8 {
                return Err(Error::param("grid", "need at least 8 points per axis"));
            }
        }
        Ok(Grid { axes })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn axis(&self, d: usize) -> &Axis {
        &self.axes[d]
    }

    /// Total number of cells.
    #[inline]
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume h^d.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).product()
    }

    /// Flatten a 2-D index; in 1-D pass iy = 0.
    #[inline]
    pub fn flat(&self, ix: usize, iy: usize) -> usize {
        match self.dim() {
            1 => ix,
            _ => ix + self.axes[0].n * iy,
        }
    }

    /// Cell center coordinates of the flat index.
    pub fn coord(&self, flat: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.axes[0].center(flat)],
            _ => {
                let nx = self.axes[0].n;
                vec![self.axes[0].center(flat % nx), self.axes[1].center(flat / nx)]
            }
        }
    }

    /// Flat cell index containing x, or None when off-grid.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        match self.dim() {
            1 => self.axes[0].locate(x[0]),
            _ => {
                let ix = self.axes[0].locate(x[0])?;
                let iy = self.axes[1].locate(x[1])?;
                Some(self.flat(ix, iy))
            }
        }
    }
}

/// Nonnegative density on a grid, normalized so that sum(w) h^d = 1.
#[derive(Debug, Clone)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
    time: f64,
}

impl GridDensity {
    /// Wrap already-normalized values; rejects negative lobes below -1e-12
    /// of the peak and total mass off by more than 1e-9.
    pub fn new(grid: Grid, values: Vec<f64>, time: f64) -> Result<GridDensity> {
        if values.len() != grid.len() {
            return Err(Error::param("values", "length does not match grid"));
        }
        let peak = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        if values.iter().any(|&v| v < -1e-12 * peak) {
            return Err(Error::param("values", "negative density values"));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::param(
                "values",
                format!("total mass {mass} not within 1e-9 of 1"),
            ));
        }
        Ok(GridDensity { grid, values, time })
    }

    /// Normalize arbitrary nonnegative values into a density.
    pub fn from_unnormalized(grid: Grid, mut values: Vec<f64>, time: f64) -> Result<GridDensity> {
        if values.len() != grid.len() {
            return Err(Error::param("values", "length does not match grid"));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::param("values", "mass must be positive and finite"));
        }
        for v in &mut values {
            *v /= mass;
        }
        GridDensity::new(grid, values, time)
    }

    /// Gaussian profile with the given mean and variance per axis,
    /// normalized on the grid.
    pub fn gaussian(grid: Grid, mean: &[f64], variance: &[f64]) -> Result<GridDensity> {
        if mean.len() != grid.dim() || variance.len() != grid.dim() {
            return Err(Error::param("mean", "dimension mismatch"));
        }
        if variance.iter().any(|&v| v <= 0.0) {
            return Err(Error::param("variance", "must be positive"));
        }
        let values: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let x = grid.coord(idx);
                let mut e = 0.0;
                for d in 0..grid.dim() {
                    let z = x[d] - mean[d];
                    e += z * z / (2.0 * variance[d]);
                }
                (-e).exp()
            })
            .collect();
        GridDensity::from_unnormalized(grid, values, 0.0)
    }

    /// Unit point mass at `x`, split over the two nearest cells per axis so
    /// the discrete mean matches `x` exactly.
    pub fn point_mass(grid: Grid, x: &[f64]) -> Result<GridDensity> {
        if x.len() != grid.dim() {
            return Err(Error::param("x", "dimension mismatch"));
        }
        // Per-axis pair (index, weight), linear split between neighbors.
        let mut axis_splits: Vec<[(usize, f64); 2]> = Vec::new();
        for d in 0..grid.dim() {
            let ax = grid.axis(d);
            let h = ax.spacing();
            let s = (x[d] - ax.lo) / h - 0.5; // fractional center index
            if s < 0.0 || s > (ax.n - 1) as f64 {
                return Err(Error::Domain(format!(
                    "point {x:?} too close to the grid boundary for a mean-preserving split"
                )));
            }
            let i0 = (s.floor() as usize).min(ax.n - 2);
            let frac = s - i0 as f64;
            axis_splits.push([(i0, 1.0 - frac), (i0 + 1, frac)]);
        }
        let mut values = vec![0.0; grid.len()];
        let vol = grid.cell_volume();
        match grid.dim() {
            1 => {
                for (i, wgt) in axis_splits[0] {
                    values[i] += wgt / vol;
                }
            }
            _ => {
                for (ix, wx) in axis_splits[0] {
                    for (iy, wy) in axis_splits[1] {
                        values[grid.flat(ix, iy)] += wx * wy / vol;
                    }
                }
            }
        }
        GridDensity::new(grid, values, 0.0)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values with sub-rounding negative lobes clamped to zero.
    pub fn clamped_values(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v.max(0.0)).collect()
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean of the marginal along `axis`.
    pub fn mean(&self, axis: usize) -> f64 {
        let vol = self.grid.cell_volume();
        (0..self.grid.len())
            .map(|i| self.grid.coord(i)[axis] * self.values[i] * vol)
            .sum()
    }

    /// Variance of the marginal along `axis`.
    pub fn variance(&self, axis: usize) -> f64 {
        let mu = self.mean(axis);
        let vol = self.grid.cell_volume();
        (0..self.grid.len())
            .map(|i| {
                let z = self.grid.coord(i)[axis] - mu;
                z * z * self.values[i] * vol
            })
            .sum()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>, time: f64) -> GridDensity {
        GridDensity {
            grid: self.grid.clone(),
            values,
            time,
        }
    }
}
