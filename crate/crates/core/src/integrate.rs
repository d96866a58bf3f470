//! Path simulation of dX = a(X) dt + b(X) dW under any evaluation point.
//!
//! Two schemes are provided. `ItoForm` steps the drift-corrected Ito
//! equivalent
//!
//!   x' = x + b(x) dW + [a(x) + alpha a_N(x)] dt,
//!
//! which is exact in distribution to first order for every alpha.
//! `AlphaPoint` realizes the evaluation-point definition directly: the
//! increment solves dX = b(x + alpha dX) dW + a(x) dt by fixed-point
//! (Picard) iteration. The two agree to weak first order; at alpha = 0
//! they coincide bitwise (both are the explicit Euler step).
//!
//! Ensembles parallelize over paths. Every path owns a counter-based RNG
//! stream keyed by (master seed, path index) and writes results by index,
//! so output is reproducible bit for bit regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Alpha, SdeModel};
use crate::noise_drift::{a_n_from_b_into, DriftScratch};
use crate::rng::CounterRng;

/// Pre-drawn Wiener increments: `steps` rows of `noise_dim` i.i.d.
/// Gaussians with variance `dt`.
#[derive(Debug, Clone)]
pub struct WienerIncrements {
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub noise_dim: usize,
    increments: Vec<f64>,
}

impl WienerIncrements {
    #[inline]
    pub fn row(&self, step: usize) -> &[f64] {
        &self.increments[step * self.noise_dim..(step + 1) * self.noise_dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.increments
    }
}

/// Draw `steps x noise_dim` independent increments, deterministic in `seed`.
pub fn wiener_increments(
    seed: u64,
    noise_dim: usize,
    dt: f64,
    steps: usize,
) -> Result<WienerIncrements> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    if steps == 0 {
        return Err(Error::param("steps", "must be at least 1"));
    }
    if noise_dim == 0 {
        return Err(Error::param("noise_dim", "must be at least 1"));
    }
    let mut rng = CounterRng::new(seed, 0);
    let sqrt_dt = dt.sqrt();
    let increments = (0..steps * noise_dim)
        .map(|_| rng.normal_scaled(sqrt_dt))
        .collect();
    Ok(WienerIncrements {
        seed,
        dt,
        steps,
        noise_dim,
        increments,
    })
}

/// Which update rule advances a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Drift-corrected Ito-equivalent step.
    ItoForm,
    /// Evaluation-point step solved by fixed-point iteration.
    AlphaPoint { picard_iters: usize },
}

impl Scheme {
    /// The evaluation-point scheme with the default two Picard updates.
    pub fn alpha_point() -> Scheme {
        Scheme::AlphaPoint { picard_iters: 2 }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::ItoForm => "ito_form",
            Scheme::AlphaPoint { .. } => "alpha_point",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        match s {
            "ito_form" => Ok(Scheme::ItoForm),
            "alpha_point" => Ok(Scheme::alpha_point()),
            other => Err(Error::param(
                "scheme",
                format!("unknown scheme '{other}' (expected ito_form or alpha_point)"),
            )),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Reusable buffers for the inner stepping loops.
struct StepScratch {
    a: Vec<f64>,
    b: Vec<f64>,
    a_n: Vec<f64>,
    x_try: Vec<f64>,
    dx: Vec<f64>,
    drift: DriftScratch,
}

impl StepScratch {
    fn for_model(model: &SdeModel) -> StepScratch {
        let (n, m) = (model.state_dim(), model.noise_dim());
        StepScratch {
            a: vec![0.0; n],
            b: vec![0.0; n * m],
            a_n: vec![0.0; n],
            x_try: vec![0.0; n],
            dx: vec![0.0; n],
            drift: DriftScratch::for_model(model),
        }
    }
}

fn check_step_args(model: &SdeModel, x: &[f64], dt: f64, dw: &[f64]) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    if x.len() != model.state_dim() {
        return Err(Error::param("x", "dimension does not match the model"));
    }
    if dw.len() != model.noise_dim() {
        return Err(Error::param("dw", "length does not match noise_dim"));
    }
    Ok(())
}

fn ito_form_into(
    model: &SdeModel,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    alpha: Alpha,
    s: &mut StepScratch,
    out: &mut [f64],
) -> std::result::Result<(), usize> {
    let (n, m) = (model.state_dim(), model.noise_dim());
    model.eval_noise(x, &mut s.b);
    model.eval_drift(x, &mut s.a);
    for i in 0..n {
        let mut v = x[i] + s.a[i] * dt;
        for k in 0..m {
            v += s.b[i * m + k] * dw[k];
        }
        out[i] = v;
    }
    // The correction vanishes identically at alpha = 0; skipping it keeps
    // the step bitwise equal to plain explicit Euler.
    if alpha.value() != 0.0 {
        a_n_from_b_into(model, x, &mut s.a_n, &mut s.drift);
        for i in 0..n {
            out[i] += alpha.value() * s.a_n[i] * dt;
        }
    }
    for (i, v) in out.iter().enumerate() {
        if !v.is_finite() {
            return Err(i);
        }
    }
    Ok(())
}

fn alpha_point_into(
    model: &SdeModel,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    alpha: Alpha,
    picard_iters: usize,
    s: &mut StepScratch,
    out: &mut [f64],
) -> std::result::Result<(), (usize, usize)> {
    let (n, m) = (model.state_dim(), model.noise_dim());
    model.eval_noise(x, &mut s.b);
    model.eval_drift(x, &mut s.a);
    for i in 0..n {
        let mut v = s.a[i] * dt;
        for k in 0..m {
            v += s.b[i * m + k] * dw[k];
        }
        s.dx[i] = v;
    }
    // alpha = 0 is already the fixed point of the update map.
    if alpha.value() != 0.0 {
        for iter in 1..=picard_iters {
            for i in 0..n {
                s.x_try[i] = x[i] + alpha.value() * s.dx[i];
            }
            model.eval_noise(&s.x_try, &mut s.b);
            for i in 0..n {
                let mut v = s.a[i] * dt;
                for k in 0..m {
                    v += s.b[i * m + k] * dw[k];
                }
                s.dx[i] = v;
            }
            for (i, v) in s.dx.iter().enumerate() {
                if !v.is_finite() {
                    return Err((iter, i));
                }
            }
        }
    }
    for i in 0..n {
        out[i] = x[i] + s.dx[i];
        if !out[i].is_finite() {
            return Err((picard_iters, i));
        }
    }
    Ok(())
}

/// One drift-corrected Ito-equivalent step.
pub fn step_ito_form(
    model: &SdeModel,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    alpha: Alpha,
) -> Result<Vec<f64>> {
    check_step_args(model, x, dt, dw)?;
    let mut s = StepScratch::for_model(model);
    let mut out = vec![0.0; model.state_dim()];
    ito_form_into(model, x, dt, dw, alpha, &mut s, &mut out)
        .map_err(|index| Error::Divergence { step: 0, index })?;
    Ok(out)
}

/// One evaluation-point step: dX solves dX = b(x + alpha dX) dW + a(x) dt
/// by `picard_iters` fixed-point updates from dX0 = b(x) dW + a(x) dt.
pub fn step_alpha_point(
    model: &SdeModel,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    alpha: Alpha,
    picard_iters: usize,
) -> Result<Vec<f64>> {
    check_step_args(model, x, dt, dw)?;
    if picard_iters == 0 {
        return Err(Error::param("picard_iters", "must be at least 1"));
    }
    let mut s = StepScratch::for_model(model);
    let mut out = vec![0.0; model.state_dim()];
    alpha_point_into(model, x, dt, dw, alpha, picard_iters, &mut s, &mut out)
        .map_err(|(step, index)| Error::Divergence { step, index })?;
    Ok(out)
}

/// A path that left the finite range, with the time-step index where it
/// happened. Its endpoint slots are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathFailure {
    pub path: usize,
    pub step: usize,
}

/// Seeded collection of simulated endpoints.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub model_name: String,
    pub alpha: Alpha,
    pub scheme: Scheme,
    pub x0: Vec<f64>,
    pub t: f64,
    /// Actual step used; the requested dt is rounded so steps * dt = t.
    pub dt: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub state_dim: usize,
    pub master_seed: u64,
    endpoints: Vec<f64>,
    pub failures: Vec<PathFailure>,
}

impl Ensemble {
    /// Row-major `n_paths x state_dim` endpoint matrix.
    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    pub fn endpoint(&self, path: usize) -> &[f64] {
        &self.endpoints[path * self.state_dim..(path + 1) * self.state_dim]
    }

    /// All finite values of one state component.
    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.n_paths)
            .map(|p| self.endpoints[p * self.state_dim + c])
            .filter(|v| v.is_finite())
            .collect()
    }

    /// Sample mean and unbiased variance of one component (finite paths).
    pub fn moments(&self, c: usize) -> (f64, f64) {
        crate::stats::sample_moments(&self.component(c))
    }
}

struct RunSpec<'a> {
    model: &'a SdeModel,
    alpha: Alpha,
    scheme: Scheme,
    x0: &'a [f64],
    dt: f64,
    steps: usize,
    seed: u64,
}

/// Advance one path; on divergence reports the failing step. `record`, when
/// present, receives the state after every step ((steps+1) * dim values,
/// starting with x0).
fn run_path(
    spec: &RunSpec<'_>,
    path: usize,
    endpoint: &mut [f64],
    mut record: Option<&mut [f64]>,
) -> std::result::Result<(), usize> {
    let dim = spec.model.state_dim();
    let m = spec.model.noise_dim();
    let mut rng = CounterRng::new(spec.seed, path as u64);
    let mut scratch = StepScratch::for_model(spec.model);
    let mut x = spec.x0.to_vec();
    let mut x_next = vec![0.0; dim];
    let mut dw = vec![0.0; m];
    let sqrt_dt = spec.dt.sqrt();
    if let Some(rec) = record.as_deref_mut() {
        rec[..dim].copy_from_slice(&x);
    }
    for step in 0..spec.steps {
        for w in dw.iter_mut() {
            *w = rng.normal_scaled(sqrt_dt);
        }
        let ok = match spec.scheme {
            Scheme::ItoForm => {
                ito_form_into(spec.model, &x, spec.dt, &dw, spec.alpha, &mut scratch, &mut x_next)
                    .map_err(|_| step)
            }
            Scheme::AlphaPoint { picard_iters } => alpha_point_into(
                spec.model,
                &x,
                spec.dt,
                &dw,
                spec.alpha,
                picard_iters,
                &mut scratch,
                &mut x_next,
            )
            .map_err(|_| step),
        };
        if let Err(failed_step) = ok {
            endpoint.fill(f64::NAN);
            return Err(failed_step);
        }
        std::mem::swap(&mut x, &mut x_next);
        if let Some(rec) = record.as_deref_mut() {
            rec[(step + 1) * dim..(step + 2) * dim].copy_from_slice(&x);
        }
    }
    endpoint.copy_from_slice(&x);
    Ok(())
}

fn check_sim_args(model: &SdeModel, x0: &[f64], t: f64, dt: f64, n_paths: usize) -> Result<usize> {
    if x0.len() != model.state_dim() {
        return Err(Error::param("x0", "dimension does not match the model"));
    }
    if !(t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    if !(dt > 0.0) || dt > t {
        return Err(Error::param("dt", "need 0 < dt <= t"));
    }
    if n_paths == 0 {
        return Err(Error::param("n_paths", "must be at least 1"));
    }
    // Round to an integer number of steps covering exactly [0, t].
    Ok(((t / dt).round() as usize).max(1))
}

/// Simulate `n_paths` independent paths and keep the endpoints.
///
/// Reproducible: identical (seed, parameters) produce bitwise-identical
/// endpoints, independent of thread count. Diverged paths are recorded in
/// `failures` and the run continues.
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    model: &SdeModel,
    x0: &[f64],
    t: f64,
    dt: f64,
    alpha: Alpha,
    scheme: Scheme,
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    let steps = check_sim_args(model, x0, t, dt, n_paths)?;
    let dt_eff = t / steps as f64;
    let dim = model.state_dim();
    let spec = RunSpec {
        model,
        alpha,
        scheme,
        x0,
        dt: dt_eff,
        steps,
        seed,
    };
    let mut endpoints = vec![0.0; n_paths * dim];
    let failures: Vec<PathFailure> = endpoints
        .par_chunks_mut(dim)
        .enumerate()
        .filter_map(|(path, endpoint)| {
            run_path(&spec, path, endpoint, None)
                .err()
                .map(|step| PathFailure { path, step })
        })
        .collect();
    Ok(Ensemble {
        model_name: model.name().to_string(),
        alpha,
        scheme,
        x0: x0.to_vec(),
        t,
        dt: dt_eff,
        steps,
        n_paths,
        state_dim: dim,
        master_seed: seed,
        endpoints,
        failures,
    })
}

/// Full trajectories for a (small) ensemble: `n_paths` blocks of
/// `(steps+1) x state_dim` states, starting at x0. Path `i` here is
/// bitwise identical to path `i` of [`simulate_ensemble`] with the same
/// seed and parameters.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub state_dim: usize,
    data: Vec<f64>,
    pub failures: Vec<PathFailure>,
}

impl PathSet {
    pub fn path(&self, i: usize) -> &[f64] {
        let block = self.times.len() * self.state_dim;
        &self.data[i * block..(i + 1) * block]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_paths(
    model: &SdeModel,
    x0: &[f64],
    t: f64,
    dt: f64,
    alpha: Alpha,
    scheme: Scheme,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    let steps = check_sim_args(model, x0, t, dt, n_paths)?;
    let dt_eff = t / steps as f64;
    let dim = model.state_dim();
    let spec = RunSpec {
        model,
        alpha,
        scheme,
        x0,
        dt: dt_eff,
        steps,
        seed,
    };
    let block = (steps + 1) * dim;
    let mut data = vec![0.0; n_paths * block];
    let mut endpoint = vec![0.0; dim];
    let mut failures = Vec::new();
    for path in 0..n_paths {
        if let Err(step) = run_path(
            &spec,
            path,
            &mut endpoint,
            Some(&mut data[path * block..(path + 1) * block]),
        ) {
            failures.push(PathFailure { path, step });
        }
    }
    Ok(PathSet {
        times: (0..=steps).map(|i| i as f64 * dt_eff).collect(),
        n_paths,
        state_dim: dim,
        data,
        failures,
    })
}

/// Monte-Carlo samples of the discretized integral of W dW: each sample is
/// sum_i W(tau_i + alpha dtau) dW_i with W linearly interpolated inside
/// the subinterval, i.e. sum_i (W_i + alpha dW_i) dW_i.
///
/// The sample mean converges to alpha * t; the variance to t^2/2 for
/// every alpha.
pub fn wdw_samples(seed: u64, t: f64, steps: usize, alpha: Alpha, n: usize) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    if steps < 100 {
        return Err(Error::param("steps", "need at least 100 subintervals"));
    }
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let dtau = t / steps as f64;
    let sqrt_dtau = dtau.sqrt();
    let a = alpha.value();
    let mut samples = vec![0.0; n];
    samples
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, out)| {
            let mut rng = CounterRng::new(seed, i as u64);
            let mut w = 0.0;
            let mut acc = 0.0;
            for _ in 0..steps {
                let dw = rng.normal_scaled(sqrt_dtau);
                acc += (w + a * dw) * dw;
                w += dw;
            }
            *out = acc;
        });
    Ok(samples)
}
