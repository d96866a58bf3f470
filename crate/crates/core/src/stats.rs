//! Statistics on simulated ensembles: histogram densities, two-sample
//! Kolmogorov-Smirnov comparison, and the transition-kernel symmetry test
//! that separates the anti-transport convention from the others.

use crate::error::{Error, Result};
use crate::integrate::{simulate_ensemble, Ensemble, Scheme};
use crate::model::{Alpha, Grid, GridDensity, SdeModel};
use crate::rng::CounterRng;

/// Sample mean and unbiased variance. Empty input gives (NaN, NaN); a
/// single sample has variance 0.
pub fn sample_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = values
        .iter()
        .map(|v| {
            let d = v - mean;
            d * d
        })
        .sum::<f64>();
    (mean, ss / (n - 1) as f64)
}

/// Histogram of sample points on a grid, kept as raw counts so that
/// normalization choices stay explicit.
#[derive(Debug, Clone)]
pub struct EmpiricalDensity {
    grid: Grid,
    counts: Vec<u64>,
    n_samples: usize,
    out_of_range: usize,
}

impl EmpiricalDensity {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total samples offered, including out-of-range ones.
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn out_of_range(&self) -> usize {
        self.out_of_range
    }

    pub fn out_of_range_fraction(&self) -> f64 {
        if self.n_samples == 0 {
            0.0
        } else {
            self.out_of_range as f64 / self.n_samples as f64
        }
    }

    /// More than 1% of the samples fell outside the grid; densities built
    /// from this histogram are conditioned on staying in range.
    pub fn has_range_warning(&self) -> bool {
        self.out_of_range_fraction() > 0.01
    }

    /// Normalized density over the in-range samples.
    pub fn density(&self) -> Result<GridDensity> {
        let in_range: u64 = self.counts.iter().sum();
        if in_range == 0 {
            return Err(Error::Domain(
                "no samples fell inside the grid; cannot normalize".into(),
            ));
        }
        let scale = 1.0 / (in_range as f64 * self.grid.cell_volume());
        let values: Vec<f64> = self.counts.iter().map(|&c| c as f64 * scale).collect();
        GridDensity::new(self.grid.clone(), values, 0.0)
    }
}

fn histogram(points: impl Iterator<Item = Vec<f64>>, grid: &Grid) -> Result<EmpiricalDensity> {
    let mut counts = vec![0u64; grid.len()];
    let mut n_samples = 0usize;
    let mut out_of_range = 0usize;
    for p in points {
        n_samples += 1;
        match grid.locate(&p) {
            Some(cell) => counts[cell] += 1,
            None => out_of_range += 1,
        }
    }
    if n_samples == 0 {
        return Err(Error::param("samples", "need at least one sample point"));
    }
    Ok(EmpiricalDensity {
        grid: grid.clone(),
        counts,
        n_samples,
        out_of_range,
    })
}

/// Histogram the finite endpoints of an ensemble.
pub fn empirical_density(ensemble: &Ensemble, grid: &Grid) -> Result<EmpiricalDensity> {
    if ensemble.state_dim != grid.dim() {
        return Err(Error::param("grid", "dimension does not match the ensemble"));
    }
    let pts = (0..ensemble.n_paths)
        .map(|p| ensemble.endpoint(p))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.to_vec());
    histogram(pts, grid)
}

/// Histogram a slice of scalar samples on a 1-D grid.
pub fn empirical_density_1d(samples: &[f64], grid: &Grid) -> Result<EmpiricalDensity> {
    if grid.dim() != 1 {
        return Err(Error::param("grid", "expected a 1-D grid"));
    }
    histogram(
        samples.iter().filter(|v| v.is_finite()).map(|&v| vec![v]),
        grid,
    )
}

/// Result of a two-sample Kolmogorov-Smirnov comparison.
#[derive(Debug, Clone, Copy)]
pub struct KsTest {
    /// Sup distance between the two empirical CDFs.
    pub statistic: f64,
    /// Asymptotic p-value for the null "same distribution".
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("samples", "both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::param("samples", "samples must be finite"));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_unstable_by(f64::total_cmp);
    xb.sort_unstable_by(f64::total_cmp);

    let (na, nb) = (xa.len(), xb.len());
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut d = 0.0f64;
    while ia < na && ib < nb {
        let v = xa[ia].min(xb[ib]);
        while ia < na && xa[ia] <= v {
            ia += 1;
        }
        while ib < nb && xb[ib] <= v {
            ib += 1;
        }
        let gap = (ia as f64 / na as f64 - ib as f64 / nb as f64).abs();
        d = d.max(gap);
    }

    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsTest {
        statistic: d,
        p_value: ks_tail(lambda),
        n_a: na,
        n_b: nb,
    })
}

/// Asymptotic KS tail probability Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
fn ks_tail(lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * l2).exp();
        sum += sign * term;
        sign = -sign;
        // Converged once the terms stop mattering; an oscillating
        // non-decaying series (lambda ~ 0) means probability 1.
        if term < 1e-12 * sum.abs() + 1e-300 {
            return (2.0 * sum).clamp(0.0, 1.0);
        }
        if term >= prev {
            return 1.0;
        }
        prev = term;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Outcome of the transition-kernel symmetry probe between two points.
#[derive(Debug, Clone, Copy)]
pub struct KernelSymmetry {
    /// Normal score of (p_forward - p_reverse); ~N(0, 1) when the kernel
    /// is symmetric.
    pub z: f64,
    /// Fraction of paths from x ending within delta of y.
    pub p_forward: f64,
    /// Fraction of paths from y ending within delta of x.
    pub p_reverse: f64,
    pub hits_forward: u64,
    pub hits_reverse: u64,
    pub n_paths: usize,
    /// Neither direction registered a hit; the statistic carries no
    /// information at this sample size.
    pub inconclusive: bool,
}

fn ball_hits(ensemble: &Ensemble, center: &[f64], delta: f64) -> (u64, usize) {
    let mut hits = 0u64;
    let mut finite = 0usize;
    for p in 0..ensemble.n_paths {
        let x = ensemble.endpoint(p);
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        finite += 1;
        let r2: f64 = x
            .iter()
            .zip(center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if r2 <= delta * delta {
            hits += 1;
        }
    }
    (hits, finite)
}

/// Compare the transition probabilities x -> ball(y, delta) and
/// y -> ball(x, delta) over time `t` for a pure-noise model.
///
/// Both directions use `n_paths` simulated paths with independent seed
/// streams derived from `seed`. For a symmetric kernel the returned `z`
/// is asymptotically standard normal; a transport-convention asymmetry
/// shows up as |z| growing with sqrt(n_paths).
#[allow(clippy::too_many_arguments)]
pub fn kernel_symmetry(
    model: &SdeModel,
    x: &[f64],
    y: &[f64],
    t: f64,
    delta: f64,
    n_paths: usize,
    dt: f64,
    alpha: Alpha,
    scheme: Scheme,
    seed: u64,
) -> Result<KernelSymmetry> {
    let dim = model.state_dim();
    if x.len() != dim || y.len() != dim {
        return Err(Error::param("x/y", "dimension does not match the model"));
    }
    if !(delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    let mut drift = vec![0.0; dim];
    for probe in [x, y] {
        model.eval_drift(probe, &mut drift);
        if drift.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::param(
                "model",
                "kernel symmetry is defined for pure-noise models (zero drift)",
            ));
        }
    }

    if x == y {
        // Same point: both probabilities are the same quantity, so the
        // score is zero by definition; still estimate the hit rate once.
        let ens = simulate_ensemble(model, x, t, dt, alpha, scheme, n_paths, derive(seed, 1))?;
        let (hits, finite) = ball_hits(&ens, y, delta);
        if finite == 0 {
            return Err(Error::Domain("all paths diverged".into()));
        }
        let p = hits as f64 / finite as f64;
        return Ok(KernelSymmetry {
            z: 0.0,
            p_forward: p,
            p_reverse: p,
            hits_forward: hits,
            hits_reverse: hits,
            n_paths,
            inconclusive: hits == 0,
        });
    }

    let forward = simulate_ensemble(model, x, t, dt, alpha, scheme, n_paths, derive(seed, 1))?;
    let reverse = simulate_ensemble(model, y, t, dt, alpha, scheme, n_paths, derive(seed, 2))?;
    let (hits_f, n_f) = ball_hits(&forward, y, delta);
    let (hits_r, n_r) = ball_hits(&reverse, x, delta);
    if n_f == 0 || n_r == 0 {
        return Err(Error::Domain("all paths diverged".into()));
    }
    let p_f = hits_f as f64 / n_f as f64;
    let p_r = hits_r as f64 / n_r as f64;
    let var = p_f * (1.0 - p_f) / n_f as f64 + p_r * (1.0 - p_r) / n_r as f64;
    let inconclusive = hits_f == 0 && hits_r == 0;
    let z = if inconclusive || p_f == p_r {
        0.0
    } else if var > 0.0 {
        (p_f - p_r) / var.sqrt()
    } else {
        // Degenerate: both rates are 0 or 1 but unequal.
        f64::INFINITY * (p_f - p_r).signum()
    };
    Ok(KernelSymmetry {
        z,
        p_forward: p_f,
        p_reverse: p_r,
        hits_forward: hits_f,
        hits_reverse: hits_r,
        n_paths,
        inconclusive,
    })
}

/// Independent sub-seed for component `tag` of a composite experiment.
pub(crate) fn derive(seed: u64, tag: u64) -> u64 {
    CounterRng::new(seed, tag).next_u64()
}
