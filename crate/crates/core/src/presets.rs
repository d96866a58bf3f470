//! Built-in model catalog.
//!
//! Each preset builds an [`SdeModel`] with an analytic noise Jacobian and
//! carries a suggested grid box for density work. Parameters are passed by
//! name; unknown names are rejected so typos in config files surface early.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::SdeModel;

/// One tunable parameter of a preset.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub doc: &'static str,
}

/// Catalog entry: identity, parameters, and the box a grid should cover
/// when no explicit domain is configured.
#[derive(Debug, Clone)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub state_dim: usize,
    pub params: &'static [ParamSpec],
    /// (lo, hi) per axis.
    pub default_domain: &'static [(f64, f64)],
}

const LINEAR_NOISE_PARAMS: &[ParamSpec] = &[ParamSpec {
    name: "sigma",
    default: 1.0,
    doc: "noise slope in b(x) = sigma * x",
}];

const OU_PARAMS: &[ParamSpec] = &[
    ParamSpec {
        name: "k",
        default: 1.0,
        doc: "restoring rate in a(x) = -k x",
    },
    ParamSpec {
        name: "d0",
        default: 2.0,
        doc: "constant diffusion D = d0",
    },
];

const TANH_DIFFUSION_PARAMS: &[ParamSpec] = &[ParamSpec {
    name: "c",
    default: 0.9,
    doc: "modulation depth in b(x) = 1 + c tanh(x), |c| < 1",
}];

const DOUBLE_WELL_PARAMS: &[ParamSpec] = &[ParamSpec {
    name: "epsilon",
    default: 0.05,
    doc: "noise strength in D(x) = epsilon (1 + x^2/2)",
}];

const SIN_DIFFUSION_PARAMS: &[ParamSpec] = &[ParamSpec {
    name: "c",
    default: 0.5,
    doc: "modulation depth in D(x) = 1 + c sin(x), |c| < 1",
}];

const PLANAR_PARAMS: &[ParamSpec] = &[
    ParamSpec {
        name: "c",
        default: 0.5,
        doc: "modulation depth in b_ii = 1 + c tanh(x_i), |c| < 1",
    },
    ParamSpec {
        name: "k",
        default: 0.0,
        doc: "restoring rate in a = -k x",
    },
];

const CATALOG: &[PresetInfo] = &[
    PresetInfo {
        name: "linear-noise",
        summary: "pure multiplicative noise b(x) = sigma x on the half line",
        state_dim: 1,
        params: LINEAR_NOISE_PARAMS,
        default_domain: &[(0.0, 5.0)],
    },
    PresetInfo {
        name: "ou",
        summary: "linear drift with constant diffusion",
        state_dim: 1,
        params: OU_PARAMS,
        default_domain: &[(-6.0, 6.0)],
    },
    PresetInfo {
        name: "tanh-diffusion",
        summary: "driftless state-dependent diffusion, smooth and bounded",
        state_dim: 1,
        params: TANH_DIFFUSION_PARAMS,
        default_domain: &[(-4.0, 4.0)],
    },
    PresetInfo {
        name: "double-well",
        summary: "bistable drift with weak state-dependent noise",
        state_dim: 1,
        params: DOUBLE_WELL_PARAMS,
        default_domain: &[(-2.0, 2.0)],
    },
    PresetInfo {
        name: "sin-diffusion",
        summary: "driftless oscillatory diffusion, useful for operator checks",
        state_dim: 1,
        params: SIN_DIFFUSION_PARAMS,
        default_domain: &[(-3.0, 3.0)],
    },
    PresetInfo {
        name: "planar",
        summary: "2-D diagonal tanh-modulated noise, optional linear drift",
        state_dim: 2,
        params: PLANAR_PARAMS,
        default_domain: &[(-3.0, 3.0), (-3.0, 3.0)],
    },
];

/// All built-in presets, in catalog order.
pub fn registry() -> &'static [PresetInfo] {
    CATALOG
}

/// Look up a catalog entry by name.
pub fn info(name: &str) -> Result<&'static PresetInfo> {
    CATALOG
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::param("preset", format!("unknown preset '{name}'")))
}

/// Merge caller overrides into the preset defaults, rejecting unknown names.
fn resolve_params(
    info: &PresetInfo,
    overrides: &BTreeMap<String, f64>,
) -> Result<BTreeMap<&'static str, f64>> {
    let mut out: BTreeMap<&'static str, f64> =
        info.params.iter().map(|p| (p.name, p.default)).collect();
    for (name, value) in overrides {
        let spec = info
            .params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| {
                Error::param(
                    "params",
                    format!("preset '{}' has no parameter '{name}'", info.name),
                )
            })?;
        if !value.is_finite() {
            return Err(Error::param("params", format!("'{name}' must be finite")));
        }
        out.insert(spec.name, *value);
    }
    Ok(out)
}

fn check_depth(name: &str, c: f64) -> Result<()> {
    if c.abs() >= 1.0 {
        return Err(Error::param(
            "params",
            format!("'{name}' must satisfy |{name}| < 1 to keep the noise positive"),
        ));
    }
    Ok(())
}

/// Build a preset model with parameter overrides.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<SdeModel> {
    let info = info(name)?;
    let p = resolve_params(info, overrides)?;
    match name {
        "linear-noise" => {
            let sigma = p["sigma"];
            if sigma <= 0.0 {
                return Err(Error::param("params", "'sigma' must be positive"));
            }
            Ok(SdeModel::new(
                "linear-noise",
                1,
                1,
                |_x, a| a[0] = 0.0,
                move |x, b| b[0] = sigma * x[0],
            )?
            .with_noise_jacobian(move |_x, j| j[0] = sigma))
        }
        "ou" => {
            let k = p["k"];
            let d0 = p["d0"];
            if d0 <= 0.0 {
                return Err(Error::param("params", "'d0' must be positive"));
            }
            let b0 = d0.sqrt();
            Ok(SdeModel::new(
                "ou",
                1,
                1,
                move |x, a| a[0] = -k * x[0],
                move |_x, b| b[0] = b0,
            )?
            .with_noise_jacobian(|_x, j| j[0] = 0.0))
        }
        "tanh-diffusion" => {
            let c = p["c"];
            check_depth("c", c)?;
            Ok(SdeModel::new(
                "tanh-diffusion",
                1,
                1,
                |_x, a| a[0] = 0.0,
                move |x, b| b[0] = 1.0 + c * x[0].tanh(),
            )?
            .with_noise_jacobian(move |x, j| {
                let t = x[0].tanh();
                j[0] = c * (1.0 - t * t);
            }))
        }
        "double-well" => {
            let eps = p["epsilon"];
            if eps <= 0.0 {
                return Err(Error::param("params", "'epsilon' must be positive"));
            }
            Ok(SdeModel::new(
                "double-well",
                1,
                1,
                |x, a| a[0] = x[0] - x[0] * x[0] * x[0],
                move |x, b| b[0] = (eps * (1.0 + 0.5 * x[0] * x[0])).sqrt(),
            )?
            .with_noise_jacobian(move |x, j| {
                j[0] = 0.5 * eps * x[0] / (eps * (1.0 + 0.5 * x[0] * x[0])).sqrt();
            }))
        }
        "sin-diffusion" => {
            let c = p["c"];
            check_depth("c", c)?;
            Ok(SdeModel::new(
                "sin-diffusion",
                1,
                1,
                |_x, a| a[0] = 0.0,
                move |x, b| b[0] = (1.0 + c * x[0].sin()).sqrt(),
            )?
            .with_noise_jacobian(move |x, j| {
                j[0] = 0.5 * c * x[0].cos() / (1.0 + c * x[0].sin()).sqrt();
            }))
        }
        "planar" => {
            let c = p["c"];
            let k = p["k"];
            check_depth("c", c)?;
            Ok(SdeModel::new(
                "planar",
                2,
                2,
                move |x, a| {
                    a[0] = -k * x[0];
                    a[1] = -k * x[1];
                },
                move |x, b| {
                    b[0] = 1.0 + c * x[0].tanh();
                    b[1] = 0.0;
                    b[2] = 0.0;
                    b[3] = 1.0 + c * x[1].tanh();
                },
            )?
            .with_noise_jacobian(move |x, j| {
                // db[i][k]/dx[j] at (i*m + k)*n + j with n = m = 2.
                j.fill(0.0);
                let t0 = x[0].tanh();
                let t1 = x[1].tanh();
                j[0] = c * (1.0 - t0 * t0); // d b00 / d x0
                j[7] = c * (1.0 - t1 * t1); // d b11 / d x1
            }))
        }
        _ => unreachable!("info() already validated the name"),
    }
}

/// Build a preset with default parameters.
pub fn build_default(name: &str) -> Result<SdeModel> {
    build(name, &BTreeMap::new())
}
