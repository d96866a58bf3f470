//! Noise-induced drift and noise-matrix symmetrization.
//!
//! State-dependent noise contributes an extra drift when the stochastic
//! integral is evaluated away from the left endpoint. It can be computed
//! directly from the noise field,
//!
//!   a_N^i = sum_{k,m} (d b^{ik} / d x^m) b^{mk},
//!
//! or from the divergence of the diffusion matrix,
//!
//!   a_N^i = (1/2) sum_k d D^{ik} / d x^k.
//!
//! The two agree whenever b is symmetric with a locally constant
//! eigenframe — scalar, diagonal, and fixed-rotation cases included. A
//! general square b can be traded for its symmetric polar factor, which
//! rotates the Wiener increments without changing the diffusion; that
//! replacement is what [`symmetrize`] constructs. (When the symmetric
//! factor's eigenframe itself rotates with x the two formulas genuinely
//! differ pointwise, and the divergence form is the one that enters the
//! Fokker-Planck operators.)

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{fd_step, SdeModel};

/// Scratch buffers for repeated noise-drift evaluations in stepping loops.
#[derive(Debug, Clone)]
pub(crate) struct DriftScratch {
    jac: Vec<f64>,
    b: Vec<f64>,
}

impl DriftScratch {
    pub(crate) fn for_model(model: &SdeModel) -> DriftScratch {
        let (n, m) = (model.state_dim(), model.noise_dim());
        DriftScratch {
            jac: vec![0.0; n * m * n],
            b: vec![0.0; n * m],
        }
    }
}

pub(crate) fn a_n_from_b_into(
    model: &SdeModel,
    x: &[f64],
    out: &mut [f64],
    scratch: &mut DriftScratch,
) {
    let (n, m) = (model.state_dim(), model.noise_dim());
    model.noise_jacobian_at(x, &mut scratch.jac);
    model.eval_noise(x, &mut scratch.b);
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..m {
            for mm in 0..n {
                s += scratch.jac[(i * m + k) * n + mm] * scratch.b[mm * m + k];
            }
        }
        out[i] = s;
    }
}

/// Noise-induced drift from the noise field and its Jacobian.
pub fn a_n_from_b(model: &SdeModel, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.state_dim()];
    let mut scratch = DriftScratch::for_model(model);
    a_n_from_b_into(model, x, &mut out, &mut scratch);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "noise-induced drift",
            x: x.to_vec(),
        });
    }
    Ok(out)
}

pub(crate) fn a_n_from_d_into(
    model: &SdeModel,
    x: &[f64],
    out: &mut [f64],
    scratch: &mut DriftScratch,
) {
    let (n, m) = (model.state_dim(), model.noise_dim());
    if model.has_analytic_jacobian() {
        // Product rule on D = b b^T keeps this exact:
        // d D^{ik} / d x^k = sum_l (b^{il}_{,k} b^{kl} + b^{il} b^{kl}_{,k}).
        model.noise_jacobian_at(x, &mut scratch.jac);
        model.eval_noise(x, &mut scratch.b);
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..m {
                    s += scratch.jac[(i * m + l) * n + k] * scratch.b[k * m + l]
                        + scratch.b[i * m + l] * scratch.jac[(k * m + l) * n + k];
                }
            }
            out[i] = 0.5 * s;
        }
        return;
    }
    // Central differences of the diffusion matrix itself.
    let mut xp = x.to_vec();
    let mut dp = vec![0.0; n * n];
    let mut dm = vec![0.0; n * n];
    out.fill(0.0);
    for k in 0..n {
        let h = fd_step(x[k]);
        xp[k] = x[k] + h;
        model.diffusion_into(&xp, &mut dp, &mut scratch.b);
        xp[k] = x[k] - h;
        model.diffusion_into(&xp, &mut dm, &mut scratch.b);
        xp[k] = x[k];
        for i in 0..n {
            out[i] += 0.5 * (dp[i * n + k] - dm[i * n + k]) / (2.0 * h);
        }
    }
}

/// Noise-induced drift from the divergence of the diffusion matrix.
pub fn a_n_from_d(model: &SdeModel, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.state_dim()];
    let mut scratch = DriftScratch::for_model(model);
    a_n_from_d_into(model, x, &mut out, &mut scratch);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "diffusion divergence",
            x: x.to_vec(),
        });
    }
    Ok(out)
}

/// Outcome of symmetrizing a noise matrix: `b_star = B O` is symmetric and
/// `O` is orthogonal, so `b_star` drives the same diffusion as `B` with
/// rotated increments.
#[derive(Debug, Clone)]
pub struct SymmetrizationResult {
    pub b_star: DMatrix<f64>,
    pub o: DMatrix<f64>,
}

/// Replace a noise matrix by a symmetric one with the same diffusion.
///
/// Rectangular inputs are zero-padded to square first. Uses the polar
/// decomposition B = S R (S symmetric PSD, R orthogonal) computed from a
/// singular value decomposition, giving O = R^T and b_star = S. Exactly
/// symmetric inputs short-circuit to (B, I). Rank-deficient inputs still
/// succeed: the decomposition's orthonormal bases complete O.
pub fn symmetrize(b: &DMatrix<f64>) -> Result<SymmetrizationResult> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("B", "entries must be finite"));
    }
    if b.nrows() == 0 || b.ncols() == 0 {
        return Err(Error::param("B", "matrix must be nonempty"));
    }
    let n = b.nrows().max(b.ncols());
    let mut sq = DMatrix::zeros(n, n);
    sq.view_mut((0, 0), (b.nrows(), b.ncols())).copy_from(b);

    let scale = sq.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let asym = (&sq - sq.transpose())
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if asym <= 1e-12 * scale.max(1.0) {
        return Ok(SymmetrizationResult {
            b_star: sq,
            o: DMatrix::identity(n, n),
        });
    }

    let svd = sq.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    // B = U S V^T  =>  O = V U^T is orthogonal and B O = U S U^T is the
    // symmetric PSD polar factor.
    let o = v_t.transpose() * u.transpose();
    let mut b_star = &sq * &o;
    // The product is symmetric up to rounding; average away the residue so
    // downstream symmetry checks see an exactly symmetric matrix.
    let b_star_t = b_star.transpose();
    b_star = (b_star + b_star_t) * 0.5;
    Ok(SymmetrizationResult { b_star, o })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SdeModel;
    use crate::presets;
    use crate::rng::CounterRng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn driftless(name: &str, n: usize, m: usize, noise: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> SdeModel {
        SdeModel::new(name, n, m, |_x, a| a.fill(0.0), noise).unwrap()
    }

    #[test]
    fn constant_noise_has_no_induced_drift() {
        let model = driftless("const", 2, 2, |_x, b| b.copy_from_slice(&[1.0, 0.0, 0.0, 2.0]));
        assert_eq!(a_n_from_b(&model, &[0.5, -0.5]).unwrap(), vec![0.0, 0.0]);
        let from_d = a_n_from_d(&model, &[0.5, -0.5]).unwrap();
        assert!(from_d.iter().all(|v| v.abs() < 1e-9), "{from_d:?}");
    }

    #[test]
    fn linear_noise_drift_is_x() {
        // b(x) = x gives a_N = b b' = x.
        let model = driftless("b=x", 1, 1, |x, b| b[0] = x[0]);
        let from_b = a_n_from_b(&model, &[1.5]).unwrap();
        assert_relative_eq!(from_b[0], 1.5, epsilon = 1e-6);
        let from_d = a_n_from_d(&model, &[1.5]).unwrap();
        assert_relative_eq!(from_d[0], 1.5, epsilon = 1e-6);

        // With the analytic Jacobian both routes are exact.
        let exact = driftless("b=x", 1, 1, |x, b| b[0] = x[0]).with_noise_jacobian(|_x, j| j[0] = 1.0);
        assert_relative_eq!(a_n_from_b(&exact, &[1.5]).unwrap()[0], 1.5, epsilon = 1e-14);
        assert_relative_eq!(a_n_from_d(&exact, &[1.5]).unwrap()[0], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_square_and_linear_components() {
        // b = diag(x1^2, x2): a_N = (2 x1^3, x2)|_{(1,2)} = (2, 2).
        let model = driftless("diag", 2, 2, |x, b| {
            b[0] = x[0] * x[0];
            b[1] = 0.0;
            b[2] = 0.0;
            b[3] = x[1];
        });
        let from_b = a_n_from_b(&model, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(from_b[0], 2.0, epsilon = 1e-6);
        assert_relative_eq!(from_b[1], 2.0, epsilon = 1e-6);
        // D = diag(x1^4, x2^2) must give the same answer.
        let from_d = a_n_from_d(&model, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(from_d[0], 2.0, epsilon = 1e-6);
        assert_relative_eq!(from_d[1], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn both_routes_agree_on_presets() {
        // Every preset has symmetric b, so the two formulas must coincide.
        let mut rng = CounterRng::new(0x5eed, 7);
        for info in presets::registry() {
            let model = presets::build_default(info.name).unwrap();
            for probe in 0..100 {
                let x: Vec<f64> = (0..info.state_dim)
                    .map(|d| {
                        let (lo, hi) = info.default_domain[d];
                        // Stay off the very edges where presets may degenerate.
                        let mid = 0.5 * (lo + hi);
                        let half = 0.45 * (hi - lo);
                        mid + (2.0 * rng.uniform() - 1.0) * half
                    })
                    .collect();
                let fb = a_n_from_b(&model, &x).unwrap();
                let fd = a_n_from_d(&model, &x).unwrap();
                for i in 0..fb.len() {
                    assert!(
                        (fb[i] - fd[i]).abs() <= 1e-4,
                        "{} probe {probe} at {x:?}: {fb:?} vs {fd:?}",
                        info.name
                    );
                }
            }
        }
    }

    #[test]
    fn symmetric_input_short_circuits() {
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = symmetrize(&b).unwrap();
        assert_eq!(r.b_star, b);
        assert_eq!(r.o, DMatrix::identity(2, 2));
    }

    #[test]
    fn rotation_symmetrizes_to_identity() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let r = symmetrize(&b).unwrap();
        let expect_o = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(r.o[(i, j)], expect_o[(i, j)], epsilon = 1e-12);
                let id = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(r.b_star[(i, j)], id, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn shear_symmetrizes_to_root_of_its_diffusion() {
        // B = [[1,1],[0,1]] has B B^T = [[2,1],[1,1]] whose symmetric PSD
        // square root is [[3,1],[1,2]] / sqrt(5).
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let r = symmetrize(&b).unwrap();
        let s5 = 5.0f64.sqrt();
        let expect = DMatrix::from_row_slice(2, 2, &[3.0 / s5, 1.0 / s5, 1.0 / s5, 2.0 / s5]);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(r.b_star[(i, j)], expect[(i, j)], epsilon = 1e-10);
            }
        }
        check_invariants(&b, &r);
    }

    #[test]
    fn rank_deficient_and_rectangular_inputs_succeed() {
        let low_rank = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 1.0]);
        check_invariants(&low_rank, &symmetrize(&low_rank).unwrap());

        let row = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let r = symmetrize(&row).unwrap();
        assert_eq!(r.b_star.nrows(), 2);
        let padded = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        check_invariants(&padded, &r);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let b = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(symmetrize(&b).is_err());
    }

    #[test]
    fn symmetrized_field_recovers_divergence_drift() {
        // Non-symmetric b(x) = S(x) R with S(x) = Q diag(l1, l2) Q^T for
        // fixed rotations Q, R: replacing b by its pointwise symmetric
        // polar factor (which is exactly S) must make the field-based
        // drift match the divergence-based drift of the original. The
        // fixed eigenframe matters: with an x-dependent frame the two
        // formulas differ pointwise and only the diffusion is shared.
        fn rot(t: f64) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
        }
        let noise = |x: &[f64], b: &mut [f64]| {
            let q = rot(0.6);
            let r = rot(-1.1);
            let l1 = 1.2 + 0.3 * (x[0] + 0.5 * x[1]).sin();
            let l2 = 0.8 + 0.2 * x[1].cos();
            let s = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[l1, l2]))
                * q.transpose();
            let m = s * r;
            for i in 0..2 {
                for j in 0..2 {
                    b[i * 2 + j] = m[(i, j)];
                }
            }
        };
        let original = driftless("skew", 2, 2, noise);
        let symmetrized = driftless("skew*", 2, 2, move |x, out| {
            let mut raw = [0.0; 4];
            noise(x, &mut raw);
            let b = DMatrix::from_row_slice(2, 2, &raw);
            let r = symmetrize(&b).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    out[i * 2 + j] = r.b_star[(i, j)];
                }
            }
        });
        let mut rng = CounterRng::new(0xabcd, 3);
        for _ in 0..100 {
            let x = [4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0];
            let reference = a_n_from_d(&original, &x).unwrap();
            let via_star = a_n_from_b(&symmetrized, &x).unwrap();
            for i in 0..2 {
                assert!(
                    (reference[i] - via_star[i]).abs() <= 1e-4,
                    "at {x:?}: {reference:?} vs {via_star:?}"
                );
            }
        }
    }

    fn check_invariants(b: &DMatrix<f64>, r: &SymmetrizationResult) {
        let n = r.o.nrows();
        let scale = r.b_star.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        // b_star symmetric.
        let asym = (&r.b_star - r.b_star.transpose())
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(asym <= 1e-10 * scale, "asymmetry {asym}");
        // O orthogonal with |det| = 1.
        let gram = r.o.transpose() * &r.o;
        let ortho_err = (&gram - DMatrix::identity(n, n))
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(ortho_err <= 1e-12, "orthogonality {ortho_err}");
        let det = r.o.clone().determinant();
        assert!((det.abs() - 1.0).abs() <= 1e-10, "det {det}");
        // Diffusion preserved.
        let d_old = b * b.transpose();
        let d_new = &r.b_star * r.b_star.transpose();
        let d_scale = d_old.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let d_err = (&d_old - &d_new).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(d_err <= 1e-10 * d_scale, "diffusion drift {d_err}");
    }

    proptest! {
        #[test]
        fn symmetrize_invariants_hold(entries in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let b = DMatrix::from_row_slice(2, 2, &entries);
            let r = symmetrize(&b).unwrap();
            check_invariants(&b, &r);
        }

        #[test]
        fn symmetrize_is_idempotent(entries in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let b = DMatrix::from_row_slice(2, 2, &entries);
            let first = symmetrize(&b).unwrap();
            let second = symmetrize(&first.b_star).unwrap();
            let id_err = (&second.o - DMatrix::identity(2, 2))
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!(id_err <= 1e-10, "O deviates from identity by {id_err}");
        }
    }
}
