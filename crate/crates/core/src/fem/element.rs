//! Elemental coefficient matrices of the mixed velocity-pressure system.

use nalgebra::{SMatrix, SVector};

use super::params::{alpha_of_rho, BrinkmanParams, FlowParams};
use super::quadrature::{tensor_rule, ELEMENT_RULE_POINTS};
use super::shape::{jacobian, q1_shape, q2_shape};
use crate::error::FemError;

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Mat94 = SMatrix<f64, 9, 4>;
pub type Vec9 = SVector<f64, 9>;

/// Shape data at one quadrature point, with derivatives in global coordinates.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub psi: [f64; 9],
    pub dpsi: [[f64; 2]; 9],
    pub phi: [f64; 4],
    /// Quadrature weight times `|J|`.
    pub wdet: f64,
}

/// Evaluates shape data at the points of an `n x n` Gauss rule.
pub fn quadrature_points(coords: &[[f64; 2]; 9], n: usize) -> Result<Vec<QuadPoint>, FemError> {
    tensor_rule(n)
        .into_iter()
        .map(|(xi, eta, w)| {
            let j = jacobian(coords, xi, eta)?;
            let (psi, dnat) = q2_shape(xi, eta);
            let (phi, _) = q1_shape(xi, eta);
            Ok(QuadPoint {
                psi,
                dpsi: dnat.map(|d| j.to_global(d)),
                phi,
                wdet: w * j.det,
            })
        })
        .collect()
}

/// The blocks `K_ij`, `C(v)`, `Q_i` and `A` for one element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrices {
    pub k11: Mat9,
    pub k12: Mat9,
    pub k21: Mat9,
    pub k22: Mat9,
    pub c: Mat9,
    pub q1: Mat94,
    pub q2: Mat94,
    pub a: Mat9,
}

/// Velocity-independent blocks; `mass` is `A` with unit inverse permeability.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticBlocks {
    pub k11: Mat9,
    pub k12: Mat9,
    pub k21: Mat9,
    pub k22: Mat9,
    pub q1: Mat94,
    pub q2: Mat94,
    pub mass: Mat9,
}

impl StaticBlocks {
    pub fn integrate(qps: &[QuadPoint], mu: f64) -> Self {
        let mut s = StaticBlocks {
            k11: Mat9::zeros(),
            k12: Mat9::zeros(),
            k21: Mat9::zeros(),
            k22: Mat9::zeros(),
            q1: Mat94::zeros(),
            q2: Mat94::zeros(),
            mass: Mat9::zeros(),
        };
        for qp in qps {
            let w = qp.wdet;
            for a in 0..9 {
                let da = qp.dpsi[a];
                for b in 0..9 {
                    let db = qp.dpsi[b];
                    s.k11[(a, b)] += mu * da[0] * db[0] * w;
                    s.k12[(a, b)] += mu * da[0] * db[1] * w;
                    s.k21[(a, b)] += mu * da[1] * db[0] * w;
                    s.k22[(a, b)] += mu * da[1] * db[1] * w;
                    s.mass[(a, b)] += qp.psi[a] * qp.psi[b] * w;
                }
                for m in 0..4 {
                    s.q1[(a, m)] += da[0] * qp.phi[m] * w;
                    s.q2[(a, m)] += da[1] * qp.phi[m] * w;
                }
            }
        }
        s
    }
}

/// Convection matrix `C(v)` and the blocks of its derivative.
///
/// `dc[k][i]` holds `rho_f ∫ psi_a (du_k/dx_i) psi_b |J|`, the derivative of
/// the convective term of momentum component `k` with respect to velocity
/// component `i` beyond `C` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvectionBlocks {
    pub c: Mat9,
    pub dc: [[Mat9; 2]; 2],
}

pub fn convection_blocks(
    qps: &[QuadPoint],
    rho_f: f64,
    v1: &[f64; 9],
    v2: &[f64; 9],
) -> ConvectionBlocks {
    let mut out = ConvectionBlocks {
        c: Mat9::zeros(),
        dc: [[Mat9::zeros(); 2]; 2],
    };
    if rho_f == 0.0 {
        return out;
    }
    for qp in qps {
        let mut u = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for n in 0..9 {
            u[0] += qp.psi[n] * v1[n];
            u[1] += qp.psi[n] * v2[n];
            for i in 0..2 {
                grad[0][i] += qp.dpsi[n][i] * v1[n];
                grad[1][i] += qp.dpsi[n][i] * v2[n];
            }
        }
        let w = rho_f * qp.wdet;
        for a in 0..9 {
            let wa = w * qp.psi[a];
            for b in 0..9 {
                let adv = u[0] * qp.dpsi[b][0] + u[1] * qp.dpsi[b][1];
                out.c[(a, b)] += wa * adv;
                let pb = wa * qp.psi[b];
                for k in 0..2 {
                    for i in 0..2 {
                        out.dc[k][i][(a, b)] += pb * grad[k][i];
                    }
                }
            }
        }
    }
    out
}

/// Elemental coefficient matrices at local velocities `v_local = [v1; v2]`,
/// integrated with the 3x3 Gauss rule.
pub fn element_matrices(
    coords: &[[f64; 2]; 9],
    flow: &FlowParams,
    brinkman: &BrinkmanParams,
    rho_e: f64,
    v_local: &[f64; 18],
) -> Result<ElementMatrices, FemError> {
    element_matrices_with_rule(coords, flow, brinkman, rho_e, v_local, ELEMENT_RULE_POINTS)
}

pub fn element_matrices_with_rule(
    coords: &[[f64; 2]; 9],
    flow: &FlowParams,
    brinkman: &BrinkmanParams,
    rho_e: f64,
    v_local: &[f64; 18],
    points: usize,
) -> Result<ElementMatrices, FemError> {
    let alpha = alpha_of_rho(rho_e, brinkman)?;
    let qps = quadrature_points(coords, points)?;
    let s = StaticBlocks::integrate(&qps, flow.mu);
    let (v1, v2) = split_local(v_local);
    let conv = convection_blocks(&qps, flow.rho_f, &v1, &v2);
    Ok(ElementMatrices {
        k11: s.k11,
        k12: s.k12,
        k21: s.k21,
        k22: s.k22,
        c: conv.c,
        q1: s.q1,
        q2: s.q2,
        a: s.mass * alpha,
    })
}

pub(crate) fn split_local(v_local: &[f64; 18]) -> ([f64; 9], [f64; 9]) {
    let mut v1 = [0.0; 9];
    let mut v2 = [0.0; 9];
    v1.copy_from_slice(&v_local[..9]);
    v2.copy_from_slice(&v_local[9..]);
    (v1, v2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::shape::square_element;

    fn flow() -> FlowParams {
        FlowParams::default()
    }

    fn rel_close(a: &Mat9, b: &Mat9, tol: f64) -> bool {
        let scale = b.amax().max(1e-300);
        (a - b).amax() <= tol * scale
    }

    fn sample_velocity() -> [f64; 18] {
        let mut v = [0.0; 18];
        for (i, x) in v.iter_mut().enumerate() {
            *x = ((i as f64) * 0.37).sin();
        }
        v
    }

    #[test]
    fn zero_alpha_gives_zero_brinkman_block() {
        let c = square_element(0.0, 0.0, 0.1);
        let b = BrinkmanParams::with_alpha_max(1e6);
        let m = element_matrices(&c, &flow(), &b, 1.0, &sample_velocity()).unwrap();
        assert_eq!(m.a, Mat9::zeros());
    }

    #[test]
    fn rest_state_has_no_convection() {
        let c = square_element(0.0, 0.0, 0.1);
        let m = element_matrices(&c, &flow(), &BrinkmanParams::default(), 0.0, &[0.0; 18]).unwrap();
        assert_eq!(m.c, Mat9::zeros());
    }

    #[test]
    fn brinkman_block_sums_to_alpha_times_area() {
        let h = 0.1;
        let alpha = 3.5e4;
        let c = square_element(0.2, 0.4, h);
        let b = BrinkmanParams::with_alpha_max(alpha);
        let m = element_matrices(&c, &flow(), &b, 0.0, &[0.0; 18]).unwrap();
        // Oracle: a fine 10x10 rule applied to psi_a * psi_b directly.
        let fine = quadrature_points(&c, 10).unwrap();
        let mut total = 0.0;
        for a in 0..9 {
            let mut row = 0.0;
            for b2 in 0..9 {
                let mut v = 0.0;
                for qp in &fine {
                    v += alpha * qp.psi[a] * qp.psi[b2] * qp.wdet;
                }
                row += v;
                assert!((m.a[(a, b2)] - v).abs() <= 1e-12 * alpha * h * h);
            }
            let col_integral: f64 = fine.iter().map(|qp| qp.psi[a] * qp.wdet).sum();
            let row_sum: f64 = m.a.row(a).sum();
            assert!((row_sum - alpha * col_integral).abs() <= 1e-12 * alpha * h * h);
            assert!((row - row_sum).abs() <= 1e-12 * alpha * h * h);
            total += row;
        }
        assert!((total - alpha * h * h).abs() <= 1e-12 * alpha * h * h);
        assert!((m.a.sum() - alpha * h * h).abs() <= 1e-12 * alpha * h * h);
    }

    #[test]
    fn three_point_rule_matches_ten_point_rule() {
        let c = square_element(0.0, 0.0, 0.05);
        let b = BrinkmanParams::with_alpha_max(1e3);
        let coarse = element_matrices(&c, &flow(), &b, 0.0, &[0.0; 18]).unwrap();
        let fine = element_matrices_with_rule(&c, &flow(), &b, 0.0, &[0.0; 18], 10).unwrap();
        for (x, y) in [
            (&coarse.k11, &fine.k11),
            (&coarse.k12, &fine.k12),
            (&coarse.k21, &fine.k21),
            (&coarse.k22, &fine.k22),
            (&coarse.a, &fine.a),
        ] {
            assert!(rel_close(x, y, 1e-12));
        }
        let qd = (coarse.q1 - fine.q1)
            .amax()
            .max((coarse.q2 - fine.q2).amax());
        assert!(qd <= 1e-12 * fine.q1.amax());
    }

    #[test]
    fn viscous_blocks_are_symmetric_psd_and_transposed() {
        let c = square_element(0.0, 0.0, 0.1);
        let m = element_matrices(&c, &flow(), &BrinkmanParams::default(), 0.0, &[0.0; 18]).unwrap();
        assert!(rel_close(&m.k12, &m.k21.transpose(), 1e-14));
        for k in [&m.k11, &m.k22, &m.a] {
            assert!(rel_close(k, &k.transpose(), 1e-14));
            let eig = k.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-12 * eig.max());
        }
    }

    #[test]
    fn mesh_size_scaling() {
        // K is invariant to h in 2D; A scales with the element area.
        let b = BrinkmanParams::with_alpha_max(1.0);
        let m1 =
            element_matrices(&square_element(0.0, 0.0, 0.1), &flow(), &b, 0.0, &[0.0; 18]).unwrap();
        let m2 =
            element_matrices(&square_element(0.0, 0.0, 0.2), &flow(), &b, 0.0, &[0.0; 18]).unwrap();
        assert!(rel_close(&m1.k11, &m2.k11, 1e-12));
        assert!(rel_close(&(m1.a * 4.0), &m2.a, 1e-12));
        let ratio = |m: &ElementMatrices| m.a[(4, 4)] / m.k11[(4, 4)];
        assert!((ratio(&m2) / ratio(&m1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn convection_is_linear_in_density_and_velocity() {
        let c = square_element(0.0, 0.0, 0.1);
        let v = sample_velocity();
        let m1 = element_matrices(&c, &flow(), &BrinkmanParams::default(), 1.0, &v).unwrap();
        let f2 = FlowParams {
            rho_f: 2.0,
            ..flow()
        };
        let m2 = element_matrices(&c, &f2, &BrinkmanParams::default(), 1.0, &v).unwrap();
        assert!(rel_close(&(m1.c * 2.0), &m2.c, 1e-13));
        let v2: [f64; 18] = v.map(|x| 3.0 * x);
        let m3 = element_matrices(&c, &flow(), &BrinkmanParams::default(), 1.0, &v2).unwrap();
        assert!(rel_close(&(m1.c * 3.0), &m3.c, 1e-13));
    }

    #[test]
    fn uniform_flow_convects_constants_to_zero() {
        // C applied to a constant field vanishes because derivatives do.
        let c = square_element(0.0, 0.0, 0.1);
        let mut v = [0.0; 18];
        v[..9].fill(1.0);
        v[9..].fill(-0.5);
        let m = element_matrices(&c, &flow(), &BrinkmanParams::default(), 1.0, &v).unwrap();
        let ones = Vec9::repeat(1.0);
        assert!((m.c * ones).amax() < 1e-14);
    }
}
