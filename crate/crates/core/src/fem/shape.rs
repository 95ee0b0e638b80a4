//! Biquadratic (Q2) velocity and bilinear (Q1) pressure bases on `[-1, 1]^2`,
//! plus the isoparametric Jacobian.

use crate::error::FemError;

/// Natural coordinates of the velocity nodes, tensor ordering `a + 3b`.
pub const Q2_NODES: [[f64; 2]; 9] = [
    [-1.0, -1.0],
    [0.0, -1.0],
    [1.0, -1.0],
    [-1.0, 0.0],
    [0.0, 0.0],
    [1.0, 0.0],
    [-1.0, 1.0],
    [0.0, 1.0],
    [1.0, 1.0],
];

/// Natural coordinates of the pressure nodes, tensor ordering `a + 2b`.
pub const Q1_NODES: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];

#[inline]
fn quad_1d(x: f64) -> ([f64; 3], [f64; 3]) {
    (
        [0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)],
        [x - 0.5, -2.0 * x, x + 0.5],
    )
}

#[inline]
fn lin_1d(x: f64) -> ([f64; 2], [f64; 2]) {
    ([0.5 * (1.0 - x), 0.5 * (1.0 + x)], [-0.5, 0.5])
}

/// Q2 shape values and their `(d/dxi, d/deta)` derivatives.
pub fn q2_shape(xi: f64, eta: f64) -> ([f64; 9], [[f64; 2]; 9]) {
    let (lx, dx) = quad_1d(xi);
    let (ly, dy) = quad_1d(eta);
    let mut n = [0.0; 9];
    let mut d = [[0.0; 2]; 9];
    for b in 0..3 {
        for a in 0..3 {
            n[a + 3 * b] = lx[a] * ly[b];
            d[a + 3 * b] = [dx[a] * ly[b], lx[a] * dy[b]];
        }
    }
    (n, d)
}

/// Q1 shape values and their natural derivatives.
pub fn q1_shape(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let (lx, dx) = lin_1d(xi);
    let (ly, dy) = lin_1d(eta);
    let mut n = [0.0; 4];
    let mut d = [[0.0; 2]; 4];
    for b in 0..2 {
        for a in 0..2 {
            n[a + 2 * b] = lx[a] * ly[b];
            d[a + 2 * b] = [dx[a] * ly[b], lx[a] * dy[b]];
        }
    }
    (n, d)
}

/// Isoparametric map derivative at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian {
    /// `[[dx/dxi, dy/dxi], [dx/deta, dy/deta]]`.
    pub matrix: [[f64; 2]; 2],
    pub det: f64,
    pub inverse: [[f64; 2]; 2],
}

impl Jacobian {
    /// Global derivatives `(d/dx, d/dy)` from natural ones.
    #[inline]
    pub fn to_global(&self, d: [f64; 2]) -> [f64; 2] {
        let inv = &self.inverse;
        [
            inv[0][0] * d[0] + inv[0][1] * d[1],
            inv[1][0] * d[0] + inv[1][1] * d[1],
        ]
    }
}

pub fn jacobian(coords: &[[f64; 2]; 9], xi: f64, eta: f64) -> Result<Jacobian, FemError> {
    let (_, d) = q2_shape(xi, eta);
    let mut m = [[0.0; 2]; 2];
    for (dk, xk) in d.iter().zip(coords) {
        m[0][0] += dk[0] * xk[0];
        m[0][1] += dk[0] * xk[1];
        m[1][0] += dk[1] * xk[0];
        m[1][1] += dk[1] * xk[1];
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det > 0.0) {
        return Err(FemError::DegenerateElement(det));
    }
    let inverse = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    Ok(Jacobian {
        matrix: m,
        det,
        inverse,
    })
}

/// Coordinates of a square element `[x0, x0+h] x [y0, y0+h]` in local node order.
pub fn square_element(x0: f64, y0: f64, h: f64) -> [[f64; 2]; 9] {
    Q2_NODES.map(|[a, b]| [x0 + 0.5 * h * (a + 1.0), y0 + 0.5 * h * (b + 1.0)])
}
