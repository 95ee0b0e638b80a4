//! Global assembly of the Newton residual and Jacobian, and strong Dirichlet
//! enforcement.
//!
//! Global unknowns are ordered `[v1; v2; p]`: velocity node `n` owns dofs
//! `n` and `nv + n`, pressure node `m` owns dof `2 nv + m`.

use super::element::{convection_blocks, quadrature_points, QuadPoint, StaticBlocks};
use super::params::{alpha_of_rho, BrinkmanParams, FlowParams};
use super::quadrature::ELEMENT_RULE_POINTS;
use crate::error::FemError;
use crate::mesh::{DensityField, Mesh};

/// Local unknowns per element: 9 + 9 velocity, 4 pressure.
pub const LOCAL_DOFS: usize = 22;

/// Nodal velocities and pressures of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub p: Vec<f64>,
}

impl StateField {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            v1: vec![0.0; mesh.velocity_node_count()],
            v2: vec![0.0; mesh.velocity_node_count()],
            p: vec![0.0; mesh.pressure_node_count()],
        }
    }

    pub fn dof_count(&self) -> usize {
        self.v1.len() + self.v2.len() + self.p.len()
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dof_count());
        out.extend_from_slice(&self.v1);
        out.extend_from_slice(&self.v2);
        out.extend_from_slice(&self.p);
        out
    }

    pub fn from_vector(mesh: &Mesh, u: &[f64]) -> Result<Self, FemError> {
        let nv = mesh.velocity_node_count();
        let np = mesh.pressure_node_count();
        check_len("state vector", u.len(), 2 * nv + np)?;
        Ok(Self {
            v1: u[..nv].to_vec(),
            v2: u[nv..2 * nv].to_vec(),
            p: u[2 * nv..].to_vec(),
        })
    }

    pub fn speed(&self, node: usize) -> f64 {
        self.v1[node].hypot(self.v2[node])
    }

    pub fn check_dims(&self, mesh: &Mesh) -> Result<(), FemError> {
        check_len("v1", self.v1.len(), mesh.velocity_node_count())?;
        check_len("v2", self.v2.len(), mesh.velocity_node_count())?;
        check_len("p", self.p.len(), mesh.pressure_node_count())
    }

    pub fn is_finite(&self) -> bool {
        self.v1
            .iter()
            .chain(&self.v2)
            .chain(&self.p)
            .all(|x| x.is_finite())
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), FemError> {
    if got != expected {
        return Err(FemError::DimensionMismatch {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

/// Square sparse matrix in compressed-column form with sorted row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (lo, hi) = (self.col_ptr[col], self.col_ptr[col + 1]);
        self.row_idx[lo..hi]
            .binary_search(&row)
            .ok()
            .map(|k| lo + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (c, &xc) in x.iter().enumerate() {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.col_ptr[col]..self.col_ptr[col + 1]).map(move |k| (self.row_idx[k], self.values[k]))
    }
}

/// Residual and Newton Jacobian at one state.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub residual: Vec<f64>,
    pub jacobian: CscMatrix,
}

/// Reusable assembly structure for one mesh and set of active elements.
///
/// All elements of a structured mesh are congruent squares, so the
/// velocity-independent element blocks are integrated once.
#[derive(Debug, Clone)]
pub struct Assembler<'m> {
    mesh: &'m Mesh,
    elements: Vec<usize>,
    pattern: CscMatrix,
    scatter: Vec<u32>,
    qps: Vec<QuadPoint>,
    unit_blocks: StaticBlocks,
}

const NO_ENTRY: u32 = u32::MAX;

impl<'m> Assembler<'m> {
    /// Assembler over every element of the mesh.
    pub fn new(mesh: &'m Mesh) -> Result<Self, FemError> {
        Self::with_active(mesh, &vec![true; mesh.element_count()])
    }

    /// Assembler restricted to elements with `active[e] == true`.
    pub fn with_active(mesh: &'m Mesh, active: &[bool]) -> Result<Self, FemError> {
        check_len("active element mask", active.len(), mesh.element_count())?;
        let nv = mesh.velocity_node_count();
        let n = 2 * nv + mesh.pressure_node_count();
        let elements: Vec<usize> = (0..mesh.element_count()).filter(|&e| active[e]).collect();

        let mut cols: Vec<Vec<usize>> = (0..n).map(|d| vec![d]).collect();
        for &e in &elements {
            let gd = global_dofs(mesh, e);
            for j in 0..LOCAL_DOFS {
                for i in 0..LOCAL_DOFS {
                    if coupled(i, j) {
                        cols[gd[j]].push(gd[i]);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for col in &mut cols {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        drop(cols);
        if row_idx.len() >= NO_ENTRY as usize {
            return Err(FemError::InvalidParameter(
                "sparse pattern too large".into(),
            ));
        }
        let pattern = CscMatrix {
            n,
            values: vec![0.0; row_idx.len()],
            col_ptr,
            row_idx,
        };
        let mut scatter = Vec::with_capacity(elements.len() * LOCAL_DOFS * LOCAL_DOFS);
        for &e in &elements {
            let gd = global_dofs(mesh, e);
            for i in 0..LOCAL_DOFS {
                for j in 0..LOCAL_DOFS {
                    let pos = if coupled(i, j) {
                        pattern.position(gd[i], gd[j]).expect("entry in pattern") as u32
                    } else {
                        NO_ENTRY
                    };
                    scatter.push(pos);
                }
            }
        }

        let qps = match mesh.element_count() {
            0 => Vec::new(),
            _ => quadrature_points(&mesh.element_coords(0), ELEMENT_RULE_POINTS)?,
        };
        let unit_blocks = StaticBlocks::integrate(&qps, 1.0);
        Ok(Self {
            mesh,
            elements,
            pattern,
            scatter,
            qps,
            unit_blocks,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn dof_count(&self) -> usize {
        self.pattern.n
    }

    pub fn active_elements(&self) -> &[usize] {
        &self.elements
    }

    /// Residual `R(u)` and Jacobian `dR/du` before boundary conditions.
    ///
    /// Elements are processed in ascending index order, so the result is
    /// bit-identical between calls with the same inputs.
    pub fn assemble(
        &self,
        density: &DensityField,
        flow: &FlowParams,
        brinkman: &BrinkmanParams,
        state: &[f64],
    ) -> Result<LinearizedSystem, FemError> {
        let mesh = self.mesh;
        check_len("density", density.len(), mesh.element_count())?;
        check_len("state vector", state.len(), self.pattern.n)?;
        flow.validate()?;
        brinkman.validate()?;
        let nv = mesh.velocity_node_count();
        let mut residual = vec![0.0; self.pattern.n];
        let mut values = vec![0.0; self.pattern.values.len()];
        let s = &self.unit_blocks;
        let mu = flow.mu;

        let mut jac = [[0.0; LOCAL_DOFS]; LOCAL_DOFS];
        let mut res = [0.0; LOCAL_DOFS];
        for (k, &e) in self.elements.iter().enumerate() {
            let el = &mesh.elements[e];
            let alpha = alpha_of_rho(density.rho[e], brinkman)?;
            let v1 = el.velocity.map(|n| state[n]);
            let v2 = el.velocity.map(|n| state[nv + n]);
            let p = el.pressure.map(|m| state[2 * nv + m]);
            let conv = convection_blocks(&self.qps, flow.rho_f, &v1, &v2);

            for a in 0..9 {
                for b in 0..9 {
                    let k11 = mu * s.k11[(a, b)];
                    let k22 = mu * s.k22[(a, b)];
                    let diag = conv.c[(a, b)] + alpha * s.mass[(a, b)];
                    jac[a][b] = 2.0 * k11 + k22 + diag + conv.dc[0][0][(a, b)];
                    jac[a][9 + b] = mu * s.k12[(a, b)] + conv.dc[0][1][(a, b)];
                    jac[9 + a][b] = mu * s.k21[(a, b)] + conv.dc[1][0][(a, b)];
                    jac[9 + a][9 + b] = k11 + 2.0 * k22 + diag + conv.dc[1][1][(a, b)];
                }
                for m in 0..4 {
                    jac[a][18 + m] = -s.q1[(a, m)];
                    jac[9 + a][18 + m] = -s.q2[(a, m)];
                    jac[18 + m][a] = -s.q1[(a, m)];
                    jac[18 + m][9 + a] = -s.q2[(a, m)];
                }
            }

            // R = (Jacobian - convection derivative) * u_local
            for a in 0..9 {
                let mut r1 = 0.0;
                let mut r2 = 0.0;
                for b in 0..9 {
                    r1 += (jac[a][b] - conv.dc[0][0][(a, b)]) * v1[b]
                        + (jac[a][9 + b] - conv.dc[0][1][(a, b)]) * v2[b];
                    r2 += (jac[9 + a][b] - conv.dc[1][0][(a, b)]) * v1[b]
                        + (jac[9 + a][9 + b] - conv.dc[1][1][(a, b)]) * v2[b];
                }
                for m in 0..4 {
                    r1 += jac[a][18 + m] * p[m];
                    r2 += jac[9 + a][18 + m] * p[m];
                }
                res[a] = r1;
                res[9 + a] = r2;
            }
            for m in 0..4 {
                let mut r3 = 0.0;
                for b in 0..9 {
                    r3 += jac[18 + m][b] * v1[b] + jac[18 + m][9 + b] * v2[b];
                }
                res[18 + m] = r3;
            }

            let gd = global_dofs(mesh, e);
            for i in 0..LOCAL_DOFS {
                residual[gd[i]] += res[i];
            }
            let base = k * LOCAL_DOFS * LOCAL_DOFS;
            for i in 0..LOCAL_DOFS {
                for j in 0..LOCAL_DOFS {
                    let pos = self.scatter[base + i * LOCAL_DOFS + j];
                    if pos != NO_ENTRY {
                        values[pos as usize] += jac[i][j];
                    }
                }
            }
        }

        Ok(LinearizedSystem {
            residual,
            jacobian: CscMatrix {
                n: self.pattern.n,
                col_ptr: self.pattern.col_ptr.clone(),
                row_idx: self.pattern.row_idx.clone(),
                values,
            },
        })
    }
}

/// Whether local dofs `i` and `j` can couple; the pressure-pressure block is zero.
#[inline]
fn coupled(i: usize, j: usize) -> bool {
    i < 18 || j < 18
}

pub fn global_dofs(mesh: &Mesh, e: usize) -> [usize; LOCAL_DOFS] {
    let nv = mesh.velocity_node_count();
    let el = &mesh.elements[e];
    let mut gd = [0; LOCAL_DOFS];
    for a in 0..9 {
        gd[a] = el.velocity[a];
        gd[9 + a] = nv + el.velocity[a];
    }
    for m in 0..4 {
        gd[18 + m] = 2 * nv + el.pressure[m];
    }
    gd
}

/// Residual and Jacobian over the whole mesh at `state`.
pub fn assemble_system(
    mesh: &Mesh,
    density: &DensityField,
    flow: &FlowParams,
    brinkman: &BrinkmanParams,
    state: &StateField,
) -> Result<LinearizedSystem, FemError> {
    state.check_dims(mesh)?;
    Assembler::new(mesh)?.assemble(density, flow, brinkman, &state.to_vector())
}

/// Parabolic inlet profile with peak `v_c` at mid-channel.
pub fn inlet_profile(y: f64, l_c: f64, v_c: f64) -> f64 {
    v_c * 4.0 * y * (l_c - y) / (l_c * l_c)
}

/// Prescribed values on a subset of global dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletSet {
    pub fixed: Vec<bool>,
    pub values: Vec<f64>,
}

impl DirichletSet {
    pub fn new(n: usize) -> Self {
        Self {
            fixed: vec![false; n],
            values: vec![0.0; n],
        }
    }

    pub fn set(&mut self, dof: usize, value: f64) {
        self.fixed[dof] = true;
        self.values[dof] = value;
    }

    pub fn fixed_count(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }

    /// Writes the prescribed values into `u`.
    pub fn impose(&self, u: &mut [f64]) {
        for (d, x) in u.iter_mut().enumerate() {
            if self.fixed[d] {
                *x = self.values[d];
            }
        }
    }
}

/// Inlet profile, no-slip walls and zero outlet pressure.
pub fn dirichlet_conditions(mesh: &Mesh, flow: &FlowParams) -> Result<DirichletSet, FemError> {
    let nv = mesh.velocity_node_count();
    let n = 2 * nv + mesh.pressure_node_count();
    let b = &mesh.boundary;
    let vx = 2 * mesh.nx + 1;
    let vy = 2 * mesh.ny + 1;
    let boundary_nodes = 2 * vx + 2 * vy - 4;
    let tagged = b.inlet.len() + b.outlet.len() + b.walls.len();
    if tagged != boundary_nodes {
        let untagged = (0..nv)
            .find(|&k| {
                let (i, j) = (k % vx, k / vx);
                (i == 0 || j == 0 || i == vx - 1 || j == vy - 1)
                    && !b.inlet.contains(&k)
                    && !b.outlet.contains(&k)
                    && !b.walls.contains(&k)
            })
            .unwrap_or(0);
        return Err(FemError::UntaggedBoundaryNode(untagged));
    }
    let l_c = mesh.spec.channel_width;
    let mut bc = DirichletSet::new(n);
    for &k in &b.inlet {
        let y = mesh.velocity_nodes[k][1];
        bc.set(k, inlet_profile(y, l_c, flow.v_c));
        bc.set(nv + k, 0.0);
    }
    for &k in &b.walls {
        bc.set(k, 0.0);
        bc.set(nv + k, 0.0);
    }
    for &m in &b.outlet_pressure {
        bc.set(2 * nv + m, 0.0);
    }
    Ok(bc)
}

/// Eliminates constrained rows and columns symmetrically.
///
/// Returns the Newton right-hand side: `-R` on free rows with the effect of
/// the prescribed increments `g - u` moved over, and `g - u` on constrained
/// rows. Afterwards the residual is zero on constrained rows and the matrix
/// has identity rows and columns there.
pub fn apply_constraints(sys: &mut LinearizedSystem, bc: &DirichletSet, state: &[f64]) -> Vec<f64> {
    let n = sys.jacobian.n;
    let mut rhs: Vec<f64> = sys.residual.iter().map(|r| -r).collect();
    let jac = &mut sys.jacobian;
    for c in 0..n {
        let shift = if bc.fixed[c] {
            bc.values[c] - state[c]
        } else {
            0.0
        };
        for k in jac.col_ptr[c]..jac.col_ptr[c + 1] {
            let r = jac.row_idx[k];
            if bc.fixed[c] && !bc.fixed[r] && shift != 0.0 {
                rhs[r] -= jac.values[k] * shift;
            }
            if bc.fixed[c] || bc.fixed[r] {
                jac.values[k] = if r == c { 1.0 } else { 0.0 };
            }
        }
        if bc.fixed[c] {
            rhs[c] = shift;
            sys.residual[c] = 0.0;
        }
    }
    rhs
}

/// Boundary conditions of the channel applied to an assembled system.
pub fn apply_dirichlet(
    sys: &mut LinearizedSystem,
    mesh: &Mesh,
    flow: &FlowParams,
    state: &StateField,
) -> Result<Vec<f64>, FemError> {
    let bc = dirichlet_conditions(mesh, flow)?;
    Ok(apply_constraints(sys, &bc, &state.to_vector()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, MeshSpec};

    fn small() -> Mesh {
        build_mesh(&MeshSpec::channel(1.0, 0.5)).unwrap()
    }

    #[test]
    fn zero_state_gives_zero_residual() {
        let mesh = small();
        let d = DensityField::fluid(mesh.element_count());
        let sys = assemble_system(
            &mesh,
            &d,
            &FlowParams::default(),
            &BrinkmanParams::default(),
            &StateField::zeros(&mesh),
        )
        .unwrap();
        assert!(sys.residual.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn continuity_block_has_zero_diagonal() {
        let mesh = small();
        let d = DensityField::uniform(mesh.element_count(), 0.0);
        let sys = assemble_system(
            &mesh,
            &d,
            &FlowParams::default(),
            &BrinkmanParams::default(),
            &StateField::zeros(&mesh),
        )
        .unwrap();
        let nv = mesh.velocity_node_count();
        for m in 0..mesh.pressure_node_count() {
            for m2 in 0..mesh.pressure_node_count() {
                assert_eq!(sys.jacobian.get(2 * nv + m, 2 * nv + m2), 0.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mesh = small();
        let d = DensityField::fluid(mesh.element_count());
        let mut s = StateField::zeros(&mesh);
        s.p.pop();
        let r = assemble_system(
            &mesh,
            &d,
            &FlowParams::default(),
            &BrinkmanParams::default(),
            &s,
        );
        assert!(matches!(r, Err(FemError::DimensionMismatch { .. })));
        let short = DensityField::fluid(3);
        let r = assemble_system(
            &mesh,
            &short,
            &FlowParams::default(),
            &BrinkmanParams::default(),
            &StateField::zeros(&mesh),
        );
        assert!(r.is_err());
    }

    #[test]
    fn inlet_profile_shape() {
        assert_eq!(inlet_profile(0.5, 1.0, 1.0), 1.0);
        assert_eq!(inlet_profile(0.0, 1.0, 1.0), 0.0);
        assert_eq!(inlet_profile(1.0, 1.0, 1.0), 0.0);
        assert!((inlet_profile(1.0, 2.0, 3.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn constrained_rows_are_identity_with_zero_residual() {
        let mesh = small();
        let d = DensityField::fluid(mesh.element_count());
        let flow = FlowParams::default();
        let mut state = StateField::zeros(&mesh);
        for (i, x) in state.v1.iter_mut().enumerate() {
            *x = 0.1 * i as f64;
        }
        let mut sys =
            assemble_system(&mesh, &d, &flow, &BrinkmanParams::default(), &state).unwrap();
        let bc = dirichlet_conditions(&mesh, &flow).unwrap();
        let rhs = apply_dirichlet(&mut sys, &mesh, &flow, &state).unwrap();
        let u = state.to_vector();
        for dof in 0..sys.jacobian.n {
            if bc.fixed[dof] {
                assert_eq!(sys.residual[dof], 0.0);
                assert_eq!(rhs[dof], bc.values[dof] - u[dof]);
                for (r, v) in sys.jacobian.column(dof) {
                    assert_eq!(v, if r == dof { 1.0 } else { 0.0 });
                }
            }
        }
        let nv = mesh.velocity_node_count();
        let mid = mesh.boundary.inlet[mesh.boundary.inlet.len() / 2];
        assert_eq!(mesh.velocity_nodes[mid][1], 0.5);
        assert_eq!(bc.values[mid], 1.0);
        assert_eq!(bc.values[nv + mid], 0.0);
        assert_eq!(
            bc.fixed_count(),
            2 * (mesh.boundary.inlet.len() + mesh.boundary.walls.len()) + 3
        );
    }
}
