//! Undamped Newton-Raphson with a direct sparse LU per step, for the
//! penalized problem and for the body-fitted fluid-only reference.

use std::io::{self, Write};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Par};
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::fem::{
    apply_constraints, dirichlet_conditions, Assembler, BrinkmanParams, CscMatrix, DirichletSet,
    FlowParams, StateField,
};
use crate::mesh::{DensityField, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialGuess {
    /// Boundary values on a zero field.
    Zero,
    /// One linear solve with convection dropped, then Newton.
    Stokes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub initial_guess: InitialGuess,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_iters: 50,
            initial_guess: InitialGuess::Stokes,
        }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.newton_tol > 0.0) {
            return Err(SolveError::InvalidSettings(format!(
                "newton_tol must be > 0, got {}",
                self.newton_tol
            )));
        }
        if self.max_iters < 1 {
            return Err(SolveError::InvalidSettings("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    /// Newton steps taken, excluding the Stokes start.
    pub iterations: usize,
    /// Constrained residual 2-norm at the zero field carrying the boundary values.
    pub initial_norm: f64,
    /// Constrained residual 2-norm at each Newton iterate, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

impl SolveReport {
    pub fn final_norm(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Residual history relative to `initial_norm`.
    pub fn relative_history(&self) -> Vec<f64> {
        self.residual_history
            .iter()
            .map(|r| r / self.initial_norm)
            .collect()
    }
}

/// Direct sparse LU with the symbolic analysis shared across Newton steps.
///
/// Inverse permeabilities up to ~1e20 put entries spanning twenty orders of
/// magnitude in one matrix, so each solve equilibrates rows and columns
/// first and finishes with a few steps of iterative refinement.
struct SparseLu {
    symbolic: SymbolicLu<usize>,
}

const RUIZ_SWEEPS: usize = 8;
const REFINEMENT_STEPS: usize = 3;

impl SparseLu {
    fn analyze(a: &CscMatrix) -> Option<Self> {
        let sym = SymbolicSparseColMatRef::new_checked(a.n, a.n, &a.col_ptr, None, &a.row_idx);
        SymbolicLu::try_new(sym)
            .ok()
            .map(|symbolic| Self { symbolic })
    }

    /// Solves `a x = rhs` in place; `None` when the factorization breaks down.
    fn solve(&self, a: &CscMatrix, rhs: &mut [f64]) -> Option<()> {
        let (dr, dc) = ruiz_scaling(a);
        let mut scaled = a.values.clone();
        for c in 0..a.n {
            for k in a.col_ptr[c]..a.col_ptr[c + 1] {
                scaled[k] *= dr[a.row_idx[k]] * dc[c];
            }
        }
        let sym = SymbolicSparseColMatRef::new_checked(a.n, a.n, &a.col_ptr, None, &a.row_idx);
        let mat = SparseColMatRef::new(sym, &scaled);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), mat).ok()?;
        let n = rhs.len();
        let apply = |b: &[f64]| -> Vec<f64> {
            let mut y: Vec<f64> = b.iter().zip(&dr).map(|(b, d)| b * d).collect();
            lu.solve_in_place(MatMut::from_column_major_slice_mut(&mut y, n, 1));
            y.iter().zip(&dc).map(|(y, d)| y * d).collect()
        };

        let b = rhs.to_vec();
        let mut x = apply(&b);
        let mut best = residual_norm(a, &x, &b);
        for _ in 0..REFINEMENT_STEPS {
            if !best.is_finite() || best == 0.0 {
                break;
            }
            let ax = a.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
            let dx = apply(&r);
            let candidate: Vec<f64> = x.iter().zip(&dx).map(|(x, d)| x + d).collect();
            let norm = residual_norm(a, &candidate, &b);
            if !(norm < best) {
                break;
            }
            x = candidate;
            best = norm;
        }
        rhs.copy_from_slice(&x);
        rhs.iter().all(|x| x.is_finite()).then_some(())
    }
}

fn residual_norm(a: &CscMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    ax.iter()
        .zip(b)
        .map(|(ax, b)| (b - ax) * (b - ax))
        .sum::<f64>()
        .sqrt()
}

/// Row and column scalings making every row and column max-norm close to one.
fn ruiz_scaling(a: &CscMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.n;
    let mut dr = vec![1.0; n];
    let mut dc = vec![1.0; n];
    for _ in 0..RUIZ_SWEEPS {
        let mut rmax = vec![0.0f64; n];
        let mut cmax = vec![0.0f64; n];
        for c in 0..n {
            for k in a.col_ptr[c]..a.col_ptr[c + 1] {
                let r = a.row_idx[k];
                let v = (a.values[k] * dr[r] * dc[c]).abs();
                rmax[r] = rmax[r].max(v);
                cmax[c] = cmax[c].max(v);
            }
        }
        for i in 0..n {
            if rmax[i] > 0.0 {
                dr[i] /= rmax[i].sqrt();
            }
            if cmax[i] > 0.0 {
                dc[i] /= cmax[i].sqrt();
            }
        }
    }
    (dr, dc)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton solver bound to one mesh and one set of active elements.
///
/// Reusing it across solves on the same mesh (an alpha sweep) shares the
/// sparsity pattern and the symbolic factorization.
pub struct FlowSolver<'m> {
    assembler: Assembler<'m>,
    lu: Option<SparseLu>,
}

impl<'m> FlowSolver<'m> {
    pub fn new(mesh: &'m Mesh) -> Result<Self, SolveError> {
        Ok(Self {
            assembler: Assembler::new(mesh)?,
            lu: None,
        })
    }

    fn with_active(mesh: &'m Mesh, active: &[bool]) -> Result<Self, SolveError> {
        Ok(Self {
            assembler: Assembler::with_active(mesh, active)?,
            lu: None,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.assembler.mesh()
    }

    /// Penalized solve over the whole mesh.
    pub fn solve(
        &mut self,
        density: &DensityField,
        flow: &FlowParams,
        brinkman: &BrinkmanParams,
        settings: &SolveSettings,
    ) -> Result<(StateField, SolveReport), SolveError> {
        density.validate()?;
        let bc = dirichlet_conditions(self.mesh(), flow)?;
        self.newton(density, flow, brinkman, &bc, settings)
    }

    fn newton(
        &mut self,
        density: &DensityField,
        flow: &FlowParams,
        brinkman: &BrinkmanParams,
        bc: &DirichletSet,
        settings: &SolveSettings,
    ) -> Result<(StateField, SolveReport), SolveError> {
        settings.validate()?;
        flow.validate()?;
        brinkman.validate()?;
        // Bit-reproducible factorizations regardless of the caller's thread pool.
        faer::set_global_parallelism(Par::Seq);

        let mut u = vec![0.0; self.assembler.dof_count()];
        bc.impose(&mut u);

        let mut sys = self.assembler.assemble(density, flow, brinkman, &u)?;
        let mut rhs = apply_constraints(&mut sys, bc, &u);
        let initial_norm = norm2(&sys.residual);

        if settings.initial_guess == InitialGuess::Stokes && flow.rho_f != 0.0 {
            // Systems at h = 0.01 run to hundreds of MB; keep one alive at a time.
            drop(sys);
            let stokes = FlowParams {
                rho_f: 0.0,
                ..*flow
            };
            let mut lin = self.assembler.assemble(density, &stokes, brinkman, &u)?;
            let mut delta = apply_constraints(&mut lin, bc, &u);
            self.linear_solve(&lin.jacobian, &mut delta, 0)?;
            for (x, d) in u.iter_mut().zip(&delta) {
                *x += d;
            }
            drop(lin);
            sys = self.assembler.assemble(density, flow, brinkman, &u)?;
            rhs = apply_constraints(&mut sys, bc, &u);
        }

        let mut history = Vec::new();
        let mut iterations = 0;
        loop {
            let r = norm2(&sys.residual);
            history.push(r);
            if r <= settings.newton_tol * initial_norm {
                break;
            }
            if iterations == settings.max_iters || !r.is_finite() {
                return Err(SolveError::NotConverged {
                    iterations,
                    history,
                });
            }
            iterations += 1;
            self.linear_solve(&sys.jacobian, &mut rhs, iterations)?;
            for (x, d) in u.iter_mut().zip(&rhs) {
                *x += d;
            }
            drop(sys);
            sys = self.assembler.assemble(density, flow, brinkman, &u)?;
            rhs = apply_constraints(&mut sys, bc, &u);
        }

        let state = StateField::from_vector(self.mesh(), &u)?;
        Ok((
            state,
            SolveReport {
                converged: true,
                iterations,
                initial_norm,
                residual_history: history,
            },
        ))
    }

    fn linear_solve(
        &mut self,
        a: &CscMatrix,
        rhs: &mut [f64],
        iteration: usize,
    ) -> Result<(), SolveError> {
        if self.lu.is_none() {
            self.lu = Some(SparseLu::analyze(a).ok_or(SolveError::Singular { iteration })?);
        }
        let lu = self.lu.as_ref().expect("symbolic factorization present");
        lu.solve(a, rhs).ok_or(SolveError::Singular { iteration })
    }
}

/// Solves the penalized problem on `mesh` with element densities `density`.
pub fn solve_flow(
    mesh: &Mesh,
    density: &DensityField,
    flow: &FlowParams,
    brinkman: &BrinkmanParams,
    settings: &SolveSettings,
) -> Result<(StateField, SolveReport), SolveError> {
    FlowSolver::new(mesh)?.solve(density, flow, brinkman, settings)
}

/// Fluid-only reference solution.
///
/// Nodes outside the fluid region hold zeros and are flagged inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub state: StateField,
    pub velocity_active: Vec<bool>,
    pub pressure_active: Vec<bool>,
    /// Velocity nodes shared by fluid and removed elements, held at zero.
    pub interface: Vec<usize>,
}

/// Fluid elements that carry flow: those edge-connected to the outlet.
///
/// Fails when a fluid component touching the inlet does not reach the outlet.
pub fn connected_fluid(mesh: &Mesh, density: &DensityField) -> Result<Vec<bool>, SolveError> {
    let n = mesh.element_count();
    let fluid = |e: usize| density.rho[e] == 1.0;
    let mut component = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if !fluid(start) || component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = count;
        while let Some(e) = stack.pop() {
            for nb in mesh.element_neighbors(e) {
                if fluid(nb) && component[nb] == usize::MAX {
                    component[nb] = count;
                    stack.push(nb);
                }
            }
        }
        count += 1;
    }
    let mut reaches_outlet = vec![false; count];
    for e in mesh.outlet_elements() {
        if fluid(e) {
            reaches_outlet[component[e]] = true;
        }
    }
    let mut fed = false;
    for e in mesh.inlet_elements() {
        if fluid(e) {
            if !reaches_outlet[component[e]] {
                return Err(SolveError::Disconnected);
            }
            fed = true;
        }
    }
    if !fed {
        return Err(SolveError::Disconnected);
    }
    Ok((0..n)
        .map(|e| fluid(e) && reaches_outlet[component[e]])
        .collect())
}

/// Solves on the fluid subdomain only, with no-slip on the solid boundary.
pub fn solve_body_fitted(
    mesh: &Mesh,
    density: &DensityField,
    flow: &FlowParams,
    settings: &SolveSettings,
) -> Result<(FluidState, SolveReport), SolveError> {
    density.validate()?;
    if !density.is_discrete() {
        return Err(SolveError::NonDiscreteDensity);
    }
    let active = connected_fluid(mesh, density)?;
    let nv = mesh.velocity_node_count();
    let np = mesh.pressure_node_count();

    let mut in_active = vec![false; nv];
    let mut in_inactive = vec![false; nv];
    let mut pressure_active = vec![false; np];
    for (e, el) in mesh.elements.iter().enumerate() {
        let flags = if active[e] {
            &mut in_active
        } else {
            &mut in_inactive
        };
        for &k in &el.velocity {
            flags[k] = true;
        }
        if active[e] {
            for &m in &el.pressure {
                pressure_active[m] = true;
            }
        }
    }

    let mut bc = dirichlet_conditions(mesh, flow)?;
    let mut interface = Vec::new();
    for k in 0..nv {
        if in_inactive[k] {
            bc.set(k, 0.0);
            bc.set(nv + k, 0.0);
            if in_active[k] {
                interface.push(k);
            }
        }
    }
    for (m, &on) in pressure_active.iter().enumerate() {
        if !on {
            bc.set(2 * nv + m, 0.0);
        }
    }

    let brinkman = BrinkmanParams {
        alpha_max: 0.0,
        alpha_min: 0.0,
        p_alpha: 1.0,
    };
    let fluid = DensityField::fluid(mesh.element_count());
    let mut solver = FlowSolver::with_active(mesh, &active)?;
    let (state, report) = solver.newton(&fluid, flow, &brinkman, &bc, settings)?;
    Ok((
        FluidState {
            state,
            velocity_active: in_active,
            pressure_active,
            interface,
        },
        report,
    ))
}

/// Writes `node_id x y v1 v2` rows for velocity nodes accepted by `mask`.
pub fn write_velocity_table<W: Write>(
    mut w: W,
    mesh: &Mesh,
    state: &StateField,
    mask: Option<&[bool]>,
) -> io::Result<()> {
    writeln!(w, "node_id x y v1 v2")?;
    for (k, xy) in mesh.velocity_nodes.iter().enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        writeln!(
            w,
            "{k} {:.16e} {:.16e} {:.16e} {:.16e}",
            xy[0], xy[1], state.v1[k], state.v2[k]
        )?;
    }
    Ok(())
}

/// Writes `node_id x y p` rows for pressure nodes accepted by `mask`.
pub fn write_pressure_table<W: Write>(
    mut w: W,
    mesh: &Mesh,
    state: &StateField,
    mask: Option<&[bool]>,
) -> io::Result<()> {
    writeln!(w, "node_id x y p")?;
    for (m, xy) in mesh.pressure_nodes.iter().enumerate() {
        if mask.is_some_and(|mk| !mk[m]) {
            continue;
        }
        writeln!(w, "{m} {:.16e} {:.16e} {:.16e}", xy[0], xy[1], state.p[m])?;
    }
    Ok(())
}
