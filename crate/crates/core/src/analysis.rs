//! Benchmark metrics: leakage through solid elements, fluid-region errors
//! against the body-fitted reference, and the log-log regimes of a sweep.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::fem::StateField;
use crate::mesh::{DensityField, Mesh};

/// Pointwise residual bound (decades) for the linear log-log regime.
pub const LINEAR_RESIDUAL_TOL: f64 = 0.02;
/// Largest relative change per decade still counted as flat.
pub const PLATEAU_REL_CHANGE: f64 = 0.05;
/// Leakage above which a point is treated as outside the linear regime.
pub const LINEAR_REGIME_MAX_V: f64 = 1e-2;

const MIN_RECORDS: usize = 5;
const MIN_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub alpha_max: f64,
    pub max_v_solid: f64,
    /// Percent.
    pub err_v: f64,
    /// Percent.
    pub err_p: f64,
}

impl MetricRecord {
    /// Usable in log space.
    pub fn is_loggable(&self) -> bool {
        self.alpha_max > 0.0 && self.max_v_solid > 0.0
    }

    /// `C = alpha_max * max_v_solid`, constant along the linear regime.
    pub fn leakage_constant(&self) -> f64 {
        self.alpha_max * self.max_v_solid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRegion {
    /// First record of the run (index into the input slice).
    pub start: usize,
    /// Last record of the run, inclusive.
    pub end: usize,
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

impl LinearRegion {
    pub fn len(&self, records: &[MetricRecord]) -> usize {
        records[self.start..=self.end]
            .iter()
            .filter(|r| r.is_loggable())
            .count()
    }
}

fn check_mesh(
    mesh: &Mesh,
    density: &DensityField,
    state: &StateField,
) -> Result<(), AnalysisError> {
    if density.len() != mesh.element_count() {
        return Err(AnalysisError::MeshMismatch(format!(
            "density has {} elements, mesh has {}",
            density.len(),
            mesh.element_count()
        )));
    }
    state
        .check_dims(mesh)
        .map_err(|e| AnalysisError::MeshMismatch(e.to_string()))
}

/// Velocity nodes of at least one solid element, interface nodes included.
pub fn solid_velocity_nodes(mesh: &Mesh, density: &DensityField) -> Vec<usize> {
    let mut mark = vec![false; mesh.velocity_node_count()];
    for (e, el) in mesh.elements.iter().enumerate() {
        if density.is_solid(e) {
            for &k in &el.velocity {
                mark[k] = true;
            }
        }
    }
    (0..mark.len()).filter(|&k| mark[k]).collect()
}

/// Nodes touched by fluid elements only.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidNodes {
    pub velocity: Vec<bool>,
    pub pressure: Vec<bool>,
}

impl FluidNodes {
    pub fn new(mesh: &Mesh, density: &DensityField) -> Self {
        let mut velocity = vec![true; mesh.velocity_node_count()];
        let mut pressure = vec![true; mesh.pressure_node_count()];
        for (e, el) in mesh.elements.iter().enumerate() {
            if density.rho[e] < 1.0 {
                el.velocity.iter().for_each(|&k| velocity[k] = false);
                el.pressure.iter().for_each(|&m| pressure[m] = false);
            }
        }
        Self { velocity, pressure }
    }
}

pub fn max_solid_velocity(
    state: &StateField,
    mesh: &Mesh,
    density: &DensityField,
) -> Result<f64, AnalysisError> {
    check_mesh(mesh, density, state)?;
    let nodes = solid_velocity_nodes(mesh, density);
    if nodes.is_empty() {
        return Err(AnalysisError::Undefined("no solid elements"));
    }
    Ok(nodes.iter().map(|&k| state.speed(k)).fold(0.0, f64::max))
}

/// Max fluid-node error in speed and pressure, in percent of the reference maxima.
pub fn fluid_state_errors(
    state: &StateField,
    reference: &StateField,
    mesh: &Mesh,
    density: &DensityField,
) -> Result<(f64, f64), AnalysisError> {
    check_mesh(mesh, density, reference)?;
    let eval = MetricEvaluator::new(mesh, density, reference)?;
    eval.errors(state)
}

/// Precomputed node sets and reference maxima for scoring many solves
/// against one reference.
#[derive(Debug, Clone)]
pub struct MetricEvaluator<'a> {
    mesh: &'a Mesh,
    reference: &'a StateField,
    solid: Vec<usize>,
    fluid: FluidNodes,
    v_ref_max: f64,
    p_ref_max: f64,
}

impl<'a> MetricEvaluator<'a> {
    pub fn new(
        mesh: &'a Mesh,
        density: &DensityField,
        reference: &'a StateField,
    ) -> Result<Self, AnalysisError> {
        check_mesh(mesh, density, reference)?;
        let fluid = FluidNodes::new(mesh, density);
        let v_ref_max = (0..mesh.velocity_node_count())
            .filter(|&k| fluid.velocity[k])
            .map(|k| reference.speed(k))
            .fold(0.0, f64::max);
        let p_ref_max = (0..mesh.pressure_node_count())
            .filter(|&m| fluid.pressure[m])
            .map(|m| reference.p[m].abs())
            .fold(0.0, f64::max);
        Ok(Self {
            mesh,
            reference,
            solid: solid_velocity_nodes(mesh, density),
            fluid,
            v_ref_max,
            p_ref_max,
        })
    }

    pub fn max_solid_velocity(&self, state: &StateField) -> Result<f64, AnalysisError> {
        state
            .check_dims(self.mesh)
            .map_err(|e| AnalysisError::MeshMismatch(e.to_string()))?;
        if self.solid.is_empty() {
            return Err(AnalysisError::Undefined("no solid elements"));
        }
        Ok(self
            .solid
            .iter()
            .map(|&k| state.speed(k))
            .fold(0.0, f64::max))
    }

    pub fn errors(&self, state: &StateField) -> Result<(f64, f64), AnalysisError> {
        state
            .check_dims(self.mesh)
            .map_err(|e| AnalysisError::MeshMismatch(e.to_string()))?;
        if !(self.v_ref_max > 0.0) {
            return Err(AnalysisError::Undefined(
                "reference velocity vanishes on fluid nodes",
            ));
        }
        if !(self.p_ref_max > 0.0) {
            return Err(AnalysisError::Undefined(
                "reference pressure vanishes on fluid nodes",
            ));
        }
        let r = self.reference;
        let dv = (0..state.v1.len())
            .filter(|&k| self.fluid.velocity[k])
            .map(|k| (state.speed(k) - r.speed(k)).abs())
            .fold(0.0, f64::max);
        let dp = (0..state.p.len())
            .filter(|&m| self.fluid.pressure[m])
            .map(|m| (state.p[m] - r.p[m]).abs())
            .fold(0.0, f64::max);
        Ok((100.0 * dv / self.v_ref_max, 100.0 * dp / self.p_ref_max))
    }

    pub fn record(
        &self,
        alpha_max: f64,
        state: &StateField,
    ) -> Result<MetricRecord, AnalysisError> {
        let (err_v, err_p) = self.errors(state)?;
        Ok(MetricRecord {
            alpha_max,
            max_v_solid: self.max_solid_velocity(state)?,
            err_v,
            err_p,
        })
    }
}

/// Ordinary least squares line through `(x, y)`: (slope, intercept).
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = x.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Longest run of records on one line in (log10 alpha_max, log10 max_v_solid).
///
/// Records must be sorted by alpha_max; rows with zero alpha_max or leakage
/// are skipped. Among runs of equal length the one at higher alpha_max wins.
pub fn detect_linear_region(records: &[MetricRecord]) -> Result<LinearRegion, AnalysisError> {
    detect_linear_region_with_tol(records, LINEAR_RESIDUAL_TOL)
}

pub fn detect_linear_region_with_tol(
    records: &[MetricRecord],
    tol: f64,
) -> Result<LinearRegion, AnalysisError> {
    let usable: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].is_loggable())
        .collect();
    if usable.len() < MIN_RECORDS {
        return Err(AnalysisError::TooFewRecords {
            needed: MIN_RECORDS,
            got: usable.len(),
        });
    }
    let x: Vec<f64> = usable
        .iter()
        .map(|&i| records[i].alpha_max.log10())
        .collect();
    let y: Vec<f64> = usable
        .iter()
        .map(|&i| records[i].max_v_solid.log10())
        .collect();
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::Undefined(
            "records not sorted by increasing alpha_max",
        ));
    }

    let n = usable.len();
    for len in (MIN_RUN..=n).rev() {
        for a in (0..=n - len).rev() {
            let b = a + len;
            let (slope, intercept) = fit_line(&x[a..b], &y[a..b]);
            let max_residual = (a..b)
                .map(|i| (y[i] - (slope * x[i] + intercept)).abs())
                .fold(0.0, f64::max);
            if max_residual < tol && slope.is_finite() {
                return Ok(LinearRegion {
                    start: usable[a],
                    end: usable[b - 1],
                    slope,
                    intercept,
                    max_residual,
                });
            }
        }
    }
    Err(AnalysisError::NoLinearRegion { tol })
}

fn rel_change_per_decade(a: f64, b: f64, decades: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (b - a).abs() / scale / decades
    }
}

/// Smallest swept alpha_max past which both errors stay flat; `None` when
/// they never settle inside the swept range.
pub fn detect_plateau(records: &[MetricRecord]) -> Result<Option<f64>, AnalysisError> {
    let usable: Vec<&MetricRecord> = records.iter().filter(|r| r.alpha_max > 0.0).collect();
    if usable.len() < MIN_RECORDS {
        return Err(AnalysisError::TooFewRecords {
            needed: MIN_RECORDS,
            got: usable.len(),
        });
    }
    let flat: Vec<bool> = usable
        .windows(2)
        .map(|w| {
            let decades = (w[1].alpha_max / w[0].alpha_max).log10();
            decades > 0.0
                && rel_change_per_decade(w[0].err_v, w[1].err_v, decades) < PLATEAU_REL_CHANGE
                && rel_change_per_decade(w[0].err_p, w[1].err_p, decades) < PLATEAU_REL_CHANGE
        })
        .collect();
    let mut start = None;
    for i in (0..flat.len()).rev() {
        if !flat[i] {
            break;
        }
        start = Some(i);
    }
    Ok(start.map(|i| usable[i].alpha_max))
}

/// Volume flux through the inlet (left) or outlet (right) edge, by Simpson's
/// rule per element edge (exact for the quadratic trace).
pub fn edge_flux(mesh: &Mesh, state: &StateField, outlet: bool) -> f64 {
    let vx = 2 * mesh.nx + 1;
    let col = if outlet { vx - 1 } else { 0 };
    let h = mesh.h();
    (0..mesh.ny)
        .map(|ey| {
            let n0 = 2 * ey * vx + col;
            h / 6.0 * (state.v1[n0] + 4.0 * state.v1[n0 + vx] + state.v1[n0 + 2 * vx])
        })
        .sum()
}

pub const METRICS_HEADER: &str = "alpha_max,max_v_solid,err_v_pct,err_p_pct";

/// Writes the metrics table with 17 significant digits.
pub fn write_metrics_csv<W: Write>(mut w: W, records: &[MetricRecord]) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_g17(r.alpha_max),
            fmt_g17(r.max_v_solid),
            fmt_g17(r.err_v),
            fmt_g17(r.err_p)
        )?;
    }
    Ok(())
}

/// 17 significant digits in scientific notation; round-trips every f64.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, MeshSpec};

    fn rec(alpha: f64, v: f64) -> MetricRecord {
        MetricRecord {
            alpha_max: alpha,
            max_v_solid: v,
            err_v: 0.0,
            err_p: 0.0,
        }
    }

    fn small() -> (Mesh, DensityField) {
        let mesh = build_mesh(&MeshSpec::channel(1.0, 0.5)).unwrap();
        let mut d = DensityField::fluid(mesh.element_count());
        d.rho[1] = 0.0;
        (mesh, d)
    }

    #[test]
    fn all_fluid_leakage_is_undefined() {
        let (mesh, _) = small();
        let d = DensityField::fluid(mesh.element_count());
        let s = StateField::zeros(&mesh);
        assert!(matches!(
            max_solid_velocity(&s, &mesh, &d),
            Err(AnalysisError::Undefined(_))
        ));
    }

    #[test]
    fn zero_state_has_zero_leakage() {
        let (mesh, d) = small();
        assert_eq!(
            max_solid_velocity(&StateField::zeros(&mesh), &mesh, &d).unwrap(),
            0.0
        );
    }

    #[test]
    fn leakage_counts_interface_nodes() {
        let (mesh, d) = small();
        let mut s = StateField::zeros(&mesh);
        // corner node shared by the solid element and its fluid neighbour
        let k = mesh.elements[1].velocity[0];
        s.v1[k] = 3.0;
        s.v2[k] = 4.0;
        assert_eq!(max_solid_velocity(&s, &mesh, &d).unwrap(), 5.0);
    }

    #[test]
    fn identical_states_have_zero_error() {
        let (mesh, d) = small();
        let mut s = StateField::zeros(&mesh);
        for (k, v) in s.v1.iter_mut().enumerate() {
            *v = k as f64;
        }
        s.p.iter_mut().for_each(|p| *p = 1.0);
        assert_eq!(fluid_state_errors(&s, &s, &mesh, &d).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn errors_ignore_solid_nodes_and_normalize_by_reference_max() {
        let (mesh, d) = small();
        let fluid = FluidNodes::new(&mesh, &d);
        let mut r = StateField::zeros(&mesh);
        r.v1.iter_mut().for_each(|v| *v = 2.0);
        r.p.iter_mut().for_each(|p| *p = 4.0);
        let mut s = r.clone();
        let solid_k = mesh.elements[1].velocity[4];
        s.v1[solid_k] = 100.0;
        assert_eq!(fluid_state_errors(&s, &r, &mesh, &d).unwrap(), (0.0, 0.0));
        let k = (0..fluid.velocity.len())
            .find(|&k| fluid.velocity[k])
            .unwrap();
        s.v1[k] = 2.5;
        let m = (0..fluid.pressure.len())
            .find(|&m| fluid.pressure[m])
            .unwrap();
        s.p[m] = 3.0;
        let (ev, ep) = fluid_state_errors(&s, &r, &mesh, &d).unwrap();
        assert!((ev - 25.0).abs() < 1e-12);
        assert!((ep - 25.0).abs() < 1e-12);
    }

    #[test]
    fn mesh_mismatch_is_rejected() {
        let (mesh, d) = small();
        let other = build_mesh(&MeshSpec::channel(1.0, 0.25)).unwrap();
        let s = StateField::zeros(&other);
        assert!(matches!(
            fluid_state_errors(&s, &s, &mesh, &d),
            Err(AnalysisError::MeshMismatch(_))
        ));
    }

    #[test]
    fn exact_line_gives_full_range() {
        let recs: Vec<_> = (4..=12)
            .map(|e| rec(10f64.powi(e), 3e5 / 10f64.powi(e)))
            .collect();
        let lr = detect_linear_region(&recs).unwrap();
        assert_eq!((lr.start, lr.end), (0, recs.len() - 1));
        assert!((lr.slope + 1.0).abs() < 1e-12);
        assert!((lr.intercept - 3e5f64.log10()).abs() < 1e-10);
    }

    #[test]
    fn low_alpha_outlier_is_excluded() {
        let mut recs: Vec<_> = (4..=12)
            .map(|e| rec(10f64.powi(e), 3e5 / 10f64.powi(e)))
            .collect();
        recs[0].max_v_solid *= 3.0;
        let lr = detect_linear_region(&recs).unwrap();
        assert_eq!((lr.start, lr.end), (1, recs.len() - 1));
        assert!((lr.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_rows_are_skipped() {
        let mut recs = vec![rec(0.0, 1.0)];
        recs.extend((2..=8).map(|e| rec(10f64.powi(e), 1e3 / 10f64.powi(e))));
        let lr = detect_linear_region(&recs).unwrap();
        assert_eq!((lr.start, lr.end), (1, 7));
    }

    #[test]
    fn too_few_or_scattered_records_fail() {
        let recs: Vec<_> = (0..4).map(|e| rec(10f64.powi(e), 1.0)).collect();
        assert!(matches!(
            detect_linear_region(&recs),
            Err(AnalysisError::TooFewRecords { .. })
        ));
        let zigzag: Vec<_> = (0..8)
            .map(|e| rec(10f64.powi(e), if e % 2 == 0 { 1.0 } else { 1e-3 }))
            .collect();
        assert!(matches!(
            detect_linear_region(&zigzag),
            Err(AnalysisError::NoLinearRegion { .. })
        ));
    }

    fn with_errors(alpha: f64, ev: f64, ep: f64) -> MetricRecord {
        MetricRecord {
            alpha_max: alpha,
            max_v_solid: 1.0 / alpha,
            err_v: ev,
            err_p: ep,
        }
    }

    #[test]
    fn plateau_absent_for_decreasing_errors() {
        let recs: Vec<_> = (0..8)
            .map(|e| with_errors(10f64.powi(e), 10f64.powi(-e), 10f64.powi(-e)))
            .collect();
        assert_eq!(detect_plateau(&recs).unwrap(), None);
    }

    #[test]
    fn plateau_at_first_record_for_constant_errors() {
        let recs: Vec<_> = (0..8)
            .map(|e| with_errors(10f64.powi(e), 0.3, 0.2))
            .collect();
        assert_eq!(detect_plateau(&recs).unwrap(), Some(1.0));
    }

    #[test]
    fn plateau_after_decay() {
        let recs: Vec<_> = (0..10)
            .map(|e| {
                let v = 10f64.powi(-e).max(1e-5);
                with_errors(10f64.powi(e), v, 2.0 * v)
            })
            .collect();
        assert_eq!(detect_plateau(&recs).unwrap(), Some(1e5));
    }

    #[test]
    fn metrics_csv_round_trips() {
        let r = MetricRecord {
            alpha_max: 1e8,
            max_v_solid: 0.1 + 0.2,
            err_v: 1.0 / 3.0,
            err_p: 0.0,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row: Vec<f64> = text
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(row, vec![r.alpha_max, r.max_v_solid, r.err_v, r.err_p]);
        assert!(text.starts_with(METRICS_HEADER));
    }
}
