//! Structured square-element channel meshes and the beam-in-channel geometry.
//!
//! Velocity unknowns live on the `(2nx+1) x (2ny+1)` lattice of Q2 nodes,
//! pressure unknowns on the `(nx+1) x (ny+1)` lattice of element corners.
//! Local node ordering inside an element is tensor-product: velocity node
//! `a + 3b` sits at natural coordinates `(a-1, b-1)`, pressure node `a + 2b`
//! at `(2a-1, 2b-1)`.

use serde::{Deserialize, Serialize};

use crate::error::MeshError;

/// Relative tolerance used when checking that lengths are integer multiples of `h`.
const GRID_TOL: f64 = 1e-8;

/// Channel dimensions and element size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    /// Inlet width, the characteristic length `L_c`.
    pub channel_width: f64,
    /// Streamwise extent, always `2 L_c`.
    pub channel_length: f64,
    /// Element side length.
    pub h: f64,
}

impl MeshSpec {
    /// Benchmark channel of width `l_c` and length `2 l_c`.
    pub fn channel(l_c: f64, h: f64) -> Self {
        Self {
            channel_width: l_c,
            channel_length: 2.0 * l_c,
            h,
        }
    }

    pub fn validate(&self) -> Result<(usize, usize), MeshError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(MeshError::NonPositive {
                name: "h",
                value: self.h,
            });
        }
        if !(self.channel_width > 0.0 && self.channel_width.is_finite()) {
            return Err(MeshError::NonPositive {
                name: "channel_width",
                value: self.channel_width,
            });
        }
        let rel = (self.channel_length - 2.0 * self.channel_width).abs() / self.channel_width;
        if rel > GRID_TOL {
            return Err(MeshError::AspectRatio {
                width: self.channel_width,
                length: self.channel_length,
            });
        }
        let nx = cells_along("channel_length", self.channel_length, self.h)?;
        let ny = cells_along("channel_width", self.channel_width, self.h)?;
        Ok((nx, ny))
    }
}

fn cells_along(name: &'static str, length: f64, h: f64) -> Result<usize, MeshError> {
    let ratio = length / h;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > GRID_TOL * ratio.max(1.0) {
        return Err(MeshError::NotDivisible { name, length, h });
    }
    Ok(n as usize)
}

/// Connectivity of one square element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub velocity: [usize; 9],
    pub pressure: [usize; 4],
}

/// Boundary classification of a velocity node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    Inlet,
    Outlet,
    Wall,
}

/// Node sets on the channel boundary.
///
/// Inlet corners belong to the inlet, where the profile vanishes. Outlet
/// corners belong to the walls: the outlet carries no velocity condition,
/// so they would otherwise slip.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoundaryTags {
    pub inlet: Vec<usize>,
    pub outlet: Vec<usize>,
    pub walls: Vec<usize>,
    /// Pressure nodes on the outlet edge.
    pub outlet_pressure: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub spec: MeshSpec,
    pub nx: usize,
    pub ny: usize,
    pub velocity_nodes: Vec<[f64; 2]>,
    pub pressure_nodes: Vec<[f64; 2]>,
    pub elements: Vec<Element>,
    pub boundary: BoundaryTags,
}

/// Builds the structured mesh: left edge inlet, right edge outlet, top and bottom walls.
pub fn build_mesh(spec: &MeshSpec) -> Result<Mesh, MeshError> {
    let (nx, ny) = spec.validate()?;
    let h = spec.h;
    let (vx, vy) = (2 * nx + 1, 2 * ny + 1);
    let (px, py) = (nx + 1, ny + 1);

    let mut velocity_nodes = Vec::with_capacity(vx * vy);
    for j in 0..vy {
        for i in 0..vx {
            velocity_nodes.push([i as f64 * 0.5 * h, j as f64 * 0.5 * h]);
        }
    }
    let mut pressure_nodes = Vec::with_capacity(px * py);
    for j in 0..py {
        for i in 0..px {
            pressure_nodes.push([i as f64 * h, j as f64 * h]);
        }
    }

    let mut elements = Vec::with_capacity(nx * ny);
    for ey in 0..ny {
        for ex in 0..nx {
            let mut velocity = [0; 9];
            for b in 0..3 {
                for a in 0..3 {
                    velocity[a + 3 * b] = (2 * ey + b) * vx + 2 * ex + a;
                }
            }
            let mut pressure = [0; 4];
            for b in 0..2 {
                for a in 0..2 {
                    pressure[a + 2 * b] = (ey + b) * px + ex + a;
                }
            }
            elements.push(Element { velocity, pressure });
        }
    }

    let mut boundary = BoundaryTags::default();
    for j in 0..vy {
        boundary.inlet.push(j * vx);
    }
    for j in 1..vy - 1 {
        boundary.outlet.push(j * vx + vx - 1);
    }
    for i in 1..vx {
        boundary.walls.push(i);
        boundary.walls.push((vy - 1) * vx + i);
    }
    boundary.walls.sort_unstable();
    for j in 0..py {
        boundary.outlet_pressure.push(j * px + px - 1);
    }

    Ok(Mesh {
        spec: *spec,
        nx,
        ny,
        velocity_nodes,
        pressure_nodes,
        elements,
        boundary,
    })
}

impl Mesh {
    pub fn h(&self) -> f64 {
        self.spec.h
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn velocity_node_count(&self) -> usize {
        self.velocity_nodes.len()
    }

    pub fn pressure_node_count(&self) -> usize {
        self.pressure_nodes.len()
    }

    /// Coordinates of the nine velocity nodes of element `e`.
    pub fn element_coords(&self, e: usize) -> [[f64; 2]; 9] {
        self.elements[e].velocity.map(|n| self.velocity_nodes[n])
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 2] {
        let h = self.h();
        let (ex, ey) = (e % self.nx, e / self.nx);
        [(ex as f64 + 0.5) * h, (ey as f64 + 0.5) * h]
    }

    /// Boundary tag of a velocity node, `None` for interior nodes.
    pub fn velocity_tag(&self, node: usize) -> Option<BoundaryTag> {
        let vx = 2 * self.nx + 1;
        let vy = 2 * self.ny + 1;
        let (i, j) = (node % vx, node / vx);
        if i == 0 {
            Some(BoundaryTag::Inlet)
        } else if j == 0 || j == vy - 1 {
            Some(BoundaryTag::Wall)
        } else if i == vx - 1 {
            Some(BoundaryTag::Outlet)
        } else {
            None
        }
    }

    /// Elements adjacent to the inlet edge (`ex == 0`).
    pub fn inlet_elements(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.ny).map(move |ey| ey * self.nx)
    }

    /// Elements adjacent to the outlet edge (`ex == nx - 1`).
    pub fn outlet_elements(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.ny).map(move |ey| ey * self.nx + self.nx - 1)
    }

    /// Edge neighbours of element `e`.
    pub fn element_neighbors(&self, e: usize) -> impl Iterator<Item = usize> {
        let (nx, ny) = (self.nx, self.ny);
        let (ex, ey) = (e % nx, e / nx);
        let mut out = [None; 4];
        if ex > 0 {
            out[0] = Some(e - 1);
        }
        if ex + 1 < nx {
            out[1] = Some(e + 1);
        }
        if ey > 0 {
            out[2] = Some(e - nx);
        }
        if ey + 1 < ny {
            out[3] = Some(e + nx);
        }
        out.into_iter().flatten()
    }
}

/// Axis-aligned rectangle `[x0, x0+width] x [y0, y0+height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, width: f64, height: f64) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn x1(&self) -> f64 {
        self.x0 + self.width
    }

    pub fn y1(&self) -> f64 {
        self.y0 + self.height
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        p[0] > self.x0 && p[0] < self.x1() && p[1] > self.y0 && p[1] < self.y1()
    }

    /// Closed containment with a small absolute slack.
    pub fn contains_rect(&self, other: &Rect, slack: f64) -> bool {
        other.x0 >= self.x0 - slack
            && other.y0 >= self.y0 - slack
            && other.x1() <= self.x1() + slack
            && other.y1() <= self.y1() + slack
    }

    pub fn scaled(&self, s: f64) -> Rect {
        Rect::new(self.x0 * s, self.y0 * s, self.width * s, self.height * s)
    }

    fn aligned_to(&self, h: f64) -> bool {
        [self.x0, self.y0, self.x1(), self.y1()].iter().all(|&v| {
            let r = v / h;
            (r - r.round()).abs() <= GRID_TOL * r.abs().max(1.0)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    /// Design domain, solid in the initial discrete design.
    Design,
    /// Non-design solid (the beam).
    NonDesign,
    /// User-supplied solid rectangle.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolidRegion {
    pub kind: RegionKind,
    pub rect: Rect,
}

/// Solid rectangles placed in a `channel_width x channel_length` channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub channel_width: f64,
    pub channel_length: f64,
    pub regions: Vec<SolidRegion>,
}

/// Placement of the benchmark rectangles for `L_c = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkLayout {
    pub design_x0: f64,
    pub design_y0: f64,
    pub beam_x0: f64,
    pub beam_y0: f64,
}

impl Default for BenchmarkLayout {
    /// Design box centred in x on the bottom wall; beam on the bottom wall
    /// with its left edge on the channel centreline.
    fn default() -> Self {
        Self {
            design_x0: 0.3,
            design_y0: 0.0,
            beam_x0: 1.0,
            beam_y0: 0.0,
        }
    }
}

pub const DESIGN_BOX_WIDTH: f64 = 1.4;
pub const DESIGN_BOX_HEIGHT: f64 = 0.8;
pub const BEAM_WIDTH: f64 = 0.05;
pub const BEAM_HEIGHT: f64 = 0.5;

/// Name of the built-in geometry preset.
pub const BENCHMARK_PRESET: &str = "modified-beam-in-channel";

impl GeometrySpec {
    /// An empty channel of width `l_c`.
    pub fn empty(l_c: f64) -> Self {
        Self {
            channel_width: l_c,
            channel_length: 2.0 * l_c,
            regions: Vec::new(),
        }
    }

    /// The modified beam-in-channel benchmark at unit scale.
    pub fn modified_beam_in_channel(layout: BenchmarkLayout) -> Self {
        Self {
            channel_width: 1.0,
            channel_length: 2.0,
            regions: vec![
                SolidRegion {
                    kind: RegionKind::Design,
                    rect: Rect::new(
                        layout.design_x0,
                        layout.design_y0,
                        DESIGN_BOX_WIDTH,
                        DESIGN_BOX_HEIGHT,
                    ),
                },
                SolidRegion {
                    kind: RegionKind::NonDesign,
                    rect: Rect::new(layout.beam_x0, layout.beam_y0, BEAM_WIDTH, BEAM_HEIGHT),
                },
            ],
        }
    }

    /// Benchmark geometry at characteristic length `l_c` with the default layout.
    pub fn benchmark(l_c: f64) -> Result<Self, MeshError> {
        scale_geometry(
            &Self::modified_beam_in_channel(BenchmarkLayout::default()),
            l_c,
        )
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let channel = Rect::new(0.0, 0.0, self.channel_length, self.channel_width);
        let slack = GRID_TOL * self.channel_width;
        for (i, r) in self.regions.iter().enumerate() {
            if !(r.rect.width >= 0.0 && r.rect.height >= 0.0) {
                return Err(MeshError::Geometry(format!(
                    "region {i} has negative extent"
                )));
            }
            if !channel.contains_rect(&r.rect, slack) {
                return Err(MeshError::Geometry(format!(
                    "region {i} ({:?}) extends outside the channel",
                    r.kind
                )));
            }
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.kind != RegionKind::NonDesign {
                continue;
            }
            let nested = self
                .regions
                .iter()
                .any(|d| d.kind == RegionKind::Design && d.rect.contains_rect(&r.rect, slack));
            let has_design = self.regions.iter().any(|d| d.kind == RegionKind::Design);
            if has_design && !nested {
                return Err(MeshError::Geometry(format!(
                    "non-design region {i} is not inside the design box"
                )));
            }
        }
        Ok(())
    }
}

/// Scales a unit (`L_c = 1`) geometry linearly to characteristic length `l_c`.
pub fn scale_geometry(base: &GeometrySpec, l_c: f64) -> Result<GeometrySpec, MeshError> {
    if !(l_c > 0.0 && l_c.is_finite()) {
        return Err(MeshError::NonPositive {
            name: "L_c",
            value: l_c,
        });
    }
    Ok(GeometrySpec {
        channel_width: base.channel_width * l_c,
        channel_length: base.channel_length * l_c,
        regions: base
            .regions
            .iter()
            .map(|r| SolidRegion {
                kind: r.kind,
                rect: r.rect.scaled(l_c),
            })
            .collect(),
    })
}

/// Per-element fluid fraction: 1 is fluid, 0 is solid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub rho: Vec<f64>,
}

impl DensityField {
    pub fn uniform(n: usize, value: f64) -> Self {
        Self {
            rho: vec![value; n],
        }
    }

    pub fn fluid(n: usize) -> Self {
        Self::uniform(n, 1.0)
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        match self.rho.iter().position(|r| !(0.0..=1.0).contains(r)) {
            Some(e) => Err(MeshError::DensityOutOfRange {
                element: e,
                value: self.rho[e],
            }),
            None => Ok(()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.rho.iter().all(|&r| r == 0.0 || r == 1.0)
    }

    pub fn is_solid(&self, e: usize) -> bool {
        self.rho[e] == 0.0
    }

    pub fn solid_count(&self) -> usize {
        self.rho.iter().filter(|&&r| r == 0.0).count()
    }
}

/// Element labels produced by rasterization.
#[derive(Debug, Clone, PartialEq)]
pub struct Rasterization {
    pub density: DensityField,
    /// Innermost region covering each element, if any.
    pub region: Vec<Option<RegionKind>>,
}

impl Rasterization {
    pub fn count(&self, kind: RegionKind) -> usize {
        self.region.iter().filter(|r| **r == Some(kind)).count()
    }
}

/// Sets `rho = 0` on elements whose centroid lies in any solid region.
///
/// Every region must lie on grid lines, except a region nested inside an
/// aligned region: it does not change the solid set and is labelled by
/// centroid only.
pub fn rasterize_density(mesh: &Mesh, geom: &GeometrySpec) -> Result<DensityField, MeshError> {
    rasterize_regions(mesh, geom).map(|r| r.density)
}

pub fn rasterize_regions(mesh: &Mesh, geom: &GeometrySpec) -> Result<Rasterization, MeshError> {
    geom.validate()?;
    let slack = GRID_TOL * mesh.spec.channel_width;
    let same = |a: f64, b: f64| (a - b).abs() <= slack;
    if !same(geom.channel_width, mesh.spec.channel_width)
        || !same(geom.channel_length, mesh.spec.channel_length)
    {
        return Err(MeshError::Geometry(format!(
            "geometry channel {}x{} does not match mesh channel {}x{}",
            geom.channel_length,
            geom.channel_width,
            mesh.spec.channel_length,
            mesh.spec.channel_width
        )));
    }
    let h = mesh.h();
    let aligned: Vec<bool> = geom.regions.iter().map(|r| r.rect.aligned_to(h)).collect();
    for (i, r) in geom.regions.iter().enumerate() {
        if aligned[i] {
            continue;
        }
        let covered = geom
            .regions
            .iter()
            .enumerate()
            .any(|(j, o)| j != i && aligned[j] && o.rect.contains_rect(&r.rect, slack));
        if !covered {
            return Err(MeshError::NotAligned {
                region: i,
                kind: format!("{:?}", r.kind),
                h,
            });
        }
    }

    let n = mesh.element_count();
    let mut rho = vec![1.0; n];
    let mut region = vec![None; n];
    for (e, (rho_e, label)) in rho.iter_mut().zip(region.iter_mut()).enumerate() {
        let c = mesh.element_centroid(e);
        for r in &geom.regions {
            if r.rect.contains_point(c) {
                *rho_e = 0.0;
                // Later regions are nested inside earlier ones in all presets.
                *label = Some(r.kind);
            }
        }
    }
    Ok(Rasterization {
        density: DensityField { rho },
        region,
    })
}
