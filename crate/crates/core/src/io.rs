//! File formats (JSON configs, meshes and solutions) in double precision.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dmaop::{ConstraintResiduals, DecisionVector, Variant};
use crate::error::{invalid, Result};
use crate::geometry::{Polygon, P2};
use crate::mesh::{triangulate_polygon, Mesh, Point};
use crate::problem::{Density, DensityKind, GridDensity, ProblemInstance, TargetDomain};
use crate::solver::{Solution, SolveReport, SolverOptions, StopReason};
use crate::transport::ReferencePotential;

pub const DEFAULT_H: f64 = 0.1;

/// `{ "dim", "vertices", "simplices", "polygon" }`, indices 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
    pub simplices: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<P2<f64>>>,
}

impl MeshFile {
    pub fn from_mesh(mesh: &Mesh<f64>) -> Self {
        Self {
            dim: mesh.dim(),
            vertices: mesh.vertices().map(<[f64]>::to_vec).collect(),
            simplices: mesh.simplices().map(<[usize]>::to_vec).collect(),
            polygon: mesh.polygon().map(|p| p.points().to_vec()),
        }
    }

    pub fn to_mesh(&self) -> Result<Mesh<f64>> {
        if let Some(j) = self.vertices.iter().position(|v| v.len() != self.dim) {
            return invalid(format!(
                "mesh declares dim {} but vertex {j} has {} coordinates",
                self.dim,
                self.vertices[j].len()
            ));
        }
        if let Some(i) = self.simplices.iter().position(|s| s.len() != self.dim + 1) {
            return invalid(format!("simplex {i} must list {} vertices", self.dim + 1));
        }
        let coords = self.vertices.iter().flatten().copied().collect();
        let flat = self.simplices.iter().flatten().copied().collect();
        let polygon = self.polygon.clone().map(Polygon::new);
        Mesh::new(self.dim, coords, flat, polygon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub polygon: Vec<P2<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Disc { center: Vec<f64>, radius: f64 },
    Polygon(Vec<P2<f64>>),
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetDomain<f64>> {
        match self {
            Self::Disc { center, radius } => TargetDomain::disc(center.clone(), *radius),
            Self::Polygon(pts) => TargetDomain::polygon(pts.clone()),
        }
    }

    pub fn from_domain(t: &TargetDomain<f64>) -> Self {
        match t {
            TargetDomain::Disc { center, radius } => Self::Disc {
                center: center.clone(),
                radius: *radius,
            },
            TargetDomain::Polygon { polygon, .. } => Self::Polygon(polygon.points().to_vec()),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

/// Density description. `scale` multiplies the shape; it is written back
/// after mass normalization so that solution files are self-contained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform {
        #[serde(default = "one")]
        height: f64,
    },
    Gaussian {
        center: Vec<f64>,
        sigma: Vec<f64>,
        peak: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
    /// Samples read from a CSV file, resolved relative to the config file.
    Grid {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
    GridInline {
        lo: P2<f64>,
        hi: P2<f64>,
        nx: usize,
        ny: usize,
        samples: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
}

impl Default for DensitySpec {
    fn default() -> Self {
        Self::Uniform { height: 1.0 }
    }
}

fn positive_scale(scale: f64) -> Result<f64> {
    if scale > 0.0 && scale.is_finite() {
        Ok(scale)
    } else {
        invalid(format!("density scale must be positive, got {scale}"))
    }
}

impl DensitySpec {
    pub fn build(&self, base_dir: &Path) -> Result<Density<f64>> {
        let mut d = match self {
            Self::Uniform { height } => {
                return Ok(Density::uniform(positive_scale(*height)?));
            }
            Self::Gaussian {
                center,
                sigma,
                peak,
                floor,
                ..
            } => Density::gaussian(center.clone(), sigma.clone(), *peak, *floor)?,
            Self::Grid { path, floor, .. } => {
                let full = base_dir.join(path);
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    crate::Error::InvalidInput(format!("cannot read grid density {}: {e}", full.display()))
                })?;
                Density::grid(GridDensity::from_csv(&text, *floor)?)
            }
            Self::GridInline {
                lo,
                hi,
                nx,
                ny,
                samples,
                floor,
                ..
            } => Density::grid(GridDensity::new(*lo, *hi, *nx, *ny, samples.clone(), *floor)?),
        };
        d.scale = match self {
            Self::Gaussian { scale, .. } | Self::Grid { scale, .. } | Self::GridInline { scale, .. } => {
                positive_scale(*scale)?
            }
            Self::Uniform { .. } => unreachable!(),
        };
        Ok(d)
    }

    /// Self-contained description (grids are inlined).
    pub fn from_density(d: &Density<f64>) -> Self {
        match &d.kind {
            DensityKind::Uniform => Self::Uniform { height: d.scale },
            DensityKind::GaussianFloored {
                center,
                sigma,
                peak,
                floor,
            } => Self::Gaussian {
                center: center.clone(),
                sigma: sigma.clone(),
                peak: *peak,
                floor: Some(*floor),
                scale: d.scale,
            },
            DensityKind::Grid(g) => Self::GridInline {
                lo: g.lo,
                hi: g.hi,
                nx: g.nx,
                ny: g.ny,
                samples: g.samples.clone(),
                floor: Some(g.floor),
                scale: d.scale,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub h: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { h: DEFAULT_H }
    }
}

fn default_variant() -> Variant {
    Variant::Dmaop
}

fn yes() -> bool {
    true
}

/// Problem configuration file. `solver.variant` is overridden by `variant`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub domain: DomainSpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub f: DensitySpec,
    #[serde(default)]
    pub g: DensitySpec,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub mesh: MeshSpec,
    /// Rescale `g` to the mass of `f`.
    #[serde(default = "yes")]
    pub normalize_mass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferencePotential>,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn domain_polygon(&self) -> Result<Polygon<f64>> {
        let p = Polygon::new(self.domain.polygon.clone());
        p.validate()?;
        Ok(p)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut opts = self.solver.clone().unwrap_or_default();
        opts.variant = self.variant;
        opts
    }

    pub fn generate_mesh(&self, h: f64) -> Result<Mesh<f64>> {
        triangulate_polygon(&self.domain_polygon()?, h)
    }

    /// Assembles the instance on `mesh` (or a generated mesh at `mesh.h`).
    pub fn instance(&self, base_dir: &Path, mesh: Option<Mesh<f64>>) -> Result<ProblemInstance<f64>> {
        let mesh = match mesh {
            Some(m) => m,
            None => self.generate_mesh(self.mesh.h)?,
        };
        let target = self.target.build()?;
        let f = self.f.build(base_dir)?;
        let g = self.g.build(base_dir)?;
        let inst = ProblemInstance::new(mesh, target, f, g, self.variant)?;
        if self.normalize_mass {
            inst.mass_normalize()
        } else {
            Ok(inst)
        }
    }
}

/// Iteration counts and the cost trace of a solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub iters: IterCounts,
    pub converged: bool,
    pub reason: StopReason,
    pub initial_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterCounts {
    pub outer: usize,
    pub newton: usize,
    pub subgradient: usize,
}

impl ReportFile {
    pub fn from_report(r: &SolveReport<f64>, timings: bool) -> Self {
        Self {
            iters: IterCounts {
                outer: r.outer_iters,
                newton: r.newton_iters,
                subgradient: r.subgrad_iters,
            },
            converged: r.converged,
            reason: r.reason,
            initial_cost: r.initial_cost,
            wall_time_s: timings.then_some(r.wall_time_s),
            trace: r.trace.clone(),
        }
    }
}

/// Solution file, including the problem data needed to re-verify it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub variant: Variant,
    #[serde(rename = "N")]
    pub n: usize,
    pub psi: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    pub b: f64,
    pub cost: f64,
    pub residuals: ConstraintResiduals<f64>,
    pub mesh_h: f64,
    pub report: ReportFile,
    pub mesh: MeshFile,
    pub target: TargetSpec,
    pub f: DensitySpec,
    pub g: DensitySpec,
}

impl SolutionFile {
    pub fn new(inst: &ProblemInstance<f64>, sol: &Solution<f64>, report: &SolveReport<f64>, timings: bool) -> Result<Self> {
        let mesh = &inst.mesh;
        let mut mesh_h = 0.0f64;
        for i in 0..mesh.num_simplices() {
            mesh_h = mesh_h.max(mesh.diameter(i)?);
        }
        Ok(Self {
            variant: sol.variant,
            n: sol.dv.len(),
            psi: sol.dv.psi.clone(),
            eta: sol.dv.eta.chunks(sol.dv.dim()).map(<[f64]>::to_vec).collect(),
            b: sol.b_offset,
            cost: sol.cost,
            residuals: report.residuals,
            mesh_h,
            report: ReportFile::from_report(report, timings),
            mesh: MeshFile::from_mesh(mesh),
            target: TargetSpec::from_domain(&inst.target),
            f: DensitySpec::from_density(&inst.f),
            g: DensitySpec::from_density(&inst.g),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Rebuilds the instance the solution was computed on.
    pub fn instance(&self) -> Result<ProblemInstance<f64>> {
        let mesh = self.mesh.to_mesh()?;
        let f = self.f.build(Path::new("."))?;
        let g = self.g.build(Path::new("."))?;
        ProblemInstance::new(mesh, self.target.build()?, f, g, self.variant)
    }

    pub fn decision_vector(&self) -> Result<DecisionVector<f64>> {
        let dim = self.mesh.dim;
        if self.psi.len() != self.n || self.eta.len() != self.n {
            return invalid(format!(
                "solution lists {} psi and {} eta values but N = {}",
                self.psi.len(),
                self.eta.len(),
                self.n
            ));
        }
        if let Some(j) = self.eta.iter().position(|e| e.len() != dim) {
            return invalid(format!("eta of vertex {j} must have {dim} components"));
        }
        DecisionVector::new(dim, self.psi.clone(), self.eta.iter().flatten().copied().collect())
    }

    pub fn solution(&self) -> Result<Solution<f64>> {
        Ok(Solution {
            dv: self.decision_vector()?,
            b_offset: self.b,
            cost: self.cost,
            variant: self.variant,
        })
    }

    pub fn sources(&self) -> Vec<Point<f64>> {
        self.mesh.vertices.iter().cloned().map(Point::new).collect()
    }
}

pub fn write_json<S: Serialize>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
