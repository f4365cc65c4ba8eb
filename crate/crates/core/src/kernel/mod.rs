//! A small sketch-extrude solid modeler: planar regions, CSG over prisms,
//! surface sampling, rendering and voxel topology queries.

pub mod region;
pub mod render;
pub mod solid;
pub mod voxel;

use std::fmt::Write as _;

use thiserror::Error;

pub use region::{build_region, PlanarRegion, PolyLoop};
pub use render::{render_isometric, Camera, Framing, Shading};
pub use solid::{build_solid, extrude, extrude_interval, Aabb, Csg, Prism, Solid};
pub use voxel::{count_through_holes, mirror_iou, voxelize, VoxelGrid};

/// Maximum chord length used to tessellate arcs and circles.
pub const TAU_TESS: f64 = 1e-3;
/// Offset used to confirm that a sample sits on the surface.
pub const TAU_SURF: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("loop {0} intersects itself")]
    SelfIntersecting(usize),
    #[error("loop {0} has fewer than 3 vertices")]
    DegenerateLoop(usize),
    #[error("open loop: {0}")]
    OpenLoop(String),
    #[error("extrusion has zero depth")]
    ZeroDepth,
    #[error("cannot remove material from an empty solid")]
    RemoveFromEmpty,
    #[error("solid is empty")]
    EmptySolid,
    #[error("extruded region is empty")]
    EmptyRegion,
    #[error("hole count differs between resolutions ({low} vs {high})")]
    Indeterminate { low: usize, high: usize },
    #[error("surface sampling stalled after {accepted} points")]
    SamplingStalled { accepted: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for i in 0..3 {
                c[i] += p[i];
            }
        }
        let n = self.points.len().max(1) as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Whitespace-separated `x y z` lines.
    pub fn to_xyz(&self) -> String {
        let mut s = String::with_capacity(self.points.len() * 40);
        for p in &self.points {
            writeln!(s, "{} {} {}", p[0], p[1], p[2]).expect("writing to string");
        }
        s
    }

    pub fn from_xyz(text: &str) -> Result<Self, String> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", i + 1))?;
            if v.len() != 3 {
                return Err(format!("line {}: expected 3 values", i + 1));
            }
            points.push([v[0], v[1], v[2]]);
        }
        Ok(Self { points })
    }
}

/// Default Chamfer tolerance for mirror symmetry on unit-diagonal clouds.
/// Sampling noise alone gives about 3e-4 at the default sample count;
/// visibly asymmetric parts score above 1e-2.
pub const SYMMETRY_TOL: f64 = 2e-3;
pub const SYMMETRY_SAMPLES: usize = 4096;

/// Chamfer distance between the surface cloud, scaled to unit bounding-box
/// diagonal and centered on its centroid, and its mirror image across each
/// axis-normal plane.
pub fn symmetry_scores(solid: &Solid) -> Result<[f64; 3], KernelError> {
    let cloud = solid.sample_points(SYMMETRY_SAMPLES, 0x5eed)?;
    let c = cloud.centroid();
    let bb = solid.aabb().extent();
    let diag = (bb[0] * bb[0] + bb[1] * bb[1] + bb[2] * bb[2]).sqrt().max(1e-12);
    let centered: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| [(p[0] - c[0]) / diag, (p[1] - c[1]) / diag, (p[2] - c[2]) / diag])
        .collect();
    let mut out = [0.0; 3];
    for (axis, score) in out.iter_mut().enumerate() {
        let mirrored: Vec<[f64; 3]> = centered
            .iter()
            .map(|p| {
                let mut q = *p;
                q[axis] = -q[axis];
                q
            })
            .collect();
        *score = crate::metrics::chamfer(&centered, &mirrored);
    }
    Ok(out)
}

/// Axes `a` whose mirror plane through the surface centroid maps the
/// solid onto itself: `CD(cloud, mirror_a(cloud)) < tol`.
pub fn symmetry_planes(solid: &Solid, tol: f64) -> Result<[bool; 3], KernelError> {
    Ok(symmetry_scores(solid)?.map(|s| s < tol))
}
