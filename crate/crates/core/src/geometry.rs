//! Dequantization and lowering of raw extrusion records into canvas-space
//! sketch geometry.
//!
//! All lowered coordinates live on the unit canvas `[0,1]²` whose center is
//! [`CANVAS_CENTER`]. A canvas unit is also the world unit used by the solid
//! kernel, so an extrusion depth of `0.25` spans a quarter of the canvas.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sequence::{CadSequence, ExtrusionRecordRaw, PrimitiveSpec};

/// Loop closure tolerance in canvas units.
pub const EPS_CLOSE: f64 = 1e-6;
/// Slack allowed outside the unit canvas before a point is rejected.
pub const CANVAS_SLACK: f64 = 1e-9;
pub const CANVAS_CENTER: PixelPoint = PixelPoint { u: 0.5, v: 0.5 };

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("{what} = {value} is out of range")]
    OutOfRange { what: &'static str, value: i64 },
    #[error("sketch normal is degenerate")]
    DegenerateNormal,
    #[error("point ({u:.6}, {v:.6}) falls off the canvas")]
    OffCanvas { u: f64, v: f64 },
    #[error("arc chord has zero length")]
    DegenerateChord,
    #[error("arc sweep {0} exceeds 360 degrees")]
    ReflexOverflow(f64),
    #[error("loop {loop_index} is open: gap {gap:.3e} at primitive {primitive}")]
    OpenLoop { loop_index: usize, primitive: usize, gap: f64 },
}

/// `N(p) = (p − 128) / 128`.
pub fn normalize(p: i64) -> Result<f64, GeometryError> {
    if !(0..=255).contains(&p) {
        return Err(GeometryError::OutOfRange { what: "quantized value", value: p });
    }
    Ok((p as f64 - 128.0) / 128.0)
}

fn n8(p: u8) -> f64 {
    (f64::from(p) - 128.0) / 128.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlaneId {
    Right,
    Front,
    Top,
}

impl PlaneId {
    pub const ALL: [PlaneId; 3] = [PlaneId::Right, PlaneId::Front, PlaneId::Top];

    /// World axis normal to this plane.
    pub fn axis(self) -> usize {
        self as usize
    }

    pub fn from_axis(axis: usize) -> Self {
        Self::ALL[axis]
    }

    /// The two world axes kept on the canvas, in index order.
    pub fn kept_axes(self) -> (usize, usize) {
        match self {
            PlaneId::Right => (1, 2),
            PlaneId::Front => (0, 2),
            PlaneId::Top => (0, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlaneId::Right => "Right",
            PlaneId::Front => "Front",
            PlaneId::Top => "Top",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneBasis {
    pub n: Vector3<f64>,
    pub x_axis: Vector3<f64>,
    pub y_axis: Vector3<f64>,
    pub plane_id: PlaneId,
    pub offset: f64,
}

/// Builds the sketch frame from quantized angles and origin.
pub fn plane_basis(
    theta_q: u8,
    phi_q: u8,
    gamma_q: u8,
    origin_q: [u8; 3],
) -> Result<PlaneBasis, GeometryError> {
    let (theta, phi, gamma) = (
        std::f64::consts::PI * n8(theta_q),
        std::f64::consts::PI * n8(phi_q),
        std::f64::consts::PI * n8(gamma_q),
    );
    let n = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
    if n.norm() < 1e-9 {
        return Err(GeometryError::DegenerateNormal);
    }
    let x0 = Vector3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin());
    let x_axis = x0 * gamma.cos() + n.cross(&x0) * gamma.sin();
    let y_axis = n.cross(&x_axis);

    let mut plane_axis = 0;
    for i in 1..3 {
        if n[i].abs() > n[plane_axis].abs() {
            plane_axis = i;
        }
    }
    let offset = 0.5 * n8(origin_q[plane_axis]);
    Ok(PlaneBasis { n, x_axis, y_axis, plane_id: PlaneId::from_axis(plane_axis), offset })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn dist(self, o: PixelPoint) -> f64 {
        (self.u - o.u).hypot(self.v - o.v)
    }

    pub fn on_canvas(self) -> bool {
        (-CANVAS_SLACK..=1.0 + CANVAS_SLACK).contains(&self.u)
            && (-CANVAS_SLACK..=1.0 + CANVAS_SLACK).contains(&self.v)
    }
}

/// Maps a quantized in-plane point to canvas coordinates. `origin` is the
/// normalized 3D sketch origin `N(px, py, pz)`.
pub fn project_point(
    x_q: u8,
    y_q: u8,
    basis: &PlaneBasis,
    s: f64,
    origin: Vector3<f64>,
    center: PixelPoint,
) -> Result<PixelPoint, GeometryError> {
    let p_rot = basis.x_axis * (n8(x_q) * s) + basis.y_axis * (n8(y_q) * s) + origin;
    let (a, b) = basis.plane_id.kept_axes();
    let p = PixelPoint::new(0.5 * p_rot[a] + center.u, 0.5 * p_rot[b] + center.v);
    if !p.on_canvas() {
        return Err(GeometryError::OffCanvas { u: p.u, v: p.v });
    }
    Ok(p)
}

/// `r = r_q / 128 · s · 0.5`, in canvas units.
pub fn circle_radius(r_q: i64, s: f64) -> Result<f64, GeometryError> {
    if !(1..=255).contains(&r_q) {
        return Err(GeometryError::OutOfRange { what: "circle radius", value: r_q });
    }
    Ok(r_q as f64 / 128.0 * s * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcGeom {
    pub start: PixelPoint,
    pub end: PixelPoint,
    pub center: PixelPoint,
    pub mid: PixelPoint,
    pub radius: f64,
    pub sweep_deg: f64,
    pub flag: u8,
}

impl ArcGeom {
    /// Start angle about the center, radians.
    pub fn start_angle(&self) -> f64 {
        (self.start.v - self.center.v).atan2(self.start.u - self.center.u)
    }

    /// Signed sweep in radians: positive runs counter-clockwise.
    pub fn signed_sweep(&self) -> f64 {
        let a = self.sweep_deg.to_radians();
        if self.ccw() {
            a
        } else {
            -a
        }
    }

    fn ccw(&self) -> bool {
        (self.flag == 1) == (self.sweep_deg <= 180.0)
    }

    pub fn point_at(&self, t: f64) -> PixelPoint {
        let a = self.start_angle() + t * self.signed_sweep();
        PixelPoint::new(
            self.center.u + self.radius * a.cos(),
            self.center.v + self.radius * a.sin(),
        )
    }
}

/// Lowers an arc from its chord endpoints, quantized sweep and side flag.
///
/// With `f = 1` the center lies left of the chord direction. The arc then
/// runs counter-clockwise for sweeps up to 180° and clockwise beyond, so the
/// traversal start → mid → end always covers exactly the dequantized sweep.
pub fn arc_geometry(
    start: PixelPoint,
    end: PixelPoint,
    alpha_q: u8,
    flag: u8,
) -> Result<ArcGeom, GeometryError> {
    if alpha_q == 0 {
        return Err(GeometryError::OutOfRange { what: "arc sweep", value: 0 });
    }
    if flag > 1 {
        return Err(GeometryError::OutOfRange { what: "arc flag", value: i64::from(flag) });
    }
    let (vx, vy) = (end.u - start.u, end.v - start.v);
    let len = vx.hypot(vy);
    if len < 1e-9 {
        return Err(GeometryError::DegenerateChord);
    }
    let alpha = 180.0 * f64::from(alpha_q) / 128.0;
    if alpha > 360.0 {
        return Err(GeometryError::ReflexOverflow(alpha));
    }
    let chord_mid = PixelPoint::new(0.5 * (start.u + end.u), 0.5 * (start.v + end.v));
    let r = len / (2.0 * (alpha / 2.0).to_radians().sin());
    let h = (r * r - 0.25 * len * len).max(0.0).sqrt();
    let (px, py) = (-vy / len, vx / len);
    let side = if flag == 1 { 1.0 } else { -1.0 };
    let center = PixelPoint::new(chord_mid.u + side * h * px, chord_mid.v + side * h * py);
    let mut arc = ArcGeom { start, end, center, mid: start, radius: r, sweep_deg: alpha, flag };
    arc.mid = arc.point_at(0.5);
    Ok(arc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveGeom {
    Line { start: PixelPoint, end: PixelPoint },
    Arc(ArcGeom),
    Circle { center: PixelPoint, radius: f64 },
}

impl PrimitiveGeom {
    pub fn start(&self) -> PixelPoint {
        match self {
            Self::Line { start, .. } => *start,
            Self::Arc(a) => a.start,
            Self::Circle { center, radius } => PixelPoint::new(center.u + radius, center.v),
        }
    }

    pub fn end(&self) -> PixelPoint {
        match self {
            Self::Line { end, .. } => *end,
            Self::Arc(a) => a.end,
            Self::Circle { .. } => self.start(),
        }
    }

    /// Characteristic size of the primitive; small primitives are drawn zoomed in.
    pub fn extent(&self) -> f64 {
        match self {
            Self::Line { start, end } => start.dist(*end),
            Self::Arc(a) => a.start.dist(a.end).max(a.start.dist(a.mid)),
            Self::Circle { radius, .. } => 2.0 * radius,
        }
    }

    /// Polyline approximation with chords no longer than `max_chord`; the
    /// final point is included, so closed primitives repeat their start.
    pub fn polyline(&self, max_chord: f64) -> Vec<PixelPoint> {
        match self {
            Self::Line { start, end } => vec![*start, *end],
            Self::Arc(a) => {
                let arc_len = a.radius * a.sweep_deg.to_radians();
                let n = ((arc_len / max_chord).ceil() as usize).max(2);
                (0..=n).map(|i| {
                    if i == n {
                        a.end
                    } else {
                        a.point_at(i as f64 / n as f64)
                    }
                })
                .collect()
            }
            Self::Circle { center, radius } => {
                let n = ((std::f64::consts::TAU * radius / max_chord).ceil() as usize).max(8);
                (0..=n)
                    .map(|i| {
                        let a = std::f64::consts::TAU * (i % n) as f64 / n as f64;
                        PixelPoint::new(center.u + radius * a.cos(), center.v + radius * a.sin())
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopGeom {
    pub primitives: Vec<PrimitiveGeom>,
}

impl LoopGeom {
    /// Closed polygon approximation without the repeated closing vertex.
    pub fn polygon(&self, max_chord: f64) -> Vec<PixelPoint> {
        let mut pts = Vec::new();
        for p in &self.primitives {
            let mut seg = p.polyline(max_chord);
            seg.pop();
            pts.extend(seg);
        }
        pts
    }

    pub fn min_extent(&self) -> f64 {
        self.primitives.iter().map(PrimitiveGeom::extent).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SketchGeom {
    pub loops: Vec<LoopGeom>,
}

impl SketchGeom {
    /// Checks that each loop's consecutive endpoints coincide within
    /// [`EPS_CLOSE`], including the wrap from last to first.
    pub fn check_closure(&self) -> Result<(), GeometryError> {
        for (li, lp) in self.loops.iter().enumerate() {
            let n = lp.primitives.len();
            for i in 0..n {
                let gap = lp.primitives[i].end().dist(lp.primitives[(i + 1) % n].start());
                if gap > EPS_CLOSE {
                    return Err(GeometryError::OpenLoop { loop_index: li, primitive: i, gap });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtrudeOp {
    New,
    Remove,
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtentType {
    OneSided,
    Symmetric,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrudeParams {
    pub e1: f64,
    pub e2: f64,
    pub op: ExtrudeOp,
    pub sides: ExtentType,
    pub scale_s: f64,
}

/// Sketch scale dequantization, `s = s_q / 256`.
pub fn dequantize_scale(s_q: u8) -> f64 {
    f64::from(s_q) / 256.0
}

pub fn extrude_params(e1_q: u8, e2_q: u8, u: u8, b: u8, s_q: u8) -> Result<ExtrudeParams, GeometryError> {
    let op = match u {
        0 => ExtrudeOp::New,
        1 => ExtrudeOp::Remove,
        2 => ExtrudeOp::Union,
        _ => return Err(GeometryError::OutOfRange { what: "extrude op", value: i64::from(u) }),
    };
    let sides = match b {
        0 => ExtentType::OneSided,
        1 => ExtentType::Symmetric,
        2 => ExtentType::TwoSided,
        _ => return Err(GeometryError::OutOfRange { what: "extent type", value: i64::from(b) }),
    };
    Ok(ExtrudeParams {
        e1: 0.5 * n8(e1_q),
        e2: 0.5 * n8(e2_q),
        op,
        sides,
        scale_s: dequantize_scale(s_q),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoweredRecord {
    pub basis: PlaneBasis,
    pub sketch: SketchGeom,
    pub extrude: ExtrudeParams,
}

pub fn lower_record(rec: &ExtrusionRecordRaw, center: PixelPoint) -> Result<LoweredRecord, GeometryError> {
    let basis = plane_basis(rec.plane[0], rec.plane[1], rec.plane[2], rec.origin)?;
    let extrude = extrude_params(rec.extents[0], rec.extents[1], rec.op, rec.sides, rec.scale)?;
    if rec.scale == 0 {
        return Err(GeometryError::OutOfRange { what: "sketch scale", value: 0 });
    }
    let s = extrude.scale_s;
    let origin = Vector3::new(n8(rec.origin[0]), n8(rec.origin[1]), n8(rec.origin[2]));
    let project = |x, y| project_point(x, y, &basis, s, origin, center);

    let mut loops = Vec::with_capacity(rec.loops.len());
    for lp in &rec.loops {
        let ends = lp
            .primitives
            .iter()
            .map(|p| {
                let (x, y) = p.point();
                project(x, y)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut prims = Vec::with_capacity(ends.len());
        for (i, p) in lp.primitives.iter().enumerate() {
            // Each token stores its endpoint; its start is the previous end.
            let start = ends[(i + ends.len() - 1) % ends.len()];
            let end = ends[i];
            prims.push(match *p {
                PrimitiveSpec::Line { .. } => PrimitiveGeom::Line { start, end },
                PrimitiveSpec::Arc { alpha, flag, .. } => {
                    PrimitiveGeom::Arc(arc_geometry(start, end, alpha, flag)?)
                }
                PrimitiveSpec::Circle { radius, .. } => {
                    let r = circle_radius(i64::from(radius), s)?;
                    let c = end;
                    for q in [(c.u - r, c.v - r), (c.u + r, c.v + r)] {
                        let q = PixelPoint::new(q.0, q.1);
                        if !q.on_canvas() {
                            return Err(GeometryError::OffCanvas { u: q.u, v: q.v });
                        }
                    }
                    PrimitiveGeom::Circle { center: c, radius: r }
                }
            });
        }
        for p in &prims {
            if let PrimitiveGeom::Arc(a) = p {
                if !a.mid.on_canvas() {
                    return Err(GeometryError::OffCanvas { u: a.mid.u, v: a.mid.v });
                }
            }
        }
        loops.push(LoopGeom { primitives: prims });
    }
    let sketch = SketchGeom { loops };
    sketch.check_closure()?;
    Ok(LoweredRecord { basis, sketch, extrude })
}

pub fn lower_sequence(seq: &CadSequence) -> Result<Vec<LoweredRecord>, GeometryError> {
    seq.records.iter().map(|r| lower_record(r, CANVAS_CENTER)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{LoopSpec, PrimitiveSpec};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_fixed_points() {
        assert_eq!(normalize(128).unwrap(), 0.0);
        assert_eq!(normalize(0).unwrap(), -1.0);
        assert_eq!(normalize(255).unwrap(), 0.9921875);
        assert!(normalize(256).is_err());
        assert!(normalize(-1).is_err());
    }

    #[test]
    fn top_plane_basis() {
        let b = plane_basis(128, 128, 128, [128, 128, 128]).unwrap();
        assert_eq!(b.n, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(b.plane_id, PlaneId::Top);
        assert_eq!(b.offset, 0.0);
        let b = plane_basis(128, 128, 128, [128, 128, 192]).unwrap();
        assert_eq!(b.offset, 0.25);
    }

    #[test]
    fn project_point_examples() {
        let b = plane_basis(128, 128, 128, [128, 128, 128]).unwrap();
        let p = project_point(128, 128, &b, 0.7, Vector3::zeros(), CANVAS_CENTER).unwrap();
        assert_eq!((p.u, p.v), (0.5, 0.5));
        let p = project_point(255, 128, &b, 0.5, Vector3::zeros(), CANVAS_CENTER).unwrap();
        assert!(close(p.u, 0.748046875, 1e-15));
        assert!(close(p.v, 0.5, 1e-15));
        let far = project_point(255, 255, &b, 1.0, Vector3::new(0.9, 0.0, 0.0), CANVAS_CENTER);
        assert!(matches!(far, Err(GeometryError::OffCanvas { .. })));
    }

    #[test]
    fn circle_radius_examples() {
        assert_eq!(circle_radius(128, 1.0).unwrap(), 0.5);
        assert_eq!(circle_radius(64, 0.5).unwrap(), 0.125);
        assert!(circle_radius(0, 1.0).is_err());
    }

    #[test]
    fn semicircle_and_quarter_arc() {
        let s = PixelPoint::new(0.4, 0.5);
        let e = PixelPoint::new(0.6, 0.5);
        let a = arc_geometry(s, e, 128, 1).unwrap();
        assert!(close(a.radius, 0.1, 1e-12));
        assert!(close(a.center.u, 0.5, 1e-12) && close(a.center.v, 0.5, 1e-12));

        let a = arc_geometry(s, e, 64, 1).unwrap();
        assert!(close(a.radius, 0.2 / (2.0 * 45f64.to_radians().sin()), 1e-12));
        let h = a.center.dist(PixelPoint::new(0.5, 0.5));
        assert!(close(h, 0.1, 1e-12));
        // f=1 puts the center left of the chord direction (+v)
        assert!(a.center.v > 0.5);
        // minor arc bulges away from the center
        assert!(a.mid.v < 0.5);
    }

    #[test]
    fn arc_rejects_degenerate_input() {
        let p = PixelPoint::new(0.5, 0.5);
        assert_eq!(arc_geometry(p, p, 10, 0), Err(GeometryError::DegenerateChord));
        assert!(arc_geometry(p, PixelPoint::new(0.6, 0.5), 0, 0).is_err());
    }

    #[test]
    fn extrude_examples() {
        assert_eq!(extrude_params(192, 128, 0, 0, 128).unwrap().e1, 0.25);
        assert_eq!(extrude_params(128, 128, 0, 0, 128).unwrap().e1, 0.0);
        let p = extrude_params(160, 128, 1, 1, 128).unwrap();
        assert_eq!((p.op, p.sides, p.e1), (ExtrudeOp::Remove, ExtentType::Symmetric, 0.125));
        assert!(extrude_params(160, 128, 3, 0, 128).is_err());
    }

    fn raw(loops: Vec<LoopSpec>, scale: u8) -> ExtrusionRecordRaw {
        ExtrusionRecordRaw {
            loops,
            plane: [128, 128, 128],
            origin: [128, 128, 128],
            scale,
            extents: [160, 128],
            op: 0,
            sides: 0,
        }
    }

    #[test]
    fn square_record_lowers_to_closed_square() {
        let corners = [(64u8, 64u8), (192, 64), (192, 192), (64, 192)];
        let lp = LoopSpec::new(corners.iter().map(|&(x, y)| PrimitiveSpec::Line { x, y }).collect());
        let low = lower_record(&raw(vec![lp], 128), CANVAS_CENTER).unwrap();
        let side = 0.5 * 0.5; // quantized ±64 spans N = ±0.5, times s·0.5
        let prims = &low.sketch.loops[0].primitives;
        assert_eq!(prims.len(), 4);
        for p in prims {
            assert!(close(p.start().dist(p.end()), side, 1e-12));
        }
        assert!(close(prims[1].end().u, 0.5 + side / 2.0, 1e-12));
    }

    #[test]
    fn open_loop_detected_on_hand_built_geometry() {
        let sk = SketchGeom {
            loops: vec![LoopGeom {
                primitives: vec![
                    PrimitiveGeom::Line { start: PixelPoint::new(0.1, 0.1), end: PixelPoint::new(0.2, 0.1) },
                    PrimitiveGeom::Line { start: PixelPoint::new(0.2, 0.1), end: PixelPoint::new(0.2, 0.2) },
                    PrimitiveGeom::Line { start: PixelPoint::new(0.2, 0.2), end: PixelPoint::new(0.1, 0.1 + 1e-5) },
                ],
            }],
        };
        assert!(matches!(sk.check_closure(), Err(GeometryError::OpenLoop { loop_index: 0, .. })));
    }

    #[test]
    fn circle_record_lowers() {
        let lp = LoopSpec::new(vec![PrimitiveSpec::Circle { x: 128, y: 128, radius: 64 }]);
        let low = lower_record(&raw(vec![lp], 128), CANVAS_CENTER).unwrap();
        assert!(matches!(low.sketch.loops[0].primitives[0], PrimitiveGeom::Circle { radius, .. } if radius == 0.125));
    }
}
