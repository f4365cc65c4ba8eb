//! CSG trees over extruded prisms, point membership and surface sampling.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{ExtentType, ExtrudeOp, ExtrudeParams, LoweredRecord, PlaneId};

use super::region::{build_region, PlanarRegion, P2};
use super::{KernelError, PointCloud, TAU_SURF, TAU_TESS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        let mut r = *self;
        for i in 0..3 {
            r.min[i] = r.min[i].min(o.min[i]);
            r.max[i] = r.max[i].max(o.max[i]);
        }
        r
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn corners(&self) -> [[f64; 3]; 8] {
        let mut out = [[0.0; 3]; 8];
        for (k, c) in out.iter_mut().enumerate() {
            *c = std::array::from_fn(|i| if k >> i & 1 == 0 { self.min[i] } else { self.max[i] });
        }
        out
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }
}

/// A planar region swept along world axis `axis` over `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct Prism {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub region: Arc<PlanarRegion>,
}

impl Prism {
    pub fn kept(&self) -> (usize, usize) {
        PlaneId::from_axis(self.axis).kept_axes()
    }

    pub fn to_2d(&self, p: &[f64; 3]) -> P2 {
        let (a, b) = self.kept();
        [p[a], p[b]]
    }

    pub fn from_2d(&self, q: P2, depth: f64) -> [f64; 3] {
        let (a, b) = self.kept();
        let mut p = [0.0; 3];
        p[a] = q[0];
        p[b] = q[1];
        p[self.axis] = depth;
        p
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        let d = p[self.axis];
        d >= self.lo && d <= self.hi && self.region.contains(self.to_2d(p))
    }

    pub fn aabb(&self) -> Aabb {
        let r = &self.region.bbox;
        let lo = self.from_2d([r[0], r[1]], self.lo);
        let hi = self.from_2d([r[2], r[3]], self.hi);
        Aabb { min: lo, max: hi }
    }

    pub fn volume(&self) -> f64 {
        self.region.area() * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Csg {
    Empty,
    Leaf(usize),
    Union(Box<Csg>, Box<Csg>),
    Difference(Box<Csg>, Box<Csg>),
    Intersection(Box<Csg>, Box<Csg>),
}

impl Csg {
    fn shifted(&self, by: usize) -> Csg {
        match self {
            Csg::Empty => Csg::Empty,
            Csg::Leaf(i) => Csg::Leaf(i + by),
            Csg::Union(a, b) => Csg::Union(Box::new(a.shifted(by)), Box::new(b.shifted(by))),
            Csg::Difference(a, b) => Csg::Difference(Box::new(a.shifted(by)), Box::new(b.shifted(by))),
            Csg::Intersection(a, b) => Csg::Intersection(Box::new(a.shifted(by)), Box::new(b.shifted(by))),
        }
    }

    pub fn has_difference(&self) -> bool {
        match self {
            Csg::Empty | Csg::Leaf(_) => false,
            Csg::Difference(..) => true,
            Csg::Union(a, b) | Csg::Intersection(a, b) => a.has_difference() || b.has_difference(),
        }
    }

    /// True if no Difference node has a Difference anywhere in its right child.
    pub fn is_normalized(&self) -> bool {
        match self {
            Csg::Empty | Csg::Leaf(_) => true,
            Csg::Difference(a, b) => !b.has_difference() && a.is_normalized() && b.is_normalized(),
            Csg::Union(a, b) | Csg::Intersection(a, b) => a.is_normalized() && b.is_normalized(),
        }
    }

    /// Rewrites the tree so that subtracted operands are difference-free:
    /// `A \ (B \ C) = (A \ B) ∪ (A ∩ C)`, `A \ (B ∪ C) = (A \ B) \ C`,
    /// `A \ (B ∩ C) = (A \ B) ∪ (A \ C)`.
    pub fn normalize(&self) -> Csg {
        match self {
            Csg::Empty | Csg::Leaf(_) => self.clone(),
            Csg::Union(a, b) => Csg::Union(Box::new(a.normalize()), Box::new(b.normalize())),
            Csg::Intersection(a, b) => Csg::Intersection(Box::new(a.normalize()), Box::new(b.normalize())),
            Csg::Difference(a, b) => {
                let a = a.normalize();
                match b.normalize() {
                    Csg::Difference(c, d) => Csg::Union(
                        Box::new(Csg::Difference(Box::new(a.clone()), c).normalize()),
                        Box::new(Csg::Intersection(Box::new(a), d)),
                    ),
                    Csg::Union(x, y) => Csg::Difference(Box::new(Csg::Difference(Box::new(a), x)), y).normalize(),
                    Csg::Intersection(x, y) => Csg::Union(
                        Box::new(Csg::Difference(Box::new(a.clone()), x).normalize()),
                        Box::new(Csg::Difference(Box::new(a), y).normalize()),
                    ),
                    b => Csg::Difference(Box::new(a), Box::new(b)),
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solid {
    pub prisms: Vec<Prism>,
    pub tree: Csg,
}

impl Default for Solid {
    fn default() -> Self {
        Self::empty()
    }
}

impl Solid {
    pub fn empty() -> Self {
        Self { prisms: Vec::new(), tree: Csg::Empty }
    }

    pub fn prism(p: Prism) -> Self {
        Self { prisms: vec![p], tree: Csg::Leaf(0) }
    }

    pub fn is_empty(&self) -> bool {
        self.tree == Csg::Empty
    }

    fn combine(&self, other: &Solid, f: fn(Box<Csg>, Box<Csg>) -> Csg) -> Solid {
        let mut prisms = self.prisms.clone();
        let shift = prisms.len();
        prisms.extend(other.prisms.iter().cloned());
        Solid { prisms, tree: f(Box::new(self.tree.clone()), Box::new(other.tree.shifted(shift))) }
    }

    pub fn union(&self, other: &Solid) -> Solid {
        match (&self.tree, &other.tree) {
            (Csg::Empty, _) => other.clone(),
            (_, Csg::Empty) => self.clone(),
            _ => self.combine(other, Csg::Union),
        }
    }

    pub fn difference(&self, other: &Solid) -> Solid {
        if self.is_empty() || other.is_empty() {
            return self.clone();
        }
        self.combine(other, Csg::Difference)
    }

    pub fn intersection(&self, other: &Solid) -> Solid {
        if self.is_empty() || other.is_empty() {
            return Solid::empty();
        }
        self.combine(other, Csg::Intersection)
    }

    pub fn normalized(&self) -> Solid {
        Solid { prisms: self.prisms.clone(), tree: self.tree.normalize() }
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        self.eval(&self.tree, p)
    }

    fn eval(&self, t: &Csg, p: &[f64; 3]) -> bool {
        match t {
            Csg::Empty => false,
            Csg::Leaf(i) => self.prisms[*i].contains(p),
            Csg::Union(a, b) => self.eval(a, p) || self.eval(b, p),
            Csg::Difference(a, b) => self.eval(a, p) && !self.eval(b, p),
            Csg::Intersection(a, b) => self.eval(a, p) && self.eval(b, p),
        }
    }

    /// Conservative bounds: subtracted operands do not grow the box.
    pub fn aabb(&self) -> Aabb {
        self.tree_aabb(&self.tree)
    }

    fn tree_aabb(&self, t: &Csg) -> Aabb {
        match t {
            Csg::Empty => Aabb::empty(),
            Csg::Leaf(i) => self.prisms[*i].aabb(),
            Csg::Union(a, b) => self.tree_aabb(a).union(&self.tree_aabb(b)),
            Csg::Difference(a, _) => self.tree_aabb(a),
            Csg::Intersection(a, b) => {
                let (x, y) = (self.tree_aabb(a), self.tree_aabb(b));
                let mut r = x;
                for i in 0..3 {
                    r.min[i] = x.min[i].max(y.min[i]);
                    r.max[i] = x.max[i].min(y.max[i]);
                }
                r
            }
        }
    }

    /// Applies `q[i] = signs[i] · p[perm[i]]`, a signed axis permutation.
    pub fn transform_axes(&self, perm: [usize; 3], signs: [f64; 3]) -> Solid {
        let prisms = self
            .prisms
            .iter()
            .map(|pr| {
                let new_axis = (0..3).find(|&i| perm[i] == pr.axis).expect("perm is a permutation");
                let (na, nb) = PlaneId::from_axis(new_axis).kept_axes();
                let (oa, ob) = pr.kept();
                let s_axis = signs[new_axis];
                let (l, h) = (s_axis * pr.lo, s_axis * pr.hi);
                let region = pr.region.map(|q| {
                    let mut old = [0.0; 3];
                    old[oa] = q[0];
                    old[ob] = q[1];
                    [signs[na] * old[perm[na]], signs[nb] * old[perm[nb]]]
                });
                Prism { axis: new_axis, lo: l.min(h), hi: l.max(h), region: Arc::new(region) }
            })
            .collect();
        Solid { prisms, tree: self.tree.clone() }
    }

    /// Surface samples, area-uniform over the trimmed prism boundaries.
    pub fn sample_points(&self, n: usize, seed: u64) -> Result<PointCloud, KernelError> {
        sample_points(self, n, seed, TAU_SURF)
    }
}

/// Depth interval of an extrusion starting at `offset` along the normal.
pub fn extrude_interval(params: &ExtrudeParams, offset: f64) -> Result<(f64, f64), KernelError> {
    let (lo, hi) = match params.sides {
        ExtentType::OneSided => (offset.min(offset + params.e1), offset.max(offset + params.e1)),
        ExtentType::Symmetric => (offset - params.e1.abs(), offset + params.e1.abs()),
        ExtentType::TwoSided => {
            let (a, b) = (offset - params.e2, offset + params.e1);
            (a.min(b), a.max(b))
        }
    };
    if params.e1 == 0.0 || hi - lo < 1e-12 {
        return Err(KernelError::ZeroDepth);
    }
    Ok((lo, hi))
}

/// Applies one extrusion feature. `New` after the first feature unions.
pub fn extrude(
    solid: &Solid,
    region: Arc<PlanarRegion>,
    params: &ExtrudeParams,
    axis: usize,
    offset: f64,
) -> Result<Solid, KernelError> {
    if region.is_empty() {
        return Err(KernelError::EmptyRegion);
    }
    let (lo, hi) = extrude_interval(params, offset)?;
    let tool = Solid::prism(Prism { axis, lo, hi, region });
    match params.op {
        ExtrudeOp::New | ExtrudeOp::Union => Ok(solid.union(&tool)),
        ExtrudeOp::Remove if solid.is_empty() => Err(KernelError::RemoveFromEmpty),
        ExtrudeOp::Remove => Ok(solid.difference(&tool)),
    }
}

/// Builds the solid of a lowered sequence directly, bypassing any UI.
pub fn build_solid(records: &[LoweredRecord]) -> Result<Solid, KernelError> {
    let mut solid = Solid::empty();
    for rec in records {
        let region = build_region(&rec.sketch, TAU_TESS)?;
        solid = extrude(&solid, Arc::new(region), &rec.extrude, rec.basis.plane_id.axis(), rec.basis.offset)?;
    }
    Ok(solid)
}

enum FaceKind {
    Cap { top: bool },
    Wall { lp: usize, edge: usize },
}

struct Face {
    prism: usize,
    kind: FaceKind,
}

pub fn sample_points(solid: &Solid, n: usize, seed: u64, tau: f64) -> Result<PointCloud, KernelError> {
    if solid.is_empty() {
        return Err(KernelError::EmptySolid);
    }
    let mut faces = Vec::new();
    let mut cum = Vec::new();
    let mut total = 0.0;
    for (pi, pr) in solid.prisms.iter().enumerate() {
        let area = pr.region.area().abs();
        for top in [false, true] {
            total += area;
            faces.push(Face { prism: pi, kind: FaceKind::Cap { top } });
            cum.push(total);
        }
        let h = pr.hi - pr.lo;
        for (li, lp) in pr.region.loops.iter().enumerate() {
            for e in 0..lp.len() {
                let (a, b) = lp.edge(e);
                total += (b[0] - a[0]).hypot(b[1] - a[1]) * h;
                faces.push(Face { prism: pi, kind: FaceKind::Wall { lp: li, edge: e } });
                cum.push(total);
            }
        }
    }
    if total <= 0.0 {
        return Err(KernelError::EmptySolid);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let max_attempts = 1000 * n.max(1) + 100_000;
    let mut attempts = 0usize;
    while points.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(if points.is_empty() {
                KernelError::EmptySolid
            } else {
                KernelError::SamplingStalled { accepted: points.len() }
            });
        }
        let r = rng.random::<f64>() * total;
        let fi = cum.partition_point(|&c| c <= r).min(faces.len() - 1);
        let face = &faces[fi];
        let pr = &solid.prisms[face.prism];
        let (p, normal) = match face.kind {
            FaceKind::Cap { top } => {
                let bb = pr.region.bbox;
                let mut q = None;
                for _ in 0..10_000 {
                    let c = [
                        bb[0] + rng.random::<f64>() * (bb[2] - bb[0]),
                        bb[1] + rng.random::<f64>() * (bb[3] - bb[1]),
                    ];
                    if pr.region.contains(c) {
                        q = Some(c);
                        break;
                    }
                }
                let Some(q) = q else { continue };
                let mut nrm = [0.0; 3];
                nrm[pr.axis] = 1.0;
                (pr.from_2d(q, if top { pr.hi } else { pr.lo }), nrm)
            }
            FaceKind::Wall { lp, edge } => {
                let (a, b) = pr.region.loops[lp].edge(edge);
                let s = rng.random::<f64>();
                let t = rng.random::<f64>();
                let q = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                let n2 = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
                let (ka, kb) = pr.kept();
                let mut nrm = [0.0; 3];
                nrm[ka] = n2[0];
                nrm[kb] = n2[1];
                (pr.from_2d(q, pr.lo + t * (pr.hi - pr.lo)), nrm)
            }
        };
        let plus = [p[0] + tau * normal[0], p[1] + tau * normal[1], p[2] + tau * normal[2]];
        let minus = [p[0] - tau * normal[0], p[1] - tau * normal[1], p[2] - tau * normal[2]];
        if solid.contains(&plus) == solid.contains(&minus) {
            continue;
        }
        // Coincident boundaries of several prisms are sampled once, by the
        // lowest-index owner, to keep the density uniform.
        let owned_earlier = solid.prisms[..face.prism]
            .iter()
            .any(|o| o.contains(&plus) != o.contains(&minus));
        if owned_earlier {
            continue;
        }
        points.push(p);
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ExtrudeOp;

    fn square_region(h: f64) -> Arc<PlanarRegion> {
        Arc::new(PlanarRegion::from_loops(vec![vec![[-h, -h], [h, -h], [h, h], [-h, h]]]).unwrap())
    }

    fn params(e1: f64, op: ExtrudeOp, sides: ExtentType) -> ExtrudeParams {
        ExtrudeParams { e1, e2: 0.0, op, sides, scale_s: 0.5 }
    }

    #[test]
    fn interval_rules() {
        let p = params(0.2, ExtrudeOp::New, ExtentType::OneSided);
        assert_eq!(extrude_interval(&p, 0.1).unwrap(), (0.1, 0.30000000000000004));
        let p = params(-0.2, ExtrudeOp::New, ExtentType::OneSided);
        assert_eq!(extrude_interval(&p, 0.0).unwrap(), (-0.2, 0.0));
        let p = params(0.2, ExtrudeOp::New, ExtentType::Symmetric);
        assert_eq!(extrude_interval(&p, 0.0).unwrap(), (-0.2, 0.2));
        let mut p = params(0.2, ExtrudeOp::New, ExtentType::TwoSided);
        p.e2 = 0.1;
        assert_eq!(extrude_interval(&p, 0.0).unwrap(), (-0.1, 0.2));
        assert_eq!(extrude_interval(&params(0.0, ExtrudeOp::New, ExtentType::OneSided), 0.0), Err(KernelError::ZeroDepth));
    }

    #[test]
    fn remove_from_empty_rejected() {
        let p = params(0.2, ExtrudeOp::Remove, ExtentType::OneSided);
        assert_eq!(extrude(&Solid::empty(), square_region(0.1), &p, 2, 0.0).unwrap_err(), KernelError::RemoveFromEmpty);
    }

    #[test]
    fn cuboid_membership() {
        let s = extrude(&Solid::empty(), square_region(0.1), &params(0.2, ExtrudeOp::New, ExtentType::OneSided), 2, 0.0).unwrap();
        assert!(s.contains(&[0.0, 0.0, 0.1]));
        assert!(!s.contains(&[0.0, 0.0, 0.3]));
        assert!(!s.contains(&[0.2, 0.0, 0.1]));
    }

    #[test]
    fn normalization_preserves_membership() {
        let a = Solid::prism(Prism { axis: 2, lo: 0.0, hi: 0.4, region: square_region(0.2) });
        let b = Solid::prism(Prism { axis: 2, lo: -0.1, hi: 0.5, region: square_region(0.1) });
        let c = Solid::prism(Prism { axis: 0, lo: -0.05, hi: 0.05, region: square_region(0.5) });
        let s = a.difference(&b.difference(&c));
        assert!(!s.tree.is_normalized());
        let n = s.normalized();
        assert!(n.tree.is_normalized());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5000 {
            let p = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.6)];
            assert_eq!(s.contains(&p), n.contains(&p));
        }
    }

    #[test]
    fn samples_lie_on_surface_and_are_deterministic() {
        let s = extrude(&Solid::empty(), square_region(0.1), &params(0.2, ExtrudeOp::New, ExtentType::OneSided), 2, 0.0).unwrap();
        let a = s.sample_points(500, 7).unwrap();
        assert_eq!(a, s.sample_points(500, 7).unwrap());
        for p in &a.points {
            let d = [(p[0].abs() - 0.1).abs(), (p[1].abs() - 0.1).abs(), p[2].abs().min((p[2] - 0.2).abs())];
            assert!(d.iter().cloned().fold(f64::INFINITY, f64::min) < 1e-12);
        }
    }

    #[test]
    fn fully_removed_solid_has_no_surface() {
        let s = extrude(&Solid::empty(), square_region(0.1), &params(0.2, ExtrudeOp::New, ExtentType::OneSided), 2, 0.0).unwrap();
        let s = extrude(&s, square_region(0.2), &params(0.3, ExtrudeOp::Remove, ExtentType::Symmetric), 2, 0.1).unwrap();
        assert_eq!(s.sample_points(10, 0).unwrap_err(), KernelError::EmptySolid);
    }

    #[test]
    fn axis_transform_moves_membership() {
        let s = Solid::prism(Prism { axis: 2, lo: 0.0, hi: 0.4, region: square_region(0.1) });
        let perm = [2, 0, 1];
        let signs = [1.0, -1.0, 1.0];
        let t = s.transform_axes(perm, signs);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let p = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let q = [signs[0] * p[perm[0]], signs[1] * p[perm[1]], signs[2] * p[perm[2]]];
            assert_eq!(s.contains(&p), t.contains(&q));
        }
    }
}
