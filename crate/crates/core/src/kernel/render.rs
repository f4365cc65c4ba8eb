//! Orthographic ray casting of CSG solids.
//!
//! Each ray is intersected exactly with every prism (slab interval along the
//! prism axis intersected with the even-odd crossings of the projected ray
//! against the region polygons), and the per-prism interval lists are
//! combined through the CSG tree.

use crate::geometry::PlaneId;
use crate::raster::GrayImage;

use super::region::PolyLoop;
use super::solid::{Csg, Prism, Solid};
use super::KernelError;

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn axpy(o: V3, s: f64, d: V3) -> V3 {
    [o[0] + s * d[0], o[1] + s * d[1], o[2] + s * d[2]]
}

pub const ISO_DIR: V3 = [-0.5773502691896258, -0.5773502691896258, -0.5773502691896258];
pub const ISO_RIGHT: V3 = [-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, 0.0];
pub const ISO_UP: V3 = [-0.4082482904638631, -0.4082482904638631, 0.8164965809277261];

const LIGHT: V3 = [0.3370166, 0.4867963, 0.8058829];
pub const BACKGROUND: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Framing {
    /// Model's projected bounding box fills 90% of the frame.
    FitModel,
    /// Fixed world half-width of the frame around the origin.
    Fixed { half_extent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shading {
    Lambert,
    /// Brightness by distance along the view ray.
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Ray direction.
    pub dir: V3,
    pub right: V3,
    pub up: V3,
    /// World point at the image center.
    pub center: V3,
    pub half_extent: f64,
}

impl Camera {
    pub fn isometric(solid: &Solid, framing: Framing) -> Camera {
        let (center, half_extent) = match framing {
            Framing::Fixed { half_extent } => ([0.0; 3], half_extent),
            Framing::FitModel => {
                let bb = solid.aabb();
                let (mut r0, mut r1, mut u0, mut u1) =
                    (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                for c in bb.corners() {
                    let (r, u) = (dot(c, ISO_RIGHT), dot(c, ISO_UP));
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    u0 = u0.min(u);
                    u1 = u1.max(u);
                }
                let (cr, cu) = (0.5 * (r0 + r1), 0.5 * (u0 + u1));
                let center = axpy(axpy([0.0; 3], cr, ISO_RIGHT), cu, ISO_UP);
                (center, ((r1 - r0).max(u1 - u0) / 2.0 / 0.9).max(1e-9))
            }
        };
        Camera { dir: ISO_DIR, right: ISO_RIGHT, up: ISO_UP, center, half_extent }
    }

    /// Looks down the plane normal; image `(u, v)` equals canvas `(u, v)`.
    pub fn plane_view(plane: PlaneId) -> Camera {
        let (a, b) = plane.kept_axes();
        let mut right = [0.0; 3];
        right[a] = 1.0;
        let mut up = [0.0; 3];
        up[b] = -1.0;
        let mut dir = [0.0; 3];
        dir[plane.axis()] = -1.0;
        Camera { dir, right, up, center: [0.0; 3], half_extent: 0.5 }
    }

    pub fn ray_origin(&self, i: usize, j: usize, w: usize, h: usize) -> V3 {
        let x = ((i as f64 + 0.5) / w as f64 * 2.0 - 1.0) * self.half_extent;
        let y = (1.0 - (j as f64 + 0.5) / h as f64 * 2.0) * self.half_extent;
        axpy(axpy(self.center, x, self.right), y, self.up)
    }

    /// Pixel coordinates of a world point, as reals.
    pub fn project(&self, p: V3, w: usize, h: usize) -> (f64, f64) {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let x = dot(d, self.right) / self.half_extent;
        let y = dot(d, self.up) / self.half_extent;
        ((x + 1.0) / 2.0 * w as f64, (1.0 - y) / 2.0 * h as f64)
    }
}

#[derive(Debug, Clone, Copy)]
struct Span {
    t0: f64,
    n0: V3,
    t1: f64,
    n1: V3,
}

/// Per-camera acceleration for one prism: region edges bucketed by their
/// perpendicular offset from the projected ray direction.
struct PrismCaster<'a> {
    prism: &'a Prism,
    e: [f64; 2],
    e_len2: f64,
    axial: bool,
    w_lo: f64,
    w_h: f64,
    bands: Vec<Vec<(u32, u32)>>,
}

impl<'a> PrismCaster<'a> {
    fn new(prism: &'a Prism, dir: V3) -> Self {
        let (a, b) = prism.kept();
        let e = [dir[a], dir[b]];
        let e_len2 = e[0] * e[0] + e[1] * e[1];
        let axial = e_len2 < 1e-20;
        let mut caster = PrismCaster { prism, e, e_len2, axial, w_lo: 0.0, w_h: 1.0, bands: Vec::new() };
        if axial {
            return caster;
        }
        let el = e_len2.sqrt();
        let eh = [e[0] / el, e[1] / el];
        let wf = |p: [f64; 2]| eh[0] * p[1] - eh[1] * p[0];
        let loops = &prism.region.loops;
        let total: usize = loops.iter().map(PolyLoop::len).sum();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for l in loops {
            for p in &l.pts {
                lo = lo.min(wf(*p));
                hi = hi.max(wf(*p));
            }
        }
        let nb = (total / 4).clamp(1, 2048);
        let w_h = ((hi - lo) / nb as f64).max(1e-12);
        let mut bands = vec![Vec::new(); nb];
        let band = |w: f64| (((w - lo) / w_h).floor() as i64).clamp(0, nb as i64 - 1) as usize;
        for (li, l) in loops.iter().enumerate() {
            for ei in 0..l.len() {
                let (p, q) = l.edge(ei);
                let (wp, wq) = (wf(p), wf(q));
                for list in &mut bands[band(wp.min(wq))..=band(wp.max(wq))] {
                    list.push((li as u32, ei as u32));
                }
            }
        }
        caster.w_lo = lo;
        caster.w_h = w_h;
        caster.bands = bands;
        caster
    }

    fn spans(&self, o: V3, d: V3) -> Vec<Span> {
        let pr = self.prism;
        let ax = pr.axis;
        let mut na = [0.0; 3];
        na[ax] = 1.0;
        let (s0, s1) = if d[ax].abs() < 1e-15 {
            if o[ax] < pr.lo || o[ax] > pr.hi {
                return Vec::new();
            }
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            let t1 = (pr.lo - o[ax]) / d[ax];
            let t2 = (pr.hi - o[ax]) / d[ax];
            (t1.min(t2), t1.max(t2))
        };
        let q0 = pr.to_2d(&o);
        if self.axial {
            if !pr.region.contains(q0) {
                return Vec::new();
            }
            return vec![Span { t0: s0, n0: na, t1: s1, n1: na }];
        }
        let el = self.e_len2.sqrt();
        let eh = [self.e[0] / el, self.e[1] / el];
        let w0 = eh[0] * q0[1] - eh[1] * q0[0];
        if w0 < self.w_lo || w0 > self.w_lo + self.w_h * self.bands.len() as f64 {
            return Vec::new();
        }
        let bi = (((w0 - self.w_lo) / self.w_h).floor() as i64).clamp(0, self.bands.len() as i64 - 1);
        let (ka, kb) = pr.kept();
        let mut hits: Vec<(f64, V3)> = Vec::new();
        for &(li, ei) in &self.bands[bi as usize] {
            let (p, q) = pr.region.loops[li as usize].edge(ei as usize);
            let da = eh[0] * (p[1] - q0[1]) - eh[1] * (p[0] - q0[0]);
            let db = eh[0] * (q[1] - q0[1]) - eh[1] * (q[0] - q0[0]);
            if (da > 0.0) != (db > 0.0) {
                let s = da / (da - db);
                let x = [p[0] + s * (q[0] - p[0]) - q0[0], p[1] + s * (q[1] - p[1]) - q0[1]];
                let t = (x[0] * self.e[0] + x[1] * self.e[1]) / self.e_len2;
                let mut n = [0.0; 3];
                let len = (q[0] - p[0]).hypot(q[1] - p[1]);
                n[ka] = (q[1] - p[1]) / len;
                n[kb] = -(q[0] - p[0]) / len;
                hits.push((t, n));
            }
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Vec::new();
        for pair in hits.chunks_exact(2) {
            let (mut t0, mut n0) = pair[0];
            let (mut t1, mut n1) = pair[1];
            if t1 < s0 || t0 > s1 {
                continue;
            }
            if t0 < s0 {
                t0 = s0;
                n0 = na;
            }
            if t1 > s1 {
                t1 = s1;
                n1 = na;
            }
            out.push(Span { t0, n0, t1, n1 });
        }
        out
    }
}

fn boolean(a: &[Span], b: &[Span], op: fn(bool, bool) -> bool) -> Vec<Span> {
    let mut ev: Vec<(f64, bool, bool, V3)> = Vec::with_capacity(2 * (a.len() + b.len()));
    for (src, spans) in [(false, a), (true, b)] {
        for s in spans {
            ev.push((s.t0, src, true, s.n0));
            ev.push((s.t1, src, false, s.n1));
        }
    }
    ev.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut ia, mut ib, mut cur) = (false, false, false);
    let mut start = (0.0, [0.0; 3]);
    let mut out = Vec::new();
    for (t, src, enter, n) in ev {
        if src {
            ib = enter;
        } else {
            ia = enter;
        }
        let now = op(ia, ib);
        if now && !cur {
            start = (t, n);
        } else if !now && cur && t > start.0 {
            out.push(Span { t0: start.0, n0: start.1, t1: t, n1: n });
        }
        cur = now;
    }
    out
}

fn eval_spans(tree: &Csg, leaves: &[Vec<Span>]) -> Vec<Span> {
    match tree {
        Csg::Empty => Vec::new(),
        Csg::Leaf(i) => leaves[*i].clone(),
        Csg::Union(a, b) => boolean(&eval_spans(a, leaves), &eval_spans(b, leaves), |x, y| x || y),
        Csg::Difference(a, b) => boolean(&eval_spans(a, leaves), &eval_spans(b, leaves), |x, y| x && !y),
        Csg::Intersection(a, b) => boolean(&eval_spans(a, leaves), &eval_spans(b, leaves), |x, y| x && y),
    }
}

/// First surface hit along each pixel ray: `(t, unit normal facing the camera)`.
pub fn cast(solid: &Solid, cam: &Camera, w: usize, h: usize) -> Vec<Option<(f64, V3)>> {
    let casters: Vec<PrismCaster> = solid.prisms.iter().map(|p| PrismCaster::new(p, cam.dir)).collect();
    let mut out = Vec::with_capacity(w * h);
    let mut leaves = vec![Vec::new(); casters.len()];
    for j in 0..h {
        for i in 0..w {
            let o = cam.ray_origin(i, j, w, h);
            for (k, c) in casters.iter().enumerate() {
                leaves[k] = c.spans(o, cam.dir);
            }
            let hit = eval_spans(&solid.tree, &leaves).first().map(|s| {
                let n = if dot(s.n0, cam.dir) > 0.0 { [-s.n0[0], -s.n0[1], -s.n0[2]] } else { s.n0 };
                (s.t0, n)
            });
            out.push(hit);
        }
    }
    out
}

/// Shaded foreground layer; `None` where the ray misses the solid.
pub fn render_layer(solid: &Solid, cam: &Camera, w: usize, h: usize, shading: Shading) -> Vec<Option<u8>> {
    let hits = cast(solid, cam, w, h);
    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (t, _) in hits.iter().flatten() {
        tmin = tmin.min(*t);
        tmax = tmax.max(*t);
    }
    let span = (tmax - tmin).max(1e-9);
    hits.iter()
        .map(|hit| {
            hit.map(|(t, n)| match shading {
                Shading::Lambert => {
                    let lam = dot(n, LIGHT).max(0.0);
                    (40.0 + 190.0 * (0.15 + 0.85 * lam)).round().min(235.0) as u8
                }
                Shading::Depth => (200.0 - 140.0 * (t - tmin) / span).round() as u8,
            })
        })
        .collect()
}

pub fn render(solid: &Solid, cam: &Camera, w: usize, h: usize, shading: Shading) -> GrayImage {
    let layer = render_layer(solid, cam, w, h, shading);
    GrayImage { width: w, height: h, data: layer.into_iter().map(|p| p.unwrap_or(BACKGROUND)).collect() }
}

/// Shaded isometric view of a nonempty solid.
pub fn render_isometric(solid: &Solid, res: usize, framing: Framing) -> Result<GrayImage, KernelError> {
    if solid.is_empty() {
        return Err(KernelError::EmptySolid);
    }
    let cam = Camera::isometric(solid, framing);
    Ok(render(solid, &cam, res, res, Shading::Lambert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::region::PlanarRegion;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn cube(h: f64) -> Solid {
        let r = PlanarRegion::from_loops(vec![vec![[-h, -h], [h, -h], [h, h], [-h, h]]]).unwrap();
        Solid::prism(Prism { axis: 2, lo: -h, hi: h, region: Arc::new(r) })
    }

    #[test]
    fn cube_shows_three_gray_levels() {
        let img = render_isometric(&cube(0.2), 96, Framing::FitModel).unwrap();
        let levels: BTreeSet<u8> = img.data.iter().copied().filter(|&p| p != BACKGROUND).collect();
        assert_eq!(levels.len(), 3, "{levels:?}");
    }

    #[test]
    fn empty_solid_rejected() {
        assert_eq!(render_isometric(&Solid::empty(), 16, Framing::FitModel).unwrap_err(), KernelError::EmptySolid);
    }

    #[test]
    fn iso_basis_is_orthonormal_and_right_handed() {
        assert!(dot(ISO_RIGHT, ISO_UP).abs() < 1e-15);
        assert!(dot(ISO_RIGHT, ISO_DIR).abs() < 1e-15);
        assert!(dot(ISO_UP, ISO_DIR).abs() < 1e-15);
        let c = [
            ISO_RIGHT[1] * ISO_UP[2] - ISO_RIGHT[2] * ISO_UP[1],
            ISO_RIGHT[2] * ISO_UP[0] - ISO_RIGHT[0] * ISO_UP[2],
            ISO_RIGHT[0] * ISO_UP[1] - ISO_RIGHT[1] * ISO_UP[0],
        ];
        for i in 0..3 {
            assert!((c[i] + ISO_DIR[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_view_matches_point_membership() {
        let s = cube(0.2);
        let cam = Camera::plane_view(PlaneId::Top);
        let hits = cast(&s, &cam, 40, 40);
        for j in 0..40 {
            for i in 0..40 {
                let (u, v) = ((i as f64 + 0.5) / 40.0, (j as f64 + 0.5) / 40.0);
                let inside = (u - 0.5).abs() < 0.2 && (v - 0.5).abs() < 0.2;
                assert_eq!(hits[j * 40 + i].is_some(), inside);
            }
        }
    }
}
