//! Closed polygon loops and even-odd planar regions.

use crate::geometry::{SketchGeom, CANVAS_CENTER};

use super::KernelError;

pub type P2 = [f64; 2];

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// A closed polygon. The closing edge from the last vertex back to the
/// first is implicit.
#[derive(Debug, Clone)]
pub struct PolyLoop {
    pub pts: Vec<P2>,
    /// `[min_x, min_y, max_x, max_y]`
    pub bbox: [f64; 4],
    band_lo: f64,
    band_h: f64,
    bands: Vec<Vec<u32>>,
}

impl PolyLoop {
    pub fn new(pts: Vec<P2>) -> Self {
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &pts {
            bbox[0] = bbox[0].min(p[0]);
            bbox[1] = bbox[1].min(p[1]);
            bbox[2] = bbox[2].max(p[0]);
            bbox[3] = bbox[3].max(p[1]);
        }
        let n = pts.len();
        let nb = (n / 4).clamp(1, 1024);
        let band_h = ((bbox[3] - bbox[1]) / nb as f64).max(1e-12);
        let mut bands = vec![Vec::new(); nb];
        let band = |y: f64| (((y - bbox[1]) / band_h).floor() as i64).clamp(0, nb as i64 - 1) as usize;
        for i in 0..n {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            for list in &mut bands[band(a[1].min(b[1]))..=band(a[1].max(b[1]))] {
                list.push(i as u32);
            }
        }
        Self { pts, bbox, band_lo: bbox[1], band_h, bands }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn edge(&self, i: usize) -> (P2, P2) {
        (self.pts[i], self.pts[(i + 1) % self.pts.len()])
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.pts.len();
        (0..n)
            .map(|i| {
                let (a, b) = self.edge(i);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.pts.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .sum()
    }

    /// Even-odd point-in-polygon by horizontal ray crossing.
    pub fn contains(&self, p: P2) -> bool {
        if p[0] < self.bbox[0] || p[0] > self.bbox[2] || p[1] < self.bbox[1] || p[1] > self.bbox[3] {
            return false;
        }
        let bi = (((p[1] - self.band_lo) / self.band_h).floor() as i64).clamp(0, self.bands.len() as i64 - 1);
        let mut inside = false;
        for &i in &self.bands[bi as usize] {
            let (a, b) = self.edge(i as usize);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Distance from `p` to the nearest edge.
    pub fn boundary_distance(&self, p: P2) -> f64 {
        (0..self.pts.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                seg_dist(p, a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// True if two non-adjacent edges properly cross.
    pub fn self_intersects(&self) -> bool {
        let n = self.pts.len();
        if n < 4 {
            return false;
        }
        let mut order: Vec<usize> = (0..n).collect();
        let min_y = |i: usize| {
            let (a, b) = self.edge(i);
            a[1].min(b[1])
        };
        order.sort_by(|&i, &j| min_y(i).total_cmp(&min_y(j)));
        let mut active: Vec<usize> = Vec::new();
        for &i in &order {
            let (a, b) = self.edge(i);
            let lo = a[1].min(b[1]);
            active.retain(|&j| {
                let (c, d) = self.edge(j);
                c[1].max(d[1]) >= lo
            });
            for &j in &active {
                let adjacent = (i + 1) % n == j || (j + 1) % n == i;
                if adjacent {
                    continue;
                }
                let (c, d) = self.edge(j);
                if segments_cross(a, b, c, d) {
                    return true;
                }
            }
            active.push(i);
        }
        false
    }

    pub fn map(&self, f: impl Fn(P2) -> P2) -> Self {
        Self::new(self.pts.iter().map(|&p| f(p)).collect())
    }
}

fn segments_cross(a: P2, b: P2, c: P2, d: P2) -> bool {
    let d1 = cross(a, b, c);
    let d2 = cross(a, b, d);
    let d3 = cross(c, d, a);
    let d4 = cross(c, d, b);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

pub fn seg_dist(p: P2, a: P2, b: P2) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// A set of closed loops interpreted with the even-odd rule. Coordinates are
/// world units on the two kept axes of the sketch plane.
#[derive(Debug, Clone)]
pub struct PlanarRegion {
    pub loops: Vec<PolyLoop>,
    /// Innermost loop strictly containing each loop.
    pub parent: Vec<Option<usize>>,
    /// Number of loops containing each loop; even depth bounds material.
    pub depth: Vec<usize>,
    pub bbox: [f64; 4],
}

impl PlanarRegion {
    pub fn from_loops(loops: Vec<Vec<P2>>) -> Result<Self, KernelError> {
        let loops: Vec<PolyLoop> = loops.into_iter().map(PolyLoop::new).collect();
        for (i, l) in loops.iter().enumerate() {
            if l.len() < 3 {
                return Err(KernelError::DegenerateLoop(i));
            }
            if l.self_intersects() {
                return Err(KernelError::SelfIntersecting(i));
            }
        }
        Ok(Self::with_tree(loops))
    }

    fn with_tree(loops: Vec<PolyLoop>) -> Self {
        let n = loops.len();
        let containers: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && loops[j].contains(loops[i].pts[0])).collect())
            .collect();
        let depth: Vec<usize> = containers.iter().map(Vec::len).collect();
        let parent = containers
            .iter()
            .map(|c| c.iter().copied().max_by_key(|&j| depth[j]))
            .collect();
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for l in &loops {
            bbox[0] = bbox[0].min(l.bbox[0]);
            bbox[1] = bbox[1].min(l.bbox[1]);
            bbox[2] = bbox[2].max(l.bbox[2]);
            bbox[3] = bbox[3].max(l.bbox[3]);
        }
        Self { loops, parent, depth, bbox }
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn contains(&self, p: P2) -> bool {
        if p[0] < self.bbox[0] || p[0] > self.bbox[2] || p[1] < self.bbox[1] || p[1] > self.bbox[3] {
            return false;
        }
        self.loops.iter().filter(|l| l.contains(p)).count() % 2 == 1
    }

    pub fn area(&self) -> f64 {
        self.loops
            .iter()
            .zip(&self.depth)
            .map(|(l, d)| if d % 2 == 0 { l.signed_area().abs() } else { -l.signed_area().abs() })
            .sum()
    }

    /// Loops bounding material from outside, one per connected face.
    pub fn faces(&self) -> Vec<usize> {
        (0..self.loops.len()).filter(|&i| self.depth[i].is_multiple_of(2)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.loops.len()).filter(|&j| self.parent[j] == Some(i)).collect()
    }

    /// The face whose material contains `p`, if any.
    pub fn face_at(&self, p: P2) -> Option<usize> {
        let inner = (0..self.loops.len())
            .filter(|&i| self.loops[i].contains(p))
            .max_by_key(|&i| self.depth[i])?;
        self.depth[inner].is_multiple_of(2).then_some(inner)
    }

    /// Distance from `p` to the boundary of face `f` (outer loop and holes).
    pub fn face_clearance(&self, f: usize, p: P2) -> f64 {
        std::iter::once(f)
            .chain(self.children(f))
            .map(|i| self.loops[i].boundary_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// The sub-region made of the given faces and their holes.
    pub fn select_faces(&self, faces: &[usize]) -> PlanarRegion {
        let mut keep: Vec<usize> = Vec::new();
        for &f in faces {
            keep.push(f);
            keep.extend(self.children(f));
        }
        keep.sort_unstable();
        keep.dedup();
        Self::with_tree(keep.into_iter().map(|i| self.loops[i].clone()).collect())
    }

    pub fn map(&self, f: impl Fn(P2) -> P2 + Copy) -> PlanarRegion {
        Self::with_tree(self.loops.iter().map(|l| l.map(f)).collect())
    }
}

/// Tessellates a lowered sketch into a region. Canvas coordinates are
/// shifted so the canvas center becomes the world origin.
pub fn build_region(sketch: &SketchGeom, tess: f64) -> Result<PlanarRegion, KernelError> {
    sketch.check_closure().map_err(|e| KernelError::OpenLoop(e.to_string()))?;
    let loops = sketch
        .loops
        .iter()
        .filter(|l| !l.primitives.is_empty())
        .map(|l| {
            l.polygon(tess)
                .into_iter()
                .map(|p| [p.u - CANVAS_CENTER.u, p.v - CANVAS_CENTER.v])
                .collect()
        })
        .collect();
    PlanarRegion::from_loops(loops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{LoopGeom, PixelPoint, PrimitiveGeom};

    fn square(c: f64, h: f64) -> Vec<P2> {
        vec![[c - h, c - h], [c + h, c - h], [c + h, c + h], [c - h, c + h]]
    }

    #[test]
    fn circle_area_within_half_percent() {
        let r = 0.2;
        let sk = SketchGeom {
            loops: vec![LoopGeom {
                primitives: vec![PrimitiveGeom::Circle { center: PixelPoint::new(0.5, 0.5), radius: r }],
            }],
        };
        let reg = build_region(&sk, 1e-3).unwrap();
        let exact = std::f64::consts::PI * r * r;
        assert!((reg.area() - exact).abs() / exact < 0.005);
    }

    #[test]
    fn tessellation_converges_quadratically() {
        let r = 0.2;
        let sk = SketchGeom {
            loops: vec![LoopGeom {
                primitives: vec![PrimitiveGeom::Circle { center: PixelPoint::new(0.5, 0.5), radius: r }],
            }],
        };
        let exact = std::f64::consts::PI * r * r;
        let e1 = (build_region(&sk, 2e-2).unwrap().area() - exact).abs();
        let e2 = (build_region(&sk, 1e-2).unwrap().area() - exact).abs();
        assert!(e1 / e2 >= 3.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn annulus_nesting() {
        let reg = PlanarRegion::from_loops(vec![square(0.0, 0.3), square(0.0, 0.1)]).unwrap();
        assert_eq!(reg.depth, vec![0, 1]);
        assert_eq!(reg.parent, vec![None, Some(0)]);
        assert!((reg.area() - (0.36 - 0.04)).abs() < 1e-12);
        assert!(!reg.contains([0.0, 0.0]));
        assert!(reg.contains([0.2, 0.0]));
        assert_eq!(reg.face_at([0.2, 0.0]), Some(0));
        assert_eq!(reg.face_at([0.0, 0.0]), None);
        assert_eq!(reg.faces(), vec![0]);
    }

    #[test]
    fn figure_eight_rejected() {
        let pts = vec![[0.0, 0.0], [0.2, 0.2], [0.2, 0.0], [0.0, 0.2]];
        assert!(matches!(PlanarRegion::from_loops(vec![pts]), Err(KernelError::SelfIntersecting(0))));
    }

    #[test]
    fn banded_contains_matches_plain_scan() {
        let n = 200;
        let pts: Vec<P2> = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                let r = 0.2 + 0.1 * (5.0 * a).sin();
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let l = PolyLoop::new(pts.clone());
        for i in 0..40 {
            for j in 0..40 {
                let p = [-0.35 + 0.7 * i as f64 / 39.0, -0.35 + 0.7 * j as f64 / 39.0];
                let mut inside = false;
                for k in 0..n {
                    let (a, b) = (pts[k], pts[(k + 1) % n]);
                    if (a[1] > p[1]) != (b[1] > p[1])
                        && p[0] < a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
                    {
                        inside = !inside;
                    }
                }
                assert_eq!(l.contains(p), inside);
            }
        }
    }
}
