//! Voxelization and voxel topology (through-hole counting, mirror tests).

use std::collections::VecDeque;

use super::solid::{Aabb, Csg, Solid};
use super::KernelError;

/// Padding cells added on every side of the bounding box.
pub const PAD: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub cell: [f64; 3],
    pub occ: Vec<bool>,
}

impl VoxelGrid {
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn get(&self, x: i64, y: i64, z: i64) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return false;
        }
        self.occ[self.idx(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.occ.iter().filter(|&&b| b).count()
    }

    fn center(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.cell[axis]
    }
}

/// Samples cell centers over the solid's bounding box split into `rho`
/// cells per axis, plus [`PAD`] empty cells on every side.
pub fn voxelize(solid: &Solid, rho: usize) -> Result<VoxelGrid, KernelError> {
    if solid.is_empty() {
        return Err(KernelError::EmptySolid);
    }
    let bb: Aabb = solid.aabb();
    let mut cell = [0.0; 3];
    let mut origin = [0.0; 3];
    let dims = [rho + 2 * PAD; 3];
    for a in 0..3 {
        cell[a] = ((bb.max[a] - bb.min[a]) / rho as f64).max(1e-9);
        origin[a] = bb.min[a] - PAD as f64 * cell[a];
    }
    let mut grid = VoxelGrid { dims, origin, cell, occ: Vec::new() };
    let n = dims[0] * dims[1] * dims[2];

    // Each prism is a 2D mask times a 1D interval.
    let leaves: Vec<Vec<bool>> = solid
        .prisms
        .iter()
        .map(|pr| {
            let (ka, kb) = pr.kept();
            let mut mask = vec![false; dims[ka] * dims[kb]];
            for j in 0..dims[kb] {
                for i in 0..dims[ka] {
                    mask[j * dims[ka] + i] = pr.region.contains([grid.center(ka, i), grid.center(kb, j)]);
                }
            }
            let span: Vec<bool> = (0..dims[pr.axis])
                .map(|k| {
                    let c = grid.center(pr.axis, k);
                    c >= pr.lo && c <= pr.hi
                })
                .collect();
            let mut occ = vec![false; n];
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let c = [x, y, z];
                        occ[grid.idx(x, y, z)] = span[c[pr.axis]] && mask[c[kb] * dims[ka] + c[ka]];
                    }
                }
            }
            occ
        })
        .collect();
    grid.occ = eval(&solid.tree, &leaves, n);
    Ok(grid)
}

fn eval(t: &Csg, leaves: &[Vec<bool>], n: usize) -> Vec<bool> {
    let zip = |a: &Csg, b: &Csg, f: fn(bool, bool) -> bool| {
        let (x, y) = (eval(a, leaves, n), eval(b, leaves, n));
        x.iter().zip(&y).map(|(&p, &q)| f(p, q)).collect()
    };
    match t {
        Csg::Empty => vec![false; n],
        Csg::Leaf(i) => leaves[*i].clone(),
        Csg::Union(a, b) => zip(a, b, |p, q| p || q),
        Csg::Difference(a, b) => zip(a, b, |p, q| p && !q),
        Csg::Intersection(a, b) => zip(a, b, |p, q| p && q),
    }
}

fn components(g: &VoxelGrid, target: bool, neighbors: &[[i64; 3]]) -> usize {
    let [nx, ny, nz] = g.dims;
    let mut seen = vec![false; g.occ.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..g.occ.len() {
        if seen[start] || g.occ[start] != target {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            let (x, y, z) = ((c % nx) as i64, ((c / nx) % ny) as i64, (c / (nx * ny)) as i64);
            for d in neighbors {
                let (a, b, e) = (x + d[0], y + d[1], z + d[2]);
                if a < 0 || b < 0 || e < 0 || a >= nx as i64 || b >= ny as i64 || e >= nz as i64 {
                    continue;
                }
                let k = g.idx(a as usize, b as usize, e as usize);
                if !seen[k] && g.occ[k] == target {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
    }
    count
}

fn n6() -> Vec<[i64; 3]> {
    vec![[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
}

fn n26() -> Vec<[i64; 3]> {
    let mut v = Vec::new();
    for x in -1..=1 {
        for y in -1..=1 {
            for z in -1..=1 {
                if (x, y, z) != (0, 0, 0) {
                    v.push([x, y, z]);
                }
            }
        }
    }
    v
}

/// Euler characteristic of the union of closed occupied cubes.
pub fn euler_characteristic(g: &VoxelGrid) -> i64 {
    let [nx, ny, nz] = g.dims;
    let occ = |x: i64, y: i64, z: i64| g.get(x, y, z);
    let (mut v, mut e, mut f) = (0i64, 0i64, 0i64);
    // Lattice point (x,y,z) is the min corner of cube (x,y,z).
    for z in 0..=nz as i64 {
        for y in 0..=ny as i64 {
            for x in 0..=nx as i64 {
                let any = |cells: &[(i64, i64, i64)]| cells.iter().any(|&(a, b, c)| occ(a, b, c));
                let mut cubes = Vec::with_capacity(8);
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            cubes.push((x - dx, y - dy, z - dz));
                        }
                    }
                }
                if any(&cubes) {
                    v += 1;
                }
                // Edges starting at this lattice point along +x, +y, +z.
                let ex = [(x, y, z), (x, y - 1, z), (x, y, z - 1), (x, y - 1, z - 1)];
                let ey = [(x, y, z), (x - 1, y, z), (x, y, z - 1), (x - 1, y, z - 1)];
                let ez = [(x, y, z), (x - 1, y, z), (x, y - 1, z), (x - 1, y - 1, z)];
                e += [ex, ey, ez].iter().filter(|c| any(&c[..])).count() as i64;
                // Faces with this lattice point as min corner, normal x, y, z.
                let fx = [(x, y, z), (x - 1, y, z)];
                let fy = [(x, y, z), (x, y - 1, z)];
                let fz = [(x, y, z), (x, y, z - 1)];
                f += [fx, fy, fz].iter().filter(|c| any(&c[..])).count() as i64;
            }
        }
    }
    let c = g.count() as i64;
    v - e + f - c
}

/// First Betti number of the voxelized solid: `β₁ = β₀ + β₂ − χ`.
pub fn betti1(g: &VoxelGrid) -> i64 {
    let b0 = components(g, true, &n26()) as i64;
    let b2 = components(g, false, &n6()) as i64 - 1;
    b0 + b2 - euler_characteristic(g)
}

pub const HOLE_RESOLUTIONS: [usize; 2] = [64, 96];

/// Independent through-tunnels, agreed upon at two voxel resolutions.
pub fn count_through_holes(solid: &Solid) -> Result<usize, KernelError> {
    let mut counts = Vec::new();
    for rho in HOLE_RESOLUTIONS {
        counts.push(betti1(&voxelize(solid, rho)?).max(0) as usize);
    }
    if counts[0] != counts[1] {
        return Err(KernelError::Indeterminate { low: counts[0], high: counts[1] });
    }
    Ok(counts[0])
}

/// Intersection over union of the grid with its mirror image across the
/// grid's mid-plane normal to `axis`.
pub fn mirror_iou(g: &VoxelGrid, axis: usize) -> f64 {
    let [nx, ny, nz] = g.dims;
    let (mut inter, mut uni) = (0usize, 0usize);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut m = [x, y, z];
                m[axis] = g.dims[axis] - 1 - m[axis];
                let a = g.occ[g.idx(x, y, z)];
                let b = g.occ[g.idx(m[0], m[1], m[2])];
                inter += usize::from(a && b);
                uni += usize::from(a || b);
            }
        }
    }
    if uni == 0 {
        1.0
    } else {
        inter as f64 / uni as f64
    }
}
