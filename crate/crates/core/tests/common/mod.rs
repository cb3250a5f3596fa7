#![allow(dead_code)]

use meshgeo_core::cubify::{cubify, UnitCubeTemplate};
use meshgeo_core::refine::make_icosphere;
use meshgeo_core::rng::RandomStream;
use meshgeo_core::{CubifyConfig, DVec3, TriangleMesh, VoxelGrid};

/// Random probabilities in `[0, 1]`; roughly `density` of them exceed 0.5.
pub fn random_grid(rng: &mut RandomStream, dims: [usize; 4], density: f64) -> VoxelGrid {
    let n: usize = dims.iter().product();
    let values = (0..n)
        .map(|_| {
            let u = rng.next_f64();
            let v = if u < density { 0.5 + 0.5 * rng.next_f64() } else { 0.5 * rng.next_f64() };
            v as f32
        })
        .collect();
    VoxelGrid::new(dims, values).unwrap()
}

/// Solid ball with a noisy surface, the kind of grid a voxel predictor emits.
pub fn blob_grid(rng: &mut RandomStream, batch: usize, size: usize) -> VoxelGrid {
    let mut values = Vec::with_capacity(batch * size * size * size);
    let c = (size as f64 - 1.0) / 2.0;
    for _ in 0..batch {
        let r = size as f64 * (0.25 + 0.15 * rng.next_f64());
        for z in 0..size {
            for y in 0..size {
                for x in 0..size {
                    let d = DVec3::new(x as f64 - c, y as f64 - c, z as f64 - c).length();
                    let noise = 2.0 * (rng.next_f64() - 0.5);
                    let p = 1.0 / (1.0 + ((d - r + noise) * 1.5).exp());
                    values.push(p as f32);
                }
            }
        }
    }
    VoxelGrid::new([batch, size, size, size], values).unwrap()
}

/// Axis-aligned box centered at the origin with the given half extents.
pub fn cuboid(half: DVec3) -> TriangleMesh {
    let (v, f) = UnitCubeTemplate::mesh().into_parts();
    TriangleMesh::new(v.into_iter().map(|p| (p * 2.0 - DVec3::ONE) * half).collect(), f).unwrap()
}

/// Level-2 icosphere with every vertex jittered by up to `amount` per axis.
pub fn jittered_sphere(rng: &mut RandomStream, amount: f64) -> TriangleMesh {
    let m = make_icosphere(2);
    let v = m
        .vertices()
        .iter()
        .map(|&p| p + DVec3::new(rng.uniform(-amount, amount), rng.uniform(-amount, amount), rng.uniform(-amount, amount)))
        .collect();
    m.with_vertices(v).unwrap()
}

/// A cubified random grid whose vertex count lies in `[lo, hi]`.
pub fn random_cubified(rng: &mut RandomStream, lo: usize, hi: usize) -> TriangleMesh {
    loop {
        let s = 3 + (rng.next_u64() % 4) as usize;
        let density = 0.3 + 0.4 * rng.next_f64();
        let g = random_grid(rng, [1, s, s, s], density);
        let cfg = CubifyConfig {
            threshold: 0.5,
            voxel_size: 0.2,
            origin: DVec3::splat(-0.5),
        };
        let m = cubify(&g, &cfg).unwrap().remove(0);
        if (lo..=hi).contains(&m.vertex_count()) {
            return m;
        }
    }
}

/// Mesh with 50-500 vertices: alternates jittered spheres and cubified grids.
pub fn random_test_mesh(rng: &mut RandomStream, i: usize) -> TriangleMesh {
    if i % 2 == 0 {
        jittered_sphere(rng, 0.05)
    } else {
        random_cubified(rng, 50, 500)
    }
}

pub fn random_points(rng: &mut RandomStream, n: usize) -> Vec<DVec3> {
    (0..n)
        .map(|_| DVec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)` over the flattened vectors.
pub fn relative_error(a: &[DVec3], b: &[DVec3]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (*x - *y).length_squared()).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x.length_squared()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.length_squared()).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` over every coordinate of `x`.
pub fn numeric_gradient(x: &[DVec3], h: f64, mut f: impl FnMut(&[DVec3]) -> f64) -> Vec<DVec3> {
    let mut work = x.to_vec();
    let mut out = vec![DVec3::ZERO; x.len()];
    for i in 0..x.len() {
        for a in 0..3 {
            let orig = work[i][a];
            work[i][a] = orig + h;
            let fp = f(&work);
            work[i][a] = orig - h;
            let fm = f(&work);
            work[i][a] = orig;
            out[i][a] = (fp - fm) / (2.0 * h);
        }
    }
    out
}

/// Distance from `p` to the triangle `(a, b, c)`.
pub fn point_triangle_distance(p: DVec3, a: DVec3, b: DVec3, c: DVec3) -> f64 {
    // Voronoi-region walk over vertices, edges, then the interior
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (p - a).length();
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (p - b).length();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).length();
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (p - c).length();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).length();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).length();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).length()
}
