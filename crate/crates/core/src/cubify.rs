//! Voxel occupancy grids to watertight triangle meshes.
//!
//! Every occupied cell (value strictly greater than the threshold) contributes
//! a unit cube; cube sides facing another occupied cell are dropped and
//! vertices shared between cubes are merged. Cells outside the grid count as
//! empty.
//!
//! Occupancy is 6-connected: two cells that touch only along an edge or at a
//! corner are not joined. Where the merged surface would pinch (an edge with
//! four incident faces, or a vertex whose faces form several separate fans),
//! the shared lattice vertex is split into one vertex per fan. An edge contact
//! between cells that are already joined around both of its ends is paired
//! across the contact instead, which splits the ends apart rather than leaving
//! two copies of the edge. The result is always a closed, consistently
//! oriented 2-manifold.
//!
//! [`cubify_naive`] is the direct per-voxel loop with coordinate-keyed merging
//! and serves as the reference. [`cubify`] computes the same meshes with
//! whole-grid shifted comparisons, a precomputed table of local vertex fans and
//! flat index arithmetic.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use glam::DVec3;

use crate::mesh::TriangleMesh;
use crate::voxel::VoxelGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubifyConfig {
    /// Occupancy threshold τ; a cell is occupied when its value is `> τ`.
    pub threshold: f64,
    /// World units per cell edge.
    pub voxel_size: f64,
    /// World position of the grid corner at cell `(0, 0, 0)`.
    pub origin: DVec3,
}

impl Default for CubifyConfig {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            voxel_size: 1.0,
            origin: DVec3::ZERO,
        }
    }
}

impl CubifyConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::OutOfRange {
                name: "cubify threshold",
                value: self.threshold,
            });
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::NonPositive {
                name: "voxel size",
                value: self.voxel_size,
            });
        }
        if !self.origin.is_finite() {
            return Err(Error::InvalidConfig("grid origin must be finite".into()));
        }
        Ok(())
    }

    fn lattice_point(&self, x: usize, y: usize, z: usize) -> DVec3 {
        self.origin + self.voxel_size * DVec3::new(x as f64, y as f64, z as f64)
    }
}

/// Sides of a cube, named by the grid neighbor they face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeSide {
    /// `z - 1`
    Back,
    /// `z + 1`
    Front,
    /// `y - 1`
    Top,
    /// `y + 1`
    Bottom,
    /// `x - 1`
    Left,
    /// `x + 1`
    Right,
}

impl CubeSide {
    pub const ALL: [CubeSide; 6] = [
        CubeSide::Back,
        CubeSide::Front,
        CubeSide::Top,
        CubeSide::Bottom,
        CubeSide::Left,
        CubeSide::Right,
    ];

    /// Neighbor offset as `(dz, dy, dx)`.
    pub fn neighbor_offset(self) -> [isize; 3] {
        match self {
            CubeSide::Back => [-1, 0, 0],
            CubeSide::Front => [1, 0, 0],
            CubeSide::Top => [0, -1, 0],
            CubeSide::Bottom => [0, 1, 0],
            CubeSide::Left => [0, 0, -1],
            CubeSide::Right => [0, 0, 1],
        }
    }

    /// Bit of the cube-vertex / octant index that flips across this side.
    fn axis_bit(self) -> usize {
        match self {
            CubeSide::Left | CubeSide::Right => 1,
            CubeSide::Top | CubeSide::Bottom => 2,
            CubeSide::Back | CubeSide::Front => 4,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// The unit cube added for each occupied cell.
///
/// Vertex `k` sits at offset `(k & 1, (k >> 1) & 1, (k >> 2) & 1)` in
/// `(x, y, z)`. Each side is split along the diagonal joining its lowest and
/// highest corner, so coplanar neighboring sides are triangulated the same way.
#[derive(Debug, Clone, Copy)]
pub struct UnitCubeTemplate;

impl UnitCubeTemplate {
    pub const VERTICES: [[u8; 3]; 8] = [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ];

    /// Two counterclockwise-outward triangles per side, in [`CubeSide::ALL`] order.
    pub const FACES: [[usize; 3]; 12] = [
        [0, 3, 1],
        [0, 2, 3],
        [4, 5, 7],
        [4, 7, 6],
        [0, 5, 4],
        [0, 1, 5],
        [2, 6, 7],
        [2, 7, 3],
        [0, 6, 2],
        [0, 4, 6],
        [1, 3, 7],
        [1, 7, 5],
    ];

    pub fn side_faces(side: CubeSide) -> [[usize; 3]; 2] {
        let i = side.index() * 2;
        [Self::FACES[i], Self::FACES[i + 1]]
    }

    pub fn mesh() -> TriangleMesh {
        let vertices = Self::VERTICES
            .iter()
            .map(|&[x, y, z]| DVec3::new(x as f64, y as f64, z as f64))
            .collect();
        TriangleMesh::from_parts_unchecked(vertices, Self::FACES.to_vec())
    }
}

/// Compared in the grid's own precision, so a cell holding exactly `τ` is empty.
fn is_occupied(value: f32, threshold: f64) -> bool {
    value > threshold as f32
}

/// Reference implementation: per-voxel loop, then coordinate-keyed merging.
pub fn cubify_naive(grid: &VoxelGrid, cfg: &CubifyConfig) -> Result<Vec<TriangleMesh>> {
    cfg.validate()?;
    Ok((0..grid.batch_size())
        .map(|n| cubify_element_naive(grid, n, cfg))
        .collect())
}

fn cubify_element_naive(grid: &VoxelGrid, n: usize, cfg: &CubifyConfig) -> TriangleMesh {
    let [d, h, w] = grid.spatial_dims();
    let occupied = |[x, y, z]: [isize; 3]| {
        (0..d as isize).contains(&z)
            && (0..h as isize).contains(&y)
            && (0..w as isize).contains(&x)
            && is_occupied(grid.get(n, z as usize, y as usize, x as usize), cfg.threshold)
    };

    let mut vertices = Vec::new();
    let mut lattice = Vec::new();
    let mut faces = Vec::new();
    let mut face_info = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let cell = [x as isize, y as isize, z as isize];
                if !occupied(cell) {
                    continue;
                }
                let base = vertices.len();
                for &[vx, vy, vz] in &UnitCubeTemplate::VERTICES {
                    vertices.push(cfg.lattice_point(
                        x + vx as usize,
                        y + vy as usize,
                        z + vz as usize,
                    ));
                    lattice.push([cell[0] + vx as isize, cell[1] + vy as isize, cell[2] + vz as isize]);
                }
                for side in CubeSide::ALL {
                    let [dz, dy, dx] = side.neighbor_offset();
                    let outside = [cell[0] + dx, cell[1] + dy, cell[2] + dz];
                    if occupied(outside) {
                        continue;
                    }
                    for f in UnitCubeTemplate::side_faces(side) {
                        faces.push([base + f[0], base + f[1], base + f[2]]);
                        face_info.push(FaceCells { inside: cell, outside });
                    }
                }
            }
        }
    }
    merge_shared_vertices(&vertices, &lattice, &faces, &face_info, &occupied)
}

#[derive(Debug, Clone, Copy)]
struct FaceCells {
    inside: [isize; 3],
    outside: [isize; 3],
}

/// Whether occupied cells `a` and `b`, both touching lattice point `corner`,
/// are joined through occupied cells that share sides and also touch `corner`.
fn joined_around(corner: [isize; 3], a: [isize; 3], b: [isize; 3], occupied: &dyn Fn([isize; 3]) -> bool) -> bool {
    let around: Vec<[isize; 3]> = (0..8)
        .map(|k| [corner[0] - 1 + (k & 1), corner[1] - 1 + ((k >> 1) & 1), corner[2] - 1 + ((k >> 2) & 1)])
        .filter(|&c| occupied(c))
        .collect();
    let mut seen = vec![a];
    let mut stack = vec![a];
    while let Some(c) = stack.pop() {
        for &o in &around {
            let steps: isize = (0..3).map(|i| (o[i] - c[i]).abs()).sum();
            if steps == 1 && !seen.contains(&o) {
                seen.push(o);
                stack.push(o);
            }
        }
    }
    seen.contains(&b)
}

/// (undirected key, directed from, face, corner)
type HalfEdge = ([usize; 2], usize, usize, usize);

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Merges vertices with identical coordinates, then splits them again into
/// one vertex per fan of faces. Half-edges are paired across each edge. At an
/// edge shared by two diagonal cubes the pairing stays within each cube,
/// unless the two cubes are joined through side-sharing cubes around both
/// ends of the edge; then each face pairs with the other cube's face bounding
/// the same empty cell, which keeps the two copies of the edge apart.
/// Vertices left without faces are dropped.
fn merge_shared_vertices(
    vertices: &[DVec3],
    lattice: &[[isize; 3]],
    faces: &[[usize; 3]],
    face_info: &[FaceCells],
    occupied: &dyn Fn([isize; 3]) -> bool,
) -> TriangleMesh {
    let mut by_position: BTreeMap<[u64; 3], usize> = BTreeMap::new();
    let mut merged_positions = Vec::new();
    let mut merged_lattice = Vec::new();
    let merged_id: Vec<usize> = vertices
        .iter()
        .zip(lattice)
        .map(|(p, &l)| {
            *by_position
                .entry([p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
                .or_insert_with(|| {
                    merged_positions.push(*p);
                    merged_lattice.push(l);
                    merged_positions.len() - 1
                })
        })
        .collect();
    let faces: Vec<[usize; 3]> = faces
        .iter()
        .map(|f| [merged_id[f[0]], merged_id[f[1]], merged_id[f[2]]])
        .collect();

    let mut half_edges: Vec<HalfEdge> = Vec::with_capacity(faces.len() * 3);
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            half_edges.push(([a.min(b), a.max(b)], a, fi, k));
        }
    }
    half_edges.sort_unstable();

    let corner = |face: usize, k: usize| face * 3 + k;
    let mut fans = DisjointSet::new(faces.len() * 3);
    let mut start = 0;
    while start < half_edges.len() {
        let key = half_edges[start].0;
        let mut end = start;
        while end < half_edges.len() && half_edges[end].0 == key {
            end += 1;
        }
        let group = &half_edges[start..end];
        let (forward, backward): (Vec<&HalfEdge>, Vec<&HalfEdge>) = group.iter().partition(|h| h.1 == key[0]);
        let cross = backward.len() > 1 && {
            let a = face_info[forward[0].2].inside;
            let b = backward
                .iter()
                .map(|h| face_info[h.2].inside)
                .find(|&c| c != a)
                .expect("four faces come from two cubes");
            key.iter()
                .all(|&v| joined_around(merged_lattice[v], a, b, occupied))
        };
        let mut used = vec![false; backward.len()];
        for &&(_, _, f, k) in &forward {
            let fits = |j: usize| {
                let (mine, theirs) = (face_info[f], face_info[backward[j].2]);
                if cross {
                    mine.inside != theirs.inside && mine.outside == theirs.outside
                } else {
                    mine.inside == theirs.inside
                }
            };
            let partner = if backward.len() == 1 {
                Some(0)
            } else {
                (0..backward.len()).find(|&j| !used[j] && fits(j))
            };
            let Some(j) = partner else { continue };
            used[j] = true;
            let (_, _, g, m) = *backward[j];
            // f runs a -> b at corner k; g runs b -> a at corner m.
            fans.union(corner(f, k), corner(g, (m + 1) % 3));
            fans.union(corner(f, (k + 1) % 3), corner(g, m));
        }
        start = end;
    }

    let mut vertex_of_root = vec![usize::MAX; faces.len() * 3];
    let mut out_vertices = Vec::new();
    let mut out_faces = Vec::with_capacity(faces.len());
    for (fi, f) in faces.iter().enumerate() {
        let mut tri = [0usize; 3];
        for k in 0..3 {
            let root = fans.find(corner(fi, k));
            if vertex_of_root[root] == usize::MAX {
                vertex_of_root[root] = out_vertices.len();
                out_vertices.push(merged_positions[f[k]]);
            }
            tri[k] = vertex_of_root[root];
        }
        out_faces.push(tri);
    }
    TriangleMesh::from_parts_unchecked(out_vertices, out_faces)
}

const NO_FAN: u8 = u8::MAX;
const MAX_FANS: usize = 4;

type FanLayout = [[u8; 8]; 8];

/// `FAN_TABLE[config][occupied_octant][empty_octant]` is the fan, among those
/// meeting at a lattice vertex, that a face between the two octant cells
/// belongs to. `config` has bit `o` set when octant cell `o` around the vertex
/// is occupied; octant `o` lies at offset `(o & 1, (o >> 1) & 1, (o >> 2) & 1)`
/// from the cell on the vertex's low corner.
///
/// A fan is identified by the pair (component of occupied cells, component of
/// empty cells) it separates, where occupied cells connect through shared
/// sides and empty cells through shared sides or edges. Vertices next to a
/// cut edge (see [`POLE_LINKED`]) use [`fan_layout`] with that edge removed
/// from the empty connections.
static FAN_TABLE: [FanLayout; 256] = build_fan_table();

/// Bit `2 * axis + side` is set when the four octants around the lattice edge
/// leaving the vertex along `axis` (towards `+` when `side` is 1) hold exactly
/// two diagonal occupied cells that are joined through side-sharing occupied
/// octants. An edge is cut when this holds at both of its ends.
static POLE_LINKED: [u8; 256] = build_pole_linked();

const fn octant_components(config: usize, cut: u8) -> [u8; 8] {
    let mut label = [0u8, 1, 2, 3, 4, 5, 6, 7];
    let mut changed = true;
    while changed {
        changed = false;
        let mut i = 0;
        while i < 8 {
            let mut j = 0;
            while j < 8 {
                let occ_i = (config >> i) & 1;
                let occ_j = (config >> j) & 1;
                let diff = ((i ^ j) as u32).count_ones();
                let mut linked = occ_i == occ_j && (diff == 1 || (occ_i == 0 && diff == 2));
                if linked && diff == 2 {
                    let axis = ((7 ^ i ^ j) as u32).trailing_zeros() as usize;
                    let pole = 2 * axis + ((i >> axis) & 1);
                    linked = (cut >> pole) & 1 == 0;
                }
                if linked && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
                j += 1;
            }
            i += 1;
        }
    }
    label
}

const fn fan_layout(config: usize, cut: u8) -> FanLayout {
    let mut table = [[NO_FAN; 8]; 8];
    let label = octant_components(config, cut);
    let mut fans = [[0u8; 2]; MAX_FANS];
    let mut count = 0;
    let mut i = 0;
    while i < 8 {
        if (config >> i) & 1 == 1 {
            let mut axis = 0;
            while axis < 3 {
                let j = i ^ (1 << axis);
                if (config >> j) & 1 == 0 {
                    let key = [label[i], label[j]];
                    let mut f = 0;
                    while f < count && !(fans[f][0] == key[0] && fans[f][1] == key[1]) {
                        f += 1;
                    }
                    if f == count {
                        assert!(count < MAX_FANS);
                        fans[count] = key;
                        count += 1;
                    }
                    table[i][j] = f as u8;
                }
                axis += 1;
            }
        }
        i += 1;
    }
    table
}

const fn build_fan_table() -> [FanLayout; 256] {
    let mut table = [[[NO_FAN; 8]; 8]; 256];
    let mut config = 0;
    while config < 256 {
        table[config] = fan_layout(config, 0);
        config += 1;
    }
    table
}

const fn build_pole_linked() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut config = 0;
    while config < 256 {
        let label = octant_components(config, 0);
        let mut axis = 0;
        while axis < 3 {
            let mut side = 0;
            while side < 2 {
                // The four octants with bit `axis` equal to `side`, in cyclic order.
                let (u, v) = (1 << ((axis + 1) % 3), 1 << ((axis + 2) % 3));
                let base = side << axis;
                let ring = [base, base | u, base | u | v, base | v];
                let occ = [
                    (config >> ring[0]) & 1,
                    (config >> ring[1]) & 1,
                    (config >> ring[2]) & 1,
                    (config >> ring[3]) & 1,
                ];
                let diagonal = occ[0] == occ[2] && occ[1] == occ[3] && occ[0] != occ[1];
                if diagonal {
                    let (a, b) = if occ[0] == 1 { (ring[0], ring[2]) } else { (ring[1], ring[3]) };
                    if label[a] == label[b] {
                        table[config] |= 1 << (2 * axis + side);
                    }
                }
                side += 1;
            }
            axis += 1;
        }
        config += 1;
    }
    table
}

/// Converts every batch element of `grid` into a mesh.
pub fn cubify(grid: &VoxelGrid, cfg: &CubifyConfig) -> Result<Vec<TriangleMesh>> {
    cfg.validate()?;
    Ok((0..grid.batch_size())
        .map(|n| cubify_values(grid.batch(n), grid.spatial_dims(), cfg))
        .collect())
}

/// Converts batch element `n`; lets callers distribute a batch across threads.
pub fn cubify_element(grid: &VoxelGrid, n: usize, cfg: &CubifyConfig) -> Result<TriangleMesh> {
    cfg.validate()?;
    if n >= grid.batch_size() {
        return Err(Error::OutOfRange {
            name: "batch index",
            value: n as f64,
        });
    }
    Ok(cubify_values(grid.batch(n), grid.spatial_dims(), cfg))
}

fn cubify_values(values: &[f32], [d, h, w]: [usize; 3], cfg: &CubifyConfig) -> TriangleMesh {
    // Zero-padded occupancy so that every shift stays in bounds. The padded
    // cell (z, y, x) is grid cell (z-1, y-1, x-1), whose low corner is lattice
    // point (z-1, y-1, x-1); lattice points share the padded index space.
    let sy = w + 2;
    let sz = sy * (h + 2);
    let total = sz * (d + 2);
    let mut occ = vec![0u8; total];
    for (row, src) in values.chunks_exact(w).enumerate() {
        let (z, y) = (row / h, row % h);
        let start = (z + 1) * sz + (y + 1) * sy + 1;
        for (o, &v) in occ[start..start + w].iter_mut().zip(src) {
            *o = is_occupied(v, cfg.threshold) as u8;
        }
    }

    // Octant configuration of every lattice point.
    let lattice_len = total - (sz + sy + 1);
    let mut config = vec![0u8; lattice_len];
    for octant in 0..8 {
        let offset = (octant & 1) + ((octant >> 1) & 1) * sy + ((octant >> 2) & 1) * sz;
        for (c, &o) in config.iter_mut().zip(&occ[offset..]) {
            *c |= o << octant;
        }
    }

    // Layouts for the few vertices next to a cut edge.
    let axis_stride = [1, sy, sz];
    let mut special: BTreeMap<usize, FanLayout> = BTreeMap::new();
    for (lattice, &c) in config.iter().enumerate() {
        let linked = POLE_LINKED[c as usize];
        if linked == 0 {
            continue;
        }
        let mut cut = 0u8;
        for axis in 0..3 {
            for side in 0..2 {
                let pole = 2 * axis + side;
                if (linked >> pole) & 1 == 0 {
                    continue;
                }
                let other = if side == 1 {
                    config.get(lattice + axis_stride[axis])
                } else {
                    lattice.checked_sub(axis_stride[axis]).and_then(|i| config.get(i))
                };
                if other.is_some_and(|&o| (POLE_LINKED[o as usize] >> (pole ^ 1)) & 1 == 1) {
                    cut |= 1 << pole;
                }
            }
        }
        if cut != 0 {
            special.insert(lattice, fan_layout(c as usize, cut));
        }
    }

    let cube_offsets: [usize; 8] = core::array::from_fn(|k| (k & 1) + ((k >> 1) & 1) * sy + ((k >> 2) & 1) * sz);
    let corner_shift = sz + sy + 1;
    let interior = sz..total - sz;

    let mut vertex_of_key = vec![u32::MAX; lattice_len * MAX_FANS];
    let mut vertex_keys: Vec<usize> = Vec::new();
    let mut faces = Vec::new();
    for side in CubeSide::ALL {
        let [dz, dy, dx] = side.neighbor_offset();
        let shift = dz * sz as isize + dy * sy as isize + dx;
        let neighbors = &occ[(interior.start as isize + shift) as usize..];
        let templates = UnitCubeTemplate::side_faces(side);
        let cells = occ[interior.clone()]
            .iter()
            .zip(neighbors)
            .enumerate()
            .filter(|(_, (&c, &nb))| c & !nb & 1 == 1)
            .map(|(i, _)| i + interior.start);
        for cell in cells {
            let low_corner = cell - corner_shift;
            for tri in &templates {
                let mut out = [0usize; 3];
                for (slot, &k) in out.iter_mut().zip(tri) {
                    let lattice = low_corner + cube_offsets[k];
                    let own = 7 - k;
                    let other = own ^ side.axis_bit();
                    let layout = match special.get(&lattice) {
                        Some(layout) => layout,
                        None => &FAN_TABLE[config[lattice] as usize],
                    };
                    let fan = layout[own][other];
                    debug_assert_ne!(fan, NO_FAN);
                    let key = lattice * MAX_FANS + fan as usize;
                    if vertex_of_key[key] == u32::MAX {
                        vertex_of_key[key] = vertex_keys.len() as u32;
                        vertex_keys.push(key);
                    }
                    *slot = vertex_of_key[key] as usize;
                }
                faces.push(out);
            }
        }
    }

    let vertices = vertex_keys
        .iter()
        .map(|&key| {
            let lattice = key / MAX_FANS;
            cfg.lattice_point(lattice % sy, (lattice % sz) / sy, lattice / sz)
        })
        .collect();
    TriangleMesh::from_parts_unchecked(vertices, faces)
}
