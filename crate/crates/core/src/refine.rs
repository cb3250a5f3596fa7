//! Mesh refinement forward pass: vertex alignment, graph convolution and
//! vertex updates, with externally supplied weights.
//!
//! Feature maps use `(x, y) = (0, 0)` for the center of the top-left sample.
//! A pixel coordinate `u` maps to `u * map_width / image_width` (likewise for
//! `v`), and lookups outside the map clamp to the border.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use glam::DVec3;

use crate::camera::CameraIntrinsics;
use crate::mesh::{mesh_edges, TriangleMesh, VertexAdjacency};
use crate::rng::RandomStream;
use crate::{Error, Result};

/// Dense matrix, `rows x cols`, row-major. Applied as `y = W x`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::NonPositive {
                name: "weight matrix dimension",
                value: 0.0,
            });
        }
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "weight matrix values",
                expected: rows * cols,
                actual: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    /// Square identity.
    pub fn identity(n: usize) -> Result<Self> {
        let mut w = Self::zeros(n, n)?;
        for i in 0..n {
            w.values[i * n + i] = 1.0;
        }
        Ok(w)
    }

    /// Entries uniform in `±1/sqrt(cols)`.
    pub fn random(rows: usize, cols: usize, rng: &mut RandomStream) -> Result<Self> {
        let bound = 1.0 / libm::sqrt(cols as f64);
        let values = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        Self::new(rows, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn expect_shape(&self, what: &'static str, rows: usize, cols: usize) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(Error::ShapeMismatch {
                what,
                expected: (rows, cols),
                actual: self.shape(),
            });
        }
        Ok(())
    }

    fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.values[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// Per-vertex feature vectors, row-major `count x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFeatures {
    dim: usize,
    values: Vec<f64>,
}

impl VertexFeatures {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::NonPositive {
                name: "feature dimension",
                value: 0.0,
            });
        }
        if values.len() % dim != 0 {
            return Err(Error::LengthMismatch {
                what: "vertex feature values",
                expected: values.len() / dim * dim,
                actual: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(count: usize, dim: usize) -> Result<Self> {
        Self::new(dim, vec![0.0; count * dim])
    }

    pub fn from_positions(vertices: &[DVec3]) -> Self {
        Self {
            dim: 3,
            values: vertices.iter().flat_map(|v| v.to_array()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-wise concatenation `[a; b; ...]`.
    pub fn concat(parts: &[&VertexFeatures]) -> Result<Self> {
        let count = parts.first().map_or(0, |p| p.count());
        if let Some(p) = parts.iter().find(|p| p.count() != count) {
            return Err(Error::LengthMismatch {
                what: "vertex feature rows",
                expected: count,
                actual: p.count(),
            });
        }
        let dim = parts.iter().map(|p| p.dim).sum();
        let mut values = Vec::with_capacity(count * dim);
        for i in 0..count {
            for p in parts {
                values.extend_from_slice(p.row(i));
            }
        }
        Self::new(dim, values)
    }

    /// `W f_i` for every row.
    pub fn linear(&self, w: &WeightMatrix) -> Result<Self> {
        if w.cols != self.dim {
            return Err(Error::ShapeMismatch {
                what: "linear layer input",
                expected: (w.rows, self.dim),
                actual: w.shape(),
            });
        }
        let mut values = vec![0.0; self.count() * w.rows];
        for (i, out) in values.chunks_mut(w.rows).enumerate() {
            w.apply_row(self.row(i), out);
        }
        Self::new(w.rows, values)
    }

    pub fn relu(mut self) -> Self {
        for v in &mut self.values {
            *v = v.max(0.0);
        }
        self
    }

    fn add(mut self, other: &Self) -> Self {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        self
    }
}

/// Image feature map, `height x width x channels` with channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::NonPositive {
                name: "feature map dimension",
                value: 0.0,
            });
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "feature map values",
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.values[i..i + self.channels]
    }

    /// Bilinear lookup at map coordinates, clamped to the border.
    pub fn bilinear(&self, x: f64, y: f64, out: &mut [f64]) {
        let clamp = |c: f64, n: usize| {
            let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, (n - 1) as f64) };
            let i0 = libm::floor(c) as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, c - i0 as f64)
        };
        let (x0, x1, tx) = clamp(x, self.width);
        let (y0, y1, ty) = clamp(y, self.height);
        let corners = [
            (y0, x0, (1.0 - tx) * (1.0 - ty)),
            (y0, x1, tx * (1.0 - ty)),
            (y1, x0, (1.0 - tx) * ty),
            (y1, x1, tx * ty),
        ];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (cy, cx, w) in corners {
            if w == 0.0 {
                continue;
            }
            for (o, &s) in out.iter_mut().zip(self.sample(cy, cx)) {
                *o += w * s;
            }
        }
    }
}

/// Samples every map at each vertex's projection and concatenates the results.
///
/// `image_size` is `(width, height)` of the image the intrinsics refer to.
pub fn vert_align(
    maps: &[FeatureMap],
    camera: &CameraIntrinsics,
    image_size: (f64, f64),
    vertices: &[DVec3],
) -> Result<VertexFeatures> {
    let (iw, ih) = image_size;
    for (name, value) in [("image width", iw), ("image height", ih)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositive { name, value });
        }
    }
    if maps.is_empty() {
        return Err(Error::InvalidConfig("vertex alignment needs at least one feature map".into()));
    }
    let uv = camera.project_points(vertices)?;
    let dim: usize = maps.iter().map(|m| m.channels).sum();
    let mut values = vec![0.0; vertices.len() * dim];
    for (row, p) in values.chunks_mut(dim).zip(&uv) {
        let mut offset = 0;
        for m in maps {
            let x = p.x * m.width as f64 / iw;
            let y = p.y * m.height as f64 / ih;
            m.bilinear(x, y, &mut row[offset..offset + m.channels]);
            offset += m.channels;
        }
    }
    VertexFeatures::new(dim, values)
}

/// Weights of one graph convolution, `W0` for the vertex and `W1` for its neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphConvWeights {
    pub w0: WeightMatrix,
    pub w1: WeightMatrix,
}

impl GraphConvWeights {
    pub fn random(out_dim: usize, in_dim: usize, rng: &mut RandomStream) -> Result<Self> {
        Ok(Self {
            w0: WeightMatrix::random(out_dim, in_dim, rng)?,
            w1: WeightMatrix::random(out_dim, in_dim, rng)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w0.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w0.rows
    }

    fn check(&self) -> Result<()> {
        self.w1.expect_shape("graph convolution neighbor weights", self.w0.rows, self.w0.cols)
    }
}

/// `W0 f_i + Σ_{j∈N(i)} W1 f_j`, without the activation.
pub fn graph_conv_linear(
    features: &VertexFeatures,
    adjacency: &VertexAdjacency,
    weights: &GraphConvWeights,
) -> Result<VertexFeatures> {
    weights.check()?;
    if adjacency.vertex_count() != features.count() {
        return Err(Error::LengthMismatch {
            what: "adjacency vertex count",
            expected: features.count(),
            actual: adjacency.vertex_count(),
        });
    }
    let own = features.linear(&weights.w0)?;
    let nb = features.linear(&weights.w1)?;
    let d = own.dim;
    let mut values = own.values;
    for (i, out) in values.chunks_mut(d).enumerate() {
        for &j in adjacency.neighbors(i) {
            for (o, x) in out.iter_mut().zip(nb.row(j)) {
                *o += x;
            }
        }
    }
    VertexFeatures::new(d, values)
}

/// `ReLU(W0 f_i + Σ_{j∈N(i)} W1 f_j)`.
pub fn graph_conv(
    features: &VertexFeatures,
    adjacency: &VertexAdjacency,
    weights: &GraphConvWeights,
) -> Result<VertexFeatures> {
    Ok(graph_conv_linear(features, adjacency, weights)?.relu())
}

/// `v_i + tanh(W [f_i; v_i])`.
pub fn vertex_refine(vertices: &[DVec3], features: &VertexFeatures, w_vert: &WeightMatrix) -> Result<Vec<DVec3>> {
    w_vert.expect_shape("vertex update weights", 3, features.dim + 3)?;
    let input = VertexFeatures::concat(&[features, &VertexFeatures::from_positions(vertices)])?;
    displace(vertices, &input.linear(w_vert)?)
}

fn displace(vertices: &[DVec3], offsets: &VertexFeatures) -> Result<Vec<DVec3>> {
    if offsets.dim != 3 || offsets.count() != vertices.len() {
        return Err(Error::ShapeMismatch {
            what: "vertex offsets",
            expected: (vertices.len(), 3),
            actual: (offsets.count(), offsets.dim),
        });
    }
    Ok(vertices
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let o = offsets.row(i);
            v + DVec3::new(libm::tanh(o[0]), libm::tanh(o[1]), libm::tanh(o[2]))
        })
        .collect())
}

/// Two pre-activated graph convolutions with an additive skip connection,
/// projected by `skip` when the widths differ.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: GraphConvWeights,
    pub second: GraphConvWeights,
    pub skip: Option<WeightMatrix>,
}

impl ResidualBlock {
    fn forward(&self, x: &VertexFeatures, adj: &VertexAdjacency) -> Result<VertexFeatures> {
        let h = graph_conv_linear(&x.clone().relu(), adj, &self.first)?;
        let h = graph_conv_linear(&h.relu(), adj, &self.second)?;
        let shortcut = match &self.skip {
            Some(w) => x.linear(w)?,
            None => x.clone(),
        };
        if shortcut.dim != h.dim {
            return Err(Error::ShapeMismatch {
                what: "residual skip connection",
                expected: (h.dim, x.dim),
                actual: (shortcut.dim, x.dim),
            });
        }
        Ok(h.add(&shortcut))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStyle {
    /// Residual blocks, ending in a graph convolution to 3 outputs.
    Residual,
    /// Plain graph convolutions with the positions re-appended before each one,
    /// ending in a linear layer to 3 outputs.
    Light,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageWeights {
    Residual {
        blocks: Vec<ResidualBlock>,
        update: GraphConvWeights,
    },
    /// `update` takes `[f; v]` when it has `feature_dim + 3` columns and `f`
    /// alone when it has `feature_dim`.
    Light {
        convs: Vec<GraphConvWeights>,
        update: WeightMatrix,
    },
}

/// Weights and wiring of one refinement stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    /// Linear projection of the concatenated aligned features, if any.
    pub align_projection: Option<WeightMatrix>,
    pub weights: StageWeights,
    /// Split every face in four (averaging features onto midpoints) before aligning.
    pub subdivide_before: bool,
}

/// Layer sizes used to build a stage with random weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub style: StageStyle,
    /// Total channels over all feature maps.
    pub map_channels: usize,
    /// Width of the projection after alignment; `None` uses the aligned features directly.
    pub projection_dim: Option<usize>,
    /// Width of the incoming vertex features, 0 for the first stage.
    pub prev_feature_dim: usize,
    pub feature_dim: usize,
    /// Graph convolutions in the stage; must be even for the residual style.
    pub conv_count: usize,
    /// Whether the light-style update also sees vertex positions.
    pub update_uses_positions: bool,
    pub subdivide_before: bool,
}

impl StageShape {
    /// Width of the features entering the first graph convolution.
    pub fn input_dim(&self) -> usize {
        self.prev_feature_dim + 3 + self.projection_dim.unwrap_or(self.map_channels)
    }
}

impl StageConfig {
    /// Stage with weights uniform in `±1/sqrt(fan_in)`, drawn from one stream
    /// in [`StageConfig::named_matrices`] order.
    pub fn random(shape: &StageShape, seed: u64) -> Result<Self> {
        let mut rng = RandomStream::new(seed);
        if shape.conv_count == 0 || shape.feature_dim == 0 || shape.map_channels == 0 {
            return Err(Error::InvalidConfig("stage sizes must be positive".into()));
        }
        let align_projection = match shape.projection_dim {
            Some(d) => Some(WeightMatrix::random(d, shape.map_channels, &mut rng)?),
            None => None,
        };
        let d = shape.feature_dim;
        let weights = match shape.style {
            StageStyle::Residual => {
                if shape.conv_count % 2 != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "residual stage needs an even convolution count, got {}",
                        shape.conv_count
                    )));
                }
                let mut blocks = Vec::new();
                let mut in_dim = shape.input_dim();
                for _ in 0..shape.conv_count / 2 {
                    let first = GraphConvWeights::random(d, in_dim, &mut rng)?;
                    let second = GraphConvWeights::random(d, d, &mut rng)?;
                    let skip = if in_dim != d {
                        Some(WeightMatrix::random(d, in_dim, &mut rng)?)
                    } else {
                        None
                    };
                    blocks.push(ResidualBlock { first, second, skip });
                    in_dim = d;
                }
                let update = GraphConvWeights::random(3, d, &mut rng)?;
                StageWeights::Residual { blocks, update }
            }
            StageStyle::Light => {
                let mut convs = Vec::new();
                let mut in_dim = shape.input_dim();
                for _ in 0..shape.conv_count {
                    convs.push(GraphConvWeights::random(d, in_dim, &mut rng)?);
                    in_dim = d + 3;
                }
                let cols = if shape.update_uses_positions { d + 3 } else { d };
                let update = WeightMatrix::random(3, cols, &mut rng)?;
                StageWeights::Light { convs, update }
            }
        };
        Ok(Self {
            align_projection,
            weights,
            subdivide_before: shape.subdivide_before,
        })
    }

    pub fn style(&self) -> StageStyle {
        match self.weights {
            StageWeights::Residual { .. } => StageStyle::Residual,
            StageWeights::Light { .. } => StageStyle::Light,
        }
    }

    /// Width of the vertex features this stage outputs.
    pub fn feature_dim(&self) -> usize {
        match &self.weights {
            StageWeights::Residual { blocks, update } => blocks.last().map_or(update.in_dim(), |b| b.second.out_dim()),
            StageWeights::Light { convs, update } => convs.last().map_or(update.cols, |c| c.out_dim()),
        }
    }

    /// Every matrix with a stable name, in a fixed order.
    pub fn named_matrices(&self) -> Vec<(String, &WeightMatrix)> {
        let mut out: Vec<(String, &WeightMatrix)> = Vec::new();
        if let Some(w) = &self.align_projection {
            out.push(("align".into(), w));
        }
        match &self.weights {
            StageWeights::Residual { blocks, update } => {
                for (i, b) in blocks.iter().enumerate() {
                    out.push((format!("block{i}.first.w0"), &b.first.w0));
                    out.push((format!("block{i}.first.w1"), &b.first.w1));
                    out.push((format!("block{i}.second.w0"), &b.second.w0));
                    out.push((format!("block{i}.second.w1"), &b.second.w1));
                    if let Some(s) = &b.skip {
                        out.push((format!("block{i}.skip"), s));
                    }
                }
                out.push(("update.w0".into(), &update.w0));
                out.push(("update.w1".into(), &update.w1));
            }
            StageWeights::Light { convs, update } => {
                for (i, c) in convs.iter().enumerate() {
                    out.push((format!("conv{i}.w0"), &c.w0));
                    out.push((format!("conv{i}.w1"), &c.w1));
                }
                out.push(("update".into(), update));
            }
        }
        out
    }

    /// Rebuilds a stage from matrices named as in [`StageConfig::named_matrices`].
    pub fn from_named<'a>(
        style: StageStyle,
        subdivide_before: bool,
        mut lookup: impl FnMut(&str) -> Option<&'a WeightMatrix>,
    ) -> Result<Self> {
        let mut take = |name: &str| {
            lookup(name)
                .cloned()
                .ok_or_else(|| Error::InvalidConfig(format!("missing weight matrix {name:?}")))
        };
        let align_projection = take("align").ok();
        let weights = match style {
            StageStyle::Residual => {
                let mut blocks = Vec::new();
                while let Ok(w0) = take(&format!("block{}.first.w0", blocks.len())) {
                    let i = blocks.len();
                    let first = GraphConvWeights {
                        w0,
                        w1: take(&format!("block{i}.first.w1"))?,
                    };
                    let second = GraphConvWeights {
                        w0: take(&format!("block{i}.second.w0"))?,
                        w1: take(&format!("block{i}.second.w1"))?,
                    };
                    let skip = take(&format!("block{i}.skip")).ok();
                    blocks.push(ResidualBlock { first, second, skip });
                }
                let update = GraphConvWeights {
                    w0: take("update.w0")?,
                    w1: take("update.w1")?,
                };
                StageWeights::Residual { blocks, update }
            }
            StageStyle::Light => {
                let mut convs = Vec::new();
                while let Ok(w0) = take(&format!("conv{}.w0", convs.len())) {
                    let w1 = take(&format!("conv{}.w1", convs.len()))?;
                    convs.push(GraphConvWeights { w0, w1 });
                }
                StageWeights::Light {
                    convs,
                    update: take("update")?,
                }
            }
        };
        if let StageWeights::Residual { blocks, .. } = &weights {
            if blocks.is_empty() {
                return Err(Error::InvalidConfig("residual stage has no blocks".into()));
            }
        }
        if let StageWeights::Light { convs, .. } = &weights {
            if convs.is_empty() {
                return Err(Error::InvalidConfig("light stage has no graph convolutions".into()));
            }
        }
        Ok(Self {
            align_projection,
            weights,
            subdivide_before,
        })
    }
}

/// Output of one refinement stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub mesh: TriangleMesh,
    pub features: VertexFeatures,
}

/// Runs one stage: optional subdivision, alignment, projection, graph
/// convolutions and the final `tanh` vertex update.
pub fn refinement_stage(
    mesh: &TriangleMesh,
    prev_features: Option<&VertexFeatures>,
    maps: &[FeatureMap],
    camera: &CameraIntrinsics,
    image_size: (f64, f64),
    cfg: &StageConfig,
) -> Result<StageOutput> {
    let (mesh, prev) = if cfg.subdivide_before {
        let sub = subdivide_faces(mesh);
        let prev = prev_features.map(|f| subdivide_features(mesh, f)).transpose()?;
        (sub, prev)
    } else {
        (mesh.clone(), prev_features.cloned())
    };
    if let Some(p) = &prev {
        if p.count() != mesh.vertex_count() {
            return Err(Error::LengthMismatch {
                what: "previous vertex features",
                expected: mesh.vertex_count(),
                actual: p.count(),
            });
        }
    }
    let vertices = mesh.vertices();
    let mut aligned = vert_align(maps, camera, image_size, vertices)?;
    if let Some(w) = &cfg.align_projection {
        aligned = aligned.linear(w)?;
    }
    let positions = VertexFeatures::from_positions(vertices);
    let mut input_parts: Vec<&VertexFeatures> = Vec::new();
    if let Some(p) = &prev {
        input_parts.push(p);
    }
    input_parts.push(&positions);
    input_parts.push(&aligned);
    let input = VertexFeatures::concat(&input_parts)?;
    let adj = VertexAdjacency::from_mesh(&mesh);

    let (features, offsets) = match &cfg.weights {
        StageWeights::Residual { blocks, update } => {
            let mut x = input;
            for b in blocks {
                x = b.forward(&x, &adj)?;
            }
            let offsets = graph_conv_linear(&x, &adj, update)?;
            (x, offsets)
        }
        StageWeights::Light { convs, update } => {
            let mut x = graph_conv(&input, &adj, &convs[0])?;
            for c in &convs[1..] {
                x = graph_conv(&VertexFeatures::concat(&[&positions, &x])?, &adj, c)?;
            }
            let offsets = if update.cols == x.dim + 3 {
                VertexFeatures::concat(&[&x, &positions])?.linear(update)?
            } else {
                x.linear(update)?
            };
            (x, offsets)
        }
    };
    let moved = displace(vertices, &offsets)?;
    Ok(StageOutput {
        mesh: mesh.with_vertices(moved)?,
        features,
    })
}

/// Chains stages, threading vertex features; returns every stage's mesh.
pub fn refine_mesh(
    initial: &TriangleMesh,
    maps: &[FeatureMap],
    camera: &CameraIntrinsics,
    image_size: (f64, f64),
    stages: &[StageConfig],
) -> Result<Vec<TriangleMesh>> {
    if stages.is_empty() {
        return Err(Error::InvalidConfig("refinement needs at least one stage".into()));
    }
    let mut meshes = Vec::with_capacity(stages.len());
    let mut current = initial.clone();
    let mut features: Option<VertexFeatures> = None;
    for cfg in stages {
        let out = refinement_stage(&current, features.as_ref(), maps, camera, image_size, cfg)?;
        current = out.mesh;
        features = Some(out.features);
        meshes.push(current.clone());
    }
    Ok(meshes)
}

/// Splits every face into four through its edge midpoints.
///
/// Midpoint vertices are appended after the original vertices in sorted edge
/// order. Face `(a, b, c)` becomes `(a, ab, ca)`, `(ab, b, bc)`, `(ca, bc, c)`
/// and `(ab, bc, ca)`.
pub fn subdivide_faces(mesh: &TriangleMesh) -> TriangleMesh {
    let edges = mesh_edges(mesh);
    let v = mesh.vertices();
    let base = v.len();
    let mut vertices = v.to_vec();
    vertices.extend(edges.iter().map(|&[a, b]| (v[a] + v[b]) * 0.5));
    let mid = |a: usize, b: usize| {
        let key = [a.min(b), a.max(b)];
        base + edges.binary_search(&key).expect("face edge is in the edge list")
    };
    let mut faces = Vec::with_capacity(mesh.face_count() * 4);
    for &[a, b, c] in mesh.faces() {
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        faces.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    TriangleMesh::from_parts_unchecked(vertices, faces)
}

/// Extends per-vertex features onto the midpoints added by [`subdivide_faces`].
pub fn subdivide_features(mesh: &TriangleMesh, features: &VertexFeatures) -> Result<VertexFeatures> {
    if features.count() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "vertex features",
            expected: mesh.vertex_count(),
            actual: features.count(),
        });
    }
    let mut values = features.values.clone();
    for [a, b] in mesh_edges(mesh) {
        values.extend(features.row(a).iter().zip(features.row(b)).map(|(x, y)| 0.5 * (x + y)));
    }
    VertexFeatures::new(features.dim, values)
}

/// Unit-radius icosphere: a regular icosahedron subdivided `level` times with
/// every vertex pushed onto the sphere after each subdivision.
pub fn make_icosphere(level: u32) -> TriangleMesh {
    let t = (1.0 + libm::sqrt(5.0)) / 2.0;
    let raw = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ];
    let vertices = raw.iter().map(|&(x, y, z)| DVec3::new(x, y, z).normalize()).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let mut mesh = TriangleMesh::from_parts_unchecked(vertices, faces);
    for _ in 0..level {
        let (v, f) = subdivide_faces(&mesh).into_parts();
        mesh = TriangleMesh::from_parts_unchecked(v.into_iter().map(|p| p.normalize()).collect(), f);
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    /// 2 channels, 2x3 map; sample (y, x) holds (10y + x, -x).
    fn small_map() -> FeatureMap {
        let mut values = vec![];
        for y in 0..2 {
            for x in 0..3 {
                values.extend([(10 * y + x) as f64, -(x as f64)]);
            }
        }
        FeatureMap::new(2, 2, 3, values).unwrap()
    }

    #[test]
    fn bilinear_nodes_midpoints_and_border() {
        let m = small_map();
        let mut out = [0.0; 2];
        m.bilinear(2.0, 1.0, &mut out);
        assert_eq!(out, [12.0, -2.0]);
        m.bilinear(0.5, 0.0, &mut out);
        assert_eq!(out, [0.5, -0.5]);
        m.bilinear(-4.0, 7.0, &mut out);
        assert_eq!(out, [10.0, 0.0]);
    }

    #[test]
    fn vert_align_scales_pixels_to_map() {
        // image 6x4 pixels onto the 3x2 map: pixel (4, 2) is sample (x=2, y=1)
        let m = small_map();
        let v = [DVec3::new(4.0, 2.0, 1.0), DVec3::new(2.0, 0.0, 2.0)];
        let f = vert_align(&[m.clone(), m], &camera(), (6.0, 4.0), &v).unwrap();
        assert_eq!(f.dim(), 4);
        assert_eq!(f.row(0), &[12.0, -2.0, 12.0, -2.0]);
        // (2,0,2) projects to pixel (1,0), map (0.5, 0)
        assert_eq!(f.row(1), &[0.5, -0.5, 0.5, -0.5]);
        assert!(vert_align(&[small_map()], &camera(), (6.0, 4.0), &[DVec3::X]).is_err());
    }

    #[test]
    fn graph_conv_identity_and_zero() {
        let mesh = make_icosphere(0);
        let adj = VertexAdjacency::from_mesh(&mesh);
        let f = VertexFeatures::from_positions(mesh.vertices()).relu();
        let id = GraphConvWeights {
            w0: WeightMatrix::identity(3).unwrap(),
            w1: WeightMatrix::zeros(3, 3).unwrap(),
        };
        assert_eq!(graph_conv(&f, &adj, &id).unwrap(), f);
        let zero = GraphConvWeights {
            w0: WeightMatrix::zeros(2, 3).unwrap(),
            w1: WeightMatrix::zeros(2, 3).unwrap(),
        };
        let out = graph_conv(&f, &adj, &zero).unwrap();
        assert_eq!(out.dim(), 2);
        assert!(out.values().iter().all(|&x| x == 0.0));
        let bad = GraphConvWeights {
            w0: WeightMatrix::zeros(2, 4).unwrap(),
            w1: WeightMatrix::zeros(2, 4).unwrap(),
        };
        assert!(graph_conv(&f, &adj, &bad).is_err());
    }

    #[test]
    fn graph_conv_on_path() {
        // path 0-1-2, features are scalars pairs
        let adj = VertexAdjacency::from_edges(3, &[[0, 1], [1, 2]]);
        let f = VertexFeatures::new(2, vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0]).unwrap();
        let w = GraphConvWeights {
            w0: WeightMatrix::new(2, 2, vec![1.0, 0.0, 0.5, -1.0]).unwrap(),
            w1: WeightMatrix::new(2, 2, vec![0.0, 1.0, 2.0, 0.0]).unwrap(),
        };
        let out = graph_conv(&f, &adj, &w).unwrap();
        // vertex 0: W0 f0 = (1, -1.5); W1 f1 = (0.5, -2) -> (1.5, -3.5) -> (1.5, 0)
        // vertex 1: W0 f1 = (-1, -1); W1 f0 + W1 f2 = (2, 2) + (-2, 6) -> (-1, 7) -> (0, 7)
        // vertex 2: W0 f2 = (3, 3.5); W1 f1 = (0.5, -2) -> (3.5, 1.5)
        assert_eq!(out.values(), &[1.5, 0.0, 0.0, 7.0, 3.5, 1.5]);
    }

    #[test]
    fn isolated_vertex_uses_own_term() {
        let adj = VertexAdjacency::from_edges(2, &[]);
        let f = VertexFeatures::new(1, vec![2.0, 3.0]).unwrap();
        let w = GraphConvWeights {
            w0: WeightMatrix::new(1, 1, vec![2.0]).unwrap(),
            w1: WeightMatrix::new(1, 1, vec![100.0]).unwrap(),
        };
        assert_eq!(graph_conv(&f, &adj, &w).unwrap().values(), &[4.0, 6.0]);
    }

    #[test]
    fn vertex_refine_formula() {
        let v = [DVec3::new(1.0, 2.0, 3.0)];
        let f = VertexFeatures::new(1, vec![0.5]).unwrap();
        let zero = WeightMatrix::zeros(3, 4).unwrap();
        assert_eq!(vertex_refine(&v, &f, &zero).unwrap(), v.to_vec());
        // rows pick f, x and -(z - y)
        let w = WeightMatrix::new(3, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]).unwrap();
        let out = vertex_refine(&v, &f, &w).unwrap()[0];
        assert!((out.x - (1.0 + libm::tanh(0.5))).abs() < 1e-15);
        assert!((out.y - (2.0 + libm::tanh(1.0))).abs() < 1e-15);
        assert!((out.z - (3.0 + libm::tanh(-1.0))).abs() < 1e-15);
        assert!(vertex_refine(&v, &f, &WeightMatrix::zeros(3, 3).unwrap()).is_err());
    }

    #[test]
    fn icosphere_counts() {
        for (level, v, e, f) in [(0, 12, 30, 20), (1, 42, 120, 80), (2, 162, 480, 320), (4, 2562, 7680, 5120)] {
            let m = make_icosphere(level);
            assert_eq!((m.vertex_count(), mesh_edges(&m).len(), m.face_count()), (v, e, f));
            assert_eq!(m.euler_characteristic(), 2);
            assert!(m.is_watertight());
            assert!(m.vertices().iter().all(|p| (p.length() - 1.0).abs() < 1e-9));
            // outward winding
            assert!((0..m.face_count()).all(|i| {
                let [a, b, c] = m.face_vertices(i);
                m.face_cross(i).dot(a + b + c) > 0.0
            }));
        }
    }

    #[test]
    fn subdivision_counts_and_features() {
        let ico = make_icosphere(0);
        let sub = subdivide_faces(&ico);
        assert_eq!((sub.vertex_count(), sub.face_count()), (42, 80));
        assert!(sub.is_watertight());
        let f = VertexFeatures::from_positions(ico.vertices());
        let fs = subdivide_features(&ico, &f).unwrap();
        assert_eq!(fs, VertexFeatures::from_positions(sub.vertices()));
    }

    fn shape(style: StageStyle, prev: usize) -> StageShape {
        StageShape {
            style,
            map_channels: 4,
            projection_dim: Some(5),
            prev_feature_dim: prev,
            feature_dim: 6,
            conv_count: if style == StageStyle::Residual { 4 } else { 3 },
            update_uses_positions: true,
            subdivide_before: false,
        }
    }

    fn scene() -> (TriangleMesh, Vec<FeatureMap>) {
        let mesh = make_icosphere(1).translated(DVec3::new(0.0, 0.0, 3.0));
        let mut rng = RandomStream::new(11);
        let vals = (0..4 * 5 * 7).map(|_| rng.next_f64()).collect();
        (mesh, vec![FeatureMap::new(4, 5, 7, vals).unwrap()])
    }

    #[test]
    fn stages_keep_topology_and_width() {
        let (mesh, maps) = scene();
        let k = CameraIntrinsics::new(2.0, 2.0, 0.5, 0.5).unwrap();
        for style in [StageStyle::Residual, StageStyle::Light] {
            let stages = [
                StageConfig::random(&shape(style, 0), 1).unwrap(),
                StageConfig::random(&shape(style, 6), 2).unwrap(),
            ];
            let out = refine_mesh(&mesh, &maps, &k, (1.0, 1.0), &stages).unwrap();
            assert_eq!(out.len(), 2);
            for m in &out {
                assert_eq!(m.faces(), mesh.faces());
                let moved = m.vertices().iter().zip(mesh.vertices());
                assert!(moved.clone().all(|(a, b)| (*a - *b).abs().max_element() < 2.0));
            }
            let one = refinement_stage(&mesh, None, &maps, &k, (1.0, 1.0), &stages[0]).unwrap();
            assert_eq!(one.features.dim(), 6);
            assert_eq!(stages[0].feature_dim(), 6);
        }
    }

    #[test]
    fn zero_update_keeps_mesh() {
        let (mesh, maps) = scene();
        let stages: Vec<StageConfig> = [0, 6, 6]
            .iter()
            .map(|&prev| {
                let mut cfg = StageConfig::random(&shape(StageStyle::Light, prev), 3).unwrap();
                if let StageWeights::Light { update, .. } = &mut cfg.weights {
                    *update = WeightMatrix::zeros(3, 9).unwrap();
                }
                cfg
            })
            .collect();
        let out = refine_mesh(&mesh, &maps, &camera(), (1.0, 1.0), &stages).unwrap();
        assert!(out.iter().all(|m| *m == mesh));
    }

    #[test]
    fn subdivide_before_alignment() {
        let (mesh, maps) = scene();
        let mut s = shape(StageStyle::Light, 0);
        let first = StageConfig::random(&s, 4).unwrap();
        s.prev_feature_dim = 6;
        s.subdivide_before = true;
        let second = StageConfig::random(&s, 5).unwrap();
        let out = refine_mesh(&mesh, &maps, &camera(), (1.0, 1.0), &[first, second]).unwrap();
        assert_eq!(out[0].vertex_count(), 42);
        assert_eq!(out[1].vertex_count(), 162);
    }

    #[test]
    fn named_matrices_round_trip() {
        for style in [StageStyle::Residual, StageStyle::Light] {
            let cfg = StageConfig::random(&shape(style, 0), 9).unwrap();
            let named: Vec<(String, WeightMatrix)> =
                cfg.named_matrices().into_iter().map(|(n, w)| (n, w.clone())).collect();
            let back = StageConfig::from_named(style, false, |name| {
                named.iter().find(|(n, _)| n == name).map(|(_, w)| w)
            })
            .unwrap();
            assert_eq!(back, cfg);
        }
        assert!(StageConfig::random(&StageShape { conv_count: 3, ..shape(StageStyle::Residual, 0) }, 0).is_err());
    }
}
