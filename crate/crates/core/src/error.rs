use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} references the same vertex more than once")]
    RepeatedFaceVertex { face: usize },
    #[error("point {index} has non-positive depth z = {z}")]
    NonPositiveDepth { index: usize, z: f64 },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} is out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("mesh has no edges")]
    NoEdges,
    #[error("every face of the mesh has zero area")]
    DegenerateSurface,
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("point samples carry no face provenance")]
    MissingProvenance,
    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("normal {index} is not unit length (|n| = {length})")]
    NonUnitNormal { index: usize, length: f64 },
    #[error("voxel grid dimensions differ: {expected:?} vs {actual:?}")]
    DimMismatch {
        expected: [usize; 4],
        actual: [usize; 4],
    },
    #[error("target voxel {index} is not binary: {value}")]
    NonBinaryTarget { index: usize, value: f32 },
    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("unknown category label {0:?}")]
    UnknownCategory(String),
    #[error("ground-truth bounding box has zero extent")]
    DegenerateBoundingBox,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
