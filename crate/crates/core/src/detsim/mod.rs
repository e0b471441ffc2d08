//! Toy LArTPC simulation: topology generator, drift-dependent diffusion,
//! voxelisation, dual-view pixel-map rendering and dataset IO.

mod dataset;
mod diffusion;
mod generator;
mod geometry;
mod render;

use std::path::Path;

pub use dataset::{
    assign_classes, calibrate, class_counts, decode_image, encode_image, generate_dataset, image_file_name,
    load_entry, read_dataset, read_manifest, simulate_event, write_dataset, DatasetEntry, DatasetWriter,
    GenerationSpec, ManifestRecord, ManifestSummary, IMAGE_MAGIC, IMAGE_VERSION, MANIFEST_FILE,
};
pub use diffusion::{axis_weights, smear_and_voxelize, splat_deposit, DiffusionModel, VoxelGrid, SPLAT_TRUNCATION_SIGMAS};
pub use generator::{event_seed, sample_event, EnergyDeposit, Event, GeneratorConfig};
pub use geometry::DetectorGeometry;
pub use render::{percentile_scale, project_views, render_views, Normalization, PixelMap, RawView, View};

#[derive(Debug, thiserror::Error)]
pub enum DetsimError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("x = {x} m lies outside the detector (|x| <= {half_extent} m)")]
    OutsideDetector { x: f64, half_extent: f64 },
    #[error("deposit at {position:?} lies outside the detector")]
    DepositOutside { position: [f64; 3] },
    #[error("invalid generator settings: {0}")]
    Generator(String),
    #[error("cannot render an empty voxel grid")]
    EmptyGrid,
    #[error("normalisation: {0}")]
    Normalization(String),
    #[error("{file}: format error at offset {offset}: {reason}")]
    Format { file: String, offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DetsimError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
