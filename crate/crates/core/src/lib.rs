//! Reconstruction of the inner-retinal capillary network from OCTA volumes
//! and measurement of the foveal avascular zone in 2D (per plexus) and 3D.
//!
//! The pipeline runs in a fixed order: resample the volume to isotropic
//! voxels, regularize the layer surfaces, flatten on the RPE, smooth,
//! derive plexus boundaries, segment each plexus en face in 2D, push the
//! 2D skeletons to their axial positions, inflate them into a 3D network,
//! and extract the avascular zone from both the 2D masks and the merged
//! network. [`faz::measure`] drives the whole chain for one scan;
//! [`phantom::generate_phantom`] builds synthetic scans with closed-form
//! ground truth for end-to-end verification.

pub mod config;
pub mod error;
pub mod faz;
pub mod grid;
pub mod morph;
pub mod phantom;
pub mod preprocess;
pub mod reconstruct3d;
pub mod vessel2d;
pub mod volume_io;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use faz::{measure, FazRegion2D, FazRegion3D, MeasureOutput};
pub use grid::{BinaryImage, BinaryVolume, Image, Plexus, ScalarImage, Volume};
pub use phantom::{generate_phantom, GroundTruth, NetworkSpec, PhantomSpec};
pub use volume_io::{
    load_scan, save_scan, EnFaceImage, FazMeasurement, GroupLabel, OctaVolume, Scan, SurfaceSet,
};
