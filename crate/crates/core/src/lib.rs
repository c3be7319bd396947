//! Multi-spectral 3D Gaussian splatting.
//!
//! One Gaussian scene is shared by every spectral band; each primitive
//! carries a small feature vector that a shared MLP decodes, together with
//! the view direction, into all band channels at once.

pub mod color;
pub mod densify;
pub mod error;
pub mod image;
pub mod io;
pub mod knn;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod raster;
pub mod registration;
pub mod scene;
pub mod ssim;
pub mod train;
pub mod vi;

pub use color::{direction_to_spherical, ColorDecoder, ColorModel, DecoderShape};
pub use error::{Error, Result};
pub use image::Image;
pub use io::{Checkpoint, Dataset};
pub use model::SplatModel;
pub use train::{train, TrainConfig, Trainer};
pub use raster::{render_view, BlendSettings, Camera};
pub use scene::{
    covariance_of, init_from_points, payload_floats_per_primitive, BandDesc, CameraView, ColorModelKind,
    GaussianCloud, Intrinsics, Pose, SparsePoints, SpectralBandSet,
};
