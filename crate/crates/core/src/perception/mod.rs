//! Point-cloud conditioning: farthest point sampling, the cloud encoder and
//! min/max normalisation.

pub mod encoder;
pub mod fps;
pub mod normalize;

pub use encoder::{encode_cloud, CloudEncoder, EncoderCache, VISUAL_DIM};
pub use fps::{fps, PointCloud};
pub use normalize::{denormalize, normalize, Normalizer};
