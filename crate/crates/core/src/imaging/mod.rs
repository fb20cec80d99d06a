//! Grids, images, masks, preprocessing and the on-disk bundle format.

pub mod bundle;
pub mod grid;
pub mod image;
pub mod io;
pub mod mask;
pub mod preprocess;
pub mod warp;

pub use bundle::SubjectBundle;
pub use grid::ImageGrid;
pub use image::ScalarImage;
pub use mask::{Label, LabelMask, Region};
pub use preprocess::{
    histogram_equalize, preprocess_bundle, temporal_reduce, Equalized, GateStack, DEFAULT_BINS,
};
pub use warp::warp_mask;
