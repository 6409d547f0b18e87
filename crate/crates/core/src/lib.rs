//! Event-camera monocular depth toolkit.
//!
//! Event ingestion and SBT/SBN slicing, the voxel-grid, image-like and
//! Tencode stack encoders, affine-invariant losses with analytic gradients,
//! depth metrics, a forward-only recurrent multi-scale fusion reference, an
//! ideal event simulator, and distillation dataset building.

pub mod archive;
pub mod bench;
pub mod distill;
pub mod error;
pub mod event;
pub mod event_io;
pub mod fusion;
pub mod metrics;
pub mod raster;
pub mod repr;
pub mod sim;
pub mod supervision;

pub use error::{Error, ErrorKind, Result};
pub use event::{Event, EventSlice, EventStream, Polarity, SliceSpec, Timestamp};
pub use event_io::{read_events, write_events, EventFormat};
pub use raster::{DepthMap, ValidMask};
pub use repr::{encode_image_like, encode_tencode, encode_voxel, EventStack, Layout};
