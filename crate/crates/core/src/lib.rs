//! Deterministic pointer-meter reading toolkit.
//!
//! The crate covers everything downstream of the neural networks in a
//! detect → align → read pipeline:
//!
//! 1. **image** – raster types ([`ImageBuffer`], [`ScoreMap`], [`BinaryMask`]) and PNG/NetPBM I/O.
//! 2. **geometry** – homographies, four-point DLT, ground-truth correspondence
//!    constructions for elliptical and rectangular dials, corner-offset parameterization.
//! 3. **warp** – inverse-mapping bilinear resampling through a homography.
//! 4. **postproc** – thresholding, Zhang–Suen thinning, Hough line voting, blob centroids.
//! 5. **reading** – the angle method turning pointer and scale geometry into a value.
//! 6. **losses** / **ctc** – training objectives with analytic gradients, CTC loss and decoding.
//! 7. **metrics** – average relative / reference error and mask IoU.
//! 8. **synthmeter** – a seeded synthetic meter renderer used as ground truth.
//! 9. **pipeline** – end-to-end composition and batch reports; **cli** wraps it.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ctc;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod postproc;
pub mod reading;
pub mod synthmeter;
pub mod warp;

pub use crate::image::{BinaryMask, ImageBuffer, ImageError, Point2, ScoreMap};
pub use geometry::{Correspondence, GeometryError, Homography, QuadOffsets};
pub use reading::{DialFrame, ReadingResult};
