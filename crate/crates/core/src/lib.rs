//! Document image signatures and the evaluation protocols built on them.
//!
//! Two signature families are provided:
//!
//! * run-length histograms ([`runlength`]) computed on the binarized page,
//!   pooled over a spatial pyramid;
//! * Fisher vectors ([`fisher`]) over dense SIFT descriptors ([`densefeat`])
//!   against a diagonal-covariance Gaussian mixture ([`models`]).
//!
//! Signatures are compared with dot products. [`classifiers`] holds k-NN,
//! nearest class mean (optionally with a learned metric) and one-vs-all
//! linear SVMs; [`retrieval`] computes MAP and precision at k and fuses
//! similarity matrices; [`patent`] ranks sets of images. [`store`] persists
//! manifests, signatures and models.

pub mod classifiers;
pub mod densefeat;
pub mod error;
pub mod feature;
pub mod fisher;
pub mod imgproc;
pub mod models;
pub mod patent;
pub mod retrieval;
pub mod runlength;
pub mod store;

pub use error::{Error, Result};
pub use feature::{FeatureKind, FeatureVector};
pub use imgproc::{BinaryImage, GrayImage, Raster};
