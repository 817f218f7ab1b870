// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod error;
pub mod field;
pub mod geometry;
pub mod wave;
pub mod semilinear;
pub mod measurement;
pub mod control;
pub mod cgo;
pub mod inversion;
pub mod config;
pub mod pipelines;
pub mod suite;
