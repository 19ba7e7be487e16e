//! Energy, rate and quality benchmarking for video codecs.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod curve;
pub mod energy;
pub mod power;
pub mod quality;
pub mod bench;
