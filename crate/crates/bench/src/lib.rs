//! Shared model fixtures for the benchmarks in `benches/`.

use specbulk_core::{ModelParams, ModelSpec};

/// The three-class Toeplitz model (n = 32 at p = 256) scaled to dimension `p`, a multiple of 64.
pub fn three_class(p: usize) -> ModelParams {
    ModelSpec::three_class_toeplitz(256)
        .with_dimension(p)
        .and_then(|spec| spec.build())
        .expect("three-class model scales to multiples of 64")
}

pub fn marchenko_pastur(p: usize, n: usize) -> ModelParams {
    ModelSpec::marchenko_pastur(p, n)
        .build()
        .expect("valid MP model")
}
