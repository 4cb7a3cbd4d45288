//! Shared inputs for the kernel benchmarks.

use transgc_core::{build_ar_blocks, CovarianceMatrix};

/// The desk-scale mixed-AR LD used throughout the benches (p = 2000).
pub fn desk_ld() -> CovarianceMatrix {
    build_ar_blocks(
        &[200, 250, 280, 300, 320, 300, 350],
        &[0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
    )
    .expect("valid AR spec")
}
