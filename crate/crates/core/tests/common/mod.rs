#![allow(dead_code)]

pub mod classic;
pub mod fixtures;
pub mod quadrature;

use tmle_core::data::{Bounds, Dataset, NuisanceFits};

/// Tiny deterministic dataset with hand-picked nuisances, n = 8.
pub fn small_case() -> (Dataset, NuisanceFits) {
    let w = vec![0.2, -0.7, 1.1, 0.4, -0.3, 0.9, -1.4, 0.05];
    let a = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
    let y = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    let data = Dataset::new(w, 1, &a, &y, None).unwrap();
    let fits = NuisanceFits::new(
        vec![0.35, 0.30, 0.55, 0.40, 0.45, 0.50, 0.25, 0.38],
        vec![0.62, 0.48, 0.70, 0.58, 0.51, 0.66, 0.44, 0.57],
        vec![0.55, 0.35, 0.70, 0.60, 0.40, 0.65, 0.30, 0.50],
        Bounds::default_q(),
        Bounds::default_g(),
    )
    .unwrap();
    (data, fits)
}
