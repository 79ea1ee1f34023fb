use crate::dataset::Points;

/// A ten-row 2D reference table, rows t1..t10.
pub(crate) fn example_two() -> Points {
    Points::from_rows(&[
        [0.61, 0.58],
        [0.32, 0.77],
        [0.79, 0.41],
        [0.13, 0.9],
        [0.74, 0.44],
        [0.55, 0.64],
        [0.18, 0.85],
        [0.93, 0.12],
        [0.38, 0.71],
        [0.05, 0.92],
    ])
    .unwrap()
}

/// Its reference 2-vicinity radii, kept to three decimals by truncation.
pub(crate) const EXAMPLE_TWO_RADII: [f64; 10] =
    [0.191, 0.161, 0.247, 0.082, 0.191, 0.183, 0.147, 0.372, 0.183, 0.147];
