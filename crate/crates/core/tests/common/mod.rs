//! Shared fixtures for the integration tests.
#![allow(dead_code)]

/// 20 linearly separable points in the plane.
pub fn separable_20() -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = [
        [0.7, -1.14], [-0.76, 1.2], [1.98, -1.43], [-1.69, -1.28], [-0.56, -1.32],
        [0.36, 0.47], [-1.58, 0.26], [-1.98, -0.14], [1.9, 1.2], [0.39, -0.7],
        [-1.17, -0.23], [-0.89, 1.5], [-1.15, -0.9], [1.23, -0.93], [-0.13, -0.94],
        [1.56, -0.85], [1.1, -0.05], [-0.13, 1.86], [1.59, -1.68], [1.62, 0.22],
    ];
    let y = [
        1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0,
        -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0,
    ];
    (x.iter().map(|r| r.to_vec()).collect(), y.to_vec())
}

/// Optimal objectives on [`separable_20`] from an interior-point solver:
/// `(C, svm, lasso)`.
pub const SEPARABLE_20_OPTIMA: [(f64, f64, f64); 2] = [
    (1.0, 2.429060820616283, 5.447086446554809),
    (10.0, 3.8932024545775166, 11.752645710688839),
];

/// 20 points with 6 features, labels driven by the first two.
pub fn sparse_20() -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = [
        [0.0, 0.3, -0.27, -0.89, -0.45, -0.99],
        [0.06, 1.34, -0.49, -0.62, 0.49, 0.36],
        [0.11, -0.93, -0.03, 0.7, -1.34, -0.46],
        [-1.9, -1.29, -1.84, -0.24, -1.27, 0.27],
        [0.16, -0.19, -2.52, -0.54, -0.05, 0.11],
        [-1.53, -0.48, -0.98, -0.81, 1.06, -0.81],
        [-0.03, 0.88, -0.58, -0.11, 0.11, 0.06],
        [-1.23, 0.08, 1.36, -1.55, 0.86, 0.12],
        [-0.64, 2.0, 0.76, -1.2, 0.07, 0.58],
        [-0.19, 0.68, -0.07, 0.67, 1.44, -0.68],
        [0.2, -0.46, 0.13, -1.19, -0.58, -0.2],
        [0.9, 1.15, -1.32, -0.79, 0.65, -1.99],
        [-0.46, -0.1, 1.26, 0.69, -0.33, -0.37],
        [-0.25, 1.52, -0.43, -0.3, 0.35, -0.12],
        [-0.2, -1.11, -0.01, -0.44, 1.17, 0.65],
        [-0.02, 0.67, -0.34, 1.05, -0.01, 0.58],
        [-1.29, 0.35, -1.69, -2.04, -0.3, -0.9],
        [0.16, 2.24, -0.83, -0.62, 0.21, 0.49],
        [-0.18, -0.21, 0.7, 0.52, -1.03, -0.08],
        [0.04, -1.05, 0.26, -0.86, 0.97, 0.19],
    ];
    let y = [
        1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0,
        -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, -1.0,
    ];
    (x.iter().map(|r| r.to_vec()).collect(), y.to_vec())
}

pub const SPARSE_C_GRID: [f64; 7] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0];

/// Minimizes a convex function of `(w1, w2, b)` by coarse-to-fine grid
/// search; returns the smallest value found.
pub fn grid_minimum(f: impl Fn(&[f64], f64) -> f64, half_width: f64) -> f64 {
    let mut center = [0.0f64; 3];
    let mut width = half_width;
    let mut best = f(&center[..2], center[2]);
    let steps = 20;
    for _ in 0..40 {
        let mut next = center;
        for i in -steps..=steps {
            for j in -steps..=steps {
                for k in -steps..=steps {
                    let h = width / steps as f64;
                    let p = [center[0] + i as f64 * h, center[1] + j as f64 * h, center[2] + k as f64 * h];
                    let v = f(&p[..2], p[2]);
                    if v < best {
                        best = v;
                        next = p;
                    }
                }
            }
        }
        center = next;
        width *= 0.5;
    }
    best
}
