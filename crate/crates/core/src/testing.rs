//! Strategies and statistics shared by the unit tests.

use proptest::prelude::*;

use crate::linalg::Mat2;
use crate::lq_core::ModelParams;

/// Scalar asset-liability model over the closed-form test ranges.
pub fn alm_params() -> impl Strategy<Value = ModelParams> {
    (0.8..1.5f64, 0.05..0.5f64, 0.05..0.5f64, 0.8..1.5f64, 0.0..0.3f64, -0.9..0.9f64, 0.01..1.0f64)
        .prop_map(|(a, b, d, ab, cb, rho, lambda)| ModelParams::alm(a, b, d, ab, cb, rho, lambda).unwrap())
}

/// Scalar model with a state-dependent wealth noise `C`.
pub fn scalar_params() -> impl Strategy<Value = ModelParams> {
    (alm_params(), 0.0..0.3f64).prop_map(|(mut p, c)| {
        p.c = c;
        p
    })
}

/// One or two controls and a random positive definite terminal weight.
pub fn general_params() -> impl Strategy<Value = ModelParams> {
    (
        scalar_params(),
        prop::bool::ANY,
        0.05..0.5f64,
        0.05..0.5f64,
        (0.2..2.0f64, -0.9..0.9f64, 0.2..2.0f64),
    )
        .prop_map(|(p, two, b2, d2, (q11, corr, q22))| {
            let (b, d) = if two {
                (vec![p.b1(), b2], vec![p.d1(), -d2])
            } else {
                (p.b.clone(), p.d.clone())
            };
            let q = Mat2::symmetric(q11, corr * (q11 * q22).sqrt(), q22);
            ModelParams::new(p.a, b, p.c, d, p.a_bar, p.c_bar, p.rho, p.lambda, q).unwrap()
        })
}

/// Sample mean and its standard error.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `|a - b| <= tol * max(|a|, |b|, floor)`.
pub fn close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}
