#![allow(dead_code)]

use explq::market::{discretize, AnnualMarket};
use explq::ModelParams;
use rand::Rng;

/// Scalar model with the closed-form test ranges; `with_c` also draws `C`.
pub fn random_params<R: Rng>(rng: &mut R, with_c: bool) -> ModelParams {
    let c = if with_c { rng.random_range(0.0..0.3) } else { 0.0 };
    ModelParams::scalar(
        rng.random_range(0.8..1.5),
        rng.random_range(0.05..0.5),
        c,
        rng.random_range(0.05..0.5),
        rng.random_range(0.8..1.5),
        rng.random_range(0.0..0.3),
        rng.random_range(-0.9..0.9),
        rng.random_range(0.01..1.0),
    )
    .unwrap()
}

pub fn monthly_market(lambda: f64) -> (ModelParams, usize) {
    let m = discretize(
        &AnnualMarket {
            dt: 1.0 / 12.0,
            ..AnnualMarket::default()
        },
        lambda,
    )
    .unwrap();
    (m.params, m.periods)
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

use explq::rl::{ThetaVector, Transition};
use twofloat::TwoFloat;

fn dd(v: f64) -> TwoFloat {
    TwoFloat::from(v)
}

fn dd_value(th: &[TwoFloat; 5], n: usize, x: f64, l: f64, lambda: f64) -> TwoFloat {
    let (x, l) = (dd(x), dd(l));
    if n == 0 {
        return (x - l) * (x - l);
    }
    let q = th[1] * th[1] / th[0];
    let mut sum = dd(0.0);
    for i in 0..n {
        sum += q.powi(i as i32) * th[4].powi((n - 1 - i) as i32);
    }
    let nf = dd(n as f64);
    let half_lambda = dd(lambda) / dd(2.0);
    th[0].powi(n as i32) * x * x - dd(2.0) * th[1].powi(n as i32) * x * l
        + (th[4].powi(n as i32) - th[2] * th[2] * th[3] * sum) * l * l
        - half_lambda * nf * th[3].ln()
        + half_lambda / dd(2.0) * (nf - dd(1.0)) * nf * th[0].ln()
        + half_lambda * nf * (dd(1.0) / (dd(std::f64::consts::PI) * dd(lambda))).ln()
}

/// Episode loss `½ Σ δ²` in double-double arithmetic.
pub fn dd_loss(theta: [TwoFloat; 5], trs: &[Transition], lambda: f64, horizon: usize) -> TwoFloat {
    let mut loss = dd(0.0);
    for tr in trs {
        let n = horizon - tr.t;
        let neg_entropy = -(dd(std::f64::consts::PI * std::f64::consts::E) * dd(lambda)).ln() / dd(2.0)
            - (theta[3].ln() - dd((n - 1) as f64) * theta[0].ln()) / dd(2.0);
        let delta = dd_value(&theta, n - 1, tr.x_next, tr.l_next, lambda) - dd_value(&theta, n, tr.x, tr.l, lambda)
            + dd(lambda) * neg_entropy;
        loss += delta * delta / dd(2.0);
    }
    loss
}

/// Central difference of the loss with step `1e-6 (1 + |θᵢ|)`, evaluated in
/// double-double so that cancellation does not swamp small partials.
pub fn fd_gradient(theta: &ThetaVector, trs: &[Transition], lambda: f64, horizon: usize) -> [f64; 5] {
    let base = theta.to_array().map(dd);
    let mut out = [0.0; 5];
    for i in 0..5 {
        let h = dd(1e-6 * (1.0 + theta.to_array()[i].abs()));
        let (mut up, mut dn) = (base, base);
        up[i] += h;
        dn[i] -= h;
        out[i] = f64::from((dd_loss(up, trs, lambda, horizon) - dd_loss(dn, trs, lambda, horizon)) / (dd(2.0) * h));
    }
    out
}
