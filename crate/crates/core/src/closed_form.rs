//! Explicit solutions for the surplus terminal weight `Q_T = [[1,-1],[-1,1]]`
//! with a single control.
//!
//! Every power `(·)^(T-t)` is accumulated by repeated multiplication in one
//! backward sweep, so the numbers line up with the recursion in
//! [`crate::lq_core`] to rounding.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::lq_core::{GaussianPolicy, ModelParams, StateVec};

/// Closed-form entries for one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormStage {
    pub t: usize,
    pub p11: f64,
    pub p12: f64,
    pub p22: f64,
    pub g: f64,
    pub gain_x: f64,
    pub gain_y: f64,
    pub value_const: f64,
}

impl ClosedFormStage {
    pub fn p(&self) -> Mat2 {
        Mat2::symmetric(self.p11, self.p12, self.p22)
    }

    /// Optimal policy variance `(λ/2) / G_t`.
    pub fn variance(&self, lambda: f64) -> f64 {
        0.5 * lambda / self.g
    }
}

/// Per-period closed-form solution, `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormSolution {
    pub stages: Vec<ClosedFormStage>,
    pub lambda: f64,
}

impl ClosedFormSolution {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, t: usize) -> Result<&ClosedFormStage> {
        self.stages.get(t).ok_or(Error::OutOfRange {
            t,
            horizon: self.horizon(),
        })
    }

    /// `J*(t, x, y)`; at `t = T` this is `(x - y)^2`.
    pub fn value(&self, t: usize, state: StateVec) -> Result<f64> {
        if t == self.horizon() {
            return Ok(Mat2::SURPLUS.quad(state.x, state.y));
        }
        let s = self.stage(t)?;
        Ok(s.p().quad(state.x, state.y) + s.value_const)
    }

    pub fn policy(&self) -> GaussianPolicy {
        let gains: Vec<[f64; 2]> = self.stages.iter().map(|s| [s.gain_x, s.gain_y]).collect();
        let vars: Vec<f64> = self.stages.iter().map(|s| s.variance(self.lambda)).collect();
        GaussianPolicy::scalar(&gains, &vars).expect("closed-form variances are positive")
    }
}

/// The scalar bases shared by both closed forms.
struct Bases {
    /// `B² + D²`
    bd: f64,
    /// Base of `P_11`: `(A²+C²) - (AB+CD)²/(B²+D²)`.
    kappa: f64,
    /// Base of `-P_12`: `(AĀ + ρCC̄) - (ĀB+ρC̄D)(AB+CD)/(B²+D²)`.
    r: f64,
    /// Ratio base inside the `P_22` sum: `r² / κ`.
    q: f64,
    /// `(ĀB+ρC̄D)² / (B²+D²)`.
    k: f64,
    /// `Ā² + C̄²`.
    e: f64,
    /// Constant gain on `x`.
    gain_x: f64,
    /// `(ĀB+ρC̄D)/(B²+D²)`.
    gain_y_unit: f64,
    /// Base of the `g_t` factor in the `y` gain: `r / κ`.
    gain_y_ratio: f64,
    /// `ln κ`, used in the value constant.
    log_kappa: f64,
}

fn scalar_model(params: &ModelParams) -> Result<()> {
    params.validate()?;
    if params.m() != 1 {
        return Err(Error::invalid("closed forms require a single control (m = 1)"));
    }
    let q = params.q_terminal;
    if q != Mat2::SURPLUS {
        return Err(Error::invalid("closed forms require Q_T = [[1,-1],[-1,1]]"));
    }
    Ok(())
}

fn sweep(bases: &Bases, lambda: f64, horizon: usize) -> Result<ClosedFormSolution> {
    if horizon == 0 {
        return Err(Error::invalid("horizon T must be at least 1"));
    }
    let log_norm = (1.0 / (PI * lambda)).ln();
    let mut stages = Vec::with_capacity(horizon);
    // powers at n-1 = T-t-1 on entry to each period
    let mut kappa_pow = 1.0;
    let mut r_pow = 1.0;
    let mut q_pow = 1.0;
    let mut e_pow = 1.0;
    let mut ratio_pow = 1.0;
    // Σ_{i=0}^{n-1} q^i e^{n-1-i}
    let mut mixed_sum = 0.0;
    for n in 1..=horizon {
        let t = horizon - n;
        let g = bases.bd * kappa_pow;
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::SingularGain {
                period: t,
                detail: format!("closed-form G_t = {g:e} is not positive"),
            });
        }
        let gain_y = -ratio_pow * bases.gain_y_unit;
        mixed_sum = bases.e * mixed_sum + q_pow;
        kappa_pow *= bases.kappa;
        r_pow *= bases.r;
        q_pow *= bases.q;
        e_pow *= bases.e;
        ratio_pow *= bases.gain_y_ratio;
        let nf = n as f64;
        let curvature_term = if n > 1 {
            0.25 * lambda * bases.log_kappa * (nf - 1.0) * nf
        } else {
            0.0
        };
        stages.push(ClosedFormStage {
            t,
            p11: kappa_pow,
            p12: -r_pow,
            p22: e_pow - bases.k * mixed_sum,
            g,
            gain_x: bases.gain_x,
            gain_y,
            value_const: 0.5 * lambda * log_norm * nf + 0.5 * lambda * bases.bd.ln() * nf + curvature_term,
        });
    }
    stages.reverse();
    Ok(ClosedFormSolution { stages, lambda })
}

/// Closed-form solution for a general scalar model with the surplus weight.
pub fn scalar_solution(params: &ModelParams, horizon: usize) -> Result<ClosedFormSolution> {
    scalar_model(params)?;
    let (a, b, c, d) = (params.a, params.b1(), params.c, params.d1());
    let (ab, cb, rho) = (params.a_bar, params.c_bar, params.rho);
    let bd = b * b + d * d;
    if !(bd > 0.0) {
        return Err(Error::SingularGain {
            period: horizon.saturating_sub(1),
            detail: "B² + D² = 0".into(),
        });
    }
    let drift_x = a * b + c * d;
    let drift_y = ab * b + rho * cb * d;
    let kappa = (a * a + c * c) - drift_x * drift_x / bd;
    let r = (a * ab + rho * c * cb) - drift_y * drift_x / bd;
    let bases = Bases {
        bd,
        kappa,
        r,
        q: r * r / kappa,
        k: drift_y * drift_y / bd,
        e: ab * ab + cb * cb,
        gain_x: drift_x / bd,
        gain_y_unit: drift_y / bd,
        gain_y_ratio: r / kappa,
        log_kappa: kappa.ln(),
    };
    if horizon > 1 && !(kappa > 0.0) {
        return Err(Error::SingularGain {
            period: horizon - 2,
            detail: format!("P_11 base {kappa:e} is not positive"),
        });
    }
    sweep(&bases, params.lambda, horizon)
}

/// Closed-form solution of the asset-liability case (`C = 0`).
pub fn alm_solution(params: &ModelParams, horizon: usize) -> Result<ClosedFormSolution> {
    scalar_model(params)?;
    if params.c != 0.0 {
        return Err(Error::invalid("the asset-liability form requires C = 0"));
    }
    let (a, b, d) = (params.a, params.b1(), params.d1());
    let (ab, cb, rho) = (params.a_bar, params.c_bar, params.rho);
    if d == 0.0 || a == 0.0 {
        return Err(Error::DegenerateDiffusion(format!(
            "gain base (ĀD - ρBC̄)/(AD) undefined with A = {a}, D = {d}"
        )));
    }
    let bd = b * b + d * d;
    let hedge = ab * d - rho * b * cb;
    let drift_y = ab * b + rho * cb * d;
    let kappa = a * a * d * d / bd;
    let bases = Bases {
        bd,
        kappa,
        r: a * (ab * d * d - rho * b * cb * d) / bd,
        q: hedge * hedge / bd,
        k: drift_y * drift_y / bd,
        e: ab * ab + cb * cb,
        gain_x: a * b / bd,
        gain_y_unit: drift_y / bd,
        gain_y_ratio: hedge / (a * d),
        log_kappa: kappa.ln(),
    };
    sweep(&bases, params.lambda, horizon)
}
