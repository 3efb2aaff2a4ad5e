//! Policy evaluation and policy improvement for Gaussian feedback laws.
//!
//! Evaluating a linear-Gaussian policy is a backward pass like the optimal
//! recursion, except the control is fixed instead of minimized. Improving a
//! policy minimizes the one-step Bellman functional against the current
//! value; after `T - t` improvements the value at `t` is optimal.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{Mat2, SquareMatrix};
use crate::lq_core::{
    gaussian_neg_entropy, stage_matrices, GaussianPolicy, ModelParams, PolicyStage,
    QuadraticValue, StageMatrices, StateVec,
};

/// Seed policy `N(K (x, l)', λ L N^(T-t-1))`. Note the mean is `+K z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedPolicy {
    pub k: [f64; 2],
    pub l_scale: f64,
    pub n_base: f64,
}

impl SeedPolicy {
    pub fn new(k: [f64; 2], l_scale: f64, n_base: f64) -> Result<Self> {
        let seed = SeedPolicy { k, l_scale, n_base };
        seed.validate()?;
        Ok(seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_scale > 0.0) || !self.l_scale.is_finite() {
            return Err(Error::invalid(format!("seed scale L must be positive, got {}", self.l_scale)));
        }
        if !(self.n_base > 0.0) || !self.n_base.is_finite() {
            return Err(Error::invalid(format!("seed base N must be positive, got {}", self.n_base)));
        }
        if !self.k.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("seed gain K must be finite"));
        }
        Ok(())
    }

    /// The seed as a [`GaussianPolicy`] over `horizon` periods.
    pub fn policy(&self, lambda: f64, horizon: usize) -> Result<GaussianPolicy> {
        self.validate()?;
        let gains = vec![[-self.k[0], -self.k[1]]; horizon];
        let vars: Vec<f64> = (0..horizon)
            .map(|t| lambda * self.l_scale * self.n_base.powi((horizon - t - 1) as i32))
            .collect();
        GaussianPolicy::scalar(&gains, &vars)
    }
}

/// Value of a policy at every period `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    stages: Vec<QuadraticValue>,
}

impl PolicyValue {
    pub fn from_stages(stages: Vec<QuadraticValue>) -> Self {
        assert!(!stages.is_empty(), "a value function covers at least t = T");
        PolicyValue { stages }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn at(&self, t: usize) -> Result<&QuadraticValue> {
        self.stages.get(t).ok_or(Error::OutOfRange {
            t,
            horizon: self.horizon(),
        })
    }

    pub fn evaluate(&self, t: usize, state: StateVec) -> Result<f64> {
        Ok(self.at(t)?.evaluate(state))
    }

    pub fn stages(&self) -> &[QuadraticValue] {
        &self.stages
    }
}

/// Exact value of any linear-Gaussian policy with positive definite covariances.
pub fn evaluate_policy(params: &ModelParams, policy: &GaussianPolicy) -> Result<PolicyValue> {
    params.validate()?;
    let horizon = policy.periods();
    if horizon == 0 {
        return Err(Error::invalid("policy covers no periods"));
    }
    if policy.control_dim() != params.m() {
        return Err(Error::invalid("policy and model control dimensions differ"));
    }
    let mut stages = vec![QuadraticValue::terminal(params.q_terminal); horizon + 1];
    for t in (0..horizon).rev() {
        let next = stages[t + 1];
        let PolicyStage { gain, cov } = &policy.stages[t];
        let StageMatrices { f, h, g } = stage_matrices(&next.p, params);
        // z'(F - HK - K'H' + K'GK)z with mean u = -K z
        let mut hk = Mat2::ZERO;
        for (col, row) in h.iter().zip(gain) {
            for a in 0..2 {
                for b in 0..2 {
                    hk.0[a][b] += col[a] * row[b];
                }
            }
        }
        let mut kgk = Mat2::ZERO;
        for (i, ri) in gain.iter().enumerate() {
            for (j, rj) in gain.iter().enumerate() {
                for a in 0..2 {
                    for b in 0..2 {
                        kgk.0[a][b] += ri[a] * g[(i, j)] * rj[b];
                    }
                }
            }
        }
        let p = (f - hk - hk.transpose() + kgk).symmetrize();
        let entropy = gaussian_neg_entropy(cov).map_err(|_| {
            Error::invalid(format!("policy covariance at t={t} is not positive definite"))
        })?;
        let c = next.c + g.trace_product(cov) + params.lambda * entropy;
        stages[t] = QuadraticValue { p, c };
    }
    Ok(PolicyValue { stages })
}

/// Value of a seed policy through the scalar `M_t` recursion and the
/// explicit `f(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedEvaluation {
    /// `m̄ = A² + 2ABK₁ + (B²+D²)K₁²`, the per-period factor of `M_t,11`.
    pub m_bar: f64,
    pub value: PolicyValue,
}

pub fn evaluate_seed_policy(
    params: &ModelParams,
    seed: &SeedPolicy,
    horizon: usize,
) -> Result<SeedEvaluation> {
    params.validate()?;
    seed.validate()?;
    if params.m() != 1 || params.c != 0.0 {
        return Err(Error::invalid("seed evaluation needs the asset-liability model (m = 1, C = 0)"));
    }
    if params.q_terminal != Mat2::SURPLUS {
        return Err(Error::invalid("seed evaluation needs Q_T = [[1,-1],[-1,1]]"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon T must be at least 1"));
    }
    let (a, b, d) = (params.a, params.b1(), params.d1());
    let (ab, cb, rho, lambda) = (params.a_bar, params.c_bar, params.rho, params.lambda);
    let [k1, k2] = seed.k;
    let bd = b * b + d * d;
    let cross = ab * b + rho * cb * d;
    let m_bar = a * a + 2.0 * a * b * k1 + bd * k1 * k1;

    let mut stages = vec![QuadraticValue::terminal(Mat2::SURPLUS); horizon + 1];
    let (mut m11, mut m12, mut m22) = (1.0, -1.0, 1.0);
    for t in (0..horizon).rev() {
        let n11 = m_bar * m11;
        let n12 = a * ab * m12 + a * b * k2 * m11 + cross * k1 * m12 + bd * k1 * k2 * m11;
        let n22 = (ab * ab + cb * cb) * m22 + 2.0 * cross * k2 * m12 + bd * k2 * k2 * m11;
        m11 = n11;
        m12 = n12;
        m22 = n22;
        stages[t] = QuadraticValue {
            p: Mat2::symmetric(m11, m12, m22),
            c: seed_constant(seed, m_bar, bd, lambda, horizon - t),
        };
    }
    Ok(SeedEvaluation {
        m_bar,
        value: PolicyValue { stages },
    })
}

/// `f(t)` for `n = T - t` remaining periods.
fn seed_constant(seed: &SeedPolicy, m_bar: f64, bd: f64, lambda: f64, n: usize) -> f64 {
    let (l, nb) = (seed.l_scale, seed.n_base);
    let nf = n as f64;
    let ratio = nb * m_bar;
    let geometric = if (1.0 - ratio).abs() < 1e-10 {
        // removable singularity at N m̄ = 1
        nf
    } else {
        (1.0 - ratio.powi(n as i32)) / (1.0 - ratio)
    };
    lambda * l * bd * geometric
        - 0.5 * lambda * (2.0 * PI * lambda * l).ln() * nf
        - 0.5 * lambda * nf
        - 0.5 * lambda * nb.ln() * (nf - 1.0) * nf / 2.0
}

/// Result of one improvement step.
#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub policy: GaussianPolicy,
    /// Exact value of the improved policy.
    pub value: PolicyValue,
    /// One-step Bellman update `F - H G⁻¹ H'` against the previous value,
    /// i.e. improved control at `t`, previous policy afterwards.
    pub bellman_update: PolicyValue,
}

/// Replaces every period's law by the minimizer of
/// `E[J_current(t+1, z') | z] + λ ∫ π ln π`.
pub fn improve(params: &ModelParams, current: &PolicyValue) -> Result<Improvement> {
    params.validate()?;
    let horizon = current.horizon();
    if horizon == 0 {
        return Err(Error::invalid("value function covers no periods"));
    }
    let lambda = params.lambda;
    let log_norm = params.m() as f64 * (1.0 / (PI * lambda)).ln();
    let mut policy_stages = Vec::with_capacity(horizon);
    let mut update = vec![QuadraticValue::terminal(params.q_terminal); horizon + 1];
    update[horizon] = current.stages[horizon];
    for t in 0..horizon {
        let next = current.stages[t + 1];
        let StageMatrices { f, h, g } = stage_matrices(&next.p, params);
        let log_det = g.log_det_spd().ok_or_else(|| Error::SingularGain {
            period: t,
            detail: format!("G is not positive definite (M_(t+1),11 = {:e})", next.p.xx()),
        })?;
        let g_inv = g.inverse().ok_or_else(|| Error::SingularGain {
            period: t,
            detail: "pivot below tolerance while inverting G".into(),
        })?;
        let gain: Vec<[f64; 2]> = (0..h.len())
            .map(|i| {
                (0..h.len()).fold([0.0, 0.0], |acc, j| {
                    [
                        acc[0] + g_inv[(i, j)] * h[j][0],
                        acc[1] + g_inv[(i, j)] * h[j][1],
                    ]
                })
            })
            .collect();
        let mut hgh = Mat2::ZERO;
        for (col, row) in h.iter().zip(&gain) {
            for a in 0..2 {
                for b in 0..2 {
                    hgh.0[a][b] += col[a] * row[b];
                }
            }
        }
        update[t] = QuadraticValue {
            p: (f - hgh).symmetrize(),
            c: next.c + 0.5 * lambda * (log_norm + log_det),
        };
        policy_stages.push(PolicyStage {
            gain,
            cov: g_inv.scale(0.5 * lambda),
        });
    }
    let policy = GaussianPolicy {
        stages: policy_stages,
    };
    let value = evaluate_policy(params, &policy)?;
    Ok(Improvement {
        policy,
        value,
        bellman_update: PolicyValue { stages: update },
    })
}

/// Snapshot after `j` improvements.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterState {
    pub j: usize,
    /// `m̄` of the seed policy.
    pub m_bar: f64,
    pub value: PolicyValue,
    pub policy: GaussianPolicy,
}

impl PolicyIterState {
    /// `M_t` of the current value.
    pub fn m_mat(&self, t: usize) -> Result<Mat2> {
        Ok(self.value.at(t)?.p)
    }

    /// `f(t)` of the current value.
    pub fn f_const(&self, t: usize) -> Result<f64> {
        Ok(self.value.at(t)?.c)
    }
}

/// Runs `iterations` improvements from a seed; entry `j` holds `π^j`.
pub fn policy_iteration(
    params: &ModelParams,
    seed: &SeedPolicy,
    horizon: usize,
    iterations: usize,
) -> Result<Vec<PolicyIterState>> {
    let SeedEvaluation { m_bar, value } = evaluate_seed_policy(params, seed, horizon)?;
    let mut states = vec![PolicyIterState {
        j: 0,
        m_bar,
        value,
        policy: seed.policy(params.lambda, horizon)?,
    }];
    for j in 1..=iterations {
        let prev = states.last().expect("seeded above");
        let Improvement { policy, value, .. } = improve(params, &prev.value)?;
        states.push(PolicyIterState {
            j,
            m_bar,
            value,
            policy,
        });
    }
    Ok(states)
}

/// `(λ/2) G⁻¹` covariance of the policy derived from a current value at `t`.
pub fn improved_variance(params: &ModelParams, current: &PolicyValue, t: usize) -> Result<SquareMatrix> {
    let next = current.at(t + 1)?;
    let g = stage_matrices(&next.p, params).g;
    let inv = g.inverse().ok_or_else(|| Error::SingularGain {
        period: t,
        detail: "pivot below tolerance while inverting G".into(),
    })?;
    Ok(inv.scale(0.5 * params.lambda))
}
