//! Entropy-regularized LQ model with a terminal quadratic cost.
//!
//! The controlled state `x` and the uncontrolled state `y` evolve as
//!
//! ```text
//! x' = A x + B u + (C x + D u) w_x
//! y' = Ā y + C̄ y w_y,        E[w_x w_y] = ρ
//! ```
//!
//! and the objective is `E[(x_T, y_T) Q_T (x_T, y_T)' + λ Σ_t ∫ π_t ln π_t]`.
//! The optimal value is quadratic in the state plus a constant, and the
//! optimal policy is Gaussian with linear feedback mean; both come out of a
//! single backward recursion over `P_t = F_t - H_t G_t⁻¹ H_t'`.

use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::linalg::{Mat2, SquareMatrix};

/// Coefficients of the state system and the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub a: f64,
    /// Control drift, one entry per control dimension.
    pub b: Vec<f64>,
    pub c: f64,
    /// Control diffusion, one entry per control dimension.
    pub d: Vec<f64>,
    pub a_bar: f64,
    pub c_bar: f64,
    pub rho: f64,
    /// Temperature of the entropy regularizer.
    pub lambda: f64,
    pub q_terminal: Mat2,
}

impl ModelParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: f64,
        b: Vec<f64>,
        c: f64,
        d: Vec<f64>,
        a_bar: f64,
        c_bar: f64,
        rho: f64,
        lambda: f64,
        q_terminal: Mat2,
    ) -> Result<Self> {
        let params = ModelParams {
            a,
            b,
            c,
            d,
            a_bar,
            c_bar,
            rho,
            lambda,
            q_terminal,
        };
        params.validate()?;
        Ok(params)
    }

    /// One control, surplus terminal weight `(x - y)^2`.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        a: f64,
        b: f64,
        c: f64,
        d: f64,
        a_bar: f64,
        c_bar: f64,
        rho: f64,
        lambda: f64,
    ) -> Result<Self> {
        Self::new(a, vec![b], c, vec![d], a_bar, c_bar, rho, lambda, Mat2::SURPLUS)
    }

    /// Asset-liability form: one control, no state-dependent wealth noise.
    pub fn alm(a: f64, b: f64, d: f64, a_bar: f64, c_bar: f64, rho: f64, lambda: f64) -> Result<Self> {
        Self::scalar(a, b, 0.0, d, a_bar, c_bar, rho, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [self.a, self.c, self.a_bar, self.c_bar, self.rho, self.lambda];
        if scalars.iter().any(|v| !v.is_finite())
            || self.b.iter().chain(&self.d).any(|v| !v.is_finite())
            || !self.q_terminal.is_finite()
        {
            return Err(Error::invalid("model coefficients must be finite"));
        }
        if self.b.is_empty() {
            return Err(Error::invalid("control dimension m must be at least 1"));
        }
        if self.b.len() != self.d.len() {
            return Err(Error::invalid(format!(
                "B has {} entries but D has {}",
                self.b.len(),
                self.d.len()
            )));
        }
        if self.rho.abs() > 1.0 {
            return Err(Error::invalid(format!("|rho| <= 1 violated: rho = {}", self.rho)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda > 0 violated: lambda = {}", self.lambda)));
        }
        if !self.q_terminal.is_symmetric(1e-12) {
            return Err(Error::invalid("terminal weight Q_T must be symmetric"));
        }
        if self.b.iter().chain(&self.d).all(|v| *v == 0.0) {
            return Err(Error::SingularGain {
                period: 0,
                detail: "B and D are both zero, the control has no effect".into(),
            });
        }
        Ok(())
    }

    /// Control dimension.
    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// `B'B + D'D`.
    pub fn control_gram(&self) -> SquareMatrix {
        let m = self.m();
        let mut g = SquareMatrix::zeros(m);
        for i in 0..m {
            for j in 0..m {
                g[(i, j)] = self.b[i] * self.b[j] + self.d[i] * self.d[j];
            }
        }
        g
    }

    /// Scalar control drift; panics when `m != 1`.
    pub fn b1(&self) -> f64 {
        assert_eq!(self.m(), 1, "scalar accessor on a multi-control model");
        self.b[0]
    }

    /// Scalar control diffusion; panics when `m != 1`.
    pub fn d1(&self) -> f64 {
        assert_eq!(self.m(), 1, "scalar accessor on a multi-control model");
        self.d[0]
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut p = self.clone();
        p.lambda = lambda;
        p.validate()?;
        Ok(p)
    }
}

/// State pair `(x, y)`; `y` is the liability `l` in the ALM application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVec {
    pub x: f64,
    pub y: f64,
}

impl StateVec {
    pub fn new(x: f64, y: f64) -> Self {
        StateVec { x, y }
    }
}

/// The one-step coefficients obtained by propagating a quadratic form
/// `P` through the dynamics:
/// `E[z' P z | z_t, u] = z_t' F z_t + 2 z_t' H u + u' G u` (before averaging over `u`).
#[derive(Debug, Clone, PartialEq)]
pub struct StageMatrices {
    pub f: Mat2,
    /// Column `i` is the 2-vector multiplying control component `u_i`.
    pub h: Vec<[f64; 2]>,
    pub g: SquareMatrix,
}

/// Computes `F`, `H`, `G` for the continuation quadratic `p_next`.
///
/// The cross term of `F` carries `ρ C C̄`: the wealth and liability noises
/// are correlated, so `E[(C x w_x)(C̄ y w_y)] = ρ C C̄ x y`.
pub fn stage_matrices(p_next: &Mat2, params: &ModelParams) -> StageMatrices {
    let p = p_next.symmetrize();
    let (a, c, ab, cb, rho) = (params.a, params.c, params.a_bar, params.c_bar, params.rho);
    let f = Mat2::symmetric(
        (a * a + c * c) * p.xx(),
        (a * ab + rho * c * cb) * p.xy(),
        (ab * ab + cb * cb) * p.yy(),
    );
    let h = params
        .b
        .iter()
        .zip(&params.d)
        .map(|(&bi, &di)| {
            [
                p.xx() * (a * bi + c * di),
                p.xy() * (ab * bi + rho * cb * di),
            ]
        })
        .collect();
    let g = params.control_gram().scale(p.xx());
    StageMatrices { f, h, g }
}

/// Exact `E[(x', y') P (x', y')' | x, y]` when the control has mean
/// `u_mean` and second moment `E[u u'] = u_second_moment`.
pub fn propagate_quadratic(
    p: &Mat2,
    params: &ModelParams,
    state: StateVec,
    u_mean: &[f64],
    u_second_moment: &SquareMatrix,
) -> Result<f64> {
    if !p.is_symmetric(1e-12) {
        return Err(Error::invalid("quadratic form P must be symmetric"));
    }
    let m = params.m();
    if u_mean.len() != m || u_second_moment.dim() != m {
        return Err(Error::invalid(format!(
            "control moments must have dimension m = {m}"
        )));
    }
    let sm = stage_matrices(p, params);
    let cross: f64 = sm
        .h
        .iter()
        .zip(u_mean)
        .map(|(col, u)| (state.x * col[0] + state.y * col[1]) * u)
        .sum();
    Ok(sm.f.quad(state.x, state.y) + 2.0 * cross + sm.g.trace_product(u_second_moment))
}

/// One period of the backward recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiStage {
    pub t: usize,
    pub p: Mat2,
    pub f: Mat2,
    pub h: Vec<[f64; 2]>,
    pub g: SquareMatrix,
    /// `G_t⁻¹ H_t'`, one row per control component.
    pub gain: Vec<[f64; 2]>,
    /// `(λ/2) Σ_{k=t}^{T-1} ln[(1/(πλ))^m |G_k|]`.
    pub entropy_const: f64,
    g_inv: SquareMatrix,
}

impl RiccatiStage {
    pub fn g_inverse(&self) -> &SquareMatrix {
        &self.g_inv
    }
}

/// Output of [`riccati_backward`]: stages indexed by period `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    stages: Vec<RiccatiStage>,
    terminal: Mat2,
    lambda: f64,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn stage(&self, t: usize) -> Result<&RiccatiStage> {
        self.stages.get(t).ok_or(Error::OutOfRange {
            t,
            horizon: self.horizon(),
        })
    }

    /// Stages in period order `0, 1, …, T-1`.
    pub fn stages(&self) -> &[RiccatiStage] {
        &self.stages
    }

    /// Stages in the order they were computed, `T-1` down to `0`.
    pub fn stages_backward(&self) -> impl Iterator<Item = &RiccatiStage> {
        self.stages.iter().rev()
    }

    /// `P_t`, with `P_T = Q_T`.
    pub fn value_matrix(&self, t: usize) -> Result<Mat2> {
        if t == self.horizon() {
            Ok(self.terminal)
        } else {
            Ok(self.stage(t)?.p)
        }
    }

    /// Accumulated entropy constant at `t` (zero at `T`).
    pub fn entropy_const(&self, t: usize) -> Result<f64> {
        if t == self.horizon() {
            Ok(0.0)
        } else {
            Ok(self.stage(t)?.entropy_const)
        }
    }

    pub fn value(&self, t: usize) -> Result<QuadraticValue> {
        Ok(QuadraticValue {
            p: self.value_matrix(t)?,
            c: self.entropy_const(t)?,
        })
    }

    /// The optimal Gaussian policy over the whole horizon.
    pub fn policy(&self) -> GaussianPolicy {
        GaussianPolicy {
            stages: self
                .stages
                .iter()
                .map(|s| PolicyStage {
                    gain: s.gain.clone(),
                    cov: s.g_inv.scale(0.5 * self.lambda),
                })
                .collect(),
        }
    }
}

/// Solves the entropy-regularized LQ problem backward from `P_T = Q_T`.
pub fn riccati_backward(params: &ModelParams, horizon: usize) -> Result<RiccatiSolution> {
    params.validate()?;
    if horizon == 0 {
        return Err(Error::invalid("horizon T must be at least 1"));
    }
    let m = params.m() as f64;
    let lambda = params.lambda;
    let log_norm = m * (1.0 / (PI * lambda)).ln();

    let mut stages = Vec::with_capacity(horizon);
    let mut p_next = params.q_terminal;
    let mut acc_const = 0.0;
    for t in (0..horizon).rev() {
        let StageMatrices { f, h, g } = stage_matrices(&p_next, params);
        let log_det = g.log_det_spd().ok_or_else(|| Error::SingularGain {
            period: t,
            detail: format!("G_t is not positive definite (P_(t+1),11 = {:e})", p_next.xx()),
        })?;
        let g_inv = g.inverse().ok_or_else(|| Error::SingularGain {
            period: t,
            detail: "pivot below tolerance while inverting G_t".into(),
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
        let p = (f - hgh).symmetrize();
        acc_const += 0.5 * lambda * (log_norm + log_det);
        stages.push(RiccatiStage {
            t,
            p,
            f,
            h,
            g,
            gain,
            entropy_const: acc_const,
            g_inv,
        });
        p_next = p;
    }
    stages.reverse();
    Ok(RiccatiSolution {
        stages,
        terminal: params.q_terminal,
        lambda,
    })
}

/// `J*(t, x, y) = (x, y) P_t (x, y)' + entropy_const(t)`.
pub fn optimal_value(solution: &RiccatiSolution, t: usize, state: StateVec) -> Result<f64> {
    Ok(solution.value(t)?.evaluate(state))
}

/// Optimal feedback at period `t`: mean `-gain (x, y)'`, covariance `(λ/2) G_t⁻¹`.
pub fn optimal_policy(solution: &RiccatiSolution, t: usize) -> Result<PolicyStage> {
    let stage = solution.stage(t)?;
    Ok(PolicyStage {
        gain: stage.gain.clone(),
        cov: stage.g_inv.scale(0.5 * solution.lambda),
    })
}

/// A value function `(x, y) P (x, y)' + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticValue {
    pub p: Mat2,
    pub c: f64,
}

impl QuadraticValue {
    pub fn terminal(q: Mat2) -> Self {
        QuadraticValue { p: q, c: 0.0 }
    }

    pub fn evaluate(&self, state: StateVec) -> f64 {
        self.p.quad(state.x, state.y) + self.c
    }
}

/// Gaussian feedback law for a single period.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStage {
    /// Rows of the m x 2 gain; the mean is `-gain (x, y)'`.
    pub gain: Vec<[f64; 2]>,
    /// Control covariance. Zero for degenerate (deterministic) laws.
    pub cov: SquareMatrix,
}

impl PolicyStage {
    pub fn mean(&self, state: StateVec) -> Vec<f64> {
        self.gain
            .iter()
            .map(|g| -(g[0] * state.x + g[1] * state.y))
            .collect()
    }

    /// `E[u u'] = μμ' + Σ`.
    pub fn second_moment(&self, state: StateVec) -> SquareMatrix {
        SquareMatrix::outer(&self.mean(state)).add(&self.cov)
    }
}

/// A per-period Gaussian feedback policy over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub stages: Vec<PolicyStage>,
}

impl GaussianPolicy {
    /// Single-control policy from per-period gains and variances.
    pub fn scalar(gains: &[[f64; 2]], variances: &[f64]) -> Result<Self> {
        if gains.len() != variances.len() {
            return Err(Error::invalid("gains and variances must cover the same periods"));
        }
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("policy variances must be finite and non-negative"));
        }
        Ok(GaussianPolicy {
            stages: gains
                .iter()
                .zip(variances)
                .map(|(g, v)| PolicyStage {
                    gain: vec![*g],
                    cov: SquareMatrix::scalar(*v),
                })
                .collect(),
        })
    }

    /// Zero-covariance policy with the given gains.
    pub fn degenerate(gains: &[[f64; 2]]) -> Self {
        Self::scalar(gains, &vec![0.0; gains.len()]).expect("zero variances are valid")
    }

    pub fn periods(&self) -> usize {
        self.stages.len()
    }

    pub fn control_dim(&self) -> usize {
        self.stages.first().map_or(0, |s| s.gain.len())
    }

    /// Scalar gain `(g_x, g_y)` at `t`; panics for multi-control policies.
    pub fn gain1(&self, t: usize) -> [f64; 2] {
        assert_eq!(self.stages[t].gain.len(), 1);
        self.stages[t].gain[0]
    }

    /// Scalar variance at `t`; panics for multi-control policies.
    pub fn variance1(&self, t: usize) -> f64 {
        assert_eq!(self.stages[t].cov.dim(), 1);
        self.stages[t].cov[(0, 0)]
    }

    /// `λ Σ_t ∫ π_t ln π_t`, which does not depend on the state.
    pub fn entropy_cost(&self, lambda: f64) -> Result<f64> {
        self.stages
            .iter()
            .map(|s| gaussian_neg_entropy(&s.cov).map(|h| lambda * h))
            .sum()
    }
}

/// `∫ π ln π = -(1/2) ln((2πe)^m |Σ|)` for a Gaussian with covariance `Σ`.
pub fn gaussian_neg_entropy(cov: &SquareMatrix) -> Result<f64> {
    let log_det = cov
        .log_det_spd()
        .ok_or_else(|| Error::invalid("covariance must be symmetric positive definite"))?;
    let m = cov.dim() as f64;
    Ok(-0.5 * (m * (2.0 * PI * E).ln() + log_det))
}


#[cfg(test)]
mod invariants {
    use super::*;
    use crate::market::{par_episodes, simulate_episode};
    use crate::testing::{close, general_params, mean_se};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn value_matrices_are_symmetric(params in general_params(), horizon in 1usize..9) {
            let Ok(sol) = riccati_backward(&params, horizon) else { return Ok(()) };
            for s in sol.stages() {
                prop_assert!(s.p.is_symmetric(1e-12));
            }
        }

        #[test]
        fn bellman_consistency(
            params in general_params(),
            horizon in 1usize..9,
            x in -3.0..3.0f64,
            y in -1.0..1.0f64,
            at in 0.0..1.0f64,
        ) {
            let Ok(sol) = riccati_backward(&params, horizon) else { return Ok(()) };
            let t = ((horizon as f64 * at) as usize).min(horizon - 1);
            let s = StateVec::new(x, y);
            let pol = optimal_policy(&sol, t).unwrap();
            let next = sol.value(t + 1).unwrap();
            let rhs = propagate_quadratic(&next.p, &params, s, &pol.mean(s), &pol.second_moment(s)).unwrap()
                + next.c
                + params.lambda * gaussian_neg_entropy(&pol.cov).unwrap();
            let lhs = optimal_value(&sol, t, s).unwrap();
            prop_assert!(close(lhs, rhs, 1e-10, 1.0), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn entropy_constant_increments(params in general_params(), horizon in 1usize..9) {
            let Ok(sol) = riccati_backward(&params, horizon) else { return Ok(()) };
            let m = params.m() as f64;
            for s in sol.stages() {
                let after = sol.entropy_const(s.t + 1).unwrap();
                let (_, det) = s.g.inverse_and_det().unwrap();
                let want = 0.5 * params.lambda * (m * (1.0 / (PI * params.lambda)).ln() + det.ln());
                prop_assert!(close(s.entropy_const - after, want, 1e-12, 1.0));
            }
        }
    }

    /// Sampled `(x_T - y_T)² + λ Σ ln π_t(u_t)` under the optimal policy.
    fn sampled_objective(params: &ModelParams, horizon: usize, start: StateVec, episodes: usize, seed: u64) -> (f64, f64) {
        let sol = riccati_backward(params, horizon).unwrap();
        let policy = sol.policy();
        let samples = par_episodes(episodes, seed, |_, rng| {
            let path = simulate_episode(params, &policy, start, 0.0, rng).unwrap();
            let mut log_density = 0.0;
            for step in &path.steps {
                let z = path.states[step.t];
                let [gx, gy] = policy.gain1(step.t);
                let var = policy.variance1(step.t);
                let dev = step.control + gx * z.x + gy * z.y;
                log_density += -dev * dev / (2.0 * var) - 0.5 * (2.0 * PI * var).ln();
            }
            let end = path.states[horizon];
            params.q_terminal.quad(end.x, end.y) + params.lambda * log_density
        });
        mean_se(&samples)
    }

    #[test]
    fn monte_carlo_matches_value_with_wealth_noise() {
        // C ≠ 0 and ρ ≠ 0 exercise the correlated cross term of the recursion
        let params = ModelParams::scalar(1.05, 0.25, 0.15, 0.2, 1.1, 0.1, 0.5, 0.1).unwrap();
        let start = StateVec::new(1.0, 0.3);
        let (mean, se) = sampled_objective(&params, 4, start, 1_000_000, 8);
        let exact = optimal_value(&riccati_backward(&params, 4).unwrap(), 0, start).unwrap();
        assert!((mean - exact).abs() < 4.0 * se, "MC {mean} ± {se}, exact {exact}");
    }

    #[test]
    fn monte_carlo_matches_value_asset_liability() {
        let params = ModelParams::alm(1.004, 0.02, 0.06, 1.008, 0.03, 0.2, 0.05).unwrap();
        let start = StateVec::new(0.5, 0.1);
        let (mean, se) = sampled_objective(&params, 12, start, 1_000_000, 9);
        let exact = optimal_value(&riccati_backward(&params, 12).unwrap(), 0, start).unwrap();
        assert!((mean - exact).abs() < 4.0 * se, "MC {mean} ± {se}, exact {exact}");
    }
}
