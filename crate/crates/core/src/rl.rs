//! Five-parameter value/policy family for the asset-liability problem and
//! the Bellman-residual SGD trainer with a self-correcting multiplier.
//!
//! With `n = T - t` periods to go and `q = θ₂²/θ₁`,
//!
//! ```text
//! J^θ(t, x, l) = θ₁ⁿ x² - 2 θ₂ⁿ x l + (θ₅ⁿ - θ₃² θ₄ Σ_{i<n} qⁱ θ₅^{n-1-i}) l²
//!              - (λ/2) n ln θ₄ + (λ/4) (n-1) n ln θ₁ + (λ/2) n ln(1/(πλ))
//! ```
//!
//! The minus sign in front of the sum is the one that reproduces the exact
//! optimal value when θ takes its ground-truth values (see
//! [`ThetaVector::ground_truth`]). The policy is
//!
//! ```text
//! mean = -√((A² - θ₁) θ₄) x + (θ₂/θ₁)^{n-1} θ₃ θ₄ l,   variance = (λ/2) θ₄ θ₁^{-(n-1)}
//! ```
//!
//! which equals the optimal Gaussian policy at ground truth when `B > 0`.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lq_core::{GaussianPolicy, ModelParams, StateVec};
use crate::market::{episode_rng, simulate_episode};
use crate::mv_alm::format_real;

/// Maximum number of step halvings before training gives up.
pub const MAX_HALVINGS: u32 = 60;

/// Parameters `θ₁..θ₅` and the multiplier `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaVector {
    pub th1: f64,
    pub th2: f64,
    pub th3: f64,
    pub th4: f64,
    pub th5: f64,
    pub gamma: f64,
}

impl ThetaVector {
    /// The values at which the family coincides with the exact solution of
    /// the `C = 0` model.
    pub fn ground_truth(params: &ModelParams) -> Self {
        let (a, b, d) = (params.a, params.b1(), params.d1());
        let (ab, cb, rho) = (params.a_bar, params.c_bar, params.rho);
        let bd = b * b + d * d;
        ThetaVector {
            th1: a * a * d * d / bd,
            th2: a * (ab * d * d - rho * b * cb * d) / bd,
            th3: ab * b + rho * cb * d,
            th4: 1.0 / bd,
            th5: ab * ab + cb * cb,
            gamma: 0.0,
        }
    }

    /// Each of `θ₁..θ₅` multiplied by `1 + u`, `u ~ U[-spread, spread]`.
    pub fn perturbed(&self, spread: f64, seed: u64) -> Self {
        self.perturb_with(spread, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Like [`perturbed`](Self::perturbed), redrawing until the policy with
    /// drift `a` is defined.
    pub fn perturbed_in_domain(&self, spread: f64, seed: u64, a: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let out = self.perturb_with(spread, &mut rng);
            if out.validate_policy(a).is_ok() {
                return Ok(out);
            }
        }
        Err(Error::invalid("no perturbation inside the policy domain after 1000 draws"))
    }

    fn perturb_with<R: Rng>(&self, spread: f64, rng: &mut R) -> Self {
        let mut out = *self;
        for v in out.params_mut() {
            *v *= 1.0 + rng.random_range(-spread..=spread);
        }
        out
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.th1, self.th2, self.th3, self.th4, self.th5]
    }

    pub fn from_array(v: [f64; 5], gamma: f64) -> Self {
        ThetaVector {
            th1: v[0],
            th2: v[1],
            th3: v[2],
            th4: v[3],
            th5: v[4],
            gamma,
        }
    }

    fn params_mut(&mut self) -> [&mut f64; 5] {
        [&mut self.th1, &mut self.th2, &mut self.th3, &mut self.th4, &mut self.th5]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) || !self.gamma.is_finite() {
            return Err(Error::invalid("theta must be finite"));
        }
        if !(self.th1 > 0.0) || !(self.th4 > 0.0) || !(self.th5 > 0.0) {
            return Err(Error::invalid(format!(
                "theta1, theta4, theta5 must be positive (got {}, {}, {})",
                self.th1, self.th4, self.th5
            )));
        }
        if self.th2 == 0.0 {
            return Err(Error::invalid("theta2 must be non-zero"));
        }
        Ok(())
    }

    /// Domain of the policy as well as the value: additionally `θ₁ ≤ A²`.
    pub fn validate_policy(&self, a: f64) -> Result<()> {
        self.validate()?;
        let radicand = (a * a - self.th1) * self.th4;
        if !(radicand >= 0.0) {
            return Err(Error::invalid(format!(
                "(A² - theta1) theta4 = {radicand:e} is negative (A = {a}, theta1 = {})",
                self.th1
            )));
        }
        Ok(())
    }
}

fn check_time(t: usize, horizon: usize) -> Result<usize> {
    if t > horizon {
        return Err(Error::OutOfRange { t, horizon });
    }
    Ok(horizon - t)
}

/// `Σ_{i<n} qⁱ θ₅^{n-1-i}` and the sums needed for its partial derivatives.
#[derive(Debug, Clone, Copy)]
struct MixedSum {
    s: f64,
    /// `Σ i qⁱ θ₅^{n-1-i}`
    s_i: f64,
    /// `Σ (n-1-i) qⁱ θ₅^{n-1-i}`
    s_rest: f64,
}

fn mixed_sum(q: f64, th5: f64, n: usize) -> MixedSum {
    let mut out = MixedSum {
        s: 0.0,
        s_i: 0.0,
        s_rest: 0.0,
    };
    let mut q_pow = 1.0;
    for i in 0..n {
        let term = q_pow * th5.powi((n - 1 - i) as i32);
        out.s += term;
        out.s_i += i as f64 * term;
        out.s_rest += (n - 1 - i) as f64 * term;
        q_pow *= q;
    }
    out
}

/// `J^θ(t, x, l)` over horizon `T`.
pub fn value_theta(theta: &ThetaVector, t: usize, x: f64, l: f64, horizon: usize, lambda: f64) -> Result<f64> {
    theta.validate()?;
    let n = check_time(t, horizon)?;
    Ok(value_unchecked(theta, n, x, l, lambda))
}

fn value_unchecked(theta: &ThetaVector, n: usize, x: f64, l: f64, lambda: f64) -> f64 {
    if n == 0 {
        return (x - l) * (x - l);
    }
    let ni = n as i32;
    let nf = n as f64;
    let sum = mixed_sum(theta.th2 * theta.th2 / theta.th1, theta.th5, n);
    let p22 = theta.th5.powi(ni) - theta.th3 * theta.th3 * theta.th4 * sum.s;
    theta.th1.powi(ni) * x * x - 2.0 * theta.th2.powi(ni) * x * l + p22 * l * l
        - 0.5 * lambda * nf * theta.th4.ln()
        + 0.25 * lambda * (nf - 1.0) * nf * theta.th1.ln()
        + 0.5 * lambda * nf * (1.0 / (PI * lambda)).ln()
}

/// `∂J^θ/∂θ` with `n` periods to go.
fn value_gradient(theta: &ThetaVector, n: usize, x: f64, l: f64, lambda: f64) -> [f64; 5] {
    if n == 0 {
        return [0.0; 5];
    }
    let ThetaVector {
        th1, th2, th3, th4, th5, ..
    } = *theta;
    let nf = n as f64;
    let pw = (n - 1) as i32;
    let sum = mixed_sum(th2 * th2 / th1, th5, n);
    let k = th3 * th3 * th4;
    let (xx, xl, ll) = (x * x, x * l, l * l);
    [
        nf * th1.powi(pw) * xx + k * sum.s_i / th1 * ll + 0.25 * lambda * (nf - 1.0) * nf / th1,
        -2.0 * nf * th2.powi(pw) * xl - k * 2.0 * sum.s_i / th2 * ll,
        -2.0 * th3 * th4 * sum.s * ll,
        -th3 * th3 * sum.s * ll - 0.5 * lambda * nf / th4,
        nf * th5.powi(pw) * ll - k * sum.s_rest / th5 * ll,
    ]
}

/// Policy mean and variance at `(t, x, l)`; `a` is the per-period drift of
/// the wealth equation.
pub fn policy_theta(
    theta: &ThetaVector,
    a: f64,
    t: usize,
    x: f64,
    l: f64,
    horizon: usize,
    lambda: f64,
) -> Result<(f64, f64)> {
    theta.validate_policy(a)?;
    if t >= horizon {
        return Err(Error::OutOfRange { t, horizon });
    }
    let [gx, gy] = theta_gain(theta, a, horizon - t);
    Ok((-(gx * x + gy * l), theta_variance(theta, horizon - t, lambda)))
}

fn theta_gain(theta: &ThetaVector, a: f64, n: usize) -> [f64; 2] {
    let gx = ((a * a - theta.th1) * theta.th4).sqrt();
    let gy = -(theta.th2 / theta.th1).powi(n as i32 - 1) * theta.th3 * theta.th4;
    [gx, gy]
}

fn theta_variance(theta: &ThetaVector, n: usize, lambda: f64) -> f64 {
    0.5 * lambda * theta.th4 * theta.th1.powi(-(n as i32 - 1))
}

/// `∫ π ln π` of the policy with `n` periods to go.
fn theta_neg_entropy(theta: &ThetaVector, n: usize, lambda: f64) -> f64 {
    -0.5 * ((PI * E * lambda).ln() + theta.th4.ln() - (n as f64 - 1.0) * theta.th1.ln())
}

/// The whole policy as a feedback law for simulation.
pub fn theta_policy(theta: &ThetaVector, a: f64, horizon: usize, lambda: f64) -> Result<GaussianPolicy> {
    theta.validate_policy(a)?;
    let gains: Vec<[f64; 2]> = (0..horizon).map(|t| theta_gain(theta, a, horizon - t)).collect();
    let vars: Vec<f64> = (0..horizon).map(|t| theta_variance(theta, horizon - t, lambda)).collect();
    GaussianPolicy::scalar(&gains, &vars)
}

/// One observed step in shifted coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub x: f64,
    pub l: f64,
    pub x_next: f64,
    pub l_next: f64,
}

/// Consecutive pairs of a state sequence `s_0..s_T`.
pub fn transitions_from_states(states: &[StateVec]) -> Vec<Transition> {
    states
        .windows(2)
        .enumerate()
        .map(|(t, w)| Transition {
            t,
            x: w[0].x,
            l: w[0].y,
            x_next: w[1].x,
            l_next: w[1].y,
        })
        .collect()
}

/// `δ_t = J^θ(t+1, ·) - J^θ(t, ·) + λ ∫ π_t ln π_t`.
pub fn bellman_residual(theta: &ThetaVector, tr: &Transition, lambda: f64, horizon: usize) -> Result<f64> {
    theta.validate()?;
    if tr.t >= horizon {
        return Err(Error::OutOfRange { t: tr.t, horizon });
    }
    Ok(residual_unchecked(theta, tr, lambda, horizon))
}

fn residual_unchecked(theta: &ThetaVector, tr: &Transition, lambda: f64, horizon: usize) -> f64 {
    let n = horizon - tr.t;
    value_unchecked(theta, n - 1, tr.x_next, tr.l_next, lambda) - value_unchecked(theta, n, tr.x, tr.l, lambda)
        + lambda * theta_neg_entropy(theta, n, lambda)
}

/// `L(θ) = ½ Σ δ_t²` over an episode.
pub fn episode_loss(theta: &ThetaVector, transitions: &[Transition], lambda: f64, horizon: usize) -> Result<f64> {
    let mut loss = 0.0;
    for tr in transitions {
        let d = bellman_residual(theta, tr, lambda, horizon)?;
        loss += 0.5 * d * d;
    }
    Ok(loss)
}

/// `∇_θ L` with the transitions held fixed.
pub fn grad_theta(theta: &ThetaVector, transitions: &[Transition], lambda: f64, horizon: usize) -> Result<[f64; 5]> {
    theta.validate()?;
    let mut grad = [0.0; 5];
    for tr in transitions {
        if tr.t >= horizon {
            return Err(Error::OutOfRange { t: tr.t, horizon });
        }
        let n = horizon - tr.t;
        let delta = residual_unchecked(theta, tr, lambda, horizon);
        let next = value_gradient(theta, n - 1, tr.x_next, tr.l_next, lambda);
        let here = value_gradient(theta, n, tr.x, tr.l, lambda);
        let mut d_delta = [0.0; 5];
        for i in 0..5 {
            d_delta[i] = next[i] - here[i];
        }
        d_delta[0] += lambda * (n as f64 - 1.0) / (2.0 * theta.th1);
        d_delta[3] -= lambda / (2.0 * theta.th4);
        for i in 0..5 {
            grad[i] += delta * d_delta[i];
        }
    }
    Ok(grad)
}

/// `γ - η_γ (avg(x_T) + γ - avg(l_T) - d)`, with `x_T` the shifted
/// terminal wealth.
pub fn update_gamma(gamma: f64, x_terminal: &[f64], l_terminal: &[f64], d: f64, eta_gamma: f64) -> Result<f64> {
    if x_terminal.is_empty() || x_terminal.len() != l_terminal.len() {
        return Err(Error::invalid("need matching, non-empty terminal samples"));
    }
    let n = x_terminal.len() as f64;
    let x = x_terminal.iter().sum::<f64>() / n;
    let l = l_terminal.iter().sum::<f64>() / n;
    Ok(gamma - eta_gamma * (x + gamma - l - d))
}

/// How the θ gradient becomes a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `θ ← θ - η g`.
    Plain { eta: f64 },
    /// `θ ← θ - η g / (1 + |g|)`, componentwise.
    Normalized { eta: f64 },
}

impl StepRule {
    pub fn eta(&self) -> f64 {
        match *self {
            StepRule::Plain { eta } | StepRule::Normalized { eta } => eta,
        }
    }

    fn step(&self, grad: &[f64; 5], scale: f64) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (o, g) in out.iter_mut().zip(grad) {
            *o = match *self {
                StepRule::Plain { eta } => eta * scale * g,
                StepRule::Normalized { eta } => eta * scale * g / (1.0 + g.abs()),
            };
        }
        out
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub step: StepRule,
    pub eta_gamma: f64,
    pub episodes: usize,
    /// Episodes per multiplier update.
    pub batch: usize,
    pub d: f64,
    pub seed: u64,
    /// Starting θ and γ.
    pub theta_init: ThetaVector,
    pub lambda: f64,
    pub x0: f64,
    pub l0: f64,
}

impl TrainConfig {
    /// Defaults around a market: ground-truth θ perturbed by up to ±20%,
    /// `γ = 0`, `Ñ = 50`, `λ = 0.1`, plain steps with `η = 1e-20`.
    pub fn for_market(params: &ModelParams, d: f64, seed: u64) -> Self {
        TrainConfig {
            step: StepRule::Plain { eta: 1e-20 },
            eta_gamma: 0.05,
            episodes: 5000,
            batch: 50,
            d,
            seed,
            theta_init: ThetaVector::ground_truth(params)
                .perturbed_in_domain(0.2, seed, params.a)
                .unwrap_or_else(|_| ThetaVector::ground_truth(params)),
            lambda: params.lambda,
            x0: 1.0,
            l0: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eta = self.step.eta();
        if !(eta >= 0.0) || !(self.eta_gamma >= 0.0) || !eta.is_finite() || !self.eta_gamma.is_finite() {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.batch == 0 || self.episodes < self.batch {
            return Err(Error::Config(format!(
                "need 1 <= batch <= episodes (batch = {}, episodes = {})",
                self.batch, self.episodes
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if !self.d.is_finite() || !self.x0.is_finite() || !self.l0.is_finite() {
            return Err(Error::Config("d, x0 and l0 must be finite".into()));
        }
        self.theta_init.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// One row per training episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub episode: usize,
    pub terminal_wealth: f64,
    pub terminal_liability: f64,
    /// Multiplier after this episode's (possible) update.
    pub gamma: f64,
    pub bellman_sq_error: f64,
    pub theta: [f64; 5],
}

impl TrainRecord {
    pub fn terminal_surplus(&self) -> f64 {
        self.terminal_wealth - self.terminal_liability
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "episode,terminal_wealth,terminal_liability,gamma,bellman_sq_error,theta1,theta2,theta3,theta4,theta5";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 + self.rows.len() * 220);
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.episode.to_string());
            for v in [r.terminal_wealth, r.terminal_liability, r.gamma, r.bellman_sq_error]
                .iter()
                .chain(r.theta.iter())
            {
                out.push(',');
                out.push_str(&format_real(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Terminal surpluses of the last `n` episodes.
    pub fn tail_surplus(&self, n: usize) -> Vec<f64> {
        let start = self.rows.len().saturating_sub(n);
        self.rows[start..].iter().map(TrainRecord::terminal_surplus).collect()
    }
}

/// Runs the trainer on a market with `horizon` periods. Episode `k` draws its
/// randomness from `episode_rng(config.seed, k)`, so runs are reproducible.
pub fn train(config: &TrainConfig, params: &ModelParams, horizon: usize) -> Result<(ThetaVector, TrainLog)> {
    config.validate()?;
    if params.m() != 1 || params.c != 0.0 {
        return Err(Error::Config("training needs a single risky asset and C = 0".into()));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least one period".into()));
    }
    let a = params.a;
    let lambda = config.lambda;
    let mut theta = config.theta_init;
    theta.validate_policy(a).map_err(|e| Error::Config(e.to_string()))?;
    let init = StateVec::new(config.x0, config.l0);
    let mut log = TrainLog {
        rows: Vec::with_capacity(config.episodes),
    };
    let mut batch_x = Vec::with_capacity(config.batch);
    let mut batch_l = Vec::with_capacity(config.batch);

    for episode in 0..config.episodes {
        let policy = theta_policy(&theta, a, horizon, lambda)?;
        let mut rng = episode_rng(config.seed, episode as u64);
        let path = simulate_episode(params, &policy, init, theta.gamma, &mut rng)?;
        let transitions = transitions_from_states(&path.shifted_states(a));
        let sq_error: f64 = transitions
            .iter()
            .map(|tr| residual_unchecked(&theta, tr, lambda, horizon).powi(2))
            .sum();
        let grad = grad_theta(&theta, &transitions, lambda, horizon)?;
        theta = sgd_step(&theta, &grad, &config.step, a, episode)?;

        batch_x.push(path.terminal_wealth() - theta.gamma);
        batch_l.push(path.terminal_liability());
        if batch_x.len() == config.batch {
            theta.gamma = update_gamma(theta.gamma, &batch_x, &batch_l, config.d, config.eta_gamma)?;
            batch_x.clear();
            batch_l.clear();
        }
        log.rows.push(TrainRecord {
            episode,
            terminal_wealth: path.terminal_wealth(),
            terminal_liability: path.terminal_liability(),
            gamma: theta.gamma,
            bellman_sq_error: sq_error,
            theta: theta.to_array(),
        });
    }
    Ok((theta, log))
}

fn sgd_step(theta: &ThetaVector, grad: &[f64; 5], rule: &StepRule, a: f64, episode: usize) -> Result<ThetaVector> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            episode,
            detail: format!("non-finite gradient {grad:?}"),
        });
    }
    let current = theta.to_array();
    let mut scale = 1.0;
    for halvings in 0..=MAX_HALVINGS {
        let step = rule.step(grad, scale);
        let mut next = current;
        for (v, s) in next.iter_mut().zip(step) {
            *v -= s;
        }
        let candidate = ThetaVector::from_array(next, theta.gamma);
        if candidate.validate_policy(a).is_ok() {
            if halvings > 0 {
                log::debug!("episode {episode}: step accepted after {halvings} halvings");
            }
            return Ok(candidate);
        }
        scale *= 0.5;
    }
    Err(Error::Divergence {
        episode,
        detail: format!("theta left its domain after {MAX_HALVINGS} step halvings"),
    })
}
