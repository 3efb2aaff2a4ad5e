//! Synthetic market: annual-to-period discretization, correlated noise and
//! episode simulation under a Gaussian feedback policy.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lq_core::{GaussianPolicy, ModelParams, StateVec};

/// Annual market description. Gross returns, so `rf_annual = 1.05` is 5%.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnualMarket {
    pub rf_annual: f64,
    pub risky_return_annual: f64,
    pub risky_vol_annual: f64,
    pub liability_growth_annual: f64,
    pub liability_vol_annual: f64,
    pub rho: f64,
    /// Period length in years.
    pub dt: f64,
    pub horizon_years: f64,
}

impl Default for AnnualMarket {
    fn default() -> Self {
        AnnualMarket {
            rf_annual: 1.05,
            risky_return_annual: 1.30,
            risky_vol_annual: 0.2,
            liability_growth_annual: 1.1,
            liability_vol_annual: 0.1,
            rho: 0.2,
            dt: 1.0,
            horizon_years: 1.0,
        }
    }
}

impl AnnualMarket {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rf_annual,
            self.risky_return_annual,
            self.risky_vol_annual,
            self.liability_growth_annual,
            self.liability_vol_annual,
            self.rho,
            self.dt,
            self.horizon_years,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("market inputs must be finite".into()));
        }
        if !(self.rf_annual > 1.0) {
            return Err(Error::Config(format!(
                "rf_annual > 1 violated: rf_annual = {}",
                self.rf_annual
            )));
        }
        if self.rho.abs() > 1.0 {
            return Err(Error::Config(format!("|rho| <= 1 violated: rho = {}", self.rho)));
        }
        if self.risky_vol_annual < 0.0 || self.liability_vol_annual < 0.0 {
            return Err(Error::Config("volatilities must be non-negative".into()));
        }
        if !(self.dt > 0.0) || !(self.horizon_years > 0.0) {
            return Err(Error::Config("dt and horizon_years must be positive".into()));
        }
        if !(self.liability_growth_annual > 0.0) {
            return Err(Error::Config("liability_growth_annual must be positive".into()));
        }
        self.periods().map(|_| ())
    }

    /// `horizon_years / dt`, which must be an integer to within 1e-9.
    pub fn periods(&self) -> Result<usize> {
        let ratio = self.horizon_years / self.dt;
        let rounded = ratio.round();
        let residual = ratio - rounded;
        if residual.abs() > 1e-9 || rounded < 1.0 {
            return Err(Error::Config(format!(
                "horizon_years / dt = {ratio} is not a positive integer (residual {residual:e})"
            )));
        }
        Ok(rounded as usize)
    }
}

/// Per-period model plus the number of periods.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMarket {
    pub params: ModelParams,
    pub periods: usize,
}

impl DiscreteMarket {
    /// Per-period risk-free gross return, `A`.
    pub fn rf_period(&self) -> f64 {
        self.params.a
    }
}

/// Geometric drift, linear excess return and square-root-of-time volatility:
///
/// ```text
/// A = rf^dt,  Ā = q^dt,  B = (R - rf) dt,  D = σ √dt,  C̄ = σ_l √dt,  C = 0
/// ```
///
/// A zero risky volatility is accepted here and surfaces as a degenerate
/// diffusion when the closed form is requested.
pub fn discretize(annual: &AnnualMarket, lambda: f64) -> Result<DiscreteMarket> {
    annual.validate()?;
    let periods = annual.periods()?;
    let dt = annual.dt;
    let params = ModelParams::alm(
        annual.rf_annual.powf(dt),
        (annual.risky_return_annual - annual.rf_annual) * dt,
        annual.risky_vol_annual * dt.sqrt(),
        annual.liability_growth_annual.powf(dt),
        annual.liability_vol_annual * dt.sqrt(),
        annual.rho,
        lambda,
    )
    .map_err(|e| match e {
        Error::InvalidInput(msg) => Error::Config(msg),
        other => other,
    })?;
    Ok(DiscreteMarket { params, periods })
}

/// Golden-ratio increment used to spread episode indices over the seed space.
pub const EPISODE_SEED_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of episode `episode` under base seed `base`: the SplitMix64 output
/// for state `base + (episode + 1) * EPISODE_SEED_INCREMENT`.
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    let mut z = base.wrapping_add(episode.wrapping_add(1).wrapping_mul(EPISODE_SEED_INCREMENT));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one episode.
pub fn episode_rng(base: u64, episode: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(episode_seed(base, episode))
}

/// Runs `f` for episodes `0..n` in parallel; results come back in episode
/// order regardless of scheduling.
pub fn par_episodes<T, F>(n: usize, base: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(base, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// One draw of the correlated noise pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    pub wx: f64,
    pub wy: f64,
}

/// `wx ~ N(0,1)`, then `wy = ρ wx + √(1-ρ²) z` with an independent `z`.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, rho: f64) -> NoiseDraw {
    let wx: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    NoiseDraw {
        wx,
        wy: rho * wx + (1.0 - rho * rho).max(0.0).sqrt() * z,
    }
}

/// What happened in one period of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub control: f64,
    pub wx: f64,
    pub wl: f64,
}

/// A simulated trajectory. `states` holds the raw wealth `X_t` (not shifted)
/// and liability `l_t` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePath {
    pub states: Vec<StateVec>,
    pub steps: Vec<StepRecord>,
    pub gamma: f64,
    pub terminal_surplus: f64,
}

impl EpisodePath {
    pub fn periods(&self) -> usize {
        self.steps.len()
    }

    pub fn terminal_wealth(&self) -> f64 {
        self.states[self.periods()].x
    }

    pub fn terminal_liability(&self) -> f64 {
        self.states[self.periods()].y
    }

    /// States in the shifted coordinates `x_t = X_t - γ rf^-(T-t)`.
    pub fn shifted_states(&self, rf_period: f64) -> Vec<StateVec> {
        let horizon = self.periods();
        self.states
            .iter()
            .enumerate()
            .map(|(t, s)| StateVec::new(shift(s.x, self.gamma, rf_period, horizon - t), s.y))
            .collect()
    }
}

#[inline]
pub(crate) fn shift(wealth: f64, gamma: f64, rf_period: f64, remaining: usize) -> f64 {
    wealth - gamma * rf_period.powi(-(remaining as i32))
}

/// Simulates one episode. Controls are sampled from `policy` at the shifted
/// state; per period the generator is consumed as: control innovation
/// (only when the variance is positive), then the noise pair.
pub fn simulate_episode<R: Rng + ?Sized>(
    params: &ModelParams,
    policy: &GaussianPolicy,
    init: StateVec,
    gamma: f64,
    rng: &mut R,
) -> Result<EpisodePath> {
    let horizon = check_policy(params, policy)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut steps = Vec::with_capacity(horizon);
    states.push(init);
    let (x_t, l_t) = run_periods(params, policy, init, gamma, rng, |t, control, noise, next| {
        steps.push(StepRecord {
            t,
            control,
            wx: noise.wx,
            wl: noise.wy,
        });
        states.push(next);
    });
    Ok(EpisodePath {
        states,
        steps,
        gamma,
        terminal_surplus: x_t - l_t,
    })
}

/// Terminal `(X_T, l_T)` only; same random stream as [`simulate_episode`].
pub fn simulate_terminal<R: Rng + ?Sized>(
    params: &ModelParams,
    policy: &GaussianPolicy,
    init: StateVec,
    gamma: f64,
    rng: &mut R,
) -> Result<StateVec> {
    check_policy(params, policy)?;
    let (x, l) = run_periods(params, policy, init, gamma, rng, |_, _, _, _| {});
    Ok(StateVec::new(x, l))
}

fn check_policy(params: &ModelParams, policy: &GaussianPolicy) -> Result<usize> {
    if params.m() != 1 || policy.control_dim() != 1 {
        return Err(Error::Config("the market simulator supports a single risky asset".into()));
    }
    let horizon = policy.periods();
    if horizon == 0 {
        return Err(Error::Config("policy covers no periods".into()));
    }
    Ok(horizon)
}

fn run_periods<R, F>(
    params: &ModelParams,
    policy: &GaussianPolicy,
    init: StateVec,
    gamma: f64,
    rng: &mut R,
    mut record: F,
) -> (f64, f64)
where
    R: Rng + ?Sized,
    F: FnMut(usize, f64, NoiseDraw, StateVec),
{
    let horizon = policy.periods();
    let (a, b, c, d) = (params.a, params.b1(), params.c, params.d1());
    let (ab, cb) = (params.a_bar, params.c_bar);
    let mut wealth = init.x;
    let mut liability = init.y;
    for t in 0..horizon {
        let x = shift(wealth, gamma, a, horizon - t);
        let [gx, gy] = policy.gain1(t);
        let var = policy.variance1(t);
        let mean = -(gx * x + gy * liability);
        let control = if var > 0.0 {
            let eps: f64 = rng.sample(StandardNormal);
            mean + var.sqrt() * eps
        } else {
            mean
        };
        let noise = draw_noise(rng, params.rho);
        let x_next = a * x + b * control + (c * x + d * control) * noise.wx;
        liability = ab * liability + cb * liability * noise.wy;
        wealth = x_next + gamma * a.powi(-((horizon - t - 1) as i32));
        record(t, control, noise, StateVec::new(wealth, liability));
    }
    (wealth, liability)
}
