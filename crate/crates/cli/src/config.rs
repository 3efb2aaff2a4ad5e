//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; a `#` anywhere on a line starts a
//! comment. Reals accept decimal or `num/den` notation (`dt = 1/12`). Missing
//! keys take the defaults listed in [`KEYS`].

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use explq::market::AnnualMarket;
use explq::mv_alm::{MVProblem, DEFAULT_EXCESS_BASE};
use explq::policy_iter::SeedPolicy;
use explq::rl::StepRule;

/// Every accepted key with its default, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("rf_annual", "1.05"),
    ("risky_return_annual", "1.30"),
    ("risky_vol_annual", "0.2"),
    ("liability_growth_annual", "1.1"),
    ("liability_vol_annual", "0.1"),
    ("rho", "0.2"),
    ("dt", "1"),
    ("horizon_years", "1"),
    ("d", "1.4"),
    ("x0", "1"),
    ("l0", "0.1"),
    ("gamma", "0 for train, calibrated for evaluate"),
    ("lambda", "0.1"),
    ("step_rule", "plain"),
    ("eta", "1e-20"),
    ("eta_normalized", "1e-3"),
    ("eta_gamma", "0.05"),
    ("episodes", "5000"),
    ("batch", "50"),
    ("seed", "0"),
    ("theta_spread", "0.2"),
    ("theta1", "unset"),
    ("theta2", "unset"),
    ("theta3", "unset"),
    ("theta4", "unset"),
    ("theta5", "unset"),
    ("eval_episodes", "100000"),
    ("excess_base", "0.05"),
    ("seed_k1", "0"),
    ("seed_k2", "0"),
    ("seed_l_scale", "1"),
    ("seed_n_base", "1"),
    ("iterations", "number of periods"),
    ("probe_x", "x0"),
    ("probe_l", "l0"),
    ("label", "config file stem"),
    ("output_dir", "unset"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Plain,
    Normalized,
}

/// Everything a subcommand needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub market: AnnualMarket,
    pub mv: MVProblem,
    /// Explicit multiplier; `None` means start at 0 (train) or calibrate
    /// to `d` (evaluate).
    pub gamma: Option<f64>,
    pub lambda: f64,
    pub step_kind: StepKind,
    pub eta: f64,
    pub eta_normalized: f64,
    pub eta_gamma: f64,
    pub episodes: usize,
    pub batch: usize,
    pub seed: u64,
    pub theta_spread: f64,
    pub theta: Option<[f64; 5]>,
    pub eval_episodes: usize,
    pub excess_base: f64,
    pub seed_policy: SeedPolicy,
    pub iterations: Option<usize>,
    pub probe: (f64, f64),
    pub label: Option<String>,
    pub output_dir: Option<PathBuf>,
    /// Number of periods, `horizon_years / dt`.
    pub periods: usize,
}

impl RunConfig {
    pub fn step_rule(&self) -> StepRule {
        match self.step_kind {
            StepKind::Plain => StepRule::Plain { eta: self.eta },
            StepKind::Normalized => StepRule::Normalized { eta: self.eta_normalized },
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

struct Entry<'a> {
    value: &'a str,
    line: usize,
}

struct Entries<'a> {
    map: HashMap<&'a str, Entry<'a>>,
}

impl<'a> Entries<'a> {
    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|e| e.line)
    }

    fn real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(e) => parse_real(e.value)
                .ok_or_else(|| ConfigError::at(e.line, format!("{key}: expected a real number, got `{}`", e.value))),
        }
    }

    fn real_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        if self.map.contains_key(key) {
            self.real(key, 0.0).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Real satisfying `ok`, with `rule` naming the invariant on failure.
    fn checked(&self, key: &str, default: f64, rule: &str, ok: impl Fn(f64) -> bool) -> Result<f64, ConfigError> {
        let v = self.real(key, default)?;
        if !v.is_finite() || !ok(v) {
            let line = self.line(key).unwrap_or(0);
            return Err(ConfigError::at(line, format!("{rule} violated: {key} = {v}")));
        }
        Ok(v)
    }

    fn integer(&self, key: &str, default: u64, min: u64) -> Result<u64, ConfigError> {
        let v = match self.map.get(key) {
            None => default,
            Some(e) => e.value.parse::<u64>().map_err(|_| {
                ConfigError::at(e.line, format!("{key}: expected a non-negative integer, got `{}`", e.value))
            })?,
        };
        if v < min {
            let line = self.line(key).unwrap_or(0);
            return Err(ConfigError::at(line, format!("{key} >= {min} violated: {key} = {v}")));
        }
        Ok(v)
    }

    fn text(&self, key: &str) -> Option<(&'a str, usize)> {
        self.map.get(key).map(|e| (e.value, e.line))
    }

    /// Line for an error that involves several keys: the last one present.
    fn last_line(&self, keys: &[&str]) -> Option<usize> {
        keys.iter().filter_map(|k| self.line(k)).max()
    }
}

fn parse_real(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().ok()?;
            let den: f64 = den.trim().parse().ok()?;
            (den != 0.0).then(|| num / den)
        }
        None => s.parse().ok(),
    }
}

fn tokenize(text: &str) -> Result<Entries<'_>, ConfigError> {
    let mut map: HashMap<&str, Entry<'_>> = HashMap::new();
    let mut unknown = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("malformed line `{content}`, expected `key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::at(line, format!("malformed line `{content}`, expected `key = value`")));
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            unknown.push((key, line));
            continue;
        }
        if let Some(prev) = map.get(key) {
            return Err(ConfigError::at(line, format!("duplicate key `{key}` (first set on line {})", prev.line)));
        }
        map.insert(key, Entry { value, line });
    }
    if let Some(&(_, first)) = unknown.first() {
        let list: Vec<String> = unknown.iter().map(|(k, l)| format!("`{k}` (line {l})")).collect();
        return Err(ConfigError::at(first, format!("unknown keys: {}", list.join(", "))));
    }
    Ok(Entries { map })
}

/// Parses a configuration text; see the module docs for the format.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let e = tokenize(text)?;
    let positive = |v: f64| v > 0.0;
    let non_negative = |v: f64| v >= 0.0;
    let any = |_: f64| true;

    let market = AnnualMarket {
        rf_annual: e.checked("rf_annual", 1.05, "rf_annual > 1", |v| v > 1.0)?,
        risky_return_annual: e.checked("risky_return_annual", 1.30, "finite risky_return_annual", any)?,
        risky_vol_annual: e.checked("risky_vol_annual", 0.2, "risky_vol_annual >= 0", non_negative)?,
        liability_growth_annual: e.checked("liability_growth_annual", 1.1, "liability_growth_annual > 0", positive)?,
        liability_vol_annual: e.checked("liability_vol_annual", 0.1, "liability_vol_annual >= 0", non_negative)?,
        rho: e.checked("rho", 0.2, "|rho| <= 1", |v| v.abs() <= 1.0)?,
        dt: e.checked("dt", 1.0, "dt > 0", positive)?,
        horizon_years: e.checked("horizon_years", 1.0, "horizon_years > 0", positive)?,
    };
    let periods = market.periods().map_err(|err| ConfigError {
        line: e.last_line(&["dt", "horizon_years"]),
        message: err.to_string(),
    })?;

    let mv = MVProblem {
        d: e.checked("d", 1.4, "finite d", any)?,
        gamma: 0.0,
        x0: e.checked("x0", 1.0, "finite x0", any)?,
        l0: e.checked("l0", 0.1, "finite l0", any)?,
    };
    let gamma = e.real_opt("gamma")?;
    if let (Some(g), Some(line)) = (gamma, e.line("gamma")) {
        if !g.is_finite() {
            return Err(ConfigError::at(line, format!("finite gamma violated: gamma = {g}")));
        }
    }

    let step_kind = match e.text("step_rule") {
        None | Some(("plain", _)) => StepKind::Plain,
        Some(("normalized", _)) => StepKind::Normalized,
        Some((other, line)) => {
            return Err(ConfigError::at(line, format!("step_rule must be `plain` or `normalized`, got `{other}`")))
        }
    };

    let episodes = e.integer("episodes", 5000, 1)? as usize;
    let batch = e.integer("batch", 50, 1)? as usize;
    if batch > episodes {
        return Err(ConfigError {
            line: e.last_line(&["batch", "episodes"]),
            message: format!("batch <= episodes violated: batch = {batch}, episodes = {episodes}"),
        });
    }

    let theta_keys = ["theta1", "theta2", "theta3", "theta4", "theta5"];
    let given: Vec<&str> = theta_keys.iter().copied().filter(|k| e.line(k).is_some()).collect();
    let theta = match given.len() {
        0 => None,
        5 => {
            let mut th = [0.0; 5];
            for (slot, key) in th.iter_mut().zip(theta_keys) {
                *slot = e.checked(key, 0.0, &format!("{key} > 0"), positive)?;
            }
            Some(th)
        }
        _ => {
            return Err(ConfigError {
                line: e.last_line(&theta_keys),
                message: format!("theta1..theta5 must be given together (found only {})", given.join(", ")),
            })
        }
    };

    let seed_policy = SeedPolicy {
        k: [e.checked("seed_k1", 0.0, "finite seed_k1", any)?, e.checked("seed_k2", 0.0, "finite seed_k2", any)?],
        l_scale: e.checked("seed_l_scale", 1.0, "seed_l_scale > 0", positive)?,
        n_base: e.checked("seed_n_base", 1.0, "seed_n_base > 0", positive)?,
    };

    let iterations = match e.line("iterations") {
        Some(_) => Some(e.integer("iterations", 0, 0)? as usize),
        None => None,
    };

    let label = match e.text("label") {
        Some((l, line)) if l.contains([',', '"', '\r', '\n']) => {
            return Err(ConfigError::at(line, format!("label must not contain commas or quotes, got `{l}`")))
        }
        other => other.map(|(l, _)| l.to_string()),
    };

    Ok(RunConfig {
        market,
        periods,
        gamma,
        lambda: e.checked("lambda", 0.1, "lambda > 0", positive)?,
        step_kind,
        eta: e.checked("eta", 1e-20, "eta >= 0", non_negative)?,
        eta_normalized: e.checked("eta_normalized", 1e-3, "eta_normalized >= 0", non_negative)?,
        eta_gamma: e.checked("eta_gamma", 0.05, "eta_gamma >= 0", non_negative)?,
        episodes,
        batch,
        seed: e.integer("seed", 0, 0)?,
        theta_spread: e.checked("theta_spread", 0.2, "0 <= theta_spread < 1", |v| (0.0..1.0).contains(&v))?,
        theta,
        eval_episodes: e.integer("eval_episodes", 100_000, 2)? as usize,
        excess_base: e.checked("excess_base", DEFAULT_EXCESS_BASE, "finite excess_base", any)?,
        seed_policy,
        iterations,
        probe: (
            e.checked("probe_x", mv.x0, "finite probe_x", any)?,
            e.checked("probe_l", mv.l0, "finite probe_l", any)?,
        ),
        mv,
        label,
        output_dir: e.text("output_dir").map(|(p, _)| PathBuf::from(p)),
    })
}
