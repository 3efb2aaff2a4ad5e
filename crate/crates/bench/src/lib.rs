//! Fixtures shared by the benchmarks.

use explq::market::{discretize, AnnualMarket, DiscreteMarket};

/// Default market rebalanced every `dt` years over `horizon_years`.
pub fn market(dt: f64, horizon_years: f64) -> DiscreteMarket {
    let annual = AnnualMarket {
        dt,
        horizon_years,
        ..AnnualMarket::default()
    };
    discretize(&annual, 0.1).expect("benchmark market is valid")
}

/// The four rebalancing schedules used throughout.
pub fn schedules() -> [(&'static str, DiscreteMarket); 4] {
    [
        ("monthly_1y", market(1.0 / 12.0, 1.0)),
        ("monthly_5y", market(1.0 / 12.0, 5.0)),
        ("daily_halfy", market(1.0 / 252.0, 0.5)),
        ("daily_1y", market(1.0 / 252.0, 1.0)),
    ]
}
