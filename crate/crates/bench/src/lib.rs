//! Shared fixtures for the criterion benches under `benches/`.

use mbnoma::channel::{draw_rate_requirements, generate_drop, UserChannel};
use mbnoma::downlink::SystemConfig;
use mbnoma::harness::drop_rng;

/// A drop with the default physical parameters at 30 dBm.
pub struct Fixture {
    pub cfg: SystemConfig,
    pub channels: Vec<UserChannel>,
    pub r_min: Vec<f64>,
}

impl Fixture {
    pub fn new(num_users: usize, num_rf_chains: usize, seed: u64) -> Self {
        let mut cfg = SystemConfig::default();
        cfg.drop.num_users = num_users;
        cfg.drop.num_rf_chains = num_rf_chains;
        cfg.drop.bs_power_dbm = 30.0;
        let mut rng = drop_rng(seed, 0);
        let channels = generate_drop(&cfg.drop, &mut rng).expect("default drop config is valid");
        let r_min = draw_rate_requirements(&cfg.drop, &mut rng);
        Self { cfg, channels, r_min }
    }
}
