//! Shared fixtures for the estimator benchmarks.

use spotlmm::sim::{simulate_replication, SimConfig};
use spotlmm::{EstimatorConfig, Panel};

/// One simulated day with `d` assets and about `n` observations per asset.
pub fn simulated_panel(d: usize, n: usize) -> Panel {
    let sim = SimConfig {
        d,
        n_target: n,
        seed: 11,
        ..SimConfig::default()
    };
    simulate_replication(&sim, 0).expect("valid simulation config").panel
}

/// Default estimator configuration used by every benchmark.
pub fn config() -> EstimatorConfig {
    EstimatorConfig::default()
}
