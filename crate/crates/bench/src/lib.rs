//! Shared fixtures for the benchmarks.

use gjn_core::{DistributionSpec, NetworkSpec};

/// Three stations in tandem with feedback from the last to the first, mixed
/// service laws, at moderate load.
pub fn tandem_with_feedback() -> NetworkSpec {
    NetworkSpec::new(
        vec![Some(DistributionSpec::exponential(0.4)), None, None],
        vec![
            DistributionSpec::erlang(2, 2.0),
            DistributionSpec::hyperexponential(vec![0.5, 0.5], vec![2.0, 2.0 / 3.0]),
            DistributionSpec::uniform(0.5, 1.0),
        ],
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.2, 0.0, 0.0]],
    )
    .expect("valid network")
}
