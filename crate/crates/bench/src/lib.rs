//! Shared fixtures for the benchmarks in `benches/`.

use crm_core::envs::generate;
use crm_core::train::build_initial_policy;
use crm_core::{Family, LoggedDataset, MeanKind, PolicyModel, PolicySpec, PotentialEnv, PotentialKind};

/// A logged moons dataset and a CCP lognormal policy initialized near its logging policy.
pub fn fixture(n: usize, anchors: usize) -> (LoggedDataset, PolicyModel) {
    let env = PotentialEnv::new(PotentialKind::Noisymoons);
    let (ds, _) = generate(&env, n, 7).expect("valid environment");
    let mut spec = PolicySpec::new(Family::Lognormal, MeanKind::Ccp);
    spec.ccp.n_anchors = anchors;
    let pm = build_initial_policy(&spec, &ds, &crm_core::Environment::logging_description(&env), 7)
        .expect("valid spec");
    (ds, pm)
}
