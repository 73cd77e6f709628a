//! Fixtures shared by the benchmarks.

use margin_audit::{BuiltinModel, ScmSpec, SfmDataset, ThresholdSpec};

pub fn hiring_model() -> ScmSpec {
    ScmSpec::builtin(BuiltinModel::HiringBasic { p0: 0.49, p1: 0.51 }).expect("valid params")
}

pub fn random_model(seed: u64) -> ScmSpec {
    ScmSpec::builtin(BuiltinModel::RandomDiscrete {
        z_levels: 3,
        w_levels: 3,
        seed,
        no_direct: false,
    })
    .expect("valid params")
}

pub fn sample(model: &ScmSpec, n: usize) -> SfmDataset {
    model.sample_dataset(n, 42, ThresholdSpec::fixed(0.5)).expect("sampling succeeds")
}
