use margin_audit::*;

// At 1e5 rows the objective's rounding noise exceeds the last Newton gains;
// the line search used to reject them forever and report NoConvergence.
#[test]
fn logistic_converges_on_large_samples() {
    let model = ScmSpec::builtin(BuiltinModel::RandomDiscrete { z_levels: 3, w_levels: 3, seed: 1, no_direct: false }).unwrap();
    let data = model.sample_dataset(100_000, 42, ThresholdSpec::fixed(0.5)).unwrap();
    let set = NuisanceSet::fit(&data, &Target::ALL, &NuisanceConfig::logistic()).unwrap();
    for m in &set.diagnostics().models {
        assert!(m.iterations <= 20, "{} took {} iterations", m.model, m.iterations);
    }
}

#[test]
fn tv_does_not_depend_on_nuisance_family() {
    // TV is a sample contrast; it must not depend on the nuisance family
    let model = ScmSpec::builtin(BuiltinModel::HiringBasic { p0: 0.3, p1: 0.6 }).unwrap();
    let data = model.sample_dataset(50_000, 3, ThresholdSpec::fixed(0.5)).unwrap();
    let freq = decompose_with(&data, &NuisanceConfig::frequency(), DecompositionMode::Thm1).unwrap();
    let logit = decompose_with(&data, &NuisanceConfig::logistic(), DecompositionMode::Thm1).unwrap();
    assert!((freq.tv_yhat.value - logit.tv_yhat.value).abs() < 1e-9);
}
