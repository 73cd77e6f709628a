use margin_audit::*;
use proptest::prelude::*;

fn dataset(seed: u64, zl: u32, wl: u32, n: usize, t: f64) -> SfmDataset {
    ScmSpec::builtin(BuiltinModel::RandomDiscrete { z_levels: zl, w_levels: wl, seed, no_direct: false })
        .unwrap()
        .sample_dataset(n, seed ^ 0x5eed, ThresholdSpec::fixed(t))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plug_in_identities_hold(seed in 0u64..10_000, zl in 2u32..4, wl in 2u32..4, t in 0.3f64..0.7) {
        let data = dataset(seed, zl, wl, 4_000, t);
        let set = match NuisanceSet::fit(&data, &Target::ALL, &NuisanceConfig::frequency()) {
            Ok(s) => s,
            // small samples can leave a cell empty; nothing to check then
            Err(Error::EmptyCell { .. }) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let v = |k, t| estimate_effect(&data, &set, k, t);
        let ok = Target::ALL.iter().all(|t| v(EffectKind::De, *t).is_ok());
        prop_assume!(ok);
        for t in Target::ALL {
            let parts = v(EffectKind::De, t).unwrap().value - v(EffectKind::Ie, t).unwrap().value - v(EffectKind::Se, t).unwrap().value;
            prop_assert!((tv(&data, t).unwrap().value - parts).abs() <= 1e-10);
        }
        for k in EffectKind::PATHWAYS {
            let gap = v(k, Target::Yhat).unwrap().value - v(k, Target::S).unwrap().value - v(k, Target::M).unwrap().value;
            prop_assert!(gap.abs() <= 1e-10);
        }
    }

    #[test]
    fn swapping_groups_twice_is_identity(seed in 0u64..10_000) {
        let data = dataset(seed, 2, 2, 500, 0.5);
        let back = data.swap_groups().swap_groups();
        prop_assert_eq!(back.x(), data.x());
        prop_assert_eq!(back.schema(), data.schema());
    }

    #[test]
    fn swapping_groups_negates_total_variation(seed in 0u64..10_000) {
        let data = dataset(seed, 3, 2, 800, 0.5);
        for t in Target::ALL {
            let a = tv(&data, t).unwrap().value;
            let b = tv(&data.swap_groups(), t).unwrap().value;
            prop_assert!((a + b).abs() <= 1e-12);
        }
    }

    #[test]
    fn margin_complement_bounds(seed in 0u64..10_000, t in 0.05f64..0.95) {
        let data = dataset(seed, 2, 3, 300, t);
        let (s, yhat, m) = (data.target(Target::S).unwrap(), data.target(Target::Yhat).unwrap(), data.target(Target::M).unwrap());
        for i in 0..data.n() {
            prop_assert!((yhat[i] - s[i] - m[i]).abs() <= 1e-15);
            prop_assert!(m[i] > -1.0 && m[i] <= 1.0);
        }
    }

    #[test]
    fn csv_round_trip(seed in 0u64..10_000) {
        let data = dataset(seed, 3, 3, 200, 0.5);
        let mut buf = vec![];
        data.write_csv(&mut buf).unwrap();
        let back = load_dataset(buf.as_slice(), data.schema()).unwrap();
        for t in Target::ALL {
            prop_assert_eq!(back.target(t).unwrap(), data.target(t).unwrap());
        }
    }
}
