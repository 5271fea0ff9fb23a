use lap_core::lap::{depression_factor, gradient_scale_factor, scale_gradients};
use lap_core::{GradientSet, LapParams, Matrix, Rng, SourceId, SourceRegistry};
use proptest::prelude::*;

fn params(h: usize, leniency: f64) -> LapParams {
    LapParams {
        leniency,
        history_length: h,
        ..LapParams::default()
    }
}

/// Weighted mean/std by explicit summation over every (source, step) term.
fn naive_stats(histories: &[Vec<f64>], distrust: &[u64], exclude: usize) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (s, h) in histories.iter().enumerate() {
        if s == exclude {
            continue;
        }
        for &l in h {
            let w = 1.0 / (1.0 + distrust[s] as f64);
            num += w * l;
            den += w;
        }
    }
    let mu = num / den;
    let mut var = 0.0;
    for (s, h) in histories.iter().enumerate() {
        if s == exclude {
            continue;
        }
        for &l in h {
            var += (l - mu) * (l - mu) / (1.0 + distrust[s] as f64);
        }
    }
    (mu, (var / den).sqrt())
}

fn filled(histories: &[Vec<f64>], distrust: &[u64]) -> SourceRegistry {
    let h = histories[0].len();
    let mut reg = SourceRegistry::with_sources(params(h, 0.8), histories.len()).unwrap();
    for (s, hist) in histories.iter().enumerate() {
        for &l in hist {
            reg.record_loss(SourceId(s as u32), l).unwrap();
        }
    }
    for (s, &r) in distrust.iter().enumerate() {
        reg.set_distrust(SourceId(s as u32), r).unwrap();
    }
    reg
}

fn registry_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u64>)> {
    (2usize..=5, 2usize..=10).prop_flat_map(|(n, h)| {
        (
            proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, h), n),
            proptest::collection::vec(0u64..100, n),
        )
    })
}

proptest! {
    #[test]
    fn weighted_stats_match_naive_sum((histories, distrust) in registry_case()) {
        let reg = filled(&histories, &distrust);
        for z in 0..histories.len() {
            let (mu, sd) = naive_stats(&histories, &distrust, z);
            let got = reg.weighted_other_stats(SourceId(z as u32)).unwrap();
            prop_assert!((got.mean - mu).abs() < 1e-10);
            prop_assert!((got.std - sd).abs() < 1e-10);
            prop_assert!(got.std >= 0.0);
        }
    }

    #[test]
    fn distrust_follows_clamped_walk(
        seed in any::<u64>(),
        n in 2usize..5,
        h in 2usize..6,
        steps in 1usize..200,
    ) {
        let mut rng = Rng::new(seed);
        let mut reg = SourceRegistry::with_sources(params(h, 0.5), n).unwrap();
        let mut expected = vec![0i64; n];
        for _ in 0..steps {
            let s = rng.below(n);
            let loss = rng.uniform(0.0, 1.0 + s as f64);
            if let Some(upd) = reg.record_loss(SourceId(s as u32), loss).unwrap() {
                let delta = if upd.source_mean < upd.threshold { -1 } else { 1 };
                expected[s] = (expected[s] + delta).max(0);
            }
            for (i, &e) in expected.iter().enumerate() {
                prop_assert_eq!(reg.distrust(SourceId(i as u32)).unwrap() as i64, e);
            }
        }
    }

    #[test]
    fn depression_is_bounded_and_monotone(strength in 0.01f64..10.0, r in 1u64..3000) {
        let d0 = depression_factor(strength, r);
        let d1 = depression_factor(strength, r + 1);
        prop_assert!((0.0..=1.0).contains(&d0));
        let s0 = gradient_scale_factor(strength, r);
        let s1 = gradient_scale_factor(strength, r + 1);
        prop_assert!(s0 > 0.0 && s0 <= 1.0);
        // strictly increasing depression, seen through the exact scale
        prop_assert!(s1 < s0 || s1 == f64::MIN_POSITIVE);
        prop_assert!(d1 >= d0);
    }

    #[test]
    fn scaling_never_grows_gradients(
        values in proptest::collection::vec(-100.0f64..100.0, 1..20),
        d in 0.0f64..1.0,
    ) {
        let g = GradientSet::new(vec![Matrix::from_vec(1, values.len(), values).unwrap()]);
        let scaled = scale_gradients(&g, d).unwrap();
        prop_assert!(scaled.norm() <= g.norm());
        prop_assert!((scaled.norm() - (1.0 - d) * g.norm()).abs() <= 1e-12 * g.norm().max(1.0));
    }

    #[test]
    fn raising_distrust_reduces_influence(
        (histories, distrust) in registry_case(),
        bump in 1u64..50,
    ) {
        // make source 1 the clear outlier so its weight visibly drives the mean
        let mut histories = histories;
        for l in histories[1].iter_mut() {
            *l += 100.0;
        }
        prop_assume!(histories.len() >= 3);
        let before = filled(&histories, &distrust).weighted_other_stats(SourceId(0)).unwrap();
        let mut raised = distrust.clone();
        raised[1] += bump;
        let after = filled(&histories, &raised).weighted_other_stats(SourceId(0)).unwrap();
        prop_assert!(after.mean < before.mean);
    }

    #[test]
    fn recovered_sources_lose_distrust_one_per_step(start in 0u64..40, k in 0usize..60) {
        let mut reg = SourceRegistry::with_sources(params(3, 0.8), 3).unwrap();
        for s in 0..3u32 {
            for _ in 0..3 {
                reg.record_loss(SourceId(s), 5.0 + s as f64).unwrap();
            }
        }
        reg.set_distrust(SourceId(0), start).unwrap();
        for _ in 0..k {
            reg.record_loss(SourceId(0), 0.0).unwrap();
        }
        let expected = start - (k as u64).min(start);
        prop_assert_eq!(reg.distrust(SourceId(0)).unwrap(), expected);
    }
}

#[test]
fn shifted_source_is_separated() {
    let mut separated = 0;
    let seeds = 100;
    for seed in 0..seeds {
        let mut rng = Rng::new(seed);
        let mut reg = SourceRegistry::with_sources(params(25, 1.0), 2).unwrap();
        // losses must be non-negative: shift both streams by the same offset
        for step in 0..10_000 {
            let s = step % 2;
            let loss = 10.0 + 3.0 * s as f64 + rng.normal();
            reg.record_loss(SourceId(s as u32), loss).unwrap();
        }
        if reg.distrust(SourceId(1)).unwrap() > reg.distrust(SourceId(0)).unwrap() {
            separated += 1;
        }
    }
    assert!(separated >= 99, "{separated} of {seeds} seeds separated");
}

#[test]
fn distrust_doubling_at_r200() {
    let d = depression_factor(1.0, 200);
    // tanh(1)^2 evaluated to 30 digits: 0.580025658385973930605503260958
    assert!((d - 0.580_025_658_385_973_9).abs() < 1e-15);
}
