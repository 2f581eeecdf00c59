use mbnoma::channel::{generate_drop, UserChannel};
use mbnoma::downlink::SystemConfig;
use mbnoma::grouping::{coalition_formation, fit_to_rf_chains, is_stable, ConditionalEvaluator, GroupingParams};
use mbnoma::harness::drop_rng;
use proptest::prelude::*;

fn evaluator(k: usize, n_rf: usize, m_bs: usize, seed: u64) -> ConditionalEvaluator {
    let mut cfg = SystemConfig::default();
    cfg.drop.num_users = k;
    cfg.drop.num_rf_chains = n_rf;
    cfg.drop.m_bs = m_bs;
    cfg.drop.m_min = 2;
    let channels = generate_drop(&cfg.drop, &mut drop_rng(seed, 0)).unwrap();
    let los: Vec<UserChannel> = channels.iter().map(UserChannel::los_only).collect();
    ConditionalEvaluator::new(&los, GroupingParams::new(&cfg.drop, &cfg.grouping)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn formation_is_monotone_valid_and_stable(
        k in 2usize..=9,
        extra_rf in 0usize..4,
        m_bs in prop::sample::select(vec![16usize, 32, 64, 128]),
        seed in any::<u64>(),
    ) {
        let n_rf = (k.div_ceil(2) + extra_rf).min(k);
        let ev = evaluator(k, n_rf, m_bs, seed);
        let out = coalition_formation(&ev).unwrap();

        prop_assert_eq!(out.trace.len(), out.operations + 1);
        for w in out.trace.windows(2) {
            prop_assert!(w[1].value > w[0].value, "trace not increasing: {:?}", out.trace);
        }
        prop_assert!(out.partition.validate(k, m_bs, 2).is_ok());
        prop_assert!((ev.conditional_sum_rate(&out.partition) - out.value).abs() <= 1e-9 * out.value.abs().max(1.0));
        prop_assert!(is_stable(&ev, &out.partition));

        let (fitted, value, _) = fit_to_rf_chains(&ev, &out.partition);
        prop_assert!(fitted.len() <= n_rf);
        prop_assert!(fitted.validate(k, m_bs, 2).is_ok());
        prop_assert!((ev.conditional_sum_rate(&fitted) - value).abs() <= 1e-9 * value.abs().max(1.0));
        if out.partition.len() <= n_rf {
            prop_assert_eq!(fitted, out.partition);
        }
    }

    #[test]
    fn every_user_lands_in_exactly_one_coalition(k in 1usize..=8, seed in any::<u64>()) {
        let ev = evaluator(k, k.div_ceil(2), 32, seed);
        let p = coalition_formation(&ev).unwrap().partition;
        for u in 0..k {
            let hits = p.coalitions().iter().filter(|c| c.contains(u)).count();
            prop_assert_eq!(hits, 1);
        }
        for c in p.coalitions() {
            prop_assert!(!c.is_empty() && c.len() <= 2);
            prop_assert!(c.antennas().iter().sum::<usize>() <= 32);
            if c.is_pair() {
                prop_assert!(c.antennas().iter().all(|&m| m >= 2));
            }
        }
    }
}
