use proptest::prelude::*;

use levy_cox::crm::CrmSimulator;
use levy_cox::data::{read_csv, Dataset, SurvivalRecord};
use levy_cox::kernel::{Exposure, Kernel};
use levy_cox::levy::{tilt, BaseMeasure, LevyFamily, Tilt};
use levy_cox::partition::{crp_predictives, enumerate_partitions, esf_log_prob, Eppf, Ewens, Partition, Seat};
use levy_cox::posterior::ModelSpec;
use levy_cox::quadrature::QuadConfig;
use levy_cox::samplers::{replicate_rng, streams, Sampler};
use statrs::function::gamma::ln_gamma;

fn kernel_strategy() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        Just(Kernel::DykstraLaud),
        Just(Kernel::Exponential),
        (0.1f64..3.0).prop_map(|bandwidth| Kernel::Rectangular { bandwidth }),
    ]
}

fn records(max: usize) -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((0.01f64..8.0, any::<bool>()), 1..max)
}

fn labels(max: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..4, 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn esf_normalises_for_any_mass(theta in 0.05f64..20.0, n in 1usize..=7) {
        let total: f64 = enumerate_partitions(n).unwrap().map(|p| esf_log_prob(&p, theta).unwrap().exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn esf_predictives_are_closed_form(theta in 0.05f64..20.0, l in labels(9)) {
        let p = Partition::from_labels(&l);
        let (q0, qs) = crp_predictives(&Ewens::new(theta).unwrap(), &p).unwrap();
        let d = theta + p.n() as f64;
        prop_assert!((q0 - theta / d).abs() < 1e-12);
        for (q, e) in qs.iter().zip(p.sizes()) {
            prop_assert!((q - e as f64 / d).abs() < 1e-12);
        }
    }

    #[test]
    fn predictive_ratios_match_the_eppf(theta in 0.1f64..5.0, l in labels(7)) {
        let e = Ewens::new(theta).unwrap();
        let p = Partition::from_labels(&l);
        let base = e.log_prob(&p.sizes());
        let (q0, qs) = crp_predictives(&e, &p).unwrap();
        let grown = e.log_prob(&p.grow(Seat::New).unwrap().sizes());
        prop_assert!(((grown - base).exp() - q0).abs() < 1e-12);
        for (j, q) in qs.iter().enumerate() {
            let g = e.log_prob(&p.grow(Seat::Existing(j)).unwrap().sizes());
            prop_assert!(((g - base).exp() - q).abs() < 1e-12);
        }
    }

    #[test]
    fn partitions_are_canonical(l in labels(10)) {
        let p = Partition::from_labels(&l);
        let relabelled: Vec<usize> = l.iter().map(|x| 7 - x).collect();
        prop_assert_eq!(&Partition::from_labels(&relabelled), &p);
        prop_assert_eq!(Partition::from_labels(&p.labels()), p.clone());
        prop_assert_eq!(p.sizes().iter().sum::<usize>(), l.len());
    }

    #[test]
    fn tilting_shifts_the_generalized_gamma_rate(
        alpha in -2.0f64..0.95, b in 0.01f64..5.0, g in 0.0f64..5.0, l in 1usize..=5
    ) {
        let fam = LevyFamily::generalized_gamma(alpha, b).unwrap();
        let shifted = LevyFamily::generalized_gamma(alpha, b + g).unwrap();
        let a = fam.log_cumulant(l, g, 0.3).unwrap();
        let c = shifted.log_cumulant(l, 0.0, 0.3).unwrap();
        prop_assert!((a - c).abs() < 1e-12 * a.abs().max(1.0));
        let t = tilt(&fam, Tilt::Constant(g)).as_family().unwrap();
        prop_assert!((t.log_cumulant(l, 0.0, 0.3).unwrap() - a).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn gamma_process_cumulants(g in 0.0f64..20.0, l in 1usize..=6) {
        let fam = LevyFamily::generalized_gamma(0.0, 1.0).unwrap();
        let expect = ln_gamma(l as f64) - l as f64 * (1.0 + g).ln();
        prop_assert!((fam.log_cumulant(l, g, 0.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn first_cumulant_falls_with_exposure(c in 0.2f64..6.0, alpha in -1.5f64..0.9, g in 0.0f64..10.0, dg in 0.0f64..5.0) {
        for fam in [LevyFamily::generalized_gamma(alpha, 0.5).unwrap(), LevyFamily::beta(c).unwrap()] {
            let a = fam.log_cumulant(1, g, 0.0).unwrap();
            let b = fam.log_cumulant(1, g + dg, 0.0).unwrap();
            prop_assert!(b <= a + 1e-12);
        }
    }

    #[test]
    fn cumulative_kernels_are_monotone(k in kernel_strategy(), y in 0.0f64..5.0, t in 0.0f64..10.0, dt in 0.0f64..3.0) {
        prop_assert_eq!(k.cumulative(0.0, y), 0.0);
        prop_assert!(k.cumulative(t + dt, y) >= k.cumulative(t, y));
    }

    #[test]
    fn exposure_ignores_record_order(k in kernel_strategy(), pairs in records(12), y in 0.0f64..6.0, seed in any::<u64>()) {
        let data = Dataset::from_pairs(&pairs).unwrap();
        let mut shuffled = pairs.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
        }
        let a = Exposure::from_data(k, &data).eval(y);
        let b = Exposure::from_data(k, &Dataset::from_pairs(&shuffled).unwrap()).eval(y);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn adding_a_censored_record_never_raises_the_tilted_mean(
        pairs in records(8), extra in 0.01f64..8.0, y in 0.0f64..6.0, alpha in -1.0f64..0.9
    ) {
        let fam = LevyFamily::generalized_gamma(alpha, 1.0).unwrap();
        let data = Dataset::from_pairs(&pairs).unwrap();
        let more = data.concat(&Dataset::from_pairs(&[(extra, false)]).unwrap());
        let g0 = Exposure::from_data(Kernel::DykstraLaud, &data).eval(y);
        let g1 = Exposure::from_data(Kernel::DykstraLaud, &more).eval(y);
        prop_assert!(g1 >= g0);
        prop_assert!(fam.log_cumulant(1, g1, y).unwrap() <= fam.log_cumulant(1, g0, y).unwrap());
    }

    #[test]
    fn csv_round_trip(pairs in prop::collection::vec((1e-300f64..1e300, any::<bool>()), 1..20)) {
        let data = Dataset::from_pairs(&pairs).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let (back, _) = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.records(), data.records());
        prop_assert_eq!(back.n(), data.records().iter().filter(|r| r.event).count());
        prop_assert_eq!(back.m(), data.records().len());
    }

    #[test]
    fn halving_the_jump_floor_keeps_every_count(seed in any::<u64>(), alpha in 0.0f64..0.8) {
        let fam = LevyFamily::generalized_gamma(alpha, 1.0).unwrap();
        let sim = CrmSimulator::untilted(fam, BaseMeasure::lebesgue(0.0, 1.0), QuadConfig::default()).unwrap();
        let coarse = sim.prepare(0.02).unwrap();
        let fine = sim.prepare(0.01).unwrap();
        let a = sim.draw_tilted(&coarse, &mut replicate_rng(seed, streams::CRM, 0)).unwrap();
        let b = sim.draw_tilted(&fine, &mut replicate_rng(seed, streams::CRM, 0)).unwrap();
        prop_assert!(b.atoms.len() >= a.atoms.len());
        prop_assert!(a.atoms.iter().all(|&(s, _)| s >= 0.02 && s.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn identical_times_are_exchangeable(t in 0.2f64..3.0, u in 0.2f64..3.0, alpha in 0.0f64..0.8) {
        let data = Dataset::from_pairs(&[(t, true), (u, true), (t, true), (4.0, false)]).unwrap();
        let m = ModelSpec::new(
            Kernel::DykstraLaud,
            LevyFamily::generalized_gamma(alpha, 1.0).unwrap(),
            BaseMeasure::lebesgue(0.0, 5.0),
            &data,
        )
        .unwrap();
        let post = m.exact_partition_posterior().unwrap();
        // events 0 and 2 share a time: swapping them maps the posterior to itself
        for e in &post.entries {
            let swapped: Vec<usize> = {
                let l = e.partition.labels();
                vec![l[2], l[1], l[0]]
            };
            let q = post.probability(&Partition::from_labels(&swapped));
            prop_assert!((q - e.probability).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_wcr_sums_recover_the_posterior(alpha in -1.0f64..0.9, c in 0.5f64..4.0, beta in any::<bool>()) {
        let fam = if beta { LevyFamily::beta(c).unwrap() } else { LevyFamily::generalized_gamma(alpha, 1.0).unwrap() };
        let data = Dataset::from_pairs(&[(0.5, true), (1.2, true), (1.9, false), (2.4, true), (3.1, true)]).unwrap();
        let m = ModelSpec::new(Kernel::Exponential, fam, BaseMeasure::lebesgue(0.0, 4.0), &data).unwrap();
        let s = Sampler::new(&m);
        let post = m.exact_partition_posterior().unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for p in enumerate_partitions(m.n()).unwrap() {
            let (ln_q, ln_l) = s.wcr_path_probability(&p).unwrap();
            let w = (ln_q + ln_l - post.log_normalizer).exp();
            num += w * p.num_cells() as f64;
            den += w;
        }
        let exact = post.expectation(|p| p.num_cells() as f64);
        prop_assert!((num / den - exact).abs() < 1e-8);
    }
}

#[test]
fn censor_times() {
    assert_eq!(SurvivalRecord { time: 2.5, event: false }.censor_time(), 2.5);
    assert_eq!(SurvivalRecord { time: 2.5, event: true }.censor_time(), f64::INFINITY);
}
