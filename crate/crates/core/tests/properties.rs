use proptest::prelude::*;

use cpch::adjustment::{isotonic_cone_projection, sgd_gradient, AdjustmentTable};
use cpch::combining::{order_by_magnitude, CombiningMethod, StatVector};
use cpch::distributions::{normal_cdf, LocationFamily};
use cpch::engine::{mixture_weights, CpchEngine, Evaluation, NullPlugin};
use cpch::multiple_testing::{benjamini_hochberg, storey, storey_pi0, PValueBatch};
use cpch::rng::{open_unit, standard_normal, substream};
use cpch::simulation::{
    gen_covariate, gen_mixture, gen_single, run_fdr_experiment, run_power_curve, run_type1_curve,
    CovariateScenario, FdrConfig, FdrScenario, MixtureScenario, PValueSource, Pipeline, Procedure,
    SignalProfile, SingleScenario, SingleTestConfig, TestKind,
};

const NORMAL: LocationFamily = LocationFamily::Normal;

fn method() -> impl Strategy<Value = CombiningMethod> {
    prop_oneof![Just(CombiningMethod::Fisher), Just(CombiningMethod::Simes)]
}

/// `(m, r, values)` with distinct magnitudes.
fn instance(max_m: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2..=max_m)
        .prop_flat_map(|m| (Just(m), 2..=m, prop::collection::vec(-5.0..5.0f64, m)))
        .prop_filter("ties", |(_, _, v)| {
            let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
            a.sort_by(f64::total_cmp);
            a.windows(2).all(|w| w[1] - w[0] > 1e-6) && a[0] > 1e-6
        })
}

fn evaluation(m: usize, r: usize) -> Evaluation {
    if m - r < 2 {
        Evaluation::Analytic
    } else {
        Evaluation::MonteCarlo { n: 300 }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_in_cone_and_is_idempotent(
        y in prop::collection::vec(-5.0..5.0f64, 2..7),
        r_off in 0usize..5,
    ) {
        let r = 2 + r_off % (y.len() - 1);
        let p = isotonic_cone_projection(&y, r);
        prop_assert!(p[..r - 1].windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p[..r - 1].iter().all(|&x| x >= 0.0));
        prop_assert!(p[r - 1..].iter().all(|&x| x == 0.0));
        prop_assert_eq!(isotonic_cone_projection(&p, r), p);
    }

    // y - P(y) is orthogonal to P(y) and has nonpositive inner product with
    // every generator 1{1..j} of the cone: the optimality conditions.
    #[test]
    fn projection_satisfies_optimality_conditions(
        y in prop::collection::vec(-5.0..5.0f64, 2..7),
        r_off in 0usize..5,
    ) {
        let r = 2 + r_off % (y.len() - 1);
        let p = isotonic_cone_projection(&y, r);
        let resid: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
        let dot: f64 = resid.iter().zip(&p).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() < 1e-9, "{dot}");
        let mut partial = 0.0;
        for x in &resid[..r - 1] {
            partial += x;
            prop_assert!(partial < 1e-9, "{partial}");
        }
    }

    #[test]
    fn weights_are_normalised((m, r, v) in instance(5)) {
        let d = order_by_magnitude(&StatVector::normal(v).unwrap(), r).unwrap();
        let w = mixture_weights(&d, &NullPlugin::mle(&d), NORMAL).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(w.len(), (m - r + 2..=m).product::<usize>());
    }

    #[test]
    fn pvalue_is_permutation_and_sign_invariant((m, r, v) in instance(4), method in method(), rot in 0usize..4) {
        let engine = CpchEngine::new(m, r, method, NORMAL).unwrap();
        let ev = evaluation(m, r);
        let base = engine.pvalue(&v, ev, 3).unwrap().pvalue;
        let mut perm = v.clone();
        perm.rotate_left(rot % m);
        prop_assert_eq!(engine.pvalue(&perm, ev, 3).unwrap().pvalue, base);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        prop_assert_eq!(engine.pvalue(&neg, ev, 3).unwrap().pvalue, base);
        let d = order_by_magnitude(&StatVector::normal(v.clone()).unwrap(), r).unwrap();
        let mut flipped = v.clone();
        flipped[d.perm()[0]] = -flipped[d.perm()[0]];
        prop_assert_eq!(engine.pvalue(&flipped, ev, 3).unwrap().pvalue, base);
    }

    #[test]
    fn pvalues_are_valid_and_reproducible((m, r, v) in instance(4), method in method(), seed in any::<u64>()) {
        let engine = CpchEngine::new(m, r, method, NORMAL).unwrap();
        let n = 200;
        let a = engine.pvalue(&v, Evaluation::MonteCarlo { n }, seed).unwrap();
        prop_assert!(a.pvalue >= 1.0 / (n as f64 + 1.0) && a.pvalue <= 1.0);
        prop_assert_eq!(a, engine.pvalue(&v, Evaluation::MonteCarlo { n }, seed).unwrap());
    }

    #[test]
    fn bh_is_monotone_in_pvalues(p in prop::collection::vec(0.0..1.0f64, 1..60), i in any::<prop::sample::Index>(), q in 0.01..0.5f64) {
        let before = benjamini_hochberg(&PValueBatch::new(p.clone()).unwrap(), q).unwrap();
        let mut lowered = p.clone();
        let j = i.index(p.len());
        lowered[j] *= 0.5;
        let after = benjamini_hochberg(&PValueBatch::new(lowered).unwrap(), q).unwrap();
        prop_assert!(before.iter().all(|k| after.contains(k)));
        let looser = benjamini_hochberg(&PValueBatch::new(p).unwrap(), (q * 1.5).min(0.99)).unwrap();
        prop_assert!(before.iter().all(|k| looser.contains(k)));
    }

    #[test]
    fn storey_reduces_to_bh_when_pi0_is_one(p in prop::collection::vec(0.0..1.0f64, 1..60), q in 0.01..0.5f64) {
        let batch = PValueBatch::new(p).unwrap();
        let pi0 = storey_pi0(&batch, 0.5).unwrap();
        prop_assert!(pi0 > 0.0 && pi0 <= 1.0);
        let st = storey(&batch, q, 0.5).unwrap();
        let bh = benjamini_hochberg(&batch, q).unwrap();
        if pi0 == 1.0 {
            prop_assert_eq!(st, bh);
        } else {
            prop_assert!(bh.iter().all(|k| st.contains(k)));
        }
    }
}

#[test]
fn storey_pi0_examples() {
    let batch = PValueBatch::new(vec![0.001, 0.2, 0.6, 0.8, 0.9, 0.3]).unwrap();
    // (1 + 3) / (6 * 0.5)
    assert_eq!(storey_pi0(&batch, 0.5).unwrap(), 1.0);
    let batch = PValueBatch::new(vec![0.001, 0.002, 0.003, 0.004, 0.6, 0.01, 0.02, 0.03]).unwrap();
    assert!((storey_pi0(&batch, 0.5).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn bh_controls_fdr_on_independent_pvalues() {
    let (reps, m0, m1, q) = (500, 150, 50, 0.1);
    let mut fdp = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut rng = substream(12, &[rep as u64]);
        let mut p: Vec<f64> = (0..m0).map(|_| open_unit(&mut rng)).collect();
        p.extend((0..m1).map(|_| 1.0 - normal_cdf(standard_normal(&mut rng) + 2.5)));
        let rej = benjamini_hochberg(&PValueBatch::new(p).unwrap(), q).unwrap();
        let false_rej = rej.iter().filter(|&&j| j < m0).count();
        fdp.push(false_rej as f64 / rej.len().max(1) as f64);
    }
    let mean = fdp.iter().sum::<f64>() / reps as f64;
    let sd = (fdp.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    // BH controls at pi0 q
    let bound = q * m0 as f64 / (m0 + m1) as f64;
    assert!(
        mean <= bound + 2.0 * sd / (reps as f64).sqrt(),
        "{mean} vs {bound}"
    );
}

#[test]
fn gradient_matches_finite_difference() {
    let engine = CpchEngine::new(2, 2, CombiningMethod::Fisher, NORMAL).unwrap();
    let n = 1_000_000;
    let (level, h) = (0.05, 0.05);
    let mut rng = substream(21, &[]);
    let batch: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![standard_normal(&mut rng), standard_normal(&mut rng)])
        .collect();
    for t2 in [1.0, 3.0] {
        let theta = [0.0, t2];
        let g = sgd_gradient(&engine, &theta, level, &batch, Evaluation::Analytic, 0).unwrap();
        let reject = |z: &[f64], shift: f64| {
            let t = [z[0], z[1] + t2 + shift];
            engine.pvalue(&t, Evaluation::Analytic, 0).unwrap().pvalue < level
        };
        let (mut s1, mut s2, mut g2) = (0.0, 0.0, 0.0);
        for z in &batch {
            let d = f64::from(u8::from(reject(z, h))) - f64::from(u8::from(reject(z, -h)));
            s1 += d;
            s2 += d * d;
            if reject(z, 0.0) {
                g2 += z[1] * z[1];
            }
        }
        let nf = n as f64;
        let fd = s1 / nf / (2.0 * h);
        let fd_se = ((s2 / nf - (s1 / nf).powi(2)) / nf).sqrt() / (2.0 * h);
        let g_se = ((g2 / nf - g[1] * g[1]) / nf).sqrt();
        let se = (fd_se * fd_se + g_se * g_se).sqrt();
        assert!(
            (g[1] - fd).abs() <= 3.0 * se,
            "theta_2 = {t2}: {} vs {fd} (se {se})",
            g[1]
        );
        // the size surface is even in theta_1
        assert!(g[0].abs() <= 3.0 * g_se.max(1e-4), "{}", g[0]);
    }
}

#[test]
fn single_generator_means() {
    let s = SingleScenario::new(2, 2, 1, 4.0, 100_000);
    let data = gen_single(&s, 8).unwrap();
    let mean = data.iter().map(|v| v.values()[0]).sum::<f64>() / data.len() as f64;
    assert!((mean - 4.0).abs() <= 0.01, "{mean}");
    let ramp = SingleScenario::new(2, 2, 2, 3.0, 1).with_profile(SignalProfile::Ramp);
    assert_eq!(ramp.true_theta(), [1.5, 3.0]);
    let zero = SingleScenario::new(3, 2, 3, 0.0, 10);
    assert_eq!(zero.true_theta(), [0.0; 3]);
}

#[test]
fn mixture_generator_fractions() {
    let s = MixtureScenario {
        hypotheses: 100_000,
        pi1: 0.3,
        w: 1.0,
        theta: 2.0,
        m: 3,
    };
    let b = gen_mixture(&s, 9).unwrap();
    let full = b.r_star.iter().filter(|&&k| k == 3).count() as f64 / 1e5;
    assert!((full - 0.3).abs() <= 0.01, "{full}");
    assert!(b.r_star.iter().all(|&k| k == 0 || k == 3));
    let null = gen_mixture(
        &MixtureScenario {
            pi1: 0.0,
            hypotheses: 500,
            ..s
        },
        9,
    )
    .unwrap();
    assert!(null.r_star.iter().all(|&k| k == 0));
}

#[test]
fn covariate_generator_fractions() {
    let b = gen_covariate(&CovariateScenario::new(100_000, 2.0), 10).unwrap();
    let x = b.covariates.as_ref().unwrap();
    let high = x.iter().filter(|&&v| v >= 0.95).count();
    assert!((high as f64 / 1e5 - 0.05).abs() <= 0.005);
    let (mut low, mut both) = (0usize, 0usize);
    for (xi, &k) in x.iter().zip(&b.r_star) {
        if *xi >= 0.95 {
            assert_eq!(k, 2);
        } else {
            low += 1;
            both += usize::from(k == 2);
        }
    }
    let frac = both as f64 / low as f64;
    let se = (0.01 * 0.99 / low as f64).sqrt();
    assert!((frac - 0.01).abs() <= 3.0 * se, "{frac}");
}

#[test]
fn oracle_is_calibrated_on_a_null_grid() {
    let grid: Vec<SingleScenario> = [0.0, 0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&t| SingleScenario::new(2, 2, 1, t, 10_000))
        .collect();
    for alpha in [0.01, 0.05, 0.1] {
        let cfg = SingleTestConfig::new(CombiningMethod::Fisher, alpha);
        for row in run_type1_curve(&grid, &[TestKind::Oracle], &cfg, 13).unwrap() {
            let se = (alpha * (1.0 - alpha) / row.reps as f64).sqrt();
            assert!(
                (row.value - alpha).abs() <= 3.0 * se,
                "alpha {alpha}, theta {}: {}",
                row.theta,
                row.value
            );
        }
    }
}

#[test]
fn null_points_and_limits() {
    let cfg = SingleTestConfig::new(CombiningMethod::Fisher, 0.05);
    let tests = [
        TestKind::Standard,
        TestKind::Marginal,
        TestKind::Unadjusted,
        TestKind::Adjusted,
    ];
    // theta = 0 with every coordinate "non-null" is still a null point
    let zero = [SingleScenario::new(2, 2, 2, 0.0, 10_000)];
    for row in run_power_curve(&zero, &tests, &cfg, 14).unwrap() {
        assert!(row.value <= 0.06, "{}: {}", row.test, row.value);
    }
    let grid = [
        SingleScenario::new(2, 2, 1, 0.0, 10_000),
        SingleScenario::new(2, 2, 1, 50.0, 10_000),
    ];
    let rows = run_type1_curve(&grid, &[TestKind::Standard, TestKind::Marginal], &cfg, 15).unwrap();
    let get = |test: &str, theta: f64| {
        rows.iter()
            .find(|x| x.test == test && x.theta == theta)
            .unwrap()
            .value
    };
    assert!(get("marginal", 0.0) < 0.02);
    assert!((get("marginal", 50.0) - 0.05).abs() <= 0.01);
    assert!((get("standard", 50.0) - 0.05).abs() <= 0.007);
}

#[test]
fn conditional_test_gains_power_at_low_signal() {
    let grid: Vec<SingleScenario> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&t| SingleScenario::new(2, 2, 2, t, 10_000).with_profile(SignalProfile::Ramp))
        .collect();
    let cfg = SingleTestConfig::new(CombiningMethod::Fisher, 0.05);
    let rows = run_power_curve(&grid, &[TestKind::Adjusted, TestKind::Standard], &cfg, 16).unwrap();
    for pair in rows.chunks(2) {
        assert!(
            pair[0].value >= pair[1].value,
            "theta {}: {} vs {}",
            pair[0].theta,
            pair[0].value,
            pair[1].value
        );
    }
}

#[test]
fn misspecified_matches_properly_specified_on_t_data() {
    let t10 = LocationFamily::StudentT { df: 10.0 };
    let grid: Vec<SingleScenario> = (0..3)
        .map(|k| SingleScenario::new(3, 3, k, 4.0, 5_000).with_family(t10))
        .collect();
    let cfg = SingleTestConfig::new(CombiningMethod::Fisher, 0.05);
    let rows = run_type1_curve(
        &grid,
        &[TestKind::Misspecified, TestKind::Adjusted],
        &cfg,
        17,
    )
    .unwrap();
    for pair in rows.chunks(2) {
        let se = (pair[0].stderr.powi(2) + pair[1].stderr.powi(2)).sqrt();
        assert!(
            pair[0].value <= pair[1].value + 2.0 * se,
            "r* = {}",
            pair[0].r_star
        );
    }
}

#[test]
fn fdr_edge_scenarios() {
    let pipelines: Vec<Pipeline> = [PValueSource::Standard, PValueSource::Cpch]
        .iter()
        .flat_map(|&source| {
            [Procedure::Bh, Procedure::Storey { lambda: 0.5 }]
                .map(|procedure| Pipeline { source, procedure })
        })
        .collect();
    let cfg = FdrConfig {
        r: 2,
        method: CombiningMethod::Fisher,
        q: 0.1,
        replicates: 20,
        evaluation: Evaluation::Auto { n: 200 },
    };
    let null = FdrScenario::Mixture(MixtureScenario {
        hypotheses: 300,
        pi1: 0.0,
        w: 0.9,
        theta: 3.0,
        m: 3,
    });
    for row in run_fdr_experiment(&null, &pipelines, &cfg, 18).unwrap() {
        if row.metric == "fdr" {
            assert!(
                row.value <= 0.1 + 2.0 * row.stderr,
                "{}: {}",
                row.test,
                row.value
            );
        }
    }
    let flat = FdrScenario::Mixture(MixtureScenario {
        hypotheses: 300,
        pi1: 0.5,
        w: 0.9,
        theta: 0.0,
        m: 3,
    });
    for row in run_fdr_experiment(&flat, &pipelines, &cfg, 19).unwrap() {
        if row.metric == "power" {
            assert!(row.value <= 0.1, "{}: {}", row.test, row.value);
        }
    }
}

#[test]
fn bundled_table_is_valid() {
    let t = AdjustmentTable::bundled();
    t.validate().unwrap();
    assert!(t.rows().iter().all(|x| x.a_alpha <= x.alpha));
}
