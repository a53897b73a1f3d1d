use num_traits::{One, Zero};
use proptest::prelude::*;

use rla_core::errormodels::{generate, ErrorModel, ScenarioSpec};
use rla_core::riskengine::step_multiplier_exact;
use rla_core::simharness::{run_experiment, ExperimentConfig, Method, Methods, Sweep};
use rla_core::{run_audit, AuditConfig, AuditDecision, AuditTarget, Rational};

/// Every ordering of `pop`, as index permutations.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Mean of the test statistic after every draw when the population mean is
/// exactly 1/2, over all orderings.
fn expected_t(pop: &[Rational], upper: Rational) -> Vec<Rational> {
    let n = pop.len();
    let perms = permutations(n);
    let mut sums = vec![Rational::zero(); n];
    for perm in &perms {
        let mut t = Rational::one();
        let mut s = Rational::zero();
        for (j, &i) in perm.iter().enumerate() {
            let mu = (Rational::new(n as i128, 2) - s) / Rational::from_integer((n - j) as i128);
            let x = pop[i];
            if mu > Rational::zero() && mu < upper {
                // Any predictable bet keeps the expectation at one.
                let eta = mu + (upper - mu) * Rational::new(j as i128 + 1, j as i128 + 3);
                t *= step_multiplier_exact(x, eta, mu, upper);
            }
            s += x;
            sums[j] += t;
        }
    }
    sums.into_iter().map(|x| x / Rational::from_integer(perms.len() as i128)).collect()
}

#[test]
fn statistic_is_a_martingale_under_the_null() {
    let u = Rational::new(5, 4);
    let half = Rational::new(1, 2);
    let zero = Rational::zero();
    let pops = [
        vec![zero, u, half, Rational::new(1, 4)],
        vec![half, half, half, half, half],
        vec![zero, zero, u, u, zero],
        vec![Rational::new(1, 8), Rational::new(7, 8), zero, u, Rational::new(3, 8), Rational::new(3, 8)],
    ];
    for pop in &pops {
        let mean: Rational = pop.iter().copied().sum::<Rational>() / Rational::from_integer(pop.len() as i128);
        assert_eq!(mean, half);
        for (j, e) in expected_t(pop, u).into_iter().enumerate() {
            assert_eq!(e, Rational::one(), "draw {j} of {pop:?}");
        }
    }
}

fn clean(n: usize, v: f64) -> rla_core::errormodels::Scenario {
    generate(&ScenarioSpec::plurality(n, v, 0.0, ErrorModel::TwoUnder, 1)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sample_size_falls_as_margin_grows(seed in any::<u64>(), a in 5u32..50, b in 5u32..50) {
        prop_assume!(a != b);
        let (lo, hi) = (a.min(b), a.max(b));
        let s = clean(1000, 0.1);
        let run = |k: u32| {
            run_audit(&s.instance, vec![AuditTarget::mismatch(Rational::new(k as i128, 200))], &AuditConfig::new(0.05, seed))
                .unwrap()
        };
        prop_assert!(run(hi).n_draws <= run(lo).n_draws);
    }

    #[test]
    fn audits_are_deterministic_and_p_never_rises(
        seed in any::<u64>(),
        m in 0.0f64..0.02,
        model in prop_oneof![Just(ErrorModel::TwoOver), Just(ErrorModel::Random100_0)],
    ) {
        let s = generate(&ScenarioSpec::plurality(500, 0.05, m, model, 3)).unwrap();
        let targets = vec![AuditTarget::mismatch(s.margin.proportion())];
        let config = AuditConfig::new(0.05, seed);
        let r = run_audit(&s.instance, targets.clone(), &config).unwrap();
        prop_assert_eq!(&r, &run_audit(&s.instance, targets, &config).unwrap());
        prop_assert!(r.p_trajectory.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.p_trajectory.iter().all(|p| (0.0..=1.0).contains(p)));
        if r.decision == AuditDecision::Certified {
            prop_assert!(*r.p_trajectory.last().unwrap() <= 0.05);
        } else {
            prop_assert_eq!(r.n_draws, 500);
        }
    }
}

#[test]
fn mean_sample_size_grows_with_error_rate() {
    let sweep = Sweep {
        models: vec![ErrorModel::TwoOver, ErrorModel::TwoUnder],
        n: vec![2000],
        v: vec![0.05],
        m: vec![0.0, 0.002, 0.005, 0.01],
        seed: 4,
    };
    let mut config = ExperimentConfig::new(vec![], Methods::Both, 200, 11);
    config.sweep = Some(sweep);
    let result = run_experiment(&config).unwrap();
    for model in ["two_over", "two_under"] {
        for method in [Method::Mismatch, Method::Comparison] {
            let series: Vec<(f64, f64)> = result
                .points
                .iter()
                .filter(|p| p.spec.model.name() == model)
                .map(|p| {
                    let r = p.method(method).unwrap();
                    (r.mean_n, r.std_error())
                })
                .collect();
            assert_eq!(series.len(), 4);
            for w in series.windows(2) {
                if method == Method::Comparison && model == "two_under" {
                    continue;
                }
                assert!(w[1].0 + 2.0 * (w[0].1 + w[1].1) >= w[0].0, "{model} {method}: {series:?}");
            }
        }
    }
}
