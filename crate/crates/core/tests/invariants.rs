use proptest::prelude::*;
use rand::Rng;
use stratakit::optimal::feasibility_rounding;
use stratakit::randomize::{complete_randomize, local_randomize, two_stage};
use stratakit::{Matrix, Propensity, PropensityMap, RandomSource, UnitTable};

fn points(n: usize, seed: u64) -> Matrix {
    let mut g = RandomSource::new(seed).stream("points", 0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![g.random::<f64>(), g.random::<f64>()]).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn frac() -> impl Strategy<Value = Propensity> {
    (2u32..9).prop_flat_map(|k| (1..k).prop_map(move |a| Propensity::new(a, k).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_groups_select_exactly(n in 2usize..70, pi in frac(), seed in 0u64..10_000) {
        let x = points(n, seed);
        let q = PropensityMap::constant(n, pi);
        let r = local_randomize(&x, &q, &RandomSource::new(seed)).unwrap();
        let mut seen = vec![0; n];
        for (g, members) in r.partition.groups.iter().enumerate() {
            for &i in members {
                seen[i] += 1;
            }
            if !r.partition.remainder[g] {
                prop_assert_eq!(members.len(), pi.den() as usize);
                let picked: u32 = members.iter().map(|&i| r.x[i] as u32).sum();
                prop_assert_eq!(picked, pi.num());
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(r.partition.remainder.iter().filter(|&&b| b).count() <= 1);
    }

    #[test]
    fn treatment_only_among_sampled(n in 16usize..80, qa in frac(), pa in frac(), seed in 0u64..10_000) {
        let t = UnitTable::from_psi(points(n, seed)).unwrap();
        let q = PropensityMap::constant(n, qa);
        let p = PropensityMap::constant(n, pa);
        let d = two_stage(&t, &q, &p, false, &RandomSource::new(seed)).unwrap();
        prop_assert!(d.d.iter().zip(&d.t).all(|(&di, &ti)| di <= ti));
        d.validate().unwrap();
        for (_, members) in d.assignment.full_groups() {
            let treated: u32 = members.iter().map(|&i| d.d[i] as u32).sum();
            prop_assert_eq!(treated, pa.num());
        }
    }

    #[test]
    fn rounding_keeps_budget_and_bounds(
        raw in prop::collection::vec((0.01f64..5.0, 0.5f64..20.0), 1..60),
        frac_b in 0.05f64..0.95,
    ) {
        let q: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let c: Vec<f64> = raw.iter().map(|r| r.1).collect();
        let mean_c = c.iter().sum::<f64>() / c.len() as f64;
        let b = frac_b * mean_c;
        let spent0 = q.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / q.len() as f64;
        let q: Vec<f64> = q.iter().map(|v| v * b / spent0).collect();
        let r = feasibility_rounding(&q, &c, b).unwrap();
        prop_assert!(!r.saturated);
        prop_assert!(r.q.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        let spent = r.q.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / c.len() as f64;
        prop_assert!((spent - b).abs() <= 1e-9 * b);
        for &j in &r.frozen {
            prop_assert!((r.q[j] - 1.0).abs() < 1e-12);
        }
    }
}

/// Per-unit sampling frequency stays within five standard errors of q.
#[test]
fn marginal_sampling_probability() {
    let n = 40;
    let x = points(n, 1);
    let pi = Propensity::new(3, 8).unwrap();
    let q = PropensityMap::constant(n, pi);
    let reps = 4000;
    let mut hits = vec![0usize; n];
    for s in 0..reps {
        let r = local_randomize(&x, &q, &RandomSource::new(s)).unwrap();
        for i in 0..n {
            hits[i] += r.x[i] as usize;
        }
    }
    let se = (pi.value() * (1.0 - pi.value()) / reps as f64).sqrt();
    for (i, &h) in hits.iter().enumerate() {
        let f = h as f64 / reps as f64;
        assert!((f - pi.value()).abs() < 5.0 * se, "unit {i}: {f}");
    }
}

fn chi_square(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

fn pattern_index(x: &[u8]) -> usize {
    x.iter().enumerate().map(|(i, &v)| (v as usize) << i).sum()
}

/// One group of eight with three selected: all 56 patterns equally likely.
#[test]
fn within_group_patterns_are_uniform() {
    let x = points(8, 2);
    let q = PropensityMap::constant(8, Propensity::new(3, 8).unwrap());
    let mut counts = vec![0usize; 256];
    for s in 0..11_200 {
        let r = local_randomize(&x, &q, &RandomSource::new(s)).unwrap();
        counts[pattern_index(&r.x)] += 1;
    }
    let used: Vec<usize> = (0..256usize).filter(|i| i.count_ones() == 3).map(|i| counts[i]).collect();
    assert_eq!(used.iter().sum::<usize>(), 11_200);
    // 55 degrees of freedom; the 0.999 quantile is about 93.2
    assert!(chi_square(&used) < 93.2, "chi-square {}", chi_square(&used));
}

#[test]
fn complete_randomization_patterns_are_uniform() {
    let mut counts = vec![0usize; 16];
    for s in 0..6000 {
        counts[pattern_index(&complete_randomize(4, Propensity::new(1, 2).unwrap(), &RandomSource::new(s)))] += 1;
    }
    let used: Vec<usize> = (0..16usize).filter(|i| i.count_ones() == 2).map(|i| counts[i]).collect();
    assert_eq!(used.iter().sum::<usize>(), 6000);
    // 5 degrees of freedom; the 0.999 quantile is about 20.5
    assert!(chi_square(&used) < 20.5);
}
