use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use tpca::calibrate::{clopper_pearson_upper, threshold_from_maxima};
use tpca::changemodel::{
    apply_change, hellinger_normal, sample_change, ChangeDistributionSpec, ChangeType, NormalParams,
};
use tpca::corrcore::{
    eigensystem, estimate_training, nearest_pd_correlation, random_correlation, CorrelationMatrix, DEFAULT_PD_FLOOR,
};
use tpca::mixmonitor::mixture_statistic;
use tpca::rng::seeded;
use tpca::tailor::{estimate_argmax_probabilities, select_axes};

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

#[test]
fn random_correlations_are_valid() {
    for &dim in &[2, 10, 50] {
        for &alpha in &[0.05, 1.0, 50.0] {
            let mut rng = seeded(dim as u64 * 1000 + alpha as u64);
            for _ in 0..1000 {
                let c = random_correlation(dim, alpha, &mut rng).unwrap();
                let again = CorrelationMatrix::try_new(c.matrix().clone()).unwrap();
                assert_eq!(again.dim(), dim);
                assert!(min_eigenvalue(c.matrix()) > 0.0, "dim {dim}, alpha {alpha}");
            }
        }
    }
}

#[test]
fn eigensystem_round_trip_and_determinism() {
    for &dim in &[2, 5, 20] {
        let mut rng = seeded(40 + dim as u64);
        for _ in 0..100 {
            let c = random_correlation(dim, 1.0, &mut rng).unwrap();
            let es = eigensystem(&c);
            let err = (es.reconstruct() - c.matrix()).amax();
            assert!(err < 1e-8, "dim {dim}: reconstruction error {err}");
            let again = eigensystem(&c);
            for j in 0..dim {
                assert_eq!(es.value(j).to_bits(), again.value(j).to_bits());
                let (a, b) = (es.vector(j), again.vector(j));
                assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}

#[test]
fn hellinger_bounds_on_random_pairs() {
    let mut rng = seeded(11);
    for _ in 0..100_000 {
        let p = NormalParams::new(rng.random_range(-5.0..5.0), rng.random_range(0.01..10.0));
        let q = NormalParams::new(rng.random_range(-5.0..5.0), rng.random_range(0.01..10.0));
        let h = hellinger_normal(p, q);
        assert!((0.0..=1.0).contains(&h), "H = {h} for {p:?}, {q:?}");
        assert!(h > 0.0, "distinct parameters gave H = 0: {p:?}, {q:?}");
        assert_eq!(hellinger_normal(p, p), 0.0);
    }
}

#[test]
fn mean_and_variance_changes_are_local() {
    let mut rng = seeded(12);
    let base = random_correlation(20, 0.1, &mut rng).unwrap();
    for ctype in [ChangeType::Mean, ChangeType::Variance] {
        let spec = ChangeDistributionSpec::only(ctype);
        for _ in 0..500 {
            let sc = sample_change(&spec, &base, &mut rng).unwrap();
            let post = apply_change(&base, &sc, DEFAULT_PD_FLOOR).unwrap();
            let outside: Vec<usize> = (0..20).filter(|i| !sc.affected.contains(i)).collect();
            for &i in &outside {
                assert_eq!(post.mean[i], 0.0);
                for &j in &outside {
                    assert_eq!(post.cov[(i, j)], base.get(i, j));
                    assert_eq!(post.cov[(j, i)], base.get(j, i));
                }
            }
        }
    }
}

#[test]
fn correlation_changes_are_nearly_local() {
    let mut rng = seeded(13);
    let spec = ChangeDistributionSpec::only(ChangeType::Correlation);
    let mut worst: f64 = 0.0;
    for &alpha in &[0.1, 1.0] {
        for _ in 0..20 {
            let base = random_correlation(20, alpha, &mut rng).unwrap();
            for _ in 0..50 {
                let sc = sample_change(&spec, &base, &mut rng).unwrap();
                let post = apply_change(&base, &sc, DEFAULT_PD_FLOOR).unwrap();
                let outside: Vec<usize> = (0..20).filter(|i| !sc.affected.contains(i)).collect();
                for &i in &outside {
                    for &j in &outside {
                        worst = worst.max((post.cov[(i, j)] - base.get(i, j)).abs());
                    }
                }
            }
        }
    }
    assert!(worst < 0.05, "largest perturbation outside the affected set {worst}");
}

#[test]
fn mean_sensitivities_are_in_unit_interval() {
    let mut rng = seeded(14);
    let base = random_correlation(8, 0.5, &mut rng).unwrap();
    let est = estimate_argmax_probabilities(&base, &ChangeDistributionSpec::default(), 2000, &mut rng).unwrap();
    assert!(est.mean_sensitivity.iter().all(|h| (0.0..=1.0).contains(h)));
    assert!((est.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn covariance_input_is_not_normalized() {
    let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 1.0]);
    assert!(CorrelationMatrix::try_new(cov).is_err());
}

fn symmetric_unit_diagonal(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim * (dim - 1) / 2).prop_map(move |v| {
        let mut m = DMatrix::identity(dim, dim);
        let mut it = v.into_iter();
        for i in 0..dim {
            for j in i + 1..dim {
                let x = it.next().unwrap();
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        m
    })
}

fn probability_vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..12).prop_filter_map("positive mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #[test]
    fn nearest_pd_is_idempotent(m in (2usize..7).prop_flat_map(symmetric_unit_diagonal)) {
        let once = nearest_pd_correlation(&m, DEFAULT_PD_FLOOR).unwrap();
        let twice = nearest_pd_correlation(once.matrix(), DEFAULT_PD_FLOOR).unwrap();
        prop_assert!((once.matrix() - twice.matrix()).amax() <= 1e-12);
        prop_assert!(min_eigenvalue(once.matrix()) >= DEFAULT_PD_FLOOR * (1.0 - 1e-6));
    }

    #[test]
    fn selection_is_minimal(probs in probability_vector(), cutoff in 0.0f64..=1.0) {
        let sel = select_axes(&probs, cutoff).unwrap();
        prop_assert!(!sel.is_empty());
        let total: f64 = sel.iter().map(|&j| probs[j]).sum();
        prop_assert!(total >= cutoff - 1e-9);
        if sel.len() > 1 {
            let smallest = sel.iter().map(|&j| probs[j]).fold(f64::INFINITY, f64::min);
            prop_assert!(total - smallest < cutoff);
        }
    }

    #[test]
    fn selection_grows_with_cutoff(probs in probability_vector(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = select_axes(&probs, lo).unwrap();
        let large = select_axes(&probs, hi).unwrap();
        prop_assert!(small.iter().all(|j| large.contains(j)), "{small:?} not within {large:?}");
    }

    #[test]
    fn mixture_is_monotone(
        llrs in prop::collection::vec(0.0f64..50.0, 1..8),
        bump in 0.0f64..5.0,
        which in 0usize..8,
        p0 in 0.001f64..1.0,
        dp in 0.0f64..1.0,
        c in 0.5f64..2.0,
    ) {
        let base = mixture_statistic(&llrs, c, p0);
        let mut raised = llrs.clone();
        let i = which % llrs.len();
        raised[i] += bump;
        prop_assert!(mixture_statistic(&raised, c, p0) >= base - 1e-12);
        let p1 = (p0 + dp).min(1.0);
        prop_assert!(mixture_statistic(&llrs, c, p1) >= base - 1e-12);
    }

    #[test]
    fn exceedance_is_non_increasing(maxima in prop::collection::vec(-5.0f64..50.0, 1..300), a in -5.0f64..50.0, b in -5.0f64..50.0) {
        let frac = |t: f64| maxima.iter().filter(|&&v| v >= t).count() as f64 / maxima.len() as f64;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(frac(hi) <= frac(lo));
    }

    #[test]
    fn threshold_exceedances_are_certified(
        maxima in prop::collection::vec(0.0f64..30.0, 500..1500),
        alpha in 0.02f64..0.2,
        confidence in 0.5f64..0.99,
    ) {
        if let Ok((b, count)) = threshold_from_maxima(&maxima, alpha, confidence) {
            prop_assert_eq!(count, maxima.iter().filter(|&&v| v >= b).count());
            prop_assert!(clopper_pearson_upper(count, maxima.len(), confidence) <= alpha);
        }
    }

    #[test]
    fn thresholds_share_one_replicate_set(maxima in prop::collection::vec(0.0f64..30.0, 1000..1500)) {
        let mut desc = maxima.clone();
        desc.sort_by(|a, b| b.total_cmp(a));
        for alpha in [0.05, 0.1] {
            if let Ok((b, count)) = threshold_from_maxima(&maxima, alpha, 0.95) {
                prop_assert_eq!(desc[count - 1], b);
            }
        }
    }

    #[test]
    fn training_correlation_is_valid(seed in 0u64..1000, rows in 10usize..40) {
        let mut rng = seeded(seed);
        let data = DMatrix::from_fn(rows, 4, |_, _| rng.random_range(-1.0..1.0));
        let s = estimate_training(&data).unwrap();
        prop_assert!(s.corr.matrix().iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }
}
