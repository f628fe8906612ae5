use boxcalib::matching::{assignment_weight, filter_matches, solve_assignment};
use boxcalib::{AffinityMatrix, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best total weight over every injective map from the smaller side.
fn brute_force(a: &[Vec<f64>]) -> f64 {
    let (m, n) = (a.len(), a[0].len());
    let get = |i: usize, j: usize| if m <= n { a[i][j] } else { a[j][i] };
    let (small, large) = (m.min(n), m.max(n));
    fn go(k: usize, small: usize, large: usize, used: &mut Vec<bool>, get: &dyn Fn(usize, usize) -> f64) -> f64 {
        if k == small {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..large {
            if !used[j] {
                used[j] = true;
                best = best.max(get(k, j) + go(k + 1, small, large, used, get));
                used[j] = false;
            }
        }
        best
    }
    go(0, small, large, &mut vec![false; large], &get)
}

fn random_matrix(rng: &mut impl Rng, m: usize, n: usize) -> Vec<Vec<f64>> {
    let sparse = rng.random_bool(0.3);
    (0..m)
        .map(|_| {
            (0..n)
                .map(|_| if sparse && rng.random_bool(0.5) { 0.0 } else { rng.random::<f64>() })
                .collect()
        })
        .collect()
}

#[test]
fn hungarian_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..240 {
        let m = rng.random_range(1..=7);
        let n = rng.random_range(1..=7);
        let rows = random_matrix(&mut rng, m, n);
        let a = AffinityMatrix::from_rows(&rows).unwrap();
        let pairs = solve_assignment(&a);
        assert_eq!(pairs.len(), m.min(n));
        let mut rows_seen: Vec<_> = pairs.iter().map(|p| p.0).collect();
        let mut cols_seen: Vec<_> = pairs.iter().map(|p| p.1).collect();
        rows_seen.dedup();
        cols_seen.sort();
        cols_seen.dedup();
        assert_eq!(rows_seen.len(), pairs.len(), "one-to-one rows");
        assert_eq!(cols_seen.len(), pairs.len(), "one-to-one cols");
        let got = assignment_weight(&a, &pairs);
        let want = brute_force(&rows);
        assert!((got - want).abs() < 1e-9, "trial {trial} ({m}x{n}): {got} vs {want}");
    }
}

#[test]
fn greedy_is_not_enough() {
    let a = AffinityMatrix::from_rows(&[vec![0.9, 0.8], vec![0.8, 0.1]]).unwrap();
    assert_eq!(solve_assignment(&a), vec![(0, 1), (1, 0)]);
}

#[test]
fn filter_threshold_cases() {
    let a = AffinityMatrix::from_rows(&[vec![0.9, 0.0], vec![0.0, 0.25]]).unwrap();
    let pairs = solve_assignment(&a);
    let kept = filter_matches(&pairs, &a, 0.3).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!((kept.pairs[0].infra, kept.pairs[0].vehicle), (0, 0));
    assert_eq!(kept.threshold_used, 0.3);
    assert_eq!(filter_matches(&pairs, &a, 0.0).unwrap().len(), 2);
    let zero = AffinityMatrix::zeros(3, 3);
    assert!(matches!(filter_matches(&solve_assignment(&zero), &zero, 0.3), Err(Error::NoMatches)));
}

proptest! {
    #[test]
    fn scaling_does_not_change_assignment(seed in any::<u64>(), factor in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let a = AffinityMatrix::from_rows(&random_matrix(&mut rng, m, n)).unwrap();
        let base = solve_assignment(&a);
        let scaled = a.scaled(factor);
        let other = solve_assignment(&scaled);
        prop_assert!((assignment_weight(&scaled, &other) - factor * assignment_weight(&a, &base)).abs() < 1e-9 * factor.max(1.0));
    }

    #[test]
    fn row_permutation_is_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let a = AffinityMatrix::from_rows(&random_matrix(&mut rng, m, n)).unwrap();
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = a.permute_rows(&perm);
        let w = assignment_weight(&a, &solve_assignment(&a));
        let wp = assignment_weight(&permuted, &solve_assignment(&permuted));
        prop_assert!((w - wp).abs() < 1e-9);
    }
}
