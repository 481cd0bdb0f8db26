use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swe_rom::pod::{
    build_pod_basis, center_snapshots, compute_pod_basis_with, energy_index, modes_for_energy, ModeSelector,
    PodRoute,
};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max_rows, 3..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

/// Sine of the largest principal angle between two orthonormal column sets.
fn max_angle_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let residual = b - a * (a.transpose() * b);
    residual.singular_values().max()
}

fn rank(centered: &DMatrix<f64>) -> usize {
    let b = compute_pod_basis_with(centered, ModeSelector::Fixed(1), PodRoute::Svd).unwrap();
    let (n, nt) = centered.shape();
    swe_rom::pod::numerical_rank(&b.spectrum.iter().map(|l| l.sqrt()).collect::<Vec<_>>(), n, nt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_and_correlation_routes_span_the_same_space(x in matrix(30, 30)) {
        let (centered, _) = center_snapshots(&x);
        let k = rank(&centered);
        prop_assume!(k >= 1);
        let svd = compute_pod_basis_with(&centered, ModeSelector::Fixed(k), PodRoute::Svd).unwrap();
        let corr = compute_pod_basis_with(&centered, ModeSelector::Fixed(k), PodRoute::SnapshotCorrelation).unwrap();
        prop_assert!(max_angle_sine(&svd.trial, &corr.trial) <= 1e-8);
    }

    #[test]
    fn truncation_error_equals_discarded_energy(x in matrix(30, 30), frac in 0.0f64..1.0) {
        let (centered, _) = center_snapshots(&x);
        let r = rank(&centered);
        prop_assume!(r >= 1);
        let k = 1 + ((r - 1) as f64 * frac) as usize;
        let b = compute_pod_basis_with(&centered, ModeSelector::Fixed(k), PodRoute::Svd).unwrap();
        let u = &b.trial;
        let err = (&centered - u * (u.transpose() * &centered)).norm_squared();
        let tail: f64 = b.spectrum[k..].iter().sum();
        let total: f64 = b.spectrum.iter().sum();
        prop_assert!((err - tail).abs() <= 1e-8 * total.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn energy_index_is_nondecreasing(x in matrix(20, 20)) {
        let b = build_pod_basis(&x, ModeSelector::Fixed(1), true).unwrap();
        let idx: Vec<f64> = (1..=b.spectrum.len()).map(|m| energy_index(&b.spectrum, m).unwrap()).collect();
        prop_assert!(idx.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*idx.last().unwrap(), 1.0);
    }

    #[test]
    fn energy_selection_reaches_gamma(x in matrix(20, 20), gamma in 0.5f64..0.9999) {
        let b = build_pod_basis(&x, ModeSelector::Energy(gamma), true).unwrap();
        let k = modes_for_energy(&b.spectrum, gamma).unwrap();
        prop_assert!(energy_index(&b.spectrum, k).unwrap() >= gamma);
        if k > 1 {
            prop_assert!(energy_index(&b.spectrum, k - 1).unwrap() < gamma);
        }
    }

    #[test]
    fn basis_is_orthonormal(x in matrix(30, 12)) {
        let (centered, _) = center_snapshots(&x);
        let k = rank(&centered);
        prop_assume!(k >= 1);
        let full = build_pod_basis(&x, ModeSelector::Fixed(k), true).unwrap();
        let gram = full.trial.transpose() * &full.trial;
        prop_assert!((gram - DMatrix::identity(k, k)).amax() <= 1e-10);
    }
}

#[test]
fn correlation_oracle_on_20_by_8() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = DMatrix::from_fn(20, 8, |_, _| rng.random_range(-1.0..1.0));
    let b = build_pod_basis(&x, ModeSelector::Fixed(6), true).unwrap();
    // oracle: k_ij = <x_i - xbar, x_j - xbar>, phi_c = Xc v_c / sqrt(lambda_c)
    let mean = x.column_mean();
    let xc = DMatrix::from_fn(20, 8, |i, j| x[(i, j)] - mean[i]);
    let k = DMatrix::from_fn(8, 8, |i, j| xc.column(i).dot(&xc.column(j)));
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    for (c, &e) in order.iter().take(6).enumerate() {
        let mut phi = &xc * eig.eigenvectors.column(e) / eig.eigenvalues[e].sqrt();
        if phi.dot(&b.trial.column(c)) < 0.0 {
            phi = -phi;
        }
        assert!((phi - b.trial.column(c)).amax() <= 1e-10, "mode {c}");
        assert!((b.spectrum[c] - eig.eigenvalues[e]).abs() <= 1e-10 * eig.eigenvalues[e]);
    }
}
