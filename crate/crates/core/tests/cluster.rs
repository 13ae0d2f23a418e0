mod common;

use common::{blobs, gaussian_matrix, kruskal_mutual_reachability, naive_ward, same_partition};
use fwshap::cluster::hdbscan::mutual_reachability_mst;
use fwshap::cluster::ward::{cut_tree, ward_linkage};
use fwshap::cluster::{self, gmm, hdbscan, kmeans, ward, Algorithm, ClusterConfig, NOISE};
use fwshap::Error;
use ndarray::{array, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn kmeans_separated_pairs() {
    let x = array![[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]];
    let fit = kmeans(&x, &ClusterConfig::with_k(2)).unwrap();
    assert!(same_partition(fit.labels.as_slice(), &[0, 0, 1, 1]));
}

#[test]
fn kmeans_objective_never_increases_and_ends_at_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..30 {
        let n = rng.random_range(10..80);
        let k = rng.random_range(1..6);
        let x = gaussian_matrix(&mut rng, n, 3);
        let cfg = ClusterConfig {
            k,
            seed: trial,
            ..Default::default()
        };
        let fit = kmeans(&x, &cfg).unwrap();
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0), "objective rose: {w:?}");
        }
        // reassigning to the nearest returned centroid changes nothing
        for i in 0..n {
            let d = |c: usize| {
                x.row(i)
                    .iter()
                    .zip(fit.centroids.row(c).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            };
            let own = d(fit.assignment[i]);
            assert!((0..k).all(|c| own <= d(c) + 1e-12));
        }
        for c in 0..k {
            let rows: Vec<usize> = (0..n).filter(|&i| fit.assignment[i] == c).collect();
            let mean = x.select(Axis(0), &rows).mean_axis(Axis(0)).unwrap();
            for j in 0..3 {
                assert!((mean[j] - fit.centroids[[c, j]]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn kmeans_rejects_k_above_n() {
    let x = Array2::zeros((3, 2));
    assert!(matches!(
        kmeans(&x, &ClusterConfig::with_k(4)).unwrap_err(),
        Error::TooManyClusters { k: 4, n: 3 }
    ));
}

#[test]
fn ward_matches_naive_agglomeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let n = rng.random_range(2..=12);
        let m = rng.random_range(1..=4);
        let x = gaussian_matrix(&mut rng, n, m);
        let oracle = naive_ward(&x);
        let merges = ward_linkage(&x);
        assert_eq!(merges.len(), n - 1);
        for (got, want) in merges.iter().zip(&oracle.costs) {
            assert!((got.cost - want).abs() <= 1e-9 * want.max(1.0), "{} vs {want}", got.cost);
        }
        for k in 1..=n {
            let ours = cut_tree(n, &merges, k);
            let theirs: Vec<i64> = oracle.partitions[&k].iter().map(|&c| c as i64).collect();
            assert!(same_partition(ours.as_slice(), &theirs), "k = {k}");
        }
    }
}

#[test]
fn ward_collinear_example() {
    let x = array![[0.0], [1.0], [10.0]];
    let labels = ward(&x, 2).unwrap();
    assert_eq!(labels.as_slice(), &[0, 0, 1]);
    assert_eq!(ward(&x, 3).unwrap().as_slice(), &[0, 1, 2]);
    assert!(ward(&x, 4).is_err());
}

#[test]
fn hdbscan_mst_weight_matches_kruskal() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let n = rng.random_range(2..=10);
        let x = gaussian_matrix(&mut rng, n, 2);
        let ms = rng.random_range(1..=n.min(5));
        let mut ours: Vec<f64> = mutual_reachability_mst(&x, ms).iter().map(|e| e.weight).collect();
        let mut theirs = kruskal_mutual_reachability(&x, ms);
        ours.sort_by(f64::total_cmp);
        theirs.sort_by(f64::total_cmp);
        assert_eq!(ours, theirs);
        assert_eq!(ours.iter().sum::<f64>(), theirs.iter().sum::<f64>());
    }
}

#[test]
fn hdbscan_two_blobs_no_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (x, y) = blobs(&mut rng, 2, 20, 2, 0.5);
    let labels = hdbscan(&x, &ClusterConfig::default()).unwrap();
    assert_eq!(labels.n_clusters(), 2);
    assert_eq!(labels.noise_count(), 0);
    assert!(same_partition(labels.as_slice(), &y));
}

#[test]
fn hdbscan_isolated_point_is_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut x = Array2::from_shape_fn((11, 2), |_| rng.random::<f64>());
    x[[10, 0]] = 50.0;
    x[[10, 1]] = 50.0;
    let labels = hdbscan(&x, &ClusterConfig::default());
    match labels {
        Ok(l) => assert_eq!(l.as_slice()[10], NOISE),
        // a single dense group and an outlier leaves nothing selectable
        Err(e) => assert!(matches!(e, Error::NoClusters)),
    }
}

#[test]
fn hdbscan_clusters_respect_min_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for trial in 0..20 {
        let x = gaussian_matrix(&mut rng, 60, 2);
        let mcs = 3 + trial % 6;
        let cfg = ClusterConfig {
            min_cluster_size: mcs,
            ..Default::default()
        };
        let Ok(labels) = hdbscan(&x, &cfg) else { continue };
        for c in 0..labels.n_clusters() as i64 {
            let size = labels.as_slice().iter().filter(|&&l| l == c).count();
            assert!(size >= mcs, "cluster {c} has {size} < {mcs}");
        }
    }
}

#[test]
fn hdbscan_rejects_too_few_samples() {
    let x = Array2::zeros((3, 2));
    assert!(hdbscan(&x, &ClusterConfig::default()).is_err());
}

#[test]
fn gmm_log_likelihood_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for trial in 0..50 {
        let n = rng.random_range(30..120);
        let k = rng.random_range(1..4);
        let x = gaussian_matrix(&mut rng, n, 2);
        let cfg = ClusterConfig {
            k,
            seed: trial,
            ..Default::default()
        };
        let fit = gmm(&x, &cfg).unwrap();
        for w in fit.log_likelihood_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trial {trial}: {w:?}");
        }
    }
}

#[test]
fn all_algorithms_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let x = gaussian_matrix(&mut rng, 80, 3);
    for alg in Algorithm::ALL {
        let cfg = ClusterConfig {
            k: 3,
            seed: 9,
            ..Default::default()
        };
        let a = cluster::run(alg, &x, &cfg);
        let b = cluster::run(alg, &x, &cfg);
        assert_eq!(a.ok(), b.ok(), "{alg}");
    }
}

#[test]
fn row_permutation_gives_same_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let (x, _) = blobs(&mut rng, 3, 15, 2, 1.0);
    let n = x.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let xp = x.select(Axis(0), &perm);
    for alg in Algorithm::ALL {
        let cfg = ClusterConfig::with_k(3);
        let a = cluster::run(alg, &x, &cfg).unwrap();
        let b = cluster::run(alg, &xp, &cfg).unwrap();
        let a_perm: Vec<i64> = perm.iter().map(|&i| a.as_slice()[i]).collect();
        assert!(same_partition(&a_perm, b.as_slice()), "{alg}");
    }
}

#[test]
fn generic_data_row_permutation_for_deterministic_algorithms() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..20 {
        let x = gaussian_matrix(&mut rng, 40, 3);
        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut rng);
        let xp = x.select(Axis(0), &perm);
        for alg in [Algorithm::Ward, Algorithm::Hdbscan] {
            let cfg = ClusterConfig::with_k(4);
            match (cluster::run(alg, &x, &cfg), cluster::run(alg, &xp, &cfg)) {
                (Ok(a), Ok(b)) => {
                    let a_perm: Vec<i64> = perm.iter().map(|&i| a.as_slice()[i]).collect();
                    assert!(same_partition(&a_perm, b.as_slice()), "{alg}");
                }
                (Err(_), Err(_)) => {}
                other => panic!("{alg}: inconsistent outcomes {other:?}"),
            }
        }
    }
}

#[test]
fn labels_are_contiguous_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = gaussian_matrix(&mut rng, 100, 2);
    for alg in Algorithm::ALL {
        let Ok(labels) = cluster::run(alg, &x, &ClusterConfig::with_k(4)) else { continue };
        let k = labels.n_clusters() as i64;
        assert!(labels.as_slice().iter().all(|&l| l == NOISE || (0..k).contains(&l)));
        if alg != Algorithm::Hdbscan {
            assert_eq!(k, 4);
        }
    }
}
