use super::*;
use crate::numerics::SeededRng;
use proptest::prelude::*;

fn part(labels: &[usize]) -> Partition {
    Partition::from_labels(labels.to_vec())
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth).max().unwrap() + 1;
    permutations(k)
        .iter()
        .map(|map| pred.iter().zip(truth).filter(|(p, t)| map[**p] == **t).count())
        .max()
        .unwrap() as f64
        / pred.len() as f64
}

/// `H(C) + H(R) - H(C, R)` from raw joint frequencies.
fn direct_nmi(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashMap;
    let n = a.len() as f64;
    let h = |counts: Vec<usize>| -> f64 {
        counts
            .iter()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let mut ca = HashMap::new();
    let mut cb = HashMap::new();
    let mut cab = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_insert(0) += 1;
        *cb.entry(y).or_insert(0) += 1;
        *cab.entry((x, y)).or_insert(0) += 1;
    }
    let (ha, hb, hab) = (
        h(ca.into_values().collect()),
        h(cb.into_values().collect()),
        h(cab.into_values().collect()),
    );
    let denom = ha.max(hb);
    if denom == 0.0 {
        return 1.0;
    }
    (ha + hb - hab) / denom
}

/// Traces of full between/within scatter matrices.
fn scatter_oracle(ys: &Matrix, labels: &[usize]) -> f64 {
    let (n, d) = ys.shape();
    let k = labels.iter().max().unwrap() + 1;
    let mut mean = vec![0.0; d];
    for y in ys.row_iter() {
        for j in 0..d {
            mean[j] += y[j] / n as f64;
        }
    }
    let mut cent = vec![vec![0.0; d]; k];
    let mut size = vec![0.0; k];
    for (y, &l) in ys.row_iter().zip(labels) {
        size[l] += 1.0;
        for j in 0..d {
            cent[l][j] += y[j];
        }
    }
    for q in 0..k {
        for j in 0..d {
            cent[q][j] /= size[q];
        }
    }
    let mut b = vec![vec![0.0; d]; d];
    let mut w = vec![vec![0.0; d]; d];
    for q in 0..k {
        for r in 0..d {
            for s in 0..d {
                b[r][s] += size[q] * (cent[q][r] - mean[r]) * (cent[q][s] - mean[s]);
            }
        }
    }
    for (y, &l) in ys.row_iter().zip(labels) {
        for r in 0..d {
            for s in 0..d {
                w[r][s] += (y[r] - cent[l][r]) * (y[s] - cent[l][s]);
            }
        }
    }
    let tb: f64 = (0..d).map(|i| b[i][i]).sum();
    let tw: f64 = (0..d).map(|i| w[i][i]).sum();
    tb / tw * (n - k) as f64 / (k - 1) as f64
}

#[test]
fn partition_validates_labels() {
    assert!(Partition::new(vec![0, 2], 2).is_err());
    let p = Partition::new(vec![0, 1, 1], 3).unwrap();
    assert_eq!(p.sizes(), vec![1, 2, 0]);
    assert_eq!(part(&[3, 0]).num_clusters(), 4);
    assert_eq!(part(&[]).num_clusters(), 0);
}

#[test]
fn accuracy_of_identical_and_permuted_partitions() {
    let t = part(&[0, 0, 1, 2, 2, 1, 3]);
    assert_eq!(clustering_accuracy(&t, &t).unwrap(), 1.0);
    let renamed: Vec<usize> = t.labels().iter().map(|l| [2, 3, 1, 0][*l]).collect();
    assert_eq!(clustering_accuracy(&part(&renamed), &t).unwrap(), 1.0);
}

#[test]
fn accuracy_errors() {
    assert!(clustering_accuracy(&part(&[0, 1]), &part(&[0])).is_err());
    assert!(clustering_accuracy(&part(&[]), &part(&[])).is_err());
    assert!(nmi(&part(&[0, 1]), &part(&[0])).is_err());
    assert!(confusion_matrix(&part(&[0, 1]), &part(&[0])).is_err());
}

#[test]
fn accuracy_with_unequal_cluster_counts() {
    // three predicted clusters, two classes: the best mapping leaves one
    // predicted cluster unmatched
    let pred = part(&[0, 0, 1, 1, 2, 2]);
    let truth = part(&[0, 0, 1, 1, 1, 1]);
    assert!((clustering_accuracy(&pred, &truth).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    assert!((clustering_accuracy(&truth, &pred).unwrap() - 4.0 / 6.0).abs() < 1e-15);
}

#[test]
fn nmi_examples() {
    let a = part(&[0, 0, 1, 1, 2, 2]);
    assert_eq!(nmi(&a, &a).unwrap(), 1.0);
    // tiled labels: every (a, b) pair occurs exactly once
    let x = part(&[0, 0, 1, 1, 2, 2]);
    let y = part(&[0, 1, 0, 1, 0, 1]);
    assert_eq!(nmi(&x, &y).unwrap(), 0.0);
    assert_eq!(nmi(&part(&[0, 0, 0]), &part(&[0, 0, 0])).unwrap(), 1.0);
    assert_eq!(nmi(&part(&[0, 0, 0]), &part(&[0, 1, 2])).unwrap(), 0.0);
}

#[test]
fn ch_hand_computed_instance() {
    let ys = Matrix::from_rows(&[vec![-1.1], vec![-0.9], vec![0.9], vec![1.1]]).unwrap();
    let s = ch_score(&ys, &part(&[0, 0, 1, 1])).unwrap();
    assert!((s - 200.0).abs() < 1e-9, "{s}");
    let flipped = ch_score(&ys, &part(&[1, 1, 0, 0])).unwrap();
    assert_eq!(s, flipped);
}

#[test]
fn ch_errors_and_sentinel() {
    let ys = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
    assert_eq!(ch_score(&ys, &part(&[0, 0, 1, 1])).unwrap(), f64::INFINITY);
    assert!(ch_score(&ys, &part(&[0, 0, 0, 0])).is_err());
    assert!(ch_score(&ys, &Partition::new(vec![0, 0, 2, 2], 3).unwrap()).is_err());
    assert!(ch_score(&ys, &part(&[0, 1, 2, 3])).is_err());
    assert!(ch_score(&ys, &part(&[0, 1])).is_err());
}

#[test]
fn confusion_examples() {
    let t = part(&[0, 1, 2, 1]);
    let c = confusion_matrix(&t, &t).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(c.get(i, j) > 0, i == j);
        }
    }
    let one = confusion_matrix(&part(&[0, 0, 0, 0]), &t).unwrap();
    assert_eq!(one.rows(), 1);
    assert_eq!(one.row(0), &[1, 2, 1]);
    assert_eq!(one.total(), 4);
}

#[test]
fn ch_matches_scatter_oracle() {
    let mut rng = SeededRng::new(2);
    for _ in 0..30 {
        let (n, d, k) = (40, 3, 4);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let ys = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
        let got = ch_score(&ys, &part(&labels)).unwrap();
        let want = scatter_oracle(&ys, &labels);
        assert!((got - want).abs() / want < 1e-10);
    }
}

fn labels_strategy(k: usize, n: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(0..k, n)
}

proptest! {
    #[test]
    fn accuracy_matches_exhaustive_search(
        (pred, truth) in (1usize..=6, 1usize..=12).prop_flat_map(|(k, n)| (labels_strategy(k, n), labels_strategy(k, n)))
    ) {
        let got = clustering_accuracy(&part(&pred), &part(&truth)).unwrap();
        prop_assert!((got - brute_force_accuracy(&pred, &truth)).abs() < 1e-15);
    }

    #[test]
    fn accuracy_bounds_and_relabeling(
        (pred, truth) in (2usize..=5, 5usize..=30).prop_flat_map(|(k, n)| (labels_strategy(k, n), labels_strategy(k, n))),
        seed in 0u64..1000
    ) {
        let (p, t) = (part(&pred), part(&truth));
        let acc = clustering_accuracy(&p, &t).unwrap();
        let k = p.num_clusters().max(t.num_clusters());
        prop_assert!(acc >= 1.0 / k as f64 - 1e-15 && acc <= 1.0);
        let mut rng = SeededRng::new(seed);
        let mut perm: Vec<usize> = (0..p.num_clusters()).collect();
        rng.shuffle(&mut perm);
        let renamed = part(&pred.iter().map(|l| perm[*l]).collect::<Vec<_>>());
        prop_assert_eq!(clustering_accuracy(&renamed, &t).unwrap(), acc);
    }

    #[test]
    fn nmi_matches_direct_entropies_and_is_symmetric(
        (a, b) in (1usize..=5, 1usize..=40).prop_flat_map(|(k, n)| (labels_strategy(k, n), labels_strategy(k + 1, n)))
    ) {
        let (pa, pb) = (part(&a), part(&b));
        let v = nmi(&pa, &pb).unwrap();
        prop_assert!((v - direct_nmi(&a, &b).clamp(0.0, 1.0)).abs() < 1e-12);
        prop_assert_eq!(v, nmi(&pb, &pa).unwrap());
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn confusion_row_sums_are_cluster_sizes(
        (a, b) in (1usize..=5, 1usize..=40).prop_flat_map(|(k, n)| (labels_strategy(k, n), labels_strategy(3, n)))
    ) {
        let (pa, pb) = (part(&a), part(&b));
        let c = confusion_matrix(&pa, &pb).unwrap();
        let sizes: Vec<u64> = pa.sizes().iter().map(|s| *s as u64).collect();
        prop_assert_eq!(c.row_sums(), sizes);
        prop_assert_eq!(c.total(), a.len() as u64);
    }

    #[test]
    fn shrinking_towards_centroids_raises_ch(seed in 0u64..1000, factor in 0.05f64..0.95) {
        let mut rng = SeededRng::new(seed);
        let (n, d, k) = (30, 2, 3);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let ys = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
        let mut cent = vec![vec![0.0; d]; k];
        for (y, &l) in ys.row_iter().zip(&labels) {
            for j in 0..d {
                cent[l][j] += y[j] / (n / k) as f64;
            }
        }
        let shrunk: Vec<Vec<f64>> = ys
            .row_iter()
            .zip(&labels)
            .map(|(y, &l)| (0..d).map(|j| cent[l][j] + factor * (y[j] - cent[l][j])).collect())
            .collect();
        let shrunk = Matrix::from_rows(&shrunk).unwrap();
        let p = part(&labels);
        prop_assert!(ch_score(&shrunk, &p).unwrap() > ch_score(&ys, &p).unwrap());
    }
}
