//! k-nearest-neighbor outlier removal.

use nalgebra::DVector;

/// Keep the points whose mean distance to their `k` nearest neighbors lies
/// at or below the `p_keep` quantile of that statistic.
///
/// Returns the kept points and a warning flag that is set when there are too
/// few points to filter (the input passes through unchanged then). The kept
/// set is invariant under permutations of the input: the threshold is an
/// order statistic and ties are broken by keeping everything at the
/// threshold.
pub fn knn_outlier_filter(
    points: &[DVector<f64>],
    k: usize,
    p_keep: f64,
) -> (Vec<DVector<f64>>, bool) {
    assert!(k > 0, "k must be positive");
    assert!((0.0..=1.0).contains(&p_keep), "p_keep must be in [0,1]");
    let n = points.len();
    if n < k + 1 {
        return (points.to_vec(), true);
    }
    let mut stats = Vec::with_capacity(n);
    let mut dists = vec![0.0_f64; n - 1];
    for (i, p) in points.iter().enumerate() {
        let mut m = 0;
        for (j, q) in points.iter().enumerate() {
            if i != j {
                dists[m] = (p - q).norm();
                m += 1;
            }
        }
        dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        let mean_k: f64 = dists[..k].iter().sum::<f64>() / k as f64;
        stats.push(mean_k);
    }
    let mut sorted = stats.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((p_keep * n as f64).ceil() as usize).clamp(1, n) - 1;
    let threshold = sorted[idx];
    let kept = points
        .iter()
        .zip(stats.iter())
        .filter(|(_, s)| **s <= threshold)
        .map(|(p, _)| p.clone())
        .collect();
    (kept, false)
}
