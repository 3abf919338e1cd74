//! Small numerical utilities for inspecting PB maps and control runs.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MOVING_AVERAGE_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal directions, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Coordinates of each input point along `components`.
    pub projected: Vec<Vec<f64>>,
    /// True when all points coincide.
    pub degenerate: bool,
}

/// Principal component analysis with population covariance. Each component
/// is signed so that its largest-magnitude entry is positive.
pub fn pca(points: &[Vec<f64>]) -> Result<Pca> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Dimension {
            what: "pca points",
            expected: 2,
            actual: n,
        });
    }
    let d = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(Error::Dimension {
            what: "pca point",
            expected: d,
            actual: bad.len(),
        });
    }
    let mut mean = alloc::vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(d);
    let mut eigenvalues = Vec::with_capacity(d);
    for &k in &order {
        let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = c.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }
    let projected = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..d).map(|j| centered[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    let degenerate = centered.iter().all(|v| *v == 0.0);
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        projected,
        degenerate,
    })
}

/// Ranks starting at 1; ties share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / libm::sqrt(saa * sbb))
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Whether some line strictly separates the two planar point sets.
///
/// The order of projections only changes at directions normal to a point
/// difference, so one direction inside each arc between those is enough.
pub fn linearly_separable_2d(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    if a.is_empty() || b.is_empty() {
        return true;
    }
    let all: Vec<[f64; 2]> = a.iter().chain(b).copied().collect();
    let mut angles = Vec::new();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let dx = all[j][0] - all[i][0];
            let dy = all[j][1] - all[i][1];
            if dx != 0.0 || dy != 0.0 {
                let normal = libm::atan2(dx, -dy);
                angles.push(if normal < 0.0 { normal + core::f64::consts::PI } else { normal });
            }
        }
    }
    if angles.is_empty() {
        return false;
    }
    angles.sort_by(f64::total_cmp);
    angles.push(angles[0] + core::f64::consts::PI);
    angles.windows(2).any(|w| {
        let t = 0.5 * (w[0] + w[1]);
        let (s, c) = (libm::sin(t), libm::cos(t));
        let proj = |p: &[f64; 2]| c * p[0] + s * p[1];
        let (amin, amax) = min_max(a.iter().map(proj));
        let (bmin, bmax) = min_max(b.iter().map(proj));
        amax < bmin || bmax < amin
    })
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn collinear_points_have_zero_second_eigenvalue() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let r = pca(&pts).unwrap();
        assert!(r.eigenvalues[1].abs() < 1e-12);
        let c = &r.components[0];
        assert!((c[0] - 1.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((c[1] - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn centered_orthogonal_pairs() {
        let pts = vec![vec![3.0, 0.0], vec![-3.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let r = pca(&pts).unwrap();
        assert!((r.components[0][0] - 1.0).abs() < 1e-12);
        assert!((r.components[1][1] - 1.0).abs() < 1e-12);
        assert!((r.eigenvalues[0] - 4.5).abs() < 1e-12);
        assert!((r.eigenvalues[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let r = pca(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(r.degenerate);
        assert!(pca(&[vec![1.0]]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_of_monotone_map_is_one() {
        let a = [1.0, 5.0, 2.0, 9.0];
        let b: Vec<f64> = a.iter().map(|x: &f64| x.powi(3)).collect();
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((spearman(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&a, &[1.0; 4]), None);
    }

    #[test]
    fn moving_average_uses_trailing_window() {
        let m = moving_average(&[5.0, 5.0, 5.0, 5.0, 5.0, 10.0, 10.0], 5);
        assert_eq!(m[..5], [5.0; 5]);
        assert!((m[5] - 6.0).abs() < 1e-12);
        assert!((m[6] - 7.0).abs() < 1e-12);
        assert_eq!(moving_average(&[1.0, 3.0], 5), vec![1.0, 2.0]);
    }

    #[test]
    fn separability() {
        let a = [[0.0, 0.0], [1.0, 0.0]];
        let b = [[0.0, 1.0], [1.0, 1.0]];
        assert!(linearly_separable_2d(&a, &b));
        let xa = [[0.0, 0.0], [1.0, 1.0]];
        let xb = [[1.0, 0.0], [0.0, 1.0]];
        assert!(!linearly_separable_2d(&xa, &xb));
        let inner = [[0.0, 0.0]];
        let ring = [[1.0, 0.0], [-1.0, 0.5], [-1.0, -0.5]];
        assert!(!linearly_separable_2d(&inner, &ring));
    }
}
