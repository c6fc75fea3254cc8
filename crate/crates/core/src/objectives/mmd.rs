//! Biased squared maximum mean discrepancy with an RBF kernel.
//!
//! ```text
//! MMD² = mean k(s, s') + mean k(t, t') - 2 mean k(s, t),   k(x, y) = exp(-‖x - y‖² / h)
//! ```
//!
//! `h` defaults to the median pairwise squared distance of the pooled
//! (sub)sample and is held constant during differentiation.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{DenseMatrix, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmdConfig {
    pub bandwidth: Bandwidth,
    /// Rows per domain above which a uniform subsample is drawn.
    pub max_rows: Option<usize>,
    pub seed: u64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
            max_rows: Some(2000),
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of all pairwise squared distances in the pooled rows. Falls back
/// to 1 when every pair coincides.
pub fn median_heuristic(source: &DenseMatrix, target: &DenseMatrix) -> f64 {
    let rows: Vec<&[f64]> = (0..source.rows())
        .map(|i| source.row(i))
        .chain((0..target.rows()).map(|i| target.row(i)))
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            dists.push(sq_dist(rows[i], rows[j]));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if dists.len() % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

fn kernel_matrix(a: &DenseMatrix, b: &DenseMatrix, bandwidth: f64) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        (-sq_dist(a.row(i), b.row(j)) / bandwidth).exp()
    })
}

fn check_inputs(source: &DenseMatrix, target: &DenseMatrix, bandwidth: f64) -> Result<()> {
    if source.rows() == 0 || target.rows() == 0 {
        return Err(Error::EmptyInput("mmd"));
    }
    if source.cols() != target.cols() {
        return Err(Error::ShapeMismatch {
            op: "mmd",
            left: source.shape(),
            right: target.shape(),
        });
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidConfig(format!("mmd bandwidth {bandwidth}")));
    }
    Ok(())
}

pub(crate) fn biased_mmd2(source: &DenseMatrix, target: &DenseMatrix, bandwidth: f64) -> Result<f64> {
    check_inputs(source, target, bandwidth)?;
    let n = source.rows() as f64;
    let m = target.rows() as f64;
    let kss = kernel_matrix(source, source, bandwidth).sum() / (n * n);
    let ktt = kernel_matrix(target, target, bandwidth).sum() / (m * m);
    let kst = kernel_matrix(source, target, bandwidth).sum() / (n * m);
    Ok(kss + ktt - 2.0 * kst)
}

pub(crate) fn biased_mmd2_grad(
    source: &DenseMatrix,
    target: &DenseMatrix,
    bandwidth: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    check_inputs(source, target, bandwidth)?;
    let n = source.rows() as f64;
    let m = target.rows() as f64;
    let kss = kernel_matrix(source, source, bandwidth);
    let ktt = kernel_matrix(target, target, bandwidth);
    let kst = kernel_matrix(source, target, bandwidth);
    let c = -2.0 / bandwidth;

    let mut ds = DenseMatrix::zeros(source.rows(), source.cols());
    for a in 0..source.rows() {
        let sa = source.row(a);
        let out = ds.row_mut(a);
        for j in 0..source.rows() {
            let w = 2.0 / (n * n) * c * kss.get(a, j);
            for ((o, x), y) in out.iter_mut().zip(sa).zip(source.row(j)) {
                *o += w * (x - y);
            }
        }
        for j in 0..target.rows() {
            let w = -2.0 / (n * m) * c * kst.get(a, j);
            for ((o, x), y) in out.iter_mut().zip(sa).zip(target.row(j)) {
                *o += w * (x - y);
            }
        }
    }

    let mut dt = DenseMatrix::zeros(target.rows(), target.cols());
    for b in 0..target.rows() {
        let tb = target.row(b);
        let out = dt.row_mut(b);
        for j in 0..target.rows() {
            let w = 2.0 / (m * m) * c * ktt.get(b, j);
            for ((o, x), y) in out.iter_mut().zip(tb).zip(target.row(j)) {
                *o += w * (x - y);
            }
        }
        for i in 0..source.rows() {
            let w = -2.0 / (n * m) * c * kst.get(i, b);
            for ((o, x), y) in out.iter_mut().zip(tb).zip(source.row(i)) {
                *o += w * (x - y);
            }
        }
    }
    Ok((ds, dt))
}

/// Sorted row indices: all rows when `n <= cap`, otherwise a uniform
/// subsample of size `cap`.
pub fn subsample_rows(n: usize, cap: Option<usize>, seed: u64) -> Vec<usize> {
    match cap {
        Some(cap) if n > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = sample(&mut rng, n, cap).into_vec();
            rows.sort_unstable();
            rows
        }
        _ => (0..n).collect(),
    }
}

fn prepare(
    source: &DenseMatrix,
    target: &DenseMatrix,
    cfg: &MmdConfig,
) -> Result<(Vec<usize>, Vec<usize>, f64)> {
    if source.rows() == 0 || target.rows() == 0 {
        return Err(Error::EmptyInput("mmd"));
    }
    let source_rows = subsample_rows(source.rows(), cfg.max_rows, cfg.seed);
    let target_rows = subsample_rows(target.rows(), cfg.max_rows, cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let bandwidth = match cfg.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Median => median_heuristic(
            &source.select_rows(&source_rows),
            &target.select_rows(&target_rows),
        ),
    };
    Ok((source_rows, target_rows, bandwidth))
}

/// Differentiable MMD² between two embedding matrices.
pub fn mmd(tape: &mut Tape, source: Var, target: Var, cfg: &MmdConfig) -> Result<Var> {
    let (s_rows, t_rows, bandwidth) = prepare(tape.value(source), tape.value(target), cfg)?;
    tape.mmd(source, target, s_rows, t_rows, bandwidth)
}

/// MMD² of plain matrices.
pub fn mmd_value(source: &DenseMatrix, target: &DenseMatrix, cfg: &MmdConfig) -> Result<f64> {
    let (s_rows, t_rows, bandwidth) = prepare(source, target, cfg)?;
    biased_mmd2(
        &source.select_rows(&s_rows),
        &target.select_rows(&t_rows),
        bandwidth,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_cloud(n: usize, d: usize, mean: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let normal = Normal::new(mean, 1.0).unwrap();
        DenseMatrix::from_fn(n, d, |_, _| normal.sample(rng))
    }

    /// Direct O(n²) evaluation written without the kernel-matrix helper.
    fn brute_force(s: &DenseMatrix, t: &DenseMatrix, h: f64) -> f64 {
        let k = |a: &[f64], b: &[f64]| {
            (-a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / h).exp()
        };
        let (n, m) = (s.rows(), t.rows());
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += k(s.row(i), s.row(j)) / (n * n) as f64;
            }
        }
        for i in 0..m {
            for j in 0..m {
                total += k(t.row(i), t.row(j)) / (m * m) as f64;
            }
        }
        for i in 0..n {
            for j in 0..m {
                total -= 2.0 * k(s.row(i), t.row(j)) / (n * m) as f64;
            }
        }
        total
    }

    #[test]
    fn identical_sets_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = gaussian_cloud(40, 3, 0.0, &mut rng);
        let v = mmd_value(&s, &s, &MmdConfig::default()).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn separated_clouds_are_far_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = gaussian_cloud(200, 2, -5.0, &mut rng);
        let t = gaussian_cloud(200, 2, 5.0, &mut rng);
        let cfg = MmdConfig::default();
        let v = mmd_value(&s, &t, &cfg).unwrap();
        let h = median_heuristic(&s, &t);
        assert!((v - brute_force(&s, &t, h)).abs() < 1e-12);
        assert!(v > 0.5, "{v}");
    }

    #[test]
    fn nonnegative_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(1..15);
            let m = rng.random_range(1..15);
            let s = gaussian_cloud(n, 3, 0.0, &mut rng);
            let t = gaussian_cloud(m, 3, 0.3, &mut rng);
            let cfg = MmdConfig::default();
            let a = mmd_value(&s, &t, &cfg).unwrap();
            let b = mmd_value(&t, &s, &cfg).unwrap();
            assert!(a >= -1e-12);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn row_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = gaussian_cloud(12, 4, 0.0, &mut rng);
        let t = gaussian_cloud(9, 4, 1.0, &mut rng);
        let perm: Vec<usize> = (0..12).rev().collect();
        let cfg = MmdConfig::default();
        let a = mmd_value(&s, &t, &cfg).unwrap();
        let b = mmd_value(&s.select_rows(&perm), &t, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn empty_input_rejected() {
        let s = DenseMatrix::zeros(0, 3);
        let t = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            mmd_value(&s, &t, &MmdConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn subsample_caps_rows() {
        let rows = subsample_rows(100, Some(10), 1);
        assert_eq!(rows.len(), 10);
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_rows(5, Some(10), 1), vec![0, 1, 2, 3, 4]);
        assert_eq!(rows, subsample_rows(100, Some(10), 1));
    }

    #[test]
    fn median_of_even_count() {
        // Three points on a line: squared distances 1, 4, 9 -> median 4.
        let s = DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let t = DenseMatrix::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(median_heuristic(&s, &t), 4.0);
        // Four points 0..=3: squared distances 1 1 1 4 4 9 -> 2.5.
        let t = DenseMatrix::from_rows(&[vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(median_heuristic(&s, &t), 2.5);
    }
}
