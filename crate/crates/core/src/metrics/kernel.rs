//! RBF-kernel maximum mean discrepancy on flattened feature maps.
//!
//! Memory per channel is the grouped view of the N maps plus a Y×Y table of
//! kernel block sums; time is O(N²·H·W).

use super::stats::ClassGroups;
use crate::error::{Error, Result};

/// `exp(−‖x−y‖² / 2σ²)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn block_sum(a: &[&[f64]], b: &[&[f64]], sigma: f64) -> f64 {
    a.iter()
        .map(|x| b.iter().map(|y| rbf_kernel(x, y, sigma)).sum::<f64>())
        .sum()
}

/// Biased (V-statistic) two-sample MMD², self-pairs included.
pub fn mmd_two(a: &[&[f64]], b: &[&[f64]], sigma: f64) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let v = block_sum(a, a, sigma) / (na * na) + block_sum(b, b, sigma) / (nb * nb)
        - 2.0 * block_sum(a, b, sigma) / (na * nb);
    v.max(0.0)
}

/// Class-averaged one-vs-all MMD of one channel.
#[allow(clippy::needless_range_loop)]
pub(crate) fn mmd_grouped(groups: &ClassGroups<'_>, sigma: f64) -> Result<f64> {
    let y = groups.num_classes();
    let total = groups.total();
    for c in 0..y {
        let n = groups.class_size(c);
        if n == 0 || n == total {
            return Err(Error::DegenerateClass {
                class: c,
                reason: format!("one-vs-all partition has {n} / {} samples", total - n),
            });
        }
    }
    let mut blocks = vec![vec![0.0; y]; y];
    for a in 0..y {
        for b in a..y {
            let s = block_sum(&groups.groups[a], &groups.groups[b], sigma);
            blocks[a][b] = s;
            blocks[b][a] = s;
        }
    }
    let mut acc = 0.0;
    for c in 0..y {
        let n_pos = groups.class_size(c) as f64;
        let n_neg = (total - groups.class_size(c)) as f64;
        let own = blocks[c][c];
        let cross: f64 = (0..y).filter(|&b| b != c).map(|b| blocks[c][b]).sum();
        let rest: f64 = (0..y)
            .filter(|&a| a != c)
            .flat_map(|a| (0..y).filter(move |&b| b != c).map(move |b| (a, b)))
            .map(|(a, b)| blocks[a][b])
            .sum();
        let v = own / (n_pos * n_pos) + rest / (n_neg * n_neg) - 2.0 * cross / (n_pos * n_neg);
        acc += v.max(0.0);
    }
    Ok(acc / y as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_singletons() {
        let x: &[f64] = &[0.3, -1.0];
        assert_eq!(mmd_two(&[x], &[x], 1.0), 0.0);
    }

    #[test]
    fn two_points_hand_value() {
        let a: &[f64] = &[0.0];
        let b: &[f64] = &[2.0];
        let expected = 2.0 - 2.0 * (-2.0f64).exp();
        assert!((mmd_two(&[a], &[b], 1.0) - expected).abs() < 1e-12);
        assert!((expected - 1.729329).abs() < 1e-6);
    }

    #[test]
    fn symmetric() {
        let a: Vec<&[f64]> = vec![&[0.0, 1.0], &[0.5, 0.2], &[1.0, 1.0]];
        let b: Vec<&[f64]> = vec![&[2.0, 0.0], &[-1.0, 0.3]];
        assert!((mmd_two(&a, &b, 0.7) - mmd_two(&b, &a, 0.7)).abs() < 1e-15);
    }
}
