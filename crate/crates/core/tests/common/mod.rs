//! Shared fixtures and independent, loop-based reference implementations.
//!
//! The oracles work on raw `N×C×H×W` buffers and plain loops so they share
//! no code path with the library.

#![allow(dead_code, clippy::needless_range_loop)]

use prunekit::tensor_io::{ActivationSet, ClassLabels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const EPS: f64 = 1e-8;
pub const SIGMA: f64 = 1.0;
pub const RHO: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// A raw tensor with labels, plus the validated library view of it.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub data: Vec<f64>,
    pub shape: [usize; 4],
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Fixture {
    pub fn acts(&self) -> ActivationSet {
        ActivationSet::new(self.data.clone(), self.shape, self.labels.clone(), self.num_classes).unwrap()
    }

    pub fn fine(&self) -> ClassLabels {
        ClassLabels::fine(&self.acts())
    }

    pub fn map(&self, i: usize, c: usize) -> &[f64] {
        let [_, ch, h, w] = self.shape;
        let start = (i * ch + c) * h * w;
        &self.data[start..start + h * w]
    }
}

/// Random small tensor with every class present at least twice and
/// class-dependent channel offsets so scores are not all near zero.
pub fn random_fixture(seed: u64, max_n: usize, max_c: usize, max_hw: usize, max_y: usize) -> Fixture {
    let mut r = rng(seed);
    let y = r.random_range(2..=max_y);
    let n = r.random_range(2 * y..=max_n.max(2 * y));
    let c = r.random_range(1..=max_c);
    let h = r.random_range(1..=max_hw);
    let w = r.random_range(1..=max_hw);
    let mut labels: Vec<usize> = (0..n)
        .map(|i| if i < 2 * y { i % y } else { r.random_range(0..y) })
        .collect();
    // shuffle so the guaranteed members are not always first
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        labels.swap(i, j);
    }
    let offsets: Vec<Vec<f64>> = (0..c).map(|_| (0..y).map(|_| 2.0 * normal(&mut r)).collect()).collect();
    let scales: Vec<f64> = (0..c).map(|_| 0.2 + 2.0 * r.random::<f64>()).collect();
    let mut data = Vec::with_capacity(n * c * h * w);
    for &label in &labels {
        for ch in 0..c {
            for _ in 0..h * w {
                data.push(offsets[ch][label] + scales[ch] * normal(&mut r));
            }
        }
    }
    Fixture {
        data,
        shape: [n, c, h, w],
        labels,
        num_classes: y,
    }
}

/// Pooled activations of one channel: (class c, everything else).
pub fn split_channel(fx: &Fixture, channel: usize, class: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..fx.shape[0] {
        let target = if fx.labels[i] == class { &mut pos } else { &mut neg };
        target.extend_from_slice(fx.map(i, channel));
    }
    (pos, neg)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mut s = 0.0;
    for &x in xs {
        s += x;
    }
    let m = s / n;
    let mut v = 0.0;
    for &x in xs {
        v += (x - m) * (x - m);
    }
    (m, v / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    Sd,
    AbsSnr,
    Fdr,
    Ttest,
}

pub fn binary_oracle(kind: Scalar, pos: &[f64], neg: &[f64], eps: f64) -> f64 {
    let (mp, vp) = mean_var(pos);
    let (mn, vn) = mean_var(neg);
    let (vp, vn) = (vp + eps, vn + eps);
    let d = mp - mn;
    match kind {
        Scalar::Sd => (0.5 * (vp / vn + vn / vp) + 0.5 * d * d / (vp + vn) - 1.0).max(0.0),
        Scalar::AbsSnr => d.abs() / (vp.sqrt() + vn.sqrt()),
        Scalar::Fdr => d * d / (vp + vn),
        Scalar::Ttest => d.abs() / (vp / pos.len() as f64 + vn / neg.len() as f64).sqrt(),
    }
}

pub fn generalized_oracle(kind: Scalar, fx: &Fixture, channel: usize, eps: f64) -> f64 {
    let mut total = 0.0;
    for c in 0..fx.num_classes {
        let (pos, neg) = split_channel(fx, channel, c);
        total += binary_oracle(kind, &pos, &neg, eps);
    }
    total / fx.num_classes as f64
}

fn kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let mut d2 = 0.0;
    for k in 0..x.len() {
        d2 += (x[k] - y[k]) * (x[k] - y[k]);
    }
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Biased (V-statistic) MMD² between two sets of vectors.
pub fn mmd_two_oracle(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> f64 {
    let mean_k = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        let mut s = 0.0;
        for x in p {
            for y in q {
                s += kernel(x, y, sigma);
            }
        }
        s / (p.len() * q.len()) as f64
    };
    (mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b)).max(0.0)
}

pub fn mmd_oracle(fx: &Fixture, channel: usize, sigma: f64) -> f64 {
    let mut total = 0.0;
    for c in 0..fx.num_classes {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..fx.shape[0] {
            let v = fx.map(i, channel).to_vec();
            if fx.labels[i] == c {
                pos.push(v);
            } else {
                neg.push(v);
            }
        }
        total += mmd_two_oracle(&pos, &neg, sigma);
    }
    total / fx.num_classes as f64
}

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

/// `(S_W, S_B)` straight from the definitions.
pub fn scatter_oracle(rows: &[Vec<f64>], labels: &[usize], num_classes: usize) -> (Mat, Mat) {
    let d = rows[0].len();
    let n = rows.len();
    let mut overall = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            overall[k] += r[k] / n as f64;
        }
    }
    let mut sw = zeros(d, d);
    let mut sb = zeros(d, d);
    for c in 0..num_classes {
        let members: Vec<&Vec<f64>> = rows
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r)
            .collect();
        let nc = members.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &members {
            for k in 0..d {
                mean[k] += r[k] / nc;
            }
        }
        for r in &members {
            for i in 0..d {
                for j in 0..d {
                    sw[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                sb[i][j] += nc * (mean[i] - overall[i]) * (mean[j] - overall[j]);
            }
        }
    }
    (sw, sb)
}

/// `Σ (x − x̄)(x − x̄)ᵀ`.
pub fn total_scatter_oracle(rows: &[Vec<f64>]) -> Mat {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += r[k] / n;
        }
    }
    let mut s = zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                s[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    s
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(m: &Mat) -> Mat {
    let n = m.len();
    let mut a: Mat = m
        .iter()
        .map(|r| {
            let mut row = r.clone();
            row.resize(2 * n, 0.0);
            row
        })
        .collect();
    for (i, row) in a.iter_mut().enumerate() {
        row[n + i] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        let p = a[col][col];
        assert!(p != 0.0, "singular matrix in oracle inverse");
        for k in 0..2 * n {
            a[col][k] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Solves `m·x = b` by Gaussian elimination with partial pivoting.
pub fn solve(m: &Mat, b: &[f64]) -> Vec<f64> {
    let n = m.len();
    let mut a: Mat = m
        .iter()
        .zip(b)
        .map(|(r, &v)| {
            let mut row = r.clone();
            row.push(v);
            row
        })
        .collect();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        assert!(a[col][col] != 0.0, "singular matrix in oracle solve");
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..=n {
                a[r][k] -= f * a[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = a[i][n];
        for k in i + 1..n {
            acc -= a[i][k] * x[k];
        }
        x[i] = acc / a[i][i];
    }
    x
}

/// `tr((S̄ + ρI)⁻¹ S_B)`, expanded as `Σ_c n_c·dᵀ(S̄ + ρI)⁻¹d` with
/// `d = m_c − m` so no rounding from a formed `S_B` meets the ridge.
pub fn di_from_rows(rows: &[Vec<f64>], labels: &[usize], num_classes: usize, rho: f64) -> f64 {
    let n = rows.len();
    let d = rows[0].len();
    let mut total = total_scatter_oracle(rows);
    for (i, row) in total.iter_mut().enumerate() {
        row[i] += rho;
    }
    let mut mean = vec![0.0; d];
    for row in rows {
        for j in 0..d {
            mean[j] += row[j];
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let mut di = 0.0;
    for c in 0..num_classes {
        let members: Vec<&Vec<f64>> = rows
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r)
            .collect();
        if members.is_empty() {
            continue;
        }
        let nc = members.len() as f64;
        let diff: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|r| r[j]).sum::<f64>() / nc - mean[j])
            .collect();
        let x = solve(&total, &diff);
        di += nc * diff.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    }
    di.max(0.0)
}

pub fn di_oracle(fx: &Fixture, channel: usize, rho: f64) -> f64 {
    let rows: Vec<Vec<f64>> = (0..fx.shape[0]).map(|i| fx.map(i, channel).to_vec()).collect();
    di_from_rows(&rows, &fx.labels, fx.num_classes, rho)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

/// Well-spread tensor for invariance checks: every class holds at least
/// 20 activations per channel with a standard deviation of 10 to 20, so the
/// variance floor shifts scores by far less than 1e-9 under rescaling.
pub fn affine_fixture(seed: u64) -> Fixture {
    let mut r = rng(seed);
    let y = r.random_range(2..=4);
    let per_class = r.random_range(5..=12);
    let c = r.random_range(1..=4);
    let (h, w) = (r.random_range(2..=3), r.random_range(2..=3));
    let labels: Vec<usize> = (0..y * per_class).map(|i| i % y).collect();
    let stds: Vec<f64> = (0..c).map(|_| r.random_range(10.0..20.0)).collect();
    let offsets: Vec<Vec<f64>> = (0..c)
        .map(|k| (0..y).map(|_| stds[k] * normal(&mut r)).collect())
        .collect();
    let mut data = Vec::with_capacity(labels.len() * c * h * w);
    for &label in &labels {
        for ch in 0..c {
            for _ in 0..h * w {
                data.push(offsets[ch][label] + stds[ch] * normal(&mut r));
            }
        }
    }
    Fixture {
        data,
        shape: [labels.len(), c, h, w],
        labels,
        num_classes: y,
    }
}

/// Applies `x → a·x + b` to every activation.
pub fn affine(fx: &Fixture, a: f64, b: f64) -> Fixture {
    let mut out = fx.clone();
    for v in &mut out.data {
        *v = a * *v + b;
    }
    out
}

/// Independent top-k selection: the k best (score desc, index asc), sorted.
pub fn top_k_oracle(scores: &[f64], k: usize) -> Vec<usize> {
    let mut chosen = Vec::new();
    let mut taken = vec![false; scores.len()];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if scores[i] > scores[b] => best = Some(i),
                _ => {}
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        chosen.push(b);
    }
    chosen.sort();
    chosen
}

/// Keep count from the rounding rules, computed with exact rationals on
/// ratios given as `num / den`.
pub fn keep_count_oracle(c: usize, ratio_num: u64, ratio_den: u64, multiple_of_8: bool) -> usize {
    // (1 − r)·C = (den − num)·C / den, rounded half up
    let p = (ratio_den - ratio_num) * c as u64;
    let mut k = ((2 * p + ratio_den) / (2 * ratio_den)) as usize;
    if multiple_of_8 {
        let lower = k / 8 * 8;
        let upper = lower + 8;
        k = if k - lower >= upper - k { upper } else { lower };
        k = k.max(8);
    }
    k.clamp(1, c)
}

/// True when two labelings induce the same partition (ids may differ).
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}
