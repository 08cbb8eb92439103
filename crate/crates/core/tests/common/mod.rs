#![allow(dead_code)]

use fl_lrbc::lrbc::{BoxBounds, LabeledBatch, Weights};
use fl_lrbc::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counted half.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut hits = 0.0;
    let mut pairs = 0.0;
    for (i, &sp) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sn) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                hits += 1.0;
            } else if sp == sn {
                hits += 0.5;
            }
        }
    }
    hits / pairs
}

/// Largest gap between the class shares scoring at or above each observed score.
pub fn brute_ks(scores: &[f64], labels: &[u8]) -> f64 {
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = labels.len() as f64 - p;
    let mut best: f64 = 0.0;
    for &t in scores {
        let above = |class: u8| {
            scores
                .iter()
                .zip(labels)
                .filter(|(&s, &l)| l == class && s >= t)
                .count() as f64
        };
        best = best.max((above(1) / p - above(0) / n).abs());
    }
    best
}

/// Central differences of `f` over every coefficient and the intercept.
pub fn finite_difference(w: &Weights, h: f64, f: impl Fn(&Weights) -> f64) -> (Vec<f64>, f64) {
    let mut grad = Vec::with_capacity(w.dim());
    for j in 0..w.dim() {
        let (mut up, mut down) = (w.clone(), w.clone());
        up.w[j] += h;
        down.w[j] -= h;
        grad.push((f(&up) - f(&down)) / (2.0 * h));
    }
    let (mut up, mut down) = (w.clone(), w.clone());
    up.b += h;
    down.b -= h;
    (grad, (f(&up) - f(&down)) / (2.0 * h))
}

/// Infinity-norm error relative to the larger of the two gradients.
pub fn relative_error(a: (&[f64], f64), b: (&[f64], f64)) -> f64 {
    let diff =
        a.0.iter()
            .zip(b.0)
            .map(|(x, y)| (x - y).abs())
            .fold((a.1 - b.1).abs(), f64::max);
    let scale =
        a.0.iter()
            .chain(b.0)
            .map(|x| x.abs())
            .fold(a.1.abs().max(b.1.abs()), f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Gaussian features with labels from a logistic model.
pub fn logistic_data(n: usize, beta: &[f64], intercept: f64, seed: u64) -> LabeledBatch {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = beta.iter().map(|_| r.gen_range(-1.5..1.5)).collect();
        let z: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + intercept;
        let p = 1.0 / (1.0 + (-z).exp());
        labels.push(u8::from(r.gen::<f64>() < p));
        rows.push(x);
    }
    // Guarantee both classes.
    labels[0] = 1;
    labels[1] = 0;
    LabeledBatch::from_binary(Matrix::from_rows(&rows), &labels).unwrap()
}

/// Two features: the first raises default risk, the second lowers it,
/// so the unconstrained optimum has a negative second coefficient.
pub fn boundary_data(n: usize, seed: u64) -> LabeledBatch {
    logistic_data(n, &[1.2, -0.8], -0.2, seed)
}

/// Exhaustive search for the minimizer of `f` over `w >= 0` on a grid.
pub fn grid_search_2d(
    f: impl Fn(&Weights) -> f64,
    w_range: (f64, f64),
    b_range: (f64, f64),
    steps: usize,
) -> Weights {
    let at = |r: (f64, f64), i: usize| r.0 + (r.1 - r.0) * i as f64 / steps as f64;
    let mut best = (f64::INFINITY, Weights::zeros(2));
    for i in 0..=steps {
        for j in 0..=steps {
            for k in 0..=steps {
                let w = Weights::new(vec![at(w_range, i), at(w_range, j)], at(b_range, k));
                let v = f(&w);
                if v < best.0 {
                    best = (v, w);
                }
            }
        }
    }
    best.1
}

/// Golden-section refinement of one coordinate of a convex function.
pub fn refine_coordinate(
    w: &mut Weights,
    index: Option<usize>,
    lo: f64,
    hi: f64,
    f: &impl Fn(&Weights) -> f64,
) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let set = |w: &mut Weights, v: f64| match index {
        Some(j) => w.w[j] = v,
        None => w.b = v,
    };
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        let mut wc = w.clone();
        set(&mut wc, c);
        let mut wd = w.clone();
        set(&mut wd, d);
        if f(&wc) < f(&wd) {
            b = d;
        } else {
            a = c;
        }
    }
    set(w, (a + b) / 2.0);
}

/// Coordinate-descent polish of a grid optimum under `w >= 0`.
pub fn polish(mut w: Weights, f: impl Fn(&Weights) -> f64, radius: f64) -> Weights {
    for _ in 0..60 {
        for j in 0..w.dim() {
            let c = w.w[j];
            refine_coordinate(&mut w, Some(j), (c - radius).max(0.0), c + radius, &f);
        }
        let c = w.b;
        refine_coordinate(&mut w, None, c - radius, c + radius, &f);
    }
    w
}

pub fn nonnegative(n: usize) -> BoxBounds {
    BoxBounds::nonnegative(n)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let cov: f64 = ra
        .iter()
        .zip(&rb)
        .map(|(x, y)| (x - mean) * (y - mean))
        .sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mean).powi(2)).sum();
    cov / (va * vb).sqrt()
}
