//! Fixed-order pairwise reductions.
//!
//! Every voxel or element sum in the crate goes through these helpers. The
//! split points depend only on the length of the range, so the association
//! order (and therefore the rounded result) is independent of how rayon
//! schedules the two halves.

const LEAF: usize = 256;
const PAR_CUTOFF: usize = 1 << 15;

/// Pairwise sum of `f(i)` for `i` in `0..n`.
pub fn tree_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    tree_sum_range(0, n, &f)
}

fn tree_sum_range<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let len = hi - lo;
    if len <= LEAF {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    if len >= PAR_CUTOFF {
        let (a, b) = rayon::join(|| tree_sum_range(lo, mid, f), || tree_sum_range(mid, hi, f));
        a + b
    } else {
        tree_sum_range(lo, mid, f) + tree_sum_range(mid, hi, f)
    }
}

/// Pairwise sum of a slice.
pub fn sum(xs: &[f64]) -> f64 {
    tree_sum(xs.len(), |i| xs[i])
}

/// Pairwise dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    tree_sum(a.len(), |i| a[i] * b[i])
}

/// Pairwise sum of `k`-vectors `f(i)` accumulated component-wise.
pub fn tree_sum_vec<F>(n: usize, k: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    tree_sum_vec_range(0, n, k, &f)
}

fn tree_sum_vec_range<F>(lo: usize, hi: usize, k: usize, f: &F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let len = hi - lo;
    if len <= LEAF {
        let mut acc = vec![0.0; k];
        let mut tmp = vec![0.0; k];
        for i in lo..hi {
            tmp.iter_mut().for_each(|t| *t = 0.0);
            f(i, &mut tmp);
            for (a, t) in acc.iter_mut().zip(&tmp) {
                *a += t;
            }
        }
        return acc;
    }
    let mid = lo + len / 2;
    let (mut a, b) = if len >= PAR_CUTOFF {
        rayon::join(
            || tree_sum_vec_range(lo, mid, k, f),
            || tree_sum_vec_range(mid, hi, k, f),
        )
    } else {
        (tree_sum_vec_range(lo, mid, k, f), tree_sum_vec_range(mid, hi, k, f))
    };
    for (x, y) in a.iter_mut().zip(&b) {
        *x += y;
    }
    a
}

/// Maximum of `f(i)`; `f64::NEG_INFINITY` for an empty range.
pub fn tree_max<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    (0..n).map(f).fold(f64::NEG_INFINITY, f64::max)
}
