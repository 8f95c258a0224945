//! Scalar root finding and maximization helpers for piecewise-linear maps.

/// Root of a continuous function that is linear between consecutive
/// `breakpoints`, given `f(lo) > 0 >= f(hi)`.
/// An endpoint is returned as-is when the sign condition fails there.
///
/// Binary-searches the sorted breakpoints for the bracketing linear piece,
/// then interpolates on it. Returns the root and the number of
/// evaluations of `f`.
pub(crate) fn bracketed_pl_root<F>(f: F, mut lo: f64, mut hi: f64, breakpoints: &[f64]) -> (f64, usize)
where
    F: Fn(f64) -> f64,
{
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    let mut evals = 2;
    if f_lo <= 0.0 {
        return (lo, evals);
    }
    if f_hi >= 0.0 {
        return (hi, evals);
    }
    let mut inner: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > lo && b < hi).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    let (mut a, mut b) = (0, inner.len());
    while a < b {
        let m = (a + b) / 2;
        let v = f(inner[m]);
        evals += 1;
        if v > 0.0 {
            lo = inner[m];
            f_lo = v;
            a = m + 1;
        } else {
            hi = inner[m];
            f_hi = v;
            b = m;
        }
    }
    if f_hi == 0.0 {
        return (hi, evals);
    }
    let root = lo + f_lo * (hi - lo) / (f_lo - f_hi);
    (root.clamp(lo, hi), evals)
}

/// Sorted, deduplicated partition of `[0, 1]` with the given interior
/// kinks.
pub(crate) fn unit_partition(kinks: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut pts: Vec<f64> = kinks.into_iter().filter(|k| *k > 0.0 && *k < 1.0).collect();
    pts.push(0.0);
    pts.push(1.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Golden-section search for the maximizer of a unimodal function on
/// `[lo, hi]`. Returns the final bracket.
pub(crate) fn golden_section_max<F>(f: F, mut lo: f64, mut hi: f64, xtol: f64, max_iter: usize) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if hi - lo <= xtol {
            break;
        }
        // Ties move right-to-left so the bracket settles on the smaller maximizer.
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    (lo, hi)
}
