//! Central finite-difference oracle for checking tape gradients.

use crate::tensor::Tensor;

/// Outcome of comparing one analytic gradient against finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

/// Relative error `|a - n| / max(|a|, |n|)`; pairs where both magnitudes fall
/// below `floor` are compared on absolute error against `floor * rel`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        (analytic - numeric).abs() / floor
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central difference of `f` at coordinate `index` of `point`.
pub fn central_difference(
    f: &mut dyn FnMut(&Tensor) -> f64,
    point: &Tensor,
    index: usize,
    h: f64,
) -> f64 {
    let mut probe = point.clone();
    let x0 = point.data()[index];
    probe.data_mut()[index] = x0 + h;
    let fp = f(&probe);
    probe.data_mut()[index] = x0 - h;
    let fm = f(&probe);
    (fp - fm) / (2.0 * h)
}

/// Fourth-order central difference `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
pub fn five_point_difference(
    f: &mut dyn FnMut(&Tensor) -> f64,
    point: &Tensor,
    index: usize,
    h: f64,
) -> f64 {
    let mut probe = point.clone();
    let x0 = point.data()[index];
    let mut at = |dx: f64| {
        probe.data_mut()[index] = x0 + dx;
        f(&probe)
    };
    let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
    (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
}

/// Compares `analytic` against five-point differences of `f` at `indices`.
pub fn check_indices(
    f: &mut dyn FnMut(&Tensor) -> f64,
    point: &Tensor,
    analytic: &Tensor,
    indices: &[usize],
    h: f64,
    floor: f64,
) -> GradCheck {
    assert_eq!(point.shape(), analytic.shape(), "gradient shape mismatch");
    let mut out = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for &i in indices {
        let num = five_point_difference(f, point, i, h);
        let a = analytic.data()[i];
        out.checked += 1;
        out.max_rel_err = out.max_rel_err.max(rel_err(a, num, floor));
        out.max_abs_err = out.max_abs_err.max((a - num).abs());
    }
    out
}

/// Five-point estimate at the step from `steps` (descending) whose
/// neighbouring estimate agrees best, after charging each pair the stencil's
/// round-off bound `3·ε·|f(x)|/h`. Large steps straddle kinks, small ones
/// drown in round-off; the best-scoring pair sits between the two.
pub fn adaptive_difference(
    f: &mut dyn FnMut(&Tensor) -> f64,
    point: &Tensor,
    index: usize,
    steps: &[f64],
) -> f64 {
    assert!(!steps.is_empty(), "need at least one step size");
    let est: Vec<f64> = steps
        .iter()
        .map(|&h| five_point_difference(f, point, index, h))
        .collect();
    if est.len() == 1 {
        return est[0];
    }
    let scale = 3.0 * f64::EPSILON * f(point).abs();
    let score = |i: usize| (est[i] - est[i + 1]).abs() + scale / steps[i].min(steps[i + 1]);
    let best = (0..est.len() - 1)
        .min_by(|&i, &j| score(i).total_cmp(&score(j)))
        .unwrap();
    0.5 * (est[best] + est[best + 1])
}

/// [`check_indices`] with [`adaptive_difference`] as the oracle.
pub fn check_indices_adaptive(
    f: &mut dyn FnMut(&Tensor) -> f64,
    point: &Tensor,
    analytic: &Tensor,
    indices: &[usize],
    steps: &[f64],
    floor: f64,
) -> GradCheck {
    assert_eq!(point.shape(), analytic.shape(), "gradient shape mismatch");
    let mut out = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for &i in indices {
        let num = adaptive_difference(f, point, i, steps);
        let a = analytic.data()[i];
        out.checked += 1;
        out.max_rel_err = out.max_rel_err.max(rel_err(a, num, floor));
        out.max_abs_err = out.max_abs_err.max((a - num).abs());
    }
    out
}

/// Up to `max` evenly strided coordinates of a tensor with `len` entries,
/// always including the first and last.
pub fn sample_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut v: Vec<usize> = (0..max).map(|k| k * (len - 1) / (max - 1)).collect();
    v.dedup();
    v
}
