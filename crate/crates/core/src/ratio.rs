//! The density-ratio curve `r(y) = f_p(y) / f_u(y)` over sorted unlabeled
//! predictions, and the two smoothing passes applied to it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{logit, DensityModel};

#[derive(Debug, Error, PartialEq)]
pub enum RatioError {
    #[error("y has {y} entries but r has {r}")]
    LengthMismatch { y: usize, r: usize },
    #[error("ratio curve is empty")]
    Empty,
    #[error("y[{0}] is not finite")]
    NonFiniteY(usize),
    #[error("r[{index}] = {value} is not a finite non-negative number")]
    InvalidRatio { index: usize, value: f64 },
    #[error("prediction {0} is not in (0, 1)")]
    NotProbability(f64),
}

/// Points sorted by `y`. `order[i]` is the input position of point `i`, so
/// per-point results can be returned in the caller's order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    y: Vec<f64>,
    r: Vec<f64>,
    order: Vec<usize>,
}

impl RatioCurve {
    /// Sorts the pairs by `y` (stable, duplicates kept).
    pub fn new(y: Vec<f64>, r: Vec<f64>) -> Result<Self, RatioError> {
        if y.len() != r.len() {
            return Err(RatioError::LengthMismatch {
                y: y.len(),
                r: r.len(),
            });
        }
        if y.is_empty() {
            return Err(RatioError::Empty);
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(RatioError::NonFiniteY(i));
        }
        check_ratios(&r)?;
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        Ok(Self {
            y: order.iter().map(|&i| y[i]).collect(),
            r: order.iter().map(|&i| r[i]).collect(),
            order,
        })
    }

    /// A curve from ratio values alone, at evenly spaced `y`.
    pub fn from_ratios(r: Vec<f64>) -> Result<Self, RatioError> {
        let n = r.len();
        let y = (0..n).map(|i| (i as f64 + 1.0) / (n as f64 + 1.0)).collect();
        Self::new(y, r)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn with_r(&self, r: Vec<f64>) -> Self {
        debug_assert_eq!(r.len(), self.r.len());
        Self {
            y: self.y.clone(),
            r,
            order: self.order.clone(),
        }
    }

    /// Reorders per-point values from curve order back to input order.
    pub fn to_input_order(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (v, &i) in values.iter().zip(&self.order) {
            out[i] = *v;
        }
        out
    }
}

fn check_ratios(r: &[f64]) -> Result<(), RatioError> {
    match r.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(index) => Err(RatioError::InvalidRatio {
            index,
            value: r[index],
        }),
        None => Ok(()),
    }
}

/// Evaluates `f_p / f_u` at the logits of `y_u` and sorts by `y`.
pub fn compute_ratio(
    f_p: &DensityModel,
    f_u: &DensityModel,
    y_u: &[f64],
) -> Result<RatioCurve, RatioError> {
    if let Some(&bad) = y_u.iter().find(|y| !(**y > 0.0 && **y < 1.0)) {
        return Err(RatioError::NotProbability(bad));
    }
    let r = y_u
        .par_iter()
        .map(|&y| {
            let x = logit(y);
            f_p.pdf(x) / f_u.pdf(x)
        })
        .collect();
    RatioCurve::new(y_u.to_vec(), r)
}

/// Running maximum over the points with `y >= threshold`; points below the
/// threshold are left alone and do not feed the maximum.
pub fn monotonize(curve: &RatioCurve, threshold: f64) -> RatioCurve {
    let mut r = curve.r.clone();
    let mut max_cur = 0.0f64;
    for (ri, &y) in r.iter_mut().zip(&curve.y) {
        if y >= threshold {
            max_cur = max_cur.max(*ri);
            *ri = max_cur;
        }
    }
    curve.with_r(r)
}

/// Symmetric window half-width used by [`rolling_median`].
pub fn median_half_width(len: usize) -> usize {
    let k = len / 20;
    if len >= 3 {
        k.max(1)
    } else {
        k
    }
}

/// Median over the inclusive window `[i - k_i, i + k_i]` with
/// `k_i = min(k, i, len - 1 - i)`, read from the unmodified input.
pub fn rolling_median(curve: &RatioCurve) -> RatioCurve {
    let len = curve.len();
    let k = median_half_width(len);
    let src = &curve.r;
    let r = (0..len)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let kc = k.min(i).min(len - 1 - i);
            buf.clear();
            buf.extend_from_slice(&src[i - kc..=i + kc]);
            crate::stats::median_in_place(buf)
        })
        .collect();
    curve.with_r(r)
}

/// Mean of the unlabeled predictions.
pub fn default_threshold(y_u: &[f64]) -> f64 {
    crate::stats::mean(y_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::fit_kde;
    use proptest::prelude::*;

    fn curve(y: &[f64], r: &[f64]) -> RatioCurve {
        RatioCurve::new(y.to_vec(), r.to_vec()).unwrap()
    }

    #[test]
    fn identical_models_give_unit_ratio() {
        let f = fit_kde(&[-1.0, 0.0, 0.5, 2.0], 0.3).unwrap();
        let c = compute_ratio(&f, &f, &[0.1, 0.5, 0.93, 0.2]).unwrap();
        assert!(c.r().iter().all(|&v| v == 1.0));
        assert_eq!(c.y(), &[0.1, 0.2, 0.5, 0.93]);
        assert_eq!(c.order(), &[0, 3, 1, 2]);
    }

    #[test]
    fn floor_scaling_cancels() {
        // Far outside both supports each density sits on the floor.
        let a = fit_kde(&[0.0], 0.01).unwrap();
        let b = fit_kde(&[0.5], 0.01).unwrap();
        let c = compute_ratio(&a, &b, &[0.999_999]).unwrap();
        assert_eq!(c.r(), &[1.0]);
    }

    #[test]
    fn rejects_non_probabilities() {
        let f = fit_kde(&[0.0], 1.0).unwrap();
        assert_eq!(compute_ratio(&f, &f, &[0.0]), Err(RatioError::NotProbability(0.0)));
        assert!(matches!(
            RatioCurve::new(vec![0.1], vec![f64::INFINITY]),
            Err(RatioError::InvalidRatio { index: 0, .. })
        ));
    }

    #[test]
    fn input_order_round_trip() {
        let c = curve(&[0.9, 0.1, 0.5], &[3.0, 1.0, 2.0]);
        assert_eq!(c.to_input_order(c.r()), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn monotonize_examples() {
        let up = curve(&[0.6, 0.7, 0.8], &[1.0, 2.0, 2.5]);
        assert_eq!(monotonize(&up, 0.5).r(), up.r());

        let c = curve(&[0.6, 0.7, 0.8], &[1.0, 3.0, 2.0]);
        assert_eq!(monotonize(&c, 0.5).r(), &[1.0, 3.0, 3.0]);

        let c = curve(&[0.1, 0.7, 0.8], &[9.0, 3.0, 2.0]);
        assert_eq!(monotonize(&c, 0.5).r(), &[9.0, 3.0, 3.0]);
    }

    #[test]
    fn monotonize_threshold_is_inclusive() {
        let c = curve(&[0.6, 0.6, 0.7], &[5.0, 1.0, 2.0]);
        assert_eq!(monotonize(&c, 0.6).r(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn rolling_median_examples() {
        let flat = RatioCurve::from_ratios(vec![2.5; 37]).unwrap();
        assert_eq!(rolling_median(&flat).r(), flat.r());

        let mut r = vec![1.0; 100];
        r[1] = 100.0;
        r[50] = 100.0;
        let out = rolling_median(&RatioCurve::from_ratios(r).unwrap());
        assert_eq!(median_half_width(100), 5);
        assert_eq!(out.r()[50], 1.0);
        // Window at i = 1 has radius 1: {1, 100, 1}.
        assert_eq!(out.r()[1], 1.0);

        let r: Vec<f64> = (0..40).map(|i| ((i * 7919) % 13) as f64).collect();
        let out = rolling_median(&RatioCurve::from_ratios(r.clone()).unwrap());
        assert_eq!(out.r()[0], r[0]);
        assert_eq!(out.r()[39], r[39]);
    }

    #[test]
    fn small_curves_still_smoothed() {
        assert_eq!(median_half_width(2), 0);
        assert_eq!(median_half_width(3), 1);
        let out = rolling_median(&RatioCurve::from_ratios(vec![1.0, 9.0, 2.0]).unwrap());
        assert_eq!(out.r(), &[1.0, 2.0, 2.0]);
    }

    #[test]
    fn threshold_examples() {
        assert!((default_threshold(&[0.2, 0.4]) - 0.3).abs() < 1e-15);
        assert_eq!(default_threshold(&[0.7; 5]), 0.7);
        assert!((default_threshold(&[0.2, 0.4, 0.2, 0.4]) - 0.3).abs() < 1e-15);
    }

    fn arb_curve() -> impl Strategy<Value = RatioCurve> {
        proptest::collection::vec((0.001f64..0.999, 0.0f64..10.0), 1..120).prop_map(|pts| {
            let (y, r) = pts.into_iter().unzip();
            RatioCurve::new(y, r).unwrap()
        })
    }

    proptest! {
        #[test]
        fn monotonize_idempotent_and_dominating(c in arb_curve(), t in 0.0f64..1.0) {
            let once = monotonize(&c, t);
            let twice = monotonize(&once, t);
            prop_assert_eq!(twice.r(), once.r());
            for ((y, a), b) in c.y().iter().zip(c.r()).zip(once.r()) {
                if *y >= t { prop_assert!(b >= a) } else { prop_assert_eq!(a, b) }
            }
        }

        #[test]
        fn rolling_median_within_window_bounds(c in arb_curve()) {
            let out = rolling_median(&c);
            let n = c.len();
            let k = median_half_width(n);
            prop_assert_eq!(out.len(), n);
            for i in 0..n {
                let kc = k.min(i).min(n - 1 - i);
                let w = &c.r()[i - kc..=i + kc];
                let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.r()[i] >= lo && out.r()[i] <= hi);
            }
        }

        #[test]
        fn swapped_ratio_is_reciprocal(
            a in proptest::collection::vec(-2.0f64..2.0, 5..40),
            b in proptest::collection::vec(-2.0f64..2.0, 5..40),
            y in proptest::collection::vec(0.2f64..0.8, 1..30),
        ) {
            let fa = fit_kde(&a, 0.5).unwrap();
            let fb = fit_kde(&b, 0.5).unwrap();
            let ab = compute_ratio(&fa, &fb, &y).unwrap();
            let ba = compute_ratio(&fb, &fa, &y).unwrap();
            for (i, (p, q)) in ab.r().iter().zip(ba.r()).enumerate() {
                let x = logit(ab.y()[i]);
                if fa.pdf(x) > 1e-6 && fb.pdf(x) > 1e-6 {
                    prop_assert!((p * q - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
