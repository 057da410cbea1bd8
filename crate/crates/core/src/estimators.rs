//! Prior and posterior estimates from a ratio curve: the EM fixed point, the
//! maximal-slope fallback on `D(alpha)`, the full DEDPUL pipeline, and the
//! EN and quantile baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, PuDataset};
use crate::density::{logit, DensityError, DensitySettings};
use crate::ntc::{cv_predict, NtcConfig, NtcError, NtcPredictions};
use crate::ratio::{compute_ratio, default_threshold, monotonize, rolling_median, RatioCurve, RatioError};

pub const EM_MAX_ITER: usize = 100_000;

/// Second lags closer than this to the maximum count as tied.
const LAG_TIE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("EM did not converge within {EM_MAX_ITER} iterations (last alpha {})", trace.last().copied().unwrap_or(f64::NAN))]
    EmIterationCap { trace: Vec<f64> },
    #[error("max_D infeasible: no interior grid point has D < {max_d}")]
    MaxDInfeasible { max_d: f64 },
    #[error("grid step {0} must divide 1 into a whole number (>= 2) of steps")]
    InvalidEps(f64),
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("quantile {0} outside [0, 1]")]
    InvalidQuantile(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("no predictions to estimate from")]
    Empty,
}

/// Which branch produced the final prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Em,
    MaxSlope,
}

/// `D(alpha) = alpha - mean(min(alpha * r, 1))` on the grid `i * eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCurve {
    pub alphas: Vec<f64>,
    pub d: Vec<f64>,
    /// `D[i-1] - 2 D[i] + D[i+1]` at the interior points, so
    /// `second_lags[j]` belongs to `alphas[j + 1]`.
    pub second_lags: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOutcome {
    pub alpha: f64,
    /// In curve (sorted) order.
    pub posteriors: Vec<f64>,
    /// Every iterate, starting from 1.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub alpha_star: f64,
    pub branch: Branch,
    /// Per unlabeled row, in input order.
    pub posteriors: Vec<f64>,
    pub d_curve: DCurve,
    pub em_trace: Vec<f64>,
    pub em_alpha: f64,
    /// `None` when every interior grid point has `D >= max_d`.
    pub max_slope_alpha: Option<f64>,
}

fn check_alpha(alpha: f64) -> Result<(), EstimatorError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(EstimatorError::InvalidAlpha(alpha))
    }
}

fn clipped(alpha: f64, r: f64) -> f64 {
    (alpha * r).min(1.0)
}

/// `min(alpha * r_i, 1)` in curve order.
pub fn posteriors_at(curve: &RatioCurve, alpha: f64) -> Result<Vec<f64>, EstimatorError> {
    check_alpha(alpha)?;
    Ok(curve.r().iter().map(|&r| clipped(alpha, r)).collect())
}

fn mean_posterior(r: &[f64], alpha: f64) -> f64 {
    r.iter().map(|&v| clipped(alpha, v)).sum::<f64>() / r.len() as f64
}

/// Alternates clipped posteriors and their mean from `alpha = 1` until the
/// change falls below `tol`. The iterates never increase.
///
/// Once no posterior is clipped (`alpha * max r < 1`) the update is
/// `alpha -> alpha * mean(r)`. With `mean(r) < 1` its only fixed point is 0,
/// but the geometric decay can be slow enough to meet the stopping rule far
/// from it; that limit of 0 is then reported and appended to the trace.
pub fn em_alpha(curve: &RatioCurve, tol: f64) -> Result<EmOutcome, EstimatorError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(EstimatorError::InvalidTolerance(tol));
    }
    let r = curve.r();
    let mut alpha = 1.0;
    let mut trace = vec![alpha];
    for _ in 0..EM_MAX_ITER {
        let next = mean_posterior(r, alpha);
        debug_assert!(next <= alpha, "EM iterate increased: {alpha} -> {next}");
        trace.push(next);
        let delta = (next - alpha).abs();
        alpha = next;
        if delta < tol {
            let r_max = r.iter().copied().fold(0.0, f64::max);
            let r_mean = r.iter().sum::<f64>() / r.len() as f64;
            if alpha > 0.0 && alpha * r_max < 1.0 && r_mean < 1.0 {
                alpha = 0.0;
                trace.push(alpha);
            }
            return Ok(EmOutcome {
                alpha,
                posteriors: posteriors_at(curve, alpha)?,
                trace,
            });
        }
    }
    Err(EstimatorError::EmIterationCap { trace })
}

fn grid_steps(eps: f64) -> Result<usize, EstimatorError> {
    let steps = (1.0 / eps).round();
    if eps.is_nan() || eps <= 0.0 || steps < 2.0 || ((steps * eps) - 1.0).abs() > 1e-9 {
        return Err(EstimatorError::InvalidEps(eps));
    }
    Ok(steps as usize)
}

pub fn compute_d_curve(curve: &RatioCurve, eps: f64) -> Result<DCurve, EstimatorError> {
    let steps = grid_steps(eps)?;
    let r = curve.r();
    let alphas: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let d: Vec<f64> = alphas
        .par_iter()
        .map(|&a| a - mean_posterior(r, a))
        .collect();
    let second_lags = d.windows(3).map(|w| (w[0] - w[1]) - (w[1] - w[2])).collect();
    Ok(DCurve {
        alphas,
        d,
        second_lags,
    })
}

/// Interior grid point with the largest second lag among those with
/// `D < max_d`; the smallest such alpha wins ties.
pub fn max_slope_from_curve(d_curve: &DCurve, max_d: f64) -> Result<f64, EstimatorError> {
    let candidates: Vec<usize> = (0..d_curve.second_lags.len())
        .filter(|&j| d_curve.d[j + 1] < max_d)
        .collect();
    let best = candidates
        .iter()
        .map(|&j| d_curve.second_lags[j])
        .fold(f64::NEG_INFINITY, f64::max);
    candidates
        .into_iter()
        .find(|&j| d_curve.second_lags[j] >= best - LAG_TIE)
        .map(|j| d_curve.alphas[j + 1])
        .ok_or(EstimatorError::MaxDInfeasible { max_d })
}

/// Prior at the maximal second lag of `D` plus its posteriors (curve order).
pub fn max_slope(curve: &RatioCurve, max_d: f64, eps: f64) -> Result<(f64, Vec<f64>), EstimatorError> {
    let dc = compute_d_curve(curve, eps)?;
    let alpha = max_slope_from_curve(&dc, max_d)?;
    Ok((alpha, posteriors_at(curve, alpha)?))
}

fn check_quantile(q: f64) -> Result<(), EstimatorError> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(EstimatorError::InvalidQuantile(q))
    }
}

/// Quantile `q` of `1 / r`, clipped to `[0, 1]`.
pub fn simple_alpha(curve: &RatioCurve, q: f64) -> Result<f64, EstimatorError> {
    check_quantile(q)?;
    let inv: Vec<f64> = curve
        .r()
        .iter()
        .map(|&r| if r > 0.0 { 1.0 / r } else { f64::INFINITY })
        .collect();
    Ok(crate::stats::quantile(&inv, q).clamp(0.0, 1.0))
}

/// Elkan-Noto style estimate straight from classifier outputs: the prior
/// is quantile `q` of `(1 - y) / y` (capped at 1) and posteriors are
/// `min(alpha * y / (1 - y), 1)` in input order.
pub fn en_estimate(y_u: &[f64], q: f64) -> Result<(f64, Vec<f64>), EstimatorError> {
    check_quantile(q)?;
    if y_u.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let odds: Vec<f64> = y_u.iter().map(|&y| (1.0 - y) / y).collect();
    let alpha = crate::stats::quantile(&odds, q).clamp(0.0, 1.0);
    let post = y_u.iter().map(|&y| (alpha * y / (1.0 - y)).min(1.0)).collect();
    Ok((alpha, post))
}

/// Pipeline stage failures, tagged by stage.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("data stage: {0}")]
    Data(#[from] DataError),
    #[error("classifier stage: {0}")]
    Ntc(#[from] NtcError),
    #[error("density stage: {0}")]
    Density(#[from] DensityError),
    #[error("ratio stage: {0}")]
    Ratio(#[from] RatioError),
    #[error("estimator stage: {0}")]
    Estimator(#[from] EstimatorError),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Data(_) => "data",
            PipelineError::Ntc(_) => "ntc",
            PipelineError::Density(_) => "density",
            PipelineError::Ratio(_) => "ratio",
            PipelineError::Estimator(_) => "estimator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedpulConfig {
    pub folds: usize,
    pub ntc: NtcConfig,
    pub density: DensitySettings,
    pub em_tol: f64,
    pub max_d: f64,
    pub eps: f64,
    /// Monotonize and rolling-median the ratio curve.
    pub smooth: bool,
    /// Quantile used by the `simple_alpha` and `en` baselines.
    pub quantile: f64,
}

impl Default for DedpulConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            ntc: NtcConfig::default(),
            density: DensitySettings::default(),
            em_tol: 1e-5,
            max_d: 0.05,
            eps: 1e-3,
            smooth: true,
            quantile: 0.05,
        }
    }
}

/// Fits both densities on the logit scale and returns the (optionally
/// smoothed) ratio curve over `y_u`.
pub fn ratio_curve(preds: &NtcPredictions, cfg: &DedpulConfig) -> Result<RatioCurve, PipelineError> {
    let lp: Vec<f64> = preds.y_p.iter().map(|&y| logit(y)).collect();
    let lu: Vec<f64> = preds.y_u.iter().map(|&y| logit(y)).collect();
    let (f_p, f_u) = cfg.density.fit_pair(&lp, &lu)?;
    let curve = compute_ratio(&f_p, &f_u, &preds.y_u)?;
    if cfg.smooth {
        let curve = monotonize(&curve, default_threshold(&preds.y_u));
        Ok(rolling_median(&curve))
    } else {
        Ok(curve)
    }
}

/// EM when it stays above `em_tol`, else the maximal-slope prior.
pub fn estimate_from_curve(curve: &RatioCurve, cfg: &DedpulConfig) -> Result<EstimateResult, EstimatorError> {
    let em = em_alpha(curve, cfg.em_tol)?;
    let d_curve = compute_d_curve(curve, cfg.eps)?;
    let max_slope_alpha = max_slope_from_curve(&d_curve, cfg.max_d).ok();
    let (alpha_star, branch) = if em.alpha > cfg.em_tol {
        (em.alpha, Branch::Em)
    } else {
        let a = max_slope_alpha.ok_or(EstimatorError::MaxDInfeasible { max_d: cfg.max_d })?;
        (a, Branch::MaxSlope)
    };
    let posteriors = curve.to_input_order(&posteriors_at(curve, alpha_star)?);
    Ok(EstimateResult {
        alpha_star,
        branch,
        posteriors,
        d_curve,
        em_trace: em.trace,
        em_alpha: em.alpha,
        max_slope_alpha,
    })
}

/// Everything after the classifier: densities, ratio, smoothing, estimate.
pub fn dedpul_from_predictions(
    preds: &NtcPredictions,
    cfg: &DedpulConfig,
) -> Result<EstimateResult, PipelineError> {
    let curve = ratio_curve(preds, cfg)?;
    Ok(estimate_from_curve(&curve, cfg)?)
}

/// Out-of-fold classifier predictions followed by [`dedpul_from_predictions`].
pub fn dedpul(ds: &PuDataset, cfg: &DedpulConfig) -> Result<EstimateResult, PipelineError> {
    let preds = cv_predict(ds, cfg.folds, &cfg.ntc)?;
    dedpul_from_predictions(&preds, cfg)
}

/// Estimators runnable on one set of classifier predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dedpul,
    En,
    SimpleAlpha,
    /// DEDPUL without monotonize and rolling median.
    NoSmooth,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dedpul => "dedpul",
            Method::En => "en",
            Method::SimpleAlpha => "simple_alpha",
            Method::NoSmooth => "no_smooth",
        }
    }
}

/// Output of any [`Method`]; DEDPUL-only diagnostics are `None` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub alpha: f64,
    pub posteriors: Vec<f64>,
    pub branch: Option<Branch>,
    pub d_curve: Option<DCurve>,
    pub em_trace: Option<Vec<f64>>,
}

impl From<EstimateResult> for MethodEstimate {
    fn from(r: EstimateResult) -> Self {
        Self {
            alpha: r.alpha_star,
            posteriors: r.posteriors,
            branch: Some(r.branch),
            d_curve: Some(r.d_curve),
            em_trace: Some(r.em_trace),
        }
    }
}

pub fn run_method(
    method: Method,
    preds: &NtcPredictions,
    cfg: &DedpulConfig,
) -> Result<MethodEstimate, PipelineError> {
    match method {
        Method::Dedpul => Ok(dedpul_from_predictions(preds, cfg)?.into()),
        Method::NoSmooth => {
            let cfg = DedpulConfig {
                smooth: false,
                ..cfg.clone()
            };
            Ok(dedpul_from_predictions(preds, &cfg)?.into())
        }
        Method::SimpleAlpha => {
            let curve = ratio_curve(preds, cfg)?;
            let alpha = simple_alpha(&curve, cfg.quantile)?;
            Ok(MethodEstimate {
                alpha,
                posteriors: curve.to_input_order(&posteriors_at(&curve, alpha)?),
                branch: None,
                d_curve: None,
                em_trace: None,
            })
        }
        Method::En => {
            let (alpha, posteriors) = en_estimate(&preds.y_u, cfg.quantile)?;
            Ok(MethodEstimate {
                alpha,
                posteriors,
                branch: None,
                d_curve: None,
                em_trace: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(r: &[f64]) -> RatioCurve {
        RatioCurve::from_ratios(r.to_vec()).unwrap()
    }

    #[test]
    fn posteriors_examples() {
        assert_eq!(posteriors_at(&curve(&[3.0, 0.5]), 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(posteriors_at(&curve(&[1.0; 3]), 0.7).unwrap(), vec![0.7; 3]);
        assert_eq!(
            posteriors_at(&curve(&[2.0, 2.0, 0.0, 0.0]), 0.5).unwrap(),
            vec![1.0, 1.0, 0.0, 0.0]
        );
        assert!(posteriors_at(&curve(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn em_fixtures() {
        let one = em_alpha(&curve(&[1.0; 8]), 1e-5).unwrap();
        assert_eq!(one.alpha, 1.0);
        assert_eq!(one.trace, vec![1.0, 1.0]);

        assert_eq!(em_alpha(&curve(&[0.0; 8]), 1e-5).unwrap().alpha, 0.0);
        assert_eq!(em_alpha(&curve(&[2.0, 2.0, 0.0, 0.0]), 1e-5).unwrap().alpha, 0.5);

        // Fixed point of a = (min(1.5a, 1) + 0.5a) / 2 is a = 2/3.
        let a = em_alpha(&curve(&[1.5, 0.5]), 1e-5).unwrap().alpha;
        assert!((a - 2.0 / 3.0).abs() < 1e-4, "{a}");
    }

    #[test]
    fn em_slow_collapse_reports_zero() {
        // mean(r) = 0.9999 and max r = 1.0001: below 1/max r the iterate only
        // shrinks by 1e-4 per step and would stop near 0.1 without the limit.
        let r: Vec<f64> = (0..5000).map(|i| if i % 2 == 0 { 1.0001 } else { 0.9997 }).collect();
        let em = em_alpha(&curve(&r), 1e-5).unwrap();
        assert_eq!(em.alpha, 0.0);
        assert_eq!(*em.trace.last().unwrap(), 0.0);
        assert!(em.trace[em.trace.len() - 2] > 0.05);
    }

    #[test]
    fn em_rejects_bad_tolerance() {
        assert!(em_alpha(&curve(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn em_iteration_cap() {
        // Contraction factor 1 - 1e-7 per step: needs far more than the cap.
        let mut r = vec![1.0 - 2e-7; 1];
        r.push(1.0);
        let err = em_alpha(&curve(&r), 1e-300).unwrap_err();
        let EstimatorError::EmIterationCap { trace } = err else {
            panic!("expected cap")
        };
        assert_eq!(trace.len(), EM_MAX_ITER + 1);
    }

    #[test]
    fn d_curve_examples() {
        let dc = compute_d_curve(&curve(&[1.0; 5]), 1e-3).unwrap();
        assert_eq!(dc.alphas.len(), 1001);
        assert_eq!(dc.second_lags.len(), 999);
        assert!(dc.d.iter().all(|d| d.abs() < 1e-15));

        let dc = compute_d_curve(&curve(&[2.0, 2.0, 0.0, 0.0]), 1e-3).unwrap();
        assert_eq!(dc.d[0], 0.0);
        for (a, d) in dc.alphas.iter().zip(&dc.d) {
            let expect = if *a <= 0.5 { 0.0 } else { a - 0.5 };
            assert!((d - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn d_curve_rejects_uneven_grid() {
        assert_eq!(
            compute_d_curve(&curve(&[1.0]), 0.3).unwrap_err(),
            EstimatorError::InvalidEps(0.3)
        );
    }

    #[test]
    fn max_slope_fixtures() {
        let (a, post) = max_slope(&curve(&[2.0, 2.0, 0.0, 0.0]), 0.05, 1e-3).unwrap();
        assert!((a - 0.5).abs() <= 1e-3, "{a}");
        assert_eq!(post, vec![1.0, 1.0, 0.0, 0.0]);

        let (a, _) = max_slope(&curve(&[1.0; 7]), 0.05, 1e-3).unwrap();
        assert!((a - 1e-3).abs() < 1e-15, "{a}");
    }

    #[test]
    fn max_slope_infeasible() {
        assert_eq!(
            max_slope(&curve(&[0.0; 3]), 1e-9, 1e-3).unwrap_err(),
            EstimatorError::MaxDInfeasible { max_d: 1e-9 }
        );
    }

    #[test]
    fn simple_alpha_examples() {
        assert_eq!(simple_alpha(&curve(&[1.0; 4]), 0.05).unwrap(), 1.0);
        assert_eq!(simple_alpha(&curve(&[2.0, 2.0, 0.0, 0.0]), 0.05).unwrap(), 0.5);
        let c = curve(&[4.0, 1.25, 8.0, 2.0]);
        assert_eq!(simple_alpha(&c, 0.0).unwrap(), 0.125);
        assert_eq!(simple_alpha(&curve(&[0.5, 0.8]), 0.0).unwrap(), 1.0);
    }

    #[test]
    fn en_examples() {
        let (a, post) = en_estimate(&[0.5; 6], 0.05).unwrap();
        assert_eq!(a, 1.0);
        assert!(post.iter().all(|&p| p == 1.0));

        let (a, _) = en_estimate(&[0.8, 0.5], 0.0).unwrap();
        assert!((a - 0.25).abs() < 1e-15);
    }

    #[test]
    fn switching_rule() {
        let cfg = DedpulConfig::default();
        let em = estimate_from_curve(&curve(&[2.0, 2.0, 0.0, 0.0]), &cfg).unwrap();
        assert_eq!((em.branch, em.alpha_star), (Branch::Em, 0.5));

        let collapsed = estimate_from_curve(&curve(&[0.0; 10]), &cfg).unwrap();
        assert_eq!(collapsed.branch, Branch::MaxSlope);
        assert!(collapsed.em_alpha <= cfg.em_tol);
    }

    #[test]
    fn posteriors_returned_in_input_order() {
        let c = RatioCurve::new(vec![0.9, 0.1], vec![2.0, 0.0]).unwrap();
        let res = estimate_from_curve(&c, &DedpulConfig::default()).unwrap();
        assert_eq!(res.posteriors, vec![1.0, 0.0]);
    }

    #[test]
    fn method_names_serialise() {
        for m in [Method::Dedpul, Method::En, Method::SimpleAlpha, Method::NoSmooth] {
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
    }

    fn arb_curve() -> impl Strategy<Value = RatioCurve> {
        proptest::collection::vec(0.0f64..20.0, 1..200)
            .prop_map(|r| RatioCurve::from_ratios(r).unwrap())
    }

    proptest! {
        #[test]
        fn em_trace_non_increasing(c in arb_curve()) {
            let em = em_alpha(&c, 1e-5).unwrap();
            prop_assert_eq!(em.trace[0], 1.0);
            for w in em.trace.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!((0.0..=1.0).contains(&em.alpha));
        }

        #[test]
        fn switching_rule_holds(c in arb_curve()) {
            let cfg = DedpulConfig::default();
            let res = estimate_from_curve(&c, &cfg).unwrap();
            if res.em_alpha > cfg.em_tol {
                prop_assert_eq!(res.branch, Branch::Em);
                prop_assert_eq!(res.alpha_star, res.em_alpha);
            } else {
                prop_assert_eq!(res.branch, Branch::MaxSlope);
            }
            let expect = c.to_input_order(&posteriors_at(&c, res.alpha_star).unwrap());
            prop_assert_eq!(res.posteriors, expect);
        }

        #[test]
        fn posteriors_homogeneous_below_clip(c in arb_curve(), a in 0.0f64..=1.0, s in 0.0f64..=1.0) {
            let b = a * s;
            let pa = posteriors_at(&c, a).unwrap();
            let pb = posteriors_at(&c, b).unwrap();
            for ((x, y), r) in pa.iter().zip(&pb).zip(c.r()) {
                if a * r <= 1.0 {
                    prop_assert!((y - x * s).abs() <= 1e-12 * (1.0 + x));
                }
            }
        }

        #[test]
        fn en_posteriors_bounded(y in proptest::collection::vec(1e-6f64..(1.0 - 1e-6), 1..100)) {
            let (a, post) = en_estimate(&y, 0.05).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(post.iter().all(|p| (0.0..=1.0).contains(p)));
        }

        #[test]
        fn simple_alpha_zero_quantile_is_clipped_min(c in arb_curve()) {
            let min_inv = c.r().iter().map(|&r| if r > 0.0 { 1.0 / r } else { f64::INFINITY })
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(simple_alpha(&c, 0.0).unwrap(), min_inv.clamp(0.0, 1.0));
        }
    }
}
