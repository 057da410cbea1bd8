//! One-dimensional density estimates of classifier outputs on the logit scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every evaluated density is at least this large.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Kernels further than this many bandwidths away are skipped.
const KDE_CUTOFF: f64 = 10.0;
const GMM_MAX_ITER: usize = 500;
const GMM_VAR_FLOOR: f64 = 1e-6;
const GMM_TOL: f64 = 1e-10;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("cannot fit a density to an empty sample")]
    Empty,
    #[error("sample contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("need at least one bin")]
    InvalidBins,
    #[error("need {needed} values, got {found}")]
    TooFewValues { needed: usize, found: usize },
    #[error("need at least one mixture component")]
    InvalidComponents,
    #[error("bandwidth grid is empty")]
    EmptyGrid,
    #[error("cross-validation needs 2 <= k <= n, got k = {k} for n = {n}")]
    InvalidFolds { k: usize, n: usize },
}

/// `ln(y / (1 - y))`.
pub fn logit(y: f64) -> f64 {
    y.ln() - (-y).ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityKind {
    #[default]
    Kde,
    Hist,
    Gmm,
}

/// A fitted density over the logit line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DensityModel {
    Kde {
        /// Sorted ascending.
        points: Vec<f64>,
        bandwidth: f64,
    },
    Hist {
        lo: f64,
        width: f64,
        densities: Vec<f64>,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        /// False when EM hit the iteration cap.
        converged: bool,
    },
}

impl DensityModel {
    pub fn kind(&self) -> DensityKind {
        match self {
            DensityModel::Kde { .. } => DensityKind::Kde,
            DensityModel::Hist { .. } => DensityKind::Hist,
            DensityModel::Gmm { .. } => DensityKind::Gmm,
        }
    }

    /// Density at `x`, floored at [`DENSITY_FLOOR`].
    pub fn pdf(&self, x: f64) -> f64 {
        self.raw_pdf(x).max(DENSITY_FLOOR)
    }

    fn raw_pdf(&self, x: f64) -> f64 {
        match self {
            DensityModel::Kde { points, bandwidth } => kde_pdf(points, *bandwidth, x),
            DensityModel::Hist {
                lo,
                width,
                densities,
            } => {
                let pos = (x - lo) / width;
                if !(0.0..=densities.len() as f64).contains(&pos) {
                    return 0.0;
                }
                densities[(pos as usize).min(densities.len() - 1)]
            }
            DensityModel::Gmm {
                weights,
                means,
                variances,
                ..
            } => weights
                .iter()
                .zip(means)
                .zip(variances)
                .map(|((w, m), v)| w * normal_pdf(x, *m, *v))
                .sum(),
        }
    }

    /// Pointwise densities, evaluated in parallel.
    pub fn eval(&self, points: &[f64]) -> Vec<f64> {
        points.par_iter().map(|&x| self.pdf(x)).collect()
    }
}

pub fn eval_density(model: &DensityModel, points: &[f64]) -> Vec<f64> {
    model.eval(points)
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    INV_SQRT_2PI / var.sqrt() * (-0.5 * z * z / var).exp()
}

fn kde_pdf(sorted: &[f64], h: f64, x: f64) -> f64 {
    let lo = sorted.partition_point(|&p| p < x - KDE_CUTOFF * h);
    let hi = sorted.partition_point(|&p| p <= x + KDE_CUTOFF * h);
    let s: f64 = sorted[lo..hi]
        .iter()
        .map(|&p| {
            let z = (x - p) / h;
            (-0.5 * z * z).exp()
        })
        .sum();
    s * INV_SQRT_2PI / (h * sorted.len() as f64)
}

/// Bins per bandwidth for the binned approximation in [`held_out_pdf`].
const BINS_PER_BANDWIDTH: f64 = 32.0;
/// Above this many kernel pairs, held-out densities are binned.
const EXACT_PAIR_LIMIT: usize = 4_000_000;

/// KDE of `train` at `points`. Large problems use linear binning of the
/// training sample onto a grid of step `h / 32`, then interpolate.
fn held_out_pdf(train: &[f64], h: f64, points: &[f64]) -> Vec<f64> {
    let delta = h / BINS_PER_BANDWIDTH;
    let lo = train[0] - KDE_CUTOFF * h;
    let hi = train[train.len() - 1] + KDE_CUTOFF * h;
    let cells = ((hi - lo) / delta).ceil() as usize + 2;
    if train.len() * points.len() <= EXACT_PAIR_LIMIT || cells > 50_000_000 {
        return points.iter().map(|&x| kde_pdf(train, h, x)).collect();
    }
    let mut w = vec![0.0; cells];
    for &x in train {
        let t = (x - lo) / delta;
        let i = t as usize;
        let f = t - i as f64;
        w[i] += 1.0 - f;
        w[i + 1] += f;
    }
    let reach = (KDE_CUTOFF * BINS_PER_BANDWIDTH) as isize;
    let kernel: Vec<f64> = (-reach..=reach)
        .map(|m| {
            let z = m as f64 / BINS_PER_BANDWIDTH;
            (-0.5 * z * z).exp() * INV_SQRT_2PI / (h * train.len() as f64)
        })
        .collect();
    let smoothed_at = |j: isize| -> f64 {
        let from = (j - reach).max(0);
        let to = (j + reach).min(cells as isize - 1);
        (from..=to)
            .map(|i| w[i as usize] * kernel[(i - j + reach) as usize])
            .sum()
    };
    points
        .iter()
        .map(|&x| {
            let t = (x - lo) / delta;
            if t < 0.0 || t >= (cells - 1) as f64 {
                return 0.0;
            }
            let j = t as isize;
            let f = t - j as f64;
            (1.0 - f) * smoothed_at(j) + f * smoothed_at(j + 1)
        })
        .collect()
}

fn check_values(values: &[f64]) -> Result<(), DensityError> {
    if values.is_empty() {
        return Err(DensityError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DensityError::NonFinite(i));
    }
    Ok(())
}

/// Gaussian KDE, one equally weighted kernel per value.
pub fn fit_kde(values: &[f64], bandwidth: f64) -> Result<DensityModel, DensityError> {
    check_values(values)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(DensityError::InvalidBandwidth(bandwidth));
    }
    let mut points = values.to_vec();
    points.sort_by(f64::total_cmp);
    Ok(DensityModel::Kde { points, bandwidth })
}

/// Equal-width histogram over `[min, max]` widened by 1% of the range on
/// each side. A constant sample is given a unit range.
pub fn fit_hist(values: &[f64], bins: usize) -> Result<DensityModel, DensityError> {
    check_values(values)?;
    if bins == 0 {
        return Err(DensityError::InvalidBins);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if max > min { max - min } else { 1.0 };
    let lo = min - 0.01 * range;
    let width = (max - min + 0.02 * range) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let norm = values.len() as f64 * width;
    Ok(DensityModel::Hist {
        lo,
        width,
        densities: counts.into_iter().map(|c| c as f64 / norm).collect(),
    })
}

/// One-dimensional Gaussian mixture fitted by EM from a k-means++ style
/// seeding. On hitting the iteration cap the best parameters seen are
/// returned with `converged = false`.
pub fn fit_gmm(values: &[f64], components: usize, seed: u64) -> Result<DensityModel, DensityError> {
    check_values(values)?;
    if components == 0 {
        return Err(DensityError::InvalidComponents);
    }
    if values.len() < components {
        return Err(DensityError::TooFewValues {
            needed: components,
            found: values.len(),
        });
    }
    let n = values.len();
    let k = components;
    let total_var = crate::stats::population_variance(values).max(GMM_VAR_FLOOR);

    let mut means = kmeanspp_seeds(values, k, seed);
    let mut variances = vec![total_var; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut resp = vec![0.0; n * k];
    let mut best = (f64::NEG_INFINITY, weights.clone(), means.clone(), variances.clone());
    let mut prev_ll = f64::NEG_INFINITY;
    let mut converged = false;

    for _ in 0..GMM_MAX_ITER {
        // E-step, in log space for stability.
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            let mut top = f64::NEG_INFINITY;
            for j in 0..k {
                row[j] = if weights[j] > 0.0 {
                    let z = x - means[j];
                    weights[j].ln() - 0.5 * (2.0 * std::f64::consts::PI * variances[j]).ln()
                        - 0.5 * z * z / variances[j]
                } else {
                    f64::NEG_INFINITY
                };
                top = top.max(row[j]);
            }
            let s: f64 = row.iter().map(|l| (l - top).exp()).sum();
            let lse = top + s.ln();
            ll += lse;
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
        }
        let ll = ll / n as f64;
        if ll > best.0 {
            best = (ll, weights.clone(), means.clone(), variances.clone());
        }
        if (ll - prev_ll).abs() < GMM_TOL {
            converged = true;
            break;
        }
        prev_ll = ll;

        // M-step.
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk <= 0.0 {
                weights[j] = 0.0;
                continue;
            }
            let m = (0..n).map(|i| resp[i * k + j] * values[i]).sum::<f64>() / nk;
            let v = (0..n)
                .map(|i| resp[i * k + j] * (values[i] - m) * (values[i] - m))
                .sum::<f64>()
                / nk;
            weights[j] = nk / n as f64;
            means[j] = m;
            variances[j] = v.max(GMM_VAR_FLOOR);
        }
    }
    if !converged {
        log::warn!("GMM EM did not converge in {GMM_MAX_ITER} iterations; using best fit");
        let (_, w, m, v) = best;
        weights = w;
        means = m;
        variances = v;
    }
    Ok(DensityModel::Gmm {
        weights,
        means,
        variances,
        converged,
    })
}

fn kmeanspp_seeds(values: &[f64], k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = values.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            values[pick]
        } else {
            values[rng.random_range(0..values.len())]
        };
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
        centers.push(next);
    }
    centers
}

/// 15 log-spaced bandwidths from 0.01 to 1.
pub fn default_bandwidth_grid() -> Vec<f64> {
    (0..15)
        .map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / 14.0))
        .collect()
}

/// Bandwidth maximising the mean held-out log-density over `k` folds
/// (row `i` is held out in fold `i % k`). Ties go to the smaller bandwidth.
pub fn select_bandwidth_cv(values: &[f64], grid: &[f64], k: usize) -> Result<f64, DensityError> {
    check_values(values)?;
    if grid.is_empty() {
        return Err(DensityError::EmptyGrid);
    }
    if let Some(&h) = grid.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(DensityError::InvalidBandwidth(h));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    if k < 2 || k > values.len() {
        return Err(DensityError::InvalidFolds { k, n: values.len() });
    }
    let folds: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
        .map(|f| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (i, &v) in values.iter().enumerate() {
                if i % k == f { test.push(v) } else { train.push(v) }
            }
            train.sort_by(f64::total_cmp);
            (train, test)
        })
        .collect();

    let mut sorted_grid = grid.to_vec();
    sorted_grid.sort_by(f64::total_cmp);
    let scores: Vec<f64> = sorted_grid
        .par_iter()
        .map(|&h| {
            folds
                .iter()
                .map(|(train, test)| {
                    held_out_pdf(train, h, test)
                        .into_iter()
                        .map(|p| p.max(DENSITY_FLOOR).ln())
                        .sum::<f64>()
                        / test.len() as f64
                })
                .sum::<f64>()
                / k as f64
        })
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(sorted_grid[best])
}

/// Population standard deviation, or 1 for a constant sample.
fn spread(values: &[f64]) -> f64 {
    let sd = crate::stats::population_variance(values).sqrt();
    if sd > 0.0 {
        sd
    } else {
        1.0
    }
}

/// How the positive and unlabeled prediction densities are estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySettings {
    pub kind: DensityKind,
    pub bandwidth_p: f64,
    pub bandwidth_u: f64,
    /// Read the two bandwidths as multiples of each sample's standard
    /// deviation rather than as absolute widths.
    pub relative_bandwidth: bool,
    /// Choose KDE bandwidths by cross-validated likelihood instead.
    pub select_bandwidth: bool,
    pub bandwidth_grid: Vec<f64>,
    pub cv_folds: usize,
    pub bins: usize,
    pub components_p: usize,
    pub components_u: usize,
    pub seed: u64,
}

impl Default for DensitySettings {
    fn default() -> Self {
        Self {
            kind: DensityKind::Kde,
            bandwidth_p: 0.1,
            bandwidth_u: 0.05,
            relative_bandwidth: true,
            select_bandwidth: false,
            bandwidth_grid: default_bandwidth_grid(),
            cv_folds: 5,
            bins: 20,
            components_p: 10,
            components_u: 20,
            seed: 0,
        }
    }
}

impl DensitySettings {
    pub fn with_kind(kind: DensityKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Fits `(f_p, f_u)` to logit-scale samples.
    pub fn fit_pair(
        &self,
        logit_p: &[f64],
        logit_u: &[f64],
    ) -> Result<(DensityModel, DensityModel), DensityError> {
        match self.kind {
            DensityKind::Kde => {
                let (hp, hu) = if self.select_bandwidth {
                    (
                        select_bandwidth_cv(logit_p, &self.bandwidth_grid, self.cv_folds)?,
                        select_bandwidth_cv(logit_u, &self.bandwidth_grid, self.cv_folds)?,
                    )
                } else if self.relative_bandwidth {
                    (
                        self.bandwidth_p * spread(logit_p),
                        self.bandwidth_u * spread(logit_u),
                    )
                } else {
                    (self.bandwidth_p, self.bandwidth_u)
                };
                Ok((fit_kde(logit_p, hp)?, fit_kde(logit_u, hu)?))
            }
            DensityKind::Hist => Ok((fit_hist(logit_p, self.bins)?, fit_hist(logit_u, self.bins)?)),
            DensityKind::Gmm => Ok((
                fit_gmm(logit_p, self.components_p, self.seed)?,
                fit_gmm(logit_u, self.components_u, self.seed.wrapping_add(1))?,
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn normal_sample(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    /// Midpoint rule on a fine grid; copes with histogram jumps.
    fn mass(model: &DensityModel, lo: f64, hi: f64) -> f64 {
        let n = 1_000_000;
        let h = (hi - lo) / n as f64;
        (0..n).map(|i| model.pdf(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit(0.5), 0.0);
        for y in [0.01, 0.2, 0.37, 0.9] {
            assert!((logit(y) + logit(1.0 - y)).abs() < 1e-12);
        }
        assert!((logit(0.731_058_578_63) - 1.0).abs() < 1e-9);
    }

    proptest! {
        // 1 - sigmoid(x) carries an absolute rounding error of about 1e-16, so
        // the recoverable precision decays like eps * e^x for large positive x.
        #[test]
        fn logit_inverts_sigmoid(x in -30.0f64..30.0) {
            let tol = (4.0 * f64::EPSILON * x.exp()).max(1e-12);
            prop_assert!((logit(sigmoid(x)) - x).abs() <= tol);
        }

        #[test]
        fn logit_strictly_increasing(a in 1e-6f64..0.999_999, b in 1e-6f64..0.999_999) {
            prop_assume!(a < b);
            prop_assert!(logit(a) < logit(b));
        }

        #[test]
        fn floor_holds_everywhere(x in -1e3f64..1e3) {
            let kde = fit_kde(&[0.0, 1.0], 0.1).unwrap();
            let hist = fit_hist(&[0.0, 1.0, 2.0], 4).unwrap();
            let gmm = fit_gmm(&[0.0, 1.0, 2.0], 2, 0).unwrap();
            for m in [&kde, &hist, &gmm] {
                let v = m.pdf(x);
                prop_assert!(v.is_finite() && v >= DENSITY_FLOOR);
            }
        }
    }

    #[test]
    fn kde_single_point_is_normal() {
        let m = fit_kde(&[0.0], 1.0).unwrap();
        assert!((m.pdf(0.0) - 0.3989).abs() < 1e-4);
        assert!((m.pdf(1.3) - INV_SQRT_2PI * (-0.5f64 * 1.69).exp()).abs() < 1e-12);
    }

    #[test]
    fn kde_symmetric_pair() {
        let m = fit_kde(&[-1.0, 1.0], 1.0).unwrap();
        for x in [0.1, 0.7, 2.5] {
            assert!((m.pdf(x) - m.pdf(-x)).abs() < 1e-15);
        }
    }

    #[test]
    fn kde_degenerate_sample_is_valid() {
        let m = fit_kde(&[2.0; 50], 0.3).unwrap();
        assert!((m.pdf(2.0) - INV_SQRT_2PI / 0.3).abs() < 1e-12);
    }

    #[test]
    fn kde_rejects_bad_input() {
        assert_eq!(fit_kde(&[], 1.0), Err(DensityError::Empty));
        assert_eq!(fit_kde(&[1.0], 0.0), Err(DensityError::InvalidBandwidth(0.0)));
        assert_eq!(fit_kde(&[1.0, f64::NAN], 1.0), Err(DensityError::NonFinite(1)));
    }

    #[test]
    fn kde_peaks_at_training_point() {
        let m = fit_kde(&[-4.0, 0.0, 3.0], 0.01).unwrap();
        let peak = m.pdf(0.0);
        for i in 1..=30 {
            let dx = 0.001 * i as f64;
            assert!(m.pdf(dx) < peak && m.pdf(-dx) < peak);
        }
    }

    #[test]
    fn kde_truncation_matches_full_sum() {
        let pts = normal_sample(500, 0.0, 1.0, 3);
        let h = 0.2;
        let m = fit_kde(&pts, h).unwrap();
        for x in [-2.0, 0.0, 0.4, 1.7] {
            let full: f64 = pts
                .iter()
                .map(|p| normal_pdf(x, *p, h * h))
                .sum::<f64>()
                / pts.len() as f64;
            assert!((m.pdf(x) - full).abs() < 1e-14);
        }
    }

    #[test]
    fn kde_cv_recovers_normal() {
        let pts = normal_sample(100_000, 0.0, 1.0, 11);
        let h = select_bandwidth_cv(&pts, &default_bandwidth_grid(), 5).unwrap();
        let m = fit_kde(&pts, h).unwrap();
        let grid: Vec<f64> = (0..=600).map(|i| -3.0 + i as f64 * 0.01).collect();
        let err = grid
            .iter()
            .map(|&x| (m.pdf(x) - normal_pdf(x, 0.0, 1.0)).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(err < 0.01, "mae {err} at bandwidth {h}");
    }

    #[test]
    fn kde_error_shrinks_with_sample_size() {
        let grid: Vec<f64> = (0..=120).map(|i| -3.0 + i as f64 * 0.05).collect();
        let mae = |n: usize, seed: u64| {
            let pts = normal_sample(n, 0.0, 1.0, seed);
            // Silverman's rule, so the bandwidth shrinks with n.
            let h = 1.06 * (n as f64).powf(-0.2);
            let m = fit_kde(&pts, h).unwrap();
            grid.iter()
                .map(|&x| (m.pdf(x) - normal_pdf(x, 0.0, 1.0)).abs())
                .sum::<f64>()
                / grid.len() as f64
        };
        let violations = (0..5)
            .filter(|&s| mae(4000, 100 + s) > mae(2000, 200 + s))
            .count();
        assert!(violations <= 1, "{violations} violations");
    }

    #[test]
    fn hist_equal_mass_centres_give_equal_densities() {
        // Padded range of [0, 1] is [-0.01, 1.01]; put equal mass at every
        // bin centre, counting the two range-defining endpoints.
        let (bins, copies) = (20, 5);
        let width = 1.02 / bins as f64;
        let mut vals = vec![0.0, 1.0];
        for j in 0..bins {
            let c = -0.01 + width * (j as f64 + 0.5);
            let n = if j == 0 || j == bins - 1 { copies - 1 } else { copies };
            vals.extend(std::iter::repeat_n(c, n));
        }
        let DensityModel::Hist { densities, .. } = fit_hist(&vals, bins).unwrap() else {
            unreachable!()
        };
        let first = densities[0];
        assert!(densities.iter().all(|d| (d - first).abs() < 1e-9));
    }

    #[test]
    fn hist_point_mass_fills_one_bin() {
        let DensityModel::Hist { densities, .. } = fit_hist(&[3.5; 40], 20).unwrap() else {
            unreachable!()
        };
        assert_eq!(densities.iter().filter(|d| **d > 0.0).count(), 1);
    }

    #[test]
    fn hist_integrates_to_one_exactly() {
        let vals = normal_sample(1000, 1.0, 2.0, 5);
        let DensityModel::Hist { width, densities, .. } = fit_hist(&vals, 20).unwrap() else {
            unreachable!()
        };
        assert!((densities.iter().sum::<f64>() * width - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hist_rejects_zero_bins() {
        assert_eq!(fit_hist(&[1.0], 0), Err(DensityError::InvalidBins));
    }

    #[test]
    fn gmm_single_component_is_moment_match() {
        let vals = normal_sample(2000, 1.5, 0.7, 9);
        let DensityModel::Gmm {
            weights,
            means,
            variances,
            ..
        } = fit_gmm(&vals, 1, 0).unwrap()
        else {
            unreachable!()
        };
        assert!((weights[0] - 1.0).abs() < 1e-12);
        assert!((means[0] - crate::stats::mean(&vals)).abs() < 1e-12);
        assert!((variances[0] - crate::stats::population_variance(&vals)).abs() < 1e-12);
    }

    #[test]
    fn gmm_separates_two_clusters() {
        let mut vals = normal_sample(500, -5.0, 0.5, 1);
        vals.extend(normal_sample(500, 5.0, 0.5, 2));
        // Cluster means from the labelled halves.
        let oracle = [
            crate::stats::mean(&vals[..500]),
            crate::stats::mean(&vals[500..]),
        ];
        let DensityModel::Gmm { mut means, .. } = fit_gmm(&vals, 2, 7).unwrap() else {
            unreachable!()
        };
        means.sort_by(f64::total_cmp);
        assert!((means[0] - oracle[0]).abs() < 0.1);
        assert!((means[1] - oracle[1]).abs() < 0.1);
    }

    #[test]
    fn gmm_deterministic_and_checked() {
        let vals = normal_sample(300, 0.0, 1.0, 4);
        assert_eq!(fit_gmm(&vals, 3, 5).unwrap(), fit_gmm(&vals, 3, 5).unwrap());
        assert_eq!(
            fit_gmm(&vals[..2], 3, 0),
            Err(DensityError::TooFewValues { needed: 3, found: 2 })
        );
    }

    #[test]
    fn all_kinds_integrate_to_one() {
        let mut vals = normal_sample(3000, -1.0, 0.8, 21);
        vals.extend(normal_sample(2000, 2.0, 1.5, 22));
        let models = [
            fit_kde(&vals, 0.1).unwrap(),
            fit_kde(&vals, 0.05).unwrap(),
            fit_hist(&vals, 20).unwrap(),
            fit_gmm(&vals, 20, 3).unwrap(),
        ];
        for m in &models {
            let total = mass(m, -30.0, 30.0);
            assert!((total - 1.0).abs() < 1e-3, "{:?} integrates to {total}", m.kind());
        }
    }

    #[test]
    fn bandwidth_singleton_grid() {
        assert_eq!(select_bandwidth_cv(&[1.0, 2.0], &[0.3], 2).unwrap(), 0.3);
    }

    #[test]
    fn bandwidth_cv_prefers_matched_over_oversmoothed() {
        let mut vals = normal_sample(1000, -3.0, 0.3, 31);
        vals.extend(normal_sample(1000, 3.0, 0.3, 32));
        // Oracle: held-out log-likelihood of each candidate by direct sums.
        let held_out = |h: f64| {
            (0..5)
                .map(|f| {
                    let train: Vec<f64> =
                        vals.iter().enumerate().filter(|(i, _)| i % 5 != f).map(|(_, v)| *v).collect();
                    let test: Vec<f64> =
                        vals.iter().enumerate().filter(|(i, _)| i % 5 == f).map(|(_, v)| *v).collect();
                    test.iter()
                        .map(|&x| {
                            (train.iter().map(|p| normal_pdf(x, *p, h * h)).sum::<f64>()
                                / train.len() as f64)
                                .ln()
                        })
                        .sum::<f64>()
                        / test.len() as f64
                })
                .sum::<f64>()
        };
        assert!(held_out(0.1) > held_out(3.0));
        assert_eq!(select_bandwidth_cv(&vals, &[3.0, 0.1], 5).unwrap(), 0.1);
    }

    #[test]
    fn binned_held_out_density_matches_exact() {
        let mut train = normal_sample(20_000, 0.0, 1.0, 41);
        train.sort_by(f64::total_cmp);
        let test = normal_sample(1_000, 0.0, 1.2, 42);
        for h in [0.01, 0.1, 1.0] {
            let binned = held_out_pdf(&train, h, &test);
            for (x, b) in test.iter().zip(&binned) {
                let exact = kde_pdf(&train, h, *x);
                assert!((b - exact).abs() <= 2e-3 * exact + 1e-9, "h {h} x {x}: {b} vs {exact}");
            }
        }
    }

    #[test]
    fn bandwidth_ties_go_small() {
        // Held-out points lie far outside every kernel, so all scores hit the floor.
        assert_eq!(select_bandwidth_cv(&[0.0, 100.0], &[0.2, 0.1], 2).unwrap(), 0.1);
    }

    #[test]
    fn default_settings() {
        let s = DensitySettings::default();
        assert_eq!((s.bandwidth_p, s.bandwidth_u), (0.1, 0.05));
        assert!(s.relative_bandwidth);
        assert_eq!(s.bins, 20);
        assert_eq!((s.components_u, s.components_p), (20, 10));
        let g = default_bandwidth_grid();
        assert_eq!(g.len(), 15);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[14] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relative_bandwidths_scale_with_spread() {
        let p = normal_sample(500, 0.0, 2.0, 5);
        let u = [1.0, 3.0, 5.0, 7.0];
        let sd_p = crate::stats::population_variance(&p).sqrt();
        let sd_u = 5.0f64.sqrt();
        let (fp, fu) = DensitySettings::default().fit_pair(&p, &u).unwrap();
        assert_eq!(fp, fit_kde(&p, 0.1 * sd_p).unwrap());
        assert_eq!(fu, fit_kde(&u, 0.05 * sd_u).unwrap());

        let abs = DensitySettings {
            relative_bandwidth: false,
            ..DensitySettings::default()
        };
        assert_eq!(abs.fit_pair(&p, &u).unwrap().1, fit_kde(&u, 0.05).unwrap());
        // A constant sample keeps the configured width.
        let (_, fc) = DensitySettings::default().fit_pair(&p, &[2.0; 3]).unwrap();
        assert_eq!(fc, fit_kde(&[2.0; 3], 0.05).unwrap());
    }
}
