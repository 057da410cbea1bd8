//! One-dimensional Laplace mixtures with analytic ground truth.
//!
//! The unlabeled density is `f_u = α f_p + (1 - α) f_n`. The identifiable
//! proportion is `α* = inf_x f_u(x) / f_p(x)`, the corresponding posteriors
//! are `α* f_p(x) / f_u(x)`, and the prior/posterior gap is
//! `D(α) = α - E_{f_u}[min(α f_p / f_u, 1)]`.

use ndarray::Array2;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, PuDataset, PuLabel, Truth};
use crate::quad::{self, QuadError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid mixture: {0}")]
    InvalidSpec(String),
    #[error("grid [{lo}, {hi}] holds only {mass} of the {component} component")]
    GridCoverage {
        component: &'static str,
        lo: f64,
        hi: f64,
        mass: f64,
    },
    #[error("grid too narrow: density ratio still decreasing at x = {at}")]
    GridTooNarrow { at: f64 },
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("sample sizes must be positive (n_p = {n_p}, n_u = {n_u})")]
    InvalidSize { n_p: usize, n_u: usize },
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Laplace {
    pub loc: f64,
    pub scale: f64,
}

impl Laplace {
    pub const fn new(loc: f64, scale: f64) -> Self {
        Self { loc, scale }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        -(x - self.loc).abs() / self.scale - (2.0 * self.scale).ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (-(x - self.loc).abs() / self.scale).exp() / (2.0 * self.scale)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    /// Inverse CDF for `u` in the open unit interval.
    pub fn quantile(&self, u: f64) -> f64 {
        if u < 0.5 {
            self.loc + self.scale * (2.0 * u).ln()
        } else {
            self.loc - self.scale * (2.0 * (1.0 - u)).ln()
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.sample(Open01))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub pos: Laplace,
    pub neg: Laplace,
    pub alpha: f64,
}

impl MixtureSpec {
    pub fn new(pos: Laplace, neg: Laplace, alpha: f64) -> Result<Self, SynthError> {
        let spec = Self { pos, neg, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, c) in [("positive", self.pos), ("negative", self.neg)] {
            if !(c.scale > 0.0 && c.scale.is_finite() && c.loc.is_finite()) {
                return Err(SynthError::InvalidSpec(format!(
                    "{name} component L({}, {}) needs finite location and positive scale",
                    c.loc, c.scale
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SynthError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }

    pub fn pdf_pos(&self, x: f64) -> f64 {
        self.pos.pdf(x)
    }

    pub fn pdf_unlabeled(&self, x: f64) -> f64 {
        self.alpha * self.pos.pdf(x) + (1.0 - self.alpha) * self.neg.pdf(x)
    }

    /// `f_u(x) / f_p(x)`, evaluated in log space so far tails do not underflow.
    pub fn unlabeled_to_pos_ratio(&self, x: f64) -> f64 {
        self.alpha + (1.0 - self.alpha) * (self.neg.ln_pdf(x) - self.pos.ln_pdf(x)).exp()
    }

    /// `f_p(x) / f_u(x)`.
    pub fn pos_to_unlabeled_ratio(&self, x: f64) -> f64 {
        1.0 / self.unlabeled_to_pos_ratio(x)
    }

    /// The exact non-traditional classifier `f_p / (f_p + f_u)`.
    pub fn exact_ntc(&self, x: f64) -> f64 {
        1.0 / (1.0 + self.unlabeled_to_pos_ratio(x))
    }

    /// Limit of `f_u / f_p` as `x → -∞` (`side < 0`) or `x → +∞`.
    fn tail_ratio_limit(&self, side: f64) -> f64 {
        let (p, n) = (self.pos, self.neg);
        let neg_to_pos = if n.scale < p.scale {
            0.0
        } else if n.scale > p.scale {
            f64::INFINITY
        } else {
            // Equal scales: |x - μ_p| - |x - μ_n| tends to ∓(μ_p - μ_n).
            (-side.signum() * (p.loc - n.loc) / p.scale).exp()
        };
        self.alpha + (1.0 - self.alpha) * neg_to_pos
    }

    fn lowest_loc(&self) -> f64 {
        self.pos.loc.min(self.neg.loc)
    }

    fn highest_loc(&self) -> f64 {
        self.pos.loc.max(self.neg.loc)
    }

    fn widest_scale(&self) -> f64 {
        self.pos.scale.max(self.neg.scale)
    }
}

/// Draws `n_p` positives and `n_u` mixture rows with latent labels recorded.
///
/// Positives come first, then unlabeled rows. The single feature is named `x`.
pub fn sample_mixture(
    spec: &MixtureSpec,
    n_p: usize,
    n_u: usize,
    seed: u64,
) -> Result<PuDataset, SynthError> {
    spec.validate()?;
    if n_p == 0 || n_u == 0 {
        return Err(SynthError::InvalidSize { n_p, n_u });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_p + n_u;
    let mut x = Vec::with_capacity(n);
    let mut pu = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n_p {
        x.push(spec.pos.sample(&mut rng));
        pu.push(PuLabel::Positive);
        truth.push(Truth::Positive);
    }
    for _ in 0..n_u {
        let latent_pos = rng.random::<f64>() < spec.alpha;
        let comp = if latent_pos { spec.pos } else { spec.neg };
        x.push(comp.sample(&mut rng));
        pu.push(PuLabel::Unlabeled);
        truth.push(if latent_pos {
            Truth::Positive
        } else {
            Truth::Negative
        });
    }
    let features = Array2::from_shape_vec((n, 1), x).expect("n x 1 shape");
    Ok(PuDataset::from_matrix(
        &features,
        vec!["x".to_owned()],
        pu,
        Some(truth),
    )?)
}

/// Uniform evaluation grid for the infimum defining `α*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    /// 100001 points spanning 20 of the widest scale beyond either location.
    pub fn default_for(spec: &MixtureSpec) -> Self {
        let pad = 20.0 * spec.widest_scale();
        Self {
            lo: spec.lowest_loc() - pad,
            hi: spec.highest_loc() + pad,
            points: 100_001,
        }
    }

    fn at(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64
    }
}

/// `min_x f_u(x) / f_p(x)` over `grid`.
///
/// Fails if the grid misses more than 0.01% of either component, or if the
/// minimum sits on a grid boundary where the ratio is still decreasing.
pub fn oracle_alpha_star(spec: &MixtureSpec, grid: &Grid) -> Result<f64, SynthError> {
    spec.validate()?;
    for (component, c) in [("positive", spec.pos), ("negative", spec.neg)] {
        let mass = c.cdf(grid.hi) - c.cdf(grid.lo);
        if mass < 0.9999 {
            return Err(SynthError::GridCoverage {
                component,
                lo: grid.lo,
                hi: grid.hi,
                mass,
            });
        }
    }
    let ratios: Vec<f64> = (0..grid.points)
        .map(|i| spec.unlabeled_to_pos_ratio(grid.at(i)))
        .collect();
    let (argmin, &min) = ratios
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let last = grid.points - 1;
    // Compare against a point 1% of the grid inward; flat tails differ only
    // by rounding there.
    let step = (grid.points / 100).max(1);
    let still_decreasing = |edge: usize, inner: usize| ratios[edge] < ratios[inner] * (1.0 - 1e-12);
    if (argmin == 0 && still_decreasing(0, step))
        || (argmin == last && still_decreasing(last, last - step))
    {
        return Err(SynthError::GridTooNarrow { at: grid.at(argmin) });
    }
    Ok(min.clamp(spec.alpha, 1.0))
}

/// `α*` on the default grid, completing asymptotic infima analytically.
pub fn alpha_star(spec: &MixtureSpec) -> Result<f64, SynthError> {
    match oracle_alpha_star(spec, &Grid::default_for(spec)) {
        Err(SynthError::GridTooNarrow { at }) => {
            let side = if at < spec.pos.loc { -1.0 } else { 1.0 };
            Ok(spec.tail_ratio_limit(side).clamp(spec.alpha, 1.0))
        }
        other => other,
    }
}

/// Analytic ground truth for one mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleTruth {
    pub spec: MixtureSpec,
    pub alpha_star: f64,
}

impl OracleTruth {
    pub fn new(spec: MixtureSpec) -> Result<Self, SynthError> {
        Ok(Self {
            alpha_star: alpha_star(&spec)?,
            spec,
        })
    }

    /// `α* f_p(x) / f_u(x)`, clipped to `[0, 1]` against rounding only.
    pub fn posterior(&self, x: f64) -> f64 {
        (self.alpha_star * self.spec.pos_to_unlabeled_ratio(x)).clamp(0.0, 1.0)
    }
}

pub fn oracle_posteriors(spec: &MixtureSpec, xs: &[f64]) -> Result<Vec<f64>, SynthError> {
    let truth = OracleTruth::new(*spec)?;
    Ok(xs.iter().map(|&x| truth.posterior(x)).collect())
}

/// `(α, D(α))` pairs by adaptive quadrature, absolute tolerance 1e-6.
pub fn oracle_d_curve(
    spec: &MixtureSpec,
    alpha_grid: &[f64],
) -> Result<Vec<(f64, f64)>, SynthError> {
    spec.validate()?;
    let pad = 40.0 * spec.widest_scale();
    let breaks = [
        spec.lowest_loc() - pad,
        spec.lowest_loc(),
        spec.highest_loc(),
        spec.highest_loc() + pad,
    ];
    alpha_grid
        .iter()
        .map(|&a| {
            if !(0.0..=1.0).contains(&a) {
                return Err(SynthError::InvalidAlpha(a));
            }
            // E_{f_u}[min(α f_p / f_u, 1)] = ∫ min(α f_p, f_u) dx
            let expected = quad::integrate_pieces(
                |x| (a * spec.pdf_pos(x)).min(spec.pdf_unlabeled(x)),
                &breaks,
                1e-8,
            )?;
            Ok((a, a - expected))
        })
        .collect()
}
