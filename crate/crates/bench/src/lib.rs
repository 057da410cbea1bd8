//! Inputs shared by the benchmarks.

use dedpul_core::synth::sample_mixture;
use dedpul_core::{Laplace, MixtureSpec, NtcPredictions, RatioCurve};

pub fn mixture() -> MixtureSpec {
    MixtureSpec::new(Laplace::new(0.0, 1.0), Laplace::new(2.0, 1.0), 0.5).expect("valid mixture")
}

/// Predictions of the exact classifier on a sampled mixture, so timings do
/// not depend on network training.
pub fn exact_predictions(n_p: usize, n_u: usize, seed: u64) -> NtcPredictions {
    let spec = mixture();
    let ds = sample_mixture(&spec, n_p, n_u, seed).expect("sample");
    let x = ds.feature_matrix().expect("numeric");
    let g: Vec<f64> = (0..ds.n_rows()).map(|i| spec.exact_ntc(x[[i, 0]])).collect();
    NtcPredictions::from_rows(&ds, &g).expect("predictions in (0, 1)")
}

/// A noisy decreasing ratio curve of length `n`.
pub fn noisy_curve(n: usize) -> RatioCurve {
    let r = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let wobble = ((i * 7919) % 101) as f64 / 101.0 - 0.5;
            (2.0 * (1.0 - t) + 0.3 * wobble).max(0.0)
        })
        .collect();
    RatioCurve::from_ratios(r).expect("finite ratios")
}
