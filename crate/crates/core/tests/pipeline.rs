use dedpul_core::estimators::{posteriors_at, ratio_curve};
use dedpul_core::ratio::median_half_width;
use dedpul_core::synth::{alpha_star, sample_mixture};
use dedpul_core::{
    dedpul, dedpul_from_predictions, run_method, Branch, DedpulConfig, Laplace, Method, MixtureSpec,
    NtcConfig, NtcPredictions, RatioCurve,
};

fn exact_predictions(spec: &MixtureSpec, n_p: usize, n_u: usize, seed: u64) -> NtcPredictions {
    let ds = sample_mixture(spec, n_p, n_u, seed).unwrap();
    let x = ds.feature_matrix().unwrap();
    let g: Vec<f64> = (0..ds.n_rows()).map(|i| spec.exact_ntc(x[[i, 0]])).collect();
    NtcPredictions::from_rows(&ds, &g).unwrap()
}

#[test]
fn result_serializes_with_expected_fields() {
    let spec = MixtureSpec::new(Laplace::new(0.0, 1.0), Laplace::new(4.0, 1.0), 0.5).unwrap();
    let preds = exact_predictions(&spec, 300, 2000, 3);
    let res = dedpul_from_predictions(&preds, &DedpulConfig::default()).unwrap();
    let v = serde_json::to_value(&res).unwrap();
    for key in ["alpha_star", "branch", "posteriors", "d_curve", "em_trace"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["d_curve"]["alphas"].as_array().unwrap().len(), 1001);
    assert_eq!(v["d_curve"]["d"].as_array().unwrap().len(), 1001);
    assert_eq!(v["posteriors"].as_array().unwrap().len(), 2000);
    assert!(v["branch"] == "em" || v["branch"] == "max_slope");
}

#[test]
fn posteriors_are_returned_in_input_order() {
    let spec = MixtureSpec::new(Laplace::new(0.0, 1.0), Laplace::new(2.0, 1.0), 0.5).unwrap();
    let preds = exact_predictions(&spec, 300, 2000, 4);
    let cfg = DedpulConfig::default();
    let res = dedpul_from_predictions(&preds, &cfg).unwrap();
    let curve = ratio_curve(&preds, &cfg).unwrap();
    let sorted = posteriors_at(&curve, res.alpha_star).unwrap();
    assert_eq!(curve.to_input_order(&sorted), res.posteriors);
    for (&i, p) in curve.order().iter().zip(&sorted) {
        assert_eq!(res.posteriors[i], *p);
    }

    // A median window lying wholly above the threshold sees a running
    // maximum, so posteriors there are non-decreasing in y.
    let mean = preds.y_u.iter().sum::<f64>() / preds.y_u.len() as f64;
    let first = curve.y().iter().position(|&y| y >= mean).unwrap();
    let k = median_half_width(curve.len());
    assert!(sorted[first + k..].windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn trained_pipeline_tracks_alpha_star() {
    let spec = MixtureSpec::new(Laplace::new(0.0, 1.0), Laplace::new(4.0, 1.0), 0.5).unwrap();
    let ds = sample_mixture(&spec, 1000, 5000, 9).unwrap();
    let cfg = DedpulConfig {
        ntc: NtcConfig::synthetic().with_seed(1),
        ..DedpulConfig::default()
    };
    let res = dedpul(&ds, &cfg).unwrap();
    let truth = alpha_star(&spec).unwrap();
    assert!((res.alpha_star - truth).abs() < 0.06, "{} vs {truth}", res.alpha_star);
    assert_eq!(res.branch, Branch::Em);
}

#[test]
fn methods_share_predictions() {
    let spec = MixtureSpec::new(Laplace::new(0.0, 1.0), Laplace::new(1.0, 1.0), 0.25).unwrap();
    let preds = exact_predictions(&spec, 300, 2000, 5);
    let cfg = DedpulConfig::default();
    for m in [Method::Dedpul, Method::En, Method::SimpleAlpha, Method::NoSmooth] {
        let est = run_method(m, &preds, &cfg).unwrap();
        assert!((0.0..=1.0).contains(&est.alpha), "{}: {}", m.name(), est.alpha);
        assert_eq!(est.posteriors.len(), 2000);
        assert_eq!(est.d_curve.is_some(), matches!(m, Method::Dedpul | Method::NoSmooth));
    }
}

#[test]
fn posteriors_at_clips() {
    let curve = RatioCurve::from_ratios(vec![0.5, 1.0, 4.0]).unwrap();
    assert_eq!(posteriors_at(&curve, 0.5).unwrap(), vec![0.25, 0.5, 1.0]);
}
