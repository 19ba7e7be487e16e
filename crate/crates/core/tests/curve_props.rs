use codec_energy::curve::{bd_quality, ebr, fit_re_line, CurvePoint, QualityMetric, RqCurve};
use proptest::prelude::*;

/// Four-point RQ curve with strictly increasing rates and qualities.
fn rq_curve(lo: f64) -> impl Strategy<Value = Vec<CurvePoint>> {
    (
        lo..lo * 3.0,
        prop::collection::vec(1.2..3.0f64, 3),
        20.0..35.0f64,
        prop::collection::vec(0.1..4.0f64, 3),
    )
        .prop_map(|(r0, ratios, q0, steps)| {
            let mut pts = vec![CurvePoint::rq(r0, q0)];
            for (f, dq) in ratios.into_iter().zip(steps) {
                let last = *pts.last().unwrap();
                pts.push(CurvePoint::rq(last.rate_kbps * f, last.quality + dq));
            }
            pts
        })
}

fn scaled(points: &[CurvePoint], k: f64) -> Vec<CurvePoint> {
    points.iter().map(|p| CurvePoint::rq(p.rate_kbps * k, p.quality)).collect()
}

proptest! {
    #[test]
    fn bd_is_antisymmetric(a in rq_curve(100.0), t in rq_curve(150.0)) {
        let ab = bd_quality(QualityMetric::Psnr, "a", &a, "t", &t);
        let ba = bd_quality(QualityMetric::Psnr, "t", &t, "a", &a);
        match (ab, ba) {
            (Ok(ab), Ok(ba)) => {
                prop_assert_eq!((ab.overlap_lo, ab.overlap_hi), (ba.overlap_lo, ba.overlap_hi));
                prop_assert!((ab.bd_quality + ba.bd_quality).abs() <= 1e-9, "{} vs {}", ab.bd_quality, ba.bd_quality);
            }
            (Err(_), Err(_)) => {}
            (x, y) => prop_assert!(false, "asymmetric outcome {x:?} / {y:?}"),
        }
    }

    #[test]
    fn bd_is_rate_scale_invariant(a in rq_curve(100.0), t in rq_curve(150.0), k in 0.001..1000.0f64) {
        if let Ok(base) = bd_quality(QualityMetric::Vmaf, "a", &a, "t", &t) {
            let s = bd_quality(QualityMetric::Vmaf, "a", &scaled(&a, k), "t", &scaled(&t, k)).unwrap();
            prop_assert!((base.bd_quality - s.bd_quality).abs() <= 1e-9, "{} vs {}", base.bd_quality, s.bd_quality);
        }
    }

    #[test]
    fn re_fit_residuals_are_orthogonal(
        pts in prop::collection::vec((10.0..50_000.0f64, 0.0..5_000.0f64), 2..12),
    ) {
        let mut rates: Vec<f64> = pts.iter().map(|p| p.0).collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        prop_assume!(rates.len() >= 2);
        let points: Vec<CurvePoint> = pts.iter().map(|&(r, e)| CurvePoint::re(r, e)).collect();
        let fit = fit_re_line(&points).unwrap();
        let resid: Vec<f64> = pts.iter().map(|&(r, e)| e - (fit.alpha * r + fit.beta)).collect();
        let scale_e: f64 = pts.iter().map(|p| p.1.abs()).sum::<f64>().max(1.0);
        let scale_re: f64 = pts.iter().map(|p| (p.0 * p.1).abs()).sum::<f64>().max(1.0);
        let sum: f64 = resid.iter().sum();
        let dot: f64 = resid.iter().zip(&pts).map(|(r, p)| r * p.0).sum();
        prop_assert!(sum.abs() <= 1e-9 * scale_e, "Σr = {sum}");
        prop_assert!(dot.abs() <= 1e-9 * scale_re, "Σr·x = {dot}");
        let e = ebr(&fit, 0.92);
        prop_assert_eq!(e.value.to_bits(), fit.alpha.to_bits());
        prop_assert!((0.0..=1.0).contains(&e.r_squared));
    }

    #[test]
    fn interpolant_passes_through_knots(points in rq_curve(50.0)) {
        let curve = RqCurve::new(&points).unwrap();
        for p in &points {
            prop_assert_eq!(curve.interp.eval(p.rate_kbps.log10()), p.quality);
        }
    }
}
