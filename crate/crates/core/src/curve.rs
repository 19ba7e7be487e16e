//! Rate-quality and rate-energy curve analysis: least-squares RE lines (EBR)
//! and Bjøntegaard quality deltas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_R2_FLOOR: f64 = 0.92;
/// |BD| above this is flagged as an outlier (never clamped).
pub const BD_OUTLIER_ABS: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("all rates are equal; slope is undefined")]
    DegenerateRates,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("non-finite quality value at rate {0}")]
    NonFiniteQuality(f64),
    #[error("non-positive or non-finite rate {0}")]
    InvalidRate(f64),
    #[error("missing energy at rate {0}")]
    MissingEnergy(f64),
    #[error("rate ranges do not overlap")]
    NoOverlap,
    #[error("curves have differing point counts: {0:?}")]
    RaggedCurves(Vec<usize>),
    #[error("no curves to average")]
    NoCurves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate_kbps: f64,
    pub quality: f64,
    pub energy_j: Option<f64>,
}

impl CurvePoint {
    pub fn rq(rate_kbps: f64, quality: f64) -> Self {
        CurvePoint {
            rate_kbps,
            quality,
            energy_j: None,
        }
    }

    pub fn re(rate_kbps: f64, energy_j: f64) -> Self {
        CurvePoint {
            rate_kbps,
            quality: f64::NAN,
            energy_j: Some(energy_j),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl CurveFit {
    pub fn negative_slope(&self) -> bool {
        self.alpha < 0.0
    }
}

/// Ordinary least squares of energy on rate.
pub fn fit_re_line(points: &[CurvePoint]) -> Result<CurveFit, CurveError> {
    if points.len() < 2 {
        return Err(CurveError::TooFewPoints {
            need: 2,
            got: points.len(),
        });
    }
    let mut xy = Vec::with_capacity(points.len());
    for p in points {
        if !(p.rate_kbps.is_finite() && p.rate_kbps > 0.0) {
            return Err(CurveError::InvalidRate(p.rate_kbps));
        }
        let e = p.energy_j.ok_or(CurveError::MissingEnergy(p.rate_kbps))?;
        if !e.is_finite() {
            return Err(CurveError::MissingEnergy(p.rate_kbps));
        }
        xy.push((p.rate_kbps, e));
    }
    fit_line(&xy)
}

/// OLS on raw pairs, mean-centred for accuracy.
pub fn fit_line(xy: &[(f64, f64)]) -> Result<CurveFit, CurveError> {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CurveError::DegenerateRates);
    }
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let alpha = sxy / sxx;
    let beta = my - alpha * mx;
    let ss_tot: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = xy.iter().map(|p| (p.1 - (alpha * p.0 + beta)).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(CurveFit {
        alpha,
        beta,
        r_squared,
        n_points: xy.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ebr {
    pub value: f64,
    pub r_squared: f64,
    pub low_fit: bool,
}

/// The EBR is the fitted slope; a fit below `floor_r2` carries a warning.
pub fn ebr(fit: &CurveFit, floor_r2: f64) -> Ebr {
    let low_fit = fit.r_squared < floor_r2;
    if low_fit {
        log::warn!("RE fit r²={:.4} below {floor_r2}", fit.r_squared);
    }
    Ebr {
        value: fit.alpha,
        r_squared: fit.r_squared,
        low_fit,
    }
}

/// Shape-preserving piecewise cubic Hermite interpolant (Fritsch–Carlson
/// derivatives, non-centred three-point end conditions).
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || d == 0.0 || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > (3.0 * m0).abs() {
        3.0 * m0
    } else {
        d
    }
}

impl Pchip {
    /// `x` must be strictly increasing with at least two knots.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, CurveError> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(CurveError::TooFewPoints { need: 2, got: n.min(y.len()) });
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        if h.iter().any(|&v| !(v > 0.0)) {
            return Err(CurveError::DegenerateRates);
        }
        let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = m[0];
            d[1] = m[0];
        } else {
            for k in 1..n - 1 {
                if same_sign(m[k - 1], m[k]) {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
                }
            }
            d[0] = edge_slope(h[0], h[1], m[0], m[1]);
            d[n - 1] = edge_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        }
        Ok(Pchip { x, y, d })
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&k| k <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Cubic coefficients of segment `k` in `t = x - x[k]`.
    fn coeffs(&self, k: usize) -> [f64; 4] {
        let h = self.x[k + 1] - self.x[k];
        let m = (self.y[k + 1] - self.y[k]) / h;
        let (d0, d1) = (self.d[k], self.d[k + 1]);
        [
            self.y[k],
            d0,
            (3.0 * m - 2.0 * d0 - d1) / h,
            (d0 + d1 - 2.0 * m) / (h * h),
        ]
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.segment(x);
        if x == self.x[k] {
            return self.y[k];
        }
        if x == self.x[k + 1] {
            return self.y[k + 1];
        }
        let [c0, c1, c2, c3] = self.coeffs(k);
        let t = x - self.x[k];
        c0 + t * (c1 + t * (c2 + t * c3))
    }

    fn antiderivative(&self, k: usize, t: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs(k);
        t * (c0 + t * (c1 / 2.0 + t * (c2 / 3.0 + t * c3 / 4.0)))
    }

    /// Exact integral over `[a, b]`, both inside the knot range.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integrate(b, a);
        }
        let mut total = 0.0;
        for k in 0..self.x.len() - 1 {
            let lo = a.max(self.x[k]);
            let hi = b.min(self.x[k + 1]);
            if hi > lo {
                total += self.antiderivative(k, hi - self.x[k]) - self.antiderivative(k, lo - self.x[k]);
            }
        }
        total
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityMetric {
    Psnr,
    Vmaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdResult {
    pub metric: QualityMetric,
    pub bd_quality: f64,
    pub overlap_lo: f64,
    pub overlap_hi: f64,
    pub anchor_id: String,
    pub test_id: String,
    pub outlier: bool,
    pub warnings: Vec<String>,
}

/// A curve prepared for BD integration: sorted by rate, ties collapsed.
#[derive(Debug, Clone)]
pub struct RqCurve {
    pub interp: Pchip,
    pub warnings: Vec<String>,
}

impl RqCurve {
    pub fn new(points: &[CurvePoint]) -> Result<Self, CurveError> {
        for p in points {
            if !(p.rate_kbps.is_finite() && p.rate_kbps > 0.0) {
                return Err(CurveError::InvalidRate(p.rate_kbps));
            }
            if !p.quality.is_finite() {
                return Err(CurveError::NonFiniteQuality(p.rate_kbps));
            }
        }
        let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.rate_kbps, p.quality)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        let mut warnings = Vec::new();
        let mut kept: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
        for p in pts {
            match kept.last() {
                Some(last) if last.0 == p.0 => {
                    let w = format!("duplicate rate {} kbps: kept quality {}, dropped {}", p.0, last.1, p.1);
                    log::warn!("{w}");
                    warnings.push(w);
                }
                _ => kept.push(p),
            }
        }
        if kept.len() < 3 {
            return Err(CurveError::TooFewPoints {
                need: 3,
                got: kept.len(),
            });
        }
        let (x, y) = kept.into_iter().map(|(r, q)| (r.log10(), q)).unzip();
        Ok(RqCurve {
            interp: Pchip::new(x, y)?,
            warnings,
        })
    }

    pub fn log_range(&self) -> (f64, f64) {
        let k = self.interp.knots();
        (k[0], k[k.len() - 1])
    }
}

/// Average quality difference of `test` over `anchor` on the shared
/// log10-rate interval. Negative means `test` is worse at equal rate.
pub fn bd_quality(
    metric: QualityMetric,
    anchor_id: &str,
    anchor: &[CurvePoint],
    test_id: &str,
    test: &[CurvePoint],
) -> Result<BdResult, CurveError> {
    let a = RqCurve::new(anchor)?;
    let t = RqCurve::new(test)?;
    let (alo, ahi) = a.log_range();
    let (tlo, thi) = t.log_range();
    let lo = alo.max(tlo);
    let hi = ahi.min(thi);
    if !(hi > lo) {
        return Err(CurveError::NoOverlap);
    }
    let bd = (t.interp.integrate(lo, hi) - a.interp.integrate(lo, hi)) / (hi - lo);
    let mut warnings = a.warnings;
    warnings.extend(t.warnings);
    Ok(BdResult {
        metric,
        bd_quality: bd,
        overlap_lo: lo,
        overlap_hi: hi,
        anchor_id: anchor_id.to_string(),
        test_id: test_id.to_string(),
        outlier: bd.abs() > BD_OUTLIER_ABS,
        warnings,
    })
}

/// Averages curves rung by rung (point i of each curve is QP rung i).
/// Energy is averaged only when every curve carries it at that rung.
pub fn average_curves(curves: &[Vec<CurvePoint>]) -> Result<Vec<CurvePoint>, CurveError> {
    let first = curves.first().ok_or(CurveError::NoCurves)?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(CurveError::RaggedCurves(curves.iter().map(Vec::len).collect()));
    }
    let n = curves.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let rate = curves.iter().map(|c| c[i].rate_kbps).sum::<f64>() / n;
            let quality = curves.iter().map(|c| c[i].quality).sum::<f64>() / n;
            let energy = curves
                .iter()
                .map(|c| c[i].energy_j)
                .sum::<Option<f64>>()
                .map(|s| s / n);
            CurvePoint {
                rate_kbps: rate,
                quality,
                energy_j: energy,
            }
        })
        .collect())
}
