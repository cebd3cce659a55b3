use serde::{Deserialize, Serialize};

/// Residuals at or below this, relative to `max(1, r_0)`, are at rounding
/// level and ignored.
pub const TAIL_FLOOR: f64 = 1e-13;
/// Smallest estimated order of convergence reported as quadratic.
pub const TAIL_MIN_ORDER: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailVerdict {
    Quadratic,
    NotQuadratic,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub verdict: TailVerdict,
    /// Smallest `c` with `r_{t+1} ≤ c r_t²` over the tail.
    pub coefficient: Option<f64>,
    /// Geometric mean of `r_{t+1} / r_t²`.
    pub mean_coefficient: Option<f64>,
    /// Least-squares order `p` in `r_{t+1} ≈ C r_t^p`.
    pub order: Option<f64>,
    /// Growth rate of the per-step decade decrements, `(d_last/d_first)^(1/(m-1))`.
    /// Equals 1 for a geometric sequence and 2 for an exactly quadratic one.
    pub estimated_order: Option<f64>,
    pub points: usize,
}

pub(crate) fn ls_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 1e-12).then(|| sxy / sxx)
}

/// Fit over a plain residual sequence; every point above the floor counts.
pub fn quadratic_tail_fit(residuals: &[f64]) -> TailFit {
    let floor = TAIL_FLOOR * residuals.first().map_or(1.0, |r| r.max(1.0));
    fit_window(residuals, floor)
}

/// Tail of one ρ block of a trace: the trailing run of full Newton steps
/// together with the point it starts from.
pub fn trace_tail_fit(rows: &[super::TraceRow]) -> TailFit {
    let Some(first) = rows.first() else {
        return fit_window(&[], TAIL_FLOOR);
    };
    let start = rows.iter().rposition(|t| t.inner_iter > 0 && t.alpha < 1.0).unwrap_or(0);
    let res: Vec<f64> = rows[start..].iter().map(|t| t.residual).collect();
    fit_window(&res, TAIL_FLOOR * first.residual.max(1.0))
}

/// Quadratic when the decade decrements `d_t = log10(r_t / r_{t+1})` grow
/// by a factor of at least `TAIL_MIN_ORDER` per step on average. Needs three
/// points above `floor`; a non-decreasing step is never quadratic.
pub fn fit_window(window: &[f64], floor: f64) -> TailFit {
    let tail: Vec<f64> = window.iter().cloned().filter(|r| *r > floor).collect();
    let points = tail.len();
    let mut fit = TailFit {
        verdict: TailVerdict::Inconclusive,
        coefficient: None,
        mean_coefficient: None,
        order: None,
        estimated_order: None,
        points,
    };
    if points < 3 {
        return fit;
    }
    let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / (w[0] * w[0])).collect();
    fit.coefficient = Some(ratios.iter().cloned().fold(0.0, f64::max));
    let mean = ratios.iter().map(|r| r.log10()).sum::<f64>() / ratios.len() as f64;
    fit.mean_coefficient = Some(10f64.powf(mean));
    let pairs: Vec<(f64, f64)> = tail.windows(2).map(|w| (w[0].log10(), w[1].log10())).collect();
    fit.order = ls_slope(&pairs);
    let dec: Vec<f64> = tail.windows(2).map(|w| (w[0] / w[1]).log10()).collect();
    if dec.iter().any(|d| !(*d > 0.0)) {
        fit.verdict = TailVerdict::NotQuadratic;
        return fit;
    }
    let q = (dec[dec.len() - 1] / dec[0]).powf(1.0 / (dec.len() - 1) as f64);
    fit.estimated_order = Some(q);
    fit.verdict = if q >= TAIL_MIN_ORDER { TailVerdict::Quadratic } else { TailVerdict::NotQuadratic };
    fit
}
