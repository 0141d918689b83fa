use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub intercept: f64,
    pub slope: f64,
    /// Standard error of the slope when weights are inverse variances.
    pub slope_std_err: f64,
}

/// Weighted least-squares line through `(s, value, weight)` points.
pub fn fit_slope(series: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    let bad = series
        .iter()
        .any(|&(s, v, w)| !(s.is_finite() && v.is_finite() && w.is_finite()) || w <= 0.0);
    if bad {
        return Err(Error::InvalidArgument(
            "slope fit needs finite points with positive weights".into(),
        ));
    }
    let sw: f64 = series.iter().map(|p| p.2).sum();
    if series.len() < 2 || sw == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs at least two points".into()));
    }
    let s_mean = series.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let v_mean = series.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = series.iter().map(|p| p.2 * (p.0 - s_mean).powi(2)).sum();
    let spread = series.iter().map(|p| p.0).fold(f64::NAN, f64::max)
        - series.iter().map(|p| p.0).fold(f64::NAN, f64::min);
    if sxx <= 0.0 || spread == 0.0 {
        return Err(Error::InvalidArgument(
            "slope fit needs at least two distinct idle lengths".into(),
        ));
    }
    let sxy: f64 = series
        .iter()
        .map(|p| p.2 * (p.0 - s_mean) * (p.1 - v_mean))
        .sum();
    let slope = sxy / sxx;
    Ok(SlopeFit {
        intercept: v_mean - slope * s_mean,
        slope,
        slope_std_err: (1.0 / sxx).sqrt(),
    })
}
