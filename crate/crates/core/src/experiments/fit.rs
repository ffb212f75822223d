use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence half-width of the slope.
    pub half_width: f64,
}

/// Least squares on `(ln x, ln y)` with a Student-t interval on the slope.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 4 {
        return Err(Error::Parameter(format!(
            "slope fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Domain(format!("log-log fit needs positive values, got ({x}, {y})")));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = points.len() as f64;
    let mx = pairwise_sum(&lx) / k;
    let my = pairwise_sum(&ly) / k;
    let sxx = pairwise_sum(&lx.iter().map(|x| (x - mx).powi(2)).collect::<Vec<_>>());
    if !(sxx > 0.0) {
        return Err(Error::Domain("log-log fit needs at least two distinct x values".into()));
    }
    let sxy = pairwise_sum(&lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).collect::<Vec<_>>());
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = pairwise_sum(
        &lx.iter()
            .zip(&ly)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .collect::<Vec<_>>(),
    );
    let dof = k - 2.0;
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Parameter(e.to_string()))?
        .inverse_cdf(0.975);
    let half_width = t * (sse / dof / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        half_width,
    })
}

/// Sum with a fixed binary reduction tree, independent of thread count.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = v.len() as f64;
    let mean = pairwise_sum(v) / k;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let ss = pairwise_sum(&v.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>());
    (mean, (ss / (k - 1.0) / k).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<_> = (1..=6).map(|i| (i as f64, (i * i) as f64)).collect();
        let f = fit_loglog_slope(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.half_width < 1e-10);
    }

    #[test]
    fn needs_four_positive_points() {
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).is_err());
        let err = fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 3.0), (4.0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn mean_stderr_small() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
