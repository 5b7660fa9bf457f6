use serde::Serialize;

use super::ExperimentError;

pub const MIN_HORIZONS: usize = 4;

/// Least-squares fit of `ln(error)` against `ln T`, alongside the fit
/// against `ln(ln²T/T)` that absorbs the logarithmic factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub corrected_slope: f64,
    pub corrected_intercept: f64,
    pub corrected_r_squared: f64,
    pub t_min: u64,
    pub t_max: u64,
    pub horizons: usize,
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r_squared)
}

/// `points` are `(T, mean error)`; horizons must form a geometric grid.
pub fn fit_rate(points: &[(u64, f64)]) -> Result<RateFit, ExperimentError> {
    if points.len() < MIN_HORIZONS {
        return Err(ExperimentError::InsufficientHorizons { found: points.len() });
    }
    let mut pts = points.to_vec();
    pts.sort_by_key(|p| p.0);
    if let Some(&(horizon, value)) = pts.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(ExperimentError::NonPositiveError { horizon, value });
    }
    if pts[0].0 < 2 {
        return Err(ExperimentError::NonGeometricHorizons);
    }
    let ratio = pts[1].0 as f64 / pts[0].0 as f64;
    let geometric = ratio > 1.0
        && pts
            .windows(2)
            .all(|w| ((w[1].0 as f64 / w[0].0 as f64) / ratio - 1.0).abs() <= 1e-9);
    if !geometric {
        return Err(ExperimentError::NonGeometricHorizons);
    }

    let ln_t: Vec<f64> = pts.iter().map(|p| (p.0 as f64).ln()).collect();
    let ln_e: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let corrected: Vec<f64> = ln_t.iter().map(|&l| 2.0 * l.ln() - l).collect();
    let (slope, intercept, r_squared) = least_squares(&ln_t, &ln_e);
    let (corrected_slope, corrected_intercept, corrected_r_squared) = least_squares(&corrected, &ln_e);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        corrected_slope,
        corrected_intercept,
        corrected_r_squared,
        t_min: pts[0].0,
        t_max: pts[pts.len() - 1].0,
        horizons: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<u64> {
        (10..=16).step_by(2).map(|k| 1u64 << k).collect()
    }

    #[test]
    fn exact_inverse_t_has_slope_minus_one() {
        let pts: Vec<_> = grid().into_iter().map(|t| (t, 3.0 / t as f64)).collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope + 1.0).abs() <= 1e-6);
        assert!((fit.intercept - 3f64.ln()).abs() <= 1e-9);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn log_corrected_data_has_unit_corrected_slope() {
        let pts: Vec<_> = grid()
            .into_iter()
            .map(|t| {
                let l = (t as f64).ln();
                (t, 0.7 * l * l / t as f64)
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.corrected_slope - 1.0).abs() <= 1e-6);
        // The plain slope is shallower than −1 because of the ln² factor.
        assert!(fit.slope > -1.0);
    }

    #[test]
    fn three_horizons_are_insufficient() {
        let pts = [(8, 1.0), (16, 0.5), (32, 0.25)];
        assert!(matches!(fit_rate(&pts), Err(ExperimentError::InsufficientHorizons { found: 3 })));
    }

    #[test]
    fn non_geometric_grid_is_rejected() {
        let pts = [(8, 1.0), (16, 0.5), (32, 0.25), (48, 0.1)];
        assert!(matches!(fit_rate(&pts), Err(ExperimentError::NonGeometricHorizons)));
    }

    #[test]
    fn zero_error_is_rejected() {
        let pts = [(8, 1.0), (16, 0.5), (32, 0.0), (64, 0.1)];
        assert!(matches!(fit_rate(&pts), Err(ExperimentError::NonPositiveError { horizon: 32, .. })));
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut pts: Vec<_> = grid().into_iter().map(|t| (t, (t as f64).powf(-0.8))).collect();
        let a = fit_rate(&pts).unwrap();
        pts.reverse();
        assert_eq!(a, fit_rate(&pts).unwrap());
    }
}
