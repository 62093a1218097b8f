//! Flow analytics over IMP traces.
//!
//! Each layer's share of the surviving weight magnitude `Mᵢ(n)` is treated as
//! an eigen-direction of the prune-and-retrain operator. The mean successive
//! ratio `λᵢ = Mᵢ(n+1)/Mᵢ(n)` is expressed in the coarse-graining base
//! `c = 1/(1−x)` as `σᵢ = log_c λᵢ`, which makes runs at different prune
//! fractions comparable. Error growth below a critical density is
//! summarized by a power-law fit `e ∼ (d_C − d)^(−γ)`.

use alloc::vec::Vec;

use crate::imp::ImpTrace;
use crate::nn::{Mask, ParamState};
use crate::stats::{median3_smooth, ols, standard_error};
use crate::{Error, Result};

/// `Mᵢ` for every layer: summed |masked weight| per layer over the total.
pub fn magnitude_fractions(params: &ParamState, mask: &Mask) -> Result<Vec<f64>> {
    mask.check_against(params)?;
    let sums: Vec<f64> = (0..params.num_layers())
        .map(|l| {
            params
                .weights(l)
                .iter()
                .zip(mask.layer_bits(l))
                .filter(|(_, &bit)| bit)
                .map(|(w, _)| libm::fabs(*w))
                .sum()
        })
        .collect();
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMagnitude);
    }
    Ok(sums.into_iter().map(|s| s / total).collect())
}

pub fn layer_magnitude_fraction(params: &ParamState, mask: &Mask, layer: usize) -> Result<f64> {
    if layer >= params.num_layers() {
        return Err(Error::InvalidArgument("layer index out of range"));
    }
    Ok(magnitude_fractions(params, mask)?[layer])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMagnitudeSeries {
    pub layer: usize,
    /// `Mᵢ(n)` for `n = 0..=q`.
    pub values: Vec<f64>,
    pub weight_count: usize,
}

/// Splits a trace into one magnitude series per layer.
pub fn magnitude_series(trace: &ImpTrace) -> Vec<LayerMagnitudeSeries> {
    let layers = trace.num_layers();
    let first = trace.records.first();
    (0..layers)
        .map(|layer| LayerMagnitudeSeries {
            layer,
            values: trace
                .records
                .iter()
                .map(|r| r.magnitude_fractions[layer])
                .collect(),
            weight_count: first.map_or(0, |r| r.surviving[layer]),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LambdaEstimator {
    /// Mean of successive ratios.
    #[default]
    ArithmeticMean,
    /// `exp` of the mean log-ratio; stderr by the delta method.
    GeometricMean,
}

/// `(λ, stderr)` from successive ratios of a magnitude series.
pub fn eigenvalue_estimate(values: &[f64], estimator: LambdaEstimator) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            found: values.len(),
        });
    }
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::ZeroMagnitude);
    }
    let ratios: Vec<f64> = values.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(match estimator {
        LambdaEstimator::ArithmeticMean => (crate::mean(&ratios), standard_error(&ratios)),
        LambdaEstimator::GeometricMean => {
            let logs: Vec<f64> = ratios.iter().map(|r| libm::log(*r)).collect();
            let lambda = libm::exp(crate::mean(&logs));
            (lambda, lambda * standard_error(&logs))
        }
    })
}

/// Coarse-graining base `c = 1/(1−x)`.
pub fn coarse_graining_base(x: f64) -> f64 {
    1.0 / (1.0 - x)
}

/// `σ = ln λ / ln(1/(1−x))`.
pub fn sigma(lambda: f64, x: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("λ must be positive"));
    }
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::InvalidArgument("prune fraction must lie in (0, 1)"));
    }
    // Same expression for the base as `coarse_graining_base`, so λ = c gives
    // exactly 1.
    Ok(libm::log(lambda) / libm::log(coarse_graining_base(x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    Relevant,
    Irrelevant,
    Marginal,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Relevant => "relevant",
            Direction::Irrelevant => "irrelevant",
            Direction::Marginal => "marginal",
        }
    }
}

pub const DEFAULT_MARGINAL_TOLERANCE: f64 = 0.05;

pub fn classify_direction(sigma: f64, tol: f64) -> Direction {
    if sigma > tol {
        Direction::Relevant
    } else if sigma < -tol {
        Direction::Irrelevant
    } else {
        Direction::Marginal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSigma {
    pub layer: usize,
    pub lambda: f64,
    pub stderr: f64,
    pub sigma: f64,
    pub class: Direction,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SigmaReport {
    pub base: f64,
    pub prune_fraction: f64,
    pub layers: Vec<LayerSigma>,
}

pub fn sigma_report(trace: &ImpTrace, tol: f64, estimator: LambdaEstimator) -> Result<SigmaReport> {
    if trace.records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let x = trace.config.prune_fraction;
    let layers = magnitude_series(trace)
        .iter()
        .map(|s| {
            let (lambda, stderr) = eigenvalue_estimate(&s.values, estimator)?;
            let sigma = sigma(lambda, x)?;
            Ok(LayerSigma {
                layer: s.layer,
                lambda,
                stderr,
                sigma,
                class: classify_direction(sigma, tol),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SigmaReport {
        base: coarse_graining_base(x),
        prune_fraction: x,
        layers,
    })
}

/// Density interval `[d_l, d_c]` of power-law error growth.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CriticalRegion {
    pub d_l: f64,
    pub d_c: f64,
}

impl CriticalRegion {
    pub fn new(d_l: f64, d_c: f64) -> Result<Self> {
        if !(d_l < d_c && d_c <= 1.0) {
            return Err(Error::InvalidArgument(
                "critical region needs d_l < d_c ≤ 1",
            ));
        }
        Ok(Self { d_l, d_c })
    }

    /// Points used in a fit: `d_l ≤ d < d_c`.
    pub fn admits(&self, d: f64) -> bool {
        d >= self.d_l && d < self.d_c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerLawFit {
    pub region: CriticalRegion,
    /// Critical exponent, the negated log-log slope.
    pub gamma: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least squares of `ln e` on `ln(d_C − d)` over trace points in `region`.
pub fn fit_power_law_points(
    densities: &[f64],
    losses: &[f64],
    region: CriticalRegion,
) -> Result<PowerLawFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, (&d, &e)) in densities.iter().zip(losses).enumerate() {
        if !region.admits(d) {
            continue;
        }
        if !(e > 0.0) {
            return Err(Error::NonPositiveLoss { index: i });
        }
        xs.push(libm::log(region.d_c - d));
        ys.push(libm::log(e));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            found: xs.len(),
        });
    }
    let fit = ols(&xs, &ys).ok_or(Error::InsufficientPoints {
        needed: 3,
        found: xs.len(),
    })?;
    Ok(PowerLawFit {
        region,
        gamma: -fit.slope,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        intercept: fit.intercept,
        r2: fit.r2,
        points: fit.n,
    })
}

pub fn fit_power_law(trace: &ImpTrace, region: CriticalRegion) -> Result<PowerLawFit> {
    fit_power_law_points(&trace.densities(), &trace.losses(), region)
}

/// Settings for locating the critical region in a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegionRule {
    /// Onset is where the smoothed loss first exceeds this multiple of the
    /// full-model loss.
    pub tolerance_factor: f64,
    /// Losses at or above this are treated as diverged and end the region.
    pub divergence_threshold: f64,
}

impl Default for RegionRule {
    fn default() -> Self {
        Self {
            tolerance_factor: 1.0,
            divergence_threshold: 1e6,
        }
    }
}

pub const MIN_REGION_TRACE_POINTS: usize = 10;

/// Locates `[d_L, d_C]` on a density-ordered series whose first entry is the
/// full model. `d_C` is the largest density at which the 3-point moving
/// median of the loss exceeds `tolerance_factor` times the full-model loss;
/// `d_L` is the last density before divergence or the end of the series.
/// `Ok(None)` means the loss never leaves its baseline.
pub fn detect_critical_region_points(
    densities: &[f64],
    losses: &[f64],
    rule: RegionRule,
) -> Result<Option<CriticalRegion>> {
    if densities.len() < MIN_REGION_TRACE_POINTS || losses.len() != densities.len() {
        return Err(Error::InsufficientPoints {
            needed: MIN_REGION_TRACE_POINTS,
            found: densities.len().min(losses.len()),
        });
    }
    let usable = losses
        .iter()
        .position(|e| !e.is_finite() || *e >= rule.divergence_threshold)
        .unwrap_or(losses.len());
    if usable < 2 {
        return Ok(None);
    }
    let smoothed = median3_smooth(&losses[..usable]);
    let threshold = rule.tolerance_factor * losses[0];
    let Some(onset) = (1..usable).find(|&n| smoothed[n] > threshold) else {
        return Ok(None);
    };
    let d_c = densities[onset];
    let d_l = densities[usable - 1];
    if !(d_l < d_c) {
        return Ok(None);
    }
    CriticalRegion::new(d_l, d_c).map(Some)
}

pub fn detect_critical_region(
    trace: &ImpTrace,
    rule: RegionRule,
) -> Result<Option<CriticalRegion>> {
    detect_critical_region_points(&trace.densities(), &trace.losses(), rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};
    use alloc::vec;

    #[test]
    fn fractions_examples() {
        // layer 0: 1 → 2 with weights {1, −2}; layer 1: 2 → ... needs 2 inputs,
        // so use 1 → 2 → 1 with layer-1 weights {3, 0} and mask the zero off.
        let spec = NetworkSpec::new(1, vec![2], 1, Activation::Tanh).unwrap();
        let p = ParamState::from_flat(&spec, vec![1.0, -2.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        let m = Mask::ones(&spec);
        assert_eq!(layer_magnitude_fraction(&p, &m, 0).unwrap(), 0.5);
        assert_eq!(layer_magnitude_fraction(&p, &m, 1).unwrap(), 0.5);

        let single = NetworkSpec::new(1, vec![], 3, Activation::Tanh).unwrap();
        let p = ParamState::from_flat(&single, vec![0.2, -0.4, 0.1, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            layer_magnitude_fraction(&p, &Mask::ones(&single), 0).unwrap(),
            1.0
        );
        assert_eq!(
            magnitude_fractions(&p, &Mask::zeros(&single)),
            Err(Error::ZeroMagnitude)
        );
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(
            eigenvalue_estimate(&[0.3, 0.3, 0.3], LambdaEstimator::ArithmeticMean).unwrap(),
            (1.0, 0.0)
        );
        let (l, se) =
            eigenvalue_estimate(&[0.5, 0.55, 0.605], LambdaEstimator::ArithmeticMean).unwrap();
        assert!((l - 1.1).abs() < 1e-12);
        assert!(se < 1e-12);
        assert!(eigenvalue_estimate(&[0.5, 0.0], LambdaEstimator::ArithmeticMean).is_err());
        assert!(eigenvalue_estimate(&[0.5], LambdaEstimator::ArithmeticMean).is_err());
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(1.0, 0.3).unwrap(), 0.0);
        for x in [0.01, 0.05, 0.1, 0.5] {
            assert_eq!(sigma(1.0 / (1.0 - x), x).unwrap(), 1.0);
        }
        // ln(1.1) / ln(1/0.99)
        let s = sigma(1.1, 0.01).unwrap();
        assert!((s - 9.482_8).abs() < 1e-3, "{s}");
        assert!(sigma(0.0, 0.1).is_err());
        assert!(sigma(-1.0, 0.1).is_err());
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_direction(5.2449, 0.05), Direction::Relevant);
        assert_eq!(classify_direction(-0.1205, 0.05), Direction::Irrelevant);
        assert_eq!(classify_direction(0.01, 0.05), Direction::Marginal);
    }

    #[test]
    fn constant_loss_fits_flat() {
        let d: Vec<f64> = (0..10).map(|i| 0.8 - 0.05 * i as f64).collect();
        let e = vec![0.25; 10];
        let fit = fit_power_law_points(&d, &e, CriticalRegion::new(0.3, 0.9).unwrap()).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!(fit.gamma.abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let region = CriticalRegion::new(0.3, 0.9).unwrap();
        assert!(matches!(
            fit_power_law_points(&[0.5, 0.6], &[1.0, 1.0], region),
            Err(Error::InsufficientPoints { .. })
        ));
        assert!(matches!(
            fit_power_law_points(&[0.5, 0.6, 0.7], &[1.0, 0.0, 1.0], region),
            Err(Error::NonPositiveLoss { index: 1 })
        ));
        assert!(CriticalRegion::new(0.9, 0.3).is_err());
    }

    #[test]
    fn flat_trace_has_no_region() {
        let d: Vec<f64> = (0..15).map(|i| 0.95f64.powi(i)).collect();
        let e = vec![1e-3; 15];
        assert_eq!(
            detect_critical_region_points(&d, &e, RegionRule::default()).unwrap(),
            None
        );
        assert!(detect_critical_region_points(&d[..5], &e[..5], RegionRule::default()).is_err());
    }

    #[test]
    fn region_stops_before_divergence() {
        let d: Vec<f64> = (0..12).map(|i| 1.0 - 0.05 * i as f64).collect();
        let mut e: Vec<f64> = (0..12)
            .map(|i| if i < 3 { 1.0 } else { i as f64 })
            .collect();
        e[10] = f64::NAN;
        let r = detect_critical_region_points(&d, &e, RegionRule::default())
            .unwrap()
            .unwrap();
        assert!((r.d_l - d[9]).abs() < 1e-15);
    }
}
