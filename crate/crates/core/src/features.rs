//! Summary features of a spectrum and distances between spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default half-width of the marginal band around zero, in 1/steps.
pub const DEFAULT_MARGINAL_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Stable,
    Marginal,
    Chaotic,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Stable => "stable",
            Regime::Marginal => "marginal",
            Regime::Chaotic => "chaotic",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFeatures {
    pub lambda_max: f64,
    pub lambda_mean: f64,
    pub lambda_variance: f64,
    pub regime: Regime,
}

/// Largest exponent (over all entries, not the first), mean, population
/// variance and the stability regime.
pub fn summarize(spectrum: &[f64], marginal_tol: f64) -> Result<SpectrumFeatures> {
    if spectrum.is_empty() {
        return Err(Error::Config("cannot summarize an empty spectrum".into()));
    }
    if marginal_tol.is_nan() || marginal_tol < 0.0 {
        return Err(Error::Config(format!(
            "marginal tolerance must be ≥ 0, got {marginal_tol}"
        )));
    }
    let n = spectrum.len() as f64;
    let lambda_max = spectrum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lambda_mean = spectrum.iter().sum::<f64>() / n;
    let lambda_variance = spectrum.iter().map(|v| (v - lambda_mean).powi(2)).sum::<f64>() / n;
    let regime = if lambda_max > marginal_tol {
        Regime::Chaotic
    } else if lambda_max < -marginal_tol {
        Regime::Stable
    } else {
        Regime::Marginal
    };
    Ok(SpectrumFeatures {
        lambda_max,
        lambda_mean,
        lambda_variance,
        regime,
    })
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim("spectrum length", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Config("spectra must not be empty".into()));
    }
    Ok(())
}

/// Root-mean-square difference over exponent index.
pub fn rms_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// `mean(a) − mean(b)`.
pub fn mean_difference(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let n = a.len() as f64;
    Ok(a.iter().sum::<f64>() / n - b.iter().sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stable_example() {
        let f = summarize(&[-1.0, -2.0, -3.0], 0.05).unwrap();
        assert_eq!(f.lambda_max, -1.0);
        assert_eq!(f.lambda_mean, -2.0);
        assert!((f.lambda_variance - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.regime, Regime::Stable);
    }

    #[test]
    fn marginal_band() {
        assert_eq!(summarize(&[0.01, -1.0], 0.05).unwrap().regime, Regime::Marginal);
        assert_eq!(summarize(&[0.2, -1.0], 0.05).unwrap().regime, Regime::Chaotic);
    }

    #[test]
    fn max_is_over_all_entries() {
        let f = summarize(&[-0.5, 0.3, -2.0], 0.05).unwrap();
        assert_eq!(f.lambda_max, 0.3);
    }

    #[test]
    fn empty_spectrum_is_an_error() {
        assert!(summarize(&[], 0.05).is_err());
    }

    #[test]
    fn distances_by_hand() {
        assert_eq!(rms_distance(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rms_distance(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        assert_eq!(mean_difference(&[2.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(mean_difference(&[0.0, -2.0], &[-1.0, -3.0]).unwrap(), 1.0);
        assert!(rms_distance(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mean_difference(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|k| {
            let v = || prop::collection::vec(-5.0f64..5.0, k);
            (v(), v(), v())
        })
    }

    proptest! {
        #[test]
        fn rms_is_a_metric((a, b, c) in triple()) {
            let ab = rms_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, rms_distance(&b, &a).unwrap());
            prop_assert_eq!(rms_distance(&a, &a).unwrap(), 0.0);
            prop_assert!(ab <= rms_distance(&a, &c).unwrap() + rms_distance(&c, &b).unwrap() + 1e-12);
            if a != b {
                prop_assert!(ab > 0.0);
            }
        }

        #[test]
        fn mean_difference_is_antisymmetric((a, b, _c) in triple()) {
            prop_assert_eq!(mean_difference(&a, &b).unwrap(), -mean_difference(&b, &a).unwrap());
        }

        #[test]
        fn regime_is_permutation_invariant(mut a in prop::collection::vec(-1.0f64..1.0, 1..20), seed in any::<u64>()) {
            let before = summarize(&a, 0.05).unwrap();
            // deterministic shuffle
            let n = a.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                a.swap(i, (s >> 33) as usize % (i + 1));
            }
            let after = summarize(&a, 0.05).unwrap();
            prop_assert_eq!(before.regime, after.regime);
            prop_assert_eq!(before.lambda_max, after.lambda_max);
            prop_assert!(after.lambda_max >= after.lambda_mean);
            prop_assert!(after.lambda_variance >= 0.0);
        }
    }
}
