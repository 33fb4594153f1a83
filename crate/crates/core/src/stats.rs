//! Small descriptive statistics shared by the simulator and the reports.

use std::fmt;
use std::str::FromStr;

/// Standard deviation divisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Population => "population",
            Estimator::Sample => "sample",
        })
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "population" | "pop" => Ok(Estimator::Population),
            "sample" => Ok(Estimator::Sample),
            other => Err(format!("unknown estimator `{other}` (population|sample)")),
        }
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Two-pass standard deviation. `None` when the estimator has no degrees of
/// freedom left.
pub fn stddev(values: &[f64], estimator: Estimator) -> Option<f64> {
    let m = mean(values)?;
    let n = values.len() as f64;
    let denom = match estimator {
        Estimator::Population => n,
        Estimator::Sample if values.len() < 2 => return None,
        Estimator::Sample => n - 1.0,
    };
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / denom).sqrt())
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_one_four() {
        let v = [1.0, 1.0, 4.0];
        assert_eq!(mean(&v), Some(2.0));
        assert!((stddev(&v, Estimator::Population).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((stddev(&v, Estimator::Sample).unwrap() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn formatting_is_lossless() {
        for v in [0.1, 1.0 / 3.0, 2.0e-300, 123_456_789.123_456_78, 0.0] {
            let text = format_float(v);
            assert_eq!(text.parse::<f64>().unwrap(), v, "{text}");
        }
        assert_eq!(format_float(2.0), "2.0000000000000000e0");
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(mean(&[]), None);
        assert_eq!(stddev(&[5.0], Estimator::Sample), None);
        assert_eq!(stddev(&[5.0], Estimator::Population), Some(0.0));
    }
}
