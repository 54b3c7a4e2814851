//! Box-plot statistics over per-map metric values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUANTILE_RULE: &str = "linear interpolation at (n-1)*p on sorted data";
pub const WHISKER_FACTOR: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Quantile of ascending `sorted` data; `p` in `[0, 1]`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile(&v, 0.5))
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.len() < 4 {
        return Err(Error::InvalidParam(format!(
            "box statistics need at least 4 values, got {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("box statistics input {v}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile(&v, 0.25);
    let median = quantile(&v, 0.5);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - WHISKER_FACTOR * iqr;
    let hi_fence = q3 + WHISKER_FACTOR * iqr;
    let inside = || v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence);
    // q1 and q3 lie inside the fences, so some data point always does too.
    let lower_whisker = inside().fold(f64::INFINITY, f64::min);
    let upper_whisker = inside().fold(f64::NEG_INFINITY, f64::max);
    let outliers = v.iter().copied().filter(|x| *x < lo_fence || *x > hi_fence).collect();
    Ok(BoxStats {
        n: v.len(),
        min: v[0],
        q1,
        median,
        q3,
        max: v[v.len() - 1],
        iqr,
        lower_whisker,
        upper_whisker,
        outliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_values() {
        let s = box_stats(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.iqr), (2.0, 3.0, 4.0, 2.0));
        assert_eq!((s.lower_whisker, s.upper_whisker), (1.0, 5.0));
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn constant_values() {
        let s = box_stats(&[7.0; 6]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.iqr), (7.0, 7.0, 7.0, 0.0));
        assert_eq!((s.lower_whisker, s.upper_whisker), (7.0, 7.0));
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn extreme_point_is_an_outlier() {
        let mut v: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        v.push(100.0);
        let s = box_stats(&v).unwrap();
        // positions 2.5 and 7.5 of 1..=10,100
        assert_eq!((s.q1, s.median, s.q3), (3.5, 6.0, 8.5));
        assert_eq!(s.outliers, vec![100.0]);
        assert_eq!(s.upper_whisker, 10.0);
        assert_eq!(s.lower_whisker, 1.0);
    }

    #[test]
    fn whisker_can_end_inside_the_box() {
        let s = box_stats(&[0.0, 10.0, 11.0, 14.0]).unwrap();
        // q1 = 7.5, q3 = 11.75, lower fence 1.125
        assert_eq!(s.outliers, vec![0.0]);
        assert_eq!(s.lower_whisker, 10.0);
        assert!(s.lower_whisker > s.q1);
    }

    #[test]
    fn too_few_values() {
        assert!(box_stats(&[1.0, 2.0, 3.0]).is_err());
        assert!(box_stats(&[1.0, 2.0, f64::NAN, 3.0]).is_err());
    }

    #[test]
    fn median_even_count() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn ordering_invariants(v in prop::collection::vec(-50.0f64..50.0, 4..60)) {
            let s = box_stats(&v).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            prop_assert!((s.iqr - (s.q3 - s.q1)).abs() == 0.0);
            // whiskers may end inside the box when quantiles interpolate
            let lo = s.q1 - WHISKER_FACTOR * s.iqr;
            let hi = s.q3 + WHISKER_FACTOR * s.iqr;
            let inside: Vec<f64> = v.iter().copied().filter(|x| (lo..=hi).contains(x)).collect();
            prop_assert_eq!(s.lower_whisker, inside.iter().copied().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(s.upper_whisker, inside.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            prop_assert!(s.min <= s.lower_whisker && s.lower_whisker <= s.upper_whisker && s.upper_whisker <= s.max);
            prop_assert_eq!(s.outliers.len() + inside.len(), v.len());
            if s.outliers.is_empty() {
                prop_assert_eq!((s.lower_whisker, s.upper_whisker), (s.min, s.max));
            }
        }
    }
}
