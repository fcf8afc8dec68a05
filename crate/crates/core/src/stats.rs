//! Order statistics and small numeric helpers.

use alloc::vec::Vec;

/// Sorts a copy of `values` with a total order (NaN last).
pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Quantile by linear interpolation between order statistics at
/// position `q * (n - 1)`. `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile_sorted(&sorted(values), 0.5)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Minimum, quartiles and maximum of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FivePointStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FivePointStats {
    /// Returns `None` for an empty sample.
    pub fn from_samples(values: &[f64]) -> Option<Self> {
        let s = sorted(values);
        Some(FivePointStats {
            min: *s.first()?,
            q1: quantile_sorted(&s, 0.25)?,
            median: quantile_sorted(&s, 0.5)?,
            q3: quantile_sorted(&s, 0.75)?,
            max: *s.last()?,
        })
    }

    pub fn spread(&self) -> f64 {
        self.max - self.min
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_sample() {
        let s = FivePointStats::from_samples(&[1.0, -1.0, 0.0]).unwrap();
        assert_eq!((s.min, s.median, s.max), (-1.0, 0.0, 1.0));
        assert_eq!((s.q1, s.q3), (-0.5, 0.5));
    }

    #[test]
    fn median_even_count_interpolates() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[10.0, 40.0, 12.0]), Some(12.0));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn matches_sort_oracle(v in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let s = FivePointStats::from_samples(&v).unwrap();
            let mut o = v.clone();
            o.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                let pos = p * (o.len() - 1) as f64;
                let i = pos.floor() as usize;
                let j = (i + 1).min(o.len() - 1);
                o[i] + (o[j] - o[i]) * (pos - i as f64)
            };
            prop_assert_eq!(s.min, o[0]);
            prop_assert_eq!(s.max, o[o.len() - 1]);
            prop_assert_eq!(s.q1, q(0.25));
            prop_assert_eq!(s.median, q(0.5));
            prop_assert_eq!(s.q3, q(0.75));
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        }
    }
}
