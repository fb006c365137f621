use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map taking `[min, max]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(x: &[f64]) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in x {
            if !v.is_finite() {
                return Err(Error::Numerical(
                    "cannot normalize a non-finite waveform".into(),
                ));
            }
            min = min.min(v);
            max = max.max(v);
        }
        let mm = MinMax { min, max };
        mm.check()?;
        Ok(mm)
    }

    pub fn check(&self) -> Result<()> {
        if self.max > self.min && (self.max - self.min).is_finite() {
            Ok(())
        } else {
            Err(Error::DegenerateRange(format!(
                "min {} / max {}",
                self.min, self.max
            )))
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Values outside the fitted range map outside `[0, 1]`; nothing is clipped.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let r = self.range();
        x.iter().map(|v| (v - self.min) / r).collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        let r = self.range();
        y.iter().map(|v| v * r + self.min).collect()
    }

    /// Widens the range to cover another record.
    pub fn union(&self, other: &MinMax) -> MinMax {
        MinMax {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }
}

/// Min-max normalizes a detected waveform and returns the map used.
pub fn detect_and_normalize(s: &[f64]) -> Result<(Vec<f64>, MinMax)> {
    let mm = MinMax::fit(s)?;
    Ok((mm.apply(s), mm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_range_to_unit_interval() {
        let (y, mm) = detect_and_normalize(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.5, 1.0]);
        assert_eq!(mm, MinMax { min: 2.0, max: 6.0 });
        assert_eq!(mm.apply(&[8.0, 0.0]), vec![1.5, -0.5]);
    }

    #[test]
    fn constant_input_is_degenerate() {
        assert!(matches!(
            detect_and_normalize(&[3.0; 5]),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn round_trip() {
        let x = [0.3, -1.7, 12.5, 4.25];
        let (y, mm) = detect_and_normalize(&x).unwrap();
        for (a, b) in mm.invert(&y).iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
