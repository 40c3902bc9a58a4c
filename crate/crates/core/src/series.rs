//! Multichannel time series stored as a row-major `channels × steps` matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    channels: usize,
    steps: usize,
    values: Vec<f64>,
}

impl TimeSeries {
    /// Builds a series from row-major values (`values[c * steps + t]`).
    pub fn new(channels: usize, steps: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Contract("a series needs at least one channel".into()));
        }
        if steps < 2 {
            return Err(Error::Contract(format!(
                "a series needs at least 2 steps, got {steps}"
            )));
        }
        if values.len() != channels * steps {
            return Err(Error::Contract(format!(
                "expected {} values for shape {channels}x{steps}, got {}",
                channels * steps,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at channel {}, step {}",
                pos / steps,
                pos % steps
            )));
        }
        Ok(Self {
            channels,
            steps,
            values,
        })
    }

    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        let steps = values.len();
        Self::new(1, steps, values)
    }

    pub fn from_channels(rows: &[Vec<f64>]) -> Result<Self> {
        let steps = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != steps) {
            return Err(Error::Contract("channels have different lengths".into()));
        }
        Self::new(rows.len(), steps, rows.concat())
    }

    pub fn zeros(channels: usize, steps: usize) -> Self {
        Self {
            channels,
            steps,
            values: vec![0.0; channels * steps],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of feature points, `channels * steps`.
    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.steps)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for generators. Callers must keep every value finite.
    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, channel: usize, step: usize) -> f64 {
        self.values[channel * self.steps + step]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, step: usize, value: f64) {
        self.values[channel * self.steps + step] = value;
    }

    #[inline]
    pub fn channel(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.steps..(channel + 1) * self.steps]
    }

    #[inline]
    pub fn channel_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.values[channel * self.steps..(channel + 1) * self.steps]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &TimeSeries) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Contract(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Squared Euclidean distance over the flattened values.
    pub fn sq_distance(&self, other: &TimeSeries) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Per-channel value range `max - min` of one instance.
pub fn instance_range(x: &TimeSeries) -> Vec<f64> {
    (0..x.channels())
        .map(|c| {
            let ch = x.channel(c);
            let (lo, hi) = ch
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            hi - lo
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_examples() {
        let x = TimeSeries::univariate(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(instance_range(&x), vec![3.0]);
        let x = TimeSeries::univariate(vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(instance_range(&x), vec![0.0]);
        let x = TimeSeries::from_channels(&[vec![0.0, 2.0], vec![-1.0, 3.0]]).unwrap();
        assert_eq!(instance_range(&x), vec![2.0, 4.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(TimeSeries::new(0, 3, vec![]).is_err());
        assert!(TimeSeries::univariate(vec![1.0]).is_err());
        assert!(TimeSeries::new(2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(
            TimeSeries::univariate(vec![0.0, f64::NAN]),
            Err(Error::Data(_))
        ));
    }
}
