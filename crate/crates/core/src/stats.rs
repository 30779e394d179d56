use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// Two-pass mean and standard error, summed in slice order so the
    /// result does not depend on how the samples were produced.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        // shifted by the first sample so constant data has exactly zero spread
        let shift = xs[0];
        let dmean = xs.iter().map(|x| x - shift).sum::<f64>() / n as f64;
        let mean = shift + dmean;
        if n == 1 {
            return Self { mean, stderr: 0.0, n };
        }
        let ss: f64 = xs.iter().map(|x| (x - shift - dmean).powi(2)).sum();
        let var = ss / (n - 1) as f64;
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            n,
        }
    }

    pub fn z_against(&self, other: &MeanEstimate) -> f64 {
        let se = self.combined_stderr(other);
        let d = (self.mean - other.mean).abs();
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }

    pub fn combined_stderr(&self, other: &MeanEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

/// Relative L1 distance `sum |a-b| / sum |a|`.
pub fn relative_l1(reference: &[f64], other: &[f64]) -> f64 {
    let num: f64 = reference
        .iter()
        .zip(other)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let den: f64 = reference.iter().map(|a| a.abs()).sum();
    num / den
}
