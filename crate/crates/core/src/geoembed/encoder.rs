use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Unit direction vectors at 0°, 120° and 240°.
pub const DIRECTIONS: [(f64, f64); 3] = [
    (1.0, 0.0),
    (-0.5, 0.866_025_403_784_438_6),
    (-0.5, -0.866_025_403_784_438_6),
];

/// Multi-scale sinusoidal location encoder settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocationEncoderSpec {
    pub scales: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for LocationEncoderSpec {
    fn default() -> Self {
        Self { scales: 16, lambda_min: 100.0, lambda_max: 1_000_000.0 }
    }
}

impl LocationEncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales < 2 {
            return Err(invalid("location encoder needs at least two scales"));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max && self.lambda_max.is_finite()) {
            return Err(invalid("location encoder needs 0 < lambda_min < lambda_max"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        6 * self.scales
    }

    /// Wavelengths spaced geometrically from `lambda_min` to `lambda_max`.
    pub fn wavelengths(&self) -> Vec<f64> {
        let ratio = self.lambda_max / self.lambda_min;
        (0..self.scales)
            .map(|s| self.lambda_min * ratio.powf(s as f64 / (self.scales - 1) as f64))
            .collect()
    }
}

/// Encodes planar positions as `[sin(⟨p, a_j⟩ / λ_s), cos(⟨p, a_j⟩ / λ_s)]`
/// for every scale `s` (outer) and direction `j` (inner).
#[derive(Debug, Clone, PartialEq)]
pub struct LocationEncoder {
    spec: LocationEncoderSpec,
    wavelengths: Vec<f64>,
}

impl LocationEncoder {
    pub fn new(spec: LocationEncoderSpec) -> Result<Self> {
        spec.validate()?;
        let wavelengths = spec.wavelengths();
        Ok(Self { spec, wavelengths })
    }

    pub fn spec(&self) -> &LocationEncoderSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn encode_into(&self, x: f64, y: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let mut k = 0;
        for &lambda in &self.wavelengths {
            for &(ax, ay) in &DIRECTIONS {
                let phase = (x * ax + y * ay) / lambda;
                let (s, c) = phase.sin_cos();
                out[k] = s;
                out[k + 1] = c;
                k += 2;
            }
        }
    }

    pub fn encode(&self, x: f64, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(x, y, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn encoder() -> LocationEncoder {
        LocationEncoder::new(LocationEncoderSpec::default()).unwrap()
    }

    #[test]
    fn origin_encodes_to_zero_sines_and_unit_cosines() {
        let r = encoder().encode(0.0, 0.0);
        assert_eq!(r.len(), 96);
        for pair in r.chunks_exact(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn wavelengths_span_the_configured_range() {
        let w = LocationEncoderSpec::default().wavelengths();
        assert!((w[0] - 100.0).abs() < 1e-9);
        assert!((w[15] - 1e6).abs() < 1e-3);
        for pair in w.windows(2) {
            assert!((pair[1] / pair[0] - w[1] / w[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_by_one_period_leaves_that_component_unchanged() {
        let enc = encoder();
        let lambdas = enc.spec().wavelengths();
        let p = (1234.5, -987.25);
        let (s, j) = (3usize, 1usize);
        let (ax, ay) = DIRECTIONS[j];
        let shift = TAU * lambdas[s];
        let q = (p.0 + shift * ax, p.1 + shift * ay);
        let rp = enc.encode(p.0, p.1);
        let rq = enc.encode(q.0, q.1);
        let k = 2 * (3 * s + j);
        // Direct evaluation of the closed form at both points.
        let phase_p = (p.0 * ax + p.1 * ay) / lambdas[s];
        assert!((rp[k] - phase_p.sin()).abs() < 1e-12);
        assert!((rq[k] - rp[k]).abs() < 1e-9);
        assert!((rq[k + 1] - rp[k + 1]).abs() < 1e-9);
        let changed = (0..rp.len()).filter(|&i| i != k && i != k + 1 && (rp[i] - rq[i]).abs() > 1e-6).count();
        assert!(changed > 0);
        // Other directions at the same scale see a non-period shift.
        let other = 2 * (3 * s + (j + 1) % 3);
        assert!((rp[other] - rq[other]).abs() > 1e-6 || (rp[other + 1] - rq[other + 1]).abs() > 1e-6);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = LocationEncoderSpec { scales: 1, ..Default::default() };
        assert!(LocationEncoder::new(bad).is_err());
        let bad = LocationEncoderSpec { lambda_min: 10.0, lambda_max: 10.0, ..Default::default() };
        assert!(LocationEncoder::new(bad).is_err());
    }
}
