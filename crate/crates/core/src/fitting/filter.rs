//! One-euro low-pass filter with speed-adaptive cutoff.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneEuroParams {
    pub min_cutoff: f64,
    pub beta: f64,
    pub d_cutoff: f64,
}

impl Default for OneEuroParams {
    fn default() -> Self {
        Self {
            min_cutoff: 1.0,
            beta: 0.007,
            d_cutoff: 1.0,
        }
    }
}

fn alpha(cutoff: f64, dt: f64) -> f64 {
    let tau = 1.0 / (2.0 * std::f64::consts::PI * cutoff);
    1.0 / (1.0 + tau / dt)
}

/// State of one scalar channel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OneEuro {
    last: Option<(f64, f64, f64)>, // (time, filtered value, filtered derivative)
}

impl OneEuro {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.last = None;
    }

    pub fn filter(&mut self, params: &OneEuroParams, value: f64, time: f64) -> Result<f64> {
        let Some((t0, x0, dx0)) = self.last else {
            self.last = Some((time, value, 0.0));
            return Ok(value);
        };
        if !(time > t0) {
            return Err(Error::NonMonotoneTimestamp { prev: t0, got: time });
        }
        let dt = time - t0;
        let dx = (value - x0) / dt;
        let a_d = alpha(params.d_cutoff, dt);
        let edx = dx0 + a_d * (dx - dx0);
        let cutoff = params.min_cutoff + params.beta * edx.abs();
        let a = alpha(cutoff, dt);
        let x = x0 + a * (value - x0);
        self.last = Some((time, x, edx));
        Ok(x)
    }
}

/// A bank of independent channels updated together.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub params: OneEuroParams,
    channels: Vec<OneEuro>,
    last_time: Option<f64>,
}

impl FilterBank {
    pub fn new(params: OneEuroParams, n: usize) -> Self {
        Self {
            params,
            channels: vec![OneEuro::new(); n],
            last_time: None,
        }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Filters `values` in place; a channel whose `mask` entry is false is
    /// reset and passed through.
    pub fn apply(&mut self, values: &mut [f64], mask: Option<&[bool]>, time: f64) -> Result<()> {
        assert_eq!(values.len(), self.channels.len(), "channel count");
        if let Some(t0) = self.last_time {
            if !(time > t0) {
                return Err(Error::NonMonotoneTimestamp { prev: t0, got: time });
            }
        }
        self.last_time = Some(time);
        for (i, (v, ch)) in values.iter_mut().zip(self.channels.iter_mut()).enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                ch.reset();
                continue;
            }
            *v = ch.filter(&self.params, *v, time)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_passes_unchanged() {
        let p = OneEuroParams::default();
        let mut f = OneEuro::new();
        for i in 0..100 {
            assert_eq!(f.filter(&p, 3.25, i as f64 / 30.0).unwrap(), 3.25);
        }
    }

    #[test]
    fn step_converges_without_overshoot() {
        let p = OneEuroParams::default();
        let mut f = OneEuro::new();
        f.filter(&p, 0.0, 0.0).unwrap();
        let mut prev = 0.0;
        for i in 1..300 {
            let y = f.filter(&p, 1.0, i as f64 / 30.0).unwrap();
            assert!(y >= prev && y <= 1.0);
            prev = y;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn non_monotone_time_is_rejected() {
        let p = OneEuroParams::default();
        let mut f = OneEuro::new();
        f.filter(&p, 0.0, 1.0).unwrap();
        assert!(matches!(f.filter(&p, 0.0, 1.0), Err(Error::NonMonotoneTimestamp { .. })));
        let mut bank = FilterBank::new(p, 2);
        bank.apply(&mut [0.0, 1.0], None, 0.5).unwrap();
        assert!(bank.apply(&mut [0.0, 1.0], None, 0.4).is_err());
    }

    /// Steady-state amplitude of a sine after filtering, against the
    /// first-order low-pass response `1 / sqrt(1 + (f / fc)^2)`.
    fn attenuation(freq: f64) -> f64 {
        let p = OneEuroParams {
            beta: 0.0,
            ..OneEuroParams::default()
        };
        let mut f = OneEuro::new();
        let fps = 240.0;
        let mut peak: f64 = 0.0;
        for i in 0..(fps as usize * 20) {
            let t = i as f64 / fps;
            let y = f.filter(&p, (std::f64::consts::TAU * freq * t).sin(), t).unwrap();
            if t > 10.0 {
                peak = peak.max(y.abs());
            }
        }
        peak
    }

    #[test]
    fn higher_frequencies_are_attenuated_more() {
        let (lo, hi) = (attenuation(0.2), attenuation(5.0));
        assert!(hi < lo);
        // discrete first-order filter tracks the analog response closely at 240 Hz
        for (f, a) in [(0.2, lo), (5.0, hi)] {
            let analog = 1.0 / (1.0 + (f / 1.0f64).powi(2)).sqrt();
            assert!((a - analog).abs() < 0.05, "{f} Hz: {a} vs {analog}");
        }
    }

    #[test]
    fn bank_is_deterministic() {
        let run = || {
            let mut b = FilterBank::new(OneEuroParams::default(), 3);
            let mut out = Vec::new();
            for i in 0..50 {
                let mut v = [(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64];
                b.apply(&mut v, None, i as f64 / 30.0).unwrap();
                out.extend(v.map(f64::to_bits));
            }
            out
        };
        assert_eq!(run(), run());
    }
}
