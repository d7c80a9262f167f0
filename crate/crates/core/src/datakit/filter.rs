//! Zero-phase 4th-order Butterworth low-pass filtering.

use crate::error::{Error, Result};

/// Sampling rate of articulatory trajectories (Hz).
pub const TRAJECTORY_RATE: f64 = 250.0;
/// Low-pass cut-off applied to articulatory trajectories (Hz).
pub const CUTOFF: f64 = 25.0;

/// Quality factors of the two second-order sections of a 4th-order
/// Butterworth filter: `1 / (2 cos(pi/8))` and `1 / (2 cos(3 pi/8))`.
const SECTION_Q: [f64; 2] = [1.306_562_964_876_376_6, 0.541_196_100_146_197];

/// Padding length on each side before the forward-backward pass.
const PAD: usize = 15;

#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Bilinear-transform low-pass section with unit DC gain.
    fn lowpass(k: f64, q: f64) -> Self {
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
        }
    }

    /// Runs the section over `x` in place (transposed direct form II),
    /// starting from the steady state of a constant input `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&c) = x.first() else { return };
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let mut z2 = (self.b[2] - self.a[1] * gain) * c;
        let mut z1 = (self.b[1] - self.a[0] * gain) * c + z2;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * y + z2;
            z2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

fn sections(fs: f64, fc: f64) -> Result<[Biquad; 2]> {
    if !(fs > 0.0 && fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::config(format!(
            "cut-off {fc} Hz must lie strictly between 0 and half the sampling rate {fs} Hz"
        )));
    }
    let k = (std::f64::consts::PI * fc / fs).tan();
    Ok(SECTION_Q.map(|q| Biquad::lowpass(k, q)))
}

/// Forward-backward 4th-order Butterworth low-pass of one channel.
///
/// The signal is extended on both sides by odd reflection (up to 15
/// samples) and each pass starts from the steady state of its first
/// sample, so constants pass unchanged and there is no phase shift.
pub fn lowpass(x: &[f64], fs: f64, fc: f64) -> Result<Vec<f64>> {
    let secs = sections(fs, fc)?;
    if x.len() < 2 {
        return Ok(x.to_vec());
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("low-pass input".into()));
    }
    let n = x.len();
    let pad = PAD.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    for s in &secs {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in &secs {
        s.run(&mut ext);
    }
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_passes() {
        let y = lowpass(&[3.25; 40], 250.0, 25.0).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-9));
    }

    #[test]
    fn bad_cutoff_rejected() {
        assert!(lowpass(&[1.0, 2.0], 250.0, 125.0).is_err());
        assert!(lowpass(&[1.0, 2.0], 250.0, 0.0).is_err());
    }

    #[test]
    fn short_inputs() {
        assert_eq!(lowpass(&[2.0], 250.0, 25.0).unwrap(), vec![2.0]);
        assert_eq!(lowpass(&[4.0, 4.0], 250.0, 25.0).unwrap().len(), 2);
    }
}
