use ndarray::{Array1, Array2, Axis};

use super::filter::{lowpass, CUTOFF, TRAJECTORY_RATE};
use crate::error::{Error, Result};

/// Floor on the per-channel standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel statistics removed by [`normalize_sentence`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Zero mean and unit (population) variance per channel. Channels whose
/// spread is below [`STD_FLOOR`] become all zeros.
pub fn normalize_sentence(x: &Array2<f64>) -> Result<(Array2<f64>, ChannelStats)> {
    if x.nrows() < 2 {
        return Err(Error::Data(format!(
            "normalization needs at least two frames, got {}",
            x.nrows()
        )));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
    let out = (x - &mean) / &std;
    Ok((out, ChannelStats { mean, std }))
}

/// Low-passes every column at the trajectory cut-off.
pub fn lowpass_channels(x: &Array2<f64>, fs: f64, fc: f64) -> Result<Array2<f64>> {
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let y = lowpass(&col.to_vec(), fs, fc)?;
        col.assign(&Array1::from(y));
    }
    Ok(out)
}

/// Low-pass filtering at 25 Hz followed by sentence-wise normalization.
pub fn preprocess_trajectory(x: &Array2<f64>) -> Result<Array2<f64>> {
    let filtered = lowpass_channels(x, TRAJECTORY_RATE, CUTOFF)?;
    Ok(normalize_sentence(&filtered)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_channel_is_zeroed() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let (y, s) = normalize_sentence(&x).unwrap();
        assert_eq!(y.column(1).to_vec(), vec![0.0; 3]);
        assert_eq!(s.mean[0], 2.0);
        assert!((y.column(0).mapv(|v| v * v).sum() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn idempotent() {
        let x = array![[1.0, -5.0], [2.5, 3.0], [3.0, 0.25], [-1.0, 4.0]];
        let (a, _) = normalize_sentence(&x).unwrap();
        let (b, _) = normalize_sentence(&a).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn single_frame_rejected() {
        assert!(normalize_sentence(&array![[1.0, 2.0]]).is_err());
    }
}
