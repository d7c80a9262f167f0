//! Welch's two-sample t-test and the per-phoneme duration comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::metrics::{mean, sample_std};
use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Two-sided Welch t-test of unequal variances.
///
/// When both samples have zero variance the statistic is undefined: equal
/// means give `t = 0, p = 1`, different means `t = ±inf, p = 0`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Eval(format!(
            "t-test needs at least two samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let va = sample_std(a).powi(2) / a.len() as f64;
    let vb = sample_std(b).powi(2) / b.len() as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        let df = (a.len() + b.len() - 2) as f64;
        return Ok(if ma == mb {
            WelchResult { t: 0.0, df, p: 1.0 }
        } else {
            WelchResult {
                t: (ma - mb).signum() * f64::INFINITY,
                df,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist =
        StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Eval(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}

/// Comparison of ground-truth and predicted durations of one phoneme.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeSignificance {
    pub phoneme: usize,
    pub n_gt: usize,
    pub n_pred: usize,
    pub mean_gt: f64,
    pub mean_pred: f64,
    pub test: WelchResult,
    /// `p < 0.05`.
    pub significant: bool,
}

/// Welch tests per phoneme; phonemes with fewer than two samples in either
/// group are skipped.
pub fn duration_significance(
    gt: &BTreeMap<usize, Vec<f64>>,
    pred: &BTreeMap<usize, Vec<f64>>,
) -> Result<Vec<PhonemeSignificance>> {
    let mut out = Vec::new();
    for (&phoneme, g) in gt {
        let Some(p) = pred.get(&phoneme) else {
            continue;
        };
        if g.len() < 2 || p.len() < 2 {
            log::warn!("phoneme {phoneme}: too few samples for a t-test");
            continue;
        }
        let test = welch_t_test(g, p)?;
        out.push(PhonemeSignificance {
            phoneme,
            n_gt: g.len(),
            n_pred: p.len(),
            mean_gt: mean(g),
            mean_pred: mean(p),
            test,
            significant: test.p < SIGNIFICANCE_LEVEL,
        });
    }
    Ok(out)
}

pub const SIGNIFICANCE_HEADER: &str = "phoneme,n_gt,n_pred,mean_gt,mean_pred,t,df,p,significant";

pub fn significance_csv(rows: &[PhonemeSignificance]) -> String {
    let mut out = String::new();
    writeln!(out, "{SIGNIFICANCE_HEADER}").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.phoneme,
            r.n_gt,
            r.n_pred,
            r.mean_gt,
            r.mean_pred,
            r.test.t,
            r.test.df,
            r.test.p,
            r.significant
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [2.0, 3.0, 5.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variance() {
        let r = welch_t_test(&[3.0, 3.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = welch_t_test(&[3.0, 3.0], &[4.0, 4.0]).unwrap();
        assert_eq!(r.p, 0.0);
        assert_eq!(r.t, f64::NEG_INFINITY);
    }

    #[test]
    fn too_few_samples() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }
}
