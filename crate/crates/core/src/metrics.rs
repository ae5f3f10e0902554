//! Error metrics over a support mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Scalar, Volume};

fn check<T: Scalar, U: Scalar>(est: &Volume<T>, reference: &Volume<T>, mask: &Volume<U>) -> Result<()> {
    if est.shape() != reference.shape() || est.shape() != mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {}, reference {}, mask {}",
            est.shape(),
            reference.shape(),
            mask.shape()
        )));
    }
    Ok(())
}

/// `||(est - ref) m|| / ||ref m||` with `m` the mask (nonzero = inside).
pub fn nrmse<T: Scalar>(est: &Volume<T>, reference: &Volume<T>, mask: &Volume<f64>) -> Result<f64> {
    check(est, reference, mask)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((e, r), m) in est.data().iter().zip(reference.data()).zip(mask.data()) {
        if *m != 0.0 {
            num += (*e - *r).norm_sqr() * m * m;
            den += r.norm_sqr() * m * m;
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("reference has zero norm on the mask"));
    }
    Ok((num / den).sqrt())
}

/// `|est - ref| / |ref|` at masked voxels with a nonzero reference.
pub fn relative_errors<T: Scalar>(est: &Volume<T>, reference: &Volume<T>, mask: &Volume<f64>) -> Result<Vec<f64>> {
    check(est, reference, mask)?;
    Ok(est
        .data()
        .iter()
        .zip(reference.data())
        .zip(mask.data())
        .filter(|((_, r), m)| **m != 0.0 && r.norm_sqr() > 0.0)
        .map(|((e, r), _)| ((*e - *r).norm_sqr() / r.norm_sqr()).sqrt())
        .collect())
}

/// Box-plot statistics: quartiles by linear interpolation, whiskers at the
/// most extreme points within 1.5 IQR of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub count: usize,
    pub min: f64,
    pub whisker_low: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_high: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("no values to summarize"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("summary input".into()));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let whisker_low = *s.iter().find(|&&v| v >= lo_fence).unwrap_or(&s[0]);
        let whisker_high = *s.iter().rev().find(|&&v| v <= hi_fence).unwrap_or(&s[s.len() - 1]);
        Ok(Self {
            count: s.len(),
            min: s[0],
            whisker_low,
            q1,
            median,
            q3,
            whisker_high,
            max: s[s.len() - 1],
            mean: s.iter().sum::<f64>() / s.len() as f64,
        })
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
