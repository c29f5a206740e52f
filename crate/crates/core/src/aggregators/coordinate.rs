//! Mean, coordinate-wise trimmed mean and coordinate-wise median.

use crate::error::{FrlError, Result};
use crate::vector::{common_dim, mean, ParamVector};

pub fn fedavg(updates: &[ParamVector]) -> Result<ParamVector> {
    mean(updates)
}

fn column(updates: &[ParamVector], k: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(updates.iter().map(|u| u[k]));
    buf.sort_by(f64::total_cmp);
}

/// Per dimension: drop the `c` largest and `c` smallest values, average the rest.
pub fn trimmed_mean(updates: &[ParamVector], c: usize) -> Result<ParamVector> {
    let d = common_dim(updates)?;
    let n = updates.len();
    if n <= 2 * c {
        return Err(FrlError::TrimTooLarge { n, c });
    }
    let mut buf = Vec::with_capacity(n);
    let kept = (n - 2 * c) as f64;
    let out = (0..d)
        .map(|k| {
            column(updates, k, &mut buf);
            buf[c..n - c].iter().sum::<f64>() / kept
        })
        .collect::<Vec<_>>();
    Ok(ParamVector(out))
}

/// Per-dimension median; an even count takes the midpoint of the two
/// central values.
pub fn coord_median(updates: &[ParamVector]) -> Result<ParamVector> {
    let d = common_dim(updates)?;
    let n = updates.len();
    let mut buf = Vec::with_capacity(n);
    let out = (0..d)
        .map(|k| {
            column(updates, k, &mut buf);
            if n % 2 == 1 {
                buf[n / 2]
            } else {
                0.5 * (buf[n / 2 - 1] + buf[n / 2])
            }
        })
        .collect::<Vec<_>>();
    Ok(ParamVector(out))
}
