//! Kraskov-Stoegbauer-Grassberger k-nearest-neighbour estimator (algorithm 1).
//!
//! ```
//! use mimcap::ksg::{ksg_estimate, KsgConfig};
//! use ndarray::Array2;
//!
//! let x = Array2::from_shape_fn((200, 1), |(i, _)| (i as f64 * 0.37).sin());
//! let y = Array2::from_shape_fn((200, 1), |(i, _)| (i as f64 * 1.91).cos());
//! let est = ksg_estimate(x.view(), y.view(), &KsgConfig::default()).unwrap();
//! assert!(est.is_finite());
//! ```

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KsgConfig {
    pub k: usize,
}

impl Default for KsgConfig {
    fn default() -> Self {
        Self { k: 3 }
    }
}

/// Digamma function for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidInput(format!("digamma needs x > 0, got {x}")));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // ln x - 1/(2x) - sum B_2k / (2k x^2k)
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    Ok(acc + x.ln() - 0.5 / x - series)
}

fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (u, v)| m.max((u - v).abs()))
}

/// KSG estimate in nats: `psi(k) + psi(N) - mean[psi(n_x + 1) + psi(n_y + 1)]`.
///
/// Neighbourhoods use the max-norm over the concatenated `(x, y)` space;
/// marginal counts are strict (`< eps`). No clamping at zero.
pub fn ksg_estimate<F: Scalar>(x: ArrayView2<F>, y: ArrayView2<F>, cfg: &KsgConfig) -> Result<f64> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Shape(format!("x has {n} rows, y has {}", y.nrows())));
    }
    if cfg.k == 0 || n < cfg.k + 1 {
        return Err(Error::InvalidInput(format!(
            "need k >= 1 and at least k + 1 samples (k = {}, n = {n})",
            cfg.k
        )));
    }
    let xs: Vec<Vec<f64>> = x.outer_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let ys: Vec<Vec<f64>> = y.outer_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    if xs.iter().chain(&ys).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("KSG input".into()));
    }
    if (1..n).all(|i| xs[i] == xs[0] && ys[i] == ys[0]) {
        return Err(Error::InvalidInput("all samples are identical".into()));
    }
    let k = cfg.k;
    let psi_sum: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut nearest = vec![f64::INFINITY; k];
            let mut dx = vec![0.0; n];
            let mut dy = vec![0.0; n];
            for j in 0..n {
                if j == i {
                    continue;
                }
                dx[j] = max_dist(&xs[i], &xs[j]);
                dy[j] = max_dist(&ys[i], &ys[j]);
                let d = dx[j].max(dy[j]);
                if d < nearest[k - 1] {
                    let pos = nearest.partition_point(|&v| v <= d);
                    nearest.insert(pos, d);
                    nearest.pop();
                }
            }
            let eps = nearest[k - 1];
            let nx = (0..n).filter(|&j| j != i && dx[j] < eps).count();
            let ny = (0..n).filter(|&j| j != i && dy[j] < eps).count();
            digamma(nx as f64 + 1.0).expect("positive") + digamma(ny as f64 + 1.0).expect("positive")
        })
        .sum();
    Ok(digamma(k as f64)? + digamma(n as f64)? - psi_sum / n as f64)
}
