//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use std::io::Write;

use mimcap::estimators::GaussianPair;

/// Order-1/2 Renyi divergence between a standard bivariate Gaussian pair with
/// correlation `rho` and the product of its marginals, `-2 ln int sqrt(p q)`,
/// by the midpoint rule on `[-12, 12]^2`.
pub fn renyi_half_quadrature(rho: f64) -> f64 {
    let pair = GaussianPair::new(rho).unwrap();
    let h = 0.01;
    let half = 12.0;
    let n = (2.0 * half / h) as usize;
    let mut total = 0.0;
    for i in 0..n {
        let x = -half + (i as f64 + 0.5) * h;
        let mut row = 0.0;
        for j in 0..n {
            let y = -half + (j as f64 + 0.5) * h;
            // sqrt(p q) = q * exp(lr / 2), q the product density
            let q = (-(x * x + y * y) / 2.0).exp() / (2.0 * std::f64::consts::PI);
            row += q * (0.5 * pair.log_ratio(x, y)).exp();
        }
        total += row;
    }
    -2.0 * (total * h * h).ln()
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// One line on stdout that bypasses the test harness's capture.
pub fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
