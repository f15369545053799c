//! Small statistical helpers shared by diagnostics and test oracles.

/// One-sample Kolmogorov-Smirnov statistic against a cdf.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((((i + 1) as f64) / n - f).abs());
        d = d.max((f - (i as f64) / n).abs());
    }
    d
}

/// Asymptotic Kolmogorov distribution tail: P(sqrt(n) D > z).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let z = d * (n as f64).sqrt();
    if z < 1e-8 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * (k as f64) * (k as f64) * z * z).exp();
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Pearson chi-square statistic for observed counts vs expected counts.
/// Returns (statistic, degrees of freedom) after pooling cells with expected
/// count below 5 into their neighbour.
pub fn chi2_gof(observed: &[f64], expected: &[f64]) -> (f64, usize) {
    assert_eq!(observed.len(), expected.len());
    let mut obs_pooled = Vec::new();
    let mut exp_pooled = Vec::new();
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        acc_o += o;
        acc_e += e;
        if acc_e >= 5.0 {
            obs_pooled.push(acc_o);
            exp_pooled.push(acc_e);
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 {
        if let (Some(o), Some(e)) = (obs_pooled.last_mut(), exp_pooled.last_mut()) {
            *o += acc_o;
            *e += acc_e;
        } else {
            obs_pooled.push(acc_o);
            exp_pooled.push(acc_e);
        }
    }
    let stat: f64 = obs_pooled
        .iter()
        .zip(&exp_pooled)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    (stat, obs_pooled.len().saturating_sub(1))
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(stat: f64, dof: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    1.0 - dist.cdf(stat)
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Empirical quantile by linear interpolation on sorted order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ks_uniform_sample() {
        // Deterministic stratified "sample" from U(0,1) has tiny KS distance.
        let n = 1000;
        let sample: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&sample, |x| x.clamp(0.0, 1.0));
        assert!(d < 1.0 / n as f64 + 1e-12, "{d}");
        assert!(ks_pvalue(d, n) > 0.99);
    }

    #[test]
    fn ks_detects_wrong_cdf() {
        let n = 1000;
        let sample: Vec<f64> = (0..n).map(|i| ((i as f64 + 0.5) / n as f64).powi(2)).collect();
        let d = ks_statistic(&sample, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, n) < 1e-6);
    }

    #[test]
    fn chi2_exact_match_is_zero() {
        let (stat, dof) = chi2_gof(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0]);
        assert_eq!(stat, 0.0);
        assert_eq!(dof, 2);
    }

    #[test]
    fn chi2_sf_known_value() {
        // P(chi2_3 > 5.13) ~ 0.1625
        assert_relative_eq!(chi2_sf(5.13, 3), 0.1625, epsilon = 2e-3);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_relative_eq!(quantile(&xs, 0.5), 3.0);
        assert_relative_eq!(quantile(&xs, 0.0), 1.0);
        assert_relative_eq!(quantile(&xs, 1.0), 5.0);
        assert_relative_eq!(quantile(&xs, 0.25), 2.0);
    }
}
