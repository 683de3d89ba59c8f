//! Reference distribution functions, the sample-correlation density on the
//! complement sphere, and the concentration bound for the cross-validated
//! variance estimator.
//!
//! Standard CDFs and quantiles are delegated to `statrs`; the pieces specific
//! to this crate (correlation density, tail bound, Kolmogorov-Smirnov
//! helpers) are implemented here.

use statrs::distribution::{Beta, ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Which tail of a null distribution a p-value is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Upper,
    Lower,
    TwoSided,
}

impl TailSide {
    /// p-value from a CDF value `f` under this tail convention.
    pub fn p_value(self, f: f64) -> f64 {
        match self {
            TailSide::Upper => 1.0 - f,
            TailSide::Lower => f,
            TailSide::TwoSided => (2.0 * f.min(1.0 - f)).min(1.0),
        }
    }
}

fn check_df(df: f64, what: &str) -> Result<()> {
    if !(df.is_finite() && df > 0.0) {
        return Err(Error::domain(format!("{what} must be positive, got {df}")));
    }
    Ok(())
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("p must lie in (0,1), got {p}")));
    }
    Ok(())
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Upper tail of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

pub fn chi2_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df, "chi-squared df")?;
    if x < 0.0 {
        return Err(Error::domain(format!("chi-squared x must be >= 0, got {x}")));
    }
    Ok(ChiSquared::new(df).expect("validated df").cdf(x))
}

/// Upper tail of the chi-squared distribution.
pub fn chi2_sf(x: f64, df: f64) -> Result<f64> {
    check_df(df, "chi-squared df")?;
    if x < 0.0 {
        return Err(Error::domain(format!("chi-squared x must be >= 0, got {x}")));
    }
    Ok(ChiSquared::new(df).expect("validated df").sf(x))
}

pub fn chi2_quantile(p: f64, df: f64) -> Result<f64> {
    check_df(df, "chi-squared df")?;
    check_prob(p)?;
    Ok(ChiSquared::new(df).expect("validated df").inverse_cdf(p))
}

pub fn f_cdf(x: f64, df1: f64, df2: f64) -> Result<f64> {
    check_df(df1, "F df1")?;
    check_df(df2, "F df2")?;
    if x < 0.0 {
        return Err(Error::domain(format!("F x must be >= 0, got {x}")));
    }
    Ok(FisherSnedecor::new(df1, df2).expect("validated dfs").cdf(x))
}

/// Upper tail of the F distribution.
pub fn f_sf(x: f64, df1: f64, df2: f64) -> Result<f64> {
    check_df(df1, "F df1")?;
    check_df(df2, "F df2")?;
    if x < 0.0 {
        return Err(Error::domain(format!("F x must be >= 0, got {x}")));
    }
    Ok(FisherSnedecor::new(df1, df2).expect("validated dfs").sf(x))
}

pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df, "t df")?;
    Ok(StudentsT::new(0.0, 1.0, df).expect("validated df").cdf(x))
}

/// Density of the sample correlation coefficient of two independent
/// standard normal samples of size `m`, at `r` in (-1, 1):
/// `Gamma(m/2) / (sqrt(pi) Gamma((m-1)/2)) * (1 - r^2)^{(m-3)/2}`.
///
/// Evaluated in log space so the normalising constant does not overflow for
/// large `m`.
pub fn fisher_corr_density(r: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::domain(format!("correlation density needs m >= 2, got {m}")));
    }
    if !(r > -1.0 && r < 1.0) {
        return Err(Error::domain(format!("r must lie in (-1,1), got {r}")));
    }
    let mf = m as f64;
    let ln_c = ln_gamma(mf / 2.0) - 0.5 * std::f64::consts::PI.ln() - ln_gamma((mf - 1.0) / 2.0);
    let ln_kernel = 0.5 * (mf - 3.0) * (1.0 - r * r).ln();
    Ok((ln_c + ln_kernel).exp())
}

/// CDF companion of [`fisher_corr_density`]: `(1 + R)/2` is
/// `Beta((m-1)/2, (m-1)/2)`.
pub fn fisher_corr_cdf(r: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::domain(format!("correlation CDF needs m >= 2, got {m}")));
    }
    if r <= -1.0 {
        return Ok(0.0);
    }
    if r >= 1.0 {
        return Ok(1.0);
    }
    let a = (m as f64 - 1.0) / 2.0;
    Ok(Beta::new(a, a).expect("validated shape").cdf((1.0 + r) / 2.0))
}

/// Chernoff bound on `pr(|X/nu - 1| > delta)` for `X ~ chi-squared(nu)`,
/// clamped to `[0, 1]`: `2 exp{-(nu/2) [delta - log(1 + delta)]}`.
pub fn mrcv_tail_bound(nu: usize, delta: f64) -> Result<f64> {
    if nu < 1 {
        return Err(Error::domain("nu must be >= 1".to_string()));
    }
    if !(delta > 0.0) {
        return Err(Error::domain(format!("delta must be > 0, got {delta}")));
    }
    let nu = nu as f64;
    let exponent = -0.5 * nu * (delta - delta.ln_1p());
    Ok((2.0 * exponent.exp()).min(1.0))
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
/// The sample is sorted in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty());
    samples.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN samples"));
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample adjustment.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn chi2_closed_forms() {
        // df = 2 is exponential: F(x) = 1 - exp(-x/2).
        let x = 2.0 * 2.0f64.ln();
        assert_abs_diff_eq!(chi2_cdf(x, 2.0).unwrap(), 0.5, epsilon = 1e-12);
        for &x in &[0.1, 1.0, 3.0, 10.0] {
            assert_abs_diff_eq!(
                chi2_cdf(x, 2.0).unwrap(),
                1.0 - (-x / 2.0f64).exp(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(normal_cdf(1.0) + normal_cdf(-1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chi2_quantile_round_trip() {
        for &x in &[0.5, 5.0, 20.0] {
            let p = chi2_cdf(x, 7.0).unwrap();
            assert_abs_diff_eq!(chi2_quantile(p, 7.0).unwrap(), x, epsilon = 1e-8);
        }
    }

    #[test]
    fn quantile_cdf_identity_large_df() {
        for &df in &[100.0, 1000.0, 10000.0] {
            for &p in &[0.01, 0.25, 0.5, 0.9, 0.999] {
                let q = chi2_quantile(p, df).unwrap();
                assert_abs_diff_eq!(chi2_cdf(q, df).unwrap(), p, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn cdfs_are_monotone_and_bounded() {
        let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.25).collect();
        let mut prev = -1.0;
        for &x in &grid {
            let f = chi2_cdf(x, 13.0).unwrap();
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev);
            prev = f;
        }
        let mut prev = -1.0;
        for &x in &grid {
            let f = f_cdf(x, 4.0, 27.0).unwrap();
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev);
            prev = f;
        }
        let mut prev = -1.0;
        for i in -50..50 {
            let f = t_cdf(i as f64 * 0.2, 9.0).unwrap();
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn domain_errors() {
        assert!(chi2_cdf(1.0, 0.0).is_err());
        assert!(chi2_cdf(-1.0, 2.0).is_err());
        assert!(chi2_quantile(0.0, 2.0).is_err());
        assert!(chi2_quantile(1.0, 2.0).is_err());
        assert!(fisher_corr_density(1.5, 5).is_err());
        assert!(fisher_corr_density(0.0, 1).is_err());
        assert!(mrcv_tail_bound(0, 0.5).is_err());
        assert!(mrcv_tail_bound(5, 0.0).is_err());
    }

    #[test]
    fn corr_density_uniform_at_m3() {
        for &r in &[-0.9, -0.3, 0.0, 0.4, 0.99] {
            assert_abs_diff_eq!(fisher_corr_density(r, 3).unwrap(), 0.5, epsilon = 1e-12);
        }
    }

    /// Simpson-rule quadrature oracle over (-1, 1).
    fn simpson_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut s = f(a) + f(b);
        for i in 1..panels {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn corr_density_normalises() {
        let total = simpson_integral(
            |r| fisher_corr_density(r, 50).unwrap(),
            -1.0 + 1e-9,
            1.0 - 1e-9,
            20000,
        );
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn corr_density_variance_near_reciprocal_m() {
        let m = 100;
        let var = simpson_integral(
            |r| r * r * fisher_corr_density(r, m).unwrap(),
            -1.0 + 1e-9,
            1.0 - 1e-9,
            20000,
        );
        let target = 1.0 / m as f64;
        assert!((var - target).abs() / target < 0.05, "var = {var}");
    }

    #[test]
    fn corr_density_gaussian_approximation() {
        // (1 - r^2)^{(m-3)/2} ~ exp(-m r^2 / 2) near the origin. The error
        // is driven by m r^4, so for m above 200 the admissible |r| range
        // shrinks like m^{-1/2}; the statistic itself lives on that scale.
        for &m in &[200usize, 500, 1000, 5000] {
            let scale = (200.0 / m as f64).sqrt();
            for &r0 in &[0.0, 0.05, 0.1, 0.15, 0.19] {
                let r = r0 * scale;
                let exact = fisher_corr_density(r, m).unwrap();
                let mf = m as f64;
                let approx = (mf / (2.0 * std::f64::consts::PI)).sqrt()
                    * (-mf * r * r / 2.0).exp();
                assert!(
                    (exact / approx - 1.0).abs() < 0.02,
                    "m = {m}, r = {r}: exact {exact}, approx {approx}"
                );
            }
        }
    }

    #[test]
    fn corr_density_no_overflow_large_m() {
        let v = fisher_corr_density(0.01, 2000).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn corr_cdf_matches_density_integral() {
        for &r in &[-0.5, 0.0, 0.3] {
            let num = simpson_integral(
                |s| fisher_corr_density(s, 20).unwrap(),
                -1.0 + 1e-9,
                r,
                4000,
            );
            assert_abs_diff_eq!(fisher_corr_cdf(r, 20).unwrap(), num, epsilon = 1e-6);
        }
    }

    #[test]
    fn tail_bound_monotone_and_vanishing() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let delta = i as f64 * 0.05;
            let b = mrcv_tail_bound(50, delta).unwrap();
            assert!((0.0..=1.0).contains(&b));
            assert!(b <= prev + 1e-15, "not nonincreasing at delta = {delta}");
            prev = b;
        }
        assert!(mrcv_tail_bound(50, 1e6).unwrap() < 1e-300);
    }

    #[test]
    fn tail_bound_dominates_monte_carlo_exceedance() {
        // 1e5 chi-squared(50) draws as sums of squared normals.
        let nu = 50usize;
        let delta = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(2024_0810);
        let reps = 100_000;
        let mut exceed = 0usize;
        for _ in 0..reps {
            let mut s = 0.0;
            for _ in 0..nu {
                let z: f64 = StandardNormal.sample(&mut rng);
                s += z * z;
            }
            if (s / nu as f64 - 1.0).abs() > delta {
                exceed += 1;
            }
        }
        let freq = exceed as f64 / reps as f64;
        let bound = mrcv_tail_bound(nu, delta).unwrap();
        assert!(
            freq <= bound,
            "frequency {freq} exceeds bound {bound}"
        );
    }

    #[test]
    fn ks_uniform_null_sanity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut u: Vec<f64> = (0..2000).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let d = ks_statistic(&mut u, |x| x.clamp(0.0, 1.0));
        let p = ks_p_value(d, 2000);
        assert!(p > 0.01, "KS p = {p} for genuinely uniform draws");
    }

    #[test]
    fn tail_side_p_values() {
        assert_abs_diff_eq!(TailSide::Upper.p_value(0.9), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(TailSide::Lower.p_value(0.9), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(TailSide::TwoSided.p_value(0.9), 0.2, epsilon = 1e-15);
    }
}
