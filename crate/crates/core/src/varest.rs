//! Refitted cross-validation estimators of the error variance, computed on a
//! leading fraction of the data with conservative screening.
//!
//! The data fraction is split into two halves; a screener runs on each half
//! and the variance is estimated on each half from the residual sum of
//! squares after regressing on the columns selected by the *other* half.
//! The plain estimator averages the two halves; the modified estimator
//! weights them by their residual degrees of freedom, which gives the
//! combined estimate an exact scaled chi-squared law conditional on the
//! screened sets containing the generating model.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, Design, Mat};
use crate::reduce::{ModelSubset, Screener};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarMethod {
    Rcv,
    Mrcv,
    Oracle,
}

/// A variance estimate together with its provenance.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceEstimate {
    pub sigma2_hat: f64,
    pub method: VarMethod,
    /// Residual degrees of freedom of the first half (its data regressed on
    /// the second half's selection).
    pub df1: usize,
    /// Residual degrees of freedom of the second half.
    pub df2: usize,
    pub nu: usize,
    /// The two screened sets, first and second half, when cross-fitted.
    pub screen_sets: Option<(ModelSubset, ModelSubset)>,
    pub gamma_frac: f64,
}

impl VarianceEstimate {
    /// Known-variance mode, used by property tests and oracle runs.
    pub fn oracle(sigma2: f64) -> VarianceEstimate {
        VarianceEstimate {
            sigma2_hat: sigma2,
            method: VarMethod::Oracle,
            df1: 0,
            df2: 0,
            nu: 0,
            screen_sets: None,
            gamma_frac: 1.0,
        }
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma2_hat.sqrt()
    }
}

/// Options for the cross-validated estimators.
#[derive(Debug, Clone)]
pub struct VarEstConfig {
    /// Fraction of observations used, in (0.5, 1].
    pub gamma_frac: f64,
    /// Include an intercept column in the cross-fitted regressions.
    pub intercept: bool,
    /// Shuffle rows (seeded) before taking the leading fraction. Off by
    /// default: simulated rows are exchangeable, and determinism is wanted.
    pub shuffle_seed: Option<u64>,
}

impl Default for VarEstConfig {
    fn default() -> Self {
        VarEstConfig {
            gamma_frac: 0.6,
            intercept: false,
            shuffle_seed: None,
        }
    }
}

/// Degrees-of-freedom-weighted combination of the two half estimates.
/// With equal degrees of freedom this reduces to the plain average, and is
/// computed as such so the two estimators agree exactly there.
pub fn mrcv_combine(s1: f64, df1: usize, s2: f64, df2: usize) -> f64 {
    if df1 == df2 {
        (s1 + s2) / 2.0
    } else {
        (df1 as f64 * s1 + df2 as f64 * s2) / (df1 + df2) as f64
    }
}

struct HalfEstimates {
    s1: f64,
    df1: usize,
    s2: f64,
    df2: usize,
    e1: ModelSubset,
    e2: ModelSubset,
}

fn residual_ss(x: &Mat, rows: &[usize], set: &ModelSubset, y: &[f64], intercept: bool) -> Result<f64> {
    if set.is_empty() && !intercept {
        return Ok(dot(y, y));
    }
    let sub = gather_rows(x, rows, set.indices());
    let design = Design::new(augment_intercept(sub, intercept), intercept)?;
    Ok(design.qr().residual_sq_norm(y))
}

fn augment_intercept(m: Mat, intercept: bool) -> Mat {
    if !intercept {
        return m;
    }
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; m.rows()]];
    for j in 0..m.cols() {
        cols.push(m.col(j).to_vec());
    }
    Mat::from_columns(&cols)
}

fn gather_rows(x: &Mat, rows: &[usize], cols: &[usize]) -> Mat {
    let mut out = Mat::zeros(rows.len(), cols.len());
    for (jj, &j) in cols.iter().enumerate() {
        let src = x.col(j);
        let dst = out.col_mut(jj);
        for (ii, &i) in rows.iter().enumerate() {
            dst[ii] = src[i];
        }
    }
    out
}

fn half_estimates(
    x: &Mat,
    y: &[f64],
    screener: &dyn Screener,
    cfg: &VarEstConfig,
) -> Result<HalfEstimates> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "variance estimator response",
            expected: n,
            got: y.len(),
        });
    }
    if !(cfg.gamma_frac > 0.5 && cfg.gamma_frac <= 1.0) {
        return Err(Error::domain(format!(
            "gamma_frac must lie in (0.5, 1], got {}",
            cfg.gamma_frac
        )));
    }
    let n_used = (cfg.gamma_frac * n as f64).floor() as usize;
    if n_used < 4 {
        return Err(Error::insufficient(format!(
            "need at least 4 usable observations, got {n_used}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = cfg.shuffle_seed {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let h1 = n_used / 2;
    let rows1 = &order[..h1];
    let rows2 = &order[h1..n_used];

    let all_cols: Vec<usize> = (0..x.cols()).collect();
    let x1 = gather_rows(x, rows1, &all_cols);
    let x2 = gather_rows(x, rows2, &all_cols);
    let y1: Vec<f64> = rows1.iter().map(|&i| y[i]).collect();
    let y2: Vec<f64> = rows2.iter().map(|&i| y[i]).collect();

    let e1 = screener.screen(&x1, &y1)?.selected;
    let e2 = screener.screen(&x2, &y2)?.selected;

    let adj = usize::from(cfg.intercept);
    let df1 = rows1.len() as isize - e2.len() as isize - adj as isize;
    let df2 = rows2.len() as isize - e1.len() as isize - adj as isize;
    if df1 < 1 || df2 < 1 {
        return Err(Error::insufficient(format!(
            "cross-fitted degrees of freedom must be >= 1, got {df1} and {df2}"
        )));
    }

    let rss1 = residual_ss(x, rows1, &e2, &y1, cfg.intercept)?;
    let rss2 = residual_ss(x, rows2, &e1, &y2, cfg.intercept)?;
    Ok(HalfEstimates {
        s1: rss1 / df1 as f64,
        df1: df1 as usize,
        s2: rss2 / df2 as f64,
        df2: df2 as usize,
        e1,
        e2,
    })
}

/// Plain refitted cross-validation: the average of the two half estimates.
pub fn rcv_variance(
    x: &Mat,
    y: &[f64],
    screener: &dyn Screener,
    cfg: &VarEstConfig,
) -> Result<VarianceEstimate> {
    let h = half_estimates(x, y, screener, cfg)?;
    Ok(VarianceEstimate {
        sigma2_hat: (h.s1 + h.s2) / 2.0,
        method: VarMethod::Rcv,
        df1: h.df1,
        df2: h.df2,
        nu: h.df1 + h.df2,
        screen_sets: Some((h.e1, h.e2)),
        gamma_frac: cfg.gamma_frac,
    })
}

/// Modified refitted cross-validation: the degrees-of-freedom-weighted
/// combination of the two half estimates.
pub fn mrcv_variance(
    x: &Mat,
    y: &[f64],
    screener: &dyn Screener,
    cfg: &VarEstConfig,
) -> Result<VarianceEstimate> {
    let h = half_estimates(x, y, screener, cfg)?;
    Ok(VarianceEstimate {
        sigma2_hat: mrcv_combine(h.s1, h.df1, h.s2, h.df2),
        method: VarMethod::Mrcv,
        df1: h.df1,
        df2: h.df2,
        nu: h.df1 + h.df2,
        screen_sets: Some((h.e1, h.e2)),
        gamma_frac: cfg.gamma_frac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce::FixedScreener;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn_mat(n: usize, p: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * p)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Mat::from_col_major(n, p, data)
    }

    #[test]
    fn combine_arithmetic() {
        assert_abs_diff_eq!(mrcv_combine(2.0, 10, 4.0, 30), 3.5, epsilon = 1e-15);
        // Equal weights reduce to the plain average, exactly.
        assert_eq!(mrcv_combine(2.0, 10, 4.0, 10), 3.0);
    }

    #[test]
    fn equal_dfs_make_estimators_identical() {
        let x = randn_mat(40, 6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
        let screener = FixedScreener {
            subset: ModelSubset::new(vec![0, 3], 6).unwrap(),
        };
        let cfg = VarEstConfig::default();
        let rcv = rcv_variance(&x, &y, &screener, &cfg).unwrap();
        let mrcv = mrcv_variance(&x, &y, &screener, &cfg).unwrap();
        assert_eq!(rcv.df1, rcv.df2);
        assert_eq!(rcv.sigma2_hat, mrcv.sigma2_hat);
        assert_eq!(mrcv.nu, rcv.df1 + rcv.df2);
    }

    #[test]
    fn pure_noise_with_empty_screen_recovers_variance() {
        let sigma2: f64 = 2.25;
        let screener = FixedScreener {
            subset: ModelSubset::empty(4),
        };
        let cfg = VarEstConfig::default();
        let reps = 2000;
        let mut mean = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for rep in 0..reps {
            let x = randn_mat(100, 4, 50_000 + rep);
            let y: Vec<f64> = (0..100)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma2.sqrt() * z
                })
                .collect();
            mean += rcv_variance(&x, &y, &screener, &cfg).unwrap().sigma2_hat / reps as f64;
        }
        // Var of one estimate is sigma^4 (2/h1 + 2/h2)/4 with h = 30.
        let se = (sigma2 * sigma2 / 30.0 / reps as f64).sqrt();
        assert!(
            (mean - sigma2).abs() < 3.0 * se,
            "mean {mean} vs sigma2 {sigma2} (se {se})"
        );
    }

    #[test]
    fn noiseless_response_gives_zero() {
        let x = randn_mat(60, 5, 3);
        let y: Vec<f64> = (0..60).map(|i| x.get(i, 1) - 2.0 * x.get(i, 4)).collect();
        let screener = FixedScreener {
            subset: ModelSubset::new(vec![1, 4], 5).unwrap(),
        };
        let est = mrcv_variance(&x, &y, &screener, &VarEstConfig::default()).unwrap();
        assert!(est.sigma2_hat.abs() < 1e-18);
    }

    #[test]
    fn depends_only_on_leading_fraction() {
        let x = randn_mat(50, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let screener = FixedScreener {
            subset: ModelSubset::new(vec![0], 4).unwrap(),
        };
        let cfg = VarEstConfig::default();
        let base = mrcv_variance(&x, &y, &screener, &cfg).unwrap();
        // Mutate everything past floor(0.6 * 50) = 30.
        let mut x2 = x.clone();
        let mut y2 = y.clone();
        for i in 30..50 {
            for j in 0..4 {
                x2.set(i, j, 99.0 + i as f64 + j as f64);
            }
            y2[i] = -1000.0;
        }
        let mutated = mrcv_variance(&x2, &y2, &screener, &cfg).unwrap();
        assert_eq!(base.sigma2_hat.to_bits(), mutated.sigma2_hat.to_bits());
        assert_eq!(base.df1, mutated.df1);
        assert_eq!(base.df2, mutated.df2);
    }

    #[test]
    fn insufficient_data_when_sets_eat_all_dof() {
        let x = randn_mat(12, 6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut rng)).collect();
        let screener = FixedScreener {
            subset: ModelSubset::new(vec![0, 1, 2, 3, 4], 6).unwrap(),
        };
        assert!(matches!(
            mrcv_variance(&x, &y, &screener, &VarEstConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn gamma_frac_domain() {
        let x = randn_mat(20, 2, 11);
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let screener = FixedScreener {
            subset: ModelSubset::empty(2),
        };
        for bad in [0.0, 0.5, 1.2] {
            let cfg = VarEstConfig {
                gamma_frac: bad,
                ..VarEstConfig::default()
            };
            assert!(rcv_variance(&x, &y, &screener, &cfg).is_err());
        }
    }

    #[test]
    fn shuffle_mode_changes_rows_but_stays_deterministic() {
        let x = randn_mat(40, 3, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let y: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
        let screener = FixedScreener {
            subset: ModelSubset::new(vec![0], 3).unwrap(),
        };
        let cfg_a = VarEstConfig {
            shuffle_seed: Some(1),
            ..VarEstConfig::default()
        };
        let a1 = mrcv_variance(&x, &y, &screener, &cfg_a).unwrap();
        let a2 = mrcv_variance(&x, &y, &screener, &cfg_a).unwrap();
        assert_eq!(a1.sigma2_hat.to_bits(), a2.sigma2_hat.to_bits());
        let plain = mrcv_variance(&x, &y, &screener, &VarEstConfig::default()).unwrap();
        assert_ne!(a1.sigma2_hat.to_bits(), plain.sigma2_hat.to_bits());
    }
}
