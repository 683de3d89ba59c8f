//! Variable screening from `p` candidates down to an encompassing set:
//! Cox grid reduction, the undertuned lasso, and sample-splitting utilities.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dist::{t_cdf, TailSide};
use crate::error::{Error, Result};
use crate::linalg::{dot, Design, Mat};

/// An ordered set of candidate-variable indices (0-based) within an ambient
/// dimension `p_total`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ModelSubset {
    indices: Vec<usize>,
    p_total: usize,
}

impl ModelSubset {
    pub fn new(mut indices: Vec<usize>, p_total: usize) -> Result<ModelSubset> {
        indices.sort_unstable();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(Error::domain(format!("duplicate index {}", w[0])));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= p_total {
                return Err(Error::domain(format!(
                    "index {last} out of range for p = {p_total}"
                )));
            }
        }
        Ok(ModelSubset { indices, p_total })
    }

    pub fn empty(p_total: usize) -> ModelSubset {
        ModelSubset {
            indices: Vec::new(),
            p_total,
        }
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn p_total(&self) -> usize {
        self.p_total
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &ModelSubset) -> bool {
        self.indices.iter().all(|&j| other.contains(j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerMethod {
    Cox,
    Lasso,
    Fixed,
}

/// One stage of a reduction walk: the tuning value tried and the number of
/// variables retained there.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReductionStage {
    pub tuning: f64,
    pub retained: usize,
}

/// Outcome of a screening run.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionResult {
    pub selected: ModelSubset,
    pub method: ReducerMethod,
    /// Final significance level of the Cox walk, if applicable.
    pub final_alpha: Option<f64>,
    /// Penalty at which the lasso support was taken, if applicable.
    pub lambda_chosen: Option<f64>,
    /// Set when the walk ran out of tuning values while still above the cap.
    pub exhausted: bool,
    pub trace: Vec<ReductionStage>,
}

/// A pluggable reduction procedure.
pub trait Screener: Sync {
    fn screen(&self, x: &Mat, y: &[f64]) -> Result<ReductionResult>;
}

/// Screener returning a fixed subset regardless of the data. Used for
/// oracle-style runs and for conditioning on known screening sets.
#[derive(Debug, Clone)]
pub struct FixedScreener {
    pub subset: ModelSubset,
}

impl Screener for FixedScreener {
    fn screen(&self, x: &Mat, _y: &[f64]) -> Result<ReductionResult> {
        if self.subset.p_total() != x.cols() {
            return Err(Error::DimensionMismatch {
                context: "fixed screener ambient dimension",
                expected: x.cols(),
                got: self.subset.p_total(),
            });
        }
        Ok(ReductionResult {
            selected: self.subset.clone(),
            method: ReducerMethod::Fixed,
            final_alpha: None,
            lambda_chosen: None,
            exhausted: false,
            trace: Vec::new(),
        })
    }
}

/// Grid arrangement used by Cox reduction: variable indices shuffled into a
/// `rows x cols` grid, read back as row sets and column sets. Every variable
/// belongs to exactly one row set and one column set.
pub fn grid_arrangement(
    p: usize,
    seed: u64,
) -> (usize, usize, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let cols = (p as f64).sqrt().ceil() as usize;
    let rows = p.div_ceil(cols);
    let mut perm: Vec<usize> = (0..p).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut row_sets = vec![Vec::new(); rows];
    let mut col_sets = vec![Vec::new(); cols];
    for (pos, &v) in perm.iter().enumerate() {
        row_sets[pos / cols].push(v);
        col_sets[pos % cols].push(v);
    }
    (rows, cols, row_sets, col_sets)
}

/// Configuration for [`cox_reduction`].
#[derive(Debug, Clone)]
pub struct CoxReduction {
    pub max_keep: usize,
    pub alpha_start: f64,
    pub alpha_step: f64,
    pub intercept: bool,
    pub seed: u64,
}

impl CoxReduction {
    pub fn new(max_keep: usize, seed: u64) -> CoxReduction {
        CoxReduction {
            max_keep,
            alpha_start: 0.05,
            alpha_step: 0.001,
            intercept: false,
            seed,
        }
    }
}

impl Screener for CoxReduction {
    fn screen(&self, x: &Mat, y: &[f64]) -> Result<ReductionResult> {
        cox_reduction(x, y, self)
    }
}

/// Cox grid reduction: indices are arranged at random in a near-square grid;
/// one least-squares regression is fitted per row and per column, so every
/// variable is a covariate in exactly two regressions. A variable survives a
/// significance level when its two-sided coefficient t-test p-value is at or
/// below the level in at least one of its two regressions. The level starts
/// at `alpha_start` and decreases by `alpha_step` until at most `max_keep`
/// variables survive or the level reaches `alpha_step`.
pub fn cox_reduction(x: &Mat, y: &[f64], cfg: &CoxReduction) -> Result<ReductionResult> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "cox_reduction response",
            expected: n,
            got: y.len(),
        });
    }
    if !(cfg.alpha_start > 0.0 && cfg.alpha_step > 0.0 && cfg.alpha_start >= cfg.alpha_step) {
        return Err(Error::domain(
            "require alpha_start >= alpha_step > 0".to_string(),
        ));
    }
    let (_rows, _cols, row_sets, col_sets) = grid_arrangement(p, cfg.seed);

    let mut best_p = vec![f64::INFINITY; p];
    for set in row_sets.iter().chain(col_sets.iter()) {
        if set.is_empty() {
            continue;
        }
        let d = set.len() + usize::from(cfg.intercept);
        if n < d + 2 {
            return Err(Error::insufficient(format!(
                "grid regression with {d} coefficients needs n >= {}, got {n}",
                d + 2
            )));
        }
        let design = Design::from_columns(x, set, cfg.intercept)?;
        let fit = crate::linalg::ols_fit(&design, y)?;
        let df = fit.df_resid as f64;
        let sigma2 = fit.rss / df;
        let inv_diag = design.qr().xtx_inv_diag()?;
        let offset = usize::from(cfg.intercept);
        for (q, &v) in set.iter().enumerate() {
            let se = (sigma2 * inv_diag[q + offset]).sqrt();
            let pv = if se == 0.0 {
                f64::from(u8::from(fit.theta_hat[q + offset] == 0.0))
            } else {
                let t = fit.theta_hat[q + offset] / se;
                TailSide::TwoSided.p_value(t_cdf(t, df)?)
            };
            if pv < best_p[v] {
                best_p[v] = pv;
            }
        }
    }

    // Alpha walk over the fixed per-variable p-values.
    let steps = ((cfg.alpha_start - cfg.alpha_step) / cfg.alpha_step + 1e-9).floor() as usize;
    let mut trace = Vec::new();
    let mut chosen: Option<(f64, Vec<usize>)> = None;
    let mut last: Option<(f64, Vec<usize>)> = None;
    for i in 0..=steps {
        let alpha = cfg.alpha_start - i as f64 * cfg.alpha_step;
        let retained: Vec<usize> = (0..p).filter(|&v| best_p[v] <= alpha).collect();
        trace.push(ReductionStage {
            tuning: alpha,
            retained: retained.len(),
        });
        let done = retained.len() <= cfg.max_keep;
        last = Some((alpha, retained));
        if done {
            chosen = last.take();
            break;
        }
    }
    let (exhausted, (final_alpha, retained)) = match chosen {
        Some(hit) => (false, hit),
        None => (true, last.expect("at least one stage")),
    };
    Ok(ReductionResult {
        selected: ModelSubset::new(retained, p)?,
        method: ReducerMethod::Cox,
        final_alpha: Some(final_alpha),
        lambda_chosen: None,
        exhausted,
        trace,
    })
}

/// Solution of one penalised coordinate-descent run.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

#[inline]
fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for `min (1/2n)||y - X b||^2 + lambda ||b||_1`
/// on a design whose columns have mean zero and norm `sqrt(n)`.
///
/// Iterates until the KKT residuals fall below `tol`:
/// `|x_j^T r / n| <= lambda + tol` for inactive coordinates and
/// `|x_j^T r / n - lambda sign(b_j)| <= tol` for active ones. If `max_iter`
/// sweeps do not get there, the best iterate is returned with
/// `converged = false`.
pub fn lasso_coordinate_descent(
    x_std: &Mat,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoFit> {
    let (n, p) = (x_std.rows(), x_std.cols());
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "lasso response",
            expected: n,
            got: y.len(),
        });
    }
    if lambda < 0.0 {
        return Err(Error::domain(format!("lambda must be >= 0, got {lambda}")));
    }
    lasso_cd_warm(x_std, y, lambda, tol, max_iter, vec![0.0; p], y.to_vec())
}

fn lasso_cd_warm(
    x_std: &Mat,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
    mut beta: Vec<f64>,
    mut resid: Vec<f64>,
) -> Result<LassoFit> {
    let (n, p) = (x_std.rows(), x_std.cols());
    let nf = n as f64;
    let _ = y;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_iter {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for j in 0..p {
            let xj = x_std.col(j);
            let grad = dot(xj, &resid) / nf;
            let old = beta[j];
            let new = soft_threshold(old + grad, lambda);
            if new != old {
                let delta = new - old;
                for (r, v) in resid.iter_mut().zip(xj) {
                    *r -= delta * v;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        // A sweep that barely moved is a candidate solution; confirm with
        // the KKT residuals, which cost one more pass over the columns.
        if max_delta <= tol {
            let mut worst = 0.0f64;
            for j in 0..p {
                let grad = dot(x_std.col(j), &resid) / nf;
                let viol = if beta[j] == 0.0 {
                    (grad.abs() - lambda).max(0.0)
                } else {
                    (grad - lambda * beta[j].signum()).abs()
                };
                worst = worst.max(viol);
            }
            if worst <= tol {
                converged = true;
                break;
            }
        }
    }
    Ok(LassoFit {
        beta,
        converged,
        sweeps,
    })
}

/// Configuration for [`undertuned_lasso`].
#[derive(Debug, Clone)]
pub struct UndertunedLasso {
    pub max_keep: usize,
}

impl Screener for UndertunedLasso {
    fn screen(&self, x: &Mat, y: &[f64]) -> Result<ReductionResult> {
        undertuned_lasso(x, y, self.max_keep)
    }
}

const LASSO_PATH_POINTS: usize = 100;
const LASSO_PATH_FLOOR: f64 = 1e-3;

/// Undertuned lasso screening: walks a geometric penalty path downward from
/// the smallest all-zero penalty and returns the support at the smallest
/// penalty whose support size stays within `max_keep`.
///
/// Columns are standardised internally (mean zero, norm `sqrt(n)`); the
/// support is mapped back to original indices.
pub fn undertuned_lasso(x: &Mat, y: &[f64], max_keep: usize) -> Result<ReductionResult> {
    let (n, p) = (x.rows(), x.cols());
    if n < 2 || p < 1 {
        return Err(Error::insufficient(format!(
            "undertuned lasso needs n >= 2 and p >= 1, got n = {n}, p = {p}"
        )));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "undertuned_lasso response",
            expected: n,
            got: y.len(),
        });
    }
    let nf = n as f64;
    let mut x_std = Mat::zeros(n, p);
    for j in 0..p {
        let src = x.col(j);
        let mean = src.iter().sum::<f64>() / nf;
        let centred: Vec<f64> = src.iter().map(|v| v - mean).collect();
        let norm = dot(&centred, &centred).sqrt();
        let scale = if norm > 0.0 { nf.sqrt() / norm } else { 0.0 };
        for (dst, v) in x_std.col_mut(j).iter_mut().zip(&centred) {
            *dst = v * scale;
        }
    }
    let lambda_max = (0..p)
        .map(|j| (dot(x_std.col(j), y) / nf).abs())
        .fold(0.0f64, f64::max);
    if lambda_max == 0.0 {
        return Ok(ReductionResult {
            selected: ModelSubset::empty(p),
            method: ReducerMethod::Lasso,
            final_alpha: None,
            lambda_chosen: Some(0.0),
            exhausted: false,
            trace: vec![ReductionStage {
                tuning: 0.0,
                retained: 0,
            }],
        });
    }

    let tol = 1e-7 * lambda_max;
    let grid_lambda = |t: usize| -> f64 {
        let frac = t as f64 / (LASSO_PATH_POINTS - 1) as f64;
        lambda_max * LASSO_PATH_FLOOR.powf(frac)
    };
    let mut beta = vec![0.0; p];
    let mut resid = y.to_vec();
    let mut trace = Vec::with_capacity(LASSO_PATH_POINTS);
    let mut first_point: Option<(f64, Vec<usize>)> = None;
    let mut candidate: Option<(usize, f64, Vec<usize>, Vec<f64>)> = None;
    let mut over_cap_streak = 0usize;
    for t in 0..LASSO_PATH_POINTS {
        let lambda = grid_lambda(t);
        let fit = lasso_cd_warm(&x_std, y, lambda, tol, 2000, beta, resid)?;
        beta = fit.beta;
        resid = {
            let fitted = x_std.matvec(&beta);
            y.iter().zip(&fitted).map(|(a, b)| a - b).collect()
        };
        let support: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        trace.push(ReductionStage {
            tuning: lambda,
            retained: support.len(),
        });
        if first_point.is_none() {
            first_point = Some((lambda, support.clone()));
        }
        if support.len() <= max_keep {
            candidate = Some((t, lambda, support, beta.clone()));
            over_cap_streak = 0;
        } else {
            over_cap_streak += 1;
            // The rule only needs the support-size crossing; once the
            // support has sat above the cap for several grid points it
            // does not come back under, and the small-penalty tail of the
            // path is by far the slowest to solve.
            if over_cap_streak >= 3 && candidate.is_some() {
                break;
            }
        }
    }
    let (exhausted, mut lambda_chosen, mut support, refine) = match candidate {
        Some((t, lambda, support, beta_at)) => {
            let refine = (t + 1 < LASSO_PATH_POINTS && support.len() < max_keep)
                .then_some((grid_lambda(t + 1), lambda, beta_at));
            (false, lambda, support, refine)
        }
        None => {
            let (lambda, support) = first_point.expect("path has points");
            (true, lambda, support, None)
        }
    };
    // The support-size crossing usually falls between grid points; bisect
    // there so the selected penalty is genuinely the smallest one keeping
    // the support within the cap, not just the nearest grid point above it.
    if let Some((mut lo, mut hi, mut beta_hi)) = refine {
        for _ in 0..20 {
            let mid = (lo * hi).sqrt();
            let fitted = x_std.matvec(&beta_hi);
            let resid_mid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
            let fit = lasso_cd_warm(&x_std, y, mid, tol, 2000, beta_hi.clone(), resid_mid)?;
            let sup: Vec<usize> = (0..p).filter(|&j| fit.beta[j] != 0.0).collect();
            if sup.len() <= max_keep {
                hi = mid;
                beta_hi = fit.beta;
                lambda_chosen = mid;
                support = sup;
                if support.len() == max_keep {
                    break;
                }
            } else {
                lo = mid;
            }
        }
        trace.push(ReductionStage {
            tuning: lambda_chosen,
            retained: support.len(),
        });
    }
    Ok(ReductionResult {
        selected: ModelSubset::new(support, p)?,
        method: ReducerMethod::Lasso,
        final_alpha: None,
        lambda_chosen: Some(lambda_chosen),
        exhausted,
        trace,
    })
}

/// Deterministic head/tail split: the first `floor(frac n)` indices train,
/// the rest assess.
pub fn split_indices(n: usize, frac: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::domain(format!("frac must lie in (0,1), got {frac}")));
    }
    let k = (frac * n as f64).floor() as usize;
    if k < 1 || n - k < 1 {
        return Err(Error::domain(format!(
            "split of n = {n} at frac = {frac} leaves an empty part"
        )));
    }
    Ok(((0..k).collect(), (k..n).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::QrFactor;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
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

    fn standardise(x: &Mat) -> Mat {
        let (n, p) = (x.rows(), x.cols());
        let nf = n as f64;
        let mut x_std = Mat::zeros(n, p);
        for j in 0..p {
            let src = x.col(j);
            let mean = src.iter().sum::<f64>() / nf;
            let c: Vec<f64> = src.iter().map(|v| v - mean).collect();
            let norm = dot(&c, &c).sqrt();
            for (dst, v) in x_std.col_mut(j).iter_mut().zip(&c) {
                *dst = v * nf.sqrt() / norm;
            }
        }
        x_std
    }

    #[test]
    fn subset_validation() {
        let s = ModelSubset::new(vec![3, 1, 2], 5).unwrap();
        assert_eq!(s.indices(), &[1, 2, 3]);
        assert!(ModelSubset::new(vec![1, 1], 5).is_err());
        assert!(ModelSubset::new(vec![5], 5).is_err());
        let t = ModelSubset::new(vec![1, 3], 5).unwrap();
        assert!(t.is_subset_of(&s));
        assert!(!s.is_subset_of(&t));
    }

    #[test]
    fn split_examples() {
        let (tr, te) = split_indices(100, 0.6).unwrap();
        assert_eq!((tr.len(), te.len()), (60, 40));
        assert_eq!(tr[0], 0);
        assert_eq!(te[0], 60);
        let (tr, te) = split_indices(10, 0.5).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 5));
        let (tr, te) = split_indices(3, 0.9).unwrap();
        assert_eq!((tr.len(), te.len()), (2, 1));
        assert!(split_indices(3, 0.1).is_err());
        assert!(split_indices(10, 1.0).is_err());
    }

    #[test]
    fn grid_shape_and_membership() {
        let (rows, cols, row_sets, col_sets) = grid_arrangement(400, 7);
        assert_eq!((rows, cols), (20, 20));
        let mut count = vec![0usize; 400];
        for set in row_sets.iter().chain(col_sets.iter()) {
            assert_eq!(set.len(), 20);
            for &v in set {
                count[v] += 1;
            }
        }
        assert!(count.iter().all(|&c| c == 2));
        // Non-square p: trailing cells shorten the last row.
        let (rows, cols, row_sets, _) = grid_arrangement(10, 7);
        assert_eq!((rows, cols), (3, 4));
        assert_eq!(row_sets[2].len(), 2);
    }

    #[test]
    fn lasso_zero_above_lambda_max() {
        let n = 50;
        let x = randn_mat(n, 6, 1);
        let y: Vec<f64> = x.col(0).iter().map(|v| 2.0 * v + 0.1).collect();
        let res = undertuned_lasso(&x, &y, 6).unwrap();
        assert!(!res.selected.is_empty());

        let x_std = standardise(&x);
        let nf = n as f64;
        let lambda_max = (0..6)
            .map(|j| (dot(x_std.col(j), &y) / nf).abs())
            .fold(0.0f64, f64::max);
        let fit =
            lasso_coordinate_descent(&x_std, &y, lambda_max * 1.0001, 1e-10, 100).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        assert!(fit.converged);
    }

    #[test]
    fn lasso_soft_threshold_on_orthonormal_design() {
        // Columns orthogonal with norm sqrt(n): solution is entrywise
        // soft-thresholding of the per-column least-squares coefficients.
        let n = 32;
        let raw = randn_mat(n, 5, 3);
        let qr = QrFactor::new(&raw);
        let mut x = Mat::zeros(n, 5);
        for j in 0..5 {
            let mut e = vec![0.0; n];
            e[j] = (n as f64).sqrt();
            qr.q_apply(&mut e);
            x.col_mut(j).copy_from_slice(&e);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nf = n as f64;
        let ols: Vec<f64> = (0..5).map(|j| dot(x.col(j), &y) / nf).collect();
        for &lambda in &[0.0, 0.05, 0.2, 1.0] {
            let fit = lasso_coordinate_descent(&x, &y, lambda, 1e-10, 500).unwrap();
            for j in 0..5 {
                assert_abs_diff_eq!(
                    fit.beta[j],
                    soft_threshold(ols[j], lambda),
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn lasso_unpenalised_equals_ols() {
        let n = 40;
        let x = randn_mat(n, 4, 9);
        let x_std = standardise(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fit = lasso_coordinate_descent(&x_std, &y, 0.0, 1e-12, 5000).unwrap();
        let design = Design::new(x_std.clone(), false).unwrap();
        let ols = crate::linalg::ols_fit(&design, &y).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(fit.beta[j], ols.theta_hat[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn undertuned_lasso_degenerate_and_single_column() {
        let x = randn_mat(20, 4, 5);
        let y = vec![0.0; 20];
        let res = undertuned_lasso(&x, &y, 4).unwrap();
        assert!(res.selected.is_empty());
        assert_eq!(res.lambda_chosen, Some(0.0));

        let x1 = randn_mat(20, 1, 6);
        let y1: Vec<f64> = x1.col(0).iter().map(|v| 3.0 * v).collect();
        let res = undertuned_lasso(&x1, &y1, 1).unwrap();
        assert_eq!(res.selected.indices(), &[0]);
        assert!(!res.exhausted);
    }

    #[test]
    fn cox_retains_strong_variable() {
        // p = 4 in a 2x2 grid; variable 0 has coefficient 50.
        let mut kept = 0;
        let reps = 500;
        for rep in 0..reps {
            let x = randn_mat(100, 4, 1000 + rep);
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + rep);
            let y: Vec<f64> = (0..100)
                .map(|i| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    50.0 * x.get(i, 0) + eps
                })
                .collect();
            let cfg = CoxReduction {
                max_keep: 2,
                alpha_start: 0.05,
                alpha_step: 0.001,
                intercept: false,
                seed: rep,
            };
            let res = cox_reduction(&x, &y, &cfg).unwrap();
            if res.selected.contains(0) {
                kept += 1;
            }
        }
        assert!(
            kept as f64 / reps as f64 >= 0.99,
            "strong variable kept in only {kept}/{reps} runs"
        );
    }

    #[test]
    fn cox_pure_noise_respects_cap_and_rule() {
        for rep in 0..20 {
            let x = randn_mat(100, 400, 300 + rep);
            let mut rng = ChaCha8Rng::seed_from_u64(900 + rep);
            let y: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut rng)).collect();
            let cfg = CoxReduction::new(15, rep);
            let res = cox_reduction(&x, &y, &cfg).unwrap();
            assert!(res.exhausted || res.selected.len() <= 15);
            // The final stage of the trace must agree with the returned set.
            let last = res.trace.last().unwrap();
            assert_eq!(last.retained, res.selected.len());
            assert_abs_diff_eq!(last.tuning, res.final_alpha.unwrap(), epsilon = 1e-12);
            // Counts along the walk are nonincreasing as alpha decreases.
            for w in res.trace.windows(2) {
                assert!(w[1].retained <= w[0].retained);
            }
        }
    }

    #[test]
    fn cox_invariant_to_row_permutation() {
        let n = 60;
        let x = randn_mat(n, 16, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                x.get(i, 2) + 0.5 * x.get(i, 7) + eps
            })
            .collect();
        let cfg = CoxReduction {
            max_keep: 6,
            alpha_start: 0.05,
            alpha_step: 0.001,
            intercept: false,
            seed: 21,
        };
        let base = cox_reduction(&x, &y, &cfg).unwrap();
        // Rotate rows by 17 positions.
        let perm: Vec<usize> = (0..n).map(|i| (i + 17) % n).collect();
        let mut xp = Mat::zeros(n, 16);
        for j in 0..16 {
            for (i, &pi) in perm.iter().enumerate() {
                xp.set(i, j, x.get(pi, j));
            }
        }
        let yp: Vec<f64> = perm.iter().map(|&pi| y[pi]).collect();
        let permuted = cox_reduction(&xp, &yp, &cfg).unwrap();
        assert_eq!(base.selected, permuted.selected);
        assert_eq!(base.final_alpha, permuted.final_alpha);
    }

    #[test]
    fn cox_insufficient_data() {
        let x = randn_mat(10, 400, 2);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let cfg = CoxReduction::new(15, 0);
        assert!(matches!(
            cox_reduction(&x, &y, &cfg),
            Err(Error::InsufficientData(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn lasso_kkt_holds_at_solution(seed in 0u64..1000, lam_frac in 0.05f64..0.9) {
            let n = 30;
            let p = 10;
            let x = randn_mat(n, p, seed);
            let x_std = standardise(&x);
            let nf = n as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let lambda_max = (0..p)
                .map(|j| (dot(x_std.col(j), &y) / nf).abs())
                .fold(0.0f64, f64::max);
            let lambda = lam_frac * lambda_max;
            let tol = 1e-9 * lambda_max.max(1e-12);
            let fit = lasso_coordinate_descent(&x_std, &y, lambda, tol, 5000).unwrap();
            prop_assert!(fit.converged);
            let fitted = x_std.matvec(&fit.beta);
            let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
            for j in 0..p {
                let grad = dot(x_std.col(j), &resid) / nf;
                if fit.beta[j] == 0.0 {
                    prop_assert!(grad.abs() <= lambda + 10.0 * tol);
                } else {
                    prop_assert!((grad - lambda * fit.beta[j].signum()).abs() <= 10.0 * tol);
                }
            }
        }
    }
}
