//! The model-assessment procedures: the co-sufficient Rayleigh test, the
//! ancillary chi-squared test, the naive F test, the split-sample F test,
//! and the mean-direction departure diagnostic.
//!
//! All four tests assess a postulated submodel's mean space. The
//! co-sufficient test projects pseudo-replicates of the response onto the
//! submodel's orthogonal complement, normalises them to the unit
//! hypersphere and applies the high-dimensional Rayleigh uniformity test,
//! whose null distribution is standard normal. The ancillary test calibrates
//! the residual sum of squares over the estimated error variance against
//! chi-squared. The F tests compare the submodel against an encompassing
//! set, either on the full sample (no selection adjustment) or on a held-out
//! fraction after reduction on the training fraction.

use serde::Serialize;

use crate::dist;
use crate::error::{Error, Result};
use crate::linalg::{dot, ComplementBasis, Design, Mat};
use crate::randomize::{gamma_coefficients, pseudo_replicates, ReplicateBundle};
use crate::reduce::{split_indices, ModelSubset, Screener};
use crate::varest::VarianceEstimate;

/// Identifies which procedure produced an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Cosufficient { k: usize },
    Ancillary,
    NaiveF,
    SplitF,
}

impl std::fmt::Display for TestMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestMethod::Cosufficient { k } => write!(f, "cosufficient_k{k}"),
            TestMethod::Ancillary => write!(f, "ancillary"),
            TestMethod::NaiveF => write!(f, "naive_f"),
            TestMethod::SplitF => write!(f, "split_f"),
        }
    }
}

/// Parameters of the null reference distribution a statistic was calibrated
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NullRef {
    /// Standard normal, for the Rayleigh statistic on `k` replicates in a
    /// complement space of dimension `m`.
    StandardNormal { k: usize, m: usize },
    /// Chi-squared on `df` degrees of freedom; `nu_sigma` records the
    /// degrees of freedom behind the variance estimate (0 when known).
    ChiSquared { df: usize, nu_sigma: usize },
    F { df1: usize, df2: usize },
}

/// Result of testing one submodel.
#[derive(Debug, Clone, Serialize)]
pub struct TestOutcome {
    pub method: TestMethod,
    pub statistic: f64,
    pub p_value: f64,
    pub null_params: NullRef,
    pub submodel: ModelSubset,
    /// Set for split-sample tests when the submodel is not nested in the
    /// training-phase encompassing set; such submodels are rejected by
    /// construction (p = 0) rather than by the F statistic.
    pub excluded_by_construction: bool,
}

/// Source of pseudo-replicates for the co-sufficient test: a bundle shared
/// across submodels, or a seed from which a fresh one is drawn.
pub enum BundleSource<'a> {
    Shared(&'a ReplicateBundle),
    Seed(u64),
}

/// Scaled sum of pairwise inner products of `k` unit vectors:
/// `sqrt(2 m) / k * sum_{i<j} <q_i, q_j>`, where `m` is the dimension of the
/// hypersphere's ambient complement space.
pub fn rayleigh_statistic(q_reps: &[Vec<f64>], m: usize) -> Result<f64> {
    let k = q_reps.len();
    if k < 2 {
        return Err(Error::domain(format!("Rayleigh test needs k >= 2, got {k}")));
    }
    for q in q_reps {
        let norm = dot(q, q).sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::domain(format!(
                "inputs must be unit vectors, got norm {norm}"
            )));
        }
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += dot(&q_reps[i], &q_reps[j]);
        }
    }
    Ok((2.0 * m as f64).sqrt() / k as f64 * sum)
}

fn submodel_design(
    submodel: &ModelSubset,
    x: &Mat,
    intercept: bool,
) -> Result<(Design, usize)> {
    let n = x.rows();
    let d = submodel.len() + usize::from(intercept);
    if n < d + 2 {
        return Err(Error::insufficient(format!(
            "need n - d_theta >= 2, got n = {n}, d_theta = {d}"
        )));
    }
    let design = Design::from_columns(x, submodel.indices(), intercept)?;
    Ok((design, n - d))
}

/// Co-sufficient Rayleigh test of a submodel.
///
/// Pseudo-replicates of the response (shared or freshly drawn at the
/// variance estimate's scale) are projected onto the submodel's orthogonal
/// complement, normalised, and their pairwise alignments summed into the
/// Rayleigh statistic; the p-value is the standard normal upper tail.
pub fn cosufficient_test(
    submodel: &ModelSubset,
    x: &Mat,
    y: &[f64],
    intercept: bool,
    k: usize,
    var_est: &VarianceEstimate,
    bundle: BundleSource<'_>,
) -> Result<TestOutcome> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "cosufficient_test response",
            expected: n,
            got: y.len(),
        });
    }
    if !(var_est.sigma2_hat > 0.0) {
        return Err(Error::domain(
            "co-sufficient test needs a positive variance estimate".to_string(),
        ));
    }
    let owned;
    let bundle = match bundle {
        BundleSource::Shared(b) => b,
        BundleSource::Seed(seed) => {
            let plan = gamma_coefficients(k, var_est.sigma_hat())?;
            owned = pseudo_replicates(y, &plan, seed)?;
            &owned
        }
    };
    if bundle.k() != k {
        return Err(Error::DimensionMismatch {
            context: "shared bundle replicate count",
            expected: k,
            got: bundle.k(),
        });
    }
    if bundle.n() != n {
        return Err(Error::DimensionMismatch {
            context: "shared bundle length",
            expected: n,
            got: bundle.n(),
        });
    }

    let (design, _m) = submodel_design(submodel, x, intercept)?;
    // Tail of Q^T v is the complement-basis projection of v; norms and
    // pairwise inner products are all the statistic needs.
    cosufficient_on_design(submodel, &design, k, var_est, bundle)
}

/// Ancillary test: the submodel's residual sum of squares over the variance
/// estimate, calibrated against the chi-squared upper tail on `n - d_theta`
/// degrees of freedom.
pub fn ancillary_test(
    submodel: &ModelSubset,
    x: &Mat,
    y: &[f64],
    intercept: bool,
    var_est: &VarianceEstimate,
) -> Result<TestOutcome> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "ancillary_test response",
            expected: n,
            got: y.len(),
        });
    }
    if !(var_est.sigma2_hat > 0.0) {
        return Err(Error::domain(
            "ancillary test needs a positive variance estimate".to_string(),
        ));
    }
    let (design, _m) = submodel_design(submodel, x, intercept)?;
    ancillary_on_design(submodel, &design, y, var_est)
}

/// F test of the submodel against a data-selected encompassing set on the
/// full sample, with no adjustment for the selection.
pub fn naive_f_test(
    submodel: &ModelSubset,
    encompassing: &ModelSubset,
    x: &Mat,
    y: &[f64],
    intercept: bool,
) -> Result<TestOutcome> {
    if !submodel.is_subset_of(encompassing) {
        return Err(Error::NotNested);
    }
    let sub = Design::from_columns(x, submodel.indices(), intercept)?;
    let full = Design::from_columns(x, encompassing.indices(), intercept)?;
    let ft = crate::linalg::f_statistic(&sub, &full, y)?;
    Ok(TestOutcome {
        method: TestMethod::NaiveF,
        statistic: if ft.f.is_finite() { ft.f } else { f64::MAX },
        p_value: ft.p,
        null_params: NullRef::F {
            df1: ft.df1,
            df2: ft.df2,
        },
        submodel: submodel.clone(),
        excluded_by_construction: false,
    })
}

/// Split-sample F test with the reduction run on the leading `frac` of the
/// rows and the F comparison on the remainder.
pub fn split_f_test(
    submodel: &ModelSubset,
    x: &Mat,
    y: &[f64],
    intercept: bool,
    frac: f64,
    reducer: &dyn Screener,
) -> Result<TestOutcome> {
    let n = x.rows();
    let (train, _test) = split_indices(n, frac)?;
    let train_n = train.len();
    let all: Vec<usize> = (0..x.cols()).collect();
    let x_train = gather_rows(x, &train, &all);
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let reduction = reducer.screen(&x_train, &y_train)?;
    split_f_test_with(submodel, x, y, intercept, train_n, &reduction.selected)
}

/// Split-sample F test against a training-phase encompassing set computed
/// elsewhere (shared across the submodel sweep).
pub fn split_f_test_with(
    submodel: &ModelSubset,
    x: &Mat,
    y: &[f64],
    intercept: bool,
    train_n: usize,
    encompassing_train: &ModelSubset,
) -> Result<TestOutcome> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "split_f_test response",
            expected: n,
            got: y.len(),
        });
    }
    if !submodel.is_subset_of(encompassing_train) {
        if train_n == 0 || train_n >= n {
            return Err(Error::domain(format!(
                "training size {train_n} must leave a nonempty assessment part of n = {n}"
            )));
        }
        // Rejected from the confidence set by construction.
        return Ok(TestOutcome {
            method: TestMethod::SplitF,
            statistic: 0.0,
            p_value: 0.0,
            null_params: NullRef::F { df1: 0, df2: 0 },
            submodel: submodel.clone(),
            excluded_by_construction: true,
        });
    }
    let state = SplitState::new(x, y, intercept, train_n, encompassing_train.clone())?;
    state.test(submodel, x)
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

/// Direction and concentration of the approximate non-null law of the
/// normalised complement projection when the mean has an omitted component
/// `Z lambda`: mean direction along `U^T Z lambda`, concentration
/// `(n - d_theta) ||U^T Z lambda|| / (sigma sqrt(2))`.
#[derive(Debug, Clone)]
pub struct DepartureDiagnostic {
    pub mean_direction: Vec<f64>,
    pub kappa: f64,
}

pub fn vmf_departure(
    basis: &ComplementBasis,
    z: &Mat,
    lambda: &[f64],
    sigma: f64,
) -> Result<DepartureDiagnostic> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    if z.rows() != basis.u().rows() {
        return Err(Error::DimensionMismatch {
            context: "vmf_departure omitted-direction rows",
            expected: basis.u().rows(),
            got: z.rows(),
        });
    }
    if lambda.len() != z.cols() {
        return Err(Error::DimensionMismatch {
            context: "vmf_departure coefficient length",
            expected: z.cols(),
            got: lambda.len(),
        });
    }
    let zl = z.matvec(lambda);
    let proj = basis.project(&zl);
    let norm = dot(&proj, &proj).sqrt();
    let m = basis.m() as f64;
    if norm < 1e-12 {
        return Ok(DepartureDiagnostic {
            mean_direction: vec![0.0; basis.m()],
            kappa: 0.0,
        });
    }
    let kappa = m * norm / (sigma * std::f64::consts::SQRT_2);
    Ok(DepartureDiagnostic {
        mean_direction: proj.iter().map(|v| v / norm).collect(),
        kappa,
    })
}

/// Per-replicate state for the split-sample test: the training size, the
/// training-phase encompassing set, and the assessment-rows design and
/// response, built once and shared across the submodel sweep.
#[derive(Debug)]
pub struct SplitState {
    pub train_n: usize,
    pub encompassing_train: ModelSubset,
    pub full_design_test: Design,
    pub y_test: Vec<f64>,
    pub intercept: bool,
}

impl SplitState {
    pub fn new(
        x: &Mat,
        y: &[f64],
        intercept: bool,
        train_n: usize,
        encompassing_train: ModelSubset,
    ) -> Result<SplitState> {
        let n = x.rows();
        if train_n == 0 || train_n >= n {
            return Err(Error::domain(format!(
                "training size {train_n} must leave a nonempty assessment part of n = {n}"
            )));
        }
        if encompassing_train.is_empty() {
            return Err(Error::insufficient(
                "training reduction selected no variables".to_string(),
            ));
        }
        let test_rows: Vec<usize> = (train_n..n).collect();
        let full_cols = gather_rows(x, &test_rows, encompassing_train.indices());
        let full_design_test = Design::new(augment_intercept(full_cols, intercept), intercept)?;
        let y_test: Vec<f64> = test_rows.iter().map(|&i| y[i]).collect();
        Ok(SplitState {
            train_n,
            encompassing_train,
            full_design_test,
            y_test,
            intercept,
        })
    }

    fn test(&self, submodel: &ModelSubset, x: &Mat) -> Result<TestOutcome> {
        if !submodel.is_subset_of(&self.encompassing_train) {
            return Ok(TestOutcome {
                method: TestMethod::SplitF,
                statistic: 0.0,
                p_value: 0.0,
                null_params: NullRef::F { df1: 0, df2: 0 },
                submodel: submodel.clone(),
                excluded_by_construction: true,
            });
        }
        let test_rows: Vec<usize> = (self.train_n..x.rows()).collect();
        let sub_cols = gather_rows(x, &test_rows, submodel.indices());
        let sub = Design::new(augment_intercept(sub_cols, self.intercept), self.intercept)?;
        let ft = crate::linalg::f_statistic(&sub, &self.full_design_test, &self.y_test)?;
        Ok(TestOutcome {
            method: TestMethod::SplitF,
            statistic: if ft.f.is_finite() { ft.f } else { f64::MAX },
            p_value: ft.p,
            null_params: NullRef::F {
                df1: ft.df1,
                df2: ft.df2,
            },
            submodel: submodel.clone(),
            excluded_by_construction: false,
        })
    }
}

/// A test procedure bound to its per-dataset shared state (variance
/// estimate, replicate bundle, encompassing designs), applied submodel by
/// submodel when building a confidence set.
pub enum BoundTester<'a> {
    Cosufficient {
        x: &'a Mat,
        y: &'a [f64],
        intercept: bool,
        k: usize,
        var_est: &'a VarianceEstimate,
        bundle: &'a ReplicateBundle,
    },
    Ancillary {
        x: &'a Mat,
        y: &'a [f64],
        intercept: bool,
        var_est: &'a VarianceEstimate,
    },
    NaiveF {
        x: &'a Mat,
        y: &'a [f64],
        intercept: bool,
        encompassing: &'a ModelSubset,
        full_design: &'a Design,
    },
    SplitF {
        x: &'a Mat,
        state: &'a SplitState,
    },
}

impl BoundTester<'_> {
    pub fn test(&self, submodel: &ModelSubset) -> Result<TestOutcome> {
        self.test_with(submodel, None)
    }

    /// Test a submodel. `shared_design` may carry a prebuilt full-sample
    /// design for this submodel (same columns and intercept convention);
    /// methods operating on the full sample reuse it, the split test
    /// ignores it.
    pub fn test_with(
        &self,
        submodel: &ModelSubset,
        shared_design: Option<&Design>,
    ) -> Result<TestOutcome> {
        match self {
            BoundTester::Cosufficient {
                x,
                y,
                intercept,
                k,
                var_est,
                bundle,
            } => match shared_design {
                Some(design) => cosufficient_on_design(
                    submodel, design, *k, var_est, bundle,
                ),
                None => cosufficient_test(
                    submodel,
                    x,
                    y,
                    *intercept,
                    *k,
                    var_est,
                    BundleSource::Shared(bundle),
                ),
            },
            BoundTester::Ancillary {
                x,
                y,
                intercept,
                var_est,
            } => match shared_design {
                Some(design) => ancillary_on_design(submodel, design, y, var_est),
                None => ancillary_test(submodel, x, y, *intercept, var_est),
            },
            BoundTester::NaiveF {
                x,
                y,
                intercept,
                encompassing,
                full_design,
            } => {
                if !submodel.is_subset_of(encompassing) {
                    return Err(Error::NotNested);
                }
                let built;
                let sub = match shared_design {
                    Some(d) => d,
                    None => {
                        built = Design::from_columns(x, submodel.indices(), *intercept)?;
                        &built
                    }
                };
                let ft = crate::linalg::f_statistic(sub, full_design, y)?;
                Ok(TestOutcome {
                    method: TestMethod::NaiveF,
                    statistic: if ft.f.is_finite() { ft.f } else { f64::MAX },
                    p_value: ft.p,
                    null_params: NullRef::F {
                        df1: ft.df1,
                        df2: ft.df2,
                    },
                    submodel: submodel.clone(),
                    excluded_by_construction: false,
                })
            }
            BoundTester::SplitF { x, state } => state.test(submodel, x),
        }
    }

    pub fn method(&self) -> TestMethod {
        match self {
            BoundTester::Cosufficient { k, .. } => TestMethod::Cosufficient { k: *k },
            BoundTester::Ancillary { .. } => TestMethod::Ancillary,
            BoundTester::NaiveF { .. } => TestMethod::NaiveF,
            BoundTester::SplitF { .. } => TestMethod::SplitF,
        }
    }
}

fn cosufficient_on_design(
    submodel: &ModelSubset,
    design: &Design,
    k: usize,
    var_est: &VarianceEstimate,
    bundle: &ReplicateBundle,
) -> Result<TestOutcome> {
    let n = design.n();
    let d = design.d_theta();
    let m = n - d;
    if m < 2 {
        return Err(Error::insufficient(format!(
            "need n - d_theta >= 2, got n = {n}, d_theta = {d}"
        )));
    }
    if !(var_est.sigma2_hat > 0.0) {
        return Err(Error::domain(
            "co-sufficient test needs a positive variance estimate".to_string(),
        ));
    }
    if bundle.n() != n {
        return Err(Error::DimensionMismatch {
            context: "shared bundle length",
            expected: n,
            got: bundle.n(),
        });
    }
    if bundle.k() != k {
        return Err(Error::DimensionMismatch {
            context: "shared bundle replicate count",
            expected: k,
            got: bundle.k(),
        });
    }
    let mut tails: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v = bundle.y_reps().col(j).to_vec();
        design.qr().qt_apply(&mut v);
        let tail = &v[d..];
        let norm = dot(tail, tail).sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegenerateProjection);
        }
        tails.push(tail.iter().map(|t| t / norm).collect());
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += dot(&tails[i], &tails[j]);
        }
    }
    let statistic = (2.0 * m as f64).sqrt() / k as f64 * sum;
    Ok(TestOutcome {
        method: TestMethod::Cosufficient { k },
        statistic,
        p_value: dist::normal_sf(statistic),
        null_params: NullRef::StandardNormal { k, m },
        submodel: submodel.clone(),
        excluded_by_construction: false,
    })
}

fn ancillary_on_design(
    submodel: &ModelSubset,
    design: &Design,
    y: &[f64],
    var_est: &VarianceEstimate,
) -> Result<TestOutcome> {
    let m = design.n() - design.d_theta();
    if m < 2 {
        return Err(Error::insufficient(
            "need n - d_theta >= 2 for the ancillary test".to_string(),
        ));
    }
    if !(var_est.sigma2_hat > 0.0) {
        return Err(Error::domain(
            "ancillary test needs a positive variance estimate".to_string(),
        ));
    }
    let rss = design.qr().residual_sq_norm(y);
    let statistic = rss / var_est.sigma2_hat;
    Ok(TestOutcome {
        method: TestMethod::Ancillary,
        statistic,
        p_value: dist::chi2_sf(statistic, m as f64)?,
        null_params: NullRef::ChiSquared {
            df: m,
            nu_sigma: var_est.nu,
        },
        submodel: submodel.clone(),
        excluded_by_construction: false,
    })
}
