//! Factorial simulation harness: Toeplitz data generation, replicate
//! execution for every method-by-reducer combination on common random
//! numbers, coverage/size tables with Monte Carlo standard errors, and
//! marginal-effect estimates over half-replicate factorial designs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::confset::{build_confidence_sets_shared, ConfidenceSet};
use crate::error::{Error, Result};
use crate::linalg::{Design, Mat};
use crate::modeltest::{BoundTester, SplitState};
use crate::randomize::{gamma_coefficients, pseudo_replicates, ReplicateBundle};
use crate::reduce::{
    cox_reduction, split_indices, undertuned_lasso, CoxReduction, FixedScreener, ModelSubset,
    Screener, UndertunedLasso,
};
use crate::varest::{mrcv_variance, VarEstConfig, VarianceEstimate};

/// Assessment-phase fraction used by the split-sample cells: reduction on
/// the leading 60% of rows, F comparison on the remaining 40%.
pub const SPLIT_TRAIN_FRAC: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Cosufficient,
    Ancillary,
    NaiveF,
    SplitF,
}

impl MethodName {
    pub fn parse(s: &str) -> Result<MethodName> {
        match s {
            "cosufficient" => Ok(MethodName::Cosufficient),
            "ancillary" => Ok(MethodName::Ancillary),
            "naive_f" | "naive-f" => Ok(MethodName::NaiveF),
            "split_f" | "split-f" => Ok(MethodName::SplitF),
            other => Err(Error::domain(format!(
                "unknown method '{other}' (expected cosufficient, ancillary, naive_f or split_f)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerName {
    Cox,
    Lasso,
}

impl ReducerName {
    pub fn parse(s: &str) -> Result<ReducerName> {
        match s {
            "cox" => Ok(ReducerName::Cox),
            "lasso" => Ok(ReducerName::Lasso),
            other => Err(Error::domain(format!(
                "unknown reducer '{other}' (expected cox or lasso)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ReducerName::Cox => "cox",
            ReducerName::Lasso => "lasso",
        }
    }
}

/// Full description of one simulation experiment.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    /// Signal magnitude: the generating coefficients are `(t, t, t, 0, ..)`.
    pub t: f64,
    pub sigma2: f64,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<MethodName>,
    pub k_values: Vec<usize>,
    pub reducers: Vec<ReducerName>,
    pub alpha: f64,
    pub max_model_size: usize,
    pub max_keep: usize,
    pub gamma_frac: f64,
    /// Training fraction for the split-sample cells.
    pub split_frac: f64,
    /// Worker threads for the replicate loop; 0 means all available.
    pub workers: usize,
}

impl SimulationConfig {
    /// A Table-style default: all methods, both reducers, k in {2, 8}.
    pub fn table_defaults(n: usize, t: f64, rho: f64) -> SimulationConfig {
        SimulationConfig {
            n,
            p: 400,
            rho,
            t,
            sigma2: 1.0,
            replicates: 200,
            seed: 20_260_810,
            methods: vec![
                MethodName::Cosufficient,
                MethodName::Ancillary,
                MethodName::NaiveF,
                MethodName::SplitF,
            ],
            k_values: vec![2, 8],
            reducers: vec![ReducerName::Cox, ReducerName::Lasso],
            alpha: 0.05,
            max_model_size: 5,
            max_keep: 15,
            gamma_frac: 0.6,
            split_frac: SPLIT_TRAIN_FRAC,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::domain(format!("n must be >= 20, got {}", self.n)));
        }
        if self.p < 4 {
            return Err(Error::domain(format!("p must be >= 4, got {}", self.p)));
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(Error::domain(format!(
                "rho must lie in [0,1), got {}",
                self.rho
            )));
        }
        if !self.t.is_finite() {
            return Err(Error::domain("t must be finite".to_string()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::domain(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if self.replicates < 1 {
            return Err(Error::domain("replicates must be >= 1".to_string()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::domain("methods must be nonempty".to_string()));
        }
        if self.methods.contains(&MethodName::Cosufficient) && self.k_values.is_empty() {
            return Err(Error::domain(
                "k_values must be nonempty when the co-sufficient method is run".to_string(),
            ));
        }
        if self.k_values.iter().any(|&k| k < 2) {
            return Err(Error::domain("every k must be >= 2".to_string()));
        }
        if self.reducers.is_empty() {
            return Err(Error::domain("reducers must be nonempty".to_string()));
        }
        if self.max_model_size < 1 {
            return Err(Error::domain("max_model_size must be >= 1".to_string()));
        }
        if self.max_keep < 1 {
            return Err(Error::domain("max_keep must be >= 1".to_string()));
        }
        if !(self.gamma_frac > 0.5 && self.gamma_frac <= 1.0) {
            return Err(Error::domain(format!(
                "gamma_frac must lie in (0.5, 1], got {}",
                self.gamma_frac
            )));
        }
        if !(self.split_frac > 0.0 && self.split_frac < 1.0) {
            return Err(Error::domain(format!(
                "split_frac must lie in (0,1), got {}",
                self.split_frac
            )));
        }
        Ok(())
    }

    /// The (reducer, method) cells this configuration runs, in canonical
    /// reporting order: full-sample cells per reducer, then split cells.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &reducer in &self.reducers {
            for &method in &self.methods {
                match method {
                    MethodName::Cosufficient => {
                        for &k in &self.k_values {
                            cells.push(Cell {
                                reducer,
                                kind: CellKind::Cosufficient { k },
                            });
                        }
                    }
                    MethodName::Ancillary => cells.push(Cell {
                        reducer,
                        kind: CellKind::Ancillary,
                    }),
                    MethodName::NaiveF => cells.push(Cell {
                        reducer,
                        kind: CellKind::NaiveF,
                    }),
                    MethodName::SplitF => {}
                }
            }
        }
        if self.methods.contains(&MethodName::SplitF) {
            for &reducer in &self.reducers {
                cells.push(Cell {
                    reducer,
                    kind: CellKind::SplitF,
                });
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Cosufficient { k: usize },
    Ancillary,
    NaiveF,
    SplitF,
}

/// One method-by-reducer combination of the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub reducer: ReducerName,
    pub kind: CellKind,
}

impl Cell {
    pub fn method_id(&self) -> String {
        match self.kind {
            CellKind::Cosufficient { k } => format!("cosufficient_k{k}"),
            CellKind::Ancillary => "ancillary".to_string(),
            CellKind::NaiveF => "naive_f".to_string(),
            CellKind::SplitF => "split_f".to_string(),
        }
    }

    /// Row label in the style of the published tables.
    pub fn label(&self) -> String {
        let reducer = match self.reducer {
            ReducerName::Cox => "Cox",
            ReducerName::Lasso => "Lasso",
        };
        match self.kind {
            CellKind::Cosufficient { k } => format!("{reducer} + co-sufficient (k = {k})"),
            CellKind::Ancillary => format!("{reducer} + ancillary"),
            CellKind::NaiveF => format!("{reducer} + F test"),
            CellKind::SplitF => format!("split {reducer} + split F test"),
        }
    }
}

/// Outcome of one cell on one replicate.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateResult {
    pub survived: bool,
    pub covered: bool,
    pub set_size: usize,
    pub method: String,
    pub reducer: String,
    pub seed_used: u64,
    pub failed: bool,
}

/// splitmix64-style seed derivation; used to key every random stream off
/// the master seed so that runs are reproducible from the manifest alone.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Salt tags for the named random streams.
pub mod seed_salt {
    pub const REPLICATE: u64 = 0x01;
    pub const DATA: u64 = 0x02;
    pub const COX_GRID: u64 = 0x03;
    pub const COX_GRID_SPLIT: u64 = 0x04;
    /// Noise panel for the co-sufficient bundle at a given k: use
    /// `NOISE_BASE + k`.
    pub const NOISE_BASE: u64 = 0x100;
}

/// `n` rows drawn independently from a zero-mean Gaussian with Toeplitz
/// covariance `rho^|i-j|`, generated by the first-order autoregressive
/// recursion across columns (exact for this covariance).
pub fn gen_toeplitz_design(n: usize, p: usize, rho: f64, rng: &mut ChaCha8Rng) -> Result<Mat> {
    if !(rho >= 0.0 && rho < 1.0) {
        return Err(Error::domain(format!("rho must lie in [0,1), got {rho}")));
    }
    let innovation = (1.0 - rho * rho).sqrt();
    let mut x = Mat::zeros(n, p);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let z: f64 = StandardNormal.sample(rng);
            let v = if j == 0 { z } else { rho * prev + innovation * z };
            x.set(i, j, v);
            prev = v;
        }
    }
    Ok(x)
}

/// Response under the sparse generating model: the first three covariates
/// carry coefficient `t`, the rest are null; noise variance `sigma2`.
pub fn gen_response(x: &Mat, t: f64, sigma2: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if x.cols() < 3 {
        return Err(Error::domain(format!(
            "response generation needs p >= 3, got {}",
            x.cols()
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::domain(format!(
            "sigma2 must be nonnegative, got {sigma2}"
        )));
    }
    let sd = sigma2.sqrt();
    Ok((0..x.rows())
        .map(|i| {
            let mean = t * (x.get(i, 0) + x.get(i, 1) + x.get(i, 2));
            let eps: f64 = StandardNormal.sample(rng);
            mean + sd * eps
        })
        .collect())
}

/// The generating model of the simulation: the first three variables.
pub fn true_model(p: usize) -> ModelSubset {
    ModelSubset::new(vec![0, 1, 2], p).expect("p >= 3")
}

/// Test-time replacements for pipeline stages, used by calibration checks.
#[derive(Debug, Clone, Default)]
pub struct ReplicateOverrides {
    /// Use a known error variance instead of the cross-validated estimate.
    pub oracle_sigma2: Option<f64>,
    /// Force every reducer (full-sample and split) to this selection.
    pub fixed_encompassing: Option<ModelSubset>,
}

/// Dataset for one replicate, derived deterministically from the master
/// seed and the replicate index; identical across all cells.
pub fn replicate_dataset(config: &SimulationConfig, rep: usize) -> Result<(Mat, Vec<f64>, u64)> {
    let rep_seed = derive_seed(
        config.seed,
        seed_salt::REPLICATE.wrapping_add((rep as u64) << 8),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, seed_salt::DATA));
    let x = gen_toeplitz_design(config.n, config.p, config.rho, &mut rng)?;
    let y = gen_response(&x, config.t, config.sigma2, &mut rng)?;
    Ok((x, y, rep_seed))
}

fn reduce_with(
    reducer: ReducerName,
    x: &Mat,
    y: &[f64],
    max_keep: usize,
    grid_seed: u64,
) -> Result<ModelSubset> {
    match reducer {
        ReducerName::Cox => Ok(cox_reduction(x, y, &CoxReduction::new(max_keep, grid_seed))?.selected),
        ReducerName::Lasso => Ok(undertuned_lasso(x, y, max_keep)?.selected),
    }
}

/// Executes every cell of the configuration on the replicate's dataset.
/// Stage failures mark the affected cells failed; the replicate never
/// aborts the experiment.
pub fn run_replicate(config: &SimulationConfig, rep: usize) -> Result<Vec<ReplicateResult>> {
    run_replicate_with(config, rep, &ReplicateOverrides::default())
}

pub fn run_replicate_with(
    config: &SimulationConfig,
    rep: usize,
    overrides: &ReplicateOverrides,
) -> Result<Vec<ReplicateResult>> {
    let cells = config.cells();
    let (x, y, rep_seed) = replicate_dataset(config, rep)?;
    let truth = true_model(config.p);

    let fail_all = |cells: &[Cell]| -> Vec<ReplicateResult> {
        cells
            .iter()
            .map(|c| ReplicateResult {
                survived: false,
                covered: false,
                set_size: 0,
                method: c.method_id(),
                reducer: c.reducer.label().to_string(),
                seed_used: rep_seed,
                failed: true,
            })
            .collect()
    };

    // Shared variance estimate (screened by the undertuned lasso).
    let needs_sigma = cells.iter().any(|c| {
        matches!(c.kind, CellKind::Cosufficient { .. } | CellKind::Ancillary)
    });
    let var_est: Option<VarianceEstimate> = if !needs_sigma {
        None
    } else if let Some(s2) = overrides.oracle_sigma2 {
        Some(VarianceEstimate::oracle(s2))
    } else {
        let screener: Box<dyn Screener> = match &overrides.fixed_encompassing {
            Some(subset) => Box::new(FixedScreener {
                subset: subset.clone(),
            }),
            None => Box::new(UndertunedLasso {
                max_keep: config.max_keep,
            }),
        };
        let cfg = VarEstConfig {
            gamma_frac: config.gamma_frac,
            intercept: false,
            shuffle_seed: None,
        };
        match mrcv_variance(&x, &y, screener.as_ref(), &cfg) {
            Ok(v) => Some(v),
            Err(_) => return Ok(fail_all(&cells)),
        }
    };

    // Shared noise bundles per k.
    let mut bundles: Vec<(usize, ReplicateBundle)> = Vec::new();
    if let Some(ve) = &var_est {
        let mut ks: Vec<usize> = cells
            .iter()
            .filter_map(|c| match c.kind {
                CellKind::Cosufficient { k } => Some(k),
                _ => None,
            })
            .collect();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            let plan = match gamma_coefficients(k, ve.sigma_hat()) {
                Ok(p) => p,
                Err(_) => return Ok(fail_all(&cells)),
            };
            let seed = derive_seed(rep_seed, seed_salt::NOISE_BASE + k as u64);
            match pseudo_replicates(&y, &plan, seed) {
                Ok(b) => bundles.push((k, b)),
                Err(_) => return Ok(fail_all(&cells)),
            }
        }
    }

    // Full-sample encompassing sets per reducer.
    let mut enc_full: Vec<(ReducerName, Result<ModelSubset>)> = Vec::new();
    let mut enc_train: Vec<(ReducerName, Result<(usize, ModelSubset)>)> = Vec::new();
    let needs_split = cells.iter().any(|c| matches!(c.kind, CellKind::SplitF));
    for &reducer in &config.reducers {
        if cells
            .iter()
            .any(|c| c.reducer == reducer && !matches!(c.kind, CellKind::SplitF))
        {
            let e = match &overrides.fixed_encompassing {
                Some(subset) => Ok(subset.clone()),
                None => reduce_with(
                    reducer,
                    &x,
                    &y,
                    config.max_keep,
                    derive_seed(rep_seed, seed_salt::COX_GRID),
                ),
            };
            enc_full.push((reducer, e));
        }
        if needs_split {
            let res = (|| {
                let (train, _test) = split_indices(config.n, config.split_frac)?;
                let train_n = train.len();
                let all: Vec<usize> = (0..config.p).collect();
                let x_train = gather_rows(&x, &train, &all);
                let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let e = match &overrides.fixed_encompassing {
                    Some(subset) => subset.clone(),
                    None => reduce_with(
                        reducer,
                        &x_train,
                        &y_train,
                        config.max_keep,
                        derive_seed(rep_seed, seed_salt::COX_GRID_SPLIT),
                    )?,
                };
                Ok((train_n, e))
            })();
            enc_train.push((reducer, res));
        }
    }

    let mut results = Vec::with_capacity(cells.len());
    for &reducer in &config.reducers {
        // Full-sample cells for this reducer share one enumeration sweep.
        let reducer_cells: Vec<Cell> = cells
            .iter()
            .copied()
            .filter(|c| c.reducer == reducer && !matches!(c.kind, CellKind::SplitF))
            .collect();
        if reducer_cells.is_empty() {
            continue;
        }
        let enc = enc_full
            .iter()
            .find(|(r, _)| *r == reducer)
            .map(|(_, e)| e)
            .expect("computed above");
        let enc = match enc {
            Ok(e) => e.clone(),
            Err(_) => {
                results.extend(fail_all(&reducer_cells));
                continue;
            }
        };
        let survived = truth.is_subset_of(&enc);
        if enc.is_empty() {
            for c in &reducer_cells {
                results.push(ReplicateResult {
                    survived,
                    covered: false,
                    set_size: 0,
                    method: c.method_id(),
                    reducer: c.reducer.label().to_string(),
                    seed_used: rep_seed,
                    failed: false,
                });
            }
            continue;
        }
        let full_design = match Design::from_columns(&x, enc.indices(), false) {
            Ok(d) => d,
            Err(_) => {
                results.extend(fail_all(&reducer_cells));
                continue;
            }
        };
        let mut testers: Vec<BoundTester<'_>> = Vec::new();
        let mut ok = true;
        for c in &reducer_cells {
            match c.kind {
                CellKind::Cosufficient { k } => {
                    let ve = var_est.as_ref().expect("needed by cell");
                    let bundle = bundles
                        .iter()
                        .find(|(kk, _)| *kk == k)
                        .map(|(_, b)| b)
                        .expect("prepared above");
                    testers.push(BoundTester::Cosufficient {
                        x: &x,
                        y: &y,
                        intercept: false,
                        k,
                        var_est: ve,
                        bundle,
                    });
                }
                CellKind::Ancillary => {
                    let ve = var_est.as_ref().expect("needed by cell");
                    testers.push(BoundTester::Ancillary {
                        x: &x,
                        y: &y,
                        intercept: false,
                        var_est: ve,
                    });
                }
                CellKind::NaiveF => testers.push(BoundTester::NaiveF {
                    x: &x,
                    y: &y,
                    intercept: false,
                    encompassing: &enc,
                    full_design: &full_design,
                }),
                CellKind::SplitF => {
                    ok = false;
                }
            }
        }
        if !ok {
            results.extend(fail_all(&reducer_cells));
            continue;
        }
        match build_confidence_sets_shared(
            Some(&x),
            false,
            &testers,
            &enc,
            config.alpha,
            config.max_model_size,
        ) {
            Ok(sets) => {
                for (c, set) in reducer_cells.iter().zip(&sets) {
                    results.push(cell_result(c, set, survived, &truth, rep_seed));
                }
            }
            Err(_) => results.extend(fail_all(&reducer_cells)),
        }
    }

    // Split cells.
    for &reducer in &config.reducers {
        let cell = cells
            .iter()
            .copied()
            .find(|c| c.reducer == reducer && matches!(c.kind, CellKind::SplitF));
        let Some(cell) = cell else { continue };
        let state = enc_train
            .iter()
            .find(|(r, _)| *r == reducer)
            .map(|(_, e)| e)
            .expect("computed above");
        let (train_n, enc) = match state {
            Ok(v) => v.clone(),
            Err(_) => {
                results.extend(fail_all(&[cell]));
                continue;
            }
        };
        let survived = truth.is_subset_of(&enc);
        if enc.is_empty() {
            results.push(ReplicateResult {
                survived,
                covered: false,
                set_size: 0,
                method: cell.method_id(),
                reducer: cell.reducer.label().to_string(),
                seed_used: rep_seed,
                failed: false,
            });
            continue;
        }
        let split_state = match SplitState::new(&x, &y, false, train_n, enc.clone()) {
            Ok(s) => s,
            Err(_) => {
                results.extend(fail_all(&[cell]));
                continue;
            }
        };
        let tester = BoundTester::SplitF {
            x: &x,
            state: &split_state,
        };
        match build_confidence_sets_shared(
            None,
            false,
            std::slice::from_ref(&tester),
            &enc,
            config.alpha,
            config.max_model_size,
        ) {
            Ok(mut sets) => {
                let set = sets.remove(0);
                results.push(cell_result(&cell, &set, survived, &truth, rep_seed));
            }
            Err(_) => results.extend(fail_all(&[cell])),
        }
    }

    // Restore canonical cell order.
    let mut ordered = Vec::with_capacity(cells.len());
    for c in &cells {
        let pos = results
            .iter()
            .position(|r| r.method == c.method_id() && r.reducer == c.reducer.label())
            .expect("every cell produced a result");
        ordered.push(results.remove(pos));
    }
    Ok(ordered)
}

fn cell_result(
    cell: &Cell,
    set: &ConfidenceSet,
    survived: bool,
    truth: &ModelSubset,
    rep_seed: u64,
) -> ReplicateResult {
    let covered = set.contains(truth);
    ReplicateResult {
        survived,
        covered,
        set_size: set.len(),
        method: cell.method_id(),
        reducer: cell.reducer.label().to_string(),
        seed_used: rep_seed,
        failed: false,
    }
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

/// One aggregated row of an experiment table.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRow {
    pub method: String,
    pub reducer: String,
    pub label: String,
    pub coverage: f64,
    pub coverage_se: Option<f64>,
    pub survival: f64,
    pub survival_se: Option<f64>,
    pub mean_size: f64,
    pub size_se: Option<f64>,
    /// Mean of `log(set_size + 1)` across replicates; feeds the
    /// marginal-effect estimates and is not part of the CSV schema.
    pub mean_log_size: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    pub replicates: usize,
}

/// Runs all replicates in a worker pool and aggregates per cell. The
/// replicate loop is a parallel map whose results are reduced in replicate
/// order, so the table is identical for any worker count.
pub fn run_experiment(config: &SimulationConfig) -> Result<ExperimentTable> {
    run_experiment_with(config, &ReplicateOverrides::default())
}

pub fn run_experiment_with(
    config: &SimulationConfig,
    overrides: &ReplicateOverrides,
) -> Result<ExperimentTable> {
    config.validate()?;
    let cells = config.cells();
    let run = || -> Result<Vec<Vec<ReplicateResult>>> {
        (0..config.replicates)
            .into_par_iter()
            .map(|rep| run_replicate_with(config, rep, overrides))
            .collect()
    };
    let per_rep: Vec<Vec<ReplicateResult>> = if config.workers == 0 {
        run()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?;
        pool.install(run)?
    };

    let mut rows = Vec::with_capacity(cells.len());
    for (ci, cell) in cells.iter().enumerate() {
        let outcomes: Vec<&ReplicateResult> = per_rep.iter().map(|r| &r[ci]).collect();
        let failed = outcomes.iter().filter(|o| o.failed).count();
        let good: Vec<&&ReplicateResult> = outcomes.iter().filter(|o| !o.failed).collect();
        let r_eff = good.len();
        let (coverage, coverage_se) = binary_mean_se(good.iter().map(|o| o.covered), r_eff);
        let (survival, survival_se) = binary_mean_se(good.iter().map(|o| o.survived), r_eff);
        let sizes: Vec<f64> = good.iter().map(|o| o.set_size as f64).collect();
        let mean_size = mean(&sizes);
        let size_se = empirical_se(&sizes);
        let logs: Vec<f64> = sizes.iter().map(|s| (s + 1.0).ln()).collect();
        rows.push(ExperimentRow {
            method: cell.method_id(),
            reducer: cell.reducer.label().to_string(),
            label: cell.label(),
            coverage,
            coverage_se,
            survival,
            survival_se,
            mean_size,
            size_se,
            mean_log_size: mean(&logs),
            failed,
        });
    }
    Ok(ExperimentTable {
        rows,
        replicates: config.replicates,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn binary_mean_se(flags: impl Iterator<Item = bool>, n: usize) -> (f64, Option<f64>) {
    if n == 0 {
        return (f64::NAN, None);
    }
    let cnt = flags.filter(|&b| b).count();
    let p = cnt as f64 / n as f64;
    let se = if n > 1 {
        Some((p * (1.0 - p) / n as f64).sqrt())
    } else {
        None
    };
    (p, se)
}

fn empirical_se(v: &[f64]) -> Option<f64> {
    let n = v.len();
    if n < 2 {
        return None;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    Some((var / n as f64).sqrt())
}

impl ExperimentTable {
    /// CSV with the fixed schema
    /// `method,reducer,coverage,coverage_se,survival,survival_se,mean_size,size_se`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,reducer,coverage,coverage_se,survival,survival_se,mean_size,size_se\n");
        for r in &self.rows {
            let fmt_opt = |v: &Option<f64>| match v {
                Some(x) => format!("{x:.6}"),
                None => "NA".to_string(),
            };
            out.push_str(&format!(
                "{},{},{:.6},{},{:.6},{},{:.6},{}\n",
                r.method,
                r.reducer,
                r.coverage,
                fmt_opt(&r.coverage_se),
                r.survival,
                fmt_opt(&r.survival_se),
                r.mean_size,
                fmt_opt(&r.size_se),
            ));
        }
        out
    }

    /// Parse a table back from its CSV rendering. The mean log size is not
    /// part of the schema and comes back as NaN.
    pub fn from_csv_str(s: &str) -> Result<ExperimentTable> {
        let mut lines = s.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::domain("empty results file".to_string()))?;
        if header.trim()
            != "method,reducer,coverage,coverage_se,survival,survival_se,mean_size,size_se"
        {
            return Err(Error::domain(format!(
                "unexpected results header: {header}"
            )));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::domain(format!("bad number '{s}': {e}")))
            }
        };
        let parse_num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::domain(format!("bad number '{s}': {e}")))
        };
        let mut rows = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::domain(format!(
                    "line {}: expected 8 fields, got {}",
                    no + 2,
                    f.len()
                )));
            }
            let method = f[0].to_string();
            let reducer = f[1].to_string();
            let cell_label = csv_label(&method, &reducer);
            rows.push(ExperimentRow {
                method,
                reducer,
                label: cell_label,
                coverage: parse_num(f[2])?,
                coverage_se: parse_opt(f[3])?,
                survival: parse_num(f[4])?,
                survival_se: parse_opt(f[5])?,
                mean_size: parse_num(f[6])?,
                size_se: parse_opt(f[7])?,
                mean_log_size: f64::NAN,
                failed: 0,
            });
        }
        if rows.is_empty() {
            return Err(Error::domain("results file has no rows".to_string()));
        }
        Ok(ExperimentTable {
            rows,
            replicates: 0,
        })
    }

    /// Aligned plain-text rendering in the style of the published tables:
    /// probabilities as `0.96 (0.01)`, sizes as `1209 (43)`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(10)
            .max(10);
        out.push_str(&format!(
            "{:label_w$}  {:>14}  {:>14}  {:>12}\n",
            "", "P(E* in M)", "P(E* in Ehat)", "E|M|"
        ));
        for r in &self.rows {
            let prob = |v: f64, se: &Option<f64>| match se {
                Some(s) => format!("{:.2} ({:.2})", round_half_up(v, 100.0), round_half_up(*s, 100.0)),
                None => format!("{:.2} (NA)", round_half_up(v, 100.0)),
            };
            let size = |v: f64, se: &Option<f64>| match se {
                Some(s) => format!("{:.0} ({:.0})", round_half_up(v, 1.0), round_half_up(*s, 1.0)),
                None => format!("{:.0} (NA)", round_half_up(v, 1.0)),
            };
            out.push_str(&format!(
                "{:label_w$}  {:>14}  {:>14}  {:>12}\n",
                r.label,
                prob(r.coverage, &r.coverage_se),
                prob(r.survival, &r.survival_se),
                size(r.mean_size, &r.size_se),
            ));
        }
        out
    }
}

/// Decimal half-up rounding at a given scale (100 for two places), with a
/// tiny nudge so values stored just below a representable boundary, such as
/// 0.955, round the way their decimal spelling reads.
fn round_half_up(v: f64, scale: f64) -> f64 {
    if v < 0.0 {
        return -round_half_up(-v, scale);
    }
    (v * scale + 0.5 + 1e-9).floor() / scale
}

fn csv_label(method: &str, reducer: &str) -> String {
    let red = match reducer {
        "cox" => "Cox",
        "lasso" => "Lasso",
        other => other,
    };
    if let Some(k) = method.strip_prefix("cosufficient_k") {
        format!("{red} + co-sufficient (k = {k})")
    } else {
        match method {
            "ancillary" => format!("{red} + ancillary"),
            "naive_f" => format!("{red} + F test"),
            "split_f" => format!("split {red} + split F test"),
            other => format!("{red} + {other}"),
        }
    }
}

/// Factor levels of one table in the half-replicate (coded high/low).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FactorLevels {
    pub n_high: bool,
    pub t_high: bool,
    pub rho_high: bool,
}

impl FactorLevels {
    fn coded(&self) -> [f64; 3] {
        let c = |b: bool| if b { 1.0 } else { -1.0 };
        [c(self.n_high), c(self.t_high), c(self.rho_high)]
    }
}

/// Marginal effects of the three factors for one method-by-reducer row:
/// multiplicative on the odds of coverage, additive on the log of the
/// expected set size (plus one). `None` marks non-estimable entries
/// (a cell with 0% or 100% coverage).
#[derive(Debug, Clone, Serialize)]
pub struct EffectRow {
    pub method: String,
    pub reducer: String,
    /// Odds-scale effects of raising n, t, rho from low to high.
    pub coverage_odds: [Option<f64>; 3],
    /// Log-scale effects on the expected size.
    pub size_log: [Option<f64>; 3],
}

/// Estimates marginal effects from a half-replicate (or fuller) factorial
/// of experiment tables tagged with their factor levels.
///
/// Coverage effects come from a saturated main-effects logistic fit to the
/// covered indicators: with the orthogonal half-replicate coding the
/// maximum-likelihood solution reproduces the cell logits exactly, and the
/// low-to-high odds effect for a factor is the exponential of the
/// difference between the mean cell logits at its high and low levels.
/// Size effects are the analogous mean differences of `log(size + 1)`.
pub fn marginal_effects(tables: &[(FactorLevels, ExperimentTable)]) -> Result<Vec<EffectRow>> {
    if tables.len() != 4 {
        return Err(Error::domain(format!(
            "need the 4 half-replicate cells, got {}",
            tables.len()
        )));
    }
    let mut seen = Vec::new();
    let mut sign_product: Option<f64> = None;
    for (levels, _) in tables {
        if seen.contains(levels) {
            return Err(Error::domain("duplicate factor-level cell".to_string()));
        }
        seen.push(*levels);
        let c = levels.coded();
        let prod = c[0] * c[1] * c[2];
        match sign_product {
            None => sign_product = Some(prod),
            Some(p) if p == prod => {}
            _ => {
                return Err(Error::domain(
                    "cells do not form a half-replicate (inconsistent defining contrast)"
                        .to_string(),
                ))
            }
        }
    }

    let base = &tables[0].1;
    let mut out = Vec::new();
    for row in &base.rows {
        let mut logits = Vec::with_capacity(4);
        let mut logs = Vec::with_capacity(4);
        let mut coded = Vec::with_capacity(4);
        let mut estimable = true;
        for (levels, table) in tables {
            let Some(r) = table
                .rows
                .iter()
                .find(|r| r.method == row.method && r.reducer == row.reducer)
            else {
                return Err(Error::domain(format!(
                    "cell {}/{} missing from one table",
                    row.method, row.reducer
                )));
            };
            if r.coverage <= 0.0 || r.coverage >= 1.0 {
                estimable = false;
                logits.push(f64::NAN);
            } else {
                logits.push((r.coverage / (1.0 - r.coverage)).ln());
            }
            logs.push(r.mean_log_size);
            coded.push(levels.coded());
        }
        let contrast = |vals: &[f64], factor: usize| -> f64 {
            let hi: Vec<f64> = vals
                .iter()
                .zip(&coded)
                .filter(|(_, c)| c[factor] > 0.0)
                .map(|(v, _)| *v)
                .collect();
            let lo: Vec<f64> = vals
                .iter()
                .zip(&coded)
                .filter(|(_, c)| c[factor] < 0.0)
                .map(|(v, _)| *v)
                .collect();
            mean(&hi) - mean(&lo)
        };
        let coverage_odds = std::array::from_fn(|f| {
            if estimable {
                Some(contrast(&logits, f).exp())
            } else {
                None
            }
        });
        let size_log = std::array::from_fn(|f| {
            let v = contrast(&logs, f);
            if v.is_finite() {
                Some(v)
            } else {
                None
            }
        });
        out.push(EffectRow {
            method: row.method.clone(),
            reducer: row.reducer.clone(),
            coverage_odds,
            size_log,
        });
    }
    Ok(out)
}
