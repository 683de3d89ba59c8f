//! `confsets analyze`: build a confidence set of models for a CSV dataset.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use confsets::confset::{build_confidence_set, summarize, ConfidenceSet, SummaryReport};
use confsets::linalg::{Design, Mat};
use confsets::modeltest::{BoundTester, SplitState};
use confsets::randomize::{gamma_coefficients, pseudo_replicates};
use confsets::reduce::{
    cox_reduction, split_indices, undertuned_lasso, CoxReduction, ModelSubset, Screener,
    UndertunedLasso,
};
use confsets::simharness::{derive_seed, seed_salt, SPLIT_TRAIN_FRAC};
use confsets::varest::{mrcv_variance, VarEstConfig, VarianceEstimate};
use serde_json::json;

use crate::{ensure_out_dir, AppError, AppResult};

#[derive(Args)]
pub struct AnalyzeArgs {
    /// CSV file with a header row; one response column, numeric covariates.
    pub data: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Test procedure: cosufficient, ancillary, naive-f or split-f.
    #[arg(long, default_value = "cosufficient")]
    pub method: String,
    /// Pseudo-replicate count for the co-sufficient test.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Screening procedure: cox or lasso.
    #[arg(long, default_value = "cox")]
    pub reducer: String,
    #[arg(long, default_value_t = 5)]
    pub max_model_size: usize,
    #[arg(long, default_value_t = 15)]
    pub max_keep: usize,
    #[arg(long, default_value_t = 0.6)]
    pub gamma_frac: f64,
    #[arg(long, default_value_t = 20_260_810)]
    pub seed: u64,
    /// Include an intercept in every fitted model (the default).
    #[arg(long, overrides_with = "no_intercept")]
    pub intercept: bool,
    /// Fit without an intercept.
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

struct Dataset {
    x: Mat,
    y: Vec<f64>,
    names: Vec<String>,
}

fn read_dataset(path: &PathBuf, response: &str) -> AppResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AppError::Input(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| AppError::Input(format!("bad header row: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let Some(resp_idx) = headers.iter().position(|h| h == response) else {
        return Err(AppError::Input(format!(
            "response column '{response}' not found; available columns: {}",
            headers.join(", ")
        )));
    };
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != resp_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let mut y = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record.map_err(|e| AppError::Input(format!("malformed CSV: {e}")))?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".to_string());
        if record.len() != headers.len() {
            return Err(AppError::Input(format!(
                "line {line}: expected {} fields, got {}",
                headers.len(),
                record.len()
            )));
        }
        let mut c = 0;
        for (i, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                AppError::Input(format!(
                    "line {line}: value '{field}' in column '{}' is not numeric",
                    headers[i]
                ))
            })?;
            if !value.is_finite() {
                return Err(AppError::Input(format!(
                    "line {line}: non-finite value in column '{}'",
                    headers[i]
                )));
            }
            if i == resp_idx {
                y.push(value);
            } else {
                cols[c].push(value);
                c += 1;
            }
        }
    }
    if y.is_empty() {
        return Err(AppError::Input("no data rows".to_string()));
    }
    Ok(Dataset {
        x: Mat::from_columns(&cols),
        y,
        names,
    })
}

fn check_preconditions(args: &AnalyzeArgs, n: usize, p: usize, intercept: bool) -> AppResult<()> {
    let adj = usize::from(intercept);
    let stats = |msg: String| Err(AppError::Stats(msg));
    if p < 1 {
        return stats("no covariate columns".to_string());
    }
    if n < args.max_keep + adj + 3 {
        return stats(format!(
            "n = {n} too small relative to max_keep = {} (need at least {})",
            args.max_keep,
            args.max_keep + adj + 3
        ));
    }
    match args.method.as_str() {
        "cosufficient" | "ancillary" => {
            let n_used = (args.gamma_frac * n as f64).floor() as usize;
            let half = n_used / 2;
            if half < args.max_keep + adj + 2 {
                return stats(format!(
                    "variance estimation needs floor(gamma n)/2 > max_keep + {adj} + 1; \
                     n = {n}, gamma = {}, max_keep = {}",
                    args.gamma_frac, args.max_keep
                ));
            }
        }
        "split-f" | "split_f" => {
            let train = (SPLIT_TRAIN_FRAC * n as f64).floor() as usize;
            let test = n - train;
            if test < args.max_keep + adj + 2 {
                return stats(format!(
                    "split assessment part has {test} rows; needs at least {}",
                    args.max_keep + adj + 2
                ));
            }
        }
        _ => {}
    }
    if args.reducer == "cox" {
        let grid_cols = (p as f64).sqrt().ceil() as usize;
        if n < grid_cols + adj + 2 {
            return stats(format!(
                "Cox reduction regressions have up to {grid_cols} covariates; n = {n} is too small"
            ));
        }
    }
    Ok(())
}

pub fn run(args: AnalyzeArgs) -> AppResult<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(AppError::Input(format!(
            "alpha must lie in (0,1), got {}",
            args.alpha
        )));
    }
    let intercept = !args.no_intercept;
    let data = read_dataset(&args.data, &args.response)?;
    let (n, p) = (data.x.rows(), data.x.cols());
    check_preconditions(&args, n, p, intercept)?;

    if args.workers > 0 {
        // The submodel sweep uses the global pool.
        rayon_pool(args.workers)?;
    }

    let grid_seed = derive_seed(args.seed, seed_salt::COX_GRID);
    let reduction = match args.reducer.as_str() {
        "cox" => {
            let mut cfg = CoxReduction::new(args.max_keep, grid_seed);
            cfg.intercept = intercept;
            cox_reduction(&data.x, &data.y, &cfg)
        }
        "lasso" => undertuned_lasso(&data.x, &data.y, args.max_keep),
        other => {
            return Err(AppError::Input(format!(
                "unknown reducer '{other}' (expected cox or lasso)"
            )))
        }
    }
    .map_err(|e| AppError::Stats(format!("reduction failed: {e}")))?;
    let encompassing = reduction.selected.clone();

    let needs_sigma = matches!(args.method.as_str(), "cosufficient" | "ancillary");
    let var_est: Option<VarianceEstimate> = if needs_sigma {
        let screener = UndertunedLasso {
            max_keep: args.max_keep,
        };
        let cfg = VarEstConfig {
            gamma_frac: args.gamma_frac,
            intercept,
            shuffle_seed: None,
        };
        Some(
            mrcv_variance(&data.x, &data.y, &screener, &cfg)
                .map_err(|e| AppError::Stats(format!("variance estimation failed: {e}")))?,
        )
    } else {
        None
    };

    let l_seed = derive_seed(args.seed, seed_salt::NOISE_BASE + args.k as u64);
    let bundle = if args.method == "cosufficient" {
        let ve = var_est.as_ref().expect("computed above");
        let plan = gamma_coefficients(args.k, ve.sigma_hat())
            .map_err(|e| AppError::Stats(e.to_string()))?;
        Some(
            pseudo_replicates(&data.y, &plan, l_seed)
                .map_err(|e| AppError::Stats(e.to_string()))?,
        )
    } else {
        None
    };

    // Split state when requested.
    let split_grid_seed = derive_seed(args.seed, seed_salt::COX_GRID_SPLIT);
    let split_state = if matches!(args.method.as_str(), "split-f" | "split_f") {
        let (train, _test) = split_indices(n, SPLIT_TRAIN_FRAC)
            .map_err(|e| AppError::Stats(e.to_string()))?;
        let train_n = train.len();
        let x_train = data.x.head_rows(train_n);
        let y_train = &data.y[..train_n];
        let e_train = match args.reducer.as_str() {
            "cox" => {
                let mut cfg = CoxReduction::new(args.max_keep, split_grid_seed);
                cfg.intercept = intercept;
                cfg.screen(&x_train, y_train)
            }
            _ => UndertunedLasso {
                max_keep: args.max_keep,
            }
            .screen(&x_train, y_train),
        }
        .map_err(|e| AppError::Stats(format!("training reduction failed: {e}")))?
        .selected;
        Some(
            SplitState::new(&data.x, &data.y, intercept, train_n, e_train)
                .map_err(|e| AppError::Stats(e.to_string()))?,
        )
    } else {
        None
    };

    let full_design = if args.method == "naive-f" || args.method == "naive_f" {
        Some(
            Design::from_columns(&data.x, encompassing.indices(), intercept)
                .map_err(|e| AppError::Stats(format!("encompassing design: {e}")))?,
        )
    } else {
        None
    };

    let tester = match args.method.as_str() {
        "cosufficient" => BoundTester::Cosufficient {
            x: &data.x,
            y: &data.y,
            intercept,
            k: args.k,
            var_est: var_est.as_ref().expect("computed above"),
            bundle: bundle.as_ref().expect("computed above"),
        },
        "ancillary" => BoundTester::Ancillary {
            x: &data.x,
            y: &data.y,
            intercept,
            var_est: var_est.as_ref().expect("computed above"),
        },
        "naive-f" | "naive_f" => BoundTester::NaiveF {
            x: &data.x,
            y: &data.y,
            intercept,
            encompassing: &encompassing,
            full_design: full_design.as_ref().expect("built above"),
        },
        "split-f" | "split_f" => BoundTester::SplitF {
            x: &data.x,
            state: split_state.as_ref().expect("built above"),
        },
        other => {
            return Err(AppError::Input(format!(
                "unknown method '{other}' (expected cosufficient, ancillary, naive-f or split-f)"
            )))
        }
    };

    // For the split test the candidate universe is the training selection.
    let universe = match &split_state {
        Some(s) => s.encompassing_train.clone(),
        None => encompassing.clone(),
    };
    let set = build_confidence_set(&tester, &universe, args.alpha, args.max_model_size)
        .map_err(|e| AppError::Stats(e.to_string()))?;
    let report = summarize(&set);

    ensure_out_dir(&args.out)?;
    write_models_jsonl(&args.out.join("models.jsonl"), &set, &data.names)?;
    write_summary(&args.out.join("summary.txt"), &report, &set, &data.names)?;
    write_manifest(
        &args.out.join("manifest.json"),
        &args,
        intercept,
        n,
        p,
        &data.names,
        &set,
        &var_est,
        &split_state,
        grid_seed,
        split_grid_seed,
        l_seed,
    )?;

    println!(
        "tested {} submodels of {{{}}}; accepted {} at alpha = {}",
        set.n_tested,
        universe
            .indices()
            .iter()
            .map(|&j| data.names[j].as_str())
            .collect::<Vec<_>>()
            .join(", "),
        set.len(),
        args.alpha
    );
    println!("outputs written to {}", args.out.display());
    Ok(())
}

fn rayon_pool(workers: usize) -> AppResult<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| AppError::Other(anyhow::anyhow!("worker pool: {e}")))
}

fn write_models_jsonl(
    path: &PathBuf,
    set: &ConfidenceSet,
    names: &[String],
) -> AppResult<()> {
    let mut file = std::fs::File::create(path)?;
    for a in &set.accepted {
        let idx_1based: Vec<usize> = a.subset.indices().iter().map(|&j| j + 1).collect();
        let model_names: Vec<&str> = a
            .subset
            .indices()
            .iter()
            .map(|&j| names[j].as_str())
            .collect();
        let line = json!({
            "indices": idx_1based,
            "names": model_names,
            "p_value": a.p_value,
            "statistic": a.statistic,
        });
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn write_summary(
    path: &PathBuf,
    report: &SummaryReport,
    set: &ConfidenceSet,
    names: &[String],
) -> AppResult<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "confidence set of models at alpha = {}\n\
         submodels tested: {}\naccepted: {}\nundetermined: {}\n",
        report.alpha, report.n_tested, report.n_accepted, report.n_undetermined
    ));
    if report.empty {
        out.push_str("the confidence set is empty\n");
    }
    out.push_str("\ninclusion frequencies\n");
    for &(v, f) in &report.inclusion {
        out.push_str(&format!("  {:20} {:.3}\n", names[v], f));
    }
    if !report.substitutions.is_empty() {
        out.push_str("\nsubstitution patterns (among models lacking the first variable,\nthe fraction containing the second)\n");
        for s in &report.substitutions {
            out.push_str(&format!(
                "  {:20} -> {:20} {:.3}  (over {} models)\n",
                names[s.absent], names[s.present], s.frequency, s.support
            ));
        }
    }
    let _ = set;
    std::fs::write(path, out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    path: &PathBuf,
    args: &AnalyzeArgs,
    intercept: bool,
    n: usize,
    p: usize,
    names: &[String],
    set: &ConfidenceSet,
    var_est: &Option<VarianceEstimate>,
    split_state: &Option<SplitState>,
    grid_seed: u64,
    split_grid_seed: u64,
    l_seed: u64,
) -> AppResult<()> {
    let subset_names = |s: &ModelSubset| -> Vec<String> {
        s.indices().iter().map(|&j| names[j].clone()).collect()
    };
    let manifest = json!({
        "kind": "analyze",
        "data": args.data.display().to_string(),
        "response": args.response,
        "n": n,
        "p": p,
        "alpha": args.alpha,
        "method": args.method,
        "k": args.k,
        "reducer": args.reducer,
        "max_model_size": args.max_model_size,
        "max_keep": args.max_keep,
        "gamma_frac": args.gamma_frac,
        "intercept": intercept,
        "master_seed": args.seed,
        "derived_seeds": {
            "cox_grid": grid_seed,
            "cox_grid_split": split_grid_seed,
            "noise_panel": l_seed,
        },
        "variance_estimate": var_est.as_ref().map(|v| json!({
            "sigma2_hat": v.sigma2_hat,
            "method": v.method,
            "df1": v.df1,
            "df2": v.df2,
            "nu": v.nu,
            "screen_sets": v.screen_sets.as_ref().map(|(a, b)| json!({
                "first_half": subset_names(a),
                "second_half": subset_names(b),
            })),
        })),
        "encompassing": {
            "indices_1based": set.encompassing.indices().iter().map(|&j| j + 1).collect::<Vec<_>>(),
            "names": subset_names(&set.encompassing),
        },
        "split_training_rows": split_state.as_ref().map(|s| s.train_n),
        "n_tested": set.n_tested,
        "n_accepted": set.len(),
        "n_undetermined": set.n_undetermined,
    });
    std::fs::write(path, serde_json::to_string_pretty(&manifest).unwrap())?;
    Ok(())
}
