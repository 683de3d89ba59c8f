//! Strict flat `key = value` config parsing for simulation experiments.
//! Unknown keys are errors; so are out-of-domain values.

use confsets::simharness::{MethodName, ReducerName, SimulationConfig};

use crate::{AppError, AppResult};

/// Parses a config file body. Lines are `key = value`, `#` starts a
/// comment, blank lines are ignored. List values are comma-separated.
pub fn parse_config(text: &str) -> AppResult<SimulationConfig> {
    let mut cfg = SimulationConfig {
        n: 100,
        p: 400,
        rho: 0.1,
        t: 1.0,
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
        split_frac: 0.6,
        workers: 0,
    };
    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(AppError::Input(format!(
                "line {no}: expected 'key = value', got '{raw}'"
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| AppError::Input(format!("line {no}: {what}"));
        macro_rules! parse_as {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|e| bad(&format!("invalid value for {key}: {e}")))?
            };
        }
        match key {
            "n" => cfg.n = parse_as!(usize),
            "p" => cfg.p = parse_as!(usize),
            "rho" => cfg.rho = parse_as!(f64),
            "t" => cfg.t = parse_as!(f64),
            "sigma2" => cfg.sigma2 = parse_as!(f64),
            "replicates" => cfg.replicates = parse_as!(usize),
            "seed" => cfg.seed = parse_as!(u64),
            "alpha" => cfg.alpha = parse_as!(f64),
            "max_model_size" => cfg.max_model_size = parse_as!(usize),
            "max_keep" => cfg.max_keep = parse_as!(usize),
            "gamma_frac" => cfg.gamma_frac = parse_as!(f64),
            "split_frac" => cfg.split_frac = parse_as!(f64),
            "workers" => cfg.workers = parse_as!(usize),
            "methods" => {
                cfg.methods = value
                    .split(',')
                    .map(|s| MethodName::parse(s.trim()))
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
            }
            "k_values" => {
                cfg.k_values = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|e| bad(&format!("invalid k '{s}': {e}")))
                    })
                    .collect::<Result<_, _>>()?;
            }
            "reducers" => {
                cfg.reducers = value
                    .split(',')
                    .map(|s| ReducerName::parse(s.trim()))
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
            }
            other => {
                return Err(AppError::Input(format!(
                    "line {no}: unknown key '{other}'"
                )))
            }
        }
    }
    cfg.validate()
        .map_err(|e| AppError::Input(e.to_string()))?;
    Ok(cfg)
}

/// Canonical text form of a resolved config: sorted `key = value` lines.
/// Hashing this gives a content identifier for the run.
pub fn canonical_config_text(cfg: &SimulationConfig) -> String {
    let methods: Vec<&str> = cfg
        .methods
        .iter()
        .map(|m| match m {
            MethodName::Cosufficient => "cosufficient",
            MethodName::Ancillary => "ancillary",
            MethodName::NaiveF => "naive_f",
            MethodName::SplitF => "split_f",
        })
        .collect();
    let ks: Vec<String> = cfg.k_values.iter().map(|k| k.to_string()).collect();
    let reducers: Vec<&str> = cfg.reducers.iter().map(|r| r.label()).collect();
    format!(
        "alpha = {}\ngamma_frac = {}\nk_values = {}\nmax_keep = {}\nmax_model_size = {}\n\
         methods = {}\nn = {}\np = {}\nreducers = {}\nreplicates = {}\nrho = {}\nseed = {}\n\
         sigma2 = {}\nsplit_frac = {}\nt = {}\nworkers = {}\n",
        cfg.alpha,
        cfg.gamma_frac,
        ks.join(","),
        cfg.max_keep,
        cfg.max_model_size,
        methods.join(","),
        cfg.n,
        cfg.p,
        reducers.join(","),
        cfg.replicates,
        cfg.rho,
        cfg.seed,
        cfg.sigma2,
        cfg.split_frac,
        cfg.t,
        cfg.workers,
    )
}
