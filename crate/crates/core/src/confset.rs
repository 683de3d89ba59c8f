//! Enumeration of candidate submodels of an encompassing set, application of
//! a bound tester across them, and assembly of the level-alpha confidence
//! set of models.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Design, Mat};
use crate::modeltest::{BoundTester, TestMethod, TestOutcome};
use crate::reduce::ModelSubset;

/// Streaming lexicographic enumeration of the nonempty subsets of
/// `encompassing` of size at most `max_size`.
pub fn enumerate_submodels(
    encompassing: &ModelSubset,
    max_size: usize,
) -> Result<SubmodelIter> {
    let w = encompassing.len();
    if max_size < 1 || max_size > w {
        return Err(Error::domain(format!(
            "max_size must lie in 1..=|encompassing| = {w}, got {max_size}"
        )));
    }
    Ok(SubmodelIter {
        base: encompassing.clone(),
        max_size,
        stack: Vec::with_capacity(max_size),
        started: false,
        done: false,
    })
}

/// Number of submodels the enumeration yields:
/// `sum_{j=1}^{max_size} C(w, j)`.
pub fn submodel_count(w: usize, max_size: usize) -> usize {
    let mut total = 0usize;
    let mut c = 1usize;
    for j in 1..=max_size.min(w) {
        c = c * (w - j + 1) / j;
        total += c;
    }
    total
}

pub struct SubmodelIter {
    base: ModelSubset,
    max_size: usize,
    stack: Vec<usize>,
    started: bool,
    done: bool,
}

impl SubmodelIter {
    fn current(&self) -> ModelSubset {
        let idx: Vec<usize> = self
            .stack
            .iter()
            .map(|&pos| self.base.indices()[pos])
            .collect();
        ModelSubset::new(idx, self.base.p_total()).expect("positions map to valid indices")
    }
}

impl Iterator for SubmodelIter {
    type Item = ModelSubset;

    fn next(&mut self) -> Option<ModelSubset> {
        if self.done {
            return None;
        }
        let w = self.base.len();
        if !self.started {
            self.started = true;
            self.stack.push(0);
            return Some(self.current());
        }
        let last = *self.stack.last().expect("non-empty while running");
        if self.stack.len() < self.max_size && last + 1 < w {
            self.stack.push(last + 1);
            return Some(self.current());
        }
        while let Some(last) = self.stack.pop() {
            if last + 1 < w {
                self.stack.push(last + 1);
                return Some(self.current());
            }
        }
        self.done = true;
        None
    }
}

/// One accepted model with the evidence that kept it.
#[derive(Debug, Clone, Serialize)]
pub struct AcceptedModel {
    pub subset: ModelSubset,
    pub p_value: f64,
    pub statistic: f64,
}

/// The level-alpha confidence set of models.
#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceSet {
    pub accepted: Vec<AcceptedModel>,
    pub alpha: f64,
    pub method: TestMethod,
    pub encompassing: ModelSubset,
    pub max_size: usize,
    /// Count of enumerated submodels (undetermined ones included).
    pub n_tested: usize,
    /// Submodels whose test erred; they are excluded from the set.
    pub n_undetermined: usize,
    /// For each encompassing variable, the fraction of accepted models that
    /// contain it.
    pub inclusion_freq: Vec<(usize, f64)>,
}

impl ConfidenceSet {
    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn contains(&self, subset: &ModelSubset) -> bool {
        self.accepted.iter().any(|a| &a.subset == subset)
    }
}

fn inclusion_frequencies(
    encompassing: &ModelSubset,
    accepted: &[AcceptedModel],
) -> Vec<(usize, f64)> {
    let total = accepted.len();
    encompassing
        .indices()
        .iter()
        .map(|&v| {
            let cnt = accepted.iter().filter(|a| a.subset.contains(v)).count();
            let freq = if total == 0 {
                0.0
            } else {
                cnt as f64 / total as f64
            };
            (v, freq)
        })
        .collect()
}

/// Tests every enumerated submodel with `tester` and keeps those with
/// `p > alpha`. Erring submodels are excluded and counted. The sweep runs
/// as a parallel map; the merge is an ordered reduce, so results are
/// deterministic regardless of thread scheduling.
pub fn build_confidence_set(
    tester: &BoundTester<'_>,
    encompassing: &ModelSubset,
    alpha: f64,
    max_size: usize,
) -> Result<ConfidenceSet> {
    build_confidence_sets_shared(
        None,
        false,
        std::slice::from_ref(tester),
        encompassing,
        alpha,
        max_size,
    )
    .map(|mut sets| sets.remove(0))
}

/// As [`build_confidence_set`], for several testers over one enumeration.
/// The per-submodel design on the full sample is factorised once and shared
/// by every tester that can use it. `x` must be the full-sample covariate
/// matrix when provided; pass `None` to let each tester build its own.
pub fn build_confidence_sets_shared(
    x: Option<&Mat>,
    intercept: bool,
    testers: &[BoundTester<'_>],
    encompassing: &ModelSubset,
    alpha: f64,
    max_size: usize,
) -> Result<Vec<ConfidenceSet>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!(
            "alpha must lie in [0,1], got {alpha}"
        )));
    }
    if testers.is_empty() {
        return Err(Error::domain("no testers supplied".to_string()));
    }
    let effective_max = max_size.min(encompassing.len());
    let submodels: Vec<ModelSubset> = if encompassing.is_empty() {
        Vec::new()
    } else {
        enumerate_submodels(encompassing, effective_max)?.collect()
    };
    let n_tested = submodels.len();

    // outcome[s][t]: tester t on submodel s.
    let outcomes: Vec<Vec<Result<TestOutcome>>> = submodels
        .par_iter()
        .map(|sub| {
            let shared: Option<Design> = x.and_then(|mat| {
                Design::from_columns(mat, sub.indices(), intercept).ok()
            });
            testers
                .iter()
                .map(|t| t.test_with(sub, shared.as_ref()))
                .collect()
        })
        .collect();

    let mut sets = Vec::with_capacity(testers.len());
    for (t, tester) in testers.iter().enumerate() {
        let mut accepted = Vec::new();
        let mut undetermined = 0usize;
        for row in &outcomes {
            match &row[t] {
                Ok(out) => {
                    if out.p_value > alpha {
                        accepted.push(AcceptedModel {
                            subset: out.submodel.clone(),
                            p_value: out.p_value,
                            statistic: out.statistic,
                        });
                    }
                }
                Err(_) => undetermined += 1,
            }
        }
        let inclusion_freq = inclusion_frequencies(encompassing, &accepted);
        sets.push(ConfidenceSet {
            accepted,
            alpha,
            method: tester.method(),
            encompassing: encompassing.clone(),
            max_size: effective_max,
            n_tested,
            n_undetermined: undetermined,
            inclusion_freq,
        });
    }
    Ok(sets)
}

/// A pair of variables where one stands in for the other across accepted
/// models: among accepted models lacking `absent`, the fraction containing
/// `present`.
#[derive(Debug, Clone, Serialize)]
pub struct SubstitutionPair {
    pub absent: usize,
    pub present: usize,
    pub frequency: f64,
    /// Number of accepted models lacking `absent`.
    pub support: usize,
}

/// Plain-data summary of a confidence set.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    pub n_accepted: usize,
    pub n_tested: usize,
    pub n_undetermined: usize,
    pub alpha: f64,
    /// Set when the confidence set is empty; frequencies are all zero then.
    pub empty: bool,
    /// Per-variable inclusion frequencies, sorted by decreasing frequency
    /// then by index.
    pub inclusion: Vec<(usize, f64)>,
    /// Strongest substitution pairs, sorted by decreasing frequency.
    pub substitutions: Vec<SubstitutionPair>,
}

const MAX_SUBSTITUTION_PAIRS: usize = 10;

/// Per-variable inclusion frequencies and the strongest pairwise
/// substitution patterns of a confidence set.
pub fn summarize(set: &ConfidenceSet) -> SummaryReport {
    let mut inclusion = inclusion_frequencies(&set.encompassing, &set.accepted);
    inclusion.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite frequencies")
            .then(a.0.cmp(&b.0))
    });
    let mut substitutions = Vec::new();
    if !set.accepted.is_empty() {
        let vars = set.encompassing.indices();
        for &v in vars {
            let lacking: Vec<&AcceptedModel> = set
                .accepted
                .iter()
                .filter(|a| !a.subset.contains(v))
                .collect();
            if lacking.is_empty() {
                continue;
            }
            for &w in vars {
                if w == v {
                    continue;
                }
                let cnt = lacking.iter().filter(|a| a.subset.contains(w)).count();
                substitutions.push(SubstitutionPair {
                    absent: v,
                    present: w,
                    frequency: cnt as f64 / lacking.len() as f64,
                    support: lacking.len(),
                });
            }
        }
        substitutions.sort_by(|a, b| {
            b.frequency
                .partial_cmp(&a.frequency)
                .expect("finite frequencies")
                .then(a.absent.cmp(&b.absent))
                .then(a.present.cmp(&b.present))
        });
        substitutions.truncate(MAX_SUBSTITUTION_PAIRS);
    }
    SummaryReport {
        n_accepted: set.accepted.len(),
        n_tested: set.n_tested,
        n_undetermined: set.n_undetermined,
        alpha: set.alpha,
        empty: set.accepted.is_empty(),
        inclusion,
        substitutions,
    }
}
