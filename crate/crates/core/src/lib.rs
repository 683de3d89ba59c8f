//! Confidence sets of sparse Gaussian regression models after data-driven
//! variable reduction.
//!
//! The pipeline runs in three phases. A screening phase reduces `p` candidate
//! variables to an encompassing set (Cox grid reduction or an undertuned
//! lasso, [`reduce`]). A variance-estimation phase produces a refitted
//! cross-validation estimate of the error variance ([`varest`]). A
//! model-assessment phase tests every small submodel of the encompassing set
//! for compatibility with the data ([`modeltest`], [`confset`]); submodels
//! not rejected at level alpha form the confidence set of models.
//!
//! Two of the tests avoid the double use of data that invalidates the naive
//! F test: the co-sufficient test mixes the response with auxiliary Gaussian
//! noise to manufacture exchangeable pseudo-replicates on the co-sufficient
//! hypersphere ([`randomize`]) and applies a high-dimensional Rayleigh
//! uniformity test; the ancillary test calibrates the residual sum of squares
//! against its chi-squared null law.
//!
//! [`simharness`] reproduces the factorial simulation study at desk scale.

pub mod confset;
pub mod dist;
pub mod error;
pub mod linalg;
pub mod modeltest;
pub mod randomize;
pub mod reduce;
pub mod simharness;
pub mod varest;

pub use error::{Error, Result};
pub use linalg::{ComplementBasis, Design, LeastSquaresFit, Mat};
pub use reduce::ModelSubset;
