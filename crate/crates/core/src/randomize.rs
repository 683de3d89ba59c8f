//! Construction of the randomisation coefficient matrix and the co-sufficient
//! pseudo-replicates of the response, and their mapping to unit vectors on
//! the complement hypersphere.
//!
//! Mixing the response with an independent Gaussian noise panel through the
//! coefficient matrix yields `k` mutually independent replicates with the
//! same mean and variance inflated by `k`; projecting each replicate onto a
//! submodel's orthogonal complement and normalising puts them on the unit
//! hypersphere, where they are uniform exactly when the submodel's mean
//! space is correct.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, ComplementBasis, Mat};

/// The `k x k` coefficient matrix together with its recursion coefficients.
#[derive(Debug, Clone)]
pub struct GammaPlan {
    k: usize,
    sigma: f64,
    gamma: Mat,
    /// Diagonal coefficients `a_i = sigma * a~_i`, `i = 1..k-1`.
    a: Vec<f64>,
    /// Off-diagonal coefficients `b_i = sigma * b~_i`, `i = 1..k-1`.
    b: Vec<f64>,
}

impl GammaPlan {
    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn gamma(&self) -> &Mat {
        &self.gamma
    }

    #[inline]
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    #[inline]
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Largest absolute entry of
    /// `Gamma^T diag(sigma^2, 1, ..) Gamma - k sigma^2 I`,
    /// computed by direct matrix products.
    pub fn orthogonality_defect(&self) -> f64 {
        let k = self.k;
        let s2 = self.sigma * self.sigma;
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for r in 0..k {
                    let w = if r == 0 { s2 } else { 1.0 };
                    acc += self.gamma.get(r, i) * w * self.gamma.get(r, j);
                }
                let target = if i == j { k as f64 * s2 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    /// Largest absolute row sum among the rows below the first.
    pub fn max_lower_row_sum(&self) -> f64 {
        (1..self.k)
            .map(|r| (0..self.k).map(|j| self.gamma.get(r, j)).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the coefficient matrix for `k` replicates at noise scale `sigma`.
///
/// The recursion is
/// `a~_1 = sqrt(k-1)`, `b~_1 = 1/a~_1`,
/// `a~_{i+1} = (k - 1 - sum_j b~_j^2)^{1/2}`,
/// `b~_{i+1} = (1 + sum_j b~_j^2) / a~_{i+1}`,
/// with `a_i = sigma a~_i`, `b_i = sigma b~_i`. The first row of the matrix
/// is all ones; row `i+1` carries `a_i` on the diagonal position and `-b_i`
/// to its right.
pub fn gamma_coefficients(k: usize, sigma: f64) -> Result<GammaPlan> {
    if k < 2 {
        return Err(Error::domain(format!(
            "replicate count k must be >= 2, got {k}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    let kf = k as f64;
    let mut a_tilde = vec![0.0; k - 1];
    let mut b_tilde = vec![0.0; k - 1];
    let mut sum_b_sq = 0.0;
    for i in 0..k - 1 {
        let radicand = kf - 1.0 - sum_b_sq;
        if radicand <= 0.0 {
            return Err(Error::Numerical(format!(
                "coefficient recursion produced a non-positive radicand at step {i}"
            )));
        }
        a_tilde[i] = radicand.sqrt();
        b_tilde[i] = (1.0 + sum_b_sq) / a_tilde[i];
        sum_b_sq += b_tilde[i] * b_tilde[i];
    }
    let mut gamma = Mat::zeros(k, k);
    for j in 0..k {
        gamma.set(0, j, 1.0);
    }
    for i in 0..k - 1 {
        gamma.set(i + 1, i, sigma * a_tilde[i]);
        for j in i + 1..k {
            gamma.set(i + 1, j, -sigma * b_tilde[i]);
        }
    }
    Ok(GammaPlan {
        k,
        sigma,
        gamma,
        a: a_tilde.iter().map(|v| sigma * v).collect(),
        b: b_tilde.iter().map(|v| sigma * v).collect(),
    })
}

/// The `n x k` matrix of pseudo-replicates plus the seed that generated the
/// auxiliary noise panel.
#[derive(Debug, Clone)]
pub struct ReplicateBundle {
    y_reps: Mat,
    noise_seed: u64,
    sigma_used: f64,
}

impl ReplicateBundle {
    #[inline]
    pub fn y_reps(&self) -> &Mat {
        &self.y_reps
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.y_reps.cols()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y_reps.rows()
    }

    #[inline]
    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    #[inline]
    pub fn sigma_used(&self) -> f64 {
        self.sigma_used
    }

    /// Row-wise mean across replicates; reconstructs the original response.
    pub fn replicate_mean(&self) -> Vec<f64> {
        let (n, k) = (self.n(), self.k());
        let mut out = vec![0.0; n];
        for j in 0..k {
            for (o, v) in out.iter_mut().zip(self.y_reps.col(j)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= k as f64;
        }
        out
    }
}

/// Draws the standard-normal noise panel `L` (`n x (k-1)`) from `seed`.
pub fn noise_panel(n: usize, k: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = Mat::zeros(n, k - 1);
    for j in 0..k - 1 {
        for v in l.col_mut(j) {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    l
}

/// Mixes `y` with a fresh noise panel through the plan's coefficient matrix:
/// replicate `j` is `y + sum_i L_i Gamma[i+1, j]`. Deterministic given
/// `(y, plan, seed)`.
pub fn pseudo_replicates(y: &[f64], plan: &GammaPlan, seed: u64) -> Result<ReplicateBundle> {
    let n = y.len();
    if n == 0 {
        return Err(Error::DimensionMismatch {
            context: "pseudo_replicates response",
            expected: 1,
            got: 0,
        });
    }
    let k = plan.k();
    let l = noise_panel(n, k, seed);
    pseudo_replicates_with_panel(y, plan, &l, seed)
}

/// As [`pseudo_replicates`], with the noise panel supplied by the caller.
pub fn pseudo_replicates_with_panel(
    y: &[f64],
    plan: &GammaPlan,
    l: &Mat,
    seed: u64,
) -> Result<ReplicateBundle> {
    let n = y.len();
    let k = plan.k();
    if l.rows() != n || l.cols() != k - 1 {
        return Err(Error::DimensionMismatch {
            context: "pseudo_replicates noise panel",
            expected: n * (k - 1),
            got: l.rows() * l.cols(),
        });
    }
    let mut y_reps = Mat::zeros(n, k);
    for j in 0..k {
        let col = y_reps.col_mut(j);
        col.copy_from_slice(y);
        for i in 0..k - 1 {
            let c = plan.gamma().get(i + 1, j);
            if c == 0.0 {
                continue;
            }
            for (o, v) in col.iter_mut().zip(l.col(i)) {
                *o += c * v;
            }
        }
    }
    Ok(ReplicateBundle {
        y_reps,
        noise_seed: seed,
        sigma_used: plan.sigma(),
    })
}

/// Projects each replicate onto the complement basis and normalises,
/// returning `k` unit vectors in the complement space.
pub fn q_replicates(bundle: &ReplicateBundle, basis: &ComplementBasis) -> Result<Vec<Vec<f64>>> {
    if basis.u().rows() != bundle.n() {
        return Err(Error::DimensionMismatch {
            context: "q_replicates basis",
            expected: bundle.n(),
            got: basis.u().rows(),
        });
    }
    let mut out = Vec::with_capacity(bundle.k());
    for j in 0..bundle.k() {
        let mut w = basis.project(bundle.y_reps().col(j));
        let norm = dot(&w, &w).sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegenerateProjection);
        }
        for v in &mut w {
            *v /= norm;
        }
        out.push(w);
    }
    Ok(out)
}
