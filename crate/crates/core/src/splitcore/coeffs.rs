//! Full and reduced coefficient vectors of two-component splitting schemes.
//!
//! A K-stage scheme advances one step of size `h` as
//! `phi2(beta_K h) o phi1(alpha_K h) o ... o phi2(beta_1 h) o phi1(alpha_1 h)`,
//! i.e. `alpha_1` acts first.

use crate::error::{Error, Result};

/// Coefficients `(alpha, beta)` of a K-stage splitting scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCoeffs {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl SplitCoeffs {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::invalid("a splitting scheme needs at least one stage"));
        }
        if alpha.len() != beta.len() {
            return Err(Error::DimensionMismatch {
                expected: alpha.len(),
                got: beta.len(),
            });
        }
        if alpha.iter().chain(beta.iter()).any(|c| !c.is_finite()) {
            return Err(Error::invalid("splitting coefficients must be finite"));
        }
        Ok(Self { alpha, beta })
    }

    /// Trotter (Lie) splitting, `[1.0, 1.0]`.
    pub fn trotter() -> Self {
        Self {
            alpha: vec![1.0],
            beta: vec![1.0],
        }
    }

    /// Strang splitting, `[0.5, 0.5, 1.0, 0.0]`.
    pub fn strang() -> Self {
        Self {
            alpha: vec![0.5, 0.5],
            beta: vec![1.0, 0.0],
        }
    }

    pub fn stages(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Multiply every coefficient by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alpha: self.alpha.iter().map(|a| a * factor).collect(),
            beta: self.beta.iter().map(|b| b * factor).collect(),
        }
    }

    pub fn is_consistent(&self, tol: f64) -> bool {
        check_consistency(self, tol)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        check_symmetry(self, tol)
    }

    /// Recover the reduced coordinates of a consistent symmetric scheme.
    ///
    /// The reduced vector is read off the leading entries of `alpha` and
    /// `beta`; `expand` of the result reproduces `self` when the scheme is on
    /// the consistency + symmetry hyperplane.
    pub fn reduce(&self, tol: f64) -> Result<ReducedCoeffs> {
        let k = self.stages();
        if k < 2 || !check_symmetry(self, tol) {
            return Err(Error::NotSymmetric);
        }
        if !check_consistency(self, tol) {
            return Err(Error::NotConsistent);
        }
        let (na, nb) = partition_sizes(k);
        let mut gamma = Vec::with_capacity(k - 2);
        gamma.extend_from_slice(&self.alpha[..na]);
        gamma.extend_from_slice(&self.beta[..nb]);
        ReducedCoeffs::new(k, gamma)
    }
}

/// Free coordinates `gamma = [gamma_alpha, gamma_beta]` on the consistency +
/// symmetry hyperplane of K-stage schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCoeffs {
    stages: usize,
    gamma: Vec<f64>,
}

impl ReducedCoeffs {
    pub fn new(stages: usize, gamma: Vec<f64>) -> Result<Self> {
        if stages < 2 {
            return Err(Error::invalid(format!(
                "reduced coordinates need K >= 2, got K = {stages}"
            )));
        }
        if gamma.len() != stages - 2 {
            return Err(Error::GammaLength {
                got: gamma.len(),
                expected: stages - 2,
            });
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("reduced coefficients must be finite"));
        }
        Ok(Self { stages, gamma })
    }

    /// Infer `K = len + 2` from the vector length.
    pub fn from_gamma(gamma: Vec<f64>) -> Result<Self> {
        Self::new(gamma.len() + 2, gamma)
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn into_gamma(self) -> Vec<f64> {
        self.gamma
    }

    pub fn gamma_alpha(&self) -> &[f64] {
        &self.gamma[..partition_sizes(self.stages).0]
    }

    pub fn gamma_beta(&self) -> &[f64] {
        &self.gamma[partition_sizes(self.stages).0..]
    }

    pub fn expand(&self) -> SplitCoeffs {
        let (alpha, beta) = affine_map(self.stages, &self.gamma);
        SplitCoeffs { alpha, beta }
    }
}

/// Sizes `(|gamma_alpha|, |gamma_beta|) = (floor((K-1)/2), floor((K-2)/2))`.
pub fn partition_sizes(stages: usize) -> (usize, usize) {
    ((stages - 1) / 2, (stages - 2) / 2)
}

/// Map reduced coordinates to a consistent, symmetric `(alpha, beta)`.
pub fn expand(reduced: &ReducedCoeffs) -> SplitCoeffs {
    reduced.expand()
}

/// Evaluate `alpha = A gamma_alpha + C`, `beta = B gamma_beta + D`.
///
/// The block structure is applied directly instead of materialising the
/// matrices. For even K, `A = [I; -1_(2,s); J]` with `C = [0; 0.5; 0.5; 0]`
/// and `B = [I; -2_(1,s); J; 0]` with `D = [0; 1; 0; 0]`, `s = (K-2)/2`.
/// For odd K the roles of the one- and two-row middle blocks swap.
fn affine_map(stages: usize, gamma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = partition_sizes(stages);
    let (ga, gb) = gamma.split_at(na);
    debug_assert_eq!(gb.len(), nb);

    let mut alpha = vec![0.0; stages];
    let mut beta = vec![0.0; stages];

    if stages % 2 == 0 {
        // alpha: I (s rows), -1 (2 rows) + 0.5, J (s rows)
        let s = na;
        let sum_a: f64 = ga.iter().sum();
        alpha[..s].copy_from_slice(ga);
        alpha[s] = 0.5 - sum_a;
        alpha[s + 1] = 0.5 - sum_a;
        for (i, g) in ga.iter().rev().enumerate() {
            alpha[s + 2 + i] = *g;
        }
        // beta: I (s rows), -2 (1 row) + 1, J (s rows), 0
        let sum_b: f64 = gb.iter().sum();
        beta[..s].copy_from_slice(gb);
        beta[s] = 1.0 - 2.0 * sum_b;
        for (i, g) in gb.iter().rev().enumerate() {
            beta[s + 1 + i] = *g;
        }
    } else {
        // alpha: I (s rows), -2 (1 row) + 1, J (s rows), s = (K-1)/2
        let s = na;
        let sum_a: f64 = ga.iter().sum();
        alpha[..s].copy_from_slice(ga);
        alpha[s] = 1.0 - 2.0 * sum_a;
        for (i, g) in ga.iter().rev().enumerate() {
            alpha[s + 1 + i] = *g;
        }
        // beta: I (t rows), -1 (2 rows) + 0.5, J (t rows), 0, t = (K-3)/2
        let t = nb;
        let sum_b: f64 = gb.iter().sum();
        beta[..t].copy_from_slice(gb);
        beta[t] = 0.5 - sum_b;
        beta[t + 1] = 0.5 - sum_b;
        for (i, g) in gb.iter().rev().enumerate() {
            beta[t + 2 + i] = *g;
        }
    }
    (alpha, beta)
}

/// Linear part of the transform as dense columns: `d(alpha, beta) / d gamma`.
///
/// Returns a `2K x (K-2)` row-major matrix whose first K rows are `A`
/// (padded with zeros in the `gamma_beta` columns) and last K rows are `B`.
pub fn transform_jacobian(stages: usize) -> Vec<Vec<f64>> {
    let n = stages - 2;
    let base = affine_map(stages, &vec![0.0; n]);
    let mut rows = vec![vec![0.0; n]; 2 * stages];
    for j in 0..n {
        let mut unit = vec![0.0; n];
        unit[j] = 1.0;
        let (a, b) = affine_map(stages, &unit);
        for k in 0..stages {
            rows[k][j] = a[k] - base.0[k];
            rows[stages + k][j] = b[k] - base.1[k];
        }
    }
    rows
}

/// `|sum(alpha) - 1| <= tol` and `|sum(beta) - 1| <= tol`.
pub fn check_consistency(coeffs: &SplitCoeffs, tol: f64) -> bool {
    let sa: f64 = coeffs.alpha.iter().sum();
    let sb: f64 = coeffs.beta.iter().sum();
    (sa - 1.0).abs() <= tol && (sb - 1.0).abs() <= tol
}

/// Palindromic `alpha`, `beta_K = 0` and palindromic `beta_1..beta_(K-1)`.
pub fn check_symmetry(coeffs: &SplitCoeffs, tol: f64) -> bool {
    let k = coeffs.stages();
    if k < 2 {
        // A single stage needs alpha_1 = beta_1 = 0 and can never be consistent.
        return coeffs.beta[0].abs() <= tol;
    }
    let a = &coeffs.alpha;
    let b = &coeffs.beta;
    if b[k - 1].abs() > tol {
        return false;
    }
    let pal_a = (0..k / 2).all(|i| (a[i] - a[k - 1 - i]).abs() <= tol);
    let inner = &b[..k - 1];
    let m = inner.len();
    let pal_b = (0..m / 2).all(|i| (inner[i] - inner[m - 1 - i]).abs() <= tol);
    pal_a && pal_b
}
