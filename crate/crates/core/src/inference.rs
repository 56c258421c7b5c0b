//! Wald-type tests for coefficients and dependence parameters, secondary
//! parameter contrasts, Benjamini-Hochberg correction, and covariance
//! accuracy metrics.

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::params::param_pair;
use crate::ub::UniformBlockMatrix;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

/// Which coefficient or dependence parameter a test row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestLabel {
    /// Coefficient of covariate `covariate` for outcome feature `feature` (0-based).
    Beta { feature: usize, covariate: usize },
    /// Dependence parameter for the community pair `(g, gp)` (0-based).
    Gamma { g: usize, gp: usize },
}

impl std::fmt::Display for TestLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestLabel::Beta { feature, covariate } => write!(f, "beta[{feature},{covariate}]"),
            TestLabel::Gamma { g, gp } => write!(f, "gamma[{g},{gp}]"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestResult {
    pub label: TestLabel,
    pub estimate: f64,
    pub standard_error: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub adjusted_p_value: Option<f64>,
    pub rejected: Option<bool>,
}

/// Reference distribution for the coefficient statistics: Student t with
/// `n - 1` degrees of freedom, or the standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DfMode {
    #[default]
    StudentT,
    Normal,
}

fn two_sided_t(stat: f64, df: f64) -> f64 {
    let d = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
    (2.0 * d.cdf(-stat.abs())).min(1.0)
}

fn two_sided_normal(stat: f64) -> f64 {
    let d = Normal::new(0.0, 1.0).unwrap();
    (2.0 * d.cdf(-stat.abs())).min(1.0)
}

/// Wald tests of `beta_r^(q) = 0` for all `Rp` coefficients, standard errors
/// read off the factored covariance diagonal.
pub fn beta_tests(fit: &FitResult, df_mode: DfMode) -> Vec<TestResult> {
    let se = fit.beta_cov.se_matrix();
    let df = fit.n as f64 - 1.0;
    let mut out = Vec::with_capacity(fit.beta.nrows() * fit.beta.ncols());
    for r in 0..fit.beta.nrows() {
        for q in 0..fit.beta.ncols() {
            let est = fit.beta[(r, q)];
            let s = se[(r, q)];
            let stat = if est == 0.0 { 0.0 } else { est / s };
            let p = match df_mode {
                DfMode::StudentT => two_sided_t(stat, df),
                DfMode::Normal => two_sided_normal(stat),
            };
            out.push(TestResult {
                label: TestLabel::Beta { feature: r, covariate: q },
                estimate: est,
                standard_error: s,
                statistic: stat,
                p_value: p,
                adjusted_p_value: None,
                rejected: None,
            });
        }
    }
    out
}

/// Wald tests of `gamma_gg' = 0`, standard errors from the inverse Fisher
/// information, standard normal reference.
pub fn gamma_tests(fit: &FitResult) -> Vec<TestResult> {
    let g = fit.gamma.part().num_blocks();
    let m = fit.gamma.part().num_params();
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let (gi, gj) = param_pair(g, j);
        let est = fit.gamma.values()[j];
        let s = fit.gamma_se(j);
        let stat = est / s;
        out.push(TestResult {
            label: TestLabel::Gamma { g: gi, gp: gj },
            estimate: est,
            standard_error: s,
            statistic: stat,
            p_value: two_sided_normal(stat),
            adjusted_p_value: None,
            rejected: None,
        });
    }
    out
}

/// A linear secondary-parameter hypothesis `C beta = null_value`, with `C`
/// of full row rank over the feature-major coefficient vector
/// (`index = feature * p + covariate`).
#[derive(Debug, Clone)]
pub struct ContrastSpec {
    pub c: DMatrix<f64>,
    pub null_value: DVector<f64>,
}

impl ContrastSpec {
    pub fn new(c: DMatrix<f64>, null_value: DVector<f64>) -> Result<Self> {
        if c.nrows() != null_value.len() {
            return Err(Error::DimensionMismatch(format!(
                "contrast has {} rows but null value has {} entries",
                c.nrows(),
                null_value.len()
            )));
        }
        Ok(Self { c, null_value })
    }
}

/// Wald statistic `W = (C b - r0)^T (C Cov C^T)^-1 (C b - r0)` with a
/// chi-square reference on `s` degrees of freedom. `C Cov C^T` is contracted
/// through the covariance factors; the `Rp x Rp` Kronecker product is never
/// formed.
pub fn contrast_test(fit: &FitResult, spec: &ContrastSpec) -> Result<(f64, f64)> {
    let r = fit.beta.nrows();
    let p = fit.beta.ncols();
    let s = spec.c.nrows();
    if spec.c.ncols() != r * p {
        return Err(Error::DimensionMismatch(format!(
            "contrast has {} columns, expected Rp = {}",
            spec.c.ncols(),
            r * p
        )));
    }
    let svd = spec.c.clone().svd(false, false);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
    let rank = svd.singular_values.iter().filter(|&&v| v > 1e-10 * smax.max(1.0)).count();
    if rank < s {
        return Err(Error::RankDeficientContrast { rank, rows: s });
    }
    // deviation d = C vec(beta) - null
    let mut d = -spec.null_value.clone();
    for k in 0..s {
        let mut acc = 0.0;
        for feat in 0..r {
            for q in 0..p {
                acc += spec.c[(k, feat * p + q)] * fit.beta[(feat, q)];
            }
        }
        d[k] += acc;
    }
    // mid_{k,k'} = <C_k, Sigma C_k' V> with C_k the R x p reshape of row k
    let sigma = fit.beta_cov.sigma();
    let v = fit.beta_cov.xtx_inv();
    let mut contracted = Vec::with_capacity(s);
    let mut reshaped = Vec::with_capacity(s);
    for k in 0..s {
        let ck = DMatrix::from_fn(r, p, |feat, q| spec.c[(k, feat * p + q)]);
        contracted.push(sigma.mul_dense_right(&ck)? * v);
        reshaped.push(ck);
    }
    let mut mid = DMatrix::zeros(s, s);
    for k in 0..s {
        for kp in k..s {
            let val = reshaped[k].dot(&contracted[kp]);
            mid[(k, kp)] = val;
            mid[(kp, k)] = val;
        }
    }
    let chol = Cholesky::new(mid).ok_or(Error::SingularContrastCovariance)?;
    let w = d.dot(&chol.solve(&d));
    let dist = ChiSquared::new(s as f64).expect("valid dof");
    let pval = (1.0 - dist.cdf(w)).clamp(0.0, 1.0);
    Ok((w, pval))
}

#[derive(Debug, Clone)]
pub struct BhOutcome {
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// Benjamini-Hochberg step-up: sort ascending (ties broken by original
/// index), `adj_(i) = min_{k >= i} min(1, m p_(k) / k)`, reject where the
/// adjusted value is at most `alpha`.
pub fn bh_adjust(p_values: &[f64], alpha: f64) -> Result<BhOutcome> {
    for (i, &p) in p_values.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidPValue { index: i, value: p });
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap().then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        let raw = (m as f64 * p_values[idx] / (rank + 1) as f64).min(1.0);
        running = running.min(raw);
        adjusted[idx] = running;
    }
    let rejected = adjusted.iter().map(|&a| a <= alpha).collect();
    Ok(BhOutcome { adjusted, rejected })
}

/// Fills the `adjusted_p_value` / `rejected` fields of a test table in place.
pub fn apply_bh(tests: &mut [TestResult], alpha: f64) -> Result<()> {
    let pvals: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
    let out = bh_adjust(&pvals, alpha)?;
    for (t, (adj, rej)) in tests.iter_mut().zip(out.adjusted.iter().zip(out.rejected.iter())) {
        t.adjusted_p_value = Some(*adj);
        t.rejected = Some(*rej);
    }
    Ok(())
}

/// The outcome-side factor of a Kronecker-factored coefficient covariance.
#[derive(Debug, Clone)]
pub enum OutcomeFactor {
    UniformBlock(UniformBlockMatrix),
    /// Per-feature variances, the diagonal-covariance baseline.
    Diagonal(DVector<f64>),
    /// Arbitrary symmetric factor (used for perturbed truth matrices).
    Dense(DMatrix<f64>),
}

impl OutcomeFactor {
    pub fn dim(&self) -> usize {
        match self {
            OutcomeFactor::UniformBlock(u) => u.part().total_dim(),
            OutcomeFactor::Diagonal(d) => d.len(),
            OutcomeFactor::Dense(m) => m.nrows(),
        }
    }

    fn fro_norm(&self) -> f64 {
        match self {
            OutcomeFactor::UniformBlock(u) => u.fro_norm(),
            OutcomeFactor::Diagonal(d) => d.norm(),
            OutcomeFactor::Dense(m) => m.norm(),
        }
    }

    fn spectral_norm(&self) -> f64 {
        match self {
            OutcomeFactor::UniformBlock(u) => u.spectral_norm(),
            OutcomeFactor::Diagonal(d) => d.iter().fold(0.0f64, |m, &v| m.max(v.abs())),
            OutcomeFactor::Dense(m) => SymmetricEigen::new(m.clone())
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, &l| acc.max(l.abs())),
        }
    }

    /// Frobenius inner product, closed form wherever a compressed form exists.
    fn fro_inner(&self, other: &Self) -> Result<f64> {
        use OutcomeFactor::*;
        Ok(match (self, other) {
            (UniformBlock(a), UniformBlock(b)) => a.trace_mul(b)?,
            (UniformBlock(u), Diagonal(d)) | (Diagonal(d), UniformBlock(u)) => {
                u.dense_diagonal().dot(d)
            }
            (UniformBlock(u), Dense(m)) | (Dense(m), UniformBlock(u)) => u.trace_mul_dense(m)?,
            (Diagonal(a), Diagonal(b)) => a.dot(b),
            (Diagonal(d), Dense(m)) | (Dense(m), Diagonal(d)) => {
                (0..d.len()).map(|i| d[i] * m[(i, i)]).sum()
            }
            (Dense(a), Dense(b)) => a.dot(b),
        })
    }

    fn to_dense(&self) -> DMatrix<f64> {
        match self {
            OutcomeFactor::UniformBlock(u) => u.to_dense(),
            OutcomeFactor::Diagonal(d) => DMatrix::from_diagonal(d),
            OutcomeFactor::Dense(m) => m.clone(),
        }
    }

    /// Frobenius norm of `self - other`, in compressed coordinates where both
    /// sides admit them.
    fn fro_diff(&self, other: &Self) -> Result<f64> {
        use OutcomeFactor::*;
        Ok(match (self, other) {
            (UniformBlock(a), UniformBlock(b)) => a.sub(b)?.fro_norm(),
            (UniformBlock(u), Diagonal(d)) | (Diagonal(d), UniformBlock(u)) => {
                // off-diagonal mass of the UB factor plus the diagonal gap
                let udiag = u.dense_diagonal();
                let off_sq = (u.fro_norm().powi(2) - udiag.norm_squared()).max(0.0);
                let diag_sq = (&udiag - d).norm_squared();
                (off_sq + diag_sq).sqrt()
            }
            (Diagonal(a), Diagonal(b)) => (a - b).norm(),
            (a, b) => (a.to_dense() - b.to_dense()).norm(),
        })
    }

    /// Spectral norm of `self - other`.
    fn spectral_diff(&self, other: &Self) -> Result<f64> {
        use OutcomeFactor::*;
        Ok(match (self, other) {
            (UniformBlock(a), UniformBlock(b)) => a.sub(b)?.spectral_norm(),
            (Diagonal(a), Diagonal(b)) => {
                (0..a.len()).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
            }
            (a, b) => symmetric_spectral(&(a.to_dense() - b.to_dense())),
        })
    }
}

/// Kronecker-factored covariance `outcome x unit`, kept in factors.
#[derive(Debug, Clone)]
pub struct FactoredCovariance {
    pub outcome: OutcomeFactor,
    pub unit: DMatrix<f64>,
}

impl FactoredCovariance {
    pub fn new(outcome: OutcomeFactor, unit: DMatrix<f64>) -> Self {
        Self { outcome, unit }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.outcome.to_dense().kronecker(&self.unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Frobenius,
    Spectral,
}

/// Relative loss `|estimated - truth| / |truth|` of Kronecker-factored
/// covariances, computed without materializing the products: both norms are
/// multiplicative over factors, and the Frobenius numerator follows from the
/// inner products of the factors.
pub fn relative_loss(
    estimated: &FactoredCovariance,
    truth: &FactoredCovariance,
    norm: Norm,
) -> Result<f64> {
    let r = truth.outcome.dim();
    if estimated.outcome.dim() != r {
        return Err(Error::DimensionMismatch(format!(
            "outcome factors disagree: {} vs {r}",
            estimated.outcome.dim()
        )));
    }
    if estimated.unit.shape() != truth.unit.shape() {
        return Err(Error::DimensionMismatch("unit factors disagree in shape".into()));
    }
    let shared_unit = same_matrix(&estimated.unit, &truth.unit);
    match norm {
        Norm::Frobenius => {
            if shared_unit {
                // the unit factor cancels: |(U1 - U2) x V| / |U2 x V| = |U1 - U2| / |U2|
                Ok(estimated.outcome.fro_diff(&truth.outcome)? / truth.outcome.fro_norm())
            } else {
                let u1 = estimated.outcome.fro_norm();
                let v1 = estimated.unit.norm();
                let u2 = truth.outcome.fro_norm();
                let v2 = truth.unit.norm();
                let cross = estimated.outcome.fro_inner(&truth.outcome)?
                    * estimated.unit.dot(&truth.unit);
                let num_sq = (u1 * v1).powi(2) - 2.0 * cross + (u2 * v2).powi(2);
                Ok(num_sq.max(0.0).sqrt() / (u2 * v2))
            }
        }
        Norm::Spectral => {
            if shared_unit {
                Ok(estimated.outcome.spectral_diff(&truth.outcome)?
                    / truth.outcome.spectral_norm())
            } else if r * truth.unit.nrows() <= 2000 {
                let denom = truth.outcome.spectral_norm() * symmetric_spectral(&truth.unit);
                let diff = estimated.to_dense() - truth.to_dense();
                Ok(symmetric_spectral(&diff) / denom)
            } else {
                Err(Error::InvalidConfig(
                    "spectral relative loss with distinct unit factors requires Rp <= 2000".into(),
                ))
            }
        }
    }
}

/// Dense cross-check of [`relative_loss`], usable below `Rp <= 2000`.
pub fn relative_loss_dense(
    estimated: &FactoredCovariance,
    truth: &FactoredCovariance,
    norm: Norm,
) -> Result<f64> {
    let rp = truth.outcome.dim() * truth.unit.nrows();
    if rp > 2000 {
        return Err(Error::InvalidConfig(format!("dense cross-check limited to Rp <= 2000, got {rp}")));
    }
    let e = estimated.to_dense();
    let t = truth.to_dense();
    let diff = &e - &t;
    Ok(match norm {
        Norm::Frobenius => diff.norm() / t.norm(),
        Norm::Spectral => symmetric_spectral(&diff) / symmetric_spectral(&t),
    })
}

fn symmetric_spectral(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()))
}

fn same_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}
