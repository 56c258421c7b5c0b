//! Two-stage fit: closed-form least squares for the coefficients, Fisher
//! scoring for the dependence parameters, exact factored coefficient
//! covariance.
//!
//! The generalized-least-squares estimator with any uniform-block weight
//! equals plain least squares here, so the coefficient stage runs once and is
//! never iterated. The optional FGLS cross-check recomputes the coefficients
//! through the weighted normal equations and reports the largest deviation.

use crate::error::{Error, Result};
use crate::likelihood::{fisher_information, log_likelihood, score, BlockSummaries};
use crate::params::{sigma_to_gamma_relaxed, GammaVector, RhoVector};
use crate::part::PartitionVector;
use crate::ub::UniformBlockMatrix;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

/// Covariates and outcomes, with outcome columns ordered so communities are
/// contiguous and match the partition.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    part: PartitionVector,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, part: PartitionVector) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if y.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariates have {n} rows but outcomes have {}",
                y.nrows()
            )));
        }
        if y.ncols() != part.total_dim() {
            return Err(Error::DimensionMismatch(format!(
                "partition sums to {} but outcomes have {} columns",
                part.total_dim(),
                y.ncols()
            )));
        }
        if n <= p.max(part.num_params()) {
            return Err(Error::DimensionMismatch(format!(
                "sample size {n} must exceed max(p = {p}, dependence parameters = {})",
                part.num_params()
            )));
        }
        let sv = x.clone().svd(false, false).singular_values;
        let smax = sv.iter().fold(0.0f64, |m, &s| m.max(s));
        let smin = sv.iter().fold(f64::INFINITY, |m, &s| m.min(s));
        if smin <= 0.0 || smin < 1e-12 * smax {
            return Err(Error::RankDeficient(format!(
                "covariate matrix singular values span [{smin:.3e}, {smax:.3e}]"
            )));
        }
        Ok(Self { x, y, part })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn part(&self) -> &PartitionVector {
        &self.part
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    /// `R x p` coefficient matrix, row `r` holding the coefficients of feature `r`.
    pub beta: DMatrix<f64>,
    /// `n x R` residual matrix `Y - X B^T`.
    pub residuals: DMatrix<f64>,
}

/// Least squares for all features at once: the stacked problem decomposes into
/// `R` independent `p`-dimensional regressions sharing the Gram matrix.
pub fn ols_fit(d: &Dataset) -> Result<OlsFit> {
    let xtx = d.x.transpose() * &d.x;
    let sv = xtx.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0f64, |m, &s| m.max(s));
    let smin = sv.iter().fold(f64::INFINITY, |m, &s| m.min(s));
    if smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::RankDeficient(format!(
            "gram matrix condition estimate {:.3e} exceeds 1e12",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let chol = Cholesky::new(xtx)
        .ok_or_else(|| Error::RankDeficient("gram matrix is not positive definite".into()))?;
    let xty = d.x.transpose() * &d.y; // p x R
    let bt = chol.solve(&xty); // p x R
    let mut residuals = d.y.clone();
    residuals.gemm(-1.0, &d.x, &bt, 1.0);
    Ok(OlsFit { beta: bt.transpose(), residuals })
}

#[derive(Debug, Clone)]
pub struct ScoringOptions {
    /// Convergence tolerance on the max-norm of the score.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        // near small-n optima the scoring contraction can be slow; iterations
        // cost O(G^4), so a generous cap is cheap
        Self { tol: 1e-8, max_iter: 500, max_halvings: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct ScoringDiagnostics {
    pub iterations: usize,
    pub final_score_norm: f64,
    pub log_likelihood: f64,
}

/// Fisher scoring ascent `gamma <- gamma + step * Psi^-1 score`, halving the
/// step whenever the candidate leaves the positive-definite regime or lowers
/// the likelihood.
///
/// The expected information can underestimate the observed curvature along
/// nearly flat directions, stalling the pure scoring update above the
/// tolerance. Once the score is small, the update therefore switches to a
/// Newton direction built from central finite differences of the analytic
/// score, falling back to the scoring direction whenever that Hessian is not
/// usable.
pub fn fisher_scoring(
    s: &BlockSummaries,
    init: &GammaVector,
    opts: &ScoringOptions,
) -> Result<(GammaVector, ScoringDiagnostics)> {
    init.part().same_as(s.part())?;
    init.check_admissible().map_err(|e| Error::InadmissibleStart(e.to_string()))?;
    let mut gamma = init.clone();
    let mut ll = log_likelihood(&gamma, s)?;
    let mut best: Option<(GammaVector, f64)> = None;
    for iter in 0..=opts.max_iter {
        let sc = score(&gamma, s)?;
        let norm = sc.amax();
        if best.as_ref().map_or(true, |(_, b)| norm < *b) {
            best = Some((gamma.clone(), norm));
        }
        if norm < opts.tol {
            return Ok((gamma, ScoringDiagnostics { iterations: iter, final_score_norm: norm, log_likelihood: ll }));
        }
        if iter == opts.max_iter {
            break;
        }
        // scoring directions first during the warmup, then the Newton
        // direction (observed curvature) with scoring as the fallback
        let mut directions: Vec<DVector<f64>> = Vec::with_capacity(2);
        if iter >= 15 || norm < 1e-3 {
            if let Some(d) = newton_direction(&gamma, s, &sc) {
                directions.push(d);
            }
        }
        let psi = fisher_information(&gamma, s.n())?;
        directions.push(solve_spd(&psi, &sc)?);
        let slack = 1e-10 * (1.0 + ll.abs());
        let mut accepted = None;
        'dirs: for dir in &directions {
            let mut step = 1.0;
            for _ in 0..=opts.max_halvings {
                let cand = GammaVector::new(gamma.values() + dir * step, gamma.part().clone())?;
                if let Ok(cand_ll) = log_likelihood(&cand, s) {
                    if cand_ll >= ll - slack {
                        accepted = Some((cand, cand_ll));
                        break 'dirs;
                    }
                }
                step *= 0.5;
            }
        }
        match accepted {
            Some((cand, cand_ll)) => {
                gamma = cand;
                ll = cand_ll;
            }
            None => break, // stuck: no admissible ascent step
        }
    }
    let (best_gamma, best_norm) = best.expect("at least one iterate");
    Err(Error::NotConverged {
        score_norm: best_norm,
        iterations: opts.max_iter,
        tol: opts.tol,
        best: best_gamma.values().iter().copied().collect(),
    })
}

/// Ascent direction `-H^-1 s` with `H` the finite-difference Jacobian of the
/// analytic score. Returns `None` when the Hessian cannot be formed or the
/// resulting direction is not an ascent direction.
fn newton_direction(
    gamma: &GammaVector,
    s: &BlockSummaries,
    sc: &DVector<f64>,
) -> Option<DVector<f64>> {
    let m = gamma.part().num_params();
    let mut h = DMatrix::zeros(m, m);
    for j in 0..m {
        let step = 1e-6 * gamma.values()[j].abs().max(1.0);
        let mut up = gamma.values().clone();
        up[j] += step;
        let mut dn = gamma.values().clone();
        dn[j] -= step;
        let s_up = score(&GammaVector::new(up, gamma.part().clone()).ok()?, s).ok()?;
        let s_dn = score(&GammaVector::new(dn, gamma.part().clone()).ok()?, s).ok()?;
        let col = (s_up - s_dn) / (2.0 * step);
        h.set_column(j, &col);
    }
    let h = (&h + h.transpose()) * 0.5;
    let dir = (-h).lu().solve(sc)?;
    (dir.dot(sc) > 0.0).then_some(dir)
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol.solve(rhs));
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::NotPositiveDefinite("fisher information is singular".into()))
}

/// Method-of-moments start: fit the block means of the residual Gram matrix
/// as a provisional covariance and pull it back through the square-root
/// inverse transform with relaxed diagonal reconciliation. Degenerate
/// residual matrices (near-zero or near-singular block means) yield no start.
pub fn moment_start(s: &BlockSummaries) -> Option<GammaVector> {
    let part = s.part().clone();
    let g = part.num_blocks();
    let mut a = DVector::zeros(g);
    let mut b = DMatrix::zeros(g, g);
    for gi in 0..g {
        let l = part.size(gi) as f64;
        let within = (s.block_sums()[(gi, gi)] - s.block_traces()[gi]) / (l * (l - 1.0));
        b[(gi, gi)] = within;
        a[gi] = s.block_traces()[gi] / l - within;
        for gj in (gi + 1)..g {
            let v = s.block_sums()[(gi, gj)] / (l * part.size(gj) as f64);
            b[(gi, gj)] = v;
            b[(gj, gi)] = v;
        }
    }
    let sigma = UniformBlockMatrix::new(a, b, part).ok()?;
    let ev = sigma.eigenvalues();
    let min = ev[0];
    let max = ev[ev.len() - 1];
    if !(min > 1e-12 && max / min < 1e10) {
        return None;
    }
    let gamma = sigma_to_gamma_relaxed(&sigma).ok()?;
    if gamma.values().amax() > 1e3 {
        return None;
    }
    gamma.is_admissible().then_some(gamma)
}

/// Sign-symmetry family of a starting point: per-community sign flips leave
/// the within-community parameters alone and flip `gamma_gg'` to
/// `s_g s_g' gamma_gg'`. These are exactly the basins a noisy moment start
/// can confuse, so scoring is launched from each of them.
fn signature_starts(start: &GammaVector) -> Vec<GammaVector> {
    let part = start.part().clone();
    let g = part.num_blocks();
    let bits = (g - 1).min(7);
    let mut out = Vec::with_capacity(1 << bits);
    for mask in 0..(1usize << bits) {
        let sign = |gi: usize| -> f64 {
            if gi == 0 {
                1.0
            } else if mask >> (gi - 1) & 1 == 1 {
                -1.0
            } else {
                1.0
            }
        };
        let mut v = start.values().clone();
        for gi in 0..g {
            for gj in (gi + 1)..g {
                v[crate::params::param_index(g, gi, gj)] *= sign(gi) * sign(gj);
            }
        }
        out.push(GammaVector::new(v, part.clone()).expect("consistent length"));
    }
    out
}

/// Exact coefficient covariance in factored form: a uniform-block outcome
/// factor paired with the `p x p` Gram inverse, never materialized as the
/// `Rp x Rp` Kronecker product.
#[derive(Debug, Clone)]
pub struct FactoredBetaCov {
    sigma: UniformBlockMatrix,
    xtx_inv: DMatrix<f64>,
}

impl FactoredBetaCov {
    pub fn new(sigma: UniformBlockMatrix, xtx_inv: DMatrix<f64>) -> Self {
        Self { sigma, xtx_inv }
    }

    pub fn sigma(&self) -> &UniformBlockMatrix {
        &self.sigma
    }

    pub fn xtx_inv(&self) -> &DMatrix<f64> {
        &self.xtx_inv
    }

    /// `SE(beta_r^(q)) = sqrt(Sigma_rr [ (X^T X)^-1 ]_qq)`.
    pub fn se(&self, r: usize, q: usize) -> f64 {
        (self.sigma.dense_diagonal()[r] * self.xtx_inv[(q, q)]).sqrt()
    }

    /// All standard errors as an `R x p` matrix.
    pub fn se_matrix(&self) -> DMatrix<f64> {
        let diag = self.sigma.dense_diagonal();
        let r = diag.len();
        let p = self.xtx_inv.nrows();
        DMatrix::from_fn(r, p, |i, q| (diag[i] * self.xtx_inv[(q, q)]).sqrt())
    }

    /// Dense Kronecker expansion, for oracles and small problems only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.sigma.to_dense().kronecker(&self.xtx_inv)
    }
}

#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub scoring: ScoringDiagnostics,
    /// Eigenvalues of `Psi_gamma / n` at the estimate, ascending.
    pub fisher_spectrum_over_n: Vec<f64>,
    /// Largest max-norm distance between the selected optimum and the optima
    /// reached from the other starting points; values above 1e-6 flag
    /// finite-sample multimodality.
    pub start_disagreement: Option<f64>,
    pub moment_start_used: bool,
    /// Max abs difference between the explicit FGLS coefficients and the
    /// least-squares coefficients, when the cross-check was requested.
    pub fgls_max_abs_diff: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// `R x p` coefficient matrix.
    pub beta: DMatrix<f64>,
    pub beta_cov: FactoredBetaCov,
    pub gamma: GammaVector,
    pub rho: RhoVector,
    /// Asymptotic covariance of `gamma`: inverse Fisher information at the estimate.
    pub gamma_cov: DMatrix<f64>,
    pub n: usize,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    /// `sqrt((gamma_cov)_jj)`.
    pub fn gamma_se(&self, j: usize) -> f64 {
        self.gamma_cov[(j, j)].sqrt()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub scoring: ScoringOptions,
    /// Re-estimate the coefficients through the weighted normal equations and
    /// record the deviation from least squares.
    pub fgls_check: bool,
    /// Run scoring from the moment start only, skipping the sign-symmetry
    /// family and the zero start.
    pub single_start: bool,
}

/// Full pipeline: least squares once, block summaries, Fisher scoring from
/// the moment start (plus its sign-symmetry family and the zero start,
/// keeping the highest-likelihood optimum), then the factored covariance
/// assembly. No coefficient re-estimation loop.
pub fn fit(d: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let ols = ols_fit(d)?;
    let summaries = BlockSummaries::from_residuals(&ols.residuals, d.part())?;
    let zero = GammaVector::zeros(d.part().clone());
    let moment = moment_start(&summaries);
    let moment_start_used = moment.is_some();
    let mut starts: Vec<GammaVector> = Vec::new();
    match (&moment, opts.single_start) {
        (Some(m), false) => {
            starts.extend(signature_starts(m));
            starts.push(zero);
        }
        (Some(m), true) => starts.push(m.clone()),
        (None, _) => starts.push(zero),
    }
    let mut best: Option<(GammaVector, ScoringDiagnostics)> = None;
    let mut others: Vec<GammaVector> = Vec::new();
    let mut last_err = None;
    for start in &starts {
        match fisher_scoring(&summaries, start, &opts.scoring) {
            Ok((g, diag)) => {
                if best.as_ref().map_or(true, |(_, b)| diag.log_likelihood > b.log_likelihood) {
                    if let Some((prev, _)) = best.take() {
                        others.push(prev);
                    }
                    best = Some((g, diag));
                } else {
                    others.push(g);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (gamma, scoring) = best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::InadmissibleStart("no starting point available".into()))
    })?;
    let start_disagreement = others
        .iter()
        .map(|alt| (gamma.values() - alt.values()).amax())
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    let sigma = gamma.sigma()?;
    let xtx = d.x().transpose() * d.x();
    let xtx_inv = Cholesky::new(xtx)
        .ok_or_else(|| Error::RankDeficient("gram matrix is not positive definite".into()))?
        .inverse();
    let psi = fisher_information(&gamma, d.n())?;
    let gamma_cov = Cholesky::new(psi.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("fisher information at the estimate".into()))?
        .inverse();
    let mut spectrum: Vec<f64> =
        SymmetricEigen::new(psi / d.n() as f64).eigenvalues.iter().copied().collect();
    spectrum.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let beta_cov = FactoredBetaCov::new(sigma, xtx_inv);
    let fgls_max_abs_diff = if opts.fgls_check {
        let fgls = fgls_beta_factored(d, &gamma)?;
        Some((&fgls - &ols.beta).amax())
    } else {
        None
    };
    Ok(FitResult {
        beta: ols.beta,
        beta_cov,
        gamma: gamma.clone(),
        rho: gamma.to_rho(),
        gamma_cov,
        n: d.n(),
        diagnostics: FitDiagnostics {
            scoring,
            fisher_spectrum_over_n: spectrum,
            start_disagreement,
            moment_start_used,
            fgls_max_abs_diff,
        },
    })
}

/// Explicit FGLS coefficients through the factored weighted normal equations:
/// solve `(X^T X) Z = X^T Y Omega`, then `B^T = Z Sigma`. Exercises the
/// weight matrix on both sides instead of cancelling it algebraically.
pub fn fgls_beta_factored(d: &Dataset, gamma: &GammaVector) -> Result<DMatrix<f64>> {
    let omega = gamma.omega();
    let sigma = gamma.sigma()?;
    let xty = d.x().transpose() * d.y(); // p x R
    let w = omega.mul_dense_left(&xty)?; // (X^T Y) Omega
    let xtx = d.x().transpose() * d.x();
    let z = Cholesky::new(xtx)
        .ok_or_else(|| Error::RankDeficient("gram matrix is not positive definite".into()))?
        .solve(&w);
    Ok(sigma.mul_dense_left(&z)?.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        let mut x = normal_matrix(rng, n, p);
        for i in 0..n {
            x[(i, 0)] = 1.0;
        }
        x
    }

    /// Draws outcomes with covariance `Sigma(gamma)` via the compressed
    /// `(I - Upsilon)^-1` factor.
    fn sample_outcomes(
        rng: &mut ChaCha8Rng,
        x: &DMatrix<f64>,
        beta: &DMatrix<f64>,
        gamma: &GammaVector,
    ) -> DMatrix<f64> {
        let part = gamma.part().clone();
        let id = UniformBlockMatrix::identity(part.clone());
        let w = id.sub(&gamma.upsilon()).unwrap().inverse().unwrap();
        let eps = normal_matrix(rng, x.nrows(), part.total_dim());
        let noise = w.mul_dense_left(&eps).unwrap();
        x * beta.transpose() + noise
    }

    #[test]
    fn exact_recovery_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let part = PartitionVector::new(vec![2, 3]).unwrap();
        let x = design(&mut rng, 20, 2);
        let beta0 = normal_matrix(&mut rng, 5, 2);
        let y = &x * beta0.transpose();
        let d = Dataset::new(x, y, part).unwrap();
        let ols = ols_fit(&d).unwrap();
        assert_abs_diff_eq!(ols.beta, beta0, epsilon = 1e-10);
        assert!(ols.residuals.amax() < 1e-10);
    }

    #[test]
    fn intercept_only_gives_column_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let part = PartitionVector::new(vec![2, 2]).unwrap();
        let x = DMatrix::repeat(9, 1, 1.0);
        let y = normal_matrix(&mut rng, 9, 4);
        let means: Vec<f64> = (0..4).map(|c| y.column(c).mean()).collect();
        let d = Dataset::new(x, y, part).unwrap();
        let ols = ols_fit(&d).unwrap();
        for (r, m) in means.iter().enumerate() {
            assert_abs_diff_eq!(ols.beta[(r, 0)], *m, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_stacked_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let part = PartitionVector::new(vec![2, 2]).unwrap();
        let (n, p, r) = (12usize, 2usize, 4usize);
        let x = design(&mut rng, n, p);
        let y = normal_matrix(&mut rng, n, r);
        let d = Dataset::new(x.clone(), y.clone(), part).unwrap();
        let ols = ols_fit(&d).unwrap();
        // stacked (nR) x (Rp) system, beta ordered feature-major
        let mut xs = DMatrix::zeros(n * r, r * p);
        let mut ys = DVector::zeros(n * r);
        for i in 0..n {
            for feat in 0..r {
                let row = i * r + feat;
                ys[row] = y[(i, feat)];
                for q in 0..p {
                    xs[(row, feat * p + q)] = x[(i, q)];
                }
            }
        }
        let sol = (xs.transpose() * &xs).lu().solve(&(xs.transpose() * ys)).unwrap();
        for feat in 0..r {
            for q in 0..p {
                assert_abs_diff_eq!(ols.beta[(feat, q)], sol[feat * p + q], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficient_design_rejected() {
        let part = PartitionVector::new(vec![2, 2]).unwrap();
        let mut x = DMatrix::repeat(10, 2, 1.0);
        for i in 0..10 {
            x[(i, 1)] = 2.0; // second column collinear with intercept
        }
        let y = DMatrix::zeros(10, 4);
        assert!(matches!(Dataset::new(x, y, part), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn null_model_estimates_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let part = PartitionVector::new(vec![4, 5]).unwrap();
        let gamma0 = GammaVector::zeros(part.clone());
        let x = design(&mut rng, 600, 2);
        let beta0 = DMatrix::zeros(9, 2);
        let y = sample_outcomes(&mut rng, &x, &beta0, &gamma0);
        let d = Dataset::new(x, y, part).unwrap();
        let f = fit(&d, &FitOptions::default()).unwrap();
        for j in 0..3 {
            let ase = f.gamma_se(j);
            assert!(
                f.gamma.values()[j].abs() < 3.0 * ase,
                "gamma[{j}] = {} exceeds 3 x {ase}",
                f.gamma.values()[j]
            );
        }
    }

    #[test]
    fn converged_score_is_stationary_and_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let part = PartitionVector::new(vec![30, 40, 60]).unwrap();
        let gamma0 = GammaVector::from_slice(&[0.40, 0.01, -0.51, 0.19, -0.91, -0.64], part.clone())
            .unwrap();
        let x = design(&mut rng, 300, 2);
        let beta0 = normal_matrix(&mut rng, 130, 2);
        let y = sample_outcomes(&mut rng, &x, &beta0, &gamma0);
        let d = Dataset::new(x, y, part.clone()).unwrap();
        let f = fit(&d, &FitOptions::default()).unwrap();
        let summaries =
            BlockSummaries::from_residuals(&ols_fit(&d).unwrap().residuals, &part).unwrap();
        let sc = score(&f.gamma, &summaries).unwrap();
        assert!(sc.amax() < 1e-8, "score norm {}", sc.amax());
        let ll_hat = log_likelihood(&f.gamma, &summaries).unwrap();
        let mut tried = 0;
        while tried < 100 {
            let dir = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dir = dir.normalize() * 0.01;
            let cand = GammaVector::new(f.gamma.values() + dir, part.clone()).unwrap();
            if let Ok(ll) = log_likelihood(&cand, &summaries) {
                assert!(ll <= ll_hat, "perturbation improved the likelihood by {}", ll - ll_hat);
                tried += 1;
            }
        }
    }

    #[test]
    fn zero_noise_fit_is_degenerate_but_defined() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let part = PartitionVector::new(vec![2, 3]).unwrap();
        let x = design(&mut rng, 25, 2);
        let beta0 = normal_matrix(&mut rng, 5, 2);
        let y = &x * beta0.transpose();
        let d = Dataset::new(x, y, part.clone()).unwrap();
        let f = fit(&d, &FitOptions::default()).unwrap();
        assert_abs_diff_eq!(f.beta, beta0, epsilon = 1e-9);
        assert_eq!(f.gamma.values(), GammaVector::zeros(part).values());
    }

    #[test]
    fn factored_se_matches_dense_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let part = PartitionVector::new(vec![2, 3]).unwrap();
        let gamma0 = GammaVector::from_slice(&[0.2, -0.1, 0.15], part.clone()).unwrap();
        let x = design(&mut rng, 40, 2);
        let beta0 = normal_matrix(&mut rng, 5, 2);
        let y = sample_outcomes(&mut rng, &x, &beta0, &gamma0);
        let d = Dataset::new(x, y, part).unwrap();
        let f = fit(&d, &FitOptions::default()).unwrap();
        let dense = f.beta_cov.to_dense();
        for r in 0..5 {
            for q in 0..2 {
                let idx = r * 2 + q;
                assert_abs_diff_eq!(f.beta_cov.se(r, q), dense[(idx, idx)].sqrt(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fgls_check_agrees_with_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let part = PartitionVector::new(vec![3, 3]).unwrap();
        let gamma0 = GammaVector::from_slice(&[0.2, 0.1, 0.15], part.clone()).unwrap();
        let x = design(&mut rng, 50, 3);
        let beta0 = normal_matrix(&mut rng, 6, 3);
        let y = sample_outcomes(&mut rng, &x, &beta0, &gamma0);
        let d = Dataset::new(x, y, part).unwrap();
        let opts = FitOptions { fgls_check: true, ..Default::default() };
        let f = fit(&d, &opts).unwrap();
        let diff = f.diagnostics.fgls_max_abs_diff.unwrap();
        assert!(diff < 1e-8, "fgls deviation {diff}");
    }

    #[test]
    fn deterministic_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let part = PartitionVector::new(vec![2, 2]).unwrap();
        let x = design(&mut rng, 30, 2);
        let y = normal_matrix(&mut rng, 30, 4);
        let d = Dataset::new(x, y, part).unwrap();
        let a = fit(&d, &FitOptions::default()).unwrap();
        let b = fit(&d, &FitOptions::default()).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.gamma.values(), b.gamma.values());
        assert_eq!(a.gamma_cov, b.gamma_cov);
    }

    #[test]
    fn inadmissible_start_rejected() {
        let part = PartitionVector::new(vec![2, 2]).unwrap();
        let s = BlockSummaries::from_residuals(&DMatrix::repeat(5, 4, 1.0), &part).unwrap();
        let bad = GammaVector::from_slice(&[-1.0, 0.0, 0.0], part).unwrap();
        assert!(matches!(
            fisher_scoring(&s, &bad, &ScoringOptions::default()),
            Err(Error::InadmissibleStart(_))
        ));
    }
}

