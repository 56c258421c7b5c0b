//! Randomized oracle suites: every closed-form path is checked against a
//! plain dense linear-algebra computation on the expanded matrices, and the
//! analytic score against central finite differences.
//!
//! These drive both the `validate` command and the acceptance tests, so the
//! oracle implementations live here rather than in test code. They only use
//! the dense expansion plus generic dense solvers, never the compressed
//! closed forms they are checking.

use crate::estimator::{fit, ols_fit, Dataset, FitOptions};
use crate::likelihood::{log_likelihood, score, BlockSummaries};
use crate::params::{sigma_to_gamma, GammaVector};
use crate::part::PartitionVector;
use crate::ub::UniformBlockMatrix;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Outcome of one randomized check.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub cases: usize,
    pub max_err: f64,
    pub threshold: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_err.is_finite() && self.max_err < self.threshold
    }
}

fn case_rng(seed: u64, case: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case as u64 + 1);
    rng
}

/// Random partition with `G` in `1..=max_blocks` and sizes in `2..=max_size`.
pub fn random_partition(rng: &mut ChaCha8Rng, max_blocks: usize, max_size: usize) -> PartitionVector {
    let g = rng.random_range(1..=max_blocks);
    let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(2..=max_size)).collect();
    PartitionVector::new(sizes).expect("sizes at least 2")
}

/// Random symmetric UB matrix with coordinates in `+-scale`.
pub fn random_ub(rng: &mut ChaCha8Rng, part: &PartitionVector, scale: f64) -> UniformBlockMatrix {
    let g = part.num_blocks();
    let a = DVector::from_fn(g, |_, _| rng.random_range(-scale..=scale));
    let mut b = DMatrix::zeros(g, g);
    for i in 0..g {
        for j in i..g {
            let v = rng.random_range(-scale..=scale);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    UniformBlockMatrix::new(a, b, part.clone()).expect("consistent shapes")
}

/// Random symmetric positive-definite UB matrix with an exact condition bound:
/// squares a random UB matrix and shifts the diagonal so the eigenvalue ratio
/// stays below `max_condition`.
pub fn random_pd_ub(
    rng: &mut ChaCha8Rng,
    part: &PartitionVector,
    max_condition: f64,
) -> UniformBlockMatrix {
    let z = random_ub(rng, part, 1.0);
    let sq = z.mul(&z).expect("same partition");
    let lam_max = z.spectral_norm().powi(2).max(1e-3);
    let target = rng.random_range(10.0..=max_condition);
    let eps = lam_max / (target - 1.0);
    let g = part.num_blocks();
    let a = DVector::from_fn(g, |i, _| sq.a[i] + eps);
    UniformBlockMatrix::symmetrized(a, sq.b.clone(), part.clone()).expect("consistent shapes")
}

/// Random dependence vector with a positive-definite precision, by
/// rejection. Half the draws keep the autoregressive factor `I - Upsilon`
/// positive definite; the other half explore the sign-indefinite cells (as
/// the reference simulation configuration does), keeping the factor well
/// away from singularity so transforms stay numerically clean.
pub fn random_admissible_gamma(rng: &mut ChaCha8Rng, part: &PartitionVector) -> GammaVector {
    let g = part.num_blocks();
    let damp = 1.0 / g as f64;
    loop {
        let wild = rng.random::<bool>();
        let (dspread, ospread) = if wild { (1.6, 1.1 * damp) } else { (0.6, 0.6 * damp) };
        let mut values = DVector::zeros(part.num_params());
        let mut j = 0;
        for gi in 0..g {
            for gj in gi..g {
                let spread = if gi == gj { dspread } else { ospread };
                values[j] = rng.random_range(-spread..=spread);
                j += 1;
            }
        }
        let gamma = GammaVector::new(values, part.clone()).expect("consistent length");
        let ups = gamma.upsilon();
        if (0..g).any(|i| (1.0 - ups.a()[i]).abs() < 0.1) {
            continue;
        }
        let id = UniformBlockMatrix::identity(part.clone());
        let i_minus = id.sub(&ups).expect("same partition");
        let ev = i_minus.delta().eigenvalues();
        let abs_min = ev.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
        let abs_max = ev.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if !wild && ev[0] <= 0.05 {
            continue;
        }
        if abs_min > 0.1 && abs_max / abs_min < 1e3 {
            return gamma;
        }
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

fn rel_err_mat(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).amax() / want.amax().max(1.0)
}

/// Dense-oracle checks of the whole UB algebra. Matrix sizes follow the
/// randomized grid `G in 1..=5`, `L_g in 2..=60`.
pub fn ub_algebra_suite(seed: u64, cases: usize) -> Vec<OracleReport> {
    let names = [
        ("add", 1e-10),
        ("mul", 1e-10),
        ("square", 1e-10),
        ("eigenvalues", 1e-10),
        ("det", 1e-10),
        ("log_det", 1e-10),
        ("inverse", 1e-8),
        ("sqrt", 1e-10),
        ("trace_dense", 1e-10),
        ("trace_ub", 1e-10),
    ];
    let errs: Vec<[f64; 10]> = (0..cases)
        .into_par_iter()
        .map(|case| {
            let mut rng = case_rng(seed, case);
            let part = random_partition(&mut rng, 5, 60);
            let x = random_ub(&mut rng, &part, 1.5);
            let y = random_ub(&mut rng, &part, 1.5);
            let pd = random_pd_ub(&mut rng, &part, 1e6);
            // the determinant of a cond-1e6 matrix is itself only defined to
            // ~cond * eps relative, so that check gets a mild matrix
            let pd_mild = random_pd_ub(&mut rng, &part, 1e3);
            let xd = x.to_dense();
            let yd = y.to_dense();
            let pdd = pd.to_dense();
            let mut e = [0.0f64; 10];
            // add
            e[0] = rel_err_mat(&x.add(&y).expect("same partition").to_dense(), &(&xd + &yd));
            // mul
            e[1] = rel_err_mat(&x.mul(&y).expect("same partition").to_dense(), &(&xd * &yd));
            // square
            e[2] = rel_err_mat(&x.mul(&x).expect("same partition").to_dense(), &(&xd * &xd));
            // eigenvalues (symmetric dense oracle)
            let mut dense_ev: Vec<f64> =
                SymmetricEigen::new(xd.clone()).eigenvalues.iter().copied().collect();
            dense_ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ev = x.eigenvalues();
            let scale = dense_ev.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
            e[3] = ev
                .iter()
                .zip(&dense_ev)
                .map(|(a, b)| (a - b).abs() / scale)
                .fold(0.0, f64::max);
            // det on the mildly conditioned PD matrix
            e[4] = {
                let want = pd_mild.to_dense().lu().determinant();
                (pd_mild.det() - want).abs() / want.abs()
            };
            // log det via dense Cholesky
            e[5] = {
                let chol = Cholesky::new(pdd.clone()).expect("pd");
                let want = 2.0 * (0..pdd.nrows()).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
                rel_err(pd.log_det().expect("pd"), want)
            };
            // inverse
            e[6] = {
                let want = pdd.clone().try_inverse().expect("pd");
                rel_err_mat(&pd.inverse().expect("pd").to_dense(), &want)
            };
            // principal square root via dense eigendecomposition
            e[7] = {
                let eig = SymmetricEigen::new(pdd.clone());
                let mut root = DMatrix::zeros(pdd.nrows(), pdd.nrows());
                for k in 0..pdd.nrows() {
                    let s = eig.eigenvalues[k].max(0.0).sqrt();
                    let v = eig.eigenvectors.column(k);
                    root.ger(s, &v, &v, 1.0);
                }
                rel_err_mat(&pd.sqrt().expect("pd").to_dense(), &root)
            };
            // trace against a dense factor
            e[8] = {
                let r = part.total_dim();
                let mut m = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
                m = (&m + m.transpose()) * 0.5;
                let want = (&m * &xd).trace();
                rel_err(x.trace_mul_dense(&m).expect("matching sizes"), want)
            };
            // trace of a UB pair
            e[9] = {
                let want = (&xd * &yd).trace();
                rel_err(x.trace_mul(&y).expect("same partition"), want)
            };
            e
        })
        .collect();
    names
        .iter()
        .enumerate()
        .map(|(k, (name, threshold))| OracleReport {
            name: format!("ub/{name}"),
            cases,
            max_err: errs.iter().map(|e| e[k]).fold(0.0, f64::max),
            threshold: *threshold,
        })
        .collect()
}

/// Compares the block-summary likelihood with the dense matrix form
/// `(n/2)[-R log 2pi + log det Omega - tr(S Omega)]` at random points.
pub fn likelihood_equivalence_suite(seed: u64, cases: usize) -> OracleReport {
    let max_err = (0..cases)
        .into_par_iter()
        .map(|case| {
            let mut rng = case_rng(seed ^ 0x5eed, case);
            let part = random_partition(&mut rng, 3, 8);
            let gamma = random_admissible_gamma(&mut rng, &part);
            let n = rng.random_range(5..=40usize);
            let r = part.total_dim();
            let resid = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = BlockSummaries::from_residuals(&resid, &part).expect("consistent shapes");
            let got = log_likelihood(&gamma, &s).expect("admissible");
            let omega = gamma.omega().to_dense();
            let gram = resid.transpose() * &resid / n as f64;
            let chol = Cholesky::new(omega.clone()).expect("pd");
            let logdet = 2.0 * (0..r).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
            let want = 0.5
                * n as f64
                * (-(r as f64) * (2.0 * std::f64::consts::PI).ln() + logdet
                    - (&gram * &omega).trace());
            (got - want).abs()
        })
        .reduce(|| 0.0, f64::max);
    OracleReport { name: "likelihood/dense-equivalence".into(), cases, max_err, threshold: 1e-8 }
}

/// Checks the analytic score against central finite differences of the
/// likelihood, step `1e-6 * max(1, |gamma_j|)`, normalized by
/// `1 + max_j |score_j|`.
pub fn score_fd_suite(seed: u64, points: usize) -> OracleReport {
    let max_err = (0..points)
        .into_par_iter()
        .map(|case| {
            let mut rng = case_rng(seed ^ 0xfd0, case);
            let part = random_partition(&mut rng, 3, 8);
            let gamma = random_admissible_gamma(&mut rng, &part);
            let n = rng.random_range(10..=40usize);
            let r = part.total_dim();
            let resid = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = BlockSummaries::from_residuals(&resid, &part).expect("consistent shapes");
            let analytic = score(&gamma, &s).expect("admissible");
            let mut worst = 0.0f64;
            for j in 0..part.num_params() {
                let h = 1e-6 * gamma.values()[j].abs().max(1.0);
                let mut up = gamma.values().clone();
                up[j] += h;
                let mut dn = gamma.values().clone();
                dn[j] -= h;
                let f_up = log_likelihood(
                    &GammaVector::new(up, part.clone()).expect("length"),
                    &s,
                )
                .expect("admissible");
                let f_dn = log_likelihood(
                    &GammaVector::new(dn, part.clone()).expect("length"),
                    &s,
                )
                .expect("admissible");
                let fd = (f_up - f_dn) / (2.0 * h);
                worst = worst.max((analytic[j] - fd).abs());
            }
            worst / (1.0 + analytic.amax())
        })
        .reduce(|| 0.0, f64::max);
    OracleReport { name: "likelihood/score-fd".into(), cases: points, max_err, threshold: 1e-5 }
}

/// Round trip `gamma -> Sigma -> gamma` through the square-root inverse
/// transform on random principal-branch points.
pub fn transform_round_trip_suite(seed: u64, cases: usize) -> OracleReport {
    let max_err = (0..cases)
        .into_par_iter()
        .map(|case| {
            let mut rng = case_rng(seed ^ 0x7ab5, case);
            let part = random_partition(&mut rng, 5, 30);
            let gamma = random_admissible_gamma(&mut rng, &part);
            let sigma = gamma.sigma().expect("admissible");
            let back = sigma_to_gamma(&sigma).expect("principal branch");
            (back.values() - gamma.values()).amax()
        })
        .reduce(|| 0.0, f64::max);
    OracleReport { name: "params/round-trip".into(), cases, max_err, threshold: 1e-10 }
}

/// Fully dense FGLS solve `{x^T (I kron W) x}^-1 x^T (I kron W) y` on the
/// stacked design, observation-major stacking, coefficients feature-major.
pub fn fgls_dense(x: &DMatrix<f64>, y: &DMatrix<f64>, weight: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let r = y.ncols();
    let mut xs = DMatrix::zeros(n * r, r * p);
    let mut ys = DVector::zeros(n * r);
    for i in 0..n {
        for feat in 0..r {
            ys[i * r + feat] = y[(i, feat)];
            for q in 0..p {
                xs[(i * r + feat, feat * p + q)] = x[(i, q)];
            }
        }
    }
    let mut w_big = DMatrix::zeros(n * r, n * r);
    for i in 0..n {
        w_big.view_mut((i * r, i * r), (r, r)).copy_from(weight);
    }
    let xtw = xs.transpose() * &w_big;
    let lhs = &xtw * &xs;
    let rhs = &xtw * ys;
    let sol = lhs.lu().solve(&rhs).expect("full-rank design");
    DMatrix::from_fn(r, p, |feat, q| sol[feat * p + q])
}

/// Equality of least squares and dense FGLS at the fitted precision, on
/// random small instances.
pub fn theorem1_suite(seed: u64, instances: usize) -> OracleReport {
    let max_err = (0..instances)
        .into_par_iter()
        .map(|case| {
            let mut rng = case_rng(seed ^ 0x13a7, case);
            let g = rng.random_range(1..=3usize);
            let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(2..=4usize)).collect();
            let part = PartitionVector::new(sizes).expect("valid sizes");
            let r = part.total_dim();
            let p = rng.random_range(1..=3usize);
            let n = rng.random_range(30..=60usize).max(part.num_params() + p + 2);
            let gamma0 = random_admissible_gamma(&mut rng, &part);
            let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            for i in 0..n {
                x[(i, 0)] = 1.0;
            }
            let beta0 = DMatrix::from_fn(r, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let id = UniformBlockMatrix::identity(part.clone());
            let w = id.sub(&gamma0.upsilon()).expect("same partition").inverse().expect("pd");
            let eps = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &x * beta0.transpose() + w.mul_dense_left(&eps).expect("shapes");
            let d = Dataset::new(x.clone(), y.clone(), part.clone()).expect("valid data");
            let f = fit(&d, &FitOptions::default()).expect("fit");
            let omega_hat = f.gamma.omega().to_dense();
            let fgls = fgls_dense(&x, &y, &omega_hat);
            let ols = ols_fit(&d).expect("full rank");
            (fgls - ols.beta).amax()
        })
        .reduce(|| 0.0, f64::max);
    OracleReport { name: "estimator/theorem1".into(), cases: instances, max_err, threshold: 1e-8 }
}

/// The standard bundle behind `validate`: algebra, likelihood, score,
/// transforms, and the least-squares/FGLS equality.
pub fn standard_suites(seed: u64, ub_cases: usize) -> Vec<OracleReport> {
    let mut out = ub_algebra_suite(seed, ub_cases);
    out.push(likelihood_equivalence_suite(seed, (ub_cases / 5).max(20)));
    out.push(score_fd_suite(seed, (ub_cases / 10).max(10)));
    out.push(transform_round_trip_suite(seed, (ub_cases / 5).max(20)));
    out.push(theorem1_suite(seed, (ub_cases / 25).max(5)));
    out
}

/// First failing report, if any.
pub fn first_failure(reports: &[OracleReport]) -> Option<&OracleReport> {
    reports.iter().find(|r| !r.passed())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suites_pass() {
        for r in ub_algebra_suite(7, 25) {
            assert!(r.passed(), "{}: max err {} vs {}", r.name, r.max_err, r.threshold);
        }
        let r = likelihood_equivalence_suite(7, 15);
        assert!(r.passed(), "{}: {}", r.name, r.max_err);
        let r = score_fd_suite(7, 8);
        assert!(r.passed(), "{}: {}", r.name, r.max_err);
        let r = transform_round_trip_suite(7, 15);
        assert!(r.passed(), "{}: {}", r.name, r.max_err);
        let r = theorem1_suite(7, 4);
        assert!(r.passed(), "{}: {}", r.name, r.max_err);
    }

    #[test]
    fn generators_respect_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let part = random_partition(&mut rng, 5, 60);
            assert!(part.num_blocks() <= 5);
            assert!(part.sizes().iter().all(|&l| (2..=60).contains(&l)));
            let gamma = random_admissible_gamma(&mut rng, &part);
            assert!(gamma.is_admissible());
            let pd = random_pd_ub(&mut rng, &part, 1e6);
            let ev = pd.eigenvalues();
            assert!(ev[0] > 0.0);
            assert!(ev[ev.len() - 1] / ev[0] < 1.1e6);
        }
    }
}
