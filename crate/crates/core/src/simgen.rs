//! Synthetic data generation and the Monte-Carlo study harness.
//!
//! Replicates draw from deterministic per-replicate RNG streams derived from
//! the scenario seed, so results are independent of execution order and
//! worker count. Outcomes are sampled through the compressed autoregressive
//! factor `(I - Upsilon)^-1` when the covariance is exact, and through a dense
//! Cholesky factor when a Wishart perturbation is requested.

use crate::error::{Error, Result};
use crate::estimator::{fit, Dataset, FitOptions};
use crate::inference::{relative_loss, FactoredCovariance, Norm, OutcomeFactor};
use crate::params::{param_pair, GammaVector};
use crate::part::PartitionVector;
use crate::ub::UniformBlockMatrix;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Wald z for the 95% confidence intervals.
const Z_975: f64 = 1.959963984540054;

/// Rule for the true coefficient matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSpec {
    /// Full `R x p` matrix.
    Explicit { values: Vec<Vec<f64>> },
    /// Per community, `fraction_nonzero` of the features get coefficients
    /// drawn uniformly from `+-[min_abs, max_abs]`, fixed by the scenario seed.
    Sparse { fraction_nonzero: f64, min_abs: f64, max_abs: f64 },
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec::Sparse { fraction_nonzero: 0.3, min_abs: 0.5, max_abs: 1.5 }
    }
}

fn default_p() -> usize {
    2
}

fn default_replicates() -> usize {
    200
}

/// Declarative description of one Monte-Carlo study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Community sizes.
    pub sizes: Vec<usize>,
    #[serde(default = "default_p")]
    pub p: usize,
    /// True dependence parameters in upper-triangle order.
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub beta: BetaSpec,
    /// Wishart scale of the covariance perturbation; zero means none.
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario json: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("scenario toml: {e}")))
    }

    /// Validates sizes, admissibility, and the sampling preconditions.
    pub fn validated(&self) -> Result<(PartitionVector, GammaVector)> {
        let part = PartitionVector::new(self.sizes.clone())?;
        let gamma = GammaVector::from_slice(&self.gamma, part.clone())?;
        gamma.check_admissible()?;
        if self.noise_level < 0.0 {
            return Err(Error::InvalidConfig("noise_level must be nonnegative".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("at least one replicate required".into()));
        }
        if self.p == 0 {
            return Err(Error::InvalidConfig("at least one covariate required".into()));
        }
        if self.n <= self.p.max(part.num_params()) {
            return Err(Error::InvalidConfig(format!(
                "n = {} must exceed max(p = {}, dependence parameters = {})",
                self.n,
                self.p,
                part.num_params()
            )));
        }
        if let BetaSpec::Explicit { values } = &self.beta {
            if values.len() != part.total_dim() || values.iter().any(|row| row.len() != self.p) {
                return Err(Error::InvalidConfig(format!(
                    "explicit beta must be {} x {}",
                    part.total_dim(),
                    self.p
                )));
            }
        }
        if let BetaSpec::Sparse { fraction_nonzero, min_abs, max_abs } = &self.beta {
            if !(0.0..=1.0).contains(fraction_nonzero) || min_abs > max_abs || *min_abs < 0.0 {
                return Err(Error::InvalidConfig("invalid sparse beta rule".into()));
            }
        }
        Ok((part, gamma))
    }
}

/// RNG stream for a replicate; stream zero is reserved for scenario-level draws.
fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 + 1);
    rng
}

fn scenario_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// The true coefficient matrix of a scenario, fixed across replicates.
pub fn scenario_beta(cfg: &ScenarioConfig, part: &PartitionVector) -> DMatrix<f64> {
    match &cfg.beta {
        BetaSpec::Explicit { values } => {
            DMatrix::from_fn(part.total_dim(), cfg.p, |r, q| values[r][q])
        }
        BetaSpec::Sparse { fraction_nonzero, min_abs, max_abs } => {
            let mut rng = scenario_rng(cfg.seed);
            let mut beta = DMatrix::zeros(part.total_dim(), cfg.p);
            for g in 0..part.num_blocks() {
                let l = part.size(g);
                let k = (fraction_nonzero * l as f64).round() as usize;
                // partial Fisher-Yates to pick k features of the community
                let mut idx: Vec<usize> = part.block_range(g).collect();
                for i in 0..k.min(l) {
                    let j = rng.random_range(i..l);
                    idx.swap(i, j);
                    let row = idx[i];
                    for q in 0..cfg.p {
                        let mag = rng.random_range(*min_abs..=*max_abs);
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        beta[(row, q)] = sign * mag;
                    }
                }
            }
            beta
        }
    }
}

/// Covariates per the study design: intercept column plus standard normal columns.
fn sample_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for q in 1..p {
            x[(i, q)] = rng.sample(StandardNormal);
        }
    }
    x
}

/// Adds a Wishart perturbation `sigma * M^T M` (with `M` an `R x R` standard
/// normal matrix, so `R` degrees of freedom and mean `sigma R I`) to the dense
/// expansion, retrying up to five times if the sum is not positive definite.
pub fn perturb_covariance(
    sigma: &UniformBlockMatrix,
    noise_level: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    if noise_level <= 0.0 {
        return Err(Error::InvalidConfig("perturbation requires a positive noise level".into()));
    }
    let r = sigma.part().total_dim();
    let base = sigma.to_dense();
    const RETRIES: usize = 5;
    for _ in 0..RETRIES {
        let m = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let wishart = m.transpose() * &m * noise_level;
        let cand = &base + &wishart;
        if Cholesky::new(cand.clone()).is_some() {
            return Ok(cand);
        }
    }
    Err(Error::PerturbationNotPD { retries: RETRIES })
}

/// Dataset plus the true outcome covariance factor actually used to draw it.
fn replicate_data(
    cfg: &ScenarioConfig,
    part: &PartitionVector,
    gamma: &GammaVector,
    beta: &DMatrix<f64>,
    replicate: usize,
) -> Result<(Dataset, OutcomeFactor)> {
    let mut rng = replicate_rng(cfg.seed, replicate);
    let x = sample_design(&mut rng, cfg.n, cfg.p);
    let mean = &x * beta.transpose();
    let r = part.total_dim();
    if cfg.noise_level == 0.0 {
        // y_i = B x_i + (I - Upsilon)^-1 eps_i, exact in compressed form
        let id = UniformBlockMatrix::identity(part.clone());
        let w = id.sub(&gamma.upsilon())?.inverse()?;
        let eps = DMatrix::from_fn(cfg.n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = mean + w.mul_dense_left(&eps)?;
        let d = Dataset::new(x, y, part.clone())?;
        Ok((d, OutcomeFactor::UniformBlock(gamma.sigma()?)))
    } else {
        let perturbed = perturb_covariance(&gamma.sigma()?, cfg.noise_level, &mut rng)?;
        let chol = Cholesky::new(perturbed.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("perturbed covariance".into()))?;
        let z = DMatrix::from_fn(cfg.n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = mean + z * chol.l().transpose();
        let d = Dataset::new(x, y, part.clone())?;
        Ok((d, OutcomeFactor::Dense(perturbed)))
    }
}

/// One synthetic dataset; deterministic in `(cfg.seed, replicate)`.
pub fn sample_dataset(cfg: &ScenarioConfig, replicate: usize) -> Result<Dataset> {
    let (part, gamma) = cfg.validated()?;
    let beta = scenario_beta(cfg, &part);
    replicate_data(cfg, &part, &gamma, &beta, replicate).map(|(d, _)| d)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub truth: f64,
    pub bias: f64,
    pub mcsd: f64,
    pub ase: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateLoss {
    pub replicate: usize,
    pub maud_frobenius: f64,
    pub maud_spectral: f64,
    pub baseline_frobenius: f64,
    pub baseline_spectral: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

/// Aggregated Monte-Carlo study results. Everything serialized here is a
/// deterministic function of the configuration; wall-clock time is kept out
/// of the serialized form so reports are byte-identical across worker counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub config: ScenarioConfig,
    pub beta_true: Vec<Vec<f64>>,
    pub params: Vec<ParamSummary>,
    pub losses: Vec<ReplicateLoss>,
    pub failures: Vec<ReplicateFailure>,
    pub replicates_completed: usize,
    #[serde(skip)]
    pub elapsed_secs: f64,
}

impl McReport {
    pub fn median_loss(&self, norm: Norm, baseline: bool) -> f64 {
        let mut vals: Vec<f64> = self
            .losses
            .iter()
            .map(|l| match (norm, baseline) {
                (Norm::Frobenius, false) => l.maud_frobenius,
                (Norm::Spectral, false) => l.maud_spectral,
                (Norm::Frobenius, true) => l.baseline_frobenius,
                (Norm::Spectral, true) => l.baseline_spectral,
            })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = vals.len();
        if k == 0 {
            f64::NAN
        } else if k % 2 == 1 {
            vals[k / 2]
        } else {
            0.5 * (vals[k / 2 - 1] + vals[k / 2])
        }
    }
}

struct ReplicateRecord {
    gamma_hat: DVector<f64>,
    ases: DVector<f64>,
    covered: Vec<bool>,
    loss: ReplicateLoss,
}

fn run_replicate(
    cfg: &ScenarioConfig,
    part: &PartitionVector,
    gamma0: &GammaVector,
    beta: &DMatrix<f64>,
    replicate: usize,
) -> Result<ReplicateRecord> {
    let (data, truth_factor) = replicate_data(cfg, part, gamma0, beta, replicate)?;
    let f = fit(&data, &FitOptions::default())?;
    let m = part.num_params();
    let mut ases = DVector::zeros(m);
    let mut covered = Vec::with_capacity(m);
    for j in 0..m {
        let se = f.gamma_se(j);
        ases[j] = se;
        let est = f.gamma.values()[j];
        let t = gamma0.values()[j];
        covered.push(est - Z_975 * se <= t && t <= est + Z_975 * se);
    }
    // residual variances for the diagonal baseline
    let resid = data.y() - data.x() * f.beta.transpose();
    let r = part.total_dim();
    let inv_n = 1.0 / data.n() as f64;
    let diag = DVector::from_fn(r, |c, _| resid.column(c).norm_squared() * inv_n);
    let unit = f.beta_cov.xtx_inv().clone();
    let truth = FactoredCovariance::new(truth_factor, unit.clone());
    let maud = FactoredCovariance::new(
        OutcomeFactor::UniformBlock(f.beta_cov.sigma().clone()),
        unit.clone(),
    );
    let base = FactoredCovariance::new(OutcomeFactor::Diagonal(diag), unit);
    let loss = ReplicateLoss {
        replicate,
        maud_frobenius: relative_loss(&maud, &truth, Norm::Frobenius)?,
        maud_spectral: relative_loss(&maud, &truth, Norm::Spectral)?,
        baseline_frobenius: relative_loss(&base, &truth, Norm::Frobenius)?,
        baseline_spectral: relative_loss(&base, &truth, Norm::Spectral)?,
    };
    Ok(ReplicateRecord { gamma_hat: f.gamma.values().clone(), ases, covered, loss })
}

/// Runs every replicate (in parallel, deterministically), fits the model,
/// and aggregates estimation and covariance-accuracy metrics. Per-replicate
/// failures are recorded, not fatal.
pub fn run_study(cfg: &ScenarioConfig) -> Result<McReport> {
    let started = std::time::Instant::now();
    let (part, gamma0) = cfg.validated()?;
    let beta = scenario_beta(cfg, &part);
    let outcomes: Vec<(usize, Result<ReplicateRecord>)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| (rep, run_replicate(cfg, &part, &gamma0, &beta, rep)))
        .collect();
    let mut records = Vec::with_capacity(cfg.replicates);
    let mut losses = Vec::with_capacity(cfg.replicates);
    let mut failures = Vec::new();
    for (rep, out) in outcomes {
        match out {
            Ok(rec) => {
                losses.push(rec.loss.clone());
                records.push(rec);
            }
            Err(e) => failures.push(ReplicateFailure { replicate: rep, message: e.to_string() }),
        }
    }
    let m = part.num_params();
    let g = part.num_blocks();
    let k = records.len();
    let mut params = Vec::with_capacity(m);
    for j in 0..m {
        let (gi, gj) = param_pair(g, j);
        let truth = gamma0.values()[j];
        let (bias, mcsd, ase, coverage) = if k == 0 {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mean = records.iter().map(|r| r.gamma_hat[j]).sum::<f64>() / k as f64;
            let var = if k > 1 {
                records.iter().map(|r| (r.gamma_hat[j] - mean).powi(2)).sum::<f64>() / (k - 1) as f64
            } else {
                0.0
            };
            let ase = records.iter().map(|r| r.ases[j]).sum::<f64>() / k as f64;
            let cover =
                records.iter().filter(|r| r.covered[j]).count() as f64 / k as f64;
            (mean - truth, var.sqrt(), ase, cover)
        };
        params.push(ParamSummary {
            parameter: format!("gamma[{gi},{gj}]"),
            truth,
            bias,
            mcsd,
            ase,
            coverage,
        });
    }
    let beta_true = (0..part.total_dim())
        .map(|r| (0..cfg.p).map(|q| beta[(r, q)]).collect())
        .collect();
    Ok(McReport {
        config: cfg.clone(),
        beta_true,
        params,
        losses,
        failures,
        replicates_completed: k,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}
