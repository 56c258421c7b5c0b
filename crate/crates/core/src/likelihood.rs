//! Profile log-likelihood of the dependence parameters and its derivatives.
//!
//! After profiling out the regression coefficients, the Gaussian
//! log-likelihood depends on the residual Gram matrix `S` only through
//! `2G + G(G-1)/2` numbers: the per-block traces `tr(S_gg)` and the per-block
//! entry sums `sum(S_gg')`. Everything on the optimization path therefore
//! works with `G x G` objects; no `R x R` matrix is ever formed.

use crate::error::{Error, Result};
use crate::params::{param_pair, GammaVector};
use crate::part::PartitionVector;
use nalgebra::{DMatrix, DVector};

pub type ScoreVector = DVector<f64>;
pub type FisherMatrix = DMatrix<f64>;

/// Sufficient reductions of the residual Gram matrix `S = n^-1 sum_i e_i e_i^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummaries {
    block_traces: DVector<f64>,
    block_sums: DMatrix<f64>,
    n: usize,
    part: PartitionVector,
}

impl BlockSummaries {
    /// Computes the reductions directly from an `n x R` residual matrix
    /// without materializing `S`: `tr(S_gg)` from squared column norms and
    /// `sum(S_gg')` from inner products of per-block row sums.
    pub fn from_residuals(residuals: &DMatrix<f64>, part: &PartitionVector) -> Result<Self> {
        let n = residuals.nrows();
        let r = part.total_dim();
        if n == 0 {
            return Err(Error::DimensionMismatch("residual matrix has no rows".into()));
        }
        if residuals.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "expected {r} residual columns, got {}",
                residuals.ncols()
            )));
        }
        let g = part.num_blocks();
        let inv_n = 1.0 / n as f64;
        let mut traces = DVector::zeros(g);
        for gi in 0..g {
            let mut acc = 0.0;
            for c in part.block_range(gi) {
                acc += residuals.column(c).norm_squared();
            }
            traces[gi] = acc * inv_n;
        }
        // per-block row sums, n x G
        let mut t: DMatrix<f64> = DMatrix::zeros(n, g);
        for gi in 0..g {
            for c in part.block_range(gi) {
                for i in 0..n {
                    t[(i, gi)] += residuals[(i, c)];
                }
            }
        }
        let mut sums = DMatrix::zeros(g, g);
        for gi in 0..g {
            for gj in gi..g {
                let v = t.column(gi).dot(&t.column(gj)) * inv_n;
                sums[(gi, gj)] = v;
                sums[(gj, gi)] = v;
            }
        }
        Ok(Self { block_traces: traces, block_sums: sums, n, part: part.clone() })
    }

    pub fn new(
        block_traces: DVector<f64>,
        block_sums: DMatrix<f64>,
        n: usize,
        part: PartitionVector,
    ) -> Result<Self> {
        let g = part.num_blocks();
        if block_traces.len() != g || block_sums.nrows() != g || block_sums.ncols() != g {
            return Err(Error::DimensionMismatch("block summary shapes do not match partition".into()));
        }
        Ok(Self { block_traces, block_sums, n, part })
    }

    pub fn block_traces(&self) -> &DVector<f64> {
        &self.block_traces
    }

    pub fn block_sums(&self) -> &DMatrix<f64> {
        &self.block_sums
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn part(&self) -> &PartitionVector {
        &self.part
    }

    /// `tr(S Omega)` for a UB precision given by its coordinates.
    fn quad_form(&self, a: &DVector<f64>, b: &DMatrix<f64>) -> f64 {
        let g = self.part.num_blocks();
        let mut acc = 0.0;
        for gi in 0..g {
            acc += a[gi] * self.block_traces[gi];
            for gj in 0..g {
                acc += b[(gi, gj)] * self.block_sums[(gi, gj)];
            }
        }
        acc
    }
}

/// Simplified profile log-likelihood
/// `(n/2) [ -R log 2pi + sum_g (L_g - 1) log a_Omega,gg + log det Delta_Omega - tr(S Omega) ]`.
pub fn log_likelihood(gamma: &GammaVector, s: &BlockSummaries) -> Result<f64> {
    gamma.part().same_as(s.part())?;
    let omega = gamma.omega();
    let log_det = omega.log_det()?;
    let r = s.part().total_dim() as f64;
    let quad = s.quad_form(omega.a(), omega.b());
    Ok(0.5 * s.n() as f64 * (-r * (2.0 * std::f64::consts::PI).ln() + log_det - quad))
}

/// Coordinate derivative of `Omega` with respect to one dependence parameter.
#[derive(Debug, Clone)]
pub struct OmegaPartial {
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
}

/// `(dA_Omega/dgamma_j, dB_Omega/dgamma_j)` in closed form.
///
/// For a diagonal parameter `gamma_gg`:
/// `dA = 2(1 + gamma_gg) E_gg`,
/// `dB = -2(1 + gamma_gg) E_gg - (E_gg B_U + B_U E_gg) + E_gg L B_U + B_U L E_gg`.
/// For an off-diagonal parameter `gamma_gg'`: `dA = 0`,
/// `dB = -2(E + E^T) + (E + E^T)(A_U + L B_U) + (A_U + B_U L)(E + E^T)`
/// with `E = E_gg'`.
pub fn omega_partials(gamma: &GammaVector, j: usize) -> Result<OmegaPartial> {
    let g = gamma.part().num_blocks();
    let m = gamma.part().num_params();
    if j >= m {
        return Err(Error::IndexOutOfRange { index: j, len: m });
    }
    let (gi, gj) = param_pair(g, j);
    let ups = gamma.upsilon();
    let bu = ups.b();
    let au = ups.a();
    let l = gamma.part().sizes_f64();
    let mut da = DVector::zeros(g);
    let mut db = DMatrix::zeros(g, g);
    if gi == gj {
        let v = gamma.values()[j];
        da[gi] = 2.0 * (1.0 + v);
        // row/col gi of the three B_U couplings
        for k in 0..g {
            // -(E B_U + B_U E): subtracts row gi and column gi of B_U
            db[(gi, k)] -= bu[(gi, k)];
            db[(k, gi)] -= bu[(k, gi)];
            // E L B_U + B_U L E
            db[(gi, k)] += l[gi] * bu[(gi, k)];
            db[(k, gi)] += bu[(k, gi)] * l[gi];
        }
        db[(gi, gi)] -= 2.0 * (1.0 + v);
    } else {
        // symmetric pair indicator E_gg' + E_g'g
        // (E + E^T)(A_U + L B_U): rows gi and gj pick up rows gj and gi of (A_U + L B_U)
        for k in 0..g {
            let right_gj = if k == gj { au[gj] } else { 0.0 } + l[gj] * bu[(gj, k)];
            let right_gi = if k == gi { au[gi] } else { 0.0 } + l[gi] * bu[(gi, k)];
            db[(gi, k)] += right_gj;
            db[(gj, k)] += right_gi;
            // (A_U + B_U L)(E + E^T): columns gi and gj pick up columns gj and gi
            let left_gj = if k == gj { au[gj] } else { 0.0 } + bu[(k, gj)] * l[gj];
            let left_gi = if k == gi { au[gi] } else { 0.0 } + bu[(k, gi)] * l[gi];
            db[(k, gi)] += left_gj;
            db[(k, gj)] += left_gi;
        }
        db[(gi, gj)] -= 2.0;
        db[(gj, gi)] -= 2.0;
    }
    Ok(OmegaPartial { a: da, b: db })
}

/// Analytic score vector: component `j` combines the closed-form trace of
/// `Sigma dOmega_j` with the data term `tr(S dOmega_j)` read off the block
/// summaries.
pub fn score(gamma: &GammaVector, s: &BlockSummaries) -> Result<ScoreVector> {
    gamma.part().same_as(s.part())?;
    let sigma = gamma.sigma()?;
    let m = gamma.part().num_params();
    let g = gamma.part().num_blocks();
    let l = gamma.part().sizes_f64();
    let half_n = 0.5 * s.n() as f64;
    let mut out = DVector::zeros(m);
    for j in 0..m {
        let p = omega_partials(gamma, j)?;
        // tr(dOmega Sigma) in coordinates
        let mut tr = 0.0;
        for a in 0..g {
            tr += (p.a[a] * sigma.a()[a] + p.a[a] * sigma.b()[(a, a)] + p.b[(a, a)] * sigma.a()[a]) * l[a];
            for b in 0..g {
                tr += p.b[(a, b)] * sigma.b()[(b, a)] * l[a] * l[b];
            }
        }
        out[j] = half_n * (tr - s.quad_form(&p.a, &p.b));
    }
    Ok(out)
}

/// Fisher information `psi_jj' = (n/2) tr(dOmega_j Sigma dOmega_j' Sigma)`,
/// evaluated with two coordinate products and one closed-form trace per entry.
pub fn fisher_information(gamma: &GammaVector, n: usize) -> Result<FisherMatrix> {
    let sigma = gamma.sigma()?;
    let m = gamma.part().num_params();
    let sigma_t = sigma.as_product();
    let mut prods = Vec::with_capacity(m);
    for j in 0..m {
        let p = omega_partials(gamma, j)?;
        let triple =
            crate::ub::UbProduct { a: p.a, b: p.b, part: gamma.part().clone() };
        prods.push(triple.mul(&sigma_t)?);
    }
    let half_n = 0.5 * n as f64;
    let mut out = DMatrix::zeros(m, m);
    for j in 0..m {
        for jp in j..m {
            let v = half_n * prods[j].trace_mul(&prods[jp])?;
            out[(j, jp)] = v;
            out[(jp, j)] = v;
        }
    }
    Ok(out)
}
