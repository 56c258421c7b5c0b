//! Closed-form transformations among the dependence parameterizations.
//!
//! The autoregressive dependence matrix `Upsilon`, the precision `Omega`, and
//! the covariance `Sigma` are all uniform-block matrices determined by the
//! scaled dependence vector `gamma`:
//!
//! ```text
//! Upsilon:  A = diag(-gamma_gg),            B = (gamma_gg')
//! Omega  :  A = (I - A_Ups)^2,              B = -2B_Ups + A_Ups B_Ups + B_Ups A_Ups + B_Ups L B_Ups
//! Sigma  :  A = A_Omega^-1,                 B = -Delta_Omega^-1 B_Omega A_Omega^-1
//! ```
//!
//! `gamma` is ordered row-major over the upper triangle including the
//! diagonal: `(g_11, ..., g_1G, g_22, ..., g_2G, ..., g_GG)`. This index map
//! is a frozen public contract (see [`param_index`] / [`param_pair`]).

use crate::error::{Error, Result};
use crate::part::PartitionVector;
use crate::ub::UniformBlockMatrix;
use nalgebra::{DMatrix, DVector};

/// Flat index of `(g, g')` with `g <= g'` in the row-major upper-triangle order.
pub fn param_index(num_blocks: usize, g: usize, gp: usize) -> usize {
    let (g, gp) = if g <= gp { (g, gp) } else { (gp, g) };
    debug_assert!(gp < num_blocks);
    // row g starts after rows 0..g, row i holding (G - i) entries
    g * num_blocks - g * (g + 1) / 2 + g + (gp - g)
}

/// Inverse of [`param_index`].
pub fn param_pair(num_blocks: usize, j: usize) -> (usize, usize) {
    let mut row = 0;
    let mut start = 0;
    loop {
        let row_len = num_blocks - row;
        if j < start + row_len {
            return (row, row + (j - start));
        }
        start += row_len;
        row += 1;
    }
}

/// Scaled dependence parameters in the frozen upper-triangle order.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaVector {
    values: DVector<f64>,
    part: PartitionVector,
}

/// Unscaled dependence parameters, same ordering as [`GammaVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct RhoVector {
    values: DVector<f64>,
    part: PartitionVector,
}

impl GammaVector {
    pub fn new(values: DVector<f64>, part: PartitionVector) -> Result<Self> {
        if values.len() != part.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} dependence parameters, got {}",
                part.num_params(),
                values.len()
            )));
        }
        Ok(Self { values, part })
    }

    pub fn from_slice(values: &[f64], part: PartitionVector) -> Result<Self> {
        Self::new(DVector::from_row_slice(values), part)
    }

    pub fn zeros(part: PartitionVector) -> Self {
        let n = part.num_params();
        Self { values: DVector::zeros(n), part }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn part(&self) -> &PartitionVector {
        &self.part
    }

    pub fn get(&self, g: usize, gp: usize) -> f64 {
        self.values[param_index(self.part.num_blocks(), g, gp)]
    }

    /// `rho_gg = (L_g - 1) gamma_gg`, `rho_gg' = sqrt((L_g-1)(L_g'-1)) gamma_gg'`.
    pub fn to_rho(&self) -> RhoVector {
        let g = self.part.num_blocks();
        let mut out = self.values.clone();
        for j in 0..out.len() {
            let (gi, gj) = param_pair(g, j);
            let li = self.part.size(gi) as f64 - 1.0;
            let lj = self.part.size(gj) as f64 - 1.0;
            out[j] *= if gi == gj { li } else { (li * lj).sqrt() };
        }
        RhoVector { values: out, part: self.part.clone() }
    }

    /// The dependence matrix `Upsilon`: `A = diag(-gamma_gg)`, `B = (gamma_gg')`.
    /// Its dense expansion has an all-zero main diagonal.
    pub fn upsilon(&self) -> UniformBlockMatrix {
        let g = self.part.num_blocks();
        let mut a = DVector::zeros(g);
        let mut b = DMatrix::zeros(g, g);
        for j in 0..self.values.len() {
            let (gi, gj) = param_pair(g, j);
            let v = self.values[j];
            if gi == gj {
                a[gi] = -v;
                b[(gi, gi)] = v;
            } else {
                b[(gi, gj)] = v;
                b[(gj, gi)] = v;
            }
        }
        UniformBlockMatrix::new(a, b, self.part.clone()).expect("shapes are consistent")
    }

    /// Precision matrix `Omega = (I - Upsilon)^2` in closed coordinate form.
    pub fn omega(&self) -> UniformBlockMatrix {
        let ups = self.upsilon();
        let g = self.part.num_blocks();
        let mut a = DVector::zeros(g);
        for i in 0..g {
            let one_minus = 1.0 - ups.a()[i];
            a[i] = one_minus * one_minus;
        }
        // B = -2 B_U + A_U B_U + B_U A_U + B_U L B_U
        let bu = ups.b();
        let au = ups.a();
        let l = self.part.sizes_f64();
        let mut bul = bu.clone();
        for j in 0..g {
            for i in 0..g {
                bul[(i, j)] *= l[j];
            }
        }
        let mut b = bul * bu;
        for i in 0..g {
            for j in 0..g {
                b[(i, j)] += -2.0 * bu[(i, j)] + au[i] * bu[(i, j)] + bu[(i, j)] * au[j];
            }
        }
        // exact symmetry: average round-off
        UniformBlockMatrix::symmetrized(a, b, self.part.clone()).expect("shapes are consistent")
    }

    /// Covariance `Sigma = Omega^-1`, requiring the positive-definite regime.
    pub fn sigma(&self) -> Result<UniformBlockMatrix> {
        omega_to_sigma(&self.omega())
    }

    /// Checks the positive-definite regime on `Omega(gamma)`: diagonal
    /// coefficients positive and all `Delta_Omega` eigenvalues positive.
    pub fn check_admissible(&self) -> Result<()> {
        let omega = self.omega();
        for g in 0..self.part.num_blocks() {
            let a = omega.a()[g];
            if a <= 0.0 {
                return Err(Error::InadmissibleGamma(format!(
                    "omega diagonal coefficient a[{g}] = {a:.6e} is not positive"
                )));
            }
        }
        let min = omega.delta().min_eigenvalue();
        if min <= 0.0 {
            return Err(Error::InadmissibleGamma(format!(
                "delta of omega has non-positive eigenvalue {min:.6e}"
            )));
        }
        Ok(())
    }

    pub fn is_admissible(&self) -> bool {
        self.check_admissible().is_ok()
    }
}

impl RhoVector {
    pub fn new(values: DVector<f64>, part: PartitionVector) -> Result<Self> {
        if values.len() != part.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} dependence parameters, got {}",
                part.num_params(),
                values.len()
            )));
        }
        Ok(Self { values, part })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn part(&self) -> &PartitionVector {
        &self.part
    }

    /// `gamma_gg = rho_gg / (L_g - 1)`, inverse of [`GammaVector::to_rho`].
    pub fn to_gamma(&self) -> GammaVector {
        let g = self.part.num_blocks();
        let mut out = self.values.clone();
        for j in 0..out.len() {
            let (gi, gj) = param_pair(g, j);
            let li = self.part.size(gi) as f64 - 1.0;
            let lj = self.part.size(gj) as f64 - 1.0;
            out[j] /= if gi == gj { li } else { (li * lj).sqrt() };
        }
        GammaVector { values: out, part: self.part.clone() }
    }
}

/// `Sigma = Omega^-1` with the positive-definite regime checked first.
pub fn omega_to_sigma(omega: &UniformBlockMatrix) -> Result<UniformBlockMatrix> {
    for g in 0..omega.part().num_blocks() {
        if omega.a()[g] <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "omega diagonal coefficient a[{g}] = {:.6e} is not positive",
                omega.a()[g]
            )));
        }
    }
    let min = omega.delta().min_eigenvalue();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "delta of omega has non-positive eigenvalue {min:.6e}"
        )));
    }
    omega.inverse().map_err(|e| match e {
        Error::Singular(msg) => Error::NotPositiveDefinite(msg),
        other => other,
    })
}

/// Recovers `gamma` from a covariance through the square-root inverse
/// transform: `Omega = Sigma^-1`, `N = Omega^(1/2)` as a uniform-block
/// matrix, `Upsilon = I - N`.
///
/// `Omega` has many uniform-block square roots (one per sign pattern of the
/// diagonal coefficients and of the `Delta` eigenvalues); the autoregressive
/// structure pins the branch because the dense diagonal of `I - Upsilon` must
/// be all ones, i.e. `a*_g + b*_gg = 1` for every community. The search
/// enumerates the sign patterns (principal pattern first) and keeps the one
/// meeting that constraint; if none does, the covariance admits no
/// autoregressive representation.
pub fn sigma_to_gamma(sigma: &UniformBlockMatrix) -> Result<GammaVector> {
    sigma_to_gamma_impl(sigma, 1e-8, false)
}

/// Like [`sigma_to_gamma`] but reconciles the residual diagonal inconsistency
/// of the best branch by averaging instead of failing. Used for
/// method-of-moments starting points.
pub fn sigma_to_gamma_relaxed(sigma: &UniformBlockMatrix) -> Result<GammaVector> {
    sigma_to_gamma_impl(sigma, f64::INFINITY, true)
}

fn sigma_to_gamma_impl(sigma: &UniformBlockMatrix, tol: f64, average: bool) -> Result<GammaVector> {
    let omega = omega_to_sigma(sigma)?; // the same inverse map
    let part = sigma.part().clone();
    let g = part.num_blocks();
    let l = part.sizes_f64();
    let (lam, q) = omega.delta().sym_eigen();
    for i in 0..g {
        if lam[i] <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "delta of the precision has non-positive eigenvalue {:.6e}",
                lam[i]
            )));
        }
    }
    let s = lam.map(f64::sqrt);
    let root_a = omega.a().map(f64::sqrt);
    // diagonal of Delta* is basis-independent of the L-scaling: entry g is
    // sum_i eta_i s_i q_{gi}^2
    let qsq = DMatrix::from_fn(g, g, |gi, i| q[(gi, i)] * q[(gi, i)]);
    // sign enumeration is exponential in G; past this cap only the principal
    // pattern is tried
    let masks = if g <= 12 { 1usize << g } else { 1 };
    let mut diag_eta: DMatrix<f64> = DMatrix::zeros(g, masks);
    for eta in 0..masks {
        for gi in 0..g {
            let mut acc = 0.0;
            for i in 0..g {
                let sign = if eta >> i & 1 == 1 { -1.0 } else { 1.0 };
                acc += sign * s[i] * qsq[(gi, i)];
            }
            diag_eta[(gi, eta)] = acc;
        }
    }
    let mut best: Option<(f64, usize, usize, usize)> = None; // residual, eps, eta, worst block
    for eps in 0..masks {
        // target Delta*_gg for a unit dense diagonal: a*_g (1 - L_g) + L_g
        let mut t: DVector<f64> = DVector::zeros(g);
        for gi in 0..g {
            let sign = if eps >> gi & 1 == 1 { -1.0 } else { 1.0 };
            t[gi] = sign * root_a[gi] * (1.0 - l[gi]) + l[gi];
        }
        for eta in 0..masks {
            let mut resid = 0.0f64;
            let mut worst = 0usize;
            for gi in 0..g {
                // residual in coefficient units: |b*_gg - (1 - a*_g)|
                let dev = (diag_eta[(gi, eta)] - t[gi]).abs() / l[gi];
                if dev > resid {
                    resid = dev;
                    worst = gi;
                }
            }
            if best.as_ref().map_or(true, |(b, ..)| resid < *b) {
                best = Some((resid, eps, eta, worst));
            }
        }
    }
    let (resid, eps, eta, worst) = best.expect("at least the principal pattern");
    if !average && resid > tol {
        return Err(Error::NotMaudRepresentable { block: worst, deviation: resid, tol });
    }
    // rebuild the selected root: Delta* = L^(-1/2) Q diag(eta s) Q^T L^(1/2)
    let mut s_mat: DMatrix<f64> = DMatrix::zeros(g, g);
    for i in 0..g {
        let sign = if eta >> i & 1 == 1 { -1.0 } else { 1.0 };
        let col = q.column(i);
        let scale = sign * s[i];
        for a in 0..g {
            for b in 0..g {
                s_mat[(a, b)] += scale * col[a] * col[b];
            }
        }
    }
    let mut values = DVector::zeros(part.num_params());
    for gi in 0..g {
        let a_star =
            if eps >> gi & 1 == 1 { -root_a[gi] } else { root_a[gi] };
        let delta_gg = s_mat[(gi, gi)]; // diagonal unchanged by the L-conjugation
        let b_gg: f64 = (delta_gg - a_star) / l[gi];
        let from_a = a_star - 1.0;
        let from_b = -b_gg;
        values[param_index(g, gi, gi)] = if average { 0.5 * (from_a + from_b) } else { from_a };
        for gj in (gi + 1)..g {
            // off-diagonal of B* = (Delta* - A*) L^-1, symmetrized
            let dij = s_mat[(gi, gj)] * (l[gj] / l[gi]).sqrt();
            let dji = s_mat[(gj, gi)] * (l[gi] / l[gj]).sqrt();
            let b: f64 = 0.5 * (dij / l[gj] + dji / l[gi]);
            values[param_index(g, gi, gj)] = -b;
        }
    }
    GammaVector::new(values, part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn part3() -> PartitionVector {
        PartitionVector::new(vec![30, 40, 60]).unwrap()
    }

    /// The reference three-community configuration used across the
    /// simulation studies.
    pub(crate) fn reference_gamma(part: PartitionVector) -> GammaVector {
        GammaVector::from_slice(&[0.40, 0.01, -0.51, 0.19, -0.91, -0.64], part).unwrap()
    }

    #[test]
    fn index_map_round_trips() {
        for g in 1..=6usize {
            let mut j = 0;
            for gi in 0..g {
                for gj in gi..g {
                    assert_eq!(param_index(g, gi, gj), j);
                    assert_eq!(param_index(g, gj, gi), j);
                    assert_eq!(param_pair(g, j), (gi, gj));
                    j += 1;
                }
            }
            assert_eq!(j, g * (g + 1) / 2);
        }
    }

    #[test]
    fn rho_scaling() {
        let p = PartitionVector::new(vec![3, 3]).unwrap();
        let zero = GammaVector::zeros(p.clone());
        assert_eq!(zero.to_rho().values(), zero.values());
        let g = GammaVector::from_slice(&[0.0, 0.5, 0.0], p).unwrap();
        let rho = g.to_rho();
        assert_abs_diff_eq!(rho.values()[1], 1.0, epsilon = 1e-15);
        assert_eq!(rho.to_gamma(), g);
    }

    #[test]
    fn rho_round_trip_exact() {
        let g = reference_gamma(part3());
        assert_eq!(g.to_rho().to_gamma(), g);
    }

    #[test]
    fn upsilon_reference_values() {
        let g = reference_gamma(part3());
        let ups = g.upsilon();
        assert_eq!(ups.a().as_slice(), &[-0.40, -0.19, 0.64]);
        let b = ups.b();
        assert_eq!(b[(0, 0)], 0.40);
        assert_eq!(b[(0, 1)], 0.01);
        assert_eq!(b[(0, 2)], -0.51);
        assert_eq!(b[(1, 1)], 0.19);
        assert_eq!(b[(1, 2)], -0.91);
        assert_eq!(b[(2, 2)], -0.64);
        assert_eq!(b[(2, 1)], -0.91);
    }

    #[test]
    fn upsilon_zero_diagonal() {
        let g = reference_gamma(part3());
        let dense = g.upsilon().to_dense();
        for i in 0..dense.nrows() {
            assert_eq!(dense[(i, i)], 0.0);
        }
        let zero = GammaVector::zeros(part3());
        assert_eq!(zero.upsilon().to_dense(), nalgebra::DMatrix::zeros(130, 130));
    }

    #[test]
    fn omega_matches_square_of_i_minus_upsilon() {
        let p = PartitionVector::new(vec![2, 3, 4]).unwrap();
        let g = GammaVector::from_slice(&[0.3, -0.1, 0.05, 0.2, 0.08, -0.25], p.clone()).unwrap();
        let id = UniformBlockMatrix::identity(p.clone());
        let i_minus = id.sub(&g.upsilon()).unwrap();
        let square = i_minus.mul(&i_minus).unwrap().into_symmetric(1e-12).unwrap();
        let omega = g.omega();
        assert_abs_diff_eq!(omega.to_dense(), square.to_dense(), epsilon = 1e-13);
        // gamma = 0 gives the identity
        let zero = GammaVector::zeros(p);
        assert_eq!(zero.omega(), UniformBlockMatrix::identity(zero.part().clone()));
    }

    #[test]
    fn omega_reference_dense_oracle() {
        let g = reference_gamma(part3());
        let ups = g.upsilon().to_dense();
        let id = nalgebra::DMatrix::identity(130, 130);
        let dense = (&id - &ups) * (&id - &ups);
        assert_abs_diff_eq!(g.omega().to_dense(), dense, epsilon = 1e-12);
    }

    #[test]
    fn sigma_inverse_properties() {
        let g = reference_gamma(part3());
        let sigma = g.sigma().unwrap();
        let prod = sigma.mul(&g.omega()).unwrap().to_dense();
        assert_abs_diff_eq!(prod, nalgebra::DMatrix::identity(130, 130), epsilon = 1e-10);
        // dense oracle
        let dense_inv = g.omega().to_dense().try_inverse().unwrap();
        assert_abs_diff_eq!(sigma.to_dense(), dense_inv, epsilon = 1e-10);
        let id_part = PartitionVector::new(vec![2, 2]).unwrap();
        let id = UniformBlockMatrix::identity(id_part);
        assert_eq!(omega_to_sigma(&id).unwrap(), id);
    }

    #[test]
    fn sigma_dense_matches_inverse_square() {
        let g = reference_gamma(part3());
        let id = nalgebra::DMatrix::identity(130, 130);
        let inv = (&id - g.upsilon().to_dense()).try_inverse().unwrap();
        let dense = &inv * &inv;
        assert_abs_diff_eq!(g.sigma().unwrap().to_dense(), dense, epsilon = 1e-10);
    }

    #[test]
    fn full_chain_round_trip() {
        let g = reference_gamma(part3());
        let sigma = g.sigma().unwrap();
        let back = sigma_to_gamma(&sigma).unwrap();
        for j in 0..6 {
            assert_abs_diff_eq!(back.values()[j], g.values()[j], epsilon = 1e-10);
        }
        let id = UniformBlockMatrix::identity(part3());
        let zero = sigma_to_gamma(&id).unwrap();
        assert_eq!(zero.values(), GammaVector::zeros(part3()).values());
    }

    #[test]
    fn rejects_unrepresentable_covariance() {
        // Sigma = 4I on a single block of 3: Omega = I/4, root = I/2,
        // recovered diagonals disagree (0.5 from A side, 0 from B side).
        let p = PartitionVector::new(vec![3]).unwrap();
        let sigma = UniformBlockMatrix::from_upper(vec![4.0], &[0.0], p.clone()).unwrap();
        match sigma_to_gamma(&sigma) {
            Err(Error::NotMaudRepresentable { deviation, .. }) => {
                assert_abs_diff_eq!(deviation, 0.5, epsilon = 1e-12)
            }
            other => panic!("expected NotMaudRepresentable, got {other:?}"),
        }
        // relaxed reconciliation averages the two reads
        let relaxed = sigma_to_gamma_relaxed(&sigma).unwrap();
        assert_abs_diff_eq!(relaxed.values()[0], -0.25, epsilon = 1e-12);
    }

    #[test]
    fn block_constancy_of_sigma() {
        let g = reference_gamma(part3());
        let dense = g.sigma().unwrap().to_dense();
        let p = part3();
        // within-block off-diagonal entries equal; cross-block entries equal
        let r0 = p.block_range(0);
        let v = dense[(r0.start, r0.start + 1)];
        for i in r0.clone() {
            for j in r0.clone() {
                if i != j {
                    assert_abs_diff_eq!(dense[(i, j)], v, epsilon = 1e-12);
                }
            }
        }
        let r1 = p.block_range(1);
        let w = dense[(r0.start, r1.start)];
        for i in r0.clone() {
            for j in r1.clone() {
                assert_abs_diff_eq!(dense[(i, j)], w, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn admissibility_checks() {
        let g = reference_gamma(part3());
        assert!(g.is_admissible());
        // gamma_gg = -1 makes the omega diagonal coefficient vanish
        let p = PartitionVector::new(vec![2, 2]).unwrap();
        let bad = GammaVector::from_slice(&[-1.0, 0.0, 0.0], p).unwrap();
        assert!(!bad.is_admissible());
    }
}
