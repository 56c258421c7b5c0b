//! Compressed uniform-block matrix algebra.
//!
//! An `R x R` uniform-block (UB) matrix is fully described by a diagonal
//! coefficient per community (`a_gg`), a symmetric `G x G` between-community
//! coefficient matrix (`b_gg'`), and the partition sizes: diagonal block `g`
//! expands to `a_gg I + b_gg J`, off-diagonal block `(g, g')` to a constant
//! `b_gg'`. Every operation here (product, eigenvalues, determinant, inverse,
//! square root, traces) is evaluated on the `G x G` coordinates; the dense
//! expansion exists only as an oracle bridge and for I/O.

use crate::error::{Error, Result};
use crate::part::PartitionVector;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative floor under which a diagonal coefficient counts as zero.
pub const SINGULAR_REL_TOL: f64 = 1e-12;
/// Condition-estimate ceiling beyond which `delta` counts as numerically singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Symmetric uniform-block matrix in compressed `(A, B, l)` form.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBlockMatrix {
    diag: DVector<f64>,
    block: DMatrix<f64>,
    part: PartitionVector,
}

/// Generalized uniform-block triple produced by a product of UB matrices.
///
/// The block pattern is the same as a UB matrix but the between-community
/// coefficient matrix need not be symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct UbProduct {
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
    pub part: PartitionVector,
}

impl UniformBlockMatrix {
    /// Builds a UB matrix from its coordinates. `block` must be exactly
    /// symmetric as stored; use [`UniformBlockMatrix::symmetrized`] when the
    /// coordinates carry round-off.
    pub fn new(diag: DVector<f64>, block: DMatrix<f64>, part: PartitionVector) -> Result<Self> {
        let g = part.num_blocks();
        if diag.len() != g || block.nrows() != g || block.ncols() != g {
            return Err(Error::DimensionMismatch(format!(
                "expected {g}-vector and {g}x{g} block matrix, got {} and {}x{}",
                diag.len(),
                block.nrows(),
                block.ncols()
            )));
        }
        for i in 0..g {
            for j in (i + 1)..g {
                if block[(i, j)].to_bits() != block[(j, i)].to_bits() {
                    return Err(Error::DimensionMismatch(format!(
                        "between-community coefficients not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { diag, block, part })
    }

    /// Same as [`UniformBlockMatrix::new`] but forces symmetry by averaging
    /// `(B + B^T) / 2`.
    pub fn symmetrized(diag: DVector<f64>, block: DMatrix<f64>, part: PartitionVector) -> Result<Self> {
        let sym = (&block + block.transpose()) * 0.5;
        Self::new(diag, sym, part)
    }

    /// Builds the symmetric coefficient matrix from its upper triangle in
    /// row-major order `(b_11, b_12, ..., b_1G, b_22, ..., b_GG)`.
    pub fn from_upper(diag: Vec<f64>, upper: &[f64], part: PartitionVector) -> Result<Self> {
        let g = part.num_blocks();
        if upper.len() != g * (g + 1) / 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} upper-triangle entries, got {}",
                g * (g + 1) / 2,
                upper.len()
            )));
        }
        let mut block = DMatrix::zeros(g, g);
        let mut k = 0;
        for i in 0..g {
            for j in i..g {
                block[(i, j)] = upper[k];
                block[(j, i)] = upper[k];
                k += 1;
            }
        }
        Self::new(DVector::from_vec(diag), block, part)
    }

    pub fn identity(part: PartitionVector) -> Self {
        let g = part.num_blocks();
        Self { diag: DVector::repeat(g, 1.0), block: DMatrix::zeros(g, g), part }
    }

    pub fn zero(part: PartitionVector) -> Self {
        let g = part.num_blocks();
        Self { diag: DVector::zeros(g), block: DMatrix::zeros(g, g), part }
    }

    /// Diagonal coefficients `a_gg`.
    pub fn a(&self) -> &DVector<f64> {
        &self.diag
    }

    /// Between-community coefficients `b_gg'`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.block
    }

    pub fn part(&self) -> &PartitionVector {
        &self.part
    }

    /// Upper triangle of `B` in row-major order.
    pub fn b_upper(&self) -> Vec<f64> {
        let g = self.part.num_blocks();
        let mut out = Vec::with_capacity(g * (g + 1) / 2);
        for i in 0..g {
            for j in i..g {
                out.push(self.block[(i, j)]);
            }
        }
        out
    }

    /// The `G x G` reduction `Delta = A + B L`.
    pub fn delta(&self) -> DeltaMatrix {
        DeltaMatrix::from_parts(&self.diag, &self.block, &self.part)
    }

    /// Dense expansion: block Hadamard form `A o I(l) + B o J(l)`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let r = self.part.total_dim();
        let mut out = DMatrix::zeros(r, r);
        for g in 0..self.part.num_blocks() {
            let rg = self.part.block_range(g);
            for gp in 0..self.part.num_blocks() {
                let rp = self.part.block_range(gp);
                let b = self.block[(g, gp)];
                for i in rg.clone() {
                    for j in rp.clone() {
                        out[(i, j)] = b;
                    }
                }
            }
            let a = self.diag[g];
            let b = self.block[(g, g)];
            for i in rg {
                out[(i, i)] = a + b;
            }
        }
        out
    }

    /// Fits the UB pattern to a dense symmetric matrix: per block, `b` is the
    /// mean off-diagonal entry and `a` the mean diagonal entry minus `b`. Any
    /// entry deviating from the fitted pattern by more than `tol` is a
    /// [`Error::StructureViolation`].
    pub fn from_dense(dense: &DMatrix<f64>, part: &PartitionVector, tol: f64) -> Result<Self> {
        let r = part.total_dim();
        if dense.nrows() != r || dense.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "expected {r}x{r} dense matrix, got {}x{}",
                dense.nrows(),
                dense.ncols()
            )));
        }
        let g = part.num_blocks();
        let mut diag = DVector::zeros(g);
        let mut diag_mean = vec![0.0; g];
        let mut block = DMatrix::zeros(g, g);
        for gi in 0..g {
            let rg = part.block_range(gi);
            let dm = exact_mean(rg.clone().map(|i| dense[(i, i)]));
            let b = exact_mean(
                rg.clone()
                    .flat_map(|i| rg.clone().map(move |j| (i, j)))
                    .filter(|(i, j)| i != j)
                    .map(|(i, j)| dense[(i, j)]),
            );
            diag_mean[gi] = dm;
            block[(gi, gi)] = b;
            diag[gi] = dm - b;
            for gj in (gi + 1)..g {
                let rj = part.block_range(gj);
                let b = exact_mean(
                    rg.clone()
                        .flat_map(|i| rj.clone().map(move |j| dense[(i, j)]))
                        .chain(rj.clone().flat_map(|i| rg.clone().map(move |j| dense[(i, j)]))),
                );
                block[(gi, gj)] = b;
                block[(gj, gi)] = b;
            }
        }
        // Verify every entry against the fitted pattern.
        let mut worst = (0usize, 0usize, 0.0f64);
        for i in 0..r {
            let gi = part.block_of(i);
            for j in 0..r {
                let gj = part.block_of(j);
                let fitted = if i == j { diag_mean[gi] } else { block[(gi, gj)] };
                let dev = (dense[(i, j)] - fitted).abs();
                if dev > worst.2 {
                    worst = (i, j, dev);
                }
            }
        }
        if worst.2 > tol {
            return Err(Error::StructureViolation { row: worst.0, col: worst.1, deviation: worst.2, tol });
        }
        Self::new(diag, block, part.clone())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.part.same_as(&other.part)?;
        Self::new(&self.diag + &other.diag, &self.block + &other.block, self.part.clone())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.part.same_as(&other.part)?;
        Self::new(&self.diag - &other.diag, &self.block - &other.block, self.part.clone())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { diag: &self.diag * c, block: &self.block * c, part: self.part.clone() }
    }

    /// Product of two UB matrices: `A* = A1 A2`, `B* = A1 B2 + B1 A2 + B1 L B2`.
    /// The result keeps the UB block pattern but its `B*` is generally not
    /// symmetric, so it is returned as a generalized triple.
    pub fn mul(&self, other: &Self) -> Result<UbProduct> {
        self.part.same_as(&other.part)?;
        Ok(mul_parts(&self.diag, &self.block, &other.diag, &other.block, &self.part))
    }

    /// All `R` eigenvalues in ascending order: `a_gg` with multiplicity
    /// `L_g - 1` plus the `G` eigenvalues of `Delta`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.part.total_dim());
        for g in 0..self.part.num_blocks() {
            out.extend(std::iter::repeat(self.diag[g]).take(self.part.size(g) - 1));
        }
        out.extend(self.delta().eigenvalues().iter());
        out.sort_by(|x, y| x.partial_cmp(y).unwrap());
        out
    }

    /// `det = (prod_g a_gg^(L_g - 1)) * det(Delta)`.
    pub fn det(&self) -> f64 {
        let mut d = self.delta().det();
        for g in 0..self.part.num_blocks() {
            d *= self.diag[g].powi(self.part.size(g) as i32 - 1);
        }
        d
    }

    /// `log det = sum_g (L_g - 1) log a_gg + log det(Delta)`, requiring the
    /// positive-definite regime (`a_gg > 0`, `Delta` eigenvalues `> 0`).
    pub fn log_det(&self) -> Result<f64> {
        let mut acc = 0.0;
        for g in 0..self.part.num_blocks() {
            let a = self.diag[g];
            if a <= 0.0 {
                return Err(Error::NotPositiveDefinite(format!(
                    "diagonal coefficient a[{g}] = {a} is not positive"
                )));
            }
            acc += (self.part.size(g) as f64 - 1.0) * a.ln();
        }
        acc += self.delta().log_det()?;
        Ok(acc)
    }

    /// Closed-form inverse: `A* = A^-1`, `B* = -Delta^-1 B A^-1`, with `B*`
    /// symmetrized against round-off.
    pub fn inverse(&self) -> Result<Self> {
        let g = self.part.num_blocks();
        let amax = self.diag.iter().fold(0.0f64, |m, &a| m.max(a.abs()));
        let amin = self.diag.iter().fold(f64::INFINITY, |m, &a| m.min(a.abs()));
        if amin < SINGULAR_REL_TOL * amax || amax == 0.0 {
            return Err(Error::Singular(format!(
                "diagonal coefficient magnitude {amin:.3e} below relative floor"
            )));
        }
        let delta = self.delta();
        let cond = delta.condition_estimate();
        if !cond.is_finite() || cond > CONDITION_LIMIT {
            return Err(Error::Singular(format!("delta condition estimate {cond:.3e} exceeds limit")));
        }
        let a_inv = self.diag.map(|a| 1.0 / a);
        // B* = -Delta^-1 B A^-1
        let solved = delta.solve(&self.block)?;
        let mut b_inv = DMatrix::zeros(g, g);
        for i in 0..g {
            for j in 0..g {
                b_inv[(i, j)] = -solved[(i, j)] * a_inv[j];
            }
        }
        Self::symmetrized(a_inv, b_inv, self.part.clone())
    }

    /// Principal square root of a symmetric positive-definite UB matrix:
    /// `A* = A^(1/2)` entrywise, `Delta* = Delta^(1/2)` (principal), and
    /// `B* = (Delta* - A*) L^-1`, which solves the quadratic block relation
    /// `A* B* + B* A* + B* L B* = B`.
    pub fn sqrt(&self) -> Result<Self> {
        for g in 0..self.part.num_blocks() {
            if self.diag[g] <= 0.0 {
                return Err(Error::NotPositiveDefinite(format!(
                    "diagonal coefficient a[{g}] = {} is not positive",
                    self.diag[g]
                )));
            }
        }
        let delta_root = self.delta().principal_sqrt()?;
        let g = self.part.num_blocks();
        let a_root = self.diag.map(f64::sqrt);
        let mut b_root = DMatrix::zeros(g, g);
        for i in 0..g {
            for j in 0..g {
                let lj_inv = 1.0 / self.part.size(j) as f64;
                let num = if i == j { delta_root[(i, j)] - a_root[i] } else { delta_root[(i, j)] };
                b_root[(i, j)] = num * lj_inv;
            }
        }
        Self::symmetrized(a_root, b_root, self.part.clone())
    }

    /// `tr(M N)` for a dense `M` partitioned by the same sizes, computed from
    /// per-block traces and per-block sums of `M` only.
    pub fn trace_mul_dense(&self, m: &DMatrix<f64>) -> Result<f64> {
        let r = self.part.total_dim();
        if m.nrows() != r || m.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "expected {r}x{r} dense matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let gnum = self.part.num_blocks();
        let mut acc = 0.0;
        for g in 0..gnum {
            let rg = self.part.block_range(g);
            let tr: f64 = rg.clone().map(|i| m[(i, i)]).sum();
            acc += self.diag[g] * tr;
            for gp in 0..gnum {
                let rp = self.part.block_range(gp);
                let sum: f64 = rg.clone().map(|i| rp.clone().map(|j| m[(i, j)]).sum::<f64>()).sum();
                acc += self.block[(gp, g)] * sum;
            }
        }
        Ok(acc)
    }

    /// Closed-form `tr(M N)` for two UB matrices.
    pub fn trace_mul(&self, other: &Self) -> Result<f64> {
        self.part.same_as(&other.part)?;
        Ok(trace_of_parts(&self.diag, &self.block, &other.diag, &other.block, &self.part))
    }

    /// `tr = sum_g L_g (a_gg + b_gg)`.
    pub fn trace(&self) -> f64 {
        (0..self.part.num_blocks())
            .map(|g| self.part.size(g) as f64 * (self.diag[g] + self.block[(g, g)]))
            .sum()
    }

    /// Frobenius norm from the compressed coordinates.
    pub fn fro_norm(&self) -> f64 {
        self.trace_mul(self).expect("matching partitions").sqrt()
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn spectral_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for g in 0..self.part.num_blocks() {
            if self.part.size(g) > 1 {
                m = m.max(self.diag[g].abs());
            }
        }
        for lam in self.delta().eigenvalues().iter() {
            m = m.max(lam.abs());
        }
        m
    }

    /// Diagonal of the dense expansion, `a_g + b_gg` per feature.
    pub fn dense_diagonal(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.part.total_dim());
        for g in 0..self.part.num_blocks() {
            let v = self.diag[g] + self.block[(g, g)];
            for i in self.part.block_range(g) {
                out[i] = v;
            }
        }
        out
    }

    /// `N * M` for a dense `R x k` right factor, in `O(Rk + GkG)` time.
    pub fn mul_dense_right(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let r = self.part.total_dim();
        if m.nrows() != r {
            return Err(Error::DimensionMismatch(format!(
                "expected {r} rows in right factor, got {}",
                m.nrows()
            )));
        }
        let g = self.part.num_blocks();
        let k = m.ncols();
        // P[g, :] = column sums of M over block g
        let mut p = DMatrix::zeros(g, k);
        for gi in 0..g {
            for i in self.part.block_range(gi) {
                for c in 0..k {
                    p[(gi, c)] += m[(i, c)];
                }
            }
        }
        let q = &self.block * &p;
        let mut out = m.clone();
        for gi in 0..g {
            let a = self.diag[gi];
            for i in self.part.block_range(gi) {
                for c in 0..k {
                    out[(i, c)] = a * m[(i, c)] + q[(gi, c)];
                }
            }
        }
        Ok(out)
    }

    /// `M * N` for a dense `k x R` left factor.
    pub fn mul_dense_left(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let r = self.part.total_dim();
        if m.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "expected {r} columns in left factor, got {}",
                m.ncols()
            )));
        }
        let g = self.part.num_blocks();
        let k = m.nrows();
        let mut p = DMatrix::zeros(k, g);
        for gi in 0..g {
            for j in self.part.block_range(gi) {
                for row in 0..k {
                    p[(row, gi)] += m[(row, j)];
                }
            }
        }
        let q = &p * &self.block;
        let mut out = m.clone();
        for gi in 0..g {
            let a = self.diag[gi];
            for j in self.part.block_range(gi) {
                for row in 0..k {
                    out[(row, j)] = a * m[(row, j)] + q[(row, gi)];
                }
            }
        }
        Ok(out)
    }

    /// View as a generalized triple.
    pub fn as_product(&self) -> UbProduct {
        UbProduct { a: self.diag.clone(), b: self.block.clone(), part: self.part.clone() }
    }
}

impl UbProduct {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let r = self.part.total_dim();
        let mut out = DMatrix::zeros(r, r);
        for g in 0..self.part.num_blocks() {
            let rg = self.part.block_range(g);
            for gp in 0..self.part.num_blocks() {
                let rp = self.part.block_range(gp);
                let b = self.b[(g, gp)];
                for i in rg.clone() {
                    for j in rp.clone() {
                        out[(i, j)] = b;
                    }
                }
            }
            for i in rg {
                out[(i, i)] = self.a[g] + self.b[(g, g)];
            }
        }
        out
    }

    /// `Delta = A + B L` of the triple.
    pub fn delta(&self) -> DMatrix<f64> {
        let g = self.part.num_blocks();
        let mut d = self.b.clone();
        for j in 0..g {
            let l = self.part.size(j) as f64;
            for i in 0..g {
                d[(i, j)] *= l;
            }
        }
        for i in 0..g {
            d[(i, i)] += self.a[i];
        }
        d
    }

    pub fn trace(&self) -> f64 {
        (0..self.part.num_blocks())
            .map(|g| self.part.size(g) as f64 * (self.a[g] + self.b[(g, g)]))
            .sum()
    }

    /// Closed-form `tr(M N)` for generalized triples.
    pub fn trace_mul(&self, other: &Self) -> Result<f64> {
        self.part.same_as(&other.part)?;
        Ok(trace_of_parts(&self.a, &self.b, &other.a, &other.b, &self.part))
    }

    /// Product of generalized triples, same coordinate formula as the UB case.
    pub fn mul(&self, other: &Self) -> Result<UbProduct> {
        self.part.same_as(&other.part)?;
        Ok(mul_parts(&self.a, &self.b, &other.a, &other.b, &self.part))
    }

    /// Converts back to a symmetric UB matrix, requiring `|B - B^T|` within `tol`.
    pub fn into_symmetric(self, tol: f64) -> Result<UniformBlockMatrix> {
        let g = self.part.num_blocks();
        for i in 0..g {
            for j in (i + 1)..g {
                let dev = (self.b[(i, j)] - self.b[(j, i)]).abs();
                if dev > tol {
                    return Err(Error::StructureViolation { row: i, col: j, deviation: dev, tol });
                }
            }
        }
        UniformBlockMatrix::symmetrized(self.a, self.b, self.part)
    }
}

/// `A* = A1 A2`, `B* = A1 B2 + B1 A2 + B1 L B2` on raw coordinates.
fn mul_parts(
    a1: &DVector<f64>,
    b1: &DMatrix<f64>,
    a2: &DVector<f64>,
    b2: &DMatrix<f64>,
    part: &PartitionVector,
) -> UbProduct {
    let g = part.num_blocks();
    let a = a1.component_mul(a2);
    let mut b1l = b1.clone();
    for j in 0..g {
        let l = part.size(j) as f64;
        for i in 0..g {
            b1l[(i, j)] *= l;
        }
    }
    let mut b = b1l * b2;
    for i in 0..g {
        for j in 0..g {
            b[(i, j)] += a1[i] * b2[(i, j)] + b1[(i, j)] * a2[j];
        }
    }
    UbProduct { a, b, part: part.clone() }
}

/// `tr(M N)` from coordinates:
/// `sum_g (aM aN + aM bN_gg + bM_gg aN) L_g + sum_{g,g'} bM_gg' bN_g'g L_g L_g'`.
fn trace_of_parts(
    a1: &DVector<f64>,
    b1: &DMatrix<f64>,
    a2: &DVector<f64>,
    b2: &DMatrix<f64>,
    part: &PartitionVector,
) -> f64 {
    let g = part.num_blocks();
    let mut acc = 0.0;
    for i in 0..g {
        let l = part.size(i) as f64;
        acc += (a1[i] * a2[i] + a1[i] * b2[(i, i)] + b1[(i, i)] * a2[i]) * l;
        for j in 0..g {
            acc += b1[(i, j)] * b2[(j, i)] * l * part.size(j) as f64;
        }
    }
    acc
}

/// Mean that returns the common value exactly when all inputs are bit-identical.
fn exact_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let mut all_equal = true;
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        match first {
            None => first = Some(v),
            Some(f) => {
                if f.to_bits() != v.to_bits() {
                    all_equal = false;
                }
            }
        }
        sum += v;
        count += 1;
    }
    let first = first.expect("mean of empty set");
    if all_equal {
        first
    } else {
        sum / count as f64
    }
}

/// The `G x G` reduction `Delta = A + B L` of a symmetric UB matrix.
///
/// `Delta` is similar to the symmetric matrix `A + L^(1/2) B L^(1/2)` via the
/// diagonal scaling `L^(1/2)`, so its eigenvalues are always real and its
/// principal square root reduces to a symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct DeltaMatrix {
    matrix: DMatrix<f64>,
    sym: DMatrix<f64>,
    sizes: Vec<usize>,
}

impl DeltaMatrix {
    fn from_parts(a: &DVector<f64>, b: &DMatrix<f64>, part: &PartitionVector) -> Self {
        let g = part.num_blocks();
        let mut matrix = b.clone();
        let mut sym = DMatrix::zeros(g, g);
        for j in 0..g {
            let lj = part.size(j) as f64;
            for i in 0..g {
                matrix[(i, j)] *= lj;
                sym[(i, j)] = b[(i, j)] * (part.size(i) as f64 * lj).sqrt();
            }
        }
        for i in 0..g {
            matrix[(i, i)] += a[i];
            sym[(i, i)] += a[i];
        }
        Self { matrix, sym, sizes: part.sizes().to_vec() }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues (all real), ascending.
    pub fn eigenvalues(&self) -> DVector<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.sym.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        DVector::from_vec(ev)
    }

    /// Eigenvalues and orthonormal eigenvectors of the symmetric similar
    /// matrix `A + L^(1/2) B L^(1/2)`; the reduction itself diagonalizes as
    /// `Delta = L^(-1/2) Q diag(lambda) Q^T L^(1/2)`.
    pub fn sym_eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.sym.clone());
        (eig.eigenvalues, eig.eigenvectors)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn det(&self) -> f64 {
        self.matrix.clone().lu().determinant()
    }

    pub fn log_det(&self) -> Result<f64> {
        let ev = self.eigenvalues();
        if ev[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "delta has non-positive eigenvalue {:.6e}",
                ev[0]
            )));
        }
        Ok(ev.iter().map(|l| l.ln()).sum())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Ratio of extreme singular values of `Delta` itself.
    pub fn condition_estimate(&self) -> f64 {
        let sv = self.matrix.clone().svd(false, false).singular_values;
        let max = sv.iter().fold(0.0f64, |m, &s| m.max(s));
        let min = sv.iter().fold(f64::INFINITY, |m, &s| m.min(s));
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Solves `Delta X = RHS`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.matrix
            .clone()
            .lu()
            .solve(rhs)
            .ok_or_else(|| Error::Singular("delta is not invertible".into()))
    }

    /// Principal square root via the symmetric similarity:
    /// `Delta^(1/2) = L^(-1/2) (A + L^(1/2) B L^(1/2))^(1/2) L^(1/2)`.
    pub fn principal_sqrt(&self) -> Result<DMatrix<f64>> {
        let eig = SymmetricEigen::new(self.sym.clone());
        let g = self.sym.nrows();
        let mut root = DMatrix::zeros(g, g);
        for k in 0..g {
            let lam = eig.eigenvalues[k];
            if lam <= 0.0 {
                return Err(Error::NotPositiveDefinite(format!(
                    "delta has non-positive eigenvalue {lam:.6e}"
                )));
            }
            let s = lam.sqrt();
            let v = eig.eigenvectors.column(k);
            for i in 0..g {
                for j in 0..g {
                    root[(i, j)] += s * v[i] * v[j];
                }
            }
        }
        // conjugate back: L^(-1/2) root L^(1/2)
        let mut out = root;
        for i in 0..g {
            let li = (self.sizes[i] as f64).sqrt();
            for j in 0..g {
                let lj = (self.sizes[j] as f64).sqrt();
                out[(i, j)] *= lj / li;
            }
        }
        Ok(out)
    }
}
