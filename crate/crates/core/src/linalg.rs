//! Dense linear-algebra primitives: QR orthonormalization, projections,
//! subspace distances and the block power method.
//!
//! Subspaces are carried around as [`BasisMatrix`] values, i.e. tall matrices
//! with orthonormal columns. All distances are between column spans, so every
//! function here is invariant to right-multiplying a basis by an orthogonal
//! `r x r` matrix.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::{gaussian_matrix, rng_from, Rng, TAG_INIT};

pub type DenseMatrix = DMatrix<f64>;

/// Smallest accepted ratio `sigma_min / sigma_max` before a matrix is treated
/// as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// An `n x r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix(DenseMatrix);

impl BasisMatrix {
    /// Wraps `m` after checking `||m^T m - I||_F <= tol`.
    pub fn from_orthonormal(m: DenseMatrix, tol: f64) -> Result<Self> {
        if m.ncols() > m.nrows() {
            return Err(Error::dims(
                format!("at most {} columns", m.nrows()),
                m.ncols(),
            ));
        }
        let err = orthonormality_error(&m);
        if err > tol {
            return Err(Error::RankDeficient { ratio: err });
        }
        Ok(BasisMatrix(m))
    }

    /// Columns `cols` of the `n x n` identity.
    pub fn canonical(n: usize, cols: &[usize]) -> Self {
        let mut m = DenseMatrix::zeros(n, cols.len());
        for (j, &c) in cols.iter().enumerate() {
            m[(c, j)] = 1.0;
        }
        BasisMatrix(m)
    }

    /// A uniformly random `r`-dimensional subspace of R^n.
    pub fn random(n: usize, r: usize, rng: &mut Rng) -> Self {
        loop {
            // A Gaussian matrix is full rank with probability one.
            if let Ok(b) = orthonormalize(&gaussian_matrix(n, r, rng)) {
                return b;
            }
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    /// Orthogonal complement residual `(I - U U^T) m`.
    pub fn residual(&self, m: &DenseMatrix) -> DenseMatrix {
        m - &self.0 * self.0.tr_mul(m)
    }
}

/// `||m^T m - I||_F`.
pub fn orthonormality_error(m: &DenseMatrix) -> f64 {
    let g = m.tr_mul(m);
    (g - DenseMatrix::identity(m.ncols(), m.ncols())).norm()
}

/// Symmetric `n x n` matrix `U U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix(DenseMatrix);

impl ProjectionMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    /// Column-major flattening, the representation fed to the geometric median.
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerMethodConfig {
    pub rank: usize,
    /// `T_pow`, at least one.
    pub iterations: usize,
    pub seed: u64,
    /// Stop once `SD_F` between successive iterates falls below this.
    pub early_exit: Option<f64>,
}

impl PowerMethodConfig {
    pub fn new(rank: usize, iterations: usize, seed: u64) -> Self {
        PowerMethodConfig {
            rank,
            iterations,
            seed,
            early_exit: None,
        }
    }

    /// The Gaussian starting matrix `U_rand` for an `n`-dimensional problem.
    pub fn initial_matrix(&self, n: usize) -> DenseMatrix {
        gaussian_matrix(n, self.rank, &mut rng_from(self.seed, &[TAG_INIT]))
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::ConfigInvalid("T_pow must be at least 1".into()));
        }
        if self.rank == 0 || self.rank > n {
            return Err(Error::ConfigInvalid(format!(
                "rank {} outside 1..={n}",
                self.rank
            )));
        }
        Ok(())
    }
}

/// Thin QR with a non-negative diagonal in `R`. Returns `(Q, R)`.
pub fn thin_qr(m: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows().min(q.ncols()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Orthonormal basis for the column span of a full-column-rank `m`.
pub fn orthonormalize(m: &DenseMatrix) -> Result<BasisMatrix> {
    if m.ncols() == 0 || m.ncols() > m.nrows() {
        return Err(Error::dims(format!("1..={} columns", m.nrows()), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient { ratio: f64::NAN });
    }
    let (q, r) = thin_qr(m);
    // sigma(m) == sigma(r), and r is only r x r.
    let sv = r.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= RANK_TOLERANCE * max {
        return Err(Error::RankDeficient {
            ratio: if max > 0.0 { min / max } else { 0.0 },
        });
    }
    Ok(BasisMatrix(q))
}

/// Like [`orthonormalize`] but substitutes a random basis for degenerate input.
pub fn orthonormalize_or_random(m: &DenseMatrix, rng: &mut Rng) -> BasisMatrix {
    orthonormalize(m).unwrap_or_else(|_| BasisMatrix::random(m.nrows(), m.ncols(), rng))
}

pub fn projection(u: &BasisMatrix) -> ProjectionMatrix {
    ProjectionMatrix(u.0.clone() * u.0.transpose())
}

fn check_same_dim(u1: &BasisMatrix, u2: &BasisMatrix) -> Result<()> {
    if u1.ambient_dim() != u2.ambient_dim() {
        return Err(Error::dims(
            format!("ambient dimension {}", u1.ambient_dim()),
            u2.ambient_dim(),
        ));
    }
    Ok(())
}

/// `SD_F(U1, U2) = ||(I - U1 U1^T) U2||_F`.
pub fn sd_f(u1: &BasisMatrix, u2: &BasisMatrix) -> Result<f64> {
    check_same_dim(u1, u2)?;
    Ok(u1.residual(&u2.0).norm())
}

/// `SD_2(U1, U2) = ||(I - U1 U1^T) U2||_2`.
pub fn sd_2(u1: &BasisMatrix, u2: &BasisMatrix) -> Result<f64> {
    check_same_dim(u1, u2)?;
    let res = u1.residual(&u2.0);
    let (_, r) = thin_qr(&res);
    Ok(r.singular_values().max().clamp(0.0, 1.0))
}

/// Block power method `U <- QR(apply(U))` from a Gaussian start drawn from
/// `cfg.seed`. `apply` must act as a symmetric PSD `n x n` operator.
pub fn power_method_topr<F>(n: usize, apply: F, cfg: &PowerMethodConfig) -> Result<BasisMatrix>
where
    F: FnMut(&DenseMatrix) -> DenseMatrix,
{
    cfg.validate(n)?;
    power_iterate(cfg.initial_matrix(n), apply, cfg.iterations, cfg.early_exit)
}

/// Block power method from an explicit starting matrix.
pub fn power_iterate<F>(
    init: DenseMatrix,
    mut apply: F,
    iterations: usize,
    early_exit: Option<f64>,
) -> Result<BasisMatrix>
where
    F: FnMut(&DenseMatrix) -> DenseMatrix,
{
    let mut current = init;
    let mut previous: Option<BasisMatrix> = None;
    for _ in 0..iterations.max(1) {
        let next = orthonormalize(&apply(&current))?;
        if let (Some(tol), Some(prev)) = (early_exit, previous.as_ref()) {
            if sd_f(prev, &next)? < tol {
                return Ok(next);
            }
        }
        current = next.as_matrix().clone();
        previous = Some(next);
    }
    Ok(previous.expect("at least one iteration"))
}

/// Top-`r` left singular vectors of `d` (n x q) by running the power method
/// on `v -> d (d^T v)` without forming `d d^T`.
pub fn topr_left_singular(d: &DenseMatrix, cfg: &PowerMethodConfig) -> Result<BasisMatrix> {
    if cfg.rank > d.nrows().min(d.ncols()) {
        return Err(Error::ConfigInvalid(format!(
            "rank {} exceeds min({}, {})",
            cfg.rank,
            d.nrows(),
            d.ncols()
        )));
    }
    power_method_topr(d.nrows(), |u| d * d.tr_mul(u), cfg)
}

/// Eigen-decomposition of a symmetric matrix, eigenpairs sorted by
/// decreasing eigenvalue.
pub fn sorted_symmetric_eigen(sym: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DenseMatrix::from_fn(sym.nrows(), order.len(), |i, j| {
        eig.eigenvectors[(i, order[j])]
    });
    (values, vectors)
}

/// Exact top-`r` eigenspace of a symmetric matrix (dense path; intended for
/// moderate `n`, e.g. test oracles).
pub fn exact_top_eigenspace(sym: &DenseMatrix, r: usize) -> Result<BasisMatrix> {
    if r == 0 || r > sym.nrows() {
        return Err(Error::ConfigInvalid(format!(
            "rank {r} outside 1..={}",
            sym.nrows()
        )));
    }
    let (_, vectors) = sorted_symmetric_eigen(sym);
    orthonormalize(&vectors.columns(0, r).into_owned())
}

/// Singular values of `d` in decreasing order.
pub fn singular_values_desc(d: &DenseMatrix) -> Vec<f64> {
    let mut sv: Vec<f64> = d.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn random_basis(n: usize, r: usize, seed: u64) -> BasisMatrix {
        BasisMatrix::random(n, r, &mut rng_from(seed, &[]))
    }

    fn random_orthogonal(r: usize, seed: u64) -> DenseMatrix {
        random_basis(r, r, seed).into_matrix()
    }

    #[test]
    fn orthonormalize_keeps_identity_prefix() {
        let m = BasisMatrix::canonical(5, &[0, 1, 2]).into_matrix();
        let u = orthonormalize(&m).unwrap();
        assert!((u.as_matrix() - &m).norm() < 1e-14);
    }

    #[test]
    fn orthonormalize_undoes_scaling_up_to_sign() {
        let u = random_basis(7, 3, 1);
        let got = orthonormalize(&(u.as_matrix() * 2.0)).unwrap();
        for j in 0..3 {
            let a = got.as_matrix().column(j);
            let b = u.as_matrix().column(j);
            let d = (a - b).norm().min((a + b).norm());
            assert!(d < 1e-12, "column {j} differs by {d}");
        }
    }

    #[test]
    fn orthonormalize_random_gaussian_preserves_span() {
        let m = gaussian_matrix(6, 3, &mut rng_from(2, &[]));
        let u = orthonormalize(&m).unwrap();
        assert!(orthonormality_error(u.as_matrix()) < 1e-10);
        let pm = projection(&u).into_matrix() * &m;
        assert!((pm - &m).norm() <= 1e-8 * m.norm());
    }

    #[test]
    fn orthonormalize_rejects_rank_deficient() {
        let m = DenseMatrix::from_element(4, 2, -3.0);
        assert!(matches!(
            orthonormalize(&m),
            Err(Error::RankDeficient { .. })
        ));
        assert!(matches!(
            orthonormalize(&DenseMatrix::zeros(4, 2)),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn qr_has_nonnegative_diagonal() {
        let m = gaussian_matrix(8, 4, &mut rng_from(9, &[]));
        let (q, r) = thin_qr(&m);
        for j in 0..4 {
            assert!(r[(j, j)] >= 0.0);
        }
        assert!((q * r - m).norm() < 1e-12);
    }

    #[test]
    fn projection_of_e1() {
        let p = projection(&BasisMatrix::canonical(2, &[0]));
        assert_eq!(
            p.as_matrix(),
            &DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
        );
    }

    #[test]
    fn projection_is_rotation_invariant() {
        let u = random_basis(9, 3, 4);
        let rotated = BasisMatrix(u.as_matrix() * random_orthogonal(3, 5));
        let d = projection(&u).into_matrix() - projection(&rotated).into_matrix();
        assert!(d.norm() < 1e-12);
    }

    #[test]
    fn projection_invariants() {
        let u = random_basis(8, 3, 6);
        let p = projection(&u).into_matrix();
        assert!((p.trace() - 3.0).abs() < 1e-10);
        assert!((&p - p.transpose()).norm() < 1e-10);
        assert!((&p * &p - &p).norm() < 1e-8);
        assert!(p.norm() <= 3f64.sqrt() + 1e-10);
    }

    #[test]
    fn sd_f_basic_values() {
        let u = random_basis(6, 2, 7);
        assert!(sd_f(&u, &u).unwrap() < 1e-12);
        let e1 = BasisMatrix::canonical(2, &[0]);
        let e2 = BasisMatrix::canonical(2, &[1]);
        assert!((sd_f(&e1, &e2).unwrap() - 1.0).abs() < 1e-15);
        assert!((sd_2(&e1, &e2).unwrap() - 1.0).abs() < 1e-15);
        assert!(sd_2(&u, &u).unwrap() < 1e-7);
    }

    #[test]
    fn sd_f_matches_projection_distance_oracle() {
        for seed in 0..20 {
            let u1 = random_basis(10, 4, seed);
            let u2 = random_basis(10, 4, seed + 100);
            let oracle = (projection(&u1).into_matrix() - projection(&u2).into_matrix()).norm();
            let sd = sd_f(&u1, &u2).unwrap();
            assert!((2f64.sqrt() * sd - oracle).abs() < 1e-8);
            assert!((sd - sd_f(&u2, &u1).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn sd_f_bounded_by_sqrt_r_sd_2() {
        for seed in 0..20 {
            let u1 = random_basis(10, 3, seed);
            let u2 = random_basis(10, 3, seed + 50);
            let f = sd_f(&u1, &u2).unwrap();
            let s = sd_2(&u1, &u2).unwrap();
            assert!((0.0..=1.0).contains(&s));
            assert!(f <= 3f64.sqrt() * s + 1e-10);
        }
    }

    #[test]
    fn sd_f_rejects_dimension_mismatch() {
        let a = random_basis(5, 2, 1);
        let b = random_basis(6, 2, 1);
        assert!(matches!(sd_f(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(sd_2(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn power_method_diagonal_operator() {
        let mut diag = vec![5.0, 4.0];
        diag.extend(std::iter::repeat_n(1.0, 6));
        let phi = DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        let cfg = PowerMethodConfig::new(2, 50, 11);
        let u = power_method_topr(8, |v| &phi * v, &cfg).unwrap();
        let truth = BasisMatrix::canonical(8, &[0, 1]);
        assert!(sd_f(&truth, &u).unwrap() < 1e-8);
    }

    #[test]
    fn power_method_recovers_scaled_projection_range() {
        let target = random_basis(12, 3, 21);
        let phi = projection(&target).into_matrix() * 3.0;
        let oracle = exact_top_eigenspace(&phi, 3).unwrap();
        let u = power_method_topr(12, |v| &phi * v, &PowerMethodConfig::new(3, 5, 1)).unwrap();
        assert!(sd_f(&oracle, &u).unwrap() < 1e-10);
        assert!(sd_f(&target, &u).unwrap() < 1e-10);
    }

    #[test]
    fn power_method_full_rank_request() {
        let phi = DenseMatrix::identity(4, 4) * 2.0;
        let u = power_method_topr(4, |v| &phi * v, &PowerMethodConfig::new(4, 3, 2)).unwrap();
        let full = BasisMatrix::canonical(4, &[0, 1, 2, 3]);
        assert!(sd_f(&full, &u).unwrap() < 1e-12);
    }

    #[test]
    fn power_method_is_deterministic_and_exits_early() {
        let phi =
            DenseMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![9.0, 3.0, 1.0, 0.5]));
        let cfg = PowerMethodConfig::new(1, 200, 5);
        let a = power_method_topr(4, |v| &phi * v, &cfg).unwrap();
        let b = power_method_topr(4, |v| &phi * v, &cfg).unwrap();
        assert_eq!(a, b);

        let mut calls = 0;
        let early = PowerMethodConfig {
            early_exit: Some(1e-10),
            ..cfg
        };
        power_method_topr(
            4,
            |v| {
                calls += 1;
                &phi * v
            },
            &early,
        )
        .unwrap();
        assert!(calls < 200, "early exit never triggered");
    }

    #[test]
    fn power_method_rejects_zero_iterations() {
        let cfg = PowerMethodConfig::new(1, 0, 0);
        assert!(power_method_topr(3, |v| v.clone(), &cfg).is_err());
    }

    #[test]
    fn topr_left_singular_orthogonal_columns() {
        let mut d = DenseMatrix::zeros(5, 3);
        d[(2, 0)] = 3.0;
        d[(0, 1)] = 2.0;
        d[(4, 2)] = 1.0;
        let u = topr_left_singular(&d, &PowerMethodConfig::new(1, 60, 3)).unwrap();
        assert!(sd_f(&BasisMatrix::canonical(5, &[2]), &u).unwrap() < 1e-8);
    }

    #[test]
    fn topr_left_singular_matches_svd_oracle() {
        let mut rng = rng_from(31, &[]);
        let left = gaussian_matrix(15, 3, &mut rng);
        let right = gaussian_matrix(3, 20, &mut rng);
        let d = left * right;
        let svd = d.clone().svd(true, false);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u_full = svd.u.unwrap();
        let oracle = DenseMatrix::from_fn(15, 3, |i, j| u_full[(i, order[j])]);
        let oracle = orthonormalize(&oracle).unwrap();
        let u = topr_left_singular(&d, &PowerMethodConfig::new(3, 100, 8)).unwrap();
        assert!(sd_f(&oracle, &u).unwrap() < 1e-6);
    }

    #[test]
    fn topr_left_singular_of_zero_is_rank_deficient() {
        let d = DenseMatrix::zeros(4, 4);
        let err = topr_left_singular(&d, &PowerMethodConfig::new(2, 5, 0)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn topr_left_singular_matches_explicit_gram_operator() {
        let d = gaussian_matrix(10, 7, &mut rng_from(41, &[]));
        let cfg = PowerMethodConfig::new(2, 8, 17);
        let implicit = topr_left_singular(&d, &cfg).unwrap();
        let gram = &d * d.transpose();
        let explicit = power_method_topr(10, |v| &gram * v, &cfg).unwrap();
        assert!(sd_f(&implicit, &explicit).unwrap() < 1e-10);
    }
}
