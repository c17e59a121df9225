//! Federated PCA: Gaussian data model, node shards and the data-driven
//! parameter heuristics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::NodeOperator;
use crate::linalg::{orthonormalize, sorted_symmetric_eigen, thin_qr, BasisMatrix, DenseMatrix};
use crate::rng::{gaussian_matrix, rng_from, TAG_DATA, TAG_MODEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumSpec {
    /// `r` entries equal to 15, then 1, then `1 - 1/n, 1 - 2/n, ...`.
    FullRank15,
    /// `r` entries equal to 15, then 1, then zeros.
    LowRank15,
    Custom(Vec<f64>),
}

impl SpectrumSpec {
    pub fn values(&self, n: usize, r: usize) -> Result<Vec<f64>> {
        let values = match self {
            SpectrumSpec::FullRank15 | SpectrumSpec::LowRank15 => {
                if r >= n {
                    return Err(Error::InvalidSpectrum(format!(
                        "rank {r} needs n > r, got n = {n}"
                    )));
                }
                let mut v = vec![15.0; r];
                v.push(1.0);
                let tail = (1..n - r).map(|m| match self {
                    SpectrumSpec::FullRank15 => 1.0 - m as f64 / n as f64,
                    _ => 0.0,
                });
                v.extend(tail);
                v
            }
            SpectrumSpec::Custom(v) => v.clone(),
        };
        if values.len() != n {
            return Err(Error::InvalidSpectrum(format!(
                "{} values for n = {n}",
                values.len()
            )));
        }
        if values.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidSpectrum(
                "entries must be finite and non-negative".into(),
            ));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidSpectrum(
                "entries must be non-increasing".into(),
            ));
        }
        Ok(values)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpectrumSpec::FullRank15 => "full_rank_15",
            SpectrumSpec::LowRank15 => "low_rank_15",
            SpectrumSpec::Custom(_) => "custom",
        }
    }
}

/// `Phi* = U*_full S U*_full^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub n: usize,
    pub r: usize,
    pub spectrum: Vec<f64>,
    pub u_star_full: DenseMatrix,
    pub seed: u64,
}

impl PcaModel {
    pub fn phi_star(&self) -> DenseMatrix {
        let scaled = DenseMatrix::from_fn(self.n, self.n, |i, j| {
            self.u_star_full[(i, j)] * self.spectrum[j]
        });
        scaled * self.u_star_full.transpose()
    }

    /// Leading `r` columns of `U*_full`.
    pub fn u_star(&self) -> BasisMatrix {
        BasisMatrix::from_orthonormal(self.u_star_full.columns(0, self.r).into_owned(), 1e-8)
            .expect("columns of an orthogonal matrix")
    }

    /// `sigma*_r - sigma*_{r+1}`.
    pub fn gap(&self) -> f64 {
        self.spectrum[self.r - 1] - self.spectrum.get(self.r).copied().unwrap_or(0.0)
    }

    /// Number of nonzero spectrum entries, i.e. the rank of `Phi*`.
    pub fn support(&self) -> usize {
        self.spectrum.iter().take_while(|&&s| s > 0.0).count()
    }

    /// `U*_full[:, :k] diag(sqrt(s))` over the nonzero part of the spectrum,
    /// so that `factor * g` with `g ~ N(0, I_k)` has covariance `Phi*`.
    pub fn sampling_factor(&self) -> DenseMatrix {
        let k = self.support();
        DenseMatrix::from_fn(self.n, k, |i, j| {
            self.u_star_full[(i, j)] * self.spectrum[j].sqrt()
        })
    }
}

pub fn generate_pca_model(
    n: usize,
    r: usize,
    spectrum: &SpectrumSpec,
    seed: u64,
) -> Result<PcaModel> {
    if r == 0 || r > n {
        return Err(Error::ConfigInvalid(format!("rank {r} outside 1..={n}")));
    }
    let spectrum = spectrum.values(n, r)?;
    let g = gaussian_matrix(n, n, &mut rng_from(seed, &[TAG_MODEL]));
    let u_star_full = orthonormalize(&g)?.into_matrix();
    Ok(PcaModel {
        n,
        r,
        spectrum,
        u_star_full,
        seed,
    })
}

/// Node data `D_l = W G_l`, kept factored: `W` is `n x k` and shared, `G_l`
/// is `k x q_tilde`. Sampled data use the model's sampling factor; explicit
/// shards use `W = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaShards {
    factor: DenseMatrix,
    coeffs: Vec<DenseMatrix>,
}

impl PcaShards {
    pub fn from_shards(shards: Vec<DenseMatrix>) -> Result<Self> {
        let first = shards.first().ok_or(Error::EmptyInput)?;
        let shape = first.shape();
        if let Some(bad) = shards.iter().position(|s| s.shape() != shape) {
            return Err(
                Error::dims(format!("{shape:?}"), format!("{:?}", shards[bad].shape()))
                    .at_node(bad),
            );
        }
        Ok(PcaShards {
            factor: DenseMatrix::identity(shape.0, shape.0),
            coeffs: shards,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// `q_tilde`, samples per node.
    pub fn samples_per_node(&self) -> usize {
        self.coeffs[0].ncols()
    }

    /// The explicit `n x q_tilde` data matrix of node `l`.
    pub fn shard(&self, node: usize) -> DenseMatrix {
        &self.factor * &self.coeffs[node]
    }

    /// `Phi_l = D_l D_l^T / q_tilde`, explicitly.
    pub fn covariance(&self, node: usize) -> DenseMatrix {
        let c = self.coeff_gram(node);
        &self.factor * c * self.factor.transpose()
    }

    fn coeff_gram(&self, node: usize) -> DenseMatrix {
        let g = &self.coeffs[node];
        g * g.transpose() / g.ncols() as f64
    }

    /// Node operators `U -> Phi_l U` that never form `Phi_l`.
    pub fn operators(&self) -> Vec<ShardOperator<'_>> {
        (0..self.num_nodes())
            .map(|node| ShardOperator {
                factor: &self.factor,
                gram: self.coeff_gram(node),
            })
            .collect()
    }

    /// Eigenvalues of `Phi_l`, decreasing, padded with zeros to length `n`.
    pub fn node_spectrum(&self, node: usize) -> Vec<f64> {
        // Phi_l = W C W^T = Q (R C R^T) Q^T with W = QR, so only a k x k
        // eigenproblem is needed.
        let n = self.dim();
        let k = self.factor.ncols();
        let mut values = if k == 0 {
            Vec::new()
        } else if k >= n {
            sorted_symmetric_eigen(&self.covariance(node)).0
        } else {
            let (_, r) = thin_qr(&self.factor);
            let small = &r * self.coeff_gram(node) * r.transpose();
            sorted_symmetric_eigen(&small).0
        };
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        values.resize(n, 0.0);
        values
    }
}

/// `q` samples from `N(0, Phi*)` split into `L` contiguous shards.
pub fn sample_shards(model: &PcaModel, q: usize, num_nodes: usize, seed: u64) -> Result<PcaShards> {
    if num_nodes == 0 || !q.is_multiple_of(num_nodes) || q == 0 {
        return Err(Error::IndivisibleSplit {
            total: q,
            parts: num_nodes,
        });
    }
    let factor = model.sampling_factor();
    let k = factor.ncols();
    let per_node = q / num_nodes;
    let mut rng = rng_from(seed, &[TAG_DATA]);
    let all = gaussian_matrix(k, q, &mut rng);
    let coeffs = (0..num_nodes)
        .map(|node| all.columns(node * per_node, per_node).into_owned())
        .collect();
    Ok(PcaShards { factor, coeffs })
}

/// `D D^T / q_tilde`.
pub fn node_covariance(shard: &DenseMatrix) -> Result<DenseMatrix> {
    if shard.ncols() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(shard * shard.transpose() / shard.ncols() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardOperator<'a> {
    factor: &'a DenseMatrix,
    gram: DenseMatrix,
}

impl NodeOperator for ShardOperator<'_> {
    fn dim(&self) -> usize {
        self.factor.nrows()
    }

    fn apply(&self, u: &DenseMatrix) -> DenseMatrix {
        self.factor * (&self.gram * self.factor.tr_mul(u))
    }
}

/// Constant in `T_pow = C (sigma_r / gap) ln(n / eps)`; with the default
/// `eps` it yields 10 iterations at n=1000, r=60, q=1800, L=3.
pub const DEFAULT_TPOW_CONSTANT: f64 = 0.85;
pub const DEFAULT_TPOW_EPS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaParamEstimates {
    /// `max_l sigma_hat_{l,r}`.
    pub sigma_r_hat: f64,
    /// `min_l (sigma_hat_{l,r} - sigma_hat_{l,r+1})`.
    pub delta_hat: f64,
    /// `max_l sigma_hat_{l,1}`.
    pub sigma_1_hat: f64,
    /// Smallest rank holding the requested energy fraction of the node-averaged spectrum.
    pub r_selected: Option<usize>,
}

impl PcaParamEstimates {
    /// `T_pow = ceil(c * (sigma_r / Delta) * ln(n / eps))`.
    pub fn power_iterations(&self, n: usize, eps: f64, c: f64) -> usize {
        let t = c * (self.sigma_r_hat / self.delta_hat) * (n as f64 / eps).ln();
        (t.ceil() as usize).max(1)
    }

    /// `omega = 1.1 sigma_1 sqrt(r)`, the resilient power method threshold.
    pub fn res_pow_omega(&self, r: usize) -> f64 {
        1.1 * self.sigma_1_hat * (r as f64).sqrt()
    }
}

pub fn estimate_pca_params(
    shards: &PcaShards,
    r: usize,
    energy: Option<f64>,
) -> Result<PcaParamEstimates> {
    let n = shards.dim();
    if r == 0 || r + 1 > n.min(shards.samples_per_node()) {
        return Err(Error::ConfigInvalid(format!(
            "rank {r} needs r + 1 <= min(n, q_tilde) = {}",
            n.min(shards.samples_per_node())
        )));
    }
    let spectra: Vec<Vec<f64>> = (0..shards.num_nodes())
        .map(|l| shards.node_spectrum(l))
        .collect();
    params_from_spectra(&spectra, r, energy)
}

/// The same estimates from per-node eigenvalue lists (each decreasing).
pub fn params_from_spectra(
    spectra: &[Vec<f64>],
    r: usize,
    energy: Option<f64>,
) -> Result<PcaParamEstimates> {
    if spectra.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sigma_r_hat = f64::NEG_INFINITY;
    let mut delta_hat = f64::INFINITY;
    let mut sigma_1_hat = f64::NEG_INFINITY;
    for s in spectra {
        if s.len() < r + 1 {
            return Err(Error::dims(
                format!("at least {} eigenvalues", r + 1),
                s.len(),
            ));
        }
        sigma_r_hat = sigma_r_hat.max(s[r - 1]);
        delta_hat = delta_hat.min(s[r - 1] - s[r]);
        sigma_1_hat = sigma_1_hat.max(s[0]);
    }
    if !(delta_hat > 0.0) {
        return Err(Error::DegenerateGap(delta_hat));
    }
    let r_selected = energy.map(|fraction| {
        let len = spectra[0].len();
        let mean: Vec<f64> = (0..len)
            .map(|i| {
                spectra
                    .iter()
                    .map(|s| s.get(i).copied().unwrap_or(0.0))
                    .sum::<f64>()
                    / spectra.len() as f64
            })
            .collect();
        let total: f64 = mean.iter().sum();
        let mut acc = 0.0;
        for (i, v) in mean.iter().enumerate() {
            acc += v;
            if acc >= fraction * total {
                return i + 1;
            }
        }
        len
    });
    Ok(PcaParamEstimates {
        sigma_r_hat,
        delta_hat,
        sigma_1_hat,
        r_selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_examples() {
        assert_eq!(
            SpectrumSpec::LowRank15.values(6, 2).unwrap(),
            vec![15.0, 15.0, 1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            SpectrumSpec::FullRank15.values(4, 1).unwrap(),
            vec![15.0, 1.0, 0.75, 0.5]
        );
        assert!(matches!(
            SpectrumSpec::Custom(vec![1.0, 2.0]).values(2, 1),
            Err(Error::InvalidSpectrum(_))
        ));
        assert!(matches!(
            SpectrumSpec::Custom(vec![1.0, -1.0]).values(2, 1),
            Err(Error::InvalidSpectrum(_))
        ));
    }

    #[test]
    fn identity_spectrum_gives_identity() {
        let m = generate_pca_model(5, 2, &SpectrumSpec::Custom(vec![1.0; 5]), 3).unwrap();
        assert!((m.phi_star() - DenseMatrix::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn model_is_reproducible() {
        let a = generate_pca_model(6, 2, &SpectrumSpec::LowRank15, 9).unwrap();
        let b = generate_pca_model(6, 2, &SpectrumSpec::LowRank15, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.support(), 3);
        assert_eq!(a.gap(), 14.0);
    }

    #[test]
    fn zero_model_gives_zero_shards() {
        let m = generate_pca_model(4, 1, &SpectrumSpec::Custom(vec![0.0; 4]), 1).unwrap();
        let s = sample_shards(&m, 6, 3, 2).unwrap();
        assert_eq!(s.num_nodes(), 3);
        for l in 0..3 {
            let d = s.shard(l);
            assert_eq!(d.shape(), (4, 2));
            assert_eq!(d.norm(), 0.0);
        }
    }

    #[test]
    fn shard_shapes_and_split() {
        let m = generate_pca_model(5, 1, &SpectrumSpec::LowRank15, 1).unwrap();
        let s = sample_shards(&m, 6, 3, 2).unwrap();
        assert_eq!(s.shard(0).shape(), (5, 2));
        assert!(matches!(
            sample_shards(&m, 7, 3, 2),
            Err(Error::IndivisibleSplit { .. })
        ));
    }

    #[test]
    fn empirical_covariance_converges() {
        let m = PcaModel {
            n: 2,
            r: 1,
            spectrum: vec![4.0, 1.0],
            u_star_full: DenseMatrix::identity(2, 2),
            seed: 0,
        };
        let s = sample_shards(&m, 100_000, 1, 5).unwrap();
        let cov = node_covariance(&s.shard(0)).unwrap();
        let truth = m.phi_star();
        assert!((cov[(0, 0)] - 4.0).abs() < 0.05 * 4.0);
        assert!((cov[(1, 1)] - 1.0).abs() < 0.05);
        assert!(cov[(0, 1)].abs() < 0.05);
        assert!((cov - truth).norm() < 0.2);
    }

    #[test]
    fn covariance_examples() {
        let d = DenseMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
        assert_eq!(node_covariance(&d).unwrap(), &d * d.transpose());
        // Orthogonal columns of norm sqrt(q_tilde) give the projection onto their span.
        let q = 2.0f64;
        let d = DenseMatrix::from_column_slice(3, 2, &[q.sqrt(), 0.0, 0.0, 0.0, q.sqrt(), 0.0]);
        let c = node_covariance(&d).unwrap();
        let mut expect = DenseMatrix::zeros(3, 3);
        expect[(0, 0)] = 1.0;
        expect[(1, 1)] = 1.0;
        assert!((c - expect).norm() < 1e-14);
    }

    #[test]
    fn factored_operator_matches_explicit_covariance() {
        let m = generate_pca_model(8, 2, &SpectrumSpec::LowRank15, 3).unwrap();
        let s = sample_shards(&m, 20, 2, 4).unwrap();
        let u = gaussian_matrix(8, 2, &mut rng_from(1, &[]));
        for (l, op) in s.operators().iter().enumerate() {
            let explicit = node_covariance(&s.shard(l)).unwrap();
            assert!((op.apply(&u) - &explicit * &u).norm() < 1e-10);
            assert!((s.covariance(l) - &explicit).norm() < 1e-10);
            let mut oracle = sorted_symmetric_eigen(&explicit).0;
            oracle.iter_mut().for_each(|v| *v = v.max(0.0));
            let ours = s.node_spectrum(l);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn diagonal_shard_estimates() {
        let q = 3;
        let mut d = DenseMatrix::zeros(3, q);
        for (i, v) in [4.0f64, 2.0, 1.0].iter().enumerate() {
            d[(i, i)] = (v * q as f64).sqrt();
        }
        let shards = PcaShards::from_shards(vec![d]).unwrap();
        let est = estimate_pca_params(&shards, 1, None).unwrap();
        assert!((est.sigma_1_hat - 4.0).abs() < 1e-12);
        let q = 4;
        let mut d = DenseMatrix::zeros(3, q);
        for (i, v) in [4.0f64, 2.0, 1.0].iter().enumerate() {
            d[(i, i)] = (v * q as f64).sqrt();
        }
        let shards = PcaShards::from_shards(vec![d]).unwrap();
        let est = estimate_pca_params(&shards, 2, None).unwrap();
        assert!((est.delta_hat - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_rule() {
        let est = params_from_spectra(&[vec![10.0, 10.0, 1e-3]], 2, Some(0.9)).unwrap();
        assert_eq!(est.r_selected, Some(2));
    }

    #[test]
    fn degenerate_gap() {
        assert!(matches!(
            params_from_spectra(&[vec![1.0, 1.0, 1.0]], 1, None),
            Err(Error::DegenerateGap(_))
        ));
    }

    #[test]
    fn rank_r_model_gap_concentrates() {
        let m = generate_pca_model(
            10,
            2,
            &SpectrumSpec::Custom(vec![15.0, 15.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            1,
        )
        .unwrap();
        let s = sample_shards(&m, 40_000, 2, 2).unwrap();
        let est = estimate_pca_params(&s, 2, None).unwrap();
        assert!((est.delta_hat - 15.0).abs() < 0.5, "{}", est.delta_hat);
    }
}
