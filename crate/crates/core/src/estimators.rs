//! Resilient federated subspace estimators and their non-resilient baselines.
//!
//! Every estimator consumes per-node operators `U -> Phi_l U` so that nodes
//! never have to form their `n x n` covariance, and a shared Gaussian start
//! `U_rand`.

use crate::error::{Error, Result};
use crate::fed::{
    run_round, Adversary, AdversaryView, CenterState, FederationConfig, Payload, RoundPayload,
};
use crate::gm::{thresholded_gm, weiszfeld_gm, GmConfig};
use crate::linalg::{
    orthonormalize, orthonormalize_or_random, power_iterate, projection, BasisMatrix, DenseMatrix,
};
use crate::rng::{rng_from, TAG_REPLACE};

/// A node's view of its local data as the symmetric PSD operator `U -> Phi_l U`.
pub trait NodeOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, u: &DenseMatrix) -> DenseMatrix;
}

/// An explicit symmetric matrix.
impl NodeOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, u: &DenseMatrix) -> DenseMatrix {
        self * u
    }
}

impl<T: NodeOperator + ?Sized> NodeOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, u: &DenseMatrix) -> DenseMatrix {
        (**self).apply(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub rank: usize,
    /// `T_pow`.
    pub power_iterations: usize,
    pub gm: GmConfig,
    /// Norm threshold of the resilient power method.
    pub omega: Option<f64>,
    /// Seed for random bases substituted for degenerate payloads.
    pub seed: u64,
}

impl EstimatorConfig {
    pub fn new(rank: usize, power_iterations: usize) -> Self {
        EstimatorConfig {
            rank,
            power_iterations,
            gm: GmConfig::default(),
            omega: None,
            seed: 0,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.rank == 0 || self.rank > n {
            return Err(Error::ConfigInvalid(format!(
                "rank {} outside 1..={n}",
                self.rank
            )));
        }
        if self.power_iterations == 0 {
            return Err(Error::ConfigInvalid("T_pow must be at least 1".into()));
        }
        Ok(())
    }

    fn omega(&self) -> Result<f64> {
        match self.omega {
            Some(w) if w > 0.0 => Ok(w),
            other => Err(Error::ConfigInvalid(format!(
                "resilient power method needs a positive omega, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    pub basis: BasisMatrix,
    /// `l_best`, the input whose projection is closest to the GM.
    pub best_node: Option<usize>,
    /// `||P_best - P_gm||_F`; zero when no GM over projections was taken.
    pub gm_residual: f64,
    /// Communication rounds used.
    pub rounds: usize,
    /// Payloads discarded by norm filtering, summed over rounds.
    pub filtered: usize,
}

fn check_operators<O: NodeOperator>(nodes: &[O], fed: Option<&FederationConfig>) -> Result<usize> {
    let n = nodes.first().ok_or(Error::EmptyInput)?.dim();
    if let Some(node) = nodes.iter().position(|o| o.dim() != n) {
        return Err(Error::dims(n, nodes[node].dim()).at_node(node));
    }
    if let Some(fed) = fed {
        fed.validate()?;
        if fed.num_nodes != nodes.len() {
            return Err(Error::dims(format!("{} nodes", fed.num_nodes), nodes.len()));
        }
    }
    Ok(n)
}

fn check_init(u_rand: &DenseMatrix, n: usize, r: usize) -> Result<()> {
    if u_rand.shape() != (n, r) {
        return Err(Error::dims(
            format!("{n}x{r} start"),
            format!("{:?}", u_rand.shape()),
        ));
    }
    Ok(())
}

/// Subspace Median: GM of the projection matrices, then the input closest to it.
///
/// Inputs that are not numerically full rank (typically Byzantine) are
/// replaced by a random orthonormal basis drawn from `cfg.seed`.
pub fn subspace_median(
    node_bases: &[DenseMatrix],
    gm: &GmConfig,
    seed: u64,
) -> Result<SubspaceEstimate> {
    let first = node_bases.first().ok_or(Error::EmptyInput)?;
    let (n, r) = first.shape();
    if r == 0 || r > n {
        return Err(Error::dims(format!("1..={n} columns"), r));
    }
    let mut bases = Vec::with_capacity(node_bases.len());
    for (node, b) in node_bases.iter().enumerate() {
        if b.shape() != (n, r) {
            return Err(Error::dims(format!("{n}x{r}"), format!("{:?}", b.shape())).at_node(node));
        }
        let mut rng = rng_from(seed, &[TAG_REPLACE, node as u64]);
        bases.push(orthonormalize_or_random(b, &mut rng));
    }
    let projections: Vec<DenseMatrix> = bases.iter().map(|u| projection(u).into_matrix()).collect();
    let points: Vec<&[f64]> = projections.iter().map(|p| p.as_slice()).collect();
    let gm_res = weiszfeld_gm(&points, gm)?;

    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (node, p) in points.iter().enumerate() {
        let d = p
            .iter()
            .zip(&gm_res.point)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if d < best_dist {
            best = node;
            best_dist = d;
        }
    }
    Ok(SubspaceEstimate {
        basis: bases.swap_remove(best),
        best_node: Some(best),
        gm_residual: best_dist,
        rounds: 1,
        filtered: 0,
    })
}

/// Each node's own `T_pow`-step power method from `u_rand`.
pub fn local_power_bases<O: NodeOperator>(
    nodes: &[O],
    cfg: &EstimatorConfig,
    u_rand: &DenseMatrix,
) -> Result<Vec<BasisMatrix>> {
    let n = check_operators(nodes, None)?;
    cfg.validate(n)?;
    check_init(u_rand, n, cfg.rank)?;
    let run = |node: usize| {
        power_iterate(
            u_rand.clone(),
            |u| nodes[node].apply(u),
            cfg.power_iterations,
            None,
        )
        .map_err(|e| e.at_node(node))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..nodes.len()).into_par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..nodes.len()).map(run).collect()
    }
}

/// Subspace Median over a federation: every good node uploads its local
/// estimate once (`local_bases[l]`, see [`local_power_bases`]); Byzantine
/// nodes upload whatever the adversary picks at the basis scale `omega = sqrt(r)`.
pub fn subspace_median_federated(
    local_bases: &[BasisMatrix],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    cfg: &EstimatorConfig,
) -> Result<SubspaceEstimate> {
    fed.validate()?;
    if local_bases.len() != fed.num_nodes {
        return Err(Error::dims(
            format!("{} nodes", fed.num_nodes),
            local_bases.len(),
        ));
    }
    let state = CenterState {
        round: 0,
        omega: Some((cfg.rank as f64).sqrt()),
    };
    let transcript = run_round(
        fed,
        &fed.byzantine_ids,
        state,
        |node| Ok(Payload::Matrix(local_bases[node].as_matrix().clone())),
        adversary,
    )?;
    let bases = matrices(transcript)?;
    subspace_median(&bases, &cfg.gm, cfg.seed)
}

pub(crate) fn matrices(transcript: Vec<RoundPayload>) -> Result<Vec<DenseMatrix>> {
    transcript
        .into_iter()
        .map(|p| {
            let node = p.node_id;
            p.content.into_matrix().ok_or_else(|| {
                Error::ConfigInvalid("expected a matrix payload".into()).at_node(node)
            })
        })
        .collect()
}

/// Resilient power method: each round the center takes the norm-thresholded GM
/// of the nodes' `Phi_l U` and orthonormalizes it. Honest payloads satisfy
/// `||Phi_l U||_F <= sigma_1(Phi_l) sqrt(r)`, hence the default
/// `omega = 1.1 sigma_1 sqrt(r)`.
pub fn res_pow_meth<O: NodeOperator>(
    nodes: &[O],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    cfg: &EstimatorConfig,
    u_rand: &DenseMatrix,
) -> Result<SubspaceEstimate> {
    let n = check_operators(nodes, Some(fed))?;
    cfg.validate(n)?;
    check_init(u_rand, n, cfg.rank)?;
    let omega = cfg.omega()?;
    // Start from an orthonormal basis of span(U_rand): with the raw Gaussian
    // matrix the honest first-round payloads scale like sqrt(n) and would
    // all exceed a threshold sized for orthonormal iterates.
    let mut u = orthonormalize(u_rand)?.into_matrix();
    let mut filtered = 0;
    for round in 0..cfg.power_iterations {
        let state = CenterState {
            round,
            omega: Some(omega),
        };
        let transcript = run_round(
            fed,
            &fed.byzantine_ids,
            state,
            |node| Ok(Payload::Matrix(nodes[node].apply(&u))),
            adversary,
        )?;
        let payloads = matrices(transcript)?;
        let points: Vec<&[f64]> = payloads.iter().map(|p| p.as_slice()).collect();
        let gm = thresholded_gm(&points, omega, &cfg.gm)?;
        filtered += gm.filtered_count;
        u = orthonormalize(&DenseMatrix::from_vec(n, cfg.rank, gm.point))?.into_matrix();
    }
    Ok(SubspaceEstimate {
        basis: BasisMatrix::from_orthonormal(u, 1e-8)?,
        best_node: None,
        gm_residual: 0.0,
        rounds: cfg.power_iterations,
        filtered,
    })
}

/// Restricts the adversary's view to the honest nodes of its own minibatch.
pub(crate) struct BatchLocal<'a> {
    pub(crate) inner: &'a mut dyn Adversary,
    pub(crate) fed: &'a FederationConfig,
}

impl Adversary for BatchLocal<'_> {
    fn payload(&mut self, view: &AdversaryView<'_>, node: usize) -> Result<Payload> {
        let local = view.restricted(self.fed.batch_members(self.fed.batch_of(node)));
        if local.honest.is_empty() {
            // A minibatch with no good node gives the attack nothing to react to.
            return self.inner.payload(view, node);
        }
        self.inner.payload(&local, node)
    }

    fn is_active(&self) -> bool {
        self.inner.is_active()
    }
}

/// Subspace median-of-means: `L_tilde` federated power methods, one per
/// minibatch and all started from `u_rand`, followed by Subspace Median over
/// their outputs.
pub fn subspace_mom<O: NodeOperator>(
    nodes: &[O],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    cfg: &EstimatorConfig,
    u_rand: &DenseMatrix,
) -> Result<SubspaceEstimate> {
    let n = check_operators(nodes, Some(fed))?;
    cfg.validate(n)?;
    check_init(u_rand, n, cfg.rank)?;
    let batches = fed.minibatches;
    let mut current = vec![u_rand.clone(); batches];
    let mut adversary = BatchLocal {
        inner: adversary,
        fed,
    };
    for round in 0..cfg.power_iterations {
        let state = CenterState { round, omega: None };
        let transcript = run_round(
            fed,
            &fed.byzantine_ids,
            state,
            |node| {
                Ok(Payload::Matrix(
                    nodes[node].apply(&current[fed.batch_of(node)]),
                ))
            },
            &mut adversary,
        )?;
        let payloads = matrices(transcript)?;
        for (batch, u) in current.iter_mut().enumerate() {
            let members = fed.batch_members(batch);
            let mut sum = payloads[members.start].clone();
            for p in &payloads[members.start + 1..members.end] {
                sum += p;
            }
            let mut rng = rng_from(
                cfg.seed,
                &[TAG_REPLACE, 0x4d6f4d, round as u64, batch as u64],
            );
            *u = orthonormalize_or_random(&sum, &mut rng).into_matrix();
        }
    }
    let mut est = subspace_median(&current, &cfg.gm, cfg.seed)?;
    est.rounds = cfg.power_iterations + 1;
    Ok(est)
}

/// Plain federated power method `U <- QR(sum_l Phi_l U)`; no resilience.
pub fn federated_power_method<O: NodeOperator>(
    nodes: &[O],
    cfg: &EstimatorConfig,
    u_rand: &DenseMatrix,
) -> Result<SubspaceEstimate> {
    let n = check_operators(nodes, None)?;
    cfg.validate(n)?;
    check_init(u_rand, n, cfg.rank)?;
    let fed = FederationConfig::honest_only(nodes.len(), cfg.seed);
    let mut u = u_rand.clone();
    for round in 0..cfg.power_iterations {
        let transcript = run_round(
            &fed,
            &fed.byzantine_ids,
            CenterState { round, omega: None },
            |node| Ok(Payload::Matrix(nodes[node].apply(&u))),
            &mut crate::fed::NoAdversary,
        )?;
        let payloads = matrices(transcript)?;
        let sum = payloads
            .iter()
            .skip(1)
            .fold(payloads[0].clone(), |acc, p| acc + p);
        u = orthonormalize(&sum)?.into_matrix();
    }
    Ok(SubspaceEstimate {
        basis: BasisMatrix::from_orthonormal(u, 1e-8)?,
        best_node: None,
        gm_residual: 0.0,
        rounds: cfg.power_iterations,
        filtered: 0,
    })
}

/// GM of the vectorized node matrices, symmetrized, followed by a rank-`r`
/// power method from `u_rand`.
pub fn svd_res_cov_est(
    node_matrices: &[DenseMatrix],
    cfg: &EstimatorConfig,
    u_rand: &DenseMatrix,
) -> Result<SubspaceEstimate> {
    let first = node_matrices.first().ok_or(Error::EmptyInput)?;
    let n = first.nrows();
    for (node, m) in node_matrices.iter().enumerate() {
        if m.shape() != (n, n) {
            return Err(Error::dims(format!("{n}x{n}"), format!("{:?}", m.shape())).at_node(node));
        }
    }
    cfg.validate(n)?;
    check_init(u_rand, n, cfg.rank)?;
    let points: Vec<&[f64]> = node_matrices.iter().map(|m| m.as_slice()).collect();
    let gm = weiszfeld_gm(&points, &cfg.gm)?;
    let g = DenseMatrix::from_vec(n, n, gm.point);
    let sym = (&g + g.transpose()) * 0.5;
    let basis = power_iterate(u_rand.clone(), |u| &sym * u, cfg.power_iterations, None)?;
    Ok(SubspaceEstimate {
        basis,
        best_node: None,
        gm_residual: 0.0,
        rounds: 1,
        filtered: 0,
    })
}

/// [`svd_res_cov_est`] where the nodes upload their covariances through a
/// federation round, so Byzantine nodes can substitute them.
pub fn svd_res_cov_est_federated(
    node_matrices: &[DenseMatrix],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    cfg: &EstimatorConfig,
    u_rand: &DenseMatrix,
) -> Result<SubspaceEstimate> {
    fed.validate()?;
    if node_matrices.len() != fed.num_nodes {
        return Err(Error::dims(
            format!("{} nodes", fed.num_nodes),
            node_matrices.len(),
        ));
    }
    let transcript = run_round(
        fed,
        &fed.byzantine_ids,
        CenterState {
            round: 0,
            omega: None,
        },
        |node| Ok(Payload::Matrix(node_matrices[node].clone())),
        adversary,
    )?;
    svd_res_cov_est(&matrices(transcript)?, cfg, u_rand)
}
