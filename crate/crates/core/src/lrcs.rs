//! Horizontally federated low-rank column-wise sensing.
//!
//! The unknown `X* = U* B*` (n x q, rank r) is observed column by column
//! through `y_k = A_k x*_k`. Every node holds the same `m_tilde` rows of
//! every `(A_k, y_k)`. Recovery is a resilient spectral initialization
//! followed by Byzantine-resilient AltGDmin: per-node least squares for `B`,
//! then a projected gradient step on `U` driven by a thresholded GM of
//! (minibatch sums of) node gradients.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    local_power_bases, matrices, subspace_median, subspace_median_federated, BatchLocal,
    EstimatorConfig, NodeOperator, SubspaceEstimate,
};
use crate::fed::{
    byzantine_set_schedule, run_round, Adversary, CenterState, FederationConfig, NoAdversary,
    Payload, ScheduleMode,
};
use crate::gm::{scalar_median, thresholded_gm, GmConfig};
use crate::linalg::{
    orthonormalize, orthonormalize_or_random, sd_f, topr_left_singular, BasisMatrix, DenseMatrix,
    PowerMethodConfig,
};
use crate::rng::{
    derive_seed, gaussian_matrix, rng_from, TAG_DATA, TAG_INIT, TAG_MODEL, TAG_REPLACE,
};

/// Smallest singular value of `(A_k)_l U` accepted by the least-squares step.
pub const LS_CONDITION_FLOOR: f64 = 1e-10;

/// Ground truth `X* = U* B*`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrcsTruth {
    pub u_star: BasisMatrix,
    /// `r x q`; column `k` is `b*_k`.
    pub b_star: DenseMatrix,
    pub x_star: DenseMatrix,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub kappa: f64,
    /// Smallest `mu` with `max_k ||b*_k|| <= mu sqrt(r/q) sigma_max`.
    pub mu: f64,
}

impl LrcsTruth {
    pub fn from_factors(u_star: BasisMatrix, b_star: DenseMatrix) -> Result<Self> {
        let r = u_star.rank();
        if b_star.nrows() != r || b_star.ncols() < r {
            return Err(Error::dims(
                format!("{r} x (>= {r})"),
                format!("{:?}", b_star.shape()),
            ));
        }
        let q = b_star.ncols();
        let sv = b_star.singular_values();
        let sigma_max = sv.max();
        let sigma_min = sv.min();
        if sigma_min <= 0.0 {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        let max_col = b_star.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mu = max_col / ((r as f64 / q as f64).sqrt() * sigma_max);
        let x_star = u_star.as_matrix() * &b_star;
        Ok(LrcsTruth {
            u_star,
            b_star,
            x_star,
            sigma_max,
            sigma_min,
            kappa: sigma_max / sigma_min,
            mu,
        })
    }

    pub fn n(&self) -> usize {
        self.u_star.ambient_dim()
    }

    pub fn q(&self) -> usize {
        self.b_star.ncols()
    }

    pub fn r(&self) -> usize {
        self.u_star.rank()
    }
}

/// `U*` from an orthonormalized Gaussian matrix, `b*_k ~ N(0, I_r)`.
pub fn generate_lrcs_truth(n: usize, q: usize, r: usize, seed: u64) -> Result<LrcsTruth> {
    if r == 0 || r > n.min(q) {
        return Err(Error::ConfigInvalid(format!(
            "rank {r} outside 1..=min({n}, {q})"
        )));
    }
    let mut rng = rng_from(seed, &[TAG_MODEL]);
    let u = orthonormalize(&gaussian_matrix(n, r, &mut rng))?;
    let b = gaussian_matrix(r, q, &mut rng);
    LrcsTruth::from_factors(u, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrcsInstance {
    pub truth: LrcsTruth,
    pub m: usize,
    pub num_nodes: usize,
    /// `A_k^T` (n x m) for each column `k`; measurement row `i` is column `i`.
    at: Vec<DenseMatrix>,
    /// `m x q`, column `k` is `y_k`.
    y: DenseMatrix,
}

impl LrcsInstance {
    /// `at[k]` is `A_k^T`. Rows are dealt to the nodes in consecutive blocks.
    pub fn from_measurements(
        truth: LrcsTruth,
        at: Vec<DenseMatrix>,
        num_nodes: usize,
    ) -> Result<Self> {
        let (n, q) = (truth.n(), truth.q());
        if at.len() != q {
            return Err(Error::dims(format!("{q} sensing matrices"), at.len()));
        }
        let m = at[0].ncols();
        if m == 0 {
            return Err(Error::EmptyInput);
        }
        if num_nodes == 0 || !m.is_multiple_of(num_nodes) {
            return Err(Error::IndivisibleSplit {
                total: m,
                parts: num_nodes,
            });
        }
        let mut y = DenseMatrix::zeros(m, q);
        for (k, a) in at.iter().enumerate() {
            if a.shape() != (n, m) {
                return Err(Error::dims(format!("{n}x{m}"), format!("{:?}", a.shape())));
            }
            y.set_column(k, &a.tr_mul(&truth.x_star.column(k)));
        }
        Ok(LrcsInstance {
            truth,
            m,
            num_nodes,
            at,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.truth.n()
    }

    pub fn q(&self) -> usize {
        self.truth.q()
    }

    pub fn r(&self) -> usize {
        self.truth.r()
    }

    pub fn m_tilde(&self) -> usize {
        self.m / self.num_nodes
    }

    /// `A_k^T`, n x m.
    pub fn sensing_transposed(&self, k: usize) -> &DenseMatrix {
        &self.at[k]
    }

    pub fn measurements(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn node_rows(&self, node: usize) -> Range<usize> {
        let mt = self.m_tilde();
        node * mt..(node + 1) * mt
    }

    pub fn node_layout(&self) -> Vec<Range<usize>> {
        (0..self.num_nodes).map(|l| self.node_rows(l)).collect()
    }

    fn check_rows(&self, rows: &Range<usize>) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        if rows.end > self.m {
            return Err(Error::OutOfRange(format!("rows {rows:?} of {}", self.m)));
        }
        Ok(())
    }
}

/// Fresh Gaussian `A_k` for a fixed truth.
pub fn sample_lrcs_measurements(
    truth: &LrcsTruth,
    m: usize,
    num_nodes: usize,
    seed: u64,
) -> Result<LrcsInstance> {
    if num_nodes == 0 || !m.is_multiple_of(num_nodes) {
        return Err(Error::IndivisibleSplit {
            total: m,
            parts: num_nodes,
        });
    }
    let mut rng = rng_from(seed, &[TAG_DATA]);
    let at = (0..truth.q())
        .map(|_| gaussian_matrix(truth.n(), m, &mut rng))
        .collect();
    LrcsInstance::from_measurements(truth.clone(), at, num_nodes)
}

pub fn generate_lrcs_instance(
    n: usize,
    q: usize,
    r: usize,
    m: usize,
    num_nodes: usize,
    seed: u64,
) -> Result<LrcsInstance> {
    if num_nodes == 0 || !m.is_multiple_of(num_nodes) {
        return Err(Error::IndivisibleSplit {
            total: m,
            parts: num_nodes,
        });
    }
    let truth = generate_lrcs_truth(n, q, r, seed)?;
    sample_lrcs_measurements(&truth, m, num_nodes, seed)
}

/// Part `part` of `parts` consecutive equal blocks of every node's rows.
/// Leftover rows at the end of a node's range are never used.
pub fn split_rows(layout: &[Range<usize>], part: usize, parts: usize) -> Result<Vec<Range<usize>>> {
    if part >= parts {
        return Err(Error::OutOfRange(format!("block {part} of {parts}")));
    }
    layout
        .iter()
        .map(|rows| {
            let size = rows.len() / parts;
            if size == 0 {
                return Err(Error::ConfigInvalid(format!(
                    "{} rows per node cannot feed {parts} disjoint blocks",
                    rows.len()
                )));
            }
            let start = rows.start + part * size;
            Ok(start..start + size)
        })
        .collect()
}

/// `y` with every entry whose square exceeds `alpha` set to zero.
pub fn truncate_measurements(y: &[f64], alpha: f64) -> Vec<f64> {
    y.iter()
        .map(|&v| if v * v > alpha { 0.0 } else { v })
        .collect()
}

/// `c_tilde * sum_k ||(y_k)_rows||^2 / (|rows| q)`.
pub fn node_alpha(inst: &LrcsInstance, rows: &Range<usize>, c_tilde: f64) -> Result<f64> {
    inst.check_rows(rows)?;
    let block = inst.y.rows_range(rows.clone());
    Ok(c_tilde * block.norm_squared() / (rows.len() * inst.q()) as f64)
}

/// Column `k` is `(A_k)_rows^T trunc((y_k)_rows, alpha)`.
pub fn init_matrix_node(
    inst: &LrcsInstance,
    rows: &Range<usize>,
    alpha: f64,
) -> Result<DenseMatrix> {
    inst.check_rows(rows)?;
    let mut x = DenseMatrix::zeros(inst.n(), inst.q());
    for k in 0..inst.q() {
        let y: Vec<f64> = inst
            .y
            .view((rows.start, k), (rows.len(), 1))
            .iter()
            .copied()
            .collect();
        let yt = nalgebra::DVector::from_vec(truncate_measurements(&y, alpha));
        x.set_column(k, &(inst.at[k].columns_range(rows.clone()) * yt));
    }
    Ok(x)
}

/// `U -> X (X^T U)` for a node's `n x q` backprojection `X`.
#[derive(Debug, Clone)]
pub struct BackprojectionOperator(pub DenseMatrix);

impl NodeOperator for BackprojectionOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, u: &DenseMatrix) -> DenseMatrix {
        &self.0 * self.0.tr_mul(u)
    }
}

/// Where `kappa` and `sigma_max` come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource {
    /// From the nodes' untruncated backprojections.
    #[default]
    Estimated,
    /// From the ground truth.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrcsParams {
    pub sigma_max: f64,
    pub kappa: f64,
    pub mu: f64,
}

impl LrcsParams {
    pub fn oracle(truth: &LrcsTruth) -> Self {
        LrcsParams {
            sigma_max: truth.sigma_max,
            kappa: truth.kappa,
            mu: truth.mu,
        }
    }

    /// `9 kappa^2 mu^2`.
    pub fn c_tilde(&self) -> f64 {
        9.0 * self.kappa * self.kappa * self.mu * self.mu
    }

    /// `delta_0 = 0.1 / kappa^2`.
    pub fn delta0(&self) -> f64 {
        0.1 / (self.kappa * self.kappa)
    }

    /// `0.5 / sigma_max^2`.
    pub fn step_size(&self) -> f64 {
        0.5 / (self.sigma_max * self.sigma_max)
    }

    /// `14 rho m_tilde sqrt(r) delta_0 sigma_max^2` for a GM over sums of
    /// `rho` node gradients, each built from `m_tilde` rows.
    pub fn gradient_threshold(&self, rho: usize, m_tilde: usize, r: usize) -> f64 {
        14.0 * (rho * m_tilde) as f64
            * (r as f64).sqrt()
            * self.delta0()
            * self.sigma_max
            * self.sigma_max
    }
}

/// Per-node `sigma_1` and `kappa` of `X_l / |rows|` (untruncated), then the
/// max over nodes. `mu` is taken as given.
pub fn estimate_lrcs_params(
    inst: &LrcsInstance,
    layout: &[Range<usize>],
    mu: f64,
    seed: u64,
) -> Result<LrcsParams> {
    let r = inst.r();
    let per_node = |node: usize| -> Result<(f64, f64)> {
        let rows = &layout[node];
        let x = init_matrix_node(inst, rows, f64::INFINITY)? / rows.len() as f64;
        let cfg = PowerMethodConfig::new(r, 20, derive_seed(seed, &[node as u64]));
        let u = topr_left_singular(&x, &cfg).map_err(|e| e.at_node(node))?;
        let s: Vec<f64> = u
            .as_matrix()
            .column_iter()
            .map(|c| x.tr_mul(&c).norm())
            .collect();
        let hi = s.iter().cloned().fold(0.0, f64::max);
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        if lo <= 0.0 {
            return Err(Error::RankDeficient { ratio: 0.0 }.at_node(node));
        }
        Ok((hi, hi / lo))
    };
    let res: Vec<(f64, f64)> = par_map(layout.len(), per_node)?;
    Ok(LrcsParams {
        sigma_max: res.iter().map(|p| p.0).fold(0.0, f64::max),
        kappa: res.iter().map(|p| p.1).fold(1.0, f64::max),
        mu,
    })
}

fn par_map<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// Per-node spectral estimates combined by Subspace Median.
    Median,
    /// Minibatch federated power methods combined by Subspace Median.
    #[default]
    Mom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Truncation constant; `9 kappa^2 mu^2` from the parameter source when unset.
    pub c_tilde: Option<f64>,
    pub power_iterations: usize,
    pub gm: GmConfig,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            c_tilde: None,
            power_iterations: 10,
            gm: GmConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitOutcome {
    pub estimate: SubspaceEstimate,
    pub alpha: f64,
}

fn check_fed(inst: &LrcsInstance, layout: &[Range<usize>], fed: &FederationConfig) -> Result<()> {
    fed.validate()?;
    if fed.num_nodes != layout.len() {
        return Err(Error::dims(
            format!("{} nodes", fed.num_nodes),
            layout.len(),
        ));
    }
    for rows in layout {
        inst.check_rows(rows)?;
    }
    Ok(())
}

/// Median of the nodes' `alpha_l`, or of minibatch means of them.
fn alpha_round(
    inst: &LrcsInstance,
    layout: &[Range<usize>],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    c_tilde: f64,
    batch_means: bool,
) -> Result<f64> {
    let transcript = run_round(
        fed,
        &fed.byzantine_ids,
        CenterState {
            round: 0,
            omega: None,
        },
        |node| node_alpha(inst, &layout[node], c_tilde).map(Payload::Scalar),
        adversary,
    )?;
    let values: Vec<f64> = transcript
        .iter()
        .map(|p| {
            p.content.as_scalar().ok_or_else(|| {
                Error::ConfigInvalid("expected a scalar payload".into()).at_node(p.node_id)
            })
        })
        .collect::<Result<_>>()?;
    if !batch_means {
        return scalar_median(&values);
    }
    let means: Vec<f64> = (0..fed.minibatches)
        .map(|b| {
            let members = fed.batch_members(b);
            let len = members.len() as f64;
            values[members].iter().sum::<f64>() / len
        })
        .collect();
    scalar_median(&means)
}

fn backprojections(
    inst: &LrcsInstance,
    layout: &[Range<usize>],
    alpha: f64,
) -> Result<Vec<DenseMatrix>> {
    par_map(layout.len(), |node| {
        init_matrix_node(inst, &layout[node], alpha).map_err(|e| e.at_node(node))
    })
}

fn initial_basis(inst: &LrcsInstance, seed: u64) -> DenseMatrix {
    gaussian_matrix(inst.n(), inst.r(), &mut rng_from(seed, &[TAG_INIT]))
}

/// Resilient spectral initialization by Subspace Median: median of the
/// `alpha_l`, each node's top-`r` left singular vectors of its truncated
/// backprojection, Subspace Median over the node bases.
pub fn spectral_init_median(
    inst: &LrcsInstance,
    layout: &[Range<usize>],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    cfg: &InitConfig,
    c_tilde: f64,
) -> Result<InitOutcome> {
    check_fed(inst, layout, fed)?;
    let alpha = alpha_round(inst, layout, fed, adversary, c_tilde, false)?;
    let ops: Vec<BackprojectionOperator> = backprojections(inst, layout, alpha)?
        .into_iter()
        .map(BackprojectionOperator)
        .collect();
    let est_cfg = EstimatorConfig {
        rank: inst.r(),
        power_iterations: cfg.power_iterations,
        gm: cfg.gm,
        omega: None,
        seed: cfg.seed,
    };
    let bases = local_power_bases(&ops, &est_cfg, &initial_basis(inst, cfg.seed))?;
    let mut estimate = subspace_median_federated(&bases, fed, adversary, &est_cfg)?;
    estimate.rounds += 1;
    Ok(InitOutcome { estimate, alpha })
}

/// Resilient spectral initialization by Subspace median-of-means: per
/// minibatch a two-exchange federated power method on the pooled backprojection
/// `sum_l X_l`, then Subspace Median over the `L_tilde` outputs. The adversary
/// sees only the good nodes of its own minibatch.
pub fn spectral_init_mom(
    inst: &LrcsInstance,
    layout: &[Range<usize>],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    cfg: &InitConfig,
    c_tilde: f64,
) -> Result<InitOutcome> {
    check_fed(inst, layout, fed)?;
    if cfg.power_iterations == 0 {
        return Err(Error::ConfigInvalid("T_pow must be at least 1".into()));
    }
    let alpha = alpha_round(inst, layout, fed, adversary, c_tilde, true)?;
    let xs = backprojections(inst, layout, alpha)?;
    let batches = fed.minibatches;
    let mut current = vec![initial_basis(inst, cfg.seed); batches];
    let mut local = BatchLocal {
        inner: adversary,
        fed,
    };
    let batch_sum = |payloads: &[DenseMatrix], b: usize| {
        let members = fed.batch_members(b);
        payloads[members.start + 1..members.end]
            .iter()
            .fold(payloads[members.start].clone(), |acc, p| acc + p)
    };
    for round in 0..cfg.power_iterations {
        let v = matrices(run_round(
            fed,
            &fed.byzantine_ids,
            CenterState {
                round: 2 * round,
                omega: None,
            },
            |node| {
                Ok(Payload::Matrix(
                    xs[node].tr_mul(&current[fed.batch_of(node)]),
                ))
            },
            &mut local,
        )?)?;
        let v_batch: Vec<DenseMatrix> = (0..batches).map(|b| batch_sum(&v, b)).collect();
        let u = matrices(run_round(
            fed,
            &fed.byzantine_ids,
            CenterState {
                round: 2 * round + 1,
                omega: None,
            },
            |node| Ok(Payload::Matrix(&xs[node] * &v_batch[fed.batch_of(node)])),
            &mut local,
        )?)?;
        for (b, cur) in current.iter_mut().enumerate() {
            let mut rng = rng_from(cfg.seed, &[TAG_REPLACE, 0x4c52, round as u64, b as u64]);
            *cur = orthonormalize_or_random(&batch_sum(&u, b), &mut rng).into_matrix();
        }
    }
    let mut estimate = subspace_median(&current, &cfg.gm, cfg.seed)?;
    estimate.rounds = 2 * cfg.power_iterations + 2;
    Ok(InitOutcome { estimate, alpha })
}

/// `b_k = ((A_k)_rows U)^+ (y_k)_rows` for every `k`; returns `(B, U B)`.
pub fn ls_step(
    u: &DenseMatrix,
    inst: &LrcsInstance,
    rows: &Range<usize>,
) -> Result<(DenseMatrix, DenseMatrix)> {
    inst.check_rows(rows)?;
    let mut b = DenseMatrix::zeros(u.ncols(), inst.q());
    for k in 0..inst.q() {
        let (bk, _) = ls_column(u, inst, rows, k)?;
        b.set_column(k, &bk);
    }
    let x = u * &b;
    Ok((b, x))
}

/// Least squares for column `k` by QR of `M = (A_k)_rows U`; also returns `M`.
fn ls_column(
    u: &DenseMatrix,
    inst: &LrcsInstance,
    rows: &Range<usize>,
    k: usize,
) -> Result<(nalgebra::DVector<f64>, DenseMatrix)> {
    let r = u.ncols();
    if rows.len() < r {
        return Err(Error::IllConditioned { sigma_min: 0.0 });
    }
    let m = inst.at[k].columns_range(rows.clone()).tr_mul(u);
    let y = inst.y.view((rows.start, k), (rows.len(), 1));
    let qr = m.clone().qr();
    let rr = qr.r();
    let sigma_min = rr.singular_values().min();
    if sigma_min < LS_CONDITION_FLOOR {
        return Err(Error::IllConditioned { sigma_min });
    }
    let rhs = qr.q().tr_mul(&y);
    let b = rr
        .solve_upper_triangular(&rhs)
        .ok_or(Error::IllConditioned { sigma_min })?;
    Ok((b.column(0).into_owned(), m))
}

/// `sum_k (A_k)^T ((A_k) U b_k - y_k) b_k^T` over the node's rows.
pub fn node_gradient(
    u: &DenseMatrix,
    b: &DenseMatrix,
    inst: &LrcsInstance,
    rows: &Range<usize>,
) -> Result<DenseMatrix> {
    inst.check_rows(rows)?;
    if b.shape() != (u.ncols(), inst.q()) {
        return Err(Error::dims(
            format!("{}x{}", u.ncols(), inst.q()),
            format!("{:?}", b.shape()),
        ));
    }
    let mut grad = DenseMatrix::zeros(inst.n(), u.ncols());
    for k in 0..inst.q() {
        let a = inst.at[k].columns_range(rows.clone());
        let bk = b.column(k);
        let resid = a.tr_mul(u) * bk - inst.y.view((rows.start, k), (rows.len(), 1));
        grad.ger(1.0, &(a * resid), &bk, 1.0);
    }
    Ok(grad)
}

/// `1/2 sum_k ||(y_k)_rows - (A_k)_rows U b_k||^2`, whose derivative in `U`
/// is [`node_gradient`].
pub fn node_objective(
    u: &DenseMatrix,
    b: &DenseMatrix,
    inst: &LrcsInstance,
    rows: &Range<usize>,
) -> Result<f64> {
    inst.check_rows(rows)?;
    let mut f = 0.0;
    for k in 0..inst.q() {
        let a = inst.at[k].columns_range(rows.clone());
        let resid = a.tr_mul(u) * b.column(k) - inst.y.view((rows.start, k), (rows.len(), 1));
        f += resid.norm_squared();
    }
    Ok(0.5 * f)
}

/// Least squares and gradient in one pass over the node's data.
fn node_update(
    u: &DenseMatrix,
    inst: &LrcsInstance,
    rows: &Range<usize>,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut b = DenseMatrix::zeros(u.ncols(), inst.q());
    let mut grad = DenseMatrix::zeros(inst.n(), u.ncols());
    for k in 0..inst.q() {
        let (bk, m) = ls_column(u, inst, rows, k)?;
        let resid = m * &bk - inst.y.view((rows.start, k), (rows.len(), 1));
        grad.ger(
            1.0,
            &(inst.at[k].columns_range(rows.clone()) * resid),
            &bk,
            1.0,
        );
        b.set_column(k, &bk);
    }
    Ok((b, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    /// Step size; `0.5 / sigma_max^2` from the parameter source when unset.
    pub eta: Option<f64>,
    /// `T`.
    pub iterations: usize,
    /// Gradient norm threshold; the parameter-source default when unset.
    pub omega: Option<f64>,
    pub gm: GmConfig,
    /// Fresh disjoint rows for the initialization and every iteration.
    pub sample_splitting: bool,
    /// Stop once `SD_F / sqrt(r)` drops below this.
    pub exit_error: Option<f64>,
    pub schedule: ScheduleMode,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            eta: None,
            iterations: 100,
            omega: None,
            gm: GmConfig::default(),
            sample_splitting: false,
            exit_error: None,
            schedule: ScheduleMode::Fixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltGdMinState {
    pub u: BasisMatrix,
    /// Per-node `B_l` from the last least-squares step.
    pub node_b: Vec<DenseMatrix>,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdStep {
    pub eta: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdRoundInfo {
    pub filtered: usize,
}

/// One Byz-AltGDmin iteration: node least squares and gradients, minibatch
/// sums, thresholded GM at `omega`, `U+ = QR(U - eta / (rho m_tilde) grad_gm)`.
#[allow(clippy::too_many_arguments)]
pub fn gd_round(
    state: &AltGdMinState,
    inst: &LrcsInstance,
    layout: &[Range<usize>],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    step: GdStep,
    gm: &GmConfig,
    schedule: ScheduleMode,
) -> Result<(AltGdMinState, GdRoundInfo)> {
    check_fed(inst, layout, fed)?;
    let u = state.u.as_matrix();
    let updates = par_map(layout.len(), |node| {
        node_update(u, inst, &layout[node]).map_err(|e| e.at_node(node))
    })?;
    let byzantine = byzantine_set_schedule(fed, schedule, state.iteration);
    let transcript = run_round(
        fed,
        &byzantine,
        CenterState {
            round: state.iteration,
            omega: Some(step.omega),
        },
        |node| Ok(Payload::Matrix(updates[node].1.clone())),
        adversary,
    )?;
    let grads = matrices(transcript)?;
    let sums: Vec<DenseMatrix> = (0..fed.minibatches)
        .map(|b| {
            let members = fed.batch_members(b);
            grads[members.start + 1..members.end]
                .iter()
                .fold(grads[members.start].clone(), |acc, g| acc + g)
        })
        .collect();
    let points: Vec<&[f64]> = sums.iter().map(|g| g.as_slice()).collect();
    let res = thresholded_gm(&points, step.omega, gm)?;
    let rho = fed.batch_size();
    let scale = step.eta / (rho * layout[0].len()) as f64;
    let g = DenseMatrix::from_vec(inst.n(), inst.r(), res.point);
    let next = orthonormalize(&(u - g * scale))?;
    Ok((
        AltGdMinState {
            u: next,
            node_b: updates.into_iter().map(|(b, _)| b).collect(),
            iteration: state.iteration + 1,
        },
        GdRoundInfo {
            filtered: res.filtered_count,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrcsConfig {
    pub init_method: InitMethod,
    pub init: InitConfig,
    pub gd: GdConfig,
    pub params: ParamSource,
    /// `mu` used when parameters are estimated.
    pub mu: f64,
}

impl Default for LrcsConfig {
    fn default() -> Self {
        LrcsConfig {
            init_method: InitMethod::Mom,
            init: InitConfig::default(),
            gd: GdConfig::default(),
            params: ParamSource::Estimated,
            mu: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrcsOutcome {
    pub state: AltGdMinState,
    /// `SD_F(U*, U_t)`; entry 0 is the initialization.
    pub sd_trace: Vec<f64>,
    /// `max_k ||x_k - x*_k|| / ||x*_k||`, same indexing as `sd_trace`, with
    /// `x_k` from least squares on all rows at `U_t`.
    pub column_error_trace: Vec<f64>,
    pub params: LrcsParams,
    pub alpha: f64,
    pub step: GdStep,
    pub filtered: usize,
}

impl LrcsOutcome {
    /// `Error = SD_F / sqrt(r)` per iteration.
    pub fn error_trace(&self) -> Vec<f64> {
        let s = (self.state.u.rank() as f64).sqrt();
        self.sd_trace.iter().map(|d| d / s).collect()
    }

    pub fn init_error(&self) -> f64 {
        self.error_trace()[0]
    }

    pub fn final_error(&self) -> f64 {
        *self
            .error_trace()
            .last()
            .expect("trace holds the initialization")
    }
}

/// `max_k ||U b_k - x*_k|| / ||x*_k||` with `b_k` by least squares on every row.
pub fn max_column_error(u: &BasisMatrix, inst: &LrcsInstance) -> Result<f64> {
    let (_, x) = ls_step(u.as_matrix(), inst, &(0..inst.m))?;
    let mut worst: f64 = 0.0;
    for k in 0..inst.q() {
        let truth = inst.truth.x_star.column(k);
        let denom = truth.norm();
        if denom > 0.0 {
            worst = worst.max((x.column(k) - truth).norm() / denom);
        }
    }
    Ok(worst)
}

/// Full Byz-AltGDmin: resilient spectral initialization then `T` resilient
/// GD iterations, with the error traced after every step.
pub fn byz_altgdmin(
    inst: &LrcsInstance,
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    cfg: &LrcsConfig,
) -> Result<LrcsOutcome> {
    run_altgdmin(inst, &inst.node_layout(), fed, adversary, cfg, true)
}

/// Attack-free AltGDmin on the pooled measurements: centralized spectral
/// initialization and plain projected GD with step `eta / m`.
pub fn altgdmin_baseline(inst: &LrcsInstance, cfg: &LrcsConfig) -> Result<LrcsOutcome> {
    let fed = FederationConfig::honest_only(1, cfg.init.seed);
    let cfg = LrcsConfig {
        init_method: InitMethod::Median,
        ..*cfg
    };
    run_altgdmin(inst, &[0..inst.m], &fed, &mut NoAdversary, &cfg, false)
}

fn run_altgdmin(
    inst: &LrcsInstance,
    layout: &[Range<usize>],
    fed: &FederationConfig,
    adversary: &mut dyn Adversary,
    cfg: &LrcsConfig,
    thresholded: bool,
) -> Result<LrcsOutcome> {
    check_fed(inst, layout, fed)?;
    let gd = &cfg.gd;
    if gd.iterations == 0 {
        return Err(Error::ConfigInvalid("T must be at least 1".into()));
    }
    // Blocks: 0 for the initialization, t for GD iteration t.
    let blocks = if gd.sample_splitting {
        gd.iterations + 1
    } else {
        1
    };
    let rows_for = |phase: usize| -> Result<Vec<Range<usize>>> {
        if gd.sample_splitting {
            split_rows(layout, phase, blocks)
        } else {
            Ok(layout.to_vec())
        }
    };
    let init_rows = rows_for(0)?;
    let params = match cfg.params {
        ParamSource::Oracle => LrcsParams::oracle(&inst.truth),
        ParamSource::Estimated => estimate_lrcs_params(inst, &init_rows, cfg.mu, cfg.init.seed)?,
    };
    let c_tilde = cfg.init.c_tilde.unwrap_or_else(|| params.c_tilde());
    if c_tilde <= 0.0 {
        return Err(Error::ConfigInvalid(format!(
            "c_tilde must be positive, got {c_tilde}"
        )));
    }
    let init = match cfg.init_method {
        InitMethod::Median => {
            spectral_init_median(inst, &init_rows, fed, adversary, &cfg.init, c_tilde)?
        }
        InitMethod::Mom => spectral_init_mom(inst, &init_rows, fed, adversary, &cfg.init, c_tilde)?,
    };
    let eta = gd.eta.unwrap_or_else(|| params.step_size());
    if eta <= 0.0 {
        return Err(Error::ConfigInvalid(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let gd_rows0 = rows_for(if gd.sample_splitting { 1 } else { 0 })?;
    let omega = if thresholded {
        gd.omega.unwrap_or_else(|| {
            params.gradient_threshold(fed.batch_size(), gd_rows0[0].len(), inst.r())
        })
    } else {
        f64::INFINITY
    };
    let step = GdStep { eta, omega };

    let r_sqrt = (inst.r() as f64).sqrt();
    let mut state = AltGdMinState {
        u: init.estimate.basis,
        node_b: Vec::new(),
        iteration: 0,
    };
    let mut sd_trace = vec![sd_f(&inst.truth.u_star, &state.u)?];
    let mut column_error_trace = vec![max_column_error(&state.u, inst)?];
    let mut filtered = 0;
    for t in 1..=gd.iterations {
        let rows = rows_for(if gd.sample_splitting { t } else { 0 })?;
        let (next, info) = gd_round(
            &state,
            inst,
            &rows,
            fed,
            adversary,
            step,
            &gd.gm,
            gd.schedule,
        )?;
        state = next;
        filtered += info.filtered;
        let sd = sd_f(&inst.truth.u_star, &state.u)?;
        sd_trace.push(sd);
        column_error_trace.push(max_column_error(&state.u, inst)?);
        if gd.exit_error.is_some_and(|e| sd / r_sqrt < e) {
            break;
        }
    }
    Ok(LrcsOutcome {
        state,
        sd_trace,
        column_error_trace,
        params,
        alpha: init.alpha,
        step,
        filtered,
    })
}
