//! Simulated synchronous federation.
//!
//! Nodes are numbered `0..L` internally. A round asks every good node for its
//! payload (concurrently when the `parallel` feature is on) and only then lets
//! the adversary pick the Byzantine payloads, with every good payload in view.

use std::collections::BTreeSet;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{rng_from, TAG_SCHEDULE};

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub num_nodes: usize,
    pub byzantine_ids: BTreeSet<usize>,
    /// `L_tilde`; must divide `num_nodes`.
    pub minibatches: usize,
    pub seed: u64,
}

impl FederationConfig {
    pub fn new(
        num_nodes: usize,
        byzantine_ids: impl IntoIterator<Item = usize>,
        minibatches: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = FederationConfig {
            num_nodes,
            byzantine_ids: byzantine_ids.into_iter().collect(),
            minibatches,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `num_byzantine` corrupted nodes placed round-robin over the minibatches
    /// (first node of batch 0, first node of batch 1, ..., then second nodes),
    /// so that `L_byz <= L_tilde` corrupts as many minibatches as possible.
    pub fn spread(
        num_nodes: usize,
        num_byzantine: usize,
        minibatches: usize,
        seed: u64,
    ) -> Result<Self> {
        if minibatches == 0 || !num_nodes.is_multiple_of(minibatches) {
            return Err(Error::IndivisibleSplit {
                total: num_nodes,
                parts: minibatches,
            });
        }
        let rho = num_nodes / minibatches;
        let ids = (0..num_byzantine).map(|i| (i % minibatches) * rho + i / minibatches);
        Self::new(num_nodes, ids, minibatches, seed)
    }

    pub fn honest_only(num_nodes: usize, seed: u64) -> Self {
        FederationConfig {
            num_nodes,
            byzantine_ids: BTreeSet::new(),
            minibatches: num_nodes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::ConfigInvalid(
                "federation needs at least one node".into(),
            ));
        }
        if self.minibatches == 0 || !self.num_nodes.is_multiple_of(self.minibatches) {
            return Err(Error::IndivisibleSplit {
                total: self.num_nodes,
                parts: self.minibatches,
            });
        }
        if let Some(&id) = self.byzantine_ids.iter().next_back() {
            if id >= self.num_nodes {
                return Err(Error::OutOfRange(format!(
                    "byzantine node {id} in a federation of {}",
                    self.num_nodes
                )));
            }
        }
        if 2 * self.byzantine_ids.len() >= self.num_nodes {
            return Err(Error::ConfigInvalid(format!(
                "{} byzantine nodes out of {} is not a minority",
                self.byzantine_ids.len(),
                self.num_nodes
            )));
        }
        Ok(())
    }

    pub fn num_byzantine(&self) -> usize {
        self.byzantine_ids.len()
    }

    /// `rho = L / L_tilde`.
    pub fn batch_size(&self) -> usize {
        self.num_nodes / self.minibatches
    }

    pub fn is_byzantine(&self, node: usize) -> bool {
        self.byzantine_ids.contains(&node)
    }

    /// Zero-based minibatch of a zero-based node.
    pub fn batch_of(&self, node: usize) -> usize {
        node / self.batch_size()
    }

    pub fn batch_members(&self, batch: usize) -> std::ops::Range<usize> {
        let rho = self.batch_size();
        batch * rho..(batch + 1) * rho
    }

    /// The same federation with every node in its own minibatch.
    pub fn unbatched(&self) -> Self {
        FederationConfig {
            minibatches: self.num_nodes,
            ..self.clone()
        }
    }
}

/// One-based global index `(theta - 1) * rho + ell` of node `ell` in batch `theta`.
pub fn minibatch_index(theta: usize, ell: usize, rho: usize) -> Result<usize> {
    if theta == 0 || ell == 0 || ell > rho {
        return Err(Error::OutOfRange(format!(
            "(theta={theta}, ell={ell}) with rho={rho}"
        )));
    }
    Ok((theta - 1) * rho + ell)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Matrix(DenseMatrix),
    Scalar(f64),
}

impl Payload {
    pub fn shape(&self) -> Option<(usize, usize)> {
        match self {
            Payload::Matrix(m) => Some(m.shape()),
            Payload::Scalar(_) => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&DenseMatrix> {
        match self {
            Payload::Matrix(m) => Some(m),
            Payload::Scalar(_) => None,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Payload::Scalar(v) => Some(*v),
            Payload::Matrix(_) => None,
        }
    }

    pub fn into_matrix(self) -> Option<DenseMatrix> {
        match self {
            Payload::Matrix(m) => Some(m),
            Payload::Scalar(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPayload {
    pub node_id: usize,
    pub content: Payload,
    pub byzantine: bool,
}

/// What the center exposes about itself; the adversary sees all of it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CenterState {
    pub round: usize,
    /// Norm threshold the center filters with, or the scale an attack should
    /// match when there is no filter.
    pub omega: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AdversaryView<'a> {
    pub honest: Vec<&'a RoundPayload>,
    pub state: CenterState,
}

impl AdversaryView<'_> {
    pub fn honest_matrices(&self) -> impl Iterator<Item = &DenseMatrix> + '_ {
        self.honest.iter().filter_map(|p| p.content.as_matrix())
    }

    /// Entrywise sum of the honest matrix payloads.
    pub fn honest_sum(&self) -> Option<DenseMatrix> {
        let mut it = self.honest_matrices();
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, m| acc + m))
    }

    /// The view restricted to honest nodes in `nodes`.
    pub fn restricted(&self, nodes: std::ops::Range<usize>) -> Self {
        AdversaryView {
            honest: self
                .honest
                .iter()
                .copied()
                .filter(|p| nodes.contains(&p.node_id))
                .collect(),
            state: self.state,
        }
    }
}

/// Produces the payload of a Byzantine node after seeing the honest ones.
pub trait Adversary {
    fn payload(&mut self, view: &AdversaryView<'_>, node: usize) -> Result<Payload>;

    /// An inactive adversary leaves its nodes honest.
    fn is_active(&self) -> bool {
        true
    }
}

/// Leaves every node honest.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAdversary;

impl Adversary for NoAdversary {
    fn payload(&mut self, _view: &AdversaryView<'_>, node: usize) -> Result<Payload> {
        Err(Error::OutOfRange(format!(
            "node {node} is byzantine but no adversary was supplied"
        )))
    }

    fn is_active(&self) -> bool {
        false
    }
}

#[cfg(feature = "parallel")]
fn compute_honest<H>(ids: &[usize], honest: &H) -> Vec<Result<Payload>>
where
    H: Fn(usize) -> Result<Payload> + Sync,
{
    use rayon::prelude::*;
    ids.par_iter().map(|&i| honest(i)).collect()
}

#[cfg(not(feature = "parallel"))]
fn compute_honest<H>(ids: &[usize], honest: &H) -> Vec<Result<Payload>>
where
    H: Fn(usize) -> Result<Payload> + Sync,
{
    ids.iter().map(|&i| honest(i)).collect()
}

/// One synchronous round. `byzantine` is the corrupted set for this round
/// (usually `cfg.byzantine_ids`, see [`byzantine_set_schedule`]); it is
/// ignored when the adversary is inactive. The transcript is ordered by node id.
pub fn run_round<H>(
    cfg: &FederationConfig,
    byzantine: &BTreeSet<usize>,
    state: CenterState,
    honest: H,
    adversary: &mut dyn Adversary,
) -> Result<Vec<RoundPayload>>
where
    H: Fn(usize) -> Result<Payload> + Sync,
{
    let none = BTreeSet::new();
    let byzantine = if adversary.is_active() {
        byzantine
    } else {
        &none
    };
    let good: Vec<usize> = (0..cfg.num_nodes)
        .filter(|i| !byzantine.contains(i))
        .collect();
    let mut honest_payloads = Vec::with_capacity(good.len());
    for (node, res) in good.iter().zip(compute_honest(&good, &honest)) {
        honest_payloads.push(RoundPayload {
            node_id: *node,
            content: res.map_err(|e| e.at_node(*node))?,
            byzantine: false,
        });
    }
    check_uniform(&honest_payloads)?;

    let mut corrupted = Vec::with_capacity(byzantine.len());
    {
        let view = AdversaryView {
            honest: honest_payloads.iter().collect(),
            state,
        };
        for &node in byzantine {
            corrupted.push(RoundPayload {
                node_id: node,
                content: adversary.payload(&view, node)?,
                byzantine: true,
            });
        }
    }

    let mut all = honest_payloads;
    all.extend(corrupted);
    all.sort_by_key(|p| p.node_id);
    check_uniform(&all)?;
    Ok(all)
}

fn check_uniform(payloads: &[RoundPayload]) -> Result<()> {
    if let Some(first) = payloads.first() {
        let shape = first.content.shape();
        for p in payloads {
            if p.content.shape() != shape {
                return Err(
                    Error::dims(format!("{shape:?}"), format!("{:?}", p.content.shape()))
                        .at_node(p.node_id),
                );
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    #[default]
    Fixed,
    PerRound,
}

/// The corrupted set in force at `round`.
pub fn byzantine_set_schedule(
    cfg: &FederationConfig,
    mode: ScheduleMode,
    round: usize,
) -> BTreeSet<usize> {
    match mode {
        ScheduleMode::Fixed => cfg.byzantine_ids.clone(),
        ScheduleMode::PerRound => {
            let mut rng = rng_from(cfg.seed, &[TAG_SCHEDULE, round as u64]);
            sample(&mut rng, cfg.num_nodes, cfg.num_byzantine())
                .into_iter()
                .collect()
        }
    }
}
