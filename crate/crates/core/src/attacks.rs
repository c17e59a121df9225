//! The Byzantine payload generators used in the experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::{Adversary, AdversaryView, Payload};
use crate::linalg::{orthonormalize, BasisMatrix, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Orthogonal,
    Ones,
    Alternating,
    ReverseGradient,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::None,
        AttackKind::Orthogonal,
        AttackKind::Ones,
        AttackKind::Alternating,
        AttackKind::ReverseGradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Orthogonal => "orthogonal",
            AttackKind::Ones => "ones",
            AttackKind::Alternating => "alternating",
            AttackKind::ReverseGradient => "reverse_gradient",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown attack `{s}`")))
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    /// Entry magnitude for the ones and alternating attacks; `None` means
    /// `0.9 * omega / sqrt(n r)`.
    pub c_attack: Option<f64>,
    /// `C` in the reverse-gradient attack.
    pub rev_multiplier: f64,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            c_attack: None,
            rev_multiplier: 10.0,
        }
    }
}

/// Default entry scale so the matrix has Frobenius norm `0.9 * omega`.
pub fn default_c_attack(omega: f64, n: usize, r: usize) -> f64 {
    0.9 * omega / ((n * r) as f64).sqrt()
}

/// `(omega / sqrt(r))` times `r` orthonormal directions orthogonal to the
/// span of `honest_aggregate`.
pub fn orthogonal_attack(honest_aggregate: &DenseMatrix, omega: f64) -> Result<DenseMatrix> {
    let (n, r) = honest_aggregate.shape();
    if 2 * r > n {
        return Err(Error::ConfigInvalid(format!(
            "orthogonal attack needs r <= n - r (n={n}, r={r})"
        )));
    }
    let span = orthonormalize(honest_aggregate)?;
    Ok(complement_columns(&span, r) * (omega / (r as f64).sqrt()))
}

/// Leading `count` columns of the QR factor of `I - U U^T`.
///
/// Column `j` of that factor is Gram-Schmidt of `(I - U U^T) e_j` against the
/// earlier ones, so it is built column by column without the `n x n` matrix;
/// columns that are numerically dependent are skipped.
fn complement_columns(span: &BasisMatrix, count: usize) -> DenseMatrix {
    let u = span.as_matrix();
    let n = u.nrows();
    let mut out = DenseMatrix::zeros(n, count);
    let mut found = 0;
    for j in 0..n {
        if found == count {
            break;
        }
        let mut v = -(u * u.row(j).transpose());
        v[j] += 1.0;
        // Two passes of Gram-Schmidt keep the result orthogonal to working precision.
        for _ in 0..2 {
            let cu = u.tr_mul(&v);
            v -= u * cu;
            let prev = out.columns(0, found);
            let cp = prev.tr_mul(&v);
            v -= prev * cp;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            out.set_column(found, &(v / norm));
            found += 1;
        }
    }
    debug_assert_eq!(found, count);
    out
}

/// Every entry equal to `-c`.
pub fn ones_attack(n: usize, r: usize, c: f64) -> DenseMatrix {
    DenseMatrix::from_element(n, r, -c)
}

/// Entry `(i, j)` equal to `c * (-1)^(i+j)`.
pub fn alternating_attack(n: usize, r: usize, c: f64) -> DenseMatrix {
    DenseMatrix::from_fn(n, r, |i, j| if (i + j) % 2 == 0 { c } else { -c })
}

/// `-C` times the mean of `honest`.
pub fn reverse_gradient_attack(honest: &[&DenseMatrix], multiplier: f64) -> Result<DenseMatrix> {
    let first = honest.first().ok_or(Error::EmptyInput)?;
    let mut sum = DenseMatrix::zeros(first.nrows(), first.ncols());
    for g in honest {
        if g.shape() != first.shape() {
            return Err(Error::dims(
                format!("{:?}", first.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        sum += *g;
    }
    Ok(sum * (-multiplier / honest.len() as f64))
}

/// An omniscient adversary running one of the attacks.
///
/// The attack scale `omega` is read from the center state; when the center
/// publishes none, the norm of the honest aggregate in view is used. Scalar
/// rounds get `c_attack`, or `rev_multiplier` times the honest mean when it
/// is unset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackAdversary {
    pub kind: AttackKind,
    pub params: AttackParams,
}

impl AttackAdversary {
    pub fn new(kind: AttackKind, params: AttackParams) -> Self {
        AttackAdversary { kind, params }
    }
}

impl Adversary for AttackAdversary {
    fn payload(&mut self, view: &AdversaryView<'_>, _node: usize) -> Result<Payload> {
        let first = view.honest.first().ok_or(Error::EmptyInput)?;
        let (n, r) = match &first.content {
            Payload::Scalar(_) => {
                let c = match self.params.c_attack {
                    Some(c) => c,
                    None => {
                        let vals: Vec<f64> = view
                            .honest
                            .iter()
                            .filter_map(|p| p.content.as_scalar())
                            .collect();
                        self.params.rev_multiplier * vals.iter().sum::<f64>() / vals.len() as f64
                    }
                };
                return Ok(Payload::Scalar(c));
            }
            Payload::Matrix(m) => m.shape(),
        };
        let sum = view.honest_sum().ok_or(Error::EmptyInput)?;
        let omega = view.state.omega.unwrap_or_else(|| sum.norm());
        let c = self
            .params
            .c_attack
            .unwrap_or_else(|| default_c_attack(omega, n, r));
        let m = match self.kind {
            AttackKind::None => {
                return Err(Error::ConfigInvalid(
                    "inactive attack asked for a payload".into(),
                ))
            }
            AttackKind::Orthogonal => orthogonal_attack(&sum, omega)?,
            AttackKind::Ones => ones_attack(n, r, c),
            AttackKind::Alternating => alternating_attack(n, r, c),
            AttackKind::ReverseGradient => {
                let honest: Vec<&DenseMatrix> = view.honest_matrices().collect();
                reverse_gradient_attack(&honest, self.params.rev_multiplier)?
            }
        };
        Ok(Payload::Matrix(m))
    }

    fn is_active(&self) -> bool {
        self.kind != AttackKind::None
    }
}
