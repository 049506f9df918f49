//! Builtin coupling terms `f_i(x_i, x_j)`.
//!
//! Configs name neighbors by agent id ([`DynamicsSpec`]); compiling against an
//! agent's neighbor list resolves ids to neighbor slots ([`Dynamics`]).

use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTerm<S> {
    pub agent: u32,
    pub matrix: Vec<Vec<S>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborWeight<S> {
    pub agent: u32,
    pub weight: S,
}

/// Declarative form of a coupling term as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec<S> {
    Zero,
    /// `own * x_i + sum_j B_j x_j + offset`
    Linear {
        #[serde(default)]
        own: Option<Vec<Vec<S>>>,
        #[serde(default)]
        coupling: Vec<CouplingTerm<S>>,
        #[serde(default)]
        offset: Option<Vec<S>>,
    },
    /// `gain * sum_j w_j (x_j - x_i)`; all neighbors with weight 1 when `weights` is empty.
    Consensus {
        #[serde(default)]
        gain: Option<S>,
        #[serde(default)]
        weights: Vec<NeighborWeight<S>>,
    },
    /// Componentwise clamp of `inner` to `[-limit, limit]`.
    Saturate { limit: S, inner: Box<DynamicsSpec<S>> },
    /// Componentwise sine of `inner`.
    Sine { inner: Box<DynamicsSpec<S>> },
    Scale { factor: S, inner: Box<DynamicsSpec<S>> },
    Sum { terms: Vec<DynamicsSpec<S>> },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    pub rows: Vec<Vec<S>>,
}

impl<S: Scalar> Matrix<S> {
    fn apply_add(&self, x: &Point<S>, out: &mut Point<S>) {
        for (r, row) in self.rows.iter().enumerate() {
            out[r] = out[r] + row.iter().zip(x.coords()).map(|(&a, &b)| a * b).sum::<S>();
        }
    }

    fn frobenius_sq(&self) -> S {
        self.rows.iter().flatten().map(|&v| v * v).sum()
    }
}

/// Coupling term with neighbor references resolved to slots in `j(i)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics<S> {
    Zero,
    Linear {
        own: Option<Matrix<S>>,
        coupling: Vec<(usize, Matrix<S>)>,
        offset: Option<Point<S>>,
    },
    Consensus { gain: S, weights: Vec<(usize, S)> },
    Saturate { limit: S, inner: Box<Dynamics<S>> },
    Sine(Box<Dynamics<S>>),
    Scale { factor: S, inner: Box<Dynamics<S>> },
    Sum(Vec<Dynamics<S>>),
}

impl<S: Scalar> DynamicsSpec<S> {
    /// Resolves agent ids against the ordered neighbor ids; `n` is the state dimension.
    pub fn compile(&self, n: usize, neighbor_ids: &[u32]) -> Result<Dynamics<S>, String> {
        let slot = |id: u32| {
            neighbor_ids
                .iter()
                .position(|&j| j == id)
                .ok_or_else(|| format!("dynamics references agent {id}, which is not a neighbor"))
        };
        let square = |m: &Vec<Vec<S>>, what: &str| -> Result<Matrix<S>, String> {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return Err(format!("{what} matrix must be {n}x{n}"));
            }
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(format!("{what} matrix has non-finite entries"));
            }
            Ok(Matrix { rows: m.clone() })
        };
        Ok(match self {
            DynamicsSpec::Zero => Dynamics::Zero,
            DynamicsSpec::Linear { own, coupling, offset } => {
                let own = own.as_ref().map(|m| square(m, "own")).transpose()?;
                let coupling = coupling
                    .iter()
                    .map(|c| Ok((slot(c.agent)?, square(&c.matrix, "coupling")?)))
                    .collect::<Result<Vec<_>, String>>()?;
                let offset = match offset {
                    Some(o) if o.len() != n => return Err(format!("offset must have length {n}")),
                    Some(o) => Some(Point(o.clone())),
                    None => None,
                };
                Dynamics::Linear { own, coupling, offset }
            }
            DynamicsSpec::Consensus { gain, weights } => {
                let gain = gain.unwrap_or_else(S::one);
                let weights = if weights.is_empty() {
                    (0..neighbor_ids.len()).map(|s| (s, S::one())).collect()
                } else {
                    weights
                        .iter()
                        .map(|w| Ok((slot(w.agent)?, w.weight)))
                        .collect::<Result<Vec<_>, String>>()?
                };
                Dynamics::Consensus { gain, weights }
            }
            DynamicsSpec::Saturate { limit, inner } => {
                if !(*limit > S::zero()) {
                    return Err("saturation limit must be positive".into());
                }
                Dynamics::Saturate { limit: *limit, inner: Box::new(inner.compile(n, neighbor_ids)?) }
            }
            DynamicsSpec::Sine { inner } => Dynamics::Sine(Box::new(inner.compile(n, neighbor_ids)?)),
            DynamicsSpec::Scale { factor, inner } => Dynamics::Scale {
                factor: *factor,
                inner: Box::new(inner.compile(n, neighbor_ids)?),
            },
            DynamicsSpec::Sum { terms } => Dynamics::Sum(
                terms
                    .iter()
                    .map(|t| t.compile(n, neighbor_ids))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }
}

impl<S: Scalar> Dynamics<S> {
    /// Evaluates `f_i(own, neighbors)` with neighbors in `j(i)` order.
    pub fn eval(&self, own: &Point<S>, neighbors: &[Point<S>]) -> Point<S> {
        let n = own.dim();
        match self {
            Dynamics::Zero => Point::zeros(n),
            Dynamics::Linear { own: a, coupling, offset } => {
                let mut out = offset.clone().unwrap_or_else(|| Point::zeros(n));
                if let Some(a) = a {
                    a.apply_add(own, &mut out);
                }
                for (s, b) in coupling {
                    b.apply_add(&neighbors[*s], &mut out);
                }
                out
            }
            Dynamics::Consensus { gain, weights } => {
                let mut out = Point::zeros(n);
                for &(s, w) in weights {
                    for k in 0..n {
                        out[k] = out[k] + *gain * w * (neighbors[s][k] - own[k]);
                    }
                }
                out
            }
            Dynamics::Saturate { limit, inner } => {
                let mut v = inner.eval(own, neighbors);
                for c in v.0.iter_mut() {
                    *c = c.max(-*limit).min(*limit);
                }
                v
            }
            Dynamics::Sine(inner) => {
                let mut v = inner.eval(own, neighbors);
                for c in v.0.iter_mut() {
                    *c = c.sin();
                }
                v
            }
            Dynamics::Scale { factor, inner } => inner.eval(own, neighbors).scale(*factor),
            Dynamics::Sum(terms) => terms.iter().fold(Point::zeros(n), |acc, t| {
                &acc + &t.eval(own, neighbors)
            }),
        }
    }

    /// Conservative global Lipschitz constants `(L1 in neighbors, L2 in own state)`.
    pub fn lipschitz_bounds(&self) -> (S, S) {
        match self {
            Dynamics::Zero => (S::zero(), S::zero()),
            Dynamics::Linear { own, coupling, .. } => {
                let l2 = own.as_ref().map(|a| a.frobenius_sq().sqrt()).unwrap_or_else(S::zero);
                let l1 = coupling.iter().map(|(_, b)| b.frobenius_sq()).sum::<S>().sqrt();
                (l1, l2)
            }
            Dynamics::Consensus { gain, weights } => {
                let g = gain.abs();
                let l2 = g * weights.iter().map(|&(_, w)| w).sum::<S>().abs();
                let l1 = g * weights.iter().map(|&(_, w)| w * w).sum::<S>().sqrt();
                (l1, l2)
            }
            Dynamics::Saturate { inner, .. } | Dynamics::Sine(inner) => inner.lipschitz_bounds(),
            Dynamics::Scale { factor, inner } => {
                let (a, b) = inner.lipschitz_bounds();
                (a * factor.abs(), b * factor.abs())
            }
            Dynamics::Sum(terms) => terms.iter().fold((S::zero(), S::zero()), |(a, b), t| {
                let (x, y) = t.lipschitz_bounds();
                (a + x, b + y)
            }),
        }
    }

    /// Global bound on `|f|` when the structure provides one.
    pub fn magnitude_bound(&self, n: usize) -> Option<S> {
        let root_n = S::from_usize_lossy(n).sqrt();
        match self {
            Dynamics::Zero => Some(S::zero()),
            Dynamics::Saturate { limit, inner } => {
                let own = *limit * root_n;
                Some(inner.magnitude_bound(n).map_or(own, |b| b.min(own)))
            }
            Dynamics::Sine(inner) => {
                Some(inner.magnitude_bound(n).map_or(root_n, |b| b.min(root_n)))
            }
            Dynamics::Scale { factor, inner } => inner.magnitude_bound(n).map(|b| b * factor.abs()),
            Dynamics::Sum(terms) => terms.iter().map(|t| t.magnitude_bound(n)).sum(),
            Dynamics::Linear { .. } | Dynamics::Consensus { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Dynamics::Zero)
    }
}
