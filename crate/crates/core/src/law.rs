//! Finite empirical laws on the space of nonzero marked metric measure
//! spaces, and the distances between them that drive the convergence
//! diagnostics.
//!
//! An [`EmpiricalLaw`] is a finite measure `scale * sum_i w_i * delta(X_i)`.
//! Null spaces carry no mass in this framework, so atoms whose space has
//! zero total mass are dropped at construction; their weights are kept in a
//! side list so that replicate-level statistics can still account for them.
//!
//! [`law_prohorov`] metrizes laws by building the finite metric space of
//! their distinct atom spaces under the glueing upper bound, repaired to an
//! exact metric by shortest paths, and computing the two-sided Prohorov
//! distance there. When one law dominates the other atom for atom the
//! distance equals the total-mass gap exactly and no glueing search runs.
//!
//! [`vague_distance`] integrates `exp(-eps) * min(1, prohorov)` over the
//! restriction threshold `eps`. The restricted laws are piecewise constant
//! in `eps` with breakpoints at the distinct atom masses, so the integral is
//! a finite sum evaluated segment by segment.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gromov::{gp_upper, GlueSearchCfg};
use crate::monomial::{evaluate_exact, Monomial};
use crate::prohorov::prohorov_trusted;
use crate::scalar::{c, cmp_finite, Scalar};
use crate::space::{metric_closure, FiniteMmmSpace};

/// Finite weighted law `scale * sum_i w_i * delta(space_i)` on nonzero
/// spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw<T: Scalar> {
    scale: T,
    atoms: Vec<(Arc<FiniteMmmSpace<T>>, T)>,
    dropped: Vec<T>,
}

impl<T: Scalar> EmpiricalLaw<T> {
    /// Builds a law, dropping atoms whose space is null or carries no mass.
    /// Weights must be finite and nonnegative; the scale finite and
    /// positive.
    pub fn new(scale: T, atoms: Vec<(Arc<FiniteMmmSpace<T>>, T)>) -> Result<Self> {
        if !scale.is_finite() || scale <= T::zero() {
            return Err(Error::InvalidLaw(format!("scale must be positive, got {scale}")));
        }
        let mut kept = Vec::with_capacity(atoms.len());
        let mut dropped = Vec::new();
        for (space, w) in atoms {
            if !w.is_finite() || w < T::zero() {
                return Err(Error::InvalidLaw(format!("atom weight {w} is not finite and nonnegative")));
            }
            if w == T::zero() {
                continue;
            }
            if space.n_atoms() == 0 || space.total_mass() <= T::zero() {
                dropped.push(w);
            } else {
                kept.push((space, w));
            }
        }
        Ok(EmpiricalLaw {
            scale,
            atoms: kept,
            dropped,
        })
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Supported atoms as `(space, weight)` pairs.
    pub fn atoms(&self) -> &[(Arc<FiniteMmmSpace<T>>, T)] {
        &self.atoms
    }

    /// Weights of atoms dropped because their space carried no mass.
    pub fn dropped(&self) -> &[T] {
        &self.dropped
    }

    pub fn support_len(&self) -> usize {
        self.atoms.len()
    }

    /// Total law mass, `scale * sum of supported weights`.
    pub fn total_mass(&self) -> T {
        self.scale * self.atoms.iter().map(|&(_, w)| w).sum()
    }

    /// Sum of all weights, supported and dropped: the replicate count in
    /// simulation-built laws.
    pub fn total_weight(&self) -> T {
        self.atoms.iter().map(|&(_, w)| w).sum::<T>() + self.dropped.iter().copied().sum()
    }

    /// Law mass carried by spaces of total mass at least `t`.
    pub fn mass_above(&self, t: T) -> T {
        self.scale
            * self
                .atoms
                .iter()
                .filter(|(s, _)| s.total_mass() >= t)
                .map(|&(_, w)| w)
                .sum()
    }

    /// Restriction to spaces of total mass at least `eps`. Weights of
    /// excluded atoms move to the dropped list so replicate accounting is
    /// preserved.
    pub fn restrict_eps(&self, eps: T) -> EmpiricalLaw<T> {
        let mut kept = Vec::with_capacity(self.atoms.len());
        let mut dropped = self.dropped.clone();
        for (space, w) in &self.atoms {
            if space.total_mass() >= eps {
                kept.push((Arc::clone(space), *w));
            } else {
                dropped.push(*w);
            }
        }
        EmpiricalLaw {
            scale: self.scale,
            atoms: kept,
            dropped,
        }
    }

    /// Integral of a monomial against the law: `scale * sum_i w_i *
    /// phi_value(space_i)`. Dropped atoms contribute zero, the monomial
    /// value of the null space.
    pub fn integrate(&self, m: &Monomial<T>) -> Result<T> {
        let mut acc = T::zero();
        for (space, w) in &self.atoms {
            acc += *w * evaluate_exact(space, m)?;
        }
        Ok(self.scale * acc)
    }
}

/// Two spaces that should share an index in an atom pool: pointer equality
/// first, then cheap discriminators, then full structural equality.
fn same_space<T: Scalar>(a: &Arc<FiniteMmmSpace<T>>, b: &Arc<FiniteMmmSpace<T>>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.n_atoms() == b.n_atoms()
            && a.mark_dim() == b.mark_dim()
            && a.total_mass() == b.total_mass()
            && **a == **b)
}

/// The distinct atom spaces of a family of laws, with the glueing-bound
/// metric between them computed lazily on first use.
pub(crate) struct LawMetricSpace<T: Scalar> {
    spaces: Vec<Arc<FiniteMmmSpace<T>>>,
    space_mass: Vec<T>,
    gp: Option<Vec<T>>,
}

impl<T: Scalar> LawMetricSpace<T> {
    /// Interns every atom of every law; returns the pool and, for each law,
    /// its mass vector `scale * weight` aggregated over the pool index.
    pub(crate) fn from_laws(laws: &[&EmpiricalLaw<T>]) -> (Self, Vec<Vec<T>>) {
        let mut pool = LawMetricSpace {
            spaces: Vec::new(),
            space_mass: Vec::new(),
            gp: None,
        };
        let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(laws.len());
        for law in laws {
            let mut idx = Vec::with_capacity(law.atoms.len());
            for (space, _) in &law.atoms {
                idx.push(pool.intern(space));
            }
            assignments.push(idx);
        }
        let u = pool.spaces.len();
        let masses = laws
            .iter()
            .zip(&assignments)
            .map(|(law, idx)| {
                let mut m = vec![T::zero(); u];
                for ((_, w), &i) in law.atoms.iter().zip(idx) {
                    m[i] += law.scale * *w;
                }
                m
            })
            .collect();
        (pool, masses)
    }

    fn intern(&mut self, space: &Arc<FiniteMmmSpace<T>>) -> usize {
        if let Some(i) = self.spaces.iter().position(|s| same_space(s, space)) {
            return i;
        }
        self.spaces.push(Arc::clone(space));
        self.space_mass.push(space.total_mass());
        self.spaces.len() - 1
    }

    /// Pairwise glueing upper bounds, repaired to an exact metric by
    /// shortest paths. Shortest-path repair never drops an entry below the
    /// mass gap of its endpoints, because the mass gap itself satisfies the
    /// triangle inequality.
    fn ensure_gp(&mut self, cfg: &GlueSearchCfg) {
        if self.gp.is_some() {
            return;
        }
        let u = self.spaces.len();
        let pairs: Vec<(usize, usize)> = (0..u)
            .flat_map(|i| ((i + 1)..u).map(move |j| (i, j)))
            .collect();
        let vals: Vec<T> = pairs
            .par_iter()
            .map(|&(i, j)| gp_upper(&self.spaces[i], &self.spaces[j], cfg))
            .collect();
        let mut m = vec![T::zero(); u * u];
        for (&(i, j), &v) in pairs.iter().zip(&vals) {
            m[i * u + j] = v;
            m[j * u + i] = v;
        }
        metric_closure(&mut m, u);
        self.gp = Some(m);
    }

    /// Two-sided Prohorov distance between mass vectors over the pool.
    pub(crate) fn prohorov(&mut self, p: &[T], q: &[T], cfg: &GlueSearchCfg) -> T {
        if let Some(gap) = dominated_gap(p, q) {
            return gap;
        }
        self.ensure_gp(cfg);
        let u = self.spaces.len();
        prohorov_trusted(self.gp.as_ref().unwrap(), u, p, q)
    }

    /// Integral of `exp(-eps) * min(1, prohorov of the eps-restrictions)`
    /// over `eps`, as an exact finite sum over mass breakpoints.
    pub(crate) fn vague(&mut self, p: &[T], q: &[T], cfg: &GlueSearchCfg) -> T {
        let mut cuts: Vec<T> = self
            .space_mass
            .iter()
            .enumerate()
            .filter(|&(i, _)| p[i] > T::zero() || q[i] > T::zero())
            .map(|(_, &m)| m)
            .collect();
        cuts.sort_by(cmp_finite);
        cuts.dedup();
        let mut total = T::zero();
        let mut lo = T::zero();
        let mut pr = p.to_vec();
        let mut qr = q.to_vec();
        for &hi in &cuts {
            // Restriction to spaces of mass >= hi is constant on (lo, hi].
            for i in 0..pr.len() {
                if self.space_mass[i] < hi {
                    pr[i] = T::zero();
                    qr[i] = T::zero();
                }
            }
            let d = self.prohorov(&pr, &qr, cfg).min(T::one());
            total += ((-lo).exp() - (-hi).exp()) * d;
            lo = hi;
        }
        total
    }
}

/// If `q` dominates `p` atom for atom (or vice versa), the Prohorov
/// distance is exactly the total-mass gap, independent of the geometry.
fn dominated_gap<T: Scalar>(p: &[T], q: &[T]) -> Option<T> {
    if p.iter().zip(q).all(|(&a, &b)| a <= b) || p.iter().zip(q).all(|(&a, &b)| a >= b) {
        let gap = p.iter().sum::<T>() - q.iter().sum::<T>();
        Some(gap.abs())
    } else {
        None
    }
}

/// Prohorov distance between two laws over the metric of glueing upper
/// bounds on their distinct atom spaces.
pub fn law_prohorov<T: Scalar>(
    p: &EmpiricalLaw<T>,
    q: &EmpiricalLaw<T>,
    cfg: &GlueSearchCfg,
) -> T {
    let (mut pool, masses) = LawMetricSpace::from_laws(&[p, q]);
    pool.prohorov(&masses[0], &masses[1], cfg)
}

/// Vague distance between two laws: `integral of exp(-eps) * min(1,
/// prohorov of the mass >= eps restrictions) d eps`, evaluated exactly as a
/// sum over the segments where the restrictions are constant.
pub fn vague_distance<T: Scalar>(
    p: &EmpiricalLaw<T>,
    q: &EmpiricalLaw<T>,
    cfg: &GlueSearchCfg,
) -> T {
    let (mut pool, masses) = LawMetricSpace::from_laws(&[p, q]);
    pool.vague(&masses[0], &masses[1], cfg)
}

/// Outcome of one estimator bound check.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheck<T: Scalar> {
    /// Vague distance between the two laws.
    pub vague_lhs: T,
    /// The claimed bound `x + eps * (1 + mass_above terms)`.
    pub bound_rhs: T,
    /// Prohorov distance between the laws, checked against `eps`.
    pub law_prohorov: T,
    /// Law mass of the first law above level `x - eps`.
    pub mass_above_p: T,
    /// Law mass of the second law above level `x - eps`.
    pub mass_above_q: T,
    pub holds: bool,
}

/// Checks the vague-distance estimator bound: if the laws share a scale and
/// their Prohorov distance is below `eps < x`, then the vague distance is
/// at most `x + eps * (1 + mass_above_p(x - eps) + mass_above_q(x - eps))`.
///
/// The Prohorov precondition and the vague distance are evaluated on the
/// same atom-pool metric, so the bound is a theorem of that finite metric
/// space rather than an approximation claim.
pub fn lemma_bound_check<T: Scalar>(
    p: &EmpiricalLaw<T>,
    q: &EmpiricalLaw<T>,
    x: T,
    eps: T,
    cfg: &GlueSearchCfg,
) -> Result<LemmaCheck<T>> {
    if p.scale != q.scale {
        return Err(Error::PreconditionViolated(format!(
            "laws must share a scale: {} vs {}",
            p.scale, q.scale
        )));
    }
    if !(x > eps && eps > T::zero()) {
        return Err(Error::PreconditionViolated(format!(
            "need x > eps > 0, got x = {x}, eps = {eps}"
        )));
    }
    let (mut pool, masses) = LawMetricSpace::from_laws(&[p, q]);
    let dpr = pool.prohorov(&masses[0], &masses[1], cfg);
    if !(eps > dpr) {
        return Err(Error::PreconditionViolated(format!(
            "need eps > law_prohorov, got eps = {eps}, law_prohorov = {dpr}"
        )));
    }
    let vague_lhs = pool.vague(&masses[0], &masses[1], cfg);
    let level = x - eps;
    let mass_above_p = p.mass_above(level);
    let mass_above_q = q.mass_above(level);
    let bound_rhs = x + eps * (T::one() + mass_above_p + mass_above_q);
    Ok(LemmaCheck {
        vague_lhs,
        bound_rhs,
        law_prohorov: dpr,
        mass_above_p,
        mass_above_q,
        holds: vague_lhs <= bound_rhs + c::<T>(1e-9),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct AtomRepr<T: Scalar> {
    weight: T,
    space: FiniteMmmSpace<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LawRepr<T: Scalar> {
    scale: T,
    atoms: Vec<AtomRepr<T>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    dropped: Vec<T>,
}

impl<T: Scalar> Serialize for EmpiricalLaw<T> {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        LawRepr {
            scale: self.scale,
            atoms: self
                .atoms
                .iter()
                .map(|(s, w)| AtomRepr {
                    weight: *w,
                    space: (**s).clone(),
                })
                .collect(),
            dropped: self.dropped.clone(),
        }
        .serialize(ser)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for EmpiricalLaw<T> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = LawRepr::<T>::deserialize(de)?;
        let mut law = EmpiricalLaw::new(
            repr.scale,
            repr.atoms
                .into_iter()
                .map(|a| (Arc::new(a.space), a.weight))
                .collect(),
        )
        .map_err(serde::de::Error::custom)?;
        law.dropped.extend(repr.dropped);
        Ok(law)
    }
}
