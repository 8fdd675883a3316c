//! Two-sided bounds on the Gromov-Prohorov distance between finite marked
//! metric measure spaces, and the derived metric on nonzero spaces.
//!
//! The Gromov-Prohorov distance is an infimum of Prohorov distances over all
//! isometric embeddings of the two spaces into a common metric space. A
//! common space is described finitely by a [`Glueing`]: the matrix of cross
//! distances between the atoms, constrained so that the combined block
//! matrix is again a metric. Every glueing therefore yields an upper bound,
//! and [`gp_upper`] searches over feasible glueings. Marks enter through the
//! product metric: the glued distance plus the Euclidean mark distance.
//!
//! [`gp_lower`] returns certified lower bounds: the total-mass gap, and
//! discrepancies of Lipschitz monomials divided by their modulus of
//! continuity with respect to the Gromov-Prohorov distance.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::monomial::{evaluate_exact_with_budget, Expr, Monomial, TestFunction};
use crate::prohorov::prohorov_cross;
use crate::scalar::{c, cmp_finite, Scalar};
use crate::space::{validate_metric, FiniteMmmSpace};

/// Search budget for [`gp_upper`].
#[derive(Debug, Clone)]
pub struct GlueSearchCfg {
    /// Number of randomized glueing seeds beyond the deterministic ones.
    pub seeds: usize,
    /// Coordinate-descent refinement steps over cross-matrix entries.
    pub descent_steps: usize,
    /// Slack used when validating glueing feasibility.
    pub projection_tol: f64,
    /// RNG seed; the search is deterministic given the configuration.
    pub rng_seed: u64,
    /// Cap on anchor-map candidates evaluated by Prohorov distance.
    pub max_map_evals: usize,
    /// Enumerate all anchor maps exhaustively when their count is below
    /// this limit; otherwise fall back to greedy and random maps.
    pub exhaustive_map_limit: u64,
}

impl Default for GlueSearchCfg {
    fn default() -> Self {
        GlueSearchCfg {
            seeds: 32,
            descent_steps: 200,
            projection_tol: 1e-9,
            rng_seed: 0x1A7E_57ED,
            max_map_evals: 48,
            exhaustive_map_limit: 50_000,
        }
    }
}

impl GlueSearchCfg {
    /// Cheap preset for bulk pairwise matrices (law-level distances):
    /// deterministic seeds only, no descent.
    pub fn light() -> Self {
        GlueSearchCfg {
            seeds: 4,
            descent_steps: 0,
            max_map_evals: 8,
            exhaustive_map_limit: 1024,
            ..GlueSearchCfg::default()
        }
    }
}

/// Cross-distance matrix glueing two spaces into a common metric space.
#[derive(Debug, Clone, PartialEq)]
pub struct Glueing<T: Scalar> {
    n_left: usize,
    n_right: usize,
    cross: Vec<T>,
}

impl<T: Scalar> Glueing<T> {
    /// Validates that `cross` glues `x` and `x2` into a legal common metric
    /// space: the block matrix `[[d, cross], [cross^T, d2]]` must satisfy
    /// symmetry and the triangle inequality within tolerance.
    pub fn new(x: &FiniteMmmSpace<T>, x2: &FiniteMmmSpace<T>, cross: Vec<T>) -> Result<Self> {
        let (n, n2) = (x.n_atoms(), x2.n_atoms());
        if cross.len() != n * n2 {
            return Err(Error::InvalidGlueing(format!(
                "cross matrix has {} entries for {n} x {n2} atoms",
                cross.len()
            )));
        }
        let g = Glueing {
            n_left: n,
            n_right: n2,
            cross,
        };
        let block = g.block_metric(x, x2);
        validate_metric(&block, n + n2, T::metric_tol())
            .map_err(|e| Error::InvalidGlueing(format!("{e}")))?;
        Ok(g)
    }

    pub fn cross(&self) -> &[T] {
        &self.cross
    }

    /// The combined `(n + n2) x (n + n2)` distance matrix.
    pub fn block_metric(&self, x: &FiniteMmmSpace<T>, x2: &FiniteMmmSpace<T>) -> Vec<T> {
        let (n, n2) = (self.n_left, self.n_right);
        let ne = n + n2;
        let mut block = vec![T::zero(); ne * ne];
        for i in 0..n {
            for k in 0..n {
                block[i * ne + k] = x.dist(i, k);
            }
            for j in 0..n2 {
                block[i * ne + (n + j)] = self.cross[i * n2 + j];
                block[(n + j) * ne + i] = self.cross[i * n2 + j];
            }
        }
        for j in 0..n2 {
            for l in 0..n2 {
                block[(n + j) * ne + (n + l)] = x2.dist(j, l);
            }
        }
        block
    }

    /// Prohorov distance between the pushforward measures in the glued
    /// space, with marks entering through the added Euclidean mark distance.
    pub fn prohorov(&self, x: &FiniteMmmSpace<T>, x2: &FiniteMmmSpace<T>) -> T {
        let aug = augment_cross(&self.cross, x, x2);
        prohorov_cross(&aug, self.n_left, self.n_right, x.weights(), x2.weights())
    }
}

/// Euclidean distance between marks, the shorter one padded with zeros.
fn mark_distance_padded<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for i in 0..a.len().max(b.len()) {
        let va = a.get(i).copied().unwrap_or_else(T::zero);
        let vb = b.get(i).copied().unwrap_or_else(T::zero);
        s += (va - vb) * (va - vb);
    }
    s.sqrt()
}

fn augment_cross<T: Scalar>(
    cross: &[T],
    x: &FiniteMmmSpace<T>,
    x2: &FiniteMmmSpace<T>,
) -> Vec<T> {
    let (n, n2) = (x.n_atoms(), x2.n_atoms());
    let mut aug = vec![T::zero(); n * n2];
    for i in 0..n {
        for j in 0..n2 {
            aug[i * n2 + j] = cross[i * n2 + j] + mark_distance_padded(x.mark(i), x2.mark(j));
        }
    }
    aug
}

/// Feasible glueing from an anchor map: `anchors` are atom indices of `x2`,
/// `images` their assigned atoms in `x`. With `r` half the map's metric
/// distortion, `cross[i][j] = min_a d(i, images[a]) + r + d2(anchors[a], j)`
/// always satisfies the block triangle inequalities.
pub fn anchor_map_glueing<T: Scalar>(
    x: &FiniteMmmSpace<T>,
    x2: &FiniteMmmSpace<T>,
    anchors: &[usize],
    images: &[usize],
) -> Glueing<T> {
    assert_eq!(anchors.len(), images.len());
    assert!(!anchors.is_empty(), "anchor map needs at least one anchor");
    let (n, n2) = (x.n_atoms(), x2.n_atoms());
    let two = c::<T>(2.0);
    let mut r = T::zero();
    for u in 0..anchors.len() {
        for v in (u + 1)..anchors.len() {
            let gap = (x2.dist(anchors[u], anchors[v]) - x.dist(images[u], images[v])).abs();
            r = r.max(gap / two);
        }
    }
    let mut cross = vec![T::infinity(); n * n2];
    for (&l, &s) in anchors.iter().zip(images) {
        for i in 0..n {
            let left = x.dist(i, s) + r;
            for j in 0..n2 {
                let cand = left + x2.dist(l, j);
                let slot = &mut cross[i * n2 + j];
                if cand < *slot {
                    *slot = cand;
                }
            }
        }
    }
    Glueing {
        n_left: n,
        n_right: n2,
        cross,
    }
}

/// Feasible glueing joining the spaces at one point pair.
pub fn one_point_glueing<T: Scalar>(
    x: &FiniteMmmSpace<T>,
    x2: &FiniteMmmSpace<T>,
    i0: usize,
    j0: usize,
) -> Glueing<T> {
    anchor_map_glueing(x, x2, &[j0], &[i0])
}

/// Metric distortion of an anchor map, `max |d2(a,b) - d(s(a),s(b))|`.
fn map_distortion<T: Scalar>(
    x: &FiniteMmmSpace<T>,
    x2: &FiniteMmmSpace<T>,
    anchors: &[usize],
    images: &[usize],
) -> T {
    let mut dis = T::zero();
    for u in 0..anchors.len() {
        for v in (u + 1)..anchors.len() {
            dis = dis.max((x2.dist(anchors[u], anchors[v]) - x.dist(images[u], images[v])).abs());
        }
    }
    dis
}

/// Weight mismatch of an anchor map, used as a tie-breaker between maps of
/// equal distortion.
fn map_weight_mismatch<T: Scalar>(
    x: &FiniteMmmSpace<T>,
    x2: &FiniteMmmSpace<T>,
    anchors: &[usize],
    images: &[usize],
) -> T {
    let mut s = T::zero();
    for (&l, &i) in anchors.iter().zip(images) {
        s += (x2.weight(l) - x.weight(i)).abs();
        s += mark_distance_padded(x.mark(i), x2.mark(l));
    }
    s
}

struct Candidate<T: Scalar> {
    dis: T,
    mismatch: T,
    images: Vec<usize>,
}

/// Enumerate or sample anchor maps from `x2` into `x`, ranked by distortion
/// then weight mismatch.
fn map_candidates<T: Scalar>(
    x: &FiniteMmmSpace<T>,
    x2: &FiniteMmmSpace<T>,
    anchors: &[usize],
    cfg: &GlueSearchCfg,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let n = x.n_atoms();
    let k = anchors.len();
    let total = (n as u64).checked_pow(k as u32);
    let mut cands: Vec<Candidate<T>> = Vec::new();
    let mut push = |images: Vec<usize>, cands: &mut Vec<Candidate<T>>| {
        let dis = map_distortion(x, x2, anchors, &images);
        let mismatch = map_weight_mismatch(x, x2, anchors, &images);
        cands.push(Candidate {
            dis,
            mismatch,
            images,
        });
    };
    match total {
        Some(t) if t <= cfg.exhaustive_map_limit => {
            let mut images = vec![0usize; k];
            loop {
                push(images.clone(), &mut cands);
                let mut pos = k;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    images[pos] += 1;
                    if images[pos] < n {
                        break;
                    }
                    images[pos] = 0;
                }
                if images.iter().all(|&v| v == 0) {
                    break;
                }
            }
        }
        _ => {
            // Greedy by weight order, plus nearest-mark matching, plus
            // random maps.
            let mut by_weight_x: Vec<usize> = (0..n).collect();
            by_weight_x.sort_by(|&a, &b| cmp_finite(&x.weight(b), &x.weight(a)));
            let greedy: Vec<usize> = anchors
                .iter()
                .enumerate()
                .map(|(idx, _)| by_weight_x[idx % n])
                .collect();
            push(greedy, &mut cands);
            let nearest: Vec<usize> = anchors
                .iter()
                .map(|&l| {
                    (0..n)
                        .min_by(|&a, &b| {
                            cmp_finite(
                                &mark_distance_padded(x.mark(a), x2.mark(l)),
                                &mark_distance_padded(x.mark(b), x2.mark(l)),
                            )
                        })
                        .unwrap()
                })
                .collect();
            push(nearest, &mut cands);
            for _ in 0..cfg.max_map_evals.saturating_sub(2) {
                let images: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
                push(images, &mut cands);
            }
        }
    }
    cands.sort_by(|a, b| cmp_finite(&a.dis, &b.dis).then(cmp_finite(&a.mismatch, &b.mismatch)));
    cands.truncate(cfg.max_map_evals.max(1));
    cands.into_iter().map(|c| c.images).collect()
}

fn anchor_set<T: Scalar>(space: &FiniteMmmSpace<T>, cap: usize) -> Vec<usize> {
    let n = space.n_atoms();
    if n <= cap {
        return (0..n).collect();
    }
    // Heaviest atoms first; they carry the Prohorov-relevant mass.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| cmp_finite(&space.weight(b), &space.weight(a)));
    idx.truncate(cap);
    idx.sort_unstable();
    idx
}

/// Upper bound on the Gromov-Prohorov distance: the best Prohorov value over
/// the searched feasible glueings. Deterministic given `cfg`; symmetric in
/// its arguments.
pub fn gp_upper<T: Scalar>(x: &FiniteMmmSpace<T>, x2: &FiniteMmmSpace<T>, cfg: &GlueSearchCfg) -> T {
    // Canonical argument order makes the search, and hence the bound,
    // exactly symmetric.
    if x.lex_cmp(x2) == std::cmp::Ordering::Greater {
        return gp_upper(x2, x, cfg);
    }
    let (mx, mx2) = (x.total_mass(), x2.total_mass());
    if x.n_atoms() == 0 || mx <= T::zero() {
        return mx2.max(T::zero());
    }
    if x2.n_atoms() == 0 || mx2 <= T::zero() {
        return mx;
    }
    if x == x2 {
        return T::zero();
    }
    let mass_gap = (mx - mx2).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let tol = c::<T>(cfg.projection_tol);

    let mut best = T::infinity();
    let mut best_cross: Option<Vec<T>> = None;
    let mut consider = |g: Glueing<T>, best: &mut T, best_cross: &mut Option<Vec<T>>| {
        let v = g.prohorov(x, x2);
        if v < *best {
            *best = v;
            *best_cross = Some(g.cross);
        }
    };

    // Anchor maps in both directions.
    let anchors2 = anchor_set(x2, 32);
    for images in map_candidates(x, x2, &anchors2, cfg, &mut rng) {
        consider(
            anchor_map_glueing(x, x2, &anchors2, &images),
            &mut best,
            &mut best_cross,
        );
        if best <= mass_gap + tol {
            return best;
        }
    }
    let anchors1 = anchor_set(x, 32);
    for images in map_candidates(x2, x, &anchors1, cfg, &mut rng) {
        let g = anchor_map_glueing(x2, x, &anchors1, &images);
        // Transpose into left = x orientation.
        let mut cross = vec![T::zero(); x.n_atoms() * x2.n_atoms()];
        for j in 0..x2.n_atoms() {
            for i in 0..x.n_atoms() {
                cross[i * x2.n_atoms() + j] = g.cross[j * x.n_atoms() + i];
            }
        }
        consider(
            Glueing {
                n_left: x.n_atoms(),
                n_right: x2.n_atoms(),
                cross,
            },
            &mut best,
            &mut best_cross,
        );
        if best <= mass_gap + tol {
            return best;
        }
    }

    // Far join: everything at half the larger diameter.
    let k_const = x.diameter().max(x2.diameter()) / c::<T>(2.0);
    consider(
        Glueing {
            n_left: x.n_atoms(),
            n_right: x2.n_atoms(),
            cross: vec![k_const.max(T::zero()); x.n_atoms() * x2.n_atoms()],
        },
        &mut best,
        &mut best_cross,
    );

    // Random convex combinations of feasible glueings stay feasible: the
    // block constraints are linear inequalities in the cross entries.
    if cfg.seeds > 0 && best_cross.is_some() {
        let pool: Vec<Vec<T>> = {
            let mut pool = Vec::new();
            if let Some(bc) = &best_cross {
                pool.push(bc.clone());
            }
            pool.push(vec![
                k_const.max(T::zero());
                x.n_atoms() * x2.n_atoms()
            ]);
            pool
        };
        for _ in 0..cfg.seeds {
            let lambda = c::<T>(rng.random::<f64>());
            let mixed: Vec<T> = pool[0]
                .iter()
                .zip(&pool[1])
                .map(|(&a, &b)| lambda * a + (T::one() - lambda) * b)
                .collect();
            consider(
                Glueing {
                    n_left: x.n_atoms(),
                    n_right: x2.n_atoms(),
                    cross: mixed,
                },
                &mut best,
                &mut best_cross,
            );
            if best <= mass_gap + tol {
                return best;
            }
        }
    }

    // Coordinate descent: move one cross entry at a time inside its exact
    // feasibility interval, keeping strict improvements.
    if cfg.descent_steps > 0 {
        if let Some(mut cross) = best_cross.clone() {
            let (n, n2) = (x.n_atoms(), x2.n_atoms());
            let half = c::<T>(0.5);
            for _ in 0..cfg.descent_steps {
                let i = rng.random_range(0..n * n2);
                let (a, b) = (i / n2, i % n2);
                let (lo, hi) = entry_interval(x, x2, &cross, a, b);
                if lo > hi {
                    continue;
                }
                let current = cross[a * n2 + b];
                for cand in [lo, (lo + hi) * half, (lo + current) * half, hi] {
                    if cand == current {
                        continue;
                    }
                    cross[a * n2 + b] = cand;
                    let v = Glueing {
                        n_left: n,
                        n_right: n2,
                        cross: cross.clone(),
                    }
                    .prohorov(x, x2);
                    if v < best {
                        best = v;
                    } else {
                        cross[a * n2 + b] = current;
                    }
                }
                if best <= mass_gap + tol {
                    return best;
                }
            }
        }
    }

    best
}

/// Exact feasibility interval for one cross entry given all the others.
fn entry_interval<T: Scalar>(
    x: &FiniteMmmSpace<T>,
    x2: &FiniteMmmSpace<T>,
    cross: &[T],
    a: usize,
    b: usize,
) -> (T, T) {
    let (n, n2) = (x.n_atoms(), x2.n_atoms());
    let mut lo = T::zero();
    let mut hi = T::infinity();
    for k in 0..n {
        if k == a {
            continue;
        }
        let ckb = cross[k * n2 + b];
        lo = lo.max((x.dist(a, k) - ckb).abs());
        hi = hi.min(x.dist(a, k) + ckb);
    }
    for l in 0..n2 {
        if l == b {
            continue;
        }
        let cal = cross[a * n2 + l];
        lo = lo.max((x2.dist(b, l) - cal).abs());
        hi = hi.min(x2.dist(b, l) + cal);
    }
    (lo, hi)
}

/// Modulus constant: if the Gromov-Prohorov distance is below delta, the
/// monomial values differ by at most `kappa * delta`.
fn modulus_kappa<T: Scalar>(k: usize, bound: T, lip: T, mass_cap: T) -> T {
    let kk = c::<T>(k as f64);
    let m = mass_cap.max(T::zero());
    c::<T>(2.0) * bound * kk * m.powi(k as i32 - 1) + lip * kk * kk * m.powi(k as i32)
}

/// Certified lower bound on the Gromov-Prohorov distance: the total-mass gap
/// and Lipschitz-monomial discrepancy bounds, whichever is largest.
pub fn gp_lower<T: Scalar>(x: &FiniteMmmSpace<T>, x2: &FiniteMmmSpace<T>) -> T {
    let (mx, mx2) = (x.total_mass(), x2.total_mass());
    let mut lower = (mx - mx2).abs();
    let mass_cap = mx.max(mx2);
    if mass_cap <= T::zero() {
        return T::zero();
    }
    let budget = 1_000_000u64;

    // Distance monomials of order 2: phi = exp(-lambda d(x1, x2)),
    // bound 1, Lipschitz constant lambda in the summed tuple metric.
    for lambda in [0.5, 1.0, 2.0] {
        let lam = c::<T>(lambda);
        let phi = TestFunction::new(2, Expr::exp_neg(lam, Expr::dist(0, 1)))
            .expect("family expression is valid");
        let m = Monomial::new(phi);
        let (Ok(a), Ok(b)) = (
            evaluate_exact_with_budget(x, &m, budget),
            evaluate_exact_with_budget(x2, &m, budget),
        ) else {
            continue;
        };
        let kappa = modulus_kappa(2, T::one(), lam, mass_cap);
        if kappa > T::zero() {
            lower = lower.max((a - b).abs() / kappa);
        }
    }

    // Mark monomial of order 1: phi = exp(-|e|^2) over the shared
    // coordinates; gradient norm is at most 1.
    let dim = x.mark_dim().min(x2.mark_dim());
    if dim > 0 {
        let sq: Vec<Expr<T>> = (0..dim)
            .map(|c0| Expr::mul(vec![Expr::mark(0, c0), Expr::mark(0, c0)]))
            .collect();
        let phi = TestFunction::new(1, Expr::exp_neg(T::one(), Expr::add(sq)))
            .expect("family expression is valid");
        let m = Monomial::new(phi);
        if let (Ok(a), Ok(b)) = (
            evaluate_exact_with_budget(x, &m, budget),
            evaluate_exact_with_budget(x2, &m, budget),
        ) {
            let kappa = modulus_kappa(1, T::one(), T::one(), mass_cap);
            if kappa > T::zero() {
                lower = lower.max((a - b).abs() / kappa);
            }
        }
    }
    lower
}

/// Metric on nonzero spaces: reciprocal-mass gap plus the capped
/// Gromov-Prohorov upper bound.
pub fn star_distance<T: Scalar>(
    x: &FiniteMmmSpace<T>,
    x2: &FiniteMmmSpace<T>,
    cfg: &GlueSearchCfg,
) -> Result<T> {
    let (mx, mx2) = (x.total_mass(), x2.total_mass());
    if mx <= T::zero() || mx2 <= T::zero() {
        return Err(Error::ZeroMass);
    }
    let recip = (T::one() / mx - T::one() / mx2).abs();
    Ok(recip + gp_upper(x, x2, cfg).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn space(weights: Vec<f64>, dist: Vec<f64>) -> FiniteMmmSpace<f64> {
        FiniteMmmSpace::new(0, weights, vec![], dist).unwrap()
    }

    fn random_space(rng: &mut ChaCha8Rng, max_atoms: usize, dim: usize) -> FiniteMmmSpace<f64> {
        let n = rng.random_range(1..=max_atoms);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.5)).collect();
        let marks: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = rng.random_range(0.1..2.0);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        crate::space::metric_closure(&mut dist, n);
        FiniteMmmSpace::new(dim, weights, marks, dist).unwrap()
    }

    #[test]
    fn identical_spaces_are_at_distance_zero() {
        let x = space(vec![0.5, 0.5], vec![0.0, 2.0, 2.0, 0.0]);
        assert_eq!(gp_upper(&x, &x, &GlueSearchCfg::default()), 0.0);
        assert_eq!(gp_lower(&x, &x), 0.0);
    }

    #[test]
    fn null_space_costs_total_mass() {
        let x = space(vec![0.75, 0.5], vec![0.0, 1.0, 1.0, 0.0]);
        let z = FiniteMmmSpace::<f64>::zero(0);
        let cfg = GlueSearchCfg::default();
        assert_eq!(gp_upper(&x, &z, &cfg), 1.25);
        assert_eq!(gp_upper(&z, &x, &cfg), 1.25);
    }

    #[test]
    fn two_atom_versus_one_atom_reference_value() {
        // Two atoms at distance 2 with weights (0.5, 0.5) against a unit
        // atom: moving one atom's mass free and paying deficit 0.5 for the
        // other is optimal, value 0.5.
        let x = space(vec![0.5, 0.5], vec![0.0, 2.0, 2.0, 0.0]);
        let y = space(vec![1.0], vec![0.0]);
        let cfg = GlueSearchCfg::default();
        let up = gp_upper(&x, &y, &cfg);
        assert!(up <= 0.5 + 1e-12, "gp_upper = {up}");
        assert!(gp_lower(&x, &y) <= up + 1e-12);
        assert_eq!(up, gp_upper(&y, &x, &cfg));
    }

    #[test]
    fn mass_gap_bounds_from_below() {
        let x = space(vec![3.0], vec![0.0]);
        let y = space(vec![1.0], vec![0.0]);
        assert!(gp_lower(&x, &y) >= 2.0);
        assert!(gp_upper(&x, &y, &GlueSearchCfg::default()) >= 2.0);
    }

    #[test]
    fn anchor_map_glueings_are_always_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let dim = rng.random_range(0..=2);
            let x = random_space(&mut rng, 5, dim);
            let y = random_space(&mut rng, 5, dim);
            let k = rng.random_range(1..=y.n_atoms());
            let anchors: Vec<usize> = (0..k).collect();
            let images: Vec<usize> = (0..k).map(|_| rng.random_range(0..x.n_atoms())).collect();
            let g = anchor_map_glueing(&x, &y, &anchors, &images);
            Glueing::new(&x, &y, g.cross().to_vec()).expect("anchor glueing must be feasible");
        }
    }

    #[test]
    fn one_point_glueing_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_space(&mut rng, 6, 1);
        let y = random_space(&mut rng, 4, 1);
        let g = one_point_glueing(&x, &y, 0, 0);
        Glueing::new(&x, &y, g.cross().to_vec()).unwrap();
    }

    #[test]
    fn invalid_glueing_is_rejected() {
        let x = space(vec![1.0, 1.0], vec![0.0, 2.0, 2.0, 0.0]);
        let y = space(vec![1.0], vec![0.0]);
        // d(0,1) = 2 > c00 + c10 = 0.5: violates the triangle inequality.
        assert!(matches!(
            Glueing::new(&x, &y, vec![0.25, 0.25]),
            Err(Error::InvalidGlueing(_))
        ));
    }

    #[test]
    fn sandwich_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = GlueSearchCfg::default();
        for _ in 0..25 {
            let dim = rng.random_range(0..=1);
            let x = random_space(&mut rng, 5, dim);
            let y = random_space(&mut rng, 5, dim);
            let lo = gp_lower(&x, &y);
            let up = gp_upper(&x, &y, &cfg);
            assert!(
                lo <= up + 1e-9,
                "lower {lo} exceeds upper {up} on {x:?} vs {y:?}"
            );
        }
    }

    #[test]
    fn restriction_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let cfg = GlueSearchCfg::default();
        for _ in 0..30 {
            let dim = rng.random_range(0..=1);
            let x = random_space(&mut rng, 6, dim);
            let keep: Vec<usize> = (0..x.n_atoms()).filter(|_| rng.random_bool(0.6)).collect();
            if keep.is_empty() {
                continue;
            }
            let y = x.restrict(&keep);
            let bound = x.total_mass() - y.total_mass();
            let up = gp_upper(&y, &x, &cfg);
            assert!(
                up <= bound + 1e-9,
                "restriction bound violated: {up} > {bound}"
            );
        }
    }

    #[test]
    fn marks_separate_otherwise_identical_spaces() {
        let x = FiniteMmmSpace::new(1, vec![1.0], vec![0.0], vec![0.0]).unwrap();
        let y = FiniteMmmSpace::new(1, vec![1.0], vec![3.0], vec![0.0]).unwrap();
        let cfg = GlueSearchCfg::default();
        let up = gp_upper(&x, &y, &cfg);
        // The only transport distance is the mark gap 3, so the optimum is
        // to pay the full deficit 1 on both sides.
        assert_eq!(up, 1.0);
        assert!(gp_lower(&x, &y) > 0.0);
    }

    #[test]
    fn star_distance_definition() {
        let x = space(vec![1.0], vec![0.0]);
        let y = space(vec![2.0], vec![0.0]);
        let cfg = GlueSearchCfg::default();
        // Identical one-point geometries with masses 1 and 2: the Prohorov
        // distance in any glueing is the mass gap 1, so the capped term is 1
        // and the reciprocal-mass term is 0.5.
        let d = star_distance(&x, &y, &cfg).unwrap();
        assert_relative_eq!(d, 1.5, max_relative = 1e-12);
        assert_eq!(star_distance(&x, &x, &cfg).unwrap(), 0.0);
        let z = FiniteMmmSpace::<f64>::zero(0);
        assert!(matches!(star_distance(&x, &z, &cfg), Err(Error::ZeroMass)));
    }

    #[test]
    fn gp_upper_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_space(&mut rng, 5, 1);
        let y = random_space(&mut rng, 5, 1);
        let cfg = GlueSearchCfg::default();
        assert_eq!(gp_upper(&x, &y, &cfg), gp_upper(&x, &y, &cfg));
    }

    #[test]
    fn triangle_inequality_within_search_slack() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cfg = GlueSearchCfg::default();
        for _ in 0..15 {
            let x = random_space(&mut rng, 4, 0);
            let y = random_space(&mut rng, 4, 0);
            let z = random_space(&mut rng, 4, 0);
            let xy = gp_upper(&x, &y, &cfg);
            let yz = gp_upper(&y, &z, &cfg);
            let xz = gp_upper(&x, &z, &cfg);
            assert!(
                xz <= xy + yz + 0.02 + 1e-6,
                "triangle slack exceeded: {xz} > {xy} + {yz}"
            );
        }
    }
}
