//! Moment measures of empirical laws and growth diagnostics for the
//! method of moments.
//!
//! The order-`k` moment measure of a law `a * sum_i w_i * delta(X_i)`
//! integrates test functions over ordered `k`-tuples of atoms drawn from
//! each space, weighted by `|X_i|^k`. [`estimate_moment`] evaluates such
//! integrals exactly per law atom and attaches a replicate-level standard
//! error; [`sample_moment_measure`] materializes a finite sampled
//! approximation whose total mass is exact by construction.
//!
//! [`carleman_report`] summarizes how fast a moment sequence grows: the
//! Carleman sum `sum_k m_k^(-1/(2k))` diverges for sequences growing no
//! faster than factorial squared, which is the classical sufficient
//! condition for the moments to determine the law.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::law::EmpiricalLaw;
use crate::monomial::{evaluate_exact, Expr, Monomial, TestFunction, TupleView};
use crate::scalar::{c, Scalar};
use crate::space::FiniteMmmSpace;

/// Weighted estimate of `a * sum_i w_i * F(X_i)` with a replicate-level
/// standard error. Dropped atoms enter as replicates with `F = 0`.
fn weighted_estimate<T: Scalar, F: FnMut(&FiniteMmmSpace<T>) -> Result<T>>(
    law: &EmpiricalLaw<T>,
    mut f: F,
) -> Result<(T, T)> {
    let w_tot = law.total_weight();
    if w_tot <= T::zero() {
        return Ok((T::zero(), T::zero()));
    }
    let mut sum_wf = T::zero();
    let mut values = Vec::with_capacity(law.atoms().len());
    for (space, w) in law.atoms() {
        let v = f(space)?;
        sum_wf += *w * v;
        values.push((v, *w));
    }
    let mean = sum_wf / w_tot;
    let mut var = T::zero();
    for &(v, w) in &values {
        var += w * w * (v - mean) * (v - mean);
    }
    for &w in law.dropped() {
        var += w * w * mean * mean;
    }
    Ok((law.scale() * sum_wf, law.scale() * var.sqrt()))
}

/// Integral of a monomial against the law, with a replicate-level
/// standard error: `(a * sum_i w_i * Phi(X_i), a * sqrt(sum_i w_i^2 *
/// (Phi_i - mean)^2))`.
pub fn estimate_moment<T: Scalar>(
    law: &EmpiricalLaw<T>,
    m: &Monomial<T>,
) -> Result<(T, T)> {
    weighted_estimate(law, |space| evaluate_exact(space, m))
}

/// Mass moment of order `k`: the monomial with constant test function,
/// `a * sum_i w_i * |X_i|^k`. Order zero is the total law mass.
pub fn mass_moment<T: Scalar>(law: &EmpiricalLaw<T>, k: usize) -> Result<(T, T)> {
    estimate_moment(law, &Monomial::new(TestFunction::one(k)))
}

/// One sampled tuple of the moment measure: a `k x k` distance matrix,
/// `k` mark rows, and a weight.
#[derive(Debug, Clone, Serialize)]
pub struct MomentPoint<T: Scalar> {
    pub weight: T,
    pub mark_dim: usize,
    /// Row-major `k x k` distances between the tuple's atoms.
    pub dist: Vec<T>,
    /// Concatenated marks, `k * mark_dim`.
    pub marks: Vec<T>,
}

struct PointView<'a, T: Scalar> {
    k: usize,
    p: &'a MomentPoint<T>,
}

impl<T: Scalar> TupleView<T> for PointView<'_, T> {
    fn dist(&self, a: usize, b: usize) -> T {
        self.p.dist[a * self.k + b]
    }

    fn mark(&self, a: usize, coord: usize) -> T {
        self.p.marks[a * self.p.mark_dim + coord]
    }
}

/// Finite sampled representation of an order-`k` moment measure.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalMomentMeasure<T: Scalar> {
    k: usize,
    points: Vec<MomentPoint<T>>,
}

impl<T: Scalar> EmpiricalMomentMeasure<T> {
    pub fn order(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &[MomentPoint<T>] {
        &self.points
    }

    /// Total mass; for order `k` this equals `a * sum_i w_i * |X_i|^k`
    /// exactly, independent of the sampled tuples.
    pub fn total(&self) -> T {
        self.points.iter().map(|p| p.weight).sum()
    }

    /// Integral of a test function of matching arity over the sampled
    /// tuples.
    pub fn integrate(&self, phi: &TestFunction<T>) -> Result<T> {
        if phi.arity() != self.k {
            return Err(Error::InvalidTestFunction(format!(
                "arity {} does not match measure order {}",
                phi.arity(),
                self.k
            )));
        }
        let mut acc = T::zero();
        for p in &self.points {
            phi.check_dim(p.mark_dim)?;
            acc += p.weight * phi.eval_view(&PointView { k: self.k, p });
        }
        Ok(acc)
    }
}

/// Draws `tuples_per_atom` ordered `k`-tuples from each law atom
/// (atom probabilities proportional to weight, with repetition) and
/// records their distances and marks. Each tuple carries weight
/// `a * w_i * |X_i|^k / tuples_per_atom`, so the measure's total mass is
/// exact. Law atom `i` uses stream `i` of the seed, making the sample
/// independent of iteration order.
pub fn sample_moment_measure<T: Scalar>(
    law: &EmpiricalLaw<T>,
    k: usize,
    tuples_per_atom: usize,
    seed: u64,
) -> Result<EmpiricalMomentMeasure<T>> {
    if k > 0 && tuples_per_atom == 0 {
        return Err(Error::InvalidConfig(
            "need at least one tuple per atom".into(),
        ));
    }
    let mut points = Vec::new();
    for (ai, (space, w)) in law.atoms().iter().enumerate() {
        let mass = space.total_mass();
        if k == 0 {
            points.push(MomentPoint {
                weight: law.scale() * *w,
                mark_dim: space.mark_dim(),
                dist: Vec::new(),
                marks: Vec::new(),
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ai as u64);
        let picker = rand::distr::weighted::WeightedIndex::new(
            space.weights().iter().map(|w| w.to_f64_lossy()),
        )
        .map_err(|e| Error::InvalidConfig(format!("atom weights unusable: {e}")))?;
        let weight = law.scale() * *w * mass.powi(k as i32) / c::<T>(tuples_per_atom as f64);
        let dim = space.mark_dim();
        for _ in 0..tuples_per_atom {
            let tuple: Vec<usize> = (0..k).map(|_| picker.sample(&mut rng)).collect();
            let mut dist = vec![T::zero(); k * k];
            for a in 0..k {
                for b in 0..k {
                    dist[a * k + b] = space.dist(tuple[a], tuple[b]);
                }
            }
            let mut marks = Vec::with_capacity(k * dim);
            for &t in &tuple {
                marks.extend_from_slice(space.mark(t));
            }
            points.push(MomentPoint {
                weight,
                mark_dim: dim,
                dist,
                marks,
            });
        }
    }
    Ok(EmpiricalMomentMeasure { k, points })
}

/// Growth summary of a positive moment sequence `m_1, m_2, ...`.
#[derive(Debug, Clone, Serialize)]
pub struct CarlemanReport<T: Scalar> {
    /// Terms `m_k^(-1/(2k))`.
    pub terms: Vec<T>,
    /// Sum of the terms; large values indicate moment determinacy.
    pub carleman_sum: T,
    /// Least-squares slope of `log term_k` against `k` over the tail half.
    pub tail_log_slope: T,
    /// True when the terms decay slower than geometrically (slope above
    /// `ln 0.8`), the signature of a divergent Carleman sum.
    pub divergent_like: bool,
    /// Coefficient of `k * log k` in the fit `log m_k ~ c0 + c1 * k log k
    /// + c2 * k^2`: roughly 1 for factorial growth, 2 for squared
    /// factorial.
    pub growth_exponent: T,
}

/// Summarizes the growth of `moments[i] = m_(i+1)`. All moments must be
/// positive and finite.
pub fn carleman_report<T: Scalar>(moments: &[T]) -> Result<CarlemanReport<T>> {
    if moments.len() < 4 {
        return Err(Error::InvalidConfig(
            "growth report needs at least four moments".into(),
        ));
    }
    for (i, &m) in moments.iter().enumerate() {
        if !(m > T::zero()) || !m.is_finite() {
            return Err(Error::NonPositiveMoment(i + 1));
        }
    }
    let terms: Vec<T> = moments
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let k = c::<T>((i + 1) as f64);
            (-m.ln() / (c::<T>(2.0) * k)).exp()
        })
        .collect();
    let carleman_sum = terms.iter().copied().sum();

    // Slope of log term against k over the tail half.
    let lo = moments.len() / 2;
    let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for i in lo..terms.len() {
        let x = c::<T>((i + 1) as f64);
        let y = terms[i].ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        cnt += T::one();
    }
    let denom = cnt * sxx - sx * sx;
    let tail_log_slope = if denom > T::zero() {
        (cnt * sxy - sx * sy) / denom
    } else {
        T::zero()
    };
    let divergent_like = tail_log_slope > c::<T>(0.8f64.ln());

    // Fit log m_k over the basis {1, k log k, k^2} by normal equations.
    let mut a = [[T::zero(); 3]; 3];
    let mut b = [T::zero(); 3];
    for (i, &m) in moments.iter().enumerate() {
        let k = (i + 1) as f64;
        let row = [T::one(), c::<T>(k * k.ln()), c::<T>(k * k)];
        let y = m.ln();
        for r in 0..3 {
            for s in 0..3 {
                a[r][s] += row[r] * row[s];
            }
            b[r] += row[r] * y;
        }
    }
    let growth_exponent = solve3(a, b).map(|x| x[1]).unwrap_or_else(T::zero);

    Ok(CarlemanReport {
        terms,
        carleman_sum,
        tail_log_slope,
        divergent_like,
        growth_exponent,
    })
}

/// Solves a 3x3 linear system by elimination with partial pivoting.
fn solve3<T: Scalar>(mut a: [[T; 3]; 3], mut b: [T; 3]) -> Option<[T; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&r, &s| {
            crate::scalar::cmp_finite(&a[r][col].abs(), &a[s][col].abs())
        })?;
        if a[piv][col].abs() <= T::epsilon() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..3 {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            for s in col..3 {
                let v = a[col][s];
                a[r][s] = a[r][s] - f * v;
            }
            let v = b[col];
            b[r] = b[r] - f * v;
        }
    }
    Some([b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]])
}

/// One test function's moment along a law trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct PhiMoment<T: Scalar> {
    pub label: String,
    pub order: usize,
    pub lambda: f64,
    /// `(value, se)` of the plain monomial integral.
    pub value: T,
    pub se: T,
    /// `(value, se)` with each space renormalized to unit mass before
    /// integrating: the shape contribution with the mass factored out.
    pub shape_value: T,
    pub shape_se: T,
}

/// Moment diagnostics of one law in a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct MomentDiagnostics<T: Scalar> {
    pub n: usize,
    /// `(value, se)` of the total law mass, the order-zero trajectory.
    pub total_mass: T,
    pub total_mass_se: T,
    /// `(order, value, se)` for mass moments `1..=k_max`.
    pub mass_moments: Vec<(usize, T, T)>,
    pub phi_moments: Vec<PhiMoment<T>>,
}

/// The standard separating family: `exp(-lambda * d(x1, x2))` at order 2,
/// `exp(-lambda * |mark|^2)` at order 1 when marks are present, and their
/// product at order 2, for each decay rate.
fn phi_family<T: Scalar>(mark_dim: usize, lambdas: &[f64]) -> Vec<(String, usize, f64, Monomial<T>)> {
    let mut fam = Vec::new();
    for &lam in lambdas {
        let l = c::<T>(lam);
        let dist_phi = TestFunction::new(2, Expr::exp_neg(l, Expr::dist(0, 1)))
            .expect("family expression is valid");
        fam.push((
            format!("exp(-{lam}*d01)"),
            2,
            lam,
            Monomial::new(dist_phi),
        ));
        if mark_dim > 0 {
            let sq = |who: usize| {
                Expr::add(
                    (0..mark_dim)
                        .map(|d| Expr::mul(vec![Expr::mark(who, d), Expr::mark(who, d)]))
                        .collect(),
                )
            };
            let mark_phi = TestFunction::new(1, Expr::exp_neg(l, sq(0)))
                .expect("family expression is valid");
            fam.push((
                format!("exp(-{lam}*|e|^2)"),
                1,
                lam,
                Monomial::new(mark_phi),
            ));
            let both = TestFunction::new(
                2,
                Expr::mul(vec![
                    Expr::exp_neg(l, Expr::dist(0, 1)),
                    Expr::exp_neg(l, Expr::add(vec![sq(0), sq(1)])),
                ]),
            )
            .expect("family expression is valid");
            fam.push((
                format!("exp(-{lam}*(d01+|e|^2))"),
                2,
                lam,
                Monomial::new(both),
            ));
        }
    }
    fam
}

/// Computes moment trajectories for a family of laws indexed by their
/// generation count. `k_max` controls the mass moments; the test-function
/// family uses the given decay rates on every law.
pub fn method_of_moments_diag<T: Scalar>(
    laws: &[(usize, EmpiricalLaw<T>)],
    k_max: usize,
    lambdas: &[f64],
) -> Result<Vec<MomentDiagnostics<T>>> {
    if laws.is_empty() {
        return Err(Error::InvalidConfig("need at least one law".into()));
    }
    let mut out = Vec::with_capacity(laws.len());
    for (n, law) in laws {
        let (tm, tm_se) = mass_moment(law, 0)?;
        let mut mass_moments = Vec::new();
        for k in 1..=k_max {
            let (v, se) = mass_moment(law, k)?;
            mass_moments.push((k, v, se));
        }
        let dim = law
            .atoms()
            .iter()
            .map(|(s, _)| s.mark_dim())
            .min()
            .unwrap_or(0);
        let mut phi_moments = Vec::new();
        for (label, order, lambda, m) in phi_family::<T>(dim, lambdas) {
            let (value, se) = estimate_moment(law, &m)?;
            let (shape_value, shape_se) = weighted_estimate(law, |space| {
                let (_, unit) = space.normalize()?;
                evaluate_exact(&unit, &m)
            })?;
            phi_moments.push(PhiMoment {
                label,
                order,
                lambda,
                value,
                se,
                shape_value,
                shape_se,
            });
        }
        out.push(MomentDiagnostics {
            n: *n,
            total_mass: tm,
            total_mass_se: tm_se,
            mass_moments,
            phi_moments,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn point(mass: f64) -> Arc<FiniteMmmSpace<f64>> {
        Arc::new(FiniteMmmSpace::new(0, vec![mass], vec![], vec![0.0]).unwrap())
    }

    fn law_two_points() -> EmpiricalLaw<f64> {
        EmpiricalLaw::new(2.0, vec![(point(1.5), 1.0), (point(0.5), 3.0)]).unwrap()
    }

    #[test]
    fn estimate_moment_value_and_se_hand_check() {
        let law = law_two_points();
        let (v, se) = mass_moment(&law, 1).unwrap();
        // value = 2 * (1 * 1.5 + 3 * 0.5) = 6; mean = 3 / 4 = 0.75;
        // se = 2 * sqrt(1 * 0.75^2 + 9 * 0.25^2) = 2 * sqrt(1.125).
        assert_relative_eq!(v, 6.0, max_relative = 1e-14);
        assert_relative_eq!(se, 2.0 * 1.125f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn dropped_replicates_enter_the_error_term() {
        let z = Arc::new(FiniteMmmSpace::<f64>::zero(0));
        let law = EmpiricalLaw::new(1.0, vec![(point(1.0), 1.0), (z, 1.0)]).unwrap();
        let (v, se) = mass_moment(&law, 1).unwrap();
        // mean = 0.5; deviations 0.5 on the alive atom and 0.5 on the
        // dropped replicate.
        assert_relative_eq!(v, 1.0, max_relative = 1e-14);
        assert_relative_eq!(se, (0.25f64 + 0.25).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn order_zero_moment_is_law_mass() {
        let law = law_two_points();
        let (v, _) = mass_moment(&law, 0).unwrap();
        assert_relative_eq!(v, law.total_mass(), max_relative = 1e-14);
    }

    #[test]
    fn sampled_measure_total_is_exact() {
        let two = Arc::new(
            FiniteMmmSpace::new(1, vec![0.5, 1.5], vec![0.2, -0.4], vec![0.0, 1.0, 1.0, 0.0])
                .unwrap(),
        );
        let law = EmpiricalLaw::new(0.5, vec![(two, 2.0), (point(1.0), 1.0)]).unwrap();
        for k in 0..=3 {
            let mm = sample_moment_measure(&law, k, 64, 9).unwrap();
            let exact: f64 = 0.5 * (2.0 * 2.0f64.powi(k as i32) + 1.0);
            assert_relative_eq!(mm.total(), exact, max_relative = 1e-12);
            assert_eq!(mm.order(), k);
        }
    }

    #[test]
    fn sampled_measure_is_deterministic() {
        let law = law_two_points();
        let a = sample_moment_measure(&law, 2, 32, 7).unwrap();
        let b = sample_moment_measure(&law, 2, 32, 7).unwrap();
        assert_eq!(a.points().len(), b.points().len());
        for (x, y) in a.points().iter().zip(b.points()) {
            assert_eq!(x.dist, y.dist);
            assert_eq!(x.weight, y.weight);
        }
    }

    #[test]
    fn sampled_integral_approximates_exact_moment() {
        let two = Arc::new(
            FiniteMmmSpace::new(0, vec![1.0, 1.0], vec![], vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
        );
        let law = EmpiricalLaw::new(1.0, vec![(two, 1.0)]).unwrap();
        let phi = TestFunction::new(2, Expr::exp_neg(1.0, Expr::dist(0, 1))).unwrap();
        let m = Monomial::new(phi.clone());
        let (exact, _) = estimate_moment(&law, &m).unwrap();
        let mm = sample_moment_measure(&law, 2, 20_000, 3).unwrap();
        let approx_v = mm.integrate(&phi).unwrap();
        assert!(
            (approx_v - exact).abs() < 0.05,
            "sampled {approx_v} vs exact {exact}"
        );
    }

    #[test]
    fn integrate_checks_arity() {
        let law = law_two_points();
        let mm = sample_moment_measure(&law, 1, 4, 1).unwrap();
        let phi2 = TestFunction::<f64>::one(2);
        assert!(mm.integrate(&phi2).is_err());
    }

    #[test]
    fn carleman_factorial_growth_reference_values() {
        // Oracle: straightforward accumulation of log factorials.
        let kmax = 50;
        let mut logfact = vec![0.0f64];
        for k in 1..=kmax {
            let prev = logfact[k - 1];
            logfact.push(prev + (k as f64).ln());
        }
        let fact_moments: Vec<f64> = (1..=kmax).map(|k| logfact[k].exp()).collect();
        let sq_moments: Vec<f64> = (1..=kmax).map(|k| (2.0 * logfact[k]).exp()).collect();
        let oracle_sum_fact: f64 = (1..=kmax)
            .map(|k| (-logfact[k] / (2.0 * k as f64)).exp())
            .sum();
        let oracle_sum_sq: f64 = (1..=kmax)
            .map(|k| (-logfact[k] / k as f64).exp())
            .sum();

        let rf = carleman_report(&fact_moments).unwrap();
        assert_relative_eq!(rf.carleman_sum, oracle_sum_fact, max_relative = 1e-10);
        assert!(rf.divergent_like);
        assert!((rf.growth_exponent - 1.0).abs() < 0.2, "{}", rf.growth_exponent);

        let rs = carleman_report(&sq_moments).unwrap();
        assert_relative_eq!(rs.carleman_sum, oracle_sum_sq, max_relative = 1e-10);
        // Terms fall like e/k: slowly, so still divergent-like.
        assert!(rs.divergent_like);
        assert!((rs.growth_exponent - 2.0).abs() < 0.4, "{}", rs.growth_exponent);
        assert!(rs.carleman_sum < rf.carleman_sum);
    }

    #[test]
    fn carleman_flags_fast_growth_as_convergent_like() {
        // m_k = exp(k^2): terms are exp(-k/2), a geometric tail.
        let moments: Vec<f64> = (1..=40).map(|k| ((k * k) as f64).exp()).collect();
        let r = carleman_report(&moments).unwrap();
        assert!(!r.divergent_like);
        assert!(r.carleman_sum < 2.0);
    }

    #[test]
    fn carleman_rejects_bad_input() {
        assert!(matches!(
            carleman_report(&[1.0, 2.0, 0.0, 3.0]),
            Err(Error::NonPositiveMoment(3))
        ));
        assert!(carleman_report(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn diagnostics_shape_values_factor_out_mass() {
        // For single-atom spaces the renormalized space is a unit point
        // mass, so the shape value of the order-1 family is exp(0) = 1
        // weighted by the law, while the plain value carries the mass.
        let m3 = Arc::new(FiniteMmmSpace::new(1, vec![3.0], vec![0.0], vec![0.0]).unwrap());
        let law = EmpiricalLaw::new(1.0, vec![(m3, 1.0)]).unwrap();
        let d = method_of_moments_diag(&[(1, law)], 2, &[1.0]).unwrap();
        assert_eq!(d.len(), 1);
        let mark_phi = d[0]
            .phi_moments
            .iter()
            .find(|p| p.order == 1)
            .expect("mark family present");
        assert_relative_eq!(mark_phi.value, 3.0, max_relative = 1e-12);
        assert_relative_eq!(mark_phi.shape_value, 1.0, max_relative = 1e-12);
        assert_relative_eq!(d[0].total_mass, 1.0, max_relative = 1e-12);
        assert_eq!(d[0].mass_moments[1], (2, 9.0, 0.0));
    }
}
