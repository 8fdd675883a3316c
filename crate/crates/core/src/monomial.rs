//! Monomials: polynomial test functionals of marked metric measure spaces.
//!
//! A monomial of order `k >= 1` evaluates
//!
//! ```text
//! Phi(X) = |X|^j * integral phi( (d(x_a, x_b))_{a,b < k}, (e_a)_{a < k} ) mu^k(dx, de)
//! ```
//!
//! where the integral runs over ordered `k`-tuples of atoms drawn with
//! repetition (the `k`-fold product measure, diagonals included) and `j` is
//! the mass power added by [`Monomial::lift_mass`]. The test function `phi`
//! is an expression tree over distance-matrix entries and mark coordinates
//! built from constants, sums, products, and the bounded primitives
//! `exp(-lambda t)`, `min(t, c)`, `1/(1+t)`.
//!
//! Boundedness is certified by interval arithmetic over the full domain
//! (distances in `[0, inf)`, marks in `(-inf, inf)`): [`TestFunction::new`]
//! records the certified bound, and a declared bound that interval evaluation
//! cannot certify is rejected. Projections such as a bare distance entry get
//! an infinite certified bound; they still evaluate (every finite space gives
//! a finite integral) but cannot back any claim that needs `phi` bounded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::space::FiniteMmmSpace;

/// Expression tree for test functions.
///
/// Serialized with an `"op"` tag, e.g.
/// `{"op": "exp_neg", "lambda": 1.0, "arg": {"op": "dist", "i": 0, "j": 1}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr<T: Scalar> {
    Const { value: T },
    /// Distance-matrix entry between tuple positions `i` and `j`.
    Dist { i: usize, j: usize },
    /// Mark coordinate `coord` of tuple position `i`.
    Mark { i: usize, coord: usize },
    Add { args: Vec<Expr<T>> },
    Mul { args: Vec<Expr<T>> },
    /// `exp(-lambda * arg)`, `lambda >= 0`.
    ExpNeg { lambda: T, arg: Box<Expr<T>> },
    /// `min(arg, c)`.
    MinConst { c: T, arg: Box<Expr<T>> },
    /// `1 / (1 + arg)`.
    InvOnePlus { arg: Box<Expr<T>> },
}

impl<T: Scalar> Expr<T> {
    pub fn constant(value: T) -> Self {
        Expr::Const { value }
    }
    pub fn dist(i: usize, j: usize) -> Self {
        Expr::Dist { i, j }
    }
    pub fn mark(i: usize, coord: usize) -> Self {
        Expr::Mark { i, coord }
    }
    pub fn add(args: Vec<Expr<T>>) -> Self {
        Expr::Add { args }
    }
    pub fn mul(args: Vec<Expr<T>>) -> Self {
        Expr::Mul { args }
    }
    pub fn exp_neg(lambda: T, arg: Expr<T>) -> Self {
        Expr::ExpNeg {
            lambda,
            arg: Box::new(arg),
        }
    }
    pub fn min_const(cap: T, arg: Expr<T>) -> Self {
        Expr::MinConst {
            c: cap,
            arg: Box::new(arg),
        }
    }
    pub fn inv_one_plus(arg: Expr<T>) -> Self {
        Expr::InvOnePlus { arg: Box::new(arg) }
    }

    fn validate(&self, arity: usize) -> Result<usize> {
        let mut max_coord = 0;
        self.validate_rec(arity, &mut max_coord)?;
        Ok(max_coord)
    }

    fn validate_rec(&self, arity: usize, max_coord: &mut usize) -> Result<()> {
        match self {
            Expr::Const { value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidTestFunction(format!("non-finite constant {value}")));
                }
            }
            Expr::Dist { i, j } => {
                if *i >= arity || *j >= arity {
                    return Err(Error::InvalidTestFunction(format!(
                        "dist({i},{j}) out of range for arity {arity}"
                    )));
                }
            }
            Expr::Mark { i, coord } => {
                if *i >= arity {
                    return Err(Error::InvalidTestFunction(format!(
                        "mark({i},{coord}) out of range for arity {arity}"
                    )));
                }
                *max_coord = (*max_coord).max(*coord + 1);
            }
            Expr::Add { args } | Expr::Mul { args } => {
                if args.is_empty() {
                    return Err(Error::InvalidTestFunction("empty operand list".into()));
                }
                for a in args {
                    a.validate_rec(arity, max_coord)?;
                }
            }
            Expr::ExpNeg { lambda, arg } => {
                if !lambda.is_finite() || *lambda < T::zero() {
                    return Err(Error::InvalidTestFunction(format!("exp_neg lambda {lambda}")));
                }
                arg.validate_rec(arity, max_coord)?;
            }
            Expr::MinConst { c, arg } => {
                if !c.is_finite() {
                    return Err(Error::InvalidTestFunction(format!("min_const cap {c}")));
                }
                arg.validate_rec(arity, max_coord)?;
            }
            Expr::InvOnePlus { arg } => arg.validate_rec(arity, max_coord)?,
        }
        Ok(())
    }

    fn interval(&self) -> Iv<T> {
        match self {
            Expr::Const { value } => Iv::point(*value),
            Expr::Dist { .. } => Iv {
                lo: T::zero(),
                hi: T::infinity(),
            },
            Expr::Mark { .. } => Iv {
                lo: T::neg_infinity(),
                hi: T::infinity(),
            },
            Expr::Add { args } => {
                let mut acc = Iv::point(T::zero());
                for a in args {
                    acc = acc.add(a.interval());
                }
                acc
            }
            Expr::Mul { args } => {
                // Group structurally identical factors so even powers are
                // known nonnegative; factors are otherwise treated as
                // independent (a sound over-approximation).
                let mut groups: Vec<(&Expr<T>, u32)> = Vec::new();
                for a in args {
                    match groups.iter_mut().find(|(e, _)| *e == a) {
                        Some((_, m)) => *m += 1,
                        None => groups.push((a, 1)),
                    }
                }
                let mut acc = Iv::point(T::one());
                for (e, m) in groups {
                    acc = acc.mul(e.interval().power(m));
                }
                acc
            }
            Expr::ExpNeg { lambda, arg } => {
                let iv = arg.interval();
                if *lambda == T::zero() {
                    return Iv::point(T::one());
                }
                let lo = if iv.hi == T::infinity() {
                    T::zero()
                } else {
                    (-*lambda * iv.hi).exp()
                };
                let hi = if iv.lo == T::neg_infinity() {
                    T::infinity()
                } else {
                    (-*lambda * iv.lo).exp()
                };
                Iv { lo, hi }
            }
            Expr::MinConst { c, arg } => {
                let iv = arg.interval();
                Iv {
                    lo: iv.lo.min(*c),
                    hi: iv.hi.min(*c),
                }
            }
            Expr::InvOnePlus { arg } => {
                let iv = arg.interval();
                if iv.lo <= -T::one() {
                    return Iv {
                        lo: T::neg_infinity(),
                        hi: T::infinity(),
                    };
                }
                let lo = if iv.hi == T::infinity() {
                    T::zero()
                } else {
                    T::one() / (T::one() + iv.hi)
                };
                Iv {
                    lo,
                    hi: T::one() / (T::one() + iv.lo),
                }
            }
        }
    }

    fn eval<V: TupleView<T>>(&self, view: &V) -> T {
        match self {
            Expr::Const { value } => *value,
            Expr::Dist { i, j } => view.dist(*i, *j),
            Expr::Mark { i, coord } => view.mark(*i, *coord),
            Expr::Add { args } => {
                let mut s = T::zero();
                for a in args {
                    s += a.eval(view);
                }
                s
            }
            Expr::Mul { args } => {
                let mut p = T::one();
                for a in args {
                    p *= a.eval(view);
                }
                p
            }
            Expr::ExpNeg { lambda, arg } => (-*lambda * arg.eval(view)).exp(),
            Expr::MinConst { c, arg } => arg.eval(view).min(*c),
            Expr::InvOnePlus { arg } => T::one() / (T::one() + arg.eval(view)),
        }
    }

    /// True when the expression reads neither distances nor marks.
    fn is_constant(&self) -> bool {
        match self {
            Expr::Const { .. } => true,
            Expr::Dist { .. } | Expr::Mark { .. } => false,
            Expr::Add { args } | Expr::Mul { args } => args.iter().all(|a| a.is_constant()),
            Expr::ExpNeg { arg, .. } | Expr::MinConst { arg, .. } | Expr::InvOnePlus { arg } => {
                arg.is_constant()
            }
        }
    }
}

/// Closed interval over the extended reals.
#[derive(Debug, Clone, Copy)]
struct Iv<T> {
    lo: T,
    hi: T,
}

impl<T: Scalar> Iv<T> {
    fn point(x: T) -> Self {
        Iv { lo: x, hi: x }
    }

    fn add(self, o: Self) -> Self {
        Iv {
            lo: self.lo + o.lo,
            hi: self.hi + o.hi,
        }
    }

    fn mul(self, o: Self) -> Self {
        // Corner products with the convention 0 * inf = 0: valid for closed
        // extended intervals because an infinite corner product is achieved
        // in the limit only along factors bounded away from zero, which some
        // other corner then captures.
        let p = |a: T, b: T| {
            if a == T::zero() || b == T::zero() {
                T::zero()
            } else {
                a * b
            }
        };
        let cs = [
            p(self.lo, o.lo),
            p(self.lo, o.hi),
            p(self.hi, o.lo),
            p(self.hi, o.hi),
        ];
        let mut lo = cs[0];
        let mut hi = cs[0];
        for &x in &cs[1..] {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        Iv { lo, hi }
    }

    fn power(self, m: u32) -> Self {
        if m == 1 {
            return self;
        }
        let amax = self.lo.abs().max(self.hi.abs());
        if m % 2 == 0 {
            let contains_zero = self.lo <= T::zero() && self.hi >= T::zero();
            let amin = if contains_zero {
                T::zero()
            } else {
                self.lo.abs().min(self.hi.abs())
            };
            Iv {
                lo: amin.powi(m as i32),
                hi: if amax == T::infinity() {
                    T::infinity()
                } else {
                    amax.powi(m as i32)
                },
            }
        } else {
            let powi = |x: T| {
                if x == T::infinity() {
                    T::infinity()
                } else if x == T::neg_infinity() {
                    T::neg_infinity()
                } else {
                    x.powi(m as i32)
                }
            };
            Iv {
                lo: powi(self.lo),
                hi: powi(self.hi),
            }
        }
    }
}

/// Anything a test function can be evaluated on: an ordered tuple of atoms
/// with pairwise distances and marks.
pub trait TupleView<T: Scalar> {
    fn dist(&self, a: usize, b: usize) -> T;
    fn mark(&self, a: usize, coord: usize) -> T;
}

struct SpaceTuple<'a, T: Scalar> {
    space: &'a FiniteMmmSpace<T>,
    tuple: &'a [usize],
}

impl<T: Scalar> TupleView<T> for SpaceTuple<'_, T> {
    fn dist(&self, a: usize, b: usize) -> T {
        self.space.dist(self.tuple[a], self.tuple[b])
    }
    fn mark(&self, a: usize, coord: usize) -> T {
        self.space.mark(self.tuple[a])[coord]
    }
}

/// Bounded continuous test function of a `k`-tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction<T: Scalar> {
    arity: usize,
    bound: T,
    max_mark_coord: usize,
    expr: Expr<T>,
}

impl<T: Scalar> TestFunction<T> {
    /// Builds a test function for `k`-tuples; the bound is certified by
    /// interval evaluation and may be infinite for bare projections.
    pub fn new(arity: usize, expr: Expr<T>) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidTestFunction("arity must be >= 1".into()));
        }
        let max_mark_coord = expr.validate(arity)?;
        let iv = expr.interval();
        if iv.lo.is_nan() || iv.hi.is_nan() {
            return Err(Error::InvalidTestFunction("interval evaluation produced NaN".into()));
        }
        let bound = iv.lo.abs().max(iv.hi.abs());
        Ok(TestFunction {
            arity,
            bound,
            max_mark_coord,
            expr,
        })
    }

    /// Like [`TestFunction::new`] but with a caller-declared bound, which must
    /// dominate the interval-certified one.
    pub fn with_declared_bound(arity: usize, expr: Expr<T>, declared: T) -> Result<Self> {
        let tf = Self::new(arity, expr)?;
        if !(declared.is_finite() && declared >= T::zero()) {
            return Err(Error::InvalidTestFunction(format!("declared bound {declared}")));
        }
        if tf.bound > declared {
            return Err(Error::UnboundedTestFunction(format!(
                "declared bound {declared} below certified bound {}",
                tf.bound
            )));
        }
        Ok(TestFunction {
            bound: declared,
            ..tf
        })
    }

    /// Constant-one function of a `k`-tuple (the pure mass monomial).
    pub fn one(arity: usize) -> Self {
        Self::new(arity, Expr::constant(T::one())).expect("constant is valid")
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Certified (or declared) bound on `|phi|`; may be infinite.
    pub fn bound(&self) -> T {
        self.bound
    }

    pub fn expr(&self) -> &Expr<T> {
        &self.expr
    }

    pub fn is_constant(&self) -> bool {
        self.expr.is_constant()
    }

    /// Evaluates on an explicit tuple view (used by sampled moment measures).
    pub fn eval_view<V: TupleView<T>>(&self, view: &V) -> T {
        self.expr.eval(view)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.max_mark_coord > dim {
            return Err(Error::DimensionMismatch(self.max_mark_coord, dim));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TestFunctionRepr<T: Scalar> {
    arity: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<T>,
    expr: Expr<T>,
}

impl<T: Scalar> Serialize for TestFunction<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TestFunctionRepr {
            arity: self.arity,
            bound: self.bound.is_finite().then_some(self.bound),
            expr: self.expr.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for TestFunction<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = TestFunctionRepr::<T>::deserialize(d)?;
        match repr.bound {
            Some(b) => TestFunction::with_declared_bound(repr.arity, repr.expr, b),
            None => TestFunction::new(repr.arity, repr.expr),
        }
        .map_err(D::Error::custom)
    }
}

/// Monomial: test function plus a total-mass power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial<T: Scalar> {
    pub phi: TestFunction<T>,
    pub mass_power: u32,
}

impl<T: Scalar> Monomial<T> {
    pub fn new(phi: TestFunction<T>) -> Self {
        Monomial { phi, mass_power: 0 }
    }

    /// Order `k` of the underlying tuple integral.
    pub fn order(&self) -> usize {
        self.phi.arity()
    }

    /// Multiplies the monomial by `|X|^extra`; the result is again a monomial.
    pub fn lift_mass(&self, extra: u32) -> Self {
        Monomial {
            phi: self.phi.clone(),
            mass_power: self.mass_power + extra,
        }
    }
}

/// Default cap on the number of tuple terms [`evaluate_exact`] will sum.
pub const DEFAULT_TERM_BUDGET: u64 = 100_000_000;

/// Exact evaluation by summing all `n^k` ordered tuples.
pub fn evaluate_exact<T: Scalar>(space: &FiniteMmmSpace<T>, m: &Monomial<T>) -> Result<T> {
    evaluate_exact_with_budget(space, m, DEFAULT_TERM_BUDGET)
}

pub fn evaluate_exact_with_budget<T: Scalar>(
    space: &FiniteMmmSpace<T>,
    m: &Monomial<T>,
    budget: u64,
) -> Result<T> {
    m.phi.check_dim(space.mark_dim())?;
    let k = m.order();
    let n = space.n_atoms();
    let mass = space.total_mass();
    if n == 0 || mass <= T::zero() {
        return Ok(T::zero());
    }
    let mass_factor = mass.powi(m.mass_power as i32);
    if m.phi.is_constant() {
        // phi is a constant c, so the tuple integral collapses to c * |X|^k.
        let value = m.phi.expr.eval(&SpaceTuple {
            space,
            tuple: &vec![0; k],
        });
        return Ok(mass_factor * value * mass.powi(k as i32));
    }
    let required = (n as u128).pow(k as u32);
    if required > budget as u128 {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let mut tuple = vec![0usize; k];
    let mut sum = T::zero();
    loop {
        let mut w = T::one();
        for &t in &tuple {
            w *= space.weight(t);
        }
        if w > T::zero() {
            sum += w * m.phi.expr.eval(&SpaceTuple {
                space,
                tuple: &tuple,
            });
        }
        // Odometer increment over base-n digits.
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(mass_factor * sum);
            }
            pos -= 1;
            tuple[pos] += 1;
            if tuple[pos] < n {
                break;
            }
            tuple[pos] = 0;
        }
    }
}

/// Monte Carlo evaluation: `samples` tuples drawn i.i.d. from the normalized
/// `k`-fold product measure, scaled by `|X|^{k+j}`. Returns the estimate and
/// its standard error. Deterministic in `seed`.
pub fn evaluate_mc<T: Scalar>(
    space: &FiniteMmmSpace<T>,
    m: &Monomial<T>,
    samples: u64,
    seed: u64,
) -> Result<(T, T)> {
    use rand::distr::weighted::WeightedIndex;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    m.phi.check_dim(space.mark_dim())?;
    if samples == 0 {
        return Err(Error::InvalidConfig("evaluate_mc needs samples >= 1".into()));
    }
    let k = m.order();
    let n = space.n_atoms();
    let mass = space.total_mass();
    if n == 0 || mass <= T::zero() {
        return Ok((T::zero(), T::zero()));
    }
    let scale = mass.powi((k + m.mass_power as usize) as i32);
    let weights: Vec<f64> = space.weights().iter().map(|w| w.to_f64_lossy()).collect();
    let index = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidSpace(format!("weights unusable for sampling: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuple = vec![0usize; k];
    let mut sum = T::zero();
    let mut sum_sq = T::zero();
    for _ in 0..samples {
        for slot in tuple.iter_mut() {
            *slot = index.sample(&mut rng);
        }
        let v = m.phi.expr.eval(&SpaceTuple {
            space,
            tuple: &tuple,
        });
        sum += v;
        sum_sq += v * v;
    }
    let n_s = c::<T>(samples as f64);
    let mean = sum / n_s;
    let estimate = scale * mean;
    let std_error = if samples > 1 {
        let var = ((sum_sq - sum * sum / n_s) / (n_s - T::one())).max(T::zero());
        scale * (var / n_s).sqrt()
    } else {
        T::zero()
    };
    Ok((estimate, std_error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    type E = Expr<f64>;

    fn two_atom_half() -> FiniteMmmSpace<f64> {
        FiniteMmmSpace::new(0, vec![0.5, 0.5], vec![], vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn exact_matches_hand_summed_tuples() {
        // Independent four-term oracle: ordered pairs (i,j) with weights
        // w_i w_j over d in {0, 1}.
        let s = two_atom_half();
        let phi_d = TestFunction::new(2, E::dist(0, 1)).unwrap();
        let got = evaluate_exact(&s, &Monomial::new(phi_d)).unwrap();
        let oracle = 0.25 * 0.0 + 0.25 * 1.0 + 0.25 * 1.0 + 0.25 * 0.0;
        assert_eq!(got, oracle);
        assert_eq!(got, 0.5);

        let phi_e = TestFunction::new(2, E::exp_neg(1.0, E::dist(0, 1))).unwrap();
        let got = evaluate_exact(&s, &Monomial::new(phi_e)).unwrap();
        let e1 = (-1.0f64).exp();
        let oracle = 0.25 * 1.0 + 0.25 * e1 + 0.25 * e1 + 0.25 * 1.0;
        assert_relative_eq!(got, oracle, max_relative = 1e-15);
        assert_relative_eq!(got, 0.5 + 0.5 * e1, max_relative = 1e-15);
        assert_relative_eq!(got, 0.68394, max_relative = 1e-5);
    }

    #[test]
    fn lift_mass_is_invisible_at_unit_mass() {
        let s = two_atom_half();
        let phi = TestFunction::new(2, E::dist(0, 1)).unwrap();
        let lifted = Monomial::new(phi).lift_mass(1);
        assert_eq!(evaluate_exact(&s, &lifted).unwrap(), 0.5);
    }

    #[test]
    fn lift_mass_multiplies_by_mass_power() {
        let s = FiniteMmmSpace::new(0, vec![1.0, 2.0], vec![], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let m = Monomial::new(TestFunction::new(2, E::exp_neg(0.5, E::dist(0, 1))).unwrap());
        let base = evaluate_exact(&s, &m).unwrap();
        for extra in 1..4u32 {
            let lifted = evaluate_exact(&s, &m.lift_mass(extra)).unwrap();
            assert_relative_eq!(lifted, 3.0f64.powi(extra as i32) * base, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_space_evaluates_to_zero() {
        let z = FiniteMmmSpace::<f64>::zero(1);
        let m = Monomial::new(TestFunction::one(3));
        assert_eq!(evaluate_exact(&z, &m).unwrap(), 0.0);
        assert_eq!(evaluate_mc(&z, &m, 10, 7).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn constant_phi_gives_mass_power() {
        let s = FiniteMmmSpace::new(0, vec![1.0, 2.0], vec![], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let m = Monomial::new(TestFunction::one(3));
        assert_relative_eq!(evaluate_exact(&s, &m).unwrap(), 27.0, max_relative = 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let n = 20usize;
        let mut dist = vec![1.0; n * n];
        for i in 0..n {
            dist[i * n + i] = 0.0;
        }
        let s = FiniteMmmSpace::new(0, vec![1.0; n], vec![], dist).unwrap();
        let m = Monomial::new(TestFunction::new(7, E::dist(0, 6)).unwrap());
        match evaluate_exact_with_budget(&s, &m, 1_000_000) {
            Err(Error::BudgetExceeded { required, budget }) => {
                assert_eq!(required, 20u128.pow(7));
                assert_eq!(budget, 1_000_000);
            }
            other => panic!("expected BudgetExceeded, got {other:?}"),
        }
    }

    #[test]
    fn mc_agrees_with_exact_within_errors() {
        let s = FiniteMmmSpace::new(
            1,
            vec![0.7, 0.2, 1.1],
            vec![0.5, -1.0, 2.0],
            vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0],
        )
        .unwrap();
        let phi = TestFunction::new(
            2,
            E::mul(vec![
                E::exp_neg(1.0, E::dist(0, 1)),
                E::inv_one_plus(E::mul(vec![E::mark(0, 0), E::mark(0, 0)])),
            ]),
        )
        .unwrap();
        let m = Monomial::new(phi).lift_mass(1);
        let exact = evaluate_exact(&s, &m).unwrap();
        let (est, se) = evaluate_mc(&s, &m, 40_000, 12345).unwrap();
        assert!(se > 0.0);
        assert!(
            (est - exact).abs() <= 4.0 * se,
            "mc {est} vs exact {exact}, se {se}"
        );
    }

    #[test]
    fn mc_is_seed_deterministic() {
        let s = two_atom_half();
        let m = Monomial::new(TestFunction::new(2, E::exp_neg(2.0, E::dist(0, 1))).unwrap());
        let a = evaluate_mc(&s, &m, 1000, 99).unwrap();
        let b = evaluate_mc(&s, &m, 1000, 99).unwrap();
        assert_eq!(a, b);
        let c = evaluate_mc(&s, &m, 1000, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn interval_bounds_are_certified() {
        let tf = TestFunction::new(2, E::exp_neg(1.0, E::dist(0, 1))).unwrap();
        assert_eq!(tf.bound(), 1.0);
        let tf = TestFunction::new(2, E::min_const(2.5, E::dist(0, 1))).unwrap();
        assert_eq!(tf.bound(), 2.5);
        let tf = TestFunction::new(2, E::inv_one_plus(E::dist(0, 1))).unwrap();
        assert_eq!(tf.bound(), 1.0);
        // Squared mark inside exp(-t) stays bounded thanks to power grouping.
        let tf = TestFunction::new(
            1,
            E::exp_neg(1.0, E::mul(vec![E::mark(0, 0), E::mark(0, 0)])),
        )
        .unwrap();
        assert_eq!(tf.bound(), 1.0);
        // Bare projection is unbounded.
        let tf = TestFunction::new(2, E::dist(0, 1)).unwrap();
        assert!(tf.bound().is_infinite());
    }

    #[test]
    fn declared_bound_must_dominate_certified() {
        assert!(TestFunction::with_declared_bound(2, E::exp_neg(1.0, E::dist(0, 1)), 1.0).is_ok());
        assert!(matches!(
            TestFunction::with_declared_bound(2, E::exp_neg(1.0, E::dist(0, 1)), 0.9),
            Err(Error::UnboundedTestFunction(_))
        ));
        assert!(matches!(
            TestFunction::with_declared_bound(2, E::dist(0, 1), 10.0),
            Err(Error::UnboundedTestFunction(_))
        ));
    }

    #[test]
    fn validation_rejects_bad_indices() {
        assert!(TestFunction::<f64>::new(2, E::dist(0, 2)).is_err());
        assert!(TestFunction::<f64>::new(1, E::mark(1, 0)).is_err());
        assert!(TestFunction::<f64>::new(2, E::exp_neg(-1.0, E::dist(0, 1))).is_err());
        assert!(TestFunction::<f64>::new(0, E::constant(1.0)).is_err());
    }

    #[test]
    fn mark_coordinate_out_of_space_dim_errors() {
        let s = two_atom_half(); // dim 0
        let m = Monomial::new(TestFunction::new(1, E::mark(0, 0)).unwrap());
        assert!(matches!(
            evaluate_exact(&s, &m),
            Err(Error::DimensionMismatch(1, 0))
        ));
    }

    #[test]
    fn json_round_trip_matches_schema() {
        let phi = TestFunction::new(2, E::exp_neg(1.0, E::dist(0, 1))).unwrap();
        let json = serde_json::to_value(&phi).unwrap();
        assert_eq!(json["expr"]["op"], "exp_neg");
        assert_eq!(json["expr"]["lambda"], 1.0);
        assert_eq!(json["expr"]["arg"]["op"], "dist");
        assert_eq!(json["expr"]["arg"]["i"], 0);
        assert_eq!(json["expr"]["arg"]["j"], 1);
        let back: TestFunction<f64> = serde_json::from_value(json).unwrap();
        assert_eq!(back, phi);

        let declared_too_small =
            r#"{"arity":2,"bound":0.5,"expr":{"op":"exp_neg","lambda":1.0,"arg":{"op":"dist","i":0,"j":1}}}"#;
        assert!(serde_json::from_str::<TestFunction<f64>>(declared_too_small).is_err());
    }
}
