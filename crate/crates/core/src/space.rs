//! Finite marked metric measure spaces.
//!
//! A [`FiniteMmmSpace`] is a finite metric space together with a nonnegative
//! weight and a Euclidean mark per atom. The measure is `sum_i w_i
//! delta_{(x_i, e_i)}`; atoms with zero weight are legal (they carry no mass
//! and are removed by [`FiniteMmmSpace::canonicalize`]). The empty space with
//! zero atoms represents the null measure `0`.
//!
//! Validation enforces the metric axioms on the distance matrix (symmetry,
//! zero diagonal, nonnegativity, triangle inequality) within
//! [`Scalar::metric_tol`], and finiteness of every entry. Internal
//! constructors that build matrices satisfying the axioms by construction
//! skip the cubic triangle sweep and spot-check a deterministic sample of
//! triples instead.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::{cmp_finite, Scalar};

/// Mark space `R^m` with the Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkSpaceSpec {
    pub dim: usize,
}

impl MarkSpaceSpec {
    pub fn new(dim: usize) -> Self {
        MarkSpaceSpec { dim }
    }

    /// Euclidean distance between two mark vectors of length `dim`.
    pub fn mark_distance<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        debug_assert_eq!(a.len(), self.dim);
        debug_assert_eq!(b.len(), self.dim);
        let mut sum = T::zero();
        for (x, y) in a.iter().zip(b) {
            let d = *x - *y;
            sum += d * d;
        }
        sum.sqrt()
    }
}

/// Finite marked metric measure space.
///
/// Stored row-major: `dist` is `n x n`, `marks` is `n x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMmmSpace<T: Scalar> {
    dim: usize,
    n: usize,
    weights: Vec<T>,
    marks: Vec<T>,
    dist: Vec<T>,
}

impl<T: Scalar> FiniteMmmSpace<T> {
    /// Validating constructor. `marks` and `dist` are row-major.
    pub fn new(dim: usize, weights: Vec<T>, marks: Vec<T>, dist: Vec<T>) -> Result<Self> {
        let n = weights.len();
        if marks.len() != n * dim {
            return Err(Error::InvalidSpace(format!(
                "marks has {} entries, expected {} x {}",
                marks.len(),
                n,
                dim
            )));
        }
        if dist.len() != n * n {
            return Err(Error::InvalidSpace(format!(
                "dist has {} entries, expected {n} x {n}",
                dist.len()
            )));
        }
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < T::zero() {
                return Err(Error::InvalidSpace(format!("weight {i} is {w}")));
            }
        }
        if let Some(bad) = marks.iter().find(|m| !m.is_finite()) {
            return Err(Error::InvalidSpace(format!("non-finite mark entry {bad}")));
        }
        validate_metric(&dist, n, T::metric_tol())?;
        Ok(FiniteMmmSpace {
            dim,
            n,
            weights,
            marks,
            dist,
        })
    }

    /// Constructor for matrices that satisfy the metric axioms by
    /// construction (restrictions, permutations, genealogy distances).
    /// Cheap invariants are still enforced; the cubic triangle sweep is
    /// replaced by a deterministic sample of triples.
    pub(crate) fn new_trusted(dim: usize, weights: Vec<T>, marks: Vec<T>, dist: Vec<T>) -> Self {
        let n = weights.len();
        debug_assert_eq!(marks.len(), n * dim);
        debug_assert_eq!(dist.len(), n * n);
        let tol = T::metric_tol();
        for i in 0..n {
            debug_assert!(dist[i * n + i].abs() <= tol);
        }
        // Pseudo-random triple sample; full validation lives in `new`.
        let mut state = 0x9e3779b97f4a7c15u64 ^ (n as u64);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as usize
        };
        if n >= 2 {
            for _ in 0..512.min(n * n) {
                let i = next() % n;
                let j = next() % n;
                let k = next() % n;
                debug_assert!((dist[i * n + j] - dist[j * n + i]).abs() <= tol);
                debug_assert!(dist[i * n + j] <= dist[i * n + k] + dist[k * n + j] + tol);
            }
        }
        FiniteMmmSpace {
            dim,
            n,
            weights,
            marks,
            dist,
        }
    }

    /// The null measure `0` (zero atoms) over marks of dimension `dim`.
    pub fn zero(dim: usize) -> Self {
        FiniteMmmSpace {
            dim,
            n: 0,
            weights: Vec::new(),
            marks: Vec::new(),
            dist: Vec::new(),
        }
    }

    /// Single-atom space.
    pub fn point(weight: T, mark: Vec<T>) -> Result<Self> {
        let dim = mark.len();
        Self::new(dim, vec![weight], mark, vec![T::zero()])
    }

    pub fn n_atoms(&self) -> usize {
        self.n
    }

    pub fn mark_dim(&self) -> usize {
        self.dim
    }

    pub fn mark_space(&self) -> MarkSpaceSpec {
        MarkSpaceSpec { dim: self.dim }
    }

    pub fn is_zero(&self) -> bool {
        self.n == 0
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> T {
        self.weights[i]
    }

    pub fn mark(&self, i: usize) -> &[T] {
        &self.marks[i * self.dim..(i + 1) * self.dim]
    }

    pub fn dist(&self, i: usize, j: usize) -> T {
        self.dist[i * self.n + j]
    }

    /// Distance matrix entry augmented with the Euclidean mark distance.
    pub fn dist_with_marks(&self, i: usize, j: usize) -> T {
        self.dist(i, j) + self.mark_space().mark_distance(self.mark(i), self.mark(j))
    }

    pub fn total_mass(&self) -> T {
        self.weights.iter().copied().sum()
    }

    pub fn diameter(&self) -> T {
        let mut d = T::zero();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                d = d.max(self.dist(i, j));
            }
        }
        d
    }

    /// Weighted mean mark vector of the normalized measure; zero vector for `0`.
    pub fn mean_mark(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.dim];
        let mass = self.total_mass();
        if mass <= T::zero() {
            return mean;
        }
        for i in 0..self.n {
            for (m, x) in mean.iter_mut().zip(self.mark(i)) {
                *m += self.weights[i] * *x;
            }
        }
        for m in &mut mean {
            *m /= mass;
        }
        mean
    }

    /// Drops zero-weight atoms and sorts the rest by
    /// `(weight, marks lexicographically, sorted distance row)`.
    ///
    /// The third key component is the multiset of the atom's distances, which
    /// is invariant under reordering, so the result is idempotent. Serialized
    /// canonical spaces built through the same pipeline are byte-comparable.
    pub fn canonicalize(&self) -> Self {
        let kept: Vec<usize> = (0..self.n).filter(|&i| self.weights[i] > T::zero()).collect();
        let mut sorted_rows: Vec<Vec<T>> = kept
            .iter()
            .map(|&i| {
                let mut row: Vec<T> = kept.iter().map(|&j| self.dist(i, j)).collect();
                row.sort_by(cmp_finite);
                row
            })
            .collect();
        let mut order: Vec<usize> = (0..kept.len()).collect();
        order.sort_by(|&a, &b| {
            cmp_finite(&self.weights[kept[a]], &self.weights[kept[b]])
                .then_with(|| lex_cmp(self.mark(kept[a]), self.mark(kept[b])))
                .then_with(|| lex_cmp(&sorted_rows[a], &sorted_rows[b]))
        });
        sorted_rows.clear();
        let perm: Vec<usize> = order.into_iter().map(|a| kept[a]).collect();
        self.reindex(&perm)
    }

    /// Total mass together with the weight-normalized space.
    pub fn normalize(&self) -> Result<(T, Self)> {
        let mass = self.total_mass();
        if mass <= T::zero() {
            return Err(Error::ZeroMass);
        }
        let mut out = self.clone();
        for w in &mut out.weights {
            *w /= mass;
        }
        Ok((mass, out))
    }

    /// Sub-space induced by the given atom indices (deduplicated, sorted).
    ///
    /// Panics if an index is out of range; an empty `keep` yields `0`.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut idx: Vec<usize> = keep.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&bad) = idx.last() {
            assert!(bad < self.n, "restrict index {bad} out of range for {} atoms", self.n);
        }
        self.reindex(&idx)
    }

    fn reindex(&self, idx: &[usize]) -> Self {
        let m = idx.len();
        let mut weights = Vec::with_capacity(m);
        let mut marks = Vec::with_capacity(m * self.dim);
        let mut dist = Vec::with_capacity(m * m);
        for &i in idx {
            weights.push(self.weights[i]);
            marks.extend_from_slice(self.mark(i));
        }
        for &i in idx {
            for &j in idx {
                dist.push(self.dist(i, j));
            }
        }
        FiniteMmmSpace {
            dim: self.dim,
            n: m,
            weights,
            marks,
            dist,
        }
    }

    /// True when `d(i,j) <= max(d(i,k), d(k,j)) + tol` for all triples.
    pub fn is_ultrametric(&self) -> bool {
        let tol = T::metric_tol();
        for i in 0..self.n {
            for j in 0..self.n {
                let dij = self.dist(i, j);
                for k in 0..self.n {
                    if dij > self.dist(i, k).max(self.dist(k, j)) + tol {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let ord = cmp_finite(x, y);
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    a.len().cmp(&b.len())
}

pub(crate) fn validate_metric<T: Scalar>(dist: &[T], n: usize, tol: T) -> Result<()> {
    debug_assert_eq!(dist.len(), n * n);
    for i in 0..n {
        let dii = dist[i * n + i];
        if dii.abs() > tol {
            return Err(Error::InvalidMetric(format!("diagonal entry ({i},{i}) is {dii}")));
        }
        for j in 0..n {
            let dij = dist[i * n + j];
            if !dij.is_finite() {
                return Err(Error::InvalidMetric(format!("entry ({i},{j}) is {dij}")));
            }
            if dij < -tol {
                return Err(Error::InvalidMetric(format!("negative entry ({i},{j}) = {dij}")));
            }
            if (dij - dist[j * n + i]).abs() > tol {
                return Err(Error::InvalidMetric(format!(
                    "asymmetric pair ({i},{j}): {dij} vs {}",
                    dist[j * n + i]
                )));
            }
        }
    }
    for i in 0..n {
        for k in 0..n {
            let dik = dist[i * n + k];
            for j in 0..n {
                if dist[i * n + j] > dik + dist[k * n + j] + tol {
                    return Err(Error::InvalidMetric(format!(
                        "triangle violation: d({i},{j}) > d({i},{k}) + d({k},{j})"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct AtomRepr<T> {
    weight: T,
    mark: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct SpaceRepr<T> {
    dim: usize,
    atoms: Vec<AtomRepr<T>>,
    dist: Vec<Vec<T>>,
}

impl<T: Scalar> Serialize for FiniteMmmSpace<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let atoms = (0..self.n)
            .map(|i| AtomRepr {
                weight: self.weights[i],
                mark: self.mark(i).to_vec(),
            })
            .collect();
        let dist = (0..self.n)
            .map(|i| self.dist[i * self.n..(i + 1) * self.n].to_vec())
            .collect();
        SpaceRepr {
            dim: self.dim,
            atoms,
            dist,
        }
        .serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for FiniteMmmSpace<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SpaceRepr::<T>::deserialize(deserializer)?;
        let n = repr.atoms.len();
        let mut weights = Vec::with_capacity(n);
        let mut marks = Vec::with_capacity(n * repr.dim);
        for (i, atom) in repr.atoms.into_iter().enumerate() {
            if atom.mark.len() != repr.dim {
                return Err(D::Error::custom(format!(
                    "atom {i} has mark of length {}, dim is {}",
                    atom.mark.len(),
                    repr.dim
                )));
            }
            weights.push(atom.weight);
            marks.extend(atom.mark);
        }
        if repr.dist.len() != n {
            return Err(D::Error::custom(format!(
                "dist has {} rows, expected {n}",
                repr.dist.len()
            )));
        }
        let mut dist = Vec::with_capacity(n * n);
        for (i, row) in repr.dist.into_iter().enumerate() {
            if row.len() != n {
                return Err(D::Error::custom(format!("dist row {i} has length {}", row.len())));
            }
            dist.extend(row);
        }
        FiniteMmmSpace::new(repr.dim, weights, marks, dist).map_err(D::Error::custom)
    }
}

/// Builds a valid distance matrix from an arbitrary nonnegative symmetric
/// seed by shortest-path (Floyd-Warshall) closure. Used by generators and
/// tests; min/plus preserves symmetry and the zero diagonal and enforces the
/// triangle inequality exactly.
pub fn metric_closure<T: Scalar>(dist: &mut [T], n: usize) {
    debug_assert_eq!(dist.len(), n * n);
    for i in 0..n {
        dist[i * n + i] = T::zero();
    }
    for k in 0..n {
        for i in 0..n {
            let dik = dist[i * n + k];
            for j in 0..n {
                let via = dik + dist[k * n + j];
                if via < dist[i * n + j] {
                    dist[i * n + j] = via;
                }
            }
        }
    }
}

/// Frozen defaults shared by tests and diagnostics.
pub mod tolerances {
    /// Metric-axiom validation slack for `f64` (see [`super::validate_metric`]).
    pub const METRIC_TOL_F64: f64 = 1e-9;
    /// Slack for inequality checks that are exact in real arithmetic and only
    /// accumulate floating-point rounding.
    pub const ROUNDING_TOL: f64 = 1e-9;
    /// Agreement tolerance between algorithmically independent computations of
    /// the same real quantity over generic float inputs.
    pub const CROSS_CHECK_TOL: f64 = 1e-12;
}

#[cfg(test)]
mod tests {
    use super::*;

    type S = FiniteMmmSpace<f64>;

    pub(crate) fn two_atom(w0: f64, w1: f64, d: f64) -> S {
        S::new(0, vec![w0, w1], vec![], vec![0.0, d, d, 0.0]).unwrap()
    }

    #[test]
    fn zero_space_properties() {
        let z = S::zero(2);
        assert!(z.is_zero());
        assert_eq!(z.total_mass(), 0.0);
        assert_eq!(z.canonicalize(), z);
        assert!(z.is_ultrametric());
        assert!(matches!(z.normalize(), Err(Error::ZeroMass)));
    }

    #[test]
    fn total_mass_sums_weights() {
        let s = two_atom(1.0, 3.0, 2.0);
        assert_eq!(s.total_mass(), 4.0);
    }

    #[test]
    fn normalize_divides_weights_and_returns_mass() {
        let s = two_atom(1.0, 3.0, 2.0);
        let (mass, norm) = s.normalize().unwrap();
        assert_eq!(mass, 4.0);
        assert_eq!(norm.weights(), &[0.25, 0.75]);
        assert_eq!(norm.dist(0, 1), 2.0);
    }

    #[test]
    fn canonicalize_drops_zero_weight_atoms_and_sorts() {
        let s = S::new(
            1,
            vec![2.0, 0.0, 1.0],
            vec![5.0, 9.0, 3.0],
            vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0],
        )
        .unwrap();
        let c = s.canonicalize();
        assert_eq!(c.n_atoms(), 2);
        assert_eq!(c.weights(), &[1.0, 2.0]);
        assert_eq!(c.mark(0), &[3.0]);
        assert_eq!(c.mark(1), &[5.0]);
        assert_eq!(c.dist(0, 1), 2.0);
        assert_eq!(c.canonicalize(), c);
    }

    #[test]
    fn canonical_serialization_is_byte_comparable() {
        let a = S::new(
            0,
            vec![2.0, 1.0],
            vec![],
            vec![0.0, 3.0, 3.0, 0.0],
        )
        .unwrap()
        .canonicalize();
        let b = S::new(
            0,
            vec![1.0, 2.0],
            vec![],
            vec![0.0, 3.0, 3.0, 0.0],
        )
        .unwrap()
        .canonicalize();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn restrict_keeps_submatrix() {
        let s = S::new(
            1,
            vec![1.0, 2.0, 3.0],
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0],
        )
        .unwrap();
        let r = s.restrict(&[2, 0, 2]);
        assert_eq!(r.n_atoms(), 2);
        assert_eq!(r.weights(), &[1.0, 3.0]);
        assert_eq!(r.dist(0, 1), 2.0);
        assert_eq!(s.restrict(&[0, 1, 2]), s);
        assert!(s.restrict(&[]).is_zero());
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn restrict_panics_on_bad_index() {
        two_atom(1.0, 1.0, 1.0).restrict(&[5]);
    }

    #[test]
    fn metric_validation_rejects_violations() {
        // Asymmetry.
        assert!(matches!(
            S::new(0, vec![1.0, 1.0], vec![], vec![0.0, 1.0, 2.0, 0.0]),
            Err(Error::InvalidMetric(_))
        ));
        // Triangle violation.
        let mut d = vec![0.0; 9];
        d[1] = 1.0;
        d[3] = 1.0;
        d[2] = 5.0;
        d[6] = 5.0;
        d[5] = 1.0;
        d[7] = 1.0;
        assert!(matches!(
            S::new(0, vec![1.0; 3], vec![], d),
            Err(Error::InvalidMetric(_))
        ));
        // Negative weight.
        assert!(matches!(
            S::new(0, vec![-1.0], vec![], vec![0.0]),
            Err(Error::InvalidSpace(_))
        ));
    }

    #[test]
    fn triangle_slack_is_tolerated() {
        let eps = 0.5e-9;
        let d = vec![0.0, 1.0, 2.0 + eps, 1.0, 0.0, 1.0, 2.0 + eps, 1.0, 0.0];
        assert!(S::new(0, vec![1.0; 3], vec![], d).is_ok());
    }

    #[test]
    fn ultrametric_detection() {
        // Coalescent-style: d(0,1)=1, d(0,2)=d(1,2)=2.
        let u = S::new(
            0,
            vec![1.0; 3],
            vec![],
            vec![0.0, 1.0, 2.0, 1.0, 0.0, 2.0, 2.0, 2.0, 0.0],
        )
        .unwrap();
        assert!(u.is_ultrametric());
        // A path metric is not ultrametric.
        let p = S::new(
            0,
            vec![1.0; 3],
            vec![],
            vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0],
        )
        .unwrap();
        assert!(!p.is_ultrametric());
    }

    #[test]
    fn json_round_trip_matches_schema() {
        let s = S::new(
            2,
            vec![0.5, 1.5],
            vec![0.0, 1.0, -1.0, 2.0],
            vec![0.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["dim"], 2);
        assert_eq!(json["atoms"][0]["weight"], 0.5);
        assert_eq!(json["atoms"][1]["mark"][0], -1.0);
        assert_eq!(json["dist"][0][1], 1.0);
        let back: S = serde_json::from_value(json).unwrap();
        assert_eq!(back, s);

        let zero: S = serde_json::from_str(r#"{"dim":3,"atoms":[],"dist":[]}"#).unwrap();
        assert!(zero.is_zero());
        assert_eq!(zero.mark_dim(), 3);
    }

    #[test]
    fn json_rejects_invalid_metric() {
        let bad = r#"{"dim":0,"atoms":[{"weight":1.0,"mark":[]},{"weight":1.0,"mark":[]}],"dist":[[0.0,1.0],[2.0,0.0]]}"#;
        assert!(serde_json::from_str::<S>(bad).is_err());
    }

    #[test]
    fn mark_distance_is_euclidean() {
        let spec = MarkSpaceSpec::new(2);
        let d: f64 = spec.mark_distance(&[0.0, 0.0], &[3.0, 4.0]);
        assert!((d - 5.0).abs() < 1e-15);
    }

    #[test]
    fn f32_instantiation_compiles_and_validates() {
        let s = FiniteMmmSpace::<f32>::new(
            0,
            vec![1.0f32, 2.0],
            vec![],
            vec![0.0, 1.5, 1.5, 0.0],
        )
        .unwrap();
        assert_eq!(s.total_mass(), 3.0f32);
        assert!((crate::scalar::c::<f32>(1.5) - 1.5f32).abs() < 1e-6);
    }
}
