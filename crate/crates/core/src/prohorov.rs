//! Exact Prohorov distance between finite measures on a shared finite
//! (pseudo)metric space.
//!
//! For finite measures P, Q on (S, d), the two-sided Prohorov distance is
//!
//! ```text
//! D(P, Q) = inf { eps >= 0 : P(C) <= Q(C^eps) + eps  and
//!                            Q(C) <= P(C^eps) + eps  for all C }
//! ```
//!
//! where `C^eps` is the closed eps-expansion. On a finite space the optimum
//! is attained at a critical value from a finite candidate set (the pairwise
//! distances and the achievable mass deficits), so it can be computed
//! exactly.
//!
//! The solver scans the distinct cross distances `t` in ascending order and
//! maintains `F(t)`, the maximum mass transportable between the supports
//! along pairs at distance `<= t` (a bipartite max flow; by max-flow min-cut
//! this equals the worst subset deficit on either side, per Strassen's
//! characterization). The worst deficit at level `t` is
//! `h(t) = max(|P|, |Q|) - F(t)`, a nonincreasing step function, and the
//! distance is `max(t_r, h(t_r))` at the first index with
//! `h(t_r) <= t_{r+1}`. The flow is warm-started across thresholds, so the
//! whole scan costs one incremental max-flow computation.

use crate::error::{Error, Result};
use crate::scalar::{cmp_finite, Scalar};
use crate::space::{tolerances, validate_metric};

fn validate_weights<T: Scalar>(w: &[T], n: usize, name: &str) -> Result<()> {
    if w.len() != n {
        return Err(Error::InvalidSpace(format!(
            "{name} has {} entries for {n} atoms",
            w.len()
        )));
    }
    for (i, &x) in w.iter().enumerate() {
        if !x.is_finite() || x < T::zero() {
            return Err(Error::InvalidSpace(format!("{name}[{i}] = {x}")));
        }
    }
    Ok(())
}

/// Exact Prohorov distance; validates that `dist` is an `n x n`
/// (pseudo)metric and that the weight vectors are admissible.
pub fn prohorov_exact<T: Scalar>(dist: &[T], n: usize, p: &[T], q: &[T]) -> Result<T> {
    if dist.len() != n * n {
        return Err(Error::InvalidMetric(format!(
            "matrix has {} entries for {n} atoms",
            dist.len()
        )));
    }
    validate_metric(dist, n, T::metric_tol())?;
    validate_weights(p, n, "p")?;
    validate_weights(q, n, "q")?;
    Ok(prohorov_trusted(dist, n, p, q))
}

/// Same computation without the O(n^3) metric validation; callers guarantee
/// `dist` is a valid (pseudo)metric.
pub(crate) fn prohorov_trusted<T: Scalar>(dist: &[T], n: usize, p: &[T], q: &[T]) -> T {
    debug_assert_eq!(dist.len(), n * n);
    prohorov_cross(dist, n, n, p, q)
}

/// Core solver over the cross-distance block alone. The conditions defining
/// the Prohorov distance only probe expansions from one support into the
/// other, so within-side distances never enter; `cross` is the `np x nq`
/// matrix of distances from the P atoms to the Q atoms of some ambient
/// (pseudo)metric space the caller vouches for.
pub(crate) fn prohorov_cross<T: Scalar>(cross: &[T], np: usize, nq: usize, p: &[T], q: &[T]) -> T {
    debug_assert_eq!(cross.len(), np * nq);
    debug_assert_eq!(p.len(), np);
    debug_assert_eq!(q.len(), nq);

    let ps: Vec<usize> = (0..np).filter(|&i| p[i] > T::zero()).collect();
    let qs: Vec<usize> = (0..nq).filter(|&j| q[j] > T::zero()).collect();
    let totp: T = ps.iter().map(|&i| p[i]).sum();
    let totq: T = qs.iter().map(|&j| q[j]).sum();
    let gap = (totp - totq).abs();
    if ps.is_empty() || qs.is_empty() {
        // Against the null measure the only binding condition is
        // P(supp) <= eps.
        return totp.max(totq);
    }

    // Cross arcs sorted by distance; the threshold list is the distinct
    // distance values with 0 prepended.
    let mut arcs: Vec<(T, u32, u32)> = Vec::with_capacity(ps.len() * qs.len());
    for (a, &i) in ps.iter().enumerate() {
        for (b, &j) in qs.iter().enumerate() {
            arcs.push((cross[i * nq + j], a as u32, b as u32));
        }
    }
    arcs.sort_by(|x, y| cmp_finite(&x.0, &y.0));
    let mut thresholds: Vec<T> = vec![T::zero()];
    for &(d, _, _) in &arcs {
        if d > *thresholds.last().unwrap() {
            thresholds.push(d);
        }
    }

    let mut flow = FlowState::new(ps.iter().map(|&i| p[i]).collect(), qs.iter().map(|&j| q[j]).collect());
    let maxmass = totp.max(totq);
    let minmass = totp.min(totq);
    let mut next_arc = 0usize;

    for (r, &t) in thresholds.iter().enumerate() {
        while next_arc < arcs.len() && arcs[next_arc].0 <= t {
            let (_, a, b) = arcs[next_arc];
            flow.add_arc(a as usize, b as usize);
            next_arc += 1;
        }
        flow.augment_to_max();
        let h = maxmass - flow.value;
        let next_t = thresholds.get(r + 1).copied();
        if flow.value == minmass {
            // The flow cannot grow further, so h stays at the mass gap;
            // jump to the first threshold interval containing it.
            let rr = match thresholds[r..].iter().rposition(|&tt| tt < gap) {
                Some(off) => r + off,
                None => r,
            };
            return thresholds[rr].max(gap);
        }
        match next_t {
            Some(nt) if h > nt => continue,
            _ => return t.max(h),
        }
    }
    unreachable!("threshold scan always terminates at the last threshold");
}

/// Incremental bipartite max flow: source -> P atoms (capacity p_i),
/// Q atoms -> sink (capacity q_j), unbounded middle arcs added as the
/// threshold scan opens them. Augmenting paths are found by BFS over the
/// residual graph; adding arcs only relaxes the problem, so the flow carries
/// over between thresholds.
struct FlowState<T> {
    cap_p: Vec<T>,
    cap_q: Vec<T>,
    // adj[a] = Q indices reachable from P atom a
    adj: Vec<Vec<u32>>,
    // radj[b] = P atoms with positive flow into Q atom b (backward residuals)
    flow: Vec<Vec<(u32, T)>>,
    value: T,
}

impl<T: Scalar> FlowState<T> {
    fn new(cap_p: Vec<T>, cap_q: Vec<T>) -> Self {
        let np = cap_p.len();
        let nq = cap_q.len();
        FlowState {
            cap_p,
            cap_q,
            adj: vec![Vec::new(); np],
            flow: vec![Vec::new(); nq],
            value: T::zero(),
        }
    }

    fn add_arc(&mut self, a: usize, b: usize) {
        self.adj[a].push(b as u32);
    }

    fn flow_entry(&mut self, b: usize, a: u32) -> &mut T {
        let pos = match self.flow[b].iter().position(|&(x, _)| x == a) {
            Some(p) => p,
            None => {
                self.flow[b].push((a, T::zero()));
                self.flow[b].len() - 1
            }
        };
        &mut self.flow[b][pos].1
    }

    fn augment_to_max(&mut self) {
        let np = self.cap_p.len();
        let nq = self.cap_q.len();
        let mut prev_q: Vec<u32> = vec![u32::MAX; np]; // P reached from which Q (backward step)
        let mut prev_p: Vec<u32> = vec![u32::MAX; nq]; // Q reached from which P (forward step)
        let mut seen_p = vec![false; np];
        let mut seen_q = vec![false; nq];
        let mut queue: Vec<u32> = Vec::with_capacity(np);

        loop {
            // BFS from every unsaturated source over residual arcs.
            for x in seen_p.iter_mut() {
                *x = false;
            }
            for x in seen_q.iter_mut() {
                *x = false;
            }
            queue.clear();
            for a in 0..np {
                if self.cap_p[a] > T::zero() {
                    seen_p[a] = true;
                    prev_q[a] = u32::MAX;
                    queue.push(a as u32);
                }
            }
            let mut found: Option<u32> = None;
            let mut head = 0;
            'bfs: while head < queue.len() {
                let a = queue[head] as usize;
                head += 1;
                for &b in &self.adj[a] {
                    let b = b as usize;
                    if seen_q[b] {
                        continue;
                    }
                    seen_q[b] = true;
                    prev_p[b] = a as u32;
                    if self.cap_q[b] > T::zero() {
                        found = Some(b as u32);
                        break 'bfs;
                    }
                    // Saturated sink arc: continue backward along positive flows.
                    for &(a2, f) in &self.flow[b] {
                        if f > T::zero() && !seen_p[a2 as usize] {
                            seen_p[a2 as usize] = true;
                            prev_q[a2 as usize] = b as u32;
                            queue.push(a2);
                        }
                    }
                }
            }
            let Some(end) = found else { return };

            // Bottleneck along the alternating path.
            let mut delta = self.cap_q[end as usize];
            let mut b = end as usize;
            loop {
                let a = prev_p[b] as usize;
                if prev_q[a] == u32::MAX {
                    delta = delta.min(self.cap_p[a]);
                    break;
                }
                let back = prev_q[a] as usize;
                let f = self.flow[back]
                    .iter()
                    .find(|&&(x, _)| x as usize == a)
                    .expect("backward arc has recorded flow")
                    .1;
                delta = delta.min(f);
                b = back;
            }

            // Apply.
            let mut b = end as usize;
            self.cap_q[b] -= delta;
            loop {
                let a = prev_p[b] as usize;
                *self.flow_entry(b, a as u32) += delta;
                if prev_q[a] == u32::MAX {
                    self.cap_p[a] -= delta;
                    break;
                }
                let back = prev_q[a] as usize;
                *self.flow_entry(back, a as u32) -= delta;
                b = back;
            }
            self.value += delta;
        }
    }
}

/// Brute-force oracle: enumerates every support subset on both sides.
/// Exponential in the support size, so supports are capped at 16 atoms.
pub fn prohorov_bruteforce<T: Scalar>(dist: &[T], n: usize, p: &[T], q: &[T]) -> Result<T> {
    if dist.len() != n * n {
        return Err(Error::InvalidMetric(format!(
            "matrix has {} entries for {n} atoms",
            dist.len()
        )));
    }
    validate_metric(dist, n, T::metric_tol())?;
    validate_weights(p, n, "p")?;
    validate_weights(q, n, "q")?;
    let ps: Vec<usize> = (0..n).filter(|&i| p[i] > T::zero()).collect();
    let qs: Vec<usize> = (0..n).filter(|&j| q[j] > T::zero()).collect();
    if ps.len() > 16 || qs.len() > 16 {
        return Err(Error::PreconditionViolated(format!(
            "brute force limited to supports of 16 atoms, got {} and {}",
            ps.len(),
            qs.len()
        )));
    }
    let side = |from: &[usize], fw: &[T], to: &[usize], tw: &[T]| -> T {
        // max over subsets C of `from` of the smallest eps with
        // From(C) <= To(C^eps) + eps.
        let mut worst = T::zero();
        for mask in 1u32..(1u32 << from.len()) {
            let mut cmass = T::zero();
            for (a, &i) in from.iter().enumerate() {
                if mask >> a & 1 == 1 {
                    cmass += fw[i];
                }
            }
            // Distance from C to each target atom, then scan the crossing.
            let mut reach: Vec<(T, T)> = to
                .iter()
                .map(|&j| {
                    let mut dmin = T::infinity();
                    for (a, &i) in from.iter().enumerate() {
                        if mask >> a & 1 == 1 {
                            dmin = dmin.min(dist[i * n + j]);
                        }
                    }
                    (dmin, tw[j])
                })
                .collect();
            reach.sort_by(|x, y| cmp_finite(&x.0, &y.0));
            let mut covered = T::zero();
            let mut idx = 0;
            let mut t = T::zero();
            let eps_c = loop {
                while idx < reach.len() && reach[idx].0 <= t {
                    covered += reach[idx].1;
                    idx += 1;
                }
                let g = cmass - covered;
                let next = reach.get(idx).map(|&(d, _)| d);
                match next {
                    Some(nt) if g > nt => t = nt,
                    _ => break t.max(g.max(T::zero())),
                }
            };
            worst = worst.max(eps_c);
        }
        worst
    };
    Ok(side(&ps, p, &qs, q).max(side(&qs, q, &ps, p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn closure(dist: &mut [f64], n: usize) {
        crate::space::metric_closure(dist, n);
    }

    #[test]
    fn identical_measures_are_at_distance_zero() {
        let dist = vec![0.0, 1.0, 1.0, 0.0];
        let p = vec![0.3, 0.7];
        assert_eq!(prohorov_exact(&dist, 2, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn unit_atom_versus_null_is_one() {
        let dist = vec![0.0];
        assert_eq!(prohorov_exact(&dist, 1, &[1.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(prohorov_exact(&dist, 1, &[0.0], &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn point_masses_at_small_distance() {
        // Equal unit masses at distance 0.3: moving beats paying deficit.
        let dist = vec![0.0, 0.3, 0.3, 0.0];
        let got = prohorov_exact(&dist, 2, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(got, 0.3);
        let oracle = prohorov_bruteforce(&dist, 2, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(got, oracle);
    }

    #[test]
    fn same_point_different_masses_pays_the_gap() {
        let dist = vec![0.0];
        assert_eq!(prohorov_exact(&dist, 1, &[2.0], &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn far_atoms_pay_deficit_not_transport() {
        // Masses 5 and 1 at distance 7: eps = 5 satisfies both conditions
        // with empty expansions, and no smaller eps does.
        let dist = vec![0.0, 7.0, 7.0, 0.0];
        let got = prohorov_exact(&dist, 2, &[5.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(got, 5.0);
        let oracle = prohorov_bruteforce(&dist, 2, &[5.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(got, oracle);
    }

    #[test]
    fn transport_splits_between_near_and_far() {
        // One source atom of mass 1; targets at distances 0.1 (mass 0.6)
        // and 2.0 (mass 0.4). Deficit after the near transfer is 0.4,
        // which beats expanding to 2.0.
        let mut dist = vec![
            0.0, 0.1, 2.0, //
            0.1, 0.0, 2.0, //
            2.0, 2.0, 0.0,
        ];
        closure(&mut dist, 3);
        let p = [1.0, 0.0, 0.0];
        let q = [0.0, 0.6, 0.4];
        let got = prohorov_exact(&dist, 3, &p, &q).unwrap();
        let oracle = prohorov_bruteforce(&dist, 3, &p, &q).unwrap();
        assert_eq!(got, oracle);
        assert_eq!(got, 0.4);
    }

    #[test]
    fn oracle_rejects_large_supports() {
        let n = 17;
        let mut dist = vec![1.0; n * n];
        for i in 0..n {
            dist[i * n + i] = 0.0;
        }
        let w = vec![1.0; n];
        assert!(matches!(
            prohorov_bruteforce(&dist, n, &w, &w),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn invalid_metric_is_rejected() {
        let dist = vec![0.0, 1.0, 2.0, 0.0];
        assert!(matches!(
            prohorov_exact(&dist, 2, &[1.0, 0.0], &[0.0, 1.0]),
            Err(Error::InvalidMetric(_))
        ));
    }

    /// Random dyadic instance: distances are multiples of 1/64 run through
    /// the shortest-path closure, weights multiples of 1/64 with zeros.
    /// All arithmetic on such instances is exact in f64.
    fn random_dyadic(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut dist = vec![0.0f64; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = rng.random_range(1..=64) as f64 / 64.0;
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        closure(&mut dist, n);
        let weights = |rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| {
                    if rng.random_bool(0.25) {
                        0.0
                    } else {
                        rng.random_range(0..=64) as f64 / 64.0
                    }
                })
                .collect::<Vec<_>>()
        };
        let p = weights(rng);
        let q = weights(rng);
        (dist, p, q)
    }

    #[test]
    fn flow_matches_subset_oracle_bitwise_on_dyadic_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let n = rng.random_range(1..=8);
            let (dist, p, q) = random_dyadic(&mut rng, n);
            let fast = prohorov_exact(&dist, n, &p, &q).unwrap();
            let slow = prohorov_bruteforce(&dist, n, &p, &q).unwrap();
            assert!(
                fast == slow,
                "mismatch: flow {fast} vs subsets {slow} on n={n}, p={p:?}, q={q:?}, d={dist:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn dominates_mass_gap_and_is_symmetric(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=7);
            let (dist, p, q) = random_dyadic(&mut rng, n);
            let d_pq = prohorov_exact(&dist, n, &p, &q).unwrap();
            let d_qp = prohorov_exact(&dist, n, &q, &p).unwrap();
            let gap = (p.iter().sum::<f64>() - q.iter().sum::<f64>()).abs();
            prop_assert_eq!(d_pq, d_qp);
            prop_assert!(d_pq >= gap);
            prop_assert!(d_pq >= 0.0);
        }

        #[test]
        fn triangle_inequality_on_shared_space(seed in 0u64..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E3779B9).wrapping_add(7));
            let n = rng.random_range(1..=6);
            let (dist, p, q) = random_dyadic(&mut rng, n);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(0..=64) as f64 / 64.0).collect();
            let d_pq = prohorov_exact(&dist, n, &p, &q).unwrap();
            let d_qr = prohorov_exact(&dist, n, &q, &r).unwrap();
            let d_pr = prohorov_exact(&dist, n, &p, &r).unwrap();
            prop_assert!(d_pr <= d_pq + d_qr + 1e-12,
                "triangle violated: {} > {} + {}", d_pr, d_pq, d_qr);
        }
    }
}
