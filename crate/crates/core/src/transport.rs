//! Exact combinatorial solvers behind the Wasserstein-1 distance: an O(n^3)
//! assignment solver for uniform equal-count inputs and a successive
//! shortest-path transportation solver for general nonnegative weights.

use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns the optimal total cost and, for each row, its assigned column.
/// Potentials-based shortest augmenting paths; no float equality tests, so
/// termination is purely combinatorial.
pub(crate) fn assignment_min_cost(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    assert!(n > 0 && cost.iter().all(|row| row.len() == n));
    // 1-based arrays; column 0 is the virtual start of each augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=n {
        row_to_col[row_of[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][row_to_col[i]]).sum();
    (total, row_to_col)
}

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    rev: usize,
    cap: f64,
    cost: f64,
}

struct FlowNet {
    adj: Vec<Vec<Arc>>,
}

impl FlowNet {
    fn new(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) -> usize {
        let fwd = self.adj[from].len();
        let rev = self.adj[to].len();
        self.adj[from].push(Arc { to, rev, cap, cost });
        self.adj[to].push(Arc { to: from, rev: fwd, cap: 0.0, cost: -cost });
        fwd
    }
}

const CAP_EPS: f64 = 1e-15;

/// Exact optimal-transport cost between atomic masses: `supply[i]` units at
/// row i of `cost` move to `demand[j]` at column j, paying `cost[i][j]` per
/// unit. Supplies and demands must be nonnegative with equal totals; on a
/// bipartite uncapacitated network every augmentation exhausts a source or a
/// sink, so the successive-shortest-path loop terminates after at most
/// `supply.len() + demand.len()` rounds.
pub(crate) fn transport_min_cost(
    supply: &[f64],
    demand: &[f64],
    cost: &[Vec<f64>],
) -> Result<f64> {
    let ns = supply.len();
    let nt = demand.len();
    if ns == 0 || nt == 0 || cost.len() != ns || cost.iter().any(|r| r.len() != nt) {
        return Err(Error::input("transport problem shape mismatch"));
    }
    if supply.iter().chain(demand.iter()).any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::input("transport masses must be finite and nonnegative"));
    }
    let total: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total - total_d).abs() > 1e-12 * total.max(1.0) {
        return Err(Error::input("transport supply and demand totals differ"));
    }

    let source = ns + nt;
    let sink = ns + nt + 1;
    let mut net = FlowNet::new(ns + nt + 2);
    for (i, w) in supply.iter().enumerate() {
        net.add(source, i, *w, 0.0);
    }
    for (j, w) in demand.iter().enumerate() {
        net.add(ns + j, sink, *w, 0.0);
    }
    let mut pair_arcs = Vec::with_capacity(ns * nt);
    for i in 0..ns {
        for j in 0..nt {
            let idx = net.add(i, ns + j, total, cost[i][j]);
            pair_arcs.push((i, idx));
        }
    }

    let nodes = ns + nt + 2;
    loop {
        // Bellman-Ford on the residual network (reverse arcs carry negative
        // cost, so Dijkstra does not apply without potentials).
        let mut dist = vec![f64::INFINITY; nodes];
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for from in 0..nodes {
                if dist[from].is_infinite() {
                    continue;
                }
                for (ai, arc) in net.adj[from].iter().enumerate() {
                    if arc.cap > CAP_EPS && dist[from] + arc.cost < dist[arc.to] {
                        dist[arc.to] = dist[from] + arc.cost;
                        parent[arc.to] = Some((from, ai));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if parent[sink].is_none() {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut node = sink;
        while let Some((from, ai)) = parent[node] {
            bottleneck = bottleneck.min(net.adj[from][ai].cap);
            node = from;
        }
        let mut node = sink;
        while let Some((from, ai)) = parent[node] {
            net.adj[from][ai].cap -= bottleneck;
            let rev = net.adj[from][ai].rev;
            net.adj[node][rev].cap += bottleneck;
            node = from;
        }
    }

    let leftover: f64 = net.adj[source].iter().map(|a| a.cap).sum();
    if leftover > 1e-9 * total.max(1.0) {
        return Err(Error::numerical(
            "transport solver could not route the full mass",
        ));
    }
    let mut value = 0.0;
    for (i, idx) in pair_arcs {
        let arc = &net.adj[i][idx];
        let flow = net.adj[arc.to][arc.rev].cap;
        value += flow * arc.cost;
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn assignment_hand_instance() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let (total, cols) = assignment_min_cost(&cost);
        assert_eq!(total, 5.0);
        let mut seen = vec![false; 3];
        for c in cols {
            assert!(!seen[c]);
            seen[c] = true;
        }
    }

    #[test]
    fn assignment_matches_brute_force_on_seeded_matrices() {
        use rand::Rng;
        for seed in 0..20u64 {
            let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Certify, 0, 0);
            let n = 2 + (seed as usize % 5);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect())
                .collect();
            let (total, _) = assignment_min_cost(&cost);
            let oracle = brute_force_assignment(&cost);
            assert!(
                (total - oracle).abs() <= 1e-12 * oracle.max(1.0),
                "seed {seed}: {total} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn transport_hand_instance_with_fractional_mass() {
        // 0.75 at x=0 and 0.25 at x=1 move to 0.5 at y=0 and 0.5 at y=2.
        let supply = [0.75, 0.25];
        let demand = [0.5, 0.5];
        let cost = vec![vec![0.0, 2.0], vec![1.0, 1.0]];
        let value = transport_min_cost(&supply, &demand, &cost).unwrap();
        assert!((value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn transport_agrees_with_assignment_on_uniform_inputs() {
        use rand::Rng;
        for seed in 0..10u64 {
            let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Certify, 1, 0);
            let n = 2 + (seed as usize % 4);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..5.0)).collect())
                .collect();
            let w = vec![1.0 / n as f64; n];
            let flow = transport_min_cost(&w, &w, &cost).unwrap();
            let (matching, _) = assignment_min_cost(&cost);
            assert!(
                (flow - matching / n as f64).abs() <= 1e-12,
                "seed {seed}: flow {flow} vs matching {}",
                matching / n as f64
            );
        }
    }

    #[test]
    fn transport_rejects_mass_mismatch() {
        let err = transport_min_cost(&[1.0], &[0.5], &[vec![1.0]]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
