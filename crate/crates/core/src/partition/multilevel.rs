//! Multilevel k-way partitioning: heavy-edge coarsening, greedy graph
//! growing on the coarsest graph, and boundary refinement while projecting
//! back up.

use rand::seq::SliceRandom;
use rand::Rng;

/// Undirected graph with vertex and edge weights in CSR form.
#[derive(Debug, Clone)]
pub(crate) struct WGraph {
    xadj: Vec<usize>,
    adj: Vec<u32>,
    ew: Vec<u64>,
    vw: Vec<u64>,
}

impl WGraph {
    /// Parallel edges are merged (weights add up); self loops are dropped.
    pub(crate) fn from_edges(n: usize, edges: impl Iterator<Item = (u32, u32)>, vw: Vec<u64>) -> Self {
        let mut pairs: Vec<(u32, u32, u64)> = edges
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b), 1))
            .collect();
        Self::from_weighted(n, &mut pairs, vw)
    }

    fn from_weighted(n: usize, pairs: &mut Vec<(u32, u32, u64)>, vw: Vec<u64>) -> Self {
        pairs.sort_unstable();
        let mut merged: Vec<(u32, u32, u64)> = Vec::with_capacity(pairs.len());
        for &(a, b, w) in pairs.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == a && last.1 == b => last.2 += w,
                _ => merged.push((a, b, w)),
            }
        }
        let mut deg = vec![0usize; n + 1];
        for &(a, b, _) in &merged {
            deg[a as usize + 1] += 1;
            deg[b as usize + 1] += 1;
        }
        for i in 0..n {
            deg[i + 1] += deg[i];
        }
        let mut cursor = deg.clone();
        let mut adj = vec![0u32; deg[n]];
        let mut ew = vec![0u64; deg[n]];
        for &(a, b, w) in &merged {
            for (x, y) in [(a, b), (b, a)] {
                let c = &mut cursor[x as usize];
                adj[*c] = y;
                ew[*c] = w;
                *c += 1;
            }
        }
        Self { xadj: deg, adj, ew, vw }
    }

    pub(crate) fn n(&self) -> usize {
        self.vw.len()
    }

    fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let r = self.xadj[u]..self.xadj[u + 1];
        self.adj[r.clone()].iter().zip(&self.ew[r]).map(|(&v, &w)| (v as usize, w))
    }

    fn total_weight(&self) -> u64 {
        self.vw.iter().sum()
    }
}

/// Sum of weights of edges whose endpoints are in different parts.
pub(crate) fn cut(g: &WGraph, part: &[u32]) -> u64 {
    let mut c = 0;
    for u in 0..g.n() {
        for (v, w) in g.neighbors(u) {
            if u < v && part[u] != part[v] {
                c += w;
            }
        }
    }
    c
}

/// Heavy-edge matching; returns the coarse graph and the fine → coarse map.
fn coarsen(g: &WGraph, max_vw: u64, rng: &mut impl Rng) -> (WGraph, Vec<u32>) {
    let n = g.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut mate = vec![u32::MAX; n];
    for &u in &order {
        if mate[u] != u32::MAX {
            continue;
        }
        let mut best: Option<(u64, usize)> = None;
        for (v, w) in g.neighbors(u) {
            if mate[v] != u32::MAX || v == u || g.vw[u] + g.vw[v] > max_vw {
                continue;
            }
            if best.is_none_or(|(bw, bv)| w > bw || (w == bw && v < bv)) {
                best = Some((w, v));
            }
        }
        match best {
            Some((_, v)) => {
                mate[u] = v as u32;
                mate[v] = u as u32;
            }
            None => mate[u] = u as u32,
        }
    }
    let mut cmap = vec![u32::MAX; n];
    let mut nc = 0u32;
    for u in 0..n {
        if cmap[u] == u32::MAX {
            cmap[u] = nc;
            cmap[mate[u] as usize] = nc;
            nc += 1;
        }
    }
    let mut vw = vec![0u64; nc as usize];
    for u in 0..n {
        vw[cmap[u] as usize] += g.vw[u];
    }
    let mut pairs = Vec::with_capacity(g.adj.len() / 2);
    for u in 0..n {
        for (v, w) in g.neighbors(u) {
            let (a, b) = (cmap[u], cmap[v]);
            if u < v && a != b {
                pairs.push((a.min(b), a.max(b), w));
            }
        }
    }
    (WGraph::from_weighted(nc as usize, &mut pairs, vw), cmap)
}

/// Grows each part from a random start by repeatedly absorbing the frontier
/// vertex most connected to it.
fn grow(g: &WGraph, k: usize, max_w: u64, rng: &mut impl Rng) -> Vec<u32> {
    let n = g.n();
    let target = g.total_weight().div_ceil(k as u64);
    let mut part = vec![u32::MAX; n];
    let mut weight = vec![0u64; k];
    for p in 0..k.saturating_sub(1) {
        let free: Vec<usize> = (0..n).filter(|&u| part[u] == u32::MAX).collect();
        let Some(&start) = free.choose(rng) else { break };
        let mut conn = vec![0u64; n];
        let mut frontier: Vec<usize> = vec![start];
        while weight[p] < target {
            // most connected free vertex; ties to the lower id
            let best = frontier
                .iter()
                .copied()
                .filter(|&u| part[u] == u32::MAX)
                .max_by(|&a, &b| conn[a].cmp(&conn[b]).then(b.cmp(&a)));
            let u = match best {
                Some(u) => u,
                None => match (0..n).find(|&u| part[u] == u32::MAX) {
                    // disconnected remainder: jump to any free vertex
                    Some(u) => u,
                    None => break,
                },
            };
            if weight[p] + g.vw[u] > max_w {
                break;
            }
            part[u] = p as u32;
            weight[p] += g.vw[u];
            frontier.retain(|&x| x != u);
            for (v, w) in g.neighbors(u) {
                if part[v] == u32::MAX {
                    if conn[v] == 0 {
                        frontier.push(v);
                    }
                    conn[v] += w;
                }
            }
        }
    }
    let last = (k - 1) as u32;
    for u in 0..n {
        if part[u] == u32::MAX {
            part[u] = last;
        }
    }
    part
}

fn part_weights(g: &WGraph, part: &[u32], k: usize) -> Vec<u64> {
    let mut w = vec![0u64; k];
    for u in 0..g.n() {
        w[part[u] as usize] += g.vw[u];
    }
    w
}

/// Greedy boundary passes: move a vertex to the neighbouring part with the
/// largest cut reduction, or to an equally good lighter part, within `max_w`.
fn refine(g: &WGraph, part: &mut [u32], k: usize, max_w: u64, rng: &mut impl Rng, passes: usize) {
    let n = g.n();
    let mut weight = part_weights(g, part, k);
    let mut conn = vec![0u64; k];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..passes {
        order.shuffle(rng);
        let mut moved = false;
        for &u in &order {
            let from = part[u] as usize;
            conn.iter_mut().for_each(|c| *c = 0);
            let mut boundary = false;
            for (v, w) in g.neighbors(u) {
                conn[part[v] as usize] += w;
                boundary |= part[v] as usize != from;
            }
            if !boundary || weight[from] <= g.vw[u] {
                continue;
            }
            let mut best: Option<(i64, usize)> = None;
            for to in 0..k {
                if to == from || conn[to] == 0 || weight[to] + g.vw[u] > max_w {
                    continue;
                }
                let gain = conn[to] as i64 - conn[from] as i64;
                let balances = weight[to] + g.vw[u] < weight[from];
                if gain > 0 || (gain == 0 && balances) {
                    if best.is_none_or(|(bg, bt)| gain > bg || (gain == bg && weight[to] < weight[bt])) {
                        best = Some((gain, to));
                    }
                }
            }
            if let Some((_, to)) = best {
                part[u] = to as u32;
                weight[from] -= g.vw[u];
                weight[to] += g.vw[u];
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Moves vertices out of overweight parts, cheapest cut increase first,
/// until every part is within `max_w`.
fn enforce_balance(g: &WGraph, part: &mut [u32], k: usize, max_w: u64) {
    let mut weight = part_weights(g, part, k);
    let mut conn = vec![0u64; k];
    loop {
        let Some(from) = (0..k).find(|&p| weight[p] > max_w) else { return };
        let mut best: Option<(i64, usize, usize)> = None;
        for u in 0..g.n() {
            if part[u] as usize != from {
                continue;
            }
            conn.iter_mut().for_each(|c| *c = 0);
            for (v, w) in g.neighbors(u) {
                conn[part[v] as usize] += w;
            }
            for to in 0..k {
                if to == from || weight[to] + g.vw[u] > max_w {
                    continue;
                }
                let gain = conn[to] as i64 - conn[from] as i64;
                if best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, u, to));
                }
            }
        }
        let Some((_, u, to)) = best else {
            // no vertex fits anywhere; cannot happen with unit weights
            return;
        };
        part[u] = to as u32;
        weight[from] -= g.vw[u];
        weight[to] += g.vw[u];
    }
}

/// Full multilevel partition of `g` into `k` parts of weight at most `max_w`.
pub(crate) fn multilevel(g: &WGraph, k: usize, max_w: u64, rng: &mut impl Rng) -> Vec<u32> {
    if k == 1 {
        return vec![0; g.n()];
    }
    let coarsest_target = (20 * k).max(64);
    let max_vw = (g.total_weight() / (4 * k as u64)).max(1);
    let mut levels: Vec<(WGraph, Vec<u32>)> = Vec::new();
    let mut current = g.clone();
    while current.n() > coarsest_target {
        let (coarse, cmap) = coarsen(&current, max_vw, rng);
        if coarse.n() as f64 > 0.9 * current.n() as f64 {
            break;
        }
        levels.push((std::mem::replace(&mut current, coarse), cmap));
    }

    let mut best: Option<(u64, Vec<u32>)> = None;
    for _ in 0..4 {
        let mut p = grow(&current, k, max_w, rng);
        refine(&current, &mut p, k, max_w, rng, 8);
        let c = cut(&current, &p);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, p));
        }
    }
    let mut part = best.expect("at least one attempt").1;

    while let Some((fine, cmap)) = levels.pop() {
        part = cmap.iter().map(|&c| part[c as usize]).collect();
        refine(&fine, &mut part, k, max_w, rng, 8);
        current = fine;
    }
    enforce_balance(&current, &mut part, k, max_w);
    refine(&current, &mut part, k, max_w, rng, 4);
    part
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize, edges: &[(u32, u32)]) -> WGraph {
        WGraph::from_edges(n, edges.iter().copied(), vec![1; n])
    }

    #[test]
    fn merges_parallel_edges_and_drops_loops() {
        let g = unit(3, &[(0, 1), (1, 0), (2, 2), (1, 2)]);
        assert_eq!(g.neighbors(1).collect::<Vec<_>>(), vec![(0, 2), (2, 1)]);
        assert_eq!(g.neighbors(2).collect::<Vec<_>>(), vec![(1, 1)]);
    }

    #[test]
    fn coarsening_preserves_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let edges: Vec<(u32, u32)> = (0..200).map(|_| (rng.gen_range(0..100), rng.gen_range(0..100))).collect();
        let g = unit(100, &edges);
        let (c, cmap) = coarsen(&g, 4, &mut rng);
        assert_eq!(c.total_weight(), 100);
        assert!(c.n() < 100);
        // cut of a projected partition equals the coarse cut
        let coarse_part: Vec<u32> = (0..c.n() as u32).map(|i| i % 3).collect();
        let fine_part: Vec<u32> = cmap.iter().map(|&x| coarse_part[x as usize]).collect();
        assert_eq!(cut(&c, &coarse_part), cut(&g, &fine_part));
    }

    #[test]
    fn balance_is_enforced() {
        let g = unit(10, &[]);
        let mut part = vec![0u32; 10];
        enforce_balance(&g, &mut part, 2, 5);
        assert_eq!(part.iter().filter(|&&p| p == 0).count(), 5);
    }
}
