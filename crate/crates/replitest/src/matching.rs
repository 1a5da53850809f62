//! Bipartite matching on the inner-product graph of two point clouds.

/// Bipartite graph with an edge (i, j) exactly when |<x_i, y_j>| >= s.
pub struct MatchingGraph {
    left: usize,
    right: usize,
    adj: Vec<Vec<usize>>,
    cached: Option<usize>,
}

impl MatchingGraph {
    pub fn from_points(xs: &[Vec<f64>], ys: &[Vec<f64>], s: f64) -> Self {
        let adj = xs
            .iter()
            .map(|x| {
                ys.iter()
                    .enumerate()
                    .filter(|(_, y)| {
                        let dot: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                        dot.abs() >= s
                    })
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Self { left: xs.len(), right: ys.len(), adj, cached: None }
    }

    pub fn from_edges(left: usize, right: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); left];
        for &(i, j) in edges {
            assert!(i < left && j < right);
            adj[i].push(j);
        }
        Self { left, right, adj, cached: None }
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }
}

const NIL: usize = usize::MAX;

/// Exact maximum matching size via Hopcroft-Karp, O(E sqrt(V)).
pub fn max_matching(graph: &mut MatchingGraph) -> usize {
    if let Some(c) = graph.cached {
        return c;
    }
    let (nl, nr) = (graph.left, graph.right);
    let mut match_l = vec![NIL; nl];
    let mut match_r = vec![NIL; nr];
    let mut dist = vec![0u32; nl];
    let mut size = 0usize;
    loop {
        // BFS from free left vertices layers the graph.
        let mut queue = std::collections::VecDeque::new();
        for u in 0..nl {
            if match_l[u] == NIL {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = u32::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &graph.adj[u] {
                match match_r[v] {
                    NIL => found = true,
                    w => {
                        if dist[w] == u32::MAX {
                            dist[w] = dist[u] + 1;
                            queue.push_back(w);
                        }
                    }
                }
            }
        }
        if !found {
            break;
        }
        fn dfs(
            u: usize,
            adj: &[Vec<usize>],
            match_l: &mut [usize],
            match_r: &mut [usize],
            dist: &mut [u32],
        ) -> bool {
            for idx in 0..adj[u].len() {
                let v = adj[u][idx];
                let w = match_r[v];
                if w == NIL || (dist[w] == dist[u] + 1 && dfs(w, adj, match_l, match_r, dist)) {
                    match_l[u] = v;
                    match_r[v] = u;
                    return true;
                }
            }
            dist[u] = u32::MAX;
            false
        }
        for u in 0..nl {
            if match_l[u] == NIL && dfs(u, &graph.adj, &mut match_l, &mut match_r, &mut dist) {
                size += 1;
            }
        }
    }
    graph.cached = Some(size);
    size
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive maximum matching by trying every subset of edges.
    pub(crate) fn brute_force_matching(left: usize, right: usize, edges: &[(usize, usize)]) -> usize {
        fn go(edges: &[(usize, usize)], used_l: u32, used_r: u32) -> usize {
            match edges.split_first() {
                None => 0,
                Some((&(i, j), rest)) => {
                    let skip = go(rest, used_l, used_r);
                    if used_l & (1 << i) == 0 && used_r & (1 << j) == 0 {
                        skip.max(1 + go(rest, used_l | (1 << i), used_r | (1 << j)))
                    } else {
                        skip
                    }
                }
            }
        }
        assert!(left <= 32 && right <= 32);
        go(edges, 0, 0)
    }

    #[test]
    fn perfect_and_empty_matchings() {
        let edges: Vec<(usize, usize)> = (0..4).map(|i| (i, i)).collect();
        let mut g = MatchingGraph::from_edges(4, 4, &edges);
        assert_eq!(max_matching(&mut g), 4);
        let mut g = MatchingGraph::from_edges(3, 3, &[]);
        assert_eq!(max_matching(&mut g), 0);
    }

    #[test]
    fn augmenting_path_case() {
        // A chain forcing one augmentation: 0-0, 1-0, 1-1.
        let mut g = MatchingGraph::from_edges(2, 2, &[(0, 0), (1, 0), (1, 1)]);
        assert_eq!(max_matching(&mut g), 2);
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        let mut state = 0x12345678u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        for _ in 0..200 {
            let l = 1 + (next() % 6) as usize;
            let r = 1 + (next() % 6) as usize;
            let mut edges = Vec::new();
            for i in 0..l {
                for j in 0..r {
                    if next() % 3 == 0 {
                        edges.push((i, j));
                    }
                }
            }
            let mut g = MatchingGraph::from_edges(l, r, &edges);
            assert_eq!(max_matching(&mut g), brute_force_matching(l, r, &edges));
        }
    }

    #[test]
    fn inner_product_threshold_defines_edges() {
        let xs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ys = vec![vec![2.0, 0.0], vec![0.0, -2.0]];
        // |<x_i, y_j>| >= 1.5 only on the diagonal.
        let mut g = MatchingGraph::from_points(&xs, &ys, 1.5);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(max_matching(&mut g), 2);
        let mut g = MatchingGraph::from_points(&xs, &ys, 2.5);
        assert_eq!(max_matching(&mut g), 0);
    }
}
