//! Weighted directed graphs, k-hop neighborhoods, the weighted Laplacian and Chebyshev filtering.
//!
//! Edge `(i, j)` points from `i` to `j`; the 1-hop neighborhood of `i` is the set of sources of
//! edges that point at `i`, plus `i` itself.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::linalg::{power_iteration, Matrix};
use crate::rng::SplitMix64;

/// Relative tolerance on the Rayleigh quotient used for `lambda_max`.
pub const LAMBDA_TOL: f64 = 1e-8;
pub const LAMBDA_MAX_ITER: usize = 10_000;
const LAMBDA_SEED: u64 = 0x4C41_504C_4143_4531;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("endpoint out of range: edge ({from}, {to}) in a graph of {n} nodes")]
    EndpointOutOfRange { from: usize, to: usize, n: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("node {node} out of range for a graph of {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("edge ({0}, {1}) has no weight")]
    MissingWeight(usize, usize),
    #[error("non-finite weight on edge ({0}, {1})")]
    NonFiniteWeight(usize, usize),
    #[error("power iteration for lambda_max did not converge after {iterations} iterations (residual {residual:e})")]
    PowerIterationStalled { iterations: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected} rows, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: BTreeMap<(usize, usize), Option<f64>>,
    topology_index: usize,
}

impl Graph {
    /// Build a weighted graph from `(from, to, weight)` triples.
    pub fn new(n: usize, edges: &[(usize, usize, f64)], index: usize) -> Result<Self, GraphError> {
        let mut g = Self::empty(n, index)?;
        for &(i, j, w) in edges {
            g.insert(i, j, Some(w))?;
        }
        Ok(g)
    }

    /// Edges without weights; usable for neighborhood queries but not for Laplacians.
    pub fn unweighted(n: usize, edges: &[(usize, usize)], index: usize) -> Result<Self, GraphError> {
        let mut g = Self::empty(n, index)?;
        for &(i, j) in edges {
            g.insert(i, j, None)?;
        }
        Ok(g)
    }

    fn empty(n: usize, index: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Ok(Self { node_count: n, edges: BTreeMap::new(), topology_index: index })
    }

    fn insert(&mut self, i: usize, j: usize, w: Option<f64>) -> Result<(), GraphError> {
        let n = self.node_count;
        if i >= n || j >= n {
            return Err(GraphError::EndpointOutOfRange { from: i, to: j, n });
        }
        if matches!(w, Some(x) if !x.is_finite()) {
            return Err(GraphError::NonFiniteWeight(i, j));
        }
        if self.edges.insert((i, j), w).is_some() {
            return Err(GraphError::DuplicateEdge(i, j));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn topology_index(&self) -> usize {
        self.topology_index
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.topology_index = index;
        self
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains_key(&(i, j))
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.edges.get(&(i, j)).copied().flatten()
    }

    /// Edges in `(from, to)` order with their weights.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, Option<f64>)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    /// Sources of edges pointing at `node`, excluding `node` itself.
    pub fn in_neighbors(&self, node: usize) -> Vec<usize> {
        self.edges.keys().filter(|&&(i, j)| j == node && i != node).map(|&(i, _)| i).collect()
    }

    fn in_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(i, j) in self.edges.keys() {
            if i != j {
                adj[j].push(i);
            }
        }
        adj
    }

    fn check_node(&self, node: usize) -> Result<(), GraphError> {
        if node >= self.node_count {
            return Err(GraphError::NodeOutOfRange { node, n: self.node_count });
        }
        Ok(())
    }

    /// Dense weight matrix `[W]_ij = w_ij`.
    pub fn weight_matrix(&self) -> Result<Matrix, GraphError> {
        let mut w = Matrix::zeros(self.node_count, self.node_count);
        for (&(i, j), &wij) in &self.edges {
            w[(i, j)] = wij.ok_or(GraphError::MissingWeight(i, j))?;
        }
        Ok(w)
    }
}

/// Cumulative and exact-distance neighborhoods of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopSets {
    pub k: usize,
    /// Nodes within `k` hops, including the node itself.
    pub cumulative: BTreeSet<usize>,
    /// `exact[d]` holds the nodes exactly `d` hops away, `d = 0..=k`.
    pub exact: Vec<BTreeSet<usize>>,
}

pub fn k_hop(graph: &Graph, node: usize, k: usize) -> Result<HopSets, GraphError> {
    graph.check_node(node)?;
    let adj = graph.in_adjacency();
    let mut cumulative = BTreeSet::from([node]);
    let mut exact = vec![BTreeSet::from([node])];
    for _ in 0..k {
        let frontier = exact.last().expect("exact is never empty");
        let next: BTreeSet<usize> = frontier
            .iter()
            .flat_map(|&v| adj[v].iter().copied())
            .filter(|u| !cumulative.contains(u))
            .collect();
        cumulative.extend(next.iter().copied());
        exact.push(next);
    }
    Ok(HopSets { k, cumulative, exact })
}

/// Hop distance from `node` to every other node following in-edges (`None` when unreachable).
pub fn hop_distances(graph: &Graph, node: usize) -> Result<Vec<Option<usize>>, GraphError> {
    graph.check_node(node)?;
    let adj = graph.in_adjacency();
    let mut dist = vec![None; graph.node_count()];
    dist[node] = Some(0);
    let mut queue = VecDeque::from([node]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes have a distance");
        for &u in &adj[v] {
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    Ok(dist)
}

/// Whether a node counts itself among its 1-hop neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegreeConvention {
    SelfIncluded,
    #[default]
    SelfExcluded,
}

pub fn average_degree(graph: &Graph, convention: DegreeConvention) -> f64 {
    let adj = graph.in_adjacency();
    let extra = match convention {
        DegreeConvention::SelfIncluded => 1.0,
        DegreeConvention::SelfExcluded => 0.0,
    };
    adj.iter().map(|a| a.len() as f64 + extra).sum::<f64>() / graph.node_count() as f64
}

/// Weighted Laplacian `L = D - W`, its largest eigenvalue and `L~ = (2 / lambda_max) L - I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilter {
    pub laplacian: Matrix,
    pub lambda_max: f64,
    pub transformed: Matrix,
}

impl SpectralFilter {
    pub fn node_count(&self) -> usize {
        self.laplacian.rows()
    }
}

/// Asymmetric weights are symmetrized as `(W + W^T) / 2` first.
pub fn weighted_laplacian(graph: &Graph) -> Result<SpectralFilter, GraphError> {
    let mut w = graph.weight_matrix()?;
    let n = w.rows();
    if !w.is_symmetric(0.0) {
        w = w.add(&w.transpose()).scale(0.5);
    }
    let mut l = w.scale(-1.0);
    for i in 0..n {
        let degree: f64 = w.row(i).iter().sum();
        l[(i, i)] += degree;
    }
    let mut rng = SplitMix64::new(LAMBDA_SEED);
    let start: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5)).collect();
    let (lambda_max, iterations, residual, converged) =
        power_iteration(&l, &start, LAMBDA_TOL, LAMBDA_MAX_ITER);
    if !converged {
        return Err(GraphError::PowerIterationStalled { iterations, residual });
    }
    // An edgeless (or self-loop only) graph has L = 0; its transform is taken as -I.
    let transformed = if lambda_max > 0.0 {
        let mut t = l.scale(2.0 / lambda_max);
        for i in 0..n {
            t[(i, i)] -= 1.0;
        }
        t
    } else {
        Matrix::identity(n).scale(-1.0)
    };
    Ok(SpectralFilter { laplacian: l, lambda_max: lambda_max.max(0.0), transformed })
}

/// `[T_0(L~) H, T_1(L~) H, ..., T_order(L~) H]` by the three-term recurrence.
pub fn chebyshev_apply(
    filter: &SpectralFilter,
    h: &Matrix,
    order: usize,
) -> Result<Vec<Matrix>, GraphError> {
    let n = filter.node_count();
    if h.rows() != n {
        return Err(GraphError::DimensionMismatch { expected: n, got: h.rows() });
    }
    let lt = &filter.transformed;
    let mut out = Vec::with_capacity(order + 1);
    out.push(h.clone());
    if order >= 1 {
        out.push(lt.matmul(h));
    }
    for s in 2..=order {
        let mut next = lt.matmul(&out[s - 1]).scale(2.0);
        next.axpy(-1.0, &out[s - 2]);
        out.push(next);
    }
    Ok(out)
}

/// The dense polynomial matrices `T_s(L~)`, `s = 0..=order`.
pub fn chebyshev_matrices(filter: &SpectralFilter, order: usize) -> Vec<Matrix> {
    chebyshev_apply(filter, &Matrix::identity(filter.node_count()), order)
        .expect("identity has matching rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> Graph {
        Graph::new(3, &[(0, 1, 1.0), (1, 2, 1.0)], 0).unwrap()
    }

    #[test]
    fn build_graph_cases() {
        let g = Graph::new(1, &[], 0).unwrap();
        assert_eq!(g.edge_count(), 0);
        let g = Graph::new(3, &[(0, 1, 1.0), (1, 0, 1.0)], 7).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.clone().topology_index(), 7);
        assert_eq!(
            Graph::new(2, &[(0, 5, 1.0)], 0),
            Err(GraphError::EndpointOutOfRange { from: 0, to: 5, n: 2 })
        );
        assert_eq!(
            Graph::new(2, &[(0, 1, 1.0), (0, 1, 2.0)], 0),
            Err(GraphError::DuplicateEdge(0, 1))
        );
        assert_eq!(Graph::new(0, &[], 0), Err(GraphError::Empty));
    }

    #[test]
    fn k_hop_on_directed_path() {
        let g = path();
        let h1 = k_hop(&g, 2, 1).unwrap();
        assert_eq!(h1.cumulative, BTreeSet::from([1, 2]));
        assert_eq!(h1.exact[1], BTreeSet::from([1]));
        let h2 = k_hop(&g, 2, 2).unwrap();
        assert_eq!(h2.cumulative, BTreeSet::from([0, 1, 2]));
        assert_eq!(h2.exact[2], BTreeSet::from([0]));
        assert_eq!(k_hop(&g, 1, 0).unwrap().cumulative, BTreeSet::from([1]));
        assert_eq!(k_hop(&g, 2, 2).unwrap(), h2);
        assert!(matches!(k_hop(&g, 3, 1), Err(GraphError::NodeOutOfRange { .. })));
    }

    #[test]
    fn hop_distance_follows_in_edges() {
        let d = hop_distances(&path(), 2).unwrap();
        assert_eq!(d, vec![Some(2), Some(1), Some(0)]);
        let d = hop_distances(&path(), 0).unwrap();
        assert_eq!(d, vec![Some(0), None, None]);
    }

    #[test]
    fn degree_conventions() {
        let g = Graph::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], 0).unwrap();
        assert_eq!(average_degree(&g, DegreeConvention::SelfExcluded), 1.0);
        assert_eq!(average_degree(&g, DegreeConvention::SelfIncluded), 2.0);
        let g = Graph::new(4, &[], 0).unwrap();
        assert_eq!(average_degree(&g, DegreeConvention::SelfExcluded), 0.0);
    }

    #[test]
    fn two_node_laplacian() {
        let g = Graph::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], 0).unwrap();
        let f = weighted_laplacian(&g).unwrap();
        assert_eq!(f.laplacian, Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]));
        assert!((f.lambda_max - 2.0).abs() < 1e-7);
        let expected = Matrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]);
        assert!(f.transformed.max_abs_diff(&expected) < 1e-7);
    }

    #[test]
    fn self_loop_cancels() {
        let g = Graph::new(1, &[(0, 0, 3.0)], 0).unwrap();
        let f = weighted_laplacian(&g).unwrap();
        assert_eq!(f.laplacian, Matrix::zeros(1, 1));
        assert_eq!(f.transformed, Matrix::from_rows(&[vec![-1.0]]));
    }

    #[test]
    fn missing_weight_is_reported() {
        let g = Graph::unweighted(2, &[(0, 1)], 0).unwrap();
        assert_eq!(weighted_laplacian(&g), Err(GraphError::MissingWeight(0, 1)));
    }

    #[test]
    fn asymmetric_weights_are_symmetrized() {
        let g = Graph::new(2, &[(0, 1, 2.0)], 0).unwrap();
        let f = weighted_laplacian(&g).unwrap();
        assert_eq!(f.laplacian, Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]));
    }

    #[test]
    fn chebyshev_two_node_example() {
        let g = Graph::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], 0).unwrap();
        let f = weighted_laplacian(&g).unwrap();
        let ts = chebyshev_apply(&f, &Matrix::identity(2), 2).unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!(ts[0], Matrix::identity(2));
        assert!(ts[1].max_abs_diff(&f.transformed) < 1e-15);
        assert!(ts[2].max_abs_diff(&Matrix::identity(2)) < 1e-7);
        let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(chebyshev_apply(&f, &h, 0).unwrap(), vec![h]);
        assert!(matches!(
            chebyshev_apply(&f, &Matrix::zeros(3, 1), 1),
            Err(GraphError::DimensionMismatch { .. })
        ));
    }
}
