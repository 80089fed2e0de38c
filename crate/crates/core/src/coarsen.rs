//! Coarse-graining of graph states: partitions, resolved/unresolved bases, block left inverses,
//! coarse coefficient blocks and coarse-graph weights.
//!
//! Full states are node-major vectors `x = [x_0, ..., x_{N-1}]`, node `i` owning `n_i` entries.
//! Group `j` owns resolved coordinates `xbar_j` (dimension `m_j`) and unresolved coordinates `x'_j`
//! (dimension `s_j`), with `x = Phi xbar + Psi x'`.

use num_complex::Complex64;
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::linalg::{dot, norm2, spectral_norm, Matrix};

/// Smallest accepted pivot in the Gram factorization of a basis block.
pub const MIN_PIVOT: f64 = 1e-12;
const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoarsenError {
    #[error("node {0} is not assigned to a group")]
    Unassigned(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("node {0} appears in more than one group")]
    Overlap(usize),
    #[error("node {node} has state dimension {dim}, expected {expected}")]
    NodeDim { node: usize, dim: usize, expected: usize },
    #[error("basis block for group {0} is rank deficient")]
    RankDeficient(usize),
    #[error("basis block for group {group} has shape {rows}x{cols}, expected {expected_rows} rows and at most that many columns")]
    BlockShape { group: usize, rows: usize, cols: usize, expected_rows: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("all off-diagonal admittances have equal magnitude; cannot span the range [{0}, {1}]")]
    DegenerateAdmittance(f64, f64),
    #[error("no eta maps the admittances into [{lo}, {hi}]")]
    RangeUnreachable { lo: f64, hi: f64 },
    #[error("admittance weights need eta > 0 or a target range")]
    MissingEta,
    #[error("admittance matrix is singular")]
    SingularAdmittance,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Non-overlapping node groups covering every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignment: Vec<usize>,
    node_dims: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl Partition {
    /// `assignment[i]` is the group of node `i`; group ids must be `0..M` with no gaps.
    pub fn new(node_dims: &[usize], assignment: &[usize]) -> Result<Self, CoarsenError> {
        if assignment.len() < node_dims.len() {
            return Err(CoarsenError::Unassigned(assignment.len()));
        }
        if assignment.len() > node_dims.len() {
            return Err(CoarsenError::DimensionMismatch {
                expected: node_dims.len(),
                got: assignment.len(),
            });
        }
        let m = assignment.iter().max().map_or(0, |&g| g + 1);
        let mut groups = vec![Vec::new(); m];
        for (node, &g) in assignment.iter().enumerate() {
            groups[g].push(node);
        }
        if let Some(empty) = groups.iter().position(Vec::is_empty) {
            return Err(CoarsenError::EmptyGroup(empty));
        }
        Ok(Self { assignment: assignment.to_vec(), node_dims: node_dims.to_vec(), groups })
    }

    /// Partition from explicit node lists.
    pub fn from_groups(node_dims: &[usize], groups: &[Vec<usize>]) -> Result<Self, CoarsenError> {
        let mut assignment = vec![None; node_dims.len()];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(CoarsenError::EmptyGroup(g));
            }
            for &node in members {
                let slot = assignment
                    .get_mut(node)
                    .ok_or(CoarsenError::DimensionMismatch { expected: node_dims.len(), got: node + 1 })?;
                if slot.replace(g).is_some() {
                    return Err(CoarsenError::Overlap(node));
                }
            }
        }
        let assignment: Vec<usize> = assignment
            .iter()
            .enumerate()
            .map(|(node, g)| g.ok_or(CoarsenError::Unassigned(node)))
            .collect::<Result<_, _>>()?;
        Self::new(node_dims, &assignment)
    }

    /// `groups` blocks of `size` consecutive nodes, each of dimension `dim`.
    pub fn consecutive(groups: usize, size: usize, dim: usize) -> Self {
        let assignment: Vec<usize> = (0..groups * size).map(|i| i / size).collect();
        Self::new(&vec![dim; groups * size], &assignment).expect("consecutive layout is valid")
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_dims.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn node_dims(&self) -> &[usize] {
        &self.node_dims
    }

    /// `N_x`, the full state dimension.
    pub fn state_dim(&self) -> usize {
        self.node_dims.iter().sum()
    }

    /// Offset of node `i` in the full state vector.
    pub fn node_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.node_dims.len());
        let mut acc = 0;
        for &d in &self.node_dims {
            offsets.push(acc);
            acc += d;
        }
        offsets
    }

    /// Total state dimension of the nodes in group `j`.
    pub fn group_state_dim(&self, j: usize) -> usize {
        self.groups[j].iter().map(|&i| self.node_dims[i]).sum()
    }

    /// Map a full state (node-major) to the stacked group-local vectors.
    fn gather_group(&self, j: usize, x: &[f64], offsets: &[usize]) -> Vec<f64> {
        self.groups[j]
            .iter()
            .flat_map(|&i| x[offsets[i]..offsets[i] + self.node_dims[i]].iter().copied())
            .collect()
    }
}

/// Resolved/unresolved bases with their block left inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMap {
    pub partition: Partition,
    /// `m_j` per group.
    pub resolved_dims: Vec<usize>,
    /// `N_x x n`, block structure `[Phi]_ij = Phi_ij` for `i in V_j`.
    pub phi: Matrix,
    /// `N_x x (N_x - n)`, same block structure as `phi`.
    pub psi: Matrix,
    pub phi_plus: Matrix,
    pub psi_plus: Matrix,
    /// `|Phi|_2 = |Psi|_2`.
    pub r: f64,
}

impl CoarseMap {
    /// Bases from per-group resolved blocks `Phi_j` (rows stacked in group member order).
    ///
    /// `Psi_j` completes `Phi_j` by Gram-Schmidt and is rescaled so that `|Psi|_2 = |Phi|_2`.
    pub fn from_group_bases(partition: Partition, phi_blocks: Vec<Matrix>) -> Result<Self, CoarsenError> {
        let m = partition.group_count();
        if phi_blocks.len() != m {
            return Err(CoarsenError::DimensionMismatch { expected: m, got: phi_blocks.len() });
        }
        for (j, b) in phi_blocks.iter().enumerate() {
            let rows = partition.group_state_dim(j);
            if b.rows() != rows || b.cols() > rows || b.cols() == 0 {
                return Err(CoarsenError::BlockShape {
                    group: j,
                    rows: b.rows(),
                    cols: b.cols(),
                    expected_rows: rows,
                });
            }
        }
        let phi_plus_blocks: Vec<Matrix> = phi_blocks
            .iter()
            .enumerate()
            .map(|(j, b)| left_inverse(b).ok_or(CoarsenError::RankDeficient(j)))
            .collect::<Result<_, _>>()?;
        let r = phi_blocks.iter().map(|b| spectral_norm(b, NORM_TOL)).fold(0.0, f64::max);
        let psi_blocks: Vec<Matrix> = phi_blocks
            .iter()
            .map(|b| orthogonal_complement(b).scale(r))
            .collect();
        let psi_plus_blocks: Vec<Matrix> = psi_blocks
            .iter()
            .enumerate()
            .map(|(j, b)| {
                if b.cols() == 0 {
                    Ok(Matrix::zeros(0, b.rows()))
                } else {
                    left_inverse(b).ok_or(CoarsenError::RankDeficient(j))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self::assemble(partition, &phi_blocks, &phi_plus_blocks, &psi_blocks, &psi_plus_blocks, r))
    }

    fn assemble(
        partition: Partition,
        phi_blocks: &[Matrix],
        phi_plus_blocks: &[Matrix],
        psi_blocks: &[Matrix],
        psi_plus_blocks: &[Matrix],
        r: f64,
    ) -> Self {
        let nx = partition.state_dim();
        let n: usize = phi_blocks.iter().map(Matrix::cols).sum();
        let offsets = partition.node_offsets();
        let mut phi = Matrix::zeros(nx, n);
        let mut psi = Matrix::zeros(nx, nx - n);
        let mut phi_plus = Matrix::zeros(n, nx);
        let mut psi_plus = Matrix::zeros(nx - n, nx);
        let (mut col_phi, mut col_psi) = (0, 0);
        for (j, members) in partition.groups().iter().enumerate() {
            let mut local = 0;
            for &i in members {
                for d in 0..partition.node_dims()[i] {
                    let row = offsets[i] + d;
                    for c in 0..phi_blocks[j].cols() {
                        phi[(row, col_phi + c)] = phi_blocks[j][(local, c)];
                        phi_plus[(col_phi + c, row)] = phi_plus_blocks[j][(c, local)];
                    }
                    for c in 0..psi_blocks[j].cols() {
                        psi[(row, col_psi + c)] = psi_blocks[j][(local, c)];
                        psi_plus[(col_psi + c, row)] = psi_plus_blocks[j][(c, local)];
                    }
                    local += 1;
                }
            }
            col_phi += phi_blocks[j].cols();
            col_psi += psi_blocks[j].cols();
        }
        let resolved_dims = phi_blocks.iter().map(Matrix::cols).collect();
        Self { partition, resolved_dims, phi, psi, phi_plus, psi_plus, r }
    }

    /// `n`, the resolved dimension.
    pub fn resolved_dim(&self) -> usize {
        self.phi.cols()
    }

    /// Unresolved dimension `s_j` of each group.
    pub fn unresolved_dims(&self) -> Vec<usize> {
        (0..self.partition.group_count())
            .map(|j| self.partition.group_state_dim(j) - self.resolved_dims[j])
            .collect()
    }

    /// Offset of group `j` in the resolved vector.
    pub fn resolved_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.resolved_dims
            .iter()
            .map(|&m| {
                let o = acc;
                acc += m;
                o
            })
            .collect()
    }

    /// `xbar = Phi^+ x`.
    pub fn observable(&self, x: &[f64]) -> Result<Vec<f64>, CoarsenError> {
        if x.len() != self.phi.rows() {
            return Err(CoarsenError::DimensionMismatch { expected: self.phi.rows(), got: x.len() });
        }
        Ok(self.phi_plus.matvec(x))
    }

    /// `x' = Psi^+ x`.
    pub fn unresolved(&self, x: &[f64]) -> Vec<f64> {
        self.psi_plus.matvec(x)
    }

    /// `Phi xbar + Psi x'`.
    pub fn lift(&self, xbar: &[f64], xprime: &[f64]) -> Vec<f64> {
        let a = self.phi.matvec(xbar);
        let b = self.psi.matvec(xprime);
        a.iter().zip(&b).map(|(p, q)| p + q).collect()
    }

    /// Group-local block `Phi_ik` (rows of node `k`, columns of group `i`) as a dense matrix.
    fn phi_block(&self, node: usize, group: usize) -> Matrix {
        let offsets = self.partition.node_offsets();
        let roff = self.resolved_offsets();
        self.phi.block(offsets[node], roff[group], self.partition.node_dims()[node], self.resolved_dims[group])
    }

    fn phi_plus_block(&self, group: usize, node: usize) -> Matrix {
        let offsets = self.partition.node_offsets();
        let roff = self.resolved_offsets();
        self.phi_plus.block(roff[group], offsets[node], self.resolved_dims[group], self.partition.node_dims()[node])
    }

    fn psi_block(&self, node: usize, group: usize) -> Matrix {
        let offsets = self.partition.node_offsets();
        let uoff = unresolved_offsets(&self.unresolved_dims());
        self.psi.block(offsets[node], uoff[group], self.partition.node_dims()[node], self.unresolved_dims()[group])
    }
}

fn unresolved_offsets(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    dims.iter()
        .map(|&s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

/// `(B^T B)^{-1} B^T` computed as `R^{-1} Q^T` from a Householder QR factorization of `B`, which
/// keeps the error proportional to the condition number of `B` rather than its square. `None`
/// when some `R_ii^2` falls below [`MIN_PIVOT`].
pub fn left_inverse(block: &Matrix) -> Option<Matrix> {
    let (n, k) = block.shape();
    if k > n {
        return None;
    }
    let mut a = block.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for c in 0..k {
        let mut v: Vec<f64> = (c..n).map(|r| a[(r, c)]).collect();
        let alpha = -v[0].signum() * norm2(&v);
        if alpha == 0.0 {
            return None;
        }
        v[0] -= alpha;
        let vn = norm2(&v);
        if vn > 0.0 {
            v.iter_mut().for_each(|x| *x /= vn);
            for j in c..k {
                let p: f64 = (c..n).map(|r| v[r - c] * a[(r, j)]).sum();
                for r in c..n {
                    a[(r, j)] -= 2.0 * p * v[r - c];
                }
            }
        }
        reflectors.push(v);
    }
    if (0..k).any(|i| a[(i, i)] * a[(i, i)] < MIN_PIVOT) {
        return None;
    }
    // Q^T as the reflectors applied to the identity, keeping the first k rows.
    let mut qt = Matrix::identity(n);
    for (c, v) in reflectors.iter().enumerate() {
        for j in 0..n {
            let p: f64 = (c..n).map(|r| v[r - c] * qt[(r, j)]).sum();
            for r in c..n {
                qt[(r, j)] -= 2.0 * p * v[r - c];
            }
        }
    }
    let mut out = qt.block(0, 0, k, n);
    for j in 0..n {
        for i in (0..k).rev() {
            let tail: f64 = (i + 1..k).map(|l| a[(i, l)] * out[(l, j)]).sum();
            out[(i, j)] = (out[(i, j)] - tail) / a[(i, i)];
        }
    }
    Some(out)
}

/// Orthonormal basis of the complement of `span(block)`, by modified Gram-Schmidt over the
/// columns of `block` followed by the standard basis.
pub fn orthogonal_complement(block: &Matrix) -> Matrix {
    let n = block.rows();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let orthonormalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for _ in 0..2 {
            for q in basis {
                let p = dot(v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
            }
        }
        let nv = norm2(v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|a| *a /= nv);
            true
        } else {
            false
        }
    };
    for c in 0..block.cols() {
        let mut v: Vec<f64> = (0..n).map(|r| block[(r, c)]).collect();
        if orthonormalize(&mut v, &basis) {
            basis.push(v);
        }
    }
    let resolved = basis.len();
    let mut complement = Vec::new();
    for e in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[e] = 1.0;
        if orthonormalize(&mut v, &basis) {
            basis.push(v.clone());
            complement.push(v);
        }
    }
    debug_assert_eq!(resolved + complement.len(), n);
    let mut out = Matrix::zeros(n, complement.len());
    for (c, v) in complement.iter().enumerate() {
        for r in 0..n {
            out[(r, c)] = v[r];
        }
    }
    out
}

/// Group averaging of embedded Kuramoto states: `Phi_j = 1`, `Phi_j^+ = 1^T / (2 |V_j|)`.
pub fn kuramoto_averaging_basis(partition: Partition) -> Result<CoarseMap, CoarsenError> {
    if let Some((node, &dim)) = partition.node_dims().iter().enumerate().find(|&(_, &d)| d != 2) {
        return Err(CoarsenError::NodeDim { node, dim, expected: 2 });
    }
    let phi_blocks: Vec<Matrix> = (0..partition.group_count())
        .map(|j| Matrix::filled(partition.group_state_dim(j), 1, 1.0))
        .collect();
    let phi_plus_blocks: Vec<Matrix> = phi_blocks
        .iter()
        .map(|b| Matrix::filled(1, b.rows(), 1.0 / b.rows() as f64))
        .collect();
    let r = phi_blocks.iter().map(|b| (b.rows() as f64).sqrt()).fold(0.0, f64::max);
    let psi_blocks: Vec<Matrix> = phi_blocks.iter().map(|b| orthogonal_complement(b).scale(r)).collect();
    let psi_plus_blocks: Vec<Matrix> = psi_blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            if b.cols() == 0 {
                Ok(Matrix::zeros(0, b.rows()))
            } else {
                left_inverse(b).ok_or(CoarsenError::RankDeficient(j))
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(CoarseMap::assemble(partition, &phi_blocks, &phi_plus_blocks, &psi_blocks, &psi_plus_blocks, r))
}

/// Linear operators of a graph dynamical system `x_dot = A f(x) + B (x) F(x, x)`.
///
/// `alphas[k]` is the `n_k x n_k` autonomous block of node `k`; `interaction` is the dense
/// `N_x x N_x` matrix whose `(k, l)` block is `beta_kl`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemOperators {
    pub alphas: Vec<Matrix>,
    pub interaction: Matrix,
}

impl SystemOperators {
    /// Dense block-diagonal `A`.
    pub fn a_dense(&self) -> Matrix {
        let nx: usize = self.alphas.iter().map(Matrix::rows).sum();
        let mut a = Matrix::zeros(nx, nx);
        let mut off = 0;
        for alpha in &self.alphas {
            a.set_block(off, off, alpha);
            off += alpha.rows();
        }
        a
    }
}

/// Embedded Kuramoto operators: `alpha_k = [[0, -w_k], [w_k, 0]]` and `beta_kl = (kappa_kl / 2) I`.
///
/// The interaction is factored with half the coupling in `beta_kl` and the pair function doubled
/// (see [`crate::mz::kuramoto_pair_term`]), so that `Phi^+ B Phi` under the averaging basis equals
/// the group sum `sum kappa_kl / (2 |V_i|)`.
pub fn kuramoto_operators(graph: &Graph, omega: &[f64]) -> Result<SystemOperators, CoarsenError> {
    let n = graph.node_count();
    if omega.len() != n {
        return Err(CoarsenError::DimensionMismatch { expected: n, got: omega.len() });
    }
    let alphas = omega.iter().map(|&w| Matrix::from_rows(&[vec![0.0, -w], vec![w, 0.0]])).collect();
    let mut b = Matrix::zeros(2 * n, 2 * n);
    for (l, k, w) in graph.edges() {
        if l == k {
            continue;
        }
        let kappa = w.ok_or(GraphError::MissingWeight(l, k))?;
        // Edge l -> k: node k feels node l.
        b[(2 * k, 2 * l)] = 0.5 * kappa;
        b[(2 * k + 1, 2 * l + 1)] = 0.5 * kappa;
    }
    Ok(SystemOperators { alphas, interaction: b })
}

/// Coarse coefficient blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseCoefficients {
    /// `alpha^11_i`, `m_i x m_i`.
    pub a11: Vec<Matrix>,
    /// `beta^11_ij`, `m_i x m_j`, indexed `[i][j]`.
    pub b11: Vec<Vec<Matrix>>,
}

impl CoarseCoefficients {
    /// `M x M` matrix of scalar `beta^11_ij`; panics unless every resolved dimension is 1.
    pub fn b11_scalar(&self) -> Matrix {
        let m = self.b11.len();
        let mut out = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                assert_eq!(self.b11[i][j].shape(), (1, 1), "beta^11 blocks are not scalar");
                out[(i, j)] = self.b11[i][j][(0, 0)];
            }
        }
        out
    }

    pub fn a11_scalar(&self) -> Vec<f64> {
        self.a11
            .iter()
            .map(|a| {
                assert_eq!(a.shape(), (1, 1), "alpha^11 blocks are not scalar");
                a[(0, 0)]
            })
            .collect()
    }
}

/// `alpha^11_i = sum_{k in V_i} Phi^+_ik alpha_k Phi_ki` and
/// `beta^11_ij = sum_{k in V_i, l in V_j} Phi^+_ik beta_kl Phi_lj`, accumulated group by group.
pub fn coarse_coefficients(map: &CoarseMap, ops: &SystemOperators) -> Result<CoarseCoefficients, CoarsenError> {
    let part = &map.partition;
    let nx = part.state_dim();
    if ops.alphas.len() != part.node_count() {
        return Err(CoarsenError::DimensionMismatch { expected: part.node_count(), got: ops.alphas.len() });
    }
    if ops.interaction.shape() != (nx, nx) {
        return Err(CoarsenError::DimensionMismatch { expected: nx, got: ops.interaction.rows() });
    }
    for (k, a) in ops.alphas.iter().enumerate() {
        if a.shape() != (part.node_dims()[k], part.node_dims()[k]) {
            return Err(CoarsenError::NodeDim { node: k, dim: a.rows(), expected: part.node_dims()[k] });
        }
    }
    let offsets = part.node_offsets();
    let m = part.group_count();
    let a11 = (0..m)
        .map(|i| {
            let mut acc = Matrix::zeros(map.resolved_dims[i], map.resolved_dims[i]);
            for &k in &part.groups()[i] {
                acc.add_assign(&map.phi_plus_block(i, k).matmul(&ops.alphas[k]).matmul(&map.phi_block(k, i)));
            }
            acc
        })
        .collect();
    let b11 = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut acc = Matrix::zeros(map.resolved_dims[i], map.resolved_dims[j]);
                    for &k in &part.groups()[i] {
                        let pk = map.phi_plus_block(i, k);
                        for &l in &part.groups()[j] {
                            let beta = ops.interaction.block(
                                offsets[k],
                                offsets[l],
                                part.node_dims()[k],
                                part.node_dims()[l],
                            );
                            if beta.max_abs() == 0.0 {
                                continue;
                            }
                            acc.add_assign(&pk.matmul(&beta).matmul(&map.phi_block(l, j)));
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok(CoarseCoefficients { a11, b11 })
}

/// `alpha^12_i = sum_{k in V_i} Phi^+_ik alpha_k Psi_ki`.
pub fn a12_blocks(map: &CoarseMap, ops: &SystemOperators) -> Vec<Matrix> {
    let part = &map.partition;
    (0..part.group_count())
        .map(|i| {
            let s = map.unresolved_dims()[i];
            let mut acc = Matrix::zeros(map.resolved_dims[i], s);
            for &k in &part.groups()[i] {
                acc.add_assign(&map.phi_plus_block(i, k).matmul(&ops.alphas[k]).matmul(&map.psi_block(k, i)));
            }
            acc
        })
        .collect()
}

/// Closed-form Kuramoto coarse interaction under group averaging:
/// `beta^11_ij = sum_{k in V_i, l in V_j} kappa_kl / (2 |V_i|)`.
pub fn kuramoto_coarse_interaction(partition: &Partition, graph: &Graph) -> Result<Matrix, CoarsenError> {
    let m = partition.group_count();
    let mut b = Matrix::zeros(m, m);
    for (l, k, w) in graph.edges() {
        if l == k {
            continue;
        }
        let kappa = w.ok_or(GraphError::MissingWeight(l, k))?;
        let (gi, gj) = (partition.group_of(k), partition.group_of(l));
        b[(gi, gj)] += kappa / (2.0 * partition.groups()[gi].len() as f64);
    }
    Ok(b)
}

/// Coarse graph: edge `(i, j)` (including `i = j`) whenever a fine edge runs from a node of `V_i`
/// to a node of `V_j`, weighted by `beta^11_ij`.
pub fn coarse_graph(partition: &Partition, fine: &Graph, b11: &Matrix) -> Result<Graph, CoarsenError> {
    let m = partition.group_count();
    if b11.shape() != (m, m) {
        return Err(CoarsenError::DimensionMismatch { expected: m, got: b11.rows() });
    }
    let mut present = vec![vec![false; m]; m];
    for (k, l, _) in fine.edges() {
        present[partition.group_of(k)][partition.group_of(l)] = true;
    }
    let mut edges = Vec::new();
    for (i, row) in present.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p {
                edges.push((i, j, b11[(i, j)]));
            }
        }
    }
    Ok(Graph::new(m, &edges, fine.topology_index())?)
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Self, CoarsenError> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Self::zeros(n);
        for i in 0..n {
            inv.set(i, i, Complex64::new(1.0, 0.0));
        }
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| a.get(x, c).norm().total_cmp(&a.get(y, c).norm()))
                .expect("non-empty range");
            if a.get(p, c).norm() < 1e-300 {
                return Err(CoarsenError::SingularAdmittance);
            }
            for k in 0..n {
                a.data.swap(c * n + k, p * n + k);
                inv.data.swap(c * n + k, p * n + k);
            }
            let d = a.get(c, c);
            for k in 0..n {
                a.set(c, k, a.get(c, k) / d);
                inv.set(c, k, inv.get(c, k) / d);
            }
            for r in 0..n {
                if r != c {
                    let f = a.get(r, c);
                    if f.norm() != 0.0 {
                        for k in 0..n {
                            a.set(r, k, a.get(r, k) - f * a.get(c, k));
                            inv.set(r, k, inv.get(r, k) - f * inv.get(c, k));
                        }
                    }
                }
            }
        }
        Ok(inv)
    }
}

/// How the decay parameter of the admittance weight map is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaChoice {
    Fixed(f64),
    /// Solve for eta so the largest off-diagonal `|Y_ij|` maps to `lo`; every smaller nonzero
    /// magnitude must then land at or below `hi`.
    Range { lo: f64, hi: f64 },
}

/// `w_ij = exp(-eta |Y_ij|^2)` for every entry; returns the weights and the eta used.
pub fn admittance_weights(y: &ComplexMatrix, choice: EtaChoice) -> Result<(Matrix, f64), CoarsenError> {
    let n = y.n;
    let eta = match choice {
        EtaChoice::Fixed(eta) if eta > 0.0 => eta,
        EtaChoice::Fixed(_) => return Err(CoarsenError::MissingEta),
        EtaChoice::Range { lo, hi } => solve_eta(y, lo, hi)?,
    };
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = (-eta * y.get(i, j).norm_sqr()).exp();
        }
    }
    Ok((w, eta))
}

fn solve_eta(y: &ComplexMatrix, lo: f64, hi: f64) -> Result<f64, CoarsenError> {
    if !(0.0 < lo && lo < hi && hi <= 1.0) {
        return Err(CoarsenError::RangeUnreachable { lo, hi });
    }
    let mags: Vec<f64> = (0..y.n)
        .flat_map(|i| (0..y.n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| y.get(i, j).norm_sqr())
        .filter(|&m| m > 0.0)
        .collect();
    let (min, max) = mags.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &m| (a.min(m), b.max(m)));
    if mags.is_empty() || min == max {
        return Err(CoarsenError::DegenerateAdmittance(lo, hi));
    }
    let eta = -lo.ln() / max;
    if (-eta * min).exp() > hi {
        return Err(CoarsenError::RangeUnreachable { lo, hi });
    }
    Ok(eta)
}

/// Graph over the nonzero pattern of `Y` (self-loops included) carrying the admittance weights.
pub fn admittance_graph(y: &ComplexMatrix, weights: &Matrix, index: usize) -> Result<Graph, CoarsenError> {
    let mut edges = Vec::new();
    for i in 0..y.n {
        for j in 0..y.n {
            if y.get(i, j).norm() > 0.0 {
                edges.push((i, j, weights[(i, j)]));
            }
        }
    }
    Ok(Graph::new(y.n, &edges, index)?)
}

/// Scalar coefficients of a bus network reduced to its own nodes: `alpha^11_i = |Z_ii|`,
/// `beta^11_ij = |Z_ij|` with `Z = Y^{-1}`.
pub fn admittance_coefficients(y: &ComplexMatrix) -> Result<(Vec<f64>, Matrix), CoarsenError> {
    let z = y.inverse()?;
    let n = y.n;
    let alpha = (0..n).map(|i| z.get(i, i).norm()).collect();
    let mut beta = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                beta[(i, j)] = z.get(i, j).norm();
            }
        }
    }
    Ok((alpha, beta))
}

/// Stacked group-local vector of group `j` (test and analysis helper).
pub fn group_slice(map: &CoarseMap, j: usize, x: &[f64]) -> Vec<f64> {
    map.partition.gather_group(j, x, &map.partition.node_offsets())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_cases() {
        let p = Partition::consecutive(5, 4, 2);
        assert_eq!(p.groups()[0], vec![0, 1, 2, 3]);
        assert_eq!(p.groups()[4], vec![16, 17, 18, 19]);
        let p = Partition::new(&[1; 3], &[0, 1, 2]).unwrap();
        assert_eq!(p.group_count(), 3);
        assert_eq!(Partition::new(&[1; 3], &[0, 1]), Err(CoarsenError::Unassigned(2)));
        assert_eq!(Partition::new(&[1; 3], &[0, 2, 2]), Err(CoarsenError::EmptyGroup(1)));
        assert_eq!(
            Partition::from_groups(&[1; 3], &[vec![0, 1], vec![1, 2]]),
            Err(CoarsenError::Overlap(1))
        );
        assert_eq!(Partition::from_groups(&[1; 3], &[vec![0, 2]]), Err(CoarsenError::Unassigned(1)));
    }

    #[test]
    fn averaging_basis_values() {
        let map = kuramoto_averaging_basis(Partition::consecutive(2, 4, 2)).unwrap();
        assert_eq!(map.r, 8f64.sqrt());
        for c in 0..8 {
            assert_eq!(map.phi_plus[(0, c)], 0.125);
        }
        let id = map.phi_plus.matmul(&map.phi);
        assert_eq!(id, Matrix::identity(2));
        assert!((spectral_norm(&map.psi, 1e-12) - map.r).abs() < 1e-8);
        assert!(matches!(
            kuramoto_averaging_basis(Partition::consecutive(2, 2, 3)),
            Err(CoarsenError::NodeDim { .. })
        ));
    }

    #[test]
    fn observable_of_uniform_angles() {
        let map = kuramoto_averaging_basis(Partition::consecutive(3, 4, 2)).unwrap();
        let x = crate::dynamics::embed_state(&[0.0; 12]);
        for v in map.observable(&x).unwrap() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let x = crate::dynamics::embed_state(&[std::f64::consts::FRAC_PI_4; 12]);
        for v in map.observable(&x).unwrap() {
            assert!((v - 2f64.sqrt() / 2.0).abs() < 1e-15);
        }
        let xbar = [0.3, -0.2, 0.9];
        let back = map.observable(&map.phi.matvec(&xbar)).unwrap();
        for (a, b) in back.iter().zip(xbar) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn left_inverse_simple_blocks() {
        let ones = Matrix::filled(4, 1, 1.0);
        let inv = left_inverse(&ones).unwrap();
        assert!(inv.max_abs_diff(&Matrix::filled(1, 4, 0.25)) < 1e-15);
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert!(left_inverse(&q).unwrap().max_abs_diff(&q.transpose()) < 1e-15);
        let deficient = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]);
        assert!(left_inverse(&deficient).is_none());
    }

    #[test]
    fn kuramoto_block_sums_small_example() {
        let g = Graph::new(
            4,
            &[(0, 1, 2.0), (1, 0, 2.0), (2, 3, 3.0), (3, 2, 3.0), (1, 2, 1.0), (2, 1, 1.0)],
            0,
        )
        .unwrap();
        let p = Partition::consecutive(2, 2, 2);
        let closed = kuramoto_coarse_interaction(&p, &g).unwrap();
        assert_eq!(closed[(0, 1)], 0.25);
        assert_eq!(closed[(0, 0)], 1.0);
        let map = kuramoto_averaging_basis(p.clone()).unwrap();
        let ops = kuramoto_operators(&g, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let cc = coarse_coefficients(&map, &ops).unwrap();
        assert!(cc.b11_scalar().max_abs_diff(&closed) < 1e-15);
        assert!(cc.a11_scalar().iter().all(|&a| a == 0.0));
        let zero = SystemOperators { alphas: ops.alphas.clone(), interaction: Matrix::zeros(8, 8) };
        assert_eq!(coarse_coefficients(&map, &zero).unwrap().b11_scalar(), Matrix::zeros(2, 2));
    }

    #[test]
    fn coarse_graph_without_cross_edges_has_only_self_loops() {
        let g = Graph::new(4, &[(0, 1, 2.0), (1, 0, 2.0), (2, 3, 3.0), (3, 2, 3.0)], 3).unwrap();
        let p = Partition::consecutive(2, 2, 2);
        let b = kuramoto_coarse_interaction(&p, &g).unwrap();
        let cg = coarse_graph(&p, &g, &b).unwrap();
        assert_eq!(cg.topology_index(), 3);
        assert!(cg.edges().all(|(i, j, _)| i == j));
        assert_eq!(cg.weight(1, 1), Some(1.5));
    }

    #[test]
    fn admittance_weight_map() {
        let mut y = ComplexMatrix::zeros(3);
        y.set(0, 1, Complex64::new(1.0, 0.0));
        y.set(1, 0, Complex64::new(0.0, 1.0));
        y.set(1, 2, Complex64::new(2.0, 0.0));
        y.set(2, 1, Complex64::new(2.0, 0.0));
        let (w, _) = admittance_weights(&y, EtaChoice::Fixed(1.0)).unwrap();
        assert_eq!(w[(0, 2)], 1.0);
        assert!((w[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w[(0, 1)] - 0.3679).abs() < 1e-4);
        let (w, eta) = admittance_weights(&y, EtaChoice::Range { lo: 0.2, hi: 1.0 }).unwrap();
        assert!((w[(1, 2)] - 0.2).abs() < 1e-14);
        assert!(w[(0, 1)] <= 1.0 && w[(0, 1)] > w[(1, 2)]);
        assert!(eta > 0.0);
        let mut flat = ComplexMatrix::zeros(2);
        flat.set(0, 1, Complex64::new(1.0, 0.0));
        flat.set(1, 0, Complex64::new(1.0, 0.0));
        assert!(matches!(
            admittance_weights(&flat, EtaChoice::Range { lo: 0.2, hi: 1.0 }),
            Err(CoarsenError::DegenerateAdmittance(..))
        ));
        assert_eq!(admittance_weights(&flat, EtaChoice::Fixed(0.0)), Err(CoarsenError::MissingEta));
    }

    #[test]
    fn complex_inverse_roundtrip() {
        let mut y = ComplexMatrix::zeros(2);
        y.set(0, 0, Complex64::new(2.0, 1.0));
        y.set(0, 1, Complex64::new(-1.0, 0.5));
        y.set(1, 0, Complex64::new(-1.0, 0.5));
        y.set(1, 1, Complex64::new(3.0, -1.0));
        let z = y.inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..2 {
                    s += y.get(i, k) * z.get(k, j);
                }
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((s - Complex64::new(e, 0.0)).norm() < 1e-14);
            }
        }
        assert_eq!(ComplexMatrix::zeros(2).inverse(), Err(CoarsenError::SingularAdmittance));
    }
}
