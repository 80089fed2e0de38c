//! Interaction-strength decay, hop and memory-length planning, and a small-scale numeric probe
//! of the leading memory integrand for Kuramoto networks.

use thiserror::Error;

use crate::coarsen::{kuramoto_operators, CoarseMap, CoarsenError, SystemOperators};
use crate::graph::{average_degree, hop_distances, DegreeConvention, Graph, GraphError};
use crate::linalg::{norm2, spectral_norm, Matrix};

/// Largest fine network accepted by [`mz_integrand_norm`].
pub const MAX_PROBE_NODES: usize = 12;
/// Central-difference step of the resolved-coordinate gradient.
pub const PROBE_STEP: f64 = 1e-5;
const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MzError {
    #[error("group {0} has a zero normalizer (alpha and beta self-interaction both vanish)")]
    ZeroNormalizer(usize),
    #[error("ratio sample ({k}, {gamma}) is not usable: hops must be >= 1 and ratios > 0")]
    BadSample { k: usize, gamma: f64 },
    #[error("power-law fit needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("d * epsilon = {0} >= 1: the hop series diverges")]
    Divergent(f64),
    #[error("invalid plan input: {0}")]
    BadInput(String),
    #[error("probe supports at most {MAX_PROBE_NODES} nodes, got {0}")]
    TooLarge(usize),
    #[error("non-finite integrand gradient")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Coarsen(#[from] CoarsenError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Fitted `gamma(k) = epsilon^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub samples: Vec<(usize, f64)>,
    pub epsilon: f64,
    pub r_squared: f64,
}

impl DecayFit {
    pub fn d_epsilon(&self, d: f64) -> f64 {
        d * self.epsilon
    }
}

/// Hop requirement and memory-length scale derived from a decay fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitecturePlan {
    pub k: usize,
    pub d: f64,
    pub d_epsilon: f64,
    pub required_hops: usize,
    pub memory_estimate: f64,
    pub basis_norm_sq: f64,
    pub lipschitz: f64,
}

fn reduce(block: &Matrix) -> f64 {
    if block.len() == 1 {
        block[(0, 0)].abs()
    } else {
        spectral_norm(block, NORM_TOL)
    }
}

/// Strength ratios `gamma = |beta11_ij| / |norm_i|` tagged with the coarse hop distance.
///
/// The normalizer is `|alpha11_i|`, or `|beta11_ii|` when `alpha11_i` vanishes. Matrix blocks are
/// reduced by their operator 2-norm. Pairs with `beta11_ij = 0` or no path are skipped.
pub fn interaction_ratios(a11: &[Matrix], b11: &[Vec<Matrix>], coarse: &Graph) -> Result<Vec<(usize, f64)>, MzError> {
    let m = coarse.node_count();
    if a11.len() != m || b11.len() != m {
        return Err(MzError::DimensionMismatch { expected: m, got: a11.len().min(b11.len()) });
    }
    let mut out = Vec::new();
    for i in 0..m {
        let alpha = reduce(&a11[i]);
        let norm = if alpha > 0.0 { alpha } else { reduce(&b11[i][i]) };
        if norm == 0.0 {
            return Err(MzError::ZeroNormalizer(i));
        }
        let dist = hop_distances(coarse, i)?;
        for (j, d) in dist.iter().enumerate() {
            if j == i {
                continue;
            }
            let beta = reduce(&b11[i][j]);
            if let (Some(k), true) = (d, beta > 0.0) {
                out.push((*k, beta / norm));
            }
        }
    }
    Ok(out)
}

/// Scalar convenience over an `M x M` coarse interaction matrix with zero `alpha11`.
pub fn scalar_interaction_ratios(b11: &Matrix, coarse: &Graph) -> Result<Vec<(usize, f64)>, MzError> {
    let m = b11.rows();
    let a11 = vec![Matrix::zeros(1, 1); m];
    let b: Vec<Vec<Matrix>> = (0..m).map(|i| (0..m).map(|j| Matrix::scalar(b11[(i, j)])).collect()).collect();
    interaction_ratios(&a11, &b, coarse)
}

/// Least squares of `ln gamma = k ln epsilon` through the origin; `R^2` in the log domain.
pub fn fit_power_law(samples: &[(usize, f64)]) -> Result<DecayFit, MzError> {
    if let Some(&(k, gamma)) = samples.iter().find(|&&(k, g)| k == 0 || !(g > 0.0) || !g.is_finite()) {
        return Err(MzError::BadSample { k, gamma });
    }
    if samples.len() < 2 {
        return Err(MzError::TooFewSamples(samples.len()));
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(k, g) in samples {
        let k = k as f64;
        sxy += k * g.ln();
        sxx += k * k;
    }
    let slope = sxy / sxx;
    let mean = samples.iter().map(|s| s.1.ln()).sum::<f64>() / samples.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(k, g) in samples {
        let y = g.ln();
        ss_res += (y - slope * k as f64).powi(2);
        ss_tot += (y - mean).powi(2);
    }
    let scale = samples.iter().map(|s| s.1.ln().abs()).fold(1.0, f64::max);
    let r_squared = if ss_tot > 1e-28 * scale * scale {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 * scale * scale * samples.len() as f64 {
        1.0
    } else {
        0.0
    };
    Ok(DecayFit { samples: samples.to_vec(), epsilon: slope.exp(), r_squared })
}

/// Required hops (`2K` when `d epsilon > 1/2`) and the memory-length scale
/// `R^2 (1 - d eps)^2 / (L (d eps)^2)` in that branch, `R^2 / L` otherwise.
pub fn plan_architecture(
    epsilon: f64,
    d: f64,
    k: usize,
    basis_norm_sq: f64,
    lipschitz: f64,
) -> Result<ArchitecturePlan, MzError> {
    if !(d > 0.0) || k == 0 || !(lipschitz > 0.0) || !(basis_norm_sq > 0.0) || !(epsilon > 0.0) {
        return Err(MzError::BadInput(format!(
            "need d > 0, K >= 1, L > 0, R^2 > 0, epsilon > 0 (got d={d}, K={k}, L={lipschitz}, R^2={basis_norm_sq}, epsilon={epsilon})"
        )));
    }
    let de = d * epsilon;
    if de >= 1.0 {
        return Err(MzError::Divergent(de));
    }
    let (required_hops, memory_estimate) = if de > 0.5 {
        (2 * k, basis_norm_sq * (1.0 - de).powi(2) / (lipschitz * de * de))
    } else {
        (k, basis_norm_sq / lipschitz)
    };
    Ok(ArchitecturePlan {
        k,
        d,
        d_epsilon: de,
        required_hops,
        memory_estimate,
        basis_norm_sq,
        lipschitz,
    })
}

/// Everything the analysis step reports for a coarse interaction structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub fit: DecayFit,
    pub plan: ArchitecturePlan,
}

/// Ratios, fit and plan in one pass; `d` is the self-excluded average degree of `coarse`.
pub fn analyze(
    a11: &[Matrix],
    b11: &[Vec<Matrix>],
    coarse: &Graph,
    k: usize,
    basis_norm_sq: f64,
    lipschitz: f64,
) -> Result<Analysis, MzError> {
    let samples = interaction_ratios(a11, b11, coarse)?;
    let fit = fit_power_law(&samples)?;
    let d = average_degree(coarse, DegreeConvention::SelfExcluded);
    let plan = plan_architecture(fit.epsilon, d, k, basis_norm_sq, lipschitz)?;
    Ok(Analysis { fit, plan })
}

/// Kuramoto system in the operator form used by the projection terms.
struct Probe<'a> {
    map: &'a CoarseMap,
    ops: SystemOperators,
    p: Matrix,
    q: Matrix,
}

impl<'a> Probe<'a> {
    fn new(graph: &Graph, omega: &[f64], map: &'a CoarseMap) -> Result<Self, MzError> {
        let n = graph.node_count();
        if n > MAX_PROBE_NODES {
            return Err(MzError::TooLarge(n));
        }
        if map.partition.state_dim() != 2 * n {
            return Err(MzError::DimensionMismatch { expected: 2 * n, got: map.partition.state_dim() });
        }
        let ops = kuramoto_operators(graph, omega)?;
        let p = map.phi.matmul(&map.phi_plus);
        let q = map.psi.matmul(&map.psi_plus);
        Ok(Self { map, ops, p, q })
    }

    fn n(&self) -> usize {
        self.ops.alphas.len()
    }

    /// `F_k(x)`: block `l` holds the pair term `2 f_kl(x_k, x_l)` wherever `beta_kl != 0`.
    fn pair_vector(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for l in 0..self.n() {
            if self.ops.interaction[(2 * k, 2 * l)] != 0.0 {
                let f = kuramoto_pair_term([x[2 * k], x[2 * k + 1]], [x[2 * l], x[2 * l + 1]]);
                out[2 * l] = f[0];
                out[2 * l + 1] = f[1];
            }
        }
        out
    }

    /// `sum_k Phi^+_{., k} B_k v_k` where `v_k` is produced per node.
    fn project_interaction(&self, mut v: impl FnMut(usize) -> Vec<f64>) -> Vec<f64> {
        let nx = 2 * self.n();
        let mut acc = vec![0.0; self.map.resolved_dim()];
        for k in 0..self.n() {
            let vk = v(k);
            let mut bk = [0.0; 2];
            for (r, out) in bk.iter_mut().enumerate() {
                *out = (0..nx).map(|c| self.ops.interaction[(2 * k + r, c)] * vk[c]).sum();
            }
            for (a, slot) in acc.iter_mut().enumerate() {
                *slot += self.map.phi_plus[(a, 2 * k)] * bk[0] + self.map.phi_plus[(a, 2 * k + 1)] * bk[1];
            }
        }
        acc
    }

    fn a_times(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, alpha) in self.ops.alphas.iter().enumerate() {
            let y = alpha.matvec(&v[2 * k..2 * k + 2]);
            out[2 * k..2 * k + 2].copy_from_slice(&y);
        }
        out
    }

    fn markov_drift(&self, xbar: &[f64]) -> Vec<f64> {
        let xp = self.map.phi.matvec(xbar);
        let auto = self.map.phi_plus.matvec(&self.a_times(&self.p.matvec(&xp)));
        let inter = self.project_interaction(|k| self.p.matvec(&self.pair_vector(k, &xp)));
        auto.iter().zip(&inter).map(|(a, b)| a + b).collect()
    }

    fn residual(&self, xbar: &[f64], x: &[f64]) -> Vec<f64> {
        let xp = self.map.phi.matvec(xbar);
        let df: Vec<f64> = x.iter().zip(&xp).map(|(a, b)| a - b).collect();
        let pf = self.p.matvec(&df);
        let qf = self.q.matvec(x);
        let h: Vec<f64> = pf.iter().zip(&qf).map(|(a, b)| a + b).collect();
        let auto = self.map.phi_plus.matvec(&self.a_times(&h));
        let inter = self.project_interaction(|k| {
            let fx = self.pair_vector(k, x);
            let fp = self.pair_vector(k, &xp);
            let d: Vec<f64> = fx.iter().zip(&fp).map(|(a, b)| a - b).collect();
            let pd = self.p.matvec(&d);
            let qd = self.q.matvec(&fx);
            pd.iter().zip(&qd).map(|(a, b)| a + b).collect()
        });
        auto.iter().zip(&inter).map(|(a, b)| a + b).collect()
    }

    fn interaction_drift(&self, x: &[f64]) -> Vec<f64> {
        self.project_interaction(|k| self.pair_vector(k, x))
    }

    fn integrand(&self, x: &[f64]) -> Result<f64, MzError> {
        let xbar = self.map.phi_plus.matvec(x);
        let xprime = self.map.psi_plus.matvec(x);
        let n = xbar.len();
        let drift = self.interaction_drift(x);
        let mut directional = vec![0.0; n];
        for b in 0..n {
            let mut plus = xbar.clone();
            let mut minus = xbar.clone();
            plus[b] += PROBE_STEP;
            minus[b] -= PROBE_STEP;
            let rp = self.residual(&plus, &self.map.lift(&plus, &xprime));
            let rm = self.residual(&minus, &self.map.lift(&minus, &xprime));
            for a in 0..n {
                directional[a] += (rp[a] - rm[a]) / (2.0 * PROBE_STEP) * drift[b];
            }
        }
        if directional.iter().any(|v| !v.is_finite()) {
            return Err(MzError::NonFinite);
        }
        Ok(norm2(&directional))
    }
}

/// Kuramoto pair term in the factored interaction, `2 f_kl`: with `s = x2_l x1_k - x1_l x2_k`,
/// returns `2 (-x2_k s, x1_k s)`.
pub fn kuramoto_pair_term(xk: [f64; 2], xl: [f64; 2]) -> [f64; 2] {
    let f = crate::dynamics::pair_interaction(xk, xl);
    [2.0 * f[0], 2.0 * f[1]]
}

/// Markovian coarse drift `r1(xbar)`: the projected dynamics evaluated on `Phi xbar`.
pub fn markov_drift(graph: &Graph, omega: &[f64], map: &CoarseMap, xbar: &[f64]) -> Result<Vec<f64>, MzError> {
    Ok(Probe::new(graph, omega, map)?.markov_drift(xbar))
}

/// Residual `r2(x)` assembled from its autonomous and interaction parts, with `xbar = Phi^+ x`.
pub fn residual_drift(graph: &Graph, omega: &[f64], map: &CoarseMap, x: &[f64]) -> Result<Vec<f64>, MzError> {
    let probe = Probe::new(graph, omega, map)?;
    let xbar = map.phi_plus.matvec(x);
    Ok(probe.residual(&xbar, x))
}

/// Interaction part of the resolved drift at a full state, `Phi^+ (B (x) F(x, x))`.
pub fn interaction_drift(graph: &Graph, omega: &[f64], map: &CoarseMap, x: &[f64]) -> Result<Vec<f64>, MzError> {
    Ok(Probe::new(graph, omega, map)?.interaction_drift(x))
}

/// Largest `|drift . grad_xbar r2|` over full-state samples `x = Phi xbar + Psi x'`.
///
/// The drift factor is the interaction part of the resolved drift at the sample (the Markovian
/// drift vanishes identically for Kuramoto under group averaging). The gradient is taken by
/// central differences in `xbar` with `x'` held fixed.
pub fn mz_integrand_norm(graph: &Graph, omega: &[f64], map: &CoarseMap, samples: &[Vec<f64>]) -> Result<f64, MzError> {
    let probe = Probe::new(graph, omega, map)?;
    let mut best = 0.0_f64;
    for x in samples {
        if x.len() != 2 * graph.node_count() {
            return Err(MzError::DimensionMismatch { expected: 2 * graph.node_count(), got: x.len() });
        }
        best = best.max(probe.integrand(x)?);
    }
    Ok(best)
}
