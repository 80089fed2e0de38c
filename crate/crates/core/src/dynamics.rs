//! Full-order Kuramoto simulation on switching topologies.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

pub const OMEGA_RANGE: (f64, f64) = (1.0, 15.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state length {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("edge ({0}, {1}) has no coupling strength")]
    MissingCoupling(usize, usize),
    #[error("coupling on edge ({0}, {1}) must be positive")]
    NonPositiveCoupling(usize, usize),
    #[error("step size must be positive")]
    BadStep,
    #[error("non-finite state after step {step}")]
    NonFinite { step: usize },
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("invalid coupling range [{0}, {1}]")]
    BadRange(f64, f64),
    #[error("invalid group layout: {0}")]
    BadGroups(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// In-neighbor coupling lists, `targets[i] = [(j, kappa_ij), ...]`, self-loops dropped.
#[derive(Debug, Clone)]
struct CouplingTable {
    targets: Vec<Vec<(usize, f64)>>,
}

impl CouplingTable {
    fn new(graph: &Graph) -> Result<Self, DynamicsError> {
        let mut targets = vec![Vec::new(); graph.node_count()];
        for (j, i, w) in graph.edges() {
            let kappa = w.ok_or(DynamicsError::MissingCoupling(j, i))?;
            if kappa <= 0.0 {
                return Err(DynamicsError::NonPositiveCoupling(j, i));
            }
            if i != j {
                targets[i].push((j, kappa));
            }
        }
        Ok(Self { targets })
    }

    fn rhs(&self, theta: &[f64], omega: &[f64], out: &mut [f64]) {
        for (i, row) in self.targets.iter().enumerate() {
            let th = theta[i];
            out[i] = omega[i] + row.iter().map(|&(j, k)| k * (theta[j] - th).sin()).sum::<f64>();
        }
    }
}

/// `theta_dot_i = omega_i + sum_j kappa_ij sin(theta_j - theta_i)` over in-neighbors `j` of `i`.
///
/// Edge weights of `graph` are the couplings `kappa_ij`.
pub fn kuramoto_rhs(theta: &[f64], graph: &Graph, omega: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    let n = graph.node_count();
    for len in [theta.len(), omega.len()] {
        if len != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, got: len });
        }
    }
    let table = CouplingTable::new(graph)?;
    let mut out = vec![0.0; n];
    table.rhs(theta, omega, &mut out);
    Ok(out)
}

/// `(cos theta_i, sin theta_i)` per node, node-major.
pub fn embed_state(theta: &[f64]) -> Vec<f64> {
    theta.iter().flat_map(|t| [t.cos(), t.sin()]).collect()
}

/// The embedded dynamics `x_dot_k = alpha_k x_k + sum_l kappa_kl f_kl(x_k, x_l)` in block form.
pub fn embedded_rhs(x: &[f64], graph: &Graph, omega: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    let n = graph.node_count();
    if x.len() != 2 * n || omega.len() != n {
        return Err(DynamicsError::DimensionMismatch { expected: 2 * n, got: x.len() });
    }
    let table = CouplingTable::new(graph)?;
    let mut out = vec![0.0; 2 * n];
    for k in 0..n {
        let (x1, x2) = (x[2 * k], x[2 * k + 1]);
        let mut d1 = -omega[k] * x2;
        let mut d2 = omega[k] * x1;
        for &(l, kappa) in &table.targets[k] {
            let f = pair_interaction([x1, x2], [x[2 * l], x[2 * l + 1]]);
            d1 += kappa * f[0];
            d2 += kappa * f[1];
        }
        out[2 * k] = d1;
        out[2 * k + 1] = d2;
    }
    Ok(out)
}

/// `f_kl(x_k, x_l) = (-x2_k s, x1_k s)` with `s = x2_l x1_k - x1_l x2_k`.
pub fn pair_interaction(xk: [f64; 2], xl: [f64; 2]) -> [f64; 2] {
    let s = xl[1] * xk[0] - xl[0] * xk[1];
    [-xk[1] * s, xk[0] * s]
}

/// One classical Runge-Kutta step of `dy/dt = rhs(t, y)`.
pub fn rk4_step<F>(mut rhs: F, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>, DynamicsError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(dt > 0.0) {
        return Err(DynamicsError::BadStep);
    }
    let n = state.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    rhs(t, state, &mut k1);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    rhs(t + 0.5 * dt, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    rhs(t + 0.5 * dt, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    rhs(t + dt, &tmp, &mut k4);
    let next: Vec<f64> = (0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::NonFinite { step: 0 });
    }
    Ok(next)
}

/// Kuramoto oscillators with a pool of candidate topologies; edge weights carry `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct KuramotoSystem {
    pub omega: Vec<f64>,
    pub pool: Vec<Graph>,
}

impl KuramotoSystem {
    pub fn new(omega: Vec<f64>, pool: Vec<Graph>) -> Result<Self, DynamicsError> {
        if pool.is_empty() {
            return Err(DynamicsError::BadSchedule("empty topology pool".into()));
        }
        for g in &pool {
            if g.node_count() != omega.len() {
                return Err(DynamicsError::DimensionMismatch {
                    expected: omega.len(),
                    got: g.node_count(),
                });
            }
            CouplingTable::new(g)?;
        }
        Ok(Self { omega, pool })
    }

    pub fn node_count(&self) -> usize {
        self.omega.len()
    }

    /// FNV-1a over frequencies and every pool edge, for provenance in trajectory metadata.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for w in &self.omega {
            eat(w.to_bits());
        }
        for g in &self.pool {
            eat(g.topology_index() as u64);
            for (i, j, w) in g.edges() {
                eat(i as u64);
                eat(j as u64);
                eat(w.unwrap_or(f64::NAN).to_bits());
            }
        }
        h
    }
}

/// Piecewise-constant topology schedule on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `(start_time, topology_index)`, first at `t = 0`, strictly increasing.
    pub segments: Vec<(f64, usize)>,
    pub total_time: f64,
    pub dt: f64,
}

impl Schedule {
    pub fn fixed(index: usize, total_time: f64, dt: f64) -> Self {
        Self { segments: vec![(0.0, index)], total_time, dt }
    }

    /// `count` switches at distinct random grid steps in `[min_step, steps]`, each to a topology
    /// different from the current one.
    pub fn random_switches(
        pool_size: usize,
        count: usize,
        total_time: f64,
        dt: f64,
        min_step: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self, DynamicsError> {
        let steps = (total_time / dt).round() as usize;
        if count > 0 && pool_size < 2 {
            return Err(DynamicsError::BadSchedule("switching needs at least two topologies".into()));
        }
        if min_step.max(1) + count > steps {
            return Err(DynamicsError::BadSchedule(format!(
                "cannot place {count} switches after step {min_step} in {steps} steps"
            )));
        }
        let lo = min_step.max(1);
        let mut at = BTreeSet::new();
        while at.len() < count {
            at.insert(lo + rng.below(steps - lo));
        }
        Ok(Self::from_switch_steps(pool_size, &at, total_time, dt, rng))
    }

    /// Exponentially distributed segment lengths with the given mean (seconds).
    pub fn mean_segment(
        pool_size: usize,
        mean: f64,
        total_time: f64,
        dt: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self, DynamicsError> {
        if !(mean > 0.0) {
            return Err(DynamicsError::BadSchedule("mean segment length must be positive".into()));
        }
        if pool_size < 2 {
            return Ok(Self::fixed(0, total_time, dt));
        }
        let steps = (total_time / dt).round() as usize;
        let mut at = BTreeSet::new();
        let mut t = 0.0;
        loop {
            t += -mean * (1.0 - rng.next_f64()).ln();
            let step = (t / dt).round() as usize;
            if step >= steps {
                break;
            }
            if step > 0 {
                at.insert(step);
            }
        }
        Ok(Self::from_switch_steps(pool_size, &at, total_time, dt, rng))
    }

    fn from_switch_steps(
        pool_size: usize,
        at: &BTreeSet<usize>,
        total_time: f64,
        dt: f64,
        rng: &mut SplitMix64,
    ) -> Self {
        let mut current = rng.below(pool_size);
        let mut segments = vec![(0.0, current)];
        for &step in at {
            let mut next = rng.below(pool_size - 1);
            if next >= current {
                next += 1;
            }
            current = next;
            segments.push((step as f64 * dt, current));
        }
        Self { segments, total_time, dt }
    }

    pub fn validate(&self, pool_size: usize) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0) || !(self.total_time > 0.0) {
            return Err(DynamicsError::BadStep);
        }
        match self.segments.first() {
            Some(&(t0, _)) if t0 == 0.0 => {}
            _ => return Err(DynamicsError::BadSchedule("first segment must start at t = 0".into())),
        }
        for w in self.segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(DynamicsError::BadSchedule("segment starts must increase".into()));
            }
        }
        if let Some(&(_, j)) = self.segments.iter().find(|&&(_, j)| j >= pool_size) {
            return Err(DynamicsError::BadSchedule(format!("topology {j} not in pool of {pool_size}")));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.total_time / self.dt).round() as usize + 1
    }

    /// Topology index active at each grid sample.
    pub fn indices(&self) -> Vec<usize> {
        let starts: Vec<(usize, usize)> =
            self.segments.iter().map(|&(t, j)| ((t / self.dt).round() as usize, j)).collect();
        let mut seg = 0;
        (0..self.sample_count())
            .map(|k| {
                while seg + 1 < starts.len() && starts[seg + 1].0 <= k {
                    seg += 1;
                }
                starts[seg].1
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub dt: f64,
    pub system_hash: u64,
}

/// Uniformly sampled states (one row per sample) with the topology active at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Matrix,
    pub topo_indices: Vec<usize>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    /// Angles replaced by their `(cos, sin)` embedding.
    pub fn embedded(&self) -> Trajectory {
        let rows: Vec<Vec<f64>> =
            (0..self.len()).map(|k| embed_state(self.states.row(k))).collect();
        Trajectory { states: Matrix::from_rows(&rows), ..self.clone() }
    }
}

/// RK4 with fixed step `schedule.dt`; the topology switches at segment boundaries and the state
/// carries over unchanged.
pub fn simulate(
    system: &KuramotoSystem,
    schedule: &Schedule,
    init: &[f64],
    seed: u64,
) -> Result<Trajectory, DynamicsError> {
    let n = system.node_count();
    if init.len() != n {
        return Err(DynamicsError::DimensionMismatch { expected: n, got: init.len() });
    }
    schedule.validate(system.pool.len())?;
    let tables: Vec<CouplingTable> =
        system.pool.iter().map(CouplingTable::new).collect::<Result<_, _>>()?;
    let indices = schedule.indices();
    let samples = indices.len();
    let dt = schedule.dt;
    let mut states = Matrix::zeros(samples, n);
    states.row_mut(0).copy_from_slice(init);
    let mut theta = init.to_vec();
    for k in 0..samples - 1 {
        let table = &tables[indices[k]];
        let t = k as f64 * dt;
        theta = rk4_step(|_, y, out| table.rhs(y, &system.omega, out), &theta, t, dt)
            .map_err(|e| match e {
                DynamicsError::NonFinite { .. } => DynamicsError::NonFinite { step: k },
                other => other,
            })?;
        states.row_mut(k + 1).copy_from_slice(&theta);
    }
    Ok(Trajectory {
        times: (0..samples).map(|k| k as f64 * dt).collect(),
        states,
        topo_indices: indices,
        meta: TrajectoryMeta { seed, dt, system_hash: system.fingerprint() },
    })
}

/// i.i.d. `U([1, 15])` natural frequencies.
pub fn natural_frequencies(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| rng.uniform(OMEGA_RANGE.0, OMEGA_RANGE.1)).collect()
}

/// i.i.d. `U([0, 2 pi))` initial phases.
pub fn random_phases(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| rng.uniform(0.0, 2.0 * PI)).collect()
}

/// Consecutive node blocks for the given group sizes.
pub fn consecutive_groups(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut next = 0;
    sizes
        .iter()
        .map(|&s| {
            let g = (next..next + s).collect();
            next += s;
            g
        })
        .collect()
}

fn check_layout(group_sizes: &[usize], kappa: (f64, f64)) -> Result<(), DynamicsError> {
    if group_sizes.len() < 2 {
        return Err(DynamicsError::BadGroups("need at least two groups".into()));
    }
    if group_sizes.contains(&0) {
        return Err(DynamicsError::BadGroups("group sizes must be positive".into()));
    }
    let (lo, hi) = kappa;
    if !(lo > 0.0) || !(lo < hi) {
        return Err(DynamicsError::BadRange(lo, hi));
    }
    Ok(())
}

fn intra_edges(groups: &[Vec<usize>], kappa: (f64, f64), rng: &mut SplitMix64) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for g in groups {
        for (a, &i) in g.iter().enumerate() {
            for &j in &g[a + 1..] {
                let k = rng.uniform(kappa.0, kappa.1);
                edges.push((i, j, k));
                edges.push((j, i, k));
            }
        }
    }
    edges
}

/// Each group asks for one or two partner groups; a link is made only while both ends have fewer
/// than two links, so no group ends up with more than two.
fn inter_edges(groups: &[Vec<usize>], kappa: (f64, f64), rng: &mut SplitMix64) -> Vec<(usize, usize, f64)> {
    let m = groups.len();
    let mut links = vec![0usize; m];
    let mut linked = BTreeSet::new();
    for g in 0..m {
        let want = 1 + rng.below(2);
        while links[g] < want {
            let candidates: Vec<usize> = (0..m)
                .filter(|&h| h != g && links[h] < 2 && !linked.contains(&(g.min(h), g.max(h))))
                .collect();
            if candidates.is_empty() {
                break;
            }
            let h = candidates[rng.below(candidates.len())];
            linked.insert((g.min(h), g.max(h)));
            links[g] += 1;
            links[h] += 1;
        }
    }
    let mut edges = Vec::new();
    for (a, b) in linked {
        let i = groups[a][rng.below(groups[a].len())];
        let j = groups[b][rng.below(groups[b].len())];
        let k = rng.uniform(kappa.0, kappa.1);
        edges.push((i, j, k));
        edges.push((j, i, k));
    }
    edges
}

/// Grouped random topology: complete coupling inside each group, at most two partner groups per
/// group with a single symmetric edge per linked pair, `kappa ~ U([lo, hi])`.
pub fn generate_topology(
    group_sizes: &[usize],
    kappa: (f64, f64),
    seed: u64,
) -> Result<Graph, DynamicsError> {
    Ok(generate_topology_pool(group_sizes, kappa, 1, seed)?.remove(0))
}

/// `count` topologies that share their intra-group couplings and differ in inter-group links.
/// Topology `J` carries index `J`.
pub fn generate_topology_pool(
    group_sizes: &[usize],
    kappa: (f64, f64),
    count: usize,
    seed: u64,
) -> Result<Vec<Graph>, DynamicsError> {
    check_layout(group_sizes, kappa)?;
    let groups = consecutive_groups(group_sizes);
    let n: usize = group_sizes.iter().sum();
    let intra = intra_edges(&groups, kappa, &mut SplitMix64::child(seed, 0));
    (0..count)
        .map(|j| {
            let mut edges = intra.clone();
            edges.extend(inter_edges(&groups, kappa, &mut SplitMix64::child(seed, 1 + j as u64)));
            Ok(Graph::new(n, &edges, j)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> Graph {
        Graph::new(2, &[(0, 1, 0.5), (1, 0, 0.5)], 0).unwrap()
    }

    #[test]
    fn rhs_two_node_hand_value() {
        let d = kuramoto_rhs(&[0.0, PI / 2.0], &pair(), &[1.0, 2.0]).unwrap();
        assert!((d[0] - 1.5).abs() < 1e-15);
        assert!((d[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn rhs_synchronized_and_decoupled() {
        let g = Graph::new(3, &[(0, 1, 2.0), (1, 2, 3.0), (2, 0, 1.0)], 0).unwrap();
        let omega = [1.0, 2.0, 3.0];
        assert_eq!(kuramoto_rhs(&[0.7; 3], &g, &omega).unwrap(), omega.to_vec());
        let empty = Graph::new(3, &[], 0).unwrap();
        assert_eq!(kuramoto_rhs(&[0.1, 2.0, 5.0], &empty, &omega).unwrap(), omega.to_vec());
        let unweighted = Graph::unweighted(2, &[(0, 1)], 0).unwrap();
        assert_eq!(
            kuramoto_rhs(&[0.0, 0.0], &unweighted, &[1.0, 1.0]),
            Err(DynamicsError::MissingCoupling(0, 1))
        );
    }

    #[test]
    fn embedding_values() {
        assert_eq!(embed_state(&[0.0]), vec![1.0, 0.0]);
        let x = embed_state(&[PI / 2.0]);
        assert!(x[0].abs() < 1e-16 && (x[1] - 1.0).abs() < 1e-16);
    }

    #[test]
    fn rk4_exponential() {
        let y = rk4_step(|_, y, out| out[0] = y[0], &[1.0], 0.0, 0.1).unwrap();
        assert!((y[0] - 0.1_f64.exp()).abs() < 1e-7);
        assert!((y[0] - 1.105_170_83).abs() < 1e-8);
        let still = rk4_step(|_, _, out| out.fill(0.0), &[3.0, -1.0], 0.0, 0.1).unwrap();
        assert_eq!(still, vec![3.0, -1.0]);
        assert_eq!(rk4_step(|_, _, _| {}, &[1.0], 0.0, 0.0), Err(DynamicsError::BadStep));
        assert!(matches!(
            rk4_step(|_, _, out| out[0] = f64::INFINITY, &[1.0], 0.0, 0.1),
            Err(DynamicsError::NonFinite { .. })
        ));
    }

    #[test]
    fn schedule_indices_switch_on_boundary() {
        let s = Schedule { segments: vec![(0.0, 0), (0.05, 1)], total_time: 0.1, dt: 0.01 };
        s.validate(2).unwrap();
        let idx = s.indices();
        assert_eq!(idx.len(), 11);
        assert_eq!(&idx[..5], &[0; 5]);
        assert_eq!(&idx[5..], &[1; 6]);
        assert!(s.validate(1).is_err());
        let bad = Schedule { segments: vec![(0.0, 0), (0.0, 1)], total_time: 0.1, dt: 0.01 };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn random_switch_schedule_has_requested_switches() {
        let mut rng = SplitMix64::new(5);
        let s = Schedule::random_switches(3, 2, 5.0, 0.01, 60, &mut rng).unwrap();
        s.validate(3).unwrap();
        assert_eq!(s.segments.len(), 3);
        assert!(s.segments[1].0 >= 0.6 - 1e-12);
        let idx = s.indices();
        let changes = idx.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 2);
    }

    #[test]
    fn nominal_sample_count() {
        let s = Schedule::fixed(0, 10.0, 0.01);
        assert_eq!(s.sample_count(), 1001);
    }

    #[test]
    fn topology_layout() {
        let g = generate_topology(&[4; 5], (4.0, 6.0), 11).unwrap();
        assert_eq!(g.node_count(), 20);
        let groups = consecutive_groups(&[4; 5]);
        let group_of = |v: usize| v / 4;
        for grp in &groups {
            let intra = g
                .edges()
                .filter(|&(i, j, _)| i < j && grp.contains(&i) && grp.contains(&j))
                .count();
            assert_eq!(intra, 6);
        }
        let mut partners = vec![BTreeSet::new(); 5];
        let mut pair_edges = std::collections::BTreeMap::new();
        for (i, j, w) in g.edges() {
            let k = w.unwrap();
            assert!((4.0..6.0).contains(&k));
            assert_eq!(g.weight(j, i), Some(k));
            if group_of(i) != group_of(j) {
                partners[group_of(i)].insert(group_of(j));
                *pair_edges.entry((group_of(i), group_of(j))).or_insert(0) += 1;
            }
        }
        assert!(partners.iter().all(|p| p.len() <= 2));
        assert!(pair_edges.values().all(|&c| c == 1));
        assert_eq!(g, generate_topology(&[4; 5], (4.0, 6.0), 11).unwrap());
        assert!(generate_topology(&[4; 5], (6.0, 4.0), 1).is_err());
        assert!(generate_topology(&[4; 5], (0.0, 4.0), 1).is_err());
    }

    #[test]
    fn pool_shares_intra_couplings() {
        let pool = generate_topology_pool(&[4; 5], (4.0, 6.0), 3, 2).unwrap();
        for (j, g) in pool.iter().enumerate() {
            assert_eq!(g.topology_index(), j);
            for i in 0..4 {
                for k in 0..4 {
                    assert_eq!(g.weight(i, k), pool[0].weight(i, k));
                }
            }
        }
    }

    #[test]
    fn frequencies_in_range_and_deterministic() {
        let w = natural_frequencies(100_000, 9);
        assert!(w.iter().all(|&x| (1.0..=15.0).contains(&x)));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!((mean - 8.0).abs() < 0.1);
        assert_eq!(natural_frequencies(20, 3), natural_frequencies(20, 3));
    }
}
