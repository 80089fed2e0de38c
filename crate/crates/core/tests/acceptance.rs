//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the criteria execute in order and the trained desk models are shared
//! between criteria 7, 8 and 9. Set `MZGRAPH_CRITERIA=1,2,5` to run a subset.

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mzgraph::coarsen::{
    kuramoto_averaging_basis, kuramoto_coarse_interaction, CoarseMap, Partition,
};
use mzgraph::dynamics::{embed_state, generate_topology, natural_frequencies, random_phases};
use mzgraph::experiment::{
    desk_training, generate_data, run_model, ExperimentData, ModelSpec, SimulationConfig, Switching, DESK_WIDTH,
};
use mzgraph::graph::{chebyshev_apply, k_hop, weighted_laplacian, Graph};
use mzgraph::linalg::Matrix;
use mzgraph::model::{ModelConfig, RomModel, TopologyBank, Variant};
use mzgraph::mz::{fit_power_law, mz_integrand_norm, plan_architecture};
use mzgraph::rng::SplitMix64;
use mzgraph::tensor::Tape;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
}

// ------------------------------------------------------------------ 1

fn random_map(rng: &mut SplitMix64) -> CoarseMap {
    loop {
        let n = 2 + rng.below(11);
        let dims: Vec<usize> = (0..n).map(|_| 1 + rng.below(2)).collect();
        if dims.iter().sum::<usize>() > 24 {
            continue;
        }
        let groups = 1 + rng.below(n.min(5));
        let mut assignment: Vec<usize> = (0..n).map(|k| if k < groups { k } else { rng.below(groups) }).collect();
        rng.shuffle(&mut assignment);
        let partition = Partition::new(&dims, &assignment).unwrap();
        let blocks: Vec<Matrix> = (0..groups)
            .map(|j| {
                let rows = partition.group_state_dim(j);
                gaussian_matrix(rows, 1 + rng.below(rows), rng)
            })
            .collect();
        return CoarseMap::from_group_bases(partition, blocks).unwrap();
    }
}

fn criterion_1() -> Outcome {
    let mut rng = SplitMix64::new(0xC1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = random_map(&mut rng);
        let nx = m.phi.rows();
        let (nr, nu) = (m.phi.cols(), m.psi.cols());
        let p = m.phi.matmul(&m.phi_plus);
        let x: Vec<f64> = (0..nx).map(|_| rng.normal()).collect();
        let recon: Vec<f64> = m
            .phi
            .matvec(&m.phi_plus.matvec(&x))
            .iter()
            .zip(m.psi.matvec(&m.psi_plus.matvec(&x)))
            .map(|(a, b)| a + b)
            .collect();
        let errors = [
            m.phi_plus.matmul(&m.phi).max_abs_diff(&Matrix::identity(nr)),
            m.phi_plus.matmul(&m.psi).max_abs_diff(&Matrix::zeros(nr, nu)),
            m.phi.transpose().matmul(&m.psi).max_abs_diff(&Matrix::zeros(nr, nu)),
            p.matmul(&p).max_abs_diff(&p),
            recon.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        ];
        worst = errors.iter().copied().fold(worst, f64::max);
    }
    check(worst < 1e-10, format!("50 random maps, worst identity error {worst:.2e}"))
}

// ------------------------------------------------------------------ 2

fn random_symmetric_graph(n: usize, p: f64, rng: &mut SplitMix64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_f64() < p {
                let w = rng.uniform(0.1, 2.0);
                edges.push((i, j, w));
                edges.push((j, i, w));
            }
        }
    }
    Graph::new(n, &edges, 0).unwrap()
}

/// `T_s(L~)` through the eigendecomposition, `T_s(cos t) = cos(s t)`.
fn chebyshev_by_eigen(lt: &Matrix, s: usize) -> Matrix {
    let n = lt.rows();
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| lt[(i, j)]);
    let eig = a.symmetric_eigen();
    let t: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            let s = s as f64;
            if l.abs() <= 1.0 {
                (s * l.acos()).cos()
            } else {
                l.signum().powi(s as i32) * (s * l.abs().acosh()).cosh()
            }
        })
        .collect();
    let v = &eig.eigenvectors;
    let d = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(t));
    let out = v * d * v.transpose();
    Matrix::from_vec(n, n, (0..n * n).map(|k| out[(k / n, k % n)]).collect())
}

fn criterion_2() -> Outcome {
    let mut rng = SplitMix64::new(0xC2);
    let mut worst: f64 = 0.0;
    let mut leaks = 0;
    for trial in 0..40 {
        let m = 2 + trial % 11;
        let g = random_symmetric_graph(m, 0.35, &mut rng);
        let f = weighted_laplacian(&g).unwrap();
        let h = gaussian_matrix(m, 3, &mut rng);
        let rec = chebyshev_apply(&f, &h, 6).unwrap();
        for (s, ts_h) in rec.iter().enumerate() {
            let oracle = chebyshev_by_eigen(&f.transformed, s).matmul(&h);
            let rel = ts_h.sub(&oracle).frobenius() / oracle.frobenius().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
        for i in 0..m {
            let mut e = Matrix::zeros(m, 1);
            e[(i, 0)] = 1.0;
            let cols = chebyshev_apply(&f, &e, 6).unwrap();
            for (s, col) in cols.iter().enumerate() {
                let reach = k_hop(&g, i, s).unwrap().cumulative;
                leaks += (0..m).filter(|r| col[(*r, 0)] != 0.0 && !reach.contains(r)).count();
            }
        }
    }
    check(
        worst < 1e-10 && leaks == 0,
        format!("40 graphs M <= 12, s <= 6: worst relative error {worst:.2e}, {leaks} entries outside hop sets"),
    )
}

// ------------------------------------------------------------------ 3

fn path3() -> Graph {
    Graph::new(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 0.5), (2, 1, 0.5)], 0).unwrap()
}

fn fixture_loss(model: &RomModel, input: &Matrix, target: &Matrix, bank: &TopologyBank) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let x = tape.leaf(input.clone());
    let y = model.forward(&mut tape, &vars, x, &[0, 0], bank).unwrap();
    let t = tape.leaf(target.clone());
    let l = tape.mse(y, t).unwrap();
    let value = tape.value(l)[(0, 0)];
    let grads = tape.backward(l).unwrap().params(&model.params.shapes());
    (value, grads)
}

fn criterion_3() -> Outcome {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in [11u64, 22, 33] {
        for variant in [Variant::ChebConv, Variant::MlpBaseline] {
            let cfg = ModelConfig::new(4, 2, 2, 3, 0.1).with_width(5).with_variant(variant);
            let bank = TopologyBank::new(&[path3()], cfg.order).unwrap();
            let mut model = RomModel::new(cfg.clone(), seed).unwrap();
            let mut rng = SplitMix64::new(seed ^ 0xFEED);
            let input = gaussian_matrix(2 * 3, cfg.input_width(), &mut rng);
            let target = gaussian_matrix(2 * 3, 1, &mut rng);
            let (_, grads) = fixture_loss(&model, &input, &target, &bank);
            let (mut num, mut den) = (0.0, 0.0);
            for slot in 0..model.params.len() {
                let (r, c) = model.params.get(slot).shape();
                for k in 0..r * c {
                    let orig = model.params.get(slot).as_slice()[k];
                    model.params.get_mut(slot).as_mut_slice()[k] = orig + h;
                    let up = fixture_loss(&model, &input, &target, &bank).0;
                    model.params.get_mut(slot).as_mut_slice()[k] = orig - h;
                    let down = fixture_loss(&model, &input, &target, &bank).0;
                    model.params.get_mut(slot).as_mut_slice()[k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    num += (grads[slot].as_slice()[k] - fd).powi(2);
                    den += fd * fd;
                    checked += 1;
                }
            }
            worst = worst.max((num / den).sqrt());
        }
    }
    check(worst < 1e-5, format!("3 seeds x 2 variants, {checked} parameters: worst relative error {worst:.2e}"))
}

// ------------------------------------------------------------------ 4

fn criterion_4() -> Outcome {
    let mut rng = SplitMix64::new(0xC4);
    let mut worst_beta: f64 = 0.0;
    let mut worst_alpha: f64 = 0.0;
    for trial in 0..20 {
        let groups = 2 + rng.below(4);
        let sizes: Vec<usize> = (0..groups).map(|_| 2 + rng.below(4)).collect();
        let g = generate_topology(&sizes, (1.0, 6.0), 1000 + trial).unwrap();
        let n: usize = sizes.iter().sum();
        let assignment: Vec<usize> =
            sizes.iter().enumerate().flat_map(|(j, &s)| std::iter::repeat_n(j, s)).collect();
        let partition = Partition::new(&vec![2; n], &assignment).unwrap();
        let map = kuramoto_averaging_basis(partition.clone()).unwrap();
        // Dense embedded operators built edge by edge: node k feels node l through (kappa / 2) I.
        let mut b = Matrix::zeros(2 * n, 2 * n);
        for (l, k, w) in g.edges() {
            if l != k {
                for c in 0..2 {
                    b[(2 * k + c, 2 * l + c)] = 0.5 * w.unwrap();
                }
            }
        }
        let omega = natural_frequencies(n, trial);
        let mut a = Matrix::zeros(2 * n, 2 * n);
        for (k, w) in omega.iter().enumerate() {
            a[(2 * k, 2 * k + 1)] = -w;
            a[(2 * k + 1, 2 * k)] = *w;
        }
        let brute = map.phi_plus.matmul(&b).matmul(&map.phi);
        let closed = kuramoto_coarse_interaction(&partition, &g).unwrap();
        worst_beta = worst_beta.max(brute.max_abs_diff(&closed));
        worst_alpha = worst_alpha.max(map.phi_plus.matmul(&a).matmul(&map.phi).max_abs());
    }
    check(
        worst_beta < 1e-12 && worst_alpha < 1e-12,
        format!("20 topologies: closed form vs brute force {worst_beta:.2e}, max |alpha11| {worst_alpha:.2e}"),
    )
}

// ------------------------------------------------------------------ 5

fn criterion_5() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for eps in [0.1, 0.313, 0.75] {
        let samples: Vec<(usize, f64)> =
            [1usize, 1, 2, 2, 3, 4, 5].iter().map(|&k| (k, f64::powi(eps, k as i32))).collect();
        let fit = fit_power_law(&samples).unwrap();
        let rel = (fit.epsilon - eps).abs() / eps;
        ok &= rel <= 1e-9 && fit.r_squared == 1.0;
        details.push(format!("eps {eps}: rel err {rel:.1e}, R^2 {}", fit.r_squared));
    }
    check(ok, details.join("; "))
}

// ------------------------------------------------------------------ 6

fn criterion_6() -> Outcome {
    let at = plan_architecture(0.5, 1.0, 1, 1.0, 1.0).unwrap();
    let above = plan_architecture(f64::from_bits(0.5f64.to_bits() + 1), 1.0, 1, 1.0, 1.0).unwrap();
    let nominal = plan_architecture(0.375, 2.0, 1, 8.0, 1.0).unwrap();
    let ok = at.required_hops == 1
        && above.required_hops == 2
        && nominal.d_epsilon == 0.75
        && nominal.required_hops == 2
        && nominal.memory_estimate == 8.0 / 9.0;
    check(
        ok,
        format!(
            "hops at d_eps = 1/2: {}, just above: {}; d_eps = 0.75, R^2 = 8, L = 1: memory {} (8/9 = {})",
            at.required_hops,
            above.required_hops,
            nominal.memory_estimate,
            8.0 / 9.0
        ),
    )
}

// ------------------------------------------------------------------ 7-10

const SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Hash, PartialEq, Eq, Clone, Copy)]
struct RunKey {
    switching: bool,
    variant: Variant,
    hops: usize,
    delay: usize,
    seed: u64,
}

struct Desk {
    data: HashMap<(bool, u64), ExperimentData>,
    runs: HashMap<RunKey, Result<Vec<f64>, String>>,
}

impl Desk {
    fn sim(switching: bool) -> SimulationConfig {
        let mut sim = SimulationConfig::desk();
        if switching {
            sim.topologies = 3;
            sim.switching = Switching::Count(2);
            sim.min_switch_step = 50;
        }
        sim
    }

    /// Per-trajectory test NRMSE of one run, training on first use.
    fn run(&mut self, key: RunKey) -> Result<Vec<f64>, String> {
        if let Some(r) = self.runs.get(&key) {
            return r.clone();
        }
        let data = self
            .data
            .entry((key.switching, key.seed))
            .or_insert_with(|| generate_data(&Self::sim(key.switching), key.seed).unwrap());
        let spec = ModelSpec::new(key.hops, key.delay, DESK_WIDTH, key.variant);
        let t0 = Instant::now();
        let result = run_model(data, &spec, &desk_training(), key.seed)
            .map(|r| r.report.per_trajectory)
            .map_err(|e| e.to_string());
        let _ = writeln!(
            std::io::stderr(),
            "    [{} {} hops={} T={} seed={}] {:?} in {:.0} s",
            if key.switching { "switching" } else { "fixed" },
            key.variant.name(),
            key.hops,
            key.delay,
            key.seed,
            result.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64),
            t0.elapsed().as_secs_f64()
        );
        self.runs.insert(key, result.clone());
        result
    }

    /// Mean test NRMSE over trajectories and the three seeds.
    fn mean(&mut self, switching: bool, variant: Variant, hops: usize, delay: usize) -> Result<f64, String> {
        let mut all = Vec::new();
        for seed in SEEDS {
            all.extend(self.run(RunKey { switching, variant, hops, delay, seed })?);
        }
        Ok(all.iter().sum::<f64>() / all.len() as f64)
    }
}

fn criterion_7(desk: &mut Desk) -> Outcome {
    let gnn = desk.mean(false, Variant::ChebConv, 2, 50)?;
    let mlp = desk.mean(false, Variant::MlpBaseline, 2, 50)?;
    check(
        gnn < 0.15 && gnn < mlp,
        format!("GNN mean NRMSE {gnn:.4} (< 0.15: {}), MLP baseline {mlp:.4} (GNN < MLP: {})", gnn < 0.15, gnn < mlp),
    )
}

fn criterion_8(desk: &mut Desk) -> Outcome {
    let t10 = desk.mean(false, Variant::ChebConv, 2, 10)?;
    let t50 = desk.mean(false, Variant::ChebConv, 2, 50)?;
    let t100 = desk.mean(false, Variant::ChebConv, 2, 100)?;
    check(t100 < t10, format!("mean NRMSE T=10 {t10:.4}, T=50 {t50:.4}, T=100 {t100:.4}"))
}

fn criterion_9(desk: &mut Desk) -> Outcome {
    let h1 = desk.mean(false, Variant::ChebConv, 1, 50)?;
    let h2 = desk.mean(false, Variant::ChebConv, 2, 50)?;
    let h4 = desk.mean(false, Variant::ChebConv, 4, 50)?;
    let close = (h4 - h2).abs() <= 0.25 * h2;
    check(
        h2 < h1 && close,
        format!("mean NRMSE 1 hop {h1:.4}, 2 hops {h2:.4}, 4 hops {h4:.4} (2 < 1: {}, 4 within 25% of 2: {close})", h2 < h1),
    )
}

fn criterion_10(desk: &mut Desk) -> Outcome {
    let gnn = desk.mean(true, Variant::ChebConv, 2, 50)?;
    let mlp = desk.mean(true, Variant::MlpBaseline, 2, 50);
    // A non-finite MLP rollout also counts as exceeding the bound.
    let mlp_text = match &mlp {
        Ok(v) => format!("{v:.4}"),
        Err(e) => format!("failed ({e})"),
    };
    let mlp_exceeds = mlp.as_ref().map_or(true, |&v| !(v <= 0.35));
    check(
        gnn.is_finite() && gnn < 0.35 && mlp_exceeds,
        format!("GNN mean NRMSE {gnn:.4} (< 0.35: {}), MLP baseline {mlp_text} (> 0.35: {mlp_exceeds})", gnn < 0.35),
    )
}

// ------------------------------------------------------------------ 11

fn scaled(g: &Graph, c: f64) -> Graph {
    let edges: Vec<(usize, usize, f64)> = g.edges().map(|(i, j, w)| (i, j, c * w.unwrap())).collect();
    Graph::new(g.node_count(), &edges, g.topology_index()).unwrap()
}

fn criterion_11() -> Outcome {
    let g = generate_topology(&[4, 4, 4], (4.0, 6.0), 7).unwrap();
    let omega = natural_frequencies(12, 8);
    let map = kuramoto_averaging_basis(Partition::consecutive(3, 4, 2)).unwrap();
    let samples: Vec<Vec<f64>> = (0..8).map(|k| embed_state(&random_phases(12, 100 + k))).collect();
    let base = mz_integrand_norm(&g, &omega, &map, &samples).map_err(|e| e.to_string())?;
    let doubled = mz_integrand_norm(&scaled(&g, 2.0), &omega, &map, &samples).map_err(|e| e.to_string())?;
    let ratio = doubled / base;
    check((3.5..=4.5).contains(&ratio), format!("N = 12: integrand ratio {ratio:.6} when kappa doubles"))
}

// ------------------------------------------------------------------

fn main() {
    let wanted: Option<Vec<usize>> = std::env::var("MZGRAPH_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut desk = Desk { data: HashMap::new(), runs: HashMap::new() };
    let mut failures = 0;
    let mut ran = 0;
    for n in 1..=11 {
        if wanted.as_ref().is_some_and(|w| !w.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(&mut desk),
            8 => criterion_8(&mut desk),
            9 => criterion_9(&mut desk),
            10 => criterion_10(&mut desk),
            _ => criterion_11(),
        }))
        .unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        ran += 1;
        println!("criterion {n:>2}: {tag} [{secs:.1} s] {detail}");
        let _ = std::io::stdout().flush();
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
