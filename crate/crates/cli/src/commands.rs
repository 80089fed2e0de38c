use std::path::{Path, PathBuf};

use mzgraph::coarsen::{
    admittance_coefficients, admittance_graph, admittance_weights, coarse_coefficients, coarse_graph,
    kuramoto_averaging_basis, kuramoto_coarse_interaction, kuramoto_operators,
};
use mzgraph::experiment::{coarse_trajectory, generate_data, run_study, study_grid, COUPLING_CASES};
use mzgraph::graph::{average_degree, DegreeConvention};
use mzgraph::io::{self, IoError};
use mzgraph::linalg::Matrix;
use mzgraph::model::HistoryWindow;
use mzgraph::mz::{self, Analysis};
use mzgraph::tensor::Checkpoint;
use mzgraph::train::{build_dataset, evaluate, train};
use mzgraph::{
    CoarseMap, Error, Graph, KuramotoSystem, Partition, Result, RomModel, RunConfig, TopologyBank, Trajectory,
};

/// File locations inside an output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn trajectory(&self, kind: &str, id: usize) -> PathBuf {
        self.root.join("trajectories").join(format!("{kind}_{id:04}.csv"))
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        Ok(io::atomic_write(&self.file(name), text)?)
    }

    fn read(&self, name: &str) -> Result<String> {
        Ok(io::read_text(&self.file(name))?)
    }
}

fn entry(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn ids_text(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Train and test trajectory ids recorded by `simulate`.
pub struct Manifest {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Manifest {
    fn load(layout: &Layout) -> Result<Self> {
        let entries = io::parse_report(&layout.read("manifest.txt")?)?;
        let ids = |key: &str| -> Result<Vec<usize>> {
            let v = entries
                .iter()
                .find(|(k, _)| k == key)
                .ok_or_else(|| IoError::Invalid(format!("manifest is missing '{key}'")))?;
            v.1.split_whitespace()
                .map(|s| s.parse().map_err(|_| IoError::Invalid(format!("bad id '{s}' in manifest")).into()))
                .collect()
        };
        Ok(Self { train: ids("train")?, test: ids("test")? })
    }
}

fn load_trajectories(layout: &Layout, kind: &str, ids: &[usize]) -> Result<Vec<Trajectory>> {
    ids.iter().map(|&id| Ok(io::parse_trajectory(&io::read_text(&layout.trajectory(kind, id))?)?)).collect()
}

fn load_system(layout: &Layout) -> Result<KuramotoSystem> {
    let pool = io::parse_graphs(&layout.read("pool.graph")?)?;
    let mats = io::parse_matrices(&layout.read("system.txt")?)?;
    let omega = mats
        .into_iter()
        .find(|(n, _)| n == "omega")
        .ok_or_else(|| IoError::Invalid("system.txt has no omega".into()))?
        .1
        .into_vec();
    Ok(KuramotoSystem::new(omega, pool)?)
}

fn load_coarse_graphs(layout: &Layout) -> Result<Vec<Graph>> {
    Ok(io::parse_graphs(&layout.read("coarse.graph")?)?)
}

fn write_coarse(layout: &Layout, map: &CoarseMap, graphs: &[Graph], coarse: &[(usize, Trajectory)]) -> Result<()> {
    layout.write("coarse_map.txt", &io::format_coarse_map(map))?;
    layout.write("coarse.graph", &io::format_graphs(graphs))?;
    for (id, tr) in coarse {
        io::atomic_write(&layout.trajectory("coarse", *id), &io::format_trajectory(tr))?;
    }
    Ok(())
}

fn coarse_graphs_for(partition: &Partition, pool: &[Graph]) -> Result<Vec<Graph>> {
    pool.iter()
        .map(|g| {
            let b = kuramoto_coarse_interaction(partition, g)?;
            Ok(coarse_graph(partition, g, &b)?)
        })
        .collect()
}

pub fn simulate(cfg: &RunConfig, seed: u64, layout: &Layout) -> Result<()> {
    let sim = cfg.simulation()?;
    let data = generate_data(&sim, seed)?;
    layout.write("pool.graph", &io::format_graphs(&data.system.pool))?;
    layout.write("system.txt", &io::format_matrix("omega", &Matrix::from_vec(1, data.system.omega.len(), data.system.omega.clone())))?;
    let fine: Vec<&Trajectory> = data.fine_train.iter().chain(&data.fine_test).collect();
    for (id, tr) in fine.iter().enumerate() {
        io::atomic_write(&layout.trajectory("fine", id), &io::format_trajectory(tr))?;
    }
    let coarse: Vec<(usize, Trajectory)> = data.train.iter().chain(&data.test).cloned().enumerate().collect();
    write_coarse(layout, &data.map, &data.coarse_graphs, &coarse)?;
    let train: Vec<usize> = (0..sim.n_train).collect();
    let test: Vec<usize> = (sim.n_train..sim.n_train + sim.n_test).collect();
    let samples = fine.first().map_or(0, |t| t.len());
    let manifest = vec![
        entry("seed", seed),
        entry("nodes", sim.node_count()),
        entry("groups", data.map.partition.group_count()),
        entry("topologies", data.system.pool.len()),
        entry("dt", sim.dt),
        entry("samples", samples),
        entry("train", ids_text(&train)),
        entry("test", ids_text(&test)),
    ];
    layout.write("manifest.txt", &io::format_report(&manifest))?;
    let d = average_degree(&data.coarse_graphs[0], DegreeConvention::SelfExcluded);
    println!(
        "simulated {} trajectories ({} train / {} test) of {samples} samples: N = {}, M = {}, {} topologies, coarse degree {d:.3}",
        fine.len(),
        train.len(),
        test.len(),
        sim.node_count(),
        data.map.partition.group_count(),
        data.system.pool.len()
    );
    Ok(())
}

pub fn coarsen(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let system = load_system(layout)?;
    let manifest = Manifest::load(layout)?;
    let n = system.node_count();
    let assignment = match &cfg.coarsening.assignment {
        Some(a) => a.clone(),
        None => cfg.group_sizes()?.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect(),
    };
    let partition = Partition::new(&vec![2; n], &assignment)?;
    let map = kuramoto_averaging_basis(partition)?;
    let graphs = coarse_graphs_for(&map.partition, &system.pool)?;
    let ids: Vec<usize> = manifest.train.iter().chain(&manifest.test).copied().collect();
    let fine = load_trajectories(layout, "fine", &ids)?;
    let coarse: Vec<(usize, Trajectory)> = ids.iter().copied().zip(fine.iter().map(|f| coarse_trajectory(f, &map))).collect();
    write_coarse(layout, &map, &graphs, &coarse)?;
    println!("coarsened {} trajectories onto {} groups", coarse.len(), map.partition.group_count());
    Ok(())
}

fn analysis_entries(a: &Analysis) -> Vec<(String, String)> {
    vec![
        entry("epsilon", format!("{:e}", a.fit.epsilon)),
        entry("r_squared", format!("{:e}", a.fit.r_squared)),
        entry("samples", a.fit.samples.len()),
        entry("d", format!("{:e}", a.plan.d)),
        entry("d_epsilon", format!("{:e}", a.plan.d_epsilon)),
        entry("k", a.plan.k),
        entry("required_hops", a.plan.required_hops),
        entry("memory_estimate", format!("{:e}", a.plan.memory_estimate)),
        entry("basis_norm_sq", format!("{:e}", a.plan.basis_norm_sq)),
        entry("lipschitz", format!("{:e}", a.plan.lipschitz)),
    ]
}

pub fn analyze(cfg: &RunConfig, layout: &Layout, admittance: Option<&Path>, topology: usize) -> Result<()> {
    let an = &cfg.analysis;
    let (analysis, mut extra) = match admittance {
        Some(path) => {
            let y = io::parse_admittance(&io::read_text(path)?)?;
            let (weights, eta) = admittance_weights(&y, an.eta_choice()?)?;
            let graph = admittance_graph(&y, &weights, 0)?;
            let (alpha, beta) = admittance_coefficients(&y)?;
            let a11: Vec<Matrix> = alpha.iter().map(|&a| Matrix::scalar(a)).collect();
            let b11: Vec<Vec<Matrix>> =
                (0..y.n).map(|i| (0..y.n).map(|j| Matrix::scalar(beta[(i, j)])).collect()).collect();
            let a = mz::analyze(&a11, &b11, &graph, an.k, an.basis_norm_sq.unwrap_or(1.0), an.lipschitz)?;
            (a, vec![entry("source", "admittance"), entry("eta", format!("{eta:e}"))])
        }
        None => {
            let system = load_system(layout)?;
            let map = io::parse_coarse_map(&layout.read("coarse_map.txt")?)?;
            let fine = system.pool.get(topology).ok_or_else(|| IoError::Invalid(format!("no topology {topology}")))?;
            let ops = kuramoto_operators(fine, &system.omega)?;
            let coeffs = coarse_coefficients(&map, &ops)?;
            let coarse = coarse_graph(&map.partition, fine, &kuramoto_coarse_interaction(&map.partition, fine)?)?;
            let r2 = an.basis_norm_sq.unwrap_or(map.r * map.r);
            let a = mz::analyze(&coeffs.a11, &coeffs.b11, &coarse, an.k, r2, an.lipschitz)?;
            (a, vec![entry("source", "kuramoto"), entry("topology", topology)])
        }
    };
    extra.extend(analysis_entries(&analysis));
    extra.push(entry("suggest.hops", analysis.plan.required_hops));
    let (s, nc) = mzgraph::experiment::hop_architecture(analysis.plan.required_hops);
    extra.push(entry("suggest.order", s));
    extra.push(entry("suggest.layers", nc));
    let text = io::format_report(&extra);
    layout.write("analysis.txt", &text)?;
    print!("{text}");
    Ok(())
}

fn bank_for(layout: &Layout, order: usize) -> Result<TopologyBank> {
    Ok(TopologyBank::new(&load_coarse_graphs(layout)?, order)?)
}

pub fn train_cmd(cfg: &RunConfig, seed: u64, layout: &Layout) -> Result<()> {
    let manifest = Manifest::load(layout)?;
    let graphs = load_coarse_graphs(layout)?;
    let trajectories = load_trajectories(layout, "coarse", &manifest.train)?;
    let dt = trajectories.first().map_or(cfg.simulation.dt, |t| t.meta.dt);
    let mcfg = cfg.model_config(graphs[0].node_count(), dt, graphs.len())?;
    let bank = TopologyBank::new(&graphs, mcfg.order)?;
    let dataset = build_dataset(trajectories, &manifest.train, mcfg.delay)?;
    let mut model = RomModel::new(mcfg, mzgraph::rng::child_seed(seed, mzgraph::experiment::streams::MODEL))?;
    let mut tc = cfg.training()?;
    if cfg.training.seed.is_none() {
        tc.seed = mzgraph::rng::child_seed(seed, mzgraph::experiment::streams::TRAIN);
    }
    let history = train(&mut model, &dataset, &bank, &tc)?;
    layout.write("model.ckpt", &model.to_checkpoint().to_text())?;
    layout.write("losses.csv", &io::format_losses(&history.losses))?;
    println!(
        "trained {} for {} epochs on {} windows: final loss {:e}",
        model.config.variant.name(),
        history.losses.len(),
        dataset.len(),
        history.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_model(layout: &Layout, checkpoint: Option<&Path>) -> Result<RomModel> {
    let path = checkpoint.map_or_else(|| layout.file("model.ckpt"), Path::to_path_buf);
    let ck = Checkpoint::parse(&io::read_text(&path)?)?;
    Ok(RomModel::from_checkpoint(&ck)?)
}

pub fn eval(layout: &Layout, checkpoint: Option<&Path>) -> Result<()> {
    let model = load_model(layout, checkpoint)?;
    let manifest = Manifest::load(layout)?;
    let test = load_trajectories(layout, "coarse", &manifest.test)?;
    let bank = bank_for(layout, model.config.order)?;
    let report = evaluate(&model, &test, &bank)?;
    let text = io::format_report(&io::eval_report_entries(&report));
    layout.write("eval.txt", &text)?;
    println!("NRMSE mean {:.6} std {:.6} over {} trajectories", report.mean, report.std, report.per_trajectory.len());
    Ok(())
}

/// Roll out from the samples of `window_path` (exactly `T` rows) over the grid of
/// `schedule_path`, whose sample 0 is the last window sample.
pub fn predict(layout: &Layout, checkpoint: Option<&Path>, window_path: &Path, schedule_path: &Path, out: &Path) -> Result<()> {
    let model = load_model(layout, checkpoint)?;
    let window = io::parse_trajectory(&io::read_text(window_path)?)?;
    let schedule = io::parse_schedule(&io::read_text(schedule_path)?)?;
    let t = model.config.delay;
    if window.len() != t {
        return Err(mzgraph::ModelError::WindowLength { expected: t, got: window.len() }.into());
    }
    if window.dim() != model.config.state_width() {
        return Err(mzgraph::ModelError::StateWidth { expected: model.config.state_width(), got: window.dim() }.into());
    }
    if (schedule.dt - model.config.dt).abs() > 1e-12 * model.config.dt.abs() {
        return Err(IoError::Invalid(format!("schedule dt {} differs from model dt {}", schedule.dt, model.config.dt)).into());
    }
    let bank = bank_for(layout, model.config.order)?;
    schedule.validate(bank.len())?;
    let indices = schedule.indices();
    let steps = &indices[1..];
    let seed = HistoryWindow { states: window.states.clone(), indices: window.topo_indices.clone(), next_index: steps.first().copied().unwrap_or(0) };
    let pred = model.rollout(&seed, steps, &bank)?;
    let t0 = window.times.last().copied().unwrap_or(0.0);
    let traj = Trajectory {
        times: (1..=steps.len()).map(|q| t0 + q as f64 * schedule.dt).collect(),
        states: pred,
        topo_indices: steps.to_vec(),
        meta: mzgraph::dynamics::TrajectoryMeta { seed: window.meta.seed, dt: schedule.dt, system_hash: window.meta.system_hash },
    };
    io::atomic_write(out, &io::format_trajectory(&traj))?;
    println!("predicted {} steps into {}", steps.len(), out.display());
    Ok(())
}

pub struct StudyArgs {
    pub hops: Vec<usize>,
    pub delays: Vec<usize>,
    pub seeds: Vec<u64>,
    pub d_eps: Option<Vec<f64>>,
}

pub fn study(cfg: &RunConfig, args: &StudyArgs, layout: &Layout) -> Result<()> {
    let sim = cfg.simulation()?;
    let cases: Vec<(f64, (f64, f64))> = match &args.d_eps {
        None => COUPLING_CASES.to_vec(),
        Some(wanted) => wanted
            .iter()
            .map(|&d| {
                COUPLING_CASES.iter().copied().find(|c| (c.0 - d).abs() < 1e-9).ok_or_else(|| {
                    Error::from(mzgraph::ConfigError::Invalid(format!(
                        "no coupling case with d_eps = {d}; known: 0.75, 0.5, 0.19"
                    )))
                })
            })
            .collect::<Result<_>>()?,
    };
    let cells = study_grid(&args.hops, &args.delays, &cases);
    let rows = run_study(&sim, &cells, &args.seeds, cfg.model.width, &cfg.training()?);
    layout.write("study.csv", &io::format_study(&rows))?;
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("run hops={} T={} d_eps={} seed={} failed: {}", r.hops, r.delay, r.d_eps, r.seed, r.error.as_deref().unwrap_or(""));
    }
    println!("wrote {} study rows to {}", rows.len(), layout.file("study.csv").display());
    Ok(())
}
